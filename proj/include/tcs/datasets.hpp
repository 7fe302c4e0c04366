#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "tcs/errors.hpp"
#include "tcs/matrix.hpp"
#include "tcs/rng.hpp"
#include "tcs/tensor_io.hpp"

namespace tcs {

struct ImageShape {
  std::size_t channels = 1;
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t size() const { return channels * height * width; }
  bool operator==(const ImageShape&) const = default;
};

struct Dataset {
  Matrix inputs;
  std::vector<std::size_t> labels;
  std::size_t class_count = 0;
  std::string name;
  std::optional<ImageShape> image;

  std::size_t size() const { return labels.size(); }
  std::size_t dim() const { return inputs.cols(); }

  void validate() const {
    if (labels.size() != inputs.rows()) {
      throw ShapeError("dataset '" + name + "': " + std::to_string(labels.size()) + " labels for " +
                       std::to_string(inputs.rows()) + " rows");
    }
    for (std::size_t l : labels)
      if (l >= class_count) throw PreconditionError("dataset '" + name + "': label " + std::to_string(l) + " out of range");
  }

  Dataset subset(std::span<const std::size_t> rows) const {
    Dataset d;
    d.inputs = gather_rows(inputs, rows);
    d.labels.reserve(rows.size());
    for (std::size_t r : rows) d.labels.push_back(labels[r]);
    d.class_count = class_count;
    d.name = name;
    d.image = image;
    return d;
  }

  std::vector<std::size_t> class_counts() const {
    std::vector<std::size_t> counts(class_count, 0);
    for (std::size_t l : labels) ++counts[l];
    return counts;
  }
};

/// Class means for an isotropic Gaussian mixture; samples are mean + N(0, I).
struct GaussianMixture {
  Matrix means;  // classes x dim

  std::size_t classes() const { return means.rows(); }
  std::size_t dim() const { return means.cols(); }

  /// Draws `per_class` rows for each class, interleaved by class (0, 1, ..., C-1, 0, 1, ...).
  Dataset sample(std::size_t per_class, std::uint64_t seed, std::string name = "mixture") const {
    if (per_class < 1) throw PreconditionError("gen_gaussian_mixture: per_class must be >= 1");
    Rng rng(seed);
    Dataset d;
    d.class_count = classes();
    d.name = std::move(name);
    d.inputs = Matrix(per_class * classes(), dim());
    d.labels.resize(per_class * classes());
    std::size_t r = 0;
    for (std::size_t i = 0; i < per_class; ++i) {
      for (std::size_t c = 0; c < classes(); ++c, ++r) {
        for (std::size_t j = 0; j < dim(); ++j) d.inputs(r, j) = means(c, j) + rng.normal();
        d.labels[r] = c;
      }
    }
    return d;
  }
};

inline GaussianMixture make_mixture(std::size_t classes, std::size_t dim, double separation, std::uint64_t seed) {
  if (classes < 2) throw PreconditionError("gen_gaussian_mixture: classes must be >= 2");
  if (dim < 2) throw PreconditionError("gen_gaussian_mixture: dim must be >= 2");
  if (!(separation > 0.0)) throw PreconditionError("gen_gaussian_mixture: separation must be > 0");
  Rng rng(seed);
  return GaussianMixture{rng.normal_matrix(classes, dim, separation)};
}

/// Mixture whose class means lie in a shared `latent_dim`-dimensional subspace.
///
/// The subspace is drawn from `basis_seed` and the means from `seed`, so several
/// tasks can share one subspace while having unrelated classes.
inline GaussianMixture make_subspace_mixture(std::size_t classes, std::size_t dim, std::size_t latent_dim,
                                             double separation, std::uint64_t seed, std::uint64_t basis_seed) {
  if (latent_dim < 1 || latent_dim > dim) throw PreconditionError("subspace mixture: latent_dim must be in [1, dim]");
  const GaussianMixture latent = make_mixture(classes, std::max<std::size_t>(latent_dim, 2), separation, seed);
  Rng rng(basis_seed);
  Matrix basis = rng.normal_matrix(latent_dim, dim);
  for (std::size_t i = 0; i < latent_dim; ++i) {
    auto row = basis.row(i);
    for (std::size_t j = 0; j < i; ++j) {
      const double p = dot(row, basis.row(j));
      for (std::size_t c = 0; c < dim; ++c) row[c] -= p * basis(j, c);
    }
    const double n = norm2(row);
    for (double& v : row) v /= n;
  }
  GaussianMixture out{Matrix(classes, dim)};
  for (std::size_t c = 0; c < classes; ++c)
    for (std::size_t i = 0; i < latent_dim; ++i)
      for (std::size_t j = 0; j < dim; ++j) out.means(c, j) += latent.means(c, i) * basis(i, j);
  return out;
}

inline Dataset gen_gaussian_mixture(std::size_t classes, std::size_t per_class, std::size_t dim, double separation,
                                    std::uint64_t seed) {
  return make_mixture(classes, dim, separation, seed).sample(per_class, Rng::derive(seed, 1));
}

namespace detail {

inline std::uint32_t read_be32(const std::string& bytes, std::size_t pos, const std::string& what) {
  if (pos + 4 > bytes.size()) throw TruncatedError(what + ": header truncated");
  std::uint32_t v = 0;
  for (std::size_t i = 0; i < 4; ++i) v = (v << 8) | static_cast<unsigned char>(bytes[pos + i]);
  return v;
}

}  // namespace detail

constexpr std::uint32_t kIdxImageMagic = 0x00000803;
constexpr std::uint32_t kIdxLabelMagic = 0x00000801;

/// Reads an IDX image/label pair (MNIST layout). Pixels are scaled to [0, 1].
inline Dataset load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path) {
  const std::string images = read_file_bytes(images_path);
  const std::string labels = read_file_bytes(labels_path);
  const std::string iname = images_path.string();
  const std::string lname = labels_path.string();

  if (detail::read_be32(images, 0, iname) != kIdxImageMagic) throw MagicMismatchError(iname + ": not an IDX image file");
  if (detail::read_be32(labels, 0, lname) != kIdxLabelMagic) throw MagicMismatchError(lname + ": not an IDX label file");
  const std::size_t n_images = detail::read_be32(images, 4, iname);
  const std::size_t rows = detail::read_be32(images, 8, iname);
  const std::size_t cols = detail::read_be32(images, 12, iname);
  const std::size_t n_labels = detail::read_be32(labels, 4, lname);
  if (n_images != n_labels) {
    throw CountMismatchError("IDX: " + std::to_string(n_images) + " images but " + std::to_string(n_labels) + " labels");
  }
  const std::size_t pixels = rows * cols;
  if (images.size() < 16 + n_images * pixels) throw TruncatedError(iname + ": pixel payload truncated");
  if (labels.size() < 8 + n_labels) throw TruncatedError(lname + ": label payload truncated");

  Dataset d;
  d.name = images_path.stem().string();
  d.inputs = Matrix(n_images, pixels);
  d.labels.resize(n_images);
  std::size_t max_label = 0;
  for (std::size_t i = 0; i < n_images; ++i) {
    for (std::size_t p = 0; p < pixels; ++p)
      d.inputs(i, p) = static_cast<unsigned char>(images[16 + i * pixels + p]) / 255.0;
    d.labels[i] = static_cast<unsigned char>(labels[8 + i]);
    max_label = std::max(max_label, d.labels[i]);
  }
  d.class_count = n_images == 0 ? 0 : std::max<std::size_t>(10, max_label + 1);
  d.image = ImageShape{1, rows, cols};
  return d;
}

/// Row indices of a stratified k-per-class sample, in input order.
inline std::vector<std::size_t> sample_k_shot_indices(const Dataset& d, std::size_t k, std::uint64_t seed) {
  std::vector<std::vector<std::size_t>> by_class(d.class_count);
  for (std::size_t i = 0; i < d.labels.size(); ++i) by_class[d.labels[i]].push_back(i);
  Rng rng(seed);
  std::vector<std::size_t> chosen;
  chosen.reserve(k * d.class_count);
  for (std::size_t c = 0; c < d.class_count; ++c) {
    auto& idx = by_class[c];
    if (idx.size() < k) {
      throw InsufficientDataError("sample_k_shot: class " + std::to_string(c) + " has " + std::to_string(idx.size()) +
                                      " examples, need " + std::to_string(k),
                                  c);
    }
    rng.shuffle(idx);
    chosen.insert(chosen.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k));
  }
  std::sort(chosen.begin(), chosen.end());
  return chosen;
}

inline Dataset sample_k_shot(const Dataset& d, std::size_t k, std::uint64_t seed) {
  const auto rows = sample_k_shot_indices(d, k, seed);
  Dataset out = d.subset(rows);
  out.name = d.name + "_" + std::to_string(k) + "shot";
  return out;
}

/// A dataset on disk is a TCSF pair: `<prefix>.x.tcsf` (N x d, or N x C x H x W) and
/// `<prefix>.y.tcsf` (N labels).
inline std::filesystem::path inputs_path(const std::filesystem::path& prefix) { return prefix.string() + ".x.tcsf"; }
inline std::filesystem::path labels_path(const std::filesystem::path& prefix) { return prefix.string() + ".y.tcsf"; }

inline void save_dataset(const std::filesystem::path& prefix, const Dataset& d, Dtype dtype = Dtype::f64) {
  d.validate();
  std::vector<std::uint64_t> dims{d.inputs.rows()};
  if (d.image) {
    dims.insert(dims.end(), {d.image->channels, d.image->height, d.image->width});
  } else {
    dims.push_back(d.inputs.cols());
  }
  write_tensor(inputs_path(prefix), dims, d.inputs.values(), dtype);
  std::vector<double> y(d.labels.begin(), d.labels.end());
  const std::uint64_t ydims[1] = {y.size()};
  write_tensor(labels_path(prefix), ydims, y, d.class_count <= 256 ? Dtype::u8 : Dtype::f64);
}

/// Loads a TCSF pair. `class_count` of 0 infers C = max label + 1.
inline Dataset load_dataset(const std::filesystem::path& prefix, std::size_t class_count = 0) {
  Tensor x = read_tensor(inputs_path(prefix));
  Tensor y = read_tensor(labels_path(prefix));
  if (x.dims.size() != 2 && x.dims.size() != 4) throw ShapeError(prefix.string() + ": inputs must be 2-D or 4-D");
  if (y.dims.size() != 1) throw ShapeError(prefix.string() + ": labels must be 1-D");
  Dataset d;
  d.name = prefix.filename().string();
  const std::size_t n = x.dims[0];
  const std::size_t width = n == 0 ? 0 : x.values.size() / n;
  d.inputs = Matrix(n, width, x.values);
  if (!d.inputs.all_finite()) throw FormatError(prefix.string() + ": non-finite inputs");
  if (x.dims.size() == 4) d.image = ImageShape{x.dims[1], x.dims[2], x.dims[3]};
  std::size_t max_label = 0;
  for (double v : y.values) {
    if (v < 0 || v != static_cast<double>(static_cast<std::size_t>(v))) {
      throw FormatError(prefix.string() + ": labels must be non-negative integers");
    }
    d.labels.push_back(static_cast<std::size_t>(v));
    max_label = std::max(max_label, d.labels.back());
  }
  d.class_count = class_count != 0 ? class_count : (d.labels.empty() ? 0 : max_label + 1);
  d.validate();
  return d;
}

}  // namespace tcs
