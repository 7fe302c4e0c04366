#pragma once

// PCA coordinate system of teacher features and induction of student features into it.

#include <cstdint>
#include <filesystem>
#include <span>

#include "json.hpp"
#include "tcs/checkpoint.hpp"
#include "tcs/errors.hpp"
#include "tcs/linalg.hpp"
#include "tcs/matrix.hpp"
#include "tcs/tensor_io.hpp"

namespace tcs {

struct CoordinateSystem {
  Vector mu;     // D
  Matrix v;      // D x D, columns are principal directions
  Vector sigma;  // D, singular values of the centered features, descending
  std::size_t sample_count = 0;

  std::size_t dim() const { return mu.size(); }

  /// Covariance eigenvalues σ² / (N − 1).
  Vector explained_variance() const {
    Vector out(sigma.size());
    const double denom = sample_count > 1 ? static_cast<double>(sample_count - 1) : 1.0;
    for (std::size_t i = 0; i < sigma.size(); ++i) out[i] = sigma[i] * sigma[i] / denom;
    return out;
  }

  /// μV, the induced image of the mean offset.
  Vector projected_mean() const {
    Vector out(dim(), 0.0);
    for (std::size_t i = 0; i < dim(); ++i)
      for (std::size_t j = 0; j < dim(); ++j) out[j] += mu[i] * v(i, j);
    return out;
  }
};

/// Centers teacher features and takes the right singular vectors of the result.
///
/// When N < D the basis is completed to D x D with seeded Gram-Schmidt; the added
/// directions carry zero singular value.
inline CoordinateSystem fit_coordinate_system(const Matrix& teacher_features, std::uint64_t completion_seed = 0) {
  const std::size_t n = teacher_features.rows();
  const std::size_t d = teacher_features.cols();
  if (n < 2) throw PreconditionError("fit_coordinate_system: need at least 2 feature rows");
  if (d == 0) throw PreconditionError("fit_coordinate_system: zero-width features");
  if (!teacher_features.all_finite()) throw PreconditionError("fit_coordinate_system: non-finite features");

  CoordinateSystem cs;
  cs.sample_count = n;
  cs.mu = column_mean(teacher_features);
  Matrix centered = teacher_features;
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < d; ++c) centered(r, c) -= cs.mu[c];
  SvdResult svd = svd_thin(centered);
  cs.sigma = svd.sigma;
  if (svd.v.cols() < d) {
    cs.v = complete_orthonormal_basis(svd.v, completion_seed);
    cs.sigma.resize(d, 0.0);
  } else {
    cs.v = std::move(svd.v);
  }
  return cs;
}

/// Coordinate system with a seeded random orthonormal basis around a given mean.
inline CoordinateSystem random_coordinate_system(Vector mu, std::uint64_t seed) {
  CoordinateSystem cs;
  cs.v = random_orthonormal(mu.size(), seed);
  cs.sigma.assign(mu.size(), 0.0);
  cs.mu = std::move(mu);
  return cs;
}

/// (f − μ)V for one vector.
inline Vector induct(std::span<const double> f, const CoordinateSystem& cs) {
  if (f.size() != cs.dim()) {
    throw ShapeError("induct: vector has " + std::to_string(f.size()) + " entries, coordinate system has " +
                     std::to_string(cs.dim()));
  }
  Vector centered(f.begin(), f.end());
  for (std::size_t i = 0; i < centered.size(); ++i) centered[i] -= cs.mu[i];
  Vector out(cs.dim(), 0.0);
  for (std::size_t i = 0; i < cs.dim(); ++i) {
    const double c = centered[i];
    if (c == 0.0) continue;
    const double* vr = cs.v.row(i).data();
    for (std::size_t j = 0; j < cs.dim(); ++j) out[j] += c * vr[j];
  }
  return out;
}

/// Row-wise (F − 1μᵀ)V.
inline Matrix induct_rows(const Matrix& f, const CoordinateSystem& cs) {
  if (f.cols() != cs.dim()) throw ShapeError("induct: feature width does not match coordinate system");
  Matrix centered = f;
  for (std::size_t r = 0; r < f.rows(); ++r)
    for (std::size_t c = 0; c < f.cols(); ++c) centered(r, c) -= cs.mu[c];
  return matmul(centered, cs.v);
}

inline void save_coordinate_system(const std::filesystem::path& dir, const CoordinateSystem& cs,
                                   const nlohmann::ordered_json& extra = {}) {
  std::filesystem::create_directories(dir);
  nlohmann::ordered_json m;
  m["dim"] = cs.dim();
  m["sample_count"] = cs.sample_count;
  const std::uint64_t vec_dims[1] = {cs.dim()};
  const std::uint64_t mat_dims[2] = {cs.v.rows(), cs.v.cols()};
  const std::string mu = encode_tensor(vec_dims, cs.mu);
  const std::string v = encode_tensor(mat_dims, cs.v.values());
  const std::string sigma = encode_tensor(vec_dims, cs.sigma);
  write_file_bytes(dir / "mu.tcsf", mu);
  write_file_bytes(dir / "v.tcsf", v);
  write_file_bytes(dir / "sigma.tcsf", sigma);
  m["checksums"] = {{"mu", checksum(mu)}, {"v", checksum(v)}, {"sigma", checksum(sigma)}};
  for (const auto& [k, val] : extra.items()) m[k] = val;
  write_json(dir / "coordsys.json", m);
}

/// Loads and verifies checksums recorded in coordsys.json.
inline CoordinateSystem load_coordinate_system(const std::filesystem::path& dir) {
  const auto m = read_json(dir / "coordsys.json");
  for (const char* name : {"mu", "v", "sigma"}) {
    const std::string actual = file_checksum(dir / (std::string(name) + ".tcsf"));
    if (actual != m.at("checksums").at(name).get<std::string>()) {
      throw FormatError(dir.string() + ": checksum mismatch for " + name);
    }
  }
  CoordinateSystem cs;
  cs.mu = read_vector(dir / "mu.tcsf");
  cs.v = read_matrix(dir / "v.tcsf");
  cs.sigma = read_vector(dir / "sigma.tcsf");
  cs.sample_count = m.at("sample_count").get<std::size_t>();
  if (cs.v.rows() != cs.dim() || cs.v.cols() != cs.dim() || cs.sigma.size() != cs.dim()) {
    throw ShapeError(dir.string() + ": inconsistent coordinate system shapes");
  }
  return cs;
}

}  // namespace tcs
