#pragma once

// Small feed-forward networks with explicit backprop: affine, ReLU, 2-D convolution
// and global average pooling. A Network is a backbone (layers up to the penultimate
// features) followed by one affine classifier.

#include <cmath>
#include <cstdint>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "tcs/datasets.hpp"
#include "tcs/errors.hpp"
#include "tcs/matrix.hpp"
#include "tcs/rng.hpp"

namespace tcs {

struct Affine {
  Matrix weight;  // in x out
  Matrix bias;    // 1 x out
  Matrix grad_weight;
  Matrix grad_bias;

  Affine() = default;
  Affine(std::size_t in, std::size_t out) : weight(in, out), bias(1, out), grad_weight(in, out), grad_bias(1, out) {}

  std::size_t in_dim() const { return weight.rows(); }
  std::size_t out_dim() const { return weight.cols(); }

  Matrix forward(const Matrix& x) const {
    if (x.cols() != in_dim()) {
      throw ShapeError("affine: input has " + std::to_string(x.cols()) + " columns, expected " + std::to_string(in_dim()));
    }
    Matrix y = matmul(x, weight);
    add_row_vector(y, bias.values());
    return y;
  }

  Matrix backward(const Matrix& x, const Matrix& grad_out) {
    grad_weight += matmul_tn(x, grad_out);
    for (std::size_t r = 0; r < grad_out.rows(); ++r)
      for (std::size_t c = 0; c < grad_out.cols(); ++c) grad_bias(0, c) += grad_out(r, c);
    return matmul_nt(grad_out, weight);
  }
};

struct Relu {
  Matrix forward(const Matrix& x) const {
    Matrix y = x;
    for (double& v : y.values()) v = v > 0.0 ? v : 0.0;
    return y;
  }
  Matrix backward(const Matrix& x, const Matrix& grad_out) const {
    Matrix g = grad_out;
    for (std::size_t i = 0; i < g.size(); ++i)
      if (!(x.values()[i] > 0.0)) g.values()[i] = 0.0;
    return g;
  }
};

/// Stride-1 convolution over (C, H, W) rows with symmetric zero padding.
struct Conv2d {
  ImageShape in;
  std::size_t out_channels = 0;
  std::size_t kernel = 3;
  std::size_t padding = 1;
  Matrix weight;  // out_channels x (C * k * k)
  Matrix bias;    // 1 x out_channels
  Matrix grad_weight;
  Matrix grad_bias;

  Conv2d() = default;
  Conv2d(ImageShape input, std::size_t out_c, std::size_t k, std::size_t pad)
      : in(input),
        out_channels(out_c),
        kernel(k),
        padding(pad),
        weight(out_c, input.channels * k * k),
        bias(1, out_c),
        grad_weight(out_c, input.channels * k * k),
        grad_bias(1, out_c) {
    if (in.height + 2 * padding < kernel || in.width + 2 * padding < kernel) throw ShapeError("conv2d: kernel larger than input");
  }

  ImageShape out_shape() const {
    return {out_channels, in.height + 2 * padding - kernel + 1, in.width + 2 * padding - kernel + 1};
  }

  // Patch matrix for one sample: (H' * W') x (C * k * k).
  Matrix im2col(std::span<const double> x) const {
    const ImageShape o = out_shape();
    Matrix cols(o.height * o.width, in.channels * kernel * kernel);
    for (std::size_t oy = 0; oy < o.height; ++oy) {
      for (std::size_t ox = 0; ox < o.width; ++ox) {
        double* dst = cols.row(oy * o.width + ox).data();
        std::size_t t = 0;
        for (std::size_t c = 0; c < in.channels; ++c) {
          for (std::size_t ky = 0; ky < kernel; ++ky) {
            for (std::size_t kx = 0; kx < kernel; ++kx, ++t) {
              const long iy = static_cast<long>(oy + ky) - static_cast<long>(padding);
              const long ix = static_cast<long>(ox + kx) - static_cast<long>(padding);
              const bool inside = iy >= 0 && ix >= 0 && iy < static_cast<long>(in.height) && ix < static_cast<long>(in.width);
              dst[t] = inside ? x[(c * in.height + static_cast<std::size_t>(iy)) * in.width + static_cast<std::size_t>(ix)] : 0.0;
            }
          }
        }
      }
    }
    return cols;
  }

  Matrix forward(const Matrix& x) const {
    if (x.cols() != in.size()) throw ShapeError("conv2d: input width mismatch");
    const ImageShape o = out_shape();
    const std::size_t plane = o.height * o.width;
    Matrix y(x.rows(), o.size());
    for (std::size_t n = 0; n < x.rows(); ++n) {
      const Matrix cols = im2col(x.row(n));
      const Matrix resp = matmul_nt(cols, weight);  // plane x out_channels
      auto out = y.row(n);
      for (std::size_t p = 0; p < plane; ++p)
        for (std::size_t oc = 0; oc < out_channels; ++oc) out[oc * plane + p] = resp(p, oc) + bias(0, oc);
    }
    return y;
  }

  Matrix backward(const Matrix& x, const Matrix& grad_out) {
    const ImageShape o = out_shape();
    const std::size_t plane = o.height * o.width;
    Matrix grad_in(x.rows(), in.size());
    for (std::size_t n = 0; n < x.rows(); ++n) {
      const Matrix cols = im2col(x.row(n));
      Matrix g(plane, out_channels);
      auto go = grad_out.row(n);
      for (std::size_t p = 0; p < plane; ++p)
        for (std::size_t oc = 0; oc < out_channels; ++oc) {
          g(p, oc) = go[oc * plane + p];
          grad_bias(0, oc) += g(p, oc);
        }
      grad_weight += matmul_tn(g, cols);
      const Matrix gcols = matmul(g, weight);  // plane x (C*k*k)
      auto gi = grad_in.row(n);
      for (std::size_t oy = 0; oy < o.height; ++oy) {
        for (std::size_t ox = 0; ox < o.width; ++ox) {
          const double* src = gcols.row(oy * o.width + ox).data();
          std::size_t t = 0;
          for (std::size_t c = 0; c < in.channels; ++c) {
            for (std::size_t ky = 0; ky < kernel; ++ky) {
              for (std::size_t kx = 0; kx < kernel; ++kx, ++t) {
                const long iy = static_cast<long>(oy + ky) - static_cast<long>(padding);
                const long ix = static_cast<long>(ox + kx) - static_cast<long>(padding);
                if (iy >= 0 && ix >= 0 && iy < static_cast<long>(in.height) && ix < static_cast<long>(in.width))
                  gi[(c * in.height + static_cast<std::size_t>(iy)) * in.width + static_cast<std::size_t>(ix)] += src[t];
              }
            }
          }
        }
      }
    }
    return grad_in;
  }
};

struct GlobalAvgPool {
  ImageShape in;

  Matrix forward(const Matrix& x) const {
    const std::size_t plane = in.height * in.width;
    Matrix y(x.rows(), in.channels);
    for (std::size_t n = 0; n < x.rows(); ++n)
      for (std::size_t c = 0; c < in.channels; ++c) {
        double s = 0.0;
        for (std::size_t p = 0; p < plane; ++p) s += x(n, c * plane + p);
        y(n, c) = s / static_cast<double>(plane);
      }
    return y;
  }

  Matrix backward(const Matrix& x, const Matrix& grad_out) const {
    const std::size_t plane = in.height * in.width;
    Matrix g(x.rows(), x.cols());
    for (std::size_t n = 0; n < x.rows(); ++n)
      for (std::size_t c = 0; c < in.channels; ++c)
        for (std::size_t p = 0; p < plane; ++p) g(n, c * plane + p) = grad_out(n, c) / static_cast<double>(plane);
    return g;
  }
};

using Layer = std::variant<Affine, Relu, Conv2d, GlobalAvgPool>;

/// Architecture description, serialized as e.g. "mlp:256,256", "linear:8" or "cnn:8,16".
///
/// mlp    — affine+ReLU per hidden width; features are the last hidden layer.
/// linear — a single affine map to the listed width (no activation).
/// cnn    — 3x3 same-padded conv+ReLU per channel count, then global average pooling.
struct ArchSpec {
  std::string kind = "mlp";
  std::vector<std::size_t> widths;
  std::size_t input_dim = 0;
  std::optional<ImageShape> image;
  std::size_t classes = 0;

  std::string layout() const {
    std::ostringstream ss;
    ss << kind << ':';
    for (std::size_t i = 0; i < widths.size(); ++i) ss << (i ? "," : "") << widths[i];
    return ss.str();
  }

  static ArchSpec parse(const std::string& text, std::size_t input_dim, std::size_t classes,
                        std::optional<ImageShape> image = std::nullopt) {
    ArchSpec a;
    const auto colon = text.find(':');
    if (colon == std::string::npos) throw ConfigError("arch '" + text + "': expected kind:w1,w2,...");
    a.kind = text.substr(0, colon);
    if (a.kind != "mlp" && a.kind != "linear" && a.kind != "cnn") throw ConfigError("arch '" + text + "': unknown kind");
    std::stringstream ss(text.substr(colon + 1));
    std::string item;
    while (std::getline(ss, item, ',')) {
      try {
        a.widths.push_back(std::stoul(item));
      } catch (const std::exception&) {
        throw ConfigError("arch '" + text + "': bad width '" + item + "'");
      }
      if (a.widths.back() == 0) throw ConfigError("arch '" + text + "': zero width");
    }
    if (a.widths.empty()) throw ConfigError("arch '" + text + "': no widths");
    if (a.kind == "linear" && a.widths.size() != 1) throw ConfigError("arch '" + text + "': linear takes one width");
    if (a.kind == "cnn" && !image) throw ConfigError("arch '" + text + "': cnn needs image-shaped inputs");
    a.input_dim = input_dim;
    a.classes = classes;
    a.image = image;
    return a;
  }

  bool operator==(const ArchSpec&) const = default;
};

struct ParamRef {
  std::string name;
  Matrix* value;
  Matrix* grad;
};

class Network {
 public:
  struct Cache {
    std::vector<Matrix> inputs;  // input to each backbone layer
    Matrix features;
  };

  Network() = default;

  /// Builds the layer graph for `arch` and applies seeded Kaiming-uniform init (zero biases).
  Network(const ArchSpec& arch, std::uint64_t seed) : arch_(arch) {
    if (arch.classes < 1) throw PreconditionError("network: class count must be >= 1");
    std::size_t width = arch.input_dim;
    if (arch.kind == "cnn") {
      ImageShape shape = *arch.image;
      if (shape.size() != arch.input_dim) throw ShapeError("network: image shape does not match input dim");
      for (std::size_t c : arch.widths) {
        Conv2d conv(shape, c, 3, 1);
        shape = conv.out_shape();
        backbone_.emplace_back(std::move(conv));
        backbone_.emplace_back(Relu{});
      }
      backbone_.emplace_back(GlobalAvgPool{shape});
      width = shape.channels;
    } else {
      for (std::size_t h : arch.widths) {
        backbone_.emplace_back(Affine(width, h));
        if (arch.kind == "mlp") backbone_.emplace_back(Relu{});
        width = h;
      }
    }
    classifier_ = Affine(width, arch.classes);
    reinitialize(seed);
  }

  void reinitialize(std::uint64_t seed) {
    Rng rng(seed);
    auto init = [&](Matrix& w, std::size_t fan_in) {
      const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
      for (double& v : w.values()) v = rng.uniform(-bound, bound);
    };
    for (Layer& layer : backbone_) {
      if (auto* a = std::get_if<Affine>(&layer)) {
        init(a->weight, a->in_dim());
        a->bias.fill(0.0);
      } else if (auto* c = std::get_if<Conv2d>(&layer)) {
        init(c->weight, c->weight.cols());
        c->bias.fill(0.0);
      }
    }
    init(classifier_.weight, classifier_.in_dim());
    classifier_.bias.fill(0.0);
  }

  const ArchSpec& arch() const { return arch_; }
  std::size_t input_dim() const { return arch_.input_dim; }
  std::size_t feature_dim() const { return classifier_.in_dim(); }
  std::size_t class_count() const { return classifier_.out_dim(); }
  const std::vector<Layer>& backbone() const { return backbone_; }
  std::vector<Layer>& backbone() { return backbone_; }
  const Affine& classifier() const { return classifier_; }
  Affine& classifier() { return classifier_; }

  Matrix forward_features(const Matrix& batch, Cache* cache = nullptr) const {
    if (batch.cols() != input_dim()) {
      throw ShapeError("forward_features: batch has " + std::to_string(batch.cols()) + " columns, network expects " +
                       std::to_string(input_dim()));
    }
    Matrix x = batch;
    if (cache) cache->inputs.clear();
    for (const Layer& layer : backbone_) {
      Matrix y = std::visit([&](const auto& l) { return l.forward(x); }, layer);
      if (cache) cache->inputs.push_back(std::move(x));
      x = std::move(y);
    }
    if (cache) cache->features = x;
    return x;
  }

  Matrix forward_logits(const Matrix& batch, Cache* cache = nullptr) const {
    return classifier_.forward(forward_features(batch, cache));
  }

  /// Backprop from dL/dfeatures through the backbone; accumulates parameter grads.
  void backward_features(const Cache& cache, Matrix grad) {
    for (std::size_t i = backbone_.size(); i-- > 0;) {
      grad = std::visit([&](auto& l) { return l.backward(cache.inputs[i], grad); }, backbone_[i]);
    }
  }

  /// Backprop from dL/dlogits through classifier and backbone.
  void backward_logits(const Cache& cache, const Matrix& grad_logits) {
    backward_features(cache, classifier_.backward(cache.features, grad_logits));
  }

  /// Parameters in a fixed order: backbone layers front to back, then the classifier.
  std::vector<ParamRef> parameters(bool include_classifier = true) {
    std::vector<ParamRef> out;
    for (std::size_t i = 0; i < backbone_.size(); ++i) {
      const std::string p = "backbone." + std::to_string(i) + ".";
      if (auto* a = std::get_if<Affine>(&backbone_[i])) {
        out.push_back({p + "weight", &a->weight, &a->grad_weight});
        out.push_back({p + "bias", &a->bias, &a->grad_bias});
      } else if (auto* c = std::get_if<Conv2d>(&backbone_[i])) {
        out.push_back({p + "weight", &c->weight, &c->grad_weight});
        out.push_back({p + "bias", &c->bias, &c->grad_bias});
      }
    }
    if (include_classifier) {
      out.push_back({"classifier.weight", &classifier_.weight, &classifier_.grad_weight});
      out.push_back({"classifier.bias", &classifier_.bias, &classifier_.grad_bias});
    }
    return out;
  }

  std::vector<const Matrix*> parameter_values() const {
    auto refs = const_cast<Network*>(this)->parameters();
    std::vector<const Matrix*> out;
    for (auto& r : refs) out.push_back(r.value);
    return out;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const Matrix* m : parameter_values()) n += m->size();
    return n;
  }

  void zero_grad() {
    for (auto& p : parameters()) p.grad->fill(0.0);
  }

 private:
  ArchSpec arch_;
  std::vector<Layer> backbone_;
  Affine classifier_;
};

/// Row-wise softmax.
inline Matrix softmax(const Matrix& logits, double temperature = 1.0) {
  Matrix p(logits.rows(), logits.cols());
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    auto z = logits.row(r);
    double zmax = -std::numeric_limits<double>::infinity();
    for (double v : z) zmax = std::max(zmax, v / temperature);
    double s = 0.0;
    for (std::size_t c = 0; c < z.size(); ++c) s += (p(r, c) = std::exp(z[c] / temperature - zmax));
    for (std::size_t c = 0; c < z.size(); ++c) p(r, c) /= s;
  }
  return p;
}

/// Index of the largest entry per row; ties go to the lowest index.
inline std::vector<std::size_t> argmax_rows(const Matrix& m) {
  std::vector<std::size_t> out(m.rows(), 0);
  for (std::size_t r = 0; r < m.rows(); ++r) {
    auto row = m.row(r);
    for (std::size_t c = 1; c < row.size(); ++c)
      if (row[c] > row[out[r]]) out[r] = c;
  }
  return out;
}

}  // namespace tcs
