#pragma once

// Small parameterised layers built from the op set, plus the named
// parameter registry the trainer and checkpoints operate on. Parameter
// order is creation order and must stay stable across runs.

#include <string>
#include <utility>
#include <vector>

#include "vqtts/ops.hpp"
#include "vqtts/rng.hpp"
#include "vqtts/tensor.hpp"

namespace vqtts {

class ParamRegistry {
 public:
  Tensor create(const std::string& name, Shape shape, Rng& rng, double scale) {
    std::vector<double> data(static_cast<size_t>(shape_numel(shape)));
    for (double& d : data) d = rng.uniform(-scale, scale);
    return add(name, Tensor::from(std::move(shape), std::move(data), true));
  }

  // Uniform in [-a, a], a = sqrt(6 / (fan_in + fan_out)).
  Tensor create_xavier(const std::string& name, Shape shape, Rng& rng) {
    double fan_in = static_cast<double>(shape.size() == 2 ? shape[1] : shape[0]);
    double fan_out = static_cast<double>(shape[0]);
    return create(name, shape, rng, std::sqrt(6.0 / (fan_in + fan_out)));
  }

  Tensor create_zeros(const std::string& name, Shape shape) {
    return add(name, Tensor::zeros(std::move(shape), true));
  }

  Tensor add(const std::string& name, Tensor t) {
    for (const auto& p : params_)
      if (p.name() == name)
        throw std::invalid_argument("ParamRegistry: duplicate parameter name " + name);
    t.set_name(name);
    params_.push_back(t);
    return t;
  }

  const std::vector<Tensor>& params() const { return params_; }

  Tensor find(const std::string& name) const {
    for (const auto& p : params_)
      if (p.name() == name) return p;
    throw std::invalid_argument("ParamRegistry: no parameter named " + name);
  }

  int64_t total_size() const {
    int64_t n = 0;
    for (const auto& p : params_) n += p.numel();
    return n;
  }

 private:
  std::vector<Tensor> params_;
};

struct Linear {
  Tensor W, b;

  void init(ParamRegistry& reg, const std::string& name, int64_t out, int64_t in, Rng& rng,
            bool bias = true) {
    W = reg.create_xavier(name + ".W", {out, in}, rng);
    // Small nonzero biases keep ReLU preactivations off the kink for
    // all-zero inputs (the decoder go-frame), where finite differences
    // and the subgradient would disagree.
    if (bias) b = reg.create(name + ".b", {out}, rng, 1.0 / std::sqrt(static_cast<double>(in)));
  }
  Tensor apply(const Tensor& x) const { return affine(W, x, b); }
  // Row-per-sample matrix form: X (N x in) -> N x out.
  Tensor apply_rows(const Tensor& X) const {
    Tensor y = matmul(X, reshape_transposed());
    return b.defined() ? add_rowvec(y, b) : y;
  }

 private:
  Tensor reshape_transposed() const {
    const int64_t out = W.shape()[0], in = W.shape()[1];
    std::vector<double> t(static_cast<size_t>(in * out));
    for (int64_t r = 0; r < out; ++r)
      for (int64_t c = 0; c < in; ++c)
        t[static_cast<size_t>(c * out + r)] = W.value()[static_cast<size_t>(r * in + c)];
    Node* Wn = W.raw();
    return detail::make_op("transpose", {in, out}, std::move(t), {W.node()},
                           [Wn, out, in](const std::vector<double>& g, GradStore& gs) {
                             if (!Wn->needs_grad) return;
                             auto& gw = gs.acc(Wn);
                             for (int64_t r = 0; r < out; ++r)
                               for (int64_t c = 0; c < in; ++c)
                                 gw[static_cast<size_t>(r * in + c)] += g[static_cast<size_t>(c * out + r)];
                           });
  }
};

// Gate layout in the fused matrices: [update | reset | candidate].
struct GruCell {
  Tensor Wx, Wh, bx, bh;
  int64_t hidden = 0;

  void init(ParamRegistry& reg, const std::string& name, int64_t in, int64_t h, Rng& rng) {
    hidden = h;
    Wx = reg.create_xavier(name + ".Wx", {3 * h, in}, rng);
    Wh = reg.create_xavier(name + ".Wh", {3 * h, h}, rng);
    bx = reg.create(name + ".bx", {3 * h}, rng, 1.0 / std::sqrt(static_cast<double>(in)));
    bh = reg.create(name + ".bh", {3 * h}, rng, 1.0 / std::sqrt(static_cast<double>(h)));
  }

  Tensor step(const Tensor& x, const Tensor& h_prev) const {
    const int64_t h = hidden;
    Tensor gx = affine(Wx, x, bx);
    Tensor gh = affine(Wh, h_prev, bh);
    Tensor z = sigmoid(add(slice_vec(gx, 0, h), slice_vec(gh, 0, h)));
    Tensor r = sigmoid(add(slice_vec(gx, h, h), slice_vec(gh, h, h)));
    Tensor n = tanh_t(add(slice_vec(gx, 2 * h, h), mul(r, slice_vec(gh, 2 * h, h))));
    // h' = n + z * (h_prev - n)
    return add(n, mul(z, sub(h_prev, n)));
  }

  Tensor initial_state() const { return Tensor::zeros({hidden}); }
};

struct Conv1dLayer {
  Tensor W, b;
  int64_t width = 0, stride = 1, pad_left = 0, pad_right = 0;

  void init(ParamRegistry& reg, const std::string& name, int64_t cin, int64_t cout, int64_t w,
            int64_t s, Rng& rng) {
    width = w;
    stride = s;
    pad_left = (w - 1) / 2;
    pad_right = w / 2;
    const double a = std::sqrt(6.0 / static_cast<double>(cin * w + cout));
    W = reg.create(name + ".W", {cout, cin * w}, rng, a);
    b = reg.create(name + ".b", {cout}, rng, 1.0 / std::sqrt(static_cast<double>(cin * w)));
  }
  Tensor apply(const Tensor& x) const { return conv1d(x, W, b, width, stride, pad_left, pad_right); }
};

}  // namespace vqtts
