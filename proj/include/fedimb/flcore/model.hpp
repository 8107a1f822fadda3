#pragma once

#include "fedimb/dataset.hpp"
#include "fedimb/error.hpp"
#include "fedimb/random.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace fedimb::fl {

struct ModelShape {
  std::size_t input = 0;   // d
  std::size_t hidden = 0;  // h
  std::size_t classes = 0; // B

  std::size_t parameter_count() const noexcept {
    return input * hidden + hidden + hidden * classes + classes;
  }
  friend bool operator==(const ModelShape&, const ModelShape&) = default;
};

// Parameters of the one-hidden-layer relu classifier, stored flat in the
// order W1 (d x h, row-major), b1 (h), W2 (h x B, row-major), b2 (B). The
// flat layout doubles as the vector space the federated algorithms work in
// (gradients, control variates, averages).
class ModelParams {
public:
  ModelParams() = default;
  explicit ModelParams(ModelShape shape) : shape_(shape), values_(shape.parameter_count(), 0.0) {}
  ModelParams(ModelShape shape, std::vector<double> values)
      : shape_(shape), values_(std::move(values)) {
    if (values_.size() != shape_.parameter_count())
      throw ShapeMismatch("ModelParams: value count does not match shape");
  }

  const ModelShape& shape() const noexcept { return shape_; }
  std::size_t size() const noexcept { return values_.size(); }

  std::span<double> values() noexcept { return values_; }
  std::span<const double> values() const noexcept { return values_; }

  std::span<double> w1() noexcept { return values().subspan(0, w1_size()); }
  std::span<double> b1() noexcept { return values().subspan(w1_size(), shape_.hidden); }
  std::span<double> w2() noexcept { return values().subspan(w2_offset(), w2_size()); }
  std::span<double> b2() noexcept { return values().subspan(w2_offset() + w2_size()); }
  std::span<const double> w1() const noexcept { return values().subspan(0, w1_size()); }
  std::span<const double> b1() const noexcept { return values().subspan(w1_size(), shape_.hidden); }
  std::span<const double> w2() const noexcept { return values().subspan(w2_offset(), w2_size()); }
  std::span<const double> b2() const noexcept { return values().subspan(w2_offset() + w2_size()); }

  bool all_finite() const noexcept {
    return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
  }
  bool all_zero() const noexcept {
    return std::all_of(values_.begin(), values_.end(), [](double v) { return v == 0.0; });
  }

  friend bool operator==(const ModelParams&, const ModelParams&) = default;

private:
  std::size_t w1_size() const noexcept { return shape_.input * shape_.hidden; }
  std::size_t w2_offset() const noexcept { return w1_size() + shape_.hidden; }
  std::size_t w2_size() const noexcept { return shape_.hidden * shape_.classes; }

  ModelShape shape_;
  std::vector<double> values_;
};

inline void require_same_shape(const ModelParams& a, const ModelParams& b, const char* where) {
  if (!(a.shape() == b.shape()) || a.size() != b.size())
    throw ShapeMismatch(std::string(where) + ": parameter shapes differ");
}

// y += a * x
inline void axpy(double a, const ModelParams& x, ModelParams& y) {
  require_same_shape(x, y, "axpy");
  auto xs = x.values();
  auto ys = y.values();
  for (std::size_t i = 0; i < ys.size(); ++i) ys[i] += a * xs[i];
}

inline ModelParams difference(const ModelParams& a, const ModelParams& b) {
  require_same_shape(a, b, "difference");
  ModelParams out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out.values()[i] = a.values()[i] - b.values()[i];
  return out;
}

// Weights ~ N(0, 1/fan_in), biases zero.
inline ModelParams init_params(ModelShape shape, std::uint64_t seed) {
  if (shape.input < 1 || shape.hidden < 1 || shape.classes < 1)
    throw InvalidParameter("init_params: every dimension must be >= 1");
  ModelParams p(shape);
  Rng rng = make_rng(seed, {0x1417});
  std::normal_distribution<double> std_normal(0.0, 1.0);
  const double s1 = 1.0 / std::sqrt(static_cast<double>(shape.input));
  const double s2 = 1.0 / std::sqrt(static_cast<double>(shape.hidden));
  for (auto& w : p.w1()) w = s1 * std_normal(rng);
  for (auto& w : p.w2()) w = s2 * std_normal(rng);
  return p;
}

struct ForwardResult {
  Matrix pre_hidden; // x W1 + b1
  Matrix hidden;     // z = relu(pre_hidden), the representation
  Matrix logits;     // z W2 + b2
};

inline ForwardResult forward(const ModelParams& params, const Matrix& batch) {
  const auto& s = params.shape();
  if (batch.cols() != s.input)
    throw ShapeMismatch("forward: batch has " + std::to_string(batch.cols()) +
                        " columns, model expects " + std::to_string(s.input));
  const std::size_t n = batch.rows();
  ForwardResult out{Matrix(n, s.hidden), Matrix(n, s.hidden), Matrix(n, s.classes)};
  const auto w1 = params.w1();
  const auto b1 = params.b1();
  const auto w2 = params.w2();
  const auto b2 = params.b2();
  for (std::size_t r = 0; r < n; ++r) {
    auto pre = out.pre_hidden.row(r);
    std::copy(b1.begin(), b1.end(), pre.begin());
    const auto x = batch.row(r);
    for (std::size_t i = 0; i < s.input; ++i) {
      const double xi = x[i];
      if (xi == 0.0) continue;
      const double* wrow = w1.data() + i * s.hidden;
      for (std::size_t j = 0; j < s.hidden; ++j) pre[j] += xi * wrow[j];
    }
    auto z = out.hidden.row(r);
    for (std::size_t j = 0; j < s.hidden; ++j) z[j] = pre[j] > 0.0 ? pre[j] : 0.0;
    auto logit = out.logits.row(r);
    std::copy(b2.begin(), b2.end(), logit.begin());
    for (std::size_t j = 0; j < s.hidden; ++j) {
      const double zj = z[j];
      if (zj == 0.0) continue;
      const double* wrow = w2.data() + j * s.classes;
      for (std::size_t c = 0; c < s.classes; ++c) logit[c] += zj * wrow[c];
    }
  }
  return out;
}

// Extra terms added to the mean cross-entropy. Each is skipped entirely when
// its coefficient is zero or its model is absent.
struct Regularizer {
  // (prox_mu / 2) * ||w - prox_anchor||^2
  const ModelParams* prox_anchor = nullptr;
  double prox_mu = 0.0;

  // <correction, w>; Scaffold passes c - c_i, whose gradient is the
  // constant correction added to every local step.
  const ModelParams* linear_correction = nullptr;

  // contrastive_mu * mean_i l_con(z_i, z_global_i, z_prev_i), with
  // l_con = -log( e^{cos(z,zg)/tau} / (e^{cos(z,zg)/tau} + e^{cos(z,zp)/tau}) ).
  // The global and previous models are constants.
  const ModelParams* contrastive_global = nullptr;
  const ModelParams* contrastive_prev = nullptr;
  double contrastive_mu = 0.0;
  double contrastive_tau = 0.5;

  bool has_prox() const noexcept { return prox_anchor != nullptr && prox_mu != 0.0; }
  bool has_linear() const noexcept {
    return linear_correction != nullptr && !linear_correction->all_zero();
  }
  bool has_contrastive() const noexcept {
    return contrastive_global != nullptr && contrastive_prev != nullptr && contrastive_mu != 0.0;
  }
};

inline constexpr double kCosineNormFloor = 1e-12;

struct LossAndGrad {
  double loss = 0.0;          // total objective
  double cross_entropy = 0.0; // mean cross-entropy part alone
  ModelParams grad;
};

// Adds the parameter-only regularizer terms (proximal, linear correction) to
// an existing loss/gradient pair.
inline void apply_param_regularizers(const ModelParams& w, const Regularizer& reg, double& loss,
                                     ModelParams& grad) {
  if (reg.has_prox()) {
    require_same_shape(w, *reg.prox_anchor, "proximal term");
    const auto ws = w.values();
    const auto as = reg.prox_anchor->values();
    auto gs = grad.values();
    double sq = 0.0;
    for (std::size_t i = 0; i < ws.size(); ++i) {
      const double diff = ws[i] - as[i];
      sq += diff * diff;
      gs[i] += reg.prox_mu * diff;
    }
    loss += 0.5 * reg.prox_mu * sq;
  }
  if (reg.has_linear()) {
    require_same_shape(w, *reg.linear_correction, "linear correction");
    const auto ws = w.values();
    const auto cs = reg.linear_correction->values();
    auto gs = grad.values();
    double dot = 0.0;
    for (std::size_t i = 0; i < ws.size(); ++i) {
      dot += cs[i] * ws[i];
      gs[i] += cs[i];
    }
    loss += dot;
  }
}

namespace detail {

struct CosineWithGrad {
  double value;
  std::vector<double> grad; // d cos / d a
};

// cos(a, b) = a.b / max(|a||b|, floor), differentiated with respect to a.
inline CosineWithGrad cosine_and_grad(std::span<const double> a, std::span<const double> b) {
  double dot = 0.0, na2 = 0.0, nb2 = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na2 += a[i] * a[i];
    nb2 += b[i] * b[i];
  }
  const double na = std::sqrt(na2), nb = std::sqrt(nb2);
  const double denom = na * nb;
  CosineWithGrad out{0.0, std::vector<double>(a.size())};
  if (denom > kCosineNormFloor) {
    out.value = dot / denom;
    for (std::size_t i = 0; i < a.size(); ++i)
      out.grad[i] = b[i] / denom - out.value * a[i] / na2;
  } else {
    out.value = dot / kCosineNormFloor;
    for (std::size_t i = 0; i < a.size(); ++i) out.grad[i] = b[i] / kCosineNormFloor;
  }
  return out;
}

} // namespace detail

inline double contrastive_loss(double cos_global, double cos_prev, double tau) {
  const double s1 = cos_global / tau, s2 = cos_prev / tau;
  const double m = std::max(s1, s2);
  return m + std::log(std::exp(s1 - m) + std::exp(s2 - m)) - s1;
}

// Mean softmax cross-entropy of `batch` against `labels` plus `reg`, with
// its exact gradient.
inline LossAndGrad loss_and_grad(const ModelParams& params, const Matrix& batch,
                                 std::span<const int> labels, const Regularizer& reg = {}) {
  const auto& s = params.shape();
  const std::size_t n = batch.rows();
  if (labels.size() != n) throw ShapeMismatch("loss_and_grad: label count != batch rows");
  if (n == 0) throw InvalidParameter("loss_and_grad: empty batch");
  for (int l : labels)
    if (l < 0 || static_cast<std::size_t>(l) >= s.classes)
      throw InvalidParameter("loss_and_grad: label " + std::to_string(l) + " out of range");

  const auto fwd = forward(params, batch);
  const double inv_n = 1.0 / static_cast<double>(n);

  LossAndGrad out{0.0, 0.0, ModelParams(s)};
  Matrix dlogits(n, s.classes);
  double ce = 0.0;
  for (std::size_t r = 0; r < n; ++r) {
    const auto logit = fwd.logits.row(r);
    const double m = *std::max_element(logit.begin(), logit.end());
    double sum = 0.0;
    for (double v : logit) sum += std::exp(v - m);
    const double lse = m + std::log(sum);
    const auto y = static_cast<std::size_t>(labels[r]);
    ce += lse - logit[y];
    auto dl = dlogits.row(r);
    for (std::size_t c = 0; c < s.classes; ++c) dl[c] = std::exp(logit[c] - lse) * inv_n;
    dl[y] -= inv_n;
  }
  ce *= inv_n;
  out.cross_entropy = ce;
  out.loss = ce;

  auto gw1 = out.grad.w1();
  auto gb1 = out.grad.b1();
  auto gw2 = out.grad.w2();
  auto gb2 = out.grad.b2();
  const auto w2 = params.w2();

  Matrix dz(n, s.hidden);
  for (std::size_t r = 0; r < n; ++r) {
    const auto z = fwd.hidden.row(r);
    const auto dl = dlogits.row(r);
    for (std::size_t j = 0; j < s.hidden; ++j) {
      double* grow = gw2.data() + j * s.classes;
      const double* wrow = w2.data() + j * s.classes;
      double acc = 0.0;
      for (std::size_t c = 0; c < s.classes; ++c) {
        grow[c] += z[j] * dl[c];
        acc += dl[c] * wrow[c];
      }
      dz(r, j) = acc;
    }
    for (std::size_t c = 0; c < s.classes; ++c) gb2[c] += dl[c];
  }

  if (reg.has_contrastive()) {
    const auto zg = forward(*reg.contrastive_global, batch).hidden;
    const auto zp = forward(*reg.contrastive_prev, batch).hidden;
    const double tau = reg.contrastive_tau;
    const double scale = reg.contrastive_mu * inv_n;
    double con = 0.0;
    for (std::size_t r = 0; r < n; ++r) {
      const auto cg = detail::cosine_and_grad(fwd.hidden.row(r), zg.row(r));
      const auto cp = detail::cosine_and_grad(fwd.hidden.row(r), zp.row(r));
      con += contrastive_loss(cg.value, cp.value, tau);
      // softmax weights of the two similarity scores
      const double s1 = cg.value / tau, s2 = cp.value / tau;
      const double m = std::max(s1, s2);
      const double e1 = std::exp(s1 - m), e2 = std::exp(s2 - m);
      const double sig1 = e1 / (e1 + e2), sig2 = e2 / (e1 + e2);
      for (std::size_t j = 0; j < s.hidden; ++j)
        dz(r, j) += scale * ((sig1 - 1.0) * cg.grad[j] + sig2 * cp.grad[j]) / tau;
    }
    out.loss += reg.contrastive_mu * con * inv_n;
  }

  for (std::size_t r = 0; r < n; ++r) {
    const auto pre = fwd.pre_hidden.row(r);
    const auto x = batch.row(r);
    for (std::size_t j = 0; j < s.hidden; ++j) {
      const double dpre = pre[j] > 0.0 ? dz(r, j) : 0.0;
      if (dpre == 0.0) continue;
      gb1[j] += dpre;
      for (std::size_t i = 0; i < s.input; ++i) gw1[i * s.hidden + j] += x[i] * dpre;
    }
  }

  apply_param_regularizers(params, reg, out.loss, out.grad);
  if (!std::isfinite(out.loss)) throw NumericFailure("loss_and_grad: non-finite loss");
  return out;
}

// Rows `indices` of ds.features, in the given order.
inline Matrix gather_rows(const Matrix& features, std::span<const std::size_t> indices) {
  Matrix out(indices.size(), features.cols());
  for (std::size_t r = 0; r < indices.size(); ++r) {
    const auto src = features.row(indices[r]);
    std::copy(src.begin(), src.end(), out.row(r).begin());
  }
  return out;
}

} // namespace fedimb::fl
