#pragma once

#include <cmath>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "fairlens/error.hpp"
#include "fairlens/interchange.hpp"
#include "fairlens/numkit.hpp"

// Stateless loss and transform kernels. Every differentiable kernel returns its value
// together with analytic partial derivatives; vector-valued kernels take an upstream
// gradient and return vector-Jacobian products.

namespace fairlens::kernels {

namespace detail {

using fairlens::detail::fail;
using fairlens::detail::require_finite;

inline double sigmoid(double z) noexcept {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

/// log(1 + exp(z)) without overflow.
inline double softplus(double z) noexcept { return std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z))); }

inline void require_finite_scalar(double x, const char* what) {
  if (!std::isfinite(x)) fail(ErrorKind::invalid_argument, std::string(what) + " must be finite");
}

}  // namespace detail

// ---------------------------------------------------------------------------
// BLIND reweighting
// ---------------------------------------------------------------------------

struct BlindLoss {
  double value = 0.0;
  double d_task_loss = 0.0;
  double d_blind_logit = 0.0;
  double d_gamma = 0.0;
};

/// (1 - sigmoid(blind_logit))^gamma * task_loss.
inline BlindLoss blind_weighted_loss(double task_loss, double blind_logit, double gamma) {
  detail::require_finite_scalar(task_loss, "blind_weighted_loss: task_loss");
  detail::require_finite_scalar(blind_logit, "blind_weighted_loss: blind_logit");
  detail::require_finite_scalar(gamma, "blind_weighted_loss: gamma");
  if (gamma < 0.0) detail::fail(ErrorKind::invalid_argument, "blind_weighted_loss: gamma must be >= 0");
  // 1 - sigmoid(z) = sigmoid(-z), log sigmoid(-z) = -softplus(z)
  const double log_fail = -detail::softplus(blind_logit);
  const double weight = gamma == 0.0 ? 1.0 : std::exp(gamma * log_fail);
  BlindLoss out;
  out.value = weight * task_loss;
  out.d_task_loss = weight;
  out.d_blind_logit = -gamma * detail::sigmoid(blind_logit) * out.value;
  out.d_gamma = out.value * log_fail;
  return out;
}

// ---------------------------------------------------------------------------
// Counterfactual embedding-distance regulariser
// ---------------------------------------------------------------------------

struct PairRegularizer {
  double value = 0.0;
  std::vector<Vector> d_first;
  std::vector<Vector> d_second;
};

/// strength * sum ||e_a - e_b||_2. The subgradient at coincident pairs is 0.
inline PairRegularizer embedding_pair_regularizer(std::span<const std::pair<Vector, Vector>> pairs, double strength) {
  detail::require_finite_scalar(strength, "embedding_pair_regularizer: strength");
  if (strength < 0.0) detail::fail(ErrorKind::invalid_argument, "embedding_pair_regularizer: strength must be >= 0");
  PairRegularizer out;
  for (const auto& [a, b] : pairs) {
    fairlens::detail::require_same_size(a.size(), b.size(), "embedding_pair_regularizer: dimension mismatch");
    detail::require_finite(a, "embedding_pair_regularizer: embedding");
    detail::require_finite(b, "embedding_pair_regularizer: embedding");
    Vector diff(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) diff[i] = a[i] - b[i];
    const double dist = norm(diff);
    out.value += dist;
    Vector ga(a.size(), 0.0);
    if (dist > 0.0)
      for (std::size_t i = 0; i < a.size(); ++i) ga[i] = strength * diff[i] / dist;
    Vector gb(ga);
    for (double& g : gb) g = -g;
    out.d_first.push_back(std::move(ga));
    out.d_second.push_back(std::move(gb));
  }
  out.value *= strength;
  return out;
}

// ---------------------------------------------------------------------------
// Entropy-based attention regularisation
// ---------------------------------------------------------------------------

enum class RowCheck {
  strict,  // every row must be a distribution within 1e-6
  none,    // rows are taken as given (used when probing off the simplex)
};

struct EarResult {
  double value = 0.0;
  std::map<std::int64_t, double> layer_entropy;  // mean row entropy per layer
  std::vector<Matrix> d_weights;                 // parallel to the input records
};

/// strength * -(sum over layers of entropy_l), where entropy_l is the mean Shannon entropy
/// over all query rows of all heads in layer l.
inline EarResult ear_regularizer(std::span<const AttentionRecord> attention, double strength,
                                 RowCheck check = RowCheck::strict) {
  detail::require_finite_scalar(strength, "ear_regularizer: strength");
  if (attention.empty()) detail::fail(ErrorKind::invalid_argument, "ear_regularizer: no attention records");
  std::map<std::int64_t, std::size_t> rows_per_layer;
  for (const auto& rec : attention) {
    detail::require_finite(rec.weights.data(), "ear_regularizer: weights");
    if (rec.weights.rows() == 0 || rec.weights.cols() == 0) {
      detail::fail(ErrorKind::shape_mismatch, "ear_regularizer: empty attention matrix");
    }
    if (check == RowCheck::strict)
      for (std::size_t i = 0; i < rec.weights.rows(); ++i)
        fairlens::detail::require_distribution(rec.weights.row(i), 1e-6, "ear_regularizer");
    rows_per_layer[rec.layer] += rec.weights.rows();
  }

  EarResult out;
  for (const auto& rec : attention) {
    const double n = static_cast<double>(rows_per_layer[rec.layer]);
    double sum = 0.0;
    for (std::size_t i = 0; i < rec.weights.rows(); ++i) sum += shannon_entropy(rec.weights.row(i));
    out.layer_entropy[rec.layer] += sum / n;

    Matrix grad(rec.weights.rows(), rec.weights.cols());
    for (std::size_t i = 0; i < rec.weights.rows(); ++i)
      for (std::size_t j = 0; j < rec.weights.cols(); ++j) {
        const double p = rec.weights(i, j);
        // d/dp of -strength * (-p ln p) / n
        grad(i, j) = p > 0.0 ? strength * (std::log(p) + 1.0) / n
                             : (strength > 0.0 ? -HUGE_VAL : strength < 0.0 ? HUGE_VAL : 0.0);
      }
    out.d_weights.push_back(std::move(grad));
  }
  double total = 0.0;
  for (const auto& [layer, h] : out.layer_entropy) total += h;
  out.value = -strength * total;
  return out;
}

// ---------------------------------------------------------------------------
// Bottleneck adapter
// ---------------------------------------------------------------------------

enum class Activation { relu };

struct AdapterForward {
  Vector output;          // up * g(down * h) + r
  Vector pre_activation;  // down * h
  Vector hidden;          // g(down * h)
};

struct AdapterGrad {
  Vector d_h;
  Vector d_r;
  Matrix d_down;
  Matrix d_up;
};

/// down: m x d, up: d x m, h and r of length d.
inline AdapterForward adapter_forward(std::span<const double> h, std::span<const double> r, const Matrix& down,
                                      const Matrix& up, Activation activation = Activation::relu) {
  const std::size_t d = h.size();
  const std::size_t m = down.rows();
  if (r.size() != d || down.cols() != d || up.rows() != d || up.cols() != m) {
    detail::fail(ErrorKind::shape_mismatch, "adapter_forward: expected down m x d, up d x m, |h| = |r| = d");
  }
  detail::require_finite(h, "adapter_forward: h");
  detail::require_finite(r, "adapter_forward: r");
  detail::require_finite(down.data(), "adapter_forward: down");
  detail::require_finite(up.data(), "adapter_forward: up");

  AdapterForward fwd;
  fwd.pre_activation = matvec(down, h);
  fwd.hidden = fwd.pre_activation;
  switch (activation) {
    case Activation::relu:
      for (double& x : fwd.hidden) x = x > 0.0 ? x : 0.0;
      break;
  }
  fwd.output = matvec(up, fwd.hidden);
  for (std::size_t i = 0; i < d; ++i) fwd.output[i] += r[i];
  return fwd;
}

/// Vector-Jacobian products of adapter_forward for an upstream gradient on its output.
inline AdapterGrad adapter_backward(const AdapterForward& fwd, std::span<const double> h, const Matrix& down,
                                    const Matrix& up, std::span<const double> upstream) {
  const std::size_t d = h.size();
  const std::size_t m = down.rows();
  if (upstream.size() != d || fwd.hidden.size() != m) {
    detail::fail(ErrorKind::shape_mismatch, "adapter_backward: shape mismatch");
  }
  AdapterGrad g;
  g.d_r.assign(upstream.begin(), upstream.end());
  g.d_up = Matrix(d, m);
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t k = 0; k < m; ++k) g.d_up(i, k) = upstream[i] * fwd.hidden[k];

  Vector d_pre(m, 0.0);
  for (std::size_t k = 0; k < m; ++k) {
    if (fwd.pre_activation[k] <= 0.0) continue;  // relu'(z) = 0 for z <= 0
    double acc = 0.0;
    for (std::size_t i = 0; i < d; ++i) acc += up(i, k) * upstream[i];
    d_pre[k] = acc;
  }
  g.d_down = Matrix(m, d);
  g.d_h.assign(d, 0.0);
  for (std::size_t k = 0; k < m; ++k)
    for (std::size_t j = 0; j < d; ++j) {
      g.d_down(k, j) = d_pre[k] * h[j];
      g.d_h[j] += down(k, j) * d_pre[k];
    }
  return g;
}

// ---------------------------------------------------------------------------
// Hard-concrete expected L0 penalty
// ---------------------------------------------------------------------------

/// Gate parameters of the stretched hard-concrete distribution; the stretch interval
/// (stretch_lo, stretch_hi) must contain [0, 1] strictly.
struct HardConcreteParams {
  Vector log_alpha;
  double stretch_lo = -0.1;
  double stretch_hi = 1.1;
};

struct HardConcreteL0 {
  double value = 0.0;
  Vector d_log_alpha;
  double d_stretch_lo = 0.0;
  double d_stretch_hi = 0.0;
};

/// sum_i sigmoid(log_alpha_i - log(-stretch_lo / stretch_hi)): the expected number of
/// nonzero gates.
inline HardConcreteL0 hard_concrete_l0(const HardConcreteParams& params) {
  detail::require_finite_scalar(params.stretch_lo, "hard_concrete_l0: stretch_lo");
  detail::require_finite_scalar(params.stretch_hi, "hard_concrete_l0: stretch_hi");
  if (!(params.stretch_lo < 0.0)) detail::fail(ErrorKind::invalid_argument, "hard_concrete_l0: stretch_lo must be < 0");
  if (!(params.stretch_hi > 1.0)) detail::fail(ErrorKind::invalid_argument, "hard_concrete_l0: stretch_hi must be > 1");
  for (double la : params.log_alpha)
    if (std::isnan(la) || la == HUGE_VAL) detail::fail(ErrorKind::invalid_argument, "hard_concrete_l0: invalid log_alpha");

  const double shift = std::log(-params.stretch_lo / params.stretch_hi);
  HardConcreteL0 out;
  out.d_log_alpha.reserve(params.log_alpha.size());
  double dsum = 0.0;
  for (double la : params.log_alpha) {
    const double p = detail::sigmoid(la - shift);
    out.value += p;
    out.d_log_alpha.push_back(p * (1.0 - p));
    dsum += p * (1.0 - p);
  }
  // shift = log(-lo) - log(hi): d shift/d lo = 1/lo, d shift/d hi = -1/hi
  out.d_stretch_lo = -dsum / params.stretch_lo;
  out.d_stretch_hi = dsum / params.stretch_hi;
  return out;
}

// ---------------------------------------------------------------------------
// Sparse diff-subnetwork debiasing terms
// ---------------------------------------------------------------------------

/// Transformation applied to each embedding before group means are compared. `vjp`
/// returns J_phi(x)^T * upstream.
struct EmbeddingKernel {
  std::function<Vector(std::span<const double>)> apply;
  std::function<Vector(std::span<const double> x, std::span<const double> upstream)> vjp;

  static EmbeddingKernel identity() {
    return {[](std::span<const double> x) { return Vector(x.begin(), x.end()); },
            [](std::span<const double>, std::span<const double> g) { return Vector(g.begin(), g.end()); }};
  }

  static EmbeddingKernel tanh() {
    return {[](std::span<const double> x) {
              Vector y(x.size());
              for (std::size_t i = 0; i < x.size(); ++i) y[i] = std::tanh(x[i]);
              return y;
            },
            [](std::span<const double> x, std::span<const double> g) {
              Vector out(x.size());
              for (std::size_t i = 0; i < x.size(); ++i) {
                const double t = std::tanh(x[i]);
                out[i] = g[i] * (1.0 - t * t);
              }
              return out;
            }};
  }
};

struct DebiasLoss {
  double value = 0.0;
  std::vector<Vector> d_group_a;
  std::vector<Vector> d_group_b;
};

/// strength * || mean_A phi(x) - mean_B phi(x) ||^2.
inline DebiasLoss moddiffy_debias_loss(const std::vector<Vector>& group_a, const std::vector<Vector>& group_b,
                                       double strength, const EmbeddingKernel& kernel = EmbeddingKernel::identity()) {
  detail::require_finite_scalar(strength, "moddiffy_debias_loss: strength");
  if (group_a.empty() || group_b.empty()) detail::fail(ErrorKind::invalid_argument, "moddiffy_debias_loss: empty group");
  const std::size_t dim = group_a.front().size();
  auto group_mean = [&](const std::vector<Vector>& group) {
    Vector mean;
    for (const auto& x : group) {
      if (x.size() != dim) detail::fail(ErrorKind::shape_mismatch, "moddiffy_debias_loss: dimension mismatch");
      detail::require_finite(x, "moddiffy_debias_loss: embedding");
      const Vector y = kernel.apply(x);
      if (mean.empty()) mean.assign(y.size(), 0.0);
      if (y.size() != mean.size()) detail::fail(ErrorKind::shape_mismatch, "moddiffy_debias_loss: kernel output size");
      for (std::size_t i = 0; i < y.size(); ++i) mean[i] += y[i];
    }
    for (double& m : mean) m /= static_cast<double>(group.size());
    return mean;
  };
  const Vector mean_a = group_mean(group_a);
  const Vector mean_b = group_mean(group_b);
  if (mean_a.size() != mean_b.size()) detail::fail(ErrorKind::shape_mismatch, "moddiffy_debias_loss: kernel output size");

  Vector diff(mean_a.size());
  double sq = 0.0;
  for (std::size_t i = 0; i < diff.size(); ++i) {
    diff[i] = mean_a[i] - mean_b[i];
    sq += diff[i] * diff[i];
  }
  DebiasLoss out;
  out.value = strength * sq;

  auto grads = [&](const std::vector<Vector>& group, double sign) {
    std::vector<Vector> g;
    Vector upstream(diff.size());
    const double coef = sign * 2.0 * strength / static_cast<double>(group.size());
    for (std::size_t i = 0; i < diff.size(); ++i) upstream[i] = coef * diff[i];
    for (const auto& x : group) g.push_back(kernel.vjp(x, upstream));
    return g;
  };
  out.d_group_a = grads(group_a, 1.0);
  out.d_group_b = grads(group_b, -1.0);
  return out;
}

/// Frozen base parameters plus a masked magnitude update.
struct DiffParams {
  Vector theta;
  Vector mask;  // entries 0 or 1
  Vector magnitude;
};

/// theta + mask (.) magnitude + sum of extra deltas (one per additional bias attribute).
inline Vector compose_diff_params(const DiffParams& params, std::span<const Vector> extra_deltas = {}) {
  const std::size_t n = params.theta.size();
  if (params.mask.size() != n || params.magnitude.size() != n) {
    detail::fail(ErrorKind::shape_mismatch, "compose_diff_params: theta, mask and magnitude lengths differ");
  }
  for (double m : params.mask)
    if (m != 0.0 && m != 1.0) detail::fail(ErrorKind::invalid_argument, "compose_diff_params: mask entries must be 0 or 1");
  Vector out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = params.theta[i] + params.mask[i] * params.magnitude[i];
  for (const auto& delta : extra_deltas) {
    if (delta.size() != n) detail::fail(ErrorKind::shape_mismatch, "compose_diff_params: delta length mismatch");
    for (std::size_t i = 0; i < n; ++i) out[i] += delta[i];
  }
  return out;
}

// ---------------------------------------------------------------------------
// Temperature-scaled attention
// ---------------------------------------------------------------------------

struct EatForward {
  Matrix output;   // weights * V
  Matrix weights;  // softmax_rows(beta * Q K^T / sqrt(d_k))
};

struct EatGrad {
  Matrix d_q;
  Matrix d_k;
  Matrix d_v;
  double d_beta = 0.0;
};

/// softmax_rows(beta * Q K^T / sqrt(d_k)) V with Q: n x d, K: m x d, V: m x d_v.
inline EatForward eat_attention(const Matrix& q, const Matrix& k, const Matrix& v, double beta, double d_k) {
  if (q.cols() != k.cols() || k.rows() != v.rows() || k.rows() == 0) {
    detail::fail(ErrorKind::shape_mismatch, "eat_attention: expected Q n x d, K m x d, V m x d_v");
  }
  detail::require_finite_scalar(beta, "eat_attention: beta");
  if (beta < 0.0) detail::fail(ErrorKind::invalid_argument, "eat_attention: beta must be >= 0");
  if (!(d_k > 0.0) || !std::isfinite(d_k)) detail::fail(ErrorKind::invalid_argument, "eat_attention: d_k must be > 0");
  const double root = std::sqrt(d_k);
  Matrix scores = matmul(q, transpose(k));
  // (s / sqrt(d_k)) * beta: with beta = 1 this is bit-identical to unscaled attention.
  for (double& s : scores.data()) s = (s / root) * beta;
  EatForward fwd;
  fwd.weights = softmax_rows(scores);
  fwd.output = matmul(fwd.weights, v);
  return fwd;
}

inline EatForward eat_attention(const Matrix& q, const Matrix& k, const Matrix& v, double beta) {
  return eat_attention(q, k, v, beta, static_cast<double>(q.cols()));
}

/// Plain scaled dot-product attention, softmax_rows(Q K^T / sqrt(d_k)) V.
inline Matrix scaled_dot_product_attention(const Matrix& q, const Matrix& k, const Matrix& v, double d_k) {
  return eat_attention(q, k, v, 1.0, d_k).output;
}

/// Vector-Jacobian products of eat_attention for an upstream gradient on its output.
inline EatGrad eat_attention_backward(const EatForward& fwd, const Matrix& q, const Matrix& k, const Matrix& v,
                                      double beta, double d_k, const Matrix& upstream) {
  if (upstream.rows() != fwd.output.rows() || upstream.cols() != fwd.output.cols()) {
    detail::fail(ErrorKind::shape_mismatch, "eat_attention_backward: upstream shape");
  }
  const double inv_sqrt = 1.0 / std::sqrt(d_k);
  const Matrix& p = fwd.weights;
  EatGrad g;
  g.d_v = matmul(transpose(p), upstream);
  const Matrix d_p = matmul(upstream, transpose(v));
  // softmax backward, row by row
  Matrix d_s(p.rows(), p.cols());
  for (std::size_t i = 0; i < p.rows(); ++i) {
    double inner = 0.0;
    for (std::size_t j = 0; j < p.cols(); ++j) inner += p(i, j) * d_p(i, j);
    for (std::size_t j = 0; j < p.cols(); ++j) d_s(i, j) = p(i, j) * (d_p(i, j) - inner);
  }
  const Matrix raw = matmul(q, transpose(k));
  for (std::size_t i = 0; i < raw.rows(); ++i)
    for (std::size_t j = 0; j < raw.cols(); ++j) g.d_beta += d_s(i, j) * raw(i, j) * inv_sqrt;
  const double scale = beta * inv_sqrt;
  g.d_q = matmul(d_s, k);
  for (double& x : g.d_q.data()) x *= scale;
  g.d_k = matmul(transpose(d_s), q);
  for (double& x : g.d_k.data()) x *= scale;
  return g;
}

}  // namespace fairlens::kernels
