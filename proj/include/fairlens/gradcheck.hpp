#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "fairlens/error.hpp"
#include "fairlens/loss_kernels.hpp"
#include "fairlens/numkit.hpp"
#include "fairlens/rng.hpp"

// Finite-difference verification of the analytic gradients in loss_kernels.hpp. Each
// kernel is wrapped as a scalar function of one flat parameter vector; vector-valued
// kernels are contracted with a fixed random direction.

namespace fairlens::gradcheck {

/// A sampled evaluation point: f(x) and the analytic gradient of f at x.
struct Probe {
  Vector point;
  std::function<double(std::span<const double>)> value;
  std::function<Vector(std::span<const double>)> gradient;
};

struct KernelReport {
  std::string kernel;
  std::size_t trials = 0;
  std::size_t failures = 0;
  double worst_error = 0.0;  // max over trials and coordinates
  bool passed() const noexcept { return failures == 0; }
};

inline constexpr double kDefaultTolerance = 1e-4;

inline const std::vector<std::string>& kernel_names() {
  static const std::vector<std::string> names = {"blind", "embedding_pair", "ear",  "adapter",
                                                 "hard_concrete_l0", "moddiffy", "eat"};
  return names;
}

namespace detail {

using fairlens::detail::fail;

inline Vector gaussian_vector(Rng& rng, std::size_t n) {
  Vector v(n);
  for (double& x : v) x = rng.gaussian();
  return v;
}

/// Sequential reader over a flat parameter vector.
class Cursor {
 public:
  explicit Cursor(std::span<const double> x) : x_(x) {}
  double scalar() { return x_[pos_++]; }
  Vector vector(std::size_t n) {
    Vector v(x_.begin() + static_cast<std::ptrdiff_t>(pos_), x_.begin() + static_cast<std::ptrdiff_t>(pos_ + n));
    pos_ += n;
    return v;
  }
  Matrix matrix(std::size_t rows, std::size_t cols) { return Matrix(rows, cols, vector(rows * cols)); }

 private:
  std::span<const double> x_;
  std::size_t pos_ = 0;
};

inline void append(Vector& out, std::span<const double> xs) { out.insert(out.end(), xs.begin(), xs.end()); }

inline Probe blind_probe(Rng& rng) {
  Probe p;
  p.point = {rng.uniform(0.1, 5.0), rng.uniform(-4.0, 4.0), rng.uniform(0.1, 3.0)};
  p.value = [](std::span<const double> x) { return kernels::blind_weighted_loss(x[0], x[1], x[2]).value; };
  p.gradient = [](std::span<const double> x) {
    const auto r = kernels::blind_weighted_loss(x[0], x[1], x[2]);
    return Vector{r.d_task_loss, r.d_blind_logit, r.d_gamma};
  };
  return p;
}

inline Probe embedding_pair_probe(Rng& rng) {
  constexpr std::size_t pairs = 3, dim = 4;
  const double strength = rng.uniform(0.1, 2.0);
  Probe p;
  p.point = gaussian_vector(rng, 2 * pairs * dim);
  auto unpack = [](std::span<const double> x) {
    Cursor c(x);
    std::vector<std::pair<Vector, Vector>> out;
    for (std::size_t i = 0; i < pairs; ++i) {
      Vector a = c.vector(dim);
      out.emplace_back(std::move(a), c.vector(dim));
    }
    return out;
  };
  p.value = [=](std::span<const double> x) { return kernels::embedding_pair_regularizer(unpack(x), strength).value; };
  p.gradient = [=](std::span<const double> x) {
    const auto r = kernels::embedding_pair_regularizer(unpack(x), strength);
    Vector g;
    for (std::size_t i = 0; i < pairs; ++i) {
      append(g, r.d_first[i]);
      append(g, r.d_second[i]);
    }
    return g;
  };
  return p;
}

inline Probe ear_probe(Rng& rng) {
  // two layers x two heads, 3 query rows x 4 keys
  constexpr std::size_t layers = 2, heads = 2, rows = 3, cols = 4;
  const double strength = rng.uniform(0.1, 2.0);
  Probe p;
  for (std::size_t m = 0; m < layers * heads; ++m)
    for (std::size_t i = 0; i < rows; ++i) {
      Vector row(cols);
      double total = 0.0;
      for (double& x : row) total += (x = rng.uniform(0.2, 1.0));
      for (double& x : row) x /= total;
      append(p.point, row);
    }
  auto unpack = [](std::span<const double> x) {
    Cursor c(x);
    std::vector<AttentionRecord> recs;
    for (std::size_t l = 0; l < layers; ++l)
      for (std::size_t h = 0; h < heads; ++h)
        recs.push_back({static_cast<std::int64_t>(l), static_cast<std::int64_t>(h), c.matrix(rows, cols)});
    return recs;
  };
  p.value = [=](std::span<const double> x) {
    return kernels::ear_regularizer(unpack(x), strength, kernels::RowCheck::none).value;
  };
  p.gradient = [=](std::span<const double> x) {
    const auto r = kernels::ear_regularizer(unpack(x), strength, kernels::RowCheck::none);
    Vector g;
    for (const auto& m : r.d_weights) append(g, m.data());
    return g;
  };
  return p;
}

inline Probe adapter_probe(Rng& rng) {
  constexpr std::size_t d = 4, m = 3;
  auto unpack = [](std::span<const double> x, Vector& h, Vector& r, Matrix& down, Matrix& up) {
    Cursor c(x);
    h = c.vector(d);
    r = c.vector(d);
    down = c.matrix(m, d);
    up = c.matrix(d, m);
  };
  Probe p;
  // Resample until every pre-activation is clear of the ReLU kink.
  for (;;) {
    p.point = gaussian_vector(rng, 2 * d + 2 * m * d);
    Vector h, r;
    Matrix down, up;
    unpack(p.point, h, r, down, up);
    const Vector z = matvec(down, h);
    if (std::all_of(z.begin(), z.end(), [](double v) { return std::abs(v) > 1e-3; })) break;
  }
  const Vector direction = gaussian_vector(rng, d);
  p.value = [=](std::span<const double> x) {
    Vector h, r;
    Matrix down, up;
    unpack(x, h, r, down, up);
    return dot(direction, kernels::adapter_forward(h, r, down, up).output);
  };
  p.gradient = [=](std::span<const double> x) {
    Vector h, r;
    Matrix down, up;
    unpack(x, h, r, down, up);
    const auto fwd = kernels::adapter_forward(h, r, down, up);
    const auto g = kernels::adapter_backward(fwd, h, down, up, direction);
    Vector out;
    append(out, g.d_h);
    append(out, g.d_r);
    append(out, g.d_down.data());
    append(out, g.d_up.data());
    return out;
  };
  return p;
}

inline Probe hard_concrete_probe(Rng& rng) {
  constexpr std::size_t n = 5;
  Probe p;
  for (std::size_t i = 0; i < n; ++i) p.point.push_back(rng.uniform(-4.0, 4.0));
  p.point.push_back(rng.uniform(-0.5, -0.05));
  p.point.push_back(rng.uniform(1.05, 1.5));
  auto unpack = [](std::span<const double> x) {
    Cursor c(x);
    kernels::HardConcreteParams params;
    params.log_alpha = c.vector(n);
    params.stretch_lo = c.scalar();
    params.stretch_hi = c.scalar();
    return params;
  };
  p.value = [=](std::span<const double> x) { return kernels::hard_concrete_l0(unpack(x)).value; };
  p.gradient = [=](std::span<const double> x) {
    const auto r = kernels::hard_concrete_l0(unpack(x));
    Vector g = r.d_log_alpha;
    g.push_back(r.d_stretch_lo);
    g.push_back(r.d_stretch_hi);
    return g;
  };
  return p;
}

inline Probe moddiffy_probe(Rng& rng) {
  constexpr std::size_t na = 3, nb = 2, dim = 3;
  const double strength = rng.uniform(0.1, 2.0);
  Probe p;
  p.point = gaussian_vector(rng, (na + nb) * dim);
  auto unpack = [](std::span<const double> x, std::vector<Vector>& a, std::vector<Vector>& b) {
    Cursor c(x);
    for (std::size_t i = 0; i < na; ++i) a.push_back(c.vector(dim));
    for (std::size_t i = 0; i < nb; ++i) b.push_back(c.vector(dim));
  };
  const auto kernel = kernels::EmbeddingKernel::tanh();
  p.value = [=](std::span<const double> x) {
    std::vector<Vector> a, b;
    unpack(x, a, b);
    return kernels::moddiffy_debias_loss(a, b, strength, kernel).value;
  };
  p.gradient = [=](std::span<const double> x) {
    std::vector<Vector> a, b;
    unpack(x, a, b);
    const auto r = kernels::moddiffy_debias_loss(a, b, strength, kernel);
    Vector g;
    for (const auto& v : r.d_group_a) append(g, v);
    for (const auto& v : r.d_group_b) append(g, v);
    return g;
  };
  return p;
}

inline Probe eat_probe(Rng& rng) {
  constexpr std::size_t n = 3, m = 4, d = 2, dv = 3;
  const double d_k = static_cast<double>(d);
  Probe p;
  p.point = gaussian_vector(rng, n * d + m * d + m * dv);
  p.point.push_back(rng.uniform(0.0, 2.0));
  const Matrix direction(n, dv, gaussian_vector(rng, n * dv));
  auto unpack = [](std::span<const double> x, Matrix& q, Matrix& k, Matrix& v, double& beta) {
    Cursor c(x);
    q = c.matrix(n, d);
    k = c.matrix(m, d);
    v = c.matrix(m, dv);
    beta = c.scalar();
  };
  p.value = [=](std::span<const double> x) {
    Matrix q, k, v;
    double beta;
    unpack(x, q, k, v, beta);
    return dot(direction.data(), kernels::eat_attention(q, k, v, beta, d_k).output.data());
  };
  p.gradient = [=](std::span<const double> x) {
    Matrix q, k, v;
    double beta;
    unpack(x, q, k, v, beta);
    const auto fwd = kernels::eat_attention(q, k, v, beta, d_k);
    const auto g = kernels::eat_attention_backward(fwd, q, k, v, beta, d_k, direction);
    Vector out;
    append(out, g.d_q.data());
    append(out, g.d_k.data());
    append(out, g.d_v.data());
    out.push_back(g.d_beta);
    return out;
  };
  return p;
}

inline std::uint64_t kernel_seed(std::uint64_t seed, std::string_view name) {
  // FNV-1a of the name, mixed into the user seed
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : name) h = (h ^ c) * 0x100000001b3ULL;
  return SplitMix64(seed ^ h).next();
}

}  // namespace detail

/// Draws a random evaluation point for the named kernel.
inline Probe make_probe(std::string_view kernel, Rng& rng) {
  if (kernel == "blind") return detail::blind_probe(rng);
  if (kernel == "embedding_pair") return detail::embedding_pair_probe(rng);
  if (kernel == "ear") return detail::ear_probe(rng);
  if (kernel == "adapter") return detail::adapter_probe(rng);
  if (kernel == "hard_concrete_l0") return detail::hard_concrete_probe(rng);
  if (kernel == "moddiffy") return detail::moddiffy_probe(rng);
  if (kernel == "eat") return detail::eat_probe(rng);
  detail::fail(ErrorKind::not_found, "unknown kernel '" + std::string(kernel) + "'");
}

/// Componentwise |analytic - numeric| / max(1, |analytic|), maximised over coordinates.
inline double probe_error(const Probe& probe) {
  const Vector analytic = probe.gradient(probe.point);
  const Vector numeric = finite_diff_grad(probe.value, probe.point);
  if (analytic.size() != numeric.size()) detail::fail(ErrorKind::shape_mismatch, "gradient length mismatch");
  double worst = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    worst = std::max(worst, std::abs(analytic[i] - numeric[i]) / std::max(1.0, std::abs(analytic[i])));
  }
  return worst;
}

/// Runs `trials` seeded probes of one kernel. The probe stream depends only on
/// (seed, kernel name), so kernels can be checked independently or in any order.
inline KernelReport check_kernel(std::string_view kernel, std::size_t trials, std::uint64_t seed,
                                 double tolerance = kDefaultTolerance) {
  Rng rng(detail::kernel_seed(seed, kernel));
  KernelReport report{std::string(kernel), trials, 0, 0.0};
  for (std::size_t t = 0; t < trials; ++t) {
    const double err = probe_error(make_probe(kernel, rng));
    report.worst_error = std::max(report.worst_error, err);
    if (!(err < tolerance)) ++report.failures;
  }
  return report;
}

}  // namespace fairlens::gradcheck
