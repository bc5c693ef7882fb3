#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "voxkit/common.hpp"
#include "voxkit/rng.hpp"

namespace voxkit {

struct TsneConfig {
  double perplexity = 30.0;
  int iterations = 1000;
  double eta = 200.0;  // gradient step
  double momentum_initial = 0.5, momentum_final = 0.8;
  int momentum_switch_iter = 250;
  double early_exaggeration = 12.0;
  int exaggeration_iters = 100;
  std::uint64_t seed = 0;
};

struct TsneResult {
  std::vector<std::array<double, 2>> y;
  std::vector<double> kl_trace;  // one entry per iteration, un-exaggerated P
};

namespace detail {

inline std::vector<double> pairwise_sq_dists(const std::vector<std::vector<double>>& x) {
  const std::size_t n = x.size();
  std::vector<double> d2(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      double s = 0;
      for (std::size_t k = 0; k < x[i].size(); ++k) {
        const double d = x[i][k] - x[j][k];
        s += d * d;
      }
      d2[i * n + j] = d2[j * n + i] = s;
    }
  return d2;
}

}  // namespace detail

/// Row-conditional Gaussian affinities with per-row bandwidths found by
/// binary search so that each row's perplexity matches the target. Rows sum
/// to 1; the diagonal is 0. Also reports the achieved perplexity per row.
inline std::vector<double> tsne_conditional_affinities(
    const std::vector<std::vector<double>>& points, double perplexity,
    std::vector<double>* achieved_perplexity = nullptr) {
  const std::size_t n = points.size();
  if (n < 3) throw DegenerateInput("tsne: need at least 3 points");
  if (!(perplexity > 0) || !(perplexity < static_cast<double>(n)))
    throw InvalidSpec("tsne: perplexity must lie in (0, n)");
  for (std::size_t i = 1; i < n; ++i)
    if (points[i].size() != points[0].size())
      throw LengthMismatch("tsne: points differ in dimension");

  const std::vector<double> d2 = detail::pairwise_sq_dists(points);
  if (*std::max_element(d2.begin(), d2.end()) == 0.0)
    throw DegenerateInput("tsne: all points identical");

  std::vector<double> p(n * n, 0.0);
  if (achieved_perplexity) achieved_perplexity->assign(n, 0.0);
  const double target_h = std::log(perplexity);
  for (std::size_t i = 0; i < n; ++i) {
    double beta = 1.0;
    double beta_lo = -std::numeric_limits<double>::infinity();
    double beta_hi = std::numeric_limits<double>::infinity();
    double dmin = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < n; ++j)
      if (j != i) dmin = std::min(dmin, d2[i * n + j]);
    double h = 0;
    for (int it = 0; it < 300; ++it) {
      double sum = 0, dsum = 0;
      for (std::size_t j = 0; j < n; ++j) {
        if (j == i) continue;
        const double e = std::exp(-beta * (d2[i * n + j] - dmin));
        sum += e;
        dsum += (d2[i * n + j] - dmin) * e;
      }
      h = std::log(sum) + beta * dsum / sum;  // shift-invariant entropy
      const double diff = h - target_h;
      if (std::abs(std::exp(h) - perplexity) < 1e-6) break;
      if (diff > 0) {  // too spread: narrow the kernel
        beta_lo = beta;
        beta = std::isinf(beta_hi) ? beta * 2 : 0.5 * (beta + beta_hi);
      } else {
        beta_hi = beta;
        beta = std::isinf(beta_lo) ? beta * 0.5 : 0.5 * (beta + beta_lo);
      }
    }
    double sum = 0;
    for (std::size_t j = 0; j < n; ++j)
      if (j != i) sum += std::exp(-beta * (d2[i * n + j] - dmin));
    for (std::size_t j = 0; j < n; ++j)
      if (j != i) p[i * n + j] = std::exp(-beta * (d2[i * n + j] - dmin)) / sum;
    if (achieved_perplexity) (*achieved_perplexity)[i] = std::exp(h);
  }
  return p;
}

/// Exact t-SNE to 2D: symmetrized affinities, Student-t output kernel,
/// gradient descent with momentum, gains and early exaggeration.
/// Deterministic in cfg.seed.
inline TsneResult tsne(const std::vector<std::vector<double>>& points, const TsneConfig& cfg) {
  const std::size_t n = points.size();
  std::vector<double> p = tsne_conditional_affinities(points, cfg.perplexity);

  // symmetrize to joint probabilities, floored for KL stability
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      const double v = (p[i * n + j] + p[j * n + i]) / (2.0 * static_cast<double>(n));
      p[i * n + j] = p[j * n + i] = std::max(v, 1e-12);
    }
  for (std::size_t i = 0; i < n; ++i) p[i * n + i] = 0.0;

  SeededRng rng(cfg.seed);
  std::vector<std::array<double, 2>> y(n), vel(n, {0, 0}), gains(n, {1, 1});
  for (auto& yi : y) {
    yi[0] = rng.normal() * 1e-4;
    yi[1] = rng.normal() * 1e-4;
  }

  TsneResult out;
  out.kl_trace.reserve(cfg.iterations);
  std::vector<double> num(n * n, 0.0);
  std::vector<std::array<double, 2>> grad(n);

  for (int iter = 0; iter < cfg.iterations; ++iter) {
    const double exag = iter < cfg.exaggeration_iters ? cfg.early_exaggeration : 1.0;
    double z = 0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j) {
        const double dx = y[i][0] - y[j][0], dy = y[i][1] - y[j][1];
        const double v = 1.0 / (1.0 + dx * dx + dy * dy);
        num[i * n + j] = num[j * n + i] = v;
        z += 2.0 * v;
      }

    double kl = 0;
    for (std::size_t i = 0; i < n; ++i) {
      grad[i] = {0, 0};
      for (std::size_t j = 0; j < n; ++j) {
        if (j == i) continue;
        const double q = std::max(num[i * n + j] / z, 1e-12);
        const double pij = p[i * n + j];
        const double mult = 4.0 * (exag * pij - q) * num[i * n + j];
        grad[i][0] += mult * (y[i][0] - y[j][0]);
        grad[i][1] += mult * (y[i][1] - y[j][1]);
        if (pij > 0 && j > i) kl += 2.0 * pij * std::log(pij / q);
      }
    }
    out.kl_trace.push_back(kl);

    const double momentum =
        iter < cfg.momentum_switch_iter ? cfg.momentum_initial : cfg.momentum_final;
    double mean[2] = {0, 0};
    for (std::size_t i = 0; i < n; ++i) {
      for (int d = 0; d < 2; ++d) {
        // consistent descent keeps gradient and velocity opposed in sign;
        // shrink the gain when they agree, grow it otherwise
        const bool same_sign = (grad[i][d] > 0) == (vel[i][d] > 0);
        gains[i][d] = same_sign ? std::max(gains[i][d] * 0.8, 0.01) : gains[i][d] + 0.2;
        vel[i][d] = momentum * vel[i][d] - cfg.eta * gains[i][d] * grad[i][d];
        y[i][d] += vel[i][d];
        mean[d] += y[i][d];
      }
    }
    for (std::size_t i = 0; i < n; ++i)
      for (int d = 0; d < 2; ++d) y[i][d] -= mean[d] / static_cast<double>(n);
  }
  out.y = std::move(y);
  return out;
}

}  // namespace voxkit
