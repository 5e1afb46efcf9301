#include "mapr/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "mapr/error.hpp"
#include "mapr/intrinsic.hpp"
#include "mapr/rng.hpp"

namespace mapr {

namespace {

using Matrix = std::vector<double>;  // row-major m x m

std::vector<double> mat_vec(const Matrix& a, std::size_t m, std::span<const double> v) {
  std::vector<double> out(m, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < m; ++j) out[i] += a[i * m + j] * v[j];
  return out;
}

double normalize(std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  const double len = std::sqrt(s);
  if (len > 0.0)
    for (double& x : v) x /= len;
  return len;
}

// Largest eigenvalue of a symmetric PSD matrix by power iteration, with a
// Rayleigh-quotient readout. The final unit vector is left in `vec`.
double top_eigenvalue(const Matrix& a, std::size_t m, int iterations, Rng& rng, std::vector<double>& vec) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<double> v(m);
  for (double& x : v) x = gauss(rng);
  if (normalize(v) == 0.0) v[0] = 1.0;
  double lambda = 0.0;
  for (int it = 0; it < iterations; ++it) {
    std::vector<double> w = mat_vec(a, m, v);
    const double rq = std::inner_product(v.begin(), v.end(), w.begin(), 0.0);
    if (normalize(w) == 0.0) {
      vec = v;
      return 0.0;
    }
    const bool settled = it > 0 && std::abs(rq - lambda) <= 1e-15 * std::max(1.0, std::abs(rq));
    lambda = rq;
    v.swap(w);
    if (settled) break;
  }
  vec = std::move(v);
  return lambda;
}

}  // namespace

double anisotropy(const JacobianOperator& jac, int iterations, std::uint64_t seed) {
  if (jac.outputs == 0 || jac.inputs == 0 || !jac.vjp) throw ConfigError("anisotropy: empty Jacobian operator");
  if (iterations < 1) throw ConfigError("anisotropy: need at least one iteration");
  const std::size_t m = jac.outputs;
  // Rows of J from one VJP per output.
  std::vector<std::vector<double>> rows(m);
  std::vector<double> e(m, 0.0);
  for (std::size_t c = 0; c < m; ++c) {
    e[c] = 1.0;
    rows[c] = jac.vjp(e);
    e[c] = 0.0;
    if (rows[c].size() != jac.inputs) throw ShapeError("anisotropy: VJP returned the wrong length");
  }
  // When outputs exceed inputs, J J^T is rank deficient by construction; the
  // nonzero spectrum lives in J^T J instead.
  const bool wide = m <= jac.inputs;
  const std::size_t g = wide ? m : jac.inputs;
  Matrix gram(g * g, 0.0);
  for (std::size_t i = 0; i < g; ++i) {
    for (std::size_t j = i; j < g; ++j) {
      double s = 0.0;
      if (wide) {
        for (std::size_t k = 0; k < jac.inputs; ++k) s += rows[i][k] * rows[j][k];
      } else {
        for (std::size_t k = 0; k < m; ++k) s += rows[k][i] * rows[k][j];
      }
      gram[i * g + j] = gram[j * g + i] = s;
    }
  }

  // Singular value read off an eigenvector of the Gram matrix as |J^T v| or
  // |J v|. Squaring through the Gram matrix would lose half the digits.
  auto singular_value = [&](const std::vector<double>& v) {
    double s = 0.0;
    if (wide) {
      for (std::size_t k = 0; k < jac.inputs; ++k) {
        double t = 0.0;
        for (std::size_t c = 0; c < m; ++c) t += v[c] * rows[c][k];
        s += t * t;
      }
    } else {
      for (std::size_t c = 0; c < m; ++c) {
        const double t = std::inner_product(rows[c].begin(), rows[c].end(), v.begin(), 0.0);
        s += t * t;
      }
    }
    return std::sqrt(s);
  };

  Rng rng(seed);
  std::vector<double> v_top, v_bottom;
  const double top = top_eigenvalue(gram, g, iterations, rng, v_top);
  if (!(top > 0.0)) return kInfiniteAnisotropy;
  Matrix shifted(g * g);
  for (std::size_t i = 0; i < g * g; ++i) shifted[i] = -gram[i];
  for (std::size_t i = 0; i < g; ++i) shifted[i * g + i] += top;
  top_eigenvalue(shifted, g, iterations, rng, v_bottom);
  const double sigma_max = singular_value(v_top);
  const double sigma_min = singular_value(v_bottom);
  if (sigma_min < kSingularFloor) return kInfiniteAnisotropy;
  return std::max(1.0, sigma_max / sigma_min);
}

JacobianOperator model_jacobian(const Classifier& model, const PointCloud& cloud) {
  JacobianOperator j;
  j.outputs = model.num_classes();
  j.inputs = cloud.size() * 3;
  j.vjp = [&model, cloud](std::span<const double> cot) { return model.logits_vjp(cloud, cot); };
  return j;
}

double diagnostics_mu(const Classifier& model, const PointCloud& cloud, int probes) {
  return anisotropy(model_jacobian(model, cloud), probes);
}

LipschitzStats summarize_ratios(std::vector<double> ratios) {
  LipschitzStats s;
  s.pairs = ratios.size();
  if (ratios.empty()) return s;
  std::vector<double> sorted = ratios;
  std::sort(sorted.begin(), sorted.end());
  // Nearest-rank quantile.
  auto q = [&](double p) {
    const auto rank = static_cast<std::size_t>(std::ceil(p * static_cast<double>(sorted.size())));
    return sorted[std::clamp<std::size_t>(rank, 1, sorted.size()) - 1];
  };
  s.max = sorted.back();
  s.mean = std::accumulate(ratios.begin(), ratios.end(), 0.0) / static_cast<double>(ratios.size());
  s.p50 = q(0.50);
  s.p90 = q(0.90);
  s.p99 = q(0.99);
  s.ratios = std::move(ratios);
  return s;
}

LipschitzStats diagnostics_lipschitz(const Classifier& model, std::span<const PointCloud> clouds, std::size_t pairs,
                                     const PerturbConfig& perturb_cfg, std::uint64_t seed, double epsilon) {
  if (clouds.size() < 2) throw ConfigError("diagnostics_lipschitz: need at least two clouds");
  if (!(epsilon > 0.0)) throw ConfigError("diagnostics_lipschitz: epsilon must be > 0");
  Rng rng(seed);
  std::vector<double> ratios;
  ratios.reserve(pairs);
  for (std::size_t p = 0; p < pairs; ++p) {
    const PointCloud& x = clouds[p % clouds.size()];
    const PointCloud x_prime = perturb(x, perturb_cfg, rng);
    const PointCloud both[2] = {x, x_prime};
    const Tensor probs = softmax(model.model().forward(model.encode(both)));
    const std::size_t c = probs.dim(1);
    double num = 0.0;
    for (std::size_t k = 0; k < c; ++k) {
      const double d = probs.at(k) - probs.at(c + k);
      num += d * d;
    }
    const double gap = intrinsic_gap(intrinsic_map(x, model.graph_k()), intrinsic_map(x_prime, model.graph_k()));
    ratios.push_back(std::sqrt(num) / (std::sqrt(gap) + epsilon));
  }
  return summarize_ratios(std::move(ratios));
}

}  // namespace mapr
