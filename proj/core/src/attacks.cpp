#include "mapr/attacks.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <stdexcept>

#include "mapr/error.hpp"

namespace mapr {

namespace {

constexpr double kBoundSlack = 1e-9;

// Adds a problem-specific term to a coordinate gradient in place.
using GradientHook = std::function<void(const PointCloud& current, std::vector<double>& grad)>;

double sign(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

int argmax(std::span<const double> logits) {
  return static_cast<int>(std::max_element(logits.begin(), logits.end()) - logits.begin());
}

double l2_norm(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

void check_bound(double norm, double epsilon, const char* attack) {
  if (norm > epsilon + kBoundSlack) {
    throw std::logic_error(std::string(attack) + ": perturbation norm " + std::to_string(norm) +
                           " exceeds budget " + std::to_string(epsilon));
  }
}

AdversarialResult finish(const Classifier& model, int clean_prediction, PointCloud adv, double norm, int iterations) {
  AdversarialResult r;
  r.adv_prediction = model.predict(adv);
  r.adv_cloud = std::move(adv);
  r.clean_prediction = clean_prediction;
  r.success = r.adv_prediction != clean_prediction;
  r.perturbation_norm = norm;
  r.iterations_used = iterations;
  return r;
}

void random_start_in_ball(PointCloud& x, Norm norm, double epsilon, Rng& rng) {
  if (norm == Norm::kLinf) {
    std::uniform_real_distribution<double> u(-epsilon, epsilon);
    for (double& v : x.xyz) v += u(rng);
    return;
  }
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<double> dir(x.xyz.size());
  for (double& v : dir) v = gauss(rng);
  const double len = l2_norm(dir);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double radius = epsilon * std::pow(u(rng), 1.0 / static_cast<double>(dir.size()));
  if (len > 0.0)
    for (std::size_t i = 0; i < dir.size(); ++i) x.xyz[i] += radius * dir[i] / len;
}

// One ascent step followed by projection onto the ball around `origin`.
void ascend_and_project(PointCloud& x, const PointCloud& origin, std::span<const double> grad, Norm norm,
                        double epsilon, double step_size) {
  if (norm == Norm::kLinf) {
    for (std::size_t i = 0; i < x.xyz.size(); ++i) {
      const double moved = x.xyz[i] + step_size * sign(grad[i]);
      x.xyz[i] = std::min(std::max(moved, origin.xyz[i] - epsilon), origin.xyz[i] + epsilon);
    }
    return;
  }
  const double gnorm = l2_norm(grad);
  if (gnorm > 0.0)
    for (std::size_t i = 0; i < x.xyz.size(); ++i) x.xyz[i] += step_size * grad[i] / gnorm;
  std::vector<double> delta(x.xyz.size());
  for (std::size_t i = 0; i < delta.size(); ++i) delta[i] = x.xyz[i] - origin.xyz[i];
  const double dnorm = l2_norm(delta);
  if (dnorm > epsilon) {
    const double f = epsilon / dnorm;
    for (std::size_t i = 0; i < delta.size(); ++i) x.xyz[i] = origin.xyz[i] + delta[i] * f;
  }
}

struct IterateOutput {
  std::vector<PointCloud> adv;
  std::vector<int> clean_predictions;  // from the first gradient pass, when taken on clean inputs
};

IterateOutput iterate(const Classifier& model, std::span<const PointCloud> clouds, std::span<const int> labels,
                      Norm norm, double epsilon, int steps, double step_size, bool random_start, Rng& rng,
                      const GradientHook& hook) {
  IterateOutput out;
  out.adv.assign(clouds.begin(), clouds.end());
  if (random_start)
    for (auto& x : out.adv) random_start_in_ball(x, norm, epsilon, rng);
  for (int t = 0; t < steps; ++t) {
    auto grads = model.loss_gradient_batch(out.adv, labels);
    if (t == 0 && !random_start) {
      for (const auto& g : grads) out.clean_predictions.push_back(argmax(g.logits));
    }
    for (std::size_t s = 0; s < out.adv.size(); ++s) {
      if (hook) hook(out.adv[s], grads[s].grad);
      ascend_and_project(out.adv[s], clouds[s], grads[s].grad, norm, epsilon, step_size);
    }
  }
  return out;
}

AdversarialResult single_iterate(const Classifier& model, const PointCloud& cloud, int label, Norm norm,
                                 double epsilon, int steps, double step_size, bool random_start, Rng& rng,
                                 const GradientHook& hook, const char* name) {
  if (steps < 0) throw ConfigError(std::string(name) + ": steps must be >= 0");
  if (!(epsilon >= 0.0)) throw ConfigError(std::string(name) + ": epsilon must be >= 0");
  IterateOutput it = iterate(model, std::span(&cloud, 1), std::span(&label, 1), norm, epsilon, steps, step_size,
                             random_start, rng, hook);
  const int clean = it.clean_predictions.empty() ? model.predict(cloud) : it.clean_predictions.front();
  const double dist = norm == Norm::kL2 ? l2_distance(it.adv.front(), cloud) : linf_distance(it.adv.front(), cloud);
  check_bound(dist, epsilon, name);
  return finish(model, clean, std::move(it.adv.front()), dist, steps);
}

}  // namespace

std::string attack_name(AttackKind kind) {
  switch (kind) {
    case AttackKind::kSmaDrop: return "sma_drop";
    case AttackKind::kPgdL2: return "pgd_l2";
    case AttackKind::kPgdLinf: return "pgd_linf";
    case AttackKind::kFgsm: return "fgsm";
    case AttackKind::kBim: return "bim";
    case AttackKind::kAddK: return "add_k";
    case AttackKind::kTpgd: return "tpgd";
    case AttackKind::kSipgd: return "sipgd";
  }
  return "unknown";
}

AttackKind parse_attack(const std::string& name) {
  for (AttackKind k : kAllAttacks)
    if (attack_name(k) == name) return k;
  throw ConfigError("unknown attack '" + name + "'");
}

AttackConfig AttackConfig::defaults(AttackKind kind) {
  AttackConfig c;
  c.kind = kind;
  switch (kind) {
    case AttackKind::kFgsm:
      c.steps = 1;
      c.step_size = c.epsilon;
      break;
    case AttackKind::kBim:
      c.steps = 10;
      break;
    case AttackKind::kPgdL2:
      c.epsilon = 1.25;
      c.step_size = 0.125;
      break;
    case AttackKind::kSmaDrop:
      c.steps = 1;
      break;
    default:
      break;
  }
  return c;
}

void AttackConfig::validate() const {
  const std::string name = attack_name(kind);
  const bool norm_bounded = kind != AttackKind::kSmaDrop && kind != AttackKind::kAddK;
  if (norm_bounded && !(epsilon > 0.0)) throw ConfigError(name + ": epsilon must be > 0");
  if (steps < 1) throw ConfigError(name + ": steps must be >= 1");
  if ((kind == AttackKind::kSmaDrop || kind == AttackKind::kAddK) && k_points < 1) {
    throw ConfigError(name + ": k_points must be >= 1");
  }
  if (kind == AttackKind::kTpgd && surrogate_count < 2 && !allow_single_surrogate) {
    throw ConfigError("tpgd: need at least two surrogates");
  }
  if (!(step_size >= 0.0)) throw ConfigError(name + ": step_size must be >= 0");
}

double linf_distance(const PointCloud& a, const PointCloud& b) {
  if (a.xyz.size() != b.xyz.size()) throw ShapeError("linf_distance: clouds differ in size");
  double m = 0.0;
  for (std::size_t i = 0; i < a.xyz.size(); ++i) m = std::max(m, std::abs(a.xyz[i] - b.xyz[i]));
  return m;
}

double l2_distance(const PointCloud& a, const PointCloud& b) {
  if (a.xyz.size() != b.xyz.size()) throw ShapeError("l2_distance: clouds differ in size");
  double s = 0.0;
  for (std::size_t i = 0; i < a.xyz.size(); ++i) s += (a.xyz[i] - b.xyz[i]) * (a.xyz[i] - b.xyz[i]);
  return std::sqrt(s);
}

AdversarialResult fgsm(const Classifier& model, const PointCloud& cloud, int label, double epsilon) {
  if (!(epsilon >= 0.0)) throw ConfigError("fgsm: epsilon must be >= 0");
  const LossGradient g = model.loss_gradient(cloud, label);
  const int clean = argmax(g.logits);
  if (std::all_of(g.grad.begin(), g.grad.end(), [](double v) { return v == 0.0; })) {
    AdversarialResult r;
    r.adv_cloud = cloud;
    r.clean_prediction = r.adv_prediction = clean;
    r.iterations_used = 1;
    return r;
  }
  PointCloud adv = cloud;
  for (std::size_t i = 0; i < adv.xyz.size(); ++i) adv.xyz[i] = cloud.xyz[i] + epsilon * sign(g.grad[i]);
  const double dist = linf_distance(adv, cloud);
  check_bound(dist, epsilon, "fgsm");
  return finish(model, clean, std::move(adv), dist, 1);
}

AdversarialResult bim(const Classifier& model, const PointCloud& cloud, int label, double epsilon, int steps,
                      double step_size) {
  Rng unused(0);
  return single_iterate(model, cloud, label, Norm::kLinf, epsilon, steps, step_size, false, unused, {}, "bim");
}

AdversarialResult pgd(const Classifier& model, const PointCloud& cloud, int label, Norm norm, double epsilon,
                      int steps, double step_size, bool random_start, Rng& rng) {
  return single_iterate(model, cloud, label, norm, epsilon, steps, step_size, random_start, rng, {}, "pgd");
}

std::vector<PointCloud> pgd_batch(const Classifier& model, std::span<const PointCloud> clouds,
                                  std::span<const int> labels, Norm norm, double epsilon, int steps,
                                  double step_size, bool random_start, Rng& rng) {
  auto out = iterate(model, clouds, labels, norm, epsilon, steps, step_size, random_start, rng, {});
  for (std::size_t s = 0; s < clouds.size(); ++s) {
    check_bound(norm == Norm::kL2 ? l2_distance(out.adv[s], clouds[s]) : linf_distance(out.adv[s], clouds[s]),
                epsilon, "pgd_batch");
  }
  return std::move(out.adv);
}

std::vector<double> sma_saliency(const Classifier& model, const PointCloud& cloud, int label) {
  const LossGradient g = model.loss_gradient(cloud, label);
  const Vec3 c = centroid(cloud);
  std::vector<double> s(cloud.size());
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    double dot = 0.0;
    for (int d = 0; d < 3; ++d) dot += g.grad[3 * i + d] * (cloud.xyz[3 * i + d] - c[d]);
    s[i] = -dot;
  }
  return s;
}

AdversarialResult sma_drop(const Classifier& model, const PointCloud& cloud, int label, std::size_t k_points) {
  const std::size_t n = cloud.size();
  if (k_points == 0) {
    const int pred = model.predict(cloud);
    return AdversarialResult{cloud, false, 0.0, 0, pred, pred};
  }
  if (n <= k_points) {
    throw ConfigError("sma_drop: cloud has " + std::to_string(n) + " points, cannot drop " + std::to_string(k_points));
  }
  const int clean = model.predict(cloud);
  const std::vector<double> s = sma_saliency(model, cloud, label);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return s[a] > s[b]; });
  std::vector<bool> drop(n, false);
  for (std::size_t j = 0; j < k_points; ++j) drop[order[j]] = true;
  PointCloud adv;
  adv.label = cloud.label;
  for (std::size_t i = 0; i < n; ++i)
    if (!drop[i]) adv.xyz.insert(adv.xyz.end(), cloud.xyz.begin() + 3 * i, cloud.xyz.begin() + 3 * i + 3);
  return finish(model, clean, std::move(adv), static_cast<double>(k_points), 1);
}

AdversarialResult add_k(const Classifier& model, const PointCloud& cloud, int label, std::size_t k_points, int steps,
                        double step_size, double init_sigma, double init_radius, Rng& rng) {
  const std::size_t n = cloud.size();
  if (n == 0) throw ConfigError("add_k: empty cloud");
  if (steps < 0) throw ConfigError("add_k: steps must be >= 0");
  const int clean = model.predict(cloud);
  PointCloud adv = cloud;
  std::uniform_int_distribution<std::size_t> pick(0, n - 1);
  std::normal_distribution<double> noise(0.0, init_sigma);
  for (std::size_t j = 0; j < k_points; ++j) {
    const std::size_t src = pick(rng);
    for (int d = 0; d < 3; ++d) {
      const double jitter = init_sigma > 0.0 ? std::clamp(noise(rng), -init_radius, init_radius) : 0.0;
      adv.xyz.push_back(cloud.xyz[3 * src + d] + jitter);
    }
  }
  for (int t = 0; t < steps; ++t) {
    const LossGradient g = model.loss_gradient(adv, label);
    for (std::size_t i = 3 * n; i < adv.xyz.size(); ++i) adv.xyz[i] += step_size * sign(g.grad[i]);
  }
  return finish(model, clean, std::move(adv), static_cast<double>(k_points), steps);
}

std::vector<double> surrogate_gradient_mean(std::span<const Classifier> surrogates, const PointCloud& cloud,
                                            int label) {
  if (surrogates.empty()) throw ConfigError("tpgd: no surrogates");
  std::vector<double> mean(cloud.xyz.size(), 0.0);
  for (const auto& s : surrogates) {
    const LossGradient g = s.loss_gradient(cloud, label);
    for (std::size_t i = 0; i < mean.size(); ++i) mean[i] += g.grad[i];
  }
  for (double& v : mean) v /= static_cast<double>(surrogates.size());
  return mean;
}

AdversarialResult tpgd(std::span<const Classifier> surrogates, const Classifier& target, const PointCloud& cloud,
                       int label, double epsilon, int steps, double step_size, double momentum,
                       bool allow_single_surrogate) {
  if (surrogates.size() < 2 && !allow_single_surrogate) throw ConfigError("tpgd: need at least two surrogates");
  if (surrogates.empty()) throw ConfigError("tpgd: no surrogates");
  const int clean = target.predict(cloud);
  PointCloud adv = cloud;
  std::vector<double> velocity(cloud.xyz.size(), 0.0);
  for (int t = 0; t < steps; ++t) {
    const std::vector<double> g = surrogate_gradient_mean(surrogates, adv, label);
    double l1 = 0.0;
    for (double v : g) l1 += std::abs(v);
    for (std::size_t i = 0; i < g.size(); ++i) velocity[i] = momentum * velocity[i] + (l1 > 0.0 ? g[i] / l1 : 0.0);
    ascend_and_project(adv, cloud, velocity, Norm::kLinf, epsilon, step_size);
  }
  const double dist = linf_distance(adv, cloud);
  check_bound(dist, epsilon, "tpgd");
  return finish(target, clean, std::move(adv), dist, steps);
}

double shape_penalty(const PointCloud& clean, const KnnTable& neighbors, const PointCloud& adv) {
  double total = 0.0;
  for (std::size_t i = 0; i < neighbors.n; ++i) {
    for (std::size_t m = 0; m < neighbors.k; ++m) {
      const std::size_t j = neighbors.neighbor(i, m);
      const double d = std::sqrt(squared_distance(adv[i], adv[j])) - std::sqrt(squared_distance(clean[i], clean[j]));
      total += d * d;
    }
  }
  return total;
}

double neighbor_distortion(const PointCloud& clean, const KnnTable& neighbors, const PointCloud& adv) {
  double total = 0.0;
  for (std::size_t i = 0; i < neighbors.n; ++i) {
    for (std::size_t m = 0; m < neighbors.k; ++m) {
      const std::size_t j = neighbors.neighbor(i, m);
      total += std::abs(std::sqrt(squared_distance(adv[i], adv[j])) - std::sqrt(squared_distance(clean[i], clean[j])));
    }
  }
  return total / static_cast<double>(neighbors.n * neighbors.k);
}

AdversarialResult sipgd(const Classifier& model, const PointCloud& cloud, int label, double epsilon, int steps,
                        double step_size, double si_weight, std::size_t si_neighbors, bool random_start, Rng& rng) {
  GradientHook hook;
  KnnTable nbrs;
  if (si_weight != 0.0) {
    nbrs = knn_search(cloud, si_neighbors);
    hook = [&nbrs, si_weight](const PointCloud& x, std::vector<double>& grad) {
      // grad <- grad - w * dP/dx
      for (std::size_t i = 0; i < nbrs.n; ++i) {
        for (std::size_t m = 0; m < nbrs.k; ++m) {
          const std::size_t j = nbrs.neighbor(i, m);
          const double dist = std::sqrt(squared_distance(x[i], x[j]));
          if (!(dist > 0.0)) continue;
          const double coeff = si_weight * 2.0 * (dist - std::sqrt(nbrs.sq_distance(i, m))) / dist;
          for (int d = 0; d < 3; ++d) {
            const double diff = coeff * (x.xyz[3 * i + d] - x.xyz[3 * j + d]);
            grad[3 * i + d] -= diff;
            grad[3 * j + d] += diff;
          }
        }
      }
    };
  }
  return single_iterate(model, cloud, label, Norm::kLinf, epsilon, steps, step_size, random_start, rng, hook,
                        "sipgd");
}

AdversarialResult run_attack(const AttackConfig& cfg, const Classifier& target, std::span<const Classifier> surrogates,
                             const PointCloud& cloud, int label) {
  cfg.validate();
  Rng rng(cfg.seed);
  switch (cfg.kind) {
    case AttackKind::kFgsm: return fgsm(target, cloud, label, cfg.epsilon);
    case AttackKind::kBim: return bim(target, cloud, label, cfg.epsilon, cfg.steps, cfg.step_size);
    case AttackKind::kPgdL2:
      return pgd(target, cloud, label, Norm::kL2, cfg.epsilon, cfg.steps, cfg.step_size, cfg.random_start, rng);
    case AttackKind::kPgdLinf:
      return pgd(target, cloud, label, Norm::kLinf, cfg.epsilon, cfg.steps, cfg.step_size, cfg.random_start, rng);
    case AttackKind::kSmaDrop: return sma_drop(target, cloud, label, cfg.k_points);
    case AttackKind::kAddK:
      return add_k(target, cloud, label, cfg.k_points, cfg.steps, cfg.step_size, cfg.add_init_sigma,
                   cfg.add_init_radius, rng);
    case AttackKind::kTpgd:
      return tpgd(surrogates.first(std::min(surrogates.size(), cfg.surrogate_count)), target, cloud, label,
                  cfg.epsilon, cfg.steps, cfg.step_size, cfg.momentum, cfg.allow_single_surrogate);
    case AttackKind::kSipgd:
      return sipgd(target, cloud, label, cfg.epsilon, cfg.steps, cfg.step_size, cfg.si_weight, cfg.si_neighbors,
                   cfg.random_start, rng);
  }
  throw ConfigError("unknown attack kind");
}

}  // namespace mapr
