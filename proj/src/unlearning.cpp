#include "guard_lab/unlearning.hpp"

#include <algorithm>
#include <cmath>

#include "guard_lab/errors.hpp"
#include "guard_lab/rng.hpp"

namespace guard_lab {

namespace {

void check_grads(const Vector& theta, const std::vector<Vector>& grads) {
  if (grads.empty()) throw ContractError("unlearning step: no forget gradients");
  for (const Vector& g : grads)
    if (g.size() != theta.size()) throw DimensionError("unlearning step: gradient length mismatch");
}

// (1/n_f) sum w_i g_i, or the plain mean when w is null.
Vector weighted_mean(const std::vector<Vector>& grads, const GuardWeights* w) {
  if (w && w->weights.size() != grads.size())
    throw ContractError("weights not aligned with forget indices");
  Vector s(grads.front().size(), 0.0);
  for (std::size_t i = 0; i < grads.size(); ++i) axpy(w ? w->weights[i] : 1.0, grads[i], s);
  for (double& v : s) v /= static_cast<double>(grads.size());
  return s;
}

// Mean over the subset of grad KL(p_ref(x) || p_theta(x)).
Vector kl_grad(const ModelSpec& spec, const Vector& theta, const Vector& ref, const Dataset& data,
               const IndexList& subset) {
  Vector s(theta.size(), 0.0);
  for (std::size_t i : subset) {
    const Vector& x = data.inputs[i];
    const Vector p = softmax(logits(spec, theta, x));
    const Vector p0 = softmax(logits(spec, ref, x));
    axpy(1.0, logit_vjp(spec, theta, x, sub(p, p0)), s);
  }
  for (double& v : s) v /= static_cast<double>(subset.size());
  return s;
}

}  // namespace

std::string to_string(Method m) {
  switch (m) {
    case Method::GA: return "GA";
    case Method::GD: return "GD";
    case Method::KM: return "KM";
    case Method::PO: return "PO";
  }
  return "?";
}

Method method_from_string(const std::string& s) {
  if (s == "GA") return Method::GA;
  if (s == "GD") return Method::GD;
  if (s == "KM") return Method::KM;
  if (s == "PO") return Method::PO;
  throw ContractError("unknown unlearning method '" + s + "' (expected GA, GD, KM or PO)");
}

GuardWeights guard_weights(const Vector& scores, double tau) {
  if (scores.empty()) throw ContractError("guard_weights: need at least one score");
  if (!(tau > 0.0) || !std::isfinite(tau)) throw ContractError("guard_weights: tau must be positive");
  require_finite(scores, "guard_weights scores");
  const std::size_t n = scores.size();
  Vector z(n);
  for (std::size_t i = 0; i < n; ++i) z[i] = -scores[i] / tau;
  const double m = *std::max_element(z.begin(), z.end());
  double tot = 0.0;
  for (double& v : z) tot += (v = std::exp(v - m));
  GuardWeights w{Vector(n), tau, scores};
  for (std::size_t i = 0; i < n; ++i) w.weights[i] = static_cast<double>(n) * z[i] / tot;
  return w;
}

Vector ga_step(const Vector& theta, double eta, const std::vector<Vector>& forget_grads) {
  check_grads(theta, forget_grads);
  Vector out = theta;
  axpy(eta, weighted_mean(forget_grads, nullptr), out);
  return out;
}

Vector guard_ga_step(const Vector& theta, double eta, const std::vector<Vector>& forget_grads,
                     const GuardWeights& weights) {
  check_grads(theta, forget_grads);
  Vector out = theta;
  axpy(eta, weighted_mean(forget_grads, &weights), out);
  return out;
}

void UnlearnConfig::validate(const ModelSpec& spec) const {
  if (!(eta > 0.0) || !std::isfinite(eta)) throw ContractError("unlearn: eta must be positive");
  if (!(tau > 0.0) || !std::isfinite(tau)) throw ContractError("unlearn: tau must be positive");
  if (epochs < 1) throw ContractError("unlearn: epochs must be >= 1");
  if (retain_subsample && *retain_subsample == 0) throw ContractError("unlearn: retain_subsample must be >= 1");
  if (neutral_label >= static_cast<int>(spec.num_classes) || neutral_label < -1)
    throw ContractError("unlearn: neutral_label out of range");
}

Vector composite_objective_grad(const ModelSpec& spec, Method method, const Vector& theta,
                                const Dataset& data, const GuardWeights* weights,
                                const ObjectiveContext& ctx) {
  if (method == Method::GA) throw ContractError("composite_objective_grad: GA has no composite objective");
  if (ctx.retain_subset.empty()) throw ContractError("composite_objective_grad: empty retain subset");
  if (method == Method::PO) {
    const int neutral = ctx.neutral_label < 0 ? static_cast<int>(spec.num_classes) - 1 : ctx.neutral_label;
    std::vector<Vector> idk;
    idk.reserve(data.n_forget());
    for (std::size_t i : data.forget_idx) idk.push_back(sample_grad(spec, theta, data.inputs[i], neutral));
    Vector g = avg_grad(spec, theta, data, ctx.retain_subset);
    axpy(1.0, weighted_mean(idk, weights), g);
    return g;
  }
  Vector g = scaled(weighted_mean(sample_grads(spec, theta, data, data.forget_idx), weights), -1.0);
  if (method == Method::GD) {
    axpy(1.0, avg_grad(spec, theta, data, ctx.retain_subset), g);
  } else {
    if (!ctx.reference_theta) throw ContractError("composite_objective_grad: KM needs a frozen reference model");
    axpy(1.0, kl_grad(spec, theta, *ctx.reference_theta, data, ctx.retain_subset), g);
  }
  return g;
}

Vector forget_scores(const ModelSpec& spec, const Vector& theta, const Dataset& data) {
  const Vector j_avg = avg_grad(spec, theta, data, data.retain_idx);
  Vector a;
  a.reserve(data.n_forget());
  for (std::size_t i : data.forget_idx) a.push_back(dot(j_avg, sample_grad(spec, theta, data.inputs[i], data.labels[i])));
  return a;
}

IndexList retain_subsample(const Dataset& data, std::size_t size, std::uint64_t seed) {
  if (size >= data.n_retain()) return data.retain_idx;
  IndexList pool = data.retain_idx;
  auto eng = substream(seed, "subsample");
  // partial Fisher-Yates
  for (std::size_t i = 0; i < size; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, pool.size() - 1);
    std::swap(pool[i], pool[pick(eng)]);
  }
  pool.resize(size);
  std::sort(pool.begin(), pool.end());
  return pool;
}

double UnlearnResult::max_step_norm() const {
  double m = 0.0;
  for (const auto& s : steps) m = std::max(m, s.step_norm);
  return m;
}

UnlearnResult run_unlearning(const ModelSpec& spec, const Dataset& data, const Vector& theta0,
                             const UnlearnConfig& config) {
  data.require_split();
  config.validate(spec);
  if (theta0.size() != spec.param_count()) throw DimensionError("run_unlearning: theta0 length mismatch");

  UnlearnResult res;
  res.method = config.method;
  res.use_guard = config.use_guard;
  res.scores = forget_scores(spec, theta0, data);
  if (config.use_guard) res.weights = guard_weights(res.scores, config.tau);

  ObjectiveContext ctx;
  ctx.retain_subset = config.retain_subsample ? retain_subsample(data, *config.retain_subsample, config.seed)
                                              : data.retain_idx;
  ctx.neutral_label = config.neutral_label;
  ctx.reference_theta = &theta0;

  Vector theta = theta0;
  for (int e = 0; e < config.epochs; ++e) {
    if (config.use_guard && config.recompute_scores && e > 0)
      res.weights = guard_weights(forget_scores(spec, theta, data), config.tau);
    const GuardWeights* w = config.use_guard ? &*res.weights : nullptr;
    Vector next;
    if (config.method == Method::GA) {
      const auto grads = sample_grads(spec, theta, data, data.forget_idx);
      next = w ? guard_ga_step(theta, config.eta, grads, *w) : ga_step(theta, config.eta, grads);
    } else {
      next = theta;
      axpy(-config.eta, composite_objective_grad(spec, config.method, theta, data, w, ctx), next);
    }
    StepDiagnostics d;
    d.step_norm = norm2(sub(next, theta));
    theta = std::move(next);
    d.forget_loss = empirical_loss(spec, theta, data, data.forget_idx);
    d.retain_loss = empirical_loss(spec, theta, data, data.retain_idx);
    if (!all_finite(theta) || !std::isfinite(d.forget_loss) || !std::isfinite(d.retain_loss))
      throw TrainingError("unlearning diverged at epoch " + std::to_string(e + 1), e + 1);
    res.steps.push_back(d);
  }
  res.theta_after = std::move(theta);
  return res;
}

nlohmann::json to_json(const UnlearnResult& r) {
  nlohmann::json steps = nlohmann::json::array();
  for (const auto& s : r.steps)
    steps.push_back({{"forget_loss", s.forget_loss}, {"retain_loss", s.retain_loss}, {"step_norm", s.step_norm}});
  nlohmann::json j{{"method", to_string(r.method)}, {"guard", r.use_guard}, {"theta", r.theta_after},
                   {"steps", steps}};
  if (r.weights) {
    j["tau"] = r.weights->tau;
    j["weights"] = r.weights->weights;
  }
  j["scores"] = r.scores;
  return j;
}

}  // namespace guard_lab
