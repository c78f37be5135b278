#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "guard_lab/model.hpp"

namespace guard_lab {

enum class Method { GA, GD, KM, PO };

std::string to_string(Method m);
Method method_from_string(const std::string& s);

struct GuardWeights {
  Vector weights;  // aligned with the forget indices
  double tau = 0.0;
  Vector scores;
};

// n_f * softmax(-a / tau), max-subtracted.
GuardWeights guard_weights(const Vector& scores, double tau);

// theta + eta * mean(g_i)
Vector ga_step(const Vector& theta, double eta, const std::vector<Vector>& forget_grads);
// theta + (eta / n_f) * sum(w_i g_i)
Vector guard_ga_step(const Vector& theta, double eta, const std::vector<Vector>& forget_grads,
                     const GuardWeights& weights);

struct UnlearnConfig {
  Method method = Method::GA;
  bool use_guard = false;
  double eta = 1e-3;
  double tau = 0.03;
  int epochs = 1;
  int neutral_label = -1;  // -1 selects C-1
  std::optional<std::size_t> retain_subsample;
  std::uint64_t seed = 0;  // subsample stream
  bool recompute_scores = false;

  void validate(const ModelSpec& spec) const;
};

struct ObjectiveContext {
  IndexList retain_subset;
  int neutral_label = -1;
  const Vector* reference_theta = nullptr;  // frozen model for KM
};

// Gradient of the composite objective that the method minimizes by descent.
// The forget term is the w-weighted mean when `weights` is non-null.
Vector composite_objective_grad(const ModelSpec& spec, Method method, const Vector& theta,
                                const Dataset& data, const GuardWeights* weights,
                                const ObjectiveContext& ctx);

// a_i = J_avg^{D_r}(theta)^T J_i(theta) for every forget index, in order.
Vector forget_scores(const ModelSpec& spec, const Vector& theta, const Dataset& data);

struct StepDiagnostics {
  double forget_loss = 0.0;
  double retain_loss = 0.0;
  double step_norm = 0.0;
};

struct UnlearnResult {
  Vector theta_after;
  std::vector<StepDiagnostics> steps;
  Method method = Method::GA;
  bool use_guard = false;
  Vector scores;
  std::optional<GuardWeights> weights;
  double max_step_norm() const;
};

UnlearnResult run_unlearning(const ModelSpec& spec, const Dataset& data, const Vector& theta0,
                             const UnlearnConfig& config);

// Seeded subsample without replacement, sorted. size >= n_r returns all of retain.
IndexList retain_subsample(const Dataset& data, std::size_t size, std::uint64_t seed);

nlohmann::json to_json(const UnlearnResult& r);

}  // namespace guard_lab
