#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "guard_lab/linalg.hpp"
#include "guard_lab/model.hpp"

namespace guard_lab {

double guard_score(const Vector& j_avg_r, const Vector& j_i);

// j_avg^T H^{-1} j_j, as printed (no leading minus).
double influence_score(const SymMatrix& h, const Vector& j_avg, const Vector& j_j);

struct IfBounds {
  double lo = 0.0;  // lambda_l * a
  double hi = 0.0;  // lambda_u * a
  double lambda_l = 0.0;
  double lambda_u = 0.0;
  double q_plus = 0.0;
  double q_minus = 0.0;
  double a = 0.0;  // guard score j_avg^T j_j
};

// `inv` must be the eigen-decomposition of H^{-1} (see inverse_eigen).
// Throws DegenerateError when |q+ + q-| < 1e-12.
IfBounds if_bounds(const EigenDecomp& inv, const Vector& j_avg, const Vector& j_j);

// Printed leave-one-out delta: min L_D - min L_{D \ j}, each optimum on its own
// mean objective. Training is finetune(lr, epochs, seed) followed by a Newton
// polish for the convex model.
double loo_delta(const ModelSpec& spec, const Dataset& data, std::size_t j, double lr, int epochs,
                 std::uint64_t seed);

// Retain-loss shift from retraining without j: L_{D_r}(theta_{-j}) - L_{D_r}(theta*).
double loo_retain_shift(const ModelSpec& spec, const Dataset& data, std::size_t j, double lr,
                        int epochs, std::uint64_t seed);

struct LooOracle {
  Vector theta_full;
  double loss_full = 0.0;
  double retain_loss_full = 0.0;
};
LooOracle loo_prepare(const ModelSpec& spec, const Dataset& data, double lr, int epochs,
                      std::uint64_t seed);
// Both LOO quantities for sample j, reusing the full-data optimum.
std::pair<double, double> loo_pair(const ModelSpec& spec, const Dataset& data, const LooOracle& full,
                                   std::size_t j, double lr, int epochs, std::uint64_t seed);

// sum C_j a_j^2 / sum a_j^2 over (C_j, a_j) pairs.
double c_star(const std::vector<std::pair<double, double>>& c_and_a);

double spearman(const Vector& a, const Vector& b);

struct AttributionRow {
  std::size_t index = 0;
  double guard = 0.0;
  std::optional<double> if_score;
  std::optional<double> lo, hi;
  std::optional<double> loo;
  std::optional<double> loo_retain;
  bool bound_skipped = false;
  bool bound_violated = false;
};

struct AttributionReport {
  std::vector<AttributionRow> rows;
  std::optional<double> c_star;
  double damping = 0.0;
  std::uint64_t theta_hash = 0;
};

struct AttributionOptions {
  bool compute_if = true;
  bool compute_bounds = true;
  bool compute_loo = false;
  // training protocol for the LOO oracle
  double lr = 0.5;
  int epochs = 50;
  std::uint64_t seed = 0;
};

AttributionReport attribute(const ModelSpec& spec, const Dataset& data, const Vector& theta0,
                            const AttributionOptions& opt);

std::uint64_t theta_hash(const Vector& theta);

nlohmann::json to_json(const AttributionReport& r);
std::string to_csv(const AttributionReport& r);

}  // namespace guard_lab
