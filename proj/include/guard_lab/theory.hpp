#pragma once

#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "guard_lab/model.hpp"
#include "guard_lab/unlearning.hpp"

namespace guard_lab {

struct AlignmentStats {
  double kappa = 0.0;     // <gbar_f, gbar_r>
  Vector kappa_j;         // <gbar_r, g_j>
  double sigma2 = 0.0;    // population variance of kappa_j
  double delta_kappa = 0.0;
};

AlignmentStats alignment_stats(const std::vector<Vector>& forget_grads, const Vector& retain_avg, double tau);

// (L_r_after - L_r_before) / (L_f_after - L_f_before)
double sacrifice_rate_loss(double lr_before, double lr_after, double lf_before, double lf_after);
// (eps_r0 - eps_r) / (eps_f0 - eps_f): degradation per unit of forget degradation.
double sacrifice_rate_metric(double eps_r0, double eps_r, double eps_f0, double eps_f);

struct PredictedGaps {
  double retain_gap = 0.0;  // eta sigma2 / ((1 - delta) tau)
  double forget_gap = 0.0;  // delta eta G
  double sr_gap = 0.0;      // (kappa^2 + sigma2) / (tau G)
  double kappa_prime = 0.0; // mean of w_j kappa_j with exact softmax weights
  double retain_gap_first_order = 0.0;  // eta (kappa - kappa')
};

// Throws AssumptionError when delta_kappa >= 1 and DegenerateError when G == 0.
PredictedGaps predicted_gaps(const AlignmentStats& stats, double eta, double tau, double gbar_f_norm2);

// mean(g)^T (theta_after - theta0)
double first_order_loss_change(const Vector& theta0, const Vector& theta_after,
                               const std::vector<Vector>& subset_grads);

// ||S - (tr S / p) I||_F / ||S||_F with S the second-moment matrix of the gradients.
double isotropy_diagnostic(const std::vector<Vector>& grads);

struct TheoryReport {
  double eta = 0.0;
  double tau = 0.0;
  double kappa = 0.0;
  Vector kappa_j;
  double sigma2_kappa = 0.0;
  double delta_kappa = 0.0;
  double delta_theta = 0.0;
  double gbar_f_norm2 = 0.0;
  double lr0 = 0.0, lf0 = 0.0;
  double lr_base = 0.0, lf_base = 0.0, lr_guard = 0.0, lf_guard = 0.0;
  double obs_retain_gap = 0.0;         // L_r^base - L_r^guard
  double obs_forget_gap_signed = 0.0;  // L_f^guard - L_f^base
  double obs_forget_gap = 0.0;         // absolute value
  std::optional<double> rho_base, rho_guard, obs_sr_gap;
  std::optional<PredictedGaps> predicted;
  bool kappa_positive = false;
  double max_kappa_j_over_tau = 0.0;
  double isotropy = 0.0;
};

// Alignment statistics at theta0 combined with an observed baseline/GUARD pair.
TheoryReport build_theory_report(const ModelSpec& spec, const Dataset& data, const Vector& theta0,
                                 const UnlearnResult& base, const UnlearnResult& guard, double eta,
                                 double tau);

// Runs one-epoch GA and GUARD-GA at (eta, tau) and reports.
TheoryReport theory_report_ga(const ModelSpec& spec, const Dataset& data, const Vector& theta0,
                              double eta, double tau);

nlohmann::json to_json(const TheoryReport& r);
std::string theory_csv_header();
std::string theory_csv_row(const TheoryReport& r);

}  // namespace guard_lab
