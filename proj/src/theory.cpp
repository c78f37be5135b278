#include "guard_lab/theory.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "guard_lab/errors.hpp"
#include "guard_lab/format.hpp"

namespace guard_lab {

namespace {

Vector mean_of(const std::vector<Vector>& grads) {
  Vector s(grads.front().size(), 0.0);
  for (const Vector& g : grads) axpy(1.0, g, s);
  for (double& v : s) v /= static_cast<double>(grads.size());
  return s;
}

double guarded_ratio(double num, double den, const char* what) {
  if (!(std::abs(den) > 1e-12)) throw DegenerateError(std::string(what) + ": denominator below 1e-12");
  return num / den;
}

}  // namespace

AlignmentStats alignment_stats(const std::vector<Vector>& forget_grads, const Vector& retain_avg, double tau) {
  if (forget_grads.empty()) throw ContractError("alignment_stats: need n_f >= 1");
  AlignmentStats s;
  s.kappa_j.reserve(forget_grads.size());
  long double sum = 0.0L, sum_sq = 0.0L;
  for (const Vector& g : forget_grads) {
    const double k = dot(retain_avg, g);
    s.kappa_j.push_back(k);
    sum += k;
    sum_sq += static_cast<long double>(k) * k;
  }
  const long double n = static_cast<long double>(forget_grads.size());
  const long double m = sum / n;
  s.sigma2 = std::max(0.0, static_cast<double>(sum_sq / n - m * m));
  s.kappa = dot(mean_of(forget_grads), retain_avg);
  s.delta_kappa = s.kappa / tau;
  return s;
}

double sacrifice_rate_loss(double lr_before, double lr_after, double lf_before, double lf_after) {
  return guarded_ratio(lr_after - lr_before, lf_after - lf_before, "sacrifice_rate_loss");
}

double sacrifice_rate_metric(double eps_r0, double eps_r, double eps_f0, double eps_f) {
  return guarded_ratio(eps_r0 - eps_r, eps_f0 - eps_f, "sacrifice_rate_metric");
}

PredictedGaps predicted_gaps(const AlignmentStats& stats, double eta, double tau, double gbar_f_norm2) {
  const double delta = stats.kappa / tau;
  if (!(delta < 1.0))
    throw AssumptionError("predicted_gaps: delta_kappa = " + format_double(delta) + " >= 1 violates the entanglement assumption");
  if (!(gbar_f_norm2 > 0.0)) throw DegenerateError("predicted_gaps: ||gbar_f||^2 is zero");
  PredictedGaps p;
  p.retain_gap = eta * stats.sigma2 / ((1.0 - delta) * tau);
  p.forget_gap = delta * eta * gbar_f_norm2;
  p.sr_gap = (stats.kappa * stats.kappa + stats.sigma2) / (tau * gbar_f_norm2);
  const GuardWeights w = guard_weights(stats.kappa_j, tau);
  double kp = 0.0;
  for (std::size_t j = 0; j < w.weights.size(); ++j) kp += w.weights[j] * stats.kappa_j[j];
  p.kappa_prime = kp / static_cast<double>(w.weights.size());
  p.retain_gap_first_order = eta * (stats.kappa - p.kappa_prime);
  return p;
}

double first_order_loss_change(const Vector& theta0, const Vector& theta_after,
                               const std::vector<Vector>& subset_grads) {
  if (subset_grads.empty()) throw ContractError("first_order_loss_change: no gradients");
  return dot(mean_of(subset_grads), sub(theta_after, theta0));
}

double isotropy_diagnostic(const std::vector<Vector>& grads) {
  if (grads.empty()) throw ContractError("isotropy_diagnostic: need n_f >= 1");
  const std::size_t p = grads.front().size();
  std::vector<double> s(p * p, 0.0);
  for (const Vector& g : grads)
    for (std::size_t i = 0; i < p; ++i)
      for (std::size_t j = i; j < p; ++j) s[i * p + j] += g[i] * g[j];
  const double n = static_cast<double>(grads.size());
  double trace = 0.0;
  for (std::size_t i = 0; i < p; ++i) trace += s[i * p + i] / n;
  const double lam = trace / static_cast<double>(p);
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < p; ++i) {
    for (std::size_t j = i; j < p; ++j) {
      const double v = s[i * p + j] / n;
      const double dv = v - (i == j ? lam : 0.0);
      const double mult = i == j ? 1.0 : 2.0;
      den += mult * v * v;
      num += mult * dv * dv;
    }
  }
  if (den == 0.0) return 0.0;
  return std::sqrt(num / den);
}

TheoryReport build_theory_report(const ModelSpec& spec, const Dataset& data, const Vector& theta0,
                                 const UnlearnResult& base, const UnlearnResult& guard, double eta,
                                 double tau) {
  data.require_split();
  TheoryReport r;
  r.eta = eta;
  r.tau = tau;
  const auto fg = sample_grads(spec, theta0, data, data.forget_idx);
  const Vector gr = avg_grad(spec, theta0, data, data.retain_idx);
  const AlignmentStats st = alignment_stats(fg, gr, tau);
  const Vector gf = mean_of(fg);
  r.kappa = st.kappa;
  r.kappa_j = st.kappa_j;
  r.sigma2_kappa = st.sigma2;
  r.delta_kappa = st.delta_kappa;
  r.gbar_f_norm2 = dot(gf, gf);
  r.delta_theta = std::max(norm2(sub(base.theta_after, theta0)), norm2(sub(guard.theta_after, theta0)));
  r.lr0 = empirical_loss(spec, theta0, data, data.retain_idx);
  r.lf0 = empirical_loss(spec, theta0, data, data.forget_idx);
  r.lr_base = empirical_loss(spec, base.theta_after, data, data.retain_idx);
  r.lf_base = empirical_loss(spec, base.theta_after, data, data.forget_idx);
  r.lr_guard = empirical_loss(spec, guard.theta_after, data, data.retain_idx);
  r.lf_guard = empirical_loss(spec, guard.theta_after, data, data.forget_idx);
  r.obs_retain_gap = r.lr_base - r.lr_guard;
  r.obs_forget_gap_signed = r.lf_guard - r.lf_base;
  r.obs_forget_gap = std::abs(r.obs_forget_gap_signed);
  try {
    r.rho_base = sacrifice_rate_loss(r.lr0, r.lr_base, r.lf0, r.lf_base);
    r.rho_guard = sacrifice_rate_loss(r.lr0, r.lr_guard, r.lf0, r.lf_guard);
    r.obs_sr_gap = *r.rho_base - *r.rho_guard;
  } catch (const DegenerateError&) {
  }
  try {
    r.predicted = predicted_gaps(st, eta, tau, r.gbar_f_norm2);
  } catch (const AssumptionError&) {
  } catch (const DegenerateError&) {
  }
  r.kappa_positive = r.kappa > 0.0;
  for (double k : st.kappa_j) r.max_kappa_j_over_tau = std::max(r.max_kappa_j_over_tau, k / tau);
  r.isotropy = isotropy_diagnostic(fg);
  return r;
}

TheoryReport theory_report_ga(const ModelSpec& spec, const Dataset& data, const Vector& theta0,
                              double eta, double tau) {
  UnlearnConfig cfg;
  cfg.method = Method::GA;
  cfg.eta = eta;
  cfg.tau = tau;
  const UnlearnResult base = run_unlearning(spec, data, theta0, cfg);
  cfg.use_guard = true;
  const UnlearnResult guard = run_unlearning(spec, data, theta0, cfg);
  return build_theory_report(spec, data, theta0, base, guard, eta, tau);
}

nlohmann::json to_json(const TheoryReport& r) {
  nlohmann::json j{{"eta", r.eta},
                   {"tau", r.tau},
                   {"kappa", r.kappa},
                   {"kappa_j", r.kappa_j},
                   {"sigma2_kappa", r.sigma2_kappa},
                   {"delta_kappa", r.delta_kappa},
                   {"delta_theta", r.delta_theta},
                   {"gbar_f_norm2", r.gbar_f_norm2},
                   {"observed",
                    {{"retain_gap", r.obs_retain_gap},
                     {"forget_gap", r.obs_forget_gap},
                     {"forget_gap_signed", r.obs_forget_gap_signed}}},
                   {"assumptions",
                    {{"kappa_positive", r.kappa_positive},
                     {"max_kappa_j_over_tau", r.max_kappa_j_over_tau},
                     {"isotropy", r.isotropy}}}};
  if (r.rho_base) j["observed"]["rho_base"] = *r.rho_base;
  if (r.rho_guard) j["observed"]["rho_guard"] = *r.rho_guard;
  if (r.obs_sr_gap) j["observed"]["sr_gap"] = *r.obs_sr_gap;
  if (r.predicted) {
    j["predicted"] = {{"retain_gap", r.predicted->retain_gap},
                      {"forget_gap", r.predicted->forget_gap},
                      {"sr_gap", r.predicted->sr_gap},
                      {"kappa_prime", r.predicted->kappa_prime},
                      {"retain_gap_first_order", r.predicted->retain_gap_first_order}};
  }
  return j;
}

std::string theory_csv_header() {
  return "eta,tau,kappa,sigma2_kappa,delta_kappa,delta_theta,gbar_f_norm2,obs_retain_gap,obs_forget_gap,"
         "obs_sr_gap,pred_retain_gap,pred_forget_gap,pred_sr_gap,isotropy,kappa_positive,prediction_valid";
}

std::string theory_csv_row(const TheoryReport& r) {
  std::ostringstream os;
  const auto f = [](double v) { return format_double(v); };
  os << f(r.eta) << ',' << f(r.tau) << ',' << f(r.kappa) << ',' << f(r.sigma2_kappa) << ','
     << f(r.delta_kappa) << ',' << f(r.delta_theta) << ',' << f(r.gbar_f_norm2) << ','
     << f(r.obs_retain_gap) << ',' << f(r.obs_forget_gap) << ',' << f(r.obs_sr_gap.value_or(0.0)) << ','
     << f(r.predicted ? r.predicted->retain_gap : 0.0) << ',' << f(r.predicted ? r.predicted->forget_gap : 0.0)
     << ',' << f(r.predicted ? r.predicted->sr_gap : 0.0) << ',' << f(r.isotropy) << ','
     << (r.kappa_positive ? 1 : 0) << ',' << (r.predicted ? 1 : 0);
  return os.str();
}

}  // namespace guard_lab
