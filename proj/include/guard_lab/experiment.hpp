#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "guard_lab/attribution.hpp"
#include "guard_lab/config.hpp"
#include "guard_lab/theory.hpp"

namespace guard_lab {

// Numeric failure tagged with the pipeline stage that raised it.
class StageError : public NumericError {
 public:
  StageError(const std::string& stage, const std::string& msg)
      : NumericError("stage '" + stage + "': " + msg), stage_(stage) {}
  const std::string& stage() const { return stage_; }

 private:
  std::string stage_;
};

struct Instance {
  std::uint64_t seed = 0;
  double forget_frac = 0.0;
  Dataset train;
  Dataset test;
  ModelSpec spec;
  FinetuneResult ft;
};

Instance build_instance(const ExperimentConfig& cfg, std::uint64_t seed, double forget_frac);

// sqrt of the population variance of kappa_j at theta0.
double sigma_kappa(const Instance& inst);
double resolve_tau(const Instance& inst, const UnlearnEntry& entry);

struct RunRow {
  std::string method;
  bool guard = false;
  double split = 0.0;
  double tau = 0.0;
  double eta = 0.0;
  std::uint64_t seed = 0;
  int epochs = 1;
  double lf0 = 0.0, lr0 = 0.0;
  double lf = 0.0, lr = 0.0, acc_f = 0.0, acc_r = 0.0, acc_test = 0.0;
  std::optional<double> rho_loss, rho_acc;
  double pred_retain_gap = 0.0, obs_retain_gap = 0.0;
  double pred_forget_gap = 0.0, obs_forget_gap = 0.0;
  double pred_sr_gap = 0.0, obs_sr_gap = 0.0;
  bool theory_valid = false;
  double delta_theta = 0.0;
};

std::string rows_csv(const std::vector<RunRow>& rows);
nlohmann::json to_json(const RunRow& r);

// Runs every unlearn entry on one instance. A GUARD row is paired with its
// baseline (same method, eta, epochs) for the gap columns.
std::vector<RunRow> run_instance(const ExperimentConfig& cfg, const Instance& inst,
                                 std::vector<nlohmann::json>* run_docs = nullptr);

struct RunSummary {
  std::vector<RunRow> rows;
  std::string summary_text;
};

// Full pipeline over seeds x splits. Writes into out_dir when non-empty.
RunSummary cmd_run(const ExperimentConfig& cfg, const std::string& out_dir);

struct SweepRow {
  std::uint64_t seed = 0;
  double split = 0.0;
  std::string method;
  double eta = 0.0;
  double tau = 0.0;
  double retain_gap = 0.0;  // L_r^base - L_r^guard
  double forget_gap = 0.0;  // L_f^guard - L_f^base
  double max_param_diff = 0.0;  // max |theta_guard - theta_base|
  std::optional<double> rho_base, rho_guard;
};

struct SweepSummary {
  std::vector<SweepRow> rows;
  // Per (seed, split): adjacent tau pairs with non-increasing retain gap.
  std::vector<std::pair<int, int>> monotone_pairs;
  std::string summary_text;
};

// Retain gap is counted non-increasing when gap[k+1] <= gap[k] + band with
// band = 1e-9 * max |gap| over the instance.
SweepSummary cmd_sweep_tau(const ExperimentConfig& cfg, std::vector<double> taus, const std::string& out_dir);

enum class CheckStatus { pass, fail, skipped };
std::string to_string(CheckStatus s);

struct CheckResult {
  std::string name;
  CheckStatus status = CheckStatus::skipped;
  std::string detail;
};

std::vector<CheckResult> verify_instance(const ExperimentConfig& cfg, const Instance& inst);
std::vector<CheckResult> cmd_verify_theory(const ExperimentConfig& cfg, const std::string& out_dir);

void cmd_gen_data(const ExperimentConfig& cfg, const std::string& out_dir);
std::vector<AttributionReport> cmd_attribute(const ExperimentConfig& cfg, const std::string& out_dir);

// Thread count from GUARD_LAB_THREADS, else hardware concurrency.
unsigned worker_count();
// Runs fn(0..n-1) on a bounded pool; rethrows the first failure by index.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace guard_lab
