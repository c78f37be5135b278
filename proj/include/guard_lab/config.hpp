#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "guard_lab/errors.hpp"
#include "guard_lab/model.hpp"
#include "guard_lab/synthdata.hpp"
#include "guard_lab/unlearning.hpp"

namespace guard_lab {

class ConfigError : public Error {
 public:
  ConfigError(const std::string& where, int line, const std::string& msg)
      : Error(where + (line > 0 ? ":" + std::to_string(line) : std::string()) + ": " + msg), line_(line) {}
  int line() const { return line_; }

 private:
  int line_;
};

struct UnlearnEntry {
  UnlearnConfig cfg;
  // When set, tau = sigma_kappa / ratio measured at theta0.
  std::optional<double> tau_auto_ratio;
};

struct AttributionSettings {
  bool compute_if = false;
  bool compute_loo = false;
  bool compute_bounds = false;
  double loo_lr = 0.5;
  int loo_epochs = 50;
};

struct ExperimentConfig {
  std::vector<std::uint64_t> seeds{0};
  GenSpec gen;  // gen.seed is overwritten per run
  std::vector<double> forget_fracs;
  ModelSpec model;
  double finetune_lr = 0.5;
  int finetune_epochs = 100;
  // Newton refinement to the exact optimum after GD (logistic only).
  bool finetune_polish = false;
  std::vector<UnlearnEntry> unlearn;
  AttributionSettings attribution;
  std::vector<double> sweep_taus;
  std::string out_dir = "out";
  std::vector<std::string> formats{"csv", "json"};
  std::string source_text;  // verbatim config, copied into run directories
};

ExperimentConfig parse_config(const std::string& text, const std::string& name = "<config>");
ExperimentConfig load_config(const std::string& path);

}  // namespace guard_lab
