// guard-lab command line: run, sweep-tau, verify-theory, gen-data, attribute.
// Exit codes: 0 success / all checks pass, 2 usage or config error, 3 numeric failure.

#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "guard_lab/config.hpp"
#include "guard_lab/experiment.hpp"

namespace {

constexpr int kOk = 0;
constexpr int kUsage = 2;
constexpr int kNumeric = 3;

struct Common {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::string format;
};

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("--config", c.config, "experiment config file (YAML)")->required();
  sub->add_option("--out", c.out, "output directory (overrides outputs.dir)");
  sub->add_option("--seed", c.seed, "run a single root seed instead of the configured list");
  sub->add_option("--format", c.format, "write only this report format")->check(CLI::IsMember({"csv", "json"}));
}

guard_lab::ExperimentConfig load(const Common& c, std::string& out_dir) {
  guard_lab::ExperimentConfig cfg = guard_lab::load_config(c.config);
  if (c.seed) cfg.seeds = {*c.seed};
  if (!c.format.empty()) cfg.formats = {c.format};
  out_dir = c.out.empty() ? cfg.out_dir : c.out;
  return cfg;
}

std::vector<double> parse_taus(const std::string& s) {
  std::vector<double> out;
  std::size_t pos = 0;
  while (pos <= s.size() && !s.empty()) {
    const std::size_t comma = s.find(',', pos);
    const std::string tok = s.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos);
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(tok, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != tok.size() || tok.empty()) throw guard_lab::ConfigError("--taus", 0, "bad tau '" + tok + "'");
    out.push_back(v);
    if (comma == std::string::npos) break;
    pos = comma + 1;
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"guard-lab: retention-aware unlearning laboratory"};
  app.require_subcommand(1);

  Common run_c, sweep_c, verify_c, gen_c, attr_c;
  std::string taus_arg;
  auto* run = app.add_subcommand("run", "generate, finetune, attribute, unlearn and report");
  add_common(run, run_c);
  auto* sweep = app.add_subcommand("sweep-tau", "GUARD vs baseline across a temperature grid");
  add_common(sweep, sweep_c);
  sweep->add_option("--taus", taus_arg, "comma-separated temperatures (default: sweep.taus)");
  auto* verify = app.add_subcommand("verify-theory", "run the invariant battery, PASS/FAIL per check");
  add_common(verify, verify_c);
  auto* gen = app.add_subcommand("gen-data", "write the synthetic datasets");
  add_common(gen, gen_c);
  auto* attr = app.add_subcommand("attribute", "write attribution reports");
  add_common(attr, attr_c);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    std::string out;
    if (run->parsed()) {
      const auto cfg = load(run_c, out);
      const auto s = guard_lab::cmd_run(cfg, out);
      std::cout << s.summary_text;
      return kOk;
    }
    if (sweep->parsed()) {
      const auto cfg = load(sweep_c, out);
      std::vector<double> taus;
      if (sweep->count("--taus")) {
        taus = parse_taus(taus_arg);
        if (taus.empty()) throw guard_lab::ConfigError("--taus", 0, "empty tau list");
      } else if (cfg.sweep_taus.empty()) {
        throw guard_lab::ConfigError(sweep_c.config, 0, "no temperatures: pass --taus or set sweep.taus");
      }
      const auto s = guard_lab::cmd_sweep_tau(cfg, taus, out);
      std::cout << s.summary_text;
      return kOk;
    }
    if (verify->parsed()) {
      const auto cfg = load(verify_c, out);
      const auto checks = guard_lab::cmd_verify_theory(cfg, out);
      bool ok = true;
      for (const auto& c : checks) {
        std::cout << '[' << guard_lab::to_string(c.status) << "] " << c.name << "  " << c.detail << '\n';
        ok = ok && c.status != guard_lab::CheckStatus::fail;
      }
      return ok ? kOk : 1;
    }
    if (gen->parsed()) {
      const auto cfg = load(gen_c, out);
      guard_lab::cmd_gen_data(cfg, out);
      std::cout << "datasets written to " << out << '\n';
      return kOk;
    }
    if (attr->parsed()) {
      const auto cfg = load(attr_c, out);
      const auto reps = guard_lab::cmd_attribute(cfg, out);
      std::cout << reps.size() << " attribution reports written to " << out << '\n';
      return kOk;
    }
  } catch (const guard_lab::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kUsage;
  } catch (const guard_lab::ContractError& e) {
    std::cerr << "invalid input: " << e.what() << '\n';
    return kUsage;
  } catch (const guard_lab::NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << '\n';
    return kNumeric;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kNumeric;
  }
  return kUsage;
}
