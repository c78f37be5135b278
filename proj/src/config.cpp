#include "guard_lab/config.hpp"

#include <yaml-cpp/yaml.h>

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

namespace guard_lab {

namespace {

class Reader {
 public:
  explicit Reader(std::string name) : name_(std::move(name)) {}

  [[noreturn]] void fail(const YAML::Node& n, const std::string& msg) const {
    throw ConfigError(name_, n.Mark().is_null() ? 0 : n.Mark().line + 1, msg);
  }

  void require_map(const YAML::Node& n, const std::string& section) const {
    if (!n.IsMap()) fail(n, "section '" + section + "' must be a mapping");
  }

  void check_keys(const YAML::Node& n, const std::string& section, const std::set<std::string>& allowed) const {
    require_map(n, section);
    for (const auto& kv : n) {
      const std::string key = kv.first.as<std::string>();
      if (!allowed.count(key)) fail(kv.first, "unknown key '" + key + "' in section '" + section + "'");
    }
  }

  template <typename T>
  T get(const YAML::Node& n, const std::string& what) const {
    try {
      return n.as<T>();
    } catch (const YAML::Exception&) {
      fail(n, "invalid value for '" + what + "'");
    }
  }

  template <typename T>
  void opt(const YAML::Node& parent, const char* key, T& out) const {
    if (const YAML::Node n = parent[key]) out = get<T>(n, key);
  }

  double positive(const YAML::Node& n, const std::string& what) const {
    const double v = get<double>(n, what);
    if (!(v > 0.0) || !std::isfinite(v)) fail(n, "'" + what + "' must be a positive number");
    return v;
  }

  std::vector<double> number_list(const YAML::Node& n, const std::string& what) const {
    std::vector<double> out;
    if (n.IsSequence()) {
      for (const auto& e : n) out.push_back(get<double>(e, what));
    } else {
      out.push_back(get<double>(n, what));
    }
    return out;
  }

  const std::string& name() const { return name_; }

 private:
  std::string name_;
};

std::vector<UnlearnEntry> parse_unlearn_entry(const Reader& rd, const YAML::Node& n) {
  rd.check_keys(n, "unlearn",
                {"method", "guard", "eta", "tau", "tau_auto_ratio", "epochs", "neutral_label", "retain_subsample",
                 "recompute_scores"});
  UnlearnEntry e;
  if (!n["method"]) rd.fail(n, "unlearn entry needs 'method'");
  try {
    e.cfg.method = method_from_string(rd.get<std::string>(n["method"], "method"));
  } catch (const ContractError& err) {
    rd.fail(n["method"], err.what());
  }
  if (n["eta"]) e.cfg.eta = rd.positive(n["eta"], "eta");
  if (n["tau"]) e.cfg.tau = rd.positive(n["tau"], "tau");
  if (n["tau_auto_ratio"]) e.tau_auto_ratio = rd.positive(n["tau_auto_ratio"], "tau_auto_ratio");
  if (n["epochs"]) {
    e.cfg.epochs = rd.get<int>(n["epochs"], "epochs");
    if (e.cfg.epochs < 1) rd.fail(n["epochs"], "'epochs' must be >= 1");
  }
  rd.opt(n, "neutral_label", e.cfg.neutral_label);
  if (n["retain_subsample"]) {
    const long long s = rd.get<long long>(n["retain_subsample"], "retain_subsample");
    if (s < 1) rd.fail(n["retain_subsample"], "'retain_subsample' must be >= 1");
    e.cfg.retain_subsample = static_cast<std::size_t>(s);
  }
  rd.opt(n, "recompute_scores", e.cfg.recompute_scores);

  std::vector<bool> guards{false};
  if (const YAML::Node g = n["guard"]) {
    const std::string s = rd.get<std::string>(g, "guard");
    if (s == "both") guards = {false, true};
    else if (s == "true") guards = {true};
    else if (s == "false") guards = {false};
    else rd.fail(g, "'guard' must be true, false or both");
  }
  std::vector<UnlearnEntry> out;
  for (bool g : guards) {
    UnlearnEntry copy = e;
    copy.cfg.use_guard = g;
    out.push_back(copy);
  }
  return out;
}

}  // namespace

ExperimentConfig parse_config(const std::string& text, const std::string& name) {
  const Reader rd(name);
  YAML::Node root;
  try {
    root = YAML::Load(text);
  } catch (const YAML::ParserException& e) {
    throw ConfigError(name, e.mark.line + 1, e.msg);
  }
  if (!root || root.IsNull()) throw ConfigError(name, 0, "empty configuration");
  rd.check_keys(root, "<root>", {"seed", "seeds", "gen", "model", "finetune", "unlearn", "attribution", "sweep", "outputs"});

  ExperimentConfig cfg;
  cfg.source_text = text;
  if (root["seed"] && root["seeds"]) rd.fail(root["seeds"], "give either 'seed' or 'seeds', not both");
  if (const YAML::Node s = root["seed"]) cfg.seeds = {rd.get<std::uint64_t>(s, "seed")};
  if (const YAML::Node s = root["seeds"]) {
    if (!s.IsSequence() || s.size() == 0) rd.fail(s, "'seeds' must be a non-empty list");
    cfg.seeds.clear();
    for (const auto& e : s) cfg.seeds.push_back(rd.get<std::uint64_t>(e, "seeds"));
  }

  if (!root["gen"]) rd.fail(root, "missing section 'gen'");
  const YAML::Node gen = root["gen"];
  rd.check_keys(gen, "gen", {"n", "d", "classes", "forget_frac", "overlap", "noise_sigma", "test_frac"});
  rd.opt(gen, "n", cfg.gen.n);
  rd.opt(gen, "d", cfg.gen.dim);
  rd.opt(gen, "classes", cfg.gen.num_classes);
  rd.opt(gen, "overlap", cfg.gen.overlap);
  rd.opt(gen, "noise_sigma", cfg.gen.noise_sigma);
  rd.opt(gen, "test_frac", cfg.gen.test_frac);
  cfg.forget_fracs = gen["forget_frac"] ? rd.number_list(gen["forget_frac"], "forget_frac") : std::vector<double>{0.1};
  for (double f : cfg.forget_fracs) {
    GenSpec g = cfg.gen;
    g.forget_frac = f;
    try {
      g.validate();
    } catch (const ContractError& e) {
      rd.fail(gen, e.what());
    }
  }
  cfg.gen.forget_frac = cfg.forget_fracs.front();

  cfg.model.input_dim = cfg.gen.dim;
  cfg.model.num_classes = cfg.gen.num_classes;
  if (const YAML::Node m = root["model"]) {
    rd.check_keys(m, "model", {"kind", "hidden", "l2"});
    if (m["kind"]) {
      try {
        cfg.model.kind = model_kind_from_string(rd.get<std::string>(m["kind"], "kind"));
      } catch (const ContractError& e) {
        rd.fail(m["kind"], e.what());
      }
    }
    rd.opt(m, "hidden", cfg.model.hidden);
    rd.opt(m, "l2", cfg.model.l2);
    try {
      cfg.model.validate();
    } catch (const ContractError& e) {
      rd.fail(m, e.what());
    }
  }

  if (const YAML::Node f = root["finetune"]) {
    rd.check_keys(f, "finetune", {"lr", "epochs", "newton_polish"});
    rd.opt(f, "newton_polish", cfg.finetune_polish);
    if (f["lr"]) cfg.finetune_lr = rd.positive(f["lr"], "lr");
    if (f["epochs"]) {
      cfg.finetune_epochs = rd.get<int>(f["epochs"], "epochs");
      if (cfg.finetune_epochs < 1) rd.fail(f["epochs"], "'epochs' must be >= 1");
    }
  }

  const YAML::Node un = root["unlearn"];
  if (!un || !un.IsSequence() || un.size() == 0) rd.fail(un ? un : root, "'unlearn' must be a non-empty list");
  for (const auto& e : un) {
    for (auto& entry : parse_unlearn_entry(rd, e)) {
      if (entry.cfg.neutral_label >= static_cast<int>(cfg.model.num_classes))
        rd.fail(e, "'neutral_label' must be below classes");
      cfg.unlearn.push_back(entry);
    }
  }

  if (cfg.finetune_polish && cfg.model.kind != ModelKind::logistic)
    rd.fail(root["finetune"], "newton_polish requires model kind logistic");

  if (const YAML::Node a = root["attribution"]) {
    rd.check_keys(a, "attribution", {"compute_if", "compute_loo", "compute_bounds", "loo_lr", "loo_epochs"});
    rd.opt(a, "compute_if", cfg.attribution.compute_if);
    rd.opt(a, "compute_loo", cfg.attribution.compute_loo);
    rd.opt(a, "compute_bounds", cfg.attribution.compute_bounds);
    if (a["loo_lr"]) cfg.attribution.loo_lr = rd.positive(a["loo_lr"], "loo_lr");
    if (a["loo_epochs"]) {
      cfg.attribution.loo_epochs = rd.get<int>(a["loo_epochs"], "loo_epochs");
      if (cfg.attribution.loo_epochs < 1) rd.fail(a["loo_epochs"], "'loo_epochs' must be >= 1");
    }
  }

  if (const YAML::Node s = root["sweep"]) {
    rd.check_keys(s, "sweep", {"taus"});
    if (s["taus"]) {
      for (const auto& t : s["taus"]) cfg.sweep_taus.push_back(rd.positive(t, "taus"));
    }
  }

  if (const YAML::Node o = root["outputs"]) {
    rd.check_keys(o, "outputs", {"dir", "formats"});
    rd.opt(o, "dir", cfg.out_dir);
    if (const YAML::Node f = o["formats"]) {
      cfg.formats.clear();
      for (const auto& e : f) {
        const std::string s = rd.get<std::string>(e, "formats");
        if (s != "csv" && s != "json") rd.fail(e, "format must be csv or json");
        cfg.formats.push_back(s);
      }
    }
  }
  return cfg;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(path, 0, "cannot open config file");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), path);
}

}  // namespace guard_lab
