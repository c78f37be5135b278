#include "guard_lab/model.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <istream>
#include <ostream>
#include <sstream>

#include "guard_lab/errors.hpp"
#include "guard_lab/format.hpp"
#include "guard_lab/rng.hpp"

namespace guard_lab {

namespace {

constexpr double kFdStep = 1e-5;

void check_sample(const ModelSpec& spec, const Vector& theta, const Vector& x, int y) {
  if (theta.size() != spec.param_count())
    throw ContractError("theta length " + std::to_string(theta.size()) + " != p " +
                        std::to_string(spec.param_count()));
  if (x.size() != spec.input_dim)
    throw ContractError("input length " + std::to_string(x.size()) + " != d " +
                        std::to_string(spec.input_dim));
  if (y < 0 || static_cast<std::size_t>(y) >= spec.num_classes)
    throw ContractError("label " + std::to_string(y) + " out of range");
}

void check_subset(const Dataset& data, const IndexList& subset, const char* op) {
  if (subset.empty()) throw ContractError(std::string(op) + ": empty subset");
  for (std::size_t i : subset)
    if (i >= data.size()) throw ContractError(std::string(op) + ": index out of range");
}

double log_sum_exp(const Vector& z) {
  const double m = *std::max_element(z.begin(), z.end());
  double s = 0.0;
  for (double v : z) s += std::exp(v - m);
  return m + std::log(s);
}

// MLP parameter offsets: W1 (h x d), b1 (h), W2 (C x h), b2 (C).
struct MlpLayout {
  std::size_t d, h, c, w1, b1, w2, b2;
  explicit MlpLayout(const ModelSpec& s)
      : d(s.input_dim), h(s.hidden), c(s.num_classes), w1(0), b1(h * d), w2(b1 + h),
        b2(w2 + c * h) {}
};

Vector mlp_hidden(const MlpLayout& L, const Vector& theta, const Vector& x) {
  Vector hid(L.h);
  for (std::size_t j = 0; j < L.h; ++j) {
    double a = theta[L.b1 + j];
    for (std::size_t k = 0; k < L.d; ++k) a += theta[L.w1 + j * L.d + k] * x[k];
    hid[j] = std::tanh(a);
  }
  return hid;
}

double parse_double(const std::string& tok, std::size_t line) {
  double v = 0.0;
  const char* first = tok.data();
  const char* last = tok.data() + tok.size();
  auto res = std::from_chars(first, last, v);
  if (res.ec != std::errc() || res.ptr != last)
    throw ContractError("dataset line " + std::to_string(line) + ": bad number '" + tok + "'");
  return v;
}

std::vector<std::string> split_commas(const std::string& s) {
  std::vector<std::string> out;
  std::string tok;
  std::istringstream in(s);
  while (std::getline(in, tok, ',')) out.push_back(tok);
  return out;
}

}  // namespace

IndexList Dataset::all_indices() const {
  IndexList idx(size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  return idx;
}

void Dataset::validate() const {
  if (dim == 0 || num_classes == 0) throw ContractError("dataset: d and C must be >= 1");
  if (labels.size() != inputs.size()) throw ContractError("dataset: labels/inputs size mismatch");
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    if (inputs[i].size() != dim) throw ContractError("dataset: sample " + std::to_string(i) + " has wrong dimension");
    require_finite(inputs[i], "dataset input");
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= num_classes)
      throw ContractError("dataset: label out of range at sample " + std::to_string(i));
  }
  std::vector<int> seen(size(), 0);
  for (const IndexList* list : {&forget_idx, &retain_idx}) {
    if (!std::is_sorted(list->begin(), list->end())) throw ContractError("dataset: index list not sorted");
    for (std::size_t i : *list) {
      if (i >= size()) throw ContractError("dataset: index out of range");
      if (seen[i]++) throw ContractError("dataset: forget and retain sets overlap");
    }
  }
  if (std::find(seen.begin(), seen.end(), 0) != seen.end())
    throw ContractError("dataset: forget and retain do not cover all samples");
}

void Dataset::require_split() const {
  validate();
  if (forget_idx.empty() || retain_idx.empty())
    throw ContractError("dataset: need n_f >= 1 and n_r >= 1");
}

void write_dataset(std::ostream& os, const Dataset& data) {
  data.validate();
  std::vector<char> tag(data.size(), 'R');
  for (std::size_t i : data.forget_idx) tag[i] = 'F';
  os << data.dim << ',' << data.num_classes << ',' << data.size() << '\n';
  for (std::size_t i = 0; i < data.size(); ++i) {
    for (double v : data.inputs[i]) os << format_double(v) << ',';
    os << data.labels[i] << ',' << tag[i] << '\n';
  }
}

Dataset read_dataset(std::istream& is) {
  std::string line;
  std::size_t lineno = 1;
  if (!std::getline(is, line)) throw ContractError("dataset: missing header");
  auto head = split_commas(line);
  if (head.size() != 3) throw ContractError("dataset line 1: header must be d,C,n");
  Dataset data;
  std::size_t n = 0;
  try {
    data.dim = std::stoul(head[0]);
    data.num_classes = std::stoul(head[1]);
    n = std::stoul(head[2]);
  } catch (const std::exception&) {
    throw ContractError("dataset line 1: header must be d,C,n");
  }
  for (std::size_t i = 0; i < n; ++i) {
    ++lineno;
    if (!std::getline(is, line)) throw ContractError("dataset: expected " + std::to_string(n) + " samples");
    auto tok = split_commas(line);
    if (tok.size() != data.dim + 2)
      throw ContractError("dataset line " + std::to_string(lineno) + ": wrong field count");
    Vector x(data.dim);
    for (std::size_t k = 0; k < data.dim; ++k) x[k] = parse_double(tok[k], lineno);
    data.inputs.push_back(std::move(x));
    data.labels.push_back(static_cast<int>(parse_double(tok[data.dim], lineno)));
    const std::string& t = tok[data.dim + 1];
    if (t == "F") data.forget_idx.push_back(i);
    else if (t == "R") data.retain_idx.push_back(i);
    else throw ContractError("dataset line " + std::to_string(lineno) + ": tag must be F or R");
  }
  data.validate();
  return data;
}

std::string serialize_dataset(const Dataset& data) {
  std::ostringstream os;
  write_dataset(os, data);
  return os.str();
}

std::uint64_t dataset_hash(const Dataset& data) { return fnv1a(serialize_dataset(data)); }

std::string to_string(ModelKind k) { return k == ModelKind::logistic ? "logistic" : "mlp"; }

ModelKind model_kind_from_string(const std::string& s) {
  if (s == "logistic" || s == "multinomial-logistic") return ModelKind::logistic;
  if (s == "mlp" || s == "mlp-1-hidden") return ModelKind::mlp;
  throw ContractError("unknown model kind '" + s + "'");
}

std::size_t ModelSpec::param_count() const {
  if (kind == ModelKind::logistic) return num_classes * input_dim;
  return hidden * input_dim + hidden + num_classes * hidden + num_classes;
}

void ModelSpec::validate() const {
  if (input_dim < 1 || num_classes < 1) throw ContractError("model: d and C must be >= 1");
  if (kind == ModelKind::mlp && hidden < 1) throw ContractError("model: mlp needs hidden >= 1");
  if (!(l2 >= 0.0) || !std::isfinite(l2)) throw ContractError("model: l2 must be finite and >= 0");
}

Vector logits(const ModelSpec& spec, const Vector& theta, const Vector& x) {
  const std::size_t d = spec.input_dim, c = spec.num_classes;
  Vector z(c, 0.0);
  if (spec.kind == ModelKind::logistic) {
    for (std::size_t r = 0; r < c; ++r) {
      double s = 0.0;
      for (std::size_t k = 0; k < d; ++k) s += theta[r * d + k] * x[k];
      z[r] = s;
    }
    return z;
  }
  const MlpLayout L(spec);
  const Vector hid = mlp_hidden(L, theta, x);
  for (std::size_t r = 0; r < c; ++r) {
    double s = theta[L.b2 + r];
    for (std::size_t j = 0; j < L.h; ++j) s += theta[L.w2 + r * L.h + j] * hid[j];
    z[r] = s;
  }
  return z;
}

Vector softmax(const Vector& z) {
  const double m = *std::max_element(z.begin(), z.end());
  Vector s(z.size());
  double tot = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) tot += (s[i] = std::exp(z[i] - m));
  for (double& v : s) v /= tot;
  return s;
}

double sample_loss(const ModelSpec& spec, const Vector& theta, const Vector& x, int y) {
  check_sample(spec, theta, x, y);
  const Vector z = logits(spec, theta, x);
  return log_sum_exp(z) - z[static_cast<std::size_t>(y)] + 0.5 * spec.l2 * dot(theta, theta);
}

double empirical_loss(const ModelSpec& spec, const Vector& theta, const Dataset& data,
                      const IndexList& subset) {
  check_subset(data, subset, "empirical_loss");
  double s = 0.0;
  for (std::size_t i : subset) s += sample_loss(spec, theta, data.inputs[i], data.labels[i]);
  return s / static_cast<double>(subset.size());
}

double accuracy(const ModelSpec& spec, const Vector& theta, const Dataset& data,
                const IndexList& subset) {
  check_subset(data, subset, "accuracy");
  std::size_t hit = 0;
  for (std::size_t i : subset) {
    const Vector z = logits(spec, theta, data.inputs[i]);
    auto best = std::max_element(z.begin(), z.end()) - z.begin();
    if (best == data.labels[i]) ++hit;
  }
  return static_cast<double>(hit) / static_cast<double>(subset.size());
}

Vector logit_vjp(const ModelSpec& spec, const Vector& theta, const Vector& x, const Vector& dz) {
  const std::size_t d = spec.input_dim, c = spec.num_classes;
  if (theta.size() != spec.param_count() || x.size() != d || dz.size() != c)
    throw ContractError("logit_vjp: dimension mismatch");
  Vector g(theta.size(), 0.0);
  if (spec.kind == ModelKind::logistic) {
    for (std::size_t a = 0; a < c; ++a)
      for (std::size_t k = 0; k < d; ++k) g[a * d + k] = dz[a] * x[k];
    return g;
  }
  const MlpLayout L(spec);
  const Vector hid = mlp_hidden(L, theta, x);
  for (std::size_t a = 0; a < c; ++a) {
    g[L.b2 + a] = dz[a];
    for (std::size_t j = 0; j < L.h; ++j) g[L.w2 + a * L.h + j] = dz[a] * hid[j];
  }
  for (std::size_t j = 0; j < L.h; ++j) {
    double back = 0.0;
    for (std::size_t a = 0; a < c; ++a) back += theta[L.w2 + a * L.h + j] * dz[a];
    const double da = back * (1.0 - hid[j] * hid[j]);
    g[L.b1 + j] = da;
    for (std::size_t k = 0; k < d; ++k) g[L.w1 + j * d + k] = da * x[k];
  }
  return g;
}

Vector sample_grad(const ModelSpec& spec, const Vector& theta, const Vector& x, int y) {
  check_sample(spec, theta, x, y);
  Vector r = softmax(logits(spec, theta, x));
  r[static_cast<std::size_t>(y)] -= 1.0;
  Vector g = logit_vjp(spec, theta, x, r);
  axpy(spec.l2, theta, g);
  return g;
}

std::vector<Vector> sample_grads(const ModelSpec& spec, const Vector& theta, const Dataset& data,
                                 const IndexList& subset) {
  std::vector<Vector> out;
  out.reserve(subset.size());
  for (std::size_t i : subset) out.push_back(sample_grad(spec, theta, data.inputs[i], data.labels[i]));
  return out;
}

Vector avg_grad(const ModelSpec& spec, const Vector& theta, const Dataset& data,
                const IndexList& subset) {
  check_subset(data, subset, "avg_grad");
  Vector s(spec.param_count(), 0.0);
  for (std::size_t i : subset) axpy(1.0, sample_grad(spec, theta, data.inputs[i], data.labels[i]), s);
  for (double& v : s) v /= static_cast<double>(subset.size());
  return s;
}

SymMatrix hessian(const ModelSpec& spec, const Vector& theta, const Dataset& data,
                  const IndexList& subset) {
  check_subset(data, subset, "hessian");
  const std::size_t p = spec.param_count(), d = spec.input_dim, c = spec.num_classes;
  SymMatrix H(p);
  if (spec.kind == ModelKind::logistic) {
    for (std::size_t i : subset) {
      const Vector& x = data.inputs[i];
      if (theta.size() != p || x.size() != d) throw ContractError("hessian: dimension mismatch");
      const Vector s = softmax(logits(spec, theta, x));
      for (std::size_t a = 0; a < c; ++a) {
        for (std::size_t b = a; b < c; ++b) {
          const double w = (a == b ? s[a] : 0.0) - s[a] * s[b];
          for (std::size_t k = 0; k < d; ++k) {
            for (std::size_t l = 0; l < d; ++l) {
              const std::size_t row = a * d + k, col = b * d + l;
              if (a == b && l < k) continue;
              H.add(row, col, w * x[k] * x[l]);
            }
          }
        }
      }
    }
    H.add_diagonal(spec.l2 * static_cast<double>(subset.size()));
    return H;
  }
  // MLP: central differences of the analytic summed gradient, symmetrized.
  std::vector<double> full(p * p, 0.0);
  Vector t = theta;
  for (std::size_t j = 0; j < p; ++j) {
    t[j] = theta[j] + kFdStep;
    Vector gp(p, 0.0);
    for (std::size_t i : subset) axpy(1.0, sample_grad(spec, t, data.inputs[i], data.labels[i]), gp);
    t[j] = theta[j] - kFdStep;
    Vector gm(p, 0.0);
    for (std::size_t i : subset) axpy(1.0, sample_grad(spec, t, data.inputs[i], data.labels[i]), gm);
    t[j] = theta[j];
    for (std::size_t r = 0; r < p; ++r) full[r * p + j] = (gp[r] - gm[r]) / (2.0 * kFdStep);
  }
  for (std::size_t r = 0; r < p; ++r)
    for (std::size_t j = r; j < p; ++j) H.set(r, j, 0.5 * (full[r * p + j] + full[j * p + r]));
  return H;
}

FinetuneResult finetune(const ModelSpec& spec, const Dataset& data, const IndexList& subset,
                        double lr, int epochs, std::uint64_t seed) {
  spec.validate();
  if (!(lr >= 0.0) || !std::isfinite(lr)) throw ContractError("finetune: lr must be >= 0");
  if (epochs < 1) throw ContractError("finetune: epochs must be >= 1");
  auto eng = substream(seed, "init");
  std::normal_distribution<double> normal(0.0, 1.0);
  FinetuneResult res;
  res.theta.resize(spec.param_count());
  for (double& v : res.theta) v = 0.01 * normal(eng);
  for (int e = 1; e <= epochs; ++e) {
    const Vector g = avg_grad(spec, res.theta, data, subset);
    axpy(-lr, g, res.theta);
    if (!all_finite(res.theta))
      throw TrainingError("finetune diverged at epoch " + std::to_string(e), e);
  }
  res.final_loss = empirical_loss(spec, res.theta, data, subset);
  if (!std::isfinite(res.final_loss))
    throw TrainingError("finetune diverged at epoch " + std::to_string(epochs), epochs);
  res.grad_norm = norm2(avg_grad(spec, res.theta, data, subset));
  return res;
}

FinetuneResult finetune(const ModelSpec& spec, const Dataset& data, double lr, int epochs,
                        std::uint64_t seed) {
  return finetune(spec, data, data.all_indices(), lr, epochs, seed);
}

FinetuneResult newton_polish(const ModelSpec& spec, const Dataset& data, const IndexList& subset,
                             Vector theta, double tol, int max_iter) {
  if (spec.kind != ModelKind::logistic)
    throw TrainingError("newton_polish: requires the convex logistic model", 0);
  const double n = static_cast<double>(subset.size());
  double loss = empirical_loss(spec, theta, data, subset);
  for (int it = 1; it <= max_iter; ++it) {
    const Vector g = avg_grad(spec, theta, data, subset);
    if (norm2(g) <= tol) return {theta, loss, norm2(g)};
    SymMatrix H = hessian(spec, theta, data, subset);
    H *= 1.0 / n;
    const Vector step = solve_spd(H, g);
    // Backtracking on the mean objective.
    double t = 1.0;
    Vector cand;
    double cand_loss = 0.0;
    for (int k = 0; k < 60; ++k, t *= 0.5) {
      cand = theta;
      axpy(-t, step, cand);
      cand_loss = empirical_loss(spec, cand, data, subset);
      if (cand_loss <= loss - 1e-4 * t * dot(g, step)) break;
      // Near the optimum the loss decrease drops below round-off; fall back to
      // the gradient norm for the full step.
      if (k == 0 && std::abs(cand_loss - loss) <= 1e-12 * (1.0 + std::abs(loss)) &&
          norm2(avg_grad(spec, cand, data, subset)) < norm2(g))
        break;
    }
    if (!std::isfinite(cand_loss)) throw TrainingError("newton_polish: non-finite loss", it);
    if (cand == theta) {
      // Step underflowed; accept only if already at round-off level.
      const double gn = norm2(g);
      if (gn <= 1e3 * tol) return {theta, loss, gn};
      throw TrainingError("newton_polish: stalled with gradient norm " + std::to_string(gn), it);
    }
    theta = std::move(cand);
    loss = cand_loss;
  }
  const double gn = norm2(avg_grad(spec, theta, data, subset));
  if (gn > tol) throw TrainingError("newton_polish: no convergence", max_iter);
  return {theta, loss, gn};
}

}  // namespace guard_lab
