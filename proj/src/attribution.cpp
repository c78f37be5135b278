#include "guard_lab/attribution.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <sstream>

#include "guard_lab/errors.hpp"
#include "guard_lab/format.hpp"
#include "guard_lab/rng.hpp"

namespace guard_lab {

namespace {

FinetuneResult fit_optimum(const ModelSpec& spec, const Dataset& data, const IndexList& subset,
                           double lr, int epochs, std::uint64_t seed) {
  FinetuneResult r = finetune(spec, data, subset, lr, epochs, seed);
  if (spec.kind == ModelKind::logistic) return newton_polish(spec, data, subset, r.theta);
  return r;
}

IndexList without(const IndexList& all, std::size_t j) {
  IndexList out;
  out.reserve(all.size());
  for (std::size_t i : all)
    if (i != j) out.push_back(i);
  return out;
}

Vector ranks(const Vector& v) {
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  Vector r(v.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) r[order[k]] = avg;
    i = j + 1;
  }
  return r;
}

std::string opt_cell(const std::optional<double>& v) { return v ? format_double(*v) : std::string(); }

}  // namespace

double guard_score(const Vector& j_avg_r, const Vector& j_i) { return dot(j_avg_r, j_i); }

double influence_score(const SymMatrix& h, const Vector& j_avg, const Vector& j_j) {
  if (j_avg.size() != h.order() || j_j.size() != h.order())
    throw DimensionError("influence_score: dimension mismatch");
  return dot(j_avg, solve_spd(h, j_j));
}

IfBounds if_bounds(const EigenDecomp& inv, const Vector& j_avg, const Vector& j_j) {
  const std::size_t n = inv.eigenvalues.size();
  if (n == 0 || j_avg.size() != n || j_j.size() != n) throw DimensionError("if_bounds: dimension mismatch");
  IfBounds b;
  for (std::size_t k = 0; k < n; ++k) {
    const Vector& v = inv.eigenvectors[k];
    const double q = dot(v, j_avg) * dot(v, j_j) * dot(v, v);
    if (q >= 0.0) b.q_plus += q;
    else b.q_minus += q;
  }
  const double denom = b.q_plus + b.q_minus;
  if (std::abs(denom) < 1e-12) throw DegenerateError("if_bounds: |q+ + q-| < 1e-12, bound is vacuous");
  const double lmax = inv.eigenvalues.front();
  const double lmin = inv.eigenvalues.back();
  b.lambda_u = (lmax * b.q_plus + lmin * b.q_minus) / denom;
  b.lambda_l = (lmin * b.q_plus + lmax * b.q_minus) / denom;
  b.a = guard_score(j_avg, j_j);
  b.lo = b.lambda_l * b.a;
  b.hi = b.lambda_u * b.a;
  return b;
}

LooOracle loo_prepare(const ModelSpec& spec, const Dataset& data, double lr, int epochs,
                      std::uint64_t seed) {
  data.require_split();
  const FinetuneResult full = fit_optimum(spec, data, data.all_indices(), lr, epochs, seed);
  return {full.theta, full.final_loss, empirical_loss(spec, full.theta, data, data.retain_idx)};
}

std::pair<double, double> loo_pair(const ModelSpec& spec, const Dataset& data, const LooOracle& full,
                                   std::size_t j, double lr, int epochs, std::uint64_t seed) {
  if (j >= data.size()) throw ContractError("loo: index out of range");
  const IndexList rest = without(data.all_indices(), j);
  const FinetuneResult minus = fit_optimum(spec, data, rest, lr, epochs, seed);
  const double delta = full.loss_full - minus.final_loss;
  const double shift = empirical_loss(spec, minus.theta, data, data.retain_idx) - full.retain_loss_full;
  return {delta, shift};
}

double loo_delta(const ModelSpec& spec, const Dataset& data, std::size_t j, double lr, int epochs,
                 std::uint64_t seed) {
  return loo_pair(spec, data, loo_prepare(spec, data, lr, epochs, seed), j, lr, epochs, seed).first;
}

double loo_retain_shift(const ModelSpec& spec, const Dataset& data, std::size_t j, double lr,
                        int epochs, std::uint64_t seed) {
  return loo_pair(spec, data, loo_prepare(spec, data, lr, epochs, seed), j, lr, epochs, seed).second;
}

double c_star(const std::vector<std::pair<double, double>>& c_and_a) {
  double num = 0.0, den = 0.0;
  for (const auto& [c, a] : c_and_a) {
    num += c * a * a;
    den += a * a;
  }
  if (den == 0.0) throw DegenerateError("c_star: all scores are zero");
  return num / den;
}

double spearman(const Vector& a, const Vector& b) {
  if (a.size() != b.size() || a.size() < 2) throw DimensionError("spearman: need two equal-length samples");
  const Vector ra = ranks(a), rb = ranks(b);
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(ra.begin(), ra.end(), 0.0) / n;
  const double mb = std::accumulate(rb.begin(), rb.end(), 0.0) / n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < ra.size(); ++i) {
    sab += (ra[i] - ma) * (rb[i] - mb);
    saa += (ra[i] - ma) * (ra[i] - ma);
    sbb += (rb[i] - mb) * (rb[i] - mb);
  }
  if (saa == 0.0 || sbb == 0.0) throw DegenerateError("spearman: constant input");
  return sab / std::sqrt(saa * sbb);
}

std::uint64_t theta_hash(const Vector& theta) {
  std::string bytes(theta.size() * sizeof(double), '\0');
  if (!theta.empty()) std::memcpy(bytes.data(), theta.data(), bytes.size());
  return fnv1a(bytes);
}

AttributionReport attribute(const ModelSpec& spec, const Dataset& data, const Vector& theta0,
                            const AttributionOptions& opt) {
  data.require_split();
  AttributionReport rep;
  rep.damping = spec.l2;
  rep.theta_hash = theta_hash(theta0);
  const Vector j_avg = avg_grad(spec, theta0, data, data.retain_idx);

  std::optional<SymMatrix> h;
  std::optional<EigenDecomp> inv;
  if (opt.compute_if || opt.compute_bounds) h = hessian(spec, theta0, data, data.all_indices());
  if (opt.compute_bounds) inv = inverse_eigen(*h);
  std::optional<LooOracle> full;
  if (opt.compute_loo) full = loo_prepare(spec, data, opt.lr, opt.epochs, opt.seed);

  std::vector<std::pair<double, double>> cs;
  for (std::size_t i : data.forget_idx) {
    AttributionRow row;
    row.index = i;
    const Vector g = sample_grad(spec, theta0, data.inputs[i], data.labels[i]);
    row.guard = guard_score(j_avg, g);
    if (opt.compute_if) {
      row.if_score = influence_score(*h, j_avg, g);
      if (row.guard != 0.0) cs.emplace_back(*row.if_score / row.guard, row.guard);
    }
    if (opt.compute_bounds) {
      try {
        const IfBounds b = if_bounds(*inv, j_avg, g);
        row.lo = b.lo;
        row.hi = b.hi;
        if (row.if_score) {
          const double slack = 1e-8 * std::abs(*row.if_score);
          row.bound_violated = *row.if_score < b.lo - slack || *row.if_score > b.hi + slack;
        }
      } catch (const DegenerateError&) {
        row.bound_skipped = true;
      }
    }
    if (opt.compute_loo) {
      const auto [delta, shift] = loo_pair(spec, data, *full, i, opt.lr, opt.epochs, opt.seed);
      row.loo = delta;
      row.loo_retain = shift;
    }
    rep.rows.push_back(row);
  }
  if (!cs.empty()) {
    try {
      rep.c_star = c_star(cs);
    } catch (const DegenerateError&) {
    }
  }
  return rep;
}

nlohmann::json to_json(const AttributionReport& r) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& row : r.rows) {
    nlohmann::json j{{"index", row.index}, {"guard", row.guard}};
    if (row.if_score) j["if"] = *row.if_score;
    if (row.lo) j["bound_lo"] = *row.lo;
    if (row.hi) j["bound_hi"] = *row.hi;
    if (row.loo) j["loo_delta"] = *row.loo;
    if (row.loo_retain) j["loo_retain_shift"] = *row.loo_retain;
    j["bound_skipped"] = row.bound_skipped;
    j["bound_violated"] = row.bound_violated;
    rows.push_back(std::move(j));
  }
  nlohmann::json out{{"rows", rows}, {"damping", r.damping}, {"theta_hash", r.theta_hash}};
  if (r.c_star) out["c_star"] = *r.c_star;
  return out;
}

std::string to_csv(const AttributionReport& r) {
  std::ostringstream os;
  os << "index,guard,if,lo,hi,loo,loo_retain,flags\n";
  for (const auto& row : r.rows) {
    std::string flags;
    if (row.bound_skipped) flags = "bound_skipped";
    if (row.bound_violated) flags = "bound_violated";
    os << row.index << ',' << format_double(row.guard) << ',' << opt_cell(row.if_score) << ','
       << opt_cell(row.lo) << ',' << opt_cell(row.hi) << ',' << opt_cell(row.loo) << ','
       << opt_cell(row.loo_retain) << ',' << flags << '\n';
  }
  return os.str();
}

}  // namespace guard_lab
