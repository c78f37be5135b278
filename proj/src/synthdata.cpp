#include "guard_lab/synthdata.hpp"

#include <cmath>
#include <random>

#include "guard_lab/errors.hpp"
#include "guard_lab/rng.hpp"

namespace guard_lab {

namespace {

Vector unit_gaussian(std::mt19937_64& eng, std::size_t d) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Vector v(d);
  double nn = 0.0;
  do {
    for (double& x : v) x = normal(eng);
    nn = norm2(v);
  } while (nn == 0.0);
  for (double& x : v) x /= nn;
  return v;
}

}  // namespace

void GenSpec::validate() const {
  if (dim < 1) throw ContractError("gen: d must be >= 1");
  if (num_classes < 2) throw ContractError("gen: C must be >= 2 (one real class plus neutral)");
  if (!(forget_frac > 0.0 && forget_frac < 1.0)) throw ContractError("gen: forget_frac must be in (0,1)");
  if (!(overlap >= 0.0 && overlap <= 1.0)) throw ContractError("gen: overlap must be in [0,1]");
  if (!(noise_sigma >= 0.0) || !std::isfinite(noise_sigma)) throw ContractError("gen: noise_sigma must be >= 0");
  if (!(test_frac >= 0.0 && test_frac < 1.0)) throw ContractError("gen: test_frac must be in [0,1)");
  if (static_cast<double>(n) * forget_frac < 1.0) throw ContractError("gen: n * forget_frac must be >= 1");
  const auto nf = static_cast<std::size_t>(std::llround(forget_frac * static_cast<double>(n)));
  const auto nt = static_cast<std::size_t>(std::llround(test_frac * static_cast<double>(n)));
  if (nf + nt >= n) throw ContractError("gen: no samples left for the retain set");
}

std::pair<Dataset, Dataset> generate(const GenSpec& gen) {
  gen.validate();
  auto eng = substream(gen.seed, "data");
  const std::size_t k = gen.num_classes - 1;
  std::vector<Vector> mu, nu;
  for (std::size_t c = 0; c < k; ++c) mu.push_back(unit_gaussian(eng, gen.dim));
  for (std::size_t c = 0; c < k; ++c) nu.push_back(unit_gaussian(eng, gen.dim));

  const auto nf = static_cast<std::size_t>(std::llround(gen.forget_frac * static_cast<double>(gen.n)));
  const auto nt = static_cast<std::size_t>(std::llround(gen.test_frac * static_cast<double>(gen.n)));
  const std::size_t nr = gen.n - nf - nt;

  std::uniform_int_distribution<std::size_t> pick(0, k - 1);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);
  auto draw = [&](const Vector& center) {
    Vector x(center);
    for (double& v : x) v += gen.noise_sigma * normal(eng);
    return x;
  };

  Dataset train, test;
  train.dim = test.dim = gen.dim;
  train.num_classes = test.num_classes = gen.num_classes;
  for (std::size_t i = 0; i < nr; ++i) {
    const std::size_t c = pick(eng);
    train.retain_idx.push_back(train.size());
    train.inputs.push_back(draw(mu[c]));
    train.labels.push_back(static_cast<int>(c));
  }
  for (std::size_t i = 0; i < nf; ++i) {
    const std::size_t c = pick(eng);
    const bool entangled = unif(eng) < gen.overlap;
    train.forget_idx.push_back(train.size());
    train.inputs.push_back(draw(entangled ? mu[c] : nu[c]));
    train.labels.push_back(static_cast<int>(c));
  }
  // Held-out split mirrors the training mixture of retain and forget draws.
  for (std::size_t i = 0; i < nt; ++i) {
    const std::size_t c = pick(eng);
    const bool forget_like = unif(eng) < gen.forget_frac;
    const bool entangled = unif(eng) < gen.overlap;
    test.retain_idx.push_back(test.size());
    test.inputs.push_back(draw(!forget_like || entangled ? mu[c] : nu[c]));
    test.labels.push_back(static_cast<int>(c));
  }
  train.require_split();
  test.validate();
  return {std::move(train), std::move(test)};
}

double measured_entanglement(const ModelSpec& spec, const Vector& theta0, const Dataset& data) {
  data.require_split();
  return dot(avg_grad(spec, theta0, data, data.forget_idx), avg_grad(spec, theta0, data, data.retain_idx));
}

}  // namespace guard_lab
