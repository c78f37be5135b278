#pragma once

#include <cstdint>
#include <utility>

#include "guard_lab/model.hpp"

namespace guard_lab {

struct GenSpec {
  std::uint64_t seed = 0;
  std::size_t n = 1000;
  std::size_t dim = 2;
  std::size_t num_classes = 3;  // includes the reserved neutral class C-1
  double forget_frac = 0.1;
  double overlap = 0.5;
  double noise_sigma = 1.0;
  double test_frac = 0.0;

  void validate() const;
};

// Returns (train, held-out). Train carries the forget/retain split; every
// held-out sample is tagged retain. Class C-1 never receives samples.
//
// Each real class c has a retain cluster mean mu_c and a forget-only mean
// nu_c, both on the unit sphere. Retain samples are mu_c + sigma * N(0, I);
// a forget sample of class c uses mu_c with probability `overlap`, else nu_c.
std::pair<Dataset, Dataset> generate(const GenSpec& gen);

// kappa = <avg forget grad, avg retain grad> at theta0.
double measured_entanglement(const ModelSpec& spec, const Vector& theta0, const Dataset& data);

}  // namespace guard_lab
