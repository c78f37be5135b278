#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "guard_lab/linalg.hpp"

namespace guard_lab {

using IndexList = std::vector<std::size_t>;

struct Dataset {
  std::size_t dim = 0;
  std::size_t num_classes = 0;
  std::vector<Vector> inputs;
  std::vector<int> labels;
  IndexList forget_idx;  // sorted
  IndexList retain_idx;  // sorted

  std::size_t size() const { return inputs.size(); }
  std::size_t n_forget() const { return forget_idx.size(); }
  std::size_t n_retain() const { return retain_idx.size(); }
  IndexList all_indices() const;

  // Partition, label range, dimensions, finiteness.
  void validate() const;
  // validate() plus n_f >= 1 and n_r >= 1.
  void require_split() const;
};

// Line format: header "d,C,n"; then per sample "x_1,...,x_d,label,F|R".
void write_dataset(std::ostream& os, const Dataset& data);
Dataset read_dataset(std::istream& is);
std::string serialize_dataset(const Dataset& data);
std::uint64_t dataset_hash(const Dataset& data);

enum class ModelKind { logistic, mlp };

std::string to_string(ModelKind k);
ModelKind model_kind_from_string(const std::string& s);

struct ModelSpec {
  ModelKind kind = ModelKind::logistic;
  std::size_t input_dim = 1;
  std::size_t num_classes = 2;
  std::size_t hidden = 0;  // mlp only
  double l2 = 1e-3;

  std::size_t param_count() const;
  void validate() const;
};

Vector logits(const ModelSpec& spec, const Vector& theta, const Vector& x);
Vector softmax(const Vector& z);

double sample_loss(const ModelSpec& spec, const Vector& theta, const Vector& x, int y);
double empirical_loss(const ModelSpec& spec, const Vector& theta, const Dataset& data,
                      const IndexList& subset);
// Fraction of the subset whose argmax logit equals the label.
double accuracy(const ModelSpec& spec, const Vector& theta, const Dataset& data,
                const IndexList& subset);

// Vector-Jacobian product of the logits at x with dz; no l2 term.
Vector logit_vjp(const ModelSpec& spec, const Vector& theta, const Vector& x, const Vector& dz);

Vector sample_grad(const ModelSpec& spec, const Vector& theta, const Vector& x, int y);
std::vector<Vector> sample_grads(const ModelSpec& spec, const Vector& theta, const Dataset& data,
                                 const IndexList& subset);
Vector avg_grad(const ModelSpec& spec, const Vector& theta, const Dataset& data,
                const IndexList& subset);

// Sum over the subset of per-sample Hessians, including l2 * |subset| * I.
SymMatrix hessian(const ModelSpec& spec, const Vector& theta, const Dataset& data,
                  const IndexList& subset);

struct FinetuneResult {
  Vector theta;
  double final_loss = 0.0;
  double grad_norm = 0.0;
};

// Full-batch gradient descent from 0.01 * N(0, 1) drawn from the "init" substream.
FinetuneResult finetune(const ModelSpec& spec, const Dataset& data, const IndexList& subset,
                        double lr, int epochs, std::uint64_t seed);
FinetuneResult finetune(const ModelSpec& spec, const Dataset& data, double lr, int epochs,
                        std::uint64_t seed);

// Newton iterations on the mean objective until the gradient norm drops to tol.
// Logistic only (convex); throws TrainingError otherwise or on stall.
FinetuneResult newton_polish(const ModelSpec& spec, const Dataset& data, const IndexList& subset,
                             Vector theta, double tol = 1e-10, int max_iter = 100);

}  // namespace guard_lab
