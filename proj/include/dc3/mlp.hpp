#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "dc3/tape.hpp"

namespace dc3 {

// Fully connected network, two hidden layers of `hidden` units each:
// linear -> batch norm -> ReLU -> dropout, twice, then a linear head.
struct MlpParams {
  int input_dim = 0;
  int output_dim = 0;
  int hidden = 200;
  double dropout_rate = 0.2;

  Matrix w1, b1, gamma1, beta1;
  Matrix w2, b2, gamma2, beta2;
  Matrix w3, b3;
  Matrix run_mean1, run_var1, run_mean2, run_var2;  // not trained

  // Trainable tensors in a fixed order (shared by Adam and checkpoints).
  std::vector<std::pair<std::string, Matrix*>> trainable();
  // All tensors, including running statistics.
  std::vector<std::pair<std::string, Matrix*>> all_tensors();
};

// Weights uniform in (-1/sqrt(fan_in), +1/sqrt(fan_in)), biases zero,
// batch-norm scale 1 / shift 0. Deterministic in seed.
MlpParams init_mlp(std::uint64_t seed, int input_dim, int output_dim,
                   int hidden = 200, double dropout_rate = 0.2);

// Tracked parameter leaves on a tape.
struct MlpLeaves {
  Var w1, b1, gamma1, beta1;
  Var w2, b2, gamma2, beta2;
  Var w3, b3;
  std::vector<Var> ordered;  // same order as MlpParams::trainable()
};
MlpLeaves mlp_leaves(Tape& tape, MlpParams& params);

// Recorded forward pass. Train mode uses batch statistics and dropout masks
// (requires batch >= 2 and an rng); eval mode uses running statistics and is
// deterministic. Mutates running stats in train mode.
Var mlp_forward(Tape& tape, MlpParams& params, const MlpLeaves& leaves,
                const Matrix& X, bool train, Rng* rng);

// Plain eval-mode forward with no tape (fast path for evaluation).
Matrix mlp_eval(const MlpParams& params, const Matrix& X);

// Checkpoint round-trip (text header + little-endian float64 payload).
void save_checkpoint(const std::string& path, MlpParams& params);
MlpParams load_checkpoint(const std::string& path);

// Adaptive-moment optimizer state over the trainable tensor list.
struct AdamState {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  long step = 0;
  std::vector<Matrix> m;
  std::vector<Matrix> v;
};

AdamState adam_init(const std::vector<std::pair<std::string, Matrix*>>& params,
                    double lr);

// Bias-corrected update in place. Rejects the step on non-finite gradients.
void adam_step(const std::vector<std::pair<std::string, Matrix*>>& params,
               const std::vector<Matrix>& grads, AdamState& state);

}  // namespace dc3
