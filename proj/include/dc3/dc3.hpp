#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dc3/family.hpp"
#include "dc3/mlp.hpp"

namespace dc3 {

// Method variants compared in the benchmark. The first five are ablations of
// the full pipeline; the last four are baselines.
enum class Variant {
  dc3,                      // complete + correct (train and test) + soft loss
  dc3_no_completion,        // full-space head, full-space correction
  dc3_no_corr_train,        // correction at test time only
  dc3_no_corr_train_test,   // no correction anywhere
  dc3_no_soft_loss,         // objective-only training loss
  nn_baseline,              // full-space head, soft loss, nothing else
  nn_corr_test,             // nn_baseline + full-space correction at test
  eq_nn,                    // supervised on solver partial labels, complete at test
  eq_nn_corr_test,          // eq_nn + partial correction at test
};

std::string variant_name(Variant v);
Variant variant_from_name(const std::string& name);

// Role predicates; train() and predict() branch only on these.
bool variant_full_head(Variant v);        // network emits all of y, not just z
bool variant_uses_completion(Variant v);  // equality completion in the pipeline
bool variant_corrects_train(Variant v);
bool variant_corrects_test(Variant v);
bool variant_needs_labels(Variant v);

struct Dc3Config {
  Variant variant = Variant::dc3;
  int epochs = 1000;
  int batch = 200;
  int hidden = 200;
  double dropout = 0.2;
  double lr = 1e-4;
  double lambda_g = 5.0;  // weight on ||relu(g)||^2
  double lambda_h = 5.0;  // weight on ||h||^2 (no-completion variants)
  CorrectionOpts corr_train;
  CorrectionOpts corr_test;
  std::uint64_t seed = 0;
  double max_drop_rate = 0.05;  // completion failures tolerated per batch
};

struct EpochStat {
  int epoch = 0;
  double loss = 0.0;
};

struct TrainResult {
  MlpParams params;
  std::vector<EpochStat> history;
};

// Mini-batch training, deterministic in cfg.seed. Batches whose completion
// drop rate exceeds cfg.max_drop_rate, or whose gradients go non-finite,
// raise TrainingError.
TrainResult train(const ProblemFamily& family, const InstanceSet& data,
                  const Dc3Config& cfg);

// Full test-time pipeline: eval-mode forward, decode, completion and
// correction as the variant dictates.
Matrix predict(const ProblemFamily& family, const MlpParams& params,
               const Dc3Config& cfg, const Matrix& X);

struct EvalMetrics {
  int rows = 0;
  double obj_mean = 0.0;
  double eq_max = 0.0;    // max |h| over all entries
  double eq_mean = 0.0;   // mean |h|
  double ineq_max = 0.0;  // max relu(g)
  double ineq_mean = 0.0;
  double time_per_instance_ms = 0.0;
  double complete_ok_rate = 1.0;
  int max_newton_iters = 0;
  bool has_gap = false;
  double gap_mean = 0.0;  // mean (f - f_ref) / |f_ref|, signed
};

// Metrics of the test-time pipeline on X. ref_obj, when given, must hold one
// reference objective per row of X.
EvalMetrics evaluate(const ProblemFamily& family, const MlpParams& params,
                     const Dc3Config& cfg, const Matrix& X,
                     const Vector* ref_obj = nullptr);

}  // namespace dc3
