#pragma once

#include <memory>
#include <string>
#include <vector>

#include "dc3/dc3.hpp"
#include "dc3/io.hpp"
#include "dc3/solvers.hpp"

namespace dc3 {

// One benchmark run: a task family, a variant list, and the seeds to repeat
// over. base holds task-level hyperparameters; per-variant adjustments
// (penalty weights, correction rate) come from variant_config().
struct RunConfig {
  std::string task = "qp";  // qp | nonconvex | acopf
  int n = 50, n_eq = 25, n_ineq = 25;
  std::string case_path = "data/case57.m";
  int samples = 2400;  // split 10:1:1
  double load_spread = 0.1;
  std::uint64_t data_seed = 7;
  std::vector<Variant> variants{Variant::dc3};
  std::vector<std::uint64_t> seeds{0};
  Dc3Config base;
  std::string out_dir = "runs/latest";

  void validate() const;
};

// Tuned per-task defaults (epochs, batch, lr, penalties, correction).
RunConfig default_run_config(const std::string& task);

// base specialized for one variant: soft-loss-only methods get the stiffer
// penalty weights, full-space correction gets the smaller step on acopf.
Dc3Config variant_config(const RunConfig& cfg, Variant v);

RunConfig load_run_config(const std::string& path);
void save_run_config(const std::string& path, const RunConfig& cfg);

// Materialized task: family, instances, and reference solutions. Labels are
// attached (and references computed on every row) only when with_labels;
// otherwise references cover the test rows alone.
struct Prepared {
  std::shared_ptr<ProblemFamily> family;
  InstanceSet data;
  Matrix ref_test_Y;      // reference solutions on test rows
  Vector ref_test_obj;    // reference objective on test rows
  double ref_seconds_per_instance = 0.0;  // timed over the test rows
};
Prepared prepare_task(const RunConfig& cfg, bool with_labels);

struct CellResult {
  Variant variant = Variant::dc3;
  std::uint64_t seed = 0;
  bool failed = false;
  std::string error;
  EvalMetrics metrics;
  double train_seconds = 0.0;
};

struct Report {
  RunConfig cfg;
  std::vector<CellResult> cells;
  bool has_ref = false;
  EvalMetrics ref_metrics;  // reference solutions scored like a method
  int failed_cells() const;
};

// Trains and evaluates every (variant, seed) cell, writes per-cell history
// and eval CSVs plus aggregated report.csv / report.md under cfg.out_dir.
// Wall times go to separate timing files so eval CSVs stay byte-stable.
Report run_experiment(const RunConfig& cfg);

// One run_experiment per value of the given axis ("n_eq" or "n_ineq"),
// plus a combined table (rows: variant x {objective, max eq, max ineq},
// one column per value). Returns total failed cells.
int sweep_constraints(RunConfig base, const std::string& axis,
                      const std::vector<int>& values);

struct Timing {
  double total_seconds = 0.0;
  double per_instance_seconds = 0.0;
};

// Wall time of the full test path over X, after one discarded warm-up pass.
Timing timing_harness(const ProblemFamily& family, const MlpParams& params,
                      const Dc3Config& cfg, const Matrix& X);

}  // namespace dc3
