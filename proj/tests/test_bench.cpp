#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "dc3/bench.hpp"

using namespace dc3;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  REQUIRE(in.good());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

RunConfig tiny_qp_config(const std::string& out_dir) {
  RunConfig cfg = default_run_config("qp");
  cfg.n = 12;
  cfg.n_eq = 5;
  cfg.n_ineq = 8;
  cfg.samples = 48;
  cfg.base.epochs = 8;
  cfg.base.batch = 10;
  cfg.base.hidden = 24;
  cfg.base.dropout = 0.0;
  cfg.base.lr = 1e-3;
  cfg.base.corr_test.t_max = 100;
  cfg.out_dir = out_dir;
  return cfg;
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name)
      : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

}  // namespace

TEST_CASE("task defaults are self-consistent") {
  for (const std::string task : {"qp", "nonconvex", "acopf"}) {
    RunConfig cfg = default_run_config(task);
    cfg.validate();
    CHECK(cfg.task == task);
    CHECK(cfg.base.epochs > 0);
    CHECK(cfg.base.corr_test.gamma > 0.0);
  }
  CHECK_THROWS_AS(default_run_config("mystery"), ContractError);

  RunConfig bad = default_run_config("qp");
  bad.n_eq = bad.n;  // leaves no partial variables
  CHECK_THROWS_AS(bad.validate(), ContractError);
}

TEST_CASE("per-variant hyperparameters follow the variant roles") {
  RunConfig qp = default_run_config("qp");
  Dc3Config plain = variant_config(qp, Variant::dc3);
  Dc3Config full = variant_config(qp, Variant::nn_baseline);
  CHECK(full.lambda_g == 10.0 * plain.lambda_g);
  CHECK(full.lambda_h == 10.0 * plain.lambda_h);
  CHECK(plain.variant == Variant::dc3);
  CHECK(full.variant == Variant::nn_baseline);

  RunConfig ac = default_run_config("acopf");
  Dc3Config ac_plain = variant_config(ac, Variant::dc3);
  Dc3Config ac_full = variant_config(ac, Variant::dc3_no_completion);
  CHECK(ac_full.corr_train.gamma == doctest::Approx(0.1 * ac_plain.corr_train.gamma));
}

TEST_CASE("run configuration files round trip") {
  TempDir tmp("dc3_bench_cfg_test");
  fs::create_directories(tmp.path);
  RunConfig cfg = default_run_config("nonconvex");
  cfg.n = 17;
  cfg.n_eq = 6;
  cfg.n_ineq = 9;
  cfg.samples = 360;
  cfg.data_seed = 99;
  cfg.variants = {Variant::dc3, Variant::eq_nn_corr_test};
  cfg.seeds = {4, 5, 6};
  cfg.base.lr = 3e-4;
  cfg.base.lambda_g = 7.5;
  cfg.base.corr_test.t_max = 123;
  cfg.base.corr_test.gamma = 2e-6;
  cfg.out_dir = "somewhere/else";

  const std::string path = (tmp.path / "config.txt").string();
  save_run_config(path, cfg);
  RunConfig back = load_run_config(path);
  CHECK(back.task == cfg.task);
  CHECK(back.n == cfg.n);
  CHECK(back.n_eq == cfg.n_eq);
  CHECK(back.n_ineq == cfg.n_ineq);
  CHECK(back.samples == cfg.samples);
  CHECK(back.data_seed == cfg.data_seed);
  CHECK(back.variants == cfg.variants);
  CHECK(back.seeds == cfg.seeds);
  CHECK(back.base.lr == cfg.base.lr);
  CHECK(back.base.lambda_g == cfg.base.lambda_g);
  CHECK(back.base.corr_test.t_max == cfg.base.corr_test.t_max);
  CHECK(back.base.corr_test.gamma == cfg.base.corr_test.gamma);
  CHECK(back.out_dir == cfg.out_dir);
}

TEST_CASE("prepared tasks carry reference solutions for the test rows") {
  RunConfig cfg = tiny_qp_config("unused");
  Prepared prep = prepare_task(cfg, false);
  CHECK(prep.data.X.rows() == 48);
  CHECK(prep.data.n_test == 4);
  CHECK(prep.ref_test_Y.rows() == 4);
  CHECK(prep.ref_test_obj.size() == 4);
  CHECK(!prep.data.has_labels);
  CHECK(prep.family->eq_resid(prep.data.test_X(), prep.ref_test_Y)
            .cwiseAbs()
            .maxCoeff() < 1e-4);

  Prepared labeled = prepare_task(cfg, true);
  CHECK(labeled.data.has_labels);
  CHECK(labeled.data.Y_labels.rows() == 48);
}

TEST_CASE("an experiment writes a complete, deterministic file set") {
  TempDir tmp("dc3_bench_run_test");
  RunConfig cfg = tiny_qp_config((tmp.path / "a").string());
  cfg.variants = {Variant::dc3, Variant::nn_baseline};
  cfg.seeds = {0, 1};

  Report rep = run_experiment(cfg);
  CHECK(rep.failed_cells() == 0);
  CHECK(rep.cells.size() == 4);
  CHECK(rep.has_ref);
  CHECK(rep.ref_metrics.ineq_max < 1e-4);

  for (const char* name :
       {"config.txt", "report.csv", "report.md", "dc3_seed0_eval.csv",
        "dc3_seed1_eval.csv", "nn_baseline_seed0_eval.csv",
        "dc3_seed0_history.csv", "dc3_seed0_timing.csv"}) {
    CAPTURE(name);
    CHECK(fs::exists(tmp.path / "a" / name));
  }

  // report.csv carries one line per cell plus the header and reference row.
  std::string report = slurp(tmp.path / "a" / "report.csv");
  CHECK(std::count(report.begin(), report.end(), '\n') >= 5);
  CHECK(report.find("wall") == std::string::npos);
  CHECK(report.find("time") == std::string::npos);

  // A second run from the same configuration is byte-identical on all
  // timing-free outputs.
  cfg.out_dir = (tmp.path / "b").string();
  Report rep2 = run_experiment(cfg);
  CHECK(rep2.failed_cells() == 0);
  for (const char* name :
       {"report.csv", "dc3_seed0_eval.csv", "dc3_seed1_eval.csv",
        "nn_baseline_seed0_eval.csv", "nn_baseline_seed1_eval.csv",
        "dc3_seed0_history.csv"}) {
    CAPTURE(name);
    CHECK(slurp(tmp.path / "a" / name) == slurp(tmp.path / "b" / name));
  }
}

TEST_CASE("a failing cell is recorded without sinking the run") {
  TempDir tmp("dc3_bench_fail_test");
  RunConfig cfg = tiny_qp_config((tmp.path / "r").string());
  cfg.base.lr = 1e200;  // diverges immediately
  cfg.variants = {Variant::dc3};
  Report rep = run_experiment(cfg);
  CHECK(rep.failed_cells() == 1);
  CHECK(rep.cells[0].failed);
  CHECK(!rep.cells[0].error.empty());
  CHECK(fs::exists(tmp.path / "r" / "dc3_seed0_error.txt"));
  std::string report = slurp(tmp.path / "r" / "report.csv");
  CHECK(report.find("dc3,0,1") != std::string::npos);
}

TEST_CASE("constraint sweeps produce one run per value and a combined table") {
  TempDir tmp("dc3_bench_sweep_test");
  RunConfig cfg = tiny_qp_config((tmp.path / "sweep").string());
  cfg.variants = {Variant::dc3};
  int failed = sweep_constraints(cfg, "n_ineq", {6, 8});
  CHECK(failed == 0);
  CHECK(fs::exists(tmp.path / "sweep" / "n_ineq_6" / "report.csv"));
  CHECK(fs::exists(tmp.path / "sweep" / "n_ineq_8" / "report.csv"));
  std::string table = slurp(tmp.path / "sweep" / "sweep.md");
  CHECK(table.find("n_ineq") != std::string::npos);
  CHECK(table.find("dc3") != std::string::npos);
  CHECK(table.find("6") != std::string::npos);
  CHECK(table.find("8") != std::string::npos);
}

TEST_CASE("the timing harness reports a positive per-instance cost") {
  RunConfig cfg = tiny_qp_config("unused");
  Prepared prep = prepare_task(cfg, false);
  Dc3Config vc = variant_config(cfg, Variant::dc3);
  TrainResult tr = train(*prep.family, prep.data, vc);
  Timing t = timing_harness(*prep.family, tr.params, vc, prep.data.test_X());
  CHECK(t.total_seconds > 0.0);
  CHECK(t.per_instance_seconds > 0.0);
  CHECK(t.per_instance_seconds <=
        t.total_seconds + 1e-12);
}
