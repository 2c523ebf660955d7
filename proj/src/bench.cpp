#include "dc3/bench.hpp"

#include <cctype>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "dc3/acopf/family.hpp"
#include "dc3/qp_family.hpp"

namespace dc3 {

namespace fs = std::filesystem;

void RunConfig::validate() const {
  if (task != "qp" && task != "nonconvex" && task != "acopf")
    throw ContractError("config: unknown task '" + task + "'");
  if (variants.empty()) throw ContractError("config: need >= 1 variant");
  if (seeds.empty()) throw ContractError("config: need >= 1 seed");
  if (task != "acopf" && (n < 1 || n_eq < 1 || n_ineq < 0 || n_eq >= n))
    throw ContractError("config: bad dimensions");
  if (samples < 12) throw ContractError("config: need >= 12 samples");
  if (base.epochs < 1 || base.batch < 2)
    throw ContractError("config: bad training schedule");
}

RunConfig default_run_config(const std::string& task) {
  RunConfig cfg;
  cfg.task = task;
  cfg.base.epochs = 1000;
  cfg.base.batch = 200;
  cfg.base.hidden = 200;
  cfg.base.dropout = 0.2;
  cfg.base.lambda_g = 5.0;
  cfg.base.lambda_h = 5.0;
  cfg.base.corr_train = {10, 1e-7, 0.5, 1e-4};
  cfg.base.corr_test = {10, 1e-7, 0.5, 1e-4};
  cfg.base.lr = 3e-4;
  if (task == "qp" || task == "nonconvex") {
    cfg.n = 50;
    cfg.n_eq = 25;
    cfg.n_ineq = 25;
    cfg.samples = 2400;
    // Family draw with a well-conditioned effective inequality map; the
    // correction step limit scales as 1 / sigma_max(G_eff)^2, so a stiff
    // draw makes every method unstable at usable step sizes.
    cfg.data_seed = 30;
  } else if (task == "acopf") {
    cfg.samples = 1200;
    cfg.base.lr = 1e-3;
    cfg.base.corr_train = {5, 1e-4, 0.5, 1e-4};
    cfg.base.corr_test = {5, 1e-4, 0.5, 1e-4};
  } else {
    throw ContractError("default_run_config: unknown task '" + task + "'");
  }
  return cfg;
}

Dc3Config variant_config(const RunConfig& cfg, Variant v) {
  Dc3Config vc = cfg.base;
  vc.variant = v;
  if (variant_full_head(v)) {
    // Methods that must learn the equalities need the stiff penalty.
    vc.lambda_g *= 10.0;
    vc.lambda_h *= 10.0;
    if (cfg.task == "acopf") {
      vc.corr_train.gamma *= 0.1;
      vc.corr_test.gamma *= 0.1;
    }
  }
  return vc;
}

namespace {

std::string join_list(const std::vector<std::string>& parts) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i) out += ",";
    out += parts[i];
  }
  return out;
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : s) {
    if (ch == ',') {
      if (!cur.empty()) out.push_back(cur);
      cur.clear();
    } else if (!std::isspace(static_cast<unsigned char>(ch))) {
      cur += ch;
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

std::string two_dp(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  return buf;
}

struct MeanStd {
  double mean = 0.0, sd = 0.0;
};

MeanStd mean_std(const std::vector<double>& xs) {
  MeanStd r;
  if (xs.empty()) return r;
  for (double x : xs) r.mean += x;
  r.mean /= static_cast<double>(xs.size());
  if (xs.size() > 1) {
    double acc = 0.0;
    for (double x : xs) acc += (x - r.mean) * (x - r.mean);
    r.sd = std::sqrt(acc / static_cast<double>(xs.size() - 1));
  }
  return r;
}

}  // namespace

void save_run_config(const std::string& path, const RunConfig& cfg) {
  Manifest m;
  auto put = [&](const char* k, const std::string& v) { m.emplace_back(k, v); };
  auto putd = [&](const char* k, double v) { put(k, format_double(v)); };
  auto puti = [&](const char* k, long long v) { put(k, std::to_string(v)); };
  put("task", cfg.task);
  puti("n", cfg.n);
  puti("n_eq", cfg.n_eq);
  puti("n_ineq", cfg.n_ineq);
  put("case_path", cfg.case_path);
  puti("samples", cfg.samples);
  putd("load_spread", cfg.load_spread);
  puti("data_seed", static_cast<long long>(cfg.data_seed));
  {
    std::vector<std::string> vs;
    for (Variant v : cfg.variants) vs.push_back(variant_name(v));
    put("variants", join_list(vs));
  }
  {
    std::vector<std::string> ss;
    for (auto s : cfg.seeds) ss.push_back(std::to_string(s));
    put("seeds", join_list(ss));
  }
  put("out_dir", cfg.out_dir);
  puti("epochs", cfg.base.epochs);
  puti("batch", cfg.base.batch);
  puti("hidden", cfg.base.hidden);
  putd("dropout", cfg.base.dropout);
  putd("lr", cfg.base.lr);
  putd("lambda_g", cfg.base.lambda_g);
  putd("lambda_h", cfg.base.lambda_h);
  putd("max_drop_rate", cfg.base.max_drop_rate);
  puti("corr_train_steps", cfg.base.corr_train.t_max);
  putd("corr_train_gamma", cfg.base.corr_train.gamma);
  putd("corr_train_momentum", cfg.base.corr_train.momentum);
  putd("corr_train_tol", cfg.base.corr_train.tol);
  puti("corr_test_steps", cfg.base.corr_test.t_max);
  putd("corr_test_gamma", cfg.base.corr_test.gamma);
  putd("corr_test_momentum", cfg.base.corr_test.momentum);
  putd("corr_test_tol", cfg.base.corr_test.tol);
  save_manifest(path, m);
}

RunConfig load_run_config(const std::string& path) {
  Manifest m = load_manifest(path);
  RunConfig cfg = default_run_config(manifest_get(m, "task"));
  auto geti = [&](const char* k, int d) {
    return std::stoi(manifest_get_or(m, k, std::to_string(d)));
  };
  auto getd = [&](const char* k, double d) {
    return std::stod(manifest_get_or(m, k, format_double(d)));
  };
  cfg.n = geti("n", cfg.n);
  cfg.n_eq = geti("n_eq", cfg.n_eq);
  cfg.n_ineq = geti("n_ineq", cfg.n_ineq);
  cfg.case_path = manifest_get_or(m, "case_path", cfg.case_path);
  cfg.samples = geti("samples", cfg.samples);
  cfg.load_spread = getd("load_spread", cfg.load_spread);
  cfg.data_seed = std::stoull(
      manifest_get_or(m, "data_seed", std::to_string(cfg.data_seed)));
  cfg.variants.clear();
  for (const auto& s : split_list(manifest_get(m, "variants")))
    cfg.variants.push_back(variant_from_name(s));
  cfg.seeds.clear();
  for (const auto& s : split_list(manifest_get(m, "seeds")))
    cfg.seeds.push_back(std::stoull(s));
  cfg.out_dir = manifest_get_or(m, "out_dir", cfg.out_dir);
  cfg.base.epochs = geti("epochs", cfg.base.epochs);
  cfg.base.batch = geti("batch", cfg.base.batch);
  cfg.base.hidden = geti("hidden", cfg.base.hidden);
  cfg.base.dropout = getd("dropout", cfg.base.dropout);
  cfg.base.lr = getd("lr", cfg.base.lr);
  cfg.base.lambda_g = getd("lambda_g", cfg.base.lambda_g);
  cfg.base.lambda_h = getd("lambda_h", cfg.base.lambda_h);
  cfg.base.max_drop_rate = getd("max_drop_rate", cfg.base.max_drop_rate);
  cfg.base.corr_train.t_max = geti("corr_train_steps", cfg.base.corr_train.t_max);
  cfg.base.corr_train.gamma = getd("corr_train_gamma", cfg.base.corr_train.gamma);
  cfg.base.corr_train.momentum =
      getd("corr_train_momentum", cfg.base.corr_train.momentum);
  cfg.base.corr_train.tol = getd("corr_train_tol", cfg.base.corr_train.tol);
  cfg.base.corr_test.t_max = geti("corr_test_steps", cfg.base.corr_test.t_max);
  cfg.base.corr_test.gamma = getd("corr_test_gamma", cfg.base.corr_test.gamma);
  cfg.base.corr_test.momentum =
      getd("corr_test_momentum", cfg.base.corr_test.momentum);
  cfg.base.corr_test.tol = getd("corr_test_tol", cfg.base.corr_test.tol);
  cfg.validate();
  return cfg;
}

Prepared prepare_task(const RunConfig& cfg, bool with_labels) {
  cfg.validate();
  Prepared p;
  if (cfg.task == "qp" || cfg.task == "nonconvex") {
    auto fam = std::make_shared<QpFamily>(generate_qp_family(
        cfg.data_seed, cfg.n, cfg.n_eq, cfg.n_ineq,
        cfg.task == "qp" ? QpFamily::Kind::quadratic : QpFamily::Kind::sine));
    p.data = sample_instances(*fam, cfg.samples, cfg.data_seed + 1);
    p.family = fam;
  } else {
    auto fam = std::make_shared<acopf::AcopfFamily>(
        acopf::load_case(cfg.case_path));
    p.data = acopf::sample_acopf_instances(*fam, cfg.samples, cfg.data_seed + 1,
                                           cfg.load_spread);
    p.family = fam;
  }

  const Matrix test_X = p.data.test_X();
  auto solve_rows = [&](const Matrix& X, bool timed) -> std::pair<Matrix, Vector> {
    const auto t0 = std::chrono::steady_clock::now();
    Matrix Y;
    Vector obj;
    if (cfg.task == "qp") {
      QpAdmmSolver admm(*std::static_pointer_cast<QpFamily>(p.family));
      Y = admm.solve_batch(X, &obj);
    } else {
      BarrierSettings bs;
      bs.starts = cfg.task == "nonconvex" ? 3 : 1;
      bs.seed = cfg.data_seed + 2;
      BarrierResult r = solve_reduced_barrier(*p.family, X, bs);
      for (std::size_t i = 0; i < r.ok.size(); ++i)
        if (!r.ok[i])
          throw SolverError("reference solve failed on row " +
                            std::to_string(i));
      Y = r.Y;
      obj = r.obj;
    }
    if (timed) {
      const auto t1 = std::chrono::steady_clock::now();
      p.ref_seconds_per_instance =
          std::chrono::duration<double>(t1 - t0).count() /
          static_cast<double>(X.rows());
    }
    return {Y, obj};
  };

  auto [test_Y, test_obj] = solve_rows(test_X, true);
  p.ref_test_Y = test_Y;
  p.ref_test_obj = test_obj;
  if (with_labels) {
    Matrix head_X = p.data.X.topRows(p.data.n_train + p.data.n_val);
    auto [head_Y, head_obj] = solve_rows(head_X, false);
    Matrix full_Y(p.data.X.rows(), head_Y.cols());
    full_Y << head_Y, test_Y;
    p.data.Y_labels = p.family->partial_of(full_Y);
    p.data.has_labels = true;
  }
  return p;
}

int Report::failed_cells() const {
  int k = 0;
  for (const auto& c : cells) k += c.failed ? 1 : 0;
  return k;
}

Timing timing_harness(const ProblemFamily& family, const MlpParams& params,
                      const Dc3Config& cfg, const Matrix& X) {
  (void)predict(family, params, cfg, X);  // warm-up, discarded
  const auto t0 = std::chrono::steady_clock::now();
  (void)predict(family, params, cfg, X);
  const auto t1 = std::chrono::steady_clock::now();
  Timing t;
  t.total_seconds = std::chrono::duration<double>(t1 - t0).count();
  t.per_instance_seconds = t.total_seconds / static_cast<double>(X.rows());
  return t;
}

namespace {

void write_text(const std::string& path, const std::string& body) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out << body;
  if (!out) throw IoError("write failed for '" + path + "'");
}

std::string eval_csv(const EvalMetrics& m) {
  std::ostringstream os;
  os << "metric,value\n";
  os << "objective_mean," << format_double(m.obj_mean) << "\n";
  os << "eq_max," << format_double(m.eq_max) << "\n";
  os << "eq_mean," << format_double(m.eq_mean) << "\n";
  os << "ineq_max," << format_double(m.ineq_max) << "\n";
  os << "ineq_mean," << format_double(m.ineq_mean) << "\n";
  os << "complete_ok_rate," << format_double(m.complete_ok_rate) << "\n";
  os << "max_newton_iters," << m.max_newton_iters << "\n";
  if (m.has_gap) os << "gap_mean," << format_double(m.gap_mean) << "\n";
  return os.str();
}

EvalMetrics score_reference(const ProblemFamily& family, const Matrix& X,
                            const Matrix& Y, const Vector& obj,
                            double seconds_per_instance) {
  EvalMetrics m;
  m.rows = static_cast<int>(X.rows());
  m.obj_mean = obj.mean();
  Matrix eq = family.eq_resid(X, Y).cwiseAbs();
  m.eq_max = eq.size() ? eq.maxCoeff() : 0.0;
  m.eq_mean = eq.size() ? eq.mean() : 0.0;
  Matrix g = family.ineq_resid(X, Y).cwiseMax(0.0);
  m.ineq_max = g.size() ? g.maxCoeff() : 0.0;
  m.ineq_mean = g.size() ? g.mean() : 0.0;
  m.time_per_instance_ms = seconds_per_instance * 1e3;
  m.has_gap = true;
  m.gap_mean = 0.0;
  return m;
}

}  // namespace

Report run_experiment(const RunConfig& cfg) {
  cfg.validate();
  fs::create_directories(cfg.out_dir);
  save_run_config(cfg.out_dir + "/config.txt", cfg);

  bool needs_labels = false;
  for (Variant v : cfg.variants) needs_labels |= variant_needs_labels(v);
  Prepared prep = prepare_task(cfg, needs_labels);
  const Matrix test_X = prep.data.test_X();

  Report rep;
  rep.cfg = cfg;
  rep.has_ref = true;
  rep.ref_metrics =
      score_reference(*prep.family, test_X, prep.ref_test_Y, prep.ref_test_obj,
                      prep.ref_seconds_per_instance);

  for (Variant v : cfg.variants) {
    Dc3Config vc = variant_config(cfg, v);
    for (std::uint64_t seed : cfg.seeds) {
      vc.seed = seed;
      CellResult cell;
      cell.variant = v;
      cell.seed = seed;
      const std::string stem =
          cfg.out_dir + "/" + variant_name(v) + "_seed" + std::to_string(seed);
      try {
        const auto t0 = std::chrono::steady_clock::now();
        TrainResult tr = train(*prep.family, prep.data, vc);
        const auto t1 = std::chrono::steady_clock::now();
        cell.train_seconds = std::chrono::duration<double>(t1 - t0).count();

        std::ostringstream hist;
        hist << "epoch,loss\n";
        for (const auto& h : tr.history)
          hist << h.epoch << "," << format_double(h.loss) << "\n";
        write_text(stem + "_history.csv", hist.str());

        cell.metrics =
            evaluate(*prep.family, tr.params, vc, test_X, &prep.ref_test_obj);
        write_text(stem + "_eval.csv", eval_csv(cell.metrics));

        Timing timing = timing_harness(*prep.family, tr.params, vc, test_X);
        std::ostringstream tcsv;
        tcsv << "metric,value\n"
             << "train_seconds," << format_double(cell.train_seconds) << "\n"
             << "test_path_seconds_per_instance,"
             << format_double(timing.per_instance_seconds) << "\n";
        write_text(stem + "_timing.csv", tcsv.str());
        cell.metrics.time_per_instance_ms =
            timing.per_instance_seconds * 1e3;
      } catch (const std::exception& e) {
        cell.failed = true;
        cell.error = e.what();
        write_text(stem + "_error.txt", std::string(e.what()) + "\n");
      }
      rep.cells.push_back(cell);
    }
  }

  // Machine-readable per-cell report (no wall times, byte-stable).
  {
    std::ostringstream os;
    os << "variant,seed,failed,objective_mean,eq_max,eq_mean,ineq_max,"
          "ineq_mean,gap_mean,complete_ok_rate\n";
    for (const auto& c : rep.cells) {
      os << variant_name(c.variant) << "," << c.seed << ","
         << (c.failed ? 1 : 0);
      if (c.failed) {
        os << ",,,,,,,\n";
        continue;
      }
      os << "," << format_double(c.metrics.obj_mean) << ","
         << format_double(c.metrics.eq_max) << ","
         << format_double(c.metrics.eq_mean) << ","
         << format_double(c.metrics.ineq_max) << ","
         << format_double(c.metrics.ineq_mean) << ","
         << (c.metrics.has_gap ? format_double(c.metrics.gap_mean) : "") << ","
         << format_double(c.metrics.complete_ok_rate) << "\n";
    }
    write_text(cfg.out_dir + "/report.csv", os.str());
  }

  // Table in the comparison layout: one row per method, mean (std) cells.
  {
    std::ostringstream os;
    os << "| Method | Obj. | Max eq. | Mean eq. | Max ineq. | Mean ineq. | "
          "Time (s) | Gap |\n";
    os << "|---|---|---|---|---|---|---|---|\n";
    auto cell_str = [](const MeanStd& ms) {
      return two_dp(ms.mean) + " (" + two_dp(ms.sd) + ")";
    };
    for (Variant v : cfg.variants) {
      std::vector<double> obj, eqm, eqa, inm, ina, tms, gap;
      int ok = 0, total = 0;
      for (const auto& c : rep.cells) {
        if (c.variant != v) continue;
        ++total;
        if (c.failed) continue;
        ++ok;
        obj.push_back(c.metrics.obj_mean);
        eqm.push_back(c.metrics.eq_max);
        eqa.push_back(c.metrics.eq_mean);
        inm.push_back(c.metrics.ineq_max);
        ina.push_back(c.metrics.ineq_mean);
        tms.push_back(c.metrics.time_per_instance_ms / 1e3);
        if (c.metrics.has_gap) gap.push_back(c.metrics.gap_mean);
      }
      os << "| " << variant_name(v);
      if (ok == 0) {
        os << " | failed (" << total << " cells) | | | | | | |\n";
        continue;
      }
      os << " | " << cell_str(mean_std(obj)) << " | " << cell_str(mean_std(eqm))
         << " | " << cell_str(mean_std(eqa)) << " | " << cell_str(mean_std(inm))
         << " | " << cell_str(mean_std(ina)) << " | "
         << format_double(mean_std(tms).mean) << " | "
         << (gap.empty() ? std::string("-") : cell_str(mean_std(gap)))
         << " |\n";
    }
    const EvalMetrics& r = rep.ref_metrics;
    os << "| reference | " << two_dp(r.obj_mean) << " (0.00) | "
       << two_dp(r.eq_max) << " (0.00) | " << two_dp(r.eq_mean) << " (0.00) | "
       << two_dp(r.ineq_max) << " (0.00) | " << two_dp(r.ineq_mean)
       << " (0.00) | " << format_double(r.time_per_instance_ms / 1e3)
       << " | 0.00 (0.00) |\n";
    write_text(cfg.out_dir + "/report.md", os.str());
  }
  return rep;
}

int sweep_constraints(RunConfig base, const std::string& axis,
                      const std::vector<int>& values) {
  if (base.task != "qp" && base.task != "nonconvex")
    throw ContractError("sweep: task must be qp or nonconvex");
  if (axis != "n_eq" && axis != "n_ineq")
    throw ContractError("sweep: axis must be n_eq or n_ineq");
  if (values.empty()) throw ContractError("sweep: need >= 1 value");

  const std::string root = base.out_dir;
  fs::create_directories(root);
  std::vector<Report> reports;
  int failed = 0;
  for (int value : values) {
    RunConfig cfg = base;
    (axis == "n_eq" ? cfg.n_eq : cfg.n_ineq) = value;
    cfg.out_dir = root + "/" + axis + "_" + std::to_string(value);
    Report r = run_experiment(cfg);
    failed += r.failed_cells();
    reports.push_back(std::move(r));
  }

  std::ostringstream os;
  os << "| Metric |";
  for (int v : values) os << " " << axis << "=" << v << " |";
  os << "\n|---|";
  for (std::size_t i = 0; i < values.size(); ++i) os << "---|";
  os << "\n";
  auto metric_row = [&](Variant v, const char* label,
                        double EvalMetrics::*field) {
    os << "| " << variant_name(v) << " " << label << " |";
    for (const Report& r : reports) {
      std::vector<double> xs;
      for (const auto& c : r.cells)
        if (c.variant == v && !c.failed) xs.push_back(c.metrics.*field);
      os << (xs.empty() ? " failed |"
                        : " " + two_dp(mean_std(xs).mean) + " |");
    }
    os << "\n";
  };
  for (Variant v : base.variants) {
    metric_row(v, "objective", &EvalMetrics::obj_mean);
    metric_row(v, "max eq", &EvalMetrics::eq_max);
    metric_row(v, "max ineq", &EvalMetrics::ineq_max);
  }
  write_text(root + "/sweep.md", os.str());
  return failed;
}

}  // namespace dc3
