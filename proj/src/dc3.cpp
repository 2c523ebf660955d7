#include "dc3/dc3.hpp"

#include <chrono>
#include <numeric>

namespace dc3 {

std::string variant_name(Variant v) {
  switch (v) {
    case Variant::dc3: return "dc3";
    case Variant::dc3_no_completion: return "dc3_no_completion";
    case Variant::dc3_no_corr_train: return "dc3_no_corr_train";
    case Variant::dc3_no_corr_train_test: return "dc3_no_corr_train_test";
    case Variant::dc3_no_soft_loss: return "dc3_no_soft_loss";
    case Variant::nn_baseline: return "nn_baseline";
    case Variant::nn_corr_test: return "nn_corr_test";
    case Variant::eq_nn: return "eq_nn";
    case Variant::eq_nn_corr_test: return "eq_nn_corr_test";
  }
  throw ContractError("variant_name: unknown variant");
}

Variant variant_from_name(const std::string& name) {
  static const Variant all[] = {
      Variant::dc3,           Variant::dc3_no_completion,
      Variant::dc3_no_corr_train, Variant::dc3_no_corr_train_test,
      Variant::dc3_no_soft_loss,  Variant::nn_baseline,
      Variant::nn_corr_test,      Variant::eq_nn,
      Variant::eq_nn_corr_test};
  for (Variant v : all)
    if (variant_name(v) == name) return v;
  throw ContractError("unknown variant name '" + name + "'");
}

bool variant_full_head(Variant v) {
  return v == Variant::dc3_no_completion || v == Variant::nn_baseline ||
         v == Variant::nn_corr_test;
}

bool variant_uses_completion(Variant v) { return !variant_full_head(v); }

bool variant_corrects_train(Variant v) {
  return v == Variant::dc3 || v == Variant::dc3_no_completion ||
         v == Variant::dc3_no_soft_loss;
}

bool variant_corrects_test(Variant v) {
  return v == Variant::dc3 || v == Variant::dc3_no_completion ||
         v == Variant::dc3_no_corr_train || v == Variant::dc3_no_soft_loss ||
         v == Variant::nn_corr_test || v == Variant::eq_nn_corr_test;
}

bool variant_needs_labels(Variant v) {
  return v == Variant::eq_nn || v == Variant::eq_nn_corr_test;
}

namespace {

bool variant_soft_loss(Variant v) {
  return v != Variant::dc3_no_soft_loss && !variant_needs_labels(v);
}

// Per-row loss column reduced to a scalar, optionally masking out rows whose
// completion failed.
Var reduce_loss(Tape& tape, Var per_row, const std::vector<std::uint8_t>& ok) {
  const auto rows = tape.value(per_row).rows();
  int n_ok = 0;
  for (std::uint8_t f : ok) n_ok += f ? 1 : 0;
  if (ok.empty() || n_ok == static_cast<int>(ok.size())) return mean(per_row);
  if (n_ok == 0) throw TrainingError("all completions in batch failed");
  Matrix mask(rows, 1);
  for (Eigen::Index i = 0; i < rows; ++i)
    mask(i, 0) = ok[static_cast<std::size_t>(i)] ? 1.0 : 0.0;
  return scale(sum(mul(per_row, tape.constant(mask))),
               1.0 / static_cast<double>(n_ok));
}

}  // namespace

TrainResult train(const ProblemFamily& family, const InstanceSet& data,
                  const Dc3Config& cfg) {
  const Variant v = cfg.variant;
  if (variant_needs_labels(v) && !data.has_labels)
    throw ContractError("variant '" + variant_name(v) +
                        "' requires labeled instances");
  if (cfg.batch < 2) throw ContractError("train: batch size must be >= 2");
  if (data.n_train < 2) throw ContractError("train: need >= 2 training rows");

  const int head =
      variant_full_head(v) ? family.raw_full_dim() : family.raw_partial_dim();

  TrainResult out;
  out.params = init_mlp(cfg.seed, family.input_dim(), head, cfg.hidden,
                        cfg.dropout);
  AdamState adam = adam_init(out.params.trainable(), cfg.lr);
  Rng rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);

  const Matrix train_X = data.train_X();
  Matrix train_labels;
  if (variant_needs_labels(v)) train_labels = data.train_labels();

  std::vector<int> order(static_cast<std::size_t>(data.n_train));
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(order);
    double epoch_loss = 0.0;
    int n_batches = 0;
    for (int start = 0; start + 2 <= data.n_train; start += cfg.batch) {
      const int b = std::min(cfg.batch, data.n_train - start);
      if (b < 2) break;
      Matrix Xb(b, train_X.cols());
      Matrix Lb;
      if (variant_needs_labels(v)) Lb.resize(b, train_labels.cols());
      for (int i = 0; i < b; ++i) {
        Xb.row(i) = train_X.row(order[static_cast<std::size_t>(start + i)]);
        if (variant_needs_labels(v))
          Lb.row(i) = train_labels.row(order[static_cast<std::size_t>(start + i)]);
      }

      Tape tape;
      MlpLeaves leaves = mlp_leaves(tape, out.params);
      try {
        Var raw = mlp_forward(tape, out.params, leaves, Xb, true, &rng);

        Var loss;
        std::vector<std::uint8_t> ok;
        if (variant_needs_labels(v)) {
          Var z = family.decode_partial_t(raw);
          loss = mean(row_sum(square(sub(z, tape.constant(Lb)))));
        } else {
          Var Y;
          if (variant_full_head(v)) {
            Y = family.decode_full_t(raw);
            if (variant_corrects_train(v))
              Y = family.correct_full_unroll_t(Y, Xb, cfg.corr_train);
          } else {
            Var z = family.decode_partial_t(raw);
            Completed c = family.complete_t(z, Xb);
            ok = c.ok;
            int n_fail = 0;
            for (std::uint8_t f : ok) n_fail += f ? 0 : 1;
            if (n_fail > cfg.max_drop_rate * b)
              throw TrainingError(
                  "epoch " + std::to_string(epoch) + ": " +
                  std::to_string(n_fail) + "/" + std::to_string(b) +
                  " completions failed, above the drop-rate budget");
            if (variant_corrects_train(v))
              c.Y = family.correct_partial_unroll_t(c, Xb, cfg.corr_train);
            Y = c.Y;
          }
          Var per = family.objective_t(Y, Xb);
          if (variant_soft_loss(v)) {
            Var g = family.ineq_resid_t(Y, Xb);
            per = add(per, scale(row_sum(square(relu(g))), cfg.lambda_g));
            if (!variant_uses_completion(v)) {
              Var h = family.eq_resid_t(Y, Xb);
              per = add(per, scale(row_sum(square(h)), cfg.lambda_h));
            }
          }
          loss = reduce_loss(tape, per, ok);
        }

        tape.backward(loss);
        std::vector<Matrix> grads;
        grads.reserve(leaves.ordered.size());
        for (Var p : leaves.ordered) grads.push_back(tape.grad(p));
        adam_step(out.params.trainable(), grads, adam);

        epoch_loss += tape.value(loss)(0, 0);
        n_batches += 1;
      } catch (const NumericError& e) {
        throw TrainingError("epoch " + std::to_string(epoch) + ": diverged (" +
                            e.what() + ")");
      }
    }
    if (n_batches == 0) throw TrainingError("no full batches in epoch");
    const double avg = epoch_loss / n_batches;
    if (!std::isfinite(avg))
      throw TrainingError("epoch " + std::to_string(epoch) +
                          ": loss diverged");
    out.history.push_back({epoch, avg});
  }
  return out;
}

namespace {

struct PredictDetail {
  Matrix Y;
  double ok_rate = 1.0;
  int max_newton_iters = 0;
};

PredictDetail predict_detail(const ProblemFamily& family,
                             const MlpParams& params, const Dc3Config& cfg,
                             const Matrix& X) {
  const Variant v = cfg.variant;
  Matrix raw = mlp_eval(params, X);
  PredictDetail d;
  if (variant_full_head(v)) {
    d.Y = family.decode_full(raw);
    if (variant_corrects_test(v))
      d.Y = family.correct_full(X, d.Y, cfg.corr_test);
    return d;
  }
  Matrix z = family.decode_partial(raw);
  CompletionResult cr = family.complete(X, z);
  d.max_newton_iters = cr.max_iters;
  if (!cr.ok.empty()) {
    int n_ok = 0;
    for (std::uint8_t f : cr.ok) n_ok += f ? 1 : 0;
    d.ok_rate = static_cast<double>(n_ok) / static_cast<double>(cr.ok.size());
  }
  if (variant_corrects_test(v)) family.correct_partial(X, cr, cfg.corr_test);
  d.Y = std::move(cr.Y);
  return d;
}

}  // namespace

Matrix predict(const ProblemFamily& family, const MlpParams& params,
               const Dc3Config& cfg, const Matrix& X) {
  return predict_detail(family, params, cfg, X).Y;
}

EvalMetrics evaluate(const ProblemFamily& family, const MlpParams& params,
                     const Dc3Config& cfg, const Matrix& X,
                     const Vector* ref_obj) {
  if (X.rows() < 1) throw ContractError("evaluate: empty test set");
  const auto t0 = std::chrono::steady_clock::now();
  PredictDetail d = predict_detail(family, params, cfg, X);
  const auto t1 = std::chrono::steady_clock::now();

  EvalMetrics m;
  m.rows = static_cast<int>(X.rows());
  m.time_per_instance_ms =
      std::chrono::duration<double, std::milli>(t1 - t0).count() / m.rows;
  m.complete_ok_rate = d.ok_rate;
  m.max_newton_iters = d.max_newton_iters;

  Vector obj = family.objective(X, d.Y);
  m.obj_mean = obj.mean();
  Matrix eq = family.eq_resid(X, d.Y).cwiseAbs();
  m.eq_max = eq.size() ? eq.maxCoeff() : 0.0;
  m.eq_mean = eq.size() ? eq.mean() : 0.0;
  Matrix ineq = family.ineq_resid(X, d.Y).cwiseMax(0.0);
  m.ineq_max = ineq.size() ? ineq.maxCoeff() : 0.0;
  m.ineq_mean = ineq.size() ? ineq.mean() : 0.0;

  if (ref_obj != nullptr) {
    if (ref_obj->size() != obj.size())
      throw ShapeError("evaluate: reference objective length mismatch");
    m.has_gap = true;
    double acc = 0.0;
    for (Eigen::Index i = 0; i < obj.size(); ++i) {
      const double denom = std::max(1e-12, std::abs((*ref_obj)(i)));
      acc += (obj(i) - (*ref_obj)(i)) / denom;
    }
    m.gap_mean = acc / static_cast<double>(obj.size());
  }
  return m;
}

}  // namespace dc3
