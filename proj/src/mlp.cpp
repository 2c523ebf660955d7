#include "dc3/mlp.hpp"

#include <cmath>

#include "dc3/io.hpp"

namespace dc3 {

std::vector<std::pair<std::string, Matrix*>> MlpParams::trainable() {
  return {{"w1", &w1},         {"b1", &b1},   {"gamma1", &gamma1},
          {"beta1", &beta1},   {"w2", &w2},   {"b2", &b2},
          {"gamma2", &gamma2}, {"beta2", &beta2}, {"w3", &w3},
          {"b3", &b3}};
}

std::vector<std::pair<std::string, Matrix*>> MlpParams::all_tensors() {
  auto v = trainable();
  v.emplace_back("run_mean1", &run_mean1);
  v.emplace_back("run_var1", &run_var1);
  v.emplace_back("run_mean2", &run_mean2);
  v.emplace_back("run_var2", &run_var2);
  return v;
}

MlpParams init_mlp(std::uint64_t seed, int input_dim, int output_dim,
                   int hidden, double dropout_rate) {
  if (input_dim < 1 || output_dim < 1 || hidden < 1)
    throw ContractError("init_mlp: dimensions must be >= 1");
  Rng rng(seed);
  MlpParams p;
  p.input_dim = input_dim;
  p.output_dim = output_dim;
  p.hidden = hidden;
  p.dropout_rate = dropout_rate;
  auto init_layer = [&](int fan_in, int fan_out) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    return rng.uniform_matrix(fan_in, fan_out, -bound, bound);
  };
  p.w1 = init_layer(input_dim, hidden);
  p.b1 = Matrix::Zero(1, hidden);
  p.w2 = init_layer(hidden, hidden);
  p.b2 = Matrix::Zero(1, hidden);
  p.w3 = init_layer(hidden, output_dim);
  p.b3 = Matrix::Zero(1, output_dim);
  p.gamma1 = Matrix::Ones(1, hidden);
  p.beta1 = Matrix::Zero(1, hidden);
  p.gamma2 = Matrix::Ones(1, hidden);
  p.beta2 = Matrix::Zero(1, hidden);
  p.run_mean1 = Matrix::Zero(1, hidden);
  p.run_var1 = Matrix::Ones(1, hidden);
  p.run_mean2 = Matrix::Zero(1, hidden);
  p.run_var2 = Matrix::Ones(1, hidden);
  return p;
}

MlpLeaves mlp_leaves(Tape& tape, MlpParams& p) {
  MlpLeaves l;
  l.w1 = tape.leaf(p.w1);
  l.b1 = tape.leaf(p.b1);
  l.gamma1 = tape.leaf(p.gamma1);
  l.beta1 = tape.leaf(p.beta1);
  l.w2 = tape.leaf(p.w2);
  l.b2 = tape.leaf(p.b2);
  l.gamma2 = tape.leaf(p.gamma2);
  l.beta2 = tape.leaf(p.beta2);
  l.w3 = tape.leaf(p.w3);
  l.b3 = tape.leaf(p.b3);
  l.ordered = {l.w1, l.b1, l.gamma1, l.beta1, l.w2,
               l.b2, l.gamma2, l.beta2, l.w3, l.b3};
  return l;
}

Var mlp_forward(Tape& tape, MlpParams& p, const MlpLeaves& l, const Matrix& X,
                bool train, Rng* rng) {
  if (X.cols() != p.input_dim)
    throw ShapeError("mlp_forward: input has " + std::to_string(X.cols()) +
                     " columns, expected " + std::to_string(p.input_dim));
  require_finite("mlp_forward input", X);
  if (train && X.rows() < 2)
    throw ContractError("mlp_forward: train mode requires batch >= 2");

  Var h = tape.constant(X);
  h = add(matmul(h, l.w1), l.b1);
  h = batch_norm(h, l.gamma1, l.beta1, p.run_mean1, p.run_var1, train);
  h = relu(h);
  h = dropout(h, p.dropout_rate, rng, train);
  h = add(matmul(h, l.w2), l.b2);
  h = batch_norm(h, l.gamma2, l.beta2, p.run_mean2, p.run_var2, train);
  h = relu(h);
  h = dropout(h, p.dropout_rate, rng, train);
  return add(matmul(h, l.w3), l.b3);
}

Matrix mlp_eval(const MlpParams& p, const Matrix& X) {
  const double eps = 1e-5;
  auto bn = [&](const Matrix& h, const Matrix& gamma, const Matrix& beta,
                const Matrix& rm, const Matrix& rv) -> Matrix {
    RowVec inv_std = (rv.row(0).array() + eps).sqrt().inverse().matrix();
    Matrix xhat = (h.rowwise() - rm.row(0)).array().rowwise() * inv_std.array();
    return (xhat.array().rowwise() * gamma.row(0).array()).matrix().rowwise() +
           beta.row(0);
  };
  Matrix h = (X * p.w1).rowwise() + p.b1.row(0);
  h = bn(h, p.gamma1, p.beta1, p.run_mean1, p.run_var1).cwiseMax(0.0);
  h = (h * p.w2).rowwise() + p.b2.row(0);
  h = bn(h, p.gamma2, p.beta2, p.run_mean2, p.run_var2).cwiseMax(0.0);
  return (h * p.w3).rowwise() + p.b3.row(0);
}

void save_checkpoint(const std::string& path, MlpParams& p) {
  NamedMatrices named;
  named.emplace_back("meta",
                     (Matrix(1, 4) << p.input_dim, p.output_dim, p.hidden,
                      p.dropout_rate)
                         .finished());
  for (auto& [name, m] : p.all_tensors()) named.emplace_back(name, *m);
  save_matrices(path, named);
}

MlpParams load_checkpoint(const std::string& path) {
  NamedMatrices named = load_matrices(path);
  if (named.empty() || named[0].first != "meta")
    throw IoError(path + ": missing checkpoint metadata");
  const Matrix& meta = named[0].second;
  MlpParams p = init_mlp(0, static_cast<int>(meta(0, 0)),
                         static_cast<int>(meta(0, 1)),
                         static_cast<int>(meta(0, 2)), meta(0, 3));
  auto tensors = p.all_tensors();
  if (named.size() != tensors.size() + 1)
    throw IoError(path + ": unexpected tensor count");
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    const auto& [name, m] = named[i + 1];
    if (name != tensors[i].first)
      throw IoError(path + ": unexpected tensor '" + name + "'");
    if (m.rows() != tensors[i].second->rows() ||
        m.cols() != tensors[i].second->cols())
      throw IoError(path + ": shape mismatch for '" + name + "'");
    *tensors[i].second = m;
  }
  return p;
}

AdamState adam_init(const std::vector<std::pair<std::string, Matrix*>>& params,
                    double lr) {
  AdamState s;
  s.lr = lr;
  for (const auto& [name, m] : params) {
    s.m.push_back(Matrix::Zero(m->rows(), m->cols()));
    s.v.push_back(Matrix::Zero(m->rows(), m->cols()));
  }
  return s;
}

void adam_step(const std::vector<std::pair<std::string, Matrix*>>& params,
               const std::vector<Matrix>& grads, AdamState& s) {
  if (params.size() != grads.size() || params.size() != s.m.size())
    throw ContractError("adam_step: parameter/gradient count mismatch");
  for (std::size_t i = 0; i < grads.size(); ++i) {
    if (!grads[i].allFinite())
      throw NumericError("adam_step: non-finite gradient for '" +
                         params[i].first + "', step rejected");
    if (grads[i].rows() != params[i].second->rows() ||
        grads[i].cols() != params[i].second->cols())
      throw ShapeError("adam_step: gradient shape mismatch for '" +
                       params[i].first + "'");
  }
  s.step += 1;
  const double bc1 = 1.0 - std::pow(s.beta1, static_cast<double>(s.step));
  const double bc2 = 1.0 - std::pow(s.beta2, static_cast<double>(s.step));
  for (std::size_t i = 0; i < grads.size(); ++i) {
    s.m[i] = s.beta1 * s.m[i] + (1.0 - s.beta1) * grads[i];
    s.v[i] = s.beta2 * s.v[i].array().matrix() +
             (1.0 - s.beta2) * grads[i].cwiseProduct(grads[i]);
    Matrix mhat = s.m[i] / bc1;
    Matrix vhat = s.v[i] / bc2;
    params[i].second->array() -=
        s.lr * mhat.array() / (vhat.array().sqrt() + s.eps);
  }
}

}  // namespace dc3
