/*
 * Copyright 2026 The fixpt Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include "fixpt/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <random>
#include <sstream>

#include <json.hpp>

#include "fixpt/errors.hpp"
#include "fixpt/implicit_grad.hpp"

namespace fixpt {

namespace {

StateBatch inject(const Matrix& w_in, const Matrix& features) {
  StateBatch x(features.rows(), w_in.rows());
  for (std::size_t i = 0; i < features.rows(); ++i) {
    const Vector r = matvec(w_in, features.row(i));
    std::copy(r.begin(), r.end(), x.row(i).begin());
  }
  return x;
}

Matrix readout(const DeqClassifier& m, const StateBatch& z) {
  Matrix logits(z.batch(), m.classes());
  for (std::size_t i = 0; i < z.batch(); ++i) {
    const Vector r = matvec(m.w_out, z.row(i));
    for (std::size_t c = 0; c < r.size(); ++c) logits(i, c) = r[c] + m.b_out[c];
  }
  return logits;
}

std::size_t argmax(std::span<const double> v) {
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

double accuracy_of(const Matrix& logits, const std::vector<std::size_t>& labels) {
  std::size_t hits = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) hits += argmax(logits.row(i)) == labels[i];
  return static_cast<double>(hits) / static_cast<double>(labels.size());
}

Dataset take_rows(const Matrix& feats, const std::vector<std::size_t>& labels,
                  const std::vector<std::size_t>& idx) {
  Dataset out;
  out.features = Matrix(idx.size(), feats.cols());
  out.labels.reserve(idx.size());
  for (std::size_t r = 0; r < idx.size(); ++r) {
    const auto src = feats.row(idx[r]);
    std::copy(src.begin(), src.end(), out.features.row(r).begin());
    out.labels.push_back(labels[idx[r]]);
  }
  return out;
}

}  // namespace

BlobDataset generate_blobs(std::size_t n, std::size_t d, std::size_t classes, double separation,
                           std::uint64_t seed) {
  if (classes < 2 || d == 0 || n < classes || !(separation > 0.0) || !std::isfinite(separation)) {
    throw InvalidArgument("generate_blobs: need classes >= 2, d >= 1, n >= classes, separation > 0");
  }
  std::size_t bits = 1;
  while ((std::size_t{1} << bits) < classes) ++bits;

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix feats(n, d);
  std::vector<std::size_t> labels(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t c = i % classes;
    labels[i] = c;
    for (std::size_t j = 0; j < d; ++j) {
      const bool up = (c >> (j % bits)) & 1U;
      feats(i, j) = (up ? separation : -separation) + normal(rng);
    }
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);

  const std::size_t n_test = n / 5;
  BlobDataset out;
  out.classes = classes;
  out.seed = seed;
  out.train = take_rows(feats, labels, {order.begin(), order.end() - static_cast<long>(n_test)});
  out.test = take_rows(feats, labels, {order.end() - static_cast<long>(n_test), order.end()});
  return out;
}

double cross_entropy(const Matrix& logits, const std::vector<std::size_t>& labels) {
  if (logits.rows() != labels.size()) throw InvalidArgument("cross_entropy: row/label mismatch");
  if (labels.empty()) return 0.0;
  double total = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto row = logits.row(i);
    if (labels[i] >= row.size()) throw InvalidArgument("cross_entropy: label out of range");
    const double mx = *std::max_element(row.begin(), row.end());
    double s = 0.0;
    for (double v : row) s += std::exp(v - mx);
    total += (mx + std::log(s)) - row[labels[i]];
  }
  return total / static_cast<double>(labels.size());
}

DeqClassifier init_classifier(std::size_t features, std::size_t d, std::size_t hidden,
                              std::size_t groups, std::size_t classes, std::uint64_t seed,
                              double deq_gain) {
  if (features == 0 || classes < 2) throw InvalidArgument("init_classifier: bad shape");
  DeqClassifier m;
  m.deq = init_params(d, hidden, groups, seed);
  for (double& w : m.deq.w1.data()) w *= deq_gain;
  for (double& w : m.deq.w2.data()) w *= deq_gain;
  std::mt19937_64 rng(seed + 0x5bd1e995ULL);
  std::normal_distribution<double> normal(0.0, 1.0);
  m.w_in = Matrix(d, features);
  const double s_in = 1.0 / std::sqrt(static_cast<double>(features));
  for (double& v : m.w_in.data()) v = s_in * normal(rng);
  m.w_out = Matrix(classes, d);
  const double s_out = 1.0 / std::sqrt(static_cast<double>(d));
  for (double& v : m.w_out.data()) v = s_out * normal(rng);
  m.b_out.assign(classes, 0.0);
  return m;
}

ModelOutput model_forward(const DeqClassifier& model, const Matrix& features, SolverKind solver,
                          const AndersonConfig& cfg) {
  if (features.cols() != model.w_in.cols()) {
    throw InvalidArgument("model_forward: feature width does not match the injection layer");
  }
  const DeqMap f(model.deq);
  ModelOutput out;
  out.x = inject(model.w_in, features);
  SolverTrace t = solve(solver, f, out.x, StateBatch(features.rows(), model.deq.dim()), cfg);
  out.fevals = t.fevals();
  out.converged = t.converged;
  out.z_star = std::move(t.final_state);
  out.logits = readout(model, out.z_star);
  return out;
}

double evaluate_accuracy(const DeqClassifier& model, const Dataset& data, SolverKind solver,
                         const AndersonConfig& cfg) {
  if (data.size() == 0) throw InvalidArgument("evaluate_accuracy: empty dataset");
  const ModelOutput out = model_forward(model, data.features, solver, cfg);
  return accuracy_of(out.logits, data.labels);
}

const EpochRecord* TrainReport::first_reaching(double threshold) const {
  for (const EpochRecord& e : epochs) {
    if (e.train_accuracy >= threshold) return &e;
  }
  return nullptr;
}

std::string TrainReport::to_csv() const {
  std::ostringstream out;
  out << "epoch,train_loss,train_acc,test_acc,fevals,elapsed_seconds\n";
  char buf[256];
  for (const EpochRecord& e : epochs) {
    std::snprintf(buf, sizeof buf, "%zu,%.12e,%.6f,%.6f,%zu,%.9f\n", e.epoch, e.train_loss,
                  e.train_accuracy, e.test_accuracy, e.cumulative_fevals, e.elapsed_seconds);
    out << buf;
  }
  return out.str();
}

std::string TrainReport::summary_json() const {
  nlohmann::json j;
  j["solver"] = to_string(solver);
  j["epochs"] = epochs.size();
  if (!epochs.empty()) {
    const EpochRecord& last = epochs.back();
    j["final"] = {{"train_loss", last.train_loss},
                  {"train_accuracy", last.train_accuracy},
                  {"test_accuracy", last.test_accuracy},
                  {"cumulative_fevals", last.cumulative_fevals},
                  {"elapsed_seconds", last.elapsed_seconds}};
  }
  if (const EpochRecord* hit = first_reaching(0.95)) {
    j["reached_95"] = {{"epoch", hit->epoch}, {"cumulative_fevals", hit->cumulative_fevals}};
  } else {
    j["reached_95"] = nullptr;
  }
  return j.dump(2);
}

TrainReport train(const BlobDataset& data, SolverKind solver, const TrainOptions& opts) {
  opts.solver_cfg.validate();
  opts.adjoint_cfg.validate();
  if (data.train.size() == 0) throw InvalidArgument("train: empty training split");
  if (opts.state_dim == 0) throw InvalidArgument("train: state_dim must be > 0");
  if (opts.epochs == 0) throw InvalidArgument("train: epochs must be >= 1");
  if (!(opts.lr >= 0.0)) throw InvalidArgument("train: lr must be >= 0");

  const std::size_t n = data.train.size();
  const std::size_t nf = data.train.features.cols();
  const std::size_t d = opts.state_dim;
  TrainReport report;
  report.solver = solver;
  report.model =
      init_classifier(nf, d, opts.hidden, opts.groups, data.classes, opts.seed, opts.deq_gain);
  DeqClassifier& m = report.model;
  const std::size_t classes = m.classes();

  std::size_t fevals = 0;
  const double t0 = wall_clock();
  for (std::size_t epoch = 1; epoch <= opts.epochs; ++epoch) {
    try {
      const ModelOutput fwd = model_forward(m, data.train.features, solver, opts.solver_cfg);
      fevals += fwd.fevals;

      EpochRecord rec;
      rec.epoch = epoch;
      rec.train_loss = cross_entropy(fwd.logits, data.train.labels);
      rec.train_accuracy = accuracy_of(fwd.logits, data.train.labels);

      // Softmax cross-entropy gradient with respect to the logits.
      Matrix dlogits = fwd.logits;
      for (std::size_t i = 0; i < n; ++i) {
        auto row = dlogits.row(i);
        const double mx = *std::max_element(row.begin(), row.end());
        double s = 0.0;
        for (double& v : row) s += (v = std::exp(v - mx));
        for (double& v : row) v /= s;
        row[data.train.labels[i]] -= 1.0;
        for (double& v : row) v /= static_cast<double>(n);
      }

      Matrix g_out(classes, d);
      Vector g_bout(classes, 0.0);
      StateBatch dz(n, d);
      for (std::size_t i = 0; i < n; ++i) {
        const auto gl = dlogits.row(i);
        const auto z = fwd.z_star.row(i);
        for (std::size_t c = 0; c < classes; ++c) {
          g_bout[c] += gl[c];
          for (std::size_t j = 0; j < d; ++j) g_out(c, j) += gl[c] * z[j];
        }
        const Vector back = matvec_transposed(m.w_out, gl);
        std::copy(back.begin(), back.end(), dz.row(i).begin());
      }

      const DeqMap f(m.deq);
      const GradResult g = implicit_gradients(f, fwd.x, fwd.z_star, dz, opts.adjoint_cfg, solver);
      fevals += g.adjoint_trace.fevals();

      Matrix g_in(d, nf);
      for (std::size_t i = 0; i < n; ++i) {
        const auto gx = g.grad_x.row(i);
        const auto feat = data.train.features.row(i);
        for (std::size_t r = 0; r < d; ++r)
          for (std::size_t c = 0; c < nf; ++c) g_in(r, c) += gx[r] * feat[c];
      }

      if (opts.lr > 0.0) {
        Vector theta = m.deq.flatten();
        for (std::size_t k = 0; k < theta.size(); ++k) theta[k] -= opts.lr * g.grad_params[k];
        m.deq = m.deq.with_flat(theta);
        for (std::size_t k = 0; k < g_in.data().size(); ++k)
          m.w_in.data()[k] -= opts.lr * g_in.data()[k];
        for (std::size_t k = 0; k < g_out.data().size(); ++k)
          m.w_out.data()[k] -= opts.lr * g_out.data()[k];
        for (std::size_t c = 0; c < classes; ++c) m.b_out[c] -= opts.lr * g_bout[c];
      }

      rec.test_accuracy = data.test.size() == 0
                              ? 0.0
                              : evaluate_accuracy(m, data.test, solver, opts.solver_cfg);
      rec.cumulative_fevals = fevals;
      rec.elapsed_seconds = wall_clock() - t0;
      report.epochs.push_back(rec);
    } catch (const Divergence& e) {
      throw Divergence(std::string("training diverged at epoch ") + std::to_string(epoch) +
                           ": " + e.detail(),
                       e.iteration());
    }
  }
  return report;
}

}  // namespace fixpt
