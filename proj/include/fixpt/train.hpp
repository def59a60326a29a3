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

#ifndef FIXPT_TRAIN_HPP
#define FIXPT_TRAIN_HPP

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "fixpt/anderson.hpp"
#include "fixpt/deq.hpp"
#include "fixpt/dense.hpp"

namespace fixpt {

struct Dataset {
  Matrix features;  ///< n x d
  std::vector<std::size_t> labels;

  std::size_t size() const noexcept { return labels.size(); }
};

struct BlobDataset {
  Dataset train;  ///< first n - n/5 shuffled points
  Dataset test;   ///< last n/5
  std::size_t classes = 0;
  std::uint64_t seed = 0;
};

/// Unit-variance Gaussian clusters. Class c sits at separation * s_c where
/// s_c is a +-1 vector; with two classes the centers are -separation * 1
/// and +separation * 1. Labels are balanced (point i has label i mod classes).
BlobDataset generate_blobs(std::size_t n, std::size_t d, std::size_t classes,
                           double separation, std::uint64_t seed);

/// Mean of -log softmax(logits)[label] over rows.
double cross_entropy(const Matrix& logits, const std::vector<std::size_t>& labels);

/// Linear input injection, one DEQ layer and a linear readout:
///   x = W_in f,  z* = deq(z*, x),  logits = W_out z* + b_out.
struct DeqClassifier {
  Matrix w_in;   ///< d x features
  DeqParams deq;
  Matrix w_out;  ///< classes x d
  Vector b_out;

  std::size_t classes() const noexcept { return w_out.rows(); }
};

/// `deq_gain` multiplies the 1/sqrt(fan-in) DEQ weights; small gains keep
/// the layer contractive at initialization.
DeqClassifier init_classifier(std::size_t features, std::size_t d, std::size_t hidden,
                              std::size_t groups, std::size_t classes, std::uint64_t seed,
                              double deq_gain = 1.0);

struct ModelOutput {
  Matrix logits;     ///< n x classes
  StateBatch z_star;
  StateBatch x;      ///< injected input
  std::size_t fevals = 0;
  bool converged = false;
};

/// Solves for the equilibrium from z0 = 0 with the chosen solver, then reads out.
ModelOutput model_forward(const DeqClassifier& model, const Matrix& features, SolverKind solver,
                          const AndersonConfig& cfg);

/// Fraction of argmax(logits) == label. Throws InvalidArgument on an empty set.
double evaluate_accuracy(const DeqClassifier& model, const Dataset& data, SolverKind solver,
                         const AndersonConfig& cfg);

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double train_accuracy = 0.0;  ///< measured in the epoch's forward pass, before its update
  double test_accuracy = 0.0;   ///< after the epoch's update
  std::size_t cumulative_fevals = 0;  ///< forward + adjoint solver evaluations
  double elapsed_seconds = 0.0;
};

struct TrainReport {
  SolverKind solver = SolverKind::Anderson;
  std::vector<EpochRecord> epochs;
  DeqClassifier model;

  /// First epoch whose train accuracy is >= threshold, or nullptr.
  const EpochRecord* first_reaching(double threshold) const;

  /// epoch,train_loss,train_acc,test_acc,fevals,elapsed_seconds
  std::string to_csv() const;
  std::string summary_json() const;
};

struct TrainOptions {
  std::size_t epochs = 200;
  double lr = 0.5;
  std::uint64_t seed = 0;
  std::size_t state_dim = 32;  ///< DEQ state width; features are injected by W_in
  std::size_t hidden = 64;
  std::size_t groups = 2;
  double deq_gain = 0.25;
  AndersonConfig solver_cfg;   ///< equilibrium solve
  AndersonConfig adjoint_cfg;  ///< backward (adjoint) solve
};

/// Full-batch plain SGD. DEQ-layer and input-injection gradients go through
/// the adjoint solve; the readout gradient is exact. Divergence aborts with
/// the epoch index in the message.
TrainReport train(const BlobDataset& data, SolverKind solver, const TrainOptions& opts);

}  // namespace fixpt

#endif  // FIXPT_TRAIN_HPP
