// Copyright 2026 The kbasr Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef KBASR_TAPE_HPP_
#define KBASR_TAPE_HPP_

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "kbasr/rng.hpp"

namespace kbasr {

using Mat = Eigen::MatrixXd;

// A named dense tensor with its gradient buffer. Frozen parameters keep an
// empty gradient: backward never writes into them.
struct Parameter {
  std::string name;
  Mat value;
  Mat grad;
  bool trainable = true;

  Parameter() = default;
  Parameter(std::string n, Eigen::Index rows, Eigen::Index cols)
      : name(std::move(n)), value(Mat::Zero(rows, cols)) {}

  void zero_grad() {
    if (trainable) grad = Mat::Zero(value.rows(), value.cols());
  }
};

// Reverse-mode autodiff over double matrices. A tape is built per training
// step and discarded; reverse creation order is a valid topological order.
// Single-threaded by construction.
class Tape {
 public:
  using Id = std::int32_t;

  // Leaf for an external parameter; memoized so each parameter appears once
  // per tape and gradient contributions accumulate in one node.
  Id leaf(Parameter& p);
  Id constant(Mat v);
  // A differentiable input that is not a Parameter (for tests).
  Id input(Mat v);

  const Mat& value(Id id) const { return nodes_[id].value; }
  const Mat& grad(Id id) const { return nodes_[id].grad; }
  double scalar(Id id) const { return nodes_[id].value(0, 0); }

  Id matmul(Id a, Id b);
  Id add(Id a, Id b);
  // a: N x C, bias: 1 x C added to every row.
  Id add_row_broadcast(Id a, Id bias);
  Id scale(Id a, double c);
  Id relu(Id a);
  Id transpose(Id a);
  // Column block [c0, c0+n).
  Id cols(Id a, int c0, int n);
  Id concat_cols(const std::vector<Id>& parts);
  Id concat_rows(const std::vector<Id>& parts);
  // Rows of table indexed by row_ids (may repeat); grad scatter-adds.
  Id gather_rows(Id table, std::vector<int> row_ids);
  // Row-wise softmax over a square matrix where position i attends only to
  // columns <= i; masked entries are exactly zero.
  Id causal_softmax(Id a);
  // Row-wise layer normalization; gamma/beta are 1 x C.
  Id layer_norm(Id x, Id gamma, Id beta, double eps = 1e-5);
  // Inverted dropout; draws one uniform per element in row-major order.
  Id dropout(Id a, double p, Rng& rng);
  // Scalar mean of 1x1 nodes.
  Id mean_of(const std::vector<Id>& scalars);
  // Mean negative log-likelihood over (source_row, target_id) pairs against
  // row-wise softmax of logits. pairs must be non-empty.
  Id masked_ce(Id logits, const std::vector<std::pair<int, int>>& pairs);

  void backward(Id loss);

  std::size_t node_count() const { return nodes_.size(); }

 private:
  struct Node {
    Mat value;
    Mat grad;
    bool needs_grad = false;
    std::function<void(Tape&, const Mat&)> back;  // receives this node's grad
  };

  Id push(Mat value, bool needs_grad, std::function<void(Tape&, const Mat&)> back);
  bool ng(Id id) const { return nodes_[id].needs_grad; }
  void accum(Id id, const Mat& g);

  std::vector<Node> nodes_;
  std::unordered_map<const Parameter*, Id> leaf_cache_;
};

}  // namespace kbasr

#endif  // KBASR_TAPE_HPP_
