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

#include "kbasr/tape.hpp"

#include <cmath>
#include <stdexcept>

namespace kbasr {

Tape::Id Tape::push(Mat value, bool needs_grad,
                    std::function<void(Tape&, const Mat&)> back) {
  Node n;
  n.value = std::move(value);
  n.needs_grad = needs_grad;
  if (needs_grad) n.grad = Mat::Zero(n.value.rows(), n.value.cols());
  n.back = std::move(back);
  nodes_.push_back(std::move(n));
  return static_cast<Id>(nodes_.size() - 1);
}

void Tape::accum(Id id, const Mat& g) {
  if (nodes_[id].needs_grad) nodes_[id].grad += g;
}

Tape::Id Tape::leaf(Parameter& p) {
  auto it = leaf_cache_.find(&p);
  if (it != leaf_cache_.end()) return it->second;
  Parameter* pp = &p;
  Id id = push(p.value, p.trainable, [pp](Tape&, const Mat& g) {
    if (!pp->trainable) return;
    if (pp->grad.rows() != pp->value.rows() || pp->grad.cols() != pp->value.cols())
      pp->grad = Mat::Zero(pp->value.rows(), pp->value.cols());
    pp->grad += g;
  });
  leaf_cache_.emplace(pp, id);
  return id;
}

Tape::Id Tape::constant(Mat v) { return push(std::move(v), false, nullptr); }

Tape::Id Tape::input(Mat v) {
  return push(std::move(v), true, nullptr);
}

Tape::Id Tape::matmul(Id a, Id b) {
  const Mat& va = value(a);
  const Mat& vb = value(b);
  if (va.cols() != vb.rows()) throw std::invalid_argument("matmul: shape mismatch");
  Mat out = va * vb;
  return push(std::move(out), ng(a) || ng(b), [a, b](Tape& t, const Mat& g) {
    if (t.ng(a)) t.accum(a, g * t.value(b).transpose());
    if (t.ng(b)) t.accum(b, t.value(a).transpose() * g);
  });
}

Tape::Id Tape::add(Id a, Id b) {
  const Mat& va = value(a);
  const Mat& vb = value(b);
  if (va.rows() != vb.rows() || va.cols() != vb.cols())
    throw std::invalid_argument("add: shape mismatch");
  return push(va + vb, ng(a) || ng(b), [a, b](Tape& t, const Mat& g) {
    t.accum(a, g);
    t.accum(b, g);
  });
}

Tape::Id Tape::add_row_broadcast(Id a, Id bias) {
  const Mat& va = value(a);
  const Mat& vb = value(bias);
  if (vb.rows() != 1 || vb.cols() != va.cols())
    throw std::invalid_argument("add_row_broadcast: bias shape mismatch");
  Mat out = va.rowwise() + vb.row(0);
  return push(std::move(out), ng(a) || ng(bias), [a, bias](Tape& t, const Mat& g) {
    t.accum(a, g);
    if (t.ng(bias)) t.accum(bias, g.colwise().sum());
  });
}

Tape::Id Tape::scale(Id a, double c) {
  return push(value(a) * c, ng(a), [a, c](Tape& t, const Mat& g) {
    t.accum(a, g * c);
  });
}

Tape::Id Tape::relu(Id a) {
  Mat out = value(a).cwiseMax(0.0);
  return push(std::move(out), ng(a), [a](Tape& t, const Mat& g) {
    if (!t.ng(a)) return;
    Mat masked = (t.value(a).array() > 0.0).cast<double>() * g.array();
    t.accum(a, masked);
  });
}

Tape::Id Tape::transpose(Id a) {
  return push(value(a).transpose(), ng(a), [a](Tape& t, const Mat& g) {
    t.accum(a, g.transpose());
  });
}

Tape::Id Tape::cols(Id a, int c0, int n) {
  const Mat& va = value(a);
  if (c0 < 0 || n < 0 || c0 + n > va.cols())
    throw std::invalid_argument("cols: block out of range");
  Mat out = va.middleCols(c0, n);
  return push(std::move(out), ng(a), [a, c0, n](Tape& t, const Mat& g) {
    if (!t.ng(a)) return;
    Mat full = Mat::Zero(t.value(a).rows(), t.value(a).cols());
    full.middleCols(c0, n) = g;
    t.accum(a, full);
  });
}

Tape::Id Tape::concat_cols(const std::vector<Id>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: empty");
  Eigen::Index rows = value(parts[0]).rows();
  Eigen::Index total = 0;
  bool needs = false;
  for (Id p : parts) {
    if (value(p).rows() != rows) throw std::invalid_argument("concat_cols: row mismatch");
    total += value(p).cols();
    needs = needs || ng(p);
  }
  Mat out(rows, total);
  Eigen::Index c = 0;
  for (Id p : parts) {
    out.middleCols(c, value(p).cols()) = value(p);
    c += value(p).cols();
  }
  return push(std::move(out), needs, [parts](Tape& t, const Mat& g) {
    Eigen::Index c = 0;
    for (Id p : parts) {
      Eigen::Index w = t.value(p).cols();
      t.accum(p, g.middleCols(c, w));
      c += w;
    }
  });
}

Tape::Id Tape::concat_rows(const std::vector<Id>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows: empty");
  Eigen::Index cols = value(parts[0]).cols();
  Eigen::Index total = 0;
  bool needs = false;
  for (Id p : parts) {
    if (value(p).cols() != cols) throw std::invalid_argument("concat_rows: col mismatch");
    total += value(p).rows();
    needs = needs || ng(p);
  }
  Mat out(total, cols);
  Eigen::Index r = 0;
  for (Id p : parts) {
    out.middleRows(r, value(p).rows()) = value(p);
    r += value(p).rows();
  }
  return push(std::move(out), needs, [parts](Tape& t, const Mat& g) {
    Eigen::Index r = 0;
    for (Id p : parts) {
      Eigen::Index h = t.value(p).rows();
      t.accum(p, g.middleRows(r, h));
      r += h;
    }
  });
}

Tape::Id Tape::gather_rows(Id table, std::vector<int> row_ids) {
  const Mat& vt = value(table);
  for (int r : row_ids) {
    if (r < 0 || r >= vt.rows())
      throw std::invalid_argument("gather_rows: row id out of range: " + std::to_string(r));
  }
  Mat out(static_cast<Eigen::Index>(row_ids.size()), vt.cols());
  for (std::size_t i = 0; i < row_ids.size(); ++i) out.row(i) = vt.row(row_ids[i]);
  return push(std::move(out), ng(table),
              [table, ids = std::move(row_ids)](Tape& t, const Mat& g) {
                if (!t.ng(table)) return;
                Mat full = Mat::Zero(t.value(table).rows(), t.value(table).cols());
                for (std::size_t i = 0; i < ids.size(); ++i)
                  full.row(ids[i]) += g.row(i);
                t.accum(table, full);
              });
}

Tape::Id Tape::causal_softmax(Id a) {
  const Mat& va = value(a);
  if (va.rows() != va.cols())
    throw std::invalid_argument("causal_softmax: matrix must be square");
  const Eigen::Index n = va.rows();
  Mat s = Mat::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    double m = va(i, 0);
    for (Eigen::Index j = 1; j <= i; ++j) m = std::max(m, va(i, j));
    double z = 0.0;
    for (Eigen::Index j = 0; j <= i; ++j) {
      s(i, j) = std::exp(va(i, j) - m);
      z += s(i, j);
    }
    for (Eigen::Index j = 0; j <= i; ++j) s(i, j) /= z;
  }
  Mat cached = s;
  return push(std::move(s), ng(a), [a, cached](Tape& t, const Mat& g) {
    if (!t.ng(a)) return;
    const Eigen::Index n = cached.rows();
    Mat dx = Mat::Zero(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
      double dot = 0.0;
      for (Eigen::Index j = 0; j <= i; ++j) dot += g(i, j) * cached(i, j);
      for (Eigen::Index j = 0; j <= i; ++j)
        dx(i, j) = cached(i, j) * (g(i, j) - dot);
    }
    t.accum(a, dx);
  });
}

Tape::Id Tape::layer_norm(Id x, Id gamma, Id beta, double eps) {
  const Mat& vx = value(x);
  const Mat& vg = value(gamma);
  const Mat& vb = value(beta);
  const Eigen::Index n = vx.rows(), d = vx.cols();
  if (vg.rows() != 1 || vg.cols() != d || vb.rows() != 1 || vb.cols() != d)
    throw std::invalid_argument("layer_norm: gamma/beta must be 1 x cols");

  Mat xhat(n, d);
  Eigen::VectorXd inv_sigma(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    double mu = vx.row(i).mean();
    double var = (vx.row(i).array() - mu).square().mean();
    double is = 1.0 / std::sqrt(var + eps);
    inv_sigma(i) = is;
    xhat.row(i) = (vx.row(i).array() - mu) * is;
  }
  Mat out = (xhat.array().rowwise() * vg.row(0).array()).rowwise() + vb.row(0).array();
  return push(std::move(out), ng(x) || ng(gamma) || ng(beta),
              [x, gamma, beta, xhat, inv_sigma](Tape& t, const Mat& g) {
                const Eigen::Index n = xhat.rows(), d = xhat.cols();
                if (t.ng(beta)) t.accum(beta, g.colwise().sum());
                if (t.ng(gamma))
                  t.accum(gamma, (g.array() * xhat.array()).colwise().sum().matrix());
                if (t.ng(x)) {
                  Mat dx(n, d);
                  const auto& gam = t.value(gamma);
                  for (Eigen::Index i = 0; i < n; ++i) {
                    Eigen::RowVectorXd gi = g.row(i).array() * gam.row(0).array();
                    double mean_g = gi.mean();
                    double mean_gx = (gi.array() * xhat.row(i).array()).mean();
                    dx.row(i) = (gi.array() - mean_g - xhat.row(i).array() * mean_gx) *
                                inv_sigma(i);
                  }
                  t.accum(x, dx);
                }
              });
}

Tape::Id Tape::dropout(Id a, double p, Rng& rng) {
  if (p < 0.0 || p >= 1.0) throw std::invalid_argument("dropout: p out of range");
  const Mat& va = value(a);
  Mat mask(va.rows(), va.cols());
  const double keep_scale = 1.0 / (1.0 - p);
  for (Eigen::Index i = 0; i < va.rows(); ++i)
    for (Eigen::Index j = 0; j < va.cols(); ++j)
      mask(i, j) = rng.uniform() < p ? 0.0 : keep_scale;
  Mat out = va.cwiseProduct(mask);
  return push(std::move(out), ng(a), [a, mask](Tape& t, const Mat& g) {
    t.accum(a, g.cwiseProduct(mask));
  });
}

Tape::Id Tape::mean_of(const std::vector<Id>& scalars) {
  if (scalars.empty()) throw std::invalid_argument("mean_of: empty");
  double sum = 0.0;
  bool needs = false;
  for (Id s : scalars) {
    if (value(s).rows() != 1 || value(s).cols() != 1)
      throw std::invalid_argument("mean_of: inputs must be scalars");
    sum += value(s)(0, 0);
    needs = needs || ng(s);
  }
  Mat out(1, 1);
  out(0, 0) = sum / static_cast<double>(scalars.size());
  return push(std::move(out), needs, [scalars](Tape& t, const Mat& g) {
    Mat share = g / static_cast<double>(scalars.size());
    for (Id s : scalars) t.accum(s, share);
  });
}

Tape::Id Tape::masked_ce(Id logits, const std::vector<std::pair<int, int>>& pairs) {
  if (pairs.empty()) throw std::invalid_argument("masked_ce: zero masked positions");
  const Mat& vl = value(logits);
  const Eigen::Index v = vl.cols();
  Mat probs(static_cast<Eigen::Index>(pairs.size()), v);
  double total = 0.0;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    auto [row, tid] = pairs[i];
    if (row < 0 || row >= vl.rows())
      throw std::invalid_argument("masked_ce: source row out of range");
    if (tid < 0 || tid >= v)
      throw std::invalid_argument("masked_ce: target id out of range");
    double m = vl.row(row).maxCoeff();
    Eigen::RowVectorXd e = (vl.row(row).array() - m).exp();
    double z = e.sum();
    probs.row(i) = e / z;
    total += -(vl(row, tid) - m - std::log(z));
  }
  Mat out(1, 1);
  out(0, 0) = total / static_cast<double>(pairs.size());
  return push(std::move(out), ng(logits),
              [logits, pairs, probs](Tape& t, const Mat& g) {
                if (!t.ng(logits)) return;
                const double scale = g(0, 0) / static_cast<double>(pairs.size());
                Mat dl = Mat::Zero(t.value(logits).rows(), t.value(logits).cols());
                for (std::size_t i = 0; i < pairs.size(); ++i) {
                  auto [row, tid] = pairs[i];
                  dl.row(row) += probs.row(i) * scale;
                  dl(row, tid) -= scale;
                }
                t.accum(logits, dl);
              });
}

void Tape::backward(Id loss) {
  Node& l = nodes_[loss];
  if (l.value.rows() != 1 || l.value.cols() != 1)
    throw std::invalid_argument("backward: loss must be scalar");
  if (!l.needs_grad) return;
  l.grad(0, 0) = 1.0;
  for (Id id = static_cast<Id>(nodes_.size()) - 1; id >= 0; --id) {
    Node& n = nodes_[id];
    if (!n.needs_grad || !n.back) continue;
    // Copy the grad out first: the callback may append nothing but does
    // mutate other nodes' grads; this node's grad is final by topo order.
    Mat g = n.grad;
    n.back(*this, g);
  }
}

}  // namespace kbasr
