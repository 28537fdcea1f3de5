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

#include "kbasr/model.hpp"

#include <cmath>
#include <numeric>
#include <stdexcept>

namespace kbasr {

namespace {

void fill_normal(Parameter& p, Rng& rng, double std) {
  for (Eigen::Index i = 0; i < p.value.rows(); ++i)
    for (Eigen::Index j = 0; j < p.value.cols(); ++j)
      p.value(i, j) = std * rng.normal();
}

void fill_const(Parameter& p, double v) { p.value.setConstant(v); }

Mat rowwise_layer_norm(const Mat& x, const Mat& gamma, const Mat& beta,
                       double eps = 1e-5) {
  Mat out(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    double mu = x.row(i).mean();
    double var = (x.row(i).array() - mu).square().mean();
    double is = 1.0 / std::sqrt(var + eps);
    out.row(i) =
        ((x.row(i).array() - mu) * is) * gamma.row(0).array() + beta.row(0).array();
  }
  return out;
}

Mat causal_softmax_plain(const Mat& scores) {
  const Eigen::Index n = scores.rows();
  Mat s = Mat::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    double m = scores(i, 0);
    for (Eigen::Index j = 1; j <= i; ++j) m = std::max(m, scores(i, j));
    double z = 0.0;
    for (Eigen::Index j = 0; j <= i; ++j) {
      s(i, j) = std::exp(scores(i, j) - m);
      z += s(i, j);
    }
    for (Eigen::Index j = 0; j <= i; ++j) s(i, j) /= z;
  }
  return s;
}

}  // namespace

// ---------------------------------------------------------------------------
// Projector

void Projector::init(const ProjectorConfig& c, Rng& rng) {
  cfg = c;
  const int in = c.stack * c.feat_dim;
  w1 = Parameter("proj.w1", in, c.hidden);
  b1 = Parameter("proj.b1", 1, c.hidden);
  w2 = Parameter("proj.w2", c.hidden, c.out_dim);
  b2 = Parameter("proj.b2", 1, c.out_dim);
  fill_normal(w1, rng, 1.0 / std::sqrt(static_cast<double>(in)));
  fill_const(b1, 0.0);
  fill_normal(w2, rng, 1.0 / std::sqrt(static_cast<double>(c.hidden)));
  fill_const(b2, 0.0);
}

std::vector<Parameter*> Projector::parameters() { return {&w1, &b1, &w2, &b2}; }

long long Projector::param_count() const {
  return w1.value.size() + b1.value.size() + w2.value.size() + b2.value.size();
}

Mat stack_frames(const Mat& frames, int stack) {
  if (stack < 1) throw ValidationError("stack_frames: stack must be >= 1");
  const Eigen::Index t = frames.rows();
  if (t < stack)
    throw ValidationError("stack_frames: utterance too short (" +
                          std::to_string(t) + " frames < stack " +
                          std::to_string(stack) + ")");
  const Eigen::Index f = frames.cols();
  const Eigen::Index s = t / stack;
  Mat out(s, static_cast<Eigen::Index>(stack) * f);
  for (Eigen::Index i = 0; i < s; ++i)
    for (int k = 0; k < stack; ++k)
      out.block(i, static_cast<Eigen::Index>(k) * f, 1, f) =
          frames.row(i * stack + k);
  return out;
}

Mat project(const FeatureSequence& features, const Projector& proj) {
  if (features.frames.cols() != proj.cfg.feat_dim)
    throw ValidationError("project: feature dimension mismatch");
  Mat stacked = stack_frames(features.frames, proj.cfg.stack);
  Mat h = (stacked * proj.w1.value).rowwise() + proj.b1.value.row(0);
  h = h.cwiseMax(0.0);
  return (h * proj.w2.value).rowwise() + proj.b2.value.row(0);
}

Tape::Id projector_forward(Tape& t, Tape::Id stacked, Projector& proj) {
  Tape::Id h = t.add_row_broadcast(t.matmul(stacked, t.leaf(proj.w1)), t.leaf(proj.b1));
  h = t.relu(h);
  return t.add_row_broadcast(t.matmul(h, t.leaf(proj.w2)), t.leaf(proj.b2));
}

// ---------------------------------------------------------------------------
// Causal LM

void CausalLm::init(const LmConfig& c, Rng& rng) {
  if (c.vocab_size < 1) throw ValidationError("CausalLm: vocab_size must be >= 1");
  if (c.dim % c.heads != 0)
    throw ValidationError("CausalLm: heads must divide dim");
  cfg = c;
  frozen = false;
  tok_emb = Parameter("lm.tok_emb", c.vocab_size, c.dim);
  pos_emb = Parameter("lm.pos_emb", c.max_positions, c.dim);
  fill_normal(tok_emb, rng, 0.02);
  fill_normal(pos_emb, rng, 0.01);
  blocks.clear();
  const double wstd = 1.0 / std::sqrt(static_cast<double>(c.dim));
  const double fstd = 1.0 / std::sqrt(static_cast<double>(c.ffn_dim));
  for (int b = 0; b < c.layers; ++b) {
    AttnBlock blk;
    const std::string prefix = "lm.b" + std::to_string(b) + ".";
    blk.ln1_g = Parameter(prefix + "ln1_g", 1, c.dim);
    blk.ln1_b = Parameter(prefix + "ln1_b", 1, c.dim);
    blk.wq = Parameter(prefix + "wq", c.dim, c.dim);
    blk.wk = Parameter(prefix + "wk", c.dim, c.dim);
    blk.wv = Parameter(prefix + "wv", c.dim, c.dim);
    blk.wo = Parameter(prefix + "wo", c.dim, c.dim);
    blk.ln2_g = Parameter(prefix + "ln2_g", 1, c.dim);
    blk.ln2_b = Parameter(prefix + "ln2_b", 1, c.dim);
    blk.ff_w1 = Parameter(prefix + "ff_w1", c.dim, c.ffn_dim);
    blk.ff_b1 = Parameter(prefix + "ff_b1", 1, c.ffn_dim);
    blk.ff_w2 = Parameter(prefix + "ff_w2", c.ffn_dim, c.dim);
    blk.ff_b2 = Parameter(prefix + "ff_b2", 1, c.dim);
    fill_const(blk.ln1_g, 1.0);
    fill_const(blk.ln1_b, 0.0);
    fill_normal(blk.wq, rng, wstd);
    fill_normal(blk.wk, rng, wstd);
    fill_normal(blk.wv, rng, wstd);
    fill_normal(blk.wo, rng, wstd);
    fill_const(blk.ln2_g, 1.0);
    fill_const(blk.ln2_b, 0.0);
    fill_normal(blk.ff_w1, rng, wstd);
    fill_const(blk.ff_b1, 0.0);
    fill_normal(blk.ff_w2, rng, fstd);
    fill_const(blk.ff_b2, 0.0);
    blocks.push_back(std::move(blk));
  }
  lnf_g = Parameter("lm.lnf_g", 1, c.dim);
  lnf_b = Parameter("lm.lnf_b", 1, c.dim);
  fill_const(lnf_g, 1.0);
  fill_const(lnf_b, 0.0);
}

void CausalLm::set_frozen(bool f) {
  frozen = f;
  for (Parameter* p : parameters()) {
    p->trainable = !f;
    if (f) p->grad.resize(0, 0);
  }
}

std::vector<Parameter*> CausalLm::parameters() {
  std::vector<Parameter*> out = {&tok_emb, &pos_emb};
  for (auto& b : blocks) {
    out.insert(out.end(), {&b.ln1_g, &b.ln1_b, &b.wq, &b.wk, &b.wv, &b.wo,
                           &b.ln2_g, &b.ln2_b, &b.ff_w1, &b.ff_b1, &b.ff_w2,
                           &b.ff_b2});
  }
  out.push_back(&lnf_g);
  out.push_back(&lnf_b);
  return out;
}

std::vector<const Parameter*> CausalLm::parameters() const {
  auto mut = const_cast<CausalLm*>(this)->parameters();
  return {mut.begin(), mut.end()};
}

long long CausalLm::param_count() const {
  long long n = 0;
  for (const Parameter* p : parameters()) n += p->value.size();
  return n;
}

// ---------------------------------------------------------------------------
// LoRA

void LoraAdapter::init(const LmConfig& lm_cfg, const LoraConfig& c, Rng& rng) {
  if (c.rank < 1) throw ValidationError("LoraAdapter: rank must be >= 1");
  cfg = c;
  layers.clear();
  const double dstd = 1.0 / std::sqrt(static_cast<double>(lm_cfg.dim));
  const char* names[4] = {"q", "k", "v", "o"};
  for (int b = 0; b < lm_cfg.layers; ++b) {
    std::array<LoraPair, 4> arr;
    for (int m = 0; m < 4; ++m) {
      const std::string prefix =
          "lora.b" + std::to_string(b) + "." + names[m] + ".";
      arr[m].down = Parameter(prefix + "down", lm_cfg.dim, c.rank);
      arr[m].up = Parameter(prefix + "up", c.rank, lm_cfg.dim);
      fill_normal(arr[m].down, rng, dstd);
      fill_const(arr[m].up, 0.0);  // fresh adapter acts as the identity
    }
    layers.push_back(std::move(arr));
  }
}

std::vector<Parameter*> LoraAdapter::parameters() {
  std::vector<Parameter*> out;
  for (auto& layer : layers)
    for (auto& pair : layer) {
      out.push_back(&pair.down);
      out.push_back(&pair.up);
    }
  return out;
}

long long LoraAdapter::param_count() const {
  long long n = 0;
  for (const auto& layer : layers)
    for (const auto& pair : layer) n += pair.down.value.size() + pair.up.value.size();
  return n;
}

long long count_lora_params(long long dim, long long layers, long long adapted,
                            long long rank) {
  return layers * adapted * rank * (dim + dim);
}

CausalLm merge_lora(const CausalLm& lm, const LoraAdapter& lora) {
  if (static_cast<int>(lora.layers.size()) != lm.cfg.layers)
    throw ValidationError("merge_lora: layer count mismatch");
  CausalLm merged = lm;
  const double s = lora.scaling();
  for (std::size_t b = 0; b < lora.layers.size(); ++b) {
    Parameter* targets[4] = {&merged.blocks[b].wq, &merged.blocks[b].wk,
                             &merged.blocks[b].wv, &merged.blocks[b].wo};
    for (int m = 0; m < 4; ++m) {
      const LoraPair& pair = lora.layers[b][m];
      if (pair.down.value.rows() != targets[m]->value.rows() ||
          pair.up.value.cols() != targets[m]->value.cols())
        throw ValidationError("merge_lora: shape mismatch at " + pair.down.name);
      targets[m]->value += s * (pair.down.value * pair.up.value);
    }
  }
  return merged;
}

// ---------------------------------------------------------------------------
// Forward passes

namespace {

std::vector<int> sequence_token_ids(const AssembledSequence& seq) {
  std::vector<int> ids = seq.prompt_ids;
  ids.insert(ids.end(), seq.target_ids.begin(), seq.target_ids.end());
  return ids;
}

void check_token_range(const std::vector<int>& ids, int vocab) {
  for (int id : ids)
    if (id < 0 || id >= vocab)
      throw ValidationError("lm_forward: token id out of vocab range: " +
                            std::to_string(id));
}

}  // namespace

Mat lm_forward(const AssembledSequence& seq, const Mat& speech_embeds,
               const CausalLm& lm, const LoraAdapter* lora) {
  const int dim = lm.cfg.dim;
  if (speech_embeds.rows() != seq.speech_embed_count || speech_embeds.cols() != dim)
    throw ValidationError("lm_forward: speech embedding shape mismatch");
  const std::vector<int> text_ids = sequence_token_ids(seq);
  check_token_range(text_ids, lm.cfg.vocab_size);
  const Eigen::Index n = seq.total_positions();
  if (n > lm.cfg.max_positions)
    throw ValidationError("lm_forward: sequence longer than max_positions");

  Mat x(n, dim);
  x.topRows(speech_embeds.rows()) = speech_embeds;
  for (std::size_t i = 0; i < text_ids.size(); ++i)
    x.row(static_cast<Eigen::Index>(seq.speech_embed_count) + i) =
        lm.tok_emb.value.row(text_ids[i]);
  for (Eigen::Index i = 0; i < n; ++i) x.row(i) += lm.pos_emb.value.row(i);

  const int dh = dim / lm.cfg.heads;
  const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));
  const double lscale = lora ? lora->scaling() : 0.0;

  for (int b = 0; b < lm.cfg.layers; ++b) {
    const AttnBlock& blk = lm.blocks[b];
    Mat xn = rowwise_layer_norm(x, blk.ln1_g.value, blk.ln1_b.value);
    const Parameter* base[4] = {&blk.wq, &blk.wk, &blk.wv, &blk.wo};
    auto apply = [&](int m, const Mat& in) {
      Mat y = in * base[m]->value;
      if (lora) {
        const LoraPair& pair = lora->layers[b][m];
        y += lscale * ((in * pair.down.value) * pair.up.value);
      }
      return y;
    };
    Mat q = apply(0, xn);
    Mat k = apply(1, xn);
    Mat v = apply(2, xn);
    Mat merged(n, dim);
    for (int h = 0; h < lm.cfg.heads; ++h) {
      Mat qh = q.middleCols(h * dh, dh);
      Mat kh = k.middleCols(h * dh, dh);
      Mat vh = v.middleCols(h * dh, dh);
      Mat attn = causal_softmax_plain((qh * kh.transpose()) * inv_sqrt_dh);
      merged.middleCols(h * dh, dh) = attn * vh;
    }
    x += apply(3, merged);
    Mat x1n = rowwise_layer_norm(x, blk.ln2_g.value, blk.ln2_b.value);
    Mat ff = ((x1n * blk.ff_w1.value).rowwise() + blk.ff_b1.value.row(0)).cwiseMax(0.0);
    x += (ff * blk.ff_w2.value).rowwise() + blk.ff_b2.value.row(0);
  }
  Mat xf = rowwise_layer_norm(x, lm.lnf_g.value, lm.lnf_b.value);
  return xf * lm.tok_emb.value.transpose();
}

Tape::Id lm_forward_tape(Tape& t, CausalLm& lm, LoraAdapter* lora,
                         Tape::Id speech_embeds, const AssembledSequence& seq,
                         const LoraRuntime& rt) {
  const int dim = lm.cfg.dim;
  if (t.value(speech_embeds).rows() != seq.speech_embed_count ||
      t.value(speech_embeds).cols() != dim)
    throw ValidationError("lm_forward_tape: speech embedding shape mismatch");
  const std::vector<int> text_ids = sequence_token_ids(seq);
  check_token_range(text_ids, lm.cfg.vocab_size);
  const int n = seq.total_positions();
  if (n > lm.cfg.max_positions)
    throw ValidationError("lm_forward_tape: sequence longer than max_positions");

  Tape::Id emb = t.leaf(lm.tok_emb);
  Tape::Id x;
  if (text_ids.empty()) {
    x = speech_embeds;
  } else {
    x = t.concat_rows({speech_embeds, t.gather_rows(emb, text_ids)});
  }
  std::vector<int> positions(n);
  std::iota(positions.begin(), positions.end(), 0);
  x = t.add(x, t.gather_rows(t.leaf(lm.pos_emb), positions));

  const int dh = dim / lm.cfg.heads;
  const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));
  const double lscale = lora ? lora->scaling() : 0.0;

  for (int b = 0; b < lm.cfg.layers; ++b) {
    AttnBlock& blk = lm.blocks[b];
    Tape::Id xn = t.layer_norm(x, t.leaf(blk.ln1_g), t.leaf(blk.ln1_b));
    Parameter* base[4] = {&blk.wq, &blk.wk, &blk.wv, &blk.wo};
    auto apply = [&](int m, Tape::Id in) {
      Tape::Id y = t.matmul(in, t.leaf(*base[m]));
      if (lora) {
        LoraPair& pair = lora->layers[b][m];
        Tape::Id lin = in;
        if (rt.training && lora->cfg.dropout > 0.0) {
          if (!rt.dropout_rng)
            throw ValidationError("lm_forward_tape: dropout requires an rng");
          lin = t.dropout(in, lora->cfg.dropout, *rt.dropout_rng);
        }
        Tape::Id lo = t.matmul(t.matmul(lin, t.leaf(pair.down)), t.leaf(pair.up));
        y = t.add(y, t.scale(lo, lscale));
      }
      return y;
    };
    Tape::Id q = apply(0, xn);
    Tape::Id k = apply(1, xn);
    Tape::Id v = apply(2, xn);
    std::vector<Tape::Id> heads;
    heads.reserve(lm.cfg.heads);
    for (int h = 0; h < lm.cfg.heads; ++h) {
      Tape::Id qh = t.cols(q, h * dh, dh);
      Tape::Id kh = t.cols(k, h * dh, dh);
      Tape::Id vh = t.cols(v, h * dh, dh);
      Tape::Id attn = t.causal_softmax(t.scale(t.matmul(qh, t.transpose(kh)), inv_sqrt_dh));
      heads.push_back(t.matmul(attn, vh));
    }
    Tape::Id merged = t.concat_cols(heads);
    x = t.add(x, apply(3, merged));
    Tape::Id x1n = t.layer_norm(x, t.leaf(blk.ln2_g), t.leaf(blk.ln2_b));
    Tape::Id ff = t.relu(
        t.add_row_broadcast(t.matmul(x1n, t.leaf(blk.ff_w1)), t.leaf(blk.ff_b1)));
    ff = t.add_row_broadcast(t.matmul(ff, t.leaf(blk.ff_w2)), t.leaf(blk.ff_b2));
    x = t.add(x, ff);
  }
  Tape::Id xf = t.layer_norm(x, t.leaf(lm.lnf_g), t.leaf(lm.lnf_b));
  return t.matmul(xf, t.transpose(emb));
}

std::vector<std::pair<int, int>> ce_pairs(const AssembledSequence& seq) {
  const int base = seq.speech_embed_count + static_cast<int>(seq.prompt_ids.size());
  std::vector<std::pair<int, int>> pairs;
  pairs.reserve(seq.target_ids.size());
  for (std::size_t j = 0; j < seq.target_ids.size(); ++j)
    pairs.emplace_back(base + static_cast<int>(j) - 1, seq.target_ids[j]);
  if (pairs.empty())
    throw ValidationError("masked_ce_loss: sequence has zero masked positions");
  return pairs;
}

double masked_ce_loss(const Mat& logits, const AssembledSequence& seq) {
  auto pairs = ce_pairs(seq);
  if (logits.rows() != seq.total_positions())
    throw ValidationError("masked_ce_loss: logits do not cover all positions");
  double total = 0.0;
  for (auto [row, tid] : pairs) {
    double m = logits.row(row).maxCoeff();
    double z = (logits.row(row).array() - m).exp().sum();
    total += -(logits(row, tid) - m - std::log(z));
  }
  return total / static_cast<double>(pairs.size());
}

Tape::Id masked_ce_loss_tape(Tape& t, Tape::Id logits, const AssembledSequence& seq) {
  auto pairs = ce_pairs(seq);
  if (t.value(logits).rows() != seq.total_positions())
    throw ValidationError("masked_ce_loss: logits do not cover all positions");
  return t.masked_ce(logits, pairs);
}

}  // namespace kbasr
