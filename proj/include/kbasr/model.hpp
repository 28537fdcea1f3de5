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

#ifndef KBASR_MODEL_HPP_
#define KBASR_MODEL_HPP_

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "kbasr/corpus.hpp"
#include "kbasr/prompting.hpp"
#include "kbasr/tape.hpp"

namespace kbasr {

// ---------------------------------------------------------------------------
// Projector: stride-k frame stacking followed by a two-layer MLP, mapping
// encoder-rate features into the decoder embedding space at 1/k of the rate.

struct ProjectorConfig {
  int feat_dim = 32;
  int stack = 5;  // downsample factor k
  int hidden = 128;
  int out_dim = 64;  // decoder embedding dimension
};

struct Projector {
  ProjectorConfig cfg;
  Parameter w1, b1, w2, b2;

  void init(const ProjectorConfig& c, Rng& rng);
  std::vector<Parameter*> parameters();
  long long param_count() const;
};

// T x F -> floor(T/k) x (k*F); trailing frames that do not fill a stack are
// dropped. Throws if T < k.
Mat stack_frames(const Mat& frames, int stack);

// Plain (non-tape) forward: S x out_dim embeddings.
Mat project(const FeatureSequence& features, const Projector& proj);

Tape::Id projector_forward(Tape& t, Tape::Id stacked, Projector& proj);

// ---------------------------------------------------------------------------
// Toy causal decoder: token + position embeddings, pre-norm self-attention
// blocks, final layer norm, output head tied to the token embedding table.

struct LmConfig {
  int vocab_size = 0;
  int dim = 64;
  int layers = 2;
  int heads = 4;
  int ffn_dim = 256;
  int max_positions = 96;
};

struct AttnBlock {
  Parameter ln1_g, ln1_b;
  Parameter wq, wk, wv, wo;  // dim x dim, no bias
  Parameter ln2_g, ln2_b;
  Parameter ff_w1, ff_b1, ff_w2, ff_b2;
};

struct CausalLm {
  LmConfig cfg;
  Parameter tok_emb;  // vocab x dim (also the tied output head)
  Parameter pos_emb;  // max_positions x dim
  std::vector<AttnBlock> blocks;
  Parameter lnf_g, lnf_b;
  bool frozen = false;

  void init(const LmConfig& c, Rng& rng);
  // Sets the frozen flag and marks every base parameter non-trainable (or
  // trainable again when unfreezing).
  void set_frozen(bool f);
  std::vector<Parameter*> parameters();
  std::vector<const Parameter*> parameters() const;
  long long param_count() const;
};

// ---------------------------------------------------------------------------
// Low-rank adapters on the q/k/v/o projections of every block. Stored in the
// row-vector convention: y = x W + (alpha/r) * (x A) B with A: dim x r random
// at init and B: r x dim zero, so a fresh adapter is an exact identity.

struct LoraConfig {
  int rank = 32;
  double alpha = 32.0;
  double dropout = 0.05;
};

struct LoraPair {
  Parameter down;  // in x r
  Parameter up;    // r x out
};

struct LoraAdapter {
  LoraConfig cfg;
  // Per block: adapters for q, k, v, o in that order.
  std::vector<std::array<LoraPair, 4>> layers;

  double scaling() const { return cfg.alpha / static_cast<double>(cfg.rank); }
  void init(const LmConfig& lm_cfg, const LoraConfig& c, Rng& rng);
  std::vector<Parameter*> parameters();
  long long param_count() const;
};

// Trainable-parameter count for adapters of the given shape; q/k/v/o keep
// D_in = D_out = dim.
long long count_lora_params(long long dim, long long layers, long long adapted,
                            long long rank);

// Folds the adapter into a copy of the base model: W += (alpha/r) A B.
CausalLm merge_lora(const CausalLm& lm, const LoraAdapter& lora);

// ---------------------------------------------------------------------------
// Forward passes. The decoder input is [speech embeddings | prompt tokens |
// target tokens] plus position embeddings; logits cover every position.

struct LoraRuntime {
  bool training = false;
  Rng* dropout_rng = nullptr;
};

// Plain forward for inference/scoring. speech_embeds must be
// seq.speech_embed_count x dim. Dropout is disabled.
Mat lm_forward(const AssembledSequence& seq, const Mat& speech_embeds,
               const CausalLm& lm, const LoraAdapter* lora = nullptr);

// Tape forward for training. speech_embeds is a tape node (projector output
// or an embedding gather); token/position tables enter as leaves.
Tape::Id lm_forward_tape(Tape& t, CausalLm& lm, LoraAdapter* lora,
                         Tape::Id speech_embeds, const AssembledSequence& seq,
                         const LoraRuntime& rt = {});

// Next-token shift: the prediction for target position j reads the logits at
// the preceding position. Throws when the sequence has no target positions.
std::vector<std::pair<int, int>> ce_pairs(const AssembledSequence& seq);

double masked_ce_loss(const Mat& logits, const AssembledSequence& seq);
Tape::Id masked_ce_loss_tape(Tape& t, Tape::Id logits, const AssembledSequence& seq);

}  // namespace kbasr

#endif  // KBASR_MODEL_HPP_
