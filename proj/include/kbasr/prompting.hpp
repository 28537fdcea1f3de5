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

#ifndef KBASR_PROMPTING_HPP_
#define KBASR_PROMPTING_HPP_

#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "kbasr/corpus.hpp"

namespace kbasr {

// Word-level vocabulary with dense ids. Specials occupy fixed ids so a
// checkpointed vocab can be restored by word list alone.
class Vocab {
 public:
  static constexpr int kPad = 0;
  static constexpr int kBos = 1;
  static constexpr int kEos = 2;
  static constexpr int kUnk = 3;
  static constexpr int kNumSpecials = 4;

  Vocab() = default;
  // words must not contain duplicates or the special tags.
  explicit Vocab(const std::vector<std::string>& words);

  int size() const { return static_cast<int>(id_to_word_.size()); }
  int id(const std::string& word) const;  // kUnk for unknown words
  const std::string& word(int id) const;  // throws on out-of-range id
  bool contains(const std::string& word) const;

  // All entries in id order, specials included.
  const std::vector<std::string>& words() const { return id_to_word_; }
  // Non-special entries in id order.
  std::vector<std::string> regular_words() const;

 private:
  std::vector<std::string> id_to_word_;
  std::unordered_map<std::string, int> word_to_id_;
};

// Builds the vocabulary from transcript words with count >= min_count, all
// keyword words, and the prompt template words. Order is deterministic:
// count descending, then lexicographic.
Vocab build_vocab(const Corpus& corpus, int min_count);

// Lowercases and splits into maximal runs of [a-z0-9']. Punctuation acts as
// a separator, which keeps the fixed prompt templates ("text.", "context:{},")
// from minting one-off tokens.
std::vector<std::string> split_words(const std::string& text);

std::vector<int> tokenize(const std::string& text, const Vocab& vocab);

// Space-joined words; pad/bos/eos stripped, unk rendered as "<unk>".
std::string detokenize(const std::vector<int>& ids, const Vocab& vocab);

enum class PromptMode { kPlain, kKeywords, kHistory };

const char* prompt_mode_name(PromptMode mode);
std::optional<PromptMode> parse_prompt_mode(const std::string& name);

struct PromptSpec {
  PromptMode mode = PromptMode::kPlain;
  std::vector<std::string> keywords;
  std::vector<std::string> history;
};

// Renders the instruction text. Keyword mode with an empty list falls back
// to the plain instruction. Template strings are fixed byte-for-byte.
std::string render_prompt(const PromptSpec& spec);

// All distinct template words (tokenizer form), for vocabulary construction.
std::vector<std::string> prompt_template_words();

// The unified decoder-input layout: speech embedding slots, then the text
// region "bos USER: <prompt> ASSISTANT:", then the supervised target
// "<transcript> eos". The loss mask is true exactly on target positions.
struct AssembledSequence {
  enum class Tag { kSpeech, kPrompt, kTarget };

  int speech_embed_count = 0;
  std::vector<int> prompt_ids;
  std::vector<int> target_ids;
  std::vector<bool> loss_mask;
  std::vector<Tag> tags;

  int total_positions() const {
    return speech_embed_count + static_cast<int>(prompt_ids.size()) +
           static_cast<int>(target_ids.size());
  }
};

// transcript absent = inference form (no targets, all-false mask).
AssembledSequence assemble_sequence(int speech_embed_count,
                                    const std::string& prompt,
                                    const std::optional<std::string>& transcript,
                                    const Vocab& vocab);

}  // namespace kbasr

#endif  // KBASR_PROMPTING_HPP_
