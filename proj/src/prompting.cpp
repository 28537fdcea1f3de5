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

#include "kbasr/prompting.hpp"

#include <algorithm>
#include <cctype>
#include <map>
#include <set>
#include <stdexcept>

namespace kbasr {

namespace {

const char* kPadTag = "<pad>";
const char* kBosTag = "<bos>";
const char* kEosTag = "<eos>";
const char* kUnkTag = "<unk>";

const char* kPlainPrompt = "Transcribe speech to text.";
const char* kKeywordPrompt =
    "Transcribe speech to text. Use keywords in PPT to improve speech "
    "recognition accuracy. But if the keywords are irrelevant, just ignore "
    "them. The keywords are {}";
const char* kHistoryPrompt =
    "Using previous context:{}, improve speech recognition for this audio. "
    "Apply relevant details from the previous context.";

std::string join(const std::vector<std::string>& words) {
  std::string out;
  for (std::size_t i = 0; i < words.size(); ++i) {
    if (i) out += ' ';
    out += words[i];
  }
  return out;
}

std::string fill_template(const std::string& tmpl, const std::string& value) {
  auto pos = tmpl.find("{}");
  if (pos == std::string::npos) return tmpl;
  return tmpl.substr(0, pos) + value + tmpl.substr(pos + 2);
}

}  // namespace

Vocab::Vocab(const std::vector<std::string>& words) {
  id_to_word_ = {kPadTag, kBosTag, kEosTag, kUnkTag};
  id_to_word_.insert(id_to_word_.end(), words.begin(), words.end());
  for (int i = 0; i < static_cast<int>(id_to_word_.size()); ++i) {
    if (!word_to_id_.emplace(id_to_word_[i], i).second) {
      throw ValidationError("Vocab: duplicate word \"" + id_to_word_[i] + "\"");
    }
  }
}

int Vocab::id(const std::string& word) const {
  auto it = word_to_id_.find(word);
  return it == word_to_id_.end() ? kUnk : it->second;
}

const std::string& Vocab::word(int id) const {
  if (id < 0 || id >= size())
    throw ValidationError("Vocab: id out of range: " + std::to_string(id));
  return id_to_word_[id];
}

bool Vocab::contains(const std::string& word) const {
  return word_to_id_.count(word) > 0;
}

std::vector<std::string> Vocab::regular_words() const {
  return {id_to_word_.begin() + kNumSpecials, id_to_word_.end()};
}

std::vector<std::string> split_words(const std::string& text) {
  std::vector<std::string> out;
  std::string cur;
  for (char raw : text) {
    char c = static_cast<char>(std::tolower(static_cast<unsigned char>(raw)));
    if (std::isalnum(static_cast<unsigned char>(c)) || c == '\'') {
      cur.push_back(c);
    } else if (!cur.empty()) {
      out.push_back(cur);
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

Vocab build_vocab(const Corpus& corpus, int min_count) {
  if (corpus.empty()) throw ValidationError("build_vocab: empty corpus");
  std::map<std::string, long long> counts;
  for (const auto& u : corpus.utterances) {
    for (const auto& w : u.transcript) ++counts[w];
    for (const auto& w : u.keywords) ++counts[w];
  }
  std::set<std::string> keep;
  for (const auto& [w, c] : counts) {
    if (c >= min_count) keep.insert(w);
  }
  // Keyword and template words are always present regardless of count; the
  // prompt pathway must never go through unk.
  for (const auto& u : corpus.utterances) {
    for (const auto& w : u.keywords) keep.insert(w);
  }
  for (const auto& w : prompt_template_words()) keep.insert(w);

  std::vector<std::string> ordered(keep.begin(), keep.end());
  std::sort(ordered.begin(), ordered.end(),
            [&counts](const std::string& a, const std::string& b) {
              long long ca = counts.count(a) ? counts.at(a) : 0;
              long long cb = counts.count(b) ? counts.at(b) : 0;
              if (ca != cb) return ca > cb;
              return a < b;
            });
  return Vocab(ordered);
}

std::vector<int> tokenize(const std::string& text, const Vocab& vocab) {
  std::vector<int> ids;
  for (const auto& w : split_words(text)) ids.push_back(vocab.id(w));
  return ids;
}

std::string detokenize(const std::vector<int>& ids, const Vocab& vocab) {
  std::string out;
  for (int id : ids) {
    if (id < 0 || id >= vocab.size())
      throw ValidationError("detokenize: id out of range: " + std::to_string(id));
    if (id == Vocab::kPad || id == Vocab::kBos || id == Vocab::kEos) continue;
    if (!out.empty()) out += ' ';
    out += id == Vocab::kUnk ? kUnkTag : vocab.word(id);
  }
  return out;
}

const char* prompt_mode_name(PromptMode mode) {
  switch (mode) {
    case PromptMode::kPlain: return "plain";
    case PromptMode::kKeywords: return "keywords";
    case PromptMode::kHistory: return "history";
  }
  return "plain";
}

std::optional<PromptMode> parse_prompt_mode(const std::string& name) {
  if (name == "plain") return PromptMode::kPlain;
  if (name == "keywords") return PromptMode::kKeywords;
  if (name == "history") return PromptMode::kHistory;
  return std::nullopt;
}

std::string render_prompt(const PromptSpec& spec) {
  switch (spec.mode) {
    case PromptMode::kPlain:
      return kPlainPrompt;
    case PromptMode::kKeywords:
      // No keywords: the prompt is simplified to the plain instruction.
      if (spec.keywords.empty()) return kPlainPrompt;
      return fill_template(kKeywordPrompt, join(spec.keywords));
    case PromptMode::kHistory:
      if (spec.history.empty())
        throw ValidationError("render_prompt: history mode without history");
      return fill_template(kHistoryPrompt, join(spec.history));
  }
  throw ValidationError("render_prompt: bad mode");
}

std::vector<std::string> prompt_template_words() {
  std::set<std::string> words;
  for (const char* text : {kPlainPrompt, kKeywordPrompt, kHistoryPrompt}) {
    for (const auto& w : split_words(text)) words.insert(w);
  }
  for (const auto& w : split_words("USER: ASSISTANT:")) words.insert(w);
  return {words.begin(), words.end()};
}

AssembledSequence assemble_sequence(int speech_embed_count,
                                    const std::string& prompt,
                                    const std::optional<std::string>& transcript,
                                    const Vocab& vocab) {
  if (speech_embed_count < 1)
    throw ValidationError("assemble_sequence: speech_embed_count must be >= 1");

  AssembledSequence seq;
  seq.speech_embed_count = speech_embed_count;
  seq.prompt_ids.push_back(Vocab::kBos);
  for (int id : tokenize("USER: " + prompt + " ASSISTANT:", vocab))
    seq.prompt_ids.push_back(id);
  if (transcript.has_value()) {
    seq.target_ids = tokenize(*transcript, vocab);
    seq.target_ids.push_back(Vocab::kEos);
  }

  seq.tags.assign(static_cast<std::size_t>(speech_embed_count),
                  AssembledSequence::Tag::kSpeech);
  seq.tags.insert(seq.tags.end(), seq.prompt_ids.size(),
                  AssembledSequence::Tag::kPrompt);
  seq.tags.insert(seq.tags.end(), seq.target_ids.size(),
                  AssembledSequence::Tag::kTarget);
  seq.loss_mask.assign(seq.tags.size(), false);
  for (std::size_t i = 0; i < seq.tags.size(); ++i) {
    if (seq.tags[i] == AssembledSequence::Tag::kTarget) seq.loss_mask[i] = true;
  }
  return seq;
}

}  // namespace kbasr
