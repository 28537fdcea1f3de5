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

#ifndef KBASR_CORPUS_HPP_
#define KBASR_CORPUS_HPP_

#include <Eigen/Dense>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

namespace kbasr {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

class ParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// T x feat_dim frames. Nominally 50 Hz at ingest; a projector later
// downsamples to the decoder's frame rate.
struct FeatureSequence {
  Mat frames;
  double frame_rate_hz = 50.0;
};

// One speech segment: transcript words (lowercase), its slide keyword list,
// optional raw slide text, optional preceding transcripts (oldest first),
// and a feature source (inline or a file path).
struct Utterance {
  std::string id;
  std::vector<std::string> transcript;
  std::vector<std::string> keywords;
  std::string ocr_text;
  std::vector<std::string> history;
  std::string features_path;
  std::optional<FeatureSequence> features;

  std::string transcript_text() const;
};

struct Corpus {
  std::vector<Utterance> utterances;

  std::size_t size() const { return utterances.size(); }
  bool empty() const { return utterances.empty(); }
  const Utterance* find(const std::string& id) const;
};

// Lowercase whitespace word split (no punctuation handling); transcripts are
// expected to be clean lowercase text already.
std::vector<std::string> split_transcript(const std::string& text);

// Lowercases, splits multiword entries on whitespace, strips surrounding
// punctuation, drops empty tokens, de-duplicates preserving first occurrence.
std::vector<std::string> normalize_keywords(const std::vector<std::string>& raw);

// Fallback keyword extraction from raw slide text: tokenize, drop stoplist
// words and pure numerals, rank by (corpus rarity, then first occurrence).
// Words absent from corpus_freq count as frequency zero (rarest).
std::vector<std::string> extract_keywords_from_ocr(
    const std::string& ocr_text, const std::set<std::string>& stoplist,
    int max_keywords, const std::map<std::string, long long>& corpus_freq = {});

// JSON Lines manifest, one object per utterance:
//   {"id": "...", "transcript": "...", "keywords": [...], "ocr_text": "...",
//    "history": [...], "features_path": "..."}
// Unknown fields are ignored. Keywords are normalized at load. Malformed
// lines raise ParseError with the line number; duplicate ids raise
// ValidationError naming the id.
Corpus load_manifest(const std::string& path);
void save_manifest(const Corpus& corpus, const std::string& path);

// Feature file: little-endian u32 T, u32 feat_dim, then T*feat_dim f32
// row-major.
FeatureSequence load_features(const std::string& path);
void save_features(const FeatureSequence& features, const std::string& path);

// Synthetic feature source standing in for a frozen speech encoder: each
// transcript word emits frames_per_word frames of its base vector plus
// seeded Gaussian noise. Words in corrupt_words get corrupt_std noise
// instead, simulating indistinct pronunciation.
struct SynthConfig {
  int feat_dim = 32;
  int frames_per_word = 5;
  double noise_std = 0.1;
  std::set<std::string> corrupt_words;
  double corrupt_std = 0.1;
  std::uint64_t seed = 0;
};

// Deterministic word -> feature vector map over a fixed word set; words
// outside the set share one dedicated unknown vector.
class FeatureVocab {
 public:
  FeatureVocab(std::set<std::string> words, int feat_dim, std::uint64_t seed);

  const Vec& vector_for(const std::string& word) const;
  int feat_dim() const { return feat_dim_; }
  bool contains(const std::string& word) const { return table_.count(word) > 0; }

 private:
  int feat_dim_;
  std::map<std::string, Vec> table_;
  Vec unknown_;
};

// Pure given (transcript, vocab, cfg): same inputs give bit-identical
// frames. Output length is exactly frames_per_word * |transcript|.
FeatureSequence synthesize_features(const std::vector<std::string>& transcript,
                                    const FeatureVocab& vocab,
                                    const SynthConfig& cfg);

}  // namespace kbasr

#endif  // KBASR_CORPUS_HPP_
