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

#include "kbasr/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <cstring>
#include <fstream>
#include <sstream>
#include <unordered_set>

#include "json.hpp"
#include "kbasr/rng.hpp"

namespace kbasr {

using nlohmann::json;

std::string Utterance::transcript_text() const {
  std::string out;
  for (std::size_t i = 0; i < transcript.size(); ++i) {
    if (i) out += ' ';
    out += transcript[i];
  }
  return out;
}

const Utterance* Corpus::find(const std::string& id) const {
  for (const auto& u : utterances) {
    if (u.id == id) return &u;
  }
  return nullptr;
}

std::vector<std::string> split_transcript(const std::string& text) {
  std::vector<std::string> words;
  std::string cur;
  for (char c : text) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      if (!cur.empty()) {
        words.push_back(cur);
        cur.clear();
      }
    } else {
      cur.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    }
  }
  if (!cur.empty()) words.push_back(cur);
  return words;
}

namespace {

bool is_word_char(char c) {
  return std::isalnum(static_cast<unsigned char>(c)) || c == '\'';
}

std::string strip_punct(const std::string& w) {
  std::size_t b = 0, e = w.size();
  while (b < e && !is_word_char(w[b])) ++b;
  while (e > b && !is_word_char(w[e - 1])) --e;
  return w.substr(b, e - b);
}

bool all_digits(const std::string& w) {
  if (w.empty()) return false;
  return std::all_of(w.begin(), w.end(), [](unsigned char c) { return std::isdigit(c); });
}

}  // namespace

std::vector<std::string> normalize_keywords(const std::vector<std::string>& raw) {
  std::vector<std::string> out;
  std::unordered_set<std::string> seen;
  for (const auto& entry : raw) {
    for (const auto& piece : split_transcript(entry)) {
      std::string w = strip_punct(piece);
      if (w.empty()) continue;
      if (seen.insert(w).second) out.push_back(w);
    }
  }
  return out;
}

std::vector<std::string> extract_keywords_from_ocr(
    const std::string& ocr_text, const std::set<std::string>& stoplist,
    int max_keywords, const std::map<std::string, long long>& corpus_freq) {
  if (max_keywords < 0) throw ValidationError("extract_keywords_from_ocr: max_keywords < 0");
  struct Candidate {
    std::string word;
    long long freq;
    int first_pos;
  };
  std::vector<Candidate> candidates;
  std::unordered_set<std::string> seen;
  int pos = 0;
  for (const auto& piece : split_transcript(ocr_text)) {
    std::string w = strip_punct(piece);
    ++pos;
    if (w.empty() || all_digits(w)) continue;
    if (stoplist.count(w)) continue;
    if (!seen.insert(w).second) continue;
    auto it = corpus_freq.find(w);
    long long freq = it == corpus_freq.end() ? 0 : it->second;
    candidates.push_back({w, freq, pos});
  }
  std::stable_sort(candidates.begin(), candidates.end(),
                   [](const Candidate& a, const Candidate& b) {
                     if (a.freq != b.freq) return a.freq < b.freq;
                     return a.first_pos < b.first_pos;
                   });
  std::vector<std::string> out;
  for (const auto& c : candidates) {
    if (static_cast<int>(out.size()) >= max_keywords) break;
    out.push_back(c.word);
  }
  return out;
}

Corpus load_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open manifest: " + path);
  Corpus corpus;
  std::unordered_set<std::string> ids;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json rec;
    try {
      rec = json::parse(line);
    } catch (const json::exception& e) {
      throw ParseError("manifest " + path + " line " + std::to_string(line_no) +
                       ": " + e.what());
    }
    if (!rec.is_object() || !rec.contains("id") || !rec["id"].is_string()) {
      throw ParseError("manifest " + path + " line " + std::to_string(line_no) +
                       ": missing string field \"id\"");
    }
    Utterance utt;
    utt.id = rec["id"].get<std::string>();
    if (!ids.insert(utt.id).second) {
      throw ValidationError("manifest " + path + " line " + std::to_string(line_no) +
                            ": duplicate id \"" + utt.id + "\"");
    }
    try {
      if (rec.contains("transcript")) {
        utt.transcript = split_transcript(rec["transcript"].get<std::string>());
      }
      if (rec.contains("keywords")) {
        utt.keywords = normalize_keywords(rec["keywords"].get<std::vector<std::string>>());
      }
      if (rec.contains("ocr_text")) utt.ocr_text = rec["ocr_text"].get<std::string>();
      if (rec.contains("history")) {
        utt.history = rec["history"].get<std::vector<std::string>>();
      }
      if (rec.contains("features_path")) {
        utt.features_path = rec["features_path"].get<std::string>();
      }
    } catch (const json::exception& e) {
      throw ParseError("manifest " + path + " line " + std::to_string(line_no) +
                       ": " + e.what());
    }
    corpus.utterances.push_back(std::move(utt));
  }
  return corpus;
}

void save_manifest(const Corpus& corpus, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write manifest: " + path);
  for (const auto& u : corpus.utterances) {
    json rec;
    rec["id"] = u.id;
    rec["transcript"] = u.transcript_text();
    rec["keywords"] = u.keywords;
    if (!u.ocr_text.empty()) rec["ocr_text"] = u.ocr_text;
    if (!u.history.empty()) rec["history"] = u.history;
    if (!u.features_path.empty()) rec["features_path"] = u.features_path;
    out << rec.dump() << '\n';
  }
}

FeatureSequence load_features(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open feature file: " + path);
  std::uint32_t t = 0, dim = 0;
  in.read(reinterpret_cast<char*>(&t), sizeof(t));
  in.read(reinterpret_cast<char*>(&dim), sizeof(dim));
  if (!in) throw ParseError("feature file truncated header: " + path);
  if (t < 1 || dim < 1) throw ValidationError("feature file has empty shape: " + path);
  std::vector<float> buf(static_cast<std::size_t>(t) * dim);
  in.read(reinterpret_cast<char*>(buf.data()),
          static_cast<std::streamsize>(buf.size() * sizeof(float)));
  if (!in) throw ParseError("feature file truncated body: " + path);
  FeatureSequence fs;
  fs.frames.resize(t, dim);
  for (std::uint32_t i = 0; i < t; ++i)
    for (std::uint32_t j = 0; j < dim; ++j)
      fs.frames(i, j) = static_cast<double>(buf[static_cast<std::size_t>(i) * dim + j]);
  return fs;
}

void save_features(const FeatureSequence& features, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write feature file: " + path);
  const auto t = static_cast<std::uint32_t>(features.frames.rows());
  const auto dim = static_cast<std::uint32_t>(features.frames.cols());
  out.write(reinterpret_cast<const char*>(&t), sizeof(t));
  out.write(reinterpret_cast<const char*>(&dim), sizeof(dim));
  std::vector<float> buf(static_cast<std::size_t>(t) * dim);
  for (std::uint32_t i = 0; i < t; ++i)
    for (std::uint32_t j = 0; j < dim; ++j)
      buf[static_cast<std::size_t>(i) * dim + j] = static_cast<float>(features.frames(i, j));
  out.write(reinterpret_cast<const char*>(buf.data()),
            static_cast<std::streamsize>(buf.size() * sizeof(float)));
}

FeatureVocab::FeatureVocab(std::set<std::string> words, int feat_dim, std::uint64_t seed)
    : feat_dim_(feat_dim) {
  for (const auto& w : words) {
    Rng rng(seed ^ hash64(w));
    Vec v(feat_dim);
    for (int i = 0; i < feat_dim; ++i) v(i) = rng.normal();
    table_.emplace(w, std::move(v));
  }
  Rng rng(seed ^ hash64("\x01unknown-word"));
  unknown_.resize(feat_dim);
  for (int i = 0; i < feat_dim; ++i) unknown_(i) = rng.normal();
}

const Vec& FeatureVocab::vector_for(const std::string& word) const {
  auto it = table_.find(word);
  return it == table_.end() ? unknown_ : it->second;
}

FeatureSequence synthesize_features(const std::vector<std::string>& transcript,
                                    const FeatureVocab& vocab,
                                    const SynthConfig& cfg) {
  if (transcript.empty())
    throw ValidationError("synthesize_features: empty transcript");
  if (cfg.frames_per_word < 1)
    throw ValidationError("synthesize_features: frames_per_word must be >= 1");
  if (!cfg.corrupt_words.empty() && cfg.corrupt_std < cfg.noise_std)
    throw ValidationError("synthesize_features: corrupt_std < noise_std");
  if (vocab.feat_dim() != cfg.feat_dim)
    throw ValidationError("synthesize_features: vocab feat_dim mismatch");

  // Per-call seed so the function stays pure: same transcript and config
  // always produce the same frames.
  std::uint64_t h = cfg.seed;
  for (const auto& w : transcript) h = h * 0x9e3779b97f4a7c15ULL + hash64(w);
  Rng rng(h);

  FeatureSequence fs;
  fs.frames.resize(static_cast<Eigen::Index>(transcript.size()) * cfg.frames_per_word,
                   cfg.feat_dim);
  Eigen::Index row = 0;
  for (const auto& word : transcript) {
    const Vec& base = vocab.vector_for(word);
    const double std = cfg.corrupt_words.count(word) ? cfg.corrupt_std : cfg.noise_std;
    for (int f = 0; f < cfg.frames_per_word; ++f, ++row) {
      for (int j = 0; j < cfg.feat_dim; ++j) {
        fs.frames(row, j) = base(j) + std * rng.normal();
      }
    }
  }
  return fs;
}

}  // namespace kbasr
