// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cctype>
#include <cstddef>
#include <cstdio>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "dssvae/errors.hpp"
#include "dssvae/rng.hpp"
#include "dssvae/tensor.hpp"

namespace dssvae {

using Tokens = std::vector<std::string>;

/// Whitespace tokenization of pre-tokenized text.
inline Tokens split_tokens(std::string_view line) {
  Tokens out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) ++i;
    const std::size_t start = i;
    while (i < line.size() && !std::isspace(static_cast<unsigned char>(line[i]))) ++i;
    if (i > start) out.emplace_back(line.substr(start, i - start));
  }
  return out;
}

inline std::string join_tokens(const Tokens& tokens) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out += ' ';
    out += tokens[i];
  }
  return out;
}

inline std::vector<std::string> read_lines(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open " + path);
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(line);
  }
  while (!lines.empty() && split_tokens(lines.back()).empty()) lines.pop_back();
  return lines;
}

/// One pre-tokenized sentence per line; blank lines are rejected.
inline std::vector<Tokens> read_corpus(const std::string& path) {
  std::vector<Tokens> corpus;
  const auto lines = read_lines(path);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    Tokens t = split_tokens(lines[i]);
    if (t.empty()) throw InputError(path + ":" + std::to_string(i + 1) + ": empty sentence");
    corpus.push_back(std::move(t));
  }
  return corpus;
}

inline void write_lines(const std::string& path, const std::vector<std::string>& lines) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  for (const auto& l : lines) out << l << '\n';
  if (!out) throw IoError("write failed for " + path);
}

/// Word-id sequence without <s>/</s> framing.
struct Sentence {
  std::vector<int> ids;

  std::size_t length() const { return ids.size(); }
  bool empty() const { return ids.empty(); }
  friend bool operator==(const Sentence&, const Sentence&) = default;
};

class Vocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kBos = 1;
  static constexpr int kEos = 2;
  static constexpr int kUnk = 3;
  static constexpr int kReserved = 4;

  Vocabulary() : tokens_{"<pad>", "<s>", "</s>", "<unk>"} { reindex(); }

  /// Keeps the max_size - 4 most frequent tokens, ties broken by first
  /// occurrence.
  static Vocabulary build(const std::vector<Tokens>& corpus, std::size_t max_size) {
    if (corpus.empty()) throw InputError("build_vocab: empty corpus");
    if (max_size < 5) throw InputError("build_vocab: max_size must be at least 5");
    std::unordered_map<std::string, std::size_t> counts;
    std::vector<std::string> order;  // first-occurrence order
    for (const auto& sentence : corpus) {
      for (const auto& tok : sentence) {
        if (is_reserved_string(tok)) continue;
        auto [it, inserted] = counts.try_emplace(tok, 0);
        if (inserted) order.push_back(tok);
        ++it->second;
      }
    }
    std::stable_sort(order.begin(), order.end(), [&](const std::string& a, const std::string& b) {
      return counts.at(a) > counts.at(b);
    });
    Vocabulary v;
    v.max_size_ = max_size;
    const std::size_t keep = std::min(order.size(), max_size - kReserved);
    v.tokens_.insert(v.tokens_.end(), order.begin(), order.begin() + static_cast<long>(keep));
    v.reindex();
    return v;
  }

  static bool is_reserved_string(std::string_view tok) {
    return tok == "<pad>" || tok == "<s>" || tok == "</s>" || tok == "<unk>";
  }

  static bool is_reserved(int id) { return id >= 0 && id < kReserved; }

  std::size_t size() const { return tokens_.size(); }
  std::size_t max_size() const { return max_size_; }

  int id(std::string_view tok) const {
    auto it = index_.find(std::string(tok));
    return it == index_.end() ? kUnk : it->second;
  }

  bool contains(std::string_view tok) const { return index_.count(std::string(tok)) > 0; }

  const std::string& token(int id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
      throw InputError("token id " + std::to_string(id) + " outside vocabulary");
    }
    return tokens_[static_cast<std::size_t>(id)];
  }

  Sentence encode(const Tokens& tokens) const {
    Sentence s;
    s.ids.reserve(tokens.size());
    for (const auto& t : tokens) s.ids.push_back(id(t));
    return s;
  }

  Tokens decode(const Sentence& s) const {
    Tokens out;
    for (int i : s.ids) out.push_back(token(i));
    return out;
  }

  /// One token per line, reserved tokens first. This is the byte form the
  /// checkpoint hash covers.
  std::string serialize() const {
    std::string out;
    for (const auto& t : tokens_) {
      out += t;
      out += '\n';
    }
    return out;
  }

  static Vocabulary deserialize(std::string_view text) {
    Vocabulary v;
    v.tokens_.clear();
    std::size_t start = 0;
    while (start < text.size()) {
      std::size_t end = text.find('\n', start);
      if (end == std::string_view::npos) end = text.size();
      v.tokens_.emplace_back(text.substr(start, end - start));
      start = end + 1;
    }
    if (v.tokens_.size() < kReserved || v.tokens_[0] != "<pad>" || v.tokens_[1] != "<s>" ||
        v.tokens_[2] != "</s>" || v.tokens_[3] != "<unk>") {
      throw CorruptionError("vocabulary file lacks the reserved header");
    }
    v.max_size_ = v.tokens_.size();
    v.reindex();
    if (v.index_.size() != v.tokens_.size()) throw CorruptionError("vocabulary has duplicate tokens");
    return v;
  }

  std::string hash() const {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx",
                  static_cast<unsigned long long>(fnv1a64(serialize())));
    return buf;
  }

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) { return a.tokens_ == b.tokens_; }

 private:
  void reindex() {
    index_.clear();
    for (std::size_t i = 0; i < tokens_.size(); ++i) index_.emplace(tokens_[i], static_cast<int>(i));
  }

  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
  std::size_t max_size_ = 0;
};

/// Normalized bag-of-words distribution over the vocabulary, ignoring
/// reserved ids (including <unk>). Returned as a 1 x |V| row.
inline Tensor bow_target(const Sentence& sentence, const Vocabulary& vocab) {
  Tensor t(1, vocab.size());
  std::size_t total = 0;
  for (int id : sentence.ids) {
    if (Vocabulary::is_reserved(id)) continue;
    if (static_cast<std::size_t>(id) >= vocab.size()) throw InputError("bow_target: id outside vocabulary");
    t[static_cast<std::size_t>(id)] += 1.0;
    ++total;
  }
  if (total == 0) throw InputError("bow_target: sentence has no non-reserved tokens");
  t.mat() /= static_cast<double>(total);
  return t;
}

/// Replaces each non-reserved id by <unk> with probability p. Length is
/// preserved.
inline std::vector<int> word_dropout(std::vector<int> ids, double p, Rng& rng) {
  if (p < 0.0 || p > 1.0) throw DomainError("word_dropout: p outside [0, 1]");
  if (p == 0.0) return ids;
  std::bernoulli_distribution drop(p);
  for (int& id : ids) {
    if (Vocabulary::is_reserved(id)) continue;
    if (drop(rng)) id = Vocabulary::kUnk;
  }
  return ids;
}

}  // namespace dssvae
