// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "dssvae/errors.hpp"
#include "dssvae/rng.hpp"
#include "dssvae/text.hpp"
#include "dssvae/tree.hpp"

namespace dssvae {

/// A sentence frame: tokens are either literal words or slot references
/// written "$NAME". `tree` is the preterminal-level bracketed structure,
/// one leaf per token in order.
struct Frame {
  std::string pattern;
  std::string tree;
  int family = 0;  // frames of one family share slot names and paraphrase each other
};

struct Grammar {
  std::map<std::string, std::vector<std::string>> slots;
  std::vector<Frame> frames;

  static Grammar toy();
  void validate() const;
  std::size_t capacity() const;
};

struct SyntheticCorpusSpec {
  Grammar grammar = Grammar::toy();
  std::size_t n_train = 1000;
  std::size_t n_valid = 100;
  std::size_t n_test = 100;
  std::uint64_t seed = 1;
};

struct CorpusSplit {
  std::vector<Tokens> sentences;
  std::vector<ParseTree> trees;
  std::vector<Tokens> references;  // same slot fillers realized in a sibling frame
  std::vector<ParseTree> reference_trees;
};

struct SyntheticCorpus {
  CorpusSplit train;
  CorpusSplit valid;
  CorpusSplit test;
};

inline Grammar Grammar::toy() {
  Grammar g;
  g.slots["N1"] = {"dog", "cat", "bird", "horse", "man", "woman", "child", "teacher"};
  g.slots["N2"] = {"ball", "apple", "book", "letter", "car", "boat", "kite", "cake"};
  g.slots["V"] = {"sees", "likes", "finds", "wants", "holds", "takes"};
  g.slots["A"] = {"small", "big", "old", "red", "green", "new"};
  g.slots["P"] = {"park", "garden", "kitchen", "market", "sky", "river"};
  g.frames = {
      {"the $N1 $V the $N2 in the $P", "(S (NP DT NN) (VP VBZ (NP DT NN) (PP IN (NP DT NN))))", 0},
      {"in the $P , the $N1 $V the $N2", "(S (PP IN (NP DT NN)) PU (NP DT NN) (VP VBZ (NP DT NN)))", 0},
      {"there is a $N1 that $V the $N2 in the $P",
       "(S EX (VP VBZ (NP (NP DT NN) (SBAR WDT (VP VBZ (NP DT NN) (PP IN (NP DT NN)))))))", 0},
      {"the $A $N1 $V the $N2", "(S (NP DT JJ NN) (VP VBZ (NP DT NN)))", 1},
      {"the $N1 that is $A $V the $N2", "(S (NP (NP DT NN) (SBAR WDT (VP VBZ JJ))) (VP VBZ (NP DT NN)))", 1},
      {"there is a $A $N1 that $V the $N2", "(S EX (VP VBZ (NP (NP DT JJ NN) (SBAR WDT (VP VBZ (NP DT NN))))))", 1},
      {"the $N2 in the $P is $A", "(S (NP (NP DT NN) (PP IN (NP DT NN))) (VP VBZ JJ))", 2},
      {"there is a $A $N2 in the $P", "(S EX (VP VBZ (NP DT JJ NN) (PP IN (NP DT NN))))", 2},
      {"in the $P , the $N2 is $A", "(S (PP IN (NP DT NN)) PU (NP DT NN) (VP VBZ JJ))", 2},
  };
  return g;
}

namespace detail {

inline bool is_slot(const std::string& tok) { return tok.size() > 1 && tok[0] == '$'; }

inline std::vector<std::string> frame_slots(const Frame& f) {
  std::vector<std::string> out;
  for (const auto& t : split_tokens(f.pattern)) {
    if (is_slot(t)) out.push_back(t.substr(1));
  }
  return out;
}

}  // namespace detail

inline void Grammar::validate() const {
  if (frames.empty()) throw ConfigError("grammar has no frames");
  std::set<std::string> literals, fillers;
  for (const auto& f : frames) {
    for (const auto& t : split_tokens(f.pattern)) {
      if (!detail::is_slot(t)) literals.insert(t);
    }
  }
  for (const auto& [name, words] : slots) {
    if (words.empty()) throw ConfigError("slot '" + name + "' is empty");
    for (const auto& w : words) {
      if (!fillers.insert(w).second || literals.count(w)) {
        throw ConfigError("slot word '" + w + "' is not unique across slots and literals");
      }
    }
  }
  std::map<int, std::multiset<std::string>> family_slots;
  for (const auto& f : frames) {
    const Tokens toks = split_tokens(f.pattern);
    const ParseTree t = parse_bracketed(f.tree);
    if (t.leaf_count() != toks.size()) {
      throw ConfigError("frame '" + f.pattern + "': tree leaf count differs from token count");
    }
    const auto names = detail::frame_slots(f);
    std::set<std::string> seen;
    for (const auto& n : names) {
      if (!slots.count(n)) throw ConfigError("frame '" + f.pattern + "' uses unknown slot " + n);
      if (!seen.insert(n).second) throw ConfigError("frame '" + f.pattern + "' repeats slot " + n);
    }
    const std::multiset<std::string> key(names.begin(), names.end());
    auto [it, fresh] = family_slots.emplace(f.family, key);
    if (!fresh && it->second != key) {
      throw ConfigError("frames of family " + std::to_string(f.family) + " use different slots");
    }
  }
}

/// Number of distinct sentences the grammar can emit.
inline std::size_t Grammar::capacity() const {
  std::size_t total = 0;
  for (const auto& f : frames) {
    std::size_t n = 1;
    for (const auto& s : detail::frame_slots(f)) n *= slots.at(s).size();
    total += n;
  }
  return total;
}

namespace detail {

struct Realization {
  std::size_t frame;
  std::map<std::string, std::string> fill;
};

inline Tokens realize(const Grammar& g, const Realization& r) {
  Tokens out;
  for (const auto& t : split_tokens(g.frames[r.frame].pattern)) {
    out.push_back(is_slot(t) ? r.fill.at(t.substr(1)) : t);
  }
  return out;
}

// Every realization of the grammar, frame by frame, in slot-odometer order.
inline std::vector<Realization> enumerate(const Grammar& g) {
  std::vector<Realization> out;
  for (std::size_t fi = 0; fi < g.frames.size(); ++fi) {
    const auto names = frame_slots(g.frames[fi]);
    std::vector<std::size_t> idx(names.size(), 0);
    for (;;) {
      Realization r{fi, {}};
      for (std::size_t k = 0; k < names.size(); ++k) r.fill[names[k]] = g.slots.at(names[k])[idx[k]];
      out.push_back(std::move(r));
      std::size_t k = 0;
      while (k < names.size() && ++idx[k] == g.slots.at(names[k]).size()) idx[k++] = 0;
      if (k == names.size()) break;
    }
  }
  return out;
}

// A frame of the same family other than `frame`, chosen cyclically.
inline std::size_t sibling_frame(const Grammar& g, std::size_t frame) {
  for (std::size_t k = 1; k < g.frames.size(); ++k) {
    const std::size_t j = (frame + k) % g.frames.size();
    if (g.frames[j].family == g.frames[frame].family) return j;
  }
  return frame;
}

}  // namespace detail

/// Draws n_train + n_valid + n_test distinct sentences, shuffled and cut
/// into three disjoint splits. Trees come from the frames.
inline SyntheticCorpus gen_corpus(const SyntheticCorpusSpec& spec) {
  if (spec.n_train == 0 || spec.n_valid == 0 || spec.n_test == 0) {
    throw InputError("gen_corpus: every split needs at least one sentence");
  }
  spec.grammar.validate();
  const std::size_t need = spec.n_train + spec.n_valid + spec.n_test;
  const std::size_t cap = spec.grammar.capacity();
  if (need > cap) {
    throw InputError("gen_corpus: grammar emits " + std::to_string(cap) + " distinct sentences, " +
                     std::to_string(need) + " requested");
  }
  auto all = detail::enumerate(spec.grammar);
  Rng rng = named_stream(spec.seed, "corpus");
  std::shuffle(all.begin(), all.end(), rng);
  all.resize(need);

  SyntheticCorpus out;
  const auto fill = [&](CorpusSplit& split, std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      const auto& r = all[i];
      split.sentences.push_back(detail::realize(spec.grammar, r));
      split.trees.push_back(parse_bracketed(spec.grammar.frames[r.frame].tree));
      const detail::Realization ref{detail::sibling_frame(spec.grammar, r.frame), r.fill};
      split.references.push_back(detail::realize(spec.grammar, ref));
      split.reference_trees.push_back(parse_bracketed(spec.grammar.frames[ref.frame].tree));
    }
  };
  fill(out.train, 0, spec.n_train);
  fill(out.valid, spec.n_train, spec.n_train + spec.n_valid);
  fill(out.test, spec.n_train + spec.n_valid, need);
  return out;
}

/// Tree for a sentence the grammar can emit, or nothing.
inline std::optional<ParseTree> grammar_parse(const Grammar& g, const Tokens& sentence) {
  for (const auto& f : g.frames) {
    const Tokens pat = split_tokens(f.pattern);
    if (pat.size() != sentence.size()) continue;
    bool ok = true;
    for (std::size_t i = 0; ok && i < pat.size(); ++i) {
      if (detail::is_slot(pat[i])) {
        const auto& words = g.slots.at(pat[i].substr(1));
        ok = std::find(words.begin(), words.end(), sentence[i]) != words.end();
      } else {
        ok = pat[i] == sentence[i];
      }
    }
    if (ok) return parse_bracketed(f.tree);
  }
  return std::nullopt;
}

/// Writes <dir>/{train,valid,test}.{txt,trees} plus test.ref.{txt,trees}.
inline void write_corpus(const std::filesystem::path& dir, const SyntheticCorpus& c) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  const auto write = [&](const std::string& name, const std::vector<Tokens>& s,
                         const std::vector<ParseTree>& t) {
    std::vector<std::string> lines, tree_lines;
    for (const auto& x : s) lines.push_back(join_tokens(x));
    for (const auto& x : t) tree_lines.push_back(to_bracketed(x));
    write_lines((dir / (name + ".txt")).string(), lines);
    write_lines((dir / (name + ".trees")).string(), tree_lines);
  };
  write("train", c.train.sentences, c.train.trees);
  write("valid", c.valid.sentences, c.valid.trees);
  write("test", c.test.sentences, c.test.trees);
  write("test.ref", c.test.references, c.test.reference_trees);
}

}  // namespace dssvae
