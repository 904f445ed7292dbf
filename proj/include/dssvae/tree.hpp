// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cctype>
#include <cstddef>
#include <string>
#include <string_view>
#include <unordered_map>
#include <variant>
#include <vector>

#include "dssvae/errors.hpp"
#include "dssvae/text.hpp"

namespace dssvae {

/// Constituency tree. Leaves are preterminal categories; terminal words are
/// not part of the syntax channel.
struct ParseTree {
  std::string label;
  std::vector<ParseTree> children;

  bool is_leaf() const { return children.empty(); }

  std::size_t node_count() const {
    std::size_t n = 1;
    for (const auto& c : children) n += c.node_count();
    return n;
  }

  std::size_t internal_count() const {
    if (is_leaf()) return 0;
    std::size_t n = 1;
    for (const auto& c : children) n += c.internal_count();
    return n;
  }

  std::size_t leaf_count() const {
    if (is_leaf()) return 1;
    std::size_t n = 0;
    for (const auto& c : children) n += c.leaf_count();
    return n;
  }

  friend bool operator==(const ParseTree&, const ParseTree&) = default;
};

inline ParseTree leaf(std::string label) { return ParseTree{std::move(label), {}}; }

inline ParseTree node(std::string label, std::vector<ParseTree> children) {
  return ParseTree{std::move(label), std::move(children)};
}

inline std::string to_bracketed(const ParseTree& t) {
  if (t.is_leaf()) return t.label;
  std::string out = "(" + t.label;
  for (const auto& c : t.children) {
    out += ' ';
    out += to_bracketed(c);
  }
  out += ')';
  return out;
}

namespace detail {

class BracketParser {
 public:
  explicit BracketParser(std::string_view text) : text_(text) {}

  ParseTree parse() {
    skip_space();
    if (pos_ >= text_.size()) throw ParseError("empty tree", pos_);
    ParseTree t = text_[pos_] == '(' ? parse_node() : leaf(read_symbol("leaf"));
    skip_space();
    if (pos_ != text_.size()) throw ParseError("trailing characters after tree", pos_);
    return t;
  }

 private:
  ParseTree parse_node() {
    ++pos_;  // '('
    skip_space();
    ParseTree t;
    t.label = read_symbol("label");
    for (;;) {
      skip_space();
      if (pos_ >= text_.size()) throw ParseError("unexpected end of input", pos_);
      const char c = text_[pos_];
      if (c == ')') {
        if (t.children.empty()) throw ParseError("node '" + t.label + "' has no children", pos_);
        ++pos_;
        return t;
      }
      if (c == '(') {
        t.children.push_back(parse_node());
      } else {
        t.children.push_back(leaf(read_symbol("leaf")));
      }
    }
  }

  std::string read_symbol(const char* what) {
    const std::size_t start = pos_;
    while (pos_ < text_.size() && text_[pos_] != '(' && text_[pos_] != ')' &&
           !std::isspace(static_cast<unsigned char>(text_[pos_]))) {
      ++pos_;
    }
    if (pos_ == start) {
      if (pos_ >= text_.size()) throw ParseError("unexpected end of input", pos_);
      throw ParseError(std::string("empty ") + what, pos_);
    }
    return std::string(text_.substr(start, pos_ - start));
  }

  void skip_space() {
    while (pos_ < text_.size() && std::isspace(static_cast<unsigned char>(text_[pos_]))) ++pos_;
  }

  std::string_view text_;
  std::size_t pos_ = 0;
};

}  // namespace detail

/// Reads a PTB-style bracketed tree "(LABEL child ...)". Leaves are bare
/// tokens. Errors carry the byte offset of the problem.
inline ParseTree parse_bracketed(std::string_view text) {
  return detail::BracketParser(text).parse();
}

/// Collapses preterminal nodes "(TAG word)" into leaves "TAG", for trees
/// that still carry their terminal words.
inline ParseTree strip_words(const ParseTree& t) {
  if (t.children.size() == 1 && t.children[0].is_leaf()) return leaf(t.label);
  ParseTree out{t.label, {}};
  for (const auto& c : t.children) out.children.push_back(strip_words(c));
  return out;
}

inline bool is_backtrack_symbol(std::string_view s) { return s.size() > 1 && s[0] == '/'; }

inline std::string backtrack_symbol(std::string_view label) { return "/" + std::string(label); }

struct LinearizedTree {
  std::vector<std::string> symbols;

  std::size_t size() const { return symbols.size(); }
  friend bool operator==(const LinearizedTree&, const LinearizedTree&) = default;
};

namespace detail {

inline void linearize_into(const ParseTree& t, std::vector<std::string>& out) {
  out.push_back(t.label);
  if (t.is_leaf()) return;
  for (const auto& c : t.children) linearize_into(c, out);
  out.push_back(backtrack_symbol(t.label));
}

}  // namespace detail

/// Top-down pre-order serialization: every internal node emits its label,
/// its children, then a backtracking symbol "/LABEL". Leaves emit their
/// label only. Length is 2 * internal + leaves.
inline LinearizedTree linearize(const ParseTree& t) {
  LinearizedTree out;
  detail::linearize_into(t, out.symbols);
  return out;
}

/// Inverse of linearize(). Each backtracking symbol closes the nearest
/// pending symbol with the same label; pending symbols that are never
/// closed become leaves. Decoding is unique when leaf labels and internal
/// labels are disjoint, as with POS tags vs phrase categories.
inline ParseTree delinearize(const std::vector<std::string>& symbols) {
  if (symbols.empty()) throw ValidityError("empty symbol sequence", 1);
  struct Item {
    ParseTree tree;
    bool pending = false;
    std::size_t start = 0;  // 1-based position of the first symbol
  };
  std::vector<Item> stack;
  for (std::size_t i = 0; i < symbols.size(); ++i) {
    const std::string& s = symbols[i];
    const std::size_t pos = i + 1;
    if (s.empty() || s == "/") throw ValidityError("empty symbol", pos);
    if (!is_backtrack_symbol(s)) {
      stack.push_back(Item{leaf(s), true, pos});
      continue;
    }
    const std::string_view label = std::string_view(s).substr(1);
    std::size_t open = stack.size();
    while (open > 0) {
      const Item& it = stack[open - 1];
      if (it.pending && it.tree.label == label) break;
      --open;
    }
    if (open == 0) throw ValidityError("unmatched backtracking symbol '" + s + "'", pos);
    --open;
    if (open + 1 == stack.size()) throw ValidityError("premature close of '" + std::string(label) + "'", pos);
    Item parent{ParseTree{std::string(label), {}}, false, stack[open].start};
    for (std::size_t k = open + 1; k < stack.size(); ++k) {
      parent.tree.children.push_back(std::move(stack[k].tree));
    }
    stack.resize(open);
    stack.push_back(std::move(parent));
  }
  if (stack.size() != 1) throw ValidityError("multiple roots", stack[1].start);
  return std::move(stack[0].tree);
}

inline ParseTree delinearize(const LinearizedTree& t) { return delinearize(t.symbols); }

/// Syntax-symbol ids. Open and backtracking symbols get distinct ids so
/// they have separate embeddings. Ids 0-3 mirror the word vocabulary's
/// reserved block.
class SyntaxVocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kBos = 1;
  static constexpr int kEos = 2;
  static constexpr int kUnk = 3;

  SyntaxVocabulary() : symbols_{"<pad>", "<s>", "</s>", "<unk>"} { reindex(); }

  /// Every symbol seen in the training trees, in first-occurrence order.
  static SyntaxVocabulary build(const std::vector<ParseTree>& trees) {
    SyntaxVocabulary v;
    for (const auto& t : trees) {
      for (const auto& s : linearize(t).symbols) {
        if (v.index_.count(s) == 0) {
          v.index_.emplace(s, static_cast<int>(v.symbols_.size()));
          v.symbols_.push_back(s);
        }
      }
    }
    return v;
  }

  std::size_t size() const { return symbols_.size(); }

  int id(std::string_view s) const {
    auto it = index_.find(std::string(s));
    return it == index_.end() ? kUnk : it->second;
  }

  const std::string& symbol(int id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= symbols_.size()) {
      throw InputError("syntax id " + std::to_string(id) + " outside vocabulary");
    }
    return symbols_[static_cast<std::size_t>(id)];
  }

  std::vector<int> encode(const LinearizedTree& t) const {
    std::vector<int> ids;
    ids.reserve(t.size());
    for (const auto& s : t.symbols) ids.push_back(id(s));
    return ids;
  }

  std::string serialize() const {
    std::string out;
    for (const auto& s : symbols_) {
      out += s;
      out += '\n';
    }
    return out;
  }

  static SyntaxVocabulary deserialize(std::string_view text) {
    SyntaxVocabulary v;
    v.symbols_.clear();
    std::size_t start = 0;
    while (start < text.size()) {
      std::size_t end = text.find('\n', start);
      if (end == std::string_view::npos) end = text.size();
      v.symbols_.emplace_back(text.substr(start, end - start));
      start = end + 1;
    }
    if (v.symbols_.size() < 4 || v.symbols_[0] != "<pad>" || v.symbols_[3] != "<unk>") {
      throw CorruptionError("syntax vocabulary lacks the reserved header");
    }
    v.reindex();
    return v;
  }

  std::string hash() const {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx",
                  static_cast<unsigned long long>(fnv1a64(serialize())));
    return buf;
  }

  friend bool operator==(const SyntaxVocabulary& a, const SyntaxVocabulary& b) {
    return a.symbols_ == b.symbols_;
  }

 private:
  void reindex() {
    index_.clear();
    for (std::size_t i = 0; i < symbols_.size(); ++i) index_.emplace(symbols_[i], static_cast<int>(i));
  }

  std::vector<std::string> symbols_;
  std::unordered_map<std::string, int> index_;
};

/// Fallback tree when no parse is available: (X T (X T ... (X T))) with one
/// preterminal T per token.
inline ParseTree right_branching_tree(std::size_t length) {
  if (length == 0) throw InputError("right_branching_tree: empty sentence");
  ParseTree t = node("X", {leaf("T")});
  for (std::size_t i = 1; i < length; ++i) t = node("X", {leaf("T"), std::move(t)});
  return t;
}

inline ParseTree right_branching_tree(const Sentence& s) { return right_branching_tree(s.length()); }

/// Tree file: one bracketed tree per line.
inline std::vector<ParseTree> read_trees(const std::string& path, bool strip_terminals = false) {
  std::vector<ParseTree> trees;
  const auto lines = read_lines(path);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    try {
      ParseTree t = parse_bracketed(lines[i]);
      trees.push_back(strip_terminals ? strip_words(t) : std::move(t));
    } catch (const ParseError& e) {
      throw InputError(path + ":" + std::to_string(i + 1) + ": " + e.what());
    }
  }
  return trees;
}

}  // namespace dssvae
