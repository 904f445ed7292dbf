// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "dssvae/adam.hpp"
#include "dssvae/model.hpp"
#include "dssvae/text.hpp"
#include "dssvae/tree.hpp"

namespace dssvae {

// ---------------------------------------------------------------------------
// BLEU

namespace detail {

inline std::map<std::vector<std::string>, std::size_t> ngram_counts(const Tokens& s, std::size_t n) {
  std::map<std::vector<std::string>, std::size_t> out;
  if (s.size() < n) return out;
  for (std::size_t i = 0; i + n <= s.size(); ++i) {
    ++out[std::vector<std::string>(s.begin() + static_cast<std::ptrdiff_t>(i),
                                   s.begin() + static_cast<std::ptrdiff_t>(i + n))];
  }
  return out;
}

}  // namespace detail

/// Corpus BLEU in [0, 100] with one reference per hypothesis.
///
/// A zero n-gram precision is floored at 1 / (2 * candidate n-gram count).
/// Orders with no candidate n-grams at all are left out of the mean. No
/// unigram overlap scores 0, and an exact match of every pair scores 100.
inline double corpus_bleu(const std::vector<Tokens>& hypotheses, const std::vector<Tokens>& references,
                          std::size_t max_n = 4) {
  if (hypotheses.size() != references.size()) {
    throw InputError("corpus_bleu: " + std::to_string(hypotheses.size()) + " hypotheses vs " +
                     std::to_string(references.size()) + " references");
  }
  if (hypotheses.empty()) throw InputError("corpus_bleu: empty corpus");
  if (max_n == 0) throw InputError("corpus_bleu: max_n must be at least 1");
  if (hypotheses == references) return 100.0;

  std::size_t hyp_len = 0, ref_len = 0;
  for (std::size_t i = 0; i < hypotheses.size(); ++i) {
    hyp_len += hypotheses[i].size();
    ref_len += references[i].size();
  }
  if (hyp_len == 0) return 0.0;

  double log_sum = 0.0;
  std::size_t orders = 0;
  for (std::size_t n = 1; n <= max_n; ++n) {
    std::size_t matched = 0, total = 0;
    for (std::size_t i = 0; i < hypotheses.size(); ++i) {
      const auto hyp = detail::ngram_counts(hypotheses[i], n);
      const auto ref = detail::ngram_counts(references[i], n);
      for (const auto& [gram, count] : hyp) {
        total += count;
        auto it = ref.find(gram);
        if (it != ref.end()) matched += std::min(count, it->second);
      }
    }
    if (total == 0) continue;
    if (matched == 0 && n == 1) return 0.0;
    const double precision = matched > 0 ? static_cast<double>(matched) / static_cast<double>(total)
                                         : 1.0 / (2.0 * static_cast<double>(total));
    log_sum += std::log(precision);
    ++orders;
  }
  const double bp = hyp_len > ref_len
                        ? 1.0
                        : std::exp(1.0 - static_cast<double>(ref_len) / static_cast<double>(hyp_len));
  return 100.0 * bp * std::exp(log_sum / static_cast<double>(orders));
}

struct ParaphraseScores {
  double bleu_ori = 0.0;
  double bleu_ref = 0.0;
  bool below_threshold = false;  // bleu_ori < 55

  nlohmann::ordered_json to_json() const {
    return {{"bleu_ori", bleu_ori}, {"bleu_ref", bleu_ref}, {"bleu_ori_below_55", below_threshold}};
  }
};

inline ParaphraseScores paraphrase_scores(const std::vector<Tokens>& outputs,
                                          const std::vector<Tokens>& originals,
                                          const std::vector<Tokens>& references) {
  if (outputs.empty()) throw InputError("paraphrase_scores: no outputs");
  if (outputs.size() != originals.size() || outputs.size() != references.size()) {
    throw InputError("paraphrase_scores: outputs, originals and references are not aligned");
  }
  ParaphraseScores s;
  s.bleu_ori = corpus_bleu(outputs, originals);
  s.bleu_ref = corpus_bleu(outputs, references);
  s.below_threshold = s.bleu_ori < 55.0;
  return s;
}

/// Fraction of the input's distinct tokens that also occur in the output.
inline double bow_overlap(const Tokens& output, const Tokens& input) {
  std::vector<std::string> a(input.begin(), input.end()), b(output.begin(), output.end());
  std::sort(a.begin(), a.end());
  a.erase(std::unique(a.begin(), a.end()), a.end());
  std::sort(b.begin(), b.end());
  b.erase(std::unique(b.begin(), b.end()), b.end());
  if (a.empty()) return 0.0;
  std::vector<std::string> common;
  std::set_intersection(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(common));
  return static_cast<double>(common.size()) / static_cast<double>(a.size());
}

// ---------------------------------------------------------------------------
// Tree edit distance

namespace detail {

struct PostorderTree {
  std::vector<std::string> labels;  // 1-based
  std::vector<std::size_t> leftmost;
  std::vector<std::size_t> keyroots;
};

inline std::size_t postorder_fill(const ParseTree& t, PostorderTree& out) {
  std::size_t first = 0;
  for (const auto& c : t.children) {
    const std::size_t id = postorder_fill(c, out);
    if (first == 0) first = out.leftmost[id];
  }
  out.labels.push_back(t.label);
  const std::size_t self = out.labels.size() - 1;
  out.leftmost.push_back(first == 0 ? self : first);
  return self;
}

inline PostorderTree postorder(const ParseTree& t) {
  PostorderTree out;
  out.labels.emplace_back();
  out.leftmost.push_back(0);
  postorder_fill(t, out);
  const std::size_t n = out.labels.size() - 1;
  // Keyroots: the highest node for each distinct leftmost leaf.
  std::vector<bool> seen(n + 1, false);
  for (std::size_t i = n; i >= 1; --i) {
    if (!seen[out.leftmost[i]]) {
      seen[out.leftmost[i]] = true;
      out.keyroots.push_back(i);
    }
  }
  std::sort(out.keyroots.begin(), out.keyroots.end());
  return out;
}

}  // namespace detail

/// Zhang-Shasha ordered tree edit distance, unit insert/delete/rename.
inline std::size_t tree_edit_distance(const ParseTree& a, const ParseTree& b) {
  const auto A = detail::postorder(a);
  const auto B = detail::postorder(b);
  const std::size_t n = A.labels.size() - 1, m = B.labels.size() - 1;
  std::vector<std::vector<std::size_t>> td(n + 1, std::vector<std::size_t>(m + 1, 0));
  std::vector<std::vector<std::size_t>> fd(n + 2, std::vector<std::size_t>(m + 2, 0));
  for (std::size_t i : A.keyroots) {
    for (std::size_t j : B.keyroots) {
      const std::size_t li = A.leftmost[i], lj = B.leftmost[j];
      // fd indices are offset: row x stands for forest A[li..x-1+li-1].
      fd[0][0] = 0;
      for (std::size_t x = li; x <= i; ++x) fd[x - li + 1][0] = fd[x - li][0] + 1;
      for (std::size_t y = lj; y <= j; ++y) fd[0][y - lj + 1] = fd[0][y - lj] + 1;
      for (std::size_t x = li; x <= i; ++x) {
        for (std::size_t y = lj; y <= j; ++y) {
          const std::size_t xi = x - li + 1, yj = y - lj + 1;
          const std::size_t del = fd[xi - 1][yj] + 1;
          const std::size_t ins = fd[xi][yj - 1] + 1;
          if (A.leftmost[x] == li && B.leftmost[y] == lj) {
            const std::size_t ren = fd[xi - 1][yj - 1] + (A.labels[x] == B.labels[y] ? 0 : 1);
            fd[xi][yj] = std::min({del, ins, ren});
            td[x][y] = fd[xi][yj];
          } else {
            const std::size_t px = A.leftmost[x] - li, py = B.leftmost[y] - lj;
            fd[xi][yj] = std::min({del, ins, fd[px][py] + td[x][y]});
          }
        }
      }
    }
  }
  return td[n][m];
}

// ---------------------------------------------------------------------------
// Evaluation language model

struct EvalLmConfig {
  std::size_t embedding_dim = 128;
  std::size_t hidden_dim = 256;
  std::size_t epochs = 5;
  std::size_t batch_size = 32;
  std::size_t max_vocab = 30000;
  double learning_rate = 1e-3;
  double clip_norm = 5.0;
  double init_scale = 0.08;
  std::uint64_t seed = 1;
};

/// Single-layer GRU language model with its own vocabulary, frozen once
/// trained.
struct EvalLm {
  Vocabulary vocab;
  Parameter embedding;
  GruParams gru;
  LinearParams out;

  EvalLm() = default;
  EvalLm(Vocabulary v, std::size_t emb, std::size_t hidden)
      : vocab(std::move(v)),
        embedding("lm.embedding", ParamGroup::kMain, Tensor(vocab.size(), emb)),
        gru("lm.gru", ParamGroup::kMain, emb, hidden),
        out("lm.out", ParamGroup::kMain, hidden, vocab.size()) {}

  std::vector<Parameter*> parameters() {
    std::vector<Parameter*> ps{&embedding};
    gru.for_each([&](Parameter& p) { ps.push_back(&p); });
    out.for_each([&](Parameter& p) { ps.push_back(&p); });
    return ps;
  }
};

namespace detail {

// Summed NLL of the batch under the LM, </s> included.
inline ad::Var lm_nll(ad::Tape& tape, EvalLm& lm, const std::vector<std::vector<int>>& seqs,
                      bool trainable) {
  ad::Var h0 = tape.constant(Tensor(seqs.size(), lm.gru.hidden_size()));
  return model::teacher_forced_nll(tape, tape.param(lm.embedding, trainable), h0, lm.gru, lm.out,
                                   trainable, {&seqs, &seqs, true});
}

inline std::vector<Tokens> nonempty(const std::vector<Tokens>& corpus) {
  std::vector<Tokens> out;
  for (const auto& s : corpus) {
    if (!s.empty()) out.push_back(s);
  }
  return out;
}

}  // namespace detail

/// Trains an EvalLm on `corpus` (vocabulary built from the same corpus).
/// Empty sentences are skipped.
inline EvalLm train_eval_lm(const std::vector<Tokens>& corpus, const EvalLmConfig& cfg) {
  const auto data = detail::nonempty(corpus);
  if (data.empty()) throw InputError("train_eval_lm: no nonempty sentences");
  EvalLm lm(Vocabulary::build(data, cfg.max_vocab), cfg.embedding_dim, cfg.hidden_dim);
  Rng init = named_stream(cfg.seed, "lm_init");
  for (Parameter* p : lm.parameters()) {
    const bool bias = p->name.size() >= 2 && p->name.compare(p->name.size() - 2, 2, ".b") == 0;
    if (!bias) p->value = uniform(p->value.rows(), p->value.cols(), -cfg.init_scale, cfg.init_scale, init);
  }
  std::vector<std::vector<int>> encoded;
  encoded.reserve(data.size());
  for (const auto& s : data) encoded.push_back(lm.vocab.encode(s).ids);

  Rng shuffle = named_stream(cfg.seed, "lm_shuffle");
  OptimizerState opt;
  opt.config.learning_rate = cfg.learning_rate;
  auto params = lm.parameters();
  std::vector<std::size_t> order(encoded.size());
  const std::size_t bs = std::max<std::size_t>(1, cfg.batch_size);
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), shuffle);
    for (std::size_t start = 0; start < order.size(); start += bs) {
      std::vector<std::vector<int>> batch;
      for (std::size_t i = start; i < std::min(order.size(), start + bs); ++i) batch.push_back(encoded[order[i]]);
      for (Parameter* p : params) p->zero_grad();
      ad::Tape tape;
      ad::Var loss = ad::scale(detail::lm_nll(tape, lm, batch, true), 1.0 / static_cast<double>(batch.size()));
      tape.backward(loss);
      clip_grad_norm(params, cfg.clip_norm);
      adam_step(params, opt);
    }
  }
  return lm;
}

/// exp(total NLL / total tokens) over the nonempty sentences of `corpus`,
/// each contributing its tokens plus </s>.
inline double perplexity(EvalLm& lm, const std::vector<Tokens>& corpus) {
  const auto data = detail::nonempty(corpus);
  if (data.empty()) throw InputError("perplexity: no scorable tokens");
  double nll = 0.0;
  std::size_t tokens = 0;
  constexpr std::size_t kChunk = 64;
  for (std::size_t start = 0; start < data.size(); start += kChunk) {
    std::vector<std::vector<int>> batch;
    for (std::size_t i = start; i < std::min(data.size(), start + kChunk); ++i) {
      batch.push_back(lm.vocab.encode(data[i]).ids);
      tokens += data[i].size() + 1;
    }
    ad::Tape tape;
    nll += detail::lm_nll(tape, lm, batch, false).value().item();
  }
  return std::exp(nll / static_cast<double>(tokens));
}

/// Perplexity of generated samples under a fixed evaluation LM.
inline double forward_ppl(EvalLm& lm, const std::vector<Tokens>& samples) {
  return perplexity(lm, samples);
}

/// Trains a fresh LM on the samples and scores the held-out test set with
/// it; test tokens go through the samples' vocabulary.
inline double reverse_ppl(const std::vector<Tokens>& samples, std::size_t n_samples,
                          const std::vector<Tokens>& test, const EvalLmConfig& cfg) {
  if (n_samples < 100) throw InputError("reverse_ppl: at least 100 samples are required");
  if (test.empty()) throw InputError("reverse_ppl: empty test set");
  const auto data = detail::nonempty(samples);
  if (data.size() < n_samples) {
    throw InputError("reverse_ppl: sampler produced " + std::to_string(data.size()) +
                     " nonempty sentences, " + std::to_string(n_samples) + " required");
  }
  EvalLm lm = train_eval_lm(std::vector<Tokens>(data.begin(), data.begin() + static_cast<std::ptrdiff_t>(n_samples)), cfg);
  return perplexity(lm, test);
}

// ---------------------------------------------------------------------------
// Syntax transfer report

struct TransferTriple {
  Tokens output;
  std::optional<ParseTree> output_tree;
  Tokens ref_sem;
  std::optional<ParseTree> ref_sem_tree;
  Tokens ref_syn;
  std::optional<ParseTree> ref_syn_tree;
};

struct TransferReport {
  double word_bleu_vs_ref_sem = 0.0;
  double word_bleu_vs_ref_syn = 0.0;
  double delta_word_bleu = 0.0;
  double ted_vs_ref_sem = 0.0;
  double ted_vs_ref_syn = 0.0;
  double delta_ted = 0.0;
  std::optional<double> geo_mean;

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["word_bleu_ref_sem"] = word_bleu_vs_ref_sem;
    j["word_bleu_ref_syn"] = word_bleu_vs_ref_syn;
    j["delta_word_bleu"] = delta_word_bleu;
    j["ted_ref_sem"] = ted_vs_ref_sem;
    j["ted_ref_syn"] = ted_vs_ref_syn;
    j["delta_ted"] = delta_ted;
    j["geo_mean"] = geo_mean ? nlohmann::ordered_json(*geo_mean) : nlohmann::ordered_json(nullptr);
    return j;
  }
};

/// Word BLEU against each reference plus per-sentence TED averaged over
/// the set. geo_mean is defined only when both deltas are positive.
inline TransferReport transfer_report(const std::vector<TransferTriple>& triples) {
  if (triples.empty()) throw InputError("transfer_report: empty evaluation set");
  std::vector<Tokens> out, sem, syn;
  double ted_sem = 0.0, ted_syn = 0.0;
  for (std::size_t i = 0; i < triples.size(); ++i) {
    const auto& t = triples[i];
    if (!t.output_tree || !t.ref_sem_tree || !t.ref_syn_tree) {
      throw InputError("transfer_report: missing tree for triple " + std::to_string(i + 1));
    }
    out.push_back(t.output);
    sem.push_back(t.ref_sem);
    syn.push_back(t.ref_syn);
    ted_sem += static_cast<double>(tree_edit_distance(*t.output_tree, *t.ref_sem_tree));
    ted_syn += static_cast<double>(tree_edit_distance(*t.output_tree, *t.ref_syn_tree));
  }
  const double n = static_cast<double>(triples.size());
  TransferReport r;
  r.word_bleu_vs_ref_sem = corpus_bleu(out, sem);
  r.word_bleu_vs_ref_syn = corpus_bleu(out, syn);
  r.delta_word_bleu = r.word_bleu_vs_ref_sem - r.word_bleu_vs_ref_syn;
  r.ted_vs_ref_sem = ted_sem / n;
  r.ted_vs_ref_syn = ted_syn / n;
  r.delta_ted = r.ted_vs_ref_sem - r.ted_vs_ref_syn;
  if (r.delta_word_bleu > 0.0 && r.delta_ted > 0.0) r.geo_mean = std::sqrt(r.delta_word_bleu * r.delta_ted);
  return r;
}

}  // namespace dssvae
