// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "dssvae/generation.hpp"
#include "dssvae/metrics.hpp"
#include "dssvae/pipeline.hpp"

namespace dssvae {

inline std::vector<Tokens> decode_all(const Vocabulary& vocab, const std::vector<Sentence>& s) {
  std::vector<Tokens> out;
  out.reserve(s.size());
  for (const auto& x : s) out.push_back(vocab.decode(x));
  return out;
}

struct GenerationEval {
  double reconstruction_bleu = 0.0;
  double forward_ppl = 0.0;
  std::optional<double> reverse_ppl;  // needs at least 100 samples
  std::size_t n_samples = 0;
  std::vector<Tokens> samples;

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["event"] = "eval_generation";
    j["reconstruction_bleu"] = reconstruction_bleu;
    j["forward_ppl"] = forward_ppl;
    j["reverse_ppl"] = reverse_ppl ? nlohmann::ordered_json(*reverse_ppl) : nlohmann::ordered_json(nullptr);
    j["n_samples"] = n_samples;
    return j;
  }
};

/// Reconstruction BLEU on `test`, forward PPL of prior samples under an LM
/// trained on `lm_corpus` (keep it disjoint from the generator's training
/// data), and reverse PPL of `test` under an LM trained on the samples.
inline GenerationEval evaluate_generation(ModelParams& p, const Vocabulary& vocab, const EvalConfig& cfg,
                                          std::uint64_t seed, const std::vector<Tokens>& lm_corpus,
                                          const std::vector<Tokens>& test) {
  GenerationEval r;
  r.reconstruction_bleu = reconstruction_bleu(p, vocab, test, cfg.max_len);
  Rng rng = named_stream(seed, "sampling");
  r.samples = decode_all(vocab, sample_prior(p, cfg.n_samples, rng, cfg.max_len));
  r.n_samples = cfg.n_samples;
  EvalLmConfig lm_cfg = cfg.lm;
  lm_cfg.seed = seed;
  EvalLm lm = train_eval_lm(lm_corpus, lm_cfg);
  r.forward_ppl = forward_ppl(lm, r.samples);
  if (cfg.n_samples >= 100) r.reverse_ppl = reverse_ppl(r.samples, cfg.n_samples, test, lm_cfg);
  return r;
}

struct ParaphraseEval {
  ParaphraseScores scores;
  double bow_overlap = 0.0;  // mean over inputs
  std::vector<Tokens> outputs;

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["event"] = "eval_paraphrase";
    j["bleu_ori"] = scores.bleu_ori;
    j["bleu_ref"] = scores.bleu_ref;
    j["bleu_ori_below_55"] = scores.below_threshold;
    j["bow_overlap"] = bow_overlap;
    j["n"] = outputs.size();
    return j;
  }
};

/// One paraphrase per input, all drawn from a single sampling stream in
/// input order.
inline ParaphraseEval evaluate_paraphrase(ModelParams& p, const Vocabulary& vocab, const std::vector<Tokens>& inputs,
                                          const std::vector<Tokens>& references, double syn_temperature,
                                          std::uint64_t seed, std::size_t max_len) {
  if (inputs.size() != references.size()) {
    throw InputError("eval-paraphrase: " + std::to_string(inputs.size()) + " inputs but " +
                     std::to_string(references.size()) + " references");
  }
  ParaphraseEval r;
  Rng rng = named_stream(seed, "sampling");
  double overlap = 0.0;
  for (const auto& x : inputs) {
    r.outputs.push_back(vocab.decode(paraphrase(p, vocab.encode(x), rng, syn_temperature, max_len)));
    overlap += bow_overlap(x, r.outputs.back());
  }
  r.scores = paraphrase_scores(r.outputs, inputs, references);
  r.bow_overlap = overlap / static_cast<double>(inputs.size());
  return r;
}

struct TransferEval {
  TransferReport report;
  std::vector<Tokens> outputs;
  std::size_t oracle_trees = 0;  // triples scored with ingested or grammar trees
};

/// Pairs sentence i (syntax) with sentence i+1 (semantics), cyclically.
inline TransferEval evaluate_transfer(ModelParams& p, const Vocabulary& vocab, const TreebankSplit& test,
                                      const TreeOracle& oracle, std::size_t max_len) {
  const std::size_t n = test.sentences.size();
  if (n < 2) throw InputError("eval-transfer: at least two test sentences are required");
  TransferEval r;
  std::vector<TransferTriple> triples;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t j = (i + 1) % n;
    Tokens out = vocab.decode(
        syntax_transfer(p, vocab.encode(test.sentences[i]), vocab.encode(test.sentences[j]), max_len));
    r.outputs.push_back(out);
    const bool has_oracle = !out.empty() && oracle.find(out).has_value();
    r.oracle_trees += has_oracle ? 1 : 0;
    triples.push_back(make_transfer_triple(oracle, std::move(out), test.sentences[j], test.trees[j],
                                           test.sentences[i], test.trees[i]));
  }
  r.report = transfer_report(triples);
  return r;
}

}  // namespace dssvae
