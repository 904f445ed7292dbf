// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "json.hpp"

#include "dssvae/config.hpp"
#include "dssvae/corpus.hpp"
#include "dssvae/generation.hpp"
#include "dssvae/metrics.hpp"
#include "dssvae/trainer.hpp"

namespace dssvae {

/// Sentences with line-aligned trees. Missing tree files fall back to
/// right-branching trees for every line.
struct TreebankSplit {
  std::vector<Tokens> sentences;
  std::vector<ParseTree> trees;
};

inline TreebankSplit read_split(const std::string& text_path, const std::string& tree_path) {
  TreebankSplit s;
  s.sentences = read_corpus(text_path);
  if (tree_path.empty()) {
    for (const auto& t : s.sentences) s.trees.push_back(right_branching_tree(t.size()));
    return s;
  }
  s.trees = read_trees(tree_path);
  if (s.trees.size() != s.sentences.size()) {
    throw InputError(tree_path + " has " + std::to_string(s.trees.size()) + " trees for " +
                     std::to_string(s.sentences.size()) + " sentences in " + text_path);
  }
  return s;
}

inline TreebankSplit to_split(const CorpusSplit& c) { return {c.sentences, c.trees}; }

struct TrainingData {
  Vocabulary vocab;
  SyntaxVocabulary syntax_vocab;
  std::vector<Example> train;
  std::vector<Example> valid;
};

inline std::vector<Example> make_examples(const TreebankSplit& s, const Vocabulary& vocab,
                                          const SyntaxVocabulary& syntax_vocab) {
  std::vector<Example> out;
  out.reserve(s.sentences.size());
  for (std::size_t i = 0; i < s.sentences.size(); ++i) {
    const Sentence sent = vocab.encode(s.sentences[i]);
    try {
      out.push_back(make_example(sent, s.trees[i], vocab, syntax_vocab));
    } catch (const InputError& e) {
      throw InputError("sentence " + std::to_string(i + 1) + ": " + e.what());
    }
  }
  return out;
}

/// Vocabularies come from the training split only.
inline TrainingData prepare_data(const TreebankSplit& train, const TreebankSplit& valid, std::size_t max_vocab) {
  TrainingData d;
  d.vocab = Vocabulary::build(train.sentences, max_vocab);
  d.syntax_vocab = SyntaxVocabulary::build(train.trees);
  d.train = make_examples(train, d.vocab, d.syntax_vocab);
  d.valid = make_examples(valid, d.vocab, d.syntax_vocab);
  return d;
}

inline TrainingData prepare_data(const RunConfig& cfg) {
  return prepare_data(read_split(cfg.data.train, cfg.data.train_trees),
                      read_split(cfg.data.valid, cfg.data.valid_trees), cfg.max_vocab);
}

inline ModelDims model_dims(const RunConfig& cfg, const TrainingData& d) {
  ModelDims dims = cfg.dims;
  dims.vocab_size = d.vocab.size();
  dims.syntax_vocab_size = d.syntax_vocab.size();
  return dims;
}

struct TrainingResult {
  ModelParams params;
  std::optional<double> best_validation_elbo;
  std::uint64_t best_step = 0;
};

using LogSink = std::function<void(const nlohmann::ordered_json&)>;

/// Full training loop: alternating adversary/VAE steps, validation every
/// checkpoint_every steps and once at the end, best checkpoint written to
/// `checkpoint_dir` when it is nonempty.
inline TrainingResult train_model(const RunConfig& cfg, const TrainingData& data,
                                  const std::filesystem::path& checkpoint_dir, const LogSink& log = {}) {
  Rng init = named_stream(cfg.train.seed, "init");
  TrainingResult result{ModelParams::random(model_dims(cfg, data), init), std::nullopt, 0};
  ModelParams& p = result.params;
  TrainState state = TrainState::seeded(cfg.train.seed, cfg.train.adam);

  const auto checkpoint = [&] {
    CheckpointOutcome o;
    if (checkpoint_dir.empty()) {
      o.validation_elbo = validation_elbo(p, data.valid, cfg.train.weights);
      if (o.validation_elbo < state.best_validation_elbo) {
        state.best_validation_elbo = o.validation_elbo;
        o.saved = true;
      }
    } else {
      o = validate_and_checkpoint(state, p, data.valid, checkpoint_dir, data.vocab, data.syntax_vocab,
                                  cfg.train.weights);
    }
    if (o.saved) {
      result.best_validation_elbo = o.validation_elbo;
      result.best_step = state.step;
    }
    if (log) {
      nlohmann::ordered_json j{{"event", "validation"},
                               {"step", state.step},
                               {"validation_elbo", o.validation_elbo},
                               {"saved", o.saved}};
      if (o.io_error) j["io_error"] = *o.io_error;
      log(j);
    }
  };

  for (std::size_t s = 0; s < cfg.steps; ++s) {
    const std::vector<Example> batch = next_batch(data.train, state, cfg.train.batch_size);
    const StepReport r = train_step(p, batch, state, cfg.train);
    if (log && cfg.log_every > 0 && (r.step % cfg.log_every == 0 || r.step == 1)) log(r.to_json());
    if (r.step % cfg.train.checkpoint_every == 0) checkpoint();
  }
  if (cfg.steps % cfg.train.checkpoint_every != 0 || cfg.steps == 0) checkpoint();
  return result;
}

/// Decodes every sentence from its posterior means and scores the result
/// against the inputs.
inline double reconstruction_bleu(ModelParams& p, const Vocabulary& vocab, const std::vector<Tokens>& corpus,
                                  std::size_t max_len, std::vector<Tokens>* outputs = nullptr) {
  std::vector<Tokens> hyps;
  for (const auto& s : corpus) hyps.push_back(vocab.decode(reconstruct(p, vocab.encode(s), max_len)));
  const double bleu = corpus_bleu(hyps, corpus);
  if (outputs) *outputs = std::move(hyps);
  return bleu;
}

/// Tree lookup for generated sentences: an ingested tree when the exact
/// sentence is known, else a parse by the grammar when one is supplied.
class TreeOracle {
 public:
  void add(const std::vector<Tokens>& sentences, const std::vector<ParseTree>& trees) {
    for (std::size_t i = 0; i < sentences.size() && i < trees.size(); ++i) {
      known_.emplace(join_tokens(sentences[i]), trees[i]);
    }
  }
  void set_grammar(Grammar g) { grammar_ = std::move(g); }

  std::optional<ParseTree> find(const Tokens& s) const {
    if (auto it = known_.find(join_tokens(s)); it != known_.end()) return it->second;
    if (grammar_) return grammar_parse(*grammar_, s);
    return std::nullopt;
  }

 private:
  std::unordered_map<std::string, ParseTree> known_;
  std::optional<Grammar> grammar_;
};

/// One transfer triple with a uniform tree source: oracle trees for all
/// three sentences when the output has one, right-branching trees for all
/// three otherwise.
inline TransferTriple make_transfer_triple(const TreeOracle& oracle, Tokens output, Tokens ref_sem,
                                           const ParseTree& ref_sem_tree, Tokens ref_syn,
                                           const ParseTree& ref_syn_tree) {
  TransferTriple t;
  if (auto tree = output.empty() ? std::nullopt : oracle.find(output)) {
    t.output_tree = *tree;
    t.ref_sem_tree = ref_sem_tree;
    t.ref_syn_tree = ref_syn_tree;
  } else {
    t.output_tree = output.empty() ? leaf("X") : right_branching_tree(output.size());
    t.ref_sem_tree = right_branching_tree(ref_sem.size());
    t.ref_syn_tree = right_branching_tree(ref_syn.size());
  }
  t.output = std::move(output);
  t.ref_sem = std::move(ref_sem);
  t.ref_syn = std::move(ref_syn);
  return t;
}

}  // namespace dssvae
