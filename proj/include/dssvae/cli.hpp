// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "dssvae/config.hpp"
#include "dssvae/corpus.hpp"
#include "dssvae/evaluation.hpp"
#include "dssvae/gradcheck_suite.hpp"
#include "dssvae/pipeline.hpp"

namespace dssvae::cli {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace detail {

inline void emit(std::ostream& out, const ordered_json& j) { out << j.dump() << '\n'; }

inline void write_report(const std::string& out_dir, const std::string& name, const ordered_json& j) {
  if (out_dir.empty()) return;
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create " + out_dir + ": " + ec.message());
  dssvae::detail::write_file(fs::path(out_dir) / name, j.dump(2) + "\n");
}

inline void write_outputs(const std::string& out_dir, const std::string& name, const std::vector<Tokens>& lines) {
  if (out_dir.empty()) return;
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create " + out_dir + ": " + ec.message());
  std::vector<std::string> text;
  for (const auto& l : lines) text.push_back(join_tokens(l));
  write_lines((fs::path(out_dir) / name).string(), text);
}

inline void emit_outputs(std::ostream& out, const char* event, const std::vector<Tokens>& lines) {
  for (std::size_t i = 0; i < lines.size(); ++i) {
    emit(out, {{"event", event}, {"index", i}, {"text", join_tokens(lines[i])}});
  }
}

inline std::vector<Tokens> read_inputs(const std::string& path) {
  std::vector<Tokens> s = read_corpus(path);
  if (s.empty()) throw InputError(path + " contains no sentences");
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i].empty()) throw InputError(path + ": line " + std::to_string(i + 1) + " is empty");
  }
  return s;
}

inline TreeOracle make_oracle(const RunConfig& cfg, bool toy_grammar) {
  TreeOracle oracle;
  const auto add = [&](const std::string& text, const std::string& trees) {
    if (text.empty() || trees.empty()) return;
    const TreebankSplit s = read_split(text, trees);
    oracle.add(s.sentences, s.trees);
  };
  add(cfg.data.train, cfg.data.train_trees);
  add(cfg.data.valid, cfg.data.valid_trees);
  add(cfg.data.test, cfg.data.test_trees);
  add(cfg.data.test_ref, cfg.data.test_ref_trees);
  if (toy_grammar) oracle.set_grammar(Grammar::toy());
  return oracle;
}

inline const std::string& require_path(const std::string& p, const char* key) {
  if (p.empty()) throw ConfigError(std::string("data.") + key + " is required for this command");
  return p;
}

}  // namespace detail

/// Parses argv and runs one subcommand. Returns 0 on success, 1 on usage,
/// input, config or I/O errors, 2 on numeric failure.
inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Disentangled syntax/semantics sentence VAE", "dssvae"};
  app.require_subcommand(1);

  // gen-corpus
  SyntheticCorpusSpec corpus_spec;
  std::string out_dir;
  auto* gen = app.add_subcommand("gen-corpus", "Write a synthetic corpus with trees and reference paraphrases");
  gen->add_option("--out", out_dir, "Output directory")->required();
  gen->add_option("--n-train", corpus_spec.n_train, "Training sentences");
  gen->add_option("--n-valid", corpus_spec.n_valid, "Validation sentences");
  gen->add_option("--n-test", corpus_spec.n_test, "Test sentences");
  gen->add_option("--seed", corpus_spec.seed, "Seed");

  // train
  std::string config_path;
  std::optional<std::uint64_t> seed_override;
  std::optional<std::size_t> steps_override;
  auto* train = app.add_subcommand("train", "Train a model; the best checkpoint is written to --out");
  train->add_option("--config", config_path, "JSON run config")->required();
  train->add_option("--out", out_dir, "Checkpoint directory (defaults to out_dir in the config)");
  train->add_option("--seed", seed_override, "Override the config seed");
  train->add_option("--steps", steps_override, "Override training.steps");

  // generation
  std::string ckpt, input_path, syntax_path, semantics_path;
  std::size_t max_len = 30;
  std::size_t n = 10;
  std::uint64_t seed = 1;
  double temperature = 1.0;
  const auto add_common = [&](CLI::App* c) {
    c->add_option("--ckpt", ckpt, "Checkpoint directory")->required();
    c->add_option("--max-len", max_len, "Maximum output length");
    c->add_option("--out", out_dir, "Also write outputs under this directory");
  };
  auto* recon = app.add_subcommand("reconstruct", "Decode each input from its posterior means");
  add_common(recon);
  recon->add_option("--input", input_path, "One sentence per line")->required();
  auto* sample = app.add_subcommand("sample", "Decode sentences from prior samples");
  add_common(sample);
  sample->add_option("--n", n, "Number of samples");
  sample->add_option("--seed", seed, "Seed");
  auto* para = app.add_subcommand("paraphrase", "Keep the semantic code, sample the syntactic code");
  add_common(para);
  para->add_option("--input", input_path, "One sentence per line")->required();
  para->add_option("--seed", seed, "Seed");
  para->add_option("--temperature", temperature, "Scale on the syntactic posterior spread");
  auto* transfer = app.add_subcommand("transfer", "Combine the syntax of one sentence with the semantics of another");
  add_common(transfer);
  transfer->add_option("--syntax", syntax_path, "Syntax donors, one per line")->required();
  transfer->add_option("--semantics", semantics_path, "Semantics donors, line-aligned")->required();

  // evaluation
  bool toy_grammar = false;
  const auto add_eval = [&](CLI::App* c) {
    c->add_option("--ckpt", ckpt, "Checkpoint directory")->required();
    c->add_option("--config", config_path, "JSON run config (data paths and eval settings)")->required();
    c->add_option("--out", out_dir, "Write the report under this directory");
  };
  auto* eval_gen = app.add_subcommand("eval-generation", "Reconstruction BLEU, forward and reverse perplexity");
  add_eval(eval_gen);
  auto* eval_para = app.add_subcommand("eval-paraphrase", "BLEU against inputs and reference paraphrases");
  add_eval(eval_para);
  auto* eval_transfer = app.add_subcommand("eval-transfer", "Word BLEU and tree edit distance deltas");
  add_eval(eval_transfer);
  eval_transfer->add_flag("--toy-grammar", toy_grammar, "Parse outputs with the bundled synthetic grammar");

  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference check of every differentiable op");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, err, err);
    return 1;
  }

  try {
    if (*gen) {
      const SyntheticCorpus c = gen_corpus(corpus_spec);
      write_corpus(out_dir, c);
      detail::emit(out, {{"event", "gen_corpus"},
                         {"out", out_dir},
                         {"n_train", c.train.sentences.size()},
                         {"n_valid", c.valid.sentences.size()},
                         {"n_test", c.test.sentences.size()},
                         {"seed", corpus_spec.seed}});
      return 0;
    }
    if (*train) {
      RunConfig cfg = load_config(config_path);
      if (seed_override) {
        cfg.train.seed = *seed_override;
        cfg.eval.lm.seed = *seed_override;
      }
      if (steps_override) cfg.steps = *steps_override;
      if (!out_dir.empty()) cfg.out_dir = out_dir;
      if (cfg.out_dir.empty()) throw ConfigError("no output directory: pass --out or set out_dir");
      const TrainingData data = prepare_data(cfg);
      detail::write_report(cfg.out_dir, "config.json", config_to_json(cfg));
      const TrainingResult r = train_model(cfg, data, cfg.out_dir, [&](const ordered_json& j) { detail::emit(out, j); });
      ordered_json done{{"event", "done"}, {"best_step", r.best_step}};
      done["best_validation_elbo"] =
          r.best_validation_elbo ? ordered_json(*r.best_validation_elbo) : ordered_json(nullptr);
      detail::emit(out, done);
      return 0;
    }
    if (*recon || *sample || *para || *transfer) {
      LoadedCheckpoint ck = load_checkpoint(ckpt);
      GenerationRequest req;
      req.max_len = max_len;
      req.seed = seed;
      req.syn_temperature = temperature;
      std::vector<Tokens> outputs;
      const char* event = "output";
      if (*sample) {
        req.mode = GenerationMode::kSample;
        outputs = decode_all(ck.vocab, generate(ck.params, req, n));
        event = "sample";
      } else if (*transfer) {
        const auto syn = detail::read_inputs(syntax_path);
        const auto sem = detail::read_inputs(semantics_path);
        if (syn.size() != sem.size()) {
          throw InputError("transfer: " + std::to_string(syn.size()) + " syntax lines but " +
                           std::to_string(sem.size()) + " semantics lines");
        }
        req.mode = GenerationMode::kTransfer;
        for (std::size_t i = 0; i < syn.size(); ++i) {
          req.inputs = {ck.vocab.encode(syn[i]), ck.vocab.encode(sem[i])};
          outputs.push_back(ck.vocab.decode(generate(ck.params, req).front()));
        }
        event = "transfer";
      } else {
        const auto inputs = detail::read_inputs(input_path);
        if (*recon) {
          req.mode = GenerationMode::kReconstruct;
          event = "reconstruct";
          for (const auto& s : inputs) {
            req.inputs = {ck.vocab.encode(s)};
            outputs.push_back(ck.vocab.decode(generate(ck.params, req).front()));
          }
        } else {
          // One stream across the file so lines get distinct draws.
          if (!(temperature >= 0.0)) throw InputError("--temperature must be nonnegative");
          if (max_len == 0) throw InputError("max_len must be at least 1");
          Rng rng = named_stream(seed, "sampling");
          for (const auto& s : inputs) {
            outputs.push_back(ck.vocab.decode(paraphrase(ck.params, ck.vocab.encode(s), rng, temperature, max_len)));
          }
          event = "paraphrase";
        }
      }
      detail::emit_outputs(out, event, outputs);
      detail::write_outputs(out_dir, std::string(event) + ".txt", outputs);
      return 0;
    }
    if (*eval_gen || *eval_para || *eval_transfer) {
      const RunConfig cfg = load_config(config_path);
      LoadedCheckpoint ck = load_checkpoint(ckpt);
      ordered_json report;
      if (*eval_gen) {
        const auto valid = read_corpus(detail::require_path(cfg.data.valid, "valid"));
        const auto test = read_corpus(detail::require_path(cfg.data.test, "test"));
        report = evaluate_generation(ck.params, ck.vocab, cfg.eval, cfg.train.seed, valid, test).to_json();
      } else if (*eval_para) {
        const auto test = read_corpus(detail::require_path(cfg.data.test, "test"));
        const auto refs = read_corpus(detail::require_path(cfg.data.test_ref, "test_ref"));
        const ParaphraseEval r = evaluate_paraphrase(ck.params, ck.vocab, test, refs, cfg.eval.syn_temperature,
                                                     cfg.train.seed, cfg.eval.max_len);
        report = r.to_json();
        report["syn_temperature"] = cfg.eval.syn_temperature;
        detail::write_outputs(out_dir, "paraphrase.txt", r.outputs);
      } else {
        const TreebankSplit test =
            read_split(detail::require_path(cfg.data.test, "test"), cfg.data.test_trees);
        const TransferEval r =
            evaluate_transfer(ck.params, ck.vocab, test, detail::make_oracle(cfg, toy_grammar), cfg.eval.max_len);
        report = {{"event", "eval_transfer"}};
        const ordered_json fields = r.report.to_json();
        for (const auto& [k, v] : fields.items()) report[k] = v;
        report["n"] = r.outputs.size();
        report["oracle_trees"] = r.oracle_trees;
        detail::write_outputs(out_dir, "transfer.txt", r.outputs);
      }
      report["checkpoint_step"] = ck.manifest.step;
      report["config"] = config_to_json(cfg);
      detail::emit(out, report);
      detail::write_report(out_dir, std::string(report["event"].get<std::string>()) + ".json", report);
      return 0;
    }
    if (*gradcheck) {
      const GradCheckReport ops = run_op_gradchecks();
      ordered_json j = ops.to_json();
      bool pass = ops.pass;
      ordered_json model = ordered_json::array();
      for (std::uint64_t s = 1; s <= 3; ++s) {
        const double e = model_gradcheck(s);
        const bool ok = e < 1e-3;
        pass = pass && ok;
        model.push_back({{"seed", s}, {"max_relative_error", e}, {"pass", ok}});
      }
      j["pass"] = pass;
      j["model"] = model;
      detail::emit(out, j);
      return pass ? 0 : 1;
    }
  } catch (const NumericError& e) {
    err << "numeric error: " << e.what() << '\n';
    return 2;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}

inline int run(const std::vector<std::string>& args, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  std::vector<const char*> argv{"dssvae"};
  for (const auto& a : args) argv.push_back(a.c_str());
  return run(static_cast<int>(argv.size()), argv.data(), out, err);
}

}  // namespace dssvae::cli
