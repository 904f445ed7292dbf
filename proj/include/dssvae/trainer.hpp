// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "json.hpp"

#include "dssvae/adam.hpp"
#include "dssvae/model.hpp"

namespace dssvae {

/// Sigmoid ramp of a KL multiplier from 0 toward `target_weight`.
struct AnnealSchedule {
  double target_weight = 1.0;
  double midpoint_step = 2000.0;
  double steepness = 1.0 / 200.0;
};

inline double kl_weight(std::uint64_t step, const AnnealSchedule& s) {
  const double x = s.steepness * (static_cast<double>(step) - s.midpoint_step);
  return s.target_weight * ad::detail::sigmoid(x);
}

struct TrainConfig {
  LossWeights weights;
  double anneal_midpoint = 2000.0;
  double anneal_steepness = 1.0 / 200.0;
  AdamConfig adam;
  double clip_norm = 5.0;
  std::size_t batch_size = 32;
  double gru_dropout = 0.1;
  double word_dropout = 0.5;
  std::uint64_t seed = 1;
  std::size_t checkpoint_every = 500;

  AnnealSchedule kl_sem_schedule() const {
    return {weights.kl_sem, anneal_midpoint, anneal_steepness};
  }
  AnnealSchedule kl_syn_schedule() const {
    return {weights.kl_syn, anneal_midpoint, anneal_steepness};
  }
};

struct StepReport {
  std::uint64_t step = 0;
  model::LossValues terms{};
  model::KlMultipliers kl{};
  double total = 0.0;
  double adv_bow_nll = 0.0;
  double adv_syntax_nll = 0.0;
  double rec_sem_nll = 0.0;
  double rec_syn_nll = 0.0;

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["event"] = "train_step";
    j["step"] = step;
    j["nll"] = terms.nll;
    j["kl_sem"] = terms.kl_sem;
    j["kl_syn"] = terms.kl_syn;
    j["mul_sem"] = terms.mul_sem;
    j["mul_syn"] = terms.mul_syn;
    j["adv_sem"] = terms.adv_sem;
    j["adv_syn"] = terms.adv_syn;
    j["rec_sem"] = terms.rec_sem;
    j["rec_syn"] = terms.rec_syn;
    j["kl_weight_sem"] = kl.sem;
    j["kl_weight_syn"] = kl.syn;
    j["total"] = total;
    j["adversary_bow_nll"] = adv_bow_nll;
    j["adversary_syntax_nll"] = adv_syntax_nll;
    j["decoding_adversary_sem_nll"] = rec_sem_nll;
    j["decoding_adversary_syn_nll"] = rec_syn_nll;
    return j;
  }
};

struct TrainState {
  std::uint64_t step = 0;
  std::uint64_t epoch = 0;
  Rng dropout_rng;
  Rng gru_dropout_rng;
  Rng sampling_rng;
  Rng shuffle_rng;
  OptimizerState main_optimizer;
  OptimizerState adversary_optimizer;
  double best_validation_elbo = std::numeric_limits<double>::infinity();
  std::vector<std::size_t> order;
  std::size_t cursor = 0;

  static TrainState seeded(std::uint64_t seed, const AdamConfig& adam) {
    TrainState s;
    s.dropout_rng = named_stream(seed, "dropout");
    s.gru_dropout_rng = named_stream(seed, "gru_dropout");
    s.sampling_rng = named_stream(seed, "sampling");
    s.shuffle_rng = named_stream(seed, "shuffle");
    s.main_optimizer.config = adam;
    s.adversary_optimizer.config = adam;
    return s;
  }
};

namespace detail {

inline void check_finite(const char* name, double v) {
  if (!std::isfinite(v)) throw NumericError(std::string("non-finite loss term '") + name + "'");
}

}  // namespace detail

/// Phase A: samples z from the current posterior and trains the four
/// adversaries on the detached latents (ADVERSARY optimizer only).
inline void adversary_phase(ModelParams& p, const Batch& batch, const Tensor& eps_sem, const Tensor& eps_syn,
                            TrainState& state, const TrainConfig& cfg, StepReport& report) {
  {
    Tensor z_sem, z_syn;
    {
      ad::Tape tape;
      const model::EncoderOutput enc =
          model::detail::named_term("encoder", [&] { return model::encode(tape, p, batch, false); });
      z_sem = ad::reparameterize(enc.mu_sem, ad::exp(enc.log_sigma_sem), eps_sem).value();
      z_syn = ad::reparameterize(enc.mu_syn, ad::exp(enc.log_sigma_syn), eps_syn).value();
    }
    const auto adv_params = p.group(ParamGroup::kAdversary);
    for (Parameter* q : adv_params) q->zero_grad();
    ad::Tape tape;
    ad::Var zs = tape.constant(z_sem);
    ad::Var zy = tape.constant(z_syn);
    const model::AdversaryLosses adv = model::detail::named_term(
        "adversary", [&] { return model::adversary_losses(tape, p, zs, zy, batch); });
    const model::DecodingAdversaryLosses rec = model::detail::named_term(
        "decoding_adversary", [&] { return model::decoding_adversary_losses(tape, p, zs, zy, batch); });
    ad::Var loss = ad::add(ad::add(adv.bow_nll, adv.syntax_nll), ad::add(rec.sem_nll, rec.syn_nll));
    tape.backward(loss);
    clip_grad_norm(adv_params, cfg.clip_norm);
    adam_step(adv_params, state.adversary_optimizer);
    report.adv_bow_nll = adv.bow_nll.value().item();
    report.adv_syntax_nll = adv.syntax_nll.value().item();
    report.rec_sem_nll = rec.sem_nll.value().item();
    report.rec_syn_nll = rec.syn_nll.value().item();
  }
}

/// Phase B: the VAE forward pass with the same noise draws; steps MAIN on
/// the combined loss with the adversaries frozen.
inline void vae_phase(ModelParams& p, const Batch& batch, const Tensor& eps_sem, const Tensor& eps_syn,
                      TrainState& state, const TrainConfig& cfg, StepReport& report) {
  {
    report.kl = {kl_weight(state.step, cfg.kl_sem_schedule()),
                 kl_weight(state.step, cfg.kl_syn_schedule())};
    const auto main_params = p.group(ParamGroup::kMain);
    for (Parameter* q : main_params) q->zero_grad();
    ad::Tape tape;
    model::ForwardOptions opt;
    opt.word_dropout = cfg.word_dropout;
    opt.word_rng = &state.dropout_rng;
    opt.noise = {&state.gru_dropout_rng, cfg.gru_dropout};
    const model::LossTerms terms = model::vae_forward(tape, p, batch, eps_sem, eps_syn, opt);
    report.terms = model::values_of(terms);
    const auto& v = report.terms;
    detail::check_finite("nll", v.nll);
    detail::check_finite("kl_sem", v.kl_sem);
    detail::check_finite("kl_syn", v.kl_syn);
    detail::check_finite("mul_sem", v.mul_sem);
    detail::check_finite("mul_syn", v.mul_syn);
    detail::check_finite("adv_sem", v.adv_sem);
    detail::check_finite("adv_syn", v.adv_syn);
    detail::check_finite("rec_sem", v.rec_sem);
    detail::check_finite("rec_syn", v.rec_syn);
    ad::Var total = model::total_loss(terms, cfg.weights, report.kl);
    report.total = total.value().item();
    tape.backward(total);
    clip_grad_norm(main_params, cfg.clip_norm);
    adam_step(main_params, state.main_optimizer);
  }
}

/// One optimization step on a batch: Phase A, then Phase B.
inline StepReport train_step(ModelParams& p, Batch batch, TrainState& state, const TrainConfig& cfg) {
  if (batch.empty()) throw InputError("train_step: empty batch");
  const std::size_t B = batch.size();
  const std::size_t Z = p.dims.latent_dim;
  const Tensor eps_sem = standard_normal(B, Z, state.sampling_rng);
  const Tensor eps_syn = standard_normal(B, Z, state.sampling_rng);
  StepReport report;
  adversary_phase(p, batch, eps_sem, eps_syn, state, cfg, report);
  vae_phase(p, batch, eps_sem, eps_syn, state, cfg, report);
  report.step = ++state.step;
  return report;
}

/// Next minibatch in a per-epoch shuffled order; the final batch of an
/// epoch may be short.
inline std::vector<Example> next_batch(const std::vector<Example>& data, TrainState& state,
                                       std::size_t batch_size) {
  if (data.empty()) throw InputError("empty training set");
  if (state.order.size() != data.size() || state.cursor >= state.order.size()) {
    if (state.order.size() == data.size()) ++state.epoch;
    state.order.resize(data.size());
    std::iota(state.order.begin(), state.order.end(), std::size_t{0});
    std::shuffle(state.order.begin(), state.order.end(), state.shuffle_rng);
    state.cursor = 0;
  }
  std::vector<Example> batch;
  const std::size_t end = std::min(state.order.size(), state.cursor + std::max<std::size_t>(1, batch_size));
  for (std::size_t i = state.cursor; i < end; ++i) batch.push_back(data[state.order[i]]);
  state.cursor = end;
  return batch;
}

/// Validation negated ELBO per sentence: NLL decoded from the posterior
/// means plus both closed-form KL terms at their full target weights.
inline double validation_elbo(ModelParams& p, const std::vector<Example>& valid,
                              const LossWeights& w, std::size_t batch_size = 64) {
  if (valid.empty()) throw InputError("empty validation set");
  double total = 0.0;
  for (std::size_t start = 0; start < valid.size(); start += batch_size) {
    const std::size_t end = std::min(valid.size(), start + batch_size);
    const Batch batch(valid.data() + start, end - start);
    ad::Tape tape;
    const model::EncoderOutput enc = model::encode(tape, p, batch, false);
    const double n = static_cast<double>(batch.size());
    const double nll =
        model::reconstruction_nll(tape, p, enc.mu_sem, enc.mu_syn, batch, 0.0, nullptr, false)
            .value()
            .item() * n;
    const double kl_sem = ad::kl_standard_gaussian(enc.mu_sem, ad::exp(enc.log_sigma_sem)).value().item();
    const double kl_syn = ad::kl_standard_gaussian(enc.mu_syn, ad::exp(enc.log_sigma_syn)).value().item();
    total += nll + w.kl_sem * kl_sem + w.kl_syn * kl_syn;
  }
  return total / static_cast<double>(valid.size());
}

// ---------------------------------------------------------------------------
// Checkpoints

inline constexpr int kCheckpointFormatVersion = 1;

struct CheckpointManifest {
  int format_version = kCheckpointFormatVersion;
  ModelDims dims;
  std::string vocab_hash;
  std::string syntax_vocab_hash;
  LossWeights weights;
  std::uint64_t step = 0;
  std::optional<double> validation_elbo;
};

struct LoadedCheckpoint {
  ModelParams params;
  CheckpointManifest manifest;
  Vocabulary vocab;
  SyntaxVocabulary syntax_vocab;
};

namespace detail {

inline nlohmann::ordered_json weights_json(const LossWeights& w) {
  nlohmann::ordered_json j;
  j["kl_sem"] = w.kl_sem;
  j["kl_syn"] = w.kl_syn;
  j["mul_sem"] = w.mul_sem;
  j["mul_syn"] = w.mul_syn;
  j["adv_sem"] = w.adv_sem;
  j["adv_syn"] = w.adv_syn;
  j["rec_sem"] = w.rec_sem;
  j["rec_syn"] = w.rec_syn;
  return j;
}

inline LossWeights weights_from_json(const nlohmann::json& j) {
  LossWeights w;
  w.kl_sem = j.at("kl_sem").get<double>();
  w.kl_syn = j.at("kl_syn").get<double>();
  w.mul_sem = j.at("mul_sem").get<double>();
  w.mul_syn = j.at("mul_syn").get<double>();
  w.adv_sem = j.at("adv_sem").get<double>();
  w.adv_syn = j.at("adv_syn").get<double>();
  w.rec_sem = j.at("rec_sem").get<double>();
  w.rec_syn = j.at("rec_syn").get<double>();
  return w;
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open " + path.string());
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

inline void write_file(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

/// Little-endian IEEE-754 binary32, row-major.
inline std::string encode_f32(const Tensor& t) {
  std::string out(t.size() * 4, '\0');
  for (std::size_t i = 0; i < t.size(); ++i) {
    const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(t[i]));
    for (int b = 0; b < 4; ++b) out[i * 4 + b] = static_cast<char>((bits >> (8 * b)) & 0xffu);
  }
  return out;
}

inline Tensor decode_f32(const std::string& bytes, std::size_t rows, std::size_t cols) {
  Tensor t(rows, cols);
  for (std::size_t i = 0; i < t.size(); ++i) {
    std::uint32_t bits = 0;
    for (int b = 0; b < 4; ++b) {
      bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[i * 4 + b])) << (8 * b);
    }
    t[i] = static_cast<double>(std::bit_cast<float>(bits));
  }
  return t;
}

}  // namespace detail

/// Writes manifest.json, vocab.txt, syntax_vocab.txt and one .bin per
/// parameter into `dir`. Parameters are stored as 32-bit floats.
inline void save_checkpoint(const std::filesystem::path& dir, const ModelParams& p,
                            const Vocabulary& vocab, const SyntaxVocabulary& syntax_vocab,
                            const LossWeights& weights, std::uint64_t step,
                            std::optional<double> validation_elbo = std::nullopt) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create checkpoint directory " + dir.string() + ": " + ec.message());
  nlohmann::ordered_json m;
  m["format_version"] = kCheckpointFormatVersion;
  m["dims"] = {{"vocab_size", p.dims.vocab_size},
               {"syntax_vocab_size", p.dims.syntax_vocab_size},
               {"embedding_dim", p.dims.embedding_dim},
               {"hidden_dim", p.dims.hidden_dim},
               {"latent_dim", p.dims.latent_dim}};
  m["vocab_hash"] = vocab.hash();
  m["syntax_vocab_hash"] = syntax_vocab.hash();
  m["loss_weights"] = detail::weights_json(weights);
  m["step"] = step;
  if (validation_elbo) m["validation_elbo"] = *validation_elbo;
  nlohmann::ordered_json params = nlohmann::ordered_json::array();
  p.for_each([&](const Parameter& q) {
    const std::string file = q.name + ".bin";
    params.push_back({{"name", q.name},
                      {"group", group_name(q.group)},
                      {"shape", {q.value.rows(), q.value.cols()}},
                      {"file", file}});
    detail::write_file(dir / file, detail::encode_f32(q.value));
  });
  m["parameters"] = params;
  detail::write_file(dir / "vocab.txt", vocab.serialize());
  detail::write_file(dir / "syntax_vocab.txt", syntax_vocab.serialize());
  detail::write_file(dir / "manifest.json", m.dump(2) + "\n");
}

/// Loads a checkpoint directory. When `active_vocab_hash` is given it must
/// match the manifest; the stored vocabulary files are always verified.
inline LoadedCheckpoint load_checkpoint(const std::filesystem::path& dir,
                                        std::optional<std::string> active_vocab_hash = std::nullopt) {
  nlohmann::json m;
  try {
    m = nlohmann::json::parse(detail::read_file(dir / "manifest.json"));
  } catch (const nlohmann::json::exception& e) {
    throw CorruptionError("unreadable manifest in " + dir.string() + ": " + e.what());
  }
  LoadedCheckpoint out;
  try {
    out.manifest.format_version = m.at("format_version").get<int>();
    if (out.manifest.format_version != kCheckpointFormatVersion) {
      throw IncompatibleError("unsupported checkpoint format version " +
                              std::to_string(out.manifest.format_version));
    }
    const auto& d = m.at("dims");
    out.manifest.dims.vocab_size = d.at("vocab_size").get<std::size_t>();
    out.manifest.dims.syntax_vocab_size = d.at("syntax_vocab_size").get<std::size_t>();
    out.manifest.dims.embedding_dim = d.at("embedding_dim").get<std::size_t>();
    out.manifest.dims.hidden_dim = d.at("hidden_dim").get<std::size_t>();
    out.manifest.dims.latent_dim = d.at("latent_dim").get<std::size_t>();
    out.manifest.vocab_hash = m.at("vocab_hash").get<std::string>();
    out.manifest.syntax_vocab_hash = m.at("syntax_vocab_hash").get<std::string>();
    out.manifest.weights = detail::weights_from_json(m.at("loss_weights"));
    out.manifest.step = m.at("step").get<std::uint64_t>();
    if (m.contains("validation_elbo")) out.manifest.validation_elbo = m["validation_elbo"].get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw CorruptionError("malformed manifest in " + dir.string() + ": " + e.what());
  }

  out.vocab = Vocabulary::deserialize(detail::read_file(dir / "vocab.txt"));
  out.syntax_vocab = SyntaxVocabulary::deserialize(detail::read_file(dir / "syntax_vocab.txt"));
  if (out.vocab.hash() != out.manifest.vocab_hash) {
    throw IncompatibleError("vocabulary hash mismatch: manifest " + out.manifest.vocab_hash +
                            ", vocab.txt " + out.vocab.hash());
  }
  if (active_vocab_hash && *active_vocab_hash != out.manifest.vocab_hash) {
    throw IncompatibleError("vocabulary hash mismatch: checkpoint " + out.manifest.vocab_hash +
                            ", active " + *active_vocab_hash);
  }
  if (out.syntax_vocab.hash() != out.manifest.syntax_vocab_hash) {
    throw IncompatibleError("syntax vocabulary hash mismatch: manifest " +
                            out.manifest.syntax_vocab_hash + ", syntax_vocab.txt " +
                            out.syntax_vocab.hash());
  }

  out.params = ModelParams(out.manifest.dims);
  const auto& entries = m.at("parameters");
  std::size_t index = 0;
  out.params.for_each([&](Parameter& q) {
    if (index >= entries.size()) throw CorruptionError("manifest lists too few parameters");
    const auto& e = entries[index++];
    const std::string name = e.at("name").get<std::string>();
    if (name != q.name) throw CorruptionError("parameter order mismatch at '" + name + "'");
    const auto rows = e.at("shape").at(0).get<std::size_t>();
    const auto cols = e.at("shape").at(1).get<std::size_t>();
    if (rows != q.value.rows() || cols != q.value.cols()) {
      throw CorruptionError("parameter '" + name + "' has shape inconsistent with dims");
    }
    const std::string bytes = detail::read_file(dir / e.at("file").get<std::string>());
    if (bytes.size() != rows * cols * 4) {
      throw CorruptionError("parameter blob '" + name + "' has " + std::to_string(bytes.size()) +
                            " bytes, expected " + std::to_string(rows * cols * 4));
    }
    q.value = detail::decode_f32(bytes, rows, cols);
    q.zero_grad();
  });
  if (index != entries.size()) throw CorruptionError("manifest lists unknown parameters");
  return out;
}

/// Scores the validation set and saves a checkpoint iff the negated ELBO
/// strictly improves. I/O failures are reported, not thrown, so training
/// can continue.
struct CheckpointOutcome {
  double validation_elbo = 0.0;
  bool saved = false;
  std::optional<std::string> io_error;
};

inline CheckpointOutcome validate_and_checkpoint(TrainState& state, ModelParams& p,
                                                 const std::vector<Example>& valid,
                                                 const std::filesystem::path& out_dir,
                                                 const Vocabulary& vocab,
                                                 const SyntaxVocabulary& syntax_vocab,
                                                 const LossWeights& weights) {
  CheckpointOutcome out;
  out.validation_elbo = validation_elbo(p, valid, weights);
  if (!(out.validation_elbo < state.best_validation_elbo)) return out;
  try {
    save_checkpoint(out_dir, p, vocab, syntax_vocab, weights, state.step, out.validation_elbo);
    state.best_validation_elbo = out.validation_elbo;
    out.saved = true;
  } catch (const IoError& e) {
    out.io_error = e.what();
  }
  return out;
}

}  // namespace dssvae
