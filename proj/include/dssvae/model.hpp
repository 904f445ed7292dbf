// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dssvae/autodiff.hpp"
#include "dssvae/nn.hpp"
#include "dssvae/rng.hpp"
#include "dssvae/text.hpp"
#include "dssvae/tree.hpp"

namespace dssvae {

struct ModelDims {
  std::size_t vocab_size = 0;
  std::size_t syntax_vocab_size = 0;
  std::size_t embedding_dim = 300;
  std::size_t hidden_dim = 200;
  std::size_t latent_dim = 100;

  void validate() const {
    if (vocab_size <= static_cast<std::size_t>(Vocabulary::kReserved)) {
      throw ConfigError("vocab_size must exceed the reserved block");
    }
    if (syntax_vocab_size < 5) throw ConfigError("syntax_vocab_size must be at least 5");
    if (embedding_dim == 0 || hidden_dim == 0 || latent_dim == 0) {
      throw ConfigError("model dimensions must be positive");
    }
    if (hidden_dim % 2 != 0) {
      throw ConfigError("hidden_dim must be even to split the sentence representation");
    }
  }

  friend bool operator==(const ModelDims&, const ModelDims&) = default;
};

/// The eight weights of the combined objective.
struct LossWeights {
  double kl_sem = 1.0;
  double kl_syn = 1.0;
  double mul_sem = 0.5;
  double mul_syn = 0.5;
  double adv_sem = 0.5;
  double adv_syn = 0.5;
  double rec_sem = 0.5;
  double rec_syn = 0.5;

  static LossWeights ptb() { return {}; }

  static LossWeights quora() {
    return {1.0 / 3.0, 2.0 / 3.0, 5.0, 1.0, 0.5, 0.5, 1.0, 0.05};
  }

  /// Plain two-space VAE: every auxiliary weight zero.
  static LossWeights vae(double kl_sem = 1.0, double kl_syn = 1.0) {
    return {kl_sem, kl_syn, 0, 0, 0, 0, 0, 0};
  }

  void validate() const {
    const double all[] = {kl_sem, kl_syn, mul_sem, mul_syn, adv_sem, adv_syn, rec_sem, rec_syn};
    const char* names[] = {"kl_sem", "kl_syn", "mul_sem", "mul_syn",
                           "adv_sem", "adv_syn", "rec_sem", "rec_syn"};
    for (std::size_t i = 0; i < 8; ++i) {
      if (!(all[i] >= 0.0) || !std::isfinite(all[i])) {
        throw ConfigError(std::string("loss weight ") + names[i] + " must be a nonnegative number");
      }
    }
  }

  friend bool operator==(const LossWeights&, const LossWeights&) = default;
};

struct GaussianPosterior {
  Tensor mu;
  Tensor log_sigma;

  Tensor sigma() const {
    Tensor s = log_sigma;
    for (double& v : s.data()) v = std::exp(v);
    return s;
  }
};

struct LatentPair {
  Tensor z_sem;
  Tensor z_syn;
};

/// ReLU hidden layer followed by separate mean and log-sigma projections.
struct GaussianHeadParams {
  LinearParams hidden;
  Parameter mu;
  Parameter log_sigma;

  GaussianHeadParams() = default;
  GaussianHeadParams(const std::string& prefix, std::size_t in, std::size_t latent)
      : hidden(prefix + ".hidden", ParamGroup::kMain, in, latent),
        mu(prefix + ".mu", ParamGroup::kMain, Tensor(latent, latent)),
        log_sigma(prefix + ".log_sigma", ParamGroup::kMain, Tensor(latent, latent)) {}

  template <class F>
  void for_each(F&& f) {
    hidden.for_each(f);
    f(mu);
    f(log_sigma);
  }
};

/// Auxiliary autoregressive predictor: its own embedding table, a
/// latent-to-hidden projection for the initial state, a GRU and a softmax
/// output layer.
struct SequencePredictorParams {
  Parameter embedding;
  LinearParams init;
  GruParams gru;
  LinearParams out;

  SequencePredictorParams() = default;
  SequencePredictorParams(const std::string& prefix, ParamGroup group, std::size_t symbols,
                          std::size_t embed, std::size_t latent, std::size_t hidden)
      : embedding(prefix + ".embedding", group, Tensor(symbols, embed)),
        init(prefix + ".init", group, latent, hidden),
        gru(prefix + ".gru", group, embed, hidden),
        out(prefix + ".out", group, hidden, symbols) {}

  template <class F>
  void for_each(F&& f) {
    f(embedding);
    init.for_each(f);
    gru.for_each(f);
    out.for_each(f);
  }
};

/// Every trainable tensor of the network. MAIN holds the VAE and its
/// multi-task heads; ADVERSARY holds the BoW adversary, the syntax
/// adversary and the two decoding adversaries.
struct ModelParams {
  ModelDims dims;

  Parameter word_embedding;
  GruParams encoder;
  GaussianHeadParams sem_head;
  GaussianHeadParams syn_head;
  std::optional<LinearParams> decoder_init;
  GruParams decoder;
  LinearParams decoder_out;
  LinearParams bow_head;
  SequencePredictorParams syntax_head;

  LinearParams adv_bow;
  SequencePredictorParams adv_syntax;
  SequencePredictorParams rec_sem;
  SequencePredictorParams rec_syn;

  ModelParams() = default;

  /// All-zero parameters of the requested shapes.
  explicit ModelParams(const ModelDims& d) : dims(d) {
    d.validate();
    const std::size_t V = d.vocab_size, S = d.syntax_vocab_size, E = d.embedding_dim,
                      H = d.hidden_dim, Z = d.latent_dim;
    constexpr auto kMain = ParamGroup::kMain;
    constexpr auto kAdv = ParamGroup::kAdversary;
    word_embedding = Parameter("word_embedding", kMain, Tensor(V, E));
    encoder = GruParams("encoder", kMain, E, H);
    sem_head = GaussianHeadParams("sem_head", H / 2, Z);
    syn_head = GaussianHeadParams("syn_head", H / 2, Z);
    if (2 * Z != H) decoder_init = LinearParams("decoder_init", kMain, 2 * Z, H);
    decoder = GruParams("decoder", kMain, E, H);
    decoder_out = LinearParams("decoder_out", kMain, H, V);
    bow_head = LinearParams("bow_head", kMain, Z, V);
    syntax_head = SequencePredictorParams("syntax_head", kMain, S, E, Z, H);
    adv_bow = LinearParams("adv_bow", kAdv, Z, V);
    adv_syntax = SequencePredictorParams("adv_syntax", kAdv, S, E, Z, H);
    rec_sem = SequencePredictorParams("rec_sem", kAdv, V, E, Z, H);
    rec_syn = SequencePredictorParams("rec_syn", kAdv, V, E, Z, H);
  }

  /// Weights uniform in [-scale, scale], biases zero.
  static ModelParams random(const ModelDims& d, Rng& rng, double scale = 0.08) {
    ModelParams p(d);
    p.for_each([&](Parameter& param) {
      const bool bias = param.name.size() >= 2 && param.name.ends_with(".b");
      if (!bias) param.value = uniform(param.value.rows(), param.value.cols(), -scale, scale, rng);
    });
    return p;
  }

  /// Visits every parameter in a fixed order (the checkpoint order).
  template <class F>
  void for_each(F&& f) {
    f(word_embedding);
    encoder.for_each(f);
    sem_head.for_each(f);
    syn_head.for_each(f);
    if (decoder_init) decoder_init->for_each(f);
    decoder.for_each(f);
    decoder_out.for_each(f);
    bow_head.for_each(f);
    syntax_head.for_each(f);
    adv_bow.for_each(f);
    adv_syntax.for_each(f);
    rec_sem.for_each(f);
    rec_syn.for_each(f);
  }

  template <class F>
  void for_each(F&& f) const {
    const_cast<ModelParams*>(this)->for_each([&](Parameter& p) { f(static_cast<const Parameter&>(p)); });
  }

  std::vector<Parameter*> group(ParamGroup g) {
    std::vector<Parameter*> out;
    for_each([&](Parameter& p) {
      if (p.group == g) out.push_back(&p);
    });
    return out;
  }

  std::vector<Parameter*> all() {
    std::vector<Parameter*> out;
    for_each([&](Parameter& p) { out.push_back(&p); });
    return out;
  }

  void zero_grad() {
    for_each([](Parameter& p) { p.zero_grad(); });
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for_each([&](const Parameter& p) { n += p.value.size(); });
    return n;
  }
};

/// One training example: word ids, linearized-tree symbol ids and the
/// bag-of-words target row.
struct Example {
  Sentence sentence;
  std::vector<int> syntax;
  Tensor bow;
};

inline Example make_example(const Sentence& sentence, const ParseTree& tree, const Vocabulary& vocab,
                            const SyntaxVocabulary& syntax_vocab) {
  if (sentence.empty()) throw InputError("empty sentence");
  return Example{sentence, syntax_vocab.encode(linearize(tree)), bow_target(sentence, vocab)};
}

using Batch = std::span<const Example>;

namespace model {

struct EncoderOutput {
  ad::Var mu_sem;
  ad::Var log_sigma_sem;
  ad::Var mu_syn;
  ad::Var log_sigma_syn;
};

struct TrainingNoise {
  Rng* gru_dropout_rng = nullptr;
  double gru_dropout = 0.0;
};

namespace detail {

/// Runs `f`, renaming any NumericError after the loss term being built.
template <class F>
auto named_term(const char* name, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const NumericError& e) {
    throw NumericError(std::string("non-finite loss term '") + name + "': " + e.what());
  }
}

inline ad::Var maybe_dropout(const ad::Var& x, const TrainingNoise& noise) {
  if (noise.gru_dropout_rng == nullptr || noise.gru_dropout <= 0.0) return x;
  return ad::dropout(x, noise.gru_dropout, *noise.gru_dropout_rng);
}

inline ad::Var gaussian_mu(ad::Tape& tape, GaussianHeadParams& head, const ad::Var& r, bool trainable,
                           ad::Var* log_sigma) {
  ad::Var h = ad::relu(ad::linear(r, tape.param(head.hidden.w, trainable),
                                  tape.param(head.hidden.b, trainable)));
  *log_sigma = ad::matmul(h, tape.param(head.log_sigma, trainable));
  return ad::matmul(h, tape.param(head.mu, trainable));
}

}  // namespace detail

/// GRU encoder over a padded batch. The final hidden state r is split
/// evenly into [r_sem; r_syn]; each half feeds a Gaussian head.
inline EncoderOutput encode(ad::Tape& tape, ModelParams& p, Batch batch, bool trainable,
                            const TrainingNoise& noise = {}) {
  if (batch.empty()) throw InputError("encode: empty batch");
  std::size_t steps = 0;
  for (const auto& ex : batch) {
    if (ex.sentence.empty()) throw InputError("encode: empty sentence");
    steps = std::max(steps, ex.sentence.length());
  }
  const std::size_t B = batch.size();
  const std::size_t H = p.dims.hidden_dim;
  if (H % 2 != 0) throw ConfigError("encode: hidden size must be even");
  ad::Var emb = tape.param(p.word_embedding, trainable);
  ad::Var w = tape.param(p.encoder.w, trainable);
  ad::Var u = tape.param(p.encoder.u, trainable);
  ad::Var b = tape.param(p.encoder.b, trainable);
  ad::Var h = tape.constant(Tensor(B, H));
  std::vector<int> ids(B);
  std::vector<double> mask(B);
  for (std::size_t t = 0; t < steps; ++t) {
    for (std::size_t i = 0; i < B; ++i) {
      const auto& s = batch[i].sentence.ids;
      ids[i] = t < s.size() ? s[t] : Vocabulary::kPad;
      mask[i] = t < s.size() ? 1.0 : 0.0;
    }
    ad::Var x = detail::maybe_dropout(ad::gather_rows(emb, ids), noise);
    h = ad::masked_blend(ad::gru_cell(x, h, w, u, b), h, mask);
  }
  EncoderOutput out;
  out.mu_sem = detail::gaussian_mu(tape, p.sem_head, ad::slice_cols(h, 0, H / 2), trainable,
                                   &out.log_sigma_sem);
  out.mu_syn = detail::gaussian_mu(tape, p.syn_head, ad::slice_cols(h, H / 2, H / 2), trainable,
                                   &out.log_sigma_syn);
  return out;
}

/// Concatenation order used by every decoding path: [z_sem; z_syn].
inline ad::Var latent_code(const ad::Var& z_sem, const ad::Var& z_syn) {
  return ad::concat_cols(z_sem, z_syn);
}

inline Tensor latent_code(const LatentPair& z) {
  Tensor out(z.z_sem.rows(), z.z_sem.cols() + z.z_syn.cols());
  out.mat().leftCols(z.z_sem.cols()) = z.z_sem.mat();
  out.mat().rightCols(z.z_syn.cols()) = z.z_syn.mat();
  return out;
}

/// Teacher-forced autoregressive NLL summed over the batch. Step t reads
/// inputs[t-1] (<s> at t = 0) and predicts targets[t]; with `append_eos`
/// one extra step predicts </s>.
struct SequenceSpec {
  const std::vector<std::vector<int>>* inputs;
  const std::vector<std::vector<int>>* targets;
  bool append_eos = false;
};

inline ad::Var teacher_forced_nll(ad::Tape& tape, const ad::Var& embedding, const ad::Var& h0,
                                  GruParams& gru, LinearParams& out, bool trainable,
                                  const SequenceSpec& seq, const TrainingNoise& noise = {}) {
  const auto& inputs = *seq.inputs;
  const auto& targets = *seq.targets;
  const std::size_t B = targets.size();
  if (inputs.size() != B || h0.rows() != B) throw ShapeError("teacher_forced_nll: batch mismatch");
  const std::size_t extra = seq.append_eos ? 1 : 0;
  std::size_t steps = 0;
  for (std::size_t i = 0; i < B; ++i) {
    if (inputs[i].size() != targets[i].size()) throw ShapeError("teacher_forced_nll: length mismatch");
    steps = std::max(steps, targets[i].size() + extra);
  }
  ad::Var w = tape.param(gru.w, trainable);
  ad::Var u = tape.param(gru.u, trainable);
  ad::Var b = tape.param(gru.b, trainable);
  ad::Var ow = tape.param(out.w, trainable);
  ad::Var ob = tape.param(out.b, trainable);
  ad::Var h = h0;
  std::optional<ad::Var> total;
  std::vector<int> in_ids(B), tgt_ids(B);
  std::vector<double> mask(B);
  for (std::size_t t = 0; t < steps; ++t) {
    for (std::size_t i = 0; i < B; ++i) {
      const std::size_t len = targets[i].size();
      in_ids[i] = t == 0 ? Vocabulary::kBos : (t - 1 < len ? inputs[i][t - 1] : Vocabulary::kPad);
      if (t < len) {
        tgt_ids[i] = targets[i][t];
        mask[i] = 1.0;
      } else if (t == len && seq.append_eos) {
        tgt_ids[i] = Vocabulary::kEos;
        mask[i] = 1.0;
      } else {
        tgt_ids[i] = Vocabulary::kPad;
        mask[i] = 0.0;
      }
    }
    ad::Var x = detail::maybe_dropout(ad::gather_rows(embedding, in_ids), noise);
    h = ad::gru_cell(x, h, w, u, b);
    ad::Var step_loss = ad::softmax_cross_entropy(ad::linear(h, ow, ob), tgt_ids, mask);
    total = total ? ad::add(*total, step_loss) : step_loss;
  }
  return total ? *total : tape.constant(Tensor::scalar(0.0));
}

inline ad::Var project_latent(ad::Tape& tape, LinearParams& init, const ad::Var& z, bool trainable) {
  return ad::linear(z, tape.param(init.w, trainable), tape.param(init.b, trainable));
}

inline ad::Var decoder_initial_state(ad::Tape& tape, ModelParams& p, const ad::Var& z, bool trainable) {
  if (!p.decoder_init) return z;
  return project_latent(tape, *p.decoder_init, z, trainable);
}

inline std::vector<std::vector<int>> sentence_ids(Batch batch) {
  std::vector<std::vector<int>> out;
  out.reserve(batch.size());
  for (const auto& ex : batch) out.push_back(ex.sentence.ids);
  return out;
}

inline std::vector<std::vector<int>> syntax_ids(Batch batch) {
  std::vector<std::vector<int>> out;
  out.reserve(batch.size());
  for (const auto& ex : batch) {
    if (ex.syntax.empty()) throw ValidityError("empty linearized tree", 1);
    out.push_back(ex.syntax);
  }
  return out;
}

inline Tensor bow_matrix(Batch batch) {
  const std::size_t V = batch.front().bow.cols();
  Tensor t(batch.size(), V);
  for (std::size_t i = 0; i < batch.size(); ++i) {
    require_same_shape(batch[i].bow, batch.front().bow, "bow_matrix");
    t.mat().row(static_cast<Eigen::Index>(i)) = batch[i].bow.mat().row(0);
  }
  return t;
}

inline double batch_scale(Batch batch) { return 1.0 / static_cast<double>(batch.size()); }

/// Reconstruction NLL (batch mean of per-sentence sums, </s> included).
/// Decoder inputs are word-dropped with probability `word_dropout_p`;
/// targets are never dropped.
inline ad::Var reconstruction_nll(ad::Tape& tape, ModelParams& p, const ad::Var& z_sem,
                                  const ad::Var& z_syn, Batch batch, double word_dropout_p,
                                  Rng* word_rng, bool trainable, const TrainingNoise& noise = {}) {
  const auto targets = sentence_ids(batch);
  auto inputs = targets;
  if (word_dropout_p > 0.0) {
    if (word_rng == nullptr) throw ContractError("reconstruction_nll: word dropout needs an rng");
    for (auto& s : inputs) s = word_dropout(std::move(s), word_dropout_p, *word_rng);
  }
  ad::Var h0 = decoder_initial_state(tape, p, latent_code(z_sem, z_syn), trainable);
  ad::Var nll = teacher_forced_nll(tape, tape.param(p.word_embedding, trainable), h0, p.decoder,
                                   p.decoder_out, trainable, {&inputs, &targets, true}, noise);
  return ad::scale(nll, batch_scale(batch));
}

inline ad::Var predictor_nll(ad::Tape& tape, SequencePredictorParams& pred, const ad::Var& z,
                             const std::vector<std::vector<int>>& seqs, bool trainable) {
  ad::Var h0 = project_latent(tape, pred.init, z, trainable);
  return teacher_forced_nll(tape, tape.param(pred.embedding, trainable), h0, pred.gru, pred.out,
                            trainable, {&seqs, &seqs, false});
}

inline ad::Var bow_cross_entropy(ad::Tape& tape, LinearParams& head, const ad::Var& z,
                                 const Tensor& bow, bool trainable) {
  ad::Var logits = ad::linear(z, tape.param(head.w, trainable), tape.param(head.b, trainable));
  return ad::softmax_cross_entropy(logits, bow);
}

struct MultitaskLosses {
  ad::Var mul_sem;
  ad::Var mul_syn;
};

/// BoW prediction from z_sem and linearized-tree prediction from z_syn.
inline MultitaskLosses multitask_losses(ad::Tape& tape, ModelParams& p, const ad::Var& z_sem,
                                        const ad::Var& z_syn, Batch batch, bool trainable = true) {
  const double s = batch_scale(batch);
  const auto trees = syntax_ids(batch);
  return {ad::scale(bow_cross_entropy(tape, p.bow_head, z_sem, bow_matrix(batch), trainable), s),
          ad::scale(predictor_nll(tape, p.syntax_head, z_syn, trees, trainable), s)};
}

struct AdversaryLosses {
  ad::Var bow_nll;      // p_adv(w | z_syn)
  ad::Var syntax_nll;   // p_adv(s_i | s_<i, z_sem)
};

inline void require_detached(const ad::Var& z, const char* op) {
  if (z.requires_grad()) {
    throw ContractError(std::string(op) + ": latent input must be detached from the VAE");
  }
}

/// Training losses of the two disentangling adversaries. The latents must
/// be detached so no gradient reaches MAIN parameters.
inline AdversaryLosses adversary_losses(ad::Tape& tape, ModelParams& p, const ad::Var& z_sem,
                                        const ad::Var& z_syn, Batch batch) {
  require_detached(z_sem, "adversary_losses");
  require_detached(z_syn, "adversary_losses");
  const double s = batch_scale(batch);
  const auto trees = syntax_ids(batch);
  return {ad::scale(bow_cross_entropy(tape, p.adv_bow, z_syn, bow_matrix(batch), true), s),
          ad::scale(predictor_nll(tape, p.adv_syntax, z_sem, trees, true), s)};
}

struct AdversarialTerms {
  ad::Var adv_sem;  // sum_w t_w log p_adv(w | z_syn) <= 0
  ad::Var adv_syn;  // sum_i log p_adv(s_i | s_<i, z_sem) <= 0
};

/// Log-likelihoods of the frozen adversaries. Minimizing them pushes the
/// encoder to hide BoW from z_syn and syntax from z_sem.
inline AdversarialTerms adversarial_terms(ad::Tape& tape, ModelParams& p, const ad::Var& z_sem,
                                          const ad::Var& z_syn, Batch batch) {
  const double s = batch_scale(batch);
  const auto trees = syntax_ids(batch);
  return {ad::scale(bow_cross_entropy(tape, p.adv_bow, z_syn, bow_matrix(batch), false), -s),
          ad::scale(predictor_nll(tape, p.adv_syntax, z_sem, trees, false), -s)};
}

struct DecodingAdversaryLosses {
  ad::Var sem_nll;  // -log p_rec(x | z_sem), trains rec_sem
  ad::Var syn_nll;  // -log p_rec(x | z_syn), trains rec_syn
};

/// Training losses of the decoding adversaries on detached latents.
inline DecodingAdversaryLosses decoding_adversary_losses(ad::Tape& tape, ModelParams& p,
                                                         const ad::Var& z_sem, const ad::Var& z_syn,
                                                         Batch batch) {
  require_detached(z_sem, "decoding_adversary_losses");
  require_detached(z_syn, "decoding_adversary_losses");
  const double s = batch_scale(batch);
  const auto words = sentence_ids(batch);
  return {ad::scale(predictor_nll(tape, p.rec_sem, z_sem, words, true), s),
          ad::scale(predictor_nll(tape, p.rec_syn, z_syn, words, true), s)};
}

struct AdvReconstructionTerms {
  ad::Var rec_sem;  // sum_i log p_rec(x_i | x_<i, z_sem) <= 0
  ad::Var rec_syn;  // sum_i log p_rec(x_i | x_<i, z_syn) <= 0
};

/// Adversarial reconstruction terms with the decoding adversaries frozen.
inline AdvReconstructionTerms adv_reconstruction_terms(ad::Tape& tape, ModelParams& p,
                                                       const ad::Var& z_sem, const ad::Var& z_syn,
                                                       Batch batch) {
  const double s = batch_scale(batch);
  const auto words = sentence_ids(batch);
  return {ad::scale(predictor_nll(tape, p.rec_sem, z_sem, words, false), -s),
          ad::scale(predictor_nll(tape, p.rec_syn, z_syn, words, false), -s)};
}

struct AdvReconstructionLosses {
  AdvReconstructionTerms terms;
  DecodingAdversaryLosses adversary_training;
};

/// Both halves of the adversarial reconstruction objective on one tape: the
/// VAE-facing terms (frozen decoders, live latents) and the decoding
/// adversaries' own losses (trainable decoders, detached latents).
inline AdvReconstructionLosses adv_reconstruction_losses(ad::Tape& tape, ModelParams& p,
                                                         const ad::Var& z_sem,
                                                         const ad::Var& z_syn, Batch batch) {
  AdvReconstructionLosses out;
  out.terms = adv_reconstruction_terms(tape, p, z_sem, z_syn, batch);
  out.adversary_training =
      decoding_adversary_losses(tape, p, ad::detach(z_sem), ad::detach(z_syn), batch);
  return out;
}

template <class T>
struct Terms {
  T nll;
  T kl_sem;
  T kl_syn;
  T mul_sem;
  T mul_syn;
  T adv_sem;
  T adv_syn;
  T rec_sem;
  T rec_syn;
};

using LossTerms = Terms<ad::Var>;
using LossValues = Terms<double>;

inline LossValues values_of(const LossTerms& t) {
  return {t.nll.value().item(),     t.kl_sem.value().item(),  t.kl_syn.value().item(),
          t.mul_sem.value().item(), t.mul_syn.value().item(), t.adv_sem.value().item(),
          t.adv_syn.value().item(), t.rec_sem.value().item(), t.rec_syn.value().item()};
}

/// Annealed KL multipliers that replace the KL weights at this step.
struct KlMultipliers {
  double sem = 1.0;
  double syn = 1.0;
};

/// NLL + kl_sem*KL_sem + kl_syn*KL_syn + the six weighted auxiliary terms.
/// The KL weights used are `kl` (the annealed values); the weights'
/// own kl_* fields are their targets.
inline double total_loss(const LossValues& t, const LossWeights& w, const KlMultipliers& kl) {
  w.validate();
  if (!(kl.sem >= 0.0) || !(kl.syn >= 0.0)) throw ConfigError("KL multipliers must be nonnegative");
  return t.nll + kl.sem * t.kl_sem + kl.syn * t.kl_syn + w.mul_sem * t.mul_sem +
         w.adv_sem * t.adv_sem + w.rec_sem * t.rec_sem + w.mul_syn * t.mul_syn +
         w.adv_syn * t.adv_syn + w.rec_syn * t.rec_syn;
}

inline ad::Var total_loss(const LossTerms& t, const LossWeights& w, const KlMultipliers& kl) {
  w.validate();
  if (!(kl.sem >= 0.0) || !(kl.syn >= 0.0)) throw ConfigError("KL multipliers must be nonnegative");
  ad::Var total = t.nll;
  const auto add_weighted = [&](const ad::Var& term, double weight) {
    if (weight != 0.0) total = ad::add(total, ad::scale(term, weight));
  };
  add_weighted(t.kl_sem, kl.sem);
  add_weighted(t.kl_syn, kl.syn);
  add_weighted(t.mul_sem, w.mul_sem);
  add_weighted(t.adv_sem, w.adv_sem);
  add_weighted(t.rec_sem, w.rec_sem);
  add_weighted(t.mul_syn, w.mul_syn);
  add_weighted(t.adv_syn, w.adv_syn);
  add_weighted(t.rec_syn, w.rec_syn);
  return total;
}

struct ForwardOptions {
  double word_dropout = 0.0;
  Rng* word_rng = nullptr;
  TrainingNoise noise;
};

/// Full VAE-side forward pass for one batch: encode, reparameterize with
/// the given standard-normal draws, and every loss term with adversaries
/// frozen. Only MAIN parameters receive gradients.
inline LossTerms vae_forward(ad::Tape& tape, ModelParams& p, Batch batch, const Tensor& eps_sem,
                             const Tensor& eps_syn, const ForwardOptions& opt = {}) {
  using detail::named_term;
  const EncoderOutput enc = named_term("encoder", [&] { return encode(tape, p, batch, true, opt.noise); });
  ad::Var sigma_sem = ad::exp(enc.log_sigma_sem);
  ad::Var sigma_syn = ad::exp(enc.log_sigma_syn);
  ad::Var z_sem = ad::reparameterize(enc.mu_sem, sigma_sem, eps_sem);
  ad::Var z_syn = ad::reparameterize(enc.mu_syn, sigma_syn, eps_syn);
  const double s = batch_scale(batch);
  LossTerms t;
  t.nll = named_term("nll", [&] {
    return reconstruction_nll(tape, p, z_sem, z_syn, batch, opt.word_dropout, opt.word_rng, true,
                              opt.noise);
  });
  t.kl_sem = named_term("kl_sem", [&] { return ad::scale(ad::kl_standard_gaussian(enc.mu_sem, sigma_sem), s); });
  t.kl_syn = named_term("kl_syn", [&] { return ad::scale(ad::kl_standard_gaussian(enc.mu_syn, sigma_syn), s); });
  const MultitaskLosses mt = named_term("mul", [&] { return multitask_losses(tape, p, z_sem, z_syn, batch); });
  t.mul_sem = mt.mul_sem;
  t.mul_syn = mt.mul_syn;
  const AdversarialTerms adv = named_term("adv", [&] { return adversarial_terms(tape, p, z_sem, z_syn, batch); });
  t.adv_sem = adv.adv_sem;
  t.adv_syn = adv.adv_syn;
  const AdvReconstructionTerms rec =
      named_term("rec", [&] { return adv_reconstruction_terms(tape, p, z_sem, z_syn, batch); });
  t.rec_sem = rec.rec_sem;
  t.rec_syn = rec.rec_syn;
  return t;
}

/// Posterior parameters for each sentence of a batch, without gradients.
struct Posteriors {
  GaussianPosterior sem;
  GaussianPosterior syn;
};

inline Posteriors posterior(ModelParams& p, Batch batch) {
  ad::Tape tape;
  const EncoderOutput enc = encode(tape, p, batch, false);
  return {{enc.mu_sem.value(), enc.log_sigma_sem.value()},
          {enc.mu_syn.value(), enc.log_sigma_syn.value()}};
}

inline Posteriors posterior(ModelParams& p, const Sentence& s) {
  if (s.empty()) throw InputError("encode: empty sentence");
  Example ex{s, {}, Tensor(1, 1)};
  return posterior(p, Batch(&ex, 1));
}

/// Greedy decoding from one latent pair. The argmax skips <pad>, <s> and
/// <unk>; ties go to the lowest id. Stops at </s> or after max_len tokens.
inline Sentence decode_greedy(ModelParams& p, const LatentPair& z, std::size_t max_len) {
  if (max_len == 0) throw InputError("decode_greedy: max_len must be at least 1");
  if (z.z_sem.rows() != 1 || z.z_syn.rows() != 1 || z.z_sem.cols() != p.dims.latent_dim ||
      z.z_syn.cols() != p.dims.latent_dim) {
    throw ShapeError("decode_greedy: latent pair must be two 1 x latent_dim rows");
  }
  ad::Tape tape;
  ad::Var h = decoder_initial_state(tape, p, tape.constant(latent_code(z)), false);
  ad::Var emb = tape.frozen(p.word_embedding);
  ad::Var w = tape.frozen(p.decoder.w), u = tape.frozen(p.decoder.u), b = tape.frozen(p.decoder.b);
  ad::Var ow = tape.frozen(p.decoder_out.w), ob = tape.frozen(p.decoder_out.b);
  Sentence out;
  int prev = Vocabulary::kBos;
  for (std::size_t t = 0; t < max_len; ++t) {
    const int in[1] = {prev};
    h = ad::gru_cell(ad::gather_rows(emb, in), h, w, u, b);
    const Tensor& logits = ad::linear(h, ow, ob).value();
    int best = -1;
    for (std::size_t c = 0; c < logits.cols(); ++c) {
      const int id = static_cast<int>(c);
      if (id == Vocabulary::kPad || id == Vocabulary::kBos || id == Vocabulary::kUnk) continue;
      if (best < 0 || logits[c] > logits[static_cast<std::size_t>(best)]) best = id;
    }
    if (best == Vocabulary::kEos) break;
    out.ids.push_back(best);
    prev = best;
  }
  return out;
}

}  // namespace model
}  // namespace dssvae
