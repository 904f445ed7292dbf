// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "dssvae/model.hpp"
#include "dssvae/rng.hpp"

namespace dssvae {

enum class GenerationMode { kReconstruct, kSample, kParaphrase, kTransfer };

inline std::string_view mode_name(GenerationMode m) {
  switch (m) {
    case GenerationMode::kReconstruct: return "reconstruct";
    case GenerationMode::kSample: return "sample";
    case GenerationMode::kParaphrase: return "paraphrase";
    case GenerationMode::kTransfer: return "transfer";
  }
  return "?";
}

inline std::size_t mode_arity(GenerationMode m) {
  switch (m) {
    case GenerationMode::kSample: return 0;
    case GenerationMode::kTransfer: return 2;
    default: return 1;
  }
}

/// For transfer, inputs are ordered (ref_syn, ref_sem).
struct GenerationRequest {
  GenerationMode mode = GenerationMode::kReconstruct;
  std::vector<Sentence> inputs;
  std::size_t max_len = 30;
  std::uint64_t seed = 1;
  double syn_temperature = 1.0;

  void validate() const {
    if (inputs.size() != mode_arity(mode)) {
      throw InputError(std::string(mode_name(mode)) + " takes " + std::to_string(mode_arity(mode)) +
                       " input sentence(s), got " + std::to_string(inputs.size()));
    }
    if (max_len == 0) throw InputError("max_len must be at least 1");
    if (!(syn_temperature >= 0.0)) throw InputError("syn_temperature must be nonnegative");
    for (const auto& s : inputs) {
      if (s.empty()) throw InputError(std::string(mode_name(mode)) + ": empty input sentence");
    }
  }
};

namespace detail {

inline LatentPair posterior_means(ModelParams& p, const Sentence& x) {
  if (x.empty()) throw InputError("empty input sentence");
  const model::Posteriors post = model::posterior(p, x);
  return {post.sem.mu, post.syn.mu};
}

}  // namespace detail

/// Greedy decoding from both posterior means.
inline Sentence reconstruct(ModelParams& p, const Sentence& x, std::size_t max_len) {
  return model::decode_greedy(p, detail::posterior_means(p, x), max_len);
}

/// n sentences decoded from independent standard-normal latents.
inline std::vector<Sentence> sample_prior(ModelParams& p, std::size_t n, Rng& rng, std::size_t max_len) {
  if (n == 0) throw InputError("sample_prior: n must be at least 1");
  std::vector<Sentence> out;
  out.reserve(n);
  const std::size_t d = p.dims.latent_dim;
  for (std::size_t i = 0; i < n; ++i) {
    LatentPair z{standard_normal(1, d, rng), standard_normal(1, d, rng)};
    out.push_back(model::decode_greedy(p, z, max_len));
  }
  return out;
}

/// Keeps the semantic mean, samples the syntactic code
/// mu_syn + T * sigma_syn * eps. T = 0 is reconstruction.
inline Sentence paraphrase(ModelParams& p, const Sentence& x, Rng& rng, double syn_temperature,
                           std::size_t max_len) {
  if (!(syn_temperature >= 0.0)) throw InputError("syn_temperature must be nonnegative");
  if (x.empty()) throw InputError("empty input sentence");
  const model::Posteriors post = model::posterior(p, x);
  const Tensor eps = standard_normal(1, p.dims.latent_dim, rng);
  Tensor z_syn = post.syn.mu;
  if (syn_temperature > 0.0) {
    const Tensor sigma = post.syn.sigma();
    for (std::size_t i = 0; i < z_syn.size(); ++i) z_syn[i] += syn_temperature * sigma[i] * eps[i];
  }
  return model::decode_greedy(p, {post.sem.mu, z_syn}, max_len);
}

/// Syntax code from ref_syn, semantic code from ref_sem.
inline Sentence syntax_transfer(ModelParams& p, const Sentence& ref_syn, const Sentence& ref_sem,
                                std::size_t max_len) {
  const LatentPair syn = detail::posterior_means(p, ref_syn);
  const LatentPair sem = detail::posterior_means(p, ref_sem);
  return model::decode_greedy(p, {sem.z_sem, syn.z_syn}, max_len);
}

/// Dispatches a validated request. Sampling and paraphrase draw from a
/// stream derived from the request seed.
inline std::vector<Sentence> generate(ModelParams& p, const GenerationRequest& req, std::size_t n = 1) {
  req.validate();
  Rng rng = named_stream(req.seed, "sampling");
  switch (req.mode) {
    case GenerationMode::kReconstruct: return {reconstruct(p, req.inputs[0], req.max_len)};
    case GenerationMode::kSample: return sample_prior(p, n, rng, req.max_len);
    case GenerationMode::kParaphrase:
      return {paraphrase(p, req.inputs[0], rng, req.syn_temperature, req.max_len)};
    case GenerationMode::kTransfer:
      return {syntax_transfer(p, req.inputs[0], req.inputs[1], req.max_len)};
  }
  return {};
}

}  // namespace dssvae
