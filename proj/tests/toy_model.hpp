// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>

#include "dssvae/corpus.hpp"
#include "dssvae/pipeline.hpp"

namespace dssvae::testing_support {

struct ToyModel {
  SyntheticCorpus corpus;
  TrainingData data;
  ModelParams params;
};

// Small model fit on 12 synthetic sentences with all auxiliary weights off.
// kl = 0 gives an autoencoder that reconstructs its training set exactly;
// a small kl keeps posterior widths meaningful. Cached per kl value.
inline ToyModel& toy_model(double kl) {
  static std::map<double, ToyModel> cache;
  if (auto it = cache.find(kl); it != cache.end()) return it->second;
  SyntheticCorpusSpec spec;
  spec.n_train = 12;
  spec.n_valid = 4;
  spec.n_test = 4;
  spec.seed = 5;
  ToyModel m{gen_corpus(spec), {}, {}};
  m.data = prepare_data(to_split(m.corpus.train), to_split(m.corpus.valid), 1000);
  RunConfig cfg;
  cfg.dims.embedding_dim = 16;
  cfg.dims.hidden_dim = 32;
  cfg.dims.latent_dim = 8;
  cfg.train.weights = LossWeights::vae(kl, kl);
  cfg.train.anneal_midpoint = 100;
  cfg.train.word_dropout = 0.0;
  cfg.train.gru_dropout = 0.0;
  cfg.train.batch_size = 12;
  cfg.train.adam.learning_rate = 1e-2;
  cfg.steps = 400;
  cfg.log_every = 0;
  m.params = train_model(cfg, m.data, "").params;
  return cache.emplace(kl, std::move(m)).first->second;
}

}  // namespace dssvae::testing_support
