// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"

#include "dssvae/gradcheck.hpp"
#include "dssvae/model.hpp"
#include "dssvae/rng.hpp"

namespace dssvae {

struct RegisteredOp {
  std::string name;
  std::vector<std::array<std::size_t, 2>> shapes;
  TapeOp op;
};

namespace detail {

// Weighted sum so every output entry receives a distinct upstream gradient.
inline ad::Var probe(const ad::Var& v) {
  Tensor w(v.rows(), v.cols());
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = 0.3 + 0.1 * static_cast<double>(i % 7);
  return ad::sum(ad::mul(v, v.tape().constant(w)));
}

}  // namespace detail

/// Every differentiable primitive, each reduced to a scalar.
inline std::vector<RegisteredOp> registered_ops() {
  using ad::Tape;
  using ad::Var;
  using detail::probe;
  using Args = std::span<const Var>;
  return {
      {"add", {{3, 4}, {3, 4}}, [](Tape&, Args v) { return probe(ad::add(v[0], v[1])); }},
      {"add_row_broadcast", {{3, 4}, {1, 4}}, [](Tape&, Args v) { return probe(ad::add(v[0], v[1])); }},
      {"sub", {{2, 3}, {2, 3}}, [](Tape&, Args v) { return probe(ad::sub(v[0], v[1])); }},
      {"mul", {{2, 3}, {2, 3}}, [](Tape&, Args v) { return probe(ad::mul(v[0], v[1])); }},
      {"scale", {{2, 3}}, [](Tape&, Args v) { return probe(ad::scale(v[0], -1.7)); }},
      {"matmul", {{2, 3}, {3, 4}}, [](Tape&, Args v) { return probe(ad::matmul(v[0], v[1])); }},
      {"linear", {{3, 2}, {2, 4}, {1, 4}}, [](Tape&, Args v) { return probe(ad::linear(v[0], v[1], v[2])); }},
      {"sigmoid", {{2, 3}}, [](Tape&, Args v) { return probe(ad::sigmoid(v[0])); }},
      {"tanh", {{2, 3}}, [](Tape&, Args v) { return probe(ad::tanh(v[0])); }},
      {"relu", {{2, 3}}, [](Tape&, Args v) { return probe(ad::relu(ad::add(v[0], v[0].tape().constant(Tensor(2, 3, 2.0))))); }},
      {"exp", {{2, 3}}, [](Tape&, Args v) { return probe(ad::exp(v[0])); }},
      {"log", {{2, 3}}, [](Tape&, Args v) { return probe(ad::log(ad::exp(v[0]))); }},
      {"sum", {{2, 3}}, [](Tape&, Args v) { return ad::scale(ad::sum(v[0]), 0.5); }},
      {"concat_cols", {{2, 3}, {2, 2}}, [](Tape&, Args v) { return probe(ad::concat_cols(v[0], v[1])); }},
      {"slice_cols", {{2, 5}}, [](Tape&, Args v) { return probe(ad::slice_cols(v[0], 1, 3)); }},
      {"gather_rows", {{4, 3}}, [](Tape&, Args v) {
         const int ids[] = {2, 0, 2};
         return probe(ad::gather_rows(v[0], ids));
       }},
      {"masked_blend", {{3, 2}, {3, 2}}, [](Tape&, Args v) {
         const double m[] = {1.0, 0.0, 1.0};
         return probe(ad::masked_blend(v[0], v[1], m));
       }},
      {"gru_cell", {{2, 3}, {2, 4}, {3, 12}, {4, 12}, {1, 12}}, [](Tape&, Args v) {
         return probe(ad::gru_cell(v[0], v[1], v[2], v[3], v[4]));
       }},
      {"reparameterize", {{2, 3}, {2, 3}}, [](Tape&, Args v) {
         Tensor eps(2, 3);
         for (std::size_t i = 0; i < eps.size(); ++i) eps[i] = std::sin(static_cast<double>(i) + 1.0);
         return probe(ad::reparameterize(v[0], ad::exp(v[1]), eps));
       }},
      {"kl_standard_gaussian", {{2, 3}, {2, 3}}, [](Tape&, Args v) {
         return ad::kl_standard_gaussian(v[0], ad::exp(v[1]));
       }},
      {"softmax_cross_entropy_index", {{3, 5}}, [](Tape&, Args v) {
         const int ids[] = {4, 0, 1};
         const double w[] = {1.0, 0.5, 0.0};
         return ad::softmax_cross_entropy(v[0], ids, w);
       }},
      {"softmax_cross_entropy_soft", {{2, 3}}, [](Tape&, Args v) {
         return ad::softmax_cross_entropy(v[0], Tensor(2, 3, {0.2, 0.3, 0.5, 1.0, 0.0, 0.0}));
       }},
  };
}

struct GradCheckEntry {
  std::string name;
  double max_relative_error = 0.0;
  bool checkable = true;
  bool pass = false;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  bool pass = true;

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json ops = nlohmann::ordered_json::array();
    for (const auto& e : entries) {
      ops.push_back({{"name", e.name}, {"max_relative_error", e.max_relative_error}, {"pass", e.pass}});
    }
    return {{"event", "gradcheck"}, {"pass", pass}, {"checks", ops}};
  }
};

/// Each registered op over `seeds` random input draws.
inline GradCheckReport run_op_gradchecks(std::size_t seeds = 20, double eps = 1e-5, double tol = 1e-4,
                                         std::uint64_t base_seed = 1) {
  GradCheckReport report;
  for (const auto& op : registered_ops()) {
    GradCheckEntry e{op.name, 0.0, true, true};
    for (std::size_t s = 0; s < seeds; ++s) {
      Rng rng = named_stream(base_seed + s, op.name);
      std::vector<Tensor> inputs;
      for (const auto& shape : op.shapes) inputs.push_back(uniform(shape[0], shape[1], -1.0, 1.0, rng));
      const GradCheckResult r = grad_check(op.op, inputs, eps);
      if (!r.checkable) {
        e.checkable = false;
        break;
      }
      e.max_relative_error = std::max(e.max_relative_error, r.max_relative_error);
    }
    e.pass = e.checkable && e.max_relative_error < tol;
    report.pass = report.pass && e.pass;
    report.entries.push_back(e);
  }
  return report;
}

/// A miniature model (embedding 8, hidden 8, latent 4, vocabulary 20) with
/// a two-sentence batch. Weights are drawn wider than the training init so
/// that encoder gradients stay far above finite-difference roundoff.
struct MiniatureProblem {
  ModelParams params;
  std::vector<Example> batch;
  Tensor eps_sem;
  Tensor eps_syn;
};

inline MiniatureProblem miniature_problem(std::uint64_t seed, double init_scale = 0.8) {
  ModelDims d;
  d.vocab_size = 20;
  d.syntax_vocab_size = 9;
  d.embedding_dim = 8;
  d.hidden_dim = 8;
  d.latent_dim = 4;
  Rng rng = named_stream(seed, "miniature");
  MiniatureProblem m{ModelParams::random(d, rng, init_scale), {}, Tensor(2, 4), Tensor(2, 4)};
  // Random biases too, so no unit sits at an exact kink.
  m.params.for_each([&](Parameter& p) {
    if (p.name.ends_with(".b")) p.value = uniform(p.value.rows(), p.value.cols(), -0.1, 0.1, rng);
  });
  const std::vector<std::vector<int>> sentences{{4, 7, 12, 5}, {9, 4, 19}};
  const std::vector<std::vector<int>> syntax{{4, 5, 6, 7, 8}, {4, 6, 5, 8}};
  for (std::size_t i = 0; i < sentences.size(); ++i) {
    Tensor bow(1, d.vocab_size);
    for (int id : sentences[i]) bow[static_cast<std::size_t>(id)] += 1.0 / static_cast<double>(sentences[i].size());
    m.batch.push_back(Example{Sentence{sentences[i]}, syntax[i], bow});
  }
  m.eps_sem = standard_normal(2, 4, rng);
  m.eps_syn = standard_normal(2, 4, rng);
  return m;
}

/// Worst relative error of the combined objective's MAIN-parameter
/// gradient against central differences, all eight weights nonzero.
inline double model_gradcheck(std::uint64_t seed, double eps = 1e-5, double init_scale = 0.8) {
  MiniatureProblem m = miniature_problem(seed, init_scale);
  const LossWeights w{0.7, 0.9, 0.5, 0.6, 0.4, 0.3, 0.2, 0.35};
  const model::KlMultipliers kl{0.8, 0.6};
  const Batch batch(m.batch);
  const auto evaluate = [&] {
    ad::Tape tape;
    return model::total_loss(model::vae_forward(tape, m.params, batch, m.eps_sem, m.eps_syn), w, kl)
        .value()
        .item();
  };
  m.params.zero_grad();
  {
    ad::Tape tape;
    tape.backward(model::total_loss(model::vae_forward(tape, m.params, batch, m.eps_sem, m.eps_syn), w, kl));
  }
  std::vector<Tensor*> inputs;
  std::vector<Tensor> analytic;
  for (Parameter* p : m.params.group(ParamGroup::kMain)) {
    inputs.push_back(&p->value);
    analytic.push_back(p->grad);
  }
  return finite_difference_error(inputs, analytic, evaluate, eps);
}

}  // namespace dssvae
