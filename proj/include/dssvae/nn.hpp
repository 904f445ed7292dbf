// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstddef>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "dssvae/autodiff.hpp"

namespace dssvae {

/// Weights of one GRU layer. Gate blocks are laid out column-wise as
/// [update | reset | candidate], so `w` is in x 3H, `u` is H x 3H and `b`
/// is 1 x 3H.
struct GruParams {
  Parameter w;
  Parameter u;
  Parameter b;

  GruParams() = default;
  GruParams(const std::string& prefix, ParamGroup group, std::size_t input, std::size_t hidden)
      : w(prefix + ".w", group, Tensor(input, 3 * hidden)),
        u(prefix + ".u", group, Tensor(hidden, 3 * hidden)),
        b(prefix + ".b", group, Tensor(1, 3 * hidden)) {}

  std::size_t input_size() const { return w.value.rows(); }
  std::size_t hidden_size() const { return u.value.rows(); }

  template <class F>
  void for_each(F&& f) {
    f(w);
    f(u);
    f(b);
  }
};

/// Affine map x * W + b.
struct LinearParams {
  Parameter w;
  Parameter b;

  LinearParams() = default;
  LinearParams(const std::string& prefix, ParamGroup group, std::size_t in, std::size_t out)
      : w(prefix + ".w", group, Tensor(in, out)), b(prefix + ".b", group, Tensor(1, out)) {}

  template <class F>
  void for_each(F&& f) {
    f(w);
    f(b);
  }
};

namespace ad {

/// Batched GRU step:
///   u = sigmoid(x Wu + h Uu + bu)
///   r = sigmoid(x Wr + h Ur + br)
///   c = tanh(x Wc + (r * h) Uc + bc)
///   h' = (1 - u) * h + u * c
inline Var gru_cell(const Var& x, const Var& h, const Var& w, const Var& u, const Var& b) {
  detail::same_tape(x, h, "gru_cell");
  detail::same_tape(x, w, "gru_cell");
  detail::same_tape(x, u, "gru_cell");
  detail::same_tape(x, b, "gru_cell");
  const Tensor& xv = x.value();
  const Tensor& hv = h.value();
  const Tensor& wv = w.value();
  const Tensor& uv = u.value();
  const Tensor& bv = b.value();
  const std::size_t H = hv.cols();
  const std::size_t B = hv.rows();
  if (xv.rows() != B || wv.rows() != xv.cols() || wv.cols() != 3 * H || uv.rows() != H ||
      uv.cols() != 3 * H || bv.rows() != 1 || bv.cols() != 3 * H) {
    throw ShapeError("gru_cell: inconsistent shapes x " + shape_string(xv) + ", h " +
                     shape_string(hv) + ", W " + shape_string(wv) + ", U " + shape_string(uv) +
                     ", b " + shape_string(bv));
  }

  RowMatrix pre = xv.mat() * wv.mat();
  pre.rowwise() += bv.mat().row(0);
  pre.leftCols(2 * H).noalias() += hv.mat() * uv.mat().leftCols(2 * H);

  Tensor gu(B, H), gr(B, H), gc(B, H), rh(B, H);
  for (std::size_t i = 0; i < B; ++i) {
    for (std::size_t j = 0; j < H; ++j) {
      gu(i, j) = detail::sigmoid(pre(i, j));
      gr(i, j) = detail::sigmoid(pre(i, H + j));
      rh(i, j) = gr(i, j) * hv(i, j);
    }
  }
  RowMatrix cand = pre.rightCols(H);
  cand.noalias() += rh.mat() * uv.mat().rightCols(H);
  Tensor out(B, H);
  for (std::size_t i = 0; i < B; ++i) {
    for (std::size_t j = 0; j < H; ++j) {
      gc(i, j) = std::tanh(cand(i, j));
      out(i, j) = (1.0 - gu(i, j)) * hv(i, j) + gu(i, j) * gc(i, j);
    }
  }

  const std::size_t ix = x.id(), ih = h.id(), iw = w.id(), iu = u.id(), ib = b.id();
  const bool rg = x.requires_grad() || h.requires_grad() || w.requires_grad() ||
                  u.requires_grad() || b.requires_grad();
  return x.tape().record(
      std::move(out), rg,
      [ix, ih, iw, iu, ib, H, B, gu = std::move(gu), gr = std::move(gr), gc = std::move(gc),
       rh = std::move(rh)](Tape& t, std::size_t self) {
        const Tensor& g = t.grad(self);
        const Tensor& hv = t.value(ih);
        const Tensor& uv = t.value(iu);
        RowMatrix dpre(B, 3 * H);
        RowMatrix dh(B, H);
        for (std::size_t i = 0; i < B; ++i) {
          for (std::size_t j = 0; j < H; ++j) {
            const double gij = g(i, j);
            const double ui = gu(i, j), ci = gc(i, j);
            dpre(i, j) = gij * (ci - hv(i, j)) * ui * (1.0 - ui);
            dpre(i, 2 * H + j) = gij * ui * (1.0 - ci * ci);
            dh(i, j) = gij * (1.0 - ui);
          }
        }
        const RowMatrix drh = dpre.rightCols(H) * uv.mat().rightCols(H).transpose();
        for (std::size_t i = 0; i < B; ++i) {
          for (std::size_t j = 0; j < H; ++j) {
            const double ri = gr(i, j);
            dpre(i, H + j) = drh(i, j) * hv(i, j) * ri * (1.0 - ri);
            dh(i, j) += drh(i, j) * ri;
          }
        }
        if (t.requires_grad(ih)) {
          dh.noalias() += dpre.leftCols(2 * H) * uv.mat().leftCols(2 * H).transpose();
          t.grad(ih).mat() += dh;
        }
        if (t.requires_grad(iu)) {
          auto gU = t.grad(iu).mat();
          gU.leftCols(2 * H).noalias() += hv.mat().transpose() * dpre.leftCols(2 * H);
          gU.rightCols(H).noalias() += rh.mat().transpose() * dpre.rightCols(H);
        }
        if (t.requires_grad(iw)) t.grad(iw).mat().noalias() += t.value(ix).mat().transpose() * dpre;
        if (t.requires_grad(ib)) t.grad(ib).mat() += dpre.colwise().sum();
        if (t.requires_grad(ix)) t.grad(ix).mat().noalias() += dpre * t.value(iw).mat().transpose();
      });
}

inline Var gru_cell(const Var& x, const Var& h, Tape& tape, GruParams& p, bool trainable = true) {
  return gru_cell(x, h, tape.param(p.w, trainable), tape.param(p.u, trainable),
                  tape.param(p.b, trainable));
}

/// mu + sigma * epsilon. epsilon is a constant draw; gradients reach mu and
/// sigma only.
inline Var reparameterize(const Var& mu, const Var& sigma, const Tensor& epsilon) {
  detail::same_tape(mu, sigma, "reparameterize");
  require_same_shape(mu.value(), sigma.value(), "reparameterize");
  require_same_shape(mu.value(), epsilon, "reparameterize");
  for (double s : sigma.value().data()) {
    if (!(s > 0.0)) throw DomainError("reparameterize: sigma must be positive");
  }
  Var eps = mu.tape().constant(epsilon);
  return add(mu, mul(sigma, eps));
}

/// Sum over all entries of KL(N(mu, sigma^2) || N(0, 1)):
///   0.5 * (mu^2 + sigma^2 - 1 - 2 ln sigma)
inline Var kl_standard_gaussian(const Var& mu, const Var& sigma) {
  detail::same_tape(mu, sigma, "kl_standard_gaussian");
  require_same_shape(mu.value(), sigma.value(), "kl_standard_gaussian");
  const auto m = mu.value().data();
  const auto s = sigma.value().data();
  double total = 0.0;
  for (std::size_t i = 0; i < m.size(); ++i) {
    if (!(s[i] > 0.0)) throw DomainError("kl_standard_gaussian: sigma must be positive");
    total += 0.5 * (m[i] * m[i] + s[i] * s[i] - 1.0 - 2.0 * std::log(s[i]));
  }
  const std::size_t im = mu.id(), is = sigma.id();
  return mu.tape().record(Tensor::scalar(total), mu.requires_grad() || sigma.requires_grad(),
                          [im, is](Tape& t, std::size_t self) {
                            const double g = t.grad(self)[0];
                            if (t.requires_grad(im)) t.grad(im).mat() += g * t.value(im).mat();
                            if (t.requires_grad(is)) {
                              const auto sv = t.value(is).data();
                              auto gs = t.grad(is).data();
                              for (std::size_t i = 0; i < sv.size(); ++i) {
                                gs[i] += g * (sv[i] - 1.0 / sv[i]);
                              }
                            }
                          });
}

namespace detail {

inline RowMatrix log_softmax_rows(const Tensor& logits) {
  RowMatrix out(logits.rows(), logits.cols());
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    const double mx = logits.mat().row(r).maxCoeff();
    double z = 0.0;
    for (std::size_t c = 0; c < logits.cols(); ++c) z += std::exp(logits(r, c) - mx);
    const double lz = mx + std::log(z);
    for (std::size_t c = 0; c < logits.cols(); ++c) out(r, c) = logits(r, c) - lz;
  }
  return out;
}

}  // namespace detail

/// Index-target cross-entropy summed over rows: sum_r weight[r] * -log
/// softmax(logits[r])[target[r]]. Rows with weight 0 are padding and their
/// target is not checked.
inline Var softmax_cross_entropy(const Var& logits, std::span<const int> targets,
                                 std::span<const double> weights = {}) {
  const Tensor& lv = logits.value();
  if (targets.size() != lv.rows()) throw ShapeError("softmax_cross_entropy: one target per row");
  if (!weights.empty() && weights.size() != lv.rows()) {
    throw ShapeError("softmax_cross_entropy: one weight per row");
  }
  std::vector<double> w(lv.rows(), 1.0);
  if (!weights.empty()) w.assign(weights.begin(), weights.end());
  for (std::size_t r = 0; r < lv.rows(); ++r) {
    if (w[r] == 0.0) continue;
    if (targets[r] < 0 || static_cast<std::size_t>(targets[r]) >= lv.cols()) {
      throw DomainError("softmax_cross_entropy: target index " + std::to_string(targets[r]) +
                        " outside " + std::to_string(lv.cols()) + " classes");
    }
  }
  RowMatrix logp = detail::log_softmax_rows(lv);
  double loss = 0.0;
  for (std::size_t r = 0; r < lv.rows(); ++r) {
    if (w[r] != 0.0) loss -= w[r] * logp(r, targets[r]);
  }
  const std::size_t il = logits.id();
  std::vector<int> tg(targets.begin(), targets.end());
  return logits.tape().record(
      Tensor::scalar(loss), logits.requires_grad(),
      [il, tg = std::move(tg), w = std::move(w), logp = std::move(logp)](Tape& t, std::size_t self) {
        const double g = t.grad(self)[0];
        Tensor& gl = t.grad(il);
        for (std::size_t r = 0; r < tg.size(); ++r) {
          if (w[r] == 0.0) continue;
          const double s = g * w[r];
          for (Eigen::Index c = 0; c < logp.cols(); ++c) gl(r, c) += s * std::exp(logp(r, c));
          gl(r, tg[r]) -= s;
        }
      });
}

/// Soft-target cross-entropy summed over rows: -sum_r sum_c t[r,c] log
/// softmax(logits[r])[c]. Each target row must be a distribution.
inline Var softmax_cross_entropy(const Var& logits, const Tensor& target) {
  const Tensor& lv = logits.value();
  require_same_shape(lv, target, "softmax_cross_entropy");
  for (std::size_t r = 0; r < target.rows(); ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < target.cols(); ++c) {
      if (target(r, c) < 0.0) throw DomainError("softmax_cross_entropy: negative target mass");
      s += target(r, c);
    }
    if (std::abs(s - 1.0) > 1e-6) {
      throw DomainError("softmax_cross_entropy: target row sums to " + std::to_string(s));
    }
  }
  RowMatrix logp = detail::log_softmax_rows(lv);
  const double loss = -(target.mat().array() * logp.array()).sum();
  const std::size_t il = logits.id();
  return logits.tape().record(
      Tensor::scalar(loss), logits.requires_grad(),
      [il, target, logp = std::move(logp)](Tape& t, std::size_t self) {
        const double g = t.grad(self)[0];
        Tensor& gl = t.grad(il);
        for (std::size_t r = 0; r < target.rows(); ++r) {
          const double mass = target.mat().row(r).sum();
          for (std::size_t c = 0; c < target.cols(); ++c) {
            gl(r, c) += g * (mass * std::exp(logp(r, c)) - target(r, c));
          }
        }
      });
}

/// Inverted dropout with an explicit mask drawn from `rng`.
template <class Rng>
Var dropout(const Var& x, double p, Rng& rng) {
  if (p <= 0.0) return x;
  if (p >= 1.0) return x.tape().constant(Tensor(x.rows(), x.cols()));
  std::bernoulli_distribution keep(1.0 - p);
  Tensor mask(x.rows(), x.cols());
  for (double& m : mask.data()) m = keep(rng) ? 1.0 / (1.0 - p) : 0.0;
  return mul(x, x.tape().constant(std::move(mask)));
}

}  // namespace ad
}  // namespace dssvae
