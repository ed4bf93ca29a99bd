// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <limits>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "mrlab/common/errors.hpp"
#include "mrlab/common/tensor.hpp"
#include "mrlab/lora/adapter.hpp"
#include "mrlab/tinylm/model.hpp"

namespace mrlab::tinylm {

/// Backbone plus an optional active adapter. Cheap to copy; does not own.
struct PolicyView {
  PolicyView(const PolicyModel& model, const lora::LoraAdapter* active = nullptr)  // NOLINT
      : backbone(&model), adapter(active) {}

  const ModelConfig& config() const { return backbone->config(); }

  const PolicyModel* backbone;
  const lora::LoraAdapter* adapter;
};

enum class GradTarget { kBackbone, kAdapter, kAll };

/// Gradient buffers mirroring the trainable tensors. An empty map means that
/// side is frozen and receives no gradient.
struct Gradients {
  ParameterSet backbone;
  ParameterSet adapter;

  static Gradients zeros_like(PolicyView policy, GradTarget target) {
    Gradients g;
    if (target != GradTarget::kAdapter) {
      for (const auto& [name, w] : policy.backbone->parameters()) g.backbone[name] = Matrix::Zero(w.rows(), w.cols());
    }
    if (target != GradTarget::kBackbone) {
      if (policy.adapter == nullptr) throw StateError("adapter gradients requested without an active adapter");
      for (const auto& [name, w] : policy.adapter->params) g.adapter[name] = Matrix::Zero(w.rows(), w.cols());
    }
    return g;
  }

  void add(const Gradients& other, double scale = 1.0) {
    for (const auto& [name, w] : other.backbone) backbone.at(name) += scale * w;
    for (const auto& [name, w] : other.adapter) adapter.at(name) += scale * w;
  }

  void scale(double s) {
    for (auto& [_, w] : backbone) w *= s;
    for (auto& [_, w] : adapter) w *= s;
  }

  double squared_norm() const {
    double s = 0.0;
    for (const auto& [_, w] : backbone) s += w.squaredNorm();
    for (const auto& [_, w] : adapter) s += w.squaredNorm();
    return s;
  }
  double backbone_norm() const {
    double s = 0.0;
    for (const auto& [_, w] : backbone) s += w.squaredNorm();
    return std::sqrt(s);
  }
};

namespace detail {

inline constexpr double kLayerNormEps = 1e-5;

struct LayerNormCache {
  Matrix xhat;
  Eigen::VectorXd inv_std;
};

inline Matrix layer_norm(const Matrix& x, const Matrix& gain, const Matrix& bias, LayerNormCache& cache) {
  const auto rows = x.rows();
  const auto d = static_cast<double>(x.cols());
  cache.xhat.resize(rows, x.cols());
  cache.inv_std.resize(rows);
  for (Eigen::Index t = 0; t < rows; ++t) {
    const double mean = x.row(t).sum() / d;
    auto centered = (x.row(t).array() - mean).matrix();
    const double var = centered.squaredNorm() / d;
    const double inv = 1.0 / std::sqrt(var + kLayerNormEps);
    cache.inv_std(t) = inv;
    cache.xhat.row(t) = centered * inv;
  }
  Matrix y = cache.xhat.array().rowwise() * gain.row(0).array();
  y.rowwise() += bias.row(0);
  return y;
}

inline Matrix layer_norm_backward(const Matrix& dy, const Matrix& gain, const LayerNormCache& cache, Matrix* dgain,
                                  Matrix* dbias) {
  const Matrix dxhat = dy.array().rowwise() * gain.row(0).array();
  const auto d = static_cast<double>(dy.cols());
  Matrix dx(dy.rows(), dy.cols());
  for (Eigen::Index t = 0; t < dy.rows(); ++t) {
    const double m1 = dxhat.row(t).sum() / d;
    const double m2 = dxhat.row(t).dot(cache.xhat.row(t)) / d;
    dx.row(t) = cache.inv_std(t) * (dxhat.row(t).array() - m1 - cache.xhat.row(t).array() * m2).matrix();
  }
  if (dgain) *dgain += (dy.array() * cache.xhat.array()).colwise().sum().matrix();
  if (dbias) *dbias += dy.colwise().sum();
  return dx;
}

inline constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
inline constexpr double kGeluK = 0.044715;

inline double gelu(double u) { return 0.5 * u * (1.0 + std::tanh(kGeluC * (u + kGeluK * u * u * u))); }

inline double gelu_grad(double u) {
  const double t = std::tanh(kGeluC * (u + kGeluK * u * u * u));
  return 0.5 * (1.0 + t) + 0.5 * u * (1.0 - t * t) * kGeluC * (1.0 + 3.0 * kGeluK * u * u);
}

/// Dense layer y = x W (+ alpha (x A) B when the layer carries an adapter).
struct LinearRef {
  const Matrix* w = nullptr;
  const Matrix* a = nullptr;
  const Matrix* b = nullptr;
  double alpha = 0.0;
};

inline LinearRef linear_ref(PolicyView policy, const std::string& name) {
  LinearRef ref;
  ref.w = &policy.backbone->param(name);
  if (policy.adapter && policy.adapter->targets_layer(name)) {
    ref.a = &policy.adapter->a(name);
    ref.b = &policy.adapter->b(name);
    ref.alpha = policy.adapter->alpha;
  }
  return ref;
}

inline Matrix linear_forward(const LinearRef& l, const Matrix& x, Matrix& xa) {
  Matrix y = x * *l.w;
  if (l.a) {
    xa = x * *l.a;
    y.noalias() += l.alpha * (xa * *l.b);
  }
  return y;
}

/// Accumulates into dx and the requested weight gradients.
inline void linear_backward(const LinearRef& l, const Matrix& x, const Matrix& xa, const Matrix& dy, Matrix& dx,
                            Matrix* dw, Matrix* da, Matrix* db) {
  dx.noalias() += dy * l.w->transpose();
  if (dw) dw->noalias() += x.transpose() * dy;
  if (l.a) {
    const Matrix dy_bt = dy * l.b->transpose();
    dx.noalias() += l.alpha * (dy_bt * l.a->transpose());
    if (da) da->noalias() += l.alpha * (x.transpose() * dy_bt);
    if (db) db->noalias() += l.alpha * (xa.transpose() * dy);
  }
}

struct BlockCache {
  LayerNormCache ln1;
  Matrix h1;
  Matrix q, k, v, q_a, k_a, v_a;
  std::vector<Matrix> probs;
  Matrix attn;
  Matrix o_a;
  LayerNormCache ln2;
  Matrix h2;
  Matrix h2_a;
  Matrix u;
  Matrix act;
  Matrix act_a;
};

}  // namespace detail

/// Activations retained for the backward pass.
struct ForwardCache {
  std::vector<int> tokens;
  std::vector<detail::BlockCache> blocks;
  detail::LayerNormCache ln_f;
  Matrix hf;
  Matrix logits;
};

inline void check_tokens(const ModelConfig& cfg, std::span<const int> tokens) {
  if (tokens.empty()) throw ArgumentError("forward: empty token sequence");
  if (static_cast<int>(tokens.size()) > cfg.context)
    throw LengthError("sequence length " + std::to_string(tokens.size()) + " exceeds context " +
                      std::to_string(cfg.context));
  for (int t : tokens)
    if (t < 0 || t >= cfg.vocab) throw ArgumentError("token id out of range: " + std::to_string(t));
}

/// Full forward pass; the returned cache holds logits (len x vocab).
inline ForwardCache forward(PolicyView policy, std::span<const int> tokens) {
  const auto& cfg = policy.config();
  check_tokens(cfg, tokens);
  const auto& P = *policy.backbone;
  const int T = static_cast<int>(tokens.size());
  const int d = cfg.width;
  const int heads = cfg.heads;
  const int dh = d / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  ForwardCache c;
  c.tokens.assign(tokens.begin(), tokens.end());
  const Matrix& tok_emb = P.param("tok_emb");
  const Matrix& pos_emb = P.param("pos_emb");
  Matrix x(T, d);
  for (int t = 0; t < T; ++t) x.row(t) = tok_emb.row(tokens[t]) + pos_emb.row(t);

  c.blocks.resize(static_cast<std::size_t>(cfg.layers));
  for (int l = 0; l < cfg.layers; ++l) {
    auto& b = c.blocks[static_cast<std::size_t>(l)];
    const auto p = block_prefix(l);
    b.h1 = detail::layer_norm(x, P.param(p + "ln1.g"), P.param(p + "ln1.b"), b.ln1);
    b.q = detail::linear_forward(detail::linear_ref(policy, p + "attn.wq"), b.h1, b.q_a);
    b.k = detail::linear_forward(detail::linear_ref(policy, p + "attn.wk"), b.h1, b.k_a);
    b.v = detail::linear_forward(detail::linear_ref(policy, p + "attn.wv"), b.h1, b.v_a);
    b.attn.resize(T, d);
    b.probs.resize(static_cast<std::size_t>(heads));
    for (int h = 0; h < heads; ++h) {
      const auto qh = b.q.middleCols(h * dh, dh);
      const auto kh = b.k.middleCols(h * dh, dh);
      Matrix scores = (qh * kh.transpose()) * scale;
      Matrix& probs = b.probs[static_cast<std::size_t>(h)];
      probs = Matrix::Zero(T, T);
      for (int i = 0; i < T; ++i) {
        const double mx = scores.row(i).head(i + 1).maxCoeff();
        double sum = 0.0;
        for (int j = 0; j <= i; ++j) {
          probs(i, j) = std::exp(scores(i, j) - mx);
          sum += probs(i, j);
        }
        probs.row(i).head(i + 1) /= sum;
      }
      b.attn.middleCols(h * dh, dh).noalias() = probs * b.v.middleCols(h * dh, dh);
    }
    x += detail::linear_forward(detail::linear_ref(policy, p + "attn.wo"), b.attn, b.o_a);

    b.h2 = detail::layer_norm(x, P.param(p + "ln2.g"), P.param(p + "ln2.b"), b.ln2);
    b.u = detail::linear_forward(detail::linear_ref(policy, p + "mlp.w1"), b.h2, b.h2_a);
    b.u.rowwise() += P.param(p + "mlp.b1").row(0);
    b.act = b.u.unaryExpr([](double z) { return detail::gelu(z); });
    Matrix m = detail::linear_forward(detail::linear_ref(policy, p + "mlp.w2"), b.act, b.act_a);
    m.rowwise() += P.param(p + "mlp.b2").row(0);
    x += m;
  }
  c.hf = detail::layer_norm(x, P.param("ln_f.g"), P.param("ln_f.b"), c.ln_f);
  c.logits = c.hf * P.param("head.w");
  c.logits.rowwise() += P.param("head.b").row(0);
  return c;
}

/// Per-position logits, shape (len, vocab).
inline Matrix forward_logits(PolicyView policy, std::span<const int> tokens) {
  return forward(policy, tokens).logits;
}

/// Backpropagates dL/dlogits through a cached forward pass, accumulating into
/// whichever sides of `grads` are non-empty.
inline void backward(PolicyView policy, const ForwardCache& c, const Matrix& dlogits, Gradients& grads) {
  const auto& cfg = policy.config();
  const auto& P = *policy.backbone;
  const int T = static_cast<int>(c.tokens.size());
  const int d = cfg.width;
  const int heads = cfg.heads;
  const int dh = d / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  const bool want_backbone = !grads.backbone.empty();
  const bool want_adapter = !grads.adapter.empty();

  auto gw = [&](const std::string& name) -> Matrix* { return want_backbone ? &grads.backbone.at(name) : nullptr; };
  auto ga = [&](const std::string& name) -> Matrix* {
    if (!want_adapter || !policy.adapter->targets_layer(name)) return nullptr;
    return &grads.adapter.at(lora::LoraAdapter::a_name(name));
  };
  auto gb = [&](const std::string& name) -> Matrix* {
    if (!want_adapter || !policy.adapter->targets_layer(name)) return nullptr;
    return &grads.adapter.at(lora::LoraAdapter::b_name(name));
  };

  if (auto* g = gw("head.w")) g->noalias() += c.hf.transpose() * dlogits;
  if (auto* g = gw("head.b")) *g += dlogits.colwise().sum();
  Matrix dhf = dlogits * P.param("head.w").transpose();
  Matrix dx = detail::layer_norm_backward(dhf, P.param("ln_f.g"), c.ln_f, gw("ln_f.g"), gw("ln_f.b"));

  for (int l = cfg.layers - 1; l >= 0; --l) {
    const auto& b = c.blocks[static_cast<std::size_t>(l)];
    const auto p = block_prefix(l);

    // MLP branch.
    if (auto* g = gw(p + "mlp.b2")) *g += dx.colwise().sum();
    Matrix dact = Matrix::Zero(T, 4 * d);
    {
      const auto name = p + "mlp.w2";
      detail::linear_backward(detail::linear_ref(policy, name), b.act, b.act_a, dx, dact, gw(name), ga(name), gb(name));
    }
    const Matrix du = dact.array() * b.u.unaryExpr([](double z) { return detail::gelu_grad(z); }).array();
    if (auto* g = gw(p + "mlp.b1")) *g += du.colwise().sum();
    Matrix dh2 = Matrix::Zero(T, d);
    {
      const auto name = p + "mlp.w1";
      detail::linear_backward(detail::linear_ref(policy, name), b.h2, b.h2_a, du, dh2, gw(name), ga(name), gb(name));
    }
    dx += detail::layer_norm_backward(dh2, P.param(p + "ln2.g"), b.ln2, gw(p + "ln2.g"), gw(p + "ln2.b"));

    // Attention branch.
    Matrix dattn = Matrix::Zero(T, d);
    {
      const auto name = p + "attn.wo";
      detail::linear_backward(detail::linear_ref(policy, name), b.attn, b.o_a, dx, dattn, gw(name), ga(name), gb(name));
    }
    Matrix dq(T, d), dk(T, d), dv(T, d);
    for (int h = 0; h < heads; ++h) {
      const Matrix& probs = b.probs[static_cast<std::size_t>(h)];
      const auto dout = dattn.middleCols(h * dh, dh);
      const Matrix dprobs = dout * b.v.middleCols(h * dh, dh).transpose();
      dv.middleCols(h * dh, dh).noalias() = probs.transpose() * dout;
      Matrix dscores(T, T);
      for (int i = 0; i < T; ++i) {
        const double inner = dprobs.row(i).dot(probs.row(i));
        dscores.row(i) = probs.row(i).array() * (dprobs.row(i).array() - inner);
      }
      dscores *= scale;
      dq.middleCols(h * dh, dh).noalias() = dscores * b.k.middleCols(h * dh, dh);
      dk.middleCols(h * dh, dh).noalias() = dscores.transpose() * b.q.middleCols(h * dh, dh);
    }
    Matrix dh1 = Matrix::Zero(T, d);
    for (const auto& [suffix, dy, xa] : {std::tuple{"attn.wq", &dq, &b.q_a}, std::tuple{"attn.wk", &dk, &b.k_a},
                                        std::tuple{"attn.wv", &dv, &b.v_a}}) {
      const auto name = p + suffix;
      detail::linear_backward(detail::linear_ref(policy, name), b.h1, *xa, *dy, dh1, gw(name), ga(name), gb(name));
    }
    dx += detail::layer_norm_backward(dh1, P.param(p + "ln1.g"), b.ln1, gw(p + "ln1.g"), gw(p + "ln1.b"));
  }

  if (want_backbone) {
    Matrix& dtok = grads.backbone.at("tok_emb");
    Matrix& dpos = grads.backbone.at("pos_emb");
    for (int t = 0; t < T; ++t) {
      dtok.row(c.tokens[static_cast<std::size_t>(t)]) += dx.row(t);
      dpos.row(t) += dx.row(t);
    }
  }
}

/// Row-wise numerically stable log-softmax.
inline RowVector log_softmax(const Eigen::Ref<const RowVector>& logits) {
  const double mx = logits.maxCoeff();
  const double lse = mx + std::log((logits.array() - mx).exp().sum());
  return (logits.array() - lse).matrix();
}

inline RowVector softmax(const Eigen::Ref<const RowVector>& logits) {
  const double mx = logits.maxCoeff();
  RowVector e = (logits.array() - mx).exp().matrix();
  return e / e.sum();
}

}  // namespace mrlab::tinylm
