#include "molace/tiny_transformer.hpp"

#include <cmath>
#include <cstring>
#include <limits>
#include <random>

namespace molace {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

constexpr double kLnEps = 1e-5;
constexpr double kGeluK = 0.7978845608028654;  // sqrt(2 / pi)
constexpr double kGeluC = 0.044715;

Index ix(std::size_t v) { return static_cast<Index>(v); }

struct LayerNormOut {
  MatrixXd y;
  MatrixXd xhat;
  VectorXd rstd;
};

LayerNormOut layer_norm(const MatrixXd& x, const MatrixXd& g, const MatrixXd& b) {
  LayerNormOut out;
  const Index n = x.rows(), d = x.cols();
  out.xhat.resize(n, d);
  out.rstd.resize(n);
  for (Index i = 0; i < n; ++i) {
    const double mean = x.row(i).mean();
    const double var = (x.row(i).array() - mean).square().mean();
    const double rstd = 1.0 / std::sqrt(var + kLnEps);
    out.rstd[i] = rstd;
    out.xhat.row(i) = (x.row(i).array() - mean) * rstd;
  }
  out.y = (out.xhat.array().rowwise() * g.row(0).array()).rowwise() + b.row(0).array();
  return out;
}

// Gradient through y = xhat * g + b given dy * g already applied (dxhat).
MatrixXd layer_norm_backward(const MatrixXd& dxhat, const MatrixXd& xhat, const VectorXd& rstd) {
  MatrixXd dx(dxhat.rows(), dxhat.cols());
  for (Index i = 0; i < dxhat.rows(); ++i) {
    const double m1 = dxhat.row(i).mean();
    const double m2 = (dxhat.row(i).array() * xhat.row(i).array()).mean();
    dx.row(i) = rstd[i] * (dxhat.row(i).array() - m1 - xhat.row(i).array() * m2);
  }
  return dx;
}

MatrixXd gelu(const MatrixXd& x) {
  return x.unaryExpr([](double v) { return 0.5 * v * (1.0 + std::tanh(kGeluK * (v + kGeluC * v * v * v))); });
}

MatrixXd gelu_grad(const MatrixXd& x) {
  return x.unaryExpr([](double v) {
    const double t = std::tanh(kGeluK * (v + kGeluC * v * v * v));
    return 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * kGeluK * (1.0 + 3.0 * kGeluC * v * v);
  });
}

void softmax_rows_inplace(MatrixXd& s) {
  for (Index i = 0; i < s.rows(); ++i) {
    const double mx = s.row(i).maxCoeff();
    s.row(i) = (s.row(i).array() - mx).exp();
    s.row(i) /= s.row(i).sum();
  }
}

struct KVCache {
  std::vector<MatrixXd> k, v;  // per layer, rows = processed positions
};

// Runs positions [start, tokens.size()) given a cache holding rows [0, start).
// Returns the final-norm output rows for the new positions.
MatrixXd run_rows(const TransformerConfig& cfg, const TransformerWeights& w, std::span<const TokenId> tokens,
                  std::size_t start, KVCache& cache, const InterventionSpec* spec, std::size_t prompt_end,
                  std::vector<MatrixXd>* capture) {
  const std::size_t n = tokens.size();
  const Index m = ix(n - start);
  const Index d = ix(cfg.d_model);
  const Index dh = ix(cfg.d_model / cfg.heads);
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  if (cache.k.empty()) {
    cache.k.assign(cfg.layers, MatrixXd(0, d));
    cache.v.assign(cfg.layers, MatrixXd(0, d));
  }

  MatrixXd x(m, d);
  for (Index i = 0; i < m; ++i) {
    const std::size_t pos = start + static_cast<std::size_t>(i);
    x.row(i) = w.tok_emb.row(tokens[pos]) + w.pos_emb.row(ix(pos));
  }

  for (std::size_t l = 0; l < cfg.layers; ++l) {
    const BlockWeights& bw = w.blocks[l];
    const LayerNormOut a1 = layer_norm(x, bw.ln1_g, bw.ln1_b);
    const MatrixXd q = a1.y * bw.wq;
    MatrixXd& kc = cache.k[l];
    MatrixXd& vc = cache.v[l];
    const Index old_rows = kc.rows();
    kc.conservativeResize(old_rows + m, d);
    vc.conservativeResize(old_rows + m, d);
    kc.bottomRows(m) = a1.y * bw.wk;
    vc.bottomRows(m) = a1.y * bw.wv;
    const Index total = kc.rows();

    MatrixXd o(m, d);
    for (std::size_t h = 0; h < cfg.heads; ++h) {
      const Index c0 = ix(h) * dh;
      MatrixXd s = (q.middleCols(c0, dh) * kc.middleCols(c0, dh).transpose()) * scale;
      for (Index i = 0; i < m; ++i) {
        const Index pos = ix(start) + i;
        for (Index j = pos + 1; j < total; ++j) s(i, j) = -std::numeric_limits<double>::infinity();
      }
      softmax_rows_inplace(s);
      o.middleCols(c0, dh) = s * vc.middleCols(c0, dh);
    }
    x += o * bw.wo;

    const LayerNormOut a2 = layer_norm(x, bw.ln2_g, bw.ln2_b);
    const MatrixXd hidden = gelu((a2.y * bw.w1).rowwise() + bw.b1.row(0));
    x += (hidden * bw.w2).rowwise() + bw.b2.row(0);

    if (spec && spec->layer == l) {
      for (Index i = 0; i < m; ++i)
        if (start + static_cast<std::size_t>(i) > prompt_end) x.row(i) += spec->alpha * spec->direction.transpose();
    }
    if (capture) (*capture)[l] = x;
  }
  return layer_norm(x, w.lnf_g, w.lnf_b).y;
}

class TinyState final : public DecodeState {
 public:
  explicit TinyState(const PromptTokens& p) : DecodeState(p) {}
  std::unique_ptr<DecodeState> clone() const override { return std::make_unique<TinyState>(*this); }

  KVCache cache;
  std::size_t processed = 0;
  VectorXd last_logits;
  bool bound = false;
  bool has_spec = false;
  InterventionSpec spec;
};

bool same_spec(const InterventionSpec& a, const InterventionSpec& b) {
  return a.layer == b.layer && a.alpha == b.alpha && a.direction.size() == b.direction.size() &&
         a.direction == b.direction;
}

}  // namespace

void TransformerConfig::validate() const {
  if (layers == 0 || d_model == 0 || heads == 0 || d_ff == 0 || context == 0 || vocab == 0)
    throw InvalidArgument("TransformerConfig: all sizes must be positive");
  if (d_model % heads != 0) throw InvalidArgument("TransformerConfig: d_model must be divisible by heads");
}

TransformerWeights TransformerWeights::zeros(const TransformerConfig& c) {
  const Index d = ix(c.d_model), f = ix(c.d_ff), v = ix(c.vocab);
  TransformerWeights w;
  w.tok_emb = MatrixXd::Zero(v, d);
  w.pos_emb = MatrixXd::Zero(ix(c.context), d);
  w.blocks.resize(c.layers);
  for (auto& b : w.blocks) {
    b.ln1_g = MatrixXd::Zero(1, d);
    b.ln1_b = MatrixXd::Zero(1, d);
    b.wq = MatrixXd::Zero(d, d);
    b.wk = MatrixXd::Zero(d, d);
    b.wv = MatrixXd::Zero(d, d);
    b.wo = MatrixXd::Zero(d, d);
    b.ln2_g = MatrixXd::Zero(1, d);
    b.ln2_b = MatrixXd::Zero(1, d);
    b.w1 = MatrixXd::Zero(d, f);
    b.b1 = MatrixXd::Zero(1, f);
    b.w2 = MatrixXd::Zero(f, d);
    b.b2 = MatrixXd::Zero(1, d);
  }
  w.lnf_g = MatrixXd::Zero(1, d);
  w.lnf_b = MatrixXd::Zero(1, d);
  w.w_out = MatrixXd::Zero(d, v);
  w.b_out = MatrixXd::Zero(1, v);
  return w;
}

TransformerWeights TransformerWeights::random(const TransformerConfig& c, std::uint64_t seed) {
  c.validate();
  TransformerWeights w = zeros(c);
  Rng rng(seed);
  std::normal_distribution<double> n01(0.0, 1.0);
  const double resid_std = 0.02 / std::sqrt(2.0 * static_cast<double>(c.layers));
  auto fill = [&](MatrixXd& m, double stddev) {
    for (Index i = 0; i < m.size(); ++i) m.data()[i] = stddev * n01(rng);
  };
  fill(w.tok_emb, 0.02);
  fill(w.pos_emb, 0.02);
  for (auto& b : w.blocks) {
    b.ln1_g.setOnes();
    b.ln2_g.setOnes();
    fill(b.wq, 0.02);
    fill(b.wk, 0.02);
    fill(b.wv, 0.02);
    fill(b.wo, resid_std);
    fill(b.w1, 0.02);
    fill(b.w2, resid_std);
  }
  w.lnf_g.setOnes();
  fill(w.w_out, 0.02);
  return w;
}

void TransformerWeights::visit(const std::function<void(const std::string&, MatrixXd&)>& fn) {
  fn("tok_emb", tok_emb);
  fn("pos_emb", pos_emb);
  for (std::size_t l = 0; l < blocks.size(); ++l) {
    const std::string p = "blocks." + std::to_string(l) + ".";
    auto& b = blocks[l];
    fn(p + "ln1_g", b.ln1_g);
    fn(p + "ln1_b", b.ln1_b);
    fn(p + "wq", b.wq);
    fn(p + "wk", b.wk);
    fn(p + "wv", b.wv);
    fn(p + "wo", b.wo);
    fn(p + "ln2_g", b.ln2_g);
    fn(p + "ln2_b", b.ln2_b);
    fn(p + "w1", b.w1);
    fn(p + "b1", b.b1);
    fn(p + "w2", b.w2);
    fn(p + "b2", b.b2);
  }
  fn("lnf_g", lnf_g);
  fn("lnf_b", lnf_b);
  fn("w_out", w_out);
  fn("b_out", b_out);
}

void TransformerWeights::visit(const std::function<void(const std::string&, const MatrixXd&)>& fn) const {
  const_cast<TransformerWeights*>(this)->visit(
      [&](const std::string& name, MatrixXd& m) { fn(name, static_cast<const MatrixXd&>(m)); });
}

std::size_t TransformerWeights::parameter_count() const {
  std::size_t n = 0;
  visit([&](const std::string&, const MatrixXd& m) { n += static_cast<std::size_t>(m.size()); });
  return n;
}

TinyTransformerLM::TinyTransformerLM(TransformerConfig config, Vocab vocab, TransformerWeights weights)
    : config_(config), vocab_(std::move(vocab)), weights_(std::move(weights)) {
  config_.validate();
  if (vocab_.size() != config_.vocab) throw InvalidArgument("TinyTransformerLM: vocab size mismatch");
  const TransformerWeights shape = TransformerWeights::zeros(config_);
  std::vector<std::pair<Index, Index>> dims;
  shape.visit([&](const std::string&, const MatrixXd& m) { dims.emplace_back(m.rows(), m.cols()); });
  std::size_t i = 0;
  bool ok = weights_.blocks.size() == config_.layers;
  if (ok) {
    weights_.visit([&](const std::string&, const MatrixXd& m) {
      if (i >= dims.size() || dims[i] != std::make_pair(m.rows(), m.cols())) ok = false;
      ++i;
    });
  }
  if (!ok || i != dims.size()) throw InvalidArgument("TinyTransformerLM: weight shapes do not match config");
}

std::string TinyTransformerLM::fingerprint() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  weights_.visit([&](const std::string& name, const MatrixXd& m) {
    h = mix64(h ^ fnv1a(name));
    for (Index i = 0; i < m.size(); ++i) {
      std::uint64_t bits;
      const double v = m.data()[i];
      std::memcpy(&bits, &v, sizeof(bits));
      h = mix64(h ^ bits);
    }
  });
  for (const auto& t : vocab_.tokens()) h = mix64(h ^ fnv1a(t));
  return hex64(h);
}

PromptTrace TinyTransformerLM::trace(const PromptTokens& prompt) const {
  prompt.validate(vocab_);
  if (prompt.prompt_end + 1 > config_.context)
    throw InvalidArgument("TinyTransformerLM: prompt longer than context window");
  const std::span<const TokenId> ids(prompt.ids.data(), prompt.prompt_end + 1);
  KVCache cache;
  PromptTrace tr;
  tr.layers.resize(config_.layers);
  const MatrixXd out = run_rows(config_, weights_, ids, 0, cache, nullptr, prompt.prompt_end, &tr.layers);
  tr.logits = (out.bottomRows(1) * weights_.w_out + weights_.b_out).transpose();
  return tr;
}

std::unique_ptr<DecodeState> TinyTransformerLM::begin(const PromptTokens& prompt) const {
  prompt.validate(vocab_);
  if (prompt.ids.size() > config_.context)
    throw InvalidArgument("TinyTransformerLM: prompt longer than context window");
  return std::make_unique<TinyState>(prompt);
}

VectorXd TinyTransformerLM::step_logits(DecodeState& state, const InterventionSpec* spec) const {
  auto* st = dynamic_cast<TinyState*>(&state);
  if (!st) throw InvalidArgument("TinyTransformerLM: foreign decode state");
  if (spec && (spec->layer >= config_.layers || static_cast<std::size_t>(spec->direction.size()) != config_.d_model))
    throw InvalidArgument("TinyTransformerLM: intervention layer/dimension mismatch");
  if (!st->bound) {
    st->bound = true;
    st->has_spec = spec != nullptr;
    if (spec) st->spec = *spec;
  } else if (st->has_spec != (spec != nullptr) || (spec && !same_spec(st->spec, *spec))) {
    throw std::logic_error("TinyTransformerLM: decode state stepped with a different intervention");
  }
  const auto& toks = st->tokens();
  if (toks.size() > config_.context) throw InvalidArgument("TinyTransformerLM: sequence exceeds context window");
  if (st->processed < toks.size()) {
    const MatrixXd out =
        run_rows(config_, weights_, toks, st->processed, st->cache, spec, st->prompt_end(), nullptr);
    st->last_logits = (out.bottomRows(1) * weights_.w_out + weights_.b_out).transpose();
    st->processed = toks.size();
  }
  return st->last_logits;
}

MatrixXd TinyTransformerLM::sequence_logits(std::span<const TokenId> tokens) const {
  if (tokens.empty() || tokens.size() > config_.context) throw InvalidArgument("sequence_logits: bad length");
  KVCache cache;
  const MatrixXd out = run_rows(config_, weights_, tokens, 0, cache, nullptr, tokens.size(), nullptr);
  return (out * weights_.w_out).rowwise() + weights_.b_out.row(0);
}

double loss_and_gradient(const TransformerConfig& cfg, const TransformerWeights& w,
                         const std::vector<std::vector<TokenId>>& batch, TransformerWeights& grad) {
  if (batch.empty()) throw InvalidArgument("loss_and_gradient: empty batch");
  const std::size_t T = batch.front().size();
  if (T < 2 || T > cfg.context) throw InvalidArgument("loss_and_gradient: bad sequence length");
  for (const auto& s : batch)
    if (s.size() != T) throw InvalidArgument("loss_and_gradient: sequences must share one length");

  const Index B = ix(batch.size()), Tt = ix(T), N = B * Tt;
  const Index d = ix(cfg.d_model), H = ix(cfg.heads), dh = d / H, V = ix(cfg.vocab);
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  struct LayerCache {
    MatrixXd x_in;
    LayerNormOut a1;
    MatrixXd q, k, v, o;
    std::vector<MatrixXd> p;  // B*H attention matrices
    LayerNormOut a2;
    MatrixXd h_pre, g;
  };
  std::vector<LayerCache> lc(cfg.layers);

  MatrixXd x(N, d);
  for (Index b = 0; b < B; ++b)
    for (Index t = 0; t < Tt; ++t) x.row(b * Tt + t) = w.tok_emb.row(batch[b][t]) + w.pos_emb.row(t);

  for (std::size_t l = 0; l < cfg.layers; ++l) {
    const BlockWeights& bw = w.blocks[l];
    LayerCache& c = lc[l];
    c.x_in = x;
    c.a1 = layer_norm(x, bw.ln1_g, bw.ln1_b);
    c.q = c.a1.y * bw.wq;
    c.k = c.a1.y * bw.wk;
    c.v = c.a1.y * bw.wv;
    c.o.resize(N, d);
    c.p.resize(static_cast<std::size_t>(B * H));
    for (Index b = 0; b < B; ++b) {
      for (Index h = 0; h < H; ++h) {
        MatrixXd s = (c.q.block(b * Tt, h * dh, Tt, dh) * c.k.block(b * Tt, h * dh, Tt, dh).transpose()) * scale;
        for (Index i = 0; i < Tt; ++i)
          for (Index j = i + 1; j < Tt; ++j) s(i, j) = -std::numeric_limits<double>::infinity();
        softmax_rows_inplace(s);
        c.o.block(b * Tt, h * dh, Tt, dh) = s * c.v.block(b * Tt, h * dh, Tt, dh);
        c.p[static_cast<std::size_t>(b * H + h)] = std::move(s);
      }
    }
    x += c.o * bw.wo;
    c.a2 = layer_norm(x, bw.ln2_g, bw.ln2_b);
    c.h_pre = (c.a2.y * bw.w1).rowwise() + bw.b1.row(0);
    c.g = gelu(c.h_pre);
    x += (c.g * bw.w2).rowwise() + bw.b2.row(0);
  }

  const LayerNormOut fin = layer_norm(x, w.lnf_g, w.lnf_b);
  MatrixXd logits = (fin.y * w.w_out).rowwise() + w.b_out.row(0);

  const double count = static_cast<double>(B * (Tt - 1));
  double loss = 0.0;
  MatrixXd dlogits = MatrixXd::Zero(N, V);
  for (Index b = 0; b < B; ++b) {
    for (Index t = 0; t + 1 < Tt; ++t) {
      const Index r = b * Tt + t;
      const double mx = logits.row(r).maxCoeff();
      const Eigen::RowVectorXd e = (logits.row(r).array() - mx).exp();
      const double z = e.sum();
      const TokenId target = batch[b][t + 1];
      loss += -(logits(r, target) - mx - std::log(z));
      dlogits.row(r) = e / z;
      dlogits(r, target) -= 1.0;
    }
  }
  loss /= count;
  dlogits /= count;

  grad = TransformerWeights::zeros(cfg);
  grad.w_out = fin.y.transpose() * dlogits;
  grad.b_out = dlogits.colwise().sum();
  MatrixXd dfin = dlogits * w.w_out.transpose();
  grad.lnf_g = (dfin.array() * fin.xhat.array()).colwise().sum();
  grad.lnf_b = dfin.colwise().sum();
  MatrixXd dx = layer_norm_backward((dfin.array().rowwise() * w.lnf_g.row(0).array()).matrix(), fin.xhat, fin.rstd);

  for (std::size_t li = cfg.layers; li-- > 0;) {
    const BlockWeights& bw = w.blocks[li];
    BlockWeights& gw = grad.blocks[li];
    const LayerCache& c = lc[li];

    // MLP
    gw.w2 = c.g.transpose() * dx;
    gw.b2 = dx.colwise().sum();
    const MatrixXd dh_pre = ((dx * bw.w2.transpose()).array() * gelu_grad(c.h_pre).array()).matrix();
    gw.w1 = c.a2.y.transpose() * dh_pre;
    gw.b1 = dh_pre.colwise().sum();
    const MatrixXd da2 = dh_pre * bw.w1.transpose();
    gw.ln2_g = (da2.array() * c.a2.xhat.array()).colwise().sum();
    gw.ln2_b = da2.colwise().sum();
    dx += layer_norm_backward((da2.array().rowwise() * bw.ln2_g.row(0).array()).matrix(), c.a2.xhat, c.a2.rstd);

    // Attention
    gw.wo = c.o.transpose() * dx;
    const MatrixXd d_o = dx * bw.wo.transpose();
    MatrixXd dq(N, d), dk(N, d), dv(N, d);
    for (Index b = 0; b < B; ++b) {
      for (Index h = 0; h < H; ++h) {
        const MatrixXd& p = c.p[static_cast<std::size_t>(b * H + h)];
        const auto dob = d_o.block(b * Tt, h * dh, Tt, dh);
        const MatrixXd dp = dob * c.v.block(b * Tt, h * dh, Tt, dh).transpose();
        dv.block(b * Tt, h * dh, Tt, dh) = p.transpose() * dob;
        const Eigen::VectorXd rowdot = (dp.array() * p.array()).rowwise().sum();
        const MatrixXd ds = (p.array() * (dp.colwise() - rowdot).array()).matrix() * scale;
        dq.block(b * Tt, h * dh, Tt, dh) = ds * c.k.block(b * Tt, h * dh, Tt, dh);
        dk.block(b * Tt, h * dh, Tt, dh) = ds.transpose() * c.q.block(b * Tt, h * dh, Tt, dh);
      }
    }
    gw.wq = c.a1.y.transpose() * dq;
    gw.wk = c.a1.y.transpose() * dk;
    gw.wv = c.a1.y.transpose() * dv;
    const MatrixXd da1 = dq * bw.wq.transpose() + dk * bw.wk.transpose() + dv * bw.wv.transpose();
    gw.ln1_g = (da1.array() * c.a1.xhat.array()).colwise().sum();
    gw.ln1_b = da1.colwise().sum();
    dx += layer_norm_backward((da1.array().rowwise() * bw.ln1_g.row(0).array()).matrix(), c.a1.xhat, c.a1.rstd);
  }

  for (Index b = 0; b < B; ++b) {
    for (Index t = 0; t < Tt; ++t) {
      grad.tok_emb.row(batch[b][t]) += dx.row(b * Tt + t);
      grad.pos_emb.row(t) += dx.row(b * Tt + t);
    }
  }
  return loss;
}

AdamOptimizer::AdamOptimizer(const TransformerConfig& config, AdamConfig adam)
    : adam_(adam), m_(TransformerWeights::zeros(config)), v_(TransformerWeights::zeros(config)) {}

void AdamOptimizer::step(TransformerWeights& weights, TransformerWeights& grad) {
  ++t_;
  const double bc1 = 1.0 - std::pow(adam_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(adam_.beta2, static_cast<double>(t_));
  std::vector<MatrixXd*> ps, gs, ms, vs;
  weights.visit([&](const std::string&, MatrixXd& m) { ps.push_back(&m); });
  grad.visit([&](const std::string&, MatrixXd& m) { gs.push_back(&m); });
  m_.visit([&](const std::string&, MatrixXd& m) { ms.push_back(&m); });
  v_.visit([&](const std::string&, MatrixXd& m) { vs.push_back(&m); });
  for (std::size_t i = 0; i < ps.size(); ++i) {
    auto& g = *gs[i];
    *ms[i] = adam_.beta1 * *ms[i] + (1.0 - adam_.beta1) * g;
    *vs[i] = adam_.beta2 * *vs[i] + (1.0 - adam_.beta2) * g.cwiseProduct(g);
    ps[i]->array() -= adam_.lr * (ms[i]->array() / bc1) / ((vs[i]->array() / bc2).sqrt() + adam_.eps);
  }
}

}  // namespace molace
