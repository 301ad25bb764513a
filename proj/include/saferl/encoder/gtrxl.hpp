#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "saferl/core/errors.hpp"
#include "saferl/core/param_store.hpp"
#include "saferl/core/tape.hpp"
#include "saferl/encoder/config.hpp"
#include "saferl/encoder/positional.hpp"

namespace saferl::enc {

// One attention weight read eagerly during a forward pass, for CSV dumps.
// `key` is a real step index, or -1 for the learned begin token.
struct AttentionWeight {
  std::size_t layer = 0;
  std::size_t head = 0;
  std::size_t query = 0;
  int key = 0;
  double weight = 0.0;
};

inline std::string layer_prefix(std::size_t layer) { return "enc.L" + std::to_string(layer); }

inline void init_gate_params(nn::ParamStore& store, const std::string& base, std::size_t d,
                             double bias_init, RngStream& rng) {
  for (const char* w : {".wr", ".ur", ".wz", ".uz", ".wg", ".ug"})
    store.add(base + w, nn::uniform_init({d, d}, d, rng));
  store.add(base + ".bg", nn::Tensor::full({d}, bias_init));
}

inline void init_encoder_params(nn::ParamStore& store, const EncoderConfig& cfg,
                                RngStream& rng) {
  cfg.validate();
  store.add("enc.begin", nn::uniform_init({cfg.d_h}, cfg.d_h, rng));
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    std::string p = layer_prefix(l);
    store.add(p + ".ln1.gamma", nn::Tensor::full({cfg.d_h}, 1.0));
    store.add(p + ".ln1.beta", nn::Tensor::zeros({cfg.d_h}));
    for (const char* w : {".attn.wq", ".attn.wk", ".attn.wv", ".attn.wo"})
      store.add(p + w, nn::uniform_init({cfg.d_h, cfg.d_h}, cfg.d_h, rng));
    store.add(p + ".attn.z",
              nn::Tensor::full({cfg.n_heads}, static_cast<double>(cfg.span) / 2.0));
    init_gate_params(store, p + ".gate1", cfg.d_h, cfg.gate_bias_init, rng);
    store.add(p + ".ln2.gamma", nn::Tensor::full({cfg.d_h}, 1.0));
    store.add(p + ".ln2.beta", nn::Tensor::zeros({cfg.d_h}));
    store.add(p + ".ff.w1", nn::uniform_init({4 * cfg.d_h, cfg.d_h}, cfg.d_h, rng));
    store.add(p + ".ff.b1", nn::Tensor::zeros({4 * cfg.d_h}));
    store.add(p + ".ff.w2", nn::uniform_init({cfg.d_h, 4 * cfg.d_h}, 4 * cfg.d_h, rng));
    store.add(p + ".ff.b2", nn::Tensor::zeros({cfg.d_h}));
    init_gate_params(store, p + ".gate2", cfg.d_h, cfg.gate_bias_init, rng);
  }
}

// r = sigma(W_r y + U_r x); z = sigma(W_z y + U_z x - b_g);
// h^ = tanh(W_g y + U_g (r * x)); g = (1 - z) * x + z * h^.
inline nn::Var gru_gate(nn::Tape& t, nn::ParamStore& s, const std::string& base, nn::Var x,
                        nn::Var y) {
  auto W = [&](const char* n) { return t.param(s, base + n); };
  nn::Var r = t.sigmoid(t.add(t.matvec(W(".wr"), y), t.matvec(W(".ur"), x)));
  nn::Var z =
      t.sigmoid(t.sub(t.add(t.matvec(W(".wz"), y), t.matvec(W(".uz"), x)), W(".bg")));
  nn::Var hh = t.tanh_(t.add(t.matvec(W(".wg"), y), t.matvec(W(".ug"), t.mul(r, x))));
  return t.add(t.sub(x, t.mul(z, x)), t.mul(z, hh));
}

// Multi-head attention over `x` (position 0 is the begin token). Each query at
// position t attends to positions [max(0, t - span), t): the self position is
// excluded, so the begin position has an empty span and yields a zero vector.
// Scores are scaled by 1/sqrt(d_k) and softly masked by the per-head ramp;
// with z clamped >= 1 the distance-1 key is always fully unmasked.
inline std::vector<nn::Var> attention_sublayer(nn::Tape& t, nn::ParamStore& s,
                                               const EncoderConfig& cfg, std::size_t layer,
                                               const std::vector<nn::Var>& x,
                                               std::vector<AttentionWeight>* dump = nullptr) {
  std::string p = layer_prefix(layer) + ".attn";
  nn::Var wq = t.param(s, p + ".wq");
  nn::Var wk = t.param(s, p + ".wk");
  nn::Var wv = t.param(s, p + ".wv");
  nn::Var wo = t.param(s, p + ".wo");
  nn::Var z = t.param(s, p + ".z");

  std::size_t n = x.size();
  std::size_t dk = cfg.d_k();
  double scale = 1.0 / std::sqrt(static_cast<double>(dk));

  std::vector<nn::Var> k(n), v(n);
  for (std::size_t i = 0; i < n; ++i) {
    k[i] = t.matvec(wk, x[i]);
    v[i] = t.matvec(wv, x[i]);
  }

  // Per-head slices of the sinusoid for every distance used in this window.
  std::size_t max_dist = std::min(n - 1, cfg.span);
  std::vector<std::vector<nn::Tensor>> pos_head(max_dist + 1);
  for (std::size_t d = 1; d <= max_dist; ++d) {
    nn::Tensor full = relative_positional_encoding(d, cfg.d_h);
    pos_head[d].resize(cfg.n_heads);
    for (std::size_t h = 0; h < cfg.n_heads; ++h) {
      nn::Tensor ph = nn::Tensor::zeros({dk});
      for (std::size_t i = 0; i < dk; ++i) ph.data[i] = full.data[h * dk + i];
      pos_head[d][h] = std::move(ph);
    }
  }

  std::vector<nn::Var> out(n);
  out[0] = t.leaf(nn::Tensor::zeros({cfg.d_h}));
  for (std::size_t q_pos = 1; q_pos < n; ++q_pos) {
    nn::Var q = t.matvec(wq, x[q_pos]);
    std::size_t lo = q_pos > cfg.span ? q_pos - cfg.span : 0;
    std::vector<int> dist;
    dist.reserve(q_pos - lo);
    for (std::size_t r = lo; r < q_pos; ++r) dist.push_back(static_cast<int>(q_pos - r));
    std::vector<nn::Var> heads;
    heads.reserve(cfg.n_heads);
    for (std::size_t h = 0; h < cfg.n_heads; ++h) {
      nn::Var qh = t.slice(q, h * dk, dk);
      std::vector<nn::Var> keys, vals;
      std::vector<nn::Tensor> pos;
      keys.reserve(q_pos - lo);
      vals.reserve(q_pos - lo);
      pos.reserve(q_pos - lo);
      for (std::size_t r = lo; r < q_pos; ++r) {
        keys.push_back(t.slice(k[r], h * dk, dk));
        vals.push_back(t.slice(v[r], h * dk, dk));
        pos.push_back(pos_head[q_pos - r][h]);
      }
      nn::Var scores = t.span_scores(qh, keys, pos, scale);
      nn::Var masks = t.span_mask(t.pick(z, h), dist, cfg.ramp);
      nn::Var w = t.masked_softmax(scores, masks);
      if (dump) {
        const nn::Tensor& wval = t.value(w);
        for (std::size_t i = 0; i < wval.size(); ++i)
          dump->push_back({layer, h, q_pos - 1, static_cast<int>(lo + i) - 1, wval[i]});
      }
      heads.push_back(t.weighted_sum(w, vals));
    }
    out[q_pos] = t.matvec(wo, t.concat(heads));
  }
  return out;
}

// Stacked encoder over the token sequence; the begin token is prepended
// internally. Per layer: g1 = gru_gate(input, attention(layer_norm(input)));
// g2 = gru_gate(g1, feed_forward(layer_norm(g1))). Returns one encoded vector
// per real token; the final entry is the trajectory encoding g.
inline std::vector<nn::Var> encoder_forward(nn::Tape& t, nn::ParamStore& s,
                                            const EncoderConfig& cfg,
                                            const std::vector<nn::Var>& tokens,
                                            std::vector<AttentionWeight>* dump = nullptr) {
  if (tokens.empty()) throw ParameterError("encoder_forward: empty token sequence");
  std::vector<nn::Var> x;
  x.reserve(tokens.size() + 1);
  x.push_back(t.param(s, "enc.begin"));
  for (nn::Var tok : tokens) x.push_back(tok);
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    std::string p = layer_prefix(l);
    nn::Var ln1g = t.param(s, p + ".ln1.gamma");
    nn::Var ln1b = t.param(s, p + ".ln1.beta");
    std::vector<nn::Var> normed(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) normed[i] = t.layer_norm(x[i], ln1g, ln1b);
    std::vector<nn::Var> attn = attention_sublayer(t, s, cfg, l, normed, dump);
    std::vector<nn::Var> g1(x.size());
    for (std::size_t i = 0; i < x.size(); ++i)
      g1[i] = gru_gate(t, s, p + ".gate1", x[i], attn[i]);
    nn::Var ln2g = t.param(s, p + ".ln2.gamma");
    nn::Var ln2b = t.param(s, p + ".ln2.beta");
    nn::Var w1 = t.param(s, p + ".ff.w1");
    nn::Var b1 = t.param(s, p + ".ff.b1");
    nn::Var w2 = t.param(s, p + ".ff.w2");
    nn::Var b2 = t.param(s, p + ".ff.b2");
    for (std::size_t i = 0; i < x.size(); ++i) {
      nn::Var ff = t.dense(w2, t.relu(t.dense(w1, t.layer_norm(g1[i], ln2g, ln2b), b1)), b2);
      x[i] = gru_gate(t, s, p + ".gate2", g1[i], ff);
    }
  }
  return std::vector<nn::Var>(x.begin() + 1, x.end());
}

// Keeps every learned masking length inside [1, span]; call after each
// optimizer step.
inline void clamp_spans(nn::ParamStore& s, const EncoderConfig& cfg) {
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    nn::Tensor& z = s.param(layer_prefix(l) + ".attn.z");
    for (double& v : z.data) v = std::clamp(v, 1.0, static_cast<double>(cfg.span));
  }
}

// coefficient * sum of all masking lengths; zero coefficient disables it.
inline nn::Var span_penalty_term(nn::Tape& t, nn::ParamStore& s, const EncoderConfig& cfg) {
  std::vector<nn::Var> terms;
  terms.reserve(cfg.layers);
  for (std::size_t l = 0; l < cfg.layers; ++l)
    terms.push_back(t.sum(t.param(s, layer_prefix(l) + ".attn.z")));
  return t.scale(t.add_all(terms), cfg.span_penalty);
}

}  // namespace saferl::enc
