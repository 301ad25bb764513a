#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "saferl/core/errors.hpp"
#include "saferl/core/param_store.hpp"
#include "saferl/core/tape.hpp"
#include "saferl/grid/gridworld.hpp"

namespace saferl::enc {

// Scalars appended to every observation payload: previous action one-hot plus
// the previous step's cost and constraint cost.
constexpr std::size_t kTokenExtras = grid::kNumActions + 2;

// `prev_action < 0` means "no previous step" (all-zero one-hot, zero costs).
inline nn::Tensor token_extras(int prev_action, double prev_cost, double prev_constraint) {
  nn::Tensor e = nn::Tensor::zeros({kTokenExtras});
  if (prev_action >= 0) {
    if (static_cast<std::size_t>(prev_action) >= grid::kNumActions)
      throw ParameterError("token_extras: action index out of range");
    e.data[static_cast<std::size_t>(prev_action)] = 1.0;
  }
  e.data[grid::kNumActions] = prev_cost;
  e.data[grid::kNumActions + 1] = prev_constraint;
  return e;
}

struct EmbedConfig {
  grid::ObsMode mode = grid::ObsMode::discrete;
  std::vector<std::size_t> payload_shape;  // [n] discrete, [c,h,w] image/partial
  std::vector<std::size_t> conv_channels = {8};
  std::size_t d_h = 64;

  void validate() const {
    if (d_h == 0) throw ValidationError("embed: d_h must be positive");
    if (mode == grid::ObsMode::discrete) {
      if (payload_shape.size() != 1 || payload_shape[0] == 0)
        throw ValidationError("embed: discrete payload must be a non-empty vector");
    } else {
      if (payload_shape.size() != 3) throw ValidationError("embed: image payload must be rank 3");
      for (std::size_t d : payload_shape)
        if (d == 0) throw ValidationError("embed: image payload dims must be positive");
    }
  }
};

// One 3x3 valid convolution, ReLU, and a 2x2 max-pool when the convolved map
// still has both extents >= 2. Stages stop once the map is too small for the
// kernel, so tiny windows fall through to the dense projection unconvolved.
struct ConvStage {
  std::size_t in_c, out_c;
  std::size_t out_h, out_w;  // after pooling, if pooled
  bool pooled;
};

inline std::vector<ConvStage> conv_plan(const EmbedConfig& cfg) {
  std::vector<ConvStage> plan;
  if (cfg.mode == grid::ObsMode::discrete) return plan;
  std::size_t c = cfg.payload_shape[0];
  std::size_t h = cfg.payload_shape[1];
  std::size_t w = cfg.payload_shape[2];
  for (std::size_t out_c : cfg.conv_channels) {
    if (h < 3 || w < 3) break;
    h -= 2;
    w -= 2;
    bool pool = h >= 2 && w >= 2;
    if (pool) {
      h /= 2;
      w /= 2;
    }
    plan.push_back({c, out_c, h, w, pool});
    c = out_c;
  }
  return plan;
}

// Flattened width of the feature vector entering the final dense projection,
// before the extras are appended.
inline std::size_t embed_feature_size(const EmbedConfig& cfg) {
  if (cfg.mode == grid::ObsMode::discrete) return cfg.payload_shape[0];
  std::vector<ConvStage> plan = conv_plan(cfg);
  if (plan.empty())
    return cfg.payload_shape[0] * cfg.payload_shape[1] * cfg.payload_shape[2];
  const ConvStage& last = plan.back();
  return last.out_c * last.out_h * last.out_w;
}

inline void init_embed_params(nn::ParamStore& store, const EmbedConfig& cfg, RngStream& rng) {
  cfg.validate();
  std::vector<ConvStage> plan = conv_plan(cfg);
  for (std::size_t i = 0; i < plan.size(); ++i) {
    std::string base = "embed.conv" + std::to_string(i);
    std::size_t fan_in = plan[i].in_c * 9;
    store.add(base + ".w", nn::uniform_init({plan[i].out_c, plan[i].in_c, 3, 3}, fan_in, rng));
    store.add(base + ".b", nn::Tensor::zeros({plan[i].out_c}));
  }
  std::size_t in = embed_feature_size(cfg) + kTokenExtras;
  store.add("embed.w", nn::uniform_init({cfg.d_h, in}, in, rng));
  store.add("embed.b", nn::Tensor::zeros({cfg.d_h}));
}

// Maps one observation payload plus its extras to a d_h token vector.
inline nn::Var embed_token(nn::Tape& tape, nn::ParamStore& store, const EmbedConfig& cfg,
                           const nn::Tensor& payload, const nn::Tensor& extras) {
  if (payload.shape != cfg.payload_shape)
    throw DimensionError("embed_token: payload does not match configured observation mode");
  if (extras.shape != std::vector<std::size_t>{kTokenExtras})
    throw DimensionError("embed_token: extras must have width " + std::to_string(kTokenExtras));
  nn::Var x = tape.leaf(payload);
  std::vector<ConvStage> plan = conv_plan(cfg);
  for (std::size_t i = 0; i < plan.size(); ++i) {
    std::string base = "embed.conv" + std::to_string(i);
    x = tape.relu(tape.conv2d(x, tape.param(store, base + ".w"), tape.param(store, base + ".b")));
    if (plan[i].pooled) x = tape.maxpool2(x);
  }
  x = tape.reshape(x, {tape.value(x).size()});
  nn::Var feats = tape.concat({x, tape.leaf(extras)});
  return tape.dense(tape.param(store, "embed.w"), feats, tape.param(store, "embed.b"));
}

}  // namespace saferl::enc
