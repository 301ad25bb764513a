#pragma once

#include <cstddef>

#include "saferl/core/errors.hpp"

namespace saferl::enc {

// Hyper-parameters of the gated trajectory encoder. `span` (S) bounds how far
// back each query may attend; `ramp` (R) is the soft-mask ramp length. The
// per-head masking lengths z are learned and clamped to [1, span] after every
// optimizer step so the span is never fully masked.
struct EncoderConfig {
  std::size_t d_h = 64;
  std::size_t n_heads = 4;
  std::size_t span = 100;
  double ramp = 8.0;
  std::size_t layers = 2;
  double gate_bias_init = 2.0;
  double span_penalty = 0.0;

  std::size_t d_k() const { return d_h / n_heads; }

  void validate() const {
    if (d_h == 0) throw ValidationError("encoder: d_h must be positive");
    if (n_heads == 0) throw ValidationError("encoder: n_heads must be positive");
    if (d_h % n_heads != 0) throw ValidationError("encoder: d_h must be divisible by n_heads");
    if (span < 1) throw ValidationError("encoder: span must be at least 1");
    if (ramp < 1.0) throw ValidationError("encoder: ramp must be at least 1");
    if (layers == 0) throw ValidationError("encoder: layer count must be positive");
  }
};

}  // namespace saferl::enc
