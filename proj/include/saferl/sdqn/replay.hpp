#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <deque>
#include <memory>
#include <vector>

#include "saferl/core/errors.hpp"
#include "saferl/core/rng.hpp"
#include "saferl/core/tensor.hpp"

namespace saferl::sdqn {

// One stored trajectory step: the observation at x_t plus what the step did.
struct TrajStep {
  nn::Tensor obs;
  std::size_t action = 0;
  double cost = 0.0;
  double constraint = 0.0;
};

// A finished episode. Steps are causally ordered; the state after the last
// step is terminal (goal or cap), so it is never observed or encoded.
// `encodings` optionally caches the rollout-time context encoding per step
// for trainers that keep the encoder frozen.
struct Episode {
  std::vector<TrajStep> steps;
  std::vector<nn::Tensor> encodings;
};

struct ReplayConfig {
  std::size_t capacity = 10000;
  double alpha = 0.6;
  double beta_start = 0.4;
  double beta_end = 1.0;
  double floor = 1e-3;

  void validate() const {
    if (capacity == 0) throw ValidationError("replay: capacity must be positive");
    if (alpha < 0.0) throw ValidationError("replay: priority exponent must be non-negative");
    if (floor <= 0.0) throw ValidationError("replay: priority floor must be positive");
    if (beta_start < 0.0 || beta_end < beta_start)
      throw ValidationError("replay: beta schedule must be non-decreasing and non-negative");
  }
};

struct SampleRef {
  std::size_t id = 0;  // stable record id for priority updates
  const Episode* episode = nullptr;
  std::size_t t = 0;
  double weight = 1.0;
};

// Proportional prioritized replay over trajectory steps with FIFO eviction.
// New records enter at priority 1 so the first sampling pass is uniform with
// unit importance weights.
class ReplayBuffer {
 public:
  explicit ReplayBuffer(ReplayConfig cfg) : cfg_(cfg) { cfg_.validate(); }

  void add_episode(std::shared_ptr<const Episode> episode) {
    if (!episode || episode->steps.empty())
      throw UsageError("replay: cannot add an empty episode");
    for (std::size_t t = 0; t < episode->steps.size(); ++t) {
      records_.push_back({episode, t, 1.0});
      if (records_.size() > cfg_.capacity) {
        records_.pop_front();
        ++base_id_;
      }
    }
  }

  std::size_t size() const { return records_.size(); }
  std::size_t capacity() const { return cfg_.capacity; }

  double priority_of(std::size_t id) const {
    if (id < base_id_ || id - base_id_ >= records_.size())
      throw ParameterError("replay: record id out of range");
    return records_[id - base_id_].priority;
  }

  // Annealed correction exponent at a given progress in [0, 1].
  double beta_at(double progress) const {
    double p = std::clamp(progress, 0.0, 1.0);
    return cfg_.beta_start + (cfg_.beta_end - cfg_.beta_start) * p;
  }

  // Draws with probability proportional to priority; importance weights are
  // (N * P)^-beta, normalized by the batch maximum.
  std::vector<SampleRef> sample(std::size_t batch, double beta, RngStream& rng) {
    if (records_.empty()) throw UsageError("replay: sampling from an empty buffer");
    if (batch == 0) throw ParameterError("replay: batch size must be positive");
    double total = 0.0;
    for (const Record& r : records_) total += r.priority;
    std::vector<SampleRef> out;
    out.reserve(batch);
    double n = static_cast<double>(records_.size());
    double max_w = 0.0;
    for (std::size_t k = 0; k < batch; ++k) {
      double u = rng.uniform() * total;
      std::size_t idx = 0;
      double acc = 0.0;
      for (std::size_t i = 0; i < records_.size(); ++i) {
        acc += records_[i].priority;
        if (u < acc || i + 1 == records_.size()) {
          idx = i;
          break;
        }
      }
      const Record& r = records_[idx];
      double prob = r.priority / total;
      double w = std::pow(n * prob, -beta);
      max_w = std::max(max_w, w);
      out.push_back({base_id_ + idx, r.episode.get(), r.t, w});
    }
    for (SampleRef& s : out) s.weight /= max_w;
    return out;
  }

  // priority = (|TD| + floor)^alpha.
  void update_priorities(const std::vector<std::size_t>& ids,
                         const std::vector<double>& td_abs) {
    if (ids.size() != td_abs.size())
      throw DimensionError("replay: one TD magnitude per record id required");
    for (std::size_t k = 0; k < ids.size(); ++k) {
      if (ids[k] < base_id_) continue;  // already evicted
      std::size_t idx = ids[k] - base_id_;
      if (idx >= records_.size()) throw ParameterError("replay: record id out of range");
      if (!std::isfinite(td_abs[k]) || td_abs[k] < 0.0)
        throw NumericError("replay: TD magnitude must be finite and non-negative");
      records_[idx].priority = std::pow(td_abs[k] + cfg_.floor, cfg_.alpha);
    }
  }

 private:
  struct Record {
    std::shared_ptr<const Episode> episode;
    std::size_t t;
    double priority;
  };

  ReplayConfig cfg_;
  std::deque<Record> records_;
  std::size_t base_id_ = 0;
};

}  // namespace saferl::sdqn
