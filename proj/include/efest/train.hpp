#pragma once

#include <cstdint>
#include <span>

#include "efest/dataset.hpp"
#include "efest/mlp.hpp"
#include "efest/param_vector.hpp"

namespace efest {

struct TrainConfig {
  double learning_rate = 0.05;
  std::uint32_t batch_size = 32;
  std::uint32_t epochs_per_round = 3;
  std::uint64_t seed = 0;

  void validate() const;
};

struct Checkpoint {
  std::uint32_t round = 0;
  std::int32_t parent_round = -1;
  std::uint64_t config_hash = 0;
  MlpNetwork net;
};

/// Glorot-uniform weights in +-sqrt(6 / (fan_in + fan_out)), zero biases,
/// drawn in canonical parameter order from Rng(derive_seed(seed, 0, "init")).
MlpNetwork init_network(const Layout& layout, std::uint64_t seed);

struct RoundResult {
  MlpNetwork net;
  ParamVector delta;  // flatten(net) - flatten(input); input + delta == net exactly
};

/// Plain mini-batch SGD on mean cross-entropy for cfg.epochs_per_round epochs.
/// Each epoch shuffles the (ascending) training ids with one permutation drawn
/// from Rng(derive_seed(cfg.seed, round, "shuffle")).
RoundResult train_round(const MlpNetwork& net, const Dataset& data, std::span<const std::uint64_t> train_ids,
                        const TrainConfig& cfg, std::uint32_t round);

/// Mean cross-entropy over `ids`.
double mean_loss(const MlpNetwork& net, const Dataset& data, std::span<const std::uint64_t> ids);

}  // namespace efest
