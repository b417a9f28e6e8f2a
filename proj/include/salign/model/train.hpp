#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include "salign/model/model.hpp"
#include "salign/types.hpp"

namespace salign::model {

struct Example {
  TokenSeq src;
  TokenSeq tgt;
};

struct OptimizerSettings {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::size_t epochs = 10;
  std::size_t batch_size = 32;
  std::uint64_t seed = 1;
  /// Global gradient norm cap per batch; 0 disables clipping.
  double clip_norm = 5.0;
  /// Stop after the first epoch whose dev loss is below this value.
  std::optional<double> target_dev_loss;
  /// 0 means configured_threads().
  std::size_t threads = 0;

  void validate() const;
};

struct EpochReport {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  std::optional<double> dev_loss;
};

struct TrainResult {
  Model model;
  /// Mean per-token cross-entropy of each epoch, measured during the epoch.
  std::vector<double> loss_curve;
  std::vector<double> dev_curve;
  std::size_t steps = 0;
};

using EpochCallback = std::function<void(const EpochReport&)>;

/// Adam on mean per-token cross-entropy (EOS included) with teacher forcing.
/// Deterministic for a given seed and independent of the thread count.
/// Throws TrainingDiverged when a loss or gradient stops being finite.
TrainResult train(const ModelConfig& config, const std::vector<Example>& data,
                  const OptimizerSettings& settings, const std::vector<Example>& dev = {},
                  const EpochCallback& on_epoch = {});
TrainResult train(Model start, const std::vector<Example>& data, const OptimizerSettings& settings,
                  const std::vector<Example>& dev = {}, const EpochCallback& on_epoch = {});

/// Token-weighted mean cross-entropy over a set of examples.
double corpus_loss(const Model& m, const std::vector<Example>& data, std::size_t threads = 0);

}  // namespace salign::model
