#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "cno/model.hpp"
#include "json.hpp"

namespace cno {

struct TrainConfig {
  double lr = 1e-3;            // η
  double lr_decay = 0.98;      // γ, applied once per epoch
  double weight_decay = 1e-6;  // w, folded into the gradient
  int batch_size = 32;
  int max_epochs = 1000;
  int patience = 50;
  std::uint64_t seed = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  void validate() const;
  /// η·γ^epoch
  double lr_at(int epoch) const;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

/// First and second moment estimates aligned with a parameter registry.
struct AdamState {
  std::vector<std::vector<double>> m, v;
  std::int64_t step = 0;
};

/// One Adam step with bias correction. The gradient used is g + w·θ and the
/// step size is lr_at(epoch). Throws a numeric error naming the first
/// parameter with a non-finite gradient; parameters are untouched then.
template <class T>
void adam_step(const std::vector<Parameter<T>*>& params, AdamState& state, const TrainConfig& config, int epoch);

/// Sample-major input/output pair, already normalized.
struct Samples {
  Tensor<float> inputs;
  Tensor<float> outputs;

  std::size_t size() const { return inputs.shape().n; }
  Samples subset(std::size_t begin, std::size_t count) const;
  Samples gather(const std::vector<std::size_t>& idx) const;
};

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double val_err = 0.0;
  double lr = 0.0;
  double seconds = 0.0;
};

void to_json(nlohmann::json& j, const EpochRecord& r);

struct TrainReport {
  std::vector<EpochRecord> epochs;
  int best_epoch = -1;
  double best_val_err = 0.0;
  std::string stop_reason;  // "max_epochs", "patience" or "diverged"
  std::string diagnostics;
  std::optional<std::filesystem::path> checkpoint;
};

void to_json(nlohmann::json& j, const TrainReport& r);

struct TrainOptions {
  /// Best-state checkpoint written when training ends.
  std::optional<std::filesystem::path> checkpoint;
  /// Line-delimited JSON: one header record, then one record per epoch.
  std::optional<std::filesystem::path> trace;
  /// Replaces the measured validation error (test hook).
  std::function<double(int epoch, double measured)> validation_override;
  std::function<void(const EpochRecord&)> on_epoch;
  /// Wall-clock seconds per epoch; when false they are recorded as 0 so that
  /// reruns produce bitwise identical traces.
  bool record_seconds = true;
};

/// Median relative L1 of eval-mode predictions, in batches.
double validation_error(const CnoModel& model, const Samples& data, int batch_size = 32);

/// Mini-batch L1 training with seeded shuffling and early stopping. On
/// return the model holds the state of the best validation epoch.
TrainReport train(CnoModel& model, const Samples& train_set, const Samples& val_set, const TrainConfig& config,
                  const TrainOptions& options = {});

/// Hyperparameter ranges. Each entry is a list of candidate values.
struct SearchSpace {
  std::vector<double> lr{1e-3};
  std::vector<double> lr_decay{0.98};
  std::vector<double> weight_decay{1e-6};
  std::vector<int> depth{3};
  std::vector<int> lift_channels{16};
  std::vector<int> n_res_bottleneck{4};
  std::vector<int> n_res_intermediate{1};
};

void to_json(nlohmann::json& j, const SearchSpace& s);
void from_json(const nlohmann::json& j, SearchSpace& s);

struct Trial {
  int index = 0;
  CnoConfig model;
  TrainConfig train;
  bool skipped = false;
  std::string note;
  double best_val_err = 0.0;
  int best_epoch = -1;
};

void to_json(nlohmann::json& j, const Trial& t);

struct SearchResult {
  std::vector<Trial> leaderboard;  // trained trials by best validation error, skipped ones last
  Trial best;
};

/// Trains one configuration exactly as random_search does for a trial.
Trial run_trial(Trial trial, const Samples& train_set, const Samples& val_set);

/// Draws `budget` distinct configurations (fewer when the space is smaller),
/// trains each from `base`/`base_train` with the sampled overrides and ranks
/// them. Configurations that fail validation are kept as skipped entries.
SearchResult random_search(const SearchSpace& space, int budget, const CnoConfig& base, const TrainConfig& base_train,
                           const Samples& train_set, const Samples& val_set, std::uint64_t seed);

}  // namespace cno
