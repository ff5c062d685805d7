#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "defu/data/dataset.hpp"
#include "defu/data/transforms.hpp"
#include "defu/metrics.hpp"
#include "defu/model.hpp"
#include "defu/optim.hpp"

namespace defu {

struct TrainConfig {
  std::size_t batch_size = 2;
  std::size_t max_epochs = 175;
  double lr = 1e-5;
  double plateau_factor = 0.2;
  std::size_t plateau_patience = 5;
  double min_lr = 0.0;
  bool early_stopping = true;
  std::size_t early_stop_patience = 5;
  bool augment = true;
  data::AugmentConfig augmentation;
  double threshold = 0.5;
  /// Stop as soon as an epoch's train dice reaches this value; 0 disables.
  double target_train_dice = 0.0;

  void validate() const;  // throws ConfigError
};

enum class AucMode { PerImage, Pooled };

struct EpochRecord {
  std::size_t epoch = 0;  ///< 1-based
  double lr = 0;          ///< learning rate used during the epoch
  double train_loss = 0;  ///< mean batch dice loss
  MetricsReport train;    ///< per-image means over the epoch's forward passes
  bool has_val = false;
  double val_loss = 0;    ///< mean per-image dice loss, eval mode
  MetricsReport val;
  double monitored = 0;   ///< val_loss, or train_loss without validation data
  bool improved = false;
};

struct TrainResult {
  std::vector<EpochRecord> history;
  std::size_t best_epoch = 0;
  double best_monitored = 0;
  std::string stop_reason;  ///< "max_epochs", "early_stopping", "target_dice"
};

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Sequential mini-batch training on dice loss. Throws NumericError when the
/// loss stops being finite.
TrainResult train_model(Model& model, Adam<float>& optimizer,
                        std::span<const data::Sample> train,
                        std::span<const data::Sample> val,
                        const TrainConfig& config, std::uint64_t seed,
                        const EpochCallback& on_epoch = {});

struct Evaluation {
  std::vector<std::string> ids;
  std::vector<MetricsReport> per_image;
  MetricsReport summary;  ///< mean of per_image (AUC pooled when requested)
};

/// Eval-mode inference over `samples` followed by per-image metrics.
Evaluation evaluate_model(Model& model, std::span<const data::Sample> samples,
                          double threshold = 0.5, std::size_t batch_size = 2,
                          AucMode auc_mode = AucMode::PerImage);

/// Same metrics for precomputed probability maps, one per sample.
Evaluation evaluate_predictions(std::span<const data::Sample> samples,
                                std::span<const Tensor> probabilities,
                                double threshold = 0.5,
                                AucMode auc_mode = AucMode::PerImage);

}  // namespace defu
