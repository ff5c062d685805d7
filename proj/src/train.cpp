#include "defu/train.hpp"

#include <cmath>
#include <numeric>

#include "defu/errors.hpp"

namespace defu {

void TrainConfig::validate() const {
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  if (max_epochs == 0) throw ConfigError("max_epochs must be positive");
  if (!(lr > 0)) throw ConfigError("lr must be positive");
  if (!(plateau_factor > 0 && plateau_factor < 1)) {
    throw ConfigError("plateau_factor must be in (0, 1)");
  }
  if (min_lr < 0) throw ConfigError("min_lr must be non-negative");
  if (!(threshold > 0 && threshold < 1)) {
    throw ConfigError("threshold must be in (0, 1)");
  }
  if (target_train_dice < 0 || target_train_dice > 1) {
    throw ConfigError("target_train_dice must be in [0, 1]");
  }
  augmentation.validate();
}

namespace {

std::span<const float> image_span(const Tensor& batch, std::size_t b) {
  const std::size_t plane = batch.shape().c * batch.shape().plane();
  return batch.data().subspan(b * plane, plane);
}

std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed,
                                     std::uint64_t epoch) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  data::Rng rng = data::sample_stream(seed, epoch, ~std::uint64_t{0});
  for (std::size_t i = n; i > 1; --i) {
    std::swap(order[i - 1], order[static_cast<std::size_t>(rng() % i)]);
  }
  return order;
}

}  // namespace

TrainResult train_model(Model& model, Adam<float>& optimizer,
                        std::span<const data::Sample> train,
                        std::span<const data::Sample> val,
                        const TrainConfig& config, std::uint64_t seed,
                        const EpochCallback& on_epoch) {
  config.validate();
  if (train.empty()) throw DataError("training set is empty");
  optimizer.set_lr(config.lr);
  PlateauScheduler scheduler(config.lr, config.plateau_factor,
                             config.plateau_patience, config.min_lr);
  EarlyStopper stopper(config.early_stop_patience);
  TrainResult result;
  result.stop_reason = "max_epochs";

  for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr = optimizer.lr();

    const auto order = epoch_order(train.size(), seed, epoch);
    std::vector<MetricsReport> seen;
    double loss_sum = 0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      std::vector<data::Sample> batch;
      for (std::size_t k = start; k < end; ++k) {
        const std::size_t idx = order[k];
        if (config.augment) {
          data::Rng rng = data::sample_stream(seed, epoch, idx);
          batch.push_back(data::augment(train[idx], rng, config.augmentation));
        } else {
          batch.push_back(train[idx]);
        }
      }
      std::vector<std::size_t> all(batch.size());
      std::iota(all.begin(), all.end(), 0);
      Tensor images, masks;
      data::make_batch(batch, all, images, masks);

      ad::Tape<float> tape;
      const auto probs = model.forward(tape, tape.constant(images), Mode::Train);
      const auto loss = ad::dice_loss(probs, masks);
      const double value = loss.value().item();
      if (!std::isfinite(value)) {
        throw NumericError("non-finite loss at epoch " + std::to_string(epoch) +
                           ", batch " + std::to_string(batches + 1));
      }
      const auto grads = tape.backward(loss);
      const auto params = model.parameters();
      optimizer.step(params, grads);

      loss_sum += value;
      ++batches;
      for (std::size_t b = 0; b < batch.size(); ++b) {
        seen.push_back(evaluate_pixels(image_span(masks, b),
                                       image_span(probs.value(), b),
                                       config.threshold));
      }
    }
    rec.train_loss = loss_sum / static_cast<double>(batches);
    rec.train = mean_report(seen);
    rec.monitored = rec.train_loss;

    if (!val.empty()) {
      const Evaluation ev =
          evaluate_model(model, val, config.threshold, config.batch_size);
      rec.has_val = true;
      rec.val = ev.summary;
      rec.val_loss = ev.summary.dice_loss;
      rec.monitored = rec.val_loss;
    }
    if (!std::isfinite(rec.monitored)) {
      throw NumericError("monitored loss is not finite at epoch " +
                         std::to_string(epoch));
    }

    optimizer.set_lr(scheduler.update(rec.monitored));
    const bool stop = stopper.update(rec.monitored);
    rec.improved = scheduler.last_improved();
    if (rec.improved) {
      result.best_epoch = epoch;
      result.best_monitored = rec.monitored;
    }
    result.history.push_back(rec);
    if (on_epoch) on_epoch(rec);

    if (config.target_train_dice > 0 && rec.train.dice >= config.target_train_dice) {
      result.stop_reason = "target_dice";
      break;
    }
    if (config.early_stopping && stop) {
      result.stop_reason = "early_stopping";
      break;
    }
  }
  return result;
}

Evaluation evaluate_predictions(std::span<const data::Sample> samples,
                                std::span<const Tensor> probabilities,
                                double threshold, AucMode auc_mode) {
  if (samples.size() != probabilities.size()) {
    throw ContractError("one probability map per sample is required");
  }
  Evaluation ev;
  std::vector<float> pooled_gt, pooled_p;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const Tensor& p = probabilities[i];
    if (p.shape() != samples[i].mask.shape()) {
      throw DimensionError("prediction for '" + samples[i].id + "' is " +
                           to_string(p.shape()) + ", mask is " +
                           to_string(samples[i].mask.shape()));
    }
    ev.ids.push_back(samples[i].id);
    ev.per_image.push_back(
        evaluate_pixels(samples[i].mask.data(), p.data(), threshold));
    if (auc_mode == AucMode::Pooled) {
      pooled_gt.insert(pooled_gt.end(), samples[i].mask.data().begin(),
                       samples[i].mask.data().end());
      pooled_p.insert(pooled_p.end(), p.data().begin(), p.data().end());
    }
  }
  ev.summary = mean_report(ev.per_image);
  if (auc_mode == AucMode::Pooled && !samples.empty()) {
    ev.summary.auc = auc_roc<float>(pooled_gt, pooled_p);
  }
  return ev;
}

Evaluation evaluate_model(Model& model, std::span<const data::Sample> samples,
                          double threshold, std::size_t batch_size,
                          AucMode auc_mode) {
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  std::vector<Tensor> probs;
  for (std::size_t start = 0; start < samples.size(); start += batch_size) {
    const std::size_t end = std::min(samples.size(), start + batch_size);
    std::vector<std::size_t> idx(end - start);
    std::iota(idx.begin(), idx.end(), start);
    Tensor images, masks;
    data::make_batch(samples, idx, images, masks);
    const Tensor out = model.predict(images);
    for (std::size_t b = 0; b < idx.size(); ++b) {
      probs.push_back(slice_batch(out, b, 1));
    }
  }
  return evaluate_predictions(samples, probs, threshold, auc_mode);
}

}  // namespace defu
