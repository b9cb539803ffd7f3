#pragma once

#include <functional>
#include <string>
#include <vector>

#include "json.hpp"

#include "aspan/errors.hpp"
#include "aspan/model.hpp"

namespace aspan {

struct TrainConfig {
  std::size_t epochs = 10;
  std::size_t batch_size = 4;
  double lr = 1e-3;
  std::size_t warmup_epochs = 1;
  std::size_t halving_period = 2;
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  double alpha = 0.25;  // flow loss weight
  std::uint64_t seed = 0;

  void validate() const;
};

nlohmann::json to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const nlohmann::json& j);

// Linear ramp over the warmup epochs (progress in [0, 1) within the epoch),
// then halved every halving_period epochs.
double learning_rate(const TrainConfig& c, std::size_t epoch, double progress);

class Adam {
 public:
  Adam(double beta1, double beta2, double eps) : beta1_(beta1), beta2_(beta2), eps_(eps) {}

  // Applies one update from the accumulated gradients scaled by grad_scale,
  // then clears them. Parameters are visited in the same order every call.
  void step(ModelWeights& w, double lr, double grad_scale);
  std::size_t steps() const { return t_; }

 private:
  double beta1_, beta2_, eps_;
  std::size_t t_ = 0;
  std::vector<Tensor> m_, v_;
};

struct EpochStats {
  std::size_t epoch = 0;
  double lr = 0;  // rate at the last step of the epoch
  double coarse = 0, fine = 0, flow = 0, total = 0;  // means over pairs
  std::size_t pairs = 0;
};

nlohmann::json to_json(const EpochStats& s);

// Thrown when a loss or gradient turns non-finite; names the pairs in the batch.
class TrainingDiverged : public NumericError {
 public:
  TrainingDiverged(const std::string& what, std::vector<std::uint64_t> seeds, std::size_t epoch, std::size_t step)
      : NumericError(what), batch_seeds(std::move(seeds)), epoch(epoch), step(step) {}
  std::vector<std::uint64_t> batch_seeds;
  std::size_t epoch, step;
};

using EpochCallback = std::function<void(const EpochStats&)>;

std::vector<EpochStats> train_model(ModelWeights& w, const ModelConfig& mc, const TrainConfig& tc,
                                    const std::vector<SynthPair>& data, const EpochCallback& on_epoch = {});

}  // namespace aspan
