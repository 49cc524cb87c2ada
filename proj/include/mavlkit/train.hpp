#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "mavlkit/data_io.hpp"
#include "mavlkit/matching.hpp"
#include "mavlkit/model.hpp"

namespace mavlkit {

struct TrainConfig {
  int epochs = 8;
  // Examples whose gradients are averaged into one optimizer step.
  int batch_size = 4;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  // The learning rate is multiplied by lr_drop once, at the start of epoch
  // max(1, floor(0.8 * epochs)); 1.0 disables the schedule.
  double lr_drop = 0.1;
  // Global-norm gradient clip applied to the averaged batch gradient;
  // 0 disables.
  double clip_norm = 1.0;
  LossWeights weights;
  uint64_t seed = 1;
};

void validate_train_config(const TrainConfig& cfg);

// One supervision unit: an image, the conditioning tokens, and the boxes the
// query refers to. Targets are pixel corner boxes in the image frame; the
// trainer normalizes them.
struct TrainExample {
  int image_index = 0;
  std::vector<int> tokens;
  std::vector<Box> targets;
};

// Binds caption groups to positions in the image table. Throws when a group
// names an unknown image or arrives empty.
std::vector<TrainExample> examples_from_groups(
    const std::vector<CaptionGroup>& groups,
    const std::vector<DatasetImage>& images);

// Pixel corner box to the normalized center form the set loss consumes.
TargetBox to_target(const Box& b, int image_w, int image_h);

struct EpochStats {
  double mean_loss = 0;
  double lr = 0;
};

struct TrainResult {
  std::vector<EpochStats> epochs;
  int64_t steps = 0;
};

// Adam over deterministic per-epoch shuffles, updating *params in place.
// Single-threaded; identical inputs and seed give bit-identical parameters.
// Every fusion head output contributes to the loss of every example.
TrainResult train_model(const ModelConfig& mcfg, const TrainConfig& tcfg,
                        const std::vector<Tensor>& images,
                        const std::vector<TrainExample>& examples,
                        std::map<std::string, Tensor>* params);

}  // namespace mavlkit
