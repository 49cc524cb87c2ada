#include "mavlkit/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace mavlkit {

void validate_train_config(const TrainConfig& cfg) {
  if (cfg.epochs < 1) throw ConfigError("epochs must be >= 1");
  if (cfg.batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (!(cfg.lr > 0)) throw ConfigError("lr must be positive");
  if (cfg.beta1 < 0 || cfg.beta1 >= 1 || cfg.beta2 < 0 || cfg.beta2 >= 1) {
    throw ConfigError("Adam betas must be in [0,1)");
  }
  if (!(cfg.adam_eps > 0)) throw ConfigError("adam_eps must be positive");
  if (!(cfg.lr_drop > 0) || cfg.lr_drop > 1) {
    throw ConfigError("lr_drop must be in (0,1]");
  }
  if (cfg.clip_norm < 0) throw ConfigError("clip_norm must be >= 0");
}

TargetBox to_target(const Box& b, int image_w, int image_h) {
  TargetBox tb;
  tb.cx = (b.x_min + b.x_max) * 0.5 / image_w;
  tb.cy = (b.y_min + b.y_max) * 0.5 / image_h;
  tb.w = (b.x_max - b.x_min) / image_w;
  tb.h = (b.y_max - b.y_min) / image_h;
  return tb;
}

std::vector<TrainExample> examples_from_groups(
    const std::vector<CaptionGroup>& groups,
    const std::vector<DatasetImage>& images) {
  std::map<int64_t, int> index_of;
  for (size_t i = 0; i < images.size(); ++i) {
    index_of[images[i].id] = static_cast<int>(i);
  }
  std::vector<TrainExample> out;
  out.reserve(groups.size());
  for (const auto& g : groups) {
    auto it = index_of.find(g.image_id);
    if (it == index_of.end()) {
      throw ValidationError("caption group references image id " +
                            std::to_string(g.image_id) +
                            " missing from the image table");
    }
    if (g.tokens.empty()) {
      throw ValidationError("caption group for image " +
                            std::to_string(g.image_id) + " has no tokens");
    }
    if (g.targets.empty()) {
      throw ValidationError("caption group for image " +
                            std::to_string(g.image_id) + " has no targets");
    }
    TrainExample ex;
    ex.image_index = it->second;
    ex.tokens = g.tokens;
    ex.targets = g.targets;
    out.push_back(std::move(ex));
  }
  return out;
}

TrainResult train_model(const ModelConfig& mcfg, const TrainConfig& tcfg,
                        const std::vector<Tensor>& images,
                        const std::vector<TrainExample>& examples,
                        std::map<std::string, Tensor>* params) {
  validate_config(mcfg);
  validate_train_config(tcfg);
  if (examples.empty()) throw ValidationError("no training examples");
  for (const auto& ex : examples) {
    if (ex.image_index < 0 ||
        ex.image_index >= static_cast<int>(images.size())) {
      throw ValidationError("example image_index out of range");
    }
    if (ex.tokens.empty()) throw ValidationError("example has no tokens");
    if (ex.targets.empty()) throw ValidationError("example has no targets");
  }

  std::map<std::string, Tensor> m_state, v_state;
  for (const auto& [name, value] : *params) {
    m_state.emplace(name, Tensor::zeros(value.shape));
    v_state.emplace(name, Tensor::zeros(value.shape));
  }

  const Rng master(tcfg.seed);
  const int drop_epoch =
      tcfg.lr_drop < 1.0
          ? std::max(1, static_cast<int>(0.8 * tcfg.epochs))
          : tcfg.epochs;
  std::vector<size_t> order(examples.size());
  std::iota(order.begin(), order.end(), size_t{0});

  TrainResult result;
  int64_t adam_t = 0;
  for (int epoch = 0; epoch < tcfg.epochs; ++epoch) {
    const double lr = epoch >= drop_epoch ? tcfg.lr * tcfg.lr_drop : tcfg.lr;
    Rng shuffle_rng = master.fork(static_cast<uint64_t>(epoch));
    for (size_t i = order.size() - 1; i > 0; --i) {
      std::swap(order[i],
                order[shuffle_rng.uniform_int(static_cast<int>(i) + 1)]);
    }

    double loss_sum = 0;
    size_t cursor = 0;
    while (cursor < order.size()) {
      const size_t batch_end =
          std::min(order.size(), cursor + static_cast<size_t>(tcfg.batch_size));
      const double inv_batch = 1.0 / static_cast<double>(batch_end - cursor);
      std::map<std::string, Tensor> grad_acc;
      for (; cursor < batch_end; ++cursor) {
        const TrainExample& ex = examples[order[cursor]];
        GradTape tape;
        ParamVars pv = leaf_params(tape, *params);
        std::vector<DetectionSetVar> outputs =
            model_forward(tape, mcfg, pv, images[ex.image_index], ex.tokens);
        std::vector<TargetBox> targets;
        targets.reserve(ex.targets.size());
        for (const Box& b : ex.targets) {
          targets.push_back(to_target(b, mcfg.image_w, mcfg.image_h));
        }
        const VarId loss = set_loss(tape, outputs, targets, tcfg.weights);
        loss_sum += tape.val(loss).data[0];
        tape.backward(loss);
        for (const auto& [name, vid] : pv) {
          if (!tape.has_grad(vid)) continue;
          const Tensor& g = tape.grad(vid);
          auto [it, inserted] = grad_acc.try_emplace(name, Tensor::zeros(g.shape));
          for (size_t k = 0; k < g.data.size(); ++k) {
            it->second.data[k] += inv_batch * g.data[k];
          }
        }
      }

      if (tcfg.clip_norm > 0) {
        double sq = 0;
        for (const auto& [name, g] : grad_acc) {
          for (double v : g.data) sq += v * v;
        }
        const double norm = std::sqrt(sq);
        if (norm > tcfg.clip_norm) {
          const double scale = tcfg.clip_norm / norm;
          for (auto& [name, g] : grad_acc) {
            for (double& v : g.data) v *= scale;
          }
        }
      }

      ++adam_t;
      const double bias1 = 1.0 - std::pow(tcfg.beta1, static_cast<double>(adam_t));
      const double bias2 = 1.0 - std::pow(tcfg.beta2, static_cast<double>(adam_t));
      for (const auto& [name, g] : grad_acc) {
        Tensor& m = m_state.at(name);
        Tensor& v = v_state.at(name);
        Tensor& p = params->at(name);
        for (size_t k = 0; k < g.data.size(); ++k) {
          m.data[k] = tcfg.beta1 * m.data[k] + (1 - tcfg.beta1) * g.data[k];
          v.data[k] =
              tcfg.beta2 * v.data[k] + (1 - tcfg.beta2) * g.data[k] * g.data[k];
          const double mhat = m.data[k] / bias1;
          const double vhat = v.data[k] / bias2;
          p.data[k] -= lr * mhat / (std::sqrt(vhat) + tcfg.adam_eps);
        }
      }
      ++result.steps;
    }
    EpochStats stats;
    stats.mean_loss = loss_sum / static_cast<double>(examples.size());
    stats.lr = lr;
    result.epochs.push_back(stats);
  }
  return result;
}

}  // namespace mavlkit
