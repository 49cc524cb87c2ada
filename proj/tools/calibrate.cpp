// Dev harness for sizing the toy-training experiments: measures per-example
// step cost, convergence, and the query-conditioning margin so test budgets
// are grounded in measurements instead of guesses. Not wired into ctest.
#include <chrono>
#include <cstdint>
#include <cstdio>
#include <map>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "mavlkit/data_io.hpp"
#include "mavlkit/eval.hpp"
#include "mavlkit/train.hpp"

using namespace mavlkit;
using Clock = std::chrono::steady_clock;

namespace {

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

int64_t param_count(const std::map<std::string, Tensor>& params) {
  int64_t total = 0;
  for (const auto& [name, value] : params) total += value.numel();
  return total;
}

struct SplitData {
  SyntheticDataset ds;
  std::vector<TrainExample> train_examples;
  std::vector<int> val_indices;  // into ds.images
  std::vector<GroundTruthBox> val_gt;
};

SplitData make_split(int train_count, int val_count, uint64_t seed,
                     int min_shapes, int max_shapes, double p_small,
                     double p_large) {
  SyntheticSpec spec;
  spec.count = train_count + val_count;
  spec.seed = seed;
  spec.min_shapes = min_shapes;
  spec.max_shapes = max_shapes;
  spec.p_small = p_small;
  spec.p_large = p_large;
  SplitData out;
  out.ds = gen_synthetic_dataset(spec);
  std::vector<CaptionGroup> train_groups;
  for (const auto& g : out.ds.groups) {
    if (g.image_id <= train_count) train_groups.push_back(g);
  }
  out.train_examples =
      examples_from_groups(train_groups, out.ds.dataset.images);
  for (int i = train_count; i < spec.count; ++i) out.val_indices.push_back(i);
  for (const auto& gt : out.ds.dataset.annotations) {
    if (gt.image_id > train_count) out.val_gt.push_back(gt);
  }
  return out;
}

std::vector<Detection> predict_split(const ModelConfig& mcfg,
                                     const std::map<std::string, Tensor>& params,
                                     const SplitData& data,
                                     const std::vector<int>& tokens) {
  std::vector<Detection> dets;
  for (int idx : data.val_indices) {
    auto d = predict(mcfg, params, data.ds.images[idx], tokens,
                     data.ds.dataset.images[idx].id);
    dets.insert(dets.end(), d.begin(), d.end());
  }
  return dets;
}

// Applies the per-image pooling protocol (score filter, NMS, top-n) to an
// already pooled detection list.
std::vector<Detection> postprocess_split(const std::vector<Detection>& dets,
                                         const EvalConfig& ecfg) {
  std::map<int64_t, std::vector<Detection>> by_image;
  for (const Detection& d : dets) by_image[d.image_id].push_back(d);
  std::vector<Detection> out;
  for (const auto& [id, group] : by_image) {
    auto kept = combine_query_detections({group}, ecfg);
    out.insert(out.end(), kept.begin(), kept.end());
  }
  return out;
}

std::vector<GroundTruthBox> small_only(const std::vector<GroundTruthBox>& gts,
                                       double image_area, double bound) {
  std::vector<GroundTruthBox> out;
  for (const auto& g : gts) {
    if (box_area(g.box) / image_area < bound) out.push_back(g);
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"toy training calibration"};
  std::string mode = "bench";
  int train_count = 200, val_count = 50, epochs = 4, channels = 32;
  int enc_layers = 1, dec_layers = 2, batch = 4;
  int min_shapes = 2, max_shapes = 5;
  double p_small = 0.34, p_large = 0.33;
  int msda_points = 4, queries = 24, fusion = 6;
  uint64_t seed = 1;
  double lr = 1e-3, lr_drop = 0.1;
  bool aux = false;
  std::string save_ckpt, eval_ckpt;
  app.add_option("--mode", mode, "bench | train | ablate");
  app.add_option("--train-count", train_count);
  app.add_option("--val-count", val_count);
  app.add_option("--epochs", epochs);
  app.add_option("--channels", channels);
  app.add_option("--enc", enc_layers);
  app.add_option("--dec", dec_layers);
  app.add_option("--queries", queries);
  app.add_option("--fusion", fusion);
  app.add_option("--points", msda_points);
  app.add_option("--batch", batch);
  app.add_option("--lr", lr);
  app.add_option("--lr-drop", lr_drop);
  app.add_flag("--aux", aux, "deep supervision on intermediate decoder layers");
  app.add_option("--seed", seed);
  app.add_option("--min-shapes", min_shapes);
  app.add_option("--max-shapes", max_shapes);
  app.add_option("--p-small", p_small);
  app.add_option("--p-large", p_large);
  app.add_option("--save-ckpt", save_ckpt, "write weights after training");
  app.add_option("--eval-ckpt", eval_ckpt, "load weights, skip training");
  CLI11_PARSE(app, argc, argv);

  ModelConfig mcfg;
  mcfg.channels = channels;
  mcfg.enc_layers = enc_layers;
  mcfg.dec_layers = dec_layers;
  mcfg.queries = queries;
  mcfg.fusion_blocks = fusion;
  mcfg.msda_points = msda_points;
  mcfg.decoder_aux_loss = aux;
  mcfg.seed = seed;

  TrainConfig tcfg;
  tcfg.epochs = epochs;
  tcfg.batch_size = batch;
  tcfg.lr = lr;
  tcfg.lr_drop = lr_drop;
  tcfg.seed = seed;

  if (mode == "bench") {
    SplitData data = make_split(8, 0, seed, min_shapes, max_shapes, p_small, p_large);
    auto params = model_init(mcfg);
    std::printf("params: %lld\n",
                static_cast<long long>(param_count(params)));
    // One throwaway pass warms allocators.
    TrainConfig one = tcfg;
    one.epochs = 1;
    auto warm = params;
    train_model(mcfg, one, data.ds.images, data.train_examples, &warm);
    const int reps = 3;
    auto t0 = Clock::now();
    for (int r = 0; r < reps; ++r) {
      auto p = params;
      train_model(mcfg, one, data.ds.images, data.train_examples, &p);
    }
    const double per_example =
        seconds_since(t0) / (reps * data.train_examples.size());
    std::printf("examples per epoch here: %zu\n", data.train_examples.size());
    std::printf("per-example fwd+bwd+step: %.1f ms\n", per_example * 1e3);
    return 0;
  }

  if (mode == "train") {
    auto t0 = Clock::now();
    SplitData data = make_split(train_count, val_count, seed, min_shapes, max_shapes, p_small, p_large);
    std::printf("gen: %.1fs, train examples: %zu, val gt: %zu\n",
                seconds_since(t0), data.train_examples.size(),
                data.val_gt.size());
    std::map<std::string, Tensor> params;
    if (!eval_ckpt.empty()) {
      load_checkpoint(eval_ckpt, &mcfg, &params);
      std::printf("loaded %s, training skipped\n", eval_ckpt.c_str());
    } else {
      params = model_init(mcfg);
      t0 = Clock::now();
      auto result =
          train_model(mcfg, tcfg, data.ds.images, data.train_examples, &params);
      const double train_s = seconds_since(t0);
      for (size_t e = 0; e < result.epochs.size(); ++e) {
        std::printf("epoch %zu: loss %.4f lr %.2g\n", e,
                    result.epochs[e].mean_loss, result.epochs[e].lr);
      }
      std::printf("train: %.1fs (%.1f ms/example)\n", train_s,
                  1e3 * train_s / (double(data.train_examples.size()) * epochs));
      if (!save_ckpt.empty()) save_checkpoint(save_ckpt, mcfg, params);
    }

    const int vocab = mcfg.vocab;
    t0 = Clock::now();
    auto all_dets =
        predict_split(mcfg, params, data, tokenize("ALL OBJECTS", vocab));
    auto small_dets =
        predict_split(mcfg, params, data, tokenize("SMALL OBJECTS", vocab));
    const double infer_s = seconds_since(t0);
    std::printf("infer: %.1fs\n", infer_s);

    // Raw pooled queries, then the evaluation protocol (per-image NMS at 0.5
    // and top-50), then the protocol with the 0.7 confidence bound added.
    EvalConfig raw;
    EvalConfig prot;
    EvalConfig conf = prot;
    conf.score_thresh = 0.7;
    const double image_area = double(mcfg.image_w) * mcfg.image_h;
    auto small_gt = small_only(data.val_gt, image_area, 0.05);
    std::printf("small gt: %zu of %zu\n", small_gt.size(), data.val_gt.size());
    for (const auto& [name, ecfg] : std::vector<std::pair<std::string, EvalConfig>>{
             {"raw", raw}, {"nms", prot}, {"nms+0.7", conf}}) {
      auto all_p = postprocess_split(all_dets, ecfg);
      auto small_p = postprocess_split(small_dets, ecfg);
      PRCurve pr = average_precision(all_p, data.val_gt, ecfg);
      const double rs = recall_at_n(small_p, small_gt, ecfg, 50);
      const double ra = recall_at_n(all_p, small_gt, ecfg, 50);
      std::printf(
          "[%s] ap50(ALL): %.4f tp=%lld fp=%lld | small|SMALL %.4f "
          "small|ALL %.4f margin %.4f\n",
          name.c_str(), pr.ap, static_cast<long long>(pr.tp),
          static_cast<long long>(pr.fp), rs, ra, rs - ra);
    }
    return 0;
  }

  if (mode == "ablate") {
    for (uint64_t s : {seed, seed + 1, seed + 2}) {
      SplitData data = make_split(train_count, val_count, s, min_shapes, max_shapes, p_small, p_large);
      // Setting 5 keeps the caption structure as generated.
      auto p5 = model_init(mcfg);
      TrainConfig t5 = tcfg;
      t5.seed = s;
      train_model(mcfg, t5, data.ds.images, data.train_examples, &p5);
      auto dets5 =
          predict_split(mcfg, p5, data, tokenize("ALL OBJECTS", mcfg.vocab));
      EvalConfig ecfg;
      const double ap5 = average_precision(dets5, data.val_gt, ecfg).ap;

      // Setting 1 erases it: one merged group per image, UNK query.
      std::vector<CaptionGroup> train_groups;
      for (const auto& g : data.ds.groups) {
        if (g.image_id <= train_count) train_groups.push_back(g);
      }
      auto merged = ablation_setting1_merge(train_groups);
      std::vector<CaptionGroup> merged_groups;
      for (const auto& [image_id, boxes] : merged) {
        CaptionGroup g;
        g.image_id = image_id;
        g.tokens = {0};
        g.targets = boxes;
        merged_groups.push_back(std::move(g));
      }
      auto merged_examples =
          examples_from_groups(merged_groups, data.ds.dataset.images);
      auto p1 = model_init(mcfg);
      TrainConfig t1 = tcfg;
      t1.seed = s;
      train_model(mcfg, t1, data.ds.images, merged_examples, &p1);
      auto dets1 = predict_split(mcfg, p1, data, {0});
      const double ap1 = average_precision(dets1, data.val_gt, ecfg).ap;
      std::printf("seed %llu: ap50 setting5=%.4f setting1=%.4f diff=%.4f\n",
                  static_cast<unsigned long long>(s), ap5, ap1, ap5 - ap1);
    }
    return 0;
  }

  std::fprintf(stderr, "unknown mode %s\n", mode.c_str());
  return 1;
}
