// Command-line front end. Every subcommand reads its inputs, does the work
// through the library, and prints a JSON report followed by a short table to
// standard output; artifact outputs (detections, datasets, checkpoints) go
// to paths named by flags. Runs are deterministic functions of their flags:
// no wall clock, no OS entropy, and thread count never changes output.

#include <atomic>
#include <cinttypes>
#include <cstdarg>
#include <cstdint>
#include <cstdio>
#include <exception>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "mavlkit/data_io.hpp"
#include "mavlkit/eval.hpp"
#include "mavlkit/geometry.hpp"
#include "mavlkit/mask2box.hpp"
#include "mavlkit/matching.hpp"
#include "mavlkit/model.hpp"
#include "mavlkit/msda.hpp"
#include "mavlkit/nn.hpp"
#include "mavlkit/oracles.hpp"
#include "mavlkit/pgm.hpp"
#include "mavlkit/pseudo_label.hpp"
#include "mavlkit/tape.hpp"
#include "mavlkit/train.hpp"

namespace {

using json = nlohmann::json;
using namespace mavlkit;

constexpr const char* kToolkitVersion = "0.1.0";

// Exit codes promised by the interface.
constexpr int kOk = 0;
constexpr int kUsageError = 1;
constexpr int kInternalError = 2;

void emit_report(const json& report, const std::vector<std::string>& table) {
  std::string blob = report.dump(2);
  blob += "\n";
  std::fwrite(blob.data(), 1, blob.size(), stdout);
  if (!table.empty()) {
    std::fputc('\n', stdout);
    for (const std::string& line : table) {
      std::fwrite(line.data(), 1, line.size(), stdout);
      std::fputc('\n', stdout);
    }
  }
  std::fflush(stdout);
}

std::string fmt(const char* format, ...) {
  char buf[256];
  va_list args;
  va_start(args, format);
  std::vsnprintf(buf, sizeof buf, format, args);
  va_end(args);
  return buf;
}

// Indices are claimed off a shared counter, results land in caller-owned
// slots keyed by index, so scheduling never shows up in the output. The
// first exception thrown by a worker is re-thrown on the calling thread.
void parallel_for(int n, int threads, const std::function<void(int)>& fn) {
  threads = std::max(1, std::min(threads, n));
  if (threads <= 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::mutex mu;
  std::exception_ptr first_error;
  auto worker = [&] {
    for (int i = next++; i < n; i = next++) {
      try {
        fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(mu);
        if (!first_error) first_error = std::current_exception();
        return;
      }
    }
  };
  std::vector<std::thread> pool;
  pool.reserve(threads);
  for (int w = 0; w < threads; ++w) pool.emplace_back(worker);
  for (std::thread& th : pool) th.join();
  if (first_error) std::rethrow_exception(first_error);
}

json eval_config_json(const EvalConfig& cfg) {
  json j;
  j["iou_thresh"] = cfg.iou_thresh;
  j["top_n"] = cfg.top_n;
  j["score_thresh"] =
      cfg.score_thresh ? json(*cfg.score_thresh) : json(nullptr);
  j["nms_thresh"] = cfg.nms_thresh;
  j["eleven_point_ap"] = cfg.eleven_point_ap;
  j["per_image_recall"] = cfg.per_image_recall;
  return j;
}

json model_config_json(const ModelConfig& cfg) {
  json j;
  j["image_h"] = cfg.image_h;
  j["image_w"] = cfg.image_w;
  j["in_channels"] = cfg.in_channels;
  j["strides"] = cfg.strides;
  j["channels"] = cfg.channels;
  j["enc_layers"] = cfg.enc_layers;
  j["dec_layers"] = cfg.dec_layers;
  j["queries"] = cfg.queries;
  j["fusion_blocks"] = cfg.fusion_blocks;
  j["vocab"] = cfg.vocab;
  j["max_tokens"] = cfg.max_tokens;
  j["msda_heads"] = cfg.msda_heads;
  j["msda_points"] = cfg.msda_points;
  j["sa_heads"] = cfg.sa_heads;
  j["ffn_mult"] = cfg.ffn_mult;
  j["decoder_aux_loss"] = cfg.decoder_aux_loss;
  j["seed"] = cfg.seed;
  return j;
}

std::map<int64_t, std::vector<Detection>> dets_by_image(
    const std::vector<Detection>& dets) {
  std::map<int64_t, std::vector<Detection>> out;
  for (const Detection& d : dets) out[d.image_id].push_back(d);
  return out;
}

std::map<int64_t, std::vector<GroundTruthBox>> gts_by_image(
    const std::vector<GroundTruthBox>& gts) {
  std::map<int64_t, std::vector<GroundTruthBox>> out;
  for (const GroundTruthBox& g : gts) out[g.image_id].push_back(g);
  return out;
}

// ---------------------------------------------------------------------------
// eval

struct EvalArgs {
  std::string gt_path, dets_path;
  EvalConfig cfg;
  SizeBuckets buckets;
  bool include_curve = false;
  int threads = 1;
  uint64_t seed = 1;
};

int run_eval(const EvalArgs& a) {
  validate_eval_config(a.cfg);
  validate_size_buckets(a.buckets);
  Dataset gt = load_ground_truth(a.gt_path);
  std::vector<Detection> dets = load_proposals(a.dets_path);

  std::set<int64_t> image_ids;
  std::map<int64_t, ImageSize> sizes;
  for (const DatasetImage& im : gt.images) {
    image_ids.insert(im.id);
    sizes[im.id] = {im.width, im.height};
  }
  for (const Detection& d : dets) {
    if (!image_ids.count(d.image_id))
      throw ValidationError("detection references image " +
                            std::to_string(d.image_id) +
                            " absent from the ground truth");
  }

  // The per-image pass does the matching work in parallel; the dataset
  // metrics below are pure functions of the full lists and see no threads.
  auto det_groups = dets_by_image(dets);
  auto gt_groups = gts_by_image(gt.annotations);
  std::vector<int64_t> ordered_ids(image_ids.begin(), image_ids.end());
  struct PerImage {
    int64_t dets = 0, gts = 0, tp = 0;
  };
  std::vector<PerImage> rows(ordered_ids.size());
  parallel_for(static_cast<int>(ordered_ids.size()), a.threads, [&](int i) {
    const int64_t id = ordered_ids[i];
    static const std::vector<Detection> no_dets;
    static const std::vector<GroundTruthBox> no_gts;
    auto dit = det_groups.find(id);
    auto git = gt_groups.find(id);
    const auto& di = dit == det_groups.end() ? no_dets : dit->second;
    const auto& gi = git == gt_groups.end() ? no_gts : git->second;
    MatchResult m = greedy_match(di, gi, a.cfg.iou_thresh);
    PerImage row;
    row.dets = static_cast<int64_t>(di.size());
    row.gts = static_cast<int64_t>(gi.size());
    for (char f : m.is_tp) row.tp += f != 0;
    rows[i] = row;
  });

  PRCurve pr = average_precision(dets, gt.annotations, a.cfg);
  const double r_top = recall_at_n(dets, gt.annotations, a.cfg, a.cfg.top_n);
  const std::vector<int> ns = {1, 5, 10, 20, 50, 100};
  auto curve = recall_curve(dets, gt.annotations, a.cfg, ns);
  SizeBucketRecall br =
      size_bucket_recall(dets, gt.annotations, sizes, a.cfg, a.buckets);
  auto per_cat = recall_by_category(dets, gt.annotations, a.cfg);

  json report;
  report["command"] = "eval";
  report["version"] = kToolkitVersion;
  report["seed"] = a.seed;
  report["config"] = eval_config_json(a.cfg);
  report["config"]["buckets"] = {{"small_bound", a.buckets.small_bound},
                                 {"large_bound", a.buckets.large_bound}};
  report["inputs"] = {{"gt", a.gt_path}, {"dets", a.dets_path}};
  report["counts"] = {{"images", gt.images.size()},
                      {"annotations", gt.annotations.size()},
                      {"dropped_crowd", gt.dropped_crowd},
                      {"detections", dets.size()}};
  report["ap50"] = pr.ap;
  report["r50"] = r_top;
  report["tp"] = pr.tp;
  report["fp"] = pr.fp;
  report["gt"] = pr.gt;
  json rc = json::array();
  for (const auto& [n, r] : curve) rc.push_back({{"n", n}, {"recall", r}});
  report["recall_curve"] = rc;
  report["buckets"] = {
      {"small", {{"recall", br.small}, {"gt", br.small_gt}}},
      {"medium", {{"recall", br.medium}, {"gt", br.medium_gt}}},
      {"large", {{"recall", br.large}, {"gt", br.large_gt}}}};
  json cats = json::array();
  for (const auto& [cat_id, recall] : per_cat) {
    json row;
    row["category_id"] = cat_id;
    auto it = gt.categories.find(cat_id);
    if (it != gt.categories.end()) row["name"] = it->second;
    row["recall"] = recall;
    cats.push_back(row);
  }
  report["per_category"] = cats;
  json per_image = json::array();
  for (size_t i = 0; i < ordered_ids.size(); ++i)
    per_image.push_back({{"image_id", ordered_ids[i]},
                         {"dets", rows[i].dets},
                         {"gt", rows[i].gts},
                         {"tp", rows[i].tp}});
  report["per_image"] = per_image;
  if (a.include_curve) {
    json pts = json::array();
    for (const PrPoint& p : pr.points)
      pts.push_back({{"recall", p.recall}, {"precision", p.precision}});
    report["pr_curve"] = pts;
  }

  std::vector<std::string> table;
  table.push_back(fmt("ap50      %.4f", pr.ap));
  table.push_back(fmt("r50       %.4f", r_top));
  table.push_back(fmt("tp/fp/gt  %" PRId64 "/%" PRId64 "/%" PRId64, pr.tp,
                      pr.fp, pr.gt));
  table.push_back(fmt("small     %.4f over %" PRId64, br.small, br.small_gt));
  table.push_back(fmt("medium    %.4f over %" PRId64, br.medium, br.medium_gt));
  table.push_back(fmt("large     %.4f over %" PRId64, br.large, br.large_gt));
  emit_report(report, table);
  return kOk;
}

// ---------------------------------------------------------------------------
// combine

struct CombineArgs {
  std::vector<std::string> det_paths;
  std::string out_path;
  EvalConfig cfg;
  uint64_t seed = 1;
};

int run_combine(const CombineArgs& a) {
  validate_eval_config(a.cfg);
  std::vector<std::vector<Detection>> sources;
  for (const std::string& path : a.det_paths)
    sources.push_back(load_proposals(path));

  std::set<int64_t> ids;
  std::vector<std::map<int64_t, std::vector<Detection>>> grouped;
  for (const auto& src : sources) {
    grouped.push_back(dets_by_image(src));
    for (const auto& [id, group] : grouped.back()) ids.insert(id);
  }

  std::vector<Detection> combined;
  for (int64_t id : ids) {
    std::vector<std::vector<Detection>> per_source;
    for (auto& g : grouped) {
      auto it = g.find(id);
      per_source.push_back(it == g.end() ? std::vector<Detection>{}
                                         : it->second);
    }
    auto kept = combine_query_detections(per_source, a.cfg);
    combined.insert(combined.end(), kept.begin(), kept.end());
  }
  save_detections(a.out_path, combined);

  json report;
  report["command"] = "combine";
  report["version"] = kToolkitVersion;
  report["seed"] = a.seed;
  report["config"] = eval_config_json(a.cfg);
  report["inputs"] = a.det_paths;
  report["output"] = a.out_path;
  json counts = json::array();
  for (const auto& src : sources) counts.push_back(src.size());
  report["source_counts"] = counts;
  report["images"] = ids.size();
  report["kept"] = combined.size();

  std::vector<std::string> table;
  for (size_t s = 0; s < sources.size(); ++s)
    table.push_back(fmt("source %zu  %zu detections", s, sources[s].size()));
  table.push_back(fmt("kept      %zu across %zu images", combined.size(),
                      ids.size()));
  emit_report(report, table);
  return kOk;
}

// ---------------------------------------------------------------------------
// infer

struct InferArgs {
  std::string checkpoint, manifest, query = "ALL OBJECTS", out_path;
  int tiles = 0;
  EvalConfig cfg;
  int threads = 1;
  uint64_t seed = 1;
};

int run_infer(const InferArgs& a) {
  validate_eval_config(a.cfg);
  ModelConfig mcfg;
  std::map<std::string, Tensor> params;
  load_checkpoint(a.checkpoint, &mcfg, &params);
  SyntheticDataset ds = load_synthetic_dataset(a.manifest);
  std::vector<int> tokens = tokenize(a.query, mcfg.vocab);
  if (tokens.empty())
    throw ValidationError("query text produced no tokens: \"" + a.query + "\"");

  const int n = static_cast<int>(ds.images.size());
  std::vector<std::vector<Detection>> per_image(n);
  parallel_for(n, a.threads, [&](int i) {
    const int64_t id = ds.dataset.images[i].id;
    if (a.tiles > 0) {
      Detector det = [&](const Tensor& crop) {
        return predict(mcfg, params, crop, tokens, id);
      };
      per_image[i] = tiled_inference(ds.images[i], det, a.tiles, a.cfg);
    } else {
      per_image[i] = combine_query_detections(
          {predict(mcfg, params, ds.images[i], tokens, id)}, a.cfg);
    }
  });

  std::vector<Detection> all;
  for (const auto& group : per_image)
    all.insert(all.end(), group.begin(), group.end());
  save_detections(a.out_path, all);

  json report;
  report["command"] = "infer";
  report["version"] = kToolkitVersion;
  report["seed"] = a.seed;
  report["config"] = eval_config_json(a.cfg);
  report["model"] = model_config_json(mcfg);
  report["inputs"] = {{"checkpoint", a.checkpoint}, {"manifest", a.manifest}};
  report["query"] = a.query;
  report["tokens"] = tokens;
  report["tiles"] = a.tiles;
  report["images"] = n;
  report["detections"] = all.size();
  report["output"] = a.out_path;

  std::vector<std::string> table;
  table.push_back(fmt("images      %d", n));
  table.push_back(fmt("detections  %zu", all.size()));
  emit_report(report, table);
  return kOk;
}

// ---------------------------------------------------------------------------
// pseudolabel

struct PseudoArgs {
  std::string proposals, gt_path, out_path;
  PseudoLabelConfig cfg;
  uint64_t seed = 1;
};

int run_pseudolabel(const PseudoArgs& a) {
  validate_pseudo_label_config(a.cfg);
  std::vector<Detection> proposals = load_proposals(a.proposals);
  Dataset gt = load_ground_truth(a.gt_path);

  auto prop_groups = dets_by_image(proposals);
  auto gt_groups = gts_by_image(gt.annotations);
  std::vector<Detection> kept;
  for (const auto& [id, group] : prop_groups) {
    static const std::vector<GroundTruthBox> none;
    auto it = gt_groups.find(id);
    auto labels = generate_unknown_pseudo_labels(
        group, it == gt_groups.end() ? none : it->second, a.cfg);
    // The filter leaves fields untouched; the tag is applied here at the
    // serialization boundary so downstream tooling can tell these apart
    // from ordinary query outputs.
    for (Detection& d : labels) d.source_query = "unknown";
    kept.insert(kept.end(), labels.begin(), labels.end());
  }
  save_detections(a.out_path, kept);

  json report;
  report["command"] = "pseudolabel";
  report["version"] = kToolkitVersion;
  report["seed"] = a.seed;
  report["config"] = {{"min_score", a.cfg.min_score},
                      {"max_known_iou", a.cfg.max_known_iou},
                      {"apply_nms", a.cfg.apply_nms},
                      {"nms_thresh", a.cfg.nms_thresh}};
  report["inputs"] = {{"proposals", a.proposals}, {"known_gt", a.gt_path}};
  report["output"] = a.out_path;
  report["proposals"] = proposals.size();
  report["known_boxes"] = gt.annotations.size();
  report["kept"] = kept.size();

  std::vector<std::string> table;
  table.push_back(fmt("proposals  %zu", proposals.size()));
  table.push_back(fmt("kept       %zu", kept.size()));
  emit_report(report, table);
  return kOk;
}

// ---------------------------------------------------------------------------
// mask2box

struct MaskArgs {
  std::string image, score_map, out_path;
  int connectivity = 8;
  int64_t min_area = 1;
  int64_t image_id = 0;
  uint64_t seed = 1;
};

int run_mask2box(const MaskArgs& a) {
  Tensor gray = read_pgm(a.image);
  BinaryMask mask = mask_from_gray(gray);
  Labeling labeling = connected_components(mask, a.connectivity);

  Tensor scores;
  const Tensor* score_map = nullptr;
  if (!a.score_map.empty()) {
    scores = read_pgm(a.score_map);
    if (scores.shape != gray.shape)
      throw ValidationError("score map " + scores.shape_str() +
                            " does not match mask " + gray.shape_str());
    // PGM gray levels become scores in [0,1].
    for (double& v : scores.data) v /= 255.0;
    score_map = &scores;
  }
  std::vector<Detection> dets =
      components_to_boxes(labeling, a.min_area, score_map);
  for (Detection& d : dets) d.image_id = a.image_id;
  save_detections(a.out_path, dets);

  int64_t fg = 0;
  for (uint8_t v : mask.fg) fg += v != 0;

  json report;
  report["command"] = "mask2box";
  report["version"] = kToolkitVersion;
  report["seed"] = a.seed;
  report["config"] = {{"connectivity", a.connectivity},
                      {"min_area", a.min_area},
                      {"image_id", a.image_id}};
  report["inputs"] = {{"image", a.image}};
  if (!a.score_map.empty()) report["inputs"]["score_map"] = a.score_map;
  report["output"] = a.out_path;
  report["size"] = {{"h", mask.h}, {"w", mask.w}};
  report["foreground_pixels"] = fg;
  report["components"] = labeling.components.size();
  report["boxes"] = dets.size();

  std::vector<std::string> table;
  table.push_back(fmt("foreground  %" PRId64 " px", fg));
  table.push_back(fmt("components  %zu", labeling.components.size()));
  table.push_back(fmt("boxes       %zu", dets.size()));
  emit_report(report, table);
  return kOk;
}

// ---------------------------------------------------------------------------
// gen-synth

struct GenArgs {
  std::string out_dir;
  SyntheticSpec spec;
};

int run_gen_synth(const GenArgs& a) {
  SyntheticDataset ds = gen_synthetic_dataset(a.spec);
  save_synthetic_dataset(a.out_dir, ds);

  json report;
  report["command"] = "gen-synth";
  report["version"] = kToolkitVersion;
  report["seed"] = a.spec.seed;
  report["config"] = {{"image_w", a.spec.image_w},
                      {"image_h", a.spec.image_h},
                      {"min_shapes", a.spec.min_shapes},
                      {"max_shapes", a.spec.max_shapes},
                      {"count", a.spec.count},
                      {"p_small", a.spec.p_small},
                      {"p_large", a.spec.p_large}};
  report["output"] = a.out_dir;
  report["images"] = ds.dataset.images.size();
  report["annotations"] = ds.dataset.annotations.size();
  report["groups"] = ds.groups.size();

  std::vector<std::string> table;
  table.push_back(fmt("images       %zu", ds.dataset.images.size()));
  table.push_back(fmt("annotations  %zu", ds.dataset.annotations.size()));
  table.push_back(fmt("groups       %zu", ds.groups.size()));
  emit_report(report, table);
  return kOk;
}

// ---------------------------------------------------------------------------
// ablate

struct AblateArgs {
  std::string manifest, out_dir;
  int setting = 1;
  double nms_thresh = 0.9;
  int group_size = 6;
  uint64_t seed = 1;
};

// Caption-free groups from per-image box lists, mirroring the UNK-token
// convention of the random regrouping transform.
std::vector<CaptionGroup> unk_groups(
    const std::map<int64_t, std::vector<Box>>& merged) {
  std::vector<CaptionGroup> out;
  for (const auto& [image_id, boxes] : merged) {
    if (boxes.empty()) continue;
    CaptionGroup g;
    g.image_id = image_id;
    g.tokens = {0};
    g.targets = boxes;
    out.push_back(std::move(g));
  }
  return out;
}

int run_ablate(const AblateArgs& a) {
  if (a.setting < 1 || a.setting > 3)
    throw ValidationError("setting must be 1, 2, or 3, got " +
                          std::to_string(a.setting));
  SyntheticDataset ds = load_synthetic_dataset(a.manifest);
  const size_t before = ds.groups.size();

  auto merged = ablation_setting1_merge(ds.groups);
  if (a.setting == 1) {
    ds.groups = unk_groups(merged);
  } else if (a.setting == 2) {
    ds.groups = unk_groups(ablation_setting2_nms(merged, a.nms_thresh));
  } else {
    ds.groups = ablation_setting3_group(
        ablation_setting2_nms(merged, a.nms_thresh), a.group_size, a.seed);
  }
  save_synthetic_dataset(a.out_dir, ds);

  json report;
  report["command"] = "ablate";
  report["version"] = kToolkitVersion;
  report["seed"] = a.seed;
  report["config"] = {{"setting", a.setting},
                      {"nms_thresh", a.nms_thresh},
                      {"group_size", a.group_size}};
  report["inputs"] = {{"manifest", a.manifest}};
  report["output"] = a.out_dir;
  report["groups_before"] = before;
  report["groups_after"] = ds.groups.size();

  std::vector<std::string> table;
  table.push_back(fmt("groups  %zu -> %zu", before, ds.groups.size()));
  emit_report(report, table);
  return kOk;
}

// ---------------------------------------------------------------------------
// train-toy

struct TrainToyArgs {
  std::string manifest;  // ingest when set, generate otherwise
  SyntheticSpec spec;
  int val_count = 50;
  std::string checkpoint;
  ModelConfig mcfg;
  TrainConfig tcfg;
  uint64_t seed = 1;
};

int run_train_toy(const TrainToyArgs& a) {
  validate_train_config(a.tcfg);
  SyntheticDataset ds = a.manifest.empty()
                            ? gen_synthetic_dataset(a.spec)
                            : load_synthetic_dataset(a.manifest);
  ModelConfig mcfg = a.mcfg;
  if (!a.manifest.empty() && !ds.dataset.images.empty()) {
    // Ingested data dictates the input geometry; mismatched images still
    // fail per image at forward time.
    mcfg.image_w = ds.dataset.images[0].width;
    mcfg.image_h = ds.dataset.images[0].height;
  }
  validate_config(mcfg);

  const int n = static_cast<int>(ds.dataset.images.size());
  if (a.val_count < 1 || a.val_count >= n)
    throw ValidationError("val count " + std::to_string(a.val_count) +
                          " must leave at least one training image of " +
                          std::to_string(n));
  // Last val_count images by table position are held out.
  const int train_n = n - a.val_count;
  std::set<int64_t> train_ids;
  for (int i = 0; i < train_n; ++i) train_ids.insert(ds.dataset.images[i].id);

  std::vector<CaptionGroup> train_groups;
  for (const CaptionGroup& g : ds.groups)
    if (train_ids.count(g.image_id)) train_groups.push_back(g);
  auto examples = examples_from_groups(train_groups, ds.dataset.images);

  auto params = model_init(mcfg);
  TrainResult result =
      train_model(mcfg, a.tcfg, ds.images, examples, &params);
  if (!a.checkpoint.empty()) save_checkpoint(a.checkpoint, mcfg, params);

  // Held-out metrics under the pooling protocol, for the ALL query and the
  // SMALL query against the small slice of the ground truth.
  EvalConfig ecfg;
  std::vector<GroundTruthBox> val_gt;
  for (const GroundTruthBox& g : ds.dataset.annotations)
    if (!train_ids.count(g.image_id)) val_gt.push_back(g);
  SizeBuckets buckets;
  const double image_area =
      static_cast<double>(mcfg.image_w) * mcfg.image_h;
  std::vector<GroundTruthBox> small_gt;
  for (const GroundTruthBox& g : val_gt)
    if (box_area(g.box) / image_area < buckets.small_bound)
      small_gt.push_back(g);

  auto pooled = [&](const std::string& text) {
    std::vector<int> tokens = tokenize(text, mcfg.vocab);
    std::vector<Detection> out;
    for (int i = train_n; i < n; ++i) {
      auto dets = combine_query_detections(
          {predict(mcfg, params, ds.images[i], tokens,
                   ds.dataset.images[i].id)},
          ecfg);
      out.insert(out.end(), dets.begin(), dets.end());
    }
    return out;
  };
  auto all_dets = pooled("ALL OBJECTS");
  auto small_dets = pooled("SMALL OBJECTS");
  PRCurve pr = average_precision(all_dets, val_gt, ecfg);
  const double r50 = recall_at_n(all_dets, val_gt, ecfg, ecfg.top_n);
  const double r_small_small = recall_at_n(small_dets, small_gt, ecfg, ecfg.top_n);
  const double r_small_all = recall_at_n(all_dets, small_gt, ecfg, ecfg.top_n);

  json report;
  report["command"] = "train-toy";
  report["version"] = kToolkitVersion;
  report["seed"] = a.seed;
  report["model"] = model_config_json(mcfg);
  report["train"] = {{"epochs", a.tcfg.epochs},
                     {"batch_size", a.tcfg.batch_size},
                     {"lr", a.tcfg.lr},
                     {"lr_drop", a.tcfg.lr_drop},
                     {"clip_norm", a.tcfg.clip_norm},
                     {"seed", a.tcfg.seed}};
  report["data"] = {{"source", a.manifest.empty() ? "generated" : a.manifest},
                    {"images", n},
                    {"train_images", train_n},
                    {"val_images", a.val_count},
                    {"train_examples", examples.size()},
                    {"val_gt", val_gt.size()},
                    {"val_small_gt", small_gt.size()}};
  json epochs = json::array();
  for (const EpochStats& e : result.epochs)
    epochs.push_back({{"mean_loss", e.mean_loss}, {"lr", e.lr}});
  report["epochs"] = epochs;
  report["steps"] = result.steps;
  report["metrics"] = {{"ap50", pr.ap},
                       {"r50", r50},
                       {"recall_small_with_small_query", r_small_small},
                       {"recall_small_with_all_query", r_small_all},
                       {"small_query_margin", r_small_small - r_small_all}};
  if (!a.checkpoint.empty()) report["checkpoint"] = a.checkpoint;

  std::vector<std::string> table;
  table.push_back(fmt("steps        %" PRId64, result.steps));
  table.push_back(fmt("final loss   %.4f",
                      result.epochs.empty() ? 0.0
                                            : result.epochs.back().mean_loss));
  table.push_back(fmt("ap50         %.4f", pr.ap));
  table.push_back(fmt("r50          %.4f", r50));
  table.push_back(fmt("small|SMALL  %.4f", r_small_small));
  table.push_back(fmt("small|ALL    %.4f", r_small_all));
  emit_report(report, table);
  return kOk;
}

// ---------------------------------------------------------------------------
// gradcheck

struct GradArgs {
  int seeds = 10;
  uint64_t seed = 1;
};

// Bound of every per-op check; the full-model check below gets the looser
// end-to-end bound.
constexpr double kOpTol = 1e-4;
constexpr double kEndToEndTol = 1e-3;

Tensor uniform_tensor(const std::vector<int>& shape, Rng& rng, double lo,
                      double hi) {
  Tensor t = Tensor::zeros(shape);
  for (double& v : t.data) v = rng.uniform(lo, hi);
  return t;
}

struct GradRow {
  std::string op;
  double max_err = 0;
  double tol = kOpTol;
};

std::vector<GradRow> run_gradcheck_suite(int seeds, uint64_t base_seed) {
  std::vector<GradRow> rows = {{"linear", 0, kOpTol},
                               {"softmax", 0, kOpTol},
                               {"layer_norm", 0, kOpTol},
                               {"self_attention_block", 0, kOpTol},
                               {"bilinear_sample", 0, kOpTol},
                               {"msda_forward", 0, kOpTol},
                               {"set_loss_end_to_end", 0, kEndToEndTol}};
  for (int s = 0; s < seeds; ++s) {
    const uint64_t ks = base_seed + static_cast<uint64_t>(s);
    Rng rng(ks * 7919 + 17);

    auto track = [&](size_t row, double err) {
      rows[row].max_err = std::max(rows[row].max_err, err);
    };

    track(0, grad_check(
                 [&](GradTape& t, const std::vector<VarId>& in) {
                   return reduce_with_cotangent(
                       t, linear(t, in[0], in[1], in[2]), ks);
                 },
                 {uniform_tensor({3, 4}, rng, -1, 1),
                  uniform_tensor({4, 5}, rng, -1, 1),
                  uniform_tensor({5}, rng, -1, 1)}));
    track(1, grad_check(
                 [&](GradTape& t, const std::vector<VarId>& in) {
                   return reduce_with_cotangent(t, softmax(t, in[0]), ks);
                 },
                 {uniform_tensor({4, 6}, rng, -2, 2)}));
    track(2, grad_check(
                 [&](GradTape& t, const std::vector<VarId>& in) {
                   return reduce_with_cotangent(
                       t, layer_norm(t, in[0], in[1], in[2]), ks);
                 },
                 {uniform_tensor({4, 6}, rng, -1, 1),
                  uniform_tensor({6}, rng, 0.5, 1.5),
                  uniform_tensor({6}, rng, -0.5, 0.5)}));

    {
      const int d = 8, heads = 2;
      std::vector<Tensor> inputs;
      inputs.push_back(uniform_tensor({5, d}, rng, -1, 1));  // tokens
      inputs.push_back(uniform_tensor({d}, rng, 0.5, 1.5));  // ln1 gamma
      inputs.push_back(uniform_tensor({d}, rng, -0.1, 0.1));
      for (int i = 0; i < 4; ++i) {  // q, k, v, out projections
        inputs.push_back(uniform_tensor({d, d}, rng, -0.5, 0.5));
        inputs.push_back(uniform_tensor({d}, rng, -0.1, 0.1));
      }
      inputs.push_back(uniform_tensor({d}, rng, 0.5, 1.5));  // ln2 gamma
      inputs.push_back(uniform_tensor({d}, rng, -0.1, 0.1));
      inputs.push_back(uniform_tensor({d, 2 * d}, rng, -0.5, 0.5));
      inputs.push_back(uniform_tensor({2 * d}, rng, -0.1, 0.1));
      inputs.push_back(uniform_tensor({2 * d, d}, rng, -0.5, 0.5));
      inputs.push_back(uniform_tensor({d}, rng, -0.1, 0.1));
      track(3, grad_check(
                   [&](GradTape& t, const std::vector<VarId>& in) {
                     SaBlockParams p{in[1],  in[2],  in[3],  in[4], in[5],
                                     in[6],  in[7],  in[8],  in[9], in[10],
                                     in[11], in[12], in[13], in[14], in[15],
                                     in[16]};
                     return reduce_with_cotangent(
                         t, self_attention_block(t, in[0], p, heads), ks);
                   },
                   std::move(inputs)));
    }

    {
      // Point away from pixel-center lines so central differences do not
      // straddle an interpolation cell boundary.
      Tensor point = Tensor::zeros({2});
      point.data[0] = 1.0 + rng.uniform(0.15, 0.85);
      point.data[1] = 0.0 + rng.uniform(0.15, 0.85);
      track(4, grad_check(
                   [&](GradTape& t, const std::vector<VarId>& in) {
                     return reduce_with_cotangent(
                         t, bilinear_sample(t, in[0], in[1]), ks);
                   },
                   {uniform_tensor({4, 5, 3}, rng, -1, 1), point}));
    }

    {
      const int d = 8, heads = 2, points = 2, q = 3;
      const int slots = heads * 2 * points;  // two pyramid levels
      std::vector<Tensor> inputs;
      inputs.push_back(uniform_tensor({q, d}, rng, -1, 1));    // queries
      Tensor refs = Tensor::zeros({q, 2});
      for (double& v : refs.data) v = rng.uniform(0.2, 0.8);
      inputs.push_back(refs);
      inputs.push_back(uniform_tensor({4, 4, d}, rng, -1, 1));  // level 0
      inputs.push_back(uniform_tensor({2, 2, d}, rng, -1, 1));  // level 1
      inputs.push_back(uniform_tensor({d, d}, rng, -0.5, 0.5));           // wv
      inputs.push_back(uniform_tensor({d}, rng, -0.1, 0.1));              // bv
      inputs.push_back(uniform_tensor({d, 2 * slots}, rng, -0.2, 0.2));   // w_off
      inputs.push_back(uniform_tensor({2 * slots}, rng, -0.3, 0.3));      // b_off
      inputs.push_back(uniform_tensor({d, slots}, rng, -0.5, 0.5));       // w_att
      inputs.push_back(uniform_tensor({slots}, rng, -0.5, 0.5));          // b_att
      inputs.push_back(uniform_tensor({d, d}, rng, -0.5, 0.5));           // wo
      inputs.push_back(uniform_tensor({d}, rng, -0.1, 0.1));              // bo
      track(5, grad_check(
                   [&](GradTape& t, const std::vector<VarId>& in) {
                     std::vector<PyramidLevelRef> pyramid = {{4, 4, in[2]},
                                                             {2, 2, in[3]}};
                     MsdaParams p{in[4], in[5], in[6],  in[7],
                                  in[8], in[9], in[10], in[11]};
                     return reduce_with_cotangent(
                         t,
                         msda_forward(t, in[0], in[1], pyramid, p, heads,
                                      points),
                         ks);
                   },
                   std::move(inputs)));
    }

    {
      // Whole model into the set loss. Initialization is jittered off its
      // symmetric starting point so finite differences never sit exactly on
      // a bilinear cell edge.
      ModelConfig cfg;
      cfg.image_h = cfg.image_w = 16;
      cfg.strides = {8, 16};
      cfg.channels = 8;
      cfg.enc_layers = 1;
      cfg.dec_layers = 1;
      cfg.queries = 3;
      cfg.fusion_blocks = 1;
      cfg.max_tokens = 4;
      cfg.msda_heads = 2;
      cfg.msda_points = 2;
      cfg.sa_heads = 2;
      cfg.ffn_mult = 1;
      cfg.seed = ks;
      auto init = model_init(cfg);
      std::vector<std::string> names;
      std::vector<Tensor> values;
      for (auto& [name, tensor] : init) {
        for (double& v : tensor.data) v += rng.uniform(-5e-3, 5e-3);
        names.push_back(name);
        values.push_back(tensor);
      }
      Tensor image = uniform_tensor({16, 16}, rng, 0, 255);
      std::vector<TargetBox> targets = {{0.3, 0.4, 0.25, 0.3},
                                        {0.7, 0.6, 0.2, 0.15}};
      track(6, grad_check(
                   [&](GradTape& t, const std::vector<VarId>& in) {
                     ParamVars p;
                     for (size_t i = 0; i < names.size(); ++i)
                       p[names[i]] = in[i];
                     auto sets = model_forward(t, cfg, p, image, {1, 2});
                     return set_loss(t, sets, targets, LossWeights{});
                   },
                   std::move(values), 1e-6));
    }
  }
  return rows;
}

int run_gradcheck(const GradArgs& a) {
  auto rows = run_gradcheck_suite(a.seeds, a.seed);
  bool all_pass = true;
  json ops = json::array();
  std::vector<std::string> table;
  for (const GradRow& r : rows) {
    const bool pass = r.max_err <= r.tol;
    all_pass = all_pass && pass;
    ops.push_back({{"op", r.op},
                   {"max_rel_err", r.max_err},
                   {"tol", r.tol},
                   {"pass", pass}});
    table.push_back(fmt("%-22s %.3e  tol %.0e  %s", r.op.c_str(), r.max_err,
                        r.tol, pass ? "PASS" : "FAIL"));
  }
  json report;
  report["command"] = "gradcheck";
  report["version"] = kToolkitVersion;
  report["seed"] = a.seed;
  report["config"] = {{"seeds", a.seeds}};
  report["ops"] = ops;
  report["pass"] = all_pass;
  emit_report(report, table);
  return all_pass ? kOk : kUsageError;
}

// ---------------------------------------------------------------------------
// oracle

struct OracleArgs {
  uint64_t seed = 1;
};

Box random_box(Rng& rng, double extent) {
  const double x = rng.uniform(0.0, extent), y = rng.uniform(0.0, extent);
  return {x, y, x + rng.uniform(1.0, extent / 2), y + rng.uniform(1.0, extent / 2)};
}

int run_oracle(const OracleArgs& a) {
  Rng rng(a.seed);
  json checks = json::array();
  std::vector<std::string> table;
  bool all_pass = true;

  auto add_check = [&](const std::string& name, int instances,
                       int64_t mismatches, double max_diff, double tol) {
    const bool pass = mismatches == 0 && max_diff <= tol;
    all_pass = all_pass && pass;
    checks.push_back({{"name", name},
                      {"instances", instances},
                      {"mismatches", mismatches},
                      {"max_diff", max_diff},
                      {"tol", tol},
                      {"pass", pass}});
    table.push_back(fmt("%-22s %4d instances  %s", name.c_str(), instances,
                        pass ? "PASS" : "FAIL"));
  };

  {
    int64_t bad = 0;
    const int instances = 200;
    for (int i = 0; i < instances; ++i) {
      const int m = 1 + static_cast<int>(rng.uniform_int(7));
      const int n = m + static_cast<int>(rng.uniform_int(8 - m));
      Tensor cost = Tensor::zeros({n, m});
      for (double& v : cost.data) v = rng.uniform(-5.0, 5.0);
      Assignment fast = hungarian(cost);
      std::vector<int> brute = oracle::hungarian_brute(cost);
      std::vector<int> pred_of_target(m, -1);
      for (const auto& [pred, target] : fast.pairs)
        pred_of_target[target] = pred;
      if (pred_of_target != brute) ++bad;
    }
    add_check("hungarian", instances, bad, 0.0, 0.0);
  }

  {
    int64_t bad = 0;
    const int instances = 500;
    for (int i = 0; i < instances; ++i) {
      const int k = 1 + static_cast<int>(rng.uniform_int(14));
      std::vector<Detection> dets;
      for (int d = 0; d < k; ++d) {
        Detection det;
        det.box = random_box(rng, 60.0);
        // Quantized scores force ties through the index tie-break.
        det.score = rng.uniform_int(5) / 4.0;
        dets.push_back(det);
      }
      auto fast = nms_class_agnostic(dets, 0.5);
      auto brute = oracle::nms_quadratic(dets, 0.5);
      if (fast.size() != brute.size()) {
        ++bad;
        continue;
      }
      for (size_t j = 0; j < fast.size(); ++j)
        if (fast[j].box.x_min != brute[j].box.x_min ||
            fast[j].box.y_min != brute[j].box.y_min ||
            fast[j].box.x_max != brute[j].box.x_max ||
            fast[j].box.y_max != brute[j].box.y_max ||
            fast[j].score != brute[j].score) {
          ++bad;
          break;
        }
    }
    add_check("nms", instances, bad, 0.0, 0.0);
  }

  {
    double max_diff = 0.0;
    const int instances = 100;
    EvalConfig ecfg;
    for (int i = 0; i < instances; ++i) {
      std::vector<GroundTruthBox> gts;
      const int g = 1 + static_cast<int>(rng.uniform_int(8));
      for (int j = 0; j < g; ++j) {
        GroundTruthBox gt;
        gt.image_id = static_cast<int64_t>(rng.uniform_int(2));
        gt.box = random_box(rng, 50.0);
        gts.push_back(gt);
      }
      std::vector<Detection> dets;
      const int k = static_cast<int>(rng.uniform_int(21));
      for (int j = 0; j < k; ++j) {
        Detection d;
        d.image_id = static_cast<int64_t>(rng.uniform_int(2));
        // Half the detections hug a ground-truth box so true positives occur.
        if (rng.uniform_int(2) == 0) {
          const GroundTruthBox& base = gts[rng.uniform_int(g)];
          d.image_id = base.image_id;
          d.box = base.box;
          d.box.x_max += rng.uniform(-2.0, 2.0);
          d.box.y_max += rng.uniform(-2.0, 2.0);
        } else {
          d.box = random_box(rng, 50.0);
        }
        d.score = rng.uniform(0.0, 1.0);
        dets.push_back(d);
      }
      const double fast = average_precision(dets, gts, ecfg).ap;
      const double brute = oracle::ap_brute(dets, gts, ecfg.iou_thresh);
      max_diff = std::max(max_diff, std::abs(fast - brute));
    }
    add_check("average_precision", instances, 0, max_diff, 1e-12);
  }

  {
    int64_t bad = 0;
    const int instances = 200;
    for (int i = 0; i < instances; ++i) {
      const int h = 1 + static_cast<int>(rng.uniform_int(64));
      const int w = 1 + static_cast<int>(rng.uniform_int(64));
      const double density = rng.uniform(0.2, 0.7);
      BinaryMask mask;
      mask.h = h;
      mask.w = w;
      mask.fg.resize(static_cast<size_t>(h) * w);
      for (auto& v : mask.fg) v = rng.uniform(0.0, 1.0) < density ? 1 : 0;
      const int connectivity = i % 2 == 0 ? 4 : 8;
      Labeling fast = connected_components(mask, connectivity);
      std::vector<int> brute = oracle::cc_brute(h, w, mask.fg, connectivity);
      if (fast.labels != brute) ++bad;
    }
    add_check("connected_components", instances, bad, 0.0, 0.0);
  }

  {
    double max_diff = 0.0;
    const int instances = 20;
    for (int i = 0; i < instances; ++i) {
      const int heads = 2, points = 2, d = 8, q = 4;
      oracle::MsdaOracleInput in;
      in.heads = heads;
      in.points = points;
      in.queries = uniform_tensor({q, d}, rng, -1, 1);
      in.refs = Tensor::zeros({q, 2});
      for (double& v : in.refs.data) v = rng.uniform(0.1, 0.9);
      in.levels = {uniform_tensor({5, 6, d}, rng, -1, 1),
                   uniform_tensor({3, 3, d}, rng, -1, 1)};
      const int slots = heads * 2 * points;
      in.wv = uniform_tensor({d, d}, rng, -0.5, 0.5);
      in.bv = uniform_tensor({d}, rng, -0.1, 0.1);
      in.w_off = uniform_tensor({d, 2 * slots}, rng, -0.2, 0.2);
      in.b_off = uniform_tensor({2 * slots}, rng, -0.3, 0.3);
      in.w_att = uniform_tensor({d, slots}, rng, -0.5, 0.5);
      in.b_att = uniform_tensor({slots}, rng, -0.5, 0.5);
      in.wo = uniform_tensor({d, d}, rng, -0.5, 0.5);
      in.bo = uniform_tensor({d}, rng, -0.1, 0.1);

      GradTape t;
      VarId queries = t.leaf(in.queries);
      VarId refs = t.leaf(in.refs);
      std::vector<PyramidLevelRef> pyramid = {
          {5, 6, t.leaf(in.levels[0])}, {3, 3, t.leaf(in.levels[1])}};
      MsdaParams p{t.leaf(in.wv),    t.leaf(in.bv),  t.leaf(in.w_off),
                   t.leaf(in.b_off), t.leaf(in.w_att), t.leaf(in.b_att),
                   t.leaf(in.wo),    t.leaf(in.bo)};
      const Tensor& fast =
          t.val(msda_forward(t, queries, refs, pyramid, p, heads, points));
      Tensor brute = oracle::msda_plain(in);
      for (int e = 0; e < fast.numel(); ++e)
        max_diff =
            std::max(max_diff, std::abs(fast.data[e] - brute.data[e]));
    }
    add_check("msda", instances, 0, max_diff, 1e-12);
  }

  json report;
  report["command"] = "oracle";
  report["version"] = kToolkitVersion;
  report["seed"] = a.seed;
  report["checks"] = checks;
  report["pass"] = all_pass;
  emit_report(report, table);
  return all_pass ? kOk : kUsageError;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"class-agnostic detection toolkit"};
  app.require_subcommand(1);

  EvalArgs ev;
  auto* eval_cmd = app.add_subcommand(
      "eval", "metrics for a detections file against ground truth");
  eval_cmd->add_option("--gt", ev.gt_path, "ground-truth JSON")->required();
  eval_cmd->add_option("--dets", ev.dets_path, "detections JSON")->required();
  eval_cmd->add_option("--iou", ev.cfg.iou_thresh, "match threshold");
  eval_cmd->add_option("--top-n", ev.cfg.top_n, "per-image recall depth");
  eval_cmd->add_flag("--eleven-point", ev.cfg.eleven_point_ap,
                     "11-point interpolated AP");
  eval_cmd->add_flag("--per-image-recall", ev.cfg.per_image_recall,
                     "average per-image recalls instead of pooling");
  eval_cmd->add_option("--small-bound", ev.buckets.small_bound);
  eval_cmd->add_option("--large-bound", ev.buckets.large_bound);
  eval_cmd->add_flag("--pr-curve", ev.include_curve,
                     "embed the full precision-recall curve");
  eval_cmd->add_option("--threads", ev.threads, "parallel per-image matching");
  eval_cmd->add_option("--seed", ev.seed);

  CombineArgs cb;
  double cb_score_thresh = 0.0;
  auto* combine_cmd = app.add_subcommand(
      "combine", "pool detection sources per image, suppress, keep top-n");
  combine_cmd->add_option("--dets", cb.det_paths, "detections JSON, repeatable")
      ->required();
  combine_cmd->add_option("--out", cb.out_path, "combined detections JSON")
      ->required();
  auto* cb_thresh_opt =
      combine_cmd->add_option("--score-thresh", cb_score_thresh,
                              "drop detections scoring below this first");
  combine_cmd->add_option("--nms", cb.cfg.nms_thresh, "suppression threshold");
  combine_cmd->add_option("--top-n", cb.cfg.top_n, "kept per image");
  combine_cmd->add_option("--seed", cb.seed);

  InferArgs in;
  double in_score_thresh = 0.0;
  auto* infer_cmd = app.add_subcommand(
      "infer", "run a checkpoint over a dataset manifest");
  infer_cmd->add_option("--checkpoint", in.checkpoint)->required();
  infer_cmd->add_option("--manifest", in.manifest, "dataset manifest JSON")
      ->required();
  infer_cmd->add_option("--out", in.out_path, "detections JSON")->required();
  infer_cmd->add_option("--query", in.query, "text query (default ALL OBJECTS)");
  infer_cmd->add_option("--tiles", in.tiles,
                        "split each image into this many crops");
  auto* in_thresh_opt =
      infer_cmd->add_option("--score-thresh", in_score_thresh);
  infer_cmd->add_option("--nms", in.cfg.nms_thresh);
  infer_cmd->add_option("--top-n", in.cfg.top_n);
  infer_cmd->add_option("--threads", in.threads, "parallel over images");
  infer_cmd->add_option("--seed", in.seed);

  PseudoArgs pl;
  auto* pseudo_cmd = app.add_subcommand(
      "pseudolabel", "confident proposals that match no known annotation");
  pseudo_cmd->add_option("--proposals", pl.proposals)->required();
  pseudo_cmd->add_option("--known-gt", pl.gt_path)->required();
  pseudo_cmd->add_option("--out", pl.out_path)->required();
  pseudo_cmd->add_option("--min-score", pl.cfg.min_score);
  pseudo_cmd->add_option("--max-known-iou", pl.cfg.max_known_iou);
  pseudo_cmd->add_flag("--nms", pl.cfg.apply_nms, "suppress survivors");
  pseudo_cmd->add_option("--nms-thresh", pl.cfg.nms_thresh);
  pseudo_cmd->add_option("--seed", pl.seed);

  MaskArgs mb;
  auto* mask_cmd = app.add_subcommand(
      "mask2box", "tight boxes from the components of a binarized image");
  mask_cmd->add_option("--image", mb.image, "grayscale PGM")->required();
  mask_cmd->add_option("--out", mb.out_path, "detections JSON")->required();
  mask_cmd->add_option("--connectivity", mb.connectivity, "4 or 8");
  mask_cmd->add_option("--min-area", mb.min_area, "component pixel floor");
  mask_cmd->add_option("--image-id", mb.image_id, "id stamped on outputs");
  mask_cmd->add_option("--score-map", mb.score_map,
                       "PGM whose mean gray becomes each box score");
  mask_cmd->add_option("--seed", mb.seed);

  GenArgs gs;
  auto* gen_cmd = app.add_subcommand(
      "gen-synth", "deterministic synthetic shapes dataset");
  gen_cmd->add_option("--out", gs.out_dir, "output directory")->required();
  gen_cmd->add_option("--count", gs.spec.count, "number of images");
  gen_cmd->add_option("--image-size", gs.spec.image_w,
                      "square image side length");
  gen_cmd->add_option("--min-shapes", gs.spec.min_shapes);
  gen_cmd->add_option("--max-shapes", gs.spec.max_shapes);
  gen_cmd->add_option("--p-small", gs.spec.p_small);
  gen_cmd->add_option("--p-large", gs.spec.p_large);
  gen_cmd->add_option("--seed", gs.spec.seed);

  AblateArgs ab;
  auto* ablate_cmd = app.add_subcommand(
      "ablate", "rewrite a dataset's caption groups per ablation setting");
  ablate_cmd->add_option("--manifest", ab.manifest)->required();
  ablate_cmd->add_option("--out", ab.out_dir, "output directory")->required();
  ablate_cmd->add_option("--setting", ab.setting, "1 merge, 2 +nms, 3 +regroup")
      ->required();
  ablate_cmd->add_option("--nms", ab.nms_thresh, "setting 2/3 threshold");
  ablate_cmd->add_option("--group-size", ab.group_size, "setting 3 chunk");
  ablate_cmd->add_option("--seed", ab.seed);

  TrainToyArgs tt;
  auto* train_cmd = app.add_subcommand(
      "train-toy", "generate or ingest data, train, report held-out metrics");
  train_cmd->add_option("--manifest", tt.manifest,
                        "ingest this dataset instead of generating");
  train_cmd->add_option("--count", tt.spec.count, "generated image count");
  train_cmd->add_option("--image-size", tt.spec.image_w);
  train_cmd->add_option("--min-shapes", tt.spec.min_shapes);
  train_cmd->add_option("--max-shapes", tt.spec.max_shapes);
  train_cmd->add_option("--val-count", tt.val_count, "held-out images");
  train_cmd->add_option("--checkpoint", tt.checkpoint, "save weights here");
  train_cmd->add_option("--epochs", tt.tcfg.epochs);
  train_cmd->add_option("--batch", tt.tcfg.batch_size);
  train_cmd->add_option("--lr", tt.tcfg.lr);
  train_cmd->add_option("--lr-drop", tt.tcfg.lr_drop);
  train_cmd->add_option("--clip-norm", tt.tcfg.clip_norm);
  train_cmd->add_option("--channels", tt.mcfg.channels);
  train_cmd->add_option("--enc-layers", tt.mcfg.enc_layers);
  train_cmd->add_option("--dec-layers", tt.mcfg.dec_layers);
  train_cmd->add_option("--queries", tt.mcfg.queries);
  train_cmd->add_option("--fusion-blocks", tt.mcfg.fusion_blocks);
  train_cmd->add_option("--msda-heads", tt.mcfg.msda_heads);
  train_cmd->add_option("--msda-points", tt.mcfg.msda_points);
  train_cmd->add_option("--sa-heads", tt.mcfg.sa_heads);
  train_cmd->add_flag("--aux", tt.mcfg.decoder_aux_loss,
                      "supervise intermediate decoder layers too");
  train_cmd->add_option("--seed", tt.seed);

  GradArgs gc;
  auto* grad_cmd = app.add_subcommand(
      "gradcheck", "finite-difference checks on every differentiable op");
  grad_cmd->add_option("--seeds", gc.seeds, "random restarts per op");
  grad_cmd->add_option("--seed", gc.seed);

  OracleArgs oa;
  auto* oracle_cmd = app.add_subcommand(
      "oracle", "brute-force references against the fast paths");
  oracle_cmd->add_option("--seed", oa.seed);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsageError;
  }

  try {
    if (*eval_cmd) return run_eval(ev);
    if (*combine_cmd) {
      if (cb_thresh_opt->count()) cb.cfg.score_thresh = cb_score_thresh;
      return run_combine(cb);
    }
    if (*infer_cmd) {
      if (in_thresh_opt->count()) in.cfg.score_thresh = in_score_thresh;
      return run_infer(in);
    }
    if (*pseudo_cmd) return run_pseudolabel(pl);
    if (*mask_cmd) return run_mask2box(mb);
    if (*gen_cmd) {
      gs.spec.image_h = gs.spec.image_w;
      return run_gen_synth(gs);
    }
    if (*ablate_cmd) return run_ablate(ab);
    if (*train_cmd) {
      tt.spec.image_h = tt.spec.image_w;
      tt.spec.seed = tt.seed;
      tt.tcfg.seed = tt.seed;
      tt.mcfg.image_h = tt.spec.image_h;
      tt.mcfg.image_w = tt.spec.image_w;
      tt.mcfg.seed = tt.seed;
      return run_train_toy(tt);
    }
    if (*grad_cmd) return run_gradcheck(gc);
    if (*oracle_cmd) return run_oracle(oa);
  } catch (const ValidationError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kUsageError;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "internal error: %s\n", e.what());
    return kInternalError;
  }
  return kUsageError;
}
