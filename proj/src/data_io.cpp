#include "mavlkit/data_io.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>
#include <set>
#include <sstream>

#include "json.hpp"
#include "mavlkit/model.hpp"
#include "mavlkit/pgm.hpp"

namespace mavlkit {
namespace {

using nlohmann::json;

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

json parse_json_file(const std::string& path) {
  const std::string text = slurp(path);
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw ValidationError(path + ": JSON parse error at byte " +
                          std::to_string(e.byte) + ": " + e.what());
  }
}

const json& need(const json& j, const char* key, const std::string& where) {
  auto it = j.find(key);
  if (it == j.end()) {
    throw ValidationError(where + ": missing \"" + std::string(key) + "\"");
  }
  return *it;
}

int64_t need_int(const json& j, const char* key, const std::string& where) {
  const json& v = need(j, key, where);
  if (!v.is_number_integer()) {
    throw ValidationError(where + ": \"" + std::string(key) +
                          "\" must be an integer");
  }
  return v.get<int64_t>();
}

double need_number(const json& j, const char* key, const std::string& where) {
  const json& v = need(j, key, where);
  if (!v.is_number()) {
    throw ValidationError(where + ": \"" + std::string(key) +
                          "\" must be a number");
  }
  return v.get<double>();
}

std::string need_string(const json& j, const char* key,
                        const std::string& where) {
  const json& v = need(j, key, where);
  if (!v.is_string()) {
    throw ValidationError(where + ": \"" + std::string(key) +
                          "\" must be a string");
  }
  return v.get<std::string>();
}

// Reads a [x,y,w,h] array. Negative extents are an error; the caller decides
// about clamping because only ground truth knows its image bounds.
void read_xywh(const json& v, const std::string& where, double* x, double* y,
               double* w, double* h) {
  if (!v.is_array() || v.size() != 4) {
    throw ValidationError(where + ": \"bbox\" must be an array of 4 numbers");
  }
  for (const auto& e : v) {
    if (!e.is_number()) {
      throw ValidationError(where + ": \"bbox\" must contain only numbers");
    }
  }
  *x = v[0].get<double>();
  *y = v[1].get<double>();
  *w = v[2].get<double>();
  *h = v[3].get<double>();
  if (*w < 0 || *h < 0) {
    throw ValidationError(where + ": \"bbox\" has negative width or height");
  }
}

// Width to store so that the reader's lo + w reproduces hi bit-exactly.
// hi - lo can round such that lo + (hi - lo) lands an ulp away from hi, so
// walk w by ulps toward the reconstruction target. A handful of adversarial
// (lo, hi) pairs have no exact w at all (the rounded sum skips over hi); for
// those keep the w whose reconstruction is nearest, which makes a second
// save/load cycle a fixed point.
double extent_for_exact_sum(double lo, double hi) {
  double w = hi - lo;
  double best_w = w;
  double best_err = std::abs((lo + w) - hi);
  for (int i = 0; i < 64 && best_err != 0; ++i) {
    const double cur = lo + w;
    if (cur == hi) return w;
    w = std::nextafter(w, cur < hi ? std::numeric_limits<double>::infinity()
                                   : -std::numeric_limits<double>::infinity());
    const double err = std::abs((lo + w) - hi);
    if (err < best_err) {
      best_err = err;
      best_w = w;
    }
  }
  return best_w;
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot write " + path);
  out << text;
  if (!out) throw ValidationError("write failed for " + path);
}

}  // namespace

Dataset load_ground_truth(const std::string& path) {
  const json root = parse_json_file(path);
  if (!root.is_object()) {
    throw ValidationError(path + ": top level must be a JSON object");
  }
  const json& jimages = need(root, "images", path);
  const json& jannos = need(root, "annotations", path);
  const json& jcats = need(root, "categories", path);
  if (!jimages.is_array() || !jannos.is_array() || !jcats.is_array()) {
    throw ValidationError(path +
                          ": \"images\", \"annotations\" and \"categories\" "
                          "must be arrays");
  }

  Dataset ds;
  std::map<int64_t, const DatasetImage*> by_id;
  for (const auto& ji : jimages) {
    DatasetImage im;
    im.id = need_int(ji, "id", path + ": image");
    const std::string where = path + ": image " + std::to_string(im.id);
    im.width = static_cast<int>(need_int(ji, "width", where));
    im.height = static_cast<int>(need_int(ji, "height", where));
    im.file_name = need_string(ji, "file_name", where);
    if (im.width <= 0 || im.height <= 0) {
      throw ValidationError(where + ": non-positive width or height");
    }
    ds.images.push_back(im);
  }
  for (const auto& im : ds.images) {
    if (!by_id.emplace(im.id, &im).second) {
      throw ValidationError(path + ": duplicate image id " +
                            std::to_string(im.id));
    }
  }

  for (const auto& jc : jcats) {
    const int64_t id = need_int(jc, "id", path + ": category");
    const std::string name =
        need_string(jc, "name", path + ": category " + std::to_string(id));
    if (!ds.categories.emplace(id, name).second) {
      throw ValidationError(path + ": duplicate category id " +
                            std::to_string(id));
    }
  }

  std::set<int64_t> anno_ids;
  for (const auto& ja : jannos) {
    const int64_t aid = need_int(ja, "id", path + ": annotation");
    const std::string where = path + ": annotation " + std::to_string(aid);
    if (!anno_ids.insert(aid).second) {
      throw ValidationError(path + ": duplicate annotation id " +
                            std::to_string(aid));
    }
    const int64_t image_id = need_int(ja, "image_id", where);
    auto img_it = by_id.find(image_id);
    if (img_it == by_id.end()) {
      throw ValidationError(where + ": image_id " + std::to_string(image_id) +
                            " not in \"images\"");
    }
    const int64_t cat = need_int(ja, "category_id", where);
    if (ds.categories.find(cat) == ds.categories.end()) {
      throw ValidationError(where + ": category_id " + std::to_string(cat) +
                            " not in \"categories\"");
    }
    if (auto it = ja.find("iscrowd"); it != ja.end()) {
      if (!it->is_number_integer()) {
        throw ValidationError(where + ": \"iscrowd\" must be an integer");
      }
      if (it->get<int64_t>() != 0) {
        ++ds.dropped_crowd;
        continue;
      }
    }
    double x, y, w, h;
    read_xywh(need(ja, "bbox", where), where, &x, &y, &w, &h);
    const double iw = img_it->second->width;
    const double ih = img_it->second->height;
    GroundTruthBox gt;
    gt.image_id = image_id;
    gt.category_id = cat;
    gt.known = true;
    gt.box.x_min = std::clamp(x, 0.0, iw);
    gt.box.y_min = std::clamp(y, 0.0, ih);
    gt.box.x_max = std::clamp(x + w, gt.box.x_min, iw);
    gt.box.y_max = std::clamp(y + h, gt.box.y_min, ih);
    ds.annotations.push_back(gt);
  }
  return ds;
}

std::vector<Detection> load_proposals(const std::string& path) {
  const json root = parse_json_file(path);
  if (!root.is_array()) {
    throw ValidationError(path + ": top level must be a JSON array");
  }
  std::vector<Detection> out;
  out.reserve(root.size());
  for (size_t i = 0; i < root.size(); ++i) {
    const json& je = root[i];
    const std::string where = path + ": entry " + std::to_string(i);
    if (!je.is_object()) {
      throw ValidationError(where + ": must be an object");
    }
    Detection d;
    d.image_id = need_int(je, "image_id", where);
    double x, y, w, h;
    read_xywh(need(je, "bbox", where), where, &x, &y, &w, &h);
    d.box = Box{x, y, x + w, y + h};
    d.score = need_number(je, "score", where);
    if (d.score < 0.0 || d.score > 1.0) {
      throw ValidationError(where + ": score " + std::to_string(d.score) +
                            " outside [0,1]");
    }
    if (auto it = je.find("query"); it != je.end()) {
      if (!it->is_string()) {
        throw ValidationError(where + ": \"query\" must be a string");
      }
      d.source_query = it->get<std::string>();
    }
    if (auto it = je.find("category"); it != je.end()) {
      if (!it->is_number_integer()) {
        throw ValidationError(where + ": \"category\" must be an integer");
      }
      d.category_id = it->get<int64_t>();
    }
    out.push_back(std::move(d));
  }
  return out;
}

void save_detections(const std::string& path,
                     const std::vector<Detection>& dets) {
  json arr = json::array();
  for (const auto& d : dets) {
    json je;
    je["image_id"] = d.image_id;
    je["bbox"] = {d.box.x_min, d.box.y_min,
                  extent_for_exact_sum(d.box.x_min, d.box.x_max),
                  extent_for_exact_sum(d.box.y_min, d.box.y_max)};
    je["score"] = d.score;
    if (d.source_query) je["query"] = *d.source_query;
    if (d.category_id) je["category"] = *d.category_id;
    arr.push_back(std::move(je));
  }
  write_text_file(path, arr.dump() + "\n");
}

void validate_synthetic_spec(const SyntheticSpec& spec) {
  if (spec.image_w < 16 || spec.image_h < 16) {
    throw ConfigError("synthetic images must be at least 16x16");
  }
  if (spec.min_shapes < 1) {
    throw ConfigError("min_shapes must be >= 1, a shapeless image has no "
                      "query targets");
  }
  if (spec.max_shapes < spec.min_shapes) {
    throw ConfigError("max_shapes must be >= min_shapes");
  }
  if (spec.max_shapes > 15) {
    throw ConfigError("max_shapes above 15 exhausts the distinct gray levels");
  }
  if (spec.count < 1) throw ConfigError("count must be >= 1");
  if (spec.p_small < 0 || spec.p_large < 0 ||
      spec.p_small + spec.p_large > 1.0) {
    throw ConfigError("size class probabilities must be >= 0 and sum to <= 1");
  }
  validate_size_buckets(spec.buckets);
}

namespace {

// Draws one filled shape and returns the tight bounds of the pixels it
// covered, in the same unit convention mask2box uses: a pixel at (r,c) spans
// [c,c+1) x [r,r+1). Rectangles cover their whole placement box; ellipses can
// miss its outermost rows or columns, so bounds come from the rasterization.
bool draw_shape(Tensor* img, int kind, int x0, int y0, int bw, int bh,
                double gray, Box* tight) {
  int min_r = std::numeric_limits<int>::max();
  int min_c = std::numeric_limits<int>::max();
  int max_r = -1, max_c = -1;
  const double cx = x0 + bw * 0.5;
  const double cy = y0 + bh * 0.5;
  const double ax = bw * 0.5;
  const double ay = bh * 0.5;
  for (int r = y0; r < y0 + bh; ++r) {
    for (int c = x0; c < x0 + bw; ++c) {
      if (kind == 1) {
        const double u = (c + 0.5 - cx) / ax;
        const double v = (r + 0.5 - cy) / ay;
        if (u * u + v * v > 1.0) continue;
      }
      (*img)(r, c) = gray;
      min_r = std::min(min_r, r);
      min_c = std::min(min_c, c);
      max_r = std::max(max_r, r);
      max_c = std::max(max_c, c);
    }
  }
  if (max_r < 0) return false;
  *tight = Box{static_cast<double>(min_c), static_cast<double>(min_r),
               static_cast<double>(max_c + 1), static_cast<double>(max_r + 1)};
  return true;
}

bool boxes_overlap_with_gap(const Box& a, const Box& b, double gap) {
  return a.x_min - gap < b.x_max && b.x_min - gap < a.x_max &&
         a.y_min - gap < b.y_max && b.y_min - gap < a.y_max;
}

}  // namespace

SyntheticDataset gen_synthetic_dataset(const SyntheticSpec& spec) {
  validate_synthetic_spec(spec);
  const int W = spec.image_w;
  const int H = spec.image_h;
  const int vocab = static_cast<int>(toy_vocabulary().size());
  const Rng master(spec.seed);

  SyntheticDataset out;
  for (int i = 0; i < spec.count; ++i) {
    Rng rng = master.fork(static_cast<uint64_t>(i));
    Tensor img = Tensor::zeros({H, W});
    for (double& v : img.data) v = rng.uniform_int(61);

    const int want =
        spec.min_shapes + rng.uniform_int(spec.max_shapes - spec.min_shapes + 1);
    const int64_t image_id = i + 1;
    std::vector<Box> placed;
    std::vector<int64_t> cats;
    for (int s = 0; s < want; ++s) {
      for (int attempt = 0; attempt < 50; ++attempt) {
        const int kind = rng.uniform_int(2);
        // Area fraction targets sit safely clear of the bucket bounds so
        // rasterization (which can only shrink an ellipse's tight box) does
        // not push a shape across a rule boundary.
        const double u = rng.uniform();
        double af;
        if (u < spec.p_small) {
          af = rng.uniform(0.012, 0.042);
        } else if (u < spec.p_small + spec.p_large) {
          af = rng.uniform(0.25, 0.42);
        } else {
          af = rng.uniform(0.065, 0.18);
        }
        const double aspect = rng.uniform(0.6, 1.6);
        int bw = static_cast<int>(std::lround(std::sqrt(af * aspect) * W));
        int bh = static_cast<int>(std::lround(std::sqrt(af / aspect) * H));
        bw = std::clamp(bw, 2, W);
        bh = std::clamp(bh, 2, H);
        const int x0 = rng.uniform_int(W - bw + 1);
        const int y0 = rng.uniform_int(H - bh + 1);
        const Box cand{static_cast<double>(x0), static_cast<double>(y0),
                       static_cast<double>(x0 + bw),
                       static_cast<double>(y0 + bh)};
        // A one-pixel gap keeps shapes disjoint even under 8-connectivity,
        // so each annotation is exactly one component of the composite.
        bool clash = false;
        for (const Box& p : placed) {
          if (boxes_overlap_with_gap(cand, p, 1.0)) {
            clash = true;
            break;
          }
        }
        if (clash) continue;
        const double gray = 135.0 + 8.0 * static_cast<double>(placed.size());
        Box tight;
        if (!draw_shape(&img, kind, x0, y0, bw, bh, gray, &tight)) continue;
        placed.push_back(tight);
        cats.push_back(kind + 1);
        break;
      }
    }

    DatasetImage im;
    im.id = image_id;
    im.width = W;
    im.height = H;
    im.file_name = "img_" + std::to_string(image_id) + ".pgm";
    out.dataset.images.push_back(im);
    out.images.push_back(std::move(img));
    for (size_t k = 0; k < placed.size(); ++k) {
      GroundTruthBox gt;
      gt.image_id = image_id;
      gt.box = placed[k];
      gt.category_id = cats[k];
      gt.known = true;
      out.dataset.annotations.push_back(gt);
    }

    const double img_area = static_cast<double>(W) * H;
    std::vector<Box> small, large;
    for (const Box& b : placed) {
      const double frac = box_area(b) / img_area;
      if (frac < spec.buckets.small_bound) small.push_back(b);
      if (frac > spec.buckets.large_bound) large.push_back(b);
    }
    auto add_group = [&](const std::string& caption, std::vector<Box> targets) {
      if (targets.empty()) return;
      CaptionGroup g;
      g.image_id = image_id;
      g.caption = caption;
      g.tokens = tokenize(caption, vocab);
      g.targets = std::move(targets);
      out.groups.push_back(std::move(g));
    };
    add_group("ALL OBJECTS", placed);
    add_group("SMALL OBJECTS", std::move(small));
    add_group("LARGE OBJECTS", std::move(large));
  }
  out.dataset.categories = {{1, "rectangle"}, {2, "ellipse"}};
  return out;
}

void save_synthetic_dataset(const std::string& dir,
                            const SyntheticDataset& ds) {
  std::filesystem::create_directories(dir);
  for (size_t i = 0; i < ds.dataset.images.size(); ++i) {
    write_pgm(dir + "/" + ds.dataset.images[i].file_name, ds.images[i]);
  }
  json root;
  root["images"] = json::array();
  for (const auto& im : ds.dataset.images) {
    root["images"].push_back({{"id", im.id},
                              {"width", im.width},
                              {"height", im.height},
                              {"file_name", im.file_name}});
  }
  root["annotations"] = json::array();
  int64_t next_anno_id = 1;
  for (const auto& gt : ds.dataset.annotations) {
    root["annotations"].push_back(
        {{"id", next_anno_id++},
         {"image_id", gt.image_id},
         {"bbox", {gt.box.x_min, gt.box.y_min, gt.box.x_max - gt.box.x_min,
                   gt.box.y_max - gt.box.y_min}},
         {"category_id", gt.category_id}});
  }
  root["categories"] = json::array();
  for (const auto& [id, name] : ds.dataset.categories) {
    root["categories"].push_back({{"id", id}, {"name", name}});
  }
  root["groups"] = json::array();
  for (const auto& g : ds.groups) {
    json jg;
    jg["image_id"] = g.image_id;
    jg["caption"] = g.caption;
    jg["tokens"] = g.tokens;
    jg["boxes"] = json::array();
    for (const Box& b : g.targets) {
      jg["boxes"].push_back(
          {b.x_min, b.y_min, b.x_max - b.x_min, b.y_max - b.y_min});
    }
    root["groups"].push_back(std::move(jg));
  }
  write_text_file(dir + "/manifest.json", root.dump(1) + "\n");
}

SyntheticDataset load_synthetic_dataset(const std::string& manifest_path) {
  SyntheticDataset out;
  out.dataset = load_ground_truth(manifest_path);

  const json root = parse_json_file(manifest_path);
  const json& jgroups = need(root, "groups", manifest_path);
  if (!jgroups.is_array()) {
    throw ValidationError(manifest_path + ": \"groups\" must be an array");
  }
  for (const auto& jg : jgroups) {
    CaptionGroup g;
    g.image_id = need_int(jg, "image_id", manifest_path + ": group");
    const std::string where =
        manifest_path + ": group for image " + std::to_string(g.image_id);
    g.caption = need_string(jg, "caption", where);
    const json& jt = need(jg, "tokens", where);
    if (!jt.is_array() || jt.empty()) {
      throw ValidationError(where + ": \"tokens\" must be a non-empty array");
    }
    for (const auto& t : jt) {
      if (!t.is_number_integer()) {
        throw ValidationError(where + ": tokens must be integers");
      }
      g.tokens.push_back(t.get<int>());
    }
    const json& jb = need(jg, "boxes", where);
    if (!jb.is_array() || jb.empty()) {
      throw ValidationError(where + ": \"boxes\" must be a non-empty array");
    }
    for (const auto& b : jb) {
      double x, y, w, h;
      read_xywh(b, where, &x, &y, &w, &h);
      g.targets.push_back(Box{x, y, x + w, y + h});
    }
    out.groups.push_back(std::move(g));
  }

  const std::string dir =
      std::filesystem::path(manifest_path).parent_path().string();
  for (const auto& im : out.dataset.images) {
    out.images.push_back(
        read_pgm(dir.empty() ? im.file_name : dir + "/" + im.file_name));
  }
  return out;
}

std::map<int64_t, std::vector<Box>> ablation_setting1_merge(
    const std::vector<CaptionGroup>& groups) {
  std::map<int64_t, std::vector<Box>> out;
  for (const auto& g : groups) {
    auto& dst = out[g.image_id];
    dst.insert(dst.end(), g.targets.begin(), g.targets.end());
  }
  return out;
}

std::map<int64_t, std::vector<Box>> ablation_setting2_nms(
    const std::map<int64_t, std::vector<Box>>& merged, double iou_thresh) {
  std::map<int64_t, std::vector<Box>> out;
  for (const auto& [image_id, boxes] : merged) {
    std::vector<Detection> dets;
    dets.reserve(boxes.size());
    for (const Box& b : boxes) {
      Detection d;
      d.image_id = image_id;
      d.box = b;
      d.score = 1.0;
      dets.push_back(d);
    }
    std::vector<Box>& keep = out[image_id];
    for (const Detection& d : nms_class_agnostic(dets, iou_thresh)) {
      keep.push_back(d.box);
    }
  }
  return out;
}

std::vector<CaptionGroup> ablation_setting3_group(
    const std::map<int64_t, std::vector<Box>>& boxes_per_image, int group_size,
    uint64_t seed) {
  if (group_size < 1) throw ConfigError("group_size must be >= 1");
  const Rng master(seed);
  std::vector<CaptionGroup> out;
  for (const auto& [image_id, boxes] : boxes_per_image) {
    if (boxes.empty()) continue;
    Rng rng = master.fork(static_cast<uint64_t>(image_id));
    std::vector<size_t> order(boxes.size());
    std::iota(order.begin(), order.end(), size_t{0});
    for (size_t i = order.size() - 1; i > 0; --i) {
      std::swap(order[i], order[rng.uniform_int(static_cast<int>(i) + 1)]);
    }
    for (size_t start = 0; start < order.size();
         start += static_cast<size_t>(group_size)) {
      CaptionGroup g;
      g.image_id = image_id;
      // Caption-free: a lone UNK token keeps the query input well-defined
      // while carrying no information about the group's contents.
      g.tokens = {0};
      const size_t stop =
          std::min(order.size(), start + static_cast<size_t>(group_size));
      for (size_t k = start; k < stop; ++k) g.targets.push_back(boxes[order[k]]);
      out.push_back(std::move(g));
    }
  }
  return out;
}

}  // namespace mavlkit
