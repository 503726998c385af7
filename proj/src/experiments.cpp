#include "experiments.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <memory>
#include <set>

#include "common.hpp"
#include "compensate.hpp"
#include "emap.hpp"
#include "field.hpp"
#include "geometry.hpp"
#include "hog.hpp"
#include "image.hpp"
#include "invariance.hpp"
#include "learn.hpp"
#include "net.hpp"
#include "pose.hpp"
#include "solvers.hpp"
#include "stitch.hpp"
#include "synth.hpp"
#include "translayer.hpp"

namespace eqm {

namespace {

using nlohmann::json;

// Typed config access. Every key read is recorded; finish() rejects the
// rest, so misspelled options fail loudly instead of silently defaulting.
class Config {
 public:
  Config(const json& j, std::string command) : j_(j), cmd_(std::move(command)) {
    require(j_.is_object(), Errc::invalid_argument, cmd_ + ": config must be a JSON object");
    // Global knobs consumed by run_command.
    used_.insert("threads");
    used_.insert("verbose");
    used_.insert("dry_run");
  }

  bool has(const std::string& key) const { return j_.contains(key); }

  int geti(const std::string& key, int def) {
    if (!mark(key)) return def;
    require(j_.at(key).is_number_integer(), Errc::invalid_argument, bad(key, "an integer"));
    return j_.at(key).get<int>();
  }

  int require_i(const std::string& key) {
    require(has(key), Errc::invalid_argument, cmd_ + ": missing required key '" + key + "'");
    return geti(key, 0);
  }

  std::uint64_t getu(const std::string& key, std::uint64_t def) {
    if (!mark(key)) return def;
    const json& v = j_.at(key);
    require(v.is_number_integer(), Errc::invalid_argument, bad(key, "a nonnegative integer"));
    if (v.is_number_unsigned()) return v.get<std::uint64_t>();
    long long s = v.get<long long>();
    require(s >= 0, Errc::invalid_argument, bad(key, "a nonnegative integer"));
    return std::uint64_t(s);
  }

  double getd(const std::string& key, double def) {
    if (!mark(key)) return def;
    require(j_.at(key).is_number(), Errc::invalid_argument, bad(key, "a number"));
    return j_.at(key).get<double>();
  }

  std::string gets(const std::string& key, const std::string& def) {
    if (!mark(key)) return def;
    require(j_.at(key).is_string(), Errc::invalid_argument, bad(key, "a string"));
    return j_.at(key).get<std::string>();
  }

  std::string require_s(const std::string& key) {
    require(has(key), Errc::invalid_argument, cmd_ + ": missing required key '" + key + "'");
    return gets(key, "");
  }

  bool getb(const std::string& key, bool def) {
    if (!mark(key)) return def;
    require(j_.at(key).is_boolean(), Errc::invalid_argument, bad(key, "a boolean"));
    return j_.at(key).get<bool>();
  }

  void finish() {
    std::string unknown;
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!used_.count(it.key())) unknown += (unknown.empty() ? "" : ", ") + it.key();
    require(unknown.empty(), Errc::invalid_argument, cmd_ + ": unknown config keys: " + unknown);
  }

 private:
  bool mark(const std::string& key) {
    used_.insert(key);
    return j_.contains(key);
  }
  std::string bad(const std::string& key, const std::string& want) const {
    return cmd_ + ": key '" + key + "' must be " + want;
  }

  const json& j_;
  std::string cmd_;
  std::set<std::string> used_;
};

std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

void write_csv(const std::string& path, const std::vector<std::string>& header,
               const std::vector<std::vector<std::string>>& rows) {
  std::ofstream out(path);
  require(bool(out), Errc::io, "cannot write " + path);
  for (std::size_t i = 0; i < header.size(); ++i) out << (i ? "," : "") << header[i];
  out << "\n";
  for (const auto& row : rows) {
    require(row.size() == header.size(), Errc::invalid_argument, "csv row width mismatch");
    for (std::size_t i = 0; i < row.size(); ++i) out << (i ? "," : "") << row[i];
    out << "\n";
  }
  require(bool(out), Errc::io, "write failed: " + path);
}

// Shared corpus selection: a dataset directory ("data", optional "split")
// or a synthetic texture corpus ("texture_n", "texture_size").
std::vector<Image> corpus_images(Config& cfg, std::uint64_t seed) {
  bool has_data = cfg.has("data");
  int texture_n = cfg.geti("texture_n", 0);
  int texture_size = cfg.geti("texture_size", 64);
  if (has_data) {
    std::string dir = cfg.require_s("data");
    std::string split = cfg.gets("split", "");
    Dataset ds = load_dataset(dir);
    std::vector<Image> images;
    for (DatasetItem& item : ds.items)
      if (split.empty() || item.split == split) images.push_back(std::move(item.image));
    require(!images.empty(), Errc::invalid_argument, "no images in " + dir +
            (split.empty() ? "" : " with split " + split));
    return images;
  }
  require(texture_n > 0, Errc::invalid_argument,
          "need either 'data' or a positive 'texture_n'");
  return synth_texture_images(seed, texture_n, texture_size);
}

struct NamedExtractor {
  Extractor fn;
  std::string name;
  HogConfig hog;
  bool is_hog = true;
};

// "feat": "hog" (cell, orientations) or "net" (net checkpoint dir + probe).
NamedExtractor make_extractor(Config& cfg) {
  NamedExtractor ex;
  std::string feat = cfg.gets("feat", "hog");
  if (feat == "hog") {
    HogConfig hog;
    hog.cell = cfg.geti("cell", 8);
    hog.orientations = cfg.geti("orientations", 9);
    ex.hog = hog;
    ex.name = "hog";
    ex.fn = [hog](const Image& img) { return extract_hog(img, hog); };
    return ex;
  }
  if (feat == "net") {
    std::string dir = cfg.require_s("net");
    int probe = cfg.geti("probe", 1);
    auto net = std::make_shared<Network>(load_network(dir));
    int boundary = t3_probe_boundary(probe);
    ex.is_hog = false;
    ex.name = "net:" + std::to_string(probe);
    ex.fn = [net, boundary](const Image& img) {
      return forward_range(*net, 0, boundary, net_input(img)).out();
    };
    return ex;
  }
  fail(Errc::invalid_argument, "feat must be 'hog' or 'net', got '" + feat + "'");
}

CropPolicy parse_crop(const std::string& spec) {
  if (spec == "interior") return {CropKind::interior, 0, 0};
  if (spec.rfind("center:", 0) == 0) {
    int ch = 0, cw = 0;
    if (std::sscanf(spec.c_str() + 7, "%dx%d", &ch, &cw) == 2 && ch > 0 && cw > 0)
      return {CropKind::center, ch, cw};
  }
  fail(Errc::invalid_argument, "crop must be 'interior' or 'center:HxW', got '" + spec + "'");
}

LearnConfig parse_learn(Config& cfg) {
  LearnConfig lc;
  lc.method = cfg.gets("method", "fs");
  require(lc.method == "fs" || lc.method == "rr" || lc.method == "ls", Errc::invalid_argument,
          "method must be fs|rr|ls");
  lc.k = cfg.geti("k", 5);
  lc.m = cfg.geti("m", 3);
  lc.lambda = cfg.getd("lambda", 0.1);
  lc.crop = parse_crop(cfg.gets("crop", "interior"));
  return lc;
}

// Class dataset from "data" or synthesized in place.
Dataset class_dataset(Config& cfg, std::uint64_t seed) {
  if (cfg.has("data")) return load_dataset(cfg.require_s("data"));
  int n = cfg.geti("n", 800);
  int classes = cfg.geti("classes", 2);
  int test_n = cfg.geti("test_n", n / 4);
  Dataset ds = synth_classification_set(seed, n, classes);
  assign_splits(ds, test_n);
  return ds;
}

json eval_stats_json(const MapEvalStats& stats) {
  json j;
  j["mean"] = stats.mean;
  j["median"] = stats.median;
  j["stddev"] = stats.stddev;
  j["none_mean"] = stats.none_mean;
  j["ref_norm"] = stats.ref_norm;
  j["n_images"] = stats.n_images;
  j["n_sites"] = stats.n_sites;
  return j;
}

void write_eval_csv(const std::string& path, const MapEvalStats& stats) {
  std::vector<std::vector<std::string>> rows;
  for (std::size_t i = 0; i < stats.per_image.size(); ++i)
    rows.push_back({std::to_string(i), num(stats.per_image[i])});
  write_csv(path, {"image", "mean_cell_distance"}, rows);
}

// ---------------------------------------------------------------- synth --

json run_synth(Config& cfg) {
  std::uint64_t seed = cfg.getu("seed", 1);
  std::string kind = cfg.gets("kind", "class");
  int n = cfg.require_i("n");
  std::string out = cfg.require_s("out");
  Dataset ds;
  json summary;
  if (kind == "class") {
    int classes = cfg.geti("classes", 2);
    int test_n = cfg.geti("test_n", 0);
    ds = synth_classification_set(seed, n, classes);
    assign_splits(ds, test_n);
    summary["classes"] = classes;
  } else if (kind == "pose-rotation" || kind == "pose-affine") {
    int test_n = cfg.geti("test_n", 0);
    ds = synth_pose_set(seed, n, kind.substr(5));
    assign_splits(ds, test_n);
  } else {
    fail(Errc::invalid_argument, "synth: kind must be class|pose-rotation|pose-affine");
  }
  cfg.finish();
  save_dataset(ds, out);
  summary["kind"] = kind;
  summary["n"] = n;
  summary["out"] = out;
  return summary;
}

// -------------------------------------------------------------- extract --

json run_extract(Config& cfg) {
  std::uint64_t seed = cfg.getu("seed", 1);
  NamedExtractor ex = make_extractor(cfg);
  std::string out = cfg.require_s("out");
  json summary;
  if (cfg.has("image")) {
    Image img = load_pnm(cfg.require_s("image"));
    cfg.finish();
    FeatureField f = ex.fn(img);
    save_field(f, out);
    summary["count"] = 1;
    summary["h"] = f.h;
    summary["w"] = f.w;
    summary["d"] = f.d;
  } else {
    int limit = cfg.geti("limit", 0);
    std::vector<Image> images = corpus_images(cfg, seed);
    cfg.finish();
    if (limit > 0 && limit < int(images.size())) images.resize(std::size_t(limit));
    std::error_code ec;
    std::filesystem::create_directories(out, ec);
    require(!ec, Errc::io, "extract: cannot create " + out);
    json dims;
    for (std::size_t i = 0; i < images.size(); ++i) {
      FeatureField f = ex.fn(images[i]);
      char buf[64];
      std::snprintf(buf, sizeof buf, "field_%05zu.eqf", i);
      save_field(f, out + "/" + buf);
      if (i == 0) dims = {f.h, f.w, f.d};
    }
    summary["count"] = images.size();
    summary["dims"] = dims;
  }
  summary["feat"] = ex.name;
  summary["out"] = out;
  return summary;
}

// ------------------------------------------------------------ train-net --

json run_train_net(Config& cfg) {
  std::uint64_t seed = cfg.getu("seed", 1);
  Dataset ds = class_dataset(cfg, seed);
  int classes = 0;
  for (const DatasetItem& item : ds.items) classes = std::max(classes, item.cls + 1);
  TrainConfig tc;
  tc.epochs = cfg.geti("epochs", 20);
  tc.batch = cfg.geti("batch", 16);
  tc.lr = cfg.getd("lr", 0.01);
  tc.momentum = cfg.getd("momentum", 0.9);
  tc.weight_decay = cfg.getd("weight_decay", 1e-4);
  tc.seed = seed;
  tc.augment_hflip = cfg.getb("augment_hflip", false);
  std::string out = cfg.require_s("out");
  std::string curve_csv = cfg.gets("curve_csv", "");
  cfg.finish();

  Network net = make_t3(classes, seed);
  Dataset train = split_of(ds, "train");
  Dataset test = split_of(ds, "test");
  std::vector<CurvePoint> curve = train_network(net, train, tc);
  save_network(net, out);
  if (!curve_csv.empty()) {
    std::vector<std::vector<std::string>> rows;
    for (const CurvePoint& p : curve)
      rows.push_back({std::to_string(p.epoch), num(p.loss), num(p.err)});
    write_csv(curve_csv, {"epoch", "loss", "train_err"}, rows);
  }
  json summary;
  summary["classes"] = classes;
  summary["train_n"] = train.items.size();
  summary["train_err"] = curve.empty() ? 1.0 : curve.back().err;
  if (!test.items.empty()) {
    summary["test_n"] = test.items.size();
    summary["test_err"] = classification_error(net, test);
  }
  summary["out"] = out;
  return summary;
}

// ------------------------------------------------------------ learn-map --

json run_learn_map(Config& cfg) {
  std::uint64_t seed = cfg.getu("seed", 1);
  NamedExtractor ex = make_extractor(cfg);
  LearnConfig lc = parse_learn(cfg);
  std::string gspec = cfg.require_s("g");
  int holdout = cfg.geti("holdout", 0);
  std::string metric_name = cfg.gets("metric", "hellinger");
  std::string out = cfg.gets("out", "");
  std::string metrics_csv = cfg.gets("metrics_csv", "");
  std::vector<Image> images = corpus_images(cfg, seed);
  cfg.finish();
  require(holdout >= 0 && holdout < int(images.size()), Errc::invalid_argument,
          "learn-map: holdout out of range");

  Affine2 g = parse_transform(gspec, images[0].width, images[0].height);
  std::vector<Image> train(images.begin(), images.end() - holdout);
  std::vector<Image> eval(images.end() - holdout, images.end());

  PairSet pairs = assemble_pairs(train, g, ex.fn, lc.m, lc.crop);
  EquivariantMap map = learn_map(pairs, lc);
  if (!out.empty()) save_map(map, out);

  json summary;
  summary["g"] = gspec;
  summary["method"] = lc.method;
  summary["k"] = lc.k;
  summary["m"] = lc.m;
  summary["train_n"] = train.size();
  summary["grid"] = {map.out_h, map.out_w, map.out_d};
  summary["valid_sites"] = map.valid_sites.size();
  std::size_t nnz = 0;
  for (const auto& row : map.rows) nnz += row.size();
  summary["nnz"] = nnz;
  summary["learn_seconds"] = map.learn_seconds;
  if (!out.empty()) summary["out"] = out;
  if (holdout > 0) {
    FieldMetric metric = parse_metric(metric_name);
    MapEvalStats stats = evaluate_map(map, eval, ex.fn, metric);
    summary["eval"] = eval_stats_json(stats);
    summary["eval"]["metric"] = metric_name;
    if (!metrics_csv.empty()) write_eval_csv(metrics_csv, stats);
  }
  return summary;
}

// ------------------------------------------------------------- eval-map --

json run_eval_map(Config& cfg) {
  std::uint64_t seed = cfg.getu("seed", 1);
  std::string map_path = cfg.require_s("map");
  NamedExtractor ex = make_extractor(cfg);
  std::string metric_name = cfg.gets("metric", "hellinger");
  std::string csv = cfg.gets("csv", "");
  std::vector<Image> images = corpus_images(cfg, seed);
  cfg.finish();

  EquivariantMap map = load_map(map_path);
  FieldMetric metric = parse_metric(metric_name);
  MapEvalStats stats = evaluate_map(map, images, ex.fn, metric);
  if (!csv.empty()) write_eval_csv(csv, stats);
  json summary = eval_stats_json(stats);
  summary["metric"] = metric_name;
  summary["map"] = map_path;
  summary["method"] = map.method;
  return summary;
}

// ': the transform acts in the 32x32 network input frame.
Affine2 net_frame_transform(const std::string& spec) { return parse_transform(spec, 32, 32); }

// ---------------------------------------------------- learn-translayer --

json run_learn_translayer(Config& cfg) {
  std::uint64_t seed = cfg.getu("seed", 7);
  std::string net_dir = cfg.require_s("net");
  int probe = cfg.geti("probe", 1);
  std::string gspec = cfg.require_s("g");
  TaskTrainConfig tc;
  tc.m = cfg.geti("m", 3);
  std::string mode = cfg.gets("mode", "round");
  require(mode == "round" || mode == "bilinear", Errc::invalid_argument,
          "learn-translayer: mode must be round|bilinear");
  tc.mode = mode == "round" ? TableMode::round : TableMode::bilinear;
  tc.epochs = cfg.geti("epochs", 5);
  tc.batch = cfg.geti("batch", 16);
  tc.lr = cfg.getd("lr", 0.02);
  tc.momentum = cfg.getd("momentum", 0.9);
  tc.seed = seed;
  std::string out = cfg.gets("out", "");
  std::string curve_csv = cfg.gets("curve_csv", "");
  Dataset ds = class_dataset(cfg, seed);
  cfg.finish();

  Network net = load_network(net_dir);
  int boundary = t3_probe_boundary(probe);
  Affine2 g = net_frame_transform(gspec);
  Affine2 g_inv = inverse(g);
  Dataset train = split_of(ds, "train");
  Dataset test = split_of(ds, "test");
  require(!train.items.empty() && !test.items.empty(), Errc::invalid_argument,
          "learn-translayer: need train and test splits");

  double err_orig = classification_error(net, test);
  double err_unc = probe_error(net, boundary, nullptr, test, &g_inv);
  TaskTrainResult result = learn_map_task(net, boundary, g, train, test, tc);
  double err_comp = probe_error(net, boundary, &result.layer, test, &g_inv);

  if (!out.empty()) save_translayer(result.layer, out);
  if (!curve_csv.empty()) {
    std::vector<std::vector<std::string>> rows;
    for (const TaskCurvePoint& p : result.curve)
      rows.push_back({std::to_string(p.samples_seen), num(p.train_err), num(p.val_err)});
    write_csv(curve_csv, {"samples_seen", "train_err", "val_err"}, rows);
  }
  json summary;
  summary["probe"] = probe;
  summary["g"] = gspec;
  summary["err_orig"] = err_orig;
  summary["err_unc"] = err_unc;
  summary["err_comp"] = err_comp;
  double gap = err_unc - err_orig;
  summary["recovery"] = gap > 0.0 ? (err_unc - err_comp) / gap : 1.0;
  if (!out.empty()) summary["out"] = out;
  return summary;
}

// --------------------------------------------------------------- stitch --

json run_stitch(Config& cfg) {
  std::uint64_t seed = cfg.getu("seed", 11);
  std::string dir_a = cfg.require_s("net_a");
  std::string dir_b = cfg.require_s("net_b");
  int probe = cfg.geti("probe", 1);
  StitchTrainConfig sc;
  sc.s = cfg.geti("s", 1);
  sc.resample = cfg.geti("resample", 0);
  sc.epochs = cfg.geti("epochs", 5);
  sc.batch = cfg.geti("batch", 16);
  sc.lr = cfg.getd("lr", 0.02);
  sc.momentum = cfg.getd("momentum", 0.9);
  sc.seed = seed;
  std::string out = cfg.gets("out", "");
  std::string curve_csv = cfg.gets("curve_csv", "");
  Dataset ds = class_dataset(cfg, seed);
  cfg.finish();

  Network net_a = load_network(dir_a);
  Network net_b = load_network(dir_b);
  int boundary = t3_probe_boundary(probe);
  Dataset train = split_of(ds, "train");
  Dataset test = split_of(ds, "test");
  require(!train.items.empty() && !test.items.empty(), Errc::invalid_argument,
          "stitch: need train and test splits");

  double err_a = classification_error(net_a, test);
  double err_b = classification_error(net_b, test);
  FeatureField fa = forward_range(net_a, 0, boundary, net_input(test.items[0].image)).out();
  FeatureField fb = forward_range(net_b, 0, boundary, net_input(test.items[0].image)).out();
  StitchingLayer identity = make_stitch(fa.d, fb.d, 1, sc.resample);
  double err_identity = franken_error(net_a, net_b, boundary, identity, test);
  StitchTrainResult result = learn_stitch(net_a, net_b, boundary, train, test, sc);
  double err_learned = franken_error(net_a, net_b, boundary, result.layer, test);

  if (!out.empty()) save_stitch(result.layer, out);
  if (!curve_csv.empty()) {
    std::vector<std::vector<std::string>> rows;
    for (const TaskCurvePoint& p : result.curve)
      rows.push_back({std::to_string(p.samples_seen), num(p.train_err), num(p.val_err)});
    write_csv(curve_csv, {"samples_seen", "train_err", "val_err"}, rows);
  }
  json summary;
  summary["probe"] = probe;
  summary["err_a"] = err_a;
  summary["err_b"] = err_b;
  summary["err_identity"] = err_identity;
  summary["err_learned"] = err_learned;
  if (!out.empty()) summary["out"] = out;
  return summary;
}

// ----------------------------------------------------------- invariance --

json run_invariance(Config& cfg) {
  std::uint64_t seed = cfg.getu("seed", 7);
  std::string net_dir = cfg.require_s("net");
  int probe = cfg.geti("probe", 1);
  std::string gspec = cfg.require_s("g");
  double tol = cfg.getd("tol", 0.05);
  std::string layer_dir = cfg.gets("layer", "");
  std::string csv = cfg.gets("csv", "");
  std::string scores_csv = cfg.gets("scores_csv", "");
  std::string out = cfg.gets("out", "");
  TaskTrainConfig tc;
  tc.m = cfg.geti("m", 3);
  tc.epochs = cfg.geti("epochs", 5);
  tc.batch = cfg.geti("batch", 16);
  tc.lr = cfg.getd("lr", 0.02);
  tc.momentum = cfg.getd("momentum", 0.9);
  tc.seed = seed;
  Dataset ds = class_dataset(cfg, seed);
  cfg.finish();

  Network net = load_network(net_dir);
  int boundary = t3_probe_boundary(probe);
  Affine2 g = net_frame_transform(gspec);
  Affine2 g_inv = inverse(g);
  Dataset train = split_of(ds, "train");
  Dataset test = split_of(ds, "test");
  require(!test.items.empty(), Errc::invalid_argument, "invariance: need a test split");

  TransformationLayer layer;
  if (!layer_dir.empty()) {
    layer = load_translayer(layer_dir);
  } else {
    require(!train.items.empty(), Errc::invalid_argument, "invariance: need a train split");
    layer = learn_map_task(net, boundary, g, train, test, tc).layer;
  }
  if (!out.empty()) save_translayer(layer, out);

  InvariantSetResult res = max_invariant_set(net, boundary, layer, test, g_inv, tol);
  if (!csv.empty()) {
    std::vector<std::vector<std::string>> rows;
    for (const InvarianceEval& e : res.evals)
      rows.push_back({std::to_string(e.p), num(e.err), e.accepted ? "1" : "0"});
    write_csv(csv, {"p", "err", "accepted"}, rows);
  }
  if (!scores_csv.empty()) {
    std::vector<std::vector<std::string>> rows;
    for (std::size_t rank = 0; rank < res.order.size(); ++rank) {
      int t = res.order[rank];
      rows.push_back({std::to_string(rank), std::to_string(t), num(res.scores[std::size_t(t)])});
    }
    write_csv(scores_csv, {"rank", "channel", "score"}, rows);
  }
  json summary;
  summary["probe"] = probe;
  summary["g"] = gspec;
  summary["p"] = res.p;
  summary["channels"] = layer.d;
  summary["base_err"] = res.base_err;
  summary["tol"] = res.tol;
  summary["monotone"] = res.monotone;
  return summary;
}

// ------------------------------------------------------------ compensate --

json run_compensate(Config& cfg) {
  std::uint64_t seed = cfg.getu("seed", 1);
  int train_n = cfg.geti("train_n", 400);
  int test_n = cfg.geti("test_n", 200);
  int classes = cfg.geti("classes", 2);
  double max_angle = cfg.getd("max_angle", 90.0);
  double step = cfg.getd("step", 15.0);
  int block = cfg.geti("block", 4);
  HogConfig hog;
  hog.cell = cfg.geti("cell", 8);
  hog.orientations = cfg.geti("orientations", 9);
  LinearTrainConfig ltc;
  ltc.epochs = cfg.geti("clf_epochs", 30);
  ltc.lr = cfg.getd("clf_lr", 0.01);
  ltc.reg = cfg.getd("clf_reg", 1e-4);
  ltc.seed = seed;
  // The map's valid region must cover the classifier sites, so the crop is
  // pinned to the same central block rather than taken from the config.
  require(!cfg.has("crop"), Errc::invalid_argument,
          "compensate: crop is fixed to the central block");
  LearnConfig lc = parse_learn(cfg);
  std::string csv = cfg.gets("csv", "");
  cfg.finish();
  require(step > 0.0 && max_angle >= 0.0, Errc::invalid_argument,
          "compensate: bad angle grid");

  Dataset train = synth_classification_set(seed, train_n, classes);
  Dataset test = synth_classification_set(seed + 1, test_n, classes);
  const Image& probe = train.items[0].image;
  FeatureField f0 = extract_hog(probe, hog);
  std::vector<int> sites = central_sites(f0.h, f0.w, block, block);
  lc.crop = {CropKind::center, block, block};

  LinearClassifier clf = train_linear_hog(train, hog, sites, ltc);

  std::vector<Image> map_images;
  for (const DatasetItem& item : train.items) map_images.push_back(item.image);
  Extractor phi = [hog](const Image& img) { return extract_hog(img, hog); };
  std::vector<double> angles;
  std::vector<EquivariantMap> maps;
  for (double a = 0.0; a <= max_angle + 1e-9; a += step) {
    Affine2 g = Affine2::rotation_deg(a, image_center(probe.width, probe.height));
    PairSet pairs = assemble_pairs(map_images, g, phi, lc.m, lc.crop);
    maps.push_back(learn_map(pairs, lc));
    angles.push_back(a);
    logv(1, "compensate: learned map for " + num(a) + " deg");
  }

  std::vector<CompensationPoint> curve = compensation_curve(clf, hog, angles, maps, test);
  if (!csv.empty()) {
    std::vector<std::vector<std::string>> rows;
    for (const CompensationPoint& p : curve)
      rows.push_back({num(p.angle), num(1.0 - p.err_orig), num(1.0 - p.err_unc),
                      num(1.0 - p.err_comp)});
    write_csv(csv, {"angle", "acc_orig", "acc_unc", "acc_comp"}, rows);
  }
  double worst_gap = 0.0, unc_drop_at_max = 0.0;
  for (const CompensationPoint& p : curve) {
    worst_gap = std::max(worst_gap, p.err_comp - p.err_orig);
    if (p.angle == curve.back().angle) unc_drop_at_max = p.err_unc - p.err_orig;
  }
  json summary;
  summary["acc_orig"] = 1.0 - curve.front().err_orig;
  summary["worst_comp_gap_points"] = worst_gap * 100.0;
  summary["unc_drop_at_max_points"] = unc_drop_at_max * 100.0;
  summary["angles"] = angles;
  json pts = json::array();
  for (const CompensationPoint& p : curve)
    pts.push_back({{"angle", p.angle},
                   {"acc_orig", 1.0 - p.err_orig},
                   {"acc_unc", 1.0 - p.err_unc},
                   {"acc_comp", 1.0 - p.err_comp}});
  summary["points"] = pts;
  return summary;
}

// ------------------------------------------------------------ bench-pose --

json run_bench_pose(Config& cfg) {
  std::uint64_t seed = cfg.getu("seed", 1);
  std::string family = cfg.gets("family", "rotation");
  int poses = cfg.geti("poses", family == "rotation" ? 36 : 10);
  int size = cfg.geti("size", 64);
  int train_n = cfg.geti("train_n", 300);
  int test_n = cfg.geti("test_n", 200);
  int map_images = cfg.geti("map_images", 100);
  int warmup = cfg.geti("warmup", 2);
  int poses_limit = cfg.geti("poses_limit", 0);
  HogConfig hog;
  hog.cell = cfg.geti("cell", 8);
  hog.orientations = cfg.geti("orientations", 9);
  LearnConfig lc = parse_learn(cfg);
  PoseTrainConfig pc;
  pc.epochs = cfg.geti("epochs", 10);
  pc.seed = seed;
  std::string csv = cfg.gets("csv", "");
  cfg.finish();

  PoseSet G = build_pose_set(family, poses, size);
  std::vector<Image> corpus = synth_texture_images(seed + 17, map_images, size);
  Extractor phi = [hog](const Image& img) { return extract_hog(img, hog); };
  std::vector<EquivariantMap> maps;
  for (int j = 0; j < int(G.poses.size()); ++j) {
    Affine2 gj = inverse(G.poses[std::size_t(j)]);
    PairSet pairs = assemble_pairs(corpus, gj, phi, lc.m, lc.crop);
    maps.push_back(learn_map(pairs, lc));
    logv(1, "bench-pose: learned map " + std::to_string(j + 1) + "/" +
                std::to_string(G.poses.size()));
  }

  Dataset train = synth_pose_set(seed, train_n, family);
  Dataset test = synth_pose_set(seed + 1, test_n, family);
  PoseModel model = train_pose_model(train, G, maps, hog, pc);
  PoseBench bench = bench_pose(model, test, warmup, poses_limit);

  auto residual_deg = [&](double r) { return family == "rotation" ? r * 180.0 : r; };
  if (!csv.empty()) {
    std::vector<std::vector<std::string>> rows;
    rows.push_back({"direct", num(bench.residual_direct), num(residual_deg(bench.residual_direct)),
                    num(bench.ms_direct), num(bench.ms_direct_per_pose)});
    rows.push_back({"equivariant", num(bench.residual_equi), num(residual_deg(bench.residual_equi)),
                    num(bench.ms_equi), num(bench.ms_equi_per_pose)});
    rows.push_back({"constant", num(bench.residual_const), num(residual_deg(bench.residual_const)),
                    "", ""});
    write_csv(csv, {"mode", "residual", "residual_scaled", "ms_per_image", "ms_per_pose"}, rows);
  }
  json summary;
  summary["family"] = family;
  summary["poses"] = G.poses.size();
  summary["residual_direct"] = bench.residual_direct;
  summary["residual_equi"] = bench.residual_equi;
  summary["residual_const"] = bench.residual_const;
  if (family == "rotation") {
    summary["residual_direct_deg"] = bench.residual_direct * 180.0;
    summary["residual_equi_deg"] = bench.residual_equi * 180.0;
    summary["residual_const_deg"] = bench.residual_const * 180.0;
  }
  summary["ms_direct_per_pose"] = bench.ms_direct_per_pose;
  summary["ms_equi_per_pose"] = bench.ms_equi_per_pose;
  summary["speedup"] = bench.speedup;
  summary["baseline_pose"] = model.baseline;
  return summary;
}

// -------------------------------------------------------------- selftest --

json run_selftest(Config& cfg) {
  std::uint64_t seed = cfg.getu("seed", 1);
  cfg.finish();
  json checks = json::array();
  bool all_ok = true;
  auto record = [&](const std::string& name, double value, double bound, bool less_ok) {
    bool ok = less_ok ? value <= bound : value >= bound;
    checks.push_back({{"name", name}, {"value", value}, {"bound", bound}, {"passed", ok}});
    all_ok = all_ok && ok;
    logv(1, "selftest " + name + ": " + num(value) + (ok ? " ok" : " FAIL"));
  };

  // Exact flip/rot180 channel permutations on HOG fields.
  {
    HogConfig hog;
    std::vector<Image> images = synth_texture_images(seed + 100, 5, 64);
    double worst = 0.0;
    for (const char* gname : {"hflip", "vflip", "rot180"}) {
      for (const Image& img : images) {
        Affine2 g = parse_transform(gname, img.width, img.height);
        FeatureField lhs = extract_hog(warp(img, g, Interp::bilinear, Pad::replicate), hog);
        FeatureField f = extract_hog(img, hog);
        EquivariantMap perm = hog_permutation(f.h, f.w, hog, gname);
        FeatureField rhs = apply(perm, f);
        for (std::size_t q = 0; q < lhs.data.size(); ++q)
          worst = std::max(worst, std::abs(lhs.data[q] - rhs.data[q]));
      }
    }
    record("hog_permutation_exact", worst, 1e-10, true);
  }

  // <w, M f + b> == <M^T w, f> + <w, b>.
  {
    Rng rng(seed + 200);
    double worst = 0.0;
    for (int trial = 0; trial < 10; ++trial) {
      EquivariantMap map;
      map.out_h = map.in_h = 4;
      map.out_w = map.in_w = 4;
      map.out_d = map.in_d = 3;
      map.g = Affine2::identity();
      map.method = "ls";
      for (int s = 0; s < 16; ++s) map.valid_sites.push_back(s);
      map.rows.assign(std::size_t(map.out_components()), {});
      map.bias.assign(std::size_t(map.out_components()), 0.0);
      for (auto& row : map.rows) {
        int nnz = 1 + int(rng.below(4));
        for (int e = 0; e < nnz; ++e)
          row.push_back({std::uint32_t(rng.below(std::uint64_t(map.in_components()))),
                         rng.uniform(-1.0, 1.0)});
      }
      for (double& b : map.bias) b = rng.uniform(-0.5, 0.5);
      FeatureField f(4, 4, 3), w_out(4, 4, 3);
      for (double& v : f.data) v = rng.uniform(-1.0, 1.0);
      for (double& v : w_out.data) v = rng.uniform(-1.0, 1.0);
      FeatureField mf = apply(map, f);
      double lhs = 0.0;
      for (std::size_t q = 0; q < mf.data.size(); ++q) lhs += w_out.data[q] * mf.data[q];
      AdjointResult adj = apply_adjoint(map, w_out);
      double rhs = adj.offset;
      for (std::size_t q = 0; q < f.data.size(); ++q) rhs += adj.field.data[q] * f.data[q];
      worst = std::max(worst, std::abs(lhs - rhs));
    }
    record("map_adjoint_identity", worst, 1e-9, true);
  }

  // Neighborhoods equal an exhaustive sort over all sites.
  {
    Rng rng(seed + 300);
    int bad = 0;
    for (int trial = 0; trial < 50; ++trial) {
      int h = 4 + int(rng.below(6)), w = 4 + int(rng.below(6));
      FieldGeometry geom{8.0, 8.0, 3.5, 3.5};
      Affine2 g = Affine2::rotation_deg(rng.uniform(0.0, 360.0), {8.0 * w / 2, 8.0 * h / 2});
      int m = 1 + int(rng.below(3));
      int u = int(rng.below(std::uint64_t(w))), v = int(rng.below(std::uint64_t(h)));
      Neighborhood nb = neighborhood(geom, geom, h, w, g, m, u, v);
      Vec2 pt = backproject(geom, g, geom, double(u), double(v));
      std::vector<std::pair<double, int>> all;
      for (int sv = 0; sv < h; ++sv)
        for (int su = 0; su < w; ++su) {
          double dx = su - pt.x, dy = sv - pt.y;
          all.push_back({dx * dx + dy * dy, sv * w + su});
        }
      std::sort(all.begin(), all.end());
      std::vector<int> expect;
      for (int i = 0; i < std::min<int>(m * m, int(all.size())); ++i)
        expect.push_back(all[std::size_t(i)].second);
      std::sort(expect.begin(), expect.end());
      if (expect != nb.sites) ++bad;
    }
    record("neighborhood_oracle_mismatches", double(bad), 0.0, true);
  }

  // Finite-difference gradient checks.
  {
    Network net;
    net.in_h = 8;
    net.in_w = 8;
    net.in_d = 2;
    net.layers.push_back(conv_layer(2, 3, 3, 1, 1));
    net.layers.push_back(relu_layer());
    net.layers.push_back(maxpool_layer(2, 2));
    net.layers.push_back(fc_layer(4 * 4 * 3, 2));
    init_params(net, seed + 400);
    record("grad_check_network", grad_check_network(net, 8, 8, 2, seed + 401), 1e-4, true);

    FieldGeometry geom{8.0, 8.0, 3.5, 3.5};
    Affine2 g = Affine2::rotation_deg(30.0, {24.0, 24.0});
    TransformationLayer round_l = make_translayer(geom, 6, 6, 3, g, 3, TableMode::round);
    TransformationLayer bil_l = make_translayer(geom, 6, 6, 3, g, 3, TableMode::bilinear);
    Rng prng(seed + 402);
    for (double& v : round_l.conv.w) v += 0.1 * prng.uniform(-1.0, 1.0);
    for (double& v : bil_l.conv.w) v += 0.1 * prng.uniform(-1.0, 1.0);
    record("grad_check_translayer_round", grad_check_translayer(round_l, 6, 6, seed + 403), 1e-4,
           true);
    record("grad_check_translayer_bilinear", grad_check_translayer(bil_l, 6, 6, seed + 404), 1e-4,
           true);

    StitchingLayer st = make_stitch(3, 4, 1, 0);
    for (double& v : st.conv.w) v += 0.1 * prng.uniform(-1.0, 1.0);
    record("grad_check_stitch", grad_check_stitch(st, 6, 6, seed + 405), 1e-4, true);
  }

  // FS against exhaustive best-subset search on small instances.
  {
    auto best_subset_rss = [](const Eigen::MatrixXd& Xc, const Eigen::VectorXd& y, int k) {
      const int p = int(Xc.cols());
      Eigen::VectorXd yc = y.array() - y.mean();
      double best = yc.squaredNorm();
      std::vector<int> idx(std::size_t(k), 0);
      std::function<void(int, int)> rec = [&](int start, int depth) {
        if (depth == k) {
          Eigen::MatrixXd S(Xc.rows(), k);
          for (int c = 0; c < k; ++c) S.col(c) = Xc.col(idx[std::size_t(c)]);
          Eigen::MatrixXd gram = S.transpose() * S;
          gram.diagonal().array() += 1e-12 * gram.diagonal().maxCoeff();
          Eigen::VectorXd beta = gram.ldlt().solve(S.transpose() * yc);
          best = std::min(best, (yc - S * beta).squaredNorm());
          return;
        }
        for (int c = start; c <= p - (k - depth); ++c) {
          idx[std::size_t(depth)] = c;
          rec(c + 1, depth + 1);
        }
      };
      rec(0, 0);
      return best;
    };
    Rng rng(seed + 500);
    double worst_ratio = 0.0;
    int invalid = 0;
    for (int trial = 0; trial < 10; ++trial) {
      const int n = 24, p = 6;
      int k = 1 + int(rng.below(3));
      Eigen::MatrixXd X(n, p);
      Eigen::VectorXd y(n);
      for (int i = 0; i < n; ++i) {
        for (int j = 0; j < p; ++j) X(i, j) = rng.normal();
        y(i) = rng.normal();
      }
      Eigen::RowVectorXd xm = X.colwise().mean();
      Eigen::MatrixXd Xc = X.rowwise() - xm;
      Eigen::VectorXd norms = Xc.colwise().squaredNorm();
      FsResult fs = solve_fs(Xc, norms, xm, y, k, 1e-12);
      double best = best_subset_rss(Xc, y, k);
      if (fs.rss < best - 1e-9) ++invalid;
      worst_ratio = std::max(worst_ratio, best > 1e-12 ? fs.rss / best : 1.0);
    }
    record("fs_never_beats_best_subset", double(invalid), 0.0, true);
    record("fs_vs_best_subset_ratio", worst_ratio, 2.0, true);
  }

  json summary;
  summary["passed"] = all_ok;
  summary["checks"] = checks;
  return summary;
}

}  // namespace

nlohmann::json run_command(const std::string& command, const nlohmann::json& config) {
  require(config.is_object(), Errc::invalid_argument, "config must be a JSON object");
  set_worker_threads(config.value("threads", 1));
  set_log_verbosity(config.value("verbose", 0));

  if (config.value("dry_run", false)) {
    json plan;
    plan["command"] = command;
    plan["dry_run"] = true;
    json writes = json::array();
    for (const char* key : {"out", "csv", "curve_csv", "metrics_csv", "scores_csv"})
      if (config.contains(key) && config.at(key).is_string()) writes.push_back(config.at(key));
    plan["writes"] = writes;
    plan["config"] = config;
    return plan;
  }

  auto t0 = std::chrono::steady_clock::now();
  Config cfg(config, command);
  json summary;
  if (command == "synth")
    summary = run_synth(cfg);
  else if (command == "extract")
    summary = run_extract(cfg);
  else if (command == "train-net")
    summary = run_train_net(cfg);
  else if (command == "learn-map")
    summary = run_learn_map(cfg);
  else if (command == "eval-map")
    summary = run_eval_map(cfg);
  else if (command == "learn-translayer")
    summary = run_learn_translayer(cfg);
  else if (command == "stitch")
    summary = run_stitch(cfg);
  else if (command == "invariance")
    summary = run_invariance(cfg);
  else if (command == "compensate")
    summary = run_compensate(cfg);
  else if (command == "bench-pose")
    summary = run_bench_pose(cfg);
  else if (command == "selftest")
    summary = run_selftest(cfg);
  else
    fail(Errc::invalid_argument, "unknown command '" + command + "'");
  summary["command"] = command;
  summary["seconds"] =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return summary;
}

}  // namespace eqm
