#include "stitch.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include <nlohmann/json.hpp>

#include "common.hpp"

namespace eqm {

StitchingLayer make_stitch(int d_in, int d_out, int s, int resample) {
  require(d_in > 0 && d_out > 0, Errc::invalid_argument, "make_stitch: bad depth");
  require(s >= 1 && s % 2 == 1, Errc::invalid_argument, "make_stitch: s must be odd");
  require(resample >= -1 && resample <= 1, Errc::invalid_argument,
          "make_stitch: resample must be -1, 0 or 1");
  StitchingLayer layer;
  layer.resample = resample;
  layer.conv = conv_layer(d_in, d_out, s, 1, (s - 1) / 2);
  const int r = (s - 1) / 2;
  for (int o = 0; o < std::min(d_in, d_out); ++o)
    layer.conv.w[std::size_t(((o * s + r) * s + r) * d_in + o)] = 1.0;
  return layer;
}

namespace {

// Nearest-neighbour 2x grid changes; geometry keeps site centers aligned
// on average (up splits each site into a 2x2 block around it).
FeatureField resample_field(const FeatureField& f, int dir) {
  if (dir == 0) return f;
  if (dir > 0) {
    FeatureField out(f.h * 2, f.w * 2, f.d);
    out.geom = {f.geom.sx / 2, f.geom.sy / 2, f.geom.ox - f.geom.sx / 4, f.geom.oy - f.geom.sy / 4};
    for (int v = 0; v < out.h; ++v)
      for (int u = 0; u < out.w; ++u)
        for (int t = 0; t < f.d; ++t) out.at(u, v, t) = f.at(u / 2, v / 2, t);
    return out;
  }
  require(f.h >= 2 && f.w >= 2, Errc::invalid_argument, "resample_field: grid too small");
  FeatureField out(f.h / 2, f.w / 2, f.d);
  out.geom = {f.geom.sx * 2, f.geom.sy * 2, f.geom.ox, f.geom.oy};
  for (int v = 0; v < out.h; ++v)
    for (int u = 0; u < out.w; ++u)
      for (int t = 0; t < f.d; ++t) out.at(u, v, t) = f.at(u * 2, v * 2, t);
  return out;
}

FeatureField resample_backward(const FeatureField& dout, const FeatureField& input, int dir) {
  if (dir == 0) return dout;
  FeatureField dx(input.h, input.w, input.d);
  dx.geom = input.geom;
  if (dir > 0) {
    for (int v = 0; v < dout.h; ++v)
      for (int u = 0; u < dout.w; ++u)
        for (int t = 0; t < input.d; ++t) dx.at(u / 2, v / 2, t) += dout.at(u, v, t);
  } else {
    for (int v = 0; v < dout.h; ++v)
      for (int u = 0; u < dout.w; ++u)
        for (int t = 0; t < input.d; ++t) dx.at(u * 2, v * 2, t) = dout.at(u, v, t);
  }
  return dx;
}

Network conv_only(const StitchingLayer& layer, int h, int w) {
  Network tmp;
  tmp.in_h = h;
  tmp.in_w = w;
  tmp.in_d = layer.conv.in_ch;
  tmp.layers.push_back(layer.conv);
  return tmp;
}

}  // namespace

FeatureField stitch_apply(const StitchingLayer& layer, const FeatureField& f) {
  require(f.d == layer.conv.in_ch, Errc::invalid_argument, "stitch_apply: depth mismatch");
  FeatureField r = resample_field(f, layer.resample);
  Network tmp = conv_only(layer, r.h, r.w);
  return forward_all(tmp, r);
}

FeatureField stitch_backward(const StitchingLayer& layer, const FeatureField& input,
                             const FeatureField& dout, LayerGrads& grads) {
  FeatureField r = resample_field(input, layer.resample);
  Network tmp = conv_only(layer, r.h, r.w);
  Activations acts = forward_range(tmp, 0, 1, r);
  std::vector<LayerGrads> g(1);
  g[0].dw.assign(layer.conv.w.size(), 0.0);
  g[0].db.assign(layer.conv.b.size(), 0.0);
  FeatureField dr = backward_range(tmp, acts, 0, 1, dout, g);
  for (std::size_t q = 0; q < grads.dw.size(); ++q) grads.dw[q] += g[0].dw[q];
  for (std::size_t q = 0; q < grads.db.size(); ++q) grads.db[q] += g[0].db[q];
  return resample_backward(dr, input, layer.resample);
}

double grad_check_stitch(const StitchingLayer& layer, int h, int w, std::uint64_t seed) {
  Rng rng(seed);
  FeatureField x(h, w, layer.conv.in_ch);
  for (double& v : x.data) v = rng.uniform(0.1, 1.0);
  StitchingLayer probe = layer;
  FeatureField out0 = stitch_apply(probe, x);
  FeatureField r(out0.h, out0.w, out0.d);
  for (double& v : r.data) v = rng.uniform(-1.0, 1.0);
  auto objective = [&]() {
    FeatureField out = stitch_apply(probe, x);
    double s = 0.0;
    for (std::size_t q = 0; q < out.data.size(); ++q) s += out.data[q] * r.data[q];
    return s;
  };
  LayerGrads grads;
  grads.dw.assign(probe.conv.w.size(), 0.0);
  grads.db.assign(probe.conv.b.size(), 0.0);
  FeatureField dx = stitch_backward(probe, x, r, grads);
  const double step = 1e-5;
  double worst = 0.0;
  auto check = [&](double* param, double analytic) {
    double saved = *param;
    *param = saved + step;
    double up = objective();
    *param = saved - step;
    double down = objective();
    *param = saved;
    double numeric = (up - down) / (2.0 * step);
    double rel = std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-6});
    worst = std::max(worst, rel);
  };
  for (std::size_t q = 0; q < probe.conv.w.size(); ++q) check(&probe.conv.w[q], grads.dw[q]);
  for (std::size_t q = 0; q < probe.conv.b.size(); ++q) check(&probe.conv.b[q], grads.db[q]);
  for (std::size_t q = 0; q < x.data.size(); ++q) check(&x.data[q], dx.data[q]);
  return worst;
}

double franken_error(const Network& net_a, const Network& net_b, int boundary,
                     const StitchingLayer& layer, const Dataset& ds) {
  require(!ds.items.empty(), Errc::invalid_argument, "franken_error: empty dataset");
  const int nb = int(net_b.layers.size());
  int errors = 0;
  for (const DatasetItem& item : ds.items) {
    FeatureField f = forward_range(net_a, 0, boundary, net_input(item.image)).out();
    f = stitch_apply(layer, f);
    FeatureField out = forward_range(net_b, boundary, nb, f).out();
    int pred = 0;
    for (int i = 1; i < out.d; ++i)
      if (out.data[std::size_t(i)] > out.data[std::size_t(pred)]) pred = i;
    errors += pred != item.cls;
  }
  return double(errors) / double(ds.items.size());
}

namespace {

double cached_error(const Network& net_b, int boundary, const StitchingLayer& layer,
                    const std::vector<FeatureField>& cached, const std::vector<int>& labels,
                    std::size_t limit) {
  const int n = int(net_b.layers.size());
  std::size_t use = std::min(limit, cached.size());
  int errors = 0;
  for (std::size_t i = 0; i < use; ++i) {
    FeatureField f = stitch_apply(layer, cached[i]);
    FeatureField out = forward_range(net_b, boundary, n, f).out();
    int pred = 0;
    for (int c = 1; c < out.d; ++c)
      if (out.data[std::size_t(c)] > out.data[std::size_t(pred)]) pred = c;
    errors += pred != labels[i];
  }
  return double(errors) / double(use);
}

}  // namespace

StitchTrainResult learn_stitch(const Network& net_a, const Network& net_b, int boundary,
                               const Dataset& train, const Dataset& val,
                               const StitchTrainConfig& cfg) {
  require(!train.items.empty() && !val.items.empty(), Errc::invalid_argument,
          "learn_stitch: empty dataset");
  const int n = int(net_b.layers.size());

  // Both feature extractors are frozen: cache phi1_A once, and read the
  // target depth off phi1_B.
  auto cache_fields = [&](const Network& net, const Dataset& ds) {
    std::vector<FeatureField> fields;
    fields.reserve(ds.items.size());
    for (const DatasetItem& item : ds.items)
      fields.push_back(forward_range(net, 0, boundary, net_input(item.image)).out());
    return fields;
  };
  std::vector<FeatureField> train_fields = cache_fields(net_a, train);
  std::vector<FeatureField> val_fields = cache_fields(net_a, val);
  std::vector<int> train_labels, val_labels;
  for (const DatasetItem& it : train.items) train_labels.push_back(it.cls);
  for (const DatasetItem& it : val.items) val_labels.push_back(it.cls);

  FeatureField probe_b = forward_range(net_b, 0, boundary, net_input(val.items[0].image)).out();
  const FeatureField& f0 = train_fields[0];
  StitchTrainResult res;
  res.layer = make_stitch(f0.d, probe_b.d, cfg.s, cfg.resample);
  {
    FeatureField shaped = stitch_apply(res.layer, f0);
    require(shaped.h == probe_b.h && shaped.w == probe_b.w, Errc::invalid_argument,
            "learn_stitch: stitched grid does not match the target network");
  }

  const std::size_t train_eval_cap = 500;  // curve evaluation subset
  auto record = [&](int samples) {
    res.curve.push_back(
        {samples, cached_error(net_b, boundary, res.layer, train_fields, train_labels, train_eval_cap),
         cached_error(net_b, boundary, res.layer, val_fields, val_labels, val_fields.size())});
  };
  record(0);

  Rng rng(cfg.seed);
  std::vector<int> order(train_fields.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = int(i);
  LayerGrads grads, vel;
  grads.dw.assign(res.layer.conv.w.size(), 0.0);
  grads.db.assign(res.layer.conv.b.size(), 0.0);
  vel = grads;
  std::vector<LayerGrads> net_grads = make_grads(net_b);
  int samples_seen = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(order.data(), order.size());
    for (std::size_t start = 0; start < order.size(); start += std::size_t(cfg.batch)) {
      std::size_t stop = std::min(order.size(), start + std::size_t(cfg.batch));
      std::fill(grads.dw.begin(), grads.dw.end(), 0.0);
      std::fill(grads.db.begin(), grads.db.end(), 0.0);
      for (std::size_t i = start; i < stop; ++i) {
        const FeatureField& a = train_fields[std::size_t(order[i])];
        FeatureField f = stitch_apply(res.layer, a);
        Activations acts = forward_range(net_b, boundary, n, f);
        LossGrad lg = softmax_logloss(acts.out(), train_labels[std::size_t(order[i])]);
        require(std::isfinite(lg.loss), Errc::numeric,
                "learn_stitch: non-finite loss at epoch " + std::to_string(epoch));
        zero_grads(net_b, net_grads);
        FeatureField df = backward_range(net_b, acts, boundary, n, lg.dlogits, net_grads);
        stitch_backward(res.layer, a, df, grads);
        ++samples_seen;
      }
      double scale = 1.0 / double(stop - start);
      for (std::size_t q = 0; q < res.layer.conv.w.size(); ++q) {
        vel.dw[q] = cfg.momentum * vel.dw[q] - cfg.lr * grads.dw[q] * scale;
        res.layer.conv.w[q] += vel.dw[q];
      }
      for (std::size_t q = 0; q < res.layer.conv.b.size(); ++q) {
        vel.db[q] = cfg.momentum * vel.db[q] - cfg.lr * grads.db[q] * scale;
        res.layer.conv.b[q] += vel.db[q];
      }
    }
    record(samples_seen);
  }
  return res;
}

void save_stitch(const StitchingLayer& layer, const std::string& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  require(!ec, Errc::io, "save_stitch: cannot create " + dir);
  nlohmann::json manifest;
  manifest["in_ch"] = layer.conv.in_ch;
  manifest["out_ch"] = layer.conv.out_ch;
  manifest["s"] = layer.conv.k;
  manifest["resample"] = layer.resample;
  std::ofstream out(dir + "/manifest.json");
  require(bool(out), Errc::io, "save_stitch: cannot write manifest in " + dir);
  out << manifest.dump(2) << "\n";
  FeatureField wf(layer.conv.out_ch, layer.conv.k * layer.conv.k, layer.conv.in_ch);
  wf.data = layer.conv.w;
  save_field(wf, dir + "/conv_w.eqf");
  FeatureField bf(1, 1, layer.conv.out_ch);
  bf.data = layer.conv.b;
  save_field(bf, dir + "/conv_b.eqf");
}

StitchingLayer load_stitch(const std::string& dir) {
  std::ifstream in(dir + "/manifest.json");
  require(bool(in), Errc::io, "load_stitch: missing manifest.json in " + dir);
  nlohmann::json manifest;
  try {
    in >> manifest;
  } catch (const nlohmann::json::exception& e) {
    fail(Errc::io, std::string("load_stitch: bad manifest: ") + e.what());
  }
  StitchingLayer layer = make_stitch(manifest.at("in_ch"), manifest.at("out_ch"),
                                     manifest.at("s"), manifest.at("resample"));
  FeatureField wf = load_field(dir + "/conv_w.eqf");
  require(wf.data.size() == layer.conv.w.size(), Errc::io, "load_stitch: filter size mismatch");
  layer.conv.w = wf.data;
  FeatureField bf = load_field(dir + "/conv_b.eqf");
  require(bf.data.size() == layer.conv.b.size(), Errc::io, "load_stitch: bias size mismatch");
  layer.conv.b = bf.data;
  return layer;
}

}  // namespace eqm
