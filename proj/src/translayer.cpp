#include "translayer.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include <nlohmann/json.hpp>

#include "common.hpp"

namespace eqm {

PermutationTable build_permutation_table(const FieldGeometry& geom, int h, int w, const Affine2& g,
                                         TableMode mode) {
  require(h > 0 && w > 0, Errc::invalid_argument, "build_permutation_table: bad grid");
  PermutationTable table;
  table.h = h;
  table.w = w;
  table.mode = mode;
  table.entries.assign(std::size_t(h) * std::size_t(w), {});
  table.live.assign(std::size_t(h) * std::size_t(w), 0);
  for (int v = 0; v < h; ++v) {
    for (int u = 0; u < w; ++u) {
      std::size_t s = std::size_t(v * w + u);
      if (mode == TableMode::round) {
        // Same nearest-site rule as map neighborhoods, so tied filters and
        // permutation anchors agree.
        if (!neighborhood_interior(geom, geom, h, w, g, 1, u, v)) continue;
        Neighborhood nb = neighborhood(geom, geom, h, w, g, 1, u, v);
        table.entries[s].push_back({nb.anchor, 1.0});
        table.live[s] = 1;
      } else {
        Vec2 pt = backproject(geom, g, geom, double(u), double(v));
        double fu = pt.x - std::floor(pt.x), fv = pt.y - std::floor(pt.y);
        int u0 = int(std::floor(pt.x)), v0 = int(std::floor(pt.y));
        bool ok = true;
        std::vector<PermEntry> entries;
        for (int dv = 0; dv <= 1 && ok; ++dv)
          for (int du = 0; du <= 1 && ok; ++du) {
            double wgt = (du ? fu : 1.0 - fu) * (dv ? fv : 1.0 - fv);
            if (wgt == 0.0) continue;  // exact-lattice points collapse
            int su = u0 + du, sv = v0 + dv;
            if (su < 0 || su >= w || sv < 0 || sv >= h) {
              ok = false;
              break;
            }
            entries.push_back({sv * w + su, wgt});
          }
        if (!ok) continue;
        table.entries[s] = std::move(entries);
        table.live[s] = 1;
      }
    }
  }
  return table;
}

TransformationLayer make_translayer(const FieldGeometry& geom, int h, int w, int d,
                                    const Affine2& g, int m, TableMode mode) {
  require(m >= 1 && m % 2 == 1, Errc::invalid_argument, "make_translayer: m must be odd");
  require(d > 0, Errc::invalid_argument, "make_translayer: bad depth");
  TransformationLayer layer;
  layer.table = build_permutation_table(geom, h, w, g, mode);
  layer.g = g;
  layer.geom = geom;
  layer.d = d;
  layer.m = m;
  layer.conv = conv_layer(d, d, m, 1, (m - 1) / 2);
  const int r = (m - 1) / 2;
  for (int o = 0; o < d; ++o)
    layer.conv.w[std::size_t(((o * m + r) * m + r) * d + o)] = 1.0;
  return layer;
}

FeatureField permute_sites(const PermutationTable& table, const FeatureField& f) {
  require(f.h == table.h && f.w == table.w, Errc::invalid_argument,
          "permute_sites: grid mismatch");
  FeatureField out(f.h, f.w, f.d);
  out.geom = f.geom;
  for (int s = 0; s < f.sites(); ++s) {
    double* dst = &out.data[std::size_t(s) * std::size_t(f.d)];
    for (const PermEntry& e : table.entries[std::size_t(s)]) {
      const double* src = &f.data[std::size_t(e.src) * std::size_t(f.d)];
      for (int t = 0; t < f.d; ++t) dst[t] += e.w * src[t];
    }
  }
  return out;
}

namespace {

Network conv_only(const TransformationLayer& layer) {
  Network tmp;
  tmp.in_h = layer.table.h;
  tmp.in_w = layer.table.w;
  tmp.in_d = layer.d;
  tmp.layers.push_back(layer.conv);
  return tmp;
}

}  // namespace

FeatureField translayer_apply(const TransformationLayer& layer, const FeatureField& f) {
  require(f.d == layer.d, Errc::invalid_argument, "translayer_apply: depth mismatch");
  FeatureField p = permute_sites(layer.table, f);
  Network tmp = conv_only(layer);
  return forward_all(tmp, p);
}

FeatureField translayer_backward(const TransformationLayer& layer, const FeatureField& input,
                                 const FeatureField& dout, LayerGrads& grads) {
  FeatureField p = permute_sites(layer.table, input);
  Network tmp = conv_only(layer);
  Activations acts = forward_range(tmp, 0, 1, p);
  std::vector<LayerGrads> g(1);
  g[0].dw.assign(layer.conv.w.size(), 0.0);
  g[0].db.assign(layer.conv.b.size(), 0.0);
  FeatureField dp = backward_range(tmp, acts, 0, 1, dout, g);
  for (std::size_t q = 0; q < grads.dw.size(); ++q) grads.dw[q] += g[0].dw[q];
  for (std::size_t q = 0; q < grads.db.size(); ++q) grads.db[q] += g[0].db[q];
  FeatureField dx(input.h, input.w, input.d);
  dx.geom = input.geom;
  for (int s = 0; s < input.sites(); ++s) {
    const double* src = &dp.data[std::size_t(s) * std::size_t(input.d)];
    for (const PermEntry& e : layer.table.entries[std::size_t(s)]) {
      double* dst = &dx.data[std::size_t(e.src) * std::size_t(input.d)];
      for (int t = 0; t < input.d; ++t) dst[t] += e.w * src[t];
    }
  }
  return dx;
}

double grad_check_translayer(const TransformationLayer& layer, int h, int w, std::uint64_t seed) {
  require(h == layer.table.h && w == layer.table.w, Errc::invalid_argument,
          "grad_check_translayer: grid mismatch");
  Rng rng(seed);
  FeatureField x(h, w, layer.d);
  for (double& v : x.data) v = rng.uniform(0.1, 1.0);
  TransformationLayer probe = layer;
  FeatureField out0 = translayer_apply(probe, x);
  FeatureField r(out0.h, out0.w, out0.d);
  for (double& v : r.data) v = rng.uniform(-1.0, 1.0);
  auto objective = [&]() {
    FeatureField out = translayer_apply(probe, x);
    double s = 0.0;
    for (std::size_t q = 0; q < out.data.size(); ++q) s += out.data[q] * r.data[q];
    return s;
  };
  LayerGrads grads;
  grads.dw.assign(probe.conv.w.size(), 0.0);
  grads.db.assign(probe.conv.b.size(), 0.0);
  FeatureField dx = translayer_backward(probe, x, r, grads);
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

TiedLayer map_to_translayer(const EquivariantMap& map, int m) {
  require(m >= 1 && m % 2 == 1, Errc::invalid_argument, "map_to_translayer: m must be odd");
  require(map.out_h == map.in_h && map.out_w == map.in_w && map.out_d == map.in_d,
          Errc::invalid_argument, "map_to_translayer: map must be square");
  require(map.out_geom.sx == map.in_geom.sx && map.out_geom.ox == map.in_geom.ox &&
              map.out_geom.sy == map.in_geom.sy && map.out_geom.oy == map.in_geom.oy,
          Errc::invalid_argument, "map_to_translayer: geometry mismatch");
  require(!map.valid_sites.empty(), Errc::invalid_argument,
          "map_to_translayer: map has no valid sites");
  const int h = map.out_h, w = map.out_w, d = map.out_d, r = (m - 1) / 2;
  TiedLayer tied;
  tied.layer = make_translayer(map.out_geom, h, w, d, map.g, m, TableMode::round);
  std::fill(tied.layer.conv.w.begin(), tied.layer.conv.w.end(), 0.0);

  // The layer convolves the permuted field, so filter tap q = (kx, ky) at
  // output site (u, v) reads the input site the table sources for window
  // site (u+kx-r, v+ky-r). Walk the window to get that src -> tap pairing;
  // taps whose window site is clipped or dead are unobservable at this site.
  const PermutationTable& table = tied.layer.table;
  auto window = [&](int u, int v) {
    std::vector<std::pair<int, int>> pairs;  // (input site, tap index)
    for (int ky = 0; ky < m; ++ky)
      for (int kx = 0; kx < m; ++kx) {
        int uu = u + kx - r, vv = v + ky - r;
        if (uu < 0 || uu >= w || vv < 0 || vv >= h) continue;
        const auto& ents = table.entries[std::size_t(vv * w + uu)];
        if (ents.empty()) continue;
        pairs.push_back({int(ents[0].src), ky * m + kx});
      }
    return pairs;
  };
  auto tap_of = [](const std::vector<std::pair<int, int>>& pairs, int site) {
    for (const auto& p : pairs)
      if (p.first == site) return p.second;
    return -1;
  };

  std::vector<double> acc(tied.layer.conv.w.size(), 0.0);
  std::vector<int> cnt(std::size_t(m) * std::size_t(m), 0);
  std::vector<double> bias_acc(std::size_t(d), 0.0);
  double stray = 0.0;  // coefficient mass no tap can reach

  for (int s : map.valid_sites) {
    auto pairs = window(s % w, s / w);
    for (const auto& p : pairs) ++cnt[std::size_t(p.second)];
    for (int t = 0; t < d; ++t) {
      bias_acc[std::size_t(t)] += map.bias[std::size_t(s * d + t)];
      for (const MapEntry& e : map.rows[std::size_t(s * d + t)]) {
        int site = int(e.col) / d, tin = int(e.col) % d;
        int q = tap_of(pairs, site);
        if (q >= 0)
          acc[std::size_t((t * m * m + q) * d + tin)] += e.w;
        else
          stray = std::max(stray, std::abs(e.w));
      }
    }
  }
  for (int t = 0; t < d; ++t)
    for (int q = 0; q < m * m; ++q) {
      if (cnt[std::size_t(q)] == 0) continue;
      for (int tin = 0; tin < d; ++tin)
        tied.layer.conv.w[std::size_t((t * m * m + q) * d + tin)] =
            acc[std::size_t((t * m * m + q) * d + tin)] / cnt[std::size_t(q)];
    }
  for (int t = 0; t < d; ++t)
    tied.layer.conv.b[std::size_t(t)] = bias_acc[std::size_t(t)] / double(map.valid_sites.size());

  // Residual: worst gap between any row and the tied filter over the taps
  // that row actually observes, plus any stray mass from above.
  double residual = stray;
  for (int s : map.valid_sites) {
    auto pairs = window(s % w, s / w);
    for (int t = 0; t < d; ++t) {
      std::vector<double> dense(std::size_t(m) * std::size_t(m) * std::size_t(d), 0.0);
      for (const MapEntry& e : map.rows[std::size_t(s * d + t)]) {
        int site = int(e.col) / d, tin = int(e.col) % d;
        int q = tap_of(pairs, site);
        if (q >= 0) dense[std::size_t(q * d + tin)] = e.w;
      }
      for (const auto& p : pairs)
        for (int tin = 0; tin < d; ++tin) {
          double tied_v = tied.layer.conv.w[std::size_t((t * m * m + p.second) * d + tin)];
          residual = std::max(residual,
                              std::abs(dense[std::size_t(p.second * d + tin)] - tied_v));
        }
      residual = std::max(residual, std::abs(map.bias[std::size_t(s * d + t)] -
                                             tied.layer.conv.b[std::size_t(t)]));
    }
  }
  tied.residual = residual;
  return tied;
}

double probe_error(const Network& net, int boundary, const TransformationLayer* layer,
                   const Dataset& ds, const Affine2* g_inverse) {
  require(!ds.items.empty(), Errc::invalid_argument, "probe_error: empty dataset");
  const int n = int(net.layers.size());
  int errors = 0;
  for (const DatasetItem& item : ds.items) {
    Image img = grayscale(item.image);
    if (img.width == 64 && img.height == 64) img = downsample2(img);
    if (g_inverse) img = warp(img, *g_inverse, Interp::bilinear, Pad::replicate);
    FeatureField f = forward_range(net, 0, boundary, image_to_field(img)).out();
    if (layer) f = translayer_apply(*layer, f);
    FeatureField out = forward_range(net, boundary, n, f).out();
    int pred = 0;
    for (int i = 1; i < out.d; ++i)
      if (out.data[std::size_t(i)] > out.data[std::size_t(pred)]) pred = i;
    errors += pred != item.cls;
  }
  return double(errors) / double(ds.items.size());
}

namespace {

double cached_error(const Network& net, int boundary, const TransformationLayer& layer,
                    const std::vector<FeatureField>& cached, const std::vector<int>& labels,
                    std::size_t limit) {
  const int n = int(net.layers.size());
  std::size_t use = std::min(limit, cached.size());
  int errors = 0;
  for (std::size_t i = 0; i < use; ++i) {
    FeatureField f = translayer_apply(layer, cached[i]);
    FeatureField out = forward_range(net, boundary, n, f).out();
    int pred = 0;
    for (int c = 1; c < out.d; ++c)
      if (out.data[std::size_t(c)] > out.data[std::size_t(pred)]) pred = c;
    errors += pred != labels[i];
  }
  return double(errors) / double(use);
}

}  // namespace

TaskTrainResult learn_map_task(const Network& net, int boundary, const Affine2& g,
                               const Dataset& train, const Dataset& val,
                               const TaskTrainConfig& cfg) {
  require(!train.items.empty() && !val.items.empty(), Errc::invalid_argument,
          "learn_map_task: empty dataset");
  const int n = int(net.layers.size());
  const Affine2 g_inv = inverse(g);

  // phi1 is frozen: cache its activations on the g^{-1}-warped inputs once.
  auto cache_fields = [&](const Dataset& ds) {
    std::vector<FeatureField> fields;
    fields.reserve(ds.items.size());
    for (const DatasetItem& item : ds.items) {
      Image img = grayscale(item.image);
      if (img.width == 64 && img.height == 64) img = downsample2(img);
      img = warp(img, g_inv, Interp::bilinear, Pad::replicate);
      fields.push_back(forward_range(net, 0, boundary, image_to_field(img)).out());
    }
    return fields;
  };
  std::vector<FeatureField> train_fields = cache_fields(train);
  std::vector<FeatureField> val_fields = cache_fields(val);
  std::vector<int> train_labels, val_labels;
  for (const DatasetItem& it : train.items) train_labels.push_back(it.cls);
  for (const DatasetItem& it : val.items) val_labels.push_back(it.cls);

  const FeatureField& f0 = train_fields[0];
  TaskTrainResult res;
  res.layer = make_translayer(f0.geom, f0.h, f0.w, f0.d, g, cfg.m, cfg.mode);

  const std::size_t train_eval_cap = 500;  // curve evaluation subset
  auto record = [&](int samples) {
    res.curve.push_back(
        {samples, cached_error(net, boundary, res.layer, train_fields, train_labels, train_eval_cap),
         cached_error(net, boundary, res.layer, val_fields, val_labels, val_fields.size())});
  };
  record(0);

  Rng rng(cfg.seed);
  std::vector<int> order(train_fields.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = int(i);
  LayerGrads grads, vel;
  grads.dw.assign(res.layer.conv.w.size(), 0.0);
  grads.db.assign(res.layer.conv.b.size(), 0.0);
  vel = grads;
  std::vector<LayerGrads> net_grads = make_grads(net);
  int samples_seen = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(order.data(), order.size());
    for (std::size_t start = 0; start < order.size(); start += std::size_t(cfg.batch)) {
      std::size_t stop = std::min(order.size(), start + std::size_t(cfg.batch));
      std::fill(grads.dw.begin(), grads.dw.end(), 0.0);
      std::fill(grads.db.begin(), grads.db.end(), 0.0);
      for (std::size_t i = start; i < stop; ++i) {
        const FeatureField& a = train_fields[std::size_t(order[i])];
        FeatureField f = translayer_apply(res.layer, a);
        Activations acts = forward_range(net, boundary, n, f);
        LossGrad lg = softmax_logloss(acts.out(), train_labels[std::size_t(order[i])]);
        require(std::isfinite(lg.loss), Errc::numeric,
                "learn_map_task: non-finite loss at epoch " + std::to_string(epoch));
        zero_grads(net, net_grads);
        FeatureField df = backward_range(net, acts, boundary, n, lg.dlogits, net_grads);
        translayer_backward(res.layer, a, df, grads);
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

void save_translayer(const TransformationLayer& layer, const std::string& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  require(!ec, Errc::io, "save_translayer: cannot create " + dir);
  nlohmann::json manifest;
  manifest["g"] = to_array(layer.g);
  manifest["geom"] = {layer.geom.sx, layer.geom.sy, layer.geom.ox, layer.geom.oy};
  manifest["grid"] = {layer.table.h, layer.table.w};
  manifest["d"] = layer.d;
  manifest["m"] = layer.m;
  manifest["mode"] = layer.table.mode == TableMode::round ? "round" : "bilinear";
  std::ofstream out(dir + "/manifest.json");
  require(bool(out), Errc::io, "save_translayer: cannot write manifest in " + dir);
  out << manifest.dump(2) << "\n";
  FeatureField wf(layer.d, layer.m * layer.m, layer.d);
  wf.data = layer.conv.w;
  save_field(wf, dir + "/conv_w.eqf");
  FeatureField bf(1, 1, layer.d);
  bf.data = layer.conv.b;
  save_field(bf, dir + "/conv_b.eqf");
}

TransformationLayer load_translayer(const std::string& dir) {
  std::ifstream in(dir + "/manifest.json");
  require(bool(in), Errc::io, "load_translayer: missing manifest.json in " + dir);
  nlohmann::json manifest;
  try {
    in >> manifest;
  } catch (const nlohmann::json::exception& e) {
    fail(Errc::io, std::string("load_translayer: bad manifest: ") + e.what());
  }
  std::array<double, 6> garr{};
  for (int i = 0; i < 6; ++i) garr[std::size_t(i)] = manifest.at("g").at(std::size_t(i));
  FieldGeometry geom{manifest.at("geom").at(0), manifest.at("geom").at(1),
                     manifest.at("geom").at(2), manifest.at("geom").at(3)};
  std::string mode = manifest.at("mode");
  require(mode == "round" || mode == "bilinear", Errc::io, "load_translayer: bad mode " + mode);
  TransformationLayer layer =
      make_translayer(geom, manifest.at("grid").at(0), manifest.at("grid").at(1),
                      manifest.at("d"), from_array(garr), manifest.at("m"),
                      mode == "round" ? TableMode::round : TableMode::bilinear);
  FeatureField wf = load_field(dir + "/conv_w.eqf");
  require(wf.data.size() == layer.conv.w.size(), Errc::io,
          "load_translayer: filter size mismatch");
  layer.conv.w = wf.data;
  FeatureField bf = load_field(dir + "/conv_b.eqf");
  require(bf.data.size() == layer.conv.b.size(), Errc::io, "load_translayer: bias size mismatch");
  layer.conv.b = bf.data;
  return layer;
}

}  // namespace eqm
