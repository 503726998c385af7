#include "net.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "common.hpp"

namespace eqm {

Layer conv_layer(int in_ch, int out_ch, int k, int stride, int pad) {
  require(in_ch > 0 && out_ch > 0 && k > 0 && stride > 0 && pad >= 0, Errc::invalid_argument,
          "conv_layer: bad parameters");
  Layer l;
  l.kind = LayerKind::conv;
  l.in_ch = in_ch;
  l.out_ch = out_ch;
  l.k = k;
  l.stride = stride;
  l.pad = pad;
  l.w.assign(std::size_t(out_ch) * k * k * in_ch, 0.0);
  l.b.assign(std::size_t(out_ch), 0.0);
  return l;
}

Layer relu_layer() {
  Layer l;
  l.kind = LayerKind::relu;
  return l;
}

Layer maxpool_layer(int k, int stride) {
  require(k > 0 && stride > 0, Errc::invalid_argument, "maxpool_layer: bad parameters");
  Layer l;
  l.kind = LayerKind::maxpool;
  l.k = k;
  l.stride = stride;
  return l;
}

Layer fc_layer(int in_total, int out) {
  require(in_total > 0 && out > 0, Errc::invalid_argument, "fc_layer: bad parameters");
  Layer l;
  l.kind = LayerKind::fc;
  l.in_total = in_total;
  l.out_ch = out;
  l.w.assign(std::size_t(out) * std::size_t(in_total), 0.0);
  l.b.assign(std::size_t(out), 0.0);
  return l;
}

void init_params(Network& net, std::uint64_t seed) {
  Rng rng(seed);
  for (Layer& l : net.layers) {
    if (l.kind == LayerKind::conv) {
      double std = std::sqrt(2.0 / double(l.k * l.k * l.in_ch));
      for (double& v : l.w) v = std * rng.normal();
      std::fill(l.b.begin(), l.b.end(), 0.0);
    } else if (l.kind == LayerKind::fc) {
      double std = std::sqrt(2.0 / double(l.in_total));
      for (double& v : l.w) v = std * rng.normal();
      std::fill(l.b.begin(), l.b.end(), 0.0);
    }
  }
}

Network make_t3(int num_classes, std::uint64_t seed) {
  require(num_classes >= 2, Errc::invalid_argument, "make_t3: need >= 2 classes");
  Network net;
  net.in_h = net.in_w = 32;
  net.in_d = 1;
  net.layers.push_back(conv_layer(1, 16, 6, 2, 2));    // 16x16x16, probe 1
  net.layers.push_back(relu_layer());
  net.layers.push_back(maxpool_layer(2, 2));           // 8x8x16
  net.layers.push_back(conv_layer(16, 32, 3, 1, 1));   // 8x8x32, probe 2
  net.layers.push_back(relu_layer());
  net.layers.push_back(conv_layer(32, 32, 3, 1, 1));   // 8x8x32, probe 3
  net.layers.push_back(relu_layer());
  net.layers.push_back(fc_layer(8 * 8 * 32, num_classes));
  init_params(net, seed);
  return net;
}

int t3_probe_boundary(int probe) {
  switch (probe) {
    case 1: return 1;
    case 2: return 4;
    case 3: return 6;
  }
  fail(Errc::invalid_argument, "t3_probe_boundary: probe must be 1..3");
}

namespace {

int out_extent(int in, int k, int pad, int stride) {
  int num = in + 2 * pad - k;
  require(num >= 0, Errc::invalid_argument, "layer window larger than input");
  return num / stride + 1;
}

FeatureField conv_forward(const Layer& l, const FeatureField& x) {
  require(x.d == l.in_ch, Errc::invalid_argument, "conv: channel mismatch");
  int oh = out_extent(x.h, l.k, l.pad, l.stride);
  int ow = out_extent(x.w, l.k, l.pad, l.stride);
  FeatureField y(oh, ow, l.out_ch);
  y.geom = x.geom.after_window(l.k, l.pad, l.stride);
  const int kk = l.k * l.k * l.in_ch;
  Eigen::MatrixXd patches(kk, oh * ow);
  patches.setZero();
  for (int v = 0; v < oh; ++v) {
    for (int u = 0; u < ow; ++u) {
      double* col = patches.col(v * ow + u).data();
      for (int i = 0; i < l.k; ++i) {
        int sy = v * l.stride - l.pad + i;
        if (sy < 0 || sy >= x.h) continue;
        for (int j = 0; j < l.k; ++j) {
          int sx = u * l.stride - l.pad + j;
          if (sx < 0 || sx >= x.w) continue;
          const double* src = &x.data[std::size_t((sy * x.w + sx) * x.d)];
          double* dst = col + (i * l.k + j) * l.in_ch;
          for (int c = 0; c < l.in_ch; ++c) dst[c] = src[c];
        }
      }
    }
  }
  Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> W(
      l.w.data(), l.out_ch, kk);
  Eigen::MatrixXd out = W * patches;  // out_ch x sites
  for (int s = 0; s < oh * ow; ++s)
    for (int o = 0; o < l.out_ch; ++o)
      y.data[std::size_t(s * l.out_ch + o)] = out(o, s) + l.b[std::size_t(o)];
  return y;
}

FeatureField conv_backward(const Layer& l, const FeatureField& x, const FeatureField& dy,
                           LayerGrads& g) {
  const int oh = dy.h, ow = dy.w;
  const int kk = l.k * l.k * l.in_ch;
  Eigen::MatrixXd dz(l.out_ch, oh * ow);
  for (int s = 0; s < oh * ow; ++s)
    for (int o = 0; o < l.out_ch; ++o) dz(o, s) = dy.data[std::size_t(s * l.out_ch + o)];
  // Rebuild patches; trading memory for recompute keeps activations small.
  Eigen::MatrixXd patches(kk, oh * ow);
  patches.setZero();
  for (int v = 0; v < oh; ++v)
    for (int u = 0; u < ow; ++u) {
      double* col = patches.col(v * ow + u).data();
      for (int i = 0; i < l.k; ++i) {
        int sy = v * l.stride - l.pad + i;
        if (sy < 0 || sy >= x.h) continue;
        for (int j = 0; j < l.k; ++j) {
          int sx = u * l.stride - l.pad + j;
          if (sx < 0 || sx >= x.w) continue;
          const double* src = &x.data[std::size_t((sy * x.w + sx) * x.d)];
          double* dst = col + (i * l.k + j) * l.in_ch;
          for (int c = 0; c < l.in_ch; ++c) dst[c] = src[c];
        }
      }
    }
  Eigen::MatrixXd dW = dz * patches.transpose();  // out_ch x kk
  for (int o = 0; o < l.out_ch; ++o) {
    for (int q = 0; q < kk; ++q) g.dw[std::size_t(o * kk + q)] += dW(o, q);
    g.db[std::size_t(o)] += dz.row(o).sum();
  }
  Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> W(
      l.w.data(), l.out_ch, kk);
  Eigen::MatrixXd dpatches = W.transpose() * dz;  // kk x sites
  FeatureField dx(x.h, x.w, x.d);
  dx.geom = x.geom;
  for (int v = 0; v < oh; ++v)
    for (int u = 0; u < ow; ++u) {
      const double* col = dpatches.col(v * ow + u).data();
      for (int i = 0; i < l.k; ++i) {
        int sy = v * l.stride - l.pad + i;
        if (sy < 0 || sy >= x.h) continue;
        for (int j = 0; j < l.k; ++j) {
          int sx = u * l.stride - l.pad + j;
          if (sx < 0 || sx >= x.w) continue;
          double* dst = &dx.data[std::size_t((sy * x.w + sx) * x.d)];
          const double* src = col + (i * l.k + j) * l.in_ch;
          for (int c = 0; c < l.in_ch; ++c) dst[c] += src[c];
        }
      }
    }
  return dx;
}

FeatureField pool_forward(const Layer& l, const FeatureField& x) {
  int oh = out_extent(x.h, l.k, 0, l.stride);
  int ow = out_extent(x.w, l.k, 0, l.stride);
  FeatureField y(oh, ow, x.d);
  y.geom = x.geom.after_window(l.k, 0, l.stride);
  for (int v = 0; v < oh; ++v)
    for (int u = 0; u < ow; ++u)
      for (int c = 0; c < x.d; ++c) {
        double best = -1e300;
        for (int i = 0; i < l.k; ++i)
          for (int j = 0; j < l.k; ++j) {
            double val = x.at(u * l.stride + j, v * l.stride + i, c);
            if (val > best) best = val;  // first max wins; backward matches
          }
        y.at(u, v, c) = best;
      }
  return y;
}

FeatureField pool_backward(const Layer& l, const FeatureField& x, const FeatureField& dy) {
  FeatureField dx(x.h, x.w, x.d);
  dx.geom = x.geom;
  for (int v = 0; v < dy.h; ++v)
    for (int u = 0; u < dy.w; ++u)
      for (int c = 0; c < x.d; ++c) {
        double best = -1e300;
        int bu = -1, bv = -1;
        for (int i = 0; i < l.k; ++i)
          for (int j = 0; j < l.k; ++j) {
            double val = x.at(u * l.stride + j, v * l.stride + i, c);
            if (val > best) {
              best = val;
              bu = u * l.stride + j;
              bv = v * l.stride + i;
            }
          }
        dx.at(bu, bv, c) += dy.at(u, v, c);
      }
  return dx;
}

FeatureField fc_forward(const Layer& l, const FeatureField& x) {
  require(x.components() == l.in_total, Errc::invalid_argument, "fc: input size mismatch");
  FeatureField y(1, 1, l.out_ch);
  y.geom = FieldGeometry{};
  Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> W(
      l.w.data(), l.out_ch, l.in_total);
  Eigen::Map<const Eigen::VectorXd> xv(x.data.data(), l.in_total);
  Eigen::Map<const Eigen::VectorXd> bv(l.b.data(), l.out_ch);
  Eigen::Map<Eigen::VectorXd>(y.data.data(), l.out_ch) = W * xv + bv;
  return y;
}

FeatureField fc_backward(const Layer& l, const FeatureField& x, const FeatureField& dy,
                         LayerGrads& g) {
  Eigen::Map<const Eigen::VectorXd> xv(x.data.data(), l.in_total);
  Eigen::Map<const Eigen::VectorXd> dz(dy.data.data(), l.out_ch);
  Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> dW(
      g.dw.data(), l.out_ch, l.in_total);
  dW.noalias() += dz * xv.transpose();
  for (int o = 0; o < l.out_ch; ++o) g.db[std::size_t(o)] += dz[o];
  Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> W(
      l.w.data(), l.out_ch, l.in_total);
  FeatureField dx(x.h, x.w, x.d);
  dx.geom = x.geom;
  Eigen::Map<Eigen::VectorXd>(dx.data.data(), l.in_total) = W.transpose() * dz;
  return dx;
}

}  // namespace

Activations forward_range(const Network& net, int b0, int b1, const FeatureField& input) {
  require(0 <= b0 && b0 <= b1 && b1 <= int(net.layers.size()), Errc::invalid_argument,
          "forward_range: bad boundaries");
  Activations acts;
  acts.begin = b0;
  acts.x.push_back(input);
  for (int i = b0; i < b1; ++i) {
    const Layer& l = net.layers[std::size_t(i)];
    const FeatureField& x = acts.x.back();
    switch (l.kind) {
      case LayerKind::conv: acts.x.push_back(conv_forward(l, x)); break;
      case LayerKind::relu: {
        FeatureField y = x;
        for (double& v : y.data) v = v > 0.0 ? v : 0.0;
        acts.x.push_back(std::move(y));
        break;
      }
      case LayerKind::maxpool: acts.x.push_back(pool_forward(l, x)); break;
      case LayerKind::fc: acts.x.push_back(fc_forward(l, x)); break;
    }
  }
  return acts;
}

FeatureField forward_all(const Network& net, const FeatureField& input) {
  return forward_range(net, 0, int(net.layers.size()), input).out();
}

std::vector<LayerGrads> make_grads(const Network& net) {
  std::vector<LayerGrads> grads(net.layers.size());
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    grads[i].dw.assign(net.layers[i].w.size(), 0.0);
    grads[i].db.assign(net.layers[i].b.size(), 0.0);
  }
  return grads;
}

void zero_grads(const Network& net, std::vector<LayerGrads>& grads) {
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    std::fill(grads[i].dw.begin(), grads[i].dw.end(), 0.0);
    std::fill(grads[i].db.begin(), grads[i].db.end(), 0.0);
  }
}

FeatureField backward_range(const Network& net, const Activations& acts, int b0, int b1,
                            const FeatureField& dout, std::vector<LayerGrads>& grads) {
  require(acts.begin == b0 && int(acts.x.size()) == b1 - b0 + 1, Errc::invalid_argument,
          "backward_range: activations do not match range");
  FeatureField d = dout;
  for (int i = b1 - 1; i >= b0; --i) {
    const Layer& l = net.layers[std::size_t(i)];
    const FeatureField& x = acts.x[std::size_t(i - b0)];
    switch (l.kind) {
      case LayerKind::conv: d = conv_backward(l, x, d, grads[std::size_t(i)]); break;
      case LayerKind::relu: {
        FeatureField dx = d;
        for (std::size_t q = 0; q < dx.data.size(); ++q)
          if (x.data[q] <= 0.0) dx.data[q] = 0.0;
        d = std::move(dx);
        break;
      }
      case LayerKind::maxpool: d = pool_backward(l, x, d); break;
      case LayerKind::fc: d = fc_backward(l, x, d, grads[std::size_t(i)]); break;
    }
  }
  return d;
}

LossGrad softmax_logloss(const FeatureField& logits, int label) {
  const int c = logits.d;
  require(logits.h == 1 && logits.w == 1 && label >= 0 && label < c, Errc::invalid_argument,
          "softmax_logloss: bad logits/label");
  LossGrad lg;
  double mx = logits.data[0];
  for (int i = 1; i < c; ++i) mx = std::max(mx, logits.data[std::size_t(i)]);
  double z = 0.0;
  for (int i = 0; i < c; ++i) z += std::exp(logits.data[std::size_t(i)] - mx);
  lg.dlogits = FeatureField(1, 1, c);
  lg.pred = 0;
  for (int i = 0; i < c; ++i) {
    double p = std::exp(logits.data[std::size_t(i)] - mx) / z;
    lg.dlogits.data[std::size_t(i)] = p;
    if (logits.data[std::size_t(i)] > logits.data[std::size_t(lg.pred)]) lg.pred = i;
  }
  lg.loss = -(logits.data[std::size_t(label)] - mx - std::log(z));
  lg.dlogits.data[std::size_t(label)] -= 1.0;
  return lg;
}

Image downsample2(const Image& img) {
  require(img.width % 2 == 0 && img.height % 2 == 0, Errc::invalid_argument,
          "downsample2: odd dimensions");
  Image out(img.width / 2, img.height / 2, img.channels);
  for (int y = 0; y < out.height; ++y)
    for (int x = 0; x < out.width; ++x)
      for (int c = 0; c < img.channels; ++c)
        out.at(x, y, c) = 0.25 * (img.at(2 * x, 2 * y, c) + img.at(2 * x + 1, 2 * y, c) +
                                  img.at(2 * x, 2 * y + 1, c) + img.at(2 * x + 1, 2 * y + 1, c));
  return out;
}

FeatureField image_to_field(const Image& gray) {
  require(gray.channels == 1, Errc::invalid_argument, "image_to_field: need 1 channel");
  FeatureField f(gray.height, gray.width, 1);
  for (int y = 0; y < gray.height; ++y)
    for (int x = 0; x < gray.width; ++x) f.at(x, y, 0) = gray.at(x, y, 0);
  return f;
}

FeatureField net_input(const Image& img) {
  Image g = grayscale(img);
  if (g.width == 64 && g.height == 64) g = downsample2(g);
  return image_to_field(g);
}

namespace {

Image flip_image_h(const Image& img) {
  Image out(img.width, img.height, img.channels);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < img.channels; ++c) out.at(x, y, c) = img.at(img.width - 1 - x, y, c);
  return out;
}

}  // namespace

std::vector<CurvePoint> train_network(Network& net, const Dataset& train, const TrainConfig& cfg) {
  require(!train.items.empty(), Errc::invalid_argument, "train_network: empty dataset");
  require(cfg.epochs >= 0 && cfg.batch >= 1, Errc::invalid_argument, "train_network: bad config");
  for (const DatasetItem& it : train.items)
    require(it.cls >= 0, Errc::invalid_argument, "train_network: unlabeled item");

  Rng rng(cfg.seed);
  std::vector<int> order(train.items.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = int(i);
  std::vector<LayerGrads> grads = make_grads(net);
  std::vector<LayerGrads> vel = make_grads(net);
  const int nlayers = int(net.layers.size());
  std::vector<CurvePoint> curve;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(order.data(), order.size());
    double loss_acc = 0.0;
    int err_acc = 0, seen = 0;
    for (std::size_t start = 0; start < order.size(); start += std::size_t(cfg.batch)) {
      std::size_t stop = std::min(order.size(), start + std::size_t(cfg.batch));
      zero_grads(net, grads);
      for (std::size_t i = start; i < stop; ++i) {
        const DatasetItem& item = train.items[std::size_t(order[i])];
        Image img = item.image;
        if (cfg.augment_hflip && rng.uniform() < 0.5) img = flip_image_h(img);
        Activations acts = forward_range(net, 0, nlayers, net_input(img));
        LossGrad lg = softmax_logloss(acts.out(), item.cls);
        require(std::isfinite(lg.loss), Errc::numeric,
                "train_network: non-finite loss at epoch " + std::to_string(epoch));
        loss_acc += lg.loss;
        err_acc += lg.pred != item.cls;
        ++seen;
        backward_range(net, acts, 0, nlayers, lg.dlogits, grads);
      }
      double scale = 1.0 / double(stop - start);
      for (int li = 0; li < nlayers; ++li) {
        Layer& l = net.layers[std::size_t(li)];
        for (std::size_t q = 0; q < l.w.size(); ++q) {
          double g = grads[std::size_t(li)].dw[q] * scale + cfg.weight_decay * l.w[q];
          vel[std::size_t(li)].dw[q] = cfg.momentum * vel[std::size_t(li)].dw[q] - cfg.lr * g;
          l.w[q] += vel[std::size_t(li)].dw[q];
        }
        for (std::size_t q = 0; q < l.b.size(); ++q) {
          double g = grads[std::size_t(li)].db[q] * scale;
          vel[std::size_t(li)].db[q] = cfg.momentum * vel[std::size_t(li)].db[q] - cfg.lr * g;
          l.b[q] += vel[std::size_t(li)].db[q];
        }
      }
    }
    curve.push_back({epoch, loss_acc / double(seen), double(err_acc) / double(seen)});
  }
  return curve;
}

double classification_error(const Network& net, const Dataset& ds, const Affine2* pre) {
  require(!ds.items.empty(), Errc::invalid_argument, "classification_error: empty dataset");
  int errors = 0;
  for (const DatasetItem& item : ds.items) {
    // Warp in the 32x32 network frame, matching the probe-error convention.
    Image img = grayscale(item.image);
    if (img.width == 64 && img.height == 64) img = downsample2(img);
    if (pre) img = warp(img, *pre, Interp::bilinear, Pad::replicate);
    FeatureField out = forward_all(net, image_to_field(img));
    int pred = 0;
    for (int i = 1; i < out.d; ++i)
      if (out.data[std::size_t(i)] > out.data[std::size_t(pred)]) pred = i;
    errors += pred != item.cls;
  }
  return double(errors) / double(ds.items.size());
}

void save_network(const Network& net, const std::string& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  require(!ec, Errc::io, "save_network: cannot create " + dir);
  nlohmann::json manifest;
  manifest["input"] = {net.in_h, net.in_w, net.in_d};
  manifest["layers"] = nlohmann::json::array();
  char buf[64];
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    const Layer& l = net.layers[i];
    nlohmann::json j;
    switch (l.kind) {
      case LayerKind::conv: j["kind"] = "conv"; break;
      case LayerKind::relu: j["kind"] = "relu"; break;
      case LayerKind::maxpool: j["kind"] = "maxpool"; break;
      case LayerKind::fc: j["kind"] = "fc"; break;
    }
    j["in_ch"] = l.in_ch;
    j["out_ch"] = l.out_ch;
    j["k"] = l.k;
    j["stride"] = l.stride;
    j["pad"] = l.pad;
    j["in_total"] = l.in_total;
    if (!l.w.empty()) {
      std::snprintf(buf, sizeof buf, "layer_%02zu_w.eqf", i);
      j["w"] = buf;
      // Weights ride in the field container: rows = output channels.
      int cols = l.kind == LayerKind::conv ? l.k * l.k : l.in_total;
      int depth = l.kind == LayerKind::conv ? l.in_ch : 1;
      FeatureField wf(l.out_ch, cols, depth);
      wf.data = l.w;
      save_field(wf, dir + "/" + buf);
      std::snprintf(buf, sizeof buf, "layer_%02zu_b.eqf", i);
      j["b"] = buf;
      FeatureField bf(1, 1, l.out_ch);
      bf.data = l.b;
      save_field(bf, dir + "/" + buf);
    }
    manifest["layers"].push_back(std::move(j));
  }
  std::ofstream out(dir + "/manifest.json");
  require(bool(out), Errc::io, "save_network: cannot write manifest in " + dir);
  out << manifest.dump(2) << "\n";
}

Network load_network(const std::string& dir) {
  std::ifstream in(dir + "/manifest.json");
  require(bool(in), Errc::io, "load_network: missing manifest.json in " + dir);
  nlohmann::json manifest;
  try {
    in >> manifest;
  } catch (const nlohmann::json::exception& e) {
    fail(Errc::io, std::string("load_network: bad manifest: ") + e.what());
  }
  Network net;
  net.in_h = manifest.at("input").at(0);
  net.in_w = manifest.at("input").at(1);
  net.in_d = manifest.at("input").at(2);
  for (const auto& j : manifest.at("layers")) {
    std::string kind = j.at("kind");
    Layer l;
    if (kind == "conv")
      l = conv_layer(j.at("in_ch"), j.at("out_ch"), j.at("k"), j.at("stride"), j.at("pad"));
    else if (kind == "relu")
      l = relu_layer();
    else if (kind == "maxpool")
      l = maxpool_layer(j.at("k"), j.at("stride"));
    else if (kind == "fc")
      l = fc_layer(j.at("in_total"), j.at("out_ch"));
    else
      fail(Errc::io, "load_network: unknown layer kind '" + kind + "'");
    if (j.contains("w")) {
      FeatureField wf = load_field(dir + "/" + j.at("w").get<std::string>());
      require(wf.data.size() == l.w.size(), Errc::io, "load_network: weight size mismatch");
      l.w = wf.data;
      FeatureField bf = load_field(dir + "/" + j.at("b").get<std::string>());
      require(bf.data.size() == l.b.size(), Errc::io, "load_network: bias size mismatch");
      l.b = bf.data;
    }
    net.layers.push_back(std::move(l));
  }
  return net;
}

double grad_check_network(const Network& net, int h, int w, int d, std::uint64_t seed) {
  Rng rng(seed);
  FeatureField x(h, w, d);
  for (double& v : x.data) v = rng.uniform(0.1, 1.0);  // away from relu kinks
  Network probe = net;
  const int n = int(probe.layers.size());
  FeatureField out0 = forward_all(probe, x);
  FeatureField r(out0.h, out0.w, out0.d);
  for (double& v : r.data) v = rng.uniform(-1.0, 1.0);

  auto objective = [&]() {
    FeatureField out = forward_all(probe, x);
    double s = 0.0;
    for (std::size_t q = 0; q < out.data.size(); ++q) s += out.data[q] * r.data[q];
    return s;
  };

  Activations acts = forward_range(probe, 0, n, x);
  std::vector<LayerGrads> grads = make_grads(probe);
  FeatureField dx = backward_range(probe, acts, 0, n, r, grads);

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
  for (int li = 0; li < n; ++li) {
    Layer& l = probe.layers[std::size_t(li)];
    for (std::size_t q = 0; q < l.w.size(); ++q) check(&l.w[q], grads[std::size_t(li)].dw[q]);
    for (std::size_t q = 0; q < l.b.size(); ++q) check(&l.b[q], grads[std::size_t(li)].db[q]);
  }
  for (std::size_t q = 0; q < x.data.size(); ++q) check(&x.data[q], dx.data[q]);
  return worst;
}

}  // namespace eqm
