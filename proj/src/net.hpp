// Small deterministic CNN: conv / relu / maxpool / fc with softmax log-loss,
// double precision throughout, geometry tracked per layer.
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "field.hpp"
#include "image.hpp"
#include "synth.hpp"

namespace eqm {

enum class LayerKind { conv, relu, maxpool, fc };

struct Layer {
  LayerKind kind = LayerKind::relu;
  int in_ch = 0, out_ch = 0;
  int k = 0, stride = 1, pad = 0;
  int in_total = 0;        // fc only: flattened input size
  std::vector<double> w;   // conv: [out][ky][kx][in] row-major; fc: [out][in_total]
  std::vector<double> b;   // out
};

Layer conv_layer(int in_ch, int out_ch, int k, int stride, int pad);
Layer relu_layer();
Layer maxpool_layer(int k, int stride);
Layer fc_layer(int in_total, int out);

struct Network {
  int in_h = 32, in_w = 32, in_d = 1;
  std::vector<Layer> layers;
};

// He-style normal init for conv/fc weights, zero biases.
void init_params(Network& net, std::uint64_t seed);

// T3: conv 6x6/2 p2 (16) - relu - pool 2/2 - conv 3x3 (32) - relu -
// conv 3x3 (32) - relu - fc. 32x32 gray input; the first kernel is even so
// every probe grid is centered on the image center and flips/quarter turns
// land exactly on feature sites. Probes sit after each conv, before relu.
Network make_t3(int num_classes, std::uint64_t seed);
int t3_probe_boundary(int probe);  // probe 1..3 -> layer boundary index

// x[i] is the input of layer i (x[begin] = given input), x[end] the output.
struct Activations {
  int begin = 0;
  std::vector<FeatureField> x;
  const FeatureField& out() const { return x.back(); }
};
Activations forward_range(const Network& net, int b0, int b1, const FeatureField& input);
FeatureField forward_all(const Network& net, const FeatureField& input);

struct LayerGrads {
  std::vector<double> dw, db;
};
// Backprop through layers [b0,b1). grads must have net.layers.size() slots;
// only [b0,b1) are filled (accumulated: caller zeroes).
FeatureField backward_range(const Network& net, const Activations& acts, int b0, int b1,
                            const FeatureField& dout, std::vector<LayerGrads>& grads);
std::vector<LayerGrads> make_grads(const Network& net);
void zero_grads(const Network& net, std::vector<LayerGrads>& grads);

struct LossGrad {
  double loss = 0.0;
  int pred = 0;
  FeatureField dlogits;
};
LossGrad softmax_logloss(const FeatureField& logits, int label);

struct TrainConfig {
  int epochs = 20;
  int batch = 16;
  double lr = 0.01;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  std::uint64_t seed = 1;
  bool augment_hflip = false;  // label-preserving mirror augmentation
};

struct CurvePoint {
  int epoch = 0;
  double loss = 0.0;
  double err = 0.0;
};

// Minibatch SGD with momentum; deterministic shuffling from cfg.seed.
// Throws Errc::numeric naming the epoch if the loss goes non-finite.
std::vector<CurvePoint> train_network(Network& net, const Dataset& train, const TrainConfig& cfg);

// Top-1 error. pre, when given, warps each image first (the uncompensated
// baseline feeds g^{-1} x with the original labels); it acts in the 32x32
// network frame, after grayscale/downsample.
double classification_error(const Network& net, const Dataset& ds, const Affine2* pre = nullptr);

// Standard input prep for net experiments: gray, 2x downsample to 32x32.
FeatureField net_input(const Image& img);
Image downsample2(const Image& img);
FeatureField image_to_field(const Image& gray);

// Checkpoint: dir/manifest.json + one field file per parameter tensor.
void save_network(const Network& net, const std::string& dir);
Network load_network(const std::string& dir);

// Max relative error between analytic and central-difference gradients of
// sum(out * R) over all parameters and the input, random R and input.
double grad_check_network(const Network& net, int h, int w, int d, std::uint64_t seed);

}  // namespace eqm
