#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "infocam/array.hpp"
#include "infocam/cam.hpp"

/// A small CNN with hand-written reverse-mode gradients. Networks always end in
/// global average pooling followed by one linear layer, so the classifier's
/// logits are exactly the spatial sums of the class activation maps.
namespace infocam::nn {

enum class HeadMode { softmax, sigmoid, pc_sigmoid };

std::string to_string(HeadMode mode);
HeadMode head_mode_from_string(const std::string& s);

struct Conv2d {
  std::size_t in_channels = 0, out_channels = 0, kernel = 3, pad = 1;
  Array weight;  // (out, in, k, k)
  Array bias;    // (out,)
};
struct Relu {};
struct MaxPool2 {};
struct Gap {};
struct Linear {
  std::size_t in_features = 0, out_features = 0;
  Array weight;  // (out, in)
  Array bias;    // (out,)
};

using Layer = std::variant<Conv2d, Relu, MaxPool2, Gap, Linear>;

std::string kind_name(const Layer& layer);

/// Layer list such as "conv16,relu,pool,conv32,relu,pool,conv64,relu,gap,linear10"
/// applied to a (C,H,W) input.
struct Architecture {
  std::size_t channels = 1, height = 28, width = 56;
  std::vector<std::string> layers;

  static Architecture parse(const std::string& spec, std::size_t channels, std::size_t height,
                            std::size_t width);
  /// Default multi-MNIST network: three 3x3 conv blocks, two 2x2 pools, 7x14 final grid.
  static Architecture multimnist_default();
  std::string to_string() const;
};

struct ForwardResult {
  Array logits;    // (M,)
  Array features;  // (K,H,W) input of the GAP layer
};

/// Activations recorded by a forward pass for the backward pass.
struct Tape {
  std::vector<Array> inputs;                 // input of each layer
  std::vector<std::vector<double>> columns;  // im2col buffers (conv layers)
  std::vector<std::vector<std::uint32_t>> argmax;  // pool winners
};

/// One gradient buffer per parameter tensor, in parameters() order.
struct Gradients {
  std::vector<std::vector<double>> tensors;

  void zero();
  void add(const Gradients& other);
  void scale(double s);
};

struct ParamView {
  std::string name;  // "layer<i>.<kind>.weight" / ".bias"
  std::span<double> values;
};
struct ConstParamView {
  std::string name;
  std::span<const double> values;
};

class Network {
 public:
  /// Uniform(-a, a) weights with a = init_scale / sqrt(fan_in); zero biases.
  Network(const Architecture& arch, HeadMode head, std::uint64_t seed, double init_scale = 1.0);
  /// Explicit layers (tests, checkpoints). Validates shapes and the gap->linear tail.
  Network(std::vector<Layer> layers, Shape input_shape, HeadMode head);

  const std::vector<Layer>& layers() const { return layers_; }
  const Shape& input_shape() const { return input_shape_; }
  HeadMode head_mode() const { return head_; }
  std::size_t num_classes() const;
  std::size_t num_parameters() const;

  /// Per-label training priors for pc_sigmoid, each in (0,1).
  const std::vector<double>& class_priors() const { return priors_; }
  void set_class_priors(std::vector<double> priors);

  ForwardResult forward(const Array& image) const;
  ForwardResult forward(const Array& image, Tape& tape) const;

  /// Accumulates d(loss)/d(params) into `grads` given d(loss)/d(logits).
  void backward(const Tape& tape, std::span<const double> dlogits, Gradients& grads) const;

  std::vector<ParamView> parameters();
  std::vector<ConstParamView> parameters() const;
  Gradients zero_gradients() const;

  /// The linear head rescaled so that sum over (a,b) of each CAM equals the logit.
  cam::ClassifierHead classifier_head(std::size_t feat_h, std::size_t feat_w) const;

  /// Shape of the feature stack fed to GAP for this network's input.
  Shape feature_shape() const;

  /// Relu on/off pattern and pool winners of a forward pass; used to spot
  /// finite-difference steps that cross a kink.
  static std::vector<std::uint8_t> activation_pattern(const Network& net, const Tape& tape);

  friend bool operator==(const Network&, const Network&);

 private:
  void validate();

  std::vector<Layer> layers_;
  Shape input_shape_;
  HeadMode head_ = HeadMode::softmax;
  std::vector<double> priors_;
};

struct LossResult {
  double loss = 0.0;
  std::vector<double> dlogits;
};

/// softmax: cross-entropy against a target distribution; sigmoid: mean BCE over
/// labels; pc_sigmoid: mean BCE on n_l + log(p_l / (1 - p_l)), so the network
/// output itself is the prior-corrected logit.
LossResult loss(HeadMode mode, std::span<const double> logits, std::span<const double> targets,
                std::span<const double> priors = {});

/// softmax: one-hot argmax; sigmoid modes: logit > 0.
std::vector<bool> predict(HeadMode mode, std::span<const double> logits);

struct TrainConfig {
  std::uint64_t seed = 1;
  std::size_t epochs = 4;
  std::size_t batch_size = 64;
  double learning_rate = 0.5;
  double momentum = 0.9;
  double weight_init_scale = 2.449489742783178;  // sqrt(6): He-uniform bound
  std::size_t threads = 1;

  void validate() const;
  nlohmann::json to_json() const;
};

struct Example {
  const Array* image;
  std::span<const double> target;
};

/// SGD with momentum (v = mu v + g; w -= lr v). Gradients of a batch are
/// summed in fixed chunks of samples and the chunk sums reduced in order, so
/// the result does not depend on the thread count.
class Sgd {
 public:
  Sgd(const Network& net, double learning_rate, double momentum);

  /// One step on the batch mean loss; returns that loss. Throws NumericError
  /// on a non-finite loss.
  double step(Network& net, std::span<const Example> batch, std::size_t threads = 1);

  /// Gradient of the batch mean loss without updating (for tests).
  static double batch_gradient(const Network& net, std::span<const Example> batch,
                               std::size_t threads, Gradients& out);

 private:
  double lr_, momentum_;
  Gradients velocity_;
};

struct GradcheckResult {
  double max_relative_error = 0.0;
  std::size_t checked = 0;
  std::size_t skipped_kinks = 0;
  std::string worst_parameter;
};

/// Central differences against backprop on `coords` random parameter
/// coordinates. Coordinates whose +-h steps change the relu/pool pattern are
/// skipped. Relative error is |a-n| / max(|a|, |n|, 1e-6).
GradcheckResult gradcheck(const Network& net, const Array& image, std::span<const double> target,
                          std::size_t coords, std::uint64_t seed, double h = 1e-5);

void save_checkpoint(const std::filesystem::path& dir, const Network& net,
                     const nlohmann::json& extra = nlohmann::json::object());
Network load_checkpoint(const std::filesystem::path& dir);

}  // namespace infocam::nn
