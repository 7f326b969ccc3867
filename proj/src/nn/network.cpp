#include "infocam/nn.hpp"

#include <cmath>
#include <cstring>
#include <stdexcept>

#include "gemm.hpp"
#include "infocam/rng.hpp"

namespace infocam::nn {

namespace {

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

void im2col(const double* in, std::size_t c_in, std::size_t h, std::size_t w, std::size_t k,
            std::size_t pad, double* col) {
  const std::size_t ho = h + 2 * pad - k + 1, wo = w + 2 * pad - k + 1, hw = ho * wo;
  for (std::size_t c = 0; c < c_in; ++c) {
    for (std::size_t ki = 0; ki < k; ++ki) {
      for (std::size_t kj = 0; kj < k; ++kj) {
        double* dst = col + ((c * k + ki) * k + kj) * hw;
        for (std::size_t oh = 0; oh < ho; ++oh) {
          const auto ih = static_cast<std::ptrdiff_t>(oh + ki) - static_cast<std::ptrdiff_t>(pad);
          double* drow = dst + oh * wo;
          if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(h)) {
            std::fill(drow, drow + wo, 0.0);
            continue;
          }
          const double* src = in + (c * h + static_cast<std::size_t>(ih)) * w;
          for (std::size_t ow = 0; ow < wo; ++ow) {
            const auto iw = static_cast<std::ptrdiff_t>(ow + kj) - static_cast<std::ptrdiff_t>(pad);
            drow[ow] = (iw < 0 || iw >= static_cast<std::ptrdiff_t>(w)) ? 0.0 : src[iw];
          }
        }
      }
    }
  }
}

void col2im(const double* col, std::size_t c_in, std::size_t h, std::size_t w, std::size_t k,
            std::size_t pad, double* out) {
  const std::size_t ho = h + 2 * pad - k + 1, wo = w + 2 * pad - k + 1, hw = ho * wo;
  for (std::size_t c = 0; c < c_in; ++c) {
    for (std::size_t ki = 0; ki < k; ++ki) {
      for (std::size_t kj = 0; kj < k; ++kj) {
        const double* src = col + ((c * k + ki) * k + kj) * hw;
        for (std::size_t oh = 0; oh < ho; ++oh) {
          const auto ih = static_cast<std::ptrdiff_t>(oh + ki) - static_cast<std::ptrdiff_t>(pad);
          if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(h)) continue;
          double* drow = out + (c * h + static_cast<std::size_t>(ih)) * w;
          for (std::size_t ow = 0; ow < wo; ++ow) {
            const auto iw = static_cast<std::ptrdiff_t>(ow + kj) - static_cast<std::ptrdiff_t>(pad);
            if (iw < 0 || iw >= static_cast<std::ptrdiff_t>(w)) continue;
            drow[iw] += src[oh * wo + ow];
          }
        }
      }
    }
  }
}

Shape output_shape(const Layer& layer, const Shape& in) {
  return std::visit(
      Overloaded{
          [&](const Conv2d& c) -> Shape {
            if (in.size() != 3 || in[0] != c.in_channels) throw std::invalid_argument("conv2d: input channel mismatch");
            if (in[1] + 2 * c.pad < c.kernel || in[2] + 2 * c.pad < c.kernel) {
              throw std::invalid_argument("conv2d: input smaller than kernel");
            }
            return {c.out_channels, in[1] + 2 * c.pad - c.kernel + 1, in[2] + 2 * c.pad - c.kernel + 1};
          },
          [&](const Relu&) -> Shape { return in; },
          [&](const MaxPool2&) -> Shape {
            if (in.size() != 3 || in[1] < 2 || in[2] < 2) throw std::invalid_argument("maxpool2: input too small");
            return {in[0], in[1] / 2, in[2] / 2};
          },
          [&](const Gap&) -> Shape {
            if (in.size() != 3) throw std::invalid_argument("gap: expects (K,H,W)");
            return {in[0]};
          },
          [&](const Linear& l) -> Shape {
            if (in.size() != 1 || in[0] != l.in_features) throw std::invalid_argument("linear: input size mismatch");
            return {l.out_features};
          },
      },
      layer);
}

}  // namespace

std::string to_string(HeadMode mode) {
  switch (mode) {
    case HeadMode::softmax: return "softmax";
    case HeadMode::sigmoid: return "sigmoid";
    case HeadMode::pc_sigmoid: return "pc-sigmoid";
  }
  return "?";
}

HeadMode head_mode_from_string(const std::string& s) {
  if (s == "softmax") return HeadMode::softmax;
  if (s == "sigmoid") return HeadMode::sigmoid;
  if (s == "pc-sigmoid" || s == "pc_sigmoid") return HeadMode::pc_sigmoid;
  throw ConfigError("unknown head mode '" + s + "' (softmax, sigmoid, pc-sigmoid)");
}

std::string kind_name(const Layer& layer) {
  return std::visit(Overloaded{[](const Conv2d&) { return "conv2d"; }, [](const Relu&) { return "relu"; },
                               [](const MaxPool2&) { return "maxpool2"; }, [](const Gap&) { return "gap"; },
                               [](const Linear&) { return "linear"; }},
                    layer);
}

Architecture Architecture::parse(const std::string& spec, std::size_t channels, std::size_t height,
                                 std::size_t width) {
  Architecture a;
  a.channels = channels;
  a.height = height;
  a.width = width;
  std::size_t start = 0;
  while (start <= spec.size()) {
    auto end = spec.find(',', start);
    if (end == std::string::npos) end = spec.size();
    std::string tok = spec.substr(start, end - start);
    if (!tok.empty()) a.layers.push_back(tok);
    start = end + 1;
  }
  if (a.layers.empty()) throw ConfigError("empty architecture");
  return a;
}

Architecture Architecture::multimnist_default() {
  return parse("conv16,relu,pool,conv32,relu,pool,conv64,relu,gap,linear10", 1, 28, 56);
}

std::string Architecture::to_string() const {
  std::string s;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (i) s += ',';
    s += layers[i];
  }
  return s;
}

Network::Network(const Architecture& arch, HeadMode head, std::uint64_t seed, double init_scale)
    : input_shape_{arch.channels, arch.height, arch.width}, head_(head) {
  if (!(init_scale > 0)) throw ConfigError("weight_init_scale must be positive");
  Xoshiro256 rng(seed);
  Shape shape = input_shape_;
  auto count = [](const std::string& tok, const char* prefix) -> std::size_t {
    const std::string rest = tok.substr(std::string(prefix).size());
    if (rest.empty() || rest.find_first_not_of("0123456789") != std::string::npos) {
      throw ConfigError("bad layer token '" + tok + "'");
    }
    return std::stoul(rest);
  };
  auto init = [&](Array& a, std::size_t fan_in) {
    const double bound = init_scale / std::sqrt(static_cast<double>(fan_in));
    for (double& v : a.storage()) v = rng.uniform(-bound, bound);
  };
  for (const auto& tok : arch.layers) {
    Layer layer;
    if (tok.rfind("conv", 0) == 0) {
      Conv2d c;
      c.in_channels = shape.at(0);
      c.out_channels = count(tok, "conv");
      c.weight = Array({c.out_channels, c.in_channels, c.kernel, c.kernel});
      c.bias = Array({c.out_channels});
      init(c.weight, c.in_channels * c.kernel * c.kernel);
      layer = std::move(c);
    } else if (tok == "relu") {
      layer = Relu{};
    } else if (tok == "pool") {
      layer = MaxPool2{};
    } else if (tok == "gap") {
      layer = Gap{};
    } else if (tok.rfind("linear", 0) == 0) {
      Linear l;
      l.in_features = shape.at(0);
      l.out_features = count(tok, "linear");
      l.weight = Array({l.out_features, l.in_features});
      l.bias = Array({l.out_features});
      init(l.weight, l.in_features);
      layer = std::move(l);
    } else {
      throw ConfigError("unknown layer token '" + tok + "'");
    }
    try {
      shape = output_shape(layer, shape);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(std::string("architecture: ") + e.what());
    }
    layers_.push_back(std::move(layer));
  }
  try {
    validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
}

Network::Network(std::vector<Layer> layers, Shape input_shape, HeadMode head)
    : layers_(std::move(layers)), input_shape_(std::move(input_shape)), head_(head) {
  validate();
}

void Network::validate() {
  if (input_shape_.size() != 3) throw std::invalid_argument("network input must be (C,H,W)");
  if (layers_.size() < 2 || !std::holds_alternative<Linear>(layers_.back()) ||
      !std::holds_alternative<Gap>(layers_[layers_.size() - 2])) {
    throw std::invalid_argument("network must end in gap -> linear");
  }
  std::size_t gaps = 0, linears = 0;
  Shape shape = input_shape_;
  for (const auto& l : layers_) {
    gaps += std::holds_alternative<Gap>(l);
    linears += std::holds_alternative<Linear>(l);
    if (const auto* c = std::get_if<Conv2d>(&l)) {
      if (c->weight.shape() != Shape{c->out_channels, c->in_channels, c->kernel, c->kernel} ||
          c->bias.shape() != Shape{c->out_channels}) {
        throw std::invalid_argument("conv2d parameter shapes are inconsistent");
      }
    }
    if (const auto* lin = std::get_if<Linear>(&l)) {
      if (lin->weight.shape() != Shape{lin->out_features, lin->in_features} ||
          lin->bias.shape() != Shape{lin->out_features}) {
        throw std::invalid_argument("linear parameter shapes are inconsistent");
      }
    }
    shape = output_shape(l, shape);
  }
  if (gaps != 1 || linears != 1) throw std::invalid_argument("network needs exactly one gap and one linear");
  if (head_ == HeadMode::softmax && num_classes() < 2) {
    throw std::invalid_argument("softmax head needs at least two classes");
  }
}

std::size_t Network::num_classes() const { return std::get<Linear>(layers_.back()).out_features; }

std::size_t Network::num_parameters() const {
  std::size_t n = 0;
  for (const auto& p : parameters()) n += p.values.size();
  return n;
}

void Network::set_class_priors(std::vector<double> priors) {
  if (!priors.empty()) {
    if (priors.size() != num_classes()) throw std::invalid_argument("one prior per class required");
    for (double p : priors) {
      if (!(p > 0.0 && p < 1.0)) throw std::invalid_argument("class priors must lie in (0,1)");
    }
  }
  priors_ = std::move(priors);
}

Shape Network::feature_shape() const {
  Shape shape = input_shape_;
  for (std::size_t i = 0; i + 2 < layers_.size(); ++i) shape = output_shape(layers_[i], shape);
  return shape;
}

ForwardResult Network::forward(const Array& image) const {
  Tape tape;
  return forward(image, tape);
}

ForwardResult Network::forward(const Array& image, Tape& tape) const {
  if (image.shape() != input_shape_) {
    throw std::invalid_argument("input shape " + shape_to_string(image.shape()) + " does not match " +
                                shape_to_string(input_shape_));
  }
  tape.inputs.resize(layers_.size());
  tape.columns.resize(layers_.size());
  tape.argmax.resize(layers_.size());

  Array x = image;
  Array features;
  for (std::size_t li = 0; li < layers_.size(); ++li) {
    const Layer& layer = layers_[li];
    Shape out_shape = output_shape(layer, x.shape());
    Array y(out_shape);
    std::visit(
        Overloaded{
            [&](const Conv2d& c) {
              const std::size_t h = x.dim(1), w = x.dim(2);
              const std::size_t hw = out_shape[1] * out_shape[2];
              const std::size_t rows = c.in_channels * c.kernel * c.kernel;
              auto& col = tape.columns[li];
              col.resize(rows * hw);
              im2col(x.data().data(), c.in_channels, h, w, c.kernel, c.pad, col.data());
              double* out = y.data().data();
              for (std::size_t o = 0; o < c.out_channels; ++o) std::fill(out + o * hw, out + (o + 1) * hw, c.bias[o]);
              detail::gemm_acc(c.out_channels, hw, rows, c.weight.data().data(), rows, 1, col.data(), out);
            },
            [&](const Relu&) {
              for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] > 0.0 || std::isnan(x[i]) ? x[i] : 0.0;
            },
            [&](const MaxPool2&) {
              const std::size_t ch = x.dim(0), h = x.dim(1), w = x.dim(2);
              const std::size_t ho = out_shape[1], wo = out_shape[2];
              auto& am = tape.argmax[li];
              am.resize(y.size());
              for (std::size_t c = 0; c < ch; ++c) {
                for (std::size_t r = 0; r < ho; ++r) {
                  for (std::size_t q = 0; q < wo; ++q) {
                    std::size_t best = (c * h + 2 * r) * w + 2 * q;
                    for (std::size_t dr = 0; dr < 2; ++dr) {
                      for (std::size_t dq = 0; dq < 2; ++dq) {
                        std::size_t idx = (c * h + 2 * r + dr) * w + 2 * q + dq;
                        if (x[idx] > x[best]) best = idx;
                      }
                    }
                    const std::size_t o = (c * ho + r) * wo + q;
                    y[o] = x[best];
                    am[o] = static_cast<std::uint32_t>(best);
                  }
                }
              }
            },
            [&](const Gap&) {
              features = x;
              const std::size_t k = x.dim(0), hw = x.dim(1) * x.dim(2);
              for (std::size_t c = 0; c < k; ++c) {
                double s = 0.0;
                for (std::size_t i = 0; i < hw; ++i) s += x[c * hw + i];
                y[c] = s / static_cast<double>(hw);
              }
            },
            [&](const Linear& l) {
              for (std::size_t o = 0; o < l.out_features; ++o) {
                double s = l.bias[o];
                for (std::size_t i = 0; i < l.in_features; ++i) s += l.weight.at(o, i) * x[i];
                y[o] = s;
              }
            },
        },
        layer);
    tape.inputs[li] = std::move(x);
    x = std::move(y);
  }
  return {std::move(x), std::move(features)};
}

void Network::backward(const Tape& tape, std::span<const double> dlogits, Gradients& grads) const {
  if (dlogits.size() != num_classes()) throw std::invalid_argument("dlogits size mismatch");
  if (tape.inputs.size() != layers_.size()) throw std::invalid_argument("tape does not match network");
  // Gradient tensor index of each parameterised layer's weight.
  std::vector<std::size_t> slot(layers_.size(), 0);
  for (std::size_t li = 0, g = 0; li < layers_.size(); ++li) {
    slot[li] = g;
    if (std::holds_alternative<Conv2d>(layers_[li]) || std::holds_alternative<Linear>(layers_[li])) g += 2;
  }

  std::vector<double> dy(dlogits.begin(), dlogits.end());
  for (std::size_t li = layers_.size(); li-- > 0;) {
    const Array& x = tape.inputs[li];
    std::vector<double> dx;
    const bool need_dx = li > 0;
    std::visit(
        Overloaded{
            [&](const Conv2d& c) {
              const std::size_t h = x.dim(1), w = x.dim(2);
              const std::size_t ho = h + 2 * c.pad - c.kernel + 1, wo = w + 2 * c.pad - c.kernel + 1;
              const std::size_t hw = ho * wo, rows = c.in_channels * c.kernel * c.kernel;
              auto& gw = grads.tensors[slot[li]];
              auto& gb = grads.tensors[slot[li] + 1];
              for (std::size_t o = 0; o < c.out_channels; ++o) {
                double s = 0.0;
                for (std::size_t i = 0; i < hw; ++i) s += dy[o * hw + i];
                gb[o] += s;
              }
              std::vector<double> col_t(rows * hw);
              detail::transpose(rows, hw, tape.columns[li].data(), col_t.data());
              detail::gemm_acc(c.out_channels, rows, hw, dy.data(), hw, 1, col_t.data(), gw.data());
              if (!need_dx) return;
              std::vector<double> dcol(rows * hw, 0.0);
              // dcol = W^T dy; W is (out, rows) so address it transposed.
              detail::gemm_acc(rows, hw, c.out_channels, c.weight.data().data(), 1, rows, dy.data(), dcol.data());
              dx.assign(x.size(), 0.0);
              col2im(dcol.data(), c.in_channels, h, w, c.kernel, c.pad, dx.data());
            },
            [&](const Relu&) {
              dx.resize(x.size());
              for (std::size_t i = 0; i < x.size(); ++i) dx[i] = x[i] > 0.0 ? dy[i] : 0.0;
            },
            [&](const MaxPool2&) {
              dx.assign(x.size(), 0.0);
              const auto& am = tape.argmax[li];
              for (std::size_t o = 0; o < am.size(); ++o) dx[am[o]] += dy[o];
            },
            [&](const Gap&) {
              const std::size_t k = x.dim(0), hw = x.dim(1) * x.dim(2);
              dx.resize(x.size());
              for (std::size_t c = 0; c < k; ++c) {
                const double g = dy[c] / static_cast<double>(hw);
                std::fill(dx.begin() + static_cast<std::ptrdiff_t>(c * hw),
                          dx.begin() + static_cast<std::ptrdiff_t>((c + 1) * hw), g);
              }
            },
            [&](const Linear& l) {
              auto& gw = grads.tensors[slot[li]];
              auto& gb = grads.tensors[slot[li] + 1];
              dx.assign(l.in_features, 0.0);
              for (std::size_t o = 0; o < l.out_features; ++o) {
                gb[o] += dy[o];
                for (std::size_t i = 0; i < l.in_features; ++i) {
                  gw[o * l.in_features + i] += dy[o] * x[i];
                  dx[i] += l.weight.at(o, i) * dy[o];
                }
              }
            },
        },
        layers_[li]);
    dy = std::move(dx);
  }
}

std::vector<ParamView> Network::parameters() {
  std::vector<ParamView> out;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const std::string prefix = "layer" + std::to_string(i) + "." + kind_name(layers_[i]);
    if (auto* c = std::get_if<Conv2d>(&layers_[i])) {
      out.push_back({prefix + ".weight", c->weight.data()});
      out.push_back({prefix + ".bias", c->bias.data()});
    } else if (auto* l = std::get_if<Linear>(&layers_[i])) {
      out.push_back({prefix + ".weight", l->weight.data()});
      out.push_back({prefix + ".bias", l->bias.data()});
    }
  }
  return out;
}

std::vector<ConstParamView> Network::parameters() const {
  std::vector<ConstParamView> out;
  for (auto& p : const_cast<Network*>(this)->parameters()) out.push_back({p.name, p.values});
  return out;
}

Gradients Network::zero_gradients() const {
  Gradients g;
  for (const auto& p : parameters()) g.tensors.emplace_back(p.values.size(), 0.0);
  return g;
}

cam::ClassifierHead Network::classifier_head(std::size_t feat_h, std::size_t feat_w) const {
  const auto& lin = std::get<Linear>(layers_.back());
  Array w = lin.weight;
  const double inv = 1.0 / static_cast<double>(feat_h * feat_w);
  for (double& v : w.storage()) v *= inv;
  auto mode = head_ == HeadMode::softmax ? cam::HeadMode::softmax : cam::HeadMode::multi_label;
  return cam::ClassifierHead(std::move(w), lin.bias, mode);
}

std::vector<std::uint8_t> Network::activation_pattern(const Network& net, const Tape& tape) {
  std::vector<std::uint8_t> pattern;
  for (std::size_t li = 0; li < net.layers_.size(); ++li) {
    if (std::holds_alternative<Relu>(net.layers_[li])) {
      for (double v : tape.inputs[li].data()) pattern.push_back(v > 0.0);
    } else if (std::holds_alternative<MaxPool2>(net.layers_[li])) {
      for (auto idx : tape.argmax[li]) {
        pattern.push_back(static_cast<std::uint8_t>(idx & 0xff));
        pattern.push_back(static_cast<std::uint8_t>((idx >> 8) & 0xff));
        pattern.push_back(static_cast<std::uint8_t>((idx >> 16) & 0xff));
      }
    }
  }
  return pattern;
}

bool operator==(const Network& a, const Network& b) {
  if (a.input_shape_ != b.input_shape_ || a.head_ != b.head_ || a.priors_ != b.priors_) return false;
  auto pa = a.parameters();
  auto pb = b.parameters();
  if (pa.size() != pb.size()) return false;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    if (pa[i].name != pb[i].name || pa[i].values.size() != pb[i].values.size()) return false;
    if (std::memcmp(pa[i].values.data(), pb[i].values.data(), pa[i].values.size() * sizeof(double)) != 0) {
      return false;
    }
  }
  return true;
}

void Gradients::zero() {
  for (auto& t : tensors) std::fill(t.begin(), t.end(), 0.0);
}

void Gradients::add(const Gradients& other) {
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    for (std::size_t j = 0; j < tensors[i].size(); ++j) tensors[i][j] += other.tensors[i][j];
  }
}

void Gradients::scale(double s) {
  for (auto& t : tensors) {
    for (double& v : t) v *= s;
  }
}

}  // namespace infocam::nn
