#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <thread>

#include "infocam/manifest.hpp"
#include "infocam/nn.hpp"
#include "infocam/rng.hpp"

namespace infocam::nn {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }
double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

constexpr std::size_t kChunk = 8;

double chunk_gradient(const Network& net, std::span<const Example> chunk, Gradients& grads) {
  double total = 0.0;
  Tape tape;
  for (const auto& ex : chunk) {
    ForwardResult fr = net.forward(*ex.image, tape);
    LossResult lr = loss(net.head_mode(), fr.logits.data(), ex.target, net.class_priors());
    const bool finite_logits =
        std::all_of(fr.logits.data().begin(), fr.logits.data().end(), [](double v) { return std::isfinite(v); });
    if (!finite_logits || !std::isfinite(lr.loss)) {
      std::ostringstream os;
      os << "non-finite loss; logits =";
      for (double v : fr.logits.data()) os << ' ' << v;
      throw NumericError(os.str());
    }
    total += lr.loss;
    net.backward(tape, lr.dlogits, grads);
  }
  return total;
}

}  // namespace

LossResult loss(HeadMode mode, std::span<const double> logits, std::span<const double> targets,
                std::span<const double> priors) {
  const std::size_t m = logits.size();
  if (targets.size() != m) throw std::invalid_argument("targets must match the number of logits");
  LossResult r;
  r.dlogits.resize(m);
  if (mode == HeadMode::softmax) {
    double sum = 0.0;
    for (double t : targets) {
      if (t < 0.0) throw std::invalid_argument("softmax targets must be non-negative");
      sum += t;
    }
    if (std::abs(sum - 1.0) > 1e-9) throw std::invalid_argument("softmax targets must sum to 1");
    const double lse = cam::logsumexp(logits);
    for (std::size_t i = 0; i < m; ++i) {
      r.loss += targets[i] * (lse - logits[i]);
      r.dlogits[i] = std::exp(logits[i] - lse) - targets[i];
    }
    return r;
  }
  if (mode == HeadMode::pc_sigmoid && priors.size() != m) {
    throw std::invalid_argument("pc-sigmoid needs one prior per label");
  }
  const double inv = 1.0 / static_cast<double>(m);
  for (std::size_t i = 0; i < m; ++i) {
    const double t = targets[i];
    if (t < 0.0 || t > 1.0) throw std::invalid_argument("sigmoid targets must lie in [0,1]");
    double n = logits[i];
    if (mode == HeadMode::pc_sigmoid) n += std::log(priors[i] / (1.0 - priors[i]));
    r.loss += inv * (softplus(n) - t * n);
    r.dlogits[i] = inv * (sigmoid(n) - t);
  }
  return r;
}

std::vector<bool> predict(HeadMode mode, std::span<const double> logits) {
  std::vector<bool> out(logits.size(), false);
  if (logits.empty()) return out;
  if (mode == HeadMode::softmax) {
    out[static_cast<std::size_t>(std::max_element(logits.begin(), logits.end()) - logits.begin())] = true;
  } else {
    for (std::size_t i = 0; i < logits.size(); ++i) out[i] = logits[i] > 0.0;
  }
  return out;
}

void TrainConfig::validate() const {
  if (epochs == 0 || batch_size == 0 || threads == 0) {
    throw ConfigError("epochs, batch size and threads must be positive");
  }
  if (!(learning_rate >= 0.0) || !(momentum >= 0.0 && momentum < 1.0) || !(weight_init_scale > 0.0)) {
    throw ConfigError("learning rate must be >= 0, momentum in [0,1), init scale > 0");
  }
}

json TrainConfig::to_json() const {
  return {{"seed", seed},
          {"epochs", epochs},
          {"batch_size", batch_size},
          {"learning_rate", learning_rate},
          {"momentum", momentum},
          {"weight_init_scale", weight_init_scale}};
}

Sgd::Sgd(const Network& net, double learning_rate, double momentum)
    : lr_(learning_rate), momentum_(momentum), velocity_(net.zero_gradients()) {}

double Sgd::batch_gradient(const Network& net, std::span<const Example> batch, std::size_t threads,
                           Gradients& out) {
  if (batch.empty()) throw std::invalid_argument("empty batch");
  const std::size_t chunks = (batch.size() + kChunk - 1) / kChunk;
  std::vector<Gradients> partial(chunks, net.zero_gradients());
  std::vector<double> losses(chunks, 0.0);
  auto run = [&](std::size_t first, std::size_t stride) {
    for (std::size_t c = first; c < chunks; c += stride) {
      auto part = batch.subspan(c * kChunk, std::min(kChunk, batch.size() - c * kChunk));
      losses[c] = chunk_gradient(net, part, partial[c]);
    }
  };
  threads = std::max<std::size_t>(1, std::min(threads, chunks));
  if (threads == 1) {
    run(0, 1);
  } else {
    std::vector<std::exception_ptr> errors(threads);
    {
      std::vector<std::jthread> pool;
      for (std::size_t t = 0; t < threads; ++t) {
        pool.emplace_back([&, t] {
          try {
            run(t, threads);
          } catch (...) {
            errors[t] = std::current_exception();
          }
        });
      }
    }
    for (auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }
  }
  out = net.zero_gradients();
  double total = 0.0;
  for (std::size_t c = 0; c < chunks; ++c) {
    out.add(partial[c]);
    total += losses[c];
  }
  const double inv = 1.0 / static_cast<double>(batch.size());
  out.scale(inv);
  return total * inv;
}

double Sgd::step(Network& net, std::span<const Example> batch, std::size_t threads) {
  Gradients g;
  const double mean_loss = batch_gradient(net, batch, threads, g);
  auto params = net.parameters();
  for (std::size_t t = 0; t < params.size(); ++t) {
    auto& v = velocity_.tensors[t];
    const auto& gt = g.tensors[t];
    auto p = params[t].values;
    for (std::size_t i = 0; i < p.size(); ++i) {
      v[i] = momentum_ * v[i] + gt[i];
      p[i] -= lr_ * v[i];
    }
  }
  return mean_loss;
}

GradcheckResult gradcheck(const Network& net, const Array& image, std::span<const double> target,
                          std::size_t coords, std::uint64_t seed, double h) {
  Network work = net;
  Tape tape;
  ForwardResult base = work.forward(image, tape);
  const auto base_pattern = Network::activation_pattern(work, tape);
  LossResult lr = loss(work.head_mode(), base.logits.data(), target, work.class_priors());
  Gradients analytic = work.zero_gradients();
  work.backward(tape, lr.dlogits, analytic);

  auto params = work.parameters();
  const std::size_t total = work.num_parameters();
  Xoshiro256 rng(seed);

  // Every tensor gets a share proportional to its size, at least a few coordinates.
  std::vector<std::pair<std::size_t, std::size_t>> picks;
  for (std::size_t t = 0; t < params.size(); ++t) {
    const std::size_t n = params[t].values.size();
    std::size_t want = std::max<std::size_t>(8, (coords * n + total - 1) / total);
    want = std::min(want, n);
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    for (std::size_t i = 0; i < want; ++i) {
      std::swap(idx[i], idx[i + rng.below(n - i)]);
      picks.emplace_back(t, idx[i]);
    }
  }

  auto eval = [&](std::vector<std::uint8_t>& pattern) {
    Tape t;
    ForwardResult fr = work.forward(image, t);
    pattern = Network::activation_pattern(work, t);
    return loss(work.head_mode(), fr.logits.data(), target, work.class_priors()).loss;
  };

  GradcheckResult res;
  for (auto [t, i] : picks) {
    double& p = params[t].values[i];
    const double orig = p;
    std::vector<std::uint8_t> pat_plus, pat_minus;
    p = orig + h;
    const double up = eval(pat_plus);
    p = orig - h;
    const double down = eval(pat_minus);
    p = orig;
    if (pat_plus != base_pattern || pat_minus != base_pattern) {
      ++res.skipped_kinks;
      continue;
    }
    const double numeric = (up - down) / (2 * h);
    const double exact = analytic.tensors[t][i];
    // Central differences carry ~1e-11 absolute rounding noise at h = 1e-5, so
    // gradients below 1e-6 are judged on absolute error scaled by 1e-6.
    const double scale = std::max({std::abs(numeric), std::abs(exact), 1e-6});
    const double err = std::abs(numeric - exact) / scale;
    ++res.checked;
    if (err > res.max_relative_error) {
      res.max_relative_error = err;
      res.worst_parameter = params[t].name + "[" + std::to_string(i) + "]";
    }
  }
  return res;
}

void save_checkpoint(const fs::path& dir, const Network& net, const json& extra) {
  fs::create_directories(dir);
  json arrays = json::object();
  for (std::size_t li = 0; li < net.layers().size(); ++li) {
    const std::string prefix = "layer" + std::to_string(li) + "." + kind_name(net.layers()[li]);
    auto put = [&](const Array& w, const Array& b) {
      arrays[prefix + ".weight"] = write_entry(dir, prefix + ".weight.npy", w);
      arrays[prefix + ".bias"] = write_entry(dir, prefix + ".bias.npy", b);
    };
    if (const auto* c = std::get_if<Conv2d>(&net.layers()[li])) put(c->weight, c->bias);
    if (const auto* l = std::get_if<Linear>(&net.layers()[li])) put(l->weight, l->bias);
  }
  json layers = json::array();
  for (const auto& l : net.layers()) {
    if (const auto* c = std::get_if<Conv2d>(&l)) {
      layers.push_back("conv" + std::to_string(c->out_channels));
    } else if (const auto* lin = std::get_if<Linear>(&l)) {
      layers.push_back("linear" + std::to_string(lin->out_features));
    } else if (std::holds_alternative<MaxPool2>(l)) {
      layers.push_back("pool");
    } else {
      layers.push_back(kind_name(l));
    }
  }
  json doc{{"format", "infocam-checkpoint-v1"},
           {"input_shape", net.input_shape()},
           {"layers", layers},
           {"head", to_string(net.head_mode())},
           {"class_priors", net.class_priors()},
           {"arrays", arrays}};
  for (auto it = extra.begin(); it != extra.end(); ++it) doc[it.key()] = it.value();
  std::ofstream out(dir / "checkpoint.json");
  if (!out) throw DataError("cannot write checkpoint in " + dir.string());
  out << doc.dump(2) << '\n';
}

Network load_checkpoint(const fs::path& dir) {
  std::ifstream in(dir / "checkpoint.json");
  if (!in) throw DataError("no checkpoint.json in " + dir.string());
  try {
    json doc = json::parse(in);
    if (doc.at("format") != "infocam-checkpoint-v1") throw DataError("unknown checkpoint format");
    auto shape = doc.at("input_shape").get<Shape>();
    if (shape.size() != 3) throw DataError("checkpoint input_shape must be [C,H,W]");
    Architecture arch;
    arch.channels = shape[0];
    arch.height = shape[1];
    arch.width = shape[2];
    arch.layers = doc.at("layers").get<std::vector<std::string>>();
    // Build the topology, then overwrite every parameter from disk.
    Network net(arch, head_mode_from_string(doc.at("head").get<std::string>()), 0);
    const json& arrays = doc.at("arrays");
    for (auto& p : net.parameters()) {
      Array a = read_entry(dir, arrays.at(p.name));
      if (a.size() != p.values.size()) throw DataError("checkpoint array " + p.name + " has the wrong size");
      std::copy(a.storage().begin(), a.storage().end(), p.values.begin());
    }
    net.set_class_priors(doc.at("class_priors").get<std::vector<double>>());
    return net;
  } catch (const json::exception& e) {
    throw DataError((dir / "checkpoint.json").string() + ": " + e.what());
  }
}

}  // namespace infocam::nn
