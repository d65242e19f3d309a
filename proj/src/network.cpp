#include "faircop/network.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <numeric>

#include "faircop/encoding.hpp"
#include "json.hpp"

namespace faircop {

using json = nlohmann::json;

// --- vector math ---------------------------------------------------------------

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double norm(std::span<const double> a) { return std::sqrt(dot(a, a)); }

double cosine_sim(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw std::invalid_argument("cosine_sim: dimension mismatch");
  const double na = norm(a);
  const double nb = norm(b);
  if (na < kZeroNorm || nb < kZeroNorm) return 0.0;
  return std::clamp(dot(a, b) / (na * nb), -1.0, 1.0);
}

Vector normalized(std::span<const double> a) {
  const double n = norm(a);
  Vector out(a.size(), 0.0);
  if (n < kZeroNorm) return out;
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] / n;
  return out;
}

Vector unnormalize_grad(std::span<const double> a, std::span<const double> grad_normalized) {
  const double n = norm(a);
  Vector out(a.size(), 0.0);
  if (n < kZeroNorm) return out;
  const Vector unit = normalized(a);
  const double along = dot(unit, grad_normalized);
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = (grad_normalized[i] - along * unit[i]) / n;
  return out;
}

Vector centroid(const std::vector<Vector>& xs) {
  if (xs.empty()) throw std::invalid_argument("centroid of an empty set");
  Vector c(xs.front().size(), 0.0);
  for (const auto& x : xs) {
    if (x.size() != c.size()) throw std::invalid_argument("centroid: dimension mismatch");
    for (std::size_t i = 0; i < c.size(); ++i) c[i] += x[i];
  }
  const double inv = 1.0 / static_cast<double>(xs.size());
  for (auto& v : c) v *= inv;
  return c;
}

Vector to_vector(std::span<const float> xs) { return Vector(xs.begin(), xs.end()); }

// --- ProjectionNet -----------------------------------------------------------

ProjectionNet::ProjectionNet(std::vector<DenseLayer> layers) : layers_(std::move(layers)) {
  if (layers_.empty()) throw std::invalid_argument("ProjectionNet needs at least one layer");
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const auto& layer = layers_[l];
    if (layer.in == 0 || layer.out == 0) throw std::invalid_argument("layer dims must be >= 1");
    if (layer.weights.size() != layer.in * layer.out || layer.bias.size() != layer.out) {
      throw std::invalid_argument("layer " + std::to_string(l) + " parameter shape mismatch");
    }
    if (l > 0 && layers_[l - 1].out != layer.in) {
      throw std::invalid_argument("layer " + std::to_string(l) + " does not chain");
    }
  }
  if (layers_.back().activation != Activation::identity) {
    throw std::invalid_argument("final layer must be linear");
  }
}

namespace {

void dense_forward(const DenseLayer& layer, std::span<const double> x, Vector& y) {
  y.assign(layer.out, 0.0);
  for (std::size_t o = 0; o < layer.out; ++o) {
    const double* w = layer.weights.data() + o * layer.in;
    double s = layer.bias[o];
    for (std::size_t i = 0; i < layer.in; ++i) s += w[i] * x[i];
    y[o] = (layer.activation == Activation::relu && s < 0.0) ? 0.0 : s;
  }
}

}  // namespace

Vector ProjectionNet::forward(std::span<const double> x) const {
  if (x.size() != input_dim()) throw std::invalid_argument("forward: input dimension mismatch");
  Vector cur(x.begin(), x.end());
  Vector next;
  for (const auto& layer : layers_) {
    dense_forward(layer, cur, next);
    std::swap(cur, next);
  }
  return cur;
}

std::size_t ProjectionNet::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers_) n += l.weights.size() + l.bias.size();
  return n;
}

std::vector<double> ProjectionNet::flat_parameters() const {
  std::vector<double> out;
  out.reserve(parameter_count());
  for (const auto& l : layers_) {
    out.insert(out.end(), l.weights.begin(), l.weights.end());
    out.insert(out.end(), l.bias.begin(), l.bias.end());
  }
  return out;
}

void ProjectionNet::set_flat_parameters(std::span<const double> params) {
  if (params.size() != parameter_count()) {
    throw std::invalid_argument("set_flat_parameters: size mismatch");
  }
  std::size_t off = 0;
  for (auto& l : layers_) {
    std::copy_n(params.begin() + off, l.weights.size(), l.weights.begin());
    off += l.weights.size();
    std::copy_n(params.begin() + off, l.bias.size(), l.bias.begin());
    off += l.bias.size();
  }
}

ProjectionNet init_net(std::size_t input_dim, const std::vector<std::size_t>& hidden_dims,
                       std::size_t output_dim, std::uint64_t seed) {
  std::vector<std::size_t> dims{input_dim};
  dims.insert(dims.end(), hidden_dims.begin(), hidden_dims.end());
  dims.push_back(output_dim);
  for (auto d : dims) {
    if (d == 0) throw std::invalid_argument("init_net: dims must be >= 1");
  }
  Rng rng(seed);
  std::vector<DenseLayer> layers;
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    DenseLayer layer;
    layer.in = dims[l];
    layer.out = dims[l + 1];
    layer.activation = (l + 2 == dims.size()) ? Activation::identity : Activation::relu;
    const double limit = std::sqrt(6.0 / static_cast<double>(layer.in));
    std::uniform_real_distribution<double> dist(-limit, limit);
    layer.weights.resize(layer.in * layer.out);
    for (auto& w : layer.weights) w = dist(rng);
    layer.bias.assign(layer.out, 0.0);
    layers.push_back(std::move(layer));
  }
  return ProjectionNet(std::move(layers));
}

ProjectionNet identity_net(std::size_t dim) {
  DenseLayer layer{dim, dim, std::vector<double>(dim * dim, 0.0), std::vector<double>(dim, 0.0),
                   Activation::identity};
  for (std::size_t i = 0; i < dim; ++i) layer.weights[i * dim + i] = 1.0;
  return ProjectionNet({std::move(layer)});
}

ForwardTrace forward_trace(const ProjectionNet& net, std::span<const double> x) {
  if (x.size() != net.input_dim()) throw std::invalid_argument("forward: input dimension mismatch");
  ForwardTrace trace;
  trace.activations.reserve(net.layers().size() + 1);
  trace.activations.emplace_back(x.begin(), x.end());
  for (const auto& layer : net.layers()) {
    Vector y;
    dense_forward(layer, trace.activations.back(), y);
    trace.activations.push_back(std::move(y));
  }
  return trace;
}

void backward(const ProjectionNet& net, const ForwardTrace& trace,
              std::span<const double> grad_output, std::span<double> grad_params) {
  const auto& layers = net.layers();
  // offsets of each layer's block in the flat layout
  std::vector<std::size_t> offset(layers.size());
  std::size_t off = 0;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    offset[l] = off;
    off += layers[l].weights.size() + layers[l].bias.size();
  }

  Vector delta(grad_output.begin(), grad_output.end());
  Vector prev;
  for (std::size_t l = layers.size(); l-- > 0;) {
    const auto& layer = layers[l];
    const auto& input = trace.activations[l];
    const auto& output = trace.activations[l + 1];
    if (layer.activation == Activation::relu) {
      for (std::size_t o = 0; o < layer.out; ++o) {
        if (output[o] <= 0.0) delta[o] = 0.0;
      }
    }
    double* gw = grad_params.data() + offset[l];
    double* gb = gw + layer.weights.size();
    for (std::size_t o = 0; o < layer.out; ++o) {
      if (delta[o] == 0.0) continue;
      for (std::size_t i = 0; i < layer.in; ++i) gw[o * layer.in + i] += delta[o] * input[i];
      gb[o] += delta[o];
    }
    if (l == 0) break;
    prev.assign(layer.in, 0.0);
    for (std::size_t o = 0; o < layer.out; ++o) {
      if (delta[o] == 0.0) continue;
      const double* w = layer.weights.data() + o * layer.in;
      for (std::size_t i = 0; i < layer.in; ++i) prev[i] += w[i] * delta[o];
    }
    std::swap(delta, prev);
  }
}

// --- optimization --------------------------------------------------------------

OptimizerState make_optimizer(OptimizerKind method, double learning_rate) {
  if (!(learning_rate >= 0)) throw std::invalid_argument("learning_rate must be >= 0");
  OptimizerState opt;
  opt.method = method;
  opt.learning_rate = learning_rate;
  return opt;
}

void apply_gradient(ProjectionNet& net, std::span<const double> grad, OptimizerState& opt) {
  auto params = net.flat_parameters();
  if (grad.size() != params.size()) throw std::invalid_argument("gradient size mismatch");
  const double lr = opt.learning_rate;
  if (opt.method == OptimizerKind::sgd) {
    for (std::size_t i = 0; i < params.size(); ++i) {
      params[i] -= lr * (grad[i] + opt.weight_decay * params[i]);
    }
  } else {
    if (opt.m.size() != params.size()) {
      opt.m.assign(params.size(), 0.0);
      opt.v.assign(params.size(), 0.0);
      opt.timestep = 0;
    }
    ++opt.timestep;
    const double t = static_cast<double>(opt.timestep);
    const double c1 = 1.0 - std::pow(opt.beta1, t);
    const double c2 = 1.0 - std::pow(opt.beta2, t);
    for (std::size_t i = 0; i < params.size(); ++i) {
      const double g = grad[i] + opt.weight_decay * params[i];
      opt.m[i] = opt.beta1 * opt.m[i] + (1.0 - opt.beta1) * g;
      opt.v[i] = opt.beta2 * opt.v[i] + (1.0 - opt.beta2) * g * g;
      params[i] -= lr * (opt.m[i] / c1) / (std::sqrt(opt.v[i] / c2) + opt.epsilon);
    }
  }
  net.set_flat_parameters(params);
}

std::size_t min_dissimilar(LossKind kind) { return kind == LossKind::scloss_alt ? 2 : 1; }

double batch_loss(const ProjectionNet& net, const std::vector<Vector>& similar,
                  const std::vector<Vector>& dissimilar, double tau, LossKind kind,
                  std::vector<double>* grad_params) {
  if (similar.size() < 2 || dissimilar.size() < min_dissimilar(kind)) {
    throw BatchTooSmall("training batch needs >= 2 similar and >= " +
                        std::to_string(min_dissimilar(kind)) + " dissimilar");
  }
  std::vector<ForwardTrace> s_trace, d_trace;
  std::vector<Vector> s_proj, d_proj;
  for (const auto& x : similar) {
    s_trace.push_back(forward_trace(net, x));
    s_proj.push_back(s_trace.back().output());
  }
  for (const auto& x : dissimilar) {
    d_trace.push_back(forward_trace(net, x));
    d_proj.push_back(d_trace.back().output());
  }
  if (!grad_params) {
    return kind == LossKind::scloss ? scloss(s_proj, d_proj, tau) : scloss_alt(s_proj, d_proj, tau);
  }
  const LossGradient lg = kind == LossKind::scloss ? scloss_with_grad(s_proj, d_proj, tau)
                                                   : scloss_alt_with_grad(s_proj, d_proj, tau);
  grad_params->assign(net.parameter_count(), 0.0);
  for (std::size_t i = 0; i < s_trace.size(); ++i) {
    backward(net, s_trace[i], lg.grad_similar[i], *grad_params);
  }
  for (std::size_t i = 0; i < d_trace.size(); ++i) {
    backward(net, d_trace[i], lg.grad_dissimilar[i], *grad_params);
  }
  return lg.value;
}

double train_step(ProjectionNet& net, const std::vector<Vector>& similar,
                  const std::vector<Vector>& dissimilar, const TrainConfig& cfg, LossKind kind,
                  OptimizerState& opt) {
  std::vector<double> grad;
  const double loss = batch_loss(net, similar, dissimilar, cfg.tau, kind, &grad);
  apply_gradient(net, grad, opt);
  return loss;
}

PretrainResult pretrain(ProjectionNet net, const EmbeddingView& view, const PretrainConfig& cfg) {
  if (cfg.batch_size < 2) throw std::invalid_argument("pretrain: batch_size must be >= 2");
  if (view.dim != net.input_dim()) throw std::invalid_argument("pretrain: view dim != net input");
  PretrainResult result{std::move(net), {}};
  if (cfg.steps == 0) return result;
  if (view.rows() < cfg.batch_size) throw std::invalid_argument("pretrain: view has too few rows");

  Rng rng(cfg.train.seed);
  std::normal_distribution<double> noise(0.0, cfg.noise_sigma);
  auto opt = make_optimizer(OptimizerKind::adam, cfg.train.learning_rate);
  opt.weight_decay = cfg.weight_decay;
  const LossConfig loss_cfg{cfg.train.tau, cfg.include_positive_in_denominator};

  std::vector<std::size_t> rows(view.rows());
  std::iota(rows.begin(), rows.end(), 0);
  const std::size_t b = cfg.batch_size;
  for (std::size_t step = 0; step < cfg.steps; ++step) {
    // partial Fisher-Yates for b distinct rows
    for (std::size_t i = 0; i < b; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, rows.size() - 1);
      std::swap(rows[i], rows[pick(rng)]);
    }
    std::vector<ForwardTrace> traces(2 * b);
    std::vector<Vector> proj(2 * b);
    for (std::size_t copy = 0; copy < 2; ++copy) {
      for (std::size_t i = 0; i < b; ++i) {
        Vector x = to_vector(view.row(rows[i]));
        if (cfg.noise_sigma > 0) {
          for (auto& v : x) v += noise(rng);
        }
        const std::size_t slot = copy * b + i;
        traces[slot] = forward_trace(result.net, x);
        proj[slot] = traces[slot].output();
      }
    }
    const auto lg = nt_xent_with_grad(proj, loss_cfg);
    std::vector<double> grad(result.net.parameter_count(), 0.0);
    for (std::size_t i = 0; i < proj.size(); ++i) backward(result.net, traces[i], lg.grad[i], grad);
    apply_gradient(result.net, grad, opt);
    result.losses.push_back(lg.value);
  }
  return result;
}

// --- checkpoints ---------------------------------------------------------------

std::string to_checkpoint_json(const ProjectionNet& net) {
  json j;
  j["format"] = "faircop-net";
  j["version"] = 1;
  j["layers"] = json::array();
  for (const auto& l : net.layers()) {
    j["layers"].push_back({{"in", l.in},
                           {"out", l.out},
                           {"activation", l.activation == Activation::relu ? "relu" : "identity"}});
  }
  const auto params = net.flat_parameters();
  std::vector<std::uint8_t> bytes;
  bytes.reserve(params.size() * 8);
  for (double p : params) {
    const auto bits = std::bit_cast<std::uint64_t>(p);
    for (int k = 0; k < 8; ++k) bytes.push_back(static_cast<std::uint8_t>(bits >> (8 * k)));
  }
  j["parameters_f64le_base64"] = base64_encode(bytes);
  return j.dump(2);
}

ProjectionNet from_checkpoint_json(const std::string& text) {
  const json j = json::parse(text);
  if (j.value("format", "") != "faircop-net") throw std::invalid_argument("not a network checkpoint");
  std::vector<DenseLayer> layers;
  for (const auto& jl : j.at("layers")) {
    DenseLayer l;
    l.in = jl.at("in").get<std::size_t>();
    l.out = jl.at("out").get<std::size_t>();
    const auto act = jl.at("activation").get<std::string>();
    if (act != "relu" && act != "identity") throw std::invalid_argument("unknown activation " + act);
    l.activation = act == "relu" ? Activation::relu : Activation::identity;
    l.weights.assign(l.in * l.out, 0.0);
    l.bias.assign(l.out, 0.0);
    layers.push_back(std::move(l));
  }
  ProjectionNet net(std::move(layers));
  const auto bytes = base64_decode(j.at("parameters_f64le_base64").get<std::string>());
  if (bytes.size() != net.parameter_count() * 8) {
    throw std::invalid_argument("checkpoint parameter payload has wrong size");
  }
  std::vector<double> params(net.parameter_count());
  for (std::size_t i = 0; i < params.size(); ++i) {
    std::uint64_t bits = 0;
    for (int k = 0; k < 8; ++k) bits |= static_cast<std::uint64_t>(bytes[8 * i + k]) << (8 * k);
    params[i] = std::bit_cast<double>(bits);
  }
  net.set_flat_parameters(params);
  return net;
}

}  // namespace faircop
