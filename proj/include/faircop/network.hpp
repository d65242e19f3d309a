#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "faircop/corpus.hpp"
#include "faircop/losses.hpp"
#include "faircop/vecmath.hpp"

namespace faircop {

enum class Activation { relu, identity };

struct DenseLayer {
  std::size_t in = 0;
  std::size_t out = 0;
  std::vector<double> weights;  // out x in, row-major
  std::vector<double> bias;     // out
  Activation activation = Activation::identity;

  bool operator==(const DenseLayer&) const = default;
};

/// Small feed-forward projection f: base embedding -> personalized space.
class ProjectionNet {
 public:
  ProjectionNet() = default;
  explicit ProjectionNet(std::vector<DenseLayer> layers);

  std::size_t input_dim() const { return layers_.empty() ? 0 : layers_.front().in; }
  std::size_t output_dim() const { return layers_.empty() ? 0 : layers_.back().out; }
  const std::vector<DenseLayer>& layers() const { return layers_; }

  Vector forward(std::span<const double> x) const;

  // Parameters flattened layer by layer, weights then bias.
  std::size_t parameter_count() const;
  std::vector<double> flat_parameters() const;
  void set_flat_parameters(std::span<const double> params);

  bool operator==(const ProjectionNet&) const = default;

 private:
  std::vector<DenseLayer> layers_;
};

/// He-uniform weights, zero biases, relu on hidden layers, identity output.
ProjectionNet init_net(std::size_t input_dim, const std::vector<std::size_t>& hidden_dims,
                       std::size_t output_dim, std::uint64_t seed);

/// One linear layer with W = I and b = 0.
ProjectionNet identity_net(std::size_t dim);

/// Activations of every layer for one input; activations[0] is the input.
struct ForwardTrace {
  std::vector<Vector> activations;
  const Vector& output() const { return activations.back(); }
};

ForwardTrace forward_trace(const ProjectionNet& net, std::span<const double> x);

/// Accumulates dL/dparams into `grad_params` given dL/doutput.
void backward(const ProjectionNet& net, const ForwardTrace& trace,
              std::span<const double> grad_output, std::span<double> grad_params);

enum class OptimizerKind { sgd, adam };

struct OptimizerState {
  OptimizerKind method = OptimizerKind::adam;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 0.0;
  std::vector<double> m;
  std::vector<double> v;
  std::uint64_t timestep = 0;
};

OptimizerState make_optimizer(OptimizerKind method, double learning_rate);

/// One optimizer step on `grad` (same layout as flat_parameters()).
void apply_gradient(ProjectionNet& net, std::span<const double> grad, OptimizerState& opt);

enum class LossKind { scloss, scloss_alt };

struct TrainConfig {
  std::size_t epochs = 10;
  double learning_rate = 1e-3;
  double tau = 0.5;
  std::uint64_t seed = 0;
};

/// Thrown when a batch cannot form the pairs a loss needs. The engine treats
/// it as "skip training this round".
class BatchTooSmall : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

std::size_t min_dissimilar(LossKind kind);

/// Loss of the projected batch and, when `grad_params` is set, its gradient
/// w.r.t. every network parameter.
double batch_loss(const ProjectionNet& net, const std::vector<Vector>& similar,
                  const std::vector<Vector>& dissimilar, double tau, LossKind kind,
                  std::vector<double>* grad_params);

/// One optimizer step on the selected loss. Returns the pre-step loss.
double train_step(ProjectionNet& net, const std::vector<Vector>& similar,
                  const std::vector<Vector>& dissimilar, const TrainConfig& cfg, LossKind kind,
                  OptimizerState& opt);

struct PretrainConfig {
  TrainConfig train;
  double noise_sigma = 0.1;
  std::size_t batch_size = 32;
  std::size_t steps = 500;
  double weight_decay = 0.0;
  bool include_positive_in_denominator = false;
};

struct PretrainResult {
  ProjectionNet net;
  std::vector<double> losses;  // one per step
};

/// Contrastive pretraining: the two views of a sample are independent
/// Gaussian perturbations of its base embedding.
PretrainResult pretrain(ProjectionNet net, const EmbeddingView& view, const PretrainConfig& cfg);

std::string to_checkpoint_json(const ProjectionNet& net);
ProjectionNet from_checkpoint_json(const std::string& text);

}  // namespace faircop
