#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "mcinv/rng.hpp"
#include "mcinv/types.hpp"

namespace mcinv {

// Feed-forward MLP machinery built directly on Eigen: dense layers with
// ReLU, inverted dropout, MSE loss and Adagrad updates. Two topologies are
// supported: a plain stack, and a split network whose input is partitioned
// into independent branches merged by joint layers. Branch blocks own
// separate weight matrices, so values from one branch never enter another
// branch's arithmetic.

struct PlainTopology {
  std::vector<Index> layer_sizes;  // [input, hidden..., output]
};

struct SplitTopology {
  std::vector<Index> branch_input_sizes;          // one per branch
  std::vector<std::vector<Index>> branch_hidden;  // equal depth per branch
  std::vector<Index> joint_hidden;
  Index output_size = 1;
};

struct MlpSpec {
  std::variant<PlainTopology, SplitTopology> topology;
  double dropout_rate = 0.0;  // in [0, 1); applied to hidden layers only
  std::uint64_t seed = 0;     // weight initialization stream
};

struct DenseBlock {
  Index in_offset = 0;
  Matrix weights;     // out x in
  Vector bias;
  Matrix weight_acc;  // Adagrad squared-gradient accumulators
  Vector bias_acc;
};

struct MlpLayer {
  std::string tag;
  bool relu = true;
  Index in_size = 0;
  Index out_size = 0;
  std::vector<DenseBlock> blocks;  // consecutive output slices
};

struct MlpModel {
  MlpSpec spec;
  std::vector<MlpLayer> layers;
  Index input_size = 0;
  Index output_size = 0;

  Index parameter_count() const;
  const MlpLayer& layer_by_tag(const std::string& tag) const;
};

struct TrainConfig {
  double learning_rate = 1e-3;
  Index minibatch_size = 128;
  Index epochs = 20;
  double adagrad_epsilon = 1e-10;
  std::uint64_t seed = 0;  // shuffling and dropout streams
};

// Weights uniform in +/- sqrt(6 / (fan_in + fan_out)) per block, biases
// zero, accumulators zero; fully determined by spec.seed.
MlpModel build_mlp(const MlpSpec& spec);

// Same, but requires the Split topology.
MlpModel build_split_mlp(const MlpSpec& spec);

struct ForwardTrace {
  Vector output;
  std::vector<Vector> activations;  // per layer, post-ReLU
};

// Hidden layers apply affine map, ReLU, then (training only) inverted
// dropout with scale 1/(1-p); the output layer is affine. The generator is
// consumed only when training with dropout_rate > 0: one uniform per hidden
// unit, layers in order.
ForwardTrace forward(const MlpModel& model, const Vector& x, bool training,
                     Rng* gen);

double loss_mse(const Vector& pred, const Vector& target);

struct BlockGradient {
  Matrix weights;
  Vector bias;
};

struct MlpGradients {
  std::vector<std::vector<BlockGradient>> layers;  // mirrors model blocks
};

// Gradients of loss_mse(forward(x), target) for every weight and bias.
// Consumes the generator exactly like the paired forward call, so passing a
// generator in the same state reproduces identical dropout masks.
MlpGradients backward(const MlpModel& model, const Vector& x,
                      const Vector& target, bool training, Rng* gen);

// G += g^2; p -= lr * g / (sqrt(G) + eps), elementwise.
void adagrad_step(MlpModel& model, const MlpGradients& grads,
                  const TrainConfig& cfg);

struct TrainLog {
  std::vector<double> epoch_loss;  // mean training loss per epoch
};

// Shuffled minibatch SGD with Adagrad over column-per-sample matrices.
// Minibatches run batched through Eigen matrix products with per-sample
// dropout mask columns; deterministic given (spec.seed, cfg.seed).
std::pair<MlpModel, TrainLog> train_mlp(const MlpSpec& spec,
                                        const Matrix& inputs,
                                        const Matrix& targets,
                                        const TrainConfig& cfg);

// Batched inference (training off), one column per sample.
Matrix predict_batch(const MlpModel& model, const Matrix& inputs);

struct ActivationRow {
  Index sample = 0;
  std::string layer_tag;
  Vector values;
};

// Deterministic export of eval-mode activations at the tagged layers;
// samples outer, tags inner.
std::vector<ActivationRow> dump_activations(
    const MlpModel& model, const Matrix& inputs,
    const std::vector<std::string>& layer_tags);

void save_model_json(const std::string& path, const MlpModel& model);
MlpModel load_model_json(const std::string& path);

}  // namespace mcinv
