#include "mcinv/mlp.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <nlohmann/json.hpp>

#include "mcinv/csv.hpp"

namespace mcinv {

namespace {

using json = nlohmann::ordered_json;

void validate_spec(const MlpSpec& spec) {
  require(spec.dropout_rate >= 0.0 && spec.dropout_rate < 1.0,
          "mlp: dropout_rate must lie in [0, 1)");
  if (const auto* plain = std::get_if<PlainTopology>(&spec.topology)) {
    require(plain->layer_sizes.size() >= 2,
            "mlp: plain topology needs input and output sizes");
    for (const Index s : plain->layer_sizes)
      require(s >= 1, "mlp: layer sizes must be >= 1");
  } else {
    const auto& split = std::get<SplitTopology>(spec.topology);
    const std::size_t branches = split.branch_input_sizes.size();
    require(branches >= 1, "mlp: split topology needs at least one branch");
    require(split.branch_hidden.size() == branches,
            "mlp: one hidden stack per branch");
    const std::size_t depth = split.branch_hidden.front().size();
    require(depth >= 1, "mlp: branches need at least one hidden layer");
    for (const auto& stack : split.branch_hidden) {
      require(stack.size() == depth, "mlp: branch depths must match");
      for (const Index s : stack) require(s >= 1, "mlp: layer sizes must be >= 1");
    }
    for (const Index s : split.branch_input_sizes)
      require(s >= 1, "mlp: branch input sizes must be >= 1");
    for (const Index s : split.joint_hidden)
      require(s >= 1, "mlp: layer sizes must be >= 1");
    require(split.output_size >= 1, "mlp: output size must be >= 1");
  }
}

DenseBlock make_block(Index in_offset, Index in_size, Index out_size, Rng& rng) {
  DenseBlock block;
  block.in_offset = in_offset;
  block.weights.resize(out_size, in_size);
  const double limit =
      std::sqrt(6.0 / static_cast<double>(in_size + out_size));
  for (Index c = 0; c < in_size; ++c)
    for (Index r = 0; r < out_size; ++r)
      block.weights(r, c) = rng.uniform(-limit, limit);
  block.bias = Vector::Zero(out_size);
  block.weight_acc = Matrix::Zero(out_size, in_size);
  block.bias_acc = Vector::Zero(out_size);
  return block;
}

}  // namespace

Index MlpModel::parameter_count() const {
  Index count = 0;
  for (const auto& layer : layers)
    for (const auto& block : layer.blocks)
      count += block.weights.size() + block.bias.size();
  return count;
}

const MlpLayer& MlpModel::layer_by_tag(const std::string& tag) const {
  for (const auto& layer : layers)
    if (layer.tag == tag) return layer;
  throw ConfigError("mlp: unknown layer tag '" + tag + "'");
}

MlpModel build_mlp(const MlpSpec& spec) {
  validate_spec(spec);
  MlpModel model;
  model.spec = spec;
  Rng rng(spec.seed);

  if (const auto* plain = std::get_if<PlainTopology>(&spec.topology)) {
    const auto& sizes = plain->layer_sizes;
    model.input_size = sizes.front();
    model.output_size = sizes.back();
    for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
      MlpLayer layer;
      const bool last = l + 2 == sizes.size();
      layer.relu = !last;
      layer.tag = last ? "out" : "fc" + std::to_string(l + 1);
      layer.in_size = sizes[l];
      layer.out_size = sizes[l + 1];
      layer.blocks.push_back(make_block(0, sizes[l], sizes[l + 1], rng));
      model.layers.push_back(std::move(layer));
    }
    return model;
  }

  const auto& split = std::get<SplitTopology>(spec.topology);
  const std::size_t branches = split.branch_input_sizes.size();
  const std::size_t depth = split.branch_hidden.front().size();
  model.input_size = std::accumulate(split.branch_input_sizes.begin(),
                                     split.branch_input_sizes.end(), Index(0));
  model.output_size = split.output_size;

  std::vector<Index> in_offsets(branches);
  std::vector<Index> in_widths(branches);
  Index offset = 0;
  for (std::size_t b = 0; b < branches; ++b) {
    in_offsets[b] = offset;
    in_widths[b] = split.branch_input_sizes[b];
    offset += in_widths[b];
  }

  for (std::size_t d = 0; d < depth; ++d) {
    MlpLayer layer;
    layer.relu = true;
    layer.tag = "split" + std::to_string(d + 1);
    layer.in_size = std::accumulate(in_widths.begin(), in_widths.end(), Index(0));
    Index out_offset = 0;
    std::vector<Index> next_offsets(branches);
    std::vector<Index> next_widths(branches);
    for (std::size_t b = 0; b < branches; ++b) {
      const Index out_size = split.branch_hidden[b][d];
      layer.blocks.push_back(make_block(in_offsets[b], in_widths[b], out_size, rng));
      next_offsets[b] = out_offset;
      next_widths[b] = out_size;
      out_offset += out_size;
    }
    layer.out_size = out_offset;
    model.layers.push_back(std::move(layer));
    in_offsets = next_offsets;
    in_widths = next_widths;
  }

  Index width = std::accumulate(in_widths.begin(), in_widths.end(), Index(0));
  for (std::size_t j = 0; j < split.joint_hidden.size(); ++j) {
    MlpLayer layer;
    layer.relu = true;
    layer.tag = "joint" + std::to_string(j + 1);
    layer.in_size = width;
    layer.out_size = split.joint_hidden[j];
    layer.blocks.push_back(make_block(0, width, layer.out_size, rng));
    model.layers.push_back(std::move(layer));
    width = layer.out_size;
  }

  MlpLayer out_layer;
  out_layer.relu = false;
  out_layer.tag = "out";
  out_layer.in_size = width;
  out_layer.out_size = split.output_size;
  out_layer.blocks.push_back(make_block(0, width, split.output_size, rng));
  model.layers.push_back(std::move(out_layer));
  return model;
}

MlpModel build_split_mlp(const MlpSpec& spec) {
  require(std::holds_alternative<SplitTopology>(spec.topology),
          "build_split_mlp: spec must carry a split topology");
  return build_mlp(spec);
}

namespace {

struct LayerCache {
  Vector pre;   // affine output, before ReLU
  Vector post;  // layer output as propagated (post ReLU and dropout)
  Vector mask;  // dropout scale per unit; empty when unused
};

Vector apply_layer_affine(const MlpLayer& layer, const Vector& input) {
  Vector out(layer.out_size);
  Index out_offset = 0;
  for (const auto& block : layer.blocks) {
    out.segment(out_offset, block.weights.rows()).noalias() =
        block.weights * input.segment(block.in_offset, block.weights.cols()) +
        block.bias;
    out_offset += block.weights.rows();
  }
  return out;
}

// Shared by forward() and backward(); fills per-layer caches.
Vector run_forward(const MlpModel& model, const Vector& x, bool training,
                   Rng* gen, std::vector<LayerCache>& caches) {
  require_dims(x.size() == model.input_size,
               "mlp forward: input length mismatch");
  const double p = model.spec.dropout_rate;
  const bool use_dropout = training && p > 0.0;
  if (use_dropout)
    require(gen != nullptr, "mlp forward: training with dropout needs a generator");

  caches.resize(model.layers.size());
  Vector current = x;
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    const MlpLayer& layer = model.layers[l];
    LayerCache& cache = caches[l];
    cache.pre = apply_layer_affine(layer, current);
    if (layer.relu) {
      cache.post = cache.pre.cwiseMax(0.0);
      if (use_dropout) {
        cache.mask.resize(layer.out_size);
        const double scale = 1.0 / (1.0 - p);
        for (Index i = 0; i < layer.out_size; ++i)
          cache.mask[i] = gen->uniform() >= p ? scale : 0.0;
        cache.post = cache.post.cwiseProduct(cache.mask);
      } else {
        cache.mask.resize(0);
      }
    } else {
      cache.post = cache.pre;
      cache.mask.resize(0);
    }
    current = cache.post;
  }
  return current;
}

}  // namespace

ForwardTrace forward(const MlpModel& model, const Vector& x, bool training,
                     Rng* gen) {
  std::vector<LayerCache> caches;
  ForwardTrace trace;
  trace.output = run_forward(model, x, training, gen, caches);
  trace.activations.reserve(caches.size());
  for (const auto& cache : caches) trace.activations.push_back(cache.post);
  return trace;
}

double loss_mse(const Vector& pred, const Vector& target) {
  require_dims(pred.size() == target.size(), "loss_mse: length mismatch");
  return (pred - target).squaredNorm() / static_cast<double>(pred.size());
}

MlpGradients backward(const MlpModel& model, const Vector& x,
                      const Vector& target, bool training, Rng* gen) {
  require_dims(target.size() == model.output_size,
               "mlp backward: target length mismatch");
  std::vector<LayerCache> caches;
  const Vector output = run_forward(model, x, training, gen, caches);

  MlpGradients grads;
  grads.layers.resize(model.layers.size());

  Vector delta =
      2.0 / static_cast<double>(model.output_size) * (output - target);

  for (std::size_t l = model.layers.size(); l-- > 0;) {
    const MlpLayer& layer = model.layers[l];
    const LayerCache& cache = caches[l];
    if (layer.relu) {
      if (cache.mask.size() > 0) delta = delta.cwiseProduct(cache.mask);
      delta = (cache.pre.array() > 0.0).select(delta, 0.0);
    }
    const Vector& input = l == 0 ? x : caches[l - 1].post;
    Vector delta_prev = Vector::Zero(layer.in_size);
    auto& layer_grads = grads.layers[l];
    layer_grads.resize(layer.blocks.size());
    Index out_offset = 0;
    for (std::size_t b = 0; b < layer.blocks.size(); ++b) {
      const DenseBlock& block = layer.blocks[b];
      const Index rows = block.weights.rows();
      const Index cols = block.weights.cols();
      const auto delta_slice = delta.segment(out_offset, rows);
      const auto input_slice = input.segment(block.in_offset, cols);
      layer_grads[b].weights.noalias() = delta_slice * input_slice.transpose();
      layer_grads[b].bias = delta_slice;
      delta_prev.segment(block.in_offset, cols).noalias() +=
          block.weights.transpose() * delta_slice;
      out_offset += rows;
    }
    delta = std::move(delta_prev);
  }
  return grads;
}

void adagrad_step(MlpModel& model, const MlpGradients& grads,
                  const TrainConfig& cfg) {
  require_dims(grads.layers.size() == model.layers.size(),
               "adagrad_step: gradient shape mismatch");
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    auto& layer = model.layers[l];
    require_dims(grads.layers[l].size() == layer.blocks.size(),
                 "adagrad_step: gradient shape mismatch");
    for (std::size_t b = 0; b < layer.blocks.size(); ++b) {
      DenseBlock& block = layer.blocks[b];
      const BlockGradient& g = grads.layers[l][b];
      block.weight_acc.array() += g.weights.array().square();
      block.weights.array() -=
          cfg.learning_rate * g.weights.array() /
          (block.weight_acc.array().sqrt() + cfg.adagrad_epsilon);
      block.bias_acc.array() += g.bias.array().square();
      block.bias.array() -=
          cfg.learning_rate * g.bias.array() /
          (block.bias_acc.array().sqrt() + cfg.adagrad_epsilon);
    }
  }
}

namespace {

struct BatchCache {
  Matrix pre;
  Matrix post;
  Matrix mask;
};

Matrix batch_affine(const MlpLayer& layer, const Matrix& input) {
  Matrix out(layer.out_size, input.cols());
  Index out_offset = 0;
  for (const auto& block : layer.blocks) {
    out.middleRows(out_offset, block.weights.rows()).noalias() =
        block.weights *
        input.middleRows(block.in_offset, block.weights.cols());
    out.middleRows(out_offset, block.weights.rows()).colwise() += block.bias;
    out_offset += block.weights.rows();
  }
  return out;
}

// Batched training pass over one minibatch; masks drawn layer by layer,
// column-major within each mask matrix.
Matrix run_forward_batch(const MlpModel& model, const Matrix& x, bool training,
                         Rng* gen, std::vector<BatchCache>& caches) {
  const double p = model.spec.dropout_rate;
  const bool use_dropout = training && p > 0.0;
  caches.resize(model.layers.size());
  Matrix current = x;
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    const MlpLayer& layer = model.layers[l];
    BatchCache& cache = caches[l];
    cache.pre = batch_affine(layer, current);
    if (layer.relu) {
      cache.post = cache.pre.cwiseMax(0.0);
      if (use_dropout) {
        const double scale = 1.0 / (1.0 - p);
        cache.mask.resize(layer.out_size, x.cols());
        for (Index c = 0; c < cache.mask.cols(); ++c)
          for (Index r = 0; r < cache.mask.rows(); ++r)
            cache.mask(r, c) = gen->uniform() >= p ? scale : 0.0;
        cache.post = cache.post.cwiseProduct(cache.mask);
      } else {
        cache.mask.resize(0, 0);
      }
    } else {
      cache.post = cache.pre;
      cache.mask.resize(0, 0);
    }
    current = cache.post;
  }
  return current;
}

}  // namespace

std::pair<MlpModel, TrainLog> train_mlp(const MlpSpec& spec,
                                        const Matrix& inputs,
                                        const Matrix& targets,
                                        const TrainConfig& cfg) {
  require(inputs.cols() >= 1, "train_mlp: empty dataset");
  require_dims(inputs.cols() == targets.cols(),
               "train_mlp: inputs/targets sample counts differ");
  require(cfg.learning_rate > 0.0 && cfg.minibatch_size >= 1 &&
              cfg.epochs >= 1 && cfg.adagrad_epsilon > 0.0,
          "train_mlp: config values must be positive");

  MlpModel model = build_mlp(spec);
  require_dims(inputs.rows() == model.input_size,
               "train_mlp: input feature size mismatch");
  require_dims(targets.rows() == model.output_size,
               "train_mlp: target size mismatch");

  const Index n = inputs.cols();
  Rng shuffle_rng(Rng::child_seed(cfg.seed, 1));
  Rng dropout_rng(Rng::child_seed(cfg.seed, 2));

  std::vector<Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Index(0));

  TrainLog log;
  MlpGradients grads;
  grads.layers.resize(model.layers.size());
  for (std::size_t l = 0; l < model.layers.size(); ++l)
    grads.layers[l].resize(model.layers[l].blocks.size());

  for (Index epoch = 0; epoch < cfg.epochs; ++epoch) {
    // Fisher-Yates with j = next() % (i + 1).
    for (Index i = n - 1; i > 0; --i) {
      const Index j = static_cast<Index>(
          shuffle_rng.next() % static_cast<std::uint64_t>(i + 1));
      std::swap(order[static_cast<std::size_t>(i)],
                order[static_cast<std::size_t>(j)]);
    }

    double epoch_loss = 0.0;
    for (Index start = 0; start < n; start += cfg.minibatch_size) {
      const Index batch = std::min<Index>(cfg.minibatch_size, n - start);
      Matrix xb(model.input_size, batch);
      Matrix tb(model.output_size, batch);
      for (Index c = 0; c < batch; ++c) {
        const Index src = order[static_cast<std::size_t>(start + c)];
        xb.col(c) = inputs.col(src);
        tb.col(c) = targets.col(src);
      }

      std::vector<BatchCache> caches;
      const Matrix output =
          run_forward_batch(model, xb, true, &dropout_rng, caches);
      const Matrix diff = output - tb;
      epoch_loss += diff.squaredNorm() / static_cast<double>(model.output_size);

      // Backprop through the cached batch; gradients averaged over samples.
      Matrix delta = (2.0 / static_cast<double>(model.output_size * batch)) * diff;
      for (std::size_t l = model.layers.size(); l-- > 0;) {
        const MlpLayer& layer = model.layers[l];
        const BatchCache& cache = caches[l];
        if (layer.relu) {
          if (cache.mask.size() > 0) delta = delta.cwiseProduct(cache.mask);
          delta = (cache.pre.array() > 0.0).select(delta, 0.0);
        }
        const Matrix& input = l == 0 ? xb : caches[l - 1].post;
        Matrix delta_prev = Matrix::Zero(layer.in_size, batch);
        Index out_offset = 0;
        for (std::size_t b = 0; b < layer.blocks.size(); ++b) {
          const DenseBlock& block = layer.blocks[b];
          const Index rows = block.weights.rows();
          const Index cols = block.weights.cols();
          const auto delta_slice = delta.middleRows(out_offset, rows);
          const auto input_slice = input.middleRows(block.in_offset, cols);
          grads.layers[l][b].weights.noalias() =
              delta_slice * input_slice.transpose();
          grads.layers[l][b].bias = delta_slice.rowwise().sum();
          delta_prev.middleRows(block.in_offset, cols).noalias() +=
              block.weights.transpose() * delta_slice;
          out_offset += rows;
        }
        delta = std::move(delta_prev);
      }
      adagrad_step(model, grads, cfg);
    }
    log.epoch_loss.push_back(epoch_loss / static_cast<double>(n));
  }
  return {std::move(model), std::move(log)};
}

Matrix predict_batch(const MlpModel& model, const Matrix& inputs) {
  require_dims(inputs.rows() == model.input_size,
               "predict_batch: input feature size mismatch");
  std::vector<BatchCache> caches;
  return run_forward_batch(model, inputs, false, nullptr, caches);
}

std::vector<ActivationRow> dump_activations(
    const MlpModel& model, const Matrix& inputs,
    const std::vector<std::string>& layer_tags) {
  std::vector<std::size_t> layer_ids;
  for (const auto& tag : layer_tags) {
    bool found = false;
    for (std::size_t l = 0; l < model.layers.size(); ++l)
      if (model.layers[l].tag == tag) {
        layer_ids.push_back(l);
        found = true;
        break;
      }
    if (!found) throw ConfigError("dump_activations: unknown layer tag '" + tag + "'");
  }

  std::vector<ActivationRow> rows;
  rows.reserve(static_cast<std::size_t>(inputs.cols()) * layer_tags.size());
  for (Index s = 0; s < inputs.cols(); ++s) {
    const ForwardTrace trace = forward(model, inputs.col(s), false, nullptr);
    for (std::size_t t = 0; t < layer_tags.size(); ++t) {
      ActivationRow row;
      row.sample = s;
      row.layer_tag = layer_tags[t];
      row.values = trace.activations[layer_ids[t]];
      rows.push_back(std::move(row));
    }
  }
  return rows;
}

namespace {

json matrix_to_json(const Matrix& m) {
  json values = json::array();
  for (Index r = 0; r < m.rows(); ++r)
    for (Index c = 0; c < m.cols(); ++c) values.push_back(m(r, c));
  return values;
}

Matrix matrix_from_json(const json& values, Index rows, Index cols) {
  if (static_cast<Index>(values.size()) != rows * cols)
    throw IoError("mlp json: weight array size mismatch");
  Matrix m(rows, cols);
  std::size_t i = 0;
  for (Index r = 0; r < rows; ++r)
    for (Index c = 0; c < cols; ++c) m(r, c) = values[i++].get<double>();
  return m;
}

json vector_to_json(const Vector& v) {
  json values = json::array();
  for (Index i = 0; i < v.size(); ++i) values.push_back(v[i]);
  return values;
}

Vector vector_from_json(const json& values) {
  Vector v(static_cast<Index>(values.size()));
  for (Index i = 0; i < v.size(); ++i)
    v[i] = values[static_cast<std::size_t>(i)].get<double>();
  return v;
}

}  // namespace

void save_model_json(const std::string& path, const MlpModel& model) {
  json doc;
  doc["format"] = "mcinv-mlp";
  doc["format_version"] = 1;
  json spec;
  if (const auto* plain = std::get_if<PlainTopology>(&model.spec.topology)) {
    spec["kind"] = "plain";
    spec["layer_sizes"] = plain->layer_sizes;
  } else {
    const auto& split = std::get<SplitTopology>(model.spec.topology);
    spec["kind"] = "split";
    spec["branch_input_sizes"] = split.branch_input_sizes;
    spec["branch_hidden"] = split.branch_hidden;
    spec["joint_hidden"] = split.joint_hidden;
    spec["output_size"] = split.output_size;
  }
  spec["dropout_rate"] = model.spec.dropout_rate;
  spec["seed"] = model.spec.seed;
  doc["spec"] = std::move(spec);
  doc["input_size"] = model.input_size;
  doc["output_size"] = model.output_size;

  json layers = json::array();
  for (const auto& layer : model.layers) {
    json jl;
    jl["tag"] = layer.tag;
    jl["relu"] = layer.relu;
    jl["in_size"] = layer.in_size;
    jl["out_size"] = layer.out_size;
    json blocks = json::array();
    for (const auto& block : layer.blocks) {
      json jb;
      jb["in_offset"] = block.in_offset;
      jb["rows"] = block.weights.rows();
      jb["cols"] = block.weights.cols();
      jb["weights"] = matrix_to_json(block.weights);
      jb["bias"] = vector_to_json(block.bias);
      jb["weight_acc"] = matrix_to_json(block.weight_acc);
      jb["bias_acc"] = vector_to_json(block.bias_acc);
      blocks.push_back(std::move(jb));
    }
    jl["blocks"] = std::move(blocks);
    layers.push_back(std::move(jl));
  }
  doc["layers"] = std::move(layers);
  write_text_file(path, doc.dump(1) + "\n");
}

MlpModel load_model_json(const std::string& path) {
  json doc;
  try {
    doc = json::parse(read_text_file(path));
  } catch (const json::parse_error& err) {
    throw IoError(path + ": " + err.what());
  }
  if (doc.value("format", "") != "mcinv-mlp")
    throw IoError(path + ": not an mcinv model file");

  MlpModel model;
  const json& spec = doc.at("spec");
  if (spec.at("kind") == "plain") {
    PlainTopology plain;
    plain.layer_sizes = spec.at("layer_sizes").get<std::vector<Index>>();
    model.spec.topology = std::move(plain);
  } else {
    SplitTopology split;
    split.branch_input_sizes =
        spec.at("branch_input_sizes").get<std::vector<Index>>();
    split.branch_hidden =
        spec.at("branch_hidden").get<std::vector<std::vector<Index>>>();
    split.joint_hidden = spec.at("joint_hidden").get<std::vector<Index>>();
    split.output_size = spec.at("output_size").get<Index>();
    model.spec.topology = std::move(split);
  }
  model.spec.dropout_rate = spec.at("dropout_rate").get<double>();
  model.spec.seed = spec.at("seed").get<std::uint64_t>();
  model.input_size = doc.at("input_size").get<Index>();
  model.output_size = doc.at("output_size").get<Index>();

  for (const json& jl : doc.at("layers")) {
    MlpLayer layer;
    layer.tag = jl.at("tag").get<std::string>();
    layer.relu = jl.at("relu").get<bool>();
    layer.in_size = jl.at("in_size").get<Index>();
    layer.out_size = jl.at("out_size").get<Index>();
    for (const json& jb : jl.at("blocks")) {
      DenseBlock block;
      block.in_offset = jb.at("in_offset").get<Index>();
      const Index rows = jb.at("rows").get<Index>();
      const Index cols = jb.at("cols").get<Index>();
      block.weights = matrix_from_json(jb.at("weights"), rows, cols);
      block.bias = vector_from_json(jb.at("bias"));
      block.weight_acc = matrix_from_json(jb.at("weight_acc"), rows, cols);
      block.bias_acc = vector_from_json(jb.at("bias_acc"));
      layer.blocks.push_back(std::move(block));
    }
    model.layers.push_back(std::move(layer));
  }
  return model;
}

}  // namespace mcinv
