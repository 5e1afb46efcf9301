#include "mapr/model.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <random>

#include "mapr/error.hpp"

namespace mapr {

namespace {

constexpr char kMagic[] = "MAPRCKPT1";
constexpr std::size_t kMagicLen = sizeof(kMagic) - 1;

Linear make_linear(std::size_t in, std::size_t out, std::mt19937_64& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<double> w(in * out);
  for (double& v : w) v = dist(rng);
  return {Tensor::from({in, out}, std::move(w), true), Tensor::zeros({out}, true)};
}

Tensor apply_linear(const Linear& layer, const Tensor& x) { return add(matmul(x, layer.weight), layer.bias); }

template <typename T>
void write_le(std::ostream& out, T value) {
  static_assert(std::endian::native == std::endian::little, "checkpoint writer assumes little-endian host");
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T read_le(std::istream& in, const std::filesystem::path& path) {
  T value{};
  in.read(reinterpret_cast<char*>(&value), sizeof(T));
  if (!in) throw DataError("checkpoint " + path.string() + ": truncated file");
  return value;
}

}  // namespace

void ModelConfig::validate() const {
  if (in_channels == 0) throw ConfigError("model: in_channels must be positive");
  if (point_widths.empty()) throw ConfigError("model: need at least one per-point layer");
  if (num_classes < 2) throw ConfigError("model: need at least two classes");
  for (auto w : point_widths)
    if (w == 0) throw ConfigError("model: layer widths must be positive");
  for (auto w : head_widths)
    if (w == 0) throw ConfigError("model: layer widths must be positive");
}

PointNetLite::PointNetLite(ModelConfig config, std::uint64_t seed) : config_(std::move(config)) {
  config_.validate();
  std::mt19937_64 rng(seed);
  std::size_t width = config_.in_channels;
  for (auto w : config_.point_widths) {
    point_layers_.push_back(make_linear(width, w, rng));
    width = w;
  }
  for (auto w : config_.head_widths) {
    head_layers_.push_back(make_linear(width, w, rng));
    width = w;
  }
  head_layers_.push_back(make_linear(width, config_.num_classes, rng));
}

Tensor PointNetLite::forward(const Tensor& batch) const {
  if (batch.rank() != 3 || batch.dim(2) != config_.in_channels) {
    throw ShapeError("model expects input [B, N, " + std::to_string(config_.in_channels) + "], got " +
                     shape_str(batch.shape()));
  }
  if (batch.dim(1) == 0) throw ShapeError("model input has no points");
  Tensor h = batch;
  for (const auto& layer : point_layers_) h = relu(apply_linear(layer, h));
  h = max_over_axis(h, 1);
  for (std::size_t i = 0; i + 1 < head_layers_.size(); ++i) h = relu(apply_linear(head_layers_[i], h));
  return apply_linear(head_layers_.back(), h);
}

Prediction PointNetLite::predict(const Tensor& batch) const {
  const Tensor logits = forward(batch);
  const Tensor probs = softmax(logits);
  Prediction p;
  p.num_classes = config_.num_classes;
  p.probabilities.assign(probs.data().begin(), probs.data().end());
  const std::size_t b = logits.dim(0);
  const auto ld = logits.data();
  for (std::size_t r = 0; r < b; ++r) {
    const auto row = ld.subspan(r * p.num_classes, p.num_classes);
    p.labels.push_back(static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin()));
  }
  return p;
}

std::vector<Tensor> PointNetLite::parameters() const {
  std::vector<Tensor> out;
  for (const auto* group : {&point_layers_, &head_layers_}) {
    for (const auto& layer : *group) {
      out.push_back(layer.weight);
      out.push_back(layer.bias);
    }
  }
  return out;
}

std::size_t PointNetLite::parameter_count() const {
  std::size_t total = 0;
  for (const auto& p : parameters()) total += p.numel();
  return total;
}

void PointNetLite::zero_grad() {
  for (auto& p : parameters()) p.zero_grad();
}

PointNetLite PointNetLite::copy(bool requires_grad) const {
  PointNetLite out;
  out.config_ = config_;
  auto dup = [&](const Linear& l) {
    return Linear{Tensor::from(l.weight.shape(), {l.weight.data().begin(), l.weight.data().end()}, requires_grad),
                  Tensor::from(l.bias.shape(), {l.bias.data().begin(), l.bias.data().end()}, requires_grad)};
  };
  for (const auto& l : point_layers_) out.point_layers_.push_back(dup(l));
  for (const auto& l : head_layers_) out.head_layers_.push_back(dup(l));
  return out;
}

PointNetLite PointNetLite::frozen() const { return copy(false); }
PointNetLite PointNetLite::clone() const { return copy(true); }

void save_checkpoint(const PointNetLite& model, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot open checkpoint for writing: " + path.string());
  out.write(kMagic, kMagicLen);
  const auto params = model.parameters();
  write_le<std::uint32_t>(out, static_cast<std::uint32_t>(model.point_layers_.size()));
  write_le<std::uint32_t>(out, static_cast<std::uint32_t>(params.size()));
  for (const auto& p : params) {
    write_le<std::uint32_t>(out, static_cast<std::uint32_t>(p.rank()));
    for (auto d : p.shape()) write_le<std::uint64_t>(out, d);
    for (double v : p.data()) write_le<double>(out, v);
  }
  if (!out) throw DataError("failed writing checkpoint: " + path.string());
}

PointNetLite load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint: " + path.string());
  char magic[kMagicLen];
  in.read(magic, kMagicLen);
  if (!in || std::memcmp(magic, kMagic, kMagicLen) != 0) {
    throw DataError("checkpoint " + path.string() + ": bad magic (expected MAPRCKPT1)");
  }
  const auto point_count = read_le<std::uint32_t>(in, path);
  const auto tensor_count = read_le<std::uint32_t>(in, path);
  if (tensor_count % 2 != 0 || tensor_count / 2 <= point_count || point_count == 0) {
    throw DataError("checkpoint " + path.string() + ": inconsistent layer counts");
  }
  std::vector<Tensor> tensors;
  for (std::uint32_t t = 0; t < tensor_count; ++t) {
    const auto rank = read_le<std::uint32_t>(in, path);
    if (rank == 0 || rank > 2) throw DataError("checkpoint " + path.string() + ": unexpected tensor rank");
    Shape shape(rank);
    for (auto& d : shape) d = read_le<std::uint64_t>(in, path);
    std::vector<double> values(shape_numel(shape));
    for (double& v : values) v = read_le<double>(in, path);
    tensors.push_back(Tensor::from(std::move(shape), std::move(values), true));
  }

  PointNetLite model;
  ModelConfig& cfg = model.config_;
  cfg.point_widths.clear();
  cfg.head_widths.clear();
  std::size_t width = 0;
  for (std::uint32_t l = 0; l < tensor_count / 2; ++l) {
    Linear layer{tensors[2 * l], tensors[2 * l + 1]};
    if (layer.weight.rank() != 2 || layer.bias.rank() != 1 || layer.bias.dim(0) != layer.weight.dim(1) ||
        (l > 0 && layer.weight.dim(0) != width)) {
      throw DataError("checkpoint " + path.string() + ": layer " + std::to_string(l) + " shapes do not chain");
    }
    if (l == 0) cfg.in_channels = layer.weight.dim(0);
    width = layer.weight.dim(1);
    if (l < point_count) {
      cfg.point_widths.push_back(width);
      model.point_layers_.push_back(layer);
    } else {
      if (l + 1 < tensor_count / 2) cfg.head_widths.push_back(width);
      model.head_layers_.push_back(layer);
    }
  }
  cfg.num_classes = width;
  cfg.validate();
  return model;
}

PointNetLite load_checkpoint(const std::filesystem::path& path, const ModelConfig& expected) {
  PointNetLite model = load_checkpoint(path);
  if (!(model.config() == expected)) {
    throw DataError("checkpoint " + path.string() + ": layer shapes do not match the configured model");
  }
  return model;
}

Tensor encode_raw(std::span<const PointCloud> clouds) {
  if (clouds.empty()) throw ShapeError("encode_raw: empty batch");
  const std::size_t n = clouds.front().size();
  std::vector<double> data;
  data.reserve(clouds.size() * n * 3);
  for (const auto& c : clouds) {
    if (c.size() != n) throw ShapeError("encode_raw: clouds in a batch must have equal size");
    data.insert(data.end(), c.xyz.begin(), c.xyz.end());
  }
  return Tensor::from({clouds.size(), n, 3}, std::move(data));
}

Tensor encode_augmented(std::span<const PointCloud> clouds, std::span<const IntrinsicFeatures> phi) {
  if (clouds.empty() || clouds.size() != phi.size()) throw ShapeError("encode_augmented: batch size mismatch");
  const std::size_t n = clouds.front().size();
  std::vector<double> data;
  data.reserve(clouds.size() * n * kAugmentedChannels);
  for (std::size_t b = 0; b < clouds.size(); ++b) {
    if (clouds[b].size() != n) throw ShapeError("encode_augmented: clouds in a batch must have equal size");
    const AugmentedCloud aug = augment(clouds[b], phi[b]);
    data.insert(data.end(), aug.values.begin(), aug.values.end());
  }
  return Tensor::from({clouds.size(), n, kAugmentedChannels}, std::move(data));
}

}  // namespace mapr
