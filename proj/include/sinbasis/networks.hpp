#pragma once

// Sin-CNN, Sin-ViT and Sin-Capsule backbones with regression or
// classification heads. Basis-bearing weights are WeightMatrix instances:
//   cnn      every conv kernel
//   vit      the patch embedding only (Q/K/V, output and MLP projections plain)
//   capsule  the vote matrices W_ij (and the stem conv if capsule_sin_conv)
// Head MLPs are always plain.

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "sinbasis/sinbasis.hpp"
#include "sinbasis/tensor.hpp"

namespace sinbasis::nets {

enum class Backbone { cnn, vit, capsule };
enum class HeadKind { regression, classification };

std::string_view to_string(Backbone b);
std::string_view to_string(HeadKind h);
Backbone parse_backbone(std::string_view name);
HeadKind parse_head(std::string_view name);

struct ModelConfig {
  Backbone backbone = Backbone::cnn;
  BasisMode basis = BasisMode::plain;
  HeadKind head = HeadKind::regression;
  std::size_t num_classes = 5;
  std::size_t in_channels = 1, in_h = 32, in_w = 32;

  std::vector<std::size_t> cnn_channels{16, 32, 32};
  std::size_t cnn_kernel = 3;
  bool cnn_pool = true;  // 2×2 max pool after each conv

  std::size_t patch = 8, embed_dim = 64, vit_depth = 2, vit_heads = 4, vit_mlp = 128;

  std::size_t capsule_stem = 16;
  std::size_t primary_caps = 8, primary_dim = 8;
  std::size_t output_caps = 5, output_dim = 16;
  std::size_t routing_iters = 3;
  bool capsule_sin_conv = false;

  std::size_t head_hidden = 256;
  std::uint64_t seed = 0;

  /// Throws std::invalid_argument naming the offending field.
  void validate() const;
  std::size_t outputs() const { return head == HeadKind::regression ? 1 : num_classes; }

  /// Flat "key=value" view (keys as in the [model] config section).
  std::map<std::string, std::string> to_map() const;
  /// Missing keys keep their defaults; malformed values throw std::invalid_argument.
  static ModelConfig from_map(const std::map<std::string, std::string>& kv);
};

/// conv2d with the kernel replaced by effective_weight(wm), plus per-channel
/// bias, optionally followed by ReLU.
Tensor sin_conv_layer(const Tensor& x, const WeightMatrix& wm, const Tensor& bias,
                      const Conv2dOptions& opt, bool relu_after = true);

/// tokens = patches[..., L] · effective(E)ᵀ + pos[N, D] (broadcast over batch).
Tensor sin_vit_embed(const Tensor& patches, const WeightMatrix& e, const Tensor& pos);

struct RoutingResult {
  Tensor v;                         // [B, J, out_dim]
  std::vector<Tensor> couplings;    // c per iteration, each [B, I, J]
};

/// Routing-by-agreement. votes: effective W_ij stacked as [I, J·out_dim, in_dim];
/// u: [B, I, in_dim].
RoutingResult capsule_route(const Tensor& votes, const Tensor& u, std::size_t out_caps,
                            std::size_t iterations);

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

class Model {
 public:
  explicit Model(ModelConfig cfg);

  const ModelConfig& config() const { return cfg_; }

  /// x: [B, C, H, W] -> [B, 1] (regression) or [B, num_classes] logits.
  Tensor forward(const Tensor& x) const;

  /// Trainable leaves in a fixed (name-sorted) order.
  std::vector<NamedTensor> named_parameters() const;
  std::vector<Tensor> parameters() const;
  std::size_t parameter_count() const;

  std::map<std::string, WeightMatrix>& weights() { return weights_; }
  const std::map<std::string, WeightMatrix>& weights() const { return weights_; }
  std::map<std::string, Tensor>& tensors() { return tensors_; }
  const std::map<std::string, Tensor>& tensors() const { return tensors_; }

  /// Everything a checkpoint needs: raw weights, tunables, biases, norms,
  /// positional terms and the frozen Fourier row assignments. Never W~.
  std::vector<NamedTensor> state() const;
  /// Copies values into the existing parameters; shapes and names must match.
  void load_state(const std::vector<NamedTensor>& state);

 private:
  void add_weight(const std::string& name, Shape shape, BasisMode mode);
  void add_tensor(const std::string& name, Tensor t);
  const WeightMatrix& w(const std::string& name) const;
  const Tensor& t(const std::string& name) const;
  Tensor eff(const std::string& name) const;

  Tensor cnn_features(const Tensor& x) const;
  Tensor vit_features(const Tensor& x) const;
  Tensor capsule_features(const Tensor& x) const;
  Tensor head(const Tensor& features) const;

  ModelConfig cfg_;
  std::map<std::string, WeightMatrix> weights_;
  std::map<std::string, Tensor> tensors_;
};

/// Directory of `<name>.sbt` tensor files plus model.ini.
void save_checkpoint(const std::filesystem::path& dir, const Model& model);
Model load_checkpoint(const std::filesystem::path& dir);

}  // namespace sinbasis::nets
