#pragma once

#include <array>
#include <filesystem>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "nascore/tensor.hpp"

namespace nascore {

enum class ModelVariant { kMiniMvit, kMicroR2plus1d, kMicroCnnRnn };
enum class HeadKind { kClassify8, kRegress1 };

std::string_view to_string(ModelVariant variant);
std::string_view to_string(HeadKind head);
/// Accepts the long names ("mini-mvit") and the CLI short names ("mvit").
ModelVariant parse_variant(std::string_view text);
HeadKind parse_head(std::string_view text);

using Stride3 = std::array<std::size_t, 3>;

struct ModelConfig {
  ModelVariant variant = ModelVariant::kMiniMvit;
  HeadKind head = HeadKind::kClassify8;
  std::size_t frames = 16;
  std::size_t height = 24;
  std::size_t width = 32;

  // mini-mvit
  Stride3 patch_stride{2, 4, 4};
  std::vector<std::size_t> stage_dims{16, 32, 64};
  std::vector<std::size_t> blocks_per_stage{1, 1, 1};
  std::size_t heads = 2;
  /// Key/value pooling at stage-1 resolution; later stages divide it by the
  /// accumulated query stride so the key grid stays roughly constant.
  Stride3 kv_pool_stride{1, 4, 4};
  Stride3 stage_q_stride{1, 2, 2};
  std::size_t mlp_ratio = 2;

  // micro-r2plus1d and the micro-cnn-rnn frame encoder
  std::vector<std::size_t> conv_channels{8, 16, 32};
  std::size_t hidden_size = 32;

  std::uint64_t seed = 0;

  std::size_t output_width() const { return head == HeadKind::kClassify8 ? 8 : 1; }
  /// Throws kInvalidConfig naming the violated constraint.
  void validate() const;
};

/// `key=value` lines, stable order. Parsing ignores keys it does not own.
std::string to_text(const ModelConfig& config);
ModelConfig model_config_from_text(std::string_view text);
ModelConfig model_config_from_map(const std::map<std::string, std::string>& values);

/// Tensor (B, T', H', W', C) plus its extents.
struct TokenGrid {
  Tensor tokens;
  std::size_t t = 0;
  std::size_t h = 0;
  std::size_t w = 0;
  std::size_t channels = 0;

  std::size_t count() const { return t * h * w; }
};

/// Rearranges (B, T, H, W) frames into (B, T', H', W', pt*ph*pw) patch vectors,
/// zero-padding H and W up to a multiple of the stride.
Tensor extract_patches(const Tensor& frames, Stride3 stride);

/// Strided linear patch embedding plus a learned positional table.
/// weight (pt*ph*pw, C), bias (C), positions (T', H', W', C).
TokenGrid patchify(const Tensor& frames, Stride3 stride, const Tensor& weight, const Tensor& bias,
                   const Tensor& positions);

struct AttentionBlockParams {
  Tensor norm1_gamma, norm1_beta;
  Tensor qkv_weight, qkv_bias;    // (Cin, 3*Cout), (3*Cout)
  Tensor proj_weight, proj_bias;  // (Cout, Cout), (Cout)
  Tensor skip_weight;             // (Cin, Cout); undefined when Cin == Cout
  Tensor norm2_gamma, norm2_beta;
  Tensor fc1_weight, fc1_bias;    // (Cout, r*Cout)
  Tensor fc2_weight, fc2_bias;    // (r*Cout, Cout)
};

struct PoolingSpec {
  std::size_t heads = 1;
  Stride3 q_stride{1, 1, 1};
  Stride3 kv_stride{1, 1, 1};
};

/// One transformer block with pooled queries, keys and values. The pooled
/// query is added back to the attention output, and the block's skip path is
/// the input pooled by the query stride (projected when the width changes).
TokenGrid pooling_attention(const TokenGrid& grid, const AttentionBlockParams& params, const PoolingSpec& spec);

/// Zero mean, unit variance per clip (layer norm over all of a clip's pixels).
Tensor standardize_clips(const Tensor& batch);

struct NamedParameter {
  std::string name;
  Tensor value;
};

struct ForwardTrace {
  std::vector<TokenGrid> stages;  // mini-mvit: output of each stage
};

class Model {
 public:
  virtual ~Model() = default;

  const ModelConfig& config() const { return config_; }
  std::vector<NamedParameter>& parameters() { return params_; }
  const std::vector<NamedParameter>& parameters() const { return params_; }
  std::size_t parameter_count() const;
  const Tensor& parameter(std::string_view name) const;

  /// batch (B, 16, H, W) -> (B, 8) logits or (B, 1) scores. Each clip is
  /// standardized before the backbone sees it.
  Tensor forward(const Tensor& batch, ForwardTrace* trace = nullptr) const;

 protected:
  explicit Model(ModelConfig config) : config_(std::move(config)) {}
  Tensor add_parameter(const std::string& name, Shape shape, std::size_t fan_in);
  Tensor add_constant_parameter(const std::string& name, Shape shape, Scalar value);
  Tensor add_uniform_parameter(const std::string& name, Shape shape, Scalar bound);
  virtual void check_geometry(const Tensor& batch) const;
  virtual Tensor features(const Tensor& batch, ForwardTrace* trace) const = 0;
  void add_head(std::size_t feature_width);

 private:
  ModelConfig config_;
  std::vector<NamedParameter> params_;
  Tensor head_weight_, head_bias_;
};

std::unique_ptr<Model> build_model(const ModelConfig& config);

/// Stage grid extents (t, h, w, C) that mini-mvit produces for its geometry.
std::vector<std::array<std::size_t, 4>> mvit_stage_extents(const ModelConfig& config);

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// "NSCK", u32 version, config text, name/offset table, f64 values (little-endian).
void save_checkpoint(const Model& model, const std::filesystem::path& path);
std::unique_ptr<Model> load_checkpoint(const std::filesystem::path& path);

}  // namespace nascore
