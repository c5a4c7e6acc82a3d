#include "nascore/models.hpp"

#include <charconv>
#include <cmath>
#include <sstream>

namespace nascore {

std::string_view to_string(ModelVariant variant) {
  switch (variant) {
    case ModelVariant::kMiniMvit: return "mini-mvit";
    case ModelVariant::kMicroR2plus1d: return "micro-r2plus1d";
    case ModelVariant::kMicroCnnRnn: return "micro-cnn-rnn";
  }
  return "?";
}

std::string_view to_string(HeadKind head) { return head == HeadKind::kClassify8 ? "classify-8" : "regress-1"; }

ModelVariant parse_variant(std::string_view text) {
  if (text == "mini-mvit" || text == "mvit") return ModelVariant::kMiniMvit;
  if (text == "micro-r2plus1d" || text == "r2plus1d") return ModelVariant::kMicroR2plus1d;
  if (text == "micro-cnn-rnn" || text == "cnnrnn") return ModelVariant::kMicroCnnRnn;
  throw Error(ErrorCode::kInvalidConfig, "unknown model variant '" + std::string(text) + "'");
}

HeadKind parse_head(std::string_view text) {
  if (text == "classify-8") return HeadKind::kClassify8;
  if (text == "regress-1") return HeadKind::kRegress1;
  throw Error(ErrorCode::kInvalidConfig, "unknown head kind '" + std::string(text) + "'");
}

namespace {

[[noreturn]] void invalid(const std::string& what) { throw Error(ErrorCode::kInvalidConfig, what); }

std::size_t parse_size(const std::string& key, std::string_view text) {
  std::size_t v = 0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size()) invalid(key + ": not an unsigned integer: '" + std::string(text) + "'");
  return v;
}

std::vector<std::size_t> parse_size_list(const std::string& key, std::string_view text) {
  std::vector<std::size_t> out;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto comma = text.find(',', pos);
    const auto end = comma == std::string_view::npos ? text.size() : comma;
    out.push_back(parse_size(key, text.substr(pos, end - pos)));
    if (comma == std::string_view::npos) break;
    pos = comma + 1;
  }
  return out;
}

Stride3 parse_stride(const std::string& key, std::string_view text) {
  const auto v = parse_size_list(key, text);
  if (v.size() != 3) invalid(key + ": expected t,h,w");
  return {v[0], v[1], v[2]};
}

template <typename Range>
std::string join(const Range& values) {
  std::string out;
  for (auto v : values) {
    if (!out.empty()) out += ',';
    out += std::to_string(v);
  }
  return out;
}

std::size_t ceil_div(std::size_t a, std::size_t b) { return (a + b - 1) / b; }

bool any_zero(const Stride3& s) { return s[0] == 0 || s[1] == 0 || s[2] == 0; }

}  // namespace

void ModelConfig::validate() const {
  if (frames == 0 || height == 0 || width == 0) invalid("frame geometry must be non-zero");
  switch (variant) {
    case ModelVariant::kMiniMvit: {
      if (stage_dims.empty()) invalid("stage_dims must list at least one stage");
      if (blocks_per_stage.size() != stage_dims.size()) invalid("blocks_per_stage must have one entry per stage");
      if (heads == 0) invalid("heads must be >= 1");
      if (mlp_ratio == 0) invalid("mlp_ratio must be >= 1");
      if (any_zero(patch_stride) || any_zero(kv_pool_stride) || any_zero(stage_q_stride)) invalid("strides must be >= 1");
      if (frames % patch_stride[0] != 0) invalid("frames must be divisible by the temporal patch stride");
      if (patch_stride[1] > height || patch_stride[2] > width) invalid("patch stride exceeds the frame size");
      for (std::size_t s = 0; s < stage_dims.size(); ++s) {
        if (stage_dims[s] == 0 || stage_dims[s] % heads != 0) {
          invalid("stage " + std::to_string(s + 1) + " dim " + std::to_string(stage_dims[s]) + " not divisible by " +
                  std::to_string(heads) + " heads");
        }
        if (blocks_per_stage[s] == 0) invalid("every stage needs at least one block");
        if (s > 0 && stage_dims[s] != 2 * stage_dims[s - 1]) invalid("stage dims must double from stage to stage");
      }
      break;
    }
    case ModelVariant::kMicroR2plus1d:
    case ModelVariant::kMicroCnnRnn:
      if (conv_channels.empty()) invalid("conv_channels must list at least one layer");
      for (auto c : conv_channels) {
        if (c == 0) invalid("conv_channels entries must be >= 1");
      }
      if (variant == ModelVariant::kMicroCnnRnn && hidden_size == 0) invalid("hidden_size must be >= 1");
      break;
  }
}

std::string to_text(const ModelConfig& c) {
  std::ostringstream out;
  out << "model.variant=" << to_string(c.variant) << '\n'
      << "model.head=" << to_string(c.head) << '\n'
      << "model.frames=" << c.frames << '\n'
      << "model.height=" << c.height << '\n'
      << "model.width=" << c.width << '\n'
      << "model.patch_stride=" << join(c.patch_stride) << '\n'
      << "model.stage_dims=" << join(c.stage_dims) << '\n'
      << "model.blocks_per_stage=" << join(c.blocks_per_stage) << '\n'
      << "model.heads=" << c.heads << '\n'
      << "model.kv_pool_stride=" << join(c.kv_pool_stride) << '\n'
      << "model.stage_q_stride=" << join(c.stage_q_stride) << '\n'
      << "model.mlp_ratio=" << c.mlp_ratio << '\n'
      << "model.conv_channels=" << join(c.conv_channels) << '\n'
      << "model.hidden_size=" << c.hidden_size << '\n'
      << "model.seed=" << c.seed << '\n';
  return out.str();
}

ModelConfig model_config_from_map(const std::map<std::string, std::string>& kv) {
  ModelConfig c;
  for (const auto& [key, value] : kv) {
    if (key == "model.variant") c.variant = parse_variant(value);
    else if (key == "model.head") c.head = parse_head(value);
    else if (key == "model.frames") c.frames = parse_size(key, value);
    else if (key == "model.height") c.height = parse_size(key, value);
    else if (key == "model.width") c.width = parse_size(key, value);
    else if (key == "model.patch_stride") c.patch_stride = parse_stride(key, value);
    else if (key == "model.stage_dims") c.stage_dims = parse_size_list(key, value);
    else if (key == "model.blocks_per_stage") c.blocks_per_stage = parse_size_list(key, value);
    else if (key == "model.heads") c.heads = parse_size(key, value);
    else if (key == "model.kv_pool_stride") c.kv_pool_stride = parse_stride(key, value);
    else if (key == "model.stage_q_stride") c.stage_q_stride = parse_stride(key, value);
    else if (key == "model.mlp_ratio") c.mlp_ratio = parse_size(key, value);
    else if (key == "model.conv_channels") c.conv_channels = parse_size_list(key, value);
    else if (key == "model.hidden_size") c.hidden_size = parse_size(key, value);
    else if (key == "model.seed") c.seed = parse_size(key, value);
    else if (key.starts_with("model.")) invalid("unknown key '" + key + "'");
  }
  return c;
}

ModelConfig model_config_from_text(std::string_view text) { return model_config_from_map(parse_key_values(text)); }

// ---------------------------------------------------------------------------
// Building blocks

Tensor extract_patches(const Tensor& frames, Stride3 stride) {
  if (frames.rank() != 4) throw Error(ErrorCode::kShapeMismatch, "patchify: expected (B, T, H, W), got " + shape_to_string(frames.shape()));
  const std::size_t b = frames.dim(0), t = frames.dim(1), h = frames.dim(2), w = frames.dim(3);
  const auto [st, sh, sw] = stride;
  if (any_zero(stride) || st > t || sh > h || sw > w) {
    throw Error(ErrorCode::kStrideExceedsInput, "patch stride (" + join(stride) + ") exceeds input " + shape_to_string(frames.shape()));
  }
  if (t % st != 0) {
    throw Error(ErrorCode::kStrideExceedsInput, std::to_string(t) + " frames not divisible by temporal stride " + std::to_string(st));
  }
  const std::size_t gt = t / st, gh = ceil_div(h, sh), gw = ceil_div(w, sw);
  const std::size_t patch = st * sh * sw;
  std::vector<Scalar> out(b * gt * gh * gw * patch, 0.0);
  const Scalar* x = frames.data().data();
  std::size_t o = 0;
  for (std::size_t n = 0; n < b; ++n) {
    for (std::size_t i = 0; i < gt; ++i) {
      for (std::size_t j = 0; j < gh; ++j) {
        for (std::size_t k = 0; k < gw; ++k) {
          for (std::size_t dt = 0; dt < st; ++dt) {
            for (std::size_t dy = 0; dy < sh; ++dy) {
              const std::size_t y = j * sh + dy;
              for (std::size_t dx = 0; dx < sw; ++dx, ++o) {
                const std::size_t xx = k * sw + dx;
                if (y < h && xx < w) out[o] = x[((n * t + i * st + dt) * h + y) * w + xx];
              }
            }
          }
        }
      }
    }
  }
  return Tensor::from_data({b, gt, gh, gw, patch}, std::move(out));
}

TokenGrid patchify(const Tensor& frames, Stride3 stride, const Tensor& weight, const Tensor& bias, const Tensor& positions) {
  Tensor patches = extract_patches(frames, stride);
  TokenGrid g;
  g.t = patches.dim(1);
  g.h = patches.dim(2);
  g.w = patches.dim(3);
  g.channels = weight.dim(1);
  Tensor x = matmul(patches, weight);
  if (bias.defined()) x = add(x, bias);
  g.tokens = embedding_add(x, positions);
  return g;
}

TokenGrid pooling_attention(const TokenGrid& grid, const AttentionBlockParams& p, const PoolingSpec& spec) {
  const std::size_t cin = grid.channels;
  const std::size_t cout = p.proj_weight.dim(0);
  if (spec.heads == 0 || cout % spec.heads != 0) {
    throw Error(ErrorCode::kIndivisibleHeads, std::to_string(cout) + " channels over " + std::to_string(spec.heads) + " heads");
  }
  const std::size_t batch = grid.tokens.dim(0);
  const std::size_t d = cout / spec.heads;

  Tensor xn = layer_norm(grid.tokens, p.norm1_gamma, p.norm1_beta);
  Tensor qkv = add(matmul(xn, p.qkv_weight), p.qkv_bias);
  Tensor q = avg_pool(slice(qkv, -1, 0, cout), spec.q_stride);
  Tensor k = avg_pool(slice(qkv, -1, cout, 2 * cout), spec.kv_stride);
  Tensor v = avg_pool(slice(qkv, -1, 2 * cout, 3 * cout), spec.kv_stride);
  const std::size_t tq = q.dim(1), hq = q.dim(2), wq = q.dim(3);
  const std::size_t nq = tq * hq * wq;
  const std::size_t nk = k.dim(1) * k.dim(2) * k.dim(3);

  Tensor qh = permute(reshape(q, {batch, nq, spec.heads, d}), {0, 2, 1, 3});
  Tensor kh = permute(reshape(k, {batch, nk, spec.heads, d}), {0, 2, 3, 1});
  Tensor vh = permute(reshape(v, {batch, nk, spec.heads, d}), {0, 2, 1, 3});
  Tensor attn = softmax(scale(matmul(qh, kh), 1.0 / std::sqrt(static_cast<Scalar>(d))), -1);
  Tensor mixed = reshape(permute(matmul(attn, vh), {0, 2, 1, 3}), {batch, tq, hq, wq, cout});
  mixed = add(mixed, q);
  Tensor projected = add(matmul(mixed, p.proj_weight), p.proj_bias);

  Tensor skip = spec.q_stride == Stride3{1, 1, 1} ? grid.tokens : avg_pool(grid.tokens, spec.q_stride);
  if (p.skip_weight.defined()) skip = matmul(skip, p.skip_weight);
  else if (cin != cout) throw Error(ErrorCode::kShapeMismatch, "width change without a skip projection");
  Tensor x1 = add(skip, projected);

  Tensor hidden = relu(add(matmul(layer_norm(x1, p.norm2_gamma, p.norm2_beta), p.fc1_weight), p.fc1_bias));
  Tensor x2 = add(x1, add(matmul(hidden, p.fc2_weight), p.fc2_bias));
  return {x2, tq, hq, wq, cout};
}

// ---------------------------------------------------------------------------
// Model base

std::size_t Model::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.numel();
  return n;
}

const Tensor& Model::parameter(std::string_view name) const {
  for (const auto& p : params_) {
    if (p.name == name) return p.value;
  }
  throw Error(ErrorCode::kInvalidArgument, "no parameter named '" + std::string(name) + "'");
}

Tensor Model::add_uniform_parameter(const std::string& name, Shape shape, Scalar bound) {
  Rng rng(derive_seed(config_.seed, name));
  std::vector<Scalar> values(shape_numel(shape));
  for (auto& v : values) v = rng.uniform(-bound, bound);
  Tensor t = Tensor::from_data(std::move(shape), std::move(values), true);
  params_.push_back({name, t});
  return t;
}

Tensor Model::add_parameter(const std::string& name, Shape shape, std::size_t fan_in) {
  return add_uniform_parameter(name, std::move(shape), std::sqrt(1.0 / static_cast<Scalar>(fan_in)));
}

Tensor Model::add_constant_parameter(const std::string& name, Shape shape, Scalar value) {
  Tensor t = Tensor::full(std::move(shape), value, true);
  params_.push_back({name, t});
  return t;
}

void Model::add_head(std::size_t feature_width) {
  head_weight_ = add_parameter("head.weight", {feature_width, config_.output_width()}, feature_width);
  head_bias_ = add_constant_parameter("head.bias", {config_.output_width()}, 0.0);
}

void Model::check_geometry(const Tensor& batch) const {
  if (batch.rank() != 4 || batch.dim(1) != config_.frames || batch.dim(2) != config_.height ||
      batch.dim(3) != config_.width) {
    throw Error(ErrorCode::kGeometryMismatch, "model built for (B, " + std::to_string(config_.frames) + ", " +
                                                  std::to_string(config_.height) + ", " + std::to_string(config_.width) +
                                                  "), got " + shape_to_string(batch.shape()));
  }
}

Tensor standardize_clips(const Tensor& batch) {
  const Shape shape = batch.shape();
  const std::size_t per_clip = batch.numel() / shape.at(0);
  return reshape(layer_norm(reshape(batch, {shape[0], per_clip})), shape);
}

Tensor Model::forward(const Tensor& batch, ForwardTrace* trace) const {
  check_geometry(batch);
  Tensor f = features(standardize_clips(batch), trace);
  return add(matmul(relu(f), head_weight_), head_bias_);
}

namespace {

// ---------------------------------------------------------------------------
// mini-mvit

struct MvitBlock {
  AttentionBlockParams params;
  PoolingSpec spec;
};

class MiniMvit final : public Model {
 public:
  explicit MiniMvit(const ModelConfig& c) : Model(c) {
    const std::size_t patch = c.patch_stride[0] * c.patch_stride[1] * c.patch_stride[2];
    const std::size_t c0 = c.stage_dims[0];
    patch_weight_ = add_parameter("patch.weight", {patch, c0}, patch);
    patch_bias_ = add_constant_parameter("patch.bias", {c0}, 0.0);
    const std::size_t gt = c.frames / c.patch_stride[0];
    const std::size_t gh = ceil_div(c.height, c.patch_stride[1]);
    const std::size_t gw = ceil_div(c.width, c.patch_stride[2]);
    positions_ = add_uniform_parameter("patch.positions", {gt, gh, gw, c0}, 0.02);

    Stride3 accumulated{1, 1, 1};
    for (std::size_t s = 0; s < c.stage_dims.size(); ++s) {
      for (std::size_t j = 0; j < c.blocks_per_stage[s]; ++j) {
        const bool transition = s > 0 && j == 0;
        const std::size_t cin = transition ? c.stage_dims[s - 1] : c.stage_dims[s];
        const std::size_t cout = c.stage_dims[s];
        const std::string prefix = "stage" + std::to_string(s + 1) + ".block" + std::to_string(j + 1) + ".";
        MvitBlock b;
        b.spec.heads = c.heads;
        for (std::size_t a = 0; a < 3; ++a) b.spec.kv_stride[a] = std::max<std::size_t>(1, c.kv_pool_stride[a] / accumulated[a]);
        if (transition) b.spec.q_stride = c.stage_q_stride;
        auto& p = b.params;
        p.norm1_gamma = add_constant_parameter(prefix + "norm1.gamma", {cin}, 1.0);
        p.norm1_beta = add_constant_parameter(prefix + "norm1.beta", {cin}, 0.0);
        p.qkv_weight = add_parameter(prefix + "qkv.weight", {cin, 3 * cout}, cin);
        p.qkv_bias = add_constant_parameter(prefix + "qkv.bias", {3 * cout}, 0.0);
        p.proj_weight = add_parameter(prefix + "proj.weight", {cout, cout}, cout);
        p.proj_bias = add_constant_parameter(prefix + "proj.bias", {cout}, 0.0);
        if (cin != cout) p.skip_weight = add_parameter(prefix + "skip.weight", {cin, cout}, cin);
        p.norm2_gamma = add_constant_parameter(prefix + "norm2.gamma", {cout}, 1.0);
        p.norm2_beta = add_constant_parameter(prefix + "norm2.beta", {cout}, 0.0);
        const std::size_t hidden = c.mlp_ratio * cout;
        p.fc1_weight = add_parameter(prefix + "fc1.weight", {cout, hidden}, cout);
        p.fc1_bias = add_constant_parameter(prefix + "fc1.bias", {hidden}, 0.0);
        p.fc2_weight = add_parameter(prefix + "fc2.weight", {hidden, cout}, hidden);
        p.fc2_bias = add_constant_parameter(prefix + "fc2.bias", {cout}, 0.0);
        if (transition) {
          for (std::size_t a = 0; a < 3; ++a) accumulated[a] *= c.stage_q_stride[a];
        }
        blocks_.push_back(std::move(b));
      }
      stage_ends_.push_back(blocks_.size());
    }
    const std::size_t last = c.stage_dims.back();
    norm_gamma_ = add_constant_parameter("norm.gamma", {last}, 1.0);
    norm_beta_ = add_constant_parameter("norm.beta", {last}, 0.0);
    add_head(last);
  }

 protected:
  Tensor features(const Tensor& batch, ForwardTrace* trace) const override {
    TokenGrid g = patchify(batch, config().patch_stride, patch_weight_, patch_bias_, positions_);
    std::size_t stage = 0;
    for (std::size_t i = 0; i < blocks_.size(); ++i) {
      g = pooling_attention(g, blocks_[i].params, blocks_[i].spec);
      if (i + 1 == stage_ends_[stage]) {
        if (trace != nullptr) trace->stages.push_back(g);
        ++stage;
      }
    }
    return global_avg_pool(layer_norm(g.tokens, norm_gamma_, norm_beta_));
  }

 private:
  Tensor patch_weight_, patch_bias_, positions_;
  std::vector<MvitBlock> blocks_;
  std::vector<std::size_t> stage_ends_;
  Tensor norm_gamma_, norm_beta_;
};

// ---------------------------------------------------------------------------
// micro-r2plus1d: (2D spatial conv, relu, 1D temporal conv, relu) per block

class MicroR2plus1d final : public Model {
 public:
  explicit MicroR2plus1d(const ModelConfig& c) : Model(c) {
    std::size_t cin = 1;
    for (std::size_t i = 0; i < c.conv_channels.size(); ++i) {
      const std::size_t cout = c.conv_channels[i];
      const std::string prefix = "block" + std::to_string(i + 1) + ".";
      Layer l;
      l.spatial_weight = add_parameter(prefix + "spatial.weight", {cout, cin, 3, 3}, cin * 9);
      l.spatial_bias = add_constant_parameter(prefix + "spatial.bias", {cout}, 0.0);
      l.temporal_weight = add_parameter(prefix + "temporal.weight", {cout, cout, 3}, cout * 3);
      l.temporal_bias = add_constant_parameter(prefix + "temporal.bias", {cout}, 0.0);
      layers_.push_back(l);
      cin = cout;
    }
    add_head(cin);
  }

 protected:
  Tensor features(const Tensor& batch, ForwardTrace*) const override {
    const std::size_t b = batch.dim(0);
    std::size_t t = batch.dim(1), h = batch.dim(2), w = batch.dim(3);
    Tensor x = reshape(batch, {b * t, 1, h, w});
    for (const auto& l : layers_) {
      x = relu(conv2d(x, l.spatial_weight, l.spatial_bias, 2, 1));
      const std::size_t c = x.dim(1);
      h = x.dim(2);
      w = x.dim(3);
      x = relu(conv1d_temporal(reshape(x, {b, t, c, h * w}), l.temporal_weight, l.temporal_bias, 2, 1));
      t = x.dim(1);
      x = reshape(x, {b * t, c, h, w});
    }
    const std::size_t c = x.dim(1);
    return global_avg_pool(permute(reshape(x, {b, t, c, h * w}), {0, 1, 3, 2}));
  }

 private:
  struct Layer {
    Tensor spatial_weight, spatial_bias, temporal_weight, temporal_bias;
  };
  std::vector<Layer> layers_;
};

// ---------------------------------------------------------------------------
// micro-cnn-rnn: per-frame conv encoder feeding a gated recurrent cell

class MicroCnnRnn final : public Model {
 public:
  explicit MicroCnnRnn(const ModelConfig& c) : Model(c) {
    std::size_t cin = 1;
    for (std::size_t i = 0; i < c.conv_channels.size(); ++i) {
      const std::size_t cout = c.conv_channels[i];
      const std::string prefix = "encoder.conv" + std::to_string(i + 1) + ".";
      conv_weights_.push_back(add_parameter(prefix + "weight", {cout, cin, 3, 3}, cin * 9));
      conv_biases_.push_back(add_constant_parameter(prefix + "bias", {cout}, 0.0));
      cin = cout;
    }
    const std::size_t hs = c.hidden_size;
    input_weight_ = add_parameter("gru.input.weight", {cin, 3 * hs}, cin);
    input_bias_ = add_constant_parameter("gru.input.bias", {3 * hs}, 0.0);
    hidden_weight_ = add_parameter("gru.hidden.weight", {hs, 3 * hs}, hs);
    hidden_bias_ = add_constant_parameter("gru.hidden.bias", {3 * hs}, 0.0);
    add_head(hs);
  }

 protected:
  // Any positive number of frames is accepted so truncated clips can be fed.
  void check_geometry(const Tensor& batch) const override {
    const auto& c = config();
    if (batch.rank() != 4 || batch.dim(1) == 0 || batch.dim(2) != c.height || batch.dim(3) != c.width) {
      throw Error(ErrorCode::kGeometryMismatch, "model built for (B, T, " + std::to_string(c.height) + ", " +
                                                    std::to_string(c.width) + "), got " + shape_to_string(batch.shape()));
    }
  }

  Tensor features(const Tensor& batch, ForwardTrace*) const override {
    const std::size_t b = batch.dim(0), t = batch.dim(1);
    Tensor x = reshape(batch, {b * t, 1, batch.dim(2), batch.dim(3)});
    for (std::size_t i = 0; i < conv_weights_.size(); ++i) x = relu(conv2d(x, conv_weights_[i], conv_biases_[i], 2, 1));
    const std::size_t c = x.dim(1);
    Tensor per_frame = mean(reshape(x, {b * t, c, x.dim(2) * x.dim(3)}), -1);
    const std::size_t hs = config().hidden_size;
    Tensor gates_in = add(matmul(reshape(per_frame, {b, t, c}), input_weight_), input_bias_);
    Tensor h = Tensor::zeros({b, hs});
    for (std::size_t step = 0; step < t; ++step) {
      Tensor gi = reshape(slice(gates_in, 1, step, step + 1), {b, 3 * hs});
      Tensor gh = add(matmul(h, hidden_weight_), hidden_bias_);
      Tensor z = sigmoid(add(slice(gi, 1, 0, hs), slice(gh, 1, 0, hs)));
      Tensor r = sigmoid(add(slice(gi, 1, hs, 2 * hs), slice(gh, 1, hs, 2 * hs)));
      Tensor n = tanh(add(slice(gi, 1, 2 * hs, 3 * hs), multiply(r, slice(gh, 1, 2 * hs, 3 * hs))));
      h = add(n, multiply(z, subtract(h, n)));
    }
    return h;
  }

 private:
  std::vector<Tensor> conv_weights_, conv_biases_;
  Tensor input_weight_, input_bias_, hidden_weight_, hidden_bias_;
};

}  // namespace

std::vector<std::array<std::size_t, 4>> mvit_stage_extents(const ModelConfig& c) {
  std::vector<std::array<std::size_t, 4>> out;
  std::size_t t = c.frames / c.patch_stride[0];
  std::size_t h = ceil_div(c.height, c.patch_stride[1]);
  std::size_t w = ceil_div(c.width, c.patch_stride[2]);
  for (std::size_t s = 0; s < c.stage_dims.size(); ++s) {
    if (s > 0) {
      t = ceil_div(t, c.stage_q_stride[0]);
      h = ceil_div(h, c.stage_q_stride[1]);
      w = ceil_div(w, c.stage_q_stride[2]);
    }
    out.push_back({t, h, w, c.stage_dims[s]});
  }
  return out;
}

std::unique_ptr<Model> build_model(const ModelConfig& config) {
  config.validate();
  switch (config.variant) {
    case ModelVariant::kMiniMvit: return std::make_unique<MiniMvit>(config);
    case ModelVariant::kMicroR2plus1d: return std::make_unique<MicroR2plus1d>(config);
    case ModelVariant::kMicroCnnRnn: return std::make_unique<MicroCnnRnn>(config);
  }
  invalid("unknown variant");
}

}  // namespace nascore
