#pragma once

// Model zoo: three small convolutional architectures sharing two structural
// knobs, the stem stride and the activation. A model is built from a layer
// plan; build and forward walk the same plan, so parameter order cannot drift
// between them. Batch norm is composed from differentiable primitives and
// therefore supports gradients of gradients with no extra code.

#include <cstdint>
#include <string>
#include <variant>
#include <vector>

#include "atlab/common.hpp"
#include "atlab/conv.hpp"
#include "atlab/ops.hpp"
#include "atlab/rng.hpp"
#include "atlab/tensor.hpp"

namespace atlab {

enum class Arch { small_cnn, preact_resnet_lite, patchify_stem_net };
enum class Activation { relu, gelu, silu, elu, softplus_param };

inline std::string to_string(Arch a) {
  switch (a) {
    case Arch::small_cnn: return "small_cnn";
    case Arch::preact_resnet_lite: return "preact_resnet_lite";
    case Arch::patchify_stem_net: return "patchify_stem_net";
  }
  throw config_error("unknown arch");
}

inline std::string to_string(Activation a) {
  switch (a) {
    case Activation::relu: return "relu";
    case Activation::gelu: return "gelu";
    case Activation::silu: return "silu";
    case Activation::elu: return "elu";
    case Activation::softplus_param: return "softplus_param";
  }
  throw config_error("unknown activation");
}

inline Arch arch_from_string(const std::string& s) {
  for (Arch a : {Arch::small_cnn, Arch::preact_resnet_lite, Arch::patchify_stem_net})
    if (to_string(a) == s) return a;
  throw config_error("unknown arch '" + s + "'");
}

inline Activation activation_from_string(const std::string& s) {
  for (Activation a : {Activation::relu, Activation::gelu, Activation::silu, Activation::elu,
                       Activation::softplus_param})
    if (to_string(a) == s) return a;
  throw config_error("unknown activation '" + s + "'");
}

struct ModelConfig {
  Arch arch = Arch::small_cnn;
  int64_t first_conv_stride = 1;
  // among the intermediate downsampling stages, the first one whose stride is
  // dropped to 1 to keep the final feature map size fixed
  int64_t compensation_stage = 0;
  Activation activation = Activation::relu;
  double softplus_alpha = 2.0;
  int64_t num_classes = 10;
  int64_t in_channels = 3;
  int64_t in_h = 32;
  int64_t in_w = 32;

  bool operator==(const ModelConfig&) const = default;
};

template <typename T>
struct Parameter {
  Tensor<T> value;
  std::string name;
  bool trainable = true;
};

/// Named non-trainable state (batch-norm running statistics).
template <typename T>
struct Buffer {
  Tensor<T> value;
  std::string name;
};

/// Train-mode normalizes by batch statistics; eval-mode by running
/// statistics held as constants. Running stats are replaced, never mutated in
/// place, so tensors already captured by a live graph stay valid.
template <typename T>
Tensor<T> batchnorm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                    Tensor<T>& running_mean, Tensor<T>& running_var, bool train,
                    bool update_stats, double momentum = 0.1, double eps = 1e-5) {
  if (x.ndim() != 4) throw shape_error("batchnorm: input must be [N,C,H,W]");
  const int64_t C = x.dim(1);
  if (gamma.size() != C || beta.size() != C)
    throw shape_error("batchnorm: affine parameters must have extent " + std::to_string(C));
  const Shape cshape{1, C, 1, 1};
  Tensor<T> xhat;
  if (train) {
    Tensor<T> mu = mean(x, {0, 2, 3}, true);
    Tensor<T> centered = sub(x, mu);
    Tensor<T> var = mean(mul(centered, centered), {0, 2, 3}, true);
    xhat = mul(centered, rsqrt_safe(add_scalar(var, static_cast<T>(eps))));
    if (update_stats) {
      NoGradGuard ng;
      const int64_t n = x.dim(0) * x.dim(2) * x.dim(3);
      const T unbias = n > 1 ? static_cast<T>(n) / static_cast<T>(n - 1) : T(1);
      const T m = static_cast<T>(momentum);
      Tensor<T> mu_c = reshape(mu.detach(), Shape{C});
      Tensor<T> var_c = mul_scalar(reshape(var.detach(), Shape{C}), unbias);
      running_mean = add(mul_scalar(running_mean, T(1) - m), mul_scalar(mu_c, m));
      running_var = add(mul_scalar(running_var, T(1) - m), mul_scalar(var_c, m));
    }
  } else {
    Tensor<T> scale = rsqrt_safe(add_scalar(running_var.detach(), static_cast<T>(eps)));
    xhat = mul(sub(x, reshape(running_mean.detach(), cshape)), reshape(scale, cshape));
  }
  return add(mul(xhat, reshape(gamma, cshape)), reshape(beta, cshape));
}

// ---------------------------------------------------------------------------
// layer plan
// ---------------------------------------------------------------------------

namespace plan {

struct Conv {
  int64_t in_c, out_c, k, stride, pad;
  std::string name;
};
struct BN {
  int64_t c;
  std::string name;
};
struct Act {};
struct PreactBlock {
  int64_t in_c, out_c, stride;
  std::string name;
};
struct PoolTo {
  int64_t h, w;
};
struct Head {  // global average pool + linear classifier
  int64_t in_c, classes;
};
using Unit = std::variant<Conv, BN, Act, PreactBlock, PoolTo, Head>;

}  // namespace plan

namespace detail {

inline int64_t out_dim(int64_t in, int64_t k, int64_t s, int64_t p) {
  const int64_t span = in + 2 * p - k;
  return span < 0 ? 0 : span / s + 1;
}

struct ArchLayout {
  std::vector<plan::Unit> units;
  int64_t stem_stride = 1, stem_pad = 0, stem_kernel = 0;
};

// Spatial extent after the plan's conv/block units, ignoring pooling.
inline std::pair<int64_t, int64_t> realized_size(const std::vector<plan::Unit>& units, int64_t h,
                                                 int64_t w) {
  for (const plan::Unit& u : units) {
    if (const auto* c = std::get_if<plan::Conv>(&u)) {
      h = out_dim(h, c->k, c->stride, c->pad);
      w = out_dim(w, c->k, c->stride, c->pad);
    } else if (const auto* b = std::get_if<plan::PreactBlock>(&u)) {
      h = out_dim(h, 3, b->stride, 1);
      w = out_dim(w, 3, b->stride, 1);
    }
  }
  return {h, w};
}

inline ArchLayout arch_layout(const ModelConfig& cfg) {
  using namespace plan;
  ArchLayout out;
  std::vector<Unit>& u = out.units;
  const int64_t s1 = cfg.first_conv_stride;

  // stage strides before compensation, and the unit index of each
  std::vector<int64_t> down_defaults;
  auto assemble = [&](const std::vector<int64_t>& stage_strides) {
    u.clear();
    switch (cfg.arch) {
      case Arch::small_cnn:
        u.push_back(Conv{cfg.in_channels, 16, 3, s1, 1, "stem"});
        u.push_back(BN{16, "stem_bn"});
        u.push_back(Act{});
        u.push_back(Conv{16, 32, 3, stage_strides[0], 1, "stage1"});
        u.push_back(BN{32, "stage1_bn"});
        u.push_back(Act{});
        u.push_back(Conv{32, 64, 3, stage_strides[1], 1, "stage2"});
        u.push_back(BN{64, "stage2_bn"});
        u.push_back(Act{});
        break;
      case Arch::preact_resnet_lite:
        u.push_back(Conv{cfg.in_channels, 32, 3, s1, 1, "stem"});
        u.push_back(PreactBlock{32, 32, 1, "s1b1"});
        u.push_back(PreactBlock{32, 32, 1, "s1b2"});
        u.push_back(PreactBlock{32, 64, stage_strides[0], "s2b1"});
        u.push_back(PreactBlock{64, 64, 1, "s2b2"});
        u.push_back(PreactBlock{64, 128, stage_strides[1], "s3b1"});
        u.push_back(PreactBlock{128, 128, 1, "s3b2"});
        u.push_back(BN{128, "final_bn"});
        u.push_back(Act{});
        break;
      case Arch::patchify_stem_net:
        u.push_back(Conv{cfg.in_channels, 32, s1, s1, 0, "stem"});
        u.push_back(BN{32, "stem_bn"});
        u.push_back(Act{});
        u.push_back(Conv{32, 64, 3, 1, 1, "stage1"});
        u.push_back(BN{64, "stage1_bn"});
        u.push_back(Act{});
        u.push_back(Conv{64, 128, 3, 1, 1, "stage2"});
        u.push_back(BN{128, "stage2_bn"});
        u.push_back(Act{});
        break;
    }
  };

  int64_t target_h, target_w;
  if (cfg.arch == Arch::patchify_stem_net) {
    // no intermediate downsamplers: the target is the smallest stem output
    // across supported strides (stride 4), reached via the final pool
    target_h = out_dim(cfg.in_h, 4, 4, 0);
    target_w = out_dim(cfg.in_w, 4, 4, 0);
    down_defaults = {};
  } else {
    down_defaults = {2, 2};
    // reference geometry: stem stride 1, default stage strides
    int64_t h = out_dim(cfg.in_h, 3, 1, 1), w = out_dim(cfg.in_w, 3, 1, 1);
    for (int64_t s : down_defaults) {
      h = out_dim(h, 3, s, 1);
      w = out_dim(w, 3, s, 1);
    }
    target_h = h;
    target_w = w;
  }
  if (target_h < 1 || target_w < 1)
    throw config_error("input " + std::to_string(cfg.in_h) + "x" + std::to_string(cfg.in_w) +
                       " too small for " + to_string(cfg.arch));

  std::vector<int64_t> strides = down_defaults;
  if (!strides.empty()) {
    if (cfg.compensation_stage < 0 ||
        cfg.compensation_stage >= static_cast<int64_t>(strides.size()))
      throw config_error("compensation_stage must be in [0," +
                         std::to_string(strides.size()) + ")");
    // drop stage strides to 1, starting at compensation_stage and wrapping,
    // until the realized map is at least the target
    for (size_t i = 0; i <= strides.size(); ++i) {
      assemble(strides);
      auto [h, w] = realized_size(u, cfg.in_h, cfg.in_w);
      if (h >= target_h && w >= target_w) break;
      if (i == strides.size())
        throw config_error("first_conv_stride " + std::to_string(s1) +
                           " cannot preserve the final feature-map size");
      strides[(cfg.compensation_stage + static_cast<int64_t>(i)) % strides.size()] = 1;
    }
  } else {
    assemble(strides);
    auto [h, w] = realized_size(u, cfg.in_h, cfg.in_w);
    if (h < target_h || w < target_w)
      throw config_error("first_conv_stride " + std::to_string(s1) +
                         " cannot preserve the final feature-map size");
  }
  auto [h, w] = realized_size(u, cfg.in_h, cfg.in_w);
  if (h != target_h || w != target_w) u.push_back(PoolTo{target_h, target_w});

  int64_t head_c = 0;
  switch (cfg.arch) {
    case Arch::small_cnn: head_c = 64; break;
    default: head_c = 128; break;
  }
  u.push_back(plan::Head{head_c, cfg.num_classes});

  const auto& stem = std::get<plan::Conv>(u.front());
  out.stem_stride = stem.stride;
  out.stem_pad = stem.pad;
  out.stem_kernel = stem.k;
  return out;
}

}  // namespace detail

inline void validate(const ModelConfig& cfg) {
  if (cfg.first_conv_stride < 1 || cfg.first_conv_stride > 4)
    throw config_error("first_conv_stride must be in {1,2,3,4}");
  if (cfg.activation == Activation::softplus_param && !(cfg.softplus_alpha > 0))
    throw config_error("softplus_alpha must be positive");
  if (cfg.num_classes < 2) throw config_error("num_classes must be at least 2");
  if (cfg.in_channels < 1 || cfg.in_h < 1 || cfg.in_w < 1)
    throw config_error("input shape extents must be positive");
  detail::arch_layout(cfg);  // throws on infeasible stride/compensation combos
}

// ---------------------------------------------------------------------------
// model
// ---------------------------------------------------------------------------

template <typename T>
class Model {
 public:
  Model() = default;

  static Model build(const ModelConfig& cfg, uint64_t seed) {
    validate(cfg);
    Model m;
    m.config_ = cfg;
    m.layout_ = detail::arch_layout(cfg);
    Rng rng(seed);
    for (const plan::Unit& u : m.layout_.units) {
      if (const auto* c = std::get_if<plan::Conv>(&u)) {
        m.add_conv(*c, rng);
      } else if (const auto* b = std::get_if<plan::BN>(&u)) {
        m.add_bn(b->name, b->c);
      } else if (const auto* pb = std::get_if<plan::PreactBlock>(&u)) {
        m.add_bn(pb->name + ".bn1", pb->in_c);
        m.add_conv({pb->in_c, pb->out_c, 3, pb->stride, 1, pb->name + ".conv1"}, rng);
        m.add_bn(pb->name + ".bn2", pb->out_c);
        m.add_conv({pb->out_c, pb->out_c, 3, 1, 1, pb->name + ".conv2"}, rng);
        if (pb->stride != 1 || pb->in_c != pb->out_c)
          m.add_conv({pb->in_c, pb->out_c, 1, pb->stride, 0, pb->name + ".skip"}, rng);
      } else if (const auto* hd = std::get_if<plan::Head>(&u)) {
        m.add_linear("fc", hd->in_c, hd->classes, rng);
      }
    }
    return m;
  }

  const ModelConfig& config() const { return config_; }
  std::vector<Parameter<T>>& params() { return params_; }
  const std::vector<Parameter<T>>& params() const { return params_; }
  std::vector<Buffer<T>>& buffers() { return buffers_; }
  const std::vector<Buffer<T>>& buffers() const { return buffers_; }

  Parameter<T>& param(const std::string& name) {
    for (Parameter<T>& p : params_)
      if (p.name == name) return p;
    throw error("no parameter named " + name);
  }

  /// The stem convolution weight (always the first registered parameter).
  Tensor<T>& first_conv_weight() {
    if (params_.empty() || params_[0].name != "stem.weight")
      throw error("model has no stem convolution");
    return params_[0].value;
  }
  const Tensor<T>& first_conv_weight() const {
    return const_cast<Model*>(this)->first_conv_weight();
  }
  int64_t stem_stride() const { return layout_.stem_stride; }
  int64_t stem_pad() const { return layout_.stem_pad; }

  int64_t num_scalars() const {
    int64_t n = 0;
    for (const Parameter<T>& p : params_) n += p.value.size();
    return n;
  }

  /// train selects batch statistics in every norm layer; update_stats folds
  /// them into the running estimates (training steps only, never attacks).
  Tensor<T> forward(const Tensor<T>& x, bool train, bool update_stats) {
    if (x.ndim() != 4 || x.dim(1) != config_.in_channels || x.dim(2) != config_.in_h ||
        x.dim(3) != config_.in_w)
      throw shape_error("forward: expected [N," + std::to_string(config_.in_channels) + "," +
                        std::to_string(config_.in_h) + "," + std::to_string(config_.in_w) +
                        "], got " + shape_str(x.shape()));
    size_t pi = 0, bi = 0;
    Tensor<T> h = x;
    for (const plan::Unit& u : layout_.units) {
      if (const auto* c = std::get_if<plan::Conv>(&u)) {
        h = conv_prim(h, params_[pi++].value, c->stride, c->pad);
      } else if (std::get_if<plan::BN>(&u)) {
        h = bn_forward(h, pi, bi, train, update_stats);
      } else if (std::get_if<plan::Act>(&u)) {
        h = act(h);
      } else if (const auto* pb = std::get_if<plan::PreactBlock>(&u)) {
        Tensor<T> o = act(bn_forward(h, pi, bi, train, update_stats));
        const bool has_skip = pb->stride != 1 || pb->in_c != pb->out_c;
        Tensor<T> c1w = params_[pi++].value;
        Tensor<T> inner = bn_forward(conv_prim(o, c1w, pb->stride, 1), pi, bi, train, update_stats);
        Tensor<T> c2w = params_[pi++].value;
        Tensor<T> main = conv_prim(act(inner), c2w, 1, 1);
        Tensor<T> sc = has_skip ? conv_prim(o, params_[pi++].value, pb->stride, 0) : h;
        h = add(main, sc);
      } else if (const auto* pt = std::get_if<plan::PoolTo>(&u)) {
        h = adaptive_avgpool2d(h, pt->h, pt->w);
      } else {
        h = global_avgpool(h);
        Tensor<T> w = params_[pi++].value;
        Tensor<T> b = params_[pi++].value;
        h = add(matmul(h, transpose2(w)), reshape(b, Shape{1, b.size()}));
      }
    }
    return h;
  }

 private:
  Tensor<T> act(const Tensor<T>& h) const {
    switch (config_.activation) {
      case Activation::relu: return relu(h);
      case Activation::gelu: return gelu(h);
      case Activation::silu: return silu(h);
      case Activation::elu: return elu(h);
      case Activation::softplus_param: return softplus_param(h, config_.softplus_alpha);
    }
    throw config_error("unknown activation");
  }

  Tensor<T> bn_forward(const Tensor<T>& h, size_t& pi, size_t& bi, bool train,
                       bool update_stats) {
    Tensor<T>& gamma = params_[pi].value;
    Tensor<T>& beta = params_[pi + 1].value;
    pi += 2;
    Tensor<T>& rm = buffers_[bi].value;
    Tensor<T>& rv = buffers_[bi + 1].value;
    bi += 2;
    return batchnorm(h, gamma, beta, rm, rv, train, update_stats);
  }

  void add_param(const std::string& name, Tensor<T> value, bool trainable = true) {
    value.set_requires_grad();
    params_.push_back({std::move(value), name, trainable});
  }

  void add_conv(const plan::Conv& c, Rng& rng) {
    // fan-in scaled init for relu-family nonlinearities
    const double std = std::sqrt(2.0 / static_cast<double>(c.in_c * c.k * c.k));
    Shape shape{c.out_c, c.in_c, c.k, c.k};
    std::vector<T> w(static_cast<size_t>(numel(shape)));
    for (T& v : w) v = static_cast<T>(rng.normal() * std);
    add_param(c.name + ".weight", Tensor<T>(std::move(shape), std::move(w)));
  }

  void add_linear(const std::string& name, int64_t in, int64_t out, Rng& rng) {
    const double std = std::sqrt(2.0 / static_cast<double>(in));
    std::vector<T> w(static_cast<size_t>(in * out));
    for (T& v : w) v = static_cast<T>(rng.normal() * std);
    add_param(name + ".weight", Tensor<T>(Shape{out, in}, std::move(w)));
    add_param(name + ".bias", Tensor<T>::zeros(Shape{out}));
  }

  void add_bn(const std::string& name, int64_t c) {
    add_param(name + ".gamma", Tensor<T>::ones(Shape{c}));
    add_param(name + ".beta", Tensor<T>::zeros(Shape{c}));
    buffers_.push_back({Tensor<T>::zeros(Shape{c}), name + ".running_mean"});
    buffers_.push_back({Tensor<T>::ones(Shape{c}), name + ".running_var"});
  }

  ModelConfig config_;
  detail::ArchLayout layout_;
  std::vector<Parameter<T>> params_;
  std::vector<Buffer<T>> buffers_;
};

using ModelF = Model<float>;
using ModelD = Model<double>;

template <typename T>
Model<T> build_model(const ModelConfig& cfg, uint64_t seed) {
  return Model<T>::build(cfg, seed);
}

/// Plain inference-style entry: training-mode statistics follow train_mode,
/// running statistics update only in train_mode.
template <typename T>
Tensor<T> forward(Model<T>& m, const Tensor<T>& x, bool train_mode) {
  return m.forward(x, train_mode, train_mode);
}

}  // namespace atlab
