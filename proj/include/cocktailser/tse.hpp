// Copyright 2026 The CocktailSER Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

// Time-domain target speaker extractor.
//
//   E  = aux(enrollment)                 speaker embedding [D]
//   Y  = relu(conv1d(y))                 encoder features  [N,T']
//   M  = sigmoid(tcn(Y) with Y_1 * (A E + a) after block 1)
//   s0 = deconv1d(Y * M) trimmed to len(y)
//
// The mask estimator is a stack of temporal-convolution blocks (1x1 conv,
// PReLU, gLN, dilated depthwise conv, PReLU, gLN, 1x1 conv, residual). The
// speaker embedding enters once, as a channel-wise multiplicative gate.

#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "cocktailser/autodiff/checkpoint.hpp"
#include "cocktailser/autodiff/ops.hpp"
#include "cocktailser/rng.hpp"
#include "cocktailser/signal.hpp"

namespace cocktailser::tse {

struct TseConfig {
  int encoder_channels = 64;  // N
  int encoder_kernel = 16;    // K
  int encoder_stride = 8;
  int blocks_per_repeat = 3;  // dilations 1, 2, 4, ...
  int repeats = 2;
  int hidden_channels = 64;
  int tcn_kernel = 3;
  int embedding_dim = 32;      // D
  int adaptation_position = 1;  // number of blocks before the adaptation layer
  // Test and ablation switches.
  bool encoder_activation = true;
  bool identity_adaptation = false;
  bool identity_mask = false;

  int total_blocks() const { return blocks_per_repeat * repeats; }

  void validate() const {
    CSER_CHECK(encoder_channels >= 1 && encoder_kernel >= 1 && encoder_stride >= 1 &&
                   blocks_per_repeat >= 1 && repeats >= 1 && hidden_channels >= 1 &&
                   tcn_kernel >= 1 && embedding_dim >= 1,
               "tse config: all dimensions must be >= 1");
    CSER_CHECK(tcn_kernel % 2 == 1, "tse config: tcn_kernel must be odd");
    CSER_CHECK(adaptation_position >= 0 && adaptation_position <= total_blocks(),
               "tse config: adaptation_position must be in [0, ", total_blocks(), "]");
  }
};

template <typename T>
struct SpeakerEmbedding {
  ad::Tensor<T> vector;  // [D]
};

template <typename T>
class TseModel {
 public:
  using Tensor = ad::Tensor<T>;

  explicit TseModel(TseConfig cfg, std::uint64_t seed = 1) : cfg_(cfg) {
    cfg_.validate();
    build();
    init(seed);
  }

  TseModel(const TseModel& other) : cfg_(other.cfg_) {
    build();
    params_.copy_values_from(other.params_);
  }
  TseModel& operator=(const TseModel&) = delete;
  TseModel(TseModel&&) noexcept = default;
  TseModel& operator=(TseModel&&) noexcept = default;

  const TseConfig& config() const { return cfg_; }
  TseConfig& mutable_config() { return cfg_; }
  ad::ParameterSet<T>& params() { return params_; }
  const ad::ParameterSet<T>& params() const { return params_; }

  /// Encoder: [1,T] -> [N,T'].
  Tensor encode(const Tensor& y) const {
    CSER_CHECK(y.rank() == 2 && y.dim(0) == 1, "encode: expects [1,T]");
    CSER_CHECK(y.dim(1) >= cfg_.encoder_kernel, "encode: input of ", y.dim(1),
               " samples is shorter than the encoder kernel (", cfg_.encoder_kernel, ")");
    Tensor out = ad::conv1d(y, enc_w_, Tensor(), {.stride = cfg_.encoder_stride});
    return cfg_.encoder_activation ? ad::relu(out) : out;
  }

  /// Auxiliary network: enrollment [1,T] -> embedding [D].
  SpeakerEmbedding<T> embed(const Tensor& a0) const {
    CSER_CHECK(a0.rank() == 2 && a0.dim(0) == 1, "embed: expects [1,T]");
    CSER_CHECK(a0.dim(1) >= cfg_.encoder_kernel, "embed: enrollment of ", a0.dim(1),
               " samples is shorter than the encoder kernel (", cfg_.encoder_kernel, ")");
    Tensor h = ad::relu(ad::conv1d(a0, aux_enc_w_, Tensor(), {.stride = cfg_.encoder_stride}));
    h = ad::global_layer_norm(h, aux_norm_g_, aux_norm_b_);
    h = ad::prelu(ad::conv1d(h, aux_p1_w_, aux_p1_b_), aux_prelu_);
    h = ad::conv1d(h, aux_p2_w_, aux_p2_b_);
    return {ad::mean_pool_time(h)};
  }

  /// Mask estimator: (Y [N,T'], E [D]) -> M [N,T'] with entries in [0,1].
  Tensor estimate_mask(const Tensor& encoded, const SpeakerEmbedding<T>& e) const {
    CSER_CHECK(encoded.rank() == 2 && encoded.dim(0) == cfg_.encoder_channels,
               "estimate_mask: expects [", cfg_.encoder_channels, ",T'], got ",
               ad::shape_str(encoded.shape()));
    CSER_CHECK(e.vector.defined() && static_cast<int>(e.vector.size()) == cfg_.embedding_dim,
               "estimate_mask: embedding dimension ", e.vector.defined() ? e.vector.size() : 0,
               " != ", cfg_.embedding_dim);
    if (cfg_.identity_mask) {
      std::vector<T> ones(encoded.size(), T(1));
      return Tensor::from(encoded.shape(), std::move(ones));
    }
    Tensor h = ad::global_layer_norm(encoded, in_norm_g_, in_norm_b_);
    h = ad::conv1d(h, in_w_, in_b_);
    for (int b = 0; b < cfg_.total_blocks(); ++b) {
      if (b == cfg_.adaptation_position) h = adapt(h, e);
      h = block(h, b);
    }
    if (cfg_.adaptation_position == cfg_.total_blocks()) h = adapt(h, e);
    return ad::sigmoid(ad::conv1d(h, out_w_, out_b_));
  }

  /// Decoder: masked features [N,T'] -> waveform [1,length].
  Tensor decode(const Tensor& masked, int length) const {
    CSER_CHECK(masked.rank() == 2 && masked.dim(0) == cfg_.encoder_channels,
               "decode: expects [", cfg_.encoder_channels, ",T'], got ", ad::shape_str(masked.shape()));
    return ad::fit_length(ad::deconv1d(masked, dec_w_, Tensor(), cfg_.encoder_stride), length);
  }

  /// Full extraction: mixture [1,T], enrollment [1,Ta] -> estimate [1,T].
  Tensor extract(const Tensor& y, const Tensor& a0) const {
    Tensor encoded = encode(y);
    Tensor mask = estimate_mask(encoded, embed(a0));
    return decode(ad::mul(encoded, mask), y.dim(1));
  }

  Waveform extract(const Waveform& y, const Waveform& a0) const {
    Tensor out = extract(to_tensor(y), to_tensor(a0));
    return Waveform(std::vector<double>(out.data().begin(), out.data().end()), y.sample_rate);
  }

  SpeakerEmbedding<T> embed_enrollment(const Waveform& a0) const { return embed(to_tensor(a0)); }

  static Tensor to_tensor(const Waveform& w, bool requires_grad = false) {
    const int n = static_cast<int>(w.size());
    std::vector<T> v(w.samples.begin(), w.samples.end());
    return Tensor::from({1, n}, std::move(v), requires_grad);
  }

  /// Sets the encoder to a [I; -I] basis and the decoder to its overlap-add
  /// inverse so decode(encode(y)) == y away from the first/last frame.
  /// Requires N >= 2K and stride dividing K.
  void make_passthrough() {
    const int n = cfg_.encoder_channels, k = cfg_.encoder_kernel, s = cfg_.encoder_stride;
    CSER_CHECK(n >= 2 * k && k % s == 0, "passthrough: needs N >= 2K and stride | K");
    const T overlap = static_cast<T>(k / s);
    auto enc = enc_w_.mutable_data();
    auto dec = dec_w_.mutable_data();
    std::fill(enc.begin(), enc.end(), T(0));
    std::fill(dec.begin(), dec.end(), T(0));
    for (int j = 0; j < k; ++j) {
      enc[static_cast<std::size_t>(j) * k + j] = T(1);
      enc[static_cast<std::size_t>(k + j) * k + j] = T(-1);
      dec[static_cast<std::size_t>(j) * k + j] = T(1) / overlap;
      dec[static_cast<std::size_t>(k + j) * k + j] = T(-1) / overlap;
    }
  }

  void save(const std::string& path) const { ad::save_checkpoint(params_, path); }
  void load(const std::string& path) { ad::load_checkpoint(params_, path); }

 private:
  struct Block {
    Tensor in_w, in_b, prelu1, norm1_g, norm1_b, dw_w, dw_b, prelu2, norm2_g, norm2_b, out_w, out_b;
    int dilation;
  };

  void build() {
    const int n = cfg_.encoder_channels, k = cfg_.encoder_kernel, h = cfg_.hidden_channels;
    const int d = cfg_.embedding_dim;
    enc_w_ = params_.add("encoder.weight", {n, 1, k});
    aux_enc_w_ = params_.add("aux.encoder.weight", {n, 1, k});
    aux_norm_g_ = params_.add("aux.norm.gain", {n});
    aux_norm_b_ = params_.add("aux.norm.bias", {n});
    aux_p1_w_ = params_.add("aux.proj1.weight", {h, n, 1});
    aux_p1_b_ = params_.add("aux.proj1.bias", {h});
    aux_prelu_ = params_.add("aux.prelu", {1});
    aux_p2_w_ = params_.add("aux.proj2.weight", {d, h, 1});
    aux_p2_b_ = params_.add("aux.proj2.bias", {d});
    in_norm_g_ = params_.add("mask.norm.gain", {n});
    in_norm_b_ = params_.add("mask.norm.bias", {n});
    in_w_ = params_.add("mask.in.weight", {n, n, 1});
    in_b_ = params_.add("mask.in.bias", {n});
    for (int b = 0; b < cfg_.total_blocks(); ++b) {
      const std::string p = "mask.block" + std::to_string(b) + ".";
      Block blk;
      blk.in_w = params_.add(p + "in.weight", {h, n, 1});
      blk.in_b = params_.add(p + "in.bias", {h});
      blk.prelu1 = params_.add(p + "prelu1", {1});
      blk.norm1_g = params_.add(p + "norm1.gain", {h});
      blk.norm1_b = params_.add(p + "norm1.bias", {h});
      blk.dw_w = params_.add(p + "depthwise.weight", {h, 1, cfg_.tcn_kernel});
      blk.dw_b = params_.add(p + "depthwise.bias", {h});
      blk.prelu2 = params_.add(p + "prelu2", {1});
      blk.norm2_g = params_.add(p + "norm2.gain", {h});
      blk.norm2_b = params_.add(p + "norm2.bias", {h});
      blk.out_w = params_.add(p + "out.weight", {n, h, 1});
      blk.out_b = params_.add(p + "out.bias", {n});
      blk.dilation = 1 << (b % cfg_.blocks_per_repeat);
      blocks_.push_back(blk);
    }
    adapt_w_ = params_.add("mask.adapt.weight", {n, d});
    adapt_b_ = params_.add("mask.adapt.bias", {n});
    out_w_ = params_.add("mask.out.weight", {n, n, 1});
    out_b_ = params_.add("mask.out.bias", {n});
    dec_w_ = params_.add("decoder.weight", {n, 1, k});
  }

  void init(std::uint64_t seed) {
    Rng rng(seed);
    for (auto& p : params_.all()) {
      auto v = p.tensor.mutable_data();
      const auto& name = p.name;
      auto ends_with = [&](std::string_view suf) {
        return name.size() >= suf.size() && name.compare(name.size() - suf.size(), suf.size(), suf) == 0;
      };
      if (ends_with("gain")) {
        std::fill(v.begin(), v.end(), T(1));
      } else if (ends_with("prelu") || ends_with("prelu1") || ends_with("prelu2")) {
        std::fill(v.begin(), v.end(), T(0.25));
      } else if (name == "mask.adapt.bias") {
        // Start the gate near identity so the untrained model passes features through.
        std::fill(v.begin(), v.end(), T(1));
      } else if (ends_with("bias")) {
        std::fill(v.begin(), v.end(), T(0));
      } else {
        // Fan-in uniform init; decoder fan-in counts the frames overlapping each sample.
        const auto& s = p.tensor.shape();
        int fan_in = 1;
        for (std::size_t i = 1; i < s.size(); ++i) fan_in *= s[i];
        if (name == "decoder.weight") fan_in = s[0] * cfg_.encoder_kernel / cfg_.encoder_stride;
        const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
        for (auto& x : v) x = static_cast<T>(rng.uniform(-bound, bound));
      }
    }
  }

  Tensor adapt(const Tensor& h, const SpeakerEmbedding<T>& e) const {
    if (cfg_.identity_adaptation) return h;
    return ad::mul(h, ad::linear(e.vector, adapt_w_, adapt_b_));
  }

  Tensor block(const Tensor& x, int b) const {
    const Block& k = blocks_[static_cast<std::size_t>(b)];
    const int pad = k.dilation * (cfg_.tcn_kernel - 1) / 2;
    Tensor h = ad::conv1d(x, k.in_w, k.in_b);
    h = ad::global_layer_norm(ad::prelu(h, k.prelu1), k.norm1_g, k.norm1_b);
    h = ad::conv1d(h, k.dw_w, k.dw_b,
                   {.stride = 1, .padding = pad, .dilation = k.dilation, .groups = cfg_.hidden_channels});
    h = ad::global_layer_norm(ad::prelu(h, k.prelu2), k.norm2_g, k.norm2_b);
    return ad::add(x, ad::conv1d(h, k.out_w, k.out_b));
  }

  TseConfig cfg_;
  ad::ParameterSet<T> params_;
  Tensor enc_w_, dec_w_;
  Tensor aux_enc_w_, aux_norm_g_, aux_norm_b_, aux_p1_w_, aux_p1_b_, aux_prelu_, aux_p2_w_, aux_p2_b_;
  Tensor in_norm_g_, in_norm_b_, in_w_, in_b_;
  std::vector<Block> blocks_;
  Tensor adapt_w_, adapt_b_, out_w_, out_b_;
};

}  // namespace cocktailser::tse
