#pragma once

// Phonetic encoder: mel spectrogram -> frame-level representation
// sequence, downsampled in time by the stride of the first convolution.

#include "vqtts/nn.hpp"
#include "vqtts/ops.hpp"

namespace vqtts {

struct EncoderConfig {
  int64_t mel_bands = 40;
  int64_t conv_channels = 64;
  int64_t conv_width = 5;
  int64_t downsample = 2;  // r; output length is ceil(T / r)
  int64_t hidden = 64;     // recurrent state width
  int64_t out_dim = 64;    // D, must equal the codeword dimension

  void validate() const {
    if (downsample < 1) throw std::invalid_argument("EncoderConfig: downsample must be >= 1");
    if (mel_bands < 1 || conv_channels < 1 || hidden < 1 || out_dim < 1)
      throw std::invalid_argument("EncoderConfig: dimensions must be positive");
  }
};

class PhoneticEncoder {
 public:
  void init(ParamRegistry& reg, const EncoderConfig& cfg, Rng& rng) {
    cfg.validate();
    cfg_ = cfg;
    conv1_.init(reg, "encoder.conv1", cfg.mel_bands, cfg.conv_channels, cfg.conv_width,
                cfg.downsample, rng);
    conv2_.init(reg, "encoder.conv2", cfg.conv_channels, cfg.conv_channels, cfg.conv_width, 1, rng);
    gru_.init(reg, "encoder.gru", cfg.conv_channels, cfg.hidden, rng);
    proj_.init(reg, "encoder.proj", cfg.out_dim, cfg.hidden, rng);
  }

  const EncoderConfig& config() const { return cfg_; }

  // mel: T x mel_bands -> T' x out_dim with T' = ceil(T / downsample).
  Tensor encode(const Tensor& mel) const {
    if (mel.shape().size() != 2 || mel.shape()[1] != cfg_.mel_bands)
      throw std::invalid_argument("encode: expected T x " + std::to_string(cfg_.mel_bands) +
                                  " mel input, got " + shape_str(mel.shape()));
    Tensor x = relu(conv1_.apply(mel));
    x = relu(conv2_.apply(x));
    const int64_t T = x.shape()[0];
    Tensor state = gru_.initial_state();
    std::vector<Tensor> steps;
    steps.reserve(static_cast<size_t>(T));
    for (int64_t t = 0; t < T; ++t) {
      state = gru_.step(reshape(rows(x, t, 1), {cfg_.conv_channels}), state);
      steps.push_back(reshape(state, {1, cfg_.hidden}));
    }
    return proj_.apply_rows(concat(steps));
  }

 private:
  EncoderConfig cfg_;
  Conv1dLayer conv1_, conv2_;
  GruCell gru_;
  Linear proj_;
};

}  // namespace vqtts
