#pragma once

// Multi-speaker sequence-to-sequence spectrogram decoder. The code
// sequence is encoded by a small convolution + recurrent stack, attended
// over with content-based attention plus a location-sensitive feature, and
// decoded by two gated recurrent layers. Speaker identity enters only
// through the embedding row, which an affine conditioner turns into a
// scale gamma = ReLU(W s + b) and shift beta applied to the first
// recurrent layer's hidden state at every timestep: M' = gamma * (M - beta).

#include <string>
#include <vector>

#include "vqtts/nn.hpp"
#include "vqtts/ops.hpp"
#include "vqtts/quantizer.hpp"

namespace vqtts {

struct DecoderConfig {
  int64_t code_dim = 64;       // D of incoming code vectors
  int64_t code_channels = 64;  // code-encoder conv channels
  int64_t code_conv_width = 3;
  int64_t code_hidden = 64;  // code-encoder recurrent width = attention value width
  int64_t attention_dim = 64;
  int64_t location_filters = 8;
  int64_t location_width = 7;
  int64_t prenet_dim = 64;
  int64_t rnn1_width = 128;  // conditioning site
  int64_t rnn2_width = 128;
  int64_t postnet_layers = 5;
  int64_t postnet_channels = 32;
  int64_t postnet_width = 5;
  int64_t out_bins = 257;  // F
  int64_t reduction = 2;   // output frames per decoder step
  int64_t max_frames = 256;
  double stop_threshold = 0.5;
  int64_t speaker_dim = 32;  // d_s

  void validate() const {
    if (reduction < 1) throw std::invalid_argument("DecoderConfig: reduction must be >= 1");
    if (postnet_layers < 2) throw std::invalid_argument("DecoderConfig: need >= 2 postnet layers");
    if (max_frames < reduction)
      throw std::invalid_argument("DecoderConfig: max_frames below one reduction block");
  }
};

// K x d_s learnable embeddings, one row per speaker id.
class SpeakerTable {
 public:
  void init(ParamRegistry& reg, const std::vector<std::string>& speaker_ids, int64_t dim, Rng& rng) {
    ids_ = speaker_ids;
    std::vector<double> data(ids_.size() * static_cast<size_t>(dim));
    for (double& v : data) v = rng.normal();  // unit-variance rows
    table_ = reg.add("speakers.table",
                     Tensor::from({static_cast<int64_t>(ids_.size()), dim}, std::move(data), true));
  }

  int64_t index_of(const std::string& id) const {
    for (size_t i = 0; i < ids_.size(); ++i)
      if (ids_[i] == id) return static_cast<int64_t>(i);
    throw std::invalid_argument("SpeakerTable: unknown speaker '" + id + "'");
  }

  Tensor embedding(const std::string& id) const {
    const int64_t row = index_of(id);
    return reshape(embedding_lookup(table_, {static_cast<int>(row)}), {table_.shape()[1]});
  }

  const std::vector<std::string>& ids() const { return ids_; }
  Tensor table() const { return table_; }

 private:
  Tensor table_;
  std::vector<std::string> ids_;
};

struct AffineConditioner {
  Linear gamma, beta;

  void init(ParamRegistry& reg, int64_t speaker_dim, int64_t hidden, Rng& rng) {
    gamma.init(reg, "decoder.cond.gamma", hidden, speaker_dim, rng);
    beta.init(reg, "decoder.cond.beta", hidden, speaker_dim, rng);
  }

  // gamma = ReLU(W_g s + b_g) >= 0, beta = W_b s + b_b.
  std::pair<Tensor, Tensor> params(const Tensor& speaker_embedding) const {
    return {relu(gamma.apply(speaker_embedding)), beta.apply(speaker_embedding)};
  }
};

// M' = gamma (M - beta), elementwise.
inline Tensor apply_affine(const Tensor& m, const Tensor& gamma, const Tensor& beta) {
  return mul(gamma, sub(m, beta));
}

struct SynthesisOutput {
  Tensor spectrogram;              // T x F after the postnet residual
  Tensor stop_logits;              // one per decoder step
  std::vector<double> stop_probs;  // sigmoid of the logits
  std::vector<double> alignment;   // steps x S, rows sum to 1
  int64_t steps = 0;
  int64_t code_length = 0;

  double alignment_at(int64_t step, int64_t s) const {
    return alignment[static_cast<size_t>(step * code_length + s)];
  }
};

class SpeakerSynthesizer {
 public:
  void init(ParamRegistry& reg, const DecoderConfig& cfg, Rng& rng) {
    cfg.validate();
    cfg_ = cfg;
    code_conv_.init(reg, "decoder.code_conv", cfg.code_dim, cfg.code_channels,
                    cfg.code_conv_width, 1, rng);
    code_gru_.init(reg, "decoder.code_gru", cfg.code_channels, cfg.code_hidden, rng);
    key_proj_.init(reg, "decoder.attn.key", cfg.attention_dim, cfg.code_hidden, rng);
    query_proj_.init(reg, "decoder.attn.query", cfg.attention_dim, cfg.rnn1_width, rng, false);
    loc_conv_.init(reg, "decoder.attn.loc_conv", 1, cfg.location_filters, cfg.location_width, 1, rng);
    loc_proj_.init(reg, "decoder.attn.loc", cfg.attention_dim, cfg.location_filters, rng, false);
    attn_v_ = reg.create_xavier("decoder.attn.v", {1, cfg.attention_dim}, rng);
    prenet1_.init(reg, "decoder.prenet1", cfg.prenet_dim, cfg.out_bins, rng);
    prenet2_.init(reg, "decoder.prenet2", cfg.prenet_dim, cfg.prenet_dim, rng);
    rnn1_.init(reg, "decoder.rnn1", cfg.prenet_dim + cfg.code_hidden, cfg.rnn1_width, rng);
    rnn2_.init(reg, "decoder.rnn2", cfg.rnn1_width + cfg.code_hidden, cfg.rnn2_width, rng);
    cond_.init(reg, cfg.speaker_dim, cfg.rnn1_width, rng);
    frame_proj_.init(reg, "decoder.frame_proj", cfg.reduction * cfg.out_bins,
                     cfg.rnn2_width + cfg.code_hidden, rng);
    stop_proj_.init(reg, "decoder.stop_proj", 1, cfg.rnn2_width + cfg.code_hidden, rng);
    postnet_.resize(static_cast<size_t>(cfg.postnet_layers));
    for (int64_t i = 0; i < cfg.postnet_layers; ++i) {
      const int64_t cin = i == 0 ? cfg.out_bins : cfg.postnet_channels;
      const int64_t cout = i == cfg.postnet_layers - 1 ? cfg.out_bins : cfg.postnet_channels;
      postnet_[static_cast<size_t>(i)].init(reg, "decoder.postnet" + std::to_string(i), cin, cout,
                                            cfg.postnet_width, 1, rng);
    }
  }

  const DecoderConfig& config() const { return cfg_; }
  const AffineConditioner& conditioner() const { return cond_; }

  // Teacher-forced: feeds ground-truth previous frames; the output length
  // equals the target's frame count exactly.
  SynthesisOutput synthesize_teacher_forced(const CodeSequence& q, const Tensor& speaker_embedding,
                                            const Tensor& target) const {
    if (target.shape().size() != 2 || target.shape()[1] != cfg_.out_bins)
      throw std::invalid_argument("synthesize: target shape " + shape_str(target.shape()) +
                                  " does not match F=" + std::to_string(cfg_.out_bins));
    const int64_t T = target.shape()[0];
    const int64_t steps = (T + cfg_.reduction - 1) / cfg_.reduction;
    return run(q, speaker_embedding, &target, steps, T);
  }

  // Free-running: feeds its own predictions and stops on the stop token or
  // at max_frames.
  SynthesisOutput synthesize_free(const CodeSequence& q, const Tensor& speaker_embedding) const {
    return run(q, speaker_embedding, nullptr, cfg_.max_frames / cfg_.reduction, -1);
  }

 private:
  SynthesisOutput run(const CodeSequence& q, const Tensor& speaker_embedding, const Tensor* target,
                      int64_t max_steps, int64_t out_frames) const {
    if (q.size() == 0) throw std::invalid_argument("synthesize: empty code sequence");
    if (speaker_embedding.shape() != Shape{cfg_.speaker_dim})
      throw std::invalid_argument("synthesize: speaker embedding shape " +
                                  shape_str(speaker_embedding.shape()) + ", expected [" +
                                  std::to_string(cfg_.speaker_dim) + "]");
    const int64_t S = q.size();

    // Code memory and attention keys, computed once per utterance.
    Tensor memory;
    {
      Tensor x = relu(code_conv_.apply(q.vectors));
      Tensor state = code_gru_.initial_state();
      std::vector<Tensor> rows_out;
      rows_out.reserve(static_cast<size_t>(S));
      for (int64_t s = 0; s < S; ++s) {
        state = code_gru_.step(reshape(rows(x, s, 1), {cfg_.code_channels}), state);
        rows_out.push_back(reshape(state, {1, cfg_.code_hidden}));
      }
      memory = concat(rows_out);
    }
    Tensor keys = key_proj_.apply_rows(memory);
    auto [gamma, beta] = cond_.params(speaker_embedding);

    SynthesisOutput out;
    out.code_length = S;

    Tensor prev_frame = Tensor::zeros({cfg_.out_bins});
    Tensor h1 = rnn1_.initial_state();
    Tensor h2 = rnn2_.initial_state();
    Tensor ctx = Tensor::zeros({cfg_.code_hidden});
    // Alignment starts focused on the first code.
    std::vector<double> alpha_val(static_cast<size_t>(S), 0.0);
    alpha_val[0] = 1.0;
    Tensor alpha = Tensor::from({1, S}, alpha_val);

    std::vector<Tensor> blocks;
    std::vector<Tensor> stop_logits;

    for (int64_t step = 0; step < max_steps; ++step) {
      Tensor pre = relu(prenet2_.apply(relu(prenet1_.apply(prev_frame))));
      h1 = rnn1_.step(concat({pre, ctx}), h1);
      Tensor conditioned = apply_affine(h1, gamma, beta);

      // Attention over the code memory.
      Tensor query = query_proj_.apply(conditioned);
      Tensor loc = loc_proj_.apply_rows(loc_conv_.apply(reshape(alpha, {S, 1})));
      Tensor scores = tanh_t(add_rowvec(add(keys, loc), query));
      alpha = softmax_rows(reshape(matmul(scores, reshape(attn_v_, {cfg_.attention_dim, 1})), {1, S}));
      ctx = reshape(matmul(alpha, memory), {cfg_.code_hidden});
      for (int64_t s = 0; s < S; ++s) out.alignment.push_back(alpha.value()[static_cast<size_t>(s)]);

      h2 = rnn2_.step(concat({conditioned, ctx}), h2);
      Tensor feat = concat({h2, ctx});
      Tensor block = reshape(frame_proj_.apply(feat), {cfg_.reduction, cfg_.out_bins});
      Tensor stop_logit = stop_proj_.apply(feat);
      blocks.push_back(block);
      stop_logits.push_back(stop_logit);
      const double stop_p = 1.0 / (1.0 + std::exp(-stop_logit.value()[0]));
      out.stop_probs.push_back(stop_p);

      if (target) {
        // Next input: the last ground-truth frame of this block.
        const int64_t last = std::min((step + 1) * cfg_.reduction, target->shape()[0]) - 1;
        prev_frame = reshape(rows(*target, last, 1), {cfg_.out_bins});
      } else {
        prev_frame = reshape(rows(block, cfg_.reduction - 1, 1), {cfg_.out_bins});
        if (stop_p > cfg_.stop_threshold) break;
      }
    }

    out.steps = static_cast<int64_t>(blocks.size());
    Tensor pre_seq = concat(blocks);
    if (out_frames > 0 && pre_seq.shape()[0] > out_frames) pre_seq = rows(pre_seq, 0, out_frames);

    // Postnet residual refinement over the whole sequence.
    Tensor y = pre_seq;
    for (size_t i = 0; i < postnet_.size(); ++i) {
      y = postnet_[i].apply(y);
      if (i + 1 < postnet_.size()) y = tanh_t(y);
    }
    out.spectrogram = add(pre_seq, y);
    out.stop_logits = concat(stop_logits);
    return out;
  }

  DecoderConfig cfg_;
  Conv1dLayer code_conv_;
  GruCell code_gru_;
  Linear key_proj_, query_proj_, loc_proj_;
  Conv1dLayer loc_conv_;
  Tensor attn_v_;
  Linear prenet1_, prenet2_;
  GruCell rnn1_, rnn2_;
  AffineConditioner cond_;
  Linear frame_proj_, stop_proj_;
  std::vector<Conv1dLayer> postnet_;
};

}  // namespace vqtts
