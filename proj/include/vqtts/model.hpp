#pragma once

// Full model: phonetic encoder + codebook + multi-speaker decoder +
// speaker table, with the three loss-term pipelines the trainer combines.

#include <optional>
#include <string>
#include <vector>

#include "vqtts/corpus.hpp"
#include "vqtts/dsp.hpp"
#include "vqtts/encoder.hpp"
#include "vqtts/quantizer.hpp"
#include "vqtts/synthesizer.hpp"

namespace vqtts {

struct ModelConfig {
  EncoderConfig encoder;
  DecoderConfig decoder;
  StftConfig stft;

  void validate() const {
    encoder.validate();
    decoder.validate();
    stft.validate();
    if (encoder.out_dim != decoder.code_dim)
      throw std::invalid_argument("ModelConfig: encoder out_dim " + std::to_string(encoder.out_dim) +
                                  " != decoder code_dim " + std::to_string(decoder.code_dim));
    if (encoder.mel_bands != stft.mel_bands)
      throw std::invalid_argument("ModelConfig: encoder mel bands do not match the STFT config");
    if (decoder.out_bins != stft.bins())
      throw std::invalid_argument("ModelConfig: decoder out_bins " + std::to_string(decoder.out_bins) +
                                  " != stft bins " + std::to_string(stft.bins()));
  }
};

inline void to_json(nlohmann::json& j, const EncoderConfig& c) {
  j = {{"mel_bands", c.mel_bands}, {"conv_channels", c.conv_channels},
       {"conv_width", c.conv_width}, {"downsample", c.downsample},
       {"hidden", c.hidden},         {"out_dim", c.out_dim}};
}
inline void from_json(const nlohmann::json& j, EncoderConfig& c) {
  c.mel_bands = j.value("mel_bands", c.mel_bands);
  c.conv_channels = j.value("conv_channels", c.conv_channels);
  c.conv_width = j.value("conv_width", c.conv_width);
  c.downsample = j.value("downsample", c.downsample);
  c.hidden = j.value("hidden", c.hidden);
  c.out_dim = j.value("out_dim", c.out_dim);
}

inline void to_json(nlohmann::json& j, const DecoderConfig& c) {
  j = {{"code_dim", c.code_dim},
       {"code_channels", c.code_channels},
       {"code_conv_width", c.code_conv_width},
       {"code_hidden", c.code_hidden},
       {"attention_dim", c.attention_dim},
       {"location_filters", c.location_filters},
       {"location_width", c.location_width},
       {"prenet_dim", c.prenet_dim},
       {"rnn1_width", c.rnn1_width},
       {"rnn2_width", c.rnn2_width},
       {"postnet_layers", c.postnet_layers},
       {"postnet_channels", c.postnet_channels},
       {"postnet_width", c.postnet_width},
       {"out_bins", c.out_bins},
       {"reduction", c.reduction},
       {"max_frames", c.max_frames},
       {"stop_threshold", c.stop_threshold},
       {"speaker_dim", c.speaker_dim}};
}
inline void from_json(const nlohmann::json& j, DecoderConfig& c) {
  c.code_dim = j.value("code_dim", c.code_dim);
  c.code_channels = j.value("code_channels", c.code_channels);
  c.code_conv_width = j.value("code_conv_width", c.code_conv_width);
  c.code_hidden = j.value("code_hidden", c.code_hidden);
  c.attention_dim = j.value("attention_dim", c.attention_dim);
  c.location_filters = j.value("location_filters", c.location_filters);
  c.location_width = j.value("location_width", c.location_width);
  c.prenet_dim = j.value("prenet_dim", c.prenet_dim);
  c.rnn1_width = j.value("rnn1_width", c.rnn1_width);
  c.rnn2_width = j.value("rnn2_width", c.rnn2_width);
  c.postnet_layers = j.value("postnet_layers", c.postnet_layers);
  c.postnet_channels = j.value("postnet_channels", c.postnet_channels);
  c.postnet_width = j.value("postnet_width", c.postnet_width);
  c.out_bins = j.value("out_bins", c.out_bins);
  c.reduction = j.value("reduction", c.reduction);
  c.max_frames = j.value("max_frames", c.max_frames);
  c.stop_threshold = j.value("stop_threshold", c.stop_threshold);
  c.speaker_dim = j.value("speaker_dim", c.speaker_dim);
}

inline void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = {{"encoder", c.encoder}, {"decoder", c.decoder}, {"stft", c.stft}};
}
inline void from_json(const nlohmann::json& j, ModelConfig& c) {
  if (j.contains("encoder")) c.encoder = j.at("encoder").get<EncoderConfig>();
  if (j.contains("decoder")) c.decoder = j.at("decoder").get<DecoderConfig>();
  if (j.contains("stft")) c.stft = j.at("stft").get<StftConfig>();
}

// Precomputed per-utterance features shared across training steps.
struct Features {
  std::string id;
  std::string speaker;
  std::optional<std::vector<std::string>> phonemes;
  bool paired = false;
  Tensor linear;  // T x F constant tensor (decoder target)
  Tensor mel;     // T x M constant tensor (encoder input)
};

inline Features extract_features(const Manifest& m, const Utterance& u, const StftConfig& cfg) {
  Features f;
  f.id = u.id;
  f.speaker = u.speaker;
  f.phonemes = u.phonemes;
  f.paired = u.paired;
  AudioBuffer audio = load_audio(m, u);
  Spectrogram lin = stft(audio, cfg);
  Spectrogram mel = mel_project(lin, cfg);
  f.linear = spectrogram_tensor(lin);
  f.mel = spectrogram_tensor(mel);
  return f;
}

class Model {
 public:
  Model(ModelConfig cfg, PhonemeInventory inventory, std::vector<std::string> speaker_ids,
        uint64_t seed)
      : cfg_(std::move(cfg)), inventory_(std::move(inventory)) {
    cfg_.validate();
    Rng rng(seed);
    encoder_.init(params_, cfg_.encoder, rng);
    codebook_ = params_.create("codebook", {inventory_.size(), cfg_.encoder.out_dim}, rng, 0.05);
    decoder_.init(params_, cfg_.decoder, rng);
    speakers_.init(params_, speaker_ids, cfg_.decoder.speaker_dim, rng);
  }

  const ModelConfig& config() const { return cfg_; }
  const PhonemeInventory& inventory() const { return inventory_; }
  ParamRegistry& params() { return params_; }
  const ParamRegistry& params() const { return params_; }
  Tensor codebook() const { return codebook_; }
  const PhoneticEncoder& encoder() const { return encoder_; }
  const SpeakerSynthesizer& decoder() const { return decoder_; }
  const SpeakerTable& speakers() const { return speakers_; }

  // Codeword rows resampled uniformly on the sphere of the given radius
  // (used once after the warm-up RMS measurement).
  void reinit_codebook(double radius, Rng& rng) {
    Tensor fresh = init_codebook(inventory_.size(), cfg_.encoder.out_dim, radius, rng);
    codebook_.value() = fresh.value();
  }

  std::vector<int> transcript_indices(const std::vector<std::string>& phonemes) const {
    std::vector<int> out;
    for (const auto& s : phonemes) {
      const int64_t idx = inventory_.index_of(s);
      if (idx < 0 || idx == inventory_.blank_index())
        throw std::invalid_argument("transcript: unknown symbol '" + s + "'");
      out.push_back(static_cast<int>(idx));
    }
    return out;
  }

  // ---- loss-term pipelines -------------------------------------------

  struct ReconTerm {
    Tensor spectral;    // differential spectral loss against the input
    Tensor stop_bce;    // stop-token loss of the teacher-forced pass
    Tensor commitment;  // defined only when requested
    SynthesisOutput synth;
  };

  // Unpaired reconstruction: encode -> cluster (straight-through when
  // enabled) -> segment -> teacher-forced resynthesis of the input.
  ReconTerm reconstruct_unpaired(const Features& f, bool st_enabled,
                                 bool with_commitment = false) const {
    ReconTerm term;
    Tensor h = encoder_.encode(f.mel);
    ClusterResult cluster = phonetic_clustering(h, codebook_, st_enabled);
    CodeSequence q = segment_for_training(h, codebook_, cluster.indices, st_enabled);
    Tensor spk = speakers_.embedding(f.speaker);
    term.synth = decoder_.synthesize_teacher_forced(q, spk, f.linear);
    term.spectral = differential_spectral_loss(term.synth.spectrogram, f.linear);
    term.stop_bce = stop_loss(term.synth);
    if (with_commitment) {
      Tensor picked = embedding_lookup(codebook_, cluster.indices);
      term.commitment = mse(picked, Tensor::from(h.shape(), h.value()));
    }
    return term;
  }

  struct TtsTerm {
    Tensor spectral;
    Tensor stop_bce;
    SynthesisOutput synth;
  };

  // Paired TTS: codes retrieved from the transcript, teacher-forced
  // against the paired audio, conditioned on the utterance's own speaker.
  TtsTerm tts_paired(const Features& f) const {
    if (!f.phonemes) throw std::invalid_argument("tts_paired: utterance " + f.id + " has no transcript");
    TtsTerm term;
    CodeSequence q = text_to_codes(*f.phonemes, inventory_, codebook_);
    if (q.size() == 0) throw std::invalid_argument("tts_paired: empty transcript for " + f.id);
    Tensor spk = speakers_.embedding(f.speaker);
    term.synth = decoder_.synthesize_teacher_forced(q, spk, f.linear);
    term.spectral = differential_spectral_loss(term.synth.spectrogram, f.linear);
    term.stop_bce = stop_loss(term.synth);
    return term;
  }

  // CTC on the paired posteriorgram (Eq. 2 distances + blank-augmented
  // alignment marginalisation).
  Tensor ctc_paired(const Features& f) const {
    if (!f.phonemes) throw std::invalid_argument("ctc_paired: utterance " + f.id + " has no transcript");
    Tensor h = encoder_.encode(f.mel);
    Tensor p = posterior(h, codebook_);
    return ctc_loss(p, transcript_indices(*f.phonemes), inventory_.blank_index());
  }

  // Recognition path: greedy decode of the posteriorgram.
  std::vector<int> recognize(const Tensor& mel) const {
    Tensor h = encoder_.encode(mel);
    return greedy_decode(posterior(h, codebook_), inventory_.blank_index());
  }

  SynthesisOutput synth_from_text(const std::vector<std::string>& phonemes,
                                  const std::string& speaker) const {
    if (phonemes.empty()) throw std::invalid_argument("synth_from_text: empty prompt");
    CodeSequence q = text_to_codes(phonemes, inventory_, codebook_);
    return decoder_.synthesize_free(q, speakers_.embedding(speaker));
  }

  // Clamp a predicted spectrogram to valid non-negative magnitudes.
  Spectrogram to_spectrogram(const SynthesisOutput& out) const {
    Spectrogram s;
    s.frames = out.spectrogram.shape()[0];
    s.bins = out.spectrogram.shape()[1];
    s.domain = SpecDomain::linear;
    s.config = cfg_.stft;
    s.data = out.spectrogram.value();
    for (double& v : s.data) v = std::max(v, 0.0);
    return s;
  }

 private:
  static Tensor stop_loss(const SynthesisOutput& synth) {
    std::vector<double> targets(static_cast<size_t>(synth.steps), 0.0);
    targets.back() = 1.0;
    return bce_with_logits(synth.stop_logits, targets);
  }

  ModelConfig cfg_;
  PhonemeInventory inventory_;
  ParamRegistry params_;
  PhoneticEncoder encoder_;
  Tensor codebook_;
  SpeakerSynthesizer decoder_;
  SpeakerTable speakers_;
};

}  // namespace vqtts
