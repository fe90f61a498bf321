#pragma once

// Deterministic synthetic multi-speaker corpus plus manifest ingestion.
//
// Each phoneme is a fixed spectral template of three sinusoids whose
// frequency ratios and amplitudes identify it independently of absolute
// pitch; each speaker applies a global frequency scale and an amplitude
// tilt. That keeps the phonetic factor speaker-invariant while giving the
// decoder a real speaker factor to model.

#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "vqtts/dsp.hpp"
#include "vqtts/quantizer.hpp"
#include "vqtts/rng.hpp"
#include "vqtts/wav.hpp"

namespace vqtts {

struct Utterance {
  std::string id;
  std::string speaker;
  std::string audio;  // path relative to the manifest directory
  std::optional<std::vector<std::string>> phonemes;
  bool paired = false;
};

struct Manifest {
  std::vector<Utterance> utterances;
  PhonemeInventory inventory;
  std::string dir;  // directory the audio paths are relative to

  std::vector<std::string> speakers() const {
    std::vector<std::string> out;
    for (const auto& u : utterances) {
      bool seen = false;
      for (const auto& s : out) seen = seen || s == u.speaker;
      if (!seen) out.push_back(u.speaker);
    }
    return out;
  }
};

struct CorpusConfig {
  uint64_t seed = 1;
  int64_t speakers = 8;
  int64_t phonemes = 8;
  int64_t utterances = 400;
  int64_t min_phonemes = 3, max_phonemes = 8;      // per utterance
  int64_t min_frames = 8, max_frames = 16;         // per phoneme
  double paired_fraction = 0.1;
  std::string paired_policy = "multi";             // multi | single
  int64_t test_speakers = 2;                       // reserved, never paired
  double speaker_scale_lo = 0.8, speaker_scale_hi = 1.25;
  double amplitude = 0.22;
  StftConfig stft;

  void validate() const {
    if (phonemes < 2) throw std::invalid_argument("CorpusConfig: inventory size must be >= 2");
    if (speakers < 1) throw std::invalid_argument("CorpusConfig: speaker count must be >= 1");
    if (!(paired_fraction > 0.0 && paired_fraction <= 1.0))
      throw std::invalid_argument("CorpusConfig: paired fraction must be in (0, 1]");
    if (paired_policy != "multi" && paired_policy != "single")
      throw std::invalid_argument("CorpusConfig: unknown paired policy '" + paired_policy + "'");
    if (min_phonemes < 1 || max_phonemes < min_phonemes || min_frames < 1 ||
        max_frames < min_frames)
      throw std::invalid_argument("CorpusConfig: bad length ranges");
    if (paired_policy == "multi" && test_speakers >= speakers)
      throw std::invalid_argument("CorpusConfig: test speakers must leave at least one paired speaker");
  }
};

inline void to_json(nlohmann::json& j, const StftConfig& c) {
  j = {{"window_length", c.window_length}, {"hop_length", c.hop_length},
       {"fft_size", c.fft_size},           {"window", c.window},
       {"mel_bands", c.mel_bands},         {"mel_fmin", c.mel_fmin},
       {"mel_fmax", c.mel_fmax},           {"sample_rate", c.sample_rate}};
}
inline void from_json(const nlohmann::json& j, StftConfig& c) {
  c.window_length = j.value("window_length", c.window_length);
  c.hop_length = j.value("hop_length", c.hop_length);
  c.fft_size = j.value("fft_size", c.fft_size);
  c.window = j.value("window", c.window);
  c.mel_bands = j.value("mel_bands", c.mel_bands);
  c.mel_fmin = j.value("mel_fmin", c.mel_fmin);
  c.mel_fmax = j.value("mel_fmax", c.mel_fmax);
  c.sample_rate = j.value("sample_rate", c.sample_rate);
}

inline void to_json(nlohmann::json& j, const CorpusConfig& c) {
  j = {{"seed", c.seed},
       {"speakers", c.speakers},
       {"phonemes", c.phonemes},
       {"utterances", c.utterances},
       {"min_phonemes", c.min_phonemes},
       {"max_phonemes", c.max_phonemes},
       {"min_frames", c.min_frames},
       {"max_frames", c.max_frames},
       {"paired_fraction", c.paired_fraction},
       {"paired_policy", c.paired_policy},
       {"test_speakers", c.test_speakers},
       {"speaker_scale_lo", c.speaker_scale_lo},
       {"speaker_scale_hi", c.speaker_scale_hi},
       {"amplitude", c.amplitude},
       {"stft", c.stft}};
}
inline void from_json(const nlohmann::json& j, CorpusConfig& c) {
  c.seed = j.value("seed", c.seed);
  c.speakers = j.value("speakers", c.speakers);
  c.phonemes = j.value("phonemes", c.phonemes);
  c.utterances = j.value("utterances", c.utterances);
  c.min_phonemes = j.value("min_phonemes", c.min_phonemes);
  c.max_phonemes = j.value("max_phonemes", c.max_phonemes);
  c.min_frames = j.value("min_frames", c.min_frames);
  c.max_frames = j.value("max_frames", c.max_frames);
  c.paired_fraction = j.value("paired_fraction", c.paired_fraction);
  c.paired_policy = j.value("paired_policy", c.paired_policy);
  c.test_speakers = j.value("test_speakers", c.test_speakers);
  c.speaker_scale_lo = j.value("speaker_scale_lo", c.speaker_scale_lo);
  c.speaker_scale_hi = j.value("speaker_scale_hi", c.speaker_scale_hi);
  c.amplitude = j.value("amplitude", c.amplitude);
  if (j.contains("stft")) c.stft = j.at("stft").get<StftConfig>();
}

// Three-sinusoid phoneme template. Frequency ratios and component
// amplitudes vary per phoneme so templates stay distinguishable under the
// per-speaker frequency scaling.
struct PhonemeTemplate {
  double f1, f2, f3;
  double a1, a2, a3;
};

inline PhonemeTemplate phoneme_template(int64_t p, int64_t count) {
  // Identity is carried by scale-invariant cues: two large amplitude
  // contrasts and the f2/f1 ratio form a binary code per phoneme, so a
  // per-speaker frequency scale or amplitude tilt cannot turn one
  // phoneme into another. f1 adds mild per-phoneme variety only.
  PhonemeTemplate t;
  const int64_t b0 = p & 1, b1 = (p >> 1) & 1, b2 = (p >> 2) & 1;
  const double extra = static_cast<double>(p / 8) / std::max<double>(1.0, static_cast<double>(count) / 8.0);
  t.f1 = 300.0 + 18.0 * static_cast<double>(p);
  const double r2 = b2 ? 2.65 : 1.70;
  const double r3 = 4.1 + 0.6 * extra;
  t.f2 = t.f1 * r2;
  t.f3 = t.f1 * r3;
  t.a1 = 1.0;
  t.a2 = b0 ? 2.3 : 0.18;
  t.a3 = b1 ? 2.0 : 0.15;
  const double total = t.a1 + t.a2 + t.a3;
  t.a1 /= total;
  t.a2 /= total;
  t.a3 /= total;
  return t;
}

struct SpeakerTransform {
  double scale;  // multiplies all template frequencies
  double tilt;   // linear amplitude tilt over the three components
};

// Deterministic per-utterance audio: concatenated phoneme segments with
// short edge tapers, padded so the frame count equals the drawn durations.
inline AudioBuffer render_utterance(const std::vector<int>& phoneme_ids,
                                    const std::vector<int64_t>& durations_frames,
                                    const SpeakerTransform& spk, const CorpusConfig& cfg) {
  const int64_t hop = cfg.stft.hop_length;
  const int sr = cfg.stft.sample_rate;
  AudioBuffer audio;
  audio.sample_rate = sr;
  int64_t total = 0;
  for (int64_t d : durations_frames) total += d * hop;
  audio.samples.assign(static_cast<size_t>(total + cfg.stft.window_length - hop), 0.0);

  const int64_t taper = std::min<int64_t>(96, hop / 2);
  int64_t offset = 0;
  for (size_t i = 0; i < phoneme_ids.size(); ++i) {
    const PhonemeTemplate t = phoneme_template(phoneme_ids[i], cfg.phonemes);
    const int64_t n = durations_frames[i] * hop;
    const double amps[3] = {t.a1 * (1.0 - spk.tilt), t.a2, t.a3 * (1.0 + spk.tilt)};
    const double freqs[3] = {t.f1 * spk.scale, t.f2 * spk.scale, t.f3 * spk.scale};
    for (int64_t j = 0; j < n; ++j) {
      double v = 0.0;
      for (int c = 0; c < 3; ++c)
        v += amps[c] * std::sin(2.0 * M_PI * freqs[c] * static_cast<double>(j) / sr);
      double env = 1.0;
      if (j < taper) env = 0.5 - 0.5 * std::cos(M_PI * static_cast<double>(j) / taper);
      if (n - 1 - j < taper) env = std::min(env, 0.5 - 0.5 * std::cos(M_PI * static_cast<double>(n - 1 - j) / taper));
      audio.samples[static_cast<size_t>(offset + j)] = cfg.amplitude * env * v;
    }
    offset += n;
  }
  return audio;
}

namespace detail {

inline std::string zero_pad(int64_t v, int width) {
  std::string s = std::to_string(v);
  while (static_cast<int>(s.size()) < width) s.insert(s.begin(), '0');
  return s;
}

}  // namespace detail

inline std::vector<std::string> make_phoneme_symbols(int64_t count) {
  std::vector<std::string> out;
  for (int64_t p = 0; p < count; ++p) out.push_back("p" + detail::zero_pad(p, 2));
  return out;
}

inline void save_manifest(const Manifest& m, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("save_manifest: cannot write " + path);
  for (const auto& u : m.utterances) {
    nlohmann::json j = {{"id", u.id},
                        {"speaker", u.speaker},
                        {"audio", u.audio},
                        {"phonemes", u.phonemes ? nlohmann::json(*u.phonemes) : nlohmann::json()},
                        {"paired", u.paired}};
    os << j.dump() << "\n";
  }
}

// Generates WAV files, inventory.txt and manifest.jsonl under out_dir.
// Fully reproducible from the config seed.
inline Manifest generate_corpus(const CorpusConfig& cfg, const std::string& out_dir) {
  cfg.validate();
  cfg.stft.validate();
  std::filesystem::create_directories(out_dir);
  std::filesystem::create_directories(out_dir + "/wav");

  Rng rng(cfg.seed);
  Manifest m;
  m.dir = out_dir;
  m.inventory = PhonemeInventory::from_phonemes(make_phoneme_symbols(cfg.phonemes));

  std::vector<SpeakerTransform> transforms(static_cast<size_t>(cfg.speakers));
  for (auto& t : transforms) {
    t.scale = rng.uniform(cfg.speaker_scale_lo, cfg.speaker_scale_hi);
    t.tilt = rng.uniform(-0.3, 0.3);
  }

  for (int64_t i = 0; i < cfg.utterances; ++i) {
    Utterance u;
    u.id = "utt" + detail::zero_pad(i, 4);
    const int64_t spk = rng.uniform_int(0, cfg.speakers - 1);
    u.speaker = "spk" + detail::zero_pad(spk, 2);
    const int64_t len = rng.uniform_int(cfg.min_phonemes, cfg.max_phonemes);
    std::vector<int> ids(static_cast<size_t>(len));
    std::vector<int64_t> durations(static_cast<size_t>(len));
    std::vector<std::string> symbols;
    for (int64_t k = 0; k < len; ++k) {
      ids[static_cast<size_t>(k)] = static_cast<int>(rng.uniform_int(0, cfg.phonemes - 1));
      durations[static_cast<size_t>(k)] = rng.uniform_int(cfg.min_frames, cfg.max_frames);
      symbols.push_back(m.inventory.symbol(ids[static_cast<size_t>(k)]));
    }
    u.phonemes = symbols;
    u.audio = "wav/" + u.id + ".wav";
    AudioBuffer audio = render_utterance(ids, durations, transforms[static_cast<size_t>(spk)], cfg);
    write_wav(audio, out_dir + "/" + u.audio);
    m.utterances.push_back(std::move(u));
  }

  // Paired flags: drawn only from speakers eligible under the policy, so
  // the reserved test speakers never appear in paired data.
  const int64_t eligible_max =
      cfg.paired_policy == "single" ? 0 : cfg.speakers - cfg.test_speakers - 1;
  std::vector<int64_t> candidates;
  for (int64_t i = 0; i < cfg.utterances; ++i) {
    const int64_t spk = std::stoll(m.utterances[static_cast<size_t>(i)].speaker.substr(3));
    if (spk <= eligible_max) candidates.push_back(i);
  }
  const int64_t paired_count =
      std::max<int64_t>(1, std::llround(cfg.paired_fraction * static_cast<double>(cfg.utterances)));
  if (static_cast<int64_t>(candidates.size()) < paired_count)
    throw std::runtime_error("generate_corpus: only " + std::to_string(candidates.size()) +
                             " utterances from paired-eligible speakers, need " +
                             std::to_string(paired_count));
  rng.shuffle(candidates);
  candidates.resize(static_cast<size_t>(paired_count));
  for (int64_t i : candidates) m.utterances[static_cast<size_t>(i)].paired = true;

  m.inventory.save(out_dir + "/inventory.txt");
  save_manifest(m, out_dir + "/manifest.jsonl");
  {
    std::ofstream os(out_dir + "/corpus_config.json");
    os << nlohmann::json(cfg).dump(2) << "\n";
  }
  return m;
}

// Reads manifest.jsonl (inventory.txt must sit next to it) and validates
// ids, paired transcripts and inventory membership.
inline Manifest load_manifest(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("load_manifest: cannot open " + path);
  Manifest m;
  m.dir = std::filesystem::path(path).parent_path().string();
  if (m.dir.empty()) m.dir = ".";
  m.inventory = PhonemeInventory::load(m.dir + "/inventory.txt");

  std::string line;
  size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const std::exception& e) {
      throw std::runtime_error("load_manifest: line " + std::to_string(line_no) + ": " + e.what());
    }
    Utterance u;
    u.id = j.at("id").get<std::string>();
    u.speaker = j.at("speaker").get<std::string>();
    u.audio = j.at("audio").get<std::string>();
    u.paired = j.at("paired").get<bool>();
    if (!j.at("phonemes").is_null()) u.phonemes = j.at("phonemes").get<std::vector<std::string>>();

    if (u.speaker.empty()) throw std::runtime_error("load_manifest: empty speaker for id " + u.id);
    if (u.paired && !u.phonemes)
      throw std::runtime_error("load_manifest: paired utterance " + u.id + " has no phonemes");
    if (u.phonemes)
      for (const auto& s : *u.phonemes)
        if (m.inventory.index_of(s) < 0 || s == PhonemeInventory::kBlank)
          throw std::runtime_error("load_manifest: utterance " + u.id +
                                   " uses unknown inventory symbol '" + s + "'");
    for (const auto& prev : m.utterances)
      if (prev.id == u.id) throw std::runtime_error("load_manifest: duplicate id " + u.id);
    m.utterances.push_back(std::move(u));
  }
  return m;
}

inline AudioBuffer load_audio(const Manifest& m, const Utterance& u) {
  return read_wav(m.dir + "/" + u.audio);
}

struct SplitPolicy {
  double test_fraction = 0.5;  // of the test speakers' utterances
  double dev_fraction = 0.05;  // of the remaining pool
};

struct Splits {
  Manifest train, dev, test;
};

// Test utterances come only from speakers that never appear in paired
// data; their remaining utterances stay in train as unpaired so the
// decoder still learns those voices.
inline Splits split(const Manifest& m, const SplitPolicy& policy, uint64_t seed) {
  std::vector<std::string> paired_speakers;
  for (const auto& u : m.utterances)
    if (u.paired) {
      bool seen = false;
      for (const auto& s : paired_speakers) seen = seen || s == u.speaker;
      if (!seen) paired_speakers.push_back(u.speaker);
    }
  std::vector<std::string> test_speakers;
  for (const auto& s : m.speakers()) {
    bool in_paired = false;
    for (const auto& p : paired_speakers) in_paired = in_paired || p == s;
    if (!in_paired) test_speakers.push_back(s);
  }
  if (test_speakers.empty())
    throw std::runtime_error(
        "split: every speaker appears in paired data; no valid test speakers exist");

  auto is_test_speaker = [&](const std::string& s) {
    for (const auto& t : test_speakers)
      if (t == s) return true;
    return false;
  };

  Rng rng(seed);
  std::vector<int64_t> test_pool;
  for (size_t i = 0; i < m.utterances.size(); ++i)
    if (is_test_speaker(m.utterances[i].speaker)) test_pool.push_back(static_cast<int64_t>(i));
  rng.shuffle(test_pool);
  const size_t n_test = static_cast<size_t>(policy.test_fraction * static_cast<double>(test_pool.size()));
  std::vector<bool> in_test(m.utterances.size(), false);
  for (size_t i = 0; i < n_test; ++i) in_test[static_cast<size_t>(test_pool[i])] = true;

  std::vector<int64_t> rest;
  for (size_t i = 0; i < m.utterances.size(); ++i)
    if (!in_test[i]) rest.push_back(static_cast<int64_t>(i));
  rng.shuffle(rest);
  const size_t n_dev = static_cast<size_t>(policy.dev_fraction * static_cast<double>(rest.size()));
  std::vector<bool> in_dev(m.utterances.size(), false);
  for (size_t i = 0; i < n_dev; ++i) {
    // Dev mirrors train usage; never steal paired utterances.
    if (!m.utterances[static_cast<size_t>(rest[i])].paired) in_dev[static_cast<size_t>(rest[i])] = true;
  }

  Splits out;
  out.train.inventory = out.dev.inventory = out.test.inventory = m.inventory;
  out.train.dir = out.dev.dir = out.test.dir = m.dir;
  for (size_t i = 0; i < m.utterances.size(); ++i) {
    if (in_test[i])
      out.test.utterances.push_back(m.utterances[i]);
    else if (in_dev[i])
      out.dev.utterances.push_back(m.utterances[i]);
    else
      out.train.utterances.push_back(m.utterances[i]);
  }
  return out;
}

struct NoisePolicy {
  double fraction = 0.44;                    // of unpaired utterances
  double snr_lo = 10.0, snr_hi = 30.0;       // dB, drawn per utterance
  double band_lo = 200.0, band_hi = 6000.0;  // synthetic noise band
};

struct NoiseRecord {
  std::string id;
  double snr_db;
  std::string clean_audio;  // original path kept for auditing
};

struct NoiseResult {
  Manifest manifest;
  std::vector<NoiseRecord> records;
};

// Replaces the configured fraction of unpaired utterances with noisy
// mixes at per-utterance SNR drawn uniformly from the range. Paired
// utterances are never touched.
inline NoiseResult apply_noise_policy(const Manifest& m, const NoisePolicy& policy, uint64_t seed) {
  if (policy.fraction < 0.0 || policy.fraction > 1.0)
    throw std::invalid_argument("apply_noise_policy: fraction must lie in [0, 1]");
  Rng rng(seed);
  std::vector<int64_t> unpaired;
  for (size_t i = 0; i < m.utterances.size(); ++i)
    if (!m.utterances[i].paired) unpaired.push_back(static_cast<int64_t>(i));
  rng.shuffle(unpaired);
  const size_t n = static_cast<size_t>(std::llround(policy.fraction * static_cast<double>(unpaired.size())));

  NoiseResult out;
  out.manifest = m;
  std::vector<int64_t> chosen(unpaired.begin(), unpaired.begin() + static_cast<int64_t>(n));
  std::sort(chosen.begin(), chosen.end());  // apply in manifest order
  for (int64_t idx : chosen) {
    Utterance& u = out.manifest.utterances[static_cast<size_t>(idx)];
    const double snr = rng.uniform(policy.snr_lo, policy.snr_hi);
    AudioBuffer clean = load_audio(m, u);
    Rng noise_rng(rng.next_u64());
    AudioBuffer noise = make_band_noise(noise_rng, clean.samples.size(), clean.sample_rate,
                                        policy.band_lo, policy.band_hi);
    AudioBuffer mixed = mix_noise(clean, noise, snr);
    const std::string noisy_path = "wav/" + u.id + "_noisy.wav";
    write_wav(mixed, m.dir + "/" + noisy_path);
    out.records.push_back({u.id, snr, u.audio});
    u.audio = noisy_path;
  }
  return out;
}

}  // namespace vqtts
