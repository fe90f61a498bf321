#pragma once

// Objective evaluation: phoneme error rate, encoder-round-trip
// intelligibility, and matched-pair experiment suites. Evaluation is
// read-only on the model and parallelises across utterances with results
// assembled in deterministic order.

#include <atomic>
#include <map>
#include <mutex>
#include <thread>

#include "vqtts/model.hpp"
#include "vqtts/trainer.hpp"

namespace vqtts {

// Levenshtein edit distance over reference length. Not symmetric; the
// reference must be non-empty.
inline double per(const std::vector<int>& reference, const std::vector<int>& hypothesis) {
  if (reference.empty()) throw std::invalid_argument("per: empty reference");
  const size_t n = reference.size(), m = hypothesis.size();
  std::vector<size_t> prev(m + 1), cur(m + 1);
  for (size_t j = 0; j <= m; ++j) prev[j] = j;
  for (size_t i = 1; i <= n; ++i) {
    cur[0] = i;
    for (size_t j = 1; j <= m; ++j) {
      const size_t sub = prev[j - 1] + (reference[i - 1] == hypothesis[j - 1] ? 0 : 1);
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
    }
    std::swap(prev, cur);
  }
  return static_cast<double>(prev[m]) / static_cast<double>(n);
}

inline double per_symbols(const std::vector<std::string>& reference,
                          const std::vector<std::string>& hypothesis,
                          const PhonemeInventory& inventory) {
  auto to_idx = [&](const std::vector<std::string>& seq) {
    std::vector<int> out;
    for (const auto& s : seq) out.push_back(static_cast<int>(inventory.index_of(s)));
    return out;
  };
  return per(to_idx(reference), to_idx(hypothesis));
}

struct MetricReport {
  std::string metric;
  double value = 0.0;
  std::vector<std::pair<std::string, double>> per_utterance;
  std::map<std::string, double> per_speaker;
  nlohmann::json config_echo;
  uint64_t seed = 0;

  nlohmann::json to_json() const {
    nlohmann::json breakdown = nlohmann::json::array();
    for (const auto& [id, v] : per_utterance) breakdown.push_back({{"id", id}, {"value", v}});
    return {{"metric", metric},         {"value", value},
            {"per_utterance", breakdown}, {"per_speaker", per_speaker},
            {"config", config_echo},    {"seed", seed}};
  }

  void save(const std::string& path) const {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("MetricReport: cannot write " + path);
    os << to_json().dump(2) << "\n";
  }
};

namespace detail {

inline void parallel_for(size_t n, int threads, const std::function<void(size_t)>& fn) {
  threads = std::min<int>(threads, static_cast<int>(n));
  if (threads <= 1) {
    for (size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  auto worker = [&] {
    for (;;) {
      const size_t i = next.fetch_add(1);
      if (i >= n) break;
      try {
        fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!error) error = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  for (int t = 0; t < threads - 1; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

}  // namespace detail

// PER of greedy-decoded posteriorgrams against transcripts, averaged per
// utterance over the split.
inline MetricReport eval_recognition(const Model& model, const Manifest& split, uint64_t seed,
                                     int threads = 2) {
  std::vector<const Utterance*> scored;
  for (const auto& u : split.utterances) {
    if (!u.phonemes)
      throw std::invalid_argument("eval_recognition: utterance " + u.id + " has no transcript");
    scored.push_back(&u);
  }
  MetricReport report;
  report.metric = "recognition_per";
  report.seed = seed;
  report.config_echo = {{"split_size", scored.size()}, {"model", model.config()}};

  std::vector<double> values(scored.size());
  detail::parallel_for(scored.size(), threads, [&](size_t i) {
    const Utterance& u = *scored[i];
    Features f = extract_features(split, u, model.config().stft);
    std::vector<int> hyp = model.recognize(f.mel);
    values[i] = per(model.transcript_indices(*u.phonemes), hyp);
  });

  double sum = 0.0;
  for (size_t i = 0; i < scored.size(); ++i) {
    report.per_utterance.push_back({scored[i]->id, values[i]});
    sum += values[i];
  }
  report.value = scored.empty() ? 0.0 : sum / static_cast<double>(scored.size());
  return report;
}

struct Prompt {
  std::vector<std::string> phonemes;
  std::string speaker;
};

inline std::vector<Prompt> load_prompts(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("load_prompts: cannot open " + path);
  std::vector<Prompt> prompts;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    nlohmann::json j = nlohmann::json::parse(line);
    prompts.push_back({j.at("phonemes").get<std::vector<std::string>>(),
                       j.at("speaker").get<std::string>()});
  }
  return prompts;
}

inline void save_prompts(const std::vector<Prompt>& prompts, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("save_prompts: cannot write " + path);
  for (const auto& p : prompts)
    os << nlohmann::json({{"phonemes", p.phonemes}, {"speaker", p.speaker}}).dump() << "\n";
}

// Round-trip intelligibility: text -> codes -> free-running synthesis ->
// Griffin-Lim -> STFT/mel -> encoder -> greedy decode -> PER against the
// prompt. Reported overall and per speaker.
inline MetricReport eval_roundtrip(const Model& model, const std::vector<Prompt>& prompts,
                                   uint64_t seed, int64_t griffin_lim_iterations = 60,
                                   int threads = 2) {
  for (const auto& p : prompts)
    if (p.phonemes.empty()) throw std::invalid_argument("eval_roundtrip: zero-length prompt");

  MetricReport report;
  report.metric = "roundtrip_per";
  report.seed = seed;
  report.config_echo = {{"prompts", prompts.size()},
                        {"griffin_lim_iterations", griffin_lim_iterations},
                        {"model", model.config()}};

  const StftConfig& stft_cfg = model.config().stft;
  std::vector<double> values(prompts.size());
  detail::parallel_for(prompts.size(), threads, [&](size_t i) {
    const Prompt& p = prompts[i];
    SynthesisOutput synth = model.synth_from_text(p.phonemes, p.speaker);
    Spectrogram spec = model.to_spectrogram(synth);
    GriffinLimResult gl = griffin_lim(spec, griffin_lim_iterations);
    Spectrogram re = stft(gl.audio, stft_cfg);
    Spectrogram mel = mel_project(re, stft_cfg);
    std::vector<int> hyp = model.recognize(spectrogram_tensor(mel));
    values[i] = per(model.transcript_indices(p.phonemes), hyp);
  });

  double sum = 0.0;
  std::map<std::string, std::pair<double, int>> by_speaker;
  for (size_t i = 0; i < prompts.size(); ++i) {
    report.per_utterance.push_back({prompts[i].speaker + "#" + std::to_string(i), values[i]});
    by_speaker[prompts[i].speaker].first += values[i];
    by_speaker[prompts[i].speaker].second += 1;
    sum += values[i];
  }
  for (const auto& [spk, acc] : by_speaker)
    report.per_speaker[spk] = acc.first / static_cast<double>(acc.second);
  report.value = prompts.empty() ? 0.0 : sum / static_cast<double>(prompts.size());
  return report;
}

// Prompts drawn from a (test) split's transcripts and speakers.
inline std::vector<Prompt> prompts_from_split(const Manifest& split, size_t max_prompts) {
  std::vector<Prompt> prompts;
  for (const auto& u : split.utterances) {
    if (!u.phonemes) continue;
    prompts.push_back({*u.phonemes, u.speaker});
    if (prompts.size() >= max_prompts) break;
  }
  return prompts;
}

// ---------------------------------------------------------------------------
// matched-pair experiment suites

enum class Suite { baseline, multi_paired, single_paired, noise, ablation };

inline Suite suite_from_string(const std::string& s) {
  if (s == "baseline") return Suite::baseline;
  if (s == "multi_paired") return Suite::multi_paired;
  if (s == "single_paired") return Suite::single_paired;
  if (s == "noise") return Suite::noise;
  if (s == "ablation") return Suite::ablation;
  throw std::invalid_argument("unknown experiment suite '" + s + "'");
}

inline std::string suite_name(Suite s) {
  switch (s) {
    case Suite::baseline: return "baseline";
    case Suite::multi_paired: return "multi_paired";
    case Suite::single_paired: return "single_paired";
    case Suite::noise: return "noise";
    case Suite::ablation: return "ablation";
  }
  return "?";
}

struct ExperimentConfig {
  CorpusConfig corpus;
  TrainConfig train;
  std::string work_dir = "experiment";
  uint64_t seed = 1;
  size_t max_prompts = 24;
  int64_t griffin_lim_iterations = 60;
};

struct ExperimentArm {
  std::string name;
  double roundtrip_per = 0.0;
  double recognition_per = 0.0;
  nlohmann::json config_echo;
};

struct ExperimentReport {
  std::string suite;
  ExperimentArm treatment, control;  // ordering claim: treatment <= control on round-trip PER
  bool ordering_holds = false;

  nlohmann::json to_json() const {
    auto arm = [](const ExperimentArm& a) {
      return nlohmann::json{{"name", a.name},
                            {"roundtrip_per", a.roundtrip_per},
                            {"recognition_per", a.recognition_per},
                            {"config", a.config_echo}};
    };
    return {{"suite", suite},
            {"treatment", arm(treatment)},
            {"control", arm(control)},
            {"ordering_holds", ordering_holds}};
  }
};

namespace detail {

inline ExperimentArm run_arm(const std::string& name, const TrainConfig& cfg,
                             const Manifest& train_split, const Manifest& test_split,
                             const std::vector<Prompt>& prompts, const std::string& out_dir,
                             uint64_t seed, int64_t gl_iters) {
  Trainer trainer(cfg, train_split);
  trainer.train(out_dir);
  ExperimentArm arm;
  arm.name = name;
  arm.config_echo = cfg;
  arm.recognition_per = eval_recognition(trainer.model(), test_split, seed, cfg.threads).value;
  arm.roundtrip_per =
      eval_roundtrip(trainer.model(), prompts, seed, gl_iters, cfg.threads).value;
  return arm;
}

}  // namespace detail

// Runs the matched pair of training configurations for a suite: both arms
// share the seed and differ only in the named factor.
inline ExperimentReport run_experiment(Suite suite, const ExperimentConfig& cfg) {
  std::filesystem::create_directories(cfg.work_dir);
  ExperimentReport report;
  report.suite = suite_name(suite);

  CorpusConfig corpus_cfg = cfg.corpus;
  if (suite == Suite::single_paired) corpus_cfg.paired_policy = "single";
  Manifest corpus = generate_corpus(corpus_cfg, cfg.work_dir + "/corpus");
  Splits splits = split(corpus, SplitPolicy{}, cfg.seed);
  std::vector<Prompt> prompts = prompts_from_split(splits.test, cfg.max_prompts);

  TrainConfig base = cfg.train;
  base.seed = cfg.seed;

  switch (suite) {
    case Suite::baseline: {
      // Supervision amount: a high-fraction fully supervised topline
      // against the low-fraction paired-only bottom line.
      CorpusConfig top_cfg = corpus_cfg;
      top_cfg.paired_fraction = 0.65;
      Manifest top_corpus = generate_corpus(top_cfg, cfg.work_dir + "/corpus_top");
      Splits top_splits = split(top_corpus, SplitPolicy{}, cfg.seed);
      TrainConfig sup = base;
      sup.unpaired_batch = 0;
      report.treatment = detail::run_arm("supervised_topline", sup, top_splits.train,
                                         top_splits.test, prompts_from_split(top_splits.test, cfg.max_prompts),
                                         cfg.work_dir + "/topline", cfg.seed,
                                         cfg.griffin_lim_iterations);
      report.control = detail::run_arm("supervised_bottomline", sup, splits.train, splits.test,
                                       prompts, cfg.work_dir + "/bottomline", cfg.seed,
                                       cfg.griffin_lim_iterations);
      break;
    }
    case Suite::multi_paired:
    case Suite::single_paired: {
      TrainConfig semi = base;
      TrainConfig paired_only = base;
      paired_only.unpaired_batch = 0;
      report.treatment =
          detail::run_arm("semi_supervised", semi, splits.train, splits.test, prompts,
                          cfg.work_dir + "/semi", cfg.seed, cfg.griffin_lim_iterations);
      report.control =
          detail::run_arm("paired_only", paired_only, splits.train, splits.test, prompts,
                          cfg.work_dir + "/paired_only", cfg.seed, cfg.griffin_lim_iterations);
      break;
    }
    case Suite::ablation: {
      TrainConfig on = base;
      TrainConfig off = base;
      off.st_enabled = false;
      report.treatment = detail::run_arm("st_enabled", on, splits.train, splits.test, prompts,
                                         cfg.work_dir + "/st_on", cfg.seed,
                                         cfg.griffin_lim_iterations);
      report.control = detail::run_arm("speech_chain", off, splits.train, splits.test, prompts,
                                       cfg.work_dir + "/st_off", cfg.seed,
                                       cfg.griffin_lim_iterations);
      break;
    }
    case Suite::noise: {
      NoisePolicy policy;
      NoiseResult noised = apply_noise_policy(splits.train, policy, cfg.seed);
      // Control: the clean part only (the corrupted fraction dropped).
      Manifest clean_half = splits.train;
      clean_half.utterances.clear();
      for (const auto& u : splits.train.utterances) {
        bool was_noised = false;
        for (const auto& rec : noised.records) was_noised = was_noised || rec.id == u.id;
        if (!was_noised) clean_half.utterances.push_back(u);
      }
      report.treatment =
          detail::run_arm("clean_plus_noisy", base, noised.manifest, splits.test, prompts,
                          cfg.work_dir + "/clean_plus_noisy", cfg.seed,
                          cfg.griffin_lim_iterations);
      report.control =
          detail::run_arm("clean_half_only", base, clean_half, splits.test, prompts,
                          cfg.work_dir + "/clean_half", cfg.seed, cfg.griffin_lim_iterations);
      break;
    }
  }

  report.ordering_holds = report.treatment.roundtrip_per <= report.control.roundtrip_per;
  std::ofstream os(cfg.work_dir + "/report.json");
  os << report.to_json().dump(2) << "\n";
  return report;
}

}  // namespace vqtts
