// Acceptance suite. Each criterion runs standalone (argv[1] = 1..9) and
// prints one [PASS]/[FAIL] line; the exit code is the number of failing
// criteria. `all` runs everything.

#include <chrono>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "vqtts/eval.hpp"
#include "vqtts/gradcheck_suite.hpp"

using namespace vqtts;
namespace fs = std::filesystem;

namespace {

struct Checker {
  bool ok = true;
  std::ostringstream detail;

  void expect(bool cond, const std::string& what) {
    if (!cond) {
      ok = false;
      detail << (detail.tellp() > 0 ? "; " : "") << what;
    }
  }
  std::string suffix() const { return ok ? "" : " -- " + detail.str(); }
};

fs::path fresh_dir(const std::string& name) {
  fs::path dir = fs::temp_directory_path() / "vqtts_acceptance" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
}

// Default toy corpus: 8 speakers, 8 phonemes, 400 utterances, 10% paired.
CorpusConfig default_corpus(uint64_t seed, const std::string& policy = "multi") {
  CorpusConfig cfg;
  cfg.seed = seed;
  cfg.paired_policy = policy;
  return cfg;
}

// Training configuration for the toy-reproduction runs; the step count is
// calibrated to the corpus scale, the thresholds come from the criteria.
TrainConfig toy_train(uint64_t seed) {
  TrainConfig cfg;
  cfg.seed = seed;
  cfg.steps = 1200;
  cfg.checkpoint_interval = 0;
  return cfg;
}

struct ToyRun {
  std::unique_ptr<Trainer> trainer;
  double recognition_per = 0.0;
  double roundtrip_per = 0.0;
};

ToyRun run_toy(const TrainConfig& cfg, const Manifest& train_split, const Manifest& test_split,
               const std::vector<Prompt>& prompts, const fs::path& out) {
  ToyRun run;
  run.trainer = std::make_unique<Trainer>(cfg, train_split);
  run.trainer->train(out.string());
  run.recognition_per = eval_recognition(run.trainer->model(), test_split, cfg.seed).value;
  run.roundtrip_per = eval_roundtrip(run.trainer->model(), prompts, cfg.seed).value;
  return run;
}

// Exhaustive CTC alignment oracle (collapse repeats, then drop blanks).
double ctc_brute_force(const std::vector<double>& probs, int64_t T, int64_t V,
                       const std::vector<int>& target, int blank) {
  double total = 0.0;
  std::vector<int> path(static_cast<size_t>(T));
  std::function<void(int64_t, double)> rec = [&](int64_t t, double p) {
    if (t == T) {
      std::vector<int> collapsed;
      int prev = -1;
      for (int v : path) {
        if (v != prev && v != blank) collapsed.push_back(v);
        prev = v;
      }
      if (collapsed == target) total += p;
      return;
    }
    for (int v = 0; v < V; ++v) {
      path[static_cast<size_t>(t)] = v;
      rec(t + 1, p * probs[static_cast<size_t>(t * V + v)]);
    }
  };
  rec(0, 1.0);
  return -std::log(total);
}

bool criterion1() {
  Checker c;
  Rng rng(2024);
  int done = 0;
  double worst_value = 0.0, worst_grad = 0.0;
  while (done < 200) {
    const int64_t T = rng.uniform_int(1, 6);
    const int64_t V = rng.uniform_int(2, 4);
    const int blank = static_cast<int>(V - 1);
    std::vector<int> target(static_cast<size_t>(rng.uniform_int(0, 3)));
    for (auto& v : target) v = static_cast<int>(rng.uniform_int(0, V - 2));
    if (ctc_min_frames(target) > T) continue;

    std::vector<double> p(static_cast<size_t>(T * V));
    for (int64_t t = 0; t < T; ++t) {
      double s = 0.0;
      for (int64_t v = 0; v < V; ++v) {
        p[static_cast<size_t>(t * V + v)] = rng.uniform(0.05, 1.0);
        s += p[static_cast<size_t>(t * V + v)];
      }
      for (int64_t v = 0; v < V; ++v) p[static_cast<size_t>(t * V + v)] /= s;
    }
    Tensor post = Tensor::from({T, V}, p, true);
    const double got = ctc_loss(post, target, blank).item();
    const double want = ctc_brute_force(p, T, V, target, blank);
    worst_value = std::max(worst_value, std::abs(got - want));

    GradCheckReport g = grad_check([&] { return ctc_loss(post, target, blank); }, {post}, 1e-6);
    worst_grad = std::max(worst_grad, g.max_rel_err);
    ++done;
  }
  c.expect(worst_value <= 1e-9, "loss vs enumeration: " + std::to_string(worst_value));
  c.expect(worst_grad <= 1e-4, "gradient vs finite differences: " + std::to_string(worst_grad));
  std::printf(
      "%s criterion 1: CTC oracle equivalence over 200 instances (max loss err %.3g, max grad err %.3g)%s\n",
      c.ok ? "[PASS]" : "[FAIL]", worst_value, worst_grad, c.suffix().c_str());
  return c.ok;
}

bool criterion2() {
  Checker c;
  double worst_op = 0.0;
  std::string worst_name;
  for (const NamedCheck& check : op_grad_checks(77)) {
    if (check.report.max_rel_err > worst_op) {
      worst_op = check.report.max_rel_err;
      worst_name = check.name;
    }
    c.expect(check.report.max_rel_err <= 1e-6,
             check.name + ": " + std::to_string(check.report.max_rel_err));
  }
  NamedCheck full = full_loss_grad_check(77);
  c.expect(full.report.max_rel_err <= 1e-4, "full loss: " + std::to_string(full.report.max_rel_err));
  std::printf(
      "%s criterion 2: gradient verification (worst op %s %.3g; full loss %.3g, %zu ST sites linearised)%s\n",
      c.ok ? "[PASS]" : "[FAIL]", worst_name.c_str(), worst_op, full.report.max_rel_err,
      full.report.st_sites_linearized, c.suffix().c_str());
  return c.ok;
}

bool criterion3() {
  Checker c;
  Rng rng(99);

  const int64_t D = 8, V = 6;
  std::vector<double> ev(static_cast<size_t>(V * D));
  for (auto& v : ev) v = rng.uniform(-1, 1);
  Tensor codebook = Tensor::from({V, D}, ev);
  std::vector<double> hv(1000 * static_cast<size_t>(D));
  for (auto& v : hv) v = rng.uniform(-1.5, 1.5);
  Tensor h = Tensor::from({1000, D}, hv);
  Tensor p = posterior(h, codebook);
  auto nearest = nearest_codewords(h, codebook);
  bool rows_ok = true, argmax_ok = true;
  for (int64_t t = 0; t < 1000; ++t) {
    double s = 0.0;
    int64_t arg = 0;
    for (int64_t v = 0; v < V; ++v) {
      s += p.value()[static_cast<size_t>(t * V + v)];
      if (p.value()[static_cast<size_t>(t * V + v)] > p.value()[static_cast<size_t>(t * V + arg)])
        arg = v;
    }
    rows_ok = rows_ok && std::abs(s - 1.0) <= 1e-9;
    argmax_ok = argmax_ok && arg == nearest[static_cast<size_t>(t)];
  }
  c.expect(rows_ok, "posterior rows must sum to 1 within 1e-9");
  c.expect(argmax_ok, "posterior argmax must equal the nearest codeword");

  Tensor cb9 = Tensor::from({9, 2}, std::vector<double>(18, 0.25));
  c.expect(temporal_segmentation({3, 3, 7, 7, 7, 1}, cb9).indices == std::vector<int>({3, 7, 1}),
           "collapse example [3,3,7,7,7,1] -> [3,7,1]");
  bool idem = true;
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<int> seq(static_cast<size_t>(rng.uniform_int(0, 24)));
    for (auto& v : seq) v = static_cast<int>(rng.uniform_int(0, 8));
    auto once = temporal_segmentation(seq, cb9).indices;
    idem = idem && temporal_segmentation(once, cb9).indices == once;
  }
  c.expect(idem, "temporal segmentation must be idempotent");

  auto inventory = PhonemeInventory::from_phonemes(make_phoneme_symbols(6));
  Tensor cb = init_codebook(inventory.size(), D, 1.0, rng);
  bool inverse_ok = true;
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<std::string> phonemes(static_cast<size_t>(rng.uniform_int(1, 6)));
    for (auto& s : phonemes) s = inventory.symbol(rng.uniform_int(0, 5));
    CodeSequence q = text_to_codes(phonemes, inventory, cb);
    std::vector<int> frames;
    for (size_t i = 0; i < q.indices.size(); ++i) {
      if (i > 0 && q.indices[i] == q.indices[i - 1])
        frames.push_back(static_cast<int>(inventory.blank_index()));
      const int64_t reps = rng.uniform_int(1, 3);
      for (int64_t r = 0; r < reps; ++r) frames.push_back(q.indices[i]);
    }
    std::vector<double> probs(frames.size() * static_cast<size_t>(inventory.size()), 0.01);
    for (size_t t = 0; t < frames.size(); ++t)
      probs[t * static_cast<size_t>(inventory.size()) + static_cast<size_t>(frames[t])] = 0.9;
    Tensor noiseless = Tensor::from({static_cast<int64_t>(frames.size()), inventory.size()}, probs);
    inverse_ok = inverse_ok && greedy_decode(noiseless, inventory.blank_index()) == q.indices;
  }
  c.expect(inverse_ok, "greedy collapse of a noiseless posteriorgram must recover the sequence");

  std::printf("%s criterion 3: quantizer invariant suite%s\n", c.ok ? "[PASS]" : "[FAIL]",
              c.suffix().c_str());
  return c.ok;
}

// Reduced-scale but fully real corpus/model for the logging and
// determinism criteria.
CorpusConfig compact_corpus(uint64_t seed) {
  CorpusConfig cfg;
  cfg.seed = seed;
  cfg.speakers = 4;
  cfg.phonemes = 4;
  cfg.utterances = 48;
  cfg.min_phonemes = 2;
  cfg.max_phonemes = 4;
  cfg.min_frames = 6;
  cfg.max_frames = 10;
  cfg.paired_fraction = 0.25;
  cfg.test_speakers = 1;
  cfg.stft.window_length = 128;
  cfg.stft.hop_length = 64;
  cfg.stft.fft_size = 128;
  cfg.stft.mel_bands = 16;
  return cfg;
}

ModelConfig compact_model() {
  ModelConfig m;
  m.stft.window_length = 128;
  m.stft.hop_length = 64;
  m.stft.fft_size = 128;
  m.stft.mel_bands = 16;
  m.encoder = {16, 16, 5, 2, 16, 16};
  m.decoder.code_dim = 16;
  m.decoder.code_channels = 16;
  m.decoder.code_conv_width = 3;
  m.decoder.code_hidden = 16;
  m.decoder.attention_dim = 16;
  m.decoder.location_filters = 4;
  m.decoder.location_width = 5;
  m.decoder.prenet_dim = 16;
  m.decoder.rnn1_width = 24;
  m.decoder.rnn2_width = 24;
  m.decoder.postnet_layers = 5;
  m.decoder.postnet_channels = 8;
  m.decoder.postnet_width = 5;
  m.decoder.out_bins = 65;
  m.decoder.reduction = 2;
  m.decoder.max_frames = 96;
  m.decoder.speaker_dim = 8;
  return m;
}

bool criterion4() {
  Checker c;
  auto corpus_dir = fresh_dir("c4_corpus");
  Manifest corpus = generate_corpus(compact_corpus(41), corpus_dir.string());
  TrainConfig cfg;
  cfg.seed = 41;
  cfg.steps = 30;
  cfg.paired_batch = 2;
  cfg.unpaired_batch = 4;
  cfg.checkpoint_interval = 0;
  cfg.warmup_utterances = 12;
  cfg.model = compact_model();
  auto out = fresh_dir("c4_run");
  Trainer trainer(cfg, split(corpus, SplitPolicy{}, cfg.seed).train);
  trainer.train(out.string());

  std::ifstream metrics(out / "metrics.csv");
  std::string line;
  std::getline(metrics, line);
  c.expect(line == "step,recon,ctc,tts,aux,total", "metrics header");
  int rows = 0;
  double worst = 0.0;
  while (std::getline(metrics, line)) {
    double recon, ctc, tts, aux, total;
    long long step = 0;
    if (std::sscanf(line.c_str(), "%lld,%lg,%lg,%lg,%lg,%lg", &step, &recon, &ctc, &tts, &aux,
                    &total) != 6) {
      c.expect(false, "unparseable metrics row: " + line);
      break;
    }
    const double recomposed = 10.0 * recon + ctc + tts + aux;
    worst = std::max(worst, std::abs(total - recomposed));
    ++rows;
  }
  c.expect(rows == 30, "expected 30 logged steps, got " + std::to_string(rows));
  c.expect(worst <= 1e-12, "composition residual " + std::to_string(worst));
  std::printf(
      "%s criterion 4: logged total = 10*recon + ctc + tts + aux at every step (max residual %.3g)%s\n",
      c.ok ? "[PASS]" : "[FAIL]", worst, c.suffix().c_str());
  return c.ok;
}

bool criterion5() {
  Checker c;
  Rng rng(55);

  ParamRegistry reg;
  AffineConditioner cond;
  cond.init(reg, 6, 10, rng);
  bool gamma_ok = true;
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> sv(6);
    for (auto& v : sv) v = rng.uniform(-3, 3);
    auto [gamma, beta] = cond.params(Tensor::from({6}, sv));
    for (double v : gamma.value()) gamma_ok = gamma_ok && v >= 0.0;
  }
  c.expect(gamma_ok, "gamma must be non-negative");

  Tensor m = Tensor::from({3}, {0.37, -2.25, 11.5});
  c.expect(apply_affine(m, Tensor::from({3}, {1, 1, 1}), Tensor::zeros({3})).value() == m.value(),
           "identity at gamma=1, beta=0");
  Tensor hand = apply_affine(Tensor::from({2}, {2.0, -1.0}), Tensor::from({2}, {0.5, 2.0}),
                             Tensor::from({2}, {1.0, 1.0}));
  c.expect(hand.value()[0] == 0.5 && hand.value()[1] == -4.0, "hand case [2,-1] -> [0.5,-4]");

  auto build = [&](bool swapped) {
    auto r = std::make_unique<ParamRegistry>();
    Rng prng(7);
    auto dec = std::make_unique<SpeakerSynthesizer>();
    DecoderConfig dc = compact_model().decoder;
    dec->init(*r, dc, prng);
    auto table = std::make_unique<SpeakerTable>();
    Rng srng(13);
    table->init(*r, {"s0", "s1"}, dc.speaker_dim, srng);
    if (swapped) {
      auto& v = table->table().value();
      const int64_t d = dc.speaker_dim;
      for (int64_t i = 0; i < d; ++i)
        std::swap(v[static_cast<size_t>(i)], v[static_cast<size_t>(d + i)]);
    }
    return std::pair(std::move(dec), std::move(table));
  };
  auto [dec1, tab1] = build(false);
  auto [dec2, tab2] = build(true);
  CodeSequence q;
  std::vector<double> qv(4 * 16);
  for (auto& v : qv) v = rng.uniform(-1, 1);
  q.vectors = Tensor::from({4, 16}, qv);
  q.indices = {0, 1, 2, 3};
  std::vector<double> tv(12 * 65);
  for (auto& v : tv) v = rng.uniform(0, 1);
  Tensor target = Tensor::from({12, 65}, tv);
  SynthesisOutput a = dec1->synthesize_teacher_forced(q, tab1->embedding("s0"), target);
  SynthesisOutput b = dec2->synthesize_teacher_forced(q, tab2->embedding("s1"), target);
  c.expect(a.spectrogram.value() == b.spectrogram.value(),
           "swapping speaker rows must swap outputs bitwise");

  std::printf("%s criterion 5: affine conditioning%s\n", c.ok ? "[PASS]" : "[FAIL]",
              c.suffix().c_str());
  return c.ok;
}

bool criterion6() {
  Checker c;
  Rng rng(66);
  StftConfig cfg;
  double worst_rel = 0.0, worst_violation = 0.0;
  for (int sig = 0; sig < 20; ++sig) {
    const double f1 = rng.uniform(200, 800);
    const double f2 = f1 * rng.uniform(1.5, 2.5);
    const double f3 = f1 * rng.uniform(3.0, 5.0);
    const double a1 = rng.uniform(0.2, 0.35), a2 = rng.uniform(0.1, 0.25),
                 a3 = rng.uniform(0.05, 0.15);
    AudioBuffer audio;
    audio.sample_rate = 16000;
    audio.samples.resize(6400);
    for (size_t i = 0; i < audio.samples.size(); ++i) {
      const double t = static_cast<double>(i) / 16000.0;
      audio.samples[i] = a1 * std::sin(2 * M_PI * f1 * t) + a2 * std::sin(2 * M_PI * f2 * t) +
                         a3 * std::sin(2 * M_PI * f3 * t);
    }
    Spectrogram target = stft(audio, cfg);
    GriffinLimResult r = griffin_lim(target, 60);
    for (size_t i = 1; i < r.distance_trace.size(); ++i)
      worst_violation = std::max(worst_violation, r.distance_trace[i] - r.distance_trace[i - 1]);
    worst_rel = std::max(worst_rel, r.final_relative_error);
  }
  c.expect(worst_violation <= 1e-9, "projection distance must be non-increasing (worst increase " +
                                        std::to_string(worst_violation) + ")");
  c.expect(worst_rel <= 0.15, "final relative error " + std::to_string(worst_rel));
  std::printf(
      "%s criterion 6: Griffin-Lim on 20 three-tone signals (worst rel err %.4f, worst monotonicity slack %.3g)%s\n",
      c.ok ? "[PASS]" : "[FAIL]", worst_rel, worst_violation, c.suffix().c_str());
  return c.ok;
}

bool criterion7() {
  Checker c;
  const auto t0 = std::chrono::steady_clock::now();

  auto corpus_a_dir = fresh_dir("c7_corpus_multi");
  Manifest corpus_a = generate_corpus(default_corpus(1, "multi"), corpus_a_dir.string());
  Splits splits_a = split(corpus_a, SplitPolicy{}, 1);
  std::vector<Prompt> prompts_a = prompts_from_split(splits_a.test, 24);

  // (a) semi-supervised multi-paired run.
  ToyRun run_a =
      run_toy(toy_train(1), splits_a.train, splits_a.test, prompts_a, fresh_dir("c7_run_multi"));
  c.expect(run_a.recognition_per <= 0.25,
           "(a) held-out recognition PER " + std::to_string(run_a.recognition_per) + " > 0.25");
  c.expect(run_a.roundtrip_per <= 0.30,
           "(a) round-trip PER " + std::to_string(run_a.roundtrip_per) + " > 0.30");

  // (c) ablation: straight-through disabled, same config otherwise.
  TrainConfig ablation_cfg = toy_train(1);
  ablation_cfg.st_enabled = false;
  ToyRun run_c = run_toy(ablation_cfg, splits_a.train, splits_a.test, prompts_a,
                         fresh_dir("c7_run_ablation"));
  c.expect(run_c.roundtrip_per > run_a.roundtrip_per,
           "(c) ablation round-trip PER " + std::to_string(run_c.roundtrip_per) +
               " must exceed the ST-enabled " + std::to_string(run_a.roundtrip_per));

  auto corpus_b_dir = fresh_dir("c7_corpus_single");
  Manifest corpus_b = generate_corpus(default_corpus(1, "single"), corpus_b_dir.string());
  Splits splits_b = split(corpus_b, SplitPolicy{}, 1);
  std::vector<Prompt> prompts_b = prompts_from_split(splits_b.test, 24);

  // (b) single-speaker-paired semi-supervised vs the paired-only baseline.
  ToyRun run_b =
      run_toy(toy_train(1), splits_b.train, splits_b.test, prompts_b, fresh_dir("c7_run_single"));
  TrainConfig paired_only_cfg = toy_train(1);
  paired_only_cfg.unpaired_batch = 0;
  ToyRun run_b0 = run_toy(paired_only_cfg, splits_b.train, splits_b.test, prompts_b,
                          fresh_dir("c7_run_single_paired_only"));
  c.expect(run_b.roundtrip_per <= 0.45,
           "(b) single-paired round-trip PER " + std::to_string(run_b.roundtrip_per) + " > 0.45");
  c.expect(run_b0.roundtrip_per - run_b.roundtrip_per >= 0.10,
           "(b) margin over the paired-only baseline " +
               std::to_string(run_b0.roundtrip_per - run_b.roundtrip_per) + " < 0.10");

  const double minutes =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() / 60.0;
  c.expect(minutes <= 30.0, "runtime " + std::to_string(minutes) + " min > 30 min");

  std::printf(
      "%s criterion 7: semi-supervised toy reproduction (a: rec %.3f rt %.3f; b: rt %.3f vs paired-only %.3f; c: ablation rt %.3f; %.1f min)%s\n",
      c.ok ? "[PASS]" : "[FAIL]", run_a.recognition_per, run_a.roundtrip_per, run_b.roundtrip_per,
      run_b0.roundtrip_per, run_c.roundtrip_per, minutes, c.suffix().c_str());
  return c.ok;
}

bool criterion8() {
  Checker c;
  auto corpus_dir = fresh_dir("c8_corpus");
  Manifest corpus = generate_corpus(default_corpus(2, "multi"), corpus_dir.string());
  Splits splits = split(corpus, SplitPolicy{}, 2);
  std::vector<Prompt> prompts = prompts_from_split(splits.test, 24);

  NoisePolicy policy;  // 44% of unpaired at SNR uniform in [10, 30] dB
  NoiseResult noised = apply_noise_policy(splits.train, policy, 2);

  double worst_snr_err = 0.0;
  bool range_ok = true;
  for (const auto& rec : noised.records) {
    AudioBuffer clean = read_wav(splits.train.dir + "/" + rec.clean_audio);
    const Utterance* noisy_u = nullptr;
    for (const auto& u : noised.manifest.utterances)
      if (u.id == rec.id) noisy_u = &u;
    AudioBuffer noisy = load_audio(noised.manifest, *noisy_u);
    std::vector<double> part(noisy.samples.size());
    for (size_t i = 0; i < part.size(); ++i) part[i] = noisy.samples[i] - clean.samples[i];
    const double measured = 10.0 * std::log10(mean_power(clean.samples) / mean_power(part));
    worst_snr_err = std::max(worst_snr_err, std::abs(measured - rec.snr_db));
    range_ok = range_ok && rec.snr_db >= 10.0 && rec.snr_db <= 30.0;
  }
  c.expect(range_ok, "drawn SNRs must lie in [10,30] dB");
  c.expect(worst_snr_err <= 0.1, "worst SNR error " + std::to_string(worst_snr_err) + " dB");

  Manifest clean_half = splits.train;
  clean_half.utterances.clear();
  for (const auto& u : splits.train.utterances) {
    bool was_noised = false;
    for (const auto& rec : noised.records) was_noised = was_noised || rec.id == u.id;
    if (!was_noised) clean_half.utterances.push_back(u);
  }

  ToyRun with_noisy =
      run_toy(toy_train(2), noised.manifest, splits.test, prompts, fresh_dir("c8_run_noisy"));
  ToyRun clean_only =
      run_toy(toy_train(2), clean_half, splits.test, prompts, fresh_dir("c8_run_clean"));
  c.expect(with_noisy.roundtrip_per < clean_only.roundtrip_per,
           "noisy+clean round-trip PER " + std::to_string(with_noisy.roundtrip_per) +
               " must beat clean-half-only " + std::to_string(clean_only.roundtrip_per));

  std::printf(
      "%s criterion 8: noise protocol (worst SNR err %.4f dB; rt PER noisy+clean %.3f vs clean-half %.3f)%s\n",
      c.ok ? "[PASS]" : "[FAIL]", worst_snr_err, with_noisy.roundtrip_per, clean_only.roundtrip_per,
      c.suffix().c_str());
  return c.ok;
}

bool criterion9() {
  Checker c;
  auto corpus_dir = fresh_dir("c9_corpus");
  Manifest corpus = generate_corpus(compact_corpus(9), corpus_dir.string());
  Manifest train_split = split(corpus, SplitPolicy{}, 9).train;

  TrainConfig cfg;
  cfg.seed = 9;
  cfg.steps = 20;
  cfg.paired_batch = 2;
  cfg.unpaired_batch = 4;
  cfg.checkpoint_interval = 10;
  cfg.warmup_utterances = 12;
  cfg.model = compact_model();

  auto out1 = fresh_dir("c9_run1");
  auto out2 = fresh_dir("c9_run2");
  Trainer t1(cfg, train_split);
  std::string final1 = t1.train(out1.string());
  TrainConfig cfg2 = cfg;
  cfg2.threads = 1;  // thread count must not influence the bits
  Trainer t2(cfg2, train_split);
  std::string final2 = t2.train(out2.string());
  c.expect(slurp(out1 / "metrics.csv") == slurp(out2 / "metrics.csv"),
           "metrics logs must be byte-identical");
  LoadedCheckpoint l1 = load_checkpoint(final1);
  LoadedCheckpoint l2 = load_checkpoint(final2);
  bool params_equal = true;
  for (size_t i = 0; i < l1.model->params().params().size(); ++i)
    params_equal = params_equal &&
                   l1.model->params().params()[i].value() == l2.model->params().params()[i].value();
  c.expect(params_equal, "final parameters must be bitwise identical");
  c.expect(l1.rng.serialize() == l2.rng.serialize(), "rng streams must match");

  Trainer resumed(cfg, train_split);
  resumed.resume_from((out1 / "ckpt_10.ckpt").string());
  auto out3 = fresh_dir("c9_run3");
  std::string final3 = resumed.train(out3.string());
  c.expect(slurp(final1) == slurp(final3),
           "resumed run must reproduce the uninterrupted checkpoint bytes");

  std::printf("%s criterion 9: determinism and persistence%s\n", c.ok ? "[PASS]" : "[FAIL]",
              c.suffix().c_str());
  return c.ok;
}

}  // namespace

int main(int argc, char** argv) {
  const std::string which = argc > 1 ? argv[1] : "all";
  using CriterionFn = bool (*)();
  const CriterionFn criteria[9] = {criterion1, criterion2, criterion3, criterion4, criterion5,
                                   criterion6, criterion7, criterion8, criterion9};
  int failures = 0;
  if (which == "all") {
    for (int i = 0; i < 9; ++i) failures += criteria[i]() ? 0 : 1;
  } else {
    const int idx = std::atoi(which.c_str());
    if (idx < 1 || idx > 9) {
      std::fprintf(stderr, "usage: acceptance_tests [1-9|all]\n");
      return 64;
    }
    failures += criteria[idx - 1]() ? 0 : 1;
  }
  return failures;
}
