// Command-line surface: corpus generation and noising, training,
// synthesis, evaluation and gradient verification.

#include <CLI11.hpp>

#include <iostream>

#include "vqtts/eval.hpp"
#include "vqtts/gradcheck_suite.hpp"

using namespace vqtts;

namespace {

nlohmann::json read_json_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open config file " + path);
  return nlohmann::json::parse(is);
}

Manifest select_split(const Manifest& manifest, const std::string& which, uint64_t seed) {
  if (which == "all") return manifest;
  Splits s = split(manifest, SplitPolicy{}, seed);
  if (which == "train") return s.train;
  if (which == "dev") return s.dev;
  if (which == "test") return s.test;
  throw std::invalid_argument("unknown split '" + which + "' (expected train|dev|test|all)");
}

int cmd_corpus_gen(const std::string& config_path, const std::string& out_dir,
                   std::optional<uint64_t> seed) {
  CorpusConfig cfg;
  if (!config_path.empty()) cfg = read_json_file(config_path).get<CorpusConfig>();
  if (seed) cfg.seed = *seed;
  Manifest m = generate_corpus(cfg, out_dir);
  std::cout << "wrote " << m.utterances.size() << " utterances to " << out_dir << " ("
            << m.speakers().size() << " speakers, inventory " << m.inventory.phoneme_count()
            << " phonemes)\n";
  return 0;
}

int cmd_corpus_noise(const std::string& manifest_path, const std::string& out_manifest,
                     double fraction, double snr_lo, double snr_hi, uint64_t seed) {
  Manifest m = load_manifest(manifest_path);
  NoisePolicy policy;
  policy.fraction = fraction;
  policy.snr_lo = snr_lo;
  policy.snr_hi = snr_hi;
  NoiseResult r = apply_noise_policy(m, policy, seed);
  const std::string out_path = out_manifest.empty() ? m.dir + "/manifest_noisy.jsonl" : out_manifest;
  save_manifest(r.manifest, out_path);
  nlohmann::json report = nlohmann::json::array();
  for (const auto& rec : r.records)
    report.push_back({{"id", rec.id}, {"snr_db", rec.snr_db}, {"clean_audio", rec.clean_audio}});
  std::ofstream os(m.dir + "/noise_report.json");
  os << report.dump(2) << "\n";
  std::cout << "corrupted " << r.records.size() << " unpaired utterances; manifest: " << out_path
            << "\n";
  return 0;
}

int cmd_train(const std::string& config_path, const std::string& data_path,
              const std::string& out_dir, std::optional<uint64_t> seed,
              const std::string& resume) {
  TrainConfig cfg;
  if (!config_path.empty()) cfg = read_json_file(config_path).get<TrainConfig>();
  if (seed) cfg.seed = *seed;
  Manifest manifest = load_manifest(data_path);
  Splits splits = split(manifest, SplitPolicy{}, cfg.seed);
  std::cout << "train/dev/test: " << splits.train.utterances.size() << "/"
            << splits.dev.utterances.size() << "/" << splits.test.utterances.size() << "\n";
  Trainer trainer(cfg, splits.train);
  if (!resume.empty()) {
    trainer.resume_from(resume);
    std::cout << "resumed from " << resume << " at step " << trainer.step() << "\n";
  }
  const std::string final_path = trainer.train(out_dir);
  std::cout << "final checkpoint: " << final_path << "\n";
  return 0;
}

int cmd_synth(const std::string& ckpt, const std::string& prompts_path, const std::string& out_dir,
              int64_t gl_iters) {
  LoadedCheckpoint loaded = load_checkpoint(ckpt);
  std::vector<Prompt> prompts = load_prompts(prompts_path);
  std::filesystem::create_directories(out_dir);
  for (size_t i = 0; i < prompts.size(); ++i) {
    SynthesisOutput synth = loaded.model->synth_from_text(prompts[i].phonemes, prompts[i].speaker);
    Spectrogram spec = loaded.model->to_spectrogram(synth);
    GriffinLimResult gl = griffin_lim(spec, gl_iters);
    const std::string path =
        out_dir + "/prompt" + std::to_string(i) + "_" + prompts[i].speaker + ".wav";
    write_wav(gl.audio, path);
    std::cout << path << " (" << spec.frames << " frames, stop after " << synth.steps
              << " steps, spectral fit " << gl.final_relative_error << ")\n";
  }
  return 0;
}

int cmd_eval_recognition(const std::string& ckpt, const std::string& data_path,
                         const std::string& which, const std::string& out_path,
                         std::optional<uint64_t> seed) {
  LoadedCheckpoint loaded = load_checkpoint(ckpt);
  const uint64_t s = seed ? *seed : loaded.config.seed;
  Manifest manifest = load_manifest(data_path);
  Manifest chosen = select_split(manifest, which, s);
  MetricReport report = eval_recognition(*loaded.model, chosen, s, loaded.config.threads);
  if (!out_path.empty()) report.save(out_path);
  std::cout << "recognition PER (" << which << ", " << report.per_utterance.size()
            << " utterances): " << report.value << "\n";
  return 0;
}

int cmd_eval_roundtrip(const std::string& ckpt, const std::string& prompts_path,
                       const std::string& out_path, int64_t gl_iters,
                       std::optional<uint64_t> seed) {
  LoadedCheckpoint loaded = load_checkpoint(ckpt);
  const uint64_t s = seed ? *seed : loaded.config.seed;
  std::vector<Prompt> prompts = load_prompts(prompts_path);
  MetricReport report = eval_roundtrip(*loaded.model, prompts, s, gl_iters, loaded.config.threads);
  if (!out_path.empty()) report.save(out_path);
  std::cout << "round-trip PER (" << prompts.size() << " prompts): " << report.value << "\n";
  for (const auto& [spk, v] : report.per_speaker) std::cout << "  " << spk << ": " << v << "\n";
  return 0;
}

int cmd_eval_experiment(const std::string& suite_str, const std::string& config_path,
                        const std::string& out_dir, std::optional<uint64_t> seed) {
  ExperimentConfig cfg;
  if (!config_path.empty()) {
    nlohmann::json j = read_json_file(config_path);
    if (j.contains("corpus")) cfg.corpus = j.at("corpus").get<CorpusConfig>();
    if (j.contains("train")) cfg.train = j.at("train").get<TrainConfig>();
    cfg.max_prompts = j.value("max_prompts", cfg.max_prompts);
    cfg.griffin_lim_iterations = j.value("griffin_lim_iterations", cfg.griffin_lim_iterations);
  }
  if (!out_dir.empty()) cfg.work_dir = out_dir;
  if (seed) cfg.seed = *seed;
  ExperimentReport report = run_experiment(suite_from_string(suite_str), cfg);
  std::cout << report.to_json().dump(2) << "\n";
  std::cout << "ordering (" << report.treatment.name << " <= " << report.control.name
            << " on round-trip PER): " << (report.ordering_holds ? "holds" : "VIOLATED") << "\n";
  return 0;
}

int cmd_gradcheck(uint64_t seed) {
  bool ok = true;
  for (const NamedCheck& c : op_grad_checks(seed)) {
    const bool pass = c.report.max_rel_err <= 1e-6;
    ok = ok && pass;
    std::cout << (pass ? "[pass] " : "[FAIL] ") << c.name << ": max rel err "
              << c.report.max_rel_err;
    if (c.report.st_sites_linearized > 0)
      std::cout << " (" << c.report.st_sites_linearized
                << " straight-through site(s) linearised, exact FD skipped)";
    std::cout << "\n";
  }
  NamedCheck full = full_loss_grad_check(seed);
  const bool pass = full.report.max_rel_err <= 1e-4;
  ok = ok && pass;
  std::cout << (pass ? "[pass] " : "[FAIL] ") << full.name << ": max rel err "
            << full.report.max_rel_err << " (" << full.report.st_sites_linearized
            << " straight-through site(s) linearised, exact FD skipped)\n";
  return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"semi-supervised multi-speaker TTS with discrete phonetic codes"};
  app.require_subcommand(1);

  std::string config_path, out_path, data_path, ckpt_path, prompts_path, manifest_path;
  std::string split_name = "test", suite_name_str = "multi_paired", resume_path, out_manifest;
  std::optional<uint64_t> seed;
  uint64_t noise_seed = 1, gradcheck_seed = 1;
  double fraction = 0.44, snr_lo = 10.0, snr_hi = 30.0;
  int64_t gl_iters = 60;
  int rc = 0;

  CLI::App* corpus = app.add_subcommand("corpus", "synthetic corpus tools");
  corpus->require_subcommand(1);
  CLI::App* gen = corpus->add_subcommand("gen", "generate a synthetic corpus");
  gen->add_option("--config", config_path, "corpus config JSON");
  gen->add_option("--out", out_path, "output directory")->required();
  gen->add_option("--seed", seed, "override the config seed");
  gen->callback([&] { rc = cmd_corpus_gen(config_path, out_path, seed); });

  CLI::App* noise = corpus->add_subcommand("noise", "apply the noisy-unpaired protocol");
  noise->add_option("--manifest", manifest_path, "input manifest.jsonl")->required();
  noise->add_option("--out", out_manifest, "output manifest path (same corpus directory)");
  noise->add_option("--fraction", fraction, "fraction of unpaired utterances to corrupt");
  noise->add_option("--snr-lo", snr_lo, "lower SNR bound (dB)");
  noise->add_option("--snr-hi", snr_hi, "upper SNR bound (dB)");
  noise->add_option("--seed", noise_seed, "noise draw seed");
  noise->callback([&] {
    rc = cmd_corpus_noise(manifest_path, out_manifest, fraction, snr_lo, snr_hi, noise_seed);
  });

  CLI::App* train = app.add_subcommand("train", "train on a manifest");
  train->add_option("--config", config_path, "train config JSON");
  train->add_option("--data", data_path, "manifest.jsonl")->required();
  train->add_option("--out", out_path, "run directory")->required();
  train->add_option("--seed", seed, "override the config seed");
  train->add_option("--resume", resume_path, "checkpoint to resume from");
  train->callback([&] { rc = cmd_train(config_path, data_path, out_path, seed, resume_path); });

  CLI::App* synth = app.add_subcommand("synth", "synthesize prompts to WAV files");
  synth->add_option("--ckpt", ckpt_path, "checkpoint")->required();
  synth->add_option("--prompts", prompts_path, "prompts JSONL")->required();
  synth->add_option("--out", out_path, "output directory")->required();
  synth->add_option("--gl-iters", gl_iters, "Griffin-Lim iterations");
  synth->callback([&] { rc = cmd_synth(ckpt_path, prompts_path, out_path, gl_iters); });

  CLI::App* eval_cmd = app.add_subcommand("eval", "objective evaluation");
  eval_cmd->require_subcommand(1);
  CLI::App* recog = eval_cmd->add_subcommand("recognition", "encoder-as-recognizer PER");
  recog->add_option("--ckpt", ckpt_path, "checkpoint")->required();
  recog->add_option("--data", data_path, "manifest.jsonl")->required();
  recog->add_option("--split", split_name, "train|dev|test|all");
  recog->add_option("--out", out_path, "report JSON path");
  recog->add_option("--seed", seed, "split seed (defaults to the checkpoint's)");
  recog->callback([&] { rc = cmd_eval_recognition(ckpt_path, data_path, split_name, out_path, seed); });

  CLI::App* rt = eval_cmd->add_subcommand("roundtrip", "text -> speech -> text PER");
  rt->add_option("--ckpt", ckpt_path, "checkpoint")->required();
  rt->add_option("--prompts", prompts_path, "prompts JSONL")->required();
  rt->add_option("--out", out_path, "report JSON path");
  rt->add_option("--gl-iters", gl_iters, "Griffin-Lim iterations");
  rt->add_option("--seed", seed, "evaluation seed");
  rt->callback([&] { rc = cmd_eval_roundtrip(ckpt_path, prompts_path, out_path, gl_iters, seed); });

  CLI::App* exp = eval_cmd->add_subcommand("experiment", "matched-pair training comparisons");
  exp->add_option("--suite", suite_name_str, "baseline|multi_paired|single_paired|noise|ablation")
      ->required();
  exp->add_option("--config", config_path, "experiment config JSON");
  exp->add_option("--out", out_path, "work directory");
  exp->add_option("--seed", seed, "experiment seed");
  exp->callback([&] { rc = cmd_eval_experiment(suite_name_str, config_path, out_path, seed); });

  CLI::App* gc = app.add_subcommand("gradcheck", "finite-difference gradient verification");
  gc->add_option("--seed", gradcheck_seed, "random seed");
  gc->callback([&] { rc = cmd_gradcheck(gradcheck_seed); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return rc;
}
