#pragma once

// Semi-supervised training: per step, a paired and an unpaired sub-batch
// are sampled, the three loss terms are combined with the fixed lambda,
// gradients are clipped and applied with adaptive-moment updates. Batch
// items are evaluated on a small thread pool into per-item gradient maps
// and reduced in utterance order, so results are bitwise identical
// regardless of thread count.

#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "vqtts/checkpoint.hpp"
#include "vqtts/model.hpp"
#include "vqtts/rng.hpp"

namespace vqtts {

struct LossWeights {
  double lambda_recon = 10.0;  // fixed unpaired-reconstruction weight
  double commitment = 0.0;     // optional codebook pull, off by default
  double stop = 1.0;

  void validate() const {
    if (!(lambda_recon > 0.0)) throw std::invalid_argument("LossWeights: lambda must be > 0");
  }
};

inline void to_json(nlohmann::json& j, const LossWeights& w) {
  j = {{"lambda_recon", w.lambda_recon}, {"commitment", w.commitment}, {"stop", w.stop}};
}
inline void from_json(const nlohmann::json& j, LossWeights& w) {
  w.lambda_recon = j.value("lambda_recon", w.lambda_recon);
  w.commitment = j.value("commitment", w.commitment);
  w.stop = j.value("stop", w.stop);
}

struct TrainConfig {
  uint64_t seed = 1;
  int64_t steps = 1000;
  int64_t paired_batch = 4;
  int64_t unpaired_batch = 12;
  double learning_rate = 1e-3;
  double beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8;
  double clip_norm = 1.0;
  bool st_enabled = true;  // false = speech-chain ablation
  int64_t checkpoint_interval = 200;
  int64_t warmup_utterances = 100;  // codebook radius measurement
  int threads = 2;
  LossWeights weights;
  ModelConfig model;

  void validate() const {
    weights.validate();
    if (steps < 0 || paired_batch < 1 || unpaired_batch < 0)
      throw std::invalid_argument("TrainConfig: bad batch/step sizes");
    if (!(learning_rate > 0.0) || !(clip_norm > 0.0))
      throw std::invalid_argument("TrainConfig: rates must be positive");
    if (threads < 1) throw std::invalid_argument("TrainConfig: threads must be >= 1");
  }
};

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"seed", c.seed},
       {"steps", c.steps},
       {"paired_batch", c.paired_batch},
       {"unpaired_batch", c.unpaired_batch},
       {"learning_rate", c.learning_rate},
       {"beta1", c.beta1},
       {"beta2", c.beta2},
       {"adam_eps", c.adam_eps},
       {"clip_norm", c.clip_norm},
       {"st_enabled", c.st_enabled},
       {"checkpoint_interval", c.checkpoint_interval},
       {"warmup_utterances", c.warmup_utterances},
       {"threads", c.threads},
       {"weights", c.weights},
       {"model", c.model}};
}
inline void from_json(const nlohmann::json& j, TrainConfig& c) {
  c.seed = j.value("seed", c.seed);
  c.steps = j.value("steps", c.steps);
  c.paired_batch = j.value("paired_batch", c.paired_batch);
  c.unpaired_batch = j.value("unpaired_batch", c.unpaired_batch);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.beta1 = j.value("beta1", c.beta1);
  c.beta2 = j.value("beta2", c.beta2);
  c.adam_eps = j.value("adam_eps", c.adam_eps);
  c.clip_norm = j.value("clip_norm", c.clip_norm);
  c.st_enabled = j.value("st_enabled", c.st_enabled);
  c.checkpoint_interval = j.value("checkpoint_interval", c.checkpoint_interval);
  c.warmup_utterances = j.value("warmup_utterances", c.warmup_utterances);
  c.threads = j.value("threads", c.threads);
  if (j.contains("weights")) c.weights = j.at("weights").get<LossWeights>();
  if (j.contains("model")) c.model = j.at("model").get<ModelConfig>();
}

struct LossBreakdown {
  double recon = 0.0, ctc = 0.0, tts = 0.0, aux = 0.0, total = 0.0;
};

// ---------------------------------------------------------------------------
// checkpoint serialisation of the full training state

inline void save_checkpoint(const Model& model, const TrainConfig& cfg, int64_t step,
                            int64_t adam_t, const std::vector<std::vector<double>>& adam_m,
                            const std::vector<std::vector<double>>& adam_v, const Rng& rng,
                            const std::string& path) {
  CheckpointWriter w;
  std::vector<std::string> phonemes(model.inventory().symbols().begin(),
                                    model.inventory().symbols().end() - 1);  // blank is implicit
  nlohmann::json meta = {{"step", step},
                         {"adam_t", adam_t},
                         {"config", cfg},
                         {"phonemes", phonemes},
                         {"speakers", model.speakers().ids()}};
  w.add("meta", meta.dump());
  w.add("rng", rng.serialize());
  const auto& params = model.params().params();
  for (size_t i = 0; i < params.size(); ++i) {
    const Tensor& p = params[i];
    nlohmann::json shape = p.shape();
    w.add("shape:" + p.name(), shape.dump());
    w.add_doubles("param:" + p.name(), p.value());
    w.add_doubles("adam_m:" + p.name(), adam_m[i]);
    w.add_doubles("adam_v:" + p.name(), adam_v[i]);
  }
  w.save(path);
}

struct LoadedCheckpoint {
  TrainConfig config;
  std::unique_ptr<Model> model;
  int64_t step = 0;
  int64_t adam_t = 0;
  std::vector<std::vector<double>> adam_m, adam_v;
  Rng rng;
};

inline LoadedCheckpoint load_checkpoint(const std::string& path) {
  CheckpointReader r(path);
  LoadedCheckpoint out;
  nlohmann::json meta = nlohmann::json::parse(r.get("meta"));
  out.config = meta.at("config").get<TrainConfig>();
  out.step = meta.at("step").get<int64_t>();
  out.adam_t = meta.at("adam_t").get<int64_t>();
  out.rng = Rng::deserialize(r.get("rng"));

  auto inventory = PhonemeInventory::from_phonemes(meta.at("phonemes").get<std::vector<std::string>>());
  auto speakers = meta.at("speakers").get<std::vector<std::string>>();
  out.model = std::make_unique<Model>(out.config.model, inventory, speakers, /*seed=*/0);

  for (const Tensor& p : out.model->params().params()) {
    Tensor param = p;
    std::vector<double> values = r.get_doubles("param:" + p.name());
    nlohmann::json shape_j = nlohmann::json::parse(r.get("shape:" + p.name()));
    Shape stored = shape_j.get<Shape>();
    if (stored != p.shape() || static_cast<int64_t>(values.size()) != p.numel())
      throw std::runtime_error("checkpoint: shape mismatch for record param:" + p.name() +
                               ": file has " + shape_str(stored) + ", config needs " +
                               shape_str(p.shape()));
    param.value() = std::move(values);
    out.adam_m.push_back(r.get_doubles("adam_m:" + p.name()));
    out.adam_v.push_back(r.get_doubles("adam_v:" + p.name()));
  }
  return out;
}

// ---------------------------------------------------------------------------

class Trainer {
 public:
  Trainer(TrainConfig cfg, const Manifest& train_manifest) : cfg_(std::move(cfg)), rng_(cfg_.seed) {
    cfg_.validate();
    cfg_.model.validate();
    if (train_manifest.utterances.empty())
      throw std::invalid_argument("Trainer: empty training manifest");

    model_ = std::make_unique<Model>(cfg_.model, train_manifest.inventory,
                                     train_manifest.speakers(), cfg_.seed);

    features_.reserve(train_manifest.utterances.size());
    for (const auto& u : train_manifest.utterances) {
      features_.push_back(extract_features(train_manifest, u, cfg_.model.stft));
      if (features_.back().paired) paired_pool_.push_back(features_.size() - 1);
      else unpaired_pool_.push_back(features_.size() - 1);
    }
    if (paired_pool_.empty()) throw std::invalid_argument("Trainer: no paired utterances");

    const auto& params = model_->params().params();
    adam_m_.resize(params.size());
    adam_v_.resize(params.size());
    for (size_t i = 0; i < params.size(); ++i) {
      adam_m_[i].assign(static_cast<size_t>(params[i].numel()), 0.0);
      adam_v_[i].assign(static_cast<size_t>(params[i].numel()), 0.0);
    }

    warmup_codebook();
  }

  Model& model() { return *model_; }
  const TrainConfig& config() const { return cfg_; }
  int64_t step() const { return step_; }

  void resume_from(const std::string& checkpoint_path) {
    LoadedCheckpoint loaded = load_checkpoint(checkpoint_path);
    if (nlohmann::json(loaded.config.model) != nlohmann::json(cfg_.model))
      throw std::runtime_error("resume: model config in " + checkpoint_path +
                               " does not match the current configuration");
    const auto& params = model_->params().params();
    const auto& src = loaded.model->params().params();
    for (size_t i = 0; i < params.size(); ++i) {
      Tensor dst = params[i];
      dst.value() = src[i].value();
    }
    adam_m_ = loaded.adam_m;
    adam_v_ = loaded.adam_v;
    adam_t_ = loaded.adam_t;
    step_ = loaded.step;
    rng_ = loaded.rng;
  }

  // Runs the configured number of steps, logging every step and writing
  // interval checkpoints plus final.ckpt. Returns the final checkpoint path.
  std::string train(const std::string& out_dir) {
    std::filesystem::create_directories(out_dir);
    const std::string metrics_path = out_dir + "/metrics.csv";
    const bool fresh_log = step_ == 0 || !std::filesystem::exists(metrics_path);
    std::ofstream metrics(metrics_path, fresh_log ? std::ios::out : std::ios::app);
    if (!metrics) throw std::runtime_error("train: cannot write " + metrics_path);
    if (fresh_log) metrics << "step,recon,ctc,tts,aux,total\n";

    std::string last_ckpt;
    while (step_ < cfg_.steps) {
      LossBreakdown loss;
      try {
        loss = step_once();
      } catch (const std::exception& e) {
        throw std::runtime_error("train: aborted at step " + std::to_string(step_) + ": " +
                                 e.what() +
                                 (last_ckpt.empty() ? std::string("; no checkpoint retained")
                                                    : "; last good checkpoint: " + last_ckpt));
      }
      char line[256];
      std::snprintf(line, sizeof(line), "%lld,%.17g,%.17g,%.17g,%.17g,%.17g\n",
                    static_cast<long long>(step_), loss.recon, loss.ctc, loss.tts, loss.aux,
                    loss.total);
      metrics << line;
      metrics.flush();
      if (!std::isfinite(loss.total))
        throw std::runtime_error("train: non-finite loss at step " + std::to_string(step_) +
                                 (last_ckpt.empty() ? std::string("; no checkpoint retained")
                                                    : "; last good checkpoint: " + last_ckpt));
      if (cfg_.checkpoint_interval > 0 && step_ % cfg_.checkpoint_interval == 0 &&
          step_ < cfg_.steps) {
        last_ckpt = out_dir + "/ckpt_" + std::to_string(step_) + ".ckpt";
        save_checkpoint(*model_, cfg_, step_, adam_t_, adam_m_, adam_v_, rng_, last_ckpt);
      }
    }
    const std::string final_path = out_dir + "/final.ckpt";
    save_checkpoint(*model_, cfg_, step_, adam_t_, adam_m_, adam_v_, rng_, final_path);
    return final_path;
  }

  // One optimization step: sample, evaluate, reduce, clip, update.
  LossBreakdown step_once() {
    const int64_t bu = unpaired_pool_.empty() ? 0 : cfg_.unpaired_batch;
    const int64_t bp = cfg_.paired_batch;

    struct Item {
      const Features* f;
      bool paired;
    };
    std::vector<Item> items;
    for (int64_t i = 0; i < bp; ++i)
      items.push_back({&features_[sample(paired_pool_)], true});
    for (int64_t i = 0; i < bu; ++i)
      items.push_back({&features_[sample(unpaired_pool_)], false});

    const double stop_w = cfg_.weights.stop;
    const double commit_w = cfg_.weights.commitment;
    const double lambda = cfg_.weights.lambda_recon;
    const int64_t n_synth = bp + bu;

    struct ItemResult {
      double recon = 0, ctc = 0, tts = 0, stop = 0, commit = 0;
      std::vector<std::vector<double>> grads;  // aligned with the registry
    };
    std::vector<ItemResult> results(items.size());

    auto process = [&](size_t i) {
      const Item& item = items[i];
      ItemResult& res = results[i];
      Tensor composite;
      if (item.paired) {
        Tensor ctc = model_->ctc_paired(*item.f);
        Model::TtsTerm tts = model_->tts_paired(*item.f);
        res.ctc = ctc.item();
        res.tts = tts.spectral.item();
        res.stop = tts.stop_bce.item();
        composite = add(axpb(ctc, 1.0 / static_cast<double>(bp), 0.0),
                        axpb(tts.spectral, 1.0 / static_cast<double>(bp), 0.0));
        if (stop_w != 0.0)
          composite = add(composite, axpb(tts.stop_bce, stop_w / static_cast<double>(n_synth), 0.0));
      } else {
        Model::ReconTerm recon =
            model_->reconstruct_unpaired(*item.f, cfg_.st_enabled, commit_w != 0.0);
        res.recon = recon.spectral.item();
        res.stop = recon.stop_bce.item();
        composite = axpb(recon.spectral, lambda / static_cast<double>(bu), 0.0);
        if (stop_w != 0.0)
          composite = add(composite, axpb(recon.stop_bce, stop_w / static_cast<double>(n_synth), 0.0));
        if (commit_w != 0.0) {
          res.commit = recon.commitment.item();
          composite = add(composite, axpb(recon.commitment, commit_w / static_cast<double>(bu), 0.0));
        }
      }
      GradStore store = backward(composite);
      const auto& params = model_->params().params();
      res.grads.resize(params.size());
      for (size_t p = 0; p < params.size(); ++p) {
        const std::vector<double>* g = store.find(params[p].raw());
        if (g) res.grads[p] = *g;
      }
    };

    run_parallel(items.size(), process);

    // Reduce in utterance order into the parameter gradient buffers.
    auto& params = model_->params().params();
    for (const Tensor& p : params) {
      Tensor t = p;
      t.zero_grad();
    }
    for (const ItemResult& res : results) {
      for (size_t p = 0; p < params.size(); ++p) {
        if (res.grads[p].empty()) continue;
        Tensor t = params[p];
        auto& buf = t.grad_buffer();
        for (size_t k = 0; k < buf.size(); ++k) buf[k] += res.grads[p][k];
      }
    }

    clip_and_update();
    ++step_;

    LossBreakdown out;
    for (const ItemResult& res : results) {
      out.recon += res.recon;
      out.ctc += res.ctc;
      out.tts += res.tts;
    }
    if (bu > 0) out.recon /= static_cast<double>(bu);
    out.ctc /= static_cast<double>(bp);
    out.tts /= static_cast<double>(bp);
    double stop_sum = 0, commit_sum = 0;
    for (const ItemResult& res : results) {
      stop_sum += res.stop;
      commit_sum += res.commit;
    }
    out.aux = stop_w * stop_sum / static_cast<double>(n_synth);
    if (commit_w != 0.0 && bu > 0) out.aux += commit_w * commit_sum / static_cast<double>(bu);
    out.total = lambda * out.recon + out.ctc + out.tts + out.aux;
    return out;
  }

  // Post-clip global gradient norm of the most recent step (for audits).
  double last_grad_norm() const { return last_grad_norm_; }

 private:
  size_t sample(const std::vector<size_t>& pool) {
    return pool[static_cast<size_t>(rng_.uniform_int(0, static_cast<int64_t>(pool.size()) - 1))];
  }

  void run_parallel(size_t n, const std::function<void(size_t)>& fn) {
    const int threads = std::min<int>(cfg_.threads, static_cast<int>(n));
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

  void clip_and_update() {
    auto& params = model_->params().params();
    double norm2 = 0.0;
    for (const Tensor& p : params) {
      Tensor t = p;
      for (double g : t.grad_buffer()) norm2 += g * g;
    }
    const double norm = std::sqrt(norm2);
    const double scale = norm > cfg_.clip_norm ? cfg_.clip_norm / norm : 1.0;
    last_grad_norm_ = norm * scale;

    ++adam_t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(adam_t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(adam_t_));
    for (size_t i = 0; i < params.size(); ++i) {
      Tensor t = params[i];
      auto& val = t.value();
      auto& g = t.grad_buffer();
      auto& m = adam_m_[i];
      auto& v = adam_v_[i];
      for (size_t k = 0; k < val.size(); ++k) {
        const double gk = g[k] * scale;
        m[k] = cfg_.beta1 * m[k] + (1.0 - cfg_.beta1) * gk;
        v[k] = cfg_.beta2 * v[k] + (1.0 - cfg_.beta2) * gk * gk;
        const double mhat = m[k] / bc1;
        const double vhat = v[k] / bc2;
        val[k] -= cfg_.learning_rate * mhat / (std::sqrt(vhat) + cfg_.adam_eps);
      }
    }
  }

  // Codebook rows live on the sphere whose radius is the RMS norm of
  // encoder outputs measured over a warm-up pass.
  void warmup_codebook() {
    const size_t n = std::min<size_t>(static_cast<size_t>(cfg_.warmup_utterances), features_.size());
    double sum2 = 0.0;
    int64_t count = 0;
    for (size_t i = 0; i < n; ++i) {
      Tensor h = model_->encoder().encode(features_[i].mel);
      const int64_t T = h.shape()[0], D = h.shape()[1];
      for (int64_t t = 0; t < T; ++t) {
        double r2 = 0.0;
        for (int64_t d = 0; d < D; ++d) {
          const double v = h.value()[static_cast<size_t>(t * D + d)];
          r2 += v * v;
        }
        sum2 += r2;
        ++count;
      }
    }
    const double radius = count > 0 ? std::sqrt(sum2 / static_cast<double>(count)) : 1.0;
    model_->reinit_codebook(radius, rng_);
  }

  TrainConfig cfg_;
  Rng rng_;
  std::unique_ptr<Model> model_;
  std::vector<Features> features_;
  std::vector<size_t> paired_pool_, unpaired_pool_;
  std::vector<std::vector<double>> adam_m_, adam_v_;
  int64_t adam_t_ = 0;
  int64_t step_ = 0;
  double last_grad_norm_ = 0.0;
};

}  // namespace vqtts
