#pragma once

// Bundled gradient verification: every registered op on small random
// inputs, then the full combined loss (reconstruction + CTC + TTS + stop)
// of a reduced model on a 4-frame toy batch. Used by the gradcheck CLI
// subcommand and the acceptance suite.

#include "vqtts/eval.hpp"
#include "vqtts/gradcheck.hpp"
#include "vqtts/model.hpp"
#include "vqtts/nn.hpp"

namespace vqtts {

struct NamedCheck {
  std::string name;
  GradCheckReport report;
};

namespace detail {

inline Tensor rand_t(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::vector<double> d(static_cast<size_t>(shape_numel(shape)));
  for (double& v : d) v = rng.uniform(lo, hi);
  return Tensor::from(std::move(shape), std::move(d), true);
}

}  // namespace detail

// One grad_check per registered op on random small inputs.
inline std::vector<NamedCheck> op_grad_checks(uint64_t seed) {
  Rng rng(seed);
  std::vector<NamedCheck> out;
  auto run = [&](const std::string& name, const std::function<Tensor()>& fn,
                 std::vector<Tensor> inputs) {
    out.push_back({name, grad_check(fn, std::move(inputs), 1e-5)});
  };

  using detail::rand_t;
  Tensor a = rand_t({3, 4}, rng), b = rand_t({3, 4}, rng);
  run("add", [&] { return sum_t(add(a, b)); }, {a, b});
  run("sub", [&] { return sum_t(sub(a, b)); }, {a, b});
  run("mul", [&] { return sum_t(mul(a, b)); }, {a, b});
  run("axpb", [&] { return sum_t(axpb(a, 1.7, 0.3)); }, {a});
  run("sum", [&] { return sum_t(mul(a, a)); }, {a});
  run("mean", [&] { return mean_t(mul(a, a)); }, {a});
  run("mse", [&] { return mse(a, b); }, {a, b});

  Tensor rp = rand_t({6}, rng, 0.2, 1.0), rn = rand_t({6}, rng, -1.0, -0.2);
  run("relu", [&] { return sum_t(add(relu(rp), relu(rn))); }, {rp, rn});
  Tensor u = rand_t({5}, rng);
  run("tanh", [&] { return sum_t(tanh_t(u)); }, {u});
  run("sigmoid", [&] { return sum_t(sigmoid(u)); }, {u});
  run("exp", [&] { return sum_t(exp_t(u)); }, {u});
  Tensor up = rand_t({5}, rng, 0.5, 2.0);
  run("log", [&] { return sum_t(log_t(up)); }, {up});

  Tensor A = rand_t({3, 4}, rng), B = rand_t({4, 2}, rng);
  run("matmul", [&] { return sum_t(mul(matmul(A, B), matmul(A, B))); }, {A, B});
  Tensor W = rand_t({4, 3}, rng), xv = rand_t({3}, rng), bv = rand_t({4}, rng);
  run("affine", [&] { return sum_t(tanh_t(affine(W, xv, bv))); }, {W, xv, bv});
  Tensor rv = rand_t({4}, rng);
  run("add_rowvec", [&] { return sum_t(mul(add_rowvec(a, rv), add_rowvec(a, rv))); }, {a, rv});

  Tensor lg = rand_t({5}, rng, -2.0, 2.0);
  run("bce_with_logits", [&] { return bce_with_logits(lg, {1, 0, 1, 1, 0}); }, {lg});
  Tensor sm = rand_t({3, 5}, rng), smw = rand_t({3, 5}, rng);
  run("softmax_rows", [&] { return sum_t(mul(softmax_rows(sm), smw)); }, {sm});
  Tensor H = rand_t({4, 3}, rng), E = rand_t({5, 3}, rng), dw = rand_t({4, 5}, rng);
  run("neg_l2_distance", [&] { return sum_t(mul(neg_l2_distance(H, E), dw)); }, {H, E});
  Tensor td = rand_t({5, 3}, rng);
  run("temporal_diff", [&] { return sum_t(mul(temporal_diff(td), temporal_diff(td))); }, {td});

  Tensor c1 = rand_t({2, 3}, rng), c2 = rand_t({4, 3}, rng), cw = rand_t({6, 3}, rng);
  run("concat", [&] { return sum_t(mul(concat({c1, c2}), cw)); }, {c1, c2});
  run("rows", [&] { return sum_t(mul(rows(cw, 1, 3), rows(cw, 1, 3))); }, {cw});
  Tensor sv = rand_t({7}, rng);
  run("slice_vec", [&] { return sum_t(mul(slice_vec(sv, 2, 4), slice_vec(sv, 2, 4))); }, {sv});
  run("select", [&] { return mul(select(cw, 5), select(cw, 5)); }, {cw});
  run("reshape", [&] { return sum_t(mul(reshape(cw, {3, 6}), reshape(cw, {3, 6}))); }, {cw});
  Tensor tbl = rand_t({5, 3}, rng), ew = rand_t({4, 3}, rng);
  run("embedding_lookup", [&] { return sum_t(mul(embedding_lookup(tbl, {1, 3, 3, 0}), ew)); }, {tbl});
  Tensor seg = rand_t({6, 2}, rng), segw = rand_t({3, 2}, rng);
  std::vector<std::pair<int64_t, int64_t>> runs = {{0, 2}, {2, 1}, {3, 3}};
  run("segment_mean", [&] { return sum_t(mul(segment_mean(seg, runs), segw)); }, {seg});

  Tensor cx = rand_t({7, 2}, rng), cW = rand_t({3, 10}, rng), cb = rand_t({3}, rng);
  run("conv1d", [&] {
        Tensor y = conv1d(cx, cW, cb, 5, 2, 2, 2);
        return sum_t(mul(y, y));
      },
      {cx, cW, cb});
  Tensor la = rand_t({1}, rng, -2.0, 0.0), lb = rand_t({1}, rng, -3.0, 0.0);
  run("logaddexp", [&] { return logaddexp(la, lb); }, {la, lb});

  Tensor sth = rand_t({4}, rng), stq = rand_t({4}, rng), stt = rand_t({4}, rng);
  run("straight_through",
      [&] { return mse(straight_through(sth, Tensor::from(stq.shape(), stq.value())), stt); },
      {sth});

  ParamRegistry reg;
  Rng prng(seed + 1);
  GruCell cell;
  cell.init(reg, "gru", 3, 4, prng);
  Tensor gx = rand_t({3}, rng), gh = rand_t({4}, rng);
  run("gru_step", [&] { return sum_t(mul(cell.step(gx, gh), cell.step(gx, gh))); },
      {gx, gh, cell.Wx, cell.Wh, cell.bx, cell.bh});

  return out;
}

// Reduced-width model for the full-loss check: small enough that exact
// per-coordinate finite differences finish in seconds.
inline ModelConfig gradcheck_model_config() {
  ModelConfig m;
  m.stft.window_length = 32;
  m.stft.hop_length = 16;
  m.stft.fft_size = 32;
  m.stft.mel_bands = 6;
  m.encoder = {6, 6, 3, 2, 6, 6};
  m.decoder.code_dim = 6;
  m.decoder.code_channels = 6;
  m.decoder.code_conv_width = 3;
  m.decoder.code_hidden = 6;
  m.decoder.attention_dim = 6;
  m.decoder.location_filters = 4;
  m.decoder.location_width = 3;
  m.decoder.prenet_dim = 6;
  m.decoder.rnn1_width = 8;
  m.decoder.rnn2_width = 8;
  m.decoder.postnet_layers = 3;
  m.decoder.postnet_channels = 4;
  m.decoder.postnet_width = 3;
  m.decoder.out_bins = 17;
  m.decoder.reduction = 2;
  m.decoder.max_frames = 16;
  m.decoder.speaker_dim = 4;
  return m;
}

// grad_check of the combined training loss (lambda-weighted unpaired
// reconstruction + CTC + TTS + stop terms) on a 4-frame toy batch, with
// respect to every model parameter.
inline NamedCheck full_loss_grad_check(uint64_t seed, double lambda = 10.0) {
  ModelConfig cfg = gradcheck_model_config();
  auto inventory = PhonemeInventory::from_phonemes({"aa", "bb", "cc"});
  Model model(cfg, inventory, {"spk00", "spk01"}, seed);

  Rng rng(seed + 7);
  const int64_t T = 4;
  auto frames = [&](int64_t bins, double lo, double hi) {
    std::vector<double> v(static_cast<size_t>(T * bins));
    for (double& x : v) x = rng.uniform(lo, hi);
    return v;
  };
  Features unpaired;
  unpaired.id = "u0";
  unpaired.speaker = "spk01";
  unpaired.paired = false;
  unpaired.linear = Tensor::from({T, cfg.decoder.out_bins}, frames(cfg.decoder.out_bins, 0.0, 1.0));
  unpaired.mel = Tensor::from({T, cfg.stft.mel_bands}, frames(cfg.stft.mel_bands, 0.0, 1.0));

  Features paired = unpaired;
  paired.id = "p0";
  paired.speaker = "spk00";
  paired.paired = true;
  paired.phonemes = std::vector<std::string>{"aa", "cc"};
  paired.linear = Tensor::from({T, cfg.decoder.out_bins}, frames(cfg.decoder.out_bins, 0.0, 1.0));
  paired.mel = Tensor::from({T, cfg.stft.mel_bands}, frames(cfg.stft.mel_bands, 0.0, 1.0));

  auto fn = [&]() -> Tensor {
    Model::ReconTerm recon = model.reconstruct_unpaired(unpaired, true);
    Tensor ctc = model.ctc_paired(paired);
    Model::TtsTerm tts = model.tts_paired(paired);
    Tensor aux = axpb(add(recon.stop_bce, tts.stop_bce), 0.5, 0.0);
    return add(add(add(axpb(recon.spectral, lambda, 0.0), ctc), tts.spectral), aux);
  };
  return {"full_loss_eq5", grad_check(fn, model.params().params(), 1e-5)};
}

}  // namespace vqtts
