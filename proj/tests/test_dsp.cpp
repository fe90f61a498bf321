#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "vqtts/dsp.hpp"
#include "vqtts/rng.hpp"
#include "vqtts/wav.hpp"

using namespace vqtts;

namespace {

AudioBuffer sine(double freq, double seconds, int sr = 16000, double amp = 0.5) {
  AudioBuffer a;
  a.sample_rate = sr;
  const size_t n = static_cast<size_t>(seconds * sr);
  a.samples.resize(n);
  for (size_t i = 0; i < n; ++i)
    a.samples[i] = amp * std::sin(2.0 * M_PI * freq * static_cast<double>(i) / sr);
  return a;
}

std::filesystem::path temp_file(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / "vqtts_test";
  std::filesystem::create_directories(dir);
  return dir / name;
}

}  // namespace

TEST_CASE("wav round trip within quantization", "[dsp]") {
  AudioBuffer a = sine(440.0, 1.0);
  auto path = temp_file("sine.wav");

  SECTION("16-bit") {
    write_wav(a, path.string(), WavFormat::pcm16);
    AudioBuffer b = read_wav(path.string());
    REQUIRE(b.samples.size() == a.samples.size());
    CHECK(b.sample_rate == a.sample_rate);
    double max_err = 0.0;
    for (size_t i = 0; i < a.samples.size(); ++i)
      max_err = std::max(max_err, std::abs(a.samples[i] - b.samples[i]));
    CHECK(max_err <= 1.0 / 32768.0);
  }
  SECTION("32-bit float") {
    write_wav(a, path.string(), WavFormat::float32);
    AudioBuffer b = read_wav(path.string());
    REQUIRE(b.samples.size() == a.samples.size());
    double max_err = 0.0;
    for (size_t i = 0; i < a.samples.size(); ++i)
      max_err = std::max(max_err, std::abs(a.samples[i] - b.samples[i]));
    CHECK(max_err <= 1e-7);
  }
}

TEST_CASE("wav empty buffer round trips", "[dsp]") {
  AudioBuffer a;
  a.samples.clear();
  auto path = temp_file("empty.wav");
  write_wav(a, path.string());
  AudioBuffer b = read_wav(path.string());
  CHECK(b.samples.empty());
}

TEST_CASE("wav rejects stereo files", "[dsp]") {
  // Hand-build a 2-channel header.
  auto path = temp_file("stereo.wav");
  {
    AudioBuffer a = sine(440.0, 0.01);
    write_wav(a, path.string());
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(22);
    char two[2] = {2, 0};
    f.write(two, 2);
  }
  CHECK_THROWS_WITH(read_wav(path.string()), Catch::Matchers::ContainsSubstring("unsupported channels"));
}

TEST_CASE("stft shape law and zero signal", "[dsp]") {
  StftConfig cfg;
  AudioBuffer a;
  a.samples.assign(16000, 0.0);
  Spectrogram s = stft(a, cfg);
  CHECK(s.frames == 1 + (16000 - cfg.window_length) / cfg.hop_length);
  CHECK(s.bins == cfg.fft_size / 2 + 1);
  for (double v : s.data) CHECK(v == 0.0);

  a.samples.resize(static_cast<size_t>(cfg.window_length) - 1);
  CHECK_THROWS_AS(stft(a, cfg), std::invalid_argument);
}

TEST_CASE("stft sine at an exact bin peaks there", "[dsp]") {
  StftConfig cfg;
  cfg.window_length = 256;
  cfg.hop_length = 256;
  cfg.fft_size = 256;
  cfg.window = "rect";
  const int k = 16;
  AudioBuffer a = sine(static_cast<double>(k) * 16000.0 / 256.0, 0.1);
  Spectrogram s = stft(a, cfg);
  for (int64_t t = 0; t < s.frames; ++t) {
    int64_t arg = 0;
    for (int64_t f = 1; f < s.bins; ++f)
      if (s.at(t, f) > s.at(t, arg)) arg = f;
    CHECK(arg == k);
  }
}

TEST_CASE("windowed Parseval identity", "[dsp]") {
  StftConfig cfg;
  Rng rng(17);
  AudioBuffer a;
  a.samples.resize(1600);
  for (auto& v : a.samples) v = rng.uniform(-0.5, 0.5);
  Spectrogram s = stft(a, cfg);

  // Direct summation oracle: windowed frame energy must equal spectral
  // energy / fft_size with conjugate bins double-counted.
  std::vector<double> win(static_cast<size_t>(cfg.window_length));
  for (int64_t i = 0; i < cfg.window_length; ++i)
    win[static_cast<size_t>(i)] = 0.5 - 0.5 * std::cos(2.0 * M_PI * i / cfg.window_length);
  for (int64_t t = 0; t < s.frames; ++t) {
    double frame_energy = 0.0;
    for (int64_t j = 0; j < cfg.window_length; ++j) {
      const double v = win[static_cast<size_t>(j)] * a.samples[static_cast<size_t>(t * cfg.hop_length + j)];
      frame_energy += v * v;
    }
    double spec_energy = 0.0;
    for (int64_t f = 0; f < s.bins; ++f) {
      const double wgt = (f == 0 || f == cfg.fft_size / 2) ? 1.0 : 2.0;
      spec_energy += wgt * s.at(t, f) * s.at(t, f);
    }
    spec_energy /= static_cast<double>(cfg.fft_size);
    if (frame_energy > 1e-12) CHECK(spec_energy / frame_energy == Catch::Approx(1.0).epsilon(1e-9));
  }
}

TEST_CASE("mel filterbank properties", "[dsp]") {
  StftConfig cfg;
  const auto fb = mel_filterbank(cfg);
  const int64_t F = cfg.bins(), M = cfg.mel_bands;

  SECTION("column sums at most one") {
    for (int64_t f = 0; f < F; ++f) {
      double s = 0.0;
      for (int64_t m = 0; m < M; ++m) s += fb[static_cast<size_t>(m * F + f)];
      CHECK(s <= 1.0 + 1e-12);
    }
  }

  SECTION("impulse hits at most two bands") {
    Spectrogram lin;
    lin.frames = 1;
    lin.bins = F;
    lin.config = cfg;
    lin.data.assign(static_cast<size_t>(F), 0.0);
    lin.data[100] = 1.0;
    Spectrogram mel = mel_project(lin, cfg);
    int nonzero = 0;
    for (double v : mel.data) nonzero += v > 0.0 ? 1 : 0;
    CHECK(nonzero >= 1);
    CHECK(nonzero <= 2);
  }

  SECTION("all-ones spectrum equals per-filter weight sums") {
    Spectrogram lin;
    lin.frames = 1;
    lin.bins = F;
    lin.config = cfg;
    lin.data.assign(static_cast<size_t>(F), 1.0);
    Spectrogram mel = mel_project(lin, cfg);
    for (int64_t m = 0; m < M; ++m) {
      double row_sum = 0.0;
      for (int64_t f = 0; f < F; ++f) row_sum += fb[static_cast<size_t>(m * F + f)];
      CHECK(mel.at(0, m) == Catch::Approx(row_sum).margin(1e-12));
    }
  }

  SECTION("zero in, zero out") {
    Spectrogram lin;
    lin.frames = 2;
    lin.bins = F;
    lin.config = cfg;
    lin.data.assign(static_cast<size_t>(2 * F), 0.0);
    Spectrogram mel = mel_project(lin, cfg);
    for (double v : mel.data) CHECK(v == 0.0);
  }

  SECTION("too many bands rejected") {
    StftConfig bad = cfg;
    bad.mel_bands = F + 1;
    CHECK_THROWS_AS(mel_filterbank(bad), std::invalid_argument);
  }

  SECTION("mel tag required") {
    Spectrogram melspec;
    melspec.domain = SpecDomain::mel;
    melspec.frames = 1;
    melspec.bins = F;
    melspec.config = cfg;
    melspec.data.assign(static_cast<size_t>(F), 0.0);
    CHECK_THROWS_AS(mel_project(melspec, cfg), std::invalid_argument);
  }
}

TEST_CASE("mel projection is linear", "[dsp]") {
  StftConfig cfg;
  Rng rng(29);
  const int64_t F = cfg.bins();
  auto make = [&](double lo, double hi) {
    Spectrogram s;
    s.frames = 3;
    s.bins = F;
    s.config = cfg;
    s.data.resize(static_cast<size_t>(3 * F));
    for (auto& v : s.data) v = rng.uniform(lo, hi);
    return s;
  };
  Spectrogram s1 = make(0.0, 1.0), s2 = make(0.0, 2.0);
  const double a = 1.7, b = -0.4;
  Spectrogram mix = s1;
  for (size_t i = 0; i < mix.data.size(); ++i) mix.data[i] = a * s1.data[i] + b * s2.data[i];
  Spectrogram m1 = mel_project(s1, cfg), m2 = mel_project(s2, cfg), mm = mel_project(mix, cfg);
  for (size_t i = 0; i < mm.data.size(); ++i)
    CHECK(mm.data[i] == Catch::Approx(a * m1.data[i] + b * m2.data[i]).margin(1e-9));
}

TEST_CASE("griffin-lim basics", "[dsp]") {
  StftConfig cfg;

  SECTION("zero spectrogram gives zero signal") {
    Spectrogram s;
    s.frames = 10;
    s.bins = cfg.bins();
    s.config = cfg;
    s.data.assign(static_cast<size_t>(10 * s.bins), 0.0);
    GriffinLimResult r = griffin_lim(s, 5);
    for (double v : r.audio.samples) CHECK(v == 0.0);
  }

  SECTION("negative magnitudes rejected") {
    Spectrogram s;
    s.frames = 2;
    s.bins = cfg.bins();
    s.config = cfg;
    s.data.assign(static_cast<size_t>(2 * s.bins), 0.0);
    s.data[3] = -0.5;
    CHECK_THROWS_AS(griffin_lim(s, 1), std::invalid_argument);
  }

  SECTION("three-tone convergence and monotone projection distance") {
    AudioBuffer a = sine(440.0, 0.4, 16000, 0.3);
    AudioBuffer b = sine(1320.0, 0.4, 16000, 0.2);
    AudioBuffer c = sine(2500.0, 0.4, 16000, 0.15);
    for (size_t i = 0; i < a.samples.size(); ++i) a.samples[i] += b.samples[i] + c.samples[i];

    Spectrogram target = stft(a, cfg);
    GriffinLimResult r = griffin_lim(target, 60);

    REQUIRE(r.distance_trace.size() == 61);
    for (size_t i = 1; i < r.distance_trace.size(); ++i)
      CHECK(r.distance_trace[i] <= r.distance_trace[i - 1] + 1e-9);
    CHECK(r.final_relative_error <= 0.15);
    CHECK(r.distance_trace.back() < r.distance_trace.front());

    // Re-analysis preserves the declared frame/bin shape.
    Spectrogram again = stft(r.audio, cfg);
    CHECK(again.frames == target.frames);
    CHECK(again.bins == target.bins);
  }
}

TEST_CASE("differential spectral loss", "[dsp]") {
  SECTION("zero when prediction equals target") {
    Tensor p = Tensor::from({3, 2}, {1, 2, 3, 4, 5, 6}, true);
    Tensor t = Tensor::from({3, 2}, {1, 2, 3, 4, 5, 6});
    CHECK(differential_spectral_loss(p, t).item() == 0.0);
  }
  SECTION("constant-in-time inputs reduce to plain MSE") {
    Tensor p = Tensor::from({3, 2}, {1, 2, 1, 2, 1, 2}, true);
    Tensor t = Tensor::from({3, 2}, {0, 1, 0, 1, 0, 1});
    CHECK(differential_spectral_loss(p, t).item() == Catch::Approx(mse(p, t).item()));
  }
  SECTION("hand-evaluated 2x1 case") {
    Tensor p = Tensor::from({2, 1}, {0.0, 2.0}, true);
    Tensor t = Tensor::from({2, 1}, {0.0, 0.0});
    CHECK(differential_spectral_loss(p, t).item() == Catch::Approx(6.0));
  }
  SECTION("non-negative on random inputs") {
    Rng rng(31);
    for (int trial = 0; trial < 20; ++trial) {
      std::vector<double> pv(12), tv(12);
      for (auto& v : pv) v = rng.uniform(-2, 2);
      for (auto& v : tv) v = rng.uniform(-2, 2);
      Tensor p = Tensor::from({4, 3}, pv, true);
      Tensor t = Tensor::from({4, 3}, tv);
      CHECK(differential_spectral_loss(p, t).item() >= 0.0);
    }
  }
}

TEST_CASE("mix_noise hits the requested SNR", "[dsp]") {
  Rng rng(41);
  AudioBuffer clean;
  clean.samples.resize(8000);
  for (auto& v : clean.samples) v = rng.uniform(-0.3, 0.3);
  AudioBuffer noise;
  noise.samples.resize(5000);  // shorter: forces tiling
  for (auto& v : noise.samples) v = rng.uniform(-0.3, 0.3);

  SECTION("infinite snr returns clean unchanged") {
    AudioBuffer out = mix_noise(clean, noise, std::numeric_limits<double>::infinity());
    CHECK(out.samples == clean.samples);
  }

  SECTION("20 dB within 0.1 dB") {
    AudioBuffer out = mix_noise(clean, noise, 20.0);
    std::vector<double> noise_part(out.samples.size());
    for (size_t i = 0; i < out.samples.size(); ++i) noise_part[i] = out.samples[i] - clean.samples[i];
    const double snr = 10.0 * std::log10(mean_power(clean.samples) / mean_power(noise_part));
    CHECK(std::abs(snr - 20.0) <= 0.1);
  }

  SECTION("100 random draws in [10,30] dB") {
    for (int i = 0; i < 100; ++i) {
      const double want = rng.uniform(10.0, 30.0);
      AudioBuffer out = mix_noise(clean, noise, want);
      std::vector<double> noise_part(out.samples.size());
      for (size_t j = 0; j < out.samples.size(); ++j) noise_part[j] = out.samples[j] - clean.samples[j];
      const double got = 10.0 * std::log10(mean_power(clean.samples) / mean_power(noise_part));
      CHECK(std::abs(got - want) <= 0.1);
    }
  }

  SECTION("silent clean rejected") {
    AudioBuffer silent;
    silent.samples.assign(100, 0.0);
    CHECK_THROWS_AS(mix_noise(silent, noise, 20.0), std::invalid_argument);
  }
}

TEST_CASE("band noise is band-limited and deterministic", "[dsp]") {
  Rng r1(7), r2(7);
  AudioBuffer n1 = make_band_noise(r1, 4000, 16000, 300.0, 4000.0);
  AudioBuffer n2 = make_band_noise(r2, 4000, 16000, 300.0, 4000.0);
  CHECK(n1.samples == n2.samples);

  StftConfig cfg;
  Spectrogram s = stft(n1, cfg);
  double in_band = 0.0, out_band = 0.0;
  for (int64_t t = 0; t < s.frames; ++t)
    for (int64_t f = 0; f < s.bins; ++f) {
      const double hz = static_cast<double>(f) * 16000.0 / 512.0;
      if (hz >= 300.0 && hz <= 4000.0)
        in_band += s.at(t, f) * s.at(t, f);
      else
        out_band += s.at(t, f) * s.at(t, f);
    }
  CHECK(in_band > 50.0 * out_band);
}
