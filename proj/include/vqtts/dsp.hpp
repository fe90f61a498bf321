#pragma once

// STFT analysis, mel projection, Griffin-Lim synthesis, SNR-controlled
// noise mixing and the differential spectral loss. All pure functions.

#include <complex>
#include <cmath>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "vqtts/ops.hpp"
#include "vqtts/rng.hpp"
#include "vqtts/tensor.hpp"
#include "vqtts/wav.hpp"

namespace vqtts {

struct StftConfig {
  int64_t window_length = 400;
  int64_t hop_length = 160;
  int64_t fft_size = 512;
  std::string window = "hann";
  int64_t mel_bands = 40;
  double mel_fmin = 0.0;
  double mel_fmax = 8000.0;
  int sample_rate = 16000;

  int64_t bins() const { return fft_size / 2 + 1; }

  void validate() const {
    if (!(hop_length >= 1 && hop_length <= window_length && window_length <= fft_size))
      throw std::invalid_argument("StftConfig: need hop <= window <= fft, got hop=" +
                                  std::to_string(hop_length) + " window=" +
                                  std::to_string(window_length) + " fft=" + std::to_string(fft_size));
    if ((fft_size & (fft_size - 1)) != 0)
      throw std::invalid_argument("StftConfig: fft size must be a power of two, got " +
                                  std::to_string(fft_size));
    if (mel_bands < 1) throw std::invalid_argument("StftConfig: mel bands must be >= 1");
    if (window != "hann" && window != "rect")
      throw std::invalid_argument("StftConfig: unknown window '" + window + "'");
  }
};

enum class SpecDomain { linear, mel };

struct Spectrogram {
  int64_t frames = 0;
  int64_t bins = 0;
  std::vector<double> data;  // row-major frames x bins, non-negative
  SpecDomain domain = SpecDomain::linear;
  StftConfig config;

  double& at(int64_t t, int64_t f) { return data[static_cast<size_t>(t * bins + f)]; }
  double at(int64_t t, int64_t f) const { return data[static_cast<size_t>(t * bins + f)]; }
};

namespace detail {

inline void fft_inplace(std::vector<std::complex<double>>& a, bool inverse) {
  const size_t n = a.size();
  if (n == 0 || (n & (n - 1)) != 0)
    throw std::invalid_argument("fft: length must be a power of two, got " + std::to_string(n));
  for (size_t i = 1, j = 0; i < n; ++i) {
    size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (size_t len = 2; len <= n; len <<= 1) {
    const double ang = 2.0 * M_PI / static_cast<double>(len) * (inverse ? 1.0 : -1.0);
    const std::complex<double> wlen(std::cos(ang), std::sin(ang));
    for (size_t i = 0; i < n; i += len) {
      std::complex<double> w(1.0, 0.0);
      for (size_t j = 0; j < len / 2; ++j) {
        const std::complex<double> u = a[i + j];
        const std::complex<double> v = a[i + j + len / 2] * w;
        a[i + j] = u + v;
        a[i + j + len / 2] = u - v;
        w *= wlen;
      }
    }
  }
  if (inverse)
    for (auto& v : a) v /= static_cast<double>(n);
}

inline std::vector<double> make_window(const StftConfig& cfg) {
  std::vector<double> w(static_cast<size_t>(cfg.window_length), 1.0);
  if (cfg.window == "hann")
    for (int64_t i = 0; i < cfg.window_length; ++i)
      w[static_cast<size_t>(i)] =
          0.5 - 0.5 * std::cos(2.0 * M_PI * static_cast<double>(i) /
                               static_cast<double>(cfg.window_length));
  return w;
}

}  // namespace detail

// Complex STFT, one row of fft/2+1 bins per frame.
// T = 1 + floor((N - window) / hop); requires N >= window.
inline std::vector<std::vector<std::complex<double>>> stft_complex(const AudioBuffer& audio,
                                                                   const StftConfig& cfg) {
  cfg.validate();
  const int64_t n = static_cast<int64_t>(audio.samples.size());
  if (n < cfg.window_length)
    throw std::invalid_argument("stft: buffer length " + std::to_string(n) +
                                " shorter than one window (" + std::to_string(cfg.window_length) + ")");
  const int64_t frames = 1 + (n - cfg.window_length) / cfg.hop_length;
  const int64_t bins = cfg.bins();
  const std::vector<double> w = detail::make_window(cfg);

  std::vector<std::vector<std::complex<double>>> out(static_cast<size_t>(frames));
  std::vector<std::complex<double>> buf(static_cast<size_t>(cfg.fft_size));
  for (int64_t t = 0; t < frames; ++t) {
    std::fill(buf.begin(), buf.end(), std::complex<double>(0.0, 0.0));
    const int64_t off = t * cfg.hop_length;
    for (int64_t j = 0; j < cfg.window_length; ++j)
      buf[static_cast<size_t>(j)] = audio.samples[static_cast<size_t>(off + j)] * w[static_cast<size_t>(j)];
    detail::fft_inplace(buf, false);
    out[static_cast<size_t>(t)].assign(buf.begin(), buf.begin() + bins);
  }
  return out;
}

inline Spectrogram stft(const AudioBuffer& audio, const StftConfig& cfg) {
  auto cplx = stft_complex(audio, cfg);
  Spectrogram s;
  s.frames = static_cast<int64_t>(cplx.size());
  s.bins = cfg.bins();
  s.domain = SpecDomain::linear;
  s.config = cfg;
  s.data.resize(static_cast<size_t>(s.frames * s.bins));
  for (int64_t t = 0; t < s.frames; ++t)
    for (int64_t f = 0; f < s.bins; ++f) s.at(t, f) = std::abs(cplx[static_cast<size_t>(t)][static_cast<size_t>(f)]);
  return s;
}

// Least-squares inverse: overlap-add of w * idft(frame), normalised by the
// accumulated squared window.
inline AudioBuffer istft(const std::vector<std::vector<std::complex<double>>>& frames,
                         const StftConfig& cfg) {
  cfg.validate();
  const int64_t T = static_cast<int64_t>(frames.size());
  const int64_t n = cfg.window_length + (T - 1) * cfg.hop_length;
  const int64_t bins = cfg.bins();
  const std::vector<double> w = detail::make_window(cfg);

  std::vector<double> acc(static_cast<size_t>(n), 0.0);
  std::vector<double> den(static_cast<size_t>(n), 0.0);
  std::vector<std::complex<double>> buf(static_cast<size_t>(cfg.fft_size));
  for (int64_t t = 0; t < T; ++t) {
    const auto& fr = frames[static_cast<size_t>(t)];
    if (static_cast<int64_t>(fr.size()) != bins)
      throw std::invalid_argument("istft: frame has " + std::to_string(fr.size()) +
                                  " bins, expected " + std::to_string(bins));
    for (int64_t k = 0; k < bins; ++k) buf[static_cast<size_t>(k)] = fr[static_cast<size_t>(k)];
    for (int64_t k = bins; k < cfg.fft_size; ++k)
      buf[static_cast<size_t>(k)] = std::conj(fr[static_cast<size_t>(cfg.fft_size - k)]);
    detail::fft_inplace(buf, true);
    const int64_t off = t * cfg.hop_length;
    for (int64_t j = 0; j < cfg.window_length; ++j) {
      acc[static_cast<size_t>(off + j)] += w[static_cast<size_t>(j)] * buf[static_cast<size_t>(j)].real();
      den[static_cast<size_t>(off + j)] += w[static_cast<size_t>(j)] * w[static_cast<size_t>(j)];
    }
  }
  AudioBuffer out;
  out.sample_rate = cfg.sample_rate;
  out.samples.resize(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i)
    out.samples[static_cast<size_t>(i)] = den[static_cast<size_t>(i)] > 1e-12
                                              ? acc[static_cast<size_t>(i)] / den[static_cast<size_t>(i)]
                                              : 0.0;
  return out;
}

// ---------------------------------------------------------------------------
// mel filterbank

inline double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
inline double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

// mel_bands x bins matrix of triangular weights; per-linear-bin column sums
// are <= 1.
inline std::vector<double> mel_filterbank(const StftConfig& cfg) {
  const int64_t F = cfg.bins();
  const int64_t M = cfg.mel_bands;
  if (M > F)
    throw std::invalid_argument("mel_filterbank: " + std::to_string(M) + " bands exceed " +
                                std::to_string(F) + " linear bins");
  const double mel_lo = hz_to_mel(cfg.mel_fmin);
  const double mel_hi = hz_to_mel(cfg.mel_fmax);
  std::vector<double> points(static_cast<size_t>(M + 2));
  for (int64_t i = 0; i < M + 2; ++i)
    points[static_cast<size_t>(i)] =
        mel_lo + (mel_hi - mel_lo) * static_cast<double>(i) / static_cast<double>(M + 1);

  std::vector<double> fb(static_cast<size_t>(M * F), 0.0);
  for (int64_t m = 0; m < M; ++m) {
    const double lo = points[static_cast<size_t>(m)];
    const double center = points[static_cast<size_t>(m + 1)];
    const double hi = points[static_cast<size_t>(m + 2)];
    for (int64_t f = 0; f < F; ++f) {
      const double hz = static_cast<double>(f) * cfg.sample_rate / static_cast<double>(cfg.fft_size);
      const double mel = hz_to_mel(hz);
      double wgt = 0.0;
      if (mel > lo && mel < hi)
        wgt = mel <= center ? (mel - lo) / (center - lo) : (hi - mel) / (hi - center);
      fb[static_cast<size_t>(m * F + f)] = wgt;
    }
  }
  return fb;
}

inline Spectrogram mel_project(const Spectrogram& linear, const StftConfig& cfg) {
  if (linear.domain != SpecDomain::linear)
    throw std::invalid_argument("mel_project: input spectrogram is not linear-tagged");
  const std::vector<double> fb = mel_filterbank(cfg);
  const int64_t F = linear.bins, M = cfg.mel_bands, T = linear.frames;
  Spectrogram out;
  out.frames = T;
  out.bins = M;
  out.domain = SpecDomain::mel;
  out.config = cfg;
  out.data.assign(static_cast<size_t>(T * M), 0.0);
  CMatMap X(linear.data.data(), T, F), W(fb.data(), M, F);
  MatMap(out.data.data(), T, M).noalias() = X * W.transpose();
  return out;
}

// ---------------------------------------------------------------------------
// Griffin-Lim

struct GriffinLimResult {
  AudioBuffer audio;
  // Magnitude-projection distance after the initial inverse and after each
  // iteration, in the full-spectrum Frobenius norm (conjugate bins counted).
  std::vector<double> distance_trace;
  double final_relative_error = 0.0;
};

namespace detail {

inline double spectral_distance(const std::vector<std::vector<std::complex<double>>>& frames,
                                const Spectrogram& target) {
  double acc = 0.0;
  const int64_t F = target.bins;
  const int64_t nfft = target.config.fft_size;
  for (int64_t t = 0; t < target.frames; ++t)
    for (int64_t f = 0; f < F; ++f) {
      const double d = std::abs(frames[static_cast<size_t>(t)][static_cast<size_t>(f)]) - target.at(t, f);
      const double wgt = (f == 0 || f == nfft / 2) ? 1.0 : 2.0;
      acc += wgt * d * d;
    }
  return std::sqrt(acc);
}

inline double spectral_norm(const Spectrogram& s) {
  double acc = 0.0;
  const int64_t nfft = s.config.fft_size;
  for (int64_t t = 0; t < s.frames; ++t)
    for (int64_t f = 0; f < s.bins; ++f) {
      const double wgt = (f == 0 || f == nfft / 2) ? 1.0 : 2.0;
      acc += wgt * s.at(t, f) * s.at(t, f);
    }
  return std::sqrt(acc);
}

}  // namespace detail

inline GriffinLimResult griffin_lim(const Spectrogram& spec, int64_t iterations) {
  if (spec.domain != SpecDomain::linear)
    throw std::invalid_argument("griffin_lim: linear magnitude spectrogram required");
  if (iterations < 0) throw std::invalid_argument("griffin_lim: iterations must be >= 0");
  for (double v : spec.data)
    if (v < 0.0)
      throw std::invalid_argument("griffin_lim: negative magnitude " + std::to_string(v));

  const StftConfig& cfg = spec.config;
  const int64_t T = spec.frames, F = spec.bins;

  // Zero-phase start: frames are the (real, non-negative) magnitudes.
  std::vector<std::vector<std::complex<double>>> frames(
      static_cast<size_t>(T), std::vector<std::complex<double>>(static_cast<size_t>(F)));
  for (int64_t t = 0; t < T; ++t)
    for (int64_t f = 0; f < F; ++f) frames[static_cast<size_t>(t)][static_cast<size_t>(f)] = spec.at(t, f);

  GriffinLimResult res;
  AudioBuffer x = istft(frames, cfg);
  auto analyzed = stft_complex(x, cfg);
  res.distance_trace.push_back(detail::spectral_distance(analyzed, spec));

  for (int64_t it = 0; it < iterations; ++it) {
    for (int64_t t = 0; t < T; ++t)
      for (int64_t f = 0; f < F; ++f) {
        const std::complex<double> v = analyzed[static_cast<size_t>(t)][static_cast<size_t>(f)];
        const double mag = std::abs(v);
        frames[static_cast<size_t>(t)][static_cast<size_t>(f)] =
            mag > 1e-300 ? v / mag * spec.at(t, f) : std::complex<double>(spec.at(t, f), 0.0);
      }
    x = istft(frames, cfg);
    analyzed = stft_complex(x, cfg);
    res.distance_trace.push_back(detail::spectral_distance(analyzed, spec));
  }

  const double norm = detail::spectral_norm(spec);
  res.final_relative_error = norm > 0.0 ? res.distance_trace.back() / norm : 0.0;
  for (double& s : x.samples) s = std::max(-1.0, std::min(1.0, s));
  res.audio = std::move(x);
  return res;
}

// ---------------------------------------------------------------------------
// noise mixing

inline double mean_power(const std::vector<double>& x) {
  double p = 0.0;
  for (double v : x) p += v * v;
  return x.empty() ? 0.0 : p / static_cast<double>(x.size());
}

// Scales `noise` so that 10*log10(P_clean / P_noise) = snr_db and adds it.
// An infinite snr returns the clean signal unchanged. Noise is tiled or
// cropped from the start to match the clean length.
inline AudioBuffer mix_noise(const AudioBuffer& clean, const AudioBuffer& noise, double snr_db) {
  if (std::isinf(snr_db) && snr_db > 0) return clean;
  const double p_clean = mean_power(clean.samples);
  if (p_clean <= 0.0) throw std::invalid_argument("mix_noise: clean signal has zero power");
  if (noise.samples.empty()) throw std::invalid_argument("mix_noise: empty noise buffer");

  std::vector<double> tiled(clean.samples.size());
  for (size_t i = 0; i < tiled.size(); ++i) tiled[i] = noise.samples[i % noise.samples.size()];
  const double p_noise = mean_power(tiled);
  if (p_noise <= 0.0) throw std::invalid_argument("mix_noise: noise signal has zero power");

  const double scale = std::sqrt(p_clean / (p_noise * std::pow(10.0, snr_db / 10.0)));
  AudioBuffer out;
  out.sample_rate = clean.sample_rate;
  out.samples.resize(clean.samples.size());
  for (size_t i = 0; i < tiled.size(); ++i) {
    const double v = clean.samples[i] + scale * tiled[i];
    out.samples[i] = std::max(-1.0, std::min(1.0, v));
  }
  return out;
}

// Seeded gaussian noise band-limited to [f_lo, f_hi] by spectral masking.
inline AudioBuffer make_band_noise(Rng& rng, size_t length, int sample_rate, double f_lo,
                                   double f_hi, double rms = 0.1) {
  size_t nfft = 1;
  while (nfft < length) nfft <<= 1;
  std::vector<std::complex<double>> buf(nfft);
  for (auto& v : buf) v = rng.normal();
  detail::fft_inplace(buf, false);
  for (size_t k = 0; k < nfft; ++k) {
    const double hz = static_cast<double>(k <= nfft / 2 ? k : nfft - k) * sample_rate /
                      static_cast<double>(nfft);
    if (hz < f_lo || hz > f_hi) buf[k] = 0.0;
  }
  detail::fft_inplace(buf, true);
  AudioBuffer out;
  out.sample_rate = sample_rate;
  out.samples.resize(length);
  for (size_t i = 0; i < length; ++i) out.samples[i] = buf[i].real();
  const double cur = std::sqrt(mean_power(out.samples));
  if (cur > 0.0)
    for (double& s : out.samples) s *= rms / cur;
  return out;
}

// ---------------------------------------------------------------------------
// differential spectral loss

inline Tensor spectrogram_tensor(const Spectrogram& s) {
  return Tensor::from({s.frames, s.bins}, s.data);
}

// MSE(pred, target) + MSE of the temporal first differences.
inline Tensor differential_spectral_loss(const Tensor& pred, const Tensor& target) {
  detail::check_same_shape("differential_spectral_loss", pred, target);
  Tensor base = mse(pred, target);
  if (pred.shape()[0] < 2) return base;
  return add(base, mse(temporal_diff(pred), temporal_diff(target)));
}

inline Tensor differential_spectral_loss(const Tensor& pred, const Spectrogram& target) {
  return differential_spectral_loss(pred, spectrogram_tensor(target));
}

}  // namespace vqtts
