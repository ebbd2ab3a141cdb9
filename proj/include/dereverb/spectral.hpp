#pragma once

// STFT analysis/synthesis and complex spectrogram containers.

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <numbers>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <unsupported/Eigen/FFT>

#include "dereverb/error.hpp"

namespace dereverb {

using Complex = std::complex<double>;

/// Time-domain samples for one or more channels at a common sample rate.
struct MultichannelWaveform {
  std::vector<std::vector<double>> channels;
  double sample_rate = 16000.0;

  MultichannelWaveform() = default;
  MultichannelWaveform(std::size_t channel_count, std::size_t length, double fs)
      : channels(channel_count, std::vector<double>(length, 0.0)), sample_rate(fs) {}
  MultichannelWaveform(std::vector<std::vector<double>> data, double fs)
      : channels(std::move(data)), sample_rate(fs) {}

  std::size_t channel_count() const noexcept { return channels.size(); }
  std::size_t length() const noexcept { return channels.empty() ? 0 : channels.front().size(); }

  std::vector<double>& operator[](std::size_t p) { return channels[p]; }
  const std::vector<double>& operator[](std::size_t p) const { return channels[p]; }

  /// Throws InvalidInput unless every invariant of the type holds.
  void validate() const {
    detail::require(!channels.empty(), ErrorKind::InvalidInput, "waveform has no channels");
    detail::require(sample_rate > 0.0 && std::isfinite(sample_rate), ErrorKind::InvalidInput,
                    "sample rate must be positive");
    const std::size_t n = channels.front().size();
    for (const auto& ch : channels) {
      detail::require(ch.size() == n, ErrorKind::InvalidInput, "channels differ in length");
      for (double v : ch) {
        detail::require(std::isfinite(v), ErrorKind::InvalidInput, "non-finite sample");
      }
    }
  }

  MultichannelWaveform select(std::span<const std::size_t> indices) const {
    MultichannelWaveform out;
    out.sample_rate = sample_rate;
    for (std::size_t i : indices) {
      detail::require(i < channels.size(), ErrorKind::InvalidInput, "channel index out of range");
      out.channels.push_back(channels[i]);
    }
    return out;
  }
};

struct StftConfig {
  std::size_t window_samples = 512;
  std::size_t hop_samples = 128;
  std::size_t fft_size = 512;
  double sample_rate = 16000.0;

  std::size_t bins() const noexcept { return fft_size / 2 + 1; }
  /// Zeros prepended before analysis; chosen so every real sample sees the
  /// full overlap of windows.
  std::size_t front_padding() const noexcept { return window_samples - hop_samples; }

  void validate() const {
    using detail::require;
    require(window_samples >= 2 && hop_samples >= 1, ErrorKind::Configuration,
            "window and hop must be positive");
    require(window_samples % hop_samples == 0, ErrorKind::Configuration,
            "hop must divide the window length");
    require(window_samples / hop_samples >= 2, ErrorKind::Configuration,
            "square-root Hann synthesis needs at least 2x overlap");
    require(fft_size >= window_samples && fft_size % 2 == 0, ErrorKind::Configuration,
            "fft size must be even and at least the window length");
    require(sample_rate > 0.0, ErrorKind::Configuration, "sample rate must be positive");
  }

  std::size_t frames_for(std::size_t length) const noexcept {
    return (length + hop_samples - 1) / hop_samples + window_samples / hop_samples - 1;
  }
};

/// Real-valued tensor indexed (channel, frame, bin).
class RealTensor {
 public:
  RealTensor() = default;
  RealTensor(std::size_t channels, std::size_t frames, std::size_t bins, double fill = 0.0)
      : channels_(channels), frames_(frames), bins_(bins),
        data_(channels * frames * bins, fill) {}

  std::size_t channels() const noexcept { return channels_; }
  std::size_t frames() const noexcept { return frames_; }
  std::size_t bins() const noexcept { return bins_; }
  std::size_t size() const noexcept { return data_.size(); }

  double& operator()(std::size_t p, std::size_t t, std::size_t f) {
    return data_[(p * frames_ + t) * bins_ + f];
  }
  double operator()(std::size_t p, std::size_t t, std::size_t f) const {
    return data_[(p * frames_ + t) * bins_ + f];
  }

  std::vector<double>& data() noexcept { return data_; }
  const std::vector<double>& data() const noexcept { return data_; }

  bool same_shape(const RealTensor& o) const noexcept {
    return channels_ == o.channels_ && frames_ == o.frames_ && bins_ == o.bins_;
  }

 private:
  std::size_t channels_ = 0, frames_ = 0, bins_ = 0;
  std::vector<double> data_;
};

/// Complex STFT tensor indexed (channel, frame, bin), stored row-major.
class ComplexSpectrogram {
 public:
  ComplexSpectrogram() = default;
  ComplexSpectrogram(std::size_t channels, std::size_t frames, std::size_t bins)
      : channels_(channels), frames_(frames), bins_(bins),
        data_(channels * frames * bins, Complex{0.0, 0.0}) {}

  std::size_t channels() const noexcept { return channels_; }
  std::size_t frames() const noexcept { return frames_; }
  std::size_t bins() const noexcept { return bins_; }
  std::size_t size() const noexcept { return data_.size(); }

  Complex& operator()(std::size_t p, std::size_t t, std::size_t f) {
    return data_[(p * frames_ + t) * bins_ + f];
  }
  const Complex& operator()(std::size_t p, std::size_t t, std::size_t f) const {
    return data_[(p * frames_ + t) * bins_ + f];
  }

  std::vector<Complex>& data() noexcept { return data_; }
  const std::vector<Complex>& data() const noexcept { return data_; }

  bool same_shape(const ComplexSpectrogram& o) const noexcept {
    return channels_ == o.channels_ && frames_ == o.frames_ && bins_ == o.bins_;
  }
  bool same_grid(const ComplexSpectrogram& o) const noexcept {
    return frames_ == o.frames_ && bins_ == o.bins_;
  }

  ComplexSpectrogram channel(std::size_t p) const {
    detail::require(p < channels_, ErrorKind::InvalidInput, "channel index out of range");
    ComplexSpectrogram out(1, frames_, bins_);
    std::copy_n(data_.begin() + static_cast<std::ptrdiff_t>(p * frames_ * bins_),
                frames_ * bins_, out.data_.begin());
    return out;
  }

  /// Stacks single- or multi-channel spectrograms sharing a frame/bin grid.
  static ComplexSpectrogram stack(std::span<const ComplexSpectrogram> parts) {
    detail::require(!parts.empty(), ErrorKind::InvalidInput, "nothing to stack");
    std::size_t total = 0;
    for (const auto& s : parts) {
      detail::require(s.same_grid(parts.front()), ErrorKind::InvalidInput,
                      "stacked spectrograms differ in frames or bins");
      total += s.channels();
    }
    ComplexSpectrogram out(total, parts.front().frames(), parts.front().bins());
    auto it = out.data_.begin();
    for (const auto& s : parts) it = std::copy(s.data_.begin(), s.data_.end(), it);
    return out;
  }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](const Complex& z) {
      return std::isfinite(z.real()) && std::isfinite(z.imag());
    });
  }

 private:
  std::size_t channels_ = 0, frames_ = 0, bins_ = 0;
  std::vector<Complex> data_;
};

/// Periodic square-root Hann window.
inline std::vector<double> sqrt_hann(std::size_t n) {
  std::vector<double> w(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double h = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) /
                                          static_cast<double>(n));
    w[i] = std::sqrt(std::max(h, 0.0));
  }
  return w;
}

namespace detail {

class RealFft {
 public:
  explicit RealFft(std::size_t n) : n_(n), time_(n), freq_(n / 2 + 1) {
    fft_.SetFlag(Eigen::FFT<double>::HalfSpectrum);
  }
  /// `time()` -> half spectrum.
  const std::vector<Complex>& forward() {
    fft_.fwd(freq_.data(), time_.data(), static_cast<Eigen::Index>(n_));
    return freq_;
  }
  /// `freq()` -> `time()`, scaled by 1/n.
  const std::vector<double>& inverse() {
    fft_.inv(time_.data(), freq_.data(), static_cast<Eigen::Index>(n_));
    return time_;
  }
  std::vector<double>& time() noexcept { return time_; }
  std::vector<Complex>& freq() noexcept { return freq_; }

 private:
  std::size_t n_;
  Eigen::FFT<double> fft_;
  std::vector<double> time_;
  std::vector<Complex> freq_;
};

}  // namespace detail

/// Frames start at `t * hop` in the padded signal; the real samples begin at
/// `cfg.front_padding()`. Frame count is `cfg.frames_for(length)`.
inline ComplexSpectrogram stft(const MultichannelWaveform& wave, const StftConfig& cfg) {
  cfg.validate();
  detail::require(wave.channel_count() >= 1 && wave.length() >= 1, ErrorKind::InvalidInput,
                  "stft of an empty waveform");
  detail::require(wave.sample_rate == cfg.sample_rate, ErrorKind::Configuration,
                  "waveform sample rate differs from the STFT configuration");

  const std::size_t len = wave.length();
  const std::size_t win = cfg.window_samples, hop = cfg.hop_samples;
  const std::size_t frames = cfg.frames_for(len);
  const std::size_t pad = cfg.front_padding();
  const auto window = sqrt_hann(win);

  ComplexSpectrogram spec(wave.channel_count(), frames, cfg.bins());
  detail::RealFft fft(cfg.fft_size);
  for (std::size_t p = 0; p < wave.channel_count(); ++p) {
    const auto& x = wave[p];
    detail::require(x.size() == len, ErrorKind::InvalidInput, "channels differ in length");
    for (std::size_t t = 0; t < frames; ++t) {
      auto& buf = fft.time();
      std::fill(buf.begin(), buf.end(), 0.0);
      for (std::size_t n = 0; n < win; ++n) {
        const std::size_t pos = t * hop + n;  // position in padded signal
        if (pos < pad) continue;
        const std::size_t src = pos - pad;
        if (src >= len) break;
        buf[n] = window[n] * x[src];
      }
      const auto& out = fft.forward();
      for (std::size_t f = 0; f < cfg.bins(); ++f) spec(p, t, f) = out[f];
    }
  }
  return spec;
}

/// Weighted overlap-add inverse. The output is normalized by the summed
/// squared window, then trimmed or zero-padded to `target_length`.
inline MultichannelWaveform istft(const ComplexSpectrogram& spec, const StftConfig& cfg,
                                  std::size_t target_length) {
  cfg.validate();
  detail::require(spec.bins() == cfg.bins(), ErrorKind::InvalidInput,
                  "spectrogram bin count does not match the STFT configuration");

  const std::size_t win = cfg.window_samples, hop = cfg.hop_samples;
  const std::size_t frames = spec.frames();
  const std::size_t pad = cfg.front_padding();
  const std::size_t padded = frames == 0 ? 0 : (frames - 1) * hop + win;
  const auto window = sqrt_hann(win);

  std::vector<double> envelope(padded, 0.0);
  for (std::size_t t = 0; t < frames; ++t)
    for (std::size_t n = 0; n < win; ++n) envelope[t * hop + n] += window[n] * window[n];

  MultichannelWaveform out(spec.channels(), target_length, cfg.sample_rate);
  detail::RealFft fft(cfg.fft_size);
  std::vector<double> acc(padded);
  for (std::size_t p = 0; p < spec.channels(); ++p) {
    std::fill(acc.begin(), acc.end(), 0.0);
    for (std::size_t t = 0; t < frames; ++t) {
      auto& fr = fft.freq();
      for (std::size_t f = 0; f < cfg.bins(); ++f) fr[f] = spec(p, t, f);
      // The real inverse ignores imaginary parts at DC and Nyquist.
      const auto& y = fft.inverse();
      for (std::size_t n = 0; n < win; ++n) acc[t * hop + n] += window[n] * y[n];
    }
    auto& dst = out[p];
    for (std::size_t i = 0; i < target_length; ++i) {
      const std::size_t pos = i + pad;
      if (pos >= padded) break;
      dst[i] = envelope[pos] > 1e-12 ? acc[pos] / envelope[pos] : 0.0;
    }
  }
  return out;
}

/// Energy of an STFT normalized so it equals the time-domain energy of the
/// analysed signal (one-sided bins are double counted except DC/Nyquist).
inline double stft_energy(const ComplexSpectrogram& spec, const StftConfig& cfg) {
  const double overlap_gain =
      static_cast<double>(cfg.window_samples) / (2.0 * static_cast<double>(cfg.hop_samples));
  double e = 0.0;
  const std::size_t last = spec.bins() - 1;
  for (std::size_t p = 0; p < spec.channels(); ++p)
    for (std::size_t t = 0; t < spec.frames(); ++t)
      for (std::size_t f = 0; f < spec.bins(); ++f) {
        const double w = (f == 0 || f == last) ? 1.0 : 2.0;
        e += w * std::norm(spec(p, t, f));
      }
  return e / (static_cast<double>(cfg.fft_size) * overlap_gain);
}

inline RealTensor magnitude(const ComplexSpectrogram& spec) {
  RealTensor out(spec.channels(), spec.frames(), spec.bins());
  for (std::size_t i = 0; i < spec.size(); ++i) out.data()[i] = std::abs(spec.data()[i]);
  return out;
}

/// Phase in (-pi, pi]; phase of 0 is 0.
inline RealTensor phase(const ComplexSpectrogram& spec) {
  RealTensor out(spec.channels(), spec.frames(), spec.bins());
  for (std::size_t i = 0; i < spec.size(); ++i) {
    const Complex z = spec.data()[i];
    double a = (z == Complex{0.0, 0.0}) ? 0.0 : std::atan2(z.imag(), z.real());
    if (a == -std::numbers::pi) a = std::numbers::pi;
    out.data()[i] = a;
  }
  return out;
}

struct RiComponents {
  RealTensor real;
  RealTensor imag;
};

inline RiComponents split_ri(const ComplexSpectrogram& spec) {
  RiComponents ri{RealTensor(spec.channels(), spec.frames(), spec.bins()),
                  RealTensor(spec.channels(), spec.frames(), spec.bins())};
  for (std::size_t i = 0; i < spec.size(); ++i) {
    ri.real.data()[i] = spec.data()[i].real();
    ri.imag.data()[i] = spec.data()[i].imag();
  }
  return ri;
}

inline ComplexSpectrogram combine_ri(const RealTensor& re, const RealTensor& im) {
  detail::require(re.same_shape(im), ErrorKind::InvalidInput, "RI tensors differ in shape");
  ComplexSpectrogram out(re.channels(), re.frames(), re.bins());
  for (std::size_t i = 0; i < re.size(); ++i) out.data()[i] = Complex{re.data()[i], im.data()[i]};
  return out;
}

/// Linear convolution of `x` with `h` via FFT, truncated to `out_length`.
inline std::vector<double> fft_convolve(std::span<const double> x, std::span<const double> h,
                                        std::size_t out_length) {
  std::vector<double> out(out_length, 0.0);
  // Only the nonzero span of h takes part; short spans are summed directly.
  std::size_t first = 0, last = h.size();
  while (first < last && h[first] == 0.0) ++first;
  while (last > first && h[last - 1] == 0.0) --last;
  if (x.empty() || first == last || out_length <= first) return out;
  const auto hs = h.subspan(first, last - first);
  const std::size_t span_out = out_length - first;
  const std::size_t full = x.size() + hs.size() - 1;
  if (hs.size() <= 128) {
    for (std::size_t i = 0; i < x.size() && i < span_out; ++i) {
      const std::size_t kn = std::min(hs.size(), span_out - i);
      double* dst = out.data() + first + i;
      for (std::size_t k = 0; k < kn; ++k) dst[k] += x[i] * hs[k];
    }
    return out;
  }
  std::size_t n = 2;
  while (n < full) n <<= 1;
  detail::RealFft fx(n), fh(n);
  std::copy(x.begin(), x.end(), fx.time().begin());
  std::copy(hs.begin(), hs.end(), fh.time().begin());
  fx.forward();
  const auto& hf = fh.forward();
  for (std::size_t k = 0; k < fx.freq().size(); ++k) fx.freq()[k] *= hf[k];
  const auto& y = fx.inverse();
  std::copy_n(y.begin(), std::min(span_out, full), out.begin() + first);
  return out;
}

}  // namespace dereverb
