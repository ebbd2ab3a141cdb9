#pragma once

// Randomized scene sampling, convolution, SNR mixing and per-channel
// variance normalization for paired (mixture, direct-path target) data.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <vector>

#include "dereverb/error.hpp"
#include "dereverb/random.hpp"
#include "dereverb/room.hpp"
#include "dereverb/spectral.hpp"

namespace dereverb {

struct Range {
  double lo = 0.0;
  double hi = 0.0;

  bool contains(double v) const { return v >= lo && v <= hi; }
  double draw(Rng& rng) const { return rng.uniform(lo, hi); }
};

/// Sampling ranges for scene generation. Defaults are the published setup.
struct SceneRanges {
  Range room_length{5.0, 10.0};
  Range room_width{5.0, 10.0};
  Range room_height{3.0, 4.0};
  Range array_height{1.0, 2.0};
  Range array_displacement{-0.5, 0.5};
  Range first_mic_angle{0.0, std::numbers::pi / 4.0};
  Range source_distance{0.75, 2.5};
  double min_wall_distance = 0.5;
  Range t60{0.2, 1.3};
  Range snr_db{5.0, 25.0};
  double array_radius = 0.1;
  std::size_t mic_count = 8;

  void validate() const {
    for (const Range* r : {&room_length, &room_width, &room_height, &array_height,
                           &array_displacement, &first_mic_angle, &source_distance, &t60,
                           &snr_db}) {
      detail::require(r->lo <= r->hi, ErrorKind::Configuration, "range has min > max");
    }
    detail::require(mic_count >= 1 && array_radius > 0.0, ErrorKind::Configuration,
                    "array needs at least one mic and a positive radius");
  }
};

struct SceneSample {
  RoomSpec room;
  ArrayGeometry array;
  Vec3 source_position;
  double t60 = 0.0;
  double snr_db = 0.0;
  std::uint64_t rng_seed = 0;

  double source_distance() const {
    const Vec3 d = source_position - array.center;
    return std::hypot(d.x, d.y);
  }
};

inline constexpr int kMaxSceneRejections = 10000;

/// Draws one scene. The source distance is drawn once and the azimuth is
/// re-drawn until the wall constraint holds, which keeps the distance law
/// exactly uniform.
inline SceneSample sample_scene(std::uint64_t seed, const SceneRanges& ranges = {}) {
  ranges.validate();
  Rng rng(seed);
  SceneSample s;
  s.rng_seed = seed;
  s.room.dims = {ranges.room_length.draw(rng), ranges.room_width.draw(rng),
                 ranges.room_height.draw(rng)};
  const double az = ranges.array_height.draw(rng);
  const double nx = ranges.array_displacement.draw(rng);
  const double ny = ranges.array_displacement.draw(rng);
  s.array.center = {s.room.dims.x / 2.0 + nx, s.room.dims.y / 2.0 + ny, az};
  s.array.radius = ranges.array_radius;
  s.array.mic_count = ranges.mic_count;
  s.array.first_mic_angle = ranges.first_mic_angle.draw(rng);

  const double dist = ranges.source_distance.draw(rng);
  int rejections = 0;
  for (;;) {
    const double a = rng.uniform(0.0, 2.0 * std::numbers::pi);
    const Vec3 p{s.array.center.x + dist * std::cos(a), s.array.center.y + dist * std::sin(a), az};
    if (s.room.wall_clearance(p) >= ranges.min_wall_distance) {
      s.source_position = p;
      break;
    }
    detail::require(++rejections < kMaxSceneRejections, ErrorKind::Infeasible,
                    "no feasible source position after 10^4 draws");
  }
  s.t60 = ranges.t60.draw(rng);
  s.room.target_t60 = s.t60;
  s.snr_db = ranges.snr_db.draw(rng);
  return s;
}

/// Checks every sampled value against its range; returns false on the first
/// violation.
inline bool scene_within_ranges(const SceneSample& s, const SceneRanges& r = {}) {
  const double tol = 1e-9;
  const Vec3 c = s.array.center;
  bool ok = r.room_length.contains(s.room.dims.x) && r.room_width.contains(s.room.dims.y) &&
            r.room_height.contains(s.room.dims.z) && r.array_height.contains(c.z) &&
            r.array_displacement.contains(c.x - s.room.dims.x / 2.0) &&
            r.array_displacement.contains(c.y - s.room.dims.y / 2.0) &&
            r.first_mic_angle.contains(s.array.first_mic_angle) && r.t60.contains(s.t60) &&
            r.snr_db.contains(s.snr_db) && s.source_position.z == c.z &&
            s.room.wall_clearance(s.source_position) >= r.min_wall_distance - tol;
  const double d = s.source_distance();
  ok = ok && d >= r.source_distance.lo - tol && d <= r.source_distance.hi + tol;
  return ok;
}

/// Windowed-sinc (Blackman) low-pass FIR.
inline std::vector<double> lowpass_fir(double cutoff_hz, double fs, std::size_t taps = 255) {
  std::vector<double> h(taps);
  const double fc = cutoff_hz / fs;
  const double mid = static_cast<double>(taps - 1) / 2.0;
  double sum = 0.0;
  for (std::size_t i = 0; i < taps; ++i) {
    const double x = static_cast<double>(i) - mid;
    const double sinc = x == 0.0 ? 2.0 * fc : std::sin(2.0 * std::numbers::pi * fc * x) /
                                                   (std::numbers::pi * x);
    const double a = 2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(taps - 1);
    const double w = 0.42 - 0.5 * std::cos(a) + 0.08 * std::cos(2.0 * a);
    h[i] = sinc * w;
    sum += h[i];
  }
  for (double& v : h) v /= sum;
  return h;
}

struct NoiseOptions {
  std::size_t source_count = 4;
  double cutoff_hz = 4000.0;
  /// Sources are placed between these distances from one wall.
  Range wall_offset{0.2, 0.5};
};

/// Synthesized quasi-diffuse background noise: low-passed white-noise point
/// sources near the walls, each rendered through the room's full RIRs.
/// Stands in for recorded air-conditioning noise.
inline MultichannelWaveform synth_noise(std::uint64_t seed, std::size_t length, double fs,
                                        const SceneSample& scene, const NoiseOptions& opts = {}) {
  detail::require(length > 0, ErrorKind::InvalidInput, "noise duration must be positive");
  Rng rng(seed);
  const auto mics = scene.array.mic_positions();
  MultichannelWaveform out(mics.size(), length, fs);
  const auto lp = lowpass_fir(opts.cutoff_hz, fs);
  const Vec3 L = scene.room.dims;
  const double beta = reflection_for(scene.room, ReflectionModel::Specular);

  // Every source shares one RIR length, so all renderings fit one FFT size
  // and the per-mic sums are accumulated in the frequency domain.
  std::size_t preroll = 0;
  std::vector<Vec3> positions;
  for (std::size_t k = 0; k < opts.source_count; ++k) {
    const int wall = static_cast<int>(rng.below(4));
    const double off = opts.wall_offset.draw(rng);
    Vec3 pos{rng.uniform(0.5, L.x - 0.5), rng.uniform(0.5, L.y - 0.5),
             rng.uniform(0.5, L.z - 0.5)};
    switch (wall) {
      case 0: pos.x = off; break;
      case 1: pos.x = L.x - off; break;
      case 2: pos.y = off; break;
      default: pos.y = L.y - off; break;
    }
    positions.push_back(pos);
    for (const Vec3& m : mics) preroll = std::max(preroll, default_rir_length(scene.room, pos, m, fs));
  }
  // Pre-roll of one RIR length so the reverberant field is built up at t = 0.
  const std::size_t span = preroll + length;
  std::size_t n = 2;
  while (n < span + preroll) n <<= 1;
  detail::RealFft src_fft(n), rir_fft(n);
  std::vector<std::vector<Complex>> acc(mics.size(), std::vector<Complex>(n / 2 + 1));

  for (const Vec3& pos : positions) {
    std::vector<double> white(span + lp.size());
    for (double& v : white) v = rng.normal();
    auto coloured = fft_convolve(white, lp, white.size());
    std::fill(src_fft.time().begin(), src_fft.time().end(), 0.0);
    std::copy(coloured.begin() + static_cast<std::ptrdiff_t>(lp.size()), coloured.end(),
              src_fft.time().begin());
    const auto& sf = src_fft.forward();

    RirOptions ro;
    ro.length = preroll;
    ro.reflection = beta;
    const auto rirs = simulate_rirs(scene.room, pos, mics, fs, ro);
    for (std::size_t m = 0; m < mics.size(); ++m) {
      std::fill(rir_fft.time().begin(), rir_fft.time().end(), 0.0);
      std::copy(rirs[m].taps.begin(), rirs[m].taps.end(), rir_fft.time().begin());
      const auto& hf = rir_fft.forward();
      for (std::size_t f = 0; f < hf.size(); ++f) acc[m][f] += sf[f] * hf[f];
    }
  }
  for (std::size_t m = 0; m < mics.size(); ++m) {
    std::copy(acc[m].begin(), acc[m].end(), rir_fft.freq().begin());
    const auto& y = rir_fft.inverse();
    std::copy_n(y.begin() + static_cast<std::ptrdiff_t>(preroll), length, out[m].begin());
  }
  return out;
}

/// Speech-like test signal: syllables of formant-filtered harmonic
/// excitation with occasional fricative bursts and pauses. Peak-normalized
/// to 0.5. Substitute for a recorded anechoic corpus.
inline std::vector<double> synth_speech(std::uint64_t seed, std::size_t length, double fs) {
  Rng rng(seed);
  std::vector<double> out(length, 0.0);
  std::size_t pos = static_cast<std::size_t>(rng.uniform(0.05, 0.2) * fs);
  double base_f0 = rng.uniform(95.0, 210.0);

  struct Resonator {
    double b0 = 0, a1 = 0, a2 = 0, y1 = 0, y2 = 0;
    void tune(double f, double bw, double fs_) {
      const double r = std::exp(-std::numbers::pi * bw / fs_);
      a1 = 2.0 * r * std::cos(2.0 * std::numbers::pi * f / fs_);
      a2 = -r * r;
      b0 = 1.0 - r;
    }
    double step(double x) {
      const double y = b0 * x + a1 * y1 + a2 * y2;
      y2 = y1;
      y1 = y;
      return y;
    }
  };

  while (pos < length) {
    const auto dur = static_cast<std::size_t>(rng.uniform(0.12, 0.32) * fs);
    const bool fricative = rng.uniform() < 0.2;
    const double f1 = rng.uniform(300.0, 850.0), f2 = rng.uniform(900.0, 2400.0),
                 f3 = rng.uniform(2400.0, 3400.0);
    const double f0_start = base_f0 * rng.uniform(0.85, 1.15);
    const double f0_end = base_f0 * rng.uniform(0.8, 1.2);
    const double level = rng.uniform(0.4, 1.0);
    std::array<Resonator, 3> formants;
    formants[0].tune(f1, 90.0, fs);
    formants[1].tune(f2, 120.0, fs);
    formants[2].tune(f3, 180.0, fs);
    Resonator hiss;
    hiss.tune(rng.uniform(3500.0, 6000.0), 1500.0, fs);
    double phase_acc = 0.0;
    for (std::size_t i = 0; i < dur && pos + i < length; ++i) {
      const double u = static_cast<double>(i) / static_cast<double>(dur);
      const double env = std::sin(std::numbers::pi * u);
      double sample = 0.0;
      if (fricative) {
        sample = 6.0 * hiss.step(rng.normal());
      } else {
        const double f0 = f0_start + (f0_end - f0_start) * u;
        phase_acc += f0 / fs;
        // Band-limited sawtooth-like glottal excitation.
        double excitation = 0.0;
        const int harmonics = static_cast<int>(std::min(40.0, 0.45 * fs / f0));
        for (int h = 1; h <= harmonics; ++h)
          excitation += std::sin(2.0 * std::numbers::pi * h * phase_acc) / h;
        excitation += 0.05 * rng.normal();
        for (auto& r : formants) sample += r.step(excitation);
      }
      out[pos + i] += level * env * env * sample;
    }
    pos += dur;
    if (rng.uniform() < 0.35) pos += static_cast<std::size_t>(rng.uniform(0.05, 0.25) * fs);
    base_f0 *= rng.uniform(0.97, 1.03);
  }

  double peak = 0.0;
  for (double v : out) peak = std::max(peak, std::abs(v));
  if (peak > 0.0)
    for (double& v : out) v *= 0.5 / peak;
  return out;
}

struct MixtureRecord {
  MultichannelWaveform mixture;
  MultichannelWaveform target_direct;
  MultichannelWaveform reverberant_speech;
  MultichannelWaveform noise;
  std::vector<double> gains;  // per-channel normalization gains
  /// Gain applied to the raw noise before normalization.
  double noise_scale = 0.0;
  SceneSample scene;
  bool synthetic_noise = true;
};

inline double sample_variance(const std::vector<double>& x) {
  if (x.size() < 2) return 0.0;
  double mean = 0.0;
  for (double v : x) mean += v;
  mean /= static_cast<double>(x.size());
  double acc = 0.0;
  for (double v : x) acc += (v - mean) * (v - mean);
  return acc / static_cast<double>(x.size() - 1);
}

/// Renders `speech` into the scene and mixes it with `noise` at the scene
/// SNR (powers summed over all channels), then normalizes every channel of
/// the mixture to unit sample variance. The same per-channel gains are
/// applied to the target and the retained components. Pass no noise for a
/// noiseless diagnostic mixture.
inline MixtureRecord spatialize(const MultichannelWaveform& speech,
                                const std::optional<MultichannelWaveform>& noise,
                                const SceneSample& scene) {
  using detail::require;
  speech.validate();
  require(speech.channel_count() == 1, ErrorKind::InvalidInput, "speech must be single-channel");
  const std::size_t len = speech.length();
  const double fs = speech.sample_rate;
  const auto mics = scene.array.mic_positions();
  const std::size_t P = mics.size();
  require(energy(speech[0]) > 0.0, ErrorKind::DegenerateInput, "speech is silent");
  if (noise) {
    noise->validate();
    require(noise->channel_count() == P, ErrorKind::InvalidInput,
            "noise channel count differs from the array");
    require(noise->length() >= len, ErrorKind::InvalidInput, "noise is shorter than speech");
    require(noise->sample_rate == fs, ErrorKind::InvalidInput, "noise sample rate differs");
  }

  MixtureRecord rec;
  rec.scene = scene;
  rec.synthetic_noise = noise.has_value();
  rec.reverberant_speech = MultichannelWaveform(P, len, fs);
  rec.target_direct = MultichannelWaveform(P, len, fs);
  rec.noise = MultichannelWaveform(P, len, fs);
  rec.mixture = MultichannelWaveform(P, len, fs);

  double speech_power = 0.0;
  const auto fulls = simulate_rirs(scene.room, scene.source_position, mics, fs);
  for (std::size_t m = 0; m < P; ++m) {
    const auto& full = fulls[m];
    const auto direct = direct_path_rir(scene.room, scene.source_position, mics[m], fs);
    rec.reverberant_speech[m] = fft_convolve(speech[0], full.taps, len);
    rec.target_direct[m] = fft_convolve(speech[0], direct.taps, len);
    speech_power += energy(rec.reverberant_speech[m]);
  }

  if (noise) {
    double noise_power = 0.0;
    for (std::size_t m = 0; m < P; ++m) {
      rec.noise[m].assign((*noise)[m].begin(),
                          (*noise)[m].begin() + static_cast<std::ptrdiff_t>(len));
      noise_power += energy(rec.noise[m]);
    }
    require(noise_power > 0.0, ErrorKind::DegenerateInput, "noise is silent");
    rec.noise_scale = std::sqrt(speech_power / (noise_power * std::pow(10.0, scene.snr_db / 10.0)));
    for (auto& ch : rec.noise.channels)
      for (double& v : ch) v *= rec.noise_scale;
  }

  rec.gains.resize(P);
  for (std::size_t m = 0; m < P; ++m) {
    std::vector<double> raw(len);
    for (std::size_t i = 0; i < len; ++i) raw[i] = rec.reverberant_speech[m][i] + rec.noise[m][i];
    const double var = sample_variance(raw);
    require(var > 0.0, ErrorKind::DegenerateInput, "mixture channel has zero variance");
    const double g = 1.0 / std::sqrt(var);
    rec.gains[m] = g;
    for (std::size_t i = 0; i < len; ++i) {
      rec.reverberant_speech[m][i] *= g;
      rec.noise[m][i] *= g;
      rec.target_direct[m][i] *= g;
      rec.mixture[m][i] = rec.reverberant_speech[m][i] + rec.noise[m][i];
    }
  }
  return rec;
}

/// Sub-seed streams of one simulated record.
enum class RecordStream : std::uint64_t { Scene = 1, Speech = 2, Noise = 3 };

/// Scene, speech and noise for record `index` of a dataset with `master` seed.
/// Uses synthetic speech unless `speech` is given.
inline MixtureRecord simulate_record(std::uint64_t master, std::uint64_t index,
                                     std::size_t length, const SceneRanges& ranges = {},
                                     double fs = 16000.0,
                                     const std::optional<std::vector<double>>& speech = {}) {
  const auto scene = sample_scene(
      derive_seed(master, index, static_cast<std::uint64_t>(RecordStream::Scene)), ranges);
  MultichannelWaveform src(1, length, fs);
  if (speech) {
    src[0].assign(speech->begin(), speech->begin() + static_cast<std::ptrdiff_t>(
                                                         std::min(length, speech->size())));
    src[0].resize(length, 0.0);
  } else {
    src[0] = synth_speech(
        derive_seed(master, index, static_cast<std::uint64_t>(RecordStream::Speech)), length, fs);
  }
  const auto noise = synth_noise(
      derive_seed(master, index, static_cast<std::uint64_t>(RecordStream::Noise)), length, fs,
      scene);
  return spatialize(src, noise, scene);
}

}  // namespace dereverb
