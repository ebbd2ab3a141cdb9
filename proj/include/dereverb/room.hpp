#pragma once

// Shoebox room impulse responses by the image-source method, plus Eyring
// T60 conversion and Schroeder decay measurement.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdlib>
#include <numbers>
#include <limits>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "dereverb/error.hpp"

namespace dereverb {

inline constexpr double kSpeedOfSound = 343.0;
/// Fractional-delay interpolation: windowed sinc spanning 81 taps.
inline constexpr int kSincHalfWidth = 40;

struct Vec3 {
  double x = 0.0, y = 0.0, z = 0.0;

  friend Vec3 operator+(Vec3 a, Vec3 b) { return {a.x + b.x, a.y + b.y, a.z + b.z}; }
  friend Vec3 operator-(Vec3 a, Vec3 b) { return {a.x - b.x, a.y - b.y, a.z - b.z}; }
  double norm() const { return std::sqrt(x * x + y * y + z * z); }
  friend bool operator==(const Vec3&, const Vec3&) = default;
};

inline double distance(Vec3 a, Vec3 b) { return (a - b).norm(); }

struct RoomSpec {
  Vec3 dims;                // meters
  double target_t60 = 0.6;  // seconds

  double volume() const { return dims.x * dims.y * dims.z; }
  double surface() const {
    return 2.0 * (dims.x * dims.y + dims.y * dims.z + dims.x * dims.z);
  }
  bool contains(Vec3 p) const {
    return p.x > 0.0 && p.x < dims.x && p.y > 0.0 && p.y < dims.y && p.z > 0.0 && p.z < dims.z;
  }
  /// Distance from `p` to the closest of the six walls.
  double wall_clearance(Vec3 p) const {
    return std::min({p.x, dims.x - p.x, p.y, dims.y - p.y, p.z, dims.z - p.z});
  }
};

/// Uniform circular array in a horizontal plane.
struct ArrayGeometry {
  Vec3 center;
  double radius = 0.1;
  std::size_t mic_count = 8;
  double first_mic_angle = 0.0;  // radians

  /// Mic k (0-based) sits at angle first_mic_angle + 2*pi*k/P.
  Vec3 mic_position(std::size_t k) const {
    const double a = first_mic_angle +
                     2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(mic_count);
    return {center.x + radius * std::cos(a), center.y + radius * std::sin(a), center.z};
  }

  std::vector<Vec3> mic_positions() const {
    std::vector<Vec3> out;
    out.reserve(mic_count);
    for (std::size_t k = 0; k < mic_count; ++k) out.push_back(mic_position(k));
    return out;
  }
};

struct ImpulseResponse {
  std::vector<double> taps;
  double sample_rate = 16000.0;
  Vec3 source;
  Vec3 mic;
  std::size_t image_count = 0;  // images that contributed taps
};

/// Eyring's prediction of T60 for a uniform wall reflection coefficient.
inline double eyring_t60(const RoomSpec& room, double reflection) {
  const double absorption = 1.0 - reflection * reflection;
  return 0.161 * room.volume() / (-room.surface() * std::log(1.0 - absorption));
}

/// Inverts Eyring's formula: absorption = 1 - exp(-0.161 V / (S T60)),
/// reflection = sqrt(1 - absorption).
inline double t60_to_reflection(const RoomSpec& room) {
  detail::require(room.dims.x > 0.0 && room.dims.y > 0.0 && room.dims.z > 0.0,
                  ErrorKind::InvalidInput, "room dimensions must be positive");
  detail::require(std::isfinite(room.target_t60) && room.target_t60 > 0.0,
                  ErrorKind::Infeasible, "target T60 must be positive");
  const double exponent = 0.161 * room.volume() / (room.surface() * room.target_t60);
  const double absorption = 1.0 - std::exp(-exponent);
  detail::require(absorption <= 1.0, ErrorKind::Infeasible, "required absorption exceeds 1");
  const double reflection = std::sqrt(std::max(0.0, 1.0 - absorption));
  return std::min(reflection, std::nextafter(1.0, 0.0));
}

namespace detail {

/// Schroeder-curve slope (dB per meter of travel, at -ln(beta) = 1) of a
/// specular shoebox with uniform walls. A ray with direction u reflects
/// sum_i |u_i| / L_i times per meter, so the energy decay is the direction
/// average of exp(-2 x g(u)) and its backward integral is <exp(-2 x g) / g>.
/// The slope is the least-squares fit over the -5..-25 dB segment.
inline double specular_decay_slope(const RoomSpec& room) {
  constexpr int kGrid = 64;
  std::vector<double> g;
  g.reserve(kGrid * kGrid);
  for (int a = 0; a < kGrid; ++a)
    for (int b = 0; b < kGrid; ++b) {
      const double mu = (a + 0.5) / kGrid;
      const double phi = (b + 0.5) / kGrid * std::numbers::pi / 2.0;
      const double s = std::sqrt(1.0 - mu * mu);
      g.push_back(s * std::cos(phi) / room.dims.x + s * std::sin(phi) / room.dims.y +
                  mu / room.dims.z);
    }
  auto edc = [&](double x) {
    double acc = 0.0;
    for (double gi : g) acc += std::exp(-2.0 * x * gi) / gi;
    return acc;
  };
  const double e0 = edc(0.0);
  const double step = 0.01 * 4.0 * room.volume() / room.surface();
  double sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0;
  int count = 0;
  for (int i = 0;; ++i) {
    const double x = i * step;
    const double level = 10.0 * std::log10(edc(x) / e0);
    if (level < -25.0) break;
    if (level <= -5.0) {
      sx += x;
      sy += level;
      sxx += x * x;
      sxy += x * level;
      ++count;
    }
  }
  return (count * sxy - sx * sy) / (count * sxx - sx * sx);
}

}  // namespace detail

/// T60 that an image-source simulation with uniform reflection coefficient
/// exhibits under Schroeder measurement, from the specular decay model.
inline double specular_t60(const RoomSpec& room, double reflection) {
  return 60.0 / (-detail::specular_decay_slope(room) * -std::log(reflection) * kSpeedOfSound);
}

/// Reflection coefficient for which the specular decay model yields the
/// target T60. Longer than Eyring's prediction in flat rooms, where grazing
/// rays meet few walls.
inline double specular_t60_to_reflection(const RoomSpec& room) {
  detail::require(room.dims.x > 0.0 && room.dims.y > 0.0 && room.dims.z > 0.0,
                  ErrorKind::InvalidInput, "room dimensions must be positive");
  detail::require(std::isfinite(room.target_t60) && room.target_t60 > 0.0,
                  ErrorKind::Infeasible, "target T60 must be positive");
  const double neg_log =
      60.0 / (-detail::specular_decay_slope(room) * kSpeedOfSound * room.target_t60);
  return std::min(std::exp(-neg_log), std::nextafter(1.0, 0.0));
}

enum class ReflectionModel { Specular, Eyring };

inline double reflection_for(const RoomSpec& room, ReflectionModel model) {
  return model == ReflectionModel::Eyring ? t60_to_reflection(room)
                                          : specular_t60_to_reflection(room);
}

struct RirOptions {
  /// Overrides the T60-derived coefficient (0 gives free field).
  std::optional<double> reflection;
  ReflectionModel model = ReflectionModel::Specular;
  /// Highest total reflection order; nullopt means "auto" (images are kept
  /// while their delay is below 1.25 x target T60).
  std::optional<int> max_order;
  /// Output length in samples; nullopt derives it from the T60 budget.
  std::optional<std::size_t> length;
  double sound_speed = kSpeedOfSound;
  /// Allen-Berkley high-pass on the reflected part (removes the DC build-up
  /// of all-positive image sums). Non-positive disables it.
  double highpass_hz = 100.0;
};

namespace detail {

/// Hann-windowed sinc (window zero at |x| = 41) tabulated on a grid of
/// fractional offsets in [-0.5, 0.5]; lookups interpolate linearly between
/// neighbouring rows.
class SincKernel {
 public:
  static constexpr int kTaps = 2 * kSincHalfWidth + 1;
  static constexpr int kSteps = 1024;

  SincKernel() : table_(static_cast<std::size_t>(kSteps + 1) * kTaps) {
    for (int j = 0; j <= kSteps; ++j) {
      const double frac = -0.5 + static_cast<double>(j) / kSteps;
      for (int k = -kSincHalfWidth; k <= kSincHalfWidth; ++k)
        table_[static_cast<std::size_t>(j) * kTaps + (k + kSincHalfWidth)] = value(k - frac);
    }
  }

  static double value(double x) {
    constexpr double half = kSincHalfWidth + 1.0;
    if (std::abs(x) >= half) return 0.0;
    const double w = 0.5 * (1.0 + std::cos(std::numbers::pi * x / half));
    if (x == 0.0) return w;
    return w * std::sin(std::numbers::pi * x) / (std::numbers::pi * x);
  }

  /// Adds amplitude * kernel(n - delay) for the 81 taps around round(delay).
  void accumulate(std::vector<double>& out, double delay, double amplitude) const {
    const long centre = std::lround(delay);
    const double frac = delay - static_cast<double>(centre);
    const long n_out = static_cast<long>(out.size());
    if (frac == 0.0) {
      if (centre >= 0 && centre < n_out) out[static_cast<std::size_t>(centre)] += amplitude;
      return;
    }
    const double pos = (frac + 0.5) * kSteps;
    const int j = std::min(static_cast<int>(pos), kSteps - 1);
    const double t = pos - j;
    const double* r0 = table_.data() + static_cast<std::size_t>(j) * kTaps;
    const double* r1 = r0 + kTaps;
    const double a0 = amplitude * (1.0 - t), a1 = amplitude * t;
    const long first = centre - kSincHalfWidth;
    const int k0 = static_cast<int>(std::max(0L, -first));
    const int k1 = static_cast<int>(std::min<long>(kTaps, n_out - first));
    double* dst = out.data() + first;
    for (int k = k0; k < k1; ++k) dst[k] += a0 * r0[k] + a1 * r1[k];
  }

 private:
  std::vector<double> table_;
};

inline const SincKernel& sinc_kernel() {
  static const SincKernel kernel;
  return kernel;
}

/// Second-order high-pass of Allen and Berkley, in place.
inline void allen_berkley_highpass(std::vector<double>& x, double cutoff_hz, double fs) {
  const double w = 2.0 * std::numbers::pi * cutoff_hz / fs;
  const double r1 = std::exp(-w);
  const double b1 = 2.0 * r1 * std::cos(w);
  const double b2 = -r1 * r1;
  const double a1 = -(1.0 + r1);
  double y0 = 0.0, y1 = 0.0, y2 = 0.0;
  for (double& v : x) {
    y2 = y1;
    y1 = y0;
    y0 = b1 * y1 + b2 * y2 + v;
    v = y0 + a1 * y1 + r1 * y2;
  }
}

}  // namespace detail

/// Default RIR length: 1.25 x T60 plus the interpolation half-width, and
/// never shorter than the direct path needs.
inline std::size_t default_rir_length(const RoomSpec& room, Vec3 source, Vec3 mic, double fs,
                                      double c = kSpeedOfSound) {
  const auto budget = static_cast<std::size_t>(std::ceil(1.25 * room.target_t60 * fs));
  const auto direct = static_cast<std::size_t>(std::ceil(distance(source, mic) / c * fs));
  return std::max(budget, direct + 1) + kSincHalfWidth + 1;
}

/// Image-source RIRs from one source to several microphones; the image
/// lattice is walked once and shared by all of them.
inline std::vector<ImpulseResponse> simulate_rirs(const RoomSpec& room, Vec3 source,
                                                  std::span<const Vec3> mics, double fs,
                                                  const RirOptions& opts = {}) {
  using detail::require;
  require(room.contains(source), ErrorKind::InvalidInput, "source lies outside the room");
  for (const Vec3& mic : mics)
    require(room.contains(mic), ErrorKind::InvalidInput, "microphone lies outside the room");
  require(fs > 0.0, ErrorKind::InvalidInput, "sample rate must be positive");
  require(!opts.max_order || *opts.max_order >= 0, ErrorKind::InvalidInput,
          "max_order must be nonnegative");

  const double beta = opts.reflection ? *opts.reflection : reflection_for(room, opts.model);
  require(beta >= 0.0 && beta < 1.0, ErrorKind::InvalidInput,
          "reflection coefficient must lie in [0, 1)");
  const double c = opts.sound_speed;
  const std::size_t M = mics.size();

  std::vector<ImpulseResponse> rirs(M);
  std::vector<std::vector<double>> reflected(M);
  std::vector<double> max_dist(M);
  double reach = 0.0;
  for (std::size_t k = 0; k < M; ++k) {
    rirs[k].sample_rate = fs;
    rirs[k].source = source;
    rirs[k].mic = mics[k];
    const std::size_t length =
        opts.length ? *opts.length : default_rir_length(room, source, mics[k], fs, c);
    rirs[k].taps.assign(length, 0.0);
    reflected[k].assign(length, 0.0);
    max_dist[k] = (static_cast<double>(length) + kSincHalfWidth) / fs * c;
    reach = std::max(reach, max_dist[k]);
  }

  const int order_cap = opts.max_order ? *opts.max_order : std::numeric_limits<int>::max();
  const Vec3 L = room.dims;
  const int nx = static_cast<int>(std::ceil(reach / (2.0 * L.x))) + 1;
  const int ny = static_cast<int>(std::ceil(reach / (2.0 * L.y))) + 1;
  const int nz = static_cast<int>(std::ceil(reach / (2.0 * L.z))) + 1;
  const auto& kernel = detail::sinc_kernel();

  // Precomputed powers of beta; order is bounded by the lattice extent.
  const int max_possible = 2 * (nx + ny + nz) + 3;
  std::vector<double> beta_pow(static_cast<std::size_t>(max_possible) + 1, 1.0);
  for (int i = 1; i <= max_possible; ++i) beta_pow[i] = beta_pow[i - 1] * beta;

  for (int u = 0; u <= 1; ++u)
    for (int l = -nx; l <= nx; ++l) {
      const double ix = (1 - 2 * u) * source.x + 2.0 * l * L.x;
      const int ox = std::abs(l - u) + std::abs(l);
      if (ox > order_cap) continue;
      for (int v = 0; v <= 1; ++v)
        for (int m = -ny; m <= ny; ++m) {
          const double iy = (1 - 2 * v) * source.y + 2.0 * m * L.y;
          const int oy = std::abs(m - v) + std::abs(m);
          if (ox + oy > order_cap) continue;
          for (int w = 0; w <= 1; ++w)
            for (int n = -nz; n <= nz; ++n) {
              const int order = ox + oy + std::abs(n - w) + std::abs(n);
              if (order > order_cap) continue;
              const double amp_gain = beta_pow[static_cast<std::size_t>(order)];
              if (amp_gain == 0.0) continue;
              const double iz = (1 - 2 * w) * source.z + 2.0 * n * L.z;
              for (std::size_t k = 0; k < M; ++k) {
                const double dx = ix - mics[k].x, dy = iy - mics[k].y, dz = iz - mics[k].z;
                const double d = std::sqrt(dx * dx + dy * dy + dz * dz);
                if (d > max_dist[k]) continue;
                kernel.accumulate(order == 0 ? rirs[k].taps : reflected[k], d / c * fs,
                                  amp_gain / (4.0 * std::numbers::pi * d));
                ++rirs[k].image_count;
              }
            }
        }
    }
  for (std::size_t k = 0; k < M; ++k) {
    if (rirs[k].image_count <= 1) continue;
    if (opts.highpass_hz > 0.0) detail::allen_berkley_highpass(reflected[k], opts.highpass_hz, fs);
    for (std::size_t i = 0; i < rirs[k].taps.size(); ++i) rirs[k].taps[i] += reflected[k][i];
  }
  return rirs;
}

inline ImpulseResponse simulate_rir(const RoomSpec& room, Vec3 source, Vec3 mic, double fs,
                                    const RirOptions& opts = {}) {
  return std::move(simulate_rirs(room, source, std::span<const Vec3>(&mic, 1), fs, opts).front());
}

/// Order-0 image only: the direct sound.
inline ImpulseResponse direct_path_rir(const RoomSpec& room, Vec3 source, Vec3 mic, double fs,
                                       const RirOptions& opts = {}) {
  RirOptions direct = opts;
  direct.reflection = 0.0;
  direct.max_order = 0;
  return simulate_rir(room, source, mic, fs, direct);
}

inline double energy(const std::vector<double>& x) {
  double e = 0.0;
  for (double v : x) e += v * v;
  return e;
}

/// Direct-to-reverberant ratio in dB, from a direct-path and a full RIR of
/// equal length.
inline double direct_to_reverberant_db(const ImpulseResponse& direct, const ImpulseResponse& full) {
  detail::require(direct.taps.size() == full.taps.size(), ErrorKind::InvalidInput,
                  "RIR lengths differ");
  double ed = 0.0, er = 0.0;
  for (std::size_t i = 0; i < full.taps.size(); ++i) {
    ed += direct.taps[i] * direct.taps[i];
    const double r = full.taps[i] - direct.taps[i];
    er += r * r;
  }
  detail::require(er > 0.0, ErrorKind::DegenerateInput, "no reverberant energy");
  return 10.0 * std::log10(ed / er);
}

/// Schroeder backward integration; least-squares line on the -5..-25 dB
/// segment of the decay curve, extrapolated to 60 dB.
inline double measure_t60(std::span<const double> taps, double fs) {
  detail::require(fs > 0.0, ErrorKind::InvalidInput, "sample rate must be positive");
  const std::size_t n = taps.size();
  std::vector<double> edc(n + 1, 0.0);
  for (std::size_t i = n; i-- > 0;) edc[i] = edc[i + 1] + taps[i] * taps[i];
  detail::require(n > 0 && edc[0] > 0.0, ErrorKind::InvalidInput, "impulse response is zero");

  const double total = edc[0];
  double sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0;
  std::size_t count = 0;
  bool reached_end = false;
  for (std::size_t i = 0; i < n; ++i) {
    if (edc[i] <= 0.0) break;
    const double level = 10.0 * std::log10(edc[i] / total);
    if (level < -25.0) {
      reached_end = true;
      break;
    }
    if (level <= -5.0) {
      const double t = static_cast<double>(i) / fs;
      sx += t;
      sy += level;
      sxx += t * t;
      sxy += t * level;
      ++count;
    }
  }
  detail::require(reached_end && count >= 3, ErrorKind::MeasurementUndefined,
                  "decay curve does not cover the -5 to -25 dB range");
  const double cn = static_cast<double>(count);
  const double denom = cn * sxx - sx * sx;
  detail::require(denom > 0.0, ErrorKind::MeasurementUndefined, "degenerate decay segment");
  const double slope = (cn * sxy - sx * sy) / denom;  // dB per second
  detail::require(slope < 0.0, ErrorKind::MeasurementUndefined, "decay curve is not decreasing");
  return -60.0 / slope;
}

inline double measure_t60(const ImpulseResponse& rir) { return measure_t60(rir.taps, rir.sample_rate); }

}  // namespace dereverb
