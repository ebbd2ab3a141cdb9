#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <span>
#include <vector>

#include "dereverb/error.hpp"

namespace dereverb {

inline constexpr double kSiSdrCapDb = 100.0;

struct MetricReport {
  double si_sdr_db = 0.0;
  double target_energy = 0.0;
  double error_energy = 0.0;
  double optimal_scale = 0.0;
  /// Reserved for externally computed PESQ scores; never filled here.
  std::optional<double> pesq;
};

struct SiSdrOptions {
  bool remove_mean = true;
};

/// Scale-invariant SDR: project the estimate onto the reference,
/// alpha = <est, ref> / ||ref||^2, and compare target and residual energy.
/// Capped to [-100, 100] dB.
inline MetricReport si_sdr(std::span<const double> estimate, std::span<const double> reference,
                           const SiSdrOptions& opts = {}) {
  detail::require(!reference.empty(), ErrorKind::InvalidInput, "zero-length signals");
  detail::require(estimate.size() == reference.size(), ErrorKind::InvalidInput,
                  "estimate and reference differ in length");
  const std::size_t n = reference.size();
  double me = 0.0, mr = 0.0;
  if (opts.remove_mean) {
    for (std::size_t i = 0; i < n; ++i) {
      me += estimate[i];
      mr += reference[i];
    }
    me /= static_cast<double>(n);
    mr /= static_cast<double>(n);
  }
  double dot = 0.0, rr = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double e = estimate[i] - me, r = reference[i] - mr;
    dot += e * r;
    rr += r * r;
  }
  detail::require(rr > 0.0, ErrorKind::InvalidInput, "reference is all zero");

  MetricReport rep;
  rep.optimal_scale = dot / rr;
  double te = 0.0, ee = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double s = rep.optimal_scale * (reference[i] - mr);
    const double err = (estimate[i] - me) - s;
    te += s * s;
    ee += err * err;
  }
  rep.target_energy = te;
  rep.error_energy = ee;
  if (ee <= 0.0) {
    rep.si_sdr_db = te > 0.0 ? kSiSdrCapDb : -kSiSdrCapDb;
  } else if (te <= 0.0) {
    rep.si_sdr_db = -kSiSdrCapDb;
  } else {
    rep.si_sdr_db = std::clamp(10.0 * std::log10(te / ee), -kSiSdrCapDb, kSiSdrCapDb);
  }
  return rep;
}

}  // namespace dereverb
