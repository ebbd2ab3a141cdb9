#pragma once

// Oracle time-frequency masks and complex spectral mapping losses with
// analytic gradients with respect to the predicted real/imaginary parts.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "dereverb/error.hpp"
#include "dereverb/spectral.hpp"

namespace dereverb {

inline constexpr double kMaskFloor = 1e-8;
inline constexpr double kMagnitudeEpsilon = 1e-12;

/// Real-valued mask over (frame, bin) with clip bounds [lo, hi].
struct MaskSpectrogram {
  RealTensor values;  // one channel
  double lo = 0.0;
  double hi = 1.0;
};

inline double clip(double x, double lo, double hi) { return std::min(std::max(x, lo), hi); }

namespace detail {

inline void require_single_pair(const ComplexSpectrogram& target,
                                const ComplexSpectrogram& mixture) {
  require(target.same_shape(mixture), ErrorKind::InvalidInput,
          "target and mixture differ in shape");
  require(target.channels() == 1, ErrorKind::InvalidInput, "masks are single-channel");
}

}  // namespace detail

/// Spectral magnitude mask clip(|S| / |Y|, 0, 10).
inline MaskSpectrogram oracle_smm(const ComplexSpectrogram& target,
                                  const ComplexSpectrogram& mixture) {
  detail::require_single_pair(target, mixture);
  MaskSpectrogram m{RealTensor(1, target.frames(), target.bins()), 0.0, 10.0};
  for (std::size_t i = 0; i < target.size(); ++i) {
    const double ratio =
        std::abs(target.data()[i]) / std::max(std::abs(mixture.data()[i]), kMaskFloor);
    m.values.data()[i] = clip(ratio, m.lo, m.hi);
  }
  return m;
}

/// Phase-sensitive mask clip(|S| cos(angle S - angle Y) / |Y|, 0, 1).
inline MaskSpectrogram oracle_psm(const ComplexSpectrogram& target,
                                  const ComplexSpectrogram& mixture) {
  detail::require_single_pair(target, mixture);
  MaskSpectrogram m{RealTensor(1, target.frames(), target.bins()), 0.0, 1.0};
  for (std::size_t i = 0; i < target.size(); ++i) {
    const Complex s = target.data()[i], y = mixture.data()[i];
    const double as = std::abs(s) > 0.0 ? std::arg(s) : 0.0;
    const double ay = std::abs(y) > 0.0 ? std::arg(y) : 0.0;
    const double v = std::abs(s) * std::cos(as - ay) / std::max(std::abs(y), kMaskFloor);
    m.values.data()[i] = clip(v, m.lo, m.hi);
  }
  return m;
}

/// S_hat = mask * Y, keeping the mixture phase.
inline ComplexSpectrogram apply_mask(const MaskSpectrogram& mask,
                                     const ComplexSpectrogram& mixture) {
  detail::require(mask.values.channels() == 1 && mixture.channels() == 1 &&
                      mask.values.frames() == mixture.frames() &&
                      mask.values.bins() == mixture.bins(),
                  ErrorKind::InvalidInput, "mask and mixture differ in shape");
  ComplexSpectrogram out(1, mixture.frames(), mixture.bins());
  for (std::size_t i = 0; i < mixture.size(); ++i)
    out.data()[i] = mask.values.data()[i] * mixture.data()[i];
  return out;
}

/// Loss value, its components and gradients w.r.t. the predicted RI tensors.
struct LossReport {
  double value = 0.0;
  double ri_term = 0.0;
  double magnitude_term = 0.0;
  double phase_term = 0.0;
  RealTensor grad_real;
  RealTensor grad_imag;
};

inline double sign(double x) { return (x > 0.0) - (x < 0.0); }

namespace detail {

inline void require_prediction(const RealTensor& re, const RealTensor& im,
                               const ComplexSpectrogram& target) {
  require(re.same_shape(im), ErrorKind::InvalidInput, "predicted RI tensors differ in shape");
  require(re.channels() == target.channels() && re.frames() == target.frames() &&
              re.bins() == target.bins(),
          ErrorKind::InvalidInput, "prediction and target differ in shape");
}

/// Adds the RI (and optionally magnitude) L1 terms, scaled by `weight`, to
/// `report`. Sum reduction over all T-F units.
inline void accumulate_ri_mag(const RealTensor& re, const RealTensor& im,
                              const ComplexSpectrogram& target, bool with_magnitude,
                              double weight, LossReport& report) {
  for (std::size_t i = 0; i < re.size(); ++i) {
    const double r = re.data()[i], j = im.data()[i];
    const Complex s = target.data()[i];
    const double dr = r - s.real(), di = j - s.imag();
    report.ri_term += weight * (std::abs(dr) + std::abs(di));
    double gr = sign(dr), gi = sign(di);
    if (with_magnitude) {
      const double mag = std::sqrt(r * r + j * j + kMagnitudeEpsilon);
      const double dm = mag - std::abs(s);
      report.magnitude_term += weight * std::abs(dm);
      gr += sign(dm) * r / mag;
      gi += sign(dm) * j / mag;
    }
    report.grad_real.data()[i] += weight * gr;
    report.grad_imag.data()[i] += weight * gi;
  }
}

}  // namespace detail

/// Sum of |R_hat - Re S| + |I_hat - Im S|; subgradient sign(0) = 0.
inline LossReport loss_ri(const RealTensor& pred_real, const RealTensor& pred_imag,
                          const ComplexSpectrogram& target) {
  detail::require_prediction(pred_real, pred_imag, target);
  LossReport rep{0, 0, 0, 0, RealTensor(pred_real.channels(), pred_real.frames(), pred_real.bins()),
                 RealTensor(pred_real.channels(), pred_real.frames(), pred_real.bins())};
  detail::accumulate_ri_mag(pred_real, pred_imag, target, false, 1.0, rep);
  rep.value = rep.ri_term;
  return rep;
}

/// RI loss plus || |S_hat| - |S| ||_1, with |S_hat| = sqrt(R^2 + I^2 + 1e-12).
inline LossReport loss_ri_mag(const RealTensor& pred_real, const RealTensor& pred_imag,
                              const ComplexSpectrogram& target) {
  detail::require_prediction(pred_real, pred_imag, target);
  LossReport rep{0, 0, 0, 0, RealTensor(pred_real.channels(), pred_real.frames(), pred_real.bins()),
                 RealTensor(pred_real.channels(), pred_real.frames(), pred_real.bins())};
  detail::accumulate_ri_mag(pred_real, pred_imag, target, true, 1.0, rep);
  rep.value = rep.ri_term + rep.magnitude_term;
  return rep;
}

/// Multi-channel loss: mean over channels of the RI+Mag loss, plus the
/// magnitude-weighted cosine distance between predicted and true
/// inter-channel phase differences,
///   1/(P^2-P) sum_{p'} |S_p'| sum_{p''} (1 - cos(dphi_hat - dphi)) / 2,
/// summed over T-F units. The weight uses the first index's target magnitude.
inline LossReport loss_mimo(const RealTensor& pred_real, const RealTensor& pred_imag,
                            const ComplexSpectrogram& target) {
  detail::require_prediction(pred_real, pred_imag, target);
  const std::size_t P = target.channels();
  detail::require(P >= 2, ErrorKind::InvalidInput, "MIMO loss needs at least two channels");
  LossReport rep{0, 0, 0, 0, RealTensor(P, target.frames(), target.bins()),
                 RealTensor(P, target.frames(), target.bins())};
  detail::accumulate_ri_mag(pred_real, pred_imag, target, true, 1.0 / static_cast<double>(P), rep);

  const double norm = 1.0 / static_cast<double>(P * P - P);
  std::vector<double> ph(P), tph(P), tmag(P), dph_dr(P), dph_di(P);
  for (std::size_t t = 0; t < target.frames(); ++t)
    for (std::size_t f = 0; f < target.bins(); ++f) {
      for (std::size_t p = 0; p < P; ++p) {
        const double r = pred_real(p, t, f), j = pred_imag(p, t, f);
        const Complex s = target(p, t, f);
        ph[p] = std::atan2(j, r);
        tph[p] = std::atan2(s.imag(), s.real());
        tmag[p] = std::abs(s);
        const double m2 = r * r + j * j;
        dph_dr[p] = m2 > 0.0 ? -j / m2 : 0.0;
        dph_di[p] = m2 > 0.0 ? r / m2 : 0.0;
      }
      for (std::size_t a = 0; a < P; ++a)
        for (std::size_t b = 0; b < P; ++b) {
          if (a == b) continue;
          const double d = ph[a] - ph[b] - (tph[a] - tph[b]);
          rep.phase_term += norm * tmag[a] * (1.0 - std::cos(d)) / 2.0;
          // d/dphi_a = +w sin(d)/2, d/dphi_b = -w sin(d)/2
          const double g = norm * tmag[a] * std::sin(d) / 2.0;
          rep.grad_real(a, t, f) += g * dph_dr[a];
          rep.grad_imag(a, t, f) += g * dph_di[a];
          rep.grad_real(b, t, f) -= g * dph_dr[b];
          rep.grad_imag(b, t, f) -= g * dph_di[b];
        }
    }
  rep.value = rep.ri_term + rep.magnitude_term + rep.phase_term;
  return rep;
}

}  // namespace dereverb
