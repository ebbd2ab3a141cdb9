#pragma once

// Central finite-difference verification of the loss gradients.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "dereverb/objectives.hpp"
#include "dereverb/random.hpp"

namespace dereverb {

struct GradcheckOptions {
  std::uint64_t seed = 1;
  std::size_t points = 100;  // random (prediction, target) draws per loss
  std::size_t frames = 3;
  std::size_t bins = 4;
  double step = 1e-5;
  double tolerance = 1e-4;
  /// Coordinates within this distance of a kink are excluded.
  double exclusion = 1e-3;
};

struct GradcheckResult {
  std::string loss;
  std::size_t channels = 1;
  double max_relative_error = 0.0;
  std::size_t checked = 0;
  std::size_t skipped = 0;
  bool passed = false;
};

enum class LossKind { Ri, RiMag, Mimo };

inline std::string loss_name(LossKind k) {
  switch (k) {
    case LossKind::Ri: return "ri";
    case LossKind::RiMag: return "ri+mag";
    case LossKind::Mimo: return "mimo";
  }
  return "?";
}

inline LossReport evaluate_loss(LossKind k, const RealTensor& re, const RealTensor& im,
                                const ComplexSpectrogram& target) {
  switch (k) {
    case LossKind::Ri: return loss_ri(re, im, target);
    case LossKind::RiMag: return loss_ri_mag(re, im, target);
    case LossKind::Mimo: return loss_mimo(re, im, target);
  }
  return {};
}

namespace detail {

/// True when element i of (re, im) lies within `eps` of a point where the
/// loss is not differentiable.
inline bool near_kink(LossKind k, const RealTensor& re, const RealTensor& im,
                      const ComplexSpectrogram& target, std::size_t i, double eps) {
  const double r = re.data()[i], j = im.data()[i];
  const Complex s = target.data()[i];
  if (std::abs(r - s.real()) < eps || std::abs(j - s.imag()) < eps) return true;
  if (k == LossKind::Ri) return false;
  const double mag = std::hypot(r, j);
  return mag < eps || std::abs(mag - std::abs(s)) < eps;
}

}  // namespace detail

/// Draws random predictions/targets and compares every analytic gradient
/// coordinate against a central difference of the loss value. Relative
/// error is |g - g_fd| / max(|g|, |g_fd|, 1e-6).
inline GradcheckResult run_gradcheck(LossKind kind, std::size_t channels,
                                     const GradcheckOptions& opts = {}) {
  GradcheckResult res;
  res.loss = loss_name(kind);
  res.channels = channels;
  Rng rng(derive_seed(opts.seed, static_cast<std::uint64_t>(kind), channels));
  const std::size_t T = opts.frames, F = opts.bins;
  for (std::size_t point = 0; point < opts.points; ++point) {
    ComplexSpectrogram target(channels, T, F);
    RealTensor re(channels, T, F), im(channels, T, F);
    for (auto& z : target.data()) z = Complex{rng.normal(), rng.normal()};
    for (auto& v : re.data()) v = rng.normal();
    for (auto& v : im.data()) v = rng.normal();

    const LossReport rep = evaluate_loss(kind, re, im, target);
    for (int part = 0; part < 2; ++part) {
      RealTensor& x = part == 0 ? re : im;
      const RealTensor& g = part == 0 ? rep.grad_real : rep.grad_imag;
      for (std::size_t i = 0; i < x.size(); ++i) {
        // For the MIMO loss every channel at a T-F unit couples through the
        // phase term; skip the coordinate if any channel there is near a kink.
        bool skip = false;
        if (kind == LossKind::Mimo) {
          const std::size_t tf = i % (T * F);
          for (std::size_t p = 0; p < channels && !skip; ++p)
            skip = detail::near_kink(kind, re, im, target, p * T * F + tf, opts.exclusion);
        } else {
          skip = detail::near_kink(kind, re, im, target, i, opts.exclusion);
        }
        if (skip) {
          ++res.skipped;
          continue;
        }
        // The loss is a sum over T-F units, so the difference only needs the
        // unit that owns coordinate i. Evaluating that unit alone keeps the
        // rounding noise of the other terms out of the quotient.
        const std::size_t tf = i % (T * F), own = i / (T * F);
        ComplexSpectrogram unit_target(channels, 1, 1);
        RealTensor unit_re(channels, 1, 1), unit_im(channels, 1, 1);
        for (std::size_t p = 0; p < channels; ++p) {
          unit_target.data()[p] = target.data()[p * T * F + tf];
          unit_re.data()[p] = re.data()[p * T * F + tf];
          unit_im.data()[p] = im.data()[p * T * F + tf];
        }
        RealTensor& ux = part == 0 ? unit_re : unit_im;
        const double saved = ux.data()[own];
        ux.data()[own] = saved + opts.step;
        const double up = evaluate_loss(kind, unit_re, unit_im, unit_target).value;
        ux.data()[own] = saved - opts.step;
        const double down = evaluate_loss(kind, unit_re, unit_im, unit_target).value;
        const double fd = (up - down) / (2.0 * opts.step);
        const double a = g.data()[i];
        const double rel = std::abs(a - fd) / std::max({std::abs(a), std::abs(fd), 1e-6});
        res.max_relative_error = std::max(res.max_relative_error, rel);
        ++res.checked;
      }
    }
  }
  res.passed = res.checked > 0 && res.max_relative_error < opts.tolerance;
  return res;
}

/// Default suite: Ri, RiMag (single channel), Mimo at P = 2 and P = 4.
inline std::vector<GradcheckResult> run_gradcheck_suite(const GradcheckOptions& opts = {}) {
  return {run_gradcheck(LossKind::Ri, 1, opts), run_gradcheck(LossKind::RiMag, 1, opts),
          run_gradcheck(LossKind::Mimo, 2, opts), run_gradcheck(LossKind::Mimo, 4, opts)};
}

}  // namespace dereverb
