#pragma once

// Time-invariant MVDR from estimated complex spectra: covariance
// estimation, principal-eigenvector relative transfer function, weights
// and application.

#include <cmath>
#include <cstddef>
#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "dereverb/error.hpp"
#include "dereverb/spectral.hpp"

namespace dereverb {

using CMatrix = Eigen::MatrixXcd;
using CVector = Eigen::VectorXcd;

enum class CovarianceKind { Speech, Noise };

struct CovarianceStack {
  std::vector<CMatrix> per_bin;  // one P x P matrix per frequency
  CovarianceKind kind = CovarianceKind::Speech;
  std::size_t frames = 0;

  std::size_t bins() const noexcept { return per_bin.size(); }
  std::size_t channels() const noexcept {
    return per_bin.empty() ? 0 : static_cast<std::size_t>(per_bin.front().rows());
  }
};

/// Phi(f) = (1/T) sum_t x(t,f) x(t,f)^H.
inline CovarianceStack estimate_covariance(const ComplexSpectrogram& spec,
                                           CovarianceKind kind = CovarianceKind::Speech) {
  detail::require(spec.frames() >= 1, ErrorKind::InvalidInput, "covariance needs T >= 1");
  detail::require(spec.channels() >= 1, ErrorKind::InvalidInput, "covariance needs P >= 1");
  const auto P = static_cast<Eigen::Index>(spec.channels());
  CovarianceStack out;
  out.kind = kind;
  out.frames = spec.frames();
  out.per_bin.assign(spec.bins(), CMatrix::Zero(P, P));
  CVector x(P);
  for (std::size_t f = 0; f < spec.bins(); ++f) {
    CMatrix& phi = out.per_bin[f];
    for (std::size_t t = 0; t < spec.frames(); ++t) {
      for (Eigen::Index p = 0; p < P; ++p) x(p) = spec(static_cast<std::size_t>(p), t, f);
      phi.noalias() += x * x.adjoint();
    }
    phi /= static_cast<double>(spec.frames());
    // Exact Hermitian symmetry and a real diagonal.
    phi = (0.5 * (phi + phi.adjoint())).eval();
  }
  return out;
}

/// Noise spectra implied by a speech estimate: V = Y - S.
inline ComplexSpectrogram residual_spectrogram(const ComplexSpectrogram& mixture,
                                               const ComplexSpectrogram& speech_estimate) {
  detail::require(mixture.same_shape(speech_estimate), ErrorKind::InvalidInput,
                  "mixture and estimate differ in shape");
  ComplexSpectrogram out(mixture.channels(), mixture.frames(), mixture.bins());
  for (std::size_t i = 0; i < out.size(); ++i)
    out.data()[i] = mixture.data()[i] - speech_estimate.data()[i];
  return out;
}

struct PowerIterationOptions {
  double tolerance = 1e-10;
  int max_iterations = 500;
  /// Number of squarings applied before iterating (iterates on H^(2^k)).
  int squarings = 5;
  double hermitian_tolerance = 1e-9;
};

struct Eigenpair {
  CVector vector;
  double value = 0.0;
  int iterations = 0;
};

/// Principal eigenvector of a Hermitian PSD matrix by power iteration on
/// H^(2^k). Returns a unit vector whose component `reference` is real and
/// nonnegative (when nonzero).
inline Eigenpair principal_eigenpair(const CMatrix& H, Eigen::Index reference = 0,
                                     const PowerIterationOptions& opts = {}) {
  using detail::require;
  require(H.rows() == H.cols() && H.rows() >= 1, ErrorKind::InvalidInput, "matrix must be square");
  require(reference >= 0 && reference < H.rows(), ErrorKind::InvalidInput,
          "reference index out of range");
  const double scale = H.cwiseAbs().maxCoeff();
  require(scale > 0.0 && std::isfinite(scale), ErrorKind::DegenerateInput,
          "zero (or non-finite) matrix has no principal eigenvector");
  require((H - H.adjoint()).cwiseAbs().maxCoeff() <= opts.hermitian_tolerance * scale,
          ErrorKind::InvalidInput, "matrix is not Hermitian");

  const CMatrix A = (0.5 * (H + H.adjoint())) / scale;
  CMatrix M = A;
  for (int s = 0; s < opts.squarings; ++s) {
    M = (M * M).eval();
    const double tr = M.trace().real();
    if (!(tr > 0.0)) break;
    M /= tr;
  }

  // Start from the basis vector with the largest image under M (ties keep
  // the reference), so a start orthogonal to the principal direction is
  // avoided.
  Eigen::Index start = reference;
  double best = M.col(reference).norm();
  for (Eigen::Index j = 0; j < M.cols(); ++j) {
    const double n = M.col(j).norm();
    if (n > best * (1.0 + 1e-12)) {
      best = n;
      start = j;
    }
  }
  CVector v = CVector::Zero(A.rows());
  v(start) = 1.0;

  Eigenpair out;
  double lambda = (v.adjoint() * A * v)(0).real();
  for (int it = 1; it <= opts.max_iterations; ++it) {
    CVector w = M * v;
    const double n = w.norm();
    if (!(n > 0.0)) break;
    v = w / n;
    const CVector Av = A * v;
    const double next = v.dot(Av).real();
    out.iterations = it;
    const double residual = (Av - next * v).norm();
    const bool converged =
        std::abs(next - lambda) <= opts.tolerance * std::abs(next) && residual <= opts.tolerance;
    lambda = next;
    if (converged) break;
  }

  const Complex vq = v(reference);
  if (std::abs(vq) > 0.0) v *= std::conj(vq) / std::abs(vq);
  v(reference) = Complex{v(reference).real(), 0.0};
  out.vector = v;
  out.value = lambda * scale;
  return out;
}

inline CVector principal_eigenvector(const CMatrix& H, Eigen::Index reference = 0) {
  return principal_eigenpair(H, reference).vector;
}

enum class BinStatus { Ok, ReferenceDegenerate, Singular };

/// Relative transfer function c(f; q), with c_q(f) = 1.
struct SteeringVector {
  std::vector<CVector> per_bin;
  std::vector<BinStatus> status;
  Eigen::Index reference = 0;
};

/// c(f; q) = r(f) / r_q(f), r = principal eigenvector of the speech
/// covariance. Degenerate bins get e_q and are flagged for pass-through.
inline SteeringVector relative_transfer_function(const CovarianceStack& speech_cov,
                                                 Eigen::Index reference = 0) {
  detail::require(speech_cov.bins() >= 1, ErrorKind::InvalidInput, "empty covariance stack");
  const auto P = static_cast<Eigen::Index>(speech_cov.channels());
  detail::require(reference >= 0 && reference < P, ErrorKind::InvalidInput,
                  "reference index out of range");
  SteeringVector out;
  out.reference = reference;
  out.per_bin.reserve(speech_cov.bins());
  out.status.reserve(speech_cov.bins());
  for (const CMatrix& phi : speech_cov.per_bin) {
    std::optional<CVector> r;
    try {
      r = principal_eigenvector(phi, reference);
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::DegenerateInput) throw;
    }
    if (!r || std::abs((*r)(reference)) < 1e-12 * r->norm()) {
      CVector e_q = CVector::Zero(P);
      e_q(reference) = 1.0;
      out.per_bin.push_back(e_q);
      out.status.push_back(BinStatus::ReferenceDegenerate);
      continue;
    }
    CVector c = *r / (*r)(reference);
    c(reference) = Complex{1.0, 0.0};
    out.per_bin.push_back(std::move(c));
    out.status.push_back(BinStatus::Ok);
  }
  return out;
}

struct BeamformerWeights {
  std::vector<CVector> per_bin;
  std::vector<BinStatus> status;
  Eigen::Index reference = 0;

  std::size_t fallback_count() const {
    std::size_t n = 0;
    for (BinStatus s : status) n += s != BinStatus::Ok;
    return n;
  }
};

/// Diagonal load added before inversion: 1e-6 * trace / P, or 1e-10 for a
/// zero matrix.
inline double diagonal_loading(const CMatrix& phi) {
  const double tr = phi.trace().real();
  return tr > 0.0 ? 1e-6 * tr / static_cast<double>(phi.rows()) : 1e-10;
}

namespace detail {

/// Solves A x = b for Hermitian positive definite A via Cholesky.
/// Returns nullopt when A is not numerically positive definite.
inline std::optional<CVector> cholesky_solve(const CMatrix& A, const CVector& b) {
  const Eigen::Index n = A.rows();
  CMatrix L = CMatrix::Zero(n, n);
  for (Eigen::Index j = 0; j < n; ++j) {
    Complex acc = A(j, j);
    for (Eigen::Index k = 0; k < j; ++k) acc -= L(j, k) * std::conj(L(j, k));
    const double d = acc.real();
    if (!(d > 0.0) || !std::isfinite(d)) return std::nullopt;
    L(j, j) = std::sqrt(d);
    for (Eigen::Index i = j + 1; i < n; ++i) {
      Complex s = A(i, j);
      for (Eigen::Index k = 0; k < j; ++k) s -= L(i, k) * std::conj(L(j, k));
      L(i, j) = s / L(j, j).real();
    }
  }
  CVector y(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    Complex s = b(i);
    for (Eigen::Index k = 0; k < i; ++k) s -= L(i, k) * y(k);
    y(i) = s / L(i, i).real();
  }
  CVector x(n);
  for (Eigen::Index i = n; i-- > 0;) {
    Complex s = y(i);
    for (Eigen::Index k = i + 1; k < n; ++k) s -= std::conj(L(k, i)) * x(k);
    x(i) = s / L(i, i).real();
  }
  return x;
}

}  // namespace detail

/// w = Phi^-1 c / (c^H Phi^-1 c) after diagonal loading. Throws
/// SingularBeamformer when the denominator falls below 1e-30.
inline CVector mvdr_weight(const CMatrix& noise_cov, const CVector& steer) {
  detail::require(noise_cov.rows() == steer.size() && noise_cov.cols() == steer.size(),
                  ErrorKind::InvalidInput, "covariance and steering vector sizes differ");
  CMatrix loaded = 0.5 * (noise_cov + noise_cov.adjoint());
  loaded.diagonal().array() += diagonal_loading(noise_cov);
  const auto x = detail::cholesky_solve(loaded, steer);
  detail::require(x.has_value(), ErrorKind::SingularBeamformer,
                  "loaded noise covariance is not positive definite");
  const Complex denom = steer.dot(*x);  // c^H Phi^-1 c
  detail::require(std::abs(denom) >= 1e-30 && std::isfinite(std::abs(denom)),
                  ErrorKind::SingularBeamformer, "MVDR denominator is singular");
  return *x / denom;
}

/// Per-frequency MVDR weights. Bins whose steering vector is degenerate or
/// whose solve is singular fall back to selecting the reference channel.
inline BeamformerWeights mvdr_weights(const CovarianceStack& noise_cov,
                                      const SteeringVector& steer) {
  detail::require(noise_cov.bins() == steer.per_bin.size(), ErrorKind::InvalidInput,
                  "covariance and steering vector differ in frequency count");
  BeamformerWeights out;
  out.reference = steer.reference;
  const auto P = static_cast<Eigen::Index>(noise_cov.channels());
  for (std::size_t f = 0; f < noise_cov.bins(); ++f) {
    detail::require(steer.per_bin[f].size() == P, ErrorKind::InvalidInput,
                    "covariance and steering vector differ in channel count");
    CVector pass = CVector::Zero(P);
    pass(steer.reference) = 1.0;
    if (steer.status[f] != BinStatus::Ok) {
      out.per_bin.push_back(pass);
      out.status.push_back(steer.status[f]);
      continue;
    }
    try {
      out.per_bin.push_back(mvdr_weight(noise_cov.per_bin[f], steer.per_bin[f]));
      out.status.push_back(BinStatus::Ok);
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::SingularBeamformer) throw;
      out.per_bin.push_back(pass);
      out.status.push_back(BinStatus::Singular);
    }
  }
  return out;
}

/// BF(t, f) = w(f)^H Y(t, f).
inline ComplexSpectrogram apply_beamformer(const BeamformerWeights& weights,
                                           const ComplexSpectrogram& mixture) {
  detail::require(weights.per_bin.size() == mixture.bins(), ErrorKind::InvalidInput,
                  "weights and mixture differ in frequency count");
  ComplexSpectrogram out(1, mixture.frames(), mixture.bins());
  for (std::size_t f = 0; f < mixture.bins(); ++f) {
    const CVector& w = weights.per_bin[f];
    detail::require(static_cast<std::size_t>(w.size()) == mixture.channels(),
                    ErrorKind::InvalidInput, "weights and mixture differ in channel count");
    for (std::size_t t = 0; t < mixture.frames(); ++t) {
      Complex acc{0.0, 0.0};
      for (std::size_t p = 0; p < mixture.channels(); ++p)
        acc += std::conj(w(static_cast<Eigen::Index>(p))) * mixture(p, t, f);
      out(0, t, f) = acc;
    }
  }
  return out;
}

}  // namespace dereverb
