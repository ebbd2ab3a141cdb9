#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "dereverb/metrics.hpp"
#include "dereverb/random.hpp"

using namespace dereverb;

namespace {

std::vector<double> noise(Rng& rng, std::size_t n) {
  std::vector<double> x(n);
  for (double& v : x) v = rng.normal();
  return x;
}

double inner(const std::vector<double>& a, const std::vector<double>& b) {
  return std::inner_product(a.begin(), a.end(), b.begin(), 0.0);
}

std::vector<double> centered(std::vector<double> x) {
  const double m = std::accumulate(x.begin(), x.end(), 0.0) / x.size();
  for (double& v : x) v -= m;
  return x;
}

}  // namespace

TEST(SiSdr, ScaledCopyHitsCap) {
  Rng rng(1);
  const auto s = noise(rng, 1000);
  std::vector<double> est(s);
  for (double& v : est) v *= 3.0;
  EXPECT_EQ(si_sdr(est, s).si_sdr_db, kSiSdrCapDb);
  EXPECT_EQ(si_sdr(s, s).si_sdr_db, kSiSdrCapDb);
  EXPECT_NEAR(si_sdr(est, s).optimal_scale, 3.0, 1e-12);
}

TEST(SiSdr, OrthogonalNoiseGivesTenDecibels) {
  // s = (1, -1, 1, -1) and n = (1, 1, -1, -1) / sqrt(10) are zero-mean and
  // orthogonal, with ||s||^2 / ||n||^2 = 10.
  const double k = 1.0 / std::sqrt(10.0);
  const std::vector<double> s{1.0, -1.0, 1.0, -1.0};
  const std::vector<double> est{1.0 + k, -1.0 + k, 1.0 - k, -1.0 - k};
  EXPECT_NEAR(si_sdr(est, s).si_sdr_db, 10.0, 1e-9);

  Rng rng(2);
  auto a = centered(noise(rng, 4096)), b = centered(noise(rng, 4096));
  // Gram-Schmidt: make b orthogonal to a, then scale to energy ratio 10.
  const double c = inner(a, b) / inner(a, a);
  for (std::size_t i = 0; i < b.size(); ++i) b[i] -= c * a[i];
  b = centered(b);
  const double g = std::sqrt(inner(a, a) / (10.0 * inner(b, b)));
  std::vector<double> mix(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) mix[i] = a[i] + g * b[i];
  EXPECT_NEAR(si_sdr(mix, a).si_sdr_db, 10.0, 1e-9);
}

TEST(SiSdr, MatchesProjectionOracle) {
  Rng rng(3);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 16 + rng.below(500);
    const auto s = noise(rng, n);
    auto est = noise(rng, n);
    const double mix = rng.uniform(0.0, 3.0);
    for (std::size_t i = 0; i < n; ++i) est[i] = mix * s[i] + est[i] + rng.uniform(-1.0, 1.0);
    const auto sc = centered(s), ec = centered(est);
    const double alpha = inner(ec, sc) / inner(sc, sc);
    double te = 0.0, ee = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      te += alpha * sc[i] * alpha * sc[i];
      ee += (ec[i] - alpha * sc[i]) * (ec[i] - alpha * sc[i]);
    }
    EXPECT_NEAR(si_sdr(est, s).si_sdr_db, 10.0 * std::log10(te / ee), 1e-9);
  }
}

TEST(SiSdr, ScaleInvariance) {
  Rng rng(4);
  const auto s = noise(rng, 2000);
  auto est = noise(rng, 2000);
  for (std::size_t i = 0; i < est.size(); ++i) est[i] += 2.0 * s[i];
  const double base = si_sdr(est, s).si_sdr_db;
  for (double a : {1e-3, 0.7, -2.0, 45.0}) {
    std::vector<double> scaled(est);
    for (double& v : scaled) v *= a;
    EXPECT_NEAR(si_sdr(scaled, s).si_sdr_db, base, 1e-9);
  }
}

TEST(SiSdr, PermutationInvariance) {
  Rng rng(5);
  const auto s = noise(rng, 777), est = noise(rng, 777);
  std::vector<std::size_t> perm(777);
  std::iota(perm.begin(), perm.end(), 0);
  for (std::size_t i = perm.size() - 1; i > 0; --i) std::swap(perm[i], perm[rng.below(i + 1)]);
  std::vector<double> ps(777), pe(777);
  for (std::size_t i = 0; i < 777; ++i) {
    ps[i] = s[perm[i]];
    pe[i] = est[perm[i]];
  }
  EXPECT_NEAR(si_sdr(pe, ps).si_sdr_db, si_sdr(est, s).si_sdr_db, 1e-9);
}

TEST(SiSdr, MeanRemovalOption) {
  const std::vector<double> s{1.0, 2.0, 3.0, 4.0};
  const std::vector<double> est{2.0, 3.0, 4.0, 5.0};
  EXPECT_EQ(si_sdr(est, s).si_sdr_db, kSiSdrCapDb);
  const double raw = si_sdr(est, s, {.remove_mean = false}).si_sdr_db;
  EXPECT_LT(raw, 30.0);
  EXPECT_FALSE(si_sdr(est, s).pesq.has_value());
}

TEST(SiSdr, ZeroEstimateFloorsAtCap) {
  const std::vector<double> s{1.0, -1.0, 0.5}, zero(3, 0.0);
  EXPECT_EQ(si_sdr(zero, s).si_sdr_db, -kSiSdrCapDb);
}

TEST(SiSdr, Errors) {
  const std::vector<double> z(10, 0.0), a(10, 1.0), b(9, 1.0), empty;
  EXPECT_THROW(si_sdr(a, z), Error);
  EXPECT_THROW(si_sdr(a, b), Error);
  EXPECT_THROW(si_sdr(empty, empty), Error);
  try {
    si_sdr(a, z);
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::InvalidInput);
  }
}
