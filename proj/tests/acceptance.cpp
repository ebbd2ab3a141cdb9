// Acceptance suite. Prints one PASS/FAIL line per criterion and exits
// non-zero if any criterion fails.

#include <Eigen/Eigenvalues>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numbers>
#include <numeric>
#include <sstream>
#include <string>
#include <thread>

#include "dereverb/commands.hpp"

using namespace dereverb;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;

  void check(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail += (detail.empty() ? "" : "; ") + ("violated: " + what);
    }
  }
  void note(const std::string& s) { detail += (detail.empty() ? "" : "; ") + s; }
};

std::string sci(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3e", v);
  return buf;
}

std::string fix(double v, int digits = 3) { return detail::fixed(v, digits); }

std::size_t workers() { return std::max(1u, std::thread::hardware_concurrency()); }

CVector random_vector(Rng& rng, Eigen::Index P) {
  CVector v(P);
  for (Eigen::Index i = 0; i < P; ++i) v(i) = {rng.normal(), rng.normal()};
  return v;
}

CMatrix random_psd(Rng& rng, Eigen::Index P) {
  CMatrix B(P, P);
  for (Eigen::Index i = 0; i < P; ++i)
    for (Eigen::Index k = 0; k < P; ++k) B(i, k) = {rng.normal(), rng.normal()};
  CMatrix A = B * B.adjoint();
  return 0.5 * (A + A.adjoint());
}

CMatrix loaded(const CMatrix& phi) {
  CMatrix out = phi;
  out.diagonal().array() += diagonal_loading(phi);
  return out;
}

double quad(const CMatrix& A, const CVector& w) { return w.dot(A * w).real(); }

std::vector<double> gaussian(Rng& rng, std::size_t n) {
  std::vector<double> x(n);
  for (double& v : x) v = rng.normal();
  return x;
}

double inner(const std::vector<double>& a, const std::vector<double>& b) {
  return std::inner_product(a.begin(), a.end(), b.begin(), 0.0);
}

std::vector<double> centered(std::vector<double> x) {
  const double m = std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
  for (double& v : x) v -= m;
  return x;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

SystemConfig system_config(Topology t, std::vector<std::size_t> mics) {
  SystemConfig c;
  c.topology = t;
  c.mic_subset = std::move(mics);
  c.reference_mic = 1;
  return c;
}

// ---------------------------------------------------------------- 1

Outcome stft_round_trip() {
  Outcome o;
  Rng rng(101);
  const StftConfig cfg;
  double worst = 0.0;
  for (int i = 0; i < 100; ++i) {
    const std::size_t n = 16000 + rng.below(48001);
    MultichannelWaveform w(1, n, 16000.0);
    for (double& v : w[0]) v = rng.normal();
    const auto back = istft(stft(w, cfg), cfg, n);
    for (std::size_t k = 0; k < n; ++k) worst = std::max(worst, std::abs(back[0][k] - w[0][k]));
  }
  o.note("max_abs_error=" + sci(worst));
  o.check(worst < 1e-6, "max abs error < 1e-6");
  return o;
}

// ---------------------------------------------------------------- 2

Outcome gradient_suite() {
  Outcome o;
  for (const auto& r : run_gradcheck_suite()) {
    o.note(r.loss + "/P" + std::to_string(r.channels) + "=" + sci(r.max_relative_error) +
           " (" + std::to_string(r.checked) + " checked, " + std::to_string(r.skipped) +
           " skipped)");
    o.check(r.passed && r.max_relative_error < 1e-4,
            r.loss + " P=" + std::to_string(r.channels) + " relative error < 1e-4");
  }
  return o;
}

// ---------------------------------------------------------------- 3

Outcome mvdr_identities() {
  Outcome o;
  Rng rng(103);
  double gain_err = 0.0, slack = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    const Eigen::Index P = trial % 3 == 0 ? 2 : (trial % 3 == 1 ? 4 : 8);
    const CMatrix phi = random_psd(rng, P);
    CVector c = random_vector(rng, P);
    c /= c(0);
    const CVector w = mvdr_weight(phi, c);
    gain_err = std::max(gain_err, std::abs(w.dot(c) - 1.0));
    const CMatrix A = loaded(phi);
    const double best = quad(A, w);
    for (int k = 0; k < 5; ++k) {
      CVector z = random_vector(rng, P) * std::pow(10.0, rng.uniform(-4.0, 0.0));
      z -= c * (c.dot(z) / c.squaredNorm());
      slack = std::max(slack, best - quad(A, w + z));
    }
  }
  o.note("max|w^H c - 1|=" + sci(gain_err));
  o.note("competitor_slack=" + sci(slack));
  o.check(gain_err < 1e-8, "distortionless < 1e-8");
  o.check(slack <= 1e-9, "no competitor below optimum by more than 1e-9");

  double brute_err = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    CVector d = random_vector(rng, 2), c = random_vector(rng, 2);
    c /= c(0);
    const CMatrix phi = rng.uniform(1.0, 20.0) * d * d.adjoint() +
                        rng.uniform(0.01, 0.5) * CMatrix::Identity(2, 2);
    const CMatrix A = loaded(phi);
    const CVector w0 = c / c.squaredNorm();
    CVector u(2);
    u << -std::conj(c(1)), std::conj(c(0));
    u /= u.norm();
    auto cost = [&](double re, double im) { return quad(A, w0 + Complex(re, im) * u); };
    double br = 0.0, bi = 0.0, span = 50.0;
    for (int zoom = 0; zoom < 60; ++zoom) {
      double best = cost(br, bi), nr = br, ni = bi;
      for (int a = -10; a <= 10; ++a)
        for (int b = -10; b <= 10; ++b) {
          const double r = br + span * a / 10.0, i = bi + span * b / 10.0;
          const double v = cost(r, i);
          if (v < best) best = v, nr = r, ni = i;
        }
      br = nr;
      bi = ni;
      span *= 0.6;
    }
    const CVector brute = w0 + Complex(br, bi) * u;
    brute_err = std::max(brute_err, (mvdr_weight(phi, c) - brute).cwiseAbs().maxCoeff());
  }
  o.note("brute_force_err=" + sci(brute_err));
  o.check(brute_err < 1e-6, "brute-force agreement < 1e-6");
  return o;
}

// ---------------------------------------------------------------- 4

Outcome eigen_covariance_oracles() {
  Outcome o;
  Rng rng(104);
  double cov_err = 0.0;
  for (auto [P, T] : {std::pair<std::size_t, std::size_t>{2, 5}, {4, 41}, {8, 13}}) {
    ComplexSpectrogram s(P, T, 9);
    for (auto& z : s.data()) z = {rng.normal(), rng.normal()};
    const auto cov = estimate_covariance(s);
    for (std::size_t f = 0; f < 9; ++f)
      for (std::size_t a = 0; a < P; ++a)
        for (std::size_t b = 0; b < P; ++b) {
          Complex acc{0.0, 0.0};
          for (std::size_t t = 0; t < T; ++t) acc += s(a, t, f) * std::conj(s(b, t, f));
          acc /= static_cast<double>(T);
          cov_err = std::max(cov_err, std::abs(cov.per_bin[f](a, b) - acc));
        }
  }
  double residual = 0.0, value_err = 0.0;
  for (int trial = 0; trial < 500; ++trial) {
    const Eigen::Index P = trial % 3 == 0 ? 2 : (trial % 3 == 1 ? 4 : 8);
    const CMatrix H = random_psd(rng, P);
    const auto e = principal_eigenpair(H);
    Eigen::SelfAdjointEigenSolver<CMatrix> oracle(H);
    const double lmax = oracle.eigenvalues()(P - 1);
    residual = std::max(residual, (H * e.vector - e.value * e.vector).norm());
    value_err = std::max(value_err, std::abs(e.value - lmax) / lmax);
  }
  o.note("covariance_err=" + sci(cov_err));
  o.note("eig_residual=" + sci(residual));
  o.note("eig_value_rel_err=" + sci(value_err));
  o.check(cov_err < 1e-12, "covariance error < 1e-12");
  o.check(residual < 1e-6, "eigenpair residual < 1e-6");
  o.check(value_err < 1e-6, "eigenvalue agrees with full decomposition");
  return o;
}

// ---------------------------------------------------------------- 5

Outcome rir_calibration() {
  Outcome o;
  const std::vector<double> targets{0.3, 0.6, 1.0};
  std::vector<double> measured(targets.size() * 20, 0.0);
  parallel_for(measured.size(), workers(), [&](std::size_t i) {
    const double t60 = targets[i / 20];
    auto scene = sample_scene(derive_seed(105, i));
    scene.room.target_t60 = t60;
    const auto rir =
        simulate_rir(scene.room, scene.source_position, scene.array.mic_position(0), 16000.0);
    try {
      measured[i] = measure_t60(rir);
    } catch (const Error&) {
      measured[i] = std::nan("");
    }
  });
  for (std::size_t k = 0; k < targets.size(); ++k) {
    double lo = 1e9, hi = -1e9;
    for (std::size_t j = 0; j < 20; ++j) {
      const double m = measured[k * 20 + j];
      lo = std::min(lo, m / targets[k]);
      hi = std::max(hi, m / targets[k]);
      o.check(std::isfinite(m) && std::abs(m - targets[k]) <= 0.25 * targets[k],
              "T60 " + fix(targets[k], 1) + " room " + std::to_string(j) + " within 25%");
    }
    o.note("T60=" + fix(targets[k], 1) + " ratio in [" + fix(lo) + ", " + fix(hi) + "]");
  }

  // Free field at an integer delay and a fractional one.
  RirRequest req;
  req.room = {30.0, 5.0, 3.0};
  req.source = {1.0, 1.0, 1.5};
  req.free_field = true;
  const double d = 343.0 * 0.0625;
  req.mic = {1.0 + d, 1.0, 1.5};
  const auto integer = cmd_rir(req);
  double off_peak = 0.0;
  for (std::size_t i = 0; i < integer.rir.taps.size(); ++i)
    if (i != 1000) off_peak = std::max(off_peak, std::abs(integer.rir.taps[i]));
  const double amp = 1.0 / (4.0 * std::numbers::pi * d);
  const double peak_err = std::abs(integer.rir.taps.at(1000) - amp) / amp;
  o.note("free_field peak_rel_err=" + sci(peak_err) + " off_peak=" + sci(off_peak));
  o.check(peak_err < 1e-12 && off_peak == 0.0, "free-field integer delay is a single tap");

  req.mic = {1.0 + d + 343.0 * 0.3 / 16000.0, 1.0, 1.5};
  const auto frac = cmd_rir(req);
  double sum = 0.0;
  for (double v : frac.rir.taps) sum += v;
  const double dc_err = std::abs(sum - 1.0 / (4.0 * std::numbers::pi * distance(req.source, req.mic))) /
                        amp;
  o.note("free_field fractional dc_rel_err=" + sci(dc_err));
  o.check(dc_err < 1e-2, "fractional free-field tap preserves amplitude");
  return o;
}

// ---------------------------------------------------------------- mini-set

struct MiniSet {
  std::vector<MixtureRecord> records;
  double build_seconds = 0.0;
};

MiniSet build_mini_set() {
  const auto t0 = std::chrono::steady_clock::now();
  ExperimentConfig cfg;
  cfg.utterances = 20;
  cfg.duration_s = 4.0;
  const auto plan = plan_dataset(cfg);
  MiniSet set;
  set.records.resize(plan.size());
  parallel_for(plan.size(), workers(), [&](std::size_t i) { set.records[i] = materialize(plan[i]); });
  set.build_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return set;
}

struct Means {
  double output = 0.0;
  double unprocessed = 0.0;
};

Means run_mini_set(const MiniSet& set, const SystemConfig& base, const std::string& stage1) {
  ExperimentConfig cfg;
  std::vector<SystemResult> res(set.records.size());
  parallel_for(res.size(), workers(), [&](std::size_t i) {
    auto enh = make_enhancer(stage1, cfg);
    auto sc = base;
    sc.tag = "u" + std::to_string(i);
    res[i] = run_system(set.records[i], sc, *enh);
  });
  Means m;
  for (const auto& r : res) {
    m.output += r.metric.si_sdr_db / static_cast<double>(res.size());
    m.unprocessed += r.unprocessed.si_sdr_db / static_cast<double>(res.size());
  }
  return m;
}

// ---------------------------------------------------------------- 6

Outcome oracle_ordering(const MiniSet& set) {
  Outcome o;
  const auto siso = system_config(Topology::Siso1, {1});
  const auto smm = run_mini_set(set, siso, "oracle-smm");
  const auto psm = run_mini_set(set, siso, "oracle-psm");
  o.note("unprocessed=" + fix(smm.unprocessed) + " dB");
  o.note("smm=" + fix(smm.output) + " dB");
  o.note("psm=" + fix(psm.output) + " dB");
  o.check(smm.unprocessed < 0.0 && smm.unprocessed >= -8.0, "unprocessed mean in [-8, 0) dB");
  o.check(psm.output - smm.output >= 1.0, "PSM exceeds SMM by >= 1 dB");
  return o;
}

// ---------------------------------------------------------------- 7

Outcome beamforming_gain(const MiniSet& set) {
  Outcome o;
  const auto two = run_mini_set(set, system_config(Topology::Siso1BfSiso1, select_mic_subset(2)),
                                "oracle");
  const auto four = run_mini_set(set, system_config(Topology::Siso1BfSiso1, select_mic_subset(4)),
                                 "oracle");
  o.note("unprocessed=" + fix(four.unprocessed) + " dB");
  o.note("bf2=" + fix(two.output) + " dB");
  o.note("bf4=" + fix(four.output) + " dB");
  o.check(four.output >= four.unprocessed + 2.0, "4-mic exceeds unprocessed by >= 2 dB");
  o.check(four.output >= two.output, "4-mic >= 2-mic");
  return o;
}

// ---------------------------------------------------------------- 8

Outcome pipeline_identities(const MiniSet& set) {
  Outcome o;
  const auto dir = fs::temp_directory_path() / "dereverb_acceptance";
  fs::remove_all(dir);
  fs::create_directories(dir);

  double pass_err = 0.0, miso_err = 0.0, ext_err = 0.0;
  PassthroughEnhancer pass;
  OracleMaskEnhancer psm(MaskKind::Psm);
  ExternalEnhancer ext(dir / "exchange", "cp");
  for (std::size_t i = 0; i < set.records.size(); ++i) {
    const auto& rec = set.records[i];
    const auto p = run_system(rec, system_config(Topology::Siso1, {1}), pass);
    pass_err = std::max(pass_err, std::abs(p.metric.si_sdr_db - p.unprocessed.si_sdr_db));

    const auto siso = run_system(rec, system_config(Topology::Siso1, {1}), psm);
    const auto miso = run_system(rec, system_config(Topology::Miso1, {1}), psm);
    for (std::size_t k = 0; k < siso.output.length(); ++k)
      miso_err = std::max(miso_err, std::abs(siso.output[0][k] - miso.output[0][k]));
    miso_err = std::max(miso_err, std::abs(siso.metric.si_sdr_db - miso.metric.si_sdr_db));

    if (i < 5) {
      for (Topology t : {Topology::Siso1, Topology::Mimo}) {
        const auto mics = t == Topology::Siso1 ? std::vector<std::size_t>{1} : select_mic_subset(4);
        auto sc = system_config(t, mics);
        sc.tag = "u" + std::to_string(i);
        const auto a = run_system(rec, sc, ext);
        const auto b = run_system(rec, sc, pass);
        ext_err = std::max(ext_err, std::abs(a.metric.si_sdr_db - b.metric.si_sdr_db));
      }
    }
  }
  o.note("passthrough_err=" + sci(pass_err) + " dB");
  o.note("miso1_vs_siso1=" + sci(miso_err));
  o.note("external_identity_err=" + sci(ext_err) + " dB");
  o.check(pass_err < 1e-9, "passthrough reproduces unprocessed within 1e-9 dB");
  o.check(miso_err == 0.0, "MISO1 equals SISO1 at P = 1");
  o.check(ext_err < 1e-7, "identity external equals passthrough within 1e-7 dB");

  // Fixed-seed reruns through the file-based commands.
  std::vector<std::string> files;
  for (int rerun = 0; rerun < 2; ++rerun) {
    ExperimentConfig cfg;
    cfg.seed = 808;
    cfg.utterances = 3;
    cfg.duration_s = 1.0;
    cfg.jobs = rerun == 0 ? workers() : 1;
    cfg.dataset_dir = dir / ("run" + std::to_string(rerun)) / "dataset";
    cfg.results_dir = dir / ("run" + std::to_string(rerun)) / "results";
    cfg.topology = Topology::Miso1BfMiso2;
    cfg.mics = 4;
    cfg.stage1 = cfg.stage2 = "oracle-psm";
    cfg.debug_artifacts = true;
    cmd_simulate(cfg);
    cmd_run(cfg);
    std::string all;
    for (const auto& e : fs::recursive_directory_iterator(dir / ("run" + std::to_string(rerun))))
      if (e.is_regular_file())
        all += fs::relative(e.path(), dir / ("run" + std::to_string(rerun))).string() + "\n" +
               slurp(e.path());
    files.push_back(std::move(all));
  }
  o.note("rerun_bytes=" + std::to_string(files[0].size()));
  o.check(files[0] == files[1], "fixed-seed reruns byte-identical");
  fs::remove_all(dir);
  return o;
}

// ---------------------------------------------------------------- 9

Outcome si_sdr_properties() {
  Outcome o;
  Rng rng(109);
  double scale_err = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const auto s = gaussian(rng, 2000);
    auto e = gaussian(rng, 2000);
    for (std::size_t i = 0; i < e.size(); ++i) e[i] += 2.0 * s[i];
    const double base = si_sdr(e, s).si_sdr_db;
    for (double k : {1e-3, 0.5, 7.0, 1e3}) {
      auto es = e, ss = s;
      for (double& v : es) v *= k;
      for (double& v : ss) v *= 1.0 / k;
      scale_err = std::max(scale_err, std::abs(si_sdr(es, s).si_sdr_db - base));
      scale_err = std::max(scale_err, std::abs(si_sdr(e, ss).si_sdr_db - base));
    }
  }

  double orth_err = 0.0;
  {
    const double k = 1.0 / std::sqrt(10.0);
    const std::vector<double> s{1.0, -1.0, 1.0, -1.0};
    const std::vector<double> est{1.0 + k, -1.0 + k, 1.0 - k, -1.0 - k};
    orth_err = std::abs(si_sdr(est, s).si_sdr_db - 10.0);
    auto a = centered(gaussian(rng, 4096)), b = centered(gaussian(rng, 4096));
    const double c = inner(a, b) / inner(a, a);
    for (std::size_t i = 0; i < b.size(); ++i) b[i] -= c * a[i];
    b = centered(b);
    const double g = std::sqrt(inner(a, a) / (10.0 * inner(b, b)));
    std::vector<double> mix(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) mix[i] = a[i] + g * b[i];
    orth_err = std::max(orth_err, std::abs(si_sdr(mix, a).si_sdr_db - 10.0));
  }

  double proj_err = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 16 + rng.below(500);
    const auto s = gaussian(rng, n);
    auto est = gaussian(rng, n);
    const double mix = rng.uniform(0.0, 3.0);
    for (std::size_t i = 0; i < n; ++i) est[i] = mix * s[i] + est[i] + rng.uniform(-1.0, 1.0);
    const auto sc = centered(s), ec = centered(est);
    const double alpha = inner(ec, sc) / inner(sc, sc);
    double te = 0.0, ee = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      te += alpha * sc[i] * alpha * sc[i];
      ee += (ec[i] - alpha * sc[i]) * (ec[i] - alpha * sc[i]);
    }
    proj_err = std::max(proj_err, std::abs(si_sdr(est, s).si_sdr_db - 10.0 * std::log10(te / ee)));
  }
  o.note("scale_err=" + sci(scale_err) + " dB");
  o.note("orthogonal_err=" + sci(orth_err) + " dB");
  o.note("projection_err=" + sci(proj_err) + " dB");
  o.check(scale_err < 1e-9, "scale invariance < 1e-9 dB");
  o.check(orth_err < 1e-9, "orthogonal analytic case within 1e-9 dB");
  o.check(proj_err < 1e-9, "projection oracle within 1e-9 dB");
  return o;
}

}  // namespace

int main() {
  int failures = 0;
  auto report = [&](int id, const std::string& name, double limit_s, double extra_s,
                    const std::function<Outcome()>& fn) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o.pass = false;
      o.note(std::string("exception: ") + e.what());
    }
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() + extra_s;
    if (limit_s > 0.0) o.check(secs < limit_s, "runtime < " + fix(limit_s, 0) + " s");
    if (!o.pass) ++failures;
    std::printf("%s criterion %d %s: %s (%.2f s)\n", o.pass ? "PASS" : "FAIL", id, name.c_str(),
                o.detail.c_str(), secs);
    std::fflush(stdout);
  };

  report(1, "stft-round-trip", 5.0, 0.0, stft_round_trip);
  report(2, "gradient-suite", 30.0, 0.0, gradient_suite);
  report(3, "mvdr-identities", 0.0, 0.0, mvdr_identities);
  report(4, "eigen-covariance-oracles", 0.0, 0.0, eigen_covariance_oracles);
  report(5, "rir-calibration", 120.0, 0.0, rir_calibration);

  MiniSet set;
  std::string build_error;
  try {
    set = build_mini_set();
  } catch (const std::exception& e) {
    build_error = e.what();
  }
  auto need_set = [&](auto fn) {
    return [&, fn]() -> Outcome {
      if (!build_error.empty()) throw std::runtime_error("mini-set: " + build_error);
      return fn(set);
    };
  };
  report(6, "oracle-mask-ordering", 300.0, set.build_seconds, need_set(oracle_ordering));
  report(7, "beamforming-gain", 0.0, 0.0, need_set(beamforming_gain));
  report(8, "pipeline-identities", 0.0, 0.0, need_set(pipeline_identities));
  report(9, "si-sdr-properties", 0.0, 0.0, si_sdr_properties);

  std::printf("%d of 9 criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
