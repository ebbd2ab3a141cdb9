#pragma once

// Batch commands behind the CLI: dataset simulation, system evaluation,
// gradient checks and single-RIR rendering.

#include <atomic>
#include <cmath>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <memory>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "dereverb/config.hpp"
#include "dereverb/dataset.hpp"
#include "dereverb/gradcheck.hpp"
#include "dereverb/pipeline.hpp"
#include "dereverb/room.hpp"
#include "dereverb/wav.hpp"

namespace dereverb {

/// Runs fn(i) for i in [0, n) on up to `jobs` threads. The first exception
/// (by index) is rethrown after all workers finish.
template <typename Fn>
void parallel_for(std::size_t n, std::size_t jobs, Fn&& fn) {
  std::vector<std::exception_ptr> errors(n);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        fn(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const std::size_t threads = std::max<std::size_t>(1, std::min(jobs, n));
  std::vector<std::thread> pool;
  for (std::size_t t = 1; t < threads; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

// ---------------------------------------------------------------- simulate

struct SimulateReport {
  std::vector<DatasetEntry> entries;
  std::filesystem::path manifest;
};

inline SimulateReport cmd_simulate(const ExperimentConfig& cfg) {
  auto entries = plan_dataset(cfg);
  std::filesystem::create_directories(cfg.dataset_dir);
  parallel_for(entries.size(), cfg.jobs, [&](std::size_t i) {
    auto& e = entries[i];
    const auto rec = materialize(e);
    e.gains = rec.gains;
    e.noise_scale = rec.noise_scale;
    std::filesystem::create_directories(cfg.dataset_dir / e.id);
    write_wav(cfg.dataset_dir / e.mixture_wav, rec.mixture);
    write_wav(cfg.dataset_dir / e.target_wav, rec.target_direct);
  });
  SimulateReport rep{std::move(entries), cfg.dataset_dir / "manifest.jsonl"};
  write_manifest(rep.manifest, rep.entries);
  return rep;
}

// ---------------------------------------------------------------- run

inline std::unique_ptr<Enhancer> make_enhancer(const std::string& name,
                                               const ExperimentConfig& cfg) {
  if (name == "passthrough") return std::make_unique<PassthroughEnhancer>();
  if (name == "oracle") return std::make_unique<OracleEnhancer>();
  if (name == "oracle-smm") return std::make_unique<OracleMaskEnhancer>(MaskKind::Smm);
  if (name == "oracle-psm") return std::make_unique<OracleMaskEnhancer>(MaskKind::Psm);
  if (name == "external") {
    detail::require(!cfg.external_command.empty(), ErrorKind::Configuration,
                    "external enhancer needs enhancer.command");
    const auto dir = cfg.exchange_dir.empty() ? cfg.results_dir / "exchange" : cfg.exchange_dir;
    return std::make_unique<ExternalEnhancer>(dir, cfg.external_command);
  }
  detail::fail(ErrorKind::Configuration, "unknown enhancer '" + name + "'");
}

/// "<topology>:<stage1>[+<stage2>]".
inline std::string condition_name(const ExperimentConfig& cfg) {
  std::string c = std::string(to_string(cfg.topology)) + ":" + cfg.stage1;
  if (!cfg.stage2.empty()) c += "+" + cfg.stage2;
  return c;
}

struct UtteranceResult {
  std::string id;
  bool ok = false;
  double si_sdr_db = 0.0;
  double unprocessed_db = 0.0;
  std::optional<double> beamformed_db;
  std::size_t fallback_bins = 0;
  std::size_t singular_bins = 0;
  ErrorKind error_kind = ErrorKind::Pipeline;
  std::string message;
};

struct RunReport {
  std::string condition;
  std::size_t mic_count = 0;
  std::vector<UtteranceResult> results;
  std::size_t failures() const {
    std::size_t n = 0;
    for (const auto& r : results) n += !r.ok;
    return n;
  }
  double mean(double UtteranceResult::*field) const {
    double s = 0.0;
    std::size_t n = 0;
    for (const auto& r : results)
      if (r.ok) {
        s += r.*field;
        ++n;
      }
    return n ? s / static_cast<double>(n) : std::nan("");
  }
};

namespace detail {

inline std::string fixed(double v, int digits = 6) {
  if (!std::isfinite(v)) return "nan";
  std::ostringstream os;
  os << std::fixed << std::setprecision(digits) << v;
  return os.str();
}

inline void write_artifacts(const std::filesystem::path& dir, const SystemResult& r) {
  std::filesystem::create_directories(dir);
  write_tensor(dir / "stage1.drvt", r.artifacts.stage1_estimate);
  if (r.artifacts.beamformed.size() > 0) {
    write_tensor(dir / "beamformed.drvt", r.artifacts.beamformed);
    std::ofstream os(dir / "condition_numbers.csv");
    os << "bin,condition_number\n";
    for (std::size_t f = 0; f < r.artifacts.noise_condition_numbers.size(); ++f)
      os << f << ',' << std::setprecision(17) << r.artifacts.noise_condition_numbers[f] << '\n';
  }
}

}  // namespace detail

/// Evaluates one topology over the dataset's manifest. Per-utterance errors
/// are recorded and the batch continues.
inline RunReport cmd_run(const ExperimentConfig& cfg) {
  cfg.validate();
  const auto entries = read_manifest(cfg.dataset_dir / "manifest.jsonl");
  auto stage1 = make_enhancer(cfg.stage1, cfg);
  std::unique_ptr<Enhancer> stage2;
  if (!cfg.stage2.empty()) {
    detail::require(has_beamformer(cfg.topology), ErrorKind::Configuration,
                    "enhancer.stage2 needs a beamforming topology");
    stage2 = make_enhancer(cfg.stage2, cfg);
  }
  SystemConfig sys;
  sys.topology = cfg.topology;
  sys.mic_subset = select_mic_subset(cfg.mics);
  sys.reference_mic = cfg.reference_mic;
  sys.stft = cfg.stft;
  sys.keep_artifacts = cfg.debug_artifacts;

  std::filesystem::create_directories(cfg.results_dir / "enhanced");
  RunReport rep;
  rep.condition = condition_name(cfg);
  rep.mic_count = cfg.mics;
  rep.results.resize(entries.size());
  parallel_for(entries.size(), cfg.jobs, [&](std::size_t i) {
    const auto& e = entries[i];
    auto& out = rep.results[i];
    out.id = e.id;
    try {
      const auto rec = load_record(e, cfg.dataset_dir);
      SystemConfig local = sys;
      local.tag = e.id;
      const auto r = run_system(rec, local, *stage1, stage2.get());
      write_wav(cfg.results_dir / "enhanced" / (e.id + ".wav"), r.output);
      if (cfg.debug_artifacts) detail::write_artifacts(cfg.results_dir / "artifacts" / e.id, r);
      out.ok = true;
      out.si_sdr_db = r.metric.si_sdr_db;
      out.unprocessed_db = r.unprocessed.si_sdr_db;
      if (r.beamformed_metric) out.beamformed_db = r.beamformed_metric->si_sdr_db;
      out.fallback_bins = r.artifacts.fallback_bins;
      out.singular_bins = r.artifacts.singular_bins;
    } catch (const Error& err) {
      out.error_kind = err.kind();
      out.message = err.what();
    }
  });

  {
    std::ofstream os(cfg.results_dir / "metrics.jsonl", std::ios::trunc);
    for (const auto& r : rep.results) {
      Json j{{"id", r.id},
             {"condition", rep.condition},
             {"topology", to_string(cfg.topology)},
             {"stage1", cfg.stage1},
             {"stage2", cfg.stage2.empty() ? Json(nullptr) : Json(cfg.stage2)},
             {"mic_count", cfg.mics},
             {"reference_mic", cfg.reference_mic},
             {"status", r.ok ? "ok" : "error"}};
      if (r.ok) {
        j["si_sdr_db"] = r.si_sdr_db;
        j["unprocessed_si_sdr_db"] = r.unprocessed_db;
        j["improvement_db"] = r.si_sdr_db - r.unprocessed_db;
        j["beamformed_si_sdr_db"] = r.beamformed_db ? Json(*r.beamformed_db) : Json(nullptr);
        j["fallback_bins"] = r.fallback_bins;
        j["singular_bins"] = r.singular_bins;
        j["pesq"] = nullptr;
      } else {
        j["error_kind"] = to_string(r.error_kind);
        j["message"] = r.message;
      }
      os << j.dump() << '\n';
    }
    detail::require(static_cast<bool>(os), ErrorKind::Io, "failed writing metrics.jsonl");
  }
  {
    std::ofstream os(cfg.results_dir / "summary.csv", std::ios::trunc);
    os << "utterance_id,condition,mic_count,si_sdr_db\n";
    for (const auto& r : rep.results)
      os << r.id << ',' << rep.condition << ',' << cfg.mics << ','
         << (r.ok ? detail::fixed(r.si_sdr_db) : "nan") << '\n';
  }
  {
    std::ofstream os(cfg.results_dir / "aggregate.csv", std::ios::trunc);
    os << "condition,mic_count,utterances,failures,mean_si_sdr_db,mean_unprocessed_si_sdr_db,"
          "mean_improvement_db\n";
    const double m = rep.mean(&UtteranceResult::si_sdr_db);
    const double u = rep.mean(&UtteranceResult::unprocessed_db);
    os << rep.condition << ',' << cfg.mics << ',' << rep.results.size() << ',' << rep.failures()
       << ',' << detail::fixed(m) << ',' << detail::fixed(u) << ',' << detail::fixed(m - u) << '\n';
  }
  return rep;
}

// ---------------------------------------------------------------- gradcheck

inline std::vector<GradcheckResult> cmd_gradcheck(const GradcheckOptions& opts, std::ostream& out) {
  const auto results = run_gradcheck_suite(opts);
  for (const auto& r : results) {
    out << std::left << std::setw(8) << r.loss << " P=" << r.channels
        << " max_rel_error=" << std::scientific << std::setprecision(3) << r.max_relative_error
        << std::defaultfloat << " checked=" << r.checked << " skipped=" << r.skipped << ' '
        << (r.passed ? "PASS" : "FAIL") << '\n';
  }
  return results;
}

// ---------------------------------------------------------------- rir

struct RirRequest {
  Vec3 room;
  Vec3 source;
  Vec3 mic;
  double t60 = 0.6;
  double fs = 16000.0;
  bool free_field = false;
  bool eyring = false;
  std::optional<int> max_order;
};

struct RirReport {
  ImpulseResponse rir;
  double reflection = 0.0;
  std::optional<double> measured_t60;
  double direct_delay_samples = 0.0;
  std::optional<double> drr_db;
};

inline RirReport cmd_rir(const RirRequest& req) {
  RoomSpec room{req.room, req.t60};
  detail::require(req.room.x > 0.0 && req.room.y > 0.0 && req.room.z > 0.0,
                  ErrorKind::InvalidInput, "room dimensions must be positive");
  RirOptions opts;
  opts.model = req.eyring ? ReflectionModel::Eyring : ReflectionModel::Specular;
  opts.max_order = req.max_order;
  RirReport rep;
  if (req.free_field) {
    opts.reflection = 0.0;
    opts.max_order = 0;
    const double delay = distance(req.source, req.mic) / opts.sound_speed * req.fs;
    opts.length = static_cast<std::size_t>(std::ceil(delay)) + kSincHalfWidth + 1;
  } else {
    rep.reflection = reflection_for(room, opts.model);
  }
  rep.rir = simulate_rir(room, req.source, req.mic, req.fs, opts);
  rep.direct_delay_samples = distance(req.source, req.mic) / opts.sound_speed * req.fs;
  if (!req.free_field) {
    try {
      rep.measured_t60 = measure_t60(rep.rir);
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::MeasurementUndefined) throw;
    }
    const auto direct = direct_path_rir(room, req.source, req.mic, req.fs);
    rep.drr_db = direct_to_reverberant_db(direct, rep.rir);
  }
  return rep;
}

}  // namespace dereverb
