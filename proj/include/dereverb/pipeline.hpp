#pragma once

// System topologies: enhancer slots around an optional TI-MVDR beamformer
// with circular channel shifting for multi-input enhancers.

#include <cstdlib>
#include <filesystem>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Eigenvalues>

#include "dereverb/beamforming.hpp"
#include "dereverb/error.hpp"
#include "dereverb/metrics.hpp"
#include "dereverb/objectives.hpp"
#include "dereverb/spatializer.hpp"
#include "dereverb/spectral.hpp"
#include "dereverb/tensor_io.hpp"

namespace dereverb {

/// 1-based rotation placing channel p first: (p, ..., P, 1, ..., p-1).
inline std::vector<std::size_t> channel_shift(std::size_t channel_count, std::size_t p) {
  detail::require(p >= 1 && p <= channel_count, ErrorKind::InvalidInput,
                  "shift index out of range");
  std::vector<std::size_t> order(channel_count);
  for (std::size_t k = 0; k < channel_count; ++k) order[k] = (p - 1 + k) % channel_count + 1;
  return order;
}

template <typename T>
std::vector<T> channel_shift(const std::vector<T>& items, std::size_t p) {
  const auto order = channel_shift(items.size(), p);
  std::vector<T> out;
  out.reserve(items.size());
  for (std::size_t i : order) out.push_back(items[i - 1]);
  return out;
}

/// Reorders the channels of a spectrogram so 1-based channel p comes first.
inline ComplexSpectrogram channel_shift(const ComplexSpectrogram& spec, std::size_t p) {
  std::vector<ComplexSpectrogram> parts;
  for (std::size_t i : channel_shift(spec.channels(), p)) parts.push_back(spec.channel(i - 1));
  return ComplexSpectrogram::stack(parts);
}

/// Canonical 1-based microphone subsets of the 8-mic circular array.
inline std::vector<std::size_t> select_mic_subset(std::size_t n) {
  switch (n) {
    case 1: return {1};
    case 2: return {1, 5};
    case 4: return {1, 3, 5, 7};
    case 8: return {1, 2, 3, 4, 5, 6, 7, 8};
    default: break;
  }
  detail::fail(ErrorKind::Configuration,
               "unsupported microphone count " + std::to_string(n) + " (use 1, 2, 4 or 8)");
}

enum class Topology { Siso1, Siso1BfSiso1, Siso1BfSiso2, Miso1, Miso1BfMiso2, Mimo, MimoBfMiso3 };

inline std::string_view to_string(Topology t) {
  switch (t) {
    case Topology::Siso1: return "siso1";
    case Topology::Siso1BfSiso1: return "siso1-bf-siso1";
    case Topology::Siso1BfSiso2: return "siso1-bf-siso2";
    case Topology::Miso1: return "miso1";
    case Topology::Miso1BfMiso2: return "miso1-bf-miso2";
    case Topology::Mimo: return "mimo";
    case Topology::MimoBfMiso3: return "mimo-bf-miso3";
  }
  return "?";
}

inline Topology parse_topology(std::string_view s) {
  for (Topology t : {Topology::Siso1, Topology::Siso1BfSiso1, Topology::Siso1BfSiso2,
                     Topology::Miso1, Topology::Miso1BfMiso2, Topology::Mimo,
                     Topology::MimoBfMiso3}) {
    if (to_string(t) == s) return t;
  }
  detail::fail(ErrorKind::Configuration, "unknown topology '" + std::string(s) + "'");
}

inline bool has_beamformer(Topology t) {
  return t == Topology::Siso1BfSiso1 || t == Topology::Siso1BfSiso2 ||
         t == Topology::Miso1BfMiso2 || t == Topology::MimoBfMiso3;
}

enum class EnhancerRole { FirstStage, PostFilter };

/// What an enhancer sees for one invocation.
struct EnhancerRequest {
  EnhancerRole role = EnhancerRole::FirstStage;
  /// Ordered input channels; channel 0 is the channel being estimated for
  /// single-output requests.
  const ComplexSpectrogram* inputs = nullptr;
  std::size_t output_channels = 1;
  /// Ground-truth direct sound for the requested outputs. Only oracle
  /// enhancers may read it.
  const ComplexSpectrogram* oracle_targets = nullptr;
  /// Unique name for this invocation (used for exchange files).
  std::string tag;
};

class Enhancer {
 public:
  virtual ~Enhancer() = default;
  virtual std::string name() const = 0;
  virtual ComplexSpectrogram enhance(const EnhancerRequest& request) = 0;
};

namespace detail {

/// Input channel paired with output k: k itself for multi-output requests,
/// otherwise the leading channel.
inline std::size_t paired_input(const EnhancerRequest& req, std::size_t k) {
  return req.output_channels == 1 ? 0 : k;
}

inline const ComplexSpectrogram& require_targets(const EnhancerRequest& req) {
  require(req.oracle_targets != nullptr, ErrorKind::Contract,
          "oracle enhancer invoked without targets");
  return *req.oracle_targets;
}

}  // namespace detail

class PassthroughEnhancer final : public Enhancer {
 public:
  std::string name() const override { return "passthrough"; }
  ComplexSpectrogram enhance(const EnhancerRequest& req) override {
    std::vector<ComplexSpectrogram> parts;
    for (std::size_t k = 0; k < req.output_channels; ++k)
      parts.push_back(req.inputs->channel(detail::paired_input(req, k)));
    return ComplexSpectrogram::stack(parts);
  }
};

class OracleEnhancer final : public Enhancer {
 public:
  std::string name() const override { return "oracle"; }
  ComplexSpectrogram enhance(const EnhancerRequest& req) override {
    return detail::require_targets(req);
  }
};

enum class MaskKind { Smm, Psm };

/// Computes the oracle mask of each target against its paired input
/// channel and applies it to that channel. As a post-filter the paired
/// input is the beamformer output.
class OracleMaskEnhancer final : public Enhancer {
 public:
  explicit OracleMaskEnhancer(MaskKind kind) : kind_(kind) {}
  std::string name() const override { return kind_ == MaskKind::Smm ? "oracle-smm" : "oracle-psm"; }
  ComplexSpectrogram enhance(const EnhancerRequest& req) override {
    const auto& targets = detail::require_targets(req);
    std::vector<ComplexSpectrogram> parts;
    for (std::size_t k = 0; k < req.output_channels; ++k) {
      const auto y = req.inputs->channel(detail::paired_input(req, k));
      const auto s = targets.channel(k);
      const auto mask = kind_ == MaskKind::Smm ? oracle_smm(s, y) : oracle_psm(s, y);
      parts.push_back(apply_mask(mask, y));
    }
    return ComplexSpectrogram::stack(parts);
  }

 private:
  MaskKind kind_;
};

/// Runs `command <input.drvt> <output.drvt>` through the shell, exchanging
/// tensors through files in `exchange_dir`.
class ExternalEnhancer final : public Enhancer {
 public:
  ExternalEnhancer(std::filesystem::path exchange_dir, std::string command)
      : dir_(std::move(exchange_dir)), command_(std::move(command)) {}

  std::string name() const override { return "external"; }

  ComplexSpectrogram enhance(const EnhancerRequest& req) override {
    using detail::require;
    std::error_code ec;
    std::filesystem::create_directories(dir_, ec);
    require(!ec, ErrorKind::ExternalEnhancer, "cannot create exchange directory " + dir_.string());
    const auto in = dir_ / (req.tag + ".in.drvt");
    const auto out = dir_ / (req.tag + ".out.drvt");
    const auto log = dir_ / (req.tag + ".stderr.txt");
    std::filesystem::remove(out, ec);
    write_tensor(in, *req.inputs);

    const std::string cmd = command_ + " '" + in.string() + "' '" + out.string() + "' 2> '" +
                            log.string() + "'";
    const int status = std::system(cmd.c_str());
    if (status != 0) {
      std::string diag;
      if (std::filesystem::exists(log)) {
        const auto bytes = read_bytes(log, ErrorKind::ExternalEnhancer);
        diag.assign(bytes.begin(), bytes.end());
      }
      detail::fail(ErrorKind::ExternalEnhancer,
                   "command exited with status " + std::to_string(status) + ": " + diag);
    }
    require(std::filesystem::exists(out), ErrorKind::ExternalEnhancer,
            "command produced no output file " + out.string());
    auto result = read_tensor(out);
    require(result.channels() == req.output_channels && result.same_grid(*req.inputs),
            ErrorKind::ExternalEnhancer,
            "shape mismatch: expected (" + std::to_string(req.output_channels) + ", " +
                std::to_string(req.inputs->frames()) + ", " + std::to_string(req.inputs->bins()) +
                "), got (" + std::to_string(result.channels()) + ", " +
                std::to_string(result.frames()) + ", " + std::to_string(result.bins()) + ")");
    return result;
  }

 private:
  std::filesystem::path dir_;
  std::string command_;
};

struct SystemConfig {
  Topology topology = Topology::Siso1;
  std::vector<std::size_t> mic_subset{1};  // 1-based indices into the record
  std::size_t reference_mic = 1;           // 1-based, must be in the subset
  StftConfig stft;
  bool keep_artifacts = false;
  std::string tag = "utt";
};

struct SystemArtifacts {
  ComplexSpectrogram stage1_estimate;
  ComplexSpectrogram beamformed;
  std::size_t fallback_bins = 0;
  std::size_t singular_bins = 0;
  std::vector<double> noise_condition_numbers;
};

struct SystemResult {
  MultichannelWaveform output;  // one channel, estimate at the reference mic
  MetricReport metric;
  MetricReport unprocessed;
  std::optional<MetricReport> beamformed_metric;
  SystemArtifacts artifacts;
};

namespace detail {

inline ComplexSpectrogram run_enhancer(Enhancer& enh, EnhancerRole role,
                                       const ComplexSpectrogram& inputs, std::size_t outputs,
                                       const ComplexSpectrogram& targets, std::string tag) {
  EnhancerRequest req{role, &inputs, outputs, &targets, std::move(tag)};
  auto out = enh.enhance(req);
  require(out.channels() == outputs && out.same_grid(inputs), ErrorKind::Contract,
          "enhancer '" + enh.name() + "' returned a tensor of the wrong shape");
  require(out.all_finite(), ErrorKind::Contract,
          "enhancer '" + enh.name() + "' returned non-finite values");
  return out;
}

}  // namespace detail

/// Runs one record through a topology. Without a stage-2 enhancer, BF
/// topologies output the beamformer result directly.
inline SystemResult run_system(const MixtureRecord& record, const SystemConfig& cfg,
                               Enhancer& stage1, Enhancer* stage2 = nullptr) {
  using detail::require;
  const auto& subset = cfg.mic_subset;
  require(!subset.empty(), ErrorKind::Configuration, "empty microphone subset");
  std::set<std::size_t> seen;
  for (std::size_t m : subset) {
    require(m >= 1 && m <= record.mixture.channel_count() && m <= 8, ErrorKind::Configuration,
            "microphone index out of range");
    require(seen.insert(m).second, ErrorKind::Configuration, "duplicate microphone in subset");
  }
  std::size_t q = subset.size();
  for (std::size_t i = 0; i < subset.size(); ++i)
    if (subset[i] == cfg.reference_mic) q = i;
  require(q < subset.size(), ErrorKind::Configuration, "reference mic is not in the subset");
  const std::size_t P = subset.size();
  if (has_beamformer(cfg.topology))
    require(P >= 2, ErrorKind::Configuration, "beamforming topologies need at least two mics");

  std::vector<std::size_t> idx;
  for (std::size_t m : subset) idx.push_back(m - 1);
  const auto mix = record.mixture.select(idx);
  const auto tgt = record.target_direct.select(idx);
  const std::size_t len = mix.length();

  const auto Y = stft(mix, cfg.stft);
  const auto S = stft(tgt, cfg.stft);
  const auto Sq = S.channel(q);

  SystemResult res;
  const auto& topo = cfg.topology;
  const std::string tag = cfg.tag + "." + std::string(to_string(topo));

  // Stage 1.
  ComplexSpectrogram estimate;  // Ŝ over all P channels (BF) or Ŝ_q
  switch (topo) {
    case Topology::Siso1:
      estimate = detail::run_enhancer(stage1, EnhancerRole::FirstStage, Y.channel(q), 1, Sq,
                                      tag + ".s1");
      break;
    case Topology::Miso1:
      estimate = detail::run_enhancer(stage1, EnhancerRole::FirstStage, channel_shift(Y, q + 1), 1,
                                      Sq, tag + ".s1");
      break;
    case Topology::Siso1BfSiso1:
    case Topology::Siso1BfSiso2: {
      std::vector<ComplexSpectrogram> parts;
      for (std::size_t p = 0; p < P; ++p)
        parts.push_back(detail::run_enhancer(stage1, EnhancerRole::FirstStage, Y.channel(p), 1,
                                             S.channel(p), tag + ".s1.ch" + std::to_string(p + 1)));
      estimate = ComplexSpectrogram::stack(parts);
      break;
    }
    case Topology::Miso1BfMiso2: {
      std::vector<ComplexSpectrogram> parts;
      for (std::size_t p = 0; p < P; ++p)
        parts.push_back(detail::run_enhancer(stage1, EnhancerRole::FirstStage,
                                             channel_shift(Y, p + 1), 1, S.channel(p),
                                             tag + ".s1.ch" + std::to_string(p + 1)));
      estimate = ComplexSpectrogram::stack(parts);
      break;
    }
    case Topology::Mimo:
    case Topology::MimoBfMiso3:
      estimate = detail::run_enhancer(stage1, EnhancerRole::FirstStage, Y, P, S, tag + ".s1");
      break;
  }

  ComplexSpectrogram final_spec;
  if (!has_beamformer(topo)) {
    final_spec = topo == Topology::Mimo ? estimate.channel(q) : estimate;
  } else {
    const auto phi_s = estimate_covariance(estimate, CovarianceKind::Speech);
    const auto phi_v = estimate_covariance(residual_spectrogram(Y, estimate), CovarianceKind::Noise);
    const auto steer = relative_transfer_function(phi_s, static_cast<Eigen::Index>(q));
    const auto weights = mvdr_weights(phi_v, steer);
    std::size_t singular = 0;
    for (BinStatus s : weights.status) singular += s == BinStatus::Singular;
    res.artifacts.fallback_bins = weights.fallback_count();
    res.artifacts.singular_bins = singular;
    require(singular < weights.status.size(), ErrorKind::Pipeline,
            "beamformer is singular at every frequency");
    const auto bf = apply_beamformer(weights, Y);
    res.beamformed_metric = si_sdr(istft(bf, cfg.stft, len)[0], tgt[q]);

    if (stage2 == nullptr) {
      final_spec = bf;
    } else {
      std::vector<ComplexSpectrogram> parts{bf};
      if (topo == Topology::Siso1BfSiso2) parts.push_back(Y.channel(q));
      if (topo == Topology::Miso1BfMiso2 || topo == Topology::MimoBfMiso3)
        parts.push_back(channel_shift(Y, q + 1));
      const auto stacked = ComplexSpectrogram::stack(parts);
      final_spec =
          detail::run_enhancer(*stage2, EnhancerRole::PostFilter, stacked, 1, Sq, tag + ".s2");
    }
    if (cfg.keep_artifacts) {
      res.artifacts.beamformed = bf;
      for (const auto& phi : phi_v.per_bin) {
        CMatrix loaded = phi;
        loaded.diagonal().array() += diagonal_loading(phi);
        Eigen::SelfAdjointEigenSolver<CMatrix> es(loaded, Eigen::EigenvaluesOnly);
        const auto ev = es.eigenvalues();
        res.artifacts.noise_condition_numbers.push_back(ev.maxCoeff() / ev.minCoeff());
      }
    }
  }
  if (cfg.keep_artifacts) res.artifacts.stage1_estimate = estimate;

  res.output = istft(final_spec, cfg.stft, len);
  res.metric = si_sdr(res.output[0], tgt[q]);
  res.unprocessed = si_sdr(mix[q], tgt[q]);
  return res;
}

}  // namespace dereverb
