#pragma once

// Experiment configuration: a flat `section.key = value` text file. Lines
// starting with '#' are comments. Ranges are written `lo, hi`.

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "dereverb/error.hpp"
#include "dereverb/pipeline.hpp"
#include "dereverb/spatializer.hpp"
#include "dereverb/spectral.hpp"

namespace dereverb {

struct ExperimentConfig {
  std::uint64_t seed = 7;
  std::size_t jobs = 1;

  std::size_t utterances = 20;
  std::size_t replications = 1;
  double duration_s = 4.0;
  std::filesystem::path speech_dir;  // empty: synthetic speech
  std::filesystem::path noise_dir;   // empty: synthetic noise
  std::filesystem::path dataset_dir = "dataset";

  SceneRanges scene;
  NoiseOptions noise;
  StftConfig stft;

  Topology topology = Topology::Siso1;
  std::size_t mics = 1;
  std::size_t reference_mic = 1;
  std::string stage1 = "oracle-psm";
  std::string stage2;  // empty: none
  std::string external_command;
  std::filesystem::path exchange_dir;  // empty: <results_dir>/exchange
  std::filesystem::path results_dir = "results";
  bool debug_artifacts = false;

  void validate() const;
};

namespace detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

inline double parse_double(const std::string& key, const std::string& v) {
  double out = 0.0;
  const auto* end = v.data() + v.size();
  const auto [ptr, ec] = std::from_chars(v.data(), end, out);
  require(ec == std::errc{} && ptr == end, ErrorKind::Configuration,
          key + ": expected a number, got '" + v + "'");
  return out;
}

inline std::uint64_t parse_uint(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const auto* end = v.data() + v.size();
  const auto [ptr, ec] = std::from_chars(v.data(), end, out);
  require(ec == std::errc{} && ptr == end, ErrorKind::Configuration,
          key + ": expected a non-negative integer, got '" + v + "'");
  return out;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  fail(ErrorKind::Configuration, key + ": expected true or false, got '" + v + "'");
}

inline Range parse_range(const std::string& key, const std::string& v) {
  const auto comma = v.find(',');
  require(comma != std::string::npos, ErrorKind::Configuration,
          key + ": expected 'lo, hi', got '" + v + "'");
  const Range r{parse_double(key, trim(v.substr(0, comma))),
                parse_double(key, trim(v.substr(comma + 1)))};
  require(r.lo <= r.hi, ErrorKind::Configuration, key + ": min exceeds max");
  return r;
}

inline std::string format_double(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

inline std::string format_range(Range r) { return format_double(r.lo) + ", " + format_double(r.hi); }

struct ConfigKey {
  std::string_view name;
  std::string_view help;
  std::function<void(ExperimentConfig&, const std::string&, const std::string&)> set;
  std::function<std::string(const ExperimentConfig&)> get;
};

#define DEREVERB_UINT_KEY(NAME, HELP, FIELD)                                          \
  ConfigKey {                                                                          \
    NAME, HELP,                                                                        \
        [](ExperimentConfig& c, const std::string& k, const std::string& v) {          \
          c.FIELD = static_cast<decltype(c.FIELD)>(parse_uint(k, v));                  \
        },                                                                             \
        [](const ExperimentConfig& c) { return std::to_string(c.FIELD); }              \
  }
#define DEREVERB_DOUBLE_KEY(NAME, HELP, FIELD)                                        \
  ConfigKey {                                                                          \
    NAME, HELP,                                                                        \
        [](ExperimentConfig& c, const std::string& k, const std::string& v) {          \
          c.FIELD = parse_double(k, v);                                                \
        },                                                                             \
        [](const ExperimentConfig& c) { return format_double(c.FIELD); }               \
  }
#define DEREVERB_RANGE_KEY(NAME, HELP, FIELD)                                         \
  ConfigKey {                                                                          \
    NAME, HELP,                                                                        \
        [](ExperimentConfig& c, const std::string& k, const std::string& v) {          \
          c.FIELD = parse_range(k, v);                                                 \
        },                                                                             \
        [](const ExperimentConfig& c) { return format_range(c.FIELD); }                \
  }
#define DEREVERB_STRING_KEY(NAME, HELP, FIELD)                                        \
  ConfigKey {                                                                          \
    NAME, HELP, [](ExperimentConfig& c, const std::string&, const std::string& v) {    \
      c.FIELD = v;                                                                     \
    },                                                                                 \
        [](const ExperimentConfig& c) { return std::string(c.FIELD); }                 \
  }

inline const std::vector<ConfigKey>& config_keys() {
  static const std::vector<ConfigKey> keys = {
      DEREVERB_UINT_KEY("experiment.seed", "master seed for every random draw", seed),
      DEREVERB_UINT_KEY("experiment.jobs", "utterances processed in parallel", jobs),
      DEREVERB_UINT_KEY("dataset.utterances", "anechoic utterances to spatialize", utterances),
      DEREVERB_UINT_KEY("dataset.replications", "scenes drawn per utterance", replications),
      DEREVERB_DOUBLE_KEY("dataset.duration_s", "length of synthetic utterances", duration_s),
      ConfigKey{"dataset.speech_dir", "directory of mono 16 kHz WAV files; empty for synthetic",
                [](ExperimentConfig& c, const std::string&, const std::string& v) {
                  c.speech_dir = v;
                },
                [](const ExperimentConfig& c) { return c.speech_dir.string(); }},
      ConfigKey{"dataset.noise_dir", "directory of multichannel noise WAV files; empty for synthetic",
                [](ExperimentConfig& c, const std::string&, const std::string& v) {
                  c.noise_dir = v;
                },
                [](const ExperimentConfig& c) { return c.noise_dir.string(); }},
      ConfigKey{"dataset.dir", "where simulate writes and run reads the dataset",
                [](ExperimentConfig& c, const std::string&, const std::string& v) {
                  c.dataset_dir = v;
                },
                [](const ExperimentConfig& c) { return c.dataset_dir.string(); }},
      DEREVERB_RANGE_KEY("scene.room_length", "room length in m", scene.room_length),
      DEREVERB_RANGE_KEY("scene.room_width", "room width in m", scene.room_width),
      DEREVERB_RANGE_KEY("scene.room_height", "room height in m", scene.room_height),
      DEREVERB_RANGE_KEY("scene.array_height", "array height in m", scene.array_height),
      DEREVERB_RANGE_KEY("scene.array_displacement", "array offset from room center in m",
                         scene.array_displacement),
      DEREVERB_RANGE_KEY("scene.first_mic_angle", "angle of mic 1 in rad", scene.first_mic_angle),
      DEREVERB_RANGE_KEY("scene.source_distance", "speaker to array center in m",
                         scene.source_distance),
      DEREVERB_DOUBLE_KEY("scene.min_wall_distance", "speaker clearance from walls in m",
                          scene.min_wall_distance),
      DEREVERB_RANGE_KEY("scene.t60", "reverberation time in s", scene.t60),
      DEREVERB_RANGE_KEY("scene.snr_db", "speech to noise ratio in dB", scene.snr_db),
      DEREVERB_DOUBLE_KEY("scene.array_radius", "array radius in m", scene.array_radius),
      DEREVERB_UINT_KEY("noise.sources", "synthetic noise point sources", noise.source_count),
      DEREVERB_DOUBLE_KEY("noise.cutoff_hz", "synthetic noise low-pass cutoff", noise.cutoff_hz),
      DEREVERB_UINT_KEY("stft.window", "analysis window in samples", stft.window_samples),
      DEREVERB_UINT_KEY("stft.hop", "hop in samples", stft.hop_samples),
      DEREVERB_UINT_KEY("stft.fft_size", "FFT size in samples", stft.fft_size),
      DEREVERB_DOUBLE_KEY("stft.sample_rate", "sample rate in Hz", stft.sample_rate),
      ConfigKey{"system.topology", "siso1, siso1-bf-siso1, siso1-bf-siso2, miso1, miso1-bf-miso2, "
                                   "mimo or mimo-bf-miso3",
                [](ExperimentConfig& c, const std::string&, const std::string& v) {
                  c.topology = parse_topology(v);
                },
                [](const ExperimentConfig& c) { return std::string(to_string(c.topology)); }},
      DEREVERB_UINT_KEY("system.mics", "microphone count: 1, 2, 4 or 8", mics),
      DEREVERB_UINT_KEY("system.reference_mic", "1-based reference microphone", reference_mic),
      DEREVERB_STRING_KEY("enhancer.stage1",
                          "passthrough, oracle, oracle-smm, oracle-psm or external", stage1),
      DEREVERB_STRING_KEY("enhancer.stage2", "post-filter for BF topologies; empty for none",
                          stage2),
      DEREVERB_STRING_KEY("enhancer.command", "command for the external enhancer",
                          external_command),
      ConfigKey{"enhancer.exchange_dir", "tensor exchange directory; empty for <results>/exchange",
                [](ExperimentConfig& c, const std::string&, const std::string& v) {
                  c.exchange_dir = v;
                },
                [](const ExperimentConfig& c) { return c.exchange_dir.string(); }},
      ConfigKey{"results.dir", "where run writes metrics",
                [](ExperimentConfig& c, const std::string&, const std::string& v) {
                  c.results_dir = v;
                },
                [](const ExperimentConfig& c) { return c.results_dir.string(); }},
      ConfigKey{"debug.artifacts", "persist intermediate tensors and condition numbers",
                [](ExperimentConfig& c, const std::string& k, const std::string& v) {
                  c.debug_artifacts = parse_bool(k, v);
                },
                [](const ExperimentConfig& c) {
                  return std::string(c.debug_artifacts ? "true" : "false");
                }},
  };
  return keys;
}

#undef DEREVERB_UINT_KEY
#undef DEREVERB_DOUBLE_KEY
#undef DEREVERB_RANGE_KEY
#undef DEREVERB_STRING_KEY

}  // namespace detail

/// Sets one key. Unknown keys are a configuration error.
inline void set_config_value(ExperimentConfig& cfg, const std::string& key,
                             const std::string& value) {
  for (const auto& k : detail::config_keys()) {
    if (k.name == key) {
      k.set(cfg, key, value);
      return;
    }
  }
  detail::fail(ErrorKind::Configuration, "unknown configuration key '" + key + "'");
}

inline std::optional<std::string> get_config_value(const ExperimentConfig& cfg,
                                                   std::string_view key) {
  for (const auto& k : detail::config_keys())
    if (k.name == key) return k.get(cfg);
  return std::nullopt;
}

/// Applies `text` on top of `base`.
inline ExperimentConfig parse_config(std::string_view text, ExperimentConfig base = {}) {
  std::istringstream in{std::string(text)};
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = detail::trim(line);
    if (t.empty() || t.front() == '#') continue;
    const auto eq = t.find('=');
    detail::require(eq != std::string::npos, ErrorKind::Configuration,
                    "line " + std::to_string(lineno) + ": expected 'key = value'");
    set_config_value(base, detail::trim(t.substr(0, eq)), detail::trim(t.substr(eq + 1)));
  }
  return base;
}

inline ExperimentConfig load_config(const std::filesystem::path& path, ExperimentConfig base = {}) {
  std::ifstream is(path);
  detail::require(static_cast<bool>(is), ErrorKind::Configuration,
                  "cannot read config file " + path.string());
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_config(ss.str(), std::move(base));
}

/// Every key with its help text and current value, in loadable form.
inline std::string dump_config(const ExperimentConfig& cfg) {
  std::string out;
  for (const auto& k : detail::config_keys()) {
    out += "# " + std::string(k.help) + "\n";
    out += std::string(k.name) + " = " + k.get(cfg) + "\n";
  }
  return out;
}

inline void ExperimentConfig::validate() const {
  using detail::require;
  scene.validate();
  stft.validate();
  require(jobs >= 1, ErrorKind::Configuration, "experiment.jobs must be at least 1");
  require(utterances >= 1 && replications >= 1, ErrorKind::Configuration,
          "dataset sizes must be positive");
  require(duration_s > 0.0, ErrorKind::Configuration, "dataset.duration_s must be positive");
  require(scene.min_wall_distance >= 0.0, ErrorKind::Configuration,
          "scene.min_wall_distance must be non-negative");
  require(noise.source_count >= 1 && noise.cutoff_hz > 0.0, ErrorKind::Configuration,
          "noise settings must be positive");
  require(speech_dir.empty() || std::filesystem::is_directory(speech_dir),
          ErrorKind::Configuration, "dataset.speech_dir does not exist: " + speech_dir.string());
  require(noise_dir.empty() || std::filesystem::is_directory(noise_dir), ErrorKind::Configuration,
          "dataset.noise_dir does not exist: " + noise_dir.string());
  select_mic_subset(mics);
  require(reference_mic >= 1 && reference_mic <= 8, ErrorKind::Configuration,
          "system.reference_mic must be in 1..8");
  require(stage1 != "external" || !external_command.empty(), ErrorKind::Configuration,
          "external enhancer needs enhancer.command");
}

}  // namespace dereverb
