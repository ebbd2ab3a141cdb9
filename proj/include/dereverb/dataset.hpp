#pragma once

// Simulated datasets on disk: a JSON-lines manifest plus one directory of
// WAV files per record. Every manifest entry carries enough metadata to
// re-create its record from the anechoic source alone.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dereverb/config.hpp"
#include "dereverb/error.hpp"
#include "dereverb/random.hpp"
#include "dereverb/spatializer.hpp"
#include "dereverb/wav.hpp"

namespace dereverb {

using Json = nlohmann::ordered_json;

struct DatasetEntry {
  std::string id;
  std::uint64_t master_seed = 0;
  std::uint64_t utterance = 0;
  std::uint64_t replica = 0;
  std::string speech_file;  // empty: synthetic speech from speech_seed
  std::uint64_t speech_seed = 0;
  std::string noise_file;  // empty: synthetic noise from noise_seed
  std::uint64_t noise_seed = 0;
  std::size_t noise_offset = 0;
  NoiseOptions noise;
  SceneSample scene;
  std::size_t length = 0;
  double sample_rate = 16000.0;
  std::vector<double> gains;
  double noise_scale = 0.0;
  std::string mixture_wav;  // relative to the dataset directory
  std::string target_wav;
};

namespace detail {

inline Json vec_json(Vec3 v) { return Json::array({v.x, v.y, v.z}); }
inline Vec3 json_vec(const Json& j) { return {j.at(0).get<double>(), j.at(1).get<double>(), j.at(2).get<double>()}; }

}  // namespace detail

inline Json to_json(const DatasetEntry& e) {
  const auto& s = e.scene;
  Json scene = {
      {"room_dims", detail::vec_json(s.room.dims)},
      {"t60", s.t60},
      {"snr_db", s.snr_db},
      {"array_center", detail::vec_json(s.array.center)},
      {"array_radius", s.array.radius},
      {"mic_count", s.array.mic_count},
      {"first_mic_angle", s.array.first_mic_angle},
      {"source_position", detail::vec_json(s.source_position)},
      {"source_distance", s.source_distance()},
      {"scene_seed", s.rng_seed},
  };
  return Json{
      {"id", e.id},
      {"master_seed", e.master_seed},
      {"utterance", e.utterance},
      {"replica", e.replica},
      {"speech", e.speech_file.empty() ? Json{{"kind", "synthetic"}, {"seed", e.speech_seed}}
                                       : Json{{"kind", "file"}, {"path", e.speech_file}}},
      {"noise", e.noise_file.empty()
                    ? Json{{"kind", "synthetic"},
                           {"seed", e.noise_seed},
                           {"sources", e.noise.source_count},
                           {"cutoff_hz", e.noise.cutoff_hz},
                           {"wall_offset", Json::array({e.noise.wall_offset.lo, e.noise.wall_offset.hi})}}
                    : Json{{"kind", "file"}, {"path", e.noise_file}, {"offset", e.noise_offset}}},
      {"scene", scene},
      {"length", e.length},
      {"sample_rate", e.sample_rate},
      {"gains", e.gains},
      {"noise_scale", e.noise_scale},
      {"mixture_wav", e.mixture_wav},
      {"target_wav", e.target_wav},
  };
}

inline DatasetEntry entry_from_json(const Json& j) {
  try {
    DatasetEntry e;
    e.id = j.at("id").get<std::string>();
    e.master_seed = j.at("master_seed").get<std::uint64_t>();
    e.utterance = j.at("utterance").get<std::uint64_t>();
    e.replica = j.at("replica").get<std::uint64_t>();
    const auto& sp = j.at("speech");
    if (sp.at("kind") == "file") e.speech_file = sp.at("path").get<std::string>();
    else e.speech_seed = sp.at("seed").get<std::uint64_t>();
    const auto& nz = j.at("noise");
    if (nz.at("kind") == "file") {
      e.noise_file = nz.at("path").get<std::string>();
      e.noise_offset = nz.at("offset").get<std::size_t>();
    } else {
      e.noise_seed = nz.at("seed").get<std::uint64_t>();
      e.noise.source_count = nz.at("sources").get<std::size_t>();
      e.noise.cutoff_hz = nz.at("cutoff_hz").get<double>();
      e.noise.wall_offset = {nz.at("wall_offset").at(0).get<double>(),
                             nz.at("wall_offset").at(1).get<double>()};
    }
    const auto& s = j.at("scene");
    e.scene.room.dims = detail::json_vec(s.at("room_dims"));
    e.scene.t60 = s.at("t60").get<double>();
    e.scene.room.target_t60 = e.scene.t60;
    e.scene.snr_db = s.at("snr_db").get<double>();
    e.scene.array.center = detail::json_vec(s.at("array_center"));
    e.scene.array.radius = s.at("array_radius").get<double>();
    e.scene.array.mic_count = s.at("mic_count").get<std::size_t>();
    e.scene.array.first_mic_angle = s.at("first_mic_angle").get<double>();
    e.scene.source_position = detail::json_vec(s.at("source_position"));
    e.scene.rng_seed = s.at("scene_seed").get<std::uint64_t>();
    e.length = j.at("length").get<std::size_t>();
    e.sample_rate = j.at("sample_rate").get<double>();
    e.gains = j.at("gains").get<std::vector<double>>();
    e.noise_scale = j.at("noise_scale").get<double>();
    e.mixture_wav = j.at("mixture_wav").get<std::string>();
    e.target_wav = j.at("target_wav").get<std::string>();
    return e;
  } catch (const nlohmann::json::exception& ex) {
    detail::fail(ErrorKind::Io, std::string("malformed manifest entry: ") + ex.what());
  }
}

inline void write_manifest(const std::filesystem::path& path,
                           const std::vector<DatasetEntry>& entries) {
  std::ofstream os(path, std::ios::trunc);
  detail::require(static_cast<bool>(os), ErrorKind::Io, "cannot open " + path.string());
  for (const auto& e : entries) os << to_json(e).dump() << '\n';
  detail::require(static_cast<bool>(os), ErrorKind::Io, "failed writing " + path.string());
}

inline std::vector<DatasetEntry> read_manifest(const std::filesystem::path& path) {
  std::ifstream is(path);
  detail::require(static_cast<bool>(is), ErrorKind::Io, "cannot open manifest " + path.string());
  std::vector<DatasetEntry> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (detail::trim(line).empty()) continue;
    Json j;
    try {
      j = Json::parse(line);
    } catch (const nlohmann::json::exception& ex) {
      detail::fail(ErrorKind::Io, path.string() + ":" + std::to_string(lineno) + ": " + ex.what());
    }
    out.push_back(entry_from_json(j));
  }
  return out;
}

/// Sorted *.wav files in `dir`.
inline std::vector<std::filesystem::path> list_wavs(const std::filesystem::path& dir) {
  std::vector<std::filesystem::path> out;
  for (const auto& f : std::filesystem::directory_iterator(dir)) {
    auto ext = f.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    if (f.is_regular_file() && ext == ".wav") out.push_back(f.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

inline std::string record_id(std::uint64_t utterance, std::uint64_t replica) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "u%05llu-r%02llu", static_cast<unsigned long long>(utterance),
                static_cast<unsigned long long>(replica));
  return buf;
}

namespace detail {

inline std::vector<double> load_speech(const std::filesystem::path& path, double fs) {
  const auto w = read_wav(path);
  require(w.channel_count() == 1, ErrorKind::InvalidInput,
          path.string() + ": anechoic speech must be mono");
  require(w.sample_rate == fs, ErrorKind::InvalidInput,
          path.string() + ": sample rate " + format_double(w.sample_rate) + " differs from " +
              format_double(fs));
  require(w.length() > 0, ErrorKind::InvalidInput, path.string() + ": empty audio");
  return w[0];
}

}  // namespace detail

/// Draws every scene and source choice of the dataset. Audio is not
/// rendered; gains and noise scale stay unset.
inline std::vector<DatasetEntry> plan_dataset(const ExperimentConfig& cfg) {
  cfg.validate();
  const double fs = cfg.stft.sample_rate;
  std::vector<std::filesystem::path> speech_files, noise_files;
  if (!cfg.speech_dir.empty()) {
    speech_files = list_wavs(cfg.speech_dir);
    detail::require(speech_files.size() >= cfg.utterances, ErrorKind::Configuration,
                    "dataset.speech_dir has " + std::to_string(speech_files.size()) +
                        " WAV files, fewer than dataset.utterances");
  }
  if (!cfg.noise_dir.empty()) {
    noise_files = list_wavs(cfg.noise_dir);
    detail::require(!noise_files.empty(), ErrorKind::Configuration,
                    "dataset.noise_dir has no WAV files");
  }
  std::vector<std::size_t> noise_lengths;
  for (const auto& f : noise_files) {
    const auto w = read_wav(f);
    detail::require(w.channel_count() == cfg.scene.mic_count && w.sample_rate == fs,
                    ErrorKind::InvalidInput,
                    f.string() + ": noise must have one channel per mic at the dataset rate");
    noise_lengths.push_back(w.length());
  }

  std::vector<DatasetEntry> out;
  for (std::uint64_t u = 0; u < cfg.utterances; ++u) {
    std::size_t length = static_cast<std::size_t>(std::llround(cfg.duration_s * fs));
    std::string speech_file;
    if (!speech_files.empty()) {
      speech_file = std::filesystem::absolute(speech_files[u]).string();
      length = read_wav(speech_files[u]).length();
    }
    for (std::uint64_t r = 0; r < cfg.replications; ++r) {
      const std::uint64_t index = u * cfg.replications + r;
      DatasetEntry e;
      e.id = record_id(u, r);
      e.master_seed = cfg.seed;
      e.utterance = u;
      e.replica = r;
      e.speech_file = speech_file;
      e.speech_seed = derive_seed(cfg.seed, index, static_cast<std::uint64_t>(RecordStream::Speech));
      e.noise_seed = derive_seed(cfg.seed, index, static_cast<std::uint64_t>(RecordStream::Noise));
      e.noise = cfg.noise;
      e.scene = sample_scene(
          derive_seed(cfg.seed, index, static_cast<std::uint64_t>(RecordStream::Scene)), cfg.scene);
      e.length = length;
      e.sample_rate = fs;
      if (!noise_files.empty()) {
        Rng pick(e.noise_seed);
        const std::size_t k = pick.below(noise_files.size());
        detail::require(noise_lengths[k] >= length, ErrorKind::InvalidInput,
                        noise_files[k].string() + ": noise shorter than the utterance");
        e.noise_file = std::filesystem::absolute(noise_files[k]).string();
        e.noise_offset = pick.below(noise_lengths[k] - length + 1);
      }
      e.mixture_wav = e.id + "/mixture.wav";
      e.target_wav = e.id + "/target.wav";
      out.push_back(std::move(e));
    }
  }
  return out;
}

/// Renders the record described by `e` from its sources.
inline MixtureRecord materialize(const DatasetEntry& e) {
  MultichannelWaveform speech(1, e.length, e.sample_rate);
  if (e.speech_file.empty()) {
    speech[0] = synth_speech(e.speech_seed, e.length, e.sample_rate);
  } else {
    speech[0] = detail::load_speech(e.speech_file, e.sample_rate);
    detail::require(speech[0].size() == e.length, ErrorKind::InvalidInput,
                    e.speech_file + ": length differs from the manifest");
  }
  MultichannelWaveform noise;
  if (e.noise_file.empty()) {
    noise = synth_noise(e.noise_seed, e.length, e.sample_rate, e.scene, e.noise);
  } else {
    const auto all = read_wav(e.noise_file);
    detail::require(all.length() >= e.noise_offset + e.length, ErrorKind::InvalidInput,
                    e.noise_file + ": shorter than the manifest offset");
    noise = MultichannelWaveform(all.channel_count(), e.length, e.sample_rate);
    for (std::size_t m = 0; m < all.channel_count(); ++m)
      std::copy_n(all[m].begin() + static_cast<std::ptrdiff_t>(e.noise_offset), e.length,
                  noise[m].begin());
  }
  return spatialize(speech, noise, e.scene);
}

/// Mixture and target read back from the dataset's WAV files.
inline MixtureRecord load_record(const DatasetEntry& e, const std::filesystem::path& dataset_dir) {
  MixtureRecord rec;
  rec.scene = e.scene;
  rec.gains = e.gains;
  rec.noise_scale = e.noise_scale;
  rec.synthetic_noise = true;
  rec.mixture = read_wav(dataset_dir / e.mixture_wav);
  rec.target_direct = read_wav(dataset_dir / e.target_wav);
  detail::require(rec.mixture.channel_count() == rec.target_direct.channel_count() &&
                      rec.mixture.length() == rec.target_direct.length() &&
                      rec.mixture.length() == e.length,
                  ErrorKind::Io, e.id + ": stored audio does not match the manifest");
  return rec;
}

}  // namespace dereverb
