#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

#include "dereverb/commands.hpp"

using namespace dereverb;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitValidation = 1;
constexpr int kExitRuntime = 2;

std::string quoted(const std::string& s) {
  std::string out = "\"";
  for (char c : s) {
    if (c == '"' || c == '\\') out += '\\';
    if (c == '\n') {
      out += "\\n";
      continue;
    }
    out += c;
  }
  return out + "\"";
}

void report(ErrorKind kind, const std::string& message) {
  std::cerr << "error: kind=" << to_string(kind) << " message=" << quoted(message) << '\n';
}

int exit_code_for(ErrorKind kind) {
  return kind == ErrorKind::Configuration || kind == ErrorKind::InvalidInput ? kExitValidation
                                                                              : kExitRuntime;
}

Vec3 to_vec3(const std::vector<double>& v) { return {v.at(0), v.at(1), v.at(2)}; }

/// Options shared by simulate and run.
struct CommonOptions {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> jobs;
  std::vector<std::string> overrides;

  void attach(CLI::App* app) {
    app->add_option("--config", config_path, "key = value configuration file")
        ->check(CLI::ExistingFile);
    app->add_option("--seed", seed, "master seed");
    app->add_option("--jobs", jobs, "utterances processed in parallel")
        ->check(CLI::PositiveNumber);
    app->add_option("--set", overrides, "override one key, e.g. --set scene.t60=0.3,0.6");
  }

  ExperimentConfig load() const {
    ExperimentConfig cfg;
    if (!config_path.empty()) cfg = load_config(config_path);
    for (const auto& kv : overrides) {
      const auto eq = kv.find('=');
      detail::require(eq != std::string::npos, ErrorKind::Configuration,
                      "--set expects key=value, got '" + kv + "'");
      set_config_value(cfg, detail::trim(kv.substr(0, eq)), detail::trim(kv.substr(eq + 1)));
    }
    if (seed) cfg.seed = *seed;
    if (jobs) cfg.jobs = *jobs;
    return cfg;
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-microphone dereverberation experiments"};
  app.require_subcommand(1);

  // config
  auto* config_cmd = app.add_subcommand("config", "print the effective configuration");
  CommonOptions config_opts;
  config_opts.attach(config_cmd);

  // simulate
  auto* sim = app.add_subcommand("simulate", "spatialize a dataset and write its manifest");
  CommonOptions sim_opts;
  sim_opts.attach(sim);
  std::string sim_out;
  sim->add_option("--out", sim_out, "dataset directory (dataset.dir)");

  // run
  auto* run = app.add_subcommand("run", "evaluate a system topology over a dataset");
  CommonOptions run_opts;
  run_opts.attach(run);
  std::optional<std::size_t> mics;
  std::string topology, enhancer, post, command, dataset, results;
  bool debug = false;
  run->add_option("--mics", mics, "microphone count")->check(CLI::IsMember({1, 2, 4, 8}));
  run->add_option("--topology", topology, "system topology");
  run->add_option("--enhancer", enhancer, "first-stage enhancer");
  run->add_option("--post-enhancer", post, "post-filter enhancer for beamforming topologies");
  run->add_option("--command", command, "command for the external enhancer");
  run->add_option("--dataset", dataset, "dataset directory (dataset.dir)");
  run->add_option("--results", results, "results directory (results.dir)");
  run->add_flag("--debug-artifacts", debug, "persist intermediate tensors");

  // gradcheck
  auto* grad = app.add_subcommand("gradcheck", "finite-difference check of the loss gradients");
  GradcheckOptions gopts;
  grad->add_option("--seed", gopts.seed, "seed for the random points");
  grad->add_option("--points", gopts.points, "random points per loss")->check(CLI::PositiveNumber);
  grad->add_option("--frames", gopts.frames, "frames per point")->check(CLI::PositiveNumber);
  grad->add_option("--bins", gopts.bins, "bins per point")->check(CLI::PositiveNumber);

  // rir
  auto* rir = app.add_subcommand("rir", "render one room impulse response");
  std::vector<double> room, source, mic;
  RirRequest rreq;
  std::string rir_out;
  int max_order = -1;
  rir->add_option("--room", room, "room dimensions x,y,z in m")
      ->required()->delimiter(',')->expected(3);
  rir->add_option("--source", source, "source position x,y,z in m")
      ->required()->delimiter(',')->expected(3);
  rir->add_option("--mic", mic, "microphone position x,y,z in m")
      ->required()->delimiter(',')->expected(3);
  rir->add_option("--t60", rreq.t60, "target reverberation time in s");
  rir->add_option("--fs", rreq.fs, "sample rate in Hz")->check(CLI::PositiveNumber);
  rir->add_option("--max-order", max_order, "image order limit");
  rir->add_flag("--free-field", rreq.free_field, "direct path only");
  rir->add_flag("--eyring", rreq.eyring, "Eyring reflection coefficient instead of specular fit");
  rir->add_option("--out", rir_out, "output WAV");

  // synth-speech
  auto* speech = app.add_subcommand("synth-speech", "write a synthetic speech-like utterance");
  std::uint64_t speech_seed = 1;
  double speech_duration = 4.0;
  std::string speech_out;
  speech->add_option("--seed", speech_seed, "seed");
  speech->add_option("--duration", speech_duration, "seconds")->check(CLI::PositiveNumber);
  speech->add_option("--out", speech_out, "output WAV")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    report(ErrorKind::Configuration, e.what());
    return kExitValidation;
  }

  try {
    if (*config_cmd) {
      const auto cfg = config_opts.load();
      std::cout << dump_config(cfg);
      return kExitOk;
    }

    if (*sim) {
      auto cfg = sim_opts.load();
      if (!sim_out.empty()) cfg.dataset_dir = sim_out;
      const auto rep = cmd_simulate(cfg);
      std::cout << "wrote " << rep.entries.size() << " records to " << rep.manifest.string()
                << '\n';
      return kExitOk;
    }

    if (*run) {
      auto cfg = run_opts.load();
      if (mics) cfg.mics = *mics;
      if (!topology.empty()) cfg.topology = parse_topology(topology);
      if (!enhancer.empty()) cfg.stage1 = enhancer;
      if (!post.empty()) cfg.stage2 = post;
      if (!command.empty()) cfg.external_command = command;
      if (!dataset.empty()) cfg.dataset_dir = dataset;
      if (!results.empty()) cfg.results_dir = results;
      if (debug) cfg.debug_artifacts = true;
      const auto rep = cmd_run(cfg);
      for (const auto& r : rep.results)
        if (!r.ok)
          std::cerr << "error: kind=" << to_string(r.error_kind) << " id=" << r.id
                    << " message=" << quoted(r.message) << '\n';
      const double m = rep.mean(&UtteranceResult::si_sdr_db);
      const double u = rep.mean(&UtteranceResult::unprocessed_db);
      std::cout << rep.condition << " mics=" << rep.mic_count << " utterances="
                << rep.results.size() << " failures=" << rep.failures()
                << " mean_si_sdr_db=" << detail::fixed(m, 3)
                << " mean_unprocessed_db=" << detail::fixed(u, 3) << '\n';
      return rep.failures() == 0 ? kExitOk : kExitRuntime;
    }

    if (*grad) {
      const auto res = cmd_gradcheck(gopts, std::cout);
      for (const auto& r : res)
        if (!r.passed) return kExitValidation;
      return kExitOk;
    }

    if (*rir) {
      rreq.room = to_vec3(room);
      rreq.source = to_vec3(source);
      rreq.mic = to_vec3(mic);
      if (max_order >= 0) rreq.max_order = max_order;
      const auto rep = cmd_rir(rreq);
      if (!rir_out.empty()) {
        MultichannelWaveform w(1, rep.rir.taps.size(), rreq.fs);
        w[0] = rep.rir.taps;
        write_wav(rir_out, w);
      }
      std::cout << "taps=" << rep.rir.taps.size() << " images=" << rep.rir.image_count
                << " reflection=" << detail::fixed(rep.reflection, 6)
                << " direct_delay_samples=" << detail::fixed(rep.direct_delay_samples, 3);
      if (rep.drr_db) std::cout << " drr_db=" << detail::fixed(*rep.drr_db, 3);
      if (!rreq.free_field) {
        std::cout << " target_t60=" << detail::fixed(rreq.t60, 3) << " measured_t60=";
        std::cout << (rep.measured_t60 ? detail::fixed(*rep.measured_t60, 3) : "undefined");
      }
      std::cout << '\n';
      return kExitOk;
    }

    if (*speech) {
      const auto n = static_cast<std::size_t>(std::llround(speech_duration * 16000.0));
      MultichannelWaveform w(1, n, 16000.0);
      w[0] = synth_speech(speech_seed, n, 16000.0);
      write_wav(speech_out, w);
      return kExitOk;
    }
  } catch (const Error& e) {
    report(e.kind(), e.what());
    return exit_code_for(e.kind());
  } catch (const std::exception& e) {
    report(ErrorKind::Pipeline, e.what());
    return kExitRuntime;
  }
  return kExitOk;
}
