#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "dereverb/pipeline.hpp"

using namespace dereverb;
namespace fs = std::filesystem;

namespace {

ErrorKind kind_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind();
  }
  ADD_FAILURE() << "no error thrown";
  return ErrorKind::Pipeline;
}

SceneRanges quick_rooms() {
  SceneRanges r;
  r.t60 = {0.2, 0.5};
  return r;
}

fs::path scratch_dir(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("dereverb_pipeline_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

SystemConfig config(Topology t, std::vector<std::size_t> mics, std::size_t ref = 1) {
  SystemConfig c;
  c.topology = t;
  c.mic_subset = std::move(mics);
  c.reference_mic = ref;
  return c;
}

/// Returns a fixed wrong-shape tensor regardless of input.
class WrongShapeEnhancer final : public Enhancer {
 public:
  std::string name() const override { return "wrong"; }
  ComplexSpectrogram enhance(const EnhancerRequest& req) override {
    return ComplexSpectrogram(req.output_channels + 1, req.inputs->frames(), req.inputs->bins());
  }
};

}  // namespace

TEST(ChannelShift, Examples) {
  EXPECT_EQ(channel_shift(4, 1), (std::vector<std::size_t>{1, 2, 3, 4}));
  EXPECT_EQ(channel_shift(4, 3), (std::vector<std::size_t>{3, 4, 1, 2}));
  EXPECT_EQ(channel_shift(1, 1), (std::vector<std::size_t>{1}));
  EXPECT_EQ(kind_of([] { channel_shift(4, 0); }), ErrorKind::InvalidInput);
  EXPECT_EQ(kind_of([] { channel_shift(4, 5); }), ErrorKind::InvalidInput);
}

TEST(ChannelShift, ComposingShiftPTimesIsIdentity) {
  for (std::size_t P : {2u, 4u, 8u}) {
    std::vector<int> items(P);
    std::iota(items.begin(), items.end(), 10);
    for (std::size_t p = 1; p <= P; ++p) {
      auto x = items;
      for (std::size_t k = 0; k < P; ++k) x = channel_shift(x, p);
      EXPECT_EQ(x, items) << "P=" << P << " p=" << p;
    }
  }
}

TEST(ChannelShift, ReordersSpectrogramChannels) {
  ComplexSpectrogram s(4, 2, 3);
  for (std::size_t p = 0; p < 4; ++p)
    for (std::size_t t = 0; t < 2; ++t)
      for (std::size_t f = 0; f < 3; ++f) s(p, t, f) = {double(p), double(t * 3 + f)};
  const auto r = channel_shift(s, 3);
  const std::size_t expected[] = {2, 3, 0, 1};
  for (std::size_t p = 0; p < 4; ++p) EXPECT_EQ(r(p, 1, 2), Complex(double(expected[p]), 5.0));
}

TEST(MicSubset, CanonicalSubsets) {
  EXPECT_EQ(select_mic_subset(1), (std::vector<std::size_t>{1}));
  EXPECT_EQ(select_mic_subset(2), (std::vector<std::size_t>{1, 5}));
  EXPECT_EQ(select_mic_subset(4), (std::vector<std::size_t>{1, 3, 5, 7}));
  EXPECT_EQ(select_mic_subset(8).size(), 8u);
  EXPECT_EQ(kind_of([] { select_mic_subset(3); }), ErrorKind::Configuration);
}

TEST(Topology, NamesRoundTrip) {
  for (Topology t : {Topology::Siso1, Topology::Siso1BfSiso1, Topology::Siso1BfSiso2,
                     Topology::Miso1, Topology::Miso1BfMiso2, Topology::Mimo,
                     Topology::MimoBfMiso3})
    EXPECT_EQ(parse_topology(to_string(t)), t);
  EXPECT_EQ(kind_of([] { parse_topology("bf"); }), ErrorKind::Configuration);
}

TEST(TensorIo, RoundTripIsBitExact) {
  Rng rng(5);
  ComplexSpectrogram s(3, 7, 11);
  for (auto& z : s.data())
    z = {static_cast<double>(static_cast<float>(rng.normal())),
         static_cast<double>(static_cast<float>(rng.normal()))};
  const auto bytes = encode_tensor(s);
  ASSERT_EQ(bytes.size(), 8u + 4u + 12u + 3u * 7u * 11u * 8u);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 8), "DRVTENS1");
  EXPECT_EQ(bytes[8], 3);
  EXPECT_EQ(bytes[12], 3);
  EXPECT_EQ(bytes[16], 7);
  EXPECT_EQ(bytes[20], 11);
  const auto back = decode_tensor(bytes);
  ASSERT_TRUE(back.same_shape(s));
  EXPECT_EQ(back.data(), s.data());
  EXPECT_EQ(encode_tensor(back), bytes);

  const auto dir = scratch_dir("io");
  write_tensor(dir / "t.drvt", s);
  EXPECT_EQ(read_tensor(dir / "t.drvt").data(), s.data());
}

TEST(TensorIo, CorruptInputsAreRejected) {
  Rng rng(6);
  ComplexSpectrogram s(1, 2, 2);
  auto bytes = encode_tensor(s);
  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  EXPECT_THROW(decode_tensor(bad_magic), Error);
  auto truncated = bytes;
  truncated.pop_back();
  EXPECT_THROW(decode_tensor(truncated), Error);
  EXPECT_THROW(read_tensor("/nonexistent/file.drvt"), Error);
}

class Pipeline : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    records_ = new std::vector<MixtureRecord>;
    for (std::uint64_t i = 0; i < 3; ++i)
      records_->push_back(simulate_record(21, i, 16000, quick_rooms()));
  }
  static void TearDownTestSuite() { delete records_; }
  static const MixtureRecord& record(std::size_t i = 0) { return (*records_)[i]; }
  static std::vector<MixtureRecord>* records_;
};

std::vector<MixtureRecord>* Pipeline::records_ = nullptr;

TEST_F(Pipeline, PassthroughSisoReproducesUnprocessed) {
  PassthroughEnhancer pass;
  for (std::size_t ref : {1u, 4u, 8u}) {
    const auto r = run_system(record(), config(Topology::Siso1, {ref}, ref), pass);
    EXPECT_NEAR(r.metric.si_sdr_db, r.unprocessed.si_sdr_db, 1e-9);
    EXPECT_LT(r.unprocessed.si_sdr_db, 30.0);
  }
}

TEST_F(Pipeline, MisoEqualsSisoAtOneMic) {
  PassthroughEnhancer pass;
  OracleMaskEnhancer psm(MaskKind::Psm);
  for (Enhancer* e : std::initializer_list<Enhancer*>{&pass, &psm}) {
    const auto a = run_system(record(1), config(Topology::Siso1, {3}, 3), *e);
    const auto b = run_system(record(1), config(Topology::Miso1, {3}, 3), *e);
    EXPECT_EQ(a.output.channels, b.output.channels) << e->name();
    EXPECT_EQ(a.metric.si_sdr_db, b.metric.si_sdr_db);
  }
}

TEST_F(Pipeline, OracleSisoIsNearPerfect) {
  OracleEnhancer oracle;
  const auto r = run_system(record(), config(Topology::Siso1, {1}), oracle);
  EXPECT_GT(r.metric.si_sdr_db, 99.0);
}

TEST_F(Pipeline, IdentityExternalMatchesPassthrough) {
  const auto dir = scratch_dir("identity");
  ExternalEnhancer ext(dir, "cp");
  PassthroughEnhancer pass;
  for (Topology t : {Topology::Siso1, Topology::Mimo}) {
    const auto cfg = config(t, {1, 3, 5, 7});
    const auto a = run_system(record(), cfg, ext);
    const auto b = run_system(record(), cfg, pass);
    EXPECT_NEAR(a.metric.si_sdr_db, b.metric.si_sdr_db, 1e-7) << to_string(t);
  }
  EXPECT_TRUE(fs::exists(dir / "utt.mimo.s1.in.drvt"));
}

TEST_F(Pipeline, ExternalFailuresAreReported) {
  const auto dir = scratch_dir("failures");
  {
    ComplexSpectrogram tiny(1, 1, 1);
    write_tensor(dir / "tiny.drvt", tiny);
    std::ofstream script(dir / "wrong.sh");
    script << "#!/bin/sh\ncp '" << (dir / "tiny.drvt").string() << "' \"$2\"\n";
  }
  ExternalEnhancer wrong(dir, "sh '" + (dir / "wrong.sh").string() + "'");
  try {
    run_system(record(), config(Topology::Siso1, {1}), wrong);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::ExternalEnhancer);
    EXPECT_NE(std::string(e.what()).find("shape mismatch"), std::string::npos) << e.what();
  }

  ExternalEnhancer exits(dir, "sh -c 'echo boom >&2; exit 3' sh");
  try {
    run_system(record(), config(Topology::Siso1, {1}), exits);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::ExternalEnhancer);
    EXPECT_NE(std::string(e.what()).find("boom"), std::string::npos) << e.what();
  }

  ExternalEnhancer silent(dir, "true");
  EXPECT_EQ(kind_of([&] { run_system(record(), config(Topology::Siso1, {1}), silent); }),
            ErrorKind::ExternalEnhancer);
}

TEST_F(Pipeline, ContractViolations) {
  WrongShapeEnhancer wrong;
  EXPECT_EQ(kind_of([&] { run_system(record(), config(Topology::Siso1, {1}), wrong); }),
            ErrorKind::Contract);
  OracleEnhancer oracle;
  EXPECT_EQ(kind_of([&] {
              EnhancerRequest req;
              ComplexSpectrogram y(1, 2, 2);
              req.inputs = &y;
              oracle.enhance(req);
            }),
            ErrorKind::Contract);
}

TEST_F(Pipeline, ConfigurationErrors) {
  PassthroughEnhancer pass;
  const auto& rec = record();
  EXPECT_EQ(kind_of([&] { run_system(rec, config(Topology::Siso1BfSiso1, {1}), pass); }),
            ErrorKind::Configuration);
  EXPECT_EQ(kind_of([&] { run_system(rec, config(Topology::Siso1, {2}, 1), pass); }),
            ErrorKind::Configuration);
  EXPECT_EQ(kind_of([&] { run_system(rec, config(Topology::Miso1, {1, 1}), pass); }),
            ErrorKind::Configuration);
  EXPECT_EQ(kind_of([&] { run_system(rec, config(Topology::Miso1, {1, 9}), pass); }),
            ErrorKind::Configuration);
  EXPECT_EQ(kind_of([&] { run_system(rec, config(Topology::Miso1, {}), pass); }),
            ErrorKind::Configuration);
}

TEST_F(Pipeline, RerunsAreBitIdentical) {
  OracleMaskEnhancer psm(MaskKind::Psm);
  const auto cfg = config(Topology::Miso1BfMiso2, {1, 3, 5, 7});
  const auto a = run_system(record(2), cfg, psm, &psm);
  const auto b = run_system(record(2), cfg, psm, &psm);
  EXPECT_EQ(a.output.channels, b.output.channels);
  EXPECT_EQ(a.metric.si_sdr_db, b.metric.si_sdr_db);
  const auto again = simulate_record(21, 2, 16000, quick_rooms());
  EXPECT_EQ(again.mixture.channels, record(2).mixture.channels);
}

TEST_F(Pipeline, EveryTopologyRuns) {
  OracleMaskEnhancer psm(MaskKind::Psm);
  for (Topology t : {Topology::Siso1, Topology::Siso1BfSiso1, Topology::Siso1BfSiso2,
                     Topology::Miso1, Topology::Miso1BfMiso2, Topology::Mimo,
                     Topology::MimoBfMiso3}) {
    auto cfg = config(t, {1, 5}, 5);
    cfg.keep_artifacts = true;
    const auto r = run_system(record(), cfg, psm, &psm);
    EXPECT_EQ(r.output.channel_count(), 1u);
    EXPECT_EQ(r.output.length(), record().mixture.length());
    EXPECT_TRUE(std::isfinite(r.metric.si_sdr_db)) << to_string(t);
    EXPECT_EQ(r.beamformed_metric.has_value(), has_beamformer(t));
    if (has_beamformer(t)) {
      EXPECT_EQ(r.artifacts.noise_condition_numbers.size(), cfg.stft.bins());
      for (double k : r.artifacts.noise_condition_numbers) EXPECT_GE(k, 1.0);
      EXPECT_EQ(r.artifacts.beamformed.channels(), 1u);
    }
  }
}

TEST_F(Pipeline, OracleBeamformerBeatsReferenceMic) {
  OracleEnhancer oracle;
  double bf = 0.0, unproc = 0.0;
  for (std::size_t i = 0; i < 3; ++i) {
    const auto r = run_system(record(i), config(Topology::Siso1BfSiso1, {1, 3, 5, 7}), oracle);
    bf += r.metric.si_sdr_db;
    unproc += r.unprocessed.si_sdr_db;
    EXPECT_EQ(r.metric.si_sdr_db, r.beamformed_metric->si_sdr_db);
  }
  EXPECT_GT(bf, unproc);
}

TEST_F(Pipeline, BeamformingPostFilterBeatsSingleMicMask) {
  OracleMaskEnhancer psm(MaskKind::Psm);
  double chain = 0.0, single = 0.0;
  for (std::size_t i = 0; i < 3; ++i) {
    chain += run_system(record(i), config(Topology::Miso1BfMiso2, {1, 3, 5, 7}), psm, &psm)
                 .metric.si_sdr_db;
    single += run_system(record(i), config(Topology::Siso1, {1}), psm).metric.si_sdr_db;
  }
  EXPECT_GT(chain, single);
}

TEST(PipelineConstruction, NoiselessRankOneBeamformerIsDistortionless) {
  // Target at every mic is a scaled copy of one signal, so the speech
  // covariance is exactly rank one and the mixture equals the target.
  const std::size_t n = 8000;
  const auto s = synth_speech(3, n, 16000.0);
  MixtureRecord rec;
  rec.target_direct = MultichannelWaveform(4, n, 16000.0);
  const double a[] = {1.0, -0.6, 0.8, 1.7};
  for (std::size_t p = 0; p < 4; ++p)
    for (std::size_t i = 0; i < n; ++i) rec.target_direct[p][i] = a[p] * s[i];
  rec.mixture = rec.target_direct;

  OracleEnhancer oracle;
  auto cfg = config(Topology::Siso1BfSiso1, {1, 2, 3, 4}, 2);
  cfg.keep_artifacts = true;
  const auto r = run_system(rec, cfg, oracle);
  const auto Sq = stft(rec.target_direct, cfg.stft).channel(1);
  double worst = 0.0;
  for (std::size_t i = 0; i < Sq.size(); ++i)
    worst = std::max(worst, std::abs(r.artifacts.beamformed.data()[i] - Sq.data()[i]));
  EXPECT_LT(worst, 1e-6);
}
