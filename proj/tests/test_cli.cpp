#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "sganc/cli.hpp"

using namespace sganc;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code;
  std::string out, err;
};

Run run(std::vector<std::string> args) {
  args.insert(args.begin(), "sganc");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("sganc_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  std::string path(const std::string& name) const { return (dir_ / name).string(); }

  // Small video plus an inter model trained on it.
  void make_fixture() {
    ASSERT_EQ(run({"synth", "--out", path("v.sglat"), "--frames", "24", "--layers", "4", "--channels", "8", "--seed",
                   "3"})
                  .code,
              0);
    const auto t = run({"train-inter", path("v.sglat"), "--out", path("m"), "--steps", "20", "--coupling-layers", "2",
                        "--hidden", "8", "--seed", "1"});
    ASSERT_EQ(t.code, 0) << t.err;
  }

  fs::path dir_;
};

}  // namespace

TEST_F(CliTest, HelpListsCommandsAndFlags) {
  const auto top = run({"--help"});
  EXPECT_EQ(top.code, 0);
  for (const char* c : {"synth", "train-intra", "train-inter", "encode-intra", "encode-inter", "decode", "eval",
                        "rd-curve", "verify-lemma1"})
    EXPECT_NE(top.out.find(c), std::string::npos) << c;
  const auto enc = run({"encode-inter", "--help"});
  EXPECT_EQ(enc.code, 0);
  for (const char* f : {"--model", "--entropy-model", "--intra-model", "--g", "--refresh", "--out"})
    EXPECT_NE(enc.out.find(f), std::string::npos) << f;
  const auto train = run({"train-intra", "--help"});
  for (const char* f : {"--config", "--lambda", "--steps", "--seed", "--stages", "--coupling-layers", "--hidden"})
    EXPECT_NE(train.out.find(f), std::string::npos) << f;
}

TEST_F(CliTest, UsageErrorsExitTwo) {
  const auto r = run({"synth", "--out", path("x"), "--bogus"});
  EXPECT_EQ(r.code, 2);
  EXPECT_EQ(r.err.rfind("error: kind=usage exit=2 message=\"", 0), 0u) << r.err;
  EXPECT_EQ(run({}).code, 2);
  EXPECT_EQ(run({"encode-inter", "in", "--out", "o", "--model", "m", "--g", "0"}).code, 2);
  EXPECT_EQ(run({"synth", "--out", path("x"), "--rho", "1.5"}).code, 2);
}

TEST_F(CliTest, MissingFileExitsThree) {
  const auto r = run({"train-intra", path("nope.sglat"), "--out", path("m")});
  EXPECT_EQ(r.code, 3);
  EXPECT_NE(r.err.find("kind=io"), std::string::npos);
}

TEST_F(CliTest, BadConfigKeyExitsTwo) {
  ASSERT_EQ(run({"synth", "--out", path("v.sglat"), "--frames", "4", "--layers", "4", "--channels", "4"}).code, 0);
  std::ofstream(path("cfg.txt")) << "steps = 2\nlearnin_rate = 1\n";
  const auto r = run({"train-intra", path("v.sglat"), "--out", path("m"), "--config", path("cfg.txt")});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("learnin_rate"), std::string::npos);
}

TEST_F(CliTest, SynthWritesReadableLatents) {
  const auto r = run({"synth", "--out", path("v.sglat"), "--frames", "7", "--layers", "3", "--channels", "5",
                      "--rho", "0.5", "--seed", "9"});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto seq = read_latents(path("v.sglat"));
  EXPECT_EQ(seq.size(), 7u);
  EXPECT_EQ(seq.layers(), 3u);
  EXPECT_EQ(seq.channels(), 5u);
  ASSERT_EQ(run({"synth", "--out", path("w.sglat"), "--frames", "7", "--layers", "3", "--channels", "5", "--rho",
                 "0.5", "--seed", "9"})
                .code,
            0);
  EXPECT_EQ(read_file(path("v.sglat")), read_file(path("w.sglat")));
}

TEST_F(CliTest, EncodeDecodeRoundTrip) {
  make_fixture();
  for (const char* f : {"flow.sgflow", "entropy.sgent", "intra.sgent", "trace.csv", "intra_trace.csv"})
    EXPECT_TRUE(fs::exists(dir_ / "m" / f)) << f;
  const auto enc = run({"encode-inter", path("v.sglat"), "--out", path("c.sgvc"), "--model", path("m"), "--g", "5"});
  ASSERT_EQ(enc.code, 0) << enc.err;
  EXPECT_NE(enc.out.find("bpp="), std::string::npos);
  const auto dec = run({"decode", path("c.sgvc"), "--out", path("d.sglat"), "--model", path("m")});
  ASSERT_EQ(dec.code, 0) << dec.err;

  // same result as the library path
  const auto bundle = CodecBundle::from_files(path("m/flow.sgflow"), path("m/entropy.sgent"),
                                              path("m/intra.sgent"), 5);
  const auto lib = decode(read_file(path("c.sgvc")), bundle);
  const auto got = read_latents(path("d.sglat"));
  ASSERT_EQ(got.size(), 24u);
  // .sglat stores float32
  for (std::size_t t = 0; t < got.size(); ++t)
    EXPECT_EQ(got[t].data(), lib.frames[t].data().cast<float>().cast<double>());

  // explicit file flags are equivalent to the directory form
  const auto enc2 = run({"encode-inter", path("v.sglat"), "--out", path("c2.sgvc"), "--model", path("m/flow.sgflow"),
                         "--entropy-model", path("m/entropy.sgent"), "--intra-model", path("m/intra.sgent"), "--g",
                         "5"});
  ASSERT_EQ(enc2.code, 0) << enc2.err;
  EXPECT_EQ(read_file(path("c.sgvc")), read_file(path("c2.sgvc")));
}

TEST_F(CliTest, TrainingIsDeterministic) {
  make_fixture();
  const auto again = run({"train-inter", path("v.sglat"), "--out", path("m2"), "--steps", "20", "--coupling-layers",
                          "2", "--hidden", "8", "--seed", "1"});
  ASSERT_EQ(again.code, 0);
  EXPECT_EQ(read_file(path("m/flow.sgflow")), read_file(path("m2/flow.sgflow")));
  EXPECT_EQ(read_file(path("m/entropy.sgent")), read_file(path("m2/entropy.sgent")));
}

TEST_F(CliTest, DigestMismatchExitsFourWithoutOutput) {
  make_fixture();
  ASSERT_EQ(run({"encode-intra", path("v.sglat"), "--out", path("c.sgvc"), "--model", path("m")}).code, 0);
  ASSERT_EQ(run({"train-inter", path("v.sglat"), "--out", path("other"), "--steps", "3", "--coupling-layers", "2",
                 "--hidden", "8", "--seed", "2"})
                .code,
            0);
  const auto r = run({"decode", path("c.sgvc"), "--out", path("d.sglat"), "--model", path("other")});
  EXPECT_EQ(r.code, 4);
  EXPECT_NE(r.err.find("kind=digest"), std::string::npos);
  EXPECT_FALSE(fs::exists(path("d.sglat")));
}

TEST_F(CliTest, CorruptContainerExitsFive) {
  make_fixture();
  ASSERT_EQ(run({"encode-inter", path("v.sglat"), "--out", path("c.sgvc"), "--model", path("m")}).code, 0);
  auto bytes = read_file(path("c.sgvc"));
  bytes[bytes.size() - 3] ^= 0x40;
  write_file(path("bad.sgvc"), bytes);
  const auto r = run({"decode", path("bad.sgvc"), "--out", path("d.sglat"), "--model", path("m")});
  EXPECT_EQ(r.code, 5);
  EXPECT_FALSE(fs::exists(path("d.sglat")));

  bytes = read_file(path("c.sgvc"));
  bytes.resize(bytes.size() - 10);
  write_file(path("cut.sgvc"), bytes);
  EXPECT_EQ(run({"decode", path("cut.sgvc"), "--out", path("d.sglat"), "--model", path("m")}).code, 5);
  const auto part = run({"decode", path("cut.sgvc"), "--out", path("d.sglat"), "--model", path("m"),
                         "--allow-truncated"});
  EXPECT_EQ(part.code, 0) << part.err;
  EXPECT_EQ(read_latents(path("d.sglat")).size(), 23u);
}

TEST_F(CliTest, EvalPrintsCsv) {
  make_fixture();
  const auto r = run({"eval", path("v.sglat"), "--model", path("m"), "--inter", "--g", "4"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(r.out.rfind("mode,frames,bpp,latent_mse,bits_per_frame\ninter,24,", 0), 0u) << r.out;
}

TEST_F(CliTest, VerifyResidualLawPassesAndFails) {
  const auto ok = run({"verify-lemma1", "--g", "2", "--samples", "200000", "--seed", "5"});
  EXPECT_EQ(ok.code, 0) << ok.err;
  EXPECT_NE(ok.out.find(" pass"), std::string::npos);
  const auto bad = run({"verify-lemma1", "--g", "2", "--samples", "20", "--seed", "5"});
  EXPECT_EQ(bad.code, 7);
  EXPECT_NE(bad.err.find("kind=verification"), std::string::npos);
}

TEST_F(CliTest, RdCurveWritesOneRowPerLambda) {
  ASSERT_EQ(run({"synth", "--out", path("s.sglat"), "--frames", "40", "--layers", "4", "--channels", "4",
                 "--intra-set", "--seed", "2"})
                .code,
            0);
  const auto r = run({"rd-curve", path("s.sglat"), "--out", path("rd.csv"), "--lambdas", "1e-2,1e-4", "--steps", "5",
                      "--coupling-layers", "1", "--hidden", "4"});
  ASSERT_EQ(r.code, 0) << r.err;
  std::ifstream in(path("rd.csv"));
  std::string header, a, b, extra;
  std::getline(in, header);
  std::getline(in, a);
  std::getline(in, b);
  EXPECT_EQ(header, "lambda,bpp,latent_mse");
  EXPECT_EQ(a.rfind("0.01,", 0), 0u) << a;
  EXPECT_EQ(b.rfind("0.0001,", 0), 0u) << b;
  EXPECT_FALSE(std::getline(in, extra));
  EXPECT_EQ(run({"rd-curve", path("s.sglat"), "--out", path("rd.csv"), "--lambdas", "1e-2,abc"}).code, 2);
}
