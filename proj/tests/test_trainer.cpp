#include <gtest/gtest.h>

#include <cstdlib>
#include <random>

#include "sganc/synth.hpp"
#include "sganc/trainer.hpp"

using namespace sganc;

namespace {

constexpr std::size_t kL = 4, kC = 8;

FlowConfig small_flow() {
  FlowConfig f;
  f.coupling_layers = 2;
  f.hidden = 8;
  return f;
}

std::vector<LatentCode> uniform_codes(std::size_t n, double lo, double hi, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<LatentCode> out;
  for (std::size_t i = 0; i < n; ++i) {
    Matrix m(kL, kC);
    for (Eigen::Index j = 0; j < m.size(); ++j) m.data()[j] = u(rng);
    out.emplace_back(std::move(m));
  }
  return out;
}

std::vector<UniformModel> uniform_models(const StageLayout& layout) {
  std::vector<UniformModel> ms;
  for (const auto& r : layout.stages()) ms.emplace_back(r.size() * kC, -4.0, 4.0);
  return ms;
}

std::vector<LatentSequence> small_videos(std::size_t count, std::size_t frames, std::uint64_t seed) {
  auto spec = SynthSpec::standard(kL, kC, seed);
  spec.rho = 0.9;
  spec.frames = frames;
  return gen_videos(count, spec);
}

}  // namespace

TEST(TrainConfig, ParsesKeyValues) {
  const auto kv = parse_key_values("# comment\nlambda = 0.5\n  steps=12  # trailing\n\nseed = 7\nwindow=3\n");
  TrainConfig c;
  c.apply(kv);
  EXPECT_DOUBLE_EQ(c.lambda, 0.5);
  EXPECT_EQ(c.steps, 12u);
  EXPECT_EQ(c.seed, 7u);
  EXPECT_EQ(c.window, 3u);
}

TEST(TrainConfig, RejectsUnknownKeysAndBadValues) {
  TrainConfig c;
  EXPECT_THROW(c.apply({{"lamda", "1"}}), ConfigError);
  EXPECT_THROW(c.apply({{"steps", "many"}}), ConfigError);
  EXPECT_THROW(parse_key_values("lambda 0.5"), ConfigError);
  EXPECT_THROW(load_key_values("/nonexistent/dir/cfg.txt"), IoError);
}

TEST(TrainConfig, ValidateCatchesBadSettings) {
  TrainConfig c;
  c.window = 1;
  EXPECT_NO_THROW(c.validate(false));
  EXPECT_THROW(c.validate(true), ConfigError);
  c = {};
  c.learning_rate = 0;
  EXPECT_THROW(c.validate(false), ConfigError);
  c = {};
  c.batch_size = 0;
  EXPECT_THROW(c.validate(false), ConfigError);
  c = {};
  c.lambda = -1;
  EXPECT_THROW(c.validate(false), ConfigError);
}

TEST(TrainConfig, SeedFromEnvironment) {
  TrainConfig c;
  c.seed = 3;
  ::unsetenv("SGANC_SEED");
  c.apply_env();
  EXPECT_EQ(c.seed, 3u);
  ::setenv("SGANC_SEED", "991", 1);
  c.apply_env();
  EXPECT_EQ(c.seed, 991u);
  ::setenv("SGANC_SEED", "x1", 1);
  EXPECT_THROW(c.apply_env(), ConfigError);
  ::unsetenv("SGANC_SEED");
}

TEST(Adam, FirstStepMovesByLearningRate) {
  Matrix p = Matrix::Zero(2, 3);
  Matrix g(2, 3);
  g << 0.3, -2.0, 1e-3, -1e-3, 50.0, -7.0;
  std::vector<Matrix*> params{&p};
  std::vector<Matrix> grads{g};
  OptimizerState st;
  TrainConfig cfg;
  adam_step(params, grads, st, cfg);
  EXPECT_EQ(st.step, 1u);
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    const double gi = g.data()[i];
    EXPECT_NEAR(p.data()[i], -cfg.learning_rate * gi / (std::abs(gi) + cfg.adam_epsilon), 1e-15);
    EXPECT_NEAR(std::abs(p.data()[i]), 1e-4, 1e-8);
  }
}

TEST(Adam, ZeroGradientStillAdvancesStep) {
  Matrix p = Matrix::Constant(2, 2, 1.5);
  std::vector<Matrix*> params{&p};
  std::vector<Matrix> grads{Matrix::Zero(2, 2)};
  OptimizerState st;
  adam_step(params, grads, st, TrainConfig{});
  adam_step(params, grads, st, TrainConfig{});
  EXPECT_EQ(st.step, 2u);
  EXPECT_TRUE((p.array() == 1.5).all());
}

TEST(Adam, NonFiniteGradientThrows) {
  Matrix p = Matrix::Zero(1, 2);
  std::vector<Matrix*> params{&p};
  Matrix g(1, 2);
  g << 1.0, std::nan("");
  std::vector<Matrix> grads{g};
  OptimizerState st;
  EXPECT_THROW(adam_step(params, grads, st, TrainConfig{}), NumericError);
  EXPECT_TRUE((p.array() == 0).all());
  std::vector<Matrix> wrong{Matrix::Zero(2, 2)};
  EXPECT_THROW(adam_step(params, wrong, st, TrainConfig{}), ConfigError);
}

TEST(IntraLoss, IdentityWithoutNoiseHasNoDistortion) {
  const auto layout = StageLayout::scaled(kL);
  FlowModel flow(layout, kC, small_flow());
  flow.initialize(1);
  const auto models = uniform_models(layout);
  const auto codes = uniform_codes(6, -3.0, 3.0, 2);
  TrainConfig cfg;
  cfg.zero_noise = true;
  std::mt19937_64 rng(0);
  const auto terms = intra_loss<UniformModel>(codes, flow, models, cfg, rng);
  EXPECT_EQ(terms.distortion, 0.0);
}

TEST(IntraLoss, UniformModelCostsThreeBitsPerValue) {
  const auto layout = StageLayout::scaled(kL);
  FlowModel flow(layout, kC, small_flow());
  flow.initialize(1);
  const auto models = uniform_models(layout);
  const auto codes = uniform_codes(5, -3.0, 3.0, 3);
  TrainConfig cfg;
  cfg.lambda = 0.25;
  cfg.pixels_per_frame = 100.0;
  std::mt19937_64 rng(4);
  const auto terms = intra_loss<UniformModel>(codes, flow, models, cfg, rng);
  EXPECT_NEAR(terms.rate_bits, 3.0 * kL * kC, 1e-9);
  EXPECT_EQ(terms.clamped, 0u);
  // loss = R / P + lambda * weighted SSE, with distortion = weighted SSE / (L C)
  EXPECT_NEAR(terms.loss, terms.rate_bits / 100.0 + 0.25 * terms.distortion * kL * kC, 1e-9);
}

TEST(IntraLoss, NoiseOnlyDistortionIsOneTwelfth) {
  const auto layout = StageLayout::single(kL);
  FlowModel flow(layout, kC, small_flow());
  flow.initialize(5);
  const auto models = uniform_models(layout);
  const auto codes = uniform_codes(256, -3.0, 3.0, 6);
  TrainConfig cfg;
  std::mt19937_64 rng(7);
  const auto terms = intra_loss<UniformModel>(codes, flow, models, cfg, rng);
  EXPECT_NEAR(terms.distortion, 1.0 / 12.0, 0.002);
}

TEST(IntraLoss, LayerWeightsScaleTheDistortion) {
  const auto layout = StageLayout::single(kL);
  FlowModel flow(layout, kC, small_flow());
  flow.initialize(5);
  const auto models = uniform_models(layout);
  const auto codes = uniform_codes(8, -3.0, 3.0, 6);
  TrainConfig a, b;
  b.layer_weights.assign(kL, 2.0);
  std::mt19937_64 r1(9), r2(9);
  const auto ta = intra_loss<UniformModel>(codes, flow, models, a, r1);
  const auto tb = intra_loss<UniformModel>(codes, flow, models, b, r2);
  EXPECT_NEAR(tb.distortion, 2.0 * ta.distortion, 1e-12);
  TrainConfig bad;
  bad.layer_weights.assign(kL + 1, 1.0);
  EXPECT_THROW(intra_loss<UniformModel>(codes, flow, models, bad, r1), ConfigError);
}

TEST(IntraLoss, ModelCountMustMatchStages) {
  const auto layout = StageLayout::scaled(kL);
  FlowModel flow(layout, kC, small_flow());
  std::vector<UniformModel> one{UniformModel(kC)};
  const auto codes = uniform_codes(2, -1, 1, 1);
  std::mt19937_64 rng(0);
  EXPECT_THROW(intra_loss<UniformModel>(codes, flow, one, TrainConfig{}, rng), ConfigError);
  EXPECT_THROW(intra_loss<UniformModel>({}, flow, uniform_models(layout), TrainConfig{}, rng), ConfigError);
}

TEST(InterLoss, TwoFrameWindowWithoutNoiseIsExact) {
  const auto layout = StageLayout::scaled(kL);
  FlowModel flow(layout, kC, small_flow());
  flow.randomize(3, 0.2);
  const auto models = uniform_models(layout);
  const auto codes = uniform_codes(8, -1.0, 1.0, 8);
  std::vector<std::vector<LatentCode>> windows;
  for (std::size_t i = 0; i + 1 < codes.size(); i += 2) windows.push_back({codes[i], codes[i + 1]});
  TrainConfig cfg;
  cfg.zero_noise = true;
  std::mt19937_64 rng(0);
  const auto terms = inter_loss<UniformModel>(windows, flow, models, cfg, rng);
  EXPECT_NEAR(terms.distortion, 0.0, 1e-20);
}

TEST(InterLoss, ConstantWindowCostsOnlyTheNoise) {
  const auto layout = StageLayout::scaled(kL);
  FlowModel flow(layout, kC, small_flow());
  flow.initialize(2);
  const auto models = uniform_models(layout);
  const auto code = uniform_codes(1, -2.0, 2.0, 4).front();
  const std::vector<std::vector<LatentCode>> windows(3, std::vector<LatentCode>(4, code));
  TrainConfig cfg;
  cfg.zero_noise = true;
  std::mt19937_64 rng(1);
  const auto quiet = inter_loss<UniformModel>(windows, flow, models, cfg, rng);
  EXPECT_EQ(quiet.distortion, 0.0);
  // every difference is zero; under U[-4,4] it costs 3 bits either way
  EXPECT_NEAR(quiet.rate_bits, 3.0 * kL * kC, 1e-9);
  cfg.zero_noise = false;
  const auto noisy = inter_loss<UniformModel>(windows, flow, models, cfg, rng);
  EXPECT_GT(noisy.distortion, 0.0);
}

TEST(InterLoss, L1TermAddsAbsoluteDifferences) {
  const auto layout = StageLayout::scaled(kL);
  FlowModel flow(layout, kC, small_flow());
  flow.initialize(2);  // identity, so mapped differences are latent differences
  const auto models = uniform_models(layout);
  const auto codes = uniform_codes(6, -2.0, 2.0, 11);
  const std::vector<std::vector<LatentCode>> windows{{codes[0], codes[1], codes[2]}, {codes[3], codes[4], codes[5]}};
  double l1 = 0;
  for (const auto& w : windows)
    for (std::size_t f = 1; f < w.size(); ++f) l1 += (w[f].data() - w[f - 1].data()).cwiseAbs().sum();
  l1 /= static_cast<double>(windows.size());
  TrainConfig a, b;
  b.lambda_l1 = 0.05;
  std::mt19937_64 r1(4), r2(4);
  const auto ta = inter_loss<UniformModel>(windows, flow, models, a, r1);
  const auto tb = inter_loss<UniformModel>(windows, flow, models, b, r2);
  EXPECT_NEAR(tb.loss - ta.loss, 0.05 * l1, 1e-9);
  EXPECT_GT(tb.loss, ta.loss);
}

TEST(InterLoss, RejectsRaggedWindows) {
  const auto layout = StageLayout::scaled(kL);
  FlowModel flow(layout, kC, small_flow());
  const auto models = uniform_models(layout);
  const auto codes = uniform_codes(5, -1, 1, 1);
  std::mt19937_64 rng(0);
  const std::vector<std::vector<LatentCode>> ragged{{codes[0], codes[1]}, {codes[2], codes[3], codes[4]}};
  EXPECT_THROW(inter_loss<UniformModel>(ragged, flow, models, TrainConfig{}, rng), ConfigError);
  const std::vector<std::vector<LatentCode>> single{{codes[0]}};
  EXPECT_THROW(inter_loss<UniformModel>(single, flow, models, TrainConfig{}, rng), ConfigError);
}

TEST(Train, SameSeedReplaysExactly) {
  const auto data = small_videos(3, 10, 1);
  const auto layout = StageLayout::scaled(kL);
  TrainConfig cfg;
  cfg.steps = 15;
  cfg.batch_size = 3;
  cfg.learning_rate = 1e-3;
  cfg.seed = 42;
  auto a = make_models(layout, kC, small_flow(), 42);
  auto b = make_models(layout, kC, small_flow(), 42);
  const auto ta = train(data, TrainMode::Inter, a.flow, a.entropy, cfg);
  const auto tb = train(data, TrainMode::Inter, b.flow, b.entropy, cfg);
  EXPECT_EQ(ta.csv(), tb.csv());
  EXPECT_EQ(serialize_flow(a.flow), serialize_flow(b.flow));
  EXPECT_EQ(serialize_entropy(a.entropy), serialize_entropy(b.entropy));

  auto c = make_models(layout, kC, small_flow(), 42);
  cfg.seed = 43;
  const auto tc = train(data, TrainMode::Inter, c.flow, c.entropy, cfg);
  EXPECT_NE(ta.csv(), tc.csv());
}

TEST(Train, IntraLossDecreases) {
  auto spec = SynthSpec::standard(kL, kC, 5);
  spec.rho = 0.0;
  spec.frames = 200;
  const std::vector<LatentSequence> data{gen_video(spec)};
  const auto layout = StageLayout::scaled(kL);
  auto m = make_models(layout, kC, small_flow(), 5);
  TrainConfig cfg;
  cfg.steps = 200;
  cfg.learning_rate = 3e-3;
  cfg.pixels_per_frame = 256;
  cfg.lambda = 0.01;
  const auto trace = train(data, TrainMode::Intra, m.flow, m.entropy, cfg);
  ASSERT_EQ(trace.rows.size(), 200u);
  double head = 0, tail = 0;
  for (std::size_t i = 0; i < 20; ++i) {
    head += trace.rows[i].terms.loss;
    tail += trace.rows[180 + i].terms.loss;
  }
  EXPECT_LT(tail, 0.9 * head);
}

TEST(Train, FrozenFlowIsUntouched) {
  const auto data = small_videos(2, 6, 3);
  const auto layout = StageLayout::scaled(kL);
  auto m = make_models(layout, kC, small_flow(), 3);
  m.flow.randomize(3, 0.1);
  const auto before = serialize_flow(m.flow);
  const auto ent_before = serialize_entropy(m.entropy);
  TrainConfig cfg;
  cfg.steps = 5;
  cfg.freeze_flow = true;
  cfg.learning_rate = 1e-2;
  train(data, TrainMode::Intra, m.flow, m.entropy, cfg);
  EXPECT_EQ(serialize_flow(m.flow), before);
  EXPECT_NE(serialize_entropy(m.entropy), ent_before);
}

TEST(Train, DivergenceAbortsWithTraceAndSnapshot) {
  const auto data = small_videos(1, 5, 3);
  const auto layout = StageLayout::scaled(kL);
  auto m = make_models(layout, kC, small_flow(), 3);
  TrainConfig cfg;
  cfg.steps = 10;
  cfg.divergence_limit = 1e-9;
  try {
    train(data, TrainMode::Intra, m.flow, m.entropy, cfg);
    FAIL() << "expected TrainingAborted";
  } catch (const TrainingAborted& e) {
    EXPECT_EQ(e.trace().rows.size(), 1u);
    EXPECT_FALSE(e.snapshot().empty());
    EXPECT_NE(std::string(e.what()).find("step 0"), std::string::npos);
  }
}

TEST(Train, RejectsMismatchedData) {
  const auto layout = StageLayout::scaled(kL);
  auto m = make_models(layout, kC, small_flow(), 3);
  auto spec = SynthSpec::standard(kL, kC + 1, 1);
  const std::vector<LatentSequence> wrong{gen_video(spec)};
  EXPECT_THROW(train(wrong, TrainMode::Intra, m.flow, m.entropy, TrainConfig{}), ConfigError);
  const auto shorts = small_videos(2, 3, 1);
  TrainConfig cfg;
  cfg.window = 4;
  EXPECT_THROW(train(shorts, TrainMode::Inter, m.flow, m.entropy, cfg), ConfigError);
  EXPECT_THROW(train({}, TrainMode::Intra, m.flow, m.entropy, cfg), ConfigError);
}

TEST(Train, TraceCsvHeader) {
  TrainTrace t;
  t.rows.push_back({0, {1.5, 0.25, 2.0, 0}});
  EXPECT_EQ(t.csv(), "step,rate_bits,distortion,loss\n0,1.5,0.25,2\n");
}
