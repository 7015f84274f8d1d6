#include <gtest/gtest.h>

#include "sganc/flow.hpp"

using namespace sganc;

namespace {

Matrix random_code(Eigen::Index l, Eigen::Index c, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  Matrix m(l, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

double max_abs(const Matrix& a, const Matrix& b) { return (a - b).cwiseAbs().maxCoeff(); }

FlowConfig small_config(std::size_t layers = 4, FlowGranularity g = FlowGranularity::RowShared) {
  FlowConfig c;
  c.coupling_layers = layers;
  c.granularity = g;
  return c;
}

}  // namespace

TEST(Coupling, ZeroScaleConstantShiftAddsToActiveOnly) {
  auto layer = CouplingLayer::make(6, 6, 0);
  layer.translate_net.l2.bias.setConstant(0.75);
  const Matrix x = Matrix::Constant(1, 6, 2.0);
  const Matrix y = coupling_apply(x, layer, Direction::Forward);
  for (Eigen::Index i = 0; i < 6; ++i) {
    const bool passive = layer.mask(0, i) == 1.0;
    EXPECT_DOUBLE_EQ(y(0, i), passive ? 2.0 : 2.75) << i;
  }
}

TEST(Coupling, ZeroOutputLayersGiveIdentity) {
  std::mt19937_64 rng(1);
  FlowModel flow(StageLayout::single(1), 8, small_config(1));
  flow.initialize(3);
  const auto& layer = flow.stage(0).layers().front();
  const Matrix x = random_code(5, 8, rng);
  EXPECT_EQ(coupling_apply(x, layer, Direction::Forward), x);
  EXPECT_EQ(coupling_apply(x, layer, Direction::Inverse), x);
}

TEST(Coupling, RandomWeightsInvertToTenDigits) {
  std::mt19937_64 rng(2);
  FlowModel flow(StageLayout::single(1), 10, small_config(1));
  flow.randomize(5, 0.5);
  const auto& layer = flow.stage(0).layers().front();
  for (int trial = 0; trial < 20; ++trial) {
    const Matrix x = random_code(3, 10, rng, 2.0);
    const Matrix back = coupling_apply(coupling_apply(x, layer, Direction::Forward), layer, Direction::Inverse);
    EXPECT_LE(max_abs(back, x), 1e-10);
  }
}

TEST(Coupling, MasksAlternate) {
  const auto a = CouplingLayer::make(5, 5, 0);
  const auto b = CouplingLayer::make(5, 5, 1);
  EXPECT_EQ(a.mask + b.mask, Matrix::Ones(1, 5));
  EXPECT_GT(a.mask.sum(), 0);
  EXPECT_LT(a.mask.sum(), 5);
  EXPECT_THROW(CouplingLayer::make(1, 4, 0), ConfigError);
}

TEST(Coupling, NonFiniteNamesTheLayer) {
  FlowModel flow(StageLayout::single(1), 4, small_config(3));
  flow.initialize(1);
  for (auto& l : flow.stage(0).layers()) {
    l.scale_net.l0.weight.setZero();
    l.translate_net.l0.weight.setZero();
  }
  flow.stage(0).layers()[2].translate_net.l2.bias.setConstant(1e308);
  const LatentCode w(Matrix::Constant(1, 4, 1e308));
  try {
    flow_forward(w, flow);
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("layer 2"), std::string::npos) << e.what();
  }
  EXPECT_THROW(coupling_apply(Matrix::Constant(1, 4, std::nan("")), flow.stage(0).layers()[0], Direction::Forward),
               NumericError);
}

TEST(Flow, FullShapeIsPreserved) {
  std::mt19937_64 rng(3);
  FlowModel flow(StageLayout::full(), 512, small_config(2));
  flow.randomize(7, 0.1);
  const LatentCode w(random_code(18, 512, rng));
  const auto y = flow_forward(w, flow);
  EXPECT_EQ(y.layers(), 18u);
  EXPECT_EQ(y.channels(), 512u);
}

TEST(Flow, IdentityAtInitialization) {
  std::mt19937_64 rng(4);
  FlowModel flow(StageLayout::scaled(4), 32, FlowConfig{});
  flow.initialize(11);
  const LatentCode w(random_code(4, 32, rng));
  EXPECT_TRUE(flow_forward(w, flow) == w);
  EXPECT_TRUE(flow_inverse(w, flow) == w);
}

TEST(Flow, ShapeMismatchIsConfigError) {
  FlowModel flow(StageLayout::scaled(4), 32, small_config());
  EXPECT_THROW(flow_forward(LatentCode(4, 16), flow), ConfigError);
  EXPECT_THROW(flow_inverse(LatentCode(5, 32), flow), ConfigError);
}

class FlowBijectivity : public ::testing::TestWithParam<FlowGranularity> {};

TEST_P(FlowBijectivity, BothCompositionsRecoverTheInput) {
  std::mt19937_64 rng(5);
  FlowModel flow(StageLayout::scaled(4), 32, small_config(13, GetParam()));
  flow.randomize(19, 0.3);
  double worst_fi = 0, worst_if = 0;
  for (int trial = 0; trial < 50; ++trial) {
    const LatentCode w(random_code(4, 32, rng, 1.5));
    worst_fi = std::max(worst_fi, max_abs(flow_inverse(flow_forward(w, flow), flow).data(), w.data()));
    worst_if = std::max(worst_if, max_abs(flow_forward(flow_inverse(w, flow), flow).data(), w.data()));
  }
  EXPECT_LE(worst_fi, 1e-8);
  EXPECT_LE(worst_if, 1e-8);
}

INSTANTIATE_TEST_SUITE_P(Granularity, FlowBijectivity,
                         ::testing::Values(FlowGranularity::RowShared, FlowGranularity::Flattened));

TEST(Flow, RandomizedTransformIsNotIdentity) {
  std::mt19937_64 rng(6);
  FlowModel flow(StageLayout::scaled(4), 32, small_config());
  flow.randomize(2, 0.3);
  const LatentCode w(random_code(4, 32, rng));
  EXPECT_GT(max_abs(flow_forward(w, flow).data(), w.data()), 1e-3);
}

TEST(Flow, RowSharedAppliesTheSameMapToEveryRow) {
  std::mt19937_64 rng(7);
  FlowModel flow(StageLayout::single(3), 8, small_config());
  flow.randomize(4, 0.3);
  Matrix row = random_code(1, 8, rng);
  const LatentCode w(row.replicate(3, 1));
  const auto y = flow_forward(w, flow).data();
  EXPECT_EQ(y.row(0), y.row(1));
  EXPECT_EQ(y.row(0), y.row(2));
}

TEST(Flow, ParameterCountMatchesArchitecture) {
  // per coupling layer: two nets of FC(C,H) FC(H,H) FC(H,C) with biases
  const std::size_t c = 32, h = 16, k = 5;
  FlowConfig cfg = small_config(k);
  cfg.hidden = h;
  FlowModel flow(StageLayout::scaled(4), c, cfg);
  const std::size_t per_net = (c * h + h) + (h * h + h) + (h * c + c);
  EXPECT_EQ(flow.parameter_count(), 3 * k * 2 * per_net);
}

TEST(Flow, SerializationRoundtripIsExact) {
  std::mt19937_64 rng(8);
  FlowModel flow(StageLayout::scaled(4), 32, small_config(3));
  flow.randomize(9, 0.2);
  const auto bytes = serialize_flow(flow);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "SGFW");
  const auto back = parse_flow(bytes);
  EXPECT_EQ(serialize_flow(back), bytes);
  const LatentCode w(random_code(4, 32, rng));
  EXPECT_TRUE(flow_forward(w, back) == flow_forward(w, flow));
}

TEST(Flow, ParseRejectsBadFiles) {
  FlowModel flow(StageLayout::scaled(4), 32, small_config(1));
  auto bytes = serialize_flow(flow);
  auto v = bytes;
  v[4] = 7;
  EXPECT_THROW(parse_flow(v), UnsupportedVersion);
  auto cut = bytes;
  cut.resize(cut.size() - 1);
  EXPECT_THROW(parse_flow(cut), FormatError);
  auto extra = bytes;
  extra.push_back(1);
  EXPECT_THROW(parse_flow(extra), FormatError);
}

TEST(Flow, Deterministic) {
  std::mt19937_64 rng(9);
  FlowModel a(StageLayout::scaled(4), 32, small_config(3)), b(StageLayout::scaled(4), 32, small_config(3));
  a.randomize(1, 0.3);
  b.randomize(1, 0.3);
  const LatentCode w(random_code(4, 32, rng));
  EXPECT_TRUE(flow_forward(w, a) == flow_forward(w, b));
}
