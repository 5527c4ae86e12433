#include "secdiff/denoiser.hpp"

#include <gtest/gtest.h>

using namespace secdiff;

namespace {

DenoiserSpec tiny_spec(Backbone b = Backbone::unet) {
  DenoiserSpec s;
  s.M = 2;
  s.K = 1;
  s.L = 1;
  s.J = 1;
  s.channels = {8, 16};
  s.n_conv = {1, 1};
  s.n_attn = {1, 1};
  s.kernel = {3, 3};
  s.seq_len = DenoiserSpec::ladder_for(s.positions(), 2);
  s.cond_dim = 8;
  s.cond_tokens = 2;
  s.time_dim = 8;
  s.embed_hidden = 8;
  s.heads = 2;
  s.groups = 4;
  s.backbone = b;
  s.mlp_depth = 2;
  return s;
}

template <class T>
void randomize(Denoiser<T>& d, std::uint64_t seed, double scale = 0.3) {
  Rng rng(seed);
  for (auto& e : d.params().entries())
    for (Eigen::Index i = 0; i < e.var.value().size(); ++i) e.var.mutable_value().data()[i] = T(scale * normal(rng));
}

template <class T>
RowMat<T> random_rows(Eigen::Index r, Eigen::Index c, Rng& rng) {
  RowMat<T> m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = T(normal(rng));
  return m;
}

template <class T>
RowMat<T> run(const Denoiser<T>& d, const RowMat<T>& z, const std::vector<int>& t, const RowMat<T>& h) {
  ad::Tape<T> tp(false);
  const auto c = d.embed_channel(tp, tp.constant(h));
  return d.forward(tp, tp.constant(z), t, c).value();
}

}  // namespace

TEST(DenoiserSpec, PaperLadderAndValidation) {
  DenoiserSpec s;
  EXPECT_NO_THROW(s.validate());
  EXPECT_EQ(s.positions(), 64);
  EXPECT_EQ(s.input_dim(), 128);
  EXPECT_EQ(s.channel_input_dim(), 96);
  EXPECT_EQ(DenoiserSpec::ladder_for(64, 3), std::vector<int>({64, 16, 4}));
  EXPECT_EQ(DenoiserSpec::ladder_for(24, 3), std::vector<int>({32, 8, 2}));
  EXPECT_EQ(DenoiserSpec::ladder_for(5, 1), std::vector<int>({5}));
  DenoiserSpec bad = s;
  bad.seq_len = {64, 32, 4};
  EXPECT_THROW(bad.validate(), config_error);
  bad = s;
  bad.kernel = {3, 4, 3};
  EXPECT_THROW(bad.validate(), config_error);
  bad = s;
  bad.cond_tokens = 3;
  EXPECT_THROW(bad.validate(), config_error);
  bad = s;
  bad.M = 16;
  EXPECT_THROW(bad.validate(), config_error);
  bad = s;
  bad.channels = {64, 128};
  EXPECT_THROW(bad.validate(), config_error);
}

TEST(DenoiserSpec, JsonRoundTrip) {
  DenoiserSpec s = tiny_spec(Backbone::mlp);
  s.mlp_width = 77;
  const DenoiserSpec b = nlohmann::json(s).get<DenoiserSpec>();
  EXPECT_EQ(nlohmann::json(b), nlohmann::json(s));
  EXPECT_THROW(backbone_from_string("resnet"), config_error);
}

TEST(Complexity, PaperConfiguration) {
  const ComplexityEstimate e = complexity_estimate(DenoiserSpec{});
  EXPECT_EQ(e.conv_terms, 14155776.0);
  EXPECT_EQ(e.attn_terms, 2.0 * (64 * 64 * 64 + 64 * 64 * 64) + 2.0 * (16 * 16 * 128 + 16 * 128 * 128) +
                              2.0 * (4 * 4 * 256 + 4 * 256 * 256));
  EXPECT_EQ(e.training_total(2, 3), 6 * e.per_step());
  EXPECT_EQ(e.inference_total(50), 50 * e.per_step());
}

TEST(Complexity, UnitCase) {
  DenoiserSpec s;
  s.M = 1;
  s.K = 1;
  s.L = 0;
  s.J = 0;
  s.seq_len = {1};
  s.channels = {1};
  s.n_conv = {1};
  s.n_attn = {1};
  s.kernel = {1};
  const ComplexityEstimate e = complexity_estimate(s);
  EXPECT_EQ(e.conv_terms, 1.0);
  EXPECT_EQ(e.attn_terms, 2.0);
}

TEST(Denoiser, OutputShapeAndZeroInit) {
  for (Backbone b : {Backbone::unet, Backbone::mlp}) {
    const Denoiser<double> d(tiny_spec(b), 3);
    Rng rng(80);
    const auto z = random_rows<double>(5, d.spec().input_dim(), rng);
    const auto h = random_rows<double>(5, d.spec().channel_input_dim(), rng);
    const RowMat<double> y = run(d, z, {1, 2, 3, 4, 5}, h);
    EXPECT_EQ(y.rows(), 5);
    EXPECT_EQ(y.cols(), d.spec().input_dim());
    EXPECT_TRUE(y.isZero(0)) << to_string(b);
  }
}

TEST(Denoiser, RejectsBadShapes) {
  const Denoiser<double> d(tiny_spec(), 3);
  ad::Tape<double> tp(false);
  const auto c = d.embed_channel(tp, tp.constant(RowMat<double>::Zero(2, d.spec().channel_input_dim())));
  EXPECT_THROW(d.forward(tp, tp.constant(RowMat<double>::Zero(2, 5)), {1, 1}, c), std::invalid_argument);
  EXPECT_THROW(d.forward(tp, tp.constant(RowMat<double>::Zero(2, d.spec().input_dim())), {1}, c),
               std::invalid_argument);
  EXPECT_THROW(d.embed_channel(tp, tp.constant(RowMat<double>::Zero(2, 3))), std::invalid_argument);
  EXPECT_THROW(d.embed_time(tp, {0}), std::out_of_range);
}

TEST(Denoiser, DeterministicPerSeed) {
  const Denoiser<float> a(tiny_spec(), 9), b(tiny_spec(), 9), c(tiny_spec(), 10);
  ASSERT_EQ(a.parameter_count(), c.parameter_count());
  bool differs = false;
  for (std::size_t i = 0; i < a.params().entries().size(); ++i) {
    EXPECT_TRUE(a.params().entries()[i].var.value() == b.params().entries()[i].var.value());
    differs |= a.params().entries()[i].var.value() != c.params().entries()[i].var.value();
  }
  EXPECT_TRUE(differs);
}

TEST(Denoiser, SamplesInBatchAreIndependent) {
  for (Backbone bb : {Backbone::unet, Backbone::mlp}) {
    Denoiser<double> d(tiny_spec(bb), 4);
    randomize(d, 81);
    Rng rng(82);
    const auto z = random_rows<double>(4, d.spec().input_dim(), rng);
    const auto h = random_rows<double>(4, d.spec().channel_input_dim(), rng);
    const std::vector<int> t{3, 9, 1, 40};
    const RowMat<double> all = run(d, z, t, h);
    for (int r = 0; r < 4; ++r) {
      const RowMat<double> one = run(d, RowMat<double>(z.row(r)), {t[r]}, RowMat<double>(h.row(r)));
      EXPECT_LT((one.row(0) - all.row(r)).norm(), 1e-10 * (1 + all.row(r).norm()));
    }
  }
}

TEST(Denoiser, ConditionAndTimeMatter) {
  Denoiser<double> d(tiny_spec(), 5);
  randomize(d, 83);
  Rng rng(84);
  const auto z = random_rows<double>(1, d.spec().input_dim(), rng);
  const auto h1 = random_rows<double>(1, d.spec().channel_input_dim(), rng);
  const auto h2 = random_rows<double>(1, d.spec().channel_input_dim(), rng);
  const RowMat<double> base = run(d, z, {10}, h1);
  EXPECT_GT((base - run(d, z, {10}, h2)).norm(), 1e-6);
  EXPECT_GT((base - run(d, z, {11}, h1)).norm(), 1e-6);
}

TEST(Denoiser, GradientMatchesFiniteDifferences) {
  for (Backbone bb : {Backbone::unet, Backbone::mlp}) {
    Denoiser<double> d(tiny_spec(bb), 6);
    randomize(d, 85);
    Rng rng(86);
    const auto z = random_rows<double>(2, d.spec().input_dim(), rng);
    const auto h = random_rows<double>(2, d.spec().channel_input_dim(), rng);
    const auto target = random_rows<double>(2, d.spec().input_dim(), rng);
    const std::vector<int> t{7, 30};
    auto loss = [&](ad::Tape<double>& tp) {
      const auto c = d.embed_channel(tp, tp.constant(h));
      return tp.mean_row_sq_error(d.forward(tp, tp.constant(z), t, c), target);
    };
    d.params().zero_grad();
    {
      ad::Tape<double> tp(true);
      tp.backward(loss(tp));
    }
    double worst = 0.0;
    Rng pick(87);
    for (auto& e : d.params().entries()) {
      for (int trial = 0; trial < 3; ++trial) {
        const Eigen::Index i = std::uniform_int_distribution<Eigen::Index>(0, e.var.value().size() - 1)(pick);
        double& w = e.var.mutable_value().data()[i];
        const double keep = w, h_step = 1e-5;
        ad::Tape<double> tp(false);
        w = keep + h_step;
        const double fp = loss(tp).value()(0, 0);
        w = keep - h_step;
        const double fm = loss(tp).value()(0, 0);
        w = keep;
        const double fd = (fp - fm) / (2 * h_step);
        const double g = e.var.has_grad() ? e.var.grad().data()[i] : 0.0;
        worst = std::max(worst, std::abs(fd - g) / std::max(1e-3, std::abs(fd)));
      }
    }
    EXPECT_LT(worst, 1e-4) << to_string(bb);
  }
}

TEST(Denoiser, PaddingPositionsDoNotLeak) {
  // positions = 6 padded to 16: outputs depend only on real entries, and
  // the map back drops padded rows, so the output has exactly D columns.
  DenoiserSpec s = tiny_spec();
  s.M = 3;
  s.seq_len = DenoiserSpec::ladder_for(s.positions(), 2);
  ASSERT_EQ(s.seq_len[0], 8);
  Denoiser<double> d(s, 7);
  randomize(d, 88);
  Rng rng(89);
  const auto z = random_rows<double>(1, s.input_dim(), rng);
  const auto h = random_rows<double>(1, s.channel_input_dim(), rng);
  EXPECT_EQ(run(d, z, {5}, h).cols(), s.input_dim());
}

TEST(Denoiser, MlpParameterCountMatchesUnet) {
  DenoiserSpec s;
  s.M = 4;
  s.K = 2;
  s.L = 2;
  s.J = 2;
  s.channels = {32, 64, 128};
  s.seq_len = DenoiserSpec::ladder_for(s.positions(), 3);
  s.cond_dim = 128;
  s.time_dim = 64;
  s.embed_hidden = 128;
  const Denoiser<float> u(s, 1);
  s.backbone = Backbone::mlp;
  const Denoiser<float> m(s, 1);
  const double ratio = double(m.parameter_count()) / double(u.parameter_count());
  EXPECT_GT(ratio, 0.9);
  EXPECT_LT(ratio, 1.1);
  EXPECT_GT(m.spec().mlp_width, 0);
}
