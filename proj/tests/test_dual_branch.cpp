#include <algorithm>
#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "mirrorfusion/checkpoint.hpp"
#include "mirrorfusion/dual_branch.hpp"
#include "support/gradcheck.hpp"

namespace {

using mf::testing::tiny_config;

mf::LatentTensor random_latent(int h, int w, int c, std::mt19937_64& rng) {
  return mf::gaussian_like<float>(h, w, c, rng);
}

mf::ConditionBundle random_condition(int h, int w, int c, std::mt19937_64& rng) {
  mf::ConditionBundle b;
  b.z_m = random_latent(h, w, c, rng);
  b.x_m = mf::FloatMap(h, w, 1);
  b.x_d = mf::FloatMap(h, w, 1);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  for (float& v : b.x_m.values()) v = u(rng);
  for (float& v : b.x_d.values()) v = 2.0f * u(rng) - 1.0f;
  return b;
}

TEST(DualBranch, InjectorsAndExtraChannelsStartAtZero) {
  auto m = mf::DualBranchModel<float>::build(tiny_config(), 1);
  ASSERT_EQ(static_cast<int>(m.injectors().size()), mf::nn::injection_point_count(2));
  for (auto& z : m.injectors()) {
    EXPECT_EQ(z.weight.value.cwiseAbs().maxCoeff(), 0.0f);
    EXPECT_EQ(z.bias.value.cwiseAbs().maxCoeff(), 0.0f);
  }
  const auto& w = m.conditioning().conv_in.weight.value;
  const int c = m.config().latent_channels, cin = m.config().in_channels_conditioning();
  ASSERT_EQ(cin, 2 * c + 2);
  for (int k = 0; k < 9; ++k) {
    for (int ch : {2 * c, 2 * c + 1}) EXPECT_EQ(w.row(k * cin + ch).cwiseAbs().maxCoeff(), 0.0f);
    // noisy-latent rows are cloned from the generation branch
    EXPECT_EQ(w.row(k * cin + 3), m.generation().conv_in.weight.value.row(k * c + 3));
  }
}

TEST(DualBranch, ConditioningIsACloneWithoutCrossAttention) {
  auto m = mf::DualBranchModel<float>::build(tiny_config(), 2);
  std::map<std::string, mf::nn::Mat<float>> gen;
  m.generation().visit([&](mf::nn::Param<float>& p) { gen[p.name.substr(p.name.find('.'))] = p.value; });
  int cloned = 0;
  m.conditioning().visit([&](mf::nn::Param<float>& p) {
    EXPECT_EQ(p.name.find("cross"), std::string::npos) << p.name;
    const auto it = gen.find(p.name.substr(p.name.find('.')));
    ASSERT_NE(it, gen.end()) << p.name;
    if (p.name.find("conv_in.weight") == std::string::npos) {
      EXPECT_EQ(p.value, it->second) << p.name;
      ++cloned;
    }
  });
  EXPECT_GT(cloned, 10);
  int gen_cross = 0;
  m.generation().visit([&](mf::nn::Param<float>& p) { gen_cross += p.name.find("cross") != std::string::npos; });
  EXPECT_GT(gen_cross, 0);
}

TEST(DualBranch, SameSeedSameParameters) {
  auto a = mf::DualBranchModel<float>::build(tiny_config(), 9);
  auto b = mf::DualBranchModel<float>::build(tiny_config(), 9);
  std::vector<mf::nn::Mat<float>> pa, pb;
  a.visit([&](mf::nn::Param<float>& p) { pa.push_back(p.value); });
  b.visit([&](mf::nn::Param<float>& p) { pb.push_back(p.value); });
  ASSERT_EQ(pa.size(), pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) EXPECT_EQ(pa[i], pb[i]);
}

TEST(DualBranch, ZeroInitJointEqualsGenerationOnly) {
  auto m = mf::DualBranchModel<float>::build(tiny_config(), 3);
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 5; ++trial) {
    const auto z = random_latent(8, 8, 48, rng);
    const auto cond = random_condition(8, 8, 48, rng);
    const auto text = m.embed_prompt("a chair", false);
    const auto joint = m.forward_joint(z, cond, 100 * trial, text);
    const auto gen = m.forward_generation(z, 100 * trial, text);
    EXPECT_LT(mf::max_abs_diff(joint, gen), 1e-6);
  }
}

mf::UNetConfig skip_config(bool learned) {
  auto c = tiny_config();
  c.skip_data_std = 0.5;
  c.learned_skip = learned;
  return c;
}

TEST(DualBranch, FixedSkipAddsLeastSquaresNoiseEstimate) {
  // Same seed, same weights: the learned gate starts at zero and draws nothing from the rng.
  auto fixed = mf::DualBranchModel<float>::build(skip_config(false), 8);
  auto learned = mf::DualBranchModel<float>::build(skip_config(true), 8);
  const auto sched = mf::make_schedule(mf::kTrainTimesteps, mf::ScheduleKind::linear);
  std::mt19937_64 rng(9);
  const auto text = fixed.embed_prompt("a mirror", false);
  for (int t : {0, 400, 999}) {
    const auto z = random_latent(8, 8, 48, rng);
    const auto a = fixed.forward_generation(z, t, text);
    const auto b = learned.forward_generation(z, t, text);
    const double ab = sched.alpha_bar[t];
    const double skip = std::sqrt(1.0 - ab) / (0.25 * ab + 1.0 - ab);
    double worst = 0.0;
    for (std::size_t i = 0; i < z.values().size(); ++i) {
      worst = std::max(worst, std::abs(a.values()[i] - b.values()[i] - skip * z.values()[i]));
    }
    EXPECT_LT(worst, 1e-5) << "t=" << t;
  }
}

TEST(DualBranch, ZeroInitHoldsWithLearnedSkip) {
  auto m = mf::DualBranchModel<float>::build(skip_config(true), 10);
  std::mt19937_64 rng(11);
  const auto z = random_latent(8, 8, 48, rng);
  const auto cond = random_condition(8, 8, 48, rng);
  const auto text = m.embed_prompt("a sofa", false);
  EXPECT_LT(mf::max_abs_diff(m.forward_joint(z, cond, 700, text), m.forward_generation(z, 700, text)), 1e-6);
}

TEST(DualBranch, SkipSettingsSurviveJson) {
  auto c = skip_config(true);
  c.schedule = mf::ScheduleKind::cosine;
  const auto back = nlohmann::json(c).get<mf::UNetConfig>();
  EXPECT_EQ(back.skip_data_std, 0.5);
  EXPECT_TRUE(back.learned_skip);
  EXPECT_EQ(back.schedule, mf::ScheduleKind::cosine);
  c.skip_data_std = -1.0;
  EXPECT_THROW(c.validate(), mf::InvalidArgument);
}

TEST(DualBranch, PreservationScaleZeroIgnoresConditioning) {
  auto m = mf::DualBranchModel<double>::build(tiny_config(), 5);
  mf::testing::perturb_zero_initialized(m, 6);
  std::mt19937_64 rng(7);
  const auto z = random_latent(8, 8, 48, rng);
  const auto cond = random_condition(8, 8, 48, rng);
  const auto text = m.embed_prompt("", false);
  m.set_preservation_scale(0.0);
  const auto base = m.forward_joint(z, cond, 10, text);
  m.conditioning().visit([](mf::nn::Param<double>& p) { p.value.array() += 0.3; });
  EXPECT_EQ(mf::max_abs_diff(m.forward_joint(z, cond, 10, text), base), 0.0);
  EXPECT_LT(mf::max_abs_diff(m.forward_generation(z, 10, text), base), 1e-6);
}

TEST(DualBranch, InjectedResidualIsLinearInScale) {
  auto m = mf::DualBranchModel<double>::build(tiny_config(), 8);
  mf::testing::perturb_zero_initialized(m, 9);
  std::mt19937_64 rng(10);
  const auto z = random_latent(8, 8, 48, rng);
  const auto cond = random_condition(8, 8, 48, rng);
  m.set_preservation_scale(1.0);
  const auto r1 = m.conditioning_residuals(z, cond, 50);
  m.set_preservation_scale(2.0);
  const auto r2 = m.conditioning_residuals(z, cond, 50);
  ASSERT_EQ(r1.size(), r2.size());
  for (std::size_t i = 0; i < r1.size(); ++i) {
    EXPECT_GT(r1[i].x.cwiseAbs().maxCoeff(), 0.0);
    EXPECT_LT((r2[i].x - 2.0 * r1[i].x).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(DualBranch, OutputShapeAndErrors) {
  auto m = mf::DualBranchModel<float>::build(tiny_config(), 11);
  std::mt19937_64 rng(12);
  const auto z = random_latent(8, 8, 48, rng);
  auto cond = random_condition(8, 8, 48, rng);
  const auto text = m.embed_prompt("box", false);
  const auto out = m.forward_joint(z, cond, 3, text);
  EXPECT_TRUE(out.same_shape(z));
  EXPECT_THROW(m.forward_joint(random_latent(8, 8, 47, rng), cond, 3, text), mf::ShapeError);
  auto missing = cond;
  missing.x_d = mf::FloatMap();
  EXPECT_THROW(m.forward_joint(z, missing, 3, text), mf::InvalidArgument);
  auto wrong = cond;
  wrong.x_m = mf::FloatMap(4, 4, 1);
  EXPECT_THROW(m.forward_joint(z, wrong, 3, text), mf::ShapeError);
}

TEST(DualBranch, InvalidConfig) {
  auto c = tiny_config();
  c.channel_multipliers = {1};
  EXPECT_THROW(mf::DualBranchModel<float>::build(c, 0), mf::InvalidArgument);
  c = tiny_config();
  c.attention_levels = {5};
  EXPECT_THROW(mf::DualBranchModel<float>::build(c, 0), mf::InvalidArgument);
}

TEST(TextEncoder, DeterministicAndNull) {
  const mf::TextEncoder enc(4096, 16, 8);
  const auto a = enc.embed("a red ball", false);
  const auto b = enc.embed("a red ball", false);
  EXPECT_EQ(a.tokens, b.tokens);
  EXPECT_EQ(a.vectors, b.vectors);
  EXPECT_EQ(a.tokens.size(), 3u);
  EXPECT_GT(a.vectors.cwiseAbs().maxCoeff(), 0.0);
  const auto null = enc.null_embedding();
  EXPECT_EQ(enc.embed("anything at all", true).vectors, null.vectors);
  EXPECT_TRUE(enc.embed("", false).is_null());
  EXPECT_EQ(enc.embed("", false).vectors, null.vectors);
  EXPECT_EQ(enc.embed("A  RED, ball!", false).tokens, a.tokens);
  EXPECT_EQ(enc.embed("one two three four five six seven eight nine ten", false).tokens.size(), 8u);
}

TEST(GradientCheck, ConditioningBranchSampled) {
  auto m = mf::DualBranchModel<double>::build(tiny_config(), 13);
  mf::testing::perturb_zero_initialized(m, 14);
  const auto fx = mf::testing::make_fixture(m, 8, 15);
  const auto r = mf::testing::check_gradients(m, fx, [&](const auto& f) { m.visit_conditioning(f); }, 7);
  EXPECT_GT(r.nonzero, r.checked / 2);
  EXPECT_LT(r.worst_rel, 1e-3) << r.describe();
}

TEST(GradientCheck, UnfrozenGenerationBranchSampled) {
  auto m = mf::DualBranchModel<double>::build(tiny_config(), 16);
  mf::testing::perturb_zero_initialized(m, 17);
  m.set_freeze_generation(false);
  const auto fx = mf::testing::make_fixture(m, 8, 18);
  const auto r = mf::testing::check_gradients(m, fx, [&](const auto& f) { m.generation().visit(f); }, 11);
  EXPECT_LT(r.worst_rel, 1e-3) << r.describe();
}

TEST(GradientCheck, LearnedSkipGenerationSampled) {
  auto m = mf::DualBranchModel<double>::build(skip_config(true), 23);
  mf::testing::perturb_zero_initialized(m, 24);
  // Nonzero gate so its path into the time embedding is exercised too.
  std::mt19937_64 rng(25);
  std::normal_distribution<double> n(0.0, 0.2);
  m.generation().visit([&](mf::nn::Param<double>& p) {
    if (p.name.find("skip_gate") == std::string::npos) return;
    for (Eigen::Index i = 0; i < p.value.size(); ++i) p.value.data()[i] = n(rng);
  });
  m.set_freeze_generation(false);
  const auto fx = mf::testing::make_fixture(m, 8, 26);
  std::size_t gate_checked = 0;
  m.generation().visit([&](mf::nn::Param<double>& p) { gate_checked += p.name.find("skip_gate") != std::string::npos; });
  ASSERT_EQ(gate_checked, 2u);
  const auto r = mf::testing::check_gradients(m, fx, [&](const auto& f) { m.generation().visit(f); }, 5);
  EXPECT_LT(r.worst_rel, 1e-3) << r.describe();
}

TEST(GradientCheck, FrozenGenerationAccumulatesNothing) {
  auto m = mf::DualBranchModel<double>::build(tiny_config(), 19);
  mf::testing::perturb_zero_initialized(m, 20);
  const auto fx = mf::testing::make_fixture(m, 8, 21);
  mf::testing::analytic_gradients(m, fx);
  m.generation().visit([](mf::nn::Param<double>& p) { EXPECT_EQ(p.grad.cwiseAbs().maxCoeff(), 0.0) << p.name; });
}

TEST(Checkpoint, RoundTripPreservesParameters) {
  auto m = mf::DualBranchModel<float>::build(tiny_config(), 22);
  m.injectors()[1].weight.value(0, 0) = 0.25f;
  const auto path = std::filesystem::temp_directory_path() / "mf_test_ckpt.bin";
  mf::save_checkpoint(path, m, {{"step", 7}});
  nlohmann::json meta;
  auto back = mf::load_checkpoint<float>(path, &meta);
  EXPECT_EQ(meta.at("step"), 7);
  std::vector<mf::nn::Mat<float>> pa, pb;
  m.visit([&](mf::nn::Param<float>& p) { pa.push_back(p.value); });
  back.visit([&](mf::nn::Param<float>& p) { pb.push_back(p.value); });
  ASSERT_EQ(pa.size(), pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) EXPECT_EQ(pa[i], pb[i]);
  EXPECT_EQ(back.config().base_channels, 8);
  std::filesystem::remove(path);
}

TEST(Checkpoint, RejectsGarbage) {
  const auto path = std::filesystem::temp_directory_path() / "mf_test_garbage.bin";
  {
    std::ofstream os(path, std::ios::binary);
    os << "not a checkpoint";
  }
  EXPECT_THROW(mf::load_checkpoint<float>(path), mf::IoError);
  EXPECT_THROW(mf::load_checkpoint<float>(path.string() + ".missing"), mf::IoError);
  std::filesystem::remove(path);
}

}  // namespace
