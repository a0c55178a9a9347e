#include <cmath>
#include <random>
#include <set>

#include <gtest/gtest.h>

#include "mirrorfusion/bench.hpp"
#include "support/oracles.hpp"
#include "support/toy_data.hpp"

namespace {

namespace fs = std::filesystem;

mf::Catalog catalog_of(const std::vector<std::pair<std::string, int>>& counts) {
  mf::Catalog c;
  for (const auto& [cat, n] : counts) {
    for (int i = 0; i < n; ++i) c.entries.push_back({cat + "_" + std::to_string(i), cat, "fixture", false});
  }
  return c;
}

TEST(Split, HandEnumeratedFixture) {
  const auto c = catalog_of({{"C", 10}, {"A", 1}, {"B", 2}});
  const auto s = mf::build_split(c, 3, 42);
  EXPECT_EQ(s.unknown_categories, (std::vector<std::string>{"A", "B"}));
  EXPECT_EQ(s.unknown_ids, (std::vector<std::string>{"A_0", "B_0", "B_1"}));
  EXPECT_EQ(s.known_ids.size(), 10u);
  EXPECT_EQ(s.seed, 42u);

  const auto none = mf::build_split(c, 0, 0);
  EXPECT_TRUE(none.unknown_ids.empty());
  EXPECT_EQ(none.known_ids.size(), 13u);
}

TEST(Split, TiesBrokenByName) {
  const auto c = catalog_of({{"zebra", 2}, {"apple", 2}, {"mango", 5}});
  const auto s = mf::build_split(c, 1, 0);
  EXPECT_EQ(s.unknown_categories, std::vector<std::string>{"apple"});
  EXPECT_EQ(nlohmann::json(mf::build_split(c, 1, 7)).at("unknown_ids"), nlohmann::json(s.unknown_ids));
}

TEST(Split, Errors) {
  const auto c = catalog_of({{"A", 2}, {"B", 2}});
  EXPECT_THROW(mf::build_split(mf::Catalog{}, 0, 0), mf::InvalidArgument);
  EXPECT_THROW(mf::build_split(c, 4, 0), mf::InvalidArgument);
  EXPECT_THROW(mf::build_split(c, 3, 0), mf::InvalidArgument);  // would swallow both categories
  auto dup = c;
  dup.entries.push_back(dup.entries.front());
  EXPECT_THROW(mf::build_split(dup, 1, 0), mf::InvalidArgument);
}

TEST(Split, RandomCatalogsAgreeWithEnumeration) {
  std::mt19937_64 rng(77);
  int checked = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const int n_cats = std::uniform_int_distribution<int>(2, 8)(rng);
    std::vector<std::pair<std::string, int>> counts;
    for (int k = 0; k < n_cats; ++k) {
      counts.emplace_back("cat" + std::to_string(k), std::uniform_int_distribution<int>(1, 12)(rng));
    }
    const auto c = catalog_of(counts);
    const std::size_t n = std::uniform_int_distribution<std::size_t>(0, c.entries.size() - 1)(rng);
    const auto expect = oracle::split_by_enumeration(c.entries, n);
    if (expect.unknown_categories.size() == counts.size()) {
      EXPECT_THROW(mf::build_split(c, n, trial), mf::InvalidArgument);
      continue;
    }
    const auto s = mf::build_split(c, n, trial);
    ++checked;
    EXPECT_EQ(std::set<std::string>(s.unknown_categories.begin(), s.unknown_categories.end()),
              expect.unknown_categories);
    std::set<std::string> known_cats, unknown_cats, ids;
    std::map<std::string, std::string> cat_of;
    for (const auto& e : c.entries) cat_of[e.object_id] = e.category;
    for (const auto& id : s.known_ids) known_cats.insert(cat_of.at(id));
    for (const auto& id : s.unknown_ids) unknown_cats.insert(cat_of.at(id));
    for (const auto& c2 : known_cats) EXPECT_FALSE(unknown_cats.contains(c2));
    ids.insert(s.known_ids.begin(), s.known_ids.end());
    ids.insert(s.unknown_ids.begin(), s.unknown_ids.end());
    EXPECT_EQ(ids.size(), c.entries.size());
    EXPECT_EQ(s.known_ids.size() + s.unknown_ids.size(), c.entries.size());
    EXPECT_GE(s.unknown_ids.size(), n);
  }
  EXPECT_GT(checked, 50);
}

TEST(Aggregate, MeansMatchRecomputation) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  mf::MetricsReport r;
  for (int i = 0; i < 7; ++i) {
    mf::SampleMetrics m;
    m.id = "s" + std::to_string(i);
    m.group = i % 3 == 0 ? "unknown" : "known";
    m.psnr_unmasked = 30 * u(rng);
    m.ssim_unmasked = u(rng);
    m.lpips_unmasked = u(rng);
    m.psnr_masked = 30 * u(rng);
    m.ssim_masked = u(rng);
    m.lpips_masked = u(rng);
    m.iou_reflection = u(rng);
    m.baseline_ssim_masked = u(rng);
    r.per_sample.push_back(m);
  }
  mf::finalize_report(r);
  for (const char* group : {"all", "known", "unknown"}) {
    const auto& agg = r.aggregates.at(group);
    std::size_t count = 0;
    double sum = 0.0;
    int beats = 0;
    for (const auto& m : r.per_sample) {
      if (std::string(group) != "all" && m.group != group) continue;
      ++count;
      sum += m.ssim_masked;
      beats += m.ssim_masked > m.baseline_ssim_masked;
    }
    EXPECT_EQ(agg.at("count").get<std::size_t>(), count);
    EXPECT_NEAR(agg.at("ssim_masked").get<double>(), sum / count, 1e-12);
    EXPECT_NEAR(agg.at("beats_baseline_fraction").get<double>(), static_cast<double>(beats) / count, 1e-12);
  }
  const auto j = r.to_json();
  EXPECT_TRUE(j.contains("per_sample"));
  EXPECT_EQ(j.at("clip_similarity"), "n/a");
}

/// Two rendered 64x64 scenes and helpers to write candidate directories.
class EvaluateTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = new mf::testing::TempDir("bench");
    mf::testing::make_toy_dataset(dir_->path(), 2, 64, 11);
  }
  static void TearDownTestSuite() { delete dir_; }
  static fs::path data() { return dir_->path() / "data"; }

  /// Writes candidates produced by `make` for every sample under `name`.
  template <typename F>
  static fs::path write_generated(const std::string& name, F make, int n_seeds = 2) {
    const fs::path out = dir_->path() / name;
    for (const auto& dir : mf::io::list_samples(data())) {
      const auto s = mf::io::read_sample(dir);
      for (int k = 0; k < n_seeds; ++k) {
        fs::create_directories(out / mf::io::sample_key(dir));
        mf::io::write_png_rgb(mf::candidate_file(out / mf::io::sample_key(dir), k), make(s, k));
      }
    }
    return out;
  }

  static inline mf::testing::TempDir* dir_ = nullptr;
};

TEST_F(EvaluateTest, PerfectGenerationScoresPerfectly) {
  const auto gen = write_generated("perfect", [](const mf::RenderSample& s, int) { return s.rgb; });
  const auto r = mf::evaluate(data(), gen);
  ASSERT_EQ(r.per_sample.size(), 6u);
  for (const auto& m : r.per_sample) {
    EXPECT_EQ(m.psnr_masked, 100.0);
    EXPECT_EQ(m.psnr_unmasked, 100.0);
    EXPECT_NEAR(m.ssim_masked, 1.0, 1e-9);
    EXPECT_NEAR(m.ssim_unmasked, 1.0, 1e-9);
    EXPECT_EQ(m.lpips_masked, 0.0);
    EXPECT_EQ(m.iou_reflection, 1.0);
    EXPECT_EQ(m.selected, 0);
    EXPECT_EQ(m.group, "unassigned");
  }
  EXPECT_EQ(r.aggregates.at("all").at("count"), 6);
}

TEST_F(EvaluateTest, MidGrayMirrorDegradesOnlyMaskedMetrics) {
  // 128/255 survives the 8-bit PNG roundtrip, so the baseline fill matches exactly.
  const float fill = 128.0f / 255.0f;
  const auto gen = write_generated("gray", [fill](const mf::RenderSample& s, int) {
    return mf::mask_out(s.rgb, s.mirror_mask, fill);
  });
  mf::EvalOptions opt;
  opt.baseline_fill = fill;
  const auto r = mf::evaluate(data(), gen, std::nullopt, opt);
  for (const auto& m : r.per_sample) {
    EXPECT_EQ(m.psnr_unmasked, 100.0);
    EXPECT_NEAR(m.ssim_unmasked, 1.0, 1e-9);
    EXPECT_EQ(m.lpips_unmasked, 0.0);
    EXPECT_LT(m.psnr_masked, 40.0);
    EXPECT_LT(m.ssim_masked, 0.99);
    EXPECT_GT(m.lpips_masked, 0.0);
    EXPECT_NEAR(m.ssim_masked, m.baseline_ssim_masked, 1e-6);
  }
}

TEST_F(EvaluateTest, BestCandidateIsSelectedAndSplitGroups) {
  const auto gen = write_generated(
      "mixed",
      [](const mf::RenderSample& s, int k) { return k == 1 ? s.rgb : mf::mask_out(s.rgb, s.mirror_mask, 0.2f); },
      3);
  mf::Catalog cat;
  std::set<std::string> seen;
  for (const auto& dir : mf::io::list_samples(data())) {
    const auto meta = mf::io::read_json(dir / "meta.json");
    const std::string id = meta.at("object_id");
    if (seen.insert(id).second) cat.entries.push_back({id, meta.at("object_category"), "procedural", false});
  }
  ASSERT_EQ(cat.entries.size(), 2u);
  mf::BenchSplit split;
  split.known_ids = {cat.entries[0].object_id};
  split.unknown_ids = {cat.entries[1].object_id};
  const auto r = mf::evaluate(data(), gen, split);
  for (const auto& m : r.per_sample) {
    EXPECT_EQ(m.selected, 1);
    EXPECT_EQ(m.candidate_ssim_masked.size(), 3u);
    EXPECT_EQ(m.group, m.object_id == cat.entries[0].object_id ? "known" : "unknown");
  }
  EXPECT_EQ(r.aggregates.at("known").at("count"), 3);
  EXPECT_EQ(r.aggregates.at("unknown").at("count"), 3);
  EXPECT_EQ(r.to_json().at("split").at("known_ids"), nlohmann::json(split.known_ids));
}

TEST_F(EvaluateTest, UnpairedSamplesAreListed) {
  const auto gen = write_generated("partial", [](const mf::RenderSample& s, int) { return s.rgb; }, 1);
  const auto first = mf::io::sample_key(mf::io::list_samples(data()).front());
  fs::remove_all(gen / first);
  fs::create_directories(gen / "9999" / "cam_0");
  mf::io::write_png_rgb(gen / "9999" / "cam_0" / "gen_0.png", mf::PixelImage(64, 64, 3));
  try {
    mf::evaluate(data(), gen);
    FAIL() << "expected an unpaired-sample error";
  } catch (const mf::InvalidArgument& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find(first), std::string::npos) << msg;
    EXPECT_NE(msg.find("9999/cam_0"), std::string::npos) << msg;
  }
  EXPECT_THROW(mf::evaluate(data(), dir_->path() / "nowhere"), mf::IoError);
}

TEST_F(EvaluateTest, CandidateShapeMismatchNamesSample) {
  const auto gen = write_generated("small", [](const mf::RenderSample&, int) { return mf::PixelImage(32, 32, 3); }, 1);
  EXPECT_THROW(mf::evaluate(data(), gen), mf::InvalidArgument);
}

}  // namespace
