#include <gtest/gtest.h>

#include <fstream>

#include "candleforge/config.hpp"
#include "candleforge/error.hpp"
#include "support.hpp"

using namespace candleforge;

TEST(Config, DefaultsFollowThePublishedSetup) {
  const RunConfig c;
  EXPECT_EQ(c.dataset.window_len, 40u);
  EXPECT_EQ(c.dataset.lookahead, 3u);
  EXPECT_DOUBLE_EQ(c.dataset.threshold, 0.02);
  EXPECT_EQ(c.sampler.steps, 20);
  EXPECT_DOUBLE_EQ(c.sampler.image_guidance, 1.0);
  EXPECT_DOUBLE_EQ(c.sampler.text_guidance, 2.0);
  EXPECT_NO_THROW(c.validate());
}

TEST(Config, RoundTripIsIdentity) {
  RunConfig c = parse_run_config(R"(
[run]
seed = 99
[style]
width = 64
height = 64
up_candle = 0,200,100
[model]
learning_rate = 0.00123
cross_attention = true
[sampler]
text_guidance = 7.5
)");
  EXPECT_EQ(c.seed, 99u);
  EXPECT_EQ(c.style.width, 64);
  EXPECT_EQ(c.style.marker_size, ChartStyle::for_size(64, 64).marker_size);
  EXPECT_EQ(c.style.up_candle, (Rgb{0, 200, 100}));
  EXPECT_TRUE(c.model.unet.cross_attention);
  EXPECT_EQ(parse_run_config(serialize_run_config(c)), c);
  EXPECT_EQ(parse_run_config(serialize_run_config(RunConfig{})), RunConfig{});
}

TEST(Config, RejectsUnknownAndInvalid) {
  EXPECT_THROW(parse_run_config("[bogus]\nx = 1\n"), ConfigError);
  EXPECT_THROW(parse_run_config("[run]\nseeds = 1\n"), ConfigError);
  EXPECT_THROW(parse_run_config("[run]\nseed = abc\n"), ConfigError);
  EXPECT_THROW(parse_run_config("[style]\nup_candle = 1,2\n"), ConfigError);
  EXPECT_THROW(parse_run_config("[dataset]\ntrain_warmup = sometimes\n"), ConfigError);
  EXPECT_THROW(parse_run_config("[data]\ntrain_start = 2025-13-01\n"), ConfigError);
  EXPECT_THROW(parse_run_config("[sampler]\nsteps = 0\n"), ConfigError);
  EXPECT_THROW(parse_run_config("[style]\ndown_candle = 200,30,60\n"), ConfigError);
}

TEST(Config, RelativePathsResolveAgainstTheFile) {
  cftest::TempDir tmp;
  std::filesystem::create_directories(tmp.path / "cfg");
  std::ofstream(tmp.path / "cfg" / "run.ini") << "[paths]\ndata_dir = ../d\n[data]\nfixture_dir = fx\n";
  const RunConfig c = load_run_config(tmp.path / "cfg" / "run.ini");
  EXPECT_EQ(std::filesystem::weakly_canonical(c.paths.data_dir), std::filesystem::weakly_canonical(tmp.path / "d"));
  EXPECT_EQ(std::filesystem::weakly_canonical(c.data.fixture_dir),
            std::filesystem::weakly_canonical(tmp.path / "cfg" / "fx"));
  EXPECT_THROW(load_run_config(tmp.path / "missing.ini"), Error);
}
