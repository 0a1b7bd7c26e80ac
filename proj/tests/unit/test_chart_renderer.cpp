#include <gtest/gtest.h>

#include <nlohmann/json.hpp>

#include "candleforge/chart_renderer.hpp"
#include "candleforge/error.hpp"
#include "candleforge/evaluation.hpp"
#include "support.hpp"

using namespace candleforge;

namespace {

ChartWindow scaled(const ChartWindow& w, double a) {
  ChartWindow out = w;
  const auto mul = [a](const Decimal& d) { return Decimal::from_double(d.value() * a, 6); };
  for (auto& c : out.candles) {
    c.open = mul(c.open);
    c.high = mul(c.high);
    c.low = mul(c.low);
    c.close = mul(c.close);
    c.volume = mul(c.volume);
  }
  for (auto* s : {&out.frame.sma5, &out.frame.sma90}) {
    for (auto& v : *s) {
      if (v) *v *= a;
    }
  }
  return out;
}

bool same_outside(const RgbImage& a, const RgbImage& b, const PixelRect& r) {
  for (int y = 0; y < a.height(); ++y) {
    for (int x = 0; x < a.width(); ++x) {
      if (!r.contains(x, y) && a.at(x, y) != b.at(x, y)) return false;
    }
  }
  return true;
}

}  // namespace

TEST(ChartRenderer, DefaultStyleIsValid) {
  const ChartStyle s;
  EXPECT_NO_THROW(s.validate());
  EXPECT_EQ(s.marker_rect(), (PixelRect{224, 8, 248, 32}));
  EXPECT_FALSE(s.marker_rect().intersects(s.price_panel()));
  EXPECT_NO_THROW(ChartStyle::for_size(64, 64).validate());
  EXPECT_NO_THROW(ChartStyle::for_size(512, 512).validate());
}

TEST(ChartRenderer, StyleRejectsConfusableColors) {
  ChartStyle s;
  s.down_candle = {200, 30, 60};  // crimson sits too close to the red marker
  EXPECT_THROW(s.validate(), ConfigError);
  s = ChartStyle{};
  s.margin_top = 20;  // marker no longer inside the top margin
  EXPECT_THROW(s.validate(), ConfigError);
}

TEST(ChartRenderer, StyleJsonRoundTrip) {
  ChartStyle s = ChartStyle::for_size(128, 96);
  s.volume_bar = {1, 2, 3};
  const nlohmann::json j = s;
  EXPECT_EQ(j.get<ChartStyle>(), s);
  EXPECT_EQ(s.hash(), j.get<ChartStyle>().hash());
  EXPECT_NE(s.hash(), ChartStyle{}.hash());
}

TEST(ChartRenderer, AffineEndpoints) {
  const auto w = cftest::random_window(1);
  const ChartStyle style;
  const auto layout = price_to_pixel(w, style);
  EXPECT_EQ(layout.y_for_price(layout.price_max), style.price_panel().y0);
  EXPECT_EQ(layout.y_for_price(layout.price_min), style.price_panel().y1 - 1);
  double hi = 0;
  for (const auto& c : w.candles) hi = std::max(hi, c.high.value());
  EXPECT_GE(layout.price_max, hi);
}

TEST(ChartRenderer, FlatWindowRendersMidPlot) {
  const auto w = cftest::random_window(4);  // flat series
  const ChartStyle style;
  const auto layout = price_to_pixel(w, style);
  EXPECT_LT(layout.price_min, layout.price_max);
  const int y = layout.y_for_price(w.candles[0].close.value());
  const auto p = style.price_panel();
  EXPECT_NEAR(y, (p.y0 + p.y1 - 1) / 2.0, 1.0);
  EXPECT_NO_THROW(render_window(w, std::nullopt, style));
}

TEST(ChartRenderer, DeterministicBytes) {
  const auto w = cftest::random_window(2);
  const auto a = render_window(w, TrendLabel::kUp, ChartStyle{});
  const auto b = render_window(w, TrendLabel::kUp, ChartStyle{});
  EXPECT_EQ(encode_png(a.pixels), encode_png(b.pixels));
}

TEST(ChartRenderer, OverlaysStayInPlotArea) {
  const ChartStyle style;
  const auto p = style.price_panel();
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto w = cftest::random_window(seed);
    const auto layout = price_to_pixel(w, style);
    for (int i = 0; i < layout.bars; ++i) {
      if (const auto& v = w.frame.sma5[static_cast<std::size_t>(i)]) {
        EXPECT_TRUE(p.contains(layout.x_center(i), layout.y_for_price(*v)));
      }
    }
  }
}

TEST(ChartRenderer, MarkerIsSolidAndDisjoint) {
  const ChartStyle style;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto w = cftest::random_window(seed);
    const auto plain = render_window(w, std::nullopt, style).pixels;
    for (TrendLabel l : kLabelOrder) {
      const auto marked = render_window(w, l, style).pixels;
      EXPECT_TRUE(same_outside(plain, marked, style.marker_rect()));
      const auto m = read_mark(marked, style);
      const Rgb want = style.palette.color(l);
      EXPECT_LE(std::hypot(m.r - want.r, m.g - want.g, m.b - want.b), 10.0);
    }
  }
}

TEST(ChartRenderer, StampExamples) {
  const ChartStyle style;
  const RgbImage blank(256, 256, {255, 255, 255});
  const auto red = stamp_marker(blank, TrendLabel::kUp, style);
  int count = 0;
  for (int y = 0; y < 256; ++y) {
    for (int x = 0; x < 256; ++x) count += red.at(x, y) == Rgb{220, 40, 40};
  }
  EXPECT_EQ(count, 24 * 24);
  EXPECT_EQ(stamp_marker(red, TrendLabel::kUp, style), red);
  const auto black = stamp_marker(blank, TrendLabel::kFlat, style);
  EXPECT_TRUE(same_outside(blank, black, style.marker_rect()));
  EXPECT_THROW(stamp_marker(RgbImage(16, 16), TrendLabel::kUp, style), ConfigError);
}

TEST(ChartRenderer, ScalingPricesAndVolumesLeavesRasterUnchanged) {
  const ChartStyle style;
  for (std::uint64_t seed : {0, 1, 2, 3, 5, 6}) {
    const auto w = cftest::random_window(seed);
    const auto base = render_window(w, std::nullopt, style).pixels;
    for (double a : {2.0, 0.5, 4.0}) {  // exact in binary
      EXPECT_EQ(render_window(scaled(w, a), std::nullopt, style).pixels, base) << "seed " << seed << " a " << a;
    }
  }
}

TEST(ChartRenderer, WindowMustFit) {
  const auto s = cftest::gapless_series(50);
  const auto f = indicator_frame(s);
  EXPECT_THROW(make_window(s, f, 38, 40), ArgumentError);
  EXPECT_THROW(make_window(s, f, 50, 40), ArgumentError);
  EXPECT_EQ(make_window(s, f, 39, 40).size(), 40u);
}
