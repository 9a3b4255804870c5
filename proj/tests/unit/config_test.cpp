#include <gtest/gtest.h>

#include <sstream>

#include "bdk/config.hpp"

namespace bdk {
namespace {

Config parse(const std::string& text) {
  std::istringstream is(text);
  return Config::parse(is, "t.ini");
}

TEST(Config, SectionsCommentsAndTypes) {
  const auto c = parse("# top\nseed = 7\n[teacher]\n; note\neta = 1e-3\niterations = 1e5\nwidths = 2-10-2\n"
                       "full_batch = yes\n[student]\nlower = -10, -10\n");
  EXPECT_EQ(c.get_u64("seed"), 7u);
  EXPECT_DOUBLE_EQ(c.get_double("teacher.eta"), 1e-3);
  EXPECT_EQ(c.get_size("teacher.iterations"), 100000u);
  EXPECT_EQ(c.get_string("teacher.widths"), "2-10-2");
  EXPECT_TRUE(c.get_bool("teacher.full_batch", false));
  EXPECT_EQ(c.get_doubles("student.lower"), (std::vector<double>{-10.0, -10.0}));
  EXPECT_NO_THROW(c.check_all_used());
}

TEST(Config, FallbacksAndMissing) {
  const auto c = parse("[a]\nx = 1\n");
  EXPECT_EQ(c.get_size("a.y", 5), 5u);
  EXPECT_THROW(c.get_string("a.z"), ConfigError);
}

TEST(Config, ErrorsNameTheField) {
  try {
    parse("[a]\nx = 1\nx = 2\n");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("t.ini:3"), std::string::npos);
  }
  EXPECT_THROW(parse("[a\n"), ConfigError);
  EXPECT_THROW(parse("novalue\n"), ConfigError);
  const auto c = parse("[a]\nn = -1\nf = 1.5\nr = abc\nb = maybe\n");
  EXPECT_THROW(c.get_u64("a.n"), ConfigError);
  EXPECT_THROW(c.get_u64("a.f"), ConfigError);
  EXPECT_THROW(c.get_double("a.r"), ConfigError);
  EXPECT_THROW(c.get_bool("a.b", false), ConfigError);
  try {
    c.get_double("a.r");
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("a.r"), std::string::npos);
  }
}

TEST(Config, UnknownKeysAreReported) {
  const auto c = parse("[a]\nx = 1\ntypo = 2\n");
  c.get_double("a.x");
  EXPECT_THROW(c.check_all_used(), ConfigError);
}

TEST(Config, OverridesAndDumpRoundTrip) {
  auto c = parse("[a]\nx = 1\n[b]\ny = 2\n");
  c.set_override("a.x=3");
  c.set_override("c.z = 4");
  EXPECT_THROW(c.set_override("nokey"), ConfigError);
  const auto d = parse(c.dump());
  EXPECT_EQ(d.get_double("a.x"), 3.0);
  EXPECT_EQ(d.get_double("b.y"), 2.0);
  EXPECT_EQ(d.get_double("c.z"), 4.0);
  EXPECT_EQ(d.dump(), c.dump());
}

}  // namespace
}  // namespace bdk
