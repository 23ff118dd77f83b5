#include <string>

#include <gtest/gtest.h>

#include "followbench/common.hpp"
#include "toml_lite.hpp"

namespace fb = followbench;
namespace toml = followbench::toml;

TEST(TomlLite, ParsesTheRunConfigSubset) {
  const auto j = toml::parse(R"(# demo
[run]
seed = 42          # trailing comment
out = "runs/demo"

[calibrate]
family = 'ghr'
mutation_rate = 0.25
pooled = true
exponent = -1.5e-2

[train_nn]
hidden = [
  32,
  16,  # second layer
]

[datasets.highd]
input = "data/highd.csv"
preset = "highd"
)");
  EXPECT_EQ(j.at("run").at("seed").get<int>(), 42);
  EXPECT_EQ(j.at("run").at("out"), "runs/demo");
  EXPECT_EQ(j.at("calibrate").at("family"), "ghr");
  EXPECT_TRUE(j.at("calibrate").at("mutation_rate").is_number_float());
  EXPECT_DOUBLE_EQ(j.at("calibrate").at("exponent").get<double>(), -0.015);
  EXPECT_TRUE(j.at("calibrate").at("pooled").get<bool>());
  EXPECT_EQ(j.at("train_nn").at("hidden"), nlohmann::json::array({32, 16}));
  EXPECT_EQ(j.at("datasets").at("highd").at("preset"), "highd");
}

TEST(TomlLite, StringEscapes) {
  const auto j = toml::parse("a = \"tab\\there \\\"q\\\"\"\nb = 'C:\\raw'\n");
  EXPECT_EQ(j.at("a"), "tab\there \"q\"");
  EXPECT_EQ(j.at("b"), "C:\\raw");
}

TEST(TomlLite, RejectsUnsupportedOrMalformedInput) {
  for (const char* bad : {"a = 1\na = 2\n", "x = {y = 1}\n", "[[runs]]\n", "a = \"open\n",
                          "a = 1 2\n", "a = [1, 2\n", "= 3\n", "a = nope\n", "a = \"\"\"x\"\"\"\n",
                          "a = 1\n[a]\n"}) {
    SCOPED_TRACE(bad);
    EXPECT_THROW(toml::parse(bad), fb::Error);
  }
  try {
    toml::parse("ok = 1\n\nbad = {\n");
    FAIL() << "expected a parse error";
  } catch (const fb::Error& e) {
    EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos) << e.what();
  }
  EXPECT_THROW(toml::parse_file("/nonexistent/run.toml"), fb::Error);
}

TEST(TomlLite, LenientValuesFallBackToStrings) {
  EXPECT_EQ(toml::parse_value_lenient("12"), 12);
  EXPECT_EQ(toml::parse_value_lenient("0.5"), 0.5);
  EXPECT_EQ(toml::parse_value_lenient("false"), false);
  EXPECT_EQ(toml::parse_value_lenient("[1, 2]"), nlohmann::json::array({1, 2}));
  EXPECT_EQ(toml::parse_value_lenient("stop_and_go"), "stop_and_go");
  EXPECT_EQ(toml::parse_value_lenient("\"quoted\""), "quoted");
}
