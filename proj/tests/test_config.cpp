#include <gtest/gtest.h>

#include "spillkit/config.hpp"

using namespace spillkit;

namespace {

const std::filesystem::path kConfigs = std::filesystem::path(SPILLKIT_SOURCE_DIR) / "configs";

std::string band_field(const json& j) {
  try {
    (void)config_from_json(j);
  } catch (const BandError& e) {
    return e.field();
  }
  return "";
}

}  // namespace

TEST(Config, DefaultsValidate) {
  const Config c;
  EXPECT_NO_THROW(c.validate());
  EXPECT_EQ(c.generation.lora_strength, (Band{0.2, 0.4}));
  EXPECT_EQ(c.inpainting.denoise, (Band{0.5, 0.6}));
  EXPECT_EQ(c.evaluation.tau, 0.5);
  EXPECT_EQ(c.retry.max_attempts, 3);
  EXPECT_EQ(c.split_profile(DataSource::public_web), (SplitCounts{{"eval", 520}, {"adapt", 100}}));
}

TEST(Config, ShippedDefaultFileMatchesBuiltInDefaults) {
  const Config c = load_config(kConfigs / "default.json");
  Config d;
  for (auto s : {DataSource::public_web, DataSource::proprietary, DataSource::synthetic})
    d.split_profiles[to_string(s)] = default_split_profile(s);
  EXPECT_EQ(to_json(c), to_json(d));
}

TEST(Config, ShippedMonitorExampleLoads) {
  const Config c = load_config(kConfigs / "monitor-example.json");
  ASSERT_EQ(c.monitor.sources.size(), 1u);
  EXPECT_EQ(c.monitor.sources[0].id, "line-a");
  EXPECT_EQ(c.thresholds.threshold_for(1), 0.6);
  EXPECT_EQ(c.thresholds.threshold_for(2), 0.5);
}

TEST(Config, LoraStrengthOutsideBandNamesField) {
  try {
    (void)load_config(kConfigs / "bad-band.json");
    FAIL() << "expected BandError";
  } catch (const BandError& e) {
    EXPECT_EQ(e.field(), "generation.lora_strength");
    EXPECT_NE(std::string(e.what()).find("generation.lora_strength"), std::string::npos);
  }
}

TEST(Config, BandViolationsReportFieldPath) {
  EXPECT_EQ(band_field(json::parse(R"({"generation":{"lora_strength":[0.1,0.3]}})")), "generation.lora_strength");
  EXPECT_EQ(band_field(json::parse(R"({"generation":{"lora_strength":[0.4,0.2]}})")), "generation.lora_strength");
  EXPECT_EQ(band_field(json::parse(R"({"generation":{"width":1000}})")), "");
  EXPECT_EQ(band_field(json::parse(R"({"generation":{"width":1001}})")), "generation.width");
  EXPECT_EQ(band_field(json::parse(R"({"inpainting":{"denoise_strength":0.7}})")), "inpainting.denoise_strength");
  EXPECT_EQ(band_field(json::parse(R"({"inpainting":{"feather_profile":"cubic"}})")), "inpainting.feather_profile");
  EXPECT_EQ(band_field(json::parse(R"({"evaluation":{"tau":0}})")), "evaluation.tau");
  EXPECT_EQ(band_field(json::parse(R"({"evaluation":{"sweep_thresholds":[0.5,0.5]}})")),
            "evaluation.sweep_thresholds[1]");
  EXPECT_EQ(band_field(json::parse(R"({"thresholds":{"per_class":{"1":1.5}}})")), "thresholds.per_class.1");
  EXPECT_EQ(band_field(json::parse(R"({"thresholds":{"per_class":{"99":0.5}}})")), "thresholds.per_class.99");
  EXPECT_EQ(band_field(json::parse(R"({"severity":{"medium_from":0.8,"high_from":0.7}})")), "severity.high_from");
  EXPECT_EQ(band_field(json::parse(R"({"monitor":{"classes":[42]}})")), "monitor.classes[0]");
  EXPECT_EQ(band_field(json::parse(R"({"backends":{"vlm":{"timeout_s":0}}})")), "backends.vlm.timeout_s");
  EXPECT_EQ(band_field(json::parse(R"({"parallelism":{"diffusion_jobs":0}})")), "parallelism.diffusion_jobs");
  EXPECT_EQ(band_field(json::parse(R"({"detection":{"top_p":0}})")), "detection.top_p");
  EXPECT_EQ(band_field(json::parse(R"({"detection":{"user_prompt":"no placeholder"}})")), "detection.user_prompt");
}

TEST(Config, UnknownKeysAndWrongTypesRejected) {
  for (const char* text : {R"({"generaton":{}})", R"({"generation":{"lora":0.3}})", R"({"monitor":{"sources":[{"id":"a","dir":"x"}]}})",
                           R"({"splits":{"private":[["eval",1]]}})", R"({"thresholds":{"per_class":{"oil":0.5}}})",
                           R"({"generation":{"steps":"many"}})", R"({"generation":{"lora_strength":[0.2,0.3,0.4]}})"}) {
    try {
      (void)config_from_json(json::parse(text));
      ADD_FAILURE() << text;
    } catch (const BandError& e) {
      ADD_FAILURE() << text << " raised a band error for " << e.field();
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), Errc::validation) << text;
    }
  }
}

TEST(Config, JsonRoundTripIsStable) {
  Config c;
  c.seed = 99;
  c.generation.lora_strength = {0.3, 0.3};
  c.thresholds.per_class[2] = 0.8;
  c.thresholds.min_area = 16;
  c.monitor.sources.push_back({"cam", "/frames"});
  c.split_profiles["public"] = {{"eval", 10}, {"adapt", 5}};
  c.evaluation.rule = MatchRule::greedy_all;
  const json j = to_json(c);
  const Config back = config_from_json(j);
  EXPECT_EQ(to_json(back), j);
  EXPECT_EQ(back.generation.lora_strength, (Band{0.3, 0.3}));
  EXPECT_EQ(j.at("generation").at("lora_strength"), 0.3);
  EXPECT_EQ(back.split_profile(DataSource::public_web), (SplitCounts{{"eval", 10}, {"adapt", 5}}));
}

TEST(Config, DerivedOptionsFollowConfig) {
  Config c;
  c.parallelism.eval_workers = 3;
  c.evaluation.tau = 0.7;
  const auto eo = c.eval_options();
  EXPECT_EQ(eo.workers, 3u);
  EXPECT_EQ(eo.tau, 0.7);
  EXPECT_EQ(eo.all_classes.size(), 8u);
  c.monitor.classes = {1, 3};
  EXPECT_EQ(c.monitor_options().classes, (std::vector<ClassId>{1, 3}));
}
