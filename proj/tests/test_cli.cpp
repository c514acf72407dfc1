#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdio>
#include <fstream>
#include <regex>
#include <set>

#include "support.hpp"

using namespace spillkit;
using namespace spillkit::testing;

namespace {

struct Run {
  int code = -1;
  std::string out;
  std::string err;
};

Run run_cli(const std::string& args, const TempDir& dir) {
  const auto err_file = dir / "stderr.txt";
  const std::string cmd = std::string("'") + SPILLKIT_CLI_PATH + "' " + args + " 2>'" + err_file.string() + "'";
  Run r;
  FILE* pipe = popen(cmd.c_str(), "r");
  if (pipe == nullptr) return r;
  char buf[4096];
  std::size_t n;
  while ((n = fread(buf, 1, sizeof buf, pipe)) > 0) r.out.append(buf, n);
  const int status = pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.err = read_text(err_file);
  return r;
}

std::string q(const std::filesystem::path& p) { return "'" + p.string() + "'"; }

struct ReplayFiles {
  std::filesystem::path annotations, replay;
};

ReplayFiles write_replay(const TempDir& dir) {
  const auto f = seven_of_ten_replay();
  ReplayFiles out{dir / "gt.json", dir / "replay.jsonl"};
  write_text_atomic(out.annotations, serialize_coco(f.dataset));
  std::string lines;
  for (const auto& e : f.entries) lines += e.dump() + "\n";
  write_text_atomic(out.replay, lines);
  return out;
}

}  // namespace

TEST(Cli, EvaluateReplayPrintsHitRate) {
  TempDir dir;
  const auto files = write_replay(dir);
  const auto r = run_cli("evaluate --annotations " + q(files.annotations) + " --replay " + q(files.replay), dir);
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("hit_rate@0.5: 0.70"), std::string::npos) << r.out;
}

TEST(Cli, EvaluateJsonOutputParses) {
  TempDir dir;
  const auto files = write_replay(dir);
  const auto r = run_cli("--json evaluate --annotations " + q(files.annotations) + " --replay " + q(files.replay) +
                             " -o " + q(dir / "report.json"),
                         dir);
  ASSERT_EQ(r.code, 0) << r.err;
  const json j = json::parse(r.out);
  EXPECT_NEAR(j.at("hit_rate").get<double>(), 0.7, 1e-12);
  EXPECT_EQ(json::parse(read_text(dir / "report.json")), j);
}

TEST(Cli, SweepAndRenderReport) {
  TempDir dir;
  const auto files = write_replay(dir);
  const auto ev = run_cli("evaluate --annotations " + q(files.annotations) + " --replay " + q(files.replay) + " -o " +
                              q(dir / "zs.json"),
                          dir);
  ASSERT_EQ(ev.code, 0) << ev.err;
  const auto sweep = run_cli("--json sweep --annotations " + q(files.annotations) + " --replay " + q(files.replay), dir);
  ASSERT_EQ(sweep.code, 0) << sweep.err;
  const auto hr = json::parse(sweep.out).at("hit_rates").get<std::vector<double>>();
  ASSERT_EQ(hr.size(), 5u);
  for (std::size_t i = 1; i < hr.size(); ++i) EXPECT_LE(hr[i], hr[i - 1]);
  const auto table = run_cli("render-report " + q(dir / "zs.json") + " --format csv", dir);
  ASSERT_EQ(table.code, 0) << table.err;
  EXPECT_NE(table.out.find("Zero-Shot,0.7\n"), std::string::npos) << table.out;
  const auto md = run_cli("render-report " + q(dir / "zs.json"), dir);
  ASSERT_EQ(md.code, 0) << md.err;
  EXPECT_NE(md.out.find("| Zero-Shot | 0.70 |"), std::string::npos) << md.out;
}

TEST(Cli, GenerateScenesRejectsOutOfBandConfig) {
  TempDir dir;
  const auto cfg = std::filesystem::path(SPILLKIT_SOURCE_DIR) / "configs" / "bad-band.json";
  const auto r = run_cli("-c " + q(cfg) + " generate-scenes --dry-run -n 1", dir);
  EXPECT_EQ(r.code, 3);
  EXPECT_NE(r.err.find("generation.lora_strength"), std::string::npos) << r.err;
  const auto j = run_cli("--json -c " + q(cfg) + " generate-scenes --dry-run -n 1", dir);
  EXPECT_EQ(j.code, 3);
  EXPECT_EQ(json::parse(j.err).at("error").at("field"), "generation.lora_strength");
}

TEST(Cli, GenerateScenesDryRunListsSeededJobs) {
  TempDir dir;
  const auto a = run_cli("--json generate-scenes --dry-run -n 3 --seed 5", dir);
  const auto b = run_cli("--json generate-scenes --dry-run -n 3 --seed 5", dir);
  ASSERT_EQ(a.code, 0) << a.err;
  EXPECT_EQ(a.out, b.out);
  const auto jobs = json::parse(a.out).at("jobs");
  ASSERT_EQ(jobs.size(), 3u);
  std::set<std::string> ids;
  for (const auto& j : jobs) {
    ids.insert(j.at("job_id").get<std::string>());
    const double s = j.at("params").at("lora_strength").get<double>();
    EXPECT_GE(s, 0.2);
    EXPECT_LE(s, 0.4);
  }
  EXPECT_EQ(ids.size(), 3u);
}

TEST(Cli, ParseErrorsExitTwo) {
  TempDir dir;
  EXPECT_EQ(run_cli("evaluate --no-such-flag", dir).code, 2);
  EXPECT_EQ(run_cli("no-such-command", dir).code, 2);
  EXPECT_EQ(run_cli("", dir).code, 2);
  EXPECT_EQ(run_cli("--help", dir).code, 0);
}

TEST(Cli, RuntimeErrorsExitOne) {
  TempDir dir;
  write_text_atomic(dir / "broken.json", "{\"images\": [");
  const auto r = run_cli("--json convert --from coco --to yolo -i " + q(dir / "broken.json") + " -o " + q(dir / "y"), dir);
  EXPECT_EQ(r.code, 1);
  EXPECT_TRUE(json::parse(r.err).at("error").contains("message"));
}

TEST(Cli, MergeLoraZeroAdapterKeepsOtherTensorsByteIdentical) {
  TempDir dir;
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<float> u(-1, 1);
  auto vec = [&](std::size_t n) {
    std::vector<float> v(n);
    for (auto& x : v) x = u(rng);
    return v;
  };
  const auto vis = vec(16), lang = vec(16), other = vec(8);
  write_file_atomic(dir / "base.st", TensorStoreBuilder()
                                         .add("visual.proj.weight", {4, 4}, vis)
                                         .add("model.layers.0.q_proj.weight", {4, 4}, lang)
                                         .add("norm.weight", {8}, other)
                                         .bytes());
  const std::vector<float> zeros(8, 0.0f);
  write_file_atomic(dir / "adapter.st", TensorStoreBuilder()
                                            .add("visual.proj.weight.lora_A", {4, 2}, zeros)
                                            .add("visual.proj.weight.lora_B", {2, 4}, vec(8))
                                            .add("model.layers.0.q_proj.weight.lora_A", {4, 2}, vec(8))
                                            .add("model.layers.0.q_proj.weight.lora_B", {2, 4}, vec(8))
                                            .bytes());
  const auto r = run_cli("--json merge-lora --base " + q(dir / "base.st") + " --adapter " + q(dir / "adapter.st") +
                             " --variant V -o " + q(dir / "merged.st"),
                         dir);
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(json::parse(r.out).at("merged"), json::array({"visual.proj.weight"}));
  const Bytes base_bytes = read_file(dir / "base.st"), merged_bytes = read_file(dir / "merged.st");
  const auto base = TensorStore::read(base_bytes), merged = TensorStore::read(merged_bytes);
  for (const auto& name : {"visual.proj.weight", "model.layers.0.q_proj.weight", "norm.weight"}) {
    const auto a = base.raw(name), b = merged.raw(name);
    ASSERT_EQ(a.size(), b.size());
    EXPECT_TRUE(std::equal(a.begin(), a.end(), b.begin())) << name;
  }
}

TEST(Cli, ConvertCocoYoloRoundTrip) {
  TempDir dir;
  const auto f = seven_of_ten_replay();
  std::filesystem::create_directories(dir / "images");
  for (const auto& im : f.dataset.images) save_png(dir / "images" / im.file_name, GrayImage(im.width, im.height, 0));
  write_text_atomic(dir / "gt.json", serialize_coco(f.dataset));
  const auto to = run_cli("convert --from coco --to yolo -i " + q(dir / "gt.json") + " -o " + q(dir / "labels"), dir);
  ASSERT_EQ(to.code, 0) << to.err;
  const auto back = run_cli("convert --from yolo --to coco -i " + q(dir / "labels") + " --images " + q(dir / "images") +
                                " -o " + q(dir / "back.json"),
                            dir);
  ASSERT_EQ(back.code, 0) << back.err;
  const auto ds = parse_coco(read_text(dir / "back.json"));
  ASSERT_EQ(ds.annotations.size(), f.dataset.annotations.size());
  for (const auto& a : ds.annotations) {
    const auto* im = ds.find_image(a.image_id);
    ASSERT_NE(im, nullptr);
    const auto* orig = f.dataset.find_image(std::stoll(std::filesystem::path(im->file_name).stem().string().substr(3)));
    ASSERT_NE(orig, nullptr);
    for (int k = 0; k < 4; ++k) EXPECT_NEAR(a.bbox[k], (std::array<double, 4>{100, 100, 200, 100})[k], 1e-6 * 640);
    EXPECT_EQ(a.category_id, 1);
  }
}

TEST(Cli, SplitIsDeterministicAndDisjoint) {
  TempDir dir;
  const auto files = write_replay(dir);
  const auto a = run_cli("--json split --annotations " + q(files.annotations) + " --count eval=6 --count adapt=3 --seed 11", dir);
  const auto b = run_cli("--json split --annotations " + q(files.annotations) + " --count eval=6 --count adapt=3 --seed 11", dir);
  ASSERT_EQ(a.code, 0) << a.err;
  EXPECT_EQ(a.out, b.out);
  const auto too_many = run_cli("split --annotations " + q(files.annotations) + " --count eval=11", dir);
  EXPECT_EQ(too_many.code, 1);
  EXPECT_NE(too_many.err.find("count"), std::string::npos);
}

TEST(Architecture, CliIncludesOnlyLibraryAndCliHeaders) {
  std::ifstream in(std::filesystem::path(SPILLKIT_SOURCE_DIR) / "tools" / "spillkit.cpp");
  const std::regex include_re(R"(^\s*#\s*include\s*([<"])([^>"]+)[>"])");
  std::string line;
  int seen = 0;
  while (std::getline(in, line)) {
    std::smatch m;
    if (!std::regex_search(line, m, include_re)) continue;
    ++seen;
    const std::string header = m[2];
    const bool ok = header.rfind("spillkit/", 0) == 0 || header == "CLI11.hpp" ||
                    (m[1] == "<" && header.find('.') == std::string::npos && header.find('/') == std::string::npos);
    EXPECT_TRUE(ok) << "tools/spillkit.cpp includes " << header;
  }
  EXPECT_GT(seen, 0);
}
