#include <gtest/gtest.h>

#include <mutex>
#include <random>

#include "support.hpp"

using namespace spillkit;
using namespace spillkit::testing;

namespace {

class ScriptedChat : public ChatBackend {
 public:
  explicit ScriptedChat(std::string reply) : reply_(std::move(reply)) {}
  std::string complete(const json& request) override {
    std::lock_guard lk(mu_);
    requests.push_back(request);
    return reply_;
  }
  std::vector<json> requests;

 private:
  std::string reply_;
  std::mutex mu_;
};

ImageInput tiny_image(std::int64_t id = 1, int w = 512, int h = 512) {
  ImageInput im;
  im.image_id = id;
  im.data = encode_png(GrayImage(8, 8, 40));
  im.width = w;
  im.height = h;
  return im;
}

IclSupportSet support_of(std::size_t k) {
  IclSupportSet s;
  for (std::size_t i = 0; i < k; ++i) {
    SupportExample ex;
    ex.image = tiny_image(static_cast<std::int64_t>(100 + i));
    ex.ground_truths.push_back({{10, 10, 50, 60}, 1});
    s.examples.push_back(ex);
  }
  return s;
}

const char* kReferenceReply = R"([{"image_id":134,"category_id":3,"bbox":[256,411,142,95],"score":0.97}])";

}  // namespace

TEST(Messages, ZeroShotHasSystemAndQuery) {
  const auto msgs = build_messages(tiny_image(), 1, ClassRegistry::defaults());
  ASSERT_EQ(msgs.size(), 2u);
  EXPECT_EQ(msgs[0].at("role"), "system");
  EXPECT_EQ(msgs[0].at("content"), std::string(prompts::kInspectorSystem));
  EXPECT_EQ(msgs[1].at("role"), "user");
  const auto text = msgs[1].at("content").at(1).at("text").get<std::string>();
  EXPECT_EQ(text.rfind("Detect and return the bounding-box coordinates of the oil-spill in COCO JSON format, if present.", 0), 0u);
}

TEST(Messages, FiveShotsGiveTwelveMessages) {
  const auto s = support_of(5);
  const auto msgs = build_messages(tiny_image(), 1, ClassRegistry::defaults(), {}, &s);
  ASSERT_EQ(msgs.size(), 12u);
  for (std::size_t i = 1; i < 11; i += 2) {
    EXPECT_EQ(msgs[i].at("role"), "user");
    EXPECT_EQ(msgs[i + 1].at("role"), "assistant");
  }
  const auto answer = json::parse(msgs[2].at("content").get<std::string>());
  EXPECT_EQ(answer[0].at("bbox"), json::parse("[10,10,40,50]"));
  EXPECT_EQ(answer[0].at("category_id"), 1);
}

TEST(Messages, UnsupportedShotCountRejected) {
  const auto s = support_of(7);
  try {
    (void)build_messages(tiny_image(), 1, ClassRegistry::defaults(), {}, &s);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::unsupported_shot_count);
  }
  MessageOptions any;
  any.allow_any_shots = true;
  EXPECT_EQ(build_messages(tiny_image(), 1, ClassRegistry::defaults(), {}, &s, any).size(), 16u);
}

TEST(Messages, TemplateNeedsOnePlaceholder) {
  PromptTemplate t;
  t.user_text_pattern = "find things";
  EXPECT_THROW(t.validate(), Error);
}

TEST(Request, DecodingParamsSentVerbatim) {
  const auto req = build_request(json::array(), DecodingParams{}, "m");
  EXPECT_EQ(req.at("temperature").get<double>(), 0.10);
  EXPECT_EQ(req.at("top_p").get<double>(), 0.001);
  EXPECT_EQ(req.at("repetition_penalty").get<double>(), 1.2);
  EXPECT_EQ(req.at("max_tokens"), 512);
  EXPECT_EQ(req.at("model"), "m");
}

TEST(Parse, CleanCocoArray) {
  const auto p = parse_response(kReferenceReply, 512, 512);
  EXPECT_EQ(p.status, ParseStatus::clean);
  ASSERT_EQ(p.detections.size(), 1u);
  EXPECT_EQ(p.detections[0].bbox, (BBox{256, 411, 398, 506}));
  EXPECT_EQ(p.detections[0].class_id, 3);
  EXPECT_EQ(p.detections[0].score, 0.97);
}

TEST(Parse, FencedBlockIsRepaired) {
  const std::string text = std::string("Here is the result:\n```json\n") + kReferenceReply + "\n```\nDone.";
  const auto p = parse_response(text, 512, 512);
  EXPECT_EQ(p.status, ParseStatus::repaired);
  ASSERT_EQ(p.detections.size(), 1u);
}

TEST(Parse, NothingFoundAndProse) {
  EXPECT_EQ(parse_response("No hazard detected.", 512, 512).status, ParseStatus::empty);
  EXPECT_EQ(parse_response("[]", 512, 512).status, ParseStatus::empty);
  EXPECT_EQ(parse_response("The floor looks wet near the pump.", 512, 512).status, ParseStatus::unparseable);
}

TEST(Parse, MissingScoreDefaultsToOne) {
  ParseOptions o;
  o.default_class = 2;
  const auto p = parse_response(R"({"bbox":[1,2,3,4]})", 100, 100, o);
  ASSERT_EQ(p.detections.size(), 1u);
  EXPECT_EQ(p.detections[0].score, 1.0);
  EXPECT_EQ(p.detections[0].class_id, 2);
  EXPECT_TRUE(p.score_defaulted);
}

TEST(Parse, MalformedRecordsDropped) {
  const auto p = parse_response(R"([{"bbox":[1,2,-3,4]},{"bbox":[1,2,3,4],"score":0.5}])", 100, 100);
  ASSERT_EQ(p.detections.size(), 1u);
  EXPECT_FALSE(p.notes.empty());
}

TEST(Coords, NormalizedFrameScaledOnLargeImage) {
  const auto b = normalize_coords({100, 100, 300, 300}, 2048, 2048);
  ASSERT_TRUE(b.has_value());
  EXPECT_DOUBLE_EQ(b->x_min, 204.8);
  EXPECT_DOUBLE_EQ(b->width(), 300 * 2.048);
}

TEST(Coords, PixelBoxKeptOnSmallImage) {
  const auto b = normalize_coords({256, 411, 142, 95}, 512, 512);
  ASSERT_TRUE(b.has_value());
  EXPECT_EQ(b->xywh(), (std::array<double, 4>{256, 411, 142, 95}));
}

TEST(Coords, NegativeWidthDropped) { EXPECT_FALSE(normalize_coords({10, 10, -5, 5}, 512, 512).has_value()); }

TEST(Parse, TotalOverFuzzedInputs) {
  std::mt19937_64 rng(77);
  const std::string alphabet = "[]{}\",:0123456789.-eE abcxyz\n`\\";
  const std::string seed_text = std::string("```json\n") + kReferenceReply + "\n```";
  for (int i = 0; i < 20000; ++i) {
    std::string s;
    if (i % 2 == 0) {
      const auto n = rng() % 80;
      for (std::size_t k = 0; k < n; ++k) s += alphabet[rng() % alphabet.size()];
    } else {
      s = seed_text;
      const auto edits = 1 + rng() % 6;
      for (std::size_t k = 0; k < edits && !s.empty(); ++k) s[rng() % s.size()] = static_cast<char>(rng() % 256);
      s.resize(rng() % (s.size() + 1));
    }
    ParsedDetections p;
    ASSERT_NO_THROW(p = parse_response(s, 640, 480)) << s;
    for (const auto& d : p.detections) ASSERT_FALSE(d.bbox.degenerate());
  }
}

TEST(Parse, SerializedDetectionsRoundTrip) {
  std::mt19937_64 rng(8);
  std::uniform_int_distribution<int> n(0, 6), cls(1, 8), coord(0, 700);
  std::uniform_real_distribution<double> score(0.0, 1.0);
  for (int trial = 0; trial < 500; ++trial) {
    std::vector<Detection> dets;
    const int k = n(rng);
    for (int i = 0; i < k; ++i) {
      const int x = coord(rng) % 750, y = coord(rng) % 550;
      dets.push_back({{double(x), double(y), double(x + 1 + coord(rng) % (799 - x)), double(y + 1 + coord(rng) % (599 - y))}, cls(rng), score(rng)});
    }
    const auto p = parse_response(serialize_detections(dets), 800, 600);
    ASSERT_EQ(p.detections, dets);
    ASSERT_EQ(p.status, dets.empty() ? ParseStatus::empty : ParseStatus::clean);
  }
}

TEST(Detector, StubReplyGivesOneDetectionAndLogs) {
  ScriptedChat chat(kReferenceReply);
  TempDir dir;
  ReplayLog log(dir / "log.jsonl");
  VlmDetector det(chat, ClassRegistry::defaults(), {}, &log);
  const auto p = det.detect(tiny_image(134), 3);
  ASSERT_EQ(p.detections.size(), 1u);
  EXPECT_EQ(p.detections[0].score, 0.97);
  const auto entries = read_jsonl(log.path());
  ASSERT_EQ(entries.size(), 1u);
  EXPECT_EQ(entries[0].at("image_id"), 134);
  EXPECT_EQ(entries[0].at("response"), kReferenceReply);
  EXPECT_EQ(entries[0].at("status"), "clean");
  const auto url = entries[0].at("request").at("messages").at(1).at("content").at(0).at("image_url").at("url").get<std::string>();
  EXPECT_EQ(url.rfind("sha256:", 0), 0u);
  EXPECT_EQ(chat.requests.at(0).at("temperature").get<double>(), 0.10);
}

TEST(Detector, NothingFoundIsEmptyStatus) {
  ScriptedChat chat("No hazard detected.");
  VlmDetector det(chat, ClassRegistry::defaults());
  const auto p = det.detect(tiny_image(), 1);
  EXPECT_EQ(p.status, ParseStatus::empty);
  EXPECT_TRUE(p.detections.empty());
}

TEST(Detector, HttpBackendAgainstStubServer) {
  StubServer server;
  std::atomic<int> hits{0};
  server.svr().Post("/v1/chat/completions", [&](const httplib::Request& req, httplib::Response& res) {
    ++hits;
    const auto body = json::parse(req.body);
    if (body.at("messages").size() > 2) {
      res.status = 413;
      return;
    }
    res.set_content(json{{"choices", {{{"message", {{"role", "assistant"}, {"content", kReferenceReply}}}}}}}.dump(),
                    "application/json");
  });
  server.start();
  HttpChatBackend chat(server.url());
  VlmDetector det(chat, ClassRegistry::defaults());
  EXPECT_EQ(det.detect(tiny_image(), 3).detections.size(), 1u);
  const auto s = support_of(5);
  try {
    (void)det.detect(tiny_image(), 3, &s);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::context_overflow);
  }
  EXPECT_EQ(hits.load(), 2);
}

TEST(Detector, UnreachableBackendIsTransportErrorAndLogged) {
  HttpChatBackend chat("http://127.0.0.1:1", "", std::chrono::milliseconds(300));
  TempDir dir;
  ReplayLog log(dir / "log.jsonl");
  VlmDetector det(chat, ClassRegistry::defaults(), {}, &log);
  try {
    (void)det.detect(tiny_image(), 1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::transport);
  }
  const auto entries = read_jsonl(log.path());
  ASSERT_EQ(entries.size(), 1u);
  EXPECT_EQ(entries[0].at("error_code"), "transport");
}

TEST(Detector, BadDecodingParamsRejectedAtConstruction) {
  ScriptedChat chat("[]");
  DetectorConfig cfg;
  cfg.decoding.top_p = 0;
  EXPECT_THROW(VlmDetector(chat, ClassRegistry::defaults(), cfg), BandError);
}
