#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <optional>
#include <regex>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "spillkit/coco.hpp"
#include "spillkit/error.hpp"
#include "spillkit/geometry.hpp"
#include "spillkit/http.hpp"
#include "spillkit/image.hpp"
#include "spillkit/prompts.hpp"
#include "spillkit/util.hpp"

namespace spillkit {

struct PromptTemplate {
  std::string system_text = std::string(prompts::kInspectorSystem);
  std::string user_text_pattern = std::string(prompts::kDetectUserPattern) + std::string(prompts::kScoreHint);

  void validate() const {
    if (system_text.empty()) throw Error(Errc::invalid_input, "system prompt must not be empty");
    const auto first = user_text_pattern.find(prompts::kClassPlaceholder);
    if (first == std::string::npos ||
        user_text_pattern.find(prompts::kClassPlaceholder, first + 1) != std::string::npos)
      throw Error(Errc::invalid_input, "user prompt pattern must contain exactly one <class> placeholder");
  }

  std::string user_text(std::string_view class_name) const {
    std::string s = user_text_pattern;
    s.replace(s.find(prompts::kClassPlaceholder), prompts::kClassPlaceholder.size(), class_name);
    return s;
  }
};

/// Decoding settings sent with every request; defaults are the reference
/// conservative settings.
struct DecodingParams {
  double temperature = 0.10;
  double top_p = 0.001;
  double repetition_penalty = 1.2;
  int max_tokens = 512;

  void validate(const std::string& prefix = "detection") const {
    if (!(temperature >= 0)) throw BandError(prefix + ".temperature", "must be non-negative");
    if (!(top_p > 0 && top_p <= 1)) throw BandError(prefix + ".top_p", "must lie in (0, 1]");
    if (!(repetition_penalty > 0)) throw BandError(prefix + ".repetition_penalty", "must be positive");
    if (max_tokens <= 0) throw BandError(prefix + ".max_tokens", "must be positive");
  }

  bool operator==(const DecodingParams&) const = default;
};

/// An image to show the model. `data` wins over `uri`; a URI that is not an
/// http(s) URL is read from disk.
struct ImageInput {
  std::int64_t image_id = 0;
  std::string uri;
  Bytes data;
  int width = 0;
  int height = 0;
};

struct SupportExample {
  ImageInput image;
  std::vector<GroundTruth> ground_truths;
};

struct IclSupportSet {
  std::vector<SupportExample> examples;
  std::size_t k() const { return examples.size(); }
};

inline const std::set<std::size_t>& supported_shot_counts() {
  static const std::set<std::size_t> k{5, 10, 15};
  return k;
}

inline std::string image_content_url(const ImageInput& img) {
  if (!img.data.empty()) return "data:image/png;base64," + base64_encode(img.data);
  if (img.uri.rfind("http://", 0) == 0 || img.uri.rfind("https://", 0) == 0 || img.uri.rfind("data:", 0) == 0)
    return img.uri;
  if (img.uri.empty()) throw Error(Errc::invalid_input, "image " + std::to_string(img.image_id) + " has no content");
  return "data:image/png;base64," + base64_encode(read_file(img.uri));
}

/// Ground truths rendered in the COCO annotation record shape used for the
/// model's answers.
inline std::string support_answer(const SupportExample& ex) {
  json arr = json::array();
  for (const auto& gt : ex.ground_truths) {
    CocoAnnotation a;
    a.has_id = false;
    a.image_id = ex.image.image_id;
    a.category_id = gt.class_id;
    a.bbox = gt.bbox.xywh();
    a.score = 1.0;
    arr.push_back(to_json(a));
  }
  return arr.dump();
}

struct MessageOptions {
  /// Accept support sets of any size (otherwise k must be 5, 10 or 15).
  bool allow_any_shots = false;
};

/// System persona, then one (user, assistant) turn pair per support example,
/// then the query. Conditioning is purely contextual.
inline json build_messages(const ImageInput& image, ClassId class_id, const ClassRegistry& registry,
                           const PromptTemplate& tmpl = {}, const IclSupportSet* support = nullptr,
                           const MessageOptions& opts = {}) {
  tmpl.validate();
  const ClassInfo& cls = registry.at(class_id);
  if (support != nullptr && !opts.allow_any_shots && !supported_shot_counts().contains(support->k()))
    throw Error(Errc::unsupported_shot_count,
                "support set has " + std::to_string(support->k()) + " examples; supported counts are 5, 10 and 15");

  auto user_turn = [&](const ImageInput& img) {
    return json{{"role", "user"},
                {"content", json::array({json{{"type", "image_url"}, {"image_url", {{"url", image_content_url(img)}}}},
                                         json{{"type", "text"}, {"text", tmpl.user_text(cls.name)}}})}};
  };

  json messages = json::array();
  messages.push_back({{"role", "system"}, {"content", tmpl.system_text}});
  if (support != nullptr) {
    for (const auto& ex : support->examples) {
      if (ex.ground_truths.empty())
        throw Error(Errc::invalid_input, "support example " + std::to_string(ex.image.image_id) + " has no ground truth");
      messages.push_back(user_turn(ex.image));
      messages.push_back({{"role", "assistant"}, {"content", support_answer(ex)}});
    }
  }
  messages.push_back(user_turn(image));
  return messages;
}

inline json build_request(const json& messages, const DecodingParams& params, const std::string& model) {
  json req = {{"messages", messages},
              {"temperature", params.temperature},
              {"top_p", params.top_p},
              {"repetition_penalty", params.repetition_penalty},
              {"max_tokens", params.max_tokens}};
  if (!model.empty()) req["model"] = model;
  return req;
}

// ---------------------------------------------------------------------------
// Response parsing

enum class ParseStatus { clean, repaired, empty, unparseable };

inline std::string to_string(ParseStatus s) {
  switch (s) {
    case ParseStatus::clean: return "clean";
    case ParseStatus::repaired: return "repaired";
    case ParseStatus::empty: return "empty";
    case ParseStatus::unparseable: return "unparseable";
  }
  return "unknown";
}

inline ParseStatus parse_status_from_string(const std::string& s) {
  if (s == "clean") return ParseStatus::clean;
  if (s == "repaired") return ParseStatus::repaired;
  if (s == "empty") return ParseStatus::empty;
  if (s == "unparseable") return ParseStatus::unparseable;
  throw Error(Errc::invalid_input, "unknown parse status '" + s + "'");
}

struct ParsedDetections {
  std::vector<Detection> detections;
  ParseStatus status = ParseStatus::unparseable;
  std::string raw_text;
  /// Records dropped as malformed, scores defaulted, and similar findings.
  std::vector<std::string> notes;
  bool score_defaulted = false;
};

struct CoordinateFrame {
  /// Raw values no larger than this on an image larger than it are read as
  /// a normalized [0, ceiling] frame.
  double ceiling = 1000.0;
};

/// Interpret a raw [x, y, w, h] box in absolute pixels, clamped to the image.
/// Returns nullopt for malformed boxes (negative extents, non-finite values,
/// or nothing left after clamping).
inline std::optional<BBox> normalize_coords(const std::array<double, 4>& raw, int image_w, int image_h,
                                            CoordinateFrame frame = {}) {
  if (image_w <= 0 || image_h <= 0) throw Error(Errc::invalid_input, "image dimensions must be positive");
  for (double v : raw)
    if (!std::isfinite(v)) return std::nullopt;
  if (raw[2] < 0 || raw[3] < 0) return std::nullopt;
  std::array<double, 4> v = raw;
  const bool fits_frame = std::all_of(raw.begin(), raw.end(), [&](double x) { return x <= frame.ceiling; });
  if (fits_frame && std::max(image_w, image_h) > frame.ceiling) {
    const double sx = image_w / frame.ceiling, sy = image_h / frame.ceiling;
    v = {raw[0] * sx, raw[1] * sy, raw[2] * sx, raw[3] * sy};
  }
  const double W = image_w, H = image_h;
  BBox b{std::clamp(v[0], 0.0, W), std::clamp(v[1], 0.0, H), std::clamp(v[0] + v[2], 0.0, W), std::clamp(v[1] + v[3], 0.0, H)};
  if (b.degenerate()) return std::nullopt;
  return b;
}

namespace detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

inline std::optional<json> try_parse(std::string_view text) {
  json j = json::parse(text.begin(), text.end(), nullptr, false);
  if (j.is_discarded()) return std::nullopt;
  return j;
}

// Index one past the bracket matching text[start], honouring JSON strings.
inline std::optional<std::size_t> balanced_end(std::string_view text, std::size_t start) {
  std::vector<char> stack;
  bool in_string = false, escaped = false;
  for (std::size_t i = start; i < text.size(); ++i) {
    const char c = text[i];
    if (in_string) {
      if (escaped) escaped = false;
      else if (c == '\\') escaped = true;
      else if (c == '"') in_string = false;
      continue;
    }
    if (c == '"') in_string = true;
    else if (c == '[' || c == '{') stack.push_back(c == '[' ? ']' : '}');
    else if (c == ']' || c == '}') {
      if (stack.empty() || stack.back() != c) return std::nullopt;
      stack.pop_back();
      if (stack.empty()) return i + 1;
    }
  }
  return std::nullopt;
}

inline std::vector<std::string> fenced_blocks(std::string_view text) {
  std::vector<std::string> out;
  std::size_t pos = 0;
  while ((pos = text.find("```", pos)) != std::string_view::npos) {
    std::size_t body = pos + 3;
    const auto nl = text.find('\n', body);
    const auto close = text.find("```", body);
    if (close == std::string_view::npos) break;
    // Skip an info string such as "json" on the opening line.
    if (nl != std::string_view::npos && nl < close) {
      const auto info = trim(text.substr(body, nl - body));
      if (info.find_first_of("[{") == std::string::npos) body = nl + 1;
    }
    out.push_back(std::string(text.substr(body, close - body)));
    pos = close + 3;
  }
  return out;
}

inline bool says_nothing_found(std::string_view text) {
  static const std::regex kNone(
      R"((^|\b)(no|none|not|nothing|zero)\b[^.\n]{0,40}\b(hazard|hazards|spill|spills|leak|leaks|stain|stains|anomal\w*|present|detected|found|visible|object|objects)\b)",
      std::regex::icase);
  std::string s(text.substr(0, 4096));
  return std::regex_search(s, kNone);
}

inline bool is_number_array4(const json& j) {
  return j.is_array() && j.size() == 4 && std::all_of(j.begin(), j.end(), [](const json& v) { return v.is_number(); });
}

struct RawRecord {
  std::array<double, 4> xywh{};
  std::optional<ClassId> class_id;
  std::optional<double> score;
};

inline void collect_records(const json& j, std::vector<RawRecord>& out, std::vector<std::string>& notes, int depth = 0) {
  if (depth > 4) return;
  if (is_number_array4(j)) {
    RawRecord r;
    for (std::size_t i = 0; i < 4; ++i) r.xywh[i] = j[i].get<double>();
    out.push_back(r);
    return;
  }
  if (j.is_array()) {
    for (const auto& e : j) collect_records(e, out, notes, depth + 1);
    return;
  }
  if (!j.is_object()) return;
  for (const char* key : {"annotations", "detections", "results", "objects", "boxes"}) {
    if (j.contains(key) && j[key].is_array()) {
      for (const auto& e : j[key]) collect_records(e, out, notes, depth + 1);
      return;
    }
  }
  RawRecord r;
  if (j.contains("bbox") && is_number_array4(j["bbox"])) {
    for (std::size_t i = 0; i < 4; ++i) r.xywh[i] = j["bbox"][i].get<double>();
  } else if (j.contains("bbox_2d") && is_number_array4(j["bbox_2d"])) {
    // Corner form [x1, y1, x2, y2].
    const auto& b = j["bbox_2d"];
    const double x1 = b[0].get<double>(), y1 = b[1].get<double>(), x2 = b[2].get<double>(), y2 = b[3].get<double>();
    r.xywh = {x1, y1, x2 - x1, y2 - y1};
  } else {
    if (j.contains("bbox") || j.contains("bbox_2d")) notes.push_back("dropped record with a malformed bbox");
    return;
  }
  if (j.contains("category_id") && j["category_id"].is_number_integer()) r.class_id = j["category_id"].get<ClassId>();
  if (j.contains("score") && j["score"].is_number()) r.score = j["score"].get<double>();
  out.push_back(r);
}

}  // namespace detail

struct ParseOptions {
  /// Class assigned to records that do not name one.
  ClassId default_class = 0;
  CoordinateFrame frame{};
};

/// Extract detections from free-form model text. Never throws: text that
/// yields nothing usable comes back with status unparseable.
inline ParsedDetections parse_response(std::string_view text, int image_w, int image_h, const ParseOptions& opts = {}) {
  ParsedDetections out;
  try {
    out.raw_text = std::string(text);
    std::optional<json> doc;
    ParseStatus how = ParseStatus::clean;

    const std::string trimmed = detail::trim(text);
    doc = detail::try_parse(trimmed);
    if (!doc) {
      how = ParseStatus::repaired;
      for (const auto& block : detail::fenced_blocks(text)) {
        if ((doc = detail::try_parse(detail::trim(block)))) break;
      }
    }
    if (!doc) {
      int tries = 0;
      for (std::size_t i = 0; i < text.size() && tries < 64; ++i) {
        if (text[i] != '[' && text[i] != '{') continue;
        ++tries;
        if (const auto end = detail::balanced_end(text, i)) {
          if ((doc = detail::try_parse(text.substr(i, *end - i)))) break;
        }
      }
    }
    if (!doc || !(doc->is_array() || doc->is_object())) {
      out.status = detail::says_nothing_found(text) ? ParseStatus::empty : ParseStatus::unparseable;
      return out;
    }

    std::vector<detail::RawRecord> records;
    detail::collect_records(*doc, records, out.notes);
    for (const auto& r : records) {
      const auto box = normalize_coords(r.xywh, image_w, image_h, opts.frame);
      if (!box) {
        out.notes.push_back("dropped malformed box");
        continue;
      }
      Detection d;
      d.bbox = *box;
      d.class_id = r.class_id.value_or(opts.default_class);
      if (r.score && *r.score >= 0.0 && *r.score <= 1.0) {
        d.score = *r.score;
      } else {
        if (r.score) out.notes.push_back("score outside [0, 1] replaced by 1.0");
        d.score = 1.0;
        out.score_defaulted = true;
      }
      out.detections.push_back(d);
    }
    out.status = out.detections.empty() ? ParseStatus::empty : how;
  } catch (...) {
    out.detections.clear();
    out.status = ParseStatus::unparseable;
  }
  return out;
}

/// Detections as a COCO-shaped JSON array (the inverse of parse_response).
inline std::string serialize_detections(const std::vector<Detection>& dets) {
  json arr = json::array();
  for (const auto& d : dets) {
    const auto b = d.bbox.xywh();
    arr.push_back({{"category_id", d.class_id}, {"bbox", json::array({b[0], b[1], b[2], b[3]})}, {"score", d.score}});
  }
  return arr.dump();
}

// ---------------------------------------------------------------------------
// Backend and detector

/// Chat-completions transport. Returns the assistant text; raises
/// Errc::transport or Errc::context_overflow.
class ChatBackend {
 public:
  virtual ~ChatBackend() = default;
  virtual std::string complete(const json& request) = 0;
};

inline std::string assistant_text(const json& response) {
  const auto& content = response.at("choices").at(0).at("message").at("content");
  if (content.is_string()) return content.get<std::string>();
  std::string out;
  for (const auto& part : content)
    if (part.value("type", "") == "text") out += part.value("text", "");
  return out;
}

class HttpChatBackend : public ChatBackend {
 public:
  HttpChatBackend(const std::string& url, std::string api_key = {}, std::chrono::milliseconds timeout = std::chrono::seconds(120))
      : client_(url, std::move(api_key), timeout) {}

  std::string complete(const json& request) override {
    const std::string path = client_.endpoint().path.empty() ? "/v1/chat/completions" : "";
    const auto res = client_.post(path, request.dump());
    if (res.status == 413 || (res.status == 400 && looks_like_overflow(res.body)))
      throw Error(Errc::context_overflow, "request exceeds the model context window");
    if (res.status != 200) throw Error(Errc::transport, "chat backend returned HTTP " + std::to_string(res.status));
    try {
      return assistant_text(json::parse(res.body));
    } catch (const json::exception& e) {
      throw Error(Errc::transport, std::string("malformed chat completion: ") + e.what());
    }
  }

 private:
  static bool looks_like_overflow(const std::string& body) {
    std::string lower(body);
    std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char c) { return std::tolower(c); });
    return lower.find("context_length_exceeded") != std::string::npos ||
           (lower.find("context") != std::string::npos &&
            (lower.find("length") != std::string::npos || lower.find("too long") != std::string::npos));
  }

  http::Client client_;
};

/// Append-only JSON-lines log of every detection request and its outcome.
class ReplayLog {
 public:
  explicit ReplayLog(std::filesystem::path path) : path_(std::move(path)) {
    if (path_.has_parent_path()) std::filesystem::create_directories(path_.parent_path());
  }

  void append(const json& entry) {
    std::lock_guard lk(mu_);
    std::ofstream out(path_, std::ios::app);
    if (!out) throw Error(Errc::io, "cannot append to " + path_.string());
    out << entry.dump() << '\n';
  }

  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
  std::mutex mu_;
};

inline std::vector<json> read_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::io, "cannot open " + path.string());
  std::vector<json> out;
  std::string line;
  std::size_t offset = 0;
  while (std::getline(in, line)) {
    const std::size_t start = offset;
    offset += line.size() + 1;
    if (detail::trim(line).empty()) continue;
    try {
      out.push_back(json::parse(line));
    } catch (const json::parse_error& e) {
      throw ParseError("bad JSON line in " + path.string(), start + e.byte);
    }
  }
  return out;
}

// Image payloads are replaced by their digest so the log stays small.
inline json redact_images(json request) {
  for (auto& m : request["messages"]) {
    if (!m["content"].is_array()) continue;
    for (auto& part : m["content"]) {
      if (part.value("type", "") != "image_url") continue;
      auto& url = part["image_url"]["url"];
      const std::string u = url.get<std::string>();
      if (u.rfind("data:", 0) == 0)
        url = "sha256:" + sha256_hex(std::span(reinterpret_cast<const std::uint8_t*>(u.data()), u.size()));
    }
  }
  return request;
}

struct DetectorConfig {
  PromptTemplate prompt;
  DecodingParams decoding;
  CoordinateFrame frame;
  MessageOptions messages;
  std::string model;
  std::string method = "Zero-Shot";
};

/// One detector call per (image, class). Thread-safe if the backend is.
class VlmDetector {
 public:
  VlmDetector(ChatBackend& backend, ClassRegistry registry, DetectorConfig config = {}, ReplayLog* log = nullptr)
      : backend_(backend), registry_(std::move(registry)), config_(std::move(config)), log_(log) {
    config_.decoding.validate();
    config_.prompt.validate();
  }

  const ClassRegistry& registry() const { return registry_; }
  const DetectorConfig& config() const { return config_; }

  ParsedDetections detect(const ImageInput& image, ClassId class_id, const IclSupportSet* support = nullptr) {
    if (image.width <= 0 || image.height <= 0)
      throw Error(Errc::invalid_input, "image " + std::to_string(image.image_id) + " has unknown dimensions");
    const json request =
        build_request(build_messages(image, class_id, registry_, config_.prompt, support, config_.messages),
                      config_.decoding, config_.model);
    json entry = {{"image_id", image.image_id}, {"class_id", class_id}, {"method", config_.method},
                  {"width", image.width},       {"height", image.height}};
    std::string text;
    try {
      text = backend_.complete(request);
    } catch (const Error& e) {
      if (log_ != nullptr) {
        entry["request"] = redact_images(request);
        entry["error"] = e.what();
        entry["error_code"] = std::string(to_string(e.code()));
        log_->append(entry);
      }
      throw;
    }
    ParseOptions opts;
    opts.default_class = class_id;
    opts.frame = config_.frame;
    ParsedDetections parsed = parse_response(text, image.width, image.height, opts);
    if (log_ != nullptr) {
      entry["request"] = redact_images(request);
      entry["response"] = text;
      entry["status"] = to_string(parsed.status);
      log_->append(entry);
    }
    return parsed;
  }

 private:
  ChatBackend& backend_;
  ClassRegistry registry_;
  DetectorConfig config_;
  ReplayLog* log_;
};

}  // namespace spillkit
