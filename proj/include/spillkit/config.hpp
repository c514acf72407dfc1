#pragma once

#include <charconv>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <initializer_list>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "spillkit/coco.hpp"
#include "spillkit/diffusion.hpp"
#include "spillkit/error.hpp"
#include "spillkit/eval.hpp"
#include "spillkit/metrics.hpp"
#include "spillkit/monitor.hpp"
#include "spillkit/prompts.hpp"
#include "spillkit/splits.hpp"
#include "spillkit/util.hpp"
#include "spillkit/vlm.hpp"

namespace spillkit {

struct BackendConfig {
  std::string url;
  std::string api_key_env;
  std::string model;
  int timeout_s = 120;
  bool inline_images = true;

  std::string api_key() const { return http::api_key_from_env(api_key_env); }
};

struct EvaluationConfig {
  double tau = 0.5;
  MatchRule rule = MatchRule::best_per_class;
  std::vector<double> sweep_thresholds = default_sweep_thresholds();
};

struct MonitorSource {
  std::string id;
  std::string directory;
};

struct MonitorConfig {
  std::vector<MonitorSource> sources;
  std::vector<ClassId> classes{1};
  int poll_interval_ms = 1000;
  std::size_t queue_capacity = 64;
  std::string detection_log = "monitor/detections.jsonl";
  std::string skip_log = "monitor/skipped.jsonl";
  std::string alert_log = "monitor/alerts.jsonl";
  std::string dead_letter = "monitor/dead_letter.jsonl";
  std::vector<std::string> webhooks;
};

struct AnnotationConfig {
  std::string store_dir = "annotation";
  std::string static_dir;
  std::string token_env;
  int max_reinpaints = 3;
};

struct PathsConfig {
  std::string output_dir = "out";
  std::string replay_log = "out/replay.jsonl";
};

struct ParallelismConfig {
  std::size_t diffusion_jobs = 2;
  std::size_t detection_workers = 2;
  std::size_t eval_workers = 4;
  std::size_t merge_workers = 4;
};

struct Config {
  std::uint64_t seed = 0;
  BackendConfig diffusion{"http://127.0.0.1:7860", "SPILLKIT_DIFFUSION_API_KEY", "", 120, true};
  BackendConfig vlm{"http://127.0.0.1:8000", "SPILLKIT_VLM_API_KEY", "", 120, true};
  ClassRegistry classes = ClassRegistry::defaults();
  GenerationProfile generation;
  std::string style_ref;
  InpaintProfile inpainting;
  DetectorConfig detection;
  EvaluationConfig evaluation;
  ThresholdPolicy thresholds;
  SeverityRules severity;
  MonitorConfig monitor;
  AnnotationConfig annotation;
  PathsConfig paths;
  ParallelismConfig parallelism;
  RetryPolicy retry;
  std::map<std::string, SplitCounts> split_profiles;

  /// Checks every module's parameter bands; the first violation raises a
  /// BandError naming its field path.
  void validate() const {
    generation.validate("generation");
    inpainting.validate("inpainting");
    detection.decoding.validate("detection");
    if (!(detection.frame.ceiling > 0)) throw BandError("detection.coordinate_ceiling", "must be positive");
    if (!(evaluation.tau > 0 && evaluation.tau <= 1)) throw BandError("evaluation.tau", "must lie in (0, 1]");
    for (std::size_t i = 0; i < evaluation.sweep_thresholds.size(); ++i) {
      const double t = evaluation.sweep_thresholds[i];
      if (!(t > 0 && t <= 1)) throw BandError("evaluation.sweep_thresholds[" + std::to_string(i) + "]", "must lie in (0, 1]");
      if (i > 0 && !(t > evaluation.sweep_thresholds[i - 1]))
        throw BandError("evaluation.sweep_thresholds[" + std::to_string(i) + "]", "thresholds must increase");
    }
    thresholds.validate("thresholds");
    severity.validate("severity");
    if (monitor.poll_interval_ms <= 0) throw BandError("monitor.poll_interval_ms", "must be positive");
    if (monitor.queue_capacity == 0) throw BandError("monitor.queue_capacity", "must be positive");
    for (std::size_t i = 0; i < monitor.classes.size(); ++i)
      if (!classes.contains(monitor.classes[i]))
        throw BandError("monitor.classes[" + std::to_string(i) + "]", "class is not registered");
    for (const auto& [c, _] : thresholds.per_class)
      if (!classes.contains(c)) throw BandError("thresholds.per_class." + std::to_string(c), "class is not registered");
    if (annotation.max_reinpaints < 0) throw BandError("annotation.max_reinpaints", "must be non-negative");
    auto positive = [](const std::string& field, std::size_t v) {
      if (v == 0) throw BandError(field, "must be at least 1");
    };
    positive("parallelism.diffusion_jobs", parallelism.diffusion_jobs);
    positive("parallelism.detection_workers", parallelism.detection_workers);
    positive("parallelism.eval_workers", parallelism.eval_workers);
    positive("parallelism.merge_workers", parallelism.merge_workers);
    if (retry.max_attempts < 1) throw BandError("retry.max_attempts", "must be at least 1");
    if (retry.base_backoff.count() < 0) throw BandError("retry.base_backoff_ms", "must be non-negative");
    if (retry.poll_interval.count() < 0) throw BandError("retry.poll_interval_ms", "must be non-negative");
    if (retry.max_polls < 1) throw BandError("retry.max_polls", "must be at least 1");
    if (classes.classes().empty()) throw BandError("classes", "at least one class must be registered");
  }

  SplitCounts split_profile(DataSource source) const {
    const auto it = split_profiles.find(to_string(source));
    return it != split_profiles.end() ? it->second : default_split_profile(source);
  }

  EvalOptions eval_options() const {
    EvalOptions o;
    o.tau = evaluation.tau;
    o.rule = evaluation.rule;
    o.sweep_thresholds = evaluation.sweep_thresholds;
    o.workers = parallelism.eval_workers;
    for (const auto& c : classes.classes()) o.all_classes.push_back(c.id);
    return o;
  }

  MonitorOptions monitor_options() const {
    MonitorOptions o;
    o.classes = monitor.classes;
    o.policy = thresholds;
    o.severity = severity;
    o.retry = retry;
    o.detection_workers = parallelism.detection_workers;
    o.queue_capacity = monitor.queue_capacity;
    return o;
  }
};

namespace detail {

/// Reads config sections and reports problems with the JSON path of the
/// offending field.
class ConfigReader {
 public:
  ConfigReader(const json& obj, std::string path) : obj_(obj), path_(std::move(path)) {
    if (!obj_.is_object()) throw Error(Errc::validation, where() + " must be a JSON object");
  }

  void allow(std::initializer_list<std::string_view> keys) const {
    for (auto it = obj_.begin(); it != obj_.end(); ++it) {
      bool known = false;
      for (auto k : keys) known = known || it.key() == k;
      if (!known) throw Error(Errc::validation, "unknown config key " + field(it.key()));
    }
  }

  template <typename T>
  void get(const char* key, T& out) const {
    if (!obj_.contains(key)) return;
    try {
      out = obj_.at(key).get<T>();
    } catch (const json::exception&) {
      throw Error(Errc::validation, "config field " + field(key) + " has the wrong type");
    }
  }

  void get_ms(const char* key, std::chrono::milliseconds& out) const {
    std::int64_t v = out.count();
    get(key, v);
    out = std::chrono::milliseconds(v);
  }

  void get_band(const char* key, Band& out) const {
    if (!obj_.contains(key)) return;
    try {
      out = band_from_json(obj_.at(key));
    } catch (const std::exception&) {
      throw Error(Errc::validation, "config field " + field(key) + " must be a number or [lo, hi]");
    }
  }

  std::optional<ConfigReader> section(const char* key) const {
    if (!obj_.contains(key)) return std::nullopt;
    return ConfigReader(obj_.at(key), field(key));
  }

  const json& raw() const { return obj_; }
  std::string field(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

 private:
  std::string where() const { return path_.empty() ? "config" : path_; }

  const json& obj_;
  std::string path_;
};

inline void read_backend(const ConfigReader& r, BackendConfig& b) {
  r.allow({"url", "api_key_env", "model", "timeout_s", "inline_images"});
  r.get("url", b.url);
  r.get("api_key_env", b.api_key_env);
  r.get("model", b.model);
  r.get("timeout_s", b.timeout_s);
  r.get("inline_images", b.inline_images);
  if (b.timeout_s <= 0) throw BandError(r.field("timeout_s"), "must be positive");
}

inline json backend_json(const BackendConfig& b) {
  return {{"url", b.url}, {"api_key_env", b.api_key_env}, {"model", b.model}, {"timeout_s", b.timeout_s},
          {"inline_images", b.inline_images}};
}

}  // namespace detail

inline Config config_from_json(const json& root) {
  using detail::ConfigReader;
  Config c;
  const ConfigReader r(root, "");
  r.allow({"seed", "backends", "classes", "generation", "inpainting", "detection", "evaluation", "thresholds",
           "severity", "monitor", "annotation", "paths", "parallelism", "retry", "splits"});
  r.get("seed", c.seed);

  if (auto b = r.section("backends")) {
    b->allow({"diffusion", "vlm"});
    if (auto d = b->section("diffusion")) detail::read_backend(*d, c.diffusion);
    if (auto v = b->section("vlm")) detail::read_backend(*v, c.vlm);
  }
  if (root.contains("classes")) {
    try {
      c.classes = registry_from_json(root.at("classes"));
    } catch (const json::exception&) {
      throw Error(Errc::validation, "config field classes must be a list of {id, name}");
    }
  }
  if (auto g = r.section("generation")) {
    g->allow({"width", "height", "steps", "cfg_scale", "sampler", "scheduler", "lora_strength", "ip_adapter_strength",
              "positive_prompt", "negative_prompt", "style_ref"});
    auto& p = c.generation;
    g->get("width", p.width);
    g->get("height", p.height);
    g->get("steps", p.steps);
    g->get("cfg_scale", p.cfg_scale);
    g->get("sampler", p.sampler);
    g->get("scheduler", p.scheduler);
    g->get_band("lora_strength", p.lora_strength);
    g->get("ip_adapter_strength", p.ip_adapter_strength);
    g->get("positive_prompt", p.positive_prompt);
    g->get("negative_prompt", p.negative_prompt);
    g->get("style_ref", c.style_ref);
  }
  if (auto s = r.section("inpainting")) {
    s->allow({"feather_px", "opacity", "feather_profile", "denoise_strength", "differential_diffusion",
              "spill_texture_ref", "variants_per_box"});
    auto& p = c.inpainting;
    s->get("feather_px", p.feather_px);
    s->get("opacity", p.opacity);
    std::string profile = to_string(p.feather_profile);
    s->get("feather_profile", profile);
    try {
      p.feather_profile = feather_profile_from_string(profile);
    } catch (const Error&) {
      throw BandError("inpainting.feather_profile", "must be linear or gaussian");
    }
    s->get_band("denoise_strength", p.denoise);
    s->get("differential_diffusion", p.differential_diffusion);
    s->get("spill_texture_ref", p.spill_texture_ref);
    s->get("variants_per_box", p.variants_per_box);
  }
  if (auto d = r.section("detection")) {
    d->allow({"temperature", "top_p", "repetition_penalty", "max_tokens", "coordinate_ceiling", "method",
              "system_prompt", "user_prompt", "allow_any_shots"});
    auto& p = c.detection;
    d->get("temperature", p.decoding.temperature);
    d->get("top_p", p.decoding.top_p);
    d->get("repetition_penalty", p.decoding.repetition_penalty);
    d->get("max_tokens", p.decoding.max_tokens);
    d->get("coordinate_ceiling", p.frame.ceiling);
    d->get("method", p.method);
    d->get("system_prompt", p.prompt.system_text);
    d->get("user_prompt", p.prompt.user_text_pattern);
    d->get("allow_any_shots", p.messages.allow_any_shots);
    try {
      p.prompt.validate();
    } catch (const Error& e) {
      throw BandError("detection.user_prompt", e.what());
    }
  }
  if (auto e = r.section("evaluation")) {
    e->allow({"tau", "match_rule", "sweep_thresholds"});
    e->get("tau", c.evaluation.tau);
    std::string rule = c.evaluation.rule == MatchRule::best_per_class ? "best_per_class" : "greedy_all";
    e->get("match_rule", rule);
    if (rule == "best_per_class") c.evaluation.rule = MatchRule::best_per_class;
    else if (rule == "greedy_all") c.evaluation.rule = MatchRule::greedy_all;
    else throw BandError("evaluation.match_rule", "must be best_per_class or greedy_all");
    e->get("sweep_thresholds", c.evaluation.sweep_thresholds);
  }
  if (auto t = r.section("thresholds")) {
    t->allow({"default", "per_class", "min_area"});
    t->get("default", c.thresholds.default_threshold);
    if (auto pc = t->section("per_class")) {
      for (auto it = pc->raw().begin(); it != pc->raw().end(); ++it) {
        ClassId id = 0;
        const auto& k = it.key();
        const auto res = std::from_chars(k.data(), k.data() + k.size(), id);
        if (res.ec != std::errc() || res.ptr != k.data() + k.size())
          throw Error(Errc::validation, "config key " + pc->field(k) + " must be a class id");
        double v = 0;
        pc->get(k.c_str(), v);
        c.thresholds.per_class[id] = v;
      }
    }
    if (t->raw().contains("min_area") && !t->raw().at("min_area").is_null()) {
      double v = 0;
      t->get("min_area", v);
      c.thresholds.min_area = v;
    }
  }
  if (auto s = r.section("severity")) {
    s->allow({"medium_from", "high_from", "small_area_fraction"});
    s->get("medium_from", c.severity.medium_from);
    s->get("high_from", c.severity.high_from);
    s->get("small_area_fraction", c.severity.small_area_fraction);
  }
  if (auto m = r.section("monitor")) {
    m->allow({"sources", "classes", "poll_interval_ms", "queue_capacity", "detection_log", "skip_log", "alert_log",
              "dead_letter", "webhooks"});
    if (m->raw().contains("sources")) {
      const auto& arr = m->raw().at("sources");
      if (!arr.is_array()) throw Error(Errc::validation, "config field monitor.sources must be a list");
      for (std::size_t i = 0; i < arr.size(); ++i) {
        const ConfigReader s(arr[i], "monitor.sources[" + std::to_string(i) + "]");
        s.allow({"id", "directory"});
        MonitorSource src;
        s.get("id", src.id);
        s.get("directory", src.directory);
        if (src.id.empty()) throw BandError(s.field("id"), "must not be empty");
        c.monitor.sources.push_back(src);
      }
    }
    m->get("classes", c.monitor.classes);
    m->get("poll_interval_ms", c.monitor.poll_interval_ms);
    m->get("queue_capacity", c.monitor.queue_capacity);
    m->get("detection_log", c.monitor.detection_log);
    m->get("skip_log", c.monitor.skip_log);
    m->get("alert_log", c.monitor.alert_log);
    m->get("dead_letter", c.monitor.dead_letter);
    m->get("webhooks", c.monitor.webhooks);
  }
  if (auto a = r.section("annotation")) {
    a->allow({"store_dir", "static_dir", "token_env", "max_reinpaints"});
    a->get("store_dir", c.annotation.store_dir);
    a->get("static_dir", c.annotation.static_dir);
    a->get("token_env", c.annotation.token_env);
    a->get("max_reinpaints", c.annotation.max_reinpaints);
  }
  if (auto p = r.section("paths")) {
    p->allow({"output_dir", "replay_log"});
    p->get("output_dir", c.paths.output_dir);
    p->get("replay_log", c.paths.replay_log);
  }
  if (auto p = r.section("parallelism")) {
    p->allow({"diffusion_jobs", "detection_workers", "eval_workers", "merge_workers"});
    p->get("diffusion_jobs", c.parallelism.diffusion_jobs);
    p->get("detection_workers", c.parallelism.detection_workers);
    p->get("eval_workers", c.parallelism.eval_workers);
    p->get("merge_workers", c.parallelism.merge_workers);
  }
  if (auto p = r.section("retry")) {
    p->allow({"max_attempts", "base_backoff_ms", "poll_interval_ms", "max_polls"});
    p->get("max_attempts", c.retry.max_attempts);
    p->get_ms("base_backoff_ms", c.retry.base_backoff);
    p->get_ms("poll_interval_ms", c.retry.poll_interval);
    p->get("max_polls", c.retry.max_polls);
  }
  if (auto s = r.section("splits")) {
    for (auto it = s->raw().begin(); it != s->raw().end(); ++it) {
      try {
        data_source_from_string(it.key());
      } catch (const Error&) {
        throw Error(Errc::validation, "config key " + s->field(it.key()) + " is not a data source");
      }
      SplitCounts counts;
      s->get(it.key().c_str(), counts);
      c.split_profiles[it.key()] = counts;
    }
  }
  c.validate();
  return c;
}

inline json to_json(const Config& c) {
  json per_class = json::object();
  for (const auto& [id, v] : c.thresholds.per_class) per_class[std::to_string(id)] = v;
  json sources = json::array();
  for (const auto& s : c.monitor.sources) sources.push_back({{"id", s.id}, {"directory", s.directory}});
  json splits = json::object();
  for (const auto& [k, v] : c.split_profiles) splits[k] = v;
  const auto& g = c.generation;
  const auto& p = c.inpainting;
  const auto& d = c.detection;
  return {
      {"seed", c.seed},
      {"backends", {{"diffusion", detail::backend_json(c.diffusion)}, {"vlm", detail::backend_json(c.vlm)}}},
      {"classes", to_json(c.classes)},
      {"generation",
       {{"width", g.width}, {"height", g.height}, {"steps", g.steps}, {"cfg_scale", g.cfg_scale},
        {"sampler", g.sampler}, {"scheduler", g.scheduler}, {"lora_strength", band_to_json(g.lora_strength)},
        {"ip_adapter_strength", g.ip_adapter_strength}, {"positive_prompt", g.positive_prompt},
        {"negative_prompt", g.negative_prompt}, {"style_ref", c.style_ref}}},
      {"inpainting",
       {{"feather_px", p.feather_px}, {"opacity", p.opacity}, {"feather_profile", to_string(p.feather_profile)},
        {"denoise_strength", band_to_json(p.denoise)}, {"differential_diffusion", p.differential_diffusion},
        {"spill_texture_ref", p.spill_texture_ref}, {"variants_per_box", p.variants_per_box}}},
      {"detection",
       {{"temperature", d.decoding.temperature}, {"top_p", d.decoding.top_p},
        {"repetition_penalty", d.decoding.repetition_penalty}, {"max_tokens", d.decoding.max_tokens},
        {"coordinate_ceiling", d.frame.ceiling}, {"method", d.method}, {"system_prompt", d.prompt.system_text},
        {"user_prompt", d.prompt.user_text_pattern}, {"allow_any_shots", d.messages.allow_any_shots}}},
      {"evaluation",
       {{"tau", c.evaluation.tau},
        {"match_rule", c.evaluation.rule == MatchRule::best_per_class ? "best_per_class" : "greedy_all"},
        {"sweep_thresholds", c.evaluation.sweep_thresholds}}},
      {"thresholds",
       {{"default", c.thresholds.default_threshold}, {"per_class", per_class},
        {"min_area", c.thresholds.min_area ? json(*c.thresholds.min_area) : json(nullptr)}}},
      {"severity",
       {{"medium_from", c.severity.medium_from}, {"high_from", c.severity.high_from},
        {"small_area_fraction", c.severity.small_area_fraction}}},
      {"monitor",
       {{"sources", sources}, {"classes", c.monitor.classes}, {"poll_interval_ms", c.monitor.poll_interval_ms},
        {"queue_capacity", c.monitor.queue_capacity}, {"detection_log", c.monitor.detection_log},
        {"skip_log", c.monitor.skip_log}, {"alert_log", c.monitor.alert_log}, {"dead_letter", c.monitor.dead_letter},
        {"webhooks", c.monitor.webhooks}}},
      {"annotation",
       {{"store_dir", c.annotation.store_dir}, {"static_dir", c.annotation.static_dir},
        {"token_env", c.annotation.token_env}, {"max_reinpaints", c.annotation.max_reinpaints}}},
      {"paths", {{"output_dir", c.paths.output_dir}, {"replay_log", c.paths.replay_log}}},
      {"parallelism",
       {{"diffusion_jobs", c.parallelism.diffusion_jobs}, {"detection_workers", c.parallelism.detection_workers},
        {"eval_workers", c.parallelism.eval_workers}, {"merge_workers", c.parallelism.merge_workers}}},
      {"retry",
       {{"max_attempts", c.retry.max_attempts}, {"base_backoff_ms", c.retry.base_backoff.count()},
        {"poll_interval_ms", c.retry.poll_interval.count()}, {"max_polls", c.retry.max_polls}}},
      {"splits", splits},
  };
}

inline Config load_config(const std::filesystem::path& path) {
  return config_from_json(parse_json_text(read_text(path)));
}

}  // namespace spillkit
