#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <variant>
#include <vector>

#include "spillkit/concurrency.hpp"
#include "spillkit/error.hpp"
#include "spillkit/http.hpp"
#include "spillkit/image.hpp"
#include "spillkit/mask.hpp"
#include "spillkit/prompts.hpp"
#include "spillkit/util.hpp"

namespace spillkit {

/// Closed interval of allowed parameter values.
struct Band {
  double lo = 0;
  double hi = 0;

  bool contains(double v) const { return v >= lo && v <= hi; }
  double lerp(double t) const { return lo + (hi - lo) * t; }
  bool operator==(const Band&) const = default;
};

inline constexpr Band kLoraStrengthBand{0.2, 0.4};
inline constexpr Band kDenoiseBand{0.5, 0.6};

/// Per-job value drawn from a band: a fixed value is a degenerate band.
inline Band band_from_json(const json& j) {
  if (j.is_number()) return {j.get<double>(), j.get<double>()};
  const auto v = j.get<std::vector<double>>();
  if (v.size() != 2) throw Error(Errc::invalid_input, "a band is a number or [lo, hi]");
  return {v[0], v[1]};
}

inline json band_to_json(const Band& b) {
  if (b.lo == b.hi) return b.lo;
  return json::array({b.lo, b.hi});
}

inline void check_band(const std::string& field, const Band& value, const Band& allowed) {
  if (!(value.lo <= value.hi) || !allowed.contains(value.lo) || !allowed.contains(value.hi))
    throw BandError(field, "must lie within [" + std::to_string(allowed.lo) + ", " + std::to_string(allowed.hi) + "]");
}

/// Scene generation parameters. Defaults are the reference SDXL settings.
struct GenerationProfile {
  int width = 1024;
  int height = 1024;
  int steps = 64;
  double cfg_scale = 8.0;
  std::string sampler = "DDPM-SDE-2m-GPU";
  std::string scheduler = "Karras";
  Band lora_strength{0.2, 0.4};
  double ip_adapter_strength = 0.6;
  std::string positive_prompt = std::string(prompts::kScenePositive);
  std::string negative_prompt = std::string(prompts::kSceneNegative);

  void validate(const std::string& prefix = "generation") const {
    if (width <= 0 || width % 8 != 0) throw BandError(prefix + ".width", "must be a positive multiple of 8");
    if (height <= 0 || height % 8 != 0) throw BandError(prefix + ".height", "must be a positive multiple of 8");
    if (steps <= 0) throw BandError(prefix + ".steps", "must be positive");
    if (!(cfg_scale > 0)) throw BandError(prefix + ".cfg_scale", "must be positive");
    check_band(prefix + ".lora_strength", lora_strength, kLoraStrengthBand);
    if (!(ip_adapter_strength > 0 && ip_adapter_strength <= 1))
      throw BandError(prefix + ".ip_adapter_strength", "must lie in (0, 1]");
  }
};

struct InpaintProfile {
  double feather_px = 50.0;
  double opacity = 0.75;
  FeatherProfile feather_profile = FeatherProfile::linear;
  Band denoise{0.5, 0.6};
  bool differential_diffusion = true;
  std::string spill_texture_ref;
  int variants_per_box = 1;

  void validate(const std::string& prefix = "inpainting") const {
    if (!(feather_px >= 0) || !std::isfinite(feather_px)) throw BandError(prefix + ".feather_px", "must be non-negative");
    if (!(opacity > 0 && opacity <= 1)) throw BandError(prefix + ".opacity", "must lie in (0, 1]");
    check_band(prefix + ".denoise_strength", denoise, kDenoiseBand);
    if (variants_per_box < 1) throw BandError(prefix + ".variants_per_box", "must be at least 1");
  }
};

struct SceneJob {
  std::string positive_prompt;
  std::string negative_prompt;
  int width = 1024;
  int height = 1024;
  int steps = 64;
  double cfg_scale = 8.0;
  std::string sampler_id;
  std::string scheduler_id;
  double lora_strength = 0.3;
  double ip_adapter_strength = 0.6;
  std::string style_ref;
  std::uint64_t seed = 0;

  bool operator==(const SceneJob&) const = default;
};

struct InpaintJob {
  std::string scene_ref;
  std::string mask_ref;
  int width = 0;
  int height = 0;
  MaskSpec mask;
  ClassId class_id = 0;
  std::string positive_prompt;
  std::string negative_prompt;
  double denoise_strength = 0.55;
  bool differential_diffusion = true;
  double mask_opacity = 0.75;
  std::string ip_adapter_spill_ref;
  std::uint64_t seed = 0;

  bool operator==(const InpaintJob&) const = default;
};

inline json to_json(const SceneJob& j) {
  return {{"kind", "scene"},
          {"positive_prompt", j.positive_prompt},
          {"negative_prompt", j.negative_prompt},
          {"width", j.width},
          {"height", j.height},
          {"steps", j.steps},
          {"cfg_scale", j.cfg_scale},
          {"sampler", j.sampler_id},
          {"scheduler", j.scheduler_id},
          {"lora_strength", j.lora_strength},
          {"ip_adapter_strength", j.ip_adapter_strength},
          {"style_ref", j.style_ref},
          {"seed", j.seed}};
}

inline SceneJob scene_job_from_json(const json& j) {
  SceneJob s;
  s.positive_prompt = j.at("positive_prompt").get<std::string>();
  s.negative_prompt = j.at("negative_prompt").get<std::string>();
  s.width = j.at("width").get<int>();
  s.height = j.at("height").get<int>();
  s.steps = j.at("steps").get<int>();
  s.cfg_scale = j.at("cfg_scale").get<double>();
  s.sampler_id = j.at("sampler").get<std::string>();
  s.scheduler_id = j.at("scheduler").get<std::string>();
  s.lora_strength = j.at("lora_strength").get<double>();
  s.ip_adapter_strength = j.at("ip_adapter_strength").get<double>();
  s.style_ref = j.at("style_ref").get<std::string>();
  s.seed = j.at("seed").get<std::uint64_t>();
  return s;
}

inline json to_json(const InpaintJob& j) {
  return {{"kind", "inpaint"},
          {"scene_ref", j.scene_ref},
          {"mask_ref", j.mask_ref},
          {"width", j.width},
          {"height", j.height},
          {"mask", mask_sidecar(j.mask, j.width, j.height)},
          {"class_id", j.class_id},
          {"positive_prompt", j.positive_prompt},
          {"negative_prompt", j.negative_prompt},
          {"denoise_strength", j.denoise_strength},
          {"differential_diffusion", j.differential_diffusion},
          {"mask_opacity", j.mask_opacity},
          {"ip_adapter_spill_ref", j.ip_adapter_spill_ref},
          {"seed", j.seed}};
}

inline InpaintJob inpaint_job_from_json(const json& j) {
  InpaintJob s;
  s.scene_ref = j.at("scene_ref").get<std::string>();
  s.mask_ref = j.at("mask_ref").get<std::string>();
  s.width = j.at("width").get<int>();
  s.height = j.at("height").get<int>();
  s.mask = mask_spec_from_sidecar(j.at("mask"));
  s.class_id = j.at("class_id").get<ClassId>();
  s.positive_prompt = j.at("positive_prompt").get<std::string>();
  s.negative_prompt = j.at("negative_prompt").get<std::string>();
  s.denoise_strength = j.at("denoise_strength").get<double>();
  s.differential_diffusion = j.at("differential_diffusion").get<bool>();
  s.mask_opacity = j.at("mask_opacity").get<double>();
  s.ip_adapter_spill_ref = j.at("ip_adapter_spill_ref").get<std::string>();
  s.seed = j.at("seed").get<std::uint64_t>();
  return s;
}

// Independent per-field random streams derived from the job seed.
inline constexpr std::uint64_t kLoraStream = 0x4c6f5241;
inline constexpr std::uint64_t kDenoiseStream = 0x44656e6f;

inline SceneJob build_scene_job(const GenerationProfile& profile, const std::string& style_ref, std::uint64_t seed) {
  profile.validate();
  SceneJob j;
  j.positive_prompt = profile.positive_prompt;
  j.negative_prompt = profile.negative_prompt;
  j.width = profile.width;
  j.height = profile.height;
  j.steps = profile.steps;
  j.cfg_scale = profile.cfg_scale;
  j.sampler_id = profile.sampler;
  j.scheduler_id = profile.scheduler;
  j.lora_strength = profile.lora_strength.lerp(unit_interval(seed, kLoraStream));
  j.ip_adapter_strength = profile.ip_adapter_strength;
  j.style_ref = style_ref;
  j.seed = seed;
  return j;
}

/// An image on disk (or at a URL) together with its pixel size.
struct SizedImage {
  std::string ref;
  int width = 0;
  int height = 0;
};

inline InpaintJob build_inpaint_job(const SizedImage& scene, const SizedImage& mask_image, const MaskSpec& mask,
                                    ClassId class_id, const ClassRegistry& registry, const InpaintProfile& profile,
                                    std::uint64_t seed) {
  profile.validate();
  const ClassInfo& cls = registry.at(class_id);
  if (scene.width != mask_image.width || scene.height != mask_image.height)
    throw Error(Errc::geometry, "mask is " + std::to_string(mask_image.width) + "x" + std::to_string(mask_image.height) +
                                    " but scene is " + std::to_string(scene.width) + "x" + std::to_string(scene.height));
  InpaintJob j;
  j.scene_ref = scene.ref;
  j.mask_ref = mask_image.ref;
  j.width = scene.width;
  j.height = scene.height;
  j.mask = mask;
  j.class_id = class_id;
  j.positive_prompt = cls.inpaint_positive;
  j.negative_prompt = cls.inpaint_negative;
  j.denoise_strength = profile.denoise.lerp(unit_interval(seed, kDenoiseStream));
  j.differential_diffusion = profile.differential_diffusion;
  j.mask_opacity = mask.opacity;
  j.ip_adapter_spill_ref = profile.spill_texture_ref;
  j.seed = seed;
  return j;
}

// ---------------------------------------------------------------------------
// Job execution

enum class JobKind { scene, inpaint };
enum class JobStatus { queued, running, done, failed };

inline std::string to_string(JobKind k) { return k == JobKind::scene ? "scene" : "inpaint"; }

inline std::string to_string(JobStatus s) {
  switch (s) {
    case JobStatus::queued: return "queued";
    case JobStatus::running: return "running";
    case JobStatus::done: return "done";
    case JobStatus::failed: return "failed";
  }
  return "unknown";
}

/// A job ready for submission: its kind and full parameter echo.
struct DiffusionJob {
  JobKind kind = JobKind::scene;
  json params;

  static DiffusionJob from(const SceneJob& j) { return {JobKind::scene, to_json(j)}; }
  static DiffusionJob from(const InpaintJob& j) { return {JobKind::inpaint, to_json(j)}; }

  /// Content-derived id, stable across reruns of the same parameters.
  std::string id() const {
    const std::string s = params.dump();
    return to_string(kind) + "-" + sha256_hex(std::span(reinterpret_cast<const std::uint8_t*>(s.data()), s.size())).substr(0, 16);
  }
};

struct JobRecord {
  std::string job_id;
  JobKind kind = JobKind::scene;
  JobStatus status = JobStatus::queued;
  int attempts = 0;
  std::string artifact_path;
  std::string sidecar_path;
  std::string error;
  std::vector<std::pair<JobStatus, std::string>> history;  // status, UTC time

  /// Forward-only transitions: queued -> running -> {done, failed}.
  void advance(JobStatus next) {
    const bool ok = (status == JobStatus::queued && (next == JobStatus::running || next == JobStatus::failed)) ||
                    (status == JobStatus::running && (next == JobStatus::done || next == JobStatus::failed)) ||
                    (status == next && next == JobStatus::running);
    if (!ok) throw Error(Errc::state, "job " + job_id + " cannot move from " + to_string(status) + " to " + to_string(next));
    if (status != next || history.empty()) history.emplace_back(next, utc_timestamp());
    status = next;
  }
};

inline json to_json(const JobRecord& r) {
  json hist = json::array();
  for (const auto& [s, t] : r.history) hist.push_back({{"status", to_string(s)}, {"at", t}});
  return {{"job_id", r.job_id},       {"kind", to_string(r.kind)},         {"status", to_string(r.status)},
          {"attempts", r.attempts},   {"artifact_path", r.artifact_path}, {"sidecar_path", r.sidecar_path},
          {"error", r.error},         {"history", hist}};
}

/// What a backend said about a job.
struct BackendReply {
  JobStatus status = JobStatus::queued;
  std::string job_id;
  Bytes image;
  std::string error;
  /// The backend refused the content; retrying cannot help.
  bool rejected = false;
};

/// Minimal REST surface of a diffusion server. Retryable failures
/// (connection errors, timeouts, 5xx) raise Errc::transport.
class DiffusionBackend {
 public:
  virtual ~DiffusionBackend() = default;
  virtual BackendReply submit(const DiffusionJob& job) = 0;
  virtual BackendReply poll(const std::string& backend_job_id) = 0;
};

namespace detail {

inline void inline_local_image(json& body, const std::string& field) {
  if (!body.contains(field)) return;
  const auto ref = body[field].get<std::string>();
  std::error_code ec;
  if (!ref.empty() && std::filesystem::is_regular_file(ref, ec)) body[field + "_b64"] = base64_encode(read_file(ref));
}

}  // namespace detail

/// JSON-over-HTTP backend: POST /txt2img or /inpaint with the job parameters;
/// the reply either carries the finished image or a job id to poll at
/// GET /jobs/{id}. Images travel as base64 PNG ("image_b64") or a URL
/// ("image_url").
class HttpDiffusionBackend : public DiffusionBackend {
 public:
  explicit HttpDiffusionBackend(const std::string& url, std::string api_key = {},
                                std::chrono::milliseconds timeout = std::chrono::seconds(120), bool inline_images = true)
      : client_(url, std::move(api_key), timeout), inline_images_(inline_images) {}

  BackendReply submit(const DiffusionJob& job) override {
    json body = job.params;
    if (inline_images_) {
      for (const char* f : {"style_ref", "scene_ref", "mask_ref", "ip_adapter_spill_ref"}) detail::inline_local_image(body, f);
    }
    const auto res = client_.post(job.kind == JobKind::scene ? "/txt2img" : "/inpaint", body.dump());
    return interpret(res);
  }

  BackendReply poll(const std::string& backend_job_id) override { return interpret(client_.get("/jobs/" + backend_job_id)); }

 private:
  BackendReply interpret(const http::Response& res) {
    if (res.status >= 500 || res.status == 429)
      throw Error(Errc::transport, "diffusion backend returned HTTP " + std::to_string(res.status));
    json j;
    try {
      j = json::parse(res.body);
    } catch (const json::exception&) {
      j = json::object();
    }
    BackendReply r;
    r.error = j.value("error", "");
    if (res.status == 422 || res.status == 451 || j.value("reason", "") == "content_filter") {
      r.status = JobStatus::failed;
      r.rejected = true;
      if (r.error.empty()) r.error = "content filter rejection";
      return r;
    }
    if (res.status >= 400) {
      r.status = JobStatus::failed;
      r.rejected = true;
      if (r.error.empty()) r.error = "HTTP " + std::to_string(res.status);
      return r;
    }
    r.job_id = j.value("job_id", "");
    const std::string status = j.value("status", r.job_id.empty() ? "done" : "queued");
    if (status == "done") {
      r.status = JobStatus::done;
      if (j.contains("image_b64")) {
        r.image = base64_decode(j.at("image_b64").get<std::string>());
      } else if (j.contains("image_url")) {
        const auto img = client_.get_url(j.at("image_url").get<std::string>());
        if (img.status != 200) throw Error(Errc::transport, "artifact download returned HTTP " + std::to_string(img.status));
        r.image.assign(img.body.begin(), img.body.end());
      } else {
        throw Error(Errc::transport, "backend reported done without an image");
      }
    } else if (status == "failed") {
      r.status = JobStatus::failed;
    } else if (status == "running") {
      r.status = JobStatus::running;
    } else {
      r.status = JobStatus::queued;
    }
    return r;
  }

  http::Client client_;
  bool inline_images_;
};

using Sleeper = std::function<void(std::chrono::milliseconds)>;

inline Sleeper real_sleeper() {
  return [](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); };
}

struct RetryPolicy {
  int max_attempts = 3;
  std::chrono::milliseconds base_backoff{1000};
  std::chrono::milliseconds poll_interval{500};
  int max_polls = 1200;

  /// Delay before attempt n+1 after attempt n failed (n >= 1): base * 2^(n-1).
  std::chrono::milliseconds backoff(int failed_attempt) const { return base_backoff * (1LL << (failed_attempt - 1)); }
};

/// Sidecar written next to every artifact. Holds only the job's identity and
/// parameters so identical jobs produce byte-identical sidecars; timing
/// lives in the JobRecord.
inline json artifact_sidecar(const DiffusionJob& job) {
  return {{"job_id", job.id()}, {"kind", to_string(job.kind)}, {"params", job.params}};
}

/// Submit, poll to a terminal state, and persist the artifact and sidecar.
inline JobRecord submit_and_poll(const DiffusionJob& job, DiffusionBackend& backend, const RetryPolicy& policy,
                                 const std::filesystem::path& out_dir, const Sleeper& sleep = real_sleeper()) {
  JobRecord rec;
  rec.job_id = job.id();
  rec.kind = job.kind;
  rec.history.emplace_back(JobStatus::queued, utc_timestamp());
  rec.advance(JobStatus::running);

  while (rec.attempts < policy.max_attempts) {
    ++rec.attempts;
    try {
      BackendReply reply = backend.submit(job);
      int polls = 0;
      while (reply.status == JobStatus::queued || reply.status == JobStatus::running) {
        if (++polls > policy.max_polls) throw Error(Errc::transport, "job did not finish within the poll budget");
        sleep(policy.poll_interval);
        reply = backend.poll(reply.job_id);
      }
      if (reply.status == JobStatus::done) {
        const auto artifact = out_dir / (rec.job_id + ".png");
        const auto sidecar = out_dir / (rec.job_id + ".json");
        write_file_atomic(artifact, reply.image);
        write_text_atomic(sidecar, artifact_sidecar(job).dump(2));
        rec.artifact_path = artifact.string();
        rec.sidecar_path = sidecar.string();
        rec.error.clear();
        rec.advance(JobStatus::done);
        return rec;
      }
      rec.error = reply.error.empty() ? "backend reported failure" : reply.error;
      if (reply.rejected) break;
    } catch (const Error& e) {
      if (e.code() != Errc::transport) throw;
      rec.error = e.what();
    }
    if (rec.attempts < policy.max_attempts) sleep(policy.backoff(rec.attempts));
  }
  rec.advance(JobStatus::failed);
  return rec;
}

/// Runs jobs with at most `parallelism` in flight; records keep input order.
inline std::vector<JobRecord> run_batch(const std::vector<DiffusionJob>& jobs, DiffusionBackend& backend,
                                        const RetryPolicy& policy, std::size_t parallelism,
                                        const std::filesystem::path& out_dir, const Sleeper& sleep = real_sleeper()) {
  if (parallelism < 1) throw Error(Errc::invalid_input, "parallelism must be at least 1");
  std::vector<JobRecord> records(jobs.size());
  parallel_for(jobs.size(), parallelism, [&](std::size_t i) {
    try {
      records[i] = submit_and_poll(jobs[i], backend, policy, out_dir, sleep);
    } catch (const std::exception& e) {
      JobRecord r;
      r.job_id = jobs[i].id();
      r.kind = jobs[i].kind;
      r.history.emplace_back(JobStatus::queued, utc_timestamp());
      r.error = e.what();
      r.advance(JobStatus::failed);
      records[i] = std::move(r);
    }
  });
  return records;
}

}  // namespace spillkit
