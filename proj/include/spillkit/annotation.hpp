#pragma once

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <httplib.h>

#include "spillkit/coco.hpp"
#include "spillkit/diffusion.hpp"
#include "spillkit/error.hpp"
#include "spillkit/geometry.hpp"
#include "spillkit/image.hpp"
#include "spillkit/mask.hpp"
#include "spillkit/prompts.hpp"
#include "spillkit/util.hpp"

namespace spillkit {

enum class TaskStatus { pending, annotated, inpainted, accepted, rejected };

inline std::string to_string(TaskStatus s) {
  switch (s) {
    case TaskStatus::pending: return "pending";
    case TaskStatus::annotated: return "annotated";
    case TaskStatus::inpainted: return "inpainted";
    case TaskStatus::accepted: return "accepted";
    case TaskStatus::rejected: return "rejected";
  }
  return "?";
}

inline TaskStatus task_status_from_string(const std::string& s) {
  for (auto st : {TaskStatus::pending, TaskStatus::annotated, TaskStatus::inpainted, TaskStatus::accepted,
                  TaskStatus::rejected})
    if (to_string(st) == s) return st;
  throw Error(Errc::validation, "unknown task status '" + s + "'");
}

inline bool transition_allowed(TaskStatus from, TaskStatus to) {
  switch (from) {
    case TaskStatus::pending: return to == TaskStatus::annotated;
    case TaskStatus::annotated: return to == TaskStatus::inpainted;
    case TaskStatus::inpainted: return to == TaskStatus::accepted || to == TaskStatus::rejected;
    case TaskStatus::rejected: return to == TaskStatus::annotated;
    case TaskStatus::accepted: return false;
  }
  return false;
}

enum class Verdict { accept, reject };

inline Verdict verdict_from_string(const std::string& s) {
  if (s == "accept") return Verdict::accept;
  if (s == "reject") return Verdict::reject;
  throw Error(Errc::validation, "verdict must be 'accept' or 'reject'");
}

struct Placement {
  BBox bbox;
  ClassId class_id = 0;
  std::string rationale;
  std::int64_t annotation_id = 0;
};

/// One queued or finished inpainting job belonging to a scene.
struct InpaintTicket {
  std::string job_id;
  int round = 0;
  std::size_t placement = 0;
  int variant = 0;
  std::uint64_t seed = 0;
  std::string mask_path;
  std::string mask_sidecar;
  json params;
  JobStatus status = JobStatus::queued;
  std::string artifact;
  std::string error;
};

struct SceneTask {
  std::int64_t scene_id = 0;
  std::string image;  // relative to the store root
  int width = 0;
  int height = 0;
  std::string source_hash;
  TaskStatus status = TaskStatus::pending;
  std::vector<Placement> placements;
  std::vector<InpaintTicket> jobs;  // current round only
  int round = 0;
  int rejections = 0;
  bool parked = false;
  std::string last_error;
  std::vector<std::int64_t> corpus_image_ids;
  std::vector<std::pair<TaskStatus, std::string>> history;

  void advance(TaskStatus next) {
    if (!transition_allowed(status, next))
      throw Error(Errc::state, "scene " + std::to_string(scene_id) + " cannot move from " + to_string(status) + " to " +
                                   to_string(next));
    status = next;
    history.emplace_back(next, utc_timestamp());
  }
};

inline json to_json(const InpaintTicket& t) {
  return {{"job_id", t.job_id}, {"round", t.round},   {"placement", t.placement},   {"variant", t.variant},
          {"seed", t.seed},     {"mask_path", t.mask_path}, {"mask_sidecar", t.mask_sidecar}, {"params", t.params},
          {"status", to_string(t.status)}, {"artifact", t.artifact}, {"error", t.error}};
}

inline JobStatus job_status_from_string(const std::string& s) {
  for (auto st : {JobStatus::queued, JobStatus::running, JobStatus::done, JobStatus::failed})
    if (to_string(st) == s) return st;
  throw Error(Errc::validation, "unknown job status '" + s + "'");
}

inline InpaintTicket ticket_from_json(const json& j) {
  InpaintTicket t;
  t.job_id = j.at("job_id").get<std::string>();
  t.round = j.at("round").get<int>();
  t.placement = j.at("placement").get<std::size_t>();
  t.variant = j.at("variant").get<int>();
  t.seed = j.at("seed").get<std::uint64_t>();
  t.mask_path = j.at("mask_path").get<std::string>();
  t.mask_sidecar = j.at("mask_sidecar").get<std::string>();
  t.params = j.at("params");
  t.status = job_status_from_string(j.at("status").get<std::string>());
  t.artifact = j.value("artifact", "");
  t.error = j.value("error", "");
  return t;
}

inline json placement_to_json(const Placement& p) {
  const auto b = p.bbox.xywh();
  json j = {{"bbox", {number_json(b[0]), number_json(b[1]), number_json(b[2]), number_json(b[3])}},
            {"class_id", p.class_id},
            {"annotation_id", p.annotation_id}};
  if (!p.rationale.empty()) j["rationale"] = p.rationale;
  return j;
}

inline Placement placement_from_json(const json& j) {
  try {
    Placement p;
    const auto b = j.at("bbox").get<std::vector<double>>();
    if (b.size() != 4) throw Error(Errc::validation, "placement bbox must be [x, y, w, h]");
    p.bbox = BBox::from_xywh(b[0], b[1], b[2], b[3]);
    p.class_id = j.at("class_id").get<ClassId>();
    p.rationale = j.value("rationale", "");
    p.annotation_id = j.value("annotation_id", std::int64_t{0});
    return p;
  } catch (const json::exception& e) {
    throw Error(Errc::validation, std::string("malformed placement: ") + e.what());
  }
}

inline json to_json(const SceneTask& t) {
  json placements = json::array(), jobs = json::array(), hist = json::array();
  for (const auto& p : t.placements) placements.push_back(placement_to_json(p));
  for (const auto& j : t.jobs) jobs.push_back(to_json(j));
  for (const auto& [s, at] : t.history) hist.push_back({{"status", to_string(s)}, {"at", at}});
  return {{"scene_id", t.scene_id},       {"image", t.image},           {"width", t.width},
          {"height", t.height},           {"source_hash", t.source_hash}, {"status", to_string(t.status)},
          {"placements", placements},     {"jobs", jobs},               {"round", t.round},
          {"rejections", t.rejections},   {"parked", t.parked},         {"last_error", t.last_error},
          {"corpus_image_ids", t.corpus_image_ids}, {"history", hist}};
}

inline SceneTask scene_task_from_json(const json& j) {
  SceneTask t;
  t.scene_id = j.at("scene_id").get<std::int64_t>();
  t.image = j.at("image").get<std::string>();
  t.width = j.at("width").get<int>();
  t.height = j.at("height").get<int>();
  t.source_hash = j.value("source_hash", "");
  t.status = task_status_from_string(j.at("status").get<std::string>());
  for (const auto& p : j.at("placements")) t.placements.push_back(placement_from_json(p));
  for (const auto& tk : j.at("jobs")) t.jobs.push_back(ticket_from_json(tk));
  t.round = j.value("round", 0);
  t.rejections = j.value("rejections", 0);
  t.parked = j.value("parked", false);
  t.last_error = j.value("last_error", "");
  t.corpus_image_ids = j.value("corpus_image_ids", std::vector<std::int64_t>{});
  for (const auto& h : j.value("history", json::array()))
    t.history.emplace_back(task_status_from_string(h.at("status").get<std::string>()), h.at("at").get<std::string>());
  return t;
}

struct TaskPage {
  std::vector<SceneTask> tasks;
  std::optional<std::string> next_cursor;
};

struct QueuedInpaint {
  std::int64_t scene_id = 0;
  DiffusionJob job;
};

struct CorpusCheck {
  std::size_t images = 0;
  std::vector<std::string> problems;
  bool ok() const { return problems.empty(); }
};

struct AnnotationStoreOptions {
  ClassRegistry registry = ClassRegistry::defaults();
  InpaintProfile inpaint;
  std::uint64_t seed = 0;
  /// Re-inpaint attempts after a rejection before the scene is parked.
  int max_reinpaints = 3;
};

/// Scene tasks, their COCO annotations, and the accepted corpus, persisted
/// under one root directory:
///   state.json        tasks and their queued jobs (one atomic write)
///   annotations.json  COCO annotations of the scenes
///   corpus.json       COCO dataset of accepted images
///   write_order.log   begin/end marks around every COCO write
/// One mutex serializes all mutations, so a COCO file is never written by
/// two handlers at once.
class AnnotationStore {
 public:
  AnnotationStore(std::filesystem::path root, AnnotationStoreOptions opts = {})
      : root_(std::move(root)), opts_(std::move(opts)) {
    namespace fs = std::filesystem;
    opts_.inpaint.validate();
    for (const char* d : {"scenes", "masks", "corpus", "corpus/images", "corpus/masks"}) fs::create_directories(root_ / d);
    if (fs::exists(root_ / "state.json")) {
      const json s = parse_json_text(read_text(root_ / "state.json"));
      next_scene_id_ = s.at("next_scene_id").get<std::int64_t>();
      for (const auto& t : s.at("tasks")) tasks_.push_back(scene_task_from_json(t));
    }
    annotations_ = load_or_empty(root_ / "annotations.json");
    corpus_ = load_or_empty(root_ / "corpus.json");
  }

  const std::filesystem::path& root() const { return root_; }
  const ClassRegistry& registry() const { return opts_.registry; }

  /// Copies a PNG scene into the store as a new pending task. A scene whose
  /// content was imported before returns the existing task.
  SceneTask add_scene(const std::filesystem::path& image) {
    const Bytes bytes = read_file(image);
    const auto size = png_size(bytes);
    if (!size) throw Error(Errc::invalid_input, image.string() + " is not a PNG image");
    const std::string hash = sha256_hex(bytes);
    std::lock_guard lk(mu_);
    for (const auto& t : tasks_)
      if (t.source_hash == hash) return t;
    SceneTask t;
    t.scene_id = next_scene_id_;
    t.image = "scenes/scene-" + std::to_string(t.scene_id) + ".png";
    t.width = size->width;
    t.height = size->height;
    t.source_hash = hash;
    t.history.emplace_back(TaskStatus::pending, utc_timestamp());
    write_file_atomic(root_ / t.image, bytes);

    CocoDataset ann = annotations_;
    ann.images.push_back({t.scene_id, t.image, t.width, t.height, json::object()});
    write_coco("annotations.json", ann, t.scene_id, "add_scene");
    annotations_ = std::move(ann);
    auto tasks = tasks_;
    tasks.push_back(t);
    commit_state(std::move(tasks), next_scene_id_ + 1);
    return t;
  }

  std::vector<SceneTask> import_scenes(const std::filesystem::path& dir) {
    std::vector<std::filesystem::path> files;
    for (const auto& e : std::filesystem::directory_iterator(dir))
      if (e.is_regular_file() && e.path().extension() == ".png") files.push_back(e.path());
    std::sort(files.begin(), files.end());
    std::vector<SceneTask> out;
    for (const auto& f : files) out.push_back(add_scene(f));
    return out;
  }

  /// Tasks in creation order. The cursor is the opaque token returned as
  /// next_cursor by the previous page.
  TaskPage list_tasks(const std::optional<std::string>& status, const std::optional<std::string>& cursor,
                      std::size_t limit = 50) const {
    std::optional<TaskStatus> filter;
    if (status && !status->empty()) filter = task_status_from_string(*status);
    std::int64_t after = -1;
    if (cursor && !cursor->empty()) after = decode_cursor(*cursor);
    if (limit == 0) throw Error(Errc::validation, "page limit must be positive");
    std::lock_guard lk(mu_);
    if (after >= 0 && std::none_of(tasks_.begin(), tasks_.end(), [&](const SceneTask& t) { return t.scene_id == after; }))
      throw Error(Errc::validation, "cursor does not refer to a known task");
    TaskPage page;
    for (const auto& t : tasks_) {
      if (t.scene_id <= after) continue;
      if (filter && t.status != *filter) continue;
      if (page.tasks.size() == limit) {
        page.next_cursor = encode_cursor(page.tasks.back().scene_id);
        break;
      }
      page.tasks.push_back(t);
    }
    return page;
  }

  SceneTask task(std::int64_t scene_id) const {
    std::lock_guard lk(mu_);
    return *find(scene_id);
  }

  /// Record the annotator's boxes, render one feathered mask per box, and
  /// queue the inpainting jobs, all with the move to `annotated`.
  SceneTask submit_placement(std::int64_t scene_id, std::vector<Placement> placements) {
    if (placements.empty()) throw Error(Errc::validation, "a placement needs at least one box");
    std::lock_guard lk(mu_);
    SceneTask t = *find(scene_id);
    if (t.status != TaskStatus::pending && t.status != TaskStatus::rejected)
      throw Error(Errc::state, "scene " + std::to_string(scene_id) + " is " + to_string(t.status) +
                                   "; placements are accepted only while pending or rejected");
    for (const auto& p : placements) {
      if (p.bbox.degenerate()) throw Error(Errc::geometry, "box " + to_string(p.bbox) + " has no area");
      if (p.bbox.x_min < 0 || p.bbox.y_min < 0 || p.bbox.x_max > t.width || p.bbox.y_max > t.height)
        throw Error(Errc::geometry, "box " + to_string(p.bbox) + " extends past the " + std::to_string(t.width) + "x" +
                                        std::to_string(t.height) + " image");
      if (!opts_.registry.contains(p.class_id))
        throw Error(Errc::validation, "class id " + std::to_string(p.class_id) + " is not registered");
    }

    CocoDataset ann = annotations_;
    std::erase_if(ann.annotations, [&](const CocoAnnotation& a) { return a.image_id == scene_id; });
    std::int64_t next_id = ann.next_annotation_id();
    for (auto& p : placements) {
      p.annotation_id = next_id++;
      CocoAnnotation a;
      a.id = p.annotation_id;
      a.image_id = scene_id;
      a.category_id = p.class_id;
      a.bbox = p.bbox.xywh();
      if (!p.rationale.empty()) a.extra["rationale"] = p.rationale;
      ann.annotations.push_back(std::move(a));
    }

    t.placements = std::move(placements);
    t.rejections = 0;
    t.parked = false;
    t.last_error.clear();
    t.round += 1;
    t.jobs.clear();
    for (std::size_t k = 0; k < t.placements.size(); ++k) {
      const auto [mask_path, sidecar_path] = write_mask(t, k);
      queue_variants(t, k, mask_path, sidecar_path);
    }
    t.advance(TaskStatus::annotated);

    write_coco("annotations.json", ann, scene_id, "submit_placement");
    annotations_ = std::move(ann);
    replace_and_commit(std::move(t));
    return *find(scene_id);
  }

  std::vector<QueuedInpaint> queued_jobs() const {
    std::lock_guard lk(mu_);
    std::vector<QueuedInpaint> out;
    for (const auto& t : tasks_)
      for (const auto& j : t.jobs)
        if (j.status == JobStatus::queued) out.push_back({t.scene_id, {JobKind::inpaint, j.params}});
    return out;
  }

  /// Store a job's outcome. When every job of the round is done the scene
  /// moves to `inpainted`.
  SceneTask record_job(std::int64_t scene_id, const JobRecord& rec) {
    std::lock_guard lk(mu_);
    SceneTask t = *find(scene_id);
    auto it = std::find_if(t.jobs.begin(), t.jobs.end(), [&](const InpaintTicket& j) { return j.job_id == rec.job_id; });
    if (it == t.jobs.end())
      throw Error(Errc::not_found, "scene " + std::to_string(scene_id) + " has no current job " + rec.job_id);
    if (t.status != TaskStatus::annotated)
      throw Error(Errc::state, "scene " + std::to_string(scene_id) + " is not waiting for inpainting");
    if (rec.status != JobStatus::done && rec.status != JobStatus::failed)
      throw Error(Errc::state, "job " + rec.job_id + " has not finished");
    it->status = rec.status;
    it->artifact = rec.artifact_path;
    it->error = rec.error;
    if (rec.status == JobStatus::failed) t.last_error = rec.error;
    const bool all_done = std::all_of(t.jobs.begin(), t.jobs.end(), [](const InpaintTicket& j) { return j.status == JobStatus::done; });
    if (all_done) t.advance(TaskStatus::inpainted);
    replace_and_commit(std::move(t));
    return *find(scene_id);
  }

  /// Put failed jobs of the current round back in the queue.
  SceneTask requeue_failed(std::int64_t scene_id) {
    std::lock_guard lk(mu_);
    SceneTask t = *find(scene_id);
    for (auto& j : t.jobs)
      if (j.status == JobStatus::failed) {
        j.status = JobStatus::queued;
        j.error.clear();
      }
    replace_and_commit(std::move(t));
    return *find(scene_id);
  }

  /// Inpainted variants of the current round, in job order.
  std::vector<std::filesystem::path> previews(std::int64_t scene_id) const {
    std::lock_guard lk(mu_);
    const SceneTask& t = *find(scene_id);
    std::vector<std::filesystem::path> out;
    if (t.status != TaskStatus::inpainted && t.status != TaskStatus::accepted) return out;
    for (const auto& j : t.jobs)
      if (j.status == JobStatus::done) out.emplace_back(j.artifact);
    return out;
  }

  /// Accept copies every variant into the corpus with its annotation and
  /// mask sidecar. Reject re-queues the same boxes with fresh seeds until
  /// the retry budget is spent, then parks the scene for new placements.
  SceneTask review(std::int64_t scene_id, Verdict verdict) {
    std::lock_guard lk(mu_);
    SceneTask t = *find(scene_id);
    if (t.status != TaskStatus::inpainted)
      throw Error(Errc::state, "scene " + std::to_string(scene_id) + " is " + to_string(t.status) + ", not inpainted");
    if (verdict == Verdict::accept) {
      CocoDataset corpus = corpus_;
      std::int64_t image_id = 1, ann_id = corpus.next_annotation_id();
      for (const auto& im : corpus.images) image_id = std::max(image_id, im.id + 1);
      for (const auto& j : t.jobs) {
        const Placement& p = t.placements.at(j.placement);
        const std::string stem = "scene-" + std::to_string(t.scene_id) + "-r" + std::to_string(j.round) + "-p" +
                                 std::to_string(j.placement) + "-v" + std::to_string(j.variant);
        const std::string img_rel = "corpus/images/" + stem + ".png";
        const std::string mask_rel = "corpus/masks/" + stem + ".json";
        write_file_atomic(root_ / img_rel, read_file(j.artifact));
        write_text_atomic(root_ / mask_rel, read_text(root_ / j.mask_sidecar));
        CocoImage im{image_id, img_rel, t.width, t.height, {{"scene_id", t.scene_id}, {"job_id", j.job_id}}};
        CocoAnnotation a;
        a.id = ann_id++;
        a.image_id = image_id;
        a.category_id = p.class_id;
        a.bbox = p.bbox.xywh();
        a.extra = {{"mask_sidecar", mask_rel}};
        if (!p.rationale.empty()) a.extra["rationale"] = p.rationale;
        corpus.images.push_back(std::move(im));
        corpus.annotations.push_back(std::move(a));
        t.corpus_image_ids.push_back(image_id++);
      }
      t.advance(TaskStatus::accepted);
      write_coco("corpus.json", corpus, scene_id, "accept");
      corpus_ = std::move(corpus);
    } else {
      t.advance(TaskStatus::rejected);
      t.rejections += 1;
      if (t.rejections <= opts_.max_reinpaints) {
        t.round += 1;
        std::vector<InpaintTicket> previous = std::move(t.jobs);
        t.jobs.clear();
        for (std::size_t k = 0; k < t.placements.size(); ++k) {
          const auto it = std::find_if(previous.begin(), previous.end(), [&](const InpaintTicket& j) { return j.placement == k; });
          queue_variants(t, k, it->mask_path, it->mask_sidecar);
        }
        t.advance(TaskStatus::annotated);
      } else {
        t.parked = true;
      }
    }
    replace_and_commit(std::move(t));
    return *find(scene_id);
  }

  CocoDataset annotations() const {
    std::lock_guard lk(mu_);
    return annotations_;
  }

  CocoDataset corpus() const {
    std::lock_guard lk(mu_);
    return corpus_;
  }

  /// Cross-file check of the accepted corpus: each image has exactly one
  /// annotation, matching a placement of its scene, whose bbox equals its
  /// mask sidecar's bbox, and the image file exists.
  CorpusCheck check_corpus_consistency() const {
    std::lock_guard lk(mu_);
    CorpusCheck out;
    const CocoDataset disk = load_or_empty(root_ / "corpus.json");
    out.images = disk.images.size();
    for (const auto& im : disk.images) {
      const std::string tag = "corpus image " + std::to_string(im.id);
      if (!std::filesystem::exists(root_ / im.file_name)) out.problems.push_back(tag + ": file " + im.file_name + " is missing");
      std::vector<const CocoAnnotation*> anns;
      for (const auto& a : disk.annotations)
        if (a.image_id == im.id) anns.push_back(&a);
      if (anns.size() != 1) {
        out.problems.push_back(tag + ": expected 1 annotation, found " + std::to_string(anns.size()));
        continue;
      }
      const CocoAnnotation& a = *anns.front();
      const auto scene_id = im.extra.value("scene_id", std::int64_t{-1});
      const auto task_it = std::find_if(tasks_.begin(), tasks_.end(), [&](const SceneTask& t) { return t.scene_id == scene_id; });
      if (task_it == tasks_.end()) {
        out.problems.push_back(tag + ": scene " + std::to_string(scene_id) + " is unknown");
      } else if (std::none_of(task_it->placements.begin(), task_it->placements.end(), [&](const Placement& p) {
                   return p.class_id == a.category_id && p.bbox == a.box();
                 })) {
        out.problems.push_back(tag + ": annotation does not match any placement of scene " + std::to_string(scene_id));
      }
      const std::string sidecar = a.extra.value("mask_sidecar", "");
      if (sidecar.empty() || !std::filesystem::exists(root_ / sidecar)) {
        out.problems.push_back(tag + ": mask sidecar is missing");
        continue;
      }
      const MaskSpec spec = mask_spec_from_sidecar(parse_json_text(read_text(root_ / sidecar)));
      if (!(spec.bbox == a.box()))
        out.problems.push_back(tag + ": mask bbox " + to_string(spec.bbox) + " differs from annotation bbox " + to_string(a.box()));
    }
    return out;
  }

 private:
  static std::string encode_cursor(std::int64_t id) { return "after-" + std::to_string(id); }

  static std::int64_t decode_cursor(const std::string& c) {
    static constexpr std::string_view kPrefix = "after-";
    std::int64_t id = -1;
    if (c.rfind(kPrefix, 0) == 0) {
      const char* b = c.data() + kPrefix.size();
      const char* e = c.data() + c.size();
      const auto res = std::from_chars(b, e, id);
      if (res.ec == std::errc() && res.ptr == e && b != e && id >= 0) return id;
    }
    throw Error(Errc::validation, "malformed cursor '" + c + "'");
  }

  CocoDataset load_or_empty(const std::filesystem::path& p) const {
    if (std::filesystem::exists(p)) return parse_coco(read_text(p));
    CocoDataset ds;
    for (const auto& c : opts_.registry.classes()) ds.categories.push_back({c.id, c.name, json::object()});
    return ds;
  }

  const SceneTask* find(std::int64_t id) const {
    for (const auto& t : tasks_)
      if (t.scene_id == id) return &t;
    throw Error(Errc::not_found, "no scene with id " + std::to_string(id));
  }

  std::uint64_t job_seed(const SceneTask& t, std::size_t placement, int variant) const {
    std::uint64_t s = mix64(opts_.seed ^ mix64(static_cast<std::uint64_t>(t.scene_id)));
    s = mix64(s + static_cast<std::uint64_t>(t.round));
    return mix64(s + (static_cast<std::uint64_t>(placement) << 16) + static_cast<std::uint64_t>(variant));
  }

  std::pair<std::string, std::string> write_mask(const SceneTask& t, std::size_t k) {
    const Placement& p = t.placements[k];
    MaskSpec spec;
    spec.bbox = p.bbox;
    spec.feather_px = opts_.inpaint.feather_px;
    spec.opacity = opts_.inpaint.opacity;
    spec.profile = opts_.inpaint.feather_profile;
    const std::string stem = "masks/scene-" + std::to_string(t.scene_id) + "-r" + std::to_string(t.round) + "-p" + std::to_string(k);
    save_png(root_ / (stem + ".png"), render_feathered_mask(spec, t.width, t.height));
    write_text_atomic(root_ / (stem + ".json"), mask_sidecar(spec, t.width, t.height).dump(2));
    return {stem + ".png", stem + ".json"};
  }

  void queue_variants(SceneTask& t, std::size_t k, const std::string& mask_path, const std::string& sidecar_path) {
    const Placement& p = t.placements[k];
    const MaskSpec spec = mask_spec_from_sidecar(parse_json_text(read_text(root_ / sidecar_path)));
    for (int v = 0; v < opts_.inpaint.variants_per_box; ++v) {
      InpaintTicket tk;
      tk.round = t.round;
      tk.placement = k;
      tk.variant = v;
      tk.seed = job_seed(t, k, v);
      tk.mask_path = mask_path;
      tk.mask_sidecar = sidecar_path;
      const InpaintJob job =
          build_inpaint_job({(root_ / t.image).string(), t.width, t.height}, {(root_ / mask_path).string(), t.width, t.height},
                            spec, p.class_id, opts_.registry, opts_.inpaint, tk.seed);
      const DiffusionJob dj = DiffusionJob::from(job);
      tk.job_id = dj.id();
      tk.params = dj.params;
      t.jobs.push_back(std::move(tk));
    }
  }

  void write_coco(const std::string& file, const CocoDataset& ds, std::int64_t scene_id, const std::string& op) {
    const std::int64_t seq = ++write_seq_;
    append_order_log("begin " + std::to_string(seq) + " " + file + " scene=" + std::to_string(scene_id) + " op=" + op);
    write_text_atomic(root_ / file, serialize_coco(ds));
    append_order_log("end " + std::to_string(seq) + " " + file + " scene=" + std::to_string(scene_id));
  }

  void append_order_log(const std::string& line) {
    std::ofstream out(root_ / "write_order.log", std::ios::app);
    out << line << '\n';
  }

  void replace_and_commit(SceneTask t) {
    auto tasks = tasks_;
    for (auto& x : tasks)
      if (x.scene_id == t.scene_id) x = std::move(t);
    commit_state(std::move(tasks), next_scene_id_);
  }

  void commit_state(std::vector<SceneTask> tasks, std::int64_t next_id) {
    json arr = json::array();
    for (const auto& t : tasks) arr.push_back(to_json(t));
    write_text_atomic(root_ / "state.json", json{{"next_scene_id", next_id}, {"tasks", arr}}.dump(2));
    tasks_ = std::move(tasks);
    next_scene_id_ = next_id;
  }

  std::filesystem::path root_;
  AnnotationStoreOptions opts_;
  mutable std::mutex mu_;
  std::vector<SceneTask> tasks_;
  std::int64_t next_scene_id_ = 1;
  std::int64_t write_seq_ = 0;
  CocoDataset annotations_;
  CocoDataset corpus_;
};

/// Runs every queued inpainting job and records the outcomes. Returns the
/// number of jobs run.
inline std::size_t run_queued_inpaints(AnnotationStore& store, DiffusionBackend& backend, const RetryPolicy& policy,
                                       std::size_t parallelism, const std::filesystem::path& out_dir,
                                       const Sleeper& sleep = real_sleeper()) {
  const auto queued = store.queued_jobs();
  std::vector<DiffusionJob> jobs;
  for (const auto& q : queued) jobs.push_back(q.job);
  std::filesystem::create_directories(out_dir);
  const auto records = run_batch(jobs, backend, policy, parallelism, out_dir, sleep);
  for (std::size_t i = 0; i < records.size(); ++i) store.record_job(queued[i].scene_id, records[i]);
  return records.size();
}

inline int http_status_for(Errc code) {
  switch (code) {
    case Errc::validation:
    case Errc::geometry:
    case Errc::invalid_input:
    case Errc::parse:
    case Errc::degenerate_box: return 400;
    case Errc::not_found: return 404;
    case Errc::state: return 409;
    default: return 500;
  }
}

struct AnnotationServerOptions {
  /// When non-empty, every API request must carry it in X-Annotator-Token.
  std::string token;
  /// Directory of the built annotator UI, served at "/".
  std::filesystem::path static_dir;
};

/// HTTP JSON API over an AnnotationStore.
class AnnotationServer {
 public:
  AnnotationServer(AnnotationStore& store, AnnotationServerOptions opts = {}) : store_(store), opts_(std::move(opts)) {
    if (!opts_.static_dir.empty() && std::filesystem::is_directory(opts_.static_dir))
      server_.set_mount_point("/", opts_.static_dir.string());
    server_.set_pre_routing_handler([this](const httplib::Request& req, httplib::Response& res) {
      if (opts_.token.empty() || !is_api(req.path)) return httplib::Server::HandlerResponse::Unhandled;
      if (req.get_header_value("X-Annotator-Token") == opts_.token) return httplib::Server::HandlerResponse::Unhandled;
      reply(res, 401, {{"error", "missing or wrong annotator token"}});
      return httplib::Server::HandlerResponse::Handled;
    });

    server_.Get("/tasks", [this](const httplib::Request& req, httplib::Response& res) {
      guard(res, [&] {
        std::optional<std::string> status, cursor;
        if (req.has_param("status")) status = req.get_param_value("status");
        if (req.has_param("cursor")) cursor = req.get_param_value("cursor");
        std::size_t limit = 50;
        if (req.has_param("limit")) limit = parse_size(req.get_param_value("limit"));
        const auto page = store_.list_tasks(status, cursor, limit);
        json tasks = json::array();
        for (const auto& t : page.tasks) tasks.push_back(to_json(t));
        reply(res, 200, {{"tasks", tasks}, {"next_cursor", page.next_cursor ? json(*page.next_cursor) : json(nullptr)}});
      });
    });
    server_.Get("/classes", [this](const httplib::Request&, httplib::Response& res) {
      json arr = json::array();
      for (const auto& c : store_.registry().classes()) arr.push_back({{"id", c.id}, {"name", c.name}});
      reply(res, 200, {{"classes", arr}});
    });
    server_.Get(R"(/scenes/(\d+))", [this](const httplib::Request& req, httplib::Response& res) {
      guard(res, [&] { reply(res, 200, to_json(store_.task(scene_id(req)))); });
    });
    server_.Get(R"(/scenes/(\d+)/image)", [this](const httplib::Request& req, httplib::Response& res) {
      guard(res, [&] {
        const auto t = store_.task(scene_id(req));
        send_png(res, store_.root() / t.image);
      });
    });
    server_.Get(R"(/scenes/(\d+)/preview)", [this](const httplib::Request& req, httplib::Response& res) {
      guard(res, [&] {
        const auto previews = store_.previews(scene_id(req));
        const std::size_t i = req.has_param("variant") ? parse_size(req.get_param_value("variant")) : 0;
        if (i >= previews.size()) throw Error(Errc::not_found, "no preview " + std::to_string(i) + " for this scene");
        send_png(res, previews[i]);
      });
    });
    server_.Post(R"(/scenes/(\d+)/placements)", [this](const httplib::Request& req, httplib::Response& res) {
      guard(res, [&] {
        const json body = parse_json_text(req.body);
        if (!body.contains("placements") || !body["placements"].is_array())
          throw Error(Errc::validation, "body must hold a 'placements' array");
        std::vector<Placement> placements;
        for (const auto& p : body["placements"]) placements.push_back(placement_from_json(p));
        reply(res, 200, to_json(store_.submit_placement(scene_id(req), std::move(placements))));
      });
    });
    server_.Post(R"(/scenes/(\d+)/review)", [this](const httplib::Request& req, httplib::Response& res) {
      guard(res, [&] {
        const json body = parse_json_text(req.body);
        const Verdict v = verdict_from_string(body.value("verdict", ""));
        reply(res, 200, to_json(store_.review(scene_id(req), v)));
      });
    });
  }

  httplib::Server& server() { return server_; }

  int bind(const std::string& host, int port) {
    const int bound = port == 0 ? server_.bind_to_any_port(host) : (server_.bind_to_port(host, port) ? port : -1);
    if (bound < 0) throw Error(Errc::io, "cannot bind " + host + ":" + std::to_string(port));
    return bound;
  }

  void listen() { server_.listen_after_bind(); }
  void stop() { server_.stop(); }

 private:
  static bool is_api(const std::string& path) {
    return path.rfind("/tasks", 0) == 0 || path.rfind("/scenes", 0) == 0 || path.rfind("/classes", 0) == 0;
  }

  static void reply(httplib::Response& res, int status, const json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
  }

  static std::int64_t scene_id(const httplib::Request& req) { return std::stoll(req.matches[1].str()); }

  static std::size_t parse_size(const std::string& s) {
    std::size_t v = 0;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size()) throw Error(Errc::validation, "'" + s + "' is not a count");
    return v;
  }

  static void send_png(httplib::Response& res, const std::filesystem::path& p) {
    const Bytes bytes = read_file(p);
    res.status = 200;
    res.set_content(std::string(bytes.begin(), bytes.end()), "image/png");
  }

  template <typename Fn>
  static void guard(httplib::Response& res, Fn&& fn) {
    try {
      fn();
    } catch (const Error& e) {
      reply(res, http_status_for(e.code()), {{"error", e.what()}, {"code", std::string(to_string(e.code()))}});
    } catch (const std::exception& e) {
      reply(res, 500, {{"error", e.what()}});
    }
  }

  AnnotationStore& store_;
  AnnotationServerOptions opts_;
  httplib::Server server_;
};

}  // namespace spillkit
