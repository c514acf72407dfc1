#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <iomanip>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "spillkit/coco.hpp"
#include "spillkit/dedup.hpp"
#include "spillkit/diffusion.hpp"
#include "spillkit/error.hpp"
#include "spillkit/image.hpp"
#include "spillkit/mask.hpp"
#include "spillkit/prompts.hpp"
#include "spillkit/util.hpp"
#include "spillkit/vlm.hpp"

// Dataset-level steps built from the per-item operations: the batch forms
// the command-line tool runs.

namespace spillkit {

/// Seed of the i-th job in a batch started from `seed`.
inline std::uint64_t batch_seed(std::uint64_t seed, std::uint64_t i) { return mix64(seed + mix64(i)); }

inline std::vector<DiffusionJob> scene_jobs(const GenerationProfile& profile, const std::string& style_ref,
                                            std::uint64_t seed, std::size_t count) {
  std::vector<DiffusionJob> jobs;
  for (std::size_t i = 0; i < count; ++i) jobs.push_back(DiffusionJob::from(build_scene_job(profile, style_ref, batch_seed(seed, i))));
  return jobs;
}

struct MaskArtifact {
  std::int64_t annotation_id = 0;
  std::int64_t image_id = 0;
  std::filesystem::path png;
  std::filesystem::path sidecar;
  MaskSpec spec;
};

inline MaskSpec mask_spec_for(const BBox& bbox, const InpaintProfile& profile) {
  MaskSpec spec;
  spec.bbox = bbox;
  spec.feather_px = profile.feather_px;
  spec.opacity = profile.opacity;
  spec.profile = profile.feather_profile;
  return spec;
}

/// One feathered mask and sidecar per annotation, named
/// "image<image_id>-ann<annotation_id>".
inline std::vector<MaskArtifact> write_masks(const CocoDataset& ds, const InpaintProfile& profile,
                                             const std::filesystem::path& out_dir) {
  profile.validate();
  std::filesystem::create_directories(out_dir);
  std::vector<MaskArtifact> out;
  for (const auto& a : ds.annotations) {
    const CocoImage* im = ds.find_image(a.image_id);
    if (im == nullptr) throw Error(Errc::validation, "annotation " + std::to_string(a.id) + " has no image");
    MaskArtifact m;
    m.annotation_id = a.id;
    m.image_id = a.image_id;
    m.spec = mask_spec_for(a.box(), profile);
    const std::string stem = "image" + std::to_string(a.image_id) + "-ann" + std::to_string(a.id);
    m.png = out_dir / (stem + ".png");
    m.sidecar = out_dir / (stem + ".json");
    save_png(m.png, render_feathered_mask(m.spec, im->width, im->height));
    write_text_atomic(m.sidecar, mask_sidecar(m.spec, im->width, im->height).dump(2));
    out.push_back(std::move(m));
  }
  return out;
}

inline json to_json(const MaskArtifact& m) {
  return {{"annotation_id", m.annotation_id}, {"image_id", m.image_id}, {"png", m.png.string()}, {"sidecar", m.sidecar.string()}};
}

/// One inpainting job per (mask, variant) over scenes found in `images_dir`.
inline std::vector<DiffusionJob> inpaint_jobs(const CocoDataset& ds, const std::vector<MaskArtifact>& masks,
                                              const std::filesystem::path& images_dir, const ClassRegistry& registry,
                                              const InpaintProfile& profile, std::uint64_t seed) {
  std::vector<DiffusionJob> jobs;
  for (const auto& m : masks) {
    const CocoImage* im = ds.find_image(m.image_id);
    if (im == nullptr) throw Error(Errc::validation, "mask references unknown image " + std::to_string(m.image_id));
    const CocoAnnotation* ann = nullptr;
    for (const auto& a : ds.annotations)
      if (a.id == m.annotation_id) ann = &a;
    if (ann == nullptr) throw Error(Errc::validation, "mask references unknown annotation " + std::to_string(m.annotation_id));
    const SizedImage scene{(images_dir / im->file_name).string(), im->width, im->height};
    const SizedImage mask{m.png.string(), im->width, im->height};
    for (int v = 0; v < profile.variants_per_box; ++v) {
      const auto s = batch_seed(seed, static_cast<std::uint64_t>(m.annotation_id) * 1000 + static_cast<std::uint64_t>(v));
      jobs.push_back(DiffusionJob::from(build_inpaint_job(scene, mask, m.spec, ann->category_id, registry, profile, s)));
    }
  }
  return jobs;
}

struct YoloExport {
  std::vector<std::string> class_names;  // by YOLO index
  std::map<std::string, std::string> label_files;  // file stem -> label text
};

/// Label text per image (stem of file_name) plus the class-index table.
inline YoloExport to_yolo(const CocoDataset& ds) {
  YoloExport out;
  const auto index = yolo_class_index(ds);
  out.class_names.resize(index.size());
  for (const auto& c : ds.categories) out.class_names[static_cast<std::size_t>(index.at(c.id))] = c.name;
  for (const auto& im : ds.images) {
    std::vector<YoloRecord> recs;
    for (const auto& a : ds.annotations) {
      if (a.image_id != im.id) continue;
      const auto it = index.find(a.category_id);
      if (it == index.end()) throw Error(Errc::validation, "annotation " + std::to_string(a.id) + " has an unknown category");
      recs.push_back(coco_to_yolo(a.bbox, it->second, im.width, im.height));
    }
    out.label_files[std::filesystem::path(im.file_name).stem().string()] = format_yolo_txt(recs);
  }
  return out;
}

inline void write_yolo(const YoloExport& y, const std::filesystem::path& out_dir) {
  std::filesystem::create_directories(out_dir);
  std::string names;
  for (const auto& n : y.class_names) names += n + "\n";
  write_text_atomic(out_dir / "classes.txt", names);
  for (const auto& [stem, text] : y.label_files) write_text_atomic(out_dir / (stem + ".txt"), text);
}

/// Rebuild a COCO dataset from YOLO label files. Image sizes are read from
/// the PNG with the same stem in `images_dir`; class names come from
/// classes.txt when present, else from the registry in id order.
inline CocoDataset from_yolo(const std::filesystem::path& labels_dir, const std::filesystem::path& images_dir,
                             const ClassRegistry& registry) {
  CocoDataset ds;
  std::vector<std::string> names;
  if (std::filesystem::exists(labels_dir / "classes.txt")) {
    std::istringstream in(read_text(labels_dir / "classes.txt"));
    for (std::string line; std::getline(in, line);)
      if (!line.empty()) names.push_back(line);
  } else {
    for (const auto& c : registry.classes()) names.push_back(c.name);
  }
  for (std::size_t i = 0; i < names.size(); ++i) {
    const ClassInfo* known = registry.find(names[i]);
    ds.categories.push_back({known ? known->id : static_cast<ClassId>(i + 1), names[i], json::object()});
  }
  std::vector<std::filesystem::path> labels;
  for (const auto& e : std::filesystem::directory_iterator(labels_dir))
    if (e.path().extension() == ".txt" && e.path().filename() != "classes.txt") labels.push_back(e.path());
  std::sort(labels.begin(), labels.end());
  std::int64_t image_id = 1, ann_id = 1;
  for (const auto& lp : labels) {
    const auto png = images_dir / (lp.stem().string() + ".png");
    const auto size = png_size(read_file(png));
    if (!size) throw Error(Errc::invalid_input, png.string() + " is not a PNG image");
    ds.images.push_back({image_id, png.filename().string(), size->width, size->height, json::object()});
    for (const auto& r : parse_yolo_txt(read_text(lp))) {
      if (static_cast<std::size_t>(r.class_idx) >= ds.categories.size())
        throw Error(Errc::validation, lp.string() + " uses class index " + std::to_string(r.class_idx) + " with no name");
      CocoAnnotation a;
      a.id = ann_id++;
      a.image_id = image_id;
      a.category_id = ds.categories[static_cast<std::size_t>(r.class_idx)].id;
      a.bbox = yolo_to_coco(r, size->width, size->height);
      ds.annotations.push_back(std::move(a));
    }
    ++image_id;
  }
  validate(ds);
  return ds;
}

/// PNG files of a directory as dedup inputs keyed by file name.
inline std::vector<DedupInput> png_inputs(const std::filesystem::path& dir) {
  std::vector<DedupInput> out;
  for (const auto& e : std::filesystem::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".png") out.push_back({e.path().filename().string(), e.path()});
  std::sort(out.begin(), out.end(), [](const DedupInput& a, const DedupInput& b) { return a.id < b.id; });
  return out;
}

inline json to_json(const DedupResult& r) {
  json clusters = json::array();
  for (const auto& c : r.clusters) clusters.push_back({{"canonical", c.canonical}, {"members", c.members}});
  json skipped = json::array();
  for (const auto& s : r.skipped) skipped.push_back({{"id", s.id}, {"reason", s.reason}});
  json hashes = json::object();
  for (const auto& [id, h] : r.hashes) {
    std::ostringstream os;
    os << std::hex << std::setw(16) << std::setfill('0') << h.bits;
    hashes[id] = os.str();
  }
  return {{"clusters", clusters}, {"skipped", skipped}, {"hashes", hashes}};
}

/// The first k images of `pool` (in pool order) as a support set.
inline IclSupportSet support_set_from(const CocoDataset& ds, const std::vector<std::int64_t>& pool, std::size_t k,
                                      const std::filesystem::path& images_dir) {
  if (pool.size() < k)
    throw Error(Errc::count, "support pool has " + std::to_string(pool.size()) + " images, " + std::to_string(k) + " requested");
  IclSupportSet s;
  for (std::size_t i = 0; i < k; ++i) {
    const CocoImage* im = ds.find_image(pool[i]);
    if (im == nullptr) throw Error(Errc::validation, "support pool references unknown image " + std::to_string(pool[i]));
    SupportExample ex;
    ex.image.image_id = im->id;
    ex.image.uri = (images_dir / im->file_name).string();
    ex.image.width = im->width;
    ex.image.height = im->height;
    ex.ground_truths = ground_truths_for(ds, im->id);
    s.examples.push_back(std::move(ex));
  }
  return s;
}

inline std::vector<CocoAnnotation> to_coco_results(std::int64_t image_id, const std::vector<Detection>& dets) {
  std::vector<CocoAnnotation> out;
  for (const auto& d : dets) {
    CocoAnnotation a;
    a.has_id = false;
    a.image_id = image_id;
    a.category_id = d.class_id;
    a.bbox = d.bbox.xywh();
    a.score = d.score;
    out.push_back(std::move(a));
  }
  return out;
}

}  // namespace spillkit
