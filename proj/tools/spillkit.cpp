// spillkit: command-line entry point. Every subcommand parses flags, loads the
// shared config, and hands off to the library.

#include <atomic>
#include <chrono>
#include <csignal>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>

#include "spillkit/spillkit.hpp"

namespace fs = std::filesystem;
using namespace spillkit;

namespace {

std::atomic<bool> g_stop{false};

void on_signal(int) { g_stop = true; }

void wait_for_signal() {
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  while (!g_stop) std::this_thread::sleep_for(std::chrono::milliseconds(100));
}

struct Outcome {
  json data;
  std::string text;
  int exit_code = 0;
};

struct Globals {
  std::string config_path;
  bool json_output = false;
};

Config load(const Globals& g) {
  Config c = g.config_path.empty() ? Config{} : load_config(g.config_path);
  c.validate();
  return c;
}

CocoDataset load_coco(const std::string& path) { return parse_coco(read_text(path)); }

std::vector<std::int64_t> all_image_ids(const CocoDataset& ds) {
  std::vector<std::int64_t> ids;
  for (const auto& im : ds.images) ids.push_back(im.id);
  return ids;
}

std::string fmt2(double v) { return fixed_number(v, 2); }

json records_json(const std::vector<JobRecord>& recs) {
  json arr = json::array();
  for (const auto& r : recs) arr.push_back(to_json(r));
  return arr;
}

Outcome job_outcome(const std::vector<JobRecord>& recs) {
  std::size_t failed = 0;
  std::ostringstream os;
  for (const auto& r : recs) {
    if (r.status == JobStatus::failed) ++failed;
    os << r.job_id << "  " << to_string(r.status) << "  " << (r.status == JobStatus::done ? r.artifact_path : r.error) << "\n";
  }
  os << recs.size() - failed << " done, " << failed << " failed\n";
  return {{{"jobs", records_json(recs)}, {"done", recs.size() - failed}, {"failed", failed}}, os.str(), failed ? 1 : 0};
}

HttpDiffusionBackend diffusion_backend(const Config& c) {
  return HttpDiffusionBackend(c.diffusion.url, c.diffusion.api_key(), std::chrono::seconds(c.diffusion.timeout_s),
                              c.diffusion.inline_images);
}

/// Options shared by evaluate and sweep for choosing images and predictions.
struct EvalInputs {
  std::string annotations;
  std::string manifest;
  std::string split_name = "eval";
  std::string replay;
  std::string results;
  std::string images;
  std::string support_manifest;
  std::string support_split = "icl_pool";
  std::size_t shots = 0;
  std::string method;
  std::string column;
  std::string dataset;
  bool all_classes = false;
  std::optional<double> tau;

  void add_to(CLI::App* cmd) {
    cmd->add_option("--annotations", annotations, "COCO ground truth")->required()->check(CLI::ExistingFile);
    cmd->add_option("--manifest", manifest, "split manifest; default is every image")->check(CLI::ExistingFile);
    cmd->add_option("--split", split_name, "split name within the manifest");
    auto* src = cmd->add_option_group("source", "where predictions come from");
    src->add_option("--replay", replay, "replay log of recorded detector responses")->check(CLI::ExistingFile);
    src->add_option("--results", results, "COCO results file from an external detector")->check(CLI::ExistingFile);
    src->add_option("--images", images, "image directory for live detector queries")->check(CLI::ExistingDirectory);
    src->require_option(1);
    cmd->add_option("--support-manifest", support_manifest, "manifest holding the ICL support pool")->check(CLI::ExistingFile);
    cmd->add_option("--support-split", support_split, "split of the support manifest used as the pool");
    cmd->add_option("--shots", shots, "ICL support examples (5, 10 or 15)");
    cmd->add_option("--method", method, "method label for reports");
    cmd->add_option("--column", column, "column label for reports (model size, dataset)");
    cmd->add_option("--dataset", dataset, "dataset label for reports");
    cmd->add_flag("--all-classes", all_classes, "query every registered class, not only annotated ones");
    cmd->add_option("--tau", tau, "IoU threshold")->check(CLI::Range(0.0, 1.0));
  }

  EvalResult run(Config& cfg) const {
    if (tau) cfg.evaluation.tau = *tau;
    cfg.validate();
    const CocoDataset ds = load_coco(annotations);
    const auto split = manifest.empty() ? all_image_ids(ds) : manifest_from_json(parse_json_text(read_text(manifest))).split(split_name);
    EvalOptions opts = cfg.eval_options();
    opts.query_all_classes = all_classes;
    opts.dataset = dataset.empty() ? fs::path(annotations).stem().string() : dataset;
    opts.method = method.empty() ? cfg.detection.method : method;
    opts.column = column;

    if (!replay.empty()) {
      ReplaySource src(read_jsonl(replay), cfg.detection.frame);
      return run_eval(ds, split, src, opts);
    }
    if (!results.empty()) {
      ExternalResultsSource src(parse_coco_results(read_text(results)));
      return run_eval(ds, split, src, opts);
    }
    HttpChatBackend backend(cfg.vlm.url, cfg.vlm.api_key(), std::chrono::seconds(cfg.vlm.timeout_s));
    ReplayLog log(cfg.paths.replay_log);
    DetectorConfig dc = cfg.detection;
    dc.model = cfg.vlm.model;
    dc.method = opts.method;
    VlmDetector detector(backend, cfg.classes, dc, &log);
    std::optional<IclSupportSet> support;
    if (shots > 0) {
      if (support_manifest.empty()) throw Error(Errc::invalid_input, "--shots needs --support-manifest");
      const auto pool = manifest_from_json(parse_json_text(read_text(support_manifest))).split(support_split);
      support = support_set_from(ds, pool, shots, images);
    }
    LiveVlmSource src(detector, images, support ? &*support : nullptr);
    return run_eval(ds, split, src, opts);
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Synthetic hazard data generation, VLM detection, evaluation and monitoring."};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("-c,--config", g.config_path, "JSON config file (see docs/config.md)")->check(CLI::ExistingFile);
  app.add_flag("--json", g.json_output, "machine-readable JSON output");

  std::function<Outcome()> action;

  // generate-scenes -----------------------------------------------------------
  {
    auto* cmd = app.add_subcommand("generate-scenes", "render background scenes through the diffusion backend");
    auto count = std::make_shared<std::size_t>(1);
    auto out = std::make_shared<std::string>();
    auto style = std::make_shared<std::string>();
    auto seed = std::make_shared<std::optional<std::uint64_t>>();
    auto dry = std::make_shared<bool>(false);
    cmd->add_option("-n,--count", *count, "number of scenes")->check(CLI::PositiveNumber);
    cmd->add_option("-o,--out", *out, "output directory (default <output_dir>/scenes)");
    cmd->add_option("--style-ref", *style, "style reference image for the IP-Adapter");
    cmd->add_option("--seed", *seed, "base seed (default from config)");
    cmd->add_flag("--dry-run", *dry, "print the jobs without contacting the backend");
    cmd->callback([&, count, out, style, seed, dry] {
      action = [&g, count, out, style, seed, dry]() -> Outcome {
        Config cfg = load(g);
        const auto jobs = scene_jobs(cfg.generation, style->empty() ? cfg.style_ref : *style, seed->value_or(cfg.seed), *count);
        if (*dry) {
          json arr = json::array();
          for (const auto& j : jobs) arr.push_back({{"job_id", j.id()}, {"params", j.params}});
          return {{{"jobs", arr}}, json{{"jobs", arr}}.dump(2) + "\n"};
        }
        const fs::path dir = out->empty() ? fs::path(cfg.paths.output_dir) / "scenes" : fs::path(*out);
        fs::create_directories(dir);
        auto backend = diffusion_backend(cfg);
        return job_outcome(run_batch(jobs, backend, cfg.retry, cfg.parallelism.diffusion_jobs, dir));
      };
    });
  }

  // make-masks ----------------------------------------------------------------
  {
    auto* cmd = app.add_subcommand("make-masks", "render a feathered mask and sidecar per annotation");
    auto ann = std::make_shared<std::string>();
    auto out = std::make_shared<std::string>();
    cmd->add_option("--annotations", *ann, "COCO annotations")->required()->check(CLI::ExistingFile);
    cmd->add_option("-o,--out", *out, "output directory (default <output_dir>/masks)");
    cmd->callback([&, ann, out] {
      action = [&g, ann, out]() -> Outcome {
        Config cfg = load(g);
        const fs::path dir = out->empty() ? fs::path(cfg.paths.output_dir) / "masks" : fs::path(*out);
        const auto masks = write_masks(load_coco(*ann), cfg.inpainting, dir);
        json arr = json::array();
        for (const auto& m : masks) arr.push_back(to_json(m));
        return {{{"masks", arr}}, std::to_string(masks.size()) + " masks written to " + dir.string() + "\n"};
      };
    });
  }

  // inpaint -------------------------------------------------------------------
  {
    auto* cmd = app.add_subcommand("inpaint", "inpaint hazards into scenes at annotated boxes");
    auto ann = std::make_shared<std::string>();
    auto images = std::make_shared<std::string>();
    auto store = std::make_shared<std::string>();
    auto out = std::make_shared<std::string>();
    auto seed = std::make_shared<std::optional<std::uint64_t>>();
    auto parallel = std::make_shared<std::optional<std::size_t>>();
    cmd->add_option("--annotations", *ann, "COCO annotations of the scenes")->check(CLI::ExistingFile);
    cmd->add_option("--images", *images, "directory holding the scene images")->check(CLI::ExistingDirectory);
    cmd->add_option("--store", *store, "run the jobs queued in an annotation store instead")->check(CLI::ExistingDirectory);
    cmd->add_option("-o,--out", *out, "output directory (default <output_dir>/inpainted)");
    cmd->add_option("--seed", *seed, "base seed (default from config)");
    cmd->add_option("-j,--parallelism", *parallel, "jobs in flight");
    cmd->callback([&, ann, images, store, out, seed, parallel] {
      action = [&g, ann, images, store, out, seed, parallel]() -> Outcome {
        Config cfg = load(g);
        if (*parallel) cfg.parallelism.diffusion_jobs = **parallel;
        cfg.validate();
        const fs::path dir = out->empty() ? fs::path(cfg.paths.output_dir) / "inpainted" : fs::path(*out);
        fs::create_directories(dir);
        auto backend = diffusion_backend(cfg);
        if (!store->empty()) {
          AnnotationStoreOptions so{cfg.classes, cfg.inpainting, cfg.seed, cfg.annotation.max_reinpaints};
          AnnotationStore st(*store, so);
          const auto n = run_queued_inpaints(st, backend, cfg.retry, cfg.parallelism.diffusion_jobs, dir);
          return {{{"jobs_run", n}}, std::to_string(n) + " queued jobs run\n"};
        }
        if (ann->empty() || images->empty()) throw Error(Errc::invalid_input, "inpaint needs --annotations and --images, or --store");
        const CocoDataset ds = load_coco(*ann);
        const auto masks = write_masks(ds, cfg.inpainting, dir / "masks");
        const auto jobs = inpaint_jobs(ds, masks, *images, cfg.classes, cfg.inpainting, seed->value_or(cfg.seed));
        return job_outcome(run_batch(jobs, backend, cfg.retry, cfg.parallelism.diffusion_jobs, dir));
      };
    });
  }

  // annotate-serve ------------------------------------------------------------
  {
    auto* cmd = app.add_subcommand("annotate-serve", "serve the annotation API and annotator UI");
    auto store = std::make_shared<std::string>();
    auto scenes = std::make_shared<std::string>();
    auto host = std::make_shared<std::string>("127.0.0.1");
    auto port = std::make_shared<int>(8080);
    auto ui = std::make_shared<std::string>();
    cmd->add_option("--store", *store, "store directory (default from config)");
    cmd->add_option("--scenes", *scenes, "import the PNG scenes in this directory first")->check(CLI::ExistingDirectory);
    cmd->add_option("--host", *host, "bind address");
    cmd->add_option("--port", *port, "port (0 picks a free one)")->check(CLI::Range(0, 65535));
    cmd->add_option("--ui", *ui, "static annotator UI bundle directory");
    cmd->callback([&, store, scenes, host, port, ui] {
      action = [&g, store, scenes, host, port, ui]() -> Outcome {
        Config cfg = load(g);
        AnnotationStoreOptions so{cfg.classes, cfg.inpainting, cfg.seed, cfg.annotation.max_reinpaints};
        AnnotationStore st(store->empty() ? cfg.annotation.store_dir : *store, so);
        std::size_t imported = 0;
        if (!scenes->empty()) imported = st.import_scenes(*scenes).size();
        AnnotationServerOptions opts;
        opts.token = http::api_key_from_env(cfg.annotation.token_env);
        opts.static_dir = ui->empty() ? cfg.annotation.static_dir : *ui;
        AnnotationServer server(st, opts);
        const int bound = server.bind(*host, *port);
        std::cerr << "annotation service on http://" << *host << ":" << bound << " (" << imported << " scenes imported)\n";
        std::thread t([&] { server.listen(); });
        wait_for_signal();
        server.stop();
        t.join();
        return {{{"port", bound}, {"imported", imported}}, "stopped\n"};
      };
    });
  }

  // monitor-serve -------------------------------------------------------------
  {
    auto* cmd = app.add_subcommand("monitor-serve", "watch frame sources, detect hazards, and raise alerts");
    auto host = std::make_shared<std::string>("127.0.0.1");
    auto port = std::make_shared<int>(8090);
    cmd->add_option("--host", *host, "bind address for POST /frames");
    cmd->add_option("--port", *port, "port (0 picks a free one)")->check(CLI::Range(0, 65535));
    cmd->callback([&, host, port] {
      action = [&g, host, port]() -> Outcome {
        Config cfg = load(g);
        HttpChatBackend backend(cfg.vlm.url, cfg.vlm.api_key(), std::chrono::seconds(cfg.vlm.timeout_s));
        ReplayLog vlm_log(cfg.paths.replay_log);
        DetectorConfig dc = cfg.detection;
        dc.model = cfg.vlm.model;
        VlmDetector vlm(backend, cfg.classes, dc, &vlm_log);
        VlmFrameDetector detector(vlm);
        ReplayLog detections(cfg.monitor.detection_log), skips(cfg.monitor.skip_log), dead(cfg.monitor.dead_letter);
        std::vector<std::unique_ptr<AlertSink>> owned;
        owned.push_back(std::make_unique<LogSink>(cfg.monitor.alert_log));
        for (const auto& url : cfg.monitor.webhooks) owned.push_back(std::make_unique<WebhookSink>(url));
        std::vector<AlertSink*> sinks;
        for (auto& s : owned) sinks.push_back(s.get());
        FrameIngestor ingestor(&skips);
        MonitorService service(detector, sinks, cfg.monitor_options(), &detections, &dead);
        std::vector<std::unique_ptr<DirectoryWatcher>> watchers;
        for (const auto& src : cfg.monitor.sources)
          if (!src.directory.empty())
            watchers.push_back(std::make_unique<DirectoryWatcher>(ingestor, service, src.directory, src.id,
                                                                  std::chrono::milliseconds(cfg.monitor.poll_interval_ms)));
        MonitorServer server(ingestor, service);
        const int bound = server.bind(*host, *port);
        std::cerr << "monitor on http://" << *host << ":" << bound << " watching " << watchers.size() << " directories\n";
        std::thread t([&] { server.listen(); });
        wait_for_signal();
        server.stop();
        t.join();
        for (auto& w : watchers) w->stop();
        service.stop();
        const auto s = service.stats();
        return {{{"frames", s.frames}, {"failed", s.failed}, {"alerts", s.alerts}, {"dead_lettered", s.dead_lettered}},
                std::to_string(s.frames) + " frames, " + std::to_string(s.alerts) + " alerts\n"};
      };
    });
  }

  // detect --------------------------------------------------------------------
  {
    auto* cmd = app.add_subcommand("detect", "ask the VLM for hazard boxes in one image");
    auto image = std::make_shared<std::string>();
    auto classes = std::make_shared<std::vector<std::string>>();
    auto image_id = std::make_shared<std::int64_t>(0);
    cmd->add_option("image", *image, "PNG image")->required()->check(CLI::ExistingFile);
    cmd->add_option("--class", *classes, "class id or name (repeatable; default oil-spill)");
    cmd->add_option("--image-id", *image_id, "image id recorded in results and the replay log");
    cmd->callback([&, image, classes, image_id] {
      action = [&g, image, classes, image_id]() -> Outcome {
        Config cfg = load(g);
        HttpChatBackend backend(cfg.vlm.url, cfg.vlm.api_key(), std::chrono::seconds(cfg.vlm.timeout_s));
        ReplayLog log(cfg.paths.replay_log);
        DetectorConfig dc = cfg.detection;
        dc.model = cfg.vlm.model;
        VlmDetector detector(backend, cfg.classes, dc, &log);
        ImageInput in;
        in.image_id = *image_id;
        in.data = read_file(*image);
        const auto size = png_size(in.data);
        if (!size) throw Error(Errc::invalid_input, *image + " is not a PNG image");
        in.width = size->width;
        in.height = size->height;
        std::vector<ClassId> ids;
        for (const auto& c : *classes) {
          if (const ClassInfo* info = cfg.classes.find(std::string_view(c))) ids.push_back(info->id);
          else ids.push_back(cfg.classes.at(std::stoi(c)).id);
        }
        if (ids.empty()) ids.push_back(cfg.classes.classes().front().id);
        std::vector<CocoAnnotation> results;
        json statuses = json::object();
        for (ClassId c : ids) {
          auto parsed = detector.detect(in, c);
          statuses[std::to_string(c)] = to_string(parsed.status);
          for (auto& d : parsed.detections) d.class_id = c;
          const auto recs = to_coco_results(in.image_id, parsed.detections);
          results.insert(results.end(), recs.begin(), recs.end());
        }
        const json arr = parse_json_text(serialize_coco_results(results));
        return {{{"results", arr}, {"status", statuses}}, arr.dump(2) + "\n"};
      };
    });
  }

  // evaluate ------------------------------------------------------------------
  {
    auto* cmd = app.add_subcommand("evaluate", "score detections against ground truth");
    auto in = std::make_shared<EvalInputs>();
    auto out = std::make_shared<std::string>();
    auto baseline = std::make_shared<std::string>();
    in->add_to(cmd);
    cmd->add_option("-o,--out", *out, "write the report JSON here");
    cmd->add_option("--baseline", *baseline, "zero-shot report JSON to compute uplift against")->check(CLI::ExistingFile);
    cmd->callback([&, in, out, baseline] {
      action = [&g, in, out, baseline]() -> Outcome {
        Config cfg = load(g);
        EvalResult res = in->run(cfg);
        if (!baseline->empty()) attach_baseline(res.report, eval_report_from_json(parse_json_text(read_text(*baseline))));
        const json report = to_json(res.report);
        if (!out->empty()) write_text_atomic(*out, report.dump(2));
        std::ostringstream os;
        os << "hit_rate@" << exact_number(res.report.tau) << ": " << fmt2(res.report.hit_rate) << "\n"
           << "hit_rate_pooled: " << fmt2(res.report.hit_rate_pooled) << "\n"
           << "map50: " << fmt2(res.report.map50) << "\n";
        for (const auto& [c, v] : res.report.per_class) os << "  class " << c << ": " << fmt2(v) << "\n";
        if (res.report.uplift) os << "uplift vs " << *res.report.baseline_method << ": " << fmt2(*res.report.uplift) << "%\n";
        if (!res.report.failures.empty()) os << res.report.failures.size() << " images failed detection (counted as misses)\n";
        return {report, os.str()};
      };
    });
  }

  // sweep ---------------------------------------------------------------------
  {
    auto* cmd = app.add_subcommand("sweep", "hit-rate across IoU thresholds");
    auto in = std::make_shared<EvalInputs>();
    auto thresholds = std::make_shared<std::vector<double>>();
    in->add_to(cmd);
    cmd->add_option("--thresholds", *thresholds, "IoU thresholds (default 0.5 0.6 0.7 0.8 0.9)");
    cmd->callback([&, in, thresholds] {
      action = [&g, in, thresholds]() -> Outcome {
        Config cfg = load(g);
        if (!thresholds->empty()) cfg.evaluation.sweep_thresholds = *thresholds;
        const EvalResult res = in->run(cfg);
        const std::vector<EvalReport> reports{res.report};
        return {{{"thresholds", res.report.sweep.thresholds}, {"hit_rates", res.report.sweep.hit_rates}},
                render_report(reports, ReportFormat::markdown, TableKind::sweep)};
      };
    });
  }

  // convert -------------------------------------------------------------------
  {
    auto* cmd = app.add_subcommand("convert", "convert annotations between COCO JSON and YOLO text");
    auto from = std::make_shared<std::string>();
    auto to = std::make_shared<std::string>();
    auto input = std::make_shared<std::string>();
    auto images = std::make_shared<std::string>();
    auto out = std::make_shared<std::string>();
    cmd->add_option("--from", *from, "source format")->required()->check(CLI::IsMember({"coco", "yolo"}));
    cmd->add_option("--to", *to, "target format")->required()->check(CLI::IsMember({"coco", "yolo"}));
    cmd->add_option("-i,--input", *input, "COCO file or YOLO label directory")->required()->check(CLI::ExistingPath);
    cmd->add_option("--images", *images, "image directory (needed for YOLO input)")->check(CLI::ExistingDirectory);
    cmd->add_option("-o,--out", *out, "YOLO label directory or COCO file")->required();
    cmd->callback([&, from, to, input, images, out] {
      action = [&g, from, to, input, images, out]() -> Outcome {
        Config cfg = load(g);
        if (*from == *to) {
          if (*from != "coco") throw Error(Errc::invalid_input, "yolo to yolo is not a conversion");
          const CocoDataset ds = load_coco(*input);
          write_text_atomic(*out, serialize_coco(ds));
          return {{{"images", ds.images.size()}, {"annotations", ds.annotations.size()}, {"warnings", ds.warnings}},
                  "normalized " + std::to_string(ds.annotations.size()) + " annotations\n"};
        }
        if (*from == "coco") {
          const CocoDataset ds = load_coco(*input);
          const auto y = to_yolo(ds);
          write_yolo(y, *out);
          return {{{"label_files", y.label_files.size()}, {"classes", y.class_names}},
                  std::to_string(y.label_files.size()) + " label files written to " + *out + "\n"};
        }
        if (images->empty()) throw Error(Errc::invalid_input, "YOLO input needs --images to recover image sizes");
        const CocoDataset ds = from_yolo(*input, *images, cfg.classes);
        write_text_atomic(*out, serialize_coco(ds));
        return {{{"images", ds.images.size()}, {"annotations", ds.annotations.size()}, {"warnings", ds.warnings}},
                std::to_string(ds.annotations.size()) + " annotations written to " + *out + "\n"};
      };
    });
  }

  // dedup ---------------------------------------------------------------------
  {
    auto* cmd = app.add_subcommand("dedup", "cluster near-duplicate images by perceptual hash");
    auto dir = std::make_shared<std::string>();
    auto max_h = std::make_shared<int>(8);
    cmd->add_option("images", *dir, "directory of PNG images")->required()->check(CLI::ExistingDirectory);
    cmd->add_option("--max-hamming", *max_h, "largest hash distance treated as duplicate")->check(CLI::Range(0, 64));
    cmd->callback([&, dir, max_h] {
      action = [&g, dir, max_h]() -> Outcome {
        Config cfg = load(g);
        const auto res = dedup(png_inputs(*dir), *max_h, cfg.parallelism.eval_workers);
        std::ostringstream os;
        std::size_t dupes = 0;
        for (const auto& c : res.clusters) {
          if (c.members.size() < 2) continue;
          dupes += c.members.size() - 1;
          os << c.canonical << ":";
          for (const auto& m : c.members)
            if (m != c.canonical) os << " " << m;
          os << "\n";
        }
        for (const auto& s : res.skipped) os << "skipped " << s.id << ": " << s.reason << "\n";
        os << res.clusters.size() << " unique images, " << dupes << " duplicates\n";
        return {to_json(res), os.str()};
      };
    });
  }

  // split ---------------------------------------------------------------------
  {
    auto* cmd = app.add_subcommand("split", "partition a dataset into seeded, disjoint splits");
    auto ann = std::make_shared<std::string>();
    auto source = std::make_shared<std::string>("public");
    auto counts = std::make_shared<std::vector<std::string>>();
    auto seed = std::make_shared<std::optional<std::uint64_t>>();
    auto out = std::make_shared<std::string>();
    cmd->add_option("--annotations", *ann, "COCO dataset")->required()->check(CLI::ExistingFile);
    cmd->add_option("--source", *source, "data source profile")->check(CLI::IsMember({"synthetic", "public", "proprietary"}));
    cmd->add_option("--count", *counts, "name=N, replaces the profile when given (repeatable, in order)");
    cmd->add_option("--seed", *seed, "shuffle seed (default from config)");
    cmd->add_option("-o,--out", *out, "write the manifest JSON here");
    cmd->callback([&, ann, source, counts, seed, out] {
      action = [&g, ann, source, counts, seed, out]() -> Outcome {
        Config cfg = load(g);
        const DataSource src = data_source_from_string(*source);
        SplitCounts sc;
        for (const auto& c : *counts) {
          const auto eq = c.find('=');
          if (eq == std::string::npos) throw Error(Errc::invalid_input, "--count expects name=N, got '" + c + "'");
          sc.emplace_back(c.substr(0, eq), std::stoull(c.substr(eq + 1)));
        }
        if (sc.empty()) sc = cfg.split_profile(src);
        const auto ids = all_image_ids(load_coco(*ann));
        const auto manifest = make_splits(ids, sc, seed->value_or(cfg.seed), src);
        const json j = to_json(manifest);
        if (!out->empty()) write_text_atomic(*out, j.dump(2));
        std::ostringstream os;
        for (const auto& [name, members] : manifest.splits) os << name << ": " << members.size() << "\n";
        return {j, os.str()};
      };
    });
  }

  // merge-lora ----------------------------------------------------------------
  {
    auto* cmd = app.add_subcommand("merge-lora", "fold LoRA adapters into base weights");
    auto base = std::make_shared<std::string>();
    auto adapter = std::make_shared<std::string>();
    auto variant = std::make_shared<std::string>("V+L");
    auto alpha = std::make_shared<std::optional<double>>();
    auto out = std::make_shared<std::string>();
    cmd->add_option("--base", *base, "base checkpoint")->required()->check(CLI::ExistingFile);
    cmd->add_option("--adapter", *adapter, "adapter checkpoint")->required()->check(CLI::ExistingFile);
    cmd->add_option("--variant", *variant, "pathways to merge")->check(CLI::IsMember({"L", "V", "V+L"}));
    cmd->add_option("--alpha", *alpha, "scaling override (default from the adapter, else 1/r)");
    cmd->add_option("-o,--out", *out, "merged checkpoint")->required();
    cmd->callback([&, base, adapter, variant, alpha, out] {
      action = [&g, base, adapter, variant, alpha, out]() -> Outcome {
        Config cfg = load(g);
        const TensorStore b = read_store(read_file(*base));
        const auto adapters = adapters_from_store(read_store(read_file(*adapter)), *alpha);
        const Pathway p = pathway_from_string(*variant);
        const auto targets = merge_targets(b, adapters, p);
        const TensorStore merged = merge_store(b, adapters, p, {}, cfg.parallelism.merge_workers);
        write_file_atomic(*out, write_store(merged));
        std::ostringstream os;
        for (const auto& t : targets) os << "merged " << t << "\n";
        os << targets.size() << " of " << adapters.size() << " adapters applied (" << *variant << ")\n";
        return {{{"merged", targets}, {"adapters", adapters.size()}, {"variant", *variant}, {"out", *out}}, os.str()};
      };
    });
  }

  // render-report -------------------------------------------------------------
  {
    auto* cmd = app.add_subcommand("render-report", "tabulate evaluation reports");
    auto files = std::make_shared<std::vector<std::string>>();
    auto format = std::make_shared<std::string>("markdown");
    auto table = std::make_shared<std::string>("hit-rate");
    auto out = std::make_shared<std::string>();
    cmd->add_option("reports", *files, "report JSON files (an object or a list of objects each)")->required()->check(CLI::ExistingFile);
    cmd->add_option("--format", *format, "output format")->check(CLI::IsMember({"markdown", "csv", "json"}));
    cmd->add_option("--table", *table, "which table")->check(CLI::IsMember({"hit-rate", "map50", "sweep"}));
    cmd->add_option("-o,--out", *out, "write the table here");
    cmd->callback([&, files, format, table, out] {
      action = [&g, files, format, table, out]() -> Outcome {
        load(g);
        std::vector<EvalReport> reports;
        for (const auto& f : *files) {
          const json j = parse_json_text(read_text(f));
          if (j.is_array())
            for (const auto& r : j) reports.push_back(eval_report_from_json(r));
          else
            reports.push_back(eval_report_from_json(j));
        }
        const std::string text = render_report(reports, report_format_from_string(*format), table_kind_from_string(*table));
        if (!out->empty()) write_text_atomic(*out, text);
        return {{{"format", *format}, {"table", *table}, {"content", text}}, text};
      };
    });
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    const Outcome o = action();
    if (g.json_output) std::cout << o.data.dump(2) << "\n";
    else std::cout << o.text;
    return o.exit_code;
  } catch (const BandError& e) {
    if (g.json_output)
      std::cerr << json{{"error", {{"code", "parameter_band"}, {"field", e.field()}, {"message", e.what()}}}}.dump() << "\n";
    else
      std::cerr << "config error at " << e.field() << ": " << e.what() << "\n";
    return 3;
  } catch (const Error& e) {
    if (g.json_output)
      std::cerr << json{{"error", {{"code", std::string(to_string(e.code()))}, {"message", e.what()}}}}.dump() << "\n";
    else
      std::cerr << "error (" << to_string(e.code()) << "): " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    if (g.json_output) std::cerr << json{{"error", {{"code", "internal"}, {"message", e.what()}}}}.dump() << "\n";
    else std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
