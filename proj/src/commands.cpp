#include "melnet/commands.hpp"

#include <algorithm>
#include <cstdio>
#include <json.hpp>
#include <ostream>
#include <sstream>

#include "melnet/anchors.hpp"
#include "melnet/detections_io.hpp"
#include "melnet/kitti.hpp"
#include "melnet/report.hpp"
#include "melnet/run_config.hpp"
#include "melnet/train.hpp"

namespace melnet {

namespace fs = std::filesystem;

namespace {

void write_atomic(const fs::path& path, const std::string& text) {
  const fs::path tmp = path.string() + ".tmp";
  write_text_file(tmp, text);
  fs::rename(tmp, path);
}

std::string checkpoint_name(int epoch) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "epoch_%04d", epoch);
  return buf;
}

// Highest-epoch checkpoint whose metadata file exists; metadata is written
// last, so its presence means the checkpoint is complete.
std::optional<fs::path> latest_checkpoint(const fs::path& dir) {
  if (!fs::is_directory(dir)) return std::nullopt;
  std::optional<fs::path> best;
  for (const auto& e : fs::directory_iterator(dir)) {
    const auto name = e.path().filename().string();
    if (e.path().extension() == ".json" && name.rfind("epoch_", 0) == 0) {
      const fs::path prefix = dir / e.path().stem();
      if (!best || prefix > *best) best = prefix;
    }
  }
  return best;
}

std::vector<GroundTruth> source_truths(const DatasetEntry& e, int num_classes) {
  const auto [w, h] = png_dimensions(e.image);
  std::vector<GroundTruth> out;
  for (const auto& b : read_yolo_labels(e.label, num_classes)) out.push_back({yolo_to_xyxy(b.box, w, h), b.class_id});
  return out;
}

std::vector<fs::path> expand_images(const std::vector<fs::path>& inputs) {
  std::vector<fs::path> out;
  for (const auto& p : inputs) {
    if (fs::is_directory(p)) {
      std::vector<fs::path> found;
      for (const auto& e : fs::directory_iterator(p)) {
        if (e.is_regular_file() && e.path().extension() == ".png") found.push_back(e.path());
      }
      std::sort(found.begin(), found.end());
      out.insert(out.end(), found.begin(), found.end());
    } else {
      out.push_back(p);
    }
  }
  return out;
}

void draw_box(Image& img, const BoxXYXY& b, int class_id) {
  static const float palette[][3] = {{1, 0, 0}, {0, 0.8f, 0}, {0, 0.3f, 1}, {1, 0.8f, 0}, {1, 0, 1},
                                     {0, 1, 1}, {1, 0.5f, 0}, {0.6f, 0, 1}, {1, 1, 1}};
  const float* col = palette[static_cast<std::size_t>(class_id) % std::size(palette)];
  const int x0 = std::clamp(static_cast<int>(b.xmin), 0, img.width - 1);
  const int x1 = std::clamp(static_cast<int>(b.xmax), 0, img.width - 1);
  const int y0 = std::clamp(static_cast<int>(b.ymin), 0, img.height - 1);
  const int y1 = std::clamp(static_cast<int>(b.ymax), 0, img.height - 1);
  auto put = [&](int x, int y) {
    for (int c = 0; c < 3; ++c) img.at(c, y, x) = col[c];
  };
  for (int t = 0; t < 2; ++t) {
    for (int x = x0; x <= x1; ++x) {
      put(x, std::min(y0 + t, y1));
      put(x, std::max(y1 - t, y0));
    }
    for (int y = y0; y <= y1; ++y) {
      put(std::min(x0 + t, x1), y);
      put(std::max(x1 - t, x0), y);
    }
  }
}

std::string format_counts(const ConversionReport& r, const ClassMap& classes, std::size_t train, std::size_t val) {
  std::ostringstream os;
  os << "images " << r.images << "\nobjects " << r.objects << "\nskipped " << r.skipped << "\ntrain " << train
     << "\nval " << val << "\n";
  for (int c = 0; c < classes.size(); ++c) os << "class " << classes.name(c) << ' ' << r.per_class[c] << "\n";
  return os.str();
}

}  // namespace

int cmd_convert(const ConvertArgs& args, std::ostream& log, std::ostream& err) {
  try {
    if (!fs::is_directory(args.kitti_root)) {
      err << "convert: no such directory " << args.kitti_root.string() << "\n";
      return 1;
    }
    const ClassMap classes = ClassMap::kitti();
    const ConversionReport report = convert_dataset(args.kitti_root, args.out, classes);
    const DatasetIndex idx = split(report.entries, args.train_fraction, args.seed);
    write_manifest(args.out / "train.txt", idx.train);
    write_manifest(args.out / "val.txt", idx.val);
    const std::string counts = format_counts(report, classes, idx.train.size(), idx.val.size());
    write_text_file(args.out / "summary.txt", counts);
    log << counts;
    return 0;
  } catch (const std::exception& e) {
    err << "convert: " << e.what() << "\n";
    return 1;
  }
}

int cmd_anchors(const AnchorsArgs& args, std::ostream& log, std::ostream& err) {
  try {
    if (args.k < 1) {
      err << "anchors: --k must be at least 1\n";
      return 2;
    }
    std::vector<DatasetEntry> entries;
    for (const auto& m : args.manifests) {
      const auto part = read_manifest(m);
      entries.insert(entries.end(), part.begin(), part.end());
    }
    const auto samples = letterboxed_sizes(entries, args.input_size, args.num_classes);
    if (samples.empty()) {
      err << "anchors: the dataset holds no boxes\n";
      return 1;
    }
    const KMeansResult r = kmeans_iou(samples, args.k, args.seed, 100, args.restarts);
    fs::create_directories(args.out);
    write_text_file(args.out / "anchors.txt", anchors_to_text(r.anchors, args.seed, r.mean_iou));
    char buf[128];
    std::snprintf(buf, sizeof buf, "%zu boxes, k=%d, mean IoU %.6f\n", samples.size(), args.k, r.mean_iou);
    log << buf;
    return 0;
  } catch (const std::exception& e) {
    err << "anchors: " << e.what() << "\n";
    return 1;
  }
}

int cmd_train(const TrainArgs& args, std::ostream& log, std::ostream& err) {
  try {
    const RunConfig rc = load_run_config(args.config);
    const fs::path out = args.out ? *args.out : rc.output_dir;
    if (out.empty()) throw ConfigError("no output directory: set 'output_dir' or pass --out");
    const ManifestSource train(read_manifest(rc.train_manifest), rc.spec.num_classes);
    std::optional<ManifestSource> val;
    if (rc.val_manifest) {
      auto entries = read_manifest(*rc.val_manifest);
      if (entries.empty()) {
        log << "validation manifest is empty; metrics are computed on the training set\n";
      } else {
        val.emplace(std::move(entries), rc.spec.num_classes);
      }
    }

    Trainer trainer(rc.spec, rc.training, train, val ? &*val : nullptr);
    const fs::path ckpt_dir = out / "checkpoints";
    if (args.resume) {
      const auto latest = latest_checkpoint(ckpt_dir);
      if (!latest) throw TrainingError("--resume: no checkpoint under " + ckpt_dir.string());
      trainer.load_checkpoint(*latest);
      log << "resumed from " << latest->filename().string() << " after epoch " << trainer.epochs_done() << "\n";
    } else if (latest_checkpoint(ckpt_dir)) {
      throw TrainingError(ckpt_dir.string() + " already holds checkpoints; pass --resume or use another --out");
    }
    fs::create_directories(ckpt_dir);
    write_text_file(out / "config.json", read_text_file(args.config));

    trainer.run([&](const EpochRow& row) {
      trainer.save_checkpoint(ckpt_dir / checkpoint_name(row.epoch), rc.class_names);
      write_atomic(out / "metrics.csv", metrics_csv(trainer.log()));
      char buf[160];
      std::snprintf(buf, sizeof buf, "epoch %d  loss %.4f  mAP %.4f  cls %.2f  obj %.2f  noobj %.2f\n", row.epoch,
                    row.loss, row.map, row.class_acc, row.obj_acc, row.noobj_acc);
      log << buf << std::flush;
    });
    if (trainer.log().empty()) write_atomic(out / "metrics.csv", metrics_csv(trainer.log()));
    return 0;
  } catch (const std::exception& e) {
    err << "train: " << e.what() << "\n";
    return 1;
  }
}

int cmd_eval(const EvalArgs& args, std::ostream& log, std::ostream& err) {
  try {
    if (args.weights.has_value() == args.detections.has_value()) {
      err << "eval: pass exactly one of --weights and --detections\n";
      return 2;
    }
    std::optional<Model> model;
    std::vector<std::string> names = args.class_names.empty() ? ClassMap::kitti().names() : args.class_names;
    if (args.weights) {
      model = load_model(*args.weights);
      names = model->class_names;
    }
    if (args.detections && !fs::is_directory(*args.detections)) {
      throw std::runtime_error("no such detections directory " + args.detections->string());
    }
    const auto entries = read_manifest(args.data);
    if (entries.empty()) throw std::runtime_error("evaluation set " + args.data.string() + " is empty");
    const int num_classes = static_cast<int>(names.size());

    std::vector<std::vector<Detection>> dets;
    std::vector<std::vector<GroundTruth>> gts;
    for (const auto& e : entries) {
      gts.push_back(source_truths(e, num_classes));
      if (model) {
        TrainingConfig cfg = model->cfg;
        dets.push_back(predict(model->net, read_png(e.image), cfg, args.conf));
      } else {
        const fs::path f = *args.detections / (e.image.stem().string() + ".txt");
        if (!fs::exists(f)) throw std::runtime_error("no detection file " + f.string());
        dets.push_back(parse_detections(read_text_file(f), names, f.string()));
      }
    }
    const auto aps = per_class_ap(dets, gts, num_classes, args.iou);
    const double map = mean_ap(aps);

    nlohmann::json j;
    j["map"] = map;
    j["images"] = entries.size();
    j["iou_threshold"] = args.iou;
    j["classes"] = nlohmann::json::array();
    for (const auto& c : aps) {
      if (c.gt_count == 0) continue;
      j["classes"].push_back({{"id", c.class_id}, {"name", names[c.class_id]}, {"ap", c.ap}, {"gt_count", c.gt_count}});
    }
    const std::string table = format_ap_report(aps, names);
    fs::create_directories(args.out);
    write_text_file(args.out / "eval.json", j.dump(2) + "\n");
    write_text_file(args.out / "ap_table.txt", table);
    log << table;
    return 0;
  } catch (const std::exception& e) {
    err << "eval: " << e.what() << "\n";
    return 1;
  }
}

int cmd_predict(const PredictArgs& args, std::ostream& log, std::ostream& err) {
  int warnings = 0;
  try {
    Model model = load_model(args.weights);
    if (args.nms) model.cfg.nms_iou = *args.nms;
    const auto images = expand_images(args.images);
    if (images.empty()) throw std::runtime_error("no input images");
    fs::create_directories(args.out);
    if (args.annotate) fs::create_directories(args.out / "annotated");
    std::size_t total = 0;
    for (const auto& p : images) {
      Image img;
      try {
        img = read_png(p);
      } catch (const std::exception& e) {
        err << "predict: warning: skipping " << p.string() << ": " << e.what() << "\n";
        ++warnings;
        continue;
      }
      const auto dets = predict(model.net, img, model.cfg, args.conf);
      total += dets.size();
      write_text_file(args.out / (p.stem().string() + ".txt"), format_detections(dets, model.class_names));
      if (args.annotate) {
        for (const auto& d : dets) draw_box(img, d.box, d.class_id);
        write_png(args.out / "annotated" / (p.stem().string() + ".png"), img);
      }
    }
    log << images.size() - warnings << " images, " << total << " detections";
    if (warnings) log << ", " << warnings << " skipped";
    log << "\n";
    return warnings ? 1 : 0;
  } catch (const std::exception& e) {
    err << "predict: " << e.what() << "\n";
    return 1;
  }
}

int cmd_report(const ReportArgs& args, std::ostream& log, std::ostream& err) {
  try {
    const auto rows = parse_metrics_csv(read_text_file(args.metrics_csv));
    if (rows.empty()) throw std::runtime_error(args.metrics_csv.string() + " holds no epochs");
    const std::vector<int> epochs = args.epochs.empty() ? default_summary_epochs(rows) : args.epochs;
    std::vector<ClassAP> aps;
    std::vector<std::string> names;
    if (args.ap_report) {
      const auto j = nlohmann::json::parse(read_text_file(*args.ap_report));
      for (const auto& c : j.at("classes")) {
        aps.push_back({static_cast<int>(names.size()), c.at("ap").get<double>(), c.at("gt_count").get<std::size_t>()});
        names.push_back(c.at("name").get<std::string>());
      }
    }
    const auto written = write_report(rows, epochs, aps, names, args.out);
    log << read_text_file(args.out / "summary.txt");
    for (const auto& p : written) log << "wrote " << p.string() << "\n";
    return 0;
  } catch (const std::exception& e) {
    err << "report: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace melnet
