#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <sstream>

#include "doctest.h"
#include "melnet/commands.hpp"
#include "melnet/detections_io.hpp"
#include "melnet/kitti.hpp"
#include "melnet/report.hpp"
#include "melnet/run_config.hpp"
#include "melnet/train.hpp"
#include "melnet/weights_io.hpp"

using namespace melnet;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const char* name) {
  const auto dir = fs::temp_directory_path() / "melnet_cli_test" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

// Three 96x64 images with one or two KITTI objects each.
fs::path mini_kitti(const fs::path& root) {
  fs::create_directories(root / "image_2");
  fs::create_directories(root / "label_2");
  const char* labels[] = {
      "Car 0.00 0 0.0 10.0 12.0 40.0 36.0 1 1 1 0 0 0 0\n",
      "Pedestrian 0.00 0 0.0 50.0 8.0 62.0 50.0 1 1 1 0 0 0 0\nCar 0.00 0 0.0 4.0 30.0 30.0 60.0 1 1 1 0 0 0 0\n",
      "Cyclist 0.00 0 0.0 30.0 20.0 70.0 60.0 1 1 1 0 0 0 0\n",
  };
  for (int i = 0; i < 3; ++i) {
    char stem[16];
    std::snprintf(stem, sizeof stem, "%06d", i);
    write_png(root / "image_2" / (std::string(stem) + ".png"), Image(96, 64, 0.1f * static_cast<float>(i + 2)));
    write_text_file(root / "label_2" / (std::string(stem) + ".txt"), labels[i]);
  }
  return root;
}

std::vector<std::uint8_t> bytes(const fs::path& p) { return read_file_bytes(p); }

struct Run {
  int code;
  std::string out, err;
};

template <typename Args, typename Fn>
Run run(Fn fn, const Args& args) {
  std::ostringstream out, err;
  const int code = fn(args, out, err);
  return {code, out.str(), err.str()};
}

// Tiny model checkpoint with fresh weights for the prediction tests.
fs::path fresh_checkpoint(const fs::path& dir) {
  static MemorySource src(synthetic_samples(2, 64, 9, 1));
  TrainingConfig cfg;
  cfg.input_size = 64;
  cfg.anchors = {{6, 6}, {10, 14}, {16, 10}, {18, 20}, {26, 30}, {40, 36}};
  Trainer t(tiny_spec(9), cfg, src, nullptr);
  t.save_checkpoint(dir / "fresh", ClassMap::kitti().names());
  return dir / "fresh.melw";
}

}  // namespace

TEST_CASE("convert writes labels, manifests and counts") {
  const auto dir = scratch("convert");
  const auto root = mini_kitti(dir / "kitti");
  ConvertArgs args{root, dir / "out"};
  const Run r = run(cmd_convert, args);
  REQUIRE(r.code == 0);
  CHECK(r.out.find("images 3") != std::string::npos);
  CHECK(r.out.find("objects 4") != std::string::npos);
  std::size_t labels = 0;
  for (const auto& e : fs::directory_iterator(dir / "out" / "labels")) labels += e.path().extension() == ".txt";
  CHECK(labels == 3);
  CHECK(read_manifest(dir / "out" / "train.txt").size() + read_manifest(dir / "out" / "val.txt").size() == 3);

  SUBCASE("re-run is byte identical") {
    ConvertArgs again{root, dir / "again"};
    REQUIRE(run(cmd_convert, again).code == 0);
    for (const char* f : {"labels/000001.txt", "train.txt", "val.txt", "summary.txt"}) {
      CHECK(bytes(dir / "out" / f) == bytes(dir / "again" / f));
    }
    REQUIRE(run(cmd_convert, args).code == 0);
    CHECK(bytes(dir / "out" / "train.txt") == bytes(dir / "again" / "train.txt"));
  }
  SUBCASE("missing image names the file") {
    fs::remove(root / "image_2" / "000001.png");
    const Run bad = run(cmd_convert, ConvertArgs{root, dir / "bad"});
    CHECK(bad.code != 0);
    CHECK(bad.err.find("000001.png") != std::string::npos);
  }
}

TEST_CASE("anchors command") {
  const auto dir = scratch("anchors");
  REQUIRE(run(cmd_convert, ConvertArgs{mini_kitti(dir / "kitti"), dir / "data"}).code == 0);
  AnchorsArgs args;
  args.manifests = {dir / "data" / "train.txt", dir / "data" / "val.txt"};
  args.out = dir / "a";
  args.k = 4;
  args.input_size = 64;
  const Run r = run(cmd_anchors, args);
  REQUIRE(r.code == 0);
  CHECK(r.out.find("mean IoU 1.000000") != std::string::npos);
  const auto text = read_text_file(dir / "a" / "anchors.txt");
  CHECK(anchors_from_text(text).size() == 4);
  args.out = dir / "b";
  REQUIRE(run(cmd_anchors, args).code == 0);
  CHECK(bytes(dir / "a" / "anchors.txt") == bytes(dir / "b" / "anchors.txt"));

  args.k = 0;
  CHECK(run(cmd_anchors, args).code != 0);
  args.k = 6;
  CHECK(run(cmd_anchors, args).code != 0);  // only 4 boxes
  write_text_file(dir / "empty.txt", "");
  args.manifests = {dir / "empty.txt"};
  args.k = 1;
  CHECK(run(cmd_anchors, args).code != 0);

  const std::string cli = std::string(MELNET_CLI) + " anchors --data " + (dir / "data" / "train.txt").string() +
                          " --out " + (dir / "c").string() + " --k 0 > /dev/null 2>&1";
  CHECK(std::system(cli.c_str()) != 0);
  CHECK(!fs::exists(dir / "c"));
}

TEST_CASE("run config parsing") {
  const auto dir = scratch("config");
  write_text_file(dir / "train.txt", "");
  write_text_file(dir / "anchors.txt", "1 2\n3 4\n5 6\n7 8\n9 10\n11 12\n");
  auto parse = [&](const std::string& text) { return parse_run_config(text, dir); };
  auto error_of = [&](const std::string& text) {
    try {
      parse(text);
    } catch (const ConfigError& e) {
      return std::string(e.what());
    }
    return std::string("no error");
  };

  const auto rc = parse(R"({"arch": "tiny", "train_manifest": "train.txt", "anchors_file": "anchors.txt",
                            "output_dir": "run", "epochs": 7, "loss": {"noobj": 0.25}, "precision": "double"})");
  CHECK(rc.spec == tiny_spec(9));
  CHECK(rc.training.input_size == 64);
  CHECK(rc.training.epochs == 7);
  CHECK(rc.training.loss.noobj == 0.25);
  CHECK(rc.training.loss.box == 5.0);
  CHECK(!rc.training.single_precision);
  CHECK(rc.training.anchors.size() == 6);
  CHECK(rc.output_dir == (dir / "run").lexically_normal());

  const auto ref = parse(R"({"train_manifest": "train.txt"})");
  CHECK(ref.spec == reference_spec(9, 3));
  CHECK(ref.training.learning_rate == 1e-5);
  CHECK(ref.training.anchors == default_anchors(6));

  CHECK(error_of(R"({"train_manifest": "train.txt", "learning_rat": 1})").find("learning_rat") != std::string::npos);
  CHECK(error_of(R"({"train_manifest": "train.txt", "loss": {"boxx": 1}})").find("loss.boxx") != std::string::npos);
  CHECK(error_of(R"({"train_manifest": "nope.txt"})").find("train_manifest") != std::string::npos);
  CHECK(error_of(R"({"epochs": 3})").find("train_manifest") != std::string::npos);
  CHECK(error_of(R"({"train_manifest": "train.txt", "epochs": "three"})").find("epochs") != std::string::npos);
  CHECK(error_of(R"({"train_manifest": "train.txt", "num_classes": 3})").find("num_classes") != std::string::npos);
  CHECK(error_of(R"({"train_manifest": "train.txt", "anchors": [[1, 2]]})") != "no error");
  CHECK(error_of("{") != "no error");
  // Paths are checked before anything else is looked at.
  CHECK(error_of(R"({"train_manifest": "train.txt", "val_manifest": "v.txt", "epochs": -1})").find("val_manifest") !=
        std::string::npos);
}

TEST_CASE("train command: checkpoints, CSV, resume and bad keys") {
  const auto dir = scratch("train");
  write_manifest(dir / "train.txt", write_samples(dir / "train", synthetic_samples(6, 64, 9, 3)));
  write_manifest(dir / "val.txt", write_samples(dir / "val", synthetic_samples(2, 64, 9, 4)));
  const std::string base = R"("arch": "tiny", "train_manifest": "train.txt", "val_manifest": "val.txt",
      "learning_rate": 1e-3, "batch_size": 3, "anchors": [[6,6],[10,14],[16,10],[18,20],[26,30],[40,36]])";
  write_text_file(dir / "three.json", "{" + base + R"(, "epochs": 3, "output_dir": "run"})");
  write_text_file(dir / "four.json", "{" + base + R"(, "epochs": 4})");

  TrainArgs args{dir / "three.json"};
  const Run r = run(cmd_train, args);
  REQUIRE_MESSAGE(r.code == 0, r.err);
  const auto rows = parse_metrics_csv(read_text_file(dir / "run" / "metrics.csv"));
  CHECK(rows.size() == 3);
  for (int e = 1; e <= 3; ++e) {
    char name[32];
    std::snprintf(name, sizeof name, "epoch_%04d", e);
    for (const char* ext : {".melw", ".mela", ".json"}) {
      CHECK(fs::exists(dir / "run" / "checkpoints" / (std::string(name) + ext)));
    }
  }
  CHECK(run(cmd_train, args).code != 0);  // refuses to overwrite

  SUBCASE("resume continues at the next epoch") {
    fs::copy(dir / "run", dir / "resumed", fs::copy_options::recursive);
    const Run res = run(cmd_train, TrainArgs{dir / "four.json", dir / "resumed", true});
    REQUIRE_MESSAGE(res.code == 0, res.err);
    CHECK(res.out.find("epoch 4") != std::string::npos);
    CHECK(res.out.find("epoch 3 ") == std::string::npos);
    const Run straight = run(cmd_train, TrainArgs{dir / "four.json", dir / "straight", false});
    REQUIRE(straight.code == 0);
    CHECK(bytes(dir / "resumed" / "metrics.csv") == bytes(dir / "straight" / "metrics.csv"));
    CHECK(bytes(dir / "resumed" / "checkpoints" / "epoch_0004.melw") ==
          bytes(dir / "straight" / "checkpoints" / "epoch_0004.melw"));
  }
  SUBCASE("bad key names the key") {
    write_text_file(dir / "bad.json", "{" + base + R"(, "epochz": 2})");
    const Run bad = run(cmd_train, TrainArgs{dir / "bad.json", dir / "bad"});
    CHECK(bad.code != 0);
    CHECK(bad.err.find("epochz") != std::string::npos);
    CHECK(!fs::exists(dir / "bad"));
  }
  SUBCASE("resume without checkpoints fails") {
    CHECK(run(cmd_train, TrainArgs{dir / "four.json", dir / "nothing", true}).code != 0);
  }
}

TEST_CASE("eval command") {
  const auto dir = scratch("eval");
  const auto samples = synthetic_samples(4, 64, 9, 6);
  write_manifest(dir / "data.txt", write_samples(dir / "data", samples));
  fs::create_directories(dir / "perfect");
  for (const auto& s : samples) {
    std::vector<Detection> dets;
    for (const auto& b : s.boxes) dets.push_back({yolo_to_xyxy(b.box, 64, 64), 0.9, b.class_id, 1.0});
    write_text_file(dir / "perfect" / (s.name + ".txt"), format_detections(dets, ClassMap::kitti().names()));
  }
  EvalArgs args;
  args.data = dir / "data.txt";
  args.detections = dir / "perfect";
  args.out = dir / "e1";
  const Run r = run(cmd_eval, args);
  REQUIRE_MESSAGE(r.code == 0, r.err);
  CHECK(r.out.find("mAP                 1.0000") != std::string::npos);
  args.out = dir / "e2";
  REQUIRE(run(cmd_eval, args).code == 0);
  CHECK(bytes(dir / "e1" / "eval.json") == bytes(dir / "e2" / "eval.json"));
  CHECK(bytes(dir / "e1" / "ap_table.txt") == bytes(dir / "e2" / "ap_table.txt"));

  write_text_file(dir / "empty.txt", "");
  args.data = dir / "empty.txt";
  const Run empty = run(cmd_eval, args);
  CHECK(empty.code != 0);
  CHECK(empty.err.find("empty") != std::string::npos);

  args.data = dir / "data.txt";
  args.weights = fs::path("x.melw");
  CHECK(run(cmd_eval, args).code != 0);  // both sources
  args.detections.reset();
  CHECK(run(cmd_eval, args).code != 0);  // missing checkpoint

  SUBCASE("model with the wrong class count") {
    TrainingConfig cfg;
    cfg.input_size = 64;
    cfg.anchors = {{6, 6}, {10, 14}, {16, 10}, {18, 20}, {26, 30}, {40, 36}};
    MemorySource src(synthetic_samples(1, 64, 4, 1));
    Trainer t(tiny_spec(4), cfg, src, nullptr);
    t.save_checkpoint(dir / "four");
    args.weights = dir / "four.melw";
    args.out = dir / "e3";
    CHECK(run(cmd_eval, args).code != 0);  // labels hold class ids >= 4
  }
}

TEST_CASE("predict command") {
  const auto dir = scratch("predict");
  const fs::path weights = fresh_checkpoint(dir);
  write_png(dir / "blank.png", Image(64, 64, 0.5f));
  write_png(dir / "wide.png", Image(128, 64, 0.2f));

  PredictArgs args;
  args.weights = weights;
  args.images = {dir / "blank.png", dir / "wide.png"};
  args.out = dir / "p9";
  args.conf = 0.9;
  REQUIRE(run(cmd_predict, args).code == 0);
  for (const auto& d : parse_detections(read_text_file(dir / "p9" / "blank.txt"), ClassMap::kitti().names(), "")) {
    CHECK(d.score() >= 0.9);
  }

  args.conf = 0.0;
  args.out = dir / "p0";
  args.annotate = true;
  REQUIRE(run(cmd_predict, args).code == 0);
  const auto all = parse_detections(read_text_file(dir / "p0" / "blank.txt"), ClassMap::kitti().names(), "");
  CHECK(!all.empty());
  CHECK(all.size() <= (2 * 2 + 4 * 4) * 3);
  CHECK(fs::exists(dir / "p0" / "annotated" / "wide.png"));

  SUBCASE("files agree with the in-process decode") {
    const Model m = load_model(weights);
    const auto direct = predict(m.net, read_png(dir / "wide.png"), m.cfg, 0.0);
    const auto parsed = parse_detections(read_text_file(dir / "p0" / "wide.txt"), m.class_names, "");
    REQUIRE(parsed.size() == direct.size());
    for (std::size_t i = 0; i < parsed.size(); ++i) {
      CHECK(parsed[i].class_id == direct[i].class_id);
      CHECK(parsed[i].score() == doctest::Approx(direct[i].score()).epsilon(1e-8));
      CHECK(parsed[i].box.xmin == doctest::Approx(direct[i].box.xmin).epsilon(1e-4));
      CHECK(parsed[i].box.ymax == doctest::Approx(direct[i].box.ymax).epsilon(1e-4));
    }
  }
  SUBCASE("eval of the dumps matches eval of the weights") {
    const auto samples = synthetic_samples(3, 64, 9, 12);
    write_manifest(dir / "set.txt", write_samples(dir / "set", samples));
    PredictArgs p{weights, {dir / "set" / "images"}, dir / "dumps", 0.001};
    REQUIRE(run(cmd_predict, p).code == 0);
    EvalArgs e;
    e.data = dir / "set.txt";
    e.weights = weights;
    e.out = dir / "ew";
    REQUIRE(run(cmd_eval, e).code == 0);
    e.weights.reset();
    e.detections = dir / "dumps";
    e.out = dir / "ed";
    REQUIRE(run(cmd_eval, e).code == 0);
    CHECK(bytes(dir / "ew" / "ap_table.txt") == bytes(dir / "ed" / "ap_table.txt"));
  }
  SUBCASE("undecodable image is skipped with a warning") {
    write_text_file(dir / "broken.png", "not a png");
    args.images = {dir / "broken.png", dir / "blank.png"};
    args.out = dir / "pw";
    const Run r = run(cmd_predict, args);
    CHECK(r.code != 0);
    CHECK(r.err.find("broken.png") != std::string::npos);
    CHECK(fs::exists(dir / "pw" / "blank.txt"));
  }
}

TEST_CASE("report command") {
  const auto dir = scratch("report");
  std::vector<EpochRow> rows;
  for (int e = 1; e <= 300; ++e) {
    rows.push_back({e, 0.7 * (1 - std::exp(-e / 60.0)), 3.0 * std::exp(-e / 100.0) + 0.5, 90 + e / 60.0,
                    90 + e / 70.0, 99 + e / 1000.0});
  }
  write_text_file(dir / "m.csv", metrics_csv(rows));
  ReportArgs args{dir / "m.csv", dir / "r"};
  const Run r = run(cmd_report, args);
  REQUIRE_MESSAGE(r.code == 0, r.err);
  std::size_t svgs = 0;
  for (const auto& e : fs::directory_iterator(dir / "r")) svgs += e.path().extension() == ".svg";
  CHECK(svgs == 5);
  const auto summary = read_text_file(dir / "r" / "summary.txt");
  std::istringstream lines(summary);
  std::string line;
  std::getline(lines, line);
  CHECK(line.find("50 EPOCH") != std::string::npos);
  CHECK(line.find("300 EPOCH") != std::string::npos);
  std::vector<std::string> names;
  while (std::getline(lines, line)) names.push_back(line.substr(0, 12));
  CHECK(names == std::vector<std::string>{"mAP         ", "LOSS        ", "Class Acc.  ", "Obj. Acc.   ",
                                          "No Obj. Acc."});
  CHECK(summary.find("0.68") != std::string::npos);  // mAP at epoch 300

  args.out = dir / "r2";
  REQUIRE(run(cmd_report, args).code == 0);
  CHECK(bytes(dir / "r" / "loss.svg") == bytes(dir / "r2" / "loss.svg"));

  SUBCASE("single row") {
    write_text_file(dir / "one.csv", metrics_csv(std::vector<EpochRow>{{1, 0.5, 1.0, 90, 90, 99}}));
    const Run one = run(cmd_report, ReportArgs{dir / "one.csv", dir / "one"});
    CHECK(one.code == 0);
    CHECK(read_text_file(dir / "one" / "map.svg").find("<circle") != std::string::npos);
    CHECK(read_text_file(dir / "one" / "map.svg").find("nan") == std::string::npos);
  }
  SUBCASE("malformed row is named") {
    write_text_file(dir / "bad.csv", metrics_csv(rows) + "301,0.7,x,1,1,1\n");
    const Run bad = run(cmd_report, ReportArgs{dir / "bad.csv", dir / "bad"});
    CHECK(bad.code != 0);
    CHECK(bad.err.find("line 302") != std::string::npos);
  }
  SUBCASE("per-class AP chart") {
    write_text_file(dir / "eval.json",
                    R"({"classes": [{"id": 0, "name": "Car", "ap": 0.8, "gt_count": 3}], "map": 0.8})");
    ReportArgs with_ap{dir / "m.csv", dir / "ap", {100, 200}, dir / "eval.json"};
    REQUIRE(run(cmd_report, with_ap).code == 0);
    CHECK(read_text_file(dir / "ap" / "class_ap.svg").find("Car") != std::string::npos);
    CHECK(read_text_file(dir / "ap" / "summary.txt").find("150 EPOCH") == std::string::npos);
  }
}
