#include <algorithm>
#include <cmath>
#include <filesystem>
#include <limits>

#include "doctest.h"
#include "melnet/train.hpp"
#include "melnet/weights_io.hpp"

using namespace melnet;
namespace fs = std::filesystem;

namespace {

TrainingConfig tiny_config() {
  TrainingConfig cfg;
  cfg.learning_rate = 1e-3;
  cfg.input_size = 64;
  cfg.batch_size = 4;
  cfg.seed = 17;
  cfg.anchors = {{6, 6}, {10, 14}, {16, 10}, {18, 20}, {26, 30}, {40, 36}};
  return cfg;
}

bool same_parameters(const Network& a, const Network& b) {
  const auto pa = a.parameters(), pb = b.parameters();
  if (pa.size() != pb.size()) return false;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    if (!std::equal(pa[i].value.data().begin(), pa[i].value.data().end(), pb[i].value.data().begin())) return false;
  }
  return true;
}

fs::path scratch(const char* name) {
  const auto dir = fs::temp_directory_path() / "melnet_train_test" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

}  // namespace

TEST_CASE("loss at epoch 5 is below epoch 1") {
  MemorySource src(synthetic_samples(8, 64, 3, 5));
  TrainingConfig cfg = tiny_config();
  cfg.epochs = 5;
  Trainer t(tiny_spec(3), cfg, src, nullptr);
  t.run();
  REQUIRE(t.log().size() == 5);
  CHECK(t.log()[4].loss < t.log()[0].loss);
  for (const auto& r : t.log()) {
    CHECK(r.map >= 0);
    CHECK(r.map <= 1);
    CHECK(std::isfinite(r.loss));
  }
}

TEST_CASE("resume continues with bit-identical parameters") {
  const auto dir = scratch("resume");
  MemorySource train(synthetic_samples(6, 64, 3, 8));
  MemorySource val(synthetic_samples(2, 64, 3, 9));
  TrainingConfig cfg = tiny_config();
  cfg.epochs = 2;

  Trainer straight(tiny_spec(3), cfg, train, &val);
  straight.run_epoch();
  straight.save_checkpoint(dir / "ckpt");
  straight.run_epoch();

  Trainer resumed(tiny_spec(3), cfg, train, &val);
  resumed.load_checkpoint(dir / "ckpt");
  CHECK(resumed.epochs_done() == 1);
  CHECK(resumed.log().size() == 1);
  resumed.run();
  CHECK(resumed.epochs_done() == 2);
  CHECK(same_parameters(straight.network(), resumed.network()));
  CHECK(metrics_csv(straight.log()) == metrics_csv(resumed.log()));
  CHECK(straight.optimizer().step == resumed.optimizer().step);

  SUBCASE("checkpoint files are reproducible") {
    straight.save_checkpoint(dir / "a");
    resumed.save_checkpoint(dir / "b");
    CHECK(read_file_bytes(dir / "a.melw") == read_file_bytes(dir / "b.melw"));
    CHECK(read_file_bytes(dir / "a.mela") == read_file_bytes(dir / "b.mela"));
  }
}

TEST_CASE("checkpoint guarded by config hash") {
  const auto dir = scratch("hash");
  MemorySource src(synthetic_samples(4, 64, 3, 1));
  TrainingConfig cfg = tiny_config();
  Trainer t(tiny_spec(3), cfg, src, nullptr);
  t.run_epoch();
  t.save_checkpoint(dir / "ckpt");

  TrainingConfig longer = cfg;
  longer.epochs = 10;
  CHECK(config_hash(tiny_spec(3), cfg) == config_hash(tiny_spec(3), longer));
  Trainer more(tiny_spec(3), longer, src, nullptr);
  CHECK_NOTHROW(more.load_checkpoint(dir / "ckpt"));

  TrainingConfig other = cfg;
  other.learning_rate = 2e-3;
  CHECK(config_hash(tiny_spec(3), cfg) != config_hash(tiny_spec(3), other));
  Trainer mismatch(tiny_spec(3), other, src, nullptr);
  CHECK_THROWS_AS(mismatch.load_checkpoint(dir / "ckpt"), TrainingError);
  CHECK(config_hash(tiny_spec(3), cfg) != config_hash(tiny_spec(4), cfg));
  CHECK_THROWS_AS(mismatch.load_checkpoint(dir / "missing"), std::exception);
}

TEST_CASE("non-finite loss aborts naming the batch") {
  auto samples = synthetic_samples(4, 64, 3, 2);
  samples[2].image.data[10] = std::numeric_limits<float>::quiet_NaN();
  MemorySource src(samples);
  TrainingConfig cfg = tiny_config();
  cfg.augment = false;
  Trainer t(tiny_spec(3), cfg, src, nullptr);
  const std::size_t clean[] = {0, 1};
  CHECK(std::isfinite(t.step(clean, 0, 0)));
  const std::size_t bad[] = {2, 3};
  try {
    t.step(bad, 0, 1);
    FAIL("expected TrainingError");
  } catch (const TrainingError& e) {
    CHECK(std::string(e.what()).find("batch 1") != std::string::npos);
  }
}

TEST_CASE("configuration validation") {
  MemorySource src(synthetic_samples(2, 64, 3, 2));
  MemorySource empty({});
  TrainingConfig cfg = tiny_config();
  CHECK_THROWS_AS(Trainer(tiny_spec(3), cfg, empty, nullptr), TrainingError);
  auto bad = cfg;
  bad.batch_size = 0;
  CHECK_THROWS(Trainer(tiny_spec(3), bad, src, nullptr));
  bad = cfg;
  bad.anchors.pop_back();
  CHECK_THROWS(Trainer(tiny_spec(3), bad, src, nullptr));
  bad = cfg;
  bad.input_size = 70;
  CHECK_THROWS(Trainer(tiny_spec(3), bad, src, nullptr));
  bad = cfg;
  bad.learning_rate = -1;
  CHECK_THROWS(Trainer(tiny_spec(3), bad, src, nullptr));
}

TEST_CASE("prepared batch and prediction mapping") {
  auto samples = synthetic_samples(2, 64, 3, 4);
  TrainingConfig cfg = tiny_config();
  cfg.augment = false;
  const auto batch = prepare_batch(samples, tiny_spec(3), cfg);
  CHECK(batch.images.shape() == Shape{2, 3, 64, 64});
  REQUIRE(batch.targets.size() == 2);
  CHECK(batch.targets[0].scales[0].grid == 2);
  CHECK(batch.targets[0].scales[1].grid == 4);
  CHECK(batch.truths[0].size() == samples[0].boxes.size());

  // A 128x64 source letterboxes at scale 0.5 with 16 px of padding on y.
  Image wide(128, 64, 0.3f);
  Network net = Network::build(tiny_spec(3), 3);
  const auto dets = predict(net, wide, cfg, 0.0);
  const Heads h = net.infer(to_tensor(std::vector<Image>{letterbox(wide, 64)}));
  const auto canvas = postprocess(h, {{cfg.anchors[3], cfg.anchors[4], cfg.anchors[5]},
                                      {cfg.anchors[0], cfg.anchors[1], cfg.anchors[2]}},
                                  3, 0.0, cfg.nms_iou)[0];
  std::vector<Detection> expected;
  for (auto d : canvas) {
    d.box = {std::clamp(d.box.xmin * 2, 0.0, 128.0), std::clamp((d.box.ymin - 16) * 2, 0.0, 64.0),
             std::clamp(d.box.xmax * 2, 0.0, 128.0), std::clamp((d.box.ymax - 16) * 2, 0.0, 64.0)};
    if (d.box.width() > 0 && d.box.height() > 0) expected.push_back(d);
  }
  CHECK(expected.size() < canvas.size());
  REQUIRE(dets.size() == expected.size());
  for (std::size_t i = 0; i < dets.size(); ++i) {
    CHECK(dets[i].box.xmin == doctest::Approx(expected[i].box.xmin));
    CHECK(dets[i].box.ymin == doctest::Approx(expected[i].box.ymin));
    CHECK(dets[i].box.xmax == doctest::Approx(expected[i].box.xmax));
    CHECK(dets[i].box.ymax == doctest::Approx(expected[i].box.ymax));
    CHECK(dets[i].score() == expected[i].score());
  }
}

TEST_CASE("metrics CSV") {
  std::vector<EpochRow> rows = {{1, 0.25, 3.5, 50, 60, 99.5}, {2, 0.5, 2.25, 75, 80, 99.75}};
  const std::string text = metrics_csv(rows);
  CHECK(text.rfind("epoch,map,loss,class_acc,obj_acc,noobj_acc\n", 0) == 0);
  const auto back = parse_metrics_csv(text);
  REQUIRE(back.size() == 2);
  CHECK(back[1].epoch == 2);
  CHECK(back[1].loss == 2.25);
  CHECK(back[0].noobj_acc == 99.5);
  CHECK(metrics_csv(back) == text);
  CHECK(parse_metrics_csv(metrics_csv({})).empty());
  try {
    parse_metrics_csv(text + "3,0.1,oops,1,1,1\n");
    FAIL("expected error");
  } catch (const std::invalid_argument& e) {
    CHECK(std::string(e.what()).find("line 4") != std::string::npos);
  }
  CHECK_THROWS_AS(parse_metrics_csv("nope\n"), std::invalid_argument);
  CHECK_THROWS_AS(parse_metrics_csv(text + "3,0.1,0.2,1,1,1,7\n"), std::invalid_argument);
}
