#include <filesystem>
#include <set>

#include "doctest.h"
#include "melnet/image.hpp"
#include "melnet/kitti.hpp"
#include "melnet/rng.hpp"

using namespace melnet;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  const fs::path d = fs::temp_directory_path() / name;
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

std::vector<DatasetEntry> numbered_entries(int n) {
  std::vector<DatasetEntry> e;
  for (int i = 0; i < n; ++i) e.push_back({"img" + std::to_string(i) + ".png", "lbl" + std::to_string(i) + ".txt"});
  return e;
}

}  // namespace

TEST_CASE("class map") {
  const auto m = ClassMap::kitti();
  CHECK(m.size() == 9);
  const char* names[] = {"Car", "Van", "Truck", "Pedestrian", "Person_sitting", "Cyclist", "Tram", "Misc", "DontCare"};
  for (int i = 0; i < 9; ++i) {
    CHECK(m.id(names[i]) == i);
    CHECK(m.name(i) == names[i]);
  }
  CHECK_THROWS_AS(m.id("Bus"), LabelError);
  CHECK_THROWS_AS(ClassMap({"a", "a"}), std::invalid_argument);
}

TEST_CASE("KITTI label parsing") {
  const auto m = ClassMap::kitti();
  auto labels = parse_kitti_labels("Car 0.00 0 1.85 387.63 181.54 423.81 203.12 1.67 1.87 3.69 -16.53 2.39 58.49 1.57\n", m);
  REQUIRE(labels.size() == 1);
  CHECK(labels[0].type == "Car");
  CHECK(labels[0].bbox == BoxXYXY{387.63, 181.54, 423.81, 203.12});
  CHECK(labels[0].z_m == doctest::Approx(58.49));
  CHECK(!labels[0].score);
  CHECK(parse_kitti_labels("", m).empty());
  CHECK(parse_kitti_labels("\n  \n", m).empty());

  auto scored = parse_kitti_labels("Van 0 0 0 1 2 3 4 1 1 1 0 0 0 0 0.75\n", m);
  CHECK(*scored[0].score == 0.75);

  try {
    parse_kitti_labels("Car 0 0 0 1 2 3 4 1 1 1 0 0 0 0\nCar 0 0 0 1 2 3 4 1 1 1 0 0 0\n", m, "x.txt");
    FAIL("no throw");
  } catch (const LabelError& e) {
    CHECK(std::string(e.what()).find("x.txt:2") != std::string::npos);
  }
  CHECK_THROWS_AS(parse_kitti_labels("Bus 0 0 0 1 2 3 4 1 1 1 0 0 0 0\n", m), LabelError);
  CHECK_THROWS_AS(parse_kitti_labels("Car 0 0 0 1 2 3 4x 1 1 1 0 0 0 0\n", m), LabelError);
  CHECK_THROWS_AS(parse_kitti_labels("Car 0 0 0 5 2 3 4 1 1 1 0 0 0 0\n", m), LabelError);
}

TEST_CASE("YOLO lines") {
  CHECK(format_yolo_line(0, xyxy_to_yolo({100, 50, 300, 150}, 1242, 375)) == "0 0.161031 0.266667 0.161031 0.266667\n");
  auto back = parse_yolo_labels("0 0.161031 0.266667 0.161031 0.266667\n8 0.5 0.5 1 1\n", 9);
  REQUIRE(back.size() == 2);
  CHECK(back[1].class_id == 8);
  CHECK_THROWS_AS(parse_yolo_labels("9 0.5 0.5 0.1 0.1\n", 9), LabelError);
  CHECK_THROWS_AS(parse_yolo_labels("1 1.5 0.5 0.1 0.1\n", 9), LabelError);
  CHECK_THROWS_AS(parse_yolo_labels("1 0.5 0.5 0.1\n", 9), LabelError);
}

TEST_CASE("conversion matches the golden fixture") {
  const fs::path fixture = fs::path(MELNET_FIXTURE_DIR);
  const fs::path out = fresh_dir("melnet_convert_a");
  auto report = convert_dataset(fixture / "kitti", out, ClassMap::kitti());
  CHECK(report.images == 5);
  CHECK(report.objects == 11);
  CHECK(report.skipped == 1);  // the zero-width car
  CHECK(report.per_class == std::vector<std::size_t>{3, 1, 1, 1, 1, 1, 1, 1, 1});
  for (const char* stem : {"000000", "000001", "000002", "000003", "000004"}) {
    CHECK_MESSAGE(read_text_file(out / "labels" / (std::string(stem) + ".txt")) ==
                      read_text_file(fixture / "kitti_golden" / (std::string(stem) + ".txt")),
                  stem);
  }
  const fs::path again = fresh_dir("melnet_convert_b");
  convert_dataset(fixture / "kitti", again, ClassMap::kitti());
  for (const auto& e : fs::directory_iterator(out / "labels")) {
    CHECK(read_text_file(e.path()) == read_text_file(again / "labels" / e.path().filename()));
  }

  const fs::path bad = fresh_dir("melnet_convert_missing");
  fs::create_directories(bad / "label_2");
  fs::create_directories(bad / "image_2");
  write_text_file(bad / "label_2" / "000009.txt", "");
  const fs::path partial = fresh_dir("melnet_convert_c");
  try {
    convert_dataset(bad, partial, ClassMap::kitti());
    FAIL("expected a missing-image error");
  } catch (const std::runtime_error& e) {
    CHECK(std::string(e.what()).find("000009.png") != std::string::npos);
  }
  CHECK(!fs::exists(partial / "labels"));
}

TEST_CASE("conversion round trip within quantization") {
  Rng rng(8);
  double worst = 0;
  for (int i = 0; i < 2000; ++i) {
    const double w = 1242, h = 375;
    const double x0 = rng.uniform(0, w - 2), y0 = rng.uniform(0, h - 2);
    const BoxXYXY b{x0, y0, rng.uniform(x0 + 1, w), rng.uniform(y0 + 1, h)};
    const auto parsed = parse_yolo_labels(format_yolo_line(0, xyxy_to_yolo(b, w, h)), 1);
    const auto back = yolo_to_xyxy(parsed[0].box, w, h);
    worst = std::max({worst, std::abs(back.xmin - b.xmin), std::abs(back.xmax - b.xmax), std::abs(back.ymin - b.ymin),
                      std::abs(back.ymax - b.ymax)});
    for (double v : {parsed[0].box.x_center, parsed[0].box.y_center, parsed[0].box.width, parsed[0].box.height}) {
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
    }
  }
  CHECK(worst < 0.51);
}

TEST_CASE("split") {
  auto a = split(numbered_entries(10), 0.8, 3);
  CHECK(a.train.size() == 8);
  CHECK(a.val.size() == 2);
  auto b = split(numbered_entries(10), 0.8, 3);
  CHECK(a.train == b.train);
  CHECK(a.val == b.val);

  auto big = numbered_entries(7418);
  auto reversed = big;
  std::reverse(reversed.begin(), reversed.end());
  auto s = split(big, 0.8, 11);
  CHECK(s.train.size() == 5934);
  CHECK(s.val.size() == 1484);
  auto r = split(reversed, 0.8, 11);
  CHECK(r.train == s.train);
  std::set<DatasetEntry> all(s.train.begin(), s.train.end());
  for (const auto& e : s.val) CHECK(all.insert(e).second);
  CHECK(all.size() == 7418);
  CHECK(split(big, 0.8, 12).train != s.train);
}

TEST_CASE("manifest round trip") {
  const fs::path dir = fresh_dir("melnet_manifest");
  std::vector<DatasetEntry> entries = {{dir / "a.png", dir / "a.txt"}, {dir / "b c.png", dir / "b.txt"}};
  write_manifest(dir / "train.txt", entries);
  CHECK(read_manifest(dir / "train.txt") == entries);
  CHECK(read_text_file(dir / "train.txt") == "a.png\ta.txt\nb c.png\tb.txt\n");
  write_text_file(dir / "rel.txt", "img/x.png\tlab/x.txt\n");
  CHECK(read_manifest(dir / "rel.txt")[0].image == dir / "img/x.png");
  write_text_file(dir / "broken.txt", "only-one-field\n");
  CHECK_THROWS_AS(read_manifest(dir / "broken.txt"), LabelError);
}

TEST_CASE("PNG and letterbox") {
  const fs::path dir = fresh_dir("melnet_png");
  Image im(7, 5);
  Rng rng(1);
  for (auto& v : im.data) v = static_cast<float>(rng.below(256)) / 255.0f;
  write_png(dir / "a.png", im);
  CHECK(png_dimensions(dir / "a.png") == std::pair{7, 5});
  CHECK(read_png(dir / "a.png") == im);
  CHECK_THROWS_AS(read_png(dir / "missing.png"), ImageError);

  LetterboxInfo info;
  Image wide(200, 100, 1.0f);
  Image lb = letterbox(wide, 64, &info);
  CHECK(lb.width == 64);
  CHECK(info.scale == doctest::Approx(0.32));
  CHECK(info.pad_y == 16);
  CHECK(lb.at(0, 0, 0) == 0.5f);
  CHECK(lb.at(0, 32, 32) == 1.0f);
  const BoxYolo b = to_letterbox({0.5, 0.5, 0.5, 1.0}, info);
  CHECK(b.y_center == doctest::Approx(0.5));
  CHECK(b.height == doctest::Approx(0.5));
  CHECK(b.width == doctest::Approx(0.5));
  const BoxXYXY src = from_letterbox(yolo_to_xyxy(b, 64, 64), info);
  CHECK(src.xmin == doctest::Approx(50));
  CHECK(src.ymax == doctest::Approx(100));

  const auto sizes = letterboxed_sizes(
      std::vector<DatasetEntry>{{fs::path(MELNET_FIXTURE_DIR) / "kitti/training/image_2/000000.png",
                                 fs::path(MELNET_FIXTURE_DIR) / "kitti_golden/000000.txt"}},
      640, 9);
  REQUIRE(sizes.size() == 3);
  CHECK(sizes[1].w == doctest::Approx(200 * 640.0 / 1242).epsilon(1e-5));
}
