#include <algorithm>

#include "doctest.h"
#include "melnet/anchors.hpp"
#include "melnet/rng.hpp"

using namespace melnet;

namespace {

std::vector<WHSample> random_samples(Rng& rng, int n) {
  std::vector<WHSample> s;
  for (int i = 0; i < n; ++i) {
    // Long-tailed sizes with a spread of aspect ratios.
    const double scale = std::exp(rng.uniform(std::log(8.0), std::log(400.0)));
    const double aspect = std::exp(rng.uniform(-1.0, 1.0));
    s.push_back({scale * aspect, scale / aspect});
  }
  return s;
}

// Plain Lloyd iterations from random distinct initial centroids with median
// updates, repeated many times; the best mean IoU found.
double restart_oracle(const std::vector<WHSample>& samples, int k, int restarts, std::uint64_t seed) {
  Rng rng(seed);
  double best = 0;
  for (int r = 0; r < restarts; ++r) {
    std::vector<WHSample> pool = samples;
    rng.shuffle(pool);
    std::vector<Anchor> c;
    for (const auto& s : pool) {
      if (static_cast<int>(c.size()) == k) break;
      if (std::none_of(c.begin(), c.end(), [&](const Anchor& a) { return a.pw == s.w && a.ph == s.h; }))
        c.push_back({s.w, s.h});
    }
    for (int it = 0; it < 100; ++it) {
      std::vector<std::vector<double>> ws(k), hs(k);
      for (const auto& s : samples) {
        int bi = 0;
        double bv = -1;
        for (int j = 0; j < k; ++j) {
          const double inter = std::min(s.w, c[j].pw) * std::min(s.h, c[j].ph);
          const double v = inter / (s.w * s.h + c[j].pw * c[j].ph - inter);
          if (v > bv) bv = v, bi = j;
        }
        ws[bi].push_back(s.w);
        hs[bi].push_back(s.h);
      }
      for (int j = 0; j < k; ++j) {
        if (ws[j].empty()) continue;
        std::sort(ws[j].begin(), ws[j].end());
        std::sort(hs[j].begin(), hs[j].end());
        const std::size_t n = ws[j].size();
        c[j].pw = n % 2 ? ws[j][n / 2] : (ws[j][n / 2 - 1] + ws[j][n / 2]) / 2;
        c[j].ph = n % 2 ? hs[j][n / 2] : (hs[j][n / 2 - 1] + hs[j][n / 2]) / 2;
      }
    }
    best = std::max(best, mean_best_iou(samples, c));
  }
  return best;
}

}  // namespace

TEST_CASE("k-means fixed points") {
  std::vector<WHSample> same(10, WHSample{30, 60});
  auto r = kmeans_iou(same, 1, 3);
  REQUIRE(r.anchors.size() == 1);
  CHECK(r.anchors[0] == Anchor{30, 60});
  CHECK(r.mean_iou == 1.0);

  std::vector<WHSample> four = {{10, 10}, {50, 20}, {20, 80}, {200, 150}, {50, 20}};
  auto r4 = kmeans_iou(four, 4, 9);
  std::vector<Anchor> want = {{10, 10}, {50, 20}, {20, 80}, {200, 150}};
  std::sort(want.begin(), want.end(), [](auto& a, auto& b) { return a.area() < b.area(); });
  CHECK(r4.anchors == want);
  CHECK(r4.mean_iou == 1.0);
}

TEST_CASE("k-means errors") {
  std::vector<WHSample> none;
  CHECK_THROWS_AS(kmeans_iou(none, 1, 0), std::invalid_argument);
  std::vector<WHSample> two = {{1, 1}, {2, 2}, {1, 1}};
  CHECK_THROWS_AS(kmeans_iou(two, 3, 0), std::invalid_argument);
  CHECK_THROWS_AS(kmeans_iou(two, 0, 0), std::invalid_argument);
}

TEST_CASE("k-means quality, monotonicity and invariances") {
  Rng rng(2024);
  for (int trial = 0; trial < 5; ++trial) {
    auto samples = random_samples(rng, 50);
    auto r = kmeans_iou(samples, 6, 17);
    CHECK(r.anchors.size() == 6);
    for (std::size_t i = 1; i < r.anchors.size(); ++i) CHECK(r.anchors[i - 1].area() <= r.anchors[i].area());
    for (std::size_t i = 1; i < r.history.size(); ++i) CHECK(r.history[i] >= r.history[i - 1]);
    CHECK(r.mean_iou == doctest::Approx(mean_best_iou(samples, r.anchors)).epsilon(1e-12));
    CHECK(r.mean_iou >= mean_best_iou(samples, quantile_anchors(samples, 6)));
    const double oracle = restart_oracle(samples, 6, 300, 100 + trial);
    CHECK(r.mean_iou >= oracle - 0.02);

    auto shuffled = samples;
    rng.shuffle(shuffled);
    CHECK(kmeans_iou(shuffled, 6, 17).anchors == r.anchors);

    auto doubled = samples;
    for (auto& s : doubled) s.w *= 4, s.h *= 4;
    auto rd = kmeans_iou(doubled, 6, 17);
    for (std::size_t i = 0; i < 6; ++i) {
      CHECK(rd.anchors[i].pw == doctest::Approx(4 * r.anchors[i].pw));
      CHECK(rd.anchors[i].ph == doctest::Approx(4 * r.anchors[i].ph));
    }
  }
}

TEST_CASE("scale assignment") {
  std::vector<Anchor> six = {{1, 1}, {2, 2}, {3, 3}, {4, 4}, {5, 5}, {6, 6}};
  auto s = assign_to_scales(six);
  CHECK(s[0] == std::vector<Anchor>{{4, 4}, {5, 5}, {6, 6}});
  CHECK(s[1] == std::vector<Anchor>{{1, 1}, {2, 2}, {3, 3}});
  std::vector<Anchor> four = {{1, 1}, {2, 2}, {3, 3}, {4, 4}};
  CHECK(assign_to_scales(four)[0].size() == 2);
  std::vector<Anchor> equal = {{2, 8}, {4, 4}, {8, 2}, {1, 16}};
  auto e = assign_to_scales(equal);
  CHECK(e[0] == std::vector<Anchor>{{8, 2}, {1, 16}});
  CHECK(e[1] == std::vector<Anchor>{{2, 8}, {4, 4}});
  std::vector<Anchor> five(5, Anchor{1, 1});
  CHECK_THROWS_AS(assign_to_scales(five), std::invalid_argument);
  std::vector<Anchor> unsorted = {{5, 5}, {1, 1}};
  CHECK_THROWS_AS(assign_to_scales(unsorted), std::invalid_argument);
}

TEST_CASE("anchors text") {
  auto anchors = default_anchors(6);
  const std::string text = anchors_to_text(anchors, 42, 0.61);
  CHECK(text.rfind("# k=6 seed=42 mean_iou=0.610000\n", 0) == 0);
  CHECK(anchors_from_text(text) == anchors);
  CHECK_THROWS_AS(anchors_from_text("# nothing\n"), std::invalid_argument);
  CHECK_THROWS_AS(anchors_from_text("10 x\n"), std::invalid_argument);
  CHECK_THROWS_AS(anchors_from_text("10 20 30\n"), std::invalid_argument);
}
