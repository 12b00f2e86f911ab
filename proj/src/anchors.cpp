#include "melnet/anchors.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "melnet/rng.hpp"

namespace melnet {

namespace {

double overlap(const WHSample& s, const Anchor& a) { return wh_iou(s.w, s.h, a.pw, a.ph); }

std::size_t nearest(const WHSample& s, std::span<const Anchor> centroids) {
  std::size_t best = 0;
  double best_iou = -1;
  for (std::size_t c = 0; c < centroids.size(); ++c) {
    const double v = overlap(s, centroids[c]);
    if (v > best_iou) {
      best_iou = v;
      best = c;
    }
  }
  return best;
}

double median(std::vector<double>& v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

KMeansResult run_once(std::span<const WHSample> samples, int k, Rng& rng, bool farthest, int max_iter) {
  const std::size_t first = rng.below(samples.size());
  std::vector<Anchor> centroids = {{samples[first].w, samples[first].h}};
  std::vector<double> dist(samples.size(), std::numeric_limits<double>::infinity());
  while (static_cast<int>(centroids.size()) < k) {
    std::size_t far = 0;
    double far_d = -1, total = 0;
    for (std::size_t i = 0; i < samples.size(); ++i) {
      dist[i] = std::min(dist[i], 1.0 - overlap(samples[i], centroids.back()));
      total += dist[i] * dist[i];
      if (dist[i] > far_d) {
        far_d = dist[i];
        far = i;
      }
    }
    if (!farthest) {
      // Squared-distance weighted draw; lands on a sample not yet chosen
      // because chosen samples have zero weight.
      double u = rng.uniform() * total;
      for (std::size_t i = 0; i < samples.size(); ++i) {
        if (dist[i] <= 0) continue;
        far = i;
        u -= dist[i] * dist[i];
        if (u < 0) break;
      }
    }
    centroids.push_back({samples[far].w, samples[far].h});
  }

  KMeansResult r;
  r.mean_iou = mean_best_iou(samples, centroids);
  r.history.push_back(r.mean_iou);
  for (int it = 0; it < max_iter; ++it) {
    std::vector<std::vector<double>> ws(k), hs(k);
    for (const auto& s : samples) {
      const std::size_t c = nearest(s, centroids);
      ws[c].push_back(s.w);
      hs[c].push_back(s.h);
    }
    std::vector<Anchor> next = centroids;
    for (int c = 0; c < k; ++c) {
      if (!ws[c].empty()) next[c] = {median(ws[c]), median(hs[c])};
    }
    if (next == centroids) break;
    double m = mean_best_iou(samples, next);
    if (m < r.mean_iou) {
      // Fall back to moving centroids one at a time, keeping only moves that
      // do not lower the objective.
      next = centroids;
      m = r.mean_iou;
      bool moved = false;
      for (int c = 0; c < k; ++c) {
        if (ws[c].empty()) continue;
        const Anchor saved = next[c];
        next[c] = {median(ws[c]), median(hs[c])};
        const double trial = mean_best_iou(samples, next);
        if (trial >= m && !(next[c] == saved)) {
          m = trial;
          moved = true;
        } else {
          next[c] = saved;
        }
      }
      if (!moved) break;
    }
    centroids = std::move(next);
    r.mean_iou = m;
    r.history.push_back(m);
    r.iterations = it + 1;
  }
  std::stable_sort(centroids.begin(), centroids.end(),
                   [](const Anchor& a, const Anchor& b) { return a.area() < b.area(); });
  r.anchors = std::move(centroids);
  return r;
}

}  // namespace

double mean_best_iou(std::span<const WHSample> samples, std::span<const Anchor> anchors) {
  if (samples.empty()) return 0.0;
  double total = 0;
  for (const auto& s : samples) {
    double best = 0;
    for (const auto& a : anchors) best = std::max(best, overlap(s, a));
    total += best;
  }
  return total / static_cast<double>(samples.size());
}

KMeansResult kmeans_iou(std::span<const WHSample> input, int k, std::uint64_t seed, int max_iter, int restarts) {
  if (input.empty()) throw std::invalid_argument("kmeans_iou: no samples");
  if (k < 1) throw std::invalid_argument("kmeans_iou: k must be at least 1");
  for (const auto& s : input) {
    if (!(s.w > 0) || !(s.h > 0)) throw std::invalid_argument("kmeans_iou: sample sizes must be positive");
  }
  std::vector<WHSample> samples(input.begin(), input.end());
  std::sort(samples.begin(), samples.end());
  std::vector<WHSample> uniq = samples;
  uniq.erase(std::unique(uniq.begin(), uniq.end()), uniq.end());
  if (static_cast<std::size_t>(k) > uniq.size()) {
    throw std::invalid_argument("kmeans_iou: k = " + std::to_string(k) + " exceeds the " +
                                std::to_string(uniq.size()) + " distinct samples");
  }

  Rng rng(seed);
  KMeansResult best;
  best.mean_iou = -1;
  for (int r = 0; r < std::max(1, restarts); ++r) {
    KMeansResult run = run_once(samples, k, rng, r == 0, max_iter);
    if (run.mean_iou > best.mean_iou) best = std::move(run);
  }
  return best;
}

std::vector<Anchor> quantile_anchors(std::span<const WHSample> samples, int k) {
  if (samples.empty() || k < 1) throw std::invalid_argument("quantile_anchors: need samples and k >= 1");
  std::vector<double> ws, hs;
  for (const auto& s : samples) {
    ws.push_back(s.w);
    hs.push_back(s.h);
  }
  std::sort(ws.begin(), ws.end());
  std::sort(hs.begin(), hs.end());
  std::vector<Anchor> out;
  for (int j = 0; j < k; ++j) {
    const auto idx = std::min(ws.size() - 1, static_cast<std::size_t>((j + 0.5) / k * ws.size()));
    out.push_back({ws[idx], hs[idx]});
  }
  return out;
}

std::vector<std::vector<Anchor>> assign_to_scales(std::span<const Anchor> sorted_anchors, int scales) {
  if (scales < 1 || sorted_anchors.empty() || sorted_anchors.size() % scales != 0) {
    throw std::invalid_argument("assign_to_scales: " + std::to_string(sorted_anchors.size()) +
                                " anchors cannot be split over " + std::to_string(scales) + " scales");
  }
  for (std::size_t i = 1; i < sorted_anchors.size(); ++i) {
    if (sorted_anchors[i].area() < sorted_anchors[i - 1].area()) {
      throw std::invalid_argument("assign_to_scales: anchors are not sorted by area");
    }
  }
  const std::size_t per = sorted_anchors.size() / scales;
  std::vector<std::vector<Anchor>> out(scales);
  for (int s = 0; s < scales; ++s) {
    const std::size_t begin = (scales - 1 - s) * per;
    out[s].assign(sorted_anchors.begin() + begin, sorted_anchors.begin() + begin + per);
  }
  return out;
}

std::string anchors_to_text(std::span<const Anchor> anchors, std::uint64_t seed, double mean_iou) {
  std::ostringstream os;
  char buf[96];
  std::snprintf(buf, sizeof buf, "# k=%zu seed=%llu mean_iou=%.6f\n", anchors.size(),
                static_cast<unsigned long long>(seed), mean_iou);
  os << buf;
  for (const auto& a : anchors) {
    std::snprintf(buf, sizeof buf, "%.17g %.17g\n", a.pw, a.ph);
    os << buf;
  }
  return os.str();
}

std::vector<Anchor> anchors_from_text(const std::string& text) {
  std::istringstream is(text);
  std::string line;
  std::vector<Anchor> out;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    std::istringstream ls(line);
    Anchor a;
    std::string extra;
    if (!(ls >> a.pw)) {
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      throw std::invalid_argument("anchors line " + std::to_string(lineno) + ": expected `pw ph`");
    }
    if (!(ls >> a.ph) || (ls >> extra) || !(a.pw > 0) || !(a.ph > 0)) {
      throw std::invalid_argument("anchors line " + std::to_string(lineno) + ": expected two positive numbers");
    }
    out.push_back(a);
  }
  if (out.empty()) throw std::invalid_argument("anchors text holds no anchors");
  return out;
}

std::vector<Anchor> default_anchors(int count) {
  // Common two-scale COCO priors, given for 416 px input, rescaled to 640 px.
  static const std::vector<Anchor> six = {{15.38, 21.54}, {35.38, 41.54},  {56.92, 89.23},
                                          {124.62, 126.15}, {207.69, 260.0}, {529.23, 490.77}};
  static const std::vector<Anchor> four = {{15.38, 21.54}, {56.92, 89.23}, {124.62, 126.15}, {529.23, 490.77}};
  if (count == 6) return six;
  if (count == 4) return four;
  throw std::invalid_argument("no default anchor set of size " + std::to_string(count));
}

}  // namespace melnet
