#include "stylediff/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace stylediff {

namespace {

void require_pairs(std::size_t a, std::size_t b, const char* metric) {
  if (a != b) throw std::invalid_argument(std::string(metric) + ": item counts differ");
  if (a == 0) throw std::invalid_argument(std::string(metric) + ": no items");
}

double l2(const float* a, const float* b, std::size_t n) {
  double s = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = double(a[i]) - double(b[i]);
    s += d * d;
  }
  return std::sqrt(s);
}

std::vector<double> ranks(const std::vector<double>& v) {
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&v](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> r(v.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
    const double avg = 0.5 * double(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) r[order[k]] = avg;
    i = j + 1;
  }
  return r;
}

}  // namespace

double metric_sa(const SynthWorld& world, const std::vector<Tensor<float>>& motions,
                 const std::vector<std::size_t>& labels) {
  require_pairs(motions.size(), labels.size(), "SA");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < motions.size(); ++i) hits += world.oracle_style_classify(motions[i]) == labels[i];
  return double(hits) / double(motions.size());
}

double metric_md(const std::vector<Tensor<float>>& generated, const std::vector<Tensor<float>>& truth) {
  require_pairs(generated.size(), truth.size(), "MD");
  double total = 0;
  for (std::size_t i = 0; i < generated.size(); ++i) {
    if (generated[i].shape() != truth[i].shape() || generated[i].rows() == 0) {
      throw std::invalid_argument("MD: motion shapes differ");
    }
    double item = 0;
    for (std::size_t l = 0; l < generated[i].rows(); ++l) {
      item += l2(generated[i].row(l).data(), truth[i].row(l).data(), generated[i].cols());
    }
    total += item / double(generated[i].rows());
  }
  return total / double(generated.size());
}

double metric_scd(const std::vector<std::vector<float>>& predicted, const std::vector<std::vector<float>>& reference) {
  require_pairs(predicted.size(), reference.size(), "SCD");
  double total = 0;
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    if (predicted[i].size() != reference[i].size()) throw std::invalid_argument("SCD: code widths differ");
    total += l2(predicted[i].data(), reference[i].data(), predicted[i].size());
  }
  return total / double(predicted.size());
}

double metric_sync(const SynthWorld& world, const std::vector<Tensor<float>>& generated,
                   const std::vector<Tensor<float>>& audio) {
  require_pairs(generated.size(), audio.size(), "sync");
  double total = 0;
  for (std::size_t i = 0; i < generated.size(); ++i) total += world.oracle_sync_score(audio[i], generated[i]);
  return total / double(generated.size());
}

double nearest_centroid_accuracy(const std::vector<std::vector<float>>& codes,
                                 const std::vector<std::size_t>& labels,
                                 const std::vector<std::vector<float>>& centroids) {
  require_pairs(codes.size(), labels.size(), "centroid accuracy");
  if (centroids.empty()) throw std::invalid_argument("centroid accuracy: no centroids");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < codes.size(); ++i) {
    std::size_t best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < centroids.size(); ++c) {
      if (centroids[c].size() != codes[i].size()) throw std::invalid_argument("centroid accuracy: width mismatch");
      const double d = l2(codes[i].data(), centroids[c].data(), codes[i].size());
      if (d < best_d) {
        best_d = d;
        best = c;
      }
    }
    hits += best == labels[i];
  }
  return double(hits) / double(codes.size());
}

double spearman(const std::vector<double>& x, const std::vector<double>& y) {
  require_pairs(x.size(), y.size(), "spearman");
  const auto rx = ranks(x), ry = ranks(y);
  const double n = double(x.size());
  const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
  const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0 || syy == 0) return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

}  // namespace stylediff
