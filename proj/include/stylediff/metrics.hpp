#pragma once

#include <cstddef>
#include <vector>

#include "stylediff/synth_world.hpp"
#include "stylediff/tensor.hpp"

namespace stylediff {

/// Fraction of motions the oracle assigns to their labelled style.
double metric_sa(const SynthWorld& world, const std::vector<Tensor<float>>& motions,
                 const std::vector<std::size_t>& labels);

/// Mean over items of the per-frame L2 distance, averaged over frames.
double metric_md(const std::vector<Tensor<float>>& generated, const std::vector<Tensor<float>>& truth);

/// Mean L2 distance between paired style codes.
double metric_scd(const std::vector<std::vector<float>>& predicted, const std::vector<std::vector<float>>& reference);

/// Mean oracle sync score over items.
double metric_sync(const SynthWorld& world, const std::vector<Tensor<float>>& generated,
                   const std::vector<Tensor<float>>& audio);

/// Fraction of codes whose nearest centroid (ties to the lowest index) is their label.
double nearest_centroid_accuracy(const std::vector<std::vector<float>>& codes,
                                 const std::vector<std::size_t>& labels,
                                 const std::vector<std::vector<float>>& centroids);

/// Spearman rank correlation with average ranks for ties.
double spearman(const std::vector<double>& x, const std::vector<double>& y);

}  // namespace stylediff
