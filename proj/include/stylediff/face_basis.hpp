#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "stylediff/params.hpp"
#include "stylediff/tensor.hpp"

namespace stylediff {

/// Linear face model: vertices = mean_shape + expr_bases * m, reshaped V x 3.
struct FaceBasis {
  Tensor<float> mean_shape;  // [V x 3]
  Tensor<float> expr_bases;  // [3V x motion_dim]
  std::vector<std::size_t> mouth_index;

  std::size_t vertex_count() const { return mean_shape.rows(); }
  std::size_t motion_dim() const { return expr_bases.cols(); }
  std::size_t mouth_coords() const { return 3 * mouth_index.size(); }

  /// Throws if the index set is empty, out of range, or shapes disagree.
  void validate() const;

  /// Mean-shape offsets [1 x 3M] and bases restricted to mouth rows [motion_dim x 3M].
  Tensor<float> mouth_mean() const;
  Tensor<float> mouth_bases_t() const;

  /// Named tensors under "face_basis/" for storage inside a checkpoint.
  void store_into(TensorMap& out) const;
  static FaceBasis load_from(const TensorMap& in);

  /// V vertices, mouth = {0..mouth_vertices-1}; the mouth rows load only on
  /// motion dims [0, mouth_dims).
  static FaceBasis synthetic(std::uint64_t seed, std::size_t vertices, std::size_t mouth_vertices,
                             std::size_t motion_dim, std::size_t mouth_dims);
};

/// Flattened mouth-vertex coordinates for every row of `motion`.
Tensor<float> mouth_vertices(const Tensor<float>& motion, const FaceBasis& basis);

}  // namespace stylediff
