#pragma once

#include <span>
#include <vector>

#include "featflow/tensor.hpp"

namespace featflow {

// Adaptive temporal fusion of the current frame's features with warped
// neighbor features. At every position the member weights are the softmax of
// the cosine similarity between each member's feature vector and the current
// frame's vector; the current frame's self-similarity is 1 and any member
// whose vector (or the current vector) has zero norm gets similarity 0.
// Weights are nonnegative and sum to 1, so the output vector lies in the
// convex hull of the member vectors.

// One scalar map (1 x H x W) per member; index 0 is the current frame,
// index k >= 1 is warped_neighbors[k-1].
std::vector<Tensor> adaptive_weights(const Tensor& current,
                                     std::span<const Tensor> warped_neighbors);

Tensor aggregate(const Tensor& current, std::span<const Tensor> warped_neighbors);

void aggregate_backward(const Tensor& current, std::span<const Tensor> warped_neighbors,
                        const Tensor& grad_out, Tensor& grad_current,
                        std::vector<Tensor>& grad_neighbors);

}  // namespace featflow
