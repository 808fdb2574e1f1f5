#pragma once

#include <cstdint>
#include <memory>
#include <vector>

#include "spqi/tape.hpp"

namespace spqi {

enum class LayerKind { gat, gcn };

/// One graph layer. Multi-head: each head owns a d_in×d_head weight and a
/// 2*d_head attention vector; head outputs are concatenated, so d_out must be
/// divisible by the head count.
struct GatLayerParams {
  std::vector<Tensor> head_w;  // d_in x d_head
  std::vector<Tensor> head_a;  // 2*d_head x 1
  double slope = 0.2;          // LeakyReLU slope, in (0,1)
};

GatLayerParams init_gat_layer(std::size_t d_in, std::size_t d_out,
                              std::size_t heads, double slope,
                              std::uint64_t seed, std::uint64_t stream);

/// Attention aggregation over the adjacency: z = H W, e_ij =
/// leaky_relu(a . [z_i || z_j]) for neighbors, alpha = masked softmax, out_i =
/// elu(sum_j alpha_ij z_j). Heads concatenate. The adjacency diagonal must be
/// all true (guaranteed by BatchGraph construction).
Tape::Value gat_layer(Tape& tape, Tape::Value h,
                      std::shared_ptr<const std::vector<std::uint8_t>> adjacency,
                      const std::vector<Tape::Value>& head_w,
                      const std::vector<Tape::Value>& head_a, double slope);

/// Mean-aggregation alternative sharing the same parameters (attention
/// vectors unused): out = elu(A_norm H W) per head, concatenated.
Tape::Value gcn_layer(Tape& tape, Tape::Value h,
                      std::shared_ptr<const std::vector<std::uint8_t>> adjacency,
                      const std::vector<Tape::Value>& head_w);

}  // namespace spqi
