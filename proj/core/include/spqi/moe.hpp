#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "spqi/tape.hpp"

namespace spqi {

/// The six expert inputs, in fixed bundle order.
inline constexpr std::size_t kNumFeatureTypes = 6;
inline constexpr std::array<const char*, kNumFeatureTypes> kFeatureTypeNames = {
    "text_q", "text_a", "product", "category", "parent_category", "behavior"};

/// Ablation mask over the six feature types (Table-style feature subsets).
using FeatureMask = std::array<bool, kNumFeatureTypes>;

FeatureMask full_feature_mask();
/// Parses "text,behavior" style lists; "text" expands to both text features,
/// "full" to everything. Throws ContractError on unknown names or empty mask.
FeatureMask parse_feature_mask(const std::string& spec);
std::string feature_mask_to_string(const FeatureMask& mask);
std::size_t mask_count(const FeatureMask& mask);

enum class MoeNorm { softmax, raw_ratio };

/// Trainable parameters of the feature mixer: one projection per feature type
/// onto the common dimensionality plus the gate.
struct MoeParams {
  std::vector<Tensor> ffn_w;  // per type: in_dim x n
  std::vector<Tensor> ffn_b;  // per type: 1 x n
  Tensor gate_w;              // n x i
  Tensor gate_w2;             // n x i
  Tensor gate_c1;             // 1 x i
  Tensor gate_c2;             // 1 x n
};

MoeParams init_moe_params(const std::vector<std::size_t>& in_dims,
                          std::size_t common_dim, std::size_t gate_dim,
                          std::uint64_t seed);

/// Projects each feature type through its affine+ELU FFN and interleaves the
/// results into an (B*f)×n block matrix, row b*f+j holding feature type j of
/// node b. features[j] is B×in_dim_j.
Tape::Value project_features(Tape& tape,
                             const std::vector<Tape::Value>& features,
                             const std::vector<Tape::Value>& ffn_w,
                             const std::vector<Tape::Value>& ffn_b);

struct MoeGateValues {
  Tape::Value w;   // n x i
  Tape::Value w2;  // n x i
  Tape::Value c1;  // 1 x i
  Tape::Value c2;  // 1 x n
};

struct MoeMixResult {
  Tape::Value h;       // B x n joint representation
  Tape::Value lambda;  // (B*f) x n convex weights per dimension
};

/// Gate scores per (feature type, dimension), normalized across the f feature
/// types independently for every dimension, then the Hadamard-weighted sum.
/// Gradients flow through both the blocks and the gate parameters. Note that
/// in softmax mode the two gate biases shift every feature type of a
/// dimension equally and cancel exactly in the normalization; they influence
/// the output only under raw_ratio.
MoeMixResult moe_mix(Tape& tape, Tape::Value f_blocks, std::size_t f_active,
                     const MoeGateValues& gate, MoeNorm norm);

}  // namespace spqi
