#include "spqi/moe.hpp"

#include <cmath>

#include "spqi/errors.hpp"
#include "spqi/rng.hpp"

namespace spqi {

FeatureMask full_feature_mask() {
  FeatureMask m;
  m.fill(true);
  return m;
}

FeatureMask parse_feature_mask(const std::string& spec) {
  FeatureMask m;
  m.fill(false);
  std::string token;
  const auto apply = [&](const std::string& name) {
    if (name.empty()) return;
    if (name == "full") {
      m.fill(true);
      return;
    }
    if (name == "text") {  // shorthand for both text features
      m[0] = m[1] = true;
      return;
    }
    for (std::size_t i = 0; i < kNumFeatureTypes; ++i) {
      if (name == kFeatureTypeNames[i]) {
        m[i] = true;
        return;
      }
    }
    if (name == "product_family") {  // product + category + parent
      m[2] = m[3] = m[4] = true;
      return;
    }
    throw ContractError("unknown feature type '" + name + "'");
  };
  for (char c : spec) {
    if (c == ',' || c == '+' || c == ' ') {
      apply(token);
      token.clear();
    } else {
      token.push_back(c);
    }
  }
  apply(token);
  if (mask_count(m) == 0) throw ContractError("feature mask must be non-empty");
  return m;
}

std::string feature_mask_to_string(const FeatureMask& mask) {
  std::string out;
  for (std::size_t i = 0; i < kNumFeatureTypes; ++i) {
    if (!mask[i]) continue;
    if (!out.empty()) out += ",";
    out += kFeatureTypeNames[i];
  }
  return out;
}

std::size_t mask_count(const FeatureMask& mask) {
  std::size_t n = 0;
  for (bool b : mask) n += b ? 1 : 0;
  return n;
}

namespace {

Tensor glorot(std::size_t rows, std::size_t cols, CounterRng& rng) {
  Tensor t({rows, cols});
  const double span = std::sqrt(6.0 / static_cast<double>(rows + cols));
  for (std::size_t i = 0; i < t.size(); ++i)
    t.at(i) = rng.next_range(-span, span);
  return t;
}

}  // namespace

MoeParams init_moe_params(const std::vector<std::size_t>& in_dims,
                          std::size_t common_dim, std::size_t gate_dim,
                          std::uint64_t seed) {
  MoeParams p;
  CounterRng rng(seed, 0x30e);
  for (std::size_t j = 0; j < in_dims.size(); ++j) {
    p.ffn_w.push_back(glorot(in_dims[j], common_dim, rng));
    p.ffn_b.push_back(Tensor({1, common_dim}));
  }
  p.gate_w = glorot(common_dim, gate_dim, rng);
  p.gate_w2 = glorot(common_dim, gate_dim, rng);
  p.gate_c1 = Tensor({1, gate_dim});
  p.gate_c2 = Tensor({1, common_dim});
  return p;
}

Tape::Value project_features(Tape& tape,
                             const std::vector<Tape::Value>& features,
                             const std::vector<Tape::Value>& ffn_w,
                             const std::vector<Tape::Value>& ffn_b) {
  if (features.empty() || features.size() != ffn_w.size() ||
      features.size() != ffn_b.size())
    throw ContractError("project_features: features and FFNs must align");
  std::vector<Tape::Value> projected;
  projected.reserve(features.size());
  for (std::size_t j = 0; j < features.size(); ++j) {
    Tape::Value z = tape.matmul(features[j], ffn_w[j]);
    z = tape.add_row_broadcast(z, ffn_b[j]);
    projected.push_back(tape.activation(Activation::elu, z));
  }
  return tape.interleave_rows(projected);
}

MoeMixResult moe_mix(Tape& tape, Tape::Value f_blocks, std::size_t f_active,
                     const MoeGateValues& gate, MoeNorm norm) {
  // Scores = (F W + c1) W2^T + c2, one score per (feature type, dimension).
  Tape::Value hidden = tape.matmul(f_blocks, gate.w);
  hidden = tape.add_row_broadcast(hidden, gate.c1);
  Tape::Value scores = tape.matmul(hidden, tape.transpose(gate.w2));
  scores = tape.add_row_broadcast(scores, gate.c2);
  const Tape::Value lambda = norm == MoeNorm::softmax
                                 ? tape.block_softmax_cols(scores, f_active)
                                 : tape.block_ratio_cols(scores, f_active);
  const Tape::Value h =
      tape.block_colsum(tape.mul(f_blocks, lambda), f_active);
  return {h, lambda};
}

}  // namespace spqi
