#include "spqi/gat.hpp"

#include <cmath>

#include "spqi/errors.hpp"
#include "spqi/rng.hpp"

namespace spqi {

GatLayerParams init_gat_layer(std::size_t d_in, std::size_t d_out,
                              std::size_t heads, double slope,
                              std::uint64_t seed, std::uint64_t stream) {
  if (heads == 0 || d_out % heads != 0)
    throw ContractError("gat layer: head count must divide d_out");
  if (slope <= 0.0 || slope >= 1.0)
    throw ContractError("gat layer: slope must lie in (0,1)");
  GatLayerParams p;
  p.slope = slope;
  const std::size_t dh = d_out / heads;
  CounterRng rng(seed, stream);
  const double wspan = std::sqrt(6.0 / static_cast<double>(d_in + dh));
  const double aspan = std::sqrt(6.0 / static_cast<double>(2 * dh + 1));
  for (std::size_t k = 0; k < heads; ++k) {
    Tensor w({d_in, dh});
    for (std::size_t i = 0; i < w.size(); ++i)
      w.at(i) = rng.next_range(-wspan, wspan);
    p.head_w.push_back(std::move(w));
    Tensor a({2 * dh, 1});
    for (std::size_t i = 0; i < a.size(); ++i)
      a.at(i) = rng.next_range(-aspan, aspan);
    p.head_a.push_back(std::move(a));
  }
  return p;
}

Tape::Value gat_layer(Tape& tape, Tape::Value h,
                      std::shared_ptr<const std::vector<std::uint8_t>> adjacency,
                      const std::vector<Tape::Value>& head_w,
                      const std::vector<Tape::Value>& head_a, double slope) {
  if (head_w.empty() || head_w.size() != head_a.size())
    throw ContractError("gat_layer: weight/attention head mismatch");
  std::vector<Tape::Value> heads;
  heads.reserve(head_w.size());
  for (std::size_t k = 0; k < head_w.size(); ++k) {
    const Tape::Value z = tape.matmul(h, head_w[k]);
    const std::size_t dh = tape.value(z).cols();
    // a . [z_i || z_j] = (z a_left)_i + (z a_right)_j
    const Tape::Value a_left = tape.slice_rows(head_a[k], 0, dh);
    const Tape::Value a_right = tape.slice_rows(head_a[k], dh, dh);
    const Tape::Value s_left = tape.matmul(z, a_left);
    const Tape::Value s_right = tape.matmul(z, a_right);
    Tape::Value scores = tape.outer_add(s_left, s_right);
    scores = tape.activation(Activation::leaky_relu, scores, slope);
    const Tape::Value alpha = tape.masked_softmax(scores, adjacency);
    heads.push_back(tape.activation(
        Activation::elu, tape.neighbor_sum(alpha, z, adjacency)));
  }
  return heads.size() == 1 ? heads[0] : tape.concat_cols(heads);
}

Tape::Value gcn_layer(Tape& tape, Tape::Value h,
                      std::shared_ptr<const std::vector<std::uint8_t>> adjacency,
                      const std::vector<Tape::Value>& head_w) {
  const std::size_t n = tape.value(h).rows();
  if (!adjacency || adjacency->size() != n * n)
    throw ShapeError("gcn_layer: adjacency does not match node count");
  Tensor norm({n, n});
  for (std::size_t i = 0; i < n; ++i) {
    double deg = 0.0;
    for (std::size_t j = 0; j < n; ++j) deg += (*adjacency)[i * n + j];
    for (std::size_t j = 0; j < n; ++j)
      if ((*adjacency)[i * n + j]) norm.at(i, j) = 1.0 / deg;
  }
  const Tape::Value a_norm = tape.constant(std::move(norm));
  std::vector<Tape::Value> heads;
  heads.reserve(head_w.size());
  for (const Tape::Value& w : head_w) {
    const Tape::Value z = tape.matmul(h, w);
    heads.push_back(tape.activation(
        Activation::elu, tape.neighbor_sum(a_norm, z, adjacency)));
  }
  return heads.size() == 1 ? heads[0] : tape.concat_cols(heads);
}

}  // namespace spqi
