#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <vector>

#include "spqi/tensor.hpp"

namespace spqi {

enum class Activation { sigmoid, leaky_relu, elu };

/// Reverse-mode gradient tape over whole-tensor operations.
///
/// Every op appends a node holding its output and a backward rule; backward()
/// replays the nodes in exact reverse execution order, accumulating gradients
/// keyed by value id. Values are immutable once created and a finished tape is
/// safe to read concurrently; building and backward are single-threaded per
/// tape, distinct tapes are independent.
class Tape {
 public:
  struct Value {
    std::size_t id = static_cast<std::size_t>(-1);
  };

  class Gradients {
   public:
    bool contains(Value v) const {
      return v.id < g_.size() && g_[v.id].has_value();
    }
    const Tensor& at(Value v) const;

   private:
    friend class Tape;
    std::vector<std::optional<Tensor>> g_;
  };

  /// Differentiable leaf. Rejects non-finite entries.
  Value input(Tensor t);
  /// Non-differentiable leaf (frozen features, masks as data, ...).
  Value constant(Tensor t);

  const Tensor& value(Value v) const;
  std::size_t size() const { return nodes_.size(); }

  // -- arithmetic -----------------------------------------------------------
  Value matmul(Value a, Value b);
  Value add(Value a, Value b);
  /// bias is 1×n, added to every row of a (m×n).
  Value add_row_broadcast(Value a, Value bias);
  Value mul(Value a, Value b);
  /// s is 1×1; every entry of a is multiplied by it.
  Value mul_scalar_value(Value a, Value s);
  Value scale(Value a, double c);
  Value transpose(Value a);
  /// Same element count, new extents; data order unchanged.
  Value reshape(Value a, std::vector<std::size_t> shape);

  /// Elementwise nonlinearity with registered derivative. `slope` applies to
  /// leaky_relu only and must lie in (0,1). Rejects non-finite inputs.
  Value activation(Activation kind, Value x, double slope = 0.2);

  /// Row-wise softmax over unmasked entries; masked entries are exactly 0.
  /// Shift-invariant (row max subtracted). Every row needs >=1 unmasked entry.
  Value masked_softmax(Value scores, std::shared_ptr<const std::vector<std::uint8_t>> mask);

  /// g is (B*f)×n. Within each consecutive block of f rows, normalizes across
  /// the block's rows independently per column (softmax).
  Value block_softmax_cols(Value g, std::size_t block);
  /// Same layout; literal ratio g_j / sum_block(g) per column, denominator
  /// magnitude floored at 1e-8 (floored denominators are treated as constant
  /// in the backward rule).
  Value block_ratio_cols(Value g, std::size_t block);
  /// (B*f)×n -> B×n, summing each block's rows.
  Value block_colsum(Value x, std::size_t block);

  /// f parts, each B×n -> (B*f)×n with row b*f+j taken from parts[j] row b.
  Value interleave_rows(const std::vector<Value>& parts);
  Value concat_cols(const std::vector<Value>& parts);
  /// rows are 1×n each -> B×n.
  Value stack_rows(const std::vector<Value>& rows);
  /// scalars are 1×1 each -> 1×k.
  Value pack_scalars(const std::vector<Value>& scalars);

  /// Row lookup with sparse accumulation in backward (duplicate indices add).
  Value gather_rows(Value table, std::shared_ptr<const std::vector<std::size_t>> rows);

  /// Contiguous row range [start, start+len).
  Value slice_rows(Value x, std::size_t start, std::size_t len);

  /// u: m×1, v: n×1 -> m×n with out[i][j] = u[i] + v[j].
  Value outer_add(Value u, Value v);

  /// out[i] = sum over unmasked j of weights[i][j] * z[j], the row-products
  /// accumulated in sorted order so the output depends only on the neighbor
  /// multiset (exact permutation equivariance for graph layers).
  Value neighbor_sum(Value weights, Value z,
                     std::shared_ptr<const std::vector<std::uint8_t>> mask);

  Value reduce_mean_all(Value x);
  Value reduce_sum_all(Value x);
  /// Max over all entries; gradient flows to the first maximizer.
  Value reduce_max_all(Value x);

  /// Euclidean norm of each row: m×d -> m×1.
  Value l2norm_rows(Value x);
  /// Elementwise a/b with |denominator| floored at 1e-12; floored entries are
  /// treated as constant in the backward rule.
  Value div(Value a, Value b);

  /// Mean binary cross-entropy of probabilities p (vector-shaped) against
  /// labels y in {0,1}; p is clamped into [1e-7, 1-1e-7] first. Output 1×1.
  Value bce_loss(Value p, std::vector<double> y);

  /// Reverse pass from a scalar (1×1) value. Visits nodes in exact reverse
  /// execution order; resulting gradients have the shapes of their values.
  Gradients backward(Value scalar_loss);

 private:
  struct Node {
    Tensor out;
    std::vector<std::size_t> inputs;
    bool requires_grad = false;
    // Accumulates input gradients given the output gradient.
    std::function<void(const Tensor& gout, Tape& tape, Gradients& grads)> back;
  };

  Value push(Tensor out, std::vector<std::size_t> inputs,
             std::function<void(const Tensor&, Tape&, Gradients&)> back);
  const Tensor& val(std::size_t id) const { return nodes_[id].out; }
  void check(Value v) const;
  static void accumulate(Gradients& g, std::size_t id, Tensor contribution);

  std::vector<Node> nodes_;
};

}  // namespace spqi
