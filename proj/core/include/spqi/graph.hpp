#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <vector>

#include "spqi/catalog.hpp"
#include "spqi/rng.hpp"

namespace spqi {

/// A sampled set of questions plus their shared-product adjacency. Symmetric,
/// self-loops on the diagonal, edge (a,b) for a!=b iff product(a)==product(b).
/// Immutable once built.
struct BatchGraph {
  std::vector<std::size_t> question_indices;  // into Dataset::questions
  std::size_t n = 0;
  std::shared_ptr<const std::vector<std::uint8_t>> adjacency;  // n*n row-major
  std::vector<double> labels;  // 1.0 = SPQ; empty when any node is unlabeled
};

/// Adjacency over per-node product ids (buckets, O(n + sum bucket^2)).
std::shared_ptr<const std::vector<std::uint8_t>> product_adjacency(
    std::span<const ProductId> products);

/// Graph over the given questions of a dataset. Batch must be non-empty.
BatchGraph build_edges(const Dataset& ds,
                       std::vector<std::size_t> question_indices);

/// Graph over a free-standing question list (one node per question).
BatchGraph build_edges(std::span<const Question> questions);

enum class SampleStrategy { uniform, product_bucketed };

/// Draws one batch from a split. `uniform` samples i.i.d. without
/// replacement; `product_bucketed` samples whole product buckets first so
/// most nodes have a non-self neighbor. Deterministic given the rng state.
BatchGraph sample_batch(const Dataset& ds, Split split, std::size_t batch_size,
                        SampleStrategy strategy, CounterRng& rng);

/// Partition of a split into training batches (bucketed order, shuffled per
/// epoch). Every question appears exactly once.
std::vector<BatchGraph> epoch_batches(const Dataset& ds, Split split,
                                      std::size_t batch_size,
                                      SampleStrategy strategy,
                                      std::uint64_t seed, std::uint64_t epoch);

/// Deterministic full pass in dataset order, contiguous chunks.
std::vector<BatchGraph> eval_batches(const Dataset& ds, Split split,
                                     std::size_t batch_size);

}  // namespace spqi
