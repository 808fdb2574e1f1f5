#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "spqi/catalog.hpp"
#include "spqi/tensor.hpp"

namespace spqi {

/// Maps external ids to table rows. Row 0 is the reserved unknown-id row,
/// shared by every id the table has never seen.
template <typename Id>
class IdIndex {
 public:
  IdIndex() = default;
  explicit IdIndex(std::vector<Id> sorted_ids) : ids_(std::move(sorted_ids)) {
    for (std::size_t i = 0; i < ids_.size(); ++i) row_[ids_[i]] = i + 1;
  }
  std::size_t rows() const { return ids_.size() + 1; }  // incl. unknown row
  std::size_t row_of(Id id) const {
    auto it = row_.find(id);
    return it == row_.end() ? 0 : it->second;
  }
  const std::vector<Id>& ids() const { return ids_; }

 private:
  std::vector<Id> ids_;
  std::map<Id, std::size_t> row_;
};

/// Skip-gram vectors over the purchase log. Row 0 of each table is the
/// unknown row (zeros). Immutable once trained; safe for concurrent reads.
struct BehavioralEmbeddings {
  std::size_t dim = 50;
  IdIndex<UserId> users;
  IdIndex<ProductId> products;
  Tensor user_vectors;     // (U+1) x dim
  Tensor product_vectors;  // (P+1) x dim
  std::vector<double> epoch_loss;  // mean per epoch, for monitoring
};

struct SkipgramConfig {
  std::size_t dim = 50;
  std::size_t negatives_per_positive = 5;
  std::size_t epochs = 15;
  double lr = 0.05;
  std::uint64_t seed = 7;
};

/// Trains user/product vectors maximizing sigma(u.p) on observed pairs and
/// sigma(-u.p') on negatives drawn from the product unigram distribution
/// raised to 3/4. Plain SGD, single-threaded, deterministic given the seed.
BehavioralEmbeddings train_skipgram(std::span<const PurchaseEvent> purchases,
                                    const SkipgramConfig& cfg);

/// Six similarity statistics between the queried product vector and each
/// history vector, in fixed order
///   [avg_dot, max_dot, sum_dot, avg_cos, max_cos, sum_cos].
/// Empty history yields all zeros.
Tensor behavioral_features(ProductId queried,
                           std::span<const ProductId> history,
                           const BehavioralEmbeddings& emb);

/// Fixed-dimension text representation. Implementations must be pure
/// functions of the token multiset so encodings can be precomputed.
class TextEncoder {
 public:
  virtual ~TextEncoder() = default;
  virtual std::size_t dim() const = 0;
  virtual Tensor encode(std::span<const std::string> tokens) const = 0;
};

/// Deterministic stand-in for a frozen pretrained sentence encoder: each
/// token's vector comes from a counter RNG seeded with a stable 64-bit hash
/// of the token string; the output is the token mean scaled by 1/sqrt(dim).
/// Empty input encodes to the zero vector. dim must be >= 8.
class HashedBagEncoder : public TextEncoder {
 public:
  HashedBagEncoder(std::size_t dim, std::uint64_t seed);
  std::size_t dim() const override { return dim_; }
  Tensor encode(std::span<const std::string> tokens) const override;

 private:
  std::size_t dim_;
  std::uint64_t seed_;
};

/// Trainable categorical embedding table plus its id mapping. Values beyond
/// the mapping hit the shared unknown row 0.
struct CategoricalTable {
  IdIndex<std::int64_t> index;
  Tensor rows;  // (ids+1) x k
};

/// Row lookup honoring the unknown-row contract.
Tensor lookup_categorical(std::int64_t id, const CategoricalTable& table);

/// Fresh table with rows uniform in [-0.05, 0.05] (unknown row included).
CategoricalTable init_categorical_table(std::vector<std::int64_t> sorted_ids,
                                        std::size_t k, std::uint64_t seed,
                                        std::uint64_t stream);

}  // namespace spqi
