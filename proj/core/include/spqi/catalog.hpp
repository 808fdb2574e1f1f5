#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace spqi {

using UserId = std::int64_t;
using ProductId = std::int64_t;
using CategoryId = std::int64_t;
using QuestionId = std::int64_t;
using Timestamp = std::int64_t;  // seconds since epoch

constexpr Timestamp kSecondsPerDay = 86400;
constexpr int kDefaultWindowDays = 28;

enum class Label { SPQ, NSPQ };
enum class Split { train, validation, test };

struct CategoryRecord {
  std::string name;
  CategoryId parent;  // equals the id itself for roots
};

struct ProductRecord {
  std::string name;
  CategoryId category;
};

/// Product and category taxonomy. Parent links form a forest; parent lookup
/// of a root returns the root itself.
class ProductCatalog {
 public:
  void add_category(CategoryId id, std::string name, CategoryId parent);
  void add_product(ProductId id, std::string name, CategoryId category);

  bool has_product(ProductId id) const { return products_.count(id) > 0; }
  bool has_category(CategoryId id) const { return categories_.count(id) > 0; }
  CategoryId category_of(ProductId id) const;
  CategoryId parent_of(CategoryId id) const;
  const std::string& product_name(ProductId id) const;
  const std::string& category_name(CategoryId id) const;

  const std::map<ProductId, ProductRecord>& products() const {
    return products_;
  }
  const std::map<CategoryId, CategoryRecord>& categories() const {
    return categories_;
  }

  /// Checks forest structure and referential integrity; throws DataError.
  void validate() const;

 private:
  std::map<ProductId, ProductRecord> products_;
  std::map<CategoryId, CategoryRecord> categories_;
};

struct PurchaseEvent {
  UserId user;
  ProductId product;
  Timestamp time;
};

struct Question {
  QuestionId id;
  UserId user;
  ProductId product;
  Timestamp time;
  std::vector<std::string> question_tokens;
  std::vector<std::string> answer_tokens;
  std::optional<Label> label;
};

/// Immutable after construction; all reads are safe to share across threads.
struct Dataset {
  ProductCatalog catalog;
  std::map<UserId, std::vector<PurchaseEvent>> purchases;  // time-sorted
  std::vector<Question> questions;
  std::vector<Split> splits;  // aligned with questions

  std::span<const PurchaseEvent> user_purchases(UserId user) const;
  std::vector<std::size_t> split_indices(Split s) const;

  /// Sorts purchase logs and verifies invariants (ids exist, tokens lowercase
  /// and non-empty, splits aligned). Throws DataError.
  void finalize();
};

/// SPQ iff the user purchased the queried product, or any product sharing its
/// leaf category, within (q.time, q.time + window_days*86400].
Label label_question(const Question& q,
                     std::span<const PurchaseEvent> user_log,
                     const ProductCatalog& catalog,
                     int window_days = kDefaultWindowDays);

/// Products purchased in [t - window_days*86400, t), order preserved,
/// duplicates kept. Empty log yields an empty list.
std::vector<ProductId> history_window(std::span<const PurchaseEvent> user_log,
                                      Timestamp t,
                                      int window_days = kDefaultWindowDays);

/// Sample Pearson correlation. Lengths must match and be >= 2; zero variance
/// on either side raises CorrelationError.
double pearson(std::span<const double> x, std::span<const double> y);

struct WindowCorrelations {
  double r_t0_tm1;                 // same-cat purchase in T0 vs in T-1
  double r_t0_tm2;                 // ... vs T-2
  double r_t0_tm3;                 // ... vs T-3
  double r_prior_purchase_vs_spq;  // T-1 indicator vs SPQ label
};

/// Per-question binary indicators of a same-category purchase in the four
/// 28-day windows around the question time (T0 after it, T-1/T-2/T-3 before),
/// correlated pairwise. Needs labeled questions; degenerate indicators raise
/// CorrelationError.
WindowCorrelations purchase_window_correlations(
    const Dataset& ds, int window_days = kDefaultWindowDays);

const char* to_string(Label l);
const char* to_string(Split s);
Label label_from_string(const std::string& s);
Split split_from_string(const std::string& s);

}  // namespace spqi
