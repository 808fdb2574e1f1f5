#include "spqi/catalog.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>

#include "spqi/errors.hpp"

namespace spqi {

void ProductCatalog::add_category(CategoryId id, std::string name,
                                  CategoryId parent) {
  if (categories_.count(id))
    throw DataError("duplicate category id " + std::to_string(id));
  categories_[id] = CategoryRecord{std::move(name), parent};
}

void ProductCatalog::add_product(ProductId id, std::string name,
                                 CategoryId category) {
  if (products_.count(id))
    throw DataError("duplicate product id " + std::to_string(id));
  products_[id] = ProductRecord{std::move(name), category};
}

CategoryId ProductCatalog::category_of(ProductId id) const {
  auto it = products_.find(id);
  if (it == products_.end())
    throw DataError("unknown product id " + std::to_string(id));
  return it->second.category;
}

CategoryId ProductCatalog::parent_of(CategoryId id) const {
  auto it = categories_.find(id);
  if (it == categories_.end())
    throw DataError("unknown category id " + std::to_string(id));
  return it->second.parent;
}

const std::string& ProductCatalog::product_name(ProductId id) const {
  auto it = products_.find(id);
  if (it == products_.end())
    throw DataError("unknown product id " + std::to_string(id));
  return it->second.name;
}

const std::string& ProductCatalog::category_name(CategoryId id) const {
  auto it = categories_.find(id);
  if (it == categories_.end())
    throw DataError("unknown category id " + std::to_string(id));
  return it->second.name;
}

void ProductCatalog::validate() const {
  for (const auto& [id, rec] : categories_) {
    if (!categories_.count(rec.parent))
      throw DataError("category " + std::to_string(id) +
                      " has unknown parent " + std::to_string(rec.parent));
    // Walk to a root; a cycle would loop longer than the category count.
    CategoryId cur = id;
    std::size_t steps = 0;
    while (categories_.at(cur).parent != cur) {
      cur = categories_.at(cur).parent;
      if (++steps > categories_.size())
        throw DataError("category parent links contain a cycle at " +
                        std::to_string(id));
    }
  }
  for (const auto& [id, rec] : products_) {
    if (!categories_.count(rec.category))
      throw DataError("product " + std::to_string(id) +
                      " references unknown category " +
                      std::to_string(rec.category));
  }
}

std::span<const PurchaseEvent> Dataset::user_purchases(UserId user) const {
  auto it = purchases.find(user);
  if (it == purchases.end()) return {};
  return it->second;
}

std::vector<std::size_t> Dataset::split_indices(Split s) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < questions.size(); ++i)
    if (splits[i] == s) out.push_back(i);
  return out;
}

namespace {

bool lowercase_token(const std::string& t) {
  if (t.empty()) return false;
  for (unsigned char c : t)
    if (std::isupper(c)) return false;
  return true;
}

}  // namespace

void Dataset::finalize() {
  catalog.validate();
  for (auto& [user, log] : purchases) {
    std::stable_sort(log.begin(), log.end(),
                     [](const PurchaseEvent& a, const PurchaseEvent& b) {
                       return a.time < b.time;
                     });
    for (const PurchaseEvent& e : log) {
      if (!catalog.has_product(e.product))
        throw DataError("purchase references unknown product " +
                        std::to_string(e.product));
      if (e.time < 0) throw DataError("negative purchase timestamp");
    }
  }
  if (splits.size() != questions.size())
    throw DataError("split tags not aligned with questions");
  for (const Question& q : questions) {
    if (!catalog.has_product(q.product))
      throw DataError("question " + std::to_string(q.id) +
                      " references unknown product " +
                      std::to_string(q.product));
    for (const auto& t : q.question_tokens)
      if (!lowercase_token(t))
        throw DataError("question " + std::to_string(q.id) +
                        " has an empty or non-lowercase token");
    for (const auto& t : q.answer_tokens)
      if (!lowercase_token(t))
        throw DataError("question " + std::to_string(q.id) +
                        " has an empty or non-lowercase answer token");
  }
}

Label label_question(const Question& q,
                     std::span<const PurchaseEvent> user_log,
                     const ProductCatalog& catalog, int window_days) {
  const CategoryId cat = catalog.category_of(q.product);  // throws if unknown
  const Timestamp lo = q.time;  // exclusive
  const Timestamp hi = q.time + Timestamp{window_days} * kSecondsPerDay;
  for (const PurchaseEvent& e : user_log) {
    if (e.time <= lo) continue;
    if (e.time > hi) break;  // sorted
    if (e.product == q.product || catalog.category_of(e.product) == cat)
      return Label::SPQ;
  }
  return Label::NSPQ;
}

std::vector<ProductId> history_window(std::span<const PurchaseEvent> user_log,
                                      Timestamp t, int window_days) {
  const Timestamp lo = t - Timestamp{window_days} * kSecondsPerDay;
  std::vector<ProductId> out;
  for (const PurchaseEvent& e : user_log) {
    if (e.time >= t) break;
    if (e.time >= lo) out.push_back(e.product);
  }
  return out;
}

double pearson(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size())
    throw ContractError("pearson length mismatch: " +
                        std::to_string(x.size()) + " vs " +
                        std::to_string(y.size()));
  if (x.size() < 2) throw ContractError("pearson needs length >= 2");
  const double n = static_cast<double>(x.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = x[i] - mx, dy = y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0.0 || syy == 0.0)
    throw CorrelationError("pearson undefined: zero variance input");
  return sxy / std::sqrt(sxx * syy);
}

WindowCorrelations purchase_window_correlations(const Dataset& ds,
                                                int window_days) {
  const Timestamp w = Timestamp{window_days} * kSecondsPerDay;
  std::vector<double> t0, tm1, tm2, tm3, label;
  for (std::size_t i = 0; i < ds.questions.size(); ++i) {
    const Question& q = ds.questions[i];
    if (!q.label.has_value()) continue;
    const CategoryId cat = ds.catalog.category_of(q.product);
    // Same-category indicator over (t, t+w], [t-w, t), [t-2w, t-w), [t-3w, t-2w).
    bool in0 = false, in1 = false, in2 = false, in3 = false;
    for (const PurchaseEvent& e : ds.user_purchases(q.user)) {
      if (ds.catalog.category_of(e.product) != cat) continue;
      if (e.time > q.time && e.time <= q.time + w) in0 = true;
      else if (e.time >= q.time - w && e.time < q.time) in1 = true;
      else if (e.time >= q.time - 2 * w && e.time < q.time - w) in2 = true;
      else if (e.time >= q.time - 3 * w && e.time < q.time - 2 * w) in3 = true;
    }
    t0.push_back(in0 ? 1.0 : 0.0);
    tm1.push_back(in1 ? 1.0 : 0.0);
    tm2.push_back(in2 ? 1.0 : 0.0);
    tm3.push_back(in3 ? 1.0 : 0.0);
    label.push_back(*q.label == Label::SPQ ? 1.0 : 0.0);
  }
  if (t0.size() < 2)
    throw ContractError(
        "purchase_window_correlations needs labeled questions");
  WindowCorrelations out;
  out.r_t0_tm1 = pearson(t0, tm1);
  out.r_t0_tm2 = pearson(t0, tm2);
  out.r_t0_tm3 = pearson(t0, tm3);
  out.r_prior_purchase_vs_spq = pearson(tm1, label);
  return out;
}

const char* to_string(Label l) { return l == Label::SPQ ? "SPQ" : "NSPQ"; }

const char* to_string(Split s) {
  switch (s) {
    case Split::train:
      return "train";
    case Split::validation:
      return "validation";
    case Split::test:
      return "test";
  }
  return "train";
}

Label label_from_string(const std::string& s) {
  if (s == "SPQ") return Label::SPQ;
  if (s == "NSPQ") return Label::NSPQ;
  throw DataError("unknown label '" + s + "'");
}

Split split_from_string(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "validation") return Split::validation;
  if (s == "test") return Split::test;
  throw DataError("unknown split '" + s + "'");
}

}  // namespace spqi
