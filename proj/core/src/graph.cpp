#include "spqi/graph.hpp"

#include <algorithm>
#include <map>

#include "spqi/errors.hpp"

namespace spqi {

std::shared_ptr<const std::vector<std::uint8_t>> product_adjacency(
    std::span<const ProductId> products) {
  const std::size_t n = products.size();
  auto adj = std::make_shared<std::vector<std::uint8_t>>(n * n, 0);
  std::map<ProductId, std::vector<std::size_t>> buckets;
  for (std::size_t i = 0; i < n; ++i) {
    (*adj)[i * n + i] = 1;  // self-loop
    buckets[products[i]].push_back(i);
  }
  for (const auto& [product, members] : buckets) {
    for (std::size_t a : members)
      for (std::size_t b : members) (*adj)[a * n + b] = 1;
  }
  return adj;
}

BatchGraph build_edges(const Dataset& ds,
                       std::vector<std::size_t> question_indices) {
  if (question_indices.empty())
    throw ContractError("build_edges: empty batch");
  BatchGraph g;
  g.n = question_indices.size();
  std::vector<ProductId> products;
  products.reserve(g.n);
  bool all_labeled = true;
  for (std::size_t qi : question_indices) {
    products.push_back(ds.questions[qi].product);
    all_labeled &= ds.questions[qi].label.has_value();
  }
  g.adjacency = product_adjacency(products);
  if (all_labeled) {
    g.labels.reserve(g.n);
    for (std::size_t qi : question_indices)
      g.labels.push_back(*ds.questions[qi].label == Label::SPQ ? 1.0 : 0.0);
  }
  g.question_indices = std::move(question_indices);
  return g;
}

BatchGraph build_edges(std::span<const Question> questions) {
  if (questions.empty()) throw ContractError("build_edges: empty batch");
  BatchGraph g;
  g.n = questions.size();
  std::vector<ProductId> products;
  products.reserve(g.n);
  bool all_labeled = true;
  for (const Question& q : questions) {
    products.push_back(q.product);
    all_labeled &= q.label.has_value();
  }
  g.adjacency = product_adjacency(products);
  if (all_labeled) {
    for (const Question& q : questions)
      g.labels.push_back(*q.label == Label::SPQ ? 1.0 : 0.0);
  }
  g.question_indices.resize(g.n);
  for (std::size_t i = 0; i < g.n; ++i) g.question_indices[i] = i;
  return g;
}

namespace {

// Question indices of a split grouped into product buckets, bucket order and
// within-bucket order shuffled by the rng.
std::vector<std::size_t> bucketed_order(const Dataset& ds,
                                        const std::vector<std::size_t>& split_idx,
                                        CounterRng& rng) {
  std::map<ProductId, std::vector<std::size_t>> buckets;
  for (std::size_t qi : split_idx) buckets[ds.questions[qi].product].push_back(qi);
  std::vector<std::vector<std::size_t>> groups;
  groups.reserve(buckets.size());
  for (auto& [p, members] : buckets) groups.push_back(std::move(members));
  for (std::size_t i = groups.size(); i > 1; --i)
    std::swap(groups[i - 1], groups[rng.next_below(i)]);
  std::vector<std::size_t> order;
  order.reserve(split_idx.size());
  for (auto& g : groups) {
    for (std::size_t i = g.size(); i > 1; --i)
      std::swap(g[i - 1], g[rng.next_below(i)]);
    order.insert(order.end(), g.begin(), g.end());
  }
  return order;
}

std::vector<std::size_t> uniform_order(const std::vector<std::size_t>& split_idx,
                                       CounterRng& rng) {
  std::vector<std::size_t> order = split_idx;
  for (std::size_t i = order.size(); i > 1; --i)
    std::swap(order[i - 1], order[rng.next_below(i)]);
  return order;
}

}  // namespace

BatchGraph sample_batch(const Dataset& ds, Split split, std::size_t batch_size,
                        SampleStrategy strategy, CounterRng& rng) {
  const std::vector<std::size_t> split_idx = ds.split_indices(split);
  if (batch_size == 0 || batch_size > split_idx.size())
    throw ContractError("sample_batch: batch_size " +
                        std::to_string(batch_size) + " exceeds split size " +
                        std::to_string(split_idx.size()));
  std::vector<std::size_t> order = strategy == SampleStrategy::uniform
                                       ? uniform_order(split_idx, rng)
                                       : bucketed_order(ds, split_idx, rng);
  order.resize(batch_size);
  return build_edges(ds, std::move(order));
}

std::vector<BatchGraph> epoch_batches(const Dataset& ds, Split split,
                                      std::size_t batch_size,
                                      SampleStrategy strategy,
                                      std::uint64_t seed, std::uint64_t epoch) {
  const std::vector<std::size_t> split_idx = ds.split_indices(split);
  if (split_idx.empty()) throw ContractError("epoch_batches: empty split");
  CounterRng rng(seed, 0xba7c0000ULL + epoch);
  std::vector<std::size_t> order = strategy == SampleStrategy::uniform
                                       ? uniform_order(split_idx, rng)
                                       : bucketed_order(ds, split_idx, rng);
  std::vector<BatchGraph> out;
  for (std::size_t start = 0; start < order.size(); start += batch_size) {
    const std::size_t len = std::min(batch_size, order.size() - start);
    out.push_back(build_edges(
        ds, std::vector<std::size_t>(order.begin() + start,
                                     order.begin() + start + len)));
  }
  return out;
}

std::vector<BatchGraph> eval_batches(const Dataset& ds, Split split,
                                     std::size_t batch_size) {
  const std::vector<std::size_t> split_idx = ds.split_indices(split);
  if (split_idx.empty()) throw ContractError("eval_batches: empty split");
  std::vector<BatchGraph> out;
  for (std::size_t start = 0; start < split_idx.size(); start += batch_size) {
    const std::size_t len = std::min(batch_size, split_idx.size() - start);
    out.push_back(build_edges(
        ds, std::vector<std::size_t>(split_idx.begin() + start,
                                     split_idx.begin() + start + len)));
  }
  return out;
}

}  // namespace spqi
