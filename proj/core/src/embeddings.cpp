#include "spqi/embeddings.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "spqi/errors.hpp"
#include "spqi/rng.hpp"

namespace spqi {

namespace {

double sigmoid(double x) {
  return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

}  // namespace

BehavioralEmbeddings train_skipgram(std::span<const PurchaseEvent> purchases,
                                    const SkipgramConfig& cfg) {
  if (purchases.empty())
    throw DataError("train_skipgram needs a non-empty purchase log");

  std::set<UserId> user_set;
  std::map<ProductId, std::size_t> product_count;
  for (const PurchaseEvent& e : purchases) {
    user_set.insert(e.user);
    ++product_count[e.product];
  }
  BehavioralEmbeddings emb;
  emb.dim = cfg.dim;
  emb.users = IdIndex<UserId>({user_set.begin(), user_set.end()});
  {
    std::vector<ProductId> pids;
    for (const auto& [p, _] : product_count) pids.push_back(p);
    emb.products = IdIndex<ProductId>(std::move(pids));
  }

  const std::size_t d = cfg.dim;
  emb.user_vectors = Tensor({emb.users.rows(), d});
  emb.product_vectors = Tensor({emb.products.rows(), d});
  CounterRng init_rng(cfg.seed, 0);
  const double span = 0.5 / static_cast<double>(d);
  for (std::size_t r = 1; r < emb.users.rows(); ++r)
    for (std::size_t c = 0; c < d; ++c)
      emb.user_vectors.at(r, c) = init_rng.next_range(-span, span);
  for (std::size_t r = 1; r < emb.products.rows(); ++r)
    for (std::size_t c = 0; c < d; ++c)
      emb.product_vectors.at(r, c) = init_rng.next_range(-span, span);

  // Cumulative unigram^(3/4) distribution for negative sampling.
  std::vector<std::size_t> neg_rows;
  std::vector<double> neg_cdf;
  {
    double total = 0.0;
    for (const auto& [p, count] : product_count) {
      total += std::pow(static_cast<double>(count), 0.75);
      neg_rows.push_back(emb.products.row_of(p));
      neg_cdf.push_back(total);
    }
    for (double& v : neg_cdf) v /= total;
  }
  const auto sample_negative = [&](CounterRng& rng) {
    const double u = rng.next_unit();
    const auto it = std::lower_bound(neg_cdf.begin(), neg_cdf.end(), u);
    const std::size_t i =
        std::min(static_cast<std::size_t>(it - neg_cdf.begin()),
                 neg_cdf.size() - 1);
    return neg_rows[i];
  };

  std::vector<std::size_t> order(purchases.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  std::vector<double> grad_u(d);
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    CounterRng rng(cfg.seed, 1 + epoch);
    for (std::size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[rng.next_below(i)]);

    double loss_acc = 0.0;
    for (const std::size_t idx : order) {
      const PurchaseEvent& e = purchases[idx];
      const std::size_t ur = emb.users.row_of(e.user);
      const std::size_t pr = emb.products.row_of(e.product);
      double* u = &emb.user_vectors.at(ur, 0);
      std::fill(grad_u.begin(), grad_u.end(), 0.0);

      {
        double* p = &emb.product_vectors.at(pr, 0);
        double dot = 0.0;
        for (std::size_t c = 0; c < d; ++c) dot += u[c] * p[c];
        const double s = sigmoid(dot);
        loss_acc -= std::log(std::max(s, 1e-12));
        const double g = s - 1.0;  // d/d(dot) of -log sigmoid(dot)
        for (std::size_t c = 0; c < d; ++c) {
          grad_u[c] += g * p[c];
          p[c] -= cfg.lr * g * u[c];
        }
      }
      for (std::size_t k = 0; k < cfg.negatives_per_positive; ++k) {
        const std::size_t nr = sample_negative(rng);
        double* p = &emb.product_vectors.at(nr, 0);
        double dot = 0.0;
        for (std::size_t c = 0; c < d; ++c) dot += u[c] * p[c];
        const double s = sigmoid(-dot);
        loss_acc -= std::log(std::max(s, 1e-12));
        const double g = 1.0 - s;  // d/d(dot) of -log sigmoid(-dot)
        for (std::size_t c = 0; c < d; ++c) {
          grad_u[c] += g * p[c];
          p[c] -= cfg.lr * g * u[c];
        }
      }
      for (std::size_t c = 0; c < d; ++c) u[c] -= cfg.lr * grad_u[c];
    }
    emb.epoch_loss.push_back(loss_acc / static_cast<double>(order.size()));
  }
  return emb;
}

Tensor behavioral_features(ProductId queried,
                           std::span<const ProductId> history,
                           const BehavioralEmbeddings& emb) {
  Tensor out({1, 6});
  if (history.empty()) return out;
  const std::size_t d = emb.dim;
  const std::size_t qr = emb.products.row_of(queried);
  const double* table = emb.product_vectors.data().data();
  const double* q = table + qr * d;
  double qnorm = 0.0;
  for (std::size_t c = 0; c < d; ++c) qnorm += q[c] * q[c];
  qnorm = std::sqrt(qnorm);

  double sum_dot = 0.0, max_dot = -std::numeric_limits<double>::infinity();
  double sum_cos = 0.0, max_cos = -std::numeric_limits<double>::infinity();
  for (const ProductId h : history) {
    const std::size_t hr = emb.products.row_of(h);
    const double* v = table + hr * d;
    double dot = 0.0, vnorm = 0.0;
    for (std::size_t c = 0; c < d; ++c) {
      dot += q[c] * v[c];
      vnorm += v[c] * v[c];
    }
    vnorm = std::sqrt(vnorm);
    const double cosv = dot / std::max(qnorm * vnorm, 1e-12);
    sum_dot += dot;
    sum_cos += cosv;
    max_dot = std::max(max_dot, dot);
    max_cos = std::max(max_cos, cosv);
  }
  const double n = static_cast<double>(history.size());
  out.at(0, 0) = sum_dot / n;
  out.at(0, 1) = max_dot;
  out.at(0, 2) = sum_dot;
  out.at(0, 3) = sum_cos / n;
  out.at(0, 4) = max_cos;
  out.at(0, 5) = sum_cos;
  return out;
}

HashedBagEncoder::HashedBagEncoder(std::size_t dim, std::uint64_t seed)
    : dim_(dim), seed_(seed) {
  if (dim < 8) throw ContractError("text encoder dim must be >= 8");
}

Tensor HashedBagEncoder::encode(std::span<const std::string> tokens) const {
  Tensor out({1, dim_});
  if (tokens.empty()) return out;
  // Accumulate in sorted-hash order so the encoding is exactly invariant
  // under token permutation despite non-associative float addition.
  std::vector<std::uint64_t> hashes;
  hashes.reserve(tokens.size());
  for (const std::string& tok : tokens) hashes.push_back(stable_hash64(tok));
  std::sort(hashes.begin(), hashes.end());
  for (const std::uint64_t h : hashes) {
    CounterRng rng(seed_, h);
    for (std::size_t c = 0; c < dim_; ++c) out.at(0, c) += rng.next_normal();
  }
  const double scale = 1.0 / (static_cast<double>(tokens.size()) *
                              std::sqrt(static_cast<double>(dim_)));
  for (std::size_t c = 0; c < dim_; ++c) out.at(0, c) *= scale;
  return out;
}

Tensor lookup_categorical(std::int64_t id, const CategoricalTable& table) {
  const std::size_t r = table.index.row_of(id);
  Tensor out({1, table.rows.cols()});
  for (std::size_t c = 0; c < table.rows.cols(); ++c)
    out.at(0, c) = table.rows.at(r, c);
  return out;
}

CategoricalTable init_categorical_table(std::vector<std::int64_t> sorted_ids,
                                        std::size_t k, std::uint64_t seed,
                                        std::uint64_t stream) {
  CategoricalTable t;
  t.index = IdIndex<std::int64_t>(std::move(sorted_ids));
  t.rows = Tensor({t.index.rows(), k});
  CounterRng rng(seed, stream);
  for (std::size_t r = 0; r < t.rows.rows(); ++r)
    for (std::size_t c = 0; c < k; ++c)
      t.rows.at(r, c) = rng.next_range(-0.05, 0.05);
  return t;
}

}  // namespace spqi
