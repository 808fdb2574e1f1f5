#include <cmath>

#include "doctest.h"
#include "spqi/embeddings.hpp"
#include "spqi/errors.hpp"
#include "spqi/rng.hpp"
#include "spqi/synth.hpp"
#include "spqi/tape.hpp"

using namespace spqi;

namespace {

double cosine(std::span<const double> a, std::span<const double> b) {
  double dot = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  return dot / std::max(std::sqrt(na) * std::sqrt(nb), 1e-12);
}

std::span<const double> product_row(const BehavioralEmbeddings& emb,
                                    ProductId p) {
  const std::size_t r = emb.products.row_of(p);
  return emb.product_vectors.data().subspan(r * emb.dim, emb.dim);
}

// Purchase log with planted co-purchase clusters: each user buys only within
// one category.
std::vector<PurchaseEvent> clustered_log(std::size_t users_per_cat,
                                         std::size_t cats,
                                         std::size_t products_per_cat,
                                         std::size_t buys_per_user,
                                         std::uint64_t seed) {
  std::vector<PurchaseEvent> log;
  CounterRng rng(seed, 0);
  UserId user = 0;
  for (std::size_t c = 0; c < cats; ++c) {
    for (std::size_t u = 0; u < users_per_cat; ++u, ++user) {
      for (std::size_t k = 0; k < buys_per_user; ++k) {
        const ProductId p = static_cast<ProductId>(
            c * products_per_cat + rng.next_below(products_per_cat));
        log.push_back({user, p, static_cast<Timestamp>(k)});
      }
    }
  }
  return log;
}

}  // namespace

TEST_CASE("train_skipgram") {
  SUBCASE("d=50 vectors and epoch loss decreases") {
    const auto log = clustered_log(30, 4, 6, 12, 3);
    SkipgramConfig cfg;
    cfg.epochs = 6;
    BehavioralEmbeddings emb = train_skipgram(log, cfg);
    CHECK(emb.dim == 50);
    CHECK(emb.product_vectors.cols() == 50);
    CHECK(emb.user_vectors.cols() == 50);
    REQUIRE(emb.epoch_loss.size() == 6);
    CHECK(emb.epoch_loss.back() < emb.epoch_loss.front());
  }
  SUBCASE("zero epochs returns the seeded initialization") {
    const auto log = clustered_log(5, 2, 3, 4, 3);
    SkipgramConfig cfg;
    cfg.epochs = 0;
    const BehavioralEmbeddings a = train_skipgram(log, cfg);
    const BehavioralEmbeddings b = train_skipgram(log, cfg);
    CHECK(a.product_vectors == b.product_vectors);
    CHECK(a.user_vectors == b.user_vectors);
    bool nonzero = false;
    for (double v : a.product_vectors.data()) nonzero |= v != 0.0;
    CHECK(nonzero);
  }
  SUBCASE("empty log rejected") {
    CHECK_THROWS_AS(train_skipgram({}, SkipgramConfig{}), DataError);
  }
  SUBCASE("co-purchased pairs separate from random pairs by >= 0.1 cosine") {
    const auto log = clustered_log(40, 5, 6, 16, 11);
    SkipgramConfig cfg;
    cfg.epochs = 10;
    const BehavioralEmbeddings emb = train_skipgram(log, cfg);
    // planted pairs: same category; random pairs: across categories
    double planted = 0.0, random_pairs = 0.0;
    std::size_t np = 0, nr = 0;
    for (std::size_t c = 0; c < 5; ++c) {
      for (std::size_t i = 0; i < 6; ++i) {
        for (std::size_t j = i + 1; j < 6; ++j) {
          planted += cosine(product_row(emb, static_cast<ProductId>(c * 6 + i)),
                            product_row(emb, static_cast<ProductId>(c * 6 + j)));
          ++np;
        }
        for (std::size_t c2 = c + 1; c2 < 5; ++c2) {
          random_pairs +=
              cosine(product_row(emb, static_cast<ProductId>(c * 6 + i)),
                     product_row(emb, static_cast<ProductId>(c2 * 6 + i)));
          ++nr;
        }
      }
    }
    planted /= static_cast<double>(np);
    random_pairs /= static_cast<double>(nr);
    CHECK(planted - random_pairs >= 0.1);
  }
}

TEST_CASE("behavioral_features") {
  BehavioralEmbeddings emb;
  emb.dim = 2;
  emb.products = IdIndex<ProductId>({1, 2});
  emb.product_vectors = Tensor::matrix(3, 2, {0, 0,    // unknown row
                                              1, 0,    // product 1
                                              0, 1});  // product 2
  SUBCASE("empty history is all zeros") {
    const Tensor f = behavioral_features(1, {}, emb);
    CHECK(f == Tensor::zeros({1, 6}));
  }
  SUBCASE("self-similarity with a unit-norm vector") {
    const std::vector<ProductId> hist = {1};
    const Tensor f = behavioral_features(1, hist, emb);
    CHECK(f == Tensor::matrix(1, 6, {1, 1, 1, 1, 1, 1}));
  }
  SUBCASE("hand-evaluable 2-d oracle") {
    // queried=(1,0), history={(0,1),(1,0)} -> [0.5, 1, 1, 0.5, 1, 1]
    const std::vector<ProductId> hist = {2, 1};
    const Tensor f = behavioral_features(1, hist, emb);
    CHECK(f == Tensor::matrix(1, 6, {0.5, 1, 1, 0.5, 1, 1}));
  }
  SUBCASE("permutation invariance and sum = avg * n") {
    CounterRng rng(13, 0);
    BehavioralEmbeddings big;
    big.dim = 8;
    std::vector<ProductId> ids;
    for (ProductId p = 1; p <= 20; ++p) ids.push_back(p);
    big.products = IdIndex<ProductId>(std::move(ids));
    big.product_vectors = Tensor({21, 8});
    for (std::size_t i = 8; i < big.product_vectors.size(); ++i)
      big.product_vectors.at(i) = rng.next_normal();
    for (int iter = 0; iter < 30; ++iter) {
      std::vector<ProductId> hist;
      const std::size_t n = 1 + rng.next_below(6);
      for (std::size_t i = 0; i < n; ++i)
        hist.push_back(static_cast<ProductId>(1 + rng.next_below(20)));
      const Tensor f = behavioral_features(3, hist, big);
      std::vector<ProductId> rev(hist.rbegin(), hist.rend());
      const Tensor g = behavioral_features(3, rev, big);
      for (int k : {0, 1, 3, 4}) {  // avg and max components
        CHECK(f.at(0, k) == doctest::Approx(g.at(0, k)).epsilon(1e-12));
      }
      CHECK(f.at(0, 2) ==
            doctest::Approx(f.at(0, 0) * static_cast<double>(n)).epsilon(1e-12));
      CHECK(f.at(0, 5) ==
            doctest::Approx(f.at(0, 3) * static_cast<double>(n)).epsilon(1e-12));
      CHECK(f.at(0, 4) <= 1.0 + 1e-12);
      CHECK(f.at(0, 4) >= -1.0 - 1e-12);
    }
  }
  SUBCASE("unknown ids hit the unknown row") {
    const std::vector<ProductId> hist = {999};  // unknown -> zero vector
    const Tensor f = behavioral_features(1, hist, emb);
    // dot with zero vector is 0; cosine guarded to 0
    CHECK(f == Tensor::zeros({1, 6}));
  }
}

TEST_CASE("encode_text") {
  const HashedBagEncoder enc(16, 42);
  SUBCASE("dim below 8 rejected") {
    CHECK_THROWS_AS(HashedBagEncoder(4, 1), ContractError);
  }
  SUBCASE("empty token list encodes to zero") {
    CHECK(enc.encode({}) == Tensor::zeros({1, 16}));
  }
  SUBCASE("permutation yields the identical vector") {
    const std::vector<std::string> a = {"how", "much", "is", "item3"};
    const std::vector<std::string> b = {"item3", "is", "how", "much"};
    CHECK(enc.encode(a) == enc.encode(b));
  }
  SUBCASE("pure function of (tokens, dim, seed)") {
    const std::vector<std::string> tokens = {"price", "of", "milk"};
    const HashedBagEncoder enc2(16, 42);
    CHECK(enc.encode(tokens) == enc2.encode(tokens));
    const HashedBagEncoder other_seed(16, 43);
    CHECK(!(enc.encode(tokens) == other_seed.encode(tokens)));
  }
}

TEST_CASE("categorical tables") {
  CategoricalTable t = init_categorical_table({10, 20, 30}, 4, 9, 1);
  SUBCASE("known id returns its row exactly; unknown ids share row 0") {
    const Tensor r20 = lookup_categorical(20, t);
    for (std::size_t c = 0; c < 4; ++c)
      CHECK(r20.at(0, c) == t.rows.at(t.index.row_of(20), c));
    const Tensor u1 = lookup_categorical(999, t);
    const Tensor u2 = lookup_categorical(-5, t);
    CHECK(u1 == u2);
    for (std::size_t c = 0; c < 4; ++c) CHECK(u1.at(0, c) == t.rows.at(0, c));
  }
  SUBCASE("rows initialized within [-0.05, 0.05]") {
    for (double v : t.rows.data()) {
      CHECK(v >= -0.05);
      CHECK(v <= 0.05);
    }
  }
  SUBCASE("gradient flows only to touched rows") {
    Tape tape;
    const auto table = tape.input(t.rows);
    auto rows = std::make_shared<std::vector<std::size_t>>(
        std::vector<std::size_t>{t.index.row_of(20)});
    const auto picked = tape.gather_rows(table, rows);
    const auto loss = tape.reduce_sum_all(tape.mul(picked, picked));
    const auto grads = tape.backward(loss);
    const Tensor& g = grads.at(table);
    // one SGD step: only the touched row changes
    Tensor updated = t.rows;
    for (std::size_t i = 0; i < updated.size(); ++i)
      updated.at(i) -= 0.1 * g.at(i);
    for (std::size_t r = 0; r < updated.rows(); ++r) {
      bool identical = true;
      for (std::size_t c = 0; c < 4; ++c)
        identical &= updated.at(r, c) == t.rows.at(r, c);
      if (r == t.index.row_of(20))
        CHECK(!identical);
      else
        CHECK(identical);
    }
  }
}
