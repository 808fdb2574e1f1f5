#include <cmath>
#include <memory>
#include <vector>

#include "doctest.h"
#include "spqi/errors.hpp"
#include "spqi/grad_check.hpp"
#include "spqi/rng.hpp"
#include "spqi/tape.hpp"

using namespace spqi;

namespace {

// Independent straight-line oracles; kept free of the tape implementation.

Tensor matmul_oracle(const Tensor& a, const Tensor& b) {
  Tensor out({a.rows(), b.cols()});
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.cols(); ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < a.cols(); ++k) acc += a.at(i, k) * b.at(k, j);
      out.at(i, j) = acc;
    }
  return out;
}

std::vector<double> softmax_oracle(const std::vector<double>& scores) {
  double z = 0.0;
  std::vector<double> out(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i) z += std::exp(scores[i]);
  for (std::size_t i = 0; i < scores.size(); ++i)
    out[i] = std::exp(scores[i]) / z;
  return out;
}

double bce_oracle(const std::vector<double>& p, const std::vector<double>& y) {
  double acc = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i)
    acc -= y[i] * std::log(p[i]) + (1.0 - y[i]) * std::log(1.0 - p[i]);
  return acc / static_cast<double>(p.size());
}

Tensor random_tensor(std::size_t r, std::size_t c, CounterRng& rng,
                     double span = 1.0) {
  Tensor t({r, c});
  for (std::size_t i = 0; i < t.size(); ++i)
    t.at(i) = rng.next_range(-span, span);
  return t;
}

std::shared_ptr<const std::vector<std::uint8_t>> full_mask(std::size_t m,
                                                           std::size_t n) {
  return std::make_shared<std::vector<std::uint8_t>>(m * n, 1);
}

}  // namespace

TEST_CASE("matmul") {
  Tape tape;
  SUBCASE("identity leaves operands unchanged") {
    const Tensor i2 = Tensor::matrix(2, 2, {1, 0, 0, 1});
    const Tensor a = Tensor::matrix(2, 3, {1, 2, 3, 4, 5, 6});
    const auto out = tape.matmul(tape.input(i2), tape.input(a));
    CHECK(tape.value(out) == a);
  }
  SUBCASE("zero times anything is zero") {
    const auto out = tape.matmul(tape.input(Tensor::zeros({2, 3})),
                                 tape.input(Tensor::matrix(3, 2, {1, 2, 3, 4, 5, 6})));
    CHECK(tape.value(out) == Tensor::zeros({2, 2}));
  }
  SUBCASE("2x2 case matches the triple-loop oracle") {
    const Tensor a = Tensor::matrix(2, 2, {1, 2, 3, 4});
    const Tensor b = Tensor::matrix(2, 2, {5, 6, 7, 8});
    CHECK(matmul_oracle(a, b) == Tensor::matrix(2, 2, {19, 22, 43, 50}));
    const auto out = tape.matmul(tape.input(a), tape.input(b));
    CHECK(tape.value(out) == Tensor::matrix(2, 2, {19, 22, 43, 50}));
  }
  SUBCASE("random shapes match the oracle") {
    CounterRng rng(11, 0);
    for (int iter = 0; iter < 25; ++iter) {
      const std::size_t m = 1 + rng.next_below(6);
      const std::size_t k = 1 + rng.next_below(6);
      const std::size_t n = 1 + rng.next_below(6);
      const Tensor a = random_tensor(m, k, rng);
      const Tensor b = random_tensor(k, n, rng);
      Tape t2;
      const auto out = t2.matmul(t2.input(a), t2.input(b));
      const Tensor expect = matmul_oracle(a, b);
      for (std::size_t i = 0; i < expect.size(); ++i)
        CHECK(t2.value(out).at(i) == doctest::Approx(expect.at(i)).epsilon(1e-12));
    }
  }
  SUBCASE("shape mismatch names both shapes") {
    const auto a = tape.input(Tensor::zeros({2, 3}));
    const auto b = tape.input(Tensor::zeros({4, 2}));
    CHECK_THROWS_WITH_AS(tape.matmul(a, b),
                         "matmul shape mismatch: [2,3] x [4,2]", ShapeError);
  }
  SUBCASE("deterministic: identical inputs give bit-identical outputs") {
    CounterRng rng(5, 0);
    const Tensor a = random_tensor(4, 4, rng);
    const Tensor b = random_tensor(4, 4, rng);
    Tape t1, t2;
    const auto o1 = t1.matmul(t1.input(a), t1.input(b));
    const auto o2 = t2.matmul(t2.input(a), t2.input(b));
    CHECK(t1.value(o1) == t2.value(o2));
  }
}

TEST_CASE("activation") {
  Tape tape;
  SUBCASE("sigmoid symmetry and frozen high-precision value") {
    const auto out = tape.activation(Activation::sigmoid,
                                     tape.input(Tensor::row({0.0, 2.0})));
    CHECK(tape.value(out).at(0) == 0.5);
    CHECK(tape.value(out).at(1) ==
          doctest::Approx(0.8807970779778823).epsilon(1e-15));
  }
  SUBCASE("leaky_relu by definition") {
    const auto out = tape.activation(
        Activation::leaky_relu, tape.input(Tensor::row({-1.0, 3.0})), 0.2);
    CHECK(tape.value(out).at(0) == doctest::Approx(-0.2));
    CHECK(tape.value(out).at(1) == 3.0);
  }
  SUBCASE("elu negative branch is expm1") {
    const auto out =
        tape.activation(Activation::elu, tape.input(Tensor::row({-1.0, 2.0})));
    CHECK(tape.value(out).at(0) == doctest::Approx(std::expm1(-1.0)));
    CHECK(tape.value(out).at(1) == 2.0);
  }
  SUBCASE("slope outside (0,1) rejected") {
    const auto x = tape.input(Tensor::row({1.0}));
    CHECK_THROWS_AS(tape.activation(Activation::leaky_relu, x, 1.5),
                    ContractError);
  }
}

TEST_CASE("masked_softmax") {
  SUBCASE("equal scores over a full mask are uniform") {
    Tape tape;
    const auto out = tape.masked_softmax(
        tape.input(Tensor::full({3, 3}, 0.7)), full_mask(3, 3));
    for (std::size_t i = 0; i < 9; ++i)
      CHECK(tape.value(out).at(i) == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
  }
  SUBCASE("diagonal-only mask yields the identity") {
    Tape tape;
    auto mask = std::make_shared<std::vector<std::uint8_t>>(9, 0);
    for (int i = 0; i < 3; ++i) (*mask)[i * 3 + i] = 1;
    CounterRng rng(3, 0);
    const auto out =
        tape.masked_softmax(tape.input(random_tensor(3, 3, rng)), mask);
    CHECK(tape.value(out) == Tensor::matrix(3, 3, {1, 0, 0, 0, 1, 0, 0, 0, 1}));
  }
  SUBCASE("scores [1,2,3] match the exp-normalize oracle") {
    const auto expect = softmax_oracle({1.0, 2.0, 3.0});
    CHECK(expect[0] == doctest::Approx(0.09003057).epsilon(1e-7));
    CHECK(expect[1] == doctest::Approx(0.24472847).epsilon(1e-7));
    CHECK(expect[2] == doctest::Approx(0.66524096).epsilon(1e-7));
    Tape tape;
    const auto out = tape.masked_softmax(
        tape.input(Tensor::matrix(1, 3, {1.0, 2.0, 3.0})), full_mask(1, 3));
    for (int i = 0; i < 3; ++i)
      CHECK(tape.value(out).at(i) == doctest::Approx(expect[i]).epsilon(1e-13));
  }
  SUBCASE("rows sum to one and shift invariance holds") {
    CounterRng rng(17, 0);
    for (int iter = 0; iter < 20; ++iter) {
      const std::size_t n = 2 + rng.next_below(6);
      Tensor scores = random_tensor(n, n, rng, 3.0);
      auto mask = std::make_shared<std::vector<std::uint8_t>>(n * n, 0);
      for (std::size_t i = 0; i < n; ++i) {
        (*mask)[i * n + i] = 1;
        for (std::size_t j = 0; j < n; ++j)
          if (rng.next_unit() < 0.5) (*mask)[i * n + j] = 1;
      }
      Tape t1;
      const auto out = t1.masked_softmax(t1.input(scores), mask);
      for (std::size_t i = 0; i < n; ++i) {
        double sum = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
          const double v = t1.value(out).at(i, j);
          if (!(*mask)[i * n + j]) CHECK(v == 0.0);
          sum += v;
        }
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
      }
      // Add a constant to one row's scores: output unchanged within 1e-12.
      Tensor shifted = scores;
      const std::size_t row = rng.next_below(n);
      for (std::size_t j = 0; j < n; ++j) shifted.at(row, j) += 123.456;
      Tape t2;
      const auto out2 = t2.masked_softmax(t2.input(shifted), mask);
      for (std::size_t i = 0; i < n * n; ++i)
        CHECK(t2.value(out2).at(i) ==
              doctest::Approx(t1.value(out).at(i)).epsilon(1e-12));
    }
  }
  SUBCASE("fully masked row is a contract violation") {
    Tape tape;
    auto mask = std::make_shared<std::vector<std::uint8_t>>(4, 0);
    (*mask)[0] = 1;  // row 1 fully masked
    CHECK_THROWS_AS(
        tape.masked_softmax(tape.input(Tensor::zeros({2, 2})), mask),
        ContractError);
  }
}

TEST_CASE("bce_loss") {
  Tape tape;
  SUBCASE("perfect prediction is near zero") {
    const auto out =
        tape.bce_loss(tape.input(Tensor::row({1.0 - 1e-7})), {1.0});
    CHECK(tape.value(out).at(0) <= 1e-6);
  }
  SUBCASE("uninformative prediction is ln 2") {
    const auto out =
        tape.bce_loss(tape.input(Tensor::row({0.5, 0.5})), {0.0, 1.0});
    CHECK(tape.value(out).at(0) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  }
  SUBCASE("scalar formula oracle") {
    const double expect = bce_oracle({0.9, 0.2}, {1.0, 0.0});
    CHECK(expect == doctest::Approx(0.16425203).epsilon(1e-7));
    const auto out =
        tape.bce_loss(tape.input(Tensor::row({0.9, 0.2})), {1.0, 0.0});
    CHECK(tape.value(out).at(0) == doctest::Approx(expect).epsilon(1e-12));
  }
  SUBCASE("length mismatch raises") {
    const auto p = tape.input(Tensor::row({0.5, 0.5}));
    CHECK_THROWS_AS(tape.bce_loss(p, {1.0}), ShapeError);
  }
}

TEST_CASE("grad_check basics") {
  SUBCASE("linear layer + bce on random 4x3 input") {
    CounterRng rng(23, 0);
    const Tensor x = random_tensor(4, 3, rng);
    const Tensor w = random_tensor(3, 1, rng);
    const double err = grad_check(
        [](Tape& t, const std::vector<Tape::Value>& in) {
          const auto logits = t.matmul(in[0], in[1]);
          const auto p = t.activation(Activation::sigmoid, logits);
          return t.bce_loss(p, {1.0, 0.0, 1.0, 0.0});
        },
        {x, w}, 1e-5);
    CHECK(err < 1e-4);
  }
  SUBCASE("constant function has zero error") {
    const double err = grad_check(
        [](Tape& t, const std::vector<Tape::Value>&) {
          return t.constant(Tensor::scalar(3.5));
        },
        {Tensor::row({1.0, 2.0})}, 1e-5);
    CHECK(err == 0.0);
  }
  SUBCASE("eps outside [1e-7, 1e-3] rejected") {
    const auto f = [](Tape& t, const std::vector<Tape::Value>& in) {
      return t.reduce_sum_all(in[0]);
    };
    CHECK_THROWS_AS(grad_check(f, {Tensor::row({1.0})}, 1e-2), ContractError);
    CHECK_THROWS_AS(grad_check(f, {Tensor::row({1.0})}, 1e-8), ContractError);
  }
  SUBCASE("non-scalar output rejected") {
    CHECK_THROWS_AS(grad_check(
                        [](Tape& t, const std::vector<Tape::Value>& in) {
                          return t.scale(in[0], 2.0);
                        },
                        {Tensor::row({1.0, 2.0})}, 1e-5),
                    ContractError);
  }
}

TEST_CASE("grad_check covers every registered backward rule") {
  CounterRng rng(31, 0);
  const auto check = [&](const TapeFunction& f, std::vector<Tensor> inputs) {
    const double err = grad_check(f, inputs, 1e-5);
    CHECK(err < 1e-4);
  };

  // Elementwise and broadcast arithmetic feeding a scalar reduction.
  check(
      [](Tape& t, const std::vector<Tape::Value>& in) {
        auto y = t.add(in[0], in[1]);
        y = t.mul(y, in[2]);
        y = t.scale(y, 1.7);
        return t.reduce_sum_all(y);
      },
      {random_tensor(3, 4, rng), random_tensor(3, 4, rng),
       random_tensor(3, 4, rng)});

  check(
      [](Tape& t, const std::vector<Tape::Value>& in) {
        auto y = t.add_row_broadcast(in[0], in[1]);
        return t.reduce_mean_all(t.mul_scalar_value(y, in[2]));
      },
      {random_tensor(4, 3, rng), random_tensor(1, 3, rng),
       Tensor::scalar(0.8)});

  check(
      [](Tape& t, const std::vector<Tape::Value>& in) {
        return t.reduce_sum_all(t.matmul(t.transpose(in[0]), in[1]));
      },
      {random_tensor(3, 2, rng), random_tensor(3, 4, rng)});

  check(
      [](Tape& t, const std::vector<Tape::Value>& in) {
        auto r = t.reshape(in[0], {6, 2});
        return t.reduce_mean_all(t.mul(r, r));
      },
      {random_tensor(3, 4, rng)});

  for (const Activation kind :
       {Activation::sigmoid, Activation::leaky_relu, Activation::elu}) {
    check(
        [kind](Tape& t, const std::vector<Tape::Value>& in) {
          return t.reduce_sum_all(t.activation(kind, in[0], 0.2));
        },
        {random_tensor(3, 3, rng, 2.0)});
  }

  {
    auto mask = std::make_shared<std::vector<std::uint8_t>>(16, 0);
    for (std::size_t i = 0; i < 4; ++i) {
      (*mask)[i * 4 + i] = 1;
      (*mask)[i * 4 + (i + 1) % 4] = 1;
    }
    check(
        [mask](Tape& t, const std::vector<Tape::Value>& in) {
          auto alpha = t.masked_softmax(in[0], mask);
          return t.reduce_sum_all(t.mul(alpha, in[1]));
        },
        {random_tensor(4, 4, rng, 2.0), random_tensor(4, 4, rng)});
  }

  check(
      [](Tape& t, const std::vector<Tape::Value>& in) {
        auto lam = t.block_softmax_cols(in[0], 3);
        return t.reduce_sum_all(t.mul(lam, in[1]));
      },
      {random_tensor(6, 4, rng, 2.0), random_tensor(6, 4, rng)});

  check(
      [](Tape& t, const std::vector<Tape::Value>& in) {
        auto lam = t.block_ratio_cols(in[0], 3);
        return t.reduce_sum_all(t.mul(lam, in[1]));
      },
      {random_tensor(6, 2, rng, 1.0), random_tensor(6, 2, rng)});

  check(
      [](Tape& t, const std::vector<Tape::Value>& in) {
        return t.reduce_sum_all(t.block_colsum(in[0], 2));
      },
      {random_tensor(6, 3, rng)});

  check(
      [](Tape& t, const std::vector<Tape::Value>& in) {
        auto blocks = t.interleave_rows({in[0], in[1]});
        return t.reduce_mean_all(t.mul(blocks, blocks));
      },
      {random_tensor(3, 4, rng), random_tensor(3, 4, rng)});

  check(
      [](Tape& t, const std::vector<Tape::Value>& in) {
        auto wide = t.concat_cols({in[0], in[1]});
        return t.reduce_sum_all(t.mul(wide, wide));
      },
      {random_tensor(3, 2, rng), random_tensor(3, 3, rng)});

  check(
      [](Tape& t, const std::vector<Tape::Value>& in) {
        auto stacked = t.stack_rows({in[0], in[1], in[0]});
        return t.reduce_mean_all(t.mul(stacked, stacked));
      },
      {random_tensor(1, 4, rng), random_tensor(1, 4, rng)});

  check(
      [](Tape& t, const std::vector<Tape::Value>& in) {
        auto packed = t.pack_scalars(
            {t.reduce_sum_all(in[0]), t.reduce_mean_all(in[1])});
        return t.reduce_sum_all(t.mul(packed, packed));
      },
      {random_tensor(2, 2, rng), random_tensor(3, 1, rng)});

  {
    auto rows = std::make_shared<std::vector<std::size_t>>(
        std::vector<std::size_t>{0, 2, 2, 1});
    check(
        [rows](Tape& t, const std::vector<Tape::Value>& in) {
          auto g = t.gather_rows(in[0], rows);
          return t.reduce_sum_all(t.mul(g, g));
        },
        {random_tensor(3, 4, rng)});
  }

  check(
      [](Tape& t, const std::vector<Tape::Value>& in) {
        auto s = t.slice_rows(in[0], 1, 2);
        return t.reduce_sum_all(t.mul(s, s));
      },
      {random_tensor(4, 3, rng)});

  check(
      [](Tape& t, const std::vector<Tape::Value>& in) {
        return t.reduce_mean_all(t.outer_add(in[0], in[1]));
      },
      {random_tensor(3, 1, rng), random_tensor(4, 1, rng)});

  check(
      [](Tape& t, const std::vector<Tape::Value>& in) {
        return t.reduce_max_all(t.mul(in[0], in[0]));
      },
      {Tensor::row({0.3, -1.4, 0.9, 2.2})});

  check(
      [](Tape& t, const std::vector<Tape::Value>& in) {
        return t.reduce_sum_all(t.l2norm_rows(in[0]));
      },
      {random_tensor(3, 4, rng, 2.0)});

  {
    auto mask = std::make_shared<std::vector<std::uint8_t>>(9, 0);
    for (std::size_t i = 0; i < 3; ++i) (*mask)[i * 3 + i] = 1;
    (*mask)[0 * 3 + 2] = 1;
    (*mask)[2 * 3 + 0] = 1;
    check(
        [mask](Tape& t, const std::vector<Tape::Value>& in) {
          return t.reduce_sum_all(t.neighbor_sum(in[0], in[1], mask));
        },
        {random_tensor(3, 3, rng), random_tensor(3, 4, rng)});
  }

  // div away from the guard floor
  check(
      [](Tape& t, const std::vector<Tape::Value>& in) {
        return t.reduce_sum_all(t.div(in[0], in[1]));
      },
      {random_tensor(3, 2, rng), Tensor::matrix(3, 2, {1.5, -2.0, 0.7, 1.1, -0.9, 2.3})});
}

TEST_CASE("backward accumulates across fan-out") {
  // y = sum(x*x + x): dy/dx = 2x + 1 exactly.
  Tape tape;
  const Tensor x = Tensor::row({1.0, -2.0, 0.5});
  const auto xv = tape.input(x);
  const auto y = tape.reduce_sum_all(tape.add(tape.mul(xv, xv), xv));
  const auto grads = tape.backward(y);
  for (std::size_t i = 0; i < 3; ++i)
    CHECK(grads.at(xv).at(i) == doctest::Approx(2.0 * x.at(i) + 1.0));
}
