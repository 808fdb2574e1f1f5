#include "spqi/tape.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "spqi/errors.hpp"

namespace spqi {

namespace {

constexpr double kBceEps = 1e-7;
constexpr double kDivFloor = 1e-12;
constexpr double kRatioFloor = 1e-8;

void matmul_into(const Tensor& a, bool ta, const Tensor& b, bool tb,
                 Tensor& out, bool accumulate) {
  // out(+)= op(a) * op(b) where op transposes when the flag is set.
  const std::size_t m = ta ? a.cols() : a.rows();
  const std::size_t k = ta ? a.rows() : a.cols();
  const std::size_t n = tb ? b.rows() : b.cols();
  if (!accumulate)
    for (double& v : out.data()) v = 0.0;
  const double* ad = a.data().data();
  const double* bd = b.data().data();
  double* od = out.data().data();
  const std::size_t acols = a.cols();
  const std::size_t bcols = b.cols();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ta ? ad[p * acols + i] : ad[i * acols + p];
      if (av == 0.0) continue;
      const double* brow = tb ? nullptr : bd + p * bcols;
      double* orow = od + i * n;
      if (tb) {
        for (std::size_t j = 0; j < n; ++j) orow[j] += av * bd[j * bcols + p];
      } else {
        for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
      }
    }
  }
}

double activation_forward(Activation kind, double x, double slope) {
  switch (kind) {
    case Activation::sigmoid:
      return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x))
                      : std::exp(x) / (1.0 + std::exp(x));
    case Activation::leaky_relu:
      return x >= 0.0 ? x : slope * x;
    case Activation::elu:
      return x >= 0.0 ? x : std::expm1(x);
  }
  return 0.0;
}

double activation_derivative(Activation kind, double x, double y,
                             double slope) {
  switch (kind) {
    case Activation::sigmoid:
      return y * (1.0 - y);
    case Activation::leaky_relu:
      return x >= 0.0 ? 1.0 : slope;
    case Activation::elu:
      return x >= 0.0 ? 1.0 : y + 1.0;
  }
  return 0.0;
}

}  // namespace

const Tensor& Tape::Gradients::at(Value v) const {
  if (!contains(v)) throw ContractError("no gradient recorded for value");
  return *g_[v.id];
}

void Tape::check(Value v) const {
  if (v.id >= nodes_.size())
    throw ContractError("tape value does not belong to this tape");
}

const Tensor& Tape::value(Value v) const {
  check(v);
  return nodes_[v.id].out;
}

Tape::Value Tape::push(Tensor out, std::vector<std::size_t> inputs,
                       std::function<void(const Tensor&, Tape&, Gradients&)> back) {
  Node node;
  node.out = std::move(out);
  node.inputs = std::move(inputs);
  for (std::size_t in : node.inputs)
    node.requires_grad |= nodes_[in].requires_grad;
  if (node.requires_grad) node.back = std::move(back);
  nodes_.push_back(std::move(node));
  return Value{nodes_.size() - 1};
}

void Tape::accumulate(Gradients& g, std::size_t id, Tensor contribution) {
  if (g.g_[id].has_value())
    g.g_[id]->add_in_place(contribution);
  else
    g.g_[id] = std::move(contribution);
}

Tape::Value Tape::input(Tensor t) {
  if (!t.all_finite()) throw ContractError("tape input has non-finite entries");
  Node node;
  node.out = std::move(t);
  node.requires_grad = true;
  nodes_.push_back(std::move(node));
  return Value{nodes_.size() - 1};
}

Tape::Value Tape::constant(Tensor t) {
  if (!t.all_finite())
    throw ContractError("tape constant has non-finite entries");
  Node node;
  node.out = std::move(t);
  node.requires_grad = false;
  nodes_.push_back(std::move(node));
  return Value{nodes_.size() - 1};
}

Tape::Value Tape::matmul(Value a, Value b) {
  check(a);
  check(b);
  const Tensor& A = val(a.id);
  const Tensor& B = val(b.id);
  if (A.rank() != 2 || B.rank() != 2 || A.cols() != B.rows())
    throw ShapeError("matmul shape mismatch: " + A.shape_str() + " x " +
                     B.shape_str());
  Tensor out({A.rows(), B.cols()});
  matmul_into(A, false, B, false, out, false);
  const std::size_t aid = a.id, bid = b.id;
  return push(std::move(out), {aid, bid},
              [aid, bid](const Tensor& g, Tape& t, Gradients& gr) {
                const Tensor& A = t.val(aid);
                const Tensor& B = t.val(bid);
                if (t.nodes_[aid].requires_grad) {
                  Tensor da({A.rows(), A.cols()});
                  matmul_into(g, false, B, true, da, false);  // dA = G * B^T
                  accumulate(gr, aid, std::move(da));
                }
                if (t.nodes_[bid].requires_grad) {
                  Tensor db({B.rows(), B.cols()});
                  matmul_into(A, true, g, false, db, false);  // dB = A^T * G
                  accumulate(gr, bid, std::move(db));
                }
              });
}

Tape::Value Tape::add(Value a, Value b) {
  check(a);
  check(b);
  const Tensor& A = val(a.id);
  const Tensor& B = val(b.id);
  if (!A.same_shape(B))
    throw ShapeError("add shape mismatch: " + A.shape_str() + " vs " +
                     B.shape_str());
  Tensor out = A;
  for (std::size_t i = 0; i < out.size(); ++i) out.at(i) += B.at(i);
  const std::size_t aid = a.id, bid = b.id;
  return push(std::move(out), {aid, bid},
              [aid, bid](const Tensor& g, Tape& t, Gradients& gr) {
                if (t.nodes_[aid].requires_grad) accumulate(gr, aid, g);
                if (t.nodes_[bid].requires_grad) accumulate(gr, bid, g);
              });
}

Tape::Value Tape::add_row_broadcast(Value a, Value bias) {
  check(a);
  check(bias);
  const Tensor& A = val(a.id);
  const Tensor& B = val(bias.id);
  if (A.rank() != 2 || B.rank() != 2 || B.rows() != 1 || B.cols() != A.cols())
    throw ShapeError("add_row_broadcast shape mismatch: " + A.shape_str() +
                     " vs " + B.shape_str());
  Tensor out = A;
  for (std::size_t r = 0; r < A.rows(); ++r)
    for (std::size_t c = 0; c < A.cols(); ++c) out.at(r, c) += B.at(0, c);
  const std::size_t aid = a.id, bid = bias.id;
  return push(std::move(out), {aid, bid},
              [aid, bid](const Tensor& g, Tape& t, Gradients& gr) {
                if (t.nodes_[aid].requires_grad) accumulate(gr, aid, g);
                if (t.nodes_[bid].requires_grad) {
                  Tensor db({1, g.cols()});
                  for (std::size_t r = 0; r < g.rows(); ++r)
                    for (std::size_t c = 0; c < g.cols(); ++c)
                      db.at(0, c) += g.at(r, c);
                  accumulate(gr, bid, std::move(db));
                }
              });
}

Tape::Value Tape::mul(Value a, Value b) {
  check(a);
  check(b);
  const Tensor& A = val(a.id);
  const Tensor& B = val(b.id);
  if (!A.same_shape(B))
    throw ShapeError("mul shape mismatch: " + A.shape_str() + " vs " +
                     B.shape_str());
  Tensor out = A;
  for (std::size_t i = 0; i < out.size(); ++i) out.at(i) *= B.at(i);
  const std::size_t aid = a.id, bid = b.id;
  return push(std::move(out), {aid, bid},
              [aid, bid](const Tensor& g, Tape& t, Gradients& gr) {
                const Tensor& A = t.val(aid);
                const Tensor& B = t.val(bid);
                if (t.nodes_[aid].requires_grad) {
                  Tensor da = g;
                  for (std::size_t i = 0; i < da.size(); ++i)
                    da.at(i) *= B.at(i);
                  accumulate(gr, aid, std::move(da));
                }
                if (t.nodes_[bid].requires_grad) {
                  Tensor db = g;
                  for (std::size_t i = 0; i < db.size(); ++i)
                    db.at(i) *= A.at(i);
                  accumulate(gr, bid, std::move(db));
                }
              });
}

Tape::Value Tape::mul_scalar_value(Value a, Value s) {
  check(a);
  check(s);
  const Tensor& A = val(a.id);
  const Tensor& S = val(s.id);
  if (S.size() != 1)
    throw ShapeError("mul_scalar_value needs 1x1 scalar, got " + S.shape_str());
  Tensor out = A;
  for (std::size_t i = 0; i < out.size(); ++i) out.at(i) *= S.at(0);
  const std::size_t aid = a.id, sid = s.id;
  return push(std::move(out), {aid, sid},
              [aid, sid](const Tensor& g, Tape& t, Gradients& gr) {
                const Tensor& A = t.val(aid);
                const double sv = t.val(sid).at(0);
                if (t.nodes_[aid].requires_grad) {
                  Tensor da = g;
                  for (std::size_t i = 0; i < da.size(); ++i) da.at(i) *= sv;
                  accumulate(gr, aid, std::move(da));
                }
                if (t.nodes_[sid].requires_grad) {
                  double acc = 0.0;
                  for (std::size_t i = 0; i < g.size(); ++i)
                    acc += g.at(i) * A.at(i);
                  accumulate(gr, sid, Tensor::scalar(acc));
                }
              });
}

Tape::Value Tape::scale(Value a, double c) {
  check(a);
  Tensor out = val(a.id);
  for (double& v : out.data()) v *= c;
  const std::size_t aid = a.id;
  return push(std::move(out), {aid},
              [aid, c](const Tensor& g, Tape& t, Gradients& gr) {
                Tensor da = g;
                for (double& v : da.data()) v *= c;
                accumulate(gr, aid, std::move(da));
              });
}

Tape::Value Tape::transpose(Value a) {
  check(a);
  const Tensor& A = val(a.id);
  if (A.rank() != 2)
    throw ShapeError("transpose needs rank-2, got " + A.shape_str());
  Tensor out({A.cols(), A.rows()});
  for (std::size_t r = 0; r < A.rows(); ++r)
    for (std::size_t c = 0; c < A.cols(); ++c) out.at(c, r) = A.at(r, c);
  const std::size_t aid = a.id;
  return push(std::move(out), {aid},
              [aid](const Tensor& g, Tape& t, Gradients& gr) {
                Tensor da({g.cols(), g.rows()});
                for (std::size_t r = 0; r < g.rows(); ++r)
                  for (std::size_t c = 0; c < g.cols(); ++c)
                    da.at(c, r) = g.at(r, c);
                accumulate(gr, aid, std::move(da));
              });
}

Tape::Value Tape::reshape(Value a, std::vector<std::size_t> shape) {
  check(a);
  const Tensor& A = val(a.id);
  Tensor out(shape, std::vector<double>(A.data().begin(), A.data().end()));
  const std::size_t aid = a.id;
  return push(std::move(out), {aid},
              [aid](const Tensor& g, Tape& t, Gradients& gr) {
                const Tensor& A = t.val(aid);
                accumulate(gr, aid,
                           Tensor(A.shape(), std::vector<double>(
                                                 g.data().begin(),
                                                 g.data().end())));
              });
}

Tape::Value Tape::activation(Activation kind, Value x, double slope) {
  check(x);
  if (kind == Activation::leaky_relu && (slope <= 0.0 || slope >= 1.0))
    throw ContractError("leaky_relu slope must lie in (0,1)");
  const Tensor& X = val(x.id);
  if (!X.all_finite())
    throw ContractError("activation input has non-finite entries");
  Tensor out = X;
  for (double& v : out.data()) v = activation_forward(kind, v, slope);
  const std::size_t xid = x.id;
  return push(std::move(out), {xid},
              [xid, kind, slope](const Tensor& g, Tape& t, Gradients& gr) {
                const Tensor& X = t.val(xid);
                Tensor da = g;
                for (std::size_t i = 0; i < da.size(); ++i) {
                  const double xv = X.at(i);
                  const double yv = activation_forward(kind, xv, slope);
                  da.at(i) *= activation_derivative(kind, xv, yv, slope);
                }
                accumulate(gr, xid, std::move(da));
              });
}

Tape::Value Tape::masked_softmax(
    Value scores, std::shared_ptr<const std::vector<std::uint8_t>> mask) {
  check(scores);
  const Tensor& S = val(scores.id);
  if (S.rank() != 2)
    throw ShapeError("masked_softmax needs rank-2, got " + S.shape_str());
  const std::size_t m = S.rows(), n = S.cols();
  if (!mask || mask->size() != m * n)
    throw ShapeError("masked_softmax mask size does not match scores " +
                     S.shape_str());
  Tensor out({m, n});
  std::vector<double> exps;
  for (std::size_t r = 0; r < m; ++r) {
    double mx = -std::numeric_limits<double>::infinity();
    bool any = false;
    for (std::size_t c = 0; c < n; ++c) {
      if ((*mask)[r * n + c]) {
        any = true;
        mx = std::max(mx, S.at(r, c));
      }
    }
    if (!any)
      throw ContractError("masked_softmax: fully masked row " +
                          std::to_string(r));
    // The normalizer is accumulated in sorted order so the result depends
    // only on the multiset of scores, keeping graph layers exactly
    // equivariant under node permutation.
    exps.clear();
    for (std::size_t c = 0; c < n; ++c) {
      if ((*mask)[r * n + c]) {
        const double e = std::exp(S.at(r, c) - mx);
        out.at(r, c) = e;
        exps.push_back(e);
      }
    }
    std::sort(exps.begin(), exps.end());
    double z = 0.0;
    for (const double e : exps) z += e;
    for (std::size_t c = 0; c < n; ++c)
      if ((*mask)[r * n + c]) out.at(r, c) /= z;
  }
  const std::size_t sid = scores.id;
  const std::size_t self = nodes_.size();
  return push(std::move(out), {sid},
              [sid, self, mask](const Tensor& g, Tape& t, Gradients& gr) {
                const Tensor& Y = t.val(self);
                const std::size_t m = Y.rows(), n = Y.cols();
                Tensor ds({m, n});
                for (std::size_t r = 0; r < m; ++r) {
                  double dot = 0.0;
                  for (std::size_t c = 0; c < n; ++c)
                    if ((*mask)[r * n + c]) dot += Y.at(r, c) * g.at(r, c);
                  for (std::size_t c = 0; c < n; ++c)
                    if ((*mask)[r * n + c])
                      ds.at(r, c) = Y.at(r, c) * (g.at(r, c) - dot);
                }
                accumulate(gr, sid, std::move(ds));
              });
}

Tape::Value Tape::block_softmax_cols(Value g, std::size_t block) {
  check(g);
  const Tensor& G = val(g.id);
  if (G.rank() != 2 || block == 0 || G.rows() % block != 0)
    throw ShapeError("block_softmax_cols: rows of " + G.shape_str() +
                     " not divisible by block " + std::to_string(block));
  const std::size_t nb = G.rows() / block, n = G.cols();
  Tensor out({G.rows(), n});
  for (std::size_t b = 0; b < nb; ++b) {
    for (std::size_t c = 0; c < n; ++c) {
      double mx = G.at(b * block, c);
      for (std::size_t j = 1; j < block; ++j)
        mx = std::max(mx, G.at(b * block + j, c));
      double z = 0.0;
      for (std::size_t j = 0; j < block; ++j) {
        const double e = std::exp(G.at(b * block + j, c) - mx);
        out.at(b * block + j, c) = e;
        z += e;
      }
      for (std::size_t j = 0; j < block; ++j) out.at(b * block + j, c) /= z;
    }
  }
  const std::size_t gid = g.id;
  const std::size_t self = nodes_.size();
  return push(std::move(out), {gid},
              [gid, self, block](const Tensor& gout, Tape& t, Gradients& gr) {
                const Tensor& Y = t.val(self);
                const std::size_t nb = Y.rows() / block, n = Y.cols();
                Tensor dg({Y.rows(), n});
                for (std::size_t b = 0; b < nb; ++b) {
                  for (std::size_t c = 0; c < n; ++c) {
                    double dot = 0.0;
                    for (std::size_t j = 0; j < block; ++j)
                      dot += Y.at(b * block + j, c) * gout.at(b * block + j, c);
                    for (std::size_t j = 0; j < block; ++j)
                      dg.at(b * block + j, c) =
                          Y.at(b * block + j, c) *
                          (gout.at(b * block + j, c) - dot);
                  }
                }
                accumulate(gr, gid, std::move(dg));
              });
}

Tape::Value Tape::block_ratio_cols(Value g, std::size_t block) {
  check(g);
  const Tensor& G = val(g.id);
  if (G.rank() != 2 || block == 0 || G.rows() % block != 0)
    throw ShapeError("block_ratio_cols: rows of " + G.shape_str() +
                     " not divisible by block " + std::to_string(block));
  const std::size_t nb = G.rows() / block, n = G.cols();
  Tensor out({G.rows(), n});
  for (std::size_t b = 0; b < nb; ++b) {
    for (std::size_t c = 0; c < n; ++c) {
      double den = 0.0;
      for (std::size_t j = 0; j < block; ++j) den += G.at(b * block + j, c);
      const double guarded =
          std::abs(den) < kRatioFloor ? (den < 0.0 ? -kRatioFloor : kRatioFloor)
                                      : den;
      for (std::size_t j = 0; j < block; ++j)
        out.at(b * block + j, c) = G.at(b * block + j, c) / guarded;
    }
  }
  const std::size_t gid = g.id;
  return push(std::move(out), {gid},
              [gid, block](const Tensor& gout, Tape& t, Gradients& gr) {
                const Tensor& G = t.val(gid);
                const std::size_t nb = G.rows() / block, n = G.cols();
                Tensor dg({G.rows(), n});
                for (std::size_t b = 0; b < nb; ++b) {
                  for (std::size_t c = 0; c < n; ++c) {
                    double den = 0.0;
                    for (std::size_t j = 0; j < block; ++j)
                      den += G.at(b * block + j, c);
                    const bool floored = std::abs(den) < kRatioFloor;
                    const double guarded =
                        floored ? (den < 0.0 ? -kRatioFloor : kRatioFloor)
                                : den;
                    // y_j = g_j / D: dy_j/dg_k = delta_jk/D - g_j/D^2
                    // (the D term is dropped when the denominator is floored).
                    double sum_gy = 0.0;
                    for (std::size_t j = 0; j < block; ++j)
                      sum_gy += gout.at(b * block + j, c) *
                                G.at(b * block + j, c);
                    for (std::size_t k = 0; k < block; ++k) {
                      double d = gout.at(b * block + k, c) / guarded;
                      if (!floored) d -= sum_gy / (guarded * guarded);
                      dg.at(b * block + k, c) = d;
                    }
                  }
                }
                accumulate(gr, gid, std::move(dg));
              });
}

Tape::Value Tape::block_colsum(Value x, std::size_t block) {
  check(x);
  const Tensor& X = val(x.id);
  if (X.rank() != 2 || block == 0 || X.rows() % block != 0)
    throw ShapeError("block_colsum: rows of " + X.shape_str() +
                     " not divisible by block " + std::to_string(block));
  const std::size_t nb = X.rows() / block, n = X.cols();
  Tensor out({nb, n});
  for (std::size_t b = 0; b < nb; ++b)
    for (std::size_t j = 0; j < block; ++j)
      for (std::size_t c = 0; c < n; ++c)
        out.at(b, c) += X.at(b * block + j, c);
  const std::size_t xid = x.id;
  return push(std::move(out), {xid},
              [xid, block](const Tensor& g, Tape& t, Gradients& gr) {
                const Tensor& X = t.val(xid);
                Tensor dx({X.rows(), X.cols()});
                const std::size_t nb = X.rows() / block;
                for (std::size_t b = 0; b < nb; ++b)
                  for (std::size_t j = 0; j < block; ++j)
                    for (std::size_t c = 0; c < X.cols(); ++c)
                      dx.at(b * block + j, c) = g.at(b, c);
                accumulate(gr, xid, std::move(dx));
              });
}

Tape::Value Tape::interleave_rows(const std::vector<Value>& parts) {
  if (parts.empty()) throw ContractError("interleave_rows: no parts");
  std::vector<std::size_t> ids;
  for (Value p : parts) {
    check(p);
    ids.push_back(p.id);
  }
  const Tensor& first = val(ids[0]);
  const std::size_t brows = first.rows(), n = first.cols(),
                    f = parts.size();
  for (std::size_t j = 1; j < f; ++j)
    if (!val(ids[j]).same_shape(first))
      throw ShapeError("interleave_rows shape mismatch: " +
                       val(ids[j]).shape_str() + " vs " + first.shape_str());
  Tensor out({brows * f, n});
  for (std::size_t b = 0; b < brows; ++b)
    for (std::size_t j = 0; j < f; ++j)
      for (std::size_t c = 0; c < n; ++c)
        out.at(b * f + j, c) = val(ids[j]).at(b, c);
  return push(std::move(out), ids,
              [ids, brows, n, f](const Tensor& g, Tape& t, Gradients& gr) {
                for (std::size_t j = 0; j < f; ++j) {
                  if (!t.nodes_[ids[j]].requires_grad) continue;
                  Tensor dp({brows, n});
                  for (std::size_t b = 0; b < brows; ++b)
                    for (std::size_t c = 0; c < n; ++c)
                      dp.at(b, c) = g.at(b * f + j, c);
                  accumulate(gr, ids[j], std::move(dp));
                }
              });
}

Tape::Value Tape::concat_cols(const std::vector<Value>& parts) {
  if (parts.empty()) throw ContractError("concat_cols: no parts");
  std::vector<std::size_t> ids;
  std::size_t total = 0;
  for (Value p : parts) {
    check(p);
    ids.push_back(p.id);
    total += val(p.id).cols();
  }
  const std::size_t m = val(ids[0]).rows();
  for (std::size_t id : ids)
    if (val(id).rows() != m)
      throw ShapeError("concat_cols row mismatch: " + val(id).shape_str());
  Tensor out({m, total});
  std::size_t off = 0;
  for (std::size_t id : ids) {
    const Tensor& P = val(id);
    for (std::size_t r = 0; r < m; ++r)
      for (std::size_t c = 0; c < P.cols(); ++c)
        out.at(r, off + c) = P.at(r, c);
    off += P.cols();
  }
  return push(std::move(out), ids,
              [ids](const Tensor& g, Tape& t, Gradients& gr) {
                std::size_t off = 0;
                for (std::size_t id : ids) {
                  const Tensor& P = t.val(id);
                  if (t.nodes_[id].requires_grad) {
                    Tensor dp({P.rows(), P.cols()});
                    for (std::size_t r = 0; r < P.rows(); ++r)
                      for (std::size_t c = 0; c < P.cols(); ++c)
                        dp.at(r, c) = g.at(r, off + c);
                    accumulate(gr, id, std::move(dp));
                  }
                  off += P.cols();
                }
              });
}

Tape::Value Tape::stack_rows(const std::vector<Value>& rows) {
  if (rows.empty()) throw ContractError("stack_rows: no rows");
  std::vector<std::size_t> ids;
  for (Value r : rows) {
    check(r);
    ids.push_back(r.id);
  }
  const std::size_t n = val(ids[0]).cols();
  for (std::size_t id : ids)
    if (val(id).rank() != 2 || val(id).rows() != 1 || val(id).cols() != n)
      throw ShapeError("stack_rows needs 1x" + std::to_string(n) +
                       " rows, got " + val(id).shape_str());
  Tensor out({ids.size(), n});
  for (std::size_t r = 0; r < ids.size(); ++r)
    for (std::size_t c = 0; c < n; ++c) out.at(r, c) = val(ids[r]).at(0, c);
  return push(std::move(out), ids,
              [ids, n](const Tensor& g, Tape& t, Gradients& gr) {
                for (std::size_t r = 0; r < ids.size(); ++r) {
                  if (!t.nodes_[ids[r]].requires_grad) continue;
                  Tensor dr({1, n});
                  for (std::size_t c = 0; c < n; ++c) dr.at(0, c) = g.at(r, c);
                  accumulate(gr, ids[r], std::move(dr));
                }
              });
}

Tape::Value Tape::pack_scalars(const std::vector<Value>& scalars) {
  if (scalars.empty()) throw ContractError("pack_scalars: no scalars");
  std::vector<std::size_t> ids;
  for (Value s : scalars) {
    check(s);
    if (val(s.id).size() != 1)
      throw ShapeError("pack_scalars needs 1x1 inputs, got " +
                       val(s.id).shape_str());
    ids.push_back(s.id);
  }
  Tensor out({1, ids.size()});
  for (std::size_t i = 0; i < ids.size(); ++i) out.at(0, i) = val(ids[i]).at(0);
  return push(std::move(out), ids,
              [ids](const Tensor& g, Tape& t, Gradients& gr) {
                for (std::size_t i = 0; i < ids.size(); ++i)
                  if (t.nodes_[ids[i]].requires_grad)
                    accumulate(gr, ids[i], Tensor::scalar(g.at(0, i)));
              });
}

Tape::Value Tape::gather_rows(
    Value table, std::shared_ptr<const std::vector<std::size_t>> rows) {
  check(table);
  const Tensor& T = val(table.id);
  if (T.rank() != 2)
    throw ShapeError("gather_rows needs rank-2 table, got " + T.shape_str());
  if (!rows || rows->empty()) throw ContractError("gather_rows: no indices");
  for (std::size_t r : *rows)
    if (r >= T.rows())
      throw ContractError("gather_rows index " + std::to_string(r) +
                          " out of range for table " + T.shape_str());
  Tensor out({rows->size(), T.cols()});
  for (std::size_t i = 0; i < rows->size(); ++i)
    for (std::size_t c = 0; c < T.cols(); ++c)
      out.at(i, c) = T.at((*rows)[i], c);
  const std::size_t tid = table.id;
  return push(std::move(out), {tid},
              [tid, rows](const Tensor& g, Tape& t, Gradients& gr) {
                const Tensor& T = t.val(tid);
                Tensor dt({T.rows(), T.cols()});
                for (std::size_t i = 0; i < rows->size(); ++i)
                  for (std::size_t c = 0; c < T.cols(); ++c)
                    dt.at((*rows)[i], c) += g.at(i, c);
                accumulate(gr, tid, std::move(dt));
              });
}

Tape::Value Tape::slice_rows(Value x, std::size_t start, std::size_t len) {
  check(x);
  const Tensor& X = val(x.id);
  if (X.rank() != 2 || len == 0 || start + len > X.rows())
    throw ShapeError("slice_rows [" + std::to_string(start) + "," +
                     std::to_string(start + len) + ") out of range for " +
                     X.shape_str());
  Tensor out({len, X.cols()});
  for (std::size_t r = 0; r < len; ++r)
    for (std::size_t c = 0; c < X.cols(); ++c)
      out.at(r, c) = X.at(start + r, c);
  const std::size_t xid = x.id;
  return push(std::move(out), {xid},
              [xid, start, len](const Tensor& g, Tape& t, Gradients& gr) {
                const Tensor& X = t.val(xid);
                Tensor dx({X.rows(), X.cols()});
                for (std::size_t r = 0; r < len; ++r)
                  for (std::size_t c = 0; c < X.cols(); ++c)
                    dx.at(start + r, c) = g.at(r, c);
                accumulate(gr, xid, std::move(dx));
              });
}

Tape::Value Tape::outer_add(Value u, Value v) {
  check(u);
  check(v);
  const Tensor& U = val(u.id);
  const Tensor& V = val(v.id);
  if (U.rank() != 2 || U.cols() != 1 || V.rank() != 2 || V.cols() != 1)
    throw ShapeError("outer_add needs column vectors, got " + U.shape_str() +
                     " and " + V.shape_str());
  const std::size_t m = U.rows(), n = V.rows();
  Tensor out({m, n});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out.at(i, j) = U.at(i, 0) + V.at(j, 0);
  const std::size_t uid = u.id, vid = v.id;
  return push(std::move(out), {uid, vid},
              [uid, vid, m, n](const Tensor& g, Tape& t, Gradients& gr) {
                if (t.nodes_[uid].requires_grad) {
                  Tensor du({m, 1});
                  for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < n; ++j)
                      du.at(i, 0) += g.at(i, j);
                  accumulate(gr, uid, std::move(du));
                }
                if (t.nodes_[vid].requires_grad) {
                  Tensor dv({n, 1});
                  for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < n; ++j)
                      dv.at(j, 0) += g.at(i, j);
                  accumulate(gr, vid, std::move(dv));
                }
              });
}

Tape::Value Tape::neighbor_sum(
    Value weights, Value z,
    std::shared_ptr<const std::vector<std::uint8_t>> mask) {
  check(weights);
  check(z);
  const Tensor& W = val(weights.id);
  const Tensor& Z = val(z.id);
  if (W.rank() != 2 || Z.rank() != 2 || W.rows() != W.cols() ||
      W.cols() != Z.rows())
    throw ShapeError("neighbor_sum shape mismatch: " + W.shape_str() + " x " +
                     Z.shape_str());
  const std::size_t n = W.rows(), d = Z.cols();
  if (!mask || mask->size() != n * n)
    throw ShapeError("neighbor_sum mask size does not match " + W.shape_str());
  Tensor out({n, d});
  std::vector<std::size_t> neighbors;
  std::vector<double> terms;
  for (std::size_t i = 0; i < n; ++i) {
    neighbors.clear();
    for (std::size_t j = 0; j < n; ++j)
      if ((*mask)[i * n + j]) neighbors.push_back(j);
    for (std::size_t c = 0; c < d; ++c) {
      if (neighbors.size() == 1) {
        out.at(i, c) = W.at(i, neighbors[0]) * Z.at(neighbors[0], c);
        continue;
      }
      terms.clear();
      for (const std::size_t j : neighbors)
        terms.push_back(W.at(i, j) * Z.at(j, c));
      std::sort(terms.begin(), terms.end());
      double acc = 0.0;
      for (const double t : terms) acc += t;
      out.at(i, c) = acc;
    }
  }
  const std::size_t wid = weights.id, zid = z.id;
  return push(std::move(out), {wid, zid},
              [wid, zid, mask](const Tensor& g, Tape& t, Gradients& gr) {
                const Tensor& W = t.val(wid);
                const Tensor& Z = t.val(zid);
                const std::size_t n = W.rows(), d = Z.cols();
                if (t.nodes_[wid].requires_grad) {
                  Tensor dw({n, n});
                  for (std::size_t i = 0; i < n; ++i)
                    for (std::size_t j = 0; j < n; ++j) {
                      if (!(*mask)[i * n + j]) continue;
                      double acc = 0.0;
                      for (std::size_t c = 0; c < d; ++c)
                        acc += g.at(i, c) * Z.at(j, c);
                      dw.at(i, j) = acc;
                    }
                  accumulate(gr, wid, std::move(dw));
                }
                if (t.nodes_[zid].requires_grad) {
                  Tensor dz({n, d});
                  for (std::size_t i = 0; i < n; ++i)
                    for (std::size_t j = 0; j < n; ++j) {
                      if (!(*mask)[i * n + j]) continue;
                      const double w = W.at(i, j);
                      for (std::size_t c = 0; c < d; ++c)
                        dz.at(j, c) += w * g.at(i, c);
                    }
                  accumulate(gr, zid, std::move(dz));
                }
              });
}

Tape::Value Tape::reduce_mean_all(Value x) {
  check(x);
  const Tensor& X = val(x.id);
  double acc = 0.0;
  for (double v : X.data()) acc += v;
  const double inv = 1.0 / static_cast<double>(X.size());
  const std::size_t xid = x.id;
  return push(Tensor::scalar(acc * inv), {xid},
              [xid, inv](const Tensor& g, Tape& t, Gradients& gr) {
                const Tensor& X = t.val(xid);
                accumulate(gr, xid, Tensor::full(X.shape(), g.at(0) * inv));
              });
}

Tape::Value Tape::reduce_sum_all(Value x) {
  check(x);
  const Tensor& X = val(x.id);
  double acc = 0.0;
  for (double v : X.data()) acc += v;
  const std::size_t xid = x.id;
  return push(Tensor::scalar(acc), {xid},
              [xid](const Tensor& g, Tape& t, Gradients& gr) {
                const Tensor& X = t.val(xid);
                accumulate(gr, xid, Tensor::full(X.shape(), g.at(0)));
              });
}

Tape::Value Tape::reduce_max_all(Value x) {
  check(x);
  const Tensor& X = val(x.id);
  std::size_t arg = 0;
  for (std::size_t i = 1; i < X.size(); ++i)
    if (X.at(i) > X.at(arg)) arg = i;
  const std::size_t xid = x.id;
  return push(Tensor::scalar(X.at(arg)), {xid},
              [xid, arg](const Tensor& g, Tape& t, Gradients& gr) {
                const Tensor& X = t.val(xid);
                Tensor dx(X.shape());
                dx.at(arg) = g.at(0);
                accumulate(gr, xid, std::move(dx));
              });
}

Tape::Value Tape::l2norm_rows(Value x) {
  check(x);
  const Tensor& X = val(x.id);
  if (X.rank() != 2)
    throw ShapeError("l2norm_rows needs rank-2, got " + X.shape_str());
  Tensor out({X.rows(), 1});
  for (std::size_t r = 0; r < X.rows(); ++r) {
    double acc = 0.0;
    for (std::size_t c = 0; c < X.cols(); ++c) acc += X.at(r, c) * X.at(r, c);
    out.at(r, 0) = std::sqrt(acc);
  }
  const std::size_t xid = x.id;
  const std::size_t self = nodes_.size();
  return push(std::move(out), {xid},
              [xid, self](const Tensor& g, Tape& t, Gradients& gr) {
                const Tensor& X = t.val(xid);
                const Tensor& Y = t.val(self);
                Tensor dx({X.rows(), X.cols()});
                for (std::size_t r = 0; r < X.rows(); ++r) {
                  const double denom = std::max(Y.at(r, 0), kDivFloor);
                  const double s = g.at(r, 0) / denom;
                  for (std::size_t c = 0; c < X.cols(); ++c)
                    dx.at(r, c) = s * X.at(r, c);
                }
                accumulate(gr, xid, std::move(dx));
              });
}

Tape::Value Tape::div(Value a, Value b) {
  check(a);
  check(b);
  const Tensor& A = val(a.id);
  const Tensor& B = val(b.id);
  if (!A.same_shape(B))
    throw ShapeError("div shape mismatch: " + A.shape_str() + " vs " +
                     B.shape_str());
  Tensor out = A;
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double bv = B.at(i);
    const double guarded =
        std::abs(bv) < kDivFloor ? (bv < 0.0 ? -kDivFloor : kDivFloor) : bv;
    out.at(i) /= guarded;
  }
  const std::size_t aid = a.id, bid = b.id;
  return push(std::move(out), {aid, bid},
              [aid, bid](const Tensor& g, Tape& t, Gradients& gr) {
                const Tensor& A = t.val(aid);
                const Tensor& B = t.val(bid);
                const bool need_a = t.nodes_[aid].requires_grad;
                const bool need_b = t.nodes_[bid].requires_grad;
                Tensor da = need_a ? Tensor(A.shape()) : Tensor();
                Tensor db = need_b ? Tensor(B.shape()) : Tensor();
                for (std::size_t i = 0; i < A.size(); ++i) {
                  const double bv = B.at(i);
                  const bool floored = std::abs(bv) < kDivFloor;
                  const double guarded =
                      floored ? (bv < 0.0 ? -kDivFloor : kDivFloor) : bv;
                  if (need_a) da.at(i) = g.at(i) / guarded;
                  if (need_b)
                    db.at(i) = floored
                                   ? 0.0
                                   : -g.at(i) * A.at(i) / (guarded * guarded);
                }
                if (need_a) accumulate(gr, aid, std::move(da));
                if (need_b) accumulate(gr, bid, std::move(db));
              });
}

Tape::Value Tape::bce_loss(Value p, std::vector<double> y) {
  check(p);
  const Tensor& P = val(p.id);
  if (P.size() != y.size())
    throw ShapeError("bce_loss length mismatch: " + P.shape_str() + " vs " +
                     std::to_string(y.size()) + " labels");
  const std::size_t n = y.size();
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double pc = std::clamp(P.at(i), kBceEps, 1.0 - kBceEps);
    acc -= y[i] * std::log(pc) + (1.0 - y[i]) * std::log(1.0 - pc);
  }
  const std::size_t pid = p.id;
  auto labels = std::make_shared<std::vector<double>>(std::move(y));
  return push(Tensor::scalar(acc / static_cast<double>(n)), {pid},
              [pid, labels, n](const Tensor& g, Tape& t, Gradients& gr) {
                const Tensor& P = t.val(pid);
                Tensor dp(P.shape());
                const double s = g.at(0) / static_cast<double>(n);
                for (std::size_t i = 0; i < n; ++i) {
                  const double raw = P.at(i);
                  if (raw < kBceEps || raw > 1.0 - kBceEps) continue;  // clamped
                  dp.at(i) = s * (raw - (*labels)[i]) / (raw * (1.0 - raw));
                }
                accumulate(gr, pid, std::move(dp));
              });
}

Tape::Gradients Tape::backward(Value scalar_loss) {
  check(scalar_loss);
  const Tensor& L = val(scalar_loss.id);
  if (L.size() != 1)
    throw ContractError("backward needs a scalar, got " + L.shape_str());
  Gradients grads;
  grads.g_.resize(nodes_.size());
  grads.g_[scalar_loss.id] = Tensor::scalar(1.0);
  for (std::size_t i = scalar_loss.id + 1; i-- > 0;) {
    const Node& node = nodes_[i];
    if (!node.back || !grads.g_[i].has_value()) continue;
    node.back(*grads.g_[i], *this, grads);
  }
  return grads;
}

}  // namespace spqi
