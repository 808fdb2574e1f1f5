#include "spqi/model.hpp"

#include <algorithm>
#include <cmath>

#include "spqi/errors.hpp"
#include "spqi/rng.hpp"

namespace spqi {

const char* to_string(Variant v) {
  switch (v) {
    case Variant::text_only:
      return "text-only";
    case Variant::mlp_concat:
      return "mlp-concat";
    case Variant::mlp_moe:
      return "mlp-moe";
    case Variant::spqi_concat:
      return "spqi-concat";
    case Variant::spqi_moe:
      return "spqi-moe";
  }
  return "spqi-moe";
}

Variant variant_from_string(const std::string& s) {
  if (s == "text-only") return Variant::text_only;
  if (s == "mlp-concat") return Variant::mlp_concat;
  if (s == "mlp-moe") return Variant::mlp_moe;
  if (s == "spqi-concat") return Variant::spqi_concat;
  if (s == "spqi-moe") return Variant::spqi_moe;
  throw ContractError("unknown variant '" + s + "'");
}

const char* to_string(MoeNorm n) {
  return n == MoeNorm::softmax ? "softmax" : "raw_ratio";
}

MoeNorm moe_norm_from_string(const std::string& s) {
  if (s == "softmax") return MoeNorm::softmax;
  if (s == "raw_ratio") return MoeNorm::raw_ratio;
  throw ContractError("unknown moe_norm '" + s + "'");
}

const char* to_string(LayerKind k) {
  return k == LayerKind::gat ? "gat" : "gcn";
}

LayerKind layer_kind_from_string(const std::string& s) {
  if (s == "gat") return LayerKind::gat;
  if (s == "gcn") return LayerKind::gcn;
  throw ContractError("unknown layer_kind '" + s + "'");
}

void ParamStore::add(std::string name, Tensor t, bool pretrained) {
  if (values_.count(name)) throw ContractError("duplicate param " + name);
  names_.push_back(name);
  if (pretrained) pretrained_.insert(name);
  values_.emplace(std::move(name), std::move(t));
}

Tensor& ParamStore::at(const std::string& name) {
  auto it = values_.find(name);
  if (it == values_.end()) throw ContractError("unknown param " + name);
  return it->second;
}

const Tensor& ParamStore::at(const std::string& name) const {
  auto it = values_.find(name);
  if (it == values_.end()) throw ContractError("unknown param " + name);
  return it->second;
}

std::vector<std::string> ParamStore::update_set(bool include_pretrained) const {
  std::vector<std::string> out;
  for (const std::string& n : names_)
    if (include_pretrained || !is_pretrained(n)) out.push_back(n);
  return out;
}

namespace {

Tensor glorot(std::size_t rows, std::size_t cols, CounterRng& rng) {
  Tensor t({rows, cols});
  const double span = std::sqrt(6.0 / static_cast<double>(rows + cols));
  for (std::size_t i = 0; i < t.size(); ++i)
    t.at(i) = rng.next_range(-span, span);
  return t;
}

bool uses_moe_gate(Variant v) {
  return v == Variant::mlp_moe || v == Variant::spqi_moe;
}

bool uses_graph(Variant v) {
  return v == Variant::spqi_concat || v == Variant::spqi_moe;
}

bool uses_projections(Variant v) { return v != Variant::text_only; }

std::vector<std::size_t> active_types(const FeatureMask& mask) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < kNumFeatureTypes; ++i)
    if (mask[i]) out.push_back(i);
  return out;
}

}  // namespace

FeatureScaling compute_feature_scaling(const Dataset& ds,
                                       const FeatureCache& cache,
                                       const BehavioralEmbeddings& emb,
                                       std::span<const std::size_t> indices) {
  FeatureScaling s;
  if (indices.empty()) return s;
  std::array<double, 6> mean{}, var{};
  for (const std::size_t qi : indices) {
    const Question& q = ds.questions[qi];
    const Tensor f = behavioral_features(q.product, cache.history[qi], emb);
    for (std::size_t k = 0; k < 6; ++k) mean[k] += f.at(0, k);
  }
  const double n = static_cast<double>(indices.size());
  for (std::size_t k = 0; k < 6; ++k) mean[k] /= n;
  double text_var = 0.0;
  std::size_t text_n = 0;
  for (const std::size_t qi : indices) {
    const Question& q = ds.questions[qi];
    const Tensor f = behavioral_features(q.product, cache.history[qi], emb);
    for (std::size_t k = 0; k < 6; ++k) {
      const double d = f.at(0, k) - mean[k];
      var[k] += d * d;
    }
    for (const Tensor* t : {&cache.text_q[qi], &cache.text_a[qi]}) {
      for (const double v : t->data()) {
        text_var += v * v;
        ++text_n;
      }
    }
  }
  for (std::size_t k = 0; k < 6; ++k) {
    s.behavior_mean[k] = mean[k];
    s.behavior_sd[k] = std::max(std::sqrt(var[k] / n), 1e-6);
  }
  s.text_sd = std::max(std::sqrt(text_var / static_cast<double>(text_n)), 1e-6);
  return s;
}

Model init_model(const ModelConfig& cfg, const ProductCatalog& catalog,
                 const BehavioralEmbeddings& emb,
                 const FeatureScaling& scaling) {
  if (mask_count(cfg.mask) == 0)
    throw ContractError("model feature mask must be non-empty");
  if (cfg.variant == Variant::text_only) {
    if (!cfg.mask[0])
      throw ContractError("text-only variant needs the text_q feature");
    for (std::size_t i = 2; i < kNumFeatureTypes; ++i)
      if (cfg.mask[i])
        throw ContractError("text-only variant accepts text features only");
  }

  Model m;
  m.cfg = cfg;
  const ModelDims& d = cfg.dims;
  CounterRng rng(cfg.seed, 0x90de1);

  if (cfg.variant == Variant::text_only) {
    const std::size_t in = cfg.mask[1] ? 2 * d.text_dim : d.text_dim;
    m.params.add("textmlp.w1", glorot(in, d.mlp_hidden, rng));
    m.params.add("textmlp.b1", Tensor({1, d.mlp_hidden}));
    m.params.add("textmlp.w2", glorot(d.mlp_hidden, 1, rng));
    m.params.add("textmlp.b2", Tensor({1, 1}));
    return m;
  }

  const std::array<std::size_t, kNumFeatureTypes> in_dims = {
      d.text_dim, d.text_dim, d.cat_dim, d.cat_dim, d.cat_dim, 6};
  const std::vector<std::size_t> active = active_types(cfg.mask);

  for (std::size_t j : active) {
    const std::string base = std::string("moe.ffn.") + kFeatureTypeNames[j];
    Tensor w = glorot(in_dims[j], d.node_dim, rng);
    Tensor b({1, d.node_dim});
    if (j == 5) {
      // Fold the train-split standardization of the six behavioral stats into
      // the initial affine map: W'x + b' == W (x - mean) / sd + b.
      for (std::size_t i = 0; i < 6; ++i)
        for (std::size_t c = 0; c < d.node_dim; ++c) {
          w.at(i, c) /= scaling.behavior_sd[i];
          b.at(0, c) -= w.at(i, c) * scaling.behavior_mean[i];
        }
    } else if (j == 0 || j == 1) {
      for (std::size_t i = 0; i < w.size(); ++i) w.at(i) /= scaling.text_sd;
    }
    m.params.add(base + ".w", std::move(w));
    m.params.add(base + ".b", std::move(b));
  }
  if (uses_moe_gate(cfg.variant)) {
    m.params.add("moe.gate.w", glorot(d.node_dim, d.gate_dim, rng));
    m.params.add("moe.gate.w2", glorot(d.node_dim, d.gate_dim, rng));
    m.params.add("moe.gate.c1", Tensor({1, d.gate_dim}));
    m.params.add("moe.gate.c2", Tensor({1, d.node_dim}));
  }
  if (uses_graph(cfg.variant)) {
    for (std::size_t l = 0; l < d.gat_layers; ++l) {
      const GatLayerParams layer =
          init_gat_layer(d.node_dim, d.node_dim, d.heads, cfg.leaky_slope,
                         cfg.seed, 0x9a70000ULL + l);
      for (std::size_t k = 0; k < layer.head_w.size(); ++k) {
        const std::string base =
            "gat." + std::to_string(l) + ".h" + std::to_string(k);
        m.params.add(base + ".w", layer.head_w[k]);
        m.params.add(base + ".a", layer.head_a[k]);
      }
    }
    m.params.add("head.theta", glorot(d.node_dim, 1, rng));
  } else {
    const std::size_t in =
        cfg.variant == Variant::mlp_concat ? active.size() * d.node_dim
                                           : d.node_dim;
    m.params.add("mlp.w1", glorot(in, d.mlp_hidden, rng));
    m.params.add("mlp.b1", Tensor({1, d.mlp_hidden}));
    m.params.add("mlp.w2", glorot(d.mlp_hidden, d.mlp_hidden, rng));
    m.params.add("mlp.b2", Tensor({1, d.mlp_hidden}));
    m.params.add("mlp.theta", glorot(d.mlp_hidden, 1, rng));
  }

  if (cfg.mask[5]) {  // behavior
    if (emb.dim != d.skip_dim)
      throw ContractError("skip-gram dim does not match model skip_dim");
    m.params.add("skipgram.product", emb.product_vectors, /*pretrained=*/true);
    m.params.add("skipgram.user", emb.user_vectors, /*pretrained=*/true);
    m.skip_index = emb.products;
  }
  if (cfg.mask[2] || cfg.mask[3] || cfg.mask[4]) {
    std::vector<std::int64_t> product_ids, category_ids;
    for (const auto& [id, rec] : catalog.products()) product_ids.push_back(id);
    for (const auto& [id, rec] : catalog.categories())
      category_ids.push_back(id);
    if (cfg.mask[2]) {
      CategoricalTable t = init_categorical_table(product_ids, d.cat_dim,
                                                  cfg.seed, 0x7ab1e0);
      m.params.add("tables.product", std::move(t.rows));
      std::vector<ProductId> ids(product_ids.begin(), product_ids.end());
      m.product_index = IdIndex<ProductId>(std::move(ids));
    }
    if (cfg.mask[3]) {
      CategoricalTable t = init_categorical_table(category_ids, d.cat_dim,
                                                  cfg.seed, 0x7ab1e1);
      m.params.add("tables.category", std::move(t.rows));
      std::vector<CategoryId> ids(category_ids.begin(), category_ids.end());
      m.category_index = IdIndex<CategoryId>(std::move(ids));
    }
    if (cfg.mask[4]) {
      CategoricalTable t = init_categorical_table(category_ids, d.cat_dim,
                                                  cfg.seed, 0x7ab1e2);
      m.params.add("tables.parent", std::move(t.rows));
      std::vector<CategoryId> ids(category_ids.begin(), category_ids.end());
      m.parent_index = IdIndex<CategoryId>(std::move(ids));
    }
  }
  return m;
}

FeatureCache build_feature_cache(const Dataset& ds,
                                 const TextEncoder& encoder) {
  FeatureCache cache;
  cache.text_q.reserve(ds.questions.size());
  cache.text_a.reserve(ds.questions.size());
  cache.history.reserve(ds.questions.size());
  for (const Question& q : ds.questions) {
    cache.text_q.push_back(encoder.encode(q.question_tokens));
    cache.text_a.push_back(encoder.encode(q.answer_tokens));
    cache.history.push_back(
        history_window(ds.user_purchases(q.user), q.time));
  }
  return cache;
}

TapeParams::TapeParams(Tape& tape, const ParamStore& store, bool trainable) {
  for (const std::string& name : store.names())
    values_.emplace(name, trainable ? tape.input(store.at(name))
                                    : tape.constant(store.at(name)));
}

Tape::Value TapeParams::at(const std::string& name) const {
  auto it = values_.find(name);
  if (it == values_.end())
    throw ContractError("parameter " + name + " not on tape");
  return it->second;
}

Tape::Value behavior_row(Tape& tape, Tape::Value skip_table,
                         std::size_t queried_row,
                         const std::vector<std::size_t>& history_rows) {
  if (history_rows.empty()) return tape.constant(Tensor({1, 6}));
  auto qrows = std::make_shared<std::vector<std::size_t>>(
      std::vector<std::size_t>{queried_row});
  auto hrows = std::make_shared<std::vector<std::size_t>>(history_rows);
  const Tape::Value qv = tape.gather_rows(skip_table, qrows);
  const Tape::Value hm = tape.gather_rows(skip_table, hrows);
  const Tape::Value dots = tape.matmul(hm, tape.transpose(qv));
  const Tape::Value qn = tape.l2norm_rows(qv);
  const Tape::Value hn = tape.l2norm_rows(hm);
  const Tape::Value coss = tape.div(dots, tape.mul_scalar_value(hn, qn));
  return tape.pack_scalars({tape.reduce_mean_all(dots),
                            tape.reduce_max_all(dots),
                            tape.reduce_sum_all(dots),
                            tape.reduce_mean_all(coss),
                            tape.reduce_max_all(coss),
                            tape.reduce_sum_all(coss)});
}

namespace {

Tensor stack_cached_rows(const std::vector<Tensor>& rows,
                         const std::vector<std::size_t>& question_indices) {
  const std::size_t n = question_indices.size();
  const std::size_t dim = rows[question_indices[0]].cols();
  Tensor out({n, dim});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < dim; ++c)
      out.at(i, c) = rows[question_indices[i]].at(0, c);
  return out;
}

}  // namespace

Tape::Value model_forward(Tape& tape, const Model& model,
                          const TapeParams& params, const Dataset& ds,
                          const FeatureCache& cache, const BatchGraph& batch) {
  const ModelConfig& cfg = model.cfg;
  const ModelDims& d = cfg.dims;

  if (cfg.variant == Variant::text_only) {
    Tensor x = stack_cached_rows(cache.text_q, batch.question_indices);
    if (cfg.mask[1]) {
      Tensor xa = stack_cached_rows(cache.text_a, batch.question_indices);
      Tensor both({batch.n, 2 * d.text_dim});
      for (std::size_t r = 0; r < batch.n; ++r) {
        for (std::size_t c = 0; c < d.text_dim; ++c) {
          both.at(r, c) = x.at(r, c);
          both.at(r, d.text_dim + c) = xa.at(r, c);
        }
      }
      x = std::move(both);
    }
    const Tape::Value h1 = tape.activation(
        Activation::elu,
        tape.add_row_broadcast(
            tape.matmul(tape.constant(std::move(x)), params.at("textmlp.w1")),
            params.at("textmlp.b1")));
    const Tape::Value logits = tape.add_row_broadcast(
        tape.matmul(h1, params.at("textmlp.w2")), params.at("textmlp.b2"));
    return tape.activation(Activation::sigmoid, logits);
  }

  // Assemble the active feature inputs in bundle order.
  std::vector<Tape::Value> feats, ffn_w, ffn_b;
  for (std::size_t j = 0; j < kNumFeatureTypes; ++j) {
    if (!cfg.mask[j]) continue;
    Tape::Value x;
    switch (j) {
      case 0:
        x = tape.constant(
            stack_cached_rows(cache.text_q, batch.question_indices));
        break;
      case 1:
        x = tape.constant(
            stack_cached_rows(cache.text_a, batch.question_indices));
        break;
      case 2: {
        auto rows = std::make_shared<std::vector<std::size_t>>();
        for (std::size_t qi : batch.question_indices)
          rows->push_back(model.product_index.row_of(ds.questions[qi].product));
        x = tape.gather_rows(params.at("tables.product"), rows);
        break;
      }
      case 3: {
        auto rows = std::make_shared<std::vector<std::size_t>>();
        for (std::size_t qi : batch.question_indices)
          rows->push_back(model.category_index.row_of(
              ds.catalog.category_of(ds.questions[qi].product)));
        x = tape.gather_rows(params.at("tables.category"), rows);
        break;
      }
      case 4: {
        auto rows = std::make_shared<std::vector<std::size_t>>();
        for (std::size_t qi : batch.question_indices)
          rows->push_back(model.parent_index.row_of(ds.catalog.parent_of(
              ds.catalog.category_of(ds.questions[qi].product))));
        x = tape.gather_rows(params.at("tables.parent"), rows);
        break;
      }
      case 5: {
        const Tape::Value table = params.at("skipgram.product");
        std::vector<Tape::Value> rows;
        rows.reserve(batch.n);
        for (std::size_t qi : batch.question_indices) {
          const std::size_t qrow =
              model.skip_index.row_of(ds.questions[qi].product);
          std::vector<std::size_t> hist;
          hist.reserve(cache.history[qi].size());
          for (ProductId p : cache.history[qi])
            hist.push_back(model.skip_index.row_of(p));
          rows.push_back(behavior_row(tape, table, qrow, hist));
        }
        x = tape.stack_rows(rows);
        break;
      }
    }
    feats.push_back(x);
    const std::string base = std::string("moe.ffn.") + kFeatureTypeNames[j];
    ffn_w.push_back(params.at(base + ".w"));
    ffn_b.push_back(params.at(base + ".b"));
  }

  const std::size_t f_active = feats.size();
  const Tape::Value blocks = project_features(tape, feats, ffn_w, ffn_b);

  Tape::Value h;
  if (cfg.variant == Variant::mlp_concat) {
    h = tape.reshape(blocks, {batch.n, f_active * d.node_dim});
  } else if (uses_moe_gate(cfg.variant)) {
    const MoeGateValues gate{params.at("moe.gate.w"), params.at("moe.gate.w2"),
                             params.at("moe.gate.c1"),
                             params.at("moe.gate.c2")};
    h = moe_mix(tape, blocks, f_active, gate, cfg.moe_norm).h;
  } else {  // spqi_concat: equal-weight combination of the projections
    h = tape.scale(tape.block_colsum(blocks, f_active),
                   1.0 / static_cast<double>(f_active));
  }

  if (uses_graph(cfg.variant)) {
    for (std::size_t l = 0; l < d.gat_layers; ++l) {
      std::vector<Tape::Value> ws, as;
      for (std::size_t k = 0; k < d.heads; ++k) {
        const std::string base =
            "gat." + std::to_string(l) + ".h" + std::to_string(k);
        ws.push_back(params.at(base + ".w"));
        as.push_back(params.at(base + ".a"));
      }
      h = cfg.layer_kind == LayerKind::gat
              ? gat_layer(tape, h, batch.adjacency, ws, as, cfg.leaky_slope)
              : gcn_layer(tape, h, batch.adjacency, ws);
    }
    return tape.activation(Activation::sigmoid,
                           tape.matmul(h, params.at("head.theta")));
  }

  const Tape::Value h1 = tape.activation(
      Activation::elu,
      tape.add_row_broadcast(tape.matmul(h, params.at("mlp.w1")),
                             params.at("mlp.b1")));
  const Tape::Value h2 = tape.activation(
      Activation::elu,
      tape.add_row_broadcast(tape.matmul(h1, params.at("mlp.w2")),
                             params.at("mlp.b2")));
  return tape.activation(Activation::sigmoid,
                         tape.matmul(h2, params.at("mlp.theta")));
}

}  // namespace spqi
