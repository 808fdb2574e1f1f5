#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "spqi/catalog.hpp"
#include "spqi/embeddings.hpp"
#include "spqi/gat.hpp"
#include "spqi/graph.hpp"
#include "spqi/moe.hpp"
#include "spqi/tape.hpp"

namespace spqi {

enum class Variant { text_only, mlp_concat, mlp_moe, spqi_concat, spqi_moe };

const char* to_string(Variant v);
Variant variant_from_string(const std::string& s);
const char* to_string(MoeNorm n);
MoeNorm moe_norm_from_string(const std::string& s);
const char* to_string(LayerKind k);
LayerKind layer_kind_from_string(const std::string& s);

struct ModelDims {
  std::size_t text_dim = 32;
  std::size_t cat_dim = 16;
  std::size_t skip_dim = 50;
  std::size_t node_dim = 64;  // common dimensionality n
  std::size_t gate_dim = 16;  // gate hidden i, defaults to n/4
  std::size_t gat_layers = 4;
  std::size_t heads = 1;
  std::size_t mlp_hidden = 64;
};

struct ModelConfig {
  Variant variant = Variant::spqi_moe;
  FeatureMask mask = full_feature_mask();
  ModelDims dims;
  MoeNorm moe_norm = MoeNorm::softmax;
  LayerKind layer_kind = LayerKind::gat;
  double leaky_slope = 0.2;
  std::uint64_t seed = 1;
  std::uint64_t text_seed = 101;
};

/// Named trainable tensors in fixed insertion order, partitioned into
/// pretrained and randomly-initialized sets for staged training.
class ParamStore {
 public:
  void add(std::string name, Tensor t, bool pretrained = false);
  Tensor& at(const std::string& name);
  const Tensor& at(const std::string& name) const;
  bool has(const std::string& name) const { return values_.count(name) > 0; }
  const std::vector<std::string>& names() const { return names_; }
  bool is_pretrained(const std::string& name) const {
    return pretrained_.count(name) > 0;
  }
  std::vector<std::string> update_set(bool include_pretrained) const;

 private:
  std::vector<std::string> names_;
  std::map<std::string, Tensor> values_;
  std::set<std::string> pretrained_;
};

/// A variant's trainable state plus the id maps needed to featurize
/// questions. Forward passes over shared immutable params may run
/// concurrently on distinct tapes; updates are exclusive.
struct Model {
  ModelConfig cfg;
  ParamStore params;
  IdIndex<ProductId> product_index;    // categorical product table rows
  IdIndex<CategoryId> category_index;  // leaf category rows
  IdIndex<CategoryId> parent_index;    // parent category rows
  IdIndex<ProductId> skip_index;       // skip-gram product rows

  HashedBagEncoder make_encoder() const {
    return HashedBagEncoder(cfg.dims.text_dim, cfg.text_seed);
  }
};

/// Train-split feature statistics folded into the FFN initializations so the
/// projections start well-conditioned regardless of raw feature scales. The
/// forward pass is unchanged (still affine + ELU); this only shapes the
/// starting point.
struct FeatureScaling {
  std::array<double, 6> behavior_mean{0, 0, 0, 0, 0, 0};
  std::array<double, 6> behavior_sd{1, 1, 1, 1, 1, 1};
  double text_sd = 1.0;
};

Model init_model(const ModelConfig& cfg, const ProductCatalog& catalog,
                 const BehavioralEmbeddings& emb,
                 const FeatureScaling& scaling = FeatureScaling{});

/// Frozen per-question inputs: encoded text and the 28-day history, computed
/// once per dataset.
struct FeatureCache {
  std::vector<Tensor> text_q;                    // 1 x text_dim
  std::vector<Tensor> text_a;                    // 1 x text_dim
  std::vector<std::vector<ProductId>> history;   // history_window products
};

FeatureCache build_feature_cache(const Dataset& ds, const TextEncoder& encoder);

/// Behavioral and text moments over the given questions (usually the train
/// split), computed with the pretrained embeddings.
FeatureScaling compute_feature_scaling(const Dataset& ds,
                                       const FeatureCache& cache,
                                       const BehavioralEmbeddings& emb,
                                       std::span<const std::size_t> indices);

/// Parameter leaves registered on a tape, keyed by name. When trainable is
/// false the leaves are constants and backward skips them.
class TapeParams {
 public:
  TapeParams(Tape& tape, const ParamStore& store, bool trainable);
  explicit TapeParams(std::map<std::string, Tape::Value> values)
      : values_(std::move(values)) {}
  Tape::Value at(const std::string& name) const;
  const std::map<std::string, Tape::Value>& all() const { return values_; }

 private:
  std::map<std::string, Tape::Value> values_;
};

/// Six similarity statistics between the queried product row and the history
/// rows of the skip-gram table, computed on-tape so gradients reach the
/// vectors during joint fine-tuning. Empty history yields constant zeros.
Tape::Value behavior_row(Tape& tape, Tape::Value skip_table,
                         std::size_t queried_row,
                         const std::vector<std::size_t>& history_rows);

/// Forward pass of any variant over a batch graph: probabilities in (0,1),
/// shape B×1. Masked feature types are never materialized, so their
/// parameters stay untouched.
Tape::Value model_forward(Tape& tape, const Model& model,
                          const TapeParams& params, const Dataset& ds,
                          const FeatureCache& cache, const BatchGraph& batch);

}  // namespace spqi
