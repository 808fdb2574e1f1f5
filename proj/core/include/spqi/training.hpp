#pragma once

#include <cstdint>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include "spqi/catalog.hpp"
#include "spqi/embeddings.hpp"
#include "spqi/model.hpp"

namespace spqi {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam over named parameter tensors. State is kept per name; parameters
/// without a gradient this step are left bit-identical.
class Adam {
 public:
  explicit Adam(AdamConfig cfg) : cfg_(cfg) {}
  void step(ParamStore& params, const std::map<std::string, Tensor>& grads,
            const std::vector<std::string>& update_names, double lr);

 private:
  AdamConfig cfg_;
  std::map<std::string, Tensor> m_, v_;
  std::size_t t_ = 0;
};

/// Stops once validation loss has not improved on the best seen value for
/// `patience` consecutive observations.
class EarlyStopper {
 public:
  explicit EarlyStopper(int patience) : patience_(patience) {}
  struct Decision {
    bool improved;
    bool stop;
  };
  Decision observe(double val_loss);
  double best() const { return best_; }

 private:
  int patience_;
  int streak_ = 0;
  double best_ = std::numeric_limits<double>::infinity();
};

struct TrainConfig {
  Variant variant = Variant::spqi_moe;
  FeatureMask mask = full_feature_mask();
  double stage1_lr = 0.001;
  double stage2_lr = 3e-5;
  int stage1_epochs = 1;
  int early_stop_patience = 3;
  int max_stage2_epochs = 40;  // safety cap; early stopping usually fires first
  std::size_t batch_size = 128;
  AdamConfig adam;
  std::uint64_t seed = 1;
  ModelDims dims;
  MoeNorm moe_norm = MoeNorm::softmax;
  LayerKind layer_kind = LayerKind::gat;
  double leaky_slope = 0.2;
  std::uint64_t text_seed = 101;
  SkipgramConfig skipgram;
};

struct Metrics {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::map<CategoryId, double> per_category_f1;  // categories with >= 50 rows
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
  double mean_loss = 0.0;
};

struct EpochRecord {
  int stage = 0;  // 1 or 2
  int epoch = 0;  // 1-based within the stage
  double train_loss = 0.0;
  double val_loss = 0.0;
  Metrics val_metrics;
  bool is_best = false;
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
  int best_index = -1;  // into epochs
  std::string stop_reason;
};

struct TrainResult {
  Model model;  // best-validation-loss parameters
  TrainHistory history;
};

/// Two-stage schedule: stage 1 trains only the randomly initialized set at
/// stage1_lr; stage 2 fine-tunes everything at stage2_lr until validation
/// loss is non-decreasing for early_stop_patience consecutive epochs. Returns
/// the parameters with the minimum validation loss seen. Throws TrainingError
/// on divergence, naming the epoch.
TrainResult train_multistage(const Dataset& ds, const TrainConfig& cfg,
                             const BehavioralEmbeddings& emb);

/// Deterministic full pass over a split (contiguous batches, threshold 0.5).
Metrics evaluate(const Model& model, const Dataset& ds, Split split,
                 std::size_t batch_size);

Metrics metrics_from_counts(std::size_t tp, std::size_t fp, std::size_t tn,
                            std::size_t fn);

struct GridCell {
  Variant variant;
  FeatureMask mask;
  std::uint64_t seed;
  Metrics test_metrics;
  int epochs_run = 0;
};

/// Every Table-style cell: {mlp-concat, mlp-moe, spqi-concat, spqi-moe} x
/// {Behavior, Product, Text+Product, Text+Behavior, Product+Behavior, Full}
/// plus the two text-only baselines - 26 cells.
std::vector<GridCell> run_ablation_grid(const Dataset& ds,
                                        const TrainConfig& base,
                                        const BehavioralEmbeddings& emb);

/// The six feature subsets of the ablation table, in column order.
const std::vector<std::pair<std::string, FeatureMask>>& ablation_subsets();

}  // namespace spqi
