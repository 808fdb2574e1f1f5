#include "spqi/training.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "spqi/errors.hpp"
#include "spqi/graph.hpp"

namespace spqi {

void Adam::step(ParamStore& params, const std::map<std::string, Tensor>& grads,
                const std::vector<std::string>& update_names, double lr) {
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (const std::string& name : update_names) {
    auto git = grads.find(name);
    if (git == grads.end()) continue;  // no path to the loss this step
    Tensor& p = params.at(name);
    const Tensor& g = git->second;
    Tensor& m = m_.try_emplace(name, Tensor(p.shape())).first->second;
    Tensor& v = v_.try_emplace(name, Tensor(p.shape())).first->second;
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double gi = g.at(i);
      m.at(i) = cfg_.beta1 * m.at(i) + (1.0 - cfg_.beta1) * gi;
      v.at(i) = cfg_.beta2 * v.at(i) + (1.0 - cfg_.beta2) * gi * gi;
      const double mhat = m.at(i) / bc1;
      const double vhat = v.at(i) / bc2;
      p.at(i) -= lr * mhat / (std::sqrt(vhat) + cfg_.eps);
    }
  }
}

EarlyStopper::Decision EarlyStopper::observe(double val_loss) {
  if (val_loss < best_) {
    best_ = val_loss;
    streak_ = 0;
    return {true, false};
  }
  ++streak_;
  return {false, streak_ >= patience_};
}

namespace {

ModelConfig model_config_from(const TrainConfig& cfg) {
  ModelConfig mc;
  mc.variant = cfg.variant;
  mc.mask = cfg.mask;
  mc.dims = cfg.dims;
  mc.moe_norm = cfg.moe_norm;
  mc.layer_kind = cfg.layer_kind;
  mc.leaky_slope = cfg.leaky_slope;
  mc.seed = cfg.seed;
  mc.text_seed = cfg.text_seed;
  return mc;
}

std::map<std::string, Tensor> named_gradients(const TapeParams& tp,
                                              const Tape::Gradients& grads) {
  std::map<std::string, Tensor> out;
  for (const auto& [name, value] : tp.all())
    if (grads.contains(value)) out.emplace(name, grads.at(value));
  return out;
}

double batch_loss_and_step(const Model& model, const Dataset& ds,
                           const FeatureCache& cache, const BatchGraph& batch,
                           Adam& adam,
                           const std::vector<std::string>& update_names,
                           double lr, ParamStore& params) {
  Tape tape;
  TapeParams tp(tape, params, /*trainable=*/true);
  const Tape::Value probs = model_forward(tape, model, tp, ds, cache, batch);
  const Tape::Value loss = tape.bce_loss(probs, batch.labels);
  const double loss_value = tape.value(loss).at(0);
  const Tape::Gradients grads = tape.backward(loss);
  adam.step(params, named_gradients(tp, grads), update_names, lr);
  return loss_value;
}

struct EvalPass {
  double mean_loss = 0.0;
  std::vector<double> probs;              // aligned with order
  std::vector<std::size_t> question_idx;  // dataset indices, same order
};

EvalPass eval_pass(const Model& model, const Dataset& ds,
                   const FeatureCache& cache, Split split,
                   std::size_t batch_size) {
  EvalPass out;
  double loss_weighted = 0.0;
  std::size_t total = 0;
  for (const BatchGraph& batch : eval_batches(ds, split, batch_size)) {
    Tape tape;
    TapeParams tp(tape, model.params, /*trainable=*/false);
    const Tape::Value probs = model_forward(tape, model, tp, ds, cache, batch);
    const Tensor& p = tape.value(probs);
    if (!batch.labels.empty()) {
      const Tape::Value loss = tape.bce_loss(probs, batch.labels);
      loss_weighted += tape.value(loss).at(0) * static_cast<double>(batch.n);
    }
    for (std::size_t i = 0; i < batch.n; ++i) {
      out.probs.push_back(p.at(i, 0));
      out.question_idx.push_back(batch.question_indices[i]);
    }
    total += batch.n;
  }
  out.mean_loss = total ? loss_weighted / static_cast<double>(total) : 0.0;
  return out;
}

Metrics metrics_from_pass(const Model& model, const Dataset& ds,
                          const EvalPass& pass) {
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
  std::map<CategoryId, std::array<std::size_t, 4>> per_cat;  // tp fp tn fn
  std::map<CategoryId, std::size_t> cat_count;
  for (std::size_t i = 0; i < pass.probs.size(); ++i) {
    const Question& q = ds.questions[pass.question_idx[i]];
    if (!q.label.has_value())
      throw DataError("evaluate needs a fully labeled split");
    const bool predicted = pass.probs[i] >= 0.5;
    const bool actual = *q.label == Label::SPQ;
    const CategoryId cat = ds.catalog.category_of(q.product);
    auto& c = per_cat[cat];
    ++cat_count[cat];
    if (predicted && actual) {
      ++tp;
      ++c[0];
    } else if (predicted && !actual) {
      ++fp;
      ++c[1];
    } else if (!predicted && !actual) {
      ++tn;
      ++c[2];
    } else {
      ++fn;
      ++c[3];
    }
  }
  Metrics m = metrics_from_counts(tp, fp, tn, fn);
  m.mean_loss = pass.mean_loss;
  for (const auto& [cat, c] : per_cat) {
    if (cat_count[cat] < 50) continue;
    m.per_category_f1[cat] = metrics_from_counts(c[0], c[1], c[2], c[3]).f1;
  }
  return m;
}

}  // namespace

Metrics metrics_from_counts(std::size_t tp, std::size_t fp, std::size_t tn,
                            std::size_t fn) {
  Metrics m;
  m.tp = tp;
  m.fp = fp;
  m.tn = tn;
  m.fn = fn;
  m.precision = tp + fp ? static_cast<double>(tp) / static_cast<double>(tp + fp)
                        : 0.0;
  m.recall = tp + fn ? static_cast<double>(tp) / static_cast<double>(tp + fn)
                     : 0.0;
  m.f1 = m.precision + m.recall > 0.0
             ? 2.0 * m.precision * m.recall / (m.precision + m.recall)
             : 0.0;
  return m;
}

Metrics evaluate(const Model& model, const Dataset& ds, Split split,
                 std::size_t batch_size) {
  if (ds.split_indices(split).empty())
    throw ContractError("evaluate: empty split");
  const HashedBagEncoder encoder = model.make_encoder();
  const FeatureCache cache = build_feature_cache(ds, encoder);
  return metrics_from_pass(model, ds,
                           eval_pass(model, ds, cache, split, batch_size));
}

TrainResult train_multistage(const Dataset& ds, const TrainConfig& cfg,
                             const BehavioralEmbeddings& emb) {
  const std::vector<std::size_t> train_idx = ds.split_indices(Split::train);
  const std::vector<std::size_t> val_idx = ds.split_indices(Split::validation);
  if (train_idx.empty() || val_idx.empty())
    throw ContractError("train_multistage needs train and validation splits");
  for (std::size_t qi : train_idx)
    if (!ds.questions[qi].label.has_value())
      throw DataError("unlabeled question in train split");

  const HashedBagEncoder encoder(cfg.dims.text_dim, cfg.text_seed);
  const FeatureCache cache = build_feature_cache(ds, encoder);
  const FeatureScaling scaling =
      compute_feature_scaling(ds, cache, emb, train_idx);
  Model model = init_model(model_config_from(cfg), ds.catalog, emb, scaling);
  const std::size_t batch_size = std::min(cfg.batch_size, train_idx.size());

  TrainHistory history;
  ParamStore best_params = model.params;
  double best_val = std::numeric_limits<double>::infinity();
  int global_epoch = 0;

  const auto record_epoch = [&](int stage, int epoch, double train_loss) {
    if (!std::isfinite(train_loss))
      throw TrainingError("loss diverged at stage " + std::to_string(stage) +
                          " epoch " + std::to_string(epoch));
    const EvalPass val =
        eval_pass(model, ds, cache, Split::validation, batch_size);
    if (!std::isfinite(val.mean_loss))
      throw TrainingError("validation loss diverged at stage " +
                          std::to_string(stage) + " epoch " +
                          std::to_string(epoch));
    EpochRecord rec;
    rec.stage = stage;
    rec.epoch = epoch;
    rec.train_loss = train_loss;
    rec.val_loss = val.mean_loss;
    rec.val_metrics = metrics_from_pass(model, ds, val);
    if (val.mean_loss < best_val) {
      best_val = val.mean_loss;
      best_params = model.params;
      rec.is_best = true;
      history.best_index = static_cast<int>(history.epochs.size());
    }
    history.epochs.push_back(rec);
    return val.mean_loss;
  };

  // Stage 1: pretrained set frozen, high learning rate.
  {
    Adam adam(cfg.adam);
    const std::vector<std::string> update =
        model.params.update_set(/*include_pretrained=*/false);
    for (int epoch = 1; epoch <= cfg.stage1_epochs; ++epoch) {
      double loss_acc = 0.0;
      std::size_t seen = 0;
      for (const BatchGraph& batch :
           epoch_batches(ds, Split::train, batch_size,
                         SampleStrategy::product_bucketed, cfg.seed,
                         ++global_epoch)) {
        loss_acc += batch_loss_and_step(model, ds, cache, batch, adam, update,
                                        cfg.stage1_lr, model.params) *
                    static_cast<double>(batch.n);
        seen += batch.n;
      }
      record_epoch(1, epoch, loss_acc / static_cast<double>(seen));
    }
  }

  // Stage 2: everything trainable, low learning rate, early stopping.
  {
    Adam adam(cfg.adam);
    const std::vector<std::string> update =
        model.params.update_set(/*include_pretrained=*/true);
    EarlyStopper stopper(cfg.early_stop_patience);
    // Seed the stopper with the best validation loss seen so far, so stage 2
    // must actually improve on the stage-1 result to keep going.
    stopper.observe(best_val);
    history.stop_reason = "max_stage2_epochs";
    for (int epoch = 1; epoch <= cfg.max_stage2_epochs; ++epoch) {
      double loss_acc = 0.0;
      std::size_t seen = 0;
      for (const BatchGraph& batch :
           epoch_batches(ds, Split::train, batch_size,
                         SampleStrategy::product_bucketed, cfg.seed,
                         ++global_epoch)) {
        loss_acc += batch_loss_and_step(model, ds, cache, batch, adam, update,
                                        cfg.stage2_lr, model.params) *
                    static_cast<double>(batch.n);
        seen += batch.n;
      }
      const double val_loss =
          record_epoch(2, epoch, loss_acc / static_cast<double>(seen));
      if (stopper.observe(val_loss).stop) {
        history.stop_reason = "early_stop";
        break;
      }
    }
  }

  model.params = std::move(best_params);
  return {std::move(model), std::move(history)};
}

const std::vector<std::pair<std::string, FeatureMask>>& ablation_subsets() {
  static const std::vector<std::pair<std::string, FeatureMask>> subsets = [] {
    std::vector<std::pair<std::string, FeatureMask>> s;
    s.emplace_back("Behavior", parse_feature_mask("behavior"));
    s.emplace_back("Product", parse_feature_mask("product_family"));
    s.emplace_back("Text+Product", parse_feature_mask("text,product_family"));
    s.emplace_back("Text+Behavior", parse_feature_mask("text,behavior"));
    s.emplace_back("Product+Behavior",
                   parse_feature_mask("product_family,behavior"));
    s.emplace_back("Full", full_feature_mask());
    return s;
  }();
  return subsets;
}

std::vector<GridCell> run_ablation_grid(const Dataset& ds,
                                        const TrainConfig& base,
                                        const BehavioralEmbeddings& emb) {
  std::vector<GridCell> cells;
  const Variant variants[] = {Variant::mlp_concat, Variant::mlp_moe,
                              Variant::spqi_concat, Variant::spqi_moe};
  const auto run_cell = [&](Variant v, const FeatureMask& mask) {
    TrainConfig cfg = base;
    cfg.variant = v;
    cfg.mask = mask;
    TrainResult result = train_multistage(ds, cfg, emb);
    GridCell cell;
    cell.variant = v;
    cell.mask = mask;
    cell.seed = cfg.seed;
    cell.test_metrics =
        evaluate(result.model, ds, Split::test, cfg.batch_size);
    cell.epochs_run = static_cast<int>(result.history.epochs.size());
    cells.push_back(std::move(cell));
  };
  for (const Variant v : variants)
    for (const auto& [name, mask] : ablation_subsets()) run_cell(v, mask);
  run_cell(Variant::text_only, parse_feature_mask("text_q"));
  run_cell(Variant::text_only, parse_feature_mask("text"));
  return cells;
}

}  // namespace spqi
