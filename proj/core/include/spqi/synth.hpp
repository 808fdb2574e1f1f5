#pragma once

#include <cstdint>

#include "spqi/catalog.hpp"

namespace spqi {

/// Strengths of the planted relationships between question context and the
/// latent shopping intent. All weights act on the logit scale.
struct SignalStrengths {
  double prior_purchase_weight = 2.0;  // same-category purchase before asking
  double category_weight = 1.0;        // per-category intent-rate offsets
  double text_weight = 0.4;            // phrasing of the question itself
  double noise = 0.5;                  // stddev of the unexplained component
};

struct SynthConfig {
  std::size_t n_users = 2000;
  std::size_t n_products = 400;
  std::size_t n_categories = 40;
  std::size_t taxonomy_branching = 8;  // leaf categories per parent
  std::size_t n_questions = 8000;
  double target_spq_rate = 0.5;
  SignalStrengths signal;
  double category_spq_rate_spread = 0.6;
  std::uint64_t seed = 1234;

  // Generator shape knobs (documented defaults; not part of the signal).
  std::int64_t horizon_days = 180;
  double cold_user_fraction = 0.3;      // users with no background purchases
  double background_purchases_per_user = 10.0;
  std::size_t favorites_per_user = 3;   // background categories per user
  double far_window_base = 0.15;        // P(purchase in T-2 / T-3 windows)
  double far_window_label_lift = 0.12;  // extra probability when intent is set
  double train_fraction = 0.8;
  double val_fraction = 0.1;

  void validate() const;  // throws GenerationError
};

/// Deterministic synthetic e-commerce world: two-level taxonomy, per-user
/// purchase propensities, and questions whose latent shopping intent is a
/// logistic function of planted signals. Intent is realized as future
/// purchases, so label_question recovers exactly the planted label. A pure
/// function of (cfg, cfg.seed); throws GenerationError when the target class
/// balance cannot be met within ±0.02.
Dataset generate_dataset(const SynthConfig& cfg);

/// Bisects prior_purchase_weight until the measured prior-purchase/SPQ
/// correlation on a 20k-question probe lands within ±0.05 of target_r.
/// target_r must lie in [0, 0.95); throws CalibrationError when the search
/// cannot bracket the target within 40 iterations.
SynthConfig calibrate_signal(const SynthConfig& cfg, double target_r);

}  // namespace spqi
