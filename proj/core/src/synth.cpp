#include "spqi/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "spqi/errors.hpp"
#include "spqi/rng.hpp"

namespace spqi {

namespace {

// Stream ids; every random decision has its own stream so a change in one
// stage never shifts the draws of another.
enum Stream : std::uint64_t {
  kTaxonomy = 1,
  kUsers = 2,
  kAssignment = 3,
  kPriorCoin = 4,
  kFarCoins = 5,
  kText = 6,
  kNoise = 7,
  kLabelUniform = 8,
  kPurchases = 9,
  kBackground = 10,
  kSplits = 11,
  kCategoryOrder = 12,
};

double logit(double p) { return std::log(p / (1.0 - p)); }
double sigmoid(double x) {
  return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

struct QuestionDraft {
  UserId user;
  CategoryId category;
  ProductId product;
  Timestamp time;
  int prior;      // same-category purchase planted before the question
  int text_sign;  // +1 shopping phrasing, -1 knowledge phrasing
  double eta;     // logit without the global bias
  double label_uniform;
  int label = 0;
};

std::vector<std::size_t> seeded_permutation(std::size_t n, CounterRng& rng) {
  std::vector<std::size_t> p(n);
  std::iota(p.begin(), p.end(), 0);
  for (std::size_t i = n; i > 1; --i)
    std::swap(p[i - 1], p[rng.next_below(i)]);
  return p;
}

const std::vector<std::vector<std::string>>& intent_templates() {
  static const std::vector<std::vector<std::string>> t = {
      {"how", "much", "does", "*", "cost"},
      {"what", "is", "the", "price", "of", "*"},
      {"can", "i", "order", "*", "today"},
      {"is", "*", "on", "sale", "now"},
      {"where", "can", "i", "buy", "*"},
  };
  return t;
}

const std::vector<std::vector<std::string>>& info_templates() {
  static const std::vector<std::vector<std::string>> t = {
      {"what", "is", "*", "made", "of"},
      {"how", "does", "*", "work"},
      {"tell", "me", "about", "*"},
      {"who", "makes", "*"},
      {"what", "are", "facts", "about", "*"},
  };
  return t;
}

const std::vector<std::vector<std::string>>& answer_templates() {
  static const std::vector<std::vector<std::string>> t = {
      {"here", "is", "what", "i", "found", "about", "*"},
      {"the", "short", "answer", "for", "*", "follows"},
      {"according", "to", "one", "source", "*", "details", "follow"},
  };
  return t;
}

std::vector<std::string> expand_template(const std::vector<std::string>& tpl,
                                         const std::string& product_token,
                                         const std::string& category_token) {
  std::vector<std::string> out;
  for (const std::string& w : tpl) {
    if (w == "*") {
      out.push_back(product_token);
      out.push_back(category_token);
    } else {
      out.push_back(w);
    }
  }
  return out;
}

}  // namespace

void SynthConfig::validate() const {
  if (target_spq_rate <= 0.0 || target_spq_rate >= 1.0)
    throw GenerationError("target_spq_rate must lie in (0,1)");
  if (signal.prior_purchase_weight < 0.0 || signal.category_weight < 0.0 ||
      signal.text_weight < 0.0 || signal.noise < 0.0)
    throw GenerationError("signal weights must be non-negative");
  if (n_products < n_categories)
    throw GenerationError("n_products must be >= n_categories");
  if (n_users == 0 || n_categories == 0 || n_questions == 0)
    throw GenerationError("n_users, n_categories, n_questions must be positive");
  if (taxonomy_branching == 0)
    throw GenerationError("taxonomy_branching must be positive");
  if (n_questions > n_users * n_categories)
    throw GenerationError(
        "n_questions exceeds n_users * n_categories; questions need distinct "
        "(user, category) pairs");
  if (train_fraction <= 0.0 || val_fraction < 0.0 ||
      train_fraction + val_fraction >= 1.0)
    throw GenerationError("split fractions must satisfy 0 < train, 0 <= val, "
                          "train + val < 1");
  if (horizon_days < 4 * kDefaultWindowDays + kDefaultWindowDays)
    throw GenerationError("horizon_days too short for the label windows");
  if (cold_user_fraction < 0.0 || cold_user_fraction > 1.0 ||
      far_window_base < 0.0 || far_window_base + far_window_label_lift > 1.0)
    throw GenerationError("probability knobs out of range");
}

Dataset generate_dataset(const SynthConfig& cfg) {
  cfg.validate();
  const std::uint64_t seed = cfg.seed;
  const Timestamp w = Timestamp{kDefaultWindowDays} * kSecondsPerDay;
  const Timestamp horizon = cfg.horizon_days * kSecondsPerDay;
  const std::size_t n_roots =
      (cfg.n_categories + cfg.taxonomy_branching - 1) / cfg.taxonomy_branching;

  Dataset ds;

  // Taxonomy: leaf categories 0..C-1, roots C..C+R-1 (their own parents).
  for (std::size_t r = 0; r < n_roots; ++r) {
    const CategoryId id = static_cast<CategoryId>(cfg.n_categories + r);
    ds.catalog.add_category(id, "domain" + std::to_string(r), id);
  }
  for (std::size_t c = 0; c < cfg.n_categories; ++c) {
    const CategoryId parent =
        static_cast<CategoryId>(cfg.n_categories + c / cfg.taxonomy_branching);
    ds.catalog.add_category(static_cast<CategoryId>(c),
                            "family" + std::to_string(c), parent);
  }
  std::vector<std::vector<ProductId>> category_products(cfg.n_categories);
  for (std::size_t p = 0; p < cfg.n_products; ++p) {
    const CategoryId cat = static_cast<CategoryId>(p % cfg.n_categories);
    ds.catalog.add_product(static_cast<ProductId>(p),
                           "item" + std::to_string(p), cat);
    category_products[cat].push_back(static_cast<ProductId>(p));
  }

  // Per-category intent-rate offsets in logit space. The probit-style factor
  // compensates for the flattening caused by the other logit terms so that
  // realized rates still span roughly target +- spread/2 at category_weight=1.
  const double smear = cfg.signal.prior_purchase_weight *
                           cfg.signal.prior_purchase_weight +
                       cfg.signal.text_weight * cfg.signal.text_weight +
                       cfg.signal.noise * cfg.signal.noise;
  // Probit-style correction (x1.2 safety margin: the prior term is bimodal,
  // which flattens harder than a Gaussian of the same variance).
  const double compensation =
      1.2 * std::sqrt(1.0 + 3.14159265358979323846 * smear / 8.0);
  CounterRng cat_rng(seed, kCategoryOrder);
  const std::vector<std::size_t> cat_order =
      seeded_permutation(cfg.n_categories, cat_rng);
  std::vector<double> category_offset(cfg.n_categories, 0.0);
  for (std::size_t i = 0; i < cfg.n_categories; ++i) {
    const double pos =
        cfg.n_categories == 1
            ? 0.0
            : static_cast<double>(i) / static_cast<double>(cfg.n_categories - 1) -
                  0.5;
    const double planned = std::clamp(
        cfg.target_spq_rate + cfg.category_spq_rate_spread * compensation * pos,
        0.02, 0.98);
    category_offset[cat_order[i]] = logit(planned) - logit(cfg.target_spq_rate);
  }

  // Users: cold flag and favorite background categories.
  CounterRng user_rng(seed, kUsers);
  std::vector<bool> cold(cfg.n_users);
  for (std::size_t u = 0; u < cfg.n_users; ++u)
    cold[u] = user_rng.next_unit() < cfg.cold_user_fraction;

  // Question assignment: round-robin users, distinct categories per user.
  CounterRng assign_rng(seed, kAssignment);
  std::vector<std::vector<std::size_t>> user_cat_perm(cfg.n_users);
  std::vector<std::size_t> user_cursor(cfg.n_users, 0);
  std::vector<std::vector<CategoryId>> user_question_cats(cfg.n_users);
  std::vector<QuestionDraft> drafts(cfg.n_questions);
  CounterRng prior_rng(seed, kPriorCoin);
  CounterRng text_rng(seed, kText);
  CounterRng noise_rng(seed, kNoise);
  CounterRng label_rng(seed, kLabelUniform);
  const Timestamp t_lo = 3 * w;            // room for T-3
  const Timestamp t_hi = horizon - w - 1;  // room for the label window
  for (std::size_t i = 0; i < cfg.n_questions; ++i) {
    QuestionDraft& d = drafts[i];
    const std::size_t u = i % cfg.n_users;
    if (user_cat_perm[u].empty())
      user_cat_perm[u] = seeded_permutation(cfg.n_categories, assign_rng);
    const std::size_t cat = user_cat_perm[u][user_cursor[u]++];
    d.user = static_cast<UserId>(u);
    d.category = static_cast<CategoryId>(cat);
    user_question_cats[u].push_back(d.category);
    const auto& pool = category_products[cat];
    d.product = pool[assign_rng.next_below(pool.size())];
    d.time = t_lo + static_cast<Timestamp>(
                        assign_rng.next_below(static_cast<std::uint64_t>(t_hi - t_lo)));
    d.prior = prior_rng.next_unit() < 0.5 ? 1 : 0;
    d.text_sign = text_rng.next_unit() < 0.5 ? 1 : -1;
    d.eta = cfg.signal.prior_purchase_weight * (2.0 * d.prior - 1.0) +
            cfg.signal.category_weight * category_offset[cat] +
            cfg.signal.text_weight * d.text_sign +
            cfg.signal.noise * noise_rng.next_normal();
    d.label_uniform = label_rng.next_unit();
  }

  // Global bias: the realized SPQ rate is a monotone step function of the
  // bias, so bisection hits the closest achievable rate.
  const auto rate_at = [&](double bias) {
    std::size_t hits = 0;
    for (const QuestionDraft& d : drafts)
      if (d.label_uniform < sigmoid(d.eta + bias)) ++hits;
    return static_cast<double>(hits) / static_cast<double>(drafts.size());
  };
  double lo = -30.0, hi = 30.0;
  for (int iter = 0; iter < 80; ++iter) {
    const double mid = 0.5 * (lo + hi);
    if (rate_at(mid) < cfg.target_spq_rate)
      lo = mid;
    else
      hi = mid;
  }
  const double bias =
      std::abs(rate_at(lo) - cfg.target_spq_rate) <
              std::abs(rate_at(hi) - cfg.target_spq_rate)
          ? lo
          : hi;
  const double realized_rate = rate_at(bias);
  if (std::abs(realized_rate - cfg.target_spq_rate) > 0.02)
    throw GenerationError(
        "cannot reach target_spq_rate " + std::to_string(cfg.target_spq_rate) +
        "; closest achievable is " + std::to_string(realized_rate));
  for (QuestionDraft& d : drafts)
    d.label = d.label_uniform < sigmoid(d.eta + bias) ? 1 : 0;

  // Realize planted purchases. All planted events share the question's
  // category, and each (user, category) pair belongs to exactly one question,
  // so windows never interfere.
  CounterRng far_rng(seed, kFarCoins);
  CounterRng buy_rng(seed, kPurchases);
  const std::uint64_t ws = static_cast<std::uint64_t>(w);
  const auto same_cat_product = [&](const QuestionDraft& d) {
    if (buy_rng.next_unit() < 0.5) return d.product;
    const auto& pool = category_products[static_cast<std::size_t>(d.category)];
    return pool[buy_rng.next_below(pool.size())];
  };
  for (const QuestionDraft& d : drafts) {
    const double u2 = far_rng.next_unit();
    const double u3 = far_rng.next_unit();
    if (d.prior) {
      // [t-w, t)
      const Timestamp t = d.time - 1 - static_cast<Timestamp>(buy_rng.next_below(ws - 1));
      ds.purchases[d.user].push_back({d.user, same_cat_product(d), t});
    }
    if (d.label) {
      // (t, t+w]
      const Timestamp t = d.time + 1 + static_cast<Timestamp>(buy_rng.next_below(ws));
      ds.purchases[d.user].push_back({d.user, same_cat_product(d), t});
    }
    if (u2 < cfg.far_window_base + cfg.far_window_label_lift * d.label) {
      // [t-2w, t-w)
      const Timestamp t = d.time - w - 1 - static_cast<Timestamp>(buy_rng.next_below(ws - 1));
      ds.purchases[d.user].push_back({d.user, same_cat_product(d), t});
    }
    if (u3 < cfg.far_window_base + cfg.far_window_label_lift * d.label) {
      // [t-3w, t-2w)
      const Timestamp t = d.time - 2 * w - 1 - static_cast<Timestamp>(buy_rng.next_below(ws - 1));
      ds.purchases[d.user].push_back({d.user, same_cat_product(d), t});
    }
  }

  // Background purchases: favorite categories that host none of the user's
  // questions, so they never disturb planted labels.
  CounterRng bg_rng(seed, kBackground);
  for (std::size_t u = 0; u < cfg.n_users; ++u) {
    if (cold[u]) continue;
    std::vector<std::size_t> open;
    for (std::size_t c = 0; c < cfg.n_categories; ++c) {
      const CategoryId cid = static_cast<CategoryId>(c);
      const auto& qcats = user_question_cats[u];
      if (std::find(qcats.begin(), qcats.end(), cid) == qcats.end())
        open.push_back(c);
    }
    if (open.empty()) continue;
    std::vector<std::size_t> favorites;
    for (std::size_t k = 0; k < std::min(cfg.favorites_per_user, open.size()); ++k) {
      const std::size_t pick = bg_rng.next_below(open.size() - k);
      favorites.push_back(open[pick]);
      std::swap(open[pick], open[open.size() - 1 - k]);
    }
    const std::uint64_t n_bg = bg_rng.next_below(
        static_cast<std::uint64_t>(2.0 * cfg.background_purchases_per_user) + 1);
    for (std::uint64_t k = 0; k < n_bg; ++k) {
      const std::size_t cat = favorites[bg_rng.next_below(favorites.size())];
      const auto& pool = category_products[cat];
      const ProductId p = pool[bg_rng.next_below(pool.size())];
      const Timestamp t =
          static_cast<Timestamp>(bg_rng.next_below(static_cast<std::uint64_t>(horizon)));
      ds.purchases[static_cast<UserId>(u)].push_back(
          {static_cast<UserId>(u), p, t});
    }
  }

  // Materialize questions with templated text.
  CounterRng tpl_rng(seed, kText + 100);
  for (std::size_t i = 0; i < cfg.n_questions; ++i) {
    const QuestionDraft& d = drafts[i];
    Question q;
    q.id = static_cast<QuestionId>(i);
    q.user = d.user;
    q.product = d.product;
    q.time = d.time;
    const std::string ptok = "item" + std::to_string(d.product);
    const std::string ctok = "family" + std::to_string(d.category);
    const auto& pool = d.text_sign > 0 ? intent_templates() : info_templates();
    q.question_tokens =
        expand_template(pool[tpl_rng.next_below(pool.size())], ptok, ctok);
    const auto& answers = answer_templates();
    q.answer_tokens =
        expand_template(answers[tpl_rng.next_below(answers.size())], ptok, ctok);
    q.label = d.label ? Label::SPQ : Label::NSPQ;
    ds.questions.push_back(std::move(q));
  }

  // Splits: seeded permutation, exact counts.
  CounterRng split_rng(seed, kSplits);
  const std::vector<std::size_t> perm =
      seeded_permutation(cfg.n_questions, split_rng);
  const std::size_t n_train = static_cast<std::size_t>(
      std::llround(cfg.train_fraction * static_cast<double>(cfg.n_questions)));
  const std::size_t n_val = static_cast<std::size_t>(
      std::llround(cfg.val_fraction * static_cast<double>(cfg.n_questions)));
  ds.splits.assign(cfg.n_questions, Split::test);
  for (std::size_t i = 0; i < cfg.n_questions; ++i) {
    if (i < n_train)
      ds.splits[perm[i]] = Split::train;
    else if (i < n_train + n_val)
      ds.splits[perm[i]] = Split::validation;
  }

  ds.finalize();

  // The labeling rule must recover every planted label.
  for (std::size_t i = 0; i < cfg.n_questions; ++i) {
    const Label recovered = label_question(
        ds.questions[i], ds.user_purchases(ds.questions[i].user), ds.catalog);
    if (recovered != *ds.questions[i].label)
      throw GenerationError("planted label not recovered for question " +
                            std::to_string(i));
  }
  return ds;
}

SynthConfig calibrate_signal(const SynthConfig& cfg, double target_r) {
  if (target_r < 0.0 || target_r >= 0.95)
    throw ContractError("calibrate_signal target_r must lie in [0, 0.95)");
  SynthConfig probe = cfg;
  probe.n_questions = 20000;
  if (probe.n_users * probe.n_categories < probe.n_questions)
    probe.n_users =
        probe.n_questions / probe.n_categories + 1;

  const auto measure = [&](double weight) {
    probe.signal.prior_purchase_weight = weight;
    const Dataset ds = generate_dataset(probe);
    return purchase_window_correlations(ds).r_prior_purchase_vs_spq;
  };

  double lo = 0.0, hi = 8.0;
  double r_lo = measure(lo);
  if (std::abs(r_lo - target_r) <= 0.05) {
    SynthConfig out = cfg;
    out.signal.prior_purchase_weight = lo;
    return out;
  }
  double r_hi = measure(hi);
  int iterations = 2;
  while (r_hi < target_r && hi < 64.0) {
    hi *= 2.0;
    r_hi = measure(hi);
    ++iterations;
  }
  if (r_lo > target_r || r_hi < target_r)
    throw CalibrationError(
        "cannot bracket target correlation " + std::to_string(target_r) +
        ": measured range [" + std::to_string(r_lo) + ", " +
        std::to_string(r_hi) + "]");
  while (iterations < 40) {
    const double mid = 0.5 * (lo + hi);
    const double r_mid = measure(mid);
    ++iterations;
    if (std::abs(r_mid - target_r) <= 0.05) {
      SynthConfig out = cfg;
      out.signal.prior_purchase_weight = mid;
      return out;
    }
    if (r_mid < target_r)
      lo = mid;
    else
      hi = mid;
  }
  throw CalibrationError("no calibration within tolerance after 40 iterations");
}

}  // namespace spqi
