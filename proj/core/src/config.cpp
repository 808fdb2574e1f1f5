#include "spqi/config.hpp"

#include <fstream>
#include <sstream>

#include "spqi/errors.hpp"

namespace spqi {

namespace {

std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

const std::map<std::string, std::string>& default_values() {
  static const std::map<std::string, std::string> defaults = {
      {"synth.n_users", "2000"},
      {"synth.n_products", "400"},
      {"synth.n_categories", "40"},
      {"synth.taxonomy_branching", "8"},
      {"synth.n_questions", "8000"},
      {"synth.target_spq_rate", "0.5"},
      {"synth.prior_purchase_weight", "2.0"},
      {"synth.category_weight", "1.0"},
      {"synth.text_weight", "0.4"},
      {"synth.noise", "0.5"},
      {"synth.category_spq_rate_spread", "0.6"},
      {"synth.horizon_days", "180"},
      {"synth.cold_user_fraction", "0.3"},
      {"synth.background_purchases_per_user", "10"},
      {"synth.favorites_per_user", "3"},
      {"synth.far_window_base", "0.15"},
      {"synth.far_window_label_lift", "0.12"},
      {"synth.train_fraction", "0.8"},
      {"synth.val_fraction", "0.1"},
      {"synth.seed", "1234"},
      {"model.text_dim", "32"},
      {"model.cat_dim", "16"},
      {"model.skip_dim", "50"},
      {"model.node_dim", "64"},
      {"model.gate_dim", "16"},
      {"model.gat_layers", "4"},
      {"model.heads", "1"},
      {"model.mlp_hidden", "64"},
      {"model.moe_norm", "softmax"},
      {"model.layer_kind", "gat"},
      {"model.leaky_slope", "0.2"},
      {"model.text_seed", "101"},
      {"train.variant", "spqi-moe"},
      {"train.features", "full"},
      {"train.stage1_lr", "0.001"},
      {"train.stage2_lr", "3e-5"},
      {"train.stage1_epochs", "1"},
      {"train.early_stop_patience", "3"},
      {"train.max_stage2_epochs", "40"},
      {"train.batch_size", "128"},
      {"train.adam_beta1", "0.9"},
      {"train.adam_beta2", "0.999"},
      {"train.adam_eps", "1e-8"},
      {"train.seed", "1"},
      {"skipgram.negatives", "5"},
      {"skipgram.epochs", "15"},
      {"skipgram.lr", "0.05"},
      {"skipgram.seed", "7"},
  };
  return defaults;
}

}  // namespace

RunConfig::RunConfig() : values_(default_values()) {}

RunConfig RunConfig::from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file: " + path);
  RunConfig cfg;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    cfg.apply_line(line, path + ":" + std::to_string(line_no));
  }
  return cfg;
}

void RunConfig::apply_line(const std::string& raw, const std::string& where) {
  std::string line = raw;
  const std::size_t hash = line.find('#');
  if (hash != std::string::npos) line = line.substr(0, hash);
  line = trim(line);
  if (line.empty()) return;
  const std::size_t eq = line.find('=');
  if (eq == std::string::npos)
    throw ContractError("malformed config line (missing '=') at " + where);
  set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
}

void RunConfig::set(const std::string& key, const std::string& value) {
  if (!default_values().count(key))
    throw ContractError("unknown config key '" + key + "'");
  values_[key] = value;
}

const std::string& RunConfig::get(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end())
    throw ContractError("unknown config key '" + key + "'");
  return it->second;
}

double RunConfig::get_double(const std::string& key) const {
  try {
    std::size_t used = 0;
    const double v = std::stod(get(key), &used);
    if (used != get(key).size()) throw std::invalid_argument("trailing");
    return v;
  } catch (const std::exception&) {
    throw ContractError("config key '" + key + "' is not a number: '" +
                        get(key) + "'");
  }
}

std::int64_t RunConfig::get_int(const std::string& key) const {
  try {
    std::size_t used = 0;
    const long long v = std::stoll(get(key), &used);
    if (used != get(key).size()) throw std::invalid_argument("trailing");
    return v;
  } catch (const std::exception&) {
    throw ContractError("config key '" + key + "' is not an integer: '" +
                        get(key) + "'");
  }
}

std::uint64_t RunConfig::get_uint(const std::string& key) const {
  const std::int64_t v = get_int(key);
  if (v < 0) throw ContractError("config key '" + key + "' must be >= 0");
  return static_cast<std::uint64_t>(v);
}

void RunConfig::write(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write config echo: " + path);
  out << to_string();
}

std::string RunConfig::to_string() const {
  std::ostringstream out;
  for (const auto& [k, v] : values_) out << k << " = " << v << "\n";
  return out.str();
}

SynthConfig RunConfig::synth_config() const {
  SynthConfig c;
  c.n_users = static_cast<std::size_t>(get_int("synth.n_users"));
  c.n_products = static_cast<std::size_t>(get_int("synth.n_products"));
  c.n_categories = static_cast<std::size_t>(get_int("synth.n_categories"));
  c.taxonomy_branching =
      static_cast<std::size_t>(get_int("synth.taxonomy_branching"));
  c.n_questions = static_cast<std::size_t>(get_int("synth.n_questions"));
  c.target_spq_rate = get_double("synth.target_spq_rate");
  c.signal.prior_purchase_weight = get_double("synth.prior_purchase_weight");
  c.signal.category_weight = get_double("synth.category_weight");
  c.signal.text_weight = get_double("synth.text_weight");
  c.signal.noise = get_double("synth.noise");
  c.category_spq_rate_spread = get_double("synth.category_spq_rate_spread");
  c.horizon_days = get_int("synth.horizon_days");
  c.cold_user_fraction = get_double("synth.cold_user_fraction");
  c.background_purchases_per_user =
      get_double("synth.background_purchases_per_user");
  c.favorites_per_user =
      static_cast<std::size_t>(get_int("synth.favorites_per_user"));
  c.far_window_base = get_double("synth.far_window_base");
  c.far_window_label_lift = get_double("synth.far_window_label_lift");
  c.train_fraction = get_double("synth.train_fraction");
  c.val_fraction = get_double("synth.val_fraction");
  c.seed = get_uint("synth.seed");
  return c;
}

TrainConfig RunConfig::train_config() const {
  TrainConfig c;
  c.variant = variant_from_string(get("train.variant"));
  c.mask = parse_feature_mask(get("train.features"));
  c.stage1_lr = get_double("train.stage1_lr");
  c.stage2_lr = get_double("train.stage2_lr");
  c.stage1_epochs = static_cast<int>(get_int("train.stage1_epochs"));
  c.early_stop_patience =
      static_cast<int>(get_int("train.early_stop_patience"));
  c.max_stage2_epochs = static_cast<int>(get_int("train.max_stage2_epochs"));
  c.batch_size = static_cast<std::size_t>(get_int("train.batch_size"));
  c.adam.beta1 = get_double("train.adam_beta1");
  c.adam.beta2 = get_double("train.adam_beta2");
  c.adam.eps = get_double("train.adam_eps");
  c.seed = get_uint("train.seed");
  c.dims.text_dim = static_cast<std::size_t>(get_int("model.text_dim"));
  c.dims.cat_dim = static_cast<std::size_t>(get_int("model.cat_dim"));
  c.dims.skip_dim = static_cast<std::size_t>(get_int("model.skip_dim"));
  c.dims.node_dim = static_cast<std::size_t>(get_int("model.node_dim"));
  c.dims.gate_dim = static_cast<std::size_t>(get_int("model.gate_dim"));
  c.dims.gat_layers = static_cast<std::size_t>(get_int("model.gat_layers"));
  c.dims.heads = static_cast<std::size_t>(get_int("model.heads"));
  c.dims.mlp_hidden = static_cast<std::size_t>(get_int("model.mlp_hidden"));
  c.moe_norm = moe_norm_from_string(get("model.moe_norm"));
  c.layer_kind = layer_kind_from_string(get("model.layer_kind"));
  c.leaky_slope = get_double("model.leaky_slope");
  c.text_seed = get_uint("model.text_seed");
  c.skipgram.dim = c.dims.skip_dim;
  c.skipgram.negatives_per_positive =
      static_cast<std::size_t>(get_int("skipgram.negatives"));
  c.skipgram.epochs = static_cast<std::size_t>(get_int("skipgram.epochs"));
  c.skipgram.lr = get_double("skipgram.lr");
  c.skipgram.seed = get_uint("skipgram.seed");
  return c;
}

}  // namespace spqi
