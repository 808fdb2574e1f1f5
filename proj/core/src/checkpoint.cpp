#include "spqi/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include "json.hpp"
#include "spqi/errors.hpp"

namespace spqi {

namespace {

using ordered_json = nlohmann::ordered_json;

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f64(std::string& out, double d) {
  std::uint64_t bits;
  std::memcpy(&bits, &d, sizeof(bits));
  put_u64(out, bits);
}

std::uint32_t get_u32(const std::string& in, std::size_t& pos) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i)
    v |= static_cast<std::uint32_t>(static_cast<unsigned char>(in[pos++])) << (8 * i);
  return v;
}

std::uint64_t get_u64(const std::string& in, std::size_t& pos) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i)
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[pos++])) << (8 * i);
  return v;
}

double get_f64(const std::string& in, std::size_t& pos) {
  const std::uint64_t bits = get_u64(in, pos);
  double d;
  std::memcpy(&d, &bits, sizeof(d));
  return d;
}

ordered_json dims_to_json(const ModelDims& d) {
  ordered_json j;
  j["text_dim"] = d.text_dim;
  j["cat_dim"] = d.cat_dim;
  j["skip_dim"] = d.skip_dim;
  j["node_dim"] = d.node_dim;
  j["gate_dim"] = d.gate_dim;
  j["gat_layers"] = d.gat_layers;
  j["heads"] = d.heads;
  j["mlp_hidden"] = d.mlp_hidden;
  return j;
}

ModelDims dims_from_json(const ordered_json& j) {
  ModelDims d;
  d.text_dim = j.at("text_dim").get<std::size_t>();
  d.cat_dim = j.at("cat_dim").get<std::size_t>();
  d.skip_dim = j.at("skip_dim").get<std::size_t>();
  d.node_dim = j.at("node_dim").get<std::size_t>();
  d.gate_dim = j.at("gate_dim").get<std::size_t>();
  d.gat_layers = j.at("gat_layers").get<std::size_t>();
  d.heads = j.at("heads").get<std::size_t>();
  d.mlp_hidden = j.at("mlp_hidden").get<std::size_t>();
  return d;
}

}  // namespace

void save_checkpoint(const Model& model,
                     const std::map<std::string, std::string>& extra,
                     const std::string& path) {
  const ModelConfig& cfg = model.cfg;
  ordered_json meta;
  meta["variant"] = to_string(cfg.variant);
  meta["mask"] = feature_mask_to_string(cfg.mask);
  meta["dims"] = dims_to_json(cfg.dims);
  meta["moe_norm"] = to_string(cfg.moe_norm);
  meta["layer_kind"] = to_string(cfg.layer_kind);
  meta["leaky_slope"] = cfg.leaky_slope;
  meta["seed"] = cfg.seed;
  meta["text_seed"] = cfg.text_seed;
  meta["id_maps"] = ordered_json::object();
  meta["id_maps"]["product"] = model.product_index.ids();
  meta["id_maps"]["category"] = model.category_index.ids();
  meta["id_maps"]["parent"] = model.parent_index.ids();
  meta["id_maps"]["skip"] = model.skip_index.ids();
  ordered_json pretrained = ordered_json::array();
  ordered_json sections = ordered_json::array();
  std::uint64_t offset = 0;  // in doubles, relative to the payload start
  for (const std::string& name : model.params.names()) {
    const Tensor& t = model.params.at(name);
    ordered_json s;
    s["name"] = name;
    s["shape"] = t.shape();
    s["offset"] = offset;
    s["count"] = t.size();
    sections.push_back(std::move(s));
    offset += t.size();
    if (model.params.is_pretrained(name)) pretrained.push_back(name);
  }
  meta["pretrained"] = std::move(pretrained);
  meta["sections"] = std::move(sections);
  meta["extra"] = extra;

  const std::string meta_str = meta.dump();
  std::string out;
  out += "SPQ1";
  put_u32(out, kCheckpointVersion);
  put_u64(out, meta_str.size());
  out += meta_str;
  for (const std::string& name : model.params.names())
    for (const double v : model.params.at(name).data()) put_f64(out, v);

  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open checkpoint for writing: " + path);
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw IoError("short write to checkpoint: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open checkpoint: " + path);
  std::string in((std::istreambuf_iterator<char>(f)),
                 std::istreambuf_iterator<char>());
  if (in.size() < 16 || in.compare(0, 4, "SPQ1") != 0)
    throw IoError("not a checkpoint file (bad magic): " + path);
  std::size_t pos = 4;
  const std::uint32_t version = get_u32(in, pos);
  if (version != kCheckpointVersion)
    throw IoError("checkpoint version mismatch: file has " +
                  std::to_string(version) + ", supported is " +
                  std::to_string(kCheckpointVersion));
  const std::uint64_t meta_len = get_u64(in, pos);
  if (pos + meta_len > in.size())
    throw IoError("truncated checkpoint metadata: " + path);
  const ordered_json meta = ordered_json::parse(in.substr(pos, meta_len));
  pos += meta_len;

  Checkpoint ckpt;
  Model& m = ckpt.model;
  m.cfg.variant = variant_from_string(meta.at("variant").get<std::string>());
  m.cfg.mask = parse_feature_mask(meta.at("mask").get<std::string>());
  m.cfg.dims = dims_from_json(meta.at("dims"));
  m.cfg.moe_norm = moe_norm_from_string(meta.at("moe_norm").get<std::string>());
  m.cfg.layer_kind =
      layer_kind_from_string(meta.at("layer_kind").get<std::string>());
  m.cfg.leaky_slope = meta.at("leaky_slope").get<double>();
  m.cfg.seed = meta.at("seed").get<std::uint64_t>();
  m.cfg.text_seed = meta.at("text_seed").get<std::uint64_t>();
  m.product_index = IdIndex<ProductId>(
      meta.at("id_maps").at("product").get<std::vector<ProductId>>());
  m.category_index = IdIndex<CategoryId>(
      meta.at("id_maps").at("category").get<std::vector<CategoryId>>());
  m.parent_index = IdIndex<CategoryId>(
      meta.at("id_maps").at("parent").get<std::vector<CategoryId>>());
  m.skip_index = IdIndex<ProductId>(
      meta.at("id_maps").at("skip").get<std::vector<ProductId>>());
  std::set<std::string> pretrained;
  for (const auto& n : meta.at("pretrained"))
    pretrained.insert(n.get<std::string>());

  const std::size_t payload_start = pos;
  for (const auto& s : meta.at("sections")) {
    const std::string name = s.at("name").get<std::string>();
    const std::vector<std::size_t> shape =
        s.at("shape").get<std::vector<std::size_t>>();
    const std::uint64_t offset = s.at("offset").get<std::uint64_t>();
    const std::uint64_t count = s.at("count").get<std::uint64_t>();
    std::size_t p = payload_start + offset * 8;
    if (p + count * 8 > in.size())
      throw IoError("checkpoint section " + name + " out of bounds");
    std::vector<double> data(count);
    for (std::uint64_t i = 0; i < count; ++i) data[i] = get_f64(in, p);
    m.params.add(name, Tensor(shape, std::move(data)),
                 pretrained.count(name) > 0);
  }
  for (const auto& [k, v] : meta.at("extra").items())
    ckpt.extra[k] = v.get<std::string>();
  return ckpt;
}

}  // namespace spqi
