#include "spqi/dataset_io.hpp"

#include <filesystem>
#include <fstream>

#include "json.hpp"
#include "spqi/errors.hpp"

namespace spqi {

namespace {

using ordered_json = nlohmann::ordered_json;

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open for writing: " + path);
  return out;
}

std::ifstream open_in(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open for reading: " + path);
  return in;
}

ordered_json parse_line(const std::string& line, const std::string& path) {
  ordered_json j = ordered_json::parse(line, nullptr, false);
  if (j.is_discarded()) throw DataError("malformed record in " + path);
  return j;
}

}  // namespace

void write_dataset(const Dataset& ds, const std::string& dir) {
  std::filesystem::create_directories(dir);

  {
    std::ofstream out = open_out(dir + "/catalog.jsonl");
    for (const auto& [id, rec] : ds.catalog.categories()) {
      ordered_json j;
      j["kind"] = "category";
      j["id"] = id;
      j["name"] = rec.name;
      j["parent_id"] = rec.parent;
      out << j.dump() << "\n";
    }
    for (const auto& [id, rec] : ds.catalog.products()) {
      ordered_json j;
      j["kind"] = "product";
      j["id"] = id;
      j["name"] = rec.name;
      j["category_id"] = rec.category;
      out << j.dump() << "\n";
    }
  }

  {
    std::ofstream out = open_out(dir + "/purchases.jsonl");
    for (const auto& [user, log] : ds.purchases) {
      for (const PurchaseEvent& e : log) {
        ordered_json j;
        j["user_id"] = e.user;
        j["product_id"] = e.product;
        j["timestamp"] = e.time;
        out << j.dump() << "\n";
      }
    }
  }

  {
    std::ofstream out = open_out(dir + "/questions.jsonl");
    for (std::size_t i = 0; i < ds.questions.size(); ++i) {
      const Question& q = ds.questions[i];
      ordered_json j;
      j["question_id"] = q.id;
      j["user_id"] = q.user;
      j["product_id"] = q.product;
      j["timestamp"] = q.time;
      j["question_tokens"] = q.question_tokens;
      j["answer_tokens"] = q.answer_tokens;
      if (q.label.has_value())
        j["label"] = to_string(*q.label);
      else
        j["label"] = nullptr;
      j["split"] = to_string(ds.splits[i]);
      out << j.dump() << "\n";
    }
  }
}

Dataset read_dataset(const std::string& dir) {
  Dataset ds;

  {
    const std::string path = dir + "/catalog.jsonl";
    std::ifstream in = open_in(path);
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      ordered_json j = parse_line(line, path);
      const std::string kind = j.at("kind").get<std::string>();
      if (kind == "category") {
        ds.catalog.add_category(j.at("id").get<CategoryId>(),
                                j.at("name").get<std::string>(),
                                j.at("parent_id").get<CategoryId>());
      } else if (kind == "product") {
        ds.catalog.add_product(j.at("id").get<ProductId>(),
                               j.at("name").get<std::string>(),
                               j.at("category_id").get<CategoryId>());
      } else {
        throw DataError("unknown record kind '" + kind + "' in " + path);
      }
    }
  }

  {
    const std::string path = dir + "/purchases.jsonl";
    std::ifstream in = open_in(path);
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      ordered_json j = parse_line(line, path);
      PurchaseEvent e{j.at("user_id").get<UserId>(),
                      j.at("product_id").get<ProductId>(),
                      j.at("timestamp").get<Timestamp>()};
      ds.purchases[e.user].push_back(e);
    }
  }

  {
    const std::string path = dir + "/questions.jsonl";
    std::ifstream in = open_in(path);
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      ordered_json j = parse_line(line, path);
      Question q;
      q.id = j.at("question_id").get<QuestionId>();
      q.user = j.at("user_id").get<UserId>();
      q.product = j.at("product_id").get<ProductId>();
      q.time = j.at("timestamp").get<Timestamp>();
      q.question_tokens = j.at("question_tokens").get<std::vector<std::string>>();
      q.answer_tokens = j.at("answer_tokens").get<std::vector<std::string>>();
      if (!j.at("label").is_null())
        q.label = label_from_string(j.at("label").get<std::string>());
      ds.questions.push_back(std::move(q));
      ds.splits.push_back(split_from_string(j.at("split").get<std::string>()));
    }
  }

  ds.finalize();
  return ds;
}

}  // namespace spqi
