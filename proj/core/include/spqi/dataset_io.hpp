#pragma once

#include <string>

#include "spqi/catalog.hpp"

namespace spqi {

// Newline-delimited JSON records, one file per entity, UTF-8, integer-second
// timestamps. Field order is fixed and documented in the README:
//   catalog.jsonl   {"kind","id","name","parent_id"} for categories,
//                   {"kind","id","name","category_id"} for products
//   purchases.jsonl {"user_id","product_id","timestamp"}
//   questions.jsonl {"question_id","user_id","product_id","timestamp",
//                    "question_tokens","answer_tokens","label","split"}

void write_dataset(const Dataset& ds, const std::string& dir);
Dataset read_dataset(const std::string& dir);

}  // namespace spqi
