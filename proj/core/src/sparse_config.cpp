#include "nmsearch/sparse_config.hpp"

#include <nlohmann/json.hpp>

#include "nmsearch/errors.hpp"

namespace nmsearch {

std::vector<std::string> SparseConfig::to_strings() const {
  std::vector<std::string> out;
  out.reserve(levels.size());
  for (const auto& l : levels) out.push_back(l.to_string());
  return out;
}

SparseConfig SparseConfig::from_strings(const std::vector<std::string>& items) {
  SparseConfig c;
  c.levels.reserve(items.size());
  for (const auto& s : items) c.levels.push_back(SparsityLevel::parse(s));
  return c;
}

std::string SparseConfig::to_json() const { return nlohmann::json(to_strings()).dump(); }

SparseConfig SparseConfig::from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw InvalidInputError(std::string("sparse config JSON: ") + e.what());
  }
  if (!j.is_array()) throw InvalidInputError("sparse config JSON must be an array of \"N:M\" strings");
  std::vector<std::string> items;
  for (const auto& e : j) {
    if (!e.is_string()) throw InvalidInputError("sparse config JSON entries must be strings");
    items.push_back(e.get<std::string>());
  }
  return from_strings(items);
}

}  // namespace nmsearch
