#pragma once

#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "freekd/diffcore.hpp"

namespace freekd {

// Container file: magic "FKD1", a u64 little-endian header length, a JSON
// header listing (name, shape, byte offset) per tensor plus free-form
// metadata, then raw little-endian float64 blobs. Round-trips bit-exactly.
struct Checkpoint {
  nlohmann::json meta = nlohmann::json::object();
  std::vector<std::pair<std::string, Tensor>> entries;

  void add(const std::string& name, const Tensor& t) { entries.emplace_back(name, t); }
  bool has(const std::string& name) const;
  // StructureError if missing.
  Tensor get(const std::string& name) const;

  void save(const std::string& path) const;
  static Checkpoint load(const std::string& path);
};

}  // namespace freekd
