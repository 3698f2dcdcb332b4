#include "freekd/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>

namespace freekd {

static_assert(std::endian::native == std::endian::little,
              "checkpoint blobs are little-endian; big-endian hosts are unsupported");

namespace {
constexpr char kMagic[4] = {'F', 'K', 'D', '1'};
}

bool Checkpoint::has(const std::string& name) const {
  for (const auto& [n, t] : entries)
    if (n == name) return true;
  return false;
}

Tensor Checkpoint::get(const std::string& name) const {
  for (const auto& [n, t] : entries)
    if (n == name) return t;
  throw StructureError("checkpoint has no tensor named '" + name + "'");
}

void Checkpoint::save(const std::string& path) const {
  nlohmann::json header;
  header["meta"] = meta;
  auto& tensors = header["tensors"] = nlohmann::json::array();
  uint64_t offset = 0;
  for (const auto& [name, t] : entries) {
    tensors.push_back({{"name", name},
                       {"shape", t.shape()},
                       {"offset", offset},
                       {"count", t.numel()}});
    offset += static_cast<uint64_t>(t.numel()) * sizeof(double);
  }
  const std::string hs = header.dump();

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open '" + path + "' for writing");
  f.write(kMagic, 4);
  const uint64_t hlen = hs.size();
  f.write(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
  f.write(hs.data(), static_cast<std::streamsize>(hs.size()));
  for (const auto& [name, t] : entries)
    f.write(reinterpret_cast<const char*>(t.data()),
            static_cast<std::streamsize>(t.numel() * sizeof(double)));
  if (!f) throw IoError("write failed for '" + path + "'");
}

Checkpoint Checkpoint::load(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open '" + path + "'");
  char magic[4];
  f.read(magic, 4);
  if (!f || std::memcmp(magic, kMagic, 4) != 0)
    throw StructureError("'" + path + "' is not a checkpoint container");
  uint64_t hlen = 0;
  f.read(reinterpret_cast<char*>(&hlen), sizeof(hlen));
  std::string hs(hlen, '\0');
  f.read(hs.data(), static_cast<std::streamsize>(hlen));
  if (!f) throw StructureError("truncated checkpoint header in '" + path + "'");

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(hs);
  } catch (const nlohmann::json::exception& e) {
    throw StructureError("bad checkpoint header in '" + path + "': " + e.what());
  }

  Checkpoint ck;
  ck.meta = header.value("meta", nlohmann::json::object());
  const std::streampos blob_base = f.tellg();
  for (const auto& rec : header.at("tensors")) {
    const std::string name = rec.at("name").get<std::string>();
    Shape shape = rec.at("shape").get<Shape>();
    const uint64_t offset = rec.at("offset").get<uint64_t>();
    const int64_t count = rec.at("count").get<int64_t>();
    if (count != numel_of(shape))
      throw StructureError("checkpoint entry '" + name + "' has inconsistent extents");
    std::vector<double> data(static_cast<size_t>(count));
    f.seekg(blob_base + static_cast<std::streamoff>(offset));
    f.read(reinterpret_cast<char*>(data.data()),
           static_cast<std::streamsize>(count * sizeof(double)));
    if (!f) throw StructureError("truncated blob for '" + name + "' in '" + path + "'");
    ck.add(name, Tensor::from_data(std::move(shape), std::move(data)));
  }
  return ck;
}

}  // namespace freekd
