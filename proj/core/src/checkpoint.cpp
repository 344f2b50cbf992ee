#include "nmsearch/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

#include "nmsearch/errors.hpp"

namespace nmsearch {

namespace {

constexpr char kMagic[8] = {'N', 'M', 'S', 'C', 'K', 'P', 'T', '\0'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

std::uint32_t get_u32(const std::string& in, std::size_t pos) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) {
    v |= static_cast<std::uint32_t>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
  }
  return v;
}

}  // namespace

nlohmann::json arch_to_json(const ArchSpec& arch) {
  return {{"kind", to_string(arch.kind)},       {"blocks", arch.blocks},
          {"embed_dim", arch.embed_dim},        {"mlp_ratio", arch.mlp_ratio},
          {"num_heads", arch.num_heads},        {"image_side", arch.image_side},
          {"patch_side", arch.patch_side},      {"channels", arch.channels},
          {"num_classes", arch.num_classes}};
}

ArchSpec arch_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("arch must be a JSON object");
  static const std::set<std::string> known = {"kind",       "blocks",     "embed_dim",
                                              "mlp_ratio",  "num_heads",  "image_side",
                                              "patch_side", "channels",   "num_classes"};
  for (const auto& [key, value] : j.items()) {
    if (!known.count(key)) throw ConfigError("arch: unknown key '" + key + "'");
  }
  ArchSpec a;
  try {
    if (j.contains("kind")) a.kind = parse_arch_kind(j.at("kind").get<std::string>());
    auto read = [&](const char* key, std::size_t& field) {
      if (j.contains(key)) field = j.at(key).get<std::size_t>();
    };
    read("blocks", a.blocks);
    read("embed_dim", a.embed_dim);
    read("mlp_ratio", a.mlp_ratio);
    read("num_heads", a.num_heads);
    read("image_side", a.image_side);
    read("patch_side", a.patch_side);
    read("channels", a.channels);
    read("num_classes", a.num_classes);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("arch: ") + e.what());
  }
  a.validate();
  return a;
}

std::string serialize_checkpoint(const DenseModel& model) {
  nlohmann::json tensors = nlohmann::json::array();
  std::string data;
  model.params.for_each([&](const std::string& name, const Matrix<float>& m) {
    tensors.push_back({{"name", name}, {"rows", m.rows()}, {"cols", m.cols()}});
    for (const float v : m.flat()) put_u32(data, std::bit_cast<std::uint32_t>(v));
  });
  const std::string header =
      nlohmann::json{{"arch", arch_to_json(model.arch)}, {"tensors", tensors}, {"optimizer_state", false}}
          .dump();
  std::string out(kMagic, sizeof(kMagic));
  put_u32(out, kVersion);
  put_u32(out, static_cast<std::uint32_t>(header.size()));
  out += header;
  out += data;
  return out;
}

DenseModel deserialize_checkpoint(const std::string& bytes) {
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) {
    throw DecodeError("checkpoint: bad magic");
  }
  const std::uint32_t version = get_u32(bytes, 8);
  if (version != kVersion) throw DecodeError("checkpoint: unsupported version " + std::to_string(version));
  const std::uint32_t header_len = get_u32(bytes, 12);
  if (bytes.size() < 16 + static_cast<std::size_t>(header_len)) throw DecodeError("checkpoint: truncated header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.substr(16, header_len));
  } catch (const nlohmann::json::exception& e) {
    throw DecodeError(std::string("checkpoint header: ") + e.what());
  }
  DenseModel model;
  try {
    model.arch = arch_from_json(header.at("arch"));
  } catch (const nlohmann::json::exception& e) {
    throw DecodeError(std::string("checkpoint header: ") + e.what());
  }
  model.params = VitParams<float>::zeros(model.arch);
  const auto& tensors = header.at("tensors");
  std::size_t index = 0;
  std::size_t pos = 16 + header_len;
  model.params.for_each([&](const std::string& name, Matrix<float>& m) {
    if (index >= tensors.size()) throw DecodeError("checkpoint: missing tensor " + name);
    const auto& t = tensors[index++];
    if (t.at("name").get<std::string>() != name || t.at("rows").get<std::size_t>() != m.rows() ||
        t.at("cols").get<std::size_t>() != m.cols()) {
      throw DecodeError("checkpoint: tensor mismatch at " + name);
    }
    if (bytes.size() < pos + 4 * m.size()) throw DecodeError("checkpoint: truncated data at " + name);
    for (float& v : m.flat()) {
      v = std::bit_cast<float>(get_u32(bytes, pos));
      pos += 4;
    }
  });
  if (index != tensors.size() || pos != bytes.size()) throw DecodeError("checkpoint: trailing data");
  return model;
}

void save_checkpoint(const std::filesystem::path& path, const DenseModel& model) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InvalidInputError("cannot open " + path.string() + " for writing");
  const std::string bytes = serialize_checkpoint(model);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw InvalidInputError("failed writing " + path.string());
}

DenseModel load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidInputError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return deserialize_checkpoint(ss.str());
}

}  // namespace nmsearch
