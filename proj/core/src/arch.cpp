#include "nmsearch/arch.hpp"

#include "nmsearch/errors.hpp"

namespace nmsearch {

const char* to_string(ModuleRole role) {
  switch (role) {
    case ModuleRole::qkv: return "qkv";
    case ModuleRole::proj: return "proj";
    case ModuleRole::fc1: return "fc1";
    case ModuleRole::fc2: return "fc2";
  }
  return "?";
}

const char* to_string(ArchKind kind) {
  return kind == ArchKind::vit ? "vit" : "linear_stack";
}

ArchKind parse_arch_kind(const std::string& text) {
  if (text == "vit") return ArchKind::vit;
  if (text == "linear_stack") return ArchKind::linear_stack;
  throw ConfigError("unknown arch kind \"" + text + "\"");
}

std::size_t ArchSpec::tokens() const {
  if (patch_side == 0) return 0;
  const std::size_t per_side = image_side / patch_side;
  return per_side * per_side;
}

std::vector<PrunableModule> ArchSpec::prunable_modules() const {
  std::vector<PrunableModule> out;
  out.reserve(num_prunable());
  const std::size_t d = embed_dim;
  const std::size_t h = hidden_dim();
  for (std::size_t b = 0; b < blocks; ++b) {
    const std::size_t base = 4 * b;
    out.push_back({base + 0, b, ModuleRole::qkv, 3 * d, d});
    out.push_back({base + 1, b, ModuleRole::proj, d, d});
    out.push_back({base + 2, b, ModuleRole::fc1, h, d});
    out.push_back({base + 3, b, ModuleRole::fc2, d, h});
  }
  return out;
}

void ArchSpec::validate() const {
  if (embed_dim == 0 || mlp_ratio == 0) throw ConfigError("arch: embed_dim and mlp_ratio must be > 0");
  if (patch_side == 0 || image_side == 0 || image_side % patch_side != 0) {
    throw ConfigError("arch: image_side must be a positive multiple of patch_side");
  }
  if (channels == 0) throw ConfigError("arch: channels must be > 0");
  if (kind == ArchKind::vit) {
    if (num_heads == 0 || embed_dim % num_heads != 0) {
      throw ConfigError("arch: embed_dim must be divisible by num_heads");
    }
    if (num_classes < 2) throw ConfigError("arch: num_classes must be >= 2");
  }
}

}  // namespace nmsearch
