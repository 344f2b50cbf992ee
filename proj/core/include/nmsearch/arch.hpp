#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace nmsearch {

enum class ArchKind {
  vit,           // patch embedding, pre-LN transformer blocks, mean-pool head
  linear_stack,  // only the prunable linear modules; no fixed cost
};

enum class ModuleRole { qkv, proj, fc1, fc2 };

const char* to_string(ModuleRole role);
const char* to_string(ArchKind kind);
ArchKind parse_arch_kind(const std::string& text);

// One prunable linear module. Weight shape is rows (out) x cols (in).
struct PrunableModule {
  std::size_t index = 0;
  std::size_t block = 0;
  ModuleRole role = ModuleRole::qkv;
  std::size_t rows = 0;
  std::size_t cols = 0;
};

struct ArchSpec {
  ArchKind kind = ArchKind::vit;
  std::size_t blocks = 2;
  std::size_t embed_dim = 32;
  std::size_t mlp_ratio = 2;
  std::size_t num_heads = 2;
  std::size_t image_side = 16;
  std::size_t patch_side = 4;
  std::size_t channels = 1;
  std::size_t num_classes = 4;

  std::size_t tokens() const;
  std::size_t patch_dim() const { return patch_side * patch_side * channels; }
  std::size_t input_size() const { return image_side * image_side * channels; }
  std::size_t hidden_dim() const { return embed_dim * mlp_ratio; }
  std::size_t head_dim() const { return embed_dim / num_heads; }
  std::size_t num_prunable() const { return 4 * blocks; }

  // Modules in order block-major, then qkv, proj, fc1, fc2.
  std::vector<PrunableModule> prunable_modules() const;

  // Throws ConfigError on inconsistent dimensions.
  void validate() const;

  friend bool operator==(const ArchSpec&, const ArchSpec&) = default;
};

}  // namespace nmsearch
