#pragma once

#include <cstddef>

namespace ofb {

// Full-width shape of the toy Vision Transformer supernet. Images are
// single-channel, so a patch carries patch_size^2 pixels.
struct ToyViTConfig {
  std::size_t image_size = 32;
  std::size_t patch_size = 4;
  std::size_t embed_dim = 32;
  std::size_t depth = 2;
  std::size_t heads = 4;
  std::size_t head_dim = 8;
  std::size_t mlp_dim = 64;
  std::size_t classes = 4;

  std::size_t tokens() const {
    const std::size_t side = image_size / patch_size;
    return side * side;
  }
  std::size_t patch_pixels() const { return patch_size * patch_size; }

  // Throws ConfigError-like ofb::Error on violated invariants.
  void validate() const;
};

}  // namespace ofb
