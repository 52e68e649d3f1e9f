#pragma once

// Toy Vision Transformer used as the searchable supernet.
//
// Mask insertion points (all optional, full-width, multiplicative):
//   patch_embed : residual-stream channels. Applied after patch embedding +
//                 positional embedding, to every block output, and as the
//                 channel weights of every layer norm, so a zero channel is
//                 excluded from normalization statistics.
//   qkv         : per-head channel index, shared by q, k, v and all heads.
//   heads       : per-head context output, before the output projection.
//   mlp         : hidden units, after GELU.

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ofb/bimask.hpp"
#include "ofb/model_config.hpp"
#include "ofb/search_space.hpp"
#include "ofb/tensor.hpp"

namespace ofb {

struct LayerWidths {
  std::size_t heads;
  std::size_t head_channels;
  std::size_t mlp;
  bool operator==(const LayerWidths&) const = default;
};

// Live widths of a (possibly pruned) model. `base` keeps the full-width
// configuration: token count, patch size, classes, and the attention scale
// 1/sqrt(base.head_dim), which is never changed by pruning.
struct ViTArch {
  ToyViTConfig base;
  std::size_t embed = 0;
  std::vector<LayerWidths> layers;

  static ViTArch full(const ToyViTConfig& config);
  bool operator==(const ViTArch& o) const { return embed == o.embed && layers == o.layers; }
};

struct Linear {
  Tensor weight;  // [in, out]
  Tensor bias;    // [out]
};

struct Block {
  Tensor norm1_weight, norm1_bias;
  Linear qkv;  // out layout: ((which * heads) + head) * head_channels + channel
  Linear proj;
  Tensor norm2_weight, norm2_bias;
  Linear fc1, fc2;
};

class ViTModel {
 public:
  ViTArch arch;
  Linear patch_embed;
  Tensor pos_embed;   // [tokens, embed]
  Tensor mask_token;  // [embed]
  std::vector<Block> blocks;
  Tensor norm_weight, norm_bias;
  Linear head;
  Linear decoder;  // per-patch pixel reconstruction

  static ViTModel init(const ViTArch& arch, std::uint64_t seed);

  // Every tensor, in a fixed order.
  std::vector<std::pair<std::string, Tensor>> named_tensors() const;
  // Deployed parameters: excludes the mask token and the decoder.
  std::size_t parameter_count() const;
  ViTModel clone() const;
  void set_requires_grad(bool flag);
};

// Full-width mask vectors; an undefined tensor means "no mask".
struct SupernetMasks {
  Tensor patch_embed;
  struct Layer {
    Tensor qkv;
    Tensor heads;
    Tensor mlp;
  };
  std::vector<Layer> layers;
};

SupernetMasks masks_from_bimask(const SearchSpace& space, const BiMaskSnapshot& snapshot);
// 1 for kept units, 0 for pruned ones; constants.
SupernetMasks hardened_masks(const Architecture& arch, const ToyViTConfig& config);

struct MaskedForwardOutput {
  Tensor logits;          // [batch, classes]
  Tensor reconstruction;  // [masked patches, patch pixels]; undefined when none
  std::vector<std::uint8_t> mask_positions;  // [batch * tokens]
  std::vector<std::size_t> masked_rows;      // flat (batch, token) of masked patches
};

// `patches` is [batch, tokens, patch_pixels] row-major. `mask_positions`
// is empty or [batch * tokens]; masked patches are replaced by the mask
// token before the encoder.
MaskedForwardOutput forward(const ViTModel& model, std::span<const double> patches,
                            std::size_t batch, const SupernetMasks& masks,
                            std::span<const std::uint8_t> mask_positions = {},
                            bool reconstruct = false);

// Mean absolute pixel error over masked patches; 0 when nothing is masked.
Tensor reconstruct_loss(const MaskedForwardOutput& out, std::span<const double> patches,
                        std::size_t patch_pixels);

// Dense model holding only the units kept by `arch`.
ViTModel materialize(const Architecture& arch, const ViTModel& supernet);
// Requires every submodule to be decided (one live step); throws StateError otherwise.
ViTModel materialize(const SearchSpace& space, const ViTModel& supernet);

}  // namespace ofb
