#include "ofb/vit.hpp"

#include <cmath>
#include <random>

#include "ofb/runtime.hpp"

namespace ofb {

ViTArch ViTArch::full(const ToyViTConfig& config) {
  config.validate();
  ViTArch a;
  a.base = config;
  a.embed = config.embed_dim;
  a.layers.assign(config.depth, LayerWidths{config.heads, config.head_dim, config.mlp_dim});
  return a;
}

namespace {

Tensor randn(Shape shape, double std, std::mt19937_64& rng) {
  std::vector<double> v(numel_of(shape));
  for (auto& x : v) x = std * standard_normal(rng);
  return Tensor::from(std::move(v), std::move(shape), true);
}

Linear make_linear(std::size_t in, std::size_t out, std::mt19937_64& rng) {
  return {randn({in, out}, 1.0 / std::sqrt(static_cast<double>(in)), rng),
          Tensor::zeros({out}, true)};
}

}  // namespace

ViTModel ViTModel::init(const ViTArch& arch, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const auto& cfg = arch.base;
  const std::size_t e = arch.embed;
  ViTModel m;
  m.arch = arch;
  m.patch_embed = make_linear(cfg.patch_pixels(), e, rng);
  m.pos_embed = randn({cfg.tokens(), e}, 0.02, rng);
  m.mask_token = Tensor::zeros({e}, true);
  for (const auto& lw : arch.layers) {
    const std::size_t hc = lw.heads * lw.head_channels;
    Block b;
    b.norm1_weight = Tensor::full({e}, 1.0, true);
    b.norm1_bias = Tensor::zeros({e}, true);
    b.qkv = make_linear(e, 3 * hc, rng);
    b.proj = make_linear(hc, e, rng);
    b.norm2_weight = Tensor::full({e}, 1.0, true);
    b.norm2_bias = Tensor::zeros({e}, true);
    b.fc1 = make_linear(e, lw.mlp, rng);
    b.fc2 = make_linear(lw.mlp, e, rng);
    m.blocks.push_back(std::move(b));
  }
  m.norm_weight = Tensor::full({e}, 1.0, true);
  m.norm_bias = Tensor::zeros({e}, true);
  m.head = make_linear(e, cfg.classes, rng);
  m.decoder = make_linear(e, cfg.patch_pixels(), rng);
  return m;
}

std::vector<std::pair<std::string, Tensor>> ViTModel::named_tensors() const {
  std::vector<std::pair<std::string, Tensor>> out;
  out.emplace_back("patch_embed.weight", patch_embed.weight);
  out.emplace_back("patch_embed.bias", patch_embed.bias);
  out.emplace_back("pos_embed", pos_embed);
  out.emplace_back("mask_token", mask_token);
  for (std::size_t l = 0; l < blocks.size(); ++l) {
    const auto& b = blocks[l];
    const std::string p = "blocks." + std::to_string(l) + ".";
    out.emplace_back(p + "norm1.weight", b.norm1_weight);
    out.emplace_back(p + "norm1.bias", b.norm1_bias);
    out.emplace_back(p + "attn.qkv.weight", b.qkv.weight);
    out.emplace_back(p + "attn.qkv.bias", b.qkv.bias);
    out.emplace_back(p + "attn.proj.weight", b.proj.weight);
    out.emplace_back(p + "attn.proj.bias", b.proj.bias);
    out.emplace_back(p + "norm2.weight", b.norm2_weight);
    out.emplace_back(p + "norm2.bias", b.norm2_bias);
    out.emplace_back(p + "mlp.fc1.weight", b.fc1.weight);
    out.emplace_back(p + "mlp.fc1.bias", b.fc1.bias);
    out.emplace_back(p + "mlp.fc2.weight", b.fc2.weight);
    out.emplace_back(p + "mlp.fc2.bias", b.fc2.bias);
  }
  out.emplace_back("norm.weight", norm_weight);
  out.emplace_back("norm.bias", norm_bias);
  out.emplace_back("head.weight", head.weight);
  out.emplace_back("head.bias", head.bias);
  out.emplace_back("decoder.weight", decoder.weight);
  out.emplace_back("decoder.bias", decoder.bias);
  return out;
}

std::size_t ViTModel::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : named_tensors()) {
    if (name == "mask_token" || name.rfind("decoder.", 0) == 0) continue;
    n += t.numel();
  }
  return n;
}

ViTModel ViTModel::clone() const {
  ViTModel m = *this;
  auto copy = [](Tensor& t) {
    const bool rg = t.requires_grad();
    t = t.detach();
    t.set_requires_grad(rg);
  };
  auto copy_lin = [&](Linear& l) {
    copy(l.weight);
    copy(l.bias);
  };
  copy_lin(m.patch_embed);
  copy(m.pos_embed);
  copy(m.mask_token);
  for (auto& b : m.blocks) {
    copy(b.norm1_weight);
    copy(b.norm1_bias);
    copy_lin(b.qkv);
    copy_lin(b.proj);
    copy(b.norm2_weight);
    copy(b.norm2_bias);
    copy_lin(b.fc1);
    copy_lin(b.fc2);
  }
  copy(m.norm_weight);
  copy(m.norm_bias);
  copy_lin(m.head);
  copy_lin(m.decoder);
  return m;
}

void ViTModel::set_requires_grad(bool flag) {
  for (auto& [name, t] : named_tensors()) {
    Tensor h = t;
    h.set_requires_grad(flag);
  }
}

// ---------------------------------------------------------------------------
// Masks
// ---------------------------------------------------------------------------

SupernetMasks masks_from_bimask(const SearchSpace& space, const BiMaskSnapshot& snapshot) {
  if (snapshot.submodules.size() != space.size()) {
    throw ShapeError("masks_from_bimask: snapshot has " +
                     std::to_string(snapshot.submodules.size()) + " submodules, space has " +
                     std::to_string(space.size()));
  }
  SupernetMasks masks;
  int depth = -1;
  for (const auto& s : space.submodules) depth = std::max(depth, s.spec.layer);
  masks.layers.resize(static_cast<std::size_t>(depth + 1));
  for (std::size_t i = 0; i < space.size(); ++i) {
    const auto& st = space.submodules[i];
    Tensor full = expand_to_full(st, snapshot.submodules[i].m);
    switch (st.spec.kind) {
      case SubmoduleKind::PatchEmbedChannels: masks.patch_embed = full; break;
      case SubmoduleKind::QkvChannels: masks.layers.at(st.spec.layer).qkv = full; break;
      case SubmoduleKind::HeadCount: masks.layers.at(st.spec.layer).heads = full; break;
      case SubmoduleKind::MlpChannels: masks.layers.at(st.spec.layer).mlp = full; break;
    }
  }
  return masks;
}

SupernetMasks hardened_masks(const Architecture& arch, const ToyViTConfig& config) {
  auto binary = [](const ArchitectureEntry& e) {
    std::vector<double> v(e.full_width, 0.0);
    for (auto u : e.kept_units) v.at(u) = 1.0;
    return Tensor::from(std::move(v), {e.full_width});
  };
  SupernetMasks masks;
  masks.patch_embed = binary(arch.find(SubmoduleKind::PatchEmbedChannels, -1));
  for (std::size_t l = 0; l < config.depth; ++l) {
    const int layer = static_cast<int>(l);
    masks.layers.push_back({binary(arch.find(SubmoduleKind::QkvChannels, layer)),
                            binary(arch.find(SubmoduleKind::HeadCount, layer)),
                            binary(arch.find(SubmoduleKind::MlpChannels, layer))});
  }
  return masks;
}

// ---------------------------------------------------------------------------
// Forward
// ---------------------------------------------------------------------------

namespace {

Tensor linear(const Tensor& x2d, const Linear& l) { return add(matmul(x2d, l.weight), l.bias); }

Tensor maybe_mul(const Tensor& x, const Tensor& mask) { return mask.defined() ? mul(x, mask) : x; }

void check_mask(const Tensor& mask, std::size_t width, const std::string& site) {
  if (mask.defined() && mask.shape() != Shape{width}) {
    throw ShapeError("forward: mask for site " + site + " has shape " + shape_str(mask.shape()) +
                     ", expected [" + std::to_string(width) + "]");
  }
}

}  // namespace

MaskedForwardOutput forward(const ViTModel& model, std::span<const double> patches,
                            std::size_t batch, const SupernetMasks& masks,
                            std::span<const std::uint8_t> mask_positions, bool reconstruct) {
  const auto& cfg = model.arch.base;
  const std::size_t n = cfg.tokens();
  const std::size_t p = cfg.patch_pixels();
  const std::size_t e = model.arch.embed;
  const std::size_t rows = batch * n;
  if (patches.size() != rows * p) throw ShapeError("forward: patch buffer size mismatch");
  if (!mask_positions.empty() && mask_positions.size() != rows) {
    throw ShapeError("forward: mask_positions must have batch * tokens entries");
  }
  check_mask(masks.patch_embed, e, "patch-embed");
  if (!masks.layers.empty() && masks.layers.size() != model.blocks.size()) {
    throw ShapeError("forward: mask layers do not match model depth");
  }

  MaskedForwardOutput out;
  out.mask_positions.assign(mask_positions.begin(), mask_positions.end());
  for (std::size_t r = 0; r < mask_positions.size(); ++r) {
    if (mask_positions[r]) out.masked_rows.push_back(r);
  }

  Tensor x_in = Tensor::from(std::vector<double>(patches.begin(), patches.end()), {rows, p});
  Tensor tok = linear(x_in, model.patch_embed);  // [rows, e]
  if (!out.masked_rows.empty()) {
    std::vector<double> keep(rows * e, 1.0), flag(rows * e, 0.0);
    for (auto r : out.masked_rows) {
      for (std::size_t c = 0; c < e; ++c) {
        keep[r * e + c] = 0.0;
        flag[r * e + c] = 1.0;
      }
    }
    tok = add(mul(tok, Tensor::from(std::move(keep), {rows, e})),
              mul(Tensor::from(std::move(flag), {rows, e}), model.mask_token));
  }
  Tensor x = add(reshape(tok, {batch, n, e}), model.pos_embed);
  const Tensor& m_pe = masks.patch_embed;
  x = maybe_mul(x, m_pe);

  const double scale = 1.0 / std::sqrt(static_cast<double>(cfg.head_dim));
  for (std::size_t l = 0; l < model.blocks.size(); ++l) {
    const Block& blk = model.blocks[l];
    const LayerWidths& lw = model.arch.layers[l];
    const std::size_t h = lw.heads, c = lw.head_channels, hc = h * c;
    SupernetMasks::Layer lm = masks.layers.empty() ? SupernetMasks::Layer{} : masks.layers[l];
    const std::string site = "layer " + std::to_string(l);
    check_mask(lm.qkv, c, site + " qkv");
    check_mask(lm.heads, h, site + " heads");
    check_mask(lm.mlp, lw.mlp, site + " mlp");

    // Attention.
    Tensor y = maybe_mul(layer_norm(x, blk.norm1_weight, blk.norm1_bias, m_pe), m_pe);
    Tensor qkv = linear(reshape(y, {rows, e}), blk.qkv);  // [rows, 3hc]
    if (lm.qkv.defined()) {
      std::vector<std::size_t> idx(3 * hc);
      for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i % c;
      qkv = mul(qkv, gather(lm.qkv, idx, {3 * hc}));
    }
    Tensor qkvp = permute(reshape(qkv, {batch, n, 3, h, c}), {2, 0, 3, 1, 4});
    Tensor q = reshape(slice0(qkvp, 0, 1), {batch * h, n, c});
    Tensor k = reshape(slice0(qkvp, 1, 1), {batch * h, n, c});
    Tensor v = reshape(slice0(qkvp, 2, 1), {batch * h, n, c});
    Tensor att = softmax(affine(matmul(q, transpose_last2(k)), scale));
    Tensor ctx = reshape(matmul(att, v), {batch, h, n, c});
    if (lm.heads.defined()) {
      std::vector<std::size_t> idx(h * n * c);
      for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i / (n * c);
      ctx = mul(ctx, gather(lm.heads, idx, {h, n, c}));
    }
    ctx = reshape(permute(ctx, {0, 2, 1, 3}), {rows, hc});
    Tensor attn_out = maybe_mul(reshape(linear(ctx, blk.proj), {batch, n, e}), m_pe);
    x = add(x, attn_out);

    // MLP.
    y = maybe_mul(layer_norm(x, blk.norm2_weight, blk.norm2_bias, m_pe), m_pe);
    Tensor hidden = maybe_mul(gelu(linear(reshape(y, {rows, e}), blk.fc1)), lm.mlp);
    Tensor mlp_out = maybe_mul(reshape(linear(hidden, blk.fc2), {batch, n, e}), m_pe);
    x = add(x, mlp_out);
  }

  Tensor enc = maybe_mul(layer_norm(x, model.norm_weight, model.norm_bias, m_pe), m_pe);
  out.logits = linear(mean_axis(enc, 1), model.head);

  if (reconstruct && !out.masked_rows.empty()) {
    std::vector<std::size_t> idx;
    idx.reserve(out.masked_rows.size() * e);
    for (auto r : out.masked_rows) {
      for (std::size_t ch = 0; ch < e; ++ch) idx.push_back(r * e + ch);
    }
    Tensor picked = gather(enc, idx, {out.masked_rows.size(), e});
    out.reconstruction = linear(picked, model.decoder);
  }
  return out;
}

Tensor reconstruct_loss(const MaskedForwardOutput& out, std::span<const double> patches,
                        std::size_t patch_pixels) {
  if (out.masked_rows.empty() || !out.reconstruction.defined()) return Tensor::scalar(0.0);
  std::vector<double> target;
  target.reserve(out.masked_rows.size() * patch_pixels);
  for (auto r : out.masked_rows) {
    target.insert(target.end(), patches.begin() + r * patch_pixels,
                  patches.begin() + (r + 1) * patch_pixels);
  }
  return l1_loss(out.reconstruction, target);
}

// ---------------------------------------------------------------------------
// Materialization
// ---------------------------------------------------------------------------

namespace {

Tensor pick_cols(const Tensor& w, const std::vector<std::size_t>& rows,
                 const std::vector<std::size_t>& cols) {
  const std::size_t in_cols = w.dim(1);
  std::vector<double> v;
  v.reserve(rows.size() * cols.size());
  for (auto r : rows) {
    for (auto c : cols) v.push_back(w[r * in_cols + c]);
  }
  return Tensor::from(std::move(v), {rows.size(), cols.size()}, true);
}

Tensor pick(const Tensor& t, const std::vector<std::size_t>& idx) {
  std::vector<double> v;
  v.reserve(idx.size());
  for (auto i : idx) v.push_back(t[i]);
  return Tensor::from(std::move(v), {idx.size()}, true);
}

std::vector<std::size_t> iota(std::size_t n) {
  std::vector<std::size_t> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = i;
  return v;
}

}  // namespace

ViTModel materialize(const Architecture& arch, const ViTModel& supernet) {
  const auto& cfg = supernet.arch.base;
  const ViTArch full = ViTArch::full(cfg);
  if (!(supernet.arch == full)) throw StateError("materialize: source must be the full supernet");

  const auto& pe_ids = arch.find(SubmoduleKind::PatchEmbedChannels, -1).kept_units;
  ViTModel m;
  m.arch.base = cfg;
  m.arch.embed = pe_ids.size();
  const auto pix = iota(cfg.patch_pixels());
  m.patch_embed = {pick_cols(supernet.patch_embed.weight, pix, pe_ids),
                   pick(supernet.patch_embed.bias, pe_ids)};
  m.pos_embed = pick_cols(supernet.pos_embed, iota(cfg.tokens()), pe_ids);
  m.mask_token = pick(supernet.mask_token, pe_ids);

  for (std::size_t l = 0; l < cfg.depth; ++l) {
    const int layer = static_cast<int>(l);
    const auto& c_ids = arch.find(SubmoduleKind::QkvChannels, layer).kept_units;
    const auto& h_ids = arch.find(SubmoduleKind::HeadCount, layer).kept_units;
    const auto& f_ids = arch.find(SubmoduleKind::MlpChannels, layer).kept_units;
    m.arch.layers.push_back({h_ids.size(), c_ids.size(), f_ids.size()});

    // Columns of the full qkv projection that survive, in the pruned layout.
    std::vector<std::size_t> qkv_cols, hc_rows;
    for (std::size_t w = 0; w < 3; ++w) {
      for (auto h : h_ids) {
        for (auto c : c_ids) qkv_cols.push_back((w * cfg.heads + h) * cfg.head_dim + c);
      }
    }
    for (auto h : h_ids) {
      for (auto c : c_ids) hc_rows.push_back(h * cfg.head_dim + c);
    }
    const Block& src = supernet.blocks[l];
    Block b;
    b.norm1_weight = pick(src.norm1_weight, pe_ids);
    b.norm1_bias = pick(src.norm1_bias, pe_ids);
    b.qkv = {pick_cols(src.qkv.weight, pe_ids, qkv_cols), pick(src.qkv.bias, qkv_cols)};
    b.proj = {pick_cols(src.proj.weight, hc_rows, pe_ids), pick(src.proj.bias, pe_ids)};
    b.norm2_weight = pick(src.norm2_weight, pe_ids);
    b.norm2_bias = pick(src.norm2_bias, pe_ids);
    b.fc1 = {pick_cols(src.fc1.weight, pe_ids, f_ids), pick(src.fc1.bias, f_ids)};
    b.fc2 = {pick_cols(src.fc2.weight, f_ids, pe_ids), pick(src.fc2.bias, pe_ids)};
    m.blocks.push_back(std::move(b));
  }
  m.norm_weight = pick(supernet.norm_weight, pe_ids);
  m.norm_bias = pick(supernet.norm_bias, pe_ids);
  m.head = {pick_cols(supernet.head.weight, pe_ids, iota(cfg.classes)), supernet.head.bias.clone()};
  m.head.bias.set_requires_grad(true);
  m.decoder = {pick_cols(supernet.decoder.weight, pe_ids, pix), supernet.decoder.bias.clone()};
  m.decoder.bias.set_requires_grad(true);
  return m;
}

ViTModel materialize(const SearchSpace& space, const ViTModel& supernet) {
  for (const auto& s : space.submodules) {
    if (s.d_live() != 1) {
      throw StateError("materialize: search not finished (" + s.spec.label() + " has " +
                       std::to_string(s.d_live()) + " live steps)");
    }
  }
  return materialize(export_architecture(space), supernet);
}

}  // namespace ofb
