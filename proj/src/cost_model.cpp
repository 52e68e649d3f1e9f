#include "ofb/cost_model.hpp"

#include <cmath>
#include <random>
#include <sstream>

#include "ofb/vit.hpp"

namespace ofb {

std::size_t submodule_slot(SubmoduleKind kind, int layer) {
  switch (kind) {
    case SubmoduleKind::PatchEmbedChannels: return 0;
    case SubmoduleKind::QkvChannels: return 1 + 3 * static_cast<std::size_t>(layer);
    case SubmoduleKind::HeadCount: return 2 + 3 * static_cast<std::size_t>(layer);
    case SubmoduleKind::MlpChannels: return 3 + 3 * static_cast<std::size_t>(layer);
  }
  throw StateError("submodule_slot: unknown kind");
}

double evaluate(const std::vector<CostTerm>& terms, const std::vector<double>& widths) {
  double total = 0.0;
  for (const auto& t : terms) {
    double v = t.coef;
    for (auto f : t.factors) v *= widths.at(f);
    total += v;
  }
  return total;
}

namespace {

ViTArch arch_from_widths(const ToyViTConfig& model, const std::vector<double>& w) {
  ViTArch a;
  a.base = model;
  a.embed = static_cast<std::size_t>(std::llround(w[0]));
  for (std::size_t l = 0; l < model.depth; ++l) {
    const int layer = static_cast<int>(l);
    a.layers.push_back(
        {static_cast<std::size_t>(std::llround(w[submodule_slot(SubmoduleKind::HeadCount, layer)])),
         static_cast<std::size_t>(
             std::llround(w[submodule_slot(SubmoduleKind::QkvChannels, layer)])),
         static_cast<std::size_t>(
             std::llround(w[submodule_slot(SubmoduleKind::MlpChannels, layer)]))});
  }
  return a;
}

std::uint64_t count_macs(const ViTArch& arch) {
  ViTModel m = ViTModel::init(arch, 1);
  const std::size_t rows = arch.base.tokens() * arch.base.patch_pixels();
  std::vector<double> patches(rows, 0.5);
  MacCounter counter;
  forward(m, patches, 1, SupernetMasks{});
  return counter.count();
}

std::vector<CostTerm> closed_form_flops(const ToyViTConfig& m) {
  const double n = static_cast<double>(m.tokens());
  const double p = static_cast<double>(m.patch_pixels());
  const double k = static_cast<double>(m.classes);
  std::vector<CostTerm> t;
  t.push_back({n * p + k, {0}});
  for (std::size_t l = 0; l < m.depth; ++l) {
    const int layer = static_cast<int>(l);
    const auto c = submodule_slot(SubmoduleKind::QkvChannels, layer);
    const auto h = submodule_slot(SubmoduleKind::HeadCount, layer);
    const auto f = submodule_slot(SubmoduleKind::MlpChannels, layer);
    t.push_back({4.0 * n, {0, h, c}});   // qkv + output projection
    t.push_back({2.0 * n * n, {h, c}});  // scores + context
    t.push_back({2.0 * n, {0, f}});      // fc1 + fc2
  }
  return t;
}

std::vector<CostTerm> closed_form_params(const ToyViTConfig& m) {
  const double n = static_cast<double>(m.tokens());
  const double p = static_cast<double>(m.patch_pixels());
  const double k = static_cast<double>(m.classes);
  const double depth = static_cast<double>(m.depth);
  std::vector<CostTerm> t;
  // patch embed (weight + bias), positions, per-layer norms and output
  // biases, final norm, head weight
  t.push_back({p + 1.0 + n + 6.0 * depth + 2.0 + k, {0}});
  t.push_back({k, {}});
  for (std::size_t l = 0; l < m.depth; ++l) {
    const int layer = static_cast<int>(l);
    const auto c = submodule_slot(SubmoduleKind::QkvChannels, layer);
    const auto h = submodule_slot(SubmoduleKind::HeadCount, layer);
    const auto f = submodule_slot(SubmoduleKind::MlpChannels, layer);
    t.push_back({4.0, {0, h, c}});
    t.push_back({3.0, {h, c}});
    t.push_back({2.0, {0, f}});
    t.push_back({1.0, {f}});
  }
  return t;
}

std::vector<double> full_widths(const ToyViTConfig& m) {
  std::vector<double> w(1 + 3 * m.depth);
  w[0] = static_cast<double>(m.embed_dim);
  for (std::size_t l = 0; l < m.depth; ++l) {
    const int layer = static_cast<int>(l);
    w[submodule_slot(SubmoduleKind::QkvChannels, layer)] = static_cast<double>(m.head_dim);
    w[submodule_slot(SubmoduleKind::HeadCount, layer)] = static_cast<double>(m.heads);
    w[submodule_slot(SubmoduleKind::MlpChannels, layer)] = static_cast<double>(m.mlp_dim);
  }
  return w;
}

}  // namespace

CostCoefficients calibrate(const ToyViTConfig& model) {
  model.validate();
  CostCoefficients cc;
  cc.flops = closed_form_flops(model);
  cc.params = closed_form_params(model);

  const auto full = full_widths(model);
  std::vector<std::pair<std::string, std::vector<double>>> settings;
  settings.emplace_back("full", full);
  auto half_pe = full;
  half_pe[0] = std::floor(full[0] / 2.0);
  settings.emplace_back("half patch-embed", half_pe);
  auto one_head = full;
  one_head[submodule_slot(SubmoduleKind::HeadCount, 0)] -= 1.0;
  settings.emplace_back("one head pruned", one_head);
  std::vector<double> minimal(full.size(), 1.0);
  settings.emplace_back("minimal", minimal);
  std::mt19937_64 rng(11);
  for (int r = 0; r < 3; ++r) {
    std::vector<double> w(full.size());
    for (std::size_t i = 0; i < w.size(); ++i) {
      w[i] = static_cast<double>(1 + rng() % static_cast<std::uint64_t>(full[i]));
    }
    settings.emplace_back("random " + std::to_string(r), w);
  }

  for (const auto& [name, w] : settings) {
    const ViTArch arch = arch_from_widths(model, w);
    const double counted = static_cast<double>(count_macs(arch));
    const double poly = evaluate(cc.flops, w);
    const double params = static_cast<double>(ViTModel::init(arch, 1).parameter_count());
    const double poly_params = evaluate(cc.params, w);
    if (counted != poly || params != poly_params) {
      std::ostringstream os;
      os << "cost calibration residual at setting '" << name << "': counted MACs " << counted
         << " vs polynomial " << poly << ", params " << params << " vs " << poly_params;
      throw Error(os.str());
    }
  }
  cc.full_flops = evaluate(cc.flops, full);
  cc.full_params = evaluate(cc.params, full);
  cc.calibrated = true;
  return cc;
}

Tensor expected_width(const SubmoduleState& state) {
  std::vector<double> grid;
  for (auto c : state.live_grid()) grid.push_back(static_cast<double>(c));
  const std::size_t d = grid.size();
  return sum(mul(softmax(state.alpha), Tensor::from(std::move(grid), {d})));
}

Tensor g_from_widths(const std::vector<Tensor>& widths, const CostCoefficients& coeffs) {
  if (!coeffs.calibrated) throw StateError("g_of_V: cost coefficients are not calibrated");
  Tensor total;
  for (const auto& t : coeffs.flops) {
    Tensor term = Tensor::scalar(t.coef / coeffs.full_flops);
    for (auto f : t.factors) term = mul(widths.at(f), term);
    total = total.defined() ? add(total, term) : term;
  }
  return total;
}

Tensor g_of_V(const SearchSpace& space, const CostCoefficients& coeffs) {
  std::vector<Tensor> widths;
  widths.reserve(space.size());
  for (std::size_t i = 0; i < space.size(); ++i) {
    const auto& s = space.submodules[i];
    if (submodule_slot(s.spec.kind, s.spec.layer) != i) {
      throw StateError("g_of_V: search space is not in build order");
    }
    widths.push_back(expected_width(s));
  }
  return g_from_widths(widths, coeffs);
}

std::vector<double> architecture_widths(const Architecture& arch, const ToyViTConfig& model) {
  std::vector<double> w(1 + 3 * model.depth, 0.0);
  for (const auto& e : arch.submodules) {
    w.at(submodule_slot(e.kind, e.layer)) = static_cast<double>(e.kept_units.size());
  }
  return w;
}

std::string CostReport::to_json() const {
  std::ostringstream os;
  os.precision(17);
  os << "{\"flops\": " << flops << ", \"params\": " << params
     << ", \"flops_fraction\": " << flops_fraction << ", \"params_fraction\": " << params_fraction
     << "}";
  return os.str();
}

CostReport discrete_cost(const Architecture& arch, const ToyViTConfig& model,
                         const CostCoefficients& coeffs) {
  return model_cost(arch_from_widths(model, architecture_widths(arch, model)), coeffs);
}

CostReport model_cost(const ViTArch& a, const CostCoefficients& coeffs) {
  CostReport r;
  r.flops = count_macs(a);
  r.params = ViTModel::init(a, 1).parameter_count();
  r.flops_fraction = static_cast<double>(r.flops) / coeffs.full_flops;
  r.params_fraction = static_cast<double>(r.params) / coeffs.full_params;
  return r;
}

}  // namespace ofb
