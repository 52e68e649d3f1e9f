#include <doctest.h>

#include <cmath>

#include "helpers.hpp"
#include "ofb/bimask.hpp"
#include "ofb/cost_model.hpp"
#include "ofb/gradcheck.hpp"
#include "ofb/vit.hpp"

using namespace ofb;

namespace {

// MACs of the classification forward pass, written out per layer.
double flops_oracle(const ToyViTConfig& m, double e, const std::vector<LayerWidths>& layers) {
  const double n = static_cast<double>(m.tokens());
  double f = n * static_cast<double>(m.patch_pixels()) * e + static_cast<double>(m.classes) * e;
  for (const auto& l : layers) {
    const double hc = static_cast<double>(l.heads * l.head_channels);
    f += 3 * n * e * hc;               // q, k, v
    f += n * n * hc + n * n * hc;      // scores, context
    f += n * hc * e;                   // output projection
    f += 2 * n * e * static_cast<double>(l.mlp);
  }
  return f;
}

void one_hot_all(SearchSpace& space, std::mt19937_64& rng) {
  for (auto& s : space.submodules) {
    const std::size_t d = s.d_live();
    const std::size_t k = rng() % d;
    std::vector<double> a(d, -1e4);
    a[k] = 0.0;
    s.alpha = Tensor::from(a, {d});
  }
}

Architecture vertex_architecture(SearchSpace space) {
  for (auto& s : space.submodules) {
    const auto p = testing::values(s.alpha);
    const std::size_t k = std::max_element(p.begin(), p.end()) - p.begin();
    std::vector<std::size_t> drop;
    for (std::size_t j = 0; j < s.d_live(); ++j) {
      if (j != k) drop.push_back(s.live_steps[j]);
    }
    if (!drop.empty()) prune_steps(s, drop);
  }
  return export_architecture(space);
}

}  // namespace

TEST_CASE("full counts") {
  const ToyViTConfig m;
  const auto coeffs = calibrate(m);
  CHECK(coeffs.calibrated);
  CHECK(coeffs.full_flops == 1605760.0);
  CHECK(coeffs.full_flops == flops_oracle(m, 32, {{4, 8, 64}, {4, 8, 64}}));
  CHECK(coeffs.full_params == 19876.0);
  for (const auto& t : coeffs.flops) CHECK(t.coef >= 0.0);

  const auto full = full_architecture(m, SpaceConfig{});
  const auto r = discrete_cost(full, m, coeffs);
  CHECK(r.flops == 1605760u);
  CHECK(r.params == 19876u);
  CHECK(r.flops_fraction == 1.0);
  CHECK(discrete_cost(full, m, coeffs).flops == r.flops);
}

TEST_CASE("expected width") {
  auto st = testing::make_state({8, 16, 24, 32}, {0, 0, 0, 0}, std::vector<double>(32, 0.0));
  CHECK(expected_width(st).item() == doctest::Approx(20.0).epsilon(1e-15));
  double staircase = 0.0;
  for (double v : testing::values(sparsity_scores(st))) staircase += v;
  CHECK(staircase == doctest::Approx(20.0).epsilon(1e-15));
  st.alpha = Tensor::from({-1e4, -1e4, -1e4, 0.0}, {4});
  CHECK(expected_width(st).item() == 32.0);
  st.alpha = Tensor::from({0.0, -1e4, -1e4, -1e4}, {4});
  CHECK(expected_width(st).item() == 8.0);
}

TEST_CASE("g at the grid extremes") {
  const ToyViTConfig m;
  const auto coeffs = calibrate(m);
  SearchSpace space = build_space(m, SpaceConfig{}, 1);
  for (auto& s : space.submodules) {
    std::vector<double> a(s.d_live(), -1e4);
    a.back() = 0.0;
    s.alpha = Tensor::from(a, {a.size()});
  }
  CHECK(g_of_V(space, coeffs).item() == doctest::Approx(1.0).epsilon(1e-14));
  for (auto& s : space.submodules) {
    std::vector<double> a(s.d_live(), -1e4);
    a.front() = 0.0;
    s.alpha = Tensor::from(a, {a.size()});
  }
  // embed 16, one head of 2 channels, mlp 16
  const double minimal = flops_oracle(m, 16, {{1, 2, 16}, {1, 2, 16}});
  CHECK(g_of_V(space, coeffs).item() * coeffs.full_flops == doctest::Approx(minimal).epsilon(1e-14));
  CHECK(discrete_cost(vertex_architecture(space), m, coeffs).flops == static_cast<std::uint64_t>(minimal));

  CostCoefficients raw = coeffs;
  raw.calibrated = false;
  CHECK_THROWS_AS(g_of_V(space, raw), StateError);
}

TEST_CASE("vertex consistency") {
  const ToyViTConfig m;
  const auto coeffs = calibrate(m);
  std::mt19937_64 rng(21);
  for (int trial = 0; trial < 50; ++trial) {
    SearchSpace space = build_space(m, SpaceConfig{}, trial);
    one_hot_all(space, rng);
    const double g = g_of_V(space, coeffs).item();
    const auto r = discrete_cost(vertex_architecture(space), m, coeffs);
    CHECK(std::llround(g * coeffs.full_flops) == static_cast<long long>(r.flops));
    CHECK(std::fabs(g * coeffs.full_flops - static_cast<double>(r.flops)) < 1e-6);
  }
}

TEST_CASE("halving the mlp halves only its term") {
  const ToyViTConfig m;
  const auto coeffs = calibrate(m);
  auto arch = full_architecture(m, SpaceConfig{});
  for (auto& e : arch.submodules) {
    if (e.kind == SubmoduleKind::MlpChannels) e.kept_units.resize(32);
  }
  const auto r = discrete_cost(arch, m, coeffs);
  CHECK(r.flops == 1605760u - 2 * (2 * 64 * 32 * 32));
  CHECK(r.params == 19876u - 2 * (32 * 32 + 32 + 32 * 32));
}

TEST_CASE("g is monotone and differentiable") {
  const ToyViTConfig m;
  const auto coeffs = calibrate(m);
  SearchSpace space = build_space(m, SpaceConfig{}, 4);
  const double g0 = g_of_V(space, coeffs).item();
  for (std::size_t i = 0; i < space.size(); ++i) {
    SearchSpace up = space;
    auto a = testing::values(up.submodules[i].alpha);
    a.back() += 0.5;
    up.submodules[i].alpha = Tensor::from(a, {a.size()});
    CHECK(g_of_V(up, coeffs).item() >= g0);
  }
  std::vector<std::size_t> sizes;
  std::vector<double> flat;
  for (const auto& s : space.submodules) {
    sizes.push_back(s.d_live());
    for (double x : testing::values(s.alpha)) flat.push_back(x);
  }
  const auto f = [&](const Tensor& theta) {
    SearchSpace sp = space;
    std::size_t off = 0;
    for (std::size_t i = 0; i < sp.size(); ++i) {
      std::vector<std::size_t> idx(sizes[i]);
      std::iota(idx.begin(), idx.end(), off);
      sp.submodules[i].alpha = gather(theta, idx, {sizes[i]});
      off += sizes[i];
    }
    return g_of_V(sp, coeffs);
  };
  CHECK(gradient_check(f, Tensor::from(flat, {flat.size()})) < 1e-5);
}
