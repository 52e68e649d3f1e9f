#include <cmath>
#include <map>
#include <numeric>
#include <random>

#include "ofb/bimask.hpp"
#include "ofb/cost_model.hpp"
#include "ofb/data.hpp"
#include "ofb/gradcheck.hpp"
#include "ofb/pmim.hpp"
#include "ofb/regularizers.hpp"
#include "ofb/runtime.hpp"
#include "ofb/search_space.hpp"
#include "ofb/vit.hpp"

namespace ofb {

namespace {

class Suite {
 public:
  explicit Suite(std::uint64_t seed) : rng_(seed) {}

  Tensor uniform(Shape shape, double lo, double hi) {
    std::uniform_real_distribution<double> u(lo, hi);
    std::vector<double> v(numel_of(shape));
    for (auto& x : v) x = u(rng_);
    return Tensor::from(std::move(v), std::move(shape));
  }

  // Values in [lo, hi] kept at least `gap` away from every point in `avoid`.
  Tensor uniform_avoiding(Shape shape, double lo, double hi, std::vector<double> avoid,
                          double gap) {
    Tensor t = uniform(std::move(shape), lo, hi);
    for (auto& x : t.mutable_data()) {
      for (double a : avoid) {
        if (std::fabs(x - a) < gap) x = a + (x < a ? -gap : gap);
      }
    }
    return t;
  }

  // Reduces an arbitrary output to a scalar with fixed random weights so no
  // coordinate of the gradient cancels by symmetry.
  Tensor project(const Tensor& out) {
    auto it = weights_.find(out.shape());
    if (it == weights_.end()) it = weights_.emplace(out.shape(), uniform(out.shape(), 0.5, 1.5)).first;
    return sum(mul(out, it->second));
  }

  void run(const std::string& name, const std::function<Tensor(const Tensor&)>& f,
           const Tensor& theta, double h = 1e-5) {
    results.push_back({name, theta.numel(), gradient_check(f, theta, h)});
  }

  // Same output checked with respect to each operand in turn.
  void binary(const std::string& name, Tensor (*op)(const Tensor&, const Tensor&), const Tensor& a,
              const Tensor& b) {
    run(name + " (lhs)", [&](const Tensor& x) { return project(op(x, b)); }, a);
    run(name + " (rhs)", [&](const Tensor& x) { return project(op(a, x)); }, b);
  }

  std::vector<GradcheckResult> results;

 private:
  std::mt19937_64 rng_;
  std::map<Shape, Tensor> weights_;
};

// Concatenated logits of every submodule.
Tensor all_alpha(const SearchSpace& space) {
  std::vector<double> v;
  for (const auto& s : space.submodules) v.insert(v.end(), s.alpha.data().begin(), s.alpha.data().end());
  return Tensor::from(std::move(v), {v.size()});
}

Tensor all_importance(const SearchSpace& space) {
  std::vector<double> v;
  for (const auto& s : space.submodules) {
    v.insert(v.end(), s.importance.data().begin(), s.importance.data().end());
  }
  return Tensor::from(std::move(v), {v.size()});
}

// Copy of `space` whose alpha (or importance) tensors are slices of theta.
SearchSpace with_slices(const SearchSpace& space, const Tensor& theta, bool alpha) {
  SearchSpace out = space;
  std::size_t offset = 0;
  for (auto& s : out.submodules) {
    const std::size_t n = alpha ? s.alpha.numel() : s.importance.numel();
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), offset);
    offset += n;
    (alpha ? s.alpha : s.importance) = gather(theta, idx, {n});
  }
  return out;
}

}  // namespace

std::vector<GradcheckResult> gradcheck_suite(std::uint64_t seed) {
  Suite s(seed);

  const Tensor a = s.uniform({3, 4}, -1.0, 1.0);
  const Tensor b = s.uniform({3, 4}, -1.0, 1.0);
  const Tensor row = s.uniform({4}, -1.0, 1.0);
  const Tensor pos = s.uniform({3, 4}, 0.5, 2.0);
  s.binary("add", add, a, b);
  s.binary("add broadcast", add, a, row);
  s.binary("sub", sub, a, b);
  s.binary("mul", mul, a, b);
  s.binary("mul broadcast", mul, a, row);
  s.binary("div", div, a, pos);

  s.run("affine", [&](const Tensor& x) { return s.project(affine(x, -1.7, 0.3)); }, a);
  s.run("neg", [&](const Tensor& x) { return s.project(neg(x)); }, a);
  s.run("exp", [&](const Tensor& x) { return s.project(exp(x)); }, a);
  s.run("log", [&](const Tensor& x) { return s.project(log(x)); }, pos);
  s.run("tan", [&](const Tensor& x) { return s.project(tan(x)); }, a);
  s.run("sigmoid", [&](const Tensor& x) { return s.project(sigmoid(x)); }, a);
  s.run("gelu", [&](const Tensor& x) { return s.project(gelu(x)); }, s.uniform({3, 4}, -3.0, 3.0));
  s.run("abs", [&](const Tensor& x) { return s.project(abs(x)); },
        s.uniform_avoiding({3, 4}, -1.0, 1.0, {0.0}, 0.05));
  s.run("clamp", [&](const Tensor& x) { return s.project(clamp(x, -0.5, 0.5)); },
        s.uniform_avoiding({3, 4}, -1.0, 1.0, {-0.5, 0.5}, 0.05));
  s.run("softmax", [&](const Tensor& x) { return s.project(softmax(x)); }, a);
  s.run("sum", [&](const Tensor& x) { return affine(sum(x), 1.3); }, a);
  s.run("mean", [&](const Tensor& x) { return affine(mean(x), 1.3); }, a);

  const Tensor cube = s.uniform({2, 3, 4}, -1.0, 1.0);
  s.run("sum_axis", [&](const Tensor& x) { return s.project(sum_axis(x, 1)); }, cube);
  s.run("mean_axis", [&](const Tensor& x) { return s.project(mean_axis(x, 0)); }, cube);
  s.run("reshape", [&](const Tensor& x) { return s.project(reshape(x, {4, 6})); }, cube);
  s.run("permute", [&](const Tensor& x) { return s.project(permute(x, {2, 0, 1})); }, cube);
  s.run("transpose_last2", [&](const Tensor& x) { return s.project(transpose_last2(x)); }, cube);
  s.run("slice0", [&](const Tensor& x) { return s.project(slice0(x, 1, 2)); }, a);
  s.run("gather", [&](const Tensor& x) { return s.project(gather(x, {0, 5, 5, 11, 3, 7}, {2, 3})); }, a);
  s.run("scatter", [&](const Tensor& x) { return s.project(scatter(x, {9, 2, 4, 0}, 12)); }, row);

  const Tensor m1 = s.uniform({3, 5}, -1.0, 1.0);
  const Tensor m2 = s.uniform({5, 2}, -1.0, 1.0);
  s.binary("matmul", matmul, m1, m2);
  s.binary("matmul batched", matmul, s.uniform({2, 3, 5}, -1.0, 1.0), s.uniform({2, 5, 4}, -1.0, 1.0));

  const Tensor gamma = s.uniform({4}, 0.5, 1.5);
  const Tensor beta = s.uniform({4}, -0.5, 0.5);
  const Tensor channel_weights = Tensor::from({1.0, 0.0, 0.7, 1.0}, {4});
  s.run("layer_norm", [&](const Tensor& x) { return s.project(layer_norm(x, gamma, beta)); }, a);
  s.run("layer_norm weighted", [&](const Tensor& x) {
    return s.project(layer_norm(x, gamma, beta, channel_weights));
  }, a);
  s.run("layer_norm gamma", [&](const Tensor& x) {
    return s.project(layer_norm(a, x, beta, channel_weights));
  }, gamma);

  const std::vector<int> labels{2, 0, 3};
  s.run("softmax_cross_entropy", [&](const Tensor& x) { return softmax_cross_entropy(x, labels); }, a);
  const Tensor target = s.uniform({3, 4}, -1.0, 1.0);
  std::vector<double> target_v(target.data().begin(), target.data().end());
  const std::vector<double> l1_mask{1, 0, 1, 1, 0, 1, 1, 1, 1, 0, 0, 1};
  Tensor pred = Tensor::from(target_v, {3, 4});
  for (auto& x : pred.mutable_data()) x += 0.3;
  s.run("l1_loss", [&](const Tensor& x) { return l1_loss(x, target_v, l1_mask); }, pred);

  s.run("entropy", [&](const Tensor& x) { return entropy(softmax(x)); }, s.uniform({6}, -1.0, 1.0));
  s.run("tangent activation", [&](const Tensor& x) { return s.project(tangent_activation(x)); },
        s.uniform({9}, 0.1, 0.9));
  {
    // Logits whose softmax has a normalized variance well inside (0.1, 0.9).
    const Tensor logits = Tensor::from({1.4, -0.3, 0.2, -1.1, 0.6}, {5});
    const double omega = variance(softmax(logits)).item() / variance_target(5);
    if (omega < 0.1 || omega > 0.9) throw StateError("gradcheck: variance probe left its range");
    s.run("variance term", [](const Tensor& x) { return variance_term(softmax(x)); }, logits);
  }

  ToyViTConfig model;
  SpaceConfig space_cfg;
  space_cfg.alpha_init_std = 1.0;
  space_cfg.importance_init_std = 1.0;
  const SearchSpace space = build_space(model, space_cfg, seed);
  for (std::size_t i : {space.index_of(SubmoduleKind::QkvChannels, 0),
                        space.index_of(SubmoduleKind::HeadCount, 1)}) {
    const auto& sub = space.submodules[i];
    s.run("sparsity scores " + sub.spec.label(), [&](const Tensor& x) {
      SubmoduleState st = sub;
      st.alpha = x;
      return s.project(sparsity_scores(st));
    }, sub.alpha);
  }

  const CostCoefficients coeffs = calibrate(model);
  s.run("cost estimate", [&](const Tensor& x) { return g_of_V(with_slices(space, x, true), coeffs); },
        all_alpha(space));

  // Search objective on a 2-image batch with patch masking and lambda = 0.5.
  SyntheticDatasetSpec spec;
  spec.n_train = 2;
  spec.n_eval = 1;
  const auto data = generate(spec);
  const auto patches = patchify(data.train, model.patch_size);
  std::mt19937_64 mask_rng(derive_seed(seed, 5));
  std::vector<std::uint8_t> positions;
  for (int i = 0; i < 2; ++i) {
    const auto m = sample_mask(model.tokens(), 0.25, mask_rng);
    positions.insert(positions.end(), m.begin(), m.end());
  }
  const ViTModel net = ViTModel::init(ViTArch::full(model), seed);
  RegularizerWeights weights;
  const double tau = 0.37;
  // The tangent term puts the objective in the hundreds; a wider step keeps
  // round-off of the central difference below the tolerance. The mask token
  // feeds the l1 reconstruction kink and keeps the narrow step.
  constexpr double kObjectiveStep = 1e-4;
  auto objective = [&](const SearchSpace& sp, const ViTModel& m) {
    const auto snap = compute_bimask(sp, 0.5);
    const auto fwd = forward(m, patches, 2, masks_from_bimask(sp, snap), positions, true);
    const Tensor task = softmax_cross_entropy(fwd.logits, data.train.labels);
    const Tensor rec = reconstruct_loss(fwd, patches, model.patch_pixels());
    return add(add(task, total_mask_loss(sp, coeffs, weights, tau).total), rec);
  };
  s.run("objective wrt alpha", [&](const Tensor& x) { return objective(with_slices(space, x, true), net); },
        all_alpha(space), kObjectiveStep);
  s.run("objective wrt importance", [&](const Tensor& x) {
    return objective(with_slices(space, x, false), net);
  }, all_importance(space), kObjectiveStep);
  s.run("objective wrt head weight", [&](const Tensor& x) {
    ViTModel m = net;
    m.head.weight = x;
    return objective(space, m);
  }, net.head.weight, kObjectiveStep);
  s.run("objective wrt qkv bias", [&](const Tensor& x) {
    ViTModel m = net;
    m.blocks[0].qkv.bias = x;
    return objective(space, m);
  }, net.blocks[0].qkv.bias, kObjectiveStep);
  s.run("objective wrt mask token", [&](const Tensor& x) {
    ViTModel m = net;
    m.mask_token = x;
    return objective(space, m);
  }, net.mask_token);
  return s.results;
}

}  // namespace ofb
