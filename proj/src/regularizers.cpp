#include "ofb/regularizers.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <sstream>

#include <json.hpp>

namespace ofb {

namespace {

void check_simplex(const Tensor& p, const char* who) {
  if (p.rank() != 1 || p.numel() == 0) {
    throw ShapeError(std::string(who) + ": expected a non-empty vector, got " +
                     shape_str(p.shape()));
  }
  double total = 0.0;
  for (double v : p.data()) {
    if (v < -1e-9) throw NumericError(std::string(who) + ": negative entry " + std::to_string(v));
    total += v;
  }
  if (std::fabs(total - 1.0) > 1e-9) {
    throw NumericError(std::string(who) + ": entries sum to " + std::to_string(total));
  }
}

// Plain double versions used as oracles by the theorem suite.
double entropy_of(std::span<const double> p) {
  double h = 0.0;
  for (double v : p) {
    if (v > 0.0) h -= v * std::log(v);
  }
  return h;
}

double variance_of(std::span<const double> p) {
  const double d = static_cast<double>(p.size());
  double s = 0.0;
  for (double v : p) s += (v - 1.0 / d) * (v - 1.0 / d);
  return s / d;
}

}  // namespace

double variance_target(std::size_t d) {
  if (d == 0) throw ShapeError("variance_target: D must be positive");
  const double dd = static_cast<double>(d);
  return (dd - 1.0) / (dd * dd);
}

Tensor entropy(const Tensor& p) {
  check_simplex(p, "entropy");
  return neg(sum(mul(p, log(p))));
}

Tensor variance(const Tensor& p) {
  const double d = static_cast<double>(p.numel());
  const Tensor c = affine(p, 1.0, -1.0 / d);
  return affine(sum(mul(c, c)), 1.0 / d);
}

Tensor tangent_activation(const Tensor& omega) {
  return tan(affine(omega, -std::numbers::pi, std::numbers::pi / 2.0));
}

Tensor variance_term(const Tensor& p) {
  check_simplex(p, "variance_term");
  const std::size_t d = p.numel();
  if (d == 1) return Tensor::scalar(0.0);
  const Tensor omega =
      clamp(affine(variance(p), 1.0 / variance_target(d)), kOmegaEps, 1.0 - kOmegaEps);
  return tangent_activation(omega);
}

double variance_identity_residual(std::span<const double> p) {
  const std::size_t d = p.size();
  double sq = 0.0;
  for (double v : p) sq += v * v;
  const double lhs = variance_target(d) - variance_of(p);
  const double rhs = (1.0 - sq) / static_cast<double>(d);
  return std::fabs(lhs - rhs);
}

Tensor importance_penalty(const std::vector<Tensor>& scores) {
  Tensor total = Tensor::scalar(0.0);
  for (const auto& s : scores) {
    if (s.numel() == 0) continue;
    total = add(total, sum(s));
  }
  return total;
}

Tensor budget_penalty(const Tensor& g_fraction, double tau) {
  return abs(affine(g_fraction, 1.0, -tau));
}

MaskLoss total_mask_loss(const SearchSpace& space, const CostCoefficients& coeffs,
                         const RegularizerWeights& weights, double tau) {
  MaskLoss out;
  Tensor reg = Tensor::scalar(0.0);
  std::vector<Tensor> scores;
  for (const auto& s : space.submodules) {
    scores.push_back(sigmoid(s.importance));
    if (s.d_live() == 1) continue;
    const Tensor p = softmax(s.alpha);
    const Tensor h = entropy(p);
    const Tensor psi = variance_term(p);
    out.entropy += h.item();
    out.psi += psi.item();
    reg = add(reg, add(h, psi));
  }
  const Tensor g = g_of_V(space, coeffs);
  const Tensor budget = budget_penalty(g, tau);
  const Tensor l1 = importance_penalty(scores);
  out.g = g.item();
  out.budget = budget.item();
  out.l1 = l1.item();
  out.total = add(add(affine(reg, weights.mu1), affine(budget, weights.mu2)),
                  affine(l1, weights.mu3));
  return out;
}

std::string TheoremReport::to_json() const {
  nlohmann::json j;
  j["samples_per_dim"] = samples_per_dim;
  j["dims"] = dims;
  j["vectors_checked"] = vectors_checked;
  j["one_hot_checked"] = one_hot_checked;
  j["max_identity_residual"] = max_identity_residual;
  j["passed"] = passed();
  j["violations"] = nlohmann::json::array();
  for (const auto& v : violations) {
    j["violations"].push_back({{"dim", v.dim}, {"kind", v.kind}, {"detail", v.detail}});
  }
  return j.dump(2);
}

TheoremReport theorem_suite(std::size_t samples_per_dim, const std::vector<std::size_t>& dims,
                            std::uint64_t seed) {
  TheoremReport r;
  r.samples_per_dim = samples_per_dim;
  r.dims = dims;
  std::mt19937_64 rng(seed);
  // 53-bit uniform in (0, 1]
  auto uniform = [&rng] { return (static_cast<double>(rng() >> 11) + 1.0) * 0x1.0p-53; };

  auto check = [&r](const std::vector<double>& p) {
    const std::size_t d = p.size();
    const double h = entropy_of(p);
    const double sigma = variance_of(p);
    const double target = variance_target(d);
    const double pmax = *std::max_element(p.begin(), p.end());
    const bool a = h < 1e-6;
    const bool b = pmax > 1.0 - 1e-4;
    const bool c = std::fabs(sigma - target) < 1e-8;
    std::ostringstream os;
    os.precision(17);
    if (a != b || b != c) {
      os << "H=" << h << " max=" << pmax << " |sigma-target|=" << std::fabs(sigma - target);
      r.violations.push_back({d, "equivalence", os.str()});
    }
    if (h < 0.0 || h > std::log(static_cast<double>(d)) + 1e-12) {
      os << "H=" << h;
      r.violations.push_back({d, "entropy-bound", os.str()});
    }
    if (sigma < 0.0 || sigma > target + 1e-15) {
      os << "sigma=" << sigma;
      r.violations.push_back({d, "variance-bound", os.str()});
    }
    const double res = variance_identity_residual(p);
    r.max_identity_residual = std::max(r.max_identity_residual, res);
    if (!(res < 1e-12)) {
      os << "residual=" << res;
      r.violations.push_back({d, "identity", os.str()});
    }
    ++r.vectors_checked;
  };

  std::vector<std::size_t> one_hot_dims = dims;
  for (std::size_t d = 2; d <= 8; ++d) one_hot_dims.push_back(d);
  std::sort(one_hot_dims.begin(), one_hot_dims.end());
  one_hot_dims.erase(std::unique(one_hot_dims.begin(), one_hot_dims.end()), one_hot_dims.end());

  for (std::size_t d : dims) {
    if (d == 0) throw ShapeError("theorem_suite: dimension must be positive");
    for (std::size_t s = 0; s < samples_per_dim; ++s) {
      std::vector<double> p(d);
      double total = 0.0;
      for (auto& v : p) {
        v = -std::log(uniform());
        total += v;
      }
      for (auto& v : p) v /= total;
      check(p);
    }
    check(std::vector<double>(d, 1.0 / static_cast<double>(d)));
  }
  for (std::size_t d : one_hot_dims) {
    for (std::size_t k = 0; k < d; ++k) {
      std::vector<double> p(d, 0.0);
      p[k] = 1.0;
      check(p);
      ++r.one_hot_checked;
    }
  }
  return r;
}

}  // namespace ofb
