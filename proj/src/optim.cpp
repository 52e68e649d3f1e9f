#include "ofb/optim.hpp"

#include <cmath>

namespace ofb {

void Adam::step(const NamedParams& params) {
  for (auto [name, p] : params) {
    if (!p.has_grad()) continue;
    auto& slot = state_[name];
    const std::size_t n = p.numel();
    if (slot.m.size() != n) {
      if (!slot.m.empty()) {
        throw StateError("Adam: parameter '" + name + "' changed size without compaction");
      }
      slot.m.assign(n, 0.0);
      slot.v.assign(n, 0.0);
    }
    ++slot.t;
    const double b1 = config_.beta1, b2 = config_.beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(slot.t));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(slot.t));
    auto g = p.mutable_grad();
    auto w = p.mutable_data();
    for (std::size_t i = 0; i < n; ++i) {
      slot.m[i] = b1 * slot.m[i] + (1.0 - b1) * g[i];
      slot.v[i] = b2 * slot.v[i] + (1.0 - b2) * g[i] * g[i];
      const double mh = slot.m[i] / c1;
      const double vh = slot.v[i] / c2;
      w[i] -= config_.lr * (mh / (std::sqrt(vh) + config_.eps) + config_.weight_decay * w[i]);
    }
  }
}

void Adam::compact(const std::string& name, const std::vector<std::size_t>& keep) {
  auto it = state_.find(name);
  if (it == state_.end()) return;
  auto& slot = it->second;
  std::vector<double> m, v;
  for (auto k : keep) {
    m.push_back(slot.m.at(k));
    v.push_back(slot.v.at(k));
  }
  slot.m = std::move(m);
  slot.v = std::move(v);
}

void zero_grads(const NamedParams& params) {
  for (auto [name, p] : params) {
    if (p.has_grad()) p.zero_grad();
  }
}

}  // namespace ofb
