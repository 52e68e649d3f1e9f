#pragma once

// Adam with decoupled weight decay. Moment state is keyed by parameter name
// so that tensors rebuilt by pruning keep the moments of their surviving
// coordinates (see compact).

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "ofb/tensor.hpp"

namespace ofb {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

using NamedParams = std::vector<std::pair<std::string, Tensor>>;

class Adam {
 public:
  explicit Adam(AdamConfig config) : config_(config) {}

  // Applies one update to every parameter that has a gradient.
  void step(const NamedParams& params);
  // Keeps only the listed coordinates of a parameter's moments.
  void compact(const std::string& name, const std::vector<std::size_t>& keep);
  void set_lr(double lr) { config_.lr = lr; }
  const AdamConfig& config() const { return config_; }

 private:
  struct Slot {
    std::vector<double> m, v;
    std::size_t t = 0;
  };
  AdamConfig config_;
  std::map<std::string, Slot> state_;
};

void zero_grads(const NamedParams& params);

}  // namespace ofb
