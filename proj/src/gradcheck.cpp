#include "ofb/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace ofb {

double gradient_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& theta,
                      double h) {
  if (!(h >= 1e-6 && h <= 1e-4)) throw Error("gradient_check: step must lie in [1e-6, 1e-4]");
  Tensor param = Tensor::from(std::vector<double>(theta.data().begin(), theta.data().end()),
                              theta.shape(), true);
  Tensor loss = f(param);
  if (loss.numel() != 1) throw ShapeError("gradient_check: f must return a scalar");
  backward(loss);
  const std::vector<double> analytic = param.grad();

  double worst = 0.0;
  auto values = param.mutable_data();
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double saved = values[i];
    values[i] = saved + h;
    const double up = f(param.detach()).item();
    values[i] = saved - h;
    const double down = f(param.detach()).item();
    values[i] = saved;
    if (!std::isfinite(up) || !std::isfinite(down)) {
      throw NumericError("gradient_check: f is non-finite near theta");
    }
    const double numeric = (up - down) / (2.0 * h);
    const double err = std::fabs(analytic[i] - numeric) /
                       std::max(std::fabs(analytic[i]) + std::fabs(numeric), kGradFloor);
    worst = std::max(worst, err);
  }
  return worst;
}

}  // namespace ofb
