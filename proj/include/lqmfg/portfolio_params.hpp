#pragma once

#include <stdexcept>

namespace lqmfg {

/// Market description of the mean-variance liability problem.
///
/// Wealth follows dx = (r x + (mu - r) u - b)dt + sigma u dW0 + c dW + c_bar dW_bar,
/// agents observe dy = (G x + b_tilde)dt + sigma_tilde dW_bar and the common
/// index d(theta) = (I theta + b_check)dt + sigma_check dW0. The cost is
/// (gamma/2) E|x_T - x_avg_T|^2 - (1/2) E[x_T - x_avg_T].
struct PortfolioParams {
  double r = 0.06;
  double mu = 0.15;
  double b = 0.06;
  double sigma = 0.25;
  double c = 0.5;
  double c_bar = 0.0;  // not given for the reference example; assumed 0
  double G = 1.0;      // not given for the reference example; assumed 1
  double b_tilde = 0.0;
  double sigma_tilde = 1.0;
  double I = 0.0;
  double b_check = 0.0;
  double sigma_check = 1.0;
  double gamma = 0.6;
  double x0 = 2.0;
  double T = 1.0;

  [[nodiscard]] double excess_return() const { return mu - r; }

  void validate() const {
    if (!(gamma > 0.0)) throw std::invalid_argument("portfolio: gamma must be positive");
    if (!(sigma > 0.0)) throw std::invalid_argument("portfolio: sigma must be positive");
    if (sigma_tilde == 0.0) throw std::invalid_argument("portfolio: sigma_tilde must be nonzero");
    if (sigma_check == 0.0) throw std::invalid_argument("portfolio: sigma_check must be nonzero");
    if (!(T > 0.0)) throw std::invalid_argument("portfolio: T must be positive");
  }
};

}  // namespace lqmfg
