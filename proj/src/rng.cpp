#include "mlhg/rng.hpp"

#include <cmath>

namespace mlhg {

double Rng::gaussian(double mean, double stdev) {
  if (has_spare_) {
    has_spare_ = false;
    return mean + stdev * spare_;
  }
  double u1, u2;
  do {
    u1 = uniform();
  } while (u1 <= 0.0);
  u2 = uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double theta = 2.0 * M_PI * u2;
  spare_ = r * std::sin(theta);
  has_spare_ = true;
  return mean + stdev * r * std::cos(theta);
}

}  // namespace mlhg
