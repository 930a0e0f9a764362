#include "ccvm/track.hpp"

#include <cmath>

#include "ccvm/errors.hpp"

namespace ccvm {

double Track::covariate_or_zero(const std::string& name, std::size_t j) const {
  const auto it = covariates.find(name);
  if (it == covariates.end() || j >= it->second.size()) return 0.0;
  const double v = it->second[j];
  return std::isfinite(v) ? v : 0.0;
}

void Track::validate() const {
  if (observations.size() != times.size()) {
    throw InputError("track " + id + ": times and observations differ in length");
  }
  for (std::size_t j = 0; j < times.size(); ++j) {
    if (!std::isfinite(times[j]) || !observations[j].allFinite()) {
      throw InputError("track " + id + ": non-finite entry at row " + std::to_string(j));
    }
    if (j > 0 && !(times[j] > times[j - 1])) {
      throw InputError("track " + id + ": times not strictly increasing at row " +
                       std::to_string(j));
    }
  }
}

}  // namespace ccvm
