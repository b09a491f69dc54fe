#include "ncds/trajectory.hpp"

#include <stdexcept>

namespace ncds {

void Trajectory::validate() const {
  if (states.rows() == 0 || states.cols() == 0) throw std::invalid_argument("empty trajectory");
  if (!(dt > 0)) throw std::invalid_argument("trajectory dt must be positive");
  if (!states.allFinite()) throw std::invalid_argument("trajectory has non-finite states");
  if (has_velocities()) {
    if (velocities.rows() != states.rows() || velocities.cols() != states.cols()) {
      throw std::invalid_argument("velocity block does not match states");
    }
    if (!velocities.allFinite()) throw std::invalid_argument("trajectory has non-finite velocities");
  }
}

}  // namespace ncds
