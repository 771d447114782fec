#pragma once

#include <string>

#include "gridsafe/io.hpp"
#include "gridsafe/kernels.hpp"
#include "gridsafe/netmodel.hpp"

namespace gridsafe::bench {

inline const net::NetworkSpec& four_bus() {
  static const net::NetworkSpec spec =
      io::load_network(std::string(GRIDSAFE_CONFIG_DIR) + "/four_bus.json");
  return spec;
}

inline const net::LinearModel& four_bus_model() {
  static const net::LinearModel model = net::assemble_state_space(four_bus());
  return model;
}

inline const Eigen::MatrixXd& central_gain() {
  static const Eigen::MatrixXd k =
      kernels::solve_are(four_bus_model(), kernels::DesignWeights::identity(8, 4)).K;
  return k;
}

}  // namespace gridsafe::bench
