#ifndef RETMPC__RETMPC_HPP_
#define RETMPC__RETMPC_HPP_

/// @file
/// @brief Umbrella header.

#include "config.hpp"
#include "ekf.hpp"
#include "errors.hpp"
#include "harness.hpp"
#include "mor.hpp"
#include "mpc.hpp"
#include "physical_model.hpp"
#include "qp_solver.hpp"
#include "rom_io.hpp"
#include "sparse_ldl.hpp"

#endif  // RETMPC__RETMPC_HPP_
