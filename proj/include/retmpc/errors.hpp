#ifndef RETMPC__ERRORS_HPP_
#define RETMPC__ERRORS_HPP_

/**
 * @file
 * @brief Exception types shared by all modules.
 */

#include <stdexcept>
#include <string>

namespace retmpc {

/// Invalid geometry, grid, scenario or solver configuration.
struct ConfigError : std::runtime_error
{
  using std::runtime_error::runtime_error;
};

/// Argument outside the mathematical domain of an operation (e.g. alpha <= 0).
struct DomainError : std::domain_error
{
  using std::domain_error::domain_error;
};

/// Snapshot or basis rank too small for the requested reduction order.
struct RankError : std::runtime_error
{
  using std::runtime_error::runtime_error;
};

/// Factorization or inversion failure, non-finite values.
struct NumericalError : std::runtime_error
{
  using std::runtime_error::runtime_error;
};

/// Rejected in-place update of a solver (shape or sparsity mismatch).
struct UpdateError : std::runtime_error
{
  using std::runtime_error::runtime_error;
};

/// Model-level failure such as a non-positive steady-state gain.
struct ModelError : std::runtime_error
{
  using std::runtime_error::runtime_error;
};

/// Closed-loop simulation aborted (plant instability, non-finite trace values).
struct RuntimeAbort : std::runtime_error
{
  using std::runtime_error::runtime_error;
};

/// Reading or writing an artifact or trace file failed.
struct IoError : std::runtime_error
{
  using std::runtime_error::runtime_error;
};

}  // namespace retmpc

#endif  // RETMPC__ERRORS_HPP_
