#pragma once

#include <cstdint>
#include <Eigen/Dense>

#include "cfrank/errors.hpp"

namespace cfrank {

/// Row-major dense matrix; rows are embeddings.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

/// Snapshot of the top of a matrix's spectrum.
struct SpectralSummary {
  double sigma1 = 0.0;
  double frob_sq = 0.0;
  double stable_rank = 0.0;
  Vector left_vec;   // psi_1, length rows
  Vector right_vec;  // omega_1, length cols
  int iterations = 0;
};

struct PowerIterationOptions {
  double tol = 1e-10;
  int max_iter = 1000;
  std::uint64_t seed = 0;
};

/// Thrown when power iteration exhausts its budget. Carries the last iterate.
class ConvergenceFailure : public Error {
 public:
  ConvergenceFailure(const std::string& what, SpectralSummary last)
      : Error(what), last_(std::move(last)) {}
  const SpectralSummary& last_iterate() const noexcept { return last_; }

 private:
  SpectralSummary last_;
};

struct SvdResult {
  Vector values;  // nonincreasing
  Matrix left;    // rows x p
  Matrix right;   // cols x p
};

inline constexpr Eigen::Index kOracleMaxDim = 256;

double frobenius_sq(const Matrix& a);

/// Top singular triple by power iteration on the smaller Gram matrix
/// (A^T A when cols <= rows, otherwise A A^T).
SpectralSummary top_singular(const Matrix& a, const PowerIterationOptions& opts = {});

/// Dense SVD for small matrices; used as a reference in tests and theory checks.
SvdResult svd_oracle(const Matrix& a);

double stable_rank(const Matrix& a, const PowerIterationOptions& opts = {});

/// Entry (j, k) is the squared Euclidean distance between rows j and k.
Matrix pairwise_sq_dists(const Matrix& a);

/// Entry (j, k) is the Euclidean distance between rows j and k.
Matrix pairwise_dists(const Matrix& a);

}  // namespace cfrank
