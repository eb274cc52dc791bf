#include "cfrank/linalg.hpp"

#include <cmath>
#include <random>
#include <string>

namespace cfrank {

namespace {

constexpr int kGramSquarings = 10;
constexpr double kTieWidth = 2e-6;

Vector random_unit(Eigen::Index n, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Vector v(n);
  for (Eigen::Index i = 0; i < n; ++i) v[i] = normal(rng);
  const double norm = v.norm();
  return norm > 0.0 ? Vector(v / norm) : Vector(Vector::Unit(n, 0));
}

}  // namespace

double frobenius_sq(const Matrix& a) {
  if (a.size() == 0) throw DegenerateMatrix("frobenius_sq: empty matrix");
  return a.squaredNorm();
}

SpectralSummary top_singular(const Matrix& a, const PowerIterationOptions& opts) {
  if (a.size() == 0) throw DegenerateMatrix("top_singular: empty matrix");
  if (!(opts.tol > 0.0)) throw ConfigError("top_singular: tol must be positive");
  const double frob = a.squaredNorm();
  if (frob == 0.0) throw DegenerateMatrix("top_singular: all-zero matrix");

  // Iterate on the smaller side's Gram matrix.
  const bool right_side = a.cols() <= a.rows();
  const Matrix gram = right_side ? Matrix(a.transpose() * a) : Matrix(a * a.transpose());

  // Iterate with G^(2^k) so the rate depends on (l2/l1)^(2^k) rather than
  // l2/l1; eigenvalue estimates use G itself.
  Matrix op = gram / gram.cwiseAbs().maxCoeff();
  for (int k = 0; k < kGramSquarings; ++k) {
    op = op * op;
    const double peak = op.cwiseAbs().maxCoeff();
    if (!(peak > 0.0) || !std::isfinite(peak)) break;
    op /= peak;
  }

  std::mt19937_64 rng(opts.seed);
  Vector v = random_unit(gram.rows(), rng);
  double lambda = v.dot(gram * v);
  bool converged = false;
  int it = 0;
  for (; it < opts.max_iter; ++it) {
    Vector w = op * v;
    double wn = w.norm();
    if (wn == 0.0) {
      // Start vector landed in the null space; restart.
      v = random_unit(gram.rows(), rng);
      continue;
    }
    v = w / wn;
    const Vector gv = gram * v;
    const double next = v.dot(gv);
    const double change = std::abs(next - lambda);
    lambda = next;
    if (change <= opts.tol * std::abs(lambda)) {
      converged = true;
      ++it;
      break;
    }
  }
  if (!converged) {
    // Near-tied top pair: v sits in the top eigenspace up to the tie width.
    const double residual = (gram * v - lambda * v).norm();
    converged = residual <= kTieWidth * std::abs(lambda);
  }

  SpectralSummary out;
  out.sigma1 = std::sqrt(std::max(lambda, 0.0));
  out.frob_sq = frob;
  out.iterations = it;
  if (out.sigma1 > 0.0) {
    out.stable_rank = frob / (out.sigma1 * out.sigma1);
    if (right_side) {
      out.right_vec = v;
      out.left_vec = (a * v) / out.sigma1;
    } else {
      out.left_vec = v;
      out.right_vec = (a.transpose() * v) / out.sigma1;
    }
  }
  if (!converged) {
    throw ConvergenceFailure("top_singular: no convergence after " +
                                 std::to_string(opts.max_iter) + " iterations",
                             std::move(out));
  }
  return out;
}

SvdResult svd_oracle(const Matrix& a) {
  if (a.rows() > kOracleMaxDim || a.cols() > kOracleMaxDim) {
    throw OracleSizeExceeded("svd_oracle: " + std::to_string(a.rows()) + "x" +
                             std::to_string(a.cols()) + " exceeds " +
                             std::to_string(kOracleMaxDim));
  }
  if (a.size() == 0) throw DegenerateMatrix("svd_oracle: empty matrix");
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(Eigen::MatrixXd(a),
                                        Eigen::ComputeThinU | Eigen::ComputeThinV);
  return SvdResult{svd.singularValues(), svd.matrixU(), svd.matrixV()};
}

double stable_rank(const Matrix& a, const PowerIterationOptions& opts) {
  return top_singular(a, opts).stable_rank;
}

Matrix pairwise_sq_dists(const Matrix& a) {
  const Eigen::Index n = a.rows();
  Matrix out = Matrix::Zero(n, n);
  for (Eigen::Index j = 0; j < n; ++j) {
    for (Eigen::Index k = j + 1; k < n; ++k) {
      const double d = (a.row(j) - a.row(k)).squaredNorm();
      out(j, k) = d;
      out(k, j) = d;
    }
  }
  return out;
}

Matrix pairwise_dists(const Matrix& a) {
  return pairwise_sq_dists(a).cwiseSqrt();
}

}  // namespace cfrank
