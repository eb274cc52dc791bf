#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "cfrank/linalg.hpp"

namespace cfrank::theory {

// ---- Alignment collapse --------------------------------------------------
//
// r user rows, one shared item i, exact gradient descent on the unnormalized
// alignment sum: u_j <- u_j - 2 eta (u_j - i). Closed form:
// U(t) = c U(0) + (1 - c) 1 i^T with c = (1 - 2 eta)^t.

struct AlignmentOptions {
  int r = 50;
  int d = 16;
  double eta = 0.1;  // (0, 0.5]; 0.5 collapses in one step
  int steps = 500;
  std::uint64_t seed = 0;
};

struct AlignmentStep {
  int step = 0;
  double sigma1 = 0.0;
  double sigma2 = 0.0;
  double stable_rank = 0.0;
  double delta_empirical = 1.0;  // (s1(0)/s2(0)) / (s1(t)/s2(t))
  double delta_predicted = 1.0;  // closed-form prediction with the singular-value scalars cancelled
  double closed_form_max_abs = 0.0;  // |iterate - closed form|_max
};

struct AlignmentTrace {
  double item_norm = 0.0;
  std::vector<AlignmentStep> steps;
};

AlignmentTrace simulate_alignment_collapse(const AlignmentOptions& opts);

// ---- Uniformity recovery -------------------------------------------------
//
// Rows start on the rank-2 angular grid cos/sin(theta + j * epsilon) inside a
// random 2-plane, then follow gradient descent on the uniformity loss with
// renormalization after every step.

struct UniformityOptions {
  int r = 16;
  int d = 2;
  double epsilon = 0.01;  // radians, [0, 0.1]
  double eta = 0.2;
  int steps = 50;
  std::uint64_t seed = 0;
  /// Row count n used in the alpha = 4 eta e^-4 sqrt(n d) variant; 0 means r.
  int population_n = 0;
};

struct UniformityStep {
  int step = 0;
  double sigma1 = 0.0;
  double sigma2 = 0.0;
  double stable_rank = 0.0;
  double kappa_u = 0.0;     // sigma1 / sigma2 of U
  double sigma1_du = 0.0;   // of the pairwise distance matrix
  double sigma2_du = 0.0;
  double kappa_du = 0.0;
  bool switch_condition = false;  // kappa_u > kappa_du
  double delta_pred_n = 0.0;      // alpha with sqrt(n d)
  double delta_pred_r = 0.0;      // alpha with sqrt(r d)
  std::optional<double> delta_empirical;  // (s1/s2 at t) / (s1/s2 at t+1)
};

struct UniformityTrace {
  std::vector<UniformityStep> steps;
};

/// The rank-2 grid itself, embedded in a random 2-plane for d > 2.
Matrix angular_grid(int r, int d, double epsilon, std::uint64_t seed);

/// Uniformity loss (log over unordered pairs) and its gradient on rows that
/// are already unit-norm, via explicit pairwise differences, tangent-projected.
/// Identical rows give an exactly zero gradient.
struct PairwiseUniformity {
  double value = 0.0;
  Matrix grad;
};
PairwiseUniformity explicit_uniformity(const Matrix& unit_rows);

UniformityTrace simulate_uniformity_recovery(const UniformityOptions& opts);

// ---- Gradient angle between uniformity and stable rank -------------------

struct AngleOptions {
  int n = 1000;
  int d = 32;
  double theta_deg = 1.0;
  int steps = 300;
  double eta = 2000.0;
  std::uint64_t seed = 0;
};

struct AngleStep {
  int step = 0;
  double mean_rho = 0.0;
  double std_rho = 0.0;
  int undefined = 0;
  double stable_rank = 0.0;
  double uniformity = 0.0;
};

struct AngleTrace {
  std::vector<AngleStep> steps;
  int undefined_total = 0;
};

/// Unit rows whose pairwise angles are all at most theta_deg.
Matrix small_angle_cluster(int n, int d, double theta_deg, std::uint64_t seed);

AngleTrace gradient_angle_experiment(const AngleOptions& opts);

// ---- Three vectors on the unit circle ------------------------------------

enum class ToyLoss { Uniformity, Srank };

struct ToyCircleOptions {
  ToyLoss loss = ToyLoss::Uniformity;
  int steps = 1000;
  // The srank gradient is roughly ten times smaller near collinearity, so the
  // two runs get separate steps that keep their early traces comparable.
  double eta_uniformity = 0.004;
  double eta_srank = 0.05;
  double spread_deg = 20.0;  // initial angles drawn from [0, spread_deg]
  std::uint64_t seed = 0;
};

struct ToyStep {
  int step = 0;
  double angle01 = 0.0;
  double angle02 = 0.0;
  double angle12 = 0.0;
  double stable_rank = 0.0;
};

struct ToyTrace {
  std::vector<ToyStep> steps;
  Matrix final_rows;
};

Matrix toy_circle_init(double spread_deg, std::uint64_t seed);
ToyTrace toy_circle_experiment(const ToyCircleOptions& opts);

// ---- Eckart-Young ----------------------------------------------------------

struct EckartYoungReport {
  double truncation_error_sq = 0.0;  // |E - E_d|_F^2
  double tail_sum = 0.0;             // sum_{r > d} sigma_r^2
  double factor_max_abs = 0.0;       // |U_d V_d^T - E_d|_max with U_d = Psi S^1/2, V_d = Omega S^1/2
  int rank = 0;
};

/// Requires 1 <= d <= numerical rank of E.
EckartYoungReport eckart_young_check(const Matrix& e, int d);

// ---- CSV -------------------------------------------------------------------

void write_csv(const AlignmentTrace& trace, const std::filesystem::path& path);
void write_csv(const UniformityTrace& trace, const std::filesystem::path& path);
void write_csv(const AngleTrace& trace, const std::filesystem::path& path);
void write_csv(const ToyTrace& trace, const std::filesystem::path& path);

}  // namespace cfrank::theory
