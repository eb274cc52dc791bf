#pragma once

#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "cfrank/data.hpp"
#include "cfrank/linalg.hpp"
#include "cfrank/model.hpp"

namespace cfrank {

// ---- Loss selection -------------------------------------------------------

struct Bpr {};
struct Ssm {
  int k = 20;
};
struct DirectAU {
  double gamma = 1.0;
};
struct AlignOnly {};
struct WarmStart {
  double gamma_sr = 0.1;
};

using LossSpec = std::variant<Bpr, Ssm, DirectAU, AlignOnly, WarmStart>;

/// Throws ConfigError when k < 1, gamma <= 0 or gamma_sr <= 0.
void validate(const LossSpec& spec);
std::string loss_name(const LossSpec& spec);

// ---- Values and gradients -------------------------------------------------

struct LossComponents {
  std::optional<double> align;
  std::optional<double> uniform_user;
  std::optional<double> uniform_item;
  std::optional<double> srank_user;
  std::optional<double> srank_item;
  std::optional<double> rank_margin;
};

struct LossValue {
  double total = 0.0;
  LossComponents components;
  /// Set when a uniformity term had fewer than two distinct rows and was dropped.
  bool uniform_skipped = false;
};

/// Recomputes the total from the logged components under `spec`'s weights.
double recompose(const LossValue& value, const LossSpec& spec);

/// Gradient restricted to a set of table rows. `rows` is strictly increasing
/// and grad.row(k) belongs to table row rows[k].
struct RowGradient {
  std::vector<Index> rows;
  Matrix grad;
};

struct ModelGradient {
  RowGradient users;
  RowGradient items;
};

struct LossResult {
  LossValue value;
  ModelGradient grad;
};

/// Mean over triplets of -ln sigmoid(s(u,i) - s(u,i')) on raw embeddings.
LossResult bpr_loss_grad(const EmbeddingModel& model, const TripletBatch& batch);

/// Mean over examples of -log softmax of the positive among {positive} + k negatives.
LossResult ssm_loss_grad(const EmbeddingModel& model, const SetBatch& batch);

/// Mean of |u^ - i^|^2 over pairs, on row-normalized embeddings.
LossResult align_loss_grad(const EmbeddingModel& model, const PairBatch& batch);

/// align + gamma * (uniform over the batch's distinct users + over its distinct items).
LossResult directau_loss_grad(const EmbeddingModel& model, const PairBatch& batch, double gamma);

/// align - gamma_sr * (srank_reg over batch users + over batch items).
LossResult warmstart_loss_grad(const EmbeddingModel& model, const PairBatch& batch,
                               double gamma_sr);

/// Scalar loss with a dense gradient over every row of a table.
struct TableLoss {
  double value = 0.0;
  Matrix grad;
};

/// Weighted pair sums shared by the uniformity loss and its per-user
/// gradients, with w_jk = exp(-2 |x_j - x_k|^2) and no self-pairs:
/// diff_sum.row(j) = sum_k w_jk (x_j - x_k), rowsum[j] = sum_k w_jk and
/// pair_sum = sum over unordered pairs of w_jk.
struct PairKernel {
  Matrix diff_sum;
  Vector rowsum;
  double pair_sum = 0.0;
};
PairKernel uniformity_kernel(const Matrix& rows);

/// log sum over unordered distinct row pairs of exp(-2 |x^_j - x^_k|^2), rows
/// normalized first; the gradient is taken w.r.t. the raw rows. Runs in row
/// blocks so memory stays O(block * rows).
TableLoss uniform_loss_grad(const Matrix& table);

/// |X^|_F^2 / (|X^|_2^2 * max(rows, cols)) for the row-normalized X^, with its
/// gradient w.r.t. the raw rows. Callers maximize it.
TableLoss srank_reg_loss_grad(const Matrix& table, const PowerIterationOptions& opts = {});

/// Gradient of stable_rank(A) w.r.t. A, no normalization or scaling:
/// 2 (A - srank(A) sigma1 psi1 omega1^T) / sigma1^2.
Matrix srank_gradient(const Matrix& a, const PowerIterationOptions& opts = {});

// ---- Per-user gradient geometry ------------------------------------------
//
// These treat the table rows as given (callers pass unit rows): the uniformity
// gradient of user u is -4 sum_v w_uv (u - v) / sum_v w_uv with
// w_uv = exp(-2 |u - v|^2), and the srank gradient is row u of srank_gradient().

Matrix uniformity_gradients(const Matrix& table);
Matrix srank_gradients(const Matrix& table, const PowerIterationOptions& opts = {});

Vector uniformity_gradient_per_user(const Matrix& table, Index u);
Vector srank_gradient_per_user(const Matrix& table, Index u);

/// Angle in degrees between the uniformity gradient and the negated srank gradient.
/// Throws UndefinedAngle when either gradient vanishes.
double gradient_angle(const Matrix& table, Index u);
double angle_between_deg(const Vector& a, const Vector& b);

/// Angles for every user; std::nullopt where the angle is undefined.
std::vector<std::optional<double>> gradient_angles(const Matrix& table,
                                                   const PowerIterationOptions& opts = {});

}  // namespace cfrank
