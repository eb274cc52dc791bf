#include "cfrank/losses.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace cfrank {

namespace {

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};

// Distinct table rows touched by a batch, with per-example slots.
struct Gathered {
  std::vector<Index> rows;
  Matrix raw;

  std::size_t slot(Index row) const {
    return static_cast<std::size_t>(std::lower_bound(rows.begin(), rows.end(), row) - rows.begin());
  }
};

Gathered gather(const Matrix& table, std::initializer_list<const std::vector<Index>*> lists) {
  Gathered g;
  for (const auto* list : lists) g.rows.insert(g.rows.end(), list->begin(), list->end());
  std::sort(g.rows.begin(), g.rows.end());
  g.rows.erase(std::unique(g.rows.begin(), g.rows.end()), g.rows.end());
  for (Index r : g.rows) {
    if (r < 0 || r >= table.rows())
      throw IndexError("batch index " + std::to_string(r) + " out of range");
  }
  g.raw.resize(static_cast<Eigen::Index>(g.rows.size()), table.cols());
  for (std::size_t k = 0; k < g.rows.size(); ++k) g.raw.row(static_cast<Eigen::Index>(k)) = table.row(g.rows[k]);
  return g;
}

// Pulls a gradient w.r.t. normalized rows back to the raw rows:
// d/dx = (g - (g . x^) x^) / |x|, zero for zero rows.
Matrix through_normalization(const Matrix& grad_hat, const NormalizedRows& norm) {
  Matrix out(grad_hat.rows(), grad_hat.cols());
  for (Eigen::Index r = 0; r < grad_hat.rows(); ++r) {
    const double n = norm.norms[r];
    if (n > 0.0) {
      const auto xh = norm.rows.row(r);
      out.row(r) = (grad_hat.row(r) - grad_hat.row(r).dot(xh) * xh) / n;
    } else {
      out.row(r).setZero();
    }
  }
  return out;
}

void require_nonempty(std::size_t n, const char* what) {
  if (n == 0) throw DegenerateBatch(std::string(what) + ": empty batch");
}

double softplus(double x) {
  return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

constexpr Eigen::Index kPairBlock = 256;

}  // namespace

void validate(const LossSpec& spec) {
  std::visit(Overloaded{
                 [](const Bpr&) {},
                 [](const AlignOnly&) {},
                 [](const Ssm& s) {
                   if (s.k < 1) throw ConfigError("SSM needs k >= 1");
                 },
                 [](const DirectAU& s) {
                   if (!(s.gamma > 0.0)) throw ConfigError("DirectAU needs gamma > 0");
                 },
                 [](const WarmStart& s) {
                   if (!(s.gamma_sr > 0.0)) throw ConfigError("warm start needs gamma_sr > 0");
                 },
             },
             spec);
}

std::string loss_name(const LossSpec& spec) {
  return std::visit(Overloaded{
                        [](const Bpr&) { return std::string("bpr"); },
                        [](const Ssm&) { return std::string("ssm"); },
                        [](const DirectAU&) { return std::string("directau"); },
                        [](const AlignOnly&) { return std::string("align"); },
                        [](const WarmStart&) { return std::string("warmstart"); },
                    },
                    spec);
}

double recompose(const LossValue& value, const LossSpec& spec) {
  const auto& c = value.components;
  auto v = [](const std::optional<double>& x) { return x.value_or(0.0); };
  return std::visit(Overloaded{
                        [&](const Bpr&) { return v(c.rank_margin); },
                        [&](const Ssm&) { return v(c.rank_margin); },
                        [&](const AlignOnly&) { return v(c.align); },
                        [&](const DirectAU& s) {
                          return v(c.align) + s.gamma * (v(c.uniform_user) + v(c.uniform_item));
                        },
                        [&](const WarmStart& s) {
                          return v(c.align) - s.gamma_sr * (v(c.srank_user) + v(c.srank_item));
                        },
                    },
                    spec);
}

LossResult bpr_loss_grad(const EmbeddingModel& model, const TripletBatch& batch) {
  const std::size_t n = batch.size();
  require_nonempty(n, "bpr");
  if (batch.pos_items.size() != n || batch.neg_items.size() != n)
    throw DegenerateBatch("bpr: ragged triplet batch");
  const auto users = gather(model.users, {&batch.users});
  const auto items = gather(model.items, {&batch.pos_items, &batch.neg_items});
  Matrix gu = Matrix::Zero(users.raw.rows(), users.raw.cols());
  Matrix gi = Matrix::Zero(items.raw.rows(), items.raw.cols());

  const double inv_n = 1.0 / static_cast<double>(n);
  double loss = 0.0;
  for (std::size_t b = 0; b < n; ++b) {
    const auto su = static_cast<Eigen::Index>(users.slot(batch.users[b]));
    const auto sp = static_cast<Eigen::Index>(items.slot(batch.pos_items[b]));
    const auto sn = static_cast<Eigen::Index>(items.slot(batch.neg_items[b]));
    const auto u = users.raw.row(su);
    const auto ip = items.raw.row(sp);
    const auto in = items.raw.row(sn);
    const double margin = u.dot(ip) - u.dot(in);
    loss += softplus(-margin);
    // d/dmargin of -ln sigmoid(margin) = -sigmoid(-margin)
    const double coef = -sigmoid(-margin) * inv_n;
    gu.row(su) += coef * (ip - in);
    gi.row(sp) += coef * u;
    gi.row(sn) -= coef * u;
  }
  LossResult out;
  out.value.components.rank_margin = loss * inv_n;
  out.value.total = loss * inv_n;
  out.grad.users = {users.rows, std::move(gu)};
  out.grad.items = {items.rows, std::move(gi)};
  return out;
}

LossResult ssm_loss_grad(const EmbeddingModel& model, const SetBatch& batch) {
  const std::size_t n = batch.size();
  require_nonempty(n, "ssm");
  if (batch.k < 1) throw ConfigError("ssm: k must be >= 1");
  if (batch.pos_items.size() != n || batch.neg_items.size() != n * static_cast<std::size_t>(batch.k))
    throw DegenerateBatch("ssm: every example needs exactly k negatives");
  const auto users = gather(model.users, {&batch.users});
  const auto items = gather(model.items, {&batch.pos_items, &batch.neg_items});
  Matrix gu = Matrix::Zero(users.raw.rows(), users.raw.cols());
  Matrix gi = Matrix::Zero(items.raw.rows(), items.raw.cols());

  const double inv_n = 1.0 / static_cast<double>(n);
  const auto k = static_cast<std::size_t>(batch.k);
  std::vector<Eigen::Index> slots(k + 1);
  std::vector<double> logits(k + 1);
  double loss = 0.0;
  for (std::size_t b = 0; b < n; ++b) {
    const auto su = static_cast<Eigen::Index>(users.slot(batch.users[b]));
    const auto u = users.raw.row(su);
    slots[0] = static_cast<Eigen::Index>(items.slot(batch.pos_items[b]));
    const auto negs = batch.negatives(b);
    for (std::size_t c = 0; c < k; ++c) slots[c + 1] = static_cast<Eigen::Index>(items.slot(negs[c]));
    double top = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c <= k; ++c) {
      logits[c] = u.dot(items.raw.row(slots[c]));
      top = std::max(top, logits[c]);
    }
    double denom = 0.0;
    for (std::size_t c = 0; c <= k; ++c) denom += std::exp(logits[c] - top);
    loss += top + std::log(denom) - logits[0];
    for (std::size_t c = 0; c <= k; ++c) {
      const double p = std::exp(logits[c] - top) / denom;
      const double coef = (p - (c == 0 ? 1.0 : 0.0)) * inv_n;
      gu.row(su) += coef * items.raw.row(slots[c]);
      gi.row(slots[c]) += coef * u;
    }
  }
  LossResult out;
  out.value.components.rank_margin = loss * inv_n;
  out.value.total = loss * inv_n;
  out.grad.users = {users.rows, std::move(gu)};
  out.grad.items = {items.rows, std::move(gi)};
  return out;
}

namespace {

struct AlignParts {
  Gathered users;
  Gathered items;
  double value = 0.0;
  Matrix grad_users;  // w.r.t. raw gathered rows
  Matrix grad_items;
};

AlignParts align_parts(const EmbeddingModel& model, const PairBatch& batch) {
  const std::size_t n = batch.size();
  require_nonempty(n, "align");
  if (batch.items.size() != n) throw DegenerateBatch("align: ragged pair batch");
  AlignParts p;
  p.users = gather(model.users, {&batch.users});
  p.items = gather(model.items, {&batch.items});
  const auto nu = normalized_rows(p.users.raw);
  const auto ni = normalized_rows(p.items.raw);
  Matrix gu = Matrix::Zero(nu.rows.rows(), nu.rows.cols());
  Matrix gi = Matrix::Zero(ni.rows.rows(), ni.rows.cols());
  const double inv_n = 1.0 / static_cast<double>(n);
  for (std::size_t b = 0; b < n; ++b) {
    const auto su = static_cast<Eigen::Index>(p.users.slot(batch.users[b]));
    const auto si = static_cast<Eigen::Index>(p.items.slot(batch.items[b]));
    const Eigen::RowVectorXd diff = nu.rows.row(su) - ni.rows.row(si);
    p.value += diff.squaredNorm();
    gu.row(su) += 2.0 * inv_n * diff;
    gi.row(si) -= 2.0 * inv_n * diff;
  }
  p.value *= inv_n;
  p.grad_users = through_normalization(gu, nu);
  p.grad_items = through_normalization(gi, ni);
  return p;
}

}  // namespace

LossResult align_loss_grad(const EmbeddingModel& model, const PairBatch& batch) {
  auto p = align_parts(model, batch);
  LossResult out;
  out.value.components.align = p.value;
  out.value.total = p.value;
  out.grad.users = {std::move(p.users.rows), std::move(p.grad_users)};
  out.grad.items = {std::move(p.items.rows), std::move(p.grad_items)};
  return out;
}

LossResult directau_loss_grad(const EmbeddingModel& model, const PairBatch& batch, double gamma) {
  auto p = align_parts(model, batch);
  LossResult out;
  out.value.components.align = p.value;
  double total = p.value;
  if (p.users.rows.size() >= 2) {
    const auto uu = uniform_loss_grad(p.users.raw);
    out.value.components.uniform_user = uu.value;
    total += gamma * uu.value;
    p.grad_users += gamma * uu.grad;
  } else {
    out.value.uniform_skipped = true;
  }
  if (p.items.rows.size() >= 2) {
    const auto ui = uniform_loss_grad(p.items.raw);
    out.value.components.uniform_item = ui.value;
    total += gamma * ui.value;
    p.grad_items += gamma * ui.grad;
  } else {
    out.value.uniform_skipped = true;
  }
  out.value.total = total;
  out.grad.users = {std::move(p.users.rows), std::move(p.grad_users)};
  out.grad.items = {std::move(p.items.rows), std::move(p.grad_items)};
  return out;
}

LossResult warmstart_loss_grad(const EmbeddingModel& model, const PairBatch& batch,
                               double gamma_sr) {
  auto p = align_parts(model, batch);
  const auto su = srank_reg_loss_grad(p.users.raw);
  const auto si = srank_reg_loss_grad(p.items.raw);
  LossResult out;
  out.value.components.align = p.value;
  out.value.components.srank_user = su.value;
  out.value.components.srank_item = si.value;
  out.value.total = p.value - gamma_sr * (su.value + si.value);
  p.grad_users -= gamma_sr * su.grad;
  p.grad_items -= gamma_sr * si.grad;
  out.grad.users = {std::move(p.users.rows), std::move(p.grad_users)};
  out.grad.items = {std::move(p.items.rows), std::move(p.grad_items)};
  return out;
}

PairKernel uniformity_kernel(const Matrix& x) {
  const Eigen::Index n = x.rows();
  const Vector sq = x.rowwise().squaredNorm();
  PairKernel k{Matrix(n, x.cols()), Vector(n), 0.0};
  double total = 0.0;  // counts each unordered pair twice
  for (Eigen::Index b0 = 0; b0 < n; b0 += kPairBlock) {
    const Eigen::Index len = std::min(kPairBlock, n - b0);
    Matrix w = x.middleRows(b0, len) * x.transpose();
    for (Eigen::Index r = 0; r < len; ++r) {
      for (Eigen::Index c = 0; c < n; ++c) {
        const double d2 = std::max(0.0, sq[b0 + r] + sq[c] - 2.0 * w(r, c));
        w(r, c) = (c == b0 + r) ? 0.0 : std::exp(-2.0 * d2);
      }
    }
    k.rowsum.segment(b0, len) = w.rowwise().sum();
    total += k.rowsum.segment(b0, len).sum();
    k.diff_sum.middleRows(b0, len) =
        k.rowsum.segment(b0, len).asDiagonal() * x.middleRows(b0, len) - w * x;
  }
  k.pair_sum = 0.5 * total;
  return k;
}

TableLoss uniform_loss_grad(const Matrix& table) {
  if (table.rows() < 2) throw DegenerateBatch("uniformity needs at least two rows");
  const auto norm = normalized_rows(table);
  const auto k = uniformity_kernel(norm.rows);
  const Matrix grad_hat = (-4.0 / k.pair_sum) * k.diff_sum;
  return TableLoss{std::log(k.pair_sum), through_normalization(grad_hat, norm)};
}

Matrix srank_gradient(const Matrix& a, const PowerIterationOptions& opts) {
  const auto top = top_singular(a, opts);
  const double s2 = top.sigma1 * top.sigma1;
  return (2.0 / s2) * (a - top.stable_rank * top.sigma1 * top.left_vec * top.right_vec.transpose());
}

TableLoss srank_reg_loss_grad(const Matrix& table, const PowerIterationOptions& opts) {
  const auto norm = normalized_rows(table);
  if (norm.rows.squaredNorm() == 0.0) throw DegenerateMatrix("srank regularizer: zero table");
  const auto top = top_singular(norm.rows, opts);
  const double scale = static_cast<double>(std::max(table.rows(), table.cols()));
  const double s2 = top.sigma1 * top.sigma1;
  const Matrix grad_hat =
      (2.0 / (s2 * scale)) *
      (norm.rows - top.stable_rank * top.sigma1 * top.left_vec * top.right_vec.transpose());
  return TableLoss{top.stable_rank / scale, through_normalization(grad_hat, norm)};
}

Matrix uniformity_gradients(const Matrix& table) {
  if (table.rows() < 2) throw DegenerateBatch("uniformity needs at least two rows");
  const auto k = uniformity_kernel(table);
  return -4.0 * (k.rowsum.cwiseInverse().asDiagonal() * k.diff_sum);
}

Matrix srank_gradients(const Matrix& table, const PowerIterationOptions& opts) {
  return srank_gradient(table, opts);
}

Vector uniformity_gradient_per_user(const Matrix& table, Index u) {
  const Eigen::Index n = table.rows();
  if (n < 2) throw DegenerateBatch("uniformity needs at least two rows");
  if (u < 0 || u >= n) throw IndexError("user index out of range");
  const auto x = table.row(u);
  Eigen::RowVectorXd acc = Eigen::RowVectorXd::Zero(table.cols());
  double denom = 0.0;
  for (Eigen::Index v = 0; v < n; ++v) {
    if (v == u) continue;
    const Eigen::RowVectorXd diff = x - table.row(v);
    const double w = std::exp(-2.0 * diff.squaredNorm());
    acc += w * diff;
    denom += w;
  }
  return (-4.0 * acc / denom).transpose();
}

Vector srank_gradient_per_user(const Matrix& table, Index u) {
  if (u < 0 || u >= table.rows()) throw IndexError("user index out of range");
  return srank_gradient(table).row(u).transpose();
}

double angle_between_deg(const Vector& a, const Vector& b) {
  const double na = a.norm();
  const double nb = b.norm();
  if (!(na > 1e-300) || !(nb > 1e-300)) throw UndefinedAngle("zero gradient: angle undefined");
  const double c = std::clamp(a.dot(b) / (na * nb), -1.0, 1.0);
  return std::acos(c) * 180.0 / std::numbers::pi;
}

double gradient_angle(const Matrix& table, Index u) {
  const Vector gu = uniformity_gradient_per_user(table, u);
  const Vector gs = srank_gradient_per_user(table, u);
  return angle_between_deg(gu, -gs);
}

std::vector<std::optional<double>> gradient_angles(const Matrix& table,
                                                   const PowerIterationOptions& opts) {
  const Matrix gu = uniformity_gradients(table);
  const Matrix gs = srank_gradients(table, opts);
  std::vector<std::optional<double>> out(static_cast<std::size_t>(table.rows()));
  for (Eigen::Index r = 0; r < table.rows(); ++r) {
    try {
      out[static_cast<std::size_t>(r)] =
          angle_between_deg(gu.row(r).transpose(), -gs.row(r).transpose());
    } catch (const UndefinedAngle&) {
      out[static_cast<std::size_t>(r)] = std::nullopt;
    }
  }
  return out;
}

}  // namespace cfrank
