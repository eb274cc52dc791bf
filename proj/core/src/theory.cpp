#include "cfrank/theory.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <random>
#include <sstream>

#include "cfrank/losses.hpp"
#include "cfrank/model.hpp"

namespace cfrank::theory {

namespace {

double ratio(double num, double den) {
  if (den > 0.0) return num / den;
  return num > 0.0 ? std::numeric_limits<double>::infinity() : std::numeric_limits<double>::quiet_NaN();
}

double srank_from(const Vector& s) {
  return s[0] > 0.0 ? s.squaredNorm() / (s[0] * s[0]) : 0.0;
}

double second(const Vector& s) { return s.size() > 1 ? s[1] : 0.0; }

Matrix random_normal(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix m(rows, cols);
  for (Eigen::Index k = 0; k < m.size(); ++k) m.data()[k] = normal(rng);
  return m;
}

// Two orthonormal directions spanning a random plane in R^d.
std::pair<Vector, Vector> random_plane(int d, std::mt19937_64& rng) {
  if (d == 2) return {Vector::Unit(2, 0), Vector::Unit(2, 1)};
  Matrix q = random_normal(d, 2, rng);
  Eigen::HouseholderQR<Eigen::MatrixXd> qr{Eigen::MatrixXd(q)};
  Eigen::MatrixXd basis = qr.householderQ() * Eigen::MatrixXd::Identity(d, 2);
  return {basis.col(0), basis.col(1)};
}

std::string fmt(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

std::ofstream open_csv(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  return out;
}

double angle_deg(const Eigen::RowVectorXd& a, const Eigen::RowVectorXd& b) {
  const double c = std::clamp(a.dot(b) / (a.norm() * b.norm()), -1.0, 1.0);
  return std::acos(c) * 180.0 / std::numbers::pi;
}

// Stable-rank regularizer gradient on unit rows from the exact SVD. The toy
// drives the rows to a tight frame where sigma1 and sigma2 nearly tie and power
// iteration stalls.
Matrix srank_ascent_direction(const Matrix& x) {
  const auto svd = svd_oracle(x);
  const double s1 = svd.values[0];
  const double sr = x.squaredNorm() / (s1 * s1);
  const double scale = 1.0 / static_cast<double>(std::max(x.rows(), x.cols()));
  Matrix g = scale * 2.0 * (x - sr * s1 * svd.left.col(0) * svd.right.col(0).transpose()) / (s1 * s1);
  for (Eigen::Index j = 0; j < x.rows(); ++j) {
    const auto xj = x.row(j);
    g.row(j) -= g.row(j).dot(xj) * xj;
  }
  return g;
}

}  // namespace

AlignmentTrace simulate_alignment_collapse(const AlignmentOptions& opts) {
  if (!(opts.eta > 0.0 && opts.eta <= 0.5))
    throw ConfigError("alignment dynamics need 0 < eta <= 0.5");
  if (opts.r < 2 || opts.d < 2 || opts.steps < 0)
    throw ConfigError("alignment dynamics need r >= 2, d >= 2, steps >= 0");

  std::mt19937_64 rng(opts.seed);
  const Matrix u0 = random_normal(opts.r, opts.d, rng);
  const Eigen::RowVectorXd item = random_normal(1, opts.d, rng);
  const Matrix target = Matrix::Ones(opts.r, 1) * item;  // 1 (x) i^T

  AlignmentTrace trace;
  trace.item_norm = item.norm();
  const auto s0 = svd_oracle(u0).values;
  const double sig1_0 = s0[0];
  const double kappa0 = ratio(s0[0], second(s0));
  const double sqrt_r = std::sqrt(static_cast<double>(opts.r));

  Matrix u = u0;
  for (int t = 0; t <= opts.steps; ++t) {
    if (t > 0) u -= 2.0 * opts.eta * (u - target);
    const double c = std::pow(1.0 - 2.0 * opts.eta, t);
    const Matrix closed = c * u0 + (1.0 - c) * target;
    const auto s = svd_oracle(u).values;

    AlignmentStep st;
    st.step = t;
    st.sigma1 = s[0];
    st.sigma2 = second(s);
    st.stable_rank = srank_from(s);
    const double kappa_t = ratio(st.sigma1, st.sigma2);
    st.delta_empirical = std::isinf(kappa_t) ? 0.0 : kappa0 / kappa_t;
    st.delta_predicted = sig1_0 * c / ((1.0 - c) * sqrt_r * trace.item_norm + sig1_0 * c);
    st.closed_form_max_abs = (u - closed).cwiseAbs().maxCoeff();
    trace.steps.push_back(st);
  }
  return trace;
}

Matrix angular_grid(int r, int d, double epsilon, std::uint64_t seed) {
  if (r < 2 || d < 2) throw ConfigError("angular grid needs r >= 2 and d >= 2");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> angle(0.0, 2.0 * std::numbers::pi);
  const double theta = angle(rng);
  const auto [e1, e2] = random_plane(d, rng);
  Matrix m(r, d);
  for (int j = 0; j < r; ++j) {
    const double a = theta + j * epsilon;
    m.row(j) = (std::cos(a) * e1 + std::sin(a) * e2).transpose();
  }
  return m;
}

PairwiseUniformity explicit_uniformity(const Matrix& x) {
  const Eigen::Index n = x.rows();
  if (n < 2) throw DegenerateBatch("uniformity needs at least two rows");
  Matrix acc = Matrix::Zero(n, x.cols());
  double s = 0.0;
  for (Eigen::Index j = 0; j < n; ++j) {
    for (Eigen::Index k = j + 1; k < n; ++k) {
      const Eigen::RowVectorXd diff = x.row(j) - x.row(k);
      const double w = std::exp(-2.0 * diff.squaredNorm());
      s += w;
      acc.row(j) += w * diff;
      acc.row(k) -= w * diff;
    }
  }
  PairwiseUniformity out{std::log(s), (-4.0 / s) * acc};
  for (Eigen::Index j = 0; j < n; ++j) {
    const auto xj = x.row(j);
    out.grad.row(j) -= out.grad.row(j).dot(xj) * xj;
  }
  return out;
}

UniformityTrace simulate_uniformity_recovery(const UniformityOptions& opts) {
  if (!(opts.epsilon >= 0.0 && opts.epsilon <= 0.1))
    throw ConfigError("uniformity dynamics need 0 <= epsilon <= 0.1");
  if (!(opts.eta > 0.0) || opts.steps < 0) throw ConfigError("uniformity dynamics need eta > 0");
  const int pop = opts.population_n > 0 ? opts.population_n : opts.r;
  const double alpha_n = opts.eta * 4.0 * std::exp(-4.0) * std::sqrt(static_cast<double>(pop) * opts.d);
  const double alpha_r = opts.eta * 4.0 * std::exp(-4.0) * std::sqrt(static_cast<double>(opts.r) * opts.d);

  Matrix u = angular_grid(opts.r, opts.d, opts.epsilon, opts.seed);
  UniformityTrace trace;
  for (int t = 0; t <= opts.steps; ++t) {
    const auto s = svd_oracle(u).values;
    const auto sd = svd_oracle(pairwise_dists(u)).values;
    UniformityStep st;
    st.step = t;
    st.sigma1 = s[0];
    st.sigma2 = second(s);
    st.stable_rank = srank_from(s);
    st.kappa_u = ratio(st.sigma1, st.sigma2);
    st.sigma1_du = sd[0];
    st.sigma2_du = second(sd);
    st.kappa_du = ratio(st.sigma1_du, st.sigma2_du);
    st.switch_condition = st.kappa_u > st.kappa_du;
    auto pred = [&](double alpha) {
      return st.sigma1 * (alpha * st.sigma2_du + st.sigma1) /
             (st.sigma2 * (alpha * st.sigma1_du + st.sigma1));
    };
    st.delta_pred_n = pred(alpha_n);
    st.delta_pred_r = pred(alpha_r);
    if (!trace.steps.empty()) {
      auto& prev = trace.steps.back();
      prev.delta_empirical = prev.kappa_u / st.kappa_u;
    }
    trace.steps.push_back(st);
    if (t == opts.steps) break;

    const auto g = explicit_uniformity(u);
    u = normalized_rows(u - opts.eta * g.grad).rows;
  }
  return trace;
}

Matrix small_angle_cluster(int n, int d, double theta_deg, std::uint64_t seed) {
  if (n < 2 || d < 2 || !(theta_deg > 0.0)) throw ConfigError("cluster needs n, d >= 2 and theta > 0");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  Eigen::RowVectorXd center(d);
  for (int k = 0; k < d; ++k) center[k] = normal(rng);
  center.normalize();
  // Every row sits within theta/2 of the center, so pairs are within theta.
  const double half = 0.5 * theta_deg * std::numbers::pi / 180.0;
  Matrix m(n, d);
  for (int j = 0; j < n; ++j) {
    Eigen::RowVectorXd t(d);
    for (int k = 0; k < d; ++k) t[k] = normal(rng);
    t -= t.dot(center) * center;
    t.normalize();
    const double a = half * unit(rng);
    m.row(j) = std::cos(a) * center + std::sin(a) * t;
  }
  return m;
}

AngleTrace gradient_angle_experiment(const AngleOptions& opts) {
  if (opts.steps < 0 || !(opts.eta > 0.0)) throw ConfigError("angle experiment needs eta > 0");
  Matrix x = small_angle_cluster(opts.n, opts.d, opts.theta_deg, opts.seed);
  AngleTrace trace;
  for (int t = 0; t <= opts.steps; ++t) {
    const auto kern = uniformity_kernel(x);
    const Matrix srank_grad = srank_gradient(x);
    double sum = 0.0;
    double sum_sq = 0.0;
    int defined = 0;
    AngleStep st;
    st.step = t;
    for (Eigen::Index j = 0; j < x.rows(); ++j) {
      const Vector gu = (-4.0 / kern.rowsum[j]) * kern.diff_sum.row(j).transpose();
      try {
        const double rho = angle_between_deg(gu, -srank_grad.row(j).transpose());
        sum += rho;
        sum_sq += rho * rho;
        ++defined;
      } catch (const UndefinedAngle&) {
        ++st.undefined;
      }
    }
    if (defined > 0) {
      st.mean_rho = sum / defined;
      st.std_rho = std::sqrt(std::max(0.0, sum_sq / defined - st.mean_rho * st.mean_rho));
    }
    st.stable_rank = stable_rank(x);
    st.uniformity = std::log(kern.pair_sum);
    trace.undefined_total += st.undefined;
    trace.steps.push_back(st);
    if (t == opts.steps) break;

    // Descend the log-sum uniformity; rows are unit so the tangent projection
    // is the whole normalization Jacobian.
    Matrix g = (-4.0 / kern.pair_sum) * kern.diff_sum;
    for (Eigen::Index j = 0; j < x.rows(); ++j) {
      const auto xj = x.row(j);
      g.row(j) -= g.row(j).dot(xj) * xj;
    }
    x = normalized_rows(x - opts.eta * g).rows;
  }
  return trace;
}

Matrix toy_circle_init(double spread_deg, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> angle(0.0, spread_deg * std::numbers::pi / 180.0);
  Matrix x(3, 2);
  for (int j = 0; j < 3; ++j) {
    const double a = angle(rng);
    x(j, 0) = std::cos(a);
    x(j, 1) = std::sin(a);
  }
  return x;
}

ToyTrace toy_circle_experiment(const ToyCircleOptions& opts) {
  if (opts.steps < 0 || !(opts.eta_uniformity > 0.0) || !(opts.eta_srank > 0.0) || !(opts.spread_deg > 0.0))
    throw ConfigError("toy experiment needs steps >= 0, eta > 0, spread > 0");
  Matrix x = toy_circle_init(opts.spread_deg, opts.seed);
  ToyTrace trace;
  for (int t = 0; t <= opts.steps; ++t) {
    ToyStep st;
    st.step = t;
    st.angle01 = angle_deg(x.row(0), x.row(1));
    st.angle02 = angle_deg(x.row(0), x.row(2));
    st.angle12 = angle_deg(x.row(1), x.row(2));
    st.stable_rank = srank_from(svd_oracle(x).values);
    trace.steps.push_back(st);
    if (t == opts.steps) break;
    if (opts.loss == ToyLoss::Uniformity) {
      x = normalized_rows(x - opts.eta_uniformity * explicit_uniformity(x).grad).rows;
    } else {
      x = normalized_rows(x + opts.eta_srank * srank_ascent_direction(x)).rows;
    }
  }
  trace.final_rows = x;
  return trace;
}

EckartYoungReport eckart_young_check(const Matrix& e, int d) {
  const auto svd = svd_oracle(e);
  const Vector& s = svd.values;
  EckartYoungReport rep;
  for (Eigen::Index k = 0; k < s.size(); ++k)
    if (s[k] > 1e-12 * s[0]) ++rep.rank;
  if (d < 1 || d > rep.rank)
    throw ConfigError("eckart_young_check needs 1 <= d <= rank (" + std::to_string(rep.rank) + ")");

  const Matrix psi = svd.left.leftCols(d);
  const Matrix omega = svd.right.leftCols(d);
  const Vector sd = s.head(d);
  const Matrix e_d = psi * sd.asDiagonal() * omega.transpose();
  rep.truncation_error_sq = (e - e_d).squaredNorm();
  rep.tail_sum = s.tail(s.size() - d).squaredNorm();

  const Vector root = sd.cwiseSqrt();
  const Matrix u_d = psi * root.asDiagonal();
  const Matrix v_d = omega * root.asDiagonal();
  rep.factor_max_abs = (u_d * v_d.transpose() - e_d).cwiseAbs().maxCoeff();
  return rep;
}

void write_csv(const AlignmentTrace& trace, const std::filesystem::path& path) {
  auto out = open_csv(path);
  out << "step,sigma1,sigma2,stable_rank,delta_empirical,delta_predicted,closed_form_max_abs\n";
  for (const auto& s : trace.steps) {
    out << s.step << ',' << fmt(s.sigma1) << ',' << fmt(s.sigma2) << ',' << fmt(s.stable_rank) << ','
        << fmt(s.delta_empirical) << ',' << fmt(s.delta_predicted) << ','
        << fmt(s.closed_form_max_abs) << '\n';
  }
}

void write_csv(const UniformityTrace& trace, const std::filesystem::path& path) {
  auto out = open_csv(path);
  out << "step,sigma1,sigma2,stable_rank,kappa_u,sigma1_du,sigma2_du,kappa_du,switch_condition,"
         "delta_pred_n,delta_pred_r,delta_empirical\n";
  for (const auto& s : trace.steps) {
    out << s.step << ',' << fmt(s.sigma1) << ',' << fmt(s.sigma2) << ',' << fmt(s.stable_rank) << ','
        << fmt(s.kappa_u) << ',' << fmt(s.sigma1_du) << ',' << fmt(s.sigma2_du) << ','
        << fmt(s.kappa_du) << ',' << (s.switch_condition ? 1 : 0) << ',' << fmt(s.delta_pred_n)
        << ',' << fmt(s.delta_pred_r) << ','
        << (s.delta_empirical ? fmt(*s.delta_empirical) : std::string()) << '\n';
  }
}

void write_csv(const AngleTrace& trace, const std::filesystem::path& path) {
  auto out = open_csv(path);
  out << "step,mean_rho,std_rho,undefined,stable_rank,uniformity\n";
  for (const auto& s : trace.steps) {
    out << s.step << ',' << fmt(s.mean_rho) << ',' << fmt(s.std_rho) << ',' << s.undefined << ','
        << fmt(s.stable_rank) << ',' << fmt(s.uniformity) << '\n';
  }
}

void write_csv(const ToyTrace& trace, const std::filesystem::path& path) {
  auto out = open_csv(path);
  out << "step,angle01,angle02,angle12,stable_rank\n";
  for (const auto& s : trace.steps) {
    out << s.step << ',' << fmt(s.angle01) << ',' << fmt(s.angle02) << ',' << fmt(s.angle12) << ','
        << fmt(s.stable_rank) << '\n';
  }
}

}  // namespace cfrank::theory
