#include "doctest.h"

#include <cmath>

#include "cfrank/errors.hpp"
#include "cfrank/eval.hpp"
#include "oracles.hpp"

using cfrank::EmbeddingModel;
using cfrank::Index;
using cfrank::Matrix;
using cfrank::Split;

namespace {

cfrank::InteractionDataset small_split(std::uint64_t seed = 2) {
  cfrank::BlockDatasetOptions o;
  o.n_users = 40;
  o.n_items = 30;
  o.blocks = 3;
  o.p_in = 0.5;
  o.p_out = 0.05;
  return cfrank::split(cfrank::make_block_dataset(o), {0.8, 0.1, 0.1}, seed);
}

std::vector<int> as_int(const std::vector<Index>& v) { return {v.begin(), v.end()}; }

}  // namespace

TEST_CASE("rank_metrics hand cases") {
  const std::vector<Index> rel{7};
  const std::vector<Index> first{7, 1, 2};
  auto m = cfrank::rank_metrics(first, rel, 20);
  CHECK(m.recall == 1.0);
  CHECK(m.ndcg == 1.0);

  const std::vector<Index> miss{1, 2, 3};
  m = cfrank::rank_metrics(miss, rel, 3);
  CHECK(m.recall == 0.0);
  CHECK(m.ndcg == 0.0);

  const std::vector<Index> two_rel{4, 9};
  const std::vector<Index> ranked{4, 0, 9, 1};
  m = cfrank::rank_metrics(ranked, two_rel, 20);
  CHECK(m.recall == 1.0);
  const double expect = (1.0 + 1.0 / std::log2(4.0)) / (1.0 + 1.0 / std::log2(3.0));
  CHECK(m.ndcg == doctest::Approx(expect).epsilon(1e-12));
  CHECK(m.ndcg == doctest::Approx(0.9197).epsilon(1e-4));
}

TEST_CASE("rank_metrics shrinks the cutoff to the relevant count") {
  // Three relevant items, k = 2, both slots hit: full marks.
  const std::vector<Index> rel{1, 2, 3};
  const std::vector<Index> top{3, 1};
  const auto m = cfrank::rank_metrics(top, rel, 2);
  CHECK(m.recall == 1.0);
  CHECK(m.ndcg == doctest::Approx(1.0));
}

TEST_CASE("top_k_items ordering, ties and masking") {
  Eigen::VectorXd s(6);
  s << 0.5, 0.9, 0.5, 0.1, 0.9, 0.7;
  const std::vector<Index> none;
  CHECK(cfrank::top_k_items(s, none, 4) == std::vector<Index>{1, 4, 5, 0});
  const std::vector<Index> masked{1, 5};
  CHECK(cfrank::top_k_items(s, masked, 3) == std::vector<Index>{4, 0, 2});
  CHECK(cfrank::top_k_items(s, none, 100).size() == 6);
}

TEST_CASE("evaluate matches a brute-force ranking") {
  const auto ds = small_split();
  const EmbeddingModel m{oracle::random_matrix(ds.n_users, 5, 1), oracle::random_matrix(ds.n_items, 5, 2)};
  for (int k : {1, 5, 20}) {
    const auto report = cfrank::evaluate(m, ds, Split::Test, k);
    double r = 0.0, n = 0.0;
    std::size_t users = 0;
    for (Index u = 0; u < ds.n_users; ++u) {
      const auto& rel = ds.test_items[static_cast<std::size_t>(u)];
      if (rel.empty()) continue;
      std::vector<double> scores(static_cast<std::size_t>(ds.n_items));
      for (Index i = 0; i < ds.n_items; ++i) scores[static_cast<std::size_t>(i)] = m.users.row(u).dot(m.items.row(i));
      const auto b = oracle::brute_metrics(scores, as_int(ds.train_items[static_cast<std::size_t>(u)]), as_int(rel), k);
      r += b.recall;
      n += b.ndcg;
      ++users;
    }
    CHECK(report.users_evaluated == users);
    CHECK(report.recall_at_k == doctest::Approx(r / users).epsilon(1e-12));
    CHECK(report.ndcg_at_k == doctest::Approx(n / users).epsilon(1e-12));
    CHECK(report.recall_at_k >= 0.0);
    CHECK(report.recall_at_k <= 1.0);
    CHECK(report.ndcg_at_k >= 0.0);
    CHECK(report.ndcg_at_k <= 1.0);
  }
}

TEST_CASE("a perfect model scores one at every cutoff") {
  const auto ds = small_split(5);
  EmbeddingModel m{Matrix::Zero(ds.n_users, ds.n_items), Matrix::Identity(ds.n_items, ds.n_items)};
  for (Index u = 0; u < ds.n_users; ++u)
    for (Index i : ds.val_items[static_cast<std::size_t>(u)]) m.users(u, i) = 1.0;
  for (int k : {1, 2, 10, 20}) {
    const auto r = cfrank::evaluate(m, ds, Split::Val, k);
    CHECK(r.recall_at_k == doctest::Approx(1.0));
    CHECK(r.ndcg_at_k == doctest::Approx(1.0));
  }
}

TEST_CASE("train items never reach the top-k") {
  const auto ds = small_split(7);
  // Scores favour each user's train items above everything else.
  EmbeddingModel m{Matrix::Zero(ds.n_users, ds.n_items), Matrix::Identity(ds.n_items, ds.n_items)};
  for (Index u = 0; u < ds.n_users; ++u)
    for (Index i : ds.train_items[static_cast<std::size_t>(u)]) m.users(u, i) = 10.0;
  for (Index u = 0; u < ds.n_users; ++u) {
    const auto& train = ds.train_items[static_cast<std::size_t>(u)];
    const auto top = cfrank::top_k_items(cfrank::score_all_items(m, u), train, 20);
    for (Index i : top) CHECK_FALSE(std::binary_search(train.begin(), train.end(), i));
  }
}

TEST_CASE("metrics are invariant to monotone score transforms") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> unif(-2.0, 2.0);
  Eigen::VectorXd s(50);
  for (int i = 0; i < 50; ++i) s[i] = unif(rng);
  const std::vector<Index> excl{3, 10, 11};
  const std::vector<Index> rel{0, 5, 17, 42};
  const auto base = cfrank::rank_metrics(cfrank::top_k_items(s, excl, 10), rel, 10);
  const Eigen::VectorXd t = (3.0 * s.array() + 1.0).exp();
  const auto other = cfrank::rank_metrics(cfrank::top_k_items(t, excl, 10), rel, 10);
  CHECK(base.recall == other.recall);
  CHECK(base.ndcg == other.ndcg);
}

TEST_CASE("evaluate errors") {
  const auto ds = small_split();
  const EmbeddingModel wrong{Matrix::Ones(ds.n_users + 1, 3), Matrix::Ones(ds.n_items, 3)};
  CHECK_THROWS_AS(cfrank::evaluate(wrong, ds, Split::Test, 20), cfrank::EvalError);
  auto unsplit = ds;
  unsplit.split_assignment.clear();
  const EmbeddingModel ok{Matrix::Ones(ds.n_users, 3), Matrix::Ones(ds.n_items, 3)};
  CHECK_THROWS_AS(cfrank::evaluate(ok, unsplit, Split::Test, 20), cfrank::EvalError);
  CHECK_THROWS_AS(cfrank::evaluate(ok, ds, Split::Test, 0), cfrank::EvalError);
}

TEST_CASE("full_table_srank") {
  const auto fresh = cfrank::init_model(2000, 1500, 64, 0);
  const auto [su, si] = cfrank::full_table_srank(fresh);
  // Gaussian tables sit near the Marchenko-Pastur edge estimate n d / (sqrt n + sqrt d)^2.
  const auto mp = [](double n, double d) { return n * d / std::pow(std::sqrt(n) + std::sqrt(d), 2); };
  CHECK(su == doctest::Approx(mp(2000, 64)).epsilon(0.05));
  CHECK(si == doctest::Approx(mp(1500, 64)).epsilon(0.05));
  CHECK(su == doctest::Approx(oracle::srank(oracle::unit_rows(fresh.users))).epsilon(1e-8));
  CHECK(su <= 64.0);

  EmbeddingModel r1{Matrix::Ones(10, 4), Matrix::Ones(6, 4)};
  r1.users.col(0) *= 3.0;
  CHECK(cfrank::full_table_srank(r1).first == doctest::Approx(1.0).epsilon(1e-12));

  EmbeddingModel ortho{Matrix::Identity(5, 5) * 2.0, Matrix::Identity(5, 5)};
  CHECK(cfrank::full_table_srank(ortho).first == doctest::Approx(5.0).epsilon(1e-9));

  EmbeddingModel zero{Matrix::Zero(3, 2), Matrix::Ones(3, 2)};
  CHECK_THROWS_AS(cfrank::full_table_srank(zero), cfrank::DegenerateMatrix);
}
