#include "doctest.h"

#include <set>

#include "cfrank/errors.hpp"
#include "cfrank/trainer.hpp"
#include "json.hpp"
#include "oracles.hpp"

using cfrank::EmbeddingModel;
using cfrank::Matrix;
using cfrank::Phase;
using cfrank::PhaseController;
using cfrank::TrainConfig;

namespace {

cfrank::InteractionDataset blocks(int users, int items, int nblocks, std::uint64_t data_seed,
                                  std::uint64_t split_seed, double p_in = 0.5, double p_out = 0.02) {
  cfrank::BlockDatasetOptions o;
  o.n_users = users;
  o.n_items = items;
  o.blocks = nblocks;
  o.p_in = p_in;
  o.p_out = p_out;
  o.seed = data_seed;
  return cfrank::split(cfrank::make_block_dataset(o), {0.8, 0.1, 0.1}, split_seed);
}

// Validator that replays a fixed NDCG sequence.
cfrank::Validator replay(std::vector<double> seq) {
  return [seq](const EmbeddingModel&, int epoch) {
    cfrank::MetricReport r;
    r.ndcg_at_k = seq[static_cast<std::size_t>(std::min<int>(epoch, static_cast<int>(seq.size())) - 1)];
    return r;
  };
}

TrainConfig small_config() {
  TrainConfig c;
  c.loss_spec = cfrank::DirectAU{1.0};
  c.dim = 8;
  c.batch_size = 64;
  c.lr = 5.0;
  c.max_epochs = 20;
  c.patience = 3;
  c.warm_patience = 3;
  c.record_timing = false;
  return c;
}

}  // namespace

TEST_CASE("optimizer_step") {
  EmbeddingModel m{oracle::random_matrix(3, 2, 1), oracle::random_matrix(2, 2, 2)};
  const EmbeddingModel before = m;
  cfrank::ModelGradient zero{{{0, 2}, Matrix::Zero(2, 2)}, {{1}, Matrix::Zero(1, 2)}};
  cfrank::optimizer_step(m, zero, 0.5, 0.0);
  CHECK(m.users == before.users);
  CHECK(m.items == before.items);

  cfrank::ModelGradient self{{{1}, m.users.row(1)}, {{}, Matrix(0, 2)}};
  cfrank::optimizer_step(m, self, 1.0, 0.0);
  CHECK(m.users.row(1).norm() == 0.0);
  CHECK(m.users.row(0) == before.users.row(0));

  // Decay only.
  EmbeddingModel d{Matrix::Ones(1, 2), Matrix::Ones(1, 2)};
  cfrank::optimizer_step(d, {{{0}, Matrix::Zero(1, 2)}, {{0}, Matrix::Zero(1, 2)}}, 0.1, 0.5);
  CHECK(d.users(0, 0) == doctest::Approx(0.95));

  cfrank::ModelGradient bad{{{0}, Matrix::Constant(1, 2, std::nan(""))}, {{}, Matrix(0, 2)}};
  CHECK_THROWS_AS(cfrank::optimizer_step(m, bad, 0.1, 0.0), cfrank::NumericError);
}

TEST_CASE("one alignment step from orthogonal unit vectors") {
  EmbeddingModel m{Matrix(1, 2), Matrix(1, 2)};
  m.users << 1, 0;
  m.items << 0, 1;
  const auto r = cfrank::align_loss_grad(m, cfrank::PairBatch{{0}, {0}});
  cfrank::optimizer_step(m, r.grad, 0.1, 0.0);
  // The raw-space step u - 2 eta (u - i) = (0.8, 0.2), restricted to the
  // tangent plane of the unit circle at u by the normalization Jacobian.
  CHECK(m.users(0, 0) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(m.users(0, 1) == doctest::Approx(0.2).epsilon(1e-12));
  CHECK(m.items(0, 0) == doctest::Approx(0.2).epsilon(1e-12));
  CHECK(m.items(0, 1) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("phase_signal counter logic") {
  PhaseController c;
  c.patience = 3;
  bool fired = false;
  for (double v : {0.1, 0.2, 0.3, 0.4, 0.5}) {
    std::tie(c, fired) = cfrank::phase_signal(c, v);
    CHECK_FALSE(fired);
  }
  CHECK(c.best_val == 0.5);

  PhaseController flat;
  flat.patience = 4;
  int fired_at = -1;
  for (int e = 0; e < 10 && fired_at < 0; ++e) {
    std::tie(flat, fired) = cfrank::phase_signal(flat, 0.3);
    if (fired) fired_at = e;
  }
  CHECK(fired_at == 4);  // four evaluations beyond the first

  PhaseController dip;
  dip.patience = 3;
  for (double v : {0.2, 0.19, 0.18, 0.21, 0.2, 0.2, 0.22}) {
    std::tie(dip, fired) = cfrank::phase_signal(dip, v);
    CHECK_FALSE(fired);
  }
  CHECK_THROWS_AS(cfrank::phase_signal(dip, std::nan("")), cfrank::NumericError);
}

TEST_CASE("config validation and defaults") {
  CHECK(cfrank::default_batch_size(cfrank::Bpr{}) == 16384);
  CHECK(cfrank::default_batch_size(cfrank::Ssm{}) == 16384);
  CHECK(cfrank::default_batch_size(cfrank::DirectAU{}) == 4096);
  TrainConfig c;
  CHECK(c.patience == 20);
  CHECK(c.max_epochs == 400);
  CHECK(c.dim == 64);
  CHECK(c.gamma_sr == 0.1);
  CHECK_NOTHROW(cfrank::validate(c));
  auto bad = c;
  bad.lr = 0.0;
  CHECK_THROWS_AS(cfrank::validate(bad), cfrank::ConfigError);
  bad = c;
  bad.patience = 0;
  CHECK_THROWS_AS(cfrank::validate(bad), cfrank::ConfigError);
  bad = c;
  bad.loss_spec = cfrank::WarmStart{};
  CHECK_THROWS_AS(cfrank::validate(bad), cfrank::ConfigError);
  bad = c;
  bad.loss_spec = cfrank::Ssm{0};
  CHECK_THROWS_AS(cfrank::validate(bad), cfrank::ConfigError);
}

TEST_CASE("run_training needs a split dataset") {
  cfrank::InteractionDataset raw = cfrank::InteractionDataset::from_pairs({{"a", "x"}});
  CHECK_THROWS_AS(cfrank::run_training(raw, small_config()), cfrank::ConfigError);
}

TEST_CASE("vanilla training stays in the main phase") {
  const auto ds = blocks(30, 30, 3, 1, 1);
  const auto r = cfrank::run_training(ds, small_config());
  CHECK_FALSE(r.switch_epoch.has_value());
  CHECK(r.warm_epochs == 0);
  for (const auto& m : r.epochs) CHECK(m.phase == Phase::Main);
  CHECK(r.best_epoch >= 1);
  CHECK(r.main_epochs == static_cast<int>(r.epochs.size()));
}

TEST_CASE("injected validation sequence drives the switch") {
  const auto ds = blocks(30, 30, 3, 1, 1);
  auto c = small_config();
  c.warm_start = true;
  c.warm_patience = 2;
  c.patience = 2;
  c.max_epochs = 10;
  cfrank::TrainHooks hooks;
  hooks.validator = replay({0.1, 0.11, 0.10, 0.10, 0.10, 0.12, 0.13, 0.13, 0.13, 0.13});
  const auto r = cfrank::run_training(ds, c, hooks);
  REQUIRE(r.switch_epoch.has_value());
  CHECK(*r.switch_epoch == 4);
  CHECK(r.warm_epochs == 4);
  CHECK(r.epochs[3].phase == Phase::WarmStart);
  CHECK(r.epochs[4].phase == Phase::Main);
  // Fresh counter after the switch: 0.12 and 0.13 improve, then two flats stop.
  CHECK(r.epochs.size() == 9);
  CHECK(r.best_epoch == 7);
  CHECK(r.best_val_ndcg == 0.13);
  CHECK_FALSE(r.max_epochs_reached);
}

TEST_CASE("phases never go back and warm epochs share the budget") {
  const auto ds = blocks(30, 30, 3, 1, 1);
  auto c = small_config();
  c.warm_start = true;
  c.max_epochs = 6;
  cfrank::TrainHooks hooks;
  hooks.validator = replay({0.5, 0.4, 0.3, 0.2, 0.1, 0.05});
  c.warm_patience = 1;
  c.patience = 10;
  const auto r = cfrank::run_training(ds, c, hooks);
  CHECK(r.epochs.size() == 6);
  CHECK(r.max_epochs_reached);
  CHECK(r.warm_epochs + r.main_epochs == 6);
  bool main_seen = false;
  for (const auto& m : r.epochs) {
    if (m.phase == Phase::Main) main_seen = true;
    if (main_seen) CHECK(m.phase == Phase::Main);
  }
  CHECK(r.best_epoch == 1);
}

TEST_CASE("training is deterministic for a fixed seed") {
  const auto ds = blocks(30, 30, 3, 1, 1);
  auto c = small_config();
  c.warm_start = true;
  std::vector<std::string> a, b;
  cfrank::TrainHooks ha, hb;
  ha.on_epoch = [&](const cfrank::EpochMetrics& m) { a.push_back(cfrank::to_json_line(m)); };
  hb.on_epoch = [&](const cfrank::EpochMetrics& m) { b.push_back(cfrank::to_json_line(m)); };
  const auto ra = cfrank::run_training(ds, c, ha);
  const auto rb = cfrank::run_training(ds, c, hb);
  CHECK(a == b);
  CHECK(ra.best_model.users == rb.best_model.users);
  c.seed = 1;
  CHECK(cfrank::run_training(ds, c).best_model.users != ra.best_model.users);
}

TEST_CASE("epoch metrics json schema") {
  cfrank::EpochMetrics m;
  m.epoch = 3;
  m.phase = Phase::WarmStart;
  m.loss_total = 0.5;
  m.loss_align = 0.25;
  m.srank_user = 2.0;
  m.srank_item = 3.0;
  const auto j = nlohmann::json::parse(cfrank::to_json_line(m));
  std::vector<std::string> keys;
  const auto ordered = nlohmann::ordered_json::parse(cfrank::to_json_line(m));
  for (const auto& [k, v] : ordered.items()) keys.push_back(k);
  CHECK(keys == std::vector<std::string>{"epoch", "phase", "loss_total", "loss_align", "loss_uniform", "loss_srank",
                                         "val_recall20", "val_ndcg20", "srank_user", "srank_item", "wall_seconds"});
  CHECK(j["phase"] == "warm_start");
  CHECK(j["loss_uniform"].is_null());
  CHECK(j["loss_align"] == 0.25);
  CHECK(cfrank::to_json_line(m).find('\n') == std::string::npos);
}

TEST_CASE("logged stable ranks lie in [1, d]") {
  const auto ds = blocks(30, 30, 3, 1, 1);
  const auto r = cfrank::run_training(ds, small_config());
  for (const auto& m : r.epochs) {
    CHECK(m.srank_user >= 1.0 - 1e-9);
    CHECK(m.srank_user <= 8.0 + 1e-9);
    CHECK(m.srank_item >= 1.0 - 1e-9);
    CHECK(m.srank_item <= 8.0 + 1e-9);
    CHECK(m.wall_seconds == 0.0);
  }
}

TEST_CASE("alignment on one shared item collapses the user table") {
  std::vector<std::pair<std::string, std::string>> pairs;
  for (int u = 0; u < 200; ++u) pairs.emplace_back("u" + std::to_string(u), "shared");
  const auto ds = cfrank::split(cfrank::InteractionDataset::from_pairs(pairs), {0.8, 0.1, 0.1}, 0);
  std::vector<cfrank::Index> train_users;
  for (cfrank::Index u = 0; u < ds.n_users; ++u)
    if (!ds.train_items[static_cast<std::size_t>(u)].empty()) train_users.push_back(u);

  TrainConfig c;
  c.loss_spec = cfrank::AlignOnly{};
  c.dim = 16;
  c.batch_size = 32;
  c.lr = 200.0;
  c.max_epochs = 40;
  c.patience = 1000;
  std::vector<double> sr;
  cfrank::TrainHooks hooks;
  hooks.validator = [&](const EmbeddingModel& m, int) {
    Matrix rows(static_cast<Eigen::Index>(train_users.size()), m.dim());
    for (std::size_t k = 0; k < train_users.size(); ++k) rows.row(static_cast<Eigen::Index>(k)) = m.users.row(train_users[k]);
    sr.push_back(oracle::srank(oracle::unit_rows(rows)));
    return cfrank::MetricReport{};
  };
  (void)cfrank::run_training(ds, c, hooks);
  REQUIRE(sr.size() == 40);
  for (std::size_t e = 6; e < sr.size(); ++e) CHECK(sr[e] <= sr[e - 1] + 1e-9);
  CHECK(sr.back() < 1.0 + 1e-3);
}

TEST_CASE("the stable-rank phase keeps a higher stable rank than alignment alone") {
  const auto ds = blocks(60, 60, 4, 3, 3);
  TrainConfig c;
  c.loss_spec = cfrank::AlignOnly{};
  c.dim = 16;
  c.batch_size = 128;
  c.lr = 20.0;
  c.max_epochs = 30;
  c.patience = 1000;
  c.warm_patience = 1000;
  c.record_timing = false;
  const auto plain = cfrank::run_training(ds, c);
  c.warm_start = true;
  const auto warm = cfrank::run_training(ds, c);
  REQUIRE(warm.warm_epochs == 30);
  CHECK(warm.epochs.back().srank_user > plain.epochs.back().srank_user);
}
