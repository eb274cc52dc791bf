#include "cfrank/trainer.hpp"

#include <chrono>
#include <cmath>

#include "json.hpp"

namespace cfrank {

namespace {

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};

void check_finite(const RowGradient& g, const char* table) {
  for (Eigen::Index r = 0; r < g.grad.rows(); ++r) {
    if (!g.grad.row(r).allFinite()) {
      throw NumericError(std::string("non-finite gradient in ") + table + " row " +
                         std::to_string(g.rows[static_cast<std::size_t>(r)]));
    }
  }
}

void apply(Matrix& table, const RowGradient& g, double lr, double wd) {
  for (std::size_t k = 0; k < g.rows.size(); ++k) {
    auto row = table.row(g.rows[k]);
    row -= lr * (g.grad.row(static_cast<Eigen::Index>(k)) + wd * row);
  }
}

struct Accumulator {
  double total = 0.0;
  double align = 0.0;
  double uniform = 0.0;
  double srank = 0.0;
  bool has_align = false;
  bool has_uniform = false;
  bool has_srank = false;
  int batches = 0;

  void add(const LossValue& v) {
    const auto& c = v.components;
    total += v.total;
    if (c.align) {
      align += *c.align;
      has_align = true;
    }
    if (c.uniform_user || c.uniform_item) {
      uniform += c.uniform_user.value_or(0.0) + c.uniform_item.value_or(0.0);
      has_uniform = true;
    }
    if (c.srank_user || c.srank_item) {
      srank += c.srank_user.value_or(0.0) + c.srank_item.value_or(0.0);
      has_srank = true;
    }
    ++batches;
  }
};

}  // namespace

std::string phase_name(Phase p) { return p == Phase::WarmStart ? "warm_start" : "main"; }

std::size_t default_batch_size(const LossSpec& spec) {
  return std::visit(Overloaded{
                        [](const Bpr&) -> std::size_t { return 16384; },
                        [](const Ssm&) -> std::size_t { return 16384; },
                        [](const auto&) -> std::size_t { return 4096; },
                    },
                    spec);
}

void validate(const TrainConfig& c) {
  validate(c.loss_spec);
  if (std::holds_alternative<WarmStart>(c.loss_spec))
    throw ConfigError("warm-start is a phase, not a main loss; set warm_start instead");
  if (!(c.lr > 0.0)) throw ConfigError("lr must be positive");
  if (c.weight_decay < 0.0) throw ConfigError("weight decay must be nonnegative");
  if (c.patience < 1 || c.warm_patience < 1) throw ConfigError("patience must be >= 1");
  if (c.max_epochs < 1) throw ConfigError("max_epochs must be >= 1");
  if (c.eval_every < 1) throw ConfigError("eval_every must be >= 1");
  if (c.dim < 1) throw ConfigError("embedding dimension must be >= 1");
  if (c.eval_k < 1) throw ConfigError("eval k must be >= 1");
  if (c.warm_start && !(c.gamma_sr > 0.0)) throw ConfigError("gamma_sr must be positive");
}

std::pair<PhaseController, bool> phase_signal(PhaseController c, double val_metric) {
  if (!std::isfinite(val_metric)) throw NumericError("phase_signal: validation metric is not finite");
  if (val_metric > c.best_val) {
    c.best_val = val_metric;
    c.epochs_since_improve = 0;
  } else {
    ++c.epochs_since_improve;
  }
  return {c, c.epochs_since_improve >= c.patience};
}

std::string to_json_line(const EpochMetrics& m) {
  nlohmann::ordered_json j;
  auto opt = [](const std::optional<double>& v) -> nlohmann::ordered_json {
    return v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json(nullptr);
  };
  j["epoch"] = m.epoch;
  j["phase"] = phase_name(m.phase);
  j["loss_total"] = m.loss_total;
  j["loss_align"] = opt(m.loss_align);
  j["loss_uniform"] = opt(m.loss_uniform);
  j["loss_srank"] = opt(m.loss_srank);
  j["val_recall20"] = opt(m.val_recall20);
  j["val_ndcg20"] = opt(m.val_ndcg20);
  j["srank_user"] = m.srank_user;
  j["srank_item"] = m.srank_item;
  j["wall_seconds"] = m.wall_seconds;
  return j.dump();
}

void optimizer_step(EmbeddingModel& model, const ModelGradient& grad, double lr, double weight_decay) {
  check_finite(grad.users, "user table");
  check_finite(grad.items, "item table");
  apply(model.users, grad.users, lr, weight_decay);
  apply(model.items, grad.items, lr, weight_decay);
}

TrainResult run_training(const InteractionDataset& ds, const TrainConfig& config,
                         const TrainHooks& hooks) {
  validate(config);
  if (!ds.is_split()) throw ConfigError("run_training needs a split dataset");
  using Clock = std::chrono::steady_clock;

  EmbeddingModel model = init_model(ds.n_users, ds.n_items, config.dim, config.seed);
  Sampler sampler(ds, config.seed + 0x9e3779b97f4a7c15ull);
  const std::size_t batch_size =
      config.batch_size > 0 ? config.batch_size : default_batch_size(config.loss_spec);

  PhaseController ctl;
  ctl.phase = config.warm_start ? Phase::WarmStart : Phase::Main;
  ctl.patience = config.warm_start ? config.warm_patience : config.patience;

  TrainResult result;
  result.best_model = model;

  auto main_loss = [&](std::span<const std::uint32_t> idx) -> LossResult {
    return std::visit(Overloaded{
                          [&](const Bpr&) { return bpr_loss_grad(model, sampler.triplets_from(idx)); },
                          [&](const Ssm& s) { return ssm_loss_grad(model, sampler.set_batch_from(idx, s.k)); },
                          [&](const DirectAU& s) {
                            return directau_loss_grad(model, sampler.pairs_from(idx), s.gamma);
                          },
                          [&](const AlignOnly&) { return align_loss_grad(model, sampler.pairs_from(idx)); },
                          [&](const WarmStart& s) {
                            return warmstart_loss_grad(model, sampler.pairs_from(idx), s.gamma_sr);
                          },
                      },
                      config.loss_spec);
  };

  for (int epoch = 1; epoch <= config.max_epochs; ++epoch) {
    const Phase phase = ctl.phase;
    Accumulator acc;
    double seconds = 0.0;
    for (const auto idx : sampler.epoch_batches(batch_size)) {
      LossResult step;
      if (phase == Phase::WarmStart) {
        const auto batch = sampler.pairs_from(idx);
        const auto t0 = Clock::now();
        step = warmstart_loss_grad(model, batch, config.gamma_sr);
        optimizer_step(model, step.grad, config.lr, config.weight_decay);
        seconds += std::chrono::duration<double>(Clock::now() - t0).count();
      } else {
        // Batch assembly (negative sampling) sits inside main_loss; time the whole call.
        const auto t0 = Clock::now();
        step = main_loss(idx);
        optimizer_step(model, step.grad, config.lr, config.weight_decay);
        seconds += std::chrono::duration<double>(Clock::now() - t0).count();
      }
      acc.add(step.value);
    }
    (phase == Phase::WarmStart ? result.warm_epochs : result.main_epochs) += 1;
    result.wall_seconds += seconds;

    EpochMetrics m;
    m.epoch = epoch;
    m.phase = phase;
    const double nb = std::max(acc.batches, 1);
    m.loss_total = acc.total / nb;
    if (acc.has_align) m.loss_align = acc.align / nb;
    if (acc.has_uniform) m.loss_uniform = acc.uniform / nb;
    if (acc.has_srank) m.loss_srank = acc.srank / nb;
    std::tie(m.srank_user, m.srank_item) = full_table_srank(model);
    m.wall_seconds = config.record_timing ? seconds : 0.0;

    bool stop = false;
    if (epoch % config.eval_every == 0) {
      const MetricReport val = hooks.validator ? hooks.validator(model, epoch)
                                               : evaluate(model, ds, Split::Val, config.eval_k);
      m.val_recall20 = val.recall_at_k;
      m.val_ndcg20 = val.ndcg_at_k;
      if (val.ndcg_at_k > result.best_val_ndcg) {
        result.best_val_ndcg = val.ndcg_at_k;
        result.best_epoch = epoch;
        result.best_model = model;
      }
      auto [next, triggered] = phase_signal(ctl, val.ndcg_at_k);
      ctl = next;
      if (triggered) {
        if (ctl.phase == Phase::WarmStart) {
          ctl = PhaseController{};
          ctl.phase = Phase::Main;
          ctl.patience = config.patience;
          ctl.switch_epoch = epoch;
          result.switch_epoch = epoch;
        } else {
          stop = true;
        }
      }
      result.history.push_back(ctl);
    }
    if (hooks.on_epoch) hooks.on_epoch(m);
    result.epochs.push_back(std::move(m));
    if (stop) break;
    if (epoch == config.max_epochs) result.max_epochs_reached = true;
  }
  return result;
}

}  // namespace cfrank
