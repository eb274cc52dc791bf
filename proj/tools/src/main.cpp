#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <random>
#include <sstream>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"

#include "cfrank/data.hpp"
#include "cfrank/errors.hpp"
#include "cfrank/eval.hpp"
#include "cfrank/model.hpp"
#include "cfrank/theory.hpp"
#include "cfrank/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

constexpr std::array<double, 3> kSplitRatios{0.8, 0.1, 0.1};

cfrank::InteractionFormat sniff_format(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw cfrank::IoError("cannot open " + path.string());
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#' || line == "\r") continue;
    std::istringstream fields(line);
    std::string tok;
    int n = 0;
    while (fields >> tok) ++n;
    return n >= 3 ? cfrank::InteractionFormat::TsvRated : cfrank::InteractionFormat::TsvPairs;
  }
  return cfrank::InteractionFormat::TsvPairs;
}

cfrank::InteractionDataset load_split(const fs::path& path, const std::string& format, std::uint64_t seed) {
  cfrank::InteractionFormat fmt;
  if (format == "pairs") fmt = cfrank::InteractionFormat::TsvPairs;
  else if (format == "rated") fmt = cfrank::InteractionFormat::TsvRated;
  else fmt = sniff_format(path);
  return cfrank::split(cfrank::load_interactions(path, fmt), kSplitRatios, seed);
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw cfrank::IoError("cannot write " + path.string());
  out << text;
}

ordered_json nullable(const std::optional<int>& v) {
  return v ? ordered_json(*v) : ordered_json(nullptr);
}

// ---- train ----------------------------------------------------------------

struct TrainArgs {
  std::string config;
  std::string data;
  std::string format = "auto";
  std::string loss;
  bool warm_start = false;
  double gamma = 1.0;
  double gamma_sr = 0.1;
  int k = 20;
  double lr = 0.1;
  double wd = 0.0;
  int epochs = 400;
  int patience = 20;
  int warm_patience = 20;
  std::size_t batch_size = 0;
  int dim = 64;
  std::uint64_t seed = 0;
  std::string out = "run";
  bool deterministic = false;
  bool quiet = false;
};

void add_train(CLI::App& app, TrainArgs& a) {
  auto* cmd = app.add_subcommand("train", "Train a matrix-factorization model");
  cmd->add_option("--config", a.config, "key=value file; flags on the command line take precedence");
  cmd->add_option("--data", a.data, "Interaction file (user item [rating [timestamp]])")->required();
  cmd->add_option("--format", a.format, "Input format")->check(CLI::IsMember({"auto", "pairs", "rated"}));
  cmd->add_option("--loss", a.loss, "Main loss")
      ->required()
      ->check(CLI::IsMember({"bpr", "ssm", "directau", "align"}));
  cmd->add_flag("--warm-start", a.warm_start, "Start with the stable-rank warm-start phase");
  cmd->add_option("--gamma", a.gamma, "DirectAU uniformity weight");
  cmd->add_option("--gamma-sr", a.gamma_sr, "Warm-start stable-rank weight");
  cmd->add_option("--k", a.k, "SSM negatives per positive");
  cmd->add_option("--lr", a.lr, "Learning rate");
  cmd->add_option("--wd", a.wd, "L2 weight decay");
  cmd->add_option("--epochs", a.epochs, "Epoch budget, warm-start epochs included");
  cmd->add_option("--patience", a.patience, "Early-stopping patience");
  cmd->add_option("--warm-patience", a.warm_patience, "Warm-start to main switch patience");
  cmd->add_option("--batch-size", a.batch_size, "Batch size (0 picks the loss default)");
  cmd->add_option("--dim", a.dim, "Embedding dimension");
  cmd->add_option("--seed", a.seed, "Seed for split, init and sampling");
  cmd->add_option("--out", a.out, "Output directory");
  cmd->add_flag("--deterministic", a.deterministic, "Report wall_seconds as 0 in metrics.jsonl");
  cmd->add_flag("--quiet", a.quiet, "No per-epoch progress on stderr");
}

cfrank::TrainConfig to_config(const TrainArgs& a) {
  cfrank::TrainConfig c;
  if (a.loss == "bpr") c.loss_spec = cfrank::Bpr{};
  else if (a.loss == "ssm") c.loss_spec = cfrank::Ssm{a.k};
  else if (a.loss == "directau") c.loss_spec = cfrank::DirectAU{a.gamma};
  else c.loss_spec = cfrank::AlignOnly{};
  c.warm_start = a.warm_start;
  c.gamma_sr = a.gamma_sr;
  c.lr = a.lr;
  c.weight_decay = a.wd;
  c.batch_size = a.batch_size;
  c.max_epochs = a.epochs;
  c.patience = a.patience;
  c.warm_patience = a.warm_patience;
  c.dim = a.dim;
  c.seed = a.seed;
  c.record_timing = !a.deterministic;
  cfrank::validate(c.loss_spec);
  cfrank::validate(c);
  return c;
}

int run_train(const TrainArgs& a) {
  const auto config = to_config(a);
  const auto ds = load_split(a.data, a.format, a.seed);
  const fs::path out = a.out;
  fs::create_directories(out / "traces");

  std::ofstream metrics(out / "metrics.jsonl", std::ios::binary);
  if (!metrics) throw cfrank::IoError("cannot write " + (out / "metrics.jsonl").string());
  std::ofstream srank_csv(out / "traces" / "srank.csv", std::ios::binary);
  srank_csv << "epoch,phase,srank_user,srank_item\n" << std::setprecision(17);

  cfrank::TrainHooks hooks;
  hooks.on_epoch = [&](const cfrank::EpochMetrics& m) {
    metrics << cfrank::to_json_line(m) << '\n';
    srank_csv << m.epoch << ',' << cfrank::phase_name(m.phase) << ',' << m.srank_user << ','
              << m.srank_item << '\n';
    if (!a.quiet) {
      std::fprintf(stderr, "epoch %4d %-10s loss %.6f ndcg %.4f srank %.2f/%.2f\n", m.epoch,
                   cfrank::phase_name(m.phase).c_str(), m.loss_total, m.val_ndcg20.value_or(0.0),
                   m.srank_user, m.srank_item);
    }
  };
  const auto result = cfrank::run_training(ds, config, hooks);
  metrics.flush();

  cfrank::save_checkpoint(result.best_model,
                          {static_cast<std::uint64_t>(ds.n_users), static_cast<std::uint64_t>(ds.n_items),
                           static_cast<std::uint64_t>(config.dim), a.seed,
                           static_cast<std::uint64_t>(result.best_epoch)},
                          out / "checkpoint.bin");

  const auto test = cfrank::evaluate(result.best_model, ds, cfrank::Split::Test, 20);
  const auto [su, si] = cfrank::full_table_srank(result.best_model);
  ordered_json s;
  s["loss"] = a.loss;
  s["warm_start"] = a.warm_start;
  s["seed"] = a.seed;
  s["test_recall20"] = test.recall_at_k;
  s["test_ndcg20"] = test.ndcg_at_k;
  s["srank_user"] = su;
  s["srank_item"] = si;
  s["switch_epoch"] = nullable(result.switch_epoch);
  s["best_epoch"] = result.best_epoch;
  s["best_val_ndcg20"] = result.best_val_ndcg;
  s["epochs"] = static_cast<int>(result.epochs.size());
  s["warm_epochs"] = result.warm_epochs;
  s["main_epochs"] = result.main_epochs;
  s["max_epochs_reached"] = result.max_epochs_reached;
  s["wall_seconds"] = result.wall_seconds;
  write_text(out / "summary.json", s.dump(2) + "\n");
  std::cout << s.dump() << '\n';
  return 0;
}

// ---- eval -----------------------------------------------------------------

struct EvalArgs {
  std::string checkpoint;
  std::string data;
  std::string format = "auto";
  std::string split = "test";
  int k = 20;
};

void add_eval(CLI::App& app, EvalArgs& a) {
  auto* cmd = app.add_subcommand("eval", "Evaluate a checkpoint");
  cmd->add_option("--checkpoint", a.checkpoint, "checkpoint.bin from train")->required();
  cmd->add_option("--data", a.data, "Interaction file the checkpoint was trained on")->required();
  cmd->add_option("--format", a.format, "Input format")->check(CLI::IsMember({"auto", "pairs", "rated"}));
  cmd->add_option("--split", a.split, "Split to score")->check(CLI::IsMember({"val", "test"}));
  cmd->add_option("--k", a.k, "Cutoff")->check(CLI::PositiveNumber);
}

int run_eval(const EvalArgs& a) {
  const auto ckpt = cfrank::load_checkpoint(a.checkpoint);
  const auto ds = load_split(a.data, a.format, ckpt.header.seed);
  if (static_cast<std::uint64_t>(ds.n_users) != ckpt.header.n ||
      static_cast<std::uint64_t>(ds.n_items) != ckpt.header.m) {
    throw cfrank::EvalError("shape mismatch: checkpoint " + std::to_string(ckpt.header.n) + "x" +
                            std::to_string(ckpt.header.m) + ", dataset " + std::to_string(ds.n_users) +
                            "x" + std::to_string(ds.n_items));
  }
  const auto report = cfrank::evaluate(ckpt.model, ds, a.split == "val" ? cfrank::Split::Val : cfrank::Split::Test, a.k);
  ordered_json j;
  j["split"] = a.split;
  j["k"] = report.k;
  j["recall_at_k"] = report.recall_at_k;
  j["ndcg_at_k"] = report.ndcg_at_k;
  j["users_evaluated"] = report.users_evaluated;
  std::cout << j.dump() << '\n';
  return 0;
}

// ---- theory ---------------------------------------------------------------

struct TheoryArgs {
  std::string out = "traces";
  std::uint64_t seed = 0;
  cfrank::theory::AlignmentOptions align;
  cfrank::theory::UniformityOptions uniform;
  cfrank::theory::AngleOptions angles;
  int angle_seeds = 1;
  cfrank::theory::ToyCircleOptions circle;
  std::string circle_loss = "both";
  int ey_rows = 60;
  int ey_cols = 40;
  int ey_rank = 8;
  int ey_instances = 100;
};

void add_theory(CLI::App& app, TheoryArgs& a) {
  auto* cmd = app.add_subcommand("theory", "Run a dynamics experiment and write its CSV trace");
  cmd->require_subcommand(1);
  cmd->add_option("--out", a.out, "Output directory")->capture_default_str();
  cmd->add_option("--seed", a.seed, "Seed")->capture_default_str();

  auto* al = cmd->add_subcommand("align", "Alignment-only gradient descent on a user table");
  al->add_option("--r", a.align.r, "Users")->check(CLI::Range(2, 100000));
  al->add_option("--d", a.align.d, "Dimension")->check(CLI::Range(2, 4096));
  al->add_option("--eta", a.align.eta, "Step size, 0 < eta < 0.5")
      ->check(CLI::Validator(
          [](std::string& v) {
            double x = 0.0;
            if (!CLI::detail::lexical_cast(v, x) || !(x > 0.0 && x < 0.5)) return std::string("eta must lie in (0, 0.5)");
            return std::string{};
          },
          "(0, 0.5)"));
  al->add_option("--steps", a.align.steps, "Steps")->check(CLI::NonNegativeNumber);

  auto* un = cmd->add_subcommand("uniform", "Uniformity descent from a near rank-1 grid");
  un->add_option("--r", a.uniform.r, "Users")->check(CLI::Range(2, 4096));
  un->add_option("--d", a.uniform.d, "Dimension")->check(CLI::Range(2, 4096));
  un->add_option("--epsilon", a.uniform.epsilon, "Angular spacing in radians");
  un->add_option("--eta", a.uniform.eta, "Step size");
  un->add_option("--steps", a.uniform.steps, "Steps")->check(CLI::NonNegativeNumber);
  un->add_option("--population", a.uniform.population_n, "n used in the population step constant");

  auto* an = cmd->add_subcommand("angles", "Gradient angle between uniformity and stable rank");
  an->add_option("--n", a.angles.n, "Users")->check(CLI::Range(2, 1000000));
  an->add_option("--d", a.angles.d, "Dimension")->check(CLI::Range(2, 4096));
  an->add_option("--theta", a.angles.theta_deg, "Initial cluster angle in degrees");
  an->add_option("--eta", a.angles.eta, "Step size");
  an->add_option("--steps", a.angles.steps, "Steps")->check(CLI::NonNegativeNumber);
  an->add_option("--seeds", a.angle_seeds, "Number of seeds, one CSV each")->check(CLI::Range(1, 1000));

  auto* ci = cmd->add_subcommand("circle", "Three points on the unit circle");
  ci->add_option("--loss", a.circle_loss, "Objective")->check(CLI::IsMember({"uniformity", "srank", "both"}));
  ci->add_option("--steps", a.circle.steps, "Steps")->check(CLI::NonNegativeNumber);
  ci->add_option("--eta-uniformity", a.circle.eta_uniformity, "Step size of the uniformity run");
  ci->add_option("--eta-srank", a.circle.eta_srank, "Step size of the stable-rank run");
  ci->add_option("--spread", a.circle.spread_deg, "Initial arc in degrees");

  auto* ey = cmd->add_subcommand("eckart", "Truncated SVD identity on random interaction matrices");
  ey->add_option("--rows", a.ey_rows, "Users")->check(CLI::Range(2, 256));
  ey->add_option("--cols", a.ey_cols, "Items")->check(CLI::Range(2, 256));
  ey->add_option("--rank", a.ey_rank, "Truncation rank")->check(CLI::PositiveNumber);
  ey->add_option("--instances", a.ey_instances, "Random instances")->check(CLI::PositiveNumber);

  for (auto* sub : {al, un, an, ci, ey}) sub->fallthrough();
}

int run_theory(CLI::App& theory, TheoryArgs& a) {
  namespace th = cfrank::theory;
  const fs::path out = a.out;
  fs::create_directories(out);
  auto* sub = theory.get_subcommands().front();
  const std::string name = sub->get_name();

  if (name == "align") {
    a.align.seed = a.seed;
    const auto trace = th::simulate_alignment_collapse(a.align);
    th::write_csv(trace, out / "align.csv");
    const auto& last = trace.steps.back();
    std::cout << "align: steps " << last.step << " stable_rank " << last.stable_rank << " -> "
              << (out / "align.csv").string() << '\n';
  } else if (name == "uniform") {
    a.uniform.seed = a.seed;
    const auto trace = th::simulate_uniformity_recovery(a.uniform);
    th::write_csv(trace, out / "uniform.csv");
    std::cout << "uniform: stable_rank " << trace.steps.front().stable_rank << " -> "
              << trace.steps.back().stable_rank << ", switch condition at step 0 "
              << (trace.steps.front().switch_condition ? "holds" : "fails") << '\n';
  } else if (name == "angles") {
    for (int s = 0; s < a.angle_seeds; ++s) {
      auto opts = a.angles;
      opts.seed = a.seed + static_cast<std::uint64_t>(s);
      const auto trace = th::gradient_angle_experiment(opts);
      const auto path = out / ("angles_seed" + std::to_string(opts.seed) + ".csv");
      th::write_csv(trace, path);
      std::cout << "angles: seed " << opts.seed << " step-0 mean rho " << trace.steps.front().mean_rho
                << " -> " << path.string() << '\n';
    }
  } else if (name == "circle") {
    for (const std::string loss : {"uniformity", "srank"}) {
      if (a.circle_loss != "both" && a.circle_loss != loss) continue;
      auto opts = a.circle;
      opts.seed = a.seed;
      opts.loss = loss == "srank" ? th::ToyLoss::Srank : th::ToyLoss::Uniformity;
      const auto trace = th::toy_circle_experiment(opts);
      th::write_csv(trace, out / ("circle_" + loss + ".csv"));
      const auto& last = trace.steps.back();
      std::cout << "circle " << loss << ": angles " << last.angle01 << ' ' << last.angle02 << ' '
                << last.angle12 << " stable_rank " << last.stable_rank << '\n';
    }
  } else if (name == "eckart") {
    std::mt19937_64 rng(a.seed);
    std::bernoulli_distribution coin(0.1);
    std::ofstream csv(out / "eckart.csv");
    if (!csv) throw cfrank::IoError("cannot write " + (out / "eckart.csv").string());
    csv << "instance,rank,truncation_error_sq,tail_sum,abs_diff,factor_max_abs\n" << std::setprecision(17);
    double worst = 0.0;
    int done = 0;
    for (int inst = 0; inst < a.ey_instances; ++inst) {
      cfrank::Matrix e(a.ey_rows, a.ey_cols);
      for (Eigen::Index k = 0; k < e.size(); ++k) e.data()[k] = coin(rng) ? 1.0 : 0.0;
      e(inst % a.ey_rows, inst % a.ey_cols) = 1.0;
      const auto rank = static_cast<int>(cfrank::svd_oracle(e).values.size());
      const auto rep = th::eckart_young_check(e, std::min(a.ey_rank, rank));
      const double diff = std::abs(rep.truncation_error_sq - rep.tail_sum);
      worst = std::max(worst, diff);
      csv << inst << ',' << rep.rank << ',' << rep.truncation_error_sq << ',' << rep.tail_sum << ','
          << diff << ',' << rep.factor_max_abs << '\n';
      ++done;
    }
    std::cout << "eckart: " << done << " instances, max |error^2 - tail| = " << worst
              << (worst <= 1e-8 ? " (identity holds)" : " (identity violated)") << '\n';
    if (worst > 1e-8) return 1;
  }
  return 0;
}

// ---- synth ----------------------------------------------------------------

struct SynthArgs {
  cfrank::BlockDatasetOptions opts;
  std::string out = "data/synthetic_block.tsv";
};

void add_synth(CLI::App& app, SynthArgs& a) {
  auto* cmd = app.add_subcommand("synth", "Write a block-structured synthetic interaction file");
  cmd->add_option("--users", a.opts.n_users)->check(CLI::PositiveNumber);
  cmd->add_option("--items", a.opts.n_items)->check(CLI::PositiveNumber);
  cmd->add_option("--blocks", a.opts.blocks)->check(CLI::PositiveNumber);
  cmd->add_option("--p-in", a.opts.p_in)->check(CLI::Range(0.0, 1.0));
  cmd->add_option("--p-out", a.opts.p_out)->check(CLI::Range(0.0, 1.0));
  cmd->add_option("--seed", a.opts.seed);
  cmd->add_option("--out", a.out);
}

int run_synth(const SynthArgs& a) {
  const auto ds = cfrank::make_block_dataset(a.opts);
  const fs::path out = a.out;
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  cfrank::write_interactions_tsv(ds, out);
  std::cout << "wrote " << ds.interactions.size() << " interactions (" << ds.n_users << " users, "
            << ds.n_items << " items) to " << out.string() << '\n';
  return 0;
}

}  // namespace

// Subcommand config files are not read by CLI11 itself, so `train --config`
// entries are appended as --key=value for every key missing from argv.
std::vector<std::string> expand_config(std::vector<std::string> args) {
  if (args.size() < 2 || args[1] != "train") return args;
  std::string path;
  for (std::size_t k = 2; k < args.size(); ++k) {
    if (args[k] == "--config" && k + 1 < args.size()) path = args[k + 1];
    else if (args[k].rfind("--config=", 0) == 0) path = args[k].substr(9);
  }
  if (path.empty()) return args;
  const auto given = [&](const std::string& name) {
    for (const auto& x : args)
      if (x == "--" + name || x.rfind("--" + name + "=", 0) == 0) return true;
    return false;
  };
  std::vector<std::string> extra;
  for (const auto& item : CLI::ConfigINI().from_file(path)) {
    if (item.name == "++" || item.name == "--" || given(item.name)) continue;
    if (item.inputs.size() != 1) throw CLI::ConversionError(item.name, "expected one value in " + path);
    extra.push_back("--" + item.name + "=" + item.inputs.front());
  }
  args.insert(args.end(), extra.begin(), extra.end());
  return args;
}

int main(int argc, char** argv) {
  CLI::App app{"Stable-rank experiments for collaborative filtering"};
  app.require_subcommand(1);
  TrainArgs train;
  EvalArgs eval;
  TheoryArgs theory;
  SynthArgs synth;
  add_train(app, train);
  add_eval(app, eval);
  add_theory(app, theory);
  add_synth(app, synth);

  try {
    auto args = expand_config(std::vector<std::string>(argv, argv + argc));
    args.erase(args.begin());
    std::reverse(args.begin(), args.end());
    app.parse(std::move(args));
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (app.got_subcommand("train")) return run_train(train);
    if (app.got_subcommand("eval")) return run_eval(eval);
    if (app.got_subcommand("theory")) return run_theory(*app.get_subcommand("theory"), theory);
    if (app.got_subcommand("synth")) return run_synth(synth);
  } catch (const cfrank::ConfigError& e) {
    std::cerr << "usage error: " << e.what() << "\nRun with --help for usage.\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 2;
}
