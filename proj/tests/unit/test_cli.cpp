#include "doctest.h"

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const fs::path kData = fs::path(CFRANK_DATA_DIR) / "synthetic_block.tsv";

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("cfrank_cli_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

struct Run {
  int code = -1;
  std::string out;
};

Run run(const std::string& args, const fs::path& dir) {
  const fs::path log = dir / "stdout.txt";
  const std::string cmd = std::string("\"") + CFRANK_CLI + "\" " + args + " > \"" + log.string() + "\" 2> \"" +
                          (dir / "stderr.txt").string() + "\"";
  const int status = std::system(cmd.c_str());
  Run r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  std::ifstream in(log);
  std::stringstream ss;
  ss << in.rdbuf();
  r.out = ss.str();
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string quick_train(const fs::path& out, const std::string& extra = "") {
  return "train --data \"" + kData.string() + "\" --dim 8 --epochs 3 --batch-size 512 --quiet --out \"" +
         out.string() + "\" " + extra;
}

}  // namespace

TEST_CASE("train requires data and a loss") {
  const auto dir = scratch("missing");
  CHECK(run("train --loss bpr", dir).code == 2);
  CHECK(run("train --data \"" + kData.string() + "\"", dir).code == 2);
  CHECK(run("train --data \"" + kData.string() + "\" --loss nope", dir).code == 2);
  CHECK(run("", dir).code == 2);
  CHECK(run("--help", dir).code == 0);
}

TEST_CASE("train writes summary, metrics, traces and a checkpoint") {
  const auto dir = scratch("train");
  const auto r = run(quick_train(dir / "run", "--loss directau --lr 5 --deterministic"), dir);
  REQUIRE(r.code == 0);
  const json s = json::parse(slurp(dir / "run" / "summary.json"));
  for (const char* key : {"loss", "warm_start", "seed", "test_recall20", "test_ndcg20", "srank_user", "srank_item",
                          "switch_epoch", "best_epoch", "best_val_ndcg20", "epochs", "warm_epochs", "main_epochs",
                          "max_epochs_reached", "wall_seconds"})
    CHECK(s.contains(key));
  CHECK(s["loss"] == "directau");
  CHECK(s["switch_epoch"].is_null());
  CHECK(s["epochs"] == 3);
  CHECK(s["srank_user"].get<double>() >= 1.0);
  CHECK(s["srank_user"].get<double>() <= 8.0 + 1e-9);

  std::ifstream metrics(dir / "run" / "metrics.jsonl");
  std::string line;
  int lines = 0;
  while (std::getline(metrics, line)) {
    const json m = json::parse(line);
    CHECK(m["epoch"] == lines + 1);
    CHECK(m["wall_seconds"] == 0.0);
    ++lines;
  }
  CHECK(lines == 3);
  std::ifstream trace(dir / "run" / "traces" / "srank.csv");
  std::getline(trace, line);
  CHECK(line == "epoch,phase,srank_user,srank_item");
  int rows = 0;
  while (std::getline(trace, line)) {
    CHECK(line.rfind(std::to_string(rows + 1) + ",main,", 0) == 0);
    ++rows;
  }
  CHECK(rows == 3);
  CHECK(fs::exists(dir / "run" / "checkpoint.bin"));
}

TEST_CASE("ssm runs with its default negative count") {
  const auto dir = scratch("ssm");
  CHECK(run(quick_train(dir / "run", "--loss ssm --lr 1"), dir).code == 0);
  CHECK(run(quick_train(dir / "bad", "--loss ssm --k 0"), dir).code == 2);
}

TEST_CASE("warm-start run records its phases") {
  const auto dir = scratch("warm");
  REQUIRE(run(quick_train(dir / "run", "--loss directau --warm-start --warm-patience 1 --lr 5"), dir).code == 0);
  const json s = json::parse(slurp(dir / "run" / "summary.json"));
  CHECK(s["warm_start"] == true);
  CHECK(s["warm_epochs"].get<int>() + s["main_epochs"].get<int>() == s["epochs"].get<int>());
  CHECK(s["warm_epochs"].get<int>() >= 1);
}

TEST_CASE("eval reproduces the training summary") {
  const auto dir = scratch("eval");
  REQUIRE(run(quick_train(dir / "run", "--loss bpr --lr 5 --seed 3"), dir).code == 0);
  const json s = json::parse(slurp(dir / "run" / "summary.json"));
  const auto ckpt = (dir / "run" / "checkpoint.bin").string();
  const auto r = run("eval --checkpoint \"" + ckpt + "\" --data \"" + kData.string() + "\"", dir);
  REQUIRE(r.code == 0);
  const json e = json::parse(r.out);
  CHECK(e["ndcg_at_k"].get<double>() == doctest::Approx(s["test_ndcg20"].get<double>()).epsilon(1e-12));
  CHECK(e["recall_at_k"].get<double>() == doctest::Approx(s["test_recall20"].get<double>()).epsilon(1e-12));

  const auto k1 = run("eval --checkpoint \"" + ckpt + "\" --data \"" + kData.string() + "\" --k 1 --split val", dir);
  REQUIRE(k1.code == 0);
  const json e1 = json::parse(k1.out);
  CHECK(e1["k"] == 1);
  CHECK(e1["ndcg_at_k"].get<double>() >= 0.0);
  CHECK(e1["ndcg_at_k"].get<double>() <= 1.0);
  CHECK(e1["recall_at_k"].get<double>() <= 1.0);

  std::ofstream other(dir / "other.tsv");
  for (int u = 0; u < 40; ++u)
    for (int i = 0; i < 10; ++i) other << u << '\t' << (u + i) % 30 << '\n';
  other.close();
  const auto bad = run("eval --checkpoint \"" + ckpt + "\" --data \"" + (dir / "other.tsv").string() + "\"", dir);
  CHECK(bad.code == 1);
  CHECK(slurp(dir / "stderr.txt").find("mismatch") != std::string::npos);
}

TEST_CASE("config file values yield to command-line flags") {
  const auto dir = scratch("config");
  std::ofstream cfg(dir / "run.ini");
  cfg << "loss=directau\nlr=5\nepochs=2\ndim=6\n";
  cfg.close();
  const std::string base = "train --data \"" + kData.string() + "\" --quiet --batch-size 512 --config \"" +
                           (dir / "run.ini").string() + "\" --out \"";
  REQUIRE(run(base + (dir / "a").string() + "\"", dir).code == 0);
  CHECK(json::parse(slurp(dir / "a" / "summary.json"))["epochs"] == 2);
  REQUIRE(run(base + (dir / "b").string() + "\" --epochs 1", dir).code == 0);
  CHECK(json::parse(slurp(dir / "b" / "summary.json"))["epochs"] == 1);
}

TEST_CASE("deterministic runs are byte-identical") {
  const auto dir = scratch("det");
  REQUIRE(run(quick_train(dir / "a", "--loss directau --warm-start --lr 5 --deterministic"), dir).code == 0);
  REQUIRE(run(quick_train(dir / "b", "--loss directau --warm-start --lr 5 --deterministic"), dir).code == 0);
  CHECK(slurp(dir / "a" / "metrics.jsonl") == slurp(dir / "b" / "metrics.jsonl"));
  CHECK(slurp(dir / "a" / "checkpoint.bin") == slurp(dir / "b" / "checkpoint.bin"));
}

TEST_CASE("theory subcommands") {
  const auto dir = scratch("theory");
  const std::string out = " --out \"" + (dir / "t").string() + "\"";
  CHECK(run("theory align --eta 0.6" + out, dir).code == 2);
  CHECK(run("theory align --eta 0.5" + out, dir).code == 2);
  CHECK(run("theory align --steps 20" + out, dir).code == 0);
  CHECK(fs::exists(dir / "t" / "align.csv"));
  CHECK(run("theory uniform --epsilon 0.5" + out, dir).code == 2);
  CHECK(run("theory uniform --steps 5" + out, dir).code == 0);
  CHECK(run("theory eckart --instances 5" + out, dir).code == 0);
  CHECK(fs::exists(dir / "t" / "eckart.csv"));
  CHECK(run("theory angles --seeds 3 --n 40 --d 8 --steps 5" + out, dir).code == 0);
  for (int s = 0; s < 3; ++s) CHECK(fs::exists(dir / "t" / ("angles_seed" + std::to_string(s) + ".csv")));
  CHECK(run("theory circle --steps 10" + out, dir).code == 0);
  CHECK(fs::exists(dir / "t" / "circle_uniformity.csv"));
  CHECK(fs::exists(dir / "t" / "circle_srank.csv"));
  CHECK(run("theory" + out, dir).code == 2);
}

TEST_CASE("synth writes a loadable file") {
  const auto dir = scratch("synth");
  REQUIRE(run("synth --users 30 --items 20 --blocks 3 --out \"" + (dir / "s.tsv").string() + "\"", dir).code == 0);
  CHECK(run("train --data \"" + (dir / "s.tsv").string() + "\" --loss bpr --epochs 1 --dim 4 --quiet --out \"" +
                (dir / "run").string() + "\"",
            dir)
            .code == 0);
}
