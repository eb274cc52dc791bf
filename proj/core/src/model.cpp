#include "cfrank/model.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <random>

namespace cfrank {

namespace {

void check_user(const EmbeddingModel& model, Index u) {
  if (u < 0 || u >= model.n_users())
    throw IndexError("user index " + std::to_string(u) + " out of range [0, " +
                     std::to_string(model.n_users()) + ")");
}

void check_item(const EmbeddingModel& model, Index i) {
  if (i < 0 || i >= model.n_items())
    throw IndexError("item index " + std::to_string(i) + " out of range [0, " +
                     std::to_string(model.n_items()) + ")");
}

template <typename T>
T to_little(T v) {
  if constexpr (std::endian::native == std::endian::big) {
    auto bytes = std::bit_cast<std::array<unsigned char, sizeof(T)>>(v);
    std::reverse(bytes.begin(), bytes.end());
    return std::bit_cast<T>(bytes);
  }
  return v;
}

void put_u64(std::ostream& out, std::uint64_t v) {
  v = to_little(v);
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

std::uint64_t get_u64(std::istream& in) {
  std::uint64_t v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!in) throw IoError("truncated checkpoint header");
  return to_little(v);
}

void put_table(std::ostream& out, const Matrix& table) {
  for (Eigen::Index r = 0; r < table.rows(); ++r)
    for (Eigen::Index c = 0; c < table.cols(); ++c) {
      const auto bits = to_little(std::bit_cast<std::uint64_t>(table(r, c)));
      out.write(reinterpret_cast<const char*>(&bits), sizeof bits);
    }
}

void get_table(std::istream& in, Matrix& table) {
  for (Eigen::Index r = 0; r < table.rows(); ++r)
    for (Eigen::Index c = 0; c < table.cols(); ++c) {
      std::uint64_t bits = 0;
      in.read(reinterpret_cast<char*>(&bits), sizeof bits);
      if (!in) throw IoError("truncated checkpoint body");
      table(r, c) = std::bit_cast<double>(to_little(bits));
    }
}

}  // namespace

EmbeddingModel init_model(Index n, Index m, Index d, std::uint64_t seed) {
  if (n < 1 || m < 1 || d < 1) throw ConfigError("init_model: dimensions must be >= 1");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  EmbeddingModel model{Matrix(n, d), Matrix(m, d)};
  for (Eigen::Index k = 0; k < model.users.size(); ++k) model.users.data()[k] = normal(rng);
  for (Eigen::Index k = 0; k < model.items.size(); ++k) model.items.data()[k] = normal(rng);
  return model;
}

double score(const EmbeddingModel& model, Index u, Index i) {
  check_user(model, u);
  check_item(model, i);
  return model.users.row(u).dot(model.items.row(i));
}

Vector score_all_items(const EmbeddingModel& model, Index u) {
  check_user(model, u);
  return model.items * model.users.row(u).transpose();
}

NormalizedRows normalized_rows(const Matrix& table) {
  NormalizedRows out{table, table.rowwise().norm(), false};
  for (Eigen::Index r = 0; r < table.rows(); ++r) {
    const double n = out.norms[r];
    if (n > 0.0) {
      out.rows.row(r) /= n;
    } else {
      out.degenerate = true;
    }
  }
  return out;
}

void save_checkpoint(const EmbeddingModel& model, const CheckpointHeader& header,
                     const std::filesystem::path& path) {
  if (header.n != static_cast<std::uint64_t>(model.users.rows()) ||
      header.m != static_cast<std::uint64_t>(model.items.rows()) ||
      header.d != static_cast<std::uint64_t>(model.users.cols()) || model.items.cols() != model.users.cols())
    throw ConfigError("checkpoint header does not match the model shape");
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write checkpoint: " + path.string());
  put_u64(out, header.n);
  put_u64(out, header.m);
  put_u64(out, header.d);
  put_u64(out, header.seed);
  put_u64(out, header.epoch);
  put_table(out, model.users);
  put_table(out, model.items);
  if (!out) throw IoError("write failure: " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read checkpoint: " + path.string());
  Checkpoint ck;
  ck.header.n = get_u64(in);
  ck.header.m = get_u64(in);
  ck.header.d = get_u64(in);
  ck.header.seed = get_u64(in);
  ck.header.epoch = get_u64(in);
  constexpr std::uint64_t kMaxRows = 1ull << 31;
  if (ck.header.n == 0 || ck.header.m == 0 || ck.header.d == 0 || ck.header.n >= kMaxRows ||
      ck.header.m >= kMaxRows || ck.header.d >= kMaxRows)
    throw IoError("corrupt checkpoint header: " + path.string());
  const auto n = static_cast<Eigen::Index>(ck.header.n);
  const auto m = static_cast<Eigen::Index>(ck.header.m);
  const auto d = static_cast<Eigen::Index>(ck.header.d);
  ck.model.users.resize(n, d);
  ck.model.items.resize(m, d);
  get_table(in, ck.model.users);
  get_table(in, ck.model.items);
  if (in.peek() != std::char_traits<char>::eof())
    throw IoError("trailing bytes after checkpoint body: " + path.string());
  return ck;
}

}  // namespace cfrank
