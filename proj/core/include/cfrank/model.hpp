#pragma once

#include <cstdint>
#include <filesystem>

#include "cfrank/data.hpp"
#include "cfrank/linalg.hpp"

namespace cfrank {

/// Matrix-factorization model: user table U (n x d) and item table I (m x d),
/// scored by dot product.
struct EmbeddingModel {
  Matrix users;
  Matrix items;

  Index n_users() const { return static_cast<Index>(users.rows()); }
  Index n_items() const { return static_cast<Index>(items.rows()); }
  Index dim() const { return static_cast<Index>(users.cols()); }
};

/// Entries i.i.d. standard normal.
EmbeddingModel init_model(Index n, Index m, Index d, std::uint64_t seed);

double score(const EmbeddingModel& model, Index u, Index i);
Vector score_all_items(const EmbeddingModel& model, Index u);

struct NormalizedRows {
  Matrix rows;
  Vector norms;  // original row norms
  bool degenerate = false;  // some row was zero and was left at zero
};

/// Scales every nonzero row to unit L2 norm. Zero rows stay zero and raise the flag.
NormalizedRows normalized_rows(const Matrix& table);

struct CheckpointHeader {
  std::uint64_t n = 0;
  std::uint64_t m = 0;
  std::uint64_t d = 0;
  std::uint64_t seed = 0;
  std::uint64_t epoch = 0;
};

/// Layout: five little-endian u64 (n, m, d, seed, epoch), then U and I as
/// row-major little-endian float64.
void save_checkpoint(const EmbeddingModel& model, const CheckpointHeader& header,
                     const std::filesystem::path& path);

struct Checkpoint {
  CheckpointHeader header;
  EmbeddingModel model;
};

Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace cfrank
