#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "cfrank/errors.hpp"

namespace cfrank {

using Index = std::int32_t;

enum class Split : std::uint8_t { Train = 0, Val = 1, Test = 2 };

enum class InteractionFormat {
  TsvPairs,  // <user>\t<item>
  TsvRated,  // <user>\t<item>\t<rating>[\t<timestamp>]
};

struct Interaction {
  Index user = 0;
  Index item = 0;
  friend bool operator==(const Interaction&, const Interaction&) = default;
};

/// Implicit-feedback interaction log with dense ids and (optionally) a split.
///
/// Construction goes through load_interactions() or from_pairs(); split()
/// returns a copy with split labels and the per-user item sets filled in.
struct InteractionDataset {
  Index n_users = 0;
  Index n_items = 0;
  std::vector<Interaction> interactions;
  std::vector<std::string> user_ids;  // dense index -> raw id
  std::vector<std::string> item_ids;
  std::size_t duplicates_dropped = 0;

  // Filled by split().
  std::vector<Split> split_assignment;
  std::vector<std::uint32_t> train_indices;  // indices into interactions
  std::vector<std::vector<Index>> train_items;  // per user, sorted
  std::vector<std::vector<Index>> val_items;
  std::vector<std::vector<Index>> test_items;

  bool is_split() const { return split_assignment.size() == interactions.size() && !interactions.empty(); }
  const std::vector<std::vector<Index>>& relevant(Split s) const;
  std::size_t count(Split s) const;

  /// Builds an unsplit dataset from raw pairs, remapping ids in first-seen order.
  static InteractionDataset from_pairs(const std::vector<std::pair<std::string, std::string>>& pairs);
};

InteractionDataset load_interactions(const std::filesystem::path& path, InteractionFormat format);

/// Train gets floor(r0 * N), val floor(r1 * N), test the remainder.
InteractionDataset split(const InteractionDataset& ds, std::array<double, 3> ratios,
                         std::uint64_t seed);

struct PairBatch {
  std::vector<Index> users;
  std::vector<Index> items;
  std::size_t size() const { return users.size(); }
};

struct TripletBatch {
  std::vector<Index> users;
  std::vector<Index> pos_items;
  std::vector<Index> neg_items;
  std::size_t size() const { return users.size(); }
};

/// k negatives per example, stored flat: example b owns neg_items[b*k, (b+1)*k).
struct SetBatch {
  std::vector<Index> users;
  std::vector<Index> pos_items;
  std::vector<Index> neg_items;
  int k = 1;
  std::size_t size() const { return users.size(); }
  std::span<const Index> negatives(std::size_t b) const {
    return std::span<const Index>(neg_items).subspan(b * static_cast<std::size_t>(k),
                                                     static_cast<std::size_t>(k));
  }
};

/// Seeded sampler over the train split. Negatives are uniform over all items
/// with no filtering of observed pairs, so false negatives are possible.
/// Not thread-safe; use one per worker.
class Sampler {
 public:
  Sampler(const InteractionDataset& ds, std::uint64_t seed);

  /// Positives drawn uniformly (with replacement) from train interactions.
  TripletBatch triplets(std::size_t batch_size);
  SetBatch set_batch(std::size_t batch_size, int k);
  PairBatch pairs(std::size_t batch_size);

  /// Epoch pass: a fresh permutation of the train interactions cut into batches.
  std::vector<std::span<const std::uint32_t>> epoch_batches(std::size_t batch_size);

  PairBatch pairs_from(std::span<const std::uint32_t> idx) const;
  TripletBatch triplets_from(std::span<const std::uint32_t> idx);
  SetBatch set_batch_from(std::span<const std::uint32_t> idx, int k);

 private:
  Index draw_item();
  std::uint32_t draw_train();

  const InteractionDataset* ds_;
  std::mt19937_64 rng_;
  std::vector<std::uint32_t> order_;
};

TripletBatch sample_triplets(const InteractionDataset& ds, std::size_t batch_size, std::uint64_t seed);
SetBatch sample_set_batch(const InteractionDataset& ds, std::size_t batch_size, int k,
                          std::uint64_t seed);

/// Block-structured synthetic log: users and items are dealt round-robin into
/// `blocks` communities; in-block pairs appear with probability p_in and
/// cross-block pairs with p_out.
struct BlockDatasetOptions {
  Index n_users = 500;
  Index n_items = 500;
  int blocks = 10;
  double p_in = 0.2;
  double p_out = 0.005;
  std::uint64_t seed = 7;
};

InteractionDataset make_block_dataset(const BlockDatasetOptions& opts);

void write_interactions_tsv(const InteractionDataset& ds, const std::filesystem::path& path);

}  // namespace cfrank
