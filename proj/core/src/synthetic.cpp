#include <random>

#include "cfrank/data.hpp"

namespace cfrank {

InteractionDataset make_block_dataset(const BlockDatasetOptions& opts) {
  if (opts.n_users < 1 || opts.n_items < 1 || opts.blocks < 1)
    throw ConfigError("block dataset needs positive sizes");
  if (opts.p_in < 0.0 || opts.p_in > 1.0 || opts.p_out < 0.0 || opts.p_out > 1.0)
    throw ConfigError("block dataset probabilities must lie in [0, 1]");

  std::mt19937_64 rng(opts.seed);
  std::bernoulli_distribution in_block(opts.p_in);
  std::bernoulli_distribution cross_block(opts.p_out);
  std::vector<std::pair<std::string, std::string>> pairs;
  for (Index u = 0; u < opts.n_users; ++u) {
    const int ub = u % opts.blocks;
    for (Index i = 0; i < opts.n_items; ++i) {
      const bool hit = (i % opts.blocks == ub) ? in_block(rng) : cross_block(rng);
      if (hit) pairs.emplace_back("u" + std::to_string(u), "i" + std::to_string(i));
    }
  }
  return InteractionDataset::from_pairs(pairs);
}

}  // namespace cfrank
