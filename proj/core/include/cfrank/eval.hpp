#pragma once

#include <span>
#include <utility>

#include "cfrank/data.hpp"
#include "cfrank/model.hpp"

namespace cfrank {

struct MetricReport {
  double recall_at_k = 0.0;
  double ndcg_at_k = 0.0;
  int k = 20;
  std::size_t users_evaluated = 0;
};

struct UserMetrics {
  double recall = 0.0;
  double ndcg = 0.0;
};

/// Recall and NDCG for one ranked list, with the cutoff shrunk to
/// k' = min(k, |relevant|) in both denominators. `relevant` must be sorted.
UserMetrics rank_metrics(std::span<const Index> ranked_top_k, std::span<const Index> relevant, int k);

/// Top-k items by descending score, ties broken by ascending item index.
/// Items listed in `excluded` (sorted) are skipped.
std::vector<Index> top_k_items(const Vector& scores, std::span<const Index> excluded, int k);

/// Ranks all items per user, masking that user's train items, and averages
/// over users with a nonempty relevant set in `split`.
MetricReport evaluate(const EmbeddingModel& model, const InteractionDataset& ds, Split split, int k);

/// Stable rank of the row-normalized user and item tables.
std::pair<double, double> full_table_srank(const EmbeddingModel& model);

}  // namespace cfrank
