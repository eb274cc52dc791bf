#include "cfrank/eval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace cfrank {

UserMetrics rank_metrics(std::span<const Index> ranked_top_k, std::span<const Index> relevant, int k) {
  UserMetrics m;
  if (relevant.empty() || k < 1) return m;
  const std::size_t k_eff = std::min(static_cast<std::size_t>(k), relevant.size());
  const std::size_t depth = std::min(static_cast<std::size_t>(k), ranked_top_k.size());
  double hits = 0.0;
  double dcg = 0.0;
  for (std::size_t pos = 0; pos < depth; ++pos) {
    if (std::binary_search(relevant.begin(), relevant.end(), ranked_top_k[pos])) {
      hits += 1.0;
      dcg += 1.0 / std::log2(static_cast<double>(pos) + 2.0);
    }
  }
  double idcg = 0.0;
  for (std::size_t pos = 0; pos < k_eff; ++pos) idcg += 1.0 / std::log2(static_cast<double>(pos) + 2.0);
  m.recall = hits / static_cast<double>(k_eff);
  m.ndcg = dcg / idcg;
  return m;
}

std::vector<Index> top_k_items(const Vector& scores, std::span<const Index> excluded, int k) {
  std::vector<Index> candidates;
  candidates.reserve(static_cast<std::size_t>(scores.size()));
  for (Index i = 0; i < static_cast<Index>(scores.size()); ++i) {
    if (!std::binary_search(excluded.begin(), excluded.end(), i)) candidates.push_back(i);
  }
  const auto take = std::min(candidates.size(), static_cast<std::size_t>(std::max(k, 0)));
  auto better = [&](Index a, Index b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return a < b;
  };
  std::partial_sort(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(take),
                    candidates.end(), better);
  candidates.resize(take);
  return candidates;
}

MetricReport evaluate(const EmbeddingModel& model, const InteractionDataset& ds, Split split, int k) {
  if (!ds.is_split()) throw EvalError("evaluate: dataset has not been split");
  if (k < 1) throw EvalError("evaluate: k must be >= 1");
  if (model.n_users() != ds.n_users || model.n_items() != ds.n_items)
    throw EvalError("evaluate: model shape does not match dataset");
  const auto& relevant = ds.relevant(split);
  MetricReport report;
  report.k = k;
  double recall_sum = 0.0;
  double ndcg_sum = 0.0;
  for (Index u = 0; u < ds.n_users; ++u) {
    const auto& rel = relevant[static_cast<std::size_t>(u)];
    if (rel.empty()) continue;
    const Vector scores = model.items * model.users.row(u).transpose();
    const auto top = top_k_items(scores, ds.train_items[static_cast<std::size_t>(u)], k);
    const auto m = rank_metrics(top, rel, k);
    recall_sum += m.recall;
    ndcg_sum += m.ndcg;
    ++report.users_evaluated;
  }
  if (report.users_evaluated == 0) throw EvalError("evaluate: split has no relevant items");
  report.recall_at_k = recall_sum / static_cast<double>(report.users_evaluated);
  report.ndcg_at_k = ndcg_sum / static_cast<double>(report.users_evaluated);
  return report;
}

std::pair<double, double> full_table_srank(const EmbeddingModel& model) {
  const auto u = normalized_rows(model.users);
  const auto i = normalized_rows(model.items);
  return {stable_rank(u.rows), stable_rank(i.rows)};
}

}  // namespace cfrank
