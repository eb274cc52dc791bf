#include "cfrank/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <string_view>
#include <unordered_map>
#include <unordered_set>

namespace cfrank {

namespace {

std::vector<std::string_view> split_tabs(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find('\t', start);
    if (pos == std::string_view::npos) {
      fields.push_back(line.substr(start));
      break;
    }
    fields.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
  return fields;
}

bool parses_as_number(std::string_view s) {
  if (s.empty()) return false;
  double value = 0.0;
  const auto* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, value);
  return ec == std::errc() && ptr == end && std::isfinite(value);
}

}  // namespace

const std::vector<std::vector<Index>>& InteractionDataset::relevant(Split s) const {
  switch (s) {
    case Split::Train: return train_items;
    case Split::Val: return val_items;
    case Split::Test: return test_items;
  }
  return train_items;
}

std::size_t InteractionDataset::count(Split s) const {
  return static_cast<std::size_t>(std::count(split_assignment.begin(), split_assignment.end(), s));
}

InteractionDataset InteractionDataset::from_pairs(
    const std::vector<std::pair<std::string, std::string>>& pairs) {
  InteractionDataset ds;
  std::unordered_map<std::string, Index> users;
  std::unordered_map<std::string, Index> items;
  std::unordered_set<std::uint64_t> seen;
  for (const auto& [raw_user, raw_item] : pairs) {
    auto [uit, unew] = users.try_emplace(raw_user, static_cast<Index>(ds.user_ids.size()));
    if (unew) ds.user_ids.push_back(raw_user);
    auto [iit, inew] = items.try_emplace(raw_item, static_cast<Index>(ds.item_ids.size()));
    if (inew) ds.item_ids.push_back(raw_item);
    const auto key = (static_cast<std::uint64_t>(uit->second) << 32) |
                     static_cast<std::uint32_t>(iit->second);
    if (!seen.insert(key).second) {
      ++ds.duplicates_dropped;
      continue;
    }
    ds.interactions.push_back({uit->second, iit->second});
  }
  ds.n_users = static_cast<Index>(ds.user_ids.size());
  ds.n_items = static_cast<Index>(ds.item_ids.size());
  return ds;
}

InteractionDataset load_interactions(const std::filesystem::path& path, InteractionFormat format) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read interaction file: " + path.string());

  std::vector<std::pair<std::string, std::string>> pairs;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::string_view view(line);
    if (!view.empty() && view.back() == '\r') view.remove_suffix(1);
    if (view.empty() || view.front() == '#') continue;
    const auto fields = split_tabs(view);
    if (format == InteractionFormat::TsvPairs) {
      if (fields.size() != 2) throw ParseError("expected <user>\\t<item>", lineno);
    } else {
      if (fields.size() != 3 && fields.size() != 4)
        throw ParseError("expected <user>\\t<item>\\t<rating>[\\t<timestamp>]", lineno);
      if (!parses_as_number(fields[2])) throw ParseError("rating is not numeric", lineno);
      if (fields.size() == 4 && !parses_as_number(fields[3]))
        throw ParseError("timestamp is not numeric", lineno);
    }
    if (fields[0].empty() || fields[1].empty()) throw ParseError("empty id", lineno);
    pairs.emplace_back(std::string(fields[0]), std::string(fields[1]));
  }
  if (in.bad()) throw IoError("read failure: " + path.string());
  return InteractionDataset::from_pairs(pairs);
}

InteractionDataset split(const InteractionDataset& ds, std::array<double, 3> ratios,
                         std::uint64_t seed) {
  for (double r : ratios) {
    if (!(r > 0.0)) throw ConfigError("split ratios must be positive");
  }
  if (std::abs(ratios[0] + ratios[1] + ratios[2] - 1.0) > 1e-9)
    throw ConfigError("split ratios must sum to 1");

  const std::size_t n = ds.interactions.size();
  // The epsilon absorbs representation error, e.g. 0.1 * 30 = 3.0000000000000004.
  const auto n_train = static_cast<std::size_t>(std::floor(ratios[0] * static_cast<double>(n) + 1e-9));
  const auto n_val = static_cast<std::size_t>(std::floor(ratios[1] * static_cast<double>(n) + 1e-9));
  if (n_train == 0 || n_val == 0 || n_train + n_val >= n) {
    throw SplitError("dataset with " + std::to_string(n) +
                     " interactions is too small for nonempty splits");
  }

  std::vector<std::uint32_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = static_cast<std::uint32_t>(i);
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);

  InteractionDataset out = ds;
  out.split_assignment.assign(n, Split::Test);
  for (std::size_t pos = 0; pos < n; ++pos) {
    Split s = pos < n_train ? Split::Train : (pos < n_train + n_val ? Split::Val : Split::Test);
    out.split_assignment[order[pos]] = s;
  }

  out.train_indices.clear();
  out.train_items.assign(static_cast<std::size_t>(ds.n_users), {});
  out.val_items.assign(static_cast<std::size_t>(ds.n_users), {});
  out.test_items.assign(static_cast<std::size_t>(ds.n_users), {});
  for (std::size_t i = 0; i < n; ++i) {
    const auto& [u, item] = ds.interactions[i];
    switch (out.split_assignment[i]) {
      case Split::Train:
        out.train_indices.push_back(static_cast<std::uint32_t>(i));
        out.train_items[static_cast<std::size_t>(u)].push_back(item);
        break;
      case Split::Val: out.val_items[static_cast<std::size_t>(u)].push_back(item); break;
      case Split::Test: out.test_items[static_cast<std::size_t>(u)].push_back(item); break;
    }
  }
  for (auto* sets : {&out.train_items, &out.val_items, &out.test_items}) {
    for (auto& items : *sets) std::sort(items.begin(), items.end());
  }
  return out;
}

Sampler::Sampler(const InteractionDataset& ds, std::uint64_t seed)
    : ds_(&ds), rng_(seed), order_(ds.train_indices) {
  if (!ds.is_split() || ds.train_indices.empty())
    throw ConfigError("sampler requires a split dataset with a nonempty train split");
}

Index Sampler::draw_item() {
  std::uniform_int_distribution<Index> dist(0, ds_->n_items - 1);
  return dist(rng_);
}

std::uint32_t Sampler::draw_train() {
  std::uniform_int_distribution<std::size_t> dist(0, ds_->train_indices.size() - 1);
  return ds_->train_indices[dist(rng_)];
}

TripletBatch Sampler::triplets(std::size_t batch_size) {
  std::vector<std::uint32_t> idx(batch_size);
  for (auto& i : idx) i = draw_train();
  return triplets_from(idx);
}

SetBatch Sampler::set_batch(std::size_t batch_size, int k) {
  std::vector<std::uint32_t> idx(batch_size);
  for (auto& i : idx) i = draw_train();
  return set_batch_from(idx, k);
}

PairBatch Sampler::pairs(std::size_t batch_size) {
  std::vector<std::uint32_t> idx(batch_size);
  for (auto& i : idx) i = draw_train();
  return pairs_from(idx);
}

std::vector<std::span<const std::uint32_t>> Sampler::epoch_batches(std::size_t batch_size) {
  if (batch_size == 0) throw ConfigError("batch size must be positive");
  std::shuffle(order_.begin(), order_.end(), rng_);
  std::vector<std::span<const std::uint32_t>> out;
  const std::span<const std::uint32_t> all(order_);
  for (std::size_t start = 0; start < all.size(); start += batch_size) {
    out.push_back(all.subspan(start, std::min(batch_size, all.size() - start)));
  }
  return out;
}

PairBatch Sampler::pairs_from(std::span<const std::uint32_t> idx) const {
  PairBatch b;
  b.users.reserve(idx.size());
  b.items.reserve(idx.size());
  for (auto i : idx) {
    b.users.push_back(ds_->interactions[i].user);
    b.items.push_back(ds_->interactions[i].item);
  }
  return b;
}

TripletBatch Sampler::triplets_from(std::span<const std::uint32_t> idx) {
  TripletBatch b;
  b.users.reserve(idx.size());
  b.pos_items.reserve(idx.size());
  b.neg_items.reserve(idx.size());
  for (auto i : idx) {
    b.users.push_back(ds_->interactions[i].user);
    b.pos_items.push_back(ds_->interactions[i].item);
    b.neg_items.push_back(draw_item());
  }
  return b;
}

SetBatch Sampler::set_batch_from(std::span<const std::uint32_t> idx, int k) {
  if (k < 1) throw ConfigError("k must be at least 1");
  SetBatch b;
  b.k = k;
  b.users.reserve(idx.size());
  b.pos_items.reserve(idx.size());
  b.neg_items.reserve(idx.size() * static_cast<std::size_t>(k));
  for (auto i : idx) {
    b.users.push_back(ds_->interactions[i].user);
    b.pos_items.push_back(ds_->interactions[i].item);
    for (int j = 0; j < k; ++j) b.neg_items.push_back(draw_item());
  }
  return b;
}

TripletBatch sample_triplets(const InteractionDataset& ds, std::size_t batch_size, std::uint64_t seed) {
  Sampler sampler(ds, seed);
  return sampler.triplets(batch_size);
}

SetBatch sample_set_batch(const InteractionDataset& ds, std::size_t batch_size, int k,
                          std::uint64_t seed) {
  Sampler sampler(ds, seed);
  return sampler.set_batch(batch_size, k);
}

void write_interactions_tsv(const InteractionDataset& ds, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  for (const auto& [u, i] : ds.interactions) {
    out << ds.user_ids[static_cast<std::size_t>(u)] << '\t'
        << ds.item_ids[static_cast<std::size_t>(i)] << '\n';
  }
  if (!out) throw IoError("write failure: " + path.string());
}

}  // namespace cfrank
