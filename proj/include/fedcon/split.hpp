#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "fedcon/dataset.hpp"
#include "fedcon/rng.hpp"

namespace fedcon {

class SplitError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

enum class Regime { iid, noniid };

struct SplitSpec {
  double gamma = 0.01;             // labeled fraction at the server
  double beta = 0.0;               // unlabeled fraction at the server
  std::size_t num_clients = 100;   // K
  Regime regime = Regime::iid;
  std::size_t classes_per_client = 2;  // non-IID only
  std::uint64_t seed = 0;
  bool stratify_labeled = true;    // draw server portions per class
};

/// Server labeled/unlabeled pools and per-client unlabeled shards. The index
/// vectors record, for every example, its position in the source training list.
struct DataSplit {
  std::vector<LabeledExample> server_labeled;
  std::vector<UnlabeledExample> server_unlabeled;
  std::vector<std::vector<UnlabeledExample>> client_shards;

  std::vector<std::size_t> labeled_index;
  std::vector<std::size_t> unlabeled_index;
  std::vector<std::vector<std::size_t>> shard_index;
};

inline std::size_t floor_fraction(std::size_t total, double fraction) {
  return static_cast<std::size_t>(std::floor(double(total) * fraction + 1e-9));
}

inline void validate(const SplitSpec& spec, std::size_t num_classes) {
  if (!(spec.gamma > 0.0 && spec.gamma <= 1.0)) throw SplitError("gamma must lie in (0, 1]");
  if (!(spec.beta >= 0.0 && spec.beta < 1.0)) throw SplitError("beta must lie in [0, 1)");
  if (spec.gamma + spec.beta > 1.0 + 1e-12) throw SplitError("gamma + beta must not exceed 1");
  if (spec.num_clients < 1) throw SplitError("at least one client is required");
  if (spec.classes_per_client < 1 || spec.classes_per_client > num_classes)
    throw SplitError("classes_per_client must lie in [1, " + std::to_string(num_classes) + "]");
}

namespace detail {

/// Splits `total` across buckets proportionally to `weights` (largest remainder,
/// ties to the lowest bucket), never exceeding a bucket's weight.
inline std::vector<std::size_t> proportional_allocation(std::size_t total, const std::vector<std::size_t>& weights) {
  const std::size_t sum = std::accumulate(weights.begin(), weights.end(), std::size_t{0});
  std::vector<std::size_t> out(weights.size(), 0);
  if (sum == 0 || total == 0) return out;
  std::vector<std::pair<double, std::size_t>> rem;
  std::size_t assigned = 0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    const double exact = double(total) * double(weights[i]) / double(sum);
    out[i] = std::min(weights[i], static_cast<std::size_t>(std::floor(exact)));
    assigned += out[i];
    rem.emplace_back(exact - std::floor(exact), i);
  }
  std::stable_sort(rem.begin(), rem.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t r = 0; assigned < total; r = (r + 1) % rem.size()) {
    const std::size_t i = rem[r].second;
    if (out[i] < weights[i]) {
      ++out[i];
      ++assigned;
    }
  }
  return out;
}

/// Draws `count` indices from per-class pools, stratified or uniformly.
inline std::vector<std::size_t> draw_server_portion(std::vector<std::vector<std::size_t>>& pools, std::size_t count,
                                                    bool stratified, Rng& rng) {
  std::vector<std::size_t> taken;
  if (count == 0) return taken;
  if (stratified) {
    std::vector<std::size_t> sizes;
    for (const auto& p : pools) sizes.push_back(p.size());
    const auto per_class = proportional_allocation(count, sizes);
    for (std::size_t c = 0; c < pools.size(); ++c) {
      taken.insert(taken.end(), pools[c].begin(), pools[c].begin() + std::ptrdiff_t(per_class[c]));
      pools[c].erase(pools[c].begin(), pools[c].begin() + std::ptrdiff_t(per_class[c]));
    }
  } else {
    std::vector<std::pair<std::size_t, std::size_t>> flat;  // (class, position)
    for (std::size_t c = 0; c < pools.size(); ++c)
      for (std::size_t i = 0; i < pools[c].size(); ++i) flat.emplace_back(c, i);
    shuffle(flat.begin(), flat.end(), rng);
    flat.resize(count);
    std::vector<std::vector<bool>> drop(pools.size());
    for (std::size_t c = 0; c < pools.size(); ++c) drop[c].assign(pools[c].size(), false);
    for (auto [c, i] : flat) {
      taken.push_back(pools[c][i]);
      drop[c][i] = true;
    }
    for (std::size_t c = 0; c < pools.size(); ++c) {
      std::vector<std::size_t> keep;
      for (std::size_t i = 0; i < pools[c].size(); ++i)
        if (!drop[c][i]) keep.push_back(pools[c][i]);
      pools[c] = std::move(keep);
    }
  }
  shuffle(taken.begin(), taken.end(), rng);
  return taken;
}

/// Assigns each client `per_client` distinct classes so that every class is held
/// by floor or ceil of K*per_client/C clients.
inline std::vector<std::vector<std::size_t>> assign_client_classes(std::size_t clients, std::size_t num_classes,
                                                                   std::size_t per_client, Rng& rng) {
  const std::size_t slots = clients * per_client;
  if (slots < num_classes)
    throw SplitError("non-IID split: " + std::to_string(clients) + " clients x " + std::to_string(per_client) +
                     " classes cannot cover all " + std::to_string(num_classes) + " classes");
  std::vector<std::size_t> class_order(num_classes);
  std::iota(class_order.begin(), class_order.end(), 0);
  shuffle(class_order.begin(), class_order.end(), rng);
  std::vector<std::size_t> slot_class;
  slot_class.reserve(slots);
  for (std::size_t c = 0; c < num_classes; ++c) {
    const std::size_t extra = std::find(class_order.begin(), class_order.end(), c) - class_order.begin();
    const std::size_t n = slots / num_classes + (extra < slots % num_classes ? 1 : 0);
    slot_class.insert(slot_class.end(), n, c);
  }
  shuffle(slot_class.begin(), slot_class.end(), rng);

  auto holds = [&](std::size_t client, std::size_t cls, std::size_t skip) {
    for (std::size_t j = 0; j < per_client; ++j) {
      const std::size_t s = client * per_client + j;
      if (s != skip && slot_class[s] == cls) return true;
    }
    return false;
  };
  // Swap-repair duplicate classes within a client.
  for (std::size_t k = 0; k < clients; ++k) {
    for (std::size_t j = 0; j < per_client; ++j) {
      const std::size_t s = k * per_client + j;
      if (!holds(k, slot_class[s], s)) continue;
      bool fixed = false;
      for (std::size_t step = 1; step < clients && !fixed; ++step) {
        const std::size_t other = (k + step) % clients;
        for (std::size_t jj = 0; jj < per_client && !fixed; ++jj) {
          const std::size_t t = other * per_client + jj;
          if (!holds(k, slot_class[t], s) && !holds(other, slot_class[s], t)) {
            std::swap(slot_class[s], slot_class[t]);
            fixed = true;
          }
        }
      }
      if (!fixed) throw SplitError("non-IID split: cannot give every client distinct classes");
    }
  }
  std::vector<std::vector<std::size_t>> out(clients);
  for (std::size_t k = 0; k < clients; ++k) {
    out[k].assign(slot_class.begin() + std::ptrdiff_t(k * per_client),
                  slot_class.begin() + std::ptrdiff_t((k + 1) * per_client));
    std::sort(out[k].begin(), out[k].end());
  }
  return out;
}

}  // namespace detail

/// Splits `train` into server-labeled, server-unlabeled and client shards.
/// Deterministic in `spec`; every example lands in exactly one part.
inline DataSplit make_split(const std::vector<LabeledExample>& train, const SplitSpec& spec,
                            std::size_t num_classes = 10) {
  validate(spec, num_classes);
  const std::size_t total = train.size();
  const std::size_t n = floor_fraction(total, spec.gamma);
  const std::size_t m = floor_fraction(total, spec.beta);
  if (n + m > total) throw SplitError("server portions exceed the dataset");

  Rng rng = make_rng(spec.seed, {stream::split});
  std::vector<std::vector<std::size_t>> pools(num_classes);
  for (std::size_t i = 0; i < total; ++i) {
    const int y = train[i].label;
    if (y < 0 || std::size_t(y) >= num_classes) throw SplitError("example " + std::to_string(i) + " has invalid label");
    pools[std::size_t(y)].push_back(i);
  }
  for (auto& p : pools) shuffle(p.begin(), p.end(), rng);

  DataSplit split;
  split.labeled_index = detail::draw_server_portion(pools, n, spec.stratify_labeled, rng);
  split.unlabeled_index = detail::draw_server_portion(pools, m, spec.stratify_labeled, rng);

  const std::size_t K = spec.num_clients;
  split.shard_index.assign(K, {});
  if (spec.regime == Regime::iid) {
    // Deal the class-sorted pool round-robin: shard sizes and per-class counts
    // across shards each differ by at most one.
    std::size_t next = 0;
    for (const auto& p : pools)
      for (std::size_t idx : p) split.shard_index[next++ % K].push_back(idx);
  } else {
    const auto classes = detail::assign_client_classes(K, num_classes, spec.classes_per_client, rng);
    for (std::size_t c = 0; c < num_classes; ++c) {
      std::vector<std::size_t> holders;
      for (std::size_t k = 0; k < K; ++k)
        if (std::binary_search(classes[k].begin(), classes[k].end(), c)) holders.push_back(k);
      const auto& pool = pools[c];
      if (pool.size() < holders.size())
        throw SplitError("non-IID split: class " + std::to_string(c) + " has " + std::to_string(pool.size()) +
                         " unlabeled examples for " + std::to_string(holders.size()) + " clients");
      std::size_t off = 0;
      for (std::size_t h = 0; h < holders.size(); ++h) {
        const std::size_t share = pool.size() / holders.size() + (h < pool.size() % holders.size() ? 1 : 0);
        auto& dst = split.shard_index[holders[h]];
        dst.insert(dst.end(), pool.begin() + std::ptrdiff_t(off), pool.begin() + std::ptrdiff_t(off + share));
        off += share;
      }
    }
  }

  split.server_labeled.reserve(n);
  for (std::size_t idx : split.labeled_index) split.server_labeled.push_back(train[idx]);
  split.server_unlabeled.reserve(m);
  for (std::size_t idx : split.unlabeled_index) split.server_unlabeled.push_back({train[idx].image});
  split.client_shards.resize(K);
  for (std::size_t k = 0; k < K; ++k) {
    split.client_shards[k].reserve(split.shard_index[k].size());
    for (std::size_t idx : split.shard_index[k]) split.client_shards[k].push_back({train[idx].image});
  }
  return split;
}

/// One epoch of index batches over `count` examples in an order fixed by
/// `epoch_seed`; the final batch may be partial.
inline std::vector<std::vector<std::size_t>> make_batches(std::size_t count, std::size_t batch_size,
                                                          std::uint64_t epoch_seed) {
  if (batch_size < 1) throw std::invalid_argument("batch size must be at least 1");
  std::vector<std::size_t> order(count);
  std::iota(order.begin(), order.end(), 0);
  Rng rng = make_rng(epoch_seed, {stream::batches});
  shuffle(order.begin(), order.end(), rng);
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t off = 0; off < count; off += batch_size)
    batches.emplace_back(order.begin() + std::ptrdiff_t(off),
                         order.begin() + std::ptrdiff_t(std::min(count, off + batch_size)));
  return batches;
}

/// Merges a trailing one-example batch into the batch before it; batch
/// statistics are undefined on a single example.
inline std::vector<std::vector<std::size_t>> fold_singleton_tail(std::vector<std::vector<std::size_t>> batches) {
  if (batches.size() >= 2 && batches.back().size() == 1) {
    batches[batches.size() - 2].push_back(batches.back().front());
    batches.pop_back();
  }
  return batches;
}

}  // namespace fedcon
