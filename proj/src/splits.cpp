#include "mmxai/splits.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>

#include "mmxai/rng.hpp"

namespace mmxai {

namespace {

constexpr std::uint64_t kKfoldStream = 0x6b666f6c64ULL;  // "kfold"
constexpr std::uint64_t kLocoStream = 0x6c6f636fULL;     // "loco"

// Sample ids sorted ascending per class, then seed-shuffled.
std::map<int, std::vector<std::size_t>> by_class_shuffled(const std::vector<int>& labels,
                                                          Rng& rng) {
  std::map<int, std::vector<std::size_t>> per_class;
  for (std::size_t i = 0; i < labels.size(); ++i) per_class[labels[i]].push_back(i);
  for (auto& [label, ids] : per_class) {
    (void)label;
    rng.shuffle(ids);
  }
  return per_class;
}

void finish_fold(Fold& fold) {
  std::sort(fold.train.begin(), fold.train.end());
  std::sort(fold.val.begin(), fold.val.end());
  std::sort(fold.test.begin(), fold.test.end());
}

}  // namespace

FoldPlan kfold_split(const std::vector<int>& labels, std::size_t k, std::uint64_t seed) {
  if (k < 2) throw std::invalid_argument("kfold_split: k must be at least 2");
  if (labels.empty()) throw std::invalid_argument("kfold_split: empty labels");
  Rng rng(mix_seed(seed, kKfoldStream));
  auto per_class = by_class_shuffled(labels, rng);
  for (const auto& [label, ids] : per_class) {
    if (ids.size() < k) {
      throw std::invalid_argument("kfold_split: class " + std::to_string(label) + " has " +
                                  std::to_string(ids.size()) + " members, fewer than k=" +
                                  std::to_string(k));
    }
  }

  // Round-robin class members into test folds.
  std::vector<std::vector<std::size_t>> test_folds(k);
  for (const auto& [label, ids] : per_class) {
    (void)label;
    for (std::size_t i = 0; i < ids.size(); ++i) test_folds[i % k].push_back(ids[i]);
  }

  FoldPlan plan;
  plan.folds.resize(k);
  std::vector<char> in_test(labels.size());
  for (std::size_t f = 0; f < k; ++f) {
    Fold& fold = plan.folds[f];
    fold.test = test_folds[f];
    std::fill(in_test.begin(), in_test.end(), 0);
    for (std::size_t i : fold.test) in_test[i] = 1;
    // The remaining ~90% splits 70/20 of the whole, i.e. 2/9 of it is validation.
    for (const auto& [label, ids] : per_class) {
      (void)label;
      std::vector<std::size_t> rest;
      for (std::size_t i : ids) {
        if (!in_test[i]) rest.push_back(i);
      }
      const std::size_t n_val =
          static_cast<std::size_t>(std::llround(static_cast<double>(rest.size()) * 2.0 / 9.0));
      for (std::size_t i = 0; i < rest.size(); ++i) {
        (i < n_val ? fold.val : fold.train).push_back(rest[i]);
      }
    }
    finish_fold(fold);
  }
  return plan;
}

FoldPlan loco_split(const std::vector<int>& labels, const std::vector<std::uint32_t>& groups,
                    std::uint64_t seed) {
  if (labels.size() != groups.size() || labels.empty()) {
    throw std::invalid_argument("loco_split: need equal non-empty labels and groups");
  }
  std::map<std::uint32_t, std::vector<std::size_t>> per_group;
  for (std::size_t i = 0; i < groups.size(); ++i) per_group[groups[i]].push_back(i);
  if (per_group.size() < 2) {
    throw std::invalid_argument("loco_split: need at least 2 distinct groups");
  }

  FoldPlan plan;
  for (const auto& [gid, members] : per_group) {
    Rng rng(mix_seed(seed, kLocoStream + gid));
    Fold fold;
    fold.test = members;
    std::vector<char> in_test(labels.size());
    for (std::size_t i : members) in_test[i] = 1;
    std::vector<int> rest_labels;
    std::vector<std::size_t> rest_ids;
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (!in_test[i]) {
        rest_ids.push_back(i);
        rest_labels.push_back(labels[i]);
      }
    }
    std::map<int, std::vector<std::size_t>> per_class;
    for (std::size_t j = 0; j < rest_ids.size(); ++j) per_class[rest_labels[j]].push_back(rest_ids[j]);
    for (auto& [label, ids] : per_class) {
      (void)label;
      rng.shuffle(ids);
      const std::size_t n_val =
          static_cast<std::size_t>(std::llround(static_cast<double>(ids.size()) * 0.22));
      for (std::size_t i = 0; i < ids.size(); ++i) {
        (i < n_val ? fold.val : fold.train).push_back(ids[i]);
      }
    }
    finish_fold(fold);
    plan.folds.push_back(std::move(fold));
  }
  return plan;
}

}  // namespace mmxai
