#pragma once

#include <cstdint>
#include <vector>

namespace mmxai {

struct Fold {
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
  std::vector<std::size_t> test;
};

struct FoldPlan {
  std::vector<Fold> folds;
};

/// Stratified k-fold: test sets partition the data with the class ratio
/// preserved; the remainder of each fold splits into train/val so the overall
/// proportions are about 70/20/10. Deterministic under the seed.
FoldPlan kfold_split(const std::vector<int>& labels, std::size_t k, std::uint64_t seed);

/// Leave-one-group-out: one fold per distinct group id, that group is the
/// test set, the rest splits into train/val at about 78/22 stratified by label.
FoldPlan loco_split(const std::vector<int>& labels, const std::vector<std::uint32_t>& groups,
                    std::uint64_t seed);

}  // namespace mmxai
