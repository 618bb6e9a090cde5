#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "appsign/tensor.hpp"

namespace appsign {

struct DatasetItem {
  Tensor image;  // 3xHxW, values in [0,1]
  int label = 0;
};

struct Dataset {
  std::vector<DatasetItem> items;
  int class_count = 0;
  std::string provenance;

  std::size_t size() const { return items.size(); }
  bool empty() const { return items.empty(); }
};

// Seeded-shuffle split into (train, holdout); |train| = round((1-f)*N).
// The two parts are disjoint and cover the dataset.
std::pair<Dataset, Dataset> split_dataset(const Dataset& ds,
                                          double holdout_fraction,
                                          std::uint64_t seed);

}  // namespace appsign
