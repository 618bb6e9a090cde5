#include "appsign/dataset.hpp"

#include <cmath>

#include "appsign/errors.hpp"
#include "appsign/rng.hpp"

namespace appsign {

std::pair<Dataset, Dataset> split_dataset(const Dataset& ds,
                                          double holdout_fraction,
                                          std::uint64_t seed) {
  if (holdout_fraction < 0.0 || holdout_fraction >= 1.0) {
    throw InvalidParam("split: holdout fraction must be in [0,1)");
  }
  Rng rng(seed);
  auto perm = rng.permutation(ds.size());
  auto train_n = static_cast<std::size_t>(
      std::llround((1.0 - holdout_fraction) * static_cast<double>(ds.size())));

  Dataset train, holdout;
  train.class_count = holdout.class_count = ds.class_count;
  train.provenance = holdout.provenance = ds.provenance;
  for (std::size_t i = 0; i < perm.size(); ++i) {
    (i < train_n ? train : holdout).items.push_back(ds.items[perm[i]]);
  }
  return {std::move(train), std::move(holdout)};
}

}  // namespace appsign
