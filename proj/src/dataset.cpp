// Copyright 2026 The gleak Authors
// SPDX-License-Identifier: Apache-2.0

#include "gleak/dataset.hpp"

#include <algorithm>

#include "gleak/error.hpp"

namespace gleak {

Tensor ClientDataset::rows(std::span<const std::size_t> idx) const {
  const std::size_t per = x.shape().empty() || x.dim(0) == 0 ? 0 : x.size() / x.dim(0);
  Shape s = x.shape();
  s[0] = idx.size();
  std::vector<double> data(idx.size() * per);
  for (std::size_t r = 0; r < idx.size(); ++r) {
    if (idx[r] >= size()) fail(ErrorCode::kOutOfRange, "dataset", "row " + std::to_string(idx[r]));
    std::copy_n(x.data().begin() + static_cast<std::ptrdiff_t>(idx[r] * per), per,
                data.begin() + static_cast<std::ptrdiff_t>(r * per));
  }
  return Tensor(std::move(s), std::move(data));
}

Labels ClientDataset::labels(std::span<const std::size_t> idx) const {
  Labels out;
  out.reserve(idx.size());
  for (auto i : idx) out.push_back(y.at(i));
  return out;
}

ClientDataset ClientDataset::subset(std::span<const std::size_t> idx) const {
  return {rows(idx), labels(idx), source};
}

void ClientDataset::check() const {
  if (x.ndim() < 2 || x.dim(0) != y.size())
    fail(ErrorCode::kShapeMismatch, "dataset",
         "x " + shape_str(x.shape()) + " with " + std::to_string(y.size()) + " labels");
}

Tensor stack(std::span<const Tensor> samples) {
  if (samples.empty()) fail(ErrorCode::kInvalidArgument, "stack", "no samples");
  Shape s{samples.size()};
  s.insert(s.end(), samples[0].shape().begin(), samples[0].shape().end());
  std::vector<double> data;
  data.reserve(shape_numel(s));
  for (const auto& t : samples) {
    if (t.shape() != samples[0].shape())
      fail(ErrorCode::kShapeMismatch, "stack", shape_str(t.shape()) + " vs " +
                                                   shape_str(samples[0].shape()));
    data.insert(data.end(), t.data().begin(), t.data().end());
  }
  return Tensor(std::move(s), std::move(data));
}

Tensor batch_row(const Tensor& batch, std::size_t i) {
  const std::size_t per = batch.size() / batch.dim(0);
  Shape s = batch.shape();
  s[0] = 1;
  std::vector<double> data(batch.data().begin() + static_cast<std::ptrdiff_t>(i * per),
                           batch.data().begin() + static_cast<std::ptrdiff_t>((i + 1) * per));
  return Tensor(std::move(s), std::move(data));
}

}  // namespace gleak
