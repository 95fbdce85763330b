// SPDX-License-Identifier: Apache-2.0
#include "jerkrom/params.hpp"

#include <numeric>

#include "jerkrom/error.hpp"

namespace jerkrom::nets {

template <typename T>
int ParamSet<T>::add(std::string name, std::vector<std::int64_t> shape) {
  const std::int64_t n =
      std::accumulate(shape.begin(), shape.end(), std::int64_t{1}, std::multiplies<>());
  if (n <= 0) throw ShapeError("parameter block " + name + " has empty shape");
  BlockInfo b;
  b.name = std::move(name);
  b.shape = std::move(shape);
  b.offset = values_.size();
  b.size = static_cast<std::size_t>(n);
  values_.resize(values_.size() + b.size, T(0));
  blocks_.push_back(std::move(b));
  return static_cast<int>(blocks_.size()) - 1;
}

template class ParamSet<float>;
template class ParamSet<double>;

} // namespace jerkrom::nets
