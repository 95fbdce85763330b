// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace jerkrom::nets {

template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;
template <typename T>
using Vec = Eigen::Matrix<T, Eigen::Dynamic, 1>;

struct BlockInfo {
  std::string name;
  std::vector<std::int64_t> shape;  ///< {rows, cols} for matrices (column-major)
  std::size_t offset = 0;
  std::size_t size = 0;
};

/// Flat parameter storage with named blocks. Layers keep block indices and
/// view their weights through Eigen maps.
template <typename T>
class ParamSet {
public:
  int add(std::string name, std::vector<std::int64_t> shape);

  const std::vector<BlockInfo>& blocks() const { return blocks_; }
  const BlockInfo& block(int i) const { return blocks_[static_cast<std::size_t>(i)]; }
  std::size_t size() const { return values_.size(); }

  std::vector<T>& values() { return values_; }
  const std::vector<T>& values() const { return values_; }

  T* data(int i) { return values_.data() + block(i).offset; }
  const T* data(int i) const { return values_.data() + block(i).offset; }

  Eigen::Map<Mat<T>> matrix(int i) {
    const auto& b = block(i);
    return {data(i), static_cast<Eigen::Index>(b.shape[0]),
            static_cast<Eigen::Index>(b.shape.size() > 1 ? b.shape[1] : 1)};
  }
  Eigen::Map<const Mat<T>> matrix(int i) const {
    const auto& b = block(i);
    return {data(i), static_cast<Eigen::Index>(b.shape[0]),
            static_cast<Eigen::Index>(b.shape.size() > 1 ? b.shape[1] : 1)};
  }
  Eigen::Map<Vec<T>> vector(int i) {
    return {data(i), static_cast<Eigen::Index>(block(i).size)};
  }
  Eigen::Map<const Vec<T>> vector(int i) const {
    return {data(i), static_cast<Eigen::Index>(block(i).size)};
  }

  template <typename U>
  ParamSet<U> cast() const {
    ParamSet<U> out;
    for (const BlockInfo& b : blocks_) out.add(b.name, b.shape);
    for (std::size_t k = 0; k < values_.size(); ++k) out.values()[k] = static_cast<U>(values_[k]);
    return out;
  }

private:
  std::vector<BlockInfo> blocks_;
  std::vector<T> values_;
};

/// View of a gradient vector laid out like a ParamSet.
template <typename T>
Eigen::Map<Mat<T>> grad_matrix(std::vector<T>& grad, const ParamSet<T>& p, int i) {
  const auto& b = p.block(i);
  return {grad.data() + b.offset, static_cast<Eigen::Index>(b.shape[0]),
          static_cast<Eigen::Index>(b.shape.size() > 1 ? b.shape[1] : 1)};
}

template <typename T>
Eigen::Map<Vec<T>> grad_vector(std::vector<T>& grad, const ParamSet<T>& p, int i) {
  const auto& b = p.block(i);
  return {grad.data() + b.offset, static_cast<Eigen::Index>(b.size)};
}

} // namespace jerkrom::nets
