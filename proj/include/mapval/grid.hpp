#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <vector>

#include "mapval/error.hpp"

namespace mapval {

/// Dense row-major 2D raster.
template <typename T>
class Grid {
 public:
  Grid() = default;
  Grid(int width, int height, T fill = T{})
      : width_(width), height_(height) {
    if (width < 0 || height < 0) throw InvalidInput("grid dimensions must be non-negative");
    data_.assign(static_cast<std::size_t>(width) * static_cast<std::size_t>(height), fill);
  }

  int width() const noexcept { return width_; }
  int height() const noexcept { return height_; }
  std::size_t size() const noexcept { return data_.size(); }

  T& operator()(int col, int row) { return data_[index(col, row)]; }
  const T& operator()(int col, int row) const { return data_[index(col, row)]; }

  bool contains(int col, int row) const noexcept {
    return col >= 0 && row >= 0 && col < width_ && row < height_;
  }

  std::vector<T>& data() noexcept { return data_; }
  const std::vector<T>& data() const noexcept { return data_; }

  T* row_ptr(int row) { return data_.data() + static_cast<std::size_t>(row) * width_; }
  const T* row_ptr(int row) const { return data_.data() + static_cast<std::size_t>(row) * width_; }

  void fill(T value) { std::fill(data_.begin(), data_.end(), value); }

  bool same_shape(const Grid& other) const noexcept {
    return width_ == other.width_ && height_ == other.height_;
  }

  friend bool operator==(const Grid& a, const Grid& b) {
    return a.width_ == b.width_ && a.height_ == b.height_ && a.data_ == b.data_;
  }

 private:
  std::size_t index(int col, int row) const noexcept {
    return static_cast<std::size_t>(row) * static_cast<std::size_t>(width_) +
           static_cast<std::size_t>(col);
  }

  int width_ = 0;
  int height_ = 0;
  std::vector<T> data_;
};

/// Boolean raster; bytes instead of std::vector<bool> so rows are addressable.
using BoolGrid = Grid<std::uint8_t>;
using LabelGrid = Grid<std::uint8_t>;

inline std::size_t count_set(const BoolGrid& g) {
  std::size_t n = 0;
  for (auto v : g.data()) n += v != 0;
  return n;
}

}  // namespace mapval
