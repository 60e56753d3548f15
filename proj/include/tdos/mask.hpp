#pragma once

#include <cstdint>
#include <vector>

#include "tdos/errors.hpp"

namespace tdos {

struct BinaryMask {
  int h = 0;
  int w = 0;
  std::vector<std::uint8_t> data;  // row-major, 0/1

  static BinaryMask zeros(int h, int w) {
    return {h, w, std::vector<std::uint8_t>(static_cast<std::size_t>(h) * w, 0)};
  }
  std::uint8_t at(int i, int j) const {
    return data[static_cast<std::size_t>(i) * w + j];
  }
  void set(int i, int j, std::uint8_t v) {
    data[static_cast<std::size_t>(i) * w + j] = v;
  }
  std::size_t count() const {
    std::size_t c = 0;
    for (auto v : data) c += v != 0;
    return c;
  }
  bool same_shape(const BinaryMask& o) const { return h == o.h && w == o.w; }
  bool operator==(const BinaryMask& o) const = default;
};

}  // namespace tdos
