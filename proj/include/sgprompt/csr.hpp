#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace sgprompt {

/// Compressed sparse rows of a symmetric 0/1 matrix. Row v lists the
/// neighbours of v in increasing order.
struct Csr {
  std::vector<std::size_t> offsets{0};
  std::vector<std::size_t> indices;

  std::size_t num_rows() const { return offsets.size() - 1; }
  std::span<const std::size_t> row(std::size_t v) const {
    return {indices.data() + offsets[v], offsets[v + 1] - offsets[v]};
  }
};

}  // namespace sgprompt
