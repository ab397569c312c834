#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "mlwc/tensor.hpp"

namespace mlwc {

class DataError : public std::runtime_error {
 public:
  explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Binary PGM ("P5", one channel) or PPM ("P6", three channels) with
/// maxval <= 255. Pixels map to [0,1] by division by maxval.
/// Returns a [C,H,W] tensor.
Tensor parse_netpbm(const std::vector<std::uint8_t>& bytes);

/// Inverse of parse_netpbm for [C,H,W] tensors with C in {1,3}; values are
/// clamped to [0,1] and rounded onto the maxval grid.
std::vector<std::uint8_t> emit_netpbm(const Tensor& image, int maxval = 255);

}  // namespace mlwc
