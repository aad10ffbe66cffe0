#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tcnet/tensor.hpp"

namespace tcnet {

// Tensor container file ("TCNT"):
//   magic "TCNT" | version u8 (1) | dtype u8 (0 = f32) | rank u8 | reserved u8
//   rank x u32 little-endian extents | row-major little-endian f32 payload.
// Round trips are bit-exact.
void write_tensor(const std::string& path, const Tensor<float>& t);
Tensor<float> read_tensor(const std::string& path);

// Binary PGM (P5, maxval 255). Masks use foreground 255.
void write_pgm(const std::string& path, int width, int height, const std::vector<std::uint8_t>& pixels);
std::vector<std::uint8_t> read_pgm(const std::string& path, int& width, int& height);

// Binary mask helpers: values {0,1} <-> pixels {0,255}. Readers validate.
void write_mask_pgm(const std::string& path, const Tensor<float>& mask);
Tensor<float> read_mask_pgm(const std::string& path);

// Grayscale visualization of values in [lo, hi] (clamped).
void write_gray_pgm(const std::string& path, const Tensor<float>& map, float lo = 0.0f, float hi = 1.0f);

} // namespace tcnet
