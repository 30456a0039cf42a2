#pragma once

#include <string>
#include <string_view>

#include "trapeval/tensor.hpp"

namespace trapeval::raster {

/// Binary PPM (P6, maxval 255) from a 3-channel tensor: channels 0, 1, 2 are
/// R, G, B; values are rounded and clamped to [0, 255].
[[nodiscard]] std::string encode_ppm(const Tensor3& rgb);
/// Binary PGM (P5, maxval 255) from a 1-channel tensor.
[[nodiscard]] std::string encode_pgm(const Tensor3& gray);

/// Reads P6 or P5 with maxval 255 into a 3- or 1-channel tensor of values in
/// [0, 255].  Throws ParseError on a bad header or truncated data.
[[nodiscard]] Tensor3 decode_pnm(std::string_view bytes);

[[nodiscard]] Tensor3 read_ppm(const std::string& path);
void write_ppm(const Tensor3& rgb, const std::string& path);
void write_pgm(const Tensor3& gray, const std::string& path);

}  // namespace trapeval::raster
