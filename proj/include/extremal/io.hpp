#ifndef EXTREMAL_IO_HPP
#define EXTREMAL_IO_HPP

#include <string>
#include <vector>

#include "extremal/tensor.hpp"

namespace extremal {

// Portable tensor file format "FT1": magic bytes `FT1\0`, little-endian u32
// rank, rank little-endian u32 extents, then row-major little-endian f32
// payload. Used for images, weights, masks and activations.
void save_ft1(const std::string& path, const Tensor& t);
Tensor load_ft1(const std::string& path);

// 8-bit grayscale PNG of a [0,1] mask, value round(m*255).
void save_png_gray(const std::string& path, const Tensor& mask_hw);

// Reads an 8-bit PNG into C x H x W floats in [0,1] (C = 1 for grayscale,
// 3 for RGB; palette and 16-bit inputs are expanded/stripped).
Tensor load_png(const std::string& path);

// Grayscale convenience: H x W in [0,1]; RGB input is rejected.
Tensor load_png_gray(const std::string& path);

void write_text_file(const std::string& path, const std::string& contents);
std::string read_text_file(const std::string& path);

// One CSV row per entry, preceded by a header line.
void save_csv(const std::string& path, const std::string& header,
              const std::vector<std::vector<std::string>>& rows);

std::string format_float(double v);

} // namespace extremal

#endif
