#pragma once

#include <string>

#include "side/tensor.hpp"

namespace side {

// Binary PPM ("P6", maxval 255). `image` is 3xHxW with values in [0,1];
// channels quantize to bytes on write and map back to v/255 on read, so
// write -> read -> write is byte-identical.
void write_ppm(const std::string& path, const Tensor& image);
Tensor read_ppm(const std::string& path);

// Portable float map ("Pf", single channel). The scale line is written as
// -1.0 (little-endian payload) and rows are stored bottom-to-top per the PFM
// convention. Values pass through 32-bit floats; after one write -> read the
// round trip is bit-exact.
void write_pfm(const std::string& path, const Tensor& depth);
Tensor read_pfm(const std::string& path);

// Binary PGM ("P5", maxval 255). `gray` is 1xHxW in [0,1]; used both for
// {0,1} validity masks (stored as 0/255) and for [0,1] heatmaps.
void write_pgm(const std::string& path, const Tensor& gray);
Tensor read_pgm(const std::string& path);

}  // namespace side
