#pragma once

#include <string>

#include "hdgt/tensor.hpp"

namespace hdgt {

// Binary tensor container (magic "HDT1"): 4 ASCII magic bytes, u32 LE rank,
// rank u32 LE dims, then row-major f64 LE values. Every tensor the project
// writes or reads on disk uses this format.
void save_tensor(const std::string& path, const Tensor& t);
Tensor load_tensor(const std::string& path);

// 8-bit binary PPM (P6). Values are clamped to [0,1] and quantized to 0..255
// on save; load maps bytes back to v/255. img is [h, w, 3].
void save_ppm(const std::string& path, const Tensor& img);
Tensor load_ppm(const std::string& path);

// 8-bit binary PGM (P5) holding a {0,1} mask as bytes {0,255}. mask is [h, w];
// any value > 0.5 saves as 255.
void save_pgm_mask(const std::string& path, const Tensor& mask);
Tensor load_pgm_mask(const std::string& path);

// 8-bit binary PGM (P5) of a [h, w] image; values clamped to [0,1] and
// quantized to 0..255 (visualization companion to the exact HDT1 dump).
void save_pgm_gray(const std::string& path, const Tensor& img);

}  // namespace hdgt
