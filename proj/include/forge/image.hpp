// Copyright 2026 The Forge Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "forge/common.hpp"

namespace forge {

// Interleaved RGB raster, values in [0,1], row-major. Decoding from on-disk
// formats happens at the CLI boundary; everything below works on this type.
struct ImageTensor {
  int height = 0;
  int width = 0;
  std::vector<double> rgb;  // height * width * 3

  ImageTensor() = default;
  ImageTensor(int h, int w)
      : height(h), width(w), rgb(size_t(h) * size_t(w) * 3, 0.0) {
    FORGE_CHECK(h > 0 && w > 0, "ImageTensor: non-positive size ", w, "x", h);
  }

  double* pixel(int y, int x) { return rgb.data() + (size_t(y) * width + x) * 3; }
  const double* pixel(int y, int x) const {
    return rgb.data() + (size_t(y) * width + x) * 3;
  }
};

// Bilinear resample to (out_w, out_h), sampling at pixel centers.
inline ImageTensor resize_bilinear(const ImageTensor& src, int out_w, int out_h) {
  FORGE_CHECK(out_w > 0 && out_h > 0, "resize: non-positive target ", out_w,
              "x", out_h);
  ImageTensor dst(out_h, out_w);
  const double sx = double(src.width) / out_w;
  const double sy = double(src.height) / out_h;
  for (int y = 0; y < out_h; ++y) {
    double fy = (y + 0.5) * sy - 0.5;
    if (fy < 0) fy = 0;
    if (fy > src.height - 1) fy = src.height - 1;
    const int y0 = int(fy);
    const int y1 = y0 + 1 < src.height ? y0 + 1 : y0;
    const double wy = fy - y0;
    for (int x = 0; x < out_w; ++x) {
      double fx = (x + 0.5) * sx - 0.5;
      if (fx < 0) fx = 0;
      if (fx > src.width - 1) fx = src.width - 1;
      const int x0 = int(fx);
      const int x1 = x0 + 1 < src.width ? x0 + 1 : x0;
      const double wx = fx - x0;
      const double* p00 = src.pixel(y0, x0);
      const double* p01 = src.pixel(y0, x1);
      const double* p10 = src.pixel(y1, x0);
      const double* p11 = src.pixel(y1, x1);
      double* out = dst.pixel(y, x);
      for (int c = 0; c < 3; ++c) {
        const double top = p00[c] + (p01[c] - p00[c]) * wx;
        const double bot = p10[c] + (p11[c] - p10[c]) * wx;
        out[c] = top + (bot - top) * wy;
      }
    }
  }
  return dst;
}

// Rec.601 luma plane.
inline std::vector<double> to_grayscale(const ImageTensor& img) {
  std::vector<double> g(size_t(img.height) * img.width);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) {
      const double* p = img.pixel(y, x);
      g[size_t(y) * img.width + x] = 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2];
    }
  return g;
}

}  // namespace forge
