#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <vector>

namespace smd {

// Row-major grayscale image, intensities in [0, 1]. rows() is the height.
using GrayImage = Eigen::Array<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline int width(const GrayImage& img) { return static_cast<int>(img.cols()); }
inline int height(const GrayImage& img) { return static_cast<int>(img.rows()); }

// True when (x, y) is at least `margin` pixels inside the pixel-center grid.
inline bool inside(const GrayImage& img, double x, double y, double margin = 0.0) {
  return x >= margin && y >= margin && x <= img.cols() - 1 - margin &&
         y <= img.rows() - 1 - margin;
}

// Bilinear read. The caller guarantees inside(img, x, y).
inline float sample_bilinear(const GrayImage& img, double x, double y) {
  const int x0 = std::min(static_cast<int>(x), static_cast<int>(img.cols()) - 2);
  const int y0 = std::min(static_cast<int>(y), static_cast<int>(img.rows()) - 2);
  const float ax = static_cast<float>(x - x0);
  const float ay = static_cast<float>(y - y0);
  const float top = (1.0f - ax) * img(y0, x0) + ax * img(y0, x0 + 1);
  const float bottom = (1.0f - ax) * img(y0 + 1, x0) + ax * img(y0 + 1, x0 + 1);
  return (1.0f - ay) * top + ay * bottom;
}

// Throws SizeMismatch/DecodeError style errors on malformed images.
void validate_image(const GrayImage& img);

// Separable 5-tap binomial [1 4 6 4 1]/16 with replicated borders.
GrayImage binomial_blur(const GrayImage& img);

// Anti-aliased 2x decimation.
GrayImage downsample2(const GrayImage& img);

// Box average over factor x factor blocks; output pixel i is centered on
// input coordinate factor * i + (factor - 1) / 2, matching
// Intrinsics::downscaled. Trailing rows/columns that do not fill a block are
// dropped.
GrayImage downscale(const GrayImage& img, int factor);

// Level 0 is the input; each further level halves the resolution.
std::vector<GrayImage> build_pyramid(const GrayImage& img, int levels);

// 3-tap central differences; one-sided at the border.
GrayImage gradient_x(const GrayImage& img);
GrayImage gradient_y(const GrayImage& img);

}  // namespace smd
