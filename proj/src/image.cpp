#include "smd/image.hpp"

#include <cmath>

#include "smd/error.hpp"

namespace smd {

void validate_image(const GrayImage& img) {
  if (img.size() == 0) throw Error(ErrorKind::InvalidArgument, "empty image");
  if (!img.allFinite() || img.minCoeff() < 0.0f || img.maxCoeff() > 1.0f) {
    throw Error(ErrorKind::InvalidArgument, "image intensities must be finite and in [0,1]");
  }
}

namespace {

constexpr float kBinomial[5] = {1.0f / 16, 4.0f / 16, 6.0f / 16, 4.0f / 16, 1.0f / 16};

int clamp_index(int i, int n) { return i < 0 ? 0 : (i >= n ? n - 1 : i); }

}  // namespace

GrayImage binomial_blur(const GrayImage& img) {
  const int h = height(img), w = width(img);
  GrayImage tmp(h, w), out(h, w);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      float acc = 0.0f;
      for (int k = -2; k <= 2; ++k) acc += kBinomial[k + 2] * img(y, clamp_index(x + k, w));
      tmp(y, x) = acc;
    }
  }
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      float acc = 0.0f;
      for (int k = -2; k <= 2; ++k) acc += kBinomial[k + 2] * tmp(clamp_index(y + k, h), x);
      out(y, x) = acc;
    }
  }
  return out;
}

GrayImage downsample2(const GrayImage& img) {
  const GrayImage blurred = binomial_blur(img);
  const int h = (height(img) + 1) / 2, w = (width(img) + 1) / 2;
  GrayImage out(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) out(y, x) = blurred(2 * y, 2 * x);
  return out;
}

GrayImage downscale(const GrayImage& img, int factor) {
  if (factor < 1) throw Error(ErrorKind::InvalidArgument, "downscale factor must be >= 1");
  if (factor == 1) return img;
  const int h = height(img) / factor, w = width(img) / factor;
  if (h < 1 || w < 1) throw Error(ErrorKind::ImageTooSmall, "image smaller than the downscale factor");
  GrayImage out(h, w);
  const float norm = 1.0f / static_cast<float>(factor * factor);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      out(y, x) = img.block(y * factor, x * factor, factor, factor).sum() * norm;
  return out;
}

std::vector<GrayImage> build_pyramid(const GrayImage& img, int levels) {
  std::vector<GrayImage> pyramid;
  pyramid.reserve(levels);
  pyramid.push_back(img);
  for (int l = 1; l < levels; ++l) pyramid.push_back(downsample2(pyramid.back()));
  return pyramid;
}

GrayImage gradient_x(const GrayImage& img) {
  const int h = height(img), w = width(img);
  GrayImage g(h, w);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const int xm = clamp_index(x - 1, w), xp = clamp_index(x + 1, w);
      g(y, x) = (img(y, xp) - img(y, xm)) / static_cast<float>(xp - xm);
    }
  }
  return g;
}

GrayImage gradient_y(const GrayImage& img) {
  const int h = height(img), w = width(img);
  GrayImage g(h, w);
  for (int y = 0; y < h; ++y) {
    const int ym = clamp_index(y - 1, h), yp = clamp_index(y + 1, h);
    for (int x = 0; x < w; ++x) g(y, x) = (img(yp, x) - img(ym, x)) / static_cast<float>(yp - ym);
  }
  return g;
}

}  // namespace smd
