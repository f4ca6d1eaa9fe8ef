#include "smd/image_io.hpp"

#include <png.h>

#include <bit>
#include <cctype>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>

#include "smd/error.hpp"

namespace smd {

namespace {

float luma(std::uint8_t r, std::uint8_t g, std::uint8_t b) {
  return (0.299f * r + 0.587f * g + 0.114f * b) / 255.0f;
}

// Next whitespace-delimited PNM header token, skipping '#' comments.
std::string pnm_token(std::istream& in) {
  std::string token;
  int c;
  while ((c = in.get()) != EOF) {
    if (c == '#') {
      while ((c = in.get()) != EOF && c != '\n') {
      }
      continue;
    }
    if (std::isspace(c)) {
      if (!token.empty()) break;
      continue;
    }
    token.push_back(static_cast<char>(c));
  }
  return token;
}

GrayImage read_pgm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::DecodeError, "cannot open " + path.string());
  const std::string magic = pnm_token(in);
  if (magic != "P5" && magic != "P2") {
    throw Error(ErrorKind::DecodeError, path.string() + " is not a grayscale PGM");
  }
  int w = 0, h = 0, maxval = 0;
  try {
    w = std::stoi(pnm_token(in));
    h = std::stoi(pnm_token(in));
    maxval = std::stoi(pnm_token(in));
  } catch (const std::exception&) {
    throw Error(ErrorKind::DecodeError, "malformed PGM header in " + path.string());
  }
  if (w <= 0 || h <= 0 || maxval <= 0 || maxval > 65535) {
    throw Error(ErrorKind::DecodeError, "bad PGM dimensions in " + path.string());
  }
  GrayImage img(h, w);
  const float scale = 1.0f / static_cast<float>(maxval);
  if (magic == "P5") {
    const int bytes = maxval < 256 ? 1 : 2;
    std::vector<unsigned char> buf(static_cast<std::size_t>(w) * h * bytes);
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (in.gcount() != static_cast<std::streamsize>(buf.size())) {
      throw Error(ErrorKind::DecodeError, "truncated PGM data in " + path.string());
    }
    for (int i = 0; i < w * h; ++i) {
      const int v = bytes == 1 ? buf[i] : (buf[2 * i] << 8) | buf[2 * i + 1];
      img.data()[i] = std::min(1.0f, v * scale);
    }
  } else {
    for (int i = 0; i < w * h; ++i) {
      const std::string tok = pnm_token(in);
      if (tok.empty()) throw Error(ErrorKind::DecodeError, "truncated PGM data in " + path.string());
      img.data()[i] = std::min(1.0f, std::stoi(tok) * scale);
    }
  }
  return img;
}

GrayImage read_png(const std::filesystem::path& path) {
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.string().c_str())) {
    throw Error(ErrorKind::DecodeError, path.string() + ": " + image.message);
  }
  const bool color = (image.format & PNG_FORMAT_FLAG_COLOR) != 0;
  image.format = color ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  std::vector<std::uint8_t> buf(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, buf.data(), 0, nullptr)) {
    png_image_free(&image);
    throw Error(ErrorKind::DecodeError, path.string() + ": " + image.message);
  }
  const int w = static_cast<int>(image.width), h = static_cast<int>(image.height);
  GrayImage img(h, w);
  for (int i = 0; i < w * h; ++i) {
    img.data()[i] = color ? luma(buf[3 * i], buf[3 * i + 1], buf[3 * i + 2]) : buf[i] / 255.0f;
  }
  return img;
}

}  // namespace

GrayImage read_image(const std::filesystem::path& path) {
  std::string ext = path.extension().string();
  for (auto& c : ext) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  if (ext == ".png") return read_png(path);
  if (ext == ".pgm") return read_pgm(path);
  throw Error(ErrorKind::DecodeError, "unsupported image format: " + path.string());
}

void write_pgm(const std::filesystem::path& path, const GrayImage& img) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::IoError, "cannot write " + path.string());
  out << "P5\n" << img.cols() << " " << img.rows() << "\n255\n";
  std::vector<unsigned char> buf(img.size());
  for (Eigen::Index i = 0; i < img.size(); ++i) {
    const float v = std::clamp(img.data()[i], 0.0f, 1.0f);
    buf[i] = static_cast<unsigned char>(std::lround(v * 255.0f));
  }
  out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
}

void write_png(const std::filesystem::path& path, int width, int height, int channels,
               const std::vector<std::uint8_t>& pixels) {
  if (channels != 1 && channels != 3) throw Error(ErrorKind::InvalidArgument, "png channels");
  if (pixels.size() != static_cast<std::size_t>(width) * height * channels) {
    throw Error(ErrorKind::SizeMismatch, "png buffer size");
  }
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(width);
  image.height = static_cast<png_uint_32>(height);
  image.format = channels == 1 ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&image, path.string().c_str(), 0, pixels.data(), 0, nullptr)) {
    throw Error(ErrorKind::IoError, path.string() + ": " + image.message);
  }
}

void write_pfm(const std::filesystem::path& path, const Eigen::ArrayXXf& data) {
  static_assert(std::endian::native == std::endian::little, "PFM writer assumes little-endian");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::IoError, "cannot write " + path.string());
  out << "Pf\n" << data.cols() << " " << data.rows() << "\n-1.0\n";
  std::vector<float> row(static_cast<std::size_t>(data.cols()));
  for (Eigen::Index y = data.rows() - 1; y >= 0; --y) {
    for (Eigen::Index x = 0; x < data.cols(); ++x) row[x] = data(y, x);
    out.write(reinterpret_cast<const char*>(row.data()),
              static_cast<std::streamsize>(row.size() * sizeof(float)));
  }
  if (!out) throw Error(ErrorKind::IoError, "short write to " + path.string());
}

Eigen::ArrayXXf read_pfm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::DecodeError, "cannot open " + path.string());
  const std::string magic = pnm_token(in);
  if (magic != "Pf") throw Error(ErrorKind::DecodeError, path.string() + " is not a 1-channel PFM");
  int w = 0, h = 0;
  double scale = 0;
  try {
    w = std::stoi(pnm_token(in));
    h = std::stoi(pnm_token(in));
    scale = std::stod(pnm_token(in));
  } catch (const std::exception&) {
    throw Error(ErrorKind::DecodeError, "malformed PFM header in " + path.string());
  }
  if (w <= 0 || h <= 0) throw Error(ErrorKind::DecodeError, "bad PFM size in " + path.string());
  if (scale >= 0) throw Error(ErrorKind::DecodeError, "big-endian PFM is not supported");
  Eigen::ArrayXXf data(h, w);
  std::vector<float> row(static_cast<std::size_t>(w));
  for (int y = h - 1; y >= 0; --y) {
    in.read(reinterpret_cast<char*>(row.data()), static_cast<std::streamsize>(w * sizeof(float)));
    if (in.gcount() != static_cast<std::streamsize>(w * sizeof(float))) {
      throw Error(ErrorKind::DecodeError, "truncated PFM data in " + path.string());
    }
    for (int x = 0; x < w; ++x) data(y, x) = row[x];
  }
  return data;
}

}  // namespace smd
