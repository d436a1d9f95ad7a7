#ifndef MRES_IMAGE_IO_HPP
#define MRES_IMAGE_IO_HPP

#include <Eigen/Dense>

#include <cstdint>
#include <string>

#include "mres/mask.hpp"

namespace mres {

/// 8-bit single-channel image, rows = height, cols = width.
using GrayImage = Eigen::Array<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic>;

// Grayscale 8-bit PNG, no interlace. RGB/RGBA inputs are reduced by luminance.
GrayImage read_png_gray(const std::string& path);
void write_png_gray(const std::string& path, const GrayImage& image);

// Binary PGM (P5), maxval 255.
GrayImage read_pgm(const std::string& path);
void write_pgm(const std::string& path, const GrayImage& image);

/// Reads PNG or PGM by extension.
GrayImage read_gray(const std::string& path);

/// Nonzero pixels are foreground.
inline BinaryMask mask_from_gray(const GrayImage& image) {
  return (image != std::uint8_t{0}).cast<std::uint8_t>();
}

/// Normalizes an 8-bit image to [0,1] scalars.
template <typename Scalar>
Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> normalize_image(const GrayImage& image) {
  return image.template cast<Scalar>().matrix() / Scalar(255);
}

}  // namespace mres

#endif  // MRES_IMAGE_IO_HPP
