#ifndef MRES_MASK_HPP
#define MRES_MASK_HPP

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "mres/errors.hpp"

namespace mres {

/// Pixel grid with rows = height, cols = width. Entries are 0 or 1.
using BinaryMask = Eigen::Array<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic>;

/// Confidence grid, entries in [0,1].
template <typename Scalar>
using ProbMask = Eigen::Array<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

using ProbMaskF = ProbMask<float>;
using ProbMaskD = ProbMask<double>;

/// Row-major run-length encoding. Runs alternate starting with background,
/// so only the leading count may be zero.
struct RleMask {
  int width = 0;
  int height = 0;
  std::vector<std::int64_t> counts;

  friend bool operator==(const RleMask&, const RleMask&) = default;
};

struct IoUStats {
  std::int64_t intersection = 0;
  std::int64_t union_ = 0;

  friend bool operator==(const IoUStats&, const IoUStats&) = default;
};

inline int mask_width(const BinaryMask& m) { return static_cast<int>(m.cols()); }
inline int mask_height(const BinaryMask& m) { return static_cast<int>(m.rows()); }

inline bool is_valid_binary(const BinaryMask& m) {
  return m.size() > 0 && (m <= std::uint8_t{1}).all();
}

inline void validate_rle(const RleMask& rle) {
  if (rle.width <= 0 || rle.height <= 0)
    throw SchemaError("RleMask dimensions must be positive");
  std::int64_t total = 0;
  for (std::size_t i = 0; i < rle.counts.size(); ++i) {
    if (rle.counts[i] < 0) throw SchemaError("RleMask run lengths must be non-negative");
    if (rle.counts[i] == 0 && i != 0)
      throw SchemaError("RleMask may only have a zero run in leading position");
    total += rle.counts[i];
  }
  if (total != std::int64_t{rle.width} * rle.height)
    throw SumMismatch("RLE counts sum to " + std::to_string(total) + ", expected " +
                      std::to_string(std::int64_t{rle.width} * rle.height));
}

inline RleMask rle_encode(const BinaryMask& mask) {
  RleMask out;
  out.width = mask_width(mask);
  out.height = mask_height(mask);
  std::uint8_t current = 0;  // first run counts background pixels
  std::int64_t run = 0;
  for (int r = 0; r < mask.rows(); ++r) {
    for (int c = 0; c < mask.cols(); ++c) {
      const std::uint8_t v = mask(r, c) ? 1 : 0;
      if (v == current) {
        ++run;
      } else {
        out.counts.push_back(run);
        current = v;
        run = 1;
      }
    }
  }
  out.counts.push_back(run);
  return out;
}

inline BinaryMask rle_decode(const RleMask& rle) {
  if (rle.width <= 0 || rle.height <= 0)
    throw SchemaError("RleMask dimensions must be positive");
  std::int64_t total = 0;
  for (auto c : rle.counts) total += c;
  const std::int64_t expected = std::int64_t{rle.width} * rle.height;
  if (total != expected)
    throw SumMismatch("RLE counts sum to " + std::to_string(total) + ", expected " +
                      std::to_string(expected));
  BinaryMask mask(rle.height, rle.width);
  std::int64_t pos = 0;
  std::uint8_t value = 0;
  for (auto count : rle.counts) {
    for (std::int64_t k = 0; k < count; ++k) {
      const auto r = static_cast<int>(pos / rle.width);
      const auto c = static_cast<int>(pos % rle.width);
      mask(r, c) = value;
      ++pos;
    }
    value = value ? 0 : 1;
  }
  return mask;
}

inline IoUStats iou_stats(const BinaryMask& pred, const BinaryMask& gt) {
  if (pred.rows() != gt.rows() || pred.cols() != gt.cols())
    throw ShapeMismatch("iou_stats: pred is " + std::to_string(pred.cols()) + "x" +
                        std::to_string(pred.rows()) + ", gt is " + std::to_string(gt.cols()) +
                        "x" + std::to_string(gt.rows()));
  const auto p = pred != std::uint8_t{0};
  const auto g = gt != std::uint8_t{0};
  IoUStats s;
  s.intersection = (p && g).count();
  s.union_ = (p || g).count();
  return s;
}

/// Per-sample IoU. Empty-vs-empty counts as perfect agreement.
inline double sample_iou(const IoUStats& s) {
  if (s.union_ == 0) return 1.0;
  return static_cast<double>(s.intersection) / static_cast<double>(s.union_);
}

/// Mean IoU. The reduction sorts per-sample ratios before summing so the
/// result is bit-identical under any permutation of the input.
inline double miou(std::span<const IoUStats> samples) {
  if (samples.empty()) throw EmptyEvaluation("miou over an empty sample list");
  std::vector<double> ratios;
  ratios.reserve(samples.size());
  for (const auto& s : samples) ratios.push_back(sample_iou(s));
  std::sort(ratios.begin(), ratios.end());
  double sum = 0.0;
  for (double r : ratios) sum += r;
  return sum / static_cast<double>(samples.size());
}

inline double miou(const std::vector<IoUStats>& samples) {
  return miou(std::span<const IoUStats>(samples));
}

/// Overall IoU: total intersection over total union, integer sums then one division.
inline double oiou(std::span<const IoUStats> samples) {
  if (samples.empty()) throw EmptyEvaluation("oiou over an empty sample list");
  std::int64_t inter = 0;
  std::int64_t uni = 0;
  for (const auto& s : samples) {
    inter += s.intersection;
    uni += s.union_;
  }
  if (uni == 0) throw DegenerateUnion("oiou undefined when the total union is zero");
  return static_cast<double>(inter) / static_cast<double>(uni);
}

inline double oiou(const std::vector<IoUStats>& samples) {
  return oiou(std::span<const IoUStats>(samples));
}

/// Pixel is foreground iff confidence is strictly greater than the threshold.
template <typename Scalar>
BinaryMask binarize(const ProbMask<Scalar>& p, Scalar threshold = Scalar(0.35)) {
  return (p > threshold).template cast<std::uint8_t>();
}

/// Bilinear resize with half-pixel sample centers. Resizing to the source
/// size is an exact copy.
template <typename Scalar>
ProbMask<Scalar> resize_prob(const ProbMask<Scalar>& p, int target_w, int target_h) {
  const int src_w = static_cast<int>(p.cols());
  const int src_h = static_cast<int>(p.rows());
  if (target_w <= 0 || target_h <= 0)
    throw ShapeMismatch("resize_prob: target dimensions must be positive");
  if (target_w == src_w && target_h == src_h) return p;

  ProbMask<Scalar> out(target_h, target_w);
  const double sx = static_cast<double>(src_w) / target_w;
  const double sy = static_cast<double>(src_h) / target_h;
  for (int y = 0; y < target_h; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, static_cast<double>(src_h - 1));
    const int y0 = static_cast<int>(std::floor(fy));
    const int y1 = std::min(y0 + 1, src_h - 1);
    const double wy = fy - y0;
    for (int x = 0; x < target_w; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, static_cast<double>(src_w - 1));
      const int x0 = static_cast<int>(std::floor(fx));
      const int x1 = std::min(x0 + 1, src_w - 1);
      const double wx = fx - x0;
      const double v = (1.0 - wy) * ((1.0 - wx) * p(y0, x0) + wx * p(y0, x1)) +
                       wy * ((1.0 - wx) * p(y1, x0) + wx * p(y1, x1));
      out(y, x) = static_cast<Scalar>(v);
    }
  }
  return out;
}

/// Nearest-neighbor resize for binary masks.
inline BinaryMask resize_nearest(const BinaryMask& m, int target_w, int target_h) {
  const int src_w = mask_width(m);
  const int src_h = mask_height(m);
  if (target_w <= 0 || target_h <= 0)
    throw ShapeMismatch("resize_nearest: target dimensions must be positive");
  BinaryMask out(target_h, target_w);
  for (int y = 0; y < target_h; ++y) {
    const int sy = std::min(static_cast<int>((y + 0.5) * src_h / target_h), src_h - 1);
    for (int x = 0; x < target_w; ++x) {
      const int sx = std::min(static_cast<int>((x + 0.5) * src_w / target_w), src_w - 1);
      out(y, x) = m(sy, sx);
    }
  }
  return out;
}

/// Downsample a mask by `block` using strict-majority pooling (ties go to 0).
inline BinaryMask majority_pool(const BinaryMask& m, int block) {
  if (block <= 0 || m.rows() % block != 0 || m.cols() % block != 0)
    throw ShapeMismatch("majority_pool: mask dimensions must be divisible by the block size");
  const int gh = static_cast<int>(m.rows()) / block;
  const int gw = static_cast<int>(m.cols()) / block;
  BinaryMask out(gh, gw);
  const int area = block * block;
  for (int r = 0; r < gh; ++r)
    for (int c = 0; c < gw; ++c) {
      const int ones =
          static_cast<int>((m.block(r * block, c * block, block, block) != std::uint8_t{0}).count());
      out(r, c) = (2 * ones > area) ? 1 : 0;
    }
  return out;
}

}  // namespace mres

#endif  // MRES_MASK_HPP
