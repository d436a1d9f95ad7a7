#ifndef MRES_SYNTHETIC_HPP
#define MRES_SYNTHETIC_HPP

#include <string>
#include <vector>

#include "mres/dataset.hpp"
#include "mres/training.hpp"

namespace mres::synthetic {

/// Rectangle in patch-grid coordinates, half-open.
struct PatchRect {
  int r0 = 0, c0 = 0, r1 = 0, c1 = 0;
};

inline BinaryMask grid_of(const PatchRect& rect, int side) {
  BinaryMask g = BinaryMask::Zero(side, side);
  g.block(rect.r0, rect.c0, rect.r1 - rect.r0, rect.c1 - rect.c0).setConstant(1);
  return g;
}

/// Continuous field of a patch grid at image resolution (bilinear).
template <typename S>
ProbMask<S> grid_field(const BinaryMask& grid, int image_size) {
  ProbMask<S> p = grid.cast<S>();
  return resize_prob<S>(p, image_size, image_size);
}

/// Ground-truth mask of a patch grid: the thresholded bilinear field. By
/// construction a confident per-patch prediction reproduces it exactly, and
/// majority pooling recovers the grid.
template <typename S>
BinaryMask grid_mask(const BinaryMask& grid, int image_size, S threshold) {
  return binarize<S>(grid_field<S>(grid, image_size), threshold);
}

struct ToySample {
  std::string expression;
  Granularity granularity = Granularity::object;
  BinaryMask patch_grid;  // supervision target at patch resolution
};

inline const char* kToyObjectExpression = "the solid block";
inline const char* kToyPartExpression = "top half of the solid block";

/// Four patch-aligned shapes; each contributes an object-level and a
/// part-level (top half) sample over the same image. 8 samples total.
inline std::vector<PatchRect> toy_shapes() {
  return {{0, 0, 4, 2}, {0, 2, 4, 4}, {1, 0, 3, 3}, {2, 1, 4, 4}};
}

inline PatchRect top_half(const PatchRect& r) {
  return PatchRect{r.r0, r.c0, r.r0 + (r.r1 - r.r0) / 2, r.c1};
}

template <typename S>
struct ToyDataset {
  Vocabulary vocab;
  std::vector<TrainSample<S>> samples;
  std::vector<Granularity> granularity;  // parallel to samples
};

/// The 8-sample overfit set: procedural shapes with templated object- and
/// part-level expressions. Images encode the object field so each shape is
/// visually distinct; the expression decides which mask is correct.
template <typename S>
ToyDataset<S> make_toy_dataset(const ModelConfig& config) {
  const int side = config.patches_per_side();
  const int image = config.image_size;
  const S threshold = static_cast<S>(config.mask_threshold);

  ToyDataset<S> out;
  out.vocab = Vocabulary::build({kToyObjectExpression, kToyPartExpression});

  for (const auto& shape : toy_shapes()) {
    const BinaryMask obj_grid = grid_of(shape, side);
    const BinaryMask part_grid = grid_of(top_half(shape), side);
    const Mat<S> pixels =
        (S(0.15) + S(0.7) * grid_field<S>(obj_grid, image)).matrix();

    TrainSample<S> obj;
    obj.image = pixels;
    obj.tokens = tokenize(kToyObjectExpression, out.vocab, config.max_text_len);
    obj.gt = grid_mask<S>(obj_grid, image, threshold);
    out.samples.push_back(std::move(obj));
    out.granularity.push_back(Granularity::object);

    TrainSample<S> part;
    part.image = pixels;
    part.tokens = tokenize(kToyPartExpression, out.vocab, config.max_text_len);
    part.gt = grid_mask<S>(part_grid, image, threshold);
    out.samples.push_back(std::move(part));
    out.granularity.push_back(Granularity::part);
  }
  return out;
}

/// Mean IoU of thresholded forward passes against the dataset's ground truth.
template <typename S>
double mean_train_iou(UniRESModel<S>& model, const ToyDataset<S>& data) {
  std::vector<IoUStats> stats;
  for (const auto& sample : data.samples) {
    auto result = forward(model, sample.image, sample.tokens);
    const BinaryMask pred =
        binarize<S>(result.prob, static_cast<S>(model.config.mask_threshold));
    stats.push_back(iou_stats(pred, sample.gt));
  }
  return miou(stats);
}

}  // namespace mres::synthetic

#endif  // MRES_SYNTHETIC_HPP
