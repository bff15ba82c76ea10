#pragma once

// Dataset access. A split serves (stable index, image in [0,1], label)
// triples by position; subset selection and shuffling permute positions but
// never the stable indices, which is what lets fixed per-example noise and
// mask patterns survive resampling. Pixels are stored as float32 in [0,1]
// with no mean/std normalization so the epsilon ball lives in raw pixel
// space; batches convert losslessly to the requested scalar type.

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "atlab/common.hpp"
#include "atlab/rng.hpp"
#include "atlab/tensor.hpp"

namespace atlab {

struct AugmentSpec {
  bool random_flip = false;
  bool random_crop = false;
  int64_t pad = 4;

  bool operator==(const AugmentSpec&) const = default;
};

inline void validate(const AugmentSpec& spec) {
  if (spec.pad < 0) throw config_error("augment pad must be nonnegative");
}

class DataSplit {
public:
  DataSplit() = default;
  DataSplit(std::shared_ptr<const std::vector<float>> pixels,
            std::shared_ptr<const std::vector<uint8_t>> labels, int64_t channels, int64_t height,
            int64_t width, int64_t classes, std::vector<int64_t> index_map)
      : pixels_(std::move(pixels)),
        labels_(std::move(labels)),
        c_(channels),
        h_(height),
        w_(width),
        classes_(classes),
        index_map_(std::move(index_map)) {}

  int64_t size() const { return static_cast<int64_t>(index_map_.size()); }
  int64_t channels() const { return c_; }
  int64_t height() const { return h_; }
  int64_t width() const { return w_; }
  int64_t num_classes() const { return classes_; }

  /// Stable identity of the example at this position; fixed-pattern stores
  /// key on it, so it survives shuffling and subsetting.
  int64_t index_at(int64_t pos) const { return index_map_[checked(pos)]; }

  int label_at(int64_t pos) const {
    return static_cast<int>((*labels_)[static_cast<size_t>(index_map_[checked(pos)])]);
  }

  template <typename T>
  Tensor<T> image(int64_t pos) const {
    std::vector<T> v(static_cast<size_t>(example_numel()));
    copy_example(index_map_[checked(pos)], v.data());
    return Tensor<T>(Shape{c_, h_, w_}, std::move(v));
  }

  template <typename T>
  Tensor<T> batch_images(const std::vector<int64_t>& positions) const {
    const int64_t per = example_numel();
    std::vector<T> v(static_cast<size_t>(per) * positions.size());
    for (size_t i = 0; i < positions.size(); ++i)
      copy_example(index_map_[checked(positions[i])], v.data() + static_cast<int64_t>(i) * per);
    return Tensor<T>(Shape{static_cast<int64_t>(positions.size()), c_, h_, w_}, std::move(v));
  }

  std::vector<int> batch_labels(const std::vector<int64_t>& positions) const {
    std::vector<int> out(positions.size());
    for (size_t i = 0; i < positions.size(); ++i) out[i] = label_at(positions[i]);
    return out;
  }

  std::vector<int64_t> stable_indices(const std::vector<int64_t>& positions) const {
    std::vector<int64_t> out(positions.size());
    for (size_t i = 0; i < positions.size(); ++i) out[i] = index_at(positions[i]);
    return out;
  }

  /// First n positions in the current order.
  DataSplit first_n(int64_t n) const {
    if (n < 0 || n > size())
      throw config_error("subset of " + std::to_string(n) + " from split of " +
                         std::to_string(size()));
    std::vector<int64_t> map(index_map_.begin(), index_map_.begin() + n);
    return DataSplit(pixels_, labels_, c_, h_, w_, classes_, std::move(map));
  }

  /// n examples balanced over labels: the first occurrences of each class in
  /// the current order, interleaved class by class. Deterministic.
  DataSplit stratified_n(int64_t n) const;

private:
  size_t checked(int64_t pos) const {
    if (pos < 0 || pos >= size())
      throw shape_error("position " + std::to_string(pos) + " outside split of " +
                        std::to_string(size()));
    return static_cast<size_t>(pos);
  }

  int64_t example_numel() const { return c_ * h_ * w_; }

  template <typename T>
  void copy_example(int64_t stable_index, T* dst) const {
    const float* src = pixels_->data() + stable_index * example_numel();
    for (int64_t i = 0; i < example_numel(); ++i) dst[i] = static_cast<T>(src[i]);
  }

  std::shared_ptr<const std::vector<float>> pixels_;
  std::shared_ptr<const std::vector<uint8_t>> labels_;
  int64_t c_ = 0, h_ = 0, w_ = 0, classes_ = 0;
  std::vector<int64_t> index_map_;
};

struct DatasetHandle {
  std::string name;
  DataSplit train;
  DataSplit test;
};

enum class CifarKind { cifar10, cifar100 };

/// Parses one binary batch file and appends its examples. Record layout:
/// cifar10 is 1 label byte + 3072 pixel bytes; cifar100 prepends a coarse
/// label byte that is read and discarded (the fine label is used). Throws
/// io_error on framing violations and out-of-range labels.
void parse_cifar_records(const std::string& path, CifarKind kind, std::vector<float>& pixels,
                         std::vector<uint8_t>& labels);

/// Loads the standard file sets from a directory: data_batch_1..5.bin +
/// test_batch.bin for cifar10, train.bin + test.bin for cifar100.
DatasetHandle load_cifar_binary(const std::string& dir, CifarKind kind);

/// Deterministic class-template images with per-pixel noise, balanced over
/// classes and linearly separable. Test split is one fifth of n (at least
/// one per class), drawn from the same distribution.
DatasetHandle synth_dataset(int64_t n, int64_t classes, int64_t image_size, uint64_t seed);

/// Generator knobs for the synthetic task. base templates are smooth class
/// patterns; shortcut pixels add a sparse high-contrast cue of amplitude
/// comparable to the attack budget, which is what makes single-step
/// adversarial training on this data fragile.
struct SynthSpec {
  double noise_std = 0.08;
  double template_lo = 0.35;
  double template_hi = 0.65;
  int64_t shortcut_pixels = 12;
  double shortcut_delta = 0.10;

  bool operator==(const SynthSpec&) const = default;
};

DatasetHandle synth_dataset(int64_t n, int64_t classes, int64_t image_size, uint64_t seed,
                            const SynthSpec& spec);

/// Horizontal mirror of every example in the batch.
template <typename T>
Tensor<T> flip_h(const Tensor<T>& x) {
  if (x.ndim() != 4) throw shape_error("flip_h expects [N,C,H,W], got " + shape_str(x.shape()));
  const int64_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  std::vector<T> out(x.raw().size());
  for (int64_t n = 0; n < N; ++n)
    for (int64_t c = 0; c < C; ++c)
      for (int64_t h = 0; h < H; ++h) {
        const size_t row = static_cast<size_t>(((n * C + c) * H + h) * W);
        for (int64_t w = 0; w < W; ++w)
          out[row + static_cast<size_t>(w)] = x.raw()[row + static_cast<size_t>(W - 1 - w)];
      }
  return Tensor<T>(x.shape(), std::move(out));
}

/// Crop of the original size from the zero-padded canvas at offset (dy, dx)
/// measured from the canvas origin; offsets in [0, 2*pad].
template <typename T>
Tensor<T> crop_shift(const Tensor<T>& x, int64_t pad, int64_t dy, int64_t dx) {
  if (x.ndim() != 4)
    throw shape_error("crop_shift expects [N,C,H,W], got " + shape_str(x.shape()));
  if (pad < 0 || dy < 0 || dx < 0 || dy > 2 * pad || dx > 2 * pad)
    throw config_error("crop offset outside the padded canvas");
  const int64_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  std::vector<T> out(x.raw().size(), T(0));
  // source pixel (h + dy - pad, w + dx - pad); outside the image reads pad 0
  for (int64_t n = 0; n < N; ++n)
    for (int64_t c = 0; c < C; ++c)
      for (int64_t h = 0; h < H; ++h) {
        const int64_t sh = h + dy - pad;
        if (sh < 0 || sh >= H) continue;
        for (int64_t w = 0; w < W; ++w) {
          const int64_t sw = w + dx - pad;
          if (sw < 0 || sw >= W) continue;
          out[static_cast<size_t>(((n * C + c) * H + h) * W + w)] =
              x.raw()[static_cast<size_t>(((n * C + c) * H + sh) * W + sw)];
        }
      }
  return Tensor<T>(x.shape(), std::move(out));
}

/// Per-example augmentation: random crop from the zero-padded canvas, then
/// horizontal flip with probability one half. Draw order per example is
/// (dy, dx, flip), so streams are reproducible from the rng seed alone.
template <typename T>
Tensor<T> augment(const Tensor<T>& x, const AugmentSpec& spec, Rng& rng) {
  validate(spec);
  if (x.ndim() != 4) throw shape_error("augment expects [N,C,H,W], got " + shape_str(x.shape()));
  if (!spec.random_flip && !spec.random_crop) return x;
  const int64_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int64_t per = C * H * W;
  std::vector<T> out(x.raw().size());
  for (int64_t n = 0; n < N; ++n) {
    Tensor<T> one(Shape{1, C, H, W},
                  std::vector<T>(x.raw().begin() + n * per, x.raw().begin() + (n + 1) * per));
    if (spec.random_crop) {
      const int64_t dy = rng.range(2 * spec.pad + 1);
      const int64_t dx = rng.range(2 * spec.pad + 1);
      one = crop_shift(one, spec.pad, dy, dx);
    }
    if (spec.random_flip && rng.bernoulli(0.5)) one = flip_h(one);
    std::copy(one.raw().begin(), one.raw().end(), out.begin() + n * per);
  }
  return Tensor<T>(x.shape(), std::move(out));
}

/// Fisher-Yates permutation of [0, n).
inline std::vector<int64_t> shuffled_positions(int64_t n, Rng& rng) {
  std::vector<int64_t> p(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) p[static_cast<size_t>(i)] = i;
  for (int64_t i = n - 1; i > 0; --i) {
    const int64_t j = rng.range(i + 1);
    std::swap(p[static_cast<size_t>(i)], p[static_cast<size_t>(j)]);
  }
  return p;
}

}  // namespace atlab
