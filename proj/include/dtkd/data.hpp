#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "dtkd/rng.hpp"
#include "dtkd/tensor.hpp"

namespace dtkd {

enum class Split { train, val };

/// Images are [3,H,W] tensors with pixels in [0,1] until normalized.
struct ImageDataset {
  std::vector<Tensor> images;
  std::vector<std::size_t> labels;
  std::vector<std::string> class_names;
  Split split = Split::train;

  std::size_t size() const noexcept { return images.size(); }
  std::size_t num_classes() const noexcept { return class_names.size(); }
  /// Throws on label/shape/class-count inconsistencies.
  void validate() const;
};

struct Batch {
  Tensor images;  // [B,3,H,W]
  std::vector<std::size_t> labels;
};

Batch make_batch(const ImageDataset& ds, std::span<const std::size_t> indices);
Batch make_batch(const ImageDataset& ds);

// --- loaders ----------------------------------------------------------------

/// CIFAR-10 binary: records of 1 label byte + 3072 channel-major pixel bytes.
ImageDataset load_cifar10_binary(const std::string& path, Split split = Split::train);

/// IDX image file (magic 0x00000803) and label file (0x00000801); grayscale is
/// replicated to three channels.
ImageDataset load_idx(const std::string& image_path, const std::string& label_path, std::size_t num_classes = 10,
                      Split split = Split::train);

/// Binary P6 export of a [3,H,W] image in [0,1].
void write_ppm(const std::string& path, const Tensor& image);

// --- normalization and augmentation ------------------------------------------

using ChannelStats = std::array<double, 3>;
inline constexpr ChannelStats kCifarMean{0.4914, 0.4822, 0.4465};
inline constexpr ChannelStats kCifarStd{0.2471, 0.2435, 0.2616};

Tensor normalize(const Tensor& image, const ChannelStats& mean, const ChannelStats& stddev);
Tensor denormalize(const Tensor& image, const ChannelStats& mean, const ChannelStats& stddev);
ImageDataset normalize(ImageDataset ds, const ChannelStats& mean, const ChannelStats& stddev);

struct ChannelMoments {
  ChannelStats mean{};
  ChannelStats stddev{};
};
ChannelMoments channel_moments(const ImageDataset& ds);

/// Bilinear resampling with half-pixel centres: source = (dst + 0.5) * in / out - 0.5,
/// clamped to the border.
Tensor resize_bilinear(const Tensor& image, std::size_t out_h, std::size_t out_w);

Tensor horizontal_flip(const Tensor& image);
Tensor horizontal_flip(const Tensor& image, double prob, SplitMix64& rng);

/// Zeroes one uniformly chosen quadrant in every channel.
Tensor quarter_black(const Tensor& image, SplitMix64& rng);
/// Zeroes a centred square whose side is uniform over [min_side, max_side].
Tensor center_black(const Tensor& image, std::size_t min_side, std::size_t max_side, SplitMix64& rng);

// --- complexity injection -----------------------------------------------------

enum class CorruptionKind { center_black, quarter_black, label_noise };

struct CorruptionSpec {
  CorruptionKind kind = CorruptionKind::center_black;
  double apply_fraction = 0.0;
  std::size_t min_side = 200;
  std::size_t max_side = 224;
  std::uint64_t seed = 0;
};

/// Relabels round(fraction * N) samples, each to a uniformly drawn different class.
ImageDataset apply_label_noise(ImageDataset ds, double fraction, std::uint64_t seed);

/// Keeps round(fraction * n_c) samples of every class c, in original order.
ImageDataset subset_training_fraction(const ImageDataset& ds, double fraction, std::uint64_t seed);

/// Applies the corruption to round(apply_fraction * N) deterministically chosen
/// samples. Only training splits may be corrupted.
ImageDataset apply_corruption(ImageDataset ds, const CorruptionSpec& spec);

/// Indices of the samples a corruption with this fraction and seed touches, ascending.
std::vector<std::size_t> corruption_subset(std::size_t n, double fraction, std::uint64_t seed, StreamOp op);

// --- segmentation masks ---------------------------------------------------------

struct Point {
  double x = 0.0;
  double y = 0.0;
};
using Polygon = std::vector<Point>;

struct SegmentationMask {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> foreground;  // row-major, 1 = foreground
  std::vector<Polygon> polygons;

  bool at(std::size_t x, std::size_t y) const { return foreground[y * width + x] != 0; }
  std::size_t foreground_count() const;
  /// Throws InvalidMask unless both regions are non-empty.
  void require_both_regions() const;
};

/// Even-odd point-in-polygon test.
bool point_in_polygon(const Polygon& poly, double x, double y);

/// A pixel is foreground when its centre lies inside any polygon.
SegmentationMask rasterize(std::vector<Polygon> polygons, std::size_t width, std::size_t height);

/// Reads every polygon annotation for image_id from a COCO-style JSON file.
SegmentationMask load_coco_mask(const std::string& json_path, std::int64_t image_id, std::size_t width,
                                std::size_t height);

struct CocoImage {
  std::int64_t id = 0;
  std::size_t width = 0;
  std::size_t height = 0;
  std::string file_name;
  std::size_t category = 0;
  std::vector<Polygon> polygons;
};
void write_coco_json(const std::string& path, const std::vector<CocoImage>& images);

// --- procedural shapes ------------------------------------------------------------

/// Shape catalogue: 0 square, 1 circle, 2 triangle up, 3 horizontal bar,
/// 4 vertical bar, 5 diamond, 6 ring, 7 cross, 8 triangle down, 9 square outline.
inline constexpr std::size_t kShapeCount = 10;
std::string_view shape_name(std::size_t shape);
Polygon shape_polygon(std::size_t shape, double cx, double cy, double radius);

struct ShapesSpec {
  std::vector<std::size_t> shapes;  // label i draws shapes[i]
  std::size_t per_class = 100;
  std::size_t image_size = 32;
  double noise = 0.08;
  std::uint64_t seed = 0;
  std::uint64_t index_offset = 0;  // separates train and validation streams
  Split split = Split::train;
};

struct ShapesDataset {
  ImageDataset data;
  std::vector<Polygon> outlines;  // one per image, in pixel coordinates
};

/// Random colour, scale and position over a noisy background, classes interleaved.
ShapesDataset generate_shapes(const ShapesSpec& spec);

}  // namespace dtkd
