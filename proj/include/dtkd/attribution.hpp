#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "dtkd/data.hpp"
#include "dtkd/layers.hpp"
#include "dtkd/rng.hpp"

namespace dtkd {

inline constexpr std::size_t kMaxPlayers = 20;

/// Values for all 2^n coalitions; bit i of the index marks player i.
struct CoalitionGame {
  std::size_t players = 0;
  std::vector<double> values;

  double value(std::uint64_t coalition) const { return values.at(coalition); }
  std::uint64_t grand() const { return (std::uint64_t{1} << players) - 1; }
};

CoalitionGame make_game(std::size_t players, std::vector<double> values);

/// phi_i = sum over S not containing i of |S|!(n-|S|-1)!/n! (v(S+i) - v(S)).
std::vector<double> exact_shapley(const CoalitionGame& game);

struct ShapleyEstimate {
  std::vector<double> mean;
  std::vector<double> standard_error;
};
/// Average marginal contribution over uniformly sampled player orderings.
ShapleyEstimate monte_carlo_shapley(const CoalitionGame& game, std::size_t permutations, std::uint64_t seed);

struct SuperpixelPartition {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t count = 0;
  std::vector<std::size_t> ids;  // row-major, one per pixel

  std::size_t id(std::size_t y, std::size_t x) const { return ids[y * width + x]; }
  std::vector<std::size_t> sizes() const;
};

/// rows x cols near-equal tiles; larger tiles come first along each axis.
SuperpixelPartition grid_partition(std::size_t height, std::size_t width, std::size_t rows, std::size_t cols);

enum class GameOutput { logits, softmax };
std::string_view to_string(GameOutput output);

/// Per-class model output averaged over the background images.
std::vector<double> background_expected_values(const Model& model, std::span<const Tensor> background,
                                               GameOutput output = GameOutput::logits);
double background_expected_value(const Model& model, std::span<const Tensor> background, std::size_t cls,
                                 GameOutput output = GameOutput::logits);

/// Pixel-wise mean of the background images.
Tensor mean_reference(std::span<const Tensor> background);

/// Image whose superpixels in `coalition` come from `image` and the rest from `reference`.
Tensor composite(const Tensor& image, const Tensor& reference, const SuperpixelPartition& partition,
                 std::uint64_t coalition);

/// Model outputs [2^n, K] for every coalition's composite image.
Tensor coalition_outputs(const Model& model, const Tensor& image, const SuperpixelPartition& partition,
                         const Tensor& reference, GameOutput output = GameOutput::logits, std::size_t threads = 1);

CoalitionGame model_game(const Model& model, const Tensor& image, const SuperpixelPartition& partition,
                         const Tensor& reference, std::size_t cls, GameOutput output = GameOutput::logits,
                         std::size_t threads = 1);

struct ClassAttribution {
  std::size_t cls = 0;
  double base_value = 0.0;         // v(empty): output on the reference image
  double full_value = 0.0;         // v(all): output on the original image
  double background_mean = 0.0;    // output averaged over the background images
  std::vector<double> shapley;     // one per superpixel
};

struct AttributionReport {
  GameOutput output = GameOutput::logits;
  std::size_t winning_class = 0;
  std::size_t players = 0;
  std::vector<ClassAttribution> classes;

  const ClassAttribution& for_class(std::size_t cls) const;
};

struct AttributeOptions {
  GameOutput output = GameOutput::logits;
  bool all_classes = true;  // otherwise only the winning class
  std::size_t threads = 1;
};

/// Exact Shapley values per superpixel with absent superpixels replaced by the
/// background mean image. base_value + sum(shapley) equals full_value.
AttributionReport attribute(const Model& model, const Tensor& image, const SuperpixelPartition& partition,
                            std::span<const Tensor> background, const AttributeOptions& options = {});

/// Spreads each superpixel's value evenly over its pixels; returns [H,W].
Tensor pixel_map(std::span<const double> superpixel_values, const SuperpixelPartition& partition);

struct RegionSums {
  double pos = 0.0;
  double neg = 0.0;
  double diff() const { return pos + neg; }
};

struct FgBgRow {
  std::string sample;
  RegionSums foreground;
  RegionSums background;
};

/// Positive and negative per-pixel sums inside and outside the mask.
FgBgRow quantify_fg_bg(const Tensor& map, const SegmentationMask& mask, std::string sample = {});

/// A quotient that is marked undefined instead of becoming infinite or NaN.
struct Ratio {
  double value = 0.0;
  bool defined = false;
};
Ratio safe_ratio(double num, double den);

struct ContributionRatios {
  Ratio fg;        // A/B: TL foreground diff over TL+KD foreground diff
  Ratio bg;        // C/D: the same for background
  Ratio combined;  // (A/B)/(C/D)
};

ContributionRatios contribution_ratios(const FgBgRow& tl, const FgBgRow& kd);
ContributionRatios contribution_ratios(double a, double b, double c, double d);

std::string attribution_json(const AttributionReport& report, const std::vector<std::string>& class_names);
std::string grid_csv(const Tensor& map);
/// One line per sample: pos/neg/diff for each region and variant, then the three ratios.
std::string fgbg_csv(std::span<const FgBgRow> tl, std::span<const FgBgRow> kd);

}  // namespace dtkd
