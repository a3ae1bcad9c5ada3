#include "dtkd/attribution.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>

#include <json.hpp>

#include "dtkd/losses.hpp"
#include "dtkd/parallel.hpp"

namespace dtkd {

CoalitionGame make_game(std::size_t players, std::vector<double> values) {
  require(players <= kMaxPlayers, ErrorKind::TooManyPlayers,
          std::to_string(players) + " players exceed the exact limit of " + std::to_string(kMaxPlayers));
  require(values.size() == (std::size_t{1} << players), ErrorKind::ShapeMismatch,
          "a game with " + std::to_string(players) + " players needs 2^n values");
  return {players, std::move(values)};
}

std::vector<double> exact_shapley(const CoalitionGame& game) {
  const std::size_t n = game.players;
  require(n <= kMaxPlayers, ErrorKind::TooManyPlayers, "too many players for exact enumeration");
  require(game.values.size() == (std::size_t{1} << n), ErrorKind::ShapeMismatch, "game table has the wrong length");
  // weight[s] = s!(n-s-1)!, integral and exact in double up to 18 players; one division by n! at the end
  std::vector<double> factorial(n + 1, 1.0);
  for (std::size_t k = 1; k <= n; ++k) factorial[k] = factorial[k - 1] * static_cast<double>(k);
  std::vector<double> weight(n);
  for (std::size_t s = 0; s < n; ++s) weight[s] = factorial[s] * factorial[n - 1 - s];
  std::vector<double> phi(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint64_t bit = std::uint64_t{1} << i;
    double acc = 0.0;
    for (std::uint64_t s = 0; s < game.values.size(); ++s) {
      if (s & bit) continue;
      acc += weight[static_cast<std::size_t>(std::popcount(s))] * (game.values[s | bit] - game.values[s]);
    }
    phi[i] = acc / factorial[n];
  }
  return phi;
}

ShapleyEstimate monte_carlo_shapley(const CoalitionGame& game, std::size_t permutations, std::uint64_t seed) {
  require(permutations >= 2, ErrorKind::InvalidConfig, "need at least two sampled orderings");
  const std::size_t n = game.players;
  std::vector<double> sum(n, 0.0), sum_sq(n, 0.0);
  for (std::size_t p = 0; p < permutations; ++p) {
    SplitMix64 rng = make_stream(seed, p, StreamOp::monte_carlo);
    const auto order = permutation(n, rng);
    std::uint64_t coalition = 0;
    for (std::size_t i : order) {
      const std::uint64_t next = coalition | (std::uint64_t{1} << i);
      const double m = game.value(next) - game.value(coalition);
      sum[i] += m;
      sum_sq[i] += m * m;
      coalition = next;
    }
  }
  ShapleyEstimate est;
  const auto m = static_cast<double>(permutations);
  for (std::size_t i = 0; i < n; ++i) {
    const double mu = sum[i] / m;
    const double var = std::max(0.0, (sum_sq[i] - m * mu * mu) / (m - 1.0));
    est.mean.push_back(mu);
    est.standard_error.push_back(std::sqrt(var / m));
  }
  return est;
}

std::vector<std::size_t> SuperpixelPartition::sizes() const {
  std::vector<std::size_t> out(count, 0);
  for (std::size_t id : ids) ++out.at(id);
  return out;
}

SuperpixelPartition grid_partition(std::size_t height, std::size_t width, std::size_t rows, std::size_t cols) {
  require(rows > 0 && cols > 0, ErrorKind::InvalidConfig, "grid needs at least one row and column");
  require(rows * cols <= kMaxPlayers, ErrorKind::TooManyPlayers,
          std::to_string(rows * cols) + " tiles exceed the exact limit of " + std::to_string(kMaxPlayers));
  require(rows <= height && cols <= width, ErrorKind::InvalidRange, "grid finer than the image");
  auto bands = [](std::size_t len, std::size_t parts) {
    std::vector<std::size_t> band(len);
    std::size_t pos = 0;
    for (std::size_t p = 0; p < parts; ++p) {
      const std::size_t size = len / parts + (p < len % parts ? 1 : 0);
      std::fill_n(band.begin() + static_cast<std::ptrdiff_t>(pos), size, p);
      pos += size;
    }
    return band;
  };
  const auto row_band = bands(height, rows);
  const auto col_band = bands(width, cols);
  SuperpixelPartition part{height, width, rows * cols, std::vector<std::size_t>(height * width)};
  for (std::size_t y = 0; y < height; ++y)
    for (std::size_t x = 0; x < width; ++x) part.ids[y * width + x] = row_band[y] * cols + col_band[x];
  return part;
}

std::string_view to_string(GameOutput output) { return output == GameOutput::logits ? "logits" : "softmax"; }

namespace {

Tensor stack(std::span<const Tensor> images) {
  require(!images.empty(), ErrorKind::EmptySet, "background set is empty");
  const Shape& s = images[0].shape();
  require(s.size() == 3, ErrorKind::ShapeMismatch, "background images must be [C,H,W]");
  const std::size_t per = shape_numel(s);
  Tensor out(Shape{images.size(), s[0], s[1], s[2]});
  for (std::size_t i = 0; i < images.size(); ++i) {
    require(images[i].shape() == s, ErrorKind::ShapeMismatch, "background images differ in shape");
    std::copy_n(images[i].raw(), per, out.raw() + i * per);
  }
  return out;
}

Tensor model_outputs(const Model& model, const Tensor& batch, GameOutput output) {
  Tensor logits = forward(model, batch);
  return output == GameOutput::softmax ? softmax(logits) : logits;
}

void require_partition_fits(const Tensor& image, const SuperpixelPartition& partition) {
  require(image.rank() == 3 && image.dim(1) == partition.height && image.dim(2) == partition.width,
          ErrorKind::DimMismatch, "partition does not match image " + shape_string(image.shape()));
}

}  // namespace

std::vector<double> background_expected_values(const Model& model, std::span<const Tensor> background,
                                               GameOutput output) {
  const Tensor out = model_outputs(model, stack(background), output);
  const std::size_t k = out.dim(1);
  std::vector<double> mean(k, 0.0);
  for (std::size_t i = 0; i < out.dim(0); ++i)
    for (std::size_t c = 0; c < k; ++c) mean[c] += out[i * k + c];
  for (double& m : mean) m /= static_cast<double>(out.dim(0));
  return mean;
}

double background_expected_value(const Model& model, std::span<const Tensor> background, std::size_t cls,
                                 GameOutput output) {
  const auto all = background_expected_values(model, background, output);
  require(cls < all.size(), ErrorKind::IndexOutOfRange, "class " + std::to_string(cls) + " out of range");
  return all[cls];
}

Tensor mean_reference(std::span<const Tensor> background) {
  require(!background.empty(), ErrorKind::EmptySet, "background set is empty");
  Tensor ref(background[0].shape());
  for (const auto& img : background) {
    require(img.shape() == ref.shape(), ErrorKind::ShapeMismatch, "background images differ in shape");
    for (std::size_t i = 0; i < ref.numel(); ++i) ref[i] += img[i];
  }
  for (double& v : ref.data()) v /= static_cast<double>(background.size());
  return ref;
}

Tensor composite(const Tensor& image, const Tensor& reference, const SuperpixelPartition& partition,
                 std::uint64_t coalition) {
  require_partition_fits(image, partition);
  require(reference.shape() == image.shape(), ErrorKind::ShapeMismatch, "reference and image differ in shape");
  const std::size_t plane = partition.height * partition.width;
  Tensor out(image.shape());
  for (std::size_t c = 0; c < image.dim(0); ++c)
    for (std::size_t p = 0; p < plane; ++p) {
      const std::size_t k = c * plane + p;
      out[k] = (coalition >> partition.ids[p]) & 1U ? image[k] : reference[k];
    }
  return out;
}

Tensor coalition_outputs(const Model& model, const Tensor& image, const SuperpixelPartition& partition,
                         const Tensor& reference, GameOutput output, std::size_t threads) {
  require_partition_fits(image, partition);
  require(partition.count <= kMaxPlayers, ErrorKind::TooManyPlayers, "too many superpixels for exact enumeration");
  const std::size_t total = std::size_t{1} << partition.count;
  const std::size_t k = model.num_classes();
  const std::size_t per = image.numel();
  constexpr std::size_t kChunk = 128;
  Tensor table(Shape{total, k});
  const std::size_t chunks = (total + kChunk - 1) / kChunk;
  parallel_for(chunks, threads, [&](std::size_t chunk) {
    const std::size_t lo = chunk * kChunk, hi = std::min(total, lo + kChunk);
    Tensor batch(Shape{hi - lo, image.dim(0), image.dim(1), image.dim(2)});
    for (std::size_t s = lo; s < hi; ++s) {
      const Tensor img = composite(image, reference, partition, s);
      std::copy_n(img.raw(), per, batch.raw() + (s - lo) * per);
    }
    const Tensor out = model_outputs(model, batch, output);
    std::copy_n(out.raw(), out.numel(), table.raw() + lo * k);
  });
  return table;
}

namespace {
CoalitionGame column_game(const Tensor& table, std::size_t players, std::size_t cls) {
  const std::size_t k = table.dim(1);
  require(cls < k, ErrorKind::IndexOutOfRange, "class " + std::to_string(cls) + " out of range");
  std::vector<double> values(table.dim(0));
  for (std::size_t s = 0; s < values.size(); ++s) values[s] = table[s * k + cls];
  return make_game(players, std::move(values));
}
}  // namespace

CoalitionGame model_game(const Model& model, const Tensor& image, const SuperpixelPartition& partition,
                         const Tensor& reference, std::size_t cls, GameOutput output, std::size_t threads) {
  return column_game(coalition_outputs(model, image, partition, reference, output, threads), partition.count, cls);
}

const ClassAttribution& AttributionReport::for_class(std::size_t cls) const {
  for (const auto& c : classes)
    if (c.cls == cls) return c;
  fail(ErrorKind::IndexOutOfRange, "class " + std::to_string(cls) + " not in the report");
}

AttributionReport attribute(const Model& model, const Tensor& image, const SuperpixelPartition& partition,
                            std::span<const Tensor> background, const AttributeOptions& options) {
  const Tensor reference = mean_reference(background);
  const auto bg_means = background_expected_values(model, background, options.output);
  const Tensor table = coalition_outputs(model, image, partition, reference, options.output, options.threads);
  const std::size_t k = table.dim(1);
  const std::uint64_t grand = (std::uint64_t{1} << partition.count) - 1;

  AttributionReport report;
  report.output = options.output;
  report.players = partition.count;
  report.winning_class = argmax(table.data().subspan(grand * k, k));
  for (std::size_t c = 0; c < k; ++c) {
    if (!options.all_classes && c != report.winning_class) continue;
    const CoalitionGame game = column_game(table, partition.count, c);
    report.classes.push_back({c, game.value(0), game.value(grand), bg_means[c], exact_shapley(game)});
  }
  return report;
}

Tensor pixel_map(std::span<const double> superpixel_values, const SuperpixelPartition& partition) {
  require(superpixel_values.size() == partition.count, ErrorKind::DimMismatch,
          "one value per superpixel is required");
  const auto sizes = partition.sizes();
  Tensor map(Shape{partition.height, partition.width});
  for (std::size_t p = 0; p < partition.ids.size(); ++p) {
    const std::size_t id = partition.ids[p];
    map[p] = superpixel_values[id] / static_cast<double>(sizes[id]);
  }
  return map;
}

FgBgRow quantify_fg_bg(const Tensor& map, const SegmentationMask& mask, std::string sample) {
  require(map.rank() == 2 && map.dim(0) == mask.height && map.dim(1) == mask.width, ErrorKind::DimMismatch,
          "map " + shape_string(map.shape()) + " does not match mask " + std::to_string(mask.height) + "x" +
              std::to_string(mask.width));
  mask.require_both_regions();
  FgBgRow row{std::move(sample), {}, {}};
  for (std::size_t p = 0; p < map.numel(); ++p) {
    RegionSums& r = mask.foreground[p] ? row.foreground : row.background;
    const double v = map[p];
    if (v > 0.0) r.pos += v;
    if (v < 0.0) r.neg += v;
  }
  return row;
}

Ratio safe_ratio(double num, double den) {
  if (den == 0.0 || !std::isfinite(num) || !std::isfinite(den)) return {0.0, false};
  return {num / den, true};
}

ContributionRatios contribution_ratios(double a, double b, double c, double d) {
  ContributionRatios r;
  r.fg = safe_ratio(a, b);
  r.bg = safe_ratio(c, d);
  if (r.fg.defined && r.bg.defined) r.combined = safe_ratio(r.fg.value, r.bg.value);
  return r;
}

ContributionRatios contribution_ratios(const FgBgRow& tl, const FgBgRow& kd) {
  require(tl.sample == kd.sample, ErrorKind::SampleMismatch,
          "rows come from different samples ('" + tl.sample + "' vs '" + kd.sample + "')");
  return contribution_ratios(tl.foreground.diff(), kd.foreground.diff(), tl.background.diff(),
                             kd.background.diff());
}

std::string attribution_json(const AttributionReport& report, const std::vector<std::string>& class_names) {
  nlohmann::ordered_json j;
  j["output"] = std::string(to_string(report.output));
  j["players"] = report.players;
  j["winning_class"] = report.winning_class;
  if (report.winning_class < class_names.size()) j["winning_class_name"] = class_names[report.winning_class];
  nlohmann::ordered_json classes = nlohmann::ordered_json::array();
  for (const auto& c : report.classes) {
    nlohmann::ordered_json e;
    e["class"] = c.cls;
    if (c.cls < class_names.size()) e["name"] = class_names[c.cls];
    e["expected_value"] = c.base_value;
    e["background_mean_output"] = c.background_mean;
    e["full_output"] = c.full_value;
    e["shapley"] = c.shapley;
    classes.push_back(std::move(e));
  }
  j["classes"] = std::move(classes);
  return j.dump(2) + "\n";
}

std::string grid_csv(const Tensor& map) {
  require(map.rank() == 2, ErrorKind::ShapeMismatch, "grid CSV needs a rank-2 map");
  std::string out;
  char cell[40];
  for (std::size_t y = 0; y < map.dim(0); ++y) {
    for (std::size_t x = 0; x < map.dim(1); ++x) {
      std::snprintf(cell, sizeof cell, "%s%.17g", x ? "," : "", map[y * map.dim(1) + x]);
      out += cell;
    }
    out += "\n";
  }
  return out;
}

std::string fgbg_csv(std::span<const FgBgRow> tl, std::span<const FgBgRow> kd) {
  require(tl.size() == kd.size(), ErrorKind::SampleMismatch, "TL and TL+KD tables differ in length");
  std::string out =
      "sample,tl_fg_pos,tl_fg_neg,tl_fg_diff,kd_fg_pos,kd_fg_neg,kd_fg_diff,"
      "tl_bg_pos,tl_bg_neg,tl_bg_diff,kd_bg_pos,kd_bg_neg,kd_bg_diff,fg_ratio,bg_ratio,ratio_of_ratios\n";
  auto num = [](double v) {
    char b[40];
    std::snprintf(b, sizeof b, "%.10g", v);
    return std::string(b);
  };
  auto rat = [&](const Ratio& r) { return r.defined ? num(r.value) : std::string("undefined"); };
  for (std::size_t i = 0; i < tl.size(); ++i) {
    const auto r = contribution_ratios(tl[i], kd[i]);
    const RegionSums* cells[] = {&tl[i].foreground, &kd[i].foreground, &tl[i].background, &kd[i].background};
    out += tl[i].sample;
    for (const RegionSums* s : cells) out += "," + num(s->pos) + "," + num(s->neg) + "," + num(s->diff());
    out += "," + rat(r.fg) + "," + rat(r.bg) + "," + rat(r.combined) + "\n";
  }
  return out;
}

}  // namespace dtkd
