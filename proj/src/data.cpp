#include "dtkd/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numbers>

#include <json.hpp>

namespace dtkd {

namespace {

std::vector<std::uint8_t> read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  require(static_cast<bool>(f), ErrorKind::IoError, "cannot open " + path);
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

void require_image(const Tensor& image) {
  require(image.rank() == 3, ErrorKind::ShapeMismatch, "expected an image [C,H,W], got " + shape_string(image.shape()));
}

std::size_t rounded_count(double fraction, std::size_t n) {
  return static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n)));
}

const std::vector<std::string> kCifarClasses = {"airplane", "automobile", "bird",  "cat",  "deer",
                                                "dog",      "frog",       "horse", "ship", "truck"};

}  // namespace

void ImageDataset::validate() const {
  require(images.size() == labels.size(), ErrorKind::ShapeMismatch, "image and label counts differ");
  for (std::size_t i = 0; i < images.size(); ++i) {
    require_image(images[i]);
    require(images[i].shape() == images[0].shape(), ErrorKind::ShapeMismatch, "images differ in shape");
    require(labels[i] < class_names.size(), ErrorKind::LabelOutOfRange,
            "label " + std::to_string(labels[i]) + " outside the class list");
  }
}

Batch make_batch(const ImageDataset& ds, std::span<const std::size_t> indices) {
  require(!indices.empty(), ErrorKind::EmptyDataset, "cannot build an empty batch");
  const Shape& s = ds.images.at(indices[0]).shape();
  const std::size_t per = shape_numel(s);
  Batch b{Tensor(Shape{indices.size(), s[0], s[1], s[2]}), {}};
  b.labels.reserve(indices.size());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const Tensor& img = ds.images.at(indices[i]);
    require(img.shape() == s, ErrorKind::ShapeMismatch, "images differ in shape");
    std::copy(img.raw(), img.raw() + per, b.images.raw() + i * per);
    b.labels.push_back(ds.labels[indices[i]]);
  }
  return b;
}

Batch make_batch(const ImageDataset& ds) {
  std::vector<std::size_t> idx(ds.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  return make_batch(ds, idx);
}

// --- loaders ----------------------------------------------------------------

ImageDataset load_cifar10_binary(const std::string& path, Split split) {
  constexpr std::size_t kRecord = 3073;
  const auto bytes = read_file(path);
  require(bytes.size() % kRecord == 0, ErrorKind::TruncatedFile,
          path + " holds " + std::to_string(bytes.size()) + " bytes, not a multiple of 3073");
  ImageDataset ds;
  ds.class_names = kCifarClasses;
  ds.split = split;
  for (std::size_t off = 0; off < bytes.size(); off += kRecord) {
    const std::size_t label = bytes[off];
    require(label < 10, ErrorKind::LabelOutOfRange, "CIFAR label " + std::to_string(label) + " out of range");
    Tensor img(Shape{3, 32, 32});
    for (std::size_t i = 0; i < 3072; ++i) img[i] = bytes[off + 1 + i] / 255.0;
    ds.images.push_back(std::move(img));
    ds.labels.push_back(label);
  }
  return ds;
}

namespace {
std::uint32_t read_be32(const std::vector<std::uint8_t>& b, std::size_t off) {
  require(off + 4 <= b.size(), ErrorKind::TruncatedFile, "IDX header truncated");
  return (std::uint32_t{b[off]} << 24) | (std::uint32_t{b[off + 1]} << 16) | (std::uint32_t{b[off + 2]} << 8) |
         std::uint32_t{b[off + 3]};
}
}  // namespace

ImageDataset load_idx(const std::string& image_path, const std::string& label_path, std::size_t num_classes,
                      Split split) {
  const auto ib = read_file(image_path);
  const auto lb = read_file(label_path);
  require(read_be32(ib, 0) == 0x00000803, ErrorKind::FormatError, image_path + " is not an IDX image file");
  require(read_be32(lb, 0) == 0x00000801, ErrorKind::FormatError, label_path + " is not an IDX label file");
  const std::size_t n = read_be32(ib, 4), h = read_be32(ib, 8), w = read_be32(ib, 12);
  require(read_be32(lb, 4) == n, ErrorKind::FormatError, "IDX image and label counts differ");
  require(ib.size() == 16 + n * h * w, ErrorKind::TruncatedFile, image_path + " has the wrong length");
  require(lb.size() == 8 + n, ErrorKind::TruncatedFile, label_path + " has the wrong length");
  ImageDataset ds;
  ds.split = split;
  for (std::size_t k = 0; k < num_classes; ++k) ds.class_names.push_back(std::to_string(k));
  const std::size_t plane = h * w;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t label = lb[8 + i];
    require(label < num_classes, ErrorKind::LabelOutOfRange, "IDX label " + std::to_string(label) + " out of range");
    Tensor img(Shape{3, h, w});
    for (std::size_t p = 0; p < plane; ++p) {
      const double v = ib[16 + i * plane + p] / 255.0;
      img[p] = img[plane + p] = img[2 * plane + p] = v;
    }
    ds.images.push_back(std::move(img));
    ds.labels.push_back(label);
  }
  return ds;
}

void write_ppm(const std::string& path, const Tensor& image) {
  require_image(image);
  require(image.dim(0) == 3, ErrorKind::ShapeMismatch, "PPM export needs three channels");
  const std::size_t h = image.dim(1), w = image.dim(2), plane = h * w;
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  require(static_cast<bool>(f), ErrorKind::IoError, "cannot write " + path);
  f << "P6\n" << w << ' ' << h << "\n255\n";
  for (std::size_t p = 0; p < plane; ++p)
    for (std::size_t c = 0; c < 3; ++c) {
      const double v = std::clamp(image[c * plane + p], 0.0, 1.0);
      f.put(static_cast<char>(static_cast<std::uint8_t>(std::lround(v * 255.0))));
    }
}

// --- normalization and augmentation ------------------------------------------

namespace {
Tensor affine_channels(const Tensor& image, const ChannelStats& mean, const ChannelStats& stddev, bool forward) {
  require_image(image);
  require(image.dim(0) == 3, ErrorKind::ShapeMismatch, "normalization expects three channels");
  for (double s : stddev) require(s > 0.0, ErrorKind::ZeroSigma, "channel standard deviation must be positive");
  const std::size_t plane = image.dim(1) * image.dim(2);
  Tensor out = image;
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t p = 0; p < plane; ++p) {
      double& v = out[c * plane + p];
      v = forward ? (v - mean[c]) / stddev[c] : v * stddev[c] + mean[c];
    }
  return out;
}
}  // namespace

Tensor normalize(const Tensor& image, const ChannelStats& mean, const ChannelStats& stddev) {
  return affine_channels(image, mean, stddev, true);
}

Tensor denormalize(const Tensor& image, const ChannelStats& mean, const ChannelStats& stddev) {
  return affine_channels(image, mean, stddev, false);
}

ImageDataset normalize(ImageDataset ds, const ChannelStats& mean, const ChannelStats& stddev) {
  for (auto& img : ds.images) img = normalize(img, mean, stddev);
  return ds;
}

ChannelMoments channel_moments(const ImageDataset& ds) {
  require(ds.size() > 0, ErrorKind::EmptyDataset, "cannot compute statistics of an empty dataset");
  ChannelMoments m;
  std::array<double, 3> s{}, sq{};
  std::size_t count = 0;
  for (const auto& img : ds.images) {
    const std::size_t plane = img.dim(1) * img.dim(2);
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t p = 0; p < plane; ++p) {
        const double v = img[c * plane + p];
        s[c] += v;
        sq[c] += v * v;
      }
    count += plane;
  }
  for (std::size_t c = 0; c < 3; ++c) {
    m.mean[c] = s[c] / static_cast<double>(count);
    const double var = sq[c] / static_cast<double>(count) - m.mean[c] * m.mean[c];
    m.stddev[c] = std::sqrt(std::max(var, 1e-12));
  }
  return m;
}

Tensor resize_bilinear(const Tensor& image, std::size_t out_h, std::size_t out_w) {
  require_image(image);
  require(out_h >= 1 && out_w >= 1, ErrorKind::InvalidRange, "resize target must be at least 1x1");
  const std::size_t ch = image.dim(0), in_h = image.dim(1), in_w = image.dim(2);
  if (in_h == out_h && in_w == out_w) return image;
  auto axis = [](std::size_t out_i, std::size_t in_n, std::size_t out_n) {
    double src = (static_cast<double>(out_i) + 0.5) * static_cast<double>(in_n) / static_cast<double>(out_n) - 0.5;
    src = std::clamp(src, 0.0, static_cast<double>(in_n - 1));
    const auto lo = static_cast<std::size_t>(std::floor(src));
    const std::size_t hi = std::min(lo + 1, in_n - 1);
    return std::tuple{lo, hi, src - static_cast<double>(lo)};
  };
  Tensor out(Shape{ch, out_h, out_w});
  for (std::size_t y = 0; y < out_h; ++y) {
    const auto [y0, y1, fy] = axis(y, in_h, out_h);
    for (std::size_t x = 0; x < out_w; ++x) {
      const auto [x0, x1, fx] = axis(x, in_w, out_w);
      for (std::size_t c = 0; c < ch; ++c) {
        const double* p = image.raw() + c * in_h * in_w;
        const double top = p[y0 * in_w + x0] * (1.0 - fx) + p[y0 * in_w + x1] * fx;
        const double bottom = p[y1 * in_w + x0] * (1.0 - fx) + p[y1 * in_w + x1] * fx;
        out[(c * out_h + y) * out_w + x] = top * (1.0 - fy) + bottom * fy;
      }
    }
  }
  return out;
}

Tensor horizontal_flip(const Tensor& image) {
  require_image(image);
  const std::size_t rows = image.dim(0) * image.dim(1), w = image.dim(2);
  Tensor out = image;
  for (std::size_t r = 0; r < rows; ++r) std::reverse(out.raw() + r * w, out.raw() + (r + 1) * w);
  return out;
}

Tensor horizontal_flip(const Tensor& image, double prob, SplitMix64& rng) {
  require(prob >= 0.0 && prob <= 1.0, ErrorKind::InvalidProbability, "flip probability must lie in [0, 1]");
  return rng.uniform() < prob ? horizontal_flip(image) : image;
}

namespace {
void zero_rect(Tensor& image, std::size_t y0, std::size_t x0, std::size_t h, std::size_t w) {
  const std::size_t H = image.dim(1), W = image.dim(2);
  for (std::size_t c = 0; c < image.dim(0); ++c)
    for (std::size_t y = y0; y < y0 + h; ++y) std::fill_n(image.raw() + (c * H + y) * W + x0, w, 0.0);
}
}  // namespace

Tensor quarter_black(const Tensor& image, SplitMix64& rng) {
  require_image(image);
  const std::size_t h = image.dim(1), w = image.dim(2);
  require(h % 2 == 0 && w % 2 == 0, ErrorKind::OddDimension, "quarter_black needs even image sides");
  const auto q = static_cast<std::size_t>(rng.uniform_int(0, 3));
  Tensor out = image;
  zero_rect(out, (q / 2) * (h / 2), (q % 2) * (w / 2), h / 2, w / 2);
  return out;
}

Tensor center_black(const Tensor& image, std::size_t min_side, std::size_t max_side, SplitMix64& rng) {
  require_image(image);
  const std::size_t h = image.dim(1), w = image.dim(2);
  require(min_side > 0 && min_side <= max_side && max_side <= std::min(h, w), ErrorKind::InvalidRange,
          "center_black sides [" + std::to_string(min_side) + ", " + std::to_string(max_side) +
              "] do not fit the image");
  const auto side = static_cast<std::size_t>(
      rng.uniform_int(static_cast<std::int64_t>(min_side), static_cast<std::int64_t>(max_side)));
  Tensor out = image;
  zero_rect(out, (h - side) / 2, (w - side) / 2, side, side);
  return out;
}

// --- complexity injection -----------------------------------------------------

std::vector<std::size_t> corruption_subset(std::size_t n, double fraction, std::uint64_t seed, StreamOp op) {
  require(fraction >= 0.0 && fraction <= 1.0, ErrorKind::InvalidRange, "fraction must lie in [0, 1]");
  SplitMix64 rng = make_stream(seed, static_cast<std::uint64_t>(op), StreamOp::corruption_pick);
  auto perm = permutation(n, rng);
  perm.resize(rounded_count(fraction, n));
  std::sort(perm.begin(), perm.end());
  return perm;
}

ImageDataset apply_label_noise(ImageDataset ds, double fraction, std::uint64_t seed) {
  require(ds.num_classes() >= 2, ErrorKind::SingleClass, "label noise needs at least two classes");
  const auto k = static_cast<std::int64_t>(ds.num_classes());
  for (std::size_t i : corruption_subset(ds.size(), fraction, seed, StreamOp::label_noise)) {
    SplitMix64 rng = make_stream(seed, i, StreamOp::label_noise);
    auto y = static_cast<std::size_t>(rng.uniform_int(0, k - 2));
    if (y >= ds.labels[i]) ++y;
    ds.labels[i] = y;
  }
  return ds;
}

ImageDataset subset_training_fraction(const ImageDataset& ds, double fraction, std::uint64_t seed) {
  require(fraction > 0.0 && fraction <= 1.0, ErrorKind::InvalidRange, "training fraction must lie in (0, 1]");
  std::vector<std::vector<std::size_t>> by_class(ds.num_classes());
  for (std::size_t i = 0; i < ds.size(); ++i) by_class.at(ds.labels[i]).push_back(i);
  std::vector<std::size_t> keep;
  for (std::size_t c = 0; c < by_class.size(); ++c) {
    const auto& members = by_class[c];
    if (members.empty()) continue;
    const std::size_t n_keep = rounded_count(fraction, members.size());
    require(n_keep > 0, ErrorKind::EmptyResult, "class " + std::to_string(c) + " would keep no samples");
    SplitMix64 rng = make_stream(seed, c, StreamOp::subset);
    const auto perm = permutation(members.size(), rng);
    for (std::size_t j = 0; j < n_keep; ++j) keep.push_back(members[perm[j]]);
  }
  std::sort(keep.begin(), keep.end());
  ImageDataset out;
  out.class_names = ds.class_names;
  out.split = ds.split;
  for (std::size_t i : keep) {
    out.images.push_back(ds.images[i]);
    out.labels.push_back(ds.labels[i]);
  }
  return out;
}

ImageDataset apply_corruption(ImageDataset ds, const CorruptionSpec& spec) {
  require(ds.split == Split::train, ErrorKind::InvalidConfig, "corruptions apply to training data only");
  require(spec.apply_fraction >= 0.0 && spec.apply_fraction <= 1.0, ErrorKind::InvalidRange,
          "apply_fraction must lie in [0, 1]");
  switch (spec.kind) {
    case CorruptionKind::label_noise: return apply_label_noise(std::move(ds), spec.apply_fraction, spec.seed);
    case CorruptionKind::quarter_black:
      for (std::size_t i : corruption_subset(ds.size(), spec.apply_fraction, spec.seed, StreamOp::quarter_black)) {
        SplitMix64 rng = make_stream(spec.seed, i, StreamOp::quarter_black);
        ds.images[i] = quarter_black(ds.images[i], rng);
      }
      return ds;
    case CorruptionKind::center_black:
      for (std::size_t i : corruption_subset(ds.size(), spec.apply_fraction, spec.seed, StreamOp::center_black)) {
        SplitMix64 rng = make_stream(spec.seed, i, StreamOp::center_black);
        ds.images[i] = center_black(ds.images[i], spec.min_side, spec.max_side, rng);
      }
      return ds;
  }
  return ds;
}

// --- segmentation masks ---------------------------------------------------------

bool point_in_polygon(const Polygon& poly, double x, double y) {
  bool inside = false;
  for (std::size_t i = 0, j = poly.size() - 1; i < poly.size(); j = i++) {
    const Point& a = poly[i];
    const Point& b = poly[j];
    if ((a.y > y) != (b.y > y) && x < (b.x - a.x) * (y - a.y) / (b.y - a.y) + a.x) inside = !inside;
  }
  return inside;
}

std::size_t SegmentationMask::foreground_count() const {
  return static_cast<std::size_t>(std::count(foreground.begin(), foreground.end(), std::uint8_t{1}));
}

void SegmentationMask::require_both_regions() const {
  const std::size_t fg = foreground_count();
  require(fg > 0 && fg < foreground.size(), ErrorKind::InvalidMask,
          "mask needs both foreground and background pixels (foreground " + std::to_string(fg) + " of " +
              std::to_string(foreground.size()) + ")");
}

SegmentationMask rasterize(std::vector<Polygon> polygons, std::size_t width, std::size_t height) {
  for (const auto& p : polygons)
    require(p.size() >= 3, ErrorKind::MalformedPolygon, "polygon needs at least three vertices");
  SegmentationMask m{width, height, std::vector<std::uint8_t>(width * height, 0), std::move(polygons)};
  for (std::size_t y = 0; y < height; ++y)
    for (std::size_t x = 0; x < width; ++x)
      for (const auto& p : m.polygons)
        if (point_in_polygon(p, static_cast<double>(x) + 0.5, static_cast<double>(y) + 0.5)) {
          m.foreground[y * width + x] = 1;
          break;
        }
  return m;
}

SegmentationMask load_coco_mask(const std::string& json_path, std::int64_t image_id, std::size_t width,
                                std::size_t height) {
  std::ifstream f(json_path);
  require(static_cast<bool>(f), ErrorKind::IoError, "cannot open " + json_path);
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(f);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::FormatError, json_path + ": " + e.what());
  }
  std::vector<Polygon> polygons;
  try {
    for (const auto& ann : doc.at("annotations")) {
      if (ann.at("image_id").get<std::int64_t>() != image_id) continue;
      for (const auto& seg : ann.at("segmentation")) {
        const auto coords = seg.get<std::vector<double>>();
        require(coords.size() >= 6 && coords.size() % 2 == 0, ErrorKind::MalformedPolygon,
                "polygon for image " + std::to_string(image_id) + " has " + std::to_string(coords.size()) +
                    " coordinates");
        Polygon poly;
        for (std::size_t i = 0; i < coords.size(); i += 2) poly.push_back({coords[i], coords[i + 1]});
        polygons.push_back(std::move(poly));
      }
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::FormatError, json_path + ": " + e.what());
  }
  require(!polygons.empty(), ErrorKind::MissingAnnotation, "no polygon annotation for image " + std::to_string(image_id));
  return rasterize(std::move(polygons), width, height);
}

void write_coco_json(const std::string& path, const std::vector<CocoImage>& images) {
  nlohmann::json doc;
  doc["images"] = nlohmann::json::array();
  doc["annotations"] = nlohmann::json::array();
  std::int64_t ann_id = 1;
  for (const auto& img : images) {
    doc["images"].push_back({{"id", img.id}, {"width", img.width}, {"height", img.height}, {"file_name", img.file_name}});
    nlohmann::json seg = nlohmann::json::array();
    for (const auto& poly : img.polygons) {
      std::vector<double> flat;
      for (const auto& p : poly) {
        flat.push_back(p.x);
        flat.push_back(p.y);
      }
      seg.push_back(flat);
    }
    doc["annotations"].push_back(
        {{"id", ann_id++}, {"image_id", img.id}, {"category_id", img.category}, {"segmentation", seg}});
  }
  std::ofstream f(path, std::ios::trunc);
  require(static_cast<bool>(f), ErrorKind::IoError, "cannot write " + path);
  f << doc.dump(1) << '\n';
}

// --- procedural shapes ------------------------------------------------------------

std::string_view shape_name(std::size_t shape) {
  static constexpr std::string_view names[kShapeCount] = {"square", "circle",  "triangle_up", "hbar",          "vbar",
                                                          "diamond", "ring", "cross",       "triangle_down", "outline"};
  require(shape < kShapeCount, ErrorKind::IndexOutOfRange, "unknown shape " + std::to_string(shape));
  return names[shape];
}

namespace {

Polygon regular(double cx, double cy, double r, std::size_t n, bool reverse) {
  Polygon p;
  for (std::size_t i = 0; i < n; ++i) {
    const double k = reverse ? static_cast<double>(n - i) : static_cast<double>(i);
    const double a = 2.0 * std::numbers::pi * k / static_cast<double>(n);
    p.push_back({cx + r * std::cos(a), cy + r * std::sin(a)});
  }
  return p;
}

// Outer boundary, a bridge to the inner boundary traced backwards, and back.
// The even-odd rule turns this into an annulus.
Polygon keyhole(Polygon outer, const Polygon& inner_reversed) {
  const Point start = outer.front();
  outer.insert(outer.end(), inner_reversed.begin(), inner_reversed.end());
  outer.push_back(inner_reversed.front());
  outer.push_back(start);
  return outer;
}

Polygon square(double cx, double cy, double r) { return {{cx - r, cy - r}, {cx + r, cy - r}, {cx + r, cy + r}, {cx - r, cy + r}}; }

}  // namespace

Polygon shape_polygon(std::size_t shape, double cx, double cy, double r) {
  const double t = 0.32 * r;
  switch (shape) {
    case 0: return square(cx, cy, 0.85 * r);
    case 1: return regular(cx, cy, r, 24, false);
    case 2: return {{cx, cy - r}, {cx + r, cy + r}, {cx - r, cy + r}};
    case 3: return {{cx - r, cy - t}, {cx + r, cy - t}, {cx + r, cy + t}, {cx - r, cy + t}};
    case 4: return {{cx - t, cy - r}, {cx + t, cy - r}, {cx + t, cy + r}, {cx - t, cy + r}};
    case 5: return {{cx, cy - r}, {cx + r, cy}, {cx, cy + r}, {cx - r, cy}};
    case 6: return keyhole(regular(cx, cy, r, 24, false), regular(cx, cy, 0.55 * r, 24, true));
    case 7:
      return {{cx - t, cy - r}, {cx + t, cy - r}, {cx + t, cy - t}, {cx + r, cy - t}, {cx + r, cy + t}, {cx + t, cy + t},
              {cx + t, cy + r}, {cx - t, cy + r}, {cx - t, cy + t}, {cx - r, cy + t}, {cx - r, cy - t}, {cx - t, cy - t}};
    case 8: return {{cx - r, cy - r}, {cx + r, cy - r}, {cx, cy + r}};
    case 9: {
      Polygon inner = square(cx, cy, 0.5 * r);
      std::reverse(inner.begin(), inner.end());
      return keyhole(square(cx, cy, 0.9 * r), inner);
    }
    default: fail(ErrorKind::IndexOutOfRange, "unknown shape " + std::to_string(shape));
  }
}

ShapesDataset generate_shapes(const ShapesSpec& spec) {
  require(!spec.shapes.empty(), ErrorKind::InvalidConfig, "no shapes requested");
  require(spec.image_size >= 8, ErrorKind::InvalidRange, "shape images must be at least 8 pixels");
  const std::size_t s = spec.image_size, plane = s * s;
  const double side = static_cast<double>(s);
  ShapesDataset out;
  out.data.split = spec.split;
  for (std::size_t shape : spec.shapes) out.data.class_names.emplace_back(shape_name(shape));
  const std::size_t k = spec.shapes.size();
  for (std::size_t i = 0; i < spec.per_class * k; ++i) {
    const std::size_t label = i % k;
    SplitMix64 rng = make_stream(spec.seed, spec.index_offset + i, StreamOp::synthetic);
    const double r = rng.uniform(0.2, 0.34) * side;
    const double cx = rng.uniform(r + 1.0, side - r - 1.0);
    const double cy = rng.uniform(r + 1.0, side - r - 1.0);
    Polygon poly = shape_polygon(spec.shapes[label], cx, cy, r);
    const SegmentationMask mask = rasterize({poly}, s, s);

    std::array<double, 3> bg{}, fg{};
    for (auto& v : bg) v = rng.uniform(0.1, 0.9);
    for (auto& v : fg) v = rng.uniform(0.0, 1.0);
    // At least one channel separates shape from background by 0.3.
    const auto ch = static_cast<std::size_t>(rng.uniform_int(0, 2));
    if (std::abs(fg[ch] - bg[ch]) < 0.3) fg[ch] = bg[ch] > 0.5 ? bg[ch] - 0.4 : bg[ch] + 0.4;

    Tensor img(Shape{3, s, s});
    for (std::size_t p = 0; p < plane; ++p) {
      const bool on = mask.foreground[p] != 0;
      for (std::size_t c = 0; c < 3; ++c) {
        const double base = on ? fg[c] : bg[c];
        img[c * plane + p] = std::clamp(base + spec.noise * rng.normal(), 0.0, 1.0);
      }
    }
    out.data.images.push_back(std::move(img));
    out.data.labels.push_back(label);
    out.outlines.push_back(std::move(poly));
  }
  return out;
}

}  // namespace dtkd
