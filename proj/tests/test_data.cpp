#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include "dtkd/data.hpp"
#include "support.hpp"

using namespace dtkd;
using dtkd::testing::random_tensor;

namespace {

template <typename F>
ErrorKind kind_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  ADD_FAILURE() << "expected an Error";
  return ErrorKind::DomainError;
}

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / ("dtkd_data_" + name)).string();
}

void write_bytes(const std::string& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

void push_be32(std::vector<std::uint8_t>& b, std::uint32_t v) {
  for (int s = 24; s >= 0; s -= 8) b.push_back(static_cast<std::uint8_t>(v >> s));
}

std::size_t zero_count(const Tensor& t) {
  return static_cast<std::size_t>(std::count(t.data().begin(), t.data().end(), 0.0));
}

ImageDataset labelled(std::size_t per_class, std::size_t classes, Split split = Split::train) {
  ImageDataset ds;
  ds.split = split;
  for (std::size_t c = 0; c < classes; ++c) ds.class_names.push_back("c" + std::to_string(c));
  for (std::size_t i = 0; i < per_class * classes; ++i) {
    ds.images.emplace_back(Shape{3, 4, 4}, static_cast<double>(i));
    ds.labels.push_back(i % classes);
  }
  return ds;
}

}  // namespace

TEST(Cifar, TwoRecordFixture) {
  std::vector<std::uint8_t> bytes;
  for (std::uint8_t label : {3, 9}) {
    bytes.push_back(label);
    for (std::size_t i = 0; i < 3072; ++i) bytes.push_back(static_cast<std::uint8_t>(i % 256));
  }
  bytes[1] = 255;
  const auto path = temp_path("two.bin");
  write_bytes(path, bytes);
  const ImageDataset ds = load_cifar10_binary(path);
  ASSERT_EQ(ds.size(), 2u);
  EXPECT_EQ(ds.labels, (std::vector<std::size_t>{3, 9}));
  EXPECT_EQ(ds.images[0].shape(), (Shape{3, 32, 32}));
  EXPECT_EQ(ds.images[0][0], 1.0);
  EXPECT_EQ(ds.images[1][1], 1.0 / 255.0);
  EXPECT_EQ(ds.images[1][1024], 0.0);  // green plane starts at byte 1024
  EXPECT_EQ(ds.class_names.size(), 10u);

  bytes.pop_back();
  write_bytes(path, bytes);
  EXPECT_EQ(kind_of([&] { (void)load_cifar10_binary(path); }), ErrorKind::TruncatedFile);
  bytes.push_back(0);
  bytes[0] = 10;
  write_bytes(path, bytes);
  EXPECT_EQ(kind_of([&] { (void)load_cifar10_binary(path); }), ErrorKind::LabelOutOfRange);
  std::filesystem::remove(path);
}

TEST(Cifar, EmptyFileGivesEmptyDataset) {
  const auto path = temp_path("empty.bin");
  write_bytes(path, {});
  EXPECT_EQ(load_cifar10_binary(path).size(), 0u);
  std::filesystem::remove(path);
}

TEST(Idx, GrayscaleReplicatedToThreeChannels) {
  auto write_idx = [](std::size_t n, std::size_t h, std::size_t w, std::uint32_t magic) {
    std::vector<std::uint8_t> img, lab;
    push_be32(img, magic);
    push_be32(img, static_cast<std::uint32_t>(n));
    push_be32(img, static_cast<std::uint32_t>(h));
    push_be32(img, static_cast<std::uint32_t>(w));
    for (std::size_t i = 0; i < n * h * w; ++i) img.push_back(static_cast<std::uint8_t>(i * 50));
    push_be32(lab, 0x00000801);
    push_be32(lab, static_cast<std::uint32_t>(n));
    for (std::size_t i = 0; i < n; ++i) lab.push_back(static_cast<std::uint8_t>(7));
    write_bytes(temp_path("img.idx"), img);
    write_bytes(temp_path("lab.idx"), lab);
  };
  write_idx(1, 2, 2, 0x00000803);
  const ImageDataset ds = load_idx(temp_path("img.idx"), temp_path("lab.idx"));
  ASSERT_EQ(ds.size(), 1u);
  EXPECT_EQ(ds.images[0].shape(), (Shape{3, 2, 2}));
  EXPECT_EQ(ds.labels[0], 7u);
  for (std::size_t p = 0; p < 4; ++p) {
    EXPECT_EQ(ds.images[0][p], p * 50 / 255.0);
    EXPECT_EQ(ds.images[0][p], ds.images[0][4 + p]);
    EXPECT_EQ(ds.images[0][p], ds.images[0][8 + p]);
  }
  write_idx(2, 28, 28, 0x00000803);
  EXPECT_EQ(load_idx(temp_path("img.idx"), temp_path("lab.idx")).images[1].shape(), (Shape{3, 28, 28}));
  write_idx(1, 2, 2, 0x00000802);
  EXPECT_EQ(kind_of([] { (void)load_idx(temp_path("img.idx"), temp_path("lab.idx")); }), ErrorKind::FormatError);
}

TEST(Normalize, Examples) {
  Tensor img(Shape{3, 2, 2});
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t p = 0; p < 4; ++p) img[c * 4 + p] = kCifarMean[c];
  const Tensor centred = normalize(img, kCifarMean, kCifarStd);
  for (double v : centred.data()) EXPECT_EQ(v, 0.0);

  SplitMix64 rng(1);
  const Tensor x = random_tensor(Shape{3, 8, 8}, rng, 0, 1);
  EXPECT_LT(max_abs_diff(denormalize(normalize(x, kCifarMean, kCifarStd), kCifarMean, kCifarStd), x), 1e-12);
  EXPECT_TRUE(bitwise_equal(normalize(x, {0, 0, 0}, {1, 1, 1}), x));
  EXPECT_EQ(kind_of([&] { (void)normalize(x, kCifarMean, {0.2, 0.0, 0.2}); }), ErrorKind::ZeroSigma);
}

TEST(Resize, IdentityAndConstant) {
  SplitMix64 rng(2);
  const Tensor x = random_tensor(Shape{3, 5, 7}, rng);
  EXPECT_LT(max_abs_diff(resize_bilinear(x, 5, 7), x), 1e-12);
  const Tensor c(Shape{3, 4, 4}, 0.3);
  const Tensor big = resize_bilinear(c, 9, 13);
  for (double v : big.data()) EXPECT_NEAR(v, 0.3, 1e-15);
  EXPECT_EQ(resize_bilinear(c, 1, 1).shape(), (Shape{3, 1, 1}));
}

TEST(Resize, CheckerboardHalfPixelArithmetic) {
  const Tensor board(Shape{1, 2, 2}, std::vector<double>{0, 1, 1, 0});
  // Output centres map to source coordinates -0.25, 0.25, 0.75, 1.25 (clamped to [0, 1]).
  const std::vector<double> expected = {0,    0.25,  0.75,  1,     //
                                        0.25, 0.375, 0.625, 0.75,  //
                                        0.75, 0.625, 0.375, 0.25,  //
                                        1,    0.75,  0.25,  0};
  const Tensor up = resize_bilinear(board, 4, 4);
  for (std::size_t i = 0; i < 16; ++i) EXPECT_DOUBLE_EQ(up[i], expected[i]) << i;
  // The central 2x2 block averages to 0.5, and the exact image midpoint
  // (sampled by a 3x3 output) is 0.5.
  EXPECT_DOUBLE_EQ((up[5] + up[6] + up[9] + up[10]) / 4, 0.5);
  EXPECT_DOUBLE_EQ(resize_bilinear(board, 3, 3)[4], 0.5);
}

TEST(Flip, Examples) {
  SplitMix64 rng(3);
  const Tensor x = random_tensor(Shape{3, 4, 5}, rng);
  SplitMix64 never(0);
  EXPECT_TRUE(bitwise_equal(horizontal_flip(x, 0.0, never), x));
  EXPECT_TRUE(bitwise_equal(horizontal_flip(horizontal_flip(x)), x));
  const Tensor ab(Shape{1, 1, 2}, std::vector<double>{1, 2});
  EXPECT_EQ(horizontal_flip(ab).values(), (std::vector<double>{2, 1}));
}

TEST(QuarterBlack, ZeroesExactlyOneQuadrant) {
  const Tensor ones(Shape{3, 224, 224}, 1.0);
  std::set<std::size_t> quadrants;
  std::vector<std::uint8_t> union_mask(224 * 224, 0);
  for (std::uint64_t seed = 0; seed < 64; ++seed) {
    SplitMix64 rng = make_stream(seed, 0, StreamOp::quarter_black);
    const Tensor out = quarter_black(ones, rng);
    EXPECT_EQ(out.shape(), ones.shape());
    EXPECT_EQ(sum(out), 3.0 * 224 * 224 - 3.0 * 112 * 112);
    EXPECT_EQ(zero_count(out), 3u * 112 * 112);
    const std::size_t q = (out[0] == 0 ? 0 : out[223] == 0 ? 1 : out[223 * 224] == 0 ? 2 : 3);
    quadrants.insert(q);
    for (std::size_t p = 0; p < 224 * 224; ++p) union_mask[p] |= out[p] == 0.0;
  }
  EXPECT_EQ(quadrants.size(), 4u);
  EXPECT_EQ(std::count(union_mask.begin(), union_mask.end(), 1), 224 * 224);
  SplitMix64 a(5), b(5);
  EXPECT_TRUE(bitwise_equal(quarter_black(ones, a), quarter_black(ones, b)));
  SplitMix64 rng(0);
  EXPECT_EQ(kind_of([&] { (void)quarter_black(Tensor(Shape{3, 5, 4}), rng); }), ErrorKind::OddDimension);
}

TEST(CenterBlack, Examples) {
  const Tensor ones(Shape{3, 224, 224}, 1.0);
  SplitMix64 rng(0);
  EXPECT_EQ(zero_count(center_black(ones, 224, 224, rng)), 3u * 224 * 224);
  const Tensor out = center_black(ones, 200, 200, rng);
  EXPECT_EQ(zero_count(out), 3u * 200 * 200);
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t y = 0; y < 224; ++y)
      for (std::size_t x = 0; x < 224; ++x) {
        const bool inside = y >= 12 && y <= 211 && x >= 12 && x <= 211;
        EXPECT_EQ(out[(c * 224 + y) * 224 + x], inside ? 0.0 : 1.0);
      }
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t zeros = zero_count(center_black(ones, 200, 224, rng)) / 3;
    const auto side = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(zeros))));
    EXPECT_EQ(side * side, zeros);
    EXPECT_GE(side, 200u);
    EXPECT_LE(side, 224u);
  }
  EXPECT_EQ(kind_of([&] { (void)center_black(ones, 0, 10, rng); }), ErrorKind::InvalidRange);
  EXPECT_EQ(kind_of([&] { (void)center_black(ones, 20, 10, rng); }), ErrorKind::InvalidRange);
  EXPECT_EQ(kind_of([&] { (void)center_black(ones, 10, 225, rng); }), ErrorKind::InvalidRange);
}

TEST(LabelNoise, ChangesExactlyTheRoundedCount) {
  const ImageDataset ds = labelled(10, 10);
  EXPECT_EQ(apply_label_noise(ds, 0.0, 1).labels, ds.labels);
  const ImageDataset all = apply_label_noise(ds, 1.0, 1);
  for (std::size_t i = 0; i < ds.size(); ++i) EXPECT_NE(all.labels[i], ds.labels[i]);
  for (double f : {0.5, 0.13, 0.999}) {
    const ImageDataset noisy = apply_label_noise(ds, f, 7);
    std::size_t changed = 0;
    for (std::size_t i = 0; i < ds.size(); ++i) {
      changed += noisy.labels[i] != ds.labels[i];
      EXPECT_LT(noisy.labels[i], 10u);
    }
    EXPECT_EQ(changed, static_cast<std::size_t>(std::llround(f * 100)));
  }
  EXPECT_EQ(apply_label_noise(ds, 0.3, 9).labels, apply_label_noise(ds, 0.3, 9).labels);
  EXPECT_EQ(kind_of([] { (void)apply_label_noise(labelled(3, 1), 0.5, 0); }), ErrorKind::SingleClass);
}

TEST(TrainingFraction, StratifiedCounts) {
  const ImageDataset ds = labelled(50, 10);
  const ImageDataset same = subset_training_fraction(ds, 1.0, 3);
  EXPECT_EQ(same.labels, ds.labels);
  for (std::size_t i = 0; i < ds.size(); ++i) EXPECT_TRUE(bitwise_equal(same.images[i], ds.images[i]));

  const ImageDataset tenth = subset_training_fraction(labelled(5000, 10), 0.1, 3);
  std::vector<std::size_t> counts(10, 0);
  for (std::size_t y : tenth.labels) ++counts[y];
  for (std::size_t c : counts) EXPECT_EQ(c, 500u);

  ImageDataset uneven = labelled(7, 3);
  uneven.images.pop_back();
  uneven.labels.pop_back();  // class counts 7, 7, 6
  const ImageDataset half = subset_training_fraction(uneven, 0.5, 1);
  std::vector<std::size_t> hc(3, 0);
  for (std::size_t y : half.labels) ++hc[y];
  EXPECT_EQ(hc, (std::vector<std::size_t>{4, 4, 3}));
  EXPECT_EQ(kind_of([] { (void)subset_training_fraction(labelled(2, 2), 0.1, 0); }), ErrorKind::EmptyResult);
}

TEST(Corruption, DeterministicAndTrainOnly) {
  ImageDataset ds;
  ds.class_names = {"a", "b"};
  SplitMix64 rng(4);
  for (std::size_t i = 0; i < 40; ++i) {
    ds.images.push_back(random_tensor(Shape{3, 16, 16}, rng, 0.1, 1.0));
    ds.labels.push_back(i % 2);
  }
  const CorruptionSpec spec{CorruptionKind::center_black, 0.25, 8, 12, 42};
  const ImageDataset a = apply_corruption(ds, spec);
  const ImageDataset b = apply_corruption(ds, spec);
  std::size_t touched = 0;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    EXPECT_TRUE(bitwise_equal(a.images[i], b.images[i]));
    EXPECT_EQ(a.images[i].shape(), ds.images[i].shape());
    touched += !bitwise_equal(a.images[i], ds.images[i]);
  }
  EXPECT_EQ(touched, 10u);
  ImageDataset val = ds;
  val.split = Split::val;
  EXPECT_EQ(kind_of([&] { (void)apply_corruption(val, spec); }), ErrorKind::InvalidConfig);
}

TEST(Mask, LeftHalfSquare) {
  const SegmentationMask m = rasterize({{{0, 0}, {4, 0}, {4, 6}, {0, 6}}}, 8, 6);
  EXPECT_EQ(m.foreground_count(), 4u * 6);
  for (std::size_t y = 0; y < 6; ++y)
    for (std::size_t x = 0; x < 8; ++x) EXPECT_EQ(m.at(x, y), x < 4);
  EXPECT_NO_THROW(m.require_both_regions());
}

TEST(Mask, TriangleMatchesBruteForceCentreTest) {
  const SegmentationMask m = rasterize({{{0, 0}, {4, 0}, {0, 4}}}, 4, 4);
  std::size_t oracle = 0;
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 4; ++x) oracle += (x + 0.5) + (y + 0.5) < 4.0;
  EXPECT_EQ(m.foreground_count(), oracle);
  EXPECT_EQ(oracle, 6u);
}

TEST(Mask, CocoLoadingAndErrors) {
  const std::string path = temp_path("coco.json");
  write_coco_json(path, {{1, 8, 8, "a.ppm", 0, {{{0, 0}, {8, 0}, {8, 8}, {0, 8}}}},
                         {2, 8, 8, "b.ppm", 1, {{{0, 0}, {4, 0}, {4, 8}, {0, 8}}}}});
  const SegmentationMask full = load_coco_mask(path, 1, 8, 8);
  EXPECT_EQ(full.foreground_count(), 64u);
  EXPECT_EQ(kind_of([&] { full.require_both_regions(); }), ErrorKind::InvalidMask);
  EXPECT_EQ(load_coco_mask(path, 2, 8, 8).foreground_count(), 32u);
  EXPECT_EQ(kind_of([&] { (void)load_coco_mask(path, 3, 8, 8); }), ErrorKind::MissingAnnotation);
  {
    std::ofstream f(path, std::ios::trunc);
    f << R"({"images":[],"annotations":[{"id":1,"image_id":5,"category_id":0,"segmentation":[[0,0,1,1]]}]})";
  }
  EXPECT_EQ(kind_of([&] { (void)load_coco_mask(path, 5, 4, 4); }), ErrorKind::MalformedPolygon);
  std::filesystem::remove(path);
}

TEST(Shapes, KeyholeRingHasAHole) {
  const Polygon ring = shape_polygon(6, 16, 16, 10);
  EXPECT_TRUE(point_in_polygon(ring, 16 + 8, 16.3));
  EXPECT_FALSE(point_in_polygon(ring, 16.2, 16.3));
  EXPECT_FALSE(point_in_polygon(ring, 30, 30));
  const Polygon outline = shape_polygon(9, 16, 16, 10);
  EXPECT_FALSE(point_in_polygon(outline, 16.1, 16.2));
  EXPECT_TRUE(point_in_polygon(outline, 16.1, 8.0));
}

TEST(Shapes, GeneratorIsDeterministicAndBalanced) {
  const ShapesSpec spec{{5, 6, 7, 8, 9}, 4, 32, 0.08, 3, 0, Split::train};
  const ShapesDataset a = generate_shapes(spec);
  const ShapesDataset b = generate_shapes(spec);
  ASSERT_EQ(a.data.size(), 20u);
  a.data.validate();
  EXPECT_EQ(a.data.class_names[1], "ring");
  std::vector<std::size_t> counts(5, 0);
  for (std::size_t i = 0; i < 20; ++i) {
    EXPECT_TRUE(bitwise_equal(a.data.images[i], b.data.images[i]));
    ++counts[a.data.labels[i]];
    for (double v : a.data.images[i].data()) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
    }
    const SegmentationMask m = rasterize({a.outlines[i]}, 32, 32);
    EXPECT_NO_THROW(m.require_both_regions());
  }
  EXPECT_EQ(counts, std::vector<std::size_t>(5, 4));
}

TEST(Ppm, HeaderAndSize) {
  const std::string path = temp_path("img.ppm");
  write_ppm(path, Tensor(Shape{3, 2, 3}, 1.0));
  std::ifstream f(path, std::ios::binary);
  std::string content((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  EXPECT_EQ(content.substr(0, 11), "P6\n3 2\n255\n");
  EXPECT_EQ(content.size(), 11u + 18);
  EXPECT_EQ(static_cast<unsigned char>(content.back()), 255);
  std::filesystem::remove(path);
}
