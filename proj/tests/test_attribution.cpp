#include <gtest/gtest.h>

#include <bit>
#include <cmath>
#include <numeric>

#include "dtkd/attribution.hpp"
#include "dtkd/losses.hpp"
#include "reference_tables.hpp"
#include "support.hpp"

using namespace dtkd;
using dtkd::testing::kShapTable;
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

// Averages marginal contributions over all n! orderings.
std::vector<double> permutation_oracle(const CoalitionGame& g) {
  std::vector<std::size_t> order(g.players);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<double> phi(g.players, 0.0);
  double count = 0;
  do {
    std::uint64_t s = 0;
    for (std::size_t p : order) {
      phi[p] += g.value(s | (std::uint64_t{1} << p)) - g.value(s);
      s |= std::uint64_t{1} << p;
    }
    ++count;
  } while (std::next_permutation(order.begin(), order.end()));
  for (double& v : phi) v /= count;
  return phi;
}

CoalitionGame random_game(std::size_t n, SplitMix64& rng) {
  std::vector<double> v(std::size_t{1} << n);
  for (double& x : v) x = rng.uniform(-5, 5);
  return make_game(n, std::move(v));
}

Model constant_head(std::size_t k, std::size_t size) {
  Model m = build_student(k, size, 1);
  Parameter& w = m.layers[m.head_boundary].params[0];
  for (double& x : w.value.data()) x = 0.0;
  return m;
}

}  // namespace

TEST(Shapley, CoalitionFigureGame) {
  // Bits: A = 1, B = 2, C = 4.
  const CoalitionGame g = make_game(3, {0, 5, 7, 15, 3, 10, 13, 21});
  const auto phi = exact_shapley(g);
  EXPECT_NEAR(phi[0], 41.0 / 6.0, 1e-12);
  EXPECT_NEAR(phi[1], 28.0 / 3.0, 1e-12);
  EXPECT_NEAR(phi[2], 29.0 / 6.0, 1e-12);
  EXPECT_NEAR(std::round(phi[0] * 100) / 100, 6.83, 1e-12);
  EXPECT_NEAR(std::round(phi[1] * 100) / 100, 9.33, 1e-12);
  EXPECT_NEAR(std::round(phi[2] * 100) / 100, 4.83, 1e-12);
}

TEST(Shapley, AdditiveGameAndSinglePlayer) {
  const std::vector<double> w = {1.5, -2.0, 0.25, 4.0};
  std::vector<double> v(16);
  for (std::uint64_t s = 0; s < 16; ++s)
    for (std::size_t i = 0; i < 4; ++i)
      if (s >> i & 1) v[s] += w[i];
  const auto phi = exact_shapley(make_game(4, v));
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(phi[i], w[i]);
  EXPECT_EQ(exact_shapley(make_game(1, {2.0, 7.5}))[0], 5.5);
}

TEST(Shapley, AxiomsOnRandomGames) {
  SplitMix64 rng(17);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 1 + rng.uniform_int(0, 5);
    CoalitionGame g = random_game(n, rng);
    const auto phi = exact_shapley(g);
    const double total = std::accumulate(phi.begin(), phi.end(), 0.0);
    EXPECT_NEAR(total, g.value(g.grand()) - g.value(0), 1e-9);
    const auto oracle = permutation_oracle(g);
    for (std::size_t i = 0; i < n; ++i) EXPECT_NEAR(phi[i], oracle[i], 1e-12);

    // Dummy: make the last player irrelevant.
    const std::uint64_t last = std::uint64_t{1} << (n - 1);
    for (std::uint64_t s = 0; s < g.values.size(); ++s)
      if (s & last) g.values[s] = g.values[s & ~last];
    EXPECT_EQ(exact_shapley(g)[n - 1], 0.0);
  }
}

TEST(Shapley, SymmetricPlayersGetEqualValues) {
  SplitMix64 rng(18);
  for (int trial = 0; trial < 50; ++trial) {
    // Value depends only on coalition size.
    std::vector<double> by_size(6);
    for (double& x : by_size) x = rng.uniform(-3, 3);
    std::vector<double> v(32);
    for (std::uint64_t s = 0; s < 32; ++s) v[s] = by_size[static_cast<std::size_t>(std::popcount(s))];
    const auto phi = exact_shapley(make_game(5, v));
    for (std::size_t i = 1; i < 5; ++i) EXPECT_NEAR(phi[i], phi[0], 1e-12);
  }
}

TEST(Shapley, MonteCarloWithinThreeStandardErrors) {
  SplitMix64 rng(19);
  std::size_t outside = 0, total = 0;
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t n = 2 + rng.uniform_int(0, 8);
    const CoalitionGame g = random_game(n, rng);
    const auto exact = exact_shapley(g);
    const ShapleyEstimate est = monte_carlo_shapley(g, 10000, 100 + trial);
    for (std::size_t i = 0; i < n; ++i) {
      ++total;
      outside += std::abs(est.mean[i] - exact[i]) > 3 * est.standard_error[i];
    }
  }
  // Expected miss rate is about 0.3%.
  EXPECT_LE(outside, total / 50 + 1);
}

TEST(Shapley, Errors) {
  EXPECT_EQ(kind_of([] { (void)make_game(21, {}); }), ErrorKind::TooManyPlayers);
  EXPECT_EQ(kind_of([] { (void)make_game(2, {0, 1, 2}); }), ErrorKind::ShapeMismatch);
}

TEST(GridPartition, Examples) {
  const SuperpixelPartition big = grid_partition(224, 224, 4, 4);
  EXPECT_EQ(big.count, 16u);
  for (std::size_t s : big.sizes()) EXPECT_EQ(s, 56u * 56u);

  const SuperpixelPartition small = grid_partition(5, 5, 2, 2);
  EXPECT_EQ(small.sizes(), (std::vector<std::size_t>{9, 6, 6, 4}));
  EXPECT_EQ(small.id(0, 0), 0u);
  EXPECT_EQ(small.id(2, 2), 0u);
  EXPECT_EQ(small.id(2, 3), 1u);
  EXPECT_EQ(small.id(4, 4), 3u);

  const SuperpixelPartition odd = grid_partition(31, 17, 4, 5);
  const auto sizes = odd.sizes();
  EXPECT_EQ(std::accumulate(sizes.begin(), sizes.end(), std::size_t{0}), 31u * 17u);
  for (std::size_t id : odd.ids) EXPECT_LT(id, 20u);
  EXPECT_EQ(kind_of([] { (void)grid_partition(32, 32, 3, 7); }), ErrorKind::TooManyPlayers);
}

TEST(ModelGame, EndpointsAndAdditivity) {
  SplitMix64 rng(20);
  const Model student = build_student(4, 8, 2);
  const Tensor image = random_tensor(Shape{3, 8, 8}, rng, 0, 1);
  std::vector<Tensor> background;
  for (int i = 0; i < 5; ++i) background.push_back(random_tensor(Shape{3, 8, 8}, rng, 0, 1));
  const Tensor reference = mean_reference(background);
  const SuperpixelPartition part = grid_partition(8, 8, 2, 3);
  const Tensor full = forward(student, image.reshape(Shape{1, 3, 8, 8}));
  const Tensor empty = forward(student, reference.reshape(Shape{1, 3, 8, 8}));
  const CoalitionGame g = model_game(student, image, part, reference, 2);
  EXPECT_EQ(g.value(g.grand()), full[2]);
  EXPECT_EQ(g.value(0), empty[2]);

  for (GameOutput out : {GameOutput::logits, GameOutput::softmax}) {
    const AttributionReport r = attribute(student, image, part, background, {out, true, 2});
    ASSERT_EQ(r.classes.size(), 4u);
    const Tensor expected = out == GameOutput::logits ? full : softmax(full);
    EXPECT_EQ(r.winning_class, argmax(full.data()));
    for (const auto& c : r.classes) {
      const double s = std::accumulate(c.shapley.begin(), c.shapley.end(), 0.0);
      EXPECT_NEAR(c.base_value + s, expected[c.cls], 1e-9);
      EXPECT_EQ(c.full_value, expected[c.cls]);
      EXPECT_NEAR(c.background_mean, background_expected_value(student, background, c.cls, out), 0.0);
    }
    if (out == GameOutput::softmax) {
      double base = 0;
      for (const auto& c : r.classes) base += c.base_value;
      EXPECT_NEAR(base, 1.0, 1e-12);
    }
  }
  const AttributionReport winner = attribute(student, image, part, background, {GameOutput::logits, false, 1});
  ASSERT_EQ(winner.classes.size(), 1u);
  EXPECT_EQ(winner.classes[0].cls, winner.winning_class);
}

TEST(ModelGame, ParallelAndSerialTablesAgree) {
  SplitMix64 rng(21);
  const Model student = build_student(3, 8, 4);
  const Tensor image = random_tensor(Shape{3, 8, 8}, rng, 0, 1);
  const Tensor reference(Shape{3, 8, 8}, 0.5);
  const SuperpixelPartition part = grid_partition(8, 8, 3, 3);
  EXPECT_TRUE(bitwise_equal(coalition_outputs(student, image, part, reference, GameOutput::logits, 1),
                            coalition_outputs(student, image, part, reference, GameOutput::logits, 3)));
}

TEST(ModelGame, SelfReferenceAndConstantModelGiveZero) {
  SplitMix64 rng(22);
  const Model student = build_student(3, 8, 5);
  const Tensor image = random_tensor(Shape{3, 8, 8}, rng, 0, 1);
  const SuperpixelPartition part = grid_partition(8, 8, 2, 2);
  const std::vector<Tensor> self = {image};
  for (const auto& c : attribute(student, image, part, self).classes)
    for (double phi : c.shapley) EXPECT_EQ(phi, 0.0);

  const Model flat = constant_head(3, 8);
  std::vector<Tensor> background = {random_tensor(Shape{3, 8, 8}, rng, 0, 1)};
  const AttributionReport r = attribute(flat, image, part, background);
  for (const auto& c : r.classes) {
    for (double phi : c.shapley) EXPECT_EQ(phi, 0.0);
    EXPECT_EQ(c.background_mean, flat.layers[flat.head_boundary].params[1].value[c.cls]);
  }
  EXPECT_EQ(kind_of([&] { (void)background_expected_values(flat, std::span<const Tensor>{}); }), ErrorKind::EmptySet);
}

TEST(PixelMap, SumsBackToSuperpixelValues) {
  const SuperpixelPartition part = grid_partition(7, 9, 2, 3);
  std::vector<double> phi = {1.0, -2.5, 0.3, 4.0, 0.0, -1.0};
  const Tensor map = pixel_map(phi, part);
  EXPECT_EQ(map.shape(), (Shape{7, 9}));
  std::vector<double> back(6, 0.0);
  for (std::size_t y = 0; y < 7; ++y)
    for (std::size_t x = 0; x < 9; ++x) back[part.id(y, x)] += map[y * 9 + x];
  for (std::size_t i = 0; i < 6; ++i) EXPECT_NEAR(back[i], phi[i], 1e-9);
}

TEST(FgBg, HandExample) {
  const Tensor map(Shape{2, 2}, std::vector<double>{1, -2, 3, 0});
  const SegmentationMask mask = rasterize({{{0, 0}, {1, 0}, {1, 2}, {0, 2}}}, 2, 2);
  const FgBgRow row = quantify_fg_bg(map, mask, "s");
  EXPECT_EQ(row.foreground.pos, 4.0);
  EXPECT_EQ(row.foreground.neg, 0.0);
  EXPECT_EQ(row.foreground.diff(), 4.0);
  EXPECT_EQ(row.background.pos, 0.0);
  EXPECT_EQ(row.background.neg, -2.0);
  EXPECT_EQ(row.background.diff(), -2.0);
}

TEST(FgBg, ConservationOnRandomMaps) {
  SplitMix64 rng(23);
  const SegmentationMask mask = rasterize({{{2, 1}, {9, 3}, {5, 10}}}, 12, 12);
  for (int trial = 0; trial < 100; ++trial) {
    const Tensor map = random_tensor(Shape{12, 12}, rng, -1, 1);
    const FgBgRow row = quantify_fg_bg(map, mask);
    double pos = 0, neg = 0;
    for (double v : map.data()) (v > 0 ? pos : neg) += v;
    EXPECT_NEAR(row.foreground.pos + row.background.pos, pos, 1e-12);
    EXPECT_NEAR(row.foreground.neg + row.background.neg, neg, 1e-12);
    EXPECT_GE(row.foreground.pos, 0.0);
    EXPECT_LE(row.background.neg, 0.0);
  }
  const Tensor positive(Shape{12, 12}, 0.5);
  EXPECT_EQ(quantify_fg_bg(positive, mask).foreground.neg, 0.0);
  EXPECT_EQ(quantify_fg_bg(positive, mask).background.neg, 0.0);
}

TEST(FgBg, Errors) {
  const SegmentationMask mask = rasterize({{{0, 0}, {1, 0}, {1, 2}, {0, 2}}}, 2, 2);
  EXPECT_EQ(kind_of([&] { (void)quantify_fg_bg(Tensor(Shape{3, 2}), mask); }), ErrorKind::DimMismatch);
  const SegmentationMask full = rasterize({{{0, 0}, {2, 0}, {2, 2}, {0, 2}}}, 2, 2);
  EXPECT_EQ(kind_of([&] { (void)quantify_fg_bg(Tensor(Shape{2, 2}), full); }), ErrorKind::InvalidMask);
}

TEST(Ratios, ReproducePublishedRows) {
  for (const auto& row : kShapTable) {
    EXPECT_EQ(row.tl_fg.pos + row.tl_fg.neg, row.tl_fg.diff) << row.name;
    EXPECT_EQ(row.kd_bg.pos + row.kd_bg.neg, row.kd_bg.diff) << row.name;
    const ContributionRatios r = contribution_ratios(row.tl_fg.diff, row.kd_fg.diff, row.tl_bg.diff, row.kd_bg.diff);
    ASSERT_TRUE(r.fg.defined && r.bg.defined && r.combined.defined);
    EXPECT_NEAR(r.fg.value, row.fg_ratio, 0.01) << row.name;
    EXPECT_NEAR(r.bg.value, row.bg_ratio, 0.01) << row.name;
    EXPECT_NEAR(r.combined.value, row.combined_ratio, 0.01) << row.name;
  }
}

TEST(Ratios, RowFormAndEdgeCases) {
  const FgBgRow tl{"x", {5, -2}, {1, -4}};
  const ContributionRatios same = contribution_ratios(tl, tl);
  EXPECT_EQ(same.fg.value, 1.0);
  EXPECT_EQ(same.bg.value, 1.0);
  EXPECT_EQ(same.combined.value, 1.0);
  const FgBgRow other{"y", {5, -2}, {1, -4}};
  EXPECT_EQ(kind_of([&] { (void)contribution_ratios(tl, other); }), ErrorKind::SampleMismatch);
  const ContributionRatios zero = contribution_ratios(1, 0, 0, 2);
  EXPECT_FALSE(zero.fg.defined);
  EXPECT_TRUE(zero.bg.defined);
  EXPECT_FALSE(zero.combined.defined);
  EXPECT_FALSE(safe_ratio(1, 0).defined);
}

TEST(Reports, JsonAndCsv) {
  AttributionReport r;
  r.players = 2;
  r.winning_class = 1;
  r.classes = {{1, 0.5, 1.5, 0.4, {0.25, 0.75}}};
  const std::string json = attribution_json(r, {"a", "b"});
  EXPECT_NE(json.find("\"winning_class\""), std::string::npos);
  EXPECT_NE(json.find("\"logits\""), std::string::npos);
  EXPECT_EQ(grid_csv(Tensor(Shape{2, 2}, std::vector<double>{1, 2, 3, 4})), "1,2\n3,4\n");
}
