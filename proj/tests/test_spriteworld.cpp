#include <gtest/gtest.h>

#include <cmath>
#include <cstdio>

#include "slt/spriteworld.hpp"

using namespace slt;

TEST(World, ReflectionOracle) {
  Scene s;
  Sprite sp{};
  sp.u = 0.9;
  sp.du = 0.2;
  sp.v = 0.5;
  sp.dv = 0.0;
  s.sprites.push_back(sp);
  step_scene(s);  // 1.1 reflects off the right wall
  EXPECT_NEAR(s.sprites[0].u, 0.9, 1e-12);
  EXPECT_NEAR(s.sprites[0].du, -0.2, 1e-12);

  s.sprites[0].u = 0.05;
  s.sprites[0].du = -0.2;
  step_scene(s);  // -0.15 reflects off the left wall
  EXPECT_NEAR(s.sprites[0].u, 0.15, 1e-12);
  EXPECT_NEAR(s.sprites[0].du, 0.2, 1e-12);
}

TEST(World, BouncePreservesSpeedAndStaysInBounds) {
  Rng rng(101);
  WorldConfig cfg;
  cfg.speed_min = 0.0;
  cfg.speed_max = 0.2;
  for (int trial = 0; trial < 20; ++trial) {
    Scene s = make_scene(rng, cfg);
    std::vector<double> speeds;
    for (const auto& sp : s.sprites)
      speeds.push_back(std::hypot(sp.du, sp.dv));
    for (int t = 0; t < 50; ++t) {
      step_scene(s);
      for (size_t i = 0; i < s.sprites.size(); ++i) {
        const auto& sp = s.sprites[i];
        EXPECT_GE(sp.u, 0.0);
        EXPECT_LT(sp.u, 1.0);
        EXPECT_GE(sp.v, 0.0);
        EXPECT_LT(sp.v, 1.0);
        EXPECT_NEAR(std::hypot(sp.du, sp.dv), speeds[i], 1e-9);
      }
    }
  }
}

TEST(World, GridCellExample) {
  EXPECT_EQ(grid_cell_of(0.7, 0.2, 6), 10);  // row 1, col 4
  EXPECT_EQ(grid_cell_of(0.0, 0.0, 6), 0);
  EXPECT_EQ(grid_cell_of(0.999999, 0.999999, 6), 35);
}

TEST(World, DirectionClasses) {
  EXPECT_EQ(direction_class(1.0, 0.0), 0);
  EXPECT_EQ(direction_class(1.0, 1.0), 1);
  EXPECT_EQ(direction_class(0.0, 1.0), 2);
  EXPECT_EQ(direction_class(-1.0, 0.0), 4);
  EXPECT_EQ(direction_class(0.0, -1.0), 6);
  EXPECT_EQ(direction_class(1.0, -1.0), 7);
  EXPECT_EQ(direction_class(0.0, 0.0), 8);  // stationary
}

TEST(World, ZeroSpeedRangeGivesStationaryAction) {
  WorldConfig cfg;
  cfg.speed_min = 0.0;
  cfg.speed_max = 0.0;
  Rng rng(5);
  auto ex = make_sequence(rng, cfg);
  EXPECT_EQ(ex.action, 8);
  // frames are all identical: nothing moves
  size_t frame = static_cast<size_t>(cfg.h * cfg.w * 3);
  for (int64_t t = 1; t < cfg.t; ++t)
    for (size_t i = 0; i < frame; ++i)
      ASSERT_EQ(ex.pixels[i], ex.pixels[static_cast<size_t>(t) * frame + i]);
}

TEST(World, RenderCenterAndBackground) {
  Scene s;
  Sprite sp{};
  sp.shape = SpriteShape::Circle;
  sp.r = 1.0;
  sp.g = 0.84;
  sp.b = 0.10;
  sp.u = 0.5;
  sp.v = 0.5;
  sp.size = 0.1;
  s.sprites.push_back(sp);
  auto img = render_frame(s, 16, 16);
  size_t center = (8 * 16 + 8) * 3;
  EXPECT_DOUBLE_EQ(img[center], 1.0);
  EXPECT_DOUBLE_EQ(img[center + 1], 0.84);
  EXPECT_DOUBLE_EQ(img[0], kBackgroundGray);  // corner untouched
  EXPECT_DOUBLE_EQ(img[2], kBackgroundGray);
}

TEST(World, LaterSpritesOccludeTheSnitch) {
  Scene s;
  Sprite snitch{};
  snitch.shape = SpriteShape::Circle;
  snitch.r = 1.0;
  snitch.g = 0.84;
  snitch.b = 0.1;
  snitch.u = snitch.v = 0.5;
  snitch.size = 0.2;
  Sprite blocker = snitch;
  blocker.shape = SpriteShape::Square;
  blocker.r = 0.1;
  blocker.g = 0.2;
  blocker.b = 0.9;
  s.sprites.push_back(snitch);
  s.sprites.push_back(blocker);
  auto img = render_frame(s, 16, 16);
  size_t center = (8 * 16 + 8) * 3;
  EXPECT_DOUBLE_EQ(img[center], 0.1);  // blocker wins the overlap
  EXPECT_DOUBLE_EQ(img[center + 2], 0.9);
}

TEST(World, TriangleContainment) {
  Sprite tri{};
  tri.shape = SpriteShape::Triangle;
  tri.u = 0.5;
  tri.v = 0.5;
  tri.size = 0.3;
  EXPECT_TRUE(world_detail::inside(tri, 0.5, 0.5));
  EXPECT_TRUE(world_detail::inside(tri, 0.5, 0.25));   // near apex
  EXPECT_FALSE(world_detail::inside(tri, 0.3, 0.3));   // above-left of edge
  EXPECT_FALSE(world_detail::inside(tri, 0.5, 0.9));   // below base
}

TEST(World, QuantizationErrorBounded) {
  WorldConfig cfg;
  Rng rng(77);
  Scene scene = make_scene(rng, cfg);
  auto img = render_frame(scene, cfg.h, cfg.w);
  for (double p : img) {
    auto byte = static_cast<uint8_t>(std::lround(255.0 * p));
    double back = static_cast<double>(byte) / 255.0;
    EXPECT_LE(std::abs(back - p), 1.0 / 510.0 + 1e-12);
  }
}

TEST(World, DatasetDeterministicBySeed) {
  WorldConfig cfg;
  auto d1 = generate_dataset(cfg, 5, 99);
  auto d2 = generate_dataset(cfg, 5, 99);
  auto d3 = generate_dataset(cfg, 5, 100);
  ASSERT_EQ(d1.size(), 5);
  bool any_diff = false;
  for (int i = 0; i < 5; ++i) {
    EXPECT_EQ(d1.seqs[static_cast<size_t>(i)].pixels,
              d2.seqs[static_cast<size_t>(i)].pixels);
    EXPECT_EQ(d1.seqs[static_cast<size_t>(i)].grid_cell,
              d2.seqs[static_cast<size_t>(i)].grid_cell);
    if (d1.seqs[static_cast<size_t>(i)].pixels !=
        d3.seqs[static_cast<size_t>(i)].pixels)
      any_diff = true;
  }
  EXPECT_TRUE(any_diff);
}

TEST(World, LabelsInRange) {
  WorldConfig cfg;
  cfg.objects_min = 1;
  cfg.objects_max = 5;
  auto ds = generate_dataset(cfg, 50, 1234);
  for (const auto& s : ds.seqs) {
    EXPECT_LT(s.grid_cell, cfg.grid * cfg.grid);
    EXPECT_LT(s.action, kActionClasses);
  }
}

TEST(World, FileRoundTripBitExact) {
  WorldConfig cfg;
  cfg.t = 3;
  cfg.h = 8;
  cfg.w = 8;
  auto ds = generate_dataset(cfg, 4, 31337);
  std::string path = testing::TempDir() + "roundtrip.sltv";
  write_dataset(path, ds);
  auto rd = read_dataset(path);
  EXPECT_EQ(rd.t, ds.t);
  EXPECT_EQ(rd.h, ds.h);
  EXPECT_EQ(rd.w, ds.w);
  EXPECT_EQ(rd.grid, ds.grid);
  EXPECT_EQ(rd.actions, ds.actions);
  EXPECT_EQ(rd.seed, ds.seed);
  ASSERT_EQ(rd.size(), ds.size());
  for (int i = 0; i < ds.size(); ++i) {
    EXPECT_EQ(rd.seqs[static_cast<size_t>(i)].pixels,
              ds.seqs[static_cast<size_t>(i)].pixels);
    EXPECT_EQ(rd.seqs[static_cast<size_t>(i)].grid_cell,
              ds.seqs[static_cast<size_t>(i)].grid_cell);
    EXPECT_EQ(rd.seqs[static_cast<size_t>(i)].action,
              ds.seqs[static_cast<size_t>(i)].action);
  }
  std::remove(path.c_str());
}

TEST(World, ReaderRejectsBadFiles) {
  std::string path = testing::TempDir() + "bad.sltv";
  {
    FILE* f = fopen(path.c_str(), "wb");
    fwrite("NOPE", 1, 4, f);
    fclose(f);
  }
  EXPECT_THROW(read_dataset(path), slt::Error);
  {
    // right magic, truncated header
    FILE* f = fopen(path.c_str(), "wb");
    fwrite("SLTV", 1, 4, f);
    fclose(f);
  }
  EXPECT_THROW(read_dataset(path), slt::Error);
  {
    // truncated payload: claims 2 sequences, provides none
    WorldConfig cfg;
    cfg.t = 2;
    cfg.h = 4;
    cfg.w = 4;
    auto ds = generate_dataset(cfg, 1, 1);
    write_dataset(path, ds);
    FILE* f = fopen(path.c_str(), "rb+");
    fseek(f, 8, SEEK_SET);
    world_detail::put_u32(f, 2);  // lie about N
    fclose(f);
  }
  EXPECT_THROW(read_dataset(path), slt::Error);
  EXPECT_THROW(read_dataset("/nonexistent/file.sltv"), slt::Error);
  std::remove(path.c_str());
}

TEST(World, SequenceToTensorShapeAndRange) {
  WorldConfig cfg;
  cfg.t = 4;
  cfg.h = 12;
  cfg.w = 10;
  auto ds = generate_dataset(cfg, 2, 5);
  auto x = sequence_to_tensor<float>(ds, 1);
  EXPECT_EQ(x.shape(), (Shape{4, 12, 10, 3}));
  for (float v : x.data()) {
    EXPECT_GE(v, 0.0f);
    EXPECT_LE(v, 1.0f);
  }
  EXPECT_THROW(sequence_to_tensor<float>(ds, 2), slt::Error);
}

// Frozen trace for seed 7 under the default world config.  Values were
// verified against the dynamics by hand (sprite 1 enters the right wall on
// step 1: 0.97580653 + 0.02854335 = 1.00434988 -> 2 - 1.00434988) before
// being pinned here; any change to generation order, palette, or the bounce
// law will show up as a diff.
TEST(World, GoldenTraceSeed7) {
  WorldConfig cfg;
  Rng rng(7);
  Scene s = make_scene(rng, cfg);
  ASSERT_EQ(s.sprites.size(), 2u);
  EXPECT_EQ(s.sprites[0].shape, SpriteShape::Circle);
  EXPECT_NEAR(s.sprites[0].u, 0.79123150565252476, 1e-15);
  EXPECT_NEAR(s.sprites[0].v, 0.22486844557629526, 1e-15);
  EXPECT_NEAR(s.sprites[0].du, -0.013303688451298378, 1e-15);
  EXPECT_NEAR(s.sprites[0].dv, -0.0024580929010518718, 1e-15);
  EXPECT_NEAR(s.sprites[1].u, 0.97580653347335411, 1e-15);
  EXPECT_NEAR(s.sprites[1].du, 0.028543345849451521, 1e-15);
  step_scene(s);
  // sprite 1 bounced off the right wall
  EXPECT_NEAR(s.sprites[1].u, 0.99565012067719438, 1e-15);
  EXPECT_NEAR(s.sprites[1].du, -0.028543345849451521, 1e-15);
  step_scene(s);
  step_scene(s);
  EXPECT_NEAR(s.sprites[0].u, 0.75132044029862965, 1e-15);
  EXPECT_NEAR(s.sprites[1].v, 0.188402914222014, 1e-14);

  Rng r2(7);
  auto ex = make_sequence(r2, cfg);
  EXPECT_EQ(ex.grid_cell, 10);
  EXPECT_EQ(ex.action, 4);
  EXPECT_EQ(ex.pixels[0], 77);  // background gray, round(0.3 * 255)
  uint64_t h = 1469598103934665603ULL;
  for (auto b : ex.pixels) {
    h ^= b;
    h *= 1099511628211ULL;
  }
  EXPECT_EQ(h, 11237212857248417569ULL);
}
