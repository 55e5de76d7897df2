#include "dsf/data.hpp"

#include "support.hpp"

#include <doctest.h>

#include <fstream>

using namespace dsf;
namespace fs = std::filesystem;

namespace {

void write_gray(const fs::path& p, int h, int w, std::uint8_t v) {
  fs::create_directories(p.parent_path());
  Image8 img{w, h, 1, std::vector<std::uint8_t>(static_cast<std::size_t>(w * h), v)};
  write_png(p, img);
}

}  // namespace

TEST_SUITE("data") {
  TEST_CASE("scan pairs by base name") {
    const auto root = testing::temp_dir("scan");
    for (const char* id : {"b", "a"}) {
      write_gray(root / "ir" / (std::string(id) + ".png"), 4, 4, 10);
      write_gray(root / "vi" / (std::string(id) + ".png"), 4, 4, 20);
    }
    write_gray(root / "labels" / "a.png", 4, 4, 1);
    const auto refs = scan_dataset(root);
    REQUIRE(refs.size() == 2);
    CHECK(refs[0].id == "a");
    CHECK(refs[0].label.has_value());
    CHECK(refs[1].id == "b");
    CHECK_FALSE(refs[1].label.has_value());

    const auto orphan = testing::temp_dir("orphan");
    write_gray(orphan / "ir" / "a.png", 4, 4, 0);
    fs::create_directories(orphan / "vi");
    try {
      scan_dataset(orphan);
      FAIL("expected an error");
    } catch (const std::runtime_error& e) {
      CHECK(std::string(e.what()) == "missing visible for a");
    }
    CHECK_THROWS(scan_dataset(testing::temp_dir("empty")));
  }

  TEST_CASE("split layout and five-pair listing order") {
    const auto root = testing::temp_dir("msrs");
    for (const char* id : {"00537N", "00012D", "01034N", "00112D", "00003D"}) {
      write_gray(root / "train" / "ir" / (std::string(id) + ".png"), 4, 4, 0);
      write_gray(root / "train" / "vi" / (std::string(id) + ".png"), 4, 4, 0);
    }
    const auto refs = scan_dataset(root, Split::train);
    REQUIRE(refs.size() == 5);
    const std::vector<std::string> expected{"00003D", "00012D", "00112D", "00537N", "01034N"};
    for (std::size_t i = 0; i < 5; ++i) CHECK(refs[i].id == expected[i]);
  }

  TEST_CASE("load normalizes and checks shapes") {
    const auto root = testing::temp_dir("load");
    write_gray(root / "ir" / "x.png", 3, 5, 255);
    Image8 vi{5, 3, 3, std::vector<std::uint8_t>(45, 0)};
    fs::create_directories(root / "vi");
    write_png(root / "vi" / "x.png", vi);
    const auto pair = load_pair(scan_dataset(root)[0]);
    CHECK((pair.infrared == 1.0F).all());
    CHECK((pair.visible[1] == 0.0F).all());

    write_gray(root / "vi" / "x.png", 3, 4, 0);
    CHECK_THROWS_WITH(load_pair(scan_dataset(root)[0]), doctest::Contains("3x5x1 vs visible 3x4x1"));
  }

  TEST_CASE("three-channel infrared uses channel 0") {
    const auto root = testing::temp_dir("ir3");
    fs::create_directories(root / "ir");
    fs::create_directories(root / "vi");
    Image8 ir{2, 2, 3, {51, 0, 0, 51, 0, 0, 51, 0, 0, 51, 0, 0}};
    write_png(root / "ir" / "p.png", ir);
    write_gray(root / "vi" / "p.png", 2, 2, 0);
    CHECK((load_pair(scan_dataset(root)[0]).infrared == 0.2F).all());
  }

  TEST_CASE("load save load is idempotent") {
    std::mt19937_64 rng(3);
    auto pair = make_shapes_pair("s", rng);
    const auto dir = testing::temp_dir("roundtrip");
    save_pair(pair, dir);
    const auto once = load_pair(scan_dataset(dir)[0]);
    const auto dir2 = testing::temp_dir("roundtrip2");
    save_pair(once, dir2);
    const auto twice = load_pair(scan_dataset(dir2)[0]);
    CHECK((once.infrared == twice.infrared).all());
    for (std::size_t c = 0; c < 3; ++c) CHECK((once.visible[c] == twice.visible[c]).all());
    CHECK((*once.label == *twice.label).all());
    CHECK(((once.infrared - pair.infrared).abs() <= 0.5F / 255.0F + 1e-6F).all());
  }

  TEST_CASE("crop start positions") {
    CHECK(patch_starts(256, {256, 100}) == std::vector<int>{0});
    CHECK(patch_starts(448, {256, 100}) == std::vector<int>{0, 100, 192});
    CHECK(patch_starts(480, {256, 100}) == std::vector<int>{0, 100, 200, 224});
    CHECK(patch_starts(640, {256, 100}) == std::vector<int>{0, 100, 200, 300, 384});
    CHECK_THROWS_AS(patch_starts(200, {256, 100}), std::invalid_argument);
    CHECK_THROWS_AS(patch_starts(300, {256, 0}), std::invalid_argument);

    ImagePair big;
    big.id = "m";
    big.infrared = Raster::Zero(480, 640);
    for (auto& c : big.visible) c = Raster::Zero(480, 640);
    big.label = LabelRaster::Zero(480, 640);
    const auto patches = crop_patches(big, {});
    CHECK(patches.size() == 20);
    CHECK(patches.back().id == "m_r224_c384");
    CHECK(patches.back().label->rows() == 256);
  }

  TEST_CASE("crop footprints cover random images") {
    std::mt19937_64 rng(9);
    for (int k = 0; k < 30; ++k) {
      const int size = 8 + static_cast<int>(rng() % 24);
      const int stride = 1 + static_cast<int>(rng() % static_cast<unsigned>(size));
      const int h = size + static_cast<int>(rng() % 60);
      const int w = size + static_cast<int>(rng() % 60);
      const PatchGridSpec spec{size, stride};
      const auto rows = patch_starts(h, spec);
      const auto cols = patch_starts(w, spec);
      Eigen::ArrayXXi cover = Eigen::ArrayXXi::Zero(h, w);
      for (int r : rows) {
        for (int c : cols) cover.block(r, c, size, size) += 1;
      }
      CHECK((cover >= 1).all());
      std::size_t expected_rows = static_cast<std::size_t>((h - size) / stride + 1) + ((h - size) % stride != 0 ? 1 : 0);
      CHECK(rows.size() == expected_rows);
    }
  }

  TEST_CASE("luma chroma conversion") {
    std::array<Raster, 3> gray{Raster::Constant(2, 2, 0.4F), Raster::Constant(2, 2, 0.4F), Raster::Constant(2, 2, 0.4F)};
    const auto lc = to_luma_chroma(gray);
    CHECK(lc.y(0, 0) == doctest::Approx(0.4));
    CHECK(lc.cb(0, 0) == doctest::Approx(0.5));
    CHECK(lc.cr(0, 0) == doctest::Approx(0.5));
    std::array<Raster, 3> red{Raster::Ones(1, 1), Raster::Zero(1, 1), Raster::Zero(1, 1)};
    CHECK(to_luma_chroma(red).y(0, 0) == doctest::Approx(0.299));

    std::mt19937_64 rng(1);
    std::array<Raster, 3> rgb;
    for (auto& c : rgb) c = testing::random_raster(rng, 16, 16).cast<float>();
    const auto d = to_luma_chroma(rgb);
    const auto back = recombine(d.y, d.cb, d.cr);
    for (std::size_t c = 0; c < 3; ++c) CHECK(((back[c] - rgb[c]).abs() <= 1.0F / 255.0F).all());
    const auto again = to_luma_chroma(back);
    CHECK(((again.y - d.y).abs() <= 1.0F / 255.0F).all());
  }

  TEST_CASE("reflect padding to a multiple") {
    Raster r(3, 5);
    for (int i = 0; i < 15; ++i) r.data()[i] = static_cast<float>(i);
    const Raster p = pad_reflect(r, 4);
    CHECK(p.rows() == 4);
    CHECK(p.cols() == 8);
    CHECK((p.topLeftCorner(3, 5) == r).all());
    CHECK(p(3, 0) == r(1, 0));
    CHECK(p(0, 5) == r(0, 3));
    CHECK(p(0, 7) == r(0, 1));
    CHECK(pad_reflect(Raster(Raster::Zero(16, 32)), 16).rows() == 16);
  }

  TEST_CASE("holdout split is seeded and disjoint") {
    const auto a = holdout_split(50, 0.1, 7);
    const auto b = holdout_split(50, 0.1, 7);
    CHECK(a.validation == b.validation);
    CHECK(a.validation.size() == 5);
    CHECK(a.train.size() == 45);
    std::vector<std::size_t> all = a.train;
    all.insert(all.end(), a.validation.begin(), a.validation.end());
    std::sort(all.begin(), all.end());
    for (std::size_t i = 0; i < 50; ++i) CHECK(all[i] == i);
    CHECK(holdout_split(50, 0.1, 8).validation != a.validation);
    CHECK(holdout_split(1, 0.1, 0).validation.empty());
  }

  TEST_CASE("training samples need labels") {
    const auto root = testing::temp_dir("nolabel");
    write_gray(root / "ir" / "a.png", 16, 16, 0);
    write_gray(root / "vi" / "a.png", 16, 16, 0);
    CHECK_THROWS_WITH(prepare_samples(scan_dataset(root), {16, 16}, 2), doctest::Contains("missing labels"));
    write_gray(root / "labels" / "a.png", 16, 16, 1);
    CHECK(prepare_samples(scan_dataset(root), {16, 16}, 2).size() == 1);
    write_gray(root / "labels" / "a.png", 16, 16, 7);
    CHECK_THROWS(prepare_samples(scan_dataset(root), {16, 16}, 2));
  }

  TEST_CASE("synthetic shapes are two-class and in range") {
    std::mt19937_64 rng(5);
    const auto p = make_shapes_pair("s", rng);
    p.validate(2);
    CHECK((p.label.value() == 1).any());
    CHECK((p.label.value() == 0).any());
  }
}
