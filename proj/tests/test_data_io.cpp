// Copyright 2026 The MLFF-Net Authors
// SPDX-License-Identifier: Apache-2.0

#include <unistd.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>

#include "doctest.h"
#include "mlff/data_io.hpp"
#include "support.hpp"

using namespace mlff;
namespace fs = std::filesystem;

namespace {

// Fresh scratch directory per test case, removed on destruction.
struct TempDir {
  fs::path path;
  TempDir() {
    static int counter = 0;
    path = fs::temp_directory_path() /
           ("mlff_io_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
};

io::Image8 gray(int h, int w, std::vector<std::uint8_t> v) { return {h, w, 1, std::move(v)}; }

io::Image8 random_rgb(int h, int w, std::mt19937_64& gen) {
  std::uniform_int_distribution<int> d(0, 255);
  io::Image8 img{h, w, 3, std::vector<std::uint8_t>(static_cast<std::size_t>(h) * w * 3)};
  for (auto& b : img.data) {
    b = static_cast<std::uint8_t>(d(gen));
  }
  return img;
}

void write_text(const fs::path& p, const std::string& s) {
  std::ofstream out(p, std::ios::binary);
  out << s;
}

double foreground_fraction(const Tensor& mask) {
  double s = 0;
  for (const Scalar v : mask.to_vector()) {
    s += v;
  }
  return s / static_cast<double>(mask.numel());
}

}  // namespace

TEST_SUITE("data_io") {

TEST_CASE("mask binarization threshold") {
  const Tensor m = io::mask_to_tensor(gray(1, 4, {255, 0, 127, 128}));
  CHECK(m.to_vector() == std::vector<Scalar>{1, 0, 0, 1});
  const io::Image8 rgb{1, 2, 3, {128, 128, 128, 10, 20, 30}};
  CHECK(io::mask_to_tensor(rgb).to_vector() == std::vector<Scalar>{1, 0});
}

TEST_CASE("image tensor conversion") {
  const Tensor t = io::image_to_tensor(gray(1, 2, {0, 255}));
  CHECK(t.shape() == Shape{1, 3, 1, 2});
  CHECK(t.at(0, 2, 0, 1) == 1);
  std::mt19937_64 gen(1);
  const io::Image8 rgb = random_rgb(3, 5, gen);
  const Tensor x = io::image_to_tensor(rgb);
  CHECK(x.at(0, 1, 2, 4) == rgb.data[(2 * 5 + 4) * 3 + 1] / Scalar(255));
  const io::Image8 back = io::tensor_to_image(x);
  CHECK(back.channels == 3);
  CHECK(back.data == rgb.data);
}

TEST_CASE("nearest resize of a checkerboard keeps block corners") {
  std::vector<std::uint8_t> v(16);
  for (int y = 0; y < 4; ++y) {
    for (int x = 0; x < 4; ++x) {
      v[static_cast<std::size_t>(y * 4 + x)] = static_cast<std::uint8_t>(y * 4 + x);
    }
  }
  const io::Image8 r = io::resize_nearest(gray(4, 4, v), 2, 2);
  CHECK(r.data == std::vector<std::uint8_t>{0, 2, 8, 10});

  std::vector<std::uint8_t> cb(16);
  for (int y = 0; y < 4; ++y) {
    for (int x = 0; x < 4; ++x) {
      cb[static_cast<std::size_t>(y * 4 + x)] = (x + y) % 2 == 0 ? 255 : 0;
    }
  }
  CHECK(io::resize_nearest(gray(4, 4, cb), 2, 2).data == std::vector<std::uint8_t>{255, 255, 255, 255});
  // Upsampling repeats source pixels.
  CHECK(io::resize_nearest(gray(1, 2, {7, 9}), 1, 5).data ==
        std::vector<std::uint8_t>{7, 7, 7, 9, 9});
}

TEST_CASE("bilinear resize") {
  const Tensor c = Tensor::full(Shape{1, 3, 5, 7}, 0.375);
  for (const Scalar v : io::resize_bilinear(c, 9, 4).to_vector()) {
    CHECK(v == doctest::Approx(0.375).epsilon(1e-15));
  }
  std::mt19937_64 gen(2);
  const Tensor r = test::random_tensor(Shape{1, 3, 4, 6}, gen, 0, 1);
  CHECK(io::resize_bilinear(r, 4, 6).to_vector() == r.to_vector());
  // 2x downsample with half-pixel centres averages each 2x2 block.
  const Tensor q(Shape{1, 1, 2, 4}, {0, 2, 4, 6, 8, 10, 12, 14});
  const Tensor d = io::resize_bilinear(q, 1, 2);
  CHECK(d.at(0, 0, 0, 0) == doctest::Approx(5).epsilon(1e-15));
  CHECK(d.at(0, 0, 0, 1) == doctest::Approx(9).epsilon(1e-15));
}

TEST_CASE("load_sample with native and explicit sizes") {
  TempDir tmp;
  std::mt19937_64 gen(3);
  const io::Image8 img = random_rgb(6, 10, gen);
  std::vector<std::uint8_t> mv(60);
  for (std::size_t i = 0; i < mv.size(); ++i) {
    mv[i] = static_cast<std::uint8_t>((i * 37) % 256);
  }
  io::write_image(img, tmp.path / "a.ppm");
  io::write_image(gray(6, 10, mv), tmp.path / "a_mask.pgm");

  const io::Sample s = io::load_sample(tmp.path / "a.ppm", tmp.path / "a_mask.pgm", 0, 0);
  CHECK(s.id == "a");
  CHECK(s.image.to_vector() == io::image_to_tensor(img).to_vector());
  for (std::size_t i = 0; i < mv.size(); ++i) {
    CHECK(s.mask.data()[i] == (mv[i] >= 128 ? 1 : 0));
  }
  const io::Sample same = io::load_sample(tmp.path / "a.ppm", tmp.path / "a_mask.pgm", 6, 10);
  CHECK(same.image.to_vector() == s.image.to_vector());

  const io::Sample big = io::load_sample(tmp.path / "a.ppm", tmp.path / "a_mask.pgm", 32, 64);
  CHECK(big.image.shape() == Shape{1, 3, 32, 64});
  CHECK(big.mask.shape() == Shape{1, 1, 32, 64});
  CHECK_NOTHROW(big.validate());

  try {
    io::load_sample(tmp.path / "missing.ppm", tmp.path / "a_mask.pgm", 0, 0);
    FAIL("expected an I/O error");
  } catch (const IoError& e) {
    CHECK(std::string(e.what()).find("missing.ppm") != std::string::npos);
  }
}

TEST_CASE("netpbm variants and malformed files") {
  TempDir tmp;
  write_text(tmp.path / "g.pgm", "P2\n# comment\n3 1\n255\n0 128 255\n");
  const io::Image8 g = io::read_image(tmp.path / "g.pgm");
  CHECK(g.channels == 1);
  CHECK(g.data == std::vector<std::uint8_t>{0, 128, 255});
  write_text(tmp.path / "c.ppm", "P3 1 1 255 10 20 30");
  const io::Image8 c = io::read_image(tmp.path / "c.ppm");
  CHECK(c.channels == 3);
  CHECK(c.data == std::vector<std::uint8_t>{10, 20, 30});
  write_text(tmp.path / "m.pgm", "P2 2 1 15 0 15");
  CHECK(io::read_image(tmp.path / "m.pgm").data == std::vector<std::uint8_t>{0, 255});

  write_text(tmp.path / "bad.pgm", "P5\n4 4\n255\nxy");
  CHECK_THROWS_AS(io::read_image(tmp.path / "bad.pgm"), IoError);
  write_text(tmp.path / "junk.pgm", "hello");
  CHECK_THROWS_AS(io::read_image(tmp.path / "junk.pgm"), IoError);
  CHECK_THROWS_AS(io::read_image(tmp.path / "nope.pgm"), IoError);
}

TEST_CASE("write_mask quantization and round trips") {
  TempDir tmp;
  const Tensor p(Shape{1, 1, 1, 4}, {1.0, 0.5, 0.0, 0.2});
  io::write_mask(p, tmp.path / "p.pgm");
  const io::Image8 r = io::read_image(tmp.path / "p.pgm");
  CHECK(r.data == std::vector<std::uint8_t>{255, 128, 0, 51});

  std::mt19937_64 gen(4);
  const Tensor rp = test::random_tensor(Shape{1, 1, 7, 9}, gen, 0, 1);
  io::write_mask(rp, tmp.path / "rp.pgm");
  const io::Image8 back = io::read_image(tmp.path / "rp.pgm");
  const auto v = rp.to_vector();
  for (std::size_t i = 0; i < v.size(); ++i) {
    CHECK(std::abs(back.data[i] / 255.0 - v[i]) <= 1.0 / 255);
  }

  // Binary mask: load -> write -> load is exact.
  std::vector<std::uint8_t> mv(63);
  for (std::size_t i = 0; i < mv.size(); ++i) {
    mv[i] = i % 3 == 0 ? 255 : 0;
  }
  io::write_image(gray(7, 9, mv), tmp.path / "m.pgm");
  const Tensor m1 = io::mask_to_tensor(io::read_image(tmp.path / "m.pgm"));
  io::write_mask(m1, tmp.path / "m2.pgm");
  const Tensor m2 = io::mask_to_tensor(io::read_image(tmp.path / "m2.pgm"));
  CHECK(m1.to_vector() == m2.to_vector());

  CHECK_THROWS_AS(io::write_mask(Tensor::full(Shape{1, 1, 2, 2}, 1.5), tmp.path / "x.pgm"),
                  ContractError);
  CHECK_THROWS_AS(io::write_mask(p, tmp.path / "no_such_dir" / "x.pgm"), IoError);
}

TEST_CASE("png round trip when available") {
  TempDir tmp;
  std::mt19937_64 gen(5);
  const io::Image8 img = random_rgb(5, 4, gen);
  if (!io::png_supported()) {
    CHECK_THROWS_AS(io::write_image(img, tmp.path / "a.png"), IoError);
    return;
  }
  io::write_image(img, tmp.path / "a.png");
  const io::Image8 back = io::read_image(tmp.path / "a.png");
  CHECK(back.channels == 3);
  CHECK(back.data == img.data);
  io::write_image(gray(1, 3, {0, 127, 128}), tmp.path / "m.png");
  CHECK(io::mask_to_tensor(io::read_image(tmp.path / "m.png")).to_vector() ==
        std::vector<Scalar>{0, 0, 1});
}

TEST_CASE("sample invariants") {
  const Tensor img = Tensor::full(Shape{1, 3, 2, 2}, 0.5);
  CHECK_NOTHROW(io::make_sample(img, Tensor::zeros(Shape{1, 1, 2, 2}), "ok"));
  CHECK_THROWS_AS(io::make_sample(img, Tensor::full(Shape{1, 1, 2, 2}, 0.5), "x"), ContractError);
  CHECK_THROWS_AS(io::make_sample(img, Tensor::zeros(Shape{1, 1, 2, 3}), "x"), ContractError);
  CHECK_THROWS_AS(io::make_sample(Tensor::full(Shape{1, 3, 2, 2}, 2), Tensor::zeros(Shape{1, 1, 2, 2}),
                                  "x"),
                  ContractError);
}

TEST_CASE("synthetic generator") {
  const auto a = io::synth_generate(7, 4, 64, 64);
  const auto b = io::synth_generate(7, 4, 64, 64);
  REQUIRE(a.size() == 4);
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].image.to_vector() == b[i].image.to_vector());
    CHECK(a[i].mask.to_vector() == b[i].mask.to_vector());
    CHECK(a[i].id == b[i].id);
    CHECK(foreground_fraction(a[i].mask) > 0);
    CHECK_NOTHROW(a[i].validate());
    for (const Scalar v : a[i].image.to_vector()) {
      CHECK(std::abs(v * 255 - std::round(v * 255)) <= 1e-9);
    }
  }
  const auto c = io::synth_generate(8, 4, 64, 64);
  CHECK(c[0].image.to_vector() != a[0].image.to_vector());

  const auto wide = io::synth_generate(1, 1, 32, 96);
  CHECK(wide[0].image.shape() == Shape{1, 3, 32, 96});

  CHECK_THROWS_AS(io::synth_generate(0, 1, 48, 64), ConfigError);
  CHECK_THROWS_AS(io::synth_generate(0, 0, 64, 64), ContractError);
}

TEST_CASE("synthetic foreground fraction over 100 seeds") {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    for (const io::Sample& s : io::synth_generate(seed, 2, 64, 64)) {
      const double f = foreground_fraction(s.mask);
      CHECK(f >= 0.02);
      CHECK(f <= 0.4);
    }
  }
}

TEST_CASE("manifest parsing") {
  TempDir tmp;
  fs::create_directories(tmp.path / "img");
  write_text(tmp.path / "list.tsv",
             "# a comment\n# name: CVC-300\n\nimg/a.png\tmask/a.png\n  img/b.png\tmask/b.png  \n");
  CHECK_THROWS_AS(io::read_manifest(tmp.path / "list.tsv"), ContractError);  // 60 implied

  write_text(tmp.path / "list.tsv",
             "# name: CVC-300\n# expected_count: 2\nimg/a.png\tmask/a.png\n/abs/b.png\tmask/b.png\n");
  const io::Manifest m = io::read_manifest(tmp.path / "list.tsv");
  CHECK(m.name == "CVC-300");
  CHECK(m.expected_count == 2);
  REQUIRE(m.entries.size() == 2);
  CHECK(m.entries[0].first == tmp.path / "img/a.png");
  CHECK(m.entries[1].first == fs::path("/abs/b.png"));

  write_text(tmp.path / "plain.tsv", "a.ppm\ta.pgm\n");
  const io::Manifest p = io::read_manifest(tmp.path / "plain.tsv");
  CHECK(p.name == "plain");
  CHECK_FALSE(p.expected_count.has_value());

  write_text(tmp.path / "dup.tsv", "a.ppm\ta.pgm\na.ppm\tb.pgm\n");
  CHECK_THROWS_AS(io::read_manifest(tmp.path / "dup.tsv"), ContractError);
  write_text(tmp.path / "cols.tsv", "a.ppm b.pgm\n");
  CHECK_THROWS_AS(io::read_manifest(tmp.path / "cols.tsv"), ContractError);
  CHECK_THROWS_AS(io::read_manifest(tmp.path / "absent.tsv"), IoError);

  CHECK(io::known_corpus_count("Kvasir") == 1000);
  CHECK(io::known_corpus_count("CVC-ClinicDB") == 612);
  CHECK(io::known_corpus_count("CVC-ColonDB") == 380);
  CHECK(io::known_corpus_count("ETIS") == 196);
  CHECK(io::known_corpus_count("CVC-300") == 60);
  CHECK_FALSE(io::known_corpus_count("other").has_value());

  io::Manifest w;
  w.name = "mine";
  w.expected_count = 1;
  w.entries.emplace_back(tmp.path / "x.ppm", tmp.path / "x.pgm");
  io::write_manifest(w, tmp.path / "w.tsv");
  const io::Manifest wr = io::read_manifest(tmp.path / "w.tsv");
  CHECK(wr.name == "mine");
  CHECK(wr.entries == w.entries);
}

TEST_CASE("saved dataset reloads identically") {
  TempDir tmp;
  const auto data = io::synth_generate(11, 3, 32, 64);
  const fs::path manifest = io::save_dataset(data, tmp.path / "set", "toy");
  CHECK(manifest.filename() == "manifest.tsv");
  const auto back = io::load_manifest(manifest, 0, 0);
  REQUIRE(back.size() == data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    CHECK(back[i].id == data[i].id);
    CHECK(back[i].image.to_vector() == data[i].image.to_vector());
    CHECK(back[i].mask.to_vector() == data[i].mask.to_vector());
  }
  CHECK(io::read_manifest(manifest).expected_count == 3);

  // Entries are stored relative to the manifest, so the directory can move.
  std::ifstream text(manifest);
  const std::string body((std::istreambuf_iterator<char>(text)), {});
  CHECK(body.find(tmp.path.string()) == std::string::npos);
  fs::rename(tmp.path / "set", tmp.path / "moved");
  const auto moved = io::load_manifest(tmp.path / "moved" / "manifest.tsv", 0, 0);
  REQUIRE(moved.size() == data.size());
  CHECK(moved[1].image.to_vector() == data[1].image.to_vector());

  const auto [images, masks] = io::stack_batch(data, {2, 0});
  CHECK(images.shape() == Shape{2, 3, 32, 64});
  CHECK(masks.shape() == Shape{2, 1, 32, 64});
  CHECK(images.at(1, 2, 5, 7) == data[0].image.at(0, 2, 5, 7));
  CHECK(masks.at(0, 0, 9, 3) == data[2].mask.at(0, 0, 9, 3));
  CHECK_THROWS_AS(io::stack_batch(data, {}), ContractError);
}

}  // TEST_SUITE
