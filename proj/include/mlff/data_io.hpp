// Copyright 2026 The MLFF-Net Authors
// SPDX-License-Identifier: Apache-2.0
//
// Image and mask files (binary/ASCII PGM and PPM, PNG when built with libpng),
// resizing, dataset manifests and the synthetic polyp generator.

#ifndef MLFF_DATA_IO_HPP
#define MLFF_DATA_IO_HPP

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "mlff/tensor.hpp"

namespace mlff::io {

inline constexpr int kMaskThreshold = 128;

/// 8-bit raster, channels interleaved per pixel.
struct Image8 {
  int h = 0;
  int w = 0;
  int channels = 0;  // 1 or 3
  std::vector<std::uint8_t> data;
};

/// Format chosen from the file signature; IoError on a missing or malformed file.
Image8 read_image(const std::filesystem::path& path);
/// PNG for a ".png" extension, binary PGM / PPM otherwise.
void write_image(const Image8& img, const std::filesystem::path& path);
bool png_supported();

struct Sample {
  Tensor image;  // [1,3,H,W] in [0,1]
  Tensor mask;   // [1,1,H,W] in {0,1}
  std::string id;

  /// Throws ContractError unless the invariants above hold.
  void validate() const;
};

Sample make_sample(Tensor image, Tensor mask, std::string id);

/// Half-pixel-centered bilinear resize of a [n,c,h,w] tensor (no tape).
Tensor resize_bilinear(const Tensor& x, int h, int w);
/// Nearest-neighbor resize with source index floor(dst * in / out).
Image8 resize_nearest(const Image8& img, int h, int w);

Tensor image_to_tensor(const Image8& img);       // [1,3,H,W], gray replicated
Tensor mask_to_tensor(const Image8& img);        // [1,1,H,W], value >= 128 -> 1
Image8 tensor_to_image(const Tensor& image);     // [1,3,H,W] or [1,1,H,W]

/// Image resized bilinearly, mask nearest-neighbor then binarized. A target
/// extent of 0 keeps the file's size.
Sample load_sample(const std::filesystem::path& image_path, const std::filesystem::path& mask_path,
                   int target_h, int target_w);

/// 8-bit gray map with value floor(p * 255 + 0.5). p must be [1,1,H,W] in [0,1].
void write_mask(const Tensor& mask_prob, const std::filesystem::path& path);

/// Deterministic per seed; H and W multiples of 32.
std::vector<Sample> synth_generate(std::uint64_t seed, int count, int h, int w);

struct Manifest {
  std::string name;
  std::vector<std::pair<std::filesystem::path, std::filesystem::path>> entries;
  std::optional<int> expected_count;

  void validate() const;
};

struct Corpus {
  std::string_view name;
  int count;
};

/// Image counts of the public colonoscopy corpora.
inline constexpr Corpus kKnownCorpora[] = {
    {"Kvasir", 1000}, {"CVC-ClinicDB", 612}, {"CVC-ColonDB", 380}, {"ETIS", 196}, {"CVC-300", 60}};

std::optional<int> known_corpus_count(std::string_view name);

/// Lines "image<TAB>mask"; '#' starts a comment. Directives "# name: <s>" and
/// "# expected_count: <n>". Relative paths resolve against the manifest's
/// directory. A known corpus name without a count directive implies its count.
Manifest read_manifest(const std::filesystem::path& path);
void write_manifest(const Manifest& m, const std::filesystem::path& path);

std::vector<Sample> load_manifest(const std::filesystem::path& path, int target_h, int target_w);

/// Writes <id>.ppm and <id>_mask.pgm per sample plus manifest.tsv; returns the
/// manifest path.
std::filesystem::path save_dataset(const std::vector<Sample>& samples,
                                   const std::filesystem::path& dir, const std::string& name);

/// Stacks the selected samples into an image batch [b,3,H,W] and mask batch
/// [b,1,H,W].
std::pair<Tensor, Tensor> stack_batch(const std::vector<Sample>& samples,
                                      const std::vector<std::size_t>& indices);

}  // namespace mlff::io

#endif  // MLFF_DATA_IO_HPP
