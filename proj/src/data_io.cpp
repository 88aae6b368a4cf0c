// Copyright 2026 The MLFF-Net Authors
// SPDX-License-Identifier: Apache-2.0

#include "mlff/data_io.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "mlff/nn.hpp"

#ifdef MLFF_HAVE_PNG
#include <png.h>
#endif

namespace mlff::io {

namespace fs = std::filesystem;

namespace {

std::string lower(std::string_view s) {
  std::string out(s);
  for (char& c : out) {
    c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  }
  return out;
}

std::string trim(std::string_view s) {
  std::size_t b = 0;
  std::size_t e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) {
    ++b;
  }
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) {
    --e;
  }
  return std::string(s.substr(b, e - b));
}

std::vector<char> read_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw IoError("cannot open '" + path.string() + "'");
  }
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// Netpbm header and raster reader for P2, P3, P5 and P6 with maxval <= 255.
class PnmReader {
 public:
  PnmReader(std::vector<char> bytes, const fs::path& path) : bytes_(std::move(bytes)), path_(path) {}

  Image8 read() {
    if (bytes_.size() < 2 || bytes_[0] != 'P') {
      fail("not a PGM/PPM file");
    }
    const char kind = bytes_[1];
    if (kind != '2' && kind != '3' && kind != '5' && kind != '6') {
      fail("unsupported netpbm type P" + std::string(1, kind));
    }
    pos_ = 2;
    Image8 img;
    img.channels = (kind == '3' || kind == '6') ? 3 : 1;
    img.w = static_cast<int>(number());
    img.h = static_cast<int>(number());
    const long maxval = number();
    if (img.w < 1 || img.h < 1 || maxval < 1 || maxval > 255) {
      fail("bad header (size or maxval)");
    }
    const std::size_t count = static_cast<std::size_t>(img.w) * img.h * img.channels;
    img.data.resize(count);
    const bool binary = kind == '5' || kind == '6';
    if (binary) {
      ++pos_;  // single whitespace after maxval
      if (bytes_.size() < pos_ + count) {
        fail("truncated raster");
      }
    }
    for (std::size_t i = 0; i < count; ++i) {
      long v = binary ? static_cast<unsigned char>(bytes_[pos_ + i]) : number();
      if (v > maxval) {
        fail("sample exceeds maxval");
      }
      if (maxval != 255) {
        v = (v * 255 + maxval / 2) / maxval;
      }
      img.data[i] = static_cast<std::uint8_t>(v);
    }
    return img;
  }

 private:
  [[noreturn]] void fail(const std::string& why) const {
    throw IoError("'" + path_.string() + "': " + why);
  }

  void skip_space() {
    while (pos_ < bytes_.size()) {
      const char c = bytes_[pos_];
      if (c == '#') {
        while (pos_ < bytes_.size() && bytes_[pos_] != '\n') {
          ++pos_;
        }
      } else if (std::isspace(static_cast<unsigned char>(c))) {
        ++pos_;
      } else {
        return;
      }
    }
  }

  long number() {
    skip_space();
    long v = 0;
    std::size_t digits = 0;
    while (pos_ < bytes_.size() && std::isdigit(static_cast<unsigned char>(bytes_[pos_]))) {
      v = v * 10 + (bytes_[pos_] - '0');
      ++pos_;
      if (++digits > 9) {
        fail("number too long");
      }
    }
    if (digits == 0) {
      fail("expected a number");
    }
    return v;
  }

  std::vector<char> bytes_;
  fs::path path_;
  std::size_t pos_ = 0;
};

#ifdef MLFF_HAVE_PNG
Image8 read_png(const fs::path& path) {
  png_image png{};
  png.version = PNG_IMAGE_VERSION;
  if (png_image_begin_read_from_file(&png, path.string().c_str()) == 0) {
    throw IoError("'" + path.string() + "': " + png.message);
  }
  const bool color = (png.format & PNG_FORMAT_FLAG_COLOR) != 0;
  png.format = color ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  Image8 img;
  img.h = static_cast<int>(png.height);
  img.w = static_cast<int>(png.width);
  img.channels = color ? 3 : 1;
  img.data.resize(PNG_IMAGE_SIZE(png));
  if (png_image_finish_read(&png, nullptr, img.data.data(), 0, nullptr) == 0) {
    throw IoError("'" + path.string() + "': " + png.message);
  }
  return img;
}

void write_png(const Image8& img, const fs::path& path) {
  png_image png{};
  png.version = PNG_IMAGE_VERSION;
  png.width = static_cast<png_uint_32>(img.w);
  png.height = static_cast<png_uint_32>(img.h);
  png.format = img.channels == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  if (png_image_write_to_file(&png, path.string().c_str(), 0, img.data.data(), 0, nullptr) == 0) {
    throw IoError("cannot write '" + path.string() + "': " + png.message);
  }
}
#endif

double smoothstep(double t) { return t * t * (3 - 2 * t); }

// Bilinear value noise on a lattice with the given cell size, in [0, 1).
std::vector<double> value_noise(Rng& rng, int h, int w, int cell) {
  const int gh = h / cell + 2;
  const int gw = w / cell + 2;
  std::vector<double> lattice(static_cast<std::size_t>(gh) * gw);
  for (double& v : lattice) {
    v = rng.uniform();
  }
  std::vector<double> out(static_cast<std::size_t>(h) * w);
  for (int y = 0; y < h; ++y) {
    const double fy = static_cast<double>(y) / cell;
    const int y0 = static_cast<int>(fy);
    const double ty = smoothstep(fy - y0);
    for (int x = 0; x < w; ++x) {
      const double fx = static_cast<double>(x) / cell;
      const int x0 = static_cast<int>(fx);
      const double tx = smoothstep(fx - x0);
      const auto L = [&](int yy, int xx) { return lattice[static_cast<std::size_t>(yy) * gw + xx]; };
      const double top = L(y0, x0) + (L(y0, x0 + 1) - L(y0, x0)) * tx;
      const double bot = L(y0 + 1, x0) + (L(y0 + 1, x0 + 1) - L(y0 + 1, x0)) * tx;
      out[static_cast<std::size_t>(y) * w + x] = top + (bot - top) * ty;
    }
  }
  return out;
}

struct Ellipse {
  double cy, cx, ry, rx, cos_t, sin_t;

  // Normalized radius: <= 1 inside.
  double radius(double y, double x) const {
    const double dy = y - cy;
    const double dx = x - cx;
    const double u = (dx * cos_t + dy * sin_t) / rx;
    const double v = (-dx * sin_t + dy * cos_t) / ry;
    return std::sqrt(u * u + v * v);
  }
};

constexpr double kMinForeground = 0.02;
constexpr double kMaxForeground = 0.4;
constexpr int kMaxBlobAttempts = 1000;

std::uint8_t quantize(double v) {
  return static_cast<std::uint8_t>(std::floor(std::clamp(v, 0.0, 1.0) * 255.0 + 0.5));
}

Sample synth_one(Rng& rng, int h, int w, std::string id) {
  const std::vector<double> coarse = value_noise(rng, h, w, 16);
  const std::vector<double> fine = value_noise(rng, h, w, 4);
  const std::array<double, 3> base{rng.uniform(0.55, 0.75), rng.uniform(0.25, 0.40),
                                   rng.uniform(0.20, 0.32)};
  const std::array<double, 3> shift{0.18, 0.10, 0.02};
  const double m = std::min(h, w);

  std::vector<Ellipse> blobs;
  std::vector<std::uint8_t> inside(static_cast<std::size_t>(h) * w);
  for (int attempt = 0;; ++attempt) {
    if (attempt == kMaxBlobAttempts) {
      throw Error("synth_generate: could not place blobs within the foreground bounds");
    }
    blobs.clear();
    const int count = rng.uniform_int(1, 3);
    for (int b = 0; b < count; ++b) {
      const double ry = rng.uniform(0.08, 0.22) * m;
      const double rx = rng.uniform(0.08, 0.22) * m;
      const double t = rng.uniform(0, 3.14159265358979323846);
      blobs.push_back({rng.uniform(0.2, 0.8) * h, rng.uniform(0.2, 0.8) * w, ry, rx, std::cos(t),
                       std::sin(t)});
    }
    std::size_t fg = 0;
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        bool in = false;
        for (const Ellipse& e : blobs) {
          in = in || e.radius(y + 0.5, x + 0.5) <= 1.0;
        }
        inside[static_cast<std::size_t>(y) * w + x] = in ? 1 : 0;
        fg += in ? 1 : 0;
      }
    }
    const double frac = static_cast<double>(fg) / static_cast<double>(inside.size());
    if (frac >= kMinForeground && frac <= kMaxForeground) {
      break;
    }
  }

  const std::size_t plane = static_cast<std::size_t>(h) * w;
  std::vector<Scalar> image(3 * plane);
  std::vector<Scalar> mask(plane);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const std::size_t i = static_cast<std::size_t>(y) * w + x;
      double r_min = 1e9;
      for (const Ellipse& e : blobs) {
        r_min = std::min(r_min, e.radius(y + 0.5, x + 0.5));
      }
      // Soft edge over normalized radius [0.85, 1.15]; dome shading inside.
      const double alpha = 1 - smoothstep(std::clamp((r_min - 0.85) / 0.3, 0.0, 1.0));
      const double dome = 0.08 * std::max(0.0, 1 - r_min * r_min);
      const double texture = 0.6 * coarse[i] + 0.4 * fine[i] - 0.5;
      for (int c = 0; c < 3; ++c) {
        const double bg = base[static_cast<std::size_t>(c)] * (1 + 0.35 * texture);
        const double v = bg + alpha * (shift[static_cast<std::size_t>(c)] + dome);
        image[static_cast<std::size_t>(c) * plane + i] = quantize(v) / Scalar(255);
      }
      mask[i] = inside[i];
    }
  }
  return make_sample(Tensor(Shape{1, 3, h, w}, std::move(image)),
                     Tensor(Shape{1, 1, h, w}, std::move(mask)), std::move(id));
}

fs::path resolve(const fs::path& base, const std::string& p) {
  const fs::path path(p);
  return path.is_absolute() ? path : base / path;
}

}  // namespace

Image8 read_image(const fs::path& path) {
  std::vector<char> bytes = read_bytes(path);
  static constexpr unsigned char kPngSig[4] = {0x89, 'P', 'N', 'G'};
  if (bytes.size() >= 4 && std::equal(kPngSig, kPngSig + 4, bytes.begin(),
                                      [](unsigned char a, char b) {
                                        return a == static_cast<unsigned char>(b);
                                      })) {
#ifdef MLFF_HAVE_PNG
    return read_png(path);
#else
    throw IoError("'" + path.string() + "': PNG support not built");
#endif
  }
  return PnmReader(std::move(bytes), path).read();
}

void write_image(const Image8& img, const fs::path& path) {
  if (img.channels != 1 && img.channels != 3) {
    throw ContractError("write_image: 1 or 3 channels required");
  }
  if (lower(path.extension().string()) == ".png") {
#ifdef MLFF_HAVE_PNG
    write_png(img, path);
    return;
#else
    throw IoError("cannot write '" + path.string() + "': PNG support not built");
#endif
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw IoError("cannot write '" + path.string() + "'");
  }
  out << (img.channels == 3 ? "P6" : "P5") << '\n' << img.w << ' ' << img.h << "\n255\n";
  out.write(reinterpret_cast<const char*>(img.data.data()),
            static_cast<std::streamsize>(img.data.size()));
  if (!out) {
    throw IoError("write failed for '" + path.string() + "'");
  }
}

bool png_supported() {
#ifdef MLFF_HAVE_PNG
  return true;
#else
  return false;
#endif
}

void Sample::validate() const {
  const Shape& is = image.shape();
  const Shape& ms = mask.shape();
  if (is.n != 1 || is.c != 3 || ms.n != 1 || ms.c != 1 || is.h != ms.h || is.w != ms.w) {
    throw ContractError("sample '" + id + "': image " + is.str() + " and mask " + ms.str() +
                        " must be [1,3,H,W] and [1,1,H,W]");
  }
  for (const Scalar v : image.data()) {
    if (!(v >= 0 && v <= 1)) {
      throw ContractError("sample '" + id + "': image values must lie in [0, 1]");
    }
  }
  for (const Scalar v : mask.data()) {
    if (v != 0 && v != 1) {
      throw ContractError("sample '" + id + "': mask values must be 0 or 1");
    }
  }
}

Sample make_sample(Tensor image, Tensor mask, std::string id) {
  Sample s{std::move(image), std::move(mask), std::move(id)};
  s.validate();
  return s;
}

Tensor resize_bilinear(const Tensor& x, int h, int w) {
  if (h < 1 || w < 1) {
    throw ContractError("resize_bilinear: target extents must be >= 1");
  }
  const Shape s = x.shape();
  if (s.h == h && s.w == w) {
    return x.detach();
  }
  const auto src = x.data();
  std::vector<Scalar> out(static_cast<std::size_t>(s.n) * s.c * h * w);
  const double sy = static_cast<double>(s.h) / h;
  const double sx = static_cast<double>(s.w) / w;
  for (int p = 0; p < s.n * s.c; ++p) {
    const Scalar* in = src.data() + static_cast<std::size_t>(p) * s.plane();
    Scalar* o = out.data() + static_cast<std::size_t>(p) * h * w;
    for (int y = 0; y < h; ++y) {
      const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, s.h - 1.0);
      const int y0 = static_cast<int>(fy);
      const int y1 = std::min(y0 + 1, s.h - 1);
      const double ty = fy - y0;
      for (int xx = 0; xx < w; ++xx) {
        const double fx = std::clamp((xx + 0.5) * sx - 0.5, 0.0, s.w - 1.0);
        const int x0 = static_cast<int>(fx);
        const int x1 = std::min(x0 + 1, s.w - 1);
        const double tx = fx - x0;
        const auto at = [&](int yy, int xi) { return in[static_cast<std::size_t>(yy) * s.w + xi]; };
        const double top = at(y0, x0) + (at(y0, x1) - at(y0, x0)) * tx;
        const double bot = at(y1, x0) + (at(y1, x1) - at(y1, x0)) * tx;
        o[static_cast<std::size_t>(y) * w + xx] = static_cast<Scalar>(top + (bot - top) * ty);
      }
    }
  }
  return Tensor(Shape{s.n, s.c, h, w}, std::move(out));
}

Image8 resize_nearest(const Image8& img, int h, int w) {
  if (h < 1 || w < 1) {
    throw ContractError("resize_nearest: target extents must be >= 1");
  }
  Image8 out{h, w, img.channels, {}};
  out.data.resize(static_cast<std::size_t>(h) * w * img.channels);
  for (int y = 0; y < h; ++y) {
    const int sy = static_cast<int>(static_cast<long>(y) * img.h / h);
    for (int x = 0; x < w; ++x) {
      const int sx = static_cast<int>(static_cast<long>(x) * img.w / w);
      for (int c = 0; c < img.channels; ++c) {
        out.data[(static_cast<std::size_t>(y) * w + x) * img.channels + c] =
            img.data[(static_cast<std::size_t>(sy) * img.w + sx) * img.channels + c];
      }
    }
  }
  return out;
}

Tensor image_to_tensor(const Image8& img) {
  const std::size_t plane = static_cast<std::size_t>(img.h) * img.w;
  std::vector<Scalar> out(3 * plane);
  for (std::size_t i = 0; i < plane; ++i) {
    for (int c = 0; c < 3; ++c) {
      const int src = img.channels == 3 ? c : 0;
      out[static_cast<std::size_t>(c) * plane + i] =
          img.data[i * img.channels + src] / Scalar(255);
    }
  }
  return Tensor(Shape{1, 3, img.h, img.w}, std::move(out));
}

Tensor mask_to_tensor(const Image8& img) {
  const std::size_t plane = static_cast<std::size_t>(img.h) * img.w;
  std::vector<Scalar> out(plane);
  for (std::size_t i = 0; i < plane; ++i) {
    int v = img.data[i * img.channels];
    if (img.channels == 3) {
      // Integer Rec. 601 luma.
      v = (299 * img.data[i * 3] + 587 * img.data[i * 3 + 1] + 114 * img.data[i * 3 + 2] + 500) /
          1000;
    }
    out[i] = v >= kMaskThreshold ? 1 : 0;
  }
  return Tensor(Shape{1, 1, img.h, img.w}, std::move(out));
}

Image8 tensor_to_image(const Tensor& image) {
  const Shape s = image.shape();
  if (s.n != 1 || (s.c != 1 && s.c != 3)) {
    throw ContractError("tensor_to_image: expected [1,1,H,W] or [1,3,H,W], got " + s.str());
  }
  Image8 img{s.h, s.w, s.c, {}};
  const std::size_t plane = s.plane();
  img.data.resize(plane * s.c);
  const auto d = image.data();
  for (std::size_t i = 0; i < plane; ++i) {
    for (int c = 0; c < s.c; ++c) {
      const double v = d[static_cast<std::size_t>(c) * plane + i];
      if (!(v >= 0 && v <= 1)) {
        throw ContractError("tensor_to_image: values must lie in [0, 1]");
      }
      img.data[i * s.c + c] = quantize(v);
    }
  }
  return img;
}

Sample load_sample(const fs::path& image_path, const fs::path& mask_path, int target_h,
                   int target_w) {
  const Image8 img = read_image(image_path);
  Image8 msk = read_image(mask_path);
  const int h = target_h > 0 ? target_h : img.h;
  const int w = target_w > 0 ? target_w : img.w;
  Tensor image = resize_bilinear(image_to_tensor(img), h, w);
  if (msk.h != h || msk.w != w) {
    msk = resize_nearest(msk, h, w);
  }
  return make_sample(std::move(image), mask_to_tensor(msk), image_path.stem().string());
}

void write_mask(const Tensor& mask_prob, const fs::path& path) {
  if (mask_prob.shape().c != 1) {
    throw ContractError("write_mask: expected a single-channel map, got " +
                        mask_prob.shape().str());
  }
  write_image(tensor_to_image(mask_prob), path);
}

std::vector<Sample> synth_generate(std::uint64_t seed, int count, int h, int w) {
  if (count < 1) {
    throw ContractError("synth_generate: count must be >= 1");
  }
  if (h < 32 || w < 32 || h % 32 != 0 || w % 32 != 0) {
    throw ConfigError("synth_generate: size " + std::to_string(h) + "x" + std::to_string(w) +
                      " must be a positive multiple of 32");
  }
  Rng rng(seed);
  std::vector<Sample> out;
  out.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    out.push_back(synth_one(rng, h, w, "synth_" + std::to_string(seed) + "_" + std::to_string(i)));
  }
  return out;
}

void Manifest::validate() const {
  std::set<fs::path> seen;
  for (const auto& [img, msk] : entries) {
    if (!seen.insert(img).second || !seen.insert(msk).second) {
      throw ContractError("manifest '" + name + "': duplicate path '" + img.string() + "' or '" +
                          msk.string() + "'");
    }
  }
  if (expected_count && static_cast<int>(entries.size()) != *expected_count) {
    throw ContractError("manifest '" + name + "': " + std::to_string(entries.size()) +
                        " entries, expected " + std::to_string(*expected_count));
  }
}

std::optional<int> known_corpus_count(std::string_view name) {
  for (const Corpus& c : kKnownCorpora) {
    if (lower(c.name) == lower(name)) {
      return c.count;
    }
  }
  return std::nullopt;
}

Manifest read_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw IoError("cannot open manifest '" + path.string() + "'");
  }
  const fs::path base = path.parent_path();
  Manifest m;
  m.name = path.stem().string();
  bool named = false;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty()) {
      continue;
    }
    if (t[0] == '#') {
      const std::string body = trim(std::string_view(t).substr(1));
      const auto colon = body.find(':');
      if (colon == std::string::npos) {
        continue;
      }
      const std::string key = lower(trim(std::string_view(body).substr(0, colon)));
      const std::string value = trim(std::string_view(body).substr(colon + 1));
      if (key == "name") {
        m.name = value;
        named = true;
      } else if (key == "expected_count") {
        try {
          m.expected_count = std::stoi(value);
        } catch (const std::exception&) {
          throw ContractError(path.string() + ":" + std::to_string(lineno) +
                              ": bad expected_count '" + value + "'");
        }
      }
      continue;
    }
    const auto tab = t.find('\t');
    if (tab == std::string::npos || t.find('\t', tab + 1) != std::string::npos) {
      throw ContractError(path.string() + ":" + std::to_string(lineno) +
                          ": expected 'image<TAB>mask'");
    }
    m.entries.emplace_back(resolve(base, trim(std::string_view(t).substr(0, tab))),
                           resolve(base, trim(std::string_view(t).substr(tab + 1))));
  }
  if (named && !m.expected_count) {
    m.expected_count = known_corpus_count(m.name);
  }
  m.validate();
  return m;
}

void write_manifest(const Manifest& m, const fs::path& path) {
  m.validate();
  std::ofstream out(path);
  if (!out) {
    throw IoError("cannot write manifest '" + path.string() + "'");
  }
  out << "# name: " << m.name << '\n';
  if (m.expected_count) {
    out << "# expected_count: " << *m.expected_count << '\n';
  }
  const fs::path base = path.parent_path();
  for (const auto& [img, msk] : m.entries) {
    // Entries inside the manifest directory are stored relative to it so the
    // manifest stays valid when the directory moves.
    const auto rel = [&](const fs::path& p) {
      if (p.is_absolute() != base.is_absolute()) {
        return p.string();
      }
      const fs::path r = p.lexically_normal().lexically_relative(base.lexically_normal());
      if (r.empty() || *r.begin() == "..") {
        return p.string();
      }
      return r.string();
    };
    out << rel(img) << '\t' << rel(msk) << '\n';
  }
  if (!out) {
    throw IoError("write failed for '" + path.string() + "'");
  }
}

std::vector<Sample> load_manifest(const fs::path& path, int target_h, int target_w) {
  const Manifest m = read_manifest(path);
  if (m.entries.empty()) {
    throw ContractError("manifest '" + path.string() + "' has no entries");
  }
  std::vector<Sample> out;
  out.reserve(m.entries.size());
  for (const auto& [img, msk] : m.entries) {
    out.push_back(load_sample(img, msk, target_h, target_w));
  }
  return out;
}

fs::path save_dataset(const std::vector<Sample>& samples, const fs::path& dir,
                      const std::string& name) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) {
    throw IoError("cannot create directory '" + dir.string() + "': " + ec.message());
  }
  Manifest m;
  m.name = name;
  m.expected_count = static_cast<int>(samples.size());
  for (const Sample& s : samples) {
    const fs::path img = dir / (s.id + ".ppm");
    const fs::path msk = dir / (s.id + "_mask.pgm");
    write_image(tensor_to_image(s.image), img);
    write_image(tensor_to_image(s.mask), msk);
    m.entries.emplace_back(img, msk);
  }
  const fs::path manifest = dir / "manifest.tsv";
  write_manifest(m, manifest);
  return manifest;
}

std::pair<Tensor, Tensor> stack_batch(const std::vector<Sample>& samples,
                                      const std::vector<std::size_t>& indices) {
  if (indices.empty()) {
    throw ContractError("stack_batch: empty selection");
  }
  const Shape first = samples.at(indices.front()).image.shape();
  std::vector<Scalar> img;
  std::vector<Scalar> msk;
  for (const std::size_t i : indices) {
    const Sample& s = samples.at(i);
    if (s.image.shape() != first) {
      throw ContractError("stack_batch: sample '" + s.id + "' is " + s.image.shape().str() +
                          ", expected " + first.str());
    }
    const auto a = s.image.data();
    const auto b = s.mask.data();
    img.insert(img.end(), a.begin(), a.end());
    msk.insert(msk.end(), b.begin(), b.end());
  }
  const int n = static_cast<int>(indices.size());
  return {Tensor(Shape{n, 3, first.h, first.w}, std::move(img)),
          Tensor(Shape{n, 1, first.h, first.w}, std::move(msk))};
}

}  // namespace mlff::io
