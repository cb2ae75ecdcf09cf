#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "respec/data_io.hpp"
#include "respec/errors.hpp"
#include "respec/rng.hpp"

namespace respec::data {

namespace {

constexpr uint32_t kImagesMagic = 0x00000803;
constexpr uint32_t kLabelsMagic = 0x00000801;

std::vector<uint8_t> read_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw LoadError(LoadError::Kind::io, "cannot open " + path);
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(is)),
                             std::istreambuf_iterator<char>());
  return bytes;
}

uint32_t be32(const std::vector<uint8_t>& b, size_t off) {
  return (static_cast<uint32_t>(b[off]) << 24) | (static_cast<uint32_t>(b[off + 1]) << 16) |
         (static_cast<uint32_t>(b[off + 2]) << 8) | static_cast<uint32_t>(b[off + 3]);
}

void put_be32(std::vector<uint8_t>& b, uint32_t v) {
  b.push_back(static_cast<uint8_t>(v >> 24));
  b.push_back(static_cast<uint8_t>(v >> 16));
  b.push_back(static_cast<uint8_t>(v >> 8));
  b.push_back(static_cast<uint8_t>(v));
}

std::string hex64(uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

uint64_t bytes_digest(const std::vector<uint8_t>& b, uint64_t h = respec::kFnvOffset) {
  for (uint8_t c : b) {
    h ^= c;
    h *= respec::kFnvPrime;
  }
  return h;
}

}  // namespace

ImageDataset load_idx(const std::string& images_path, const std::string& labels_path) {
  std::vector<uint8_t> img = read_file(images_path);
  std::vector<uint8_t> lbl = read_file(labels_path);

  if (img.size() < 16)
    throw LoadError(LoadError::Kind::truncated, images_path + ": header truncated");
  if (lbl.size() < 8)
    throw LoadError(LoadError::Kind::truncated, labels_path + ": header truncated");
  if (be32(img, 0) != kImagesMagic)
    throw LoadError(LoadError::Kind::bad_magic, images_path + ": bad magic number");
  if (be32(lbl, 0) != kLabelsMagic)
    throw LoadError(LoadError::Kind::bad_magic, labels_path + ": bad magic number");

  const uint32_t n = be32(img, 4), rows = be32(img, 8), cols = be32(img, 12);
  const uint32_t n_lbl = be32(lbl, 4);
  if (n != n_lbl)
    throw LoadError(LoadError::Kind::count_mismatch,
                    "image count " + std::to_string(n) + " != label count " +
                        std::to_string(n_lbl));
  if (rows == 0 || cols == 0 || rows > 4096 || cols > 4096 || n > 10'000'000)
    throw LoadError(LoadError::Kind::malformed, images_path + ": implausible dimensions");

  const uint64_t expect_img = 16ull + static_cast<uint64_t>(n) * rows * cols;
  if (img.size() != expect_img)
    throw LoadError(LoadError::Kind::truncated,
                    images_path + ": expected " + std::to_string(expect_img) + " bytes, found " +
                        std::to_string(img.size()));
  const uint64_t expect_lbl = 8ull + n;
  if (lbl.size() != expect_lbl)
    throw LoadError(LoadError::Kind::truncated,
                    labels_path + ": expected " + std::to_string(expect_lbl) + " bytes, found " +
                        std::to_string(lbl.size()));

  ImageDataset ds;
  ds.n = static_cast<int>(n);
  ds.h = static_cast<int>(rows);
  ds.w = static_cast<int>(cols);
  ds.c = 1;
  ds.images.resize(static_cast<size_t>(n) * rows * cols);
  for (size_t i = 0; i < ds.images.size(); ++i)
    ds.images[i] = static_cast<float>(img[16 + i]) / 255.0f;
  ds.labels.resize(n);
  int max_label = -1;
  for (uint32_t i = 0; i < n; ++i) {
    ds.labels[i] = lbl[8 + i];
    max_label = std::max(max_label, ds.labels[i]);
  }
  ds.class_count = max_label + 1;
  ds.digest = hex64(bytes_digest(lbl, bytes_digest(img)));
  return ds;
}

void write_idx(const ImageDataset& ds, const std::string& images_path,
               const std::string& labels_path) {
  if (ds.c != 1) throw LoadError(LoadError::Kind::malformed, "idx files hold single-channel images");
  std::vector<uint8_t> img;
  img.reserve(16 + ds.images.size());
  put_be32(img, kImagesMagic);
  put_be32(img, static_cast<uint32_t>(ds.n));
  put_be32(img, static_cast<uint32_t>(ds.h));
  put_be32(img, static_cast<uint32_t>(ds.w));
  for (float v : ds.images) {
    float clamped = std::min(1.0f, std::max(0.0f, v));
    img.push_back(static_cast<uint8_t>(std::lround(clamped * 255.0f)));
  }

  std::vector<uint8_t> lbl;
  lbl.reserve(8 + ds.labels.size());
  put_be32(lbl, kLabelsMagic);
  put_be32(lbl, static_cast<uint32_t>(ds.n));
  for (int l : ds.labels) lbl.push_back(static_cast<uint8_t>(l));

  std::ofstream os_img(images_path, std::ios::binary);
  if (!os_img) throw LoadError(LoadError::Kind::io, "cannot write " + images_path);
  os_img.write(reinterpret_cast<const char*>(img.data()), static_cast<std::streamsize>(img.size()));
  std::ofstream os_lbl(labels_path, std::ios::binary);
  if (!os_lbl) throw LoadError(LoadError::Kind::io, "cannot write " + labels_path);
  os_lbl.write(reinterpret_cast<const char*>(lbl.data()), static_cast<std::streamsize>(lbl.size()));
}

namespace {

// Class prototype for blobs: three Gaussian bumps at class-seeded positions.
std::vector<float> blob_prototype(int cls, int h, int w, uint64_t seed) {
  Rng rng(mix64(seed ^ (0xb10b0000ull + static_cast<uint64_t>(cls))));
  std::vector<float> proto(static_cast<size_t>(h) * w, 0.0f);
  for (int bump = 0; bump < 3; ++bump) {
    double cy = rng.uniform(0.2, 0.8) * h;
    double cx = rng.uniform(0.2, 0.8) * w;
    double sigma = rng.uniform(0.08, 0.16) * std::min(h, w);
    double amp = rng.uniform(0.6, 1.0);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        double d2 = (y - cy) * (y - cy) + (x - cx) * (x - cx);
        proto[static_cast<size_t>(y) * w + x] +=
            static_cast<float>(amp * std::exp(-d2 / (2 * sigma * sigma)));
      }
  }
  for (auto& v : proto) v = std::min(1.0f, v);
  return proto;
}

// Class prototype for glyphs: a self-avoiding-ish stroke walk on a grid
// margin inside the canvas, drawn at full intensity.
std::vector<float> glyph_prototype(int cls, int h, int w, uint64_t seed, int margin) {
  Rng rng(mix64(seed ^ (0x617970ull + static_cast<uint64_t>(cls) * 7919)));
  std::vector<float> proto(static_cast<size_t>(h) * w, 0.0f);
  const int gh = h - 2 * margin, gw = w - 2 * margin;
  int y = margin + gh / 2 + rng.uniform_int(-2, 2);
  int x = margin + gw / 2 + rng.uniform_int(-2, 2);
  const int steps = (gh * gw) / 8;
  int dy = 0, dx = 1;
  for (int s = 0; s < steps; ++s) {
    proto[static_cast<size_t>(y) * w + x] = 1.0f;
    if (rng.bernoulli(0.35)) {  // turn
      if (rng.bernoulli(0.5)) {
        dy = dx == 0 ? 0 : (rng.bernoulli(0.5) ? 1 : -1);
        dx = 0;
        if (dy == 0) dy = 1;
      } else {
        dx = dy == 0 ? 0 : (rng.bernoulli(0.5) ? 1 : -1);
        dy = 0;
        if (dx == 0) dx = 1;
      }
    }
    y = std::clamp(y + dy, margin, h - 1 - margin);
    x = std::clamp(x + dx, margin, w - 1 - margin);
  }
  return proto;
}

}  // namespace

ImageDataset synth_dataset(const SynthConfig& cfg) {
  ImageDataset ds;
  ds.n = cfg.samples;
  ds.h = cfg.height;
  ds.w = cfg.width;
  ds.c = 1;
  ds.class_count = cfg.classes;
  ds.images.resize(static_cast<size_t>(cfg.samples) * cfg.height * cfg.width);
  ds.labels.resize(static_cast<size_t>(cfg.samples));

  std::vector<std::vector<float>> protos;
  const int margin = cfg.pattern == SynthConfig::Pattern::glyphs ? cfg.max_shift + 1 : 0;
  for (int k = 0; k < cfg.classes; ++k)
    protos.push_back(cfg.pattern == SynthConfig::Pattern::blobs
                         ? blob_prototype(k, cfg.height, cfg.width, cfg.seed)
                         : glyph_prototype(k, cfg.height, cfg.width, cfg.seed, margin));

  Rng base(mix64(cfg.seed));
  const size_t plane = static_cast<size_t>(cfg.height) * cfg.width;
  for (int i = 0; i < cfg.samples; ++i) {
    Rng rng = base.split(static_cast<uint64_t>(i));
    int cls = static_cast<int>(rng.next_below(static_cast<uint64_t>(cfg.classes)));
    ds.labels[static_cast<size_t>(i)] = cls;
    float* out = ds.images.data() + static_cast<size_t>(i) * plane;
    const std::vector<float>& proto = protos[static_cast<size_t>(cls)];

    if (cfg.pattern == SynthConfig::Pattern::blobs) {
      for (size_t p = 0; p < plane; ++p) {
        double v = proto[p] + rng.gaussian(0.0, cfg.noise);
        out[p] = static_cast<float>(std::clamp(v, 0.0, 1.0));
      }
    } else {
      int dy = rng.uniform_int(-cfg.max_shift, cfg.max_shift);
      int dx = rng.uniform_int(-cfg.max_shift, cfg.max_shift);
      double gain = rng.uniform(0.7, 1.0);
      for (int y = 0; y < cfg.height; ++y)
        for (int x = 0; x < cfg.width; ++x) {
          int sy = y - dy, sx = x - dx;
          float v = 0.0f;
          if (sy >= 0 && sy < cfg.height && sx >= 0 && sx < cfg.width)
            v = proto[static_cast<size_t>(sy) * cfg.width + sx];
          if (v > 0.0f) {
            // stroke pixel: maybe dropped, otherwise intensity-jittered
            v = rng.bernoulli(cfg.noise) ? 0.0f : static_cast<float>(gain * rng.uniform(0.75, 1.0));
          } else if (rng.bernoulli(0.02)) {
            v = static_cast<float>(rng.uniform(0.2, 0.8));  // background speckle
          }
          out[static_cast<size_t>(y) * cfg.width + x] = v;
        }
    }
  }

  std::ostringstream cfg_str;
  cfg_str << (cfg.pattern == SynthConfig::Pattern::blobs ? "blobs" : "glyphs") << ':'
          << cfg.classes << ':' << cfg.samples << ':' << cfg.height << 'x' << cfg.width << ':'
          << cfg.noise << ':' << cfg.max_shift << ':' << cfg.seed;
  ds.digest = hex64(fnv1a64(cfg_str.str()));
  return ds;
}

std::string file_digest(const std::string& path) {
  return hex64(bytes_digest(read_file(path)));
}

}  // namespace respec::data
