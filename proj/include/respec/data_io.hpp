#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace respec::data {

// Labeled image set, pixels normalized to [0, 1], stored [n][c][h][w].
struct ImageDataset {
  int n = 0, h = 0, w = 0, c = 0;
  int class_count = 0;
  std::vector<float> images;
  std::vector<int> labels;
  std::string digest;  // stable content identifier (hex)

  const float* image(int i) const {
    return images.data() + static_cast<int64_t>(i) * c * h * w;
  }
  int64_t image_size() const { return static_cast<int64_t>(c) * h * w; }
};

// Big-endian IDX files (magic 0x00000803 for images, 0x00000801 for labels).
// Throws LoadError with a specific kind on any malformed input; never returns
// a partial dataset.
ImageDataset load_idx(const std::string& images_path, const std::string& labels_path);

// Writes 8-bit IDX files (pixels quantized to 0..255).
void write_idx(const ImageDataset& ds, const std::string& images_path,
               const std::string& labels_path);

struct SynthConfig {
  enum class Pattern {
    blobs,   // class = mixture of fixed Gaussian bumps + pixel noise
    glyphs,  // class = stroke glyph, translated per sample + dropout/speckle
  };
  Pattern pattern = Pattern::blobs;
  int classes = 10;
  int samples = 1000;
  int height = 28, width = 28;
  double noise = 0.10;  // blobs: pixel sigma; glyphs: stroke dropout prob
  int max_shift = 4;    // glyphs: translation jitter radius, pixels
  uint64_t seed = 0;
};

// Deterministic synthetic dataset; the digest encodes the full config.
ImageDataset synth_dataset(const SynthConfig& cfg);

// fnv1a-64 over a file's bytes, hex-encoded. Throws LoadError(io) if absent.
std::string file_digest(const std::string& path);

}  // namespace respec::data
