#pragma once

// Count-labeled image data: synthetic disk scenes, binary PGM/PPM files,
// label CSVs, crop sampling, and k-fold splits. Everything is deterministic
// given its seed.

#include "jct/rng.hpp"

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace jct {

struct Sample {
  int width = 0;
  int height = 0;
  int channels = 1;  // 1 (PGM) or 3 (PPM)
  std::vector<std::uint8_t> pixels;  // row-major, interleaved channels
  long long count = 0;
  std::vector<std::pair<double, double>> object_centers;  // (x, y); synthetic samples only
  std::string name;
};

struct SynthSpec {
  int width = 64;
  int height = 64;
  int count_lo = 0;
  int count_hi = 20;
  double radius_lo = 2.0;
  double radius_hi = 4.0;
  double noise_amplitude = 10.0;
  std::uint64_t seed = 1;
};

// Renders `count` non-overlapping bright disks with Gaussian falloff on a
// noisy dark background; count drawn uniformly from [lo, hi]. Throws if the
// frame cannot host the draw without overlap after bounded retries.
std::vector<Sample> generate_synthetic(const SynthSpec& spec, int n_images);

// Binary P5/P6 with maxval 255, byte-faithful.
Sample load_image_pnm(const std::string& path);
void save_image_pnm(const Sample& s, const std::string& path);

// Rows of `filename,count` under that exact header.
std::vector<std::pair<std::string, long long>> load_labels_csv(const std::string& path);
void save_labels_csv(const std::vector<std::pair<std::string, long long>>& rows,
                     const std::string& path);

// Loads every CSV row's image from `dir`; missing files are an error.
std::vector<Sample> load_dataset(const std::string& dir, const std::string& labels_csv);

enum class CropLabelRule {
  exact_centers,  // count object centers inside the crop (synthetic data)
  scale_by_area,  // approximate: full-image count scaled by area fraction
};

// Uniformly random top-left; m x n = rows x cols, both divisible by 32.
Sample random_crop(const Sample& s, int m, int n, Rng& rng,
                   CropLabelRule rule = CropLabelRule::exact_centers);

// Disjoint index folds covering 0..n-1 with sizes differing by at most one.
std::vector<std::vector<int>> kfold_split(int n_samples, int k, std::uint64_t seed);

}  // namespace jct
