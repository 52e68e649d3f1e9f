#pragma once

// Synthetic single-channel image classification data.

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

namespace ofb {

enum class Generator { GaussianBlobs, StripedTextures };

std::string to_string(Generator g);
Generator generator_from_string(const std::string& name);

struct SyntheticDatasetSpec {
  std::size_t n_train = 2000;
  std::size_t n_eval = 1000;
  std::size_t classes = 4;
  std::size_t image_size = 32;
  Generator generator = Generator::GaussianBlobs;
  double noise_sigma = 1.0;
  std::uint64_t seed = 1234;
};

struct Dataset {
  std::size_t n = 0;
  std::size_t image_size = 0;
  std::vector<double> images;  // [n, 1, H, W]
  std::vector<int> labels;     // [n]
};

struct DatasetPair {
  Dataset train;
  Dataset eval;
};

// Label of sample i is i % classes, so every split is class-balanced.
DatasetPair generate(const SyntheticDatasetSpec& spec);

// [n, tokens, patch_size^2] row-major.
std::vector<double> patchify(const Dataset& data, std::size_t patch_size);

// Batch of patch rows for the listed sample indices.
void gather_batch(const std::vector<double>& patches, std::size_t per_sample,
                  const std::vector<std::size_t>& indices, std::vector<double>& out);

// <split>_images.bin (little-endian doubles), <split>_labels.bin
// (little-endian int32) and manifest.json under `dir`.
void write_dataset(const DatasetPair& data, const SyntheticDatasetSpec& spec,
                   const std::filesystem::path& dir);
Dataset read_split(const std::filesystem::path& dir, const std::string& split);

}  // namespace ofb
