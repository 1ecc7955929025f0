#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace efest {

struct LabeledExample {
  std::uint64_t id = 0;
  std::uint32_t label = 0;
  std::vector<double> features;
};

/// A labelled dataset. Sample ids are dense: examples[i].id == i.
struct Dataset {
  std::uint32_t dim = 0;
  std::uint32_t num_classes = 0;
  std::vector<LabeledExample> examples;

  std::size_t size() const { return examples.size(); }
  const LabeledExample& at(std::uint64_t id) const;

  /// Checks dims, label range, finiteness and dense ids.
  void validate() const;
};

/// Isotropic Gaussian clusters, one per class.
struct SyntheticSpec {
  std::uint32_t num_classes = 2;
  std::uint32_t dim = 1;
  std::vector<std::vector<double>> means;  // num_classes x dim
  double sigma = 1.0;
  std::uint32_t samples_per_class = 1;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Class means drawn uniformly from [-scale, scale]^dim with a seeded stream.
std::vector<std::vector<double>> random_means(std::uint32_t num_classes, std::uint32_t dim,
                                              double scale, std::uint64_t seed);

/// Samples are emitted class by class (class 0 first); within a class each
/// coordinate is mean + sigma * Rng::normal(), coordinates in order.
Dataset gen_synthetic(const SyntheticSpec& spec);

/// IDX reader: images magic 0x00000803 (u8, n x rows x cols), labels magic
/// 0x00000801 (u8, n). Big-endian header fields. Pixels are scaled by 1/255.
Dataset read_idx(const std::filesystem::path& images_path,
                 const std::filesystem::path& labels_path);

}  // namespace efest
