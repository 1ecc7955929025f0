#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "efest/dataset.hpp"
#include "efest/mlp.hpp"
#include "efest/rng.hpp"

namespace testing {

/// Network with every parameter (biases included) uniform in [-scale, scale].
inline efest::MlpNetwork random_net(const efest::Layout& layout, std::uint64_t seed, double scale = 1.0) {
  efest::MlpNetwork net(layout);
  efest::Rng rng(seed);
  for (double& v : net.params().values()) v = rng.uniform(-scale, scale);
  return net;
}

inline std::vector<double> random_vector(std::size_t n, efest::Rng& rng, double scale = 1.0) {
  std::vector<double> v(n);
  for (double& x : v) x = rng.uniform(-scale, scale);
  return v;
}

/// Uniform random features with labels drawn uniformly from the classes.
inline efest::Dataset random_dataset(std::uint32_t n, std::uint32_t dim, std::uint32_t classes, std::uint64_t seed) {
  efest::Rng rng(seed);
  efest::Dataset d;
  d.dim = dim;
  d.num_classes = classes;
  for (std::uint32_t i = 0; i < n; ++i) {
    efest::LabeledExample ex;
    ex.id = i;
    ex.label = static_cast<std::uint32_t>(rng.below(classes));
    ex.features = random_vector(dim, rng);
    d.examples.push_back(std::move(ex));
  }
  return d;
}

inline std::vector<std::uint64_t> all_ids(const efest::Dataset& d) {
  std::vector<std::uint64_t> ids(d.size());
  for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = i;
  return ids;
}

/// Fresh, empty scratch directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("efest_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace testing
