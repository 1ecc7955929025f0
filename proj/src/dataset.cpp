#include "efest/dataset.hpp"

#include <cmath>
#include <fstream>
#include <string>

#include "efest/error.hpp"
#include "efest/rng.hpp"

namespace efest {

const LabeledExample& Dataset::at(std::uint64_t id) const {
  if (id >= examples.size()) fail(Errc::Consistency, "sample id " + std::to_string(id) + " not in dataset");
  return examples[id];
}

void Dataset::validate() const {
  if (dim == 0) fail(Errc::Consistency, "dataset feature dimension is zero");
  if (num_classes < 2) fail(Errc::Consistency, "dataset needs at least two classes");
  for (std::size_t i = 0; i < examples.size(); ++i) {
    const auto& ex = examples[i];
    if (ex.id != i) fail(Errc::Consistency, "sample ids must be dense; position " + std::to_string(i) +
                                                " holds id " + std::to_string(ex.id));
    if (ex.label >= num_classes) fail(Errc::Consistency, "label out of range at id " + std::to_string(i));
    if (ex.features.size() != dim) fail(Errc::Consistency, "feature length mismatch at id " + std::to_string(i));
    for (double v : ex.features)
      if (!std::isfinite(v)) fail(Errc::Consistency, "non-finite feature at id " + std::to_string(i));
  }
}

void SyntheticSpec::validate() const {
  if (num_classes < 2) fail(Errc::Configuration, "synthetic spec needs at least two classes");
  if (dim < 1) fail(Errc::Configuration, "synthetic spec needs dim >= 1");
  if (!(sigma > 0.0) || !std::isfinite(sigma)) fail(Errc::Configuration, "synthetic sigma must be positive");
  if (means.size() != num_classes) fail(Errc::Configuration, "synthetic spec needs one mean per class");
  for (const auto& m : means)
    if (m.size() != dim) fail(Errc::Configuration, "synthetic mean has wrong dimension");
}

std::vector<std::vector<double>> random_means(std::uint32_t num_classes, std::uint32_t dim, double scale,
                                              std::uint64_t seed) {
  Rng rng(derive_seed(seed, 0, "synthetic-means"));
  std::vector<std::vector<double>> means(num_classes, std::vector<double>(dim));
  for (auto& m : means)
    for (double& v : m) v = rng.uniform(-scale, scale);
  return means;
}

Dataset gen_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  Rng rng(derive_seed(spec.seed, 0, "synthetic-samples"));
  Dataset data;
  data.dim = spec.dim;
  data.num_classes = spec.num_classes;
  data.examples.reserve(static_cast<std::size_t>(spec.num_classes) * spec.samples_per_class);
  for (std::uint32_t k = 0; k < spec.num_classes; ++k) {
    for (std::uint32_t n = 0; n < spec.samples_per_class; ++n) {
      LabeledExample ex;
      ex.id = data.examples.size();
      ex.label = k;
      ex.features.resize(spec.dim);
      for (std::uint32_t d = 0; d < spec.dim; ++d) ex.features[d] = spec.means[k][d] + spec.sigma * rng.normal();
      data.examples.push_back(std::move(ex));
    }
  }
  return data;
}

namespace {

std::vector<unsigned char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(Errc::Io, "cannot open " + path.string());
  return std::vector<unsigned char>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

std::uint32_t be32(const std::vector<unsigned char>& b, std::size_t off) {
  return (std::uint32_t{b[off]} << 24) | (std::uint32_t{b[off + 1]} << 16) | (std::uint32_t{b[off + 2]} << 8) |
         std::uint32_t{b[off + 3]};
}

}  // namespace

Dataset read_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path) {
  const auto images = read_file(images_path);
  const auto labels = read_file(labels_path);

  if (images.size() >= 4 && be32(images, 0) != 0x00000803u)
    fail(Errc::Format, images_path.string() + ": bad IDX image magic");
  if (labels.size() >= 4 && be32(labels, 0) != 0x00000801u)
    fail(Errc::Format, labels_path.string() + ": bad IDX label magic");
  if (images.size() < 16) fail(Errc::Length, images_path.string() + ": truncated IDX header");
  if (labels.size() < 8) fail(Errc::Length, labels_path.string() + ": truncated IDX header");

  const std::uint64_t n = be32(images, 4);
  const std::uint64_t rows = be32(images, 8);
  const std::uint64_t cols = be32(images, 12);
  const std::uint64_t n_labels = be32(labels, 4);
  if (n != n_labels)
    fail(Errc::Consistency, "IDX image count " + std::to_string(n) + " != label count " + std::to_string(n_labels));
  const std::uint64_t pixels = rows * cols;
  if (pixels == 0 || pixels > UINT32_MAX) fail(Errc::Format, "IDX image has degenerate dimensions");
  if (images.size() - 16 < n * pixels) fail(Errc::Length, images_path.string() + ": truncated pixel data");
  if (labels.size() - 8 < n) fail(Errc::Length, labels_path.string() + ": truncated label data");

  Dataset data;
  data.dim = static_cast<std::uint32_t>(pixels);
  std::uint32_t max_label = 0;
  for (std::uint64_t i = 0; i < n; ++i) max_label = std::max<std::uint32_t>(max_label, labels[8 + i]);
  data.num_classes = std::max<std::uint32_t>(2, max_label + 1);
  data.examples.resize(n);
  for (std::uint64_t i = 0; i < n; ++i) {
    auto& ex = data.examples[i];
    ex.id = i;
    ex.label = labels[8 + i];
    ex.features.resize(pixels);
    const unsigned char* px = images.data() + 16 + i * pixels;
    for (std::uint64_t p = 0; p < pixels; ++p) ex.features[p] = px[p] / 255.0;
  }
  return data;
}

}  // namespace efest
