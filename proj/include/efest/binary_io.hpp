#pragma once

#include <cstdint>
#include <filesystem>

#include "efest/dataset.hpp"
#include "efest/estimator.hpp"
#include "efest/mlp.hpp"

namespace efest {

// All integers and floats are little-endian; floats are IEEE-754 binary64.
//
// checkpoint: "EFCKPT01" | version u32 | layer count u32 | dims u32 x count | params f64 x P
// gradsum:    "EFGSUM01" | version u32 | round u32 | class u32 | path u8 | batch_size u32 |
//             sample, failed, succeeded counts u32 x 3 | length u64 | f64 x length
// dataset:    "EFDSET01" | version u32 | n u64 | dim u32 | classes u32 |
//             n x (id u64 | label u32 | f64 x dim)
// param delta files reuse the checkpoint format.

inline constexpr std::uint32_t kFormatVersion = 1;

enum class FileKind { Checkpoint, GradSum, Dataset };

/// Checks only the magic bytes and version of a file.
void check_header(const std::filesystem::path& path, FileKind kind);

void save_checkpoint(const std::filesystem::path& path, const MlpNetwork& net);
MlpNetwork load_checkpoint(const std::filesystem::path& path);

void save_params(const std::filesystem::path& path, const ParamVector& params);
ParamVector load_params(const std::filesystem::path& path);

void save_gradsum(const std::filesystem::path& path, const GradSumRecord& rec);
/// The vector is attached to `layout`; its stored length must match.
GradSumRecord load_gradsum(const std::filesystem::path& path, const Layout& layout);

void save_dataset(const std::filesystem::path& path, const Dataset& data);
Dataset load_dataset(const std::filesystem::path& path);

}  // namespace efest
