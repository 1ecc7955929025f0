#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "efest/config.hpp"
#include "efest/dataset.hpp"
#include "efest/estimator.hpp"
#include "efest/mlp.hpp"
#include "efest/regressor.hpp"

namespace efest {

/// Assignment of sample ids to datasets #0..#S and, within each, to its
/// training and test portions. All id lists are ascending.
struct SplitPlan {
  std::uint64_t n_samples = 0;
  std::uint32_t rounds = 0;  // S
  std::uint32_t ratio = 0;   // train parts per test part
  std::uint64_t seed = 0;
  std::vector<std::vector<std::uint64_t>> train;  // index 0..S
  std::vector<std::vector<std::uint64_t>> test;   // index 0..S

  std::size_t round_size(std::uint32_t s) const { return train.at(s).size() + test.at(s).size(); }
};

/// Seeded shuffle of 0..n-1; dataset #0 takes the first floor(2n/3) ids and the
/// rest is dealt into S rounds whose sizes differ by at most one (larger rounds
/// first). Each round's first floor(size / (ratio + 1)) shuffled ids form its
/// test portion, the remainder its training portion.
SplitPlan plan_splits(std::uint64_t n_samples, std::uint32_t rounds, std::uint32_t ratio, std::uint64_t seed);

nlohmann::json to_json(const SplitPlan& plan);
SplitPlan split_plan_from_json(const nlohmann::json& j);

/// Union of the previous evaluation set and a new test portion, ascending.
/// Throws SplitIntegrity when the portion repeats an id already present.
std::vector<std::uint64_t> update_eval_set(const std::optional<std::vector<std::uint64_t>>& prev,
                                           std::span<const std::uint64_t> portion);

/// Test portion that joins the evaluation set at round s (s >= 1):
/// TD_0 at s == 1, TD_s afterwards.
std::span<const std::uint64_t> eval_portion(const SplitPlan& plan, std::uint32_t s);

enum class EstimateStatus { Ok, NoEstimate, EmptyClass };
const char* to_string(EstimateStatus status);

/// Per-class outcome of one round. `estimate_seconds` covers only the EF dot
/// product and the regression prediction.
struct EstimateEntry {
  std::uint32_t round = 0;
  std::uint32_t klass = 0;
  EstimateStatus status = EstimateStatus::NoEstimate;
  std::string reason;
  std::uint32_t class_size = 0;
  double ef = 0.0;
  std::optional<RegressionModel> model;
  double predicted = 0.0;
  double acc_before = 0.0;
  double acc_after = 0.0;
  double actual = 0.0;
  double estimate_seconds = 0.0;
};

struct GradSumIndexEntry {
  std::uint32_t checkpoint = 0;
  std::uint32_t klass = 0;
  std::string path;
  std::uint32_t sample_count = 0;
};

struct CoherenceCheck {
  std::uint32_t checkpoint = 0;
  std::uint32_t klass = 0;
  double max_rel_diff = 0.0;
};

/// Everything recorded about one committed round.
struct RoundRecord {
  std::uint32_t round = 0;
  std::string checkpoint;
  std::string delta;  // empty for round 0
  std::uint64_t eval_size = 0;
  std::vector<std::uint32_t> class_sizes;
  std::vector<std::vector<std::uint64_t>> correct;  // [checkpoint 0..round][class] over X_round
  std::vector<GradSumIndexEntry> gradsums;           // caches over X_round under checkpoints 0..round-1
  std::vector<EfSample> ef_samples;
  std::vector<EstimateEntry> estimates;
  std::optional<CoherenceCheck> coherence;
  double train_seconds = 0.0;
  double pre_update_seconds = 0.0;
  double full_test_seconds = 0.0;
};

/// Durable record of an incremental run. On disk this is `manifest.jsonl`:
/// one header line followed by one line per committed round. Timing values
/// live under "timing" keys so they can be excluded from comparisons.
struct RunManifest {
  std::filesystem::path dir;
  RunConfig config;
  std::string dataset_path;
  std::string split_path;
  std::string report_path;
  std::vector<RoundRecord> rounds;

  const RoundRecord& round(std::uint32_t s) const;
  bool complete() const { return !rounds.empty() && rounds.back().round == config.rounds; }
};

inline constexpr const char* kManifestFile = "manifest.jsonl";

nlohmann::json to_json(const RoundRecord& rec);
RoundRecord round_record_from_json(const nlohmann::json& j);

/// Loads and validates a manifest (every referenced file must exist and pass
/// its magic/version check). A torn trailing line from an interrupted write is ignored.
RunManifest load_manifest(const std::filesystem::path& dir);

/// Manifest lines with every "timing" member removed.
std::vector<nlohmann::json> manifest_without_timing(const std::filesystem::path& dir);

/// Drives rounds 0..S. Construction creates a new run directory or resumes the
/// one already present (the stored config must match).
class IncrementalRun {
 public:
  IncrementalRun(const RunConfig& cfg, const std::filesystem::path& dir);
  ~IncrementalRun();
  IncrementalRun(IncrementalRun&&) noexcept;
  IncrementalRun& operator=(IncrementalRun&&) noexcept;

  bool done() const;
  std::uint32_t next_round() const;

  /// Executes the next round and commits it to the manifest.
  void step();
  void run_to_completion();

  const RunManifest& manifest() const;
  const Dataset& dataset() const;
  const SplitPlan& split() const;
  const MlpNetwork& checkpoint(std::uint32_t s) const;
  const ParamVector& delta(std::uint32_t s) const;

  /// Current evaluation set X_s (s = last committed round).
  const std::vector<std::uint64_t>& eval_set() const;
  /// Cached GradSum over X_s^k under checkpoint j (j < s), if the class is present.
  const std::optional<GradSumRecord>& cached_gradsum(std::uint32_t j, std::uint32_t k) const;
  /// Largest relative deviation between any cached GradSum / correct count and a
  /// from-scratch recomputation over the current evaluation set.
  double max_cache_deviation() const;

 private:
  struct State;
  std::unique_ptr<State> state_;
};

/// Runs (or resumes) until round S, or until `stop_after` has been committed.
RunManifest run_incremental(const RunConfig& cfg, const std::filesystem::path& dir,
                            std::optional<std::uint32_t> stop_after = std::nullopt);

/// EF samples for i = 1..s-1 from cached GradSums and correct counts.
/// `gradsums[j]` is GradSum over X_s^k under checkpoint j; `correct[j]` is the
/// number of class-k samples of X_s that checkpoint j classifies correctly.
std::vector<EfSample> backfill_effects(std::uint32_t s, std::uint32_t k,
                                       std::span<const std::optional<GradSumRecord>> gradsums,
                                       std::span<const ParamVector> deltas_by_round,
                                       std::span<const std::uint64_t> correct, std::uint64_t class_size);

/// Fits on the backfilled samples and scores delta. InsufficientData and
/// DegenerateRegressor become a NoEstimate entry rather than an exception.
EstimateEntry estimate_from(std::uint32_t s, std::uint32_t k, const GradSumRecord& gradsum, const ParamVector& delta,
                            std::span<const EfSample> samples);

/// Re-derives the estimate of round s, class k from a manifest on disk.
EstimateEntry estimate_round(const RunManifest& manifest, std::uint32_t s, std::uint32_t k);

/// Regenerates the line-delimited calibration report from the manifest.
void write_report(const RunManifest& manifest);

struct BenchRow {
  std::size_t eval_size = 0;
  double estimate_seconds = 0.0;   // median over reps, all classes
  double full_test_seconds = 0.0;  // median over reps
  std::uint32_t reps = 0;
};

struct BenchmarkInputs {
  const MlpNetwork* before = nullptr;
  const ParamVector* delta = nullptr;
  std::vector<std::optional<RegressionModel>> models;  // per class
  const Dataset* pool = nullptr;
  GradPath path = GradPath::PerSample;
  std::uint32_t batch_size = 50;
};

/// For each size, builds an evaluation set of that many samples (pool ids
/// taken cyclically), precomputes per-class GradSums outside the timer, then
/// reports the median over `reps` of the post-update estimate time and of a
/// full re-test over the set.
std::vector<BenchRow> benchmark(const BenchmarkInputs& in, std::span<const std::size_t> sizes, std::uint32_t reps = 5);

/// Benchmark at the final round of a completed run.
std::vector<BenchRow> benchmark(const RunManifest& manifest, std::span<const std::size_t> sizes,
                                std::uint32_t reps = 5);

std::string bench_csv(std::span<const BenchRow> rows);

/// Exclusive lock on a run directory, held for the lifetime of the object.
/// Throws Lock when another command already holds it.
class DirectoryLock {
 public:
  explicit DirectoryLock(const std::filesystem::path& dir);
  ~DirectoryLock();
  DirectoryLock(const DirectoryLock&) = delete;
  DirectoryLock& operator=(const DirectoryLock&) = delete;

 private:
  std::filesystem::path path_;
};

/// Loads or generates the dataset a config describes.
Dataset load_run_dataset(const RunConfig& cfg);

}  // namespace efest
