#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "efest/dataset.hpp"
#include "efest/mlp.hpp"
#include "efest/param_vector.hpp"

namespace efest {

/// Split of one class's evaluation samples by inference outcome under a model.
struct ClassPartition {
  std::uint32_t klass = 0;
  std::uint32_t round = 0;               // checkpoint the partition was computed under
  std::vector<std::uint64_t> failed;     // fst != label, ascending ids
  std::vector<std::uint64_t> succeeded;  // fst == label, ascending ids
};

enum class GradPath : std::uint8_t { PerSample = 0, MiniBatch = 1 };

/// Pre-aggregated gradient of one class's evaluation samples under checkpoint
/// `round`:  sum over failed of -grad(PL)  minus  sum over succeeded of -grad(NL).
struct GradSumRecord {
  std::uint32_t round = 0;
  std::uint32_t klass = 0;
  GradPath path = GradPath::PerSample;
  std::uint32_t batch_size = 0;  // 0 on the per-sample path
  ParamVector vector;
  std::uint32_t sample_count = 0;
  std::uint32_t failed_count = 0;
  std::uint32_t succeeded_count = 0;

  friend bool operator==(const GradSumRecord&, const GradSumRecord&) = default;
};

/// Splits the class-k members of `eval_ids` into failed/succeeded under `net`.
/// Throws EmptyClass when no member of `eval_ids` has label k.
ClassPartition partition(const MlpNetwork& net, const Dataset& data, std::span<const std::uint64_t> eval_ids,
                         std::uint32_t k, std::uint32_t round = 0);

/// L(y, t) - L(y, fst)
double positive_loss(const Prediction& pred, std::uint32_t t);
/// L(y, snd) - L(y, t)
double negative_loss(const Prediction& pred, std::uint32_t t);

/// Gradient with respect to W of PL, with fst taken from the forward pass and held fixed.
ParamVector grad_positive_loss(const MlpNetwork& net, std::span<const double> x, std::uint32_t t);
/// Gradient with respect to W of NL, with snd taken from the forward pass and held fixed.
ParamVector grad_negative_loss(const MlpNetwork& net, std::span<const double> x, std::uint32_t t);

/// Logit sensitivities of PL and NL. For softmax + cross-entropy these do not
/// depend on the probabilities: onehot(fst) - onehot(t) and onehot(t) - onehot(snd).
std::vector<double> positive_output_delta(const Prediction& pred, std::uint32_t t);
std::vector<double> negative_output_delta(const Prediction& pred, std::uint32_t t);

/// An all-zero record with no samples; the identity for merge_gradsum.
GradSumRecord empty_gradsum(const Layout& layout, std::uint32_t round, std::uint32_t k,
                            GradPath path = GradPath::PerSample, std::uint32_t batch_size = 0);

/// Per-sample aggregation over an existing partition, in ascending sample id.
/// The partition may be empty, in which case the result is empty_gradsum().
GradSumRecord grad_sum(const MlpNetwork& net, const Dataset& data, const ClassPartition& part);

/// Mini-batch aggregation over an existing partition. Failed and succeeded ids
/// are each chunked in ascending order into batches of at most batch_size; each
/// batch's mean-loss gradient comes from one batched reverse pass and is scaled
/// by the batch cardinality.
GradSumRecord grad_sum_minibatch(const MlpNetwork& net, const Dataset& data, const ClassPartition& part,
                                 std::uint32_t batch_size);

/// Convenience overloads that partition first (and therefore throw EmptyClass).
GradSumRecord grad_sum(const MlpNetwork& net, const Dataset& data, std::span<const std::uint64_t> eval_ids,
                       std::uint32_t k, std::uint32_t round = 0);
GradSumRecord grad_sum_minibatch(const MlpNetwork& net, const Dataset& data, std::span<const std::uint64_t> eval_ids,
                                 std::uint32_t k, std::uint32_t batch_size, std::uint32_t round = 0);

/// EF = GradSum . delta. Cost is linear in the parameter count only.
double effect(const GradSumRecord& gs, const ParamVector& delta);

/// Adds two records computed under the same checkpoint over disjoint sample sets.
/// Throws CacheConsistency when round, class, path, batch size or layout differ.
GradSumRecord merge_gradsum(const GradSumRecord& a, const GradSumRecord& b);

}  // namespace efest
