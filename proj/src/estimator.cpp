#include "efest/estimator.hpp"

#include <algorithm>
#include <string>

#include "efest/error.hpp"

namespace efest {

ClassPartition partition(const MlpNetwork& net, const Dataset& data, std::span<const std::uint64_t> eval_ids,
                         std::uint32_t k, std::uint32_t round) {
  std::vector<std::uint64_t> ids(eval_ids.begin(), eval_ids.end());
  std::sort(ids.begin(), ids.end());
  ClassPartition part;
  part.klass = k;
  part.round = round;
  for (auto id : ids) {
    const auto& ex = data.at(id);
    if (ex.label != k) continue;
    if (forward(net, ex.features).fst == k)
      part.succeeded.push_back(id);
    else
      part.failed.push_back(id);
  }
  if (part.failed.empty() && part.succeeded.empty())
    fail(Errc::EmptyClass, "evaluation set has no samples of class " + std::to_string(k));
  return part;
}

double positive_loss(const Prediction& pred, std::uint32_t t) {
  return cross_entropy(pred, t) - cross_entropy(pred, pred.fst);
}

double negative_loss(const Prediction& pred, std::uint32_t t) {
  return cross_entropy(pred, pred.snd) - cross_entropy(pred, t);
}

std::vector<double> positive_output_delta(const Prediction& pred, std::uint32_t t) {
  if (t >= pred.probs.size()) fail(Errc::Domain, "class id out of range");
  std::vector<double> d(pred.probs.size(), 0.0);
  d[pred.fst] += 1.0;
  d[t] -= 1.0;
  return d;
}

std::vector<double> negative_output_delta(const Prediction& pred, std::uint32_t t) {
  if (t >= pred.probs.size()) fail(Errc::Domain, "class id out of range");
  std::vector<double> d(pred.probs.size(), 0.0);
  d[t] += 1.0;
  d[pred.snd] -= 1.0;
  return d;
}

ParamVector grad_positive_loss(const MlpNetwork& net, std::span<const double> x, std::uint32_t t) {
  const ForwardTrace trace = forward_trace(net, x);
  ParamVector grad = ParamVector::zeros(net.layout());
  backward(net, trace, positive_output_delta(trace.prediction, t), 1.0, grad);
  return grad;
}

ParamVector grad_negative_loss(const MlpNetwork& net, std::span<const double> x, std::uint32_t t) {
  const ForwardTrace trace = forward_trace(net, x);
  ParamVector grad = ParamVector::zeros(net.layout());
  backward(net, trace, negative_output_delta(trace.prediction, t), 1.0, grad);
  return grad;
}

GradSumRecord empty_gradsum(const Layout& layout, std::uint32_t round, std::uint32_t k, GradPath path,
                            std::uint32_t batch_size) {
  GradSumRecord rec;
  rec.round = round;
  rec.klass = k;
  rec.path = path;
  rec.batch_size = path == GradPath::PerSample ? 0 : batch_size;
  rec.vector = ParamVector::zeros(layout);
  return rec;
}

namespace {

GradSumRecord record_for(const MlpNetwork& net, const ClassPartition& part, GradPath path, std::uint32_t batch) {
  GradSumRecord rec = empty_gradsum(net.layout(), part.round, part.klass, path, batch);
  rec.failed_count = static_cast<std::uint32_t>(part.failed.size());
  rec.succeeded_count = static_cast<std::uint32_t>(part.succeeded.size());
  rec.sample_count = rec.failed_count + rec.succeeded_count;
  return rec;
}

}  // namespace

GradSumRecord grad_sum(const MlpNetwork& net, const Dataset& data, const ClassPartition& part) {
  GradSumRecord rec = record_for(net, part, GradPath::PerSample, 0);
  // Walk both sorted lists together so accumulation follows ascending sample id.
  auto f = part.failed.begin();
  auto t = part.succeeded.begin();
  while (f != part.failed.end() || t != part.succeeded.end()) {
    const bool take_failed = t == part.succeeded.end() || (f != part.failed.end() && *f < *t);
    const std::uint64_t id = take_failed ? *f++ : *t++;
    const auto& ex = data.at(id);
    const ForwardTrace trace = forward_trace(net, ex.features);
    if (take_failed)
      backward(net, trace, positive_output_delta(trace.prediction, ex.label), -1.0, rec.vector);
    else
      backward(net, trace, negative_output_delta(trace.prediction, ex.label), 1.0, rec.vector);
  }
  return rec;
}

GradSumRecord grad_sum_minibatch(const MlpNetwork& net, const Dataset& data, const ClassPartition& part,
                                 std::uint32_t batch_size) {
  if (batch_size == 0) fail(Errc::Configuration, "mini-batch size must be at least 1");
  GradSumRecord rec = record_for(net, part, GradPath::MiniBatch, batch_size);

  // fst/snd are frozen from the per-sample partition pass.
  auto run = [&](const std::vector<std::uint64_t>& ids, bool failed_side) {
    std::vector<Prediction> frozen;
    frozen.reserve(ids.size());
    for (auto id : ids) frozen.push_back(forward(net, data.at(id).features));
    for (std::size_t start = 0; start < ids.size(); start += batch_size) {
      const std::size_t count = std::min<std::size_t>(batch_size, ids.size() - start);
      const std::span<const std::uint64_t> batch(ids.data() + start, count);
      const double inv = 1.0 / static_cast<double>(count);
      ParamVector mean_grad = ParamVector::zeros(net.layout());
      batch_backward(
          net, data, batch,
          [&](std::size_t row, std::span<const double>, std::span<double> delta) {
            const Prediction& pred = frozen[start + row];
            const auto label = data.at(batch[row]).label;
            const auto d = failed_side ? positive_output_delta(pred, label) : negative_output_delta(pred, label);
            for (std::size_t c = 0; c < d.size(); ++c) delta[c] = d[c] * inv;
          },
          1.0, mean_grad);
      // -(|B| * grad PL(B)) on the failed side, +(|B| * grad NL(B)) on the succeeded side.
      mean_grad *= failed_side ? -static_cast<double>(count) : static_cast<double>(count);
      rec.vector += mean_grad;
    }
  };
  run(part.failed, true);
  run(part.succeeded, false);
  return rec;
}

GradSumRecord grad_sum(const MlpNetwork& net, const Dataset& data, std::span<const std::uint64_t> eval_ids,
                       std::uint32_t k, std::uint32_t round) {
  return grad_sum(net, data, partition(net, data, eval_ids, k, round));
}

GradSumRecord grad_sum_minibatch(const MlpNetwork& net, const Dataset& data, std::span<const std::uint64_t> eval_ids,
                                 std::uint32_t k, std::uint32_t batch_size, std::uint32_t round) {
  return grad_sum_minibatch(net, data, partition(net, data, eval_ids, k, round), batch_size);
}

double effect(const GradSumRecord& gs, const ParamVector& delta) { return dot(gs.vector, delta); }

GradSumRecord merge_gradsum(const GradSumRecord& a, const GradSumRecord& b) {
  if (a.round != b.round || a.klass != b.klass || a.path != b.path || a.batch_size != b.batch_size ||
      !a.vector.same_layout(b.vector))
    fail(Errc::CacheConsistency, "cannot merge GradSum records with different provenance (round " +
                                     std::to_string(a.round) + "/" + std::to_string(b.round) + ", class " +
                                     std::to_string(a.klass) + "/" + std::to_string(b.klass) + ")");
  GradSumRecord out = a;
  out.vector += b.vector;
  out.sample_count += b.sample_count;
  out.failed_count += b.failed_count;
  out.succeeded_count += b.succeeded_count;
  return out;
}

}  // namespace efest
