#include "efest/train.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "efest/error.hpp"
#include "efest/rng.hpp"

namespace efest {

void TrainConfig::validate() const {
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate))
    fail(Errc::Configuration, "learning_rate must be finite and non-negative");
  if (batch_size == 0) fail(Errc::Configuration, "batch_size must be positive");
  if (epochs_per_round == 0) fail(Errc::Configuration, "epochs_per_round must be positive");
}

MlpNetwork init_network(const Layout& layout, std::uint64_t seed) {
  layout.validate();
  MlpNetwork net(layout);
  Rng rng(derive_seed(seed, 0, "init"));
  auto values = net.params().values();
  std::size_t pos = 0;
  for (std::size_t l = 0; l < layout.num_layers(); ++l) {
    const double fan_in = layout.dims[l];
    const double fan_out = layout.dims[l + 1];
    const double bound = std::sqrt(6.0 / (fan_in + fan_out));
    for (std::uint32_t j = 0; j < layout.dims[l + 1]; ++j) {
      for (std::uint32_t i = 0; i < layout.dims[l]; ++i) values[pos++] = rng.uniform(-bound, bound);
      values[pos++] = 0.0;
    }
  }
  return net;
}

double mean_loss(const MlpNetwork& net, const Dataset& data, std::span<const std::uint64_t> ids) {
  if (ids.empty()) fail(Errc::EmptyInput, "mean loss over an empty set");
  double total = 0.0;
  for (auto id : ids) {
    const auto& ex = data.at(id);
    total += cross_entropy(forward(net, ex.features), ex.label);
  }
  return total / static_cast<double>(ids.size());
}

namespace {

// Adjusts (after, delta) until before + delta == after and after - before == delta
// both hold bit-exactly; converges in one or two passes for ordinary values.
void reconcile(const ParamVector& before, ParamVector& after, ParamVector& delta) {
  const auto b = before.values();
  auto a = after.values();
  auto d = delta.values();
  for (std::size_t i = 0; i < b.size(); ++i) {
    for (int pass = 0; pass < 8; ++pass) {
      d[i] = a[i] - b[i];
      const double next = b[i] + d[i];
      if (next == a[i]) break;
      a[i] = next;
    }
  }
}

}  // namespace

RoundResult train_round(const MlpNetwork& net, const Dataset& data, std::span<const std::uint64_t> train_ids,
                        const TrainConfig& cfg, std::uint32_t round) {
  cfg.validate();
  if (train_ids.empty()) fail(Errc::EmptyInput, "training round " + std::to_string(round) + " has no data");
  if (data.dim != net.input_dim()) fail(Errc::InputShape, "dataset dimension does not match network input");

  std::vector<std::uint64_t> order(train_ids.begin(), train_ids.end());
  std::sort(order.begin(), order.end());
  Rng rng(derive_seed(cfg.seed, round, "shuffle"));

  MlpNetwork current = net;
  const std::size_t classes = net.num_classes();
  for (std::uint32_t epoch = 0; epoch < cfg.epochs_per_round; ++epoch) {
    rng.shuffle(order);
    std::size_t batch_index = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size, ++batch_index) {
      const std::size_t count = std::min<std::size_t>(cfg.batch_size, order.size() - start);
      const std::span<const std::uint64_t> batch(order.data() + start, count);
      const double inv = 1.0 / static_cast<double>(count);
      double loss = 0.0;
      ParamVector grad = ParamVector::zeros(net.layout());
      const auto diverged = [&] {
        fail(Errc::Divergence, "non-finite loss in round " + std::to_string(round) + ", epoch " +
                                   std::to_string(epoch) + ", batch " + std::to_string(batch_index));
      };
      try {
        batch_backward(
            current, data, batch,
            [&](std::size_t row, std::span<const double> probs, std::span<double> delta) {
              const auto label = data.at(batch[row]).label;
              loss -= std::log(std::clamp(probs[label], kProbFloor, 1.0));
              for (std::size_t c = 0; c < classes; ++c) delta[c] = probs[c] * inv;
              delta[label] -= inv;
            },
            1.0, grad);
      } catch (const Error& e) {
        if (e.code() != Errc::NumericOverflow) throw;
        diverged();
      }
      if (!std::isfinite(loss)) diverged();
      grad *= -cfg.learning_rate;
      current.params() += grad;
    }
  }

  ParamVector after = current.params();
  ParamVector delta = ParamVector::zeros(net.layout());
  reconcile(net.params(), after, delta);
  return RoundResult{MlpNetwork(std::move(after)), std::move(delta)};
}

}  // namespace efest
