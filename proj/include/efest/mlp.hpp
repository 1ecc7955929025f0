#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "efest/dataset.hpp"
#include "efest/param_vector.hpp"

namespace efest {

/// Fully connected classifier: rectifier hidden layers, softmax output.
/// Parameters are held directly in canonical ParamVector order.
class MlpNetwork {
 public:
  explicit MlpNetwork(const Layout& layout);  // all parameters zero
  explicit MlpNetwork(ParamVector params);    // unflatten

  const Layout& layout() const { return params_.layout(); }
  std::uint32_t input_dim() const { return layout().input_dim(); }
  std::uint32_t num_classes() const { return layout().num_classes(); }
  std::size_t param_count() const { return params_.size(); }

  const ParamVector& params() const { return params_; }
  ParamVector& params() { return params_; }

  ParamVector flatten() const { return params_; }

 private:
  ParamVector params_;
};

struct Prediction {
  std::vector<double> probs;
  std::uint32_t fst = 0;
  std::uint32_t snd = 1;
};

/// Builds a Prediction from a probability vector, picking fst/snd with the
/// lowest class index winning ties.
Prediction make_prediction(std::vector<double> probs);

/// Per-layer activations kept for the backward pass.
struct ForwardTrace {
  std::vector<std::vector<double>> activations;  // [0] = input, then each hidden layer post-ReLU
  Prediction prediction;
};

ForwardTrace forward_trace(const MlpNetwork& net, std::span<const double> x);
Prediction forward(const MlpNetwork& net, std::span<const double> x);

/// Smallest probability used inside cross_entropy.
inline constexpr double kProbFloor = 1e-12;

/// -ln(max(probs[k], kProbFloor))
double cross_entropy(const Prediction& pred, std::uint32_t k);

/// Accumulates scale * dLoss/dW into `grad`, where `output_delta` is the
/// loss sensitivity with respect to the output pre-activations (logits).
/// The ReLU subgradient at zero is taken as zero.
void backward(const MlpNetwork& net, const ForwardTrace& trace, std::span<const double> output_delta,
              double scale, ParamVector& grad);

/// Gradient of cross_entropy(forward(net, x), k) with respect to all parameters.
ParamVector grad_class_loss(const MlpNetwork& net, std::span<const double> x, std::uint32_t k);

/// Receives one batch row's softmax output and writes that row's output delta.
using OutputDeltaFn = std::function<void(std::size_t row, std::span<const double> probs, std::span<double> delta)>;

/// Batched forward and reverse pass over `ids` as one matrix computation.
/// Accumulates scale * sum_rows dLoss_row/dW into `grad`, where each row's
/// loss sensitivity with respect to the logits comes from `output_delta`.
void batch_backward(const MlpNetwork& net, const Dataset& data, std::span<const std::uint64_t> ids,
                    const OutputDeltaFn& output_delta, double scale, ParamVector& grad);

/// Number of examples among `ids` whose fst equals their label.
std::size_t count_correct(const MlpNetwork& net, const Dataset& data, std::span<const std::uint64_t> ids);

/// Fraction of the dataset classified correctly.
double accuracy(const MlpNetwork& net, const Dataset& data);

}  // namespace efest
