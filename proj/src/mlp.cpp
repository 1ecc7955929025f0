#include "efest/mlp.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <string>

#include "efest/error.hpp"

namespace efest {
namespace {

using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstLayerMap = Eigen::Map<const RowMajor>;
using LayerMap = Eigen::Map<RowMajor>;
using ConstVecMap = Eigen::Map<const Eigen::VectorXd>;
using VecMap = Eigen::Map<Eigen::VectorXd>;

// Layer l as a fan_out x (fan_in + 1) row-major block; last column is the bias.
ConstLayerMap layer_block(const ParamVector& p, std::size_t l) {
  const auto& dims = p.layout().dims;
  return ConstLayerMap(p.values().data() + p.layout().layer_offset(l), dims[l + 1], dims[l] + 1);
}

LayerMap layer_block(ParamVector& p, std::size_t l) {
  const auto& dims = p.layout().dims;
  return LayerMap(p.values().data() + p.layout().layer_offset(l), dims[l + 1], dims[l] + 1);
}

}  // namespace

MlpNetwork::MlpNetwork(const Layout& layout) : params_(ParamVector::zeros(layout)) { layout.validate(); }

MlpNetwork::MlpNetwork(ParamVector params) : params_(std::move(params)) {
  layout().validate();
  for (double v : params_.values())
    if (!std::isfinite(v)) fail(Errc::NumericOverflow, "network parameter is not finite");
}

Prediction make_prediction(std::vector<double> probs) {
  if (probs.size() < 2) fail(Errc::Domain, "prediction needs at least two classes");
  Prediction pred;
  std::uint32_t fst = 0;
  for (std::uint32_t k = 1; k < probs.size(); ++k)
    if (probs[k] > probs[fst]) fst = k;
  std::uint32_t snd = fst == 0 ? 1 : 0;
  for (std::uint32_t k = 0; k < probs.size(); ++k)
    if (k != fst && probs[k] > probs[snd]) snd = k;
  pred.probs = std::move(probs);
  pred.fst = fst;
  pred.snd = snd;
  return pred;
}

ForwardTrace forward_trace(const MlpNetwork& net, std::span<const double> x) {
  const Layout& layout = net.layout();
  if (x.size() != layout.input_dim())
    fail(Errc::InputShape, "input has " + std::to_string(x.size()) + " features, network expects " +
                               std::to_string(layout.input_dim()));
  ForwardTrace trace;
  trace.activations.reserve(layout.num_layers());
  trace.activations.emplace_back(x.begin(), x.end());

  Eigen::VectorXd logits;
  for (std::size_t l = 0; l < layout.num_layers(); ++l) {
    const auto block = layer_block(net.params(), l);
    const auto& in = trace.activations.back();
    const ConstVecMap a(in.data(), static_cast<Eigen::Index>(in.size()));
    Eigen::VectorXd z = block.leftCols(block.cols() - 1) * a + block.col(block.cols() - 1);
    if (!z.allFinite()) fail(Errc::NumericOverflow, "non-finite pre-activation in layer " + std::to_string(l));
    if (l + 1 < layout.num_layers()) {
      std::vector<double> h(static_cast<std::size_t>(z.size()));
      for (Eigen::Index i = 0; i < z.size(); ++i) h[i] = z[i] > 0.0 ? z[i] : 0.0;
      trace.activations.push_back(std::move(h));
    } else {
      logits = std::move(z);
    }
  }

  const double top = logits.maxCoeff();
  std::vector<double> probs(static_cast<std::size_t>(logits.size()));
  double total = 0.0;
  for (std::size_t k = 0; k < probs.size(); ++k) {
    probs[k] = std::exp(logits[static_cast<Eigen::Index>(k)] - top);
    total += probs[k];
  }
  for (double& p : probs) p /= total;
  trace.prediction = make_prediction(std::move(probs));
  return trace;
}

Prediction forward(const MlpNetwork& net, std::span<const double> x) {
  return std::move(forward_trace(net, x).prediction);
}

double cross_entropy(const Prediction& pred, std::uint32_t k) {
  if (k >= pred.probs.size())
    fail(Errc::Domain, "class id " + std::to_string(k) + " out of range for " +
                           std::to_string(pred.probs.size()) + " classes");
  return -std::log(std::clamp(pred.probs[k], kProbFloor, 1.0));
}

void backward(const MlpNetwork& net, const ForwardTrace& trace, std::span<const double> output_delta,
              double scale, ParamVector& grad) {
  require_same_layout(net.params(), grad, "backward");
  const Layout& layout = net.layout();
  if (output_delta.size() != layout.num_classes())
    fail(Errc::InputShape, "output delta length does not match class count");

  Eigen::VectorXd delta = ConstVecMap(output_delta.data(), static_cast<Eigen::Index>(output_delta.size()));
  for (std::size_t l = layout.num_layers(); l-- > 0;) {
    const auto& in = trace.activations[l];
    const ConstVecMap a(in.data(), static_cast<Eigen::Index>(in.size()));
    auto g = layer_block(grad, l);
    const Eigen::Index fan_in = static_cast<Eigen::Index>(in.size());
    for (Eigen::Index j = 0; j < delta.size(); ++j) {
      const double d = scale * delta[j];
      if (d == 0.0) continue;
      g.row(j).head(fan_in) += d * a.transpose();
      g(j, fan_in) += d;
    }
    if (l == 0) break;
    const auto w = layer_block(net.params(), l);
    Eigen::VectorXd prev = w.leftCols(fan_in).transpose() * delta;
    for (Eigen::Index i = 0; i < prev.size(); ++i)
      if (!(a[i] > 0.0)) prev[i] = 0.0;
    delta = std::move(prev);
  }
}

ParamVector grad_class_loss(const MlpNetwork& net, std::span<const double> x, std::uint32_t k) {
  const ForwardTrace trace = forward_trace(net, x);
  const auto& probs = trace.prediction.probs;
  if (k >= probs.size()) fail(Errc::Domain, "class id " + std::to_string(k) + " out of range");
  std::vector<double> delta(probs);
  delta[k] -= 1.0;
  ParamVector grad = ParamVector::zeros(net.layout());
  backward(net, trace, delta, 1.0, grad);
  return grad;
}

std::size_t count_correct(const MlpNetwork& net, const Dataset& data, std::span<const std::uint64_t> ids) {
  std::size_t correct = 0;
  for (auto id : ids) {
    const auto& ex = data.at(id);
    if (forward(net, ex.features).fst == ex.label) ++correct;
  }
  return correct;
}

double accuracy(const MlpNetwork& net, const Dataset& data) {
  if (data.examples.empty()) fail(Errc::EmptyInput, "accuracy of an empty dataset");
  std::size_t correct = 0;
  for (const auto& ex : data.examples)
    if (forward(net, ex.features).fst == ex.label) ++correct;
  return static_cast<double>(correct) / static_cast<double>(data.examples.size());
}

}  // namespace efest

namespace efest {

void batch_backward(const MlpNetwork& net, const Dataset& data, std::span<const std::uint64_t> ids,
                    const OutputDeltaFn& output_delta, double scale, ParamVector& grad) {
  require_same_layout(net.params(), grad, "batch_backward");
  if (ids.empty()) return;
  const Layout& layout = net.layout();
  const auto rows = static_cast<Eigen::Index>(ids.size());

  std::vector<RowMajor> acts;
  acts.reserve(layout.num_layers());
  acts.emplace_back(rows, layout.input_dim());
  for (Eigen::Index r = 0; r < rows; ++r) {
    const auto& ex = data.at(ids[static_cast<std::size_t>(r)]);
    if (ex.features.size() != layout.input_dim()) fail(Errc::InputShape, "batch input has wrong feature count");
    acts[0].row(r) = ConstVecMap(ex.features.data(), static_cast<Eigen::Index>(ex.features.size())).transpose();
  }

  RowMajor logits;
  for (std::size_t l = 0; l < layout.num_layers(); ++l) {
    const auto block = layer_block(net.params(), l);
    const Eigen::Index fan_in = block.cols() - 1;
    RowMajor z = acts.back() * block.leftCols(fan_in).transpose();
    z.rowwise() += block.col(fan_in).transpose();
    if (!z.allFinite()) fail(Errc::NumericOverflow, "non-finite pre-activation in layer " + std::to_string(l));
    if (l + 1 < layout.num_layers())
      acts.push_back(z.cwiseMax(0.0));
    else
      logits = std::move(z);
  }

  const auto classes = static_cast<std::size_t>(layout.num_classes());
  RowMajor delta(rows, static_cast<Eigen::Index>(classes));
  std::vector<double> probs(classes);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const double top = logits.row(r).maxCoeff();
    double total = 0.0;
    for (std::size_t k = 0; k < classes; ++k) {
      probs[k] = std::exp(logits(r, static_cast<Eigen::Index>(k)) - top);
      total += probs[k];
    }
    for (double& p : probs) p /= total;
    output_delta(static_cast<std::size_t>(r), probs, std::span<double>(delta.row(r).data(), classes));
  }

  for (std::size_t l = layout.num_layers(); l-- > 0;) {
    const RowMajor& a = acts[l];
    auto g = layer_block(grad, l);
    const Eigen::Index fan_in = a.cols();
    g.leftCols(fan_in).noalias() += scale * (delta.transpose() * a);
    g.col(fan_in) += scale * delta.colwise().sum().transpose();
    if (l == 0) break;
    const auto w = layer_block(net.params(), l);
    RowMajor prev = delta * w.leftCols(fan_in);
    prev = prev.cwiseProduct((a.array() > 0.0).cast<double>().matrix());
    delta = std::move(prev);
  }
}

}  // namespace efest
