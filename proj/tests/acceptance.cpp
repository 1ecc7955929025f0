// Acceptance suite: one PASS/FAIL line per criterion.
//
//   acceptance [--only N] [--config FILE] [--fixture FILE]
//   acceptance --pilot FILE   runs only the independent calibration oracle and
//                             writes its per-class statistics and thresholds

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "efest/binary_io.hpp"
#include "efest/error.hpp"
#include "efest/harness.hpp"
#include "efest/regressor.hpp"
#include "efest/train.hpp"
#include "helpers.hpp"
#include "oracles.hpp"

using namespace efest;
namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

// Tolerances.
constexpr double kFdRel = 1e-4;
constexpr double kFdAbs = 1e-6;
constexpr double kPathRel = 1e-9;
constexpr double kBatchRel = 1e-9;
constexpr double kRatioLo = 0.2;
constexpr double kRatioHi = 0.33;
constexpr double kEstimateSpread = 2.0;
constexpr double kFullTestGrowth = 3.0;
constexpr double kPipelineRel = 1e-9;

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double rel_diff(double a, double b) { return std::abs(a - b) / std::max({1.0, std::abs(a), std::abs(b)}); }

// Relative difference scaled by the magnitude of the terms that were summed,
// so cancellation in a signed sum does not inflate it.
double rel_to(double got, double want, double scale) { return std::abs(got - want) / std::max(1.0, scale); }

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// ---------------------------------------------------------------------------
// 1. Gradient fidelity

Outcome gradient_fidelity() {
  const Layout layout{{8, 16, 4}};
  std::size_t checked = 0, bad = 0;
  double worst = 0.0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const MlpNetwork net = testing::random_net(layout, seed);
    const std::vector<double> w(net.params().values().begin(), net.params().values().end());
    Rng rng(derive_seed(seed, 0, "acceptance-fd"));
    const auto x = testing::random_vector(8, rng, 2.0);
    const auto probs = oracle::forward(layout, w, x).probs;
    const std::uint32_t fst = oracle::argmax(probs);
    const std::uint32_t snd = oracle::second(probs);
    const std::uint32_t t = (fst + 1 + static_cast<std::uint32_t>(rng.below(3))) % 4;

    const ParamVector gp = grad_positive_loss(net, x, t);
    const ParamVector gn = grad_negative_loss(net, x, fst);
    auto pl = [&](const std::vector<double>& p) {
      return -oracle::log_prob(layout, p, x, t) + oracle::log_prob(layout, p, x, fst);
    };
    auto nl = [&](const std::vector<double>& p) {
      return -oracle::log_prob(layout, p, x, snd) + oracle::log_prob(layout, p, x, fst);
    };
    for (int n = 0; n < 20; ++n) {
      const std::size_t i = rng.below(w.size());
      for (auto [g, f] : {std::pair{gp[i], oracle::central_difference(pl, w, i)},
                          std::pair{gn[i], oracle::central_difference(nl, w, i)}}) {
        ++checked;
        if (!oracle::close(g, f, kFdRel, kFdAbs)) ++bad;
        worst = std::max(worst, std::abs(g - f) / std::max(kFdAbs / kFdRel, std::abs(f)));
      }
    }
  }
  return {bad == 0, fmt("%zu coordinates, %zu outside rel %.0e / abs %.0e, worst scaled error %.2e", checked, bad,
                        kFdRel, kFdAbs, worst)};
}

// ---------------------------------------------------------------------------
// 2. Path equivalence and 3. mini-batch equivalence share their instances.

struct Instance {
  MlpNetwork net;
  Dataset data;
  ParamVector delta;
};

std::vector<Instance> instances() {
  std::vector<Instance> out;
  for (std::uint64_t seed = 11; seed <= 15; ++seed) {
    const Layout layout{{6, 12, 3}};
    Instance in{testing::random_net(layout, seed), testing::random_dataset(200, 6, 3, seed + 100),
                ParamVector::zeros(layout)};
    Rng rng(seed + 200);
    in.delta = ParamVector(layout, testing::random_vector(layout.param_count(), rng, 0.05));
    out.push_back(std::move(in));
  }
  return out;
}

Outcome path_equivalence() {
  double worst = 0.0;
  std::size_t cases = 0;
  for (const Instance& in : instances()) {
    const auto ids = testing::all_ids(in.data);
    for (std::uint32_t k = 0; k < 3; ++k) {
      // Per-sample improvements, each gradient formed from two class-loss gradients.
      double pi = 0.0, ni = 0.0, scale = 0.0;
      for (const auto& ex : in.data.examples) {
        if (ex.label != k) continue;
        const auto probs = oracle::forward(in.net.layout(), in.net.params().values(), ex.features).probs;
        const std::uint32_t fst = oracle::argmax(probs);
        const std::uint32_t snd = oracle::second(probs);
        if (fst != k) {
          const ParamVector g = grad_class_loss(in.net, ex.features, k) - grad_class_loss(in.net, ex.features, fst);
          const double v = -dot(g, in.delta);
          pi += v;
          scale += std::abs(v);
        } else {
          const ParamVector g = grad_class_loss(in.net, ex.features, snd) - grad_class_loss(in.net, ex.features, k);
          const double v = -dot(g, in.delta);
          ni += v;
          scale += std::abs(v);
        }
      }
      const double ef = effect(grad_sum(in.net, in.data, ids, k), in.delta);
      worst = std::max(worst, rel_to(ef, pi - ni, scale));
      ++cases;
    }
  }
  return {worst <= kPathRel, fmt("%zu instance/class cases, max relative deviation %.2e (tol %.0e)", cases, worst,
                                 kPathRel)};
}

Outcome minibatch_equivalence() {
  double worst = 0.0;
  std::size_t cases = 0;
  for (const Instance& in : instances()) {
    const auto ids = testing::all_ids(in.data);
    for (std::uint32_t k = 0; k < 3; ++k) {
      const ClassPartition part = partition(in.net, in.data, ids, k);
      const GradSumRecord base = grad_sum(in.net, in.data, part);
      const double ef = effect(base, in.delta);
      double scale = 0.0;
      for (std::size_t i = 0; i < base.vector.size(); ++i) scale += std::abs(base.vector[i] * in.delta[i]);
      const auto size = static_cast<std::uint32_t>(part.failed.size() + part.succeeded.size());
      for (std::uint32_t b : {1u, 7u, 50u, size}) {
        const double ef_mb = effect(grad_sum_minibatch(in.net, in.data, part, b), in.delta);
        worst = std::max(worst, rel_to(ef_mb, ef, scale));
        ++cases;
      }
    }
  }
  return {worst <= kBatchRel,
          fmt("batch sizes {1,7,50,|X|}, %zu cases, max relative deviation %.2e (tol %.0e)", cases, worst, kBatchRel)};
}

// ---------------------------------------------------------------------------
// 4. First-order property

Outcome first_order() {
  const Layout layout{{6, 12, 3}};
  std::vector<double> r1, r2;
  for (std::uint64_t trial = 0; trial < 20; ++trial) {
    const MlpNetwork net = testing::random_net(layout, 300 + trial);
    const Dataset data = testing::random_dataset(60, 6, 3, 400 + trial);
    const std::uint32_t k = static_cast<std::uint32_t>(trial % 3);
    const ClassPartition part = partition(net, data, testing::all_ids(data), k);
    if (part.failed.empty()) continue;
    Rng rng(500 + trial);
    const auto dir = testing::random_vector(layout.param_count(), rng, 1.0);
    const ParamVector delta(layout, dir);

    // Failed samples with their frozen target and top class.
    struct Item {
      std::vector<double> x;
      std::uint32_t fst;
    };
    std::vector<Item> items;
    for (auto id : part.failed)
      items.push_back({data.at(id).features,
                       oracle::argmax(oracle::forward(layout, net.params().values(), data.at(id).features).probs)});
    const std::vector<double> w(net.params().values().begin(), net.params().values().end());
    auto total_pl = [&](double eps) {
      std::vector<double> p = w;
      for (std::size_t i = 0; i < p.size(); ++i) p[i] += eps * dir[i];
      double s = 0.0;
      for (const auto& it : items) s += -oracle::log_prob(layout, p, it.x, k) + oracle::log_prob(layout, p, it.x, it.fst);
      return s;
    };
    ParamVector g = ParamVector::zeros(layout);
    for (const auto& it : items) g += grad_positive_loss(net, it.x, k);
    const double base = total_pl(0.0);
    const double slope = dot(g, delta);
    auto err = [&](double eps) { return std::abs((total_pl(eps) - base) - eps * slope); };
    const double e1 = err(1e-2), e2 = err(5e-3), e3 = err(2.5e-3);
    r1.push_back(e2 / e1);
    r2.push_back(e3 / e2);
  }
  const double m1 = median(r1), m2 = median(r2);
  const bool ok = r1.size() == 20 && m1 >= kRatioLo && m1 <= kRatioHi && m2 >= kRatioLo && m2 <= kRatioHi;
  return {ok, fmt("%zu trials, median err(eps/2)/err(eps) = %.4f (1e-2 -> 5e-3), %.4f (5e-3 -> 2.5e-3); band [%.2f, %.2f]",
                  r1.size(), m1, m2, kRatioLo, kRatioHi)};
}

// ---------------------------------------------------------------------------
// 5. Constant-time estimate

Outcome constant_time() {
  const Layout layout{{784, 1000, 10}};
  SyntheticSpec spec;
  spec.num_classes = 10;
  spec.dim = 784;
  spec.means = random_means(10, 784, 0.5, 5);
  spec.sigma = 0.3;
  spec.samples_per_class = 500;
  spec.seed = 5;
  const Dataset pool = gen_synthetic(spec);
  const MlpNetwork before = init_network(layout, 5);
  TrainConfig cfg;
  cfg.seed = 5;
  cfg.epochs_per_round = 1;
  std::vector<std::uint64_t> train_ids;
  for (std::uint64_t id = 0; id < pool.size(); id += 10) train_ids.push_back(id);
  const RoundResult r = train_round(before, pool, train_ids, cfg, 1);

  BenchmarkInputs in;
  in.before = &before;
  in.delta = &r.delta;
  in.pool = &pool;
  in.path = GradPath::MiniBatch;
  in.batch_size = 50;
  for (std::uint32_t k = 0; k < 10; ++k) in.models.push_back(RegressionModel{0.01, -0.001, 0.5, 5, 0, k, 1});
  const std::vector<std::size_t> sizes{10000, 20000, 40000};
  const auto rows = benchmark(in, sizes, 5);

  double lo = rows[0].estimate_seconds, hi = lo;
  for (const auto& row : rows) {
    lo = std::min(lo, row.estimate_seconds);
    hi = std::max(hi, row.estimate_seconds);
  }
  const double spread = hi / lo;
  const double growth = rows[2].full_test_seconds / rows[0].full_test_seconds;
  const bool increasing = rows[0].full_test_seconds < rows[1].full_test_seconds &&
                          rows[1].full_test_seconds < rows[2].full_test_seconds;
  std::string detail = fmt("estimate %.3g/%.3g/%.3g s (spread %.2fx, limit %.0fx); full test %.3g/%.3g/%.3g s "
                           "(40k/10k = %.2fx, need >= %.0fx)",
                           rows[0].estimate_seconds, rows[1].estimate_seconds, rows[2].estimate_seconds, spread,
                           kEstimateSpread, rows[0].full_test_seconds, rows[1].full_test_seconds,
                           rows[2].full_test_seconds, growth, kFullTestGrowth);
  return {spread < kEstimateSpread && growth >= kFullTestGrowth && increasing, detail};
}

// ---------------------------------------------------------------------------
// 6. Split arithmetic

Outcome split_arithmetic() {
  const SplitPlan plan = plan_splits(70000, 100, 6, 1);
  bool ok = plan.round_size(0) == 46666;
  std::size_t small = 0, large = 0, total = plan.round_size(0);
  for (std::uint32_t s = 1; s <= 100; ++s) {
    const std::size_t n = plan.round_size(s);
    small += n == 233;
    large += n == 234;
    total += n;
  }
  ok = ok && small + large == 100 && total == 70000;
  return {ok, fmt("round 0 = %zu, %zu rounds of 233 and %zu of 234, total %zu", plan.round_size(0), small, large,
                  total)};
}

// ---------------------------------------------------------------------------
// 7. End-to-end calibration against an independent pipeline

struct OracleRound {
  std::uint32_t round = 0;
  std::uint32_t klass = 0;
  bool estimable = false;
  double ef = 0.0;
  double predicted = 0.0;
  double r2 = 0.0;
  double actual = 0.0;
};

struct OracleResult {
  std::vector<OracleRound> rows;
  std::vector<double> mean_r2;
  std::vector<double> pearson_ef_actual;
};

double oracle_pearson(const std::vector<double>& x, const std::vector<double>& y) {
  const double n = static_cast<double>(x.size());
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i] / n;
    my += y[i] / n;
  }
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  return sxy / std::sqrt(sxx * syy);
}

// Rebuilds every estimate of a finished run from its checkpoints, the stored
// dataset and the split file alone: evaluation sets, GradSums under every
// earlier checkpoint, correct counts, outlier fences and OLS are all redone here.
OracleResult oracle_pipeline(const fs::path& dir) {
  std::ifstream mf(dir / "manifest.jsonl");
  std::string line;
  std::getline(mf, line);
  std::vector<MlpNetwork> nets;
  while (std::getline(mf, line)) {
    const json j = json::parse(line);
    nets.push_back(load_checkpoint(dir / j.at("checkpoint").get<std::string>()));
  }
  std::ifstream sf(dir / "split.json");
  const json split = json::parse(sf);
  const auto test = split.at("test").get<std::vector<std::vector<std::uint64_t>>>();
  const Dataset data = load_dataset(dir / "dataset.bin");
  const std::uint32_t S = static_cast<std::uint32_t>(nets.size() - 1);
  const std::uint32_t C = data.num_classes;
  const Layout& layout = nets[0].layout();

  std::vector<ParamVector> deltas(S + 1, ParamVector::zeros(layout));
  for (std::uint32_t s = 1; s <= S; ++s) {
    std::vector<double> d(layout.param_count());
    for (std::size_t i = 0; i < d.size(); ++i) d[i] = nets[s].params()[i] - nets[s - 1].params()[i];
    deltas[s] = ParamVector(layout, d);
  }

  auto predicted_class = [&](std::uint32_t j, std::uint64_t id) {
    return oracle::argmax(oracle::forward(layout, nets[j].params().values(), data.at(id).features).probs);
  };
  auto gradsum = [&](std::uint32_t j, const std::vector<std::uint64_t>& members, std::uint32_t k) {
    ParamVector g = ParamVector::zeros(layout);
    for (auto id : members) {
      const auto& x = data.at(id).features;
      const auto probs = oracle::forward(layout, nets[j].params().values(), x).probs;
      const std::uint32_t fst = oracle::argmax(probs);
      if (fst != k) {
        g -= grad_class_loss(nets[j], x, k) - grad_class_loss(nets[j], x, fst);
      } else {
        g += grad_class_loss(nets[j], x, oracle::second(probs)) - grad_class_loss(nets[j], x, k);
      }
    }
    return g;
  };

  OracleResult out;
  std::vector<std::vector<double>> r2s(C), efs(C), actuals(C);
  std::set<std::uint64_t> eval(test[0].begin(), test[0].end());
  for (std::uint32_t s = 1; s <= S; ++s) {
    if (s >= 2) eval.insert(test[s].begin(), test[s].end());
    for (std::uint32_t k = 0; k < C; ++k) {
      std::vector<std::uint64_t> members;
      for (auto id : eval)
        if (data.at(id).label == k) members.push_back(id);
      if (members.empty()) continue;
      const double n = static_cast<double>(members.size());
      std::vector<double> acc(s + 1);
      for (std::uint32_t j = 0; j <= s; ++j) {
        double c = 0;
        for (auto id : members) c += predicted_class(j, id) == k;
        acc[j] = c / n;
      }
      std::vector<double> xs, ys;
      for (std::uint32_t i = 1; i < s; ++i) {
        xs.push_back(dot(gradsum(i - 1, members, k), deltas[i]));
        ys.push_back(acc[i] - acc[i - 1]);
      }
      OracleRound row;
      row.round = s;
      row.klass = k;
      row.ef = dot(gradsum(s - 1, members, k), deltas[s]);
      row.actual = acc[s] - acc[s - 1];
      // Tukey fences on both coordinates.
      std::vector<double> kx, ky;
      if (!xs.empty()) {
        const double qx1 = oracle::quartile(xs, 0.25), qx3 = oracle::quartile(xs, 0.75);
        const double qy1 = oracle::quartile(ys, 0.25), qy3 = oracle::quartile(ys, 0.75);
        for (std::size_t i = 0; i < xs.size(); ++i) {
          const bool in_x = xs[i] >= qx1 - 1.5 * (qx3 - qx1) && xs[i] <= qx3 + 1.5 * (qx3 - qx1);
          const bool in_y = ys[i] >= qy1 - 1.5 * (qy3 - qy1) && ys[i] <= qy3 + 1.5 * (qy3 - qy1);
          if (in_x && in_y) {
            kx.push_back(xs[i]);
            ky.push_back(ys[i]);
          }
        }
      }
      const bool distinct = kx.size() >= 2 && *std::max_element(kx.begin(), kx.end()) != *std::min_element(kx.begin(), kx.end());
      if (distinct) {
        const auto line = oracle::ols(kx, ky);
        row.estimable = true;
        row.predicted = line.slope * row.ef + line.intercept;
        row.r2 = line.r2;
        r2s[k].push_back(line.r2);
        efs[k].push_back(row.ef);
        actuals[k].push_back(row.actual);
      }
      out.rows.push_back(row);
    }
  }
  for (std::uint32_t k = 0; k < C; ++k) {
    double m = 0;
    for (double v : r2s[k]) m += v / static_cast<double>(r2s[k].size());
    out.mean_r2.push_back(m);
    out.pearson_ef_actual.push_back(oracle_pearson(efs[k], actuals[k]));
  }
  return out;
}

fs::path calibration_run(const fs::path& config) {
  const RunConfig cfg = load_run_config(config, {});
  const fs::path dir = testing::scratch_dir("acceptance_calibration");
  run_incremental(cfg, dir);
  return dir;
}

Outcome calibration(const fs::path& config, const fs::path& fixture_path) {
  const RunConfig cfg = load_run_config(config, {});
  const fs::path dir = calibration_run(config);
  const RunManifest m = load_manifest(dir);
  const OracleResult o = oracle_pipeline(dir);
  const std::uint32_t C = cfg.data.classes;

  // (a) estimates for every class from round 3 on, none before.
  std::size_t ok_from_3 = 0, expected = 0, early = 0;
  for (const auto& r : m.rounds) {
    for (const auto& e : r.estimates) {
      if (r.round >= 3) {
        ++expected;
        ok_from_3 += e.status == EstimateStatus::Ok;
      } else {
        early += e.status == EstimateStatus::Ok;
      }
    }
  }
  const bool a = expected == (cfg.rounds - 2) * C && ok_from_3 == expected && early == 0;

  // (b) per-class r2 and Pearson(EF, actual) from the run.
  std::vector<std::vector<double>> r2(C), ef(C), actual(C);
  for (const auto& r : m.rounds)
    for (const auto& e : r.estimates)
      if (e.status == EstimateStatus::Ok) {
        r2[e.klass].push_back(e.model->r2);
        ef[e.klass].push_back(e.ef);
        actual[e.klass].push_back(e.actual);
      }

  // (c) every estimate, and in particular the final one, matches the oracle.
  double worst = 0.0, worst_final = 0.0;
  std::size_t compared = 0;
  bool flags_agree = true;
  for (const auto& row : o.rows) {
    const auto& entries = m.round(row.round).estimates;
    const auto it = std::find_if(entries.begin(), entries.end(), [&](const auto& e) { return e.klass == row.klass; });
    if (it == entries.end()) {
      flags_agree = false;
      continue;
    }
    flags_agree = flags_agree && (it->status == EstimateStatus::Ok) == row.estimable;
    worst = std::max(worst, rel_diff(it->ef, row.ef));
    worst = std::max(worst, rel_diff(it->actual, row.actual));
    if (row.estimable && it->model) {
      const double d = std::max(rel_diff(it->predicted, row.predicted), rel_diff(it->model->r2, row.r2));
      worst = std::max(worst, d);
      if (row.round == cfg.rounds) worst_final = std::max(worst_final, d);
      ++compared;
    }
  }
  const bool c = flags_agree && worst <= kPipelineRel && compared >= (cfg.rounds - 2) * C;

  // (d) thresholds frozen from the oracle pilot.
  std::ifstream ff(fixture_path);
  if (!ff) return {false, "missing fixture " + fixture_path.string()};
  const json fx = json::parse(ff);
  bool d = true;
  std::string stats;
  for (std::uint32_t k = 0; k < C; ++k) {
    double mean = 0;
    for (double v : r2[k]) mean += v / static_cast<double>(r2[k].size());
    const auto p = pearson(ef[k], actual[k]);
    const double min_r2 = fx.at("classes").at(k).at("min_mean_r2");
    const double min_p = fx.at("classes").at(k).at("min_pearson_ef_actual");
    d = d && p && mean >= min_r2 && *p >= min_p;
    stats += fmt(" class %u: mean r2 %.3f (>= %.2f), pearson %.3f (>= %.2f);", k, mean, min_r2, p ? *p : NAN, min_p);
  }

  const auto& last = m.rounds.back().estimates;
  std::string finals;
  for (const auto& e : last) finals += fmt(" %.6g", e.predicted);
  return {a && c && d, fmt("(a) %zu/%zu estimates from round 3, %zu earlier; (c) %zu estimates vs oracle, max rel "
                           "deviation %.2e, final round %.2e (tol %.0e), final predictions",
                           ok_from_3, expected, early, compared, worst, worst_final, kPipelineRel) +
                           finals + "; (b/d)" + stats};
}

int pilot(const fs::path& config, const fs::path& out) {
  const OracleResult o = oracle_pipeline(calibration_run(config));
  json classes = json::array();
  for (std::size_t k = 0; k < o.mean_r2.size(); ++k) {
    // Thresholds sit a fixed margin below the pilot values.
    classes.push_back({{"class", k},
                       {"pilot_mean_r2", o.mean_r2[k]},
                       {"pilot_pearson_ef_actual", o.pearson_ef_actual[k]},
                       {"min_mean_r2", std::floor((o.mean_r2[k] - 0.05) * 100) / 100},
                       {"min_pearson_ef_actual", std::floor((o.pearson_ef_actual[k] - 0.05) * 100) / 100}});
  }
  json fx{{"config", config.filename().string()}, {"classes", classes}};
  std::ofstream(out) << fx.dump(2) << '\n';
  std::printf("%s\n", fx.dump(2).c_str());
  return 0;
}

// ---------------------------------------------------------------------------
// 8. Determinism and resume

std::vector<std::uint8_t> file_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

Outcome determinism(const fs::path& config) {
  const RunConfig cfg = load_run_config(config, {});
  const fs::path a = testing::scratch_dir("acceptance_det_a");
  const fs::path b = testing::scratch_dir("acceptance_det_b");
  const fs::path c = testing::scratch_dir("acceptance_det_c");
  run_incremental(cfg, a);
  run_incremental(cfg, b);
  const bool same = manifest_without_timing(a) == manifest_without_timing(b);

  const std::uint32_t cut = cfg.rounds / 2;
  run_incremental(cfg, c, cut);
  { std::ofstream(c / kManifestFile, std::ios::app) << "{\"record\":\"round\",\"round\":" << cut + 1; }
  // Resume in a fresh object, one round at a time.
  {
    IncrementalRun run(cfg, c);
    while (!run.done()) run.step();
  }
  const bool resumed = manifest_without_timing(a) == manifest_without_timing(c);

  bool bytes = true;
  std::size_t files = 0;
  for (const auto& entry : fs::directory_iterator(a)) {
    const auto name = entry.path().filename().string();
    if (name.ends_with(".bin")) {
      ++files;
      bytes = bytes && file_bytes(entry.path()) == file_bytes(b / name) && file_bytes(entry.path()) == file_bytes(c / name);
    }
  }
  return {same && resumed && bytes,
          fmt("repeat run identical: %s; resume after round %u with torn tail identical: %s; %zu binary files "
              "byte-identical: %s",
              same ? "yes" : "no", cut, resumed ? "yes" : "no", files, bytes ? "yes" : "no")};
}

// ---------------------------------------------------------------------------
// 9. Regression unit examples

Outcome regression_examples() {
  std::vector<std::string> failed;
  auto need = [&](bool ok, const char* what) {
    if (!ok) failed.push_back(what);
  };
  const std::vector<double> v{1, 2, 3, 4, 100};
  need(quantile(v, 0.25) == 2.0, "Q1 of [1,2,3,4,100]");
  need(quantile(v, 0.75) == 4.0, "Q3 of [1,2,3,4,100]");
  const Fences f = tukey_fences(v);
  need(f.lower == -1.0 && f.upper == 7.0, "fences [-1, 7]");
  std::vector<EfSample> s;
  for (std::uint32_t i = 0; i < 5; ++i) s.push_back({i + 1, 0, v[i], 0.1 * (i % 2)});
  const OutlierSplit split = filter_outliers(s);
  need(split.removed.size() == 1 && split.removed[0].ef == 100.0, "100 removed");
  const RegressionModel m = fit(std::vector<EfSample>{{1, 0, 1, 1}, {2, 0, 2, 2}, {3, 0, 3, 3}});
  need(m.slope == 1.0 && m.intercept == 0.0 && m.r2 == 1.0, "fit (1,1),(2,2),(3,3)");
  const RegressionModel flat = fit(std::vector<EfSample>{{1, 0, 0, 0}, {2, 0, 1, 1}, {3, 0, 2, 0}});
  need(flat.slope == 0.0 && std::abs(flat.intercept - 1.0 / 3.0) <= 1e-15 && std::abs(flat.r2) <= 1e-15,
       "fit (0,0),(1,1),(2,0)");
  need(predict(RegressionModel{2.0, 0.5}, 3.0) == 6.5, "predict 2*3+0.5");
  try {
    fit(std::vector<EfSample>{{1, 0, 2, 0}, {2, 0, 2, 1}});
    failed.push_back("degenerate regressor accepted");
  } catch (const Error& e) {
    need(e.code() == Errc::DegenerateRegressor, "degenerate regressor error code");
  }
  try {
    fit(std::vector<EfSample>{{1, 0, 2, 0}});
    failed.push_back("single sample accepted");
  } catch (const Error& e) {
    need(e.code() == Errc::InsufficientData, "insufficient data error code");
  }
  std::string detail = "quantile, fences, filter, fit, r2, predict and error examples";
  for (const auto& f2 : failed) detail += "; failed: " + f2;
  return {failed.empty(), detail};
}

}  // namespace

int main(int argc, char** argv) {
  fs::path config = EFEST_SOURCE_DIR "/configs/synthetic.conf";
  fs::path fixture = EFEST_SOURCE_DIR "/tests/fixtures/calibration.json";
  int only = 0;
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--pilot" && i + 1 < argc) return pilot(config, argv[++i]);
    if (a == "--only" && i + 1 < argc) only = std::stoi(argv[++i]);
    else if (a == "--config" && i + 1 < argc) config = argv[++i];
    else if (a == "--fixture" && i + 1 < argc) fixture = argv[++i];
    else {
      std::fprintf(stderr, "usage: acceptance [--only N] [--config FILE] [--fixture FILE] | --pilot FILE\n");
      return 2;
    }
  }

  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
      {"gradient fidelity", gradient_fidelity},
      {"path equivalence", path_equivalence},
      {"mini-batch equivalence", minibatch_equivalence},
      {"first-order property", first_order},
      {"constant-time estimate", constant_time},
      {"split arithmetic", split_arithmetic},
      {"end-to-end calibration", [&] { return calibration(config, fixture); }},
      {"determinism and resume", [&] { return determinism(config); }},
      {"regression examples", regression_examples},
  };

  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    if (only && static_cast<int>(i + 1) != only) continue;
    const auto start = std::chrono::steady_clock::now();
    Outcome out;
    try {
      out = criteria[i].second();
    } catch (const std::exception& e) {
      out = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::printf("%s %zu %s (%.1fs): %s\n", out.pass ? "PASS" : "FAIL", i + 1, criteria[i].first, secs,
                out.detail.c_str());
    std::fflush(stdout);
    failures += !out.pass;
  }
  return failures == 0 ? 0 : 1;
}
