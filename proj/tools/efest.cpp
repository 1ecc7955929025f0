// Command-line front end: split, run, estimate, bench, report.

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "efest/error.hpp"
#include "efest/harness.hpp"

namespace fs = std::filesystem;
using namespace efest;

namespace {

enum Exit : int {
  kOk = 0,
  kOther = 1,
  kConfig = 2,
  kInput = 3,
  kNumeric = 4,
  kManifest = 5,
  kNoEstimate = 6,
  kLocked = 7,
};

int exit_code(Errc code) {
  switch (code) {
    case Errc::Configuration:
      return kConfig;
    case Errc::InputShape:
    case Errc::Layout:
    case Errc::EmptyInput:
    case Errc::EmptyClass:
    case Errc::Format:
    case Errc::Consistency:
    case Errc::Length:
    case Errc::Io:
      return kInput;
    case Errc::NumericOverflow:
    case Errc::Divergence:
    case Errc::Domain:
    case Errc::InsufficientData:
    case Errc::DegenerateRegressor:
      return kNumeric;
    case Errc::CacheConsistency:
    case Errc::SplitIntegrity:
    case Errc::ManifestIntegrity:
      return kManifest;
    case Errc::Lock:
      return kLocked;
  }
  return kOther;
}

struct Options {
  std::optional<std::string> config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::optional<std::uint32_t> rounds;
  std::optional<std::uint32_t> batch_size;
  std::optional<std::string> estimator;
  std::vector<std::string> sets;
  std::vector<std::size_t> sizes{10000, 20000, 40000};
  std::uint32_t reps = 5;
  std::uint32_t round = 0;
};

void add_config_flags(CLI::App* cmd, Options& o) {
  cmd->add_option("--config", o.config, "key = value config file");
  cmd->add_option("--seed", o.seed, "run seed");
  cmd->add_option("--rounds", o.rounds, "number of incremental rounds S");
  cmd->add_option("--batch-size", o.batch_size, "estimator mini-batch size");
  cmd->add_option("--estimator", o.estimator, "GradSum path")->check(CLI::IsMember({"per-sample", "minibatch"}));
  cmd->add_option("--set", o.sets, "extra key=value override (repeatable)");
}

RunConfig build_config(const Options& o) {
  std::map<std::string, std::string> overrides;
  for (const auto& kv : o.sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) fail(Errc::Configuration, "--set expects key=value, got '" + kv + "'");
    overrides[kv.substr(0, eq)] = kv.substr(eq + 1);
  }
  if (o.seed) overrides["seed"] = std::to_string(*o.seed);
  if (o.rounds) overrides["split.rounds"] = std::to_string(*o.rounds);
  if (o.batch_size) overrides["estimator.batch_size"] = std::to_string(*o.batch_size);
  if (o.estimator) overrides["estimator"] = *o.estimator;
  std::optional<fs::path> file;
  if (o.config) file = *o.config;
  return load_run_config(file, overrides);
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  out << text;
  if (!out) fail(Errc::Io, "cannot write " + path.string());
}

void require_run_dir(const std::string& dir) {
  if (!fs::exists(fs::path(dir) / kManifestFile)) fail(Errc::Io, "no run manifest in " + dir);
}

int cmd_split(const Options& o) {
  const RunConfig cfg = build_config(o);
  const Dataset data = load_run_dataset(cfg);
  const SplitPlan plan = plan_splits(data.size(), cfg.rounds, cfg.ratio, cfg.seed);
  fs::create_directories(o.out);
  DirectoryLock lock(o.out);
  write_file(fs::path(o.out) / "split.json", to_json(plan).dump() + "\n");
  std::cout << "round,train,test\n";
  for (std::uint32_t s = 0; s <= plan.rounds; ++s)
    std::cout << s << ',' << plan.train[s].size() << ',' << plan.test[s].size() << '\n';
  return kOk;
}

int cmd_run(const Options& o) {
  const RunConfig cfg = build_config(o);
  fs::create_directories(o.out);
  DirectoryLock lock(o.out);
  IncrementalRun run(cfg, o.out);
  while (!run.done()) {
    run.step();
    const RoundRecord& r = run.manifest().rounds.back();
    std::size_t ok = 0;
    for (const auto& e : r.estimates) ok += e.status == EstimateStatus::Ok;
    std::cerr << "round " << r.round << ": eval set " << r.eval_size << ", " << ok << " estimates\n";
  }
  std::cout << (fs::path(o.out) / kManifestFile).string() << '\n';
  return kOk;
}

int cmd_estimate(const Options& o) {
  require_run_dir(o.out);
  DirectoryLock lock(o.out);
  const RunManifest m = load_manifest(o.out);
  if (o.round == 0 || m.rounds.empty() || o.round > m.rounds.back().round)
    fail(Errc::Configuration, "--round must name a committed round >= 1");
  const RoundRecord& rec = m.round(o.round);
  int code = kOk;
  std::cout << "round,class,status,ef,predicted\n";
  for (std::uint32_t k = 0; k < rec.class_sizes.size(); ++k) {
    if (rec.class_sizes[k] == 0) {
      std::cerr << "class " << k << ": no samples in the evaluation set\n";
      continue;
    }
    const EstimateEntry e = estimate_round(m, o.round, k);
    if (e.status != EstimateStatus::Ok) {
      std::cerr << "class " << k << ": no estimate (" << e.reason << ")\n";
      code = kNoEstimate;
    }
    std::printf("%u,%u,%s,%.17g,%.17g\n", e.round, e.klass, to_string(e.status), e.ef, e.predicted);
  }
  return code;
}

int cmd_bench(const Options& o) {
  require_run_dir(o.out);
  DirectoryLock lock(o.out);
  const RunManifest m = load_manifest(o.out);
  if (!m.complete()) fail(Errc::ManifestIntegrity, "benchmark needs a completed run");
  const auto rows = benchmark(m, o.sizes, o.reps);
  const std::string csv = bench_csv(rows);
  write_file(fs::path(o.out) / "bench.csv", csv);
  std::cout << csv;
  return kOk;
}

int cmd_report(const Options& o) {
  require_run_dir(o.out);
  DirectoryLock lock(o.out);
  const RunManifest m = load_manifest(o.out);
  const std::size_t classes = m.rounds.empty() ? 0 : m.rounds.back().class_sizes.size();
  std::vector<std::vector<double>> ef(classes), actual(classes), predicted(classes), r2(classes);

  std::cout << "round,class,ef,predicted,actual,slope,intercept,r2,n_used,n_removed\n";
  for (const auto& rec : m.rounds) {
    for (const auto& e : rec.estimates) {
      if (e.status != EstimateStatus::Ok) continue;
      std::printf("%u,%u,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%u,%u\n", e.round, e.klass, e.ef, e.predicted,
                  e.actual, e.model->slope, e.model->intercept, e.model->r2, e.model->n_used, e.model->n_removed);
      ef[e.klass].push_back(e.ef);
      actual[e.klass].push_back(e.actual);
      predicted[e.klass].push_back(e.predicted);
      r2[e.klass].push_back(e.model->r2);
    }
  }

  std::ostringstream summary;
  summary << "class,estimates,mean_r2,pearson_ef_actual,pearson_predicted_actual\n";
  auto field = [](std::optional<double> v) {
    if (!v) return std::string("nan");
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", *v);
    return std::string(buf);
  };
  for (std::size_t k = 0; k < classes; ++k) {
    std::optional<double> mean_r2;
    if (!r2[k].empty()) {
      double sum = 0.0;
      for (double v : r2[k]) sum += v;
      mean_r2 = sum / static_cast<double>(r2[k].size());
    }
    summary << k << ',' << r2[k].size() << ',' << field(mean_r2) << ',' << field(pearson(ef[k], actual[k])) << ','
            << field(pearson(predicted[k], actual[k])) << '\n';
  }
  write_file(fs::path(o.out) / "summary.csv", summary.str());
  std::cerr << summary.str();
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Estimate accuracy changes of incremental training from cached gradient sums"};
  app.require_subcommand(1);
  Options o;

  auto* split = app.add_subcommand("split", "plan the dataset split and write split.json");
  add_config_flags(split, o);
  split->add_option("--out", o.out, "output directory")->required();

  auto* run = app.add_subcommand("run", "run or resume the incremental protocol");
  add_config_flags(run, o);
  run->add_option("--out", o.out, "run directory")->required();

  auto* estimate = app.add_subcommand("estimate", "re-derive the estimates of one round");
  estimate->add_option("--out", o.out, "run directory")->required();
  estimate->add_option("--round", o.round, "round s >= 1")->required();

  auto* bench = app.add_subcommand("bench", "time estimate vs full re-test at several evaluation sizes");
  bench->add_option("--out", o.out, "run directory")->required();
  bench->add_option("--sizes", o.sizes, "evaluation set sizes")->delimiter(',');
  bench->add_option("--reps", o.reps, "repetitions per size")->check(CLI::PositiveNumber);

  auto* report = app.add_subcommand("report", "print calibration rows and write summary.csv");
  report->add_option("--out", o.out, "run directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kConfig;
  }

  try {
    if (*split) return cmd_split(o);
    if (*run) return cmd_run(o);
    if (*estimate) return cmd_estimate(o);
    if (*bench) return cmd_bench(o);
    if (*report) return cmd_report(o);
  } catch (const Error& e) {
    std::cerr << "efest: " << to_string(e.code()) << ": " << e.what() << '\n';
    return exit_code(e.code());
  } catch (const std::exception& e) {
    std::cerr << "efest: " << e.what() << '\n';
    return kOther;
  }
  return kOther;
}
