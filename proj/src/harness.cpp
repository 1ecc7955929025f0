#include "efest/harness.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <sstream>

#include "efest/binary_io.hpp"
#include "efest/error.hpp"
#include "efest/rng.hpp"
#include "efest/train.hpp"

namespace efest {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

std::string numbered(const char* prefix, std::uint32_t s) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%s_%04u.bin", prefix, s);
  return buf;
}

std::string gradsum_file(std::uint32_t s, std::uint32_t j, std::uint32_t k) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "gs_x%04u_n%04u_k%03u.bin", s, j, k);
  return buf;
}

json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) fail(Errc::Io, "cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    fail(Errc::ManifestIntegrity, path.string() + ": " + e.what());
  }
}

void write_text_atomic(const fs::path& path, const std::string& text) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    if (!out) fail(Errc::Io, "cannot write " + tmp.string());
    out << text;
    if (!out) fail(Errc::Io, "short write to " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) fail(Errc::Io, "cannot rename " + tmp.string());
}

void append_line(const fs::path& path, const json& j) {
  std::ofstream out(path, std::ios::app);
  if (!out) fail(Errc::Io, "cannot append to " + path.string());
  out << j.dump() << '\n';
  out.flush();
  if (!out) fail(Errc::Io, "short write to " + path.string());
}

// Complete, parseable lines only; a torn tail is dropped.
std::vector<json> read_manifest_lines(const fs::path& path) {
  std::ifstream in(path);
  if (!in) fail(Errc::ManifestIntegrity, "no manifest at " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  const std::string text = ss.str();
  std::vector<json> lines;
  std::size_t pos = 0;
  while (pos < text.size()) {
    const auto nl = text.find('\n', pos);
    if (nl == std::string::npos) break;
    const std::string line = text.substr(pos, nl - pos);
    pos = nl + 1;
    if (line.empty()) continue;
    try {
      lines.push_back(json::parse(line));
    } catch (const json::exception&) {
      if (pos >= text.size()) break;
      fail(Errc::ManifestIntegrity, path.string() + ": corrupt record in the middle of the manifest");
    }
  }
  return lines;
}

void strip_timing(json& j) {
  if (j.is_object()) {
    j.erase("timing");
    for (auto& [_, v] : j.items()) strip_timing(v);
  } else if (j.is_array()) {
    for (auto& v : j) strip_timing(v);
  }
}

json model_json(const RegressionModel& m) {
  return {{"slope", m.slope},   {"intercept", m.intercept}, {"r2", m.r2},
          {"n_used", m.n_used}, {"n_removed", m.n_removed}, {"class", m.klass},
          {"round", m.round}};
}

RegressionModel model_from_json(const json& j) {
  RegressionModel m;
  m.slope = j.at("slope");
  m.intercept = j.at("intercept");
  m.r2 = j.at("r2");
  m.n_used = j.at("n_used");
  m.n_removed = j.at("n_removed");
  m.klass = j.at("class");
  m.round = j.at("round");
  return m;
}

json estimate_json(const EstimateEntry& e) {
  return {
      {"round", e.round},
      {"class", e.klass},
      {"status", to_string(e.status)},
      {"reason", e.reason},
      {"class_size", e.class_size},
      {"ef", e.ef},
      {"model", e.model ? model_json(*e.model) : json(nullptr)},
      {"predicted", e.predicted},
      {"acc_before", e.acc_before},
      {"acc_after", e.acc_after},
      {"actual", e.actual},
      {"timing", {{"estimate_seconds", e.estimate_seconds}}},
  };
}

EstimateEntry estimate_from_json(const json& j) {
  EstimateEntry e;
  e.round = j.at("round");
  e.klass = j.at("class");
  const std::string status = j.at("status");
  e.status = status == "ok" ? EstimateStatus::Ok
             : status == "empty-class" ? EstimateStatus::EmptyClass
                                       : EstimateStatus::NoEstimate;
  e.reason = j.at("reason");
  e.class_size = j.at("class_size");
  e.ef = j.at("ef");
  if (!j.at("model").is_null()) e.model = model_from_json(j.at("model"));
  e.predicted = j.at("predicted");
  e.acc_before = j.at("acc_before");
  e.acc_after = j.at("acc_after");
  e.actual = j.at("actual");
  if (j.contains("timing")) e.estimate_seconds = j.at("timing").value("estimate_seconds", 0.0);
  return e;
}

double rel_diff(const ParamVector& a, const ParamVector& b) {
  const double scale = std::max({norm(a), norm(b), 1e-300});
  return norm(a - b) / scale;
}

}  // namespace

// ---------------------------------------------------------------------------
// splits

SplitPlan plan_splits(std::uint64_t n_samples, std::uint32_t rounds, std::uint32_t ratio, std::uint64_t seed) {
  if (rounds < 1) fail(Errc::Configuration, "split needs at least one incremental round");
  const std::uint64_t first = 2 * n_samples / 3;
  const std::uint64_t rest = n_samples - first;
  if (first < 1 || rest < rounds)
    fail(Errc::Configuration, std::to_string(n_samples) + " samples cannot be split into dataset #0 plus " +
                                  std::to_string(rounds) + " non-empty rounds");

  std::vector<std::uint64_t> ids(n_samples);
  for (std::uint64_t i = 0; i < n_samples; ++i) ids[i] = i;
  Rng rng(derive_seed(seed, 0, "split"));
  rng.shuffle(ids);

  SplitPlan plan;
  plan.n_samples = n_samples;
  plan.rounds = rounds;
  plan.ratio = ratio;
  plan.seed = seed;
  plan.train.resize(rounds + 1);
  plan.test.resize(rounds + 1);

  std::uint64_t pos = 0;
  for (std::uint32_t s = 0; s <= rounds; ++s) {
    std::uint64_t size = first;
    if (s > 0) size = rest / rounds + (s - 1 < rest % rounds ? 1 : 0);
    const std::uint64_t n_test = size / (std::uint64_t{ratio} + 1);
    plan.test[s].assign(ids.begin() + static_cast<std::ptrdiff_t>(pos),
                        ids.begin() + static_cast<std::ptrdiff_t>(pos + n_test));
    plan.train[s].assign(ids.begin() + static_cast<std::ptrdiff_t>(pos + n_test),
                         ids.begin() + static_cast<std::ptrdiff_t>(pos + size));
    std::sort(plan.test[s].begin(), plan.test[s].end());
    std::sort(plan.train[s].begin(), plan.train[s].end());
    pos += size;
  }
  return plan;
}

json to_json(const SplitPlan& plan) {
  return {{"n_samples", plan.n_samples}, {"rounds", plan.rounds}, {"ratio", plan.ratio},
          {"seed", plan.seed},           {"train", plan.train},   {"test", plan.test}};
}

SplitPlan split_plan_from_json(const json& j) {
  try {
    SplitPlan plan;
    plan.n_samples = j.at("n_samples");
    plan.rounds = j.at("rounds");
    plan.ratio = j.at("ratio");
    plan.seed = j.at("seed");
    plan.train = j.at("train").get<std::vector<std::vector<std::uint64_t>>>();
    plan.test = j.at("test").get<std::vector<std::vector<std::uint64_t>>>();
    if (plan.train.size() != plan.rounds + 1u || plan.test.size() != plan.rounds + 1u)
      fail(Errc::ManifestIntegrity, "split plan round count mismatch");
    return plan;
  } catch (const json::exception& e) {
    fail(Errc::ManifestIntegrity, std::string("malformed split plan: ") + e.what());
  }
}

std::vector<std::uint64_t> update_eval_set(const std::optional<std::vector<std::uint64_t>>& prev,
                                           std::span<const std::uint64_t> portion) {
  std::vector<std::uint64_t> add(portion.begin(), portion.end());
  std::sort(add.begin(), add.end());
  if (std::adjacent_find(add.begin(), add.end()) != add.end())
    fail(Errc::SplitIntegrity, "test portion repeats a sample id");
  if (!prev) return add;
  std::vector<std::uint64_t> out;
  out.reserve(prev->size() + add.size());
  std::merge(prev->begin(), prev->end(), add.begin(), add.end(), std::back_inserter(out));
  if (std::adjacent_find(out.begin(), out.end()) != out.end())
    fail(Errc::SplitIntegrity, "test portion overlaps the existing evaluation set");
  return out;
}

std::span<const std::uint64_t> eval_portion(const SplitPlan& plan, std::uint32_t s) {
  if (s == 0 || s > plan.rounds) fail(Errc::Configuration, "evaluation sets exist for rounds 1..S only");
  return s == 1 ? plan.test.at(0) : plan.test.at(s);
}

const char* to_string(EstimateStatus status) {
  switch (status) {
    case EstimateStatus::Ok: return "ok";
    case EstimateStatus::NoEstimate: return "no-estimate";
    case EstimateStatus::EmptyClass: return "empty-class";
  }
  return "unknown";
}

// ---------------------------------------------------------------------------
// manifest

const RoundRecord& RunManifest::round(std::uint32_t s) const {
  for (const auto& r : rounds)
    if (r.round == s) return r;
  fail(Errc::ManifestIntegrity, "round " + std::to_string(s) + " is not recorded in the manifest");
}

json to_json(const RoundRecord& rec) {
  json gradsums = json::array();
  for (const auto& g : rec.gradsums)
    gradsums.push_back({{"checkpoint", g.checkpoint}, {"class", g.klass}, {"path", g.path}, {"samples", g.sample_count}});
  json samples = json::array();
  for (const auto& e : rec.ef_samples)
    samples.push_back({{"round", e.round}, {"class", e.klass}, {"ef", e.ef}, {"acc_delta", e.acc_delta}});
  json estimates = json::array();
  for (const auto& e : rec.estimates) estimates.push_back(estimate_json(e));
  json coherence = nullptr;
  if (rec.coherence)
    coherence = {{"checkpoint", rec.coherence->checkpoint},
                 {"class", rec.coherence->klass},
                 {"max_rel_diff", rec.coherence->max_rel_diff}};
  return {
      {"record", "round"},
      {"round", rec.round},
      {"checkpoint", rec.checkpoint},
      {"delta", rec.delta},
      {"eval_size", rec.eval_size},
      {"class_sizes", rec.class_sizes},
      {"correct", rec.correct},
      {"gradsums", gradsums},
      {"ef_samples", samples},
      {"estimates", estimates},
      {"coherence", coherence},
      {"timing",
       {{"train_seconds", rec.train_seconds},
        {"pre_update_seconds", rec.pre_update_seconds},
        {"full_test_seconds", rec.full_test_seconds}}},
  };
}

RoundRecord round_record_from_json(const json& j) {
  try {
    RoundRecord rec;
    rec.round = j.at("round");
    rec.checkpoint = j.at("checkpoint");
    rec.delta = j.at("delta");
    rec.eval_size = j.at("eval_size");
    rec.class_sizes = j.at("class_sizes").get<std::vector<std::uint32_t>>();
    rec.correct = j.at("correct").get<std::vector<std::vector<std::uint64_t>>>();
    for (const auto& g : j.at("gradsums"))
      rec.gradsums.push_back({g.at("checkpoint"), g.at("class"), g.at("path"), g.at("samples")});
    for (const auto& e : j.at("ef_samples"))
      rec.ef_samples.push_back({e.at("round"), e.at("class"), e.at("ef"), e.at("acc_delta")});
    for (const auto& e : j.at("estimates")) rec.estimates.push_back(estimate_from_json(e));
    if (!j.at("coherence").is_null()) {
      const auto& c = j.at("coherence");
      rec.coherence = CoherenceCheck{c.at("checkpoint"), c.at("class"), c.at("max_rel_diff")};
    }
    if (j.contains("timing")) {
      const auto& t = j.at("timing");
      rec.train_seconds = t.value("train_seconds", 0.0);
      rec.pre_update_seconds = t.value("pre_update_seconds", 0.0);
      rec.full_test_seconds = t.value("full_test_seconds", 0.0);
    }
    return rec;
  } catch (const json::exception& e) {
    fail(Errc::ManifestIntegrity, std::string("malformed round record: ") + e.what());
  }
}

namespace {

json header_json(const RunManifest& m) {
  return {{"record", "header"},       {"format", "efest-run"},   {"version", 1},
          {"config", to_json(m.config)}, {"dataset", m.dataset_path}, {"split", m.split_path},
          {"report", m.report_path}};
}

RunManifest parse_manifest(const fs::path& dir, const std::vector<json>& lines) {
  if (lines.empty() || lines.front().value("record", "") != "header")
    fail(Errc::ManifestIntegrity, (dir / kManifestFile).string() + ": missing header record");
  const json& h = lines.front();
  if (h.value("format", "") != "efest-run" || h.value("version", 0) != 1)
    fail(Errc::ManifestIntegrity, "unsupported manifest format");
  RunManifest m;
  m.dir = dir;
  try {
    m.config = run_config_from_json(h.at("config"));
    m.dataset_path = h.at("dataset");
    m.split_path = h.at("split");
    m.report_path = h.at("report");
  } catch (const json::exception& e) {
    fail(Errc::ManifestIntegrity, std::string("malformed manifest header: ") + e.what());
  }
  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (lines[i].value("record", "") != "round") fail(Errc::ManifestIntegrity, "unknown manifest record");
    RoundRecord rec = round_record_from_json(lines[i]);
    if (rec.round != m.rounds.size())
      fail(Errc::ManifestIntegrity, "manifest rounds are not consecutive at round " + std::to_string(rec.round));
    m.rounds.push_back(std::move(rec));
  }
  return m;
}

void verify_files(const RunManifest& m) {
  const auto need = [&](const std::string& rel, FileKind kind) {
    const fs::path p = m.dir / rel;
    if (!fs::exists(p)) fail(Errc::ManifestIntegrity, "manifest references missing file " + p.string());
    try {
      check_header(p, kind);
    } catch (const Error& e) {
      fail(Errc::ManifestIntegrity, e.what());
    }
  };
  need(m.dataset_path, FileKind::Dataset);
  if (!fs::exists(m.dir / m.split_path)) fail(Errc::ManifestIntegrity, "manifest references missing split plan");
  for (const auto& r : m.rounds) {
    need(r.checkpoint, FileKind::Checkpoint);
    if (!r.delta.empty()) need(r.delta, FileKind::Checkpoint);
  }
  // Rolling caches are only guaranteed for the last round and each round's estimate input.
  for (const auto& r : m.rounds)
    for (const auto& g : r.gradsums)
      if (&r == &m.rounds.back() || g.checkpoint + 1 == r.round) need(g.path, FileKind::GradSum);
}

}  // namespace

RunManifest load_manifest(const fs::path& dir) {
  RunManifest m = parse_manifest(dir, read_manifest_lines(dir / kManifestFile));
  verify_files(m);
  return m;
}

std::vector<json> manifest_without_timing(const fs::path& dir) {
  auto lines = read_manifest_lines(dir / kManifestFile);
  for (auto& l : lines) strip_timing(l);
  return lines;
}

// ---------------------------------------------------------------------------
// estimation pieces

std::vector<EfSample> backfill_effects(std::uint32_t s, std::uint32_t k,
                                       std::span<const std::optional<GradSumRecord>> gradsums,
                                       std::span<const ParamVector> deltas_by_round,
                                       std::span<const std::uint64_t> correct, std::uint64_t class_size) {
  if (s == 0 || gradsums.size() < s || correct.size() < s || deltas_by_round.size() < s)
    fail(Errc::ManifestIntegrity, "backfill for round " + std::to_string(s) + " lacks cached inputs");
  if (class_size == 0) fail(Errc::EmptyClass, "backfill for an empty class");
  const double n = static_cast<double>(class_size);
  std::vector<EfSample> out;
  out.reserve(s - 1);
  for (std::uint32_t i = 1; i < s; ++i) {
    const auto& gs = gradsums[i - 1];
    if (!gs) fail(Errc::ManifestIntegrity, "missing GradSum cache for checkpoint " + std::to_string(i - 1));
    EfSample sample;
    sample.round = i;
    sample.klass = k;
    sample.ef = effect(*gs, deltas_by_round[i]);
    sample.acc_delta = static_cast<double>(correct[i]) / n - static_cast<double>(correct[i - 1]) / n;
    out.push_back(sample);
  }
  return out;
}

EstimateEntry estimate_from(std::uint32_t s, std::uint32_t k, const GradSumRecord& gradsum, const ParamVector& delta,
                            std::span<const EfSample> samples) {
  EstimateEntry e;
  e.round = s;
  e.klass = k;
  e.class_size = gradsum.sample_count;
  std::optional<RegressionModel> model;
  try {
    model = calibrate(samples, k, s);
  } catch (const Error& err) {
    if (err.code() != Errc::InsufficientData && err.code() != Errc::DegenerateRegressor) throw;
    e.status = EstimateStatus::NoEstimate;
    e.reason = err.code() == Errc::InsufficientData ? "insufficient samples" : "degenerate regressor";
  }

  const auto start = Clock::now();
  e.ef = effect(gradsum, delta);
  if (model) e.predicted = predict(*model, e.ef);
  e.estimate_seconds = seconds_since(start);

  if (model) {
    e.status = EstimateStatus::Ok;
    e.model = model;
  }
  return e;
}

EstimateEntry estimate_round(const RunManifest& manifest, std::uint32_t s, std::uint32_t k) {
  if (s == 0) fail(Errc::Configuration, "round 0 has no estimate");
  const RoundRecord& rec = manifest.round(s);
  const auto it = std::find_if(rec.gradsums.begin(), rec.gradsums.end(),
                               [&](const GradSumIndexEntry& g) { return g.klass == k && g.checkpoint + 1 == s; });
  if (it == rec.gradsums.end()) {
    EstimateEntry e;
    e.round = s;
    e.klass = k;
    e.status = EstimateStatus::EmptyClass;
    e.reason = "class has no evaluation samples";
    return e;
  }
  const ParamVector delta = load_params(manifest.dir / rec.delta);
  const GradSumRecord gs = load_gradsum(manifest.dir / it->path, delta.layout());
  std::vector<EfSample> samples;
  for (const auto& sm : rec.ef_samples)
    if (sm.klass == k) samples.push_back(sm);
  EstimateEntry e = estimate_from(s, k, gs, delta, samples);
  for (const auto& stored : rec.estimates) {
    if (stored.klass != k) continue;
    e.acc_before = stored.acc_before;
    e.acc_after = stored.acc_after;
    e.actual = stored.actual;
  }
  return e;
}

void write_report(const RunManifest& manifest) {
  std::string text;
  text += json{{"record", "report-header"},
               {"outlier_rule", "tukey 1.5*IQR on ef and on acc_delta, single pass, strict comparisons"},
               {"quantile", "linear interpolation at (n-1)p"},
               {"r2", "on the kept regression samples"}}
              .dump();
  text += '\n';
  for (const auto& r : manifest.rounds) {
    for (const auto& e : r.estimates) {
      json j{{"record", "calibration"},
             {"round", e.round},
             {"class", e.klass},
             {"status", to_string(e.status)},
             {"ef", e.ef},
             {"predicted", e.predicted},
             {"actual", e.actual}};
      if (e.model) {
        j["slope"] = e.model->slope;
        j["intercept"] = e.model->intercept;
        j["r2"] = e.model->r2;
        j["n_used"] = e.model->n_used;
        j["n_removed"] = e.model->n_removed;
      }
      text += j.dump();
      text += '\n';
    }
  }
  write_text_atomic(manifest.dir / manifest.report_path, text);
}

Dataset load_run_dataset(const RunConfig& cfg) {
  if (cfg.data.source == DataConfig::Source::Idx) {
    Dataset data = read_idx(cfg.data.idx_images, cfg.data.idx_labels);
    if (cfg.data.limit != 0 && cfg.data.limit < data.examples.size()) data.examples.resize(cfg.data.limit);
    return data;
  }
  SyntheticSpec spec;
  spec.num_classes = cfg.data.classes;
  spec.dim = cfg.data.dim;
  spec.sigma = cfg.data.sigma;
  spec.samples_per_class = cfg.data.samples_per_class;
  spec.seed = cfg.seed;
  spec.means = random_means(cfg.data.classes, cfg.data.dim, cfg.data.mean_scale, cfg.seed);
  return gen_synthetic(spec);
}

// ---------------------------------------------------------------------------
// incremental run

struct IncrementalRun::State {
  RunManifest manifest;
  Dataset data;
  SplitPlan plan;
  Layout layout;
  std::vector<MlpNetwork> nets;     // checkpoints 0..s
  std::vector<ParamVector> deltas;  // deltas[i] = W_i - W_{i-1}; deltas[0] unused
  std::vector<std::uint64_t> eval;  // X_s
  std::vector<std::vector<std::optional<GradSumRecord>>> gs;  // [j][k] over X_s
  std::vector<std::vector<std::uint64_t>> correct;            // [j][k] over X_s
  std::vector<std::uint32_t> class_sizes;

  std::uint32_t classes() const { return layout.num_classes(); }
  fs::path manifest_path() const { return manifest.dir / kManifestFile; }

  GradSumRecord aggregate(const MlpNetwork& net, const ClassPartition& part) const {
    const auto& cfg = manifest.config;
    return cfg.estimator == GradPath::MiniBatch ? grad_sum_minibatch(net, data, part, cfg.estimator_batch)
                                                : grad_sum(net, data, part);
  }

  std::vector<std::uint64_t> class_ids(std::span<const std::uint64_t> ids, std::uint32_t k) const {
    std::vector<std::uint64_t> out;
    for (auto id : ids)
      if (data.at(id).label == k) out.push_back(id);
    return out;
  }
};

IncrementalRun::IncrementalRun(const RunConfig& cfg, const fs::path& dir) : state_(std::make_unique<State>()) {
  cfg.validate();
  State& st = *state_;
  fs::create_directories(dir);
  const fs::path manifest_path = dir / kManifestFile;

  if (fs::exists(manifest_path)) {
    auto lines = read_manifest_lines(manifest_path);
    st.manifest = parse_manifest(dir, lines);
    if (to_json(st.manifest.config) != to_json(cfg))
      fail(Errc::ManifestIntegrity, "run directory " + dir.string() + " was created with a different configuration");
    verify_files(st.manifest);
    // Drop a torn tail so appends start on a clean line.
    std::string text;
    for (const auto& l : lines) text += l.dump() + "\n";
    write_text_atomic(manifest_path, text);

    st.data = load_dataset(dir / st.manifest.dataset_path);
    st.plan = split_plan_from_json(read_json_file(dir / st.manifest.split_path));
  } else {
    st.manifest.dir = dir;
    st.manifest.config = cfg;
    st.manifest.dataset_path = "dataset.bin";
    st.manifest.split_path = "split.json";
    st.manifest.report_path = "report.jsonl";
    st.data = load_run_dataset(cfg);
    st.data.validate();
    save_dataset(dir / st.manifest.dataset_path, st.data);
    st.plan = plan_splits(st.data.size(), cfg.rounds, cfg.ratio, cfg.seed);
    write_text_atomic(dir / st.manifest.split_path, to_json(st.plan).dump() + "\n");
    write_text_atomic(manifest_path, header_json(st.manifest).dump() + "\n");
  }

  st.layout.dims.push_back(st.data.dim);
  for (auto h : cfg.hidden) st.layout.dims.push_back(h);
  st.layout.dims.push_back(st.data.num_classes);
  st.layout.validate();
  st.class_sizes.assign(st.classes(), 0);

  // Rebuild in-memory state from committed rounds.
  for (const auto& r : st.manifest.rounds) {
    st.nets.push_back(load_checkpoint(dir / r.checkpoint));
    if (st.nets.back().layout() != st.layout) fail(Errc::ManifestIntegrity, "checkpoint layout mismatch");
    st.deltas.push_back(r.delta.empty() ? ParamVector::zeros(st.layout) : load_params(dir / r.delta));
    if (r.round >= 1) {
      st.eval = update_eval_set(r.round == 1 ? std::nullopt : std::optional(st.eval), eval_portion(st.plan, r.round));
      if (st.eval.size() != r.eval_size) fail(Errc::ManifestIntegrity, "evaluation set size disagrees with split plan");
    }
  }
  if (!st.manifest.rounds.empty()) {
    const RoundRecord& last = st.manifest.rounds.back();
    if (last.round >= 1) {
      st.class_sizes = last.class_sizes;
      st.correct = last.correct;
      st.gs.assign(last.round, std::vector<std::optional<GradSumRecord>>(st.classes()));
      for (const auto& g : last.gradsums)
        st.gs.at(g.checkpoint).at(g.klass) = load_gradsum(dir / g.path, st.layout);
    }
  }
}

IncrementalRun::~IncrementalRun() = default;
IncrementalRun::IncrementalRun(IncrementalRun&&) noexcept = default;
IncrementalRun& IncrementalRun::operator=(IncrementalRun&&) noexcept = default;

bool IncrementalRun::done() const { return state_->manifest.complete(); }

std::uint32_t IncrementalRun::next_round() const {
  return static_cast<std::uint32_t>(state_->manifest.rounds.size());
}

const RunManifest& IncrementalRun::manifest() const { return state_->manifest; }
const Dataset& IncrementalRun::dataset() const { return state_->data; }
const SplitPlan& IncrementalRun::split() const { return state_->plan; }
const MlpNetwork& IncrementalRun::checkpoint(std::uint32_t s) const { return state_->nets.at(s); }
const ParamVector& IncrementalRun::delta(std::uint32_t s) const { return state_->deltas.at(s); }
const std::vector<std::uint64_t>& IncrementalRun::eval_set() const { return state_->eval; }

const std::optional<GradSumRecord>& IncrementalRun::cached_gradsum(std::uint32_t j, std::uint32_t k) const {
  return state_->gs.at(j).at(k);
}

double IncrementalRun::max_cache_deviation() const {
  const State& st = *state_;
  double worst = 0.0;
  for (std::uint32_t j = 0; j < st.gs.size(); ++j) {
    for (std::uint32_t k = 0; k < st.classes(); ++k) {
      const auto ids = st.class_ids(st.eval, k);
      if (ids.empty()) {
        if (st.gs[j][k]) worst = std::max(worst, 1.0);
        continue;
      }
      const ClassPartition part = partition(st.nets[j], st.data, ids, k, j);
      const GradSumRecord fresh = st.aggregate(st.nets[j], part);
      if (!st.gs[j][k] || st.gs[j][k]->sample_count != fresh.sample_count ||
          st.gs[j][k]->failed_count != fresh.failed_count) {
        worst = std::max(worst, 1.0);
        continue;
      }
      worst = std::max(worst, rel_diff(st.gs[j][k]->vector, fresh.vector));
      if (st.correct.at(j).at(k) != part.succeeded.size()) worst = std::max(worst, 1.0);
    }
  }
  return worst;
}

void IncrementalRun::step() {
  if (done()) return;
  State& st = *state_;
  const RunConfig& cfg = st.manifest.config;
  const std::uint32_t s = next_round();
  const fs::path& dir = st.manifest.dir;
  RoundRecord rec;
  rec.round = s;
  rec.checkpoint = numbered("ckpt", s);

  if (s == 0) {
    const auto start = Clock::now();
    const MlpNetwork untrained = init_network(st.layout, cfg.seed);
    RoundResult r = train_round(untrained, st.data, st.plan.train[0], cfg.train, 0);
    rec.train_seconds = seconds_since(start);
    save_checkpoint(dir / rec.checkpoint, r.net);
    st.nets.push_back(std::move(r.net));
    st.deltas.push_back(ParamVector::zeros(st.layout));
    append_line(st.manifest_path(), to_json(rec));
    st.manifest.rounds.push_back(std::move(rec));
    write_report(st.manifest);
    return;
  }

  const std::uint32_t C = st.classes();

  // Pre-update phase: extend X_s, caches and calibration samples under N_0..N_{s-1}.
  auto start = Clock::now();
  const auto portion = eval_portion(st.plan, s);
  st.eval = update_eval_set(s == 1 ? std::nullopt : std::optional(st.eval), portion);
  std::vector<std::vector<std::uint64_t>> new_ids(C);
  for (std::uint32_t k = 0; k < C; ++k) {
    new_ids[k] = st.class_ids(portion, k);
    st.class_sizes[k] += static_cast<std::uint32_t>(new_ids[k].size());
  }

  st.gs.resize(s, std::vector<std::optional<GradSumRecord>>(C));
  st.correct.resize(s, std::vector<std::uint64_t>(C, 0));
  for (std::uint32_t j = 0; j + 1 < s; ++j) {
    for (std::uint32_t k = 0; k < C; ++k) {
      if (new_ids[k].empty()) continue;
      const ClassPartition part = partition(st.nets[j], st.data, new_ids[k], k, j);
      GradSumRecord piece = st.aggregate(st.nets[j], part);
      st.gs[j][k] = st.gs[j][k] ? merge_gradsum(*st.gs[j][k], piece) : std::move(piece);
      st.correct[j][k] += part.succeeded.size();
    }
  }
  // Checkpoint s-1 has no cache yet: aggregate over all of X_s^k. Its correct
  // count over X_{s-1} was measured last round; extend it and cross-check.
  for (std::uint32_t k = 0; k < C; ++k) {
    const auto ids = st.class_ids(st.eval, k);
    if (ids.empty()) continue;
    const ClassPartition part = partition(st.nets[s - 1], st.data, ids, k, s - 1);
    st.gs[s - 1][k] = st.aggregate(st.nets[s - 1], part);
    if (s > 1 && !new_ids[k].empty()) st.correct[s - 1][k] += count_correct(st.nets[s - 1], st.data, new_ids[k]);
    if (s == 1) st.correct[0][k] = part.succeeded.size();
    if (st.correct[s - 1][k] != part.succeeded.size())
      fail(Errc::CacheConsistency, "round " + std::to_string(s) + ", class " + std::to_string(k) +
                                       ": cached correct count disagrees with recomputation");
  }

  std::vector<std::vector<EfSample>> samples(C);
  for (std::uint32_t k = 0; k < C; ++k) {
    if (st.class_sizes[k] == 0) continue;
    std::vector<std::optional<GradSumRecord>> column(s);
    std::vector<std::uint64_t> counts(s);
    for (std::uint32_t j = 0; j < s; ++j) {
      column[j] = st.gs[j][k];
      counts[j] = st.correct[j][k];
    }
    samples[k] = backfill_effects(s, k, column, st.deltas, counts, st.class_sizes[k]);
    rec.ef_samples.insert(rec.ef_samples.end(), samples[k].begin(), samples[k].end());
  }

  if (cfg.verify_caches && s >= 2) {
    Rng rng(derive_seed(cfg.seed, s, "coherence"));
    const auto j = static_cast<std::uint32_t>(rng.below(s - 1));
    const auto k = static_cast<std::uint32_t>(rng.below(C));
    CoherenceCheck check{j, k, 0.0};
    const auto ids = st.class_ids(st.eval, k);
    if (!ids.empty()) {
      const ClassPartition part = partition(st.nets[j], st.data, ids, k, j);
      const GradSumRecord fresh = st.aggregate(st.nets[j], part);
      check.max_rel_diff = rel_diff(st.gs[j][k]->vector, fresh.vector);
      if (check.max_rel_diff > 1e-9 || st.correct[j][k] != part.succeeded.size() ||
          st.gs[j][k]->sample_count != fresh.sample_count)
        fail(Errc::CacheConsistency, "round " + std::to_string(s) + ": cache for checkpoint " + std::to_string(j) +
                                         ", class " + std::to_string(k) + " disagrees with recomputation");
    }
    rec.coherence = check;
  }
  rec.pre_update_seconds = seconds_since(start);

  // Training #s.
  start = Clock::now();
  RoundResult trained = train_round(st.nets[s - 1], st.data, st.plan.train[s], cfg.train, s);
  rec.train_seconds = seconds_since(start);
  rec.delta = numbered("delta", s);
  save_checkpoint(dir / rec.checkpoint, trained.net);
  save_params(dir / rec.delta, trained.delta);
  st.nets.push_back(std::move(trained.net));
  st.deltas.push_back(std::move(trained.delta));

  // Post-update estimate per class.
  for (std::uint32_t k = 0; k < C; ++k) {
    if (st.class_sizes[k] == 0) {
      EstimateEntry e;
      e.round = s;
      e.klass = k;
      e.status = EstimateStatus::EmptyClass;
      e.reason = "class has no evaluation samples";
      rec.estimates.push_back(e);
      continue;
    }
    rec.estimates.push_back(estimate_from(s, k, *st.gs[s - 1][k], st.deltas[s], samples[k]));
  }

  // Ground truth: full re-test of N_s over X_s.
  start = Clock::now();
  std::vector<std::uint64_t> after(C, 0);
  for (auto id : st.eval) {
    const auto& ex = st.data.at(id);
    if (forward(st.nets[s], ex.features).fst == ex.label) ++after[ex.label];
  }
  rec.full_test_seconds = seconds_since(start);
  st.correct.push_back(after);
  for (auto& e : rec.estimates) {
    if (e.status == EstimateStatus::EmptyClass) continue;
    const double n = st.class_sizes[e.klass];
    e.acc_before = static_cast<double>(st.correct[s - 1][e.klass]) / n;
    e.acc_after = static_cast<double>(after[e.klass]) / n;
    e.actual = e.acc_after - e.acc_before;
  }

  // Persist caches for X_s, then commit the round.
  for (std::uint32_t j = 0; j < s; ++j) {
    for (std::uint32_t k = 0; k < C; ++k) {
      if (!st.gs[j][k]) continue;
      const std::string name = gradsum_file(s, j, k);
      save_gradsum(dir / name, *st.gs[j][k]);
      rec.gradsums.push_back({j, k, name, st.gs[j][k]->sample_count});
    }
  }
  rec.eval_size = st.eval.size();
  rec.class_sizes = st.class_sizes;
  rec.correct = st.correct;
  append_line(st.manifest_path(), to_json(rec));
  st.manifest.rounds.push_back(std::move(rec));

  // The previous round's rolling caches are superseded, except its estimate input (checkpoint s-2).
  if (s >= 2)
    for (std::uint32_t j = 0; j + 2 < s; ++j)
      for (std::uint32_t k = 0; k < C; ++k) fs::remove(dir / gradsum_file(s - 1, j, k));
  write_report(st.manifest);
}

void IncrementalRun::run_to_completion() {
  while (!done()) step();
}

RunManifest run_incremental(const RunConfig& cfg, const fs::path& dir, std::optional<std::uint32_t> stop_after) {
  IncrementalRun run(cfg, dir);
  while (!run.done()) {
    if (stop_after && run.next_round() > *stop_after) break;
    run.step();
  }
  return run.manifest();
}

// ---------------------------------------------------------------------------
// benchmark

namespace {

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

std::vector<BenchRow> benchmark(const BenchmarkInputs& in, std::span<const std::size_t> sizes, std::uint32_t reps) {
  if (!in.before || !in.delta || !in.pool || in.pool->examples.empty())
    fail(Errc::Configuration, "benchmark inputs are incomplete");
  if (reps == 0) fail(Errc::Configuration, "benchmark needs at least one repetition");
  const std::uint32_t C = in.before->num_classes();
  const Dataset& pool = *in.pool;
  std::vector<BenchRow> rows;
  for (std::size_t n : sizes) {
    std::vector<std::uint64_t> ids(n);
    for (std::size_t i = 0; i < n; ++i) ids[i] = i % pool.size();

    // Pre-update work, not timed.
    std::vector<std::optional<GradSumRecord>> gs(C);
    for (std::uint32_t k = 0; k < C; ++k) {
      std::vector<std::uint64_t> members;
      for (auto id : ids)
        if (pool.at(id).label == k) members.push_back(id);
      if (members.empty()) continue;
      const ClassPartition part = partition(*in.before, pool, members, k);
      gs[k] = in.path == GradPath::MiniBatch ? grad_sum_minibatch(*in.before, pool, part, in.batch_size)
                                             : grad_sum(*in.before, pool, part);
    }

    std::vector<double> est_times, test_times;
    volatile double sink = 0.0;
    for (std::uint32_t r = 0; r < reps; ++r) {
      auto start = Clock::now();
      double acc = 0.0;
      for (std::uint32_t k = 0; k < C; ++k) {
        if (!gs[k]) continue;
        const double ef = effect(*gs[k], *in.delta);
        acc += k < in.models.size() && in.models[k] ? predict(*in.models[k], ef) : ef;
      }
      est_times.push_back(seconds_since(start));
      sink = sink + acc;

      start = Clock::now();
      std::vector<std::uint64_t> correct(C, 0);
      for (auto id : ids) {
        const auto& ex = pool.at(id);
        if (forward(*in.before, ex.features).fst == ex.label) ++correct[ex.label];
      }
      test_times.push_back(seconds_since(start));
      sink = sink + static_cast<double>(correct[0]);
    }
    rows.push_back({n, median(est_times), median(test_times), reps});
  }
  return rows;
}

std::vector<BenchRow> benchmark(const RunManifest& manifest, std::span<const std::size_t> sizes, std::uint32_t reps) {
  if (manifest.rounds.size() < 2) fail(Errc::ManifestIntegrity, "benchmark needs a run with at least one update");
  const RoundRecord& last = manifest.rounds.back();
  const MlpNetwork before = load_checkpoint(manifest.dir / manifest.round(last.round - 1).checkpoint);
  const ParamVector delta = load_params(manifest.dir / last.delta);
  const Dataset pool = load_dataset(manifest.dir / manifest.dataset_path);
  BenchmarkInputs in;
  in.before = &before;
  in.delta = &delta;
  in.pool = &pool;
  in.path = manifest.config.estimator;
  in.batch_size = manifest.config.estimator_batch;
  in.models.resize(before.num_classes());
  for (const auto& e : last.estimates)
    if (e.model && e.klass < in.models.size()) in.models[e.klass] = e.model;
  return benchmark(in, sizes, reps);
}

std::string bench_csv(std::span<const BenchRow> rows) {
  std::ostringstream out;
  out.precision(9);
  out << "eval_size,estimate_seconds,full_test_seconds,reps\n";
  for (const auto& r : rows)
    out << r.eval_size << ',' << r.estimate_seconds << ',' << r.full_test_seconds << ',' << r.reps << '\n';
  return out.str();
}

// ---------------------------------------------------------------------------

DirectoryLock::DirectoryLock(const fs::path& dir) : path_(dir / ".lock") {
  fs::create_directories(dir);
  const int fd = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
  if (fd < 0) fail(Errc::Lock, "run directory " + dir.string() + " is locked by another command (" +
                                   path_.string() + ")");
  const std::string pid = std::to_string(::getpid()) + "\n";
  [[maybe_unused]] auto n = ::write(fd, pid.data(), pid.size());
  ::close(fd);
}

DirectoryLock::~DirectoryLock() {
  std::error_code ec;
  fs::remove(path_, ec);
}

}  // namespace efest
