#include "efest/config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>

#include "efest/error.hpp"

namespace efest {

const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> keys{
      "seed",          "data.source",          "data.classes",         "data.dim",
      "data.samples_per_class", "data.sigma",  "data.mean_scale",      "data.idx_images",
      "data.idx_labels", "data.limit",         "net.hidden",           "split.rounds",
      "split.ratio",   "train.learning_rate",  "train.batch_size",     "train.epochs_per_round",
      "estimator",     "estimator.batch_size", "harness.verify_caches",
  };
  return keys;
}

void RunConfig::validate() const {
  std::vector<std::string> problems;
  if (data.source == DataConfig::Source::Synthetic) {
    if (data.classes < 2) problems.push_back("data.classes must be >= 2");
    if (data.dim < 1) problems.push_back("data.dim must be >= 1");
    if (data.samples_per_class < 1) problems.push_back("data.samples_per_class must be >= 1");
    if (!(data.sigma > 0.0)) problems.push_back("data.sigma must be positive");
  } else if (data.idx_images.empty() || data.idx_labels.empty()) {
    problems.push_back("data.idx_images and data.idx_labels are required for idx input");
  }
  for (auto h : hidden)
    if (h == 0) problems.push_back("net.hidden entries must be positive");
  if (rounds < 1) problems.push_back("split.rounds must be >= 1");
  if (ratio < 1) problems.push_back("split.ratio must be >= 1");
  if (!(train.learning_rate >= 0.0)) problems.push_back("train.learning_rate must be non-negative");
  if (train.batch_size < 1) problems.push_back("train.batch_size must be >= 1");
  if (train.epochs_per_round < 1) problems.push_back("train.epochs_per_round must be >= 1");
  if (estimator == GradPath::MiniBatch && estimator_batch < 1) problems.push_back("estimator.batch_size must be >= 1");
  if (!problems.empty()) {
    std::string msg = "invalid configuration:";
    for (const auto& p : problems) msg += "\n  " + p;
    fail(Errc::Configuration, msg);
  }
}

nlohmann::json to_json(const RunConfig& cfg) {
  nlohmann::json data{
      {"source", cfg.data.source == DataConfig::Source::Synthetic ? "synthetic" : "idx"},
  };
  if (cfg.data.source == DataConfig::Source::Synthetic) {
    data["classes"] = cfg.data.classes;
    data["dim"] = cfg.data.dim;
    data["samples_per_class"] = cfg.data.samples_per_class;
    data["sigma"] = cfg.data.sigma;
    data["mean_scale"] = cfg.data.mean_scale;
  } else {
    data["idx_images"] = cfg.data.idx_images;
    data["idx_labels"] = cfg.data.idx_labels;
    data["limit"] = cfg.data.limit;
  }
  return {
      {"seed", cfg.seed},
      {"data", data},
      {"hidden", cfg.hidden},
      {"rounds", cfg.rounds},
      {"ratio", cfg.ratio},
      {"train",
       {{"learning_rate", cfg.train.learning_rate},
        {"batch_size", cfg.train.batch_size},
        {"epochs_per_round", cfg.train.epochs_per_round}}},
      {"estimator", cfg.estimator == GradPath::PerSample ? "per-sample" : "minibatch"},
      {"estimator_batch", cfg.estimator_batch},
      {"verify_caches", cfg.verify_caches},
  };
}

RunConfig run_config_from_json(const nlohmann::json& j) {
  try {
    RunConfig cfg;
    cfg.seed = j.at("seed").get<std::uint64_t>();
    const auto& d = j.at("data");
    if (d.at("source") == "synthetic") {
      cfg.data.source = DataConfig::Source::Synthetic;
      cfg.data.classes = d.at("classes");
      cfg.data.dim = d.at("dim");
      cfg.data.samples_per_class = d.at("samples_per_class");
      cfg.data.sigma = d.at("sigma");
      cfg.data.mean_scale = d.at("mean_scale");
    } else {
      cfg.data.source = DataConfig::Source::Idx;
      cfg.data.idx_images = d.at("idx_images");
      cfg.data.idx_labels = d.at("idx_labels");
      cfg.data.limit = d.at("limit");
    }
    cfg.hidden = j.at("hidden").get<std::vector<std::uint32_t>>();
    cfg.rounds = j.at("rounds");
    cfg.ratio = j.at("ratio");
    cfg.train.learning_rate = j.at("train").at("learning_rate");
    cfg.train.batch_size = j.at("train").at("batch_size");
    cfg.train.epochs_per_round = j.at("train").at("epochs_per_round");
    cfg.train.seed = cfg.seed;
    cfg.estimator = j.at("estimator") == "minibatch" ? GradPath::MiniBatch : GradPath::PerSample;
    cfg.estimator_batch = j.at("estimator_batch");
    cfg.verify_caches = j.at("verify_caches");
    return cfg;
  } catch (const nlohmann::json::exception& e) {
    fail(Errc::ManifestIntegrity, std::string("malformed config snapshot: ") + e.what());
  }
}

std::map<std::string, std::string> parse_key_values(const std::string& text) {
  std::map<std::string, std::string> out;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  std::vector<std::string> bad;
  const auto trim = [](std::string s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return std::string();
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
  };
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      bad.push_back("line " + std::to_string(lineno) + ": expected key = value");
      continue;
    }
    out[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  if (!bad.empty()) {
    std::string msg = "malformed config:";
    for (const auto& b : bad) msg += "\n  " + b;
    fail(Errc::Configuration, msg);
  }
  return out;
}

namespace {

template <class T>
bool parse_number(const std::string& s, T& out) {
  const char* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, out);
  return ec == std::errc() && ptr == end;
}

}  // namespace

RunConfig load_run_config(const std::optional<std::filesystem::path>& file,
                          const std::map<std::string, std::string>& overrides) {
  std::map<std::string, std::string> kv;
  if (file) {
    std::ifstream in(*file);
    if (!in) fail(Errc::Io, "cannot open config " + file->string());
    std::stringstream ss;
    ss << in.rdbuf();
    kv = parse_key_values(ss.str());
  }
  for (const auto& [k, v] : overrides) kv[k] = v;

  RunConfig cfg;
  std::vector<std::string> problems;
  const auto& known = config_keys();
  for (const auto& [key, value] : kv) {
    if (std::find(known.begin(), known.end(), key) == known.end()) {
      problems.push_back(key + ": unknown key");
      continue;
    }
    const auto bad = [&] { problems.push_back(key + ": invalid value '" + value + "'"); };
    const auto u32 = [&](std::uint32_t& dst) {
      if (!parse_number(value, dst)) bad();
    };
    const auto u64 = [&](std::uint64_t& dst) {
      if (!parse_number(value, dst)) bad();
    };
    const auto real = [&](double& dst) {
      if (!parse_number(value, dst)) bad();
    };

    if (key == "seed") u64(cfg.seed);
    else if (key == "data.source") {
      if (value == "synthetic") cfg.data.source = DataConfig::Source::Synthetic;
      else if (value == "idx") cfg.data.source = DataConfig::Source::Idx;
      else bad();
    } else if (key == "data.classes") u32(cfg.data.classes);
    else if (key == "data.dim") u32(cfg.data.dim);
    else if (key == "data.samples_per_class") u32(cfg.data.samples_per_class);
    else if (key == "data.sigma") real(cfg.data.sigma);
    else if (key == "data.mean_scale") real(cfg.data.mean_scale);
    else if (key == "data.idx_images") cfg.data.idx_images = value;
    else if (key == "data.idx_labels") cfg.data.idx_labels = value;
    else if (key == "data.limit") u64(cfg.data.limit);
    else if (key == "net.hidden") {
      cfg.hidden.clear();
      std::stringstream ss(value);
      std::string item;
      while (std::getline(ss, item, ',')) {
        std::uint32_t h = 0;
        const auto b = item.find_first_not_of(' ');
        const auto e = item.find_last_not_of(' ');
        if (b == std::string::npos || !parse_number(item.substr(b, e - b + 1), h)) {
          bad();
          break;
        }
        cfg.hidden.push_back(h);
      }
    } else if (key == "split.rounds") u32(cfg.rounds);
    else if (key == "split.ratio") u32(cfg.ratio);
    else if (key == "train.learning_rate") real(cfg.train.learning_rate);
    else if (key == "train.batch_size") u32(cfg.train.batch_size);
    else if (key == "train.epochs_per_round") u32(cfg.train.epochs_per_round);
    else if (key == "estimator") {
      if (value == "per-sample") cfg.estimator = GradPath::PerSample;
      else if (value == "minibatch") cfg.estimator = GradPath::MiniBatch;
      else bad();
    } else if (key == "estimator.batch_size") u32(cfg.estimator_batch);
    else if (key == "harness.verify_caches") {
      if (value == "true") cfg.verify_caches = true;
      else if (value == "false") cfg.verify_caches = false;
      else bad();
    }
  }
  if (!problems.empty()) {
    std::string msg = "configuration errors:";
    for (const auto& p : problems) msg += "\n  " + p;
    fail(Errc::Configuration, msg);
  }
  cfg.train.seed = cfg.seed;
  cfg.validate();
  return cfg;
}

}  // namespace efest
