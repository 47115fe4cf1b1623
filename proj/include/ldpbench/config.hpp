#pragma once

#include <cctype>
#include <cstdlib>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ldpbench/corpus.hpp"
#include "ldpbench/error.hpp"
#include "ldpbench/io_util.hpp"
#include "ldpbench/mechanisms.hpp"

namespace ldpbench {

// Minimal TOML-style config reader: [section] tables, [[section]] table
// arrays, key = value with strings, numbers, booleans and flat arrays.
// Scalar keys can be overridden through LDPBENCH_<SECTION>_<KEY> environment
// variables.

class ConfigTable {
 public:
  void set(const std::string& key, std::string raw) { values_[key] = std::move(raw); }

  bool has(const std::string& key) const { return values_.count(key) > 0; }

  std::optional<std::string> raw(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) return std::nullopt;
    return it->second;
  }

  const std::map<std::string, std::string>& entries() const { return values_; }

 private:
  std::map<std::string, std::string> values_;
};

class Config {
 public:
  static Config parse_file(const std::string& path) { return parse(read_file(path), path); }

  static Config parse(const std::string& text, const std::string& origin = "<config>") {
    Config config;
    config.origin_ = origin;
    ConfigTable* current = &config.root_;
    std::string section;
    std::size_t line_number = 0;
    std::size_t pos = 0;
    while (pos <= text.size()) {
      const std::size_t eol = text.find('\n', pos);
      std::string line = text.substr(pos, eol == std::string::npos ? eol : eol - pos);
      pos = eol == std::string::npos ? text.size() + 1 : eol + 1;
      ++line_number;

      const std::size_t comment = find_comment(line);
      if (comment != std::string::npos) line.resize(comment);
      line = trim(line);
      if (line.empty()) continue;

      if (line.size() > 4 && line.substr(0, 2) == "[[" && line.substr(line.size() - 2) == "]]") {
        section = trim(line.substr(2, line.size() - 4));
        config.table_arrays_[section].emplace_back();
        current = &config.table_arrays_[section].back();
        continue;
      }
      if (line.front() == '[' && line.back() == ']') {
        section = trim(line.substr(1, line.size() - 2));
        current = &config.sections_[section];
        continue;
      }
      const std::size_t eq = line.find('=');
      if (eq == std::string::npos)
        throw Error(origin + ":" + std::to_string(line_number) + ": expected key = value");
      const std::string key = trim(line.substr(0, eq));
      const std::string value = trim(line.substr(eq + 1));
      if (key.empty() || value.empty())
        throw Error(origin + ":" + std::to_string(line_number) + ": empty key or value");
      current->set(key, value);
    }
    return config;
  }

  bool has_section(const std::string& name) const { return sections_.count(name) > 0; }

  const ConfigTable& section(const std::string& name) const {
    auto it = sections_.find(name);
    if (it == sections_.end()) throw Error(origin_ + ": missing [" + name + "] section");
    return it->second;
  }

  const std::vector<ConfigTable>& table_array(const std::string& name) const {
    static const std::vector<ConfigTable> empty;
    auto it = table_arrays_.find(name);
    return it == table_arrays_.end() ? empty : it->second;
  }

  // Typed getters with environment override and optional defaults.

  std::string get_string(const std::string& section_name, const ConfigTable& table,
                         const std::string& key,
                         std::optional<std::string> fallback = std::nullopt) const {
    if (auto env = env_override(section_name, key)) return *env;
    if (auto raw = table.raw(key)) return unquote(*raw);
    if (fallback) return *fallback;
    throw Error(origin_ + ": [" + section_name + "] missing key '" + key + "'");
  }

  double get_double(const std::string& section_name, const ConfigTable& table,
                    const std::string& key, std::optional<double> fallback = std::nullopt) const {
    if (auto raw = raw_or_env(section_name, table, key)) return parse_double(*raw, key);
    if (fallback) return *fallback;
    throw Error(origin_ + ": [" + section_name + "] missing key '" + key + "'");
  }

  long long get_int(const std::string& section_name, const ConfigTable& table,
                    const std::string& key,
                    std::optional<long long> fallback = std::nullopt) const {
    const double v = fallback ? get_double(section_name, table, key,
                                           static_cast<double>(*fallback))
                              : get_double(section_name, table, key);
    return static_cast<long long>(v);
  }

  bool get_bool(const std::string& section_name, const ConfigTable& table,
                const std::string& key, std::optional<bool> fallback = std::nullopt) const {
    if (auto raw = raw_or_env(section_name, table, key)) {
      if (*raw == "true") return true;
      if (*raw == "false") return false;
      throw Error(origin_ + ": key '" + key + "' expects true or false");
    }
    if (fallback) return *fallback;
    throw Error(origin_ + ": [" + section_name + "] missing key '" + key + "'");
  }

  std::vector<double> get_double_array(const std::string& section_name, const ConfigTable& table,
                                       const std::string& key,
                                       std::optional<std::vector<double>> fallback =
                                           std::nullopt) const {
    if (auto raw = raw_or_env(section_name, table, key)) {
      std::vector<double> out;
      for (const auto& item : split_array(*raw, key)) out.push_back(parse_double(item, key));
      return out;
    }
    if (fallback) return *fallback;
    throw Error(origin_ + ": [" + section_name + "] missing key '" + key + "'");
  }

  std::vector<std::string> get_string_array(const std::string& section_name,
                                            const ConfigTable& table, const std::string& key,
                                            std::optional<std::vector<std::string>> fallback =
                                                std::nullopt) const {
    if (auto raw = raw_or_env(section_name, table, key)) {
      std::vector<std::string> out;
      for (const auto& item : split_array(*raw, key)) out.push_back(unquote(item));
      return out;
    }
    if (fallback) return *fallback;
    throw Error(origin_ + ": [" + section_name + "] missing key '" + key + "'");
  }

 private:
  static std::size_t find_comment(const std::string& line) {
    bool in_string = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
      if (line[i] == '"') in_string = !in_string;
      if (line[i] == '#' && !in_string) return i;
    }
    return std::string::npos;
  }

  static std::string trim(const std::string& s) {
    std::size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return s.substr(b, e - b);
  }

  static std::string unquote(const std::string& s) {
    if (s.size() >= 2 && s.front() == '"' && s.back() == '"')
      return s.substr(1, s.size() - 2);
    return s;
  }

  double parse_double(const std::string& raw, const std::string& key) const {
    char* end = nullptr;
    const double v = std::strtod(raw.c_str(), &end);
    if (end == raw.c_str() || *end != '\0')
      throw Error(origin_ + ": key '" + key + "' has non-numeric value '" + raw + "'");
    return v;
  }

  std::vector<std::string> split_array(const std::string& raw, const std::string& key) const {
    if (raw.size() < 2 || raw.front() != '[' || raw.back() != ']')
      throw Error(origin_ + ": key '" + key + "' expects an array [ ... ]");
    std::vector<std::string> items;
    std::string current;
    bool in_string = false;
    for (std::size_t i = 1; i + 1 < raw.size(); ++i) {
      const char c = raw[i];
      if (c == '"') in_string = !in_string;
      if (c == ',' && !in_string) {
        const std::string item = trim(current);
        if (!item.empty()) items.push_back(item);
        current.clear();
      } else {
        current.push_back(c);
      }
    }
    const std::string item = trim(current);
    if (!item.empty()) items.push_back(item);
    return items;
  }

  static std::optional<std::string> env_override(const std::string& section_name,
                                                 const std::string& key) {
    std::string name = "LDPBENCH_" + section_name + "_" + key;
    for (char& c : name) {
      if (c == '.' || c == '-') c = '_';
      c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    }
    const char* value = std::getenv(name.c_str());
    if (!value) return std::nullopt;
    return std::string(value);
  }

  std::optional<std::string> raw_or_env(const std::string& section_name,
                                        const ConfigTable& table, const std::string& key) const {
    if (auto env = env_override(section_name, key)) return env;
    return table.raw(key);
  }

  std::string origin_;
  ConfigTable root_;
  std::map<std::string, ConfigTable> sections_;
  std::map<std::string, std::vector<ConfigTable>> table_arrays_;
};

// ---------------------------------------------------------------------------
// Experiment configuration
// ---------------------------------------------------------------------------

struct DatasetConfig {
  std::string name;
  std::string path;
  CorpusFormat format = CorpusFormat::Jsonl;
  Schema schema;
};

/// One mechanism block: the budgets are kept sorted ascending so that their
/// 1-based positions are the low/medium/high budget levels.
struct MechanismSetting {
  std::string type;  // word-mldp | token-temp | doc-vector
  std::vector<double> epsilons;       // word-mldp, doc-vector
  std::vector<double> temperatures;   // token-temp, sorted by derived epsilon
  std::size_t list_size = 10;         // word-mldp
  std::size_t max_new_tokens = 32;    // token-temp
  std::optional<double> clip_lo;      // token-temp; estimated when absent
  std::optional<double> clip_hi;
  double clip_c = 0.1;                // doc-vector

  std::size_t levels() const {
    return type == "token-temp" ? temperatures.size() : epsilons.size();
  }
};

struct ExperimentConfig {
  std::vector<DatasetConfig> datasets;
  std::string embeddings_path;
  std::size_t neighbor_list_size = 16;
  std::vector<MechanismSetting> mechanisms;
  SplitSpec split;
  FeatureMode utility_features = FeatureMode::BagOfWords;
  FeatureMode privacy_features = FeatureMode::BagOfWords;
  std::size_t vocab_cap = 20000;
  TrainingHyper hyper;
  std::size_t nn_cap = 10000;
  std::size_t generator_vocab_cap = 20000;
  std::string output_dir = "out";
  std::uint64_t global_seed = 42;
  unsigned jobs = 1;

  void validate() const {
    if (datasets.empty()) throw Error("config: at least one [[dataset]] block is required");
    for (const auto& d : datasets) {
      if (!file_exists(d.path)) throw Error("config: dataset path not found: " + d.path);
    }
    if (!embeddings_path.empty() && !file_exists(embeddings_path))
      throw Error("config: embeddings path not found: " + embeddings_path);
    if (mechanisms.empty()) throw Error("config: at least one [[mechanism]] block is required");
    for (const auto& m : mechanisms) {
      if (m.levels() == 0)
        throw Error("config: mechanism '" + m.type + "' has an empty budget list");
      const bool needs_embeddings = m.type == "word-mldp" || m.type == "doc-vector";
      if (needs_embeddings && embeddings_path.empty())
        throw Error("config: mechanism '" + m.type + "' requires [embeddings] path");
    }
    split.validate();
  }
};

inline ExperimentConfig load_experiment_config(const std::string& path) {
  const Config config = Config::parse_file(path);
  ExperimentConfig exp;

  for (const auto& table : config.table_array("dataset")) {
    DatasetConfig d;
    d.path = config.get_string("dataset", table, "path");
    d.name = config.get_string("dataset", table, "name", d.path);
    d.format =
        corpus_format_from_string(config.get_string("dataset", table, "format", "jsonl"));
    d.schema.id_field = config.get_string("dataset", table, "id_field", "id");
    d.schema.text_field = config.get_string("dataset", table, "text_field", "text");
    d.schema.utility_field =
        config.get_string("dataset", table, "utility_field", "utility_label");
    const std::string privacy =
        config.get_string("dataset", table, "privacy_field", "privacy_label");
    d.schema.privacy_field = privacy.empty() ? std::nullopt : std::make_optional(privacy);
    d.schema.score_fields =
        config.get_string_array("dataset", table, "score_fields", std::vector<std::string>{});
    exp.datasets.push_back(std::move(d));
  }

  if (config.has_section("embeddings")) {
    const auto& emb = config.section("embeddings");
    exp.embeddings_path = config.get_string("embeddings", emb, "path", "");
    exp.neighbor_list_size = static_cast<std::size_t>(
        config.get_int("embeddings", emb, "neighbor_list_size", 16));
  }

  for (const auto& table : config.table_array("mechanism")) {
    MechanismSetting m;
    m.type = config.get_string("mechanism", table, "type");
    if (m.type == "token-temp") {
      m.temperatures = config.get_double_array("mechanism", table, "temperatures");
      // levels follow ascending epsilon = 2/T, hence descending temperature
      std::sort(m.temperatures.begin(), m.temperatures.end(), std::greater<double>());
      m.max_new_tokens = static_cast<std::size_t>(
          config.get_int("mechanism", table, "max_new_tokens", 32));
      if (table.has("clip_lo"))
        m.clip_lo = config.get_double("mechanism", table, "clip_lo");
      if (table.has("clip_hi"))
        m.clip_hi = config.get_double("mechanism", table, "clip_hi");
    } else if (m.type == "word-mldp" || m.type == "doc-vector") {
      m.epsilons = config.get_double_array("mechanism", table, "epsilons");
      std::sort(m.epsilons.begin(), m.epsilons.end());
      if (m.type == "word-mldp")
        m.list_size =
            static_cast<std::size_t>(config.get_int("mechanism", table, "list_size", 10));
      else
        m.clip_c = config.get_double("mechanism", table, "clip_c", 0.1);
    } else {
      throw Error("config: unknown mechanism type '" + m.type + "'");
    }
    exp.mechanisms.push_back(std::move(m));
  }

  if (config.has_section("split")) {
    const auto& split = config.section("split");
    exp.split.fractions = config.get_double_array(
        "split", split, "fractions", std::vector<double>{0.1, 0.25, 0.5, 0.75, 1.0});
    exp.split.train_ratio = config.get_double("split", split, "train_ratio", 0.9);
    exp.split.seed =
        static_cast<std::uint64_t>(config.get_int("split", split, "seed", 42));
    exp.split.repetitions =
        static_cast<std::size_t>(config.get_int("split", split, "repetitions", 3));
  }

  if (config.has_section("features")) {
    const auto& features = config.section("features");
    exp.utility_features =
        feature_mode_from_string(config.get_string("features", features, "utility", "bow"));
    exp.privacy_features =
        feature_mode_from_string(config.get_string("features", features, "privacy", "bow"));
    exp.vocab_cap =
        static_cast<std::size_t>(config.get_int("features", features, "vocab_cap", 20000));
  }

  if (config.has_section("train")) {
    const auto& train = config.section("train");
    exp.hyper.epochs = static_cast<std::size_t>(config.get_int("train", train, "epochs", 50));
    exp.hyper.learning_rate = config.get_double("train", train, "lr", 0.1);
    exp.hyper.l2 = config.get_double("train", train, "l2", 1e-4);
  }

  if (config.has_section("eval")) {
    const auto& eval = config.section("eval");
    exp.nn_cap = static_cast<std::size_t>(config.get_int("eval", eval, "nn_cap", 10000));
    exp.generator_vocab_cap = static_cast<std::size_t>(
        config.get_int("eval", eval, "generator_vocab_cap", 20000));
  }

  if (config.has_section("output")) {
    exp.output_dir = config.get_string("output", config.section("output"), "dir", "out");
  }
  if (config.has_section("run")) {
    const auto& run = config.section("run");
    exp.global_seed = static_cast<std::uint64_t>(config.get_int("run", run, "seed", 42));
    exp.jobs = static_cast<unsigned>(config.get_int("run", run, "jobs", 1));
  }
  exp.hyper.seed = exp.global_seed;
  return exp;
}

}  // namespace ldpbench
