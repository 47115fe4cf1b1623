#pragma once

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <tuple>
#include <vector>

#include <json.hpp>

#include "ldpbench/classifiers.hpp"
#include "ldpbench/config.hpp"
#include "ldpbench/corpus.hpp"
#include "ldpbench/embeddings.hpp"
#include "ldpbench/io_util.hpp"
#include "ldpbench/mechanisms.hpp"
#include "ldpbench/metrics.hpp"
#include "ldpbench/stats.hpp"

namespace ldpbench {

inline constexpr const char* kArtifactVersion = "0.1.0";

/// Canonical content fingerprint of a configuration; resume refuses to mix
/// results produced under different settings.
inline std::uint64_t config_fingerprint(const ExperimentConfig& cfg) {
  std::string s;
  for (const auto& d : cfg.datasets) {
    s += d.name + "|" + d.path + "|";
    s += d.schema.id_field + d.schema.text_field + d.schema.utility_field;
    if (d.schema.privacy_field) s += *d.schema.privacy_field;
    s += ";";
  }
  s += cfg.embeddings_path + "|" + std::to_string(cfg.neighbor_list_size) + "|";
  for (const auto& m : cfg.mechanisms) {
    s += m.type + ":";
    for (double e : m.epsilons) s += format_real(e) + ",";
    for (double t : m.temperatures) s += format_real(t) + ",";
    s += std::to_string(m.list_size) + "/" + std::to_string(m.max_new_tokens) + "/" +
         format_real(m.clip_c);
    if (m.clip_lo) s += "/" + format_real(*m.clip_lo);
    if (m.clip_hi) s += "/" + format_real(*m.clip_hi);
    s += ";";
  }
  for (double f : cfg.split.fractions) s += format_real(f) + ",";
  s += format_real(cfg.split.train_ratio) + "|" + std::to_string(cfg.split.seed) + "|" +
       std::to_string(cfg.split.repetitions) + "|";
  s += std::to_string(static_cast<int>(cfg.utility_features)) +
       std::to_string(static_cast<int>(cfg.privacy_features)) + "|" +
       std::to_string(cfg.vocab_cap) + "|";
  s += std::to_string(cfg.hyper.epochs) + "," + format_real(cfg.hyper.learning_rate) + "," +
       format_real(cfg.hyper.l2) + "|";
  s += std::to_string(cfg.nn_cap) + "|" + std::to_string(cfg.global_seed);
  return hash64(s);
}

struct CellId {
  std::string dataset;
  std::string mechanism;            // "baseline" for baseline cells
  int level = 0;                    // 0 for baseline
  std::size_t fraction_index = 0;
  std::size_t repetition = 0;       // 1-based

  std::string key() const {
    return dataset + "|" + mechanism + "|l" + std::to_string(level) + "|f" +
           std::to_string(fraction_index) + "|r" + std::to_string(repetition);
  }
};

enum class CellStatus { Pending, Done, Failed };

inline const char* to_string(CellStatus s) {
  switch (s) {
    case CellStatus::Pending: return "pending";
    case CellStatus::Done: return "done";
    case CellStatus::Failed: return "failed";
  }
  return "pending";
}

struct CellState {
  CellStatus status = CellStatus::Pending;
  double ms = 0.0;
  std::string error;
};

struct RunManifest {
  std::uint64_t config_hash = 0;
  std::string artifact_version = kArtifactVersion;
  std::map<std::string, CellState> cells;

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["config_hash"] = config_hash;
    j["artifact_version"] = artifact_version;
    nlohmann::json cell_map = nlohmann::json::object();
    for (const auto& [key, state] : cells) {
      cell_map[key] = {{"status", to_string(state.status)},
                       {"ms", state.ms},
                       {"error", state.error}};
    }
    j["cells"] = std::move(cell_map);
    return j;
  }

  static RunManifest from_json(const nlohmann::json& j) {
    RunManifest m;
    m.config_hash = j.at("config_hash").get<std::uint64_t>();
    m.artifact_version = j.value("artifact_version", std::string(kArtifactVersion));
    for (auto it = j.at("cells").begin(); it != j.at("cells").end(); ++it) {
      CellState state;
      const std::string status = it.value().at("status").get<std::string>();
      state.status = status == "done"     ? CellStatus::Done
                     : status == "failed" ? CellStatus::Failed
                                          : CellStatus::Pending;
      state.ms = it.value().value("ms", 0.0);
      state.error = it.value().value("error", std::string());
      m.cells[it.key()] = state;
    }
    return m;
  }
};

struct PipelineOptions {
  bool dry_run = false;
  bool resume = false;
  std::ostream* log = nullptr;
};

struct PipelineResult {
  std::vector<EvalRecord> records;
  std::optional<RegressionSummary> regression;
  std::vector<std::vector<double>> posthoc;
  std::optional<KruskalWallisResult> kruskal;
  std::vector<double> bin_edges;
  RunManifest manifest;
  std::size_t failed_cells = 0;
  std::string stats_error;

  bool fully_succeeded() const { return failed_cells == 0 && stats_error.empty(); }
};

namespace detail {

struct PreparedMechanism {
  MechanismSetting setting;
  std::size_t setting_index = 0;
  int level = 0;  // 1-based
  MechanismConfig config;
};

struct DatasetContext {
  DatasetConfig cfg;
  Corpus original;
  std::vector<FractionPlan> plans;
  std::vector<PreparedMechanism> mechanisms;
  std::map<std::pair<std::size_t, int>, Corpus> privatized;  // (setting, level)
  std::unique_ptr<NgramGenerator> generator;
  // NN score per (setting, level, fraction index); filled before cell runs.
  std::map<std::tuple<std::size_t, int, std::size_t>, double> nn_scores;
};

/// Split of one fraction materialized against a given corpus.
struct CellSplit {
  Corpus train;
  Corpus val;
};

inline CellSplit materialize(const Corpus& corpus, const FractionPlan& plan,
                             std::size_t repetition) {
  CellSplit s;
  s.train = subset_corpus(corpus, plan.train_orders[repetition - 1]);
  s.val = subset_corpus(corpus, plan.val_indices);
  return s;
}

inline double split_avg_words(const Corpus& corpus, const FractionPlan& plan) {
  std::size_t total = 0, docs = 0;
  for (std::size_t idx : plan.train_orders[0]) {
    total += corpus.documents[idx].tokens.size();
    ++docs;
  }
  for (std::size_t idx : plan.val_indices) {
    total += corpus.documents[idx].tokens.size();
    ++docs;
  }
  return docs == 0 ? 0.0 : static_cast<double>(total) / static_cast<double>(docs);
}

/// Runs tasks over a small pool. Results land in caller-owned slots, so the
/// output is independent of scheduling order.
inline void run_parallel(std::size_t task_count, unsigned jobs,
                         const std::function<void(std::size_t)>& task) {
  if (task_count == 0) return;
  const unsigned workers =
      std::max(1u, std::min<unsigned>(jobs, static_cast<unsigned>(task_count)));
  if (workers == 1) {
    for (std::size_t i = 0; i < task_count; ++i) task(i);
    return;
  }
  std::mutex mu;
  std::size_t next = 0;
  std::vector<std::thread> pool;
  for (unsigned w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      while (true) {
        std::size_t mine;
        {
          std::lock_guard<std::mutex> lock(mu);
          if (next >= task_count) return;
          mine = next++;
        }
        task(mine);
      }
    });
  }
  for (auto& t : pool) t.join();
}

}  // namespace detail

/// Executes the full evaluation pipeline:
///   privatize -> split -> baseline + utility + adversary runs -> gamma and
///   NN metrics -> regression, binning, Kruskal-Wallis and Dunn post-hoc.
/// Cell failures are isolated and recorded in the manifest; outputs are
/// persisted under cfg.output_dir and the run can resume from the manifest.
/// Datasets without privacy labels contribute utility-only records, which
/// are excluded from gamma-based statistics.
inline PipelineResult run_pipeline(const ExperimentConfig& cfg,
                                   const PipelineOptions& options = PipelineOptions{}) {
  namespace fs = std::filesystem;
  cfg.validate();

  PipelineResult result;
  result.manifest.config_hash = config_fingerprint(cfg);

  const auto log_line = [&](const std::string& line) {
    if (options.log) (*options.log) << line << "\n";
  };

  // Enumerate the cell plan: baselines first, mechanism cells after.
  std::vector<CellId> baseline_cells;
  std::vector<CellId> mechanism_cells;
  for (const auto& dataset : cfg.datasets) {
    for (std::size_t fi = 0; fi < cfg.split.fractions.size(); ++fi)
      for (std::size_t r = 1; r <= cfg.split.repetitions; ++r)
        baseline_cells.push_back(CellId{dataset.name, "baseline", 0, fi, r});
    for (const auto& mech : cfg.mechanisms)
      for (std::size_t level = 1; level <= mech.levels(); ++level)
        for (std::size_t fi = 0; fi < cfg.split.fractions.size(); ++fi)
          for (std::size_t r = 1; r <= cfg.split.repetitions; ++r)
            mechanism_cells.push_back(
                CellId{dataset.name, mech.type, static_cast<int>(level), fi, r});
  }

  if (options.dry_run) {
    log_line("dry run: " + std::to_string(baseline_cells.size() + mechanism_cells.size()) +
             " cells");
    for (const auto& cell : baseline_cells) log_line("plan " + cell.key());
    for (const auto& cell : mechanism_cells) log_line("plan " + cell.key());
    for (const auto& cell : baseline_cells)
      result.manifest.cells[cell.key()] = CellState{};
    for (const auto& cell : mechanism_cells)
      result.manifest.cells[cell.key()] = CellState{};
    return result;
  }

  fs::create_directories(cfg.output_dir);
  fs::create_directories(cfg.output_dir + "/private");
  const std::string manifest_path = cfg.output_dir + "/manifest.json";
  const std::string partial_path = cfg.output_dir + "/records.partial.jsonl";
  const std::string cells_path = cfg.output_dir + "/cells.csv";

  // Resume bookkeeping: completed cells keep their stored records.
  std::map<std::string, std::vector<EvalRecord>> cell_records;
  if (options.resume && file_exists(manifest_path)) {
    try {
      const RunManifest previous =
          RunManifest::from_json(nlohmann::json::parse(read_file(manifest_path)));
      if (previous.config_hash == result.manifest.config_hash && file_exists(partial_path)) {
        std::istringstream in(read_file(partial_path));
        std::string line;
        while (std::getline(in, line)) {
          if (line.empty()) continue;
          const nlohmann::json entry = nlohmann::json::parse(line);
          const std::string key = entry.at("cell").get<std::string>();
          auto it = previous.cells.find(key);
          if (it == previous.cells.end() || it->second.status != CellStatus::Done) continue;
          std::vector<EvalRecord> records;
          for (const auto& rj : entry.at("records"))
            records.push_back(eval_record_from_json(rj));
          cell_records[key] = std::move(records);
          result.manifest.cells[key] = it->second;
        }
        log_line("resume: restored " + std::to_string(cell_records.size()) + " cells");
      } else {
        log_line("resume: manifest does not match this configuration, starting fresh");
      }
    } catch (const std::exception& e) {
      log_line(std::string("resume: ignoring unreadable manifest: ") + e.what());
    }
  }

  std::ofstream partial(partial_path,
                        std::ios::binary | (cell_records.empty() ? std::ios::trunc
                                                                 : std::ios::app));
  std::mutex io_mu;
  const auto record_cell = [&](const CellId& cell, CellState state,
                               std::vector<EvalRecord> records) {
    std::lock_guard<std::mutex> lock(io_mu);
    if (state.status == CellStatus::Done) {
      nlohmann::json entry;
      entry["cell"] = cell.key();
      entry["records"] = nlohmann::json::array();
      for (const auto& r : records) entry["records"].push_back(eval_record_to_json(r));
      partial << entry.dump() << "\n";
      partial.flush();
      cell_records[cell.key()] = std::move(records);
    }
    result.manifest.cells[cell.key()] = std::move(state);
    write_file(manifest_path, result.manifest.to_json().dump(2));
  };

  // -------------------------------------------------------------------------
  // Per-dataset preparation: load, privatize, plan splits, NN scores.
  // -------------------------------------------------------------------------
  std::optional<EmbeddingTable> embeddings;
  std::optional<NeighborIndex> neighbor_index;
  if (!cfg.embeddings_path.empty()) {
    embeddings = load_embeddings(cfg.embeddings_path);
    const bool needs_index =
        std::any_of(cfg.mechanisms.begin(), cfg.mechanisms.end(),
                    [](const MechanismSetting& m) { return m.type == "word-mldp"; });
    if (needs_index) {
      const std::uint64_t content_hash = hash64(read_file(cfg.embeddings_path));
      const std::string cache_path = cfg.embeddings_path + ".nn" +
                                     std::to_string(cfg.neighbor_list_size) + ".jsonl";
      neighbor_index =
          load_neighbor_index(cache_path, content_hash, cfg.neighbor_list_size);
      if (neighbor_index) {
        log_line("neighbor index restored from " + cache_path);
      } else {
        neighbor_index =
            build_neighbor_index(*embeddings, cfg.neighbor_list_size, cfg.jobs);
        try {
          save_neighbor_index(*neighbor_index, content_hash, cache_path);
        } catch (const std::exception& e) {
          log_line(std::string("neighbor index cache not written: ") + e.what());
        }
      }
    }
  }

  std::map<std::string, detail::DatasetContext> contexts;
  std::map<std::string, std::string> dataset_errors;
  for (const auto& dataset : cfg.datasets) {
    try {
      detail::DatasetContext ctx;
      ctx.cfg = dataset;
      ctx.original = load_corpus(dataset.path, dataset.format, dataset.schema, dataset.name);
      ctx.plans = split_plan(ctx.original.documents.size(), cfg.split);

      const bool needs_generator =
          std::any_of(cfg.mechanisms.begin(), cfg.mechanisms.end(),
                      [](const MechanismSetting& m) { return m.type == "token-temp"; });
      if (needs_generator)
        ctx.generator =
            std::make_unique<NgramGenerator>(ctx.original, cfg.generator_vocab_cap);

      for (std::size_t mi = 0; mi < cfg.mechanisms.size(); ++mi) {
        const MechanismSetting& setting = cfg.mechanisms[mi];
        std::optional<ClipRange> estimated_clip;
        if (setting.type == "token-temp" && (!setting.clip_lo || !setting.clip_hi)) {
          // Calibrate the clip range on logits from up to 100 sampled texts.
          std::vector<std::size_t> order(ctx.original.documents.size());
          for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
          Rng rng = make_rng(mix_seed(cfg.global_seed, hash64("clip-range"),
                                      hash64(dataset.name)));
          deterministic_shuffle(order, rng);
          std::vector<std::vector<double>> samples;
          std::vector<double> logits;
          for (std::size_t i = 0; i < order.size() && i < 100; ++i) {
            ctx.generator->logits(ctx.original.documents[order[i]].tokens, logits);
            samples.push_back(logits);
          }
          estimated_clip = estimate_clip_range(samples);
          if (estimated_clip->degenerate)
            throw Error("clip range estimation degenerate for dataset " + dataset.name);
          log_line("clip range for " + dataset.name + ": (" +
                   format_real(estimated_clip->lo) + ", " + format_real(estimated_clip->hi) +
                   ")");
        }
        for (std::size_t level = 1; level <= setting.levels(); ++level) {
          detail::PreparedMechanism prepared;
          prepared.setting = setting;
          prepared.setting_index = mi;
          prepared.level = static_cast<int>(level);
          if (setting.type == "word-mldp") {
            prepared.config = WordMLDP{setting.epsilons[level - 1], setting.list_size};
          } else if (setting.type == "token-temp") {
            TokenTemperature t;
            t.temperature = setting.temperatures[level - 1];
            t.clip_lo = setting.clip_lo ? *setting.clip_lo : estimated_clip->lo;
            t.clip_hi = setting.clip_hi ? *setting.clip_hi : estimated_clip->hi;
            t.max_new_tokens = setting.max_new_tokens;
            prepared.config = t;
          } else {
            if (!embeddings)
              throw Error("doc-vector mechanism requires an embedding table");
            prepared.config =
                DocVector{setting.epsilons[level - 1], setting.clip_c, embeddings->dim};
          }
          ctx.mechanisms.push_back(prepared);
        }
      }

      contexts.emplace(dataset.name, std::move(ctx));
    } catch (const std::exception& e) {
      dataset_errors[dataset.name] = e.what();
      log_line("dataset " + dataset.name + " failed to prepare: " + e.what());
    }
  }

  // Privatize in parallel across (dataset, mechanism, level).
  {
    struct PrivatizeTask {
      detail::DatasetContext* ctx;
      const detail::PreparedMechanism* mech;
    };
    std::vector<PrivatizeTask> tasks;
    for (auto& [name, ctx] : contexts)
      for (const auto& mech : ctx.mechanisms) tasks.push_back({&ctx, &mech});
    std::vector<std::pair<std::size_t, Corpus>> outputs(tasks.size());
    std::vector<std::string> errors(tasks.size());
    detail::run_parallel(tasks.size(), cfg.jobs, [&](std::size_t i) {
      try {
        MechanismDeps deps;
        deps.neighbor_index = neighbor_index ? &*neighbor_index : nullptr;
        deps.generator = tasks[i].ctx->generator.get();
        deps.embeddings = embeddings ? &*embeddings : nullptr;
        outputs[i] = {i, privatize_corpus(tasks[i].ctx->original, tasks[i].mech->config, deps,
                                          cfg.global_seed)};
      } catch (const std::exception& e) {
        errors[i] = e.what();
      }
    });
    for (std::size_t i = 0; i < tasks.size(); ++i) {
      const auto key = std::make_pair(tasks[i].mech->setting_index, tasks[i].mech->level);
      if (!errors[i].empty()) {
        dataset_errors[tasks[i].ctx->cfg.name] = errors[i];
        continue;
      }
      PrivatizationStamp stamp{mechanism_tag(tasks[i].mech->config),
                               mechanism_epsilon(tasks[i].mech->config),
                               mechanism_epsilon_unit(tasks[i].mech->config)};
      const std::string path = cfg.output_dir + "/private/" + tasks[i].ctx->cfg.name + "__" +
                               tasks[i].mech->setting.type + "__l" +
                               std::to_string(tasks[i].mech->level) + ".jsonl";
      save_corpus_jsonl(outputs[i].second, path, stamp);
      tasks[i].ctx->privatized[key] = std::move(outputs[i].second);
    }
  }

  // Precompute NN indistinguishability per (dataset, mechanism, level,
  // fraction); repetitions share the value because the split set is fixed.
  {
    struct NnTask {
      detail::DatasetContext* ctx;
      const detail::PreparedMechanism* mech;
      std::size_t fraction_index;
    };
    std::vector<NnTask> tasks;
    for (auto& [name, ctx] : contexts) {
      if (dataset_errors.count(name)) continue;
      if (!embeddings) continue;
      for (const auto& mech : ctx.mechanisms) {
        for (std::size_t fi = 0; fi < ctx.plans.size(); ++fi) {
          bool any_pending = false;
          for (std::size_t r = 1; r <= cfg.split.repetitions; ++r) {
            const CellId cell{name, mech.setting.type, mech.level, fi, r};
            if (!cell_records.count(cell.key())) any_pending = true;
          }
          if (any_pending) tasks.push_back({&ctx, &mech, fi});
        }
      }
    }
    std::vector<double> scores(tasks.size(), 0.0);
    std::vector<std::string> errors(tasks.size());
    detail::run_parallel(tasks.size(), cfg.jobs, [&](std::size_t i) {
      try {
        auto& ctx = *tasks[i].ctx;
        const auto& plan = ctx.plans[tasks[i].fraction_index];
        std::vector<std::size_t> indices = plan.train_orders[0];
        indices.insert(indices.end(), plan.val_indices.begin(), plan.val_indices.end());
        const Corpus original_subset = subset_corpus(ctx.original, indices);
        const auto key =
            std::make_pair(tasks[i].mech->setting_index, tasks[i].mech->level);
        const Corpus private_subset = subset_corpus(ctx.privatized.at(key), indices);
        scores[i] =
            nn_indistinguishability(private_subset, original_subset, *embeddings, cfg.nn_cap)
                .mean_k;
      } catch (const std::exception& e) {
        errors[i] = e.what();
      }
    });
    for (std::size_t i = 0; i < tasks.size(); ++i) {
      if (!errors[i].empty()) continue;  // cells will fail with a clear message
      tasks[i].ctx->nn_scores[{tasks[i].mech->setting_index, tasks[i].mech->level,
                               tasks[i].fraction_index}] = scores[i];
    }
  }

  // -------------------------------------------------------------------------
  // Baseline cells.
  // -------------------------------------------------------------------------
  struct BaselineScores {
    double util = 0.0;
    double priv = 0.0;
    double mg_u = 0.0;
    bool ok = false;
  };
  std::map<std::string, BaselineScores> baselines;  // by cell key

  const auto feature_spec_for = [&](FeatureMode mode) {
    FeatureSpec spec;
    spec.mode = mode;
    spec.vocab_cap = cfg.vocab_cap;
    spec.embeddings = embeddings ? &*embeddings : nullptr;
    return spec;
  };

  const auto run_cells = [&](const std::vector<CellId>& cells,
                             const std::function<std::vector<EvalRecord>(const CellId&)>& body) {
    detail::run_parallel(cells.size(), cfg.jobs, [&](std::size_t i) {
      const CellId& cell = cells[i];
      if (cell_records.count(cell.key())) return;  // resumed
      const auto start = std::chrono::steady_clock::now();
      CellState state;
      std::vector<EvalRecord> records;
      try {
        records = body(cell);
        state.status = CellStatus::Done;
      } catch (const std::exception& e) {
        state.status = CellStatus::Failed;
        state.error = e.what();
        log_line("cell " + cell.key() + " failed: " + state.error);
      }
      state.ms = std::chrono::duration<double, std::milli>(
                     std::chrono::steady_clock::now() - start)
                     .count();
      if (state.status == CellStatus::Done)
        log_line("cell " + cell.key() + " done in " + format_real(state.ms) + " ms");
      record_cell(cell, std::move(state), std::move(records));
    });
  };

  run_cells(baseline_cells, [&](const CellId& cell) -> std::vector<EvalRecord> {
    auto ctx_it = contexts.find(cell.dataset);
    if (ctx_it == contexts.end() || dataset_errors.count(cell.dataset))
      throw Error("dataset unavailable: " +
                  (dataset_errors.count(cell.dataset) ? dataset_errors[cell.dataset]
                                                      : cell.dataset));
    auto& ctx = ctx_it->second;
    const auto& plan = ctx.plans[cell.fraction_index];
    const detail::CellSplit split = detail::materialize(ctx.original, plan, cell.repetition);

    EvalRecord record;
    record.dataset = cell.dataset;
    record.mechanism = "baseline";
    record.epsilon_level = 0;
    record.epsilon = 0.0;
    record.split_fraction = plan.fraction;
    record.run_index = static_cast<int>(cell.repetition);
    record.size = plan.train_orders[0].size() + plan.val_indices.size();
    record.avg_words = detail::split_avg_words(ctx.original, plan);
    record.util_labels = ctx.original.utility_label_set.size();
    record.priv_labels = ctx.original.privacy_label_set.size();

    TrainingHyper hyper = cfg.hyper;
    hyper.seed = mix_seed(cfg.global_seed, hash64(cell.key()), 1);
    record.util_f1 = evaluate_model(split.train, split.val, Task::Utility,
                                    feature_spec_for(cfg.utility_features), hyper);
    record.util_baseline = record.util_f1;
    record.mg_u = majority_guess(split.val);
    if (!ctx.original.privacy_label_set.empty()) {
      hyper.seed = mix_seed(cfg.global_seed, hash64(cell.key()), 2);
      record.priv_f1_static = evaluate_model(split.train, split.val, Task::Privacy,
                                             feature_spec_for(cfg.privacy_features), hyper);
      record.priv_f1_adaptive = record.priv_f1_static;
      record.priv_baseline = record.priv_f1_static;
    }
    record.gamma_static = 0.0;
    record.gamma_adaptive = 0.0;
    record.nn_mean_k = 1.0;  // identity privatization by definition

    BaselineScores scores;
    scores.util = record.util_baseline;
    scores.priv = record.priv_baseline;
    scores.mg_u = record.mg_u;
    scores.ok = true;
    {
      std::lock_guard<std::mutex> lock(io_mu);
      baselines[cell.key()] = scores;
    }
    return {record};
  });

  // Resumed baseline cells still need their scores for dependent cells.
  for (const auto& cell : baseline_cells) {
    auto it = cell_records.find(cell.key());
    if (it == cell_records.end() || it->second.empty()) continue;
    const EvalRecord& r = it->second.front();
    baselines[cell.key()] = BaselineScores{r.util_baseline, r.priv_baseline, r.mg_u, true};
  }

  // -------------------------------------------------------------------------
  // Mechanism cells.
  // -------------------------------------------------------------------------
  run_cells(mechanism_cells, [&](const CellId& cell) -> std::vector<EvalRecord> {
    auto ctx_it = contexts.find(cell.dataset);
    if (ctx_it == contexts.end() || dataset_errors.count(cell.dataset))
      throw Error("dataset unavailable: " +
                  (dataset_errors.count(cell.dataset) ? dataset_errors[cell.dataset]
                                                      : cell.dataset));
    auto& ctx = ctx_it->second;

    const detail::PreparedMechanism* prepared = nullptr;
    for (const auto& mech : ctx.mechanisms)
      if (mech.setting.type == cell.mechanism && mech.level == cell.level) prepared = &mech;
    if (!prepared) throw Error("mechanism not prepared: " + cell.mechanism);

    const CellId baseline_cell{cell.dataset, "baseline", 0, cell.fraction_index,
                               cell.repetition};
    BaselineScores baseline;
    {
      std::lock_guard<std::mutex> lock(io_mu);
      auto it = baselines.find(baseline_cell.key());
      if (it == baselines.end() || !it->second.ok)
        throw Error("baseline unavailable for " + baseline_cell.key());
      baseline = it->second;
    }

    const auto priv_key = std::make_pair(prepared->setting_index, prepared->level);
    auto priv_it = ctx.privatized.find(priv_key);
    if (priv_it == ctx.privatized.end())
      throw Error("privatized corpus unavailable for " + cell.key());
    const Corpus& private_corpus = priv_it->second;
    const auto& plan = ctx.plans[cell.fraction_index];
    const detail::CellSplit original_split =
        detail::materialize(ctx.original, plan, cell.repetition);
    const detail::CellSplit private_split =
        detail::materialize(private_corpus, plan, cell.repetition);

    const bool vector_mechanism = std::holds_alternative<DocVector>(prepared->config);
    const FeatureSpec util_private = feature_spec_for(
        vector_mechanism ? FeatureMode::RawVector : cfg.utility_features);
    const FeatureSpec priv_private = feature_spec_for(
        vector_mechanism ? FeatureMode::RawVector : cfg.privacy_features);
    const FeatureSpec priv_original = feature_spec_for(
        vector_mechanism ? FeatureMode::MeanEmbedding : cfg.privacy_features);

    EvalRecord record;
    record.dataset = cell.dataset;
    record.mechanism = prepared->setting.type;
    record.epsilon_level = prepared->level;
    record.epsilon = mechanism_epsilon(prepared->config);
    record.split_fraction = plan.fraction;
    record.run_index = static_cast<int>(cell.repetition);
    record.size = plan.train_orders[0].size() + plan.val_indices.size();
    record.avg_words = detail::split_avg_words(ctx.original, plan);
    record.util_labels = ctx.original.utility_label_set.size();
    record.priv_labels = ctx.original.privacy_label_set.size();
    record.util_baseline = baseline.util;
    record.priv_baseline = baseline.priv;
    record.mg_u = baseline.mg_u;

    TrainingHyper hyper = cfg.hyper;
    hyper.seed = mix_seed(cfg.global_seed, hash64(cell.key()), 1);
    record.util_f1 = evaluate_model(private_split.train, private_split.val, Task::Utility,
                                    util_private, hyper);

    if (!ctx.original.privacy_label_set.empty()) {
      hyper.seed = mix_seed(cfg.global_seed, hash64(cell.key()), 2);
      record.priv_f1_static = evaluate_model(original_split.train, private_split.val,
                                             Task::Privacy, priv_original, hyper);
      hyper.seed = mix_seed(cfg.global_seed, hash64(cell.key()), 3);
      record.priv_f1_adaptive = evaluate_model(private_split.train, private_split.val,
                                               Task::Privacy, priv_private, hyper);
      record.gamma_static =
          relative_gain(record.util_f1, record.util_baseline, record.priv_f1_static,
                        record.priv_baseline, record.mg_u);
      record.gamma_adaptive =
          relative_gain(record.util_f1, record.util_baseline, record.priv_f1_adaptive,
                        record.priv_baseline, record.mg_u);
    }

    auto nn_it = ctx.nn_scores.find(
        {prepared->setting_index, prepared->level, cell.fraction_index});
    record.nn_mean_k = nn_it != ctx.nn_scores.end() ? nn_it->second : 0.0;
    return {record};
  });

  // -------------------------------------------------------------------------
  // Deterministic record assembly and persistence.
  // -------------------------------------------------------------------------
  const auto mechanism_rank = [](const std::string& m) {
    if (m == "baseline") return 0;
    if (m == "word-mldp") return 1;
    if (m == "token-temp") return 2;
    if (m == "doc-vector") return 3;
    return 4;
  };
  std::vector<CellId> all_cells = baseline_cells;
  all_cells.insert(all_cells.end(), mechanism_cells.begin(), mechanism_cells.end());
  std::sort(all_cells.begin(), all_cells.end(), [&](const CellId& a, const CellId& b) {
    return std::make_tuple(a.dataset, mechanism_rank(a.mechanism), a.level, a.fraction_index,
                           a.repetition) < std::make_tuple(b.dataset,
                                                           mechanism_rank(b.mechanism), b.level,
                                                           b.fraction_index, b.repetition);
  });
  for (const auto& cell : all_cells) {
    auto it = cell_records.find(cell.key());
    if (it == cell_records.end()) {
      ++result.failed_cells;
      continue;
    }
    for (const auto& r : it->second) result.records.push_back(r);
  }
  save_eval_records(result.records, cells_path);

  // -------------------------------------------------------------------------
  // Statistics stage over completed gamma-bearing records.
  // -------------------------------------------------------------------------
  try {
    std::vector<EvalRecord> usable;
    for (const auto& r : result.records)
      if (r.mechanism != "baseline" && r.priv_labels > 0) usable.push_back(r);
    if (usable.empty()) throw Error("no gamma-bearing records for the statistics stage");

    const DesignMatrix design = encode_design(usable);
    result.regression = ols_fit(design);
    write_file(cfg.output_dir + "/regression.json", result.regression->to_json().dump(2));

    std::vector<double> log_sizes;
    std::vector<double> avg_gamma;
    for (const auto& r : usable) {
      log_sizes.push_back(std::log(static_cast<double>(r.size)));
      avg_gamma.push_back(0.5 * (r.gamma_static + r.gamma_adaptive));
    }
    const BinResult bins = equal_width_bins(log_sizes, 5);
    result.bin_edges = bins.edges;
    std::vector<std::vector<double>> groups(5);
    for (std::size_t i = 0; i < avg_gamma.size(); ++i)
      groups[static_cast<std::size_t>(bins.labels[i] - 1)].push_back(avg_gamma[i]);
    std::vector<std::vector<double>> nonempty;
    for (auto& g : groups)
      if (!g.empty()) nonempty.push_back(std::move(g));
    result.kruskal = kruskal_wallis(nonempty);
    result.posthoc = dunn_posthoc(nonempty);
    save_posthoc_csv(result.posthoc, cfg.output_dir + "/posthoc.csv");
  } catch (const std::exception& e) {
    result.stats_error = e.what();
    log_line(std::string("statistics stage failed: ") + e.what());
  }

  write_file(manifest_path, result.manifest.to_json().dump(2));
  return result;
}

// ---------------------------------------------------------------------------
// Report rendering
// ---------------------------------------------------------------------------

namespace detail {

inline std::string fixed_decimals(double v, int decimals) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", decimals, v);
  return buf;
}

inline std::string short_real(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.4g", v);
  return buf;
}

}  // namespace detail

/// Renders a per-dataset results table: one block of rows per split
/// fraction (utility, static/adaptive privacy, gammas, NN), one column per
/// (mechanism, budget level), averaged over runs.
inline std::string format_results_table(std::span<const EvalRecord> records) {
  struct CellAgg {
    double util = 0, priv_s = 0, priv_a = 0, g_s = 0, g_a = 0, nn = 0;
    std::size_t n = 0;
  };
  // dataset -> fraction -> column key -> aggregate
  std::map<std::string, std::map<double, std::map<std::string, CellAgg>>> table;
  std::map<std::string, std::map<std::string, std::pair<int, double>>> column_order;
  const auto mech_rank = [](const std::string& m) {
    if (m == "word-mldp") return 1;
    if (m == "token-temp") return 2;
    if (m == "doc-vector") return 3;
    return 4;
  };

  for (const auto& r : records) {
    const std::string column = r.mechanism == "baseline"
                                   ? "baseline"
                                   : r.mechanism + " " + detail::short_real(r.epsilon);
    auto& agg = table[r.dataset][r.split_fraction][column];
    agg.util += r.util_f1;
    agg.priv_s += r.priv_f1_static;
    agg.priv_a += r.priv_f1_adaptive;
    agg.g_s += r.gamma_static;
    agg.g_a += r.gamma_adaptive;
    agg.nn += r.nn_mean_k;
    ++agg.n;
    column_order[r.dataset][column] = {
        r.mechanism == "baseline" ? 0 : mech_rank(r.mechanism),
        r.mechanism == "baseline" ? 0.0 : r.epsilon};
  }

  std::ostringstream out;
  for (const auto& [dataset, fractions] : table) {
    std::vector<std::string> columns;
    {
      std::vector<std::tuple<int, double, std::string>> ordered;
      for (const auto& [name, rank] : column_order[dataset])
        ordered.emplace_back(rank.first, rank.second, name);
      std::sort(ordered.begin(), ordered.end());
      for (const auto& [a, b, name] : ordered) columns.push_back(name);
    }
    out << "dataset: " << dataset << "\n";
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%-8s %-9s", "split", "metric");
    out << buf;
    for (const auto& c : columns) {
      std::snprintf(buf, sizeof(buf), " %16s", c.c_str());
      out << buf;
    }
    out << "\n" << std::string(19 + 17 * columns.size(), '-') << "\n";

    for (const auto& [fraction, cells] : fractions) {
      const struct {
        const char* name;
        int decimals;
        double CellAgg::* member;
        bool skip_baseline;
      } rows[] = {
          {"util", 1, &CellAgg::util, false},   {"priv(s)", 1, &CellAgg::priv_s, false},
          {"priv(a)", 1, &CellAgg::priv_a, false}, {"gamma(s)", 2, &CellAgg::g_s, true},
          {"gamma(a)", 2, &CellAgg::g_a, true}, {"nn", 0, &CellAgg::nn, true},
      };
      bool first = true;
      for (const auto& row : rows) {
        std::snprintf(buf, sizeof(buf), "%-8s %-9s",
                      first ? format_real(fraction).c_str() : "", row.name);
        out << buf;
        first = false;
        for (const auto& c : columns) {
          auto it = cells.find(c);
          std::string value = "-";
          if (it != cells.end() && it->second.n > 0 &&
              !(row.skip_baseline && c == "baseline")) {
            const double mean =
                it->second.*(row.member) / static_cast<double>(it->second.n);
            value = detail::fixed_decimals(mean, row.decimals);
          }
          std::snprintf(buf, sizeof(buf), " %16s", value.c_str());
          out << buf;
        }
        out << "\n";
      }
      out << "\n";
    }
  }
  return out.str();
}

}  // namespace ldpbench
