// Command-line front end: privatize corpora, build splits, train and score
// classifiers, compute NN indistinguishability and relative gains, fit the
// regression stack, or drive the whole pipeline from a config file.

#include <cmath>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "ldpbench/classifiers.hpp"
#include "ldpbench/config.hpp"
#include "ldpbench/corpus.hpp"
#include "ldpbench/embeddings.hpp"
#include "ldpbench/harness.hpp"
#include "ldpbench/mechanisms.hpp"
#include "ldpbench/metrics.hpp"
#include "ldpbench/stats.hpp"

namespace {

using namespace ldpbench;

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitPartialFailure = 2;

Schema schema_from_flags(const std::string& id_field, const std::string& text_field,
                         const std::string& utility_field, const std::string& privacy_field,
                         const std::vector<std::string>& score_fields) {
  Schema schema;
  schema.id_field = id_field;
  schema.text_field = text_field;
  schema.utility_field = utility_field;
  schema.privacy_field =
      privacy_field.empty() ? std::nullopt : std::make_optional(privacy_field);
  schema.score_fields = score_fields;
  return schema;
}

int run_privatize(const std::string& in_path, const std::string& format,
                  const std::string& out_path, const std::string& mechanism, double epsilon,
                  double temperature, const std::string& embeddings_path,
                  std::size_t list_size, double clip_c, double clip_lo, double clip_hi,
                  std::size_t max_new_tokens, std::uint64_t seed, const Schema& schema) {
  const Corpus corpus = load_corpus(in_path, corpus_format_from_string(format), schema);

  std::optional<EmbeddingTable> table;
  std::optional<NeighborIndex> index;
  std::unique_ptr<NgramGenerator> generator;
  MechanismConfig config;
  MechanismDeps deps;

  if (mechanism == "word-mldp") {
    if (embeddings_path.empty()) throw Error("word-mldp requires --embeddings");
    table = load_embeddings(embeddings_path);
    const std::uint64_t content_hash = hash64(read_file(embeddings_path));
    const std::string cache_path =
        embeddings_path + ".nn" + std::to_string(list_size) + ".jsonl";
    index = load_neighbor_index(cache_path, content_hash, list_size);
    if (!index) {
      index = build_neighbor_index(*table, list_size);
      try {
        save_neighbor_index(*index, content_hash, cache_path);
      } catch (const std::exception&) {
        // cache is best-effort
      }
    }
    config = WordMLDP{epsilon, list_size};
    deps.neighbor_index = &*index;
  } else if (mechanism == "token-temp") {
    generator = std::make_unique<NgramGenerator>(corpus);
    TokenTemperature t;
    t.temperature = temperature;
    t.max_new_tokens = max_new_tokens;
    if (std::isnan(clip_lo) || std::isnan(clip_hi)) {
      std::vector<std::vector<double>> samples;
      std::vector<double> logits;
      std::vector<std::size_t> order(corpus.documents.size());
      for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
      Rng rng = make_rng(mix_seed(seed, hash64("clip-range")));
      deterministic_shuffle(order, rng);
      for (std::size_t i = 0; i < order.size() && i < 100; ++i) {
        generator->logits(corpus.documents[order[i]].tokens, logits);
        samples.push_back(logits);
      }
      const ClipRange range = estimate_clip_range(samples);
      if (range.degenerate) throw Error("estimated clip range is degenerate");
      t.clip_lo = range.lo;
      t.clip_hi = range.hi;
      std::cerr << "estimated clip range: (" << format_real(range.lo) << ", "
                << format_real(range.hi) << ")\n";
    } else {
      t.clip_lo = clip_lo;
      t.clip_hi = clip_hi;
    }
    config = t;
    deps.generator = generator.get();
  } else if (mechanism == "doc-vector") {
    if (embeddings_path.empty()) throw Error("doc-vector requires --embeddings");
    table = load_embeddings(embeddings_path);
    config = DocVector{epsilon, clip_c, table->dim};
    deps.embeddings = &*table;
  } else {
    throw Error("unknown mechanism: " + mechanism);
  }

  const Corpus privatized = privatize_corpus(corpus, config, deps, seed);
  PrivatizationStamp stamp{mechanism_tag(config), mechanism_epsilon(config),
                           mechanism_epsilon_unit(config)};
  save_corpus_jsonl(privatized, out_path, stamp);
  std::cout << "privatized " << privatized.documents.size() << " documents -> " << out_path
            << "\n";
  return kExitOk;
}

int run_split(const std::string& in_path, const std::string& format,
              const std::string& out_dir, const SplitSpec& spec, const Schema& schema) {
  const Corpus corpus = load_corpus(in_path, corpus_format_from_string(format), schema);
  std::filesystem::create_directories(out_dir);
  const auto splits = make_splits(corpus, spec);
  for (const auto& s : splits) {
    const std::string stem = out_dir + "/f" + format_real(s.fraction) + "_r" +
                             std::to_string(s.repetition);
    save_corpus_jsonl(s.pair.train, stem + "_train.jsonl");
    if (s.repetition == 1) save_corpus_jsonl(s.pair.val, stem + "_val.jsonl");
    std::cout << "fraction " << format_real(s.fraction) << " rep " << s.repetition
              << ": train " << s.pair.train.size() << " val " << s.pair.val.size() << "\n";
  }
  return kExitOk;
}

int run_eval_cmd(const std::string& train_path, const std::string& val_path,
                 const std::string& format, const std::string& task_name,
                 const std::string& feature_mode, const std::string& embeddings_path,
                 std::size_t vocab_cap, std::size_t reps, const TrainingHyper& hyper,
                 const std::string& save_model_path, const Schema& schema) {
  const CorpusFormat fmt = corpus_format_from_string(format);
  const Corpus train_corpus = load_corpus(train_path, fmt, schema);
  const Corpus val_corpus = load_corpus(val_path, fmt, schema);
  const Task task = task_name == "privacy" ? Task::Privacy : Task::Utility;

  std::optional<EmbeddingTable> table;
  FeatureSpec spec;
  spec.mode = feature_mode_from_string(feature_mode);
  spec.vocab_cap = vocab_cap;
  if (spec.mode == FeatureMode::MeanEmbedding) {
    if (embeddings_path.empty()) throw Error("mean-embedding features require --embeddings");
    table = load_embeddings(embeddings_path);
    spec.embeddings = &*table;
  }
  const EvalScore score = run_eval(train_corpus, val_corpus, task, spec, reps, hyper);
  char line[96];
  std::snprintf(line, sizeof(line), "micro-F1 mean %.2f std %.2f over %zu reps\n",
                score.mean_f1, score.std_f1, reps);
  std::cout << line;
  if (!save_model_path.empty()) {
    const Featurizer featurizer = Featurizer::fit(train_corpus, spec);
    const LinearModel model =
        train(featurizer.transform(train_corpus), task_labels(train_corpus, task),
              task_label_set(train_corpus, task), hyper);
    write_file(save_model_path, model.to_json().dump(2));
    std::cout << "model -> " << save_model_path << "\n";
  }
  return kExitOk;
}

int run_nn(const std::string& private_path, const std::string& original_path,
           const std::string& format, const std::string& embeddings_path, std::size_t cap,
           const Schema& schema) {
  const CorpusFormat fmt = corpus_format_from_string(format);
  const Corpus privatized = load_corpus(private_path, fmt, schema);
  const Corpus original = load_corpus(original_path, fmt, schema);
  const EmbeddingTable table = load_embeddings(embeddings_path);
  const NnScore score = nn_indistinguishability(privatized, original, table, cap);
  char line[96];
  std::snprintf(line, sizeof(line), "nn mean k %.2f median k %.2f beyond-cap %zu\n",
                score.mean_k, score.median_k, score.beyond_cap_count);
  std::cout << line;
  return kExitOk;
}

int run_gamma(const std::string& cells_path) {
  const std::vector<EvalRecord> records = load_eval_records(cells_path);
  std::size_t mismatches = 0;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const EvalRecord& r = records[i];
    if (r.mechanism == "baseline" || r.priv_labels == 0) continue;
    const double gs = relative_gain(r.util_f1, r.util_baseline, r.priv_f1_static,
                                    r.priv_baseline, r.mg_u);
    const double ga = relative_gain(r.util_f1, r.util_baseline, r.priv_f1_adaptive,
                                    r.priv_baseline, r.mg_u);
    if (std::abs(gs - r.gamma_static) > 1e-9 || std::abs(ga - r.gamma_adaptive) > 1e-9) {
      ++mismatches;
      std::cerr << "row " << i + 2 << ": stored gamma (" << format_real(r.gamma_static)
                << ", " << format_real(r.gamma_adaptive) << ") recomputed ("
                << format_real(gs) << ", " << format_real(ga) << ")\n";
    }
  }
  if (mismatches > 0) {
    std::cerr << mismatches << " rows disagree beyond 1e-9\n";
    return kExitPartialFailure;
  }
  std::cout << "all gamma columns verified (" << records.size() << " rows)\n";
  return kExitOk;
}

int run_regress(const std::string& cells_path, const std::string& out_regression,
                const std::string& out_posthoc, bool bonferroni) {
  const std::vector<EvalRecord> all = load_eval_records(cells_path);
  std::vector<EvalRecord> usable;
  for (const auto& r : all)
    if (r.mechanism != "baseline" && r.priv_labels > 0) usable.push_back(r);
  if (usable.empty()) throw Error("no gamma-bearing records in " + cells_path);

  const DesignMatrix design = encode_design(usable);
  const RegressionSummary summary = ols_fit(design);
  std::cout << format_regression_table(summary);
  if (!out_regression.empty()) write_file(out_regression, summary.to_json().dump(2));

  std::vector<double> log_sizes, avg_gamma;
  for (const auto& r : usable) {
    log_sizes.push_back(std::log(static_cast<double>(r.size)));
    avg_gamma.push_back(0.5 * (r.gamma_static + r.gamma_adaptive));
  }
  const BinResult bins = equal_width_bins(log_sizes, 5);
  std::cout << "\nlog-size bin edges:";
  for (double e : bins.edges) std::cout << " " << format_real(e);
  std::cout << "\n";
  std::vector<std::vector<double>> groups(5);
  for (std::size_t i = 0; i < avg_gamma.size(); ++i)
    groups[static_cast<std::size_t>(bins.labels[i] - 1)].push_back(avg_gamma[i]);
  std::vector<std::vector<double>> nonempty;
  for (auto& g : groups)
    if (!g.empty()) nonempty.push_back(std::move(g));
  const KruskalWallisResult kw = kruskal_wallis(nonempty);
  std::cout << "Kruskal-Wallis H = " << format_real(kw.h) << ", p = " << format_real(kw.p)
            << " (df = " << kw.df << ")\n";
  const auto posthoc = dunn_posthoc(nonempty, bonferroni);
  std::cout << "Dunn post-hoc p-values:\n";
  for (const auto& row : posthoc) {
    for (double p : row) {
      char buf[16];
      std::snprintf(buf, sizeof(buf), " %7.4f", p);
      std::cout << buf;
    }
    std::cout << "\n";
  }
  if (!out_posthoc.empty()) save_posthoc_csv(posthoc, out_posthoc);
  return kExitOk;
}

int run_pipeline_cmd(const std::string& config_path, std::optional<std::uint64_t> seed,
                     std::optional<unsigned> jobs, const std::string& out_dir, bool dry_run,
                     bool resume) {
  ExperimentConfig cfg = load_experiment_config(config_path);
  if (seed) {
    cfg.global_seed = *seed;
    cfg.split.seed = *seed;
    cfg.hyper.seed = *seed;
  }
  if (jobs) cfg.jobs = *jobs;
  if (!out_dir.empty()) cfg.output_dir = out_dir;

  PipelineOptions options;
  options.dry_run = dry_run;
  options.resume = resume;
  options.log = &std::cerr;
  const PipelineResult result = run_pipeline(cfg, options);
  if (dry_run) {
    std::cout << "planned " << result.manifest.cells.size() << " cells (dry run)\n";
    return kExitOk;
  }
  std::cout << "records: " << result.records.size() << " -> " << cfg.output_dir
            << "/cells.csv\n";
  if (result.regression) std::cout << format_regression_table(*result.regression);
  if (result.kruskal)
    std::cout << "Kruskal-Wallis H = " << format_real(result.kruskal->h)
              << ", p = " << format_real(result.kruskal->p) << "\n";
  if (result.failed_cells > 0)
    std::cerr << result.failed_cells << " cells failed; see manifest\n";
  if (!result.stats_error.empty())
    std::cerr << "statistics stage failed: " << result.stats_error << "\n";
  return result.fully_succeeded() ? kExitOk : kExitPartialFailure;
}

int run_report(const std::string& cells_path, const std::string& regression_path) {
  const std::vector<EvalRecord> records = load_eval_records(cells_path);
  std::cout << format_results_table(records);
  if (!regression_path.empty()) {
    const RegressionSummary summary =
        RegressionSummary::from_json(nlohmann::json::parse(read_file(regression_path)));
    std::cout << "\n" << format_regression_table(summary);
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Local-DP text privatization and size-varying evaluation toolkit"};
  app.require_subcommand(1);

  // Shared flags.
  std::string in_path, out_path, format = "jsonl";
  std::string id_field = "id", text_field = "text", utility_field = "utility_label",
              privacy_field = "privacy_label";
  std::vector<std::string> score_fields;
  std::uint64_t seed = 42;

  const auto add_schema_flags = [&](CLI::App* cmd) {
    cmd->add_option("--id-field", id_field, "Id column/field name");
    cmd->add_option("--text-field", text_field, "Text column/field name");
    cmd->add_option("--utility-field", utility_field, "Utility label field name");
    cmd->add_option("--privacy-field", privacy_field,
                    "Privacy label field name (empty to disable)");
    cmd->add_option("--score-field", score_fields, "Numeric score field (repeatable)");
  };

  // privatize
  auto* privatize = app.add_subcommand("privatize", "Apply a privatization mechanism");
  std::string mechanism = "word-mldp", embeddings_path;
  double epsilon = 1.0, temperature = 1.5, clip_c = 0.1;
  double clip_lo = std::nan(""), clip_hi = std::nan("");
  std::size_t list_size = 10, max_new_tokens = 32;
  privatize->add_option("--in", in_path, "Input corpus")->required();
  privatize->add_option("--out", out_path, "Output JSONL path")->required();
  privatize->add_option("--format", format, "Input format: jsonl|csv");
  privatize->add_option("--mechanism", mechanism, "word-mldp|token-temp|doc-vector")
      ->required();
  privatize->add_option("--epsilon", epsilon, "Privacy budget (word/document level)");
  privatize->add_option("--temperature", temperature, "Sampling temperature (token level)");
  privatize->add_option("--embeddings", embeddings_path, "Embedding file");
  privatize->add_option("--list-size", list_size, "Neighbor list size (word level)");
  privatize->add_option("--clip-c", clip_c, "Clip bound (document level)");
  privatize->add_option("--clip-lo", clip_lo, "Logit clip lower bound (token level)");
  privatize->add_option("--clip-hi", clip_hi, "Logit clip upper bound (token level)");
  privatize->add_option("--max-new-tokens", max_new_tokens, "Generation cap (token level)");
  privatize->add_option("--seed", seed, "Global seed");
  add_schema_flags(privatize);

  // split
  auto* split_cmd = app.add_subcommand("split", "Create deterministic size-varying splits");
  SplitSpec split_spec;
  std::string split_out = "splits";
  split_cmd->add_option("--in", in_path, "Input corpus")->required();
  split_cmd->add_option("--format", format, "Input format: jsonl|csv");
  split_cmd->add_option("--out", split_out, "Output directory");
  split_cmd->add_option("--fractions", split_spec.fractions, "Split fractions");
  split_cmd->add_option("--train-ratio", split_spec.train_ratio, "Train share of a split");
  split_cmd->add_option("--seed", split_spec.seed, "Split seed");
  split_cmd->add_option("--reps", split_spec.repetitions, "Repetitions per fraction");
  add_schema_flags(split_cmd);

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "Train and score a classifier");
  std::string train_path, val_path, task_name = "utility", feature_mode = "bow";
  std::string save_model_path;
  std::size_t vocab_cap = 20000, reps = 3;
  TrainingHyper hyper;
  eval_cmd->add_option("--train", train_path, "Training corpus")->required();
  eval_cmd->add_option("--val", val_path, "Validation corpus")->required();
  eval_cmd->add_option("--format", format, "Input format: jsonl|csv");
  eval_cmd->add_option("--task", task_name, "utility|privacy");
  eval_cmd->add_option("--features", feature_mode, "bow|mean-embedding|raw-vector");
  eval_cmd->add_option("--embeddings", embeddings_path, "Embedding file");
  eval_cmd->add_option("--vocab-cap", vocab_cap, "Bag-of-words vocabulary cap");
  eval_cmd->add_option("--reps", reps, "Repetitions");
  eval_cmd->add_option("--epochs", hyper.epochs, "Training epochs");
  eval_cmd->add_option("--lr", hyper.learning_rate, "Learning rate");
  eval_cmd->add_option("--l2", hyper.l2, "L2 penalty");
  eval_cmd->add_option("--seed", hyper.seed, "Training seed");
  eval_cmd->add_option("--save-model", save_model_path, "Dump the fitted model as JSON");
  add_schema_flags(eval_cmd);

  // nn
  auto* nn_cmd = app.add_subcommand("nn", "Nearest-neighbor indistinguishability score");
  std::string private_path, original_path;
  std::size_t nn_cap = 10000;
  nn_cmd->add_option("--private", private_path, "Privatized corpus")->required();
  nn_cmd->add_option("--original", original_path, "Original corpus")->required();
  nn_cmd->add_option("--format", format, "Input format: jsonl|csv");
  nn_cmd->add_option("--embeddings", embeddings_path, "Embedding file")->required();
  nn_cmd->add_option("--cap", nn_cap, "Rank search cap");
  add_schema_flags(nn_cmd);

  // gamma
  auto* gamma_cmd = app.add_subcommand("gamma", "Verify stored relative-gain columns");
  std::string cells_path;
  gamma_cmd->add_option("--in", cells_path, "cells.csv path")->required();

  // regress
  auto* regress_cmd = app.add_subcommand("regress", "OLS + binning + rank tests on records");
  std::string out_regression, out_posthoc;
  bool bonferroni = false;
  regress_cmd->add_option("--in", cells_path, "cells.csv path")->required();
  regress_cmd->add_option("--out-regression", out_regression, "regression.json output");
  regress_cmd->add_option("--out-posthoc", out_posthoc, "posthoc.csv output");
  regress_cmd->add_flag("--bonferroni", bonferroni, "Bonferroni-adjust Dunn p-values");

  // pipeline
  auto* pipeline_cmd = app.add_subcommand("pipeline", "Run the full evaluation pipeline");
  std::string config_path, pipeline_out;
  bool dry_run = false, resume = false;
  std::uint64_t pipeline_seed = 0;
  unsigned jobs = 0;
  pipeline_cmd->add_option("--config", config_path, "Experiment config file")->required();
  auto* seed_opt = pipeline_cmd->add_option("--seed", pipeline_seed, "Override global seed");
  auto* jobs_opt = pipeline_cmd->add_option("--jobs", jobs, "Worker threads");
  pipeline_cmd->add_option("--out", pipeline_out, "Override output directory");
  pipeline_cmd->add_flag("--dry-run", dry_run, "Print the cell plan and exit");
  pipeline_cmd->add_flag("--resume", resume, "Resume from an existing manifest");

  // report
  auto* report_cmd = app.add_subcommand("report", "Render result tables from saved outputs");
  std::string report_regression;
  report_cmd->add_option("--cells", cells_path, "cells.csv path")->required();
  report_cmd->add_option("--regression", report_regression, "regression.json path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return e.get_exit_code() == 0 ? kExitOk : kExitUsage;
  }

  try {
    const Schema schema =
        schema_from_flags(id_field, text_field, utility_field, privacy_field, score_fields);
    if (privatize->parsed())
      return run_privatize(in_path, format, out_path, mechanism, epsilon, temperature,
                           embeddings_path, list_size, clip_c, clip_lo, clip_hi,
                           max_new_tokens, seed, schema);
    if (split_cmd->parsed()) return run_split(in_path, format, split_out, split_spec, schema);
    if (eval_cmd->parsed())
      return run_eval_cmd(train_path, val_path, format, task_name, feature_mode,
                          embeddings_path, vocab_cap, reps, hyper, save_model_path, schema);
    if (nn_cmd->parsed())
      return run_nn(private_path, original_path, format, embeddings_path, nn_cap, schema);
    if (gamma_cmd->parsed()) return run_gamma(cells_path);
    if (regress_cmd->parsed())
      return run_regress(cells_path, out_regression, out_posthoc, bonferroni);
    if (pipeline_cmd->parsed())
      return run_pipeline_cmd(
          config_path,
          seed_opt->count() ? std::make_optional(pipeline_seed) : std::nullopt,
          jobs_opt->count() ? std::make_optional(jobs) : std::nullopt, pipeline_out, dry_run,
          resume);
    if (report_cmd->parsed()) return run_report(cells_path, report_regression);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitPartialFailure;
  }
  return kExitUsage;
}
