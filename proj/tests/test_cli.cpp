#include <doctest.h>

#include <cstdlib>
#include <string>

#include <json.hpp>

#include "ldpbench/corpus.hpp"
#include "ldpbench/io_util.hpp"
#include "ldpbench/metrics.hpp"
#include "testdata.hpp"

#ifndef LDPBENCH_CLI_PATH
#define LDPBENCH_CLI_PATH "ldpbench"
#endif

using namespace ldpbench;

namespace {

int run_cli(const std::string& args, const std::string& capture_path = "") {
  std::string command = std::string(LDPBENCH_CLI_PATH) + " " + args;
  if (!capture_path.empty()) command += " > " + capture_path + " 2>&1";
  const int status = std::system(command.c_str());
  if (status == -1) return -1;
  return WEXITSTATUS(status);
}

}  // namespace

TEST_CASE("cli usage surface") {
  const std::string dir = testdata::fresh_dir("cli_usage");
  CHECK(run_cli("--help", dir + "/help.txt") == 0);
  const std::string help = read_file(dir + "/help.txt");
  CHECK(help.find("pipeline") != std::string::npos);
  CHECK(help.find("privatize") != std::string::npos);

  CHECK(run_cli("bogus-subcommand", dir + "/bogus.txt") == 1);
  CHECK(run_cli("pipeline", dir + "/missing.txt") == 1);  // --config is required
}

TEST_CASE("cli end-to-end flow on a small fixture") {
  const std::string dir = testdata::fresh_dir("cli_flow");

  testdata::SynthSpec spec;
  spec.name = "cli";
  spec.n_docs = 120;
  spec.n_authors = 6;
  spec.doc_len = 10;
  spec.seed = 2025;
  auto data = testdata::make_author_corpus(spec);
  save_corpus_jsonl(data.corpus, dir + "/corpus.jsonl");
  save_embeddings(data.embeddings, dir + "/vectors.txt");

  // privatize: identity budget keeps the text verbatim but stamps metadata
  CHECK(run_cli("privatize --in " + dir + "/corpus.jsonl --out " + dir +
                    "/private.jsonl --mechanism word-mldp --epsilon 1e9 --embeddings " +
                    dir + "/vectors.txt --list-size 8 --seed 42",
                dir + "/privatize.txt") == 0);
  {
    std::istringstream lines(read_file(dir + "/private.jsonl"));
    std::string line;
    REQUIRE(std::getline(lines, line));
    const auto row = nlohmann::json::parse(line);
    CHECK(row.at("mechanism") == "word-mldp");
    CHECK(row.at("epsilon_unit") == "word");
    CHECK(row.contains("text"));
  }

  // split
  CHECK(run_cli("split --in " + dir + "/corpus.jsonl --out " + dir +
                    "/splits --fractions 0.5 --reps 2 --seed 42",
                dir + "/split.txt") == 0);
  CHECK(file_exists(dir + "/splits/f0.5_r1_train.jsonl"));
  CHECK(file_exists(dir + "/splits/f0.5_r1_val.jsonl"));

  // eval with a model dump
  CHECK(run_cli("eval --train " + dir + "/splits/f0.5_r1_train.jsonl --val " + dir +
                    "/splits/f0.5_r1_val.jsonl --task utility --reps 2 --epochs 30 "
                    "--lr 0.5 --save-model " +
                    dir + "/model.json",
                dir + "/eval.txt") == 0);
  const auto model = nlohmann::json::parse(read_file(dir + "/model.json"));
  CHECK(model.contains("class_order"));
  CHECK(model.contains("weights"));
  CHECK(model.contains("bias"));
  CHECK(model.contains("training_meta"));

  // nn between the identity-privatized corpus and the original
  CHECK(run_cli("nn --private " + dir + "/private.jsonl --original " + dir +
                    "/corpus.jsonl --embeddings " + dir + "/vectors.txt",
                dir + "/nn.txt") == 0);
  CHECK(read_file(dir + "/nn.txt").find("nn mean k") != std::string::npos);

  // pipeline: dry run writes nothing, real run produces the artifact set
  std::string config_text;
  config_text += "[[dataset]]\nname = \"cli\"\npath = \"" + dir + "/corpus.jsonl\"\n";
  config_text += "[embeddings]\npath = \"" + dir + "/vectors.txt\"\n";
  config_text += "neighbor_list_size = 8\n";
  config_text += "[split]\nfractions = [0.5, 1.0]\nrepetitions = 1\nseed = 42\n";
  config_text += "[train]\nepochs = 25\nlr = 0.5\n";
  config_text += "[output]\ndir = \"" + dir + "/out\"\n";
  config_text += "[[mechanism]]\ntype = \"word-mldp\"\nepsilons = [1]\nlist_size = 8\n";
  write_file(dir + "/config.toml", config_text);

  CHECK(run_cli("pipeline --config " + dir + "/config.toml --dry-run",
                dir + "/dry.txt") == 0);
  CHECK_FALSE(std::filesystem::exists(dir + "/out"));
  CHECK(read_file(dir + "/dry.txt").find("plan") != std::string::npos);

  // the single-dataset regression is rank deficient, so the stats stage is
  // reported as a partial failure while all cells succeed
  CHECK(run_cli("pipeline --config " + dir + "/config.toml", dir + "/pipeline.txt") == 2);
  CHECK(file_exists(dir + "/out/cells.csv"));
  CHECK(file_exists(dir + "/out/manifest.json"));

  // gamma verification over the emitted records
  CHECK(run_cli("gamma --in " + dir + "/out/cells.csv", dir + "/gamma.txt") == 0);
  CHECK(read_file(dir + "/gamma.txt").find("verified") != std::string::npos);

  // report renders the table
  CHECK(run_cli("report --cells " + dir + "/out/cells.csv", dir + "/report.txt") == 0);
  const std::string report = read_file(dir + "/report.txt");
  CHECK(report.find("cli") != std::string::npos);
  CHECK(report.find("word-mldp 1") != std::string::npos);
  CHECK(report.find("gamma(s)") != std::string::npos);

  // a corrupted gamma column is rejected with the partial-failure exit code
  auto records = load_eval_records(dir + "/out/cells.csv");
  bool corrupted = false;
  for (auto& r : records)
    if (r.mechanism != "baseline" && !corrupted) {
      r.gamma_static += 0.5;
      corrupted = true;
    }
  REQUIRE(corrupted);
  save_eval_records(records, dir + "/out/corrupted.csv");
  CHECK(run_cli("gamma --in " + dir + "/out/corrupted.csv", dir + "/gamma_bad.txt") == 2);

  // doc-vector privatization replaces text with a vector payload
  CHECK(run_cli("privatize --in " + dir + "/corpus.jsonl --out " + dir +
                    "/private_vec.jsonl --mechanism doc-vector --epsilon 1000 "
                    "--clip-c 0.1 --embeddings " +
                    dir + "/vectors.txt --seed 42",
                dir + "/privatize_vec.txt") == 0);
  {
    std::istringstream lines(read_file(dir + "/private_vec.jsonl"));
    std::string line;
    REQUIRE(std::getline(lines, line));
    const auto row = nlohmann::json::parse(line);
    CHECK(row.at("mechanism") == "doc-vector");
    CHECK(row.at("epsilon_unit") == "document");
    CHECK(row.contains("vector"));
    CHECK_FALSE(row.contains("text"));
    CHECK(row.at("vector").size() == 8);  // fixture embedding dimension
  }
}

TEST_CASE("cli regress and report consume a multi-profile record set") {
  const std::string dir = testdata::fresh_dir("cli_regress");

  // hand-built records across four dataset profiles so the design has full
  // column rank; gammas follow a noisy linear pattern in log size
  struct Profile {
    const char* name;
    double avg_words;
    std::size_t util_labels;
    std::size_t priv_labels;
  };
  const std::vector<Profile> profiles{
      {"a", 12.0, 2, 20}, {"b", 30.0, 3, 50}, {"c", 20.0, 2, 50}, {"d", 8.0, 3, 20}};
  Rng rng = make_rng(404);
  std::vector<EvalRecord> records;
  for (const auto& profile : profiles)
    for (double fraction : {0.1, 0.25, 0.5, 0.75, 1.0})
      for (int mech = 0; mech < 2; ++mech)
        for (int level = 1; level <= 2; ++level) {
          EvalRecord r;
          r.dataset = profile.name;
          r.mechanism = mech == 0 ? "word-mldp" : "doc-vector";
          r.epsilon_level = level;
          r.epsilon = level;
          r.split_fraction = fraction;
          r.run_index = 1;
          r.size = static_cast<std::size_t>(fraction * 5000.0);
          r.avg_words = profile.avg_words + uniform_unit(rng);
          r.util_labels = profile.util_labels;
          r.priv_labels = profile.priv_labels;
          r.util_f1 = 90.0 + uniform_unit(rng) * 5.0;
          r.util_baseline = 97.0;
          r.priv_f1_static = 40.0 + uniform_unit(rng) * 20.0;
          r.priv_f1_adaptive = 40.0 + uniform_unit(rng) * 20.0;
          r.priv_baseline = 70.0;
          r.mg_u = 60.0;
          r.gamma_static = relative_gain(r.util_f1, r.util_baseline, r.priv_f1_static,
                                         r.priv_baseline, r.mg_u);
          r.gamma_adaptive = relative_gain(r.util_f1, r.util_baseline, r.priv_f1_adaptive,
                                           r.priv_baseline, r.mg_u);
          r.nn_mean_k = 5.0 * fraction;
          records.push_back(r);
        }
  save_eval_records(records, dir + "/cells.csv");

  CHECK(run_cli("regress --in " + dir + "/cells.csv --out-regression " + dir +
                    "/regression.json --out-posthoc " + dir + "/posthoc.csv",
                dir + "/regress.txt") == 0);
  const std::string regress_out = read_file(dir + "/regress.txt");
  CHECK(regress_out.find("log_size") != std::string::npos);
  CHECK(regress_out.find("Kruskal-Wallis") != std::string::npos);
  CHECK(file_exists(dir + "/regression.json"));
  CHECK(file_exists(dir + "/posthoc.csv"));

  CHECK(run_cli("report --cells " + dir + "/cells.csv --regression " + dir +
                    "/regression.json",
                dir + "/report.txt") == 0);
  const std::string report = read_file(dir + "/report.txt");
  CHECK(report.find("coef.") != std::string::npos);
  CHECK(report.find("P>|t|") != std::string::npos);
}
