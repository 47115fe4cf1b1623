#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "ldpbench/classifiers.hpp"
#include "ldpbench/corpus.hpp"
#include "ldpbench/embeddings.hpp"
#include "ldpbench/error.hpp"
#include "ldpbench/io_util.hpp"

namespace ldpbench {

/// Relative gain: utility ratio minus privacy ratio against the non-private
/// baselines. With a majority-guess score the utility side becomes the gain
/// over always guessing the modal label:
///   (u_r - mg_u) / (u_o - mg_u) - p_r / p_o.
inline double relative_gain(double u_r, double u_o, double p_r, double p_o,
                            std::optional<double> mg_u = std::nullopt) {
  if (p_o == 0.0) throw Error("relative_gain: privacy baseline p_o is zero");
  if (mg_u) {
    if (u_o == *mg_u)
      throw Error("relative_gain: utility baseline equals majority guess (u_o - mg_u is zero)");
    return (u_r - *mg_u) / (u_o - *mg_u) - p_r / p_o;
  }
  if (u_o == 0.0) throw Error("relative_gain: utility baseline u_o is zero");
  return u_r / u_o - p_r / p_o;
}

/// One experiment cell.
struct EvalRecord {
  std::string dataset;
  std::string mechanism;       // word-mldp | token-temp | doc-vector
  int epsilon_level = 0;       // 1..3, ascending privacy budget
  double epsilon = 0.0;        // raw per-unit budget
  double split_fraction = 0.0;
  int run_index = 0;
  std::size_t size = 0;        // document count of the split
  double avg_words = 0.0;
  std::size_t util_labels = 0;
  std::size_t priv_labels = 0;
  double util_f1 = 0.0;
  double priv_f1_static = 0.0;
  double priv_f1_adaptive = 0.0;
  double util_baseline = 0.0;
  double priv_baseline = 0.0;
  double mg_u = 0.0;
  double gamma_static = 0.0;
  double gamma_adaptive = 0.0;
  double nn_mean_k = 0.0;
};

inline nlohmann::json eval_record_to_json(const EvalRecord& r) {
  return nlohmann::json{{"dataset", r.dataset},
                        {"mechanism", r.mechanism},
                        {"epsilon_level", r.epsilon_level},
                        {"epsilon", r.epsilon},
                        {"split_fraction", r.split_fraction},
                        {"run_index", r.run_index},
                        {"size", r.size},
                        {"avg_words", r.avg_words},
                        {"util_labels", r.util_labels},
                        {"priv_labels", r.priv_labels},
                        {"util_f1", r.util_f1},
                        {"priv_f1_static", r.priv_f1_static},
                        {"priv_f1_adaptive", r.priv_f1_adaptive},
                        {"util_baseline", r.util_baseline},
                        {"priv_baseline", r.priv_baseline},
                        {"mg_u", r.mg_u},
                        {"gamma_static", r.gamma_static},
                        {"gamma_adaptive", r.gamma_adaptive},
                        {"nn_mean_k", r.nn_mean_k}};
}

inline EvalRecord eval_record_from_json(const nlohmann::json& j) {
  EvalRecord r;
  r.dataset = j.at("dataset").get<std::string>();
  r.mechanism = j.at("mechanism").get<std::string>();
  r.epsilon_level = j.at("epsilon_level").get<int>();
  r.epsilon = j.at("epsilon").get<double>();
  r.split_fraction = j.at("split_fraction").get<double>();
  r.run_index = j.at("run_index").get<int>();
  r.size = j.at("size").get<std::size_t>();
  r.avg_words = j.at("avg_words").get<double>();
  r.util_labels = j.at("util_labels").get<std::size_t>();
  r.priv_labels = j.at("priv_labels").get<std::size_t>();
  r.util_f1 = j.at("util_f1").get<double>();
  r.priv_f1_static = j.at("priv_f1_static").get<double>();
  r.priv_f1_adaptive = j.at("priv_f1_adaptive").get<double>();
  r.util_baseline = j.at("util_baseline").get<double>();
  r.priv_baseline = j.at("priv_baseline").get<double>();
  r.mg_u = j.at("mg_u").get<double>();
  r.gamma_static = j.at("gamma_static").get<double>();
  r.gamma_adaptive = j.at("gamma_adaptive").get<double>();
  r.nn_mean_k = j.at("nn_mean_k").get<double>();
  return r;
}

inline constexpr const char* kEvalRecordHeader =
    "dataset,mechanism,epsilon_level,epsilon,split_fraction,run_index,size,avg_words,"
    "util_labels,priv_labels,util_f1,priv_f1_static,priv_f1_adaptive,util_baseline,"
    "priv_baseline,mg_u,gamma_static,gamma_adaptive,nn_mean_k";

inline std::string eval_record_csv_row(const EvalRecord& r) {
  std::string row;
  row += csv_escape(r.dataset);
  row += ',';
  row += csv_escape(r.mechanism);
  row += ',';
  row += std::to_string(r.epsilon_level);
  row += ',';
  row += format_real(r.epsilon);
  row += ',';
  row += format_real(r.split_fraction);
  row += ',';
  row += std::to_string(r.run_index);
  row += ',';
  row += std::to_string(r.size);
  row += ',';
  row += format_real(r.avg_words);
  row += ',';
  row += std::to_string(r.util_labels);
  row += ',';
  row += std::to_string(r.priv_labels);
  row += ',';
  row += format_real(r.util_f1);
  row += ',';
  row += format_real(r.priv_f1_static);
  row += ',';
  row += format_real(r.priv_f1_adaptive);
  row += ',';
  row += format_real(r.util_baseline);
  row += ',';
  row += format_real(r.priv_baseline);
  row += ',';
  row += format_real(r.mg_u);
  row += ',';
  row += format_real(r.gamma_static);
  row += ',';
  row += format_real(r.gamma_adaptive);
  row += ',';
  row += format_real(r.nn_mean_k);
  return row;
}

inline void save_eval_records(std::span<const EvalRecord> records, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write records file: " + path);
  out << kEvalRecordHeader << "\n";
  for (const auto& r : records) out << eval_record_csv_row(r) << "\n";
}

inline std::vector<EvalRecord> load_eval_records(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open records file: " + path);
  std::string record;
  if (!csv_read_record(in, record)) throw Error("empty records file: " + path);
  if (record != kEvalRecordHeader)
    throw Error("records file " + path + " has an unexpected header");
  std::vector<EvalRecord> records;
  std::size_t row_number = 1;
  while (csv_read_record(in, record)) {
    ++row_number;
    if (record.empty()) continue;
    const std::vector<std::string> f = csv_split(record);
    if (f.size() != 19)
      throw Error("records row " + std::to_string(row_number) + ": expected 19 fields, got " +
                  std::to_string(f.size()));
    EvalRecord r;
    std::size_t i = 0;
    r.dataset = f[i++];
    r.mechanism = f[i++];
    r.epsilon_level = std::stoi(f[i++]);
    r.epsilon = std::strtod(f[i++].c_str(), nullptr);
    r.split_fraction = std::strtod(f[i++].c_str(), nullptr);
    r.run_index = std::stoi(f[i++]);
    r.size = static_cast<std::size_t>(std::stoull(f[i++]));
    r.avg_words = std::strtod(f[i++].c_str(), nullptr);
    r.util_labels = static_cast<std::size_t>(std::stoull(f[i++]));
    r.priv_labels = static_cast<std::size_t>(std::stoull(f[i++]));
    r.util_f1 = std::strtod(f[i++].c_str(), nullptr);
    r.priv_f1_static = std::strtod(f[i++].c_str(), nullptr);
    r.priv_f1_adaptive = std::strtod(f[i++].c_str(), nullptr);
    r.util_baseline = std::strtod(f[i++].c_str(), nullptr);
    r.priv_baseline = std::strtod(f[i++].c_str(), nullptr);
    r.mg_u = std::strtod(f[i++].c_str(), nullptr);
    r.gamma_static = std::strtod(f[i++].c_str(), nullptr);
    r.gamma_adaptive = std::strtod(f[i++].c_str(), nullptr);
    r.nn_mean_k = std::strtod(f[i++].c_str(), nullptr);
    records.push_back(std::move(r));
  }
  return records;
}

struct NnScore {
  double mean_k = 0.0;
  double median_k = 0.0;  // diagnostic
  std::size_t beyond_cap_count = 0;
};

/// Nearest-neighbor indistinguishability. For each document the pool holds
/// the embeddings of every original document; the query is the privatized
/// counterpart; the recorded value is the rank at which the original appears,
/// with ranks past `cap` counted as cap. Higher means a privatized text
/// hides better in the crowd.
inline NnScore nn_indistinguishability(const Corpus& privatized, const Corpus& original,
                                       const EmbeddingTable& table, std::size_t cap = 10000) {
  if (privatized.documents.size() != original.documents.size()) {
    throw Error("nn_indistinguishability: corpora sizes differ (" +
                std::to_string(privatized.documents.size()) + " vs " +
                std::to_string(original.documents.size()) + ")");
  }
  std::unordered_map<std::string, const Document*> private_by_id;
  for (const auto& doc : privatized.documents) private_by_id[doc.id] = &doc;
  std::vector<std::string> unmatched;
  for (const auto& doc : original.documents)
    if (!private_by_id.count(doc.id)) unmatched.push_back(doc.id);
  if (!unmatched.empty()) {
    std::string ids;
    for (std::size_t i = 0; i < unmatched.size() && i < 10; ++i) {
      if (i) ids += ", ";
      ids += unmatched[i];
    }
    if (unmatched.size() > 10) ids += ", ...";
    throw Error("nn_indistinguishability: ids missing from the private corpus: " + ids);
  }

  const auto embed = [&](const Document& doc) -> std::vector<double> {
    if (doc.vector) return *doc.vector;
    return document_embedding(doc, table).values;
  };

  std::vector<PoolItem> pool;
  pool.reserve(original.documents.size());
  for (const auto& doc : original.documents) pool.push_back(PoolItem{doc.id, embed(doc)});

  NnScore score;
  std::vector<double> ranks;
  ranks.reserve(original.documents.size());
  for (const auto& doc : original.documents) {
    const std::vector<double> query = embed(*private_by_id.at(doc.id));
    const RankResult r = knn_rank_of(query, doc.id, pool, cap);
    if (r.beyond_cap) ++score.beyond_cap_count;
    ranks.push_back(static_cast<double>(r.rank));
  }
  double sum = 0.0;
  for (double r : ranks) sum += r;
  score.mean_k = sum / static_cast<double>(ranks.size());
  std::vector<double> sorted = ranks;
  std::sort(sorted.begin(), sorted.end());
  const std::size_t n = sorted.size();
  score.median_k = n % 2 == 1 ? sorted[n / 2] : 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);
  return score;
}

}  // namespace ldpbench
