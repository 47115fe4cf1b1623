#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "ldpbench/error.hpp"
#include "ldpbench/io_util.hpp"
#include "ldpbench/rng.hpp"
#include "ldpbench/text.hpp"

namespace ldpbench {

/// One labeled text. `vector` replaces `text` for corpora produced by the
/// document-vector mechanism, which privatizes embeddings rather than words.
struct Document {
  std::string id;
  std::string text;
  std::vector<std::string> tokens;
  std::string utility_label;
  std::optional<std::string> privacy_label;
  std::map<std::string, double> aux_scores;
  std::optional<std::vector<double>> vector;

  void retokenize() { tokens = tokenize(text); }
};

struct Corpus {
  std::string name;
  std::vector<Document> documents;
  std::vector<std::string> utility_label_set;  // sorted ascending
  std::vector<std::string> privacy_label_set;  // sorted ascending, may be empty

  std::size_t size() const { return documents.size(); }

  bool has_privacy_labels() const {
    return !documents.empty() &&
           std::all_of(documents.begin(), documents.end(),
                       [](const Document& d) { return d.privacy_label.has_value(); });
  }

  double average_words() const {
    if (documents.empty()) return 0.0;
    std::size_t total = 0;
    for (const auto& d : documents) total += d.tokens.size();
    return static_cast<double>(total) / static_cast<double>(documents.size());
  }

  /// Recomputes both label sets from the documents (sorted unique values).
  void infer_label_sets() {
    std::set<std::string> util, priv;
    for (const auto& d : documents) {
      util.insert(d.utility_label);
      if (d.privacy_label) priv.insert(*d.privacy_label);
    }
    utility_label_set.assign(util.begin(), util.end());
    privacy_label_set.assign(priv.begin(), priv.end());
  }

  void validate() const {
    std::unordered_set<std::string> seen;
    seen.reserve(documents.size());
    const std::set<std::string> util(utility_label_set.begin(), utility_label_set.end());
    const std::set<std::string> priv(privacy_label_set.begin(), privacy_label_set.end());
    for (const auto& d : documents) {
      if (!seen.insert(d.id).second) throw Error("duplicate document id: " + d.id);
      if (!util.count(d.utility_label))
        throw Error("document " + d.id + " has utility label outside the declared set: " +
                    d.utility_label);
      if (d.privacy_label && !priv.count(*d.privacy_label))
        throw Error("document " + d.id + " has privacy label outside the declared set: " +
                    *d.privacy_label);
    }
  }
};

/// Field-name mapping from input files to Document fields.
struct Schema {
  std::string id_field = "id";
  std::string text_field = "text";
  std::string utility_field = "utility_label";
  std::optional<std::string> privacy_field = "privacy_label";
  std::vector<std::string> score_fields;  // numeric columns copied to aux_scores
};

enum class CorpusFormat { Jsonl, Csv };

inline CorpusFormat corpus_format_from_string(const std::string& s) {
  if (s == "jsonl") return CorpusFormat::Jsonl;
  if (s == "csv") return CorpusFormat::Csv;
  throw Error("unknown corpus format: " + s + " (expected jsonl or csv)");
}

namespace detail {

inline Document row_to_document(const nlohmann::json& row, const Schema& schema,
                                std::size_t row_number) {
  Document doc;
  if (!row.contains(schema.id_field))
    throw Error("row " + std::to_string(row_number) + ": missing mandatory field '" +
                schema.id_field + "'");
  if (!row.contains(schema.utility_field))
    throw Error("row " + std::to_string(row_number) + ": missing mandatory field '" +
                schema.utility_field + "'");
  const auto& idv = row.at(schema.id_field);
  doc.id = idv.is_string() ? idv.get<std::string>() : idv.dump();
  const auto& ulv = row.at(schema.utility_field);
  doc.utility_label = ulv.is_string() ? ulv.get<std::string>() : ulv.dump();

  const bool has_vector = row.contains("vector") && row.at("vector").is_array();
  if (row.contains(schema.text_field) && row.at(schema.text_field).is_string()) {
    doc.text = row.at(schema.text_field).get<std::string>();
  } else if (!has_vector) {
    throw Error("row " + std::to_string(row_number) + ": missing mandatory field '" +
                schema.text_field + "'");
  }
  if (has_vector) doc.vector = row.at("vector").get<std::vector<double>>();

  if (schema.privacy_field && row.contains(*schema.privacy_field) &&
      !row.at(*schema.privacy_field).is_null()) {
    const auto& pv = row.at(*schema.privacy_field);
    doc.privacy_label = pv.is_string() ? pv.get<std::string>() : pv.dump();
  }
  if (row.contains("scores") && row.at("scores").is_object()) {
    for (auto it = row.at("scores").begin(); it != row.at("scores").end(); ++it)
      doc.aux_scores[it.key()] = it.value().get<double>();
  }
  for (const auto& field : schema.score_fields) {
    if (doc.aux_scores.count(field)) continue;
    if (row.contains(field) && row.at(field).is_number())
      doc.aux_scores[field] = row.at(field).get<double>();
  }
  doc.retokenize();
  return doc;
}

}  // namespace detail

/// Loads a corpus from JSONL or CSV. Label sets are inferred as the sorted
/// set of observed values; row order is preserved.
inline Corpus load_corpus(const std::string& path, CorpusFormat format,
                          const Schema& schema = Schema{}, std::string name = "") {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open corpus file: " + path);
  Corpus corpus;
  corpus.name = name.empty() ? path : std::move(name);

  if (format == CorpusFormat::Jsonl) {
    std::string line;
    std::size_t row_number = 0;
    while (std::getline(in, line)) {
      ++row_number;
      if (line.empty()) continue;
      nlohmann::json row;
      try {
        row = nlohmann::json::parse(line);
      } catch (const nlohmann::json::exception& e) {
        throw Error("row " + std::to_string(row_number) + ": malformed JSON: " + e.what());
      }
      corpus.documents.push_back(detail::row_to_document(row, schema, row_number));
    }
  } else {
    std::string record;
    if (!csv_read_record(in, record)) throw Error("empty CSV file: " + path);
    const std::vector<std::string> header = csv_split(record);
    std::unordered_map<std::string, std::size_t> column;
    for (std::size_t i = 0; i < header.size(); ++i) column[header[i]] = i;

    std::size_t row_number = 1;
    while (csv_read_record(in, record)) {
      ++row_number;
      if (record.empty()) continue;
      const std::vector<std::string> fields = csv_split(record);
      if (fields.size() != header.size())
        throw Error("row " + std::to_string(row_number) + ": expected " +
                    std::to_string(header.size()) + " fields, got " +
                    std::to_string(fields.size()));
      nlohmann::json row = nlohmann::json::object();
      for (std::size_t i = 0; i < fields.size(); ++i) row[header[i]] = fields[i];
      // Score columns are plain numeric CSV columns.
      for (const auto& field : schema.score_fields) {
        auto it = column.find(field);
        if (it == column.end()) continue;
        const std::string& raw = fields[it->second];
        if (raw.empty()) {
          row.erase(field);
          continue;
        }
        char* end = nullptr;
        const double v = std::strtod(raw.c_str(), &end);
        if (end == raw.c_str() || *end != '\0')
          throw Error("row " + std::to_string(row_number) + ": non-numeric value '" + raw +
                      "' in score field '" + field + "'");
        row[field] = v;
      }
      if (schema.privacy_field) {
        auto it = column.find(*schema.privacy_field);
        if (it != column.end() && fields[it->second].empty()) row.erase(*schema.privacy_field);
      }
      corpus.documents.push_back(detail::row_to_document(row, schema, row_number));
    }
  }

  corpus.infer_label_sets();
  corpus.validate();
  return corpus;
}

/// Extra fields stamped onto privatized corpora when persisting.
struct PrivatizationStamp {
  std::string mechanism;
  double epsilon = 0.0;
  std::string epsilon_unit;  // word | token | document
};

inline void save_corpus_jsonl(const Corpus& corpus, const std::string& path,
                              const std::optional<PrivatizationStamp>& stamp = std::nullopt) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write corpus file: " + path);
  for (const auto& doc : corpus.documents) {
    nlohmann::json row;
    row["id"] = doc.id;
    if (doc.vector)
      row["vector"] = *doc.vector;
    else
      row["text"] = doc.text;
    row["utility_label"] = doc.utility_label;
    if (doc.privacy_label) row["privacy_label"] = *doc.privacy_label;
    if (!doc.aux_scores.empty()) row["scores"] = doc.aux_scores;
    if (stamp) {
      row["mechanism"] = stamp->mechanism;
      row["epsilon"] = stamp->epsilon;
      row["epsilon_unit"] = stamp->epsilon_unit;
    }
    out << row.dump() << "\n";
  }
}

inline void save_corpus_csv(const Corpus& corpus, const std::string& path,
                            const Schema& schema = Schema{}) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write corpus file: " + path);
  std::set<std::string> score_names(schema.score_fields.begin(), schema.score_fields.end());
  for (const auto& doc : corpus.documents)
    for (const auto& [k, v] : doc.aux_scores) score_names.insert(k);

  out << schema.id_field << "," << schema.text_field << "," << schema.utility_field;
  if (schema.privacy_field) out << "," << *schema.privacy_field;
  for (const auto& s : score_names) out << "," << s;
  out << "\n";
  for (const auto& doc : corpus.documents) {
    out << csv_escape(doc.id) << "," << csv_escape(doc.text) << ","
        << csv_escape(doc.utility_label);
    if (schema.privacy_field)
      out << "," << (doc.privacy_label ? csv_escape(*doc.privacy_label) : "");
    for (const auto& s : score_names) {
      auto it = doc.aux_scores.find(s);
      out << "," << (it == doc.aux_scores.end() ? "" : format_real(it->second));
    }
    out << "\n";
  }
}

/// Keeps only documents whose privacy label is among the k labels with the
/// highest document count. Ties are broken by label lexicographic order.
inline Corpus filter_top_k_authors(const Corpus& corpus, std::size_t k) {
  if (!corpus.has_privacy_labels())
    throw Error("filter_top_k_authors requires a privacy label on every document");
  std::map<std::string, std::size_t> counts;
  for (const auto& doc : corpus.documents) ++counts[*doc.privacy_label];
  if (k > counts.size())
    throw Error("filter_top_k_authors: k=" + std::to_string(k) + " exceeds " +
                std::to_string(counts.size()) + " distinct labels");

  std::vector<std::pair<std::string, std::size_t>> ranked(counts.begin(), counts.end());
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  std::set<std::string> keep;
  for (std::size_t i = 0; i < k; ++i) keep.insert(ranked[i].first);

  Corpus out;
  out.name = corpus.name;
  for (const auto& doc : corpus.documents)
    if (keep.count(*doc.privacy_label)) out.documents.push_back(doc);
  out.infer_label_sets();
  return out;
}

/// Reassigns utility labels from a numeric score: score > pos_thr is
/// "positive", score < neg_thr is "negative", anything else "neutral".
/// Comparisons are strict, so a score exactly at a threshold is neutral.
inline Corpus threshold_sentiment_label(const Corpus& corpus, const std::string& score_field,
                                        double pos_thr = 0.5, double neg_thr = -0.5) {
  std::vector<std::string> missing;
  for (const auto& doc : corpus.documents)
    if (!doc.aux_scores.count(score_field)) missing.push_back(doc.id);
  if (!missing.empty()) {
    std::string ids;
    for (std::size_t i = 0; i < missing.size() && i < 10; ++i) {
      if (i) ids += ", ";
      ids += missing[i];
    }
    if (missing.size() > 10) ids += ", ...";
    throw Error("threshold_sentiment_label: missing score '" + score_field +
                "' on documents: " + ids);
  }
  Corpus out = corpus;
  for (auto& doc : out.documents) {
    const double score = doc.aux_scores.at(score_field);
    if (score > pos_thr)
      doc.utility_label = "positive";
    else if (score < neg_thr)
      doc.utility_label = "negative";
    else
      doc.utility_label = "neutral";
  }
  out.infer_label_sets();
  return out;
}

struct SplitSpec {
  std::vector<double> fractions{0.1, 0.25, 0.5, 0.75, 1.0};
  double train_ratio = 0.9;
  std::uint64_t seed = 42;
  std::size_t repetitions = 3;

  void validate() const {
    if (fractions.empty()) throw Error("SplitSpec: fractions must be nonempty");
    for (std::size_t i = 0; i < fractions.size(); ++i) {
      if (!(fractions[i] > 0.0 && fractions[i] <= 1.0))
        throw Error("SplitSpec: fraction " + format_real(fractions[i]) + " outside (0, 1]");
      if (i > 0 && fractions[i] <= fractions[i - 1])
        throw Error("SplitSpec: fractions must be sorted strictly ascending");
    }
    if (!(train_ratio > 0.0 && train_ratio < 1.0))
      throw Error("SplitSpec: train_ratio must lie in (0, 1)");
    if (repetitions == 0) throw Error("SplitSpec: repetitions must be positive");
  }
};

struct SplitPair {
  double fraction = 0.0;
  Corpus train;
  Corpus val;
};

struct SplitResult {
  double fraction = 0.0;
  std::size_t fraction_index = 0;
  std::size_t repetition = 0;  // 1-based
  SplitPair pair;
};

/// Index-level plan for one fraction: which documents enter the split and
/// in what (repetition-specific) training order.
struct FractionPlan {
  double fraction = 0.0;
  std::size_t fraction_index = 0;
  std::vector<std::vector<std::size_t>> train_orders;  // one per repetition
  std::vector<std::size_t> val_indices;                // shared by repetitions
};

/// Deterministic size-varying split plan over document indices. For each
/// fraction f (index fi): sample round(f*N) documents without replacement
/// with a generator seeded from (seed, fi); partition train/val with
/// (seed, fi, 0); repetitions r = 1..R reshuffle only the train order with
/// (seed, fi, r). The val set is identical across repetitions of a fraction.
inline std::vector<FractionPlan> split_plan(std::size_t n, const SplitSpec& spec) {
  spec.validate();
  if (n == 0) throw Error("split_plan: corpus is empty");
  std::vector<FractionPlan> plans;

  for (std::size_t fi = 0; fi < spec.fractions.size(); ++fi) {
    const double fraction = spec.fractions[fi];
    const auto take = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n)));
    if (take == 0)
      throw Error("split_plan: fraction " + format_real(fraction) +
                  " selects zero documents from a corpus of " + std::to_string(n));

    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    Rng sample_rng = make_rng(mix_seed(spec.seed, fi));
    deterministic_shuffle(order, sample_rng);
    std::vector<std::size_t> partition(order.begin(), order.begin() + static_cast<long>(take));

    const auto train_size =
        static_cast<std::size_t>(std::llround(spec.train_ratio * static_cast<double>(take)));
    Rng partition_rng = make_rng(mix_seed(spec.seed, fi, 0));
    deterministic_shuffle(partition, partition_rng);

    FractionPlan plan;
    plan.fraction = fraction;
    plan.fraction_index = fi;
    std::vector<std::size_t> train_idx(partition.begin(),
                                       partition.begin() + static_cast<long>(train_size));
    plan.val_indices.assign(partition.begin() + static_cast<long>(train_size), partition.end());

    for (std::size_t r = 1; r <= spec.repetitions; ++r) {
      std::vector<std::size_t> shuffled = train_idx;
      Rng rep_rng = make_rng(mix_seed(spec.seed, fi, r));
      deterministic_shuffle(shuffled, rep_rng);
      plan.train_orders.push_back(std::move(shuffled));
    }
    plans.push_back(std::move(plan));
  }
  return plans;
}

inline Corpus subset_corpus(const Corpus& corpus, std::span<const std::size_t> indices) {
  Corpus out;
  out.name = corpus.name;
  out.utility_label_set = corpus.utility_label_set;
  out.privacy_label_set = corpus.privacy_label_set;
  out.documents.reserve(indices.size());
  for (std::size_t idx : indices) out.documents.push_back(corpus.documents[idx]);
  return out;
}

/// Materialized splits; see split_plan for the sampling scheme.
inline std::vector<SplitResult> make_splits(const Corpus& corpus, const SplitSpec& spec) {
  const std::vector<FractionPlan> plans = split_plan(corpus.documents.size(), spec);
  std::vector<SplitResult> results;
  for (const auto& plan : plans) {
    const Corpus val = subset_corpus(corpus, plan.val_indices);
    for (std::size_t r = 0; r < plan.train_orders.size(); ++r) {
      SplitResult result;
      result.fraction = plan.fraction;
      result.fraction_index = plan.fraction_index;
      result.repetition = r + 1;
      result.pair.fraction = plan.fraction;
      result.pair.train = subset_corpus(corpus, plan.train_orders[r]);
      result.pair.val = val;
      results.push_back(std::move(result));
    }
  }
  return results;
}

/// Micro-F1 (in percent) of always guessing the modal utility label. Ties
/// go to the label listed earlier in utility_label_set.
inline double majority_guess(const Corpus& val) {
  if (val.documents.empty()) throw Error("majority_guess: empty validation corpus");
  std::unordered_map<std::string, std::size_t> counts;
  for (const auto& doc : val.documents) ++counts[doc.utility_label];
  std::size_t best = 0;
  for (const auto& label : val.utility_label_set) {
    auto it = counts.find(label);
    if (it != counts.end() && it->second > best) best = it->second;
  }
  // Labels outside the declared set cannot occur in a validated corpus, but
  // fall back to a direct scan if the label set is empty.
  if (best == 0)
    for (const auto& [label, c] : counts) best = std::max(best, c);
  return 100.0 * static_cast<double>(best) / static_cast<double>(val.documents.size());
}

}  // namespace ldpbench
