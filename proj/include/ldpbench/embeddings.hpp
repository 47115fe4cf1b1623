#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iostream>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <thread>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "ldpbench/corpus.hpp"
#include "ldpbench/error.hpp"
#include "ldpbench/rng.hpp"

namespace ldpbench {

/// Dense word-vector table. Row-major storage, immutable after load.
struct EmbeddingTable {
  std::vector<std::string> words;                       // row -> word
  std::unordered_map<std::string, std::size_t> vocab;   // word -> row
  std::vector<double> matrix;                           // V x d, row-major
  std::size_t dim = 0;
  std::size_t duplicate_rows_skipped = 0;

  std::size_t size() const { return words.size(); }

  std::span<const double> row(std::size_t r) const {
    return {matrix.data() + r * dim, dim};
  }

  const double* row_ptr(std::size_t r) const { return matrix.data() + r * dim; }
};

inline double squared_distance(std::span<const double> a, std::span<const double> b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double diff = a[i] - b[i];
    acc += diff * diff;
  }
  return acc;
}

inline double euclidean_distance(std::span<const double> a, std::span<const double> b) {
  return std::sqrt(squared_distance(a, b));
}

/// Loads "word v1 v2 ... vd" lines. The first line fixes the dimension.
/// Duplicate words keep the first occurrence (counted, not fatal).
inline EmbeddingTable load_embeddings(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open embedding file: " + path);
  EmbeddingTable table;
  std::string line;
  std::size_t line_number = 0;
  while (std::getline(in, line)) {
    ++line_number;
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string word;
    ss >> word;
    std::vector<double> values;
    double v;
    while (ss >> v) values.push_back(v);
    if (values.empty())
      throw Error("embedding line " + std::to_string(line_number) + ": no vector values");
    for (double x : values)
      if (!std::isfinite(x))
        throw Error("embedding line " + std::to_string(line_number) + ": non-finite value");
    if (table.dim == 0) table.dim = values.size();
    if (values.size() != table.dim)
      throw Error("embedding line " + std::to_string(line_number) + ": dimension " +
                  std::to_string(values.size()) + " does not match established dimension " +
                  std::to_string(table.dim));
    if (table.vocab.count(word)) {
      ++table.duplicate_rows_skipped;
      continue;
    }
    table.vocab[word] = table.words.size();
    table.words.push_back(word);
    table.matrix.insert(table.matrix.end(), values.begin(), values.end());
  }
  if (table.words.empty()) throw Error("embedding file is empty: " + path);
  if (table.duplicate_rows_skipped > 0)
    std::cerr << "warning: " << path << ": skipped " << table.duplicate_rows_skipped
              << " duplicate word row(s), first occurrence kept\n";
  return table;
}

inline void save_embeddings(const EmbeddingTable& table, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write embedding file: " + path);
  for (std::size_t r = 0; r < table.size(); ++r) {
    out << table.words[r];
    for (double v : table.row(r)) out << ' ' << format_real(v);
    out << "\n";
  }
}

struct Neighbor {
  std::uint32_t row = 0;
  double distance = 0.0;
};

/// Exact per-word nearest-neighbor lists, ascending by Euclidean distance.
/// The word itself is always first; distance ties break by row index.
struct NeighborIndex {
  std::vector<std::string> words;
  std::unordered_map<std::string, std::size_t> vocab;
  std::vector<std::vector<Neighbor>> lists;
  std::size_t list_size = 0;

  const std::vector<Neighbor>* find(const std::string& word) const {
    auto it = vocab.find(word);
    return it == vocab.end() ? nullptr : &lists[it->second];
  }
};

inline NeighborIndex build_neighbor_index(const EmbeddingTable& table, std::size_t k_list,
                                          unsigned threads = 0) {
  const std::size_t v = table.size();
  if (k_list == 0 || k_list > v)
    throw Error("build_neighbor_index: k_list=" + std::to_string(k_list) +
                " must lie in [1, " + std::to_string(v) + "]");
  NeighborIndex index;
  index.words = table.words;
  index.vocab = table.vocab;
  index.list_size = k_list;
  index.lists.resize(v);

  const auto build_range = [&](std::size_t begin, std::size_t end) {
    std::vector<Neighbor> all(v);
    for (std::size_t w = begin; w < end; ++w) {
      const auto query = table.row(w);
      for (std::size_t r = 0; r < v; ++r)
        all[r] = Neighbor{static_cast<std::uint32_t>(r),
                          squared_distance(query, table.row(r))};
      // Self first regardless of other zero-distance rows.
      const auto cmp = [w](const Neighbor& a, const Neighbor& b) {
        const bool a_self = a.row == w, b_self = b.row == w;
        if (a_self != b_self) return a_self;
        if (a.distance != b.distance) return a.distance < b.distance;
        return a.row < b.row;
      };
      std::partial_sort(all.begin(), all.begin() + static_cast<long>(k_list), all.end(), cmp);
      auto& list = index.lists[w];
      list.assign(all.begin(), all.begin() + static_cast<long>(k_list));
      for (auto& n : list) n.distance = std::sqrt(n.distance);
    }
  };

  unsigned hw = threads ? threads : std::thread::hardware_concurrency();
  if (hw <= 1 || v < 256) {
    build_range(0, v);
  } else {
    // Disjoint output ranges, so sharding cannot change results.
    std::vector<std::thread> pool;
    const std::size_t chunk = (v + hw - 1) / hw;
    for (unsigned t = 0; t < hw; ++t) {
      const std::size_t begin = std::min<std::size_t>(t * chunk, v);
      const std::size_t end = std::min<std::size_t>(begin + chunk, v);
      if (begin < end) pool.emplace_back(build_range, begin, end);
    }
    for (auto& th : pool) th.join();
  }
  return index;
}

/// Sidecar cache keyed by (embedding file content hash, k_list).
inline void save_neighbor_index(const NeighborIndex& index, std::uint64_t embedding_hash,
                                const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write neighbor index: " + path);
  nlohmann::json header;
  header["embedding_hash"] = embedding_hash;
  header["k_list"] = index.list_size;
  header["vocab_size"] = index.words.size();
  out << header.dump() << "\n";
  for (std::size_t w = 0; w < index.words.size(); ++w) {
    nlohmann::json row;
    row["w"] = index.words[w];
    nlohmann::json entries = nlohmann::json::array();
    for (const auto& n : index.lists[w]) entries.push_back({n.row, n.distance});
    row["n"] = std::move(entries);
    out << row.dump() << "\n";
  }
}

inline std::optional<NeighborIndex> load_neighbor_index(const std::string& path,
                                                        std::uint64_t embedding_hash,
                                                        std::size_t k_list) {
  std::ifstream in(path, std::ios::binary);
  if (!in) return std::nullopt;
  std::string line;
  if (!std::getline(in, line)) return std::nullopt;
  nlohmann::json header = nlohmann::json::parse(line, nullptr, false);
  if (header.is_discarded()) return std::nullopt;
  if (header.value("embedding_hash", std::uint64_t{0}) != embedding_hash ||
      header.value("k_list", std::size_t{0}) != k_list)
    return std::nullopt;

  NeighborIndex index;
  index.list_size = k_list;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    nlohmann::json row = nlohmann::json::parse(line);
    index.vocab[row.at("w").get<std::string>()] = index.words.size();
    index.words.push_back(row.at("w").get<std::string>());
    std::vector<Neighbor> list;
    for (const auto& e : row.at("n"))
      list.push_back(Neighbor{e.at(0).get<std::uint32_t>(), e.at(1).get<double>()});
    index.lists.push_back(std::move(list));
  }
  if (index.words.size() != header.value("vocab_size", std::size_t{0})) return std::nullopt;
  return index;
}

/// Mean word vector over in-vocabulary tokens.
struct DocEmbedding {
  std::vector<double> values;
  std::size_t in_vocab = 0;
  std::size_t out_of_vocab = 0;

  bool all_out_of_vocab() const { return in_vocab == 0; }
};

inline DocEmbedding document_embedding(const Document& doc, const EmbeddingTable& table) {
  DocEmbedding result;
  result.values.assign(table.dim, 0.0);
  for (const auto& token : doc.tokens) {
    auto it = table.vocab.find(token);
    if (it == table.vocab.end()) {
      ++result.out_of_vocab;
      continue;
    }
    const auto row = table.row(it->second);
    for (std::size_t i = 0; i < table.dim; ++i) result.values[i] += row[i];
    ++result.in_vocab;
  }
  if (result.in_vocab > 0)
    for (double& v : result.values) v /= static_cast<double>(result.in_vocab);
  return result;
}

/// One (id, vector) entry of a rank-query pool.
struct PoolItem {
  std::string id;
  std::vector<double> vec;
};

struct RankResult {
  std::size_t rank = 0;  // clamped to cap when beyond_cap is set
  bool beyond_cap = false;
};

/// 1-based rank of `target_id` among the pool by ascending Euclidean
/// distance to `query`. Distance ties break by id order. Ranks above `cap`
/// collapse to the sentinel value cap.
inline RankResult knn_rank_of(std::span<const double> query, const std::string& target_id,
                              std::span<const PoolItem> pool, std::size_t cap) {
  if (cap == 0) throw Error("knn_rank_of: cap must be positive");
  const PoolItem* target = nullptr;
  for (const auto& item : pool)
    if (item.id == target_id) {
      target = &item;
      break;
    }
  if (!target) throw Error("knn_rank_of: target id not found in pool: " + target_id);

  const double target_dist = squared_distance(query, target->vec);
  std::size_t ahead = 0;
  for (const auto& item : pool) {
    if (&item == target) continue;
    const double d = squared_distance(query, item.vec);
    if (d < target_dist || (d == target_dist && item.id < target_id)) ++ahead;
  }
  const std::size_t rank = ahead + 1;
  if (rank > cap) return RankResult{cap, true};
  return RankResult{rank, false};
}

}  // namespace ldpbench
