#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <variant>
#include <vector>

#include "ldpbench/corpus.hpp"
#include "ldpbench/embeddings.hpp"
#include "ldpbench/error.hpp"
#include "ldpbench/io_util.hpp"
#include "ldpbench/rng.hpp"

namespace ldpbench {

// ---------------------------------------------------------------------------
// Noise primitives
// ---------------------------------------------------------------------------

/// Two-sided geometric sample: P(X=k) = ((1-q)/(1+q)) * q^|k| with q=e^-eps.
/// Sampled as the difference of two geometric variables, which has exactly
/// this law.
inline long long two_sided_geometric_sample(double epsilon, Rng& rng) {
  if (!(epsilon > 0.0) || !std::isfinite(epsilon))
    throw Error("two_sided_geometric_sample: epsilon must be positive and finite");
  const double q = std::exp(-epsilon);
  if (q <= 0.0) return 0;  // epsilon large enough that all mass sits at zero
  const double log_q = -epsilon;
  const auto geometric = [&]() -> long long {
    const double u = uniform_open(rng);
    return static_cast<long long>(std::floor(std::log(u) / log_q));
  };
  return geometric() - geometric();
}

/// Laplace(0, scale) via inverse CDF.
inline double laplace_sample(double scale, Rng& rng) {
  if (!(scale > 0.0)) throw Error("laplace_sample: scale must be positive");
  const double u = uniform_open(rng) - 0.5;  // (-0.5, 0.5)
  const double sign = u < 0.0 ? -1.0 : 1.0;
  return -scale * sign * std::log(1.0 - 2.0 * std::abs(u));
}

// ---------------------------------------------------------------------------
// Mechanism configurations
// ---------------------------------------------------------------------------

/// Word-level metric-LDP rewriting over neighbor lists.
struct WordMLDP {
  double epsilon_word = 1.0;   // per-word budget
  std::size_t list_size = 10;  // neighbor candidates per word
};

/// Per-token temperature sampling over clipped, normalized logits.
struct TokenTemperature {
  double temperature = 1.5;
  double clip_lo = 0.0;
  double clip_hi = 1.0;
  std::size_t max_new_tokens = 32;

  double epsilon_token() const { return 2.0 / temperature; }  // sensitivity 1
};

/// Document-vector clip-and-noise.
struct DocVector {
  double epsilon_doc = 1000.0;
  double clip_c = 0.1;
  std::size_t dim = 0;

  double noise_scale() const {
    return 2.0 * clip_c * static_cast<double>(dim) / epsilon_doc;
  }
};

using MechanismConfig = std::variant<WordMLDP, TokenTemperature, DocVector>;

inline double temperature_epsilon(double temperature) {
  if (!(temperature > 0.0)) throw Error("temperature_epsilon: T must be positive");
  return 2.0 / temperature;
}

inline std::string mechanism_tag(const MechanismConfig& config) {
  if (std::holds_alternative<WordMLDP>(config)) return "word-mldp";
  if (std::holds_alternative<TokenTemperature>(config)) return "token-temp";
  return "doc-vector";
}

inline double mechanism_epsilon(const MechanismConfig& config) {
  if (const auto* w = std::get_if<WordMLDP>(&config)) return w->epsilon_word;
  if (const auto* t = std::get_if<TokenTemperature>(&config)) return t->epsilon_token();
  return std::get<DocVector>(config).epsilon_doc;
}

inline std::string mechanism_epsilon_unit(const MechanismConfig& config) {
  if (std::holds_alternative<WordMLDP>(config)) return "word";
  if (std::holds_alternative<TokenTemperature>(config)) return "token";
  return "document";
}

/// Per-document generator: hash of (global seed, mechanism tag + budget,
/// document id), so privatization order and thread schedule cannot change
/// any document's noise stream.
inline Rng document_rng(std::uint64_t global_seed, const MechanismConfig& config,
                        const std::string& doc_id) {
  std::uint64_t eps_bits;
  const double eps = mechanism_epsilon(config);
  static_assert(sizeof(eps_bits) == sizeof(eps));
  std::memcpy(&eps_bits, &eps, sizeof(eps_bits));
  return make_rng(mix_seed(global_seed, hash64(mechanism_tag(config)), eps_bits,
                           hash64(doc_id)));
}

// ---------------------------------------------------------------------------
// Word mechanism
// ---------------------------------------------------------------------------

/// Rewrites each in-vocabulary token by sampling an index into its neighbor
/// list: fold two-sided geometric noise by absolute value, clamp to the list
/// end (mass accumulates at the last index). Out-of-vocabulary tokens pass
/// through unchanged.
inline Document mldp_word_rewrite(const Document& doc, const NeighborIndex& index,
                                  const WordMLDP& config, Rng& rng) {
  if (config.list_size == 0 || config.list_size > index.list_size)
    throw Error("mldp_word_rewrite: list_size=" + std::to_string(config.list_size) +
                " exceeds neighbor list length " + std::to_string(index.list_size));
  Document out = doc;
  out.tokens.clear();
  out.tokens.reserve(doc.tokens.size());
  for (const auto& token : doc.tokens) {
    const auto* list = index.find(token);
    if (!list) {
      out.tokens.push_back(token);
      continue;
    }
    const long long noise = two_sided_geometric_sample(config.epsilon_word, rng);
    const auto folded = static_cast<std::size_t>(noise < 0 ? -noise : noise);
    const std::size_t pos = std::min(folded, config.list_size - 1);
    out.tokens.push_back(index.words[(*list)[pos].row]);
  }
  out.text = join_tokens(out.tokens);
  return out;
}

// ---------------------------------------------------------------------------
// Token mechanism
// ---------------------------------------------------------------------------

struct ClipRange {
  double lo = 0.0;
  double hi = 0.0;
  bool degenerate = false;  // zero variance in the sample
};

/// Clip range from sampled logits: (mean, mean + 4*sigma) with population
/// sigma, mirroring an empirical-measurement calibration step.
inline ClipRange estimate_clip_range(std::span<const std::vector<double>> sample_logits) {
  std::size_t n = 0;
  double sum = 0.0;
  for (const auto& logits : sample_logits)
    for (double v : logits) {
      sum += v;
      ++n;
    }
  if (n < 2) throw Error("estimate_clip_range: need at least 2 logit values");
  const double mean = sum / static_cast<double>(n);
  double ss = 0.0;
  for (const auto& logits : sample_logits)
    for (double v : logits) ss += (v - mean) * (v - mean);
  const double sigma = std::sqrt(ss / static_cast<double>(n));
  ClipRange range;
  range.lo = mean;
  range.hi = mean + 4.0 * sigma;
  range.degenerate = sigma == 0.0;
  return range;
}

/// Clamp to [lo, hi], then map affinely onto [0, 1].
inline std::vector<double> clip_normalize_logits(std::span<const double> logits, double lo,
                                                 double hi) {
  if (!(hi > lo)) throw Error("clip_normalize_logits: hi must exceed lo");
  std::vector<double> out(logits.size());
  const double width = hi - lo;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    const double clamped = std::min(hi, std::max(lo, logits[i]));
    out[i] = (clamped - lo) / width;
  }
  return out;
}

/// Samples an index from softmax(norm_logits / T).
inline std::size_t temperature_sample(std::span<const double> norm_logits, double temperature,
                                      Rng& rng) {
  if (norm_logits.empty()) throw Error("temperature_sample: empty logit vector");
  if (!(temperature > 0.0)) throw Error("temperature_sample: T must be positive");
  double max_value = norm_logits[0];
  for (double v : norm_logits) max_value = std::max(max_value, v);
  std::vector<double> weights(norm_logits.size());
  double total = 0.0;
  for (std::size_t i = 0; i < norm_logits.size(); ++i) {
    weights[i] = std::exp((norm_logits[i] - max_value) / temperature);
    total += weights[i];
  }
  const double u = uniform_unit(rng) * total;
  double acc = 0.0;
  for (std::size_t i = 0; i + 1 < weights.size(); ++i) {
    acc += weights[i];
    if (u < acc) return i;
  }
  return weights.size() - 1;
}

/// Next-token logit source over a fixed output vocabulary.
class TokenGenerator {
 public:
  virtual ~TokenGenerator() = default;

  virtual std::size_t vocab_size() const = 0;
  virtual const std::string& token(std::size_t id) const = 0;
  virtual std::optional<std::size_t> eos_id() const = 0;

  /// Raw logits for the next token given the context. Must fill exactly
  /// vocab_size() finite values.
  virtual void logits(std::span<const std::string> context,
                      std::vector<double>& out) const = 0;
};

/// Bigram language model with add-one smoothing. Deterministic, trained from
/// corpus tokens; vocabulary capped by frequency with "<unk>" and "</s>"
/// always present. Logits are smoothed log-probabilities.
class NgramGenerator final : public TokenGenerator {
 public:
  static constexpr const char* kUnknown = "<unk>";
  static constexpr const char* kEos = "</s>";

  explicit NgramGenerator(const Corpus& corpus, std::size_t vocab_cap = 20000) {
    std::unordered_map<std::string, std::size_t> freq;
    for (const auto& doc : corpus.documents)
      for (const auto& t : doc.tokens) ++freq[t];

    std::vector<std::pair<std::string, std::size_t>> ranked(freq.begin(), freq.end());
    std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
      if (a.second != b.second) return a.second > b.second;
      return a.first < b.first;
    });
    const std::size_t keep = vocab_cap > 2 ? vocab_cap - 2 : 0;
    for (std::size_t i = 0; i < ranked.size() && i < keep; ++i) add_word(ranked[i].first);
    unk_ = add_word(kUnknown);
    eos_ = add_word(kEos);

    counts_.resize(words_.size());
    row_totals_.assign(words_.size(), 0);
    for (const auto& doc : corpus.documents) {
      if (doc.tokens.empty()) continue;
      std::size_t prev = id_of(doc.tokens[0]);
      for (std::size_t i = 1; i < doc.tokens.size(); ++i) {
        const std::size_t cur = id_of(doc.tokens[i]);
        bump(prev, cur);
        prev = cur;
      }
      bump(prev, eos_);
    }
  }

  std::size_t vocab_size() const override { return words_.size(); }
  const std::string& token(std::size_t id) const override { return words_[id]; }
  std::optional<std::size_t> eos_id() const override { return eos_; }

  void logits(std::span<const std::string> context, std::vector<double>& out) const override {
    const std::size_t v = words_.size();
    out.assign(v, 0.0);
    const std::size_t prev = context.empty() ? unk_ : id_of(context.back());
    const double denom = static_cast<double>(row_totals_[prev] + v);
    const double smoothed_zero = std::log(1.0 / denom);
    for (std::size_t i = 0; i < v; ++i) out[i] = smoothed_zero;
    for (const auto& [next, count] : counts_[prev])
      out[next] = std::log((static_cast<double>(count) + 1.0) / denom);
  }

 private:
  std::size_t add_word(const std::string& w) {
    auto it = vocab_.find(w);
    if (it != vocab_.end()) return it->second;
    vocab_[w] = words_.size();
    words_.push_back(w);
    return words_.size() - 1;
  }

  std::size_t id_of(const std::string& w) const {
    auto it = vocab_.find(w);
    return it == vocab_.end() ? unk_ : it->second;
  }

  void bump(std::size_t prev, std::size_t next) {
    ++counts_[prev][next];
    ++row_totals_[prev];
  }

  std::vector<std::string> words_;
  std::unordered_map<std::string, std::size_t> vocab_;
  std::vector<std::map<std::size_t, std::uint64_t>> counts_;
  std::vector<std::uint64_t> row_totals_;
  std::size_t unk_ = 0;
  std::size_t eos_ = 0;
};

/// Autoregressive private rewriting: prompt with the original tokens, then
/// repeatedly clip-normalize the generator's logits and temperature-sample
/// the next token until end-of-sequence or max_new_tokens.
inline Document dp_prompt_rewrite(const Document& doc, const TokenGenerator& generator,
                                  const TokenTemperature& config, Rng& rng) {
  if (!(config.clip_hi > config.clip_lo))
    throw Error("dp_prompt_rewrite: clip_hi must exceed clip_lo");
  Document out = doc;
  std::vector<std::string> context = doc.tokens;
  std::vector<std::string> generated;
  std::vector<double> raw;
  for (std::size_t step = 0; step < config.max_new_tokens; ++step) {
    try {
      generator.logits(context, raw);
    } catch (const std::exception& e) {
      throw Error("dp_prompt_rewrite: generator failed at position " + std::to_string(step) +
                  ": " + e.what());
    }
    if (raw.size() != generator.vocab_size())
      throw Error("dp_prompt_rewrite: generator returned " + std::to_string(raw.size()) +
                  " logits for vocabulary of " + std::to_string(generator.vocab_size()) +
                  " at position " + std::to_string(step));
    for (double v : raw)
      if (!std::isfinite(v))
        throw Error("dp_prompt_rewrite: non-finite logit at position " + std::to_string(step));
    const std::vector<double> norm =
        clip_normalize_logits(raw, config.clip_lo, config.clip_hi);
    const std::size_t pick = temperature_sample(norm, config.temperature, rng);
    if (generator.eos_id() && pick == *generator.eos_id()) break;
    generated.push_back(generator.token(pick));
    context.push_back(generator.token(pick));
  }
  out.tokens = std::move(generated);
  out.text = join_tokens(out.tokens);
  return out;
}

// ---------------------------------------------------------------------------
// Vector mechanism
// ---------------------------------------------------------------------------

/// Clamp every component to [-clip_c, clip_c], then add independent Laplace
/// noise of scale 2*clip_c*dim/epsilon. The result is not re-clamped.
inline std::vector<double> dp_vector_privatize(std::span<const double> input,
                                               const DocVector& config, Rng& rng) {
  if (input.size() != config.dim)
    throw Error("dp_vector_privatize: input dimension " + std::to_string(input.size()) +
                " does not match configured dim " + std::to_string(config.dim));
  if (!(config.epsilon_doc > 0.0)) throw Error("dp_vector_privatize: epsilon must be positive");
  if (!(config.clip_c > 0.0)) throw Error("dp_vector_privatize: clip_c must be positive");
  const double scale = config.noise_scale();
  std::vector<double> out(input.size());
  for (std::size_t i = 0; i < input.size(); ++i) {
    const double clamped = std::min(config.clip_c, std::max(-config.clip_c, input[i]));
    out[i] = clamped + laplace_sample(scale, rng);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Corpus-level application
// ---------------------------------------------------------------------------

struct MechanismDeps {
  const NeighborIndex* neighbor_index = nullptr;  // word mechanism
  const TokenGenerator* generator = nullptr;      // token mechanism
  const EmbeddingTable* embeddings = nullptr;     // vector mechanism
};

/// Applies one mechanism to every document with per-document seeds.
/// Ids, labels and corpus cardinality are preserved.
inline Corpus privatize_corpus(const Corpus& corpus, const MechanismConfig& config,
                               const MechanismDeps& deps, std::uint64_t global_seed) {
  Corpus out;
  out.name = corpus.name;
  out.utility_label_set = corpus.utility_label_set;
  out.privacy_label_set = corpus.privacy_label_set;
  out.documents.reserve(corpus.documents.size());

  for (const auto& doc : corpus.documents) {
    Rng rng = document_rng(global_seed, config, doc.id);
    if (const auto* word = std::get_if<WordMLDP>(&config)) {
      if (!deps.neighbor_index)
        throw Error("privatize_corpus: word mechanism requires a neighbor index");
      out.documents.push_back(mldp_word_rewrite(doc, *deps.neighbor_index, *word, rng));
    } else if (const auto* token = std::get_if<TokenTemperature>(&config)) {
      if (!deps.generator)
        throw Error("privatize_corpus: token mechanism requires a generator");
      out.documents.push_back(dp_prompt_rewrite(doc, *deps.generator, *token, rng));
    } else {
      const auto& vec_config = std::get<DocVector>(config);
      if (!deps.embeddings)
        throw Error("privatize_corpus: vector mechanism requires an embedding table");
      Document copy = doc;
      const DocEmbedding emb = document_embedding(doc, *deps.embeddings);
      copy.vector = dp_vector_privatize(emb.values, vec_config, rng);
      copy.text.clear();
      copy.tokens.clear();
      out.documents.push_back(std::move(copy));
    }
  }
  return out;
}

}  // namespace ldpbench
