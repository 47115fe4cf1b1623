#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "ldpbench/corpus.hpp"
#include "ldpbench/embeddings.hpp"
#include "ldpbench/error.hpp"
#include "ldpbench/rng.hpp"

namespace ldpbench {

enum class FeatureMode { BagOfWords, MeanEmbedding, RawVector };

struct FeatureSpec {
  FeatureMode mode = FeatureMode::BagOfWords;
  std::size_t vocab_cap = 20000;                 // bag-of-words only
  const EmbeddingTable* embeddings = nullptr;    // mean-embedding only
};

inline FeatureMode feature_mode_from_string(const std::string& s) {
  if (s == "bow" || s == "bag-of-words") return FeatureMode::BagOfWords;
  if (s == "mean-embedding") return FeatureMode::MeanEmbedding;
  if (s == "raw-vector") return FeatureMode::RawVector;
  throw Error("unknown feature mode: " + s);
}

/// Sparse feature row: sorted (column, value) pairs.
using FeatureRow = std::vector<std::pair<std::uint32_t, double>>;

struct FeatureMatrix {
  std::vector<FeatureRow> rows;
  std::vector<std::string> row_ids;
  std::size_t num_features = 0;
};

/// Feature extraction fit on a training corpus and applied to any corpus.
/// The bag-of-words vocabulary comes from the fit corpus only; counts are
/// weighted log(1 + count). Mean-embedding rows use a document's stored
/// vector when present (privatized document vectors live in the same space)
/// and the mean word vector otherwise.
class Featurizer {
 public:
  static Featurizer fit(const Corpus& train, const FeatureSpec& spec) {
    Featurizer f;
    f.spec_ = spec;
    switch (spec.mode) {
      case FeatureMode::BagOfWords: {
        std::unordered_map<std::string, std::size_t> counts;
        for (const auto& doc : train.documents)
          for (const auto& t : doc.tokens) ++counts[t];
        std::vector<std::pair<std::string, std::size_t>> ranked(counts.begin(), counts.end());
        std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
          if (a.second != b.second) return a.second > b.second;
          return a.first < b.first;
        });
        const std::size_t keep = std::min(spec.vocab_cap, ranked.size());
        for (std::size_t i = 0; i < keep; ++i) f.vocab_[ranked[i].first] = i;
        f.num_features_ = keep;
        break;
      }
      case FeatureMode::MeanEmbedding: {
        if (!spec.embeddings)
          throw Error("mean-embedding features require an embedding table");
        f.num_features_ = spec.embeddings->dim;
        break;
      }
      case FeatureMode::RawVector: {
        f.num_features_ = 0;
        for (const auto& doc : train.documents)
          if (doc.vector) {
            f.num_features_ = doc.vector->size();
            break;
          }
        if (f.num_features_ == 0)
          throw Error("raw-vector features require vector-bearing documents");
        break;
      }
    }
    return f;
  }

  FeatureMatrix transform(const Corpus& corpus) const {
    FeatureMatrix m;
    m.num_features = num_features_;
    m.rows.reserve(corpus.documents.size());
    for (const auto& doc : corpus.documents) {
      m.row_ids.push_back(doc.id);
      m.rows.push_back(transform_one(doc));
    }
    return m;
  }

  FeatureRow transform_one(const Document& doc) const {
    FeatureRow row;
    switch (spec_.mode) {
      case FeatureMode::BagOfWords: {
        std::unordered_map<std::uint32_t, std::size_t> counts;
        for (const auto& t : doc.tokens) {
          auto it = vocab_.find(t);
          if (it != vocab_.end()) ++counts[static_cast<std::uint32_t>(it->second)];
        }
        row.reserve(counts.size());
        for (const auto& [col, count] : counts)
          row.emplace_back(col, std::log1p(static_cast<double>(count)));
        std::sort(row.begin(), row.end());
        break;
      }
      case FeatureMode::MeanEmbedding: {
        if (doc.vector) {
          if (doc.vector->size() != num_features_)
            throw Error("document " + doc.id + " vector dimension mismatch");
          for (std::size_t i = 0; i < num_features_; ++i)
            row.emplace_back(static_cast<std::uint32_t>(i), (*doc.vector)[i]);
        } else {
          const DocEmbedding emb = document_embedding(doc, *spec_.embeddings);
          for (std::size_t i = 0; i < num_features_; ++i)
            row.emplace_back(static_cast<std::uint32_t>(i), emb.values[i]);
        }
        break;
      }
      case FeatureMode::RawVector: {
        if (!doc.vector)
          throw Error("raw-vector features: document " + doc.id + " carries no vector");
        if (doc.vector->size() != num_features_)
          throw Error("document " + doc.id + " vector dimension mismatch");
        for (std::size_t i = 0; i < num_features_; ++i)
          row.emplace_back(static_cast<std::uint32_t>(i), (*doc.vector)[i]);
        break;
      }
    }
    return row;
  }

  std::size_t num_features() const { return num_features_; }

 private:
  FeatureSpec spec_;
  std::unordered_map<std::string, std::size_t> vocab_;
  std::size_t num_features_ = 0;
};

/// One-call form: fit and transform on the same corpus.
inline FeatureMatrix featurize(const Corpus& corpus, const FeatureSpec& spec) {
  return Featurizer::fit(corpus, spec).transform(corpus);
}

struct TrainingHyper {
  std::size_t epochs = 50;
  double learning_rate = 0.1;
  double l2 = 1e-4;
  std::uint64_t seed = 42;
};

struct TrainingMeta {
  std::size_t epochs = 0;
  double learning_rate = 0.0;
  double l2 = 0.0;
  std::uint64_t seed = 0;
  double final_loss = 0.0;
};

struct LinearModel {
  std::vector<double> weights;  // num_classes x num_features, row-major
  std::vector<double> bias;     // num_classes
  std::vector<std::string> class_order;
  std::size_t num_features = 0;
  TrainingMeta meta;

  std::size_t num_classes() const { return class_order.size(); }

  std::size_t predict(const FeatureRow& row) const {
    std::size_t best = 0;
    double best_score = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < num_classes(); ++k) {
      double s = bias[k];
      const double* wk = weights.data() + k * num_features;
      for (const auto& [col, value] : row) s += wk[col] * value;
      if (s > best_score) {
        best_score = s;
        best = k;
      }
    }
    return best;
  }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["class_order"] = class_order;
    j["num_features"] = num_features;
    j["weights"] = weights;
    j["bias"] = bias;
    j["training_meta"] = {{"epochs", meta.epochs},
                          {"learning_rate", meta.learning_rate},
                          {"l2", meta.l2},
                          {"seed", meta.seed},
                          {"final_loss", meta.final_loss}};
    return j;
  }

  static LinearModel from_json(const nlohmann::json& j) {
    LinearModel m;
    m.class_order = j.at("class_order").get<std::vector<std::string>>();
    m.num_features = j.at("num_features").get<std::size_t>();
    m.weights = j.at("weights").get<std::vector<double>>();
    m.bias = j.at("bias").get<std::vector<double>>();
    const auto& meta = j.at("training_meta");
    m.meta.epochs = meta.at("epochs").get<std::size_t>();
    m.meta.learning_rate = meta.at("learning_rate").get<double>();
    m.meta.l2 = meta.at("l2").get<double>();
    m.meta.seed = meta.at("seed").get<std::uint64_t>();
    m.meta.final_loss = meta.at("final_loss").get<double>();
    return m;
  }
};

/// Mean cross-entropy of the softmax model plus 0.5*l2*||W||^2, with
/// optional analytic gradients. Shared by training and the gradient checks.
inline double softmax_objective(const FeatureMatrix& features,
                                std::span<const std::size_t> label_ids,
                                std::size_t num_classes, std::span<const double> weights,
                                std::span<const double> bias, double l2,
                                std::vector<double>* grad_weights = nullptr,
                                std::vector<double>* grad_bias = nullptr) {
  const std::size_t n = features.rows.size();
  const std::size_t f = features.num_features;
  if (grad_weights) grad_weights->assign(num_classes * f, 0.0);
  if (grad_bias) grad_bias->assign(num_classes, 0.0);

  double loss = 0.0;
  std::vector<double> scores(num_classes);
  for (std::size_t i = 0; i < n; ++i) {
    const FeatureRow& row = features.rows[i];
    for (std::size_t k = 0; k < num_classes; ++k) {
      double s = bias[k];
      const double* wk = weights.data() + k * f;
      for (const auto& [col, value] : row) s += wk[col] * value;
      scores[k] = s;
    }
    const double max_score = *std::max_element(scores.begin(), scores.end());
    double z = 0.0;
    for (std::size_t k = 0; k < num_classes; ++k) {
      scores[k] = std::exp(scores[k] - max_score);
      z += scores[k];
    }
    loss -= std::log(scores[label_ids[i]] / z);
    if (grad_weights || grad_bias) {
      for (std::size_t k = 0; k < num_classes; ++k) {
        const double residual =
            scores[k] / z - (k == label_ids[i] ? 1.0 : 0.0);
        if (grad_bias) (*grad_bias)[k] += residual;
        if (grad_weights) {
          double* gk = grad_weights->data() + k * f;
          for (const auto& [col, value] : row) gk[col] += residual * value;
        }
      }
    }
  }
  loss /= static_cast<double>(n);
  double penalty = 0.0;
  for (double w : weights) penalty += w * w;
  loss += 0.5 * l2 * penalty;
  if (grad_weights) {
    for (auto& g : *grad_weights) g /= static_cast<double>(n);
    for (std::size_t j = 0; j < grad_weights->size(); ++j)
      (*grad_weights)[j] += l2 * weights[j];
  }
  if (grad_bias)
    for (auto& g : *grad_bias) g /= static_cast<double>(n);
  return loss;
}

/// Multinomial logistic regression by full-batch gradient descent with L2
/// penalty. Deterministic: zero initialization and a fixed update schedule,
/// so the seed only tags the run.
inline LinearModel train(const FeatureMatrix& features, std::span<const std::string> labels,
                         std::span<const std::string> class_order,
                         const TrainingHyper& hyper = TrainingHyper{}) {
  if (features.rows.size() != labels.size())
    throw Error("train: feature/label count mismatch");
  if (labels.empty()) throw Error("train: empty training set");

  std::unordered_map<std::string, std::size_t> class_id;
  for (std::size_t k = 0; k < class_order.size(); ++k) class_id[class_order[k]] = k;
  std::vector<std::size_t> label_ids(labels.size());
  std::vector<bool> present(class_order.size(), false);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    auto it = class_id.find(labels[i]);
    if (it == class_id.end()) throw Error("train: label outside class order: " + labels[i]);
    label_ids[i] = it->second;
    present[it->second] = true;
  }
  if (static_cast<std::size_t>(std::count(present.begin(), present.end(), true)) < 2)
    throw Error("train: need at least 2 classes present in the training labels");

  const std::size_t k = class_order.size();
  const std::size_t f = features.num_features;
  LinearModel model;
  model.class_order.assign(class_order.begin(), class_order.end());
  model.num_features = f;
  model.weights.assign(k * f, 0.0);
  model.bias.assign(k, 0.0);

  std::vector<double> grad_w, grad_b;
  double loss = 0.0;
  for (std::size_t epoch = 0; epoch < hyper.epochs; ++epoch) {
    loss = softmax_objective(features, label_ids, k, model.weights, model.bias, hyper.l2,
                             &grad_w, &grad_b);
    for (std::size_t j = 0; j < model.weights.size(); ++j)
      model.weights[j] -= hyper.learning_rate * grad_w[j];
    for (std::size_t j = 0; j < model.bias.size(); ++j)
      model.bias[j] -= hyper.learning_rate * grad_b[j];
  }
  loss = softmax_objective(features, label_ids, k, model.weights, model.bias, hyper.l2);
  model.meta = TrainingMeta{hyper.epochs, hyper.learning_rate, hyper.l2, hyper.seed, loss};
  return model;
}

/// Micro-averaged F1 in percent. For single-label multiclass this equals
/// accuracy; computed from aggregate TP/FP/FN counts regardless.
inline double micro_f1(std::span<const std::string> predictions,
                       std::span<const std::string> gold) {
  if (predictions.size() != gold.size())
    throw Error("micro_f1: prediction/gold length mismatch");
  if (predictions.empty()) throw Error("micro_f1: empty inputs");
  std::size_t tp = 0;
  for (std::size_t i = 0; i < predictions.size(); ++i)
    if (predictions[i] == gold[i]) ++tp;
  const std::size_t fp = predictions.size() - tp;
  const std::size_t fn = gold.size() - tp;
  const double denom = static_cast<double>(2 * tp + fp + fn);
  if (denom == 0.0) return 0.0;
  return 100.0 * 2.0 * static_cast<double>(tp) / denom;
}

enum class Task { Utility, Privacy };

inline const std::string& task_label(const Document& doc, Task task) {
  if (task == Task::Utility) return doc.utility_label;
  if (!doc.privacy_label) throw Error("document " + doc.id + " has no privacy label");
  return *doc.privacy_label;
}

inline std::vector<std::string> task_labels(const Corpus& corpus, Task task) {
  std::vector<std::string> labels;
  labels.reserve(corpus.documents.size());
  for (const auto& doc : corpus.documents) labels.push_back(task_label(doc, task));
  return labels;
}

inline const std::vector<std::string>& task_label_set(const Corpus& corpus, Task task) {
  return task == Task::Utility ? corpus.utility_label_set : corpus.privacy_label_set;
}

struct EvalScore {
  double mean_f1 = 0.0;
  double std_f1 = 0.0;  // population std over repetitions
};

namespace detail {

inline EvalScore summarize(const std::vector<double>& scores) {
  double mean = 0.0;
  for (double s : scores) mean += s;
  mean /= static_cast<double>(scores.size());
  double var = 0.0;
  for (double s : scores) var += (s - mean) * (s - mean);
  var /= static_cast<double>(scores.size());
  return EvalScore{mean, std::sqrt(var)};
}

inline Corpus reshuffled(const Corpus& corpus, std::uint64_t seed) {
  Corpus out = corpus;
  Rng rng = make_rng(seed);
  deterministic_shuffle(out.documents, rng);
  return out;
}

}  // namespace detail

/// One train-and-score pass: fit features and model on the training corpus,
/// score micro-F1 on the validation corpus.
inline double evaluate_model(const Corpus& train_corpus, const Corpus& val_corpus, Task task,
                             const FeatureSpec& spec, const TrainingHyper& hyper) {
  const auto& classes = task_label_set(train_corpus, task);
  if (classes.empty()) throw Error("evaluation: training corpus lacks labels for the task");
  const Featurizer featurizer = Featurizer::fit(train_corpus, spec);
  const FeatureMatrix train_features = featurizer.transform(train_corpus);
  const std::vector<std::string> train_labels = task_labels(train_corpus, task);
  const LinearModel model = train(train_features, train_labels, classes, hyper);

  const FeatureMatrix val_features = featurizer.transform(val_corpus);
  const std::vector<std::string> gold = task_labels(val_corpus, task);
  std::vector<std::string> predicted;
  predicted.reserve(val_features.rows.size());
  for (const auto& row : val_features.rows)
    predicted.push_back(model.class_order[model.predict(row)]);
  return micro_f1(predicted, gold);
}

/// Trains `reps` models on reshuffled train orders and scores each on the
/// validation corpus. Full-batch training is order-invariant, so the std is
/// 0 unless an order-sensitive feature pipeline is plugged in; that is
/// expected, not a bug.
inline EvalScore run_eval(const Corpus& train_corpus, const Corpus& val_corpus, Task task,
                          const FeatureSpec& spec, std::size_t reps,
                          const TrainingHyper& hyper = TrainingHyper{}) {
  if (reps == 0) throw Error("run_eval: reps must be positive");
  std::vector<double> scores;
  for (std::size_t r = 1; r <= reps; ++r) {
    TrainingHyper h = hyper;
    h.seed = mix_seed(hyper.seed, r);
    scores.push_back(evaluate_model(detail::reshuffled(train_corpus, h.seed),
                                             val_corpus, task, spec, h));
  }
  return detail::summarize(scores);
}

enum class AdversaryMode { Static, Adaptive };

/// Privacy attack evaluation. The static adversary trains on original texts,
/// the adaptive adversary on privatized ones; both attack the privatized
/// validation split. Each mode sees only its own training corpus.
inline EvalScore adversary_eval(const Corpus& original_train, const Corpus& private_train,
                                const Corpus& private_val, AdversaryMode mode,
                                const FeatureSpec& spec, std::size_t reps,
                                const TrainingHyper& hyper = TrainingHyper{}) {
  const Corpus& attack_train =
      mode == AdversaryMode::Static ? original_train : private_train;
  if (attack_train.privacy_label_set != private_val.privacy_label_set)
    throw Error("adversary_eval: train/val corpora disagree on privacy label sets");
  if (reps == 0) throw Error("adversary_eval: reps must be positive");
  std::vector<double> scores;
  for (std::size_t r = 1; r <= reps; ++r) {
    TrainingHyper h = hyper;
    h.seed = mix_seed(hyper.seed, mode == AdversaryMode::Static ? 101 : 202, r);
    scores.push_back(evaluate_model(detail::reshuffled(attack_train, h.seed),
                                             private_val, Task::Privacy, spec, h));
  }
  return detail::summarize(scores);
}

}  // namespace ldpbench
