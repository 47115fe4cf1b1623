#include <doctest.h>

#include <map>
#include <set>

#include "ldpbench/corpus.hpp"
#include "testdata.hpp"

using namespace ldpbench;

namespace {

Corpus tiny_corpus(std::vector<std::tuple<std::string, std::string, std::string>> rows) {
  Corpus c;
  for (auto& [id, text, label] : rows) {
    Document d;
    d.id = id;
    d.text = text;
    d.utility_label = label;
    d.retokenize();
    c.documents.push_back(std::move(d));
  }
  c.infer_label_sets();
  return c;
}

}  // namespace

TEST_CASE("tokenizer lowercases and splits on punctuation") {
  CHECK(tokenize("Hello, world!") == std::vector<std::string>{"hello", "world"});
  CHECK(tokenize("a  b\tc\nd") == std::vector<std::string>{"a", "b", "c", "d"});
  CHECK(tokenize("don't-stop") == std::vector<std::string>{"don", "t", "stop"});
  CHECK(tokenize("").empty());
  // en dash is a separator, accented letters are not
  CHECK(tokenize("caf\xc3\xa9 \xe2\x80\x93 bar") ==
        std::vector<std::string>{"caf\xc3\xa9", "bar"});
  // deterministic function of the text
  CHECK(tokenize("Same Text twice") == tokenize("Same Text twice"));
}

TEST_CASE("load_corpus reads JSONL and infers sorted label sets") {
  const std::string dir = testdata::fresh_dir("corpus_jsonl");
  write_file(dir + "/c.jsonl",
             "{\"id\":\"1\",\"text\":\"good stuff\",\"utility_label\":\"pos\"}\n"
             "{\"id\":\"2\",\"text\":\"bad stuff\",\"utility_label\":\"neg\"}\n"
             "{\"id\":\"3\",\"text\":\"fine\",\"utility_label\":\"pos\"}\n");
  const Corpus c = load_corpus(dir + "/c.jsonl", CorpusFormat::Jsonl);
  CHECK(c.documents.size() == 3);
  CHECK(c.utility_label_set == std::vector<std::string>{"neg", "pos"});
  CHECK(c.documents[0].tokens == std::vector<std::string>{"good", "stuff"});
  CHECK(c.privacy_label_set.empty());
}

TEST_CASE("load_corpus errors carry row numbers and field names") {
  const std::string dir = testdata::fresh_dir("corpus_errors");
  write_file(dir + "/missing.jsonl",
             "{\"id\":\"1\",\"text\":\"x\",\"utility_label\":\"a\"}\n"
             "{\"id\":\"2\",\"utility_label\":\"a\"}\n");
  CHECK_THROWS_WITH_AS(load_corpus(dir + "/missing.jsonl", CorpusFormat::Jsonl),
                       doctest::Contains("text"), Error);

  write_file(dir + "/broken.jsonl",
             "{\"id\":\"1\",\"text\":\"x\",\"utility_label\":\"a\"}\n"
             "{not json\n");
  CHECK_THROWS_WITH_AS(load_corpus(dir + "/broken.jsonl", CorpusFormat::Jsonl),
                       doctest::Contains("row 2"), Error);
}

TEST_CASE("CSV and JSONL encodings load to the identical corpus") {
  const std::string dir = testdata::fresh_dir("corpus_roundtrip");
  Rng rng = make_rng(11);
  Corpus original;
  for (int i = 0; i < 100; ++i) {
    Document d;
    d.id = "doc" + std::to_string(i);
    d.text = "word" + std::to_string(uniform_below(rng, 50)) + " and word" +
             std::to_string(uniform_below(rng, 50));
    d.utility_label = i % 2 ? "pos" : "neg";
    d.privacy_label = "u" + std::to_string(i % 7);
    d.aux_scores["sentiment"] = uniform_unit(rng) * 2.0 - 1.0;
    d.retokenize();
    original.documents.push_back(std::move(d));
  }
  original.infer_label_sets();

  Schema schema;
  schema.score_fields = {"sentiment"};
  save_corpus_jsonl(original, dir + "/c.jsonl");
  save_corpus_csv(original, dir + "/c.csv", schema);
  const Corpus from_jsonl = load_corpus(dir + "/c.jsonl", CorpusFormat::Jsonl, schema);
  const Corpus from_csv = load_corpus(dir + "/c.csv", CorpusFormat::Csv, schema);

  REQUIRE(from_jsonl.documents.size() == from_csv.documents.size());
  CHECK(from_jsonl.utility_label_set == from_csv.utility_label_set);
  CHECK(from_jsonl.privacy_label_set == from_csv.privacy_label_set);
  for (std::size_t i = 0; i < from_jsonl.documents.size(); ++i) {
    const Document& a = from_jsonl.documents[i];
    const Document& b = from_csv.documents[i];
    CHECK(a.id == b.id);
    CHECK(a.text == b.text);
    CHECK(a.tokens == b.tokens);
    CHECK(a.utility_label == b.utility_label);
    CHECK(a.privacy_label == b.privacy_label);
    CHECK(a.aux_scores.at("sentiment") ==
          doctest::Approx(b.aux_scores.at("sentiment")).epsilon(1e-12));
  }
}

TEST_CASE("filter_top_k_authors keeps the k most frequent labels") {
  Corpus c;
  const auto add = [&](const std::string& id, const std::string& author) {
    Document d;
    d.id = id;
    d.text = "x";
    d.utility_label = "u";
    d.privacy_label = author;
    d.retokenize();
    c.documents.push_back(std::move(d));
  };
  for (int i = 0; i < 5; ++i) add("a" + std::to_string(i), "a");
  for (int i = 0; i < 3; ++i) add("b" + std::to_string(i), "b");
  add("c0", "c");
  c.infer_label_sets();

  const Corpus top2 = filter_top_k_authors(c, 2);
  CHECK(top2.documents.size() == 8);
  CHECK(top2.privacy_label_set == std::vector<std::string>{"a", "b"});

  const Corpus all = filter_top_k_authors(c, 3);
  CHECK(all.documents.size() == c.documents.size());
  CHECK_THROWS_AS(filter_top_k_authors(c, 4), Error);
}

TEST_CASE("filter_top_k_authors matches a brute-force count-sort-select") {
  testdata::SynthSpec spec;
  spec.n_docs = 1000;
  spec.n_authors = 37;
  spec.seed = 3;
  Corpus corpus = testdata::make_author_corpus(spec).corpus;
  // skew author frequencies by dropping a pseudo-random tail
  Rng rng = make_rng(5);
  Corpus skewed;
  skewed.name = corpus.name;
  for (auto& d : corpus.documents)
    if (uniform_unit(rng) < 0.9) skewed.documents.push_back(d);
  skewed.infer_label_sets();

  std::map<std::string, std::size_t> counts;
  for (const auto& d : skewed.documents) ++counts[*d.privacy_label];
  std::vector<std::pair<std::string, std::size_t>> ranked(counts.begin(), counts.end());
  std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  std::set<std::string> expected_labels;
  std::size_t expected_docs = 0;
  for (std::size_t i = 0; i < 10; ++i) {
    expected_labels.insert(ranked[i].first);
    expected_docs += ranked[i].second;
  }

  const Corpus filtered = filter_top_k_authors(skewed, 10);
  CHECK(filtered.documents.size() == expected_docs);
  CHECK(std::set<std::string>(filtered.privacy_label_set.begin(),
                              filtered.privacy_label_set.end()) == expected_labels);
}

TEST_CASE("threshold_sentiment_label uses strict comparisons") {
  Corpus c = tiny_corpus({{"1", "a", "x"}, {"2", "b", "x"}, {"3", "c", "x"}, {"4", "d", "x"}});
  c.documents[0].aux_scores["s"] = 0.7;
  c.documents[1].aux_scores["s"] = -0.9;
  c.documents[2].aux_scores["s"] = 0.0;
  c.documents[3].aux_scores["s"] = 0.5;  // boundary stays neutral
  const Corpus labeled = threshold_sentiment_label(c, "s");
  CHECK(labeled.documents[0].utility_label == "positive");
  CHECK(labeled.documents[1].utility_label == "negative");
  CHECK(labeled.documents[2].utility_label == "neutral");
  CHECK(labeled.documents[3].utility_label == "neutral");
  CHECK(labeled.utility_label_set ==
        std::vector<std::string>{"negative", "neutral", "positive"});
}

TEST_CASE("threshold_sentiment_label reports missing scores and partitions") {
  Corpus c = tiny_corpus({{"id-a", "a", "x"}, {"id-b", "b", "x"}});
  c.documents[0].aux_scores["s"] = 0.2;
  CHECK_THROWS_WITH_AS(threshold_sentiment_label(c, "s"), doctest::Contains("id-b"), Error);

  // label counts match a brute-force pass over random scores
  Corpus big;
  Rng rng = make_rng(17);
  std::size_t pos = 0, neg = 0, neu = 0;
  for (int i = 0; i < 10000; ++i) {
    Document d;
    d.id = std::to_string(i);
    d.text = "t";
    d.utility_label = "x";
    const double score = uniform_unit(rng) * 2.0 - 1.0;
    d.aux_scores["s"] = score;
    d.retokenize();
    big.documents.push_back(std::move(d));
    if (score > 0.5)
      ++pos;
    else if (score < -0.5)
      ++neg;
    else
      ++neu;
  }
  big.infer_label_sets();
  const Corpus labeled = threshold_sentiment_label(big, "s");
  std::map<std::string, std::size_t> got;
  for (const auto& d : labeled.documents) ++got[d.utility_label];
  CHECK(got["positive"] == pos);
  CHECK(got["negative"] == neg);
  CHECK(got["neutral"] == neu);
  CHECK(pos + neg + neu == 10000);
}

TEST_CASE("make_splits is deterministic with the documented sizes") {
  testdata::SynthSpec spec;
  spec.n_docs = 1000;
  Corpus corpus = testdata::make_author_corpus(spec).corpus;

  SplitSpec split;
  split.fractions = {0.25};
  split.train_ratio = 0.9;
  split.seed = 42;
  split.repetitions = 3;

  const auto runs1 = make_splits(corpus, split);
  const auto runs2 = make_splits(corpus, split);
  REQUIRE(runs1.size() == 3);
  CHECK(runs1[0].pair.train.size() == 225);
  CHECK(runs1[0].pair.val.size() == 25);

  for (std::size_t r = 0; r < runs1.size(); ++r) {
    REQUIRE(runs1[r].pair.train.size() == runs2[r].pair.train.size());
    for (std::size_t i = 0; i < runs1[r].pair.train.size(); ++i)
      CHECK(runs1[r].pair.train.documents[i].id == runs2[r].pair.train.documents[i].id);
    // val identical across repetitions
    for (std::size_t i = 0; i < runs1[r].pair.val.size(); ++i)
      CHECK(runs1[r].pair.val.documents[i].id == runs1[0].pair.val.documents[i].id);
  }

  // train and val are disjoint; no document enters twice
  std::set<std::string> seen;
  for (const auto& d : runs1[0].pair.train.documents) CHECK(seen.insert(d.id).second);
  for (const auto& d : runs1[0].pair.val.documents) CHECK(seen.insert(d.id).second);
}

TEST_CASE("make_splits at fraction 1.0 covers every document exactly once") {
  testdata::SynthSpec spec;
  spec.n_docs = 57;
  Corpus corpus = testdata::make_author_corpus(spec).corpus;
  SplitSpec split;
  split.fractions = {1.0};
  split.repetitions = 1;
  const auto runs = make_splits(corpus, split);
  REQUIRE(runs.size() == 1);
  std::set<std::string> seen;
  for (const auto& d : runs[0].pair.train.documents) CHECK(seen.insert(d.id).second);
  for (const auto& d : runs[0].pair.val.documents) CHECK(seen.insert(d.id).second);
  CHECK(seen.size() == corpus.documents.size());
}

TEST_CASE("make_splits rejects fractions that round to zero") {
  Corpus c = tiny_corpus({{"1", "a", "x"}, {"2", "b", "y"}});
  SplitSpec split;
  split.fractions = {0.1};
  CHECK_THROWS_AS(make_splits(c, split), Error);
}

TEST_CASE("majority_guess scores the modal utility label") {
  Corpus c = tiny_corpus({{"1", "t", "pos"}, {"2", "t", "pos"}, {"3", "t", "neg"}});
  CHECK(majority_guess(c) == doctest::Approx(66.6667).epsilon(1e-4));

  Corpus same = tiny_corpus({{"1", "t", "pos"}, {"2", "t", "pos"}});
  CHECK(majority_guess(same) == doctest::Approx(100.0));

  // imbalanced validation set: 93.07% positive
  Corpus skewed;
  for (int i = 0; i < 10000; ++i) {
    Document d;
    d.id = std::to_string(i);
    d.text = "t";
    d.utility_label = i < 9307 ? "positive" : "negative";
    d.retokenize();
    skewed.documents.push_back(std::move(d));
  }
  skewed.infer_label_sets();
  CHECK(majority_guess(skewed) == doctest::Approx(93.07).epsilon(1e-6));
}

TEST_CASE("majority_guess is at least the uniform-chance floor") {
  Rng rng = make_rng(23);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n_labels = 2 + uniform_below(rng, 5);
    Corpus c;
    for (int i = 0; i < 50; ++i) {
      Document d;
      d.id = std::to_string(i);
      d.text = "t";
      d.utility_label = "l" + std::to_string(uniform_below(rng, n_labels));
      d.retokenize();
      c.documents.push_back(std::move(d));
    }
    c.infer_label_sets();
    CHECK(majority_guess(c) >=
          100.0 / static_cast<double>(c.utility_label_set.size()) - 1e-9);
  }
}
