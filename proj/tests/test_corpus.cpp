#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <set>
#include <string>
#include <unordered_set>
#include <vector>

#include "ebtm/corpus.hpp"
#include "ebtm/errors.hpp"
#include "support/tempfile.hpp"

namespace corpus = ebtm::corpus;
using corpus::CountVector;
using corpus::RawDocument;

namespace {

std::string fixture(const std::string& name) {
  return std::string(EBTM_FIXTURES_DIR) + "/" + name;
}

std::vector<std::string> ids(const std::vector<CountVector>& docs) {
  std::vector<std::string> out;
  for (const auto& d : docs) out.push_back(d.doc_id);
  return out;
}

}  // namespace

TEST_CASE("tokenize lowercases and splits on digits and punctuation") {
  CHECK(corpus::tokenize("fMRI-based (N=20) study") ==
        std::vector<std::string>{"fmri", "based", "n", "study"});
  CHECK(corpus::tokenize("") == std::vector<std::string>{});
  CHECK(corpus::tokenize("123 !?; 456") == std::vector<std::string>{});
  CHECK(corpus::tokenize("Amygdala AMYGDALA amygdala") ==
        std::vector<std::string>{"amygdala", "amygdala", "amygdala"});
  CHECK(corpus::tokenize("end") == std::vector<std::string>{"end"});
}

TEST_CASE("tokenize handles non-ASCII input") {
  // Latin-1 uppercase folds onto its lowercase row
  CHECK(corpus::tokenize("\xC3\x89tude \xC3\xA9tude") ==
        std::vector<std::string>{"\xC3\xA9tude", "\xC3\xA9tude"});
  // Greek capital delta lowercases
  CHECK(corpus::tokenize("\xCE\x94" "FosB") == std::vector<std::string>{"\xCE\xB4" "fosb"});
  // en dash and superscript two act as separators
  CHECK(corpus::tokenize("fear\xE2\x80\x93related") ==
        std::vector<std::string>{"fear", "related"});
  CHECK(corpus::tokenize("m\xC2\xB2 area") == std::vector<std::string>{"m", "area"});
  // a stray invalid byte becomes a separator instead of corrupting tokens
  CHECK(corpus::tokenize("ab\xFF" "cd") == std::vector<std::string>{"ab", "cd"});
}

TEST_CASE("vocabulary ranking: frequency descending, ties lexicographic") {
  const std::vector<RawDocument> docs = {
      {"d1", "bb bb aa cc"},
      {"d2", "bb aa cc dd"},
  };
  const std::unordered_set<std::string> no_stops;
  auto vocab = corpus::build_vocabulary(docs, no_stops, 2, 100);
  CHECK(vocab.terms == std::vector<std::string>{"bb", "aa", "cc"});

  auto capped = corpus::build_vocabulary(docs, no_stops, 2, 2);
  CHECK(capped.terms == std::vector<std::string>{"bb", "aa"});

  auto stopped = corpus::build_vocabulary(docs, {"bb"}, 2, 100);
  CHECK(stopped.terms == std::vector<std::string>{"aa", "cc"});

  CHECK_THROWS_AS(corpus::build_vocabulary(docs, no_stops, 10, 100), ebtm::ValidationError);
  CHECK_THROWS_AS(corpus::build_vocabulary(docs, no_stops, 0, 100), ebtm::ValidationError);
  CHECK_THROWS_AS(corpus::build_vocabulary(docs, no_stops, 1, 0), ebtm::ValidationError);
}

TEST_CASE("vectorize counts in-vocabulary tokens and drops the rest") {
  auto vocab = corpus::Vocabulary::from_terms({"bb", "aa", "cc"});
  const RawDocument doc{"d9", "aa cc aa zz"};
  const CountVector cv = corpus::vectorize(doc, vocab);
  CHECK(cv.doc_id == "d9");
  REQUIRE(cv.items.size() == 2);
  CHECK(cv.items[0] == std::make_pair(std::int32_t{1}, std::int32_t{2}));
  CHECK(cv.items[1] == std::make_pair(std::int32_t{2}, std::int32_t{1}));
  CHECK(cv.total == 3);
  CHECK(cv.length() == 3);

  const CountVector empty = corpus::vectorize({"d0", "zz qq 123"}, vocab);
  CHECK(empty.items.empty());
  CHECK(empty.total == 0);

  CHECK_THROWS_AS(corpus::vectorize(doc, corpus::Vocabulary{}), ebtm::ValidationError);
}

TEST_CASE("preprocessing pipeline reproduces the golden mini corpus") {
  const auto raw = corpus::read_raw_corpus(fixture("mini_corpus.tsv"));
  REQUIRE(raw.size() == 20);
  const auto stops = corpus::load_stop_words(std::string(EBTM_DATA_DIR) + "/english_stopwords.txt");
  CHECK(stops.count("the") == 1);
  CHECK(stops.count("and") == 1);
  CHECK(stops.count("amygdala") == 0);

  const auto vocab = corpus::build_vocabulary(raw, stops, 2, 15);
  const auto golden_vocab = corpus::read_vocabulary(fixture("mini_vocabulary.txt"));
  CHECK(vocab.terms == golden_vocab.terms);

  std::vector<CountVector> counted;
  for (const auto& doc : raw) {
    CountVector cv = corpus::vectorize(doc, vocab);
    if (cv.total > 0) counted.push_back(std::move(cv));
  }
  testutil::TempDir tmp;
  const std::string written = tmp.file("counts.tsv");
  corpus::write_count_vectors(written, counted, vocab.size());
  CHECK(testutil::slurp(written) == testutil::slurp(fixture("mini_counts.tsv")));

  const auto loaded = corpus::read_count_vectors(fixture("mini_counts.tsv"));
  CHECK(loaded.vocab_size == vocab.size());
  REQUIRE(loaded.docs.size() == counted.size());
  for (std::size_t i = 0; i < counted.size(); ++i) {
    CHECK(loaded.docs[i].doc_id == counted[i].doc_id);
    CHECK(loaded.docs[i].items == counted[i].items);
    CHECK(loaded.docs[i].total == counted[i].total);
    std::int64_t sum = 0;
    for (auto& [idx, c] : loaded.docs[i].items) {
      CHECK(c >= 1);
      sum += c;
    }
    CHECK(sum == loaded.docs[i].total);
  }
}

TEST_CASE("split sizes use floors with the remainder going to test") {
  std::vector<CountVector> docs(10574);
  for (std::size_t i = 0; i < docs.size(); ++i) {
    docs[i].doc_id = "doc" + std::to_string(i);
    docs[i].items = {{0, 1}};
    docs[i].total = 1;
  }
  const auto split = corpus::split_corpus(docs, {0.9, 0.0, 0.1}, 7);
  CHECK(split.train.size() == 9516);
  CHECK(split.validation.size() == 0);
  CHECK(split.test.size() == 1058);
  CHECK(split.split_seed == 7);

  std::vector<CountVector> ten(docs.begin(), docs.begin() + 10);
  const auto three_way = corpus::split_corpus(ten, {0.5, 0.2, 0.3}, 1);
  CHECK(three_way.train.size() == 5);
  CHECK(three_way.validation.size() == 2);
  CHECK(three_way.test.size() == 3);

  // a zero test fraction sends the remainder to train
  const auto no_test = corpus::split_corpus(ten, {0.9, 0.1, 0.0}, 1);
  CHECK(no_test.train.size() == 9);
  CHECK(no_test.validation.size() == 1);
  CHECK(no_test.test.size() == 0);
}

TEST_CASE("split is a seeded deterministic partition") {
  std::vector<CountVector> docs(101);
  for (std::size_t i = 0; i < docs.size(); ++i) {
    docs[i].doc_id = "doc" + std::to_string(i);
    docs[i].items = {{0, 1}};
    docs[i].total = 1;
  }
  const auto a = corpus::split_corpus(docs, {0.6, 0.2, 0.2}, 42);
  const auto b = corpus::split_corpus(docs, {0.6, 0.2, 0.2}, 42);
  CHECK(ids(a.train) == ids(b.train));
  CHECK(ids(a.validation) == ids(b.validation));
  CHECK(ids(a.test) == ids(b.test));

  const auto c = corpus::split_corpus(docs, {0.6, 0.2, 0.2}, 43);
  CHECK(ids(c.train) != ids(a.train));

  std::set<std::string> seen;
  for (const auto* part : {&a.train, &a.validation, &a.test}) {
    for (const auto& d : *part) REQUIRE(seen.insert(d.doc_id).second);
  }
  CHECK(seen.size() == docs.size());
}

TEST_CASE("split validates its fractions") {
  std::vector<CountVector> docs(10);
  for (std::size_t i = 0; i < docs.size(); ++i) {
    docs[i].doc_id = "doc" + std::to_string(i);
    docs[i].items = {{0, 1}};
    docs[i].total = 1;
  }
  CHECK_THROWS_AS(corpus::split_corpus(docs, {0.5, 0.2, 0.2}, 0), ebtm::ValidationError);
  CHECK_THROWS_AS(corpus::split_corpus(docs, {-0.1, 0.0, 1.1}, 0), ebtm::ValidationError);
  // a requested fraction that floors to zero documents is rejected
  CHECK_THROWS_AS(corpus::split_corpus(docs, {0.95, 0.05, 0.0}, 0), ebtm::ValidationError);
}

TEST_CASE("raw corpus files round-trip and reject malformed rows") {
  testutil::TempDir tmp;
  const std::vector<RawDocument> docs = {
      {"a1", "first abstract"},
      {"a2", "second\twith a tab inside"},
  };
  const std::string path = tmp.file("corpus.tsv");
  corpus::write_raw_corpus(path, docs);
  const auto loaded = corpus::read_raw_corpus(path);
  REQUIRE(loaded.size() == 2);
  CHECK(loaded[0].id == "a1");
  CHECK(loaded[0].text == "first abstract");
  CHECK(loaded[1].text == "second\twith a tab inside");

  testutil::spit(tmp.file("crlf.tsv"), "a1\tline one\r\n\r\na2\tline two\r\n");
  const auto crlf = corpus::read_raw_corpus(tmp.file("crlf.tsv"));
  REQUIRE(crlf.size() == 2);
  CHECK(crlf[0].text == "line one");
  CHECK(crlf[1].text == "line two");

  testutil::spit(tmp.file("notab.tsv"), "just text without a tab\n");
  CHECK_THROWS_AS(corpus::read_raw_corpus(tmp.file("notab.tsv")), ebtm::IoError);
  testutil::spit(tmp.file("dup.tsv"), "a1\tone\na1\ttwo\n");
  CHECK_THROWS_AS(corpus::read_raw_corpus(tmp.file("dup.tsv")), ebtm::ValidationError);
  CHECK_THROWS_AS(corpus::read_raw_corpus(tmp.file("missing.tsv")), ebtm::IoError);
}

TEST_CASE("vocabulary files round-trip and reject duplicates") {
  testutil::TempDir tmp;
  const auto vocab = corpus::Vocabulary::from_terms({"cortex", "memory", "amygdala"});
  const std::string path = tmp.file("vocab.txt");
  corpus::write_vocabulary(path, vocab);
  const auto loaded = corpus::read_vocabulary(path);
  CHECK(loaded.terms == vocab.terms);
  CHECK(loaded.index.at("memory") == 1);
  CHECK(loaded.contains("cortex"));
  CHECK(!loaded.contains("thalamus"));

  testutil::spit(tmp.file("dup.txt"), "cortex\nmemory\ncortex\n");
  CHECK_THROWS_AS(corpus::read_vocabulary(tmp.file("dup.txt")), ebtm::ValidationError);
  CHECK_THROWS_AS(corpus::read_vocabulary(tmp.file("missing.txt")), ebtm::IoError);
  CHECK_THROWS_AS(corpus::Vocabulary::from_terms({"a", ""}), ebtm::ValidationError);
}

TEST_CASE("count files round-trip exactly") {
  testutil::TempDir tmp;
  std::vector<CountVector> docs(3);
  docs[0] = {"x1", {{0, 2}, {3, 1}}, 3};
  docs[1] = {"x2", {{1, 5}}, 5};
  docs[2] = {"x3", {{0, 1}, {1, 1}, {4, 7}}, 9};
  const std::string path = tmp.file("counts.tsv");
  corpus::write_count_vectors(path, docs, 5);
  const auto loaded = corpus::read_count_vectors(path);
  CHECK(loaded.vocab_size == 5);
  REQUIRE(loaded.docs.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(loaded.docs[i].doc_id == docs[i].doc_id);
    CHECK(loaded.docs[i].items == docs[i].items);
    CHECK(loaded.docs[i].total == docs[i].total);
  }
}

TEST_CASE("count file reader rejects structural violations") {
  testutil::TempDir tmp;
  auto write_and_read = [&](const std::string& name, const std::string& body) {
    testutil::spit(tmp.file(name), body);
    return corpus::read_count_vectors(tmp.file(name));
  };
  CHECK_THROWS_AS(write_and_read("h1.tsv", "docs=2 vocab=3\n"), ebtm::IoError);
  CHECK_THROWS_AS(write_and_read("h2.tsv", ""), ebtm::IoError);
  // rows of one document must be contiguous
  CHECK_THROWS_AS(
      write_and_read("split.tsv", "#docs=2 #vocab=3\na\t0\t1\nb\t0\t1\na\t1\t1\n"),
      ebtm::ValidationError);
  // term indices ascend within a document
  CHECK_THROWS_AS(write_and_read("order.tsv", "#docs=1 #vocab=3\na\t2\t1\na\t1\t1\n"),
                  ebtm::IoError);
  CHECK_THROWS_AS(write_and_read("dupidx.tsv", "#docs=1 #vocab=3\na\t1\t1\na\t1\t1\n"),
                  ebtm::IoError);
  // bounds and positivity
  CHECK_THROWS_AS(write_and_read("range.tsv", "#docs=1 #vocab=3\na\t3\t1\n"), ebtm::IoError);
  CHECK_THROWS_AS(write_and_read("neg.tsv", "#docs=1 #vocab=3\na\t-1\t1\n"), ebtm::IoError);
  CHECK_THROWS_AS(write_and_read("zero.tsv", "#docs=1 #vocab=3\na\t0\t0\n"), ebtm::IoError);
  // header count must match the body
  CHECK_THROWS_AS(write_and_read("count.tsv", "#docs=2 #vocab=3\na\t0\t1\n"), ebtm::IoError);
  CHECK_THROWS_AS(write_and_read("mangled.tsv", "#docs=1 #vocab=3\na\tx\ty\n"), ebtm::IoError);
  CHECK_THROWS_AS(corpus::read_count_vectors(tmp.file("absent.tsv")), ebtm::IoError);

  // empty documents cannot be written in the sparse format
  std::vector<CountVector> bad(1);
  bad[0].doc_id = "empty";
  CHECK_THROWS_AS(corpus::write_count_vectors(tmp.file("w.tsv"), bad, 3),
                  ebtm::ValidationError);
}

TEST_CASE("stop word loader skips blanks and handles CRLF") {
  testutil::TempDir tmp;
  testutil::spit(tmp.file("stops.txt"), "the\r\n\r\nand\nof\n");
  const auto stops = corpus::load_stop_words(tmp.file("stops.txt"));
  CHECK(stops.size() == 3);
  CHECK(stops.count("the") == 1);
  CHECK(stops.count("of") == 1);
  CHECK_THROWS_AS(corpus::load_stop_words(tmp.file("nope.txt")), ebtm::IoError);
}
