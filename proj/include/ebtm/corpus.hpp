#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "ebtm/errors.hpp"
#include "ebtm/rng.hpp"

namespace ebtm::corpus {

/// A raw abstract keyed by its document id (e.g. a PMID).
struct RawDocument {
  std::string id;
  std::string text;
};

/// Ordered term list with its inverse index. Terms are stored in rank order
/// (corpus frequency descending, ties lexicographic ascending).
struct Vocabulary {
  std::vector<std::string> terms;
  std::unordered_map<std::string, std::int32_t> index;

  std::size_t size() const { return terms.size(); }
  bool contains(std::string_view term) const { return index.count(std::string(term)) > 0; }

  static Vocabulary from_terms(std::vector<std::string> terms_in) {
    Vocabulary v;
    v.terms = std::move(terms_in);
    for (std::size_t i = 0; i < v.terms.size(); ++i) {
      require(!v.terms[i].empty(), "Vocabulary: empty term");
      auto [it, inserted] = v.index.emplace(v.terms[i], static_cast<std::int32_t>(i));
      require(inserted, "Vocabulary: duplicate term '" + v.terms[i] + "'");
    }
    return v;
  }
};

/// Sparse per-document word counts. `items` is sorted by term index and every
/// stored count is >= 1; `total` is the document length M.
struct CountVector {
  std::string doc_id;
  std::vector<std::pair<std::int32_t, std::int32_t>> items;
  std::int64_t total = 0;

  std::int64_t length() const { return total; }
};

struct SplitFractions {
  double train = 0.9;
  double validation = 0.0;
  double test = 0.1;
};

struct CorpusSplit {
  std::vector<CountVector> train;
  std::vector<CountVector> validation;
  std::vector<CountVector> test;
  std::uint64_t split_seed = 0;
};

namespace detail {

inline char32_t utf8_next(std::string_view s, std::size_t& i) {
  const auto byte = [&](std::size_t k) { return static_cast<unsigned char>(s[k]); };
  const unsigned char b0 = byte(i);
  if (b0 < 0x80) {
    ++i;
    return b0;
  }
  int extra = 0;
  char32_t cp = 0;
  if ((b0 & 0xE0) == 0xC0) {
    extra = 1;
    cp = b0 & 0x1F;
  } else if ((b0 & 0xF0) == 0xE0) {
    extra = 2;
    cp = b0 & 0x0F;
  } else if ((b0 & 0xF8) == 0xF0) {
    extra = 3;
    cp = b0 & 0x07;
  } else {
    ++i;
    return 0xFFFD;
  }
  if (i + static_cast<std::size_t>(extra) >= s.size()) {
    ++i;
    return 0xFFFD;
  }
  for (int k = 1; k <= extra; ++k) {
    const unsigned char bk = byte(i + static_cast<std::size_t>(k));
    if ((bk & 0xC0) != 0x80) {
      ++i;
      return 0xFFFD;
    }
    cp = (cp << 6) | (bk & 0x3F);
  }
  i += static_cast<std::size_t>(extra) + 1;
  return cp;
}

inline void utf8_append(std::string& out, char32_t cp) {
  if (cp < 0x80) {
    out.push_back(static_cast<char>(cp));
  } else if (cp < 0x800) {
    out.push_back(static_cast<char>(0xC0 | (cp >> 6)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else if (cp < 0x10000) {
    out.push_back(static_cast<char>(0xE0 | (cp >> 12)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else {
    out.push_back(static_cast<char>(0xF0 | (cp >> 18)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  }
}

// Pinned separator table: digits, punctuation, symbols and whitespace act as
// token boundaries. Covers ASCII fully plus the Unicode ranges that occur in
// PubMed abstracts (Latin-1 punctuation, general punctuation, math symbols,
// CJK and fullwidth punctuation).
inline bool is_separator(char32_t cp) {
  if (cp < 0x80) return !(cp >= 'a' && cp <= 'z') && !(cp >= 'A' && cp <= 'Z');
  if (cp >= 0x00A0 && cp <= 0x00BF) return true;
  if (cp == 0x00D7 || cp == 0x00F7) return true;
  if (cp == 0x0085 || cp == 0x1680) return true;
  if (cp >= 0x2000 && cp <= 0x206F) return true;
  if (cp >= 0x2070 && cp <= 0x209F) return true;  // super/subscripts
  if (cp >= 0x20A0 && cp <= 0x20CF) return true;  // currency
  if (cp >= 0x2100 && cp <= 0x2BFF) return true;  // letterlike, arrows, math, technical
  if (cp >= 0x3000 && cp <= 0x303F) return true;
  if (cp >= 0xFE50 && cp <= 0xFE6F) return true;
  if (cp >= 0xFF01 && cp <= 0xFF20) return true;
  if (cp >= 0xFF3B && cp <= 0xFF40) return true;
  if (cp >= 0xFF5B && cp <= 0xFF65) return true;
  if (cp == 0xFFFD) return true;
  return false;
}

inline char32_t to_lower(char32_t cp) {
  if (cp >= 'A' && cp <= 'Z') return cp + 0x20;
  if (cp >= 0x00C0 && cp <= 0x00DE && cp != 0x00D7) return cp + 0x20;  // Latin-1
  if (cp >= 0x0391 && cp <= 0x03A9 && cp != 0x03A2) return cp + 0x20;  // Greek
  if (cp >= 0x0410 && cp <= 0x042F) return cp + 0x20;                  // Cyrillic
  return cp;
}

}  // namespace detail

/// Lowercases, replaces digits/punctuation/whitespace with separators and
/// splits. Empty input yields an empty list.
inline std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> tokens;
  std::string current;
  std::size_t i = 0;
  while (i < text.size()) {
    const char32_t cp = detail::utf8_next(text, i);
    if (detail::is_separator(cp)) {
      if (!current.empty()) {
        tokens.push_back(std::move(current));
        current.clear();
      }
    } else {
      detail::utf8_append(current, detail::to_lower(cp));
    }
  }
  if (!current.empty()) tokens.push_back(std::move(current));
  return tokens;
}

/// Builds the capped vocabulary: stop words removed, corpus frequency
/// >= min_count required, then the max_terms most frequent terms retained
/// (frequency descending, ties lexicographic ascending).
inline Vocabulary build_vocabulary(const std::vector<RawDocument>& docs,
                                   const std::unordered_set<std::string>& stop_words,
                                   std::int64_t min_count, std::int64_t max_terms) {
  require(min_count >= 1, "build_vocabulary: min_count must be >= 1");
  require(max_terms >= 1, "build_vocabulary: max_terms must be >= 1");
  std::unordered_map<std::string, std::int64_t> freq;
  for (const auto& doc : docs) {
    for (auto& tok : tokenize(doc.text)) {
      if (stop_words.count(tok)) continue;
      ++freq[tok];
    }
  }
  std::vector<std::pair<std::string, std::int64_t>> ranked;
  ranked.reserve(freq.size());
  for (auto& [term, count] : freq) {
    if (count >= min_count) ranked.emplace_back(term, count);
  }
  require(!ranked.empty(), "build_vocabulary: no term survives stop-word and frequency filtering");
  std::sort(ranked.begin(), ranked.end(), [](const auto& x, const auto& y) {
    if (x.second != y.second) return x.second > y.second;
    return x.first < y.first;
  });
  if (static_cast<std::int64_t>(ranked.size()) > max_terms) ranked.resize(static_cast<std::size_t>(max_terms));
  std::vector<std::string> terms;
  terms.reserve(ranked.size());
  for (auto& [term, count] : ranked) terms.push_back(term);
  return Vocabulary::from_terms(std::move(terms));
}

/// Counts in-vocabulary tokens; out-of-vocabulary tokens are dropped.
inline CountVector vectorize(const RawDocument& doc, const Vocabulary& vocab) {
  require(vocab.size() > 0, "vectorize: vocabulary is empty");
  std::map<std::int32_t, std::int32_t> counts;
  for (auto& tok : tokenize(doc.text)) {
    auto it = vocab.index.find(tok);
    if (it != vocab.index.end()) ++counts[it->second];
  }
  CountVector cv;
  cv.doc_id = doc.id;
  cv.items.assign(counts.begin(), counts.end());
  for (auto& [idx, c] : cv.items) cv.total += c;
  return cv;
}

/// Seeded shuffle followed by a floor-sized partition: train and validation
/// take floor(fraction * N) documents and the test set takes the remainder,
/// which reproduces a 9516/1058 split of 10574 documents at (0.9, 0, 0.1).
/// A zero test fraction sends the remainder to train instead.
inline CorpusSplit split_corpus(const std::vector<CountVector>& docs, SplitFractions fractions,
                                std::uint64_t seed) {
  require(fractions.train >= 0 && fractions.validation >= 0 && fractions.test >= 0,
          "split_corpus: fractions must be non-negative");
  const double sum = fractions.train + fractions.validation + fractions.test;
  require(std::abs(sum - 1.0) <= 1e-9, "split_corpus: fractions must sum to 1");
  const std::size_t n = docs.size();
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng(seed);
  for (std::size_t i = n; i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng.below(i));
    std::swap(order[i - 1], order[j]);
  }
  auto n_train = static_cast<std::size_t>(fractions.train * static_cast<double>(n));
  const auto n_val = static_cast<std::size_t>(fractions.validation * static_cast<double>(n));
  std::size_t n_test = n - n_train - n_val;
  if (fractions.test == 0.0) {
    n_train += n_test;
    n_test = 0;
  }
  require(!(fractions.train > 0 && n_train == 0), "split_corpus: train split would be empty");
  require(!(fractions.validation > 0 && n_val == 0), "split_corpus: validation split would be empty");
  require(!(fractions.test > 0 && n_test == 0), "split_corpus: test split would be empty");
  CorpusSplit split;
  split.split_seed = seed;
  split.train.reserve(n_train);
  split.validation.reserve(n_val);
  split.test.reserve(n_test);
  for (std::size_t i = 0; i < n; ++i) {
    const CountVector& doc = docs[order[i]];
    if (i < n_train) {
      split.train.push_back(doc);
    } else if (i < n_train + n_val) {
      split.validation.push_back(doc);
    } else {
      split.test.push_back(doc);
    }
  }
  return split;
}

// ---------------------------------------------------------------------------
// File formats
// ---------------------------------------------------------------------------

/// Raw corpus: one `id<TAB>text` line per document, UTF-8.
inline std::vector<RawDocument> read_raw_corpus(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open corpus file: " + path);
  std::vector<RawDocument> docs;
  std::unordered_set<std::string> seen;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos || tab == 0) {
      throw IoError("malformed corpus line " + std::to_string(line_no) + " in " + path +
                    " (expected id<TAB>text)");
    }
    RawDocument doc{line.substr(0, tab), line.substr(tab + 1)};
    require(seen.insert(doc.id).second, "duplicate document id '" + doc.id + "' in " + path);
    docs.push_back(std::move(doc));
  }
  return docs;
}

inline void write_raw_corpus(const std::string& path, const std::vector<RawDocument>& docs) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write corpus file: " + path);
  for (const auto& doc : docs) out << doc.id << '\t' << doc.text << '\n';
  if (!out) throw IoError("error while writing " + path);
}

/// Vocabulary file: one term per line in rank order.
inline void write_vocabulary(const std::string& path, const Vocabulary& vocab) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write vocabulary file: " + path);
  for (const auto& term : vocab.terms) out << term << '\n';
  if (!out) throw IoError("error while writing " + path);
}

inline Vocabulary read_vocabulary(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open vocabulary file: " + path);
  std::vector<std::string> terms;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    terms.push_back(line);
  }
  return Vocabulary::from_terms(std::move(terms));
}

/// Count-vector file: header line `#docs=<N> #vocab=<D>` followed by sparse
/// triplet lines `doc_id<TAB>term_index<TAB>count`, rows of one document
/// contiguous with ascending term index.
inline void write_count_vectors(const std::string& path, const std::vector<CountVector>& docs,
                                std::size_t vocab_size) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write count file: " + path);
  out << "#docs=" << docs.size() << " #vocab=" << vocab_size << '\n';
  for (const auto& doc : docs) {
    require(!doc.doc_id.empty(), "write_count_vectors: document without id");
    require(!doc.items.empty(),
            "write_count_vectors: empty document '" + doc.doc_id +
                "' cannot be represented in the sparse format");
    for (const auto& [idx, count] : doc.items) {
      out << doc.doc_id << '\t' << idx << '\t' << count << '\n';
    }
  }
  if (!out) throw IoError("error while writing " + path);
}

struct CountCorpus {
  std::vector<CountVector> docs;
  std::size_t vocab_size = 0;
};

inline CountCorpus read_count_vectors(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open count file: " + path);
  std::string line;
  if (!std::getline(in, line)) throw IoError("empty count file: " + path);
  if (!line.empty() && line.back() == '\r') line.pop_back();
  std::size_t n_docs = 0;
  CountCorpus corpus;
  if (std::sscanf(line.c_str(), "#docs=%zu #vocab=%zu", &n_docs, &corpus.vocab_size) != 2) {
    throw IoError("malformed count file header in " + path);
  }
  std::size_t line_no = 1;
  CountVector current;
  std::unordered_set<std::string> seen;
  auto flush = [&] {
    if (!current.doc_id.empty()) {
      require(seen.insert(current.doc_id).second,
              "count file rows for document '" + current.doc_id + "' are not contiguous: " + path);
      corpus.docs.push_back(std::move(current));
    }
    current = CountVector{};
  };
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::istringstream row(line);
    std::string doc_id;
    std::int64_t idx = -1, count = 0;
    if (!std::getline(row, doc_id, '\t') || !(row >> idx) || !(row.ignore(1), row >> count) ||
        doc_id.empty()) {
      throw IoError("malformed count row at line " + std::to_string(line_no) + " in " + path);
    }
    if (idx < 0 || idx >= static_cast<std::int64_t>(corpus.vocab_size) || count < 1) {
      throw IoError("count row out of range at line " + std::to_string(line_no) + " in " + path);
    }
    if (doc_id != current.doc_id) flush();
    if (!current.items.empty() && current.items.back().first >= idx) {
      throw IoError("count rows out of order at line " + std::to_string(line_no) + " in " + path);
    }
    current.doc_id = doc_id;
    current.items.emplace_back(static_cast<std::int32_t>(idx), static_cast<std::int32_t>(count));
    current.total += count;
  }
  flush();
  if (corpus.docs.size() != n_docs) {
    throw IoError("count file header declares " + std::to_string(n_docs) + " docs but " +
                  std::to_string(corpus.docs.size()) + " were read: " + path);
  }
  return corpus;
}

/// Stop-word file: one lowercase token per line; blank lines ignored.
inline std::unordered_set<std::string> load_stop_words(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open stop-word file: " + path);
  std::unordered_set<std::string> words;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    words.insert(line);
  }
  return words;
}

}  // namespace ebtm::corpus
