#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "ebtm/corpus.hpp"
#include "ebtm/dbm.hpp"
#include "ebtm/errors.hpp"
#include "ebtm/math.hpp"
#include "ebtm/parallel.hpp"
#include "ebtm/rng.hpp"

namespace ebtm::embed {

using corpus::CountVector;

struct Embedding {
  std::string key;  // term or document id
  Vector vector;    // top-layer mean-field posterior, length hidden2
};

/// Top-layer posterior mean for a one-hot document (M = 1) holding the term.
/// Deterministic: mean-field, no sampling.
inline Vector word_embedding(Eigen::Index term_index, const dbm::DbmParams& p,
                             const dbm::MeanFieldConfig& cfg = {}) {
  p.validate();
  require(term_index >= 0 && term_index < p.vocab(), "word_embedding: term index out of range");
  CountVector doc;
  doc.items = {{static_cast<std::int32_t>(term_index), 1}};
  doc.total = 1;
  return dbm::mean_field(doc, p, cfg).mu2;
}

/// Top-layer posterior mean for a full document count vector.
inline Vector document_embedding(const CountVector& doc, const dbm::DbmParams& p,
                                 const dbm::MeanFieldConfig& cfg = {}) {
  p.validate();
  require(doc.total > 0, "document_embedding: zero-length document");
  return dbm::mean_field(doc, p, cfg).mu2;
}

inline std::vector<Embedding> word_embeddings(const corpus::Vocabulary& vocab,
                                              const dbm::DbmParams& p,
                                              const dbm::MeanFieldConfig& cfg = {},
                                              int threads = 1) {
  p.validate();
  require(static_cast<Eigen::Index>(vocab.terms.size()) == p.vocab(),
          "word_embeddings: vocabulary size does not match model");
  std::vector<Embedding> out(vocab.terms.size());
  parallel_blocks(out.size(), 64, threads, [&](std::size_t, std::size_t lo, std::size_t hi) {
    for (std::size_t i = lo; i < hi; ++i) {
      out[i].key = vocab.terms[i];
      out[i].vector = word_embedding(static_cast<Eigen::Index>(i), p, cfg);
    }
  });
  return out;
}

inline std::vector<Embedding> document_embeddings(const std::vector<CountVector>& docs,
                                                  const dbm::DbmParams& p,
                                                  const dbm::MeanFieldConfig& cfg = {},
                                                  int threads = 1) {
  p.validate();
  std::vector<Embedding> out(docs.size());
  parallel_blocks(out.size(), 16, threads, [&](std::size_t, std::size_t lo, std::size_t hi) {
    for (std::size_t i = lo; i < hi; ++i) {
      out[i].key = docs[i].doc_id;
      out[i].vector = document_embedding(docs[i], p, cfg);
    }
  });
  return out;
}

struct RankedTerm {
  std::int32_t index = 0;
  double probability = 0.0;
};

struct ReconstructionResult {
  std::vector<RankedTerm> top;
  Vector distribution;  // full pre-truncation word distribution
};

/// Up pass by mean-field to the top layer, then a deterministic down pass
/// through probabilities: mu1' = logistic(W2 mu2 + M b1), then
/// softmax(W1 mu1' + a). Ties in the ranking break by term rank.
inline ReconstructionResult one_step_reconstruction(const std::vector<Eigen::Index>& terms,
                                                    const dbm::DbmParams& p, int top_n,
                                                    const dbm::MeanFieldConfig& cfg = {}) {
  p.validate();
  require(!terms.empty(), "one_step_reconstruction: empty term list");
  require(top_n >= 1, "one_step_reconstruction: top_n must be >= 1");
  std::map<std::int32_t, std::int64_t> counts;
  for (Eigen::Index t : terms) {
    require(t >= 0 && t < p.vocab(), "one_step_reconstruction: term index out of range");
    ++counts[static_cast<std::int32_t>(t)];
  }
  CountVector doc;
  doc.items.reserve(counts.size());
  for (const auto& [idx, count] : counts) {
    doc.items.emplace_back(idx, static_cast<std::int32_t>(count));
  }
  doc.total = static_cast<std::int64_t>(terms.size());

  const dbm::MeanFieldState state = dbm::mean_field(doc, p, cfg);
  const Vector mu1 = logistic(
      Vector(p.W2 * state.mu2 + static_cast<double>(doc.total) * p.b1));
  ReconstructionResult result;
  result.distribution = softmax(Vector(p.W1 * mu1 + p.a));

  std::vector<std::int32_t> order(static_cast<std::size_t>(p.vocab()));
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<std::int32_t>(i);
  std::sort(order.begin(), order.end(), [&](std::int32_t lhs, std::int32_t rhs) {
    if (result.distribution[lhs] != result.distribution[rhs]) {
      return result.distribution[lhs] > result.distribution[rhs];
    }
    return lhs < rhs;
  });
  const std::size_t keep = std::min(order.size(), static_cast<std::size_t>(top_n));
  result.top.reserve(keep);
  for (std::size_t i = 0; i < keep; ++i) {
    result.top.push_back({order[i], result.distribution[order[i]]});
  }
  return result;
}

struct ClusterModel {
  int k = 0;
  std::vector<Vector> centroids;
  std::vector<int> assignments;  // per input point
  double inertia = 0.0;
  double silhouette = std::numeric_limits<double>::quiet_NaN();
};

namespace detail {

inline double squared_distance(const Vector& x, const Vector& y) {
  return (x - y).squaredNorm();
}

}  // namespace detail

/// Lloyd's algorithm with seeded k-means++ initialization. Empty clusters are
/// repaired by stealing the point farthest from its own centroid (from a
/// cluster that keeps at least one member). `inertia_trace`, when given,
/// records the post-update inertia of every iteration; it is non-increasing.
inline ClusterModel kmeans(const std::vector<Vector>& points, int k, std::uint64_t seed,
                           int max_iters = 100, std::vector<double>* inertia_trace = nullptr) {
  require(k >= 1, "kmeans: k must be >= 1");
  require(static_cast<std::size_t>(k) <= points.size(), "kmeans: k exceeds number of points");
  const std::size_t n = points.size();
  const Eigen::Index dim = points.front().size();
  for (const Vector& x : points) {
    require(x.size() == dim, "kmeans: inconsistent point dimensions");
    require(x.allFinite(), "kmeans: points must be finite");
  }

  ClusterModel model;
  model.k = k;
  Rng rng(seed);

  // k-means++ seeding: subsequent centroids drawn with probability
  // proportional to squared distance from the nearest chosen centroid.
  model.centroids.reserve(static_cast<std::size_t>(k));
  model.centroids.push_back(points[rng.below(n)]);
  std::vector<double> d2(n);
  for (int c = 1; c < k; ++c) {
    double total = 0.0;
    std::vector<double> cumulative(n);
    for (std::size_t i = 0; i < n; ++i) {
      double best = detail::squared_distance(points[i], model.centroids[0]);
      for (std::size_t j = 1; j < model.centroids.size(); ++j) {
        best = std::min(best, detail::squared_distance(points[i], model.centroids[j]));
      }
      d2[i] = best;
      total += best;
      cumulative[i] = total;
    }
    if (total > 0.0) {
      model.centroids.push_back(points[rng.categorical(cumulative)]);
    } else {
      model.centroids.push_back(points[rng.below(n)]);
    }
  }

  model.assignments.assign(n, -1);
  std::vector<int> previous(n, -1);
  std::vector<std::size_t> sizes(static_cast<std::size_t>(k));
  for (int iter = 0; iter < max_iters; ++iter) {
    std::fill(sizes.begin(), sizes.end(), std::size_t{0});
    for (std::size_t i = 0; i < n; ++i) {
      int best = 0;
      double best_d2 = detail::squared_distance(points[i], model.centroids[0]);
      for (int c = 1; c < k; ++c) {
        const double d = detail::squared_distance(points[i], model.centroids[static_cast<std::size_t>(c)]);
        if (d < best_d2) {
          best_d2 = d;
          best = c;
        }
      }
      model.assignments[i] = best;
      ++sizes[static_cast<std::size_t>(best)];
    }
    for (int c = 0; c < k; ++c) {
      if (sizes[static_cast<std::size_t>(c)] > 0) continue;
      std::size_t steal = n;
      double worst = -1.0;
      for (std::size_t i = 0; i < n; ++i) {
        if (sizes[static_cast<std::size_t>(model.assignments[i])] < 2) continue;
        const double d = detail::squared_distance(
            points[i], model.centroids[static_cast<std::size_t>(model.assignments[i])]);
        if (d > worst) {
          worst = d;
          steal = i;
        }
      }
      require(steal < n, "kmeans: cannot repair empty cluster");
      --sizes[static_cast<std::size_t>(model.assignments[steal])];
      model.assignments[steal] = c;
      ++sizes[static_cast<std::size_t>(c)];
    }

    for (int c = 0; c < k; ++c) model.centroids[static_cast<std::size_t>(c)].setZero();
    for (std::size_t i = 0; i < n; ++i) {
      model.centroids[static_cast<std::size_t>(model.assignments[i])] += points[i];
    }
    for (int c = 0; c < k; ++c) {
      model.centroids[static_cast<std::size_t>(c)] /=
          static_cast<double>(sizes[static_cast<std::size_t>(c)]);
    }
    model.inertia = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      model.inertia += detail::squared_distance(
          points[i], model.centroids[static_cast<std::size_t>(model.assignments[i])]);
    }
    if (inertia_trace) inertia_trace->push_back(model.inertia);
    if (model.assignments == previous) break;
    previous = model.assignments;
  }
  return model;
}

/// Mean silhouette over all points with Euclidean distances. Singleton
/// clusters and zero-distance degeneracies score 0.
inline double mean_silhouette(const std::vector<Vector>& points,
                              const std::vector<int>& assignments, int k) {
  require(k >= 2, "mean_silhouette: k must be >= 2");
  require(points.size() == assignments.size(), "mean_silhouette: size mismatch");
  require(!points.empty(), "mean_silhouette: no points");
  const std::size_t n = points.size();
  std::vector<std::size_t> sizes(static_cast<std::size_t>(k));
  for (int a : assignments) {
    require(a >= 0 && a < k, "mean_silhouette: assignment out of range");
    ++sizes[static_cast<std::size_t>(a)];
  }

  double total = 0.0;
  std::vector<double> sums(static_cast<std::size_t>(k));
  for (std::size_t i = 0; i < n; ++i) {
    const int own = assignments[i];
    if (sizes[static_cast<std::size_t>(own)] <= 1) continue;  // singleton scores 0
    std::fill(sums.begin(), sums.end(), 0.0);
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      sums[static_cast<std::size_t>(assignments[j])] += std::sqrt(
          detail::squared_distance(points[i], points[j]));
    }
    const double a = sums[static_cast<std::size_t>(own)] /
                     static_cast<double>(sizes[static_cast<std::size_t>(own)] - 1);
    double b = std::numeric_limits<double>::infinity();
    for (int c = 0; c < k; ++c) {
      if (c == own || sizes[static_cast<std::size_t>(c)] == 0) continue;
      b = std::min(b, sums[static_cast<std::size_t>(c)] /
                          static_cast<double>(sizes[static_cast<std::size_t>(c)]));
    }
    if (!std::isfinite(b)) continue;  // no other non-empty cluster: 0
    const double denom = std::max(a, b);
    if (denom > 0.0) total += (b - a) / denom;
  }
  return total / static_cast<double>(n);
}

struct SilhouetteSelection {
  int best_k = 0;
  std::vector<std::pair<int, double>> scores;  // (k, mean silhouette)
};

/// Runs seeded k-means for every k in [k_min, k_max] and picks the k with the
/// highest mean silhouette; ties go to the smaller k.
inline SilhouetteSelection silhouette_select_k(const std::vector<Vector>& points, int k_min,
                                               int k_max, std::uint64_t seed,
                                               int max_iters = 100) {
  require(k_min >= 2, "silhouette_select_k: k_min must be >= 2");
  require(k_max >= k_min, "silhouette_select_k: k_max must be >= k_min");
  require(points.size() >= 2, "silhouette_select_k: need at least two points");
  require(static_cast<std::size_t>(k_max) <= points.size() - 1,
          "silhouette_select_k: k_max must be <= #points - 1");
  SilhouetteSelection selection;
  double best_score = -std::numeric_limits<double>::infinity();
  for (int k = k_min; k <= k_max; ++k) {
    ClusterModel model = kmeans(points, k, derive_seed(seed, static_cast<std::uint64_t>(k)),
                                max_iters);
    const double score = mean_silhouette(points, model.assignments, k);
    selection.scores.emplace_back(k, score);
    if (score > best_score) {
      best_score = score;
      selection.best_k = k;
    }
  }
  return selection;
}

namespace detail {

inline std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace detail

/// TSV export: header row `key<TAB>v_0...`, one row per embedding in input
/// order, 17 significant digits so a read round-trips bit-exactly.
inline void export_embeddings(const std::string& path, const std::vector<Embedding>& embeddings) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("export_embeddings: cannot open for writing: " + path);
  out << "key";
  if (!embeddings.empty()) {
    for (Eigen::Index j = 0; j < embeddings.front().vector.size(); ++j) out << "\tv_" << j;
  }
  out << '\n';
  for (const Embedding& e : embeddings) {
    require(e.vector.size() == embeddings.front().vector.size(),
            "export_embeddings: inconsistent embedding sizes");
    out << e.key;
    for (Eigen::Index j = 0; j < e.vector.size(); ++j) {
      out << '\t' << detail::format_double(e.vector[j]);
    }
    out << '\n';
  }
  if (!out) throw IoError("export_embeddings: write failed: " + path);
}

inline std::vector<Embedding> read_embeddings(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("read_embeddings: cannot open: " + path);
  std::string line;
  if (!std::getline(in, line)) throw IoError("read_embeddings: missing header: " + path);
  std::vector<Embedding> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream row(line);
    Embedding e;
    if (!std::getline(row, e.key, '\t')) throw IoError("read_embeddings: bad row in " + path);
    std::vector<double> values;
    std::string cell;
    while (std::getline(row, cell, '\t')) {
      try {
        values.push_back(std::stod(cell));
      } catch (const std::exception&) {
        throw IoError("read_embeddings: bad value in " + path);
      }
    }
    e.vector.resize(static_cast<Eigen::Index>(values.size()));
    for (std::size_t i = 0; i < values.size(); ++i) {
      e.vector[static_cast<Eigen::Index>(i)] = values[i];
    }
    out.push_back(std::move(e));
  }
  return out;
}

inline void write_cluster_report(const std::string& path, const std::vector<Embedding>& embeddings,
                                 const std::vector<int>& assignments) {
  require(embeddings.size() == assignments.size(), "write_cluster_report: size mismatch");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("write_cluster_report: cannot open for writing: " + path);
  out << "key\tcluster\n";
  for (std::size_t i = 0; i < embeddings.size(); ++i) {
    out << embeddings[i].key << '\t' << assignments[i] << '\n';
  }
  if (!out) throw IoError("write_cluster_report: write failed: " + path);
}

inline void write_silhouette_report(const std::string& path,
                                    const SilhouetteSelection& selection) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("write_silhouette_report: cannot open for writing: " + path);
  out << "k\tscore\n";
  for (const auto& [k, score] : selection.scores) {
    out << k << '\t' << detail::format_double(score) << '\n';
  }
  if (!out) throw IoError("write_silhouette_report: write failed: " + path);
}

}  // namespace ebtm::embed
