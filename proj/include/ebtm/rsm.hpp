#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <span>
#include <vector>

#include "ebtm/corpus.hpp"
#include "ebtm/errors.hpp"
#include "ebtm/math.hpp"
#include "ebtm/rng.hpp"
#include "ebtm/trainer.hpp"

namespace ebtm::rsm {

using corpus::CountVector;

/// Replicated softmax model over word-count vectors. For a document with M
/// words and count vector u:  E(u,h) = -u'Wh - a'u - M b'h. The hidden bias is
/// replicated once per observed word, which keeps documents of different
/// lengths on a comparable scale.
struct RsmParams {
  MatrixRM W;  // vocab x hidden
  Vector a;    // visible (per-term) bias
  Vector b;    // hidden bias

  Eigen::Index vocab() const { return W.rows(); }
  Eigen::Index hidden() const { return W.cols(); }

  void validate() const {
    require(W.rows() >= 1 && W.cols() >= 1, "RsmParams: weight matrix must be non-empty");
    require(a.size() == W.rows(), "RsmParams: visible bias size mismatch");
    require(b.size() == W.cols(), "RsmParams: hidden bias size mismatch");
    require(W.allFinite() && a.allFinite() && b.allFinite(),
            "RsmParams: parameters must be finite");
  }
};

namespace detail {

inline void check_doc(const CountVector& doc, const RsmParams& p, const char* where) {
  for (const auto& [idx, count] : doc.items) {
    require(idx >= 0 && idx < p.vocab(), std::string(where) + ": term index out of range");
    require(count > 0, std::string(where) + ": counts must be positive");
  }
}

// W'u + scale * M * b accumulated over the sparse counts.
inline Vector hidden_input(const CountVector& doc, const RsmParams& p, double scale) {
  Vector c = (scale * static_cast<double>(doc.total)) * p.b;
  for (const auto& [idx, count] : doc.items) {
    c.noalias() += (scale * static_cast<double>(count)) * p.W.row(idx).transpose();
  }
  return c;
}

}  // namespace detail

inline double energy(const CountVector& doc, const Vector& h, const RsmParams& p) {
  p.validate();
  detail::check_doc(doc, p, "rsm::energy");
  require(h.size() == p.hidden(), "rsm::energy: hidden dimension mismatch");
  double wu = 0.0;
  double au = 0.0;
  for (const auto& [idx, count] : doc.items) {
    wu += static_cast<double>(count) * p.W.row(idx).dot(h);
    au += static_cast<double>(count) * p.a[idx];
  }
  return -wu - au - static_cast<double>(doc.total) * p.b.dot(h);
}

/// P(h_j = 1 | u) = logistic((W'u + M b)_j). `scale` doubles the input when
/// this model is the bottom stage of a pretraining stack.
inline Vector hidden_conditional(const CountVector& doc, const RsmParams& p, double scale = 1.0) {
  detail::check_doc(doc, p, "rsm::hidden_conditional");
  return logistic(detail::hidden_input(doc, p, scale));
}

/// Per-word distribution over the vocabulary given hidden state h.
inline Vector visible_softmax(const Vector& h, const RsmParams& p) {
  require(h.size() == p.hidden(), "rsm::visible_softmax: hidden dimension mismatch");
  return softmax(Vector(p.W * h + p.a));
}

/// F(u) = -a'u - sum_j softplus((W'u + M b)_j); log p(u) = -F(u) - log Z(M)
/// under the ordered-word convention used throughout.
inline double free_energy(const CountVector& doc, const RsmParams& p) {
  detail::check_doc(doc, p, "rsm::free_energy");
  const Vector c = detail::hidden_input(doc, p, 1.0);
  double s = 0.0;
  for (Eigen::Index j = 0; j < c.size(); ++j) s += softplus(c[j]);
  double au = 0.0;
  for (const auto& [idx, count] : doc.items) au += static_cast<double>(count) * p.a[idx];
  return -au - s;
}

/// log Z for documents of length M, by enumerating the hidden layer:
/// Z(M) = sum_h exp(M b'h) * (sum_d exp((Wh + a)_d))^M, summed over ordered
/// word sequences.
inline double exact_log_z(const RsmParams& p, std::int64_t m) {
  p.validate();
  require(m >= 0, "rsm::exact_log_z: document length must be >= 0");
  require(p.hidden() <= 25, "rsm::exact_log_z: too many hidden units to enumerate");
  LogSumExp lse;
  Vector h(p.hidden());
  const std::uint64_t states = 1ULL << p.hidden();
  for (std::uint64_t mask = 0; mask < states; ++mask) {
    for (Eigen::Index j = 0; j < h.size(); ++j) h[j] = (mask >> j) & 1ULL ? 1.0 : 0.0;
    const Vector logits = p.W * h + p.a;
    double word_lse = log_sum_exp(std::span<const double>(logits.data(),
                                                          static_cast<std::size_t>(logits.size())));
    lse.add(static_cast<double>(m) * (p.b.dot(h) + word_lse));
  }
  return lse.value();
}

/// Draws `m` words from the per-word distribution and returns them as a count
/// vector. Consumes exactly `m` values from `rng`.
inline CountVector sample_counts(const Vector& word_probs, std::int64_t m, Rng& rng,
                                 std::string doc_id = {}) {
  std::vector<double> cumulative(static_cast<std::size_t>(word_probs.size()));
  double acc = 0.0;
  for (Eigen::Index d = 0; d < word_probs.size(); ++d) {
    acc += word_probs[d];
    cumulative[static_cast<std::size_t>(d)] = acc;
  }
  std::map<std::int32_t, std::int64_t> counts;
  for (std::int64_t w = 0; w < m; ++w) {
    const std::size_t d = rng.categorical(cumulative);
    ++counts[static_cast<std::int32_t>(d)];
  }
  CountVector out;
  out.doc_id = std::move(doc_id);
  out.items.reserve(counts.size());
  for (const auto& [idx, count] : counts) {
    out.items.emplace_back(idx, static_cast<std::int32_t>(count));
  }
  out.total = m;
  return out;
}

/// Exact mean log-likelihood gradient for small vocabularies / hidden layers,
/// enumerating the hidden layer for the model expectations. Documents may have
/// different lengths; model statistics are computed per distinct length.
inline Gradient exact_gradient(const std::vector<CountVector>& batch, const RsmParams& p) {
  p.validate();
  require(!batch.empty(), "rsm::exact_gradient: batch is empty");
  require(p.hidden() <= 20, "rsm::exact_gradient: too many hidden units to enumerate");
  Gradient g = Gradient::zero(p.vocab(), p.hidden());
  std::map<std::int64_t, std::size_t> length_counts;
  for (const CountVector& doc : batch) {
    detail::check_doc(doc, p, "rsm::exact_gradient");
    const Vector ph = hidden_conditional(doc, p);
    for (const auto& [idx, count] : doc.items) {
      g.W.row(idx) += static_cast<double>(count) * ph.transpose();
      g.a[idx] += static_cast<double>(count);
    }
    g.b += static_cast<double>(doc.total) * ph;
    ++length_counts[doc.total];
  }
  g.scale(1.0 / static_cast<double>(batch.size()));

  const std::uint64_t states = 1ULL << p.hidden();
  Vector h(p.hidden());
  for (const auto& [m, n_docs] : length_counts) {
    const double weight = static_cast<double>(n_docs) / static_cast<double>(batch.size());
    const double md = static_cast<double>(m);
    // p(h) for length m, then E[u | h] = m * softmax(Wh + a).
    std::vector<double> log_ph(states);
    std::vector<Vector> word_probs(states);
    LogSumExp lse;
    for (std::uint64_t mask = 0; mask < states; ++mask) {
      for (Eigen::Index j = 0; j < h.size(); ++j) h[j] = (mask >> j) & 1ULL ? 1.0 : 0.0;
      const Vector logits = p.W * h + p.a;
      const double word_lse = log_sum_exp(
          std::span<const double>(logits.data(), static_cast<std::size_t>(logits.size())));
      log_ph[mask] = md * (p.b.dot(h) + word_lse);
      word_probs[mask] = softmax(logits);
      lse.add(log_ph[mask]);
    }
    const double log_z = lse.value();
    for (std::uint64_t mask = 0; mask < states; ++mask) {
      for (Eigen::Index j = 0; j < h.size(); ++j) h[j] = (mask >> j) & 1ULL ? 1.0 : 0.0;
      const double prob = std::exp(log_ph[mask] - log_z) * weight;
      const Vector eu = md * word_probs[mask];
      g.W -= prob * (eu * h.transpose());
      g.a -= prob * eu;
      g.b -= (prob * md) * h;
    }
  }
  return g;
}

namespace detail {

// CD-k for one document. The chain keeps the document's word count M; each
// down pass redraws all M words from the current per-word softmax. Draw order:
// dropout mask (only when keep < 1), F hidden draws, then per step M word
// draws and F hidden draws. `up_scale` doubles the hidden input when this
// model is the bottom stage of a pretraining stack.
inline void accumulate_cd_doc(const CountVector& doc, const RsmParams& p, int k,
                              double dropout_keep, double up_scale, Rng& rng, Gradient& grad,
                              double& recon_ce) {
  const Eigen::Index f = p.hidden();
  const double md = static_cast<double>(doc.total);
  Vector mask;
  const bool use_mask = dropout_keep < 1.0;
  if (use_mask) {
    mask.resize(f);
    for (Eigen::Index j = 0; j < f; ++j) mask[j] = rng.bernoulli(dropout_keep) ? 1.0 : 0.0;
  }

  Vector ph = logistic(hidden_input(doc, p, up_scale));
  if (use_mask) ph.array() *= mask.array();
  for (const auto& [idx, count] : doc.items) {
    grad.W.row(idx) += static_cast<double>(count) * ph.transpose();
    grad.a[idx] += static_cast<double>(count);
  }
  grad.b += md * ph;

  Vector h(f);
  for (Eigen::Index j = 0; j < f; ++j) h[j] = rng.bernoulli(ph[j]) ? 1.0 : 0.0;
  CountVector chain = doc;
  for (int step = 1; step <= k; ++step) {
    const Vector word_probs = visible_softmax(h, p);
    if (step == 1) {
      for (const auto& [idx, count] : doc.items) {
        recon_ce -= static_cast<double>(count) * std::log(std::max(word_probs[idx], 1e-300));
      }
    }
    chain = sample_counts(word_probs, doc.total, rng);
    if (step < k) {
      Vector q = logistic(hidden_input(chain, p, up_scale));
      if (use_mask) q.array() *= mask.array();
      for (Eigen::Index j = 0; j < f; ++j) h[j] = rng.bernoulli(q[j]) ? 1.0 : 0.0;
    }
  }
  Vector pk = logistic(hidden_input(chain, p, up_scale));
  if (use_mask) pk.array() *= mask.array();
  for (const auto& [idx, count] : chain.items) {
    grad.W.row(idx) -= static_cast<double>(count) * pk.transpose();
    grad.a[idx] -= static_cast<double>(count);
  }
  grad.b -= md * pk;
}

}  // namespace detail

struct CdOptions {
  double dropout_keep = 1.0;
  int threads = 1;
};

struct CdResult {
  Gradient grad;
  double reconstruction_cross_entropy = 0.0;  // batch mean
};

/// CD-k gradient averaged over the batch, ascent convention. Consumes exactly
/// one value from `rng`; per-document streams make the result independent of
/// the thread count.
inline CdResult cd_gradient(const std::vector<CountVector>& batch, const RsmParams& p, int k,
                            Rng& rng, const CdOptions& opts = {}) {
  p.validate();
  require(!batch.empty(), "rsm::cd_gradient: batch is empty");
  require(k >= 1, "rsm::cd_gradient: k must be >= 1");
  require(opts.dropout_keep > 0.0 && opts.dropout_keep <= 1.0,
          "rsm::cd_gradient: dropout_keep must be in (0,1]");
  for (const CountVector& doc : batch) detail::check_doc(doc, p, "rsm::cd_gradient");
  const std::uint64_t round_seed = rng.next_u64();
  const std::size_t num_blocks = num_parallel_blocks(batch.size(), ebtm::detail::kGradientBlock);
  std::vector<Gradient> partial(num_blocks, Gradient::zero(p.vocab(), p.hidden()));
  std::vector<double> partial_ce(num_blocks, 0.0);
  parallel_blocks(batch.size(), ebtm::detail::kGradientBlock, opts.threads,
                  [&](std::size_t bi, std::size_t lo, std::size_t hi) {
                    for (std::size_t i = lo; i < hi; ++i) {
                      Rng doc_rng(derive_seed(round_seed, i));
                      detail::accumulate_cd_doc(batch[i], p, k, opts.dropout_keep, 1.0, doc_rng,
                                                partial[bi], partial_ce[bi]);
                    }
                  });
  CdResult result;
  result.grad = Gradient::zero(p.vocab(), p.hidden());
  for (std::size_t bi = 0; bi < num_blocks; ++bi) {
    result.grad.add(partial[bi]);
    result.reconstruction_cross_entropy += partial_ce[bi];
  }
  result.grad.scale(1.0 / static_cast<double>(batch.size()));
  result.reconstruction_cross_entropy /= static_cast<double>(batch.size());
  return result;
}

/// Training policy plugged into sgd_train. `vocab` fixes the visible size so
/// terms absent from the training slice keep their rows. `up_scale = 2` is
/// used for the bottom stage of a pretraining stack.
struct RsmTrainPolicy {
  using Doc = CountVector;
  using Params = RsmParams;

  int hidden = 1;
  Eigen::Index vocab = 0;
  double up_scale = 1.0;

  Params init(const std::vector<CountVector>& corpus, Rng& rng) const {
    require(hidden >= 1, "rsm::train: hidden must be >= 1");
    require(vocab >= 1, "rsm::train: vocab must be >= 1");
    Params p;
    p.W.resize(vocab, hidden);
    for (Eigen::Index i = 0; i < vocab; ++i) {
      for (Eigen::Index j = 0; j < hidden; ++j) p.W(i, j) = 0.01 * rng.normal();
    }
    // Visible bias starts at the log of the smoothed unigram distribution.
    Vector counts = Vector::Ones(vocab);
    double total = static_cast<double>(vocab);
    for (const CountVector& doc : corpus) {
      for (const auto& [idx, count] : doc.items) {
        require(idx >= 0 && idx < vocab, "rsm::train: term index out of range");
        counts[idx] += static_cast<double>(count);
        total += static_cast<double>(count);
      }
    }
    p.a.resize(vocab);
    for (Eigen::Index i = 0; i < vocab; ++i) {
      p.a[i] = std::clamp(std::log(counts[i] / total), -10.0, 10.0);
    }
    p.b = Vector::Zero(hidden);
    return p;
  }

  void accumulate_cd(const Params& p, std::span<const CountVector* const> docs,
                     std::uint64_t doc_seed_base, std::size_t first_doc_index, int k,
                     double dropout_keep, Gradient& grad, double& recon_ce) const {
    for (std::size_t i = 0; i < docs.size(); ++i) {
      Rng doc_rng(derive_seed(doc_seed_base, first_doc_index + i));
      detail::accumulate_cd_doc(*docs[i], p, k, dropout_keep, up_scale, doc_rng, grad, recon_ce);
    }
  }

  void finish(Params& p, double dropout_keep) const {
    if (dropout_keep < 1.0) p.W *= dropout_keep;
  }
};

inline RsmParams train(const std::vector<CountVector>& corpus, Eigen::Index vocab, int hidden,
                       const TrainConfig& cfg, TrainLog* log = nullptr) {
  RsmTrainPolicy policy;
  policy.hidden = hidden;
  policy.vocab = vocab;
  return sgd_train(corpus, cfg, policy, log);
}

}  // namespace ebtm::rsm
