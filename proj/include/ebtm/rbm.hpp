#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "ebtm/errors.hpp"
#include "ebtm/math.hpp"
#include "ebtm/rng.hpp"
#include "ebtm/trainer.hpp"

namespace ebtm::rbm {

/// Binary-binary restricted Boltzmann machine.
/// Energy of a joint state (v, h):  E(v,h) = -v'Wh - a'v - b'h.
struct RbmParams {
  MatrixRM W;  // visible x hidden
  Vector a;    // visible bias
  Vector b;    // hidden bias

  Eigen::Index visible() const { return W.rows(); }
  Eigen::Index hidden() const { return W.cols(); }

  void validate() const {
    require(W.rows() >= 1 && W.cols() >= 1, "RbmParams: weight matrix must be non-empty");
    require(a.size() == W.rows(), "RbmParams: visible bias size mismatch");
    require(b.size() == W.cols(), "RbmParams: hidden bias size mismatch");
    require(W.allFinite() && a.allFinite() && b.allFinite(),
            "RbmParams: parameters must be finite");
  }
};

inline double energy(const Vector& v, const Vector& h, const RbmParams& p) {
  require(v.size() == p.visible() && h.size() == p.hidden(), "rbm::energy: dimension mismatch");
  return -v.dot(p.W * h) - p.a.dot(v) - p.b.dot(h);
}

/// P(h_j = 1 | v), elementwise logistic of W'v + b.
inline Vector hidden_conditional(const Vector& v, const RbmParams& p) {
  require(v.size() == p.visible(), "rbm::hidden_conditional: dimension mismatch");
  return logistic(Vector(p.W.transpose() * v + p.b));
}

/// P(v_d = 1 | h), elementwise logistic of Wh + a.
inline Vector visible_conditional(const Vector& h, const RbmParams& p) {
  require(h.size() == p.hidden(), "rbm::visible_conditional: dimension mismatch");
  return logistic(Vector(p.W * h + p.a));
}

/// F(v) = -a'v - sum_j softplus((W'v + b)_j); log p(v) = -F(v) - log Z.
inline double free_energy(const Vector& v, const RbmParams& p) {
  require(v.size() == p.visible(), "rbm::free_energy: dimension mismatch");
  const Vector logits = p.W.transpose() * v + p.b;
  double s = 0.0;
  for (Eigen::Index j = 0; j < logits.size(); ++j) s += softplus(logits[j]);
  return -p.a.dot(v) - s;
}

namespace detail {

inline void bits_to_vector(std::uint64_t mask, Vector& out) {
  for (Eigen::Index i = 0; i < out.size(); ++i) out[i] = (mask >> i) & 1ULL ? 1.0 : 0.0;
}

inline constexpr Eigen::Index kMaxEnumerationBits = 25;

}  // namespace detail

/// log Z by summing exp(-F(v)) over all 2^D visible configurations.
inline double exact_log_z_visible_enum(const RbmParams& p) {
  p.validate();
  require(p.visible() <= detail::kMaxEnumerationBits,
          "rbm::exact_log_z_visible_enum: too many visible units to enumerate");
  LogSumExp lse;
  Vector v(p.visible());
  const std::uint64_t states = 1ULL << p.visible();
  for (std::uint64_t mask = 0; mask < states; ++mask) {
    detail::bits_to_vector(mask, v);
    lse.add(-free_energy(v, p));
  }
  return lse.value();
}

/// log Z by enumerating the hidden layer; uses the symmetric free energy
/// G(h) = -b'h - sum_d softplus((Wh + a)_d).
inline double exact_log_z_hidden_enum(const RbmParams& p) {
  p.validate();
  require(p.hidden() <= detail::kMaxEnumerationBits,
          "rbm::exact_log_z_hidden_enum: too many hidden units to enumerate");
  LogSumExp lse;
  Vector h(p.hidden());
  const std::uint64_t states = 1ULL << p.hidden();
  for (std::uint64_t mask = 0; mask < states; ++mask) {
    detail::bits_to_vector(mask, h);
    const Vector logits = p.W * h + p.a;
    double s = 0.0;
    for (Eigen::Index d = 0; d < logits.size(); ++d) s += softplus(logits[d]);
    lse.add(p.b.dot(h) + s);
  }
  return lse.value();
}

/// Enumerates whichever layer is smaller.
inline double exact_log_z(const RbmParams& p) {
  p.validate();
  require(std::min(p.visible(), p.hidden()) <= detail::kMaxEnumerationBits,
          "rbm::exact_log_z: model too large for exact enumeration");
  return p.visible() <= p.hidden() ? exact_log_z_visible_enum(p) : exact_log_z_hidden_enum(p);
}

/// Exact mean log-likelihood gradient for small models: data statistics minus
/// fully enumerated model statistics. Intended for finite-difference checks.
inline Gradient exact_gradient(const std::vector<Vector>& batch, const RbmParams& p) {
  p.validate();
  require(!batch.empty(), "rbm::exact_gradient: batch is empty");
  require(p.visible() <= detail::kMaxEnumerationBits,
          "rbm::exact_gradient: too many visible units to enumerate");
  Gradient g = Gradient::zero(p.visible(), p.hidden());
  for (const Vector& v : batch) {
    const Vector ph = hidden_conditional(v, p);
    g.W += v * ph.transpose();
    g.a += v;
    g.b += ph;
  }
  g.scale(1.0 / static_cast<double>(batch.size()));

  const double log_z = exact_log_z_visible_enum(p);
  Vector v(p.visible());
  const std::uint64_t states = 1ULL << p.visible();
  for (std::uint64_t mask = 0; mask < states; ++mask) {
    detail::bits_to_vector(mask, v);
    const double weight = std::exp(-free_energy(v, p) - log_z);
    const Vector ph = hidden_conditional(v, p);
    g.W -= weight * (v * ph.transpose());
    g.a -= weight * v;
    g.b -= weight * ph;
  }
  return g;
}

struct CdOptions {
  double dropout_keep = 1.0;
  int threads = 1;
};

struct CdResult {
  Gradient grad;
  double reconstruction_cross_entropy = 0.0;  // batch mean
};

namespace detail {

// CD-k statistics for one document. Positive phase pairs the data with hidden
// probabilities; the chain alternates sampled states and finishes with hidden
// probabilities at the last visible sample. `down_scale` doubles the
// hidden-to-visible input when this RBM is the top stage of a pretraining
// stack. Draw order per document: dropout mask (only when keep < 1), initial
// hidden sample, then per step D visible draws and F hidden draws.
inline void accumulate_cd_doc(const Vector& v0, const RbmParams& p, int k, double dropout_keep,
                              double down_scale, Rng& rng, Gradient& grad, double& recon_ce) {
  const Eigen::Index f = p.hidden();
  Vector mask;
  const bool use_mask = dropout_keep < 1.0;
  if (use_mask) {
    mask.resize(f);
    for (Eigen::Index j = 0; j < f; ++j) mask[j] = rng.bernoulli(dropout_keep) ? 1.0 : 0.0;
  }

  Vector ph = hidden_conditional(v0, p);
  if (use_mask) ph.array() *= mask.array();
  grad.W += v0 * ph.transpose();
  grad.a += v0;
  grad.b += ph;

  Vector h(f);
  for (Eigen::Index j = 0; j < f; ++j) h[j] = rng.bernoulli(ph[j]) ? 1.0 : 0.0;
  Vector v = v0;
  for (int step = 1; step <= k; ++step) {
    const Vector pv = logistic(Vector(down_scale * (p.W * h) + p.a));
    if (step == 1) {
      for (Eigen::Index d = 0; d < v0.size(); ++d) {
        recon_ce -= v0[d] * std::log(std::max(pv[d], 1e-300)) +
                    (1.0 - v0[d]) * std::log(std::max(1.0 - pv[d], 1e-300));
      }
    }
    for (Eigen::Index d = 0; d < v.size(); ++d) v[d] = rng.bernoulli(pv[d]) ? 1.0 : 0.0;
    if (step < k) {
      Vector q = hidden_conditional(v, p);
      if (use_mask) q.array() *= mask.array();
      for (Eigen::Index j = 0; j < f; ++j) h[j] = rng.bernoulli(q[j]) ? 1.0 : 0.0;
    }
  }
  Vector pk = hidden_conditional(v, p);
  if (use_mask) pk.array() *= mask.array();
  grad.W -= v * pk.transpose();
  grad.a -= v;
  grad.b -= pk;
}

}  // namespace detail

/// CD-k gradient averaged over the batch, in the ascent convention. Consumes
/// exactly one value from `rng` to seed per-document streams, so results are
/// independent of the thread count.
inline CdResult cd_gradient(const std::vector<Vector>& batch, const RbmParams& p, int k, Rng& rng,
                            const CdOptions& opts = {}) {
  p.validate();
  require(!batch.empty(), "rbm::cd_gradient: batch is empty");
  require(k >= 1, "rbm::cd_gradient: k must be >= 1");
  require(opts.dropout_keep > 0.0 && opts.dropout_keep <= 1.0,
          "rbm::cd_gradient: dropout_keep must be in (0,1]");
  for (const Vector& v : batch) {
    require(v.size() == p.visible(), "rbm::cd_gradient: document dimension mismatch");
  }
  const std::uint64_t round_seed = rng.next_u64();
  const std::size_t num_blocks = num_parallel_blocks(batch.size(), ebtm::detail::kGradientBlock);
  std::vector<Gradient> partial(num_blocks, Gradient::zero(p.visible(), p.hidden()));
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
  result.grad = Gradient::zero(p.visible(), p.hidden());
  for (std::size_t bi = 0; bi < num_blocks; ++bi) {
    result.grad.add(partial[bi]);
    result.reconstruction_cross_entropy += partial_ce[bi];
  }
  result.grad.scale(1.0 / static_cast<double>(batch.size()));
  result.reconstruction_cross_entropy /= static_cast<double>(batch.size());
  return result;
}

/// Training policy plugged into sgd_train. `down_scale = 2` is used when this
/// RBM sits on top of a pretraining stack and must halve-compensate the
/// missing bottom-up input.
struct RbmTrainPolicy {
  using Doc = Vector;
  using Params = RbmParams;

  int hidden = 1;
  double down_scale = 1.0;

  Params init(const std::vector<Vector>& corpus, Rng& rng) const {
    require(hidden >= 1, "rbm::train: hidden must be >= 1");
    const Eigen::Index d = corpus.front().size();
    for (const Vector& v : corpus) {
      require(v.size() == d, "rbm::train: inconsistent document dimension");
    }
    Params p;
    p.W.resize(d, hidden);
    for (Eigen::Index i = 0; i < d; ++i) {
      for (Eigen::Index j = 0; j < hidden; ++j) p.W(i, j) = 0.01 * rng.normal();
    }
    Vector marginal = Vector::Zero(d);
    for (const Vector& v : corpus) marginal += v;
    marginal /= static_cast<double>(corpus.size());
    p.a.resize(d);
    for (Eigen::Index i = 0; i < d; ++i) {
      const double m = marginal[i];
      const double logit = std::log(std::max(m, 1e-300)) - std::log(std::max(1.0 - m, 1e-300));
      p.a[i] = std::clamp(logit, -10.0, 10.0);
    }
    p.b = Vector::Zero(hidden);
    return p;
  }

  void accumulate_cd(const Params& p, std::span<const Vector* const> docs,
                     std::uint64_t doc_seed_base, std::size_t first_doc_index, int k,
                     double dropout_keep, Gradient& grad, double& recon_ce) const {
    for (std::size_t i = 0; i < docs.size(); ++i) {
      Rng doc_rng(derive_seed(doc_seed_base, first_doc_index + i));
      detail::accumulate_cd_doc(*docs[i], p, k, dropout_keep, down_scale, doc_rng, grad, recon_ce);
    }
  }

  void finish(Params& p, double dropout_keep) const {
    if (dropout_keep < 1.0) p.W *= dropout_keep;
  }
};

/// CD-k training with the shared SGD loop. Deterministic for a fixed config;
/// thread count only affects wall time.
inline RbmParams train(const std::vector<Vector>& corpus, int hidden, const TrainConfig& cfg,
                       TrainLog* log = nullptr) {
  for (const Vector& v : corpus) {
    for (Eigen::Index i = 0; i < v.size(); ++i) {
      require(v[i] == 0.0 || v[i] == 1.0, "rbm::train: documents must be binary vectors");
    }
  }
  RbmTrainPolicy policy;
  policy.hidden = hidden;
  return sgd_train(corpus, cfg, policy, log);
}

}  // namespace ebtm::rbm
