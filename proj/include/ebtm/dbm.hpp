#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "ebtm/corpus.hpp"
#include "ebtm/errors.hpp"
#include "ebtm/math.hpp"
#include "ebtm/parallel.hpp"
#include "ebtm/rbm.hpp"
#include "ebtm/rng.hpp"
#include "ebtm/rsm.hpp"
#include "ebtm/trainer.hpp"

namespace ebtm::dbm {

using corpus::CountVector;

/// Two-layer deep Boltzmann machine with a replicated-softmax visible layer:
/// E(u, h1, h2) = -u'W1h1 - h1'W2h2 - a'u - M b1'h1 - b2'h2
/// where u is a count vector with M words. The top layer may be empty
/// (hidden2 = 0), in which case the model degenerates to a replicated softmax.
struct DbmParams {
  MatrixRM W1;  // vocab x hidden1
  MatrixRM W2;  // hidden1 x hidden2
  Vector a;     // vocab
  Vector b1;    // hidden1
  Vector b2;    // hidden2

  Eigen::Index vocab() const { return W1.rows(); }
  Eigen::Index hidden1() const { return W1.cols(); }
  Eigen::Index hidden2() const { return W2.cols(); }

  void validate() const {
    require(W1.rows() >= 1 && W1.cols() >= 1, "DbmParams: W1 must be non-empty");
    require(W2.rows() == W1.cols(), "DbmParams: W2 rows must match hidden1");
    require(a.size() == W1.rows(), "DbmParams: visible bias size mismatch");
    require(b1.size() == W1.cols(), "DbmParams: first hidden bias size mismatch");
    require(b2.size() == W2.cols(), "DbmParams: second hidden bias size mismatch");
    require(W1.allFinite() && W2.allFinite() && a.allFinite() && b1.allFinite() &&
                b2.allFinite(),
            "DbmParams: parameters must be finite");
  }
};

namespace detail {

inline void check_doc(const CountVector& doc, const DbmParams& p, const char* where) {
  for (const auto& [idx, count] : doc.items) {
    require(idx >= 0 && idx < p.vocab(), std::string(where) + ": term index out of range");
    require(count > 0, std::string(where) + ": counts must be positive");
  }
}

// W1'u + M b1 over the sparse counts.
inline Vector bottom_up_input(const CountVector& doc, const DbmParams& p) {
  Vector c = static_cast<double>(doc.total) * p.b1;
  for (const auto& [idx, count] : doc.items) {
    c.noalias() += static_cast<double>(count) * p.W1.row(idx).transpose();
  }
  return c;
}

}  // namespace detail

inline double energy(const CountVector& doc, const Vector& h1, const Vector& h2,
                     const DbmParams& p) {
  p.validate();
  detail::check_doc(doc, p, "dbm::energy");
  require(h1.size() == p.hidden1() && h2.size() == p.hidden2(),
          "dbm::energy: hidden dimension mismatch");
  double w1u = 0.0;
  double au = 0.0;
  for (const auto& [idx, count] : doc.items) {
    w1u += static_cast<double>(count) * p.W1.row(idx).dot(h1);
    au += static_cast<double>(count) * p.a[idx];
  }
  return -w1u - h1.dot(p.W2 * h2) - au - static_cast<double>(doc.total) * p.b1.dot(h1) -
         p.b2.dot(h2);
}

struct MeanFieldConfig {
  int max_iters = 30;
  double tol = 1e-6;

  void validate() const {
    require(max_iters >= 1, "MeanFieldConfig: max_iters must be >= 1");
    require(tol > 0.0, "MeanFieldConfig: tol must be > 0");
  }
};

struct MeanFieldState {
  Vector mu1;
  Vector mu2;
  int iterations_used = 0;
  bool converged = false;
};

/// Doubled bottom-up pass used both to start mean-field and to generate
/// stage-2 pretraining data.
inline MeanFieldState mean_field_init(const CountVector& doc, const DbmParams& p) {
  detail::check_doc(doc, p, "dbm::mean_field");
  MeanFieldState state;
  state.mu1 = logistic(Vector(2.0 * detail::bottom_up_input(doc, p)));
  state.mu2 = logistic(Vector(p.W2.transpose() * state.mu1 + p.b2));
  return state;
}

/// One sequential coordinate sweep: mu1 then mu2. Returns the largest
/// absolute change across both layers.
inline double mean_field_sweep(const CountVector& doc, const DbmParams& p, MeanFieldState& state) {
  const Vector mu1 = logistic(Vector(detail::bottom_up_input(doc, p) + p.W2 * state.mu2));
  double delta = state.mu1.size() == 0 ? 0.0 : (mu1 - state.mu1).cwiseAbs().maxCoeff();
  state.mu1 = mu1;
  const Vector mu2 = logistic(Vector(p.W2.transpose() * state.mu1 + p.b2));
  if (mu2.size() > 0) delta = std::max(delta, (mu2 - state.mu2).cwiseAbs().maxCoeff());
  state.mu2 = mu2;
  return delta;
}

/// Sequential mean-field inference for the factorized posterior over (h1, h2).
/// Non-convergence within max_iters is reported via the flag, not an error.
inline MeanFieldState mean_field(const CountVector& doc, const DbmParams& p,
                                 const MeanFieldConfig& cfg = {}) {
  p.validate();
  cfg.validate();
  MeanFieldState state = mean_field_init(doc, p);
  for (int it = 1; it <= cfg.max_iters; ++it) {
    const double delta = mean_field_sweep(doc, p, state);
    state.iterations_used = it;
    if (delta < cfg.tol) {
      state.converged = true;
      break;
    }
  }
  return state;
}

/// Variational lower bound on log of the unnormalized evidence:
/// E_q[-energy] + entropy(q) with q = Bernoulli(mu1) x Bernoulli(mu2).
/// The -log Z term is omitted (constant in q).
inline double elbo(const CountVector& doc, const MeanFieldState& state, const DbmParams& p) {
  p.validate();
  detail::check_doc(doc, p, "dbm::elbo");
  require(state.mu1.size() == p.hidden1() && state.mu2.size() == p.hidden2(),
          "dbm::elbo: mean-field state dimension mismatch");
  for (Eigen::Index j = 0; j < state.mu1.size(); ++j) {
    require(state.mu1[j] >= 0.0 && state.mu1[j] <= 1.0, "dbm::elbo: mu1 outside [0,1]");
  }
  for (Eigen::Index j = 0; j < state.mu2.size(); ++j) {
    require(state.mu2[j] >= 0.0 && state.mu2[j] <= 1.0, "dbm::elbo: mu2 outside [0,1]");
  }
  double expected = 0.0;
  for (const auto& [idx, count] : doc.items) {
    expected += static_cast<double>(count) * (p.W1.row(idx).dot(state.mu1) + p.a[idx]);
  }
  expected += state.mu1.dot(p.W2 * state.mu2);
  expected += static_cast<double>(doc.total) * p.b1.dot(state.mu1);
  expected += p.b2.dot(state.mu2);
  double entropy = 0.0;
  for (Eigen::Index j = 0; j < state.mu1.size(); ++j) entropy += bernoulli_entropy(state.mu1[j]);
  for (Eigen::Index j = 0; j < state.mu2.size(); ++j) entropy += bernoulli_entropy(state.mu2[j]);
  return expected + entropy;
}

struct DbmChain {
  CountVector v;  // document length M stays fixed across updates
  Vector h1;
  Vector h2;
};

struct DbmChains {
  std::vector<DbmChain> states;
  std::int64_t step_count = 0;
};

namespace detail {

// One alternating Gibbs update of a single chain: h1, then the M words, then
// h2. Dropout masks (drawn first, only when keep < 1) zero hidden units for
// this update. Draw order per chain: masks, F1 bernoullis, M words, F2
// bernoullis.
inline void gibbs_step_chain(DbmChain& chain, const DbmParams& p, double dropout_keep, Rng& rng) {
  const Eigen::Index f1 = p.hidden1();
  const Eigen::Index f2 = p.hidden2();
  Vector m1, m2;
  const bool use_mask = dropout_keep < 1.0;
  if (use_mask) {
    m1.resize(f1);
    for (Eigen::Index j = 0; j < f1; ++j) m1[j] = rng.bernoulli(dropout_keep) ? 1.0 : 0.0;
    m2.resize(f2);
    for (Eigen::Index j = 0; j < f2; ++j) m2[j] = rng.bernoulli(dropout_keep) ? 1.0 : 0.0;
  }
  Vector p1 = logistic(Vector(bottom_up_input(chain.v, p) + p.W2 * chain.h2));
  if (use_mask) p1.array() *= m1.array();
  for (Eigen::Index j = 0; j < f1; ++j) chain.h1[j] = rng.bernoulli(p1[j]) ? 1.0 : 0.0;
  const Vector word_probs = softmax(Vector(p.W1 * chain.h1 + p.a));
  chain.v = rsm::sample_counts(word_probs, chain.v.total, rng, chain.v.doc_id);
  Vector p2 = logistic(Vector(p.W2.transpose() * chain.h1 + p.b2));
  if (use_mask) p2.array() *= m2.array();
  for (Eigen::Index j = 0; j < f2; ++j) chain.h2[j] = rng.bernoulli(p2[j]) ? 1.0 : 0.0;
}

inline constexpr std::size_t kChainBlock = 16;

}  // namespace detail

/// Advances every chain by one alternating Gibbs update (h1, words, h2).
/// Consumes exactly one value from `rng`; per-chain streams keep the result
/// independent of the thread count.
inline void gibbs_step(DbmChains& chains, const DbmParams& p, Rng& rng, int threads = 1) {
  p.validate();
  for (const DbmChain& chain : chains.states) {
    detail::check_doc(chain.v, p, "dbm::gibbs_step");
    require(chain.h1.size() == p.hidden1() && chain.h2.size() == p.hidden2(),
            "dbm::gibbs_step: chain dimension mismatch");
  }
  const std::uint64_t round_seed = rng.next_u64();
  parallel_blocks(chains.states.size(), detail::kChainBlock, threads,
                  [&](std::size_t, std::size_t lo, std::size_t hi) {
                    for (std::size_t c = lo; c < hi; ++c) {
                      Rng chain_rng(derive_seed(round_seed, c));
                      detail::gibbs_step_chain(chains.states[c], p, 1.0, chain_rng);
                    }
                  });
  ++chains.step_count;
}

struct DbmTrainConfig {
  TrainConfig sgd;
  int chains = 100;
  MeanFieldConfig mean_field;

  void validate() const {
    sgd.validate();
    require(chains >= 1, "DbmTrainConfig: chains must be >= 1");
    mean_field.validate();
  }
};

struct DbmEpochStats {
  int epoch = 0;
  double mean_elbo = 0.0;
};

struct DbmTrainLog {
  std::vector<DbmEpochStats> epochs;
};

namespace detail {

struct DbmGradient {
  MatrixRM W1, W2;
  Vector a, b1, b2;

  static DbmGradient zero(const DbmParams& p) {
    DbmGradient g;
    g.W1 = MatrixRM::Zero(p.vocab(), p.hidden1());
    g.W2 = MatrixRM::Zero(p.hidden1(), p.hidden2());
    g.a = Vector::Zero(p.vocab());
    g.b1 = Vector::Zero(p.hidden1());
    g.b2 = Vector::Zero(p.hidden2());
    return g;
  }
  void add(const DbmGradient& o) {
    W1 += o.W1;
    W2 += o.W2;
    a += o.a;
    b1 += o.b1;
    b2 += o.b2;
  }
  void scale(double s) {
    W1 *= s;
    W2 *= s;
    a *= s;
    b1 *= s;
    b2 *= s;
  }
};

}  // namespace detail

/// Persistent-chain training: data-dependent expectations from mean-field,
/// model expectations from chains advanced one Gibbs update per minibatch.
/// Chain lengths M are drawn once from the empirical training-length
/// distribution. Deterministic for a fixed config at any thread count.
inline DbmParams train(const std::vector<CountVector>& corpus, const DbmParams& init,
                       const DbmTrainConfig& cfg, DbmTrainLog* log = nullptr) {
  init.validate();
  cfg.validate();
  require(!corpus.empty(), "dbm::train: corpus is empty");
  for (const CountVector& doc : corpus) detail::check_doc(doc, init, "dbm::train");

  DbmParams params = init;
  const std::size_t n = corpus.size();
  const double keep = cfg.sgd.dropout_keep;

  // Persistent chains start at randomly drawn training documents with
  // uniform random hidden states.
  DbmChains chains;
  chains.states.resize(static_cast<std::size_t>(cfg.chains));
  {
    Rng chain_rng(ebtm::detail::train_stream(cfg.sgd.seed, 4, 0));
    for (DbmChain& chain : chains.states) {
      chain.v = corpus[chain_rng.below(n)];
      chain.h1.resize(params.hidden1());
      for (Eigen::Index j = 0; j < chain.h1.size(); ++j) {
        chain.h1[j] = chain_rng.bernoulli(0.5) ? 1.0 : 0.0;
      }
      chain.h2.resize(params.hidden2());
      for (Eigen::Index j = 0; j < chain.h2.size(); ++j) {
        chain.h2[j] = chain_rng.bernoulli(0.5) ? 1.0 : 0.0;
      }
    }
  }

  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  detail::DbmGradient velocity = detail::DbmGradient::zero(params);

  for (int epoch = 0; epoch < cfg.sgd.epochs; ++epoch) {
    Rng shuffle_rng(ebtm::detail::train_stream(cfg.sgd.seed, 2, static_cast<std::uint64_t>(epoch)));
    for (std::size_t i = n; i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(shuffle_rng.below(i));
      std::swap(order[i - 1], order[j]);
    }
    const double mu = epoch < cfg.sgd.momentum_switch_epoch ? cfg.sgd.initial_momentum
                                                            : cfg.sgd.momentum;
    double epoch_elbo = 0.0;

    const std::size_t batch_size = static_cast<std::size_t>(cfg.sgd.batch_size);
    const std::size_t batches = (n + batch_size - 1) / batch_size;
    for (std::size_t batch = 0; batch < batches; ++batch) {
      const std::size_t begin = batch * batch_size;
      const std::size_t end = std::min(n, begin + batch_size);
      const std::size_t batch_docs = end - begin;
      const std::uint64_t round_seed = ebtm::detail::train_stream(
          cfg.sgd.seed, 3, static_cast<std::uint64_t>(epoch) * 0x100000ULL + batch);
      const std::uint64_t pos_seed = derive_seed(round_seed, 0);
      const std::uint64_t neg_seed = derive_seed(round_seed, 1);

      // Positive phase: mean-field per document, statistics under the dropout
      // masks; the logged elbo is the unmasked monitoring quantity.
      const std::size_t pos_blocks = num_parallel_blocks(batch_docs, ebtm::detail::kGradientBlock);
      std::vector<detail::DbmGradient> pos(pos_blocks, detail::DbmGradient::zero(params));
      std::vector<double> pos_elbo(pos_blocks, 0.0);
      parallel_blocks(batch_docs, ebtm::detail::kGradientBlock, cfg.sgd.threads,
                      [&](std::size_t bi, std::size_t lo, std::size_t hi) {
                        for (std::size_t i = lo; i < hi; ++i) {
                          const CountVector& doc = corpus[order[begin + i]];
                          MeanFieldState state = mean_field(doc, params, cfg.mean_field);
                          pos_elbo[bi] += elbo(doc, state, params);
                          Vector mu1 = state.mu1;
                          Vector mu2 = state.mu2;
                          if (keep < 1.0) {
                            Rng mask_rng(derive_seed(pos_seed, i));
                            for (Eigen::Index j = 0; j < mu1.size(); ++j) {
                              if (!mask_rng.bernoulli(keep)) mu1[j] = 0.0;
                            }
                            for (Eigen::Index j = 0; j < mu2.size(); ++j) {
                              if (!mask_rng.bernoulli(keep)) mu2[j] = 0.0;
                            }
                          }
                          for (const auto& [idx, count] : doc.items) {
                            pos[bi].W1.row(idx) += static_cast<double>(count) * mu1.transpose();
                            pos[bi].a[idx] += static_cast<double>(count);
                          }
                          pos[bi].W2 += mu1 * mu2.transpose();
                          pos[bi].b1 += static_cast<double>(doc.total) * mu1;
                          pos[bi].b2 += mu2;
                        }
                      });
      detail::DbmGradient grad = detail::DbmGradient::zero(params);
      for (std::size_t bi = 0; bi < pos_blocks; ++bi) {
        grad.add(pos[bi]);
        epoch_elbo += pos_elbo[bi];
      }
      grad.scale(1.0 / static_cast<double>(batch_docs));

      // Negative phase: advance every persistent chain one Gibbs update under
      // fresh dropout masks, then subtract the chain statistics.
      const std::size_t chain_count = chains.states.size();
      const std::size_t neg_blocks = num_parallel_blocks(chain_count, detail::kChainBlock);
      std::vector<detail::DbmGradient> neg(neg_blocks, detail::DbmGradient::zero(params));
      parallel_blocks(chain_count, detail::kChainBlock, cfg.sgd.threads,
                      [&](std::size_t bi, std::size_t lo, std::size_t hi) {
                        for (std::size_t c = lo; c < hi; ++c) {
                          DbmChain& chain = chains.states[c];
                          Rng chain_rng(derive_seed(neg_seed, c));
                          detail::gibbs_step_chain(chain, params, keep, chain_rng);
                          for (const auto& [idx, count] : chain.v.items) {
                            neg[bi].W1.row(idx) +=
                                static_cast<double>(count) * chain.h1.transpose();
                            neg[bi].a[idx] += static_cast<double>(count);
                          }
                          neg[bi].W2 += chain.h1 * chain.h2.transpose();
                          neg[bi].b1 += static_cast<double>(chain.v.total) * chain.h1;
                          neg[bi].b2 += chain.h2;
                        }
                      });
      ++chains.step_count;
      detail::DbmGradient model = detail::DbmGradient::zero(params);
      for (std::size_t bi = 0; bi < neg_blocks; ++bi) model.add(neg[bi]);
      model.scale(1.0 / static_cast<double>(chain_count));
      grad.W1 -= model.W1;
      grad.W2 -= model.W2;
      grad.a -= model.a;
      grad.b1 -= model.b1;
      grad.b2 -= model.b2;

      const double lr = cfg.sgd.learning_rate;
      const double wd = cfg.sgd.weight_decay;
      velocity.W1 = mu * velocity.W1 + lr * (grad.W1 - wd * params.W1);
      velocity.W2 = mu * velocity.W2 + lr * (grad.W2 - wd * params.W2);
      velocity.a = mu * velocity.a + lr * grad.a;
      velocity.b1 = mu * velocity.b1 + lr * grad.b1;
      velocity.b2 = mu * velocity.b2 + lr * grad.b2;
      params.W1 += velocity.W1;
      params.W2 += velocity.W2;
      params.a += velocity.a;
      params.b1 += velocity.b1;
      params.b2 += velocity.b2;
      if (!params.W1.allFinite() || !params.W2.allFinite() || !params.a.allFinite() ||
          !params.b1.allFinite() || !params.b2.allFinite()) {
        throw ValidationError("dbm::train: non-finite parameter at epoch " +
                              std::to_string(epoch) + ", batch " + std::to_string(batch) +
                              " (reduce learning_rate or enable weight_decay)");
      }
    }
    if (log) log->epochs.push_back({epoch, epoch_elbo / static_cast<double>(n)});
  }
  // Inference-time compensation for dropout: h1 feeds W1' and W2', and h2
  // feeds W2 on a path already thinned at h1, hence the squared factor.
  if (keep < 1.0) {
    params.W1 *= keep;
    params.W2 *= keep * keep;
  }
  return params;
}

struct PretrainResult {
  DbmParams params;
  rsm::RsmParams stage1;
  rbm::RbmParams stage2;  // empty model when hidden2 == 0
  bool has_stage2 = false;
};

/// Greedy layerwise pretraining. Stage 1 trains a replicated softmax whose
/// hidden conditional doubles its input, logistic(2(W1'u + M b1)), while the
/// visible softmax stays single. Stage 2 trains a binary RBM on one sampled
/// hidden vector per document, with its visible conditional doubled,
/// logistic(2 W2 h2 + c). Weights are copied into the DBM undoubled; the
/// stage-2 visible bias c is dropped in favour of the stage-1 hidden bias.
inline PretrainResult pretrain(const std::vector<CountVector>& docs, Eigen::Index vocab, int f1,
                               int f2, const TrainConfig& cfg, TrainLog* stage1_log = nullptr,
                               TrainLog* stage2_log = nullptr) {
  cfg.validate();
  require(!docs.empty(), "dbm::pretrain: corpus is empty");
  require(f1 >= 1, "dbm::pretrain: hidden1 must be >= 1");
  require(f2 >= 0, "dbm::pretrain: hidden2 must be >= 0");

  PretrainResult result;
  TrainConfig stage1_cfg = cfg;
  stage1_cfg.seed = derive_seed(cfg.seed, 11);
  rsm::RsmTrainPolicy stage1_policy;
  stage1_policy.hidden = f1;
  stage1_policy.vocab = vocab;
  stage1_policy.up_scale = f2 > 0 ? 2.0 : 1.0;
  result.stage1 = sgd_train(docs, stage1_cfg, stage1_policy, stage1_log);

  result.params.W1 = result.stage1.W;
  result.params.a = result.stage1.a;
  result.params.b1 = result.stage1.b;

  if (f2 > 0) {
    const std::uint64_t sample_seed = derive_seed(cfg.seed, 12);
    std::vector<Vector> hidden_data(docs.size());
    for (std::size_t i = 0; i < docs.size(); ++i) {
      Rng doc_rng(derive_seed(sample_seed, i));
      const Vector ph = rsm::hidden_conditional(docs[i], result.stage1, 2.0);
      hidden_data[i].resize(f1);
      for (Eigen::Index j = 0; j < f1; ++j) {
        hidden_data[i][j] = doc_rng.bernoulli(ph[j]) ? 1.0 : 0.0;
      }
    }
    TrainConfig stage2_cfg = cfg;
    stage2_cfg.seed = derive_seed(cfg.seed, 13);
    rbm::RbmTrainPolicy stage2_policy;
    stage2_policy.hidden = f2;
    stage2_policy.down_scale = 2.0;
    result.stage2 = sgd_train(hidden_data, stage2_cfg, stage2_policy, stage2_log);
    result.has_stage2 = true;
    result.params.W2 = result.stage2.W;
    result.params.b2 = result.stage2.b;
  } else {
    result.params.W2 = MatrixRM::Zero(f1, 0);
    result.params.b2 = Vector::Zero(0);
  }
  result.params.validate();
  return result;
}

}  // namespace ebtm::dbm
