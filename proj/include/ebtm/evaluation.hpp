#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ebtm/ais.hpp"
#include "ebtm/corpus.hpp"
#include "ebtm/errors.hpp"
#include "ebtm/math.hpp"
#include "ebtm/rbm.hpp"
#include "ebtm/rng.hpp"
#include "ebtm/rsm.hpp"
#include "ebtm/trainer.hpp"

namespace ebtm::evaluation {

using corpus::CountVector;

struct EvalOptions {
  AisConfig ais;
  // Exact enumeration is used instead of AIS whenever the relevant layer is
  // at most this many units.
  int exact_limit = 16;
};

struct HeldoutResult {
  std::vector<double> per_doc;
  double mean = 0.0;
  std::string method;  // "exact" or "ais"
  double max_ais_se = 0.0;
  std::size_t cache_hits = 0;
};

/// Sequence-level held-out log-likelihood of count documents under an RSM:
/// log p(u) = -free_energy(u) - log Z(M). Z is enumerated exactly when the
/// hidden layer is small enough, otherwise estimated by AIS once per distinct
/// document length.
inline HeldoutResult heldout_log_likelihood(const rsm::RsmParams& p,
                                            const std::vector<CountVector>& docs,
                                            const EvalOptions& options) {
  p.validate();
  require(!docs.empty(), "heldout_log_likelihood: no documents");
  HeldoutResult result;
  result.per_doc.resize(docs.size());

  std::map<std::int64_t, double> log_z;
  if (p.hidden() <= options.exact_limit) {
    result.method = "exact";
    for (const CountVector& doc : docs) {
      if (!log_z.contains(doc.total)) log_z[doc.total] = rsm::exact_log_z(p, doc.total);
    }
  } else {
    result.method = "ais";
    RsmLogZCache cache;
    for (const CountVector& doc : docs) {
      const AisEstimate& est = cache.get(p, doc.total, options.ais);
      log_z[doc.total] = est.log_z;
      result.max_ais_se = std::max(result.max_ais_se, est.standard_error);
    }
    result.cache_hits = cache.hits();
  }
  for (std::size_t i = 0; i < docs.size(); ++i) {
    result.per_doc[i] = -rsm::free_energy(docs[i], p) - log_z.at(docs[i].total);
    result.mean += result.per_doc[i];
  }
  result.mean /= static_cast<double>(docs.size());
  return result;
}

/// Held-out log-likelihood of binary vectors under an RBM. `ais_base_bias`
/// seeds the AIS base model (base-rate biases from training data); pass null
/// for the all-zero base.
inline HeldoutResult heldout_log_likelihood(const rbm::RbmParams& p,
                                            const std::vector<Vector>& docs,
                                            const EvalOptions& options,
                                            const Vector* ais_base_bias = nullptr) {
  p.validate();
  require(!docs.empty(), "heldout_log_likelihood: no documents");
  HeldoutResult result;
  result.per_doc.resize(docs.size());
  double log_z = 0.0;
  if (std::min(p.visible(), p.hidden()) <= options.exact_limit) {
    result.method = "exact";
    log_z = rbm::exact_log_z(p);
  } else {
    result.method = "ais";
    const AisEstimate est = ais_log_z_rbm(p, options.ais, ais_base_bias);
    log_z = est.log_z;
    result.max_ais_se = est.standard_error;
  }
  for (std::size_t i = 0; i < docs.size(); ++i) {
    result.per_doc[i] = -rbm::free_energy(docs[i], p) - log_z;
    result.mean += result.per_doc[i];
  }
  result.mean /= static_cast<double>(docs.size());
  return result;
}

/// exp(-sum(log p) / sum(M)): exponentiated negative per-word log-likelihood.
inline double perplexity(std::span<const double> per_doc_loglik,
                         std::span<const std::int64_t> doc_lengths) {
  require(per_doc_loglik.size() == doc_lengths.size(),
          "perplexity: per-document values and lengths differ in size");
  require(!per_doc_loglik.empty(), "perplexity: no documents");
  double total_ll = 0.0;
  double total_words = 0.0;
  for (std::size_t i = 0; i < per_doc_loglik.size(); ++i) {
    require(doc_lengths[i] >= 0, "perplexity: negative document length");
    total_ll += per_doc_loglik[i];
    total_words += static_cast<double>(doc_lengths[i]);
  }
  require(total_words > 0.0, "perplexity: total word count is zero");
  return std::exp(-total_ll / total_words);
}

struct CandidateScore {
  int hidden_size = 0;
  double mean_loglik = 0.0;
  double ais_se = 0.0;
};

struct LayerReport {
  int layer = 0;  // 1 = bottom RSM, 2 = top RBM
  std::vector<CandidateScore> candidates;
  int chosen_size = 0;
};

struct ModelSelectionReport {
  std::vector<LayerReport> layers;
};

namespace detail {

inline int pick_best(const std::vector<CandidateScore>& scores) {
  int best_size = scores.front().hidden_size;
  double best_ll = scores.front().mean_loglik;
  for (const CandidateScore& s : scores) {
    if (s.mean_loglik > best_ll ||
        (s.mean_loglik == best_ll && s.hidden_size < best_size)) {
      best_ll = s.mean_loglik;
      best_size = s.hidden_size;
    }
  }
  return best_size;
}

}  // namespace detail

/// Greedy layer-by-layer architecture selection. Layer 1 trains one RSM per
/// candidate size and scores mean validation log-likelihood; the winner's
/// hidden probabilities, binarized by seeded sampling, become the data for the
/// layer-2 binary RBM candidates. Ties go to the smaller size.
inline ModelSelectionReport select_architecture(const std::vector<CountVector>& train,
                                                const std::vector<CountVector>& validation,
                                                Eigen::Index vocab,
                                                const std::vector<int>& candidate_sizes,
                                                const TrainConfig& train_cfg,
                                                const EvalOptions& eval_options) {
  require(!candidate_sizes.empty(), "select_architecture: no candidate sizes");
  require(!train.empty(), "select_architecture: empty training set");
  require(!validation.empty(), "select_architecture: empty validation set");
  for (int size : candidate_sizes) {
    require(size >= 1, "select_architecture: candidate sizes must be >= 1");
  }

  ModelSelectionReport report;
  LayerReport layer1;
  layer1.layer = 1;
  std::map<int, rsm::RsmParams> layer1_models;
  for (std::size_t i = 0; i < candidate_sizes.size(); ++i) {
    TrainConfig cfg = train_cfg;
    cfg.seed = derive_seed(train_cfg.seed, 0x100 + i);
    rsm::RsmParams params = rsm::train(train, vocab, candidate_sizes[i], cfg);
    const HeldoutResult score = heldout_log_likelihood(params, validation, eval_options);
    layer1.candidates.push_back({candidate_sizes[i], score.mean, score.max_ais_se});
    layer1_models.emplace(candidate_sizes[i], std::move(params));
  }
  layer1.chosen_size = detail::pick_best(layer1.candidates);
  report.layers.push_back(layer1);

  const rsm::RsmParams& winner = layer1_models.at(layer1.chosen_size);
  const std::uint64_t binarize_seed = derive_seed(train_cfg.seed, 0x200);
  auto transform = [&](const std::vector<CountVector>& docs, std::size_t index_offset) {
    std::vector<Vector> out(docs.size());
    for (std::size_t i = 0; i < docs.size(); ++i) {
      Rng rng(derive_seed(binarize_seed, index_offset + i));
      const Vector ph = rsm::hidden_conditional(docs[i], winner);
      out[i].resize(ph.size());
      for (Eigen::Index j = 0; j < ph.size(); ++j) {
        out[i][j] = rng.bernoulli(ph[j]) ? 1.0 : 0.0;
      }
    }
    return out;
  };
  const std::vector<Vector> binary_train = transform(train, 0);
  const std::vector<Vector> binary_validation = transform(validation, train.size());
  const Vector base_bias = ais_base_rate_bias(binary_train);

  LayerReport layer2;
  layer2.layer = 2;
  for (std::size_t i = 0; i < candidate_sizes.size(); ++i) {
    TrainConfig cfg = train_cfg;
    cfg.seed = derive_seed(train_cfg.seed, 0x300 + i);
    const rbm::RbmParams params = rbm::train(binary_train, candidate_sizes[i], cfg);
    const HeldoutResult score =
        heldout_log_likelihood(params, binary_validation, eval_options, &base_bias);
    layer2.candidates.push_back({candidate_sizes[i], score.mean, score.max_ais_se});
  }
  layer2.chosen_size = detail::pick_best(layer2.candidates);
  report.layers.push_back(layer2);
  return report;
}

}  // namespace ebtm::evaluation
