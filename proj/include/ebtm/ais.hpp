#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <map>
#include <tuple>
#include <utility>
#include <vector>

#include "ebtm/digest.hpp"
#include "ebtm/errors.hpp"
#include "ebtm/math.hpp"
#include "ebtm/parallel.hpp"
#include "ebtm/rbm.hpp"
#include "ebtm/rng.hpp"
#include "ebtm/rsm.hpp"

namespace ebtm::evaluation {

struct AisConfig {
  int num_temperatures = 5000;
  int num_runs = 500;
  std::vector<double> schedule;  // empty: uniform spacing over [0,1]
  std::uint64_t seed = 0;
  int threads = 1;
  bool zero_base = false;  // RBM path: force the all-zero base model

  /// Validates and returns the inverse-temperature ladder.
  std::vector<double> resolved_schedule() const {
    require(num_runs >= 2, "AisConfig: num_runs must be >= 2");
    std::vector<double> betas = schedule;
    if (betas.empty()) {
      require(num_temperatures >= 2, "AisConfig: num_temperatures must be >= 2");
      betas.resize(static_cast<std::size_t>(num_temperatures));
      for (int i = 0; i < num_temperatures; ++i) {
        betas[static_cast<std::size_t>(i)] =
            static_cast<double>(i) / static_cast<double>(num_temperatures - 1);
      }
      betas.back() = 1.0;
    }
    require(betas.size() >= 2, "AisConfig: schedule needs at least two temperatures");
    require(betas.front() == 0.0, "AisConfig: schedule must start at 0");
    require(betas.back() == 1.0, "AisConfig: schedule must end at 1");
    for (std::size_t i = 1; i < betas.size(); ++i) {
      require(betas[i] > betas[i - 1], "AisConfig: schedule must be strictly increasing");
    }
    return betas;
  }
};

struct AisEstimate {
  double log_z = 0.0;
  std::vector<double> log_weights;
  double standard_error = 0.0;
  double base_log_z = 0.0;
};

namespace detail {

// log_z = base + log-mean-exp(weights); the standard error of the
// log-mean-exp comes from the delta method on the shifted weights.
inline void finalize_estimate(AisEstimate& est) {
  const std::size_t n = est.log_weights.size();
  est.log_z = est.base_log_z +
              log_mean_exp(std::span<const double>(est.log_weights.data(), n));
  double max_w = est.log_weights[0];
  for (double w : est.log_weights) max_w = std::max(max_w, w);
  double mean = 0.0;
  for (double w : est.log_weights) mean += std::exp(w - max_w);
  mean /= static_cast<double>(n);
  double var = 0.0;
  for (double w : est.log_weights) {
    const double d = std::exp(w - max_w) - mean;
    var += d * d;
  }
  var /= static_cast<double>(n - 1);
  est.standard_error = std::sqrt(var / static_cast<double>(n)) / mean;
}

}  // namespace detail

/// Smoothed empirical log-odds of per-unit training marginals, the standard
/// base-rate visible bias for the AIS base model.
inline Vector ais_base_rate_bias(const std::vector<Vector>& train_docs) {
  require(!train_docs.empty(), "ais_base_rate_bias: empty corpus");
  const Eigen::Index d = train_docs.front().size();
  Vector counts = Vector::Zero(d);
  for (const Vector& v : train_docs) {
    require(v.size() == d, "ais_base_rate_bias: inconsistent dimensions");
    counts += v;
  }
  Vector bias(d);
  const double n = static_cast<double>(train_docs.size());
  for (Eigen::Index i = 0; i < d; ++i) {
    const double p = (counts[i] + 1.0) / (n + 2.0);
    bias[i] = std::log(p) - std::log(1.0 - p);
  }
  return bias;
}

/// AIS estimate of log Z for a binary RBM. The base model has W=0, b=0 and
/// visible biases `base_visible_bias` (all zero when null or when
/// config.zero_base is set), so base_log_z is analytic. Intermediate
/// distributions interpolate the energy linearly in beta; the log weight is
/// accumulated in a differenced form that is exactly zero when the target
/// equals the base. Runs are independent with per-run derived seeds, so the
/// result does not depend on the thread count.
inline AisEstimate ais_log_z_rbm(const rbm::RbmParams& p, const AisConfig& config,
                                 const Vector* base_visible_bias = nullptr) {
  p.validate();
  const std::vector<double> betas = config.resolved_schedule();
  const Eigen::Index d = p.visible();
  const Eigen::Index f = p.hidden();
  Vector base_a = Vector::Zero(d);
  if (base_visible_bias != nullptr && !config.zero_base) {
    require(base_visible_bias->size() == d, "ais_log_z_rbm: base bias dimension mismatch");
    base_a = *base_visible_bias;
  }

  AisEstimate est;
  est.base_log_z = static_cast<double>(f) * std::log(2.0);
  for (Eigen::Index i = 0; i < d; ++i) est.base_log_z += softplus(base_a[i]);
  est.log_weights.resize(static_cast<std::size_t>(config.num_runs));

  parallel_blocks(
      est.log_weights.size(), 1, config.threads, [&](std::size_t, std::size_t lo, std::size_t hi) {
        for (std::size_t run = lo; run < hi; ++run) {
          Rng rng(derive_seed(config.seed, run));
          Vector v(d);
          for (Eigen::Index i = 0; i < d; ++i) {
            v[i] = rng.bernoulli(logistic(base_a[i])) ? 1.0 : 0.0;
          }
          double log_w = 0.0;
          Vector h(f);
          for (std::size_t k = 1; k < betas.size(); ++k) {
            const double beta_prev = betas[k - 1];
            const double beta = betas[k];
            const Vector c = p.W.transpose() * v + p.b;
            log_w += (beta - beta_prev) * (p.a.dot(v) - base_a.dot(v));
            for (Eigen::Index j = 0; j < f; ++j) {
              log_w += softplus(beta * c[j]) - softplus(beta_prev * c[j]);
            }
            if (k + 1 < betas.size()) {
              for (Eigen::Index j = 0; j < f; ++j) {
                h[j] = rng.bernoulli(logistic(beta * c[j])) ? 1.0 : 0.0;
              }
              const Vector wh = p.W * h;
              for (Eigen::Index i = 0; i < d; ++i) {
                const double logit = beta * wh[i] + (1.0 - beta) * base_a[i] + beta * p.a[i];
                v[i] = rng.bernoulli(logistic(logit)) ? 1.0 : 0.0;
              }
            }
          }
          est.log_weights[run] = log_w;
        }
      });
  detail::finalize_estimate(est);
  return est;
}

/// AIS estimate of log Z(M) for a replicated softmax. The base model has all
/// parameters zero, uniform over length-M word sequences, with
/// base_log_z = F log 2 + M log D.
inline AisEstimate ais_log_z_rsm(const rsm::RsmParams& p, std::int64_t m,
                                 const AisConfig& config) {
  p.validate();
  require(m >= 1, "ais_log_z_rsm: document length must be >= 1");
  const std::vector<double> betas = config.resolved_schedule();
  const Eigen::Index d = p.vocab();
  const Eigen::Index f = p.hidden();

  AisEstimate est;
  est.base_log_z = static_cast<double>(f) * std::log(2.0) +
                   static_cast<double>(m) * std::log(static_cast<double>(d));
  est.log_weights.resize(static_cast<std::size_t>(config.num_runs));

  parallel_blocks(
      est.log_weights.size(), 1, config.threads, [&](std::size_t, std::size_t lo, std::size_t hi) {
        for (std::size_t run = lo; run < hi; ++run) {
          Rng rng(derive_seed(config.seed, run));
          std::map<std::int32_t, std::int64_t> counts;
          for (std::int64_t w = 0; w < m; ++w) {
            ++counts[static_cast<std::int32_t>(rng.below(static_cast<std::uint64_t>(d)))];
          }
          corpus::CountVector v;
          v.items.reserve(counts.size());
          for (const auto& [idx, count] : counts) {
            v.items.emplace_back(idx, static_cast<std::int32_t>(count));
          }
          v.total = m;

          double log_w = 0.0;
          Vector h(f);
          for (std::size_t k = 1; k < betas.size(); ++k) {
            const double beta_prev = betas[k - 1];
            const double beta = betas[k];
            Vector c = static_cast<double>(m) * p.b;
            double a_dot_v = 0.0;
            for (const auto& [idx, count] : v.items) {
              c.noalias() += static_cast<double>(count) * p.W.row(idx).transpose();
              a_dot_v += static_cast<double>(count) * p.a[idx];
            }
            log_w += (beta - beta_prev) * a_dot_v;
            for (Eigen::Index j = 0; j < f; ++j) {
              log_w += softplus(beta * c[j]) - softplus(beta_prev * c[j]);
            }
            if (k + 1 < betas.size()) {
              for (Eigen::Index j = 0; j < f; ++j) {
                h[j] = rng.bernoulli(logistic(beta * c[j])) ? 1.0 : 0.0;
              }
              const Vector word_probs = softmax(Vector(beta * (p.W * h + p.a)));
              v = rsm::sample_counts(word_probs, m, rng);
            }
          }
          est.log_weights[run] = log_w;
        }
      });
  detail::finalize_estimate(est);
  return est;
}

/// Cache of RSM AIS estimates keyed by (parameter hash, document length,
/// config hash), so a validation set with repeated lengths costs one AIS
/// ladder per distinct length.
class RsmLogZCache {
 public:
  const AisEstimate& get(const rsm::RsmParams& p, std::int64_t m, const AisConfig& config) {
    const Key key{params_hash(p), m, config_hash(config)};
    auto it = cache_.find(key);
    if (it != cache_.end()) {
      ++hits_;
      return it->second;
    }
    return cache_.emplace(key, ais_log_z_rsm(p, m, config)).first->second;
  }

  std::size_t hits() const { return hits_; }
  std::size_t entries() const { return cache_.size(); }

 private:
  using Key = std::tuple<std::uint64_t, std::int64_t, std::uint64_t>;

  static std::uint64_t params_hash(const rsm::RsmParams& p) {
    Fnv1a64 h;
    const std::int64_t dims[2] = {p.vocab(), p.hidden()};
    h.update(dims, sizeof(dims));
    h.update(p.W.data(), sizeof(double) * static_cast<std::size_t>(p.W.size()));
    h.update(p.a.data(), sizeof(double) * static_cast<std::size_t>(p.a.size()));
    h.update(p.b.data(), sizeof(double) * static_cast<std::size_t>(p.b.size()));
    return h.value();
  }

  static std::uint64_t config_hash(const AisConfig& config) {
    Fnv1a64 h;
    const std::int64_t ints[3] = {config.num_temperatures, config.num_runs,
                                  static_cast<std::int64_t>(config.seed)};
    h.update(ints, sizeof(ints));
    if (!config.schedule.empty()) {
      h.update(config.schedule.data(), sizeof(double) * config.schedule.size());
    }
    return h.value();
  }

  std::map<Key, AisEstimate> cache_;
  std::size_t hits_ = 0;
};

}  // namespace ebtm::evaluation
