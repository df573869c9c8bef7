#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "ebtm/errors.hpp"
#include "ebtm/math.hpp"
#include "ebtm/parallel.hpp"
#include "ebtm/rng.hpp"

namespace ebtm {

/// Optimizer and sampling settings for contrastive-divergence training.
/// Momentum follows the usual two-phase schedule: `initial_momentum` for the
/// first `momentum_switch_epoch` epochs, `momentum` afterwards. Weight decay
/// applies to the weight matrix only.
struct TrainConfig {
  double learning_rate = 0.05;
  double momentum = 0.9;
  double initial_momentum = 0.5;
  int momentum_switch_epoch = 5;
  double weight_decay = 1e-4;
  int cd_steps = 1;
  int batch_size = 100;
  int epochs = 30;
  std::uint64_t seed = 0;
  double dropout_keep = 0.9;
  int threads = 1;

  void validate() const {
    require(learning_rate >= 0.0, "TrainConfig: learning_rate must be >= 0");
    require(momentum >= 0.0 && momentum < 1.0, "TrainConfig: momentum must be in [0,1)");
    require(initial_momentum >= 0.0 && initial_momentum < 1.0,
            "TrainConfig: initial_momentum must be in [0,1)");
    require(weight_decay >= 0.0, "TrainConfig: weight_decay must be >= 0");
    require(cd_steps >= 1, "TrainConfig: cd_steps must be >= 1");
    require(batch_size >= 1, "TrainConfig: batch_size must be >= 1");
    require(epochs >= 1, "TrainConfig: epochs must be >= 1");
    require(dropout_keep > 0.0 && dropout_keep <= 1.0,
            "TrainConfig: dropout_keep must be in (0,1]");
    require(threads >= 1, "TrainConfig: threads must be >= 1");
  }
};

struct EpochStats {
  int epoch = 0;
  double reconstruction_cross_entropy = 0.0;
};

struct TrainLog {
  std::vector<EpochStats> epochs;
};

/// Gradient triple shared by the single-weight-matrix models, in the ascent
/// convention: the optimizer adds it.
struct Gradient {
  MatrixRM W;
  Vector a;
  Vector b;

  static Gradient zero(Eigen::Index d, Eigen::Index f) {
    Gradient g;
    g.W = MatrixRM::Zero(d, f);
    g.a = Vector::Zero(d);
    g.b = Vector::Zero(f);
    return g;
  }
  void add(const Gradient& other) {
    W += other.W;
    a += other.a;
    b += other.b;
  }
  void scale(double s) {
    W *= s;
    a *= s;
    b *= s;
  }
};

namespace detail {

// Fixed block size for batch-parallel gradient accumulation. The block
// decomposition is independent of the thread count, so seeded runs reduce in
// the same order and stay bit-identical at any --threads value.
inline constexpr std::size_t kGradientBlock = 16;

inline std::uint64_t train_stream(std::uint64_t seed, std::uint64_t tag, std::uint64_t index) {
  return derive_seed(derive_seed(seed, tag), index);
}

}  // namespace detail

/// Minibatch SGD with momentum for CD-trained models.
///
/// Policy requirements:
///   using Doc = ...;
///   Params init(const std::vector<Doc>&, Rng&) const;
///   struct BlockStats { Gradient grad; double recon_ce; };  // or equivalent
///   void accumulate_cd(const Params&, std::span<const Doc* const>,
///                      std::uint64_t doc_seed_base, std::size_t first_doc_index,
///                      int k, double dropout_keep, Gradient&, double& recon_ce) const;
///   void finish(Params&, double dropout_keep) const;  // inference-time scaling
template <class Policy>
typename Policy::Params sgd_train(const std::vector<typename Policy::Doc>& corpus,
                                  const TrainConfig& cfg, const Policy& policy,
                                  TrainLog* log = nullptr) {
  cfg.validate();
  require(!corpus.empty(), "train: corpus is empty");
  Rng init_rng(detail::train_stream(cfg.seed, 1, 0));
  typename Policy::Params params = policy.init(corpus, init_rng);

  const std::size_t n = corpus.size();
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;

  Gradient velocity = Gradient::zero(params.W.rows(), params.W.cols());

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng shuffle_rng(detail::train_stream(cfg.seed, 2, static_cast<std::uint64_t>(epoch)));
    for (std::size_t i = n; i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(shuffle_rng.below(i));
      std::swap(order[i - 1], order[j]);
    }
    const double mu = epoch < cfg.momentum_switch_epoch ? cfg.initial_momentum : cfg.momentum;
    double epoch_ce = 0.0;

    const std::size_t batch_size = static_cast<std::size_t>(cfg.batch_size);
    const std::size_t batches = (n + batch_size - 1) / batch_size;
    for (std::size_t batch = 0; batch < batches; ++batch) {
      const std::size_t begin = batch * batch_size;
      const std::size_t end = std::min(n, begin + batch_size);
      std::vector<const typename Policy::Doc*> docs(end - begin);
      for (std::size_t i = begin; i < end; ++i) docs[i - begin] = &corpus[order[i]];

      const std::uint64_t round_seed =
          detail::train_stream(cfg.seed, 3, static_cast<std::uint64_t>(epoch) * 0x100000ULL + batch);
      const std::size_t num_blocks = num_parallel_blocks(docs.size(), detail::kGradientBlock);
      std::vector<Gradient> partial(num_blocks, Gradient::zero(params.W.rows(), params.W.cols()));
      std::vector<double> partial_ce(num_blocks, 0.0);
      parallel_blocks(docs.size(), detail::kGradientBlock, cfg.threads,
                      [&](std::size_t bi, std::size_t lo, std::size_t hi) {
                        policy.accumulate_cd(params,
                                             std::span<const typename Policy::Doc* const>(
                                                 docs.data() + lo, hi - lo),
                                             round_seed, lo, cfg.cd_steps, cfg.dropout_keep,
                                             partial[bi], partial_ce[bi]);
                      });
      Gradient grad = Gradient::zero(params.W.rows(), params.W.cols());
      for (std::size_t bi = 0; bi < num_blocks; ++bi) {
        grad.add(partial[bi]);
        epoch_ce += partial_ce[bi];
      }
      grad.scale(1.0 / static_cast<double>(docs.size()));

      velocity.W = mu * velocity.W + cfg.learning_rate * (grad.W - cfg.weight_decay * params.W);
      velocity.a = mu * velocity.a + cfg.learning_rate * grad.a;
      velocity.b = mu * velocity.b + cfg.learning_rate * grad.b;
      params.W += velocity.W;
      params.a += velocity.a;
      params.b += velocity.b;
      if (!params.W.allFinite() || !params.a.allFinite() || !params.b.allFinite()) {
        throw ValidationError("train: non-finite parameter at epoch " + std::to_string(epoch) +
                              ", batch " + std::to_string(batch) +
                              " (reduce learning_rate or enable weight_decay)");
      }
    }
    if (log) log->epochs.push_back({epoch, epoch_ce / static_cast<double>(n)});
  }
  policy.finish(params, cfg.dropout_keep);
  return params;
}

}  // namespace ebtm
