#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdint>
#include <vector>

#include "ebtm/evaluation.hpp"
#include "support/oracles.hpp"
#include "support/synthetic.hpp"

using ebtm::Rng;
using ebtm::Vector;
using ebtm::corpus::CountVector;
namespace evaluation = ebtm::evaluation;
using evaluation::EvalOptions;
using evaluation::HeldoutResult;

namespace {

CountVector make_doc(const std::vector<int>& counts) {
  CountVector doc;
  for (std::size_t i = 0; i < counts.size(); ++i) {
    if (counts[i] > 0) {
      doc.items.emplace_back(static_cast<std::int32_t>(i), counts[i]);
      doc.total += counts[i];
    }
  }
  return doc;
}

double multinomial_coefficient(const std::vector<int>& counts) {
  auto factorial = [](int n) {
    double f = 1.0;
    for (int i = 2; i <= n; ++i) f *= i;
    return f;
  };
  int total = 0;
  double denom = 1.0;
  for (int c : counts) {
    total += c;
    denom *= factorial(c);
  }
  return factorial(total) / denom;
}

}  // namespace

TEST_CASE("a zero-parameter count model scores every document at -M log D") {
  ebtm::rsm::RsmParams p;
  p.W = ebtm::MatrixRM::Zero(4, 3);
  p.a = Vector::Zero(4);
  p.b = Vector::Zero(3);

  std::vector<CountVector> docs = {make_doc({2, 0, 0, 0}), make_doc({1, 2, 1, 1}),
                                   make_doc({0, 3, 0, 4})};
  const HeldoutResult result = evaluation::heldout_log_likelihood(p, docs, EvalOptions{});
  REQUIRE(result.method == "exact");
  CHECK(result.max_ais_se == 0.0);
  CHECK(result.cache_hits == 0);
  REQUIRE(result.per_doc.size() == 3);
  const double log_d = std::log(4.0);
  CHECK(result.per_doc[0] == Catch::Approx(-2.0 * log_d).margin(1e-12));
  CHECK(result.per_doc[1] == Catch::Approx(-5.0 * log_d).margin(1e-12));
  CHECK(result.per_doc[2] == Catch::Approx(-7.0 * log_d).margin(1e-12));
  const double mean = (result.per_doc[0] + result.per_doc[1] + result.per_doc[2]) / 3.0;
  CHECK(result.mean == Catch::Approx(mean).margin(1e-12));

  // Under the uniform model per-word perplexity is exactly the vocabulary size.
  const std::vector<std::int64_t> lengths = {2, 5, 7};
  CHECK(evaluation::perplexity(result.per_doc, lengths) == Catch::Approx(4.0).margin(1e-10));
}

TEST_CASE("document probabilities over a fixed length sum to one") {
  Rng rng(314);
  const ebtm::rsm::RsmParams p = synthetic::random_rsm(3, 2, 0.6, rng);
  const int m = 3;

  // Every histogram of m words over 3 symbols, remembering its multiplicity.
  std::vector<CountVector> docs;
  std::vector<double> orderings;
  for (int c0 = 0; c0 <= m; ++c0) {
    for (int c1 = 0; c1 + c0 <= m; ++c1) {
      const std::vector<int> counts = {c0, c1, m - c0 - c1};
      docs.push_back(make_doc(counts));
      orderings.push_back(multinomial_coefficient(counts));
    }
  }
  REQUIRE(docs.size() == 10);
  const HeldoutResult result = evaluation::heldout_log_likelihood(p, docs, EvalOptions{});
  REQUIRE(result.method == "exact");
  double total_probability = 0.0;
  for (std::size_t i = 0; i < docs.size(); ++i) {
    total_probability += orderings[i] * std::exp(result.per_doc[i]);
  }
  CHECK(total_probability == Catch::Approx(1.0).margin(1e-9));
}

TEST_CASE("binary vector probabilities enumerate to one") {
  Rng rng(99);
  const ebtm::rbm::RbmParams p = synthetic::random_rbm(4, 3, 0.7, rng);
  const std::vector<Vector> docs = oracle::all_bit_vectors(4);
  const HeldoutResult result = evaluation::heldout_log_likelihood(p, docs, EvalOptions{});
  REQUIRE(result.method == "exact");
  REQUIRE(result.per_doc.size() == 16);
  double total_probability = 0.0;
  for (double ll : result.per_doc) total_probability += std::exp(ll);
  CHECK(total_probability == Catch::Approx(1.0).margin(1e-9));

  // Spot-check one document against the enumerated joint.
  const double log_z = oracle::rbm_log_z_joint(p);
  const double expected = oracle::rbm_log_unnormalized(docs[5], p) - log_z;
  CHECK(result.per_doc[5] == Catch::Approx(expected).margin(1e-9));
}

TEST_CASE("the estimator switches from enumeration to sampling at the size limit") {
  Rng rng(17);
  const ebtm::rsm::RsmParams p = synthetic::random_rsm(5, 3, 0.4, rng);
  const std::vector<CountVector> docs = {make_doc({1, 1, 0, 0, 1}), make_doc({0, 2, 0, 1, 0})};

  EvalOptions exact;
  exact.exact_limit = 3;
  const HeldoutResult via_exact = evaluation::heldout_log_likelihood(p, docs, exact);
  CHECK(via_exact.method == "exact");
  CHECK(via_exact.max_ais_se == 0.0);

  EvalOptions sampled;
  sampled.exact_limit = 2;
  sampled.ais.num_temperatures = 300;
  sampled.ais.num_runs = 80;
  sampled.ais.seed = 4;
  const HeldoutResult via_ais = evaluation::heldout_log_likelihood(p, docs, sampled);
  CHECK(via_ais.method == "ais");
  CHECK(via_ais.max_ais_se > 0.0);
  for (std::size_t i = 0; i < docs.size(); ++i) {
    const double tolerance = std::max(0.25, 6.0 * via_ais.max_ais_se);
    CHECK(via_ais.per_doc[i] == Catch::Approx(via_exact.per_doc[i]).margin(tolerance));
  }

  // Binary overload: the limit applies to the smaller layer.
  const ebtm::rbm::RbmParams q = synthetic::random_rbm(20, 5, 0.3, rng);
  const std::vector<Vector> binary_docs = {synthetic::random_binary(20, rng),
                                           synthetic::random_binary(20, rng)};
  EvalOptions rbm_exact;
  rbm_exact.exact_limit = 5;
  CHECK(evaluation::heldout_log_likelihood(q, binary_docs, rbm_exact).method == "exact");
  EvalOptions rbm_sampled;
  rbm_sampled.exact_limit = 4;
  rbm_sampled.ais.num_temperatures = 300;
  rbm_sampled.ais.num_runs = 80;
  rbm_sampled.ais.seed = 21;
  const HeldoutResult rbm_via_ais =
      evaluation::heldout_log_likelihood(q, binary_docs, rbm_sampled);
  CHECK(rbm_via_ais.method == "ais");
  CHECK(rbm_via_ais.max_ais_se > 0.0);
  const HeldoutResult rbm_reference =
      evaluation::heldout_log_likelihood(q, binary_docs, rbm_exact);
  for (std::size_t i = 0; i < binary_docs.size(); ++i) {
    const double tolerance = std::max(0.25, 6.0 * rbm_via_ais.max_ais_se);
    CHECK(rbm_via_ais.per_doc[i] == Catch::Approx(rbm_reference.per_doc[i]).margin(tolerance));
  }
}

TEST_CASE("the sampled path estimates once per distinct document length") {
  Rng rng(55);
  const ebtm::rsm::RsmParams p = synthetic::random_rsm(6, 3, 0.3, rng);
  std::vector<CountVector> docs;
  for (int length : {2, 3, 2, 3, 2, 4}) {
    docs.push_back(synthetic::random_count_doc(6, length, rng));
  }

  EvalOptions options;
  options.exact_limit = 0;
  options.ais.num_temperatures = 200;
  options.ais.num_runs = 50;
  options.ais.seed = 8;
  const HeldoutResult result = evaluation::heldout_log_likelihood(p, docs, options);
  CHECK(result.method == "ais");
  // Six lookups over three distinct lengths: the last three reuse estimates.
  CHECK(result.cache_hits == 3);
  CHECK(result.max_ais_se > 0.0);

  // Same length means same partition function, so ll differences reduce to
  // the free-energy gap regardless of the sampled estimate.
  const double gap_sampled = result.per_doc[0] - result.per_doc[2];
  const double gap_exact = -ebtm::rsm::free_energy(docs[0], p) + ebtm::rsm::free_energy(docs[2], p);
  CHECK(gap_sampled == Catch::Approx(gap_exact).margin(1e-12));

  const HeldoutResult replay = evaluation::heldout_log_likelihood(p, docs, options);
  CHECK(replay.per_doc == result.per_doc);
}

TEST_CASE("perplexity matches hand-computed values and validates input") {
  const std::vector<double> loglik = {-2.0, -4.0};
  const std::vector<std::int64_t> lengths = {2, 4};
  CHECK(evaluation::perplexity(loglik, lengths) == Catch::Approx(std::exp(1.0)).margin(1e-12));

  const std::vector<double> uniform = {-3.0 * std::log(7.0)};
  const std::vector<std::int64_t> three = {3};
  CHECK(evaluation::perplexity(uniform, three) == Catch::Approx(7.0).margin(1e-10));

  const std::vector<double> one = {-1.0};
  const std::vector<std::int64_t> mismatched = {1, 2};
  CHECK_THROWS_AS(evaluation::perplexity(one, mismatched), ebtm::ValidationError);
  CHECK_THROWS_AS(evaluation::perplexity(std::vector<double>{}, std::vector<std::int64_t>{}),
                  ebtm::ValidationError);
  const std::vector<std::int64_t> negative = {-1};
  CHECK_THROWS_AS(evaluation::perplexity(one, negative), ebtm::ValidationError);
  const std::vector<std::int64_t> zero = {0};
  CHECK_THROWS_AS(evaluation::perplexity(one, zero), ebtm::ValidationError);
}

TEST_CASE("candidate ranking prefers higher likelihood then smaller size") {
  using evaluation::CandidateScore;
  const std::vector<CandidateScore> clear = {{5, -1.0, 0.0}, {2, -1.0, 0.0}, {9, -0.5, 0.0}};
  CHECK(evaluation::detail::pick_best(clear) == 9);

  const std::vector<CandidateScore> tied = {{5, -1.0, 0.0}, {2, -1.0, 0.0}};
  CHECK(evaluation::detail::pick_best(tied) == 2);
  const std::vector<CandidateScore> tied_reversed = {{2, -1.0, 0.0}, {5, -1.0, 0.0}};
  CHECK(evaluation::detail::pick_best(tied_reversed) == 2);

  const std::vector<CandidateScore> single = {{7, -3.0, 0.0}};
  CHECK(evaluation::detail::pick_best(single) == 7);
}

TEST_CASE("architecture selection reports both layers deterministically") {
  Rng data_rng(2024);
  const ebtm::rsm::RsmParams planted = synthetic::planted_rsm(8, 2, 1.5, 2024);
  std::vector<CountVector> train;
  std::vector<CountVector> validation;
  for (int i = 0; i < 40; ++i) train.push_back(synthetic::sample_rsm_doc(planted, 10, data_rng));
  for (int i = 0; i < 12; ++i) {
    validation.push_back(synthetic::sample_rsm_doc(planted, 10, data_rng));
  }

  ebtm::TrainConfig cfg;
  cfg.epochs = 3;
  cfg.batch_size = 10;
  cfg.seed = 9;
  const std::vector<int> candidates = {2, 3};
  const evaluation::ModelSelectionReport report =
      evaluation::select_architecture(train, validation, 8, candidates, cfg, EvalOptions{});

  REQUIRE(report.layers.size() == 2);
  CHECK(report.layers[0].layer == 1);
  CHECK(report.layers[1].layer == 2);
  for (const evaluation::LayerReport& layer : report.layers) {
    REQUIRE(layer.candidates.size() == 2);
    CHECK(layer.candidates[0].hidden_size == 2);
    CHECK(layer.candidates[1].hidden_size == 3);
    for (const evaluation::CandidateScore& score : layer.candidates) {
      CHECK(std::isfinite(score.mean_loglik));
      CHECK(score.mean_loglik < 0.0);
      CHECK(score.ais_se == 0.0);  // sizes are below the enumeration limit
    }
    CHECK(layer.chosen_size == evaluation::detail::pick_best(layer.candidates));
  }

  const evaluation::ModelSelectionReport replay =
      evaluation::select_architecture(train, validation, 8, candidates, cfg, EvalOptions{});
  for (std::size_t l = 0; l < 2; ++l) {
    CHECK(replay.layers[l].chosen_size == report.layers[l].chosen_size);
    for (std::size_t i = 0; i < candidates.size(); ++i) {
      CHECK(replay.layers[l].candidates[i].mean_loglik ==
            report.layers[l].candidates[i].mean_loglik);
    }
  }

  ebtm::TrainConfig reseeded = cfg;
  reseeded.seed = 10;
  const evaluation::ModelSelectionReport other =
      evaluation::select_architecture(train, validation, 8, candidates, reseeded, EvalOptions{});
  bool any_difference = false;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    if (other.layers[0].candidates[i].mean_loglik != report.layers[0].candidates[i].mean_loglik) {
      any_difference = true;
    }
  }
  CHECK(any_difference);

  const evaluation::ModelSelectionReport lone =
      evaluation::select_architecture(train, validation, 8, {4}, cfg, EvalOptions{});
  CHECK(lone.layers[0].chosen_size == 4);
  CHECK(lone.layers[1].chosen_size == 4);
}

TEST_CASE("evaluation entry points validate their inputs") {
  Rng rng(3);
  const ebtm::rsm::RsmParams p = synthetic::random_rsm(4, 2, 0.5, rng);
  CHECK_THROWS_AS(evaluation::heldout_log_likelihood(p, std::vector<CountVector>{}, EvalOptions{}),
                  ebtm::ValidationError);
  const ebtm::rbm::RbmParams q = synthetic::random_rbm(4, 2, 0.5, rng);
  CHECK_THROWS_AS(evaluation::heldout_log_likelihood(q, std::vector<Vector>{}, EvalOptions{}),
                  ebtm::ValidationError);

  const std::vector<CountVector> train = {synthetic::random_count_doc(4, 3, rng)};
  const std::vector<CountVector> validation = {synthetic::random_count_doc(4, 3, rng)};
  ebtm::TrainConfig cfg;
  cfg.epochs = 1;
  CHECK_THROWS_AS(
      evaluation::select_architecture(train, validation, 4, {}, cfg, EvalOptions{}),
      ebtm::ValidationError);
  CHECK_THROWS_AS(
      evaluation::select_architecture({}, validation, 4, {2}, cfg, EvalOptions{}),
      ebtm::ValidationError);
  CHECK_THROWS_AS(
      evaluation::select_architecture(train, {}, 4, {2}, cfg, EvalOptions{}),
      ebtm::ValidationError);
  CHECK_THROWS_AS(
      evaluation::select_architecture(train, validation, 4, {0}, cfg, EvalOptions{}),
      ebtm::ValidationError);
}
