#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "ebtm/dbm.hpp"
#include "ebtm/rng.hpp"
#include "ebtm/rsm.hpp"
#include "support/oracles.hpp"
#include "support/synthetic.hpp"

using ebtm::Rng;
using ebtm::Vector;
using ebtm::corpus::CountVector;
namespace dbm = ebtm::dbm;

namespace {

Vector bottom_up(const CountVector& doc, const dbm::DbmParams& p) {
  Vector c = static_cast<double>(doc.total) * p.b1;
  for (const auto& [idx, count] : doc.items) {
    c += static_cast<double>(count) * p.W1.row(idx).transpose();
  }
  return c;
}

}  // namespace

TEST_CASE("two-layer energy matches the explicit-loop oracle") {
  Rng rng(301);
  const auto p = synthetic::random_dbm(5, 3, 2, 0.7, rng);
  for (int trial = 0; trial < 20; ++trial) {
    const CountVector u = synthetic::random_count_doc(5, 4, rng);
    const Vector h1 = synthetic::random_binary(3, rng);
    const Vector h2 = synthetic::random_binary(2, rng);
    CHECK(dbm::energy(u, h1, h2, p) ==
          Catch::Approx(oracle::dbm_energy(u, h1, h2, p)).margin(1e-12));
  }
  CHECK_THROWS_AS(
      dbm::energy(synthetic::random_count_doc(5, 4, rng), Vector::Zero(2).eval(),
                  Vector::Zero(2).eval(), p),
      ebtm::ValidationError);
}

TEST_CASE("mean field reaches a self-consistent fixed point") {
  Rng rng(302);
  const auto p = synthetic::random_dbm(6, 4, 3, 0.6, rng);
  const CountVector u = synthetic::random_count_doc(6, 5, rng);
  dbm::MeanFieldConfig cfg;
  cfg.max_iters = 500;
  cfg.tol = 1e-12;
  const dbm::MeanFieldState state = dbm::mean_field(u, p, cfg);
  CHECK(state.converged);
  CHECK(state.iterations_used <= 500);

  const Vector mu1_next = ebtm::logistic(Vector(bottom_up(u, p) + p.W2 * state.mu2));
  const Vector mu2_next = ebtm::logistic(Vector(p.W2.transpose() * state.mu1 + p.b2));
  CHECK((mu1_next - state.mu1).cwiseAbs().maxCoeff() < 1e-9);
  CHECK((mu2_next - state.mu2).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("each mean-field sweep raises the variational bound") {
  Rng rng(303);
  for (int model = 0; model < 5; ++model) {
    const auto p = synthetic::random_dbm(5, 4, 3, 1.0, rng);
    const CountVector u = synthetic::random_count_doc(5, 6, rng);
    dbm::MeanFieldState state = dbm::mean_field_init(u, p);
    double prev = dbm::elbo(u, state, p);
    for (int sweep = 0; sweep < 25; ++sweep) {
      dbm::mean_field_sweep(u, p, state);
      const double now = dbm::elbo(u, state, p);
      REQUIRE(now >= prev - 1e-10);
      prev = now;
    }
  }
}

TEST_CASE("the bound never exceeds the enumerated evidence") {
  Rng rng(304);
  for (int model = 0; model < 5; ++model) {
    const auto p = synthetic::random_dbm(5, 3, 2, 0.9, rng);
    const CountVector u = synthetic::random_count_doc(5, 4, rng);
    const dbm::MeanFieldState state = dbm::mean_field(u, p, {200, 1e-10});
    CHECK(dbm::elbo(u, state, p) <= oracle::dbm_log_evidence(u, p) + 1e-9);
  }
}

TEST_CASE("zero coupling makes mean field exact in one sweep") {
  Rng rng(305);
  auto p = synthetic::random_dbm(6, 3, 2, 0.8, rng);
  p.W2.setZero();
  const CountVector u = synthetic::random_count_doc(6, 5, rng);
  dbm::MeanFieldConfig cfg;
  cfg.max_iters = 50;
  cfg.tol = 1e-12;
  const dbm::MeanFieldState state = dbm::mean_field(u, p, cfg);
  CHECK(state.converged);
  CHECK(state.iterations_used == 2);

  // with the layers decoupled the factorized posterior is the true posterior,
  // so the bound is tight and mu1 is the single-layer conditional
  CHECK(dbm::elbo(u, state, p) ==
        Catch::Approx(oracle::dbm_log_evidence(u, p)).margin(1e-9));
  ebtm::rsm::RsmParams bottom;
  bottom.W = p.W1;
  bottom.a = p.a;
  bottom.b = p.b1;
  const Vector expected = ebtm::rsm::hidden_conditional(u, bottom);
  CHECK((state.mu1 - expected).cwiseAbs().maxCoeff() < 1e-12);
  for (Eigen::Index j = 0; j < p.hidden2(); ++j) {
    CHECK(state.mu2[j] == Catch::Approx(ebtm::logistic(p.b2[j])).margin(1e-12));
  }
}

TEST_CASE("an empty top layer degenerates to a replicated softmax") {
  Rng rng(306);
  auto p = synthetic::random_dbm(5, 3, 2, 0.7, rng);
  p.W2 = ebtm::MatrixRM::Zero(3, 0);
  p.b2 = Vector::Zero(0);
  p.validate();
  const CountVector u = synthetic::random_count_doc(5, 4, rng);
  const dbm::MeanFieldState state = dbm::mean_field(u, p, {50, 1e-12});
  CHECK(state.converged);
  CHECK(state.mu2.size() == 0);
  CHECK(dbm::elbo(u, state, p) ==
        Catch::Approx(oracle::dbm_log_evidence(u, p)).margin(1e-9));

  ebtm::rsm::RsmParams bottom;
  bottom.W = p.W1;
  bottom.a = p.a;
  bottom.b = p.b1;
  CHECK(dbm::elbo(u, state, p) ==
        Catch::Approx(-ebtm::rsm::free_energy(u, bottom)).margin(1e-9));
}

TEST_CASE("gibbs updates replay exactly and ignore the thread count") {
  Rng rng(307);
  const auto p = synthetic::random_dbm(6, 4, 3, 0.5, rng);
  auto make_chains = [&] {
    Rng crng(308);
    dbm::DbmChains chains;
    for (int c = 0; c < 40; ++c) {
      dbm::DbmChain chain;
      chain.v = synthetic::random_count_doc(6, 5, crng, "c" + std::to_string(c));
      chain.h1 = synthetic::random_binary(4, crng);
      chain.h2 = synthetic::random_binary(3, crng);
      chains.states.push_back(std::move(chain));
    }
    return chains;
  };

  dbm::DbmChains serial = make_chains();
  dbm::DbmChains parallel = make_chains();
  Rng r1(309), r2(309);
  for (int step = 0; step < 3; ++step) {
    dbm::gibbs_step(serial, p, r1, 1);
    dbm::gibbs_step(parallel, p, r2, 4);
  }
  CHECK(serial.step_count == 3);
  REQUIRE(parallel.states.size() == serial.states.size());
  for (std::size_t c = 0; c < serial.states.size(); ++c) {
    CHECK(serial.states[c].v.items == parallel.states[c].v.items);
    CHECK(serial.states[c].v.total == 5);  // document length is preserved
    CHECK(serial.states[c].h1 == parallel.states[c].h1);
    CHECK(serial.states[c].h2 == parallel.states[c].h2);
  }

  // exactly one master draw per step
  dbm::DbmChains chains = make_chains();
  Rng used(310);
  dbm::gibbs_step(chains, p, used);
  Rng fresh(310);
  fresh.next_u64();
  CHECK(used.next_u64() == fresh.next_u64());
}

TEST_CASE("pretraining with an empty top stage is plain rsm training") {
  const auto data = synthetic::make_topic_corpus(40, 10, 8, 0.9, 311);
  ebtm::TrainConfig cfg;
  cfg.epochs = 5;
  cfg.batch_size = 10;
  cfg.learning_rate = 0.05;
  cfg.dropout_keep = 1.0;
  cfg.seed = 21;
  const dbm::PretrainResult result = dbm::pretrain(data.docs, 10, 4, 0, cfg);
  CHECK_FALSE(result.has_stage2);
  CHECK(result.params.W2.rows() == 4);
  CHECK(result.params.W2.cols() == 0);
  CHECK(result.params.b2.size() == 0);

  ebtm::TrainConfig stage1_cfg = cfg;
  stage1_cfg.seed = ebtm::derive_seed(cfg.seed, 11);
  const ebtm::rsm::RsmParams direct = ebtm::rsm::train(data.docs, 10, 4, stage1_cfg);
  CHECK(result.stage1.W == direct.W);
  CHECK(result.stage1.a == direct.a);
  CHECK(result.stage1.b == direct.b);
  CHECK(result.params.W1 == direct.W);
  CHECK(result.params.a == direct.a);
  CHECK(result.params.b1 == direct.b);
}

TEST_CASE("two-stage pretraining assembles the stack without the spare bias") {
  const auto data = synthetic::make_topic_corpus(40, 10, 8, 0.9, 312);
  ebtm::TrainConfig cfg;
  cfg.epochs = 5;
  cfg.batch_size = 10;
  cfg.learning_rate = 0.05;
  cfg.dropout_keep = 1.0;
  cfg.seed = 22;
  const dbm::PretrainResult result = dbm::pretrain(data.docs, 10, 4, 3, cfg);
  REQUIRE(result.has_stage2);
  CHECK(result.params.W1 == result.stage1.W);
  CHECK(result.params.a == result.stage1.a);
  CHECK(result.params.b1 == result.stage1.b);
  CHECK(result.params.W2 == result.stage2.W);
  CHECK(result.params.b2 == result.stage2.b);
  CHECK(result.params.hidden1() == 4);
  CHECK(result.params.hidden2() == 3);

  // the doubled bottom stage differs from a plain replicated softmax fit
  ebtm::TrainConfig stage1_cfg = cfg;
  stage1_cfg.seed = ebtm::derive_seed(cfg.seed, 11);
  const ebtm::rsm::RsmParams plain = ebtm::rsm::train(data.docs, 10, 4, stage1_cfg);
  CHECK(result.stage1.W != plain.W);

  const dbm::PretrainResult again = dbm::pretrain(data.docs, 10, 4, 3, cfg);
  CHECK(result.params.W1 == again.params.W1);
  CHECK(result.params.W2 == again.params.W2);
  CHECK(result.params.b1 == again.params.b1);
  CHECK(result.params.b2 == again.params.b2);
}

TEST_CASE("joint training is deterministic and thread-invariant") {
  const auto data = synthetic::make_topic_corpus(60, 10, 8, 0.9, 313);
  ebtm::TrainConfig sgd;
  sgd.epochs = 6;
  sgd.batch_size = 20;
  sgd.learning_rate = 0.05;
  sgd.dropout_keep = 1.0;
  sgd.seed = 23;
  const dbm::PretrainResult pre = dbm::pretrain(data.docs, 10, 4, 2, sgd);

  dbm::DbmTrainConfig cfg;
  cfg.sgd = sgd;
  cfg.chains = 20;
  dbm::DbmTrainLog log;
  const dbm::DbmParams trained = dbm::train(data.docs, pre.params, cfg, &log);
  REQUIRE(log.epochs.size() == 6);
  for (const auto& e : log.epochs) CHECK(std::isfinite(e.mean_elbo));
  CHECK(trained.W1.allFinite());
  CHECK(trained.W2.allFinite());
  CHECK((trained.W1 - pre.params.W1).cwiseAbs().maxCoeff() > 0.0);

  const dbm::DbmParams again = dbm::train(data.docs, pre.params, cfg);
  CHECK(trained.W1 == again.W1);
  CHECK(trained.W2 == again.W2);
  CHECK(trained.a == again.a);
  CHECK(trained.b1 == again.b1);
  CHECK(trained.b2 == again.b2);

  dbm::DbmTrainConfig threaded = cfg;
  threaded.sgd.threads = 4;
  const dbm::DbmParams parallel = dbm::train(data.docs, pre.params, threaded);
  CHECK(trained.W1 == parallel.W1);
  CHECK(trained.W2 == parallel.W2);
  CHECK(trained.a == parallel.a);
  CHECK(trained.b1 == parallel.b1);
  CHECK(trained.b2 == parallel.b2);
}

TEST_CASE("dropout finish scales the two weight matrices differently") {
  const auto data = synthetic::make_topic_corpus(30, 8, 6, 0.9, 314);
  ebtm::TrainConfig sgd;
  sgd.epochs = 2;
  sgd.batch_size = 10;
  sgd.learning_rate = 0.0;  // freeze updates so only the finish scaling acts
  sgd.momentum = 0.0;
  sgd.initial_momentum = 0.0;
  sgd.weight_decay = 0.0;
  sgd.seed = 24;
  const dbm::PretrainResult pre = dbm::pretrain(data.docs, 8, 3, 2, sgd);

  dbm::DbmTrainConfig cfg;
  cfg.sgd = sgd;
  cfg.sgd.dropout_keep = 0.8;
  cfg.chains = 5;
  const dbm::DbmParams out = dbm::train(data.docs, pre.params, cfg);
  CHECK((out.W1 - 0.8 * pre.params.W1).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((out.W2 - 0.64 * pre.params.W2).cwiseAbs().maxCoeff() < 1e-12);
  CHECK(out.a == pre.params.a);
}

TEST_CASE("dbm validation rejects malformed shapes and arguments") {
  Rng rng(315);
  auto p = synthetic::random_dbm(4, 3, 2, 0.5, rng);
  auto bad = p;
  bad.W2.resize(2, 2);
  CHECK_THROWS_AS(bad.validate(), ebtm::ValidationError);
  bad = p;
  bad.b2.resize(3);
  CHECK_THROWS_AS(bad.validate(), ebtm::ValidationError);

  const CountVector u = synthetic::random_count_doc(4, 3, rng);
  dbm::MeanFieldState state = dbm::mean_field(u, p);
  state.mu1[0] = 1.5;
  CHECK_THROWS_AS(dbm::elbo(u, state, p), ebtm::ValidationError);

  ebtm::TrainConfig cfg;
  cfg.epochs = 1;
  CHECK_THROWS_AS(dbm::pretrain({u}, 4, 0, 2, cfg), ebtm::ValidationError);
  CHECK_THROWS_AS(dbm::pretrain({u}, 4, 3, -1, cfg), ebtm::ValidationError);
  CHECK_THROWS_AS(dbm::pretrain({}, 4, 3, 2, cfg), ebtm::ValidationError);

  dbm::DbmTrainConfig tcfg;
  tcfg.sgd = cfg;
  tcfg.chains = 0;
  CHECK_THROWS_AS(dbm::train({u}, p, tcfg), ebtm::ValidationError);
  CHECK_THROWS_AS(dbm::mean_field(u, p, {0, 1e-6}), ebtm::ValidationError);
  CHECK_THROWS_AS(dbm::mean_field(u, p, {10, 0.0}), ebtm::ValidationError);
}
