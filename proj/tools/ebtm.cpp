// Command-line front end: each subcommand wires one library operation to
// file-based inputs and outputs and writes a .prov sidecar next to every
// artifact. Exit codes: 0 success, 1 validation/usage error, 2 I/O error.

#include <algorithm>
#include <cerrno>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include <CLI11.hpp>

#include "ebtm/activation.hpp"
#include "ebtm/ais.hpp"
#include "ebtm/checkpoint.hpp"
#include "ebtm/corpus.hpp"
#include "ebtm/dbm.hpp"
#include "ebtm/embed.hpp"
#include "ebtm/errors.hpp"
#include "ebtm/evaluation.hpp"
#include "ebtm/provenance.hpp"
#include "ebtm/pubmed.hpp"
#include "ebtm/rbm.hpp"
#include "ebtm/rsm.hpp"
#include "ebtm/trainer.hpp"
#include "ebtm/version.hpp"

namespace {

using ConfigVec = std::vector<std::pair<std::string, std::string>>;

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

void put(ConfigVec& c, const std::string& key, const std::string& value) {
  c.emplace_back(key, value);
}
void put(ConfigVec& c, const std::string& key, const char* value) {
  c.emplace_back(key, std::string(value));
}
void put(ConfigVec& c, const std::string& key, double value) {
  c.emplace_back(key, format_double(value));
}
void put(ConfigVec& c, const std::string& key, int value) {
  c.emplace_back(key, std::to_string(value));
}
void put(ConfigVec& c, const std::string& key, std::uint64_t value) {
  c.emplace_back(key, std::to_string(value));
}
void put(ConfigVec& c, const std::string& key, bool value) {
  c.emplace_back(key, value ? "true" : "false");
}

void write_prov(const std::string& artifact, const std::string& command, std::uint64_t seed,
                const ConfigVec& config) {
  ebtm::write_provenance(artifact, ebtm::Provenance{command, seed, config});
}

std::vector<std::string> read_lines(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ebtm::IoError("cannot open: " + path);
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    lines.push_back(line);
  }
  return lines;
}

// Opts shared by every CD/SGD training command. Thread count stays out of the
// recorded configuration: results are thread-count invariant by construction.
struct TrainFlags {
  ebtm::TrainConfig cfg;

  void add(CLI::App* sub) {
    sub->add_option("--epochs", cfg.epochs, "Training epochs")->capture_default_str();
    sub->add_option("--learning-rate", cfg.learning_rate, "SGD learning rate")
        ->capture_default_str();
    sub->add_option("--momentum", cfg.momentum, "Momentum after the switch epoch")
        ->capture_default_str();
    sub->add_option("--initial-momentum", cfg.initial_momentum, "Momentum before the switch epoch")
        ->capture_default_str();
    sub->add_option("--momentum-switch-epoch", cfg.momentum_switch_epoch,
                    "Epoch at which momentum switches")
        ->capture_default_str();
    sub->add_option("--weight-decay", cfg.weight_decay, "L2 penalty on the weight matrix")
        ->capture_default_str();
    sub->add_option("--cd-steps", cfg.cd_steps, "Gibbs steps per contrastive-divergence update")
        ->capture_default_str();
    sub->add_option("--batch-size", cfg.batch_size, "Minibatch size")->capture_default_str();
    sub->add_option("--dropout-keep", cfg.dropout_keep, "Hidden-unit keep probability")
        ->capture_default_str();
    sub->add_option("--seed", cfg.seed, "Master random seed")->capture_default_str();
    sub->add_option("--threads", cfg.threads, "Worker thread cap (1 = reference path)")
        ->capture_default_str();
  }
  void record(ConfigVec& c) const {
    put(c, "epochs", cfg.epochs);
    put(c, "learning-rate", cfg.learning_rate);
    put(c, "momentum", cfg.momentum);
    put(c, "initial-momentum", cfg.initial_momentum);
    put(c, "momentum-switch-epoch", cfg.momentum_switch_epoch);
    put(c, "weight-decay", cfg.weight_decay);
    put(c, "cd-steps", cfg.cd_steps);
    put(c, "batch-size", cfg.batch_size);
    put(c, "dropout-keep", cfg.dropout_keep);
    put(c, "seed", cfg.seed);
  }
};

struct MeanFieldFlags {
  ebtm::dbm::MeanFieldConfig cfg;

  void add(CLI::App* sub) {
    sub->add_option("--mf-iters", cfg.max_iters, "Mean-field sweep limit")->capture_default_str();
    sub->add_option("--mf-tol", cfg.tol, "Mean-field convergence tolerance")
        ->capture_default_str();
  }
  void record(ConfigVec& c) const {
    put(c, "mf-iters", cfg.max_iters);
    put(c, "mf-tol", cfg.tol);
  }
};

struct AisFlags {
  int temps = 5000;
  int runs = 500;
  std::uint64_t seed = 0;
  int exact_limit = 16;
  bool zero_base = false;
  int threads = 1;

  void add(CLI::App* sub) {
    sub->add_option("--ais-temps", temps, "Number of annealing temperatures")
        ->capture_default_str();
    sub->add_option("--ais-runs", runs, "Number of annealing runs")->capture_default_str();
    sub->add_option("--seed", seed, "Master random seed")->capture_default_str();
    sub->add_option("--exact-limit", exact_limit,
                    "Enumerate the partition function exactly up to this layer size")
        ->capture_default_str();
    sub->add_flag("--zero-base", zero_base, "Use the all-zero annealing base model");
    sub->add_option("--threads", threads, "Worker thread cap (1 = reference path)")
        ->capture_default_str();
  }
  void record(ConfigVec& c) const {
    put(c, "ais-temps", temps);
    put(c, "ais-runs", runs);
    put(c, "seed", seed);
    put(c, "exact-limit", exact_limit);
    put(c, "zero-base", zero_base);
  }
  ebtm::evaluation::EvalOptions eval_options() const {
    ebtm::evaluation::EvalOptions options;
    options.ais.num_temperatures = temps;
    options.ais.num_runs = runs;
    options.ais.seed = seed;
    options.ais.threads = threads;
    options.ais.zero_base = zero_base;
    options.exact_limit = exact_limit;
    return options;
  }
};

void print_train_log(const ebtm::TrainLog& log, const std::string& label) {
  for (const ebtm::EpochStats& e : log.epochs) {
    std::cout << label << " epoch " << e.epoch << " reconstruction_ce "
              << e.reconstruction_cross_entropy << '\n';
  }
}

std::vector<ebtm::Vector> binary_docs(const ebtm::corpus::CountCorpus& cc) {
  std::vector<ebtm::Vector> out(cc.docs.size());
  for (std::size_t i = 0; i < cc.docs.size(); ++i) {
    out[i] = ebtm::Vector::Zero(static_cast<Eigen::Index>(cc.vocab_size));
    for (const auto& [idx, count] : cc.docs[i].items) {
      ebtm::require(count == 1, "document '" + cc.docs[i].doc_id +
                                    "' has count " + std::to_string(count) +
                                    "; binary models need 0/1 data");
      out[i][idx] = 1.0;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// fetch
// ---------------------------------------------------------------------------

struct FetchOptions {
  std::string pmids_path;
  std::string out_path;
  ebtm::pubmed::FetchConfig fetch;
};

void run_fetch(const FetchOptions& o) {
  const std::vector<std::string> pmids = read_lines(o.pmids_path);
  const ebtm::pubmed::FetchResult result = ebtm::pubmed::fetch_abstracts(pmids, o.fetch);
  for (const std::string& id : result.missing) {
    std::cerr << "fetch: no abstract for PMID " << id << '\n';
  }
  ebtm::corpus::write_raw_corpus(o.out_path, result.documents);
  ConfigVec config;
  put(config, "pmids", o.pmids_path);
  put(config, "endpoint", o.fetch.endpoint);
  put(config, "rate-limit", o.fetch.rate_limit_per_sec);
  put(config, "batch-size", o.fetch.max_ids_per_request);
  put(config, "attempts", o.fetch.max_attempts);
  put(config, "out", o.out_path);
  write_prov(o.out_path, "fetch", 0, config);
  std::cout << "fetched " << result.documents.size() << " abstracts (" << result.missing.size()
            << " without abstract) -> " << o.out_path << '\n';
}

void register_fetch(CLI::App& app, FetchOptions& o) {
  CLI::App* sub = app.add_subcommand("fetch", "Fetch PubMed abstracts for a list of PMIDs");
  sub->set_config("--config", "", "Read options from a key = value file");
  sub->add_option("--pmids", o.pmids_path, "File with one PMID per line")->required();
  sub->add_option("--endpoint", o.fetch.endpoint, "efetch endpoint URL")->capture_default_str();
  sub->add_option("--rate-limit", o.fetch.rate_limit_per_sec, "Max requests per second")
      ->capture_default_str();
  sub->add_option("--batch-size", o.fetch.max_ids_per_request, "Max PMIDs per request")
      ->capture_default_str();
  sub->add_option("--attempts", o.fetch.max_attempts, "Attempts per batch before giving up")
      ->capture_default_str();
  sub->add_option("--out", o.out_path, "Raw corpus output (id<TAB>text per line)")->required();
  sub->callback([&o] { run_fetch(o); });
}

// ---------------------------------------------------------------------------
// prepare
// ---------------------------------------------------------------------------

struct PrepareOptions {
  std::string corpus_path;
  std::string stop_words_path;
  int min_count = 50;
  int max_terms = 1000;
  double train_frac = 0.9;
  double validation_frac = 0.0;
  double test_frac = 0.1;
  std::uint64_t seed = 0;
  std::string out_dir;
};

void run_prepare(const PrepareOptions& o) {
  namespace corpus = ebtm::corpus;
  const std::vector<corpus::RawDocument> docs = corpus::read_raw_corpus(o.corpus_path);
  const std::unordered_set<std::string> stop_words = corpus::load_stop_words(o.stop_words_path);
  const corpus::Vocabulary vocab =
      corpus::build_vocabulary(docs, stop_words, o.min_count, o.max_terms);

  std::vector<corpus::CountVector> vectors;
  vectors.reserve(docs.size());
  std::size_t dropped = 0;
  for (const corpus::RawDocument& doc : docs) {
    corpus::CountVector cv = corpus::vectorize(doc, vocab);
    if (cv.total == 0) {
      ++dropped;
      continue;
    }
    vectors.push_back(std::move(cv));
  }
  ebtm::require(!vectors.empty(), "prepare: every document is empty after vectorization");

  const corpus::CorpusSplit split = corpus::split_corpus(
      vectors, {o.train_frac, o.validation_frac, o.test_frac}, o.seed);

  std::error_code ec;
  std::filesystem::create_directories(o.out_dir, ec);
  if (ec) throw ebtm::IoError("prepare: cannot create directory " + o.out_dir);

  ConfigVec config;
  put(config, "corpus", o.corpus_path);
  put(config, "stop-words", o.stop_words_path);
  put(config, "min-count", o.min_count);
  put(config, "max-terms", o.max_terms);
  put(config, "train-frac", o.train_frac);
  put(config, "validation-frac", o.validation_frac);
  put(config, "test-frac", o.test_frac);
  put(config, "seed", o.seed);
  put(config, "out-dir", o.out_dir);

  const std::filesystem::path dir(o.out_dir);
  const std::string vocab_path = (dir / "vocabulary.txt").string();
  corpus::write_vocabulary(vocab_path, vocab);
  write_prov(vocab_path, "prepare", o.seed, config);
  const std::vector<std::pair<std::string, const std::vector<corpus::CountVector>*>> outputs = {
      {"train.counts.tsv", &split.train},
      {"validation.counts.tsv", &split.validation},
      {"test.counts.tsv", &split.test},
  };
  for (const auto& [name, part] : outputs) {
    const std::string path = (dir / name).string();
    corpus::write_count_vectors(path, *part, vocab.terms.size());
    write_prov(path, "prepare", o.seed, config);
  }
  std::cout << "vocabulary " << vocab.terms.size() << " terms; split " << split.train.size()
            << '/' << split.validation.size() << '/' << split.test.size() << "; dropped "
            << dropped << " empty documents -> " << o.out_dir << '\n';
}

void register_prepare(CLI::App& app, PrepareOptions& o) {
#ifdef EBTM_DEFAULT_STOPWORDS
  o.stop_words_path = EBTM_DEFAULT_STOPWORDS;
#endif
  CLI::App* sub =
      app.add_subcommand("prepare", "Build vocabulary, count vectors, and corpus splits");
  sub->set_config("--config", "", "Read options from a key = value file");
  sub->add_option("--corpus", o.corpus_path, "Raw corpus (id<TAB>text per line)")->required();
  sub->add_option("--stop-words", o.stop_words_path, "Stop-word list, one token per line")
      ->capture_default_str();
  sub->add_option("--min-count", o.min_count, "Minimum corpus frequency for a term")
      ->capture_default_str();
  sub->add_option("--max-terms", o.max_terms, "Vocabulary size cap")->capture_default_str();
  sub->add_option("--train-frac", o.train_frac, "Training fraction")->capture_default_str();
  sub->add_option("--validation-frac", o.validation_frac, "Validation fraction")
      ->capture_default_str();
  sub->add_option("--test-frac", o.test_frac, "Test fraction")->capture_default_str();
  sub->add_option("--seed", o.seed, "Split shuffle seed")->capture_default_str();
  sub->add_option("--out-dir", o.out_dir, "Output directory")->required();
  sub->callback([&o] { run_prepare(o); });
}

// ---------------------------------------------------------------------------
// train-rsm
// ---------------------------------------------------------------------------

struct TrainRsmOptions {
  std::string counts_path;
  int hidden = 0;
  TrainFlags train;
  std::string out_path;
};

void run_train_rsm(const TrainRsmOptions& o) {
  const ebtm::corpus::CountCorpus cc = ebtm::corpus::read_count_vectors(o.counts_path);
  ebtm::TrainLog log;
  const ebtm::rsm::RsmParams params = ebtm::rsm::train(
      cc.docs, static_cast<Eigen::Index>(cc.vocab_size), o.hidden, o.train.cfg, &log);
  print_train_log(log, "train-rsm");
  ebtm::checkpoint::write(o.out_path, ebtm::checkpoint::from_rsm(params));
  ConfigVec config;
  put(config, "counts", o.counts_path);
  put(config, "hidden", o.hidden);
  o.train.record(config);
  put(config, "out", o.out_path);
  write_prov(o.out_path, "train-rsm", o.train.cfg.seed, config);
  std::cout << "trained rsm " << cc.vocab_size << "x" << o.hidden << " -> " << o.out_path << '\n';
}

void register_train_rsm(CLI::App& app, TrainRsmOptions& o) {
  CLI::App* sub = app.add_subcommand("train-rsm", "Train a replicated softmax topic model");
  sub->set_config("--config", "", "Read options from a key = value file");
  sub->add_option("--counts", o.counts_path, "Count-vector file")->required();
  sub->add_option("--hidden", o.hidden, "Hidden layer size")->required();
  o.train.add(sub);
  sub->add_option("--out", o.out_path, "Checkpoint output path")->required();
  sub->callback([&o] { run_train_rsm(o); });
}

// ---------------------------------------------------------------------------
// pretrain-dbm
// ---------------------------------------------------------------------------

struct PretrainDbmOptions {
  std::string counts_path;
  int hidden1 = 0;
  int hidden2 = 0;
  TrainFlags train;
  std::string out_path;
  std::string stage1_path;
  std::string stage2_path;
};

void run_pretrain_dbm(const PretrainDbmOptions& o) {
  const ebtm::corpus::CountCorpus cc = ebtm::corpus::read_count_vectors(o.counts_path);
  ebtm::TrainLog log1, log2;
  const ebtm::dbm::PretrainResult result =
      ebtm::dbm::pretrain(cc.docs, static_cast<Eigen::Index>(cc.vocab_size), o.hidden1, o.hidden2,
                          o.train.cfg, &log1, &log2);
  print_train_log(log1, "pretrain stage1");
  print_train_log(log2, "pretrain stage2");

  ConfigVec config;
  put(config, "counts", o.counts_path);
  put(config, "hidden1", o.hidden1);
  put(config, "hidden2", o.hidden2);
  o.train.record(config);
  put(config, "out", o.out_path);
  if (!o.stage1_path.empty()) put(config, "stage1-out", o.stage1_path);
  if (!o.stage2_path.empty()) put(config, "stage2-out", o.stage2_path);

  ebtm::checkpoint::write(o.out_path, ebtm::checkpoint::from_dbm(result.params));
  write_prov(o.out_path, "pretrain-dbm", o.train.cfg.seed, config);
  if (!o.stage1_path.empty()) {
    ebtm::checkpoint::write(o.stage1_path, ebtm::checkpoint::from_rsm(result.stage1));
    write_prov(o.stage1_path, "pretrain-dbm", o.train.cfg.seed, config);
  }
  if (!o.stage2_path.empty()) {
    ebtm::require(result.has_stage2, "pretrain-dbm: no stage-2 model when hidden2 is 0");
    ebtm::checkpoint::write(o.stage2_path, ebtm::checkpoint::from_rbm(result.stage2));
    write_prov(o.stage2_path, "pretrain-dbm", o.train.cfg.seed, config);
  }
  std::cout << "pretrained dbm " << cc.vocab_size << "x" << o.hidden1 << "x" << o.hidden2
            << " -> " << o.out_path << '\n';
}

void register_pretrain_dbm(CLI::App& app, PretrainDbmOptions& o) {
  CLI::App* sub =
      app.add_subcommand("pretrain-dbm", "Greedy layerwise pretraining of a two-layer model");
  sub->set_config("--config", "", "Read options from a key = value file");
  sub->add_option("--counts", o.counts_path, "Count-vector file")->required();
  sub->add_option("--hidden1", o.hidden1, "First hidden layer size")->required();
  sub->add_option("--hidden2", o.hidden2, "Second hidden layer size (0 = single layer)")
      ->required();
  o.train.add(sub);
  sub->add_option("--out", o.out_path, "Checkpoint output path")->required();
  sub->add_option("--stage1-out", o.stage1_path, "Optional stage-1 model checkpoint");
  sub->add_option("--stage2-out", o.stage2_path, "Optional stage-2 model checkpoint");
  sub->callback([&o] { run_pretrain_dbm(o); });
}

// ---------------------------------------------------------------------------
// train-dbm
// ---------------------------------------------------------------------------

struct TrainDbmOptions {
  std::string counts_path;
  std::string init_path;
  TrainFlags train;
  int chains = 100;
  MeanFieldFlags mf;
  std::string out_path;
};

void run_train_dbm(const TrainDbmOptions& o) {
  const ebtm::corpus::CountCorpus cc = ebtm::corpus::read_count_vectors(o.counts_path);
  const ebtm::dbm::DbmParams init =
      ebtm::checkpoint::to_dbm(ebtm::checkpoint::read(o.init_path));
  ebtm::require(init.vocab() == static_cast<Eigen::Index>(cc.vocab_size),
                "train-dbm: model vocabulary " + std::to_string(init.vocab()) +
                    " does not match corpus vocabulary " + std::to_string(cc.vocab_size));
  ebtm::dbm::DbmTrainConfig cfg;
  cfg.sgd = o.train.cfg;
  cfg.chains = o.chains;
  cfg.mean_field = o.mf.cfg;
  ebtm::dbm::DbmTrainLog log;
  const ebtm::dbm::DbmParams params = ebtm::dbm::train(cc.docs, init, cfg, &log);
  for (const ebtm::dbm::DbmEpochStats& e : log.epochs) {
    std::cout << "train-dbm epoch " << e.epoch << " mean_elbo " << e.mean_elbo << '\n';
  }
  ebtm::checkpoint::write(o.out_path, ebtm::checkpoint::from_dbm(params));
  ConfigVec config;
  put(config, "counts", o.counts_path);
  put(config, "init", o.init_path);
  o.train.record(config);
  put(config, "chains", o.chains);
  o.mf.record(config);
  put(config, "out", o.out_path);
  write_prov(o.out_path, "train-dbm", o.train.cfg.seed, config);
  std::cout << "trained dbm " << params.vocab() << "x" << params.hidden1() << "x"
            << params.hidden2() << " -> " << o.out_path << '\n';
}

void register_train_dbm(CLI::App& app, TrainDbmOptions& o) {
  CLI::App* sub = app.add_subcommand(
      "train-dbm", "Train a two-layer model with mean-field and persistent chains");
  sub->set_config("--config", "", "Read options from a key = value file");
  sub->add_option("--counts", o.counts_path, "Count-vector file")->required();
  sub->add_option("--init", o.init_path, "Pretrained checkpoint to start from")->required();
  o.train.add(sub);
  sub->add_option("--chains", o.chains, "Number of persistent Gibbs chains")
      ->capture_default_str();
  o.mf.add(sub);
  sub->add_option("--out", o.out_path, "Checkpoint output path")->required();
  sub->callback([&o] { run_train_dbm(o); });
}

// ---------------------------------------------------------------------------
// evaluate
// ---------------------------------------------------------------------------

struct EvaluateOptions {
  std::string counts_path;
  std::string model_path;
  std::string train_counts_path;
  std::string split = "test";
  AisFlags ais;
  std::string out_path;
};

void run_evaluate(const EvaluateOptions& o) {
  namespace evaluation = ebtm::evaluation;
  const ebtm::corpus::CountCorpus cc = ebtm::corpus::read_count_vectors(o.counts_path);
  const ebtm::checkpoint::Checkpoint ckpt = ebtm::checkpoint::read(o.model_path);
  const std::string* kind = ckpt.meta("model");
  ebtm::require(kind != nullptr, "evaluate: checkpoint has no model metadata");
  const evaluation::EvalOptions options = o.ais.eval_options();

  evaluation::HeldoutResult result;
  double ppl = 0.0;
  int hidden_size = 0;
  if (*kind == "rsm") {
    const ebtm::rsm::RsmParams params = ebtm::checkpoint::to_rsm(ckpt);
    ebtm::require(params.vocab() == static_cast<Eigen::Index>(cc.vocab_size),
                  "evaluate: model vocabulary does not match corpus vocabulary");
    hidden_size = static_cast<int>(params.hidden());
    result = evaluation::heldout_log_likelihood(params, cc.docs, options);
    std::vector<std::int64_t> lengths(cc.docs.size());
    for (std::size_t i = 0; i < cc.docs.size(); ++i) lengths[i] = cc.docs[i].total;
    ppl = evaluation::perplexity(result.per_doc, lengths);
  } else if (*kind == "rbm") {
    const ebtm::rbm::RbmParams params = ebtm::checkpoint::to_rbm(ckpt);
    ebtm::require(params.visible() == static_cast<Eigen::Index>(cc.vocab_size),
                  "evaluate: model visible size does not match corpus vocabulary");
    hidden_size = static_cast<int>(params.hidden());
    const std::vector<ebtm::Vector> docs = binary_docs(cc);
    ebtm::Vector base_bias;
    const ebtm::Vector* base = nullptr;
    if (!o.train_counts_path.empty()) {
      const ebtm::corpus::CountCorpus train_cc =
          ebtm::corpus::read_count_vectors(o.train_counts_path);
      ebtm::require(train_cc.vocab_size == cc.vocab_size,
                    "evaluate: training counts vocabulary does not match");
      base_bias = ebtm::evaluation::ais_base_rate_bias(binary_docs(train_cc));
      base = &base_bias;
    }
    result = evaluation::heldout_log_likelihood(params, docs, options, base);
    // Per-unit convention for binary data: every document counts D units.
    std::vector<std::int64_t> lengths(docs.size(), params.visible());
    ppl = evaluation::perplexity(result.per_doc, lengths);
  } else {
    throw ebtm::ValidationError(
        "evaluate: model kind '" + *kind +
        "' is not scored directly; evaluate the layer models instead");
  }

  std::ofstream out(o.out_path, std::ios::binary);
  if (!out) throw ebtm::IoError("evaluate: cannot open for writing: " + o.out_path);
  const bool used_ais = result.method == "ais";
  out << "model_kind\thidden_size\tsplit\tmean_loglik\tperplexity\tais_runs\tais_temps\tais_se"
         "\tseed\n";
  out << *kind << '\t' << hidden_size << '\t' << o.split << '\t'
      << format_double(result.mean) << '\t' << format_double(ppl) << '\t'
      << (used_ais ? o.ais.runs : 0) << '\t' << (used_ais ? o.ais.temps : 0) << '\t'
      << format_double(result.max_ais_se) << '\t' << o.ais.seed << '\n';
  if (!out) throw ebtm::IoError("evaluate: write failed: " + o.out_path);

  ConfigVec config;
  put(config, "counts", o.counts_path);
  put(config, "model", o.model_path);
  if (!o.train_counts_path.empty()) put(config, "train-counts", o.train_counts_path);
  put(config, "split", o.split);
  o.ais.record(config);
  put(config, "out", o.out_path);
  write_prov(o.out_path, "evaluate", o.ais.seed, config);
  std::cout << "mean log-likelihood " << result.mean << ", perplexity " << ppl << " ("
            << result.method << ") -> " << o.out_path << '\n';
}

void register_evaluate(CLI::App& app, EvaluateOptions& o) {
  CLI::App* sub =
      app.add_subcommand("evaluate", "Held-out log-likelihood and perplexity of a model");
  sub->set_config("--config", "", "Read options from a key = value file");
  sub->add_option("--counts", o.counts_path, "Held-out count-vector file")->required();
  sub->add_option("--model", o.model_path, "Model checkpoint")->required();
  sub->add_option("--train-counts", o.train_counts_path,
                  "Training counts for the annealing base rates (binary models)");
  sub->add_option("--split", o.split, "Split label written to the report")
      ->capture_default_str();
  o.ais.add(sub);
  sub->add_option("--out", o.out_path, "Report output path")->required();
  sub->callback([&o] { run_evaluate(o); });
}

// ---------------------------------------------------------------------------
// select-arch
// ---------------------------------------------------------------------------

struct SelectArchOptions {
  std::string counts_path;
  std::vector<int> candidates;
  double validation_frac = 0.1;
  TrainFlags train;
  int ais_temps = 5000;
  int ais_runs = 500;
  int exact_limit = 16;
  std::string out_path;
};

void run_select_arch(const SelectArchOptions& o) {
  namespace evaluation = ebtm::evaluation;
  const ebtm::corpus::CountCorpus cc = ebtm::corpus::read_count_vectors(o.counts_path);
  const ebtm::corpus::CorpusSplit carve = ebtm::corpus::split_corpus(
      cc.docs, {1.0 - o.validation_frac, o.validation_frac, 0.0},
      ebtm::derive_seed(o.train.cfg.seed, 5));

  evaluation::EvalOptions eval;
  eval.ais.num_temperatures = o.ais_temps;
  eval.ais.num_runs = o.ais_runs;
  eval.ais.seed = o.train.cfg.seed;
  eval.ais.threads = o.train.cfg.threads;
  eval.exact_limit = o.exact_limit;

  const evaluation::ModelSelectionReport report = evaluation::select_architecture(
      carve.train, carve.validation, static_cast<Eigen::Index>(cc.vocab_size), o.candidates,
      o.train.cfg, eval);

  std::ofstream out(o.out_path, std::ios::binary);
  if (!out) throw ebtm::IoError("select-arch: cannot open for writing: " + o.out_path);
  out << "layer\thidden_size\tmean_loglik\tais_se\tchosen\n";
  for (const evaluation::LayerReport& layer : report.layers) {
    for (const evaluation::CandidateScore& c : layer.candidates) {
      out << layer.layer << '\t' << c.hidden_size << '\t' << format_double(c.mean_loglik) << '\t'
          << format_double(c.ais_se) << '\t' << (c.hidden_size == layer.chosen_size ? 1 : 0)
          << '\n';
    }
  }
  if (!out) throw ebtm::IoError("select-arch: write failed: " + o.out_path);

  ConfigVec config;
  put(config, "counts", o.counts_path);
  std::string joined;
  for (int c : o.candidates) {
    if (!joined.empty()) joined += ',';
    joined += std::to_string(c);
  }
  put(config, "candidates", joined);
  put(config, "validation-frac", o.validation_frac);
  o.train.record(config);
  put(config, "ais-temps", o.ais_temps);
  put(config, "ais-runs", o.ais_runs);
  put(config, "exact-limit", o.exact_limit);
  put(config, "out", o.out_path);
  write_prov(o.out_path, "select-arch", o.train.cfg.seed, config);
  for (const evaluation::LayerReport& layer : report.layers) {
    std::cout << "layer " << layer.layer << " chosen " << layer.chosen_size << '\n';
  }
}

void register_select_arch(CLI::App& app, SelectArchOptions& o) {
  CLI::App* sub = app.add_subcommand(
      "select-arch", "Greedy layer-by-layer hidden-size selection on validation likelihood");
  sub->set_config("--config", "", "Read options from a key = value file");
  sub->add_option("--counts", o.counts_path, "Training count-vector file")->required();
  sub->add_option("--candidates", o.candidates, "Candidate hidden sizes")
      ->required()
      ->delimiter(',');
  sub->add_option("--validation-frac", o.validation_frac,
                  "Fraction of the input carved off for validation")
      ->capture_default_str();
  o.train.add(sub);
  sub->add_option("--ais-temps", o.ais_temps, "Number of annealing temperatures")
      ->capture_default_str();
  sub->add_option("--ais-runs", o.ais_runs, "Number of annealing runs")->capture_default_str();
  sub->add_option("--exact-limit", o.exact_limit,
                  "Enumerate the partition function exactly up to this layer size")
      ->capture_default_str();
  sub->add_option("--out", o.out_path, "Report output path")->required();
  sub->callback([&o] { run_select_arch(o); });
}

// ---------------------------------------------------------------------------
// embed-words / embed-docs
// ---------------------------------------------------------------------------

struct EmbedWordsOptions {
  std::string model_path;
  std::string vocab_path;
  MeanFieldFlags mf;
  int threads = 1;
  std::string out_path;
};

void run_embed_words(const EmbedWordsOptions& o) {
  const ebtm::dbm::DbmParams params =
      ebtm::checkpoint::to_dbm(ebtm::checkpoint::read(o.model_path));
  const ebtm::corpus::Vocabulary vocab = ebtm::corpus::read_vocabulary(o.vocab_path);
  const std::vector<ebtm::embed::Embedding> embeddings =
      ebtm::embed::word_embeddings(vocab, params, o.mf.cfg, o.threads);
  ebtm::embed::export_embeddings(o.out_path, embeddings);
  ConfigVec config;
  put(config, "model", o.model_path);
  put(config, "vocab", o.vocab_path);
  o.mf.record(config);
  put(config, "out", o.out_path);
  write_prov(o.out_path, "embed-words", 0, config);
  std::cout << "wrote " << embeddings.size() << " word embeddings -> " << o.out_path << '\n';
}

void register_embed_words(CLI::App& app, EmbedWordsOptions& o) {
  CLI::App* sub = app.add_subcommand("embed-words", "Top-layer embeddings for every vocabulary term");
  sub->set_config("--config", "", "Read options from a key = value file");
  sub->add_option("--model", o.model_path, "Two-layer model checkpoint")->required();
  sub->add_option("--vocab", o.vocab_path, "Vocabulary file")->required();
  o.mf.add(sub);
  sub->add_option("--threads", o.threads, "Worker thread cap (1 = reference path)")
      ->capture_default_str();
  sub->add_option("--out", o.out_path, "Embedding TSV output path")->required();
  sub->callback([&o] { run_embed_words(o); });
}

struct EmbedDocsOptions {
  std::string model_path;
  std::string counts_path;
  MeanFieldFlags mf;
  int threads = 1;
  std::string out_path;
};

void run_embed_docs(const EmbedDocsOptions& o) {
  const ebtm::dbm::DbmParams params =
      ebtm::checkpoint::to_dbm(ebtm::checkpoint::read(o.model_path));
  const ebtm::corpus::CountCorpus cc = ebtm::corpus::read_count_vectors(o.counts_path);
  ebtm::require(params.vocab() == static_cast<Eigen::Index>(cc.vocab_size),
                "embed-docs: model vocabulary does not match corpus vocabulary");
  const std::vector<ebtm::embed::Embedding> embeddings =
      ebtm::embed::document_embeddings(cc.docs, params, o.mf.cfg, o.threads);
  ebtm::embed::export_embeddings(o.out_path, embeddings);
  ConfigVec config;
  put(config, "model", o.model_path);
  put(config, "counts", o.counts_path);
  o.mf.record(config);
  put(config, "out", o.out_path);
  write_prov(o.out_path, "embed-docs", 0, config);
  std::cout << "wrote " << embeddings.size() << " document embeddings -> " << o.out_path << '\n';
}

void register_embed_docs(CLI::App& app, EmbedDocsOptions& o) {
  CLI::App* sub = app.add_subcommand("embed-docs", "Top-layer embeddings for every document");
  sub->set_config("--config", "", "Read options from a key = value file");
  sub->add_option("--model", o.model_path, "Two-layer model checkpoint")->required();
  sub->add_option("--counts", o.counts_path, "Count-vector file")->required();
  o.mf.add(sub);
  sub->add_option("--threads", o.threads, "Worker thread cap (1 = reference path)")
      ->capture_default_str();
  sub->add_option("--out", o.out_path, "Embedding TSV output path")->required();
  sub->callback([&o] { run_embed_docs(o); });
}

// ---------------------------------------------------------------------------
// reconstruct
// ---------------------------------------------------------------------------

struct ReconstructOptions {
  std::string model_path;
  std::string vocab_path;
  std::vector<std::string> terms;
  int top = 10;
  MeanFieldFlags mf;
  std::string out_path;
};

void run_reconstruct(const ReconstructOptions& o) {
  const ebtm::dbm::DbmParams params =
      ebtm::checkpoint::to_dbm(ebtm::checkpoint::read(o.model_path));
  const ebtm::corpus::Vocabulary vocab = ebtm::corpus::read_vocabulary(o.vocab_path);
  ebtm::require(static_cast<Eigen::Index>(vocab.terms.size()) == params.vocab(),
                "reconstruct: vocabulary size does not match model");
  std::vector<Eigen::Index> indices;
  indices.reserve(o.terms.size());
  for (const std::string& term : o.terms) {
    auto it = vocab.index.find(term);
    ebtm::require(it != vocab.index.end(), "reconstruct: term not in vocabulary: " + term);
    indices.push_back(it->second);
  }
  const ebtm::embed::ReconstructionResult result =
      ebtm::embed::one_step_reconstruction(indices, params, o.top, o.mf.cfg);
  for (const ebtm::embed::RankedTerm& t : result.top) {
    std::cout << vocab.terms[static_cast<std::size_t>(t.index)] << '\t' << t.probability << '\n';
  }
  if (!o.out_path.empty()) {
    std::ofstream out(o.out_path, std::ios::binary);
    if (!out) throw ebtm::IoError("reconstruct: cannot open for writing: " + o.out_path);
    out << "term\tprobability\n";
    for (const ebtm::embed::RankedTerm& t : result.top) {
      out << vocab.terms[static_cast<std::size_t>(t.index)] << '\t'
          << format_double(t.probability) << '\n';
    }
    if (!out) throw ebtm::IoError("reconstruct: write failed: " + o.out_path);
    ConfigVec config;
    put(config, "model", o.model_path);
    put(config, "vocab", o.vocab_path);
    std::string joined;
    for (const std::string& t : o.terms) {
      if (!joined.empty()) joined += ',';
      joined += t;
    }
    put(config, "terms", joined);
    put(config, "top", o.top);
    o.mf.record(config);
    put(config, "out", o.out_path);
    write_prov(o.out_path, "reconstruct", 0, config);
  }
}

void register_reconstruct(CLI::App& app, ReconstructOptions& o) {
  CLI::App* sub = app.add_subcommand(
      "reconstruct", "One-step reconstruction: most probable terms for a term list");
  sub->set_config("--config", "", "Read options from a key = value file");
  sub->add_option("--model", o.model_path, "Two-layer model checkpoint")->required();
  sub->add_option("--vocab", o.vocab_path, "Vocabulary file")->required();
  sub->add_option("--terms", o.terms, "Input terms (repeats allowed)")
      ->required()
      ->delimiter(',');
  sub->add_option("--top", o.top, "Number of terms to report")->capture_default_str();
  o.mf.add(sub);
  sub->add_option("--out", o.out_path, "Optional report output path");
  sub->callback([&o] { run_reconstruct(o); });
}

// ---------------------------------------------------------------------------
// cluster
// ---------------------------------------------------------------------------

struct ClusterOptions {
  std::string embeddings_path;
  int k = 0;
  int k_min = 0;
  int k_max = 0;
  std::uint64_t seed = 0;
  int max_iters = 100;
  std::string out_path;
  std::string silhouette_path;
};

void run_cluster(const ClusterOptions& o) {
  namespace embed = ebtm::embed;
  const std::vector<embed::Embedding> embeddings = embed::read_embeddings(o.embeddings_path);
  ebtm::require(!embeddings.empty(), "cluster: no embeddings in " + o.embeddings_path);
  std::vector<ebtm::Vector> points;
  points.reserve(embeddings.size());
  for (const embed::Embedding& e : embeddings) points.push_back(e.vector);

  embed::ClusterModel model;
  embed::SilhouetteSelection selection;
  bool selected = false;
  if (o.k > 0) {
    model = embed::kmeans(points, o.k, o.seed, o.max_iters);
    if (o.k >= 2) model.silhouette = embed::mean_silhouette(points, model.assignments, o.k);
    selection.best_k = o.k;
    selection.scores.emplace_back(o.k, model.silhouette);
  } else {
    ebtm::require(o.k_min >= 2 && o.k_max >= o.k_min,
                  "cluster: pass --k, or --k-min and --k-max with 2 <= k-min <= k-max");
    selection = embed::silhouette_select_k(points, o.k_min, o.k_max, o.seed, o.max_iters);
    selected = true;
    model = embed::kmeans(points, selection.best_k,
                          ebtm::derive_seed(o.seed, static_cast<std::uint64_t>(selection.best_k)),
                          o.max_iters);
    model.silhouette = embed::mean_silhouette(points, model.assignments, selection.best_k);
  }

  embed::write_cluster_report(o.out_path, embeddings, model.assignments);
  ConfigVec config;
  put(config, "embeddings", o.embeddings_path);
  if (o.k > 0) put(config, "k", o.k);
  if (selected) {
    put(config, "k-min", o.k_min);
    put(config, "k-max", o.k_max);
  }
  put(config, "seed", o.seed);
  put(config, "max-iters", o.max_iters);
  put(config, "out", o.out_path);
  if (!o.silhouette_path.empty()) put(config, "silhouette-out", o.silhouette_path);
  write_prov(o.out_path, "cluster", o.seed, config);
  if (!o.silhouette_path.empty()) {
    embed::write_silhouette_report(o.silhouette_path, selection);
    write_prov(o.silhouette_path, "cluster", o.seed, config);
  }
  std::cout << "k " << model.k << " inertia " << model.inertia << " silhouette "
            << model.silhouette << " -> " << o.out_path << '\n';
}

void register_cluster(CLI::App& app, ClusterOptions& o) {
  CLI::App* sub =
      app.add_subcommand("cluster", "k-means over embeddings with optional silhouette selection");
  sub->set_config("--config", "", "Read options from a key = value file");
  sub->add_option("--embeddings", o.embeddings_path, "Embedding TSV file")->required();
  CLI::Option* k_opt = sub->add_option("--k", o.k, "Fixed number of clusters");
  sub->add_option("--k-min", o.k_min, "Smallest k to score")->excludes(k_opt);
  sub->add_option("--k-max", o.k_max, "Largest k to score")->excludes(k_opt);
  sub->add_option("--seed", o.seed, "Centroid seeding RNG seed")->capture_default_str();
  sub->add_option("--max-iters", o.max_iters, "Lloyd iteration cap")->capture_default_str();
  sub->add_option("--out", o.out_path, "Assignment TSV output path")->required();
  sub->add_option("--silhouette-out", o.silhouette_path, "Optional per-k silhouette TSV");
  sub->callback([&o] { run_cluster(o); });
}

// ---------------------------------------------------------------------------
// activation-map
// ---------------------------------------------------------------------------

struct ActivationMapOptions {
  std::string coordinates_path;
  std::string members_path;
  std::string clusters_path;
  int cluster_id = -1;
  double fwhm = 10.0;
  ebtm::activation::GridSpec grid;
  bool clamp = false;
  int threads = 1;
  std::string out_path;
  std::string peaks_path;
  int top_peaks = 10;
  double min_separation = 0.0;
};

std::unordered_set<std::string> cluster_members(const std::string& path, int cluster_id) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ebtm::IoError("cannot open cluster report: " + path);
  std::unordered_set<std::string> members;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || (line_no == 1 && line == "key\tcluster")) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos || tab == 0) {
      throw ebtm::IoError("malformed cluster report line " + std::to_string(line_no) + " in " +
                          path);
    }
    int cluster = 0;
    try {
      cluster = std::stoi(line.substr(tab + 1));
    } catch (const std::exception&) {
      throw ebtm::IoError("malformed cluster report line " + std::to_string(line_no) + " in " +
                          path);
    }
    if (cluster == cluster_id) members.insert(line.substr(0, tab));
  }
  return members;
}

void run_activation_map(const ActivationMapOptions& o) {
  namespace activation = ebtm::activation;
  const activation::LoadReport report = activation::load_coordinates(o.coordinates_path);
  for (const std::string& err : report.errors) {
    std::cerr << "activation-map: " << o.coordinates_path << ": " << err << '\n';
  }

  std::unordered_set<std::string> members;
  if (!o.members_path.empty()) {
    for (std::string& id : read_lines(o.members_path)) members.insert(std::move(id));
  } else if (!o.clusters_path.empty()) {
    ebtm::require(o.cluster_id >= 0, "activation-map: --clusters needs --cluster-id");
    members = cluster_members(o.clusters_path, o.cluster_id);
    ebtm::require(!members.empty(), "activation-map: cluster " + std::to_string(o.cluster_id) +
                                        " has no members in " + o.clusters_path);
  } else {
    for (const activation::CoordinateRecord& r : report.records) members.insert(r.doc_id);
  }

  std::size_t out_of_bounds = 0;
  activation::MapOptions options;
  options.out_of_bounds =
      o.clamp ? activation::OutOfBounds::kClamp : activation::OutOfBounds::kSkip;
  options.threads = o.threads;
  options.out_of_bounds_count = &out_of_bounds;
  const activation::VoxelGrid grid =
      activation::cluster_activation_map(report.records, members, o.fwhm, o.grid, options);
  if (out_of_bounds > 0) {
    std::cerr << "activation-map: " << out_of_bounds << " coordinates outside the grid ("
              << (o.clamp ? "clamped" : "skipped") << ")\n";
  }
  activation::write_volume(o.out_path, grid);

  ConfigVec config;
  put(config, "coordinates", o.coordinates_path);
  if (!o.members_path.empty()) put(config, "members", o.members_path);
  if (!o.clusters_path.empty()) {
    put(config, "clusters", o.clusters_path);
    put(config, "cluster-id", o.cluster_id);
  }
  put(config, "fwhm", o.fwhm);
  put(config, "origin-x", o.grid.origin_x);
  put(config, "origin-y", o.grid.origin_y);
  put(config, "origin-z", o.grid.origin_z);
  put(config, "spacing", o.grid.spacing);
  put(config, "nx", o.grid.nx);
  put(config, "ny", o.grid.ny);
  put(config, "nz", o.grid.nz);
  put(config, "clamp", o.clamp);
  put(config, "out", o.out_path);
  if (!o.peaks_path.empty()) {
    put(config, "peaks-out", o.peaks_path);
    put(config, "top-peaks", o.top_peaks);
    put(config, "min-separation", o.min_separation);
  }
  write_prov(o.out_path, "activation-map", 0, config);
  if (!o.peaks_path.empty()) {
    const std::vector<activation::Peak> peaks =
        activation::peak_activations(grid, o.top_peaks, o.min_separation);
    activation::write_peaks(o.peaks_path, peaks);
    write_prov(o.peaks_path, "activation-map", 0, config);
    std::cout << "found " << peaks.size() << " peaks -> " << o.peaks_path << '\n';
  }
  std::cout << "mapped " << members.size() << " documents -> " << o.out_path << '\n';
}

void register_activation_map(CLI::App& app, ActivationMapOptions& o) {
  CLI::App* sub = app.add_subcommand(
      "activation-map", "Gaussian-kernel mean activation map for a set of documents");
  sub->set_config("--config", "", "Read options from a key = value file");
  sub->add_option("--coordinates", o.coordinates_path,
                  "Coordinate TSV (doc_id<TAB>x<TAB>y<TAB>z, millimetres)")
      ->required();
  CLI::Option* members_opt =
      sub->add_option("--members", o.members_path, "File listing member doc ids, one per line");
  sub->add_option("--clusters", o.clusters_path, "Cluster assignment TSV")->excludes(members_opt);
  sub->add_option("--cluster-id", o.cluster_id, "Cluster whose members to map");
  sub->add_option("--fwhm", o.fwhm, "Kernel full width at half maximum, millimetres")
      ->capture_default_str();
  sub->add_option("--origin-x", o.grid.origin_x, "Grid origin x, millimetres")
      ->capture_default_str();
  sub->add_option("--origin-y", o.grid.origin_y, "Grid origin y, millimetres")
      ->capture_default_str();
  sub->add_option("--origin-z", o.grid.origin_z, "Grid origin z, millimetres")
      ->capture_default_str();
  sub->add_option("--spacing", o.grid.spacing, "Voxel spacing, millimetres")
      ->capture_default_str();
  sub->add_option("--nx", o.grid.nx, "Grid size along x")->capture_default_str();
  sub->add_option("--ny", o.grid.ny, "Grid size along y")->capture_default_str();
  sub->add_option("--nz", o.grid.nz, "Grid size along z")->capture_default_str();
  sub->add_flag("--clamp", o.clamp, "Clamp out-of-grid coordinates instead of skipping them");
  sub->add_option("--threads", o.threads, "Worker thread cap (1 = reference path)")
      ->capture_default_str();
  sub->add_option("--out", o.out_path, "Volume output path")->required();
  sub->add_option("--peaks-out", o.peaks_path, "Optional peak TSV output path");
  sub->add_option("--top-peaks", o.top_peaks, "Number of peaks to report")
      ->capture_default_str();
  sub->add_option("--min-separation", o.min_separation,
                  "Minimum distance between reported peaks, millimetres")
      ->capture_default_str();
  sub->callback([&o] { run_activation_map(o); });
}

bool flag_given(const std::vector<std::string>& args, std::size_t from, const std::string& flag) {
  for (std::size_t i = from; i < args.size(); ++i) {
    if (args[i] == flag || args[i].rfind(flag + "=", 0) == 0) return true;
  }
  return false;
}

// CLI11 only reads config files registered on the app it parses, never on a
// subcommand, so --config is expanded into ordinary arguments before parsing.
// Flags given explicitly on the command line shadow file values.
std::vector<std::string> expand_config(const CLI::App& app, std::vector<std::string> args) {
  std::size_t sub_pos = args.size();
  const CLI::App* sub = nullptr;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (!args[i].empty() && args[i][0] != '-') {
      sub = app.get_subcommand_no_throw(args[i]);
      sub_pos = i;
      break;
    }
  }
  if (sub == nullptr) return args;

  std::string path;
  for (std::size_t i = sub_pos + 1; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) {
      path = args[i + 1];
    } else if (args[i].rfind("--config=", 0) == 0) {
      path = args[i].substr(9);
    }
  }
  if (path.empty()) return args;

  std::vector<CLI::ConfigItem> items;
  try {
    items = CLI::ConfigTOML{}.from_file(path);
  } catch (const CLI::FileError&) {
    throw ebtm::IoError("cannot read config file: " + path);
  } catch (const CLI::ParseError& e) {
    throw ebtm::ValidationError("config file " + path + ": " + e.what());
  }

  const std::string sub_name = args[sub_pos];
  for (const CLI::ConfigItem& item : items) {
    if (item.name == "++" || item.name == "--") continue;  // section markers
    if (!item.parents.empty() &&
        (item.parents.size() != 1 || item.parents.front() != sub_name)) {
      throw ebtm::ValidationError("config file " + path + ": unknown key '" + item.fullname() +
                                  "'");
    }
    if (item.name == "config") {
      throw ebtm::ValidationError("config file " + path + ": nested config files are not supported");
    }
    const std::string flag = "--" + item.name;
    const CLI::Option* opt = sub->get_option_no_throw(flag);
    if (opt == nullptr) {
      throw ebtm::ValidationError("config file " + path + ": unknown key '" + item.name + "'");
    }
    if (flag_given(args, sub_pos + 1, flag)) continue;
    if (opt->get_expected_min() == 0) {
      const std::string value = item.inputs.empty() ? "true" : item.inputs.front();
      errno = 0;
      const std::int64_t truthy = CLI::detail::to_flag_value(value);
      if (item.inputs.size() > 1 || errno != 0) {
        throw ebtm::ValidationError("config file " + path + ": invalid value for flag '" +
                                    item.name + "'");
      }
      if (truthy > 0) args.push_back(flag);
      continue;
    }
    args.push_back(flag);
    args.insert(args.end(), item.inputs.begin(), item.inputs.end());
  }
  return args;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Energy-based topic models over bag-of-words corpora"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(ebtm::kVersion));

  FetchOptions fetch_opts;
  PrepareOptions prepare_opts;
  TrainRsmOptions train_rsm_opts;
  PretrainDbmOptions pretrain_dbm_opts;
  TrainDbmOptions train_dbm_opts;
  EvaluateOptions evaluate_opts;
  SelectArchOptions select_arch_opts;
  EmbedWordsOptions embed_words_opts;
  EmbedDocsOptions embed_docs_opts;
  ReconstructOptions reconstruct_opts;
  ClusterOptions cluster_opts;
  ActivationMapOptions activation_map_opts;

  register_fetch(app, fetch_opts);
  register_prepare(app, prepare_opts);
  register_train_rsm(app, train_rsm_opts);
  register_pretrain_dbm(app, pretrain_dbm_opts);
  register_train_dbm(app, train_dbm_opts);
  register_evaluate(app, evaluate_opts);
  register_select_arch(app, select_arch_opts);
  register_embed_words(app, embed_words_opts);
  register_embed_docs(app, embed_docs_opts);
  register_reconstruct(app, reconstruct_opts);
  register_cluster(app, cluster_opts);
  register_activation_map(app, activation_map_opts);

  try {
    std::vector<std::string> args(argv + 1, argv + argc);
    args = expand_config(app, std::move(args));
    std::reverse(args.begin(), args.end());
    app.parse(std::move(args));
    return 0;
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << app.help() << std::flush;
    return 1;
  } catch (const ebtm::IoError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const ebtm::ValidationError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
}
