// vsid: synthesize catalogs, train and evaluate semantic-ID models.
#include <omp.h>

#include <CLI11.hpp>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <string>

#include "vsid/baselines.hpp"
#include "vsid/catalog.hpp"
#include "vsid/error.hpp"
#include "vsid/evaluation.hpp"
#include "vsid/trainer.hpp"

using namespace vsid;

namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Training flags mirror the TrainConfig keys one to one.
struct TrainFlags {
  std::map<std::string, std::string> values = TrainConfig{}.to_map();

  void attach(CLI::App* app) {
    for (auto& [key, value] : values)
      app->add_option("--" + key, value, "training setting '" + key + "'")->capture_default_str();
  }
  TrainConfig config() const {
    try {
      return TrainConfig::from_map(values);
    } catch (const Error& e) {
      throw UsageError(e.what());
    }
  }
};

std::map<CLI::App*, std::string> config_paths;

void add_config(CLI::App* app) {
  app->add_option("--config", config_paths[app], "file of 'key = value' lines; flags override it");
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

// Fills options that were not given on the command line from the config file.
void apply_config(CLI::App* app) {
  const std::string& path = config_paths[app];
  if (path.empty()) return;
  std::ifstream in(path);
  if (!in) throw UsageError("cannot read config " + path);
  std::string line;
  for (std::size_t n = 1; std::getline(in, line); ++n) {
    line = trim(line.substr(0, line.find('#')));
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw UsageError(path + ":" + std::to_string(n) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    CLI::Option* opt = app->get_option_no_throw("--" + key);
    if (!opt || key == "config") throw UsageError(path + ": unknown key '" + key + "'");
    if (opt->count() > 0) continue;
    opt->add_result(trim(line.substr(eq + 1)));
    try {
      opt->run_callback();
    } catch (const CLI::ParseError& e) {
      throw UsageError(path + ": " + key + ": " + e.what());
    }
  }
}

Catalog open_catalog(const std::string& path) { return normalize_embeddings(load_catalog(path)); }

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::Io, "cannot write " + path);
  return out;
}

void set_threads(std::size_t n) {
  if (n == 0) throw UsageError("--threads must be at least 1");
  omp_set_num_threads(static_cast<int>(n));
}

MetricsSink log_sink(std::ostream& log) {
  return [&log](const StepMetrics& m) { log << format_metrics(m) << '\n'; };
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Variable-length semantic IDs for item catalogs"};
  // a repeated flag keeps its last value
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  app.require_subcommand(1);

  // synth
  SynthOptions so;
  std::string synth_out;
  auto* synth = app.add_subcommand("synth", "write a synthetic Zipfian catalog");
  add_config(synth);
  synth->add_option("--items", so.n_items, "number of items")->capture_default_str();
  synth->add_option("--dim", so.dim, "embedding dimension")->capture_default_str();
  synth->add_option("--zipf", so.zipf_exponent, "Zipf exponent of popularity")->capture_default_str();
  synth->add_option("--clusters", so.n_clusters, "number of embedding clusters")->capture_default_str();
  synth->add_option("--cold", so.cold_fraction, "fraction of items held out as cold")->capture_default_str();
  synth->add_option("--interactions", so.interactions_per_item, "mean interactions per item")
      ->capture_default_str();
  synth->add_option("--noise", so.noise, "within-cluster scatter")->capture_default_str();
  synth->add_option("--cluster-pop", so.cluster_popularity, "share of popularity rank decided per cluster, in [0, 1]")
      ->capture_default_str();
  synth->add_option("--seed", so.seed, "random seed")->capture_default_str();
  synth->add_option("--out", synth_out, "output catalog path")->required();

  // train
  TrainFlags train_flags;
  std::string train_catalog, train_out, train_log, train_resume;
  auto* train_cmd = app.add_subcommand("train", "train the variable-length dVAE");
  add_config(train_cmd);
  train_flags.attach(train_cmd);
  train_cmd->add_option("--catalog", train_catalog, "catalog file")->required();
  train_cmd->add_option("--out", train_out, "checkpoint path")->required();
  train_cmd->add_option("--log", train_log, "metrics log path (default: stdout)");
  train_cmd->add_option("--resume", train_resume, "continue from this checkpoint");

  // baseline
  auto* baseline = app.add_subcommand("baseline", "fit a baseline tokenizer");
  baseline->require_subcommand(1);

  std::string km_catalog, km_out;
  std::uint32_t km_maxlen = 5, km_vocab = 4096;
  std::size_t km_iters = 25, km_threads = 1;
  std::uint64_t km_seed = 0;
  auto* km = baseline->add_subcommand("rkmeans", "residual k-means");
  add_config(km);
  km->add_option("--catalog", km_catalog, "catalog file")->required();
  km->add_option("--out", km_out, "model path")->required();
  km->add_option("--maxlen", km_maxlen, "levels T")->capture_default_str();
  km->add_option("--vocab", km_vocab, "centroids per level")->capture_default_str();
  km->add_option("--iters", km_iters, "Lloyd sweeps per level")->capture_default_str();
  km->add_option("--seed", km_seed, "random seed")->capture_default_str();
  km->add_option("--threads", km_threads, "worker threads")->capture_default_str();

  TrainFlags rf_flags;
  std::string rf_catalog, rf_out, rf_log;
  bool rf_varlen = false;
  auto* rf = baseline->add_subcommand("reinforce", "REINFORCE sender/receiver");
  add_config(rf);
  rf_flags.attach(rf);
  rf->add_option("--catalog", rf_catalog, "catalog file")->required();
  rf->add_option("--out", rf_out, "checkpoint path")->required();
  rf->add_option("--log", rf_log, "metrics log path (default: stdout)");
  rf->add_flag("--varlen", rf_varlen, "variable length with an EOS symbol")->capture_default_str();

  // encode
  std::string enc_model, enc_catalog, enc_out;
  std::size_t enc_threads = 1;
  auto* enc = app.add_subcommand("encode", "write semantic IDs as TSV");
  add_config(enc);
  enc->add_option("--model", enc_model, "checkpoint or R-KMeans model")->required();
  enc->add_option("--catalog", enc_catalog, "catalog file")->required();
  enc->add_option("--out", enc_out, "TSV path: item_index, L, tokens")->required();
  enc->add_option("--threads", enc_threads, "worker threads")->capture_default_str();

  // eval
  std::string ev_model, ev_catalog, ev_out, ev_buckets;
  EvalOptions ev_opt;
  std::size_t ev_threads = 1;
  auto* ev = app.add_subcommand("eval", "compute the metric report");
  add_config(ev);
  ev->add_option("--model", ev_model, "checkpoint or R-KMeans model")->required();
  ev->add_option("--catalog", ev_catalog, "catalog file")->required();
  ev->add_option("--out", ev_out, "report path (metric<TAB>value)")->required();
  ev->add_option("--buckets", ev_buckets, "length bucket TSV (default: <out>.buckets.tsv)");
  ev->add_option("--users", ev_opt.users, "synthetic users for the budget stats")->capture_default_str();
  ev->add_option("--history-min", ev_opt.history_min, "shortest synthetic history")->capture_default_str();
  ev->add_option("--history-max", ev_opt.history_max, "longest synthetic history")->capture_default_str();
  ev->add_option("--budget", ev_opt.budget, "token budget")->capture_default_str();
  ev->add_option("--seed", ev_opt.seed, "random seed")->capture_default_str();
  ev->add_option("--threads", ev_threads, "worker threads")->capture_default_str();

  // gradcheck
  ModelShape gc_shape{4, 8, 5, 3, 8, 2, 16};
  double gc_tau = 0.7, gc_beta = 0.5, gc_lambda = 1.0, gc_free_bits = 0.1;
  double gc_eps = 1e-5, gc_threshold = 1e-4, gc_perturb = 0.3;
  std::size_t gc_batch = 3, gc_stride = 1;
  std::uint64_t gc_seed = 0;
  auto* gc = app.add_subcommand("gradcheck", "compare analytic and finite-difference gradients");
  add_config(gc);
  gc->add_option("--dim", gc_shape.dim, "input dimension")->capture_default_str();
  gc->add_option("--hidden", gc_shape.hidden, "encoder width")->capture_default_str();
  gc->add_option("--vocab", gc_shape.vocab, "vocabulary size")->capture_default_str();
  gc->add_option("--maxlen", gc_shape.max_len, "maximum length")->capture_default_str();
  gc->add_option("--model-dim", gc_shape.model_dim, "decoder width")->capture_default_str();
  gc->add_option("--layers", gc_shape.n_layers, "decoder blocks")->capture_default_str();
  gc->add_option("--ffn-dim", gc_shape.ffn_dim, "decoder FFN width")->capture_default_str();
  gc->add_option("--batch", gc_batch, "items in the sample")->capture_default_str();
  gc->add_option("--tau", gc_tau, "temperature")->capture_default_str();
  gc->add_option("--beta", gc_beta, "regularizer weight")->capture_default_str();
  gc->add_option("--lambda", gc_lambda, "length cost")->capture_default_str();
  gc->add_option("--free-bits", gc_free_bits, "free-bits threshold")->capture_default_str();
  gc->add_option("--perturb", gc_perturb, "std of noise added to the initial parameters")
      ->capture_default_str();
  gc->add_option("--eps", gc_eps, "finite-difference step")->capture_default_str();
  gc->add_option("--stride", gc_stride, "check every n-th parameter")->capture_default_str();
  gc->add_option("--threshold", gc_threshold, "fail above this relative error")->capture_default_str();
  gc->add_option("--seed", gc_seed, "random seed")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    for (CLI::App* sub : {synth, train_cmd, km, rf, enc, ev, gc})
      if (*sub) apply_config(sub);
    if (*synth) {
      save_catalog(synth_zipf_catalog(so), synth_out);
    } else if (*train_cmd) {
      const TrainConfig cfg = train_flags.config();
      set_threads(cfg.threads);
      const Catalog catalog = open_catalog(train_catalog);
      std::ofstream log_file;
      if (!train_log.empty()) log_file = open_out(train_log);
      std::ostream& log = train_log.empty() ? std::cout : log_file;
      ModelState state;
      if (!train_resume.empty()) {
        state = load_checkpoint(train_resume);
        if (state.kind != ModelKind::Dvae) throw UsageError("--resume needs a dVAE checkpoint");
      } else {
        state = init_model(cfg, catalog.dim);
      }
      train_until(state, catalog, state.config.total_steps(catalog), log_sink(log));
      save_checkpoint(state, train_out);
    } else if (*km) {
      set_threads(km_threads);
      const Catalog catalog = open_catalog(km_catalog);
      save_rkmeans(rkmeans_fit(catalog, km_maxlen, km_vocab, km_iters, km_seed), km_out);
    } else if (*rf) {
      const TrainConfig cfg = rf_flags.config();
      set_threads(cfg.threads);
      const Catalog catalog = open_catalog(rf_catalog);
      std::ofstream log_file;
      if (!rf_log.empty()) log_file = open_out(rf_log);
      std::ostream& log = rf_log.empty() ? std::cout : log_file;
      save_checkpoint(reinforce_train(catalog, cfg, rf_varlen, log_sink(log)), rf_out);
    } else if (*enc) {
      set_threads(enc_threads);
      const Catalog catalog = open_catalog(enc_catalog);
      const auto model = load_id_model(enc_model);
      const auto ids = encode_catalog(*model, catalog);
      std::ofstream out = open_out(enc_out);
      for (std::size_t i = 0; i < ids.size(); ++i) {
        out << i << '\t' << ids[i].length() << '\t';
        for (std::size_t t = 0; t < ids[i].tokens.size(); ++t)
          out << (t ? " " : "") << ids[i].tokens[t];
        out << '\n';
      }
    } else if (*ev) {
      set_threads(ev_threads);
      const Catalog catalog = open_catalog(ev_catalog);
      const auto model = load_id_model(ev_model);
      const EvalReport r = evaluate(*model, catalog, ev_opt);
      open_out(ev_out) << format_eval_report(r);
      open_out(ev_buckets.empty() ? ev_out + ".buckets.tsv" : ev_buckets)
          << format_length_buckets(r.length_buckets);
      std::cout << format_eval_report(r);
    } else if (*gc) {
      const DvaeModel model(gc_shape);
      Rng rng(gc_seed, Stream::Init);
      ParamVector theta = model.init_params(rng);
      for (double& v : theta) v += gc_perturb * rng.normal();
      GradSample sample;
      sample.x = Mat(gc_batch, gc_shape.dim);
      for (Eigen::Index i = 0; i < sample.x.size(); ++i) sample.x.data()[i] = rng.normal();
      sample.x.rowwise().normalize();
      Rng grng(gc_seed, Stream::Gumbel);
      sample.gumbels = sample_gumbel_block(gc_batch, model.encoder().shape, grng);
      sample.settings = StepSettings{gc_tau, gc_beta,
                                     PriorConfig{gc_lambda, gc_shape.max_len, gc_shape.vocab, gc_free_bits}};
      const GradCheckReport rep = grad_check(model, theta, sample, gc_eps, gc_stride);
      std::printf("checked %zu parameters, max relative error %.3e (index %zu: analytic %.6e, numeric %.6e)\n",
                  rep.checked, rep.max_rel_err, rep.worst_index, rep.worst_analytic,
                  rep.worst_numeric);
      if (rep.max_rel_err > gc_threshold) {
        std::fprintf(stderr, "gradcheck failed: %.3e > %.3e\n", rep.max_rel_err, gc_threshold);
        return 1;
      }
    }
  } catch (const UsageError& e) {
    std::fprintf(stderr, "usage error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
