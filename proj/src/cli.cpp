#include "mlhg/cli.hpp"

#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "mlhg/checkpoint.hpp"
#include "mlhg/corpus.hpp"
#include "mlhg/errors.hpp"
#include "mlhg/evaluation.hpp"
#include "mlhg/hypergraph.hpp"
#include "mlhg/model.hpp"
#include "mlhg/training.hpp"

namespace mlhg::cli {

namespace {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

constexpr const char* kArtifactVersion = "1.0.0";

// Flat key=value config file; '#' starts a comment. Command-line flags take
// precedence over config keys, config keys over built-in defaults.
std::map<std::string, std::string> load_config_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open config file: " + path.string());
  std::map<std::string, std::string> config;
  std::string line;
  long line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t\r");
      if (b == std::string::npos) return std::string();
      const auto e = s.find_last_not_of(" \t\r");
      return s.substr(b, e - b + 1);
    };
    const std::string stripped = trim(line);
    if (stripped.empty()) continue;
    const auto eq = stripped.find('=');
    if (eq == std::string::npos) throw ParseError("config: expected key=value", line_no);
    const std::string key = trim(stripped.substr(0, eq));
    const std::string value = trim(stripped.substr(eq + 1));
    if (key.empty()) throw ParseError("config: empty key", line_no);
    config[key] = value;
  }
  return config;
}

// One option slot: flag presence beats config, config beats default.
template <typename T>
struct Opt {
  T value{};
  CLI::Option* option = nullptr;

  T resolve(const std::map<std::string, std::string>& config, const std::string& key, T fallback) const {
    if (option != nullptr && option->count() > 0) return value;
    auto it = config.find(key);
    if (it != config.end()) {
      T parsed{};
      std::istringstream iss(it->second);
      if constexpr (std::is_same_v<T, std::string>) {
        parsed = it->second;
      } else {
        if (!(iss >> parsed)) throw ParseError("config: cannot parse key \"" + key + "\"");
      }
      return parsed;
    }
    return fallback;
  }
};

struct CommonOptions {
  Opt<std::string> config_path;
  Opt<std::string> corpus;
  Opt<std::string> out;
  Opt<std::uint64_t> seed;
  Opt<std::string> variant;
  Opt<int> epochs;
  Opt<double> lr;
  Opt<double> dropout;
  Opt<int> hidden;
  Opt<int> batch;
  Opt<std::string> embeddings;
  Opt<int> embedding_dim;
  Opt<int> max_notes;
  Opt<int> top_taxonomies;
  Opt<int> min_token_freq;
  Opt<double> val_fraction;
};

void add_common_options(CLI::App* cmd, CommonOptions& o, bool with_training) {
  o.config_path.option = cmd->add_option("--config", o.config_path.value, "flat key=value config file");
  o.corpus.option = cmd->add_option("--corpus", o.corpus.value, "JSONL corpus path");
  o.out.option = cmd->add_option("--out", o.out.value, "output directory");
  o.seed.option = cmd->add_option("--seed", o.seed.value, "master seed");
  if (with_training) {
    o.variant.option = cmd->add_option("--variant", o.variant.value, "model variant");
    o.epochs.option = cmd->add_option("--epochs", o.epochs.value, "training epochs");
    o.lr.option = cmd->add_option("--lr", o.lr.value, "learning rate");
    o.dropout.option = cmd->add_option("--dropout", o.dropout.value, "dropout rate");
    o.hidden.option = cmd->add_option("--hidden", o.hidden.value, "hidden dimension");
    o.batch.option = cmd->add_option("--batch", o.batch.value, "batch size");
    o.embeddings.option = cmd->add_option("--embeddings", o.embeddings.value, "word embedding file");
    o.embedding_dim.option = cmd->add_option("--embedding-dim", o.embedding_dim.value, "embedding width");
    o.max_notes.option = cmd->add_option("--max-notes", o.max_notes.value, "per-patient note cap");
    o.top_taxonomies.option = cmd->add_option("--top-taxonomies", o.top_taxonomies.value, "taxonomy cap");
    o.min_token_freq.option = cmd->add_option("--min-token-freq", o.min_token_freq.value, "token frequency floor");
    o.val_fraction.option = cmd->add_option("--val-fraction", o.val_fraction.value, "validation fraction");
  }
}

struct Resolved {
  std::string corpus;
  std::string out = "out";
  training::TrainConfig train;
  corpus::PreprocessConfig prep;
  std::optional<std::string> embeddings;
  int embedding_dim = 100;
};

Resolved resolve_common(const CommonOptions& o, const std::map<std::string, std::string>& config) {
  Resolved r;
  r.corpus = o.corpus.resolve(config, "corpus", "");
  r.out = o.out.resolve(config, "out", "out");
  r.train.seed = o.seed.resolve(config, "seed", 0);
  r.train.variant = o.variant.resolve(config, "variant", "full");
  r.train.epochs = o.epochs.resolve(config, "epochs", 30);
  r.train.learning_rate = o.lr.resolve(config, "lr", 0.001);
  r.train.dropout = o.dropout.resolve(config, "dropout", 0.3);
  r.train.hidden_dim = o.hidden.resolve(config, "hidden", 64);
  r.train.batch_size = o.batch.resolve(config, "batch", 32);
  r.train.val_fraction = o.val_fraction.resolve(config, "val_fraction", 0.2);
  r.prep.max_notes = o.max_notes.resolve(config, "max_notes", 30);
  r.prep.top_taxonomies = o.top_taxonomies.resolve(config, "top_taxonomies", 6);
  r.prep.min_token_freq = o.min_token_freq.resolve(config, "min_token_freq", 1);
  const std::string emb = o.embeddings.resolve(config, "embeddings", "");
  if (!emb.empty()) r.embeddings = emb;
  r.embedding_dim = o.embedding_dim.resolve(config, "embedding_dim", 100);
  return r;
}

std::map<std::string, std::string> maybe_config(const CommonOptions& o) {
  if (o.config_path.option != nullptr && o.config_path.option->count() > 0)
    return load_config_file(o.config_path.value);
  return {};
}

void echo_config(std::ostream& out, const Resolved& r) {
  out << "[config] lr=" << r.train.learning_rate << " dropout=" << r.train.dropout
      << " hidden=" << r.train.hidden_dim << " epochs=" << r.train.epochs << " batch=" << r.train.batch_size
      << " seed=" << r.train.seed << " variant=" << r.train.variant
      << " val_fraction=" << r.train.val_fraction << " max_notes=" << r.prep.max_notes
      << " top_taxonomies=" << r.prep.top_taxonomies << " embedding_dim=" << r.embedding_dim << "\n";
}

ordered_json config_json(const Resolved& r) {
  ordered_json j;
  j["lr"] = r.train.learning_rate;
  j["dropout"] = r.train.dropout;
  j["hidden"] = r.train.hidden_dim;
  j["epochs"] = r.train.epochs;
  j["batch"] = r.train.batch_size;
  j["seed"] = r.train.seed;
  j["variant"] = r.train.variant;
  j["val_fraction"] = r.train.val_fraction;
  j["max_notes"] = r.prep.max_notes;
  j["top_taxonomies"] = r.prep.top_taxonomies;
  j["min_token_freq"] = r.prep.min_token_freq;
  j["embedding_dim"] = r.embedding_dim;
  if (r.embeddings) j["embeddings"] = *r.embeddings;
  return j;
}

void write_manifest(const fs::path& out_dir, const std::string& command, std::uint64_t seed,
                    const ordered_json& config, const std::vector<fs::path>& inputs,
                    const std::vector<std::string>& outputs) {
  ordered_json j;
  j["artifact_version"] = kArtifactVersion;
  j["command"] = command;
  j["seed"] = seed;
  j["config"] = config;
  ordered_json in = ordered_json::array();
  for (const auto& path : inputs)
    in.push_back({{"path", path.string()}, {"fnv1a64", checkpoint::hash_file(path)}});
  j["inputs"] = std::move(in);
  j["outputs"] = outputs;
  std::ofstream f(out_dir / "manifest.json");
  if (!f) throw std::runtime_error("cannot write manifest in " + out_dir.string());
  f << j.dump(1) << '\n';
}

corpus::SyntheticSpec load_spec_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open spec file: " + path.string());
  ordered_json j;
  try {
    j = ordered_json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("spec file: malformed JSON: " + std::string(e.what()));
  }
  corpus::SyntheticSpec spec;
  spec.n_patients = j.value("n_patients", spec.n_patients);
  spec.n_taxonomies = j.value("n_taxonomies", spec.n_taxonomies);
  spec.notes_min = j.value("notes_min", spec.notes_min);
  spec.notes_max = j.value("notes_max", spec.notes_max);
  spec.note_len_min = j.value("note_len_min", spec.note_len_min);
  spec.note_len_max = j.value("note_len_max", spec.note_len_max);
  spec.shared_vocab = j.value("shared_vocab", spec.shared_vocab);
  spec.keywords_per_taxonomy = j.value("keywords_per_taxonomy", spec.keywords_per_taxonomy);
  spec.positive_rate = j.value("positive_rate", spec.positive_rate);
  spec.decoy_rate = j.value("decoy_rate", spec.decoy_rate);
  spec.seed = j.value("seed", spec.seed);
  return spec;
}

training::CorpusContext prepare_context(const Resolved& r, corpus::PreprocessResult& pre) {
  auto embeddings_path =
      r.embeddings ? std::optional<fs::path>(fs::path(*r.embeddings)) : std::optional<fs::path>();
  auto table = corpus::load_embeddings(embeddings_path, pre.vocab, r.embedding_dim, r.train.seed);
  return training::build_context(pre.records, std::move(pre.vocab), std::move(pre.taxonomies),
                                 std::move(table), r.prep);
}

void require(bool ok, const std::string& message) {
  if (!ok) throw ValidationError(message);
}

int cmd_synth(const std::string& spec_path, const CommonOptions& o, std::ostream& out) {
  const auto config = maybe_config(o);
  Resolved r = resolve_common(o, config);
  require(!spec_path.empty(), "synth: --spec is required");
  corpus::SyntheticSpec spec = load_spec_file(spec_path);
  if (o.seed.option != nullptr && o.seed.option->count() > 0) spec.seed = o.seed.value;
  const auto records = corpus::generate_synthetic(spec);

  fs::create_directories(r.out);
  const fs::path corpus_path = fs::path(r.out) / "corpus.jsonl";
  corpus::write_corpus(corpus_path, records);
  std::size_t positives = 0;
  for (const auto& rec : records) positives += rec.label;
  out << "synth: wrote " << records.size() << " patients (" << positives << " positive) to "
      << corpus_path.string() << "\n";
  write_manifest(r.out, "synth", spec.seed, config_json(r), {fs::path(spec_path)},
                 {"corpus.jsonl"});
  return 0;
}

int cmd_train(const CommonOptions& o, std::ostream& out) {
  const auto config = maybe_config(o);
  Resolved r = resolve_common(o, config);
  require(!r.corpus.empty(), "train: --corpus is required");
  echo_config(out, r);

  auto records = corpus::parse_corpus(r.corpus);
  auto pre = corpus::preprocess(records, r.prep);
  auto ctx = prepare_context(r, pre);

  auto fitted = training::fit(pre.records, ctx, r.train);

  fs::create_directories(r.out);
  training::write_epoch_csv((fs::path(r.out) / "epochs.csv").string(), fitted.reports);

  checkpoint::Checkpoint ckpt;
  ckpt.variant = r.train.variant;
  ckpt.seed = r.train.seed;
  ckpt.hidden_dim = r.train.hidden_dim;
  ckpt.dropout = r.train.dropout;
  ckpt.ctx = std::move(ctx);
  ckpt.params = std::move(fitted.params);
  checkpoint::save(fs::path(r.out) / "checkpoint.json", ckpt);

  const auto& last = fitted.reports.back();
  out << "train: " << fitted.reports.size() << " epochs, final loss " << last.mean_loss;
  if (last.val_auroc) out << ", val AUROC " << *last.val_auroc;
  out << "\n";
  write_manifest(r.out, "train", r.train.seed, config_json(r), {fs::path(r.corpus)},
                 {"checkpoint.json", "epochs.csv"});
  return 0;
}

int cmd_eval(const std::string& checkpoint_path, const CommonOptions& o, std::ostream& out) {
  const auto config = maybe_config(o);
  Resolved r = resolve_common(o, config);
  require(!checkpoint_path.empty(), "eval: --checkpoint is required");
  require(!r.corpus.empty(), "eval: --corpus is required");

  const auto ckpt = checkpoint::load(checkpoint_path);
  const auto records = corpus::parse_corpus(r.corpus);
  const auto kept = corpus::preprocess_with_vocab(records, ckpt.ctx.prep, ckpt.ctx.vocab, ckpt.ctx.taxonomies);
  require(!kept.empty(), "eval: no evaluable patients after preprocessing");

  const auto variant = model::apply_variant(ckpt.variant);
  auto report = evaluation::evaluate(ckpt.params, kept, ckpt.ctx, variant, r.train.batch_size);
  report.seed = ckpt.seed;

  fs::create_directories(r.out);
  evaluation::write_metrics_csv((fs::path(r.out) / "metrics.csv").string(), {report}, "eval");
  out << "eval: n=" << report.overall.n;
  if (report.overall.auprc) out << " AUPRC=" << *report.overall.auprc;
  if (report.overall.auroc) out << " AUROC=" << *report.overall.auroc;
  out << "\n";
  write_manifest(r.out, "eval", ckpt.seed, config_json(r),
                 {fs::path(checkpoint_path), fs::path(r.corpus)}, {"metrics.csv"});
  return 0;
}

int cmd_ablate(const std::string& variants_csv, int n_seeds, double test_fraction,
               const CommonOptions& o, std::ostream& out) {
  const auto config = maybe_config(o);
  Resolved r = resolve_common(o, config);
  require(!r.corpus.empty(), "ablate: --corpus is required");
  require(n_seeds >= 1, "ablate: --seeds must be >= 1");
  echo_config(out, r);

  std::vector<std::string> variants;
  if (variants_csv.empty()) {
    variants = model::variant_names();
  } else {
    std::istringstream iss(variants_csv);
    std::string name;
    while (std::getline(iss, name, ',')) variants.push_back(name);
  }
  std::vector<std::uint64_t> seeds(static_cast<std::size_t>(n_seeds));
  for (int i = 0; i < n_seeds; ++i) seeds[static_cast<std::size_t>(i)] = static_cast<std::uint64_t>(i);

  auto records = corpus::parse_corpus(r.corpus);
  auto pre = corpus::preprocess(records, r.prep);
  auto ctx = prepare_context(r, pre);
  auto [train_pool, test] = corpus::split_train_val(pre.records, test_fraction, r.train.seed);

  const auto table = evaluation::run_ablations(train_pool, test, ctx, r.train, variants, seeds);

  fs::create_directories(r.out);
  evaluation::write_ablation_csv((fs::path(r.out) / "ablation.csv").string(), table);
  evaluation::write_metrics_csv((fs::path(r.out) / "metrics.csv").string(), table.runs, "test");
  out << evaluation::ablation_csv_header() << "\n";
  for (const auto& row : table.rows) {
    char line[256];
    std::snprintf(line, sizeof(line), "%s,%zu,%.6f,%.6f,%.6f,%.6f", row.variant.c_str(), row.n_seeds,
                  row.auprc_mean, row.auprc_std, row.auroc_mean, row.auroc_std);
    out << line << "\n";
  }
  write_manifest(r.out, "ablate", r.train.seed, config_json(r), {fs::path(r.corpus)},
                 {"ablation.csv", "metrics.csv"});
  return 0;
}

int cmd_gradcheck(const CommonOptions& o, std::ostream& out) {
  const auto config = maybe_config(o);
  Resolved r = resolve_common(o, config);
  const double error = training::grad_check(r.train, r.train.seed);
  char buf[128];
  std::snprintf(buf, sizeof(buf), "gradcheck: seed=%llu max relative error %.3e",
                static_cast<unsigned long long>(r.train.seed), error);
  out << buf << "\n";
  if (o.out.option != nullptr && o.out.option->count() > 0) {
    fs::create_directories(r.out);
    write_manifest(r.out, "gradcheck", r.train.seed, config_json(r), {}, {});
  }
  return error < 1e-3 ? 0 : 1;
}

int cmd_export_pca(const std::string& checkpoint_path, const std::string& patient_id,
                   const std::string& dump_graph_path, const CommonOptions& o, std::ostream& out) {
  const auto config = maybe_config(o);
  Resolved r = resolve_common(o, config);
  require(!checkpoint_path.empty(), "export-pca: --checkpoint is required");
  require(!r.corpus.empty(), "export-pca: --corpus is required");
  require(!patient_id.empty(), "export-pca: --patient is required");

  const auto ckpt = checkpoint::load(checkpoint_path);
  const auto records = corpus::parse_corpus(r.corpus);
  const auto kept = corpus::preprocess_with_vocab(records, ckpt.ctx.prep, ckpt.ctx.vocab, ckpt.ctx.taxonomies);
  const corpus::PatientRecord* found = nullptr;
  for (const auto& rec : kept)
    if (rec.patient_id == patient_id) found = &rec;
  require(found != nullptr, "export-pca: patient \"" + patient_id + "\" not found after preprocessing");

  const auto graph = hypergraph::construct(*found, ckpt.ctx.vocab, ckpt.ctx.embeddings,
                                           ckpt.ctx.taxonomies, ckpt.ctx.dims);
  fs::create_directories(r.out);
  std::vector<std::string> outputs = {"pca.csv"};
  if (!dump_graph_path.empty()) {
    std::ofstream dump(dump_graph_path);
    if (!dump) throw std::runtime_error("cannot write graph dump: " + dump_graph_path);
    dump << hypergraph::dump_graph_json(graph) << '\n';
  }

  std::vector<hypergraph::PatientHypergraph> graphs;
  graphs.push_back(graph);
  const auto batched = hypergraph::batch(graphs);
  const auto variant = model::apply_variant(ckpt.variant);
  const auto trace = model::forward(batched, ckpt.params, variant, model::Mode::kEval, 0);

  const auto& final_nodes = trace.stages.back().node_out;
  const auto projection = evaluation::pca_project(final_nodes, 2, ckpt.seed);

  std::vector<evaluation::PcaRowMeta> meta(final_nodes.rows());
  for (std::size_t i = 0; i < meta.size(); ++i) {
    meta[i].node_id = i;
    meta[i].token = graph.node_tokens[i];
    meta[i].taxonomy = ckpt.ctx.taxonomies.name_of(graph.node_meta[i].taxonomy_index);
    meta[i].type = "word";
  }
  evaluation::write_pca_csv((fs::path(r.out) / "pca.csv").string(), projection, meta);
  out << "export-pca: " << meta.size() << " word nodes projected for patient " << patient_id << "\n";
  write_manifest(r.out, "export-pca", ckpt.seed, config_json(r),
                 {fs::path(checkpoint_path), fs::path(r.corpus)}, outputs);
  return 0;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"multi-level hypergraph classifier for hierarchical note corpora"};
  app.require_subcommand(1);

  CommonOptions synth_opts, train_opts, eval_opts, ablate_opts, grad_opts, pca_opts;
  std::string spec_path, eval_checkpoint, pca_checkpoint, patient_id, dump_graph_path;
  std::string variants_csv;
  int n_seeds = 10;
  double test_fraction = 0.3;

  auto* synth = app.add_subcommand("synth", "generate a synthetic corpus from a spec file");
  add_common_options(synth, synth_opts, false);
  synth->add_option("--spec", spec_path, "synthetic corpus spec (JSON)")->required();

  auto* train = app.add_subcommand("train", "preprocess, split and fit a model");
  add_common_options(train, train_opts, true);

  auto* eval_cmd = app.add_subcommand("eval", "score a corpus with a trained checkpoint");
  add_common_options(eval_cmd, eval_opts, true);
  eval_cmd->add_option("--checkpoint", eval_checkpoint, "model checkpoint path")->required();

  auto* ablate = app.add_subcommand("ablate", "sweep model variants over seeds");
  add_common_options(ablate, ablate_opts, true);
  ablate->add_option("--variants", variants_csv, "comma-separated variant names (default: all)");
  ablate->add_option("--seeds", n_seeds, "number of seeds, 0..n-1 (default 10)");
  ablate->add_option("--test-fraction", test_fraction, "held-out test fraction (default 0.3)");

  auto* gradcheck = app.add_subcommand("gradcheck", "verify analytic gradients by finite differences");
  add_common_options(gradcheck, grad_opts, true);

  auto* export_pca = app.add_subcommand("export-pca", "dump 2-d PCA of one patient's final word-node embeddings");
  add_common_options(export_pca, pca_opts, true);
  export_pca->add_option("--checkpoint", pca_checkpoint, "model checkpoint path")->required();
  export_pca->add_option("--patient", patient_id, "patient id")->required();
  export_pca->add_option("--dump-graph", dump_graph_path, "also write the graph structure as JSON");

  std::vector<const char*> argv;
  argv.push_back("mlhg");
  for (const auto& a : args) argv.push_back(a.c_str());

  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n" << app.help();
    return 2;
  }

  try {
    if (synth->parsed()) return cmd_synth(spec_path, synth_opts, out);
    if (train->parsed()) return cmd_train(train_opts, out);
    if (eval_cmd->parsed()) return cmd_eval(eval_checkpoint, eval_opts, out);
    if (ablate->parsed()) return cmd_ablate(variants_csv, n_seeds, test_fraction, ablate_opts, out);
    if (gradcheck->parsed()) return cmd_gradcheck(grad_opts, out);
    if (export_pca->parsed()) return cmd_export_pca(pca_checkpoint, patient_id, dump_graph_path, pca_opts, out);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  err << "error: no subcommand executed\n";
  return 2;
}

}  // namespace mlhg::cli
