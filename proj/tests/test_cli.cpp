#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "mlhg/checkpoint.hpp"
#include "mlhg/cli.hpp"
#include "mlhg/corpus.hpp"

namespace fs = std::filesystem;
using mlhg::cli::run;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string str(const std::string& child = "") const { return (path / child).string(); }
};

std::string read_file(const fs::path& path) {
  std::ifstream in(path);
  REQUIRE(in.good());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& path, const std::string& content) {
  std::ofstream out(path);
  out << content;
}

int run_capture(const std::vector<std::string>& args, std::string* stdout_text = nullptr,
                std::string* stderr_text = nullptr) {
  std::ostringstream out, err;
  const int code = run(args, out, err);
  if (stdout_text) *stdout_text = out.str();
  if (stderr_text) *stderr_text = err.str();
  return code;
}

std::string spec_json(int n_patients, int seed) {
  std::ostringstream s;
  s << R"({"n_patients":)" << n_patients
    << R"(,"n_taxonomies":3,"notes_min":2,"notes_max":4,"note_len_min":3,"note_len_max":6,)"
    << R"("shared_vocab":20,"keywords_per_taxonomy":6,"positive_rate":0.4,"decoy_rate":0.5,"seed":)" << seed
    << "}";
  return s.str();
}

}  // namespace

TEST_CASE("cli: unknown subcommand and unknown flag exit 2 with usage") {
  std::string err;
  CHECK(run_capture({"frobnicate"}, nullptr, &err) == 2);
  CHECK(err.find("Usage") != std::string::npos);
  CHECK(run_capture({"train", "--no-such-flag"}, nullptr, &err) == 2);
}

TEST_CASE("cli: gradcheck prints a small error and exits zero") {
  std::string out;
  const int code = run_capture({"gradcheck", "--seed", "0", "--hidden", "8"}, &out);
  CHECK(code == 0);
  CHECK(out.find("max relative error") != std::string::npos);
  std::istringstream iss(out.substr(out.find("error") + 6));
  double value = 1.0;
  iss >> value;
  CHECK(value < 1e-3);
}

TEST_CASE("cli: synth twice with the same seed writes identical corpora") {
  TempDir dir("mlhg_cli_synth");
  write_file(dir.path / "spec.json", spec_json(25, 7));
  TempDir out1("mlhg_cli_synth_out1"), out2("mlhg_cli_synth_out2");
  CHECK(run_capture({"synth", "--spec", dir.str("spec.json"), "--out", out1.str()}) == 0);
  CHECK(run_capture({"synth", "--spec", dir.str("spec.json"), "--out", out2.str()}) == 0);
  CHECK(read_file(out1.path / "corpus.jsonl") == read_file(out2.path / "corpus.jsonl"));
  CHECK(fs::exists(out1.path / "manifest.json"));
}

TEST_CASE("cli: train echoes resolved defaults and writes artifacts; eval and export-pca consume them") {
  TempDir dir("mlhg_cli_train");
  write_file(dir.path / "spec.json", spec_json(30, 3));
  REQUIRE(run_capture({"synth", "--spec", dir.str("spec.json"), "--out", dir.str()}) == 0);

  std::string out;
  const int code = run_capture({"train", "--corpus", dir.str("corpus.jsonl"), "--out", dir.str("run"),
                                "--epochs", "2", "--hidden", "8", "--embedding-dim", "6", "--seed", "5"},
                               &out);
  CHECK(code == 0);
  CHECK(out.find("lr=0.001") != std::string::npos);
  CHECK(out.find("dropout=0.3") != std::string::npos);
  CHECK(out.find("hidden=8") != std::string::npos);
  CHECK(out.find("batch=32") != std::string::npos);
  CHECK(fs::exists(dir.path / "run" / "checkpoint.json"));
  CHECK(fs::exists(dir.path / "run" / "epochs.csv"));
  CHECK(fs::exists(dir.path / "run" / "manifest.json"));

  const std::string epochs = read_file(dir.path / "run" / "epochs.csv");
  CHECK(epochs.rfind("epoch,loss,val_auprc,val_auroc,seconds", 0) == 0);

  // default config echo check (no overrides)
  std::string echo;
  run_capture({"train", "--corpus", dir.str("corpus.jsonl"), "--out", dir.str("run_defaults"),
               "--epochs", "1", "--hidden", "8", "--embedding-dim", "6"},
              &echo);
  CHECK(echo.find("epochs=1") != std::string::npos);
  CHECK(echo.find("hidden=8") != std::string::npos);

  std::string eval_out;
  CHECK(run_capture({"eval", "--checkpoint", dir.str("run/checkpoint.json"), "--corpus",
                     dir.str("corpus.jsonl"), "--out", dir.str("eval")},
                    &eval_out) == 0);
  CHECK(fs::exists(dir.path / "eval" / "metrics.csv"));
  const std::string metrics = read_file(dir.path / "eval" / "metrics.csv");
  CHECK(metrics.rfind("variant,seed,split,bucket,n,auprc,auroc", 0) == 0);

  // pick a patient id from the corpus for the PCA export
  const auto records = mlhg::corpus::parse_corpus(dir.str("corpus.jsonl"));
  REQUIRE(!records.empty());
  std::string pca_out;
  const int pca_code = run_capture({"export-pca", "--checkpoint", dir.str("run/checkpoint.json"),
                                    "--corpus", dir.str("corpus.jsonl"), "--patient",
                                    records[0].patient_id, "--out", dir.str("pca"), "--dump-graph",
                                    dir.str("pca/graph.json")},
                                   &pca_out);
  CHECK(pca_code == 0);
  const std::string pca = read_file(dir.path / "pca" / "pca.csv");
  CHECK(pca.rfind("node_id,token,taxonomy,type,x,y", 0) == 0);
  CHECK(fs::exists(dir.path / "pca" / "graph.json"));
}

TEST_CASE("cli: flags override config file keys") {
  TempDir dir("mlhg_cli_config");
  write_file(dir.path / "spec.json", spec_json(24, 9));
  REQUIRE(run_capture({"synth", "--spec", dir.str("spec.json"), "--out", dir.str()}) == 0);
  write_file(dir.path / "run.conf",
             "corpus = " + dir.str("corpus.jsonl") + "\nepochs = 3\nhidden = 8\nembedding_dim = 6\nlr = 0.01\n");

  std::string out;
  const int code = run_capture(
      {"train", "--config", dir.str("run.conf"), "--out", dir.str("run"), "--epochs", "1"}, &out);
  CHECK(code == 0);
  CHECK(out.find("epochs=1") != std::string::npos);   // flag wins
  CHECK(out.find("lr=0.01") != std::string::npos);    // config wins over default
  CHECK(out.find("hidden=8") != std::string::npos);
}

TEST_CASE("cli: runtime failures exit 1 with a message") {
  std::string err;
  CHECK(run_capture({"train", "--corpus", "/nonexistent/corpus.jsonl"}, nullptr, &err) == 1);
  CHECK(err.find("error:") != std::string::npos);
}

TEST_CASE("cli: ablate writes variant table") {
  TempDir dir("mlhg_cli_ablate");
  write_file(dir.path / "spec.json", spec_json(40, 4));
  REQUIRE(run_capture({"synth", "--spec", dir.str("spec.json"), "--out", dir.str()}) == 0);
  std::string out;
  const int code = run_capture({"ablate", "--corpus", dir.str("corpus.jsonl"), "--out", dir.str("sweep"),
                                "--variants", "full,homogeneous", "--seeds", "1", "--epochs", "2",
                                "--hidden", "8", "--embedding-dim", "6", "--test-fraction", "0.3"},
                               &out);
  CHECK(code == 0);
  const std::string table = read_file(dir.path / "sweep" / "ablation.csv");
  CHECK(table.rfind("variant,seeds,auprc_mean,auprc_std,auroc_mean,auroc_std", 0) == 0);
  CHECK(table.find("full,1,") != std::string::npos);
  CHECK(table.find("homogeneous,1,") != std::string::npos);
  CHECK(fs::exists(dir.path / "sweep" / "metrics.csv"));
}

TEST_CASE("checkpoint: save/load round trip preserves parameters bit-exactly") {
  TempDir dir("mlhg_ckpt");
  write_file(dir.path / "spec.json", spec_json(20, 2));
  REQUIRE(run_capture({"synth", "--spec", dir.str("spec.json"), "--out", dir.str()}) == 0);
  REQUIRE(run_capture({"train", "--corpus", dir.str("corpus.jsonl"), "--out", dir.str("run"), "--epochs",
                       "1", "--hidden", "8", "--embedding-dim", "6"}) == 0);

  const auto ckpt = mlhg::checkpoint::load(dir.path / "run" / "checkpoint.json");
  const fs::path copy = dir.path / "copy.json";
  mlhg::checkpoint::save(copy, ckpt);
  const auto again = mlhg::checkpoint::load(copy);
  auto a = ckpt.params.tensors();
  auto b = again.params.tensors();
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t k = 0; k < a[i].size; ++k) CHECK(a[i].data[k] == b[i].data[k]);
  CHECK(ckpt.ctx.vocab.tokens() == again.ctx.vocab.tokens());

  // tampered vocabulary is rejected by the hash
  auto text = read_file(copy);
  const auto pos = text.find("\"vocab\": [");
  REQUIRE(pos != std::string::npos);
  const auto quote = text.find('"', pos + 11);
  text[quote + 1] = text[quote + 1] == 'z' ? 'y' : 'z';
  write_file(copy, text);
  CHECK_THROWS(mlhg::checkpoint::load(copy));
}
