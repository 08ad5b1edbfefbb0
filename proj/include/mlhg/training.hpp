#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "mlhg/corpus.hpp"
#include "mlhg/hypergraph.hpp"
#include "mlhg/model.hpp"

namespace mlhg::training {

struct TrainConfig {
  double learning_rate = 0.001;
  double dropout = 0.3;
  int hidden_dim = 64;
  int epochs = 30;
  int batch_size = 32;
  std::uint64_t seed = 0;
  std::string variant = "full";
  double val_fraction = 0.2;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
};

// First/second-moment accumulators aligned with ModelParams::tensors().
struct OptimizerState {
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
  long t = 0;
};

OptimizerState init_optimizer(const model::ModelParams& params);

// L = -(y log yhat + (1-y) log(1-yhat)), yhat clamped to [1e-7, 1-1e-7].
double bce_loss(double y_hat, int y);

void adam_step(model::ModelParams& params, const model::Gradients& grads, OptimizerState& state,
               const TrainConfig& config);

struct EpochReport {
  int epoch = 0;
  double mean_loss = 0.0;
  std::optional<double> val_auprc;
  std::optional<double> val_auroc;  // absent when the validation split is single-class
  double seconds = 0.0;
};

// Everything a trained model needs to score new corpora.
struct CorpusContext {
  corpus::Vocab vocab;
  corpus::TaxonomyTable taxonomies;
  corpus::EmbeddingTable embeddings;
  corpus::PreprocessConfig prep;
  hypergraph::GraphDims dims;
};

CorpusContext build_context(const std::vector<corpus::PatientRecord>& preprocessed, corpus::Vocab vocab,
                            corpus::TaxonomyTable taxonomies, corpus::EmbeddingTable embeddings,
                            const corpus::PreprocessConfig& prep);

struct FitResult {
  model::ModelParams params;
  std::vector<EpochReport> reports;
};

// Full training loop: seeded val split, per-epoch seeded shuffle, fixed-size
// batches with the last partial batch kept, Adam updates, per-epoch
// validation metrics in eval mode.
FitResult fit(const std::vector<corpus::PatientRecord>& records, const CorpusContext& ctx,
              const TrainConfig& config);

enum class GradCheckMode { kNormal, kFlipSign };

// Compares analytic gradients against central finite differences (step 1e-4)
// on a random small graph, for every parameter tensor, over the schedules
// that jointly reach every tensor. Returns the max relative error
// |a - n| / max(1e-8, |a| + |n|). kFlipSign corrupts the analytic side and
// must blow the error up (mutation check for the checker itself).
double grad_check(const TrainConfig& config, std::uint64_t seed,
                  GradCheckMode mode = GradCheckMode::kNormal);

std::string epoch_csv_header();
std::string epoch_csv_row(const EpochReport& report);
void write_epoch_csv(const std::string& path, const std::vector<EpochReport>& reports);

}  // namespace mlhg::training
