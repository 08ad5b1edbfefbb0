#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "mlhg/corpus.hpp"
#include "mlhg/matrix.hpp"
#include "mlhg/model.hpp"
#include "mlhg/training.hpp"

namespace mlhg::evaluation {

struct RankedPredictions {
  std::vector<double> scores;
  std::vector<int> labels;
  std::vector<std::string> patient_ids;  // optional, parallel when present
};

// Mann-Whitney statistic: (#correctly ordered positive/negative pairs +
// 0.5 * #tied pairs) / (P * N). Needs at least one of each class.
double auroc(const RankedPredictions& preds);

// Average precision over the descending-score ranking, ties kept in input
// order. Needs at least one positive.
double auprc(const RankedPredictions& preds);

struct BucketMetrics {
  std::size_t n = 0;
  std::optional<double> auprc;  // absent without a positive
  std::optional<double> auroc;  // absent without both classes
};

struct MetricReport {
  std::string variant;
  std::uint64_t seed = 0;
  BucketMetrics overall;
  BucketMetrics short_bucket;
  BucketMetrics medium_bucket;
  BucketMetrics long_bucket;
};

// Eval-mode forward over every patient, overall metrics plus length-bucketed
// sub-reports (one trained model, bucket-sliced at evaluation).
MetricReport evaluate(const model::ModelParams& params, const std::vector<corpus::PatientRecord>& records,
                      const training::CorpusContext& ctx, const model::VariantConfig& variant,
                      int batch_size = 32);

struct AblationRow {
  std::string variant;
  std::size_t n_seeds = 0;
  double auprc_mean = 0.0, auprc_std = 0.0;
  double auroc_mean = 0.0, auroc_std = 0.0;
};

struct AblationTable {
  std::vector<AblationRow> rows;
  std::vector<MetricReport> runs;  // one per (variant, seed)
};

// fit + evaluate per (variant, seed); mean and population standard deviation
// of the overall test metrics per variant. Variant names are validated before
// any training starts.
AblationTable run_ablations(const std::vector<corpus::PatientRecord>& train_records,
                            const std::vector<corpus::PatientRecord>& test_records,
                            const training::CorpusContext& ctx, const training::TrainConfig& base_config,
                            const std::vector<std::string>& variants,
                            const std::vector<std::uint64_t>& seeds);

struct PcaProjection {
  Matrix components;    // k x d, orthonormal rows
  Matrix coordinates;   // n x k
  std::vector<double> explained_variance_ratio;  // non-increasing, in [0,1]
};

// Top-k principal components by power iteration with deflation (tolerance
// 1e-9, at most 1000 iterations per component, seeded start vectors).
PcaProjection pca_project(const Matrix& embeddings, int k = 2, std::uint64_t seed = 0);

struct PcaRowMeta {
  std::size_t node_id = 0;
  std::string token;
  std::string taxonomy;
  std::string type;
};

std::string metrics_csv_header();  // variant,seed,split,bucket,n,auprc,auroc
void write_metrics_csv(const std::string& path, const std::vector<MetricReport>& reports,
                       const std::string& split);
std::vector<std::string> metrics_csv_rows(const MetricReport& report, const std::string& split);

std::string ablation_csv_header();
void write_ablation_csv(const std::string& path, const AblationTable& table);

std::string pca_csv_header();  // node_id,token,taxonomy,type,x,y
void write_pca_csv(const std::string& path, const PcaProjection& projection,
                   const std::vector<PcaRowMeta>& meta);

}  // namespace mlhg::evaluation
