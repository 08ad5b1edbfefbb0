#include "mlhg/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include "mlhg/errors.hpp"
#include "mlhg/rng.hpp"

namespace mlhg::evaluation {

namespace {

std::string fmt6(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

std::string opt6(const std::optional<double>& v) { return v ? fmt6(*v) : "undefined"; }

}  // namespace

double auroc(const RankedPredictions& preds) {
  const auto n = preds.scores.size();
  if (preds.labels.size() != n) throw std::invalid_argument("auroc: scores/labels length mismatch");
  unsigned long long pos = 0, neg = 0;
  for (int y : preds.labels) (y == 1 ? pos : neg) += 1;
  if (pos == 0 || neg == 0) throw ValidationError("auroc: undefined for single-class input");

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return preds.scores[a] < preds.scores[b]; });

  // Walk ascending tie groups; integer pair counts keep the result exactly
  // equal to exhaustive pair enumeration.
  unsigned long long correct = 0, tied = 0, neg_below = 0;
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    unsigned long long group_pos = 0, group_neg = 0;
    while (j < n && preds.scores[order[j]] == preds.scores[order[i]]) {
      (preds.labels[order[j]] == 1 ? group_pos : group_neg) += 1;
      ++j;
    }
    correct += group_pos * neg_below;
    tied += group_pos * group_neg;
    neg_below += group_neg;
    i = j;
  }
  return (static_cast<double>(correct) + 0.5 * static_cast<double>(tied)) /
         (static_cast<double>(pos) * static_cast<double>(neg));
}

double auprc(const RankedPredictions& preds) {
  const auto n = preds.scores.size();
  if (preds.labels.size() != n) throw std::invalid_argument("auprc: scores/labels length mismatch");
  unsigned long long pos = 0;
  for (int y : preds.labels) pos += (y == 1);
  if (pos == 0) throw ValidationError("auprc: undefined without a positive");

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return preds.scores[a] > preds.scores[b]; });

  double sum = 0.0;
  unsigned long long seen_pos = 0;
  for (std::size_t rank = 1; rank <= n; ++rank) {
    if (preds.labels[order[rank - 1]] == 1) {
      ++seen_pos;
      sum += static_cast<double>(seen_pos) / static_cast<double>(rank);
    }
  }
  return sum / static_cast<double>(pos);
}

namespace {

BucketMetrics bucket_metrics(const std::vector<double>& scores, const std::vector<int>& labels) {
  BucketMetrics out;
  out.n = scores.size();
  const bool has_pos = std::count(labels.begin(), labels.end(), 1) > 0;
  const bool has_neg = std::count(labels.begin(), labels.end(), 0) > 0;
  if (has_pos) out.auprc = auprc({scores, labels, {}});
  if (has_pos && has_neg) out.auroc = auroc({scores, labels, {}});
  return out;
}

}  // namespace

MetricReport evaluate(const model::ModelParams& params, const std::vector<corpus::PatientRecord>& records,
                      const training::CorpusContext& ctx, const model::VariantConfig& variant,
                      int batch_size) {
  if (records.empty()) throw ValidationError("evaluate: empty split");

  std::vector<hypergraph::PatientHypergraph> graphs;
  graphs.reserve(records.size());
  for (const auto& r : records)
    graphs.push_back(hypergraph::construct(r, ctx.vocab, ctx.embeddings, ctx.taxonomies, ctx.dims));

  std::vector<double> scores(records.size());
  std::vector<int> labels(records.size());
  const auto bs = static_cast<std::size_t>(std::max(batch_size, 1));
  for (std::size_t begin = 0; begin < graphs.size(); begin += bs) {
    const std::size_t end = std::min(begin + bs, graphs.size());
    std::vector<const hypergraph::PatientHypergraph*> ptrs;
    for (std::size_t i = begin; i < end; ++i) ptrs.push_back(&graphs[i]);
    const auto batched = hypergraph::batch(std::span<const hypergraph::PatientHypergraph* const>(ptrs));
    const auto trace = model::forward(batched, params, variant, model::Mode::kEval, 0);
    for (std::size_t g = 0; g < batched.num_graphs; ++g) {
      scores[begin + g] = trace.probs[g];
      labels[begin + g] = batched.labels[g];
    }
  }

  const bool has_pos = std::count(labels.begin(), labels.end(), 1) > 0;
  const bool has_neg = std::count(labels.begin(), labels.end(), 0) > 0;
  if (!has_pos || !has_neg) throw ValidationError("evaluate: split must contain both classes");

  MetricReport report;
  report.variant = variant.name;
  report.overall = bucket_metrics(scores, labels);

  std::vector<double> bucket_scores[3];
  std::vector<int> bucket_labels[3];
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto b = static_cast<std::size_t>(corpus::bucket_of(records[i]));
    bucket_scores[b].push_back(scores[i]);
    bucket_labels[b].push_back(labels[i]);
  }
  report.short_bucket = bucket_metrics(bucket_scores[0], bucket_labels[0]);
  report.medium_bucket = bucket_metrics(bucket_scores[1], bucket_labels[1]);
  report.long_bucket = bucket_metrics(bucket_scores[2], bucket_labels[2]);
  return report;
}

AblationTable run_ablations(const std::vector<corpus::PatientRecord>& train_records,
                            const std::vector<corpus::PatientRecord>& test_records,
                            const training::CorpusContext& ctx, const training::TrainConfig& base_config,
                            const std::vector<std::string>& variants,
                            const std::vector<std::uint64_t>& seeds) {
  if (variants.empty() || seeds.empty()) throw std::invalid_argument("run_ablations: empty sweep");
  for (const auto& name : variants) model::apply_variant(name);  // fail fast

  AblationTable table;
  for (const auto& name : variants) {
    const auto variant = model::apply_variant(name);
    std::vector<double> auprcs, aurocs;
    for (std::uint64_t seed : seeds) {
      training::TrainConfig config = base_config;
      config.variant = name;
      config.seed = seed;
      auto fitted = training::fit(train_records, ctx, config);
      MetricReport report = evaluate(fitted.params, test_records, ctx, variant, config.batch_size);
      report.seed = seed;
      if (report.overall.auprc) auprcs.push_back(*report.overall.auprc);
      if (report.overall.auroc) aurocs.push_back(*report.overall.auroc);
      table.runs.push_back(std::move(report));
    }
    auto mean_std = [](const std::vector<double>& xs) {
      if (xs.empty()) return std::pair<double, double>{0.0, 0.0};
      const double mean = std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
      double var = 0.0;
      for (double x : xs) var += (x - mean) * (x - mean);
      var /= static_cast<double>(xs.size());
      return std::pair<double, double>{mean, std::sqrt(var)};
    };
    AblationRow row;
    row.variant = name;
    row.n_seeds = seeds.size();
    std::tie(row.auprc_mean, row.auprc_std) = mean_std(auprcs);
    std::tie(row.auroc_mean, row.auroc_std) = mean_std(aurocs);
    table.rows.push_back(std::move(row));
  }
  return table;
}

PcaProjection pca_project(const Matrix& embeddings, int k, std::uint64_t seed) {
  const auto n = embeddings.rows();
  const auto d = embeddings.cols();
  if (n < 2 || d < 2) throw std::invalid_argument("pca_project: need n >= 2 and d >= 2");
  if (k < 1 || static_cast<std::size_t>(k) > d) throw std::invalid_argument("pca_project: bad component count");

  Matrix centered = embeddings;
  std::vector<double> mean(d, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) mean[j] += embeddings(i, j);
  for (auto& v : mean) v /= static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) centered(i, j) -= mean[j];

  Matrix cov = matmul_at_b(centered, centered);
  for (std::size_t i = 0; i < cov.size(); ++i) cov.data()[i] /= static_cast<double>(n - 1);

  double total_variance = 0.0;
  for (std::size_t j = 0; j < d; ++j) total_variance += cov(j, j);
  if (total_variance <= 1e-300) throw ValidationError("pca_project: zero total variance");

  constexpr double kTol = 1e-9;
  constexpr int kMaxIters = 1000;

  Rng rng(sub_seed(seed, seed_role::kPcaStart));
  Matrix deflated = cov;
  PcaProjection out;
  out.components = Matrix(static_cast<std::size_t>(k), d);
  out.explained_variance_ratio.resize(static_cast<std::size_t>(k));

  std::vector<double> v(d), next(d);
  for (int c = 0; c < k; ++c) {
    for (auto& x : v) x = rng.gaussian();
    // Orthogonalize the start against found components.
    for (int prev = 0; prev < c; ++prev) {
      double dot = 0.0;
      for (std::size_t j = 0; j < d; ++j) dot += v[j] * out.components(static_cast<std::size_t>(prev), j);
      for (std::size_t j = 0; j < d; ++j) v[j] -= dot * out.components(static_cast<std::size_t>(prev), j);
    }
    double norm = std::sqrt(std::inner_product(v.begin(), v.end(), v.begin(), 0.0));
    for (auto& x : v) x /= norm;

    for (int iter = 0; iter < kMaxIters; ++iter) {
      for (std::size_t i = 0; i < d; ++i) {
        double acc = 0.0;
        for (std::size_t j = 0; j < d; ++j) acc += deflated(i, j) * v[j];
        next[i] = acc;
      }
      norm = std::sqrt(std::inner_product(next.begin(), next.end(), next.begin(), 0.0));
      if (norm <= 1e-300) break;  // deflated matrix annihilates v; keep current estimate
      for (auto& x : next) x /= norm;
      double diff = 0.0;
      for (std::size_t j = 0; j < d; ++j) diff += (next[j] - v[j]) * (next[j] - v[j]);
      v = next;
      if (std::sqrt(diff) < kTol) break;
    }

    // Rayleigh quotient against the original covariance.
    double lambda = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
      double acc = 0.0;
      for (std::size_t j = 0; j < d; ++j) acc += cov(i, j) * v[j];
      lambda += v[i] * acc;
    }
    for (std::size_t j = 0; j < d; ++j) out.components(static_cast<std::size_t>(c), j) = v[j];
    out.explained_variance_ratio[static_cast<std::size_t>(c)] = lambda / total_variance;

    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t j = 0; j < d; ++j) deflated(i, j) -= lambda * v[i] * v[j];
  }

  out.coordinates = matmul_a_bt(centered, out.components);
  return out;
}

std::string metrics_csv_header() { return "variant,seed,split,bucket,n,auprc,auroc"; }

std::vector<std::string> metrics_csv_rows(const MetricReport& report, const std::string& split) {
  auto row = [&](const char* bucket, const BucketMetrics& m) {
    return report.variant + "," + std::to_string(report.seed) + "," + split + "," + bucket + "," +
           std::to_string(m.n) + "," + opt6(m.auprc) + "," + opt6(m.auroc);
  };
  return {row("all", report.overall), row("short", report.short_bucket),
          row("medium", report.medium_bucket), row("long", report.long_bucket)};
}

void write_metrics_csv(const std::string& path, const std::vector<MetricReport>& reports,
                       const std::string& split) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write metrics CSV: " + path);
  out << metrics_csv_header() << '\n';
  for (const auto& report : reports)
    for (const auto& row : metrics_csv_rows(report, split)) out << row << '\n';
}

std::string ablation_csv_header() {
  return "variant,seeds,auprc_mean,auprc_std,auroc_mean,auroc_std";
}

void write_ablation_csv(const std::string& path, const AblationTable& table) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write ablation CSV: " + path);
  out << ablation_csv_header() << '\n';
  for (const auto& row : table.rows)
    out << row.variant << ',' << row.n_seeds << ',' << fmt6(row.auprc_mean) << ',' << fmt6(row.auprc_std)
        << ',' << fmt6(row.auroc_mean) << ',' << fmt6(row.auroc_std) << '\n';
}

std::string pca_csv_header() { return "node_id,token,taxonomy,type,x,y"; }

void write_pca_csv(const std::string& path, const PcaProjection& projection,
                   const std::vector<PcaRowMeta>& meta) {
  if (projection.coordinates.rows() != meta.size())
    throw std::invalid_argument("write_pca_csv: meta size mismatch");
  if (projection.coordinates.cols() < 2) throw std::invalid_argument("write_pca_csv: need 2 components");
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write PCA CSV: " + path);
  out << pca_csv_header() << '\n';
  for (std::size_t i = 0; i < meta.size(); ++i)
    out << meta[i].node_id << ',' << meta[i].token << ',' << meta[i].taxonomy << ',' << meta[i].type << ','
        << fmt6(projection.coordinates(i, 0)) << ',' << fmt6(projection.coordinates(i, 1)) << '\n';
}

}  // namespace mlhg::evaluation
