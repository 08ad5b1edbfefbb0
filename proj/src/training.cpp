#include "mlhg/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "mlhg/errors.hpp"
#include "mlhg/evaluation.hpp"
#include "mlhg/rng.hpp"

namespace mlhg::training {

namespace {

constexpr double kProbClamp = 1e-7;

double clamp_prob(double y_hat) { return std::clamp(y_hat, kProbClamp, 1.0 - kProbClamp); }

std::vector<const hypergraph::PatientHypergraph*> slice(const std::vector<hypergraph::PatientHypergraph>& graphs,
                                                        const std::vector<std::size_t>& order,
                                                        std::size_t begin, std::size_t end) {
  std::vector<const hypergraph::PatientHypergraph*> out;
  out.reserve(end - begin);
  for (std::size_t i = begin; i < end; ++i) out.push_back(&graphs[order[i]]);
  return out;
}

}  // namespace

OptimizerState init_optimizer(const model::ModelParams& params) {
  OptimizerState state;
  for (const auto& t : params.tensors()) {
    state.m.emplace_back(t.size, 0.0);
    state.v.emplace_back(t.size, 0.0);
  }
  return state;
}

double bce_loss(double y_hat, int y) {
  const double p = clamp_prob(y_hat);
  return -(y * std::log(p) + (1 - y) * std::log(1.0 - p));
}

void adam_step(model::ModelParams& params, const model::Gradients& grads, OptimizerState& state,
               const TrainConfig& config) {
  auto param_views = params.tensors();
  auto grad_views = grads.tensors();
  if (param_views.size() != grad_views.size() || param_views.size() != state.m.size())
    throw std::invalid_argument("adam_step: tensor count mismatch");

  state.t += 1;
  const double b1 = config.adam_beta1;
  const double b2 = config.adam_beta2;
  const double bias1 = 1.0 - std::pow(b1, static_cast<double>(state.t));
  const double bias2 = 1.0 - std::pow(b2, static_cast<double>(state.t));

  for (std::size_t i = 0; i < param_views.size(); ++i) {
    if (param_views[i].size != grad_views[i].size)
      throw std::invalid_argument("adam_step: shape mismatch in tensor " + param_views[i].name);
    double* theta = param_views[i].data;
    const double* g = grad_views[i].data;
    auto& m = state.m[i];
    auto& v = state.v[i];
    for (std::size_t k = 0; k < param_views[i].size; ++k) {
      m[k] = b1 * m[k] + (1.0 - b1) * g[k];
      v[k] = b2 * v[k] + (1.0 - b2) * g[k] * g[k];
      const double m_hat = m[k] / bias1;
      const double v_hat = v[k] / bias2;
      theta[k] -= config.learning_rate * m_hat / (std::sqrt(v_hat) + config.adam_eps);
    }
  }
}

CorpusContext build_context(const std::vector<corpus::PatientRecord>& preprocessed, corpus::Vocab vocab,
                            corpus::TaxonomyTable taxonomies, corpus::EmbeddingTable embeddings,
                            const corpus::PreprocessConfig& prep) {
  CorpusContext ctx;
  ctx.dims = hypergraph::compute_dims(preprocessed, vocab, taxonomies, embeddings.dim, prep);
  ctx.vocab = std::move(vocab);
  ctx.taxonomies = std::move(taxonomies);
  ctx.embeddings = std::move(embeddings);
  ctx.prep = prep;
  return ctx;
}

FitResult fit(const std::vector<corpus::PatientRecord>& records, const CorpusContext& ctx,
              const TrainConfig& config) {
  if (config.epochs < 1 || config.batch_size < 1)
    throw ValidationError("fit: epochs and batch_size must be >= 1");
  auto [train_records, val_records] = corpus::split_train_val(records, config.val_fraction, config.seed);

  bool has_pos = false, has_neg = false;
  for (const auto& r : train_records) (r.label == 1 ? has_pos : has_neg) = true;
  if (!has_pos || !has_neg) throw ValidationError("fit: training split contains a single class");

  const auto variant = model::apply_variant(config.variant);
  model::ModelParams params = model::init_params(ctx.dims, variant.schedule.size(), config.hidden_dim,
                                                 config.dropout, config.seed);
  OptimizerState state = init_optimizer(params);

  auto construct_all = [&](const std::vector<corpus::PatientRecord>& rs) {
    std::vector<hypergraph::PatientHypergraph> graphs;
    graphs.reserve(rs.size());
    for (const auto& r : rs) graphs.push_back(hypergraph::construct(r, ctx.vocab, ctx.embeddings, ctx.taxonomies, ctx.dims));
    return graphs;
  };
  const auto train_graphs = construct_all(train_records);
  const auto val_graphs = construct_all(val_records);

  const auto n_train = train_graphs.size();
  const auto batch_size = static_cast<std::size_t>(config.batch_size);

  FitResult result;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();

    std::vector<std::size_t> order(n_train);
    for (std::size_t i = 0; i < n_train; ++i) order[i] = i;
    Rng shuffle_rng(sub_seed(config.seed, seed_role::kEpochShuffle) + static_cast<std::uint64_t>(epoch));
    shuffle_rng.shuffle(order);

    double loss_sum = 0.0;
    std::size_t batch_index = 0;
    for (std::size_t begin = 0; begin < n_train; begin += batch_size, ++batch_index) {
      const std::size_t end = std::min(begin + batch_size, n_train);
      const auto ptrs = slice(train_graphs, order, begin, end);
      const auto batched = hypergraph::batch(std::span<const hypergraph::PatientHypergraph* const>(ptrs));

      const std::uint64_t dropout_seed = sub_seed(config.seed, seed_role::kDropout) +
                                         static_cast<std::uint64_t>(epoch) * 4096 + batch_index;
      const auto trace = model::forward(batched, params, variant, model::Mode::kTrain, dropout_seed);

      const auto b = static_cast<double>(batched.num_graphs);
      std::vector<double> dlogit(batched.num_graphs);
      for (std::size_t g = 0; g < batched.num_graphs; ++g) {
        loss_sum += bce_loss(trace.probs[g], batched.labels[g]);
        dlogit[g] = (trace.probs[g] - static_cast<double>(batched.labels[g])) / b;
      }
      const auto grads = model::backward(trace, batched, params, dlogit);
      adam_step(params, grads, state, config);
    }

    EpochReport report;
    report.epoch = epoch;
    report.mean_loss = loss_sum / static_cast<double>(n_train);

    if (!val_graphs.empty()) {
      std::vector<double> scores;
      std::vector<int> labels;
      for (std::size_t begin = 0; begin < val_graphs.size(); begin += batch_size) {
        const std::size_t end = std::min(begin + batch_size, val_graphs.size());
        std::vector<const hypergraph::PatientHypergraph*> ptrs;
        for (std::size_t i = begin; i < end; ++i) ptrs.push_back(&val_graphs[i]);
        const auto batched = hypergraph::batch(std::span<const hypergraph::PatientHypergraph* const>(ptrs));
        const auto trace = model::forward(batched, params, variant, model::Mode::kEval, 0);
        for (std::size_t g = 0; g < batched.num_graphs; ++g) {
          scores.push_back(trace.probs[g]);
          labels.push_back(batched.labels[g]);
        }
      }
      const bool val_pos = std::count(labels.begin(), labels.end(), 1) > 0;
      const bool val_neg = std::count(labels.begin(), labels.end(), 0) > 0;
      if (val_pos) report.val_auprc = evaluation::auprc({scores, labels, {}});
      if (val_pos && val_neg) report.val_auroc = evaluation::auroc({scores, labels, {}});
    }

    report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    result.reports.push_back(report);
  }

  result.params = std::move(params);
  return result;
}

namespace {

// Small fixed scene for gradient verification: one patient, 2 notes with
// distinct taxonomies, at most 10 distinct tokens.
struct GradCheckScene {
  CorpusContext ctx;
  std::vector<corpus::PatientRecord> records;
};

GradCheckScene make_scene(std::uint64_t seed) {
  Rng rng(sub_seed(seed, seed_role::kGradCheck));
  const std::vector<std::string> pool = {"alpha", "beta", "gamma", "delta", "epsilon",
                                         "zeta", "eta", "theta", "iota", "kappa"};
  corpus::PatientRecord patient;
  patient.patient_id = "gc0";
  patient.label = static_cast<int>(rng.below(2));
  for (int j = 0; j < 2; ++j) {
    corpus::RawNote note;
    note.note_id = "n" + std::to_string(j);
    note.taxonomy = j == 0 ? "taxA" : "taxB";
    note.hour = rng.uniform(0.0, 48.0);
    const int len = static_cast<int>(rng.range(3, 5));
    std::string text;
    for (int t = 0; t < len; ++t) {
      if (t) text.push_back(' ');
      text += pool[rng.below(pool.size())];
    }
    note.text = text;
    patient.notes.push_back(std::move(note));
  }
  std::stable_sort(patient.notes.begin(), patient.notes.end(),
                   [](const corpus::RawNote& a, const corpus::RawNote& b) { return a.hour < b.hour; });
  for (std::size_t j = 0; j < patient.notes.size(); ++j)
    patient.notes[j].note_id = "n" + std::to_string(j);

  corpus::PreprocessConfig prep;
  prep.max_notes = 4;
  prep.top_taxonomies = 2;
  auto pre = corpus::preprocess({patient}, prep);
  auto embeddings = corpus::load_embeddings(std::nullopt, pre.vocab, 6, seed);

  GradCheckScene scene;
  scene.ctx = build_context(pre.records, std::move(pre.vocab), std::move(pre.taxonomies),
                            std::move(embeddings), prep);
  scene.records = std::move(pre.records);
  return scene;
}

}  // namespace

namespace {

// Signature of every ReLU gate reached by a trace. A finite-difference probe
// is valid only while both samples stay on the base point's linear piece;
// any gate flip invalidates the pair.
std::uint64_t gate_pattern(const model::ForwardTrace& trace, const hypergraph::BatchedHypergraph& batch) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  auto mix_bit = [&](bool bit) {
    h ^= bit ? 0x9e3779b97f4a7c15ull : 0x2545f4914f6cdd1dull;
    h *= 0x100000001b3ull;
  };
  auto mix_matrix_rows = [&](const Matrix& m, std::size_t row0, std::size_t row1) {
    for (std::size_t r = row0; r < row1; ++r)
      for (std::size_t c = 0; c < m.cols(); ++c) mix_bit(m(r, c) > 0.0);
  };
  const std::size_t m = batch.incidence.num_note_edges;
  const std::size_t s = batch.incidence.num_tax_edges;
  // MTE affine ReLU gates live in the columns of the initial taxonomy rows.
  for (std::size_t t = 0; t < s; ++t)
    for (std::size_t c = 4; c < trace.edge_in.cols(); ++c) mix_bit(trace.edge_in(m + t, c) > 0.0);
  for (const auto& st : trace.stages) {
    mix_matrix_rows(st.node_act, 0, st.node_act.rows());
    if (st.note_op != model::BlockOp::kCopy) mix_matrix_rows(st.edge_act, 0, m);
    if (st.tax_op != model::BlockOp::kCopy) mix_matrix_rows(st.edge_act, m, m + s);
  }
  return h;
}

}  // namespace

double grad_check(const TrainConfig& config, std::uint64_t seed, GradCheckMode mode) {
  const auto scene = make_scene(seed);
  const auto graph = hypergraph::construct(scene.records.front(), scene.ctx.vocab, scene.ctx.embeddings,
                                           scene.ctx.taxonomies, scene.ctx.dims);
  const auto batched = hypergraph::batch(std::vector<hypergraph::PatientHypergraph>{graph});
  const int y = batched.labels.front();
  const std::uint64_t forward_seed = sub_seed(seed, seed_role::kDropout);

  // These schedules jointly give every tensor a live gradient path;
  // wo_global additionally exercises the width-lifting frozen stage.
  const std::vector<std::string> schedules = {"full", "homogeneous", "wo_global"};
  constexpr double kStep = 1e-4;
  constexpr double kMinStep = 1e-9;

  double max_rel_error = 0.0;
  for (const auto& name : schedules) {
    const auto variant = model::apply_variant(name);
    model::ModelParams params = model::init_params(scene.ctx.dims, variant.schedule.size(),
                                                   config.hidden_dim, config.dropout, seed);
    // Verify at a generic point: zero-init biases leave dead ReLU units
    // sitting exactly on the kink, where one-sided derivatives disagree with
    // any finite-difference probe.
    Rng jitter(sub_seed(seed, seed_role::kGradCheck) + 1);
    for (auto& t : params.tensors())
      for (std::size_t k = 0; k < t.size; ++k) t.data[k] += jitter.gaussian(0.0, 0.05);

    const auto sample = [&]() {
      const auto trace = model::forward(batched, params, variant, model::Mode::kTrain, forward_seed);
      return std::pair<double, std::uint64_t>{bce_loss(trace.probs.front(), y),
                                              gate_pattern(trace, batched)};
    };

    const auto trace = model::forward(batched, params, variant, model::Mode::kTrain, forward_seed);
    const std::uint64_t base_pattern = gate_pattern(trace, batched);
    const double dlogit = trace.probs.front() - static_cast<double>(y);
    auto grads = model::backward(trace, batched, params, std::span<const double>(&dlogit, 1));
    if (mode == GradCheckMode::kFlipSign) {
      for (auto& t : grads.tensors())
        for (std::size_t k = 0; k < t.size; ++k) t.data[k] = -t.data[k];
    }

    auto param_views = params.tensors();
    auto grad_views = grads.tensors();
    for (std::size_t ti = 0; ti < param_views.size(); ++ti) {
      for (std::size_t k = 0; k < param_views[ti].size; ++k) {
        double& theta = param_views[ti].data[k];
        const double saved = theta;
        double numeric = 0.0;
        // Shrink the probe step only when it provably crosses a ReLU kink
        // (gate pattern differs from the base point on either side).
        for (double h = kStep;; h *= 0.5) {
          theta = saved + h;
          const auto [plus, pattern_plus] = sample();
          theta = saved - h;
          const auto [minus, pattern_minus] = sample();
          theta = saved;
          numeric = (plus - minus) / (2.0 * h);
          if ((pattern_plus == base_pattern && pattern_minus == base_pattern) || h < kMinStep) break;
        }
        const double analytic = grad_views[ti].data[k];
        const double rel = std::fabs(analytic - numeric) /
                           std::max(1e-8, std::fabs(analytic) + std::fabs(numeric));
        max_rel_error = std::max(max_rel_error, rel);
      }
    }
  }
  return max_rel_error;
}

std::string epoch_csv_header() { return "epoch,loss,val_auprc,val_auroc,seconds"; }

namespace {
std::string fmt6(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}
}  // namespace

std::string epoch_csv_row(const EpochReport& r) {
  std::ostringstream out;
  out << r.epoch << ',' << fmt6(r.mean_loss) << ','
      << (r.val_auprc ? fmt6(*r.val_auprc) : "undefined") << ','
      << (r.val_auroc ? fmt6(*r.val_auroc) : "undefined") << ',' << fmt6(r.seconds);
  return out.str();
}

void write_epoch_csv(const std::string& path, const std::vector<EpochReport>& reports) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write epoch CSV: " + path);
  out << epoch_csv_header() << '\n';
  for (const auto& r : reports) out << epoch_csv_row(r) << '\n';
}

}  // namespace mlhg::training
