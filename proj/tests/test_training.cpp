#include <cmath>

#include "doctest.h"
#include "mlhg/errors.hpp"
#include "mlhg/training.hpp"
#include "oracles.hpp"

using namespace mlhg;
using namespace mlhg::training;

namespace {

// A tiny separable corpus: positives carry a marker token, negatives don't.
std::vector<corpus::PatientRecord> separable_corpus(int n) {
  std::vector<corpus::PatientRecord> records;
  for (int i = 0; i < n; ++i) {
    corpus::PatientRecord p;
    p.patient_id = "p" + std::to_string(i);
    p.label = i % 2;
    corpus::RawNote note;
    note.note_id = p.patient_id + "_n0";
    note.taxonomy = "A";
    note.hour = 1.0;
    note.text = p.label == 1 ? "sick marker flag" : "well calm rest";
    p.notes.push_back(note);
    corpus::RawNote second;
    second.note_id = p.patient_id + "_n1";
    second.taxonomy = "B";
    second.hour = 2.0;
    second.text = "common filler words";
    p.notes.push_back(second);
    records.push_back(std::move(p));
  }
  return records;
}

struct Prepared {
  std::vector<corpus::PatientRecord> records;
  CorpusContext ctx;
};

Prepared context_for(const std::vector<corpus::PatientRecord>& raw, int d_w,
                     corpus::PreprocessConfig prep = {}) {
  auto pre = corpus::preprocess(raw, prep);
  auto emb = corpus::load_embeddings(std::nullopt, pre.vocab, d_w, 0);
  Prepared out;
  out.ctx = build_context(pre.records, std::move(pre.vocab), std::move(pre.taxonomies), std::move(emb), prep);
  out.records = std::move(pre.records);
  return out;
}

}  // namespace

TEST_CASE("bce_loss: ln 2 at even odds, symmetry, clamp at the limit") {
  CHECK(bce_loss(0.5, 1) == doctest::Approx(0.6931471805599453));
  CHECK(bce_loss(1.0, 1) == doctest::Approx(0.0).epsilon(1e-6));
  CHECK(bce_loss(1e-9, 1) == doctest::Approx(-std::log(1e-7)));
  Rng rng(1);
  for (int i = 0; i < 50; ++i) {
    const double y_hat = rng.uniform();
    CHECK(bce_loss(y_hat, 1) == doctest::Approx(bce_loss(1.0 - y_hat, 0)));
    CHECK(bce_loss(y_hat, 1) >= 0.0);
  }
}

TEST_CASE("adam_step: zero gradient leaves parameters unchanged") {
  hypergraph::GraphDims dims;
  dims.d_w = 3;
  dims.mne_rows = 2;
  dims.mte_rows = 2;
  auto params = model::init_params(dims, 2, 4, 0.0, 0);
  const auto before = params;
  auto grads = model::zeros_like(params);
  auto state = init_optimizer(params);
  TrainConfig config;
  adam_step(params, grads, state, config);
  auto pv = params.tensors();
  auto bv = before.tensors();
  for (std::size_t i = 0; i < pv.size(); ++i)
    for (std::size_t k = 0; k < pv[i].size; ++k) CHECK(pv[i].data[k] == bv[i].data[k]);
  CHECK(state.t == 1);
}

TEST_CASE("adam_step: first step with unit gradient moves by about -lr") {
  hypergraph::GraphDims dims;
  dims.d_w = 2;
  dims.mne_rows = 1;
  dims.mte_rows = 1;
  auto params = model::init_params(dims, 1, 2, 0.0, 0);
  auto grads = model::zeros_like(params);
  grads.classifier_b = 1.0;
  const double before = params.classifier_b;
  auto state = init_optimizer(params);
  TrainConfig config;
  adam_step(params, grads, state, config);
  CHECK(params.classifier_b - before == doctest::Approx(-0.001).epsilon(1e-4));
}

TEST_CASE("adam_step: deterministic and step magnitude bounded by 2*lr") {
  hypergraph::GraphDims dims;
  dims.d_w = 3;
  dims.mne_rows = 2;
  dims.mte_rows = 2;
  TrainConfig config;
  Rng rng(5);

  auto params1 = model::init_params(dims, 2, 4, 0.0, 1);
  auto params2 = params1;
  auto state1 = init_optimizer(params1);
  auto state2 = init_optimizer(params2);

  for (int step = 0; step < 20; ++step) {
    auto grads = model::zeros_like(params1);
    for (auto& t : grads.tensors())
      for (std::size_t k = 0; k < t.size; ++k) t.data[k] = rng.gaussian(0.0, 2.0);

    auto before = params1;
    adam_step(params1, grads, state1, config);
    adam_step(params2, grads, state2, config);

    auto pv = params1.tensors();
    auto qv = params2.tensors();
    auto bv = before.tensors();
    for (std::size_t i = 0; i < pv.size(); ++i)
      for (std::size_t k = 0; k < pv[i].size; ++k) {
        CHECK(pv[i].data[k] == qv[i].data[k]);
        CHECK(std::fabs(pv[i].data[k] - bv[i].data[k]) <= 2.0 * config.learning_rate + 1e-12);
      }
  }
}

TEST_CASE("adam_step: shape mismatch rejected") {
  hypergraph::GraphDims dims;
  dims.d_w = 3;
  dims.mne_rows = 2;
  dims.mte_rows = 2;
  auto params = model::init_params(dims, 2, 4, 0.0, 0);
  auto other = model::init_params(dims, 1, 4, 0.0, 0);
  auto grads = model::zeros_like(other);
  auto state = init_optimizer(params);
  TrainConfig config;
  CHECK_THROWS_AS(adam_step(params, grads, state, config), std::invalid_argument);
}

TEST_CASE("fit: defaults mirror the reference hyperparameters") {
  TrainConfig config;
  CHECK(config.learning_rate == 0.001);
  CHECK(config.dropout == 0.3);
  CHECK(config.hidden_dim == 64);
  CHECK(config.epochs == 30);
  CHECK(config.batch_size == 32);
  CHECK(config.val_fraction == 0.2);
  CHECK(config.adam_beta1 == 0.9);
  CHECK(config.adam_beta2 == 0.999);
  CHECK(config.adam_eps == 1e-8);
}

TEST_CASE("fit: identical runs produce identical parameters and reports") {
  const auto raw = separable_corpus(14);
  const auto prep = context_for(raw, 4);
  TrainConfig config;
  config.epochs = 4;
  config.batch_size = 4;
  config.hidden_dim = 8;
  config.seed = 13;

  const auto a = fit(prep.records, prep.ctx, config);
  const auto b = fit(prep.records, prep.ctx, config);
  auto av = a.params.tensors();
  auto bv = b.params.tensors();
  for (std::size_t i = 0; i < av.size(); ++i)
    for (std::size_t k = 0; k < av[i].size; ++k) CHECK(av[i].data[k] == bv[i].data[k]);
  REQUIRE(a.reports.size() == b.reports.size());
  for (std::size_t e = 0; e < a.reports.size(); ++e) {
    CHECK(a.reports[e].mean_loss == b.reports[e].mean_loss);
    CHECK(a.reports[e].val_auroc == b.reports[e].val_auroc);
  }
}

TEST_CASE("fit: loss decreases on a separable corpus") {
  const auto raw = separable_corpus(20);
  const auto prep = context_for(raw, 6);
  TrainConfig config;
  config.epochs = 30;
  config.batch_size = 8;
  config.hidden_dim = 16;
  config.variant = "full";
  config.seed = 1;
  const auto result = fit(prep.records, prep.ctx, config);
  REQUIRE(result.reports.size() == 30);
  CHECK(result.reports.back().mean_loss < result.reports.front().mean_loss);
}

TEST_CASE("fit: single-class training split rejected") {
  std::vector<corpus::PatientRecord> raw = separable_corpus(12);
  for (auto& r : raw) r.label = 0;
  const auto prep = context_for(raw, 4);
  TrainConfig config;
  config.epochs = 1;
  CHECK_THROWS_AS(fit(prep.records, prep.ctx, config), ValidationError);
}

TEST_CASE("grad_check: analytic gradients match finite differences on seeds 0,1,2") {
  TrainConfig config;
  config.hidden_dim = 12;  // small hidden keeps the unit suite quick
  for (std::uint64_t seed : {0ull, 1ull, 2ull}) {
    const double err = grad_check(config, seed);
    CHECK(err < 1e-3);
  }
}

TEST_CASE("grad_check: sign-flipped backward is caught") {
  TrainConfig config;
  config.hidden_dim = 8;
  CHECK(grad_check(config, 0, GradCheckMode::kFlipSign) > 0.1);
}

TEST_CASE("epoch CSV format") {
  EpochReport r;
  r.epoch = 3;
  r.mean_loss = 0.51234567;
  r.val_auprc = 0.25;
  r.seconds = 0.125;
  CHECK(epoch_csv_header() == "epoch,loss,val_auprc,val_auroc,seconds");
  CHECK(epoch_csv_row(r) == "3,0.512346,0.250000,undefined,0.125000");
}
