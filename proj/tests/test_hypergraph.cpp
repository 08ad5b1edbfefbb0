#include <cmath>
#include <set>

#include "doctest.h"
#include "mlhg/errors.hpp"
#include "mlhg/hypergraph.hpp"
#include "mlhg/model.hpp"
#include "oracles.hpp"

using namespace mlhg;
using namespace mlhg::hypergraph;
using mlhg::corpus::PatientRecord;
using mlhg::corpus::RawNote;

namespace {

struct Scene {
  std::vector<PatientRecord> records;
  corpus::Vocab vocab;
  corpus::TaxonomyTable taxonomies;
  corpus::EmbeddingTable embeddings;
  GraphDims dims;
};

Scene prepare(std::vector<PatientRecord> raw, int d_w = 4, corpus::PreprocessConfig config = {}) {
  auto pre = corpus::preprocess(raw, config);
  Scene scene;
  scene.embeddings = corpus::load_embeddings(std::nullopt, pre.vocab, d_w, 1);
  scene.dims = compute_dims(pre.records, pre.vocab, pre.taxonomies, d_w, config);
  scene.records = std::move(pre.records);
  scene.vocab = std::move(pre.vocab);
  scene.taxonomies = std::move(pre.taxonomies);
  return scene;
}

PatientRecord two_note_patient() {
  PatientRecord p;
  p.patient_id = "p1";
  p.label = 1;
  p.notes = {{"n1", "A", 0.0, "x y"}, {"n2", "A", 1.0, "y z"}};
  return p;
}

}  // namespace

TEST_CASE("construct: shared token gets one node incident to both notes") {
  auto scene = prepare({two_note_patient()});
  const auto graph = construct(scene.records[0], scene.vocab, scene.embeddings, scene.taxonomies, scene.dims);

  CHECK(graph.incidence.num_nodes == 3);
  CHECK(graph.incidence.num_note_edges == 2);
  CHECK(graph.incidence.num_tax_edges == 1);

  // node "y" is the second distinct token
  const auto& y_edges = graph.incidence.node_edges[1];
  CHECK(y_edges == std::vector<int>{0, 1, 2});  // both notes + one taxonomy column
  CHECK(graph.node_tokens[1] == "y");
  // x and z see one note each plus the taxonomy
  CHECK(graph.incidence.node_edges[0] == std::vector<int>{0, 2});
  CHECK(graph.incidence.node_edges[2] == std::vector<int>{1, 2});
}

TEST_CASE("construct: single note single token gives A = [[1, 1]]") {
  PatientRecord p;
  p.patient_id = "p1";
  p.label = 0;
  p.notes = {{"n1", "A", 0.0, "hello"}};
  auto scene = prepare({p});
  const auto graph = construct(scene.records[0], scene.vocab, scene.embeddings, scene.taxonomies, scene.dims);
  CHECK(graph.incidence.num_nodes == 1);
  CHECK(graph.incidence.num_edges() == 2);
  CHECK(graph.incidence.node_edges[0] == std::vector<int>{0, 1});
}

TEST_CASE("construct: disjoint taxonomies give block-diagonal note incidence") {
  PatientRecord p;
  p.patient_id = "p1";
  p.label = 0;
  p.notes = {{"n1", "A", 0.0, "a b"}, {"n2", "B", 1.0, "c d"}};
  auto scene = prepare({p});
  const auto graph = construct(scene.records[0], scene.vocab, scene.embeddings, scene.taxonomies, scene.dims);
  CHECK(graph.incidence.num_tax_edges == 2);
  // nodes 0,1 from note 0; nodes 2,3 from note 1
  for (int v : {0, 1}) {
    CHECK(graph.incidence.node_edges[static_cast<std::size_t>(v)][0] == 0);
  }
  for (int v : {2, 3}) {
    CHECK(graph.incidence.node_edges[static_cast<std::size_t>(v)][0] == 1);
  }
  // each node has exactly one note and one taxonomy incidence
  for (std::size_t v = 0; v < 4; ++v) CHECK(graph.incidence.node_edges[v].size() == 2);
}

TEST_CASE("construct: meta block and feature layout") {
  auto scene = prepare({two_note_patient()});
  const auto graph = construct(scene.records[0], scene.vocab, scene.embeddings, scene.taxonomies, scene.dims);
  CHECK(graph.node_features.cols() == static_cast<std::size_t>(4 + scene.dims.d_w));

  // word node 0: type 0, word index 0 scaled by max index 2
  CHECK(graph.node_features(0, 0) == 0.0);
  CHECK(graph.node_features(0, 1) == 0.0);
  // word node 2 ("z"): word index 2 -> scaled to 1.0, first note ordinal 1
  CHECK(graph.node_features(2, 1) == 1.0);
  CHECK(graph.node_features(2, 2) == 1.0);
  // embedding block copied from the table
  for (int k = 0; k < scene.dims.d_w; ++k)
    CHECK(graph.node_features(0, 4 + static_cast<std::size_t>(k)) ==
          scene.embeddings.rows(0, static_cast<std::size_t>(k)));
}

TEST_CASE("construct: unknown token or taxonomy is a contract violation") {
  auto scene = prepare({two_note_patient()});
  PatientRecord rogue = scene.records[0];
  rogue.notes[0].text = "unseen";
  CHECK_THROWS_AS(construct(rogue, scene.vocab, scene.embeddings, scene.taxonomies, scene.dims),
                  ValidationError);
  PatientRecord empty;
  empty.patient_id = "e";
  CHECK_THROWS_AS(construct(empty, scene.vocab, scene.embeddings, scene.taxonomies, scene.dims),
                  ValidationError);
}

TEST_CASE("hour_encoding: closed form at zero and floor rule") {
  const auto at0 = hour_encoding(0.0, 6);
  for (int i = 0; i < 6; ++i) CHECK(at0[static_cast<std::size_t>(i)] == (i % 2 == 0 ? 0.0 : 1.0));
  CHECK(hour_encoding(5.0, 8) == hour_encoding(5.9, 8));
  CHECK(hour_encoding(5.0, 8) != hour_encoding(6.0, 8));
}

TEST_CASE("init_note_edge: MNE lookup plus hour encoding, meta sentinel") {
  GraphDims dims;
  dims.d_w = 4;
  dims.max_word_index = 9;
  dims.max_note_ordinal = 3;
  dims.max_tax_index = 1;
  dims.mne_rows = 4;
  dims.mte_rows = 2;
  auto params = model::init_params(dims, 3, 8, 0.0, 0);

  const auto v = model::init_note_edge(2, 7.3, 1, dims, params);
  REQUIRE(v.size() == 8);
  CHECK(v[0] == 1.0);   // type code
  CHECK(v[1] == -1.0);  // word sentinel
  CHECK(v[2] == doctest::Approx(2.0 / 3.0));
  CHECK(v[3] == 1.0);
  const auto he = hour_encoding(7.3, 4);
  for (int k = 0; k < 4; ++k)
    CHECK(v[4 + static_cast<std::size_t>(k)] ==
          params.mne(2, static_cast<std::size_t>(k)) + he[static_cast<std::size_t>(k)]);

  const auto again = model::init_note_edge(2, 7.3, 1, dims, params);
  CHECK(v == again);
  CHECK_THROWS_AS(model::init_note_edge(4, 0.0, 0, dims, params), std::invalid_argument);
}

TEST_CASE("init_taxonomy_edge: meta block, determinism, zero propagation") {
  GraphDims dims;
  dims.d_w = 4;
  dims.max_word_index = 9;
  dims.max_note_ordinal = 3;
  dims.max_tax_index = 1;
  dims.mne_rows = 4;
  dims.mte_rows = 2;
  auto params = model::init_params(dims, 3, 8, 0.0, 0);

  const auto v = model::init_taxonomy_edge(1, dims, params);
  CHECK(v[0] == 2.0);
  CHECK(v[1] == -1.0);
  CHECK(v[2] == -1.0);
  CHECK(v[3] == 1.0);
  CHECK(v == model::init_taxonomy_edge(1, dims, params));
  CHECK_THROWS_AS(model::init_taxonomy_edge(2, dims, params), std::invalid_argument);

  params.mte.fill(0.0);
  std::fill(params.mte_affine_b.begin(), params.mte_affine_b.end(), 0.0);
  const auto zero = model::init_taxonomy_edge(0, dims, params);
  for (std::size_t k = 4; k < zero.size(); ++k) CHECK(zero[k] == 0.0);
}

TEST_CASE("degrees: masked counts match the worked example") {
  // 2 nodes, both in one note edge and one taxonomy edge.
  IncidenceMatrix inc;
  inc.num_nodes = 2;
  inc.num_note_edges = 1;
  inc.num_tax_edges = 1;
  inc.node_edges = {{0, 1}, {0, 1}};
  inc.edge_nodes = {{0, 1}, {0, 1}};

  const auto all = degrees(inc, LevelMask::kAll);
  CHECK(all.node == std::vector<double>{2.0, 2.0});
  CHECK(all.edge == std::vector<double>{2.0, 2.0});
  CHECK(1.0 / (std::sqrt(all.node[0]) * std::sqrt(all.edge[0])) == doctest::Approx(0.5));

  const auto note_only = degrees(inc, LevelMask::kNoteOnly);
  CHECK(note_only.node == std::vector<double>{1.0, 1.0});
  CHECK(1.0 / (std::sqrt(note_only.node[0]) * std::sqrt(note_only.edge[0])) ==
        doctest::Approx(1.0 / std::sqrt(2.0)));

  // Isolated after masking: degree clamps to 1.
  IncidenceMatrix lonely;
  lonely.num_nodes = 1;
  lonely.num_note_edges = 1;
  lonely.num_tax_edges = 1;
  lonely.node_edges = {{1}};  // taxonomy only
  lonely.edge_nodes = {{}, {0}};
  const auto masked = degrees(lonely, LevelMask::kNoteOnly);
  CHECK(masked.node[0] == 1.0);
  CHECK(masked.edge[0] == 1.0);
}

TEST_CASE("degrees match the dense oracle on random graphs") {
  mlhg::Rng rng(23);
  for (int trial = 0; trial < 10; ++trial) {
    auto patient = oracles::random_patient(rng, trial);
    auto scene = prepare({patient});
    const auto graph =
        construct(scene.records[0], scene.vocab, scene.embeddings, scene.taxonomies, scene.dims);
    for (LevelMask mask : {LevelMask::kAll, LevelMask::kNoteOnly, LevelMask::kTaxonomyOnly}) {
      const auto sparse = degrees(graph.incidence, mask);
      const auto dense = oracles::dense_degrees(oracles::dense_incidence(graph.incidence, mask));
      CHECK(sparse.node == dense.node);
      CHECK(sparse.edge == dense.edge);
    }
  }
}

TEST_CASE("mask complementarity: note and taxonomy incidences partition the whole") {
  mlhg::Rng rng(31);
  for (int trial = 0; trial < 10; ++trial) {
    auto scene = prepare({oracles::random_patient(rng, trial)});
    const auto graph =
        construct(scene.records[0], scene.vocab, scene.embeddings, scene.taxonomies, scene.dims);
    const auto a_all = oracles::dense_incidence(graph.incidence, LevelMask::kAll);
    const auto a_note = oracles::dense_incidence(graph.incidence, LevelMask::kNoteOnly);
    const auto a_tax = oracles::dense_incidence(graph.incidence, LevelMask::kTaxonomyOnly);
    for (std::size_t i = 0; i < a_all.rows(); ++i)
      for (std::size_t j = 0; j < a_all.cols(); ++j) {
        CHECK(a_note(i, j) + a_tax(i, j) == a_all(i, j));
        CHECK(a_note(i, j) * a_tax(i, j) == 0.0);
      }
  }
}

TEST_CASE("row-sum invariant: every word node touches >=1 note and >=1 taxonomy") {
  mlhg::Rng rng(47);
  for (int trial = 0; trial < 20; ++trial) {
    auto scene = prepare({oracles::random_patient(rng, trial)});
    const auto graph =
        construct(scene.records[0], scene.vocab, scene.embeddings, scene.taxonomies, scene.dims);
    for (std::size_t v = 0; v < graph.incidence.num_nodes; ++v) {
      int notes = 0, taxes = 0;
      for (int column : graph.incidence.node_edges[v])
        (graph.incidence.is_note_column(column) ? notes : taxes) += 1;
      CHECK(notes >= 1);
      CHECK(taxes >= 1);
      CHECK(notes + taxes >= 2);
    }
  }
}

TEST_CASE("batch: single graph batches to itself with membership zero") {
  auto scene = prepare({two_note_patient()});
  const auto graph = construct(scene.records[0], scene.vocab, scene.embeddings, scene.taxonomies, scene.dims);
  const auto batched = batch(std::vector<PatientHypergraph>{graph});
  CHECK(batched.num_graphs == 1);
  CHECK(batched.node_features == graph.node_features);
  CHECK(batched.incidence.node_edges == graph.incidence.node_edges);
  for (int g : batched.node_graph) CHECK(g == 0);
}

TEST_CASE("batch: membership vector and offsets") {
  PatientRecord p2;
  p2.patient_id = "p2";
  p2.label = 0;
  p2.notes = {{"m1", "A", 0.0, "x q"}};
  auto scene = prepare({two_note_patient(), p2});
  const auto g1 = construct(scene.records[0], scene.vocab, scene.embeddings, scene.taxonomies, scene.dims);
  const auto g2 = construct(scene.records[1], scene.vocab, scene.embeddings, scene.taxonomies, scene.dims);
  const auto batched = batch(std::vector<PatientHypergraph>{g1, g2});
  CHECK(batched.node_graph == std::vector<int>{0, 0, 0, 1, 1});
  CHECK(batched.incidence.num_nodes == 5);
  CHECK(batched.incidence.num_note_edges == 3);
  CHECK(batched.incidence.num_tax_edges == 2);
  // no incidence crosses graph boundaries
  for (std::size_t v = 0; v < batched.incidence.num_nodes; ++v)
    for (int column : batched.incidence.node_edges[v]) {
      const int edge_graph = batched.incidence.is_note_column(column)
                                 ? batched.note_graph[static_cast<std::size_t>(column)]
                                 : batched.tax_graph[static_cast<std::size_t>(column) -
                                                     batched.incidence.num_note_edges];
      CHECK(edge_graph == batched.node_graph[v]);
    }
}

TEST_CASE("batch: mixed feature widths rejected") {
  auto scene_a = prepare({two_note_patient()}, 4);
  auto scene_b = prepare({two_note_patient()}, 6);
  const auto g1 = construct(scene_a.records[0], scene_a.vocab, scene_a.embeddings, scene_a.taxonomies,
                            scene_a.dims);
  const auto g2 = construct(scene_b.records[0], scene_b.vocab, scene_b.embeddings, scene_b.taxonomies,
                            scene_b.dims);
  CHECK_THROWS_AS(batch(std::vector<PatientHypergraph>{g1, g2}), std::invalid_argument);
}

TEST_CASE("graph debug dump lists nodes and hyperedge members") {
  auto scene = prepare({two_note_patient()});
  const auto graph = construct(scene.records[0], scene.vocab, scene.embeddings, scene.taxonomies, scene.dims);
  const auto dump = dump_graph_json(graph);
  CHECK(dump.find("\"token\": \"y\"") != std::string::npos);
  CHECK(dump.find("\"level\": \"taxonomy\"") != std::string::npos);
}
