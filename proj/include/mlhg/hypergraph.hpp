#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "mlhg/corpus.hpp"
#include "mlhg/matrix.hpp"

namespace mlhg::hypergraph {

// Entry kinds share one feature space; the type code is the first meta field.
enum class EntryType : int { kWordNode = 0, kNoteEdge = 1, kTaxonomyEdge = 2 };

struct EntryMeta {
  int type_code = 0;
  int word_index = -1;      // -1 for hyperedges
  int note_index = -1;      // -1 for taxonomy hyperedges
  int taxonomy_index = -1;  // global taxonomy id
};

// Binary incidence between word nodes (rows) and hyperedge columns. Columns
// [0, m) are note hyperedges, [m, m+s) taxonomy hyperedges. Stored both ways
// for sparse traversal in either direction.
struct IncidenceMatrix {
  std::size_t num_nodes = 0;
  std::size_t num_note_edges = 0;
  std::size_t num_tax_edges = 0;
  std::vector<std::vector<int>> node_edges;  // per node: incident columns, ascending
  std::vector<std::vector<int>> edge_nodes;  // per column: incident nodes, ascending

  std::size_t num_edges() const { return num_note_edges + num_tax_edges; }
  bool is_note_column(int column) const { return static_cast<std::size_t>(column) < num_note_edges; }
};

enum class LevelMask { kAll, kNoteOnly, kTaxonomyOnly };

bool column_in_mask(const IncidenceMatrix& incidence, int column, LevelMask mask);

// Corpus-wide constants needed to build features and size embedding tables.
struct GraphDims {
  int d_w = 0;               // word-embedding width
  int max_word_index = 0;    // |V| - 1
  int max_note_ordinal = 0;  // largest per-patient note ordinal observed
  int max_tax_index = 0;     // number of kept taxonomies - 1
  int mne_rows = 30;         // note-id embedding table height (max_notes cap)
  int mte_rows = 6;          // taxonomy-id embedding table height

  int d_in() const { return 4 + d_w; }
};

GraphDims compute_dims(const std::vector<corpus::PatientRecord>& records, const corpus::Vocab& vocab,
                       const corpus::TaxonomyTable& taxonomies, int embedding_dim,
                       const corpus::PreprocessConfig& config);

// One patient's multi-level hypergraph. Word-node features are static
// (meta block + embedding row). Hyperedge features depend on learned
// embedding tables, so the graph stores their ingredients (ordinals, floored
// hours with the sinusoidal encoding precomputed, taxonomy ids) and the model
// materializes them at forward time.
struct PatientHypergraph {
  std::string patient_id;
  int label = 0;

  std::vector<EntryMeta> node_meta;
  std::vector<EntryMeta> note_meta;
  std::vector<EntryMeta> tax_meta;
  std::vector<std::string> node_tokens;

  Matrix node_features;   // n x d_in
  std::vector<double> note_hours;   // raw hours, ascending
  std::vector<int> note_ordinals;   // 0..m-1
  std::vector<int> tax_global_ids;  // per taxonomy column

  IncidenceMatrix incidence;
  GraphDims dims;
};

// Sinusoidal positional encoding of floor(hour): even channels sine, odd
// cosine, wavelengths 10000^(2i/d_w).
std::vector<double> hour_encoding(double hour, int d_w);

// Meta block as reals: indices min-max scaled to [0,1] by corpus-wide maxima,
// -1 sentinels preserved.
std::array<double, 4> encode_meta(const EntryMeta& meta, const GraphDims& dims);

PatientHypergraph construct(const corpus::PatientRecord& patient, const corpus::Vocab& vocab,
                            const corpus::EmbeddingTable& embeddings,
                            const corpus::TaxonomyTable& taxonomies, const GraphDims& dims);

// Degrees under a mask: node degree counts incidences to unmasked columns,
// edge degree is the (unmasked) column sum. Clamped to >= 1.
struct Degrees {
  std::vector<double> node;
  std::vector<double> edge;
};

Degrees degrees(const IncidenceMatrix& incidence, LevelMask mask);

// Disjoint union of patient graphs with per-entry graph membership.
struct BatchedHypergraph {
  std::size_t num_graphs = 0;
  GraphDims dims;

  Matrix node_features;
  std::vector<double> note_hours;
  std::vector<int> note_ordinals;
  std::vector<int> tax_global_ids;

  std::vector<EntryMeta> node_meta;
  std::vector<EntryMeta> note_meta;
  std::vector<EntryMeta> tax_meta;
  std::vector<std::string> node_tokens;

  std::vector<int> node_graph;  // per node: graph index
  std::vector<int> note_graph;
  std::vector<int> tax_graph;
  std::vector<int> labels;
  std::vector<std::string> patient_ids;

  IncidenceMatrix incidence;
};

BatchedHypergraph batch(std::span<const PatientHypergraph* const> graphs);
BatchedHypergraph batch(const std::vector<PatientHypergraph>& graphs);

// Debug JSON dump: nodes with meta and tokens, hyperedges with member lists.
std::string dump_graph_json(const PatientHypergraph& graph);

}  // namespace mlhg::hypergraph
