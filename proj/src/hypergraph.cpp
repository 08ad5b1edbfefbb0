#include "mlhg/hypergraph.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>

#include "mlhg/errors.hpp"
#include "json.hpp"

namespace mlhg::hypergraph {

bool column_in_mask(const IncidenceMatrix& incidence, int column, LevelMask mask) {
  switch (mask) {
    case LevelMask::kAll: return true;
    case LevelMask::kNoteOnly: return incidence.is_note_column(column);
    case LevelMask::kTaxonomyOnly: return !incidence.is_note_column(column);
  }
  return false;
}

GraphDims compute_dims(const std::vector<corpus::PatientRecord>& records, const corpus::Vocab& vocab,
                       const corpus::TaxonomyTable& taxonomies, int embedding_dim,
                       const corpus::PreprocessConfig& config) {
  GraphDims dims;
  dims.d_w = embedding_dim;
  dims.max_word_index = vocab.size() > 0 ? static_cast<int>(vocab.size()) - 1 : 0;
  dims.max_tax_index = taxonomies.size() > 0 ? static_cast<int>(taxonomies.size()) - 1 : 0;
  dims.max_note_ordinal = 0;
  for (const auto& record : records)
    dims.max_note_ordinal = std::max(dims.max_note_ordinal, static_cast<int>(record.notes.size()) - 1);
  dims.mne_rows = config.max_notes;
  dims.mte_rows = config.top_taxonomies;
  return dims;
}

std::vector<double> hour_encoding(double hour, int d_w) {
  if (hour < 0.0) throw ValidationError("hour_encoding: hour must be >= 0");
  const double pos = std::floor(hour);
  std::vector<double> enc(static_cast<std::size_t>(d_w));
  for (int i = 0; i < d_w; ++i) {
    const int pair = i / 2;
    const double wavelength = std::pow(10000.0, 2.0 * pair / static_cast<double>(d_w));
    const double angle = pos / wavelength;
    enc[static_cast<std::size_t>(i)] = (i % 2 == 0) ? std::sin(angle) : std::cos(angle);
  }
  return enc;
}

namespace {

double scaled(int index, int max_index) {
  if (index < 0) return -1.0;
  if (max_index <= 0) return 0.0;
  return static_cast<double>(index) / static_cast<double>(max_index);
}

}  // namespace

std::array<double, 4> encode_meta(const EntryMeta& meta, const GraphDims& dims) {
  return {static_cast<double>(meta.type_code), scaled(meta.word_index, dims.max_word_index),
          scaled(meta.note_index, dims.max_note_ordinal), scaled(meta.taxonomy_index, dims.max_tax_index)};
}

PatientHypergraph construct(const corpus::PatientRecord& patient, const corpus::Vocab& vocab,
                            const corpus::EmbeddingTable& embeddings,
                            const corpus::TaxonomyTable& taxonomies, const GraphDims& dims) {
  if (patient.notes.empty()) throw ValidationError("construct: patient \"" + patient.patient_id + "\" has no notes");
  if (embeddings.dim != dims.d_w) throw std::invalid_argument("construct: embedding dim != dims.d_w");

  PatientHypergraph graph;
  graph.patient_id = patient.patient_id;
  graph.label = patient.label;
  graph.dims = dims;

  const auto m = patient.notes.size();
  if (m > static_cast<std::size_t>(dims.mne_rows))
    throw ValidationError("construct: patient has more notes than the note-embedding table");

  // Taxonomy columns in order of first appearance across the patient's notes.
  std::vector<int> tax_ids;
  std::map<int, int> tax_column;  // global id -> local column
  for (const auto& note : patient.notes) {
    auto gid = taxonomies.id_of(note.taxonomy);
    if (!gid) throw ValidationError("construct: taxonomy \"" + note.taxonomy + "\" not in table");
    if (!tax_column.contains(*gid)) {
      tax_column[*gid] = static_cast<int>(tax_ids.size());
      tax_ids.push_back(*gid);
    }
  }
  const auto s = tax_ids.size();
  graph.tax_global_ids = tax_ids;

  // One node per distinct token within the patient, first-occurrence order.
  struct NodeInfo {
    int word_index;
    int first_note;
    int first_tax;
    std::string token;
    std::vector<int> columns;  // incident columns, deduplicated
  };
  std::vector<NodeInfo> nodes;
  std::map<std::string, std::size_t> node_of_token;

  for (std::size_t j = 0; j < m; ++j) {
    const auto& note = patient.notes[j];
    const int note_column = static_cast<int>(j);
    const int tax_col = tax_column.at(*taxonomies.id_of(note.taxonomy));
    const int tax_column_global = static_cast<int>(m) + tax_col;
    for (const auto& token : corpus::tokenize(note.text)) {
      auto word = vocab.index_of(token);
      if (!word) throw ValidationError("construct: token \"" + token + "\" not in vocabulary");
      auto it = node_of_token.find(token);
      if (it == node_of_token.end()) {
        NodeInfo info;
        info.word_index = *word;
        info.first_note = static_cast<int>(j);
        info.first_tax = *taxonomies.id_of(note.taxonomy);
        info.token = token;
        it = node_of_token.emplace(token, nodes.size()).first;
        nodes.push_back(std::move(info));
      }
      auto& cols = nodes[it->second].columns;
      if (std::find(cols.begin(), cols.end(), note_column) == cols.end()) cols.push_back(note_column);
      if (std::find(cols.begin(), cols.end(), tax_column_global) == cols.end()) cols.push_back(tax_column_global);
    }
  }
  if (nodes.empty()) throw ValidationError("construct: patient \"" + patient.patient_id + "\" has no tokens");

  const auto n = nodes.size();
  graph.incidence.num_nodes = n;
  graph.incidence.num_note_edges = m;
  graph.incidence.num_tax_edges = s;
  graph.incidence.node_edges.resize(n);
  graph.incidence.edge_nodes.resize(m + s);

  graph.node_features = Matrix(n, static_cast<std::size_t>(dims.d_in()));
  graph.node_meta.reserve(n);
  graph.node_tokens.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    auto& info = nodes[i];
    EntryMeta meta{static_cast<int>(EntryType::kWordNode), info.word_index, info.first_note, info.first_tax};
    graph.node_meta.push_back(meta);
    graph.node_tokens.push_back(info.token);

    const auto meta_block = encode_meta(meta, dims);
    for (std::size_t k = 0; k < 4; ++k) graph.node_features(i, k) = meta_block[k];
    for (int k = 0; k < dims.d_w; ++k)
      graph.node_features(i, 4 + static_cast<std::size_t>(k)) =
          embeddings.rows(static_cast<std::size_t>(info.word_index), static_cast<std::size_t>(k));

    std::sort(info.columns.begin(), info.columns.end());
    graph.incidence.node_edges[i] = info.columns;
    for (int column : info.columns) graph.incidence.edge_nodes[static_cast<std::size_t>(column)].push_back(static_cast<int>(i));
  }

  graph.note_hours.resize(m);
  graph.note_ordinals.resize(m);
  graph.note_meta.reserve(m);
  for (std::size_t j = 0; j < m; ++j) {
    const auto& note = patient.notes[j];
    if (note.hour < 0.0) throw ValidationError("construct: negative note hour");
    graph.note_ordinals[j] = static_cast<int>(j);
    graph.note_hours[j] = note.hour;
    graph.note_meta.push_back(EntryMeta{static_cast<int>(EntryType::kNoteEdge), -1, static_cast<int>(j),
                                        *taxonomies.id_of(note.taxonomy)});
  }

  graph.tax_meta.reserve(s);
  for (std::size_t k = 0; k < s; ++k)
    graph.tax_meta.push_back(EntryMeta{static_cast<int>(EntryType::kTaxonomyEdge), -1, -1, tax_ids[k]});

  // Every hyperedge column must have at least one member.
  for (const auto& members : graph.incidence.edge_nodes)
    if (members.empty()) throw ValidationError("construct: empty hyperedge column");

  return graph;
}

Degrees degrees(const IncidenceMatrix& incidence, LevelMask mask) {
  Degrees d;
  d.node.assign(incidence.num_nodes, 0.0);
  d.edge.assign(incidence.num_edges(), 0.0);
  for (std::size_t i = 0; i < incidence.num_nodes; ++i)
    for (int column : incidence.node_edges[i])
      if (column_in_mask(incidence, column, mask)) {
        d.node[i] += 1.0;
        d.edge[static_cast<std::size_t>(column)] += 1.0;
      }
  for (auto& v : d.node) v = std::max(v, 1.0);
  for (auto& v : d.edge) v = std::max(v, 1.0);
  return d;
}

BatchedHypergraph batch(std::span<const PatientHypergraph* const> graphs) {
  if (graphs.empty()) throw std::invalid_argument("batch: empty graph list");
  const GraphDims dims = graphs.front()->dims;
  for (const auto* g : graphs)
    if (g->dims.d_in() != dims.d_in() || g->dims.d_w != dims.d_w)
      throw std::invalid_argument("batch: mixed feature dimensions");

  std::size_t total_nodes = 0, total_notes = 0, total_tax = 0;
  for (const auto* g : graphs) {
    total_nodes += g->incidence.num_nodes;
    total_notes += g->incidence.num_note_edges;
    total_tax += g->incidence.num_tax_edges;
  }

  BatchedHypergraph out;
  out.num_graphs = graphs.size();
  out.dims = dims;
  out.node_features = Matrix(total_nodes, static_cast<std::size_t>(dims.d_in()));
  out.incidence.num_nodes = total_nodes;
  out.incidence.num_note_edges = total_notes;
  out.incidence.num_tax_edges = total_tax;
  out.incidence.node_edges.resize(total_nodes);
  out.incidence.edge_nodes.resize(total_notes + total_tax);

  std::size_t node_base = 0, note_base = 0, tax_base = 0;
  for (std::size_t gi = 0; gi < graphs.size(); ++gi) {
    const auto& g = *graphs[gi];
    const auto n = g.incidence.num_nodes;
    const auto m = g.incidence.num_note_edges;
    const auto s = g.incidence.num_tax_edges;

    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t k = 0; k < g.node_features.cols(); ++k)
        out.node_features(node_base + i, k) = g.node_features(i, k);
      out.node_graph.push_back(static_cast<int>(gi));
      out.node_meta.push_back(g.node_meta[i]);
      out.node_tokens.push_back(g.node_tokens[i]);

      auto& cols = out.incidence.node_edges[node_base + i];
      cols.reserve(g.incidence.node_edges[i].size());
      for (int column : g.incidence.node_edges[i]) {
        const bool is_note = g.incidence.is_note_column(column);
        const int mapped = is_note ? static_cast<int>(note_base) + column
                                   : static_cast<int>(total_notes + tax_base) +
                                         (column - static_cast<int>(m));
        cols.push_back(mapped);
        out.incidence.edge_nodes[static_cast<std::size_t>(mapped)].push_back(static_cast<int>(node_base + i));
      }
      std::sort(cols.begin(), cols.end());
    }
    for (std::size_t j = 0; j < m; ++j) {
      out.note_hours.push_back(g.note_hours[j]);
      out.note_ordinals.push_back(g.note_ordinals[j]);
      out.note_graph.push_back(static_cast<int>(gi));
      out.note_meta.push_back(g.note_meta[j]);
    }
    for (std::size_t k = 0; k < s; ++k) {
      out.tax_global_ids.push_back(g.tax_global_ids[k]);
      out.tax_graph.push_back(static_cast<int>(gi));
      out.tax_meta.push_back(g.tax_meta[k]);
    }

    out.labels.push_back(g.label);
    out.patient_ids.push_back(g.patient_id);
    node_base += n;
    note_base += m;
    tax_base += s;
  }
  return out;
}

BatchedHypergraph batch(const std::vector<PatientHypergraph>& graphs) {
  std::vector<const PatientHypergraph*> ptrs;
  ptrs.reserve(graphs.size());
  for (const auto& g : graphs) ptrs.push_back(&g);
  return batch(std::span<const PatientHypergraph* const>(ptrs));
}

std::string dump_graph_json(const PatientHypergraph& graph) {
  nlohmann::ordered_json out;
  out["patient_id"] = graph.patient_id;
  out["label"] = graph.label;
  nlohmann::ordered_json nodes = nlohmann::ordered_json::array();
  for (std::size_t i = 0; i < graph.incidence.num_nodes; ++i) {
    const auto& meta = graph.node_meta[i];
    nodes.push_back({{"id", i},
                     {"token", graph.node_tokens[i]},
                     {"word_index", meta.word_index},
                     {"note_index", meta.note_index},
                     {"taxonomy_index", meta.taxonomy_index}});
  }
  out["nodes"] = std::move(nodes);
  nlohmann::ordered_json edges = nlohmann::ordered_json::array();
  for (std::size_t j = 0; j < graph.incidence.num_edges(); ++j) {
    const bool is_note = graph.incidence.is_note_column(static_cast<int>(j));
    nlohmann::ordered_json edge;
    edge["column"] = j;
    edge["level"] = is_note ? "note" : "taxonomy";
    if (is_note) {
      edge["note_ordinal"] = graph.note_ordinals[j];
      edge["taxonomy_id"] = graph.note_meta[j].taxonomy_index;
    } else {
      edge["taxonomy_id"] = graph.tax_global_ids[j - graph.incidence.num_note_edges];
    }
    edge["members"] = graph.incidence.edge_nodes[j];
    edges.push_back(std::move(edge));
  }
  out["hyperedges"] = std::move(edges);
  return out.dump(2);
}

}  // namespace mlhg::hypergraph
