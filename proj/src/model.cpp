#include "mlhg/model.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "mlhg/rng.hpp"

namespace mlhg::model {

namespace {

using hypergraph::Degrees;
using hypergraph::column_in_mask;

constexpr double kProbEps = 1e-12;

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

void apply_activation(Matrix& m, Activation act) {
  if (act == Activation::kIdentity) return;
  for (std::size_t i = 0; i < m.size(); ++i)
    if (m.data()[i] < 0.0) m.data()[i] = 0.0;
}

// g *= phi'(act), elementwise over a row range.
void activation_backward(Matrix& g, const Matrix& act, Activation a, std::size_t row0, std::size_t row1) {
  if (a == Activation::kIdentity) return;
  for (std::size_t r = row0; r < row1; ++r)
    for (std::size_t j = 0; j < g.cols(); ++j)
      if (act(r, j) <= 0.0) g(r, j) = 0.0;
}

Matrix affine_activate(const Matrix& agg, const LayerParams& layer) {
  Matrix out = matmul(agg, layer.weight);
  add_row_vector(out, layer.bias);
  apply_activation(out, layer.activation);
  return out;
}

// Row-range variants so hyperedge blocks can share one stacked matrix.

void aggregate_edges_to_nodes(const Matrix& edge_feats, const IncidenceMatrix& inc, LevelMask mask,
                              const Degrees& degs, Matrix& out) {
  for (std::size_t i = 0; i < inc.num_nodes; ++i) {
    const double di = std::sqrt(degs.node[i]);
    double* oi = out.data() + i * out.cols();
    for (int column : inc.node_edges[i]) {
      if (!column_in_mask(inc, column, mask)) continue;
      const double c = 1.0 / (di * std::sqrt(degs.edge[static_cast<std::size_t>(column)]));
      const double* f = edge_feats.data() + static_cast<std::size_t>(column) * edge_feats.cols();
      for (std::size_t k = 0; k < out.cols(); ++k) oi[k] += c * f[k];
    }
  }
}

void aggregate_nodes_to_edge_rows(const Matrix& node_feats, const IncidenceMatrix& inc,
                                  std::size_t col0, std::size_t col1, const Degrees& degs, Matrix& out) {
  for (std::size_t j = col0; j < col1; ++j) {
    const double dj = std::sqrt(degs.edge[j]);
    double* oj = out.data() + j * out.cols();
    for (int v : inc.edge_nodes[j]) {
      const double c = 1.0 / (dj * std::sqrt(degs.node[static_cast<std::size_t>(v)]));
      const double* h = node_feats.data() + static_cast<std::size_t>(v) * node_feats.cols();
      for (std::size_t k = 0; k < out.cols(); ++k) oj[k] += c * h[k];
    }
  }
}

// Transposed scatters for the reverse pass (same coefficients, swapped sides).

void scatter_nodes_to_edges(const Matrix& dnode_agg, const IncidenceMatrix& inc, LevelMask mask,
                            const Degrees& degs, Matrix& dedge_in) {
  for (std::size_t i = 0; i < inc.num_nodes; ++i) {
    const double di = std::sqrt(degs.node[i]);
    const double* gi = dnode_agg.data() + i * dnode_agg.cols();
    for (int column : inc.node_edges[i]) {
      if (!column_in_mask(inc, column, mask)) continue;
      const double c = 1.0 / (di * std::sqrt(degs.edge[static_cast<std::size_t>(column)]));
      double* e = dedge_in.data() + static_cast<std::size_t>(column) * dedge_in.cols();
      for (std::size_t k = 0; k < dedge_in.cols(); ++k) e[k] += c * gi[k];
    }
  }
}

void scatter_edge_rows_to_nodes(const Matrix& dedge_agg, const IncidenceMatrix& inc, std::size_t col0,
                                std::size_t col1, const Degrees& degs, Matrix& dnode_in) {
  for (std::size_t j = col0; j < col1; ++j) {
    const double dj = std::sqrt(degs.edge[j]);
    const double* gj = dedge_agg.data() + j * dedge_agg.cols();
    for (int v : inc.edge_nodes[j]) {
      const double c = 1.0 / (dj * std::sqrt(degs.node[static_cast<std::size_t>(v)]));
      double* h = dnode_in.data() + static_cast<std::size_t>(v) * dnode_in.cols();
      for (std::size_t k = 0; k < dnode_in.cols(); ++k) h[k] += c * gj[k];
    }
  }
}

void accumulate_affine_grads(const Matrix& agg, const Matrix& g, std::size_t row0, std::size_t row1,
                             LayerParams& layer_grad) {
  for (std::size_t r = row0; r < row1; ++r) {
    const double* ar = agg.data() + r * agg.cols();
    const double* gr = g.data() + r * g.cols();
    for (std::size_t j = 0; j < g.cols(); ++j) layer_grad.bias[j] += gr[j];
    for (std::size_t i = 0; i < agg.cols(); ++i) {
      const double a = ar[i];
      if (a == 0.0) continue;
      double* wi = layer_grad.weight.data() + i * layer_grad.weight.cols();
      for (std::size_t j = 0; j < g.cols(); ++j) wi[j] += a * gr[j];
    }
  }
}

// dagg = g * W^T over a row range.
void backprop_through_weight(const Matrix& g, const Matrix& weight, std::size_t row0, std::size_t row1,
                             Matrix& dagg) {
  for (std::size_t r = row0; r < row1; ++r) {
    const double* gr = g.data() + r * g.cols();
    double* dr = dagg.data() + r * dagg.cols();
    for (std::size_t i = 0; i < weight.rows(); ++i) {
      const double* wi = weight.data() + i * weight.cols();
      double acc = 0.0;
      for (std::size_t j = 0; j < weight.cols(); ++j) acc += gr[j] * wi[j];
      dr[i] = acc;
    }
  }
}

LevelMask stage_mask(Stage stage) {
  switch (stage) {
    case Stage::kGlobal: return LevelMask::kAll;
    case Stage::kNote: return LevelMask::kNoteOnly;
    case Stage::kTaxonomy: return LevelMask::kTaxonomyOnly;
  }
  return LevelMask::kAll;
}

void draw_dropout_mask(Matrix& mask, std::size_t row0, std::size_t row1, double p, Rng& rng) {
  for (std::size_t r = row0; r < row1; ++r)
    for (std::size_t j = 0; j < mask.cols(); ++j) mask(r, j) = rng.uniform() >= p ? 1.0 : 0.0;
}

void apply_dropout(const Matrix& act, const Matrix& mask, double p, std::size_t row0, std::size_t row1,
                   Matrix& out) {
  const double scale = 1.0 / (1.0 - p);
  for (std::size_t r = row0; r < row1; ++r)
    for (std::size_t j = 0; j < act.cols(); ++j) out(r, j) = act(r, j) * mask(r, j) * scale;
}

void dropout_backward(Matrix& g, const Matrix& mask, double p, std::size_t row0, std::size_t row1) {
  const double scale = 1.0 / (1.0 - p);
  for (std::size_t r = row0; r < row1; ++r)
    for (std::size_t j = 0; j < g.cols(); ++j) g(r, j) *= mask(r, j) * scale;
}

}  // namespace

VariantConfig apply_variant(const std::string& name) {
  VariantConfig config;
  config.name = name;
  if (name == "full")
    config.schedule = {Stage::kGlobal, Stage::kNote, Stage::kTaxonomy};
  else if (name == "wo_note")
    config.schedule = {Stage::kGlobal, Stage::kGlobal, Stage::kTaxonomy};
  else if (name == "wo_taxonomy")
    config.schedule = {Stage::kGlobal, Stage::kNote, Stage::kGlobal};
  else if (name == "wo_global")
    config.schedule = {Stage::kNote, Stage::kTaxonomy};
  else if (name == "homogeneous")
    config.schedule = {Stage::kGlobal, Stage::kGlobal, Stage::kGlobal};
  else {
    std::string valid;
    for (const auto& v : variant_names()) valid += (valid.empty() ? "" : ", ") + v;
    throw std::invalid_argument("unknown variant \"" + name + "\" (valid: " + valid + ")");
  }
  return config;
}

const std::vector<std::string>& variant_names() {
  static const std::vector<std::string> names = {"full", "wo_note", "wo_taxonomy", "wo_global",
                                                 "homogeneous"};
  return names;
}

std::vector<ModelParams::TensorView> ModelParams::tensors() {
  std::vector<TensorView> views;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    views.push_back({"layer" + std::to_string(l) + ".weight", layers[l].weight.data(), layers[l].weight.size()});
    views.push_back({"layer" + std::to_string(l) + ".bias", layers[l].bias.data(), layers[l].bias.size()});
  }
  views.push_back({"mne", mne.data(), mne.size()});
  views.push_back({"mte", mte.data(), mte.size()});
  views.push_back({"mte_affine.weight", mte_affine_w.data(), mte_affine_w.size()});
  views.push_back({"mte_affine.bias", mte_affine_b.data(), mte_affine_b.size()});
  views.push_back({"classifier.weight", classifier_w.data(), classifier_w.size()});
  views.push_back({"classifier.bias", &classifier_b, 1});
  return views;
}

std::vector<ModelParams::ConstTensorView> ModelParams::tensors() const {
  std::vector<ConstTensorView> views;
  auto mutable_views = const_cast<ModelParams*>(this)->tensors();
  views.reserve(mutable_views.size());
  for (auto& v : mutable_views) views.push_back({v.name, v.data, v.size});
  return views;
}

Gradients zeros_like(const ModelParams& params) {
  Gradients g;
  g.layers.reserve(params.layers.size());
  for (const auto& layer : params.layers) {
    LayerParams zero;
    zero.weight = Matrix(layer.weight.rows(), layer.weight.cols());
    zero.bias.assign(layer.bias.size(), 0.0);
    zero.activation = layer.activation;
    g.layers.push_back(std::move(zero));
  }
  g.mne = Matrix(params.mne.rows(), params.mne.cols());
  g.mte = Matrix(params.mte.rows(), params.mte.cols());
  g.mte_affine_w = Matrix(params.mte_affine_w.rows(), params.mte_affine_w.cols());
  g.mte_affine_b.assign(params.mte_affine_b.size(), 0.0);
  g.classifier_w.assign(params.classifier_w.size(), 0.0);
  g.classifier_b = 0.0;
  g.dropout = params.dropout;
  return g;
}

ModelParams init_params(const GraphDims& dims, std::size_t n_stages, int hidden_dim, double dropout,
                        std::uint64_t seed) {
  if (n_stages < 1 || n_stages > 3) throw std::invalid_argument("init_params: 1..3 stages");
  if (hidden_dim < 1) throw std::invalid_argument("init_params: hidden_dim must be >= 1");
  if (dropout < 0.0 || dropout >= 1.0) throw std::invalid_argument("init_params: dropout must be in [0, 1)");

  Rng rng(sub_seed(seed, seed_role::kParamInit));
  auto gaussian_matrix = [&](std::size_t r, std::size_t c) {
    Matrix m(r, c);
    for (std::size_t i = 0; i < m.size(); ++i) m.data()[i] = rng.gaussian(0.0, 0.1);
    return m;
  };

  ModelParams params;
  params.dropout = dropout;
  const auto hidden = static_cast<std::size_t>(hidden_dim);
  for (std::size_t l = 0; l < n_stages; ++l) {
    LayerParams layer;
    const std::size_t in = l == 0 ? static_cast<std::size_t>(dims.d_in()) : hidden;
    layer.weight = gaussian_matrix(in, hidden);
    layer.bias.assign(hidden, 0.0);
    params.layers.push_back(std::move(layer));
  }
  params.mne = gaussian_matrix(static_cast<std::size_t>(dims.mne_rows), static_cast<std::size_t>(dims.d_w));
  params.mte = gaussian_matrix(static_cast<std::size_t>(dims.mte_rows), static_cast<std::size_t>(dims.d_w));
  params.mte_affine_w = gaussian_matrix(static_cast<std::size_t>(dims.d_w), static_cast<std::size_t>(dims.d_w));
  params.mte_affine_b.assign(static_cast<std::size_t>(dims.d_w), 0.0);
  params.classifier_w.resize(hidden);
  for (auto& w : params.classifier_w) w = rng.gaussian(0.0, 0.1);
  params.classifier_b = 0.0;
  return params;
}

std::vector<double> init_note_edge(int note_ordinal, double hour, int taxonomy_index,
                                   const GraphDims& dims, const ModelParams& params) {
  if (note_ordinal < 0 || static_cast<std::size_t>(note_ordinal) >= params.mne.rows())
    throw std::invalid_argument("init_note_edge: note ordinal " + std::to_string(note_ordinal) +
                                " outside embedding table of " + std::to_string(params.mne.rows()) + " rows");
  const hypergraph::EntryMeta meta{static_cast<int>(hypergraph::EntryType::kNoteEdge), -1, note_ordinal,
                                   taxonomy_index};
  const auto meta_block = hypergraph::encode_meta(meta, dims);
  const auto he = hypergraph::hour_encoding(hour, dims.d_w);

  std::vector<double> out(static_cast<std::size_t>(dims.d_in()));
  for (std::size_t k = 0; k < 4; ++k) out[k] = meta_block[k];
  for (int k = 0; k < dims.d_w; ++k)
    out[4 + static_cast<std::size_t>(k)] =
        params.mne(static_cast<std::size_t>(note_ordinal), static_cast<std::size_t>(k)) + he[static_cast<std::size_t>(k)];
  return out;
}

std::vector<double> init_taxonomy_edge(int taxonomy_index, const GraphDims& dims,
                                       const ModelParams& params) {
  if (taxonomy_index < 0 || static_cast<std::size_t>(taxonomy_index) >= params.mte.rows())
    throw std::invalid_argument("init_taxonomy_edge: taxonomy index out of range");
  const hypergraph::EntryMeta meta{static_cast<int>(hypergraph::EntryType::kTaxonomyEdge), -1, -1,
                                   taxonomy_index};
  const auto meta_block = hypergraph::encode_meta(meta, dims);

  const auto d_w = static_cast<std::size_t>(dims.d_w);
  std::vector<double> out(static_cast<std::size_t>(dims.d_in()));
  for (std::size_t k = 0; k < 4; ++k) out[k] = meta_block[k];
  // Lookup, one affine map, ReLU.
  for (std::size_t j = 0; j < d_w; ++j) {
    double acc = params.mte_affine_b[j];
    for (std::size_t i = 0; i < d_w; ++i)
      acc += params.mte(static_cast<std::size_t>(taxonomy_index), i) * params.mte_affine_w(i, j);
    out[4 + j] = std::max(acc, 0.0);
  }
  return out;
}

Matrix conv_nodes(const Matrix& node_in, const Matrix& edge_feats, const IncidenceMatrix& incidence,
                  LevelMask mask, const LayerParams& layer) {
  if (node_in.rows() != incidence.num_nodes) throw std::invalid_argument("conv_nodes: node count mismatch");
  if (edge_feats.rows() != incidence.num_edges()) throw std::invalid_argument("conv_nodes: edge count mismatch");
  if (edge_feats.cols() != layer.weight.rows()) throw std::invalid_argument("conv_nodes: width mismatch");
  if (layer.bias.size() != layer.weight.cols()) throw std::invalid_argument("conv_nodes: bias width mismatch");

  const Degrees degs = hypergraph::degrees(incidence, mask);
  Matrix agg(incidence.num_nodes, edge_feats.cols());
  aggregate_edges_to_nodes(edge_feats, incidence, mask, degs, agg);
  return affine_activate(agg, layer);
}

Matrix conv_edges(const Matrix& edge_in, const Matrix& node_feats, const IncidenceMatrix& incidence,
                  LevelMask mask, EdgeLevel level, const LayerParams& layer) {
  if (edge_in.rows() != incidence.num_edges()) throw std::invalid_argument("conv_edges: edge count mismatch");
  if (node_feats.rows() != incidence.num_nodes) throw std::invalid_argument("conv_edges: node count mismatch");
  if (node_feats.cols() != layer.weight.rows()) throw std::invalid_argument("conv_edges: width mismatch");
  if (edge_in.cols() != layer.weight.cols())
    throw std::invalid_argument("conv_edges: non-selected block cannot be copied across widths");

  const Degrees degs = hypergraph::degrees(incidence, mask);
  const std::size_t m = incidence.num_note_edges;
  const std::size_t col0 = level == EdgeLevel::kNote ? 0 : m;
  const std::size_t col1 = level == EdgeLevel::kNote ? m : incidence.num_edges();

  Matrix agg(incidence.num_edges(), node_feats.cols());
  aggregate_nodes_to_edge_rows(node_feats, incidence, col0, col1, degs, agg);

  Matrix out = edge_in;
  for (std::size_t j = col0; j < col1; ++j) {
    for (std::size_t c = 0; c < out.cols(); ++c) {
      double acc = layer.bias[c];
      for (std::size_t i = 0; i < layer.weight.rows(); ++i) acc += agg(j, i) * layer.weight(i, c);
      out(j, c) = layer.activation == Activation::kReLU ? std::max(acc, 0.0) : acc;
    }
  }
  return out;
}

ForwardTrace forward(const BatchedHypergraph& batch, const ModelParams& params,
                     const VariantConfig& variant, Mode mode, std::uint64_t seed) {
  if (variant.schedule.empty() || variant.schedule.size() > 3)
    throw std::invalid_argument("forward: schedule must have 1..3 stages");
  if (params.layers.size() != variant.schedule.size())
    throw std::invalid_argument("forward: layer count != schedule length");
  const auto& inc = batch.incidence;
  for (Stage stage : variant.schedule) {
    if (stage == Stage::kNote && inc.num_note_edges == 0)
      throw std::invalid_argument("forward: note stage with no note hyperedges");
    if (stage == Stage::kTaxonomy && inc.num_tax_edges == 0)
      throw std::invalid_argument("forward: taxonomy stage with no taxonomy hyperedges");
  }
  const auto d_in = static_cast<std::size_t>(batch.dims.d_in());
  if (params.layers.front().weight.rows() != d_in)
    throw std::invalid_argument("forward: first layer input width != d_in");

  ForwardTrace trace;
  trace.mode = mode;
  trace.node_in = batch.node_features;

  const std::size_t m = inc.num_note_edges;
  const std::size_t s = inc.num_tax_edges;
  trace.edge_in = Matrix(m + s, d_in);
  for (std::size_t j = 0; j < m; ++j) {
    const auto row = init_note_edge(batch.note_ordinals[j], batch.note_hours[j],
                                    batch.note_meta[j].taxonomy_index, batch.dims, params);
    for (std::size_t k = 0; k < d_in; ++k) trace.edge_in(j, k) = row[k];
  }
  for (std::size_t t = 0; t < s; ++t) {
    const auto row = init_taxonomy_edge(batch.tax_global_ids[t], batch.dims, params);
    for (std::size_t k = 0; k < d_in; ++k) trace.edge_in(m + t, k) = row[k];
  }

  Rng drop_rng(seed);
  const bool use_dropout = mode == Mode::kTrain && params.dropout > 0.0;
  const double p = params.dropout;

  const Matrix* cur_node = &trace.node_in;
  const Matrix* cur_edge = &trace.edge_in;

  for (std::size_t si = 0; si < variant.schedule.size(); ++si) {
    const Stage stage = variant.schedule[si];
    const auto& layer = params.layers[si];
    const std::size_t in_width = cur_node->cols();
    if (layer.weight.rows() != in_width) throw std::invalid_argument("forward: layer width mismatch");
    const std::size_t out_width = layer.weight.cols();

    StageTrace st;
    st.stage = stage;
    st.mask = stage_mask(stage);
    st.degs = hypergraph::degrees(inc, st.mask);

    st.node_agg = Matrix(inc.num_nodes, in_width);
    aggregate_edges_to_nodes(*cur_edge, inc, st.mask, st.degs, st.node_agg);
    st.node_act = affine_activate(st.node_agg, layer);

    const bool note_updated = stage != Stage::kTaxonomy;
    const bool tax_updated = stage != Stage::kNote;
    st.note_op = note_updated ? BlockOp::kConv : (in_width == out_width ? BlockOp::kCopy : BlockOp::kLift);
    st.tax_op = tax_updated ? BlockOp::kConv : (in_width == out_width ? BlockOp::kCopy : BlockOp::kLift);

    st.edge_agg = Matrix(m + s, in_width);
    st.edge_act = Matrix(m + s, out_width);
    st.edge_out = Matrix(m + s, out_width);

    auto run_block = [&](BlockOp op, std::size_t row0, std::size_t row1) {
      if (op == BlockOp::kCopy) {
        for (std::size_t r = row0; r < row1; ++r)
          for (std::size_t k = 0; k < out_width; ++k) st.edge_out(r, k) = (*cur_edge)(r, k);
        return;
      }
      if (op == BlockOp::kConv) {
        aggregate_nodes_to_edge_rows(*cur_node, inc, row0, row1, st.degs, st.edge_agg);
      } else {  // kLift: stage affine without aggregation, messages stay concealed
        for (std::size_t r = row0; r < row1; ++r)
          for (std::size_t k = 0; k < in_width; ++k) st.edge_agg(r, k) = (*cur_edge)(r, k);
      }
      for (std::size_t r = row0; r < row1; ++r) {
        for (std::size_t c = 0; c < out_width; ++c) {
          double acc = layer.bias[c];
          for (std::size_t i = 0; i < in_width; ++i) acc += st.edge_agg(r, i) * layer.weight(i, c);
          st.edge_act(r, c) = layer.activation == Activation::kReLU ? std::max(acc, 0.0) : acc;
        }
      }
    };
    run_block(st.note_op, 0, m);
    run_block(st.tax_op, m, m + s);

    if (use_dropout) {
      st.node_drop = Matrix(inc.num_nodes, out_width);
      draw_dropout_mask(st.node_drop, 0, inc.num_nodes, p, drop_rng);
      st.edge_drop = Matrix(m + s, out_width, 1.0);
      if (st.note_op != BlockOp::kCopy) draw_dropout_mask(st.edge_drop, 0, m, p, drop_rng);
      if (st.tax_op != BlockOp::kCopy) draw_dropout_mask(st.edge_drop, m, m + s, p, drop_rng);

      st.node_out = Matrix(inc.num_nodes, out_width);
      apply_dropout(st.node_act, st.node_drop, p, 0, inc.num_nodes, st.node_out);
      if (st.note_op != BlockOp::kCopy) apply_dropout(st.edge_act, st.edge_drop, p, 0, m, st.edge_out);
      if (st.tax_op != BlockOp::kCopy) apply_dropout(st.edge_act, st.edge_drop, p, m, m + s, st.edge_out);
    } else {
      st.node_out = st.node_act;
      if (st.note_op != BlockOp::kCopy)
        for (std::size_t r = 0; r < m; ++r)
          for (std::size_t k = 0; k < out_width; ++k) st.edge_out(r, k) = st.edge_act(r, k);
      if (st.tax_op != BlockOp::kCopy)
        for (std::size_t r = m; r < m + s; ++r)
          for (std::size_t k = 0; k < out_width; ++k) st.edge_out(r, k) = st.edge_act(r, k);
    }

    trace.stages.push_back(std::move(st));
    cur_node = &trace.stages.back().node_out;
    cur_edge = &trace.stages.back().edge_out;
  }

  // Mean pooling over word nodes only, per graph.
  const std::size_t hidden = cur_node->cols();
  trace.nodes_per_graph.assign(batch.num_graphs, 0);
  for (int g : batch.node_graph) ++trace.nodes_per_graph[static_cast<std::size_t>(g)];
  trace.pooled = Matrix(batch.num_graphs, hidden);
  for (std::size_t i = 0; i < inc.num_nodes; ++i) {
    const auto g = static_cast<std::size_t>(batch.node_graph[i]);
    for (std::size_t k = 0; k < hidden; ++k) trace.pooled(g, k) += (*cur_node)(i, k);
  }
  for (std::size_t g = 0; g < batch.num_graphs; ++g) {
    const double inv = 1.0 / static_cast<double>(trace.nodes_per_graph[g]);
    for (std::size_t k = 0; k < hidden; ++k) trace.pooled(g, k) *= inv;
  }

  if (params.classifier_w.size() != hidden) throw std::invalid_argument("forward: classifier width mismatch");
  trace.logits.resize(batch.num_graphs);
  trace.probs.resize(batch.num_graphs);
  for (std::size_t g = 0; g < batch.num_graphs; ++g) {
    double z = params.classifier_b;
    for (std::size_t k = 0; k < hidden; ++k) z += params.classifier_w[k] * trace.pooled(g, k);
    trace.logits[g] = z;
    trace.probs[g] = std::clamp(sigmoid(z), kProbEps, 1.0 - kProbEps);
  }
  return trace;
}

Gradients backward(const ForwardTrace& trace, const BatchedHypergraph& batch,
                   const ModelParams& params, std::span<const double> dlogit) {
  if (dlogit.size() != batch.num_graphs) throw std::invalid_argument("backward: dlogit size mismatch");
  if (trace.stages.size() != params.layers.size())
    throw std::invalid_argument("backward: trace/params stage count mismatch");

  const auto& inc = batch.incidence;
  const std::size_t m = inc.num_note_edges;
  const std::size_t s = inc.num_tax_edges;
  const std::size_t hidden = trace.pooled.cols();
  const bool use_dropout = trace.mode == Mode::kTrain && params.dropout > 0.0;
  const double p = params.dropout;

  Gradients grads = zeros_like(params);

  // Classifier and pooling.
  for (std::size_t g = 0; g < batch.num_graphs; ++g) {
    grads.classifier_b += dlogit[g];
    for (std::size_t k = 0; k < hidden; ++k) grads.classifier_w[k] += trace.pooled(g, k) * dlogit[g];
  }
  Matrix dnode(inc.num_nodes, hidden);
  for (std::size_t i = 0; i < inc.num_nodes; ++i) {
    const auto g = static_cast<std::size_t>(batch.node_graph[i]);
    const double c = dlogit[g] / static_cast<double>(trace.nodes_per_graph[g]);
    for (std::size_t k = 0; k < hidden; ++k) dnode(i, k) = c * params.classifier_w[k];
  }
  Matrix dedge(m + s, hidden);

  for (std::size_t si = trace.stages.size(); si-- > 0;) {
    const auto& st = trace.stages[si];
    const auto& layer = params.layers[si];
    auto& layer_grad = grads.layers[si];
    const Matrix& in_node = si == 0 ? trace.node_in : trace.stages[si - 1].node_out;
    const std::size_t in_width = in_node.cols();

    Matrix dnode_in(inc.num_nodes, in_width);
    Matrix dedge_in(m + s, in_width);

    // Node update (always a conv).
    {
      Matrix g = dnode;
      if (use_dropout) dropout_backward(g, st.node_drop, p, 0, inc.num_nodes);
      activation_backward(g, st.node_act, layer.activation, 0, inc.num_nodes);
      accumulate_affine_grads(st.node_agg, g, 0, inc.num_nodes, layer_grad);
      Matrix dagg(inc.num_nodes, in_width);
      backprop_through_weight(g, layer.weight, 0, inc.num_nodes, dagg);
      scatter_nodes_to_edges(dagg, inc, st.mask, st.degs, dedge_in);
    }

    // Hyperedge blocks.
    auto run_block = [&](BlockOp op, std::size_t row0, std::size_t row1) {
      if (row0 == row1) return;
      if (op == BlockOp::kCopy) {
        for (std::size_t r = row0; r < row1; ++r)
          for (std::size_t k = 0; k < in_width; ++k) dedge_in(r, k) += dedge(r, k);
        return;
      }
      Matrix g = dedge;
      if (use_dropout) dropout_backward(g, st.edge_drop, p, row0, row1);
      activation_backward(g, st.edge_act, layer.activation, row0, row1);
      accumulate_affine_grads(st.edge_agg, g, row0, row1, layer_grad);
      Matrix dagg(m + s, in_width);
      backprop_through_weight(g, layer.weight, row0, row1, dagg);
      if (op == BlockOp::kConv) {
        scatter_edge_rows_to_nodes(dagg, inc, row0, row1, st.degs, dnode_in);
      } else {  // kLift
        for (std::size_t r = row0; r < row1; ++r)
          for (std::size_t k = 0; k < in_width; ++k) dedge_in(r, k) += dagg(r, k);
      }
    };
    run_block(st.note_op, 0, m);
    run_block(st.tax_op, m, m + s);

    dnode = std::move(dnode_in);
    dedge = std::move(dedge_in);
  }

  // Initial hyperedge features: note rows feed the note-ordinal table,
  // taxonomy rows feed the taxonomy table through its affine + ReLU.
  const auto d_w = static_cast<std::size_t>(batch.dims.d_w);
  for (std::size_t j = 0; j < m; ++j) {
    const auto ord = static_cast<std::size_t>(batch.note_ordinals[j]);
    for (std::size_t k = 0; k < d_w; ++k) grads.mne(ord, k) += dedge(j, 4 + k);
  }
  for (std::size_t t = 0; t < s; ++t) {
    const auto gid = static_cast<std::size_t>(batch.tax_global_ids[t]);
    for (std::size_t k = 0; k < d_w; ++k) {
      double da = dedge(m + t, 4 + k);
      if (trace.edge_in(m + t, 4 + k) <= 0.0) da = 0.0;  // ReLU gate
      if (da == 0.0) continue;
      grads.mte_affine_b[k] += da;
      for (std::size_t i = 0; i < d_w; ++i) {
        grads.mte_affine_w(i, k) += params.mte(gid, i) * da;
        grads.mte(gid, i) += params.mte_affine_w(i, k) * da;
      }
    }
  }
  return grads;
}

}  // namespace mlhg::model
