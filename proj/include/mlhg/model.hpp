#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "mlhg/hypergraph.hpp"
#include "mlhg/matrix.hpp"

namespace mlhg::model {

using hypergraph::BatchedHypergraph;
using hypergraph::GraphDims;
using hypergraph::IncidenceMatrix;
using hypergraph::LevelMask;

enum class Activation { kReLU, kIdentity };

// One message-passing stage's shared affine map. The same weight is applied
// to the node update and to every hyperedge update of that stage.
struct LayerParams {
  Matrix weight;             // in x out
  std::vector<double> bias;  // out
  Activation activation = Activation::kReLU;
};

enum class Stage { kGlobal, kNote, kTaxonomy };

struct VariantConfig {
  std::string name;
  std::vector<Stage> schedule;  // 1..3 stages
};

// full        -> GLOBAL, NOTE, TAXONOMY
// wo_note     -> GLOBAL, GLOBAL, TAXONOMY
// wo_taxonomy -> GLOBAL, NOTE, GLOBAL
// wo_global   -> NOTE, TAXONOMY
// homogeneous -> GLOBAL, GLOBAL, GLOBAL (all hyperedges one type)
VariantConfig apply_variant(const std::string& name);

const std::vector<std::string>& variant_names();

struct ModelParams {
  std::vector<LayerParams> layers;    // one per stage
  Matrix mne;                         // note-ordinal embedding table, mne_rows x d_w
  Matrix mte;                         // taxonomy-id embedding table, mte_rows x d_w
  Matrix mte_affine_w;                // d_w x d_w
  std::vector<double> mte_affine_b;   // d_w
  std::vector<double> classifier_w;   // hidden
  double classifier_b = 0.0;
  double dropout = 0.3;

  struct TensorView {
    std::string name;
    double* data;
    std::size_t size;
  };
  struct ConstTensorView {
    std::string name;
    const double* data;
    std::size_t size;
  };
  std::vector<TensorView> tensors();
  std::vector<ConstTensorView> tensors() const;
};

// Gradients are shape-congruent with the parameters they differentiate.
using Gradients = ModelParams;

Gradients zeros_like(const ModelParams& params);

ModelParams init_params(const GraphDims& dims, std::size_t n_stages, int hidden_dim, double dropout,
                        std::uint64_t seed);

// Initial hyperedge features, [meta block || embedding], width d_in.
std::vector<double> init_note_edge(int note_ordinal, double hour, int taxonomy_index,
                                   const GraphDims& dims, const ModelParams& params);
std::vector<double> init_taxonomy_edge(int taxonomy_index, const GraphDims& dims,
                                       const ModelParams& params);

// Node update: out_i = phi(W^T sum_{e in E(i), unmasked} f_e / (sqrt(d_e) sqrt(d_i)) + b).
// edge_feats stacks note rows then taxonomy rows. node_in fixes n for shape checks.
Matrix conv_nodes(const Matrix& node_in, const Matrix& edge_feats, const IncidenceMatrix& incidence,
                  LevelMask mask, const LayerParams& layer);

enum class EdgeLevel { kNote, kTaxonomy };

// Hyperedge update for one level; the other level's rows are copied from
// edge_in unchanged (widths must agree for the copy).
Matrix conv_edges(const Matrix& edge_in, const Matrix& node_feats, const IncidenceMatrix& incidence,
                  LevelMask mask, EdgeLevel level, const LayerParams& layer);

enum class Mode { kTrain, kEval };

// How a hyperedge block evolved during a stage. kConv aggregates messages,
// kCopy passes the block through bit-identically (masked-out tier), kLift
// applies the stage affine without aggregation (masked-out tier at the one
// width-changing stage, where a bit-identical copy cannot type-check).
enum class BlockOp { kConv, kCopy, kLift };

struct StageTrace {
  Stage stage = Stage::kGlobal;
  LevelMask mask = LevelMask::kAll;
  hypergraph::Degrees degs;

  Matrix node_agg, node_act, node_out, node_drop;
  BlockOp note_op = BlockOp::kConv;
  BlockOp tax_op = BlockOp::kConv;
  Matrix edge_agg, edge_act, edge_out, edge_drop;  // note rows then taxonomy rows
};

struct ForwardTrace {
  Mode mode = Mode::kEval;
  Matrix node_in;   // h^(0)
  Matrix edge_in;   // [e_N ; e_T] initial hyperedge features
  std::vector<StageTrace> stages;
  std::vector<std::size_t> nodes_per_graph;
  Matrix pooled;                 // B x hidden, word-node mean per graph
  std::vector<double> logits;
  std::vector<double> probs;
};

ForwardTrace forward(const BatchedHypergraph& batch, const ModelParams& params,
                     const VariantConfig& variant, Mode mode, std::uint64_t seed);

// Exact reverse pass from per-graph dL/dlogit. The trace must come from
// forward() on the same batch and params.
Gradients backward(const ForwardTrace& trace, const BatchedHypergraph& batch,
                   const ModelParams& params, std::span<const double> dlogit);

}  // namespace mlhg::model
