#include "mlhg/checkpoint.hpp"

#include <fstream>
#include <sstream>

#include "mlhg/errors.hpp"
#include "json.hpp"

namespace mlhg::checkpoint {

namespace {

using nlohmann::ordered_json;

ordered_json matrix_to_json(const Matrix& m) {
  ordered_json j;
  j["rows"] = m.rows();
  j["cols"] = m.cols();
  std::vector<double> data(m.data(), m.data() + m.size());
  j["data"] = std::move(data);
  return j;
}

Matrix matrix_from_json(const ordered_json& j) {
  const auto rows = j.at("rows").get<std::size_t>();
  const auto cols = j.at("cols").get<std::size_t>();
  const auto data = j.at("data").get<std::vector<double>>();
  if (data.size() != rows * cols) throw ParseError("checkpoint: matrix payload size mismatch");
  Matrix m(rows, cols);
  std::copy(data.begin(), data.end(), m.data());
  return m;
}

}  // namespace

std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

std::string fnv1a64_hex(std::string_view bytes) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(fnv1a64(bytes)));
  return buf;
}

std::string hash_vocab(const corpus::Vocab& vocab) {
  std::string joined;
  for (const auto& token : vocab.tokens()) {
    joined += token;
    joined.push_back('\n');
  }
  return fnv1a64_hex(joined);
}

std::string hash_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open file for hashing: " + path.string());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return fnv1a64_hex(buffer.str());
}

void save(const std::filesystem::path& path, const Checkpoint& ckpt) {
  ordered_json j;
  j["format"] = "mlhg-checkpoint";
  j["version"] = ckpt.version;
  j["variant"] = ckpt.variant;
  j["seed"] = ckpt.seed;
  j["hidden_dim"] = ckpt.hidden_dim;
  j["dropout"] = ckpt.dropout;

  const auto& dims = ckpt.ctx.dims;
  j["dims"] = {{"d_w", dims.d_w},
               {"max_word_index", dims.max_word_index},
               {"max_note_ordinal", dims.max_note_ordinal},
               {"max_tax_index", dims.max_tax_index},
               {"mne_rows", dims.mne_rows},
               {"mte_rows", dims.mte_rows}};
  j["preprocess"] = {{"max_notes", ckpt.ctx.prep.max_notes},
                     {"top_taxonomies", ckpt.ctx.prep.top_taxonomies},
                     {"min_token_freq", ckpt.ctx.prep.min_token_freq},
                     {"lowercase", ckpt.ctx.prep.lowercase}};
  j["vocab"] = ckpt.ctx.vocab.tokens();
  j["vocab_hash"] = hash_vocab(ckpt.ctx.vocab);
  j["taxonomies"] = ckpt.ctx.taxonomies.names();
  j["embeddings"] = matrix_to_json(ckpt.ctx.embeddings.rows);

  ordered_json params;
  ordered_json layers = ordered_json::array();
  for (const auto& layer : ckpt.params.layers) {
    ordered_json jl;
    jl["weight"] = matrix_to_json(layer.weight);
    jl["bias"] = layer.bias;
    layers.push_back(std::move(jl));
  }
  params["layers"] = std::move(layers);
  params["mne"] = matrix_to_json(ckpt.params.mne);
  params["mte"] = matrix_to_json(ckpt.params.mte);
  params["mte_affine_w"] = matrix_to_json(ckpt.params.mte_affine_w);
  params["mte_affine_b"] = ckpt.params.mte_affine_b;
  params["classifier_w"] = ckpt.params.classifier_w;
  params["classifier_b"] = ckpt.params.classifier_b;
  j["params"] = std::move(params);

  std::ofstream out(path);
  if (!out) throw ParseError("cannot write checkpoint: " + path.string());
  out << j.dump(1) << '\n';
}

Checkpoint load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open checkpoint: " + path.string());
  ordered_json j;
  try {
    j = ordered_json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("checkpoint: malformed JSON: " + std::string(e.what()));
  }
  if (j.value("format", "") != std::string("mlhg-checkpoint"))
    throw ValidationError("checkpoint: wrong format marker");
  if (j.at("version").get<int>() != kFormatVersion)
    throw ValidationError("checkpoint: unsupported version " + std::to_string(j.at("version").get<int>()));

  Checkpoint ckpt;
  ckpt.version = j.at("version").get<int>();
  ckpt.variant = j.at("variant").get<std::string>();
  ckpt.seed = j.at("seed").get<std::uint64_t>();
  ckpt.hidden_dim = j.at("hidden_dim").get<int>();
  ckpt.dropout = j.at("dropout").get<double>();

  const auto& jd = j.at("dims");
  ckpt.ctx.dims.d_w = jd.at("d_w").get<int>();
  ckpt.ctx.dims.max_word_index = jd.at("max_word_index").get<int>();
  ckpt.ctx.dims.max_note_ordinal = jd.at("max_note_ordinal").get<int>();
  ckpt.ctx.dims.max_tax_index = jd.at("max_tax_index").get<int>();
  ckpt.ctx.dims.mne_rows = jd.at("mne_rows").get<int>();
  ckpt.ctx.dims.mte_rows = jd.at("mte_rows").get<int>();

  const auto& jp = j.at("preprocess");
  ckpt.ctx.prep.max_notes = jp.at("max_notes").get<int>();
  ckpt.ctx.prep.top_taxonomies = jp.at("top_taxonomies").get<int>();
  ckpt.ctx.prep.min_token_freq = jp.at("min_token_freq").get<int>();
  ckpt.ctx.prep.lowercase = jp.at("lowercase").get<bool>();

  for (const auto& token : j.at("vocab")) ckpt.ctx.vocab.add(token.get<std::string>());
  if (j.at("vocab_hash").get<std::string>() != hash_vocab(ckpt.ctx.vocab))
    throw ValidationError("checkpoint: vocabulary hash mismatch");
  ckpt.ctx.taxonomies = corpus::TaxonomyTable(j.at("taxonomies").get<std::vector<std::string>>());
  ckpt.ctx.embeddings.rows = matrix_from_json(j.at("embeddings"));
  ckpt.ctx.embeddings.dim = static_cast<int>(ckpt.ctx.embeddings.rows.cols());
  if (ckpt.ctx.embeddings.rows.rows() != ckpt.ctx.vocab.size())
    throw ValidationError("checkpoint: embedding row count != vocabulary size");

  const auto& pj = j.at("params");
  for (const auto& jl : pj.at("layers")) {
    model::LayerParams layer;
    layer.weight = matrix_from_json(jl.at("weight"));
    layer.bias = jl.at("bias").get<std::vector<double>>();
    ckpt.params.layers.push_back(std::move(layer));
  }
  ckpt.params.mne = matrix_from_json(pj.at("mne"));
  ckpt.params.mte = matrix_from_json(pj.at("mte"));
  ckpt.params.mte_affine_w = matrix_from_json(pj.at("mte_affine_w"));
  ckpt.params.mte_affine_b = pj.at("mte_affine_b").get<std::vector<double>>();
  ckpt.params.classifier_w = pj.at("classifier_w").get<std::vector<double>>();
  ckpt.params.classifier_b = pj.at("classifier_b").get<double>();
  ckpt.params.dropout = ckpt.dropout;
  return ckpt;
}

}  // namespace mlhg::checkpoint
