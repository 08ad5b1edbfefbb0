#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "mlhg/matrix.hpp"

namespace mlhg::corpus {

struct RawNote {
  std::string note_id;
  std::string taxonomy;
  double hour = 0.0;  // hours since first admission, >= 0
  std::string text;
};

struct PatientRecord {
  std::string patient_id;
  int label = 0;  // binary outcome
  std::vector<RawNote> notes;  // ascending by hour

  bool operator==(const PatientRecord&) const = default;
};

inline bool operator==(const RawNote& a, const RawNote& b) {
  return a.note_id == b.note_id && a.taxonomy == b.taxonomy && a.hour == b.hour && a.text == b.text;
}

struct PreprocessConfig {
  int max_notes = 30;       // per-patient cap, earliest kept
  int top_taxonomies = 6;   // corpus-wide cap by note count
  int min_token_freq = 1;
  bool lowercase = true;
};

// Dense token <-> index table. Indices are assigned in first-occurrence
// order over the preprocessed corpus.
class Vocab {
 public:
  int add(const std::string& token);  // returns existing index if present
  std::optional<int> index_of(std::string_view token) const;
  const std::string& token_of(int index) const { return tokens_[static_cast<std::size_t>(index)]; }
  std::size_t size() const { return tokens_.size(); }
  const std::vector<std::string>& tokens() const { return tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
};

struct EmbeddingTable {
  int dim = 0;
  Matrix rows;  // |V| x dim
};

// Kept taxonomy names in rank order (most frequent first); position = dense id.
class TaxonomyTable {
 public:
  TaxonomyTable() = default;
  explicit TaxonomyTable(std::vector<std::string> names);
  std::optional<int> id_of(std::string_view name) const;
  const std::string& name_of(int id) const { return names_[static_cast<std::size_t>(id)]; }
  std::size_t size() const { return names_.size(); }
  const std::vector<std::string>& names() const { return names_; }

 private:
  std::vector<std::string> names_;
  std::unordered_map<std::string, int> ids_;
};

// Parameters for the disambiguation corpus generator. The designated trigger
// token is shared token 0, the critical taxonomy is taxonomy 0, and the
// critical token is taxonomy 0's first keyword. A patient is positive iff the
// trigger and the critical token co-occur inside a single note of the
// critical taxonomy; a fraction of negatives carries the same token pair in a
// note of some other taxonomy, so models blind to taxonomy context cannot
// separate the classes.
struct SyntheticSpec {
  int n_patients = 200;
  int n_taxonomies = 4;
  int notes_min = 2, notes_max = 5;
  int note_len_min = 4, note_len_max = 10;
  int shared_vocab = 40;            // neutral tokens shared by all taxonomies
  int keywords_per_taxonomy = 10;   // taxonomy-specific tokens
  double positive_rate = 0.3;
  double decoy_rate = 0.5;          // fraction of negatives given a wrong-taxonomy pair
  std::uint64_t seed = 0;
};

std::vector<std::string> tokenize(std::string_view text, bool lowercase = true);

// Total token count of a (preprocessed) patient.
std::size_t token_count(const PatientRecord& record);

// JSON Lines, one patient per line:
// {"patient_id": str, "label": 0|1, "notes": [{"note_id", "taxonomy", "hour", "text"}]}
std::vector<PatientRecord> parse_corpus(const std::filesystem::path& path);
void write_corpus(const std::filesystem::path& path, const std::vector<PatientRecord>& records);

struct PreprocessResult {
  std::vector<PatientRecord> records;
  Vocab vocab;
  TaxonomyTable taxonomies;
};

// Taxonomy filter -> per-patient note cap -> tokenize -> frequency filter ->
// drop emptied patients -> vocabulary in first-occurrence order. Note text is
// rewritten as the space-joined surviving tokens.
PreprocessResult preprocess(const std::vector<PatientRecord>& records, const PreprocessConfig& config);

// Inductive variant: keeps only notes/tokens known to a fixed vocabulary and
// taxonomy table (for scoring unseen corpora with a trained model). Patients
// reduced to zero notes or zero tokens are dropped.
std::vector<PatientRecord> preprocess_with_vocab(const std::vector<PatientRecord>& records,
                                                 const PreprocessConfig& config, const Vocab& vocab,
                                                 const TaxonomyTable& taxonomies);

// Plain-text embeddings, one "token v1 ... v_dim" per line. Vocabulary tokens
// absent from the file (or the whole file, when path is nullopt) get seeded
// Gaussian(0, 0.1) rows.
EmbeddingTable load_embeddings(const std::optional<std::filesystem::path>& path, const Vocab& vocab,
                               int dim, std::uint64_t seed);

std::pair<std::vector<PatientRecord>, std::vector<PatientRecord>> split_train_val(
    const std::vector<PatientRecord>& records, double val_fraction, std::uint64_t seed);

std::vector<PatientRecord> generate_synthetic(const SyntheticSpec& spec);

// Token-count boundaries between the short/medium/long groups.
inline constexpr std::size_t kShortMax = 600;   // short: w < 600
inline constexpr std::size_t kMediumMax = 1600; // medium: 600 <= w < 1600

enum class LengthBucket { kShort, kMedium, kLong };

LengthBucket bucket_of(const PatientRecord& record);

struct LengthBuckets {
  std::vector<PatientRecord> short_group;
  std::vector<PatientRecord> medium_group;
  std::vector<PatientRecord> long_group;
};

LengthBuckets bucket_by_length(const std::vector<PatientRecord>& records);

const char* bucket_name(LengthBucket b);

}  // namespace mlhg::corpus
