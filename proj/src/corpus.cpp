#include "mlhg/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "mlhg/errors.hpp"
#include "mlhg/rng.hpp"
#include "json.hpp"

namespace mlhg::corpus {

namespace {

using ordered_json = nlohmann::ordered_json;

bool is_token_char(char c) {
  return (c >= '0' && c <= '9') || (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z');
}

char to_lower_ascii(char c) { return (c >= 'A' && c <= 'Z') ? static_cast<char>(c - 'A' + 'a') : c; }

void sort_notes_by_hour(PatientRecord& record) {
  std::stable_sort(record.notes.begin(), record.notes.end(),
                   [](const RawNote& a, const RawNote& b) { return a.hour < b.hour; });
}

const ordered_json& require_field(const ordered_json& obj, const char* name, long line) {
  auto it = obj.find(name);
  if (it == obj.end()) throw ValidationError("line " + std::to_string(line) + ": missing required field \"" + std::string(name) + "\"");
  return *it;
}

}  // namespace

std::vector<std::string> tokenize(std::string_view text, bool lowercase) {
  std::vector<std::string> tokens;
  std::string current;
  for (char c : text) {
    if (is_token_char(c)) {
      current.push_back(lowercase ? to_lower_ascii(c) : c);
    } else if (!current.empty()) {
      tokens.push_back(std::move(current));
      current.clear();
    }
  }
  if (!current.empty()) tokens.push_back(std::move(current));
  return tokens;
}

std::size_t token_count(const PatientRecord& record) {
  std::size_t n = 0;
  for (const auto& note : record.notes) n += tokenize(note.text).size();
  return n;
}

int Vocab::add(const std::string& token) {
  auto it = index_.find(token);
  if (it != index_.end()) return it->second;
  const int idx = static_cast<int>(tokens_.size());
  tokens_.push_back(token);
  index_.emplace(token, idx);
  return idx;
}

std::optional<int> Vocab::index_of(std::string_view token) const {
  auto it = index_.find(std::string(token));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

TaxonomyTable::TaxonomyTable(std::vector<std::string> names) : names_(std::move(names)) {
  for (std::size_t i = 0; i < names_.size(); ++i) ids_.emplace(names_[i], static_cast<int>(i));
}

std::optional<int> TaxonomyTable::id_of(std::string_view name) const {
  auto it = ids_.find(std::string(name));
  if (it == ids_.end()) return std::nullopt;
  return it->second;
}

std::vector<PatientRecord> parse_corpus(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open corpus file: " + path.string());

  std::vector<PatientRecord> records;
  std::string line;
  long line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;

    ordered_json obj;
    try {
      obj = ordered_json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(std::string("malformed JSON: ") + e.what(), line_no);
    }
    if (!obj.is_object()) throw ParseError("expected a JSON object", line_no);

    PatientRecord record;
    const auto& pid = require_field(obj, "patient_id", line_no);
    if (!pid.is_string()) throw ValidationError("line " + std::to_string(line_no) + ": field \"patient_id\" must be a string");
    record.patient_id = pid.get<std::string>();

    const auto& label = require_field(obj, "label", line_no);
    if (!label.is_number_integer() || (label.get<long>() != 0 && label.get<long>() != 1))
      throw ValidationError("line " + std::to_string(line_no) + ": field \"label\" must be 0 or 1");
    record.label = label.get<int>();

    const auto& notes = require_field(obj, "notes", line_no);
    if (!notes.is_array()) throw ValidationError("line " + std::to_string(line_no) + ": field \"notes\" must be an array");

    std::set<std::string> seen_note_ids;
    for (const auto& jnote : notes) {
      if (!jnote.is_object()) throw ValidationError("line " + std::to_string(line_no) + ": notes entries must be objects");
      RawNote note;
      const auto& nid = require_field(jnote, "note_id", line_no);
      if (!nid.is_string()) throw ValidationError("line " + std::to_string(line_no) + ": field \"note_id\" must be a string");
      note.note_id = nid.get<std::string>();
      if (!seen_note_ids.insert(note.note_id).second)
        throw ValidationError("line " + std::to_string(line_no) + ": duplicate note_id \"" + note.note_id +
                              "\" in patient \"" + record.patient_id + "\"");

      const auto& tax = require_field(jnote, "taxonomy", line_no);
      if (!tax.is_string()) throw ValidationError("line " + std::to_string(line_no) + ": field \"taxonomy\" must be a string");
      note.taxonomy = tax.get<std::string>();

      const auto& hour = require_field(jnote, "hour", line_no);
      if (!hour.is_number()) throw ValidationError("line " + std::to_string(line_no) + ": field \"hour\" must be a number");
      note.hour = hour.get<double>();
      if (!(note.hour >= 0.0)) throw ValidationError("line " + std::to_string(line_no) + ": field \"hour\" must be >= 0");

      const auto& text = require_field(jnote, "text", line_no);
      if (!text.is_string()) throw ValidationError("line " + std::to_string(line_no) + ": field \"text\" must be a string");
      note.text = text.get<std::string>();

      record.notes.push_back(std::move(note));
    }
    sort_notes_by_hour(record);
    records.push_back(std::move(record));
  }
  return records;
}

void write_corpus(const std::filesystem::path& path, const std::vector<PatientRecord>& records) {
  std::ofstream out(path);
  if (!out) throw ParseError("cannot open file for writing: " + path.string());
  for (const auto& record : records) {
    ordered_json obj;
    obj["patient_id"] = record.patient_id;
    obj["label"] = record.label;
    ordered_json notes = ordered_json::array();
    for (const auto& note : record.notes) {
      ordered_json jnote;
      jnote["note_id"] = note.note_id;
      jnote["taxonomy"] = note.taxonomy;
      jnote["hour"] = note.hour;
      jnote["text"] = note.text;
      notes.push_back(std::move(jnote));
    }
    obj["notes"] = std::move(notes);
    out << obj.dump() << '\n';
  }
}

PreprocessResult preprocess(const std::vector<PatientRecord>& records, const PreprocessConfig& config) {
  if (records.empty()) throw ValidationError("preprocess: empty corpus");
  if (config.max_notes < 1 || config.top_taxonomies < 1)
    throw ValidationError("preprocess: max_notes and top_taxonomies must be >= 1");

  // Rank taxonomies by corpus-wide note count, ties lexicographic.
  std::map<std::string, std::size_t> tax_counts;
  for (const auto& record : records)
    for (const auto& note : record.notes) ++tax_counts[note.taxonomy];
  std::vector<std::pair<std::string, std::size_t>> ranked(tax_counts.begin(), tax_counts.end());
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  if (ranked.size() > static_cast<std::size_t>(config.top_taxonomies))
    ranked.resize(static_cast<std::size_t>(config.top_taxonomies));
  std::vector<std::string> kept_names;
  kept_names.reserve(ranked.size());
  for (const auto& [name, count] : ranked) kept_names.push_back(name);
  TaxonomyTable taxonomies(kept_names);

  // Taxonomy filter, note cap, tokenization.
  struct TokenizedNote {
    RawNote note;
    std::vector<std::string> tokens;
  };
  struct TokenizedPatient {
    std::string patient_id;
    int label = 0;
    std::vector<TokenizedNote> notes;
  };
  std::vector<TokenizedPatient> working;
  std::unordered_map<std::string, std::size_t> token_freq;
  for (const auto& record : records) {
    TokenizedPatient patient;
    patient.patient_id = record.patient_id;
    patient.label = record.label;
    for (const auto& note : record.notes) {
      if (!taxonomies.id_of(note.taxonomy)) continue;
      if (patient.notes.size() >= static_cast<std::size_t>(config.max_notes)) break;
      TokenizedNote tn;
      tn.note = note;
      tn.tokens = tokenize(note.text, config.lowercase);
      patient.notes.push_back(std::move(tn));
    }
    for (const auto& tn : patient.notes)
      for (const auto& token : tn.tokens) ++token_freq[token];
    working.push_back(std::move(patient));
  }

  // Frequency filter, empty-note/patient drops, vocabulary.
  PreprocessResult result;
  result.taxonomies = std::move(taxonomies);
  for (auto& patient : working) {
    PatientRecord out;
    out.patient_id = patient.patient_id;
    out.label = patient.label;
    for (auto& tn : patient.notes) {
      std::vector<std::string> kept;
      for (auto& token : tn.tokens)
        if (token_freq[token] >= static_cast<std::size_t>(config.min_token_freq)) kept.push_back(std::move(token));
      if (kept.empty()) continue;
      for (const auto& token : kept) result.vocab.add(token);
      RawNote note = tn.note;
      std::string joined;
      for (std::size_t i = 0; i < kept.size(); ++i) {
        if (i) joined.push_back(' ');
        joined += kept[i];
      }
      note.text = std::move(joined);
      out.notes.push_back(std::move(note));
    }
    if (!out.notes.empty()) result.records.push_back(std::move(out));
  }
  if (result.records.empty()) throw ValidationError("preprocess: all patients eliminated");
  return result;
}

std::vector<PatientRecord> preprocess_with_vocab(const std::vector<PatientRecord>& records,
                                                 const PreprocessConfig& config, const Vocab& vocab,
                                                 const TaxonomyTable& taxonomies) {
  std::vector<PatientRecord> out;
  for (const auto& record : records) {
    PatientRecord kept;
    kept.patient_id = record.patient_id;
    kept.label = record.label;
    for (const auto& note : record.notes) {
      if (!taxonomies.id_of(note.taxonomy)) continue;
      if (kept.notes.size() >= static_cast<std::size_t>(config.max_notes)) break;
      std::vector<std::string> tokens;
      for (auto& token : tokenize(note.text, config.lowercase))
        if (vocab.index_of(token)) tokens.push_back(std::move(token));
      if (tokens.empty()) continue;
      RawNote filtered = note;
      std::string joined;
      for (std::size_t i = 0; i < tokens.size(); ++i) {
        if (i) joined.push_back(' ');
        joined += tokens[i];
      }
      filtered.text = std::move(joined);
      kept.notes.push_back(std::move(filtered));
    }
    if (!kept.notes.empty()) out.push_back(std::move(kept));
  }
  return out;
}

EmbeddingTable load_embeddings(const std::optional<std::filesystem::path>& path, const Vocab& vocab,
                               int dim, std::uint64_t seed) {
  if (dim < 1) throw ValidationError("load_embeddings: dim must be >= 1");
  EmbeddingTable table;
  table.dim = dim;
  table.rows = Matrix(vocab.size(), static_cast<std::size_t>(dim));
  std::vector<bool> filled(vocab.size(), false);

  if (path) {
    std::ifstream in(*path);
    if (!in) throw ParseError("cannot open embedding file: " + path->string());
    std::string line;
    long line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      std::istringstream iss(line);
      std::string token;
      iss >> token;
      std::vector<double> values;
      double v;
      while (iss >> v) values.push_back(v);
      if (values.size() != static_cast<std::size_t>(dim))
        throw ParseError("embedding vector has " + std::to_string(values.size()) + " values, expected " +
                             std::to_string(dim),
                         line_no);
      if (auto idx = vocab.index_of(token)) {
        for (int j = 0; j < dim; ++j) table.rows(static_cast<std::size_t>(*idx), static_cast<std::size_t>(j)) = values[static_cast<std::size_t>(j)];
        filled[static_cast<std::size_t>(*idx)] = true;
      }
    }
  }

  Rng rng(sub_seed(seed, seed_role::kEmbedding));
  for (std::size_t i = 0; i < vocab.size(); ++i) {
    if (filled[i]) continue;
    for (int j = 0; j < dim; ++j) table.rows(i, static_cast<std::size_t>(j)) = rng.gaussian(0.0, 0.1);
  }
  return table;
}

std::pair<std::vector<PatientRecord>, std::vector<PatientRecord>> split_train_val(
    const std::vector<PatientRecord>& records, double val_fraction, std::uint64_t seed) {
  if (records.size() < 2) throw ValidationError("split_train_val: need at least 2 records");
  if (!(val_fraction > 0.0 && val_fraction < 1.0))
    throw ValidationError("split_train_val: val_fraction must be in (0, 1)");

  std::vector<std::size_t> order(records.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(sub_seed(seed, seed_role::kSplit));
  rng.shuffle(order);

  const auto n_val = static_cast<std::size_t>(std::llround(val_fraction * static_cast<double>(records.size())));
  std::pair<std::vector<PatientRecord>, std::vector<PatientRecord>> out;
  for (std::size_t i = 0; i < order.size(); ++i) {
    if (i < n_val)
      out.second.push_back(records[order[i]]);
    else
      out.first.push_back(records[order[i]]);
  }
  return out;
}

std::vector<PatientRecord> generate_synthetic(const SyntheticSpec& spec) {
  if (spec.n_patients < 1) throw ValidationError("synthetic: n_patients must be >= 1");
  if (spec.n_taxonomies < 2) throw ValidationError("synthetic: need at least 2 taxonomies");
  if (spec.notes_min < 1 || spec.notes_min > spec.notes_max)
    throw ValidationError("synthetic: bad notes_per_patient range");
  if (spec.note_len_min < 2)
    throw ValidationError("synthetic: note_length must be >= 2 for the trigger rule");
  if (spec.note_len_min > spec.note_len_max) throw ValidationError("synthetic: bad note_length range");
  if (spec.shared_vocab < 2) throw ValidationError("synthetic: shared_vocab must be >= 2");
  if (spec.keywords_per_taxonomy < 1) throw ValidationError("synthetic: keywords_per_taxonomy must be >= 1");
  if (!(spec.positive_rate > 0.0 && spec.positive_rate < 1.0))
    throw ValidationError("synthetic: positive_rate must be in (0, 1)");
  if (spec.decoy_rate < 0.0 || spec.decoy_rate > 1.0)
    throw ValidationError("synthetic: decoy_rate must be in [0, 1]");

  const std::string trigger = "w0";                // shared neutral trigger
  const std::string critical = "t0k0";             // keyword of the critical taxonomy
  const int critical_tax = 0;

  Rng rng(sub_seed(spec.seed, seed_role::kSynthesis));

  // Exact positive count, assignment shuffled.
  std::vector<int> labels(static_cast<std::size_t>(spec.n_patients), 0);
  const auto n_pos = static_cast<std::size_t>(std::llround(spec.positive_rate * spec.n_patients));
  for (std::size_t i = 0; i < n_pos && i < labels.size(); ++i) labels[i] = 1;
  rng.shuffle(labels);

  auto shared_token = [&](int idx) { return "w" + std::to_string(idx); };
  auto keyword_token = [&](int tax, int idx) { return "t" + std::to_string(tax) + "k" + std::to_string(idx); };

  std::vector<PatientRecord> records;
  records.reserve(labels.size());
  for (std::size_t p = 0; p < labels.size(); ++p) {
    PatientRecord record;
    record.patient_id = "p" + std::to_string(p);
    record.label = labels[p];

    const int n_notes = static_cast<int>(rng.range(spec.notes_min, spec.notes_max));
    double hour = 0.0;
    std::vector<int> note_tax(static_cast<std::size_t>(n_notes));
    note_tax[0] = critical_tax;  // every patient has at least one critical-taxonomy note
    for (int j = 1; j < n_notes; ++j) note_tax[static_cast<std::size_t>(j)] = static_cast<int>(rng.below(static_cast<std::uint64_t>(spec.n_taxonomies)));

    std::vector<std::vector<std::string>> note_tokens(static_cast<std::size_t>(n_notes));
    for (int j = 0; j < n_notes; ++j) {
      const int tax = note_tax[static_cast<std::size_t>(j)];
      const int len = static_cast<int>(rng.range(spec.note_len_min, spec.note_len_max));
      auto& tokens = note_tokens[static_cast<std::size_t>(j)];
      tokens.reserve(static_cast<std::size_t>(len));
      for (int t = 0; t < len; ++t) {
        if (rng.uniform() < 0.5) {
          int idx = static_cast<int>(rng.below(static_cast<std::uint64_t>(spec.shared_vocab)));
          // Negatives never carry the trigger inside the critical taxonomy,
          // which makes the labeling rule an exact iff.
          if (record.label == 0 && tax == critical_tax && idx == 0) idx = 1;
          tokens.push_back(shared_token(idx));
        } else {
          tokens.push_back(keyword_token(tax, static_cast<int>(rng.below(static_cast<std::uint64_t>(spec.keywords_per_taxonomy)))));
        }
      }
    }

    auto inject_pair = [&](int note_idx) {
      auto& tokens = note_tokens[static_cast<std::size_t>(note_idx)];
      const auto len = tokens.size();
      const auto a = static_cast<std::size_t>(rng.below(len));
      auto b = static_cast<std::size_t>(rng.below(len - 1));
      if (b >= a) ++b;
      tokens[a] = trigger;
      tokens[b] = critical;
    };

    if (record.label == 1) {
      std::vector<int> critical_notes;
      for (int j = 0; j < n_notes; ++j)
        if (note_tax[static_cast<std::size_t>(j)] == critical_tax) critical_notes.push_back(j);
      inject_pair(critical_notes[static_cast<std::size_t>(rng.below(critical_notes.size()))]);
    } else if (rng.uniform() < spec.decoy_rate) {
      std::vector<int> other_notes;
      for (int j = 0; j < n_notes; ++j)
        if (note_tax[static_cast<std::size_t>(j)] != critical_tax) other_notes.push_back(j);
      if (!other_notes.empty()) inject_pair(other_notes[static_cast<std::size_t>(rng.below(other_notes.size()))]);
    }

    for (int j = 0; j < n_notes; ++j) {
      RawNote note;
      note.note_id = record.patient_id + "_n" + std::to_string(j);
      note.taxonomy = "tax" + std::to_string(note_tax[static_cast<std::size_t>(j)]);
      hour += rng.uniform(0.5, 12.0);
      note.hour = hour;
      std::string text;
      const auto& tokens = note_tokens[static_cast<std::size_t>(j)];
      for (std::size_t t = 0; t < tokens.size(); ++t) {
        if (t) text.push_back(' ');
        text += tokens[t];
      }
      note.text = std::move(text);
      record.notes.push_back(std::move(note));
    }
    records.push_back(std::move(record));
  }
  return records;
}

LengthBucket bucket_of(const PatientRecord& record) {
  const std::size_t w = token_count(record);
  if (w < kShortMax) return LengthBucket::kShort;
  if (w < kMediumMax) return LengthBucket::kMedium;
  return LengthBucket::kLong;
}

LengthBuckets bucket_by_length(const std::vector<PatientRecord>& records) {
  LengthBuckets buckets;
  for (const auto& record : records) {
    switch (bucket_of(record)) {
      case LengthBucket::kShort: buckets.short_group.push_back(record); break;
      case LengthBucket::kMedium: buckets.medium_group.push_back(record); break;
      case LengthBucket::kLong: buckets.long_group.push_back(record); break;
    }
  }
  return buckets;
}

const char* bucket_name(LengthBucket b) {
  switch (b) {
    case LengthBucket::kShort: return "short";
    case LengthBucket::kMedium: return "medium";
    case LengthBucket::kLong: return "long";
  }
  return "?";
}

}  // namespace mlhg::corpus
