#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

#include "mlhg/model.hpp"
#include "mlhg/training.hpp"

namespace mlhg::checkpoint {

inline constexpr int kFormatVersion = 1;

// A trained model together with everything needed to score unseen corpora:
// parameters, dims, the preprocessing config, vocabulary, taxonomy table and
// embedding rows. The vocabulary hash guards against tampered or mismatched
// files.
struct Checkpoint {
  int version = kFormatVersion;
  std::string variant;
  std::uint64_t seed = 0;
  int hidden_dim = 64;
  double dropout = 0.3;
  training::CorpusContext ctx;
  model::ModelParams params;
};

void save(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load(const std::filesystem::path& path);

std::uint64_t fnv1a64(std::string_view bytes);
std::string fnv1a64_hex(std::string_view bytes);
std::string hash_vocab(const corpus::Vocab& vocab);
std::string hash_file(const std::filesystem::path& path);

}  // namespace mlhg::checkpoint
