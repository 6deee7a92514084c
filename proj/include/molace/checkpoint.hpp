#pragma once

// Binary checkpoint: 8-byte magic "MOLACEK1", little-endian u64 header length,
// a JSON header (architecture, vocabulary, tensor table, provenance), then the
// raw float64 tensor data in header order.

#include <filesystem>

#include "json.hpp"
#include "molace/toy_corpus.hpp"

namespace molace {

struct Checkpoint {
  TransformerConfig arch;
  std::vector<std::string> vocab;
  TransformerWeights weights;
  nlohmann::json provenance = nlohmann::json::object();
  std::optional<ToyCorpusConfig> corpus;
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

Checkpoint make_checkpoint(const ToyModel& toy, const ToyTrainConfig& config);
/// Rebuilds the model (and the toy corpus when the checkpoint records one).
ToyModel toy_from_checkpoint(const Checkpoint& ckpt);

}  // namespace molace
