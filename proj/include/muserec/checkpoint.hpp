#pragma once

#include <string>

#include "muserec/fusion.hpp"

namespace muserec {

// Extra strings carried alongside the parameters: the report row label
// (variant name) and where E1 came from (cbow | lsa | random) — the only
// thing separating structurally identical variants like ann and ann-lsa.
struct CheckpointMeta {
  std::string label;
  std::string track_provenance;
  std::string vocab_hash;
};

// Versioned binary container: magic + version line, JSON header (config,
// vocabulary hash, tensor directory), then raw little-endian doubles per
// tensor in directory order. Round-trips bit-exactly.
void save_checkpoint(const FusionModel& model, const CheckpointMeta& meta,
                     const std::string& path);

// Rejects unknown versions, malformed headers, truncated payloads, directory
// drift from the config's parameter contract, and — unless
// `expected_vocab_hash` is empty — any vocabulary-hash mismatch.
FusionModel load_checkpoint(const std::string& path, const std::string& expected_vocab_hash,
                            CheckpointMeta* meta = nullptr);

}  // namespace muserec
