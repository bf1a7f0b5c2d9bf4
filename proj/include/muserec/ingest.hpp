#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "muserec/acoustic.hpp"
#include "muserec/embed.hpp"
#include "muserec/eval.hpp"
#include "muserec/sessions.hpp"
#include "muserec/tensor.hpp"

namespace muserec {

// Rows of a lyric vector file: raw 768-d text embeddings or already-reduced
// 150-d rows; tracks without lyrics are simply absent (downstream rows stay
// zero).
struct LyricEmbeddingRecord {
  std::string track_key;
  std::vector<double> vector;
  bool reduced = false;
};

// Rows of a tag vector file: one 300-d averaged word vector per track.
struct TagEmbeddingRecord {
  std::string track_key;
  std::vector<double> vector;
  std::size_t tag_count = 1;
};

struct VectorLoadStats {
  std::size_t covered = 0;          // vocab tracks with a row in the file
  std::size_t skipped_unknown = 0;  // file rows whose key is not in the vocab
  double coverage = 0.0;            // covered / vocab size
  std::vector<std::string> warnings;
};

// Vector-file format: header `dim=<d> kind=<lyrics|tags>`, then one
// `track_key<TAB>v1 v2 ... vd` row per track. Any malformed line is an error
// with its line number.

// Raw rows (file dim > target) are PCA-reduced to `target_dim` with the basis
// fit only on covered tracks; rows already at `target_dim` pass through.
// Absent tracks become zero rows. Unknown keys warn and are skipped.
EmbeddingMatrix load_lyric_embeddings(const std::string& path, const Vocabulary& vocab,
                                      std::size_t target_dim = 150,
                                      VectorLoadStats* stats = nullptr);

// Seeded random projection with orthonormal columns (in_dim x out_dim); the
// initial linear map for tag vectors, refined later by fine-tuning.
Tensor make_tag_projection(std::size_t in_dim, std::size_t out_dim, std::uint64_t seed);

// Rows = averaged tag vector times `projection`; absent tracks are zero rows.
EmbeddingMatrix load_tag_embeddings(const std::string& path, const Vocabulary& vocab,
                                    const Tensor& projection, VectorLoadStats* stats = nullptr);

// CSV with header track_key,<the 11 feature names>. Strict mode throws on the
// first invalid record; lenient mode skips and counts it. Unknown keys warn
// and are skipped in both modes.
AcousticTable load_acoustic_features(const std::string& path, const Vocabulary& vocab,
                                     bool strict, ParseDiagnostics* diags = nullptr);

// CSV `user_id,k10_score` (header optional); scores must sit in [10, 50].
UserMetadata load_user_metadata(const std::string& path);

struct SyntheticConfig {
  std::size_t users = 200;
  std::size_t clusters = 8;
  std::size_t tracks_per_cluster = 250;
  double beta_m = 0.8;  // P(next track's cluster == current track's cluster)
  std::size_t sessions_per_user = 6;
  std::size_t session_len_min = 5;
  std::size_t session_len_max = 12;
  double at_risk_fraction = 0.3;  // leading fraction of users marked at-risk
  double repeat_boost = 0.35;     // replay probability inside the home-cluster branch
  double base_repeat = 0.05;
  double lyric_coverage = 1.0;  // fraction of tracks that get a lyric vector
  double tag_coverage = 1.0;
  std::size_t lyric_dim = 768;
  std::size_t tag_dim = 300;
  std::uint64_t seed = 1;

  std::size_t vocab_size() const { return clusters * tracks_per_cluster; }
  void validate() const;
};

struct SyntheticDataset {
  std::string events_path;
  std::string acoustic_path;
  std::string lyrics_path;
  std::string tags_path;
  std::string metadata_path;
  std::size_t vocab_size = 0;
};

// Cluster-partitioned catalogue, per-user sessions from a cluster-biased
// Markov chain, per-cluster Gaussian acoustic/lyric/tag vectors, and an
// elevated-repetition at-risk cohort. Same config (and seed) writes
// byte-identical files.
SyntheticDataset generate_synthetic_dataset(const SyntheticConfig& config,
                                            const std::string& out_dir);

// Cluster index planted in a synthetic track key ("c03_t0042" -> 3).
std::size_t synthetic_cluster_of(const std::string& track_key);

// Embedding-cache convenience over the vocabulary hash: lossless round-trip,
// stale caches (vocab mismatch) are refused.
void cache_embeddings(const EmbeddingMatrix& matrix, const Vocabulary& vocab,
                      const std::string& path);
EmbeddingMatrix load_cached(const std::string& path, const Vocabulary& vocab);

}  // namespace muserec
