#ifndef MUSEREC_EMBED_HPP
#define MUSEREC_EMBED_HPP

#include <string>
#include <utility>
#include <vector>

#include "muserec/rng.hpp"
#include "muserec/sessions.hpp"
#include "muserec/tensor.hpp"

namespace muserec {

/// |V| x d table of track vectors plus a tag recording how it was produced
/// ("cbow" | "lsa" | "random"). Rows for tracks the producer never saw are
/// zero until init_unseen_tracks fills them.
struct EmbeddingMatrix {
  Tensor table;
  std::string provenance;

  std::size_t rows() const { return table.shape[0]; }
  std::size_t dim() const { return table.shape[1]; }
};

struct CbowConfig {
  std::size_t dim = 150;
  std::size_t window = 5;
  std::size_t negative = 5;
  std::size_t epochs = 5;
  double initial_lr = 0.025;
  std::size_t min_count = 1;
};

/// Sessions-as-sentences CBOW with negative sampling. Context is the mean of
/// the (dynamically shrunk) window rows; negatives come from the unigram^0.75
/// distribution. Sequential and fully driven by `rng`, so identical seeds
/// give identical tables. Optionally reports the mean per-center loss of each
/// epoch.
EmbeddingMatrix train_cbow(const std::vector<const Session*>& sessions, std::size_t vocab_size,
                           const CbowConfig& config, SeededRng& rng,
                           std::vector<double>* epoch_losses = nullptr);

/// Sparse session-by-track play-count matrix over the training split.
struct SessionTrackMatrix {
  std::size_t cols = 0;
  // per session, (track, count) sorted by track
  std::vector<std::vector<std::pair<TrackId, double>>> rows;

  static SessionTrackMatrix build(const std::vector<const Session*>& sessions,
                                  std::size_t vocab_size);
  Tensor densify() const;
};

/// Truncated SVD of the count matrix; track t's vector is row t of V·diag(S).
/// Requested rank beyond min(rows, cols) is clamped, with trailing output
/// dimensions left at zero so the table is always |V| x rank.
EmbeddingMatrix train_lsa_embeddings(const SessionTrackMatrix& matrix, std::size_t rank);

/// Replaces rows of tracks absent from training (seen[t] == false) with
/// uniform(-0.5/d, 0.5/d) draws, in ascending track order.
void init_unseen_tracks(EmbeddingMatrix& emb, const std::vector<bool>& seen, SeededRng& rng);

/// Fresh uniform(-0.5/d, 0.5/d) table, provenance "random".
EmbeddingMatrix random_embeddings(std::size_t vocab_size, std::size_t dim, SeededRng& rng);

/// Text cache: header `dim=<d> provenance=<tag> vocab_hash=<hex>`, one
/// `track_index v1 ... vd` row per track, values printed to round-trip
/// exactly. Loading verifies the stored hash against `expected_vocab_hash`.
void save_embeddings(const EmbeddingMatrix& emb, const std::string& vocab_hash,
                     const std::string& path);
EmbeddingMatrix load_embeddings(const std::string& path, const std::string& expected_vocab_hash);

}  // namespace muserec

#endif
