#ifndef MUSEREC_FUSION_HPP
#define MUSEREC_FUSION_HPP

#include <optional>
#include <string>
#include <vector>

#include "muserec/autodiff.hpp"
#include "muserec/embed.hpp"
#include "muserec/param_store.hpp"
#include "muserec/rng.hpp"
#include "muserec/sessions.hpp"

namespace muserec {

/// gru4rec strips attention and modalities (last hidden state straight into
/// the output layer); ann keeps the attentive architecture but runs on the
/// track path alone. The full model is `none` plus modality flags.
enum class BaselineMode { none, gru4rec, ann };

BaselineMode parse_baseline_mode(const std::string& name);

struct ModelConfig {
  bool use_acoustic = false;
  bool use_lyrics = false;
  bool use_tags = false;
  std::size_t embed_dim = 150;
  std::size_t gru_hidden = 150;
  std::size_t fusion_hidden = 256;
  double dropout = 0.2;
  double lr = 1e-3;
  std::size_t batch = 32;
  double leaky_slope = 0.01;
  BaselineMode baseline = BaselineMode::none;
  std::size_t epochs = 10;

  /// Track context plus one per active flag.
  std::size_t active_modalities() const;
  /// Width of the fusion layer input (contexts concatenated).
  std::size_t fc1_input_dim() const;
  void validate() const;
};

/// All trainable state. Embedding tables are fine-tuned along with the rest.
struct FusionModel {
  ModelConfig config;
  std::size_t vocab_size = 0;
  ParamStore store;
};

/// Builds the parameter set. E1 comes from `track_init` (cbow / lsa / random
/// per variant); E2-E4 from the optional pretrained tables when the matching
/// flag is on (required then). GRU/attention/head weights are Xavier draws
/// from `rng`.
FusionModel init_fusion_model(const ModelConfig& config, std::size_t vocab_size,
                              const EmbeddingMatrix& track_init,
                              const EmbeddingMatrix* acoustic_init,
                              const EmbeddingMatrix* lyric_init,
                              const EmbeddingMatrix* tag_init, SeededRng& rng);

/// Inverted-dropout mask: entries are 0 with probability p, else 1/(1-p).
/// p >= 1 yields all zeros.
Tensor dropout_mask(std::size_t n, double p, SeededRng& rng);

/// One prefix recorded on the tape. In training mode dropout masks drawn
/// from `rng` multiply every embedding lookup; in eval mode lookups are the
/// raw rows. With a target, `ce` holds the cross-entropy node.
struct TapeForward {
  std::vector<VarId> hidden;    // summed (or forward-only) GRU states
  VarId alpha = -1;             // -1 when the attention path is off
  std::vector<VarId> contexts;  // track [, acoustic, lyric, tag]
  VarId logits = -1;
  VarId ce = -1;
};

TapeForward forward_on_tape(Tape& tape, FusionModel& model, const std::vector<TrackId>& prefix,
                            bool training, SeededRng* rng, const TrackId* target);

/// Eval-mode forward pass, values only.
struct ForwardTrace {
  std::vector<Tensor> hidden;
  Tensor alpha;                  // empty for gru4rec
  std::vector<Tensor> contexts;  // empty for gru4rec
  Tensor output;                 // softmax over the vocabulary
};

ForwardTrace model_forward(const FusionModel& model, const std::vector<TrackId>& prefix);

struct TrainingPair {
  const Session* session;
  std::size_t prefix_len;  // target is session->tracks[prefix_len]
};

/// Every within-session prefix of every training session.
std::vector<TrainingPair> make_training_pairs(const std::vector<const Session*>& sessions);

/// Mean cross-entropy over the batch, gradients through one Adam step.
double training_step(FusionModel& model, const std::vector<TrainingPair>& batch, SeededRng& rng);

/// Epoch loop: pairs bucketed by prefix length (no padding), per-epoch
/// seeded shuffle inside buckets and across batches. Returns the mean loss
/// of each epoch.
std::vector<double> train_model(FusionModel& model, const std::vector<const Session*>& sessions,
                                SeededRng& rng);

/// Top-k track indices by output probability, ties broken by ascending
/// index. Throws when k exceeds the vocabulary or the prefix is empty.
std::vector<TrackId> predict_topk(const FusionModel& model, const std::vector<TrackId>& prefix,
                                  std::size_t k);

/// The exact (name, shape) directory init_fusion_model produces — the
/// contract checkpoints are validated against.
std::vector<std::pair<std::string, std::vector<std::size_t>>> fusion_param_shapes(
    const ModelConfig& config, std::size_t vocab_size);

}  // namespace muserec

#endif
