#ifndef MUSEREC_ACOUSTIC_HPP
#define MUSEREC_ACOUSTIC_HPP

#include <array>
#include <string>
#include <vector>

#include "muserec/autodiff.hpp"
#include "muserec/embed.hpp"
#include "muserec/param_store.hpp"
#include "muserec/rng.hpp"
#include "muserec/tensor.hpp"

namespace muserec {

inline constexpr std::size_t kNumAcousticFeatures = 11;

/// Feature order used everywhere, matching the acoustic CSV header.
extern const std::array<const char*, kNumAcousticFeatures> kAcousticFeatureNames;

/// One track's audio profile: seven [0,1] proportions plus loudness (dB),
/// mode (0/1), tempo (BPM) and duration (ms), stored in header order.
struct AcousticFeatureVector {
  std::array<double, kNumAcousticFeatures> values{};

  double& operator[](std::size_t i) { return values[i]; }
  double operator[](std::size_t i) const { return values[i]; }
};

/// Throws Error naming the offending feature when a value is out of range.
void validate_acoustic_features(const AcousticFeatureVector& f);

/// Per-track feature rows aligned with the vocabulary; `present[t]` is false
/// for tracks without features (their rows stay zero).
struct AcousticTable {
  std::vector<bool> present;
  Tensor rows;  // |V| x 11

  explicit AcousticTable(std::size_t vocab_size = 0)
      : present(vocab_size, false), rows(Tensor::zeros({vocab_size, kNumAcousticFeatures})) {}
  void set(std::size_t track, const AcousticFeatureVector& f);
  std::size_t covered() const;
};

/// Z-score scaler fit on training tracks. Features with zero variance are
/// flagged and passed through centered only.
struct FeatureStandardizer {
  Tensor mean;                 // 11
  Tensor std_dev;              // 11 (1.0 where constant)
  std::vector<bool> constant;  // per-feature zero-variance flag

  static FeatureStandardizer fit(const Tensor& rows, const std::vector<bool>& use_row);
  Tensor standardize(const Tensor& features) const;
  Tensor unstandardize(const Tensor& z) const;
};

struct VaeConfig {
  std::size_t latent_dim = 150;
  std::size_t hidden_dim = 64;
  double kl_weight = 0.01;  // beta; the latent is overcomplete for 11 inputs
  double lr = 1e-3;
  std::size_t batch = 32;
};

/// Encoder 11 -> hidden(tanh) -> {mu, logvar}; decoder latent -> hidden(tanh)
/// -> 11 linear. logvar is clamped to [-10, 10] everywhere.
struct VaeParams {
  VaeConfig config;
  ParamStore store;

  static VaeParams init(const VaeConfig& config, SeededRng& rng);
};

inline constexpr double kLogVarClampLo = -10.0;
inline constexpr double kLogVarClampHi = 10.0;

struct VaeEncoding {
  Tensor mu;
  Tensor logvar;  // already clamped
};

/// Deterministic posterior parameters for one standardized feature vector.
VaeEncoding vae_encode(const Tensor& s, const VaeParams& params);

/// Decoder output (standardized feature space) for a latent point.
Tensor vae_decode(const Tensor& z, const VaeParams& params);

/// Records reconstruction-MSE + kl_weight * KL(posterior || N(0, I)) on the
/// tape for one example with the given reparameterization noise. Exposed so
/// tests can gradient-check with frozen noise.
VarId vae_loss_on_tape(Tape& tape, ParamStore& store, const VaeConfig& config, const Tensor& s,
                       const Tensor& noise);

/// Convenience scalar loss: samples noise from `rng`, no gradients kept.
double vae_loss(const Tensor& s, VaeParams& params, SeededRng& rng);

/// Adam over shuffled batches of standardized rows. At least two rows
/// required. Optionally reports mean per-example loss by epoch.
VaeParams train_vae(const Tensor& standardized_rows, const VaeConfig& config, std::size_t epochs,
                    SeededRng& rng, std::vector<double>* epoch_losses = nullptr);

/// Per-track posterior means (provenance "vae"); tracks without features get
/// zero rows.
EmbeddingMatrix export_acoustic_embeddings(const VaeParams& params,
                                           const FeatureStandardizer& standardizer,
                                           const AcousticTable& table);

}  // namespace muserec

#endif
