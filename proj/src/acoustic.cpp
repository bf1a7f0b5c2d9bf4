#include "muserec/acoustic.hpp"

#include <algorithm>
#include <limits>
#include <cmath>
#include <numeric>

namespace muserec {

const std::array<const char*, kNumAcousticFeatures> kAcousticFeatureNames = {
    "acousticness", "danceability", "duration_ms", "energy",  "instrumentalness", "liveness",
    "loudness",     "mode",         "speechiness", "tempo",   "valence"};

void validate_acoustic_features(const AcousticFeatureVector& f) {
  auto fail = [&](std::size_t i) {
    throw Error(std::string("acoustic: feature '") + kAcousticFeatureNames[i] +
                "' out of range: " + std::to_string(f[i]));
  };
  for (std::size_t i = 0; i < kNumAcousticFeatures; ++i)
    if (!std::isfinite(f[i])) fail(i);
  for (std::size_t i : {0u, 1u, 3u, 4u, 5u, 8u, 10u})  // the [0,1] proportions
    if (f[i] < 0.0 || f[i] > 1.0) fail(i);
  if (f[2] <= 0.0) fail(2);                 // duration_ms
  if (f[6] < -60.0 || f[6] > 0.0) fail(6);  // loudness
  if (f[7] != 0.0 && f[7] != 1.0) fail(7);  // mode
  if (f[9] <= 0.0) fail(9);                 // tempo
}

void AcousticTable::set(std::size_t track, const AcousticFeatureVector& f) {
  present.at(track) = true;
  double* row = rows.row_ptr(track);
  std::copy(f.values.begin(), f.values.end(), row);
}

std::size_t AcousticTable::covered() const {
  return static_cast<std::size_t>(std::count(present.begin(), present.end(), true));
}

FeatureStandardizer FeatureStandardizer::fit(const Tensor& rows,
                                             const std::vector<bool>& use_row) {
  if (rows.shape.size() != 2 || rows.shape[1] != kNumAcousticFeatures)
    throw Error("standardizer: expected n x 11 feature rows");
  std::size_t n = 0;
  FeatureStandardizer st;
  st.mean = Tensor::vector(kNumAcousticFeatures);
  st.std_dev = Tensor::vector(kNumAcousticFeatures);
  st.constant.assign(kNumAcousticFeatures, false);
  std::array<double, kNumAcousticFeatures> lo{}, hi{};
  lo.fill(std::numeric_limits<double>::infinity());
  hi.fill(-std::numeric_limits<double>::infinity());
  for (std::size_t r = 0; r < rows.shape[0]; ++r) {
    if (!use_row[r]) continue;
    ++n;
    for (std::size_t j = 0; j < kNumAcousticFeatures; ++j) {
      const double v = rows.at(r, j);
      st.mean.data[j] += v;
      lo[j] = std::min(lo[j], v);
      hi[j] = std::max(hi[j], v);
    }
  }
  if (n == 0) throw Error("standardizer: no feature rows to fit on");
  for (double& m : st.mean.data) m /= static_cast<double>(n);
  for (std::size_t r = 0; r < rows.shape[0]; ++r) {
    if (!use_row[r]) continue;
    for (std::size_t j = 0; j < kNumAcousticFeatures; ++j) {
      const double d = rows.at(r, j) - st.mean.data[j];
      st.std_dev.data[j] += d * d;
    }
  }
  for (std::size_t j = 0; j < kNumAcousticFeatures; ++j) {
    st.std_dev.data[j] = std::sqrt(st.std_dev.data[j] / static_cast<double>(n));
    // lo == hi catches exact constancy the accumulated mean would blur;
    // the relative floor catches variation that is pure rounding noise.
    if (lo[j] == hi[j] ||
        st.std_dev.data[j] <= 1e-12 * std::max(1.0, std::abs(st.mean.data[j]))) {
      st.constant[j] = true;
      st.mean.data[j] = lo[j] == hi[j] ? lo[j] : st.mean.data[j];
      st.std_dev.data[j] = 1.0;
    }
  }
  return st;
}

Tensor FeatureStandardizer::standardize(const Tensor& features) const {
  if (features.data.size() != kNumAcousticFeatures)
    throw Error("standardizer: expected 11 features");
  require_finite(features, "acoustic features");
  Tensor out = Tensor::vector(kNumAcousticFeatures);
  for (std::size_t j = 0; j < kNumAcousticFeatures; ++j)
    out.data[j] = (features.data[j] - mean.data[j]) / std_dev.data[j];
  return out;
}

Tensor FeatureStandardizer::unstandardize(const Tensor& z) const {
  if (z.data.size() != kNumAcousticFeatures) throw Error("standardizer: expected 11 features");
  Tensor out = Tensor::vector(kNumAcousticFeatures);
  for (std::size_t j = 0; j < kNumAcousticFeatures; ++j)
    out.data[j] = z.data[j] * std_dev.data[j] + mean.data[j];
  return out;
}

namespace {

Tensor xavier(std::size_t rows, std::size_t cols, SeededRng& rng) {
  Tensor t = Tensor::zeros({rows, cols});
  const double limit = std::sqrt(6.0 / static_cast<double>(rows + cols));
  for (double& v : t.data) v = rng.uniform(-limit, limit);
  return t;
}

Tensor direct_affine(const Tensor& w, const Tensor& x, const Tensor& b) {
  Tensor out = Tensor::vector(w.shape[0]);
  for (std::size_t i = 0; i < w.shape[0]; ++i) {
    double acc = b.data[i];
    const double* row = w.row_ptr(i);
    for (std::size_t j = 0; j < w.shape[1]; ++j) acc += row[j] * x.data[j];
    out.data[i] = acc;
  }
  return out;
}

void tanh_inplace(Tensor& t) {
  for (double& v : t.data) v = std::tanh(v);
}

}  // namespace

VaeParams VaeParams::init(const VaeConfig& config, SeededRng& rng) {
  if (config.latent_dim == 0 || config.hidden_dim == 0)
    throw Error("vae: dimensions must be positive");
  VaeParams p;
  p.config = config;
  const std::size_t h = config.hidden_dim, z = config.latent_dim;
  p.store.add("vae.enc1.w", xavier(h, kNumAcousticFeatures, rng));
  p.store.add("vae.enc1.b", Tensor::vector(h));
  p.store.add("vae.mu.w", xavier(z, h, rng));
  p.store.add("vae.mu.b", Tensor::vector(z));
  p.store.add("vae.lv.w", xavier(z, h, rng));
  p.store.add("vae.lv.b", Tensor::vector(z));
  p.store.add("vae.dec1.w", xavier(h, z, rng));
  p.store.add("vae.dec1.b", Tensor::vector(h));
  p.store.add("vae.dec2.w", xavier(kNumAcousticFeatures, h, rng));
  p.store.add("vae.dec2.b", Tensor::vector(kNumAcousticFeatures));
  return p;
}

VaeEncoding vae_encode(const Tensor& s, const VaeParams& params) {
  if (s.data.size() != kNumAcousticFeatures) throw Error("vae: expected 11 standardized features");
  require_finite(s, "vae encoder input");
  const ParamStore& store = params.store;
  Tensor h = direct_affine(store.param("vae.enc1.w"), s, store.param("vae.enc1.b"));
  tanh_inplace(h);
  VaeEncoding enc;
  enc.mu = direct_affine(store.param("vae.mu.w"), h, store.param("vae.mu.b"));
  enc.logvar = direct_affine(store.param("vae.lv.w"), h, store.param("vae.lv.b"));
  for (double& v : enc.logvar.data) v = std::clamp(v, kLogVarClampLo, kLogVarClampHi);
  return enc;
}

Tensor vae_decode(const Tensor& z, const VaeParams& params) {
  if (z.data.size() != params.config.latent_dim) throw Error("vae: latent size mismatch");
  require_finite(z, "vae decoder input");
  const ParamStore& store = params.store;
  Tensor h = direct_affine(store.param("vae.dec1.w"), z, store.param("vae.dec1.b"));
  tanh_inplace(h);
  return direct_affine(store.param("vae.dec2.w"), h, store.param("vae.dec2.b"));
}

VarId vae_loss_on_tape(Tape& tape, ParamStore& store, const VaeConfig& config, const Tensor& s,
                       const Tensor& noise) {
  require_finite(s, "vae encoder input");
  const VarId x = tape.input(s);
  const VarId h_enc = tape.tanh(tape.affine(param_ref(store, "vae.enc1.w"), x,
                                            param_ref(store, "vae.enc1.b")));
  const VarId mu = tape.affine(param_ref(store, "vae.mu.w"), h_enc, param_ref(store, "vae.mu.b"));
  const VarId lv = tape.clamp(
      tape.affine(param_ref(store, "vae.lv.w"), h_enc, param_ref(store, "vae.lv.b")),
      kLogVarClampLo, kLogVarClampHi);
  const VarId sigma = tape.exp(tape.scale(lv, 0.5));
  const VarId z = tape.add(mu, tape.hadamard(sigma, tape.input(noise)));
  const VarId h_dec = tape.tanh(tape.affine(param_ref(store, "vae.dec1.w"), z,
                                            param_ref(store, "vae.dec1.b")));
  const VarId y = tape.affine(param_ref(store, "vae.dec2.w"), h_dec,
                              param_ref(store, "vae.dec2.b"));
  const VarId recon = tape.mse_to_const(y, s);
  const VarId kl = tape.kl_to_standard_normal(mu, lv);
  return tape.add(recon, tape.scale(kl, config.kl_weight));
}

double vae_loss(const Tensor& s, VaeParams& params, SeededRng& rng) {
  Tensor noise = Tensor::vector(params.config.latent_dim);
  for (double& v : noise.data) v = rng.normal();
  Tape tape;
  const VarId loss = vae_loss_on_tape(tape, params.store, params.config, s, noise);
  return tape.value(loss).data[0];
}

VaeParams train_vae(const Tensor& standardized_rows, const VaeConfig& config, std::size_t epochs,
                    SeededRng& rng, std::vector<double>* epoch_losses) {
  if (standardized_rows.shape.size() != 2 ||
      standardized_rows.shape[1] != kNumAcousticFeatures)
    throw Error("vae: expected n x 11 training rows");
  const std::size_t n = standardized_rows.shape[0];
  if (n < 2) throw Error("vae: need at least two tracks with features");
  require_finite(standardized_rows, "vae training rows");

  VaeParams params = VaeParams::init(config, rng);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Tensor row = Tensor::vector(kNumAcousticFeatures);
  Tensor noise = Tensor::vector(config.latent_dim);
  for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
    // Fisher-Yates with the run's seeded stream
    for (std::size_t i = n - 1; i > 0; --i)
      std::swap(order[i], order[rng.uniform_int(i + 1)]);
    double loss_sum = 0.0;
    for (std::size_t begin = 0; begin < n; begin += config.batch) {
      const std::size_t end = std::min(begin + config.batch, n);
      Tape tape;
      std::vector<VarId> losses;
      for (std::size_t i = begin; i < end; ++i) {
        const double* src = standardized_rows.row_ptr(order[i]);
        std::copy(src, src + kNumAcousticFeatures, row.data.begin());
        for (double& v : noise.data) v = rng.normal();
        losses.push_back(vae_loss_on_tape(tape, params.store, config, row, noise));
      }
      const VarId batch_loss = tape.mean_scalars(losses);
      params.store.zero_grads();
      tape.backward(batch_loss);
      params.store.adam_step(config.lr, AdamConfig{});
      loss_sum += tape.value(batch_loss).data[0] * static_cast<double>(end - begin);
    }
    if (epoch_losses) epoch_losses->push_back(loss_sum / static_cast<double>(n));
  }
  return params;
}

EmbeddingMatrix export_acoustic_embeddings(const VaeParams& params,
                                           const FeatureStandardizer& standardizer,
                                           const AcousticTable& table) {
  EmbeddingMatrix emb{Tensor::zeros({table.present.size(), params.config.latent_dim}), "vae"};
  Tensor row = Tensor::vector(kNumAcousticFeatures);
  for (std::size_t t = 0; t < table.present.size(); ++t) {
    if (!table.present[t]) continue;
    const double* src = table.rows.row_ptr(t);
    std::copy(src, src + kNumAcousticFeatures, row.data.begin());
    const VaeEncoding enc = vae_encode(standardizer.standardize(row), params);
    std::copy(enc.mu.data.begin(), enc.mu.data.end(), emb.table.row_ptr(t));
  }
  require_finite(emb.table, "acoustic embeddings");
  return emb;
}

}  // namespace muserec
