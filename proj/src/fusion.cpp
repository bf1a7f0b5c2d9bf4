#include "muserec/fusion.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "muserec/numerics.hpp"

namespace muserec {

BaselineMode parse_baseline_mode(const std::string& name) {
  if (name == "none") return BaselineMode::none;
  if (name == "gru4rec") return BaselineMode::gru4rec;
  if (name == "ann") return BaselineMode::ann;
  throw Error("model: unknown baseline mode '" + name + "'");
}

std::size_t ModelConfig::active_modalities() const {
  if (baseline == BaselineMode::gru4rec) return 1;
  return 1 + (use_acoustic ? 1 : 0) + (use_lyrics ? 1 : 0) + (use_tags ? 1 : 0);
}

std::size_t ModelConfig::fc1_input_dim() const {
  return gru_hidden + embed_dim * (active_modalities() - 1);
}

void ModelConfig::validate() const {
  if (embed_dim == 0 || gru_hidden == 0 || fusion_hidden == 0)
    throw Error("model: dimensions must be positive");
  if (batch == 0) throw Error("model: batch size must be positive");
  if (dropout < 0.0) throw Error("model: negative dropout");
  if (baseline != BaselineMode::none && (use_acoustic || use_lyrics || use_tags))
    throw Error("model: baseline modes run on the track path only");
}

namespace {

Tensor xavier(std::size_t rows, std::size_t cols, SeededRng& rng) {
  Tensor t = Tensor::zeros({rows, cols});
  const double limit = std::sqrt(6.0 / static_cast<double>(rows + cols));
  for (double& v : t.data) v = rng.uniform(-limit, limit);
  return t;
}

void add_gru_cell(ParamStore& store, const std::string& prefix, std::size_t in,
                  std::size_t hidden, SeededRng& rng) {
  for (const char* gate : {"z", "r", "n"}) {
    store.add(prefix + ".w" + gate, xavier(hidden, in, rng));
    store.add(prefix + ".u" + gate, xavier(hidden, hidden, rng));
    store.add(prefix + ".b" + gate, Tensor::vector(hidden));
  }
}

const char* kModalityTables[3] = {"e2", "e3", "e4"};

}  // namespace

FusionModel init_fusion_model(const ModelConfig& config, std::size_t vocab_size,
                              const EmbeddingMatrix& track_init,
                              const EmbeddingMatrix* acoustic_init,
                              const EmbeddingMatrix* lyric_init,
                              const EmbeddingMatrix* tag_init, SeededRng& rng) {
  config.validate();
  if (vocab_size == 0) throw Error("model: empty vocabulary");
  FusionModel m;
  m.config = config;
  m.vocab_size = vocab_size;

  auto take_table = [&](const EmbeddingMatrix& init, const char* name) {
    if (init.rows() != vocab_size || init.dim() != config.embed_dim)
      throw Error(std::string("model: ") + name + " initializer shape mismatch");
    require_finite(init.table, name);
    m.store.add(name, init.table);
  };
  take_table(track_init, "e1");
  const EmbeddingMatrix* extras[3] = {acoustic_init, lyric_init, tag_init};
  const bool flags[3] = {config.use_acoustic, config.use_lyrics, config.use_tags};
  for (int i = 0; i < 3; ++i) {
    if (!flags[i]) continue;
    if (!extras[i]) throw Error(std::string("model: missing initializer for ") + kModalityTables[i]);
    take_table(*extras[i], kModalityTables[i]);
  }

  add_gru_cell(m.store, "gru.fwd", config.embed_dim, config.gru_hidden, rng);
  if (config.baseline != BaselineMode::gru4rec) {
    add_gru_cell(m.store, "gru.bwd", config.embed_dim, config.gru_hidden, rng);
    m.store.add("att.w", xavier(config.gru_hidden, config.gru_hidden, rng));
    m.store.add("att.b", Tensor::vector(config.gru_hidden));
    Tensor v = Tensor::vector(config.gru_hidden);
    const double limit = std::sqrt(6.0 / static_cast<double>(1 + config.gru_hidden));
    for (double& x : v.data) x = rng.uniform(-limit, limit);
    m.store.add("att.v", std::move(v));
    m.store.add("fc1.w", xavier(config.fusion_hidden, config.fc1_input_dim(), rng));
    m.store.add("fc1.b", Tensor::vector(config.fusion_hidden));
    m.store.add("fc2.w", xavier(vocab_size, config.fusion_hidden, rng));
  } else {
    m.store.add("fc2.w", xavier(vocab_size, config.gru_hidden, rng));
  }
  m.store.add("fc2.b", Tensor::vector(vocab_size));
  return m;
}

Tensor dropout_mask(std::size_t n, double p, SeededRng& rng) {
  Tensor mask = Tensor::vector(n);
  if (p >= 1.0) return mask;  // all zeros
  const double keep = 1.0 / (1.0 - p);
  for (double& v : mask.data) v = rng.uniform() < p ? 0.0 : keep;
  return mask;
}

namespace {

// One GRU direction over already-embedded inputs; zero initial state.
std::vector<VarId> run_gru(Tape& tape, ParamStore& store, const std::string& cell,
                           const std::vector<VarId>& inputs, std::size_t hidden) {
  const ParamRef wz = param_ref(store, cell + ".wz"), uz = param_ref(store, cell + ".uz"),
                 bz = param_ref(store, cell + ".bz");
  const ParamRef wr = param_ref(store, cell + ".wr"), ur = param_ref(store, cell + ".ur"),
                 br = param_ref(store, cell + ".br");
  const ParamRef wn = param_ref(store, cell + ".wn"), un = param_ref(store, cell + ".un"),
                 bn = param_ref(store, cell + ".bn");
  std::vector<VarId> states;
  states.reserve(inputs.size());
  VarId h = tape.zeros(hidden);
  for (VarId x : inputs) {
    const VarId z = tape.sigmoid(tape.affine2(wz, x, uz, h, bz));
    const VarId r = tape.sigmoid(tape.affine2(wr, x, ur, h, br));
    const VarId n = tape.tanh(tape.affine2(wn, x, un, tape.hadamard(r, h), bn));
    h = tape.add(tape.hadamard(tape.one_minus(z), n), tape.hadamard(z, h));
    states.push_back(h);
  }
  return states;
}

std::vector<VarId> lookup_sequence(Tape& tape, FusionModel& model, const char* table,
                                   const std::vector<TrackId>& prefix, bool training,
                                   SeededRng* rng) {
  const ParamRef ref = param_ref(model.store, table);
  const bool drop = training && model.config.dropout > 0.0;
  std::vector<VarId> out;
  out.reserve(prefix.size());
  for (TrackId t : prefix) {
    if (t < 0 || static_cast<std::size_t>(t) >= model.vocab_size)
      throw Error("model: track index out of range");
    VarId e = tape.row(ref, static_cast<std::size_t>(t));
    if (drop) {
      if (!rng) throw Error("model: dropout requires a random stream");
      e = tape.hadamard(e, tape.input(dropout_mask(model.config.embed_dim,
                                                   model.config.dropout, *rng)));
    }
    out.push_back(e);
  }
  return out;
}

}  // namespace

TapeForward forward_on_tape(Tape& tape, FusionModel& model, const std::vector<TrackId>& prefix,
                            bool training, SeededRng* rng, const TrackId* target) {
  if (prefix.empty()) throw Error("model: empty prefix");
  const ModelConfig& cfg = model.config;
  TapeForward fwd;

  const auto e1 = lookup_sequence(tape, model, "e1", prefix, training, rng);

  if (cfg.baseline == BaselineMode::gru4rec) {
    fwd.hidden = run_gru(tape, model.store, "gru.fwd", e1, cfg.gru_hidden);
    fwd.logits = tape.affine(param_ref(model.store, "fc2.w"), fwd.hidden.back(),
                             param_ref(model.store, "fc2.b"));
  } else {
    // modality lookups share the track prefix; draw order is fixed
    std::vector<std::vector<VarId>> extra_seqs;
    const bool flags[3] = {cfg.use_acoustic, cfg.use_lyrics, cfg.use_tags};
    for (int i = 0; i < 3; ++i)
      if (flags[i])
        extra_seqs.push_back(lookup_sequence(tape, model, kModalityTables[i], prefix, training, rng));

    const auto h_fwd = run_gru(tape, model.store, "gru.fwd", e1, cfg.gru_hidden);
    std::vector<VarId> reversed(e1.rbegin(), e1.rend());
    const auto h_bwd = run_gru(tape, model.store, "gru.bwd", reversed, cfg.gru_hidden);
    fwd.hidden.reserve(prefix.size());
    for (std::size_t i = 0; i < prefix.size(); ++i)
      fwd.hidden.push_back(tape.add(h_fwd[i], h_bwd[prefix.size() - 1 - i]));

    const ParamRef att_w = param_ref(model.store, "att.w"), att_b = param_ref(model.store, "att.b"),
                   att_v = param_ref(model.store, "att.v");
    std::vector<VarId> scores;
    scores.reserve(prefix.size());
    for (VarId h : fwd.hidden)
      scores.push_back(tape.dot_param(att_v, tape.tanh(tape.affine(att_w, h, att_b))));
    fwd.alpha = tape.softmax(tape.stack_scalars(scores));

    fwd.contexts.push_back(tape.weighted_sum(fwd.alpha, fwd.hidden));
    for (const auto& seq : extra_seqs)
      fwd.contexts.push_back(tape.weighted_sum(fwd.alpha, seq));

    const VarId cat = fwd.contexts.size() == 1 ? fwd.contexts[0] : tape.concat(fwd.contexts);
    const VarId fused = tape.leaky_relu(
        tape.affine(param_ref(model.store, "fc1.w"), cat, param_ref(model.store, "fc1.b")),
        cfg.leaky_slope);
    fwd.logits = tape.affine(param_ref(model.store, "fc2.w"), fused,
                             param_ref(model.store, "fc2.b"));
  }

  if (target) {
    if (*target < 0 || static_cast<std::size_t>(*target) >= model.vocab_size)
      throw Error("model: target index out of range");
    fwd.ce = tape.cross_entropy(fwd.logits, static_cast<std::size_t>(*target));
  }
  return fwd;
}

ForwardTrace model_forward(const FusionModel& model, const std::vector<TrackId>& prefix) {
  auto& mutable_model = const_cast<FusionModel&>(model);  // tape only reads values
  Tape tape;
  const TapeForward fwd =
      forward_on_tape(tape, mutable_model, prefix, /*training=*/false, nullptr, nullptr);
  ForwardTrace trace;
  for (VarId h : fwd.hidden) trace.hidden.push_back(tape.value(h));
  if (fwd.alpha >= 0) trace.alpha = tape.value(fwd.alpha);
  for (VarId c : fwd.contexts) trace.contexts.push_back(tape.value(c));
  trace.output = softmax(tape.value(fwd.logits));
  return trace;
}

std::vector<TrainingPair> make_training_pairs(const std::vector<const Session*>& sessions) {
  std::vector<TrainingPair> pairs;
  for (const Session* s : sessions)
    for (std::size_t t = 1; t < s->tracks.size(); ++t) pairs.push_back({s, t});
  return pairs;
}

double training_step(FusionModel& model, const std::vector<TrainingPair>& batch,
                     SeededRng& rng) {
  if (batch.empty()) throw Error("model: empty training batch");
  Tape tape;
  std::vector<VarId> losses;
  losses.reserve(batch.size());
  for (const TrainingPair& pair : batch) {
    const auto& tracks = pair.session->tracks;
    if (pair.prefix_len == 0 || pair.prefix_len >= tracks.size())
      throw Error("model: invalid prefix length");
    const std::vector<TrackId> prefix(tracks.begin(),
                                      tracks.begin() + static_cast<std::ptrdiff_t>(pair.prefix_len));
    const TrackId target = tracks[pair.prefix_len];
    const TapeForward fwd = forward_on_tape(tape, model, prefix, /*training=*/true, &rng, &target);
    losses.push_back(fwd.ce);
  }
  const VarId mean = tape.mean_scalars(losses);
  model.store.zero_grads();
  tape.backward(mean);
  model.store.adam_step(model.config.lr, AdamConfig{});
  return tape.value(mean).data[0];
}

std::vector<double> train_model(FusionModel& model, const std::vector<const Session*>& sessions,
                                SeededRng& rng) {
  auto pairs = make_training_pairs(sessions);
  if (pairs.empty()) throw Error("model: no training pairs");

  // bucket by prefix length so batches need no padding
  std::map<std::size_t, std::vector<TrainingPair>> buckets;
  for (const TrainingPair& p : pairs) buckets[p.prefix_len].push_back(p);

  std::vector<double> epoch_losses;
  for (std::size_t epoch = 0; epoch < model.config.epochs; ++epoch) {
    std::vector<std::vector<TrainingPair>> batches;
    for (auto& [len, bucket] : buckets) {
      for (std::size_t i = bucket.size() - 1; i > 0; --i)
        std::swap(bucket[i], bucket[rng.uniform_int(i + 1)]);
      for (std::size_t begin = 0; begin < bucket.size(); begin += model.config.batch) {
        const std::size_t end = std::min(begin + model.config.batch, bucket.size());
        batches.emplace_back(bucket.begin() + static_cast<std::ptrdiff_t>(begin),
                             bucket.begin() + static_cast<std::ptrdiff_t>(end));
      }
    }
    for (std::size_t i = batches.size() - 1; i > 0; --i)
      std::swap(batches[i], batches[rng.uniform_int(i + 1)]);

    double loss_sum = 0.0;
    std::size_t examples = 0;
    for (const auto& batch : batches) {
      loss_sum += training_step(model, batch, rng) * static_cast<double>(batch.size());
      examples += batch.size();
    }
    epoch_losses.push_back(loss_sum / static_cast<double>(examples));
  }
  return epoch_losses;
}

std::vector<TrackId> predict_topk(const FusionModel& model, const std::vector<TrackId>& prefix,
                                  std::size_t k) {
  if (k == 0 || k > model.vocab_size) throw Error("model: k out of range");
  const ForwardTrace trace = model_forward(model, prefix);
  std::vector<TrackId> order(model.vocab_size);
  std::iota(order.begin(), order.end(), 0);
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                    [&](TrackId a, TrackId b) {
                      const double pa = trace.output.data[static_cast<std::size_t>(a)];
                      const double pb = trace.output.data[static_cast<std::size_t>(b)];
                      if (pa != pb) return pa > pb;
                      return a < b;
                    });
  order.resize(k);
  return order;
}

std::vector<std::pair<std::string, std::vector<std::size_t>>> fusion_param_shapes(
    const ModelConfig& config, std::size_t vocab_size) {
  config.validate();
  if (vocab_size == 0) throw Error("model: empty vocabulary");
  std::vector<std::pair<std::string, std::vector<std::size_t>>> shapes;
  shapes.emplace_back("e1", std::vector<std::size_t>{vocab_size, config.embed_dim});
  const bool flags[3] = {config.use_acoustic, config.use_lyrics, config.use_tags};
  for (int i = 0; i < 3; ++i) {
    if (flags[i]) {
      shapes.emplace_back(kModalityTables[i],
                          std::vector<std::size_t>{vocab_size, config.embed_dim});
    }
  }
  const auto add_cell = [&](const std::string& prefix) {
    for (const char* gate : {"z", "r", "n"}) {
      shapes.emplace_back(prefix + ".w" + gate,
                          std::vector<std::size_t>{config.gru_hidden, config.embed_dim});
      shapes.emplace_back(prefix + ".u" + gate,
                          std::vector<std::size_t>{config.gru_hidden, config.gru_hidden});
      shapes.emplace_back(prefix + ".b" + gate, std::vector<std::size_t>{config.gru_hidden});
    }
  };
  add_cell("gru.fwd");
  if (config.baseline != BaselineMode::gru4rec) {
    add_cell("gru.bwd");
    shapes.emplace_back("att.w", std::vector<std::size_t>{config.gru_hidden, config.gru_hidden});
    shapes.emplace_back("att.b", std::vector<std::size_t>{config.gru_hidden});
    shapes.emplace_back("att.v", std::vector<std::size_t>{config.gru_hidden});
    shapes.emplace_back("fc1.w",
                        std::vector<std::size_t>{config.fusion_hidden, config.fc1_input_dim()});
    shapes.emplace_back("fc1.b", std::vector<std::size_t>{config.fusion_hidden});
    shapes.emplace_back("fc2.w", std::vector<std::size_t>{vocab_size, config.fusion_hidden});
  } else {
    shapes.emplace_back("fc2.w", std::vector<std::size_t>{vocab_size, config.gru_hidden});
  }
  shapes.emplace_back("fc2.b", std::vector<std::size_t>{vocab_size});
  return shapes;
}

}  // namespace muserec
