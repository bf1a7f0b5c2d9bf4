#include "muserec/pipeline.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string_view>

#include "muserec/rng.hpp"
#include "nlohmann/json.hpp"

namespace muserec {

namespace {

namespace fs = std::filesystem;

/// Prefixes escaping errors with the stage name (once).
template <typename Fn>
auto with_stage(const char* stage, Fn&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const Error& e) {
    const std::string prefix = std::string(stage) + ": ";
    if (std::string_view(e.what()).substr(0, prefix.size()) == prefix) throw;
    throw Error(prefix + e.what());
  }
}

std::string resolve(const std::string& explicit_path, const std::string& fallback) {
  return explicit_path.empty() ? fallback : explicit_path;
}

std::ofstream open_out(const std::string& path, const char* what) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(std::string(what) + ": cannot write " + path);
  return out;
}

std::uint64_t to_u64(const std::string& key, const std::string& value) {
  const char* begin = value.c_str();
  char* end = nullptr;
  errno = 0;
  const unsigned long long v = std::strtoull(begin, &end, 10);
  if (end == begin || *end != '\0' || errno != 0 || value[0] == '-')
    throw Error("config: " + key + ": '" + value + "' is not a non-negative integer");
  return static_cast<std::uint64_t>(v);
}

std::size_t to_size(const std::string& key, const std::string& value) {
  return static_cast<std::size_t>(to_u64(key, value));
}

double to_real(const std::string& key, const std::string& value) {
  const char* begin = value.c_str();
  char* end = nullptr;
  const double v = std::strtod(begin, &end);
  if (end == begin || *end != '\0' || !std::isfinite(v))
    throw Error("config: " + key + ": '" + value + "' is not a finite number");
  return v;
}

bool to_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1" || value == "yes" || value == "on") return true;
  if (value == "false" || value == "0" || value == "no" || value == "off") return false;
  throw Error("config: " + key + ": '" + value + "' is not a boolean");
}

std::string trim(std::string_view text) {
  std::size_t b = 0, e = text.size();
  while (b < e && std::isspace(static_cast<unsigned char>(text[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(text[e - 1]))) --e;
  return std::string(text.substr(b, e - b));
}

struct LoadedData {
  std::vector<ListeningEvent> events;
  Vocabulary vocab;
  std::vector<Session> sessions;
  DatasetSplit split;
  std::vector<std::string> warnings;
};

LoadedData load_sessions(const RunConfig& config) {
  const std::string path = config.events();
  if (!fs::exists(path)) {
    throw Error("events file not found: " + path +
                (config.events_path.empty() ? " (run synth first or pass an events path)" : ""));
  }
  LoadedData d;
  ParseDiagnostics diags;
  d.events = parse_events_file(path, config.strict_parse, &diags);
  d.warnings = std::move(diags.messages);
  d.vocab = Vocabulary::build(d.events);
  d.sessions = extract_sessions(d.events, d.vocab);
  if (d.sessions.empty()) throw Error("no usable sessions in " + path);
  d.split = split_train_test(d.sessions);
  return d;
}

/// First header token `dim=<d>` of a vector file.
std::size_t vector_file_dim(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path);
  std::string header;
  std::getline(in, header);
  std::istringstream fields(header);
  std::string token;
  while (fields >> token) {
    if (token.rfind("dim=", 0) == 0) return to_size("dim", token.substr(4));
  }
  throw Error(path + ": header is missing the dim field");
}

}  // namespace

std::string RunConfig::events() const { return resolve(events_path, data_dir() + "/events.tsv"); }
std::string RunConfig::acoustic() const {
  return resolve(acoustic_path, data_dir() + "/acoustic.csv");
}
std::string RunConfig::lyrics() const { return resolve(lyrics_path, data_dir() + "/lyrics.vec"); }
std::string RunConfig::tags() const { return resolve(tags_path, data_dir() + "/tags.vec"); }
std::string RunConfig::metadata() const {
  return resolve(metadata_path, data_dir() + "/users.csv");
}

const std::vector<std::string>& variant_names() {
  static const std::vector<std::string> names = {
      "gru4rec",      "ann",         "ann-lsa",              "annw",
      "annw+acoustic", "annw+lyrics", "annw+acoustic+lyrics", "annw+acoustic+lyrics+tags"};
  return names;
}

VariantSpec parse_variant(const std::string& name) {
  VariantSpec v;
  v.name = name;
  if (name == "gru4rec") {
    v.baseline = BaselineMode::gru4rec;
    v.track_provenance = "random";
    return v;
  }
  if (name == "ann") {
    v.track_provenance = "random";
    return v;
  }
  if (name == "ann-lsa") {
    v.track_provenance = "lsa";
    return v;
  }
  v.track_provenance = "cbow";
  if (name == "annw+acoustic") {
    v.acoustic = true;
  } else if (name == "annw+lyrics") {
    v.lyrics = true;
  } else if (name == "annw+acoustic+lyrics") {
    v.acoustic = v.lyrics = true;
  } else if (name == "annw+acoustic+lyrics+tags") {
    v.acoustic = v.lyrics = v.tags = true;
  } else if (name != "annw") {
    std::string known;
    for (const auto& n : variant_names()) {
      if (!known.empty()) known += ", ";
      known += n;
    }
    throw Error("unknown variant '" + name + "' (known: " + known + ")");
  }
  if (v.acoustic || v.lyrics || v.tags) v.baseline = BaselineMode::none;
  return v;
}

std::vector<std::size_t> parse_ks(const std::string& text) {
  std::vector<std::size_t> ks;
  std::istringstream in(text);
  std::string part;
  while (std::getline(in, part, ',')) {
    const std::string p = trim(part);
    if (p.empty()) throw Error("config: ks: empty cutoff in '" + text + "'");
    ks.push_back(to_size("ks", p));
  }
  if (ks.empty()) throw Error("config: ks: no cutoffs in '" + text + "'");
  return ks;
}

void apply_config_entry(RunConfig& c, const std::string& key, const std::string& value) {
  if (key == "work-dir") c.work_dir = value;
  else if (key == "events") c.events_path = value;
  else if (key == "acoustic") c.acoustic_path = value;
  else if (key == "lyrics") c.lyrics_path = value;
  else if (key == "tags") c.tags_path = value;
  else if (key == "metadata") c.metadata_path = value;
  else if (key == "variant") c.variant = value;
  else if (key == "seed") c.seed = to_u64(key, value);
  else if (key == "ks") c.ks = parse_ks(value);
  else if (key == "macro") c.macro_average = to_bool(key, value);
  else if (key == "cohorts") c.cohorts = to_bool(key, value);
  else if (key == "cohort-top-n") c.cohort_top_n = to_size(key, value);
  else if (key == "strict") c.strict_parse = to_bool(key, value);
  else if (key == "embed-dim") c.model.embed_dim = to_size(key, value);
  else if (key == "gru-hidden") c.model.gru_hidden = to_size(key, value);
  else if (key == "fusion-hidden") c.model.fusion_hidden = to_size(key, value);
  else if (key == "dropout") c.model.dropout = to_real(key, value);
  else if (key == "lr") c.model.lr = to_real(key, value);
  else if (key == "batch") c.model.batch = to_size(key, value);
  else if (key == "epochs") c.model.epochs = to_size(key, value);
  else if (key == "leaky-slope") c.model.leaky_slope = to_real(key, value);
  else if (key == "cbow-window") c.cbow.window = to_size(key, value);
  else if (key == "cbow-negative") c.cbow.negative = to_size(key, value);
  else if (key == "cbow-epochs") c.cbow.epochs = to_size(key, value);
  else if (key == "cbow-lr") c.cbow.initial_lr = to_real(key, value);
  else if (key == "cbow-min-count") c.cbow.min_count = to_size(key, value);
  else if (key == "vae-hidden") c.vae.hidden_dim = to_size(key, value);
  else if (key == "vae-kl-weight") c.vae.kl_weight = to_real(key, value);
  else if (key == "vae-lr") c.vae.lr = to_real(key, value);
  else if (key == "vae-batch") c.vae.batch = to_size(key, value);
  else if (key == "vae-epochs") c.vae_epochs = to_size(key, value);
  else if (key == "synth-users") c.synth.users = to_size(key, value);
  else if (key == "synth-clusters") c.synth.clusters = to_size(key, value);
  else if (key == "synth-tracks-per-cluster") c.synth.tracks_per_cluster = to_size(key, value);
  else if (key == "synth-beta") c.synth.beta_m = to_real(key, value);
  else if (key == "synth-sessions-per-user") c.synth.sessions_per_user = to_size(key, value);
  else if (key == "synth-len-min") c.synth.session_len_min = to_size(key, value);
  else if (key == "synth-len-max") c.synth.session_len_max = to_size(key, value);
  else if (key == "synth-at-risk-fraction") c.synth.at_risk_fraction = to_real(key, value);
  else if (key == "synth-repeat-boost") c.synth.repeat_boost = to_real(key, value);
  else if (key == "synth-base-repeat") c.synth.base_repeat = to_real(key, value);
  else if (key == "synth-lyric-coverage") c.synth.lyric_coverage = to_real(key, value);
  else if (key == "synth-tag-coverage") c.synth.tag_coverage = to_real(key, value);
  else if (key == "synth-lyric-dim") c.synth.lyric_dim = to_size(key, value);
  else if (key == "synth-tag-dim") c.synth.tag_dim = to_size(key, value);
  else throw Error("config: unknown key '" + key + "'");
}

void apply_config_file(RunConfig& config, const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("config: cannot open " + path);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string text = trim(line);
    if (text.empty() || text[0] == '#') continue;
    const auto eq = text.find('=');
    if (eq == std::string::npos) {
      throw Error("config: " + path + ": line " + std::to_string(line_no) +
                  ": expected key = value");
    }
    const std::string key = trim(text.substr(0, eq));
    const std::string value = trim(text.substr(eq + 1));
    if (key.empty()) {
      throw Error("config: " + path + ": line " + std::to_string(line_no) + ": empty key");
    }
    try {
      apply_config_entry(config, key, value);
    } catch (const Error& e) {
      throw Error("config: " + path + ": line " + std::to_string(line_no) + ": " + e.what());
    }
  }
}

SynthResult run_synth(const RunConfig& config) {
  return with_stage("synth", [&] {
    SyntheticConfig synth = config.synth;
    synth.seed = derive_seed(config.seed, "synth");
    fs::create_directories(config.data_dir());
    SynthResult result;
    result.dataset = generate_synthetic_dataset(synth, config.data_dir());
    const auto events = parse_events_file(result.dataset.events_path, true);
    const auto vocab = Vocabulary::build(events);
    result.stats = compute_stats(extract_sessions(events, vocab));
    result.stats_table = render_stats_table(result.stats);
    return result;
  });
}

PreparedArtifacts run_prepare(const RunConfig& config) {
  return with_stage("prepare", [&] {
    const VariantSpec spec = parse_variant(config.variant);
    auto data = load_sessions(config);
    PreparedArtifacts out;
    out.warnings = data.warnings;
    out.vocab_hash = data.vocab.hash_hex();
    out.stats = compute_stats(data.sessions);
    fs::create_directories(config.prepared_dir());

    const auto train_sessions = data.split.all_train();
    const auto seen = tracks_seen_in_training(data.split, data.vocab.size());
    const std::size_t dim = config.model.embed_dim;

    // Reuses an artifact only when it reloads cleanly under the current
    // vocabulary hash; anything stale or corrupt is rebuilt in place.
    auto cache_or_build = [&](const std::string& name, const std::string& path, auto build) {
      if (fs::exists(path)) {
        try {
          const auto cached = load_embeddings(path, out.vocab_hash);
          if (cached.dim() == dim) {
            out.artifacts.emplace_back(name, "cached " + path);
            return;
          }
        } catch (const Error&) {
        }
      }
      save_embeddings(build(), out.vocab_hash, path);
      out.artifacts.emplace_back(name, "built " + path);
    };

    // Both track tables are kept warm so later trains can switch variants
    // without another prepare.
    cache_or_build("e1-cbow", config.prepared_dir() + "/e1_cbow.emb", [&] {
      CbowConfig cbow = config.cbow;
      cbow.dim = dim;
      SeededRng rng(derive_seed(config.seed, "cbow"));
      auto emb = train_cbow(train_sessions, data.vocab.size(), cbow, rng);
      SeededRng unseen(derive_seed(config.seed, "cbow-unseen"));
      init_unseen_tracks(emb, seen, unseen);
      return emb;
    });
    cache_or_build("e1-lsa", config.prepared_dir() + "/e1_lsa.emb", [&] {
      const auto matrix = SessionTrackMatrix::build(train_sessions, data.vocab.size());
      auto emb = train_lsa_embeddings(matrix, dim);
      SeededRng unseen(derive_seed(config.seed, "lsa-unseen"));
      init_unseen_tracks(emb, seen, unseen);
      return emb;
    });

    // A modality is prepared when the variant demands it or its file simply
    // exists; a demanded-but-missing file is a hard error naming the path.
    auto modality_gate = [&](bool required, const std::string& path, bool explicit_path,
                             const char* what) {
      if (fs::exists(path)) return true;
      if (required || explicit_path) {
        throw Error(std::string(what) + " file not found: " + path);
      }
      return false;
    };

    if (modality_gate(spec.acoustic, config.acoustic(), !config.acoustic_path.empty(),
                      "acoustic features")) {
      cache_or_build("e2-acoustic", config.prepared_dir() + "/e2_acoustic.emb", [&] {
        ParseDiagnostics adiags;
        const auto table = load_acoustic_features(config.acoustic(), data.vocab, false, &adiags);
        for (const auto& m : adiags.messages) out.warnings.push_back(m);
        if (table.covered() < 2) {
          throw Error("acoustic features cover fewer than two tracks in " + config.acoustic());
        }
        const auto standardizer = FeatureStandardizer::fit(table.rows, table.present);
        Tensor rows = Tensor::zeros({table.covered(), kNumAcousticFeatures});
        Tensor row = Tensor::vector(kNumAcousticFeatures);
        std::size_t r = 0;
        for (std::size_t t = 0; t < table.present.size(); ++t) {
          if (!table.present[t]) continue;
          std::copy(table.rows.row_ptr(t), table.rows.row_ptr(t) + kNumAcousticFeatures,
                    row.data.begin());
          const Tensor z = standardizer.standardize(row);
          std::copy(z.data.begin(), z.data.end(), rows.row_ptr(r++));
        }
        VaeConfig vae = config.vae;
        vae.latent_dim = dim;
        SeededRng rng(derive_seed(config.seed, "vae"));
        const auto params = train_vae(rows, vae, config.vae_epochs, rng);
        return export_acoustic_embeddings(params, standardizer, table);
      });
    } else {
      out.artifacts.emplace_back("e2-acoustic", "skipped (no file at " + config.acoustic() + ")");
    }

    if (modality_gate(spec.lyrics, config.lyrics(), !config.lyrics_path.empty(),
                      "lyric vectors")) {
      cache_or_build("e3-lyrics", config.prepared_dir() + "/e3_lyrics.emb", [&] {
        VectorLoadStats stats;
        auto emb = load_lyric_embeddings(config.lyrics(), data.vocab, dim, &stats);
        for (const auto& m : stats.warnings) out.warnings.push_back(m);
        return emb;
      });
    } else {
      out.artifacts.emplace_back("e3-lyrics", "skipped (no file at " + config.lyrics() + ")");
    }

    if (modality_gate(spec.tags, config.tags(), !config.tags_path.empty(), "tag vectors")) {
      cache_or_build("e4-tags", config.prepared_dir() + "/e4_tags.emb", [&] {
        const std::size_t in_dim = vector_file_dim(config.tags());
        const Tensor projection = make_tag_projection(in_dim, dim, config.seed);
        VectorLoadStats stats;
        auto emb = load_tag_embeddings(config.tags(), data.vocab, projection, &stats);
        for (const auto& m : stats.warnings) out.warnings.push_back(m);
        return emb;
      });
    } else {
      out.artifacts.emplace_back("e4-tags", "skipped (no file at " + config.tags() + ")");
    }

    nlohmann::ordered_json manifest;
    manifest["vocab_hash"] = out.vocab_hash;
    manifest["vocab_size"] = data.vocab.size();
    manifest["seed"] = config.seed;
    manifest["users"] = out.stats.users;
    manifest["sessions"] = out.stats.sessions;
    manifest["events"] = out.stats.events;
    manifest["unique_tracks"] = out.stats.unique_tracks;
    manifest["mean_session_length"] = out.stats.mean_session_length;
    auto artifacts = nlohmann::ordered_json::object();
    for (const auto& [name, status] : out.artifacts) {
      if (status.rfind("skipped", 0) == 0) continue;
      artifacts[name] = status.substr(status.find(' ') + 1);
    }
    manifest["artifacts"] = std::move(artifacts);
    out.manifest_path = config.prepared_dir() + "/manifest.json";
    open_out(out.manifest_path, "prepare") << manifest.dump(2) << '\n';
    return out;
  });
}

TrainResult run_train(const RunConfig& config) {
  return with_stage("train", [&] {
    const VariantSpec spec = parse_variant(config.variant);
    auto data = load_sessions(config);
    const std::string hash = data.vocab.hash_hex();

    ModelConfig mc = config.model;
    mc.baseline = spec.baseline;
    mc.use_acoustic = spec.acoustic;
    mc.use_lyrics = spec.lyrics;
    mc.use_tags = spec.tags;

    auto load_table = [&](const char* what, const std::string& path) {
      if (!fs::exists(path)) {
        throw Error("variant '" + spec.name + "' needs " + what + " embeddings; " + path +
                    " is missing (run prepare first)");
      }
      auto emb = load_embeddings(path, hash);
      if (emb.dim() != mc.embed_dim) {
        throw Error(path + " holds " + std::to_string(emb.dim()) +
                    "-dimensional vectors but the model wants " + std::to_string(mc.embed_dim) +
                    "; re-run prepare");
      }
      return emb;
    };

    EmbeddingMatrix e1;
    if (spec.track_provenance == "cbow") {
      e1 = load_table("track", config.prepared_dir() + "/e1_cbow.emb");
    } else if (spec.track_provenance == "lsa") {
      e1 = load_table("track", config.prepared_dir() + "/e1_lsa.emb");
    } else {
      SeededRng rng(derive_seed(config.seed, "e1-random"));
      e1 = random_embeddings(data.vocab.size(), mc.embed_dim, rng);
    }
    EmbeddingMatrix e2, e3, e4;
    if (spec.acoustic) e2 = load_table("acoustic", config.prepared_dir() + "/e2_acoustic.emb");
    if (spec.lyrics) e3 = load_table("lyric", config.prepared_dir() + "/e3_lyrics.emb");
    if (spec.tags) e4 = load_table("tag", config.prepared_dir() + "/e4_tags.emb");

    SeededRng rng(derive_seed(config.seed, "train-" + spec.name));
    auto model = init_fusion_model(mc, data.vocab.size(), e1, spec.acoustic ? &e2 : nullptr,
                                   spec.lyrics ? &e3 : nullptr, spec.tags ? &e4 : nullptr, rng);
    TrainResult result;
    result.label = spec.name;
    result.epoch_losses = train_model(model, data.split.all_train(), rng);

    fs::create_directories(config.checkpoints_dir());
    result.checkpoint_path = config.checkpoint_path(spec.name);
    CheckpointMeta meta;
    meta.label = spec.name;
    meta.track_provenance = e1.provenance;
    meta.vocab_hash = hash;
    save_checkpoint(model, meta, result.checkpoint_path);

    result.loss_curve_path = config.checkpoints_dir() + "/" + spec.name + ".loss.jsonl";
    auto out = open_out(result.loss_curve_path, "train");
    for (std::size_t i = 0; i < result.epoch_losses.size(); ++i) {
      nlohmann::ordered_json rec;
      rec["epoch"] = i + 1;
      rec["loss"] = result.epoch_losses[i];
      out << rec.dump() << '\n';
    }
    return result;
  });
}

EvalResult run_eval(const RunConfig& config, const std::vector<std::string>& checkpoint_paths) {
  return with_stage("eval", [&] {
    auto data = load_sessions(config);
    const std::string hash = data.vocab.hash_hex();

    std::vector<std::string> paths = checkpoint_paths;
    if (paths.empty() && fs::is_directory(config.checkpoints_dir())) {
      for (const auto& entry : fs::directory_iterator(config.checkpoints_dir())) {
        if (entry.path().extension() == ".ckpt") paths.push_back(entry.path().string());
      }
      std::sort(paths.begin(), paths.end());
    }
    if (paths.empty()) {
      throw Error("no checkpoints under " + config.checkpoints_dir() + "; train a variant first");
    }

    UserMetadata metadata;
    std::vector<Cohort> cohorts;
    if (config.cohorts) {
      const std::string mpath = config.metadata();
      if (!fs::exists(mpath)) throw Error("user metadata file not found: " + mpath);
      metadata = load_user_metadata(mpath);
      const auto top = config.cohort_top_n > 0 ? std::optional<std::size_t>(config.cohort_top_n)
                                               : std::nullopt;
      cohorts.push_back({"At-risk", 29, 50, top});
      cohorts.push_back({"No-risk", 10, 19, top});
    }

    EvalResult result;
    for (const auto& path : paths) {
      CheckpointMeta meta;
      const FusionModel model = load_checkpoint(path, hash, &meta);
      const auto scorer = model_scorer(model);
      result.reports.push_back(evaluate_hit_ratio(scorer, data.split, config.ks,
                                                  config.macro_average, nullptr, meta.label));
      if (config.cohorts) {
        auto rows = cohort_evaluate(scorer, cohorts, metadata, data.split, config.ks,
                                    config.macro_average);
        for (auto& r : rows) {
          r.label = meta.label;
          result.reports.push_back(std::move(r));
        }
      }
    }
    result.table = render_report_table(result.reports);
    fs::create_directories(config.reports_dir());
    result.table_path = config.reports_dir() + "/eval.txt";
    result.jsonl_path = config.reports_dir() + "/eval.jsonl";
    open_out(result.table_path, "eval") << result.table;
    open_out(result.jsonl_path, "eval") << render_report_jsonl(result.reports);
    return result;
  });
}

std::string run_report(const RunConfig& config, const std::string& jsonl_path) {
  return with_stage("report", [&] {
    const std::string path =
        jsonl_path.empty() ? config.reports_dir() + "/eval.jsonl" : jsonl_path;
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open report records at " + path);
    const auto reports = parse_report_jsonl(in);
    if (reports.empty()) throw Error("no records in " + path);
    return render_report_table(reports);
  });
}

}  // namespace muserec
