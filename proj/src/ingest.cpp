#include "muserec/ingest.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "muserec/numerics.hpp"
#include "muserec/rng.hpp"

namespace muserec {

namespace {

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

double parse_double(const std::string& s, const std::string& where) {
  const char* begin = s.c_str();
  char* end = nullptr;
  const double v = std::strtod(begin, &end);
  if (end == begin || *end != '\0') throw Error(where + ": not a number: '" + s + "'");
  if (!std::isfinite(v)) throw Error(where + ": non-finite value: '" + s + "'");
  return v;
}

long parse_long(const std::string& s, const std::string& where) {
  const char* begin = s.c_str();
  char* end = nullptr;
  const long v = std::strtol(begin, &end, 10);
  if (end == begin || *end != '\0') throw Error(where + ": not an integer: '" + s + "'");
  return v;
}

std::vector<std::string> split_on(const std::string& line, char sep) {
  std::vector<std::string> fields;
  std::string cur;
  for (char c : line) {
    if (c == sep) {
      fields.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  fields.push_back(cur);
  return fields;
}

struct VectorFile {
  std::size_t dim = 0;
  std::string kind;
  std::vector<std::pair<std::string, std::vector<double>>> rows;  // file order
};

VectorFile parse_vector_file(const std::string& path, const std::string& label) {
  std::ifstream in(path);
  if (!in) throw Error(label + ": cannot open " + path);
  VectorFile file;
  std::string line;
  std::size_t line_no = 0;
  std::set<std::string> seen;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const std::string where = label + ": line " + std::to_string(line_no);
    if (line_no == 1) {
      std::istringstream hs(line);
      std::string token;
      while (hs >> token) {
        const std::size_t eq = token.find('=');
        if (eq == std::string::npos) throw Error(where + ": bad header token '" + token + "'");
        const std::string key = token.substr(0, eq), value = token.substr(eq + 1);
        if (key == "dim") {
          const long d = parse_long(value, where);
          if (d <= 0) throw Error(where + ": dim must be positive");
          file.dim = static_cast<std::size_t>(d);
        } else if (key == "kind") {
          file.kind = value;
        } else {
          throw Error(where + ": unknown header field '" + key + "'");
        }
      }
      if (file.dim == 0 || file.kind.empty()) {
        throw Error(where + ": header must declare dim and kind");
      }
      continue;
    }
    const std::size_t tab = line.find('\t');
    if (tab == std::string::npos) throw Error(where + ": expected track_key<TAB>values");
    const std::string key = line.substr(0, tab);
    if (key.empty()) throw Error(where + ": empty track key");
    if (!seen.insert(key).second) throw Error(where + ": duplicate track key '" + key + "'");
    std::vector<double> values;
    values.reserve(file.dim);
    std::istringstream vs(line.substr(tab + 1));
    std::string token;
    while (vs >> token) values.push_back(parse_double(token, where));
    if (values.size() != file.dim) {
      throw Error(where + ": expected " + std::to_string(file.dim) + " values, got " +
                  std::to_string(values.size()));
    }
    file.rows.emplace_back(key, std::move(values));
  }
  if (file.dim == 0) throw Error(label + ": " + path + " is empty (missing header)");
  return file;
}

void note_coverage(const std::string& label, const Vocabulary& vocab, VectorLoadStats* stats,
                   std::size_t covered, std::size_t skipped) {
  if (stats == nullptr) return;
  stats->covered = covered;
  stats->skipped_unknown = skipped;
  stats->coverage =
      vocab.size() == 0 ? 0.0 : static_cast<double>(covered) / static_cast<double>(vocab.size());
  if (skipped > 0) {
    stats->warnings.push_back(label + ": skipped " + std::to_string(skipped) +
                              " rows with unknown track keys");
  }
  if (covered == 0) stats->warnings.push_back(label + ": no vocabulary tracks covered");
}

}  // namespace

EmbeddingMatrix load_lyric_embeddings(const std::string& path, const Vocabulary& vocab,
                                      std::size_t target_dim, VectorLoadStats* stats) {
  if (vocab.size() == 0) throw Error("lyrics: empty vocabulary");
  if (target_dim == 0) throw Error("lyrics: target dimension must be positive");
  const VectorFile file = parse_vector_file(path, "lyrics");
  if (file.kind != "lyrics") throw Error("lyrics: " + path + " has kind=" + file.kind);
  if (file.dim < target_dim) {
    throw Error("lyrics: file dimension " + std::to_string(file.dim) +
                " is below the target " + std::to_string(target_dim));
  }

  std::vector<std::pair<std::size_t, const std::vector<double>*>> covered;  // vocab idx, row
  std::size_t skipped = 0;
  for (const auto& [key, values] : file.rows) {
    const TrackId idx = vocab.index_of(key);
    if (idx < 0) {
      ++skipped;
      continue;
    }
    covered.emplace_back(static_cast<std::size_t>(idx), &values);
  }

  EmbeddingMatrix emb;
  emb.provenance = "lyrics";
  emb.table = Tensor::zeros({vocab.size(), target_dim});
  if (file.dim == target_dim) {
    for (const auto& [idx, values] : covered) {
      for (std::size_t j = 0; j < target_dim; ++j) emb.table.at(idx, j) = (*values)[j];
    }
  } else if (covered.size() < 2) {
    if (stats != nullptr && !covered.empty()) {
      stats->warnings.push_back("lyrics: too few covered rows to fit a projection; emitting zeros");
    }
  } else {
    // Basis fit only on tracks that have lyrics; zero rows for the rest are
    // substituted verbatim, not projected.
    Tensor raw = Tensor::matrix(covered.size(), file.dim);
    for (std::size_t r = 0; r < covered.size(); ++r) {
      for (std::size_t j = 0; j < file.dim; ++j) raw.at(r, j) = (*covered[r].second)[j];
    }
    const PcaResult pca = pca_reduce(raw, target_dim);
    for (std::size_t r = 0; r < covered.size(); ++r) {
      for (std::size_t j = 0; j < target_dim; ++j) {
        emb.table.at(covered[r].first, j) = pca.projected.at(r, j);
      }
    }
  }
  note_coverage("lyrics", vocab, stats, covered.size(), skipped);
  return emb;
}

Tensor make_tag_projection(std::size_t in_dim, std::size_t out_dim, std::uint64_t seed) {
  if (in_dim == 0 || out_dim == 0) throw Error("tag projection: dimensions must be positive");
  if (out_dim > in_dim) throw Error("tag projection: out_dim exceeds in_dim");
  SeededRng rng(derive_seed(seed, "tag-projection"));
  Tensor p = Tensor::matrix(in_dim, out_dim);
  for (std::size_t k = 0; k < out_dim; ++k) {
    std::vector<double> v(in_dim);
    for (double& x : v) x = rng.normal();
    for (std::size_t prev = 0; prev < k; ++prev) {
      double dot = 0.0;
      for (std::size_t i = 0; i < in_dim; ++i) dot += v[i] * p.at(i, prev);
      for (std::size_t i = 0; i < in_dim; ++i) v[i] -= dot * p.at(i, prev);
    }
    double norm = 0.0;
    for (double x : v) norm += x * x;
    norm = std::sqrt(norm);
    if (norm < 1e-8) throw Error("tag projection: degenerate basis draw");
    for (std::size_t i = 0; i < in_dim; ++i) p.at(i, k) = v[i] / norm;
  }
  return p;
}

EmbeddingMatrix load_tag_embeddings(const std::string& path, const Vocabulary& vocab,
                                    const Tensor& projection, VectorLoadStats* stats) {
  if (vocab.size() == 0) throw Error("tags: empty vocabulary");
  if (projection.rank() != 2) throw Error("tags: projection must be a matrix");
  const VectorFile file = parse_vector_file(path, "tags");
  if (file.kind != "tags") throw Error("tags: " + path + " has kind=" + file.kind);
  if (file.dim != projection.rows()) {
    throw Error("tags: file dimension " + std::to_string(file.dim) +
                " does not match the projection input " + std::to_string(projection.rows()));
  }

  const std::size_t out_dim = projection.cols();
  EmbeddingMatrix emb;
  emb.provenance = "tags";
  emb.table = Tensor::zeros({vocab.size(), out_dim});
  std::size_t covered = 0, skipped = 0;
  for (const auto& [key, values] : file.rows) {
    const TrackId idx = vocab.index_of(key);
    if (idx < 0) {
      ++skipped;
      continue;
    }
    ++covered;
    for (std::size_t j = 0; j < out_dim; ++j) {
      double acc = 0.0;
      for (std::size_t i = 0; i < file.dim; ++i) acc += values[i] * projection.at(i, j);
      emb.table.at(static_cast<std::size_t>(idx), j) = acc;
    }
  }
  note_coverage("tags", vocab, stats, covered, skipped);
  return emb;
}

AcousticTable load_acoustic_features(const std::string& path, const Vocabulary& vocab,
                                     bool strict, ParseDiagnostics* diags) {
  std::ifstream in(path);
  if (!in) throw Error("acoustic: cannot open " + path);
  std::string expected_header = "track_key";
  for (std::size_t i = 0; i < kNumAcousticFeatures; ++i) {
    expected_header += ',';
    expected_header += kAcousticFeatureNames[i];
  }

  AcousticTable table(vocab.size());
  std::string line;
  std::size_t line_no = 0;
  auto record_error = [&](const std::string& msg) {
    const std::string full = "acoustic: line " + std::to_string(line_no) + ": " + msg;
    if (strict) throw Error(full);
    if (diags != nullptr) {
      ++diags->skipped_records;
      diags->messages.push_back(full);
    }
  };
  auto record_skip = [&](const std::string& msg) {
    if (diags != nullptr) {
      ++diags->skipped_records;
      diags->messages.push_back("acoustic: line " + std::to_string(line_no) + ": " + msg);
    }
  };

  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line_no == 1) {
      if (line != expected_header) {
        throw Error("acoustic: line 1: header must be '" + expected_header + "'");
      }
      continue;
    }
    const auto fields = split_on(line, ',');
    if (fields.size() != kNumAcousticFeatures + 1) {
      record_error("expected " + std::to_string(kNumAcousticFeatures + 1) + " fields, got " +
                   std::to_string(fields.size()));
      continue;
    }
    const std::string key = canonicalize(fields[0]);
    const TrackId idx = vocab.index_of(key);
    if (idx < 0) {
      record_skip("unknown track key '" + fields[0] + "' (skipped)");
      continue;
    }
    AcousticFeatureVector f;
    bool ok = true;
    for (std::size_t i = 0; i < kNumAcousticFeatures; ++i) {
      try {
        f[i] = parse_double(fields[i + 1], std::string(kAcousticFeatureNames[i]));
      } catch (const Error& e) {
        record_error(e.what());
        ok = false;
        break;
      }
    }
    if (!ok) continue;
    try {
      validate_acoustic_features(f);
    } catch (const Error& e) {
      record_error(e.what());
      continue;
    }
    if (table.present[static_cast<std::size_t>(idx)]) {
      record_error("duplicate features for track '" + fields[0] + "'");
      continue;
    }
    table.set(static_cast<std::size_t>(idx), f);
  }
  if (line_no == 0) throw Error("acoustic: " + path + " is empty (missing header)");
  return table;
}

UserMetadata load_user_metadata(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("metadata: cannot open " + path);
  UserMetadata meta;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line_no == 1 && line == "user_id,k10_score") continue;
    const std::string where = "metadata: line " + std::to_string(line_no);
    const auto fields = split_on(line, ',');
    if (fields.size() != 2) throw Error(where + ": expected user_id,k10_score");
    const std::string user = canonicalize(fields[0]);
    if (user.empty()) throw Error(where + ": empty user id");
    const long score = parse_long(fields[1], where);
    if (score < 10 || score > 50) {
      throw Error(where + ": k10 score " + std::to_string(score) + " outside [10, 50]");
    }
    if (!meta.emplace(user, static_cast<int>(score)).second) {
      throw Error(where + ": duplicate user '" + user + "'");
    }
  }
  return meta;
}

void SyntheticConfig::validate() const {
  if (clusters == 0) throw Error("synth: cluster count must be positive");
  if (tracks_per_cluster == 0) throw Error("synth: tracks per cluster must be positive");
  if (users == 0) throw Error("synth: user count must be positive");
  if (sessions_per_user == 0) throw Error("synth: sessions per user must be positive");
  if (session_len_min < 2) throw Error("synth: sessions need at least two tracks");
  if (session_len_max < session_len_min) throw Error("synth: session length range is inverted");
  if (beta_m < 0.0 || beta_m > 1.0) throw Error("synth: beta_m outside [0, 1]");
  for (double p : {at_risk_fraction, lyric_coverage, tag_coverage}) {
    if (p < 0.0 || p > 1.0) throw Error("synth: fractions must sit in [0, 1]");
  }
  for (double p : {repeat_boost, base_repeat}) {
    if (p < 0.0 || p >= 1.0) throw Error("synth: repeat probabilities must sit in [0, 1)");
  }
  if (lyric_dim == 0 || tag_dim == 0) throw Error("synth: vector dimensions must be positive");
}

namespace {

std::string synthetic_track_id(std::size_t cluster, std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "c%02zu_t%04zu", cluster, index);
  return buf;
}

std::string synthetic_user_id(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "u%04zu", index);
  return buf;
}

// Zipf-ish within-cluster popularity: weight 1/(1+i).
struct ClusterSampler {
  std::vector<double> cumulative;
  double total = 0.0;

  explicit ClusterSampler(std::size_t n) {
    cumulative.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
      total += 1.0 / static_cast<double>(1 + i);
      cumulative.push_back(total);
    }
  }

  std::size_t draw(SeededRng& rng) const {
    const double r = rng.uniform() * total;
    const auto it = std::lower_bound(cumulative.begin(), cumulative.end(), r);
    return std::min<std::size_t>(static_cast<std::size_t>(it - cumulative.begin()),
                                 cumulative.size() - 1);
  }
};

std::ofstream open_out(const std::string& path, const std::string& stage) {
  std::ofstream out(path, std::ios::binary);  // binary: byte-identical on every platform
  if (!out) throw Error(stage + ": cannot write " + path);
  return out;
}

}  // namespace

SyntheticDataset generate_synthetic_dataset(const SyntheticConfig& config,
                                            const std::string& out_dir) {
  config.validate();
  std::filesystem::create_directories(out_dir);
  const std::size_t vocab = config.vocab_size();
  const ClusterSampler sampler(config.tracks_per_cluster);

  SyntheticDataset ds;
  ds.vocab_size = vocab;
  ds.events_path = out_dir + "/events.tsv";
  ds.acoustic_path = out_dir + "/acoustic.csv";
  ds.lyrics_path = out_dir + "/lyrics.vec";
  ds.tags_path = out_dir + "/tags.vec";
  ds.metadata_path = out_dir + "/users.csv";

  // --- users: home cluster, cohort, questionnaire score -------------------
  const std::size_t at_risk_count =
      static_cast<std::size_t>(std::llround(config.at_risk_fraction * static_cast<double>(config.users)));
  SeededRng user_rng(derive_seed(config.seed, "synth-users"));
  std::vector<std::size_t> home(config.users);
  std::vector<bool> at_risk(config.users);
  std::vector<int> k10(config.users);
  for (std::size_t u = 0; u < config.users; ++u) {
    home[u] = static_cast<std::size_t>(user_rng.uniform_int(config.clusters));
    at_risk[u] = u < at_risk_count;
    k10[u] = at_risk[u] ? 29 + static_cast<int>(user_rng.uniform_int(22))    // [29, 50]
                        : 10 + static_cast<int>(user_rng.uniform_int(10));   // [10, 19]
  }

  {
    auto out = open_out(ds.metadata_path, "synth");
    out << "user_id,k10_score\n";
    for (std::size_t u = 0; u < config.users; ++u) {
      out << synthetic_user_id(u) << ',' << k10[u] << '\n';
    }
  }

  // --- events: cluster-biased Markov chain per session --------------------
  // The cluster is chosen first (stay with probability beta_m), so the
  // self-transition rate matches beta_m no matter how strong the repetition
  // boost is; replays only ever happen inside the stay branch.
  {
    SeededRng rng(derive_seed(config.seed, "synth-sessions"));
    auto out = open_out(ds.events_path, "synth");
    out << "user_id\tartist\ttitle\ttimestamp\n";
    const std::int64_t base_ts = 1672531200;  // 2023-01-01T00:00:00Z
    for (std::size_t u = 0; u < config.users; ++u) {
      const double repeat_p = at_risk[u] ? config.repeat_boost : config.base_repeat;
      std::int64_t ts = base_ts + static_cast<std::int64_t>(u) * 131;
      for (std::size_t s = 0; s < config.sessions_per_user; ++s) {
        const std::size_t len =
            config.session_len_min +
            static_cast<std::size_t>(
                rng.uniform_int(config.session_len_max - config.session_len_min + 1));
        std::size_t cluster = home[u];
        std::size_t track = sampler.draw(rng);
        for (std::size_t i = 0; i < len; ++i) {
          if (i > 0) {
            if (rng.uniform() < config.beta_m) {
              if (!(rng.uniform() < repeat_p)) track = sampler.draw(rng);
            } else if (config.clusters > 1) {
              std::size_t other = static_cast<std::size_t>(rng.uniform_int(config.clusters - 1));
              if (other >= cluster) ++other;
              cluster = other;
              track = sampler.draw(rng);
            } else {
              track = sampler.draw(rng);
            }
          }
          out << synthetic_user_id(u) << '\t' << synthetic_track_id(cluster, track) << "\t\t"
              << format_iso8601_utc(ts) << '\n';
          ts += 180;
        }
        ts += 21600;  // six hours of silence between sessions
      }
    }
  }

  // --- acoustic features: per-cluster Gaussians inside valid ranges -------
  {
    SeededRng rng(derive_seed(config.seed, "synth-acoustic"));
    struct Center {
      double unit[7];  // the seven [0,1] features
      double duration, loudness, mode_p, tempo;
    };
    std::vector<Center> centers(config.clusters);
    for (auto& c : centers) {
      for (double& v : c.unit) v = rng.uniform(0.15, 0.85);
      c.duration = rng.uniform(90e3, 280e3);
      c.loudness = rng.uniform(-25.0, -6.0);
      c.mode_p = rng.uniform(0.2, 0.8);
      c.tempo = rng.uniform(85.0, 165.0);
    }
    auto clamp = [](double v, double lo, double hi) { return std::min(hi, std::max(lo, v)); };
    auto out = open_out(ds.acoustic_path, "synth");
    out << "track_key";
    for (std::size_t i = 0; i < kNumAcousticFeatures; ++i) out << ',' << kAcousticFeatureNames[i];
    out << '\n';
    for (std::size_t c = 0; c < config.clusters; ++c) {
      const Center& ctr = centers[c];
      for (std::size_t t = 0; t < config.tracks_per_cluster; ++t) {
        AcousticFeatureVector f;
        // unit-interval features: acousticness, danceability, energy,
        // instrumentalness, liveness, speechiness, valence
        const std::size_t unit_slots[7] = {0, 1, 3, 4, 5, 8, 10};
        for (std::size_t i = 0; i < 7; ++i) {
          f[unit_slots[i]] = clamp(ctr.unit[i] + 0.12 * rng.normal(), 0.001, 0.999);
        }
        f[2] = clamp(ctr.duration * (1.0 + 0.15 * rng.normal()), 30e3, 600e3);  // duration_ms
        f[6] = clamp(ctr.loudness + 2.5 * rng.normal(), -59.9, -0.1);           // loudness
        f[7] = rng.uniform() < ctr.mode_p ? 1.0 : 0.0;                          // mode
        f[9] = clamp(ctr.tempo + 8.0 * rng.normal(), 40.0, 240.0);              // tempo
        validate_acoustic_features(f);
        out << synthetic_track_id(c, t);
        for (std::size_t i = 0; i < kNumAcousticFeatures; ++i) out << ',' << fmt(f[i]);
        out << '\n';
      }
    }
  }

  // --- lyric / tag pseudo-vectors: per-cluster Gaussian clouds ------------
  const auto write_vectors = [&](const std::string& path, const std::string& kind,
                                 std::size_t dim, double coverage, const char* stream) {
    SeededRng rng(derive_seed(config.seed, stream));
    std::vector<std::vector<double>> centers(config.clusters, std::vector<double>(dim));
    for (auto& c : centers) {
      for (double& v : c) v = 0.8 * rng.normal();
    }
    auto out = open_out(path, "synth");
    out << "dim=" << dim << " kind=" << kind << '\n';
    for (std::size_t c = 0; c < config.clusters; ++c) {
      for (std::size_t t = 0; t < config.tracks_per_cluster; ++t) {
        // Values are drawn even for uncovered tracks so the stream (and the
        // covered rows) do not depend on the coverage fraction.
        const bool covered = rng.uniform() < coverage;
        std::vector<double> v(dim);
        for (std::size_t j = 0; j < dim; ++j) v[j] = centers[c][j] + 0.35 * rng.normal();
        if (!covered) continue;
        out << synthetic_track_id(c, t) << '\t';
        for (std::size_t j = 0; j < dim; ++j) {
          if (j > 0) out << ' ';
          out << fmt(v[j]);
        }
        out << '\n';
      }
    }
  };
  write_vectors(ds.lyrics_path, "lyrics", config.lyric_dim, config.lyric_coverage, "synth-lyrics");
  write_vectors(ds.tags_path, "tags", config.tag_dim, config.tag_coverage, "synth-tags");

  return ds;
}

std::size_t synthetic_cluster_of(const std::string& track_key) {
  if (track_key.size() < 2 || track_key[0] != 'c') {
    throw Error("not a synthetic track key: '" + track_key + "'");
  }
  std::size_t pos = 1, value = 0;
  while (pos < track_key.size() && track_key[pos] >= '0' && track_key[pos] <= '9') {
    value = value * 10 + static_cast<std::size_t>(track_key[pos] - '0');
    ++pos;
  }
  if (pos == 1 || pos >= track_key.size() || track_key[pos] != '_') {
    throw Error("not a synthetic track key: '" + track_key + "'");
  }
  return value;
}

void cache_embeddings(const EmbeddingMatrix& matrix, const Vocabulary& vocab,
                      const std::string& path) {
  save_embeddings(matrix, vocab.hash_hex(), path);
}

EmbeddingMatrix load_cached(const std::string& path, const Vocabulary& vocab) {
  return load_embeddings(path, vocab.hash_hex());
}

}  // namespace muserec
