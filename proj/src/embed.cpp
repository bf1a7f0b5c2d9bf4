#include "muserec/embed.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "muserec/numerics.hpp"

namespace muserec {

namespace {

constexpr std::size_t kUnigramTableSize = 1u << 20;

// log(sigmoid(x)) without overflow on either tail.
double log_sigmoid(double x) {
  return x >= 0 ? -std::log1p(std::exp(-x)) : x - std::log1p(std::exp(x));
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// count^0.75 sampling table; only tracks that occur in the corpus appear.
std::vector<TrackId> build_unigram_table(const std::vector<double>& counts) {
  std::vector<std::pair<TrackId, double>> present;
  double total = 0.0;
  for (std::size_t t = 0; t < counts.size(); ++t) {
    if (counts[t] <= 0.0) continue;
    const double w = std::pow(counts[t], 0.75);
    present.emplace_back(static_cast<TrackId>(t), w);
    total += w;
  }
  std::vector<TrackId> table(kUnigramTableSize);
  std::size_t i = 0;
  double cumulative = present[0].second / total;
  for (std::size_t a = 0; a < table.size(); ++a) {
    table[a] = present[i].first;
    if (static_cast<double>(a) / static_cast<double>(table.size()) > cumulative &&
        i + 1 < present.size()) {
      ++i;
      cumulative += present[i].second / total;
    }
  }
  return table;
}

}  // namespace

EmbeddingMatrix train_cbow(const std::vector<const Session*>& sessions, std::size_t vocab_size,
                           const CbowConfig& config, SeededRng& rng,
                           std::vector<double>* epoch_losses) {
  if (config.dim == 0 || config.window == 0 || config.epochs == 0)
    throw Error("cbow: dim, window, and epochs must be positive");
  std::vector<double> counts(vocab_size, 0.0);
  std::size_t total_centers = 0;
  for (const Session* s : sessions) {
    for (TrackId t : s->tracks) counts[static_cast<std::size_t>(t)] += 1.0;
    total_centers += s->length();
  }
  if (total_centers == 0) throw Error("cbow: empty training corpus");
  std::vector<bool> trainable(vocab_size);
  for (std::size_t t = 0; t < vocab_size; ++t)
    trainable[t] = counts[t] >= static_cast<double>(config.min_count) && counts[t] > 0.0;

  const std::size_t d = config.dim;
  EmbeddingMatrix emb{Tensor::zeros({vocab_size, d}), "cbow"};
  for (std::size_t t = 0; t < vocab_size; ++t) {
    double* row = emb.table.row_ptr(t);
    for (std::size_t j = 0; j < d; ++j)
      row[j] = rng.uniform(-0.5 / static_cast<double>(d), 0.5 / static_cast<double>(d));
  }
  Tensor syn1 = Tensor::zeros({vocab_size, d});  // output-side vectors, zero-init
  const auto table = build_unigram_table(counts);

  std::vector<double> neu1(d), neu1e(d);
  std::vector<std::size_t> context;
  const double total_steps =
      static_cast<double>(config.epochs) * static_cast<double>(total_centers) + 1.0;
  std::size_t steps = 0;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    double loss_sum = 0.0;
    std::size_t loss_count = 0;
    for (const Session* s : sessions) {
      const auto& tracks = s->tracks;
      for (std::size_t pos = 0; pos < tracks.size(); ++pos) {
        const double progress = static_cast<double>(steps++) / total_steps;
        const double alpha = std::max(config.initial_lr * (1.0 - progress), 1e-4);
        const auto center = static_cast<std::size_t>(tracks[pos]);
        if (!trainable[center]) continue;

        // dynamic window: drop `shrink` positions from each side
        const std::size_t shrink = rng.uniform_int(config.window);
        const std::size_t span = config.window - shrink;
        context.clear();
        for (std::size_t off = 1; off <= span; ++off) {
          if (pos >= off) {
            const auto c = static_cast<std::size_t>(tracks[pos - off]);
            if (trainable[c]) context.push_back(c);
          }
          if (pos + off < tracks.size()) {
            const auto c = static_cast<std::size_t>(tracks[pos + off]);
            if (trainable[c]) context.push_back(c);
          }
        }
        if (context.empty()) continue;

        std::fill(neu1.begin(), neu1.end(), 0.0);
        for (std::size_t c : context) {
          const double* row = emb.table.row_ptr(c);
          for (std::size_t j = 0; j < d; ++j) neu1[j] += row[j];
        }
        const double inv = 1.0 / static_cast<double>(context.size());
        for (std::size_t j = 0; j < d; ++j) neu1[j] *= inv;

        std::fill(neu1e.begin(), neu1e.end(), 0.0);
        double loss = 0.0;
        for (std::size_t k = 0; k <= config.negative; ++k) {
          std::size_t target;
          double label;
          if (k == 0) {
            target = center;
            label = 1.0;
          } else {
            target = static_cast<std::size_t>(table[rng.uniform_int(table.size())]);
            if (target == center) continue;  // skip, do not redraw
            label = 0.0;
          }
          double* out = syn1.row_ptr(target);
          double f = 0.0;
          for (std::size_t j = 0; j < d; ++j) f += neu1[j] * out[j];
          loss += label == 1.0 ? -log_sigmoid(f) : -log_sigmoid(-f);
          const double g = (label - sigmoid(f)) * alpha;
          for (std::size_t j = 0; j < d; ++j) {
            neu1e[j] += g * out[j];
            out[j] += g * neu1[j];
          }
        }
        for (std::size_t c : context) {
          double* row = emb.table.row_ptr(c);
          for (std::size_t j = 0; j < d; ++j) row[j] += neu1e[j];
        }
        loss_sum += loss;
        ++loss_count;
      }
    }
    if (epoch_losses)
      epoch_losses->push_back(loss_count == 0 ? 0.0
                                              : loss_sum / static_cast<double>(loss_count));
  }
  require_finite(emb.table, "cbow embeddings");
  return emb;
}

SessionTrackMatrix SessionTrackMatrix::build(const std::vector<const Session*>& sessions,
                                             std::size_t vocab_size) {
  SessionTrackMatrix m;
  m.cols = vocab_size;
  m.rows.reserve(sessions.size());
  for (const Session* s : sessions) {
    std::map<TrackId, double> counts;
    for (TrackId t : s->tracks) counts[t] += 1.0;
    m.rows.emplace_back(counts.begin(), counts.end());
  }
  return m;
}

Tensor SessionTrackMatrix::densify() const {
  Tensor dense = Tensor::zeros({rows.size(), cols});
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (const auto& [track, count] : rows[r])
      dense.at(r, static_cast<std::size_t>(track)) = count;
  return dense;
}

EmbeddingMatrix train_lsa_embeddings(const SessionTrackMatrix& matrix, std::size_t rank) {
  if (matrix.rows.empty() || matrix.cols == 0) throw Error("lsa: empty count matrix");
  if (rank == 0) throw Error("lsa: rank must be positive");
  bool any = false;
  for (const auto& row : matrix.rows)
    if (!row.empty()) any = true;
  if (!any) throw Error("lsa: all-zero count matrix");

  const std::size_t effective = std::min({rank, matrix.rows.size(), matrix.cols});
  const SvdResult svd = truncated_svd(matrix.densify(), effective);
  EmbeddingMatrix emb{Tensor::zeros({matrix.cols, rank}), "lsa"};
  for (std::size_t t = 0; t < matrix.cols; ++t)
    for (std::size_t j = 0; j < effective; ++j)
      emb.table.at(t, j) = svd.v.at(t, j) * svd.s.data[j];
  return emb;
}

void init_unseen_tracks(EmbeddingMatrix& emb, const std::vector<bool>& seen, SeededRng& rng) {
  if (seen.size() != emb.rows()) throw Error("init_unseen_tracks: coverage size mismatch");
  const double bound = 0.5 / static_cast<double>(emb.dim());
  for (std::size_t t = 0; t < emb.rows(); ++t) {
    if (seen[t]) continue;
    double* row = emb.table.row_ptr(t);
    for (std::size_t j = 0; j < emb.dim(); ++j) row[j] = rng.uniform(-bound, bound);
  }
}

EmbeddingMatrix random_embeddings(std::size_t vocab_size, std::size_t dim, SeededRng& rng) {
  EmbeddingMatrix emb{Tensor::zeros({vocab_size, dim}), "random"};
  const double bound = 0.5 / static_cast<double>(dim);
  for (double& v : emb.table.data) v = rng.uniform(-bound, bound);
  return emb;
}

void save_embeddings(const EmbeddingMatrix& emb, const std::string& vocab_hash,
                     const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("embeddings: cannot write " + path);
  out << "dim=" << emb.dim() << " provenance=" << emb.provenance << " vocab_hash=" << vocab_hash
      << "\n";
  char buf[32];
  for (std::size_t t = 0; t < emb.rows(); ++t) {
    out << t;
    const double* row = emb.table.row_ptr(t);
    for (std::size_t j = 0; j < emb.dim(); ++j) {
      std::snprintf(buf, sizeof buf, "%.17g", row[j]);
      out << ' ' << buf;
    }
    out << "\n";
  }
  if (!out) throw Error("embeddings: write failed for " + path);
}

EmbeddingMatrix load_embeddings(const std::string& path, const std::string& expected_vocab_hash) {
  std::ifstream in(path);
  if (!in) throw Error("embeddings: cannot open " + path);
  std::string header;
  if (!std::getline(in, header)) throw Error("embeddings: missing header in " + path);
  std::size_t dim = 0;
  std::string provenance, hash;
  {
    std::istringstream hs(header);
    std::string field;
    while (hs >> field) {
      if (field.rfind("dim=", 0) == 0)
        dim = static_cast<std::size_t>(std::stoul(field.substr(4)));
      else if (field.rfind("provenance=", 0) == 0)
        provenance = field.substr(11);
      else if (field.rfind("vocab_hash=", 0) == 0)
        hash = field.substr(11);
      else
        throw Error("embeddings: unrecognized header field '" + field + "' in " + path);
    }
  }
  if (dim == 0 || provenance.empty() || hash.empty())
    throw Error("embeddings: corrupted header in " + path);
  if (hash != expected_vocab_hash)
    throw Error("embeddings: vocabulary hash mismatch in " + path + " (have " + hash +
                ", expected " + expected_vocab_hash + ")");

  std::vector<double> values;
  std::size_t expected_index = 0;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::size_t index;
    if (!(ls >> index) || index != expected_index)
      throw Error("embeddings: unexpected row index in " + path);
    double v;
    std::size_t got = 0;
    while (ls >> v) {
      values.push_back(v);
      ++got;
    }
    if (got != dim) throw Error("embeddings: row width mismatch in " + path);
    ++expected_index;
  }
  if (expected_index == 0) throw Error("embeddings: no rows in " + path);
  EmbeddingMatrix emb{Tensor{{expected_index, dim}, std::move(values)}, provenance};
  require_finite(emb.table, "loaded embeddings");
  return emb;
}

}  // namespace muserec
