#include <cmath>
#include <cstdio>
#include <filesystem>
#include <vector>

#include "doctest.h"
#include "muserec/embed.hpp"
#include "muserec/numerics.hpp"

using namespace muserec;

namespace {

double cosine(const double* a, const double* b, std::size_t d) {
  double dot = 0, na = 0, nb = 0;
  for (std::size_t j = 0; j < d; ++j) {
    dot += a[j] * b[j];
    na += a[j] * a[j];
    nb += b[j] * b[j];
  }
  return dot / std::sqrt(na * nb);
}

// Sessions drawn from one of two disjoint track clusters; tracks within a
// cluster co-occur, tracks across clusters never do.
struct ClusterCorpus {
  std::vector<Session> sessions;
  std::vector<const Session*> ptrs;

  ClusterCorpus(std::size_t per_cluster, std::size_t n_sessions, std::size_t session_len,
                std::uint64_t seed) {
    SeededRng rng(seed);
    for (std::size_t i = 0; i < n_sessions; ++i) {
      Session s;
      s.user_id = "u";
      const TrackId base = (i % 2 == 0) ? 0 : static_cast<TrackId>(per_cluster);
      for (std::size_t k = 0; k < session_len; ++k)
        s.tracks.push_back(base + static_cast<TrackId>(rng.uniform_int(per_cluster)));
      s.start_ts = 1000 + static_cast<std::int64_t>(i) * 100000;
      s.end_ts = s.start_ts + 600;
      sessions.push_back(std::move(s));
    }
    for (const auto& s : sessions) ptrs.push_back(&s);
  }
};

struct CosineGap {
  double intra = 0, inter = 0;
};

CosineGap cluster_cosines(const EmbeddingMatrix& emb, std::size_t per_cluster) {
  CosineGap g;
  std::size_t n_intra = 0, n_inter = 0;
  const std::size_t total = 2 * per_cluster;
  for (std::size_t a = 0; a < total; ++a)
    for (std::size_t b = a + 1; b < total; ++b) {
      const double c = cosine(emb.table.row_ptr(a), emb.table.row_ptr(b), emb.dim());
      const bool same = (a < per_cluster) == (b < per_cluster);
      if (same) {
        g.intra += c;
        ++n_intra;
      } else {
        g.inter += c;
        ++n_inter;
      }
    }
  g.intra /= static_cast<double>(n_intra);
  g.inter /= static_cast<double>(n_inter);
  return g;
}

}  // namespace

TEST_CASE("cbow separates co-played clusters across seeds") {
  CbowConfig cfg;
  cfg.dim = 16;
  cfg.epochs = 5;
  for (std::uint64_t seed : {11u, 22u, 33u, 44u, 55u}) {
    ClusterCorpus corpus(5, 60, 10, 900 + seed);
    SeededRng rng(seed);
    auto emb = train_cbow(corpus.ptrs, 10, cfg, rng);
    const auto g = cluster_cosines(emb, 5);
    CHECK(g.intra - g.inter >= 0.2);
  }
}

TEST_CASE("cbow survives a degenerate one-track corpus") {
  Session s;
  s.user_id = "u";
  s.tracks = {0, 0, 0, 0, 0, 0};
  std::vector<const Session*> ptrs = {&s};
  SeededRng rng(7);
  auto emb = train_cbow(ptrs, 1, CbowConfig{.dim = 8}, rng);
  CHECK(emb.rows() == 1);
  for (double v : emb.table.data) CHECK(std::isfinite(v));
}

TEST_CASE("cbow is deterministic for a fixed seed") {
  CbowConfig cfg;
  cfg.dim = 12;
  cfg.epochs = 2;
  ClusterCorpus corpus(4, 20, 8, 5);
  SeededRng r1(42), r2(42), r3(43);
  auto a = train_cbow(corpus.ptrs, 8, cfg, r1);
  auto b = train_cbow(corpus.ptrs, 8, cfg, r2);
  auto c = train_cbow(corpus.ptrs, 8, cfg, r3);
  CHECK(a.table.data == b.table.data);
  CHECK(a.table.data != c.table.data);
  CHECK(a.provenance == "cbow");
}

TEST_CASE("cbow rejects an empty corpus") {
  std::vector<const Session*> none;
  SeededRng rng(1);
  CHECK_THROWS_AS(train_cbow(none, 4, CbowConfig{}, rng), Error);
}

TEST_CASE("cbow per-epoch loss is non-increasing within tolerance") {
  CbowConfig cfg;
  cfg.dim = 16;
  cfg.epochs = 5;
  ClusterCorpus corpus(5, 40, 10, 77);
  SeededRng rng(13);
  std::vector<double> losses;
  train_cbow(corpus.ptrs, 10, cfg, rng, &losses);
  REQUIRE(losses.size() == 5);
  for (std::size_t e = 1; e < losses.size(); ++e) CHECK(losses[e] <= losses[e - 1] * 1.05);
  CHECK(losses.back() < losses.front());
}

namespace {

SessionTrackMatrix matrix_from_rows(const std::vector<std::vector<double>>& dense) {
  SessionTrackMatrix m;
  m.cols = dense.empty() ? 0 : dense[0].size();
  for (const auto& row : dense) {
    std::vector<std::pair<TrackId, double>> sparse;
    for (std::size_t t = 0; t < row.size(); ++t)
      if (row[t] != 0.0) sparse.emplace_back(static_cast<TrackId>(t), row[t]);
    m.rows.push_back(std::move(sparse));
  }
  return m;
}

}  // namespace

TEST_CASE("session-track matrix counts plays per session") {
  Session s1{"u", {0, 1, 0, 2, 0}, 10, 50};
  Session s2{"u", {2, 2, 3, 3, 3}, 100000, 100400};
  std::vector<const Session*> ptrs = {&s1, &s2};
  auto m = SessionTrackMatrix::build(ptrs, 4);
  auto dense = m.densify();
  CHECK(dense.at(0, 0) == 3.0);
  CHECK(dense.at(0, 1) == 1.0);
  CHECK(dense.at(0, 2) == 1.0);
  CHECK(dense.at(0, 3) == 0.0);
  CHECK(dense.at(1, 2) == 2.0);
  CHECK(dense.at(1, 3) == 3.0);
  // row sums equal session lengths
  for (std::size_t r = 0; r < 2; ++r) {
    double sum = 0;
    for (std::size_t t = 0; t < 4; ++t) sum += dense.at(r, t);
    CHECK(sum == 5.0);
  }
}

TEST_CASE("lsa embeddings of a rank-1 matrix are collinear") {
  auto m = matrix_from_rows({{2, 1, 3}, {2, 1, 3}, {2, 1, 3}, {2, 1, 3}});
  auto emb = train_lsa_embeddings(m, 2);
  CHECK(emb.provenance == "lsa");
  REQUIRE(emb.rows() == 3);
  for (std::size_t a = 0; a < 3; ++a)
    for (std::size_t b = a + 1; b < 3; ++b)
      CHECK(std::abs(cosine(emb.table.row_ptr(a), emb.table.row_ptr(b), emb.dim())) ==
            doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("lsa separates block-diagonal communities") {
  auto m = matrix_from_rows({{3, 1, 2, 0, 0, 0},
                             {1, 2, 2, 0, 0, 0},
                             {2, 2, 1, 0, 0, 0},
                             {0, 0, 0, 1, 3, 2},
                             {0, 0, 0, 2, 1, 3},
                             {0, 0, 0, 3, 2, 1}});
  auto emb = train_lsa_embeddings(m, 2);
  double intra = 0, inter = 0;
  std::size_t n_intra = 0, n_inter = 0;
  for (std::size_t a = 0; a < 6; ++a)
    for (std::size_t b = a + 1; b < 6; ++b) {
      const double c = cosine(emb.table.row_ptr(a), emb.table.row_ptr(b), 2);
      if ((a < 3) == (b < 3)) {
        intra += c;
        ++n_intra;
      } else {
        inter += c;
        ++n_inter;
      }
    }
  CHECK(intra / static_cast<double>(n_intra) > inter / static_cast<double>(n_inter));
}

TEST_CASE("lsa rank beyond matrix rank leaves trailing dimensions at zero") {
  auto m = matrix_from_rows({{1, 2, 0, 1}, {2, 4, 0, 2}});  // rank 1, 2 rows
  auto emb = train_lsa_embeddings(m, 6);                    // clamped to min(2, 4) = 2
  CHECK(emb.dim() == 6);
  for (std::size_t t = 0; t < 4; ++t) {
    for (std::size_t j = 1; j < 6; ++j)
      CHECK(std::abs(emb.table.at(t, j)) < 1e-9);  // rank-1 input: only dim 0 carries signal
  }
  // leading dimension is nonzero for present tracks
  CHECK(std::abs(emb.table.at(0, 0)) > 1e-6);
}

TEST_CASE("lsa rejects empty and all-zero matrices") {
  CHECK_THROWS_AS(train_lsa_embeddings(SessionTrackMatrix{}, 2), Error);
  SessionTrackMatrix zeros;
  zeros.cols = 3;
  zeros.rows = {{}, {}};
  CHECK_THROWS_AS(train_lsa_embeddings(zeros, 2), Error);
}

TEST_CASE("lsa embedding dot products match truncated column geometry") {
  // 6 sessions x 5 tracks, values chosen by hand
  const std::vector<std::vector<double>> rows = {{1, 0, 2, 0, 1}, {0, 3, 1, 1, 0},
                                                 {2, 1, 0, 0, 2}, {1, 1, 1, 3, 0},
                                                 {0, 2, 2, 1, 1}, {3, 0, 1, 0, 2}};
  auto m = matrix_from_rows(rows);

  SUBCASE("full rank reproduces raw column dot products") {
    auto emb = train_lsa_embeddings(m, 5);
    for (std::size_t a = 0; a < 5; ++a)
      for (std::size_t b = 0; b < 5; ++b) {
        double raw = 0;
        for (const auto& r : rows) raw += r[a] * r[b];
        double got = 0;
        for (std::size_t j = 0; j < 5; ++j) got += emb.table.at(a, j) * emb.table.at(b, j);
        CHECK(got == doctest::Approx(raw).epsilon(1e-9));
      }
  }

  SUBCASE("truncated rank matches explicit low-rank reconstruction") {
    const std::size_t rank = 2;
    auto emb = train_lsa_embeddings(m, rank);
    const auto svd = truncated_svd(m.densify(), rank);
    // reconstruct M_hat = U S V^T, then compare column dot products
    Tensor mhat = Tensor::zeros({6, 5});
    for (std::size_t i = 0; i < 6; ++i)
      for (std::size_t t = 0; t < 5; ++t)
        for (std::size_t j = 0; j < rank; ++j)
          mhat.at(i, t) += svd.u.at(i, j) * svd.s.data[j] * svd.v.at(t, j);
    for (std::size_t a = 0; a < 5; ++a)
      for (std::size_t b = 0; b < 5; ++b) {
        double want = 0;
        for (std::size_t i = 0; i < 6; ++i) want += mhat.at(i, a) * mhat.at(i, b);
        double got = 0;
        for (std::size_t j = 0; j < rank; ++j) got += emb.table.at(a, j) * emb.table.at(b, j);
        CHECK(got == doctest::Approx(want).epsilon(1e-9));
      }
  }
}

TEST_CASE("init_unseen_tracks fills exactly the unseen rows") {
  SeededRng init(3);
  auto emb = random_embeddings(5, 4, init);
  const auto before = emb.table.data;

  SUBCASE("all seen leaves the matrix unchanged") {
    SeededRng rng(9);
    init_unseen_tracks(emb, {true, true, true, true, true}, rng);
    CHECK(emb.table.data == before);
  }

  SUBCASE("three unseen rows are replaced, rest untouched") {
    SeededRng rng(9);
    init_unseen_tracks(emb, {true, false, false, true, false}, rng);
    for (std::size_t t : {0u, 3u})
      for (std::size_t j = 0; j < 4; ++j) CHECK(emb.table.at(t, j) == before[t * 4 + j]);
    for (std::size_t t : {1u, 2u, 4u}) {
      bool changed = false;
      for (std::size_t j = 0; j < 4; ++j) {
        CHECK(std::abs(emb.table.at(t, j)) <= 0.5 / 4.0);
        if (emb.table.at(t, j) != before[t * 4 + j]) changed = true;
      }
      CHECK(changed);
    }
  }

  SUBCASE("identical seeds give identical fills") {
    auto emb2 = emb;
    SeededRng r1(9), r2(9);
    init_unseen_tracks(emb, {false, true, false, true, true}, r1);
    init_unseen_tracks(emb2, {false, true, false, true, true}, r2);
    CHECK(emb.table.data == emb2.table.data);
  }
}

TEST_CASE("embedding cache round-trips bit-exactly and checks the vocab hash") {
  SeededRng rng(21);
  auto emb = random_embeddings(6, 5, rng);
  emb.table.at(2, 3) = 1.0 / 3.0;  // a value without a short decimal form
  const auto path = std::filesystem::temp_directory_path() / "muserec_emb_test.txt";
  save_embeddings(emb, "00ff00ff00ff00ff", path.string());

  auto loaded = load_embeddings(path.string(), "00ff00ff00ff00ff");
  CHECK(loaded.provenance == "random");
  CHECK(loaded.rows() == 6);
  CHECK(loaded.dim() == 5);
  CHECK(loaded.table.data == emb.table.data);

  CHECK_THROWS_WITH_AS(static_cast<void>(load_embeddings(path.string(), "deadbeefdeadbeef")),
                       doctest::Contains("hash mismatch"), Error);

  std::filesystem::remove(path);
}

TEST_CASE("embedding loader rejects corrupted files") {
  const auto dir = std::filesystem::temp_directory_path();
  const auto path = (dir / "muserec_emb_bad.txt").string();
  auto write = [&](const std::string& text) {
    std::FILE* f = std::fopen(path.c_str(), "w");
    std::fwrite(text.data(), 1, text.size(), f);
    std::fclose(f);
  };
  write("not a header\n0 1 2\n");
  CHECK_THROWS_AS(static_cast<void>(load_embeddings(path, "x")), Error);
  write("dim=2 provenance=cbow vocab_hash=x\n0 1.0\n");  // row width mismatch
  CHECK_THROWS_AS(static_cast<void>(load_embeddings(path, "x")), Error);
  write("dim=2 provenance=cbow vocab_hash=x\n1 1.0 2.0\n");  // wrong index
  CHECK_THROWS_AS(static_cast<void>(load_embeddings(path, "x")), Error);
  std::filesystem::remove(path);
}
