#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "doctest.h"
#include "muserec/eval.hpp"
#include "muserec/fusion.hpp"
#include "muserec/rng.hpp"
#include "muserec/sessions.hpp"
#include "nlohmann/json.hpp"

using namespace muserec;

namespace {

Session make_session(std::string user, std::vector<TrackId> tracks, std::int64_t start = 0) {
  Session s;
  s.user_id = std::move(user);
  s.tracks = std::move(tracks);
  s.start_ts = start;
  s.end_ts = start + 60 * static_cast<std::int64_t>(s.tracks.size());
  return s;
}

DatasetSplit test_only_split(std::vector<Session> sessions) {
  DatasetSplit split;
  for (auto& s : sessions) split.test[s.user_id].push_back(std::move(s));
  return split;
}

// Ranking that depends only on the prefix contents, so repeated calls (with
// any cutoff) agree on their common leading entries. Mirrors the partial
// Fisher-Yates used by random_scorer.
RankedScorer hashed_scorer(std::size_t vocab, std::uint64_t seed) {
  return [vocab, seed](const std::vector<TrackId>& prefix, std::size_t kmax) {
    std::string key;
    for (TrackId t : prefix) {
      key += std::to_string(t);
      key += ',';
    }
    SeededRng rng(derive_seed(seed, key));
    const std::size_t k = std::min(kmax, vocab);
    std::vector<TrackId> pool(vocab);
    for (std::size_t i = 0; i < vocab; ++i) pool[i] = static_cast<TrackId>(i);
    for (std::size_t i = 0; i < k; ++i) {
      const std::size_t j = i + static_cast<std::size_t>(rng.uniform_int(vocab - i));
      std::swap(pool[i], pool[j]);
    }
    pool.resize(k);
    return pool;
  };
}

// Top-1 guess = last track of the prefix.
RankedScorer echo_scorer() {
  return [](const std::vector<TrackId>& prefix, std::size_t) {
    return std::vector<TrackId>{prefix.back()};
  };
}

}  // namespace

TEST_CASE("test prefixes enumerate every within-session continuation") {
  SUBCASE("session of length 5 yields 4 events") {
    const auto split = test_only_split({make_session("u", {4, 2, 7, 1, 3})});
    const auto prefixes = iterate_test_prefixes(split);
    REQUIRE(prefixes.size() == 4);
    for (std::size_t t = 0; t < 4; ++t) {
      CHECK(prefixes[t].prefix_len == t + 1);
      CHECK(prefixes[t].target == split.test.at("u")[0].tracks[t + 1]);
    }
  }

  SUBCASE("lengths 5 and 6 yield 9 events") {
    const auto split = test_only_split({make_session("u", {0, 1, 2, 3, 4}, 0),
                                        make_session("u", {5, 6, 7, 8, 9, 0}, 9000)});
    CHECK(iterate_test_prefixes(split).size() == 9);
  }

  SUBCASE("length-2 session yields one event") {
    const auto split = test_only_split({make_session("u", {3, 8})});
    const auto prefixes = iterate_test_prefixes(split);
    REQUIRE(prefixes.size() == 1);
    CHECK(prefixes[0].prefix_len == 1);
    CHECK(prefixes[0].target == 8);
  }

  SUBCASE("users visited in sorted order") {
    const auto split = test_only_split(
        {make_session("zoe", {1, 2}), make_session("amy", {3, 4}), make_session("mia", {5, 6})});
    const auto prefixes = iterate_test_prefixes(split);
    REQUIRE(prefixes.size() == 3);
    CHECK(*prefixes[0].user_id == "amy");
    CHECK(*prefixes[1].user_id == "mia");
    CHECK(*prefixes[2].user_id == "zoe");
  }
}

TEST_CASE("prediction events carry the target rank and monotone hit flags") {
  // One session, one event; the scorer puts the target at position 3.
  const auto split = test_only_split({make_session("u", {0, 9})});
  RankedScorer fixed = [](const std::vector<TrackId>&, std::size_t) {
    return std::vector<TrackId>{4, 2, 7, 9, 1};
  };
  const auto events = collect_prediction_events(fixed, split, {1, 2, 3, 4, 5});
  REQUIRE(events.size() == 1);
  CHECK(events[0].rank == 3);
  CHECK(events[0].hits == std::vector<bool>{false, false, false, true, true});
  for (std::size_t i = 1; i < events[0].hits.size(); ++i) {
    CHECK(events[0].hits[i - 1] <= events[0].hits[i]);
  }

  SUBCASE("target missing from the candidates is unranked") {
    RankedScorer never = [](const std::vector<TrackId>&, std::size_t) {
      return std::vector<TrackId>{1, 2, 3};
    };
    const auto missed = collect_prediction_events(never, split, {1, 2, 3});
    REQUIRE(missed.size() == 1);
    CHECK(missed[0].rank == PredictionEvent::kUnranked);
    CHECK(missed[0].hits == std::vector<bool>{false, false, false});
  }
}

TEST_CASE("hand-built six-event fixture matches a manual count") {
  // Session 0,1,2,3,4,5,6: six prefixes, targets 1..6. The scorer answers
  // with a fixed list per prefix length; hits counted by hand below.
  const auto split = test_only_split({make_session("u", {0, 1, 2, 3, 4, 5, 6})});
  RankedScorer scripted = [](const std::vector<TrackId>& prefix, std::size_t) {
    switch (prefix.size()) {
      case 1: return std::vector<TrackId>{1, 8, 9, 7, 5};  // target 1 -> rank 0
      case 2: return std::vector<TrackId>{9, 2, 8, 7, 5};  // target 2 -> rank 1
      case 3: return std::vector<TrackId>{9, 8, 7, 5, 3};  // target 3 -> rank 4
      case 4: return std::vector<TrackId>{9, 8, 7, 5, 1};  // target 4 -> missing
      case 5: return std::vector<TrackId>{5, 8, 9, 7, 1};  // target 5 -> rank 0
      default: return std::vector<TrackId>{9, 8, 6, 7, 5};  // target 6 -> rank 2
    }
  };
  // rank per event: 0, 1, 4, miss, 0, 2
  //   hits@1 = {1,0,0,0,1,0} = 2; hits@3 = {1,1,0,0,1,1} = 4; hits@5 = 5
  const auto report = evaluate_hit_ratio(scripted, split, {1, 3, 5});
  CHECK(report.total == 6);
  CHECK(report.hits == std::vector<std::int64_t>{2, 4, 5});
  CHECK(report.ratios[0] == doctest::Approx(2.0 / 6.0).epsilon(1e-15));
  CHECK(report.ratios[1] == doctest::Approx(4.0 / 6.0).epsilon(1e-15));
  CHECK(report.ratios[2] == doctest::Approx(5.0 / 6.0).epsilon(1e-15));
}

TEST_CASE("hit ratios equal an independent brute-force recount") {
  // 50 random fixtures of <= 100 events; the recount re-queries the scorer
  // one cutoff at a time and tests membership directly.
  for (std::uint64_t fixture = 1; fixture <= 50; ++fixture) {
    SeededRng gen(derive_seed(900, "fixture-" + std::to_string(fixture)));
    const std::size_t vocab = 5 + static_cast<std::size_t>(gen.uniform_int(36));
    const std::size_t users = 1 + static_cast<std::size_t>(gen.uniform_int(3));
    std::vector<Session> sessions;
    for (std::size_t u = 0; u < users; ++u) {
      const std::size_t count = 1 + static_cast<std::size_t>(gen.uniform_int(4));
      for (std::size_t s = 0; s < count; ++s) {
        const std::size_t len = 2 + static_cast<std::size_t>(gen.uniform_int(7));
        std::vector<TrackId> tracks;
        for (std::size_t i = 0; i < len; ++i) {
          tracks.push_back(static_cast<TrackId>(gen.uniform_int(vocab)));
        }
        sessions.push_back(
            make_session("user" + std::to_string(u), std::move(tracks),
                         static_cast<std::int64_t>(s) * 10000));
      }
    }
    const auto split = test_only_split(std::move(sessions));
    const std::vector<std::size_t> ks = {1, 3, 10};
    const auto scorer = hashed_scorer(vocab, fixture);
    const auto report = evaluate_hit_ratio(scorer, split, ks);
    REQUIRE(report.total <= 100);

    std::vector<std::int64_t> recount(ks.size(), 0);
    std::int64_t events = 0;
    for (const auto& [user, user_sessions] : split.test) {
      for (const auto& session : user_sessions) {
        for (std::size_t t = 1; t < session.tracks.size(); ++t) {
          const std::vector<TrackId> prefix(session.tracks.begin(),
                                            session.tracks.begin() +
                                                static_cast<std::ptrdiff_t>(t));
          const TrackId target = session.tracks[t];
          ++events;
          for (std::size_t i = 0; i < ks.size(); ++i) {
            const auto top = scorer(prefix, ks[i]);
            if (std::find(top.begin(), top.end(), target) != top.end()) ++recount[i];
          }
        }
      }
    }
    REQUIRE(events == report.total);
    CHECK(recount == report.hits);
    for (std::size_t i = 0; i < ks.size(); ++i) {
      CHECK(report.ratios[i] ==
            static_cast<double>(recount[i]) / static_cast<double>(events));
    }
  }
}

TEST_CASE("uniform random scorer calibrates to k over catalogue size") {
  // 500 sessions x 20 prefixes = 10000 events against a 1000-track catalogue.
  std::vector<Session> sessions;
  SeededRng gen(77);
  for (std::size_t s = 0; s < 500; ++s) {
    std::vector<TrackId> tracks;
    for (std::size_t i = 0; i < 21; ++i) {
      tracks.push_back(static_cast<TrackId>(gen.uniform_int(1000)));
    }
    sessions.push_back(make_session("u", std::move(tracks), static_cast<std::int64_t>(s) * 100000));
  }
  const auto split = test_only_split(std::move(sessions));
  const auto report = evaluate_hit_ratio(random_scorer(1000, 4242), split);
  REQUIRE(report.total == 10000);
  CHECK(report.ratios[0] == doctest::Approx(0.010).epsilon(0.5));  // 0.010 +- 0.005
  CHECK(std::abs(report.ratios[0] - 0.010) <= 0.005);
  CHECK(std::abs(report.ratios[4] - 0.050) <= 0.012);
  for (std::size_t i = 1; i < report.ratios.size(); ++i) {
    CHECK(report.ratios[i - 1] <= report.ratios[i]);
  }
}

TEST_CASE("ratios are monotone in k for arbitrary scorers") {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    SeededRng gen(seed);
    std::vector<Session> sessions;
    for (std::size_t s = 0; s < 6; ++s) {
      std::vector<TrackId> tracks;
      for (std::size_t i = 0; i < 6; ++i) {
        tracks.push_back(static_cast<TrackId>(gen.uniform_int(30)));
      }
      sessions.push_back(make_session("u" + std::to_string(s % 2), std::move(tracks),
                                      static_cast<std::int64_t>(s) * 10000));
    }
    const auto split = test_only_split(std::move(sessions));
    const auto report =
        evaluate_hit_ratio(random_scorer(30, seed * 13), split, {2, 5, 9, 14, 25});
    for (std::size_t i = 1; i < report.ratios.size(); ++i) {
      CHECK(report.ratios[i - 1] <= report.ratios[i]);
      CHECK(report.hits[i - 1] <= report.hits[i]);
    }
    CHECK(report.ratios.front() >= 0.0);
    CHECK(report.ratios.back() <= 1.0);
  }
}

TEST_CASE("a scorer that always ranks the target first scores 1 everywhere") {
  // Tracks follow last+1, and the scorer guesses exactly that.
  RankedScorer clairvoyant = [](const std::vector<TrackId>& prefix, std::size_t) {
    return std::vector<TrackId>{static_cast<TrackId>(prefix.back() + 1)};
  };
  const auto split = test_only_split(
      {make_session("u", {0, 1, 2, 3, 4}), make_session("v", {2, 3, 4, 5, 6})});
  const auto report = evaluate_hit_ratio(clairvoyant, split);
  for (double r : report.ratios) CHECK(r == 1.0);
  CHECK(report.total == 8);
}

TEST_CASE("evaluation rejects degenerate input") {
  SUBCASE("no test sessions") {
    DatasetSplit split;
    CHECK_THROWS_AS(evaluate_hit_ratio(echo_scorer(), split), Error);
  }

  SUBCASE("zero or missing cutoffs") {
    const auto split = test_only_split({make_session("u", {1, 2})});
    CHECK_THROWS_AS(evaluate_hit_ratio(echo_scorer(), split, {0, 10}), Error);
    CHECK_THROWS_AS(evaluate_hit_ratio(echo_scorer(), split, {}), Error);
  }

  SUBCASE("unsorted duplicate cutoffs are normalized") {
    const auto split = test_only_split({make_session("u", {1, 1, 1})});
    const auto report = evaluate_hit_ratio(echo_scorer(), split, {5, 1, 5, 3});
    CHECK(report.ks == std::vector<std::size_t>{1, 3, 5});
    CHECK(report.ratios == std::vector<double>{1.0, 1.0, 1.0});
  }
}

TEST_CASE("macro averaging weights users equally") {
  // User a: one session, 4 events, all hits (repeats echoed back).
  // User b: two sessions, 8 events, all misses. Micro 4/12, macro 1/2.
  const auto split = test_only_split({make_session("a", {2, 2, 2, 2, 2}),
                                      make_session("b", {1, 3, 5, 7, 9}, 0),
                                      make_session("b", {1, 3, 5, 7, 9}, 50000)});
  const auto micro = evaluate_hit_ratio(echo_scorer(), split, {1, 10});
  CHECK(micro.ratios[0] == doctest::Approx(4.0 / 12.0).epsilon(1e-15));
  const auto macro = evaluate_hit_ratio(echo_scorer(), split, {1, 10}, true);
  CHECK(macro.macro);
  CHECK(macro.ratios[0] == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(macro.ratios[1] == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(macro.hits[0] == 4);  // raw micro counts are kept alongside
  CHECK(macro.total == 12);
}

TEST_CASE("model scorer plugs the trained network into evaluation") {
  ModelConfig cfg;
  cfg.embed_dim = 6;
  cfg.gru_hidden = 6;
  cfg.fusion_hidden = 8;
  cfg.dropout = 0.0;
  SeededRng table_rng(5);
  auto e1 = random_embeddings(6, 6, table_rng);
  SeededRng rng(6);
  auto model = init_fusion_model(cfg, 6, e1, nullptr, nullptr, nullptr, rng);

  const auto split = test_only_split(
      {make_session("u", {0, 1, 2, 3, 4}), make_session("u", {5, 4, 3, 2, 1}, 90000)});
  // Vocabulary (6) is smaller than every default cutoff, so the ranked list
  // is the whole catalogue and every event is a hit at k >= 6.
  const auto report = evaluate_hit_ratio(model_scorer(model), split);
  for (double r : report.ratios) CHECK(r == 1.0);

  const auto tight = evaluate_hit_ratio(model_scorer(model), split, {1, 3, 6});
  for (std::size_t i = 1; i < tight.ratios.size(); ++i) {
    CHECK(tight.ratios[i - 1] <= tight.ratios[i]);
  }
  CHECK(tight.ratios[2] == 1.0);
}

TEST_CASE("cohort membership follows the score windows") {
  const UserMetadata metadata = {{"ann", 29}, {"bob", 28}, {"cat", 19}, {"dan", 20},
                                 {"eve", 50}, {"fay", 10}, {"gus", 35}};

  SUBCASE("at-risk keeps 29 and above") {
    const Cohort at_risk{"At-risk", 29, 50, std::nullopt};
    CHECK(cohort_members(at_risk, metadata) ==
          std::vector<std::string>{"eve", "gus", "ann"});
  }

  SUBCASE("no-risk stays strictly below 20") {
    const Cohort no_risk{"No-risk", 10, 19, std::nullopt};
    CHECK(cohort_members(no_risk, metadata) == std::vector<std::string>{"cat", "fay"});
  }

  SUBCASE("scores 20-28 fall in neither cohort") {
    const Cohort at_risk{"At-risk", 29, 50, std::nullopt};
    const Cohort no_risk{"No-risk", 10, 19, std::nullopt};
    const auto a = cohort_members(at_risk, metadata);
    const auto n = cohort_members(no_risk, metadata);
    for (const auto& user : {std::string("bob"), std::string("dan")}) {
      CHECK(std::find(a.begin(), a.end(), user) == a.end());
      CHECK(std::find(n.begin(), n.end(), user) == n.end());
    }
  }

  SUBCASE("top-n truncation orders by descending score then id") {
    const UserMetadata tied = {{"a", 30}, {"b", 40}, {"c", 40}, {"d", 35}};
    const Cohort cohort{"At-risk", 29, 50, 3};
    CHECK(cohort_members(cohort, tied) == std::vector<std::string>{"b", "c", "d"});
  }
}

TEST_CASE("cohort evaluation splits users and sums back to the pooled count") {
  const UserMetadata metadata = {{"r1", 35}, {"r2", 30}, {"n1", 15}, {"n2", 12}};
  const std::vector<Cohort> cohorts = {{"At-risk", 29, 50, std::nullopt},
                                       {"No-risk", 10, 19, std::nullopt}};
  std::vector<Session> sessions;
  SeededRng gen(3);
  for (const auto& user : {"r1", "r2", "n1", "n2"}) {
    for (std::size_t s = 0; s < 2; ++s) {
      std::vector<TrackId> tracks;
      for (std::size_t i = 0; i < 5; ++i) {
        tracks.push_back(static_cast<TrackId>(gen.uniform_int(15)));
      }
      sessions.push_back(make_session(user, std::move(tracks),
                                      static_cast<std::int64_t>(s) * 40000));
    }
  }
  const auto split = test_only_split(std::move(sessions));
  const auto scorer = hashed_scorer(15, 99);
  const std::vector<std::size_t> ks = {1, 5, 10};

  const auto reports = cohort_evaluate(scorer, cohorts, metadata, split, ks);
  REQUIRE(reports.size() == 2);
  CHECK(reports[0].cohort == "At-risk");
  CHECK(reports[1].cohort == "No-risk");

  const auto pooled = evaluate_hit_ratio(scorer, split, ks);
  CHECK(reports[0].total + reports[1].total == pooled.total);
  for (std::size_t i = 0; i < ks.size(); ++i) {
    CHECK(reports[0].hits[i] + reports[1].hits[i] == pooled.hits[i]);
  }
}

TEST_CASE("cohorts with nobody in them are rejected by name") {
  const UserMetadata metadata = {{"solo", 25}};
  const auto split = test_only_split({make_session("solo", {1, 2, 3})});
  const std::vector<Cohort> cohorts = {{"At-risk", 29, 50, std::nullopt}};
  try {
    cohort_evaluate(echo_scorer(), cohorts, metadata, split);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("At-risk") != std::string::npos);
  }

  SUBCASE("members without test sessions also surface the cohort") {
    const UserMetadata ghost = {{"absent", 45}};
    const std::vector<Cohort> at_risk = {{"At-risk", 29, 50, std::nullopt}};
    try {
      cohort_evaluate(echo_scorer(), at_risk, ghost, split);
      FAIL("expected an error");
    } catch (const Error& e) {
      CHECK(std::string(e.what()).find("At-risk") != std::string::npos);
    }
  }
}

TEST_CASE("repetitive listening is easier to predict than diffuse listening") {
  // Two single-user cohorts with their own models: one user replays one
  // track per session, the other wanders uniformly. After a short training
  // run the repetitive cohort must win at k=1 for every seed.
  const UserMetadata metadata = {{"rep", 40}, {"mix", 12}};
  const std::vector<Cohort> cohorts = {{"At-risk", 29, 50, std::nullopt},
                                       {"No-risk", 10, 19, std::nullopt}};
  for (std::uint64_t seed : {101, 202, 303}) {
    SeededRng gen(seed);
    DatasetSplit split;
    for (std::size_t s = 0; s < 6; ++s) {
      std::vector<TrackId> rep(5, 7);  // one track on repeat, train and test
      std::vector<TrackId> mix;
      for (std::size_t i = 0; i < 5; ++i) {
        mix.push_back(static_cast<TrackId>(gen.uniform_int(12)));
      }
      auto& rep_side = s < 4 ? split.train : split.test;
      rep_side["rep"].push_back(make_session("rep", std::move(rep),
                                             static_cast<std::int64_t>(s) * 40000));
      auto& mix_side = s < 4 ? split.train : split.test;
      mix_side["mix"].push_back(make_session("mix", std::move(mix),
                                             static_cast<std::int64_t>(s) * 40000));
    }

    std::vector<std::pair<Cohort, RankedScorer>> scored;
    std::vector<FusionModel> models;
    models.reserve(cohorts.size());
    for (const auto& cohort : cohorts) {
      ModelConfig cfg;
      cfg.embed_dim = 8;
      cfg.gru_hidden = 8;
      cfg.fusion_hidden = 12;
      cfg.dropout = 0.0;
      cfg.epochs = 20;
      cfg.batch = 8;
      cfg.lr = 0.03;
      SeededRng table_rng(seed + 1);
      auto e1 = random_embeddings(12, 8, table_rng);
      SeededRng init_rng(seed + 2);
      auto model = init_fusion_model(cfg, 12, e1, nullptr, nullptr, nullptr, init_rng);

      const auto members = cohort_members(cohort, metadata);
      DatasetSplit cohort_split;
      for (const auto& m : members) {
        if (split.train.count(m)) cohort_split.train[m] = split.train.at(m);
      }
      SeededRng train_rng(seed + 3);
      train_model(model, cohort_split.all_train(), train_rng);
      models.push_back(std::move(model));
      scored.emplace_back(cohort, model_scorer(models.back()));
    }

    const auto reports = cohort_evaluate(scored, metadata, split, {1, 2});
    REQUIRE(reports.size() == 2);
    CHECK(reports[0].ratios[0] > reports[1].ratios[0]);
  }
}

TEST_CASE("report tables render percentages with two decimals") {
  HitRatioReport r;
  r.label = "annw";
  r.cohort = "all";
  r.ks = {10, 20};
  r.hits = {3317, 4000};
  r.total = 10000;
  r.ratios = {0.3317, 0.4};
  CHECK(render_report_table({r}) ==
        "Method      k=10      k=20\n"
        "annw       33.17     40.00\n");

  SUBCASE("cohort rows carry the cohort label") {
    HitRatioReport c = r;
    c.label = "model";
    c.cohort = "At-risk";
    const auto table = render_report_table({r, c});
    CHECK(table.find("model [At-risk]") != std::string::npos);
  }

  SUBCASE("columns follow ascending cutoffs") {
    const auto table = render_report_table({r});
    CHECK(table.find("k=10") < table.find("k=20"));
  }

  SUBCASE("mismatched cutoffs cannot share a table") {
    HitRatioReport other = r;
    other.ks = {10, 30};
    CHECK_THROWS_AS(render_report_table({r, other}), Error);
  }

  SUBCASE("empty input is rejected") { CHECK_THROWS_AS(render_report_table({}), Error); }
}

TEST_CASE("jsonl reports round-trip through a parser") {
  HitRatioReport r;
  r.label = "annw";
  r.cohort = "all";
  r.ks = {10, 20};
  r.hits = {3317, 4000};
  r.total = 10000;
  r.ratios = {0.3317, 0.4};
  HitRatioReport c = r;
  c.cohort = "At-risk";
  c.label = "model";

  const std::string jsonl = render_report_jsonl({r, c});
  std::vector<nlohmann::json> records;
  std::size_t start = 0;
  while (start < jsonl.size()) {
    const std::size_t end = jsonl.find('\n', start);
    records.push_back(nlohmann::json::parse(jsonl.substr(start, end - start)));
    start = end + 1;
  }
  REQUIRE(records.size() == 4);
  CHECK(records[0]["label"] == "annw");
  CHECK(records[0]["cohort"] == "all");
  CHECK(records[0]["k"] == 10);
  CHECK(records[0]["hits"] == 3317);
  CHECK(records[0]["total"] == 10000);
  CHECK(records[0]["ratio"] == doctest::Approx(0.3317));
  CHECK(records[2]["cohort"] == "At-risk");
  CHECK(records[3]["k"] == 20);
}
