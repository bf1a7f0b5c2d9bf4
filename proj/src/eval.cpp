#include "muserec/eval.hpp"

#include <algorithm>
#include <cstdio>
#include <istream>
#include <memory>
#include <numeric>

#include "muserec/rng.hpp"
#include "nlohmann/json.hpp"

namespace muserec {

std::vector<TestPrefix> iterate_test_prefixes(const DatasetSplit& split) {
  std::vector<TestPrefix> out;
  for (const auto& [user, sessions] : split.test) {
    for (std::size_t si = 0; si < sessions.size(); ++si) {
      const Session& s = sessions[si];
      for (std::size_t t = 1; t < s.tracks.size(); ++t) {
        out.push_back({&user, &s, si, t, s.tracks[t]});
      }
    }
  }
  return out;
}

RankedScorer model_scorer(const FusionModel& model) {
  const FusionModel* m = &model;
  return [m](const std::vector<TrackId>& prefix, std::size_t kmax) {
    const std::size_t k = std::min<std::size_t>(kmax, m->vocab_size);
    return predict_topk(*m, prefix, k);
  };
}

RankedScorer random_scorer(std::size_t vocab_size, std::uint64_t seed) {
  if (vocab_size == 0) throw Error("eval: random scorer needs a non-empty catalogue");
  auto counter = std::make_shared<std::uint64_t>(0);
  return [vocab_size, seed, counter](const std::vector<TrackId>&, std::size_t kmax) {
    SeededRng rng(derive_seed(seed, "event-" + std::to_string((*counter)++)));
    const std::size_t k = std::min(kmax, vocab_size);
    std::vector<TrackId> pool(vocab_size);
    std::iota(pool.begin(), pool.end(), 0);
    for (std::size_t i = 0; i < k; ++i) {
      const std::size_t j = i + static_cast<std::size_t>(rng.uniform_int(vocab_size - i));
      std::swap(pool[i], pool[j]);
    }
    pool.resize(k);
    return pool;
  };
}

namespace {

std::vector<std::size_t> normalized_ks(std::vector<std::size_t> ks) {
  if (ks.empty()) throw Error("eval: at least one cutoff k is required");
  for (std::size_t k : ks) {
    if (k == 0) throw Error("eval: cutoff k must be positive");
  }
  std::sort(ks.begin(), ks.end());
  ks.erase(std::unique(ks.begin(), ks.end()), ks.end());
  return ks;
}

}  // namespace

std::vector<PredictionEvent> collect_prediction_events(const RankedScorer& scorer,
                                                       const DatasetSplit& split,
                                                       const std::vector<std::size_t>& ks,
                                                       const std::set<std::string>* user_filter) {
  const std::vector<std::size_t> cuts = normalized_ks(ks);
  const std::size_t kmax = cuts.back();
  std::vector<PredictionEvent> events;
  for (const TestPrefix& tp : iterate_test_prefixes(split)) {
    if (user_filter != nullptr && user_filter->count(*tp.user_id) == 0) continue;
    const std::vector<TrackId> prefix(tp.session->tracks.begin(),
                                      tp.session->tracks.begin() +
                                          static_cast<std::ptrdiff_t>(tp.prefix_len));
    const std::vector<TrackId> ranked = scorer(prefix, kmax);
    if (ranked.size() > kmax) throw Error("eval: scorer returned more than kmax candidates");
    PredictionEvent ev;
    ev.user_id = *tp.user_id;
    ev.session_index = tp.session_index;
    ev.prefix_len = tp.prefix_len;
    ev.target = tp.target;
    ev.rank = PredictionEvent::kUnranked;
    for (std::size_t i = 0; i < ranked.size(); ++i) {
      if (ranked[i] == tp.target) {
        ev.rank = i;
        break;
      }
    }
    ev.ks = cuts;
    ev.hits.reserve(cuts.size());
    for (std::size_t k : cuts) ev.hits.push_back(ev.rank < k);
    events.push_back(std::move(ev));
  }
  return events;
}

HitRatioReport evaluate_hit_ratio(const RankedScorer& scorer, const DatasetSplit& split,
                                  const std::vector<std::size_t>& ks, bool macro,
                                  const std::set<std::string>* user_filter,
                                  const std::string& label) {
  const auto events = collect_prediction_events(scorer, split, ks, user_filter);
  if (events.empty()) throw Error("eval: no prediction events for '" + label + "'");

  HitRatioReport report;
  report.label = label;
  report.cohort = "all";
  report.ks = events.front().ks;
  report.macro = macro;
  report.total = static_cast<std::int64_t>(events.size());
  report.hits.assign(report.ks.size(), 0);
  for (const auto& ev : events) {
    for (std::size_t i = 0; i < report.ks.size(); ++i) {
      if (ev.hits[i]) ++report.hits[i];
    }
  }
  if (!macro) {
    for (std::int64_t h : report.hits) {
      report.ratios.push_back(static_cast<double>(h) / static_cast<double>(report.total));
    }
    return report;
  }

  // Macro: mean of per-user micro ratios. Events are grouped by user id in a
  // sorted map so the reduction order is deterministic.
  std::map<std::string, std::pair<std::vector<std::int64_t>, std::int64_t>> per_user;
  for (const auto& ev : events) {
    auto& [hits, total] = per_user[ev.user_id];
    if (hits.empty()) hits.assign(report.ks.size(), 0);
    for (std::size_t i = 0; i < report.ks.size(); ++i) {
      if (ev.hits[i]) ++hits[i];
    }
    ++total;
  }
  report.ratios.assign(report.ks.size(), 0.0);
  for (const auto& [user, acc] : per_user) {
    for (std::size_t i = 0; i < report.ks.size(); ++i) {
      report.ratios[i] +=
          static_cast<double>(acc.first[i]) / static_cast<double>(acc.second);
    }
  }
  for (double& r : report.ratios) r /= static_cast<double>(per_user.size());
  return report;
}

std::vector<std::string> cohort_members(const Cohort& cohort, const UserMetadata& metadata) {
  std::vector<std::pair<int, std::string>> scored;
  for (const auto& [user, score] : metadata) {
    if (score >= cohort.k10_min && score <= cohort.k10_max) scored.emplace_back(score, user);
  }
  std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;  // descending score
    return a.second < b.second;                        // ascending user id
  });
  if (cohort.top_n.has_value() && scored.size() > *cohort.top_n) scored.resize(*cohort.top_n);
  std::vector<std::string> members;
  members.reserve(scored.size());
  for (auto& [score, user] : scored) members.push_back(std::move(user));
  return members;
}

std::vector<HitRatioReport> cohort_evaluate(
    const std::vector<std::pair<Cohort, RankedScorer>>& cohorts, const UserMetadata& metadata,
    const DatasetSplit& split, const std::vector<std::size_t>& ks, bool macro) {
  if (cohorts.empty()) throw Error("eval: no cohorts to evaluate");
  std::vector<HitRatioReport> reports;
  for (const auto& [cohort, scorer] : cohorts) {
    const auto members = cohort_members(cohort, metadata);
    if (members.empty()) throw Error("eval: cohort '" + cohort.label + "' has no members");
    const std::set<std::string> user_set(members.begin(), members.end());
    HitRatioReport report = evaluate_hit_ratio(scorer, split, ks, macro, &user_set, cohort.label);
    report.cohort = cohort.label;
    report.label = "model";
    reports.push_back(std::move(report));
  }
  return reports;
}

std::vector<HitRatioReport> cohort_evaluate(const RankedScorer& scorer,
                                            const std::vector<Cohort>& cohorts,
                                            const UserMetadata& metadata,
                                            const DatasetSplit& split,
                                            const std::vector<std::size_t>& ks, bool macro) {
  std::vector<std::pair<Cohort, RankedScorer>> pairs;
  pairs.reserve(cohorts.size());
  for (const auto& c : cohorts) pairs.emplace_back(c, scorer);
  return cohort_evaluate(pairs, metadata, split, ks, macro);
}

namespace {

std::string row_header(const HitRatioReport& r) {
  if (r.cohort.empty() || r.cohort == "all") return r.label;
  return r.label + " [" + r.cohort + "]";
}

std::string percent(double ratio) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", ratio * 100.0);
  return buf;
}

}  // namespace

std::string render_report_table(const std::vector<HitRatioReport>& reports) {
  if (reports.empty()) throw Error("eval: nothing to render");
  const auto& ks = reports.front().ks;
  for (const auto& r : reports) {
    if (r.ks != ks) throw Error("eval: reports disagree on cutoffs; cannot tabulate");
  }
  std::size_t header_width = std::string("Method").size();
  for (const auto& r : reports) header_width = std::max(header_width, row_header(r).size());

  std::string out = "Method";
  out.append(header_width - 6, ' ');
  for (std::size_t k : ks) {
    std::string col = "k=" + std::to_string(k);
    out += "  ";
    out.append(col.size() < 8 ? 8 - col.size() : 0, ' ');
    out += col;
  }
  out += '\n';
  for (const auto& r : reports) {
    std::string head = row_header(r);
    out += head;
    out.append(header_width - head.size(), ' ');
    for (std::size_t i = 0; i < ks.size(); ++i) {
      std::string cell = percent(r.ratios[i]);
      out += "  ";
      out.append(cell.size() < 8 ? 8 - cell.size() : 0, ' ');
      out += cell;
    }
    out += '\n';
  }
  return out;
}

std::string render_report_jsonl(const std::vector<HitRatioReport>& reports) {
  std::string out;
  for (const auto& r : reports) {
    for (std::size_t i = 0; i < r.ks.size(); ++i) {
      nlohmann::ordered_json rec;
      rec["label"] = r.label;
      rec["cohort"] = r.cohort.empty() ? "all" : r.cohort;
      rec["k"] = r.ks[i];
      rec["hits"] = r.hits[i];
      rec["total"] = r.total;
      rec["ratio"] = r.ratios[i];
      out += rec.dump();
      out += '\n';
    }
  }
  return out;
}

std::vector<HitRatioReport> parse_report_jsonl(std::istream& in) {
  std::vector<HitRatioReport> reports;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const std::string where = "report: line " + std::to_string(line_no) + ": ";
    nlohmann::json rec;
    try {
      rec = nlohmann::json::parse(line);
    } catch (const std::exception& e) {
      throw Error(where + e.what());
    }
    try {
      const auto label = rec.at("label").get<std::string>();
      const auto cohort = rec.at("cohort").get<std::string>();
      const auto k = rec.at("k").get<std::size_t>();
      const auto hits = rec.at("hits").get<std::int64_t>();
      const auto total = rec.at("total").get<std::int64_t>();
      const auto ratio = rec.at("ratio").get<double>();
      if (reports.empty() || reports.back().label != label || reports.back().cohort != cohort) {
        HitRatioReport r;
        r.label = label;
        r.cohort = cohort;
        r.total = total;
        reports.push_back(std::move(r));
      }
      HitRatioReport& r = reports.back();
      if (total != r.total) throw Error(where + "event total changes inside one report group");
      r.ks.push_back(k);
      r.hits.push_back(hits);
      r.ratios.push_back(ratio);
    } catch (const Error&) {
      throw;
    } catch (const std::exception& e) {
      throw Error(where + e.what());
    }
  }
  return reports;
}

}  // namespace muserec
