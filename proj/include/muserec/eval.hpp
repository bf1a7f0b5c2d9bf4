#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "muserec/fusion.hpp"
#include "muserec/sessions.hpp"

namespace muserec {

// One (prefix, next-track) evaluation event drawn from a test session.
struct TestPrefix {
  const std::string* user_id = nullptr;
  const Session* session = nullptr;
  std::size_t session_index = 0;  // index of the session within its user's test list
  std::size_t prefix_len = 0;
  TrackId target = -1;
};

// Every test session of length L yields prefixes t = 1..L-1 with the
// following track as target. Users are visited in sorted order, sessions in
// stored (chronological) order, so the stream is deterministic.
std::vector<TestPrefix> iterate_test_prefixes(const DatasetSplit& split);

struct PredictionEvent {
  std::string user_id;
  std::size_t session_index = 0;
  std::size_t prefix_len = 0;
  TrackId target = -1;
  std::size_t rank = kUnranked;  // 0-based position of the target in the ranked list
  std::vector<std::size_t> ks;
  std::vector<bool> hits;  // hits[i] == (rank < ks[i]); monotone in k

  static constexpr std::size_t kUnranked = static_cast<std::size_t>(-1);
};

// Produces a ranked candidate list for a prefix: best guess first, at most
// `kmax` entries (fewer when the catalogue is smaller).
using RankedScorer =
    std::function<std::vector<TrackId>(const std::vector<TrackId>& prefix, std::size_t kmax)>;

// Ranks with the trained model (predict_topk, evaluation mode).
RankedScorer model_scorer(const FusionModel& model);

// Ranks by a fresh uniform random permutation per event; the top-k set is a
// uniform k-subset, so hit probability is exactly k / vocab_size.
RankedScorer random_scorer(std::size_t vocab_size, std::uint64_t seed);

std::vector<PredictionEvent> collect_prediction_events(
    const RankedScorer& scorer, const DatasetSplit& split, const std::vector<std::size_t>& ks,
    const std::set<std::string>* user_filter = nullptr);

struct HitRatioReport {
  std::string label;        // method/variant name
  std::string cohort;       // cohort label; "all" when not cohort-scoped
  std::vector<std::size_t> ks;
  std::vector<std::int64_t> hits;  // micro hit counts per k
  std::int64_t total = 0;          // number of prediction events
  std::vector<double> ratios;      // micro: hits/total; macro: mean per-user ratio
  bool macro = false;
};

inline const std::vector<std::size_t>& default_ks() {
  static const std::vector<std::size_t> ks = {10, 20, 30, 40, 50};
  return ks;
}

// Micro-averages over all prediction events by default; `macro` averages
// per-user ratios instead. Zero events is an error.
HitRatioReport evaluate_hit_ratio(const RankedScorer& scorer, const DatasetSplit& split,
                                  const std::vector<std::size_t>& ks = default_ks(),
                                  bool macro = false,
                                  const std::set<std::string>* user_filter = nullptr,
                                  const std::string& label = "model");

// User metadata: user id -> questionnaire score in [10, 50].
using UserMetadata = std::map<std::string, int>;

struct Cohort {
  std::string label;
  int k10_min = 10;  // inclusive
  int k10_max = 50;  // inclusive
  // Keep only the top N members ordered by descending score (ties broken by
  // ascending user id) — used to equalise cohort sizes.
  std::optional<std::size_t> top_n;
};

// Members matching the score window, after optional top-N truncation.
std::vector<std::string> cohort_members(const Cohort& cohort, const UserMetadata& metadata);

// One scorer per cohort (cohort-specific models). An empty cohort or a cohort
// with no test events is an error naming the cohort.
std::vector<HitRatioReport> cohort_evaluate(
    const std::vector<std::pair<Cohort, RankedScorer>>& cohorts, const UserMetadata& metadata,
    const DatasetSplit& split, const std::vector<std::size_t>& ks = default_ks(),
    bool macro = false);

// Shared-model convenience overload.
std::vector<HitRatioReport> cohort_evaluate(const RankedScorer& scorer,
                                            const std::vector<Cohort>& cohorts,
                                            const UserMetadata& metadata,
                                            const DatasetSplit& split,
                                            const std::vector<std::size_t>& ks = default_ks(),
                                            bool macro = false);

// Text table: one row per report, columns k ascending, ratios x100 with two
// decimals ("33.17").
std::string render_report_table(const std::vector<HitRatioReport>& reports);

// One JSON record per (label, cohort, k): {label, cohort, k, hits, total, ratio}.
std::string render_report_jsonl(const std::vector<HitRatioReport>& reports);

// Inverse of render_report_jsonl: consecutive records sharing (label, cohort)
// regroup into one report. Blank lines are skipped; malformed records or a
// total that changes mid-group throw with the line number.
std::vector<HitRatioReport> parse_report_jsonl(std::istream& in);

}  // namespace muserec
