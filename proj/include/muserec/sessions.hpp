#ifndef MUSEREC_SESSIONS_HPP
#define MUSEREC_SESSIONS_HPP

#include <cstdint>
#include <iosfwd>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "muserec/tensor.hpp"

namespace muserec {

using TrackId = std::int32_t;

constexpr std::int64_t kSessionGapSeconds = 7200;  // >= 2 h of inactivity ends a session
constexpr std::size_t kMinSessionLength = 5;
constexpr char kTrackKeySeparator = '\x1f';  // joins artist and title

/// One play: who listened to what, when (UTC seconds).
struct ListeningEvent {
  std::string user_id;
  std::string track_key;
  std::int64_t timestamp = 0;
};

/// Lowercases (ASCII), trims, collapses internal whitespace runs.
std::string canonicalize(std::string_view text);
/// canonicalize(artist) + separator + canonicalize(title); title may be empty
/// for single-key inputs, in which case the artist field alone is the key.
std::string make_track_key(std::string_view artist, std::string_view title);

/// "YYYY-MM-DDTHH:MM:SS[.frac][Z]" -> UTC seconds. Throws Error on malformed
/// input or a non-positive result.
std::int64_t parse_iso8601_utc(std::string_view text);
std::string format_iso8601_utc(std::int64_t seconds);

struct ParseDiagnostics {
  std::size_t skipped_records = 0;
  std::vector<std::string> messages;  // one per skipped record, with line number
};

/// Reads tab-separated event records: user_id, artist, title, timestamp
/// (title empty for single-key ids). An optional header is detected by the
/// literal `user_id` in the first field. Output is sorted by
/// (user_id, timestamp) with exact duplicates dropped. In strict mode any
/// malformed record throws; in lenient mode it is skipped and counted.
std::vector<ListeningEvent> parse_events(std::istream& in, bool strict,
                                         ParseDiagnostics* diags = nullptr);
std::vector<ListeningEvent> parse_events_file(const std::string& path, bool strict,
                                              ParseDiagnostics* diags = nullptr);

/// track_key <-> dense index bijection over the complete dataset, indices
/// assigned in first-seen order over the sorted event stream.
class Vocabulary {
 public:
  static Vocabulary build(const std::vector<ListeningEvent>& events);

  TrackId index_of(const std::string& key) const;  // -1 when unknown
  const std::string& key_of(TrackId id) const { return keys_.at(id); }
  std::size_t size() const { return keys_.size(); }

  /// FNV-1a over all keys in index order; guards artifacts against
  /// vocabulary drift.
  std::string hash_hex() const;

  TrackId add(const std::string& key);  // used by loaders/tests

  const std::vector<std::string>& keys() const { return keys_; }

 private:
  std::unordered_map<std::string, TrackId> index_;
  std::vector<std::string> keys_;
};

struct Session {
  std::string user_id;
  std::vector<TrackId> tracks;  // timestamp order, repeats retained
  std::int64_t start_ts = 0;
  std::int64_t end_ts = 0;

  std::size_t length() const { return tracks.size(); }
};

/// Splits each user's event run on inactivity gaps >= kSessionGapSeconds and
/// keeps groups of at least kMinSessionLength tracks. `events` must be the
/// sorted output of parse_events.
std::vector<Session> extract_sessions(const std::vector<ListeningEvent>& events,
                                      const Vocabulary& vocab);

struct DatasetSplit {
  // per user, ordered by session start; train = earliest floor(0.7 n)
  std::map<std::string, std::vector<Session>> train;
  std::map<std::string, std::vector<Session>> test;

  std::vector<const Session*> all_train() const;
  std::vector<const Session*> all_test() const;
};

DatasetSplit split_train_test(const std::vector<Session>& sessions);

struct DatasetStats {
  std::size_t users = 0;
  std::size_t sessions = 0;
  std::size_t unique_tracks = 0;  // distinct tracks inside kept sessions
  std::size_t events = 0;         // plays inside kept sessions
  double mean_session_length = 0.0;
};

DatasetStats compute_stats(const std::vector<Session>& sessions);
std::string render_stats_table(const DatasetStats& stats);

/// True for every track index that occurs in at least one training session.
std::vector<bool> tracks_seen_in_training(const DatasetSplit& split, std::size_t vocab_size);

}  // namespace muserec

#endif
