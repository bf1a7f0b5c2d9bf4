#include "muserec/sessions.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

namespace muserec {

std::string canonicalize(std::string_view text) {
  std::string out;
  out.reserve(text.size());
  bool pending_space = false;
  for (char c : text) {
    const unsigned char uc = static_cast<unsigned char>(c);
    if (uc < 0x80 && std::isspace(uc)) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) {
      out.push_back(' ');
      pending_space = false;
    }
    out.push_back(uc < 0x80 ? static_cast<char>(std::tolower(uc)) : c);
  }
  return out;
}

std::string make_track_key(std::string_view artist, std::string_view title) {
  std::string a = canonicalize(artist);
  std::string t = canonicalize(title);
  if (t.empty()) return a;  // single-key form: explicit track id
  return a + kTrackKeySeparator + t;
}

namespace {

// Howard Hinnant's civil-date algorithms.
std::int64_t days_from_civil(int y, unsigned m, unsigned d) {
  y -= m <= 2;
  const int era = (y >= 0 ? y : y - 399) / 400;
  const unsigned yoe = static_cast<unsigned>(y - era * 400);
  const unsigned doy = (153 * (m + (m > 2 ? -3 : 9)) + 2) / 5 + d - 1;
  const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
  return era * 146097LL + static_cast<std::int64_t>(doe) - 719468;
}

void civil_from_days(std::int64_t z, int& y, unsigned& m, unsigned& d) {
  z += 719468;
  const std::int64_t era = (z >= 0 ? z : z - 146096) / 146097;
  const unsigned doe = static_cast<unsigned>(z - era * 146097);
  const unsigned yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
  y = static_cast<int>(yoe) + static_cast<int>(era) * 400;
  const unsigned doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
  const unsigned mp = (5 * doy + 2) / 153;
  d = doy - (153 * mp + 2) / 5 + 1;
  m = mp + (mp < 10 ? 3 : -9);
  y += m <= 2;
}

bool parse_fixed_uint(std::string_view s, std::size_t pos, std::size_t len, unsigned& out) {
  if (pos + len > s.size()) return false;
  unsigned v = 0;
  for (std::size_t i = 0; i < len; ++i) {
    const char c = s[pos + i];
    if (c < '0' || c > '9') return false;
    v = v * 10 + static_cast<unsigned>(c - '0');
  }
  out = v;
  return true;
}

unsigned days_in_month(int y, unsigned m) {
  static const unsigned lengths[] = {31, 28, 31, 30, 31, 30, 31, 31, 30, 31, 30, 31};
  if (m == 2) {
    const bool leap = (y % 4 == 0 && y % 100 != 0) || y % 400 == 0;
    return leap ? 29 : 28;
  }
  return lengths[m - 1];
}

}  // namespace

std::int64_t parse_iso8601_utc(std::string_view text) {
  // YYYY-MM-DDTHH:MM:SS with optional fractional seconds and optional 'Z'
  unsigned yy, mm, dd, hh, mi, ss;
  const bool shape_ok =
      text.size() >= 19 && parse_fixed_uint(text, 0, 4, yy) && text[4] == '-' &&
      parse_fixed_uint(text, 5, 2, mm) && text[7] == '-' && parse_fixed_uint(text, 8, 2, dd) &&
      (text[10] == 'T' || text[10] == 't' || text[10] == ' ') &&
      parse_fixed_uint(text, 11, 2, hh) && text[13] == ':' && parse_fixed_uint(text, 14, 2, mi) &&
      text[16] == ':' && parse_fixed_uint(text, 17, 2, ss);
  if (!shape_ok) throw Error("timestamp: malformed ISO-8601 value '" + std::string(text) + "'");
  std::size_t pos = 19;
  if (pos < text.size() && text[pos] == '.') {
    ++pos;
    const std::size_t start = pos;
    while (pos < text.size() && text[pos] >= '0' && text[pos] <= '9') ++pos;
    if (pos == start) throw Error("timestamp: malformed fractional seconds");
  }
  if (pos < text.size() && (text[pos] == 'Z' || text[pos] == 'z')) ++pos;
  if (pos != text.size())
    throw Error("timestamp: trailing characters in '" + std::string(text) + "'");
  const int y = static_cast<int>(yy);
  if (mm < 1 || mm > 12 || dd < 1 || dd > days_in_month(y, mm) || hh > 23 || mi > 59 || ss > 59)
    throw Error("timestamp: field out of range in '" + std::string(text) + "'");
  const std::int64_t secs =
      days_from_civil(y, mm, dd) * 86400 + hh * 3600 + mi * 60 + ss;
  if (secs <= 0) throw Error("timestamp: non-positive epoch value");
  return secs;
}

std::string format_iso8601_utc(std::int64_t seconds) {
  std::int64_t days = seconds / 86400;
  std::int64_t rem = seconds % 86400;
  if (rem < 0) {
    rem += 86400;
    --days;
  }
  int y;
  unsigned m, d;
  civil_from_days(days, y, m, d);
  char buf[32];
  std::snprintf(buf, sizeof buf, "%04d-%02u-%02uT%02lld:%02lld:%02lldZ", y, m, d,
                static_cast<long long>(rem / 3600), static_cast<long long>((rem / 60) % 60),
                static_cast<long long>(rem % 60));
  return buf;
}

namespace {

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> fields;
  std::size_t start = 0;
  while (true) {
    const std::size_t tab = line.find('\t', start);
    if (tab == std::string::npos) {
      fields.push_back(line.substr(start));
      break;
    }
    fields.push_back(line.substr(start, tab - start));
    start = tab + 1;
  }
  return fields;
}

}  // namespace

std::vector<ListeningEvent> parse_events(std::istream& in, bool strict,
                                         ParseDiagnostics* diags) {
  std::vector<ListeningEvent> events;
  std::string line;
  std::size_t line_no = 0;
  auto record_error = [&](const std::string& msg) {
    std::ostringstream os;
    os << "events: line " << line_no << ": " << msg;
    if (strict) throw Error(os.str());
    if (diags) {
      ++diags->skipped_records;
      diags->messages.push_back(os.str());
    }
  };
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto fields = split_tabs(line);
    if (line_no == 1 && !fields.empty() && fields[0] == "user_id") continue;  // header
    if (fields.size() != 4) {
      record_error("expected 4 tab-separated fields, got " + std::to_string(fields.size()));
      continue;
    }
    ListeningEvent ev;
    ev.user_id = canonicalize(fields[0]);
    ev.track_key = make_track_key(fields[1], fields[2]);
    if (ev.user_id.empty()) {
      record_error("empty user id");
      continue;
    }
    if (ev.track_key.empty()) {
      record_error("empty track field");
      continue;
    }
    try {
      ev.timestamp = parse_iso8601_utc(fields[3]);
    } catch (const Error& e) {
      record_error(e.what());
      continue;
    }
    events.push_back(std::move(ev));
  }
  std::stable_sort(events.begin(), events.end(),
                   [](const ListeningEvent& a, const ListeningEvent& b) {
                     if (a.user_id != b.user_id) return a.user_id < b.user_id;
                     if (a.timestamp != b.timestamp) return a.timestamp < b.timestamp;
                     return a.track_key < b.track_key;
                   });
  events.erase(std::unique(events.begin(), events.end(),
                           [](const ListeningEvent& a, const ListeningEvent& b) {
                             return a.user_id == b.user_id && a.timestamp == b.timestamp &&
                                    a.track_key == b.track_key;
                           }),
               events.end());
  return events;
}

std::vector<ListeningEvent> parse_events_file(const std::string& path, bool strict,
                                              ParseDiagnostics* diags) {
  std::ifstream in(path);
  if (!in) throw Error("events: cannot open " + path);
  return parse_events(in, strict, diags);
}

Vocabulary Vocabulary::build(const std::vector<ListeningEvent>& events) {
  Vocabulary v;
  for (const auto& ev : events) v.add(ev.track_key);
  return v;
}

TrackId Vocabulary::index_of(const std::string& key) const {
  auto it = index_.find(key);
  return it == index_.end() ? TrackId{-1} : it->second;
}

TrackId Vocabulary::add(const std::string& key) {
  auto it = index_.find(key);
  if (it != index_.end()) return it->second;
  const TrackId id = static_cast<TrackId>(keys_.size());
  index_.emplace(key, id);
  keys_.push_back(key);
  return id;
}

std::string Vocabulary::hash_hex() const {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (const auto& key : keys_) {
    for (char c : key) {
      h ^= static_cast<unsigned char>(c);
      h *= 0x100000001b3ull;
    }
    h ^= 0x1f;  // key terminator so concatenations cannot collide
    h *= 0x100000001b3ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::vector<Session> extract_sessions(const std::vector<ListeningEvent>& events,
                                      const Vocabulary& vocab) {
  std::vector<Session> out;
  Session cur;
  std::int64_t last_ts = 0;
  auto flush = [&]() {
    if (cur.length() >= kMinSessionLength) out.push_back(cur);
    cur.tracks.clear();
  };
  for (const auto& ev : events) {
    const bool breaks = cur.tracks.empty() || ev.user_id != cur.user_id ||
                        ev.timestamp - last_ts >= kSessionGapSeconds;
    if (breaks && !cur.tracks.empty()) flush();
    if (cur.tracks.empty()) {
      cur.user_id = ev.user_id;
      cur.start_ts = ev.timestamp;
    }
    const TrackId id = vocab.index_of(ev.track_key);
    if (id < 0) throw Error("sessions: track missing from vocabulary: " + ev.track_key);
    cur.tracks.push_back(id);
    cur.end_ts = ev.timestamp;
    last_ts = ev.timestamp;
  }
  if (!cur.tracks.empty()) flush();
  return out;
}

DatasetSplit split_train_test(const std::vector<Session>& sessions) {
  std::map<std::string, std::vector<Session>> per_user;
  for (const auto& s : sessions) per_user[s.user_id].push_back(s);
  DatasetSplit split;
  for (auto& [user, list] : per_user) {
    std::stable_sort(list.begin(), list.end(), [](const Session& a, const Session& b) {
      if (a.start_ts != b.start_ts) return a.start_ts < b.start_ts;
      return a.tracks.front() < b.tracks.front();
    });
    const std::size_t n = list.size();
    const std::size_t n_train = static_cast<std::size_t>(std::floor(0.7 * static_cast<double>(n)));
    // a lone session still trains; such users are simply absent from test
    const std::size_t cut = (n < 2) ? n : n_train;
    split.train[user].assign(list.begin(), list.begin() + cut);
    if (cut < n) split.test[user].assign(list.begin() + cut, list.end());
  }
  return split;
}

std::vector<const Session*> DatasetSplit::all_train() const {
  std::vector<const Session*> out;
  for (const auto& [user, list] : train)
    for (const auto& s : list) out.push_back(&s);
  return out;
}

std::vector<const Session*> DatasetSplit::all_test() const {
  std::vector<const Session*> out;
  for (const auto& [user, list] : test)
    for (const auto& s : list) out.push_back(&s);
  return out;
}

DatasetStats compute_stats(const std::vector<Session>& sessions) {
  DatasetStats st;
  std::set<std::string> users;
  std::set<TrackId> tracks;
  for (const auto& s : sessions) {
    users.insert(s.user_id);
    for (TrackId t : s.tracks) tracks.insert(t);
    st.events += s.length();
  }
  st.users = users.size();
  st.sessions = sessions.size();
  st.unique_tracks = tracks.size();
  st.mean_session_length =
      st.sessions == 0 ? 0.0 : static_cast<double>(st.events) / static_cast<double>(st.sessions);
  return st;
}

std::string render_stats_table(const DatasetStats& stats) {
  char buf[64];
  std::ostringstream os;
  os << "Number of Users            " << stats.users << "\n";
  os << "Number of Sessions         " << stats.sessions << "\n";
  os << "Unique Songs               " << stats.unique_tracks << "\n";
  os << "Total Listening Events     " << stats.events << "\n";
  std::snprintf(buf, sizeof buf, "%.2f", stats.mean_session_length);
  os << "Average Length of Session  " << buf << "\n";
  return os.str();
}

std::vector<bool> tracks_seen_in_training(const DatasetSplit& split, std::size_t vocab_size) {
  std::vector<bool> seen(vocab_size, false);
  for (const auto& [user, list] : split.train)
    for (const auto& s : list)
      for (TrackId t : s.tracks) seen[static_cast<std::size_t>(t)] = true;
  return seen;
}

}  // namespace muserec
