#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace gjscc {

struct TrialPair {
  std::string pair_id;
  /// Paths relative to the manifest directory.
  std::string patch_a;
  std::string patch_b;
  std::string method_a;
  std::string method_b;
  std::string source_patch_id;
  /// Optional original patch, shown only when the study is configured to.
  std::string reference;
};

void to_json(nlohmann::json& j, const TrialPair& p);
void from_json(const nlohmann::json& j, TrialPair& p);

struct PairManifest {
  std::vector<TrialPair> pairs;
  std::uint64_t seed = 0;
  std::int64_t crop = 256;

  void save(const std::filesystem::path& path) const;
  static PairManifest load(const std::filesystem::path& path);
};

struct PairOptions {
  std::size_t n = 46;
  std::int64_t crop = 256;
  std::uint64_t seed = 0;
  std::string method_a = "a";
  std::string method_b = "b";
  /// Directory of originals with the same file names; empty to skip.
  std::filesystem::path reference_dir;
};

/// Tiles every file present in both directories into crop x crop patches,
/// samples n of them without replacement, writes <out>/a/, <out>/b/ (and
/// <out>/ref/) plus <out>/pairs.json. Throws ConfigError for n == 0 and when
/// fewer than n matched patches exist.
PairManifest generate_pairs(const std::filesystem::path& dir_a, const std::filesystem::path& dir_b,
                            const std::filesystem::path& out_dir, const PairOptions& options = {});

enum class Side { Left, Right };
std::string to_string(Side side);
Side side_from_string(const std::string& text);

struct Response {
  Side side = Side::Left;
  std::string method;
  std::int64_t seq = 0;
  std::string timestamp;
};

struct StudySession {
  std::string session_id;
  std::string participant;
  /// Pair ids in presentation order.
  std::vector<std::string> order;
  /// pair_id -> true when method_a is shown on the left.
  std::map<std::string, bool> a_on_left;
  std::map<std::string, Response> responses;

  std::size_t answered() const { return responses.size(); }
  bool complete() const { return responses.size() == order.size(); }
  /// Index of the first unanswered trial (== order.size() when complete).
  std::size_t next_index() const;
};

void to_json(nlohmann::json& j, const StudySession& s);
void from_json(const nlohmann::json& j, StudySession& s);

struct PairTally {
  std::map<std::string, std::int64_t> votes;
  std::map<std::string, double> percent;
};

struct StudyReport {
  std::vector<std::string> methods;
  /// Mean over participants of each participant's preference percentage.
  std::map<std::string, double> preference;
  /// Percentage over all responses pooled together.
  std::map<std::string, double> pooled;
  std::map<std::string, PairTally> pairs;
  std::int64_t participants = 0;
  std::int64_t responses = 0;

  nlohmann::json to_json() const;
};

/// Throws EmptyReportError when no session holds a response.
StudyReport aggregate(const std::vector<StudySession>& sessions, const std::vector<TrialPair>& pairs);

struct StoreOptions {
  /// Snapshot after this many log records; 0 disables snapshots.
  std::int64_t snapshot_every = 64;
  std::uint64_t seed = 0;
  bool show_reference = false;
};

/// Persistent study state: <dir>/pairs.json (copy of the manifest),
/// <dir>/log.jsonl (append-only, fsynced) and <dir>/snapshot.json. On open the
/// snapshot is loaded and later log records are replayed.
class StudyStore {
 public:
  /// Opens an existing store; `manifest` is required only the first time.
  StudyStore(const std::filesystem::path& dir, const std::optional<std::filesystem::path>& manifest,
             StoreOptions options = {});
  ~StudyStore();
  StudyStore(const StudyStore&) = delete;
  StudyStore& operator=(const StudyStore&) = delete;

  /// Idempotent per participant token.
  StudySession create_session(const std::string& participant);
  StudySession session(const std::string& session_id) const;
  /// Throws NotFoundError for an unknown session or pair and ConflictError
  /// when the pair was already answered.
  StudySession record_response(const std::string& session_id, const std::string& pair_id, Side side);

  StudyReport report() const;
  std::vector<StudySession> sessions() const;
  const std::vector<TrialPair>& pairs() const { return pairs_; }
  const TrialPair& pair(const std::string& pair_id) const;
  const std::filesystem::path& patch_root() const { return patch_root_; }
  const StoreOptions& options() const { return options_; }

  void snapshot();

 private:
  void append(nlohmann::json record);
  void apply(const nlohmann::json& record);

  std::filesystem::path dir_;
  std::filesystem::path patch_root_;
  StoreOptions options_;
  std::vector<TrialPair> pairs_;
  std::map<std::string, std::size_t> pair_index_;
  std::map<std::string, StudySession> sessions_;
  std::map<std::string, std::string> by_participant_;
  std::int64_t seq_ = 0;
  std::int64_t since_snapshot_ = 0;
  int log_fd_ = -1;
  mutable std::mutex mutex_;
};

struct ServerOptions {
  std::string host = "127.0.0.1";
  int port = 8080;
  std::string admin_token;
};

/// HTTP JSON API over a StudyStore:
///   POST /sessions                     {"participant"} -> session + trial manifest
///   GET  /sessions/{id}                session state (for resuming)
///   GET  /trials/{session}/{index}     pair metadata + image URLs
///   GET  /images/{session}/{index}/{left|right|reference}.png
///   POST /responses                    {"session_id","pair_id","side"}; 409 on repeat
///   GET  /report                       admin token via "Authorization: Bearer" or ?token=
class StudyServer {
 public:
  StudyServer(StudyStore& store, ServerOptions options);
  ~StudyServer();

  /// Binds the socket; returns the bound port (useful with port 0).
  int bind();
  /// Serves until stop() is called.
  void serve();
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace gjscc
