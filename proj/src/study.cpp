#include "gjscc/study.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <ctime>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

#include <httplib.h>

#include "gjscc/archive.hpp"
#include "gjscc/data.hpp"
#include "gjscc/error.hpp"
#include "gjscc/hash.hpp"
#include "gjscc/log.hpp"

namespace gjscc {

namespace fs = std::filesystem;
using nlohmann::json;

void to_json(json& j, const TrialPair& p) {
  j = json{{"pair_id", p.pair_id},   {"patch_a", p.patch_a},   {"patch_b", p.patch_b},
           {"method_a", p.method_a}, {"method_b", p.method_b}, {"source_patch_id", p.source_patch_id}};
  if (!p.reference.empty()) j["reference"] = p.reference;
}

void from_json(const json& j, TrialPair& p) {
  j.at("pair_id").get_to(p.pair_id);
  j.at("patch_a").get_to(p.patch_a);
  j.at("patch_b").get_to(p.patch_b);
  j.at("method_a").get_to(p.method_a);
  j.at("method_b").get_to(p.method_b);
  j.at("source_patch_id").get_to(p.source_patch_id);
  p.reference = j.value("reference", std::string());
}

void PairManifest::save(const fs::path& path) const {
  json j{{"seed", seed}, {"crop", crop}, {"pairs", pairs}};
  write_file_atomic(path, j.dump(2) + "\n");
}

PairManifest PairManifest::load(const fs::path& path) {
  PairManifest m;
  try {
    const auto j = json::parse(read_file(path));
    m.seed = j.value("seed", std::uint64_t{0});
    m.crop = j.value("crop", std::int64_t{256});
    m.pairs = j.at("pairs").get<std::vector<TrialPair>>();
  } catch (const json::exception& e) {
    throw IngestError("cannot parse pair manifest " + path.string() + ": " + e.what());
  }
  return m;
}

namespace {

std::map<std::string, fs::path> by_relative_name(const fs::path& root) {
  std::map<std::string, fs::path> out;
  for (const auto& p : list_images(DatasetSpec{root})) out[fs::relative(p, root).generic_string()] = p;
  return out;
}

std::string stem_of(const std::string& rel) {
  auto p = fs::path(rel);
  return (p.parent_path() / p.stem()).generic_string();
}

struct PatchRef {
  std::string name;
  std::int64_t index;
  std::int64_t row;
  std::int64_t col;
};

}  // namespace

PairManifest generate_pairs(const fs::path& dir_a, const fs::path& dir_b, const fs::path& out_dir,
                            const PairOptions& options) {
  if (options.n == 0) throw ConfigError("generate_pairs: n = 0 would produce an empty study");
  if (options.crop < 1) throw ConfigError("generate_pairs: crop must be positive");
  const auto files_a = by_relative_name(dir_a);
  const auto files_b = by_relative_name(dir_b);

  std::vector<PatchRef> patches;
  std::map<std::string, std::pair<torch::Tensor, torch::Tensor>> decoded;
  std::size_t unmatched = 0;
  for (const auto& [name, path_a] : files_a) {
    auto it = files_b.find(name);
    if (it == files_b.end()) {
      ++unmatched;
      continue;
    }
    auto a = load_image(path_a);
    auto b = load_image(it->second);
    if (a.sizes() != b.sizes()) {
      log::warn("generate_pairs: ", name, " differs in size between the two sets; skipped");
      continue;
    }
    const auto cols = a.size(2) / options.crop;
    const auto count = count_patches(a.size(1), a.size(2), options.crop);
    for (std::int64_t i = 0; i < count; ++i) patches.push_back({name, i, i / cols, i % cols});
    decoded.emplace(name, std::make_pair(a, b));
  }
  if (unmatched > 0) log::warn("generate_pairs: ", unmatched, " file(s) of set A have no match in set B");
  if (patches.size() < options.n) {
    throw ConfigError("generate_pairs: need " + std::to_string(options.n) + " matched " +
                      std::to_string(options.crop) + "px patches but found only " +
                      std::to_string(patches.size()) + " (short by " +
                      std::to_string(options.n - patches.size()) + ")");
  }

  std::mt19937_64 rng(options.seed);
  std::vector<std::size_t> idx(patches.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  // Partial Fisher-Yates with explicit draws keeps the selection stable across standard libraries.
  for (std::size_t i = 0; i < options.n; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng() % (idx.size() - i));
    std::swap(idx[i], idx[j]);
  }

  fs::create_directories(out_dir / "a");
  fs::create_directories(out_dir / "b");
  if (!options.reference_dir.empty()) fs::create_directories(out_dir / "ref");
  PairManifest manifest;
  manifest.seed = options.seed;
  manifest.crop = options.crop;
  for (std::size_t i = 0; i < options.n; ++i) {
    const auto& ref = patches[idx[i]];
    char id[32];
    std::snprintf(id, sizeof(id), "p%03zu", i);
    TrialPair pair;
    pair.pair_id = id;
    pair.method_a = options.method_a;
    pair.method_b = options.method_b;
    pair.source_patch_id = stem_of(ref.name) + "#r" + std::to_string(ref.row) + "c" + std::to_string(ref.col);
    pair.patch_a = "a/" + pair.pair_id + ".png";
    pair.patch_b = "b/" + pair.pair_id + ".png";
    const auto& [a, b] = decoded.at(ref.name);
    save_image(tile_patches(a, options.crop).at(ref.index), out_dir / pair.patch_a);
    save_image(tile_patches(b, options.crop).at(ref.index), out_dir / pair.patch_b);
    if (!options.reference_dir.empty()) {
      auto original = load_image(options.reference_dir / ref.name);
      auto tiles = tile_patches(original, options.crop);
      if (static_cast<std::int64_t>(tiles.size()) <= ref.index) {
        throw ConfigError("reference for " + ref.name + " is smaller than the reconstructions");
      }
      pair.reference = "ref/" + pair.pair_id + ".png";
      save_image(tiles[ref.index], out_dir / pair.reference);
    }
    manifest.pairs.push_back(pair);
  }
  manifest.save(out_dir / "pairs.json");
  return manifest;
}

std::string to_string(Side side) { return side == Side::Left ? "left" : "right"; }

Side side_from_string(const std::string& text) {
  if (text == "left") return Side::Left;
  if (text == "right") return Side::Right;
  throw ConfigError("side must be 'left' or 'right', got '" + text + "'");
}

std::size_t StudySession::next_index() const {
  for (std::size_t i = 0; i < order.size(); ++i) {
    if (!responses.count(order[i])) return i;
  }
  return order.size();
}

void to_json(json& j, const StudySession& s) {
  json responses = json::object();
  for (const auto& [pair, r] : s.responses) {
    responses[pair] = {{"side", to_string(r.side)}, {"method", r.method}, {"seq", r.seq}, {"timestamp", r.timestamp}};
  }
  j = json{{"session_id", s.session_id}, {"participant", s.participant}, {"order", s.order},
           {"a_on_left", s.a_on_left},   {"responses", responses}};
}

void from_json(const json& j, StudySession& s) {
  j.at("session_id").get_to(s.session_id);
  j.at("participant").get_to(s.participant);
  j.at("order").get_to(s.order);
  j.at("a_on_left").get_to(s.a_on_left);
  s.responses.clear();
  for (const auto& [pair, r] : j.at("responses").items()) {
    s.responses[pair] = Response{side_from_string(r.at("side").get<std::string>()), r.at("method").get<std::string>(),
                                 r.at("seq").get<std::int64_t>(), r.value("timestamp", std::string())};
  }
}

json StudyReport::to_json() const {
  json pair_json = json::object();
  for (const auto& [id, t] : pairs) pair_json[id] = {{"votes", t.votes}, {"percent", t.percent}};
  return json{{"methods", methods},     {"preference_percent", preference},
              {"pooled_percent", pooled}, {"pairs", pair_json},
              {"participants", participants}, {"responses", responses},
              {"aggregation", "mean of per-participant percentages"}};
}

StudyReport aggregate(const std::vector<StudySession>& sessions_in, const std::vector<TrialPair>& pairs) {
  std::map<std::string, const TrialPair*> lookup;
  std::set<std::string> method_set;
  for (const auto& p : pairs) {
    lookup[p.pair_id] = &p;
    method_set.insert(p.method_a);
    method_set.insert(p.method_b);
  }
  std::vector<const StudySession*> sessions;
  for (const auto& s : sessions_in) sessions.push_back(&s);
  std::sort(sessions.begin(), sessions.end(),
            [](const auto* a, const auto* b) { return a->session_id < b->session_id; });

  StudyReport report;
  report.methods.assign(method_set.begin(), method_set.end());
  std::map<std::string, double> sum_percent;
  std::map<std::string, std::int64_t> pooled;
  for (const auto* s : sessions) {
    if (s->responses.empty()) continue;
    ++report.participants;
    std::map<std::string, std::int64_t> votes;
    for (const auto& [pair_id, r] : s->responses) {
      ++votes[r.method];
      ++pooled[r.method];
      ++report.responses;
      auto& tally = report.pairs[pair_id];
      ++tally.votes[r.method];
    }
    const double n = static_cast<double>(s->responses.size());
    for (const auto& m : report.methods) sum_percent[m] += 100.0 * static_cast<double>(votes[m]) / n;
  }
  if (report.responses == 0) throw EmptyReportError("no responses recorded yet");
  for (const auto& m : report.methods) {
    report.preference[m] = sum_percent[m] / static_cast<double>(report.participants);
    report.pooled[m] = 100.0 * static_cast<double>(pooled[m]) / static_cast<double>(report.responses);
  }
  for (auto& [pair_id, tally] : report.pairs) {
    std::int64_t total = 0;
    for (const auto& [m, v] : tally.votes) total += v;
    const auto* p = lookup.count(pair_id) ? lookup.at(pair_id) : nullptr;
    if (p) {
      tally.votes.try_emplace(p->method_a, 0);
      tally.votes.try_emplace(p->method_b, 0);
    }
    for (const auto& [m, v] : tally.votes) tally.percent[m] = 100.0 * static_cast<double>(v) / double(total);
  }
  return report;
}

namespace {

std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

void write_all(int fd, const std::string& data) {
  std::size_t done = 0;
  while (done < data.size()) {
    const auto n = ::write(fd, data.data() + done, data.size() - done);
    if (n < 0) {
      if (errno == EINTR) continue;
      throw Error("study log write failed");
    }
    done += static_cast<std::size_t>(n);
  }
}

}  // namespace

StudyStore::StudyStore(const fs::path& dir, const std::optional<fs::path>& manifest, StoreOptions options)
    : dir_(dir), options_(options) {
  fs::create_directories(dir_);
  const auto stored = dir_ / "pairs.json";
  const auto config_path = dir_ / "store.json";
  if (!fs::exists(stored)) {
    if (!manifest) throw IngestError("study store " + dir_.string() + " is empty and no pair manifest was given");
    const auto m = PairManifest::load(*manifest);
    m.save(stored);
    write_file_atomic(config_path, json{{"patch_root", fs::absolute(manifest->parent_path()).string()},
                                        {"seed", options_.seed}}
                                       .dump(2) +
                                       "\n");
  }
  const auto cfg = json::parse(read_file(config_path));
  patch_root_ = cfg.at("patch_root").get<std::string>();
  options_.seed = cfg.value("seed", options_.seed);
  pairs_ = PairManifest::load(stored).pairs;
  if (pairs_.empty()) throw ConfigError("pair manifest holds no pairs");
  for (std::size_t i = 0; i < pairs_.size(); ++i) pair_index_[pairs_[i].pair_id] = i;

  std::int64_t snapshot_seq = 0;
  if (fs::exists(dir_ / "snapshot.json")) {
    const auto snap = json::parse(read_file(dir_ / "snapshot.json"));
    snapshot_seq = snap.at("seq").get<std::int64_t>();
    for (const auto& s : snap.at("sessions")) {
      auto session = s.get<StudySession>();
      by_participant_[session.participant] = session.session_id;
      sessions_[session.session_id] = std::move(session);
    }
    seq_ = snapshot_seq;
  }
  if (fs::exists(dir_ / "log.jsonl")) {
    std::istringstream in(read_file(dir_ / "log.jsonl"));
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      json record;
      try {
        record = json::parse(line);
      } catch (const json::exception&) {
        log::warn("study log: ignoring a truncated trailing record");
        break;
      }
      const auto seq = record.at("seq").get<std::int64_t>();
      if (seq <= snapshot_seq) continue;
      apply(record);
      seq_ = seq;
      ++since_snapshot_;
    }
  }
  log_fd_ = ::open((dir_ / "log.jsonl").c_str(), O_WRONLY | O_CREAT | O_APPEND | O_CLOEXEC, 0644);
  if (log_fd_ < 0) throw IngestError("cannot open study log in " + dir_.string());
}

StudyStore::~StudyStore() {
  if (log_fd_ >= 0) ::close(log_fd_);
}

void StudyStore::apply(const json& record) {
  const auto type = record.at("type").get<std::string>();
  if (type == "session") {
    auto session = record.at("session").get<StudySession>();
    by_participant_[session.participant] = session.session_id;
    sessions_[session.session_id] = std::move(session);
  } else if (type == "response") {
    auto& s = sessions_.at(record.at("session_id").get<std::string>());
    s.responses[record.at("pair_id").get<std::string>()] =
        Response{side_from_string(record.at("side").get<std::string>()), record.at("method").get<std::string>(),
                 record.at("seq").get<std::int64_t>(), record.value("timestamp", std::string())};
  } else {
    throw IngestError("study log: unknown record type '" + type + "'");
  }
}

void StudyStore::append(json record) {
  record["seq"] = ++seq_;
  write_all(log_fd_, record.dump() + "\n");
  if (::fsync(log_fd_) != 0) throw Error("study log fsync failed");
  apply(record);
  if (options_.snapshot_every > 0 && ++since_snapshot_ >= options_.snapshot_every) {
    json snap{{"seq", seq_}, {"sessions", json::array()}};
    for (const auto& [id, s] : sessions_) snap["sessions"].push_back(s);
    write_file_atomic(dir_ / "snapshot.json", snap.dump() + "\n");
    since_snapshot_ = 0;
  }
}

void StudyStore::snapshot() {
  std::lock_guard lock(mutex_);
  json snap{{"seq", seq_}, {"sessions", json::array()}};
  for (const auto& [id, s] : sessions_) snap["sessions"].push_back(s);
  write_file_atomic(dir_ / "snapshot.json", snap.dump() + "\n");
  since_snapshot_ = 0;
}

StudySession StudyStore::create_session(const std::string& participant) {
  if (participant.empty()) throw ConfigError("participant token must not be empty");
  std::lock_guard lock(mutex_);
  if (auto it = by_participant_.find(participant); it != by_participant_.end()) return sessions_.at(it->second);

  StudySession s;
  s.participant = participant;
  s.session_id = sha256_hex(std::to_string(options_.seed) + ":" + participant).substr(0, 16);
  const auto digest = sha256_hex("order:" + s.session_id);
  std::mt19937_64 rng(std::stoull(digest.substr(0, 15), nullptr, 16));
  for (const auto& p : pairs_) s.order.push_back(p.pair_id);
  for (std::size_t i = s.order.size(); i > 1; --i) std::swap(s.order[i - 1], s.order[rng() % i]);
  for (const auto& p : pairs_) s.a_on_left[p.pair_id] = (rng() >> 63) != 0;
  append(json{{"type", "session"}, {"session", s}});
  return sessions_.at(s.session_id);
}

StudySession StudyStore::session(const std::string& session_id) const {
  std::lock_guard lock(mutex_);
  auto it = sessions_.find(session_id);
  if (it == sessions_.end()) throw NotFoundError("unknown session '" + session_id + "'");
  return it->second;
}

const TrialPair& StudyStore::pair(const std::string& pair_id) const {
  auto it = pair_index_.find(pair_id);
  if (it == pair_index_.end()) throw NotFoundError("unknown pair '" + pair_id + "'");
  return pairs_[it->second];
}

StudySession StudyStore::record_response(const std::string& session_id, const std::string& pair_id, Side side) {
  std::lock_guard lock(mutex_);
  auto it = sessions_.find(session_id);
  if (it == sessions_.end()) throw NotFoundError("unknown session '" + session_id + "'");
  auto& s = it->second;
  if (!s.a_on_left.count(pair_id)) throw NotFoundError("pair '" + pair_id + "' is not part of this session");
  if (s.responses.count(pair_id)) throw ConflictError("pair '" + pair_id + "' was already answered");
  const auto& p = pair(pair_id);
  const bool a_left = s.a_on_left.at(pair_id);
  const bool chose_a = (side == Side::Left) == a_left;
  append(json{{"type", "response"},
              {"session_id", session_id},
              {"pair_id", pair_id},
              {"side", to_string(side)},
              {"method", chose_a ? p.method_a : p.method_b},
              {"timestamp", utc_timestamp()}});
  return s;
}

std::vector<StudySession> StudyStore::sessions() const {
  std::lock_guard lock(mutex_);
  std::vector<StudySession> out;
  for (const auto& [id, s] : sessions_) out.push_back(s);
  return out;
}

StudyReport StudyStore::report() const {
  std::vector<StudySession> snapshot;
  {
    std::lock_guard lock(mutex_);
    for (const auto& [id, s] : sessions_) snapshot.push_back(s);
  }
  return aggregate(snapshot, pairs_);
}

struct StudyServer::Impl {
  StudyStore& store;
  ServerOptions options;
  httplib::Server server;
  int port = -1;

  Impl(StudyStore& s, ServerOptions o) : store(s), options(std::move(o)) {}
};

namespace {

void send_json(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, int status, const std::string& message) {
  send_json(res, status, json{{"error", message}});
}

json session_view(const StudySession& s) {
  json trials = json::array();
  for (std::size_t i = 0; i < s.order.size(); ++i) {
    trials.push_back({{"index", i}, {"pair_id", s.order[i]}, {"answered", s.responses.count(s.order[i]) > 0}});
  }
  return json{{"session_id", s.session_id}, {"total", s.order.size()}, {"answered", s.answered()},
              {"next_index", s.next_index()}, {"complete", s.complete()}, {"trials", trials}};
}

}  // namespace

StudyServer::StudyServer(StudyStore& store, ServerOptions options)
    : impl_(std::make_unique<Impl>(store, std::move(options))) {
  auto& srv = impl_->server;
  auto& st = impl_->store;
  const auto admin = impl_->options.admin_token;

  srv.set_default_headers({{"Access-Control-Allow-Origin", "*"}});
  srv.set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
    try {
      std::rethrow_exception(ep);
    } catch (const NotFoundError& e) {
      send_error(res, 404, e.what());
    } catch (const ConflictError& e) {
      send_error(res, 409, e.what());
    } catch (const EmptyReportError& e) {
      send_error(res, 404, e.what());
    } catch (const ConfigError& e) {
      send_error(res, 400, e.what());
    } catch (const json::exception& e) {
      send_error(res, 400, std::string("malformed request: ") + e.what());
    } catch (const std::exception& e) {
      send_error(res, 500, e.what());
    }
  });
  srv.Options(R"(.*)", [](const httplib::Request&, httplib::Response& res) {
    res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
    res.set_header("Access-Control-Allow-Headers", "Content-Type, Authorization");
    res.status = 204;
  });

  srv.Post("/sessions", [&st](const httplib::Request& req, httplib::Response& res) {
    const auto body = req.body.empty() ? json::object() : json::parse(req.body);
    const auto participant = body.value("participant", std::string());
    send_json(res, 200, session_view(st.create_session(participant)));
  });
  srv.Get(R"(/sessions/([0-9a-f]+))", [&st](const httplib::Request& req, httplib::Response& res) {
    send_json(res, 200, session_view(st.session(req.matches[1])));
  });
  srv.Get(R"(/trials/([0-9a-f]+)/(\d+))", [&st](const httplib::Request& req, httplib::Response& res) {
    const auto s = st.session(req.matches[1]);
    const auto index = std::stoull(req.matches[2]);
    if (index >= s.order.size()) throw NotFoundError("trial index out of range");
    const auto& pair_id = s.order[index];
    const std::string base = "/images/" + s.session_id + "/" + std::to_string(index) + "/";
    json body{{"session_id", s.session_id}, {"index", index},       {"total", s.order.size()},
              {"pair_id", pair_id},         {"left_url", base + "left.png"}, {"right_url", base + "right.png"}};
    if (st.options().show_reference && !st.pair(pair_id).reference.empty()) {
      body["reference_url"] = base + "reference.png";
    }
    if (auto it = s.responses.find(pair_id); it != s.responses.end()) {
      body["answered"] = to_string(it->second.side);
    } else {
      body["answered"] = nullptr;
    }
    send_json(res, 200, body);
  });
  srv.Get(R"(/images/([0-9a-f]+)/(\d+)/(left|right|reference)\.png)",
          [&st](const httplib::Request& req, httplib::Response& res) {
            const auto s = st.session(req.matches[1]);
            const auto index = std::stoull(req.matches[2]);
            if (index >= s.order.size()) throw NotFoundError("trial index out of range");
            const auto& p = st.pair(s.order[index]);
            const std::string which = req.matches[3];
            std::string rel;
            if (which == "reference") {
              if (!st.options().show_reference || p.reference.empty()) throw NotFoundError("no reference image");
              rel = p.reference;
            } else {
              const bool a_left = s.a_on_left.at(p.pair_id);
              rel = ((which == "left") == a_left) ? p.patch_a : p.patch_b;
            }
            res.set_content(read_file(st.patch_root() / rel), "image/png");
          });
  srv.Post("/responses", [&st](const httplib::Request& req, httplib::Response& res) {
    const auto body = json::parse(req.body);
    const auto s = st.record_response(body.at("session_id").get<std::string>(), body.at("pair_id").get<std::string>(),
                                      side_from_string(body.at("side").get<std::string>()));
    send_json(res, 200, json{{"answered", s.answered()}, {"total", s.order.size()}, {"complete", s.complete()}});
  });
  srv.Get("/report", [&st, admin](const httplib::Request& req, httplib::Response& res) {
    std::string token = req.get_param_value("token");
    const auto auth = req.get_header_value("Authorization");
    if (auth.rfind("Bearer ", 0) == 0) token = auth.substr(7);
    if (admin.empty() || token != admin) {
      send_error(res, 403, "admin token required");
      return;
    }
    send_json(res, 200, st.report().to_json());
  });
}

StudyServer::~StudyServer() { stop(); }

int StudyServer::bind() {
  if (impl_->options.port == 0) {
    impl_->port = impl_->server.bind_to_any_port(impl_->options.host);
  } else if (impl_->server.bind_to_port(impl_->options.host, impl_->options.port)) {
    impl_->port = impl_->options.port;
  }
  if (impl_->port < 0) {
    throw Error("cannot bind " + impl_->options.host + ":" + std::to_string(impl_->options.port));
  }
  return impl_->port;
}

void StudyServer::serve() {
  if (impl_->port < 0) bind();
  impl_->server.listen_after_bind();
}

void StudyServer::stop() {
  if (impl_ && impl_->server.is_running()) impl_->server.stop();
}

}  // namespace gjscc
