#include "omniinput/annotation.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <istream>
#include <mutex>
#include <ostream>
#include <set>
#include <sstream>

#include <httplib.h>

namespace omni {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kRunsFile = "runs.jsonl";
constexpr const char* kTasksFile = "tasks.jsonl";
constexpr const char* kAnnotationsFile = "annotations.jsonl";

void write_fully(int fd, const std::string& data, const std::string& path) {
  std::size_t off = 0;
  while (off < data.size()) {
    const auto n = ::write(fd, data.data() + off, data.size() - off);
    if (n < 0) {
      if (errno == EINTR) continue;
      throw IoError("write failed: " + path);
    }
    off += static_cast<std::size_t>(n);
  }
}

// Each line of a JSONL file; a final line without a newline is a torn write
// and is dropped.
template <typename Fn>
void read_jsonl(const fs::path& path, Fn&& fn) {
  std::ifstream in(path, std::ios::binary);
  if (!in) return;
  const std::string content((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  std::size_t start = 0;
  int line_no = 0;
  while (start < content.size()) {
    const auto nl = content.find('\n', start);
    if (nl == std::string::npos) break;
    ++line_no;
    const std::string line = content.substr(start, nl - start);
    start = nl + 1;
    if (line.empty()) continue;
    try {
      fn(json::parse(line));
    } catch (const json::exception& e) {
      throw IoError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
}

std::string task_id_for(const std::string& run, int bin, std::uint64_t hash) {
  return run + "-" + std::to_string(bin) + "-" + hash_hex(hash);
}

}  // namespace

InvalidScoreError::InvalidScoreError(double score)
    : Error("invalid_score", [score] {
        std::ostringstream os;
        os << "score " << score << " is outside [0, 1]";
        return os.str();
      }()) {}

std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::now();
  const auto t = std::chrono::system_clock::to_time_t(now);
  const auto ms =
      std::chrono::duration_cast<std::chrono::milliseconds>(now.time_since_epoch()).count() % 1000;
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%S") << '.' << std::setw(3) << std::setfill('0') << ms
     << 'Z';
  return os.str();
}

json AnnotationTask::to_json() const {
  json j = {{"task_id", task_id},
            {"run_id", run_id},
            {"bin", bin},
            {"tokens", seq.tokens},
            {"z", z},
            {"hash", hash_hex(canonical_hash(seq))},
            {"status", status == TaskStatus::kDone ? "DONE" : "PENDING"}};
  j["text"] = text ? json(*text) : json();
  return j;
}

AnnotationTask AnnotationTask::from_json(const json& j) {
  AnnotationTask t;
  t.task_id = j.at("task_id").get<std::string>();
  t.run_id = j.at("run_id").get<std::string>();
  t.bin = j.at("bin").get<int>();
  t.seq = Sequence(j.at("tokens").get<std::vector<Token>>());
  t.z = j.at("z").get<double>();
  if (j.contains("text") && !j["text"].is_null()) t.text = j["text"].get<std::string>();
  return t;
}

json AnnotationRecord::to_json() const {
  return {{"task_id", task_id}, {"annotator_id", annotator_id}, {"score", score}, {"ts", ts}};
}

AnnotationRecord AnnotationRecord::from_json(const json& j) {
  AnnotationRecord r;
  r.task_id = j.at("task_id").get<std::string>();
  r.annotator_id = j.at("annotator_id").get<std::string>();
  r.score = j.at("score").get<double>();
  if (j.contains("ts")) r.ts = j["ts"].get<std::string>();
  return r;
}

json RunInfo::to_json() const {
  return {{"run_id", run_id},     {"grid", grid.to_json()},
          {"quota", quota},       {"annotators_per_task", annotators_per_task},
          {"manifest", manifest}, {"underfilled", underfilled}};
}

RunInfo RunInfo::from_json(const json& j) {
  RunInfo r;
  r.run_id = j.at("run_id").get<std::string>();
  r.grid = BinGrid::from_json(j.at("grid"));
  r.quota = j.at("quota").get<int>();
  r.annotators_per_task = j.value("annotators_per_task", 1);
  r.manifest = j.value("manifest", json::object());
  r.underfilled = j.value("underfilled", std::vector<int>{});
  return r;
}

json BinAnnotationSummary::to_json() const {
  return {{"bin", bin},
          {"bin_lo", lo},
          {"bin_hi", hi},
          {"mean", mean ? json(*mean) : json()},
          {"spread", spread ? json(*spread) : json()},
          {"tasks", tasks},
          {"annotated_tasks", annotated_tasks},
          {"records", records},
          {"annotators", annotators},
          {"annotator_means", annotator_means}};
}

AnnotationStore::AnnotationStore(std::string dir) : dir_(std::move(dir)) {
  std::error_code ec;
  fs::create_directories(dir_, ec);
  if (ec) throw IoError("cannot create annotation store " + dir_ + ": " + ec.message());
  load();
}

void AnnotationStore::load() {
  const fs::path base(dir_);
  read_jsonl(base / kRunsFile, [&](const json& j) {
    auto r = RunInfo::from_json(j);
    runs_[r.run_id] = std::move(r);
  });
  read_jsonl(base / kTasksFile, [&](const json& j) {
    auto t = AnnotationTask::from_json(j);
    if (tasks_.emplace(t.task_id, t).second) by_run_[t.run_id].push_back(t.task_id);
  });
  read_jsonl(base / kAnnotationsFile, [&](const json& j) {
    auto r = AnnotationRecord::from_json(j);
    records_[{r.task_id, r.annotator_id}] = std::move(r);
  });
}

void AnnotationStore::append(const std::string& file, const std::string& data) {
  const std::string path = (fs::path(dir_) / file).string();
  const int fd = ::open(path.c_str(), O_WRONLY | O_APPEND | O_CREAT | O_CLOEXEC, 0644);
  if (fd < 0) throw IoError("cannot open " + path);
  try {
    write_fully(fd, data, path);
    if (::fsync(fd) != 0) throw IoError("fsync failed: " + path);
  } catch (...) {
    ::close(fd);
    throw;
  }
  ::close(fd);
}

std::size_t AnnotationStore::annotator_count(const std::string& task_id) const {
  std::size_t n = 0;
  for (auto it = records_.lower_bound({task_id, ""}); it != records_.end() && it->first.task == task_id; ++it) {
    ++n;
  }
  return n;
}

TaskStatus AnnotationStore::status_of(const AnnotationTask& task) const {
  const auto run = runs_.find(task.run_id);
  const std::size_t needed =
      run == runs_.end() ? 1 : static_cast<std::size_t>(std::max(1, run->second.annotators_per_task));
  return annotator_count(task.task_id) >= needed ? TaskStatus::kDone : TaskStatus::kPending;
}

RunInfo AnnotationStore::create_tasks(const std::string& run_id, const BinGrid& grid,
                                      std::span<const SampledInput> samples, int quota,
                                      const json& manifest,
                                      const std::function<std::string(const Sequence&)>& detokenize,
                                      int annotators_per_task) {
  if (quota < 1) throw ConfigError("quota", "must be >= 1");
  if (annotators_per_task < 1) throw ConfigError("annotators_per_task", "must be >= 1");
  if (run_id.empty() || run_id.find_first_of("/\\ \t\n") != std::string::npos) {
    throw ConfigError("run", "run id must be non-empty without spaces or slashes");
  }
  std::unique_lock lock(mutex_);
  auto existing = runs_.find(run_id);
  if (existing != runs_.end() && !(existing->second.grid == grid)) throw GridMismatchError();

  std::map<int, std::set<std::uint64_t>> hashes;
  std::map<int, int> counts;
  for (const auto& id : by_run_[run_id]) {
    const auto& t = tasks_.at(id);
    hashes[t.bin].insert(canonical_hash(t.seq));
    ++counts[t.bin];
  }

  std::set<int> targeted;
  std::string lines;
  std::vector<AnnotationTask> added;
  for (const auto& s : samples) {
    if (s.bin < 0 || s.bin >= grid.bin_count()) {
      throw InvalidArgument("sample bin " + std::to_string(s.bin) + " is outside the grid");
    }
    targeted.insert(s.bin);
    if (counts[s.bin] >= quota) continue;
    const auto h = canonical_hash(s.seq);
    if (!hashes[s.bin].insert(h).second) continue;
    ++counts[s.bin];
    AnnotationTask t;
    t.task_id = task_id_for(run_id, s.bin, h);
    t.run_id = run_id;
    t.bin = s.bin;
    t.seq = s.seq;
    t.z = s.z;
    if (detokenize) t.text = detokenize(s.seq);
    json line = t.to_json();
    line.erase("status");
    lines += line.dump() + "\n";
    added.push_back(std::move(t));
  }

  RunInfo info = existing != runs_.end() ? existing->second : RunInfo{};
  info.run_id = run_id;
  info.grid = grid;
  info.quota = quota;
  info.annotators_per_task = annotators_per_task;
  if (!manifest.empty()) info.manifest = manifest;
  std::set<int> under(info.underfilled.begin(), info.underfilled.end());
  for (int b : targeted) {
    if (counts[b] < quota) {
      under.insert(b);
    } else {
      under.erase(b);
    }
  }
  info.underfilled.assign(under.begin(), under.end());

  if (!lines.empty()) append(kTasksFile, lines);
  append(kRunsFile, info.to_json().dump() + "\n");
  for (auto& t : added) {
    by_run_[run_id].push_back(t.task_id);
    tasks_.emplace(t.task_id, std::move(t));
  }
  runs_[run_id] = info;
  return info;
}

AnnotationRecord AnnotationStore::submit(const std::string& task_id,
                                         const std::string& annotator_id, double score,
                                         std::optional<std::string> ts) {
  if (!(score >= 0.0 && score <= 1.0)) throw InvalidScoreError(score);
  if (annotator_id.empty()) throw InvalidArgument("annotator_id must be non-empty");
  std::unique_lock lock(mutex_);
  if (!tasks_.contains(task_id)) throw UnknownTaskError(task_id);
  AnnotationRecord r{task_id, annotator_id, score, ts.value_or(utc_timestamp())};
  append(kAnnotationsFile, r.to_json().dump() + "\n");
  records_[{task_id, annotator_id}] = r;
  return r;
}

std::vector<RunInfo> AnnotationStore::runs() const {
  std::shared_lock lock(mutex_);
  std::vector<RunInfo> out;
  for (const auto& [id, r] : runs_) out.push_back(r);
  return out;
}

RunInfo AnnotationStore::run(const std::string& run_id) const {
  std::shared_lock lock(mutex_);
  const auto it = runs_.find(run_id);
  if (it == runs_.end()) throw UnknownRunError(run_id);
  return it->second;
}

std::vector<AnnotationTask> AnnotationStore::tasks(const std::string& run_id) const {
  std::shared_lock lock(mutex_);
  if (!runs_.contains(run_id)) throw UnknownRunError(run_id);
  std::vector<AnnotationTask> out;
  const auto it = by_run_.find(run_id);
  if (it == by_run_.end()) return out;
  for (const auto& id : it->second) {
    auto t = tasks_.at(id);
    t.status = status_of(t);
    out.push_back(std::move(t));
  }
  return out;
}

std::optional<AnnotationTask> AnnotationStore::task(const std::string& task_id) const {
  std::shared_lock lock(mutex_);
  const auto it = tasks_.find(task_id);
  if (it == tasks_.end()) return std::nullopt;
  auto t = it->second;
  t.status = status_of(t);
  return t;
}

std::vector<AnnotationRecord> AnnotationStore::records(const std::string& run_id) const {
  std::shared_lock lock(mutex_);
  std::vector<AnnotationRecord> out;
  for (const auto& [key, r] : records_) {
    if (tasks_.at(key.task).run_id == run_id) out.push_back(r);
  }
  return out;
}

std::optional<AnnotationTask> AnnotationStore::next_task(const std::string& run_id,
                                                         const std::string& annotator_id) const {
  const auto all = tasks(run_id);
  std::map<int, int> done;
  for (const auto& t : all) {
    if (t.status == TaskStatus::kDone) ++done[t.bin];
  }
  std::shared_lock lock(mutex_);
  const AnnotationTask* best = nullptr;
  for (const auto& t : all) {
    if (t.status == TaskStatus::kDone || records_.contains({t.task_id, annotator_id})) continue;
    if (!best || done[t.bin] < done[best->bin] ||
        (done[t.bin] == done[best->bin] && t.bin < best->bin)) {
      best = &t;
    }
  }
  if (!best) return std::nullopt;
  return *best;
}

MergedPrecision AnnotationStore::merge_to_precision(const std::string& run_id) const {
  const RunInfo info = run(run_id);
  const auto all = tasks(run_id);
  const auto recs = records(run_id);
  const auto bins = static_cast<std::size_t>(info.grid.bin_count());

  std::map<std::string, std::vector<const AnnotationRecord*>> by_task;
  for (const auto& r : recs) by_task[r.task_id].push_back(&r);

  struct Acc {
    double task_sum = 0.0;
    std::uint64_t tasks = 0, annotated = 0, records = 0;
    std::map<std::string, std::pair<double, std::uint64_t>> per_annotator;
  };
  std::vector<Acc> acc(bins);
  for (const auto& t : all) {
    auto& a = acc[static_cast<std::size_t>(t.bin)];
    ++a.tasks;
    const auto it = by_task.find(t.task_id);
    if (it == by_task.end()) continue;
    double s = 0.0;
    for (const auto* r : it->second) {
      s += r->score;
      auto& pa = a.per_annotator[r->annotator_id];
      pa.first += r->score;
      ++pa.second;
    }
    a.task_sum += s / static_cast<double>(it->second.size());
    ++a.annotated;
    a.records += it->second.size();
  }

  MergedPrecision out{PrecisionPerBin(info.grid), std::vector<double>(bins, std::nan("")), {}};
  for (std::size_t k = 0; k < bins; ++k) {
    const auto& a = acc[k];
    if (a.tasks == 0) continue;
    BinAnnotationSummary s;
    s.bin = static_cast<int>(k);
    s.lo = info.grid.lo(s.bin);
    s.hi = info.grid.hi(s.bin);
    s.tasks = a.tasks;
    s.annotated_tasks = a.annotated;
    s.records = a.records;
    if (a.annotated > 0) {
      const double mean = std::clamp(a.task_sum / static_cast<double>(a.annotated), 0.0, 1.0);
      s.mean = mean;
      out.r.set(s.bin, mean, a.annotated);
    }
    for (const auto& [who, sum_n] : a.per_annotator) {
      s.annotators.push_back(who);
      s.annotator_means[who] = sum_n.first / static_cast<double>(sum_n.second);
    }
    if (s.annotator_means.size() >= 2) {
      double m = 0.0;
      for (const auto& [who, v] : s.annotator_means) m += v;
      m /= static_cast<double>(s.annotator_means.size());
      double var = 0.0;
      for (const auto& [who, v] : s.annotator_means) var += (v - m) * (v - m);
      s.spread = std::sqrt(var / static_cast<double>(s.annotator_means.size()));
      out.spread[k] = *s.spread;
    }
    out.bins.push_back(std::move(s));
  }
  return out;
}

std::size_t AnnotationStore::auto_annotate(const std::string& run_id,
                                           const OracleAnnotator& oracle) {
  const std::string who = "oracle:" + oracle.name();
  std::size_t n = 0;
  for (const auto& t : tasks(run_id)) {
    if (t.status == TaskStatus::kDone) continue;
    {
      std::shared_lock lock(mutex_);
      if (records_.contains({t.task_id, who})) continue;
    }
    submit(t.task_id, who, oracle.annotate(t.seq));
    ++n;
  }
  return n;
}

void AnnotationStore::export_jsonl(const std::string& run_id, std::ostream& out) const {
  for (const auto& r : records(run_id)) out << r.to_json().dump() << '\n';
}

std::size_t AnnotationStore::import_jsonl(std::istream& in) {
  std::size_t n = 0;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    AnnotationRecord r;
    try {
      r = AnnotationRecord::from_json(json::parse(line));
    } catch (const json::exception& e) {
      throw IoError(std::string("annotation import: ") + e.what());
    }
    submit(r.task_id, r.annotator_id, r.score, r.ts.empty() ? std::nullopt : std::optional(r.ts));
    ++n;
  }
  return n;
}

void AnnotationStore::compact() {
  std::unique_lock lock(mutex_);
  const fs::path final_path = fs::path(dir_) / kAnnotationsFile;
  const fs::path tmp = fs::path(dir_) / (std::string(kAnnotationsFile) + ".tmp");
  std::string data;
  for (const auto& [key, r] : records_) data += r.to_json().dump() + "\n";
  const int fd = ::open(tmp.c_str(), O_WRONLY | O_TRUNC | O_CREAT | O_CLOEXEC, 0644);
  if (fd < 0) throw IoError("cannot open " + tmp.string());
  write_fully(fd, data, tmp.string());
  ::fsync(fd);
  ::close(fd);
  fs::rename(tmp, final_path);
}

// ------------------------------------------------------------------ HTTP

struct AnnotationServer::Impl {
  AnnotationStore& store;
  httplib::Server server;
  explicit Impl(AnnotationStore& s) : store(s) {}
};

namespace {

void send_json(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, int status, const std::string& code,
                const std::string& message) {
  send_json(res, status, {{"error", code}, {"message", message}});
}

template <typename Fn>
httplib::Server::Handler guarded(Fn fn) {
  return [fn](const httplib::Request& req, httplib::Response& res) {
    try {
      fn(req, res);
    } catch (const UnknownRunError& e) {
      send_error(res, 404, e.code(), e.what());
    } catch (const UnknownTaskError& e) {
      send_error(res, 404, e.code(), e.what());
    } catch (const Error& e) {
      send_error(res, 400, e.code(), e.what());
    } catch (const json::exception& e) {
      send_error(res, 400, "bad_request", e.what());
    }
  };
}

std::string required_param(const httplib::Request& req, const std::string& name) {
  if (!req.has_param(name)) throw InvalidArgument("missing query parameter " + name);
  return req.get_param_value(name);
}

}  // namespace

AnnotationServer::AnnotationServer(AnnotationStore& store, std::optional<std::string> static_dir)
    : impl_(std::make_unique<Impl>(store)) {
  auto& svr = impl_->server;
  AnnotationStore* st = &store;

  svr.Get("/api/runs", guarded([st](const httplib::Request&, httplib::Response& res) {
    json out = json::array();
    for (const auto& r : st->runs()) {
      const auto ts = st->tasks(r.run_id);
      const auto done = std::count_if(ts.begin(), ts.end(), [](const AnnotationTask& t) {
        return t.status == TaskStatus::kDone;
      });
      json j = r.to_json();
      j["tasks"] = ts.size();
      j["done"] = done;
      out.push_back(j);
    }
    send_json(res, 200, out);
  }));

  svr.Get("/api/tasks/next", guarded([st](const httplib::Request& req, httplib::Response& res) {
    const auto annotator = required_param(req, "annotator");
    const auto run = required_param(req, "run");
    const auto info = st->run(run);
    const auto t = st->next_task(run, annotator);
    if (!t) {
      res.status = 204;
      return;
    }
    json j = t->to_json();
    j["bin_lo"] = info.grid.lo(t->bin);
    j["bin_hi"] = info.grid.hi(t->bin);
    send_json(res, 200, j);
  }));

  svr.Post("/api/annotations", guarded([st](const httplib::Request& req, httplib::Response& res) {
    const auto body = json::parse(req.body);
    if (!body.contains("score") || !body["score"].is_number()) {
      throw InvalidArgument("score must be a number");
    }
    const auto r = st->submit(body.at("task_id").get<std::string>(),
                              body.at("annotator_id").get<std::string>(),
                              body["score"].get<double>());
    send_json(res, 200, r.to_json());
  }));

  svr.Get("/api/progress", guarded([st](const httplib::Request& req, httplib::Response& res) {
    const auto run = required_param(req, "run");
    const auto info = st->run(run);
    std::map<int, std::pair<int, int>> per_bin;  // done, tasks
    for (const auto& t : st->tasks(run)) {
      auto& p = per_bin[t.bin];
      ++p.second;
      if (t.status == TaskStatus::kDone) ++p.first;
    }
    const std::set<int> under(info.underfilled.begin(), info.underfilled.end());
    json bins = json::array();
    for (const auto& [bin, p] : per_bin) {
      bins.push_back({{"bin", bin},
                      {"bin_lo", info.grid.lo(bin)},
                      {"bin_hi", info.grid.hi(bin)},
                      {"done", p.first},
                      {"tasks", p.second},
                      {"quota", info.quota},
                      {"underfilled", under.contains(bin)}});
    }
    send_json(res, 200, {{"run_id", run}, {"bins", bins}});
  }));

  svr.Get("/api/summary", guarded([st](const httplib::Request& req, httplib::Response& res) {
    const auto run = required_param(req, "run");
    const auto merged = st->merge_to_precision(run);
    json bins = json::array();
    for (const auto& b : merged.bins) bins.push_back(b.to_json());
    send_json(res, 200, {{"run_id", run}, {"bins", bins}});
  }));

  if (static_dir) {
    if (!svr.set_mount_point("/", *static_dir)) {
      throw IoError("UI directory " + *static_dir + " does not exist");
    }
  }
}

AnnotationServer::~AnnotationServer() { stop(); }

int AnnotationServer::bind(const std::string& host, int port) {
  auto& svr = impl_->server;
  if (port == 0) {
    const int p = svr.bind_to_any_port(host);
    if (p < 0) throw IoError("cannot bind " + host);
    return p;
  }
  if (!svr.bind_to_port(host, port)) {
    throw IoError("cannot bind " + host + ":" + std::to_string(port));
  }
  return port;
}

void AnnotationServer::listen() { impl_->server.listen_after_bind(); }

void AnnotationServer::stop() {
  if (impl_) impl_->server.stop();
}

// -------------------------------------------------------------- terminal

std::size_t terminal_annotate(AnnotationStore& store, const std::string& run_id,
                              const std::string& annotator_id, std::istream& in,
                              std::ostream& out) {
  const auto info = store.run(run_id);
  std::size_t submitted = 0;
  for (const auto& t : store.tasks(run_id)) {
    if (t.status == TaskStatus::kDone) continue;
    const auto recs = store.records(run_id);
    const bool mine = std::any_of(recs.begin(), recs.end(), [&](const AnnotationRecord& r) {
      return r.task_id == t.task_id && r.annotator_id == annotator_id;
    });
    if (mine) continue;
    out << "\nbin " << t.bin << " [" << info.grid.lo(t.bin) << ", " << info.grid.hi(t.bin)
        << ")  z=" << t.z << "\n";
    if (t.text) {
      out << "  " << *t.text << "\n";
    } else {
      out << "  tokens:";
      for (Token tok : t.seq.tokens) out << ' ' << tok;
      out << "\n";
    }
    while (true) {
      out << "score 0..1 (s skip, q quit)> " << std::flush;
      std::string line;
      if (!std::getline(in, line)) return submitted;
      line.erase(0, line.find_first_not_of(" \t"));
      line.erase(line.find_last_not_of(" \t\r") + 1);
      if (line == "q") return submitted;
      if (line == "s") break;
      try {
        std::size_t used = 0;
        const double v = std::stod(line, &used);
        if (used != line.size()) throw std::invalid_argument(line);
        store.submit(t.task_id, annotator_id, v);
        ++submitted;
        break;
      } catch (const InvalidScoreError& e) {
        out << e.what() << "\n";
      } catch (const std::exception&) {
        out << "enter a number in [0, 1], s or q\n";
      }
    }
  }
  out << "no pending tasks\n";
  return submitted;
}

}  // namespace omni
