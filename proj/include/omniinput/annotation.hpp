#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <map>
#include <memory>
#include <optional>
#include <shared_mutex>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "omniinput/energy.hpp"
#include "omniinput/evaluator.hpp"
#include "omniinput/histogram.hpp"
#include "omniinput/reservoir.hpp"

namespace omni {

enum class TaskStatus { kPending, kDone };

struct AnnotationTask {
  std::string task_id;  // <run>-<bin>-<hash>
  std::string run_id;
  int bin = 0;
  Sequence seq;
  double z = 0.0;
  std::optional<std::string> text;
  TaskStatus status = TaskStatus::kPending;

  nlohmann::json to_json() const;
  static AnnotationTask from_json(const nlohmann::json& j);
};

struct AnnotationRecord {
  std::string task_id;
  std::string annotator_id;
  double score = 0.0;
  std::string ts;  // ISO 8601, UTC

  nlohmann::json to_json() const;
  static AnnotationRecord from_json(const nlohmann::json& j);
};

struct RunInfo {
  std::string run_id;
  BinGrid grid{0.0, 1.0, 1.0};
  int quota = 30;
  // A task is done once this many distinct annotators have scored it.
  int annotators_per_task = 1;
  nlohmann::json manifest = nlohmann::json::object();
  std::vector<int> underfilled;  // targeted bins with fewer than quota tasks

  nlohmann::json to_json() const;
  static RunInfo from_json(const nlohmann::json& j);
};

struct BinAnnotationSummary {
  int bin = 0;
  double lo = 0.0;
  double hi = 0.0;
  std::optional<double> mean;    // two-level mean: per task, then per bin
  std::optional<double> spread;  // population SD of the per-annotator bin means
  std::uint64_t tasks = 0;
  std::uint64_t annotated_tasks = 0;
  std::uint64_t records = 0;
  std::vector<std::string> annotators;
  std::map<std::string, double> annotator_means;

  nlohmann::json to_json() const;
};

struct MergedPrecision {
  PrecisionPerBin r;
  std::vector<double> spread;  // NaN where fewer than two annotators
  std::vector<BinAnnotationSummary> bins;
};

class UnknownTaskError : public Error {
 public:
  explicit UnknownTaskError(const std::string& id) : Error("unknown_task", "no task " + id) {}
};

class UnknownRunError : public Error {
 public:
  explicit UnknownRunError(const std::string& id) : Error("unknown_run", "no run " + id) {}
};

class InvalidScoreError : public Error {
 public:
  explicit InvalidScoreError(double score);
};

std::string utc_timestamp();

// Append-only JSONL store in a directory: runs.jsonl, tasks.jsonl and
// annotations.jsonl. Writes are serialized and fsynced before returning;
// reads may run concurrently. The latest record per (task, annotator) wins.
class AnnotationStore {
 public:
  explicit AnnotationStore(std::string dir);

  const std::string& dir() const { return dir_; }

  // Registers the run (idempotent) and adds up to `quota` tasks per bin from
  // the samples, skipping sequences already tasked for the bin. Bins that
  // end up below quota are recorded as underfilled.
  RunInfo create_tasks(const std::string& run_id, const BinGrid& grid,
                       std::span<const SampledInput> samples, int quota,
                       const nlohmann::json& manifest = nlohmann::json::object(),
                       const std::function<std::string(const Sequence&)>& detokenize = nullptr,
                       int annotators_per_task = 1);

  AnnotationRecord submit(const std::string& task_id, const std::string& annotator_id,
                          double score, std::optional<std::string> ts = std::nullopt);

  std::vector<RunInfo> runs() const;
  RunInfo run(const std::string& run_id) const;
  std::vector<AnnotationTask> tasks(const std::string& run_id) const;
  std::optional<AnnotationTask> task(const std::string& task_id) const;
  // Latest records, sorted by (task_id, annotator_id).
  std::vector<AnnotationRecord> records(const std::string& run_id) const;

  // A pending task the annotator has not scored yet, from the bin with the
  // fewest done tasks.
  std::optional<AnnotationTask> next_task(const std::string& run_id,
                                          const std::string& annotator_id) const;

  MergedPrecision merge_to_precision(const std::string& run_id) const;

  // Scores every pending task with the oracle as "oracle:<name>". Returns
  // the number of records written.
  std::size_t auto_annotate(const std::string& run_id, const OracleAnnotator& oracle);

  // Canonical JSONL of the latest records, sorted by (task_id, annotator_id).
  void export_jsonl(const std::string& run_id, std::ostream& out) const;
  std::size_t import_jsonl(std::istream& in);

  // Rewrites annotations.jsonl keeping only the latest record per key.
  void compact();

 private:
  struct Key {
    std::string task;
    std::string annotator;
    auto operator<=>(const Key&) const = default;
  };

  void load();
  void append(const std::string& file, const std::string& line);
  TaskStatus status_of(const AnnotationTask& task) const;
  std::size_t annotator_count(const std::string& task_id) const;

  std::string dir_;
  mutable std::shared_mutex mutex_;
  std::map<std::string, RunInfo> runs_;
  std::map<std::string, AnnotationTask> tasks_;             // by task id
  std::map<std::string, std::vector<std::string>> by_run_;  // run -> task ids in creation order
  std::map<Key, AnnotationRecord> records_;
};

// HTTP front door over a store. Blocks in listen() until stop().
class AnnotationServer {
 public:
  AnnotationServer(AnnotationStore& store, std::optional<std::string> static_dir = std::nullopt);
  ~AnnotationServer();

  // Binds host:port (port 0 picks a free port) and returns the bound port.
  int bind(const std::string& host, int port);
  void listen();  // after bind()
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

// Line-oriented annotation loop: shows each pending task and reads a score
// in [0,1] per line; "s" skips, "q" or end of input stops. Returns the number
// of submitted scores.
std::size_t terminal_annotate(AnnotationStore& store, const std::string& run_id,
                              const std::string& annotator_id, std::istream& in,
                              std::ostream& out);

}  // namespace omni
