#include <gtest/gtest.h>

#include <httplib.h>

#include <algorithm>
#include <chrono>
#include <fstream>
#include <random>
#include <sstream>
#include <thread>

#include "omniinput/annotation.hpp"
#include "omniinput/oracle.hpp"
#include "test_util.hpp"

using namespace omni;
using nlohmann::json;

namespace {

const BinGrid kGrid(0, 10, 1);

// n distinct samples in `bin`.
std::vector<SampledInput> samples_in_bin(int bin, int n, int offset = 0) {
  const InputSpace space(10, 4);
  std::vector<SampledInput> out;
  for (int i = 0; i < n; ++i) {
    SampledInput s;
    s.seq = space.at(static_cast<std::uint64_t>(offset + i));
    s.z = bin + 0.5;
    s.bin = bin;
    out.push_back(s);
  }
  return out;
}

std::vector<std::string> task_ids(const AnnotationStore& st, const std::string& run, int bin) {
  std::vector<std::string> out;
  for (const auto& t : st.tasks(run)) {
    if (t.bin == bin) out.push_back(t.task_id);
  }
  return out;
}

}  // namespace

TEST(CreateTasks, QuotaUnderfillAndDedup) {
  test::TempDir dir;
  AnnotationStore st(dir.path());
  auto samples = samples_in_bin(2, 40);
  const auto few = samples_in_bin(5, 12);
  samples.insert(samples.end(), few.begin(), few.end());
  auto dup = samples_in_bin(7, 1);
  samples.insert(samples.end(), dup.begin(), dup.end());
  samples.insert(samples.end(), dup.begin(), dup.end());
  const auto info = st.create_tasks("run1", kGrid, samples, 30);
  EXPECT_EQ(task_ids(st, "run1", 2).size(), 30u);
  EXPECT_EQ(task_ids(st, "run1", 5).size(), 12u);
  EXPECT_EQ(task_ids(st, "run1", 7).size(), 1u);
  EXPECT_EQ(info.underfilled, (std::vector<int>{5, 7}));
  // Re-offering the same samples adds nothing.
  st.create_tasks("run1", kGrid, samples, 30);
  EXPECT_EQ(st.tasks("run1").size(), 43u);
  const auto id = task_ids(st, "run1", 2).front();
  EXPECT_EQ(id.rfind("run1-2-", 0), 0u);
  EXPECT_EQ(id.size(), std::string("run1-2-").size() + 16);
  EXPECT_THROW(st.create_tasks("run1", BinGrid(0, 5, 1), samples, 30), GridMismatchError);
  EXPECT_THROW(st.create_tasks("bad id", kGrid, samples, 30), ConfigError);
}

TEST(Submit, ValidatesOverwritesAndMarksDone) {
  test::TempDir dir;
  AnnotationStore st(dir.path());
  st.create_tasks("r", kGrid, samples_in_bin(1, 3), 30);
  const auto id = task_ids(st, "r", 1).front();
  EXPECT_THROW(st.submit(id, "alice", 1.5), InvalidScoreError);
  EXPECT_THROW(st.submit(id, "alice", -0.1), InvalidScoreError);
  EXPECT_THROW(st.submit("nope", "alice", 0.5), UnknownTaskError);
  st.submit(id, "alice", 0.2);
  st.submit(id, "alice", 0.8);
  const auto recs = st.records("r");
  ASSERT_EQ(recs.size(), 1u);
  EXPECT_EQ(recs[0].score, 0.8);
  EXPECT_EQ(st.task(id)->status, TaskStatus::kDone);
  EXPECT_THROW(st.run("missing"), UnknownRunError);
}

TEST(Submit, DoneNeedsEveryAssignedAnnotator) {
  test::TempDir dir;
  AnnotationStore st(dir.path());
  st.create_tasks("r", kGrid, samples_in_bin(1, 1), 30, json::object(), nullptr, 2);
  const auto id = task_ids(st, "r", 1).front();
  st.submit(id, "a", 1.0);
  EXPECT_EQ(st.task(id)->status, TaskStatus::kPending);
  EXPECT_FALSE(st.next_task("r", "a").has_value());
  EXPECT_EQ(st.next_task("r", "b")->task_id, id);
  st.submit(id, "b", 1.0);
  EXPECT_EQ(st.task(id)->status, TaskStatus::kDone);
}

TEST(Store, PersistsAndDropsTornLines) {
  test::TempDir dir;
  std::string id;
  {
    AnnotationStore st(dir.path());
    st.create_tasks("r", kGrid, samples_in_bin(3, 4), 30, {{"model", "sum"}});
    id = task_ids(st, "r", 3)[1];
    st.submit(id, "a", 0.25, "2024-01-01T00:00:00.000Z");
  }
  {
    std::ofstream out(dir.str("annotations.jsonl"), std::ios::app);
    out << R"({"annotator_id":"a","score":0.9,"task_)";
  }
  AnnotationStore again(dir.path());
  EXPECT_EQ(again.tasks("r").size(), 4u);
  EXPECT_EQ(again.run("r").manifest.at("model"), "sum");
  const auto recs = again.records("r");
  ASSERT_EQ(recs.size(), 1u);
  EXPECT_EQ(recs[0].score, 0.25);
  EXPECT_EQ(recs[0].ts, "2024-01-01T00:00:00.000Z");
}

TEST(Merge, SingleAnnotatorMean) {
  test::TempDir dir;
  AnnotationStore st(dir.path());
  st.create_tasks("r", kGrid, samples_in_bin(4, 3), 30);
  const auto ids = task_ids(st, "r", 4);
  st.submit(ids[0], "a", 1);
  st.submit(ids[1], "a", 1);
  st.submit(ids[2], "a", 0);
  const auto m = st.merge_to_precision("r");
  EXPECT_NEAR(m.r.at(4), 2.0 / 3.0, 1e-15);
  EXPECT_FALSE(m.r.has(3));
  EXPECT_TRUE(std::isnan(m.spread[4]));
}

TEST(Merge, TwoAnnotatorSpread) {
  // Annotator bin means 0.24 and 0.14 give 0.19 +- 0.05.
  test::TempDir dir;
  AnnotationStore st(dir.path());
  st.create_tasks("r", kGrid, samples_in_bin(6, 50), 50);
  const auto ids = task_ids(st, "r", 6);
  for (int i = 0; i < 50; ++i) {
    st.submit(ids[static_cast<std::size_t>(i)], "A", i < 12 ? 1.0 : 0.0);
    st.submit(ids[static_cast<std::size_t>(i)], "B", i < 7 ? 1.0 : 0.0);
  }
  const auto m = st.merge_to_precision("r");
  EXPECT_NEAR(m.r.at(6), 0.19, 1e-12);
  EXPECT_NEAR(m.spread[6], 0.05, 1e-12);
  ASSERT_EQ(m.bins.size(), 1u);
  EXPECT_NEAR(m.bins[0].annotator_means.at("A"), 0.24, 1e-12);
  EXPECT_EQ(m.bins[0].records, 100u);
}

TEST(Merge, TwoLevelMeanWithUnequalCoverage) {
  test::TempDir dir;
  AnnotationStore st(dir.path());
  st.create_tasks("r", kGrid, samples_in_bin(1, 2), 30);
  const auto ids = task_ids(st, "r", 1);
  st.submit(ids[0], "a", 1.0);
  st.submit(ids[0], "b", 0.0);  // task mean 0.5
  st.submit(ids[1], "a", 1.0);  // task mean 1.0
  EXPECT_NEAR(st.merge_to_precision("r").r.at(1), 0.75, 1e-15);
}

TEST(Merge, PermutationInvariant) {
  std::vector<std::tuple<int, std::string, double>> subs;
  std::mt19937 gen(3);
  std::uniform_real_distribution<double> u(0, 1);
  for (int t = 0; t < 20; ++t) {
    for (const char* who : {"a", "b", "c"}) subs.emplace_back(t, who, u(gen));
  }
  std::optional<MergedPrecision> first;
  for (int perm = 0; perm < 5; ++perm) {
    std::shuffle(subs.begin(), subs.end(), gen);
    test::TempDir dir;
    AnnotationStore st(dir.path());
    auto s = samples_in_bin(2, 10);
    auto s2 = samples_in_bin(8, 10, 100);
    s.insert(s.end(), s2.begin(), s2.end());
    st.create_tasks("r", kGrid, s, 30);
    const auto all = st.tasks("r");
    for (const auto& [t, who, score] : subs) st.submit(all[static_cast<std::size_t>(t)].task_id, who, score);
    const auto m = st.merge_to_precision("r");
    if (!first) {
      first = m;
      continue;
    }
    for (int b : {2, 8}) {
      EXPECT_NEAR(m.r.at(b), first->r.at(b), 1e-15);
      EXPECT_NEAR(m.spread[static_cast<std::size_t>(b)], first->spread[static_cast<std::size_t>(b)], 1e-15);
    }
  }
}

TEST(AutoAnnotate, ReproducesExactPrecision) {
  // Every input of {0..9}^2 as a task, so bin means are exact.
  const SumEnergy m(InputSpace(10, 2));
  const BinGrid grid(0, 19, 1);
  std::vector<SampledInput> all;
  enumerate(m.space(), [&](const Sequence& s) {
    all.push_back({s, m.score(s), grid.bin_of(m.score(s)), std::nullopt, 0});
    return true;
  });
  test::TempDir dir;
  AnnotationStore st(dir.path());
  st.create_tasks("r", grid, all, 30);
  const ModuloAnnotator mod(3);
  EXPECT_EQ(st.auto_annotate("r", mod), 100u);
  EXPECT_EQ(st.auto_annotate("r", mod), 0u);  // idempotent
  const auto merged = st.merge_to_precision("r");
  const auto exact = exact_precision_per_bin(m, mod, grid);
  EXPECT_EQ(merged.r.r, exact.r);
  EXPECT_EQ(st.records("r").front().annotator_id, "oracle:" + mod.name());

  AnnotationStore empty_store(dir.str("other"));
  empty_store.create_tasks("e", grid, {}, 30);
  EXPECT_EQ(empty_store.auto_annotate("e", mod), 0u);
}

TEST(ExportImport, ByteIdenticalRoundTrip) {
  test::TempDir dir;
  const auto samples = samples_in_bin(2, 5);
  AnnotationStore a(dir.str("a"));
  a.create_tasks("r", kGrid, samples, 30);
  const auto ids = task_ids(a, "r", 2);
  a.submit(ids[3], "z", 0.125);
  a.submit(ids[0], "b", 1.0);
  a.submit(ids[0], "a", 0.0);
  a.submit(ids[0], "a", 0.5);
  std::ostringstream ea;
  a.export_jsonl("r", ea);
  const std::string exported = ea.str();
  EXPECT_EQ(std::count(exported.begin(), exported.end(), '\n'), 3);
  const auto first_line = json::parse(ea.str().substr(0, ea.str().find('\n')));
  EXPECT_TRUE(first_line.contains("ts"));

  AnnotationStore b(dir.str("b"));
  b.create_tasks("r", kGrid, samples, 30);
  std::istringstream in(ea.str());
  EXPECT_EQ(b.import_jsonl(in), 3u);
  std::ostringstream eb;
  b.export_jsonl("r", eb);
  EXPECT_EQ(ea.str(), eb.str());

  a.compact();
  AnnotationStore reopened(dir.str("a"));
  std::ostringstream ec;
  reopened.export_jsonl("r", ec);
  EXPECT_EQ(ea.str(), ec.str());
  const auto compacted = test::slurp(dir.str("a/annotations.jsonl"));
  EXPECT_EQ(std::count(compacted.begin(), compacted.end(), '\n'), 3);
}

TEST(NextTask, PrefersBinsWithFewestDoneTasks) {
  test::TempDir dir;
  AnnotationStore st(dir.path());
  auto s = samples_in_bin(1, 3);
  auto s2 = samples_in_bin(4, 3, 50);
  s.insert(s.end(), s2.begin(), s2.end());
  st.create_tasks("r", kGrid, s, 30);
  const auto first = st.next_task("r", "a");
  ASSERT_TRUE(first.has_value());
  EXPECT_EQ(first->bin, 1);
  st.submit(first->task_id, "a", 1.0);
  EXPECT_EQ(st.next_task("r", "a")->bin, 4);
  for (const auto& t : st.tasks("r")) st.submit(t.task_id, "a", 0.0);
  EXPECT_FALSE(st.next_task("r", "a").has_value());
}

TEST(Terminal, ScoresSkipsAndQuits) {
  test::TempDir dir;
  AnnotationStore st(dir.path());
  st.create_tasks("r", kGrid, samples_in_bin(2, 4), 30, json::object(),
                  [](const Sequence& seq) { return "seq" + std::to_string(seq[3]); });
  std::istringstream in("0.5\nbanana\n2\ns\n1\nq\n");
  std::ostringstream out;
  EXPECT_EQ(terminal_annotate(st, "r", "t", in, out), 2u);
  EXPECT_NE(out.str().find("seq0"), std::string::npos);
  EXPECT_NE(out.str().find("outside [0, 1]"), std::string::npos);
  const auto recs = st.records("r");
  ASSERT_EQ(recs.size(), 2u);
}

class HttpApi : public ::testing::Test {
 protected:
  void SetUp() override {
    store_ = std::make_unique<AnnotationStore>(dir_.path());
    auto s = samples_in_bin(1, 2);
    auto s2 = samples_in_bin(3, 1, 10);
    s.insert(s.end(), s2.begin(), s2.end());
    store_->create_tasks("run", kGrid, s, 2);
    server_ = std::make_unique<AnnotationServer>(*store_);
    port_ = server_->bind("127.0.0.1", 0);
    thread_ = std::thread([this] { server_->listen(); });
    client_ = std::make_unique<httplib::Client>("127.0.0.1", port_);
    for (int i = 0; i < 200 && !client_->Get("/api/runs"); ++i) {
      std::this_thread::sleep_for(std::chrono::milliseconds(10));
    }
  }
  void TearDown() override {
    server_->stop();
    thread_.join();
  }

  httplib::Result post(const json& body) {
    return client_->Post("/api/annotations", body.dump(), "application/json");
  }

  test::TempDir dir_;
  std::unique_ptr<AnnotationStore> store_;
  std::unique_ptr<AnnotationServer> server_;
  std::unique_ptr<httplib::Client> client_;
  std::thread thread_;
  int port_ = 0;
};

TEST_F(HttpApi, FullAnnotationFlow) {
  auto runs = client_->Get("/api/runs");
  ASSERT_TRUE(runs);
  ASSERT_EQ(runs->status, 200);
  const auto rj = json::parse(runs->body);
  ASSERT_EQ(rj.size(), 1u);
  EXPECT_EQ(rj[0].at("run_id"), "run");
  EXPECT_EQ(rj[0].at("tasks"), 3);

  int served = 0;
  while (true) {
    auto next = client_->Get("/api/tasks/next?annotator=ann&run=run");
    ASSERT_TRUE(next);
    if (next->status == 204) break;
    ASSERT_EQ(next->status, 200);
    const auto t = json::parse(next->body);
    EXPECT_EQ(t.at("status"), "PENDING");
    EXPECT_EQ(t.at("bin_hi").get<double>() - t.at("bin_lo").get<double>(), 1.0);
    auto ack = post({{"task_id", t.at("task_id")}, {"annotator_id", "ann"}, {"score", served % 2}});
    ASSERT_TRUE(ack);
    EXPECT_EQ(ack->status, 200);
    EXPECT_EQ(json::parse(ack->body).at("annotator_id"), "ann");
    ASSERT_LT(++served, 10);
  }
  EXPECT_EQ(served, 3);

  auto progress = client_->Get("/api/progress?run=run");
  ASSERT_TRUE(progress);
  const auto pj = json::parse(progress->body);
  ASSERT_EQ(pj.at("bins").size(), 2u);
  EXPECT_EQ(pj["bins"][0].at("done"), 2);
  EXPECT_EQ(pj["bins"][0].at("quota"), 2);
  EXPECT_EQ(pj["bins"][1].at("underfilled"), true);

  auto summary = client_->Get("/api/summary?run=run");
  ASSERT_TRUE(summary);
  const auto sj = json::parse(summary->body);
  EXPECT_EQ(sj.at("bins").size(), 2u);
  // Served bin 1, then the empty bin 3, then bin 1 again; scores 0, 1, 0.
  EXPECT_EQ(sj["bins"][0].at("mean"), 0.0);
  EXPECT_EQ(sj["bins"][1].at("mean"), 1.0);
}

TEST_F(HttpApi, ErrorsAreJson) {
  const auto id = store_->tasks("run").front().task_id;
  auto bad_score = post({{"task_id", id}, {"annotator_id", "x"}, {"score", 1.5}});
  ASSERT_TRUE(bad_score);
  EXPECT_EQ(bad_score->status, 400);
  EXPECT_EQ(json::parse(bad_score->body).at("error"), "invalid_score");
  auto unknown = post({{"task_id", "nope"}, {"annotator_id", "x"}, {"score", 0.5}});
  EXPECT_EQ(unknown->status, 404);
  EXPECT_EQ(json::parse(unknown->body).at("error"), "unknown_task");
  auto bad_run = client_->Get("/api/progress?run=zzz");
  EXPECT_EQ(bad_run->status, 404);
  auto missing = client_->Get("/api/tasks/next?run=run");
  EXPECT_EQ(missing->status, 400);
  auto garbage = client_->Post("/api/annotations", "{not json", "application/json");
  EXPECT_EQ(garbage->status, 400);
  EXPECT_TRUE(json::parse(garbage->body).contains("message"));
}
