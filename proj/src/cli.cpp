#include "omniinput/cli.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <thread>

#include <CLI11.hpp>
#include <json.hpp>

#include "omniinput/annotation.hpp"
#include "omniinput/comparison.hpp"
#include "omniinput/evaluator.hpp"
#include "omniinput/external_model.hpp"
#include "omniinput/models.hpp"
#include "omniinput/oracle.hpp"
#include "omniinput/samplers.hpp"

namespace omni::cli {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

constexpr const char* kVersion = "0.1.0";
#ifndef OMNI_GIT_DESCRIBE
#define OMNI_GIT_DESCRIBE "unknown"
#endif

struct Common {
  std::string model = "sum";
  int length = 4;
  int max_token = 9;
  std::string grid;
  std::uint64_t seed = 1;
  int threads = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  std::string out = "out";
};

void add_model_options(CLI::App* cmd, Common& c) {
  cmd->add_option("--model", c.model, "sum[:offset] | ngram:<path>[:order[:alpha]] | external:<cmd> | band:<lo>:<hi>")
      ->capture_default_str();
  cmd->add_option("--D", c.length, "sequence length")->capture_default_str();
  cmd->add_option("--N", c.max_token, "largest token id")->capture_default_str();
}

void add_run_options(CLI::App* cmd, Common& c) {
  add_model_options(cmd, c);
  cmd->add_option("--grid", c.grid, "zmin,zmax,dz (default: integer bins over the model range)");
  cmd->add_option("--seed", c.seed, "random seed")->capture_default_str();
  cmd->add_option("--threads", c.threads, "worker threads")->capture_default_str();
  cmd->add_option("--out", c.out, "output directory (OMNIINPUT_OUT overrides)")->capture_default_str();
}

std::string resolved_out(const Common& c) {
  if (const char* env = std::getenv("OMNIINPUT_OUT"); env && *env) return env;
  return c.out;
}

BinGrid resolve_grid(const Common& c, const ModelSpec& spec) {
  if (!c.grid.empty()) return BinGrid::parse(c.grid);
  if (auto g = default_grid(spec)) return *g;
  throw ConfigError("grid", "required for model " + spec.spec);
}

ModelSpec spec_of(const Common& c) { return {c.model, c.length, c.max_token}; }

json run_manifest(const std::string& command, const ModelSpec& spec, const EnergyModel& model,
                  const BinGrid& grid, const Common& c, const std::vector<std::string>& argv) {
  ModelSpec actual = spec;
  actual.max_token = model.space().max_token();
  return {{"tool", "omniinput"},
          {"version", kVersion},
          {"git_describe", OMNI_GIT_DESCRIBE},
          {"command", command},
          {"argv", argv},
          {"model", actual.to_json()},
          {"model_name", model.name()},
          {"direction", to_string(model.direction())},
          {"grid", grid.to_json()},
          {"seed", c.seed},
          {"threads", c.threads},
          {"created", utc_timestamp()}};
}

void write_json_file(const fs::path& path, const json& j) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot write " + path.string());
  f << j.dump(2) << '\n';
}

json read_json_file(const fs::path& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot read " + path.string());
  try {
    return json::parse(f);
  } catch (const json::exception& e) {
    throw IoError(path.string() + ": " + e.what());
  }
}

fs::path prepare_out(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir + ": " + ec.message());
  return fs::path(dir);
}

// A run directory produced by `enumerate` or `sample`.
struct Run {
  fs::path dir;
  json manifest;
  OutputDistribution hist;
  ModelSpec spec;
  Direction direction;

  std::string id() const {
    auto name = fs::weakly_canonical(dir).filename().string();
    return name.empty() ? "run" : name;
  }
  std::string source() const { return manifest.value("source", std::string()); }
  fs::path store_dir(const std::string& override_dir) const {
    return override_dir.empty() ? dir / "annotations" : fs::path(override_dir);
  }
  std::vector<SampledInput> samples() const {
    std::ifstream in(dir / "samples.jsonl");
    if (!in) {
      throw IoError("run " + dir.string() + " has no samples.jsonl (enumeration runs have no samples)");
    }
    return read_samples_jsonl(in);
  }
};

Run load_run(const std::string& dir) {
  json hist_manifest;
  auto hist = load_histogram((fs::path(dir) / "histogram").string(), &hist_manifest);
  auto manifest = read_json_file(fs::path(dir) / "manifest.json");
  return Run{fs::path(dir), manifest, std::move(hist), ModelSpec::from_json(manifest.at("model")),
             direction_from_string(manifest.at("direction").get<std::string>())};
}

std::vector<std::string> argv_vector(int argc, const char* const* argv) {
  return std::vector<std::string>(argv, argv + argc);
}

// ------------------------------------------------------------- enumerate

struct EnumerateOpts {
  Common c;
  std::string oracle;
  std::uint64_t cap = 100'000'000;
  bool dp = false;
};

int cmd_enumerate(const EnumerateOpts& o, const std::vector<std::string>& argv, std::ostream& out,
                  std::ostream& err) {
  const auto spec = spec_of(o.c);
  const auto model = make_model(spec);
  const auto grid = resolve_grid(o.c, spec);
  const auto dir = prepare_out(resolved_out(o.c));
  auto manifest = run_manifest("enumerate", spec, *model, grid, o.c, argv);

  std::optional<OutputDistribution> rho;
  std::optional<PrecisionPerBin> r;
  std::string method = "enumeration";
  const auto* sum = dynamic_cast<const SumEnergy*>(model.get());
  if (o.dp && sum && o.oracle.empty()) {
    rho = sum_energy_dp(*sum, grid);
    method = "dp";
  } else {
    EnumerationOptions eo;
    eo.cap = o.cap;
    eo.threads = o.c.threads;
    eo.progress = [&err](std::uint64_t done, std::uint64_t total) {
      err << json{{"progress", done}, {"total", total}}.dump() << '\n';
    };
    std::unique_ptr<OracleAnnotator> oracle;
    if (!o.oracle.empty()) oracle = make_oracle(o.oracle);
    auto tables = enumerate_exact(*model, grid, oracle.get(), eo);
    rho = std::move(tables.rho);
    r = std::move(tables.r);
    manifest["out_of_range"] = tables.out_of_range;
  }
  manifest["source"] = "enumeration";
  manifest["method"] = method;
  write_json_file(dir / "manifest.json", manifest);
  save_histogram((dir / "histogram").string(), *rho, model->name(), "enumeration",
                 {{"run", manifest}});
  if (r) {
    std::ofstream f(dir / "precision_exact.csv");
    write_precision_csv(f, *r);
  }
  int nonzero = 0;
  for (int k = 0; k < rho->bin_count(); ++k) nonzero += rho->has_mass(k) ? 1 : 0;
  out << json{{"out", dir.string()}, {"bins", rho->bin_count()}, {"nonzero_bins", nonzero},
              {"method", method}}
             .dump()
      << '\n';
  return 0;
}

// ---------------------------------------------------------------- sample

struct SampleOpts {
  Common c;
  std::string algo = "wl";
  std::string kernel = "uniform";
  int reservoir = 30;
  // Wang-Landau
  WLConfig wl;
  // Parallel tempering
  std::vector<double> temps;
  double tmax = 50.0;
  double tmin = 1.0;
  int replicas = 8;
  std::uint64_t steps = 200'000;
  std::uint64_t swap_interval = 10;
  std::uint64_t burn_in = 0;
  bool mean_energy = false;
};

int cmd_sample(const SampleOpts& o, const std::vector<std::string>& argv, std::ostream& out,
               std::ostream& err) {
  const auto spec = spec_of(o.c);
  const auto model = make_model(spec);
  const auto grid = resolve_grid(o.c, spec);
  const auto kernel = ProposalKernel::parse(o.kernel);
  kernel.validate(model->space());
  const auto dir = prepare_out(resolved_out(o.c));
  auto manifest = run_manifest("sample", spec, *model, grid, o.c, argv);
  manifest["source"] = "sampling";
  manifest["algo"] = o.algo;
  manifest["kernel"] = kernel.to_json();

  std::vector<std::string> warnings;
  if (grid.bin_count_outside_typical_range()) {
    warnings.push_back("grid has " + std::to_string(grid.bin_count()) +
                       " bins; the reference experiments used 150-600");
  }

  std::optional<OutputDistribution> hist;
  std::optional<BinReservoir> reservoir;
  json diagnostics;
  if (o.algo == "wl") {
    WLConfig cfg = o.wl;
    cfg.reservoir_capacity = o.reservoir;
    cfg.validate();
    manifest["config"] = cfg.to_json();
    auto res = wang_landau_run(*model, grid, kernel, cfg, o.c.seed);
    diagnostics = res.diagnostics.to_json();
    for (const auto& w : res.diagnostics.warnings) warnings.push_back(w);
    hist = std::move(res.entropy);
    reservoir = std::move(res.reservoir);
  } else if (o.algo == "pt") {
    PTConfig cfg;
    cfg.temperatures = o.temps.empty() ? PTConfig::geometric_ladder(o.tmax, o.tmin, o.replicas) : o.temps;
    cfg.steps_per_replica = o.steps;
    cfg.swap_interval = o.swap_interval;
    cfg.burn_in = o.burn_in;
    cfg.threads = o.c.threads;
    cfg.reservoir_capacity = o.reservoir;
    cfg.validate();
    manifest["config"] = cfg.to_json();
    auto res = pt_run(*model, grid, kernel, cfg, o.c.seed);
    diagnostics = res.diagnostics();
    for (const auto& w : res.warnings) warnings.push_back(w);
    ReweightOptions ro;
    ro.use_mean_energy = o.mean_energy;
    hist = reweight(res.histograms, grid, model->direction(), ro);
    json per_t = json::array();
    for (const auto& h : res.histograms) {
      per_t.push_back({{"temperature", h.temperature}, {"counts", h.counts}, {"mean_z", h.mean_z}});
    }
    write_json_file(dir / "tempered_histograms.json", per_t);
    reservoir = std::move(res.reservoir);
  } else {
    throw ConfigError("algo", "must be wl or pt");
  }
  diagnostics["warnings"] = warnings;
  write_json_file(dir / "manifest.json", manifest);
  write_json_file(dir / "diagnostics.json", diagnostics);
  save_histogram((dir / "histogram").string(), *hist, model->name(), "sampling:" + o.algo,
                 {{"run", manifest}});
  {
    std::ofstream f(dir / "samples.jsonl");
    write_reservoir_jsonl(f, *reservoir);
  }
  for (const auto& w : warnings) err << json{{"warning", w}}.dump() << '\n';
  out << json{{"out", dir.string()}, {"samples", reservoir->total_size()}, {"warnings", warnings.size()}}
             .dump()
      << '\n';
  return 0;
}

// -------------------------------------------------------------- annotate

struct AnnotateOpts {
  std::vector<std::string> runs;
  std::string store;
  std::string oracle = "modulo:30";
  int quota = 30;
  int annotators_per_task = 1;
  std::string host = "127.0.0.1";
  int port = 8080;
  std::string ui;
  std::string annotator;
  std::string file;
};

// Creates tasks for the run unless it is already registered.
RunInfo ensure_tasks(AnnotationStore& store, const Run& run, int quota, int annotators_per_task) {
  for (const auto& r : store.runs()) {
    if (r.run_id == run.id()) return r;
  }
  const auto samples = run.samples();
  std::function<std::string(const Sequence&)> detok;
  if (run.spec.spec.rfind("ngram:", 0) == 0) detok = detokenizer(*make_model(run.spec));
  return store.create_tasks(run.id(), run.hist.grid, samples, quota, run.manifest, detok,
                            annotators_per_task);
}

int cmd_annotate_oracle(const AnnotateOpts& o, std::ostream& out) {
  const auto run = load_run(o.runs.at(0));
  AnnotationStore store(run.store_dir(o.store).string());
  const auto info = ensure_tasks(store, run, o.quota, o.annotators_per_task);
  const auto oracle = make_oracle(o.oracle);
  const auto n = store.auto_annotate(run.id(), *oracle);
  out << json{{"run", run.id()}, {"annotated", n}, {"tasks", store.tasks(run.id()).size()},
              {"underfilled", info.underfilled}}
             .dump()
      << '\n';
  return 0;
}

int cmd_annotate_serve(const AnnotateOpts& o, std::ostream& out) {
  const auto first = load_run(o.runs.at(0));
  AnnotationStore store(first.store_dir(o.store).string());
  for (const auto& dir : o.runs) ensure_tasks(store, load_run(dir), o.quota, o.annotators_per_task);
  AnnotationServer server(store, o.ui.empty() ? std::nullopt : std::optional(o.ui));
  const int port = server.bind(o.host, o.port);
  out << json{{"listening", "http://" + o.host + ":" + std::to_string(port)}}.dump() << std::endl;
  server.listen();
  return 0;
}

int cmd_annotate_terminal(const AnnotateOpts& o, std::ostream& out) {
  if (o.annotator.empty()) throw ConfigError("annotator", "required");
  const auto run = load_run(o.runs.at(0));
  AnnotationStore store(run.store_dir(o.store).string());
  ensure_tasks(store, run, o.quota, o.annotators_per_task);
  const auto n = terminal_annotate(store, run.id(), o.annotator, std::cin, out);
  out << json{{"submitted", n}}.dump() << '\n';
  return 0;
}

int cmd_annotate_export(const AnnotateOpts& o, std::ostream& out) {
  const auto run = load_run(o.runs.at(0));
  AnnotationStore store(run.store_dir(o.store).string());
  if (o.file.empty()) {
    store.export_jsonl(run.id(), out);
  } else {
    std::ofstream f(o.file);
    if (!f) throw IoError("cannot write " + o.file);
    store.export_jsonl(run.id(), f);
  }
  return 0;
}

int cmd_annotate_import(const AnnotateOpts& o, std::ostream& out) {
  if (o.file.empty()) throw ConfigError("file", "required");
  const auto run = load_run(o.runs.at(0));
  AnnotationStore store(run.store_dir(o.store).string());
  ensure_tasks(store, run, o.quota, o.annotators_per_task);
  std::ifstream f(o.file);
  if (!f) throw IoError("cannot read " + o.file);
  const auto n = store.import_jsonl(f);
  out << json{{"imported", n}}.dump() << '\n';
  return 0;
}

// -------------------------------------------------------------------- pr

struct PrOpts {
  std::string run;
  std::string oracle;
  std::string window;
  std::string store;
  int quota = 30;
  std::uint64_t cap = 100'000'000;
  int threads = 1;
};

int cmd_pr(const PrOpts& o, std::ostream& out) {
  const auto run = load_run(o.run);
  const auto& grid = run.hist.grid;
  const Window window = o.window.empty() ? full_window(grid) : Window::parse(o.window);

  std::optional<PrecisionPerBin> r;
  std::vector<double> spread;
  std::string source;
  json underfilled = json::array();
  if (run.source() == "enumeration") {
    if (o.oracle.empty()) throw ConfigError("oracle", "required for enumeration runs");
    const auto model = make_model(run.spec);
    const auto oracle = make_oracle(o.oracle);
    EnumerationOptions eo;
    eo.cap = o.cap;
    eo.threads = o.threads;
    r = exact_precision_per_bin(*model, *oracle, grid, eo);
    source = "exact:" + o.oracle;
  } else {
    AnnotationStore store(run.store_dir(o.store).string());
    const auto info = ensure_tasks(store, run, o.quota, 1);
    underfilled = info.underfilled;
    if (!o.oracle.empty()) store.auto_annotate(run.id(), *make_oracle(o.oracle));
    auto merged = store.merge_to_precision(run.id());
    r = std::move(merged.r);
    spread = std::move(merged.spread);
    source = o.oracle.empty() ? "annotations" : "annotations:oracle:" + o.oracle;
  }

  const auto curve = pr_curve(*r, run.hist, run.direction, window);
  {
    std::ofstream f(run.dir / "pr.csv");
    write_pr_csv(f, curve);
  }
  {
    std::ofstream f(run.dir / "precision.csv");
    write_precision_csv(f, *r, spread.empty() ? nullptr : &spread);
  }
  const double area = aupr(curve);
  json j = {{"run", run.manifest},
            {"window", window.to_json()},
            {"direction", to_string(run.direction)},
            {"precision_source", source},
            {"aupr", area},
            {"log_window_mass", curve.log_window_mass == kNegInf ? json() : json(curve.log_window_mass)},
            {"underfilled", underfilled},
            {"plot", pr_plot_json(curve, run.id())}};
  write_json_file(run.dir / "pr.json", j);
  out << json{{"run", run.id()}, {"aupr", area}, {"points", curve.points.size()}}.dump() << '\n';
  return 0;
}

// --------------------------------------------------------------- compare

struct CompareOpts {
  std::string run1;
  std::string run2;
  std::string window;
  std::string out = "compare";
};

OverlapCount run_overlap(const Run& run, const EnergyModel& other, const Window& window) {
  const auto samples = run.samples();
  return weighted_overlap_count(samples, run.hist, window, other);
}

std::optional<PRCurve> run_curve(const Run& run, const Window& window) {
  if (!fs::exists(run.dir / "pr.csv") || !fs::exists(run.dir / "pr.json")) return std::nullopt;
  const auto meta = read_json_file(run.dir / "pr.json");
  const Window w{meta.at("window").at(0).get<double>(), meta.at("window").at(1).get<double>()};
  if (!(w == window)) return std::nullopt;
  std::ifstream f(run.dir / "pr.csv");
  auto curve = read_pr_csv(f);
  curve.window = w;
  curve.direction = run.direction;
  if (meta.contains("log_window_mass") && !meta["log_window_mass"].is_null()) {
    curve.log_window_mass = meta["log_window_mass"].get<double>();
  }
  return curve;
}

int cmd_compare(const CompareOpts& o, std::ostream& out) {
  const auto a = load_run(o.run1);
  const auto b = load_run(o.run2);
  const Window window = Window::parse(o.window);
  const auto model_a = make_model(a.spec);
  const auto model_b = make_model(b.spec);
  if (!(model_a->space() == model_b->space())) {
    throw InvalidArgument("models under comparison must share one input space");
  }

  OverlapReport report;
  report.window = window;
  const auto oa = run_overlap(a, *model_b, window);
  const auto ob = run_overlap(b, *model_a, window);
  report.first = {a.id(), oa.n, oa.x};
  report.second = {b.id(), ob.n, ob.x};
  const auto scales = normalized_scales(report);

  const auto dir = prepare_out(o.out);
  json j = report.to_json();
  j["runs"] = {a.manifest, b.manifest};
  const auto ca = run_curve(a, window);
  const auto cb = run_curve(b, window);
  if (ca && cb) {
    const std::vector<NamedCurve> curves{{a.id(), *ca}, {b.id(), *cb}};
    const auto overlay = overlay_pr(curves, report);
    j["overlay"] = overlay.to_json();
    std::ofstream f(dir / "overlay.csv");
    write_overlay_csv(f, overlay);
  } else {
    j["overlay"] = nullptr;
    j["overlay_note"] = "run pr with --window " + o.window + " on both runs to overlay PR curves";
  }
  write_json_file(dir / "compare.json", j);
  out << json{{"ratio", scales.ratio},
              {"rho_hat", {scales.rho_hat_first, scales.rho_hat_second}},
              {"out", dir.string()}}
             .dump()
      << '\n';
  return 0;
}

// ---------------------------------------------------------------- report

struct ReportOpts {
  std::vector<std::string> runs;
  std::string compare;
  std::string out;
};

int cmd_report(const ReportOpts& o, std::ostream& out) {
  const auto dir = prepare_out(o.out.empty() ? o.runs.at(0) : o.out);
  json runs = json::array();
  for (const auto& path : o.runs) {
    const auto run = load_run(path);
    const auto& h = run.hist;
    double top = kNegInf;
    for (double v : h.log_counts) top = std::max(top, v);
    json entropy = {{"bin_mid", json::array()}, {"entropy", json::array()}};
    const auto csv_path = dir / ("entropy-" + run.id() + ".csv");
    std::ofstream csv(csv_path);
    csv << "bin_lo,bin_hi,entropy\n" << std::setprecision(17);
    for (int k = 0; k < h.bin_count(); ++k) {
      if (!h.has_mass(k)) continue;
      const double s = h.log_counts[static_cast<std::size_t>(k)] - top;
      entropy["bin_mid"].push_back(h.grid.mid(k));
      entropy["entropy"].push_back(s);
      csv << h.grid.lo(k) << ',' << h.grid.hi(k) << ',' << s << '\n';
    }
    json entry = {{"run", run.id()}, {"manifest", run.manifest}, {"entropy", entropy},
                  {"entropy_csv", csv_path.string()}};
    if (fs::exists(run.dir / "diagnostics.json")) {
      entry["diagnostics"] = read_json_file(run.dir / "diagnostics.json");
    }
    if (fs::exists(run.dir / "pr.json")) {
      const auto pr = read_json_file(run.dir / "pr.json");
      entry["pr"] = pr.at("plot");
      entry["aupr"] = pr.at("aupr");
    }
    runs.push_back(entry);
  }
  json report = {{"runs", runs}};
  if (!o.compare.empty()) report["comparison"] = read_json_file(o.compare);
  write_json_file(dir / "report.json", report);
  json summary = json::array();
  for (const auto& r : runs) {
    summary.push_back({{"run", r.at("run")}, {"aupr", r.value("aupr", json())}});
  }
  out << json{{"report", (dir / "report.json").string()}, {"runs", summary}}.dump() << '\n';
  return 0;
}

// ----------------------------------------------------------- serve-model

int cmd_serve_model(const Common& c, std::ostream& out) {
  const auto model = make_model(spec_of(c));
  wire::serve(*model, std::cin, out);
  return 0;
}

void print_error(std::ostream& err, const std::string& code, const std::string& message,
                 const std::string& field = "") {
  json j = {{"error", code}, {"message", message}};
  if (!field.empty()) j["field"] = field;
  err << j.dump() << '\n';
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Whole-input-space precision-recall estimation for discrete-input models",
               "omniinput"};
  app.set_config("--config", "", "key = value file; [section] names a subcommand");
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);

  const auto args = argv_vector(argc, argv);
  std::function<int()> action;

  EnumerateOpts en;
  auto* enumerate_cmd = app.add_subcommand("enumerate", "exact rho(z) by full enumeration");
  add_run_options(enumerate_cmd, en.c);
  enumerate_cmd->add_option("--oracle", en.oracle, "also write the exact precision per bin");
  enumerate_cmd->add_option("--cap", en.cap, "largest space to enumerate")->capture_default_str();
  enumerate_cmd->add_flag("--dp", en.dp, "use the dynamic-programming path for sum models");
  enumerate_cmd->callback([&] { action = [&] { return cmd_enumerate(en, args, out, err); }; });

  SampleOpts sa;
  auto* sample_cmd = app.add_subcommand("sample", "estimate rho(z) and collect inputs per bin");
  add_run_options(sample_cmd, sa.c);
  sample_cmd->add_option("--algo", sa.algo, "wl | pt")
      ->check(CLI::IsMember({"wl", "pt"}))
      ->capture_default_str();
  sample_cmd->add_option("--kernel", sa.kernel, "uniform[:sites] | informed[:lo:hi[:sites]]")
      ->capture_default_str();
  sample_cmd->add_option("--reservoir", sa.reservoir, "inputs kept per bin")->capture_default_str();
  sample_cmd->add_option("--log-f", sa.wl.initial_log_f, "WL initial ln f")->capture_default_str();
  sample_cmd->add_option("--flatness", sa.wl.flatness_ratio, "WL flatness ratio")->capture_default_str();
  sample_cmd->add_option("--log-f-floor", sa.wl.log_f_floor, "WL final ln f")->capture_default_str();
  sample_cmd->add_option("--check-interval", sa.wl.check_interval, "WL steps between flatness checks")
      ->capture_default_str();
  sample_cmd->add_option("--max-steps", sa.wl.max_steps, "WL step budget")->capture_default_str();
  sample_cmd->add_option("--temps", sa.temps, "PT ladder, comma separated")->delimiter(',');
  sample_cmd->add_option("--tmax", sa.tmax, "PT hottest temperature")->capture_default_str();
  sample_cmd->add_option("--tmin", sa.tmin, "PT coldest temperature")->capture_default_str();
  sample_cmd->add_option("--replicas", sa.replicas, "PT ladder size")->capture_default_str();
  sample_cmd->add_option("--steps", sa.steps, "PT steps per replica")->capture_default_str();
  sample_cmd->add_option("--swap-interval", sa.swap_interval, "PT steps between swaps")
      ->capture_default_str();
  sample_cmd->add_option("--burn-in", sa.burn_in, "PT steps discarded per replica")->capture_default_str();
  sample_cmd->add_flag("--mean-energy", sa.mean_energy, "reweight with per-bin mean z");
  sample_cmd->callback([&] { action = [&] { return cmd_sample(sa, args, out, err); }; });

  AnnotateOpts an;
  auto* annotate_cmd = app.add_subcommand("annotate", "annotation tasks, service and oracle");
  annotate_cmd->require_subcommand(1);
  auto add_annotate_common = [&](CLI::App* cmd) {
    cmd->add_option("--run", an.runs, "run directory")->required();
    cmd->add_option("--store", an.store, "annotation store (default <run>/annotations)");
    cmd->add_option("--quota", an.quota, "tasks per bin")->capture_default_str();
    cmd->add_option("--annotators-per-task", an.annotators_per_task,
                    "distinct annotators before a task is done")
        ->capture_default_str();
  };
  auto* an_oracle = annotate_cmd->add_subcommand("oracle", "score every pending task with an oracle");
  add_annotate_common(an_oracle);
  an_oracle->add_option("--oracle", an.oracle, "modulo[:m]")->capture_default_str();
  an_oracle->callback([&] { action = [&] { return cmd_annotate_oracle(an, out); }; });
  auto* an_serve = annotate_cmd->add_subcommand("serve", "HTTP annotation service");
  add_annotate_common(an_serve);
  an_serve->add_option("--host", an.host)->capture_default_str();
  an_serve->add_option("--port", an.port)->capture_default_str();
  an_serve->add_option("--ui", an.ui, "directory of UI assets served at /");
  an_serve->callback([&] { action = [&] { return cmd_annotate_serve(an, out); }; });
  auto* an_term = annotate_cmd->add_subcommand("terminal", "annotate on the terminal");
  add_annotate_common(an_term);
  an_term->add_option("--annotator", an.annotator, "annotator id")->required();
  an_term->callback([&] { action = [&] { return cmd_annotate_terminal(an, out); }; });
  auto* an_export = annotate_cmd->add_subcommand("export", "write annotations as JSONL");
  add_annotate_common(an_export);
  an_export->add_option("--file", an.file, "destination (default stdout)");
  an_export->callback([&] { action = [&] { return cmd_annotate_export(an, out); }; });
  auto* an_import = annotate_cmd->add_subcommand("import", "load annotations from JSONL");
  add_annotate_common(an_import);
  an_import->add_option("--file", an.file, "source")->required();
  an_import->callback([&] { action = [&] { return cmd_annotate_import(an, out); }; });

  PrOpts pr;
  auto* pr_cmd = app.add_subcommand("pr", "precision-recall curve of a run");
  pr_cmd->add_option("--run", pr.run, "run directory")->required();
  pr_cmd->add_option("--oracle", pr.oracle, "annotate with an oracle (modulo[:m])");
  pr_cmd->add_option("--window", pr.window, "zlo,zhi (default: whole grid)");
  pr_cmd->add_option("--store", pr.store, "annotation store (default <run>/annotations)");
  pr_cmd->add_option("--quota", pr.quota, "tasks per bin when creating them")->capture_default_str();
  pr_cmd->add_option("--cap", pr.cap, "largest space to enumerate")->capture_default_str();
  pr_cmd->add_option("--threads", pr.threads, "enumeration threads")->capture_default_str();
  pr_cmd->callback([&] { action = [&] { return cmd_pr(pr, out); }; });

  CompareOpts co;
  auto* compare_cmd = app.add_subcommand("compare", "normalize two runs on a shared window");
  compare_cmd->add_option("--run1", co.run1, "first run directory")->required();
  compare_cmd->add_option("--run2", co.run2, "second run directory")->required();
  compare_cmd->add_option("--window", co.window, "zlo,zhi")->required();
  compare_cmd->add_option("--out", co.out, "output directory (OMNIINPUT_OUT overrides)")
      ->capture_default_str();
  compare_cmd->callback([&] {
    action = [&] {
      if (const char* env = std::getenv("OMNIINPUT_OUT"); env && *env) co.out = env;
      return cmd_compare(co, out);
    };
  });

  ReportOpts re;
  auto* report_cmd = app.add_subcommand("report", "plot data and summaries from on-disk artifacts");
  report_cmd->add_option("--run", re.runs, "run directories")->required();
  report_cmd->add_option("--compare", re.compare, "compare.json to include");
  report_cmd->add_option("--out", re.out, "output directory (default: first run; OMNIINPUT_OUT overrides)");
  report_cmd->callback([&] {
    action = [&] {
      if (const char* env = std::getenv("OMNIINPUT_OUT"); env && *env) re.out = env;
      return cmd_report(re, out);
    };
  });

  Common sm;
  auto* serve_model_cmd = app.add_subcommand("serve-model", "speak the scoring wire protocol on stdio");
  add_model_options(serve_model_cmd, sm);
  serve_model_cmd->callback([&] { action = [&] { return cmd_serve_model(sm, out); }; });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e, out, err);
    print_error(err, "usage", e.what());
    return 2;
  }

  try {
    return action ? action() : 2;
  } catch (const ConfigError& e) {
    print_error(err, e.code(), e.what(), e.field());
  } catch (const Error& e) {
    print_error(err, e.code(), e.what());
  } catch (const std::exception& e) {
    print_error(err, "internal", e.what());
  }
  return 1;
}

}  // namespace omni::cli
