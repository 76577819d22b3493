#include <chanlab/cli/app.hpp>

#include <chanlab/common/errors.hpp>
#include <chanlab/data/synthetic.hpp>
#include <chanlab/lm/checkpoint.hpp>
#include <chanlab/lm/pretrain.hpp>
#include <chanlab/scoring/verbalizer.hpp>
#include <chanlab/verify/verify.hpp>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <fmt/ostream.h>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#ifdef __GLIBC__
#include <malloc.h>
#endif

#ifndef CHANLAB_GIT_REV
#define CHANLAB_GIT_REV "unknown"
#endif

namespace chanlab::cli {
namespace fs = std::filesystem;

void tune_allocator() {
#ifdef __GLIBC__
  mallopt(M_TRIM_THRESHOLD, 256 << 20);
  mallopt(M_MMAP_THRESHOLD, 256 << 20);
  mallopt(M_TOP_PAD, 64 << 20);
#endif
}

namespace {

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw IoError("cannot read " + path.string());
  }
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

void write_file(const fs::path& path, const std::string& text) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) {
    throw IoError("cannot write " + path.string());
  }
}

void check_stamp(const fs::path& dir, const std::string& expected, const std::string& producer) {
  const fs::path stamp = dir / "stamp.json";
  if (!fs::exists(stamp)) {
    throw ConfigError(dir.string() + " is missing; run `chanlab " + producer + "` first");
  }
  if (read_file(stamp) != expected + "\n") {
    throw ConfigError(dir.string() + " was produced by a different configuration; rerun `chanlab " +
                      producer + "`");
  }
}

data::SyntheticOptions task_options(const ExperimentConfig& config) {
  data::SyntheticOptions o = config.task.options;
  o.seed = config.seeds.task;
  return o;
}

std::vector<std::string> read_lines(const fs::path& path) {
  std::istringstream in(read_file(path));
  std::vector<std::string> lines;
  for (std::string line; std::getline(in, line);) {
    lines.push_back(line);
  }
  return lines;
}

std::vector<std::string> all_corpora(const ExperimentConfig& config) {
  std::vector<std::string> corpus;
  for (const auto& name : config.task.names) {
    auto docs = read_lines(fs::path(tasks_dir(config)) / name / "corpus.txt");
    corpus.insert(corpus.end(), docs.begin(), docs.end());
  }
  return corpus;
}

bool tasks_current(const ExperimentConfig& config) {
  const fs::path stamp = fs::path(tasks_dir(config)) / "stamp.json";
  return fs::exists(stamp) && read_file(stamp) == task_stamp(config) + "\n";
}

std::vector<std::string> grid_verbalizers(const ExperimentConfig& config, const harness::Lab& lab,
                                          const std::string& task) {
  if (!config.grid.verbalizers.empty()) {
    for (const auto& v : config.grid.verbalizers) {
      scoring::find_verbalizer(lab.task(task).verbalizers, v);
    }
    return config.grid.verbalizers;
  }
  std::vector<std::string> names;
  for (const auto& v : lab.task(task).verbalizers) {
    names.push_back(v.name);
  }
  return names;
}

harness::ReportMeta report_meta(const ExperimentConfig& config) {
  return {to_json(config), CHANLAB_GIT_REV};
}

// Counts failed cells and prints the summary table of each grid.
int summarize(const std::vector<harness::GridOutcome>& outcomes, std::ostream& out,
              std::ostream& err) {
  std::size_t failed = 0;
  for (const auto& o : outcomes) {
    for (const auto& r : o.results) {
      if (!r.ok()) {
        ++failed;
        fmt::print(err, "cell {} / {} / data {} / train {} failed: {}\n", r.method, r.cell.verbalizer,
                   r.cell.data_seed ? std::to_string(*r.cell.data_seed) : "-",
                   r.cell.train_seed ? std::to_string(*r.cell.train_seed) : "-", r.error);
      }
    }
    if (o.summary) {
      fmt::print(out, "{:<10} {:<6} {:<20} runs {:>3}  avg {:5.1f}  worst {:5.1f}  best {:5.1f}  majority {:5.1f}\n",
                 o.ablation, o.x, o.grid.method.name(), o.summary->runs, 100 * o.summary->avg,
                 100 * o.summary->worst, 100 * o.summary->best, 100 * o.majority);
    } else {
      fmt::print(out, "{:<10} {:<6} {:<20} all cells failed\n", o.ablation, o.x, o.grid.method.name());
    }
  }
  return failed == 0 ? kExitOk : kExitRuntime;
}

std::vector<harness::MethodSpec> selected_methods(const ExperimentConfig& config, bool tuning) {
  std::vector<harness::MethodSpec> methods;
  for (const auto& name : config.grid.methods) {
    auto m = harness::MethodSpec::parse(name);
    if (m.is_tuning() == tuning) {
      methods.push_back(m);
    }
  }
  if (methods.empty()) {
    throw ConfigError(std::string("grid.methods: no ") + (tuning ? "tuning" : "scoring") +
                      " methods selected");
  }
  return methods;
}

int run_grids(const ExperimentConfig& config, bool tuning, const std::string& name,
              std::ostream& out, std::ostream& err) {
  auto methods = selected_methods(config, tuning);
  auto ws = load_workspace(config);
  std::vector<harness::GridOutcome> outcomes;
  for (const auto& m : methods) {
    harness::ExperimentGrid g;
    g.task = config.grid.task;
    g.method = m;
    g.verbalizers = grid_verbalizers(config, ws->lab, g.task);
    g.data_seeds = config.data_seed_list();
    g.train_seeds = config.train_seed_list();
    g.k = config.grid.k;
    g.p_minus = config.grid.p_minus;
    g.upsample = config.grid.upsample;
    g.exclude_label = config.grid.exclude_label;
    g.validate();
    outcomes.push_back(harness::run_outcome(g, ws->lab, config.workers));
  }
  const fs::path dir = fs::path(config.out) / name;
  harness::write_report(outcomes, report_meta(config), dir.string());
  int code = summarize(outcomes, out, err);
  fmt::print(out, "results written to {}\n", dir.string());
  return code;
}

int run_ablate(const ExperimentConfig& config, std::ostream& out, std::ostream& err) {
  const auto kind = harness::parse_ablation_kind(config.ablation.kind);
  auto ws = load_workspace(config);
  harness::AblationParams p;
  p.task = config.grid.task;
  p.target_task = config.ablation.target_task;
  p.verbalizers = grid_verbalizers(config, ws->lab, p.task);
  p.data_seeds = config.data_seed_list();
  p.train_seeds = config.train_seed_list();
  p.k = config.grid.k;
  p.ks = config.ablation.ks;
  p.p_minus = config.ablation.p_minus;
  // Methods the ablation does not apply to are skipped with a note.
  for (const auto& name : config.grid.methods) {
    harness::AblationParams one = p;
    one.methods = {harness::MethodSpec::parse(name)};
    try {
      harness::ablation_grids(kind, one, ws->lab);
      p.methods.push_back(one.methods.front());
    } catch (const ConfigError& e) {
      fmt::print(err, "skipping {}: {}\n", name, e.what());
    }
  }
  if (p.methods.empty()) {
    throw ConfigError("grid.methods: none applies to the " + config.ablation.kind + " ablation");
  }
  auto outcomes = harness::run_ablation(kind, p, ws->lab, config.workers);
  const fs::path dir = fs::path(config.out) / ("ablate-" + config.ablation.kind);
  harness::write_report(outcomes, report_meta(config), dir.string());
  int code = summarize(outcomes, out, err);
  fmt::print(out, "results written to {}\n", dir.string());
  return code;
}

int run_report(const std::string& root, std::ostream& out) {
  std::vector<fs::path> files;
  if (fs::is_directory(root)) {
    for (const auto& e : fs::recursive_directory_iterator(root)) {
      if (e.is_regular_file() && e.path().filename() == "results.jsonl") {
        files.push_back(e.path());
      }
    }
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) {
    throw ConfigError("no results under " + root);
  }
  for (const auto& f : files) {
    fmt::print(out, "== {}\n", f.parent_path().string());
    const fs::path tsv = f.parent_path() / "report.tsv";
    if (fs::exists(tsv)) {
      out << read_file(tsv);
    } else {
      std::ostringstream sink;
      summarize(harness::load_results(f.string()), out, sink);
    }
  }
  return kExitOk;
}

int run_verify(std::ostream& out) {
  bool all = true;
  double total = 0.0;
  for (const auto& c : verify::run_all()) {
    fmt::print(out, "{} {:<34} {:7.2f}s  {}\n", c.passed ? "PASS" : "FAIL", c.name, c.seconds,
               c.detail);
    all = all && c.passed;
    total += c.seconds;
  }
  fmt::print(out, "verify {} in {:.1f}s\n", all ? "passed" : "FAILED", total);
  return all ? kExitOk : kExitRuntime;
}

struct Options {
  std::string config_path;
  std::string out;
  int workers = 0;
  std::optional<std::uint64_t> seed_data;
  std::optional<std::uint64_t> seed_train;
  std::vector<std::string> verbalizers;
  std::vector<std::string> methods;
  std::string kind;
  std::string report_dir;
};

void add_common(CLI::App* sub, Options& o) {
  sub->add_option("--config", o.config_path, "experiment config (JSON)");
  sub->add_option("--out", o.out, "output directory");
  sub->add_option("--workers", o.workers, "parallel grid cells")->check(CLI::PositiveNumber);
  sub->add_option("--seed-data", o.seed_data, "first few-shot sampling seed");
  sub->add_option("--seed-train", o.seed_train, "first tuning seed");
  sub->add_option("--verbalizer", o.verbalizers, "restrict to these verbalizers");
  sub->add_option("--method", o.methods, "restrict to these methods");
}

ExperimentConfig resolve(const Options& o) {
  ExperimentConfig c = o.config_path.empty() ? ExperimentConfig{} : load_config(o.config_path);
  if (!o.out.empty()) c.out = o.out;
  if (o.workers > 0) c.workers = o.workers;
  if (o.seed_data) c.seeds.data = *o.seed_data;
  if (o.seed_train) c.seeds.train = *o.seed_train;
  if (!o.verbalizers.empty()) c.grid.verbalizers = o.verbalizers;
  if (!o.methods.empty()) c.grid.methods = o.methods;
  if (!o.kind.empty()) c.ablation.kind = o.kind;
  c.validate();
  return c;
}

}  // namespace

std::string tasks_dir(const ExperimentConfig& config) {
  return (fs::path(config.out) / "tasks").string();
}

std::string lm_dir(const ExperimentConfig& config) { return (fs::path(config.out) / "lm").string(); }

void generate_tasks(const ExperimentConfig& config, std::ostream& log) {
  const fs::path root = tasks_dir(config);
  for (const auto& name : config.task.names) {
    auto task = data::generate_synthetic_task(data::parse_task_kind(name), task_options(config));
    const fs::path dir = root / name;
    fs::create_directories(dir);
    data::write_dataset(task.train_pool, (dir / "train_pool.jsonl").string());
    data::write_dataset(task.test, (dir / "test.jsonl").string());
    std::string corpus;
    for (const auto& doc : task.corpus) {
      corpus += doc;
      corpus += '\n';
    }
    write_file(dir / "corpus.txt", corpus);
    scoring::write_verbalizers(scoring::default_verbalizers(task.profile),
                               (dir / "verbalizers.json").string());
    fmt::print(log, "{}: {} train, {} test, {} corpus documents, Bayes test accuracy {:.3f}\n", name,
               task.train_pool.examples.size(), task.test.examples.size(), task.corpus.size(),
               data::bayes_accuracy(task.profile, task.test));
  }
  write_file(root / "stamp.json", task_stamp(config) + "\n");
}

void pretrain_lm(const ExperimentConfig& config, std::ostream& log) {
  if (!tasks_current(config)) {
    generate_tasks(config, log);
  }
  const auto corpus = all_corpora(config);
  const auto vocab = lm::Vocab::build(corpus);
  lm::LMConfig lc = config.lm;
  lc.vocab_size = static_cast<int>(vocab.size());
  lc.seed = config.seeds.task;
  const auto start = std::chrono::steady_clock::now();
  auto result = lm::pretrain(lc, vocab, corpus, config.pretrain.steps, config.pretrain.options);
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

  const fs::path dir = lm_dir(config);
  fs::create_directories(dir);
  vocab.save((dir / "vocab.txt").string());
  lm::save_checkpoint(result.params, (dir / "model.ckpt").string());
  std::string curve = "step,loss\n";
  for (std::size_t i = 0; i < result.loss_curve.size(); ++i) {
    curve += fmt::format("{},{:.17g}\n", i + 1, result.loss_curve[i]);
  }
  write_file(dir / "loss.csv", curve);
  write_file(dir / "stamp.json", lm_stamp(config) + "\n");
  fmt::print(log, "pretrained {} steps in {:.1f}s over {} documents, vocab {}, final loss {:.4f}\n",
             config.pretrain.steps, seconds, corpus.size(), vocab.size(),
             result.loss_curve.empty() ? 0.0 : result.loss_curve.back());
}

std::unique_ptr<Workspace> load_workspace(const ExperimentConfig& config) {
  const fs::path tdir = tasks_dir(config);
  const fs::path ldir = lm_dir(config);
  check_stamp(tdir, task_stamp(config), "gen-task");
  check_stamp(ldir, lm_stamp(config), "pretrain");

  auto ws = std::unique_ptr<Workspace>(
      new Workspace{lm::Vocab::load((ldir / "vocab.txt").string()), harness::Lab{}});
  ws->lab.vocab = &ws->vocab;
  ws->lab.base = std::make_shared<const lm::LMParams>(lm::load_checkpoint((ldir / "model.ckpt").string()));
  if (static_cast<std::size_t>(ws->lab.base->config().vocab_size) != ws->vocab.size()) {
    throw SchemaError(ldir.string() + ": checkpoint and vocabulary sizes differ");
  }
  for (const auto& name : config.task.names) {
    const fs::path dir = tdir / name;
    harness::TaskData t;
    t.name = name;
    t.train_pool = data::load_dataset((dir / "train_pool.jsonl").string());
    t.test = data::load_dataset((dir / "test.jsonl").string());
    t.verbalizers = scoring::load_verbalizers((dir / "verbalizers.json").string(), t.test.labels);
    ws->lab.tasks.emplace(name, std::move(t));
  }
  ws->lab.train = config.train;
  ws->lab.length_normalize = config.grid.length_normalize;
  ws->lab.test_limit = config.grid.test_limit;
  return ws;
}

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Direct and channel few-shot classification experiments on synthetic tasks", "chanlab"};
  app.require_subcommand(1);
  Options o;
  auto* gen = app.add_subcommand("gen-task", "generate synthetic tasks, corpora and verbalizers");
  auto* pre = app.add_subcommand("pretrain", "pretrain the LM on the task corpora");
  auto* demo = app.add_subcommand("eval-demo", "zero-shot and demonstration grids");
  auto* tune = app.add_subcommand("tune", "tuning grids with learning-rate selection");
  auto* abl = app.add_subcommand("ablate", "K, imbalance, unseen-label and transfer suites");
  auto* rep = app.add_subcommand("report", "print the tables of every results directory");
  auto* ver = app.add_subcommand("verify", "gradient, frozen-parameter and score-algebra checks");
  for (auto* sub : {gen, pre, demo, tune, abl, rep}) {
    add_common(sub, o);
  }
  abl->add_option("--kind", o.kind, "vary_K, imbalance, unseen_label or transfer");
  rep->add_option("dir", o.report_dir, "results root (default: the configured output directory)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kExitValidation;
  }

  try {
    if (ver->parsed()) {
      return run_verify(out);
    }
    const ExperimentConfig config = resolve(o);
    if (gen->parsed()) {
      generate_tasks(config, out);
      return kExitOk;
    }
    if (pre->parsed()) {
      pretrain_lm(config, out);
      return kExitOk;
    }
    if (demo->parsed()) {
      return run_grids(config, false, "eval-demo", out, err);
    }
    if (tune->parsed()) {
      return run_grids(config, true, "tune", out, err);
    }
    if (abl->parsed()) {
      return run_ablate(config, out, err);
    }
    return run_report(o.report_dir.empty() ? config.out : o.report_dir, out);
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const SchemaError& e) {
    err << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
}

}  // namespace chanlab::cli
