// Acceptance run: one PASS/FAIL line per criterion.
//
//   chanlab_acceptance --cache <dir> [--workers n] [--known-failure id ...]
//
// Criteria listed as known failures still print FAIL but do not change the
// exit status.
// The cache holds the generated binary task and the pretrained LM of the
// default experiment config; they are rebuilt when missing or stale.

#include <chanlab/cli/app.hpp>
#include <chanlab/cli/config.hpp>
#include <chanlab/common/errors.hpp>
#include <chanlab/harness/harness.hpp>
#include <chanlab/verify/verify.hpp>

#include <CLI11.hpp>
#include <fmt/format.h>

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <iostream>
#include <map>

using namespace chanlab;
using harness::ExperimentGrid;
using harness::GridOutcome;
using harness::MethodSpec;

namespace {

// Gates
constexpr double kGradientSuiteSeconds = 60.0;
constexpr double kChannelMargin = 0.10;     // channel prompt over majority
constexpr double kDirectBand = 0.05;        // direct head / prompt around majority at p- = 0
constexpr double kRuntimeSeconds = 15 * 60.0;

// Reduced trend grids: every verbalizer, fewer seeds, a test prefix.
constexpr int kImbalanceDataSeeds = 2;
constexpr int kUnseenDataSeeds = 5;
constexpr std::size_t kTrendTestLimit = 300;

const std::vector<std::string> kTuned = {"head", "transform", "direct-prompt", "channel-prompt",
                                         "full"};

using Clock = std::chrono::steady_clock;

double since(Clock::time_point t) { return std::chrono::duration<double>(Clock::now() - t).count(); }

struct Line {
  int id;
  std::string name;
  bool passed;
  std::string detail;
};

std::vector<Line> lines;
std::vector<GridOutcome> all_outcomes;

void report(int id, std::string name, bool passed, std::string detail) {
  fmt::print("criterion {} {}: {}  {}\n", id, name, passed ? "PASS" : "FAIL", detail);
  std::fflush(stdout);
  lines.push_back({id, std::move(name), passed, std::move(detail)});
}

const verify::CheckResult& find(const std::vector<verify::CheckResult>& checks,
                                const std::string& prefix) {
  for (const auto& c : checks) {
    if (c.name.rfind(prefix, 0) == 0) {
      return c;
    }
  }
  throw std::runtime_error("no verify check named " + prefix);
}

std::string pct(double x) { return fmt::format("{:.1f}", 100 * x); }

ExperimentGrid grid_for(const harness::Lab& lab, const std::string& method, int data_seeds,
                        int train_seeds) {
  ExperimentGrid g;
  g.task = "binary-sentiment";
  g.method = MethodSpec::parse(method);
  for (const auto& v : lab.task(g.task).verbalizers) {
    g.verbalizers.push_back(v.name);
  }
  g.data_seeds.clear();
  for (int i = 0; i < data_seeds; ++i) {
    g.data_seeds.push_back(static_cast<std::uint64_t>(i));
  }
  g.train_seeds.clear();
  for (int i = 0; i < train_seeds; ++i) {
    g.train_seeds.push_back(static_cast<std::uint64_t>(i));
  }
  g.k = 16;
  return g;
}

GridOutcome run(const ExperimentGrid& g, const harness::Lab& lab, int workers,
                const std::string& ablation, const std::string& x) {
  const auto start = Clock::now();
  auto o = harness::run_outcome(g, lab, workers, ablation, x);
  std::size_t failed = 0;
  for (const auto& r : o.results) {
    failed += r.ok() ? 0 : 1;
  }
  fmt::print("  {:<12} {:<5} {:<16} {:>2} cells  avg {:>5}  majority {:>5}  {}{:.0f}s\n", ablation,
             x, g.method.name(), o.results.size(), o.summary ? pct(o.summary->avg) : "-",
             pct(o.majority), failed ? fmt::format("{} failed  ", failed) : "", since(start));
  std::fflush(stdout);
  all_outcomes.push_back(o);
  return o;
}

double avg_of(const GridOutcome& o) { return o.summary ? o.summary->avg : -1.0; }

}  // namespace

int main(int argc, char** argv) {
  cli::tune_allocator();
  CLI::App app{"acceptance criteria"};
  std::string cache = "acceptance-cache";
  int workers = 1;
  std::vector<int> known;
  app.add_option("--known-failure", known, "criteria expected to fail");
  app.add_option("--cache", cache, "task and LM cache directory");
  app.add_option("--workers", workers, "parallel grid cells")->check(CLI::PositiveNumber);
  CLI11_PARSE(app, argc, argv);

  // 1-5: invariant suites
  auto start = Clock::now();
  const auto checks = verify::run_all();
  const double verify_seconds = since(start);
  for (const auto& c : checks) {
    fmt::print("  {} {:<34} {:6.2f}s  {}\n", c.passed ? "pass" : "FAIL", c.name, c.seconds, c.detail);
  }
  {
    bool ok = true;
    double seconds = 0.0;
    int subsets = 0;
    for (const auto& c : checks) {
      if (c.name.rfind("gradient", 0) == 0) {
        ok = ok && c.passed;
        seconds += c.seconds;
        ++subsets;
      }
    }
    ok = ok && subsets == 4 && seconds < kGradientSuiteSeconds;
    report(1, "gradient exactness", ok,
           fmt::format("{} subsets x 100 coordinates, suite {:.1f}s (limit {:.0f}s)", subsets, seconds,
                       kGradientSuiteSeconds));
  }
  {
    const auto& c = find(checks, "frozen");
    report(2, "frozen parameters", c.passed, c.detail);
  }
  {
    const auto& a = find(checks, "ensemble additivity");
    const auto& p = find(checks, "ensemble order");
    const auto& f = find(checks, "concat order");
    report(3, "score algebra", a.passed && p.passed && f.passed,
           a.detail + "; " + p.detail + "; " + f.detail);
  }
  {
    const auto& c = find(checks, "bigram");
    report(4, "oracle equivalence", c.passed, c.detail);
  }
  {
    const auto& c = find(checks, "zero-effect");
    report(5, "zero-effect deltas", c.passed, c.detail);
  }

  // Task and pretrained LM of the default config.
  cli::ExperimentConfig config;
  config.out = cache;
  std::unique_ptr<cli::Workspace> ws;
  try {
    ws = cli::load_workspace(config);
  } catch (const ConfigError&) {
    start = Clock::now();
    cli::pretrain_lm(config, std::cout);
    fmt::print("  pretraining took {:.0f}s (not part of the runtime gate)\n", since(start));
    ws = cli::load_workspace(config);
  }
  harness::Lab& lab = ws->lab;

  // 9 (timed first, on the full test split): one demonstration and one tuning grid.
  start = Clock::now();
  lab.test_limit = 0;
  run(grid_for(lab, "channel:concat", 5, 4), lab, workers, "runtime", "K=16");
  run(grid_for(lab, "channel-prompt", 5, 4), lab, workers, "runtime", "K=16");
  const double grid_seconds = since(start);

  // 6: imbalance
  lab.test_limit = kTrendTestLimit;
  std::map<std::pair<std::string, double>, GridOutcome> imbalance;
  for (double p : {0.0, 0.5}) {
    for (const auto& m : kTuned) {
      auto g = grid_for(lab, m, kImbalanceDataSeeds, 1);
      g.p_minus = p;
      imbalance[{m, p}] = run(g, lab, workers, "imbalance", fmt::format("{:g}", p));
    }
  }
  {
    const double majority = imbalance.at({"channel-prompt", 0.0}).majority;
    const double channel = avg_of(imbalance.at({"channel-prompt", 0.0}));
    const double head = avg_of(imbalance.at({"head", 0.0}));
    const double prompt = avg_of(imbalance.at({"direct-prompt", 0.0}));
    bool ok = channel - majority >= kChannelMargin && std::abs(head - majority) <= kDirectBand &&
              std::abs(prompt - majority) <= kDirectBand;
    std::string balanced;
    for (const auto& m : kTuned) {
      const auto& o = imbalance.at({m, 0.5});
      ok = ok && avg_of(o) > o.majority;
      balanced += fmt::format(" {} {}", m, pct(avg_of(o)));
    }
    report(6, "imbalance trend", ok,
           fmt::format("p-=0: majority {}, channel-prompt {} (need +{:.0f}), head {}, "
                       "direct-prompt {} (need within {:.0f}); p-=0.5 (majority {}):{}",
                       pct(majority), pct(channel), 100 * kChannelMargin, pct(head), pct(prompt),
                       100 * kDirectBand, pct(imbalance.at({"head", 0.5}).majority), balanced));
  }

  // 7: unseen label
  {
    bool ok = true;
    std::string detail;
    for (const auto& m : kTuned) {
      auto g = grid_for(lab, m, kUnseenDataSeeds, 1);
      g.exclude_label = true;
      const auto o = run(g, lab, workers, "unseen", "K=16");
      double worst_rate = 0.0;
      bool complete = o.summary && o.summary->complete();
      for (const auto& r : o.results) {
        if (r.ok()) {
          worst_rate = std::max(worst_rate, r.excluded_rate());
        }
      }
      if (m == "channel-prompt") {
        ok = ok && complete && avg_of(o) - o.majority >= kChannelMargin;
        detail += fmt::format("channel-prompt {} vs majority {} (need +{:.0f}); ", pct(avg_of(o)),
                              pct(o.majority), 100 * kChannelMargin);
      } else {
        ok = ok && complete && worst_rate == 0.0;
        detail += fmt::format("{} predicts unseen label on up to {}%; ", m, pct(worst_rate));
      }
    }
    detail.resize(detail.size() - 2);
    report(7, "unseen-label trend", ok, detail);
  }

  // 8: grid shapes and aggregate ordering
  {
    const std::size_t zero = grid_for(lab, "channel:zero-shot", 5, 4).cells().size();
    const std::size_t demo = grid_for(lab, "channel:ensemble", 5, 4).cells().size();
    const std::size_t tuned = grid_for(lab, "head", 5, 4).cells().size();
    bool ordered = true;
    for (const auto& o : all_outcomes) {
      if (o.summary) {
        ordered = ordered && o.summary->worst <= o.summary->avg && o.summary->avg <= o.summary->best;
      }
    }
    const bool runtime_shapes = all_outcomes[0].results.size() == 20 &&
                                all_outcomes[1].results.size() == 80;
    report(8, "protocol shape", zero == 4 && demo == 20 && tuned == 80 && runtime_shapes && ordered,
           fmt::format("zero-shot {} / demonstrations {} / tuning {} cells; worst <= avg <= best "
                       "on {} grids: {}",
                       zero, demo, tuned, all_outcomes.size(), ordered ? "yes" : "no"));
  }

  {
    const double total = verify_seconds + grid_seconds;
    report(9, "end-to-end runtime", total < kRuntimeSeconds,
           fmt::format("verify {:.0f}s + channel:concat grid and channel-prompt grid {:.0f}s = "
                       "{:.0f}s (limit {:.0f}s, {} worker(s))",
                       verify_seconds, grid_seconds, total, kRuntimeSeconds, workers));
  }

  harness::write_report(all_outcomes, {cli::to_json(config), "acceptance"},
                        (std::filesystem::path(cache) / "acceptance").string());

  const auto passed = std::count_if(lines.begin(), lines.end(), [](const Line& l) { return l.passed; });
  fmt::print("{}/{} criteria passed\n", passed, lines.size());
  bool unexpected = false;
  for (const auto& l : lines) {
    if (!l.passed) {
      const bool listed = std::find(known.begin(), known.end(), l.id) != known.end();
      fmt::print("criterion {} failed{}\n", l.id, listed ? " (known failure)" : "");
      unexpected = unexpected || !listed;
    }
  }
  return unexpected ? 1 : 0;
}
