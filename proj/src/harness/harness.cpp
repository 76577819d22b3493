#include <chanlab/harness/harness.hpp>

#include <chanlab/common/errors.hpp>
#include <chanlab/common/hash.hpp>

#include <fmt/format.h>
#include <json.hpp>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>
#include <thread>

namespace chanlab::harness {
namespace {

using json = nlohmann::ordered_json;

std::size_t verbalizer_index(const TaskData& task, const std::string& name) {
  for (std::size_t i = 0; i < task.verbalizers.size(); ++i) {
    if (task.verbalizers[i].name == name) {
      return i;
    }
  }
  std::string known;
  for (const auto& v : task.verbalizers) {
    known += (known.empty() ? "" : ", ") + v.name;
  }
  throw ConfigError("task '" + task.name + "' has no verbalizer '" + name + "' (known: " + known +
                    ")");
}

std::size_t effective_k(const ExperimentGrid& grid, const TaskData& source) {
  if (grid.method.is_zero_shot()) {
    return 0;
  }
  return grid.k == kFullK ? source.train_pool.examples.size() : grid.k;
}

RunResult skeleton(const ExperimentGrid& grid, const Cell& cell, const Lab& lab) {
  RunResult r;
  r.task = grid.task;
  r.train_task = grid.source_task();
  r.method = grid.method.name();
  r.cell = cell;
  if (!grid.method.is_zero_shot()) {
    r.k = effective_k(grid, lab.task(grid.source_task()));
    r.p_minus = grid.p_minus;
    r.upsample = grid.upsample;
    if (grid.exclude_label && cell.data_seed) {
      r.excluded_label = data::pick_excluded_label(lab.task(grid.source_task()).train_pool.labels.size(),
                                                   *cell.data_seed);
    }
  }
  return r;
}

std::span<const data::Example> test_slice(const data::Dataset& test, std::size_t limit) {
  const std::size_t n = limit == 0 ? test.examples.size() : std::min(limit, test.examples.size());
  return std::span<const data::Example>(test.examples).first(n);
}

void evaluate(const scoring::Scorer& scorer, const data::Dataset& test, std::size_t limit,
              RunResult& r) {
  std::size_t correct = 0;
  const auto slice = test_slice(test, limit);
  r.predictions.reserve(slice.size());
  for (const data::Example& ex : slice) {
    const Label p = scorer.score(ex.text).chosen;
    r.predictions.push_back(p);
    correct += p == ex.label ? 1 : 0;
  }
  r.accuracy = slice.empty() ? 0.0 : static_cast<double>(correct) / static_cast<double>(slice.size());
}

std::string format_p(double p) { return fmt::format("{:g}", p); }

std::string x_of_k(std::size_t k) { return k == kFullK ? std::string("full") : std::to_string(k); }

json to_record(const GridOutcome& o, std::size_t grid_index, const RunResult& r,
               const ReportMeta& meta, std::uint64_t config_hash) {
  json j;
  j["ablation"] = o.ablation;
  j["x"] = o.x;
  j["grid"] = grid_index;
  j["task"] = r.task;
  j["train_task"] = r.train_task;
  const MethodSpec m = MethodSpec::parse(r.method);
  if (m.is_tuning()) {
    j["method"] = r.method;
    j["mode"] = "tuned";
  } else {
    j["method"] = std::string(scoring::to_string(m.scoring->method));
    j["mode"] = std::string(scoring::to_string(m.scoring->mode));
  }
  j["K"] = r.k;
  j["p_minus"] = r.p_minus ? json(*r.p_minus) : json(nullptr);
  j["upsample"] = r.upsample;
  j["excluded_label"] = r.excluded_label ? json(*r.excluded_label) : json(nullptr);
  j["verbalizer"] = r.cell.verbalizer;
  j["data_seed"] = r.cell.data_seed ? json(*r.cell.data_seed) : json(nullptr);
  j["train_seed"] = r.cell.train_seed ? json(*r.cell.train_seed) : json(nullptr);
  j["lr"] = r.selected_lr ? json(*r.selected_lr) : json(nullptr);
  j["all_diverged"] = r.all_diverged;
  j["accuracy"] = r.ok() ? json(r.accuracy) : json(nullptr);
  j["majority"] = o.majority;
  j["error"] = r.error;
  j["predictions"] = r.predictions;
  j["config"] = fmt::format("{:016x}", config_hash);
  j["code_version"] = meta.code_version;
  return j;
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw IoError("cannot write " + path.string());
  }
  return out;
}

std::string setting_of(const ExperimentGrid& g) {
  std::string s;
  if (g.method.is_zero_shot()) {
    s = "-";
  } else {
    s = "K=" + x_of_k(g.k);
  }
  if (g.p_minus) {
    s += " p-=" + format_p(*g.p_minus);
  }
  if (g.upsample) {
    s += " upsample";
  }
  if (g.exclude_label) {
    s += " unseen";
  }
  if (g.source_task() != g.task) {
    s += " from=" + g.source_task();
  }
  return s;
}

}  // namespace

std::string MethodSpec::name() const {
  if (tuning) {
    return std::string(tuning::to_string(*tuning));
  }
  if (scoring) {
    return std::string(scoring::to_string(scoring->method)) + ":" +
           std::string(scoring::to_string(scoring->mode));
  }
  return "?";
}

MethodSpec MethodSpec::parse(std::string_view name) {
  MethodSpec m;
  const auto colon = name.find(':');
  if (colon == std::string_view::npos) {
    m.tuning = tuning::parse_tuning_kind(name);
    return m;
  }
  scoring::ScoringSpec s;
  s.method = scoring::parse_method(name.substr(0, colon));
  s.mode = scoring::parse_mode(name.substr(colon + 1));
  m.scoring = s;
  return m;
}

std::vector<Cell> ExperimentGrid::cells() const {
  std::vector<Cell> out;
  for (const std::string& v : verbalizers) {
    if (method.is_zero_shot()) {
      out.push_back({v, std::nullopt, std::nullopt});
      continue;
    }
    for (std::uint64_t d : data_seeds) {
      if (!method.is_tuning()) {
        out.push_back({v, d, std::nullopt});
        continue;
      }
      for (std::uint64_t t : train_seeds) {
        out.push_back({v, d, t});
      }
    }
  }
  return out;
}

void ExperimentGrid::validate() const {
  if (method.scoring.has_value() == method.tuning.has_value()) {
    throw ConfigError("grid method must be either a scoring cell or a tuning method");
  }
  if (verbalizers.empty()) {
    throw ConfigError("grid needs at least one verbalizer");
  }
  if (!method.is_zero_shot() && data_seeds.empty()) {
    throw ConfigError("grid needs at least one data seed");
  }
  if (method.is_tuning() && train_seeds.empty()) {
    throw ConfigError("tuning grid needs at least one train seed");
  }
  if (source_task() != task && !method.is_tuning()) {
    throw ConfigError("cross-task evaluation applies to tuning methods only");
  }
}

const TaskData& Lab::task(const std::string& name) const {
  auto it = tasks.find(name);
  if (it == tasks.end()) {
    throw ConfigError("unknown task '" + name + "'");
  }
  return it->second;
}

double RunResult::excluded_rate() const {
  if (!excluded_label || predictions.empty()) {
    return 0.0;
  }
  const auto hits = std::count(predictions.begin(), predictions.end(), *excluded_label);
  return static_cast<double>(hits) / static_cast<double>(predictions.size());
}

RunResult run_cell(const ExperimentGrid& grid, const Cell& cell, const Lab& lab) {
  grid.validate();
  if (lab.vocab == nullptr || !lab.base) {
    throw ConfigError("lab has no language model");
  }
  const TaskData& target = lab.task(grid.task);
  const TaskData& source = lab.task(grid.source_task());
  const std::size_t vi = verbalizer_index(target, cell.verbalizer);
  const scoring::Verbalizer& eval_verbalizer = target.verbalizers[vi];
  if (vi >= source.verbalizers.size()) {
    throw ConfigError("task '" + source.name + "' has fewer verbalizers than '" + target.name + "'");
  }
  const scoring::Verbalizer& train_verbalizer = source.verbalizers[vi];

  RunResult r = skeleton(grid, cell, lab);
  const lm::TokenId bos = lab.vocab->bos();

  if (grid.method.is_zero_shot()) {
    scoring::ScoringSpec spec = *grid.method.scoring;
    spec.length_normalize = lab.length_normalize;
    const scoring::Scorer scorer(lm::ModelView(*lab.base, bos), *lab.vocab, spec, eval_verbalizer);
    evaluate(scorer, target.test, lab.test_limit, r);
    return r;
  }

  if (!cell.data_seed) {
    throw ConfigError("cell is missing its data seed");
  }
  data::SamplingSpec sampling;
  sampling.k = r.k;
  sampling.data_seed = *cell.data_seed;
  sampling.p_minus = grid.p_minus;
  sampling.upsample = grid.upsample;
  sampling.excluded_label = r.excluded_label;
  const data::FewShotSet fewshot = data::sample_fewshot(source.train_pool, sampling);

  if (!grid.method.is_tuning()) {
    scoring::ScoringSpec spec = *grid.method.scoring;
    spec.length_normalize = lab.length_normalize;
    const scoring::Scorer scorer(lm::ModelView(*lab.base, bos), *lab.vocab, spec, eval_verbalizer,
                                 &fewshot);
    evaluate(scorer, target.test, lab.test_limit, r);
    return r;
  }

  if (!cell.train_seed) {
    throw ConfigError("tuning cell is missing its train seed");
  }
  const tuning::TuningKind kind = *grid.method.tuning;
  if (kind == tuning::TuningKind::HeadTuning && &source != &target &&
      source.train_pool.labels.size() != target.test.labels.size()) {
    throw ConfigError("head tuning does not transfer between label spaces of different size");
  }
  tuning::TrainConfig config = lab.train;
  config.seed = *cell.train_seed;
  const tuning::TunedModel init = tuning::init_tuning(kind, lab.base, *lab.vocab, config);
  const tuning::LrSelection sel =
      tuning::select_lr(init, fewshot, train_verbalizer, *lab.vocab, config);
  r.selected_lr = sel.lr;
  r.all_diverged = sel.all_diverged;
  const scoring::Scorer scorer =
      tuning::make_scorer(sel.model, *lab.vocab, eval_verbalizer, lab.length_normalize);
  evaluate(scorer, target.test, lab.test_limit, r);
  return r;
}

std::vector<RunResult> run_grid(const ExperimentGrid& grid, const Lab& lab, int workers) {
  grid.validate();
  const std::vector<Cell> cells = grid.cells();
  std::vector<RunResult> results(cells.size());
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t i = next++; i < cells.size(); i = next++) {
      try {
        results[i] = run_cell(grid, cells[i], lab);
      } catch (const std::exception& e) {
        try {
          results[i] = skeleton(grid, cells[i], lab);
        } catch (const std::exception&) {
          results[i] = RunResult{};
          results[i].task = grid.task;
          results[i].method = grid.method.name();
          results[i].cell = cells[i];
        }
        results[i].error = e.what();
        if (results[i].error.empty()) {
          results[i].error = "unknown failure";
        }
      }
    }
  };
  const auto n = static_cast<std::size_t>(std::max(1, workers));
  if (n == 1 || cells.size() <= 1) {
    work();
    return results;
  }
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < std::min(n, cells.size()); ++t) {
    pool.emplace_back(work);
  }
  for (auto& t : pool) {
    t.join();
  }
  return results;
}

Aggregate aggregate(const std::vector<RunResult>& results) {
  Aggregate a;
  std::vector<double> acc;
  for (const RunResult& r : results) {
    if (r.ok()) {
      acc.push_back(r.accuracy);
    } else {
      ++a.failed;
    }
  }
  if (acc.empty()) {
    throw ConfigError("aggregate needs at least one successful result");
  }
  a.runs = acc.size();
  a.avg = std::accumulate(acc.begin(), acc.end(), 0.0) / static_cast<double>(acc.size());
  a.worst = *std::min_element(acc.begin(), acc.end());
  a.best = *std::max_element(acc.begin(), acc.end());
  double var = 0.0;
  for (double x : acc) {
    var += (x - a.avg) * (x - a.avg);
  }
  a.std = std::sqrt(var / static_cast<double>(acc.size()));
  // Rounding in the mean can step just outside the extremes.
  a.avg = std::clamp(a.avg, a.worst, a.best);
  return a;
}

double majority_baseline(const data::Dataset& test, std::size_t limit) {
  const auto slice = test_slice(test, limit);
  if (slice.empty()) {
    return 0.0;
  }
  std::vector<std::size_t> counts(std::max<std::size_t>(test.labels.size(), 1), 0);
  for (const data::Example& ex : slice) {
    ++counts.at(static_cast<std::size_t>(ex.label));
  }
  return static_cast<double>(*std::max_element(counts.begin(), counts.end())) /
         static_cast<double>(slice.size());
}

std::string_view to_string(AblationKind kind) {
  switch (kind) {
    case AblationKind::VaryK:
      return "vary_K";
    case AblationKind::Imbalance:
      return "imbalance";
    case AblationKind::UnseenLabel:
      return "unseen_label";
    case AblationKind::Transfer:
      return "transfer";
  }
  return "?";
}

AblationKind parse_ablation_kind(std::string_view name) {
  for (AblationKind k : {AblationKind::VaryK, AblationKind::Imbalance, AblationKind::UnseenLabel,
                         AblationKind::Transfer}) {
    if (to_string(k) == name) {
      return k;
    }
  }
  throw ConfigError("unknown ablation '" + std::string(name) +
                    "' (expected vary_K, imbalance, unseen_label or transfer)");
}

std::vector<ExperimentGrid> ablation_grids(AblationKind kind, const AblationParams& params,
                                           const Lab& lab) {
  if (params.methods.empty()) {
    throw ConfigError("ablation needs at least one method");
  }
  const bool transfer = kind == AblationKind::Transfer;
  if (transfer && params.target_task.empty()) {
    throw ConfigError("transfer needs a target task");
  }
  const TaskData& source = lab.task(params.task);
  const TaskData& target = transfer ? lab.task(params.target_task) : source;

  ExperimentGrid base;
  base.task = target.name;
  base.train_task = transfer ? source.name : std::string();
  base.verbalizers = params.verbalizers;
  if (base.verbalizers.empty()) {
    for (const auto& v : target.verbalizers) {
      base.verbalizers.push_back(v.name);
    }
  }
  base.data_seeds = params.data_seeds;
  base.train_seeds = params.train_seeds;
  base.k = params.k;

  std::vector<ExperimentGrid> grids;
  for (const MethodSpec& m : params.methods) {
    ExperimentGrid g = base;
    g.method = m;
    switch (kind) {
      case AblationKind::VaryK:
        if (m.is_zero_shot()) {
          throw ConfigError("vary_K does not apply to zero-shot scoring");
        }
        for (std::size_t k : params.ks) {
          if (k == kFullK && !m.is_tuning()) {
            continue;  // the full pool does not fit in a context
          }
          g.k = k;
          grids.push_back(g);
        }
        break;
      case AblationKind::Imbalance:
        if (source.train_pool.labels.size() != 2) {
          throw ConfigError("imbalance ablation needs a binary task, '" + source.name + "' has " +
                            std::to_string(source.train_pool.labels.size()) + " labels");
        }
        if (m.is_zero_shot()) {
          throw ConfigError("imbalance does not apply to zero-shot scoring");
        }
        for (double p : params.p_minus) {
          for (bool up : {false, true}) {
            g.p_minus = p;
            g.upsample = up;
            grids.push_back(g);
          }
        }
        break;
      case AblationKind::UnseenLabel:
        if (m.is_zero_shot()) {
          throw ConfigError("unseen_label does not apply to zero-shot scoring");
        }
        g.exclude_label = true;
        grids.push_back(g);
        break;
      case AblationKind::Transfer:
        if (!m.is_tuning()) {
          throw ConfigError("transfer applies to tuning methods only");
        }
        if (*m.tuning == tuning::TuningKind::HeadTuning &&
            source.train_pool.labels.size() != target.test.labels.size()) {
          throw ConfigError("head tuning is not applicable to transfer between '" + source.name +
                            "' and '" + target.name + "': label spaces differ");
        }
        grids.push_back(g);
        break;
    }
  }
  for (const auto& g : grids) {
    g.validate();
  }
  return grids;
}

GridOutcome run_outcome(const ExperimentGrid& grid, const Lab& lab, int workers,
                        std::string ablation, std::string x) {
  GridOutcome o;
  o.ablation = std::move(ablation);
  o.x = std::move(x);
  o.grid = grid;
  o.results = run_grid(grid, lab, workers);
  o.majority = majority_baseline(lab.task(grid.task).test, lab.test_limit);
  if (std::any_of(o.results.begin(), o.results.end(), [](const RunResult& r) { return r.ok(); })) {
    o.summary = aggregate(o.results);
  }
  return o;
}

std::vector<GridOutcome> run_ablation(AblationKind kind, const AblationParams& params,
                                      const Lab& lab, int workers) {
  std::vector<GridOutcome> out;
  for (const ExperimentGrid& g : ablation_grids(kind, params, lab)) {
    std::string x;
    switch (kind) {
      case AblationKind::VaryK:
        x = x_of_k(g.k);
        break;
      case AblationKind::Imbalance:
        x = format_p(*g.p_minus);
        break;
      case AblationKind::UnseenLabel:
        x = "unseen";
        break;
      case AblationKind::Transfer:
        x = g.source_task() + "->" + g.task;
        break;
    }
    out.push_back(run_outcome(g, lab, workers, std::string(to_string(kind)), x));
  }
  return out;
}

void write_report(const std::vector<GridOutcome>& outcomes, const ReportMeta& meta,
                  const std::string& dir) {
  if (outcomes.empty()) {
    throw ConfigError("no results to report");
  }
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) {
    throw IoError("cannot create " + dir + ": " + ec.message());
  }
  const std::filesystem::path root(dir);
  const std::uint64_t config_hash = fnv1a(meta.config_json);

  {
    auto out = open_out(root / "config.json");
    out << meta.config_json;
    if (meta.config_json.empty() || meta.config_json.back() != '\n') {
      out << '\n';
    }
  }
  {
    auto out = open_out(root / "results.jsonl");
    for (std::size_t g = 0; g < outcomes.size(); ++g) {
      for (const RunResult& r : outcomes[g].results) {
        out << to_record(outcomes[g], g, r, meta, config_hash).dump() << '\n';
      }
    }
  }
  {
    auto out = open_out(root / "report.tsv");
    out << "ablation\tx\ttask\tmethod\tsetting\truns\tfailed\tavg\tworst\tbest\tstd\tmajority\n";
    for (const GridOutcome& o : outcomes) {
      out << o.ablation << '\t' << (o.x.empty() ? "-" : o.x) << '\t' << o.grid.task << '\t'
          << o.grid.method.name() << '\t' << setting_of(o.grid) << '\t';
      if (o.summary) {
        const Aggregate& a = *o.summary;
        out << fmt::format("{}\t{}\t{:.1f}\t{:.1f}\t{:.1f}\t{:.1f}\t{:.1f}\n", a.runs, a.failed,
                           100 * a.avg, 100 * a.worst, 100 * a.best, 100 * a.std,
                           100 * o.majority);
      } else {
        out << fmt::format("0\t{}\t-\t-\t-\t-\t{:.1f}\n", o.results.size(), 100 * o.majority);
      }
    }
  }
  {
    auto out = open_out(root / "curves.csv");
    out << "ablation,x,series,value\n";
    for (const GridOutcome& o : outcomes) {
      if (o.ablation == "grid" || !o.summary) {
        continue;
      }
      std::string series = o.grid.method.name();
      if (o.grid.upsample) {
        series += "+upsample";
      }
      out << o.ablation << ',' << o.x << ',' << series << ',' << fmt::format("{:.6f}", o.summary->avg)
          << '\n';
    }
  }
}

std::vector<GridOutcome> load_results(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw IoError("cannot read " + path);
  }
  std::vector<GridOutcome> out;
  std::optional<std::size_t> current;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) {
      continue;
    }
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw SchemaError(path + ":" + std::to_string(line_no) + ": " + e.what());
    }
    try {
      const auto grid_index = j.at("grid").get<std::size_t>();
      const std::string mode = j.at("mode").get<std::string>();
      const std::string method = mode == "tuned" ? j.at("method").get<std::string>()
                                                 : j.at("method").get<std::string>() + ":" + mode;
      RunResult r;
      r.task = j.at("task").get<std::string>();
      r.train_task = j.at("train_task").get<std::string>();
      r.method = method;
      r.k = j.at("K").get<std::size_t>();
      if (!j.at("p_minus").is_null()) {
        r.p_minus = j.at("p_minus").get<double>();
      }
      r.upsample = j.at("upsample").get<bool>();
      if (!j.at("excluded_label").is_null()) {
        r.excluded_label = j.at("excluded_label").get<Label>();
      }
      r.cell.verbalizer = j.at("verbalizer").get<std::string>();
      if (!j.at("data_seed").is_null()) {
        r.cell.data_seed = j.at("data_seed").get<std::uint64_t>();
      }
      if (!j.at("train_seed").is_null()) {
        r.cell.train_seed = j.at("train_seed").get<std::uint64_t>();
      }
      if (!j.at("lr").is_null()) {
        r.selected_lr = j.at("lr").get<double>();
      }
      r.all_diverged = j.at("all_diverged").get<bool>();
      r.error = j.at("error").get<std::string>();
      if (r.ok()) {
        r.accuracy = j.at("accuracy").get<double>();
      }
      r.predictions = j.at("predictions").get<std::vector<Label>>();

      if (!current || *current != grid_index) {
        GridOutcome o;
        o.ablation = j.at("ablation").get<std::string>();
        o.x = j.at("x").get<std::string>();
        o.majority = j.at("majority").get<double>();
        o.grid.task = r.task;
        o.grid.train_task = r.train_task == r.task ? std::string() : r.train_task;
        o.grid.method = MethodSpec::parse(method);
        o.grid.k = r.k;
        o.grid.p_minus = r.p_minus;
        o.grid.upsample = r.upsample;
        o.grid.exclude_label = r.excluded_label.has_value();
        o.grid.verbalizers.clear();
        o.grid.data_seeds.clear();
        o.grid.train_seeds.clear();
        out.push_back(std::move(o));
        current = grid_index;
      }
      ExperimentGrid& g = out.back().grid;
      auto add_unique = [](auto& v, const auto& x) {
        if (std::find(v.begin(), v.end(), x) == v.end()) {
          v.push_back(x);
        }
      };
      add_unique(g.verbalizers, r.cell.verbalizer);
      if (r.cell.data_seed) {
        add_unique(g.data_seeds, *r.cell.data_seed);
      }
      if (r.cell.train_seed) {
        add_unique(g.train_seeds, *r.cell.train_seed);
      }
      out.back().results.push_back(std::move(r));
    } catch (const json::exception& e) {
      throw SchemaError(path + ":" + std::to_string(line_no) + ": " + e.what());
    } catch (const ConfigError& e) {
      throw SchemaError(path + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  for (GridOutcome& o : out) {
    if (std::any_of(o.results.begin(), o.results.end(), [](const RunResult& r) { return r.ok(); })) {
      o.summary = aggregate(o.results);
    }
  }
  return out;
}

}  // namespace chanlab::harness
