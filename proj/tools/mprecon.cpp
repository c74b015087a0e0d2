// Command-line driver: pre-conditioning, distances, recovery and adaptation
// runs, bundled experiments and plots.
//
// Exit codes: 0 all verdicts pass, 2 a verdict failed, 1 execution error.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "mprecon/experiments.hpp"

using namespace mprecon;
using namespace mprecon::experiments;
namespace fs = std::filesystem;

namespace {

struct Globals {
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string format = "json";
};

void emit(const std::string& text, const std::string& outFile) {
  if (outFile.empty()) {
    std::cout << text;
    return;
  }
  FileBatch b;
  b.add(outFile, text);
  b.commit();
}

int report_run(const ScenarioConfig& cfg, const Globals& g) {
  const ResultRecord r = run_scenario(cfg);
  const fs::path dir = output_dir(cfg, g.out);
  const auto files = write_outputs(r, dir, g.format == "csv" ? OutputFormat::Csv : OutputFormat::Both);
  std::cout << fmt::format("scenario {} ({}) seed {} config {}\n", r.scenario, r.kind, cfg.seed, r.configHash);
  for (const auto& [k, v] : r.scalars) std::cout << fmt::format("  {:<32} {:.6g}\n", k, v);
  for (const auto& [k, v] : r.verdicts) std::cout << fmt::format("  [{}] {}\n", v ? "pass" : "FAIL", k);
  std::cout << fmt::format("wrote {} files to {}\n", files.size(), dir.string());
  return r.all_pass() ? 0 : 2;
}

ScenarioConfig load_with_overrides(const std::string& path, const Globals& g) {
  ScenarioConfig c = load_config(path);
  if (g.seed) c.seed = *g.seed;
  return c;
}

std::string measure_csv(const Measure& m) {
  std::string out;
  const std::size_t p = m.dim();
  for (std::size_t a = 0; a < p; ++a) out += (a ? ",z" : "z") + std::to_string(a + 1);
  out += ",mass\n";
  const DiscreteMeasure d = atoms_of(m);
  for (std::size_t i = 0; i < d.size(); ++i) {
    for (std::size_t a = 0; a < p; ++a) out += format_value(d.coords[i * p + a]) + ",";
    out += format_value(d.weights[i]) + "\n";
  }
  return out;
}

Measure read_measure_file(const std::string& path) {
  std::ifstream in(path);
  mprecon::detail::require(in.good(), "cannot open measure file '" + path + "'");
  io::json j;
  try {
    in >> j;
  } catch (const io::json::exception& e) {
    throw InvalidArgument(path + ": " + e.what());
  }
  return io::measure_from_json(j);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Measure pre-conditioning, recovery of minimizers and transport-based domain adaptation"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--seed", g.seed, "Override the scenario seed");
  app.add_option("--out", g.out, "Output directory (runs) or file (single results)");
  app.add_option("--format", g.format, "Output format")->check(CLI::IsMember({"json", "csv"}));

  // precondition
  auto* pre = app.add_subcommand("precondition", "Build a pre-conditioned measure from a sample CSV");
  std::string preInput, preKind = "kde", preKernel = "gaussian";
  std::vector<double> preLo, preHi;
  std::vector<std::size_t> preCells;
  double preC = 1.06, preAlpha = 0.2, preH = 0.0;
  bool preUnlabeled = false, preKeepLabel = false;
  pre->add_option("sample", preInput, "Sample CSV (features then label)")->required()->check(CLI::ExistingFile);
  pre->add_option("--kind", preKind, "empirical, histogram or kde")->check(CLI::IsMember({"empirical", "histogram", "kde"}));
  pre->add_option("--kernel", preKernel)->check(CLI::IsMember({"gaussian", "epanechnikov", "uniform"}));
  pre->add_option("--lo", preLo, "Grid lower corner");
  pre->add_option("--hi", preHi, "Grid upper corner");
  pre->add_option("--cells", preCells, "Cells per axis");
  pre->add_option("--c", preC, "Bandwidth constant of H_n = c n^-alpha");
  pre->add_option("--alpha", preAlpha, "Bandwidth exponent");
  pre->add_option("--bandwidth", preH, "Fixed bandwidth h (overrides c and alpha)");
  pre->add_flag("--unlabeled", preUnlabeled, "Every column is a feature");
  pre->add_flag("--keep-label", preKeepLabel, "Do not smooth the label axis");

  // metrics
  auto* met = app.add_subcommand("metrics", "Distance between two measures stored as JSON");
  std::string metA, metB, metMode = "tv";
  met->add_option("a", metA)->required()->check(CLI::ExistingFile);
  met->add_option("b", metB)->required()->check(CLI::ExistingFile);
  met->add_option("--mode", metMode, "tv, weak, d1, d2 or setwise")->check(CLI::IsMember({"tv", "weak", "d1", "d2", "setwise"}));

  // recovery
  auto* rec = app.add_subcommand("recovery", "Run a recovery or regression-bound scenario");
  std::string recConfig;
  rec->add_option("config", recConfig)->required()->check(CLI::ExistingFile);

  // adapt
  auto* ada = app.add_subcommand("adapt", "Conditional average guess between two labeled CSV samples");
  std::string adaSource, adaTarget, adaConfig;
  ada->add_option("source", adaSource)->required()->check(CLI::ExistingFile);
  ada->add_option("target", adaTarget)->required()->check(CLI::ExistingFile);
  ada->add_option("--config", adaConfig, "Adaptation scenario supplying loss, class and guess options")
      ->check(CLI::ExistingFile);

  // experiment run
  auto* exp = app.add_subcommand("experiment", "Bundled experiments");
  exp->require_subcommand(1);
  auto* run = exp->add_subcommand("run", "Run a scenario file of any kind");
  std::string runConfig;
  run->add_option("file", runConfig)->required()->check(CLI::ExistingFile);

  // plot
  auto* plt = app.add_subcommand("plot", "Render the tables of a record as SVG");
  std::string pltRecord;
  plt->add_option("record", pltRecord)->required()->check(CLI::ExistingFile);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*pre) {
      const Sample s = io::read_sample_csv_file(preInput, !preUnlabeled);
      Measure m = build_empirical(s);
      if (preKind != "empirical") {
        const std::size_t dim = s.dim() + (s.has_labels() ? 1 : 0);
        mprecon::detail::require(preLo.size() == dim && preHi.size() == dim,
                                 "precondition: --lo and --hi need one value per axis (" + std::to_string(dim) + ")");
        if (preCells.size() == 1) preCells.assign(dim, preCells[0]);
        mprecon::detail::require(preCells.size() == dim, "precondition: --cells needs one value or one per axis");
        const GridSpec grid{preLo, preHi, preCells};
        grid.validate();
        PreconditionerConfig pc;
        pc.kind = preKind;
        pc.kernel = preKernel;
        pc.c = preC;
        pc.alpha = preAlpha;
        if (preH > 0.0) {
          pc.bandwidthRule = "fixed";
          pc.h = preH;
        }
        pc.smoothLabel = !preKeepLabel;
        m = build_preconditioner(pc, grid)(s);
      }
      emit(g.format == "csv" ? measure_csv(m) : io::to_json(m).dump() + "\n", g.out);
      return 0;
    }
    if (*met) {
      const Measure a = read_measure_file(metA), b = read_measure_file(metB);
      const double v = mode_distance(a, b, mode_from_string(metMode));
      if (g.format == "csv") emit(fmt::format("mode,value\n{},{}\n", metMode, format_value(v)), g.out);
      else emit(io::json{{"mode", metMode}, {"value", v}}.dump() + "\n", g.out);
      return 0;
    }
    if (*rec) {
      const ScenarioConfig c = load_with_overrides(recConfig, g);
      mprecon::detail::require(c.kind == "recovery" || c.kind == "regression-bound",
                               "recovery: scenario kind is '" + c.kind + "'; use `experiment run` for other kinds");
      return report_run(c, g);
    }
    if (*ada) {
      ScenarioConfig c;
      if (!adaConfig.empty()) {
        c = load_with_overrides(adaConfig, g);
        mprecon::detail::require(c.kind == "adaptation", "adapt: config kind must be 'adaptation'");
      } else {
        c.name = "adapt";
        c.kind = "adaptation";
        c.adaptation = AdaptationConfig{};
        c.loss = LossConfig{"logistic", std::nullopt, std::nullopt, std::nullopt};
        if (g.seed) c.seed = *g.seed;
      }
      c.adaptation->sourceCsv = fs::absolute(adaSource).string();
      c.adaptation->targetCsv = fs::absolute(adaTarget).string();
      if (!c.cls) {
        // Feature box covering both samples with a margin of 1.
        const Sample s = io::read_sample_csv_file(adaSource), t = io::read_sample_csv_file(adaTarget);
        ClassConfig k;
        k.featureLo.assign(s.dim(), 1e300);
        k.featureHi.assign(s.dim(), -1e300);
        for (const Sample* x : {&s, &t})
          for (const auto& p : x->features)
            for (std::size_t a = 0; a < p.size() && a < s.dim(); ++a) {
              k.featureLo[a] = std::min(k.featureLo[a], p[a] - 1.0);
              k.featureHi[a] = std::max(k.featureHi[a], p[a] + 1.0);
            }
        k.paramLo.assign(s.dim() + 1, -10.0);
        k.paramHi.assign(s.dim() + 1, 10.0);
        c.cls = k;
      }
      return report_run(c, g);
    }
    if (*run) return report_run(load_with_overrides(runConfig, g), g);
    if (*plt) {
      const ResultRecord r = load_record(pltRecord);
      const fs::path dir = g.out.empty() ? fs::path(pltRecord).parent_path() : fs::path(g.out);
      FileBatch b;
      add_plot_files(b, r, dir.empty() ? fs::path(".") : dir);
      for (const auto& f : b.commit()) std::cout << f.string() << "\n";
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
