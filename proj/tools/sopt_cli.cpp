// rrtsopt command-line front end: plan a scenario, run a benchmark suite, or validate a file.

#include <rrtsopt/audit.hpp>
#include <rrtsopt/bench.hpp>
#include <rrtsopt/report.hpp>
#include <rrtsopt/rrt_star.hpp>
#include <rrtsopt/scenario.hpp>
#include <rrtsopt/sopt.hpp>

#include <CLI11.hpp>

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <optional>
#include <string>

namespace {

enum ExitCode : int
{
  kOk               = 0,
  kValidationError  = 1,
  kPlanningFailure  = 2,
  kIoError          = 3,
};

struct Flags
{
  std::string input;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::optional<int> segments;
  std::optional<int> max_iter;
  std::optional<int> threads;
  bool auto_merge{false};
  bool no_resample{false};
  bool quiet{false};
};

using namespace rrtsopt;

int run_plan(const Flags & f)
{
  Scenario s = load_scenario(f.input);
  RRTConfig rcfg = s.rrt;
  SoptConfig cfg = s.sopt;
  if (f.seed) rcfg.seed = *f.seed;
  if (f.threads) rcfg.threads = cfg.threads = *f.threads;
  if (f.segments) cfg.n_segments = *f.segments;
  if (f.max_iter) cfg.max_iterations = *f.max_iter;
  if (f.auto_merge) cfg.auto_merge = true;
  if (f.no_resample) cfg.resample = false;
  try {
    rcfg.validate();
    cfg.validate();
  } catch (const ArgumentError & e) {
    throw ValidationError("", 0, e.what());
  }

  const auto t0     = std::chrono::steady_clock::now();
  const Path path   = plan(s.world, s.model, s.start, s.goal, rcfg);
  const double t_rrt = detail::seconds_since(t0);
  const PlanResult r = plan(s.world, s.model, path, cfg);
  const AuditReport a = audit(s.world, s.model, r.trajectory);
  const double cost   = r.cost_history.empty() ? r.reference_cost : r.cost_history.back();

  std::cout << std::setprecision(6) << "rrt*:      " << path.waypoints.size() << " waypoints, length " << path.length
            << ", " << t_rrt << " s\n"
            << "sopt:      " << r.iterations << " iterations, " << (r.converged ? "converged" : "NOT converged")
            << ", " << r.timings.total << " s\n"
            << "segments:  " << cfg.n_segments << " -> " << r.schedule.segment_count() << "\n"
            << "horizon:   " << r.reference.waypoints() << " -> " << r.trajectory.waypoints() << "\n"
            << "cost:      " << r.reference_cost << " -> " << cost << "\n"
            << "clearance: " << a.clearance << " (dense " << a.dense_clearance << ")"
            << (a.safe() ? "" : "  UNSAFE") << "\n";

  if (!f.out.empty()) {
    const std::filesystem::path dir(f.out);
    report_detail::write_file((dir / "report.json").string(), plan_report(r, s.model, t_rrt).dump(2) + "\n");
    SvgOverlay overlay;
    overlay.reference    = &r.reference;
    overlay.split_points = r.schedule.W;
    overlay.title        = std::filesystem::path(f.input).stem().string();
    emit_svg(r.trajectory, s.world, s.model, (dir / "trajectory.svg").string(), overlay);
  }
  return r.converged && a.safe() ? kOk : kPlanningFailure;
}

int run_bench(const Flags & f)
{
  const BenchmarkSuite suite = load_suite(f.input);
  RunOptions opt;
  opt.seed           = f.seed;
  opt.max_iterations = f.max_iter;
  opt.threads        = f.threads;
  opt.no_resample    = f.no_resample;
  opt.out_dir        = f.out;
  opt.log            = f.quiet ? nullptr : &std::cerr;
  try {
    for (const auto & named : suite.scenarios) {
      for (const auto & v : suite.variants) (void)trial_sopt_config(named.scenario, v, opt);
    }
  } catch (const ArgumentError & e) {
    throw ValidationError(f.input, 0, e.what());
  }

  const RunMetrics m = run_suite(suite, opt);
  std::cout << metrics_csv(m);
  return kOk;
}

int run_validate(const Flags & f)
{
  const auto doc = std::make_shared<const JsonDoc>(JsonDoc::load(f.input));
  if (doc->root().is_object() && doc->root().contains("variants")) {
    const BenchmarkSuite suite = parse_suite(doc);
    std::cout << f.input << ": ok (suite, " << suite.scenarios.size() << " scenarios, " << suite.variants.size()
              << " variants, " << suite.trials << " trials)\n";
  } else {
    const Scenario s = parse_scenario(*doc);
    std::cout << f.input << ": ok (" << (s.model.is_arm() ? "planar_arm" : "point_mass_2d") << ", "
              << s.world.obstacles().size() << " obstacles)\n";
  }
  return kOk;
}

}  // namespace

int main(int argc, char ** argv)
{
  CLI::App app{"RRT* reference planning with segmented trajectory optimization"};
  app.require_subcommand(1);
  Flags f;

  const auto add_common = [&](CLI::App * cmd, const std::string & what) {
    cmd->add_option(what, f.input, what + " file (JSON)")->required();
  };
  const auto add_run_flags = [&](CLI::App * cmd) {
    cmd->add_option("--out", f.out, "Directory for reports, CSV and SVG output");
    cmd->add_option("--seed", f.seed, "RRT* seed (bench: base seed, trial index is added)");
    cmd->add_option("--max-iter", f.max_iter, "Maximum sOpt iterations")->check(CLI::PositiveNumber);
    cmd->add_option("--threads", f.threads, "Worker threads (0 = all cores)")->check(CLI::NonNegativeNumber);
    cmd->add_flag("--no-resample", f.no_resample, "Keep the horizon fixed");
  };

  auto * plan_cmd = app.add_subcommand("plan", "Plan one scenario");
  add_common(plan_cmd, "scenario");
  add_run_flags(plan_cmd);
  plan_cmd->add_option("--segments", f.segments, "Initial segment count N")->check(CLI::PositiveNumber);
  plan_cmd->add_flag("--auto-merge", f.auto_merge, "Merge segments that stop making progress");

  auto * bench_cmd = app.add_subcommand("bench", "Run a benchmark suite");
  add_common(bench_cmd, "suite");
  add_run_flags(bench_cmd);
  bench_cmd->add_flag("--quiet", f.quiet, "Do not log each trial to stderr");

  auto * validate_cmd = app.add_subcommand("validate", "Check a scenario or suite file");
  add_common(validate_cmd, "file");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp & e) {
    return app.exit(e);
  } catch (const CLI::ParseError & e) {
    (void)app.exit(e);
    return kValidationError;
  }

  try {
    if (plan_cmd->parsed()) return run_plan(f);
    if (bench_cmd->parsed()) return run_bench(f);
    return run_validate(f);
  } catch (const ValidationError & e) {
    std::cerr << "validation error: " << e.what() << "\n";
    return kValidationError;
  } catch (const IoError & e) {
    std::cerr << "i/o error: " << e.what() << "\n";
    return kIoError;
  } catch (const ArgumentError & e) {
    std::cerr << "invalid argument: " << e.what() << "\n";
    return kValidationError;
  } catch (const std::exception & e) {
    std::cerr << "planning failed: " << e.what() << "\n";
    return kPlanningFailure;
  }
}
