#pragma once

#include <rrtsopt/audit.hpp>
#include <rrtsopt/errors.hpp>
#include <rrtsopt/report.hpp>
#include <rrtsopt/rrt_star.hpp>
#include <rrtsopt/scenario.hpp>
#include <rrtsopt/sopt.hpp>

#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <numbers>
#include <optional>
#include <ostream>
#include <set>
#include <string>
#include <vector>

namespace rrtsopt {

/// Parameters of the random scenario generator. One scenario is produced per seed.
struct GeneratorSpec
{
  RobotModel model = RobotModel::point_mass(0.1);
  Bounds bounds{Vec2(0.0, 0.0), Vec2(12.0, 12.0)};
  int min_obstacles{10};
  int max_obstacles{20};
  double min_radius{0.3};
  double max_radius{1.0};
  /// Share of obstacles drawn as random convex polygons instead of circles.
  double polygon_fraction{0.0};
  /// Body radius of the point mass, applied as obstacle inflation. Ignored for arms,
  /// whose radius is the link-covering body margin.
  double robot_radius{0.1};
  VectorXd start = Vec2(0.5, 0.5);
  VectorXd goal  = Vec2(11.5, 11.5);
  std::uint64_t first_seed{0};
  std::uint64_t last_seed{9};
  RRTConfig rrt{};
  SoptConfig sopt{};
};

struct NamedScenario
{
  std::string name;
  Scenario scenario;
};

/// A planner variant: RRT*-only, or RRT* followed by sOpt with config overrides.
struct Variant
{
  std::string label;
  bool rrt_only{false};
  std::function<void(SoptConfig &)> overrides;
};

struct BenchmarkSuite
{
  std::vector<NamedScenario> scenarios;
  std::vector<Variant> variants;
  int trials{1};

  void validate() const
  {
    if (trials < 1) throw ArgumentError("suite: trials must be at least 1");
    if (scenarios.empty()) throw ArgumentError("suite: no scenarios");
    std::set<std::string> seen;
    for (const auto & v : variants) {
      if (!seen.insert(v.label).second) throw ArgumentError("suite: duplicate variant label \"" + v.label + "\"");
    }
  }
};

/// Command-line style overrides applied on top of every scenario and variant.
struct RunOptions
{
  std::optional<std::uint64_t> seed;
  std::optional<int> max_iterations;
  std::optional<int> threads;
  bool no_resample{false};
  /// Directory for CSV and SVG artifacts; nothing is written when empty.
  std::string out_dir;
  bool write_svg{true};
  std::ostream * log{nullptr};
  /// Called after every trial with the returned trajectory (null when none was produced).
  std::function<void(const TrialRecord &, const Scenario &, const Trajectory *)> observer;
};

namespace bench_detail {

/// splitmix64 stream; unlike std distributions its output is fixed across standard libraries.
class Rng
{
public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}
  std::uint64_t next()
  {
    state_ += 0x9e3779b97f4a7c15ULL;
    std::uint64_t z = state_;
    z               = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z               = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }
  double uniform(double lo, double hi) { return lo + (hi - lo) * static_cast<double>(next() >> 11) * 0x1.0p-53; }
  int integer(int lo, int hi) { return lo + static_cast<int>(next() % static_cast<std::uint64_t>(hi - lo + 1)); }

private:
  std::uint64_t state_;
};

inline Shape random_shape(Rng & rng, const GeneratorSpec & g)
{
  const Vec2 c(rng.uniform(g.bounds.lo.x(), g.bounds.hi.x()), rng.uniform(g.bounds.lo.y(), g.bounds.hi.y()));
  const double r = rng.uniform(g.min_radius, g.max_radius);
  if (rng.uniform(0.0, 1.0) >= g.polygon_fraction) return Circle{c, r};
  const int sides    = rng.integer(3, 6);
  const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
  ConvexPolygon poly;
  for (int i = 0; i < sides; ++i) {
    const double a = phase + 2.0 * std::numbers::pi * i / sides;
    poly.vertices.emplace_back(c + r * Vec2(std::cos(a), std::sin(a)));
  }
  return poly;
}

inline std::string slug(const std::string & s)
{
  std::string out;
  for (char c : s) out += std::isalnum(static_cast<unsigned char>(c)) != 0 ? c : '_';
  return out;
}

}  // namespace bench_detail

/// Draws obstacles uniformly in the bounds, rejecting any that would leave the start or
/// goal body (or the arm base) closer than twice the robot radius.
inline Scenario generate_scenario(const GeneratorSpec & g, std::uint64_t seed)
{
  if (g.min_obstacles < 0 || g.max_obstacles < g.min_obstacles) throw ArgumentError("generator: bad obstacle count range");
  if (!(g.min_radius > 0.0) || g.max_radius < g.min_radius) throw ArgumentError("generator: bad radius range");

  bench_detail::Rng rng(seed * 0x2545f4914f6cdd1dULL + 1);
  const bool arm           = g.model.is_arm();
  const double radius      = arm ? g.model.body_margin() : g.robot_radius;
  const double inflation   = arm ? 0.0 : g.robot_radius;
  const auto start_points  = collision_points(g.model, rest_state(g.model, g.start));
  const auto goal_points   = collision_points(g.model, rest_state(g.model, g.goal));
  std::vector<Vec2> guarded = start_points;
  guarded.insert(guarded.end(), goal_points.begin(), goal_points.end());
  if (arm) guarded.push_back(g.model.arm().base);

  const int count = rng.integer(g.min_obstacles, g.max_obstacles);
  std::vector<Obstacle> obstacles;
  for (int id = 0; id < count; ++id) {
    bool placed = false;
    for (int attempt = 0; attempt < 10000 && !placed; ++attempt) {
      Obstacle o(id, bench_detail::random_shape(rng, g), inflation);
      bool clear = true;
      for (const auto & p : guarded) clear = clear && o.raw_distance(p) >= 2.0 * radius;
      if (clear) {
        obstacles.push_back(std::move(o));
        placed = true;
      }
    }
    if (!placed) throw ArgumentError("generator: could not place obstacle " + std::to_string(id));
  }

  return Scenario{World(g.bounds, std::move(obstacles)), g.model, g.start, g.goal, g.rrt, g.sopt};
}

/// Short variant family name used in the CSV `variant` column.
inline std::string variant_kind(const Variant & v, const SoptConfig & cfg)
{
  if (v.rrt_only) return "rrt_star";
  if (cfg.n_segments == 1) return "rrt_opt";
  return cfg.auto_merge ? "rrt_sopt_auto" : "rrt_sopt";
}

// ---------------------------------------------------------------------------------------
// Suite files

namespace bench_detail {

inline GeneratorSpec parse_generator(const JsonNode & node)
{
  node.allow_only({"robot", "bounds", "obstacles", "radius", "polygon_fraction", "robot_radius", "start", "goal",
                   "seeds", "planner"});
  GeneratorSpec g;
  g.model = detail::parse_robot(node.at("robot"));
  if (auto b = node.find("bounds")) {
    const VectorXd v = b->vector(4);
    if (!(v(2) > v(0) && v(3) > v(1))) b->fail("need xmin < xmax and ymin < ymax");
    g.bounds = Bounds{Vec2(v(0), v(1)), Vec2(v(2), v(3))};
  }
  if (auto c = node.find("obstacles")) {
    const auto items = c->items();
    if (items.size() != 2) c->fail("expected [min, max] obstacle counts");
    g.min_obstacles = items[0].int32();
    g.max_obstacles = items[1].int32();
    if (g.min_obstacles < 0 || g.max_obstacles < g.min_obstacles) c->fail("need 0 <= min <= max");
  }
  if (auto r = node.find("radius")) {
    const Vec2 v = r->vec2();
    if (!(v(0) > 0.0 && v(1) >= v(0))) r->fail("need 0 < min <= max");
    g.min_radius = v(0);
    g.max_radius = v(1);
  }
  if (auto p = node.find("polygon_fraction")) {
    g.polygon_fraction = p->number();
    if (g.polygon_fraction < 0.0 || g.polygon_fraction > 1.0) p->fail("must lie in [0, 1]");
  }
  if (auto r = node.find("robot_radius")) g.robot_radius = r->non_negative();
  const auto dim = static_cast<Eigen::Index>(g.model.config_dim());
  g.start        = node.at("start").vector(dim);
  g.goal         = node.at("goal").vector(dim);
  const auto s   = node.at("seeds");
  const auto lim = s.items();
  if (lim.size() != 2) s.fail("expected [first, last] seeds");
  g.first_seed = lim[0].unsigned64();
  g.last_seed  = lim[1].unsigned64();
  if (g.last_seed < g.first_seed) s.fail("last seed precedes first seed");
  if (g.last_seed - g.first_seed >= 100000) s.fail("seed range too large");
  if (auto planner = node.find("planner")) {
    planner->allow_only({"rrt", "sopt"});
    if (auto r = planner->find("rrt")) detail::apply_rrt_fields(*r, g.rrt);
    if (auto o = planner->find("sopt")) detail::apply_sopt_fields(*o, g.sopt);
  }
  return g;
}

}  // namespace bench_detail

/// Loads a suite file. Scenario paths resolve relative to the suite's directory; every
/// scenario is loaded and validated before returning.
inline BenchmarkSuite parse_suite(std::shared_ptr<const JsonDoc> doc)
{
  const auto root = JsonNode::root(*doc);
  root.allow_only({"name", "trials", "scenarios", "generator", "variants"});
  BenchmarkSuite suite;

  const auto trials = root.at("trials");
  suite.trials      = trials.int32();
  if (suite.trials < 1) trials.fail("trials must be at least 1");

  const auto variants = root.at("variants");
  std::set<std::string> labels;
  for (const auto & v : variants.items()) {
    v.allow_only({"label", "rrt_only", "sopt"});
    Variant var;
    var.label = v.at("label").string();
    if (var.label.empty()) v.at("label").fail("label must not be empty");
    if (!labels.insert(var.label).second) v.at("label").fail("duplicate variant label \"" + var.label + "\"");
    if (auto r = v.find("rrt_only")) var.rrt_only = r->boolean();
    if (auto o = v.find("sopt")) {
      SoptConfig probe;
      detail::apply_sopt_fields(*o, probe);
      const std::string ptr = o->pointer();
      var.overrides         = [doc, ptr](SoptConfig & cfg) {
        const JsonNode node(*doc, doc->root().at(Json::json_pointer(ptr)), ptr);
        detail::apply_sopt_fields(node, cfg);
      };
    }
    suite.variants.push_back(std::move(var));
  }
  if (suite.variants.empty()) variants.fail("need at least one variant");

  const bool has_files = root.has("scenarios");
  const bool has_gen   = root.has("generator");
  if (has_files == has_gen) root.fail("give exactly one of \"scenarios\" or \"generator\"");
  if (has_files) {
    const std::filesystem::path dir = std::filesystem::path(doc->file()).parent_path();
    for (const auto & entry : root.at("scenarios").items()) {
      const std::filesystem::path rel(entry.string());
      const auto full = rel.is_absolute() ? rel : dir / rel;
      Scenario s      = [&] {
        try {
          return load_scenario(full.string());
        } catch (const IoError & e) {
          entry.fail(e.what());
        }
      }();
      suite.scenarios.push_back({full.stem().string(), std::move(s)});
    }
    if (suite.scenarios.empty()) root.at("scenarios").fail("need at least one scenario");
  } else {
    const auto gnode = root.at("generator");
    const auto g     = bench_detail::parse_generator(gnode);
    for (std::uint64_t seed = g.first_seed; seed <= g.last_seed; ++seed) {
      try {
        suite.scenarios.push_back({"gen" + std::to_string(seed), generate_scenario(g, seed)});
      } catch (const ArgumentError & e) {
        gnode.fail(e.what());
      }
    }
  }
  return suite;
}

inline BenchmarkSuite load_suite(const std::string & path)
{
  return parse_suite(std::make_shared<const JsonDoc>(JsonDoc::load(path)));
}

inline BenchmarkSuite parse_suite_text(std::string_view text, const std::string & file = "")
{
  return parse_suite(std::make_shared<const JsonDoc>(JsonDoc::parse(text, file)));
}

// ---------------------------------------------------------------------------------------
// Running

/// RRT* configuration of one trial: the scenario's settings seeded by trial index.
inline RRTConfig trial_rrt_config(const Scenario & s, int trial, const RunOptions & opt)
{
  RRTConfig cfg = s.rrt;
  cfg.seed      = opt.seed.value_or(s.rrt.seed) + static_cast<std::uint64_t>(trial);
  if (opt.threads) cfg.threads = *opt.threads;
  return cfg;
}

inline SoptConfig trial_sopt_config(const Scenario & s, const Variant & v, const RunOptions & opt)
{
  SoptConfig cfg = s.sopt;
  if (v.overrides) v.overrides(cfg);
  if (opt.max_iterations) cfg.max_iterations = *opt.max_iterations;
  if (opt.threads) cfg.threads = *opt.threads;
  if (opt.no_resample) cfg.resample = false;
  cfg.validate();
  return cfg;
}

namespace bench_detail {

inline double mean(const std::vector<double> & xs)
{
  if (xs.empty()) return std::numeric_limits<double>::quiet_NaN();
  double s = 0.0;
  for (double x : xs) s += x;
  return s / static_cast<double>(xs.size());
}

/// Sample standard deviation; 0 for fewer than two values.
inline double stddev(const std::vector<double> & xs)
{
  if (xs.empty()) return std::numeric_limits<double>::quiet_NaN();
  if (xs.size() < 2) return 0.0;
  const double m = mean(xs);
  double s       = 0.0;
  for (double x : xs) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(xs.size() - 1));
}

}  // namespace bench_detail

/// Aggregates trial records into one summary row per variant, in suite order.
inline std::vector<VariantMetrics> summarize(const BenchmarkSuite & suite, const std::vector<TrialRecord> & trials)
{
  std::vector<VariantMetrics> out;
  for (const auto & v : suite.variants) {
    VariantMetrics m;
    m.label = v.label;
    std::vector<double> time, rrt, cost, iters, segs;
    int successes = 0;
    for (const auto & t : trials) {
      if (t.label != v.label) continue;
      m.variant          = t.variant;
      m.segments_initial = t.segments_initial;
      ++m.trials;
      if (t.ran) {
        time.push_back(t.time_s);
        rrt.push_back(t.rrt_time_s);
        iters.push_back(t.iterations);
        segs.push_back(t.segments_final);
      }
      if (t.success) {
        ++successes;
        cost.push_back(t.final_cost);
      }
    }
    m.time_mean_s         = bench_detail::mean(time);
    m.time_std_s          = bench_detail::stddev(time);
    m.rrt_time_mean_s     = bench_detail::mean(rrt);
    m.cost_mean           = bench_detail::mean(cost);
    m.iters_mean          = bench_detail::mean(iters);
    m.segments_final_mean = bench_detail::mean(segs);
    m.success_rate_pct    = m.trials > 0 ? 100.0 * successes / m.trials : 0.0;
    out.push_back(std::move(m));
  }
  return out;
}

/// Runs every (scenario, trial, variant) combination. The RRT* path of a (scenario, trial)
/// pair is computed once and shared by all variants, so they optimize the same reference.
inline RunMetrics run_suite(const BenchmarkSuite & suite, const RunOptions & opt = {})
{
  using clock = std::chrono::steady_clock;
  suite.validate();
  RunMetrics metrics;

  for (const auto & named : suite.scenarios) {
    const Scenario & s = named.scenario;
    for (int trial = 0; trial < suite.trials; ++trial) {
      std::optional<Path> path;
      std::string rrt_failure;
      const auto t_rrt = clock::now();
      try {
        path = plan(s.world, s.model, s.start, s.goal, trial_rrt_config(s, trial, opt));
      } catch (const std::exception & e) {
        rrt_failure = e.what();
      }
      const double rrt_time = detail::seconds_since(t_rrt);

      for (std::size_t vi = 0; vi < suite.variants.size(); ++vi) {
        const Variant & v = suite.variants[vi];
        const SoptConfig cfg = trial_sopt_config(s, v, opt);
        TrialRecord rec;
        rec.variant          = variant_kind(v, cfg);
        rec.label            = v.label;
        rec.scenario         = named.name;
        rec.trial            = trial;
        rec.rrt_time_s       = rrt_time;
        rec.time_s           = rrt_time;
        rec.segments_initial = v.rrt_only ? 0 : cfg.n_segments;

        std::optional<Trajectory> result;
        std::optional<Trajectory> reference;
        std::vector<Index> splits;
        if (!path) {
          rec.failure = rrt_failure;
        } else if (v.rrt_only) {
          const auto t0 = clock::now();
          try {
            reference.emplace(generate_reference(*path, s.model, cfg));
            rec.opt_time_s      = detail::seconds_since(t0);
            rec.reference_cost  = trajectory_cost(*reference, goal_state(s.model, *path), cfg);
            rec.final_cost      = rec.reference_cost;
            rec.converged       = true;
            rec.horizon_initial = rec.horizon_final = reference->waypoints();
            rec.ran             = true;
            result              = *reference;
          } catch (const std::exception & e) {
            rec.failure = e.what();
          }
        } else {
          const auto t0 = clock::now();
          try {
            PlanResult r        = plan(s.world, s.model, *path, cfg);
            rec.opt_time_s      = detail::seconds_since(t0);
            rec.reference_cost  = r.reference_cost;
            rec.final_cost      = r.cost_history.empty() ? r.reference_cost : r.cost_history.back();
            rec.converged       = r.converged;
            rec.iterations      = r.iterations;
            rec.segments_final  = r.schedule.segment_count();
            rec.horizon_initial = r.reference.waypoints();
            rec.horizon_final   = r.trajectory.waypoints();
            rec.ran             = true;
            if (!r.converged) rec.failure = "iteration limit reached";
            splits    = r.schedule.W;
            reference = std::move(r.reference);
            result    = std::move(r.trajectory);
          } catch (const std::exception & e) {
            rec.opt_time_s = detail::seconds_since(t0);
            rec.failure    = e.what();
          }
        }
        rec.time_s = rec.rrt_time_s + rec.opt_time_s;

        if (result) {
          const AuditReport a = audit(s.world, s.model, *result);
          rec.clearance       = a.clearance;
          rec.dense_clearance = a.dense_clearance;
          rec.audit_safe      = a.safe();
          if (!rec.audit_safe && rec.failure.empty()) rec.failure = "safety audit failed";
        }
        rec.success = rec.converged && rec.audit_safe;

        if (opt.observer) opt.observer(rec, s, result ? &*result : nullptr);
        if (opt.log != nullptr) {
          *opt.log << named.name << " trial " << trial << " [" << v.label << "] "
                   << (rec.success ? "ok" : "FAIL") << " cost " << report_detail::number(rec.final_cost) << " iters "
                   << rec.iterations << " time " << report_detail::fixed(rec.time_s, 3) << "s"
                   << (rec.failure.empty() ? "" : " (" + rec.failure + ")") << "\n";
        }
        if (result && opt.write_svg && !opt.out_dir.empty()) {
          SvgOverlay overlay;
          overlay.reference    = v.rrt_only ? nullptr : &*reference;
          overlay.split_points = splits;
          overlay.title        = named.name + " / " + v.label + " / trial " + std::to_string(trial);
          const auto file      = std::filesystem::path(opt.out_dir) / "svg" /
                            (named.name + "__v" + std::to_string(vi) + "_" + bench_detail::slug(v.label) + "__t" +
                             std::to_string(trial) + ".svg");
          emit_svg(*result, s.world, s.model, file.string(), overlay);
        }
        metrics.trials.push_back(std::move(rec));
      }
    }
  }

  metrics.variants = summarize(suite, metrics.trials);
  if (!opt.out_dir.empty()) {
    emit_csv(metrics, (std::filesystem::path(opt.out_dir) / "summary.csv").string());
    emit_trials_csv(metrics, (std::filesystem::path(opt.out_dir) / "trials.csv").string());
  }
  return metrics;
}

}  // namespace rrtsopt
