#pragma once

#include <rrtsopt/errors.hpp>
#include <rrtsopt/robots.hpp>
#include <rrtsopt/sopt.hpp>
#include <rrtsopt/world.hpp>

#include <json.hpp>

#include <array>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

namespace rrtsopt {

/// Outcome of one (scenario, variant, trial) run.
struct TrialRecord
{
  std::string variant;
  std::string label;
  std::string scenario;
  int trial{0};
  bool success{false};
  bool converged{false};
  bool audit_safe{false};
  /// RRT* and optimizer wall times [s]; time_s is their sum.
  double rrt_time_s{0.0};
  double opt_time_s{0.0};
  double time_s{0.0};
  double reference_cost{std::numeric_limits<double>::quiet_NaN()};
  double final_cost{std::numeric_limits<double>::quiet_NaN()};
  int iterations{0};
  int segments_initial{0};
  int segments_final{0};
  Index horizon_initial{0};
  Index horizon_final{0};
  double clearance{std::numeric_limits<double>::quiet_NaN()};
  double dense_clearance{std::numeric_limits<double>::quiet_NaN()};
  /// True once the optimizer (or, for RRT*-only, the reference) produced a trajectory.
  bool ran{false};
  std::string failure;
};

/// One summary row. Times, iterations and final segment counts average over trials that
/// produced a trajectory; cost averages over successful trials.
struct VariantMetrics
{
  std::string variant;
  std::string label;
  int trials{0};
  double time_mean_s{std::numeric_limits<double>::quiet_NaN()};
  double time_std_s{std::numeric_limits<double>::quiet_NaN()};
  double rrt_time_mean_s{std::numeric_limits<double>::quiet_NaN()};
  double cost_mean{std::numeric_limits<double>::quiet_NaN()};
  double iters_mean{std::numeric_limits<double>::quiet_NaN()};
  int segments_initial{0};
  double segments_final_mean{std::numeric_limits<double>::quiet_NaN()};
  double success_rate_pct{0.0};
};

struct RunMetrics
{
  std::vector<VariantMetrics> variants;
  std::vector<TrialRecord> trials;
};

inline const std::array<std::string_view, 11> kCsvHeader{
    "variant",  "label",       "trials",           "time_mean_s",         "time_std_s",      "rrt_time_mean_s",
    "cost_mean", "iters_mean", "segments_initial", "segments_final_mean", "success_rate_pct"};

inline const std::array<std::string_view, 21> kTrialCsvHeader{
    "variant",         "label",          "scenario",        "trial",         "success",    "converged",
    "audit_safe",      "rrt_time_s",     "opt_time_s",      "time_s",        "reference_cost", "final_cost",
    "iterations",      "segments_initial", "segments_final", "horizon_initial", "horizon_final", "clearance",
    "dense_clearance", "ran",            "failure"};

/// Columns holding wall-clock measurements; everything else is deterministic.
inline bool is_timing_column(std::string_view name) { return name.size() > 2 && name.substr(name.size() - 2) == "_s"; }

namespace report_detail {

/// Shortest round-trip decimal form, independent of the C locale.
inline std::string number(double v)
{
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  std::array<char, 64> buf{};
  const auto res = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  return {buf.data(), res.ptr};
}

/// Fixed-point form with `digits` decimals, for SVG coordinates.
inline std::string fixed(double v, int digits = 2)
{
  std::array<char, 64> buf{};
  const auto res = std::to_chars(buf.data(), buf.data() + buf.size(), v, std::chars_format::fixed, digits);
  std::string s(buf.data(), res.ptr);
  if (s == "-0.00" || s == "-0.0" || s == "-0") s.erase(0, 1);
  return s;
}

inline double parse_number(std::string_view s)
{
  if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
  if (s == "inf") return std::numeric_limits<double>::infinity();
  if (s == "-inf") return -std::numeric_limits<double>::infinity();
  double v       = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw ArgumentError("csv: not a number: '" + std::string(s) + "'");
  }
  return v;
}

inline std::string csv_field(const std::string & s)
{
  if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

inline std::vector<std::string> split_csv_line(const std::string & line)
{
  std::vector<std::string> out(1);
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        out.back() += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        out.back() += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.emplace_back();
    } else {
      out.back() += c;
    }
  }
  return out;
}

template <std::size_t N>
std::string header_line(const std::array<std::string_view, N> & cols)
{
  std::string s;
  for (std::size_t i = 0; i < N; ++i) s += (i ? "," : "") + std::string(cols[i]);
  return s + "\n";
}

inline void write_file(const std::string & path, const std::string & content)
{
  const std::filesystem::path p(path);
  std::error_code ec;
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path(), ec);
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path);
  out << content;
  out.flush();
  if (!out) throw IoError("write failed for " + path);
}

inline std::string read_file(const std::string & path)
{
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace report_detail

// ---------------------------------------------------------------------------------------
// CSV

inline std::string metrics_csv(const RunMetrics & metrics)
{
  using report_detail::number;
  std::string out = report_detail::header_line(kCsvHeader);
  for (const auto & m : metrics.variants) {
    out += report_detail::csv_field(m.variant) + "," + report_detail::csv_field(m.label) + "," +
           std::to_string(m.trials) + "," + number(m.time_mean_s) + "," + number(m.time_std_s) + "," +
           number(m.rrt_time_mean_s) + "," + number(m.cost_mean) + "," + number(m.iters_mean) + "," +
           std::to_string(m.segments_initial) + "," + number(m.segments_final_mean) + "," +
           number(m.success_rate_pct) + "\n";
  }
  return out;
}

inline std::string trials_csv(const RunMetrics & metrics)
{
  using report_detail::number;
  std::string out = report_detail::header_line(kTrialCsvHeader);
  for (const auto & t : metrics.trials) {
    out += report_detail::csv_field(t.variant) + "," + report_detail::csv_field(t.label) + "," +
           report_detail::csv_field(t.scenario) + "," + std::to_string(t.trial) + "," + (t.success ? "1" : "0") + "," +
           (t.converged ? "1" : "0") + "," + (t.audit_safe ? "1" : "0") + "," + number(t.rrt_time_s) + "," +
           number(t.opt_time_s) + "," + number(t.time_s) + "," + number(t.reference_cost) + "," +
           number(t.final_cost) + "," + std::to_string(t.iterations) + "," + std::to_string(t.segments_initial) +
           "," + std::to_string(t.segments_final) + "," + std::to_string(t.horizon_initial) + "," +
           std::to_string(t.horizon_final) + "," + number(t.clearance) + "," + number(t.dense_clearance) + "," +
           (t.ran ? "1" : "0") + "," + report_detail::csv_field(t.failure) + "\n";
  }
  return out;
}

inline void emit_csv(const RunMetrics & metrics, const std::string & path)
{
  report_detail::write_file(path, metrics_csv(metrics));
}

inline void emit_trials_csv(const RunMetrics & metrics, const std::string & path)
{
  report_detail::write_file(path, trials_csv(metrics));
}

/// Parses the summary CSV written by emit_csv.
inline std::vector<VariantMetrics> parse_metrics_csv(const std::string & text)
{
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line + "\n" != report_detail::header_line(kCsvHeader)) {
    throw ArgumentError("csv: unexpected header");
  }
  std::vector<VariantMetrics> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto f = report_detail::split_csv_line(line);
    if (f.size() != kCsvHeader.size()) throw ArgumentError("csv: wrong field count in '" + line + "'");
    using report_detail::parse_number;
    VariantMetrics m;
    m.variant             = f[0];
    m.label               = f[1];
    m.trials              = static_cast<int>(parse_number(f[2]));
    m.time_mean_s         = parse_number(f[3]);
    m.time_std_s          = parse_number(f[4]);
    m.rrt_time_mean_s     = parse_number(f[5]);
    m.cost_mean           = parse_number(f[6]);
    m.iters_mean          = parse_number(f[7]);
    m.segments_initial    = static_cast<int>(parse_number(f[8]));
    m.segments_final_mean = parse_number(f[9]);
    m.success_rate_pct    = parse_number(f[10]);
    out.push_back(std::move(m));
  }
  return out;
}

inline std::vector<VariantMetrics> read_metrics_csv(const std::string & path)
{
  return parse_metrics_csv(report_detail::read_file(path));
}

/// CSV text with every timing column blanked, for determinism comparisons.
inline std::string strip_timing_columns(const std::string & csv)
{
  std::istringstream in(csv);
  std::string line;
  std::vector<bool> drop;
  std::string out;
  bool header = true;
  while (std::getline(in, line)) {
    auto fields = report_detail::split_csv_line(line);
    if (header) {
      for (const auto & f : fields) drop.push_back(is_timing_column(f));
      header = false;
    }
    for (std::size_t i = 0; i < fields.size(); ++i) {
      if (i > 0) out += ',';
      if (i >= drop.size() || !drop[i]) out += report_detail::csv_field(fields[i]);
    }
    out += '\n';
  }
  return out;
}

// ---------------------------------------------------------------------------------------
// SVG

/// Optional extras drawn on top of a trajectory plot.
struct SvgOverlay
{
  const Trajectory * reference{nullptr};
  /// Waypoint indices of split points on the plotted trajectory.
  std::vector<Index> split_points;
  std::string title;
};

namespace report_detail {

class SvgCanvas
{
public:
  explicit SvgCanvas(const Bounds & b) : lo_(b.lo), hi_(b.hi)
  {
    const Vec2 extent = hi_ - lo_;
    scale_            = kSize / std::max(extent.x(), extent.y());
    width_            = extent.x() * scale_ + 2 * kPad;
    height_           = extent.y() * scale_ + 2 * kPad;
  }

  [[nodiscard]] double length(double l) const { return l * scale_; }
  [[nodiscard]] std::string x(double wx) const { return fixed(kPad + (wx - lo_.x()) * scale_); }
  [[nodiscard]] std::string y(double wy) const { return fixed(kPad + (hi_.y() - wy) * scale_); }
  [[nodiscard]] std::string point(const Vec2 & p) const { return x(p.x()) + "," + y(p.y()); }

  [[nodiscard]] std::string points(const std::vector<Vec2> & pts) const
  {
    std::string s;
    for (std::size_t i = 0; i < pts.size(); ++i) s += (i ? " " : "") + point(pts[i]);
    return s;
  }

  [[nodiscard]] std::string header() const
  {
    return "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
           "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"" +
           fixed(width_) + "\" height=\"" + fixed(height_) + "\" viewBox=\"0 0 " + fixed(width_) + " " +
           fixed(height_) + "\">\n";
  }

  [[nodiscard]] std::string frame() const
  {
    return "<rect class=\"bounds\" x=\"" + fixed(kPad) + "\" y=\"" + fixed(kPad) + "\" width=\"" +
           fixed(width_ - 2 * kPad) + "\" height=\"" + fixed(height_ - 2 * kPad) +
           "\" fill=\"none\" stroke=\"#888888\" stroke-width=\"1\"/>\n";
  }

private:
  static constexpr double kSize = 600.0;
  static constexpr double kPad  = 10.0;
  Vec2 lo_;
  Vec2 hi_;
  double scale_{1.0};
  double width_{0.0};
  double height_{0.0};
};

inline std::string xml_escape(const std::string & s)
{
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

/// The path traced in the workspace: the position, or the arm's end effector.
inline std::vector<Vec2> workspace_trace(const RobotModel & model, const Trajectory & traj)
{
  std::vector<Vec2> pts;
  for (Index t = 0; t < traj.waypoints(); ++t) pts.push_back(joint_positions(model, traj.state(t)).back());
  return pts;
}

}  // namespace report_detail

inline std::string render_svg(const Trajectory & traj, const World & world, const RobotModel & model,
                              const SvgOverlay & overlay = {})
{
  using report_detail::fixed;
  Bounds view = world.bounds();
  const auto trace = report_detail::workspace_trace(model, traj);
  for (const auto & p : trace) {
    view.lo = view.lo.cwiseMin(p);
    view.hi = view.hi.cwiseMax(p);
  }
  const report_detail::SvgCanvas c(view);

  std::string s = c.header();
  if (!overlay.title.empty()) s += "<title>" + report_detail::xml_escape(overlay.title) + "</title>\n";
  s += c.frame();

  for (const auto & o : world.obstacles()) {
    const std::string stroke = o.inflation() > 0.0 ? "#d9a3a3\" stroke-width=\"" + fixed(2.0 * c.length(o.inflation()))
                                                   : "none\" stroke-width=\"0";
    const std::string style = " fill=\"#c04040\" stroke=\"" + stroke + "\" stroke-linejoin=\"round\"";
    if (const auto * circ = std::get_if<Circle>(&o.shape())) {
      s += "<circle class=\"obstacle\" id=\"obstacle-" + std::to_string(o.id()) + "\" cx=\"" + c.x(circ->center.x()) +
           "\" cy=\"" + c.y(circ->center.y()) + "\" r=\"" + fixed(c.length(circ->radius)) + "\"" + style + "/>\n";
    } else {
      s += "<polygon class=\"obstacle\" id=\"obstacle-" + std::to_string(o.id()) + "\" points=\"" +
           c.points(std::get<ConvexPolygon>(o.shape()).vertices) + "\"" + style + "/>\n";
    }
  }

  if (model.is_arm()) {
    const Index steps  = traj.waypoints() - 1;
    const Index stride = std::max<Index>(1, steps / 10);
    for (Index t = 0; t < steps; t += stride) {
      s += "<path class=\"pose\" d=\"M " + c.points(joint_positions(model, traj.state(t))) +
           "\" fill=\"none\" stroke=\"#4060c0\" stroke-opacity=\"0.35\" stroke-width=\"" +
           fixed(std::max(1.0, 2.0 * c.length(model.arm().sphere_radius))) + "\" stroke-linecap=\"round\"/>\n";
    }
    s += "<path class=\"pose\" d=\"M " + c.points(joint_positions(model, traj.state(traj.waypoints() - 1))) +
         "\" fill=\"none\" stroke=\"#4060c0\" stroke-opacity=\"0.35\" stroke-width=\"" +
         fixed(std::max(1.0, 2.0 * c.length(model.arm().sphere_radius))) + "\" stroke-linecap=\"round\"/>\n";
  }

  if (overlay.reference != nullptr) {
    s += "<polyline class=\"reference\" points=\"" + c.points(report_detail::workspace_trace(model, *overlay.reference)) +
         "\" fill=\"none\" stroke=\"#707070\" stroke-width=\"1.5\" stroke-dasharray=\"6,4\"/>\n";
  }
  s += "<polyline class=\"trajectory\" points=\"" + c.points(trace) +
       "\" fill=\"none\" stroke=\"#1060d0\" stroke-width=\"2\"/>\n";

  for (Index w : overlay.split_points) {
    if (w < 0 || w >= traj.waypoints()) continue;
    const Vec2 p = trace[static_cast<std::size_t>(w)];
    s += "<circle class=\"split\" cx=\"" + c.x(p.x()) + "\" cy=\"" + c.y(p.y()) +
         "\" r=\"4.00\" fill=\"#ffffff\" stroke=\"#202020\" stroke-width=\"1.5\"/>\n";
  }
  return s + "</svg>\n";
}

inline void emit_svg(const Trajectory & traj, const World & world, const RobotModel & model, const std::string & path,
                     const SvgOverlay & overlay = {})
{
  report_detail::write_file(path, render_svg(traj, world, model, overlay));
}

// ---------------------------------------------------------------------------------------
// Plan report

inline nlohmann::json plan_report(const PlanResult & r, const RobotModel & model, double rrt_time_s)
{
  using nlohmann::json;
  json states = json::array();
  for (Index t = 0; t < r.trajectory.waypoints(); ++t) {
    const VectorXd z = r.trajectory.state(t);
    states.push_back(std::vector<double>(z.data(), z.data() + z.size()));
  }
  json inputs = json::array();
  for (Index t = 0; t + 1 < r.trajectory.waypoints(); ++t) {
    const VectorXd u = r.trajectory.input(t);
    inputs.push_back(std::vector<double>(u.data(), u.data() + u.size()));
  }
  std::vector<Index> horizons(r.horizon_history.begin(), r.horizon_history.end());
  return json{{"robot", model.is_arm() ? "planar_arm" : "point_mass_2d"},
              {"dt", model.dt()},
              {"converged", r.converged},
              {"iterations", r.iterations},
              {"reference_cost", r.reference_cost},
              {"final_cost", r.cost_history.empty() ? r.reference_cost : r.cost_history.back()},
              {"cost_history", r.cost_history},
              {"segment_count_history", r.segment_count_history},
              {"horizon_history", horizons},
              {"horizon", r.trajectory.waypoints()},
              {"reference_horizon", r.reference.waypoints()},
              {"split_points", r.schedule.W},
              {"segment_failures", r.segment_failures},
              {"timings_s",
               {{"rrt", rrt_time_s},
                {"reference", r.timings.reference},
                {"optimize", r.timings.optimize},
                {"merge", r.timings.merge},
                {"resample", r.timings.resample},
                {"sopt_total", r.timings.total}}},
              {"states", std::move(states)},
              {"inputs", std::move(inputs)}};
}

}  // namespace rrtsopt
