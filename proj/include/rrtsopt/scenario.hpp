#pragma once

#include <rrtsopt/errors.hpp>
#include <rrtsopt/robots.hpp>
#include <rrtsopt/rrt_star.hpp>
#include <rrtsopt/sopt.hpp>
#include <rrtsopt/world.hpp>

#include <json.hpp>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <initializer_list>
#include <iterator>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

namespace rrtsopt {

using Json = nlohmann::json;

namespace detail {

/// Character iterator that reports how far the parser has read.
struct CountingIterator
{
  using iterator_category = std::input_iterator_tag;
  using value_type        = char;
  using difference_type   = std::ptrdiff_t;
  using pointer           = const char *;
  using reference         = const char &;

  const char * p{nullptr};
  const char ** probe{nullptr};

  reference operator*() const { return *p; }
  CountingIterator & operator++()
  {
    ++p;
    if (probe != nullptr) *probe = p;
    return *this;
  }
  CountingIterator operator++(int)
  {
    auto old = *this;
    ++*this;
    return old;
  }
  bool operator==(const CountingIterator & o) const { return p == o.p; }
  bool operator!=(const CountingIterator & o) const { return p != o.p; }
};

inline std::string escape_pointer_token(const std::string & key)
{
  std::string out;
  for (char c : key) {
    if (c == '~') {
      out += "~0";
    } else if (c == '/') {
      out += "~1";
    } else {
      out += c;
    }
  }
  return out;
}

}  // namespace detail

/// A parsed JSON document that remembers the source line of every value, keyed by JSON pointer.
class JsonDoc
{
public:
  static JsonDoc parse(std::string_view text, std::string file)
  {
    JsonDoc doc;
    doc.file_ = std::move(file);
    doc.text_ = std::string(text);
    for (std::size_t i = 0; i < doc.text_.size(); ++i) {
      if (doc.text_[i] == '\n') doc.newlines_.push_back(i);
    }

    const char * begin = doc.text_.data();
    const char * read  = begin;
    detail::CountingIterator first{begin, &read};
    detail::CountingIterator last{begin + doc.text_.size(), nullptr};
    Builder sax(doc, begin, read);
    Json::sax_parse(first, last, &sax);
    if (!doc.root_) doc.root_ = std::make_shared<Json>();
    return doc;
  }

  static JsonDoc load(const std::string & path)
  {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse(ss.str(), path);
  }

  [[nodiscard]] const Json & root() const { return *root_; }
  [[nodiscard]] const std::string & file() const noexcept { return file_; }

  /// 1-based line of the value at `pointer`, falling back to the closest recorded ancestor.
  [[nodiscard]] std::size_t line(std::string pointer) const
  {
    while (true) {
      if (auto it = lines_.find(pointer); it != lines_.end()) return it->second;
      if (pointer.empty()) return 0;
      pointer.erase(pointer.rfind('/'));
    }
  }

  [[noreturn]] void fail(const std::string & pointer, const std::string & message) const
  {
    throw ValidationError(file_, line(pointer), message);
  }

  /// 1-based line holding byte `offset`.
  [[nodiscard]] std::size_t line_of_offset(std::size_t offset) const
  {
    return static_cast<std::size_t>(std::lower_bound(newlines_.begin(), newlines_.end(), offset) - newlines_.begin()) + 1;
  }

private:
  class Builder
  {
  public:
    Builder(JsonDoc & doc, const char * begin, const char *& read) : doc_(doc), begin_(begin), read_(read) {}

    bool null() { return put(Json(nullptr)); }
    bool boolean(bool v) { return put(Json(v)); }
    bool number_integer(Json::number_integer_t v) { return put(Json(v)); }
    bool number_unsigned(Json::number_unsigned_t v) { return put(Json(v)); }
    bool number_float(Json::number_float_t v, const std::string &) { return put(Json(v)); }
    bool string(std::string & v) { return put(Json(v)); }
    bool binary(Json::binary_t & v) { return put(Json(v)); }

    bool start_object(std::size_t)
    {
      Json * slot = put_slot(Json::object());
      stack_.push_back(slot);
      return true;
    }
    bool start_array(std::size_t)
    {
      Json * slot = put_slot(Json::array());
      stack_.push_back(slot);
      return true;
    }
    bool end_object() { return pop(); }
    bool end_array() { return pop(); }

    bool key(std::string & k)
    {
      const std::string ptr = paths_.back() + "/" + detail::escape_pointer_token(k);
      if (stack_.back()->contains(k)) {
        throw ValidationError(doc_.file_, current_line(), "duplicate key \"" + k + "\"");
      }
      key_ = k;
      doc_.lines_[ptr] = current_line();
      return true;
    }

    bool parse_error(std::size_t position, const std::string & token, const nlohmann::detail::exception & ex)
    {
      std::string what = ex.what();
      if (auto at = what.find("syntax error"); at != std::string::npos) what = what.substr(at);
      if (!token.empty()) what += " (near '" + token + "')";
      throw ValidationError(doc_.file_, doc_.line_of_offset(position > 0 ? position - 1 : 0), what);
    }

  private:
    std::size_t current_line() const
    {
      std::size_t i = static_cast<std::size_t>(read_ - begin_);
      if (i > 0) --i;
      while (i > 0 && std::isspace(static_cast<unsigned char>(doc_.text_[i])) != 0) --i;
      return doc_.line_of_offset(i);
    }

    Json * put_slot(Json value)
    {
      if (stack_.empty()) {
        doc_.root_ = std::make_shared<Json>(std::move(value));
        doc_.lines_[""] = current_line();
        paths_.emplace_back("");
        return doc_.root_.get();
      }
      Json & parent = *stack_.back();
      std::string ptr;
      Json * slot = nullptr;
      if (parent.is_array()) {
        ptr = paths_.back() + "/" + std::to_string(parent.size());
        parent.push_back(std::move(value));
        slot = &parent.back();
        doc_.lines_[ptr] = current_line();
      } else {
        ptr  = paths_.back() + "/" + detail::escape_pointer_token(key_);
        slot = &(parent[key_] = std::move(value));
      }
      if (slot->is_structured()) paths_.push_back(ptr);
      return slot;
    }

    bool put(Json value)
    {
      put_slot(std::move(value));
      return true;
    }

    bool pop()
    {
      stack_.pop_back();
      paths_.pop_back();
      return true;
    }

    JsonDoc & doc_;
    const char * begin_;
    const char *& read_;
    std::vector<Json *> stack_;
    std::vector<std::string> paths_;
    std::string key_;
  };

  std::string file_;
  std::string text_;
  std::vector<std::size_t> newlines_;
  std::shared_ptr<Json> root_;
  std::map<std::string, std::size_t> lines_;
};

/// Typed, line-aware view of one value inside a JsonDoc.
class JsonNode
{
public:
  JsonNode(const JsonDoc & doc, const Json & value, std::string pointer)
      : doc_(&doc), value_(&value), pointer_(std::move(pointer))
  {}

  static JsonNode root(const JsonDoc & doc) { return {doc, doc.root(), ""}; }

  [[nodiscard]] const Json & json() const noexcept { return *value_; }
  [[nodiscard]] const std::string & pointer() const noexcept { return pointer_; }
  [[nodiscard]] std::size_t line() const { return doc_->line(pointer_); }
  [[noreturn]] void fail(const std::string & message) const { doc_->fail(pointer_, describe() + ": " + message); }

  [[nodiscard]] bool has(const std::string & key) const { return value_->is_object() && value_->contains(key); }

  [[nodiscard]] JsonNode at(const std::string & key) const
  {
    expect_object();
    auto it = value_->find(key);
    if (it == value_->end()) fail("missing required key \"" + key + "\"");
    return {*doc_, *it, pointer_ + "/" + detail::escape_pointer_token(key)};
  }

  [[nodiscard]] std::optional<JsonNode> find(const std::string & key) const
  {
    expect_object();
    auto it = value_->find(key);
    if (it == value_->end()) return std::nullopt;
    return JsonNode{*doc_, *it, pointer_ + "/" + detail::escape_pointer_token(key)};
  }

  /// Rejects keys outside `allowed`, pointing at the offending key's line.
  void allow_only(std::initializer_list<std::string_view> allowed) const
  {
    expect_object();
    for (const auto & item : value_->items()) {
      if (std::find(allowed.begin(), allowed.end(), item.key()) == allowed.end()) {
        doc_->fail(pointer_ + "/" + detail::escape_pointer_token(item.key()),
                   describe() + ": unknown key \"" + item.key() + "\"");
      }
    }
  }

  [[nodiscard]] std::vector<JsonNode> items() const
  {
    if (!value_->is_array()) fail("expected an array");
    std::vector<JsonNode> out;
    for (std::size_t i = 0; i < value_->size(); ++i) {
      out.emplace_back(*doc_, (*value_)[i], pointer_ + "/" + std::to_string(i));
    }
    return out;
  }

  [[nodiscard]] double number() const
  {
    if (!value_->is_number()) fail("expected a number");
    const double v = value_->get<double>();
    if (!std::isfinite(v)) fail("expected a finite number");
    return v;
  }

  [[nodiscard]] double positive() const
  {
    const double v = number();
    if (!(v > 0.0)) fail("expected a positive number");
    return v;
  }

  [[nodiscard]] double non_negative() const
  {
    const double v = number();
    if (!(v >= 0.0)) fail("expected a non-negative number");
    return v;
  }

  [[nodiscard]] std::int64_t integer() const
  {
    if (!value_->is_number_integer()) fail("expected an integer");
    if (value_->is_number_unsigned() && value_->get<std::uint64_t>() > std::numeric_limits<std::int64_t>::max()) {
      fail("integer out of range");
    }
    return value_->get<std::int64_t>();
  }

  [[nodiscard]] int int32() const
  {
    const auto v = integer();
    if (v < std::numeric_limits<int>::min() || v > std::numeric_limits<int>::max()) fail("integer out of range");
    return static_cast<int>(v);
  }

  [[nodiscard]] std::uint64_t unsigned64() const
  {
    if (!value_->is_number_unsigned()) fail("expected a non-negative integer");
    return value_->get<std::uint64_t>();
  }

  [[nodiscard]] bool boolean() const
  {
    if (!value_->is_boolean()) fail("expected true or false");
    return value_->get<bool>();
  }

  [[nodiscard]] std::string string() const
  {
    if (!value_->is_string()) fail("expected a string");
    return value_->get<std::string>();
  }

  [[nodiscard]] VectorXd vector(std::optional<Eigen::Index> size = std::nullopt) const
  {
    const auto elems = items();
    if (size && static_cast<Eigen::Index>(elems.size()) != *size) {
      fail("expected " + std::to_string(*size) + " numbers, got " + std::to_string(elems.size()));
    }
    VectorXd v(static_cast<Eigen::Index>(elems.size()));
    for (std::size_t i = 0; i < elems.size(); ++i) v(static_cast<Eigen::Index>(i)) = elems[i].number();
    return v;
  }

  [[nodiscard]] Vec2 vec2() const { return vector(2); }

private:
  void expect_object() const
  {
    if (!value_->is_object()) fail("expected an object");
  }

  [[nodiscard]] std::string describe() const { return pointer_.empty() ? std::string("document") : pointer_; }

  const JsonDoc * doc_;
  const Json * value_;
  std::string pointer_;
};

/// Everything needed to run one planning problem.
struct Scenario
{
  World world;
  RobotModel model;
  VectorXd start;
  VectorXd goal;
  RRTConfig rrt;
  SoptConfig sopt;
};

namespace detail {

inline void apply_rrt_fields(const JsonNode & node, RRTConfig & cfg)
{
  node.allow_only({"n_samples", "n_trees", "steer_step", "goal_bias", "rewire_gamma", "edge_check_resolution", "seed",
                   "max_batches", "threads"});
  if (auto v = node.find("n_samples")) cfg.n_samples = v->int32();
  if (auto v = node.find("n_trees")) cfg.n_trees = v->int32();
  if (auto v = node.find("steer_step")) cfg.steer_step = v->number();
  if (auto v = node.find("goal_bias")) cfg.goal_bias = v->number();
  if (auto v = node.find("rewire_gamma")) cfg.rewire_gamma = v->number();
  if (auto v = node.find("edge_check_resolution")) cfg.edge_check_resolution = v->number();
  if (auto v = node.find("seed")) cfg.seed = v->unsigned64();
  if (auto v = node.find("max_batches")) cfg.max_batches = v->int32();
  if (auto v = node.find("threads")) cfg.threads = v->int32();
  try {
    cfg.validate();
  } catch (const ArgumentError & e) {
    node.fail(e.what());
  }
}

inline void apply_sopt_fields(const JsonNode & node, SoptConfig & cfg)
{
  node.allow_only({"n_segments", "desired_speed", "eps_scale", "max_iterations", "Q_weight", "R_weight", "auto_merge",
                   "obstacle_margin", "resample", "threads", "qp_tolerance", "qp_max_iter"});
  if (auto v = node.find("n_segments")) cfg.n_segments = v->int32();
  if (auto v = node.find("desired_speed")) cfg.desired_speed = v->number();
  if (auto v = node.find("eps_scale")) cfg.eps_scale = v->number();
  if (auto v = node.find("max_iterations")) cfg.max_iterations = v->int32();
  if (auto v = node.find("Q_weight")) cfg.Q_weight = v->number();
  if (auto v = node.find("R_weight")) cfg.R_weight = v->number();
  if (auto v = node.find("auto_merge")) cfg.auto_merge = v->boolean();
  if (auto v = node.find("obstacle_margin")) cfg.obstacle_margin = v->number();
  if (auto v = node.find("resample")) cfg.resample = v->boolean();
  if (auto v = node.find("threads")) cfg.threads = v->int32();
  if (auto v = node.find("qp_tolerance")) cfg.qp_tolerance = v->number();
  if (auto v = node.find("qp_max_iter")) cfg.qp_max_iter = v->int32();
  try {
    cfg.validate();
  } catch (const ArgumentError & e) {
    node.fail(e.what());
  }
}

inline World parse_world(const JsonNode & node)
{
  node.allow_only({"bounds", "obstacles"});
  const auto bnode   = node.at("bounds");
  const VectorXd raw = bnode.vector(4);
  const Bounds bounds{Vec2(raw(0), raw(1)), Vec2(raw(2), raw(3))};
  if (!(bounds.hi.x() > bounds.lo.x() && bounds.hi.y() > bounds.lo.y())) bnode.fail("need xmin < xmax and ymin < ymax");

  std::vector<Obstacle> obstacles;
  if (auto list = node.find("obstacles")) {
    for (const auto & o : list->items()) {
      o.allow_only({"id", "shape", "center", "radius", "vertices", "inflation"});
      const int id = o.at("id").int32();
      for (const auto & prev : obstacles) {
        if (prev.id() == id) o.at("id").fail("duplicate obstacle id " + std::to_string(id));
      }
      const auto kind        = o.at("shape");
      const std::string name = kind.string();
      const double inflation = o.has("inflation") ? o.at("inflation").non_negative() : 0.0;
      if (name == "circle") {
        if (o.has("vertices")) o.at("vertices").fail("circles take center and radius");
        obstacles.emplace_back(id, Circle{o.at("center").vec2(), o.at("radius").positive()}, inflation);
      } else if (name == "polygon") {
        if (o.has("center") || o.has("radius")) o.fail("polygons take vertices only");
        const auto vnode = o.at("vertices");
        ConvexPolygon poly;
        for (const auto & v : vnode.items()) poly.vertices.push_back(v.vec2());
        try {
          obstacles.emplace_back(id, poly, inflation);
        } catch (const ArgumentError & e) {
          vnode.fail(e.what());
        }
      } else {
        kind.fail("shape must be \"circle\" or \"polygon\", got \"" + name + "\"");
      }
    }
  }
  return World(bounds, std::move(obstacles));
}

inline RobotModel parse_robot(const JsonNode & node)
{
  node.allow_only({"kind", "dt", "n_joints", "link_lengths", "base", "spheres_per_link", "sphere_radius",
                   "input_bounds"});
  const auto kind        = node.at("kind");
  const std::string name = kind.string();
  const double dt        = node.at("dt").positive();

  const auto read_bounds = [&](Eigen::Index dim, double fallback) {
    VectorXd lo = VectorXd::Constant(dim, -fallback);
    VectorXd hi = VectorXd::Constant(dim, fallback);
    if (auto b = node.find("input_bounds")) {
      const auto rows = b->items();
      if (static_cast<Eigen::Index>(rows.size()) != dim) {
        b->fail("expected " + std::to_string(dim) + " [lower, upper] pairs");
      }
      for (std::size_t i = 0; i < rows.size(); ++i) {
        const Vec2 pair = rows[i].vec2();
        if (!(pair(0) < pair(1))) rows[i].fail("lower bound must be below upper bound");
        lo(static_cast<Eigen::Index>(i)) = pair(0);
        hi(static_cast<Eigen::Index>(i)) = pair(1);
      }
    }
    return std::pair{lo, hi};
  };

  if (name == "point_mass_2d") {
    for (const char * key : {"n_joints", "link_lengths", "base", "spheres_per_link", "sphere_radius"}) {
      if (node.has(key)) node.at(key).fail("not used by point_mass_2d");
    }
    auto [lo, hi] = read_bounds(2, 10.0);
    return RobotModel::point_mass(dt, lo, hi);
  }
  if (name != "planar_arm") kind.fail("kind must be \"point_mass_2d\" or \"planar_arm\", got \"" + name + "\"");

  ArmGeometry geom;
  const auto links = node.at("link_lengths");
  for (const auto & l : links.items()) geom.link_lengths.push_back(l.positive());
  if (geom.link_lengths.empty()) links.fail("need at least one link");
  if (auto n = node.find("n_joints")) {
    if (n->int32() != static_cast<int>(geom.link_lengths.size())) n->fail("n_joints must equal the number of link_lengths");
  }
  if (auto b = node.find("base")) geom.base = b->vec2();
  if (auto s = node.find("spheres_per_link")) {
    geom.spheres_per_link = s->int32();
    if (geom.spheres_per_link < 1) s->fail("spheres_per_link must be at least 1");
  }
  if (auto r = node.find("sphere_radius")) geom.sphere_radius = r->positive();
  auto [lo, hi] = read_bounds(static_cast<Eigen::Index>(geom.link_lengths.size()), 20.0);
  return RobotModel::planar_arm(std::move(geom), dt, lo, hi);
}

}  // namespace detail

/// Builds and validates a Scenario from JSON text; `file` only labels diagnostics.
inline Scenario parse_scenario(const JsonDoc & doc)
{
  const auto root = JsonNode::root(doc);
  root.allow_only({"world", "robot", "start", "goal", "planner", "name"});

  Scenario s{detail::parse_world(root.at("world")), detail::parse_robot(root.at("robot")), {}, {}, {}, {}};
  const Eigen::Index dim = s.model.config_dim();
  const auto start_node  = root.at("start");
  const auto goal_node   = root.at("goal");
  s.start                = start_node.vector(dim);
  s.goal                 = goal_node.vector(dim);

  if (auto planner = root.find("planner")) {
    planner->allow_only({"rrt", "sopt"});
    if (auto r = planner->find("rrt")) detail::apply_rrt_fields(*r, s.rrt);
    if (auto o = planner->find("sopt")) detail::apply_sopt_fields(*o, s.sopt);
  }

  if (s.model.is_arm()) {
    const Vec2 & base = s.model.arm().base;
    const double need = s.model.body_margin();
    const auto obstacles = root.at("world").find("obstacles");
    for (std::size_t i = 0; i < s.world.obstacles().size(); ++i) {
      if (s.world.obstacles()[i].signed_distance(base) < need) {
        obstacles->items()[i].fail("obstacle overlaps the arm base (needs clearance " + std::to_string(need) + ")");
      }
    }
  } else {
    const auto & b = s.world.bounds();
    for (const auto & [node, q] : {std::pair{start_node, s.start}, std::pair{goal_node, s.goal}}) {
      if ((q.array() < b.lo.array()).any() || (q.array() > b.hi.array()).any()) node.fail("lies outside world bounds");
    }
  }

  const World cworld = collision_world(s.world, s.model);
  if (!detail::configuration_free(cworld, s.model, s.start)) start_node.fail("start configuration is in collision");
  if (!detail::configuration_free(cworld, s.model, s.goal)) goal_node.fail("goal configuration is in collision");
  if ((s.start - s.goal).norm() <= 1e-12) goal_node.fail("goal coincides with start");
  return s;
}

inline Scenario parse_scenario(std::string_view text, const std::string & file = "")
{
  return parse_scenario(JsonDoc::parse(text, file));
}

inline Scenario load_scenario(const std::string & path) { return parse_scenario(JsonDoc::load(path)); }

namespace detail {

inline Json to_json(const VectorXd & v) { return Json(std::vector<double>(v.data(), v.data() + v.size())); }

}  // namespace detail

/// Inverse of parse_scenario, up to planner defaults (every field is written).
inline Json scenario_to_json(const Scenario & s)
{
  Json world;
  const auto & b  = s.world.bounds();
  world["bounds"] = {b.lo.x(), b.lo.y(), b.hi.x(), b.hi.y()};
  world["obstacles"] = Json::array();
  for (const auto & o : s.world.obstacles()) {
    Json j{{"id", o.id()}, {"inflation", o.inflation()}};
    if (const auto * c = std::get_if<Circle>(&o.shape())) {
      j["shape"]  = "circle";
      j["center"] = {c->center.x(), c->center.y()};
      j["radius"] = c->radius;
    } else {
      j["shape"] = "polygon";
      j["vertices"] = Json::array();
      for (const auto & v : std::get<ConvexPolygon>(o.shape()).vertices) j["vertices"].push_back({v.x(), v.y()});
    }
    world["obstacles"].push_back(std::move(j));
  }

  Json robot{{"dt", s.model.dt()}};
  Json bounds = Json::array();
  for (Eigen::Index i = 0; i < s.model.input_dim(); ++i) bounds.push_back({s.model.input_lo()(i), s.model.input_hi()(i)});
  robot["input_bounds"] = std::move(bounds);
  if (s.model.is_arm()) {
    const auto & a           = s.model.arm();
    robot["kind"]             = "planar_arm";
    robot["n_joints"]         = a.link_lengths.size();
    robot["link_lengths"]     = a.link_lengths;
    robot["base"]             = {a.base.x(), a.base.y()};
    robot["spheres_per_link"] = a.spheres_per_link;
    robot["sphere_radius"]    = a.sphere_radius;
  } else {
    robot["kind"] = "point_mass_2d";
  }

  const auto & r = s.rrt;
  const auto & o = s.sopt;
  Json planner{
      {"rrt",
       {{"n_samples", r.n_samples},
        {"n_trees", r.n_trees},
        {"steer_step", r.steer_step},
        {"goal_bias", r.goal_bias},
        {"rewire_gamma", r.rewire_gamma},
        {"edge_check_resolution", r.edge_check_resolution},
        {"seed", r.seed},
        {"max_batches", r.max_batches},
        {"threads", r.threads}}},
      {"sopt",
       {{"n_segments", o.n_segments},
        {"desired_speed", o.desired_speed},
        {"eps_scale", o.eps_scale},
        {"max_iterations", o.max_iterations},
        {"Q_weight", o.Q_weight},
        {"R_weight", o.R_weight},
        {"auto_merge", o.auto_merge},
        {"obstacle_margin", o.obstacle_margin},
        {"resample", o.resample},
        {"threads", o.threads},
        {"qp_tolerance", o.qp_tolerance},
        {"qp_max_iter", o.qp_max_iter}}}};

  return Json{{"world", std::move(world)},
              {"robot", std::move(robot)},
              {"start", detail::to_json(s.start)},
              {"goal", detail::to_json(s.goal)},
              {"planner", std::move(planner)}};
}

}  // namespace rrtsopt
