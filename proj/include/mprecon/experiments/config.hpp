#pragma once

// Scenario configuration: a YAML key-value tree (JSON accepted, parsed by
// the same reader) mapped onto typed structs. Validation errors carry the
// file, line and column of the offending node.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>
#include <yaml-cpp/yaml.h>

#include "../error.hpp"

namespace mprecon::experiments {

using json = nlohmann::json;

class ConfigError : public InvalidArgument {
 public:
  ConfigError(const std::string& msg, std::size_t line, std::size_t column)
      : InvalidArgument(msg), line_(line), column_(column) {}
  std::size_t line() const noexcept { return line_; }
  std::size_t column() const noexcept { return column_; }

 private:
  std::size_t line_, column_;
};

// ---------------------------------------------------------------------------
// Typed configuration

struct GridConfig {
  std::vector<double> lo, hi;
  std::vector<std::size_t> cells;
  bool operator==(const GridConfig&) const = default;
};

// Synthetic data generators.
//   line:   x ~ N(0, 1), y = slope x + N(0, noise^2)
//   binary: y = +-1 with equal mass, x | y ~ N(separation y, 1)
//   normal: x ~ N(0, 1), no labels
//   uniform: x ~ U[0, 1], no labels
struct TargetConfig {
  std::string family = "line";
  double slope = 2.0;
  double noise = 0.5;
  double separation = 1.0;
  GridConfig grid;
  bool discretize = false;  // use the grid cell centers as atoms
  bool operator==(const TargetConfig&) const = default;
};

struct PreconditionerConfig {
  std::string kind = "kde";  // empirical | histogram | kde | target (pi_n = pi)
  std::string kernel = "gaussian";
  std::string bandwidthRule = "power-law";  // power-law | fixed
  double c = 1.06;
  double alpha = 0.2;
  double h = 0.0;
  bool smoothLabel = true;
  bool operator==(const PreconditionerConfig&) const = default;
};

struct LossConfig {
  std::string kind = "squared";
  std::optional<double> clip, boundM, lipC;
  bool operator==(const LossConfig&) const = default;
};

struct ClassConfig {
  std::string family = "affine";
  std::vector<double> paramLo, paramHi, featureLo, featureHi;
  bool operator==(const ClassConfig&) const = default;
};

struct ToleranceConfig {
  double margin = 1e-2;
  double modeDecrease = 10.0;
  double gapDecrease = 5.0;
  bool operator==(const ToleranceConfig&) const = default;
};

struct AdaptationConfig {
  std::size_t n = 200;
  double separation = 2.0;
  double shift = 2.0;
  std::string sourceCsv, targetCsv;  // override the synthetic domains when set
  std::vector<std::pair<double, double>> classMap;
  std::string guess = "average-maps";
  std::string weighting = "distance";
  std::string h = "square";
  std::vector<double> preMapA, preMapB;
  double minAccuracy = 0.9;
  double maxGap = 0.1;
  bool operator==(const AdaptationConfig&) const = default;
};

struct AffineConfig {
  std::size_t trials = 20;
  std::size_t nMin = 8;
  std::size_t nMax = 64;
  std::size_t maxDim = 2;
  double maxCondition = 10.0;
  double gapTolerance = 1e-6;
  bool operator==(const AffineConfig&) const = default;
};

struct BlurConfig {
  std::vector<double> sigmas{1.0, 0.5, 0.1, 0.01, 0.0};
  std::size_t n = 400;
  std::string data = "separable";  // separable | line
  GridConfig grid;
  double slack = 0.1;
  double accuracyTolerance = 0.02;
  bool operator==(const BlurConfig&) const = default;
};

struct MetricsConfig {
  std::string test = "empirical-tv";  // empirical-tv | kde-tv | ks-limit
  std::vector<std::size_t> sizes;
  std::size_t replicates = 500;
  std::size_t n = 2000;
  double threshold = 0.05;
  bool operator==(const MetricsConfig&) const = default;
};

struct ScenarioConfig {
  std::string name;
  std::string kind;  // recovery | regression-bound | metrics | affine-recovery | adaptation | blur-sweep
  std::uint64_t seed = 0;
  std::optional<TargetConfig> target;
  std::optional<PreconditionerConfig> preconditioner;
  std::vector<std::size_t> nGrid;
  std::optional<LossConfig> loss;
  std::optional<ClassConfig> cls;
  std::string preset;
  ToleranceConfig tolerances;
  std::optional<AdaptationConfig> adaptation;
  std::optional<AffineConfig> affine;
  std::optional<BlurConfig> blur;
  std::optional<MetricsConfig> metrics;
  std::string output = "results";
  std::string baseDir;  // directory of the config file, for relative paths; not serialized

  bool operator==(const ScenarioConfig& o) const {
    return name == o.name && kind == o.kind && seed == o.seed && target == o.target && preconditioner == o.preconditioner &&
           nGrid == o.nGrid && loss == o.loss && cls == o.cls && preset == o.preset && tolerances == o.tolerances &&
           adaptation == o.adaptation && affine == o.affine && blur == o.blur && metrics == o.metrics &&
           output == o.output;
  }
};

inline const std::set<std::string>& scenario_kinds() {
  static const std::set<std::string> k{"recovery", "regression-bound", "metrics", "affine-recovery", "adaptation",
                                       "blur-sweep"};
  return k;
}

// ---------------------------------------------------------------------------
// YAML -> JSON with source positions

struct SourcePos {
  std::size_t line = 0, column = 0;  // 1-based; 0 when unknown
};

struct ParsedDocument {
  json root;
  std::map<std::string, SourcePos> positions;  // JSON pointer -> node position
  std::string file;
};

namespace detail {

inline json scalar_to_json(const YAML::Node& n) {
  const std::string& s = n.Scalar();
  if (n.Tag() == "!") return s;  // quoted
  if (s == "null" || s == "~" || s.empty()) return nullptr;
  if (s == "true" || s == "True") return true;
  if (s == "false" || s == "False") return false;
  try {
    std::size_t used = 0;
    if (s.find_first_of(".eEnN") == std::string::npos) {
      if (s[0] == '-') {
        const long long v = std::stoll(s, &used);
        if (used == s.size()) return v;
      } else {
        const unsigned long long v = std::stoull(s, &used);
        if (used == s.size()) return v;
      }
    }
    const double d = std::stod(s, &used);
    if (used == s.size()) return d;
  } catch (const std::exception&) {
  }
  return s;
}

inline std::string escape_pointer(const std::string& key) {
  std::string out;
  for (char c : key) {
    if (c == '~') out += "~0";
    else if (c == '/') out += "~1";
    else out += c;
  }
  return out;
}

inline json yaml_to_json(const YAML::Node& n, const std::string& ptr, std::map<std::string, SourcePos>& pos) {
  const auto m = n.Mark();
  if (m.line >= 0) pos[ptr] = {static_cast<std::size_t>(m.line) + 1, static_cast<std::size_t>(m.column) + 1};
  switch (n.Type()) {
    case YAML::NodeType::Null:
    case YAML::NodeType::Undefined: return nullptr;
    case YAML::NodeType::Scalar: return scalar_to_json(n);
    case YAML::NodeType::Sequence: {
      json a = json::array();
      std::size_t i = 0;
      for (const auto& c : n) {
        a.push_back(yaml_to_json(c, ptr + "/" + std::to_string(i), pos));
        ++i;
      }
      return a;
    }
    case YAML::NodeType::Map: {
      json o = json::object();
      for (const auto& kv : n) {
        const std::string key = kv.first.as<std::string>();
        if (o.contains(key)) {
          const auto km = kv.first.Mark();
          throw ConfigError("duplicate key '" + key + "'", km.line + 1, km.column + 1);
        }
        o[key] = yaml_to_json(kv.second, ptr + "/" + escape_pointer(key), pos);
      }
      return o;
    }
  }
  return nullptr;
}

}  // namespace detail

inline ParsedDocument parse_document(const std::string& text, const std::string& file = "<config>") {
  ParsedDocument d;
  d.file = file;
  try {
    const YAML::Node root = YAML::Load(text);
    d.root = detail::yaml_to_json(root, "", d.positions);
  } catch (const ConfigError& e) {
    throw ConfigError(file + ":" + std::to_string(e.line()) + ":" + std::to_string(e.column()) + ": " + e.what(), e.line(),
                      e.column());
  } catch (const YAML::Exception& e) {
    throw ConfigError(file + ":" + std::to_string(e.mark.line + 1) + ":" + std::to_string(e.mark.column + 1) + ": " +
                          e.msg,
                      static_cast<std::size_t>(e.mark.line + 1), static_cast<std::size_t>(e.mark.column + 1));
  }
  if (!d.root.is_object()) throw ConfigError(file + ":1:1: the configuration must be a key-value map", 1, 1);
  return d;
}

// ---------------------------------------------------------------------------
// Typed reading with positioned errors

class ConfigReader {
 public:
  explicit ConfigReader(const ParsedDocument& d) : doc_(d) {}

  [[noreturn]] void fail(const std::string& ptr, const std::string& msg) const {
    // Fall back to the nearest enclosing node with a known position.
    std::string p = ptr;
    SourcePos pos;
    for (;;) {
      auto it = doc_.positions.find(p);
      if (it != doc_.positions.end()) {
        pos = it->second;
        break;
      }
      if (p.empty()) break;
      p = p.substr(0, p.rfind('/'));
    }
    const std::string where = pos.line ? doc_.file + ":" + std::to_string(pos.line) + ":" + std::to_string(pos.column)
                                       : doc_.file;
    const std::string key = ptr.empty() ? "" : " (" + ptr.substr(1) + ")";
    throw ConfigError(where + ": " + msg + key, pos.line, pos.column);
  }

  const json& node(const std::string& ptr) const { return doc_.root.at(json::json_pointer(ptr)); }
  bool has(const std::string& ptr) const {
    return doc_.root.contains(json::json_pointer(ptr)) && !node(ptr).is_null();
  }

  void only_keys(const std::string& ptr, const std::set<std::string>& allowed) const {
    const json& o = ptr.empty() ? doc_.root : node(ptr);
    if (!o.is_object()) fail(ptr, "expected a key-value map");
    for (auto it = o.begin(); it != o.end(); ++it)
      if (!allowed.count(it.key())) fail(ptr + "/" + detail::escape_pointer(it.key()), "unknown key '" + it.key() + "'");
  }

  double number(const std::string& ptr) const {
    const json& v = node(ptr);
    if (!v.is_number()) fail(ptr, "expected a number");
    return v.get<double>();
  }
  std::uint64_t unsigned_integer(const std::string& ptr) const {
    const json& v = node(ptr);
    if (!v.is_number_unsigned()) fail(ptr, "expected a nonnegative integer");
    return v.get<std::uint64_t>();
  }
  std::string string(const std::string& ptr) const {
    const json& v = node(ptr);
    if (!v.is_string()) fail(ptr, "expected a string");
    return v.get<std::string>();
  }
  bool boolean(const std::string& ptr) const {
    const json& v = node(ptr);
    if (!v.is_boolean()) fail(ptr, "expected true or false");
    return v.get<bool>();
  }
  std::vector<double> numbers(const std::string& ptr) const {
    const json& v = node(ptr);
    if (!v.is_array()) fail(ptr, "expected a list of numbers");
    std::vector<double> out;
    for (std::size_t i = 0; i < v.size(); ++i) out.push_back(number(ptr + "/" + std::to_string(i)));
    return out;
  }
  std::vector<std::size_t> counts(const std::string& ptr) const {
    const json& v = node(ptr);
    if (!v.is_array()) fail(ptr, "expected a list of integers");
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < v.size(); ++i)
      out.push_back(static_cast<std::size_t>(unsigned_integer(ptr + "/" + std::to_string(i))));
    return out;
  }

  template <class T, class F>
  void opt(const std::string& ptr, T& field, F read) const {
    if (has(ptr)) field = (this->*read)(ptr);
  }

 private:
  const ParsedDocument& doc_;
};

namespace detail {

inline GridConfig read_grid(const ConfigReader& r, const std::string& p) {
  r.only_keys(p, {"lo", "hi", "cells"});
  GridConfig g;
  for (const char* k : {"lo", "hi", "cells"})
    if (!r.has(p + "/" + k)) r.fail(p, std::string("grid needs '") + k + "'");
  g.lo = r.numbers(p + "/lo");
  g.hi = r.numbers(p + "/hi");
  g.cells = r.counts(p + "/cells");
  if (g.lo.empty() || g.lo.size() != g.hi.size() || g.lo.size() != g.cells.size())
    r.fail(p, "grid lo, hi and cells must have the same nonzero length");
  for (std::size_t a = 0; a < g.lo.size(); ++a) {
    if (!(g.lo[a] < g.hi[a])) r.fail(p + "/hi/" + std::to_string(a), "grid needs lo < hi on every axis");
    if (g.cells[a] == 0) r.fail(p + "/cells/" + std::to_string(a), "grid needs at least one cell per axis");
  }
  return g;
}

inline void require_choice(const ConfigReader& r, const std::string& p, const std::string& v,
                           const std::set<std::string>& allowed) {
  if (!allowed.count(v)) {
    std::string list;
    for (const auto& a : allowed) list += (list.empty() ? "" : ", ") + a;
    r.fail(p, "'" + v + "' is not one of {" + list + "}");
  }
}

inline bool strictly_increasing(const std::vector<std::size_t>& v) {
  for (std::size_t k = 1; k < v.size(); ++k)
    if (v[k] <= v[k - 1]) return false;
  return true;
}

}  // namespace detail

// Reads and validates a parsed document.
inline ScenarioConfig config_from_document(const ParsedDocument& doc, const std::string& baseDir = ".") {
  const ConfigReader r(doc);
  using detail::require_choice;
  r.only_keys("", {"name", "kind", "seed", "target", "preconditioner", "nGrid", "loss", "class", "preset", "tolerances",
                   "adaptation", "affine", "blur", "metrics", "output"});
  ScenarioConfig c;
  c.baseDir = baseDir;
  if (!r.has("/name")) r.fail("", "missing 'name'");
  if (!r.has("/kind")) r.fail("", "missing 'kind'");
  c.name = r.string("/name");
  if (c.name.empty() || c.name.find_first_of("/\\") != std::string::npos)
    r.fail("/name", "name must be nonempty and free of path separators");
  c.kind = r.string("/kind");
  require_choice(r, "/kind", c.kind, scenario_kinds());
  r.opt("/seed", c.seed, &ConfigReader::unsigned_integer);
  r.opt("/output", c.output, &ConfigReader::string);
  r.opt("/preset", c.preset, &ConfigReader::string);
  if (!c.preset.empty())
    require_choice(r, "/preset", c.preset, {"setwise-bounded", "weak-UI", "d1-lipschitz", "tv-bounded"});
  if (r.has("/nGrid")) {
    c.nGrid = r.counts("/nGrid");
    if (c.nGrid.size() < 4) r.fail("/nGrid", "nGrid needs at least 4 entries");
    if (!detail::strictly_increasing(c.nGrid)) r.fail("/nGrid", "nGrid must be strictly increasing");
    if (c.nGrid.front() == 0) r.fail("/nGrid/0", "sample sizes must be positive");
  }

  if (r.has("/target")) {
    const std::string p = "/target";
    r.only_keys(p, {"family", "slope", "noise", "separation", "grid", "discretize"});
    TargetConfig t;
    r.opt(p + "/family", t.family, &ConfigReader::string);
    require_choice(r, p + "/family", t.family, {"line", "binary", "normal", "uniform"});
    r.opt(p + "/slope", t.slope, &ConfigReader::number);
    r.opt(p + "/noise", t.noise, &ConfigReader::number);
    r.opt(p + "/separation", t.separation, &ConfigReader::number);
    r.opt(p + "/discretize", t.discretize, &ConfigReader::boolean);
    if (!(t.noise > 0.0)) r.fail(p + "/noise", "noise must be positive");
    if (!r.has(p + "/grid")) r.fail(p, "target needs a grid");
    t.grid = detail::read_grid(r, p + "/grid");
    const std::size_t want = (t.family == "normal" || t.family == "uniform") ? 1 : 2;
    if (t.grid.lo.size() != want) r.fail(p + "/grid", "grid dimension must be " + std::to_string(want) + " for this family");
    c.target = t;
  }

  if (r.has("/preconditioner")) {
    const std::string p = "/preconditioner";
    r.only_keys(p, {"kind", "kernel", "bandwidth", "smoothLabel"});
    PreconditionerConfig pc;
    r.opt(p + "/kind", pc.kind, &ConfigReader::string);
    require_choice(r, p + "/kind", pc.kind, {"empirical", "histogram", "kde", "target"});
    r.opt(p + "/kernel", pc.kernel, &ConfigReader::string);
    require_choice(r, p + "/kernel", pc.kernel, {"gaussian", "epanechnikov", "uniform"});
    r.opt(p + "/smoothLabel", pc.smoothLabel, &ConfigReader::boolean);
    if (r.has(p + "/bandwidth")) {
      const std::string b = p + "/bandwidth";
      r.only_keys(b, {"rule", "c", "alpha", "h"});
      r.opt(b + "/rule", pc.bandwidthRule, &ConfigReader::string);
      require_choice(r, b + "/rule", pc.bandwidthRule, {"power-law", "fixed"});
      r.opt(b + "/c", pc.c, &ConfigReader::number);
      r.opt(b + "/alpha", pc.alpha, &ConfigReader::number);
      r.opt(b + "/h", pc.h, &ConfigReader::number);
      if (pc.bandwidthRule == "power-law") {
        if (!(pc.c > 0.0)) r.fail(b + "/c", "bandwidth c must be positive");
        if (!(pc.alpha > 0.0 && pc.alpha < 1.0)) r.fail(b + "/alpha", "bandwidth alpha must lie in (0, 1)");
      } else if (!(pc.h > 0.0)) {
        r.fail(b + "/h", "fixed bandwidth h must be positive");
      }
    }
    c.preconditioner = pc;
  }

  if (r.has("/loss")) {
    const std::string p = "/loss";
    r.only_keys(p, {"kind", "clip", "boundM", "lipC"});
    LossConfig l;
    r.opt(p + "/kind", l.kind, &ConfigReader::string);
    require_choice(r, p + "/kind", l.kind, {"squared", "absolute", "logistic"});
    if (r.has(p + "/clip")) l.clip = r.number(p + "/clip");
    if (r.has(p + "/boundM")) l.boundM = r.number(p + "/boundM");
    if (r.has(p + "/lipC")) l.lipC = r.number(p + "/lipC");
    for (const auto& [k, v] : {std::pair{"clip", l.clip}, std::pair{"boundM", l.boundM}, std::pair{"lipC", l.lipC}})
      if (v && !(*v > 0.0)) r.fail(p + "/" + k, std::string(k) + " must be positive");
    if (l.clip && l.boundM && *l.boundM < *l.clip) r.fail(p + "/boundM", "boundM is below the clip level");
    c.loss = l;
  }

  if (r.has("/class")) {
    const std::string p = "/class";
    r.only_keys(p, {"family", "paramLo", "paramHi", "featureLo", "featureHi"});
    ClassConfig k;
    r.opt(p + "/family", k.family, &ConfigReader::string);
    require_choice(r, p + "/family", k.family, {"affine"});
    for (const char* key : {"paramLo", "paramHi", "featureLo", "featureHi"})
      if (!r.has(p + "/" + key)) r.fail(p, std::string("class needs '") + key + "'");
    k.paramLo = r.numbers(p + "/paramLo");
    k.paramHi = r.numbers(p + "/paramHi");
    k.featureLo = r.numbers(p + "/featureLo");
    k.featureHi = r.numbers(p + "/featureHi");
    if (k.featureLo.empty() || k.featureLo.size() != k.featureHi.size())
      r.fail(p + "/featureHi", "feature box bounds must have the same nonzero length");
    if (k.paramLo.size() != k.featureLo.size() + 1 || k.paramHi.size() != k.paramLo.size())
      r.fail(p + "/paramLo", "affine paramBox needs featureDim + 1 coordinates");
    for (std::size_t a = 0; a < k.paramLo.size(); ++a)
      if (!(k.paramLo[a] <= k.paramHi[a])) r.fail(p + "/paramHi/" + std::to_string(a), "paramLo must not exceed paramHi");
    for (std::size_t a = 0; a < k.featureLo.size(); ++a)
      if (!(k.featureLo[a] < k.featureHi[a]))
        r.fail(p + "/featureHi/" + std::to_string(a), "featureLo must be below featureHi");
    c.cls = k;
  }

  if (r.has("/tolerances")) {
    const std::string p = "/tolerances";
    r.only_keys(p, {"margin", "modeDecrease", "gapDecrease"});
    r.opt(p + "/margin", c.tolerances.margin, &ConfigReader::number);
    r.opt(p + "/modeDecrease", c.tolerances.modeDecrease, &ConfigReader::number);
    r.opt(p + "/gapDecrease", c.tolerances.gapDecrease, &ConfigReader::number);
    if (!(c.tolerances.margin >= 0.0)) r.fail(p + "/margin", "margin tolerance must be nonnegative");
    if (!(c.tolerances.modeDecrease >= 1.0)) r.fail(p + "/modeDecrease", "decrease factors must be >= 1");
    if (!(c.tolerances.gapDecrease >= 1.0)) r.fail(p + "/gapDecrease", "decrease factors must be >= 1");
  }

  if (r.has("/adaptation")) {
    const std::string p = "/adaptation";
    r.only_keys(p, {"n", "separation", "shift", "sourceCsv", "targetCsv", "classMap", "guess", "weighting", "h",
                    "preMap", "minAccuracy", "maxGap"});
    AdaptationConfig a;
    if (r.has(p + "/n")) a.n = static_cast<std::size_t>(r.unsigned_integer(p + "/n"));
    r.opt(p + "/separation", a.separation, &ConfigReader::number);
    r.opt(p + "/shift", a.shift, &ConfigReader::number);
    r.opt(p + "/sourceCsv", a.sourceCsv, &ConfigReader::string);
    r.opt(p + "/targetCsv", a.targetCsv, &ConfigReader::string);
    r.opt(p + "/guess", a.guess, &ConfigReader::string);
    require_choice(r, p + "/guess", a.guess, {"average-maps", "average-inverses", "projection-weighted"});
    r.opt(p + "/weighting", a.weighting, &ConfigReader::string);
    require_choice(r, p + "/weighting", a.weighting, {"distance", "inverse-distance", "projection-sum-norm"});
    r.opt(p + "/h", a.h, &ConfigReader::string);
    require_choice(r, p + "/h", a.h, {"square", "abs-smoothed"});
    r.opt(p + "/minAccuracy", a.minAccuracy, &ConfigReader::number);
    r.opt(p + "/maxGap", a.maxGap, &ConfigReader::number);
    if (a.n < 2) r.fail(p + "/n", "need at least two points per domain");
    if (a.sourceCsv.empty() != a.targetCsv.empty()) r.fail(p, "sourceCsv and targetCsv must be given together");
    for (const std::string key : {"sourceCsv", "targetCsv"}) {
      const std::string& f = key == "sourceCsv" ? a.sourceCsv : a.targetCsv;
      if (!f.empty()) {
        const std::filesystem::path path = std::filesystem::path(baseDir) / f;
        if (!std::filesystem::exists(path)) r.fail(p + "/" + key, "file '" + path.string() + "' does not exist");
      }
    }
    if (r.has(p + "/classMap")) {
      const json& m = r.node(p + "/classMap");
      if (!m.is_array()) r.fail(p + "/classMap", "classMap must be a list of [source, target] label pairs");
      for (std::size_t i = 0; i < m.size(); ++i) {
        const auto v = r.numbers(p + "/classMap/" + std::to_string(i));
        if (v.size() != 2) r.fail(p + "/classMap/" + std::to_string(i), "expected a [source, target] pair");
        a.classMap.emplace_back(v[0], v[1]);
      }
    }
    if (r.has(p + "/preMap")) {
      const std::string q = p + "/preMap";
      r.only_keys(q, {"A", "b"});
      if (!r.has(q + "/A") || !r.has(q + "/b")) r.fail(q, "preMap needs 'A' and 'b'");
      a.preMapA = r.numbers(q + "/A");
      a.preMapB = r.numbers(q + "/b");
      if (a.preMapA.size() != a.preMapB.size() * a.preMapB.size() || a.preMapB.empty())
        r.fail(q + "/A", "A must hold dim x dim entries for b of length dim");
    }
    c.adaptation = a;
  }

  if (r.has("/affine")) {
    const std::string p = "/affine";
    r.only_keys(p, {"trials", "nMin", "nMax", "maxDim", "maxCondition", "gapTolerance"});
    AffineConfig a;
    if (r.has(p + "/trials")) a.trials = static_cast<std::size_t>(r.unsigned_integer(p + "/trials"));
    if (r.has(p + "/nMin")) a.nMin = static_cast<std::size_t>(r.unsigned_integer(p + "/nMin"));
    if (r.has(p + "/nMax")) a.nMax = static_cast<std::size_t>(r.unsigned_integer(p + "/nMax"));
    if (r.has(p + "/maxDim")) a.maxDim = static_cast<std::size_t>(r.unsigned_integer(p + "/maxDim"));
    r.opt(p + "/maxCondition", a.maxCondition, &ConfigReader::number);
    r.opt(p + "/gapTolerance", a.gapTolerance, &ConfigReader::number);
    if (a.trials == 0) r.fail(p + "/trials", "need at least one trial");
    if (a.nMin < 2 || a.nMin > a.nMax) r.fail(p + "/nMin", "need 2 <= nMin <= nMax");
    if (a.nMax > 512) r.fail(p + "/nMax", "nMax exceeds the exact solver limit of 512");
    if (a.maxDim < 1 || a.maxDim > 2) r.fail(p + "/maxDim", "maxDim must be 1 or 2");
    if (!(a.maxCondition >= 1.0)) r.fail(p + "/maxCondition", "condition bound must be >= 1");
    c.affine = a;
  }

  if (r.has("/blur")) {
    const std::string p = "/blur";
    r.only_keys(p, {"sigmas", "n", "data", "grid", "slack", "accuracyTolerance"});
    BlurConfig b;
    if (r.has(p + "/sigmas")) b.sigmas = r.numbers(p + "/sigmas");
    if (r.has(p + "/n")) b.n = static_cast<std::size_t>(r.unsigned_integer(p + "/n"));
    r.opt(p + "/data", b.data, &ConfigReader::string);
    require_choice(r, p + "/data", b.data, {"separable", "line"});
    r.opt(p + "/slack", b.slack, &ConfigReader::number);
    r.opt(p + "/accuracyTolerance", b.accuracyTolerance, &ConfigReader::number);
    if (b.sigmas.empty() || b.sigmas.back() != 0.0) r.fail(p + "/sigmas", "sigmas must end with 0");
    for (std::size_t k = 1; k < b.sigmas.size(); ++k)
      if (!(b.sigmas[k] < b.sigmas[k - 1])) r.fail(p + "/sigmas/" + std::to_string(k), "sigmas must be strictly decreasing");
    if (!r.has(p + "/grid")) r.fail(p, "blur needs a joint grid");
    b.grid = detail::read_grid(r, p + "/grid");
    const std::size_t want = b.data == "separable" ? 3 : 2;
    if (b.grid.lo.size() != want) r.fail(p + "/grid", "joint grid dimension must be " + std::to_string(want));
    c.blur = b;
  }

  if (r.has("/metrics")) {
    const std::string p = "/metrics";
    r.only_keys(p, {"test", "sizes", "replicates", "n", "threshold"});
    MetricsConfig m;
    r.opt(p + "/test", m.test, &ConfigReader::string);
    require_choice(r, p + "/test", m.test, {"empirical-tv", "kde-tv", "ks-limit"});
    if (r.has(p + "/sizes")) m.sizes = r.counts(p + "/sizes");
    if (r.has(p + "/replicates")) m.replicates = static_cast<std::size_t>(r.unsigned_integer(p + "/replicates"));
    if (r.has(p + "/n")) m.n = static_cast<std::size_t>(r.unsigned_integer(p + "/n"));
    r.opt(p + "/threshold", m.threshold, &ConfigReader::number);
    if (m.test != "ks-limit" && m.sizes.empty()) r.fail(p, "this test needs 'sizes'");
    if (!detail::strictly_increasing(m.sizes)) r.fail(p + "/sizes", "sizes must be strictly increasing");
    c.metrics = m;
  }

  // Sections each kind depends on.
  auto need = [&](bool ok, const std::string& what) {
    if (!ok) r.fail("/kind", "kind '" + c.kind + "' needs " + what);
  };
  if (c.kind == "recovery") {
    need(c.target.has_value() && c.preconditioner.has_value() && c.loss.has_value() && c.cls.has_value(),
         "target, preconditioner, loss and class");
    need(!c.nGrid.empty(), "nGrid");
    need(!c.preset.empty(), "a preset");
    if (c.target->family == "normal" || c.target->family == "uniform") r.fail("/target/family", "recovery needs a joint target");
    if (c.cls->featureLo.size() != 1) r.fail("/class/featureLo", "recovery targets have one feature");
    const bool hasBound = c.loss->boundM || c.loss->clip;
    if (!hasBound) r.fail("/loss", "preset " + c.preset + " requires boundM (or clip) on the loss");
    if (c.preset == "d1-lipschitz" && !c.loss->lipC) r.fail("/loss", "preset d1-lipschitz requires lipC on the loss");
  } else if (c.kind == "regression-bound") {
    need(c.target.has_value() && c.preconditioner.has_value() && !c.nGrid.empty(), "target, preconditioner and nGrid");
    if (c.target->family != "line") r.fail("/target/family", "the regression bound needs the line family");
  } else if (c.kind == "metrics") {
    need(c.metrics.has_value(), "a metrics section");
  } else if (c.kind == "affine-recovery") {
    need(c.affine.has_value(), "an affine section");
  } else if (c.kind == "adaptation") {
    need(c.adaptation.has_value() && c.loss.has_value() && c.cls.has_value(), "adaptation, loss and class");
  } else if (c.kind == "blur-sweep") {
    need(c.blur.has_value() && c.cls.has_value() && c.loss.has_value(), "blur, loss and class");
  }
  return c;
}

inline ScenarioConfig parse_config(const std::string& text, const std::string& file = "<config>",
                                   const std::string& baseDir = ".") {
  return config_from_document(parse_document(text, file), baseDir);
}

inline ScenarioConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in.good()) throw InvalidArgument("cannot open config file '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  const auto parent = std::filesystem::path(path).parent_path();
  return parse_config(ss.str(), path, parent.empty() ? "." : parent.string());
}

// ---------------------------------------------------------------------------
// Serialization

inline json to_json(const GridConfig& g) { return {{"lo", g.lo}, {"hi", g.hi}, {"cells", g.cells}}; }

inline json to_json(const ScenarioConfig& c) {
  json j;
  j["name"] = c.name;
  j["kind"] = c.kind;
  j["seed"] = c.seed;
  j["output"] = c.output;
  if (!c.preset.empty()) j["preset"] = c.preset;
  if (!c.nGrid.empty()) j["nGrid"] = c.nGrid;
  j["tolerances"] = {{"margin", c.tolerances.margin},
                     {"modeDecrease", c.tolerances.modeDecrease},
                     {"gapDecrease", c.tolerances.gapDecrease}};
  if (c.target)
    j["target"] = {{"family", c.target->family}, {"slope", c.target->slope},         {"noise", c.target->noise},
                   {"separation", c.target->separation}, {"grid", to_json(c.target->grid)}, {"discretize", c.target->discretize}};
  if (c.preconditioner) {
    const auto& p = *c.preconditioner;
    j["preconditioner"] = {{"kind", p.kind},
                           {"kernel", p.kernel},
                           {"smoothLabel", p.smoothLabel},
                           {"bandwidth", {{"rule", p.bandwidthRule}, {"c", p.c}, {"alpha", p.alpha}, {"h", p.h}}}};
  }
  if (c.loss) {
    json l = {{"kind", c.loss->kind}};
    if (c.loss->clip) l["clip"] = *c.loss->clip;
    if (c.loss->boundM) l["boundM"] = *c.loss->boundM;
    if (c.loss->lipC) l["lipC"] = *c.loss->lipC;
    j["loss"] = l;
  }
  if (c.cls)
    j["class"] = {{"family", c.cls->family},
                  {"paramLo", c.cls->paramLo},
                  {"paramHi", c.cls->paramHi},
                  {"featureLo", c.cls->featureLo},
                  {"featureHi", c.cls->featureHi}};
  if (c.adaptation) {
    const auto& a = *c.adaptation;
    json m = json::array();
    for (const auto& [s, t] : a.classMap) m.push_back({s, t});
    json o = {{"n", a.n},         {"separation", a.separation}, {"shift", a.shift},      {"classMap", m},
              {"guess", a.guess}, {"weighting", a.weighting},   {"h", a.h},              {"minAccuracy", a.minAccuracy},
              {"maxGap", a.maxGap}};
    if (!a.sourceCsv.empty()) o["sourceCsv"] = a.sourceCsv;
    if (!a.targetCsv.empty()) o["targetCsv"] = a.targetCsv;
    if (!a.preMapB.empty()) o["preMap"] = {{"A", a.preMapA}, {"b", a.preMapB}};
    j["adaptation"] = o;
  }
  if (c.affine)
    j["affine"] = {{"trials", c.affine->trials}, {"nMin", c.affine->nMin},
                   {"nMax", c.affine->nMax},     {"maxDim", c.affine->maxDim},
                   {"maxCondition", c.affine->maxCondition}, {"gapTolerance", c.affine->gapTolerance}};
  if (c.blur)
    j["blur"] = {{"sigmas", c.blur->sigmas}, {"n", c.blur->n},         {"data", c.blur->data},
                 {"grid", to_json(c.blur->grid)}, {"slack", c.blur->slack}, {"accuracyTolerance", c.blur->accuracyTolerance}};
  if (c.metrics)
    j["metrics"] = {{"test", c.metrics->test},
                    {"sizes", c.metrics->sizes},
                    {"replicates", c.metrics->replicates},
                    {"n", c.metrics->n},
                    {"threshold", c.metrics->threshold}};
  return j;
}

// Canonical text: sorted keys, no whitespace.
inline std::string serialize_config(const ScenarioConfig& c) { return to_json(c).dump(); }

}  // namespace mprecon::experiments
