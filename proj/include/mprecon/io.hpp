#pragma once

// JSON encodings of measures, plans, agents and losses, and CSV samples.
// Requires nlohmann_json.

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "error.hpp"
#include "learning.hpp"
#include "measure.hpp"
#include "transport.hpp"

namespace mprecon::io {

using json = nlohmann::json;

// ---------------------------------------------------------------------------
// Measures

inline json to_json(const GridSpec& g) { return {{"lo", g.lo}, {"hi", g.hi}, {"cells", g.cells}}; }

inline GridSpec grid_from_json(const json& j) {
  GridSpec g{j.at("lo").get<std::vector<double>>(), j.at("hi").get<std::vector<double>>(),
             j.at("cells").get<std::vector<std::size_t>>()};
  g.validate();
  return g;
}

inline json to_json(const DiscreteMeasure& d) {
  json pts = json::array();
  for (std::size_t i = 0; i < d.size(); ++i) pts.push_back(d.point_vec(i));
  return {{"variant", "discrete"}, {"dim", d.dim}, {"points", pts}, {"weights", d.weights}};
}

inline json to_json(const Measure& m) {
  json j;
  if (m.is_discrete()) {
    j = to_json(m.discrete());
  } else {
    const auto& g = m.grid();
    j = {{"variant", "grid"}, {"grid", to_json(g.grid)}, {"values", g.values}};
  }
  j["joint"] = m.joint();
  return j;
}

inline DiscreteMeasure discrete_from_json(const json& j) {
  DiscreteMeasure d;
  d.dim = j.at("dim").get<std::size_t>();
  for (const auto& p : j.at("points")) {
    const auto v = p.get<std::vector<double>>();
    detail::require(v.size() == d.dim, "measure json: point dimension differs from 'dim'");
    d.coords.insert(d.coords.end(), v.begin(), v.end());
  }
  d.weights = j.at("weights").get<std::vector<double>>();
  d.validate();
  return d;
}

inline Measure measure_from_json(const json& j) {
  try {
    const std::string variant = j.at("variant").get<std::string>();
    const bool joint = j.value("joint", false);
    if (variant == "discrete") return Measure(discrete_from_json(j), joint);
    if (variant == "grid") {
      GridDensity g{grid_from_json(j.at("grid")), j.at("values").get<std::vector<double>>()};
      g.validate();
      return Measure(std::move(g), joint);
    }
    throw InvalidArgument("measure json: unknown variant '" + variant + "'");
  } catch (const json::exception& e) {
    throw InvalidArgument(std::string("measure json: ") + e.what());
  }
}

// ---------------------------------------------------------------------------
// Plans

inline json to_json(const TransportPlan& p) {
  json triplets = json::array();
  for (std::size_t i = 0; i < p.rows.size(); ++i)
    for (std::size_t j = 0; j < p.cols.size(); ++j)
      if (p.at(i, j) != 0.0) triplets.push_back(json::array({i, j, p.at(i, j)}));
  return {{"rows", to_json(p.rows)},
          {"cols", to_json(p.cols)},
          {"triplets", triplets},
          {"cost", p.cost},
          {"flags", {{"marginalsRelaxed", p.marginalsRelaxed}}}};
}

inline TransportPlan plan_from_json(const json& j) {
  try {
    TransportPlan p;
    p.rows = discrete_from_json(j.at("rows"));
    p.cols = discrete_from_json(j.at("cols"));
    p.matrix.assign(p.rows.size() * p.cols.size(), 0.0);
    for (const auto& t : j.at("triplets")) {
      const auto i = t.at(0).get<std::size_t>(), k = t.at(1).get<std::size_t>();
      detail::require(i < p.rows.size() && k < p.cols.size(), "plan json: triplet index out of range");
      p.matrix[i * p.cols.size() + k] = t.at(2).get<double>();
    }
    p.cost = j.at("cost").get<double>();
    p.marginalsRelaxed = j.value("flags", json::object()).value("marginalsRelaxed", false);
    p.validate();
    return p;
  } catch (const json::exception& e) {
    throw InvalidArgument(std::string("plan json: ") + e.what());
  }
}

// ---------------------------------------------------------------------------
// Losses, classes, agents

inline json to_json(const LossFunction& L) {
  json params = json::object();
  if (L.clip) params["clip"] = *L.clip;
  if (L.boundM) params["boundM"] = *L.boundM;
  if (L.lipC) params["lipC"] = *L.lipC;
  if (L.scale != 1.0) params["scale"] = L.scale;
  return {{"kind", to_string(L.kind)}, {"params", params}};
}

inline LossFunction loss_from_json(const json& j) {
  try {
    LossFunction L;
    L.kind = loss_kind_from_string(j.at("kind").get<std::string>());
    const json p = j.value("params", json::object());
    if (p.contains("clip")) L.clip = p.at("clip").get<double>();
    if (p.contains("boundM")) L.boundM = p.at("boundM").get<double>();
    if (L.clip && !L.boundM) L.boundM = L.clip;
    if (p.contains("lipC")) L.lipC = p.at("lipC").get<double>();
    if (p.contains("scale")) L.scale = p.at("scale").get<double>();
    L.validate();
    return L;
  } catch (const json::exception& e) {
    throw InvalidArgument(std::string("loss json: ") + e.what());
  }
}

inline json to_json(const HypothesisClass& c) {
  detail::require(c.family == ClassFamily::Affine, "class json: only affine classes are serializable");
  return {{"family", "affine"},
          {"paramLo", c.paramLo},
          {"paramHi", c.paramHi},
          {"featureLo", c.featureLo},
          {"featureHi", c.featureHi}};
}

inline std::shared_ptr<const HypothesisClass> class_from_json(const json& j) {
  try {
    const auto family = j.at("family").get<std::string>();
    detail::require(family == "affine", "class json: unsupported family '" + family + "'");
    return std::make_shared<const HypothesisClass>(HypothesisClass::affine(
        j.at("paramLo").get<std::vector<double>>(), j.at("paramHi").get<std::vector<double>>(),
        j.at("featureLo").get<std::vector<double>>(), j.at("featureHi").get<std::vector<double>>()));
  } catch (const json::exception& e) {
    throw InvalidArgument(std::string("class json: ") + e.what());
  }
}

inline json to_json(const Agent& f) {
  detail::require(f.cls != nullptr, "agent json: missing class");
  return {{"family", f.cls->family == ClassFamily::Affine ? "affine" : "tabulated"}, {"theta", f.theta}};
}

inline Agent agent_from_json(const json& j, std::shared_ptr<const HypothesisClass> cls) {
  try {
    const auto family = j.at("family").get<std::string>();
    const bool affine = cls->family == ClassFamily::Affine;
    detail::require(family == (affine ? "affine" : "tabulated"), "agent json: family does not match the class");
    return Agent(std::move(cls), j.at("theta").get<std::vector<double>>());
  } catch (const json::exception& e) {
    throw InvalidArgument(std::string("agent json: ") + e.what());
  }
}

// ---------------------------------------------------------------------------
// Samples as CSV: one row per point, feature columns then the label column.
// A first line that does not parse as numbers is treated as a header.

inline Sample read_sample_csv(std::istream& in, bool labeled = true, const std::string& what = "sample csv") {
  Sample s;
  if (labeled) s.labels.emplace();
  std::string line;
  std::size_t lineNo = 0, width = 0;
  while (std::getline(in, line)) {
    ++lineNo;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    std::vector<double> row;
    std::stringstream ss(line);
    std::string cell;
    bool numeric = true;
    while (std::getline(ss, cell, ',')) {
      try {
        std::size_t used = 0;
        row.push_back(std::stod(cell, &used));
        if (cell.find_first_not_of(" \t", used) != std::string::npos) numeric = false;
      } catch (const std::exception&) {
        numeric = false;
      }
    }
    if (!numeric) {
      detail::require(s.size() == 0 && width == 0, what + ":" + std::to_string(lineNo) + ": non-numeric field");
      width = static_cast<std::size_t>(std::count(line.begin(), line.end(), ',')) + 1;
      continue;
    }
    if (width == 0) width = row.size();
    detail::require(row.size() == width, what + ":" + std::to_string(lineNo) + ": expected " + std::to_string(width) +
                                             " columns, found " + std::to_string(row.size()));
    detail::require(!labeled || width >= 2, what + ":" + std::to_string(lineNo) + ": need features and a label column");
    if (labeled) {
      s.labels->push_back(row.back());
      row.pop_back();
    }
    s.features.push_back(std::move(row));
  }
  detail::require(s.size() > 0, what + ": no data rows");
  s.validate();
  return s;
}

inline Sample read_sample_csv_file(const std::string& path, bool labeled = true) {
  std::ifstream in(path);
  detail::require(in.good(), "cannot open sample file '" + path + "'");
  return read_sample_csv(in, labeled, path);
}

inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string sample_to_csv(const Sample& s) {
  std::string out;
  for (std::size_t a = 0; a < s.dim(); ++a) out += (a ? ",x" : "x") + std::to_string(a + 1);
  if (s.has_labels()) out += ",y";
  out += '\n';
  for (std::size_t i = 0; i < s.size(); ++i) {
    for (std::size_t a = 0; a < s.dim(); ++a) {
      if (a) out += ',';
      out += format_double(s.features[i][a]);
    }
    if (s.has_labels()) out += "," + format_double((*s.labels)[i]);
    out += '\n';
  }
  return out;
}

}  // namespace mprecon::io
