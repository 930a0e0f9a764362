#include "ccvm/io.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <json.hpp>
#include <limits>
#include <sstream>

#include "ccvm/errors.hpp"

namespace ccvm::io {
namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream ss(line);
  while (std::getline(ss, field, ',')) out.push_back(trim(field));
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

std::vector<Vec2> parse_ring(const nlohmann::json& coords) {
  if (!coords.is_array()) throw InputError("GeoJSON ring is not an array");
  std::vector<Vec2> ring;
  for (const auto& pt : coords) {
    if (!pt.is_array() || pt.size() < 2 || !pt[0].is_number() || !pt[1].is_number()) {
      throw InputError("GeoJSON position must be [x, y]");
    }
    ring.emplace_back(pt[0].get<double>(), pt[1].get<double>());
  }
  return ring;
}

std::vector<std::vector<Vec2>> parse_polygon(const nlohmann::json& coords) {
  if (!coords.is_array() || coords.empty()) throw InputError("GeoJSON polygon has no rings");
  std::vector<std::vector<Vec2>> rings;
  for (const auto& r : coords) rings.push_back(parse_ring(r));
  return rings;
}

void collect_geometry(const nlohmann::json& geom,
                      std::vector<std::vector<std::vector<Vec2>>>& polygons) {
  if (!geom.is_object() || !geom.contains("type")) throw InputError("GeoJSON object without type");
  const std::string type = geom.at("type").get<std::string>();
  if (type == "FeatureCollection") {
    for (const auto& f : geom.at("features")) collect_geometry(f, polygons);
  } else if (type == "Feature") {
    collect_geometry(geom.at("geometry"), polygons);
  } else if (type == "Polygon") {
    polygons.push_back(parse_polygon(geom.at("coordinates")));
  } else if (type == "MultiPolygon") {
    for (const auto& p : geom.at("coordinates")) polygons.push_back(parse_polygon(p));
  } else {
    throw InputError("unsupported GeoJSON geometry type: " + type);
  }
}

}  // namespace

std::string format_double(double v) {
  if (std::isnan(v)) return "NaN";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

double parse_double(const std::string& s) {
  const std::string t = trim(s);
  if (t.empty() || t == "NA" || t == "NaN" || t == "nan") return std::numeric_limits<double>::quiet_NaN();
  double v = 0.0;
  const char* first = t.data();
  const char* last = t.data() + t.size();
  if (*first == '+') ++first;
  const auto res = std::from_chars(first, last, v);
  if (res.ec != std::errc() || res.ptr != last) throw InputError("not a number: '" + s + "'");
  return v;
}

long CsvTable::column(const std::string& name) const {
  const auto it = std::find(header.begin(), header.end(), name);
  return it == header.end() ? -1 : static_cast<long>(it - header.begin());
}

std::size_t CsvTable::require(const std::string& name) const {
  const long c = column(name);
  if (c < 0) throw InputError("missing CSV column '" + name + "'");
  return static_cast<std::size_t>(c);
}

CsvTable parse_csv(std::istream& in, const std::string& source) {
  CsvTable table;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    auto fields = split_line(line);
    if (table.header.empty()) {
      table.header = std::move(fields);
      continue;
    }
    if (fields.size() != table.header.size()) {
      throw InputError(source + ":" + std::to_string(line_no) + ": expected " +
                       std::to_string(table.header.size()) + " fields, got " +
                       std::to_string(fields.size()));
    }
    table.rows.push_back(std::move(fields));
  }
  if (table.header.empty()) throw InputError(source + ": empty CSV");
  return table;
}

CsvTable read_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open " + path);
  return parse_csv(in, path);
}

void write_csv(const std::string& path, const CsvTable& table) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write " + path);
  auto write_row = [&](const std::vector<std::string>& row) {
    for (std::size_t i = 0; i < row.size(); ++i) {
      if (i) out << ',';
      out << row[i];
    }
    out << '\n';
  };
  write_row(table.header);
  for (const auto& r : table.rows) write_row(r);
}

geometry::PolygonDomain parse_domain(const std::string& geojson_text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(geojson_text);
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("GeoJSON parse error: ") + e.what());
  }
  std::vector<std::vector<std::vector<Vec2>>> polygons;
  try {
    collect_geometry(doc, polygons);
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("malformed GeoJSON: ") + e.what());
  }
  return geometry::PolygonDomain(std::move(polygons));
}

geometry::PolygonDomain load_domain(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_domain(ss.str());
}

Dataset tracks_from_table(const CsvTable& table, const std::string& source) {
  const std::size_t c_id = table.require("id");
  const long c_time_l = table.column("time") >= 0 ? table.column("time") : table.column("t");
  if (c_time_l < 0) throw InputError(source + ": missing CSV column 'time'");
  const auto c_time = static_cast<std::size_t>(c_time_l);
  const std::size_t c_x = table.require("x");
  const std::size_t c_y = table.require("y");

  Dataset data;
  std::map<std::string, std::size_t> index;
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    const auto& row = table.rows[r];
    const std::string& id = row[c_id];
    auto it = index.find(id);
    if (it == index.end()) {
      it = index.emplace(id, data.size()).first;
      Track t;
      t.id = id;
      for (std::size_t c = 0; c < table.header.size(); ++c) {
        if (c == c_id || c == c_time || c == c_x || c == c_y) continue;
        t.covariates[table.header[c]];
      }
      data.push_back(std::move(t));
    }
    Track& t = data[it->second];
    double time = 0.0;
    double x = 0.0;
    double y = 0.0;
    try {
      time = parse_double(row[c_time]);
      x = parse_double(row[c_x]);
      y = parse_double(row[c_y]);
    } catch (const InputError& e) {
      throw InputError(source + " row " + std::to_string(r + 2) + ": " + e.what());
    }
    if (!t.times.empty() && !(time > t.times.back())) {
      throw InputError(source + ": times not strictly increasing for id " + id + " at row " +
                       std::to_string(r + 2));
    }
    t.times.push_back(time);
    t.observations.emplace_back(x, y);
    for (std::size_t c = 0; c < table.header.size(); ++c) {
      if (c == c_id || c == c_time || c == c_x || c == c_y) continue;
      t.covariates[table.header[c]].push_back(parse_double(row[c]));
    }
  }
  for (const auto& t : data) t.validate();
  return data;
}

Dataset read_tracks(const std::string& path) { return tracks_from_table(read_csv(path), path); }

void write_tracks(const std::string& path, const Dataset& data) {
  CsvTable table;
  table.header = {"id", "time", "x", "y"};
  std::vector<std::string> channels;
  for (const auto& t : data) {
    for (const auto& [name, _] : t.covariates) {
      if (std::find(channels.begin(), channels.end(), name) == channels.end()) channels.push_back(name);
    }
  }
  std::sort(channels.begin(), channels.end());
  table.header.insert(table.header.end(), channels.begin(), channels.end());
  for (const auto& t : data) {
    for (std::size_t j = 0; j < t.size(); ++j) {
      std::vector<std::string> row{t.id, format_double(t.times[j]), format_double(t.observations[j].x()),
                                   format_double(t.observations[j].y())};
      for (const auto& ch : channels) {
        const auto it = t.covariates.find(ch);
        row.push_back(it == t.covariates.end() || j >= it->second.size() ? "NA"
                                                                          : format_double(it->second[j]));
      }
      table.rows.push_back(std::move(row));
    }
  }
  write_csv(path, table);
}

void write_covariate_rows(const std::string& path, const std::vector<CovariateRow>& rows) {
  CsvTable table;
  table.header = {"id", "t", "x", "y", "d_shore", "theta"};
  for (const auto& r : rows) {
    table.rows.push_back({r.id, format_double(r.t), format_double(r.position.x()),
                          format_double(r.position.y()), format_double(r.d_shore),
                          format_double(r.theta)});
  }
  write_csv(path, table);
}

std::vector<CovariateRow> read_covariate_rows(const std::string& path) {
  const CsvTable table = read_csv(path);
  const std::size_t c_id = table.require("id");
  const std::size_t c_t = table.require("t");
  const std::size_t c_x = table.require("x");
  const std::size_t c_y = table.require("y");
  const std::size_t c_d = table.require("d_shore");
  const std::size_t c_th = table.require("theta");
  std::vector<CovariateRow> rows;
  for (const auto& r : table.rows) {
    rows.push_back(CovariateRow{r[c_id], parse_double(r[c_t]),
                                Vec2(parse_double(r[c_x]), parse_double(r[c_y])),
                                parse_double(r[c_d]), parse_double(r[c_th])});
  }
  return rows;
}

}  // namespace ccvm::io
