#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "ccvm/geometry.hpp"
#include "ccvm/track.hpp"

namespace ccvm::io {

/// Shortest decimal text that parses back to the same double.
std::string format_double(double v);
double parse_double(const std::string& s);

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  /// Column index or -1.
  long column(const std::string& name) const;
  /// Column index; throws InputError when missing.
  std::size_t require(const std::string& name) const;
};

CsvTable read_csv(const std::string& path);
CsvTable parse_csv(std::istream& in, const std::string& source);
void write_csv(const std::string& path, const CsvTable& table);

/// GeoJSON Polygon / MultiPolygon (bare geometry, Feature or FeatureCollection)
/// in planar km. CRS metadata is ignored.
geometry::PolygonDomain load_domain(const std::string& path);
geometry::PolygonDomain parse_domain(const std::string& geojson_text);

/// Tracks CSV `id,time,x,y[,extra...]`; extra numeric columns become covariate
/// channels (blank or NA entries read as NaN). Rows are grouped by id in order
/// of first appearance; times must be strictly increasing within an id.
Dataset read_tracks(const std::string& path);
Dataset tracks_from_table(const CsvTable& table, const std::string& source);
void write_tracks(const std::string& path, const Dataset& data);

struct CovariateRow {
  std::string id;
  double t = 0.0;
  Vec2 position;
  double d_shore = 0.0;
  double theta = 0.0;
};

/// `id,t,x,y,d_shore,theta`
void write_covariate_rows(const std::string& path, const std::vector<CovariateRow>& rows);
std::vector<CovariateRow> read_covariate_rows(const std::string& path);

}  // namespace ccvm::io
