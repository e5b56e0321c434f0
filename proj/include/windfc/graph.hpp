#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>
#include <string>
#include <unordered_set>
#include <vector>

#include "windfc/csv.hpp"
#include "windfc/hash.hpp"
#include "windfc/tensor.hpp"

namespace windfc {

struct Point {
  double x = 0.0;  // easting
  double y = 0.0;  // northing
};

/// Turbine identities and planar coordinates.
class FarmLayout {
 public:
  FarmLayout() = default;
  FarmLayout(std::vector<std::string> ids, std::vector<Point> coords)
      : ids_(std::move(ids)), coords_(std::move(coords)) {
    if (ids_.empty()) throw DataError("farm layout needs at least one turbine");
    if (ids_.size() != coords_.size())
      throw DataError("farm layout has " + std::to_string(ids_.size()) + " ids but " +
                      std::to_string(coords_.size()) + " coordinates");
    std::unordered_set<std::string> seen;
    for (const auto& id : ids_) {
      if (id.empty()) throw DataError("empty turbine id");
      if (!seen.insert(id).second) throw DataError("duplicate turbine id '" + id + "'");
    }
    for (const auto& p : coords_)
      if (!std::isfinite(p.x) || !std::isfinite(p.y)) throw DataError("non-finite turbine coordinate");
  }

  std::size_t size() const noexcept { return ids_.size(); }
  const std::vector<std::string>& ids() const noexcept { return ids_; }
  const std::vector<Point>& coords() const noexcept { return coords_; }
  const std::string& id(std::size_t i) const { return ids_.at(i); }
  const Point& coord(std::size_t i) const { return coords_.at(i); }

  std::size_t index_of(const std::string& id) const {
    const auto it = std::find(ids_.begin(), ids_.end(), id);
    if (it == ids_.end()) throw DataError("unknown turbine_id '" + id + "'");
    return static_cast<std::size_t>(it - ids_.begin());
  }

  std::string digest() const {
    Fnv1a h;
    h.u64(ids_.size());
    for (std::size_t i = 0; i < ids_.size(); ++i) h.str(ids_[i]).f64(coords_[i].x).f64(coords_[i].y);
    return h.hex();
  }

 private:
  std::vector<std::string> ids_;
  std::vector<Point> coords_;
};

inline double distance(const Point& a, const Point& b) { return std::hypot(a.x - b.x, a.y - b.y); }

/// Local equirectangular projection of (lon, lat) degrees into meters
/// around the layout centroid.
inline FarmLayout project_lonlat(const FarmLayout& lonlat) {
  constexpr double kEarthRadius = 6371008.8;
  constexpr double kDeg = 3.14159265358979323846 / 180.0;
  double lon0 = 0.0, lat0 = 0.0;
  for (const auto& p : lonlat.coords()) {
    lon0 += p.x;
    lat0 += p.y;
  }
  lon0 /= static_cast<double>(lonlat.size());
  lat0 /= static_cast<double>(lonlat.size());
  std::vector<Point> out;
  out.reserve(lonlat.size());
  for (const auto& p : lonlat.coords())
    out.push_back({kEarthRadius * (p.x - lon0) * kDeg * std::cos(lat0 * kDeg), kEarthRadius * (p.y - lat0) * kDeg});
  return FarmLayout(lonlat.ids(), std::move(out));
}

/// k(i): for each turbine, the k nearest turbines ordered by distance. The
/// turbine itself is always entry 0, so k counts the target plus k-1 others.
struct NeighborIndex {
  std::size_t k = 0;
  std::vector<std::vector<std::size_t>> neighbors;
  std::vector<std::vector<double>> distances;

  std::size_t size() const noexcept { return neighbors.size(); }
  const std::vector<std::size_t>& of(std::size_t i) const { return neighbors.at(i); }

  std::string digest(const FarmLayout& layout) const {
    Fnv1a h;
    h.str(layout.digest()).u64(k);
    for (const auto& row : neighbors)
      for (std::size_t j : row) h.u64(j);
    return h.hex();
  }

  bool operator==(const NeighborIndex&) const = default;
};

/// Brute-force all-pairs construction. Ties (including duplicate
/// coordinates) break by ascending turbine index, except that the turbine
/// itself always leads its own list.
inline NeighborIndex build_knn(const FarmLayout& layout, std::size_t k) {
  const std::size_t n = layout.size();
  if (k < 1 || k > n)
    throw ConfigError("k must lie in [1, " + std::to_string(n) + "], got " + std::to_string(k));
  NeighborIndex idx;
  idx.k = k;
  idx.neighbors.resize(n);
  idx.distances.resize(n);
  std::vector<std::size_t> order(n);
  std::vector<double> d(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) d[j] = distance(layout.coord(i), layout.coord(j));
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                      [&](std::size_t a, std::size_t b) {
                        if (a == i || b == i) return a == i && b != i;
                        return d[a] != d[b] ? d[a] < d[b] : a < b;
                      });
    idx.neighbors[i].assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k));
    for (std::size_t j : idx.neighbors[i]) idx.distances[i].push_back(d[j]);
  }
  return idx;
}

inline FarmLayout read_layout(const std::string& path) {
  const auto t = csv::read_file(path);
  const auto ci = csv::column(t, "turbine_id", path), cx = csv::column(t, "x", path),
             cy = csv::column(t, "y", path);
  std::vector<std::string> ids;
  std::vector<Point> pts;
  for (const auto& r : t.rows) {
    ids.push_back(r[ci]);
    pts.push_back({csv::parse_double(r[cx], "x"), csv::parse_double(r[cy], "y")});
  }
  return FarmLayout(std::move(ids), std::move(pts));
}

inline void write_layout(std::ostream& os, const FarmLayout& layout) {
  os << "turbine_id,x,y\n";
  for (std::size_t i = 0; i < layout.size(); ++i)
    os << layout.id(i) << ',' << csv::format_double(layout.coord(i).x) << ','
       << csv::format_double(layout.coord(i).y) << '\n';
}

inline void write_neighbors(std::ostream& os, const FarmLayout& layout, const NeighborIndex& idx) {
  os << "turbine_id,rank,neighbor_id,distance\n";
  for (std::size_t i = 0; i < idx.size(); ++i)
    for (std::size_t r = 0; r < idx.k; ++r)
      os << layout.id(i) << ',' << r << ',' << layout.id(idx.neighbors[i][r]) << ','
         << csv::format_double(idx.distances[i][r]) << '\n';
}

}  // namespace windfc
