#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include "ebtm/errors.hpp"
#include "ebtm/parallel.hpp"

namespace ebtm::activation {

struct CoordinateRecord {
  std::string doc_id;
  double x = 0.0, y = 0.0, z = 0.0;  // millimetres, MNI space
};

struct LoadReport {
  std::vector<CoordinateRecord> records;
  std::vector<std::string> errors;  // one line per malformed row
};

/// Parses TSV rows `doc_id<TAB>x<TAB>y<TAB>z`. A header line is skipped when
/// its coordinate cells are not numeric. Malformed rows go to the error
/// report; a file whose every data row is malformed is an error.
inline LoadReport load_coordinates(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("load_coordinates: cannot open: " + path);
  LoadReport report;
  std::string line;
  std::size_t line_number = 0;
  std::size_t data_rows = 0;
  while (std::getline(in, line)) {
    ++line_number;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::istringstream row(line);
    std::string id, xs, ys, zs;
    const bool shaped = static_cast<bool>(std::getline(row, id, '\t')) &&
                        static_cast<bool>(std::getline(row, xs, '\t')) &&
                        static_cast<bool>(std::getline(row, ys, '\t')) &&
                        static_cast<bool>(std::getline(row, zs));
    CoordinateRecord record;
    record.doc_id = id;
    bool ok = shaped && !id.empty();
    if (ok) {
      try {
        std::size_t used = 0;
        record.x = std::stod(xs, &used);
        ok = ok && used == xs.size();
        record.y = std::stod(ys, &used);
        ok = ok && used == ys.size();
        record.z = std::stod(zs, &used);
        ok = ok && used == zs.size();
      } catch (const std::exception&) {
        ok = false;
      }
    }
    if (ok) {
      report.records.push_back(std::move(record));
      ++data_rows;
    } else if (line_number == 1) {
      continue;  // tolerated header line
    } else {
      report.errors.push_back("line " + std::to_string(line_number) + ": malformed row: " + line);
      ++data_rows;
    }
  }
  if (data_rows > 0 && report.records.empty()) {
    throw IoError("load_coordinates: no parseable rows in " + path);
  }
  return report;
}

struct GridSpec {
  // Default grid: MNI bounding box (-90..90, -126..90, -72..108) mm at 2 mm.
  double origin_x = -90.0, origin_y = -126.0, origin_z = -72.0;
  double spacing = 2.0;
  int nx = 91, ny = 109, nz = 91;

  void validate() const {
    require(spacing > 0.0, "GridSpec: spacing must be > 0");
    require(nx >= 1 && ny >= 1 && nz >= 1, "GridSpec: dims must be positive");
  }
  std::size_t voxel_count() const {
    return static_cast<std::size_t>(nx) * static_cast<std::size_t>(ny) *
           static_cast<std::size_t>(nz);
  }
  double max_x() const { return origin_x + spacing * (nx - 1); }
  double max_y() const { return origin_y + spacing * (ny - 1); }
  double max_z() const { return origin_z + spacing * (nz - 1); }
};

struct VoxelGrid {
  GridSpec spec;
  std::vector<double> values;  // row-major: index (ix*ny + iy)*nz + iz

  double& at(int ix, int iy, int iz) {
    return values[(static_cast<std::size_t>(ix) * static_cast<std::size_t>(spec.ny) +
                   static_cast<std::size_t>(iy)) *
                      static_cast<std::size_t>(spec.nz) +
                  static_cast<std::size_t>(iz)];
  }
  double at(int ix, int iy, int iz) const {
    return values[(static_cast<std::size_t>(ix) * static_cast<std::size_t>(spec.ny) +
                   static_cast<std::size_t>(iy)) *
                      static_cast<std::size_t>(spec.nz) +
                  static_cast<std::size_t>(iz)];
  }
};

inline double fwhm_to_sigma(double fwhm) { return fwhm / std::sqrt(8.0 * std::log(2.0)); }

enum class OutOfBounds { kSkip, kClamp };

struct MapOptions {
  OutOfBounds out_of_bounds = OutOfBounds::kSkip;
  int threads = 1;
  std::size_t* out_of_bounds_count = nullptr;
};

/// Mean activation map for the given member documents: every coordinate of a
/// member adds an isotropic Gaussian with peak 1 and sigma = fwhm/sqrt(8 ln 2),
/// truncated at 3 sigma; the summed grid is divided by the number of member
/// documents. Coordinates outside the grid box are skipped (or clamped) per
/// options. Parallelism partitions the x axis, so each voxel has one writer.
inline VoxelGrid cluster_activation_map(const std::vector<CoordinateRecord>& records,
                                        const std::unordered_set<std::string>& member_doc_ids,
                                        double kernel_fwhm_mm, const GridSpec& spec = {},
                                        const MapOptions& options = {}) {
  spec.validate();
  require(kernel_fwhm_mm > 0.0, "cluster_activation_map: kernel FWHM must be > 0");
  require(!member_doc_ids.empty(), "cluster_activation_map: empty member set");

  std::vector<const CoordinateRecord*> member_records;
  std::size_t skipped = 0;
  std::vector<CoordinateRecord> clamped_storage;
  clamped_storage.reserve(records.size());
  for (const CoordinateRecord& r : records) {
    if (!member_doc_ids.contains(r.doc_id)) continue;
    const bool inside = r.x >= spec.origin_x && r.x <= spec.max_x() && r.y >= spec.origin_y &&
                        r.y <= spec.max_y() && r.z >= spec.origin_z && r.z <= spec.max_z();
    if (inside) {
      member_records.push_back(&r);
    } else if (options.out_of_bounds == OutOfBounds::kClamp) {
      CoordinateRecord c = r;
      c.x = std::clamp(c.x, spec.origin_x, spec.max_x());
      c.y = std::clamp(c.y, spec.origin_y, spec.max_y());
      c.z = std::clamp(c.z, spec.origin_z, spec.max_z());
      clamped_storage.push_back(c);
      ++skipped;
    } else {
      ++skipped;
    }
  }
  for (const CoordinateRecord& c : clamped_storage) member_records.push_back(&c);
  if (options.out_of_bounds_count) *options.out_of_bounds_count = skipped;
  require(!member_records.empty(),
          "cluster_activation_map: no coordinates for any member document");

  VoxelGrid grid;
  grid.spec = spec;
  grid.values.assign(spec.voxel_count(), 0.0);
  const double sigma = fwhm_to_sigma(kernel_fwhm_mm);
  const double radius = 3.0 * sigma;
  const double radius2 = radius * radius;
  const double inv_two_sigma2 = 1.0 / (2.0 * sigma * sigma);

  // Partition the grid into x-slabs; every slab sums all records that touch
  // it, so the result is independent of the thread count.
  const std::size_t slab = 8;
  parallel_blocks(static_cast<std::size_t>(spec.nx), slab, options.threads,
                  [&](std::size_t, std::size_t x_lo, std::size_t x_hi) {
                    for (const CoordinateRecord* r : member_records) {
                      const int ix0 = std::max(
                          static_cast<int>(x_lo),
                          static_cast<int>(std::ceil((r->x - radius - spec.origin_x) / spec.spacing)));
                      const int ix1 = std::min(
                          static_cast<int>(x_hi) - 1,
                          static_cast<int>(std::floor((r->x + radius - spec.origin_x) / spec.spacing)));
                      const int iy0 = std::max(
                          0, static_cast<int>(std::ceil((r->y - radius - spec.origin_y) / spec.spacing)));
                      const int iy1 = std::min(
                          spec.ny - 1,
                          static_cast<int>(std::floor((r->y + radius - spec.origin_y) / spec.spacing)));
                      const int iz0 = std::max(
                          0, static_cast<int>(std::ceil((r->z - radius - spec.origin_z) / spec.spacing)));
                      const int iz1 = std::min(
                          spec.nz - 1,
                          static_cast<int>(std::floor((r->z + radius - spec.origin_z) / spec.spacing)));
                      for (int ix = ix0; ix <= ix1; ++ix) {
                        const double dx = spec.origin_x + spec.spacing * ix - r->x;
                        for (int iy = iy0; iy <= iy1; ++iy) {
                          const double dy = spec.origin_y + spec.spacing * iy - r->y;
                          for (int iz = iz0; iz <= iz1; ++iz) {
                            const double dz = spec.origin_z + spec.spacing * iz - r->z;
                            const double d2 = dx * dx + dy * dy + dz * dz;
                            if (d2 <= radius2) {
                              grid.at(ix, iy, iz) += std::exp(-d2 * inv_two_sigma2);
                            }
                          }
                        }
                      }
                    }
                  });
  const double denom = static_cast<double>(member_doc_ids.size());
  for (double& v : grid.values) v /= denom;
  return grid;
}

struct Peak {
  double x = 0.0, y = 0.0, z = 0.0;
  double value = 0.0;
};

/// Strict 26-neighbourhood local maxima, ranked by value (ties by
/// lexicographic voxel index), greedily filtered to a minimum pairwise
/// separation in millimetres. A constant grid yields no peaks.
inline std::vector<Peak> peak_activations(const VoxelGrid& grid, int top_n,
                                          double min_separation_mm) {
  grid.spec.validate();
  require(top_n >= 1, "peak_activations: top_n must be >= 1");
  require(min_separation_mm >= 0.0, "peak_activations: separation must be >= 0");
  require(grid.values.size() == grid.spec.voxel_count(), "peak_activations: bad grid size");

  struct Candidate {
    double value;
    int ix, iy, iz;
  };
  std::vector<Candidate> maxima;
  const GridSpec& s = grid.spec;
  for (int ix = 0; ix < s.nx; ++ix) {
    for (int iy = 0; iy < s.ny; ++iy) {
      for (int iz = 0; iz < s.nz; ++iz) {
        const double v = grid.at(ix, iy, iz);
        bool is_max = true;
        for (int dx = -1; dx <= 1 && is_max; ++dx) {
          for (int dy = -1; dy <= 1 && is_max; ++dy) {
            for (int dz = -1; dz <= 1 && is_max; ++dz) {
              if (dx == 0 && dy == 0 && dz == 0) continue;
              const int jx = ix + dx, jy = iy + dy, jz = iz + dz;
              if (jx < 0 || jx >= s.nx || jy < 0 || jy >= s.ny || jz < 0 || jz >= s.nz) continue;
              if (grid.at(jx, jy, jz) >= v) is_max = false;
            }
          }
        }
        if (is_max) maxima.push_back({v, ix, iy, iz});
      }
    }
  }
  std::sort(maxima.begin(), maxima.end(), [](const Candidate& lhs, const Candidate& rhs) {
    if (lhs.value != rhs.value) return lhs.value > rhs.value;
    if (lhs.ix != rhs.ix) return lhs.ix < rhs.ix;
    if (lhs.iy != rhs.iy) return lhs.iy < rhs.iy;
    return lhs.iz < rhs.iz;
  });

  std::vector<Peak> peaks;
  const double min_sep2 = min_separation_mm * min_separation_mm;
  for (const Candidate& c : maxima) {
    if (peaks.size() == static_cast<std::size_t>(top_n)) break;
    const double x = s.origin_x + s.spacing * c.ix;
    const double y = s.origin_y + s.spacing * c.iy;
    const double z = s.origin_z + s.spacing * c.iz;
    bool separated = true;
    for (const Peak& p : peaks) {
      const double d2 = (p.x - x) * (p.x - x) + (p.y - y) * (p.y - y) + (p.z - z) * (p.z - z);
      if (d2 < min_sep2) {
        separated = false;
        break;
      }
    }
    if (separated) peaks.push_back({x, y, z, c.value});
  }
  return peaks;
}

namespace detail {

inline std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace detail

/// Volume file: UTF-8 header (`origin x y z`, `spacing s`, `dims nx ny nz`,
/// blank line) followed by the row-major values as 64-bit little-endian.
inline void write_volume(const std::string& path, const VoxelGrid& grid) {
  grid.spec.validate();
  require(grid.values.size() == grid.spec.voxel_count(), "write_volume: bad grid size");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("write_volume: cannot open for writing: " + path);
  out << "origin " << detail::format_double(grid.spec.origin_x) << ' '
      << detail::format_double(grid.spec.origin_y) << ' '
      << detail::format_double(grid.spec.origin_z) << '\n';
  out << "spacing " << detail::format_double(grid.spec.spacing) << '\n';
  out << "dims " << grid.spec.nx << ' ' << grid.spec.ny << ' ' << grid.spec.nz << '\n';
  out << '\n';
  if constexpr (std::endian::native == std::endian::little) {
    out.write(reinterpret_cast<const char*>(grid.values.data()),
              static_cast<std::streamsize>(grid.values.size() * 8));
  } else {
    for (double v : grid.values) {
      std::uint64_t bits;
      std::memcpy(&bits, &v, 8);
      char buf[8];
      for (int b = 0; b < 8; ++b) buf[b] = static_cast<char>((bits >> (8 * b)) & 0xFF);
      out.write(buf, 8);
    }
  }
  if (!out) throw IoError("write_volume: write failed: " + path);
}

inline VoxelGrid read_volume(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("read_volume: cannot open: " + path);
  VoxelGrid grid;
  std::string line, tag;
  if (!std::getline(in, line)) throw IoError("read_volume: missing origin in " + path);
  {
    std::istringstream row(line);
    if (!(row >> tag >> grid.spec.origin_x >> grid.spec.origin_y >> grid.spec.origin_z) ||
        tag != "origin") {
      throw IoError("read_volume: bad origin line in " + path);
    }
  }
  if (!std::getline(in, line)) throw IoError("read_volume: missing spacing in " + path);
  {
    std::istringstream row(line);
    if (!(row >> tag >> grid.spec.spacing) || tag != "spacing") {
      throw IoError("read_volume: bad spacing line in " + path);
    }
  }
  if (!std::getline(in, line)) throw IoError("read_volume: missing dims in " + path);
  {
    std::istringstream row(line);
    if (!(row >> tag >> grid.spec.nx >> grid.spec.ny >> grid.spec.nz) || tag != "dims") {
      throw IoError("read_volume: bad dims line in " + path);
    }
  }
  if (!std::getline(in, line) || !line.empty()) {
    throw IoError("read_volume: missing blank separator in " + path);
  }
  grid.spec.validate();
  grid.values.resize(grid.spec.voxel_count());
  if constexpr (std::endian::native == std::endian::little) {
    in.read(reinterpret_cast<char*>(grid.values.data()),
            static_cast<std::streamsize>(grid.values.size() * 8));
  } else {
    for (double& v : grid.values) {
      char buf[8];
      in.read(buf, 8);
      std::uint64_t bits = 0;
      for (int b = 0; b < 8; ++b) {
        bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf[b])) << (8 * b);
      }
      std::memcpy(&v, &bits, 8);
    }
  }
  if (!in) throw IoError("read_volume: truncated values in " + path);
  return grid;
}

inline void write_peaks(const std::string& path, const std::vector<Peak>& peaks) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("write_peaks: cannot open for writing: " + path);
  out << "x\ty\tz\tvalue\n";
  for (const Peak& p : peaks) {
    out << detail::format_double(p.x) << '\t' << detail::format_double(p.y) << '\t'
        << detail::format_double(p.z) << '\t' << detail::format_double(p.value) << '\n';
  }
  if (!out) throw IoError("write_peaks: write failed: " + path);
}

}  // namespace ebtm::activation
