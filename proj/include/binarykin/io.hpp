#pragma once

#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "binarykin/grid.hpp"
#include "binarykin/solver.hpp"

namespace binarykin {

/// Shortest round-trip decimal form, locale-independent.
inline std::string fmt_g17(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

/// Field file format: metadata line, column header, then one row per
/// (x-node, v-node) with x indices, velocity coordinates and both species.
inline void write_field_csv(const std::string& path, const DistributionPair& f) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
  out << "# v_radius=" << fmt_g17(f.vgrid.radius()) << " v_points="
      << f.vgrid.points_per_axis() << " x_dims=" << f.xgrid.dims() << " x_points="
      << f.xgrid.points_per_axis() << "\n";
  if (f.xgrid.dims() == 1)
    out << "ix,vx,vy,vz,fA,fB\n";
  else
    out << "ix,iy,iz,vx,vy,vz,fA,fB\n";
  const std::size_t nv = f.vgrid.size();
  for (std::size_t ix = 0; ix < f.xgrid.size(); ++ix) {
    const auto c = f.xgrid.unflatten(ix);
    for (std::size_t iv = 0; iv < nv; ++iv) {
      const Vec3 v = f.vgrid.node(iv);
      if (f.xgrid.dims() == 1)
        out << c[0] << ',';
      else
        out << c[0] << ',' << c[1] << ',' << c[2] << ',';
      out << fmt_g17(v.x) << ',' << fmt_g17(v.y) << ',' << fmt_g17(v.z) << ','
          << fmt_g17(f.a[ix * nv + iv]) << ',' << fmt_g17(f.b[ix * nv + iv]) << "\n";
    }
  }
  if (!out) throw std::runtime_error("write failure on '" + path + "'");
}

inline DistributionPair read_field_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open '" + path + "'");
  std::string line;
  if (!std::getline(in, line) || line.rfind("#", 0) != 0)
    throw std::runtime_error("field file '" + path + "': missing metadata header");

  std::map<std::string, std::string> meta;
  {
    std::istringstream ms(line.substr(1));
    std::string tok;
    while (ms >> tok) {
      const auto eq = tok.find('=');
      if (eq != std::string::npos) meta[tok.substr(0, eq)] = tok.substr(eq + 1);
    }
  }
  auto need = [&](const std::string& k) {
    auto it = meta.find(k);
    if (it == meta.end())
      throw std::runtime_error("field file '" + path + "': missing metadata key " + k);
    return it->second;
  };
  const double radius = std::stod(need("v_radius"));
  const int vpts = std::stoi(need("v_points"));
  const int xdims = std::stoi(need("x_dims"));
  const int xpts = std::stoi(need("x_points"));

  DistributionPair f(SpatialGrid(xdims, xpts), VelocityGrid(radius, vpts));
  std::getline(in, line);  // column header
  const std::size_t nv = f.vgrid.size();
  std::size_t rows = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string cell;
    std::vector<double> vals;
    while (std::getline(ls, cell, ',')) vals.push_back(std::stod(cell));
    const std::size_t nidx = xdims == 1 ? 1 : 3;
    if (vals.size() != nidx + 5)
      throw std::runtime_error("field file '" + path + "': malformed row");
    std::array<int, 3> c{0, 0, 0};
    for (std::size_t d = 0; d < nidx; ++d) c[d] = static_cast<int>(vals[d]);
    const std::size_t ix = f.xgrid.flatten(c);
    const Vec3 v{vals[nidx], vals[nidx + 1], vals[nidx + 2]};
    // locate the velocity node from coordinates
    const double h = f.vgrid.spacing();
    const int i = static_cast<int>(std::lround((v.x + f.vgrid.radius()) / h));
    const int j = static_cast<int>(std::lround((v.y + f.vgrid.radius()) / h));
    const int k = static_cast<int>(std::lround((v.z + f.vgrid.radius()) / h));
    const std::size_t iv = f.vgrid.index(i, j, k);
    f.a[ix * nv + iv] = vals[nidx + 3];
    f.b[ix * nv + iv] = vals[nidx + 4];
    ++rows;
  }
  if (rows != f.xgrid.size() * nv)
    throw std::runtime_error("field file '" + path + "': row count mismatch");
  return f;
}

/// One MonitorRecord per row, columns in declaration order.
inline void write_monitors_csv(const std::string& path,
                               const std::vector<MonitorRecord>& records,
                               const std::vector<MultiIndex>& indices) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
  out << "t,cons_rho_a,cons_rho_b,cons_mom_x,cons_mom_y,cons_mom_z,cons_energy,"
         "entropy_production,energy";
  for (const MultiIndex& mi : indices) {
    std::string tag = "a" + std::to_string(mi.alpha[0]) + std::to_string(mi.alpha[1]) +
                      std::to_string(mi.alpha[2]) + "b" + std::to_string(mi.beta[0]) +
                      std::to_string(mi.beta[1]) + std::to_string(mi.beta[2]);
    out << ",l2sq_" << tag << ",nusq_" << tag;
  }
  out << ",coercivity_num,coercivity_den,min_F\n";
  for (const MonitorRecord& r : records) {
    out << fmt_g17(r.t);
    for (double c : r.conservation) out << ',' << fmt_g17(c);
    out << ',' << fmt_g17(r.entropy_production) << ',' << fmt_g17(r.energy);
    for (std::size_t k = 0; k < r.inst_l2sq.size(); ++k)
      out << ',' << fmt_g17(r.inst_l2sq[k]) << ',' << fmt_g17(r.inst_nusq[k]);
    out << ',' << fmt_g17(r.coercivity_num) << ',' << fmt_g17(r.coercivity_den) << ','
        << fmt_g17(r.min_F) << "\n";
  }
  if (!out) throw std::runtime_error("write failure on '" + path + "'");
}

}  // namespace binarykin
