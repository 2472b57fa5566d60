#pragma once

// Serialization of evaluation results: report.json plus flat CSV tables.
// Reals are written with 17 significant digits so they parse back exactly.

#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "fimguard/errors.hpp"
#include "fimguard/robustness.hpp"

namespace fimguard {

struct RobustnessReport {
  std::vector<FoolingCurve> curves;
  std::vector<DistanceResult> distances;
  std::vector<TransferResult> transfers;
  std::vector<Snapshot> snapshots;
  std::vector<SampleRecord> records;
  nlohmann::json metadata = nlohmann::json::object();

  nlohmann::json to_json() const;
  void write(const std::filesystem::path& dir) const;
};

namespace detail {

inline std::string exact(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::general, 17);
  return std::string(buf, res.ptr);
}

inline std::ofstream open_csv(const std::filesystem::path& path, const char* header) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << header << '\n';
  return out;
}

inline nlohmann::json json_real(double v) {
  return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr);
}

}  // namespace detail

inline nlohmann::json RobustnessReport::to_json() const {
  nlohmann::json j;
  j["metadata"] = metadata;
  j["curves"] = nlohmann::json::array();
  for (const auto& c : curves) {
    nlohmann::json pts = nlohmann::json::array();
    for (const auto& p : c.points) pts.push_back({{"epsilon", p.epsilon}, {"ratio", p.ratio}, {"n", p.count}});
    j["curves"].push_back({{"attack", c.attack}, {"model", c.model}, {"monotone", c.monotone}, {"points", pts}});
  }
  j["distances"] = nlohmann::json::array();
  for (const auto& d : distances) {
    j["distances"].push_back({{"attack", d.attack},
                              {"model", d.model},
                              {"mean", d.mean},
                              {"successes", d.successes},
                              {"n", d.count}});
  }
  j["transfer"] = nlohmann::json::array();
  for (const auto& t : transfers) {
    j["transfer"].push_back({{"attack", t.attack},
                             {"source", t.source},
                             {"target", t.target},
                             {"accuracy", t.accuracy},
                             {"accuracy_on_successful", detail::json_real(t.accuracy_on_successful)},
                             {"n", t.count},
                             {"source_successes", t.source_successes}});
  }
  j["snapshots"] = nlohmann::json::array();
  for (const auto& s : snapshots) j["snapshots"].push_back(s.to_json());
  j["per_sample_records"] = records.size();
  return j;
}

inline void write_curves_csv(const std::filesystem::path& path, const std::vector<FoolingCurve>& curves) {
  auto out = detail::open_csv(path, "attack,model,epsilon,ratio,n");
  for (const auto& c : curves)
    for (const auto& p : c.points)
      out << c.attack << ',' << c.model << ',' << detail::exact(p.epsilon) << ',' << detail::exact(p.ratio) << ','
          << p.count << '\n';
}

/// Inverse of write_curves_csv.
inline std::vector<FoolingCurve> read_curves_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  std::string line;
  std::getline(in, line);
  if (line != "attack,model,epsilon,ratio,n") throw FormatError(path.string() + ": unexpected header");
  std::vector<FoolingCurve> curves;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) f.push_back(cell);
    if (f.size() != 5) throw FormatError(path.string() + ": malformed row '" + line + "'");
    CurvePoint p;
    try {
      p = {std::stod(f[2]), std::stod(f[3]), static_cast<std::size_t>(std::stoull(f[4]))};
    } catch (const std::exception&) {
      throw FormatError(path.string() + ": malformed row '" + line + "'");
    }
    if (curves.empty() || curves.back().attack != f[0] || curves.back().model != f[1]) {
      curves.push_back(FoolingCurve{f[0], f[1], {}, true});
    }
    auto& c = curves.back();
    if (!c.points.empty() && p.ratio < c.points.back().ratio) c.monotone = false;
    c.points.push_back(p);
  }
  return curves;
}

inline void write_distances_csv(const std::filesystem::path& path, const std::vector<DistanceResult>& rows) {
  auto out = detail::open_csv(path, "attack,model,mean_norm,successes,n");
  for (const auto& d : rows)
    out << d.attack << ',' << d.model << ',' << detail::exact(d.mean) << ',' << d.successes << ',' << d.count << '\n';
}

inline void write_transfer_csv(const std::filesystem::path& path, const std::vector<TransferResult>& rows) {
  auto out = detail::open_csv(path, "attack,source,target,accuracy,accuracy_on_successful,n,source_successes");
  for (const auto& t : rows)
    out << t.attack << ',' << t.source << ',' << t.target << ',' << detail::exact(t.accuracy) << ','
        << detail::exact(t.accuracy_on_successful) << ',' << t.count << ',' << t.source_successes << '\n';
}

inline void write_per_sample_csv(const std::filesystem::path& path, const std::vector<SampleRecord>& rows) {
  auto out = detail::open_csv(
      path, "model,attack,mode,epsilon,sample,label,label_before,label_after,success,fooled,norm,queries,degenerate");
  for (const auto& r : rows)
    out << r.model << ',' << r.attack << ',' << r.mode << ',' << detail::exact(r.epsilon) << ',' << r.sample << ','
        << r.label << ',' << r.label_before << ',' << r.label_after << ',' << r.success << ',' << r.fooled << ','
        << detail::exact(r.norm) << ',' << r.queries << ',' << r.degenerate << '\n';
}

inline void RobustnessReport::write(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  {
    std::ofstream out(dir / "report.json");
    if (!out) throw IoError("cannot write " + (dir / "report.json").string());
    out << to_json().dump(2) << '\n';
  }
  write_curves_csv(dir / "curves.csv", curves);
  write_distances_csv(dir / "distances.csv", distances);
  write_transfer_csv(dir / "transfer.csv", transfers);
  write_per_sample_csv(dir / "per_sample.csv", records);
}

}  // namespace fimguard
