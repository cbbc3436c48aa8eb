#pragma once

#include <cmath>
#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "pushlab/physics.hpp"
#include "pushlab/util.hpp"

namespace pushlab::metrics {

struct DistanceSeries {
  std::vector<double> d;       // object-goal distance after each step
  double threshold = 0.01;
};

// exits from the success region: d_t < threshold and d_{t+1} >= threshold
inline int count_overshoot(const DistanceSeries& s) {
  int count = 0;
  for (size_t t = 0; t + 1 < s.d.size(); ++t) {
    if (s.d[t] < s.threshold && s.d[t + 1] >= s.threshold) ++count;
  }
  return count;
}

// Maximal runs of strictly increasing steps that start at or above the
// threshold (exits below threshold are overshoots, counted separately) and are
// followed by a strictly decreasing step later in the episode.
inline int count_distance_corrections(const DistanceSeries& s) {
  const size_t n = s.d.size();
  if (n < 2) return 0;
  // decrease_after[t]: some step (u, u+1) with u >= t decreases
  std::vector<bool> decrease_after(n, false);
  bool seen = false;
  for (size_t t = n - 1; t + 1 >= 1; --t) {
    if (t + 1 < n && s.d[t + 1] < s.d[t]) seen = true;
    decrease_after[t] = seen;
    if (t == 0) break;
  }
  int count = 0;
  size_t t = 0;
  while (t + 1 < n) {
    if (s.d[t + 1] > s.d[t]) {
      const size_t start = t;
      while (t + 1 < n && s.d[t + 1] > s.d[t]) ++t;  // t = end of the increasing run
      const bool counted_as_overshoot = s.d[start] < s.threshold;
      const bool corrected = t < n && decrease_after[t];
      if (!counted_as_overshoot && corrected) ++count;
    } else {
      ++t;
    }
  }
  return count;
}

// sum of per-step sparse rewards: minus the number of steps outside threshold
inline int episode_return(const DistanceSeries& s) {
  int bad = 0;
  for (const double d : s.d)
    if (d >= s.threshold) ++bad;
  return -bad;
}

// ---------------------------------------------------------------------------
// aggregation

enum class ShapeClass { kDisc, kSquare, kRectangular };

inline ShapeClass classify_shape(const physics::ShapeSpec& shape) {
  if (shape.kind == physics::ShapeKind::kDisc) return ShapeClass::kDisc;
  const double len = 2.0 * shape.half_extents.x;
  const double wid = 2.0 * shape.half_extents.y;
  return std::abs(len - wid) < 1e-6 ? ShapeClass::kSquare : ShapeClass::kRectangular;
}

inline const char* shape_class_name(ShapeClass c) {
  switch (c) {
    case ShapeClass::kDisc:
      return "disc";
    case ShapeClass::kSquare:
      return "square";
    case ShapeClass::kRectangular:
      return "rectangular";
  }
  return "?";
}

struct EpisodeRecord {
  ShapeClass shape_class = ShapeClass::kDisc;
  bool success = false;
  double episode_return = 0.0;
  int overshoot_corrections = 0;
  int distance_corrections = 0;
};

struct Stat {
  double mean = 0.0;
  double sem = 0.0;
  int n = 0;
  bool degenerate = false;  // n == 1, SEM reported as 0 by convention
};

inline Stat make_stat(const std::vector<double>& xs) {
  Stat s;
  s.n = static_cast<int>(xs.size());
  if (s.n == 0) return s;
  double acc = 0.0;
  for (const double x : xs) acc += x;
  s.mean = acc / s.n;
  if (s.n == 1) {
    s.degenerate = true;
    return s;
  }
  double sq = 0.0;
  for (const double x : xs) sq += (x - s.mean) * (x - s.mean);
  const double sd = std::sqrt(sq / (s.n - 1));
  s.sem = sd / std::sqrt(static_cast<double>(s.n));
  return s;
}

struct GroupReport {
  std::string name;
  int n = 0;
  double success_rate = 0.0;
  Stat ret;
  Stat overshoot;
  Stat distcorr;
};

struct EvalReport {
  GroupReport overall;
  std::vector<GroupReport> by_shape;  // disc, square, rectangular (present groups only)
};

inline GroupReport summarize(const std::string& name,
                             const std::vector<EpisodeRecord>& episodes) {
  GroupReport g;
  g.name = name;
  g.n = static_cast<int>(episodes.size());
  std::vector<double> rets, overs, dists;
  int successes = 0;
  for (const auto& e : episodes) {
    successes += e.success ? 1 : 0;
    rets.push_back(e.episode_return);
    overs.push_back(e.overshoot_corrections);
    dists.push_back(e.distance_corrections);
  }
  g.success_rate = g.n > 0 ? static_cast<double>(successes) / g.n : 0.0;
  g.ret = make_stat(rets);
  g.overshoot = make_stat(overs);
  g.distcorr = make_stat(dists);
  return g;
}

inline EvalReport aggregate(const std::vector<EpisodeRecord>& episodes) {
  if (episodes.empty()) throw std::invalid_argument("aggregate: no episodes");
  EvalReport report;
  report.overall = summarize("all", episodes);
  for (const ShapeClass c :
       {ShapeClass::kDisc, ShapeClass::kSquare, ShapeClass::kRectangular}) {
    std::vector<EpisodeRecord> group;
    for (const auto& e : episodes)
      if (e.shape_class == c) group.push_back(e);
    if (!group.empty()) report.by_shape.push_back(summarize(shape_class_name(c), group));
  }
  return report;
}

inline std::string format_report(const EvalReport& report) {
  std::string out;
  char line[256];
  std::snprintf(line, sizeof(line), "%-12s %5s %9s %18s %18s %18s\n", "group", "n",
                "success", "return", "overshoot corr", "distance corr");
  out += line;
  auto emit = [&](const GroupReport& g) {
    std::snprintf(line, sizeof(line),
                  "%-12s %5d %8.1f%% %10.2f +-%5.2f %10.2f +-%5.2f %10.2f +-%5.2f\n",
                  g.name.c_str(), g.n, 100.0 * g.success_rate, g.ret.mean, g.ret.sem,
                  g.overshoot.mean, g.overshoot.sem, g.distcorr.mean, g.distcorr.sem);
    out += line;
  };
  emit(report.overall);
  for (const auto& g : report.by_shape) emit(g);
  return out;
}

inline void write_report_csv(const EvalReport& report, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw ConfigError("write_report_csv: cannot write " + path);
  out << "group,n,success_rate,return_mean,return_sem,overshoot_mean,overshoot_sem,"
         "distcorr_mean,distcorr_sem\n";
  char line[256];
  auto emit = [&](const GroupReport& g) {
    std::snprintf(line, sizeof(line), "%s,%d,%.6g,%.6g,%.6g,%.6g,%.6g,%.6g,%.6g\n",
                  g.name.c_str(), g.n, g.success_rate, g.ret.mean, g.ret.sem,
                  g.overshoot.mean, g.overshoot.sem, g.distcorr.mean, g.distcorr.sem);
    out << line;
  };
  emit(report.overall);
  for (const auto& g : report.by_shape) emit(g);
}

}  // namespace pushlab::metrics
