#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <vector>

#include "aggnet/errors.hpp"

namespace aggnet {

struct RocPoint {
  double threshold;
  double p_fp;
  double p_tp;
};

// Empirical ROC, points sorted by threshold descending, tied scores grouped
// into a single step. Acceptance is strict: accept <=> score > threshold, so
// the first point (threshold = max score) is (0,0) and the last point
// (threshold just below the min score) is (1,1).
struct RocCurve {
  std::vector<RocPoint> points;
};

inline RocCurve roc(const std::vector<double>& pos, const std::vector<double>& neg) {
  if (pos.empty() || neg.empty()) throw MetricError("roc: need non-empty score lists");
  for (double s : pos)
    if (!std::isfinite(s)) throw MetricError("roc: non-finite positive score");
  for (double s : neg)
    if (!std::isfinite(s)) throw MetricError("roc: non-finite negative score");

  std::vector<double> ps = pos, ns = neg;
  std::sort(ps.begin(), ps.end(), std::greater<>());
  std::sort(ns.begin(), ns.end(), std::greater<>());

  std::vector<double> thresholds;
  thresholds.reserve(ps.size() + ns.size());
  {
    std::vector<double> all;
    all.reserve(ps.size() + ns.size());
    all.insert(all.end(), ps.begin(), ps.end());
    all.insert(all.end(), ns.begin(), ns.end());
    std::sort(all.begin(), all.end(), std::greater<>());
    for (double s : all) {
      if (thresholds.empty() || s != thresholds.back()) thresholds.push_back(s);
    }
  }

  RocCurve curve;
  curve.points.reserve(thresholds.size() + 1);
  std::size_t ip = 0, in = 0;  // counts of scores strictly above the threshold
  const double np = static_cast<double>(ps.size()), nn = static_cast<double>(ns.size());
  for (double t : thresholds) {
    while (ip < ps.size() && ps[ip] > t) ++ip;
    while (in < ns.size() && ns[in] > t) ++in;
    curve.points.push_back({t, static_cast<double>(in) / nn, static_cast<double>(ip) / np});
  }
  // Final operating point accepting everything; any threshold strictly below
  // the minimum score realizes it.
  curve.points.push_back({thresholds.back() - 1.0, 1.0, 1.0});
  return curve;
}

// Area under the ROC curve by trapezoidal integration; equals the pairwise
// Mann-Whitney statistic with half credit for ties.
inline double auc(const RocCurve& curve) {
  double area = 0.0;
  for (std::size_t i = 1; i < curve.points.size(); ++i) {
    const RocPoint& a = curve.points[i - 1];
    const RocPoint& b = curve.points[i];
    area += (b.p_fp - a.p_fp) * (a.p_tp + b.p_tp) * 0.5;
  }
  return area;
}

inline double auc(const std::vector<double>& pos, const std::vector<double>& neg) {
  return auc(roc(pos, neg));
}

struct OperatingPoint {
  double p_tp;
  double threshold;
};

// Conservative (step-function) reading of the curve: the largest P_tp whose
// empirical P_fp does not exceed u, plus the threshold realizing it. No
// interpolation between steps, so the returned threshold is deployable.
inline OperatingPoint ptp_at_pfp(const RocCurve& curve, double u) {
  if (!(u > 0.0) || u >= 1.0) throw MetricError("ptp_at_pfp: u must be in (0,1)");
  if (curve.points.empty()) throw MetricError("ptp_at_pfp: empty curve");
  OperatingPoint best{0.0, curve.points.front().threshold};
  for (const RocPoint& pt : curve.points) {
    if (pt.p_fp <= u) best = {pt.p_tp, pt.threshold};  // P_tp non-decreasing along curve
  }
  return best;
}

// (TP + TN) / (|P| + |N|) with the strict rule accept <=> score > threshold.
inline double accuracy_at(const std::vector<double>& pos, const std::vector<double>& neg,
                          double threshold = 0.5) {
  if (pos.empty() || neg.empty()) throw MetricError("accuracy: need non-empty score lists");
  std::size_t correct = 0;
  for (double s : pos)
    if (s > threshold) ++correct;
  for (double s : neg)
    if (!(s > threshold)) ++correct;
  return static_cast<double>(correct) / static_cast<double>(pos.size() + neg.size());
}

struct EvalReport {
  double accuracy = 0.0;  // at threshold 0.5
  double auc = 0.0;
  double ptp_at_1 = 0.0;   // P_tp @ P_fp = 0.01
  double ptp_at_5 = 0.0;   // P_tp @ P_fp = 0.05
  double ptp_at_10 = 0.0;  // P_tp @ P_fp = 0.10
  std::size_t positives = 0;
  std::size_t negatives = 0;
};

inline EvalReport make_report(const std::vector<double>& pos, const std::vector<double>& neg) {
  EvalReport r;
  const RocCurve curve = roc(pos, neg);
  r.accuracy = accuracy_at(pos, neg, 0.5);
  r.auc = auc(curve);
  r.ptp_at_1 = ptp_at_pfp(curve, 0.01).p_tp;
  r.ptp_at_5 = ptp_at_pfp(curve, 0.05).p_tp;
  r.ptp_at_10 = ptp_at_pfp(curve, 0.10).p_tp;
  r.positives = pos.size();
  r.negatives = neg.size();
  return r;
}

// Two-column (P_fp, P_tp) text file for external plotting.
inline void write_roc(const RocCurve& curve, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write ROC file: " + path.string());
  out << "# p_fp p_tp\n";
  char buf[64];
  for (const RocPoint& pt : curve.points) {
    std::snprintf(buf, sizeof(buf), "%.9f %.9f\n", pt.p_fp, pt.p_tp);
    out << buf;
  }
  if (!out) throw IoError("ROC write failed: " + path.string());
}

}  // namespace aggnet
