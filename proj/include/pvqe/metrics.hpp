#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "pvqe/common.hpp"

namespace pvqe {

// Objective metrics. All pure functions; dB values are clamped to [-60, 60]
// and energy ratios floored at 1e-12 relative, stated in the report
// metadata.

namespace metric_detail {

constexpr double kDbCap = 60.0;
constexpr double kEnergyFloor = 1e-12;

template <class T>
double energy(std::span<const T> x) {
  double e = 0.0;
  for (T v : x) e += double(v) * double(v);
  return e;
}

inline double capped_db(double num, double den) {
  den = std::max(den, kEnergyFloor * num);
  const double db = 10.0 * std::log10(num / den);
  return std::clamp(db, -kDbCap, kDbCap);
}

}  // namespace metric_detail

// Echo return loss enhancement on far-end single-talk material.
template <class T>
double erle(std::span<const T> mic, std::span<const T> out) {
  if (mic.size() != out.size()) throw InvalidInput("erle: length mismatch");
  const double em = metric_detail::energy(mic);
  if (em <= 0.0) throw UndefinedMetric("erle: silent microphone signal");
  return metric_detail::capped_db(em, metric_detail::energy(out));
}

// Signal energy reduction on interferer-only clips (ideal output: silence).
template <class T>
double bak_suppr(std::span<const T> input, std::span<const T> output) {
  if (input.size() != output.size()) throw InvalidInput("bak_suppr: length mismatch");
  const double ei = metric_detail::energy(input);
  if (ei <= 0.0) throw UndefinedMetric("bak_suppr: silent input signal");
  return metric_detail::capped_db(ei, metric_detail::energy(output));
}

struct TsosConfig {
  int win_len = 320;          // 20 ms
  int hop = 160;              // 10 ms
  double active_gate_db = 40.0;   // frames within this range of the peak count
  double suppress_db = 10.0;      // attenuation beyond this marks a frame
};

// Target speaker over-suppression: the fraction of active target frames
// whose energy the enhanced signal reduces by more than the threshold.
template <class T>
double tsos(std::span<const T> target, std::span<const T> enhanced,
            const TsosConfig& cfg = TsosConfig{}) {
  if (target.size() != enhanced.size()) throw InvalidInput("tsos: length mismatch");
  if (int(target.size()) < cfg.win_len) throw UndefinedMetric("tsos: clip shorter than one frame");
  const int frames = 1 + (int(target.size()) - cfg.win_len) / cfg.hop;
  std::vector<double> et(static_cast<size_t>(frames)), ee(static_cast<size_t>(frames));
  double peak = 0.0;
  for (int t = 0; t < frames; ++t) {
    double a = 0.0, b = 0.0;
    for (int i = 0; i < cfg.win_len; ++i) {
      const size_t idx = size_t(t) * size_t(cfg.hop) + size_t(i);
      a += double(target[idx]) * double(target[idx]);
      b += double(enhanced[idx]) * double(enhanced[idx]);
    }
    et[size_t(t)] = a;
    ee[size_t(t)] = b;
    peak = std::max(peak, a);
  }
  if (peak <= 0.0) throw UndefinedMetric("tsos: silent target signal");
  const double gate = peak * std::pow(10.0, -cfg.active_gate_db / 10.0);
  const double ratio_thresh = std::pow(10.0, cfg.suppress_db / 10.0);
  int active = 0, over = 0;
  for (int t = 0; t < frames; ++t) {
    if (et[size_t(t)] < gate) continue;
    ++active;
    if (et[size_t(t)] > ratio_thresh * std::max(ee[size_t(t)], 1e-300)) ++over;
  }
  if (active == 0) throw UndefinedMetric("tsos: no active target frames");
  return double(over) / double(active);
}

// Scale-invariant SDR of `est` against `ref`.
template <class T>
double si_sdr(std::span<const T> ref, std::span<const T> est) {
  if (ref.size() != est.size()) throw InvalidInput("si_sdr: length mismatch");
  double rr = 0.0, er = 0.0;
  for (size_t i = 0; i < ref.size(); ++i) {
    rr += double(ref[i]) * double(ref[i]);
    er += double(est[i]) * double(ref[i]);
  }
  if (rr <= 0.0) throw UndefinedMetric("si_sdr: silent reference");
  const double alpha = er / rr;
  double sig = 0.0, res = 0.0;
  for (size_t i = 0; i < ref.size(); ++i) {
    const double s = alpha * double(ref[i]);
    const double d = double(est[i]) - s;
    sig += s * s;
    res += d * d;
  }
  if (res <= 0.0) return metric_detail::kDbCap;
  if (sig <= 0.0) return -metric_detail::kDbCap;
  return std::clamp(10.0 * std::log10(sig / res), -metric_detail::kDbCap, metric_detail::kDbCap);
}

// Per-clip results plus recomputable aggregates, serializable to CSV and a
// JSON summary.
struct MetricReport {
  struct Entry {
    std::string clip_id;
    std::string metric;
    double value = 0.0;
  };
  std::vector<Entry> entries;
  uint64_t config_hash = 0;

  void add(const std::string& clip_id, const std::string& metric, double value) {
    entries.push_back({clip_id, metric, value});
  }

  std::map<std::string, std::vector<double>> by_metric() const {
    std::map<std::string, std::vector<double>> m;
    for (const auto& e : entries) m[e.metric].push_back(e.value);
    return m;
  }

  static double mean(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return v.empty() ? 0.0 : s / double(v.size());
  }
  static double median(std::vector<double> v) {
    if (v.empty()) return 0.0;
    std::sort(v.begin(), v.end());
    const size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
  }

  void write_csv(const std::string& path) const {
    std::ofstream f(path);
    if (!f) throw IoError("cannot write report: " + path);
    f << "clip_id,metric,value\n";
    for (const auto& e : entries) f << e.clip_id << ',' << e.metric << ',' << e.value << '\n';
  }

  nlohmann::json aggregate_json() const {
    nlohmann::json j;
    j["config_hash"] = config_hash;
    j["db_cap"] = metric_detail::kDbCap;
    j["energy_floor"] = metric_detail::kEnergyFloor;
    j["clips"] = entries.size();
    for (const auto& [name, vals] : by_metric()) {
      j["metrics"][name] = {{"mean", mean(vals)}, {"median", median(vals)},
                            {"count", vals.size()}};
    }
    return j;
  }
};

}  // namespace pvqe
