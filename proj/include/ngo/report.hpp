#pragma once

// Evaluation reports: per-trajectory metrics for the local-only and global
// variants, aggregate tables, error-vs-step series, trajectory overlay dumps,
// and attention matrices, all as CSV.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "ngo/eval.hpp"
#include "ngo/io.hpp"

namespace ngo {

struct ModelRow {
  std::string model;  // "local", "global-m1", ...
  std::string split;
  SplitAggregates agg;
  std::vector<TrajectoryMetrics> per_traj;
};

struct EvalReport {
  std::vector<ModelRow> rows;

  const ModelRow* find(const std::string& model, const std::string& split) const {
    for (const auto& r : rows)
      if (r.model == model && r.split == split) return &r;
    return nullptr;
  }
};

namespace detail {
inline std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}
}  // namespace detail

struct EvalOptions {
  std::vector<int> iterations{1, 5};
  bool accumulated_drift = false;  // per-step drift mode for the % metrics
  int overlay_count = 4;           // per-trajectory pose dumps per split
  int attention_count = 1;         // trajectories whose alpha matrices are dumped
};

// Runs every model variant over one labeled split and appends report rows;
// when out_dir is non-empty, writes the per-split CSV artifacts.
inline void run_split_eval(const LocalPoseNet<float>& local, const PoseAggregator<float>* agg,
                           const NeuralGraphOptimizer<float>* graph_opt, int window,
                           const std::vector<Trajectory>& trajs, const std::string& split,
                           const EvalOptions& opts, EvalReport& report, const std::string& out_dir) {
  ModelRow local_row{"local", split, {}, {}};
  std::map<int, ModelRow> global_rows;
  if (agg && graph_opt)
    for (int m : opts.iterations) global_rows[m] = ModelRow{"global-m" + std::to_string(m), split, {}, {}};

  // per-step error series, averaged across trajectories at each meta step
  struct Series {
    std::vector<double> sq_pos, sq_rot;
    std::vector<int> counts;
    void add(const std::vector<Pose2>& pred, const std::vector<Pose2>& gt) {
      if (pred.size() > sq_pos.size()) {
        sq_pos.resize(pred.size(), 0.0);
        sq_rot.resize(pred.size(), 0.0);
        counts.resize(pred.size(), 0);
      }
      for (std::size_t t = 0; t < pred.size(); ++t) {
        const double ex = pred[t].x - gt[t].x;
        const double ey = pred[t].y - gt[t].y;
        const double er = wrap_angle(pred[t].theta - gt[t].theta);
        sq_pos[t] += ex * ex + ey * ey;
        sq_rot[t] += er * er;
        counts[t] += 1;
      }
    }
  };
  std::map<std::string, Series> series;
  std::vector<double> dist_sum;
  std::vector<int> dist_counts;

  const std::filesystem::path dir(out_dir);
  int idx = 0;
  for (const auto& traj : trajs) {
    auto ev = evaluate_trajectory<float>(local, agg, graph_opt, traj, opts.iterations, window);
    local_row.per_traj.push_back(trajectory_metrics(ev.local_meta, ev.gt_meta, opts.accumulated_drift));
    local_row.agg.accumulate(local_row.per_traj.back());
    series["local"].add(ev.local_meta, ev.gt_meta);
    for (auto& [m, row] : global_rows) {
      row.per_traj.push_back(trajectory_metrics(ev.global_meta.at(m), ev.gt_meta, opts.accumulated_drift));
      row.agg.accumulate(row.per_traj.back());
      series[row.model].add(ev.global_meta.at(m), ev.gt_meta);
    }
    // cumulative ground-truth distance at each meta step
    if (ev.gt_meta.size() > dist_sum.size()) {
      dist_sum.resize(ev.gt_meta.size(), 0.0);
      dist_counts.resize(ev.gt_meta.size(), 0);
    }
    double acc = std::hypot(ev.gt_meta[0].x, ev.gt_meta[0].y);
    for (std::size_t t = 0; t < ev.gt_meta.size(); ++t) {
      if (t > 0)
        acc += std::hypot(ev.gt_meta[t].x - ev.gt_meta[t - 1].x, ev.gt_meta[t].y - ev.gt_meta[t - 1].y);
      dist_sum[t] += acc;
      dist_counts[t] += 1;
    }

    if (!out_dir.empty() && idx < opts.overlay_count) {
      std::ofstream os(dir / ("traj_" + split + "_" + std::to_string(idx) + ".csv"));
      os << "step,gt_x,gt_y,gt_theta,local_x,local_y,local_theta";
      for (const auto& [m, row] : global_rows)
        os << ",global_m" << m << "_x,global_m" << m << "_y,global_m" << m << "_theta";
      os << "\n";
      for (std::size_t t = 0; t < ev.meta_steps.size(); ++t) {
        os << ev.meta_steps[t] << ',' << detail::fmt_double(ev.gt_meta[t].x) << ','
           << detail::fmt_double(ev.gt_meta[t].y) << ',' << detail::fmt_double(ev.gt_meta[t].theta)
           << ',' << detail::fmt_double(ev.local_meta[t].x) << ','
           << detail::fmt_double(ev.local_meta[t].y) << ',' << detail::fmt_double(ev.local_meta[t].theta);
        for (const auto& [m, row] : global_rows) {
          const auto& p = ev.global_meta.at(m)[t];
          os << ',' << detail::fmt_double(p.x) << ',' << detail::fmt_double(p.y) << ','
             << detail::fmt_double(p.theta);
        }
        os << "\n";
      }
    }
    if (!out_dir.empty() && idx < opts.attention_count && agg && graph_opt) {
      for (std::size_t it = 0; it < ev.traces.size(); ++it) {
        std::ofstream os(dir / ("attn_" + split + "_traj" + std::to_string(idx) + "_iter" +
                                std::to_string(it + 1) + ".csv"));
        const int t = ev.traces[it].t;
        for (int r = 0; r < t; ++r) {
          for (int u = 0; u < t; ++u)
            os << (u ? "," : "") << detail::fmt_double(ev.traces[it].alpha[static_cast<std::size_t>(r * t + u)]);
          os << "\n";
        }
      }
    }
    ++idx;
  }

  local_row.agg.finalize();
  report.rows.push_back(std::move(local_row));
  for (auto& [m, row] : global_rows) {
    row.agg.finalize();
    report.rows.push_back(std::move(row));
  }

  if (!out_dir.empty()) {
    std::ofstream os(dir / ("series_" + split + ".csv"));
    os << "step,mean_gt_distance";
    for (const auto& [model, s] : series) os << ',' << model << "_rmse_pos," << model << "_rmse_rot,"
                                             << model << "_ratio_pos," << model << "_ratio_rot";
    os << "\n";
    const std::size_t len = dist_sum.size();
    for (std::size_t t = 0; t < len; ++t) {
      const double dist = dist_counts[t] ? dist_sum[t] / dist_counts[t] : 0.0;
      os << (t + 1) << ',' << detail::fmt_double(dist);
      for (const auto& [model, s] : series) {
        double rp = 0, rr = 0;
        if (t < s.counts.size() && s.counts[t] > 0) {
          rp = std::sqrt(s.sq_pos[t] / s.counts[t]);
          rr = std::sqrt(s.sq_rot[t] / s.counts[t]);
        }
        const double safe_dist = dist > 1e-12 ? dist : 1e-12;
        os << ',' << detail::fmt_double(rp) << ',' << detail::fmt_double(rr) << ','
           << detail::fmt_double(rp / safe_dist) << ',' << detail::fmt_double(rr / safe_dist);
      }
      os << "\n";
    }
  }
}

inline void write_report_csv(const std::string& path, const EvalReport& report) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot write report: " + path);
  os << "model,split,rmse_pos,rmse_rot,pct_trans,pct_rot\n";
  for (const auto& r : report.rows)
    os << r.model << ',' << r.split << ',' << detail::fmt_double(r.agg.rmse_pos) << ','
       << detail::fmt_double(r.agg.rmse_rot) << ',' << detail::fmt_double(r.agg.pct_trans) << ','
       << detail::fmt_double(r.agg.pct_rot) << "\n";
}

}  // namespace ngo
