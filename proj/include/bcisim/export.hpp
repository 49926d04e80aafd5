#pragma once

// CSV export of experiment results. Numbers use shortest round-trip
// formatting so identical runs produce byte-identical files.

#include "bcisim/config.hpp"
#include "bcisim/harness.hpp"

#include <filesystem>
#include <fstream>
#include <ostream>
#include <string>
#include <vector>

namespace bcisim {

namespace fs = std::filesystem;

inline void write_metrics_csv(std::ostream& out, const ExperimentResult& res) {
  const std::string algo = to_string(res.config.update_rule.kind);
  out << "repeat,k,algorithm,sse,mse,steps,acquired,regret,gamma_k,assisted\n";
  for (const auto& rep : res.repeats) {
    for (const auto& m : rep.metrics) {
      out << m.repeat << ',' << m.k << ',' << algo << ',' << format_double(m.sse) << ',' << format_double(m.mse)
          << ',' << m.steps << ',' << (m.acquired ? 1 : 0) << ',' << format_double(m.running_regret) << ','
          << format_double(m.gamma_k) << ',' << (res.config.assist.beta(m.k) > 0.0 ? 1 : 0) << '\n';
    }
  }
}

inline void write_summary_csv(std::ostream& out, const ExperimentResult& res) {
  out << "k,n,median_sse,mean_sse,se_sse,band_lo,band_hi,median_mse,mean_mse,mean_steps,acquired_fraction\n";
  for (const auto& r : summarize(res)) {
    out << r.k << ',' << r.n << ',' << format_double(r.median_sse) << ',' << format_double(r.mean_sse) << ','
        << format_double(r.se_sse) << ',' << format_double(r.mean_sse - 2.0 * r.se_sse) << ','
        << format_double(r.mean_sse + 2.0 * r.se_sse) << ',' << format_double(r.median_mse) << ','
        << format_double(r.mean_mse) << ',' << format_double(r.mean_steps) << ','
        << format_double(r.acquired_fraction) << '\n';
  }
}

inline void write_correlation_csv(std::ostream& out, const ExperimentResult& res) {
  out << "repeat,k,dof,r\n";
  for (const auto& rep : res.repeats) {
    for (const auto& row : rep.correlation) {
      out << row.repeat << ',' << row.k << ',' << row.dof << ',' << (row.r ? format_double(*row.r) : "NA") << '\n';
    }
  }
}

inline void write_failures_csv(std::ostream& out, const ExperimentResult& res) {
  out << "repeat,error\n";
  for (const auto& rep : res.repeats) {
    if (!rep.error) continue;
    std::string msg = *rep.error;
    std::string quoted = "\"";
    for (char ch : msg) quoted += ch == '"' ? std::string("\"\"") : std::string(1, ch);
    out << rep.repeat << ',' << quoted << "\"\n";
  }
}

/// One file per repeat: repeat,k,t,p0..,v0..,o0..,d0..
inline void write_trace_csv(std::ostream& out, const RepeatResult& rep, Eigen::Index d) {
  out << "repeat,k,t";
  for (const char* prefix : {"p", "v", "o", "d"}) {
    for (Eigen::Index i = 0; i < d; ++i) out << ',' << prefix << i;
  }
  out << '\n';
  for (const auto& row : rep.traces) {
    out << row.repeat << ',' << row.k << ',' << row.t;
    for (const Vector* v : {&row.position, &row.velocity, &row.oracle, &row.decoded}) {
      for (Eigen::Index i = 0; i < v->size(); ++i) out << ',' << format_double((*v)[i]);
    }
    out << '\n';
  }
}

inline void write_rates_csv(std::ostream& out, const std::vector<RegretCurve>& curves) {
  out << "algorithm,slope_logK,intercept_logK,r2_logK,regret_over_sqrtK_256,regret_over_sqrtK_last,"
         "regret_over_K_prev,regret_over_K_last\n";
  for (const auto& c : curves) {
    const RateFit f = fit_rates(c);
    out << to_string(c.rule) << ',' << format_double(f.log_fit.slope) << ',' << format_double(f.log_fit.intercept)
        << ',' << format_double(f.log_fit.r2) << ',' << format_double(f.sqrt_ratio_early) << ','
        << format_double(f.sqrt_ratio_late) << ',' << format_double(f.linear_ratio_prev) << ','
        << format_double(f.linear_ratio_last) << '\n';
  }
}

inline void write_regret_curve_csv(std::ostream& out, const std::vector<RegretCurve>& curves) {
  out << "algorithm,K,mean_regret\n";
  for (const auto& c : curves) {
    for (std::size_t i = 0; i < c.K.size(); ++i) {
      out << to_string(c.rule) << ',' << c.K[i] << ',' << format_double(c.mean_regret[i]) << '\n';
    }
  }
}

/// Writes files under a directory and deletes everything it created if the
/// export does not finish.
class OutputSession {
 public:
  explicit OutputSession(fs::path root) : root_(std::move(root)) { make_dir(root_); }

  OutputSession(const OutputSession&) = delete;
  OutputSession& operator=(const OutputSession&) = delete;

  ~OutputSession() {
    if (committed_) return;
    std::error_code ec;
    for (auto it = created_.rbegin(); it != created_.rend(); ++it) fs::remove(*it, ec);
  }

  void make_dir(const fs::path& dir) {
    std::vector<fs::path> fresh;
    for (fs::path p = dir; !p.empty() && !fs::exists(p); p = p.parent_path()) fresh.push_back(p);
    fs::create_directories(dir);
    created_.insert(created_.end(), fresh.rbegin(), fresh.rend());
  }

  template <class Writer>
  void write(const fs::path& rel, Writer&& writer) {
    const fs::path path = root_ / rel;
    make_dir(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write " + path.string());
    created_.push_back(path);
    writer(out);
    out.flush();
    if (!out) throw Error("write failed: " + path.string());
  }

  void commit() { committed_ = true; }

 private:
  fs::path root_;
  std::vector<fs::path> created_;
  bool committed_ = false;
};

inline void export_experiment(OutputSession& session, const fs::path& sub, const ExperimentResult& res,
                              bool traces) {
  session.write(sub / "metrics.csv", [&](std::ostream& o) { write_metrics_csv(o, res); });
  session.write(sub / "summary.csv", [&](std::ostream& o) { write_summary_csv(o, res); });
  if (res.config.correlation) {
    session.write(sub / "correlation.csv", [&](std::ostream& o) { write_correlation_csv(o, res); });
  }
  if (!res.all_completed()) {
    session.write(sub / "failures.csv", [&](std::ostream& o) { write_failures_csv(o, res); });
  }
  if (traces) {
    for (const auto& rep : res.repeats) {
      session.write(sub / "traces" / ("repeat_" + std::to_string(rep.repeat) + ".csv"),
                    [&](std::ostream& o) { write_trace_csv(o, rep, res.config.d_dof); });
    }
  }
}

struct ExportSummary {
  bool all_completed = true;
  int failed_repeats = 0;
};

/// Runs the configured experiment and writes its outputs under out_dir.
inline ExportSummary run_and_export(RunConfig rc, const fs::path& out_dir, bool traces) {
  rc.experiment.keep_traces = traces;
  OutputSession session(out_dir);
  session.write("manifest.txt", [&](std::ostream& o) { o << to_config_text(rc); });
  ExportSummary summary;
  auto tally = [&](const ExperimentResult& r) {
    for (const auto& rep : r.repeats) {
      if (rep.error) {
        summary.all_completed = false;
        ++summary.failed_repeats;
      }
    }
  };

  switch (rc.kind) {
    case ExperimentKind::closed_loop: {
      const ExperimentResult res = run_experiment(rc.experiment);
      export_experiment(session, "", res, traces);
      tally(res);
      break;
    }
    case ExperimentKind::mismatch_sweep: {
      const auto points = mismatch_sweep(rc.experiment, rc.sweep_fractions);
      session.write("sweep.csv", [&](std::ostream& o) {
        o << "fraction,median_final_sse,mean_final_sse,se_final_sse,all_finite\n";
        for (const auto& p : points) {
          const auto f = final_sse(p.result);
          bool finite = true;
          for (const auto& rep : p.result.repeats) {
            for (const auto& m : rep.metrics) finite = finite && std::isfinite(m.sse);
          }
          o << format_double(p.fraction) << ',' << (f.empty() ? "NA" : format_double(stats::median(f))) << ','
            << (f.empty() ? "NA" : format_double(stats::mean(f))) << ','
            << (f.size() < 2 ? "NA" : format_double(stats::standard_error(f))) << ',' << (finite ? 1 : 0) << '\n';
        }
      });
      for (const auto& p : points) {
        export_experiment(session, "noise_" + format_double(p.fraction), p.result, traces);
        tally(p.result);
      }
      break;
    }
    case ExperimentKind::regret_rates: {
      std::vector<RegretCurve> curves;
      for (RuleKind kind : rc.stream_algorithms) curves.push_back(regret_curve(rc.stream, kind, rc.experiment.base_seed));
      session.write("rates.csv", [&](std::ostream& o) { write_rates_csv(o, curves); });
      session.write("regret_curve.csv", [&](std::ostream& o) { write_regret_curve_csv(o, curves); });
      break;
    }
  }
  session.commit();
  return summary;
}

}  // namespace bcisim
