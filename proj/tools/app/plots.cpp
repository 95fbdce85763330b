// SPDX-License-Identifier: Apache-2.0
#include "plots.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>

#include "jerkrom/error.hpp"
#include "jerkrom/infer.hpp"
#include "jerkrom/train.hpp"

namespace fs = std::filesystem;

namespace jerkrom::app {

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw IoError("cannot read " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string num(double v) {
  std::ostringstream os;
  os.precision(4);
  os << v;
  return os.str();
}

const char* const kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd",
                                "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};

struct Series {
  std::string name;
  std::vector<double> x, y;
  bool dashed = false;
};

struct Band {
  double x0, x1;
  std::string label, color;
};

/// Minimal SVG line chart. Non-finite and (for log axes) non-positive points are skipped.
class Chart {
public:
  Chart(std::string title, std::string xlabel, std::string ylabel, bool logy = false)
      : title_(std::move(title)), xlabel_(std::move(xlabel)), ylabel_(std::move(ylabel)), logy_(logy) {}

  void add(Series s) { series_.push_back(std::move(s)); }
  void band(Band b) { bands_.push_back(std::move(b)); }
  void note(std::string text) { notes_.push_back(std::move(text)); }
  void marker(double x, double y, std::string label) { markers_.push_back({x, y, std::move(label)}); }

  std::string svg() const {
    double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
    for (const auto& s : series_) {
      for (std::size_t i = 0; i < s.x.size(); ++i) {
        if (!usable(s.y[i]) || !std::isfinite(s.x[i])) continue;
        x0 = std::min(x0, s.x[i]);
        x1 = std::max(x1, s.x[i]);
        y0 = std::min(y0, ty(s.y[i]));
        y1 = std::max(y1, ty(s.y[i]));
      }
    }
    for (const auto& b : bands_) {
      x0 = std::min(x0, b.x0);
      x1 = std::max(x1, b.x1);
    }
    if (!(x1 > x0)) x1 = x0 + 1.0;
    if (!(y1 > y0)) {
      y0 = std::isfinite(y0) ? y0 - 0.5 : 0.0;
      y1 = y0 + 1.0;
    }
    const double pad = 0.05 * (y1 - y0);
    y0 -= pad;
    y1 += pad;

    const double L = 80, R = 620, T = 40, B = 360;
    auto px = [&](double x) { return L + (x - x0) / (x1 - x0) * (R - L); };
    auto py = [&](double y) { return B - (ty(y) - y0) / (y1 - y0) * (B - T); };
    auto pyt = [&](double t) { return B - (t - y0) / (y1 - y0) * (B - T); };

    std::ostringstream o;
    o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"760\" height=\"420\" font-family=\"sans-serif\" "
         "font-size=\"12\">\n<rect width=\"760\" height=\"420\" fill=\"white\"/>\n";
    o << "<text x=\"" << (L + R) / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" << title_ << "</text>\n";
    for (const auto& b : bands_) {
      o << "<rect x=\"" << px(b.x0) << "\" y=\"" << T << "\" width=\"" << px(b.x1) - px(b.x0) << "\" height=\""
        << B - T << "\" fill=\"" << b.color << "\" fill-opacity=\"0.15\"/>\n";
      o << "<text x=\"" << (px(b.x0) + px(b.x1)) / 2 << "\" y=\"" << T + 14
        << "\" text-anchor=\"middle\" fill=\"#444\">" << b.label << "</text>\n";
    }
    o << "<rect x=\"" << L << "\" y=\"" << T << "\" width=\"" << R - L << "\" height=\"" << B - T
      << "\" fill=\"none\" stroke=\"black\"/>\n";
    for (int k = 0; k <= 4; ++k) {
      const double xv = x0 + (x1 - x0) * k / 4.0, yt = y0 + (y1 - y0) * k / 4.0;
      o << "<text x=\"" << px(xv) << "\" y=\"" << B + 16 << "\" text-anchor=\"middle\">" << tick(xv) << "</text>\n";
      o << "<text x=\"" << L - 6 << "\" y=\"" << pyt(yt) + 4 << "\" text-anchor=\"end\">"
        << tick(logy_ ? std::pow(10.0, yt) : yt) << "</text>\n";
    }
    o << "<text x=\"" << (L + R) / 2 << "\" y=\"" << B + 34 << "\" text-anchor=\"middle\">" << xlabel_ << "</text>\n";
    o << "<text transform=\"translate(18," << (T + B) / 2 << ") rotate(-90)\" text-anchor=\"middle\">" << ylabel_
      << (logy_ ? " (log scale)" : "") << "</text>\n";

    for (std::size_t k = 0; k < series_.size(); ++k) {
      const auto& s = series_[k];
      const char* color = kPalette[k % std::size(kPalette)];
      o << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\""
        << (s.dashed ? " stroke-dasharray=\"5,3\"" : "") << " points=\"";
      for (std::size_t i = 0; i < s.x.size(); ++i) {
        if (usable(s.y[i]) && std::isfinite(s.x[i])) o << px(s.x[i]) << ',' << py(s.y[i]) << ' ';
      }
      o << "\"/>\n";
      o << "<line x1=\"" << R + 10 << "\" y1=\"" << T + 10 + 16 * k << "\" x2=\"" << R + 30 << "\" y2=\""
        << T + 10 + 16 * k << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
      o << "<text x=\"" << R + 34 << "\" y=\"" << T + 14 + 16 * k << "\">" << s.name << "</text>\n";
    }
    for (const auto& m : markers_) {
      if (!usable(m.y)) continue;
      o << "<circle cx=\"" << px(m.x) << "\" cy=\"" << py(m.y) << "\" r=\"6\" fill=\"none\" stroke=\"black\" "
           "stroke-width=\"2\"/>\n<text x=\""
        << px(m.x) + 8 << "\" y=\"" << py(m.y) - 8 << "\">" << m.label << "</text>\n";
    }
    for (std::size_t k = 0; k < notes_.size(); ++k) {
      o << "<text x=\"" << L + 8 << "\" y=\"" << B - 10 - 16 * (notes_.size() - 1 - k) << "\">" << notes_[k]
        << "</text>\n";
    }
    o << "</svg>\n";
    return o.str();
  }

private:
  struct Marker {
    double x, y;
    std::string label;
  };
  bool usable(double y) const { return std::isfinite(y) && (!logy_ || y > 0.0); }
  double ty(double y) const { return logy_ ? std::log10(y) : y; }
  static std::string tick(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3g", v);
    return buf;
  }

  std::string title_, xlabel_, ylabel_;
  bool logy_;
  std::vector<Series> series_;
  std::vector<Band> bands_;
  std::vector<Marker> markers_;
  std::vector<std::string> notes_;
};

class Writer {
public:
  Writer(fs::path dir, bool overwrite) : dir_(std::move(dir)), overwrite_(overwrite) {}

  void put(const std::string& name, const std::string& content) {
    const fs::path p = dir_ / name;
    if (fs::exists(p) && !overwrite_) throw IoError(p.string() + " exists (use --force to overwrite)");
    std::ofstream out(p, std::ios::binary);
    out << content;
    if (!out) throw IoError("cannot write " + p.string());
    written.push_back(p);
  }

  std::vector<fs::path> written;

private:
  fs::path dir_;
  bool overwrite_;
};

std::vector<std::string> split(const std::string& line, char sep = ',') {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, sep)) out.push_back(cell);
  return out;
}

double parse_double(const std::string& s, const fs::path& file) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw CorruptionError(file.string() + ": '" + s + "' is not a number");
  }
}

void error_curve(const fs::path& in, Writer& w) {
  const auto r = infer::EvalReport::from_json(slurp(in));
  Chart c("Relative RMSE of rollouts on the test split", "time", "relative RMSE");
  Series mean{"mean", r.times, r.rmse_mean};
  for (std::size_t k = 0; k < r.rmse.size() && k < 5; ++k) {
    c.add({"traj " + std::to_string(r.test_ids[k]), r.times, r.rmse[k], true});
  }
  c.add(mean);
  const double dt = r.times.size() > 1 ? r.times[1] - r.times[0] : 1.0;
  if (r.train_steps > 0) c.band({r.times.front(), r.times.front() + (r.train_steps - 1) * dt, "train window", "#1f77b4"});
  if (r.extrap_steps > 0) {
    c.band({r.times.front() + (r.train_steps - 1) * dt, r.times.back(), "extrapolation", "#d62728"});
  }
  c.note("mean relative RMSE: train window " + num(r.interp_rmse) + ", extrapolation " + num(r.extrap_rmse));
  w.put("error-curve.svg", c.svg());
  w.put("error-curve.csv", r.curves_csv());
}

void latent_plot(const fs::path& in, Writer& w) {
  std::istringstream is(slurp(in));
  std::string line;
  if (!std::getline(is, line) || line.rfind("trajectory,time,", 0) != 0) {
    throw CorruptionError(in.string() + " lacks the expected header");
  }
  const std::size_t dz = split(line).size() - 2;
  std::map<int, std::pair<std::vector<double>, std::vector<std::vector<double>>>> by_traj;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto cells = split(line);
    if (cells.size() != dz + 2) throw CorruptionError(in.string() + ": ragged row");
    auto& [t, z] = by_traj[static_cast<int>(parse_double(cells[0], in))];
    t.push_back(parse_double(cells[1], in));
    z.resize(dz);
    for (std::size_t d = 0; d < dz; ++d) z[d].push_back(parse_double(cells[d + 2], in));
  }
  if (by_traj.empty()) throw CorruptionError(in.string() + " holds no states");

  std::ostringstream table;
  table.precision(10);
  table << "trajectory,length,average_jerk\n";
  for (const auto& [id, tz] : by_traj) {
    const auto& [t, z] = tz;
    double jerk = std::numeric_limits<double>::quiet_NaN();
    if (t.size() >= 4) {
      Eigen::MatrixXd states(static_cast<Eigen::Index>(dz), static_cast<Eigen::Index>(t.size()));
      for (std::size_t d = 0; d < dz; ++d) {
        for (std::size_t j = 0; j < t.size(); ++j) states(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(j)) = z[d][j];
      }
      jerk = infer::average_jerk(states);
    }
    table << id << ',' << t.size() << ',' << jerk << '\n';
  }

  const auto& [id0, tz0] = *by_traj.begin();
  Chart c("Latent coordinates of trajectory " + std::to_string(id0), "time", "z");
  for (std::size_t d = 0; d < dz; ++d) c.add({"z" + std::to_string(d), tz0.first, tz0.second[d]});
  std::istringstream rows(table.str());
  std::getline(rows, line);
  std::getline(rows, line);
  c.note("average jerk " + split(line).back());
  w.put("latent-series.svg", c.svg());
  w.put("latent-jerk.csv", table.str());
}

void loss_plot(const fs::path& in1, const fs::path& in2, Writer& w) {
  std::ostringstream table;
  table.precision(10);
  table << "stage,epoch,iteration,train_loss,train_recon,train_jerk,test_loss,test_recon,test_jerk\n";
  Chart c("Training history", "epoch", "loss", true);
  for (const fs::path& in : {in1, in2}) {
    if (!fs::exists(in)) continue;
    const auto h = train::History::from_json(slurp(in));
    Series tr{"stage " + h.stage + " train", {}, {}}, te{"stage " + h.stage + " test", {}, {}, true};
    for (const auto& e : h.epochs) {
      table << h.stage << ',' << e.epoch << ',' << e.iteration << ',' << e.train_loss << ',' << e.train_recon << ','
            << e.train_jerk << ',' << e.test_loss << ',' << e.test_recon << ',' << e.test_jerk << '\n';
      tr.x.push_back(e.epoch);
      tr.y.push_back(e.train_loss);
      const double test = h.stage == "I" ? e.test_recon : e.test_loss;
      if (test >= 0.0) {
        te.x.push_back(e.epoch);
        te.y.push_back(test);
      }
    }
    if (h.stage == "I") tr.name = "stage I train (recon + lambda jerk)", te.name = "stage I test recon";
    c.add(tr);
    if (!te.x.empty()) c.add(te);
  }
  w.put("loss-history.svg", c.svg());
  w.put("loss-history.csv", table.str());
}

void sweep_plot(const fs::path& in, Writer& w) {
  const auto rows = train::sweep_from_csv(slurp(in));
  Series mse{"test recon MSE", {}, {}}, jerk{"test average jerk", {}, {}, true};
  std::ostringstream table;
  table.precision(10);
  table << "lambda,test_recon_mse,test_jerk,status,is_min\n";
  double best = std::numeric_limits<double>::infinity(), best_l = 0.0;
  for (const auto& r : rows) {
    if (r.ok && r.test_recon_mse < best) best = r.test_recon_mse, best_l = r.lambda;
  }
  for (const auto& r : rows) {
    table << r.lambda << ',' << r.test_recon_mse << ',' << r.test_jerk << ',' << (r.ok ? "ok" : "failed") << ','
          << (r.ok && r.lambda == best_l && r.test_recon_mse == best ? 1 : 0) << '\n';
    if (!r.ok) continue;
    mse.x.push_back(r.lambda);
    mse.y.push_back(r.test_recon_mse);
    jerk.x.push_back(r.lambda);
    jerk.y.push_back(r.test_jerk);
  }
  Chart c("Jerk weight sweep", "lambda", "value", true);
  c.add(mse);
  c.add(jerk);
  if (std::isfinite(best)) c.marker(best_l, best, "min MSE at lambda=" + num(best_l));
  w.put("lambda-sweep.svg", c.svg());
  w.put("lambda-sweep.csv", table.str());
}

} // namespace

std::string latent_series_csv(const LatentDataset& latents, const std::vector<int>& source_ids) {
  std::ostringstream os;
  os.precision(17);
  const int dz = latents.trajectories.empty() ? 0 : latents.trajectories.front().dim();
  os << "trajectory,time";
  for (int d = 0; d < dz; ++d) os << ",z" << d;
  os << '\n';
  for (int id : source_ids) {
    for (const auto& t : latents.trajectories) {
      if (t.source_id != id) continue;
      for (int j = 0; j < t.length(); ++j) {
        os << id << ',' << t.t0 + j * t.dt;
        for (int d = 0; d < dz; ++d) os << ',' << t.states(d, j);
        os << '\n';
      }
    }
  }
  return os.str();
}

PlotExport export_plots(const fs::path& run_dir, const fs::path& out_dir, bool overwrite) {
  if (!fs::is_directory(run_dir)) throw IoError(run_dir.string() + " is not a directory");
  const fs::path eval = run_dir / files::eval_report, lat = run_dir / files::latent_series,
                 hist = run_dir / files::history_stage1, sweep = run_dir / files::sweep;
  PlotExport out;
  for (const fs::path& p : {eval, lat, hist, sweep}) {
    if (!fs::exists(p)) out.missing.push_back(p.string());
  }
  if (out.missing.size() == 4) {
    std::string msg = "no plot inputs in " + run_dir.string() + "; expected:";
    for (const auto& m : out.missing) msg += "\n  " + m;
    throw IoError(msg);
  }
  fs::create_directories(out_dir);
  Writer w(out_dir, overwrite);
  if (fs::exists(eval)) error_curve(eval, w);
  if (fs::exists(lat)) latent_plot(lat, w);
  if (fs::exists(hist)) loss_plot(hist, run_dir / files::history_stage2, w);
  if (fs::exists(sweep)) sweep_plot(sweep, w);
  out.written = std::move(w.written);
  return out;
}

} // namespace jerkrom::app
