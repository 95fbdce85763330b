// SPDX-License-Identifier: Apache-2.0
#include "commands.hpp"

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>

#include <CLI/CLI.hpp>

#include "jerkrom/datastore.hpp"
#include "jerkrom/error.hpp"
#include "jerkrom/infer.hpp"
#include "jerkrom/pdegen.hpp"
#include "jerkrom/train.hpp"
#include "plots.hpp"
#include "run_config.hpp"
#include "selftest.hpp"

namespace fs = std::filesystem;

namespace jerkrom::app {

namespace {

constexpr const char* kVersion = "0.1.0";
constexpr const char* kRunRootEnv = "JERKROM_RUN_ROOT";

struct Common {
  std::string config;
  std::vector<std::string> overrides;
  std::string run_dir;
  bool force = false;
  bool quiet = false;
};

struct CheckpointFlags {
  std::string ckpt;
  std::string expect_fingerprint;
  bool allow_mismatch = false;
};

void add_common(CLI::App* cmd, Common& c, bool with_config = true) {
  if (with_config) {
    cmd->add_option("--config", c.config, "JSON config file with data/model/train/eval sections");
    cmd->add_option("--set", c.overrides, "Override one config entry, e.g. --set train.lambda=0.05 (repeatable)")
        ->type_name("KEY=VALUE");
  }
  cmd->add_option("--run-dir", c.run_dir,
                  std::string("Directory for outputs (default: a new timestamped directory under $") + kRunRootEnv +
                      " or ./runs)");
  cmd->add_flag("--force", c.force, "Overwrite outputs that already exist in the run directory");
  cmd->add_flag("-q,--quiet", c.quiet, "Do not echo progress lines to stderr");
}

void add_checkpoint(CLI::App* cmd, CheckpointFlags& f, const std::string& help) {
  cmd->add_option("--ckpt", f.ckpt, help)->required();
  cmd->add_option("--expect-fingerprint", f.expect_fingerprint,
                  "Refuse a checkpoint whose config fingerprint differs from this value");
  cmd->add_flag("--allow-mismatch", f.allow_mismatch, "Load despite a fingerprint mismatch");
}

std::string timestamp() {
  const std::time_t now = std::time(nullptr);
  std::tm tm{};
  localtime_r(&now, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y%m%d-%H%M%S");
  return os.str();
}

fs::path make_run_dir(const Common& c, const std::string& command) {
  fs::path dir;
  if (!c.run_dir.empty()) {
    dir = c.run_dir;
  } else {
    const char* env = std::getenv(kRunRootEnv);
    const fs::path root = env && *env ? fs::path(env) : fs::path("runs");
    const std::string base = timestamp() + "-" + command;
    dir = root / base;
    for (int k = 2; fs::exists(dir); ++k) dir = root / (base + "-" + std::to_string(k));
  }
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw ConfigError("cannot create run directory " + dir.string(), dir.string());
  return dir;
}

/// Refuses to run when any output already exists, before any work starts.
void claim_outputs(const fs::path& dir, const std::vector<std::string>& names, bool force) {
  for (const auto& n : names) {
    const fs::path p = dir / n;
    if (fs::exists(p) && !force) {
      throw ConfigError(p.string() + " already exists; pass --force to overwrite it", p.string());
    }
  }
}

void spit(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  out << text;
  if (!out) throw IoError("cannot write " + p.string());
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw IoError("cannot read " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Progress sink: echoes to stderr and appends to <run>/<command>.log.
class Log {
public:
  Log(const fs::path& file, std::ostream& err, bool quiet) : file_(file, std::ios::app), err_(err), quiet_(quiet) {}
  void operator()(const std::string& line) {
    file_ << line << '\n';
    file_.flush();
    if (!quiet_) err_ << line << std::endl;
  }
  train::Logger logger() {
    return [this](const std::string& l) { (*this)(l); };
  }

private:
  std::ofstream file_;
  std::ostream& err_;
  bool quiet_;
};

/// Written last, so its presence marks a completed command.
struct Record {
  std::string command;
  std::vector<std::string> argv;
  json inputs = json::object();
  json outputs = json::array();
  json results = json::object();
  std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();

  void write(const fs::path& dir, const RunConfig* rc) const {
    json j{{"command", command},
           {"argv", argv},
           {"version", kVersion},
           {"inputs", inputs},
           {"outputs", outputs},
           {"results", results},
           {"seconds", std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count()}};
    if (rc) {
      j["config_file"] = rc->source;
      j["overrides"] = rc->overrides;
      j["config"] = rc->resolved;
      j["fingerprint"] = rc->fingerprint;
    }
    spit(dir / (command + ".json"), j.dump(2) + "\n");
  }
};

/// Base tree for a command consuming `bundle`: the data section follows the
/// dataset, and the generating config when gen-data left one beside it.
json base_for_dataset(const fs::path& data_path, const DatasetBundle& b) {
  json base = default_config_tree();
  json& d = base["data"];
  const fs::path record = data_path.parent_path() / "gen-data.json";
  if (fs::exists(record)) {
    try {
      const json r = json::parse(slurp(record));
      if (r.contains("config") && r["config"].contains("data")) d = r["config"]["data"];
    } catch (const json::exception&) {
      // An unreadable record only loses provenance; the manifest is authoritative below.
    }
  }
  d["nx"] = b.grid.nx;
  d["ndim"] = b.grid.ndim;
  if (b.grid.ndim == 1) d["source"] = "toy";
  d["trajectories"] = b.trajectories.size();
  d["n_train"] = b.splits.train_ids.size();
  d["n_test"] = b.splits.test_ids.size();
  d["burn_in"] = b.burn_in;
  d["train_steps"] = b.splits.train_window.length();
  d["extrap_steps"] = b.splits.extrap_window.length();
  d["snapshot_dt"] = b.dt;
  return base;
}

/// Base tree for a command consuming a checkpoint: the config it was trained with.
json base_for_checkpoint(const Checkpoint& c) {
  try {
    json j = json::parse(c.train_config_json);
    if (j.is_object() && j.contains("model") && j.contains("data")) return j;
  } catch (const json::exception&) {
  }
  json base = default_config_tree();
  base["model"] = json::parse(c.architecture_json);
  return base;
}

void check_dataset_matches(const RunConfig& rc, const DatasetBundle& b) {
  if (rc.data.nx != b.grid.nx) throw ConfigError("data.nx disagrees with the dataset grid", "data.nx");
  if (rc.data.ndim != b.grid.ndim) throw ConfigError("data.ndim disagrees with the dataset grid", "data.ndim");
}

void check_model_matches(const RunConfig& rc, const nets::ModelState<float>& m) {
  if (!(rc.model == m.config)) {
    throw ConfigError("the model section disagrees with the checkpoint architecture", "model");
  }
}

Checkpoint load_ckpt(const CheckpointFlags& f) {
  if (!fs::exists(f.ckpt)) throw ConfigError("checkpoint " + f.ckpt + " does not exist", f.ckpt);
  return store::load_checkpoint(f.ckpt, f.expect_fingerprint, f.allow_mismatch);
}

DatasetBundle load_data(const std::string& path) {
  if (!fs::exists(path)) throw ConfigError("dataset " + path + " does not exist", path);
  return store::load_dataset(path);
}

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(6);
  os << v;
  return os.str();
}

// --- commands ---------------------------------------------------------------

int cmd_gen_data(const Common& c, Record& rec, std::ostream& out, std::ostream& err) {
  const RunConfig rc = resolve_config(default_config_tree(), c.config, c.overrides);
  const fs::path dir = make_run_dir(c, rec.command);
  claim_outputs(dir, {"dataset"}, c.force);
  Log log(dir / "gen-data.log", err, c.quiet);
  log("generating " + std::to_string(rc.data.trajectories) + " " + rc.data.source + " trajectories of " +
      std::to_string(rc.data.snapshots()) + " snapshots on " + std::to_string(rc.data.nx) + "^" +
      std::to_string(rc.data.ndim));

  std::vector<Trajectory> trajs;
  if (rc.data.source == "ns") {
    trajs = pdegen::generate_ns_corpus(rc.data.corpus());
  } else {
    pdegen::ToyWaveParams p;
    p.dt = rc.data.snapshot_dt;
    p.snapshots = rc.data.snapshots();
    for (auto& t : pdegen::generate_toy_wave(rc.data.grid(), rc.data.trajectories, rc.data.seed, p)) {
      trajs.push_back(std::move(t.trajectory));
    }
  }
  const DatasetBundle b = pdegen::build_dataset(std::move(trajs), rc.data.grid(), rc.data.split());
  store::save_dataset(b, dir / "dataset", c.force);
  rec.outputs.push_back((dir / "dataset").string());
  rec.results = {{"norm_mean", b.norm.mean}, {"norm_std", b.norm.std}};
  rec.write(dir, &rc);
  out << (dir / "dataset").string() << '\n';
  return kOk;
}

int cmd_inspect(const std::string& path, std::ostream& out) {
  if (!fs::exists(path)) throw ConfigError(path + " does not exist", path);
  out << store::describe(path);
  return kOk;
}

int cmd_train_ae(const Common& c, const std::string& data, Record& rec, std::ostream& out, std::ostream& err) {
  const DatasetBundle b = load_data(data);
  const RunConfig rc = resolve_config(base_for_dataset(data, b), c.config, c.overrides);
  check_dataset_matches(rc, b);
  rc.train.validate();
  const fs::path dir = make_run_dir(c, rec.command);
  claim_outputs(dir, {"checkpoint-stage1", files::history_stage1}, c.force);
  rec.inputs["data"] = data;

  Log log(dir / "train-ae.log", err, c.quiet);
  auto model = nets::init_model<float>(rc.model, rc.train.seed);
  log("stage I: lambda " + fmt(rc.train.lambda) + ", " + std::to_string(model.parameter_count()) + " parameters");
  const train::History h = train::train_stage1(b, model, rc.train, log.logger());
  const auto test = train::evaluate_stage1(model, b, b.splits.test_ids);

  store::save_checkpoint(nets::to_checkpoint(model, "I", rc.fingerprint, rc.resolved.dump()), dir / "checkpoint-stage1",
                         c.force);
  spit(dir / files::history_stage1, h.to_json());
  rec.outputs = {(dir / "checkpoint-stage1").string(), (dir / files::history_stage1).string()};
  rec.results = {{"test_recon_mse", test.recon_mse}, {"test_avg_jerk", test.avg_jerk}};
  rec.write(dir, &rc);
  out << (dir / "checkpoint-stage1").string() << '\n';
  return kOk;
}

int cmd_encode(const Common& c, const std::string& data, const CheckpointFlags& f, bool full, Record& rec,
               std::ostream& out) {
  const DatasetBundle b = load_data(data);
  const Checkpoint ck = load_ckpt(f);
  const auto model = nets::model_from_checkpoint(ck);
  const RunConfig rc = resolve_config(base_for_checkpoint(ck), c.config, c.overrides);
  check_model_matches(rc, model);
  check_dataset_matches(rc, b);
  const fs::path dir = make_run_dir(c, rec.command);
  claim_outputs(dir, {"latents"}, c.force);

  LatentDataset lat = train::encode_dataset(model, b, full);
  lat.model_fingerprint = ck.config_fingerprint;
  store::save_latents(lat, dir / "latents", c.force);
  rec.inputs = {{"data", data}, {"ckpt", f.ckpt}, {"ckpt_fingerprint", ck.config_fingerprint}};
  rec.outputs = {(dir / "latents").string()};
  rec.write(dir, &rc);
  out << (dir / "latents").string() << '\n';
  return kOk;
}

int cmd_train_ode(const Common& c, const std::string& latents, const std::string& data, const CheckpointFlags& f,
                  Record& rec, std::ostream& out, std::ostream& err) {
  if (latents.empty() == data.empty()) {
    throw ConfigError("train-ode needs exactly one of --latents and --data", "--latents");
  }
  const Checkpoint ck = load_ckpt(f);
  auto model = nets::model_from_checkpoint(ck);
  const RunConfig rc = resolve_config(base_for_checkpoint(ck), c.config, c.overrides);
  check_model_matches(rc, model);
  rc.train.validate();

  LatentDataset lat;
  if (!latents.empty()) {
    if (!fs::exists(latents)) throw ConfigError("latents " + latents + " do not exist", latents);
    lat = store::load_latents(latents);
    if (lat.model_fingerprint != ck.config_fingerprint && !f.allow_mismatch) {
      throw ConfigError("latents were encoded by a model with fingerprint '" + lat.model_fingerprint +
                            "', the checkpoint has '" + ck.config_fingerprint + "' (--allow-mismatch to proceed)",
                        latents);
    }
  } else {
    const DatasetBundle b = load_data(data);
    check_dataset_matches(rc, b);
    lat = train::encode_dataset(model, b);
  }
  const fs::path dir = make_run_dir(c, rec.command);
  claim_outputs(dir, {"checkpoint-stage2", files::history_stage2}, c.force);

  Log log(dir / "train-ode.log", err, c.quiet);
  log("stage II: " + std::to_string(lat.trajectories.size()) + " latent trajectories");
  const train::History h = train::train_stage2(lat, model.odefunc, rc.train, log.logger());
  store::save_checkpoint(nets::to_checkpoint(model, "II", rc.fingerprint, rc.resolved.dump()),
                         dir / "checkpoint-stage2", c.force);
  spit(dir / files::history_stage2, h.to_json());
  rec.inputs = {{"ckpt", f.ckpt}, {"ckpt_fingerprint", ck.config_fingerprint}};
  rec.inputs[latents.empty() ? "data" : "latents"] = latents.empty() ? data : latents;
  rec.outputs = {(dir / "checkpoint-stage2").string(), (dir / files::history_stage2).string()};
  if (!h.epochs.empty()) rec.results = {{"final_train_loss", h.epochs.back().train_loss}};
  rec.write(dir, &rc);
  out << (dir / "checkpoint-stage2").string() << '\n';
  return kOk;
}

int cmd_eval(const Common& c, const std::string& data, const CheckpointFlags& f, Record& rec, std::ostream& out) {
  const DatasetBundle b = load_data(data);
  const Checkpoint ck = load_ckpt(f);
  const auto model = nets::model_from_checkpoint(ck);
  const RunConfig rc = resolve_config(base_for_checkpoint(ck), c.config, c.overrides);
  check_model_matches(rc, model);
  check_dataset_matches(rc, b);
  const fs::path dir = make_run_dir(c, rec.command);
  claim_outputs(dir, {files::eval_report, files::error_curves, files::latent_series}, c.force);

  if (ck.stage != "II") {
    throw ConfigError("eval needs a stage-II checkpoint (from train-ode); got stage " + ck.stage, f.ckpt);
  }
  const infer::EvalReport r = infer::evaluate_rollout(model, b, rc.eval.options());
  const LatentDataset lat = train::encode_dataset(model, b, true);
  spit(dir / files::eval_report, r.to_json());
  spit(dir / files::error_curves, r.curves_csv());
  spit(dir / files::latent_series, latent_series_csv(lat, b.splits.test_ids));
  rec.inputs = {{"data", data}, {"ckpt", f.ckpt}, {"ckpt_fingerprint", ck.config_fingerprint}};
  rec.outputs = {(dir / files::eval_report).string(), (dir / files::error_curves).string(),
                 (dir / files::latent_series).string()};
  rec.results = {{"interp_rmse", r.interp_rmse},   {"extrap_rmse", r.extrap_rmse},
                 {"test_recon_mse", r.test_recon_mse}, {"avg_jerk", r.avg_jerk_mean},
                 {"active_coords", r.active_coords}};
  rec.write(dir, &rc);
  out << "train-window relative RMSE " << fmt(r.interp_rmse) << "\nextrapolation relative RMSE " << fmt(r.extrap_rmse)
      << "\ntest recon MSE " << fmt(r.test_recon_mse) << "\naverage jerk " << fmt(r.avg_jerk_mean)
      << "\nactive coordinates " << r.active_coords << " of " << model.config.latent_dim() << "\nreport "
      << (dir / files::eval_report).string() << '\n';
  return kOk;
}

int cmd_predict(const Common& c, const std::string& data, const CheckpointFlags& f, const std::string& init,
                std::vector<double> times, int res, Record& rec, std::ostream& out) {
  const DatasetBundle b = load_data(data);
  const Checkpoint ck = load_ckpt(f);
  const auto model = nets::model_from_checkpoint(ck);
  const RunConfig rc = resolve_config(base_for_checkpoint(ck), c.config, c.overrides);
  check_model_matches(rc, model);
  check_dataset_matches(rc, b);
  if (!fs::exists(init)) throw ConfigError("initial field " + init + " does not exist", init);
  if (res <= 0) res = b.grid.nx;
  const auto u0 = store::read_raw_field(init, b.grid.points());
  const fs::path dir = make_run_dir(c, rec.command);
  claim_outputs(dir, {"forecast"}, c.force);

  const auto query = infer::QuerySpec::on_grid(b.grid.ndim, res, times);
  const infer::Forecast fc = infer::predict(model, b.norm, u0, query, rc.eval.integrator, b.dt);
  if (fs::exists(dir / "forecast")) fs::remove_all(dir / "forecast");
  fs::create_directories(dir / "forecast");
  json files_out = json::array();
  for (std::size_t t = 0; t < fc.times.size(); ++t) {
    char name[32];
    std::snprintf(name, sizeof name, "field-%03zu.bin", t);
    store::write_raw_field(dir / "forecast" / name, fc.fields[t]);
    files_out.push_back(name);
  }
  json lat = json::array();
  for (Eigen::Index t = 0; t < fc.latents.cols(); ++t) {
    lat.push_back(std::vector<double>(fc.latents.col(t).data(), fc.latents.col(t).data() + fc.latents.rows()));
  }
  spit(dir / "forecast" / "forecast.json",
       json{{"times", fc.times}, {"resolution", res}, {"ndim", b.grid.ndim}, {"dtype", "float32"},
            {"byte_order", "little"}, {"fields", files_out}, {"latents", lat},
            {"ckpt_fingerprint", ck.config_fingerprint}}
               .dump(2));
  rec.inputs = {{"data", data}, {"ckpt", f.ckpt}, {"init", init}, {"ckpt_fingerprint", ck.config_fingerprint}};
  rec.outputs = {(dir / "forecast").string()};
  rec.write(dir, &rc);
  out << (dir / "forecast").string() << '\n';
  return kOk;
}

int cmd_sweep(const Common& c, const std::string& data, const std::vector<double>& lambdas, Record& rec,
              std::ostream& out, std::ostream& err) {
  const DatasetBundle b = load_data(data);
  const RunConfig rc = resolve_config(base_for_dataset(data, b), c.config, c.overrides);
  check_dataset_matches(rc, b);
  const fs::path dir = make_run_dir(c, rec.command);
  claim_outputs(dir, {files::sweep}, c.force);
  Log log(dir / "sweep-lambda.log", err, c.quiet);

  const auto rows = train::sweep_lambda(b, rc.model, lambdas, rc.train, log.logger(),
                                        [&](double lambda, const nets::ModelState<float>&, const train::History& h) {
                                          spit(dir / ("history-lambda-" + fmt(lambda) + ".json"), h.to_json());
                                        });
  spit(dir / files::sweep, train::sweep_to_csv(rows));
  rec.inputs = {{"data", data}};
  rec.outputs = {(dir / files::sweep).string()};
  rec.results = json::parse(json(lambdas).dump());
  rec.write(dir, &rc);
  out << train::sweep_to_csv(rows);
  for (const auto& r : rows) {
    if (!r.ok) return kFailure;
  }
  return kOk;
}

int cmd_plot(const std::string& run_dir, std::string out_dir, bool force, Record& rec, std::ostream& out,
             std::ostream& err) {
  if (!fs::is_directory(run_dir)) throw ConfigError(run_dir + " is not a directory", run_dir);
  if (out_dir.empty()) out_dir = (fs::path(run_dir) / "plots").string();
  const PlotExport p = export_plots(run_dir, out_dir, force);
  for (const auto& m : p.missing) err << "missing input (skipped): " << m << '\n';
  for (const auto& w : p.written) {
    rec.outputs.push_back(w.string());
    out << w.string() << '\n';
  }
  rec.inputs["run_dir"] = run_dir;
  rec.results["missing"] = p.missing;
  rec.write(out_dir, nullptr);
  return kOk;
}

int cmd_selftest(std::ostream& out) {
  bool ok = true;
  double total = 0.0;
  run_selftest([&](const CheckResult& r) {
    ok = ok && r.passed;
    total += r.seconds;
    out << (r.passed ? "PASS " : "FAIL ") << r.name << " (" << std::fixed << std::setprecision(2) << r.seconds
        << " s): " << r.detail << std::endl;
    out.unsetf(std::ios::floatfield);
  });
  out << (ok ? "selftest passed" : "selftest FAILED") << " in " << std::fixed << std::setprecision(1) << total
      << " s\n";
  return ok ? kOk : kFailure;
}

} // namespace

int run(int argc, char** argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"jerkrom: jerk-regularised reduced-order models of 2D turbulence"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);
  app.footer(std::string("Environment:\n  ") + kRunRootEnv +
             "  default parent of run directories (./runs when unset)\n\nExit codes: 0 success, 1 runtime "
             "failure, 2 usage error, 3 invalid configuration or input");

  Common common;
  CheckpointFlags ck;
  std::string data, latents, init, path, out_dir;
  std::vector<double> times{0.0}, lambdas{0.0, 0.05, 0.1, 0.2, 0.5};
  int res = 0;
  bool full_window = false;

  auto* gen = app.add_subcommand("gen-data", "Simulate a corpus and store it as a dataset with splits and normalisation");
  add_common(gen, common);

  auto* inspect = app.add_subcommand("inspect", "Print shapes, splits and statistics of a dataset, checkpoint or latents");
  inspect->add_option("path", path, "Container directory")->required();

  auto* tae = app.add_subcommand("train-ae", "Stage I: train encoder and decoder with the jerk penalty");
  tae->add_option("--data", data, "Dataset directory")->required();
  add_common(tae, common);

  auto* enc = app.add_subcommand("encode", "Encode every trajectory of a dataset into latent time series");
  enc->add_option("--data", data, "Dataset directory")->required();
  add_checkpoint(enc, ck, "Stage-I or stage-II checkpoint");
  enc->add_flag("--full-window", full_window, "Encode training and extrapolation windows");
  add_common(enc, common);

  auto* tode = app.add_subcommand("train-ode", "Stage II: fit the latent vector field");
  add_checkpoint(tode, ck, "Stage-I checkpoint supplying encoder and decoder");
  tode->add_option("--latents", latents, "Latents from `encode`");
  tode->add_option("--data", data, "Dataset to encode instead of --latents");
  add_common(tode, common);

  auto* pred = app.add_subcommand("predict", "Forecast from one initial field at arbitrary times and resolution");
  add_checkpoint(pred, ck, "Stage-II checkpoint");
  pred->add_option("--data", data, "Dataset supplying grid, time step and normalisation")->required();
  pred->add_option("--init", init, "Initial field: raw little-endian float32, nx^ndim values")->required();
  pred->add_option("--times", times, "Comma-separated query times from the initial field")->delimiter(',');
  pred->add_option("--res", res, "Output points per axis (default: dataset resolution)");
  add_common(pred, common);

  auto* ev = app.add_subcommand("eval", "Roll out the test split and report errors and latent statistics");
  ev->add_option("--data", data, "Dataset directory")->required();
  add_checkpoint(ev, ck, "Stage-II checkpoint");
  add_common(ev, common);

  auto* sweep = app.add_subcommand("sweep-lambda", "Stage I once per jerk weight from identical initial weights");
  sweep->add_option("--data", data, "Dataset directory")->required();
  sweep->add_option("--lambdas", lambdas, "Comma-separated jerk weights")->delimiter(',');
  add_common(sweep, common);

  auto* plot = app.add_subcommand("plot", "Export SVG figures and CSV tables from a run directory");
  plot->add_option("run_dir", path, "Directory holding eval, latent, history and sweep outputs")->required();
  plot->add_option("--out", out_dir, "Output directory (default: <run_dir>/plots)");
  plot->add_flag("--force", common.force, "Overwrite existing figures");

  auto* self = app.add_subcommand("selftest", "Run the analytic-oracle suite");

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return kUsage;
  }

  Record rec;
  rec.argv.assign(argv, argv + argc);
  try {
    // A bad config file is reported before any input is touched.
    if (!common.config.empty()) read_config_file(common.config);
    if (*gen) return rec.command = "gen-data", cmd_gen_data(common, rec, out, err);
    if (*inspect) return cmd_inspect(path, out);
    if (*tae) return rec.command = "train-ae", cmd_train_ae(common, data, rec, out, err);
    if (*enc) return rec.command = "encode", cmd_encode(common, data, ck, full_window, rec, out);
    if (*tode) return rec.command = "train-ode", cmd_train_ode(common, latents, data, ck, rec, out, err);
    if (*pred) return rec.command = "predict", cmd_predict(common, data, ck, init, times, res, rec, out);
    if (*ev) return rec.command = "eval", cmd_eval(common, data, ck, rec, out);
    if (*sweep) return rec.command = "sweep-lambda", cmd_sweep(common, data, lambdas, rec, out, err);
    if (*plot) return rec.command = "plot", cmd_plot(path, out_dir, common.force, rec, out, err);
    if (*self) return cmd_selftest(out);
  } catch (const ConfigError& e) {
    err << "error: " << e.what();
    if (!e.key().empty()) err << " [" << e.key() << "]";
    err << '\n';
    return kValidation;
  } catch (const ShapeError& e) {
    err << "error: " << e.what() << '\n';
    return kValidation;
  } catch (const IoError& e) {
    err << "error: " << e.what() << '\n';
    return kValidation;
  } catch (const CorruptionError& e) {
    err << "error: " << e.what() << '\n';
    return kValidation;
  } catch (const VersionError& e) {
    err << "error: " << e.what() << '\n';
    return kValidation;
  } catch (const json::exception& e) {
    err << "error: " << e.what() << '\n';
    return kValidation;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kFailure;
  }
  return kUsage;
}

} // namespace jerkrom::app
