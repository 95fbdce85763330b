// SPDX-License-Identifier: Apache-2.0
#include "jerkrom/train.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "jerkrom/error.hpp"

namespace jerkrom::train {

using json = nlohmann::json;
using nets::Mat;
using nets::Vec;

// --- config -------------------------------------------------------------------

void StageConfig::validate(const std::string& prefix) const {
  if (epochs < 1) throw ConfigError("epochs must be >= 1", prefix + ".epochs");
  if (batch_size < 1) throw ConfigError("batch size must be >= 1", prefix + ".batch_size");
  if (!(lr > 0.0) || !std::isfinite(lr)) throw ConfigError("learning rate must be > 0", prefix + ".lr");
  if (!(lr_min >= 0.0) || lr_min > lr) throw ConfigError("lr_min must lie in [0, lr]", prefix + ".lr_min");
  if (!(clip_norm >= 0.0)) throw ConfigError("clip_norm must be >= 0", prefix + ".clip_norm");
  if (max_iterations < 0) throw ConfigError("max_iterations must be >= 0", prefix + ".max_iterations");
  if (!(beta1 >= 0.0 && beta1 < 1.0)) throw ConfigError("beta1 must lie in [0,1)", prefix + ".beta1");
  if (!(beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("beta2 must lie in [0,1)", prefix + ".beta2");
  if (!(eps > 0.0)) throw ConfigError("eps must be > 0", prefix + ".eps");
}

void TrainConfig::validate() const {
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw ConfigError("lambda must be >= 0", "train.lambda");
  stage1.validate("train.stage1");
  stage2.validate("train.stage2");
  if (ode_substeps < 1) throw ConfigError("ode_substeps must be >= 1", "train.ode_substeps");
  if (eval_every < 1) throw ConfigError("eval_every must be >= 1", "train.eval_every");
  if (points_per_snapshot < 0) {
    throw ConfigError("points_per_snapshot must be >= 0", "train.points_per_snapshot");
  }
}

namespace {

json stage_to_json(const StageConfig& s) {
  return json{{"epochs", s.epochs},       {"batch_size", s.batch_size},
              {"lr", s.lr},               {"lr_min", s.lr_min},
              {"schedule", s.cosine ? "cosine" : "constant"},
              {"clip_norm", s.clip_norm}, {"max_iterations", s.max_iterations},
              {"beta1", s.beta1},         {"beta2", s.beta2},
              {"eps", s.eps}};
}

template <typename V>
void read(const json& obj, const std::string& key, V& out, const std::string& prefix) {
  if (!obj.contains(key)) return;
  try {
    out = obj.at(key).get<V>();
  } catch (const json::exception& e) {
    throw ConfigError("bad value for '" + prefix + "." + key + "': " + e.what(), prefix + "." + key);
  }
}

void reject_unknown(const json& obj, const std::set<std::string>& known, const std::string& prefix) {
  if (!obj.is_object()) throw ConfigError(prefix + " must be an object", prefix);
  for (const auto& [k, _] : obj.items()) {
    if (!known.count(k)) throw ConfigError("unknown key '" + prefix + "." + k + "'", prefix + "." + k);
  }
}

StageConfig stage_from_json(const json& j, StageConfig s, const std::string& prefix) {
  reject_unknown(j, {"epochs", "batch_size", "lr", "lr_min", "schedule", "clip_norm", "max_iterations",
                     "beta1", "beta2", "eps"},
                 prefix);
  read(j, "epochs", s.epochs, prefix);
  read(j, "batch_size", s.batch_size, prefix);
  read(j, "lr", s.lr, prefix);
  read(j, "lr_min", s.lr_min, prefix);
  read(j, "clip_norm", s.clip_norm, prefix);
  read(j, "max_iterations", s.max_iterations, prefix);
  read(j, "beta1", s.beta1, prefix);
  read(j, "beta2", s.beta2, prefix);
  read(j, "eps", s.eps, prefix);
  if (j.contains("schedule")) {
    const std::string v = j.at("schedule").get<std::string>();
    if (v == "cosine") s.cosine = true;
    else if (v == "constant") s.cosine = false;
    else throw ConfigError("unknown schedule '" + v + "'", prefix + ".schedule");
  }
  return s;
}

} // namespace

std::string train_config_to_json(const TrainConfig& cfg) {
  return json{{"lambda", cfg.lambda},
              {"stage1", stage_to_json(cfg.stage1)},
              {"stage2", stage_to_json(cfg.stage2)},
              {"ode_substeps", cfg.ode_substeps},
              {"eval_every", cfg.eval_every},
              {"points_per_snapshot", cfg.points_per_snapshot},
              {"seed", cfg.seed}}
      .dump();
}

TrainConfig train_config_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("train config is not valid JSON: ") + e.what(), "train");
  }
  reject_unknown(j, {"lambda", "stage1", "stage2", "ode_substeps", "eval_every", "points_per_snapshot", "seed"},
                 "train");
  TrainConfig c;
  read(j, "lambda", c.lambda, "train");
  read(j, "ode_substeps", c.ode_substeps, "train");
  read(j, "eval_every", c.eval_every, "train");
  read(j, "points_per_snapshot", c.points_per_snapshot, "train");
  read(j, "seed", c.seed, "train");
  if (j.contains("stage1")) c.stage1 = stage_from_json(j.at("stage1"), c.stage1, "train.stage1");
  if (j.contains("stage2")) c.stage2 = stage_from_json(j.at("stage2"), c.stage2, "train.stage2");
  c.validate();
  return c;
}

// --- segments -------------------------------------------------------------------

std::vector<Segment> make_segments(const DatasetBundle& bundle, const std::vector<int>& ids) {
  const std::vector<int>& use = ids.empty() ? bundle.splits.train_ids : ids;
  const int L = bundle.splits.train_window.length();
  if (L < 4) {
    throw ConfigError("training window has " + std::to_string(L) + " snapshots; segments need at least 4",
                      "data.train_steps");
  }
  std::vector<Segment> out;
  out.reserve(use.size() * static_cast<std::size_t>(L - 3));
  for (int id : use) {
    if (id < 0 || static_cast<std::size_t>(id) >= bundle.trajectories.size()) {
      throw ShapeError("trajectory id " + std::to_string(id) + " is out of range");
    }
    for (int s = 0; s + 3 < L; ++s) out.push_back({id, s});
  }
  return out;
}

losses::SegmentBatch<float> gather_batch(const DatasetBundle& bundle, const std::vector<Segment>& segments) {
  const Eigen::Index P = static_cast<Eigen::Index>(bundle.grid.points());
  losses::SegmentBatch<float> b;
  b.fields.resize(P, static_cast<Eigen::Index>(4 * segments.size()));
  const float mean = static_cast<float>(bundle.norm.mean);
  const float inv = static_cast<float>(1.0 / bundle.norm.std);
  for (std::size_t s = 0; s < segments.size(); ++s) {
    const Trajectory& traj = bundle.trajectories[static_cast<std::size_t>(segments[s].trajectory)];
    for (int j = 0; j < 4; ++j) {
      const auto idx = static_cast<std::size_t>(bundle.splits.train_window.begin + segments[s].start + j);
      const std::vector<float>& v = traj.snapshots.at(idx).values;
      float* dst = b.fields.col(static_cast<Eigen::Index>(4 * s + j)).data();
      for (Eigen::Index p = 0; p < P; ++p) dst[p] = (v[static_cast<std::size_t>(p)] - mean) * inv;
    }
  }
  b.coords = nets::grid_coordinates(bundle.grid.ndim, bundle.grid.nx);
  return b;
}

void subsample_points(losses::SegmentBatch<float>& batch, int points, std::mt19937_64& rng) {
  const auto P = static_cast<int>(batch.fields.rows());
  if (points <= 0 || points >= P) return;
  std::vector<int> idx(static_cast<std::size_t>(P));
  for (int i = 0; i < P; ++i) idx[static_cast<std::size_t>(i)] = i;
  for (int i = 0; i < points; ++i) {
    std::uniform_int_distribution<int> pick(i, P - 1);
    std::swap(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(pick(rng))]);
  }
  std::sort(idx.begin(), idx.begin() + points);
  Eigen::MatrixXd coords(batch.coords.rows(), points);
  nets::Mat<float> targets(points, batch.fields.cols());
  for (int q = 0; q < points; ++q) {
    const int p = idx[static_cast<std::size_t>(q)];
    coords.col(q) = batch.coords.col(p);
    targets.row(q) = batch.fields.row(p);
  }
  batch.coords = std::move(coords);
  batch.targets = std::move(targets);
}

// --- optimiser --------------------------------------------------------------------

Adam::Adam(std::size_t n, const StageConfig& cfg) : cfg_(cfg), m_(n, 0.0), v_(n, 0.0) {}

void Adam::step(std::vector<float>& params, const std::vector<float>& grad, double lr) {
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grad[i];
    m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * g;
    v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * g * g;
    const double mhat = m_[i] / bc1;
    const double vhat = v_[i] / bc2;
    params[i] = static_cast<float>(params[i] - lr * mhat / (std::sqrt(vhat) + cfg_.eps));
  }
}

double scheduled_lr(const StageConfig& cfg, long it, long total) {
  if (!cfg.cosine || total <= 1) return cfg.lr;
  const double frac = static_cast<double>(it) / static_cast<double>(total - 1);
  return cfg.lr_min + 0.5 * (cfg.lr - cfg.lr_min) * (1.0 + std::cos(std::numbers::pi * frac));
}

namespace {

double sq_norm(const std::vector<float>& g) {
  double s = 0.0;
  for (float v : g) s += static_cast<double>(v) * v;
  return s;
}

void scale_inplace(std::vector<float>& g, double f) {
  for (float& v : g) v = static_cast<float>(v * f);
}

} // namespace

std::vector<std::vector<std::size_t>> epoch_batches(std::size_t items, int batch_size, std::mt19937_64& rng) {
  if (batch_size < 1) throw ConfigError("batch size must be >= 1", "batch_size");
  std::vector<std::size_t> order(items);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::vector<std::size_t>> out;
  const auto b = static_cast<std::size_t>(batch_size);
  for (std::size_t start = 0; start < items; start += b) {
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                     order.begin() + static_cast<std::ptrdiff_t>(std::min(items, start + b)));
  }
  return out;
}

namespace {

long total_iterations(const StageConfig& s, std::size_t items) {
  const long per_epoch = static_cast<long>((items + static_cast<std::size_t>(s.batch_size) - 1) /
                                           static_cast<std::size_t>(s.batch_size));
  long total = per_epoch * s.epochs;
  if (s.max_iterations > 0) total = std::min<long>(total, s.max_iterations);
  return total;
}

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(9);
  os << v;
  return os.str();
}

} // namespace

// --- history ---------------------------------------------------------------------

std::string History::to_json() const {
  json j;
  j["stage"] = stage;
  j["iterations"] = json::array();
  for (const auto& r : iterations) {
    j["iterations"].push_back({{"iteration", r.iteration}, {"epoch", r.epoch}, {"loss", r.loss},
                               {"recon", r.recon}, {"jerk", r.jerk}, {"lr", r.lr},
                               {"grad_norm", r.grad_norm}});
  }
  j["epochs"] = json::array();
  for (const auto& r : epochs) {
    j["epochs"].push_back({{"epoch", r.epoch}, {"iteration", r.iteration}, {"train_loss", r.train_loss},
                           {"train_recon", r.train_recon}, {"train_jerk", r.train_jerk},
                           {"test_loss", r.test_loss}, {"test_recon", r.test_recon},
                           {"test_jerk", r.test_jerk}});
  }
  return j.dump();
}

History History::from_json(const std::string& text) {
  History h;
  json j;
  try {
    j = json::parse(text);
    h.stage = j.at("stage").get<std::string>();
    for (const auto& r : j.at("iterations")) {
      h.iterations.push_back({r.at("iteration").get<long>(), r.at("epoch").get<int>(),
                              r.at("loss").get<double>(), r.at("recon").get<double>(),
                              r.at("jerk").get<double>(), r.at("lr").get<double>(),
                              r.at("grad_norm").get<double>()});
    }
    for (const auto& r : j.at("epochs")) {
      h.epochs.push_back({r.at("epoch").get<int>(), r.at("iteration").get<long>(),
                          r.at("train_loss").get<double>(), r.at("train_recon").get<double>(),
                          r.at("train_jerk").get<double>(), r.at("test_loss").get<double>(),
                          r.at("test_recon").get<double>(), r.at("test_jerk").get<double>()});
    }
  } catch (const json::exception& e) {
    throw CorruptionError(std::string("malformed training history: ") + e.what());
  }
  return h;
}

// --- stage I ----------------------------------------------------------------------

Stage1Eval evaluate_stage1(const ModelState<float>& model, const DatasetBundle& bundle,
                           const std::vector<int>& ids) {
  Stage1Eval ev;
  if (ids.empty()) return ev;
  const TimeWindow w = bundle.splits.train_window;
  const Eigen::MatrixXd coords = nets::grid_coordinates(bundle.grid.ndim, bundle.grid.nx);
  double sq = 0.0, count = 0.0, jerk = 0.0;
  long windows = 0;
  for (int id : ids) {
    Mat<float> fields(static_cast<Eigen::Index>(bundle.grid.points()), w.length());
    const float mean = static_cast<float>(bundle.norm.mean);
    const float inv = static_cast<float>(1.0 / bundle.norm.std);
    const Trajectory& traj = bundle.trajectories[static_cast<std::size_t>(id)];
    for (int t = 0; t < w.length(); ++t) {
      const auto& v = traj.snapshots[static_cast<std::size_t>(w.begin + t)].values;
      for (Eigen::Index p = 0; p < fields.rows(); ++p) fields(p, t) = (v[static_cast<std::size_t>(p)] - mean) * inv;
    }
    const Mat<float> z = model.encoder.forward(fields);
    const Mat<float> u = model.decoder.forward(z, coords);
    sq += (u - fields).cast<double>().squaredNorm();
    count += static_cast<double>(fields.size());
    const Eigen::MatrixXd zd = z.cast<double>();
    for (Eigen::Index t = 0; t + 3 < zd.cols(); ++t) {
      jerk += (zd.col(t + 3) - 3.0 * zd.col(t + 2) + 3.0 * zd.col(t + 1) - zd.col(t)).squaredNorm() /
              static_cast<double>(zd.rows());
      ++windows;
    }
  }
  ev.recon_mse = sq / count;
  ev.avg_jerk = windows > 0 ? jerk / static_cast<double>(windows) : 0.0;
  return ev;
}

History train_stage1(const DatasetBundle& bundle, ModelState<float>& model, const TrainConfig& cfg,
                     const Logger& log) {
  cfg.validate();
  if (model.config.encoder.nx != bundle.grid.nx || model.config.encoder.ndim != bundle.grid.ndim) {
    throw ShapeError("encoder resolution " + std::to_string(model.config.encoder.nx) +
                     " does not match dataset resolution " + std::to_string(bundle.grid.nx));
  }
  const StageConfig& sc = cfg.stage1;
  std::vector<Segment> segments = make_segments(bundle);
  const long total = total_iterations(sc, segments.size());

  History hist;
  hist.stage = "I";
  nets::ModelGrads<float> grads(model);
  Adam adam_enc(grads.encoder.size(), sc), adam_dec(grads.decoder.size(), sc);
  std::mt19937_64 rng(derive_seed(cfg.seed, 0x51a6e1));

  long it = 0;
  IterationRecord last_ok;
  for (int epoch = 0; epoch < sc.epochs && it < total; ++epoch) {
    double sum_loss = 0.0, sum_recon = 0.0, sum_jerk = 0.0;
    long n_it = 0;
    for (const auto& idx : epoch_batches(segments.size(), sc.batch_size, rng)) {
      if (it >= total) break;
      std::vector<Segment> chunk;
      for (std::size_t k : idx) chunk.push_back(segments[k]);
      auto batch = gather_batch(bundle, chunk);
      subsample_points(batch, cfg.points_per_snapshot, rng);
      grads.zero();
      const losses::LossParts parts = losses::stage1_loss(model, batch, cfg.lambda, &grads);
      const double lr = scheduled_lr(sc, it, total);
      double gnorm = std::sqrt(sq_norm(grads.encoder) + sq_norm(grads.decoder));
      if (!std::isfinite(parts.total) || !std::isfinite(gnorm)) {
        std::ostringstream os;
        os << "stage I diverged at iteration " << it << " (lambda=" << cfg.lambda << ", lr=" << lr
           << "); last finite losses: total=" << last_ok.loss << " recon=" << last_ok.recon
           << " jerk=" << last_ok.jerk;
        throw TrainingDivergedError(os.str());
      }
      if (sc.clip_norm > 0.0 && gnorm > sc.clip_norm) {
        scale_inplace(grads.encoder, sc.clip_norm / gnorm);
        scale_inplace(grads.decoder, sc.clip_norm / gnorm);
      }
      adam_enc.step(model.encoder.params().values(), grads.encoder, lr);
      adam_dec.step(model.decoder.params().values(), grads.decoder, lr);
      IterationRecord rec{it, epoch, parts.total, parts.recon, parts.jerk, lr, gnorm};
      hist.iterations.push_back(rec);
      last_ok = rec;
      sum_loss += parts.total;
      sum_recon += parts.recon;
      sum_jerk += parts.jerk;
      ++n_it;
      ++it;
      if (log) {
        log("{\"stage\":\"I\",\"iteration\":" + std::to_string(rec.iteration) +
            ",\"epoch\":" + std::to_string(epoch) + ",\"loss\":" + fmt(rec.loss) + ",\"recon\":" +
            fmt(rec.recon) + ",\"jerk\":" + fmt(rec.jerk) + ",\"lr\":" + fmt(lr) + "}");
      }
    }
    EpochRecord er;
    er.epoch = epoch;
    er.iteration = it;
    er.train_loss = sum_loss / static_cast<double>(std::max<long>(n_it, 1));
    er.train_recon = sum_recon / static_cast<double>(std::max<long>(n_it, 1));
    er.train_jerk = sum_jerk / static_cast<double>(std::max<long>(n_it, 1));
    const bool last_epoch = epoch + 1 == sc.epochs || it >= total;
    if (!bundle.splits.test_ids.empty() && ((epoch + 1) % cfg.eval_every == 0 || last_epoch)) {
      const Stage1Eval ev = evaluate_stage1(model, bundle, bundle.splits.test_ids);
      er.test_recon = ev.recon_mse;
      er.test_jerk = ev.avg_jerk;
      er.test_loss = ev.recon_mse + cfg.lambda * ev.avg_jerk;
    }
    hist.epochs.push_back(er);
    if (log) {
      log("{\"stage\":\"I\",\"epoch\":" + std::to_string(epoch) + ",\"train_loss\":" + fmt(er.train_loss) +
          ",\"test_recon\":" + fmt(er.test_recon) + ",\"test_jerk\":" + fmt(er.test_jerk) + "}");
    }
  }
  return hist;
}

// --- latents ------------------------------------------------------------------------

LatentDataset encode_dataset(const ModelState<float>& model, const DatasetBundle& bundle, bool full_window) {
  if (model.config.encoder.nx != bundle.grid.nx || model.config.encoder.ndim != bundle.grid.ndim) {
    throw ShapeError("encoder resolution " + std::to_string(model.config.encoder.nx) +
                     " does not match dataset resolution " + std::to_string(bundle.grid.nx));
  }
  LatentDataset out;
  out.train_ids = bundle.splits.train_ids;
  out.test_ids = bundle.splits.test_ids;
  out.window = full_window ? "full" : "train";
  const TimeWindow& w = bundle.splits.train_window;
  const int len = w.length() + (full_window ? bundle.splits.extrap_window.length() : 0);
  const Eigen::Index P = static_cast<Eigen::Index>(bundle.grid.points());
  const float mean = static_cast<float>(bundle.norm.mean);
  const float inv = static_cast<float>(1.0 / bundle.norm.std);
  for (std::size_t id = 0; id < bundle.trajectories.size(); ++id) {
    const Trajectory& traj = bundle.trajectories[id];
    Mat<float> fields(P, len);
    for (int t = 0; t < len; ++t) {
      const auto& v = traj.snapshots.at(static_cast<std::size_t>(w.begin + t)).values;
      for (Eigen::Index p = 0; p < P; ++p) fields(p, t) = (v[static_cast<std::size_t>(p)] - mean) * inv;
    }
    LatentTrajectory lt;
    lt.states = model.encoder.forward(fields).cast<double>();
    lt.dt = bundle.dt;
    lt.t0 = traj.snapshots.at(static_cast<std::size_t>(w.begin)).time;
    lt.source_id = static_cast<int>(id);
    out.trajectories.push_back(std::move(lt));
  }
  return out;
}

// --- stage II -----------------------------------------------------------------------

std::pair<Vec<float>, float> latent_standardization(const LatentDataset& latents) {
  std::set<int> train(latents.train_ids.begin(), latents.train_ids.end());
  Eigen::VectorXd sum;
  double n = 0.0;
  for (const auto& t : latents.trajectories) {
    if (!train.empty() && !train.count(t.source_id)) continue;
    if (sum.size() == 0) sum = Eigen::VectorXd::Zero(t.dim());
    sum += t.states.rowwise().sum();
    n += static_cast<double>(t.length());
  }
  if (n == 0.0) throw ConfigError("latent dataset has no training trajectories", "data.n_train");
  const Eigen::VectorXd mean = sum / n;
  double var = 0.0;
  for (const auto& t : latents.trajectories) {
    if (!train.empty() && !train.count(t.source_id)) continue;
    var += (t.states.colwise() - mean).squaredNorm();
  }
  var /= n * static_cast<double>(mean.size());
  const double sd = std::sqrt(var);
  // A frozen latent space still needs a positive scale.
  return {mean.cast<float>(), static_cast<float>(sd > 1e-12 ? sd : 1.0)};
}

double stage2_batch_loss(const OdeFunc<float>& f, const std::vector<const LatentTrajectory*>& batch,
                         int substeps, std::vector<float>* grad, double weight) {
  if (batch.empty()) throw ConfigError("stage II batch is empty", "train.stage2.batch_size");
  const int dz = batch.front()->dim();
  const int L = batch.front()->length();
  const double dt = batch.front()->dt;
  for (const auto* t : batch) {
    if (t->dim() != dz || t->length() != L || t->dt != dt) {
      throw ShapeError("stage II batch mixes latent trajectories of different shapes");
    }
  }
  if (L < 2) throw ConfigError("latent trajectories need at least two states", "data.train_steps");
  const auto B = static_cast<Eigen::Index>(batch.size());
  const float h = static_cast<float>(dt / substeps);
  const int steps = substeps * (L - 1);

  Mat<float> z(dz, B);
  for (Eigen::Index b = 0; b < B; ++b) z.col(b) = batch[static_cast<std::size_t>(b)]->states.col(0).cast<float>();

  std::vector<typename OdeFunc<float>::Cache> tape(grad ? static_cast<std::size_t>(4 * steps) : 0);
  auto eval = [&](const Mat<float>& x, int slot) {
    return f.forward(x, grad ? &tape[static_cast<std::size_t>(slot)] : nullptr);
  };
  std::vector<Mat<float>> residual(static_cast<std::size_t>(L));
  residual[0] = Mat<float>::Zero(dz, B);
  double loss = 0.0;
  for (int n = 0; n < steps; ++n) {
    const Mat<float> k1 = eval(z, 4 * n);
    const Mat<float> k2 = eval(z + (0.5f * h) * k1, 4 * n + 1);
    const Mat<float> k3 = eval(z + (0.5f * h) * k2, 4 * n + 2);
    const Mat<float> k4 = eval(z + h * k3, 4 * n + 3);
    z += (h / 6.0f) * (k1 + 2.0f * k2 + 2.0f * k3 + k4);
    if ((n + 1) % substeps == 0) {
      const int t = (n + 1) / substeps;
      Mat<float> r(dz, B);
      for (Eigen::Index b = 0; b < B; ++b) {
        r.col(b) = z.col(b) - batch[static_cast<std::size_t>(b)]->states.col(t).cast<float>();
      }
      if (!r.allFinite()) {
        throw SolverBlowupError("stage II integration blew up before t=" + std::to_string(t * dt),
                                (t - 1) * dt);
      }
      loss += r.cast<double>().squaredNorm();
      residual[static_cast<std::size_t>(t)] = std::move(r);
    }
  }
  loss /= static_cast<double>(B);
  if (!grad) return loss;

  // Reverse pass through the RK4 steps.
  const float g_obs = static_cast<float>(2.0 * weight / static_cast<double>(B));
  Mat<float> a = g_obs * residual[static_cast<std::size_t>(L - 1)];
  for (int n = steps - 1; n >= 0; --n) {
    const Mat<float> a4 = (h / 6.0f) * a;
    Mat<float> a3 = (h / 3.0f) * a;
    Mat<float> a2 = (h / 3.0f) * a;
    Mat<float> a1 = (h / 6.0f) * a;
    Mat<float> g = f.backward(a4, tape[static_cast<std::size_t>(4 * n + 3)], *grad);
    a += g;
    a3 += h * g;
    g = f.backward(a3, tape[static_cast<std::size_t>(4 * n + 2)], *grad);
    a += g;
    a2 += (0.5f * h) * g;
    g = f.backward(a2, tape[static_cast<std::size_t>(4 * n + 1)], *grad);
    a += g;
    a1 += (0.5f * h) * g;
    a += f.backward(a1, tape[static_cast<std::size_t>(4 * n)], *grad);
    if (n % substeps == 0 && n > 0) a += g_obs * residual[static_cast<std::size_t>(n / substeps)];
  }
  return loss;
}

History train_stage2(const LatentDataset& latents, OdeFunc<float>& f, const TrainConfig& cfg, const Logger& log) {
  cfg.validate();
  if (latents.trajectories.empty()) throw ConfigError("latent dataset is empty", "latents");
  if (latents.trajectories.front().dim() != f.config().latent_dim) {
    throw ShapeError("latent dimension mismatch: latents have d_z=" +
                     std::to_string(latents.trajectories.front().dim()) + ", ODE function expects " +
                     std::to_string(f.config().latent_dim));
  }
  std::set<int> train_set(latents.train_ids.begin(), latents.train_ids.end());
  std::set<int> test_set(latents.test_ids.begin(), latents.test_ids.end());
  std::vector<const LatentTrajectory*> train, test;
  for (const auto& t : latents.trajectories) {
    if (train_set.empty() || train_set.count(t.source_id)) train.push_back(&t);
    else if (test_set.count(t.source_id)) test.push_back(&t);
  }
  if (train.empty()) throw ConfigError("latent dataset has no training trajectories", "data.n_train");

  const auto [shift, scale] = latent_standardization(latents);
  f.set_standardization(shift, scale);
  // The objective is measured in standardised units so that the step size is
  // independent of the latent scale.
  const double weight = 1.0 / (static_cast<double>(scale) * scale);

  const StageConfig& sc = cfg.stage2;
  const long total = total_iterations(sc, train.size());
  History hist;
  hist.stage = "II";
  std::vector<float> grad(f.params().size());
  Adam adam(grad.size(), sc);
  std::mt19937_64 rng(derive_seed(cfg.seed, 0x5e2));
  long it = 0;
  double last_finite = NAN;
  for (int epoch = 0; epoch < sc.epochs && it < total; ++epoch) {
    double sum = 0.0;
    long n_it = 0;
    for (const auto& idx : epoch_batches(train.size(), sc.batch_size, rng)) {
      if (it >= total) break;
      std::vector<const LatentTrajectory*> batch;
      for (std::size_t k : idx) batch.push_back(train[k]);
      std::fill(grad.begin(), grad.end(), 0.0f);
      const double lr = scheduled_lr(sc, it, total);
      double loss;
      try {
        loss = stage2_batch_loss(f, batch, cfg.ode_substeps, &grad, weight);
      } catch (const SolverBlowupError& e) {
        std::ostringstream os;
        os << "stage II diverged at iteration " << it << " (lr=" << lr << ", last finite loss " << last_finite
           << "): " << e.what();
        throw TrainingDivergedError(os.str());
      }
      const double gnorm = std::sqrt(sq_norm(grad));
      if (!std::isfinite(loss) || !std::isfinite(gnorm)) {
        std::ostringstream os;
        os << "stage II diverged at iteration " << it << " (lr=" << lr << ", last finite loss " << last_finite << ")";
        throw TrainingDivergedError(os.str());
      }
      if (sc.clip_norm > 0.0 && gnorm > sc.clip_norm) scale_inplace(grad, sc.clip_norm / gnorm);
      adam.step(f.params().values(), grad, lr);
      hist.iterations.push_back({it, epoch, loss, loss, 0.0, lr, gnorm});
      last_finite = loss;
      sum += loss;
      ++n_it;
      ++it;
      if (log) {
        log("{\"stage\":\"II\",\"iteration\":" + std::to_string(it - 1) + ",\"epoch\":" + std::to_string(epoch) +
            ",\"loss\":" + fmt(loss) + ",\"lr\":" + fmt(lr) + "}");
      }
    }
    EpochRecord er;
    er.epoch = epoch;
    er.iteration = it;
    er.train_loss = er.train_recon = sum / static_cast<double>(std::max<long>(n_it, 1));
    const bool last_epoch = epoch + 1 == sc.epochs || it >= total;
    if (!test.empty() && ((epoch + 1) % cfg.eval_every == 0 || last_epoch)) {
      try {
        er.test_loss = stage2_batch_loss(f, test, cfg.ode_substeps);
      } catch (const SolverBlowupError&) {
        er.test_loss = INFINITY;
      }
    }
    hist.epochs.push_back(er);
    if (log) {
      log("{\"stage\":\"II\",\"epoch\":" + std::to_string(epoch) + ",\"train_loss\":" + fmt(er.train_loss) +
          ",\"test_loss\":" + fmt(er.test_loss) + "}");
    }
  }
  return hist;
}

// --- sweep ---------------------------------------------------------------------------

std::vector<SweepRow> sweep_lambda(const DatasetBundle& bundle, const ModelConfig& model_cfg,
                                   const std::vector<double>& lambdas, const TrainConfig& cfg, const Logger& log,
                                   const SweepCallback& on_trained) {
  for (double l : lambdas) {
    if (!(l >= 0.0)) throw ConfigError("sweep lambdas must be >= 0", "sweep.lambdas");
  }
  std::vector<SweepRow> rows;
  for (double l : lambdas) {
    SweepRow row;
    row.lambda = l;
    try {
      TrainConfig c = cfg;
      c.lambda = l;
      ModelState<float> model = nets::init_model<float>(model_cfg, cfg.seed);
      const History h = train_stage1(bundle, model, c, log);
      const Stage1Eval ev = evaluate_stage1(model, bundle, bundle.splits.test_ids);
      row.test_recon_mse = ev.recon_mse;
      row.test_jerk = ev.avg_jerk;
      if (on_trained) on_trained(l, model, h);
    } catch (const Error& e) {
      row.ok = false;
      row.error = e.what();
      if (log) log(std::string("{\"sweep_error\":") + json(row.error).dump() + ",\"lambda\":" + fmt(l) + "}");
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string sweep_to_csv(const std::vector<SweepRow>& rows) {
  std::ostringstream os;
  os.precision(10);
  os << "lambda,test_recon_mse,test_jerk,status\n";
  for (const auto& r : rows) {
    os << r.lambda << ',' << r.test_recon_mse << ',' << r.test_jerk << ',' << (r.ok ? "ok" : "failed") << '\n';
  }
  return os.str();
}

std::vector<SweepRow> sweep_from_csv(const std::string& text) {
  std::istringstream is(text);
  std::string line;
  std::vector<SweepRow> rows;
  if (!std::getline(is, line) || line.rfind("lambda,", 0) != 0) {
    throw CorruptionError("sweep table lacks the expected header");
  }
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string a, b, c, d;
    if (!std::getline(ls, a, ',') || !std::getline(ls, b, ',') || !std::getline(ls, c, ',') ||
        !std::getline(ls, d)) {
      throw CorruptionError("malformed sweep row: " + line);
    }
    SweepRow r;
    try {
      r.lambda = std::stod(a);
      r.test_recon_mse = std::stod(b);
      r.test_jerk = std::stod(c);
    } catch (const std::exception&) {
      throw CorruptionError("malformed sweep row: " + line);
    }
    r.ok = d == "ok";
    rows.push_back(r);
  }
  return rows;
}

} // namespace jerkrom::train
