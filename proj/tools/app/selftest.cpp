// SPDX-License-Identifier: Apache-2.0
#include "selftest.hpp"

#include <chrono>
#include <cmath>
#include <complex>
#include <cstdio>
#include <numbers>
#include <random>

#include "jerkrom/gradcheck.hpp"
#include "jerkrom/integrate.hpp"
#include "jerkrom/losses.hpp"
#include "jerkrom/pdegen.hpp"

namespace jerkrom::app {

namespace {

constexpr double kPi = std::numbers::pi;

std::string fmt(const char* f, double a, double b = 0.0, double c = 0.0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c);
  return buf;
}

template <typename Fn>
CheckResult timed(const std::string& name, Fn&& body) {
  CheckResult r;
  r.name = name;
  const auto t0 = std::chrono::steady_clock::now();
  try {
    body(r);
  } catch (const std::exception& e) {
    r.passed = false;
    r.detail = std::string("exception: ") + e.what();
  }
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

nets::ModelConfig gradcheck_config() {
  nets::ModelConfig c;
  c.encoder.nx = 8;
  c.encoder.stem_width = 2;
  c.encoder.widths = {2, 4};
  c.encoder.blocks = {1, 1};
  c.decoder.hidden_layers = 2;
  c.decoder.width = 6;
  c.odefunc.hidden_layers = 2;
  c.odefunc.width = 6;
  c.encoder.latent_dim = c.decoder.latent_dim = c.odefunc.latent_dim = 3;
  return c;
}

losses::SegmentBatch<double> random_batch(int nx, int segments, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n;
  losses::SegmentBatch<double> b;
  b.fields.resize(nx * nx, 4 * segments);
  for (Eigen::Index i = 0; i < b.fields.size(); ++i) b.fields.data()[i] = n(rng);
  b.coords = nets::grid_coordinates(2, nx);
  return b;
}

} // namespace

CheckResult check_jerk_identities() {
  return timed("jerk identities", [](CheckResult& r) {
    nets::Mat<double> constant(2, 8), quadratic(2, 8), cubic(1, 4);
    for (int s = 0; s < 2; ++s) {
      for (int j = 0; j < 4; ++j) {
        const double t = s + j;
        constant.col(4 * s + j) << 1.5, -0.25;
        quadratic.col(4 * s + j) << 0.3 - 1.1 * t + 0.7 * t * t, 2.0 * t * t;
      }
    }
    cubic << 0.0, 1.0, 8.0, 27.0;
    const double jc = losses::jerk_from_latents(constant);
    const double jq = losses::jerk_from_latents(quadratic);
    const double j3 = losses::jerk_from_latents(cubic);
    r.passed = std::abs(jc) < 1e-12 && std::abs(jq) < 1e-12 && std::abs(j3 - 36.0) <= 1e-9;
    r.detail = fmt("constant %.3g, quadratic %.3g, cubic %.12g", jc, jq, j3);
  });
}

CheckResult check_gradients() {
  return timed("gradient check", [](CheckResult& r) {
    auto model = nets::init_model<double>(gradcheck_config(), 1);
    nets::jitter_biases(model, 1);
    nets::GradCheckOptions opts;
    opts.samples_per_block = 1 << 20;  // every entry

    const auto batch = random_batch(8, 2, 2);
    auto partial = batch;
    std::vector<Eigen::Index> keep{0, 5, 9, 17, 33, 40, 63};
    partial.coords.resize(2, static_cast<Eigen::Index>(keep.size()));
    partial.targets.resize(static_cast<Eigen::Index>(keep.size()), batch.fields.cols());
    for (std::size_t k = 0; k < keep.size(); ++k) {
      partial.coords.col(static_cast<Eigen::Index>(k)) = batch.coords.col(keep[k]);
      partial.targets.row(static_cast<Eigen::Index>(k)) = batch.fields.row(keep[k]);
    }

    const auto recon = nets::check_gradients(model, [&](const nets::ModelState<double>& s, nets::ModelGrads<double>* g) {
      return losses::stage1_loss(s, batch, 0.0, g).total;
    }, opts);
    const auto jerk = nets::check_gradients(model, [&](const nets::ModelState<double>& s, nets::ModelGrads<double>* g) {
      nets::Encoder<double>::Cache cache;
      const nets::Mat<double> z = s.encoder.forward(batch.fields, g ? &cache : nullptr);
      nets::Mat<double> dz;
      const double v = losses::jerk_from_latents(z, g ? &dz : nullptr);
      if (g) s.encoder.backward(dz, cache, g->encoder);
      return v;
    }, opts);
    const auto total = nets::check_gradients(model, [&](const nets::ModelState<double>& s, nets::ModelGrads<double>* g) {
      return losses::stage1_loss(s, partial, 0.3, g).total;
    }, opts);

    r.passed = recon.passed() && jerk.passed() && total.passed() && model.parameter_count() <= 10000;
    r.detail = fmt("%.0f parameters; max relative error recon %.2e, jerk %.2e", double(model.parameter_count()),
                   recon.max_rel_error, jerk.max_rel_error) +
               fmt(", stage-I %.2e", total.max_rel_error);
  });
}

CheckResult check_integrator() {
  return timed("RK4 integrator", [](CheckResult& r) {
    const ode::Rhs decay = [](const Eigen::VectorXd& z, Eigen::VectorXd& dz) { dz = -z; };
    const ode::Rhs rotation = [](const Eigen::VectorXd& z, Eigen::VectorXd& dz) {
      dz.resize(2);
      dz << -z(1), z(0);
    };
    auto spec = [](double h) {
      ode::IntegratorSpec s;
      s.max_substep = h;
      return s;
    };
    const Eigen::VectorXd one = Eigen::VectorXd::Ones(1);
    const Eigen::VectorXd e1 = Eigen::Vector2d(1.0, 0.0);

    const double exp_err = std::abs(ode::integrate(decay, one, 0.0, {1.0}, spec(1e-2))(0, 0) - std::exp(-1.0));
    const Eigen::MatrixXd rot = ode::integrate(rotation, e1, 0.0, {kPi / 2}, spec(1e-2));
    const double rot_err = std::max(std::abs(rot(0, 0)), std::abs(rot(1, 0) - 1.0));

    auto err = [&](double h) { return std::abs(ode::integrate(decay, one, 0.0, {2.0}, spec(h))(0, 0) - std::exp(-2.0)); };
    const double order = err(0.2) / err(0.1);

    const Eigen::MatrixXd once = ode::integrate(rotation, e1, 0.0, {1.6}, spec(0.05));
    const Eigen::MatrixXd half = ode::integrate(rotation, e1, 0.0, {0.8}, spec(0.05));
    const Eigen::MatrixXd rest = ode::integrate(rotation, half.col(0), 0.8, {1.6}, spec(0.05));
    const double split = (once - rest).cwiseAbs().maxCoeff();

    r.passed = exp_err < 1e-6 && rot_err < 1e-6 && order >= 12.0 && split < 1e-9;
    r.detail = fmt("exp error %.2e, rotation error %.2e, ", exp_err, rot_err) +
               fmt("halving factor %.2f, restart gap %.2e", order, split);
  });
}

CheckResult check_taylor_green() {
  return timed("Taylor-Green decay", [](CheckResult& r) {
    const int n = 64;
    pdegen::NSParams p;
    p.viscosity = 1e-3;
    p.forcing_amplitude = 0.0;
    p.sim_dt = 1e-2;
    p.snapshot_dt = 1.0;
    p.snapshots = 2;
    FieldSnapshot w0;
    w0.values.resize(static_cast<std::size_t>(n) * n);
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < n; ++j) {
        w0.values[static_cast<std::size_t>(i) * n + j] =
            static_cast<float>(std::sin(2 * kPi * i / n) * std::sin(2 * kPi * j / n));
      }
    }
    const Trajectory tr = pdegen::simulate_ns(w0, p, GridSpec{n, 2});
    const double decay = std::exp(-8 * kPi * kPi * p.viscosity);
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < w0.values.size(); ++i) {
      const double expect = decay * w0.values[i];
      num += std::pow(tr.snapshots[1].values[i] - expect, 2);
      den += expect * expect;
    }
    const double rel = std::sqrt(num / den);
    r.passed = rel < 1e-3;
    r.detail = fmt("relative error %.2e at t=1", rel);
  });
}

CheckResult check_grf_spectrum() {
  return timed("GRF spectrum", [](CheckResult& r) {
    const int n = 32, samples = 2000;
    const GridSpec grid{n, 2};
    // One representative per +-k pair with |k| <= 4.
    std::vector<std::pair<int, int>> modes;
    for (int k1 = 0; k1 <= 4; ++k1) {
      for (int k2 = -4; k2 <= 4; ++k2) {
        if (k1 * k1 + k2 * k2 > 16 || (k1 == 0 && k2 < 0)) continue;
        modes.emplace_back(k1, k2);
      }
    }
    std::vector<std::complex<double>> phase(n);
    for (int i = 0; i < n; ++i) phase[i] = std::polar(1.0, -2 * kPi * i / n);
    auto wave = [&](int k, int i) { return phase[((k * i) % n + n) % n]; };

    std::vector<double> acc(modes.size(), 0.0);
    std::vector<std::complex<double>> row(n);
    for (int s = 0; s < samples; ++s) {
      pdegen::GRFSpec spec;
      spec.seed = derive_seed(2024, static_cast<std::uint64_t>(s));
      const auto w = pdegen::sample_initial_vorticity(grid, spec).values;
      for (std::size_t m = 0; m < modes.size(); ++m) {
        const auto [k1, k2] = modes[m];
        std::complex<double> c = 0.0;
        for (int i = 0; i < n; ++i) {
          std::complex<double> inner = 0.0;
          for (int j = 0; j < n; ++j) inner += static_cast<double>(w[static_cast<std::size_t>(i) * n + j]) * wave(k2, j);
          c += inner * wave(k1, i);
        }
        acc[m] += std::norm(c / static_cast<double>(n * n));
      }
    }
    const pdegen::GRFSpec spec;
    double worst = 0.0;
    std::pair<int, int> worst_mode{0, 0};
    for (std::size_t m = 0; m < modes.size(); ++m) {
      const double ratio = acc[m] / samples / spec.eigenvalue(modes[m].first, modes[m].second);
      if (std::abs(ratio - 1.0) > worst) {
        worst = std::abs(ratio - 1.0);
        worst_mode = modes[m];
      }
    }
    r.passed = worst < 0.10;
    r.detail = fmt("%.0f modes, worst variance deviation %.1f%% at k=(%.0f,", double(modes.size()), 100 * worst,
                   worst_mode.first) +
               fmt("%.0f)", worst_mode.second);
  });
}

std::vector<CheckResult> run_selftest(const std::function<void(const CheckResult&)>& on_result) {
  std::vector<CheckResult> out;
  for (auto check : {check_jerk_identities, check_gradients, check_integrator, check_taylor_green, check_grf_spectrum}) {
    out.push_back(check());
    if (on_result) on_result(out.back());
  }
  return out;
}

} // namespace jerkrom::app
