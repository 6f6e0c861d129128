// Copyright (C) 2026 The angiodiff authors
// SPDX-License-Identifier: Apache-2.0
//
// Acceptance suite: one PASS/FAIL line per criterion. Exit status is the
// number of failed criteria (capped at 1).

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include <unistd.h>

#include <CLI11.hpp>
#include <Eigen/Dense>
#include <fmt/format.h>
#include <torch/torch.h>

#include "angiodiff/classifier.hpp"
#include "angiodiff/common.hpp"
#include "angiodiff/config.hpp"
#include "angiodiff/dataset.hpp"
#include "angiodiff/diffusion.hpp"
#include "angiodiff/fid.hpp"
#include "angiodiff/frames.hpp"
#include "angiodiff/generation.hpp"
#include "angiodiff/image.hpp"
#include "angiodiff/phantom.hpp"
#include "angiodiff/pipeline.hpp"
#include "angiodiff/schedule.hpp"
#include "angiodiff/study.hpp"
#include "angiodiff/vae.hpp"
#include "../study_fixture.hpp"

namespace fs = std::filesystem;
using namespace angiodiff;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

/// Collects individual checks; the first few failures end up in the detail.
class Checks {
 public:
  void expect(bool ok, const std::string& what) {
    ++count_;
    if (!ok) failures_.push_back(what);
  }
  void near(double a, double b, double tol, const std::string& what) {
    expect(std::abs(a - b) <= tol, fmt::format("{}: {:.12g} vs {:.12g} (tol {:g})", what, a, b, tol));
  }
  Outcome outcome(const std::string& summary) const {
    if (failures_.empty()) return {true, fmt::format("{} ({} checks)", summary, count_)};
    std::string d = fmt::format("{} of {} checks failed: ", failures_.size(), count_);
    for (std::size_t i = 0; i < std::min<std::size_t>(3, failures_.size()); ++i) d += (i ? "; " : "") + failures_[i];
    return {false, d};
  }

 private:
  std::size_t count_ = 0;
  std::vector<std::string> failures_;
};

const auto kF64 = torch::TensorOptions().dtype(torch::kFloat64);

double elapsed(std::chrono::steady_clock::time_point since) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - since).count();
}

// ---------------------------------------------------------------------------
// Diffusion algebra

Outcome schedule_algebra() {
  Checks c;
  const auto s = build_schedule(1000, 0.0015, 0.0195);
  c.expect(s.steps() == 1000, "T = 1000");
  c.near(s.beta(1), 0.0015, 1e-15, "beta_1");
  c.near(s.beta(1000), 0.0195, 1e-15, "beta_T");
  long double prod = 1.0L;
  bool monotone = true, bounded = true, products = true;
  for (int t = 1; t <= 1000; ++t) {
    if (t > 1 && !(s.beta(t) > s.beta(t - 1))) monotone = false;
    if (std::abs(s.alpha(t) - (1.0 - s.beta(t))) > 1e-15) products = false;
    prod *= 1.0L - static_cast<long double>(s.beta(t));
    if (std::abs(s.alpha_bar(t) - static_cast<double>(prod)) > 1e-12) products = false;
    if (!(s.alpha_bar(t) > 0.0 && s.alpha_bar(t) < 1.0)) bounded = false;
    if (t > 1 && !(s.alpha_bar(t) < s.alpha_bar(t - 1))) bounded = false;
  }
  c.expect(monotone, "betas strictly increasing");
  c.expect(products, "alpha = 1 - beta and alpha-bar = cumulative product");
  c.expect(bounded, "alpha-bar strictly decreasing inside (0, 1)");

  torch::manual_seed(1);
  const auto z0 = torch::randn({16, 3, 8, 8}, kF64);
  // Reverse chain driven by the exact noise implied by z0 recovers z0.
  for (int start : {1, 10, 500, 1000}) {
    auto z = forward_diffuse(z0, start, torch::randn_like(z0), s);
    for (int t = start; t >= 1; --t) {
      const auto eps = (z - std::sqrt(s.alpha_bar(t)) * z0) / std::sqrt(1.0 - s.alpha_bar(t));
      z = reverse_step(z, t, eps, s);
    }
    c.near((z - z0).abs().max().item<double>(), 0.0, 1e-5, fmt::format("round trip from t={}", start));
    const auto eps = torch::randn_like(z0);
    c.near((predict_z0(forward_diffuse(z0, start, eps, s), start, eps, s) - z0).abs().max().item<double>(), 0.0, 1e-5,
           fmt::format("predict_z0 at t={}", start));
  }
  // eps = 0 and no injected noise: z_{t-1} = z_t / sqrt(alpha_t).
  for (int t : {1, 2, 500, 1000}) {
    const auto z = torch::randn({4, 3, 8, 8}, kF64);
    const auto out = reverse_step(z, t, torch::zeros_like(z), s, torch::zeros_like(z));
    c.near((out - z / std::sqrt(s.alpha(t))).abs().max().item<double>(), 0.0, 1e-12,
           fmt::format("eps=0 reduction at t={}", t));
  }
  return c.outcome("schedule invariants, round trips, eps=0 reduction");
}

Outcome variance_law() {
  Checks c;
  const auto s = build_schedule(1000, 0.0015, 0.0195);
  auto gen = torch::make_generator<torch::CPUGeneratorImpl>(2024);
  const auto z0 = torch::full({10000}, 0.7, kF64);
  std::string summary;
  for (int t : {1, 500, 1000}) {
    const auto eps = torch::randn({10000}, gen, kF64);
    const auto zt = forward_diffuse(z0, t, eps, s);
    const double var = zt.var().item<double>();
    const double expect = 1.0 - s.alpha_bar(t);
    const double rel = std::abs(var - expect) / expect;
    c.expect(rel <= 0.03, fmt::format("t={}: var {:.6g} vs {:.6g}", t, var, expect));
    summary += fmt::format("{}t={} rel {:.2f}%", summary.empty() ? "" : ", ", t, 100 * rel);
  }
  return c.outcome(summary);
}

// ---------------------------------------------------------------------------
// Toy mixture recovery

Outcome toy_mixture() {
  const auto start = std::chrono::steady_clock::now();
  torch::manual_seed(7);
  const std::vector<std::array<double, 2>> means = {{-2.0, -2.0}, {-2.0, 2.0}, {2.0, -2.0}, {2.0, 2.0}};
  const double sd = 0.3;
  const auto s = build_schedule(1000, 0.0015, 0.0195);
  ToyMlp net(2, 128, 3, 64);
  ToyMlpDenoiser denoiser(net);
  torch::optim::Adam opt(net->parameters(), torch::optim::AdamOptions(2e-3));
  auto gen = torch::make_generator<torch::CPUGeneratorImpl>(8);
  const auto centres = torch::tensor({-2.0, -2.0, -2.0, 2.0, 2.0, -2.0, 2.0, 2.0}).view({4, 2});
  const int steps = 6000;
  for (int step = 0; step < steps; ++step) {
    if (step == 4000) {
      for (auto& group : opt.param_groups()) static_cast<torch::optim::AdamOptions&>(group.options()).lr(5e-4);
    }
    const auto idx = torch::randint(0, 4, {512}, gen, torch::kLong);
    const auto x = centres.index_select(0, idx) + sd * torch::randn({512, 2}, gen);
    const auto loss = ddpm_loss(denoiser, x, s, gen);
    opt.zero_grad();
    loss.backward();
    opt.step();
  }
  net->eval();
  const int n = 4000;
  const auto out = sample(denoiser, s, n, {2}, 99, nullptr, SamplerOptions{ReverseVariance::Beta, 4000});
  std::array<int, 4> count{};
  std::array<std::array<double, 2>, 4> sum{};
  const auto acc = out.accessor<float, 2>();
  for (int i = 0; i < n; ++i) {
    int best = 0;
    double best_d = 1e300;
    for (int m = 0; m < 4; ++m) {
      const double d = std::pow(acc[i][0] - means[m][0], 2) + std::pow(acc[i][1] - means[m][1], 2);
      if (d < best_d) {
        best_d = d;
        best = m;
      }
    }
    ++count[best];
    sum[best][0] += acc[i][0];
    sum[best][1] += acc[i][1];
  }
  Checks c;
  double worst_pp = 0.0, worst_mean = 0.0;
  for (int m = 0; m < 4; ++m) {
    const double pp = 100.0 * count[m] / n - 25.0;
    worst_pp = std::max(worst_pp, std::abs(pp));
    c.expect(std::abs(pp) <= 5.0, fmt::format("mode {} share {:+.1f} pp", m, pp));
    if (count[m] == 0) continue;
    const double dm = std::hypot(sum[m][0] / count[m] - means[m][0], sum[m][1] / count[m] - means[m][1]);
    worst_mean = std::max(worst_mean, dm);
    c.expect(dm <= 0.15, fmt::format("mode {} mean off by {:.3f}", m, dm));
  }
  const double secs = elapsed(start);
  c.expect(secs <= 600.0, fmt::format("runtime {:.0f} s > 600 s", secs));
  return c.outcome(fmt::format("max share error {:.2f} pp, max mean error {:.3f}, {:.0f} s", worst_pp, worst_mean, secs));
}

// ---------------------------------------------------------------------------
// Losses and gradients

long double bce_reference(const std::vector<double>& p, const std::vector<double>& y) {
  long double acc = 0.0L;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const long double q = std::clamp(p[i], kBceEpsilon, 1.0 - kBceEpsilon);
    acc -= y[i] * std::log(q) + (1.0L - y[i]) * std::log(1.0L - q);
  }
  return acc / static_cast<long double>(p.size());
}

/// Relative central-difference agreement of d f / d x[idx] for a few entries.
template <class F>
double worst_gradient_error(F&& f, const torch::Tensor& x, const std::vector<std::int64_t>& flat_indices) {
  auto leaf = x.clone().requires_grad_(true);
  f(leaf).backward();
  const auto grad = leaf.grad().flatten();
  const double h = 1e-5;
  double worst = 0.0;
  for (auto i : flat_indices) {
    auto up = x.clone(), down = x.clone();
    up.view({-1})[i] += h;
    down.view({-1})[i] -= h;
    torch::NoGradGuard ng;
    const double numeric = (f(up).template item<double>() - f(down).template item<double>()) / (2 * h);
    const double analytic = grad[i].item<double>();
    worst = std::max(worst, std::abs(numeric - analytic) / std::max(std::abs(numeric), 1e-6));
  }
  return worst;
}

Outcome losses_and_gradients() {
  Checks c;
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double worst_bce = 0.0;
  for (int trial = 0; trial < 200; ++trial) {
    const int n = 1 + static_cast<int>(rng() % 64);
    std::vector<double> p(n), y(n);
    for (int i = 0; i < n; ++i) {
      p[i] = trial % 5 == 0 ? std::round(u(rng)) : u(rng);
      y[i] = std::round(u(rng));
    }
    worst_bce = std::max(worst_bce, std::abs(bce_loss(p, y) - static_cast<double>(bce_reference(p, y))));
  }
  c.near(worst_bce, 0.0, 1e-10, "BCE vs scalar reference");

  torch::manual_seed(3);
  const auto mu = torch::randn({6, 3, 4, 4}, kF64), lv = torch::randn({6, 3, 4, 4}, kF64);
  const auto kl = kl_divergence(mu, lv);
  double worst_kl = 0.0;
  for (int b = 0; b < 6; ++b) {
    long double ref = 0.0L;
    const auto m = mu[b].flatten(), l = lv[b].flatten();
    for (int j = 0; j < m.size(0); ++j) {
      const long double mm = m[j].item<double>(), ll = l[j].item<double>();
      ref += 0.5L * (mm * mm + std::exp(ll) - 1.0L - ll);
    }
    worst_kl = std::max(worst_kl, std::abs(kl[b].item<double>() - static_cast<double>(ref)));
  }
  c.near(worst_kl, 0.0, 1e-10, "KL vs closed form");

  // DDPM objective against an element-wise reference.
  const auto s = build_schedule(1000, 0.0015, 0.0195);
  ToyMlp mlp(4, 32, 2, 16);
  mlp->to(torch::kFloat64);
  ToyMlpDenoiser den(mlp);
  const auto z0 = torch::randn({32, 4}, kF64), eps = torch::randn({32, 4}, kF64);
  const auto t = torch::randint(1, 1001, {32}, torch::kLong);
  const double loss = ddpm_loss_at(den, z0, t, eps, s).item<double>();
  const auto pred = den.predict_eps(forward_diffuse(z0, t, eps, s), t, nullptr).detach();
  long double mse = 0.0L;
  for (int i = 0; i < 32; ++i) {
    for (int j = 0; j < 4; ++j) mse += std::pow(static_cast<long double>(eps[i][j].item<double>() - pred[i][j].item<double>()), 2);
  }
  c.near(loss, static_cast<double>(mse / 128.0L), 1e-6, "DDPM MSE vs reference");

  // Finite-difference checks on tiny double-precision configurations.
  const auto p = torch::rand({16}, kF64) * 0.8 + 0.1;
  const auto labels = (torch::rand({16}, kF64) > 0.5).to(torch::kFloat64);
  const double g_bce = worst_gradient_error([&](const torch::Tensor& x) { return bce_loss(x, labels); }, p, {0, 5, 11});
  c.expect(g_bce <= 1e-3, fmt::format("BCE gradient rel error {:.2e}", g_bce));

  const double g_ddpm = worst_gradient_error(
      [&](const torch::Tensor& x) { return ddpm_loss_at(den, x, t, eps, s); }, z0, {0, 7, 30, 101});
  c.expect(g_ddpm <= 1e-3, fmt::format("DDPM input-gradient rel error {:.2e}", g_ddpm));

  VaeConfig vc;
  vc.image_side = 16;
  vc.latent_side = 8;
  vc.latent_channels = 2;
  vc.base_channels = 4;
  vc.channel_multipliers = {1, 2};
  vc.residual_blocks_per_level = 1;
  Vae vae(vc);
  vae->to(torch::kFloat64);
  vae->eval();
  FilterBankPerceptual fb;
  const auto img = torch::rand({1, 1, 16, 16}, kF64);
  const double g_vae = worst_gradient_error(
      [&](const torch::Tensor& x) {
        const auto post = vae->posterior(x);
        return vae_loss(x, vae->decode(post.mean), post, 0.5, ReconLoss::Perceptual, &fb).total;
      },
      img, {100, 119, 136, 150});
  c.expect(g_vae <= 1e-3, fmt::format("VAE loss input-gradient rel error {:.2e}", g_vae));
  return c.outcome(fmt::format("BCE {:.1e}, KL {:.1e}, grads {:.1e}/{:.1e}/{:.1e}", worst_bce, worst_kl, g_bce,
                               g_ddpm, g_vae));
}

// ---------------------------------------------------------------------------
// Phase classifier

Outcome classifier_desk(const fs::path& work) {
  const auto start = std::chrono::steady_clock::now();
  const auto cfg = preset_config("desk-scale");
  const auto corpus = generate_phantom_corpus(120, 31, cfg.phantom.phantom, work / "classifier-corpus");
  const auto split = split_by_series(corpus.records, cfg.classifier.val_fraction, 32);
  CorpusManifest train = corpus, val = corpus;
  train.records = split.train;
  val.records = split.val;
  const auto r = train_classifier(train, val, cfg.classifier.model, 33);
  const double secs = elapsed(start);
  Checks c;
  c.expect(r.metrics.accuracy >= 0.90, fmt::format("accuracy {:.3f}", r.metrics.accuracy));
  c.expect(r.metrics.precision >= 0.85, fmt::format("precision {:.3f}", r.metrics.precision));
  c.expect(r.metrics.recall >= 0.85, fmt::format("recall {:.3f}", r.metrics.recall));
  c.expect(secs <= 600.0, fmt::format("runtime {:.0f} s", secs));
  return c.outcome(fmt::format("accuracy {:.3f}, precision {:.3f}, recall {:.3f} on {} held-out frames, {:.0f} s",
                               r.metrics.accuracy, r.metrics.precision, r.metrics.recall, r.confusion.total(), secs));
}

// ---------------------------------------------------------------------------
// FID

GaussianSummary gaussian(Eigen::VectorXd mu, Eigen::MatrixXd sigma) {
  GaussianSummary g;
  g.mu = std::move(mu);
  g.sigma = std::move(sigma);
  g.n = 100;
  return g;
}

Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& m) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m);
  return es.eigenvectors() * es.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal() * es.eigenvectors().transpose();
}

double fid_reference(const GaussianSummary& a, const GaussianSummary& b) {
  const Eigen::MatrixXd ra = psd_sqrt(a.sigma);
  const Eigen::MatrixXd inner = ra * b.sigma * ra;
  return (a.mu - b.mu).squaredNorm() + a.sigma.trace() + b.sigma.trace() -
         2.0 * psd_sqrt(0.5 * (inner + inner.transpose())).trace();
}

Outcome fid_correctness(const fs::path& work) {
  Checks c;
  const auto i2 = Eigen::MatrixXd::Identity(2, 2);
  Eigen::VectorXd shifted(2);
  shifted << 3.0, 0.0;
  c.near(frechet_distance(gaussian(Eigen::VectorXd::Zero(2), i2), gaussian(shifted, i2)), 9.0, 1e-6, "mean shift 9.0");
  c.near(frechet_distance(gaussian(Eigen::VectorXd::Zero(2), i2), gaussian(Eigen::VectorXd::Zero(2), 4.0 * i2)), 2.0,
         1e-6, "scaled covariance 2.0");
  std::mt19937_64 rng(13);
  std::normal_distribution<double> n01;
  double worst_self = 0.0, worst_sym = 0.0, worst_oracle = 0.0;
  for (int trial = 0; trial < 64; ++trial) {
    const int d = 1 + trial % 16;
    auto draw = [&] {
      Eigen::MatrixXd a(d, d + 2);
      for (int i = 0; i < a.size(); ++i) a.data()[i] = n01(rng);
      Eigen::VectorXd mu(d);
      for (int i = 0; i < d; ++i) mu[i] = n01(rng);
      return gaussian(mu, a * a.transpose() / (d + 2));
    };
    const auto a = draw(), b = draw();
    const double f = frechet_distance(a, b);
    worst_self = std::max(worst_self, std::abs(frechet_distance(a, a)));
    worst_sym = std::max(worst_sym, std::abs(f - frechet_distance(b, a)));
    worst_oracle = std::max(worst_oracle, std::abs(f - fid_reference(a, b)));
  }
  c.near(worst_self, 0.0, 1e-6, "self distance");
  c.near(worst_sym, 0.0, 1e-8, "symmetry");
  c.near(worst_oracle, 0.0, 1e-6, "eigendecomposition reference");

  PhantomConfig pc = preset_config("desk-scale").phantom.phantom;
  pc.condition_mix = {1, 1, 1, 1, 0};
  const auto corpus = generate_phantom_corpus(100, 41, pc, work / "fid-corpus");
  std::vector<GrayImage> half_a, half_b, noisy;
  std::mt19937_64 noise_rng(42);
  std::normal_distribution<double> noise(0.0, 0.2 * 255.0);
  int k = 0;
  for (const auto& r : corpus.records) {
    if (r.phase != Phase::ARTERIAL) continue;
    auto img = read_png(corpus.resolve(r));
    (k++ % 2 == 0 ? half_a : half_b).push_back(img);
    for (auto& px : img.pixels) px = static_cast<std::uint8_t>(std::clamp(px + noise(noise_rng), 0.0, 255.0));
    noisy.push_back(img);
  }
  FilterBankExtractor fb;
  const auto fa = summarize_features(extract_features(half_a, fb));
  const double halves = frechet_distance(fa, summarize_features(extract_features(half_b, fb)));
  const double corrupted = frechet_distance(fa, summarize_features(extract_features(noisy, fb)));
  c.expect(halves < corrupted, fmt::format("halves {:.4g} vs corrupted {:.4g}", halves, corrupted));
  return c.outcome(fmt::format("oracle {:.1e}, symmetry {:.1e}; FID halves {:.4g} < corrupted {:.4g}", worst_oracle,
                               worst_sym, halves, corrupted));
}

// ---------------------------------------------------------------------------
// Conditional end-to-end run and stratified generation

struct DeskRun {
  fs::path dir;
  nlohmann::json manifest;
  double seconds = 0.0;
  std::string error;
};

DeskRun desk_run(const fs::path& work, const std::optional<fs::path>& reuse) {
  DeskRun run;
  if (reuse) {
    run.dir = *reuse;
  } else {
    run.dir = work / "desk-run";
    fs::remove_all(run.dir);
    const auto start = std::chrono::steady_clock::now();
    try {
      run_pipeline(preset_config("desk-scale"), run.dir,
                   [](const std::string& line) { std::cerr << "  " << line << '\n'; });
    } catch (const std::exception& e) {
      run.error = e.what();
    }
    run.seconds = elapsed(start);
  }
  const RunLayout layout{run.dir};
  if (fs::exists(layout.manifest())) run.manifest = nlohmann::json::parse(read_text_file(layout.manifest()));
  if (reuse && run.manifest.contains("stages")) {
    for (const auto& s : run.manifest["stages"]) run.seconds += s.value("seconds", 0.0);
  }
  return run;
}

/// AC-versus-PC classifier trained on a separate phantom corpus (positive
/// label = AC), reused through the phase-classifier machinery.
PhaseClassifier circulation_classifier(const fs::path& work, std::string* note) {
  auto pc = preset_config("desk-scale").phantom.phantom;
  pc.condition_mix = {1, 1, 1, 1, 0};
  const auto corpus = generate_phantom_corpus(160, 777, pc, work / "heldout-corpus");
  CorpusManifest labelled = corpus;
  labelled.records.clear();
  for (auto r : corpus.records) {
    if (r.phase != Phase::ARTERIAL) continue;
    r.phase = r.circulation == Circulation::AC ? Phase::ARTERIAL : Phase::NON_ARTERIAL;
    labelled.records.push_back(r);
  }
  const auto split = split_by_series(labelled.records, 0.2, 778);
  CorpusManifest train = labelled, val = labelled;
  train.records = split.train;
  val.records = split.val;
  ClassifierConfig cc;
  cc.input_side = 64;
  cc.architecture = "resnet10";
  cc.base_width = 8;
  cc.max_epochs = 8;
  cc.horizontal_flip = false;
  auto r = train_classifier(train, val, cc, 779);
  *note = fmt::format("held-out real accuracy {:.3f}", r.metrics.accuracy);
  return std::move(r.model);
}

Outcome conditional_end_to_end(const DeskRun& run, const fs::path& work) {
  Checks c;
  c.expect(run.error.empty(), "pipeline error: " + run.error);
  const RunLayout layout{run.dir};
  if (!fs::exists(layout.generated())) {
    c.expect(false, "no generated manifest");
    return c.outcome("");
  }
  const auto generated = read_generation_manifest(layout.generated());
  std::string note;
  auto classifier = circulation_classifier(work, &note);
  std::map<ConditionId, std::pair<int, int>> per;  // correct, total
  int correct = 0, total = 0;
  const int chunk = 64;
  for (std::size_t i = 0; i < generated.images.size(); i += chunk) {
    std::vector<torch::Tensor> frames;
    const auto end = std::min(generated.images.size(), i + chunk);
    for (auto j = i; j < end; ++j) frames.push_back(load_frame(generated.resolve(generated.images[j]), 64));
    const auto p = classifier.predict(torch::stack(frames));
    for (auto j = i; j < end; ++j) {
      const auto& g = generated.images[j];
      const bool says_ac = p[static_cast<std::int64_t>(j - i)].item<double>() >= 0.5;
      const bool ok = says_ac == (g.condition.circulation == Circulation::AC);
      correct += ok;
      ++total;
      auto& cell = per[g.condition.id()];
      cell.first += ok;
      ++cell.second;
    }
  }
  const double acc = total ? static_cast<double>(correct) / total : 0.0;
  c.expect(acc >= 0.80, fmt::format("AC/PC accuracy on generated images {:.3f}", acc));
  c.expect(run.seconds <= 1800.0, fmt::format("desk run took {:.0f} s", run.seconds));
  std::string cells;
  for (const auto& [id, cell] : per) cells += fmt::format(" {} {}/{}", to_string(id), cell.first, cell.second);
  return c.outcome(fmt::format("AC/PC accuracy {:.3f} on {} generated images ({}),{}; desk run {:.0f} s", acc, total,
                               note, cells, run.seconds));
}

Outcome stratified_generation(const DeskRun& run, const fs::path& work) {
  Checks c;
  const RunLayout layout{run.dir};
  if (!fs::exists(layout.generated()) || !fs::exists(layout.ldm())) {
    c.expect(false, "desk run produced no generation output");
    return c.outcome("");
  }
  const auto m = read_generation_manifest(layout.generated());
  c.expect(m.images.size() == 400, fmt::format("{} images", m.images.size()));
  std::map<ConditionId, int> per;
  std::map<std::pair<int, ConditionId>, int> cells;
  int on_disk = 0;
  for (const auto& g : m.images) {
    ++per[g.condition.id()];
    ++cells[{g.batch, g.condition.id()}];
    on_disk += fs::exists(m.resolve(g));
  }
  c.expect(on_disk == 400, fmt::format("{} files on disk", on_disk));
  for (auto id : kCanonicalConditions) c.expect(per[id] == 100, fmt::format("{}: {}", to_string(id), per[id]));
  c.expect(cells.size() == 40, "40 batch x condition cells");
  for (const auto& [k, n] : cells) c.expect(n == 10, "10 images per cell");

  // Rerun with the recorded stage seed and compare bytes.
  std::uint64_t seed = 0;
  for (const auto& s : run.manifest.value("stages", nlohmann::json::array())) {
    if (s.value("name", "") == "generate") seed = s.value("seed", std::uint64_t{0});
  }
  const auto cfg = run.manifest.contains("config") ? config_from_json(run.manifest["config"]) : preset_config("desk-scale");
  auto model = load_ldm(layout.ldm());
  model->eval();
  const auto again = stratified_generate(*model, canonical_conditions({kCanonicalConditions.begin(), kCanonicalConditions.end()}),
                                         cfg.generate.per_condition, cfg.generate.batches, seed, work / "regenerate",
                                         cfg.generate.options);
  int identical = 0;
  for (std::size_t i = 0; i < std::min(again.images.size(), m.images.size()); ++i) {
    identical += again.images[i] == m.images[i] &&
                 sha256_file(again.resolve(again.images[i])) == sha256_file(m.resolve(m.images[i]));
  }
  c.expect(identical == 400, fmt::format("{} of 400 images byte-identical on rerun", identical));
  return c.outcome(fmt::format("400 images, 100 per condition, 10 per batch cell; rerun byte-identical ({})", identical));
}

// ---------------------------------------------------------------------------
// Reader-study statistics

IccResult icc_reference(const std::vector<std::vector<double>>& x) {
  const std::size_t n = x.size(), k = x[0].size();
  long double grand = 0;
  for (const auto& row : x) {
    for (double v : row) grand += v;
  }
  grand /= static_cast<long double>(n * k);
  long double ss_total = 0, ss_rows = 0, ss_cols = 0;
  for (std::size_t i = 0; i < n; ++i) {
    long double m = 0;
    for (double v : x[i]) m += v;
    m /= k;
    ss_rows += k * (m - grand) * (m - grand);
  }
  for (std::size_t j = 0; j < k; ++j) {
    long double m = 0;
    for (std::size_t i = 0; i < n; ++i) m += x[i][j];
    m /= n;
    ss_cols += n * (m - grand) * (m - grand);
  }
  for (const auto& row : x) {
    for (double v : row) ss_total += (v - grand) * (v - grand);
  }
  const long double ss_err = ss_total - ss_rows - ss_cols;
  const long double msr = ss_rows / (n - 1), msc = ss_cols / (k - 1), mse = ss_err / ((n - 1) * (k - 1));
  const long double dn = n, dk = k;
  return {static_cast<double>((msr - mse) / (msr + (dk - 1) * mse + dk / dn * (msc - mse))),
          static_cast<double>((msr - mse) / (msr + (msc - mse) / dn))};
}

Outcome icc_criterion() {
  Checks c;
  std::mt19937_64 rng(101);
  std::normal_distribution<double> n01;
  double worst = 0.0;
  int spearman_brown = 0, spearman_violations = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 2 + rng() % 19, k = 2 + rng() % 5;
    std::vector<std::vector<double>> x(n, std::vector<double>(k));
    const double spread = 0.5 + 2.0 * (rng() % 100) / 100.0;
    for (auto& row : x) {
      const double target = spread * n01(rng);
      for (auto& v : row) v = target + n01(rng);
    }
    const auto r = icc(x);
    const auto o = icc_reference(x);
    worst = std::max({worst, std::abs(r.single - o.single), std::abs(r.average - o.average)});
    if (r.single >= 0.0 && r.average >= 0.0) {
      ++spearman_brown;
      spearman_violations += r.average < r.single;
    }
  }
  c.near(worst, 0.0, 1e-10, "ICC vs sums-of-squares reference");
  c.expect(spearman_violations == 0, fmt::format("{} ICC(2,k) < ICC(2,1) cases", spearman_violations));
  const std::vector<std::vector<double>> sf = {{9, 2, 5, 8}, {6, 1, 3, 2}, {8, 4, 6, 8},
                                               {7, 1, 2, 6}, {10, 5, 6, 9}, {6, 2, 4, 7}};
  const auto r = icc(sf);
  const auto o = icc_reference(sf);
  c.near(r.single, o.single, 0.005, "Shrout-Fleiss ICC(2,1)");
  c.near(r.single, 0.29, 0.005, "Shrout-Fleiss ICC(2,1) ~ 0.29");
  const auto perfect = icc({{1, 1, 1, 1}, {2, 2, 2, 2}, {4, 4, 4, 4}, {5, 5, 5, 5}});
  c.expect(perfect.single == 1.0 && perfect.average == 1.0,
           fmt::format("perfect agreement {:.17g}/{:.17g}", perfect.single, perfect.average));
  return c.outcome(fmt::format("max deviation {:.1e}; Shrout-Fleiss ICC(2,1) {:.4f} (reference {:.4f}); "
                               "Spearman-Brown direction on {} matrices",
                               worst, r.single, o.single, spearman_brown));
}

RatingRecord rec(const std::string& image, const std::string& rater, SegmentEntry p, SegmentEntry m,
                 SegmentEntry q) {
  RatingRecord r;
  r.image_id = image;
  r.rater_id = rater;
  r.segments = {p, m, q};
  return r;
}

Outcome aggregation(const fs::path& data_dir) {
  Checks c;
  constexpr auto NP = SegmentFlag::NOT_PRESENT;
  constexpr auto NA = SegmentFlag::NOT_APPLICABLE;
  const auto same = aggregate_image_scores(
      {rec("a", "r1", 3, 3, 3), rec("a", "r2", 3, 3, 3), rec("a", "r3", 3, 3, 3), rec("a", "r4", 3, 3, 3)});
  c.expect(same.segments[0] == 3.0 && same.segments[1] == 3.0 && same.segments[2] == 3.0 && same.overall == 3.0,
           "uniform 3s");
  const auto masked =
      aggregate_image_scores({rec("a", "r1", 4, 3, 3), rec("a", "r2", 4, 3, 3), rec("a", "r3", NP, 3, 3), rec("a", "r4", 2, 3, 3)});
  c.expect(masked.segments[0] == 10.0 / 3.0, fmt::format("prox {:.17g} != 10/3", masked.segments[0].value_or(-1)));
  const auto none = aggregate_image_scores({rec("a", "r1", NP, NA, NP), rec("a", "r2", NA, NA, NA)});
  c.expect(!none.ratable(), "all-flagged image is not ratable");
  std::map<std::string, ImageScore> scores = {{"x", none}, {"y", same}};
  const auto rows = condition_summary(scores, {{"x", ConditionId::AC_A}, {"y", ConditionId::AC_A}});
  c.expect(rows[0].n_images == 1, "all-flagged image excluded from the summary denominator");
  const auto stat = summary_stat({2.0, 3.0, 4.0});
  c.expect(stat.mean == 3.0 && stat.sd == 1.0, "3-image fixture 3.00 +/- 1.00");

  const auto f = test::study_fixture();
  int matched = 0;
  for (const auto& [name, text] : test::fixture_tables(f)) {
    const auto path = data_dir / name;
    const bool ok = fs::exists(path) && read_text_file(path) == text;
    c.expect(ok, name + " differs from golden");
    matched += ok;
  }
  return c.outcome(fmt::format("masked means exact; {} golden tables byte-identical", matched));
}

Outcome accounting() {
  Checks c;
  CorpusManifest m;
  for (int i = 0; i < 22064; ++i) {
    FrameRecord r;
    r.series_id = std::to_string(i);
    r.image_path = r.series_id + ".png";
    r.circulation = i < 3694 ? Circulation::OTHER : Circulation::AC;
    m.records.push_back(r);
  }
  const auto kept = filter_series(m);
  const auto& audit = kept.provenance.back();
  c.expect(audit.input == 22064 && audit.excluded == 3694 && audit.retained == 18370 && audit.conserves(),
           fmt::format("series audit {} - {} = {}", audit.input, audit.excluded, audit.retained));
  c.expect(kept.series_count() == 18370, "18370 series retained");

  const std::array<std::pair<ConditionId, int>, 4> table = {
      {{ConditionId::AC_A, 9500}, {ConditionId::PC_A, 920}, {ConditionId::AC_B, 26720}, {ConditionId::PC_B, 7912}}};
  CorpusManifest frames;
  int serial = 0;
  auto add = [&](Circulation circ, Plane plane, double a1, double a2) {
    FrameRecord r;
    r.series_id = std::to_string(serial++);
    r.image_path = r.series_id + ".png";
    r.circulation = circ;
    r.plane = plane;
    r.primary_angle_deg = a1;
    r.secondary_angle_deg = a2;
    r.phase = Phase::ARTERIAL;
    frames.records.push_back(r);
  };
  for (const auto& [id, n] : table) {
    const auto [a1, a2] = canonical_angles(plane_of(id));
    for (int i = 0; i < n; ++i) add(circulation_of(id), plane_of(id), a1, a2);
  }
  for (int i = 0; i < 54297; ++i) add(Circulation::PC, Plane::B, -60, 20);
  const auto counts = summarize_conditions(arterial_frames(frames));
  std::uint64_t sum = counts.others;
  for (const auto& [id, n] : table) {
    c.expect(counts.count(id) == static_cast<std::uint64_t>(n), std::string(to_string(id)) + " count");
    sum += counts.count(id);
  }
  c.expect(counts.others == 54297, "others count");
  c.expect(counts.total == 99349 && sum == counts.total, fmt::format("total {} (sum {})", counts.total, sum));
  double props = counts.others_proportion();
  for (auto id : kCanonicalConditions) props += counts.proportion(id);
  c.near(props, 1.0, 1e-9, "proportions sum");
  return c.outcome("22064 - 3694 = 18370 series; 9500 + 920 + 26720 + 7912 + 54297 = 99349 frames");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"angiodiff acceptance suite"};
  std::string work_arg, reuse_arg;
  std::vector<std::string> only;
  bool keep = false;
  app.add_option("--work-dir", work_arg, "Scratch directory (default: a fresh temporary directory)");
  app.add_option("--run-dir", reuse_arg, "Evaluate an existing desk-scale run instead of training one");
  app.add_option("--only", only, "Run only the named criteria");
  app.add_flag("--keep", keep, "Keep the scratch directory");
  CLI11_PARSE(app, argc, argv);

  configure_torch_determinism();
  const fs::path work = work_arg.empty() ? fs::temp_directory_path() / fmt::format("angiodiff-acceptance-{}", ::getpid())
                                         : fs::path(work_arg);
  fs::create_directories(work);
  const fs::path data_dir = ANGIODIFF_TEST_DATA;
  std::optional<fs::path> reuse;
  if (!reuse_arg.empty()) reuse = fs::path(reuse_arg);

  std::optional<DeskRun> run;
  auto desk = [&]() -> const DeskRun& {
    if (!run) run = desk_run(work, reuse);
    return *run;
  };

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"schedule-algebra", schedule_algebra},
      {"variance-law", variance_law},
      {"toy-mixture-recovery", toy_mixture},
      {"losses-and-gradients", losses_and_gradients},
      {"classifier-desk", [&] { return classifier_desk(work); }},
      {"fid-correctness", [&] { return fid_correctness(work); }},
      {"conditional-end-to-end", [&] { return conditional_end_to_end(desk(), work); }},
      {"icc", icc_criterion},
      {"aggregation-golden", [&] { return aggregation(data_dir); }},
      {"pipeline-accounting", accounting},
      {"stratified-generation", [&] { return stratified_generation(desk(), work); }},
  };

  int failed = 0;
  for (const auto& [name, fn] : criteria) {
    if (!only.empty() && std::find(only.begin(), only.end(), name) == only.end()) continue;
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    std::cout << fmt::format("{} {} [{:.1f} s] {}", o.pass ? "PASS" : "FAIL", name, elapsed(start), o.detail)
              << std::endl;
  }
  if (!keep && work_arg.empty()) fs::remove_all(work);
  return failed ? 1 : 0;
}
