// Copyright (C) 2026 The angiodiff authors
// SPDX-License-Identifier: Apache-2.0

#include "angiodiff/fid.hpp"

#include <torch/script.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include <fmt/format.h>

#include "json.hpp"
#include "angiodiff/common.hpp"
#include "angiodiff/frames.hpp"

namespace angiodiff {

GaussianSummary summarize_features(const Eigen::MatrixXd& features) {
  const auto n = features.rows();
  if (n < 2) throw ValidationError(fmt::format("need at least 2 feature rows, got {}", n));
  GaussianSummary s;
  s.n = n;
  s.mu = features.colwise().mean().transpose();
  const Eigen::MatrixXd centered = features.rowwise() - s.mu.transpose();
  s.sigma = (centered.transpose() * centered) / static_cast<double>(n - 1);
  s.sigma = 0.5 * (s.sigma + s.sigma.transpose());
  if (n <= features.cols()) {
    s.sigma.diagonal().array() += kCovarianceShrinkage;
    s.shrunk = true;
  }
  return s;
}

namespace {

Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& m, const char* what) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(0.5 * (m + m.transpose()));
  if (eig.info() != Eigen::Success) throw ConditioningError(fmt::format("{}: eigendecomposition failed", what));
  const auto& values = eig.eigenvalues();
  const double scale = std::max(1.0, values.cwiseAbs().maxCoeff());
  if (values.minCoeff() < -1e-8 * scale) {
    throw ConditioningError(
        fmt::format("{} is not positive semi-definite (min eigenvalue {:.3e})", what, values.minCoeff()));
  }
  const Eigen::VectorXd roots = values.cwiseMax(0.0).cwiseSqrt();
  return eig.eigenvectors() * roots.asDiagonal() * eig.eigenvectors().transpose();
}

}  // namespace

double frechet_distance(const GaussianSummary& a, const GaussianSummary& b) {
  const auto d = a.mu.size();
  if (b.mu.size() != d || a.sigma.rows() != d || a.sigma.cols() != d || b.sigma.rows() != d ||
      b.sigma.cols() != d) {
    throw ValidationError(fmt::format("feature dimensions differ: {} vs {}", d, b.mu.size()));
  }
  (void)psd_sqrt(a.sigma, "covariance A");
  const Eigen::MatrixXd root_b = psd_sqrt(b.sigma, "covariance B");
  const Eigen::MatrixXd m = root_b * a.sigma * root_b;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(0.5 * (m + m.transpose()), Eigen::EigenvaluesOnly);
  if (eig.info() != Eigen::Success) throw ConditioningError("covariance product: eigendecomposition failed");
  const auto& values = eig.eigenvalues();
  const double floor = -1e-10 * std::max(1.0, values.cwiseAbs().maxCoeff());
  double trace_sqrt = 0.0;
  for (Eigen::Index i = 0; i < values.size(); ++i) {
    if (values[i] < floor) {
      throw ConditioningError(fmt::format("covariance product has eigenvalue {:.3e}", values[i]));
    }
    trace_sqrt += std::sqrt(std::max(values[i], 0.0));
  }
  const double dist =
      (a.mu - b.mu).squaredNorm() + a.sigma.trace() + b.sigma.trace() - 2.0 * trace_sqrt;
  if (dist < -1e-6) throw ConditioningError(fmt::format("negative Frechet distance {:.3e}", dist));
  return std::max(dist, 0.0);
}

namespace {

std::vector<double> unit_pixels(const GrayImage& image, int side) {
  if (!image.square()) throw ValidationError("feature extraction expects square images");
  const GrayImage& src = image;
  GrayImage resized;
  if (image.width != side) resized = resize_bilinear(image, side, side);
  const auto& px = image.width != side ? resized.pixels : src.pixels;
  std::vector<double> out(px.size());
  for (std::size_t i = 0; i < px.size(); ++i) out[i] = px[i] / 255.0;
  return out;
}

}  // namespace

std::string MomentsExtractor::fingerprint() const {
  return "moments-v1: bilinear resize to 256x256, intensity/255, features "
         "[mean, std, mean(dx^2)+mean(dy^2), darkness-weighted row centroid]";
}

Eigen::VectorXd MomentsExtractor::extract(const GrayImage& image) const {
  const int s = input_side();
  const auto v = unit_pixels(image, s);
  const auto at = [&](int x, int y) { return v[static_cast<std::size_t>(y) * s + x]; };
  const double n = static_cast<double>(v.size());
  const double mean = std::accumulate(v.begin(), v.end(), 0.0) / n;
  double var = 0.0;
  for (double x : v) var += (x - mean) * (x - mean);
  double gx = 0.0, gy = 0.0, mass = 0.0, moment = 0.0;
  for (int y = 0; y < s; ++y) {
    for (int x = 0; x < s; ++x) {
      if (x + 1 < s) gx += std::pow(at(x + 1, y) - at(x, y), 2);
      if (y + 1 < s) gy += std::pow(at(x, y + 1) - at(x, y), 2);
      const double w = 1.0 - at(x, y);
      mass += w;
      moment += w * (y + 0.5) / s;
    }
  }
  const double pairs = static_cast<double>(s) * (s - 1);
  Eigen::VectorXd f(4);
  f << mean, std::sqrt(var / n), (s > 1 ? gx / pairs + gy / pairs : 0.0), (mass > 0.0 ? moment / mass : 0.5);
  return f;
}

std::string FilterBankExtractor::fingerprint() const {
  return "filterbank-v1: bilinear resize to 64x64, intensity/255, 2x2 average pyramid (64,32,16), maps "
         "[I, |dx|, |dy|, |lap4|] with replicate borders, 2x2 quadrant means";
}

Eigen::VectorXd FilterBankExtractor::extract(const GrayImage& image) const {
  int s = input_side();
  auto v = unit_pixels(image, s);
  Eigen::VectorXd f(dim());
  int k = 0;
  for (int scale = 0; scale < 3; ++scale) {
    if (scale > 0) {
      const int h = s / 2;
      std::vector<double> next(static_cast<std::size_t>(h) * h);
      for (int y = 0; y < h; ++y) {
        for (int x = 0; x < h; ++x) {
          const auto i = static_cast<std::size_t>(2 * y) * s + 2 * x;
          next[static_cast<std::size_t>(y) * h + x] = 0.25 * (v[i] + v[i + 1] + v[i + s] + v[i + s + 1]);
        }
      }
      v = std::move(next);
      s = h;
    }
    const auto at = [&](int x, int y) {
      x = std::clamp(x, 0, s - 1);
      y = std::clamp(y, 0, s - 1);
      return v[static_cast<std::size_t>(y) * s + x];
    };
    std::array<std::array<double, 4>, 4> sums{};
    const int half = s / 2;
    for (int y = 0; y < s; ++y) {
      for (int x = 0; x < s; ++x) {
        const int q = (y >= half ? 2 : 0) + (x >= half ? 1 : 0);
        const double c = at(x, y);
        sums[0][q] += c;
        sums[1][q] += std::abs(at(x + 1, y) - c);
        sums[2][q] += std::abs(at(x, y + 1) - c);
        sums[3][q] += std::abs(at(x + 1, y) + at(x - 1, y) + at(x, y + 1) + at(x, y - 1) - 4.0 * c);
      }
    }
    const double cell = static_cast<double>(half) * half;
    for (const auto& map : sums) {
      for (double q : map) f[k++] = q / cell;
    }
  }
  return f;
}

namespace {

class TorchScriptExtractor final : public FeatureExtractor {
 public:
  explicit TorchScriptExtractor(std::string path) : path_(std::move(path)) {
    try {
      module_ = torch::jit::load(path_);
    } catch (const std::exception& e) {
      throw ValidationError(fmt::format(
          "feature extractor weights '{}' unavailable ({}); use the built-in fallback --extractor filterbank-v1 "
          "(or moments-v1)",
          path_, e.what()));
    }
    module_.eval();
    dim_ = static_cast<int>(run(torch::zeros({1, 3, kSide, kSide})).numel());
  }
  std::string name() const override { return "torchscript:" + path_; }
  int dim() const override { return dim_; }
  int input_side() const override { return kSide; }
  std::string fingerprint() const override {
    return fmt::format("torchscript:{} sha256={}: bilinear resize to {}x{}, intensity/255, gray replicated to 3 "
                       "channels",
                       path_, sha256_file(path_), kSide, kSide);
  }
  Eigen::VectorXd extract(const GrayImage& image) const override {
    const auto v = unit_pixels(image, kSide);
    auto t = torch::tensor(v, torch::kFloat64).to(torch::kFloat32).view({1, 1, kSide, kSide}).repeat({1, 3, 1, 1});
    auto out = run(t).to(torch::kFloat64).contiguous();
    return Eigen::Map<const Eigen::VectorXd>(out.data_ptr<double>(), out.numel());
  }

 private:
  static constexpr int kSide = 256;
  torch::Tensor run(const torch::Tensor& x) const {
    torch::NoGradGuard no_grad;
    return const_cast<torch::jit::script::Module&>(module_).forward({x}).toTensor().flatten();
  }
  std::string path_;
  torch::jit::script::Module module_;
  int dim_ = 0;
};

}  // namespace

std::unique_ptr<FeatureExtractor> make_extractor(const std::string& spec) {
  if (spec == "moments-v1" || spec == "moments") return std::make_unique<MomentsExtractor>();
  if (spec == "filterbank-v1" || spec == "filterbank") return std::make_unique<FilterBankExtractor>();
  constexpr std::string_view prefix = "torchscript:";
  if (spec.rfind(prefix, 0) == 0) return std::make_unique<TorchScriptExtractor>(spec.substr(prefix.size()));
  throw ValidationError(
      fmt::format("unknown feature extractor '{}' (filterbank-v1, moments-v1 or torchscript:<path>)", spec));
}

Eigen::MatrixXd extract_features(const std::vector<GrayImage>& images, const FeatureExtractor& extractor) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(images.size()), extractor.dim());
  for (std::size_t i = 0; i < images.size(); ++i) {
    const auto f = extractor.extract(images[i]);
    if (f.size() != extractor.dim()) throw ValidationError("extractor returned a vector of unexpected length");
    out.row(static_cast<Eigen::Index>(i)) = f.transpose();
  }
  return out;
}

namespace {

Eigen::MatrixXd select_rows(const Eigen::MatrixXd& m, const std::vector<Eigen::Index>& rows) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(rows.size()), m.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = m.row(rows[i]);
  return out;
}

FidRow fid_row(std::string group, const Eigen::MatrixXd& real, const Eigen::MatrixXd& synth) {
  FidRow row;
  row.group = std::move(group);
  row.n_real = real.rows();
  row.n_synth = synth.rows();
  if (row.n_real < 2 || row.n_synth < 2) {
    row.warning = "fewer than 2 samples; FID undefined";
    return row;
  }
  const auto a = summarize_features(real);
  const auto b = summarize_features(synth);
  row.shrunk = a.shrunk || b.shrunk;
  if (row.shrunk) row.warning = "n <= D: covariance rank-deficient, 1e-6 ridge applied";
  row.fid = frechet_distance(a, b);
  return row;
}

}  // namespace

FidReport fid_report(const LabelledFeatures& real, const LabelledFeatures& synth, bool per_condition,
                     const FeatureExtractor& extractor) {
  if (real.features.rows() == 0 || synth.features.rows() == 0) throw ValidationError("FID needs non-empty sets");
  if (real.features.cols() != synth.features.cols()) throw ValidationError("feature dimensions differ");
  FidReport report;
  report.extractor = extractor.name();
  report.fingerprint = extractor.fingerprint();
  report.rows.push_back(fid_row("overall", real.features, synth.features));
  if (per_condition) {
    if (real.conditions.size() != static_cast<std::size_t>(real.features.rows()) ||
        synth.conditions.size() != static_cast<std::size_t>(synth.features.rows())) {
      throw ValidationError("per-condition FID needs a condition label for every row");
    }
    for (auto id : kCanonicalConditions) {
      std::vector<Eigen::Index> r, s;
      for (std::size_t i = 0; i < real.conditions.size(); ++i) {
        if (real.conditions[i] == id) r.push_back(static_cast<Eigen::Index>(i));
      }
      for (std::size_t i = 0; i < synth.conditions.size(); ++i) {
        if (synth.conditions[i] == id) s.push_back(static_cast<Eigen::Index>(i));
      }
      report.rows.push_back(
          fid_row(std::string(to_string(id)), select_rows(real.features, r), select_rows(synth.features, s)));
    }
  }
  for (const auto& row : report.rows) {
    if (!row.warning.empty()) report.warnings.push_back(fmt::format("{}: {}", row.group, row.warning));
  }
  return report;
}

std::string FidReport::to_jsonl() const {
  std::string out;
  for (const auto& row : rows) {
    nlohmann::json j{{"group", row.group},
                     {"n_real", row.n_real},
                     {"n_synth", row.n_synth},
                     {"fid", row.fid ? nlohmann::json(*row.fid) : nlohmann::json(nullptr)},
                     {"shrunk", row.shrunk},
                     {"warning", row.warning},
                     {"extractor", extractor},
                     {"preprocessing", fingerprint}};
    out += j.dump() + "\n";
  }
  return out;
}

std::string FidReport::to_table() const {
  std::string out = fmt::format("extractor: {}\n{:<10} {:>8} {:>8} {:>12}  {}\n", extractor, "group", "n_real",
                                "n_synth", "FID", "note");
  for (const auto& row : rows) {
    out += fmt::format("{:<10} {:>8} {:>8} {:>12}  {}\n", row.group, row.n_real, row.n_synth,
                       row.fid ? fmt::format("{:.4f}", *row.fid) : std::string("-"), row.warning);
  }
  return out;
}

std::vector<FrameRecord> stratified_reference(const std::vector<FrameRecord>& real,
                                              const std::array<std::uint64_t, 4>& target, int n, std::uint64_t seed,
                                              std::vector<std::string>* warnings) {
  if (n < 0) throw ValidationError("reference size must be non-negative");
  std::array<std::vector<std::size_t>, 4> pools;
  for (std::size_t i = 0; i < real.size(); ++i) {
    if (const auto c = condition_of(real[i])) pools[static_cast<std::size_t>(*c)].push_back(i);
  }
  std::array<std::uint64_t, 4> quota{};
  if (n == 0) {
    for (std::size_t c = 0; c < 4; ++c) quota[c] = pools[c].size();
  } else {
    const double total = static_cast<double>(std::accumulate(target.begin(), target.end(), std::uint64_t{0}));
    if (total == 0.0) throw ValidationError("reference draw needs a non-empty target mix");
    std::array<double, 4> remainder{};
    std::uint64_t assigned = 0;
    for (std::size_t c = 0; c < 4; ++c) {
      const double exact = n * static_cast<double>(target[c]) / total;
      quota[c] = static_cast<std::uint64_t>(std::floor(exact));
      remainder[c] = exact - std::floor(exact);
      assigned += quota[c];
    }
    std::array<std::size_t, 4> order{0, 1, 2, 3};
    std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return remainder[a] > remainder[b]; });
    for (std::size_t k = 0; assigned < static_cast<std::uint64_t>(n); ++k, ++assigned) ++quota[order[k % 4]];
  }
  std::vector<std::size_t> chosen;
  for (std::size_t c = 0; c < 4; ++c) {
    auto pool = pools[c];
    std::mt19937_64 rng(derive_seed(seed, to_string(static_cast<ConditionId>(c))));
    std::shuffle(pool.begin(), pool.end(), rng);
    if (pool.size() < quota[c] && warnings) {
      warnings->push_back(fmt::format("reference draw: {} needs {} frames, only {} available",
                                      to_string(static_cast<ConditionId>(c)), quota[c], pool.size()));
    }
    const auto take = std::min<std::size_t>(pool.size(), quota[c]);
    chosen.insert(chosen.end(), pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(take));
  }
  std::sort(chosen.begin(), chosen.end());
  std::vector<FrameRecord> out;
  for (auto i : chosen) out.push_back(real[i]);
  return out;
}

FidReport fid_report(const CorpusManifest& real, const GenerationManifest& synth, const FeatureExtractor& extractor,
                     const FidOptions& options) {
  std::vector<FrameRecord> arterial;
  for (const auto& r : real.records) {
    if (r.phase == Phase::ARTERIAL) arterial.push_back(r);
  }
  std::array<std::uint64_t, 4> target{};
  for (const auto& g : synth.images) ++target[static_cast<std::size_t>(g.condition.id())];
  std::vector<std::string> warnings;
  const auto reference = stratified_reference(arterial, target, options.reference_size, options.seed, &warnings);

  LabelledFeatures real_f, synth_f;
  std::vector<GrayImage> images;
  for (const auto& r : reference) {
    images.push_back(read_png(real.resolve(r)));
    real_f.conditions.push_back(condition_of(r));
  }
  real_f.features = extract_features(images, extractor);
  images.clear();
  for (const auto& g : synth.images) {
    images.push_back(read_png(synth.resolve(g)));
    synth_f.conditions.push_back(g.condition.id());
  }
  synth_f.features = extract_features(images, extractor);
  auto report = fid_report(real_f, synth_f, options.per_condition, extractor);
  report.warnings.insert(report.warnings.begin(), warnings.begin(), warnings.end());
  return report;
}

}  // namespace angiodiff
