// Copyright (C) 2026 The angiodiff authors
// SPDX-License-Identifier: Apache-2.0

#include "angiodiff/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <random>

#include <fmt/format.h>

#include "angiodiff/common.hpp"

namespace angiodiff {
namespace {

struct Vec2 {
  double x = 0.0;
  double y = 0.0;
};
Vec2 operator+(Vec2 a, Vec2 b) { return {a.x + b.x, a.y + b.y}; }
Vec2 operator-(Vec2 a, Vec2 b) { return {a.x - b.x, a.y - b.y}; }
Vec2 operator*(Vec2 a, double s) { return {a.x * s, a.y * s}; }

/// A straight vessel piece. Times are cumulative path length from the root,
/// used as contrast arrival times.
struct Segment {
  Vec2 a, b;
  double width = 0.0;
  double t0 = 0.0;
  double t1 = 0.0;
};

using Rng = std::mt19937_64;

double uniform(Rng& rng, double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }
double normal(Rng& rng, double sd) { return std::normal_distribution<double>(0.0, sd)(rng); }

Vec2 heading(double angle) { return {std::cos(angle), std::sin(angle)}; }

// Grows one vessel as three slightly bent pieces and recurses at the tip.
void grow(std::vector<Segment>& out, Rng& rng, Vec2 start, double angle, double length, double width, int depth,
          double t) {
  Vec2 p = start;
  double a = angle;
  for (int i = 0; i < 3; ++i) {
    a += normal(rng, 0.12);
    const Vec2 q = p + heading(a) * (length / 3.0);
    out.push_back({p, q, width, t, t + length / 3.0});
    t += length / 3.0;
    p = q;
  }
  if (depth <= 0) return;
  const double spread = uniform(rng, 0.35, 0.65);
  const double skew = normal(rng, 0.1);
  for (int side : {-1, 1}) {
    grow(out, rng, p, a + side * spread + skew, length * uniform(rng, 0.66, 0.8), width * 0.72, depth - 1, t);
  }
}

constexpr double kUp = -std::numbers::pi / 2.0;  // image y grows downward

std::vector<Segment> build_tree(Circulation circulation, int depth, Rng& rng) {
  std::vector<Segment> segs;
  const Vec2 root{0.5 + normal(rng, 0.01), 0.97};
  switch (circulation) {
    case Circulation::AC: {
      // Midline trunk splitting bilaterally, plus a thinner medial branch.
      const double trunk = uniform(rng, 0.18, 0.24);
      grow(segs, rng, root, kUp, trunk, 0.036, 0, 0.0);
      const Vec2 fork = segs.back().b;
      const double t = segs.back().t1;
      for (int side : {-1, 1}) {
        grow(segs, rng, fork, kUp + side * uniform(rng, 0.85, 1.15), uniform(rng, 0.18, 0.22), 0.026, depth, t);
      }
      grow(segs, rng, fork, kUp + normal(rng, 0.08), uniform(rng, 0.16, 0.2), 0.018, std::max(depth - 1, 0), t);
      break;
    }
    case Circulation::PC: {
      // Long single posterior trunk with a T-shaped top and small side twigs.
      const double trunk = uniform(rng, 0.36, 0.42);
      grow(segs, rng, root, kUp, trunk, 0.024, 0, 0.0);
      const Vec2 top = segs.back().b;
      const double t = segs.back().t1;
      for (int side : {-1, 1}) {
        grow(segs, rng, top, kUp + side * uniform(rng, 1.45, 1.75), uniform(rng, 0.2, 0.24), 0.017,
             std::max(depth - 1, 0), t);
      }
      const Segment mid = segs[1];
      for (int side : {-1, 1}) {
        grow(segs, rng, mid.b, kUp + side * uniform(rng, 1.9, 2.2), uniform(rng, 0.08, 0.11), 0.011, 1, mid.t1);
      }
      break;
    }
    case Circulation::OTHER: {
      // Off-midline external-carotid-like tree.
      const Vec2 side_root{uniform(rng, 0.12, 0.2), 0.95};
      grow(segs, rng, side_root, kUp + 0.5, uniform(rng, 0.2, 0.26), 0.022, depth, 0.0);
      break;
    }
  }
  return segs;
}

/// Projection: similarity transform around the image centre; plane B
/// rotates the view by 90 degrees and compresses one axis.
struct Projection {
  double rotation = 0.0;
  double scale_x = 1.0;
  double scale_y = 1.0;
  Vec2 offset;

  Vec2 apply(Vec2 p) const {
    const Vec2 d = p - Vec2{0.5, 0.5};
    const double c = std::cos(rotation), s = std::sin(rotation);
    const Vec2 r{c * d.x - s * d.y, s * d.x + c * d.y};
    return Vec2{0.5 + r.x * scale_x, 0.5 + r.y * scale_y} + offset;
  }
};

double point_segment_distance(Vec2 p, Vec2 a, Vec2 b) {
  const Vec2 ab = b - a;
  const double len2 = ab.x * ab.x + ab.y * ab.y;
  double t = len2 > 0 ? ((p.x - a.x) * ab.x + (p.y - a.y) * ab.y) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  const Vec2 c = a + ab * t;
  return std::hypot(p.x - c.x, p.y - c.y);
}

/// Darkness map of the opacified part of the tree. `front` is the contrast
/// arrival cut-off; segments are clipped at the front.
std::vector<float> vessel_map(const std::vector<Segment>& segs, double front, int side) {
  std::vector<float> dark(static_cast<std::size_t>(side) * side, 0.0f);
  for (const auto& s : segs) {
    if (front <= s.t0) continue;
    Vec2 b = s.b;
    if (front < s.t1) b = s.a + (s.b - s.a) * ((front - s.t0) / (s.t1 - s.t0));
    const Vec2 pa = s.a * side;
    const Vec2 pb = b * side;
    const double half = std::max(0.5, 0.5 * s.width * side);
    const double contrast = 0.45 + 0.55 * std::min(1.0, s.width / 0.03);
    const int x0 = std::max(0, static_cast<int>(std::floor(std::min(pa.x, pb.x) - half - 2)));
    const int x1 = std::min(side - 1, static_cast<int>(std::ceil(std::max(pa.x, pb.x) + half + 2)));
    const int y0 = std::max(0, static_cast<int>(std::floor(std::min(pa.y, pb.y) - half - 2)));
    const int y1 = std::min(side - 1, static_cast<int>(std::ceil(std::max(pa.y, pb.y) + half + 2)));
    for (int y = y0; y <= y1; ++y) {
      for (int x = x0; x <= x1; ++x) {
        const double d = point_segment_distance({x + 0.5, y + 0.5}, pa, pb);
        const double profile = std::clamp(1.0 - (d - half) / 0.8, 0.0, 1.0);
        auto& v = dark[static_cast<std::size_t>(y) * side + x];
        v = std::max(v, static_cast<float>(profile * contrast));
      }
    }
  }
  return dark;
}

/// Separable box blur, used for the late-phase parenchymal blush.
std::vector<float> blur(const std::vector<float>& src, int side, int radius) {
  std::vector<float> tmp(src.size()), out(src.size());
  for (int pass = 0; pass < 2; ++pass) {
    const auto& in = pass == 0 ? src : tmp;
    auto& dst = pass == 0 ? tmp : out;
    for (int y = 0; y < side; ++y) {
      for (int x = 0; x < side; ++x) {
        double acc = 0.0;
        int n = 0;
        for (int k = -radius; k <= radius; ++k) {
          const int xx = pass == 0 ? x + k : x;
          const int yy = pass == 0 ? y : y + k;
          if (xx < 0 || yy < 0 || xx >= side || yy >= side) continue;
          acc += in[static_cast<std::size_t>(yy) * side + xx];
          ++n;
        }
        dst[static_cast<std::size_t>(y) * side + x] = static_cast<float>(acc / n);
      }
    }
  }
  return out;
}

}  // namespace

void PhantomConfig::validate() const {
  if (image_side <= 0) throw ValidationError("phantom image_side must be positive");
  if (branch_depth < 0) throw ValidationError("phantom branch_depth must be non-negative");
  if (arterial_frames < 1) throw ValidationError("phantom arterial_frames must be >= 1");
  if (frames_per_series < arterial_frames + 1) {
    throw ValidationError("phantom frames_per_series must exceed arterial_frames");
  }
  if (series_per_study < 1) throw ValidationError("phantom series_per_study must be >= 1");
  if (!(other_circulation_fraction >= 0.0 && other_circulation_fraction <= 1.0)) {
    throw ValidationError("phantom other_circulation_fraction must be in [0,1]");
  }
  if (!(noise_sigma >= 0.0)) throw ValidationError("phantom noise_sigma must be non-negative");
  double total = 0.0;
  for (double w : condition_mix) {
    if (!(w >= 0.0)) throw ValidationError("phantom condition_mix weights must be non-negative");
    total += w;
  }
  if (total <= 0.0) throw ValidationError("phantom condition_mix must have positive mass");
}

std::vector<SeriesLabel> allocate_series_labels(int n_series, std::uint64_t seed, const PhantomConfig& config) {
  config.validate();
  if (n_series < 1) throw ValidationError("n_series must be >= 1");
  Rng rng(derive_seed(seed, "allocation"));

  const auto n_other = static_cast<int>(std::lround(config.other_circulation_fraction * n_series));
  const int n_labelled = n_series - n_other;

  // Largest-remainder apportionment over the five mix categories.
  const double mass = std::accumulate(config.condition_mix.begin(), config.condition_mix.end(), 0.0);
  std::array<int, 5> counts{};
  std::array<std::pair<double, int>, 5> remainders{};
  int assigned = 0;
  for (int i = 0; i < 5; ++i) {
    const double exact = n_labelled * config.condition_mix[i] / mass;
    counts[i] = static_cast<int>(std::floor(exact));
    remainders[i] = {exact - counts[i], i};
    assigned += counts[i];
  }
  std::stable_sort(remainders.begin(), remainders.end(),
                   [](const auto& l, const auto& r) { return l.first > r.first; });
  for (int i = 0; assigned < n_labelled; ++i, ++assigned) ++counts[remainders[i % 5].second];

  std::vector<SeriesLabel> labels;
  labels.reserve(static_cast<std::size_t>(n_series));
  for (int i = 0; i < 4; ++i) {
    const auto id = kCanonicalConditions[i];
    for (int k = 0; k < counts[i]; ++k) labels.push_back({circulation_of(id), plane_of(id), true});
  }
  for (int k = 0; k < counts[4]; ++k) {
    const auto circ = std::bernoulli_distribution(0.7)(rng) ? Circulation::AC : Circulation::PC;
    const auto plane = std::bernoulli_distribution(0.5)(rng) ? Plane::A : Plane::B;
    labels.push_back({circ, plane, false});
  }
  for (int k = 0; k < n_other; ++k) {
    labels.push_back({Circulation::OTHER, std::bernoulli_distribution(0.5)(rng) ? Plane::A : Plane::B, true});
  }
  std::shuffle(labels.begin(), labels.end(), rng);
  return labels;
}

PhantomSeries render_phantom_series(std::size_t index, std::uint64_t seed, const SeriesLabel& label,
                                    const PhantomConfig& config) {
  config.validate();
  Rng rng(derive_seed(seed, static_cast<std::uint64_t>(index)));
  const int side = config.image_side;

  PhantomSeries series;
  const auto study = index / static_cast<std::size_t>(config.series_per_study);
  series.study_id = fmt::format("PH{:05}", study);
  series.series_id = fmt::format("PH{:05}-S{:05}", study, index);
  series.circulation = label.circulation;
  series.plane = label.plane;

  const auto [canon_primary, canon_secondary] = canonical_angles(label.plane);
  if (label.canonical_angles) {
    series.primary_angle_deg = canon_primary + uniform(rng, -4.0, 4.0);
    series.secondary_angle_deg = canon_secondary + uniform(rng, -4.0, 4.0);
  } else {
    const double sign = std::bernoulli_distribution(0.5)(rng) ? 1.0 : -1.0;
    series.primary_angle_deg = canon_primary + sign * uniform(rng, 10.0, 40.0);
    series.secondary_angle_deg = canon_secondary + uniform(rng, -25.0, 25.0);
  }
  // Keep stored angles to 0.1 degree.
  series.primary_angle_deg = std::round(series.primary_angle_deg * 10.0) / 10.0;
  series.secondary_angle_deg = std::round(series.secondary_angle_deg * 10.0) / 10.0;

  const auto tree = build_tree(label.circulation, config.branch_depth, rng);
  double max_time = 0.0;
  for (const auto& s : tree) max_time = std::max(max_time, s.t1);

  Projection proj;
  proj.rotation = (series.primary_angle_deg - canon_primary) * std::numbers::pi / 180.0 + normal(rng, 0.05);
  const double zoom = uniform(rng, 0.92, 1.05);
  proj.scale_x = zoom;
  proj.scale_y = zoom;
  if (label.plane == Plane::B) {
    proj.rotation += std::numbers::pi / 2.0;
    proj.scale_x *= 0.8;
    proj.scale_y *= 1.05;
  }
  proj.offset = {normal(rng, 0.015), normal(rng, 0.015)};
  std::vector<Segment> projected = tree;
  for (auto& s : projected) {
    s.a = proj.apply(s.a);
    s.b = proj.apply(s.b);
    s.width *= zoom;
  }

  // Smooth background shading shared by all frames of the series.
  std::vector<float> background(static_cast<std::size_t>(side) * side);
  const double gx = normal(rng, 0.02), gy = normal(rng, 0.02);
  const double base = uniform(rng, 0.84, 0.9);
  for (int y = 0; y < side; ++y) {
    for (int x = 0; x < side; ++x) {
      const double u = (x + 0.5) / side - 0.5, v = (y + 0.5) / side - 0.5;
      background[static_cast<std::size_t>(y) * side + x] =
          static_cast<float>(base + gx * u + gy * v - 0.04 * (u * u + v * v));
    }
  }

  const int n_frames = config.frames_per_series;
  const int n_art = config.arterial_frames;
  const int n_fill = std::max(1, (n_frames - n_art + 1) / 2);
  const auto full = vessel_map(projected, max_time + 1.0, side);
  const auto blush = blur(full, side, std::max(1, side / 24));

  for (int f = 0; f < n_frames; ++f) {
    std::vector<float> dark;
    Phase phase = Phase::NON_ARTERIAL;
    if (f < n_fill) {
      const double progress = n_fill == 1 ? 0.0 : static_cast<double>(f) / (n_fill - 1);
      dark = vessel_map(projected, max_time * (0.18 + 0.42 * progress), side);
    } else if (f < n_fill + n_art) {
      dark = full;
      const float gain = static_cast<float>(uniform(rng, 0.95, 1.0));
      for (auto& v : dark) v *= gain;
      phase = Phase::ARTERIAL;
    } else {
      const int k = f - n_fill - n_art;
      const double fade = 0.42 * std::pow(0.6, k);
      const double wash = 0.9 * std::pow(0.75, k);
      dark.resize(full.size());
      for (std::size_t i = 0; i < full.size(); ++i) {
        dark[i] = static_cast<float>(fade * full[i] + wash * blush[i]);
      }
    }
    std::vector<float> pixels(dark.size());
    for (std::size_t i = 0; i < dark.size(); ++i) {
      pixels[i] = static_cast<float>(background[i] - 0.75 * dark[i] + normal(rng, config.noise_sigma));
    }
    series.frames.push_back(from_unit(pixels, side, side));
    series.phases.push_back(phase);
  }
  return series;
}

CorpusManifest generate_phantom_corpus(int n_series, std::uint64_t seed, const PhantomConfig& config,
                                       const std::filesystem::path& out_dir) {
  config.validate();
  if (n_series < 1) throw ValidationError("n_series must be >= 1");
  const auto labels = allocate_series_labels(n_series, seed, config);
  CorpusManifest manifest;
  manifest.base_dir = out_dir;
  std::filesystem::create_directories(out_dir / "images");
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto series = render_phantom_series(i, seed, labels[i], config);
    for (std::size_t f = 0; f < series.frames.size(); ++f) {
      FrameRecord r;
      r.study_id = series.study_id;
      r.series_id = series.series_id;
      r.frame_index = static_cast<std::uint32_t>(f);
      r.image_path = fmt::format("images/{}_f{:02}.png", series.series_id, f);
      r.circulation = series.circulation;
      r.plane = series.plane;
      r.primary_angle_deg = series.primary_angle_deg;
      r.secondary_angle_deg = series.secondary_angle_deg;
      r.phase = series.phases[f];
      write_png(out_dir / r.image_path, series.frames[f]);
      manifest.records.push_back(std::move(r));
    }
  }
  manifest.provenance.push_back(StageAudit{"phantom", "series", labels.size(), labels.size(), 0});
  write_manifest(out_dir / "manifest.tsv", manifest);
  return manifest;
}

}  // namespace angiodiff
