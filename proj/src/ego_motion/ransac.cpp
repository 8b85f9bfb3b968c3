#include "emag/ego_motion.hpp"

#include "dlt_internal.hpp"
#include "emag/errors.hpp"

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <limits>
#include <optional>
#include <random>
#include <string>

namespace emag::ego {

namespace {

constexpr double kCollinearTol = 1e-9;
constexpr int kResampleAttempts = 64;

bool collinear(const Eigen::Vector2d& a, const Eigen::Vector2d& b, const Eigen::Vector2d& c) {
  const Eigen::Vector2d u = b - a, v = c - a;
  return std::abs(u.x() * v.y() - u.y() * v.x()) <= kCollinearTol;
}

bool degenerate_sample(std::span<const Correspondence> corrs, const std::array<std::size_t, 4>& idx) {
  static constexpr std::array<std::array<int, 3>, 4> kTriples{{{0, 1, 2}, {0, 1, 3}, {0, 2, 3}, {1, 2, 3}}};
  for (const auto& t : kTriples) {
    const auto& a = corrs[idx[t[0]]];
    const auto& b = corrs[idx[t[1]]];
    const auto& c = corrs[idx[t[2]]];
    if (collinear(a.src, b.src, c.src) || collinear(a.dst, b.dst, c.dst)) return true;
  }
  return false;
}

// Exact four-point homography with h33 = 1 in Hartley-normalized coordinates.
std::optional<Homography> solve_minimal(std::span<const Correspondence> corrs,
                                        const std::array<std::size_t, 4>& idx) {
  const auto ts = detail::hartley_transform(4, [&](std::size_t i) { return corrs[idx[i]].src; });
  const auto td = detail::hartley_transform(4, [&](std::size_t i) { return corrs[idx[i]].dst; });
  if (!ts || !td) return std::nullopt;
  Eigen::Matrix<double, 8, 8> a;
  Eigen::Matrix<double, 8, 1> b;
  for (int i = 0; i < 4; ++i) {
    const Eigen::Vector2d p = detail::apply(*ts, corrs[idx[i]].src);
    const Eigen::Vector2d q = detail::apply(*td, corrs[idx[i]].dst);
    const double x = p.x(), y = p.y(), u = q.x(), v = q.y();
    a.row(2 * i) << x, y, 1, 0, 0, 0, -u * x, -u * y;
    a.row(2 * i + 1) << 0, 0, 0, x, y, 1, -v * x, -v * y;
    b(2 * i) = u;
    b(2 * i + 1) = v;
  }
  const Eigen::FullPivLU<Eigen::Matrix<double, 8, 8>> lu(a);
  if (!lu.isInvertible()) return std::nullopt;
  const Eigen::Matrix<double, 8, 1> h = lu.solve(b);
  Homography hn;
  hn << h(0), h(1), h(2), h(3), h(4), h(5), h(6), h(7), 1.0;
  const Homography full = td->inverse() * hn * (*ts);
  if (!full.allFinite() || !(std::abs(full(2, 2)) > 1e-12)) return std::nullopt;
  return Homography(full / full(2, 2));
}

struct Score {
  int inliers = 0;
  double mean_error = std::numeric_limits<double>::infinity();

  bool better_than(const Score& o) const {
    return inliers > o.inliers || (inliers == o.inliers && mean_error < o.mean_error);
  }
};

Score score_model(const Homography& h, std::span<const Correspondence> corrs, double threshold,
                  std::vector<std::uint8_t>* mask) {
  Score s;
  double total = 0;
  if (mask) mask->assign(corrs.size(), 0);
  for (std::size_t i = 0; i < corrs.size(); ++i) {
    const Eigen::Vector3d q = h * corrs[i].src.homogeneous();
    if (!(std::abs(q.z()) > 1e-12)) continue;
    const double err = (q.hnormalized() - corrs[i].dst).norm();
    if (err < threshold) {
      ++s.inliers;
      total += err;
      if (mask) (*mask)[i] = 1;
    }
  }
  if (s.inliers > 0) s.mean_error = total / s.inliers;
  return s;
}

}  // namespace

RansacResult ransac_homography(std::span<const Correspondence> corrs, int iterations,
                               double inlier_threshold_px, std::uint64_t rng_seed,
                               RansacTrace* trace) {
  if (corrs.size() < 4) {
    throw InsufficientDataError("RANSAC needs at least 4 correspondences, got " +
                                std::to_string(corrs.size()));
  }
  if (iterations < 1) throw ValidationError("RANSAC iterations must be >= 1");
  if (!(inlier_threshold_px > 0)) throw ValidationError("RANSAC inlier threshold must be positive");

  std::mt19937_64 rng(rng_seed);
  std::uniform_int_distribution<std::size_t> pick(0, corrs.size() - 1);
  auto draw = [&] {
    std::array<std::size_t, 4> idx{};
    for (int k = 0; k < 4; ++k) {
      bool fresh = false;
      while (!fresh) {
        idx[k] = pick(rng);
        fresh = true;
        for (int j = 0; j < k; ++j) fresh = fresh && idx[j] != idx[k];
      }
    }
    return idx;
  };

  std::optional<Homography> best;
  Score best_score;
  for (int it = 0; it < iterations; ++it) {
    std::optional<Homography> model;
    for (int attempt = 0; attempt < kResampleAttempts && !model; ++attempt) {
      const auto idx = draw();
      if (degenerate_sample(corrs, idx)) continue;
      model = solve_minimal(corrs, idx);
    }
    if (!model) {
      if (trace) ++trace->degenerate_iterations;
      continue;
    }
    const Score s = score_model(*model, corrs, inlier_threshold_px, nullptr);
    if (trace) trace->candidate_inliers.push_back(s.inliers);
    if (!best || s.better_than(best_score)) {
      best = model;
      best_score = s;
    }
  }
  if (!best) throw DegenerateGeometryError("RANSAC: every sampled configuration was degenerate");

  RansacResult result;
  result.model = *best;
  score_model(*best, corrs, inlier_threshold_px, &result.inliers);
  result.inlier_count = best_score.inliers;

  std::vector<Correspondence> support;
  support.reserve(static_cast<std::size_t>(best_score.inliers));
  for (std::size_t i = 0; i < corrs.size(); ++i) {
    if (result.inliers[i]) support.push_back(corrs[i]);
  }
  try {
    const Homography refit = solve_homography_dlt(support);
    std::vector<std::uint8_t> refit_mask;
    const Score rs = score_model(refit, corrs, inlier_threshold_px, &refit_mask);
    if (rs.inliers >= best_score.inliers) {
      result.model = refit;
      result.inliers = std::move(refit_mask);
      result.inlier_count = rs.inliers;
    }
  } catch (const DegenerateGeometryError&) {
    // keep the minimal-sample winner
  } catch (const NormalizationError&) {
  }
  return result;
}

}  // namespace emag::ego
