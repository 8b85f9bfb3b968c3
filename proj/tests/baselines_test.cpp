#include "emag/baselines.hpp"
#include "emag/errors.hpp"

#include <gtest/gtest.h>

#include <Eigen/Dense>

#include <random>

using namespace emag;
using namespace emag::baselines;

namespace {

HandTrack centers_track(const std::vector<std::optional<Eigen::Vector2d>>& centers) {
  HandTrack t;
  t.centers = centers;
  t.boxes.assign(centers.size(), std::nullopt);
  return t;
}

Box box_at(Eigen::Vector2d c, double w = 0.1, double h = 0.12) {
  return {c.x() - w / 2, c.y() - h / 2, c.x() + w / 2, c.y() + h / 2};
}

// Straight transcription of the SORT filter with plain loops; shares no
// code with KalmanBoxFilter.
struct ReferenceKf {
  double x[7]{}, p[7][7]{};
  double q[7]{1, 1, 1, 1, 1e-2, 1e-2, 1e-4};
  double r[4]{1e-2, 1e-2, 1e-1, 1e-1};

  explicit ReferenceKf(const Box& b, double q_scale) {
    for (double& v : q) v *= q_scale;
    const double w = b.x2 - b.x1, h = b.y2 - b.y1;
    x[0] = b.x1 + w / 2;
    x[1] = b.y1 + h / 2;
    x[2] = w * h;
    x[3] = w / h;
    for (int i = 0; i < 7; ++i) p[i][i] = i >= 4 ? 10000.0 : 10.0;
  }
  void predict() {
    if (x[6] + x[2] <= 0) x[6] = 0;
    for (int i = 0; i < 3; ++i) x[i] += x[i + 4];
    double fp[7][7], np[7][7];
    for (int i = 0; i < 7; ++i)
      for (int j = 0; j < 7; ++j) fp[i][j] = p[i][j] + (i < 3 ? p[i + 4][j] : 0);
    for (int i = 0; i < 7; ++i)
      for (int j = 0; j < 7; ++j) np[i][j] = fp[i][j] + (j < 3 ? fp[i][j + 4] : 0);
    for (int i = 0; i < 7; ++i)
      for (int j = 0; j < 7; ++j) p[i][j] = np[i][j] + (i == j ? q[i] : 0);
  }
  void update(const Box& b) {
    const double w = b.x2 - b.x1, h = b.y2 - b.y1;
    const double z[4]{b.x1 + w / 2, b.y1 + h / 2, w * h, w / h};
    Eigen::Matrix4d s;
    for (int i = 0; i < 4; ++i)
      for (int j = 0; j < 4; ++j) s(i, j) = p[i][j] + (i == j ? r[i] : 0);
    const Eigen::Matrix4d si = s.inverse();
    double k[7][4];
    for (int i = 0; i < 7; ++i)
      for (int j = 0; j < 4; ++j) {
        k[i][j] = 0;
        for (int m = 0; m < 4; ++m) k[i][j] += p[i][m] * si(m, j);
      }
    double y[4];
    for (int j = 0; j < 4; ++j) y[j] = z[j] - x[j];
    for (int i = 0; i < 7; ++i)
      for (int j = 0; j < 4; ++j) x[i] += k[i][j] * y[j];
    double np[7][7];
    for (int i = 0; i < 7; ++i)
      for (int j = 0; j < 7; ++j) {
        np[i][j] = p[i][j];
        for (int m = 0; m < 4; ++m) np[i][j] -= k[i][m] * p[m][j];
      }
    std::copy(&np[0][0], &np[0][0] + 49, &p[0][0]);
  }
};

}  // namespace

TEST(Cvm, ExtrapolatesLastVelocity) {
  auto t = centers_track({Eigen::Vector2d(0, 0), Eigen::Vector2d(10, 10), Eigen::Vector2d(12, 13)});
  const auto f = cvm_forecast(t, 2);
  ASSERT_TRUE(f);
  EXPECT_EQ((*f)[0], Eigen::Vector2d(14, 16));
  EXPECT_EQ((*f)[1], Eigen::Vector2d(16, 19));
}

TEST(Cvm, ZeroVelocity) {
  const auto f = cvm_forecast(centers_track({Eigen::Vector2d(5, 5), Eigen::Vector2d(5, 5)}), 4);
  ASSERT_TRUE(f);
  for (const auto& p : *f) EXPECT_EQ(p, Eigen::Vector2d(5, 5));
}

TEST(Cvm, SingleObservationRepeats) {
  const auto f = cvm_forecast(centers_track({std::nullopt, Eigen::Vector2d(3, 4), std::nullopt}), 3);
  ASSERT_TRUE(f);
  for (const auto& p : *f) EXPECT_EQ(p, Eigen::Vector2d(3, 4));
}

TEST(Cvm, NoObservationIsUnforecastable) {
  EXPECT_FALSE(cvm_forecast(centers_track({std::nullopt, std::nullopt}), 3));
  EXPECT_FALSE(centers_track({std::nullopt}).forecastable());
}

TEST(Cvm, PredictionsAreCollinear) {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> n(0, 1);
  for (int trial = 0; trial < 50; ++trial) {
    const Eigen::Vector2d a(n(rng), n(rng)), b(n(rng), n(rng));
    const auto f = cvm_forecast(centers_track({a, b}), 6);
    for (const auto& p : *f) {
      const Eigen::Vector2d u = b - a, v = p - a;
      EXPECT_NEAR(u.x() * v.y() - u.y() * v.x(), 0.0, 1e-9);
    }
  }
}

TEST(HandTrack, RejectsMalformedBox) {
  EXPECT_THROW(HandTrack::from_boxes(HandSide::kLeft, {Box{0.5, 0.1, 0.4, 0.2}}), ValidationError);
}

TEST(Kalman, StationaryBoxMatchesReferenceFilter) {
  const Box b = box_at({0.4, 0.6});
  std::vector<std::optional<Box>> boxes(8, b);
  KalmanParams low;
  low.process_noise_scale = 1e-6;
  const auto f = kalman_forecast(HandTrack::from_boxes(HandSide::kRight, boxes), 4, low);
  ReferenceKf ref(b, 1e-6);
  for (int t = 1; t < 8; ++t) {
    ref.predict();
    ref.update(b);
  }
  ASSERT_TRUE(f);
  for (int k = 0; k < 4; ++k) {
    ref.predict();
    EXPECT_NEAR((*f)[k].x(), ref.x[0], 1e-12);
    EXPECT_NEAR((*f)[k].y(), ref.x[1], 1e-12);
    EXPECT_NEAR((*f)[k].x(), 0.4, 1e-6);
    EXPECT_NEAR((*f)[k].y(), 0.6, 1e-6);
  }
}

TEST(Kalman, MatchesReferenceOnNoisyTrackWithGaps) {
  std::mt19937_64 rng(2);
  std::normal_distribution<double> n(0, 0.01);
  std::vector<std::optional<Box>> boxes;
  for (int t = 0; t < 8; ++t) {
    if (t == 3 || t == 5) {
      boxes.emplace_back();
    } else {
      boxes.push_back(box_at({0.3 + 0.02 * t + n(rng), 0.5 - 0.01 * t + n(rng)}, 0.1 + n(rng), 0.12));
    }
  }
  const auto f = kalman_forecast(HandTrack::from_boxes(HandSide::kLeft, boxes), 4);
  ReferenceKf ref(*boxes[0], 1.0);
  for (int t = 1; t < 8; ++t) {
    ref.predict();
    if (boxes[t]) ref.update(*boxes[t]);
  }
  for (int k = 0; k < 4; ++k) {
    ref.predict();
    EXPECT_NEAR((*f)[k].x(), ref.x[0], 1e-10);
    EXPECT_NEAR((*f)[k].y(), ref.x[1], 1e-10);
  }
}

TEST(Kalman, SingleObservationHasNoVelocity) {
  std::vector<std::optional<Box>> boxes(8);
  boxes[2] = box_at({0.2, 0.7});
  const auto f = kalman_forecast(HandTrack::from_boxes(HandSide::kLeft, boxes), 4);
  ASSERT_TRUE(f);
  for (const auto& p : *f) {
    EXPECT_NEAR(p.x(), 0.2, 1e-12);
    EXPECT_NEAR(p.y(), 0.7, 1e-12);
  }
}

TEST(Kalman, ConstantVelocityTrackConverges) {
  const Eigen::Vector2d start(0.2, 0.3), vel(0.03, -0.015);
  std::vector<std::optional<Box>> boxes;
  for (int t = 0; t < 8; ++t) boxes.push_back(box_at(start + t * vel));
  const auto track = HandTrack::from_boxes(HandSide::kLeft, boxes);

  KalmanBoxFilter kf(*boxes[0], KalmanParams{});
  for (int t = 1; t < 8; ++t) {
    kf.predict();
    kf.update(*boxes[t]);
  }
  const Eigen::Vector2d v_est = kf.state().segment<2>(4);
  EXPECT_LT((v_est - vel).norm() / vel.norm(), 0.01);

  const auto f = kalman_forecast(track, 4);
  const Eigen::Vector2d last = start + 7 * vel;
  for (int k = 1; k <= 4; ++k) {
    const Eigen::Vector2d truth = last + k * vel;
    EXPECT_LT(((*f)[k - 1] - truth).norm(), 0.02 * (k * vel).norm()) << "step " << k;
  }
}

TEST(Kalman, NoObservationIsUnforecastable) {
  EXPECT_FALSE(kalman_forecast(HandTrack::from_boxes(HandSide::kLeft, std::vector<std::optional<Box>>(5)), 4));
}

TEST(Kalman, CovarianceStaysSymmetricPositiveDefinite) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.1, 0.9);
  std::bernoulli_distribution observe(0.7);
  KalmanBoxFilter kf(box_at({0.5, 0.5}), KalmanParams{});
  for (int i = 0; i < 1000; ++i) {
    kf.predict();
    if (observe(rng)) kf.update(box_at({u(rng), u(rng)}, 0.05 + 0.1 * u(rng), 0.05 + 0.1 * u(rng)));
    const auto& p = kf.covariance();
    ASSERT_LT((p - p.transpose()).cwiseAbs().maxCoeff(), 1e-9);
    ASSERT_EQ(Eigen::LLT<KalmanBoxFilter::Covariance>(p).info(), Eigen::Success) << "cycle " << i;
  }
}

TEST(Baselines, AreDeterministic) {
  std::vector<std::optional<Box>> boxes;
  for (int t = 0; t < 8; ++t) boxes.push_back(box_at({0.1 * t, 0.5}));
  const auto track = HandTrack::from_boxes(HandSide::kLeft, boxes);
  EXPECT_EQ(*kalman_forecast(track, 4), *kalman_forecast(track, 4));
  EXPECT_EQ(*cvm_forecast(track, 4), *cvm_forecast(track, 4));
}
