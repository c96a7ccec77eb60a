#include "deskpose/solver.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <set>
#include <vector>

#include "deskpose/common.hpp"
#include "deskpose/rng.hpp"
#include "doctest.h"

using namespace deskpose;

namespace {

CameraIntrinsics test_intrinsics() {
  CameraIntrinsics k;
  k.fx = 500.0;
  k.fy = 500.0;
  k.cx = 256.0;
  k.cy = 256.0;
  k.width = 512;
  k.height = 512;
  return k;
}

// A camera a bit off-axis so no coordinate plane is special.
RigidTransform test_pose() {
  Eigen::Vector3d axis = Eigen::Vector3d(0.3, -0.5, 0.8).normalized();
  Eigen::Quaterniond q(Eigen::AngleAxisd(0.7, axis));
  return RigidTransform(q, Eigen::Vector3d(0.05, -0.1, 0.9));
}

// Points in front of the camera together with their exact projections.
std::vector<Correspondence2D3D> exact_correspondences(const RigidTransform& pose, int n,
                                                      uint64_t seed) {
  const CameraIntrinsics k = test_intrinsics();
  SplitMix64 rng(seed);
  std::vector<Correspondence2D3D> corrs;
  while (static_cast<int>(corrs.size()) < n) {
    Eigen::Vector3d p(rng.next_uniform(-0.25, 0.25), rng.next_uniform(-0.25, 0.25),
                      rng.next_uniform(-0.2, 0.2));
    auto pix = project(k, pose, p);
    if (!pix) continue;
    corrs.push_back({*pix, p, 1.0});
  }
  return corrs;
}

RigidTransform perturb(const RigidTransform& pose, double angle_rad, double shift) {
  Eigen::Quaterniond dq(Eigen::AngleAxisd(angle_rad, Eigen::Vector3d(1, 2, -1).normalized()));
  return RigidTransform(dq * pose.rotation(),
                        pose.translation() + Eigen::Vector3d(shift, -shift, shift / 2));
}

}  // namespace

TEST_CASE("direct linear transform recovers an exact pose") {
  const CameraIntrinsics k = test_intrinsics();
  const RigidTransform gt = test_pose();

  for (int n : {6, 20}) {
    auto corrs = exact_correspondences(gt, n, 100 + static_cast<uint64_t>(n));
    auto pose = pnp_dlt(corrs, k);
    REQUIRE(pose.has_value());
    PoseDelta delta = pose_delta(*pose, gt);
    CHECK(delta.rotation_deg < 1e-6);
    CHECK(delta.translation < 1e-6);
  }
}

TEST_CASE("direct linear transform edge cases") {
  const CameraIntrinsics k = test_intrinsics();
  const RigidTransform gt = test_pose();

  SUBCASE("fewer than six correspondences is a caller error") {
    auto corrs = exact_correspondences(gt, 5, 1);
    CHECK_THROWS_AS(pnp_dlt(corrs, k), ValidationError);
  }

  SUBCASE("collinear points are degenerate") {
    std::vector<Correspondence2D3D> corrs;
    for (int i = 0; i < 8; ++i) {
      Eigen::Vector3d p = Eigen::Vector3d(0.01, 0.02, 0.03) * i;
      auto pix = project(k, gt, p);
      REQUIRE(pix.has_value());
      corrs.push_back({*pix, p, 1.0});
    }
    auto pose = pnp_dlt(corrs, k);
    if (pose.has_value()) {
      // If the factorization survives numerically it must not pretend the
      // line pinned the pose down.
      PoseDelta delta = pose_delta(*pose, gt);
      CHECK(delta.translation > 1e-3);
    }
  }

  SUBCASE("consistency under a rigid change of the model frame") {
    // Moving the object points by G and asking for the camera pose again
    // must give pose' = pose o G^-1 (same camera, relabeled model frame).
    auto corrs = exact_correspondences(gt, 12, 3);
    Eigen::Quaterniond gq(Eigen::AngleAxisd(0.9, Eigen::Vector3d(0, 1, 1).normalized()));
    RigidTransform g(gq, Eigen::Vector3d(0.2, 0.1, -0.3));
    RigidTransform g_inv = invert(g);
    std::vector<Correspondence2D3D> moved = corrs;
    for (auto& c : moved) c.point = g.apply(c.point);

    auto pose = pnp_dlt(moved, k);
    REQUIRE(pose.has_value());
    PoseDelta delta = pose_delta(*pose, compose(gt, g_inv));
    CHECK(delta.rotation_deg < 1e-6);
    CHECK(delta.translation < 1e-6);
  }
}

TEST_CASE("Gauss-Newton refinement") {
  const CameraIntrinsics k = test_intrinsics();
  const RigidTransform gt = test_pose();
  auto corrs = exact_correspondences(gt, 15, 7);

  SUBCASE("the truth is a fixed point") {
    RefineResult r = refine_gauss_newton(gt, corrs, k);
    CHECK(!r.singular);
    PoseDelta delta = pose_delta(r.pose, gt);
    CHECK(delta.rotation_deg < 1e-9);
    CHECK(delta.translation < 1e-9);
    REQUIRE(!r.cost_history.empty());
    CHECK(r.cost_history.front() < 1e-16);
  }

  SUBCASE("a perturbed start converges back") {
    RigidTransform start = perturb(gt, 2.0 * std::numbers::pi / 180.0, 0.02);
    RefineResult r = refine_gauss_newton(start, corrs, k, 30);
    CHECK(!r.singular);
    PoseDelta delta = pose_delta(r.pose, gt);
    CHECK(delta.rotation_deg < 1e-6);
    CHECK(delta.translation < 1e-6);
    CHECK(r.iterations > 0);
    // The recorded costs start at the initial cost and never increase.
    REQUIRE(r.cost_history.size() >= 2);
    for (size_t i = 1; i < r.cost_history.size(); ++i)
      CHECK(r.cost_history[i] <= r.cost_history[i - 1] + 1e-12);
    CHECK(r.cost_history.back() < 1e-12);
  }

  SUBCASE("too few points for the normal equations is flagged") {
    std::vector<Correspondence2D3D> two(corrs.begin(), corrs.begin() + 2);
    RigidTransform start = perturb(gt, 0.01, 0.01);
    RefineResult r = refine_gauss_newton(start, two, k);
    // 2 points give 4 residuals for 6 unknowns: the system is singular and
    // the input pose must come back unchanged.
    CHECK(r.singular);
    PoseDelta delta = pose_delta(r.pose, start);
    CHECK(delta.rotation_deg < 1e-6);
    CHECK(delta.translation == 0.0);
  }

  SUBCASE("never returns a higher cost than the initialization") {
    RigidTransform far = perturb(gt, 25.0 * std::numbers::pi / 180.0, 0.3);
    RefineResult r = refine_gauss_newton(far, corrs, k, 5);
    REQUIRE(!r.cost_history.empty());
    CHECK(r.cost_history.back() <= r.cost_history.front());
  }
}

TEST_CASE("RANSAC pose estimation") {
  const CameraIntrinsics k = test_intrinsics();
  const RigidTransform gt = test_pose();

  SUBCASE("clean correspondences make every point an inlier") {
    auto corrs = exact_correspondences(gt, 20, 11);
    RansacConfig cfg;
    cfg.seed = 4;
    auto result = ransac_pnp(corrs, k, cfg);
    REQUIRE(result.has_value());
    CHECK(result->inlier_indices.size() == 20);
    CHECK(result->mean_reproj_error < 1e-6);
    PoseDelta delta = pose_delta(result->pose, gt);
    CHECK(delta.rotation_deg < 1e-6);
    CHECK(delta.translation < 1e-6);
  }

  SUBCASE("planted outliers are excluded exactly") {
    auto corrs = exact_correspondences(gt, 14, 13);
    SplitMix64 rng(17);
    std::set<int> planted;
    for (int i = 0; i < 6; ++i) {
      Correspondence2D3D bad;
      bad.pixel = {rng.next_uniform(0, 512), rng.next_uniform(0, 512)};
      bad.point = Eigen::Vector3d(rng.next_uniform(-0.25, 0.25), rng.next_uniform(-0.25, 0.25),
                                  rng.next_uniform(-0.2, 0.2));
      size_t slot = rng.next_below(corrs.size() + 1);
      corrs.insert(corrs.begin() + static_cast<long>(slot), bad);
      // Earlier planted slots shift with the insertion.
      std::set<int> shifted;
      for (int s : planted) shifted.insert(s >= static_cast<int>(slot) ? s + 1 : s);
      shifted.insert(static_cast<int>(slot));
      planted = std::move(shifted);
    }

    RansacConfig cfg;
    cfg.iterations = 500;
    cfg.inlier_threshold_px = 2.0;
    cfg.seed = 21;
    auto result = ransac_pnp(corrs, k, cfg);
    REQUIRE(result.has_value());
    CHECK(result->inlier_indices.size() == 14);
    for (int idx : result->inlier_indices) CHECK(!planted.count(idx));
    PoseDelta delta = pose_delta(result->pose, gt);
    CHECK(delta.rotation_deg < 0.1);
    CHECK(delta.translation < 1e-3);
  }

  SUBCASE("deterministic in the seed") {
    auto corrs = exact_correspondences(gt, 25, 19);
    // Push a third of the pixels far off.
    for (size_t i = 0; i < corrs.size(); i += 3) corrs[i].pixel.u += 40.0;
    RansacConfig cfg;
    cfg.seed = 2;
    auto a = ransac_pnp(corrs, k, cfg);
    auto b = ransac_pnp(corrs, k, cfg);
    REQUIRE(a.has_value());
    REQUIRE(b.has_value());
    CHECK(a->inlier_indices == b->inlier_indices);
    CHECK(a->pose.rotation().coeffs() == b->pose.rotation().coeffs());
    CHECK(a->pose.translation() == b->pose.translation());
    CHECK(a->mean_reproj_error == b->mean_reproj_error);
  }

  SUBCASE("failure modes") {
    RansacConfig cfg;
    auto few = exact_correspondences(gt, 5, 23);
    CHECK(!ransac_pnp(few, k, cfg).has_value());

    // All pixels scrambled: no consensus reaches min_inliers.
    auto corrs = exact_correspondences(gt, 12, 29);
    SplitMix64 rng(31);
    for (auto& c : corrs) c.pixel = {rng.next_uniform(0, 512), rng.next_uniform(0, 512)};
    cfg.iterations = 200;
    cfg.inlier_threshold_px = 0.5;
    cfg.min_inliers = 10;
    CHECK(!ransac_pnp(corrs, k, cfg).has_value());
  }

  SUBCASE("config validation") {
    RansacConfig cfg;
    cfg.iterations = 0;
    CHECK_THROWS_AS(cfg.validate(), ValidationError);
    cfg = RansacConfig{};
    cfg.sample_size = 5;  // below the DLT minimum
    CHECK_THROWS_AS(cfg.validate(), ValidationError);
    cfg = RansacConfig{};
    cfg.inlier_threshold_px = 0.0;
    CHECK_THROWS_AS(cfg.validate(), ValidationError);
    cfg = RansacConfig{};
    cfg.min_inliers = 0;
    CHECK_THROWS_AS(cfg.validate(), ValidationError);
  }
}
