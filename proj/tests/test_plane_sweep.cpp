#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "smd/error.hpp"
#include "smd/plane_sweep.hpp"
#include "smd/synth.hpp"

using namespace smd;

namespace {

BAState camera_state(int w, int h, double focal, std::vector<Posed> poses) {
  BAState s;
  s.focal = s.focal_init = focal;
  s.principal_point = Eigen::Vector2d((w - 1) / 2.0, (h - 1) / 2.0);
  s.width = w;
  s.height = h;
  s.poses = std::move(poses);
  s.omegas = Eigen::VectorXd::Ones(2);
  return s;
}

// Views of a textured fronto-parallel plane at depth 1 / omega, texture
// pinned to the reference pixel grid. Reference first.
std::vector<GrayImage> render_plane(const BAState& s, double omega, std::uint64_t seed) {
  const Texture tex(seed);
  const Intrinsicsd k = s.intrinsics();
  const Distortiond d = s.distortion();
  std::vector<Posed> views{Posed::identity()};
  views.insert(views.end(), s.poses.begin(), s.poses.end());
  std::vector<GrayImage> out;
  for (const Posed& pose : views) {
    GrayImage img(s.height, s.width);
    const Eigen::Matrix3d rt = pose.rotation.matrix().transpose();
    const Eigen::Vector3d origin = pose.center();
    for (int y = 0; y < s.height; ++y) {
      for (int x = 0; x < s.width; ++x) {
        const Eigen::Vector2d xu = undistort(pixel_to_normalized<double>(Eigen::Vector2d(x, y), k), d);
        const Eigen::Vector3d dir = rt * Eigen::Vector3d(xu.x(), xu.y(), 1.0);
        const Eigen::Vector3d hit = origin + (1.0 / omega - origin.z()) / dir.z() * dir;
        const Eigen::Vector2d ref_px = normalized_to_pixel<double>(distort(dehomogenize(hit), d), k);
        img(y, x) = tex(ref_px.x(), ref_px.y());
      }
    }
    out.push_back(std::move(img));
  }
  return out;
}

std::vector<Posed> plane_poses(int n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1, 1);
  std::vector<Posed> poses;
  for (int i = 0; i < n; ++i) {
    Posed p;
    p.rotation = Rotationd(Eigen::Vector3d(u(rng), u(rng), u(rng)) * 2e-3);
    p.translation = Eigen::Vector3d(0.25 * u(rng), 0.25 * u(rng), 0.05 * u(rng));
    poses.push_back(p);
  }
  return poses;
}

double min_cost(const CostVolume& vol, int x, int y) {
  double best = CostVolume::kInvalid;
  for (int p = 0; p < vol.n_planes; ++p)
    if (vol.is_valid(p, x, y)) best = std::min<double>(best, vol.at(p, x, y));
  return best;
}

CostVolume random_volume(int w, int h, int n, std::mt19937_64& rng) {
  std::uniform_real_distribution<float> u(0, 1);
  CostVolume vol;
  vol.width = w;
  vol.height = h;
  vol.n_planes = n;
  vol.cost.resize(static_cast<std::size_t>(w) * h * n);
  vol.valid.resize(vol.cost.size());
  for (std::size_t i = 0; i < vol.cost.size(); ++i) {
    vol.valid[i] = u(rng) < 0.8f;
    vol.cost[i] = vol.valid[i] ? u(rng) : CostVolume::kInvalid;
  }
  return vol;
}

DepthMap constant_map(int w, int h, float value) {
  DepthMap m;
  m.width = w;
  m.height = h;
  m.inverse_depth = FloatMap::Constant(h, w, value);
  m.confidence = FloatMap::Zero(h, w);
  m.valid = MaskMap::Ones(h, w);
  return m;
}

}  // namespace

TEST_SUITE("plane_sweep") {

TEST_CASE("sample_planes") {
  const auto three = sample_planes(0.5, 1.5, 3);
  REQUIRE(three.size() == 3);
  CHECK(three[0] == 0.5);
  CHECK(three[1] == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(three[2] == 1.5);
  const auto one = sample_planes(0.2, 0.7, 1);
  REQUIRE(one.size() == 1);
  CHECK(one[0] == doctest::Approx(0.45).epsilon(1e-15));

  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(1e-3, 10);
  for (int t = 0; t < 50; ++t) {
    const double a = u(rng), b = a + u(rng);
    const auto p = sample_planes(a, b, 2 + t * 5);
    CHECK(p.front() == a);
    CHECK(p.back() == b);
    CHECK(std::is_sorted(p.begin(), p.end(), std::less_equal<>()));
    CHECK(std::adjacent_find(p.begin(), p.end()) == p.end());
  }
  for (auto [a, b, n] : {std::tuple{0.0, 1.0, 4}, {1.0, 1.0, 4}, {2.0, 1.0, 4}, {0.1, 1.0, 0}}) {
    try {
      (void)sample_planes(a, b, n);
      FAIL("expected BadRange");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::BadRange);
    }
  }
}

TEST_CASE("plane_range") {
  Eigen::VectorXd w(3);
  w << 0.5, 0.2, 0.4;
  const auto [lo, hi] = plane_range(w);
  CHECK(lo == doctest::Approx(0.18));
  CHECK(hi == doctest::Approx(0.55));
  CHECK_THROWS_AS(plane_range(Eigen::VectorXd()), Error);
}

TEST_CASE("identical frames have zero cost") {
  const BAState s = camera_state(48, 40, 50, {Posed::identity(), Posed::identity()});
  const GrayImage img = texture_image(48, 40, 3);
  const auto planes = sample_planes(0.2, 1.0, 5);
  const CostVolume vol = sweep(img, {img, img}, s, planes);
  CHECK(vol.n_planes == 5);
  int valid = 0;
  for (std::size_t i = 0; i < vol.cost.size(); ++i) {
    if (!vol.valid[i]) continue;
    ++valid;
    CHECK(vol.cost[i] <= 1e-12f);
  }
  CHECK(valid == static_cast<int>(vol.cost.size()));
}

TEST_CASE("a textured plane is found at its own index") {
  const auto planes = sample_planes(0.2, 0.6, 16);
  const int k = 7;
  BAState s = camera_state(160, 120, 160, plane_poses(6, 2));
  s.k1 = -0.05;
  const auto images = render_plane(s, planes[k], 11);
  const std::vector<GrayImage> frames(images.begin() + 1, images.end());
  const CostVolume vol = sweep(images[0], frames, s, planes);
  const DepthMap map = winner_take_all(vol, planes);
  int hits = 0, total = 0;
  for (int y = 10; y < s.height - 10; ++y) {
    for (int x = 10; x < s.width - 10; ++x) {
      ++total;
      hits += map.valid(y, x) && map.inverse_depth(y, x) == static_cast<float>(planes[k]);
    }
  }
  CHECK(hits >= 0.95 * total);

  SUBCASE("finer sampling never raises the minimum cost") {
    const auto fine = sample_planes(0.2, 0.6, 31);  // every second plane coincides
    const CostVolume vol_fine = sweep(images[0], frames, s, fine);
    int worse = 0;
    for (int y = 0; y < s.height; ++y)
      for (int x = 0; x < s.width; ++x)
        worse += min_cost(vol_fine, x, y) > min_cost(vol, x, y) + 1e-6;
    CHECK(worse == 0);
  }
  SUBCASE("global intensity offset leaves the cost unchanged") {
    std::vector<GrayImage> shifted;
    for (const auto& f : frames) shifted.push_back(f + 0.1f);
    const CostVolume vol_off = sweep(images[0] + 0.1f, shifted, s, planes);
    REQUIRE(vol_off.valid == vol.valid);
    double worst = 0;
    for (std::size_t i = 0; i < vol.cost.size(); ++i)
      if (vol.valid[i]) worst = std::max(worst, std::abs(double(vol.cost[i]) - vol_off.cost[i]));
    CHECK(worst <= 1e-6);
  }
  SUBCASE("downscaled images with full-resolution geometry") {
    std::vector<GrayImage> small;
    for (const auto& f : frames) small.push_back(downscale(f, 2));
    const DepthMap half = winner_take_all(sweep(downscale(images[0], 2), small, s, planes), planes);
    CHECK(half.width == 80);
    int near = 0, count = 0;
    for (int y = 5; y < 55; ++y)
      for (int x = 5; x < 75; ++x) {
        ++count;
        near += half.valid(y, x) && std::abs(half.inverse_depth(y, x) - planes[k]) <= planes[1] - planes[0] + 1e-6;
      }
    CHECK(near >= 0.9 * count);
  }
}

TEST_CASE("pixels whose warp leaves every frame are invalid") {
  Posed p;
  p.translation = Eigen::Vector3d(0.5, 0, 0);
  const BAState s = camera_state(64, 48, 64, {p, p});
  const GrayImage img = texture_image(64, 48, 4);
  const auto planes = sample_planes(0.5, 1.0, 4);
  const CostVolume vol = sweep(img, {img, img}, s, planes);
  // Shift is at least 16 px to the right for every plane.
  for (int y = 0; y < 48; ++y)
    for (int x = 48; x < 64; ++x)
      for (int q = 0; q < 4; ++q) {
        CHECK_FALSE(vol.is_valid(q, x, y));
        CHECK(vol.at(q, x, y) == CostVolume::kInvalid);
      }
  const DepthMap map = winner_take_all(vol, planes);
  CHECK(map.valid(10, 63) == 0);
  CHECK(map.inverse_depth(10, 63) == 0.0f);
  CHECK(map.valid(10, 5) == 1);
}

TEST_CASE("sweep errors") {
  const BAState s = camera_state(64, 48, 64, {Posed::identity(), Posed::identity()});
  const GrayImage img = texture_image(64, 48, 4);
  CHECK_THROWS_AS(sweep(img, {img}, s, {0.5}), Error);
  CHECK_THROWS_AS(sweep(img, {img, img}, s, {}), Error);
  CHECK_THROWS_AS(sweep(img, {img, texture_image(60, 48, 4)}, s, {0.5}), Error);
  const GrayImage odd = texture_image(40, 30, 4);
  CHECK_THROWS_AS(sweep(odd, {odd, odd}, s, {0.5}), Error);
}

TEST_CASE("winner_take_all") {
  SUBCASE("single plane") {
    CostVolume vol;
    vol.width = 3;
    vol.height = 2;
    vol.n_planes = 1;
    vol.cost.assign(6, 0.5f);
    vol.valid.assign(6, 1);
    const DepthMap map = winner_take_all(vol, {0.7});
    CHECK((map.inverse_depth == 0.7f).all());
    CHECK((map.confidence == 0.0f).all());
    CHECK(map.valid_count() == 6);
  }
  SUBCASE("confidence from the two best costs") {
    CostVolume vol;
    vol.width = vol.height = 1;
    vol.n_planes = 2;
    vol.cost = {1.0f, 3.0f};
    vol.valid = {1, 1};
    const DepthMap map = winner_take_all(vol, {0.3, 0.6});
    CHECK(map.inverse_depth(0, 0) == 0.3f);
    CHECK(map.confidence(0, 0) == doctest::Approx(2.0 / 3.0));
  }
  SUBCASE("ties go to the lower index") {
    CostVolume vol;
    vol.width = vol.height = 1;
    vol.n_planes = 3;
    vol.cost = {2.0f, 1.0f, 1.0f};
    vol.valid = {1, 1, 1};
    const DepthMap map = winner_take_all(vol, {0.1, 0.2, 0.3});
    CHECK(map.inverse_depth(0, 0) == 0.2f);
    CHECK(map.confidence(0, 0) == 0.0f);
  }
  SUBCASE("invariant under increasing transforms") {
    std::mt19937_64 rng(3);
    const auto planes = sample_planes(0.1, 1.0, 9);
    for (int t = 0; t < 5; ++t) {
      const CostVolume vol = random_volume(17, 13, 9, rng);
      CostVolume warped = vol;
      for (std::size_t i = 0; i < vol.cost.size(); ++i)
        if (vol.valid[i]) warped.cost[i] = std::exp(3.0f * vol.cost[i]) + vol.cost[i] * vol.cost[i];
      const DepthMap a = winner_take_all(vol, planes), b = winner_take_all(warped, planes);
      CHECK((a.inverse_depth == b.inverse_depth).all());
      CHECK((a.valid == b.valid).all());
      CHECK((a.confidence >= 0.0f).all());
      CHECK((a.confidence <= 1.0f).all());
    }
  }
  CHECK_THROWS_AS(winner_take_all(CostVolume{1, 1, 2, {0, 0}, {1, 1}}, {0.5}), Error);
}

TEST_CASE("median_refine") {
  SUBCASE("constant map is a fixed point") {
    const DepthMap m = constant_map(9, 7, 0.4f);
    const DepthMap r = median_refine(m, 2);
    CHECK((r.inverse_depth == m.inverse_depth).all());
    CHECK((median_refine(r, 2).inverse_depth == m.inverse_depth).all());
  }
  SUBCASE("single outlier is replaced") {
    DepthMap m = constant_map(9, 7, 0.4f);
    m.inverse_depth(3, 4) = 5.0f;
    CHECK((median_refine(m, 1).inverse_depth == 0.4f).all());
  }
  SUBCASE("all-invalid map stays invalid") {
    DepthMap m = constant_map(6, 5, 0.0f);
    m.valid.setZero();
    const DepthMap r = median_refine(m, 2);
    CHECK(r.valid_count() == 0);
  }
  SUBCASE("holes are filled only with enough support") {
    DepthMap m = constant_map(7, 7, 0.3f);
    m.valid(3, 3) = 0;
    m.inverse_depth(3, 3) = 0;
    DepthMap r = median_refine(m, 1);
    CHECK(r.valid(3, 3) == 1);
    CHECK(r.inverse_depth(3, 3) == 0.3f);
    m.valid.setZero();
    m.valid(0, 0) = 1;
    r = median_refine(m, 1);
    CHECK(r.valid(1, 1) == 0);
    CHECK(r.valid(0, 1) == 0);  // 1 of 6 in the truncated window
  }
  SUBCASE("output stays inside the valid input range") {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<float> u(0.2f, 0.9f);
    for (int t = 0; t < 5; ++t) {
      DepthMap m = constant_map(23, 17, 0.0f);
      float lo = 1e9f, hi = -1e9f;
      for (int y = 0; y < 17; ++y)
        for (int x = 0; x < 23; ++x) {
          m.valid(y, x) = u(rng) < 0.6f;
          m.inverse_depth(y, x) = m.valid(y, x) ? u(rng) : 0.0f;
          if (m.valid(y, x)) {
            lo = std::min(lo, m.inverse_depth(y, x));
            hi = std::max(hi, m.inverse_depth(y, x));
          }
        }
      const DepthMap r = median_refine(m, 2);
      for (int y = 0; y < 17; ++y)
        for (int x = 0; x < 23; ++x)
          if (r.valid(y, x)) {
            CHECK(r.inverse_depth(y, x) >= lo);
            CHECK(r.inverse_depth(y, x) <= hi);
          }
    }
  }
  CHECK_THROWS_AS(median_refine(constant_map(3, 3, 1.0f), 0), Error);
}

}  // TEST_SUITE
