#include <doctest.h>

#include <Eigen/LU>
#include <random>

#include "mobintent/tca.hpp"
#include "mobintent/worldgen.hpp"
#include "oracles.hpp"

using namespace mobintent;

namespace {

std::vector<TravelFeature> gaussian_features(int n, const Eigen::VectorXd& mean, double sigma,
                                             std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist(0.0, sigma);
  std::vector<TravelFeature> out;
  for (int i = 0; i < n; ++i) {
    TravelFeature f;
    f.values = mean;
    for (Eigen::Index d = 0; d < mean.size(); ++d) f.values[d] += dist(rng);
    out.push_back(std::move(f));
  }
  return out;
}

Eigen::MatrixXd project_all(const TcaTransform& tf, const std::vector<TravelFeature>& fs) {
  Eigen::MatrixXd rows(static_cast<Eigen::Index>(fs.size()), tf.components());
  for (std::size_t i = 0; i < fs.size(); ++i)
    rows.row(static_cast<Eigen::Index>(i)) = tf.project(fs[i].values).transpose();
  return rows;
}

Eigen::MatrixXd standardize_all(const TcaTransform& tf, const std::vector<TravelFeature>& fs) {
  Eigen::MatrixXd rows(static_cast<Eigen::Index>(fs.size()), fs.front().values.size());
  for (std::size_t i = 0; i < fs.size(); ++i)
    rows.row(static_cast<Eigen::Index>(i)) = tf.standardizer.apply(fs[i].values).transpose();
  return rows;
}

}  // namespace

TEST_CASE("travel features: immobility flag and definitional layout") {
  // hand-built world: c_poi = 2, c_road = 1
  World world;
  world.c_poi = 2;
  world.c_road = 1;
  world.source_cities = {"x", "y"};
  world.target_city = "t";
  City city;
  city.name = "x";
  Location a;
  a.id = "A";
  a.poi_counts = {2, 0};
  a.transport_distance = 0.5;
  Location b;
  b.id = "B";
  b.poi_counts = {0, 3};
  b.transport_distance = 1.5;
  city.locations = {a, b};
  city.road_counts[{0, 0}] = {0};
  city.road_counts[{0, 1}] = {1};
  city.road_counts[{1, 0}] = {2};
  city.road_counts[{1, 1}] = {0};
  city.rebuild_index();
  world.cities.push_back(city);

  Trajectory same;
  same.user_id = "u";
  same.city = "x";
  same.records = {{0, "A"}, {1, "A"}};
  auto fs = extract_travel_features(same, world);
  CHECK(fs.size() == 1);
  CHECK(fs[0].is_immobility);

  Trajectory move;
  move.user_id = "u";
  move.city = "x";
  move.records = {{0, "A"}, {1, "B"}};
  auto fm = extract_travel_features(move, world);
  CHECK_FALSE(fm[0].is_immobility);
  Eigen::VectorXd expected(7);
  expected << 2, 0, 0.5, 0, 3, 1.5, 1;
  CHECK(fm[0].values.isApprox(expected));

  Trajectory longer;
  longer.user_id = "u";
  longer.city = "x";
  longer.records = {{0, "A"}, {1, "B"}, {2, "A"}, {3, "A"}, {4, "B"}};
  CHECK(extract_travel_features(longer, world).size() == 4);

  Trajectory unknown;
  unknown.user_id = "u";
  unknown.city = "x";
  unknown.records = {{0, "A"}, {1, "Z"}};
  CHECK_THROWS_AS(extract_travel_features(unknown, world), Error);
}

TEST_CASE("tca: identical source and target sets give zero projected mmd") {
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(4);
  auto features = gaussian_features(40, mean, 1.0, 7);
  TcaTransform tf = fit_tca(features, features, 2, 1.0);
  Eigen::MatrixXd ps = project_all(tf, features);
  CHECK(mmd_linear(ps, ps) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(tf.mmd_after <= 1e-9);
}

TEST_CASE("tca: shift along one axis is suppressed") {
  Eigen::VectorXd m0 = Eigen::VectorXd::Zero(2);
  Eigen::VectorXd m1(2);
  m1 << 0.0, 3.0;  // shift along axis 1
  auto src = gaussian_features(80, m0, 1.0, 3);
  auto tgt = gaussian_features(80, m1, 1.0, 4);
  TcaTransform tf = fit_tca(src, tgt, 1, 1.0);

  Eigen::MatrixXd src_std = standardize_all(tf, src), tgt_std = standardize_all(tf, tgt);
  Eigen::MatrixXd src_p = project_all(tf, src), tgt_p = project_all(tf, tgt);
  double before = oracle::mmd_linear(src_std, tgt_std);
  double after = oracle::mmd_linear(src_p, tgt_p);
  CHECK(after < before);
  CHECK(tf.mmd_before == doctest::Approx(before).epsilon(1e-9));
  CHECK(tf.mmd_after == doctest::Approx(after).epsilon(1e-9));
}

TEST_CASE("tca: full-dimensional projection has full rank") {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> dist(0.0, 1.0);
  auto make = [&](int n, double shift) {
    std::vector<TravelFeature> fs;
    for (int i = 0; i < n; ++i) {
      TravelFeature f;
      f.values.resize(3);
      for (int d = 0; d < 3; ++d) f.values[d] = dist(rng) + shift;
      fs.push_back(std::move(f));
    }
    return fs;
  };
  auto src = make(30, 0.0), tgt = make(30, 0.5);
  TcaTransform tf = fit_tca(src, tgt, 3, 1.0);
  Eigen::FullPivLU<Eigen::MatrixXd> lu(tf.basis);
  CHECK(lu.rank() == 3);
}

TEST_CASE("tca: projected mmd never exceeds standardized mmd on random shifted gaussians") {
  std::mt19937_64 seed_rng(123);
  for (int trial = 0; trial < 25; ++trial) {
    std::mt19937_64 rng(seed_rng());
    std::uniform_int_distribution<int> dim_dist(2, 6);
    std::uniform_real_distribution<double> shift_dist(-2.0, 2.0);
    int dim = dim_dist(rng);
    Eigen::VectorXd m0 = Eigen::VectorXd::Zero(dim);
    Eigen::VectorXd m1(dim);
    for (int d = 0; d < dim; ++d) m1[d] = shift_dist(rng);
    auto src = gaussian_features(50, m0, 1.0, rng());
    auto tgt = gaussian_features(50, m1, 1.0, rng());
    int m = 1 + static_cast<int>(rng() % static_cast<unsigned>(dim));
    TcaTransform tf = fit_tca(src, tgt, m, 1.0);
    double before = oracle::mmd_linear(standardize_all(tf, src), standardize_all(tf, tgt));
    double after = oracle::mmd_linear(project_all(tf, src), project_all(tf, tgt));
    CHECK(after <= before + 1e-6);
  }
}

TEST_CASE("tca: library mmd agrees with the double-sum oracle") {
  std::mt19937_64 rng(17);
  std::normal_distribution<double> dist(0.0, 1.0);
  Eigen::MatrixXd a(12, 3), b(9, 3);
  for (Eigen::Index i = 0; i < a.size(); ++i) a.data()[i] = dist(rng);
  for (Eigen::Index i = 0; i < b.size(); ++i) b.data()[i] = dist(rng);
  CHECK(mmd_linear(a, b) == doctest::Approx(oracle::mmd_linear(a, b)).epsilon(1e-10));
}

TEST_CASE("apply_tca: linearity and flag pass-through") {
  Eigen::VectorXd mean = Eigen::VectorXd::Ones(3);
  auto src = gaussian_features(30, mean, 1.0, 9);
  auto tgt = gaussian_features(30, mean, 1.0, 10);
  TcaTransform tf = fit_tca(src, tgt, 2, 1.0);

  // the overall sample mean maps to zero under standardization
  Eigen::MatrixXd all(60, 3);
  for (int i = 0; i < 30; ++i) all.row(i) = src[static_cast<std::size_t>(i)].values.transpose();
  for (int i = 0; i < 30; ++i)
    all.row(30 + i) = tgt[static_cast<std::size_t>(i)].values.transpose();
  Eigen::VectorXd sample_mean = all.colwise().mean().transpose();
  CHECK(tf.project(sample_mean).norm() == doctest::Approx(0.0).epsilon(1e-9));

  // raw projection is linear
  Eigen::VectorXd x(3);
  x << 0.3, -1.2, 0.7;
  CHECK(tf.project(2.0 * x, false).isApprox(2.0 * tf.project(x, false), 1e-12));

  std::vector<TravelFeature> mixed = {src[0], src[1]};
  mixed[1].is_immobility = true;
  auto mapped = apply_tca(tf, mixed);
  CHECK_FALSE(mapped[0].is_immobility);
  CHECK(mapped[1].is_immobility);

  TravelFeature wrong;
  wrong.values = Eigen::VectorXd::Zero(5);
  CHECK_THROWS_AS(apply_tca(tf, {wrong}), Error);
}

TEST_CASE("fit_tca input validation") {
  auto some = gaussian_features(10, Eigen::VectorXd::Zero(3), 1.0, 1);
  CHECK_THROWS_AS(fit_tca({}, some, 1, 1.0), Error);
  CHECK_THROWS_AS(fit_tca(some, {}, 1, 1.0), Error);
  CHECK_THROWS_AS(fit_tca(some, some, 0, 1.0), Error);
  CHECK_THROWS_AS(fit_tca(some, some, 4, 1.0), Error);  // m > feature dim
}

TEST_CASE("fit_tca rejects m beyond the usable rank") {
  // all points identical: centered kernel is zero, no usable components
  std::vector<TravelFeature> flat;
  for (int i = 0; i < 8; ++i) {
    TravelFeature f;
    f.values = Eigen::VectorXd::Ones(3);
    flat.push_back(std::move(f));
  }
  CHECK_THROWS_AS(fit_tca(flat, flat, 1, 1.0), Error);
}
