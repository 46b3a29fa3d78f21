#include <doctest.h>

#include <random>

#include "mobintent/retrieval.hpp"
#include "mobintent/dtw.hpp"
#include "mobintent/worldgen.hpp"
#include "mobintent/travel_features.hpp"
#include "mobintent/clip.hpp"
#include "oracles.hpp"

using namespace mobintent;

namespace {

std::vector<Eigen::VectorXd> scalar_seq(std::initializer_list<double> values) {
  std::vector<Eigen::VectorXd> out;
  for (double v : values) {
    Eigen::VectorXd e(1);
    e << v;
    out.push_back(e);
  }
  return out;
}

std::vector<Eigen::VectorXd> random_seq(int len, int dim, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, 1.0);
  std::vector<Eigen::VectorXd> out;
  for (int i = 0; i < len; ++i) {
    Eigen::VectorXd v(dim);
    for (int d = 0; d < dim; ++d) v[d] = dist(rng);
    out.push_back(std::move(v));
  }
  return out;
}

}  // namespace

TEST_CASE("dtw basics: identity, single cell, symmetry") {
  auto a = scalar_seq({0.5, 1.5, -2.0});
  CHECK(dtw_distance(a, a) == 0.0);

  auto x = scalar_seq({3.0});
  auto y = scalar_seq({-1.25});
  CHECK(dtw_distance(x, y) == doctest::Approx(4.25));

  std::mt19937_64 rng(1);
  auto p = random_seq(4, 2, rng);
  auto q = random_seq(6, 2, rng);
  CHECK(dtw_distance(p, q) == doctest::Approx(dtw_distance(q, p)).epsilon(1e-12));
  CHECK(dtw_distance(p, q) >= 0.0);
}

TEST_CASE("dtw on short integer sequences matches the path-enumeration oracle") {
  // the duplicated-prefix pair: the optimal alignment repeats b_1, cost 0
  auto a = scalar_seq({0, 0, 1});
  auto b = scalar_seq({0, 1});
  const double expected = oracle::dtw_exhaustive(a, b);
  CHECK(expected == doctest::Approx(0.0));
  CHECK(dtw_distance(a, b) == doctest::Approx(expected).epsilon(1e-12));

  // a deletion that cannot ride along for free
  auto c = scalar_seq({0, 2});
  auto d = scalar_seq({1});
  CHECK(oracle::dtw_exhaustive(c, d) == doctest::Approx(2.0));
  CHECK(dtw_distance(c, d) == doctest::Approx(2.0));
}

TEST_CASE("dtw equals exhaustive enumeration on random short pairs") {
  std::mt19937_64 rng(42);
  std::uniform_int_distribution<int> len(1, 5);
  for (int trial = 0; trial < 100; ++trial) {
    auto a = random_seq(len(rng), 2, rng);
    auto b = random_seq(len(rng), 2, rng);
    CHECK(std::abs(dtw_distance(a, b) - oracle::dtw_exhaustive(a, b)) < 1e-9);
  }
}

TEST_CASE("dtw zero distance only for elementwise-equal continuous sequences") {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 50; ++trial) {
    auto a = random_seq(4, 2, rng);
    auto b = random_seq(4, 2, rng);
    CHECK(dtw_distance(a, b) > 0.0);
    CHECK(dtw_distance(a, a) == 0.0);
  }
}

TEST_CASE("dtw window semantics") {
  auto a = scalar_seq({0, 1, 2, 3, 4});
  auto b = scalar_seq({0, 1, 2, 3, 4});
  CHECK(dtw_distance(a, b, 1) == 0.0);

  auto c = scalar_seq({0, 1});
  CHECK_THROWS_AS(dtw_distance(a, c, 1), Error);  // window < |len difference|
  CHECK_NOTHROW(dtw_distance(a, c, 3));
  CHECK_THROWS_AS(dtw_distance(std::vector<Eigen::VectorXd>{}, b), Error);
}

namespace {

struct IndexFixture {
  World world;
  CorpusBundle corpora;
  IntentionModel im;
  VocabularyMatrix vocab = synth_vocabulary(64, 8, 3);

  IndexFixture() {
    WorldConfig wc;
    wc.source_cities = {"a", "b"};
    wc.target_city = "t";
    wc.locations_per_city = 6;
    wc.c_poi = 3;
    wc.c_road = 1;
    world = generate_world(wc, 4);

    auto spec = [&](const std::string& city, Scenario sc, int level, const std::string& prefix) {
      ScenarioSpec s;
      s.city = city;
      s.scenario = sc;
      s.disaster_ordinal = level;
      s.n_users = 10;
      s.min_length = 5;
      s.max_length = 7;
      s.user_prefix = prefix;
      return s;
    };
    corpora.d_ds = generate_trajectories(world, spec("a", Scenario::Disaster, 3, "ds_u"), 5);
    corpora.d_nt = generate_trajectories(world, spec("t", Scenario::Normal, 0, "nt_u"), 6);
    corpora.d_ds.tag = "src";
    corpora.d_nt.tag = "tgt";

    std::vector<TravelFeature> src_f, tgt_f;
    for (const auto& t : corpora.d_ds.trajectories)
      for (auto& f : extract_travel_features(t, world)) src_f.push_back(std::move(f));
    for (const auto& t : corpora.d_nt.trajectories)
      for (auto& f : extract_travel_features(t, world)) tgt_f.push_back(std::move(f));
    im.tca = fit_tca(src_f, tgt_f, 4, 1.0);
    std::vector<Eigen::VectorXd> pts;
    for (const auto* set : {&src_f, &tgt_f})
      for (const auto& f : *set)
        if (!f.is_immobility) pts.push_back(im.tca.project(f.values));
    im.space = fit_intention_clusters(pts, 4, 9);
    im.world_hash = world_hash(world);
  }
};

}  // namespace

TEST_CASE("build_index: counts, tags, determinism, empty case") {
  IndexFixture fx;
  TrajectoryIndex index = build_index({&fx.corpora.d_ds, &fx.corpora.d_nt}, fx.world, fx.im);
  CHECK(index.entries.size() == 20);
  for (const auto& e : index.entries) {
    if (e.city == "t") {
      CHECK_FALSE(e.from_source_city);
      CHECK(e.tag() == "target-normal");
    } else {
      CHECK(e.from_source_city);
      CHECK(e.tag() == "source-disaster[3]");
    }
    CHECK(e.classes.size() == static_cast<std::size_t>(e.vectors.rows()));
  }

  TrajectoryIndex again = build_index({&fx.corpora.d_ds, &fx.corpora.d_nt}, fx.world, fx.im);
  CHECK(index_to_string(again) == index_to_string(index));

  TrajectoryIndex empty = build_index({}, fx.world, fx.im);
  CHECK(empty.entries.empty());
  Eigen::MatrixXd q(1, 4);
  q.setZero();
  ReferenceSet refs = retrieve_references(empty, q, {3, "severe disaster"}, 3);
  CHECK(refs.source_refs.empty());
  CHECK(refs.target_refs.empty());
}

TEST_CASE("build_index rejects corpora from a different world") {
  IndexFixture fx;
  Corpus other = fx.corpora.d_ds;
  other.world_hash = "deadbeef";
  CHECK_THROWS_AS(build_index({&other}, fx.world, fx.im), Error);
}

TEST_CASE("retrieve: identity hit, filter semantics, exclusion") {
  IndexFixture fx;
  TrajectoryIndex index = build_index({&fx.corpora.d_ds, &fx.corpora.d_nt}, fx.world, fx.im);

  const IndexEntry& probe = index.entries.front();  // a source-disaster[3] entry
  ReferenceSet refs = retrieve_references(index, probe.vectors, {3, "severe disaster"}, 3);
  REQUIRE_FALSE(refs.source_refs.empty());
  CHECK(refs.source_refs.front().entry->trajectory_id == probe.trajectory_id);
  CHECK(refs.source_refs.front().distance == 0.0);
  for (const auto& r : refs.source_refs) {
    CHECK(r.entry->from_source_city);
    CHECK(r.entry->level.ordinal == 3);
  }
  for (const auto& r : refs.target_refs) {
    CHECK_FALSE(r.entry->from_source_city);
    CHECK(r.entry->level.ordinal != 3);
  }

  // no source entries at level 2: empty source refs, target refs unaffected
  ReferenceSet level2 = retrieve_references(index, probe.vectors, {2, "general disaster"}, 3);
  CHECK(level2.source_refs.empty());
  CHECK(level2.target_refs.size() == 3);

  // excluding the identity hit removes it
  ReferenceSet excl =
      retrieve_references(index, probe.vectors, {3, "severe disaster"}, 3, probe.trajectory_id);
  for (const auto& r : excl.source_refs)
    CHECK(r.entry->trajectory_id != probe.trajectory_id);
}

TEST_CASE("retrieve: top-k with hand-set distances") {
  // craft single-step entries at known distances from a zero query
  TrajectoryIndex index;
  for (int i = 0; i < 5; ++i) {
    IndexEntry e;
    e.trajectory_id = "e" + std::to_string(i);
    e.city = "src";
    e.from_source_city = true;
    e.scenario = Scenario::Disaster;
    e.level = {1, "minor disaster"};
    e.classes = {0};
    e.vectors = Eigen::MatrixXd::Zero(1, 2);
    e.vectors(0, 0) = 0.1 * (i + 1);  // distances 0.1 .. 0.5
    index.entries.push_back(std::move(e));
  }
  Eigen::MatrixXd query = Eigen::MatrixXd::Zero(1, 2);
  ReferenceSet refs = retrieve_references(index, query, {1, "minor disaster"}, 2);
  REQUIRE(refs.source_refs.size() == 2);
  CHECK(refs.source_refs[0].entry->trajectory_id == "e0");
  CHECK(refs.source_refs[0].distance == doctest::Approx(0.1));
  CHECK(refs.source_refs[1].entry->trajectory_id == "e1");
  CHECK(refs.source_refs[1].distance == doctest::Approx(0.2));
}

TEST_CASE("retrieve matches a full linear scan on random queries") {
  IndexFixture fx;
  TrajectoryIndex index = build_index({&fx.corpora.d_ds, &fx.corpora.d_nt}, fx.world, fx.im);
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 10; ++trial) {
    auto q = random_seq(3 + static_cast<int>(rng() % 3), 4, rng);
    Eigen::MatrixXd qm(static_cast<Eigen::Index>(q.size()), 4);
    for (std::size_t i = 0; i < q.size(); ++i) qm.row(static_cast<Eigen::Index>(i)) = q[i].transpose();

    ReferenceSet refs = retrieve_references(index, qm, {3, "severe disaster"}, 4);

    // reference scan over the source candidates
    std::vector<std::pair<double, std::string>> scan;
    for (const auto& e : index.entries)
      if (e.from_source_city && e.level.ordinal == 3)
        scan.push_back({dtw_distance(qm, e.vectors), e.trajectory_id});
    std::stable_sort(scan.begin(), scan.end());
    REQUIRE(refs.source_refs.size() == std::min<std::size_t>(4, scan.size()));
    for (std::size_t i = 0; i < refs.source_refs.size(); ++i)
      CHECK(refs.source_refs[i].distance == doctest::Approx(scan[i].first).epsilon(1e-12));
  }
}

TEST_CASE("index file round-trip") {
  IndexFixture fx;
  TrajectoryIndex index = build_index({&fx.corpora.d_ds, &fx.corpora.d_nt}, fx.world, fx.im);
  auto dir = std::filesystem::temp_directory_path() / "mobintent_index_test";
  std::filesystem::create_directories(dir);
  save_index(index, dir / "index.json");
  TrajectoryIndex loaded = load_index(dir / "index.json");
  CHECK(index_to_string(loaded) == index_to_string(index));
}

TEST_CASE("immobility steps sit far from centroids in the dtw feature space") {
  IndexFixture fx;
  // a trajectory that stays put produces immobility vectors; its DTW distance
  // to any mobile sequence dominates the centroid spread
  Eigen::MatrixXd stay(2, 4);
  stay.row(0) = fx.im.space.immobility_vector.transpose();
  stay.row(1) = fx.im.space.immobility_vector.transpose();
  Eigen::MatrixXd move(2, 4);
  move.row(0) = fx.im.space.centroids.row(0);
  move.row(1) = fx.im.space.centroids.row(1);
  double max_pair = 0.0;
  for (int a = 0; a < fx.im.space.n_intentions; ++a)
    for (int b = a + 1; b < fx.im.space.n_intentions; ++b)
      max_pair = std::max(max_pair,
                          (fx.im.space.centroids.row(a) - fx.im.space.centroids.row(b)).norm());
  CHECK(dtw_distance(stay, move) > 2.0 * max_pair);
  CHECK(dtw_distance(stay, stay) == 0.0);
}
