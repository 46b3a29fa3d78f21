#include "mobintent/intention.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

#include "mobintent/corpus_io.hpp"
#include "mobintent/jsonio.hpp"

namespace mobintent {

namespace {

int nearest_row(const Eigen::MatrixXd& rows, const Eigen::VectorXd& x) {
  int best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (Eigen::Index i = 0; i < rows.rows(); ++i) {
    double d = (rows.row(i).transpose() - x).squaredNorm();
    if (d < best_d) {  // strict: ties stay with the lowest index
      best_d = d;
      best = static_cast<int>(i);
    }
  }
  return best;
}

}  // namespace

int IntentionSpace::assign(const Eigen::VectorXd& transformed) const {
  require(transformed.size() == centroids.cols(), "dimension mismatch in intention assignment");
  return nearest_row(centroids, transformed);
}

Eigen::VectorXd IntentionSpace::class_vector(int cls) const {
  require(cls >= 0 && cls <= n_intentions, "intention class out of range");
  if (cls == immobility_class()) return immobility_vector;
  return centroids.row(cls).transpose();
}

IntentionSpace fit_intention_clusters(const std::vector<Eigen::VectorXd>& transformed,
                                      int n_intentions, std::uint64_t seed,
                                      double immobility_distance_factor,
                                      bool rescale_to_unit_rms) {
  require(n_intentions >= 2, "need at least 2 intentions");
  require(static_cast<int>(transformed.size()) >= n_intentions,
          "sample count must be >= the intention count");
  const Eigen::Index dim = transformed.front().size();
  const int n = static_cast<int>(transformed.size());

  double feature_scale = 1.0;
  if (rescale_to_unit_rms) {
    double sq = 0.0;
    for (const auto& v : transformed) sq += v.squaredNorm();
    double rms = std::sqrt(sq / (static_cast<double>(n) * static_cast<double>(dim)));
    if (rms > 1e-12) feature_scale = 1.0 / rms;
  }

  {
    std::set<std::vector<double>> distinct;
    for (const auto& v : transformed) {
      distinct.insert(std::vector<double>(v.data(), v.data() + v.size()));
      if (static_cast<int>(distinct.size()) >= n_intentions) break;
    }
    require(static_cast<int>(distinct.size()) >= n_intentions,
            "fewer distinct points than intention clusters");
  }

  Eigen::MatrixXd points(n, dim);
  for (int i = 0; i < n; ++i) {
    require(transformed[static_cast<std::size_t>(i)].size() == dim, "ragged feature dimensions");
    points.row(i) = feature_scale * transformed[static_cast<std::size_t>(i)].transpose();
  }

  // k-means++ seeding
  auto rng = make_rng(derive_seed(seed, "kmeans-init"));
  std::vector<int> centers;
  centers.push_back(static_cast<int>(rng() % static_cast<std::uint64_t>(n)));
  Eigen::VectorXd d2 = (points.rowwise() - points.row(centers[0])).rowwise().squaredNorm();
  while (static_cast<int>(centers.size()) < n_intentions) {
    double total = d2.sum();
    int pick;
    if (total <= 0.0) {
      pick = static_cast<int>(rng() % static_cast<std::uint64_t>(n));
    } else {
      std::uniform_real_distribution<double> unit(0.0, total);
      double r = unit(rng);
      pick = n - 1;
      for (int i = 0; i < n; ++i) {
        r -= d2[i];
        if (r <= 0.0) {
          pick = i;
          break;
        }
      }
    }
    centers.push_back(pick);
    d2 = d2.cwiseMin((points.rowwise() - points.row(pick)).rowwise().squaredNorm());
  }

  Eigen::MatrixXd means(n_intentions, dim);
  for (int c = 0; c < n_intentions; ++c) means.row(c) = points.row(centers[static_cast<std::size_t>(c)]);

  std::vector<int> assign(static_cast<std::size_t>(n), -1);
  for (int iter = 0; iter < 200; ++iter) {
    bool changed = false;
    for (int i = 0; i < n; ++i) {
      int a = nearest_row(means, points.row(i).transpose());
      if (a != assign[static_cast<std::size_t>(i)]) {
        assign[static_cast<std::size_t>(i)] = a;
        changed = true;
      }
    }
    std::vector<int> count(static_cast<std::size_t>(n_intentions), 0);
    Eigen::MatrixXd sum = Eigen::MatrixXd::Zero(n_intentions, dim);
    for (int i = 0; i < n; ++i) {
      sum.row(assign[static_cast<std::size_t>(i)]) += points.row(i);
      ++count[static_cast<std::size_t>(assign[static_cast<std::size_t>(i)])];
    }
    for (int c = 0; c < n_intentions; ++c) {
      if (count[static_cast<std::size_t>(c)] == 0) {
        // reseed an empty cluster at the point farthest from its mean
        Eigen::Index far;
        Eigen::VectorXd dist(n);
        for (int i = 0; i < n; ++i)
          dist[i] = (points.row(i).transpose() -
                     means.row(assign[static_cast<std::size_t>(i)]).transpose())
                        .squaredNorm();
        dist.maxCoeff(&far);
        means.row(c) = points.row(far);
        changed = true;
      } else {
        means.row(c) = sum.row(c) / count[static_cast<std::size_t>(c)];
      }
    }
    if (!changed) break;
  }

  // medoid extraction: the central sample of each cluster stands for it
  IntentionSpace space;
  space.n_intentions = n_intentions;
  space.seed = seed;
  space.immobility_distance_factor = immobility_distance_factor;
  space.feature_scale = feature_scale;
  space.centroids.resize(n_intentions, dim);
  for (int c = 0; c < n_intentions; ++c) {
    int best = -1;
    double best_d = std::numeric_limits<double>::infinity();
    for (int i = 0; i < n; ++i) {
      if (assign[static_cast<std::size_t>(i)] != c) continue;
      double d = (points.row(i) - means.row(c)).squaredNorm();
      if (d < best_d) {
        best_d = d;
        best = i;
      }
    }
    require(best >= 0, "internal: empty cluster after convergence");
    space.centroids.row(c) = points.row(best);
  }

  for (int a = 0; a < n_intentions; ++a)
    for (int b = a + 1; b < n_intentions; ++b)
      require((space.centroids.row(a) - space.centroids.row(b)).norm() > 0.0,
              "duplicate medoids; reduce the intention count");

  // reserved immobility vector: at least factor * (max centroid pair distance)
  // from every centroid
  double max_pair = 0.0;
  for (int a = 0; a < n_intentions; ++a)
    for (int b = a + 1; b < n_intentions; ++b)
      max_pair = std::max(max_pair, (space.centroids.row(a) - space.centroids.row(b)).norm());
  Eigen::VectorXd center = space.centroids.colwise().mean().transpose();
  double max_dev = 0.0;
  for (int c = 0; c < n_intentions; ++c)
    max_dev = std::max(max_dev, (space.centroids.row(c).transpose() - center).norm());
  Eigen::Index spread_axis;
  (space.centroids.colwise().maxCoeff() - space.centroids.colwise().minCoeff())
      .maxCoeff(&spread_axis);
  Eigen::VectorXd dir = Eigen::VectorXd::Zero(dim);
  dir[spread_axis] = 1.0;
  space.immobility_vector = center + (immobility_distance_factor * max_pair + max_dev) * dir;
  return space;
}

IntentionSequence map_to_intentions(const std::vector<TravelFeature>& features,
                                    const TcaTransform& transform, const IntentionSpace& space) {
  IntentionSequence seq;
  seq.reserve(features.size());
  for (const auto& f : features) {
    IntentionStep step;
    step.is_immobility = f.is_immobility;
    if (f.is_immobility) {
      step.cls = space.immobility_class();
      step.vector = space.immobility_vector;
    } else {
      Eigen::VectorXd z = space.feature_scale * transform.project(f.values);
      step.cls = space.assign(z);
      step.vector = space.class_vector(step.cls);
    }
    seq.push_back(std::move(step));
  }
  return seq;
}

double silhouette_score(const std::vector<Eigen::VectorXd>& points, const IntentionSpace& space) {
  if (points.size() < 2 || space.n_intentions < 2) return 0.0;
  const int n = static_cast<int>(points.size());
  std::vector<int> label(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) label[static_cast<std::size_t>(i)] = space.assign(points[static_cast<std::size_t>(i)]);
  double total = 0.0;
  int used = 0;
  for (int i = 0; i < n; ++i) {
    std::vector<double> mean_d(static_cast<std::size_t>(space.n_intentions), 0.0);
    std::vector<int> count(static_cast<std::size_t>(space.n_intentions), 0);
    for (int j = 0; j < n; ++j) {
      if (i == j) continue;
      double d = (points[static_cast<std::size_t>(i)] - points[static_cast<std::size_t>(j)]).norm();
      mean_d[static_cast<std::size_t>(label[static_cast<std::size_t>(j)])] += d;
      ++count[static_cast<std::size_t>(label[static_cast<std::size_t>(j)])];
    }
    int own = label[static_cast<std::size_t>(i)];
    if (count[static_cast<std::size_t>(own)] == 0) continue;
    double a = mean_d[static_cast<std::size_t>(own)] / count[static_cast<std::size_t>(own)];
    double b = std::numeric_limits<double>::infinity();
    for (int c = 0; c < space.n_intentions; ++c) {
      if (c == own || count[static_cast<std::size_t>(c)] == 0) continue;
      b = std::min(b, mean_d[static_cast<std::size_t>(c)] / count[static_cast<std::size_t>(c)]);
    }
    if (!std::isfinite(b)) continue;
    total += (b - a) / std::max(a, b);
    ++used;
  }
  return used > 0 ? total / used : 0.0;
}

std::string intention_model_to_string(const IntentionModel& model) {
  nlohmann::ordered_json j;
  j["format_version"] = kFormatVersion;
  j["kind"] = "intention_model";
  j["manifest"] = {{"n_intentions", model.space.n_intentions},
                   {"m", model.tca.components()},
                   {"mu", model.tca.mu},
                   {"seed", model.space.seed},
                   {"world_hash", model.world_hash}};
  j["standardizer"] = {{"mean", vector_to_json(model.tca.standardizer.mean)},
                       {"stddev", vector_to_json(model.tca.standardizer.stddev)}};
  j["tca"] = {{"basis", matrix_to_json(model.tca.basis)},
              {"n_source", model.tca.n_source},
              {"n_target", model.tca.n_target},
              {"mmd_before", model.tca.mmd_before},
              {"mmd_after", model.tca.mmd_after}};
  j["space"] = {{"centroids", matrix_to_json(model.space.centroids)},
                {"immobility_vector", vector_to_json(model.space.immobility_vector)},
                {"immobility_distance_factor", model.space.immobility_distance_factor},
                {"feature_scale", model.space.feature_scale}};
  return j.dump(2) + "\n";
}

void save_intention_model(const IntentionModel& model, const std::filesystem::path& path) {
  write_text_file(path, intention_model_to_string(model));
}

IntentionModel load_intention_model(const std::filesystem::path& path) {
  nlohmann::ordered_json j;
  try {
    j = nlohmann::ordered_json::parse(read_text_file(path));
  } catch (const nlohmann::json::exception& e) {
    fail("intention model " + path.string() + ": " + e.what());
  }
  require(j.value("format_version", -1) == kFormatVersion,
          "intention model: format_version mismatch");
  IntentionModel model;
  model.world_hash = j.at("manifest").at("world_hash").get<std::string>();
  model.tca.mu = j.at("manifest").at("mu").get<double>();
  model.tca.standardizer.mean = vector_from_json(j.at("standardizer").at("mean"));
  model.tca.standardizer.stddev = vector_from_json(j.at("standardizer").at("stddev"));
  model.tca.basis = matrix_from_json(j.at("tca").at("basis"));
  model.tca.n_source = j.at("tca").at("n_source").get<int>();
  model.tca.n_target = j.at("tca").at("n_target").get<int>();
  model.tca.mmd_before = j.at("tca").at("mmd_before").get<double>();
  model.tca.mmd_after = j.at("tca").at("mmd_after").get<double>();
  model.space.n_intentions = j.at("manifest").at("n_intentions").get<int>();
  model.space.seed = j.at("manifest").at("seed").get<std::uint64_t>();
  model.space.centroids = matrix_from_json(j.at("space").at("centroids"));
  model.space.immobility_vector = vector_from_json(j.at("space").at("immobility_vector"));
  model.space.immobility_distance_factor =
      j.at("space").at("immobility_distance_factor").get<double>();
  model.space.feature_scale = j.at("space").value("feature_scale", 1.0);
  return model;
}

}  // namespace mobintent
