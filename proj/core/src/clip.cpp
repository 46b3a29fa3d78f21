#include "mobintent/clip.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "mobintent/corpus_io.hpp"
#include "mobintent/jsonio.hpp"
#include "mobintent/travel_features.hpp"

namespace mobintent {

void ClipConfig::validate() const {
  require(n_prototypes >= 1, "n_prototypes must be >= 1");
  require(width >= 2 && width % heads == 0, "width must be a positive multiple of heads");
  require(blocks >= 1 && heads >= 1, "need at least one block and head");
  require(d_k >= 1, "d_k must be >= 1");
  require(temp_infonce > 0.0 && temp_class > 0.0, "temperatures must be positive");
  require(batch_size >= 2, "batch size must be >= 2 (in-batch negatives required)");
  require(epochs >= 0 && lr > 0.0, "bad optimizer settings");
}

Eigen::MatrixXd build_prototypes(const Eigen::MatrixXd& vocab, const Eigen::MatrixXd& h) {
  require(h.cols() == vocab.rows(), "h must weight all vocabulary rows");
  require(h.rows() < vocab.rows(), "prototype count must be smaller than the vocabulary");
  Eigen::MatrixXd p = h * vocab;
  require(p.allFinite(), "prototype matrix is not finite");
  return p;
}

Eigen::MatrixXd language_project(const Eigen::MatrixXd& lifted_queries, const Eigen::MatrixXd& p,
                                 double d_k, Eigen::MatrixXd* weights_out) {
  require(lifted_queries.cols() == p.cols(), "query/prototype dimension mismatch");
  require(lifted_queries.allFinite() && p.allFinite(), "non-finite inputs to language_project");
  Eigen::MatrixXd scores = lifted_queries * p.transpose() / std::sqrt(d_k);
  Eigen::MatrixXd weights(scores.rows(), scores.cols());
  for (Eigen::Index r = 0; r < scores.rows(); ++r) {
    Eigen::ArrayXd row = scores.row(r).array();
    row -= row.maxCoeff();
    row = row.exp();
    weights.row(r) = (row / row.sum()).matrix();
  }
  if (weights_out) *weights_out = weights;
  return weights * p;
}

namespace {

Eigen::MatrixXd positional_encoding(Eigen::Index steps, Eigen::Index width) {
  Eigen::MatrixXd pe(steps, width);
  for (Eigen::Index t = 0; t < steps; ++t)
    for (Eigen::Index i = 0; i < width; ++i) {
      double angle = static_cast<double>(t) /
                     std::pow(10000.0, 2.0 * static_cast<double>(i / 2) / static_cast<double>(width));
      pe(t, i) = (i % 2 == 0) ? std::sin(angle) : std::cos(angle);
    }
  return pe;
}

}  // namespace

IntentionClipModel::IntentionClipModel(int feature_dim, Standardizer standardizer,
                                       Eigen::MatrixXd centroids,
                                       Eigen::VectorXd immobility_vector, ClipConfig config,
                                       const VocabularyMatrix& vocab)
    : feature_dim_(feature_dim),
      standardizer_(std::move(standardizer)),
      centroids_(std::move(centroids)),
      immobility_vector_(std::move(immobility_vector)),
      config_(std::move(config)),
      vocab_(vocab.v),
      vocab_hash_(vocab.hash()) {
  config_.validate();
  require(feature_dim_ >= 1, "feature dimension must be >= 1");
  require(centroids_.rows() >= 1, "need at least one intention centroid");
  require(config_.n_prototypes < vocab.n_vocab(),
          "prototype count must be smaller than the vocabulary");

  const int w = config_.width;
  const int dv = vocab.dim();
  const int m = static_cast<int>(centroids_.cols());
  auto rng = make_rng(derive_seed(config_.seed, "clip-init"));

  auto gauss = [&](const std::string& name, Eigen::Index r, Eigen::Index c, double fan_in) {
    Eigen::MatrixXd& p = params_.declare(name, r, c);
    ad::init_gaussian(p, rng, 1.0 / std::sqrt(fan_in));
  };

  gauss("enc.in_w", feature_dim_, w, feature_dim_);
  params_.declare("enc.in_b", 1, w);
  for (int b = 0; b < config_.blocks; ++b) {
    const std::string pre = "enc.b" + std::to_string(b) + ".";
    gauss(pre + "wq", w, w, w);
    gauss(pre + "wk", w, w, w);
    gauss(pre + "wv", w, w, w);
    gauss(pre + "wo", w, w, w);
    params_.declare(pre + "ln1_g", 1, w).setOnes();
    params_.declare(pre + "ln1_b", 1, w);
    gauss(pre + "ffn_w1", w, 2 * w, w);
    params_.declare(pre + "ffn_b1", 1, 2 * w);
    gauss(pre + "ffn_w2", 2 * w, w, 2 * w);
    params_.declare(pre + "ffn_b2", 1, w);
    params_.declare(pre + "ln2_g", 1, w).setOnes();
    params_.declare(pre + "ln2_b", 1, w);
  }
  gauss("out.w", w, dv, w);
  params_.declare("out.b", 1, dv);
  gauss("proto.h", config_.n_prototypes, vocab.n_vocab(), vocab.n_vocab());
  gauss("lift.w", m, dv, m);
  params_.declare("lift.b", 1, dv);
  params_.declare("immob.e", 1, dv) =
      vocab.phrase_embedding(config_.stay_still_token_ids).transpose();
}

ad::Var IntentionClipModel::encode(ad::Tape& tape, const Eigen::MatrixXd& prefix) const {
  require(prefix.rows() >= 1, "empty travel-feature sequence");
  require(prefix.cols() == feature_dim_, "feature dimension mismatch");
  const int w = config_.width;
  const int dh = w / config_.heads;

  ad::Var x = tape.constant(standardizer_.apply_rows(prefix));
  x = ad::add_rowvec(x * params_.use(tape, "enc.in_w"), params_.use(tape, "enc.in_b"));
  x = ad::add(x, tape.constant(positional_encoding(prefix.rows(), w)));

  for (int b = 0; b < config_.blocks; ++b) {
    const std::string pre = "enc.b" + std::to_string(b) + ".";
    ad::Var q = x * params_.use(tape, pre + "wq");
    ad::Var k = x * params_.use(tape, pre + "wk");
    ad::Var v = x * params_.use(tape, pre + "wv");
    std::vector<ad::Var> heads;
    for (int h = 0; h < config_.heads; ++h) {
      ad::Var qh = ad::slice_cols(q, h * dh, dh);
      ad::Var kh = ad::slice_cols(k, h * dh, dh);
      ad::Var vh = ad::slice_cols(v, h * dh, dh);
      ad::Var scores = ad::scale(qh * ad::transpose(kh), 1.0 / std::sqrt(dh));
      heads.push_back(ad::softmax_rows(scores) * vh);
    }
    ad::Var ctx = ad::concat_cols(heads) * params_.use(tape, pre + "wo");
    x = ad::layernorm_rows(ad::add(x, ctx), params_.use(tape, pre + "ln1_g"),
                           params_.use(tape, pre + "ln1_b"));
    ad::Var ff = ad::add_rowvec(x * params_.use(tape, pre + "ffn_w1"),
                                params_.use(tape, pre + "ffn_b1"));
    ff = ad::add_rowvec(ad::relu(ff) * params_.use(tape, pre + "ffn_w2"),
                        params_.use(tape, pre + "ffn_b2"));
    x = ad::layernorm_rows(ad::add(x, ff), params_.use(tape, pre + "ln2_g"),
                           params_.use(tape, pre + "ln2_b"));
  }
  ad::Var pooled = ad::mean_rows(x);
  return ad::add_rowvec(pooled * params_.use(tape, "out.w"), params_.use(tape, "out.b"));
}

ad::Var IntentionClipModel::prototypes(ad::Tape& tape) const {
  return params_.use(tape, "proto.h") * tape.constant(vocab_);
}

ad::Var IntentionClipModel::project_rows(ad::Tape& tape, ad::Var lifted, ad::Var protos) const {
  ad::Var scores =
      ad::scale(lifted * ad::transpose(protos), 1.0 / std::sqrt(static_cast<double>(config_.d_k)));
  return ad::softmax_rows(scores) * protos;
}

ad::Var IntentionClipModel::anchors(ad::Tape& tape, ad::Var protos) const {
  ad::Var lifted = ad::add_rowvec(tape.constant(centroids_) * params_.use(tape, "lift.w"),
                                  params_.use(tape, "lift.b"));
  ad::Var projected = project_rows(tape, lifted, protos);
  return ad::concat_rows({projected, params_.use(tape, "immob.e")});
}

Eigen::MatrixXd IntentionClipModel::prototypes_eval() const {
  return build_prototypes(vocab_, params_.value("proto.h"));
}

Eigen::MatrixXd IntentionClipModel::all_class_anchors() const {
  Eigen::MatrixXd lifted = (centroids_ * params_.value("lift.w")).rowwise() +
                           params_.value("lift.b").row(0);
  Eigen::MatrixXd projected = language_project(lifted, prototypes_eval(), config_.d_k);
  Eigen::MatrixXd out(projected.rows() + 1, projected.cols());
  out.topRows(projected.rows()) = projected;
  out.bottomRows(1) = params_.value("immob.e");
  return out;
}

Eigen::VectorXd IntentionClipModel::class_anchor(int cls) const {
  require(cls >= 0 && cls <= n_intentions(), "class out of range");
  return all_class_anchors().row(cls).transpose();
}

IntentionPrediction IntentionClipModel::predict(const Eigen::MatrixXd& prefix_features) const {
  ad::Tape tape;
  ad::Var y = encode(tape, prefix_features);
  IntentionPrediction pred;
  pred.embedding = y.value().row(0).transpose();

  Eigen::MatrixXd anchors_m = all_class_anchors();
  Eigen::VectorXd yn = pred.embedding / std::max(pred.embedding.norm(), 1e-12);
  pred.logits.resize(anchors_m.rows());
  for (Eigen::Index c = 0; c < anchors_m.rows(); ++c) {
    Eigen::VectorXd a = anchors_m.row(c).transpose();
    a /= std::max(a.norm(), 1e-12);
    pred.logits[c] = yn.dot(a) / config_.temp_class;
  }
  Eigen::Index best;
  pred.logits.maxCoeff(&best);
  pred.cls = static_cast<int>(best);
  return pred;
}

ad::Var IntentionClipModel::batch_loss(ad::Tape& tape, std::span<const ClipSample> batch) const {
  require(batch.size() >= 2, "batch size must be >= 2 (in-batch negatives required)");

  std::vector<ad::Var> y_rows;
  y_rows.reserve(batch.size());
  for (const auto& s : batch) y_rows.push_back(encode(tape, s.prefix_features));
  ad::Var y = ad::concat_rows(y_rows);

  ad::Var protos = prototypes(tape);

  // true next intentions projected into language modality; immobility samples
  // use the trainable immobility embedding directly
  std::vector<int> mob_positions;
  for (std::size_t i = 0; i < batch.size(); ++i)
    if (batch[i].next_class != immobility_class()) mob_positions.push_back(static_cast<int>(i));

  ad::Var t_mob{-1, nullptr};
  if (!mob_positions.empty()) {
    Eigen::MatrixXd x_mob(static_cast<Eigen::Index>(mob_positions.size()), centroids_.cols());
    for (std::size_t k = 0; k < mob_positions.size(); ++k) {
      int cls = batch[static_cast<std::size_t>(mob_positions[k])].next_class;
      require(cls >= 0 && cls < n_intentions(), "sample class out of range");
      x_mob.row(static_cast<Eigen::Index>(k)) = centroids_.row(cls);
    }
    ad::Var lifted = ad::add_rowvec(tape.constant(x_mob) * params_.use(tape, "lift.w"),
                                    params_.use(tape, "lift.b"));
    t_mob = project_rows(tape, lifted, protos);
  }

  std::vector<ad::Var> t_rows;
  t_rows.reserve(batch.size());
  int mob_at = 0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    if (batch[i].next_class == immobility_class()) {
      t_rows.push_back(params_.use(tape, "immob.e"));
    } else {
      t_rows.push_back(ad::rows_gather(t_mob, {mob_at}));
      ++mob_at;
    }
  }
  ad::Var t = ad::concat_rows(t_rows);

  ad::Var tn = ad::l2normalize_rows(t);
  ad::Var yn = ad::l2normalize_rows(y);

  std::vector<int> diag(batch.size());
  std::iota(diag.begin(), diag.end(), 0);
  ad::Var sim = ad::scale(tn * ad::transpose(yn), 1.0 / config_.temp_infonce);
  ad::Var nce = ad::cross_entropy_rows(sim, diag);

  ad::Var anchor_rows = anchors(tape, protos);
  ad::Var an = ad::l2normalize_rows(anchor_rows);
  ad::Var logits = ad::scale(yn * ad::transpose(an), 1.0 / config_.temp_class);
  std::vector<int> labels;
  labels.reserve(batch.size());
  for (const auto& s : batch) labels.push_back(s.next_class);
  ad::Var ce = ad::cross_entropy_rows(logits, labels);

  return ad::add(nce, ce);
}

double IntentionClipModel::loss_on_batch(std::span<const ClipSample> batch) {
  ad::Tape tape;
  ad::Var loss = batch_loss(tape, batch);
  tape.backward(loss);
  return loss.value()(0, 0);
}

double IntentionClipModel::loss_value(std::span<const ClipSample> batch) const {
  ad::Tape tape;
  ad::Var loss = batch_loss(tape, batch);
  return loss.value()(0, 0);
}

namespace {

double full_loss(const IntentionClipModel& model, const std::vector<ClipSample>& dataset,
                 int batch_size) {
  double total = 0.0;
  int batches = 0;
  for (std::size_t at = 0; at + 2 <= dataset.size(); at += static_cast<std::size_t>(batch_size)) {
    std::size_t n = std::min(static_cast<std::size_t>(batch_size), dataset.size() - at);
    if (n < 2) break;
    total += model.loss_value(std::span<const ClipSample>(dataset.data() + at, n));
    ++batches;
  }
  require(batches > 0, "dataset too small for one batch");
  return total / batches;
}

}  // namespace

ClipTrainReport IntentionClipModel::train(const std::vector<ClipSample>& dataset) {
  require(dataset.size() >= 2, "training needs at least 2 samples");
  ClipTrainReport report;
  report.initial_loss = full_loss(*this, dataset, config_.batch_size);

  std::map<std::string, Eigen::MatrixXd> snapshot = params_.values();

  std::vector<std::size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), 0);
  auto rng = make_rng(derive_seed(config_.seed, "clip-train"));

  std::vector<ClipSample> batch;
  for (int epoch = 0; epoch < config_.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_total = 0.0;
    int epoch_batches = 0;
    for (std::size_t at = 0; at < order.size(); at += static_cast<std::size_t>(config_.batch_size)) {
      std::size_t n = std::min(static_cast<std::size_t>(config_.batch_size), order.size() - at);
      if (n < 2) break;
      batch.clear();
      for (std::size_t i = 0; i < n; ++i) batch.push_back(dataset[order[at + i]]);
      params_.zero_grads();
      double loss = loss_on_batch(batch);
      if (!std::isfinite(loss))
        fail("non-finite alignment loss at epoch " + std::to_string(epoch) + ", batch " +
             std::to_string(epoch_batches) + "; lower the learning rate");
      params_.sgd_step(config_.lr);
      epoch_total += loss;
      ++epoch_batches;
    }
    report.epoch_loss.push_back(epoch_total / std::max(epoch_batches, 1));
  }

  report.final_loss = full_loss(*this, dataset, config_.batch_size);
  if (report.final_loss > report.initial_loss) {
    params_.mutable_values() = snapshot;
    report.final_loss = report.initial_loss;
    report.reverted = true;
  }
  return report;
}

void IntentionClipModel::save(const std::filesystem::path& path,
                              const std::string& corpus_hash) const {
  nlohmann::ordered_json j;
  j["format_version"] = kFormatVersion;
  j["kind"] = "clip_checkpoint";
  j["manifest"] = {{"feature_dim", feature_dim_},
                   {"m", centroids_.cols()},
                   {"n_intentions", centroids_.rows()},
                   {"n_prototypes", config_.n_prototypes},
                   {"width", config_.width},
                   {"blocks", config_.blocks},
                   {"heads", config_.heads},
                   {"d_k", config_.d_k},
                   {"temp_infonce", config_.temp_infonce},
                   {"temp_class", config_.temp_class},
                   {"lr", config_.lr},
                   {"epochs", config_.epochs},
                   {"batch_size", config_.batch_size},
                   {"seed", config_.seed},
                   {"stay_still_token_ids", config_.stay_still_token_ids},
                   {"vocab_hash", vocab_hash_},
                   {"corpus_hash", corpus_hash}};
  j["standardizer"] = {{"mean", vector_to_json(standardizer_.mean)},
                       {"stddev", vector_to_json(standardizer_.stddev)}};
  j["centroids"] = matrix_to_json(centroids_);
  j["immobility_vector"] = vector_to_json(immobility_vector_);
  nlohmann::ordered_json pj;
  for (const auto& [name, value] : params_.values()) pj[name] = matrix_to_json(value);
  j["params"] = std::move(pj);
  write_text_file(path, j.dump() + "\n");
}

IntentionClipModel IntentionClipModel::load(const std::filesystem::path& path,
                                            const VocabularyMatrix& vocab) {
  nlohmann::ordered_json j;
  try {
    j = nlohmann::ordered_json::parse(read_text_file(path));
  } catch (const nlohmann::json::exception& e) {
    fail("clip checkpoint " + path.string() + ": " + e.what());
  }
  require(j.value("format_version", -1) == kFormatVersion,
          "clip checkpoint: format_version mismatch");
  const auto& man = j.at("manifest");
  require(man.at("vocab_hash").get<std::string>() == vocab.hash(),
          "clip checkpoint was trained against a different vocabulary");

  ClipConfig cfg;
  cfg.n_prototypes = man.at("n_prototypes").get<int>();
  cfg.width = man.at("width").get<int>();
  cfg.blocks = man.at("blocks").get<int>();
  cfg.heads = man.at("heads").get<int>();
  cfg.d_k = man.at("d_k").get<int>();
  cfg.temp_infonce = man.at("temp_infonce").get<double>();
  cfg.temp_class = man.at("temp_class").get<double>();
  cfg.lr = man.at("lr").get<double>();
  cfg.epochs = man.at("epochs").get<int>();
  cfg.batch_size = man.at("batch_size").get<int>();
  cfg.seed = man.at("seed").get<std::uint64_t>();
  cfg.stay_still_token_ids = man.at("stay_still_token_ids").get<std::vector<int>>();

  Standardizer std_;
  std_.mean = vector_from_json(j.at("standardizer").at("mean"));
  std_.stddev = vector_from_json(j.at("standardizer").at("stddev"));

  IntentionClipModel model(man.at("feature_dim").get<int>(), std_,
                           matrix_from_json(j.at("centroids")),
                           vector_from_json(j.at("immobility_vector")), cfg, vocab);
  for (auto& [name, mj] : j.at("params").items()) {
    Eigen::MatrixXd loaded = matrix_from_json(mj);
    Eigen::MatrixXd& dst = model.params_.value(name);
    require(loaded.rows() == dst.rows() && loaded.cols() == dst.cols(),
            "checkpoint parameter shape mismatch for " + name);
    dst = loaded;
  }
  return model;
}

std::vector<ClipSample> build_clip_dataset(const std::vector<const Corpus*>& corpora,
                                           const World& world, const TcaTransform& tca,
                                           const IntentionSpace& space, bool respect_immobility) {
  std::vector<ClipSample> out;
  for (const Corpus* corpus : corpora) {
    for (const auto& traj : corpus->trajectories) {
      auto features = extract_travel_features(traj, world);
      if (!respect_immobility)
        for (auto& f : features) f.is_immobility = false;
      auto intents = map_to_intentions(features, tca, space);
      if (features.size() < 2) continue;
      Eigen::MatrixXd rows = feature_matrix(features);
      for (std::size_t t = 1; t < features.size(); ++t) {
        ClipSample s;
        s.prefix_features = rows.topRows(static_cast<Eigen::Index>(t));
        s.next_class = intents[t].cls;
        out.push_back(std::move(s));
      }
    }
  }
  return out;
}

}  // namespace mobintent
