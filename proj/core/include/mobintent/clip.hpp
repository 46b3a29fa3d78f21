#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "mobintent/autodiff.hpp"
#include "mobintent/intention.hpp"
#include "mobintent/vocab.hpp"

namespace mobintent {

struct ClipConfig {
  int n_prototypes = 16;  // rows of the prototype matrix
  int width = 64;         // encoder model width
  int blocks = 2;
  int heads = 4;
  int d_k = 64;               // attention scaling constant for intention projection
  double temp_infonce = 0.07;
  double temp_class = 0.1;    // class-anchor similarity temperature
  double lr = 1e-3;
  int epochs = 20;
  int batch_size = 16;
  std::uint64_t seed = 1;
  std::vector<int> stay_still_token_ids = {0, 1};

  void validate() const;
};

/// P = h(V); h is a dense weighting over vocabulary rows. Rejects N_P >= N_V.
Eigen::MatrixXd build_prototypes(const Eigen::MatrixXd& vocab, const Eigen::MatrixXd& h);

/// Row-wise attention projection into language modality:
/// T = softmax(Q P^T / sqrt(d_k)) P. Optionally returns the attention weights.
Eigen::MatrixXd language_project(const Eigen::MatrixXd& lifted_queries, const Eigen::MatrixXd& p,
                                 double d_k, Eigen::MatrixXd* weights_out = nullptr);

struct IntentionPrediction {
  Eigen::VectorXd embedding;  // predicted next intention in language modality
  Eigen::VectorXd logits;     // over n_intentions + 1 classes, immobility last
  int cls = 0;
};

/// One training sample: a travel-feature prefix and the class of the travel
/// that followed it.
struct ClipSample {
  Eigen::MatrixXd prefix_features;  // T x D_F, raw (model standardizes internally)
  int next_class = 0;               // 0..N_I; N_I = immobility
};

struct ClipTrainReport {
  std::vector<double> epoch_loss;
  double initial_loss = 0.0;
  double final_loss = 0.0;
  bool reverted = false;  // training made the full-train loss worse; kept initial params
};

/// Attention-based sequence encoder over travel features plus the prototype
/// projection head; trained jointly with the contrastive alignment loss.
class IntentionClipModel {
 public:
  IntentionClipModel(int feature_dim, Standardizer standardizer, Eigen::MatrixXd centroids,
                     Eigen::VectorXd immobility_vector, ClipConfig config,
                     const VocabularyMatrix& vocab);

  int feature_dim() const { return feature_dim_; }
  int n_intentions() const { return static_cast<int>(centroids_.rows()); }
  int n_classes() const { return n_intentions() + 1; }
  int immobility_class() const { return n_intentions(); }
  const ClipConfig& config() const { return config_; }
  ad::ParamStore& params() { return params_; }
  const Eigen::MatrixXd& vocab_matrix() const { return vocab_; }

  /// Deterministic evaluation-mode forward pass.
  IntentionPrediction predict(const Eigen::MatrixXd& prefix_features) const;

  Eigen::MatrixXd prototypes_eval() const;  // current P = h(V)
  /// Language-modality anchor for a class: projected centroid, or the
  /// trainable immobility embedding for the immobility class.
  Eigen::VectorXd class_anchor(int cls) const;
  Eigen::MatrixXd all_class_anchors() const;  // (N_I+1) x D_V, immobility last

  /// Builds the alignment loss graph for one batch and runs backward;
  /// gradients land in params(). Returns the loss value.
  double loss_on_batch(std::span<const ClipSample> batch);
  double loss_value(std::span<const ClipSample> batch) const;  // no gradients

  ClipTrainReport train(const std::vector<ClipSample>& dataset);

  void save(const std::filesystem::path& path, const std::string& corpus_hash) const;
  static IntentionClipModel load(const std::filesystem::path& path,
                                 const VocabularyMatrix& vocab);

 private:
  ad::Var encode(ad::Tape& tape, const Eigen::MatrixXd& prefix_features) const;
  ad::Var prototypes(ad::Tape& tape) const;
  ad::Var project_rows(ad::Tape& tape, ad::Var lifted, ad::Var protos) const;
  ad::Var anchors(ad::Tape& tape, ad::Var protos) const;
  ad::Var batch_loss(ad::Tape& tape, std::span<const ClipSample> batch) const;

  int feature_dim_ = 0;
  Standardizer standardizer_;
  Eigen::MatrixXd centroids_;          // N_I x m
  Eigen::VectorXd immobility_vector_;  // m, intention modality (kept for provenance)
  ClipConfig config_;
  Eigen::MatrixXd vocab_;  // N_V x D_V, constant
  std::string vocab_hash_;
  mutable ad::ParamStore params_;
};

/// Samples: every position with at least one preceding travel, over all
/// trajectories of the given corpora. With respect_immobility false, stays are
/// labeled by nearest centroid like any other travel.
std::vector<ClipSample> build_clip_dataset(const std::vector<const Corpus*>& corpora,
                                           const World& world, const TcaTransform& tca,
                                           const IntentionSpace& space,
                                           bool respect_immobility = true);

}  // namespace mobintent
