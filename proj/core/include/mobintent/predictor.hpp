#pragma once

#include <Eigen/Core>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mobintent/autodiff.hpp"
#include "mobintent/world.hpp"

namespace mobintent {

enum class ModulationMode { None, Mul, Concat, Attn };

std::string to_string(ModulationMode mode);
ModulationMode modulation_mode_from_string(const std::string& s);

/// Eval-mode fusion parameters shared by the three modulation operators.
/// The lift starts as the identity gate (weights 0, bias 1) and the attention
/// value map starts at zero, so untrained modulation reproduces the base model.
struct FusionParams {
  Eigen::MatrixXd lift_w;  // m x D_H
  Eigen::MatrixXd lift_b;  // 1 x D_H
  Eigen::MatrixXd attn_wq, attn_wk, attn_wv;  // D_H x D_H
};

/// Pure fusion of a mobility embedding with an intention feature:
/// MUL multiplies by the lifted intention, CONCAT appends the raw intention,
/// ATTN attends from H over {lifted intention, H} and adds the context back.
Eigen::VectorXd modulate(const Eigen::VectorXd& h, const Eigen::VectorXd& intention,
                         ModulationMode mode, const FusionParams& fusion);

struct PredictionRanking {
  std::vector<int> location_order;     // location indices, best first
  std::vector<double> probabilities;   // aligned with location_order, sums to 1
  bool is_immobility_prediction = false;  // top-1 equals the current location

  int rank_of(int location) const;  // 1-based
  int top1() const { return location_order.front(); }
};

struct PredictorConfig {
  std::string base = "rnn";  // freq | rnn
  ModulationMode mode = ModulationMode::Concat;
  int d_h = 64;
  int loc_embed = 32;
  double lr = 0.05;
  int epochs = 15;
  std::uint64_t seed = 1;
  double freq_alpha = 0.5;  // count smoothing

  void validate() const;
};

/// One trajectory prepared for next-location training: location index path and
/// the intention feature of each travel (the mapped true next intention).
struct PredictorSample {
  std::string user_id;
  std::vector<int> locations;                  // length n
  std::vector<Eigen::VectorXd> intentions;     // length n-1, aligned with travels
};

struct PredictorTrainReport {
  std::vector<double> epoch_loss;
  double initial_loss = 0.0;
  double final_loss = 0.0;
  bool reverted = false;
};

/// Base-model contract plus intention modulation. The frequency base is pure
/// counting (no gradient steps; fusion stays at its identity initialization);
/// the recurrent base is a gated recurrent encoder over location embeddings
/// trained jointly with the fusion parameters and head.
class LocationPredictor {
 public:
  LocationPredictor(std::vector<std::string> location_ids, int intention_dim,
                    PredictorConfig config);

  const PredictorConfig& config() const { return config_; }
  int n_locations() const { return static_cast<int>(location_ids_.size()); }
  int hidden_dim() const;
  bool trainable() const { return config_.base == "rnn"; }

  /// Deterministic evaluation-mode mobility embedding for a prefix.
  Eigen::VectorXd encode(const std::vector<int>& prefix, const std::string& user_id) const;

  /// Ranked next-location distribution; `intention` may be null only in
  /// ModulationMode::None.
  PredictionRanking predict(const std::vector<int>& prefix, const std::string& user_id,
                            const Eigen::VectorXd* intention) const;

  PredictorTrainReport train(const std::vector<PredictorSample>& data);

  void save(const std::filesystem::path& path) const;
  static LocationPredictor load(const std::filesystem::path& path);

  ad::ParamStore& params() { return params_; }
  /// Forces the MUL lift to emit all-ones (identity-modulation checks).
  void force_identity_lift();

  double loss_value(const std::vector<PredictorSample>& data) const;
  double loss_on_sample(const PredictorSample& sample);  // backward included

 private:
  ad::Var rnn_hidden_states(ad::Tape& tape, const std::vector<int>& prefix) const;  // T x D_H
  ad::Var fuse(ad::Tape& tape, ad::Var h_row, ad::Var intention_row) const;
  ad::Var step_logits(ad::Tape& tape, ad::Var h_row, const Eigen::VectorXd* intention) const;
  ad::Var sample_loss(ad::Tape& tape, const PredictorSample& sample) const;
  Eigen::VectorXd freq_scores(const std::vector<int>& prefix, const std::string& user_id) const;

  std::vector<std::string> location_ids_;
  int intention_dim_ = 0;
  PredictorConfig config_;
  mutable ad::ParamStore params_;

  // frequency-base state (training = counting)
  Eigen::VectorXd global_counts_;
  std::map<std::string, Eigen::VectorXd> user_counts_;
};

}  // namespace mobintent
