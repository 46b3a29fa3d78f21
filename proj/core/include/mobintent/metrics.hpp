#pragma once

#include <vector>

#include "mobintent/predictor.hpp"

namespace mobintent {

struct RankingMetrics {
  double acc1 = 0.0;
  double acc10 = 0.0;
  double mrr = 0.0;
  double ndcg5 = 0.0;
  double ndcg10 = 0.0;
};

/// Binary-relevance metrics over 1-based ranks of the true item.
RankingMetrics compute_ranking_metrics(const std::vector<int>& true_ranks);
RankingMetrics compute_ranking_metrics(const std::vector<PredictionRanking>& rankings,
                                       const std::vector<int>& true_locations);

struct Prf {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  bool degenerate = false;  // no positives anywhere; zeros by convention
};

/// Precision/recall/F1 over the immobility-positive class. F1 is 0 when
/// precision + recall is 0.
Prf compute_immobility_prf(const std::vector<bool>& predicted_immobile,
                           const std::vector<bool>& true_immobile);

struct IntentionMetrics {
  double accuracy = 0.0;
  Prf immobility;
};

IntentionMetrics compute_intention_metrics(const std::vector<int>& predicted_classes,
                                           const std::vector<int>& true_classes,
                                           int immobility_class);

}  // namespace mobintent
