#include "mobintent/metrics.hpp"

#include <cmath>

namespace mobintent {

RankingMetrics compute_ranking_metrics(const std::vector<int>& true_ranks) {
  require(!true_ranks.empty(), "empty sample set");
  RankingMetrics m;
  for (int rank : true_ranks) {
    require(rank >= 1, "ranks are 1-based");
    m.acc1 += rank <= 1 ? 1.0 : 0.0;
    m.acc10 += rank <= 10 ? 1.0 : 0.0;
    m.mrr += 1.0 / rank;
    // binary relevance, one relevant item: DCG = 1/log2(rank+1), IDCG = 1
    m.ndcg5 += rank <= 5 ? 1.0 / std::log2(rank + 1.0) : 0.0;
    m.ndcg10 += rank <= 10 ? 1.0 / std::log2(rank + 1.0) : 0.0;
  }
  double q = static_cast<double>(true_ranks.size());
  m.acc1 /= q;
  m.acc10 /= q;
  m.mrr /= q;
  m.ndcg5 /= q;
  m.ndcg10 /= q;
  return m;
}

RankingMetrics compute_ranking_metrics(const std::vector<PredictionRanking>& rankings,
                                       const std::vector<int>& true_locations) {
  require(rankings.size() == true_locations.size(), "one ground truth per ranking required");
  std::vector<int> ranks;
  ranks.reserve(rankings.size());
  for (std::size_t i = 0; i < rankings.size(); ++i)
    ranks.push_back(rankings[i].rank_of(true_locations[i]));
  return compute_ranking_metrics(ranks);
}

Prf compute_immobility_prf(const std::vector<bool>& predicted_immobile,
                           const std::vector<bool>& true_immobile) {
  require(predicted_immobile.size() == true_immobile.size(), "prediction/truth length mismatch");
  require(!predicted_immobile.empty(), "empty sample set");
  double tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < predicted_immobile.size(); ++i) {
    if (predicted_immobile[i] && true_immobile[i]) ++tp;
    else if (predicted_immobile[i]) ++fp;
    else if (true_immobile[i]) ++fn;
  }
  Prf out;
  out.precision = tp + fp > 0 ? tp / (tp + fp) : 0.0;
  out.recall = tp + fn > 0 ? tp / (tp + fn) : 0.0;
  out.f1 = out.precision + out.recall > 0.0
               ? 2.0 * out.precision * out.recall / (out.precision + out.recall)
               : 0.0;
  out.degenerate = tp + fp + fn == 0;
  return out;
}

IntentionMetrics compute_intention_metrics(const std::vector<int>& predicted_classes,
                                           const std::vector<int>& true_classes,
                                           int immobility_class) {
  require(predicted_classes.size() == true_classes.size(), "prediction/truth length mismatch");
  require(!predicted_classes.empty(), "empty sample set");
  IntentionMetrics m;
  std::vector<bool> pred_immob, true_immob;
  pred_immob.reserve(predicted_classes.size());
  true_immob.reserve(predicted_classes.size());
  for (std::size_t i = 0; i < predicted_classes.size(); ++i) {
    m.accuracy += predicted_classes[i] == true_classes[i] ? 1.0 : 0.0;
    pred_immob.push_back(predicted_classes[i] == immobility_class);
    true_immob.push_back(true_classes[i] == immobility_class);
  }
  m.accuracy /= static_cast<double>(predicted_classes.size());
  m.immobility = compute_immobility_prf(pred_immob, true_immob);
  return m;
}

}  // namespace mobintent
