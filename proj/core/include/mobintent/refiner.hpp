#pragma once

#include <Eigen/Core>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "mobintent/intention.hpp"
#include "mobintent/world.hpp"

namespace mobintent {

/// Look-up table of trainable disaster-level vectors (the soft-prompt prefix).
class DisasterEncoder {
 public:
  DisasterEncoder(int levels, int dim, std::uint64_t seed);

  Eigen::VectorXd encode(const DisasterLevel& d) const;
  int levels() const { return static_cast<int>(table_.rows()); }
  const Eigen::MatrixXd& table() const { return table_; }

 private:
  Eigen::MatrixXd table_;  // L x D_V
};

struct EmbeddingSlot {
  std::string slot_id;
  Eigen::VectorXd vector;
};

/// One retrieved reference prepared for prompting: all but the last intention
/// shown as the sequence, the last held out as its next intention.
struct ReferenceDisplay {
  std::string trajectory_id;
  DisasterLevel level;
  std::vector<Eigen::VectorXd> sequence;  // language-modality embeddings, shown steps
  Eigen::VectorXd next;                   // held-out next-intention embedding
  int next_class = 0;
  double distance = 0.0;
};

/// Prompt text plus the ordered embedding-slot registry; every backtick-wrapped
/// marker in the text corresponds to exactly one slot, in text order.
struct PromptBundle {
  std::string text;
  std::vector<EmbeddingSlot> slots;
  std::optional<Eigen::VectorXd> disaster_prefix;  // Z^d; absent under the soft-prompt ablation

  // structured view consumed by the deterministic stub
  DisasterLevel level;
  int predicted_class = 0;
  std::vector<int> reference_next_classes;
  int n_intentions = 0;
  bool immobility_enabled = true;
};

/// Assembles the intention-incorporated prompt: system text, the query
/// intention sequence, the reference sequences, the three-step reasoning
/// instructions, and the answer instruction. Slots register in order: query
/// sequence, predicted next, each reference (sequence then next), candidates.
PromptBundle build_prompt(const std::vector<Eigen::VectorXd>& query_embeddings,
                          const Eigen::VectorXd& predicted_embedding, int predicted_class,
                          const std::vector<ReferenceDisplay>& references, const DisasterLevel& d,
                          const Eigen::MatrixXd& class_anchors,
                          std::optional<Eigen::VectorXd> disaster_prefix,
                          bool immobility_enabled = true);

/// Parsed three-field answer. Field constraints: q1 yes forces both others to
/// none; q2 yes forces "stay still"; q2 no requires a valid class index.
struct RefinementDecision {
  bool q1_correct = false;
  std::optional<bool> q2_immobility;
  std::optional<int> q3_class;  // set only when q2 == no
  std::string backend_id;
  std::string raw_answer;
  int retry_count = 0;
  bool fell_back = false;

  bool keeps_prediction() const { return q1_correct; }
  bool refines_to_immobility() const { return q2_immobility && *q2_immobility; }
};

/// Accepts a three-element quoted list, case-insensitive, whitespace-tolerant.
/// Invariant violations are parse errors, never silent repairs.
RefinementDecision parse_answer(const std::string& text, int n_intentions);

class RefinerBackend {
 public:
  virtual ~RefinerBackend() = default;
  virtual std::string id() const = 0;
  /// Returns the raw answer text; throws Error on failure.
  virtual std::string answer(const PromptBundle& prompt) = 0;
};

struct StubRules {
  double majority_threshold = 0.6;
  std::string severe_label = "severe disaster";
};

/// Deterministic stand-in for a fine-tuned refiner:
///  R1 severe disaster + reference majority immobile + mobile prediction -> stay still
///  R2 reference majority (>= threshold) disagrees with the prediction -> majority class
///  R3 otherwise keep.
class StubBackend : public RefinerBackend {
 public:
  explicit StubBackend(StubRules rules = {}) : rules_(rules) {}
  std::string id() const override { return "stub"; }
  std::string answer(const PromptBundle& prompt) override;

 private:
  StubRules rules_;
};

struct RefineResult {
  int refined_class = 0;
  Eigen::VectorXd refined_vector;  // intention-modality feature for the refined class
  RefinementDecision decision;
};

/// Applies the backend's decision to the prediction. Unparseable answers are
/// retried up to max_retries; after that the unrefined prediction is kept and
/// the sample flagged.
RefineResult refine(RefinerBackend& backend, const PromptBundle& prompt,
                    const IntentionSpace& space, int max_retries = 2);

// --- external backend wire contract ------------------------------------------

class WireTransport {
 public:
  virtual ~WireTransport() = default;
  /// POSTs the serialized request, returns the raw response body; throws Error
  /// on network failure or timeout.
  virtual std::string post(const std::string& request_body) = 0;
};

/// Request document: {prompt_text, embedding_slots:[{slot_id, vector}],
/// disaster_prefix}. Vectors also render base-16 inside the text markers.
std::string serialize_wire_request(const PromptBundle& prompt);

std::string hex_encode_vector(const Eigen::VectorXd& v);
Eigen::VectorXd hex_decode_vector(const std::string& hex);

class HttpBackend : public RefinerBackend {
 public:
  explicit HttpBackend(std::shared_ptr<WireTransport> transport, std::string id = "http");
  std::string id() const override { return id_; }
  std::string answer(const PromptBundle& prompt) override;

 private:
  std::shared_ptr<WireTransport> transport_;
  std::string id_;
};

/// cpp-httplib transport against REFINER_ENDPOINT / REFINER_TOKEN.
std::shared_ptr<WireTransport> make_http_transport(const std::string& endpoint,
                                                   const std::string& token,
                                                   int timeout_seconds = 30);
std::shared_ptr<WireTransport> make_http_transport_from_env();

}  // namespace mobintent
