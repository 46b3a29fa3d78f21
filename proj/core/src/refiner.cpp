#include "mobintent/refiner.hpp"

#include <algorithm>
#include <cctype>
#include <cstdlib>
#include <cstring>
#include <map>
#include <sstream>

#include <json.hpp>

// httplib pulls in sockets; keep it out of the header
#define CPPHTTPLIB_NO_EXCEPTIONS
#include <httplib.h>

namespace mobintent {

DisasterEncoder::DisasterEncoder(int levels, int dim, std::uint64_t seed) {
  require(levels >= 1 && dim >= 1, "bad disaster encoder shape");
  table_.resize(levels, dim);
  auto rng = make_rng(derive_seed(seed, "disaster-encoder"));
  std::normal_distribution<double> dist(0.0, 1.0);
  for (Eigen::Index i = 0; i < table_.rows(); ++i)
    for (Eigen::Index j = 0; j < table_.cols(); ++j) table_(i, j) = dist(rng);
  for (Eigen::Index a = 0; a < table_.rows(); ++a)
    for (Eigen::Index b = a + 1; b < table_.rows(); ++b)
      require((table_.row(a) - table_.row(b)).norm() > 0.0,
              "disaster encoder rows collided at init");
}

Eigen::VectorXd DisasterEncoder::encode(const DisasterLevel& d) const {
  require(d.ordinal >= 0 && d.ordinal < levels(),
          "disaster ordinal out of range: " + std::to_string(d.ordinal));
  return table_.row(d.ordinal).transpose();
}

namespace {

const char* kSystemPrompt =
    "System Prompt:\n"
    "You are now a discriminator of predicted human intentions in disaster scenarios, tasked "
    "with determining whether the given user's possible next intention is right based on the "
    "user's previous intention sequence, disaster level, a possible next intention and other "
    "reference intention sequences. Note that:\n"
    "1. The intentions are token embeddings, that contain the intention information. It is "
    "wrapped in the \"``\", which means that any token in two \"`\" refers to the intention "
    "embedding rather than the text token.\n"
    "2. Disaster level is divided into:\n"
    "(1) \"no disaster\": Indicates that there is no effect on human mobility.\n"
    "(2) \"minor disaster\": An individual's daily travel plans may not be affected much, but "
    "alternatives should be considered.\n"
    "(3) \"general disaster\": Human mobility may be affected by disasters, causing certain "
    "activities to be adjusted or canceled for safety reasons.\n"
    "(4) \"severe disaster\": Human movement will be greatly affected by the disaster, and the "
    "probability of staying still will increase.\n"
    "3. Reference intention sequences are selected sequences from an intention sequence RAG. "
    "They are the most similar sequences to the given intention sequence. You can refer to "
    "these sequences to generate your answers but don't copy them exactly.\n"
    "4. The given possible intention is not necessarily accurate, you need to judge whether it "
    "needs to change.\n"
    "5. Both the user's previous intention sequence and the other reference intention sequences "
    "are in the format of a list like [`intention embedding 1`, `intention embedding 2`...].\n";

std::string slot_marker(const std::string& id) { return "`" + id + "`"; }

}  // namespace

PromptBundle build_prompt(const std::vector<Eigen::VectorXd>& query_embeddings,
                          const Eigen::VectorXd& predicted_embedding, int predicted_class,
                          const std::vector<ReferenceDisplay>& references, const DisasterLevel& d,
                          const Eigen::MatrixXd& class_anchors,
                          std::optional<Eigen::VectorXd> disaster_prefix,
                          bool immobility_enabled) {
  require(predicted_embedding.size() > 0, "predicted next intention embedding is required");
  require(class_anchors.rows() >= 2, "need the candidate class anchors");
  require(!d.label.empty(), "disaster level label undefined for ordinal " +
                                std::to_string(d.ordinal));

  PromptBundle bundle;
  bundle.level = d;
  bundle.predicted_class = predicted_class;
  bundle.immobility_enabled = immobility_enabled;
  // with immobility on, anchors carry the immobility row last
  bundle.n_intentions =
      immobility_enabled ? static_cast<int>(class_anchors.rows()) - 1
                         : static_cast<int>(class_anchors.rows());
  bundle.disaster_prefix = std::move(disaster_prefix);
  for (const auto& r : references) bundle.reference_next_classes.push_back(r.next_class);

  std::ostringstream text;
  auto slot = [&bundle](const std::string& id, const Eigen::VectorXd& v) {
    bundle.slots.push_back({id, v});
    return slot_marker(id);
  };

  text << kSystemPrompt << "\n";

  text << "Intention Sequence Prompt:\n";
  text << "Disaster Level: " << d.label << ".\n";
  text << "Intention embedding sequence: [";
  for (std::size_t i = 0; i < query_embeddings.size(); ++i) {
    if (i) text << ", ";
    text << slot("q" + std::to_string(i), query_embeddings[i]);
  }
  text << "].\n";
  text << "The given possible next intention embedding for this sequence is "
       << slot("pred", predicted_embedding) << ".\n\n";

  text << "Reference Intention Sequence Prompt:\n";
  if (references.empty()) {
    text << "There are 0 reference sequences available for this query.\n";
  } else {
    text << "You need to refer to the following sequence to distinguish whether the given "
            "possible next intention embedding is right:\n";
    for (std::size_t r = 0; r < references.size(); ++r) {
      const auto& ref = references[r];
      text << "Reference Sequence " << (r + 1) << ":\n";
      text << "Disaster Level: " << ref.level.label << ".\n";
      text << "Intention embedding sequence: [";
      for (std::size_t i = 0; i < ref.sequence.size(); ++i) {
        if (i) text << ", ";
        text << slot("ref" + std::to_string(r) + "_s" + std::to_string(i), ref.sequence[i]);
      }
      text << "].\n";
      text << "The given possible next intention embedding for this sequence is "
           << slot("ref" + std::to_string(r) + "_next", ref.next) << ".\n";
    }
  }
  text << "\n";

  text << "CoT Prompt:\n";
  text << "Let's think step by step. You need to answer each of the three questions below, and "
          "if the answer to the first question is \"yes\", the following questions will be "
          "output as \"None\":\n";
  text << "(1) Is the given possible next intent embedding right?\n";
  text << "(2) If the answer to the previous question is \"yes\", this answer is set to "
          "\"None\". If the answer to the previous question is \"no\", please answer: Given the "
          "current disaster level, should the next intention be \"stay still\"?\n";
  text << "(3) If the answer to the previous question is \"yes\", this answer is set to \"stay "
          "still\". If the answer to the previous question is \"no\", you need to give the "
          "index of the correct next intention embedding.\n";
  text << "The indexes and embeddings of the intentions you can choose from are [";
  for (int c = 0; c < bundle.n_intentions; ++c) {
    if (c) text << ", ";
    text << c << ": " << slot("cand" + std::to_string(c), class_anchors.row(c).transpose());
  }
  if (immobility_enabled)
    text << ", stay still: "
         << slot("cand_stay", class_anchors.row(class_anchors.rows() - 1).transpose());
  text << "].\n\n";

  text << "Answer Prompt:\n";
  text << "Now give your answer. You should output the answer in a [\"no\", \"no\", \"2\"] "
          "format, nothing else.\n";
  text << "Your answer:";

  bundle.text = text.str();
  return bundle;
}

namespace {

std::string lower_trim(std::string s) {
  auto issp = [](unsigned char c) { return std::isspace(c) != 0; };
  while (!s.empty() && issp(static_cast<unsigned char>(s.front()))) s.erase(s.begin());
  while (!s.empty() && issp(static_cast<unsigned char>(s.back()))) s.pop_back();
  std::transform(s.begin(), s.end(), s.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s;
}

// splits "a", "b", "c" into unquoted lowercased elements
std::vector<std::string> parse_quoted_list(const std::string& text) {
  std::size_t open = text.find('[');
  std::size_t close = text.rfind(']');
  require(open != std::string::npos && close != std::string::npos && close > open,
          "answer is not a bracketed list: " + text);
  std::string body = text.substr(open + 1, close - open - 1);

  std::vector<std::string> out;
  std::size_t i = 0;
  auto skip_ws = [&] {
    while (i < body.size() && std::isspace(static_cast<unsigned char>(body[i]))) ++i;
  };
  while (true) {
    skip_ws();
    require(i < body.size(), "answer list ended unexpectedly");
    char quote = body[i];
    require(quote == '"' || quote == '\'', "answer elements must be quoted");
    ++i;
    std::size_t end = body.find(quote, i);
    require(end != std::string::npos, "unterminated quote in answer");
    out.push_back(lower_trim(body.substr(i, end - i)));
    i = end + 1;
    skip_ws();
    if (i >= body.size()) break;
    require(body[i] == ',', "expected ',' between answer elements");
    ++i;
  }
  return out;
}

}  // namespace

RefinementDecision parse_answer(const std::string& text, int n_intentions) {
  std::vector<std::string> parts = parse_quoted_list(text);
  require(parts.size() == 3,
          "answer must have exactly three elements, got " + std::to_string(parts.size()));

  RefinementDecision d;
  d.raw_answer = text;

  require(parts[0] == "yes" || parts[0] == "no", "first answer must be yes or no");
  d.q1_correct = parts[0] == "yes";

  if (d.q1_correct) {
    require(parts[1] == "none" && parts[2] == "none",
            "a kept prediction requires the remaining answers to be None");
    return d;
  }

  require(parts[1] == "yes" || parts[1] == "no",
          "second answer must be yes or no when the prediction is rejected");
  d.q2_immobility = parts[1] == "yes";
  if (*d.q2_immobility) {
    require(parts[2] == "stay still", "an immobility refinement requires \"stay still\"");
    return d;
  }

  char* end = nullptr;
  long cls = std::strtol(parts[2].c_str(), &end, 10);
  require(end && *end == '\0' && !parts[2].empty(), "third answer must be a class index");
  require(cls >= 0 && cls < n_intentions,
          "class index out of range: " + parts[2] + " (have " + std::to_string(n_intentions) +
              " intentions)");
  d.q3_class = static_cast<int>(cls);
  return d;
}

std::string StubBackend::answer(const PromptBundle& prompt) {
  const auto& refs = prompt.reference_next_classes;
  const int immob = prompt.n_intentions;  // immobility class index

  if (!refs.empty()) {
    std::map<int, int> counts;
    for (int c : refs) ++counts[c];
    int immob_count = prompt.immobility_enabled && counts.count(immob) ? counts[immob] : 0;

    // R1: severe disaster, references mostly stay, prediction moves
    if (prompt.immobility_enabled && prompt.level.label == rules_.severe_label &&
        2 * immob_count > static_cast<int>(refs.size()) && prompt.predicted_class != immob)
      return "[\"no\", \"yes\", \"stay still\"]";

    // R2: a clear reference majority on a different mobile class
    int majority_class = -1, majority_count = 0;
    for (const auto& [cls, count] : counts) {
      if (cls == immob) continue;
      if (count > majority_count) {
        majority_class = cls;
        majority_count = count;
      }
    }
    double fraction = static_cast<double>(majority_count) / static_cast<double>(refs.size());
    if (majority_class >= 0 && fraction >= rules_.majority_threshold &&
        majority_class != prompt.predicted_class)
      return "[\"no\", \"no\", \"" + std::to_string(majority_class) + "\"]";
  }

  // R3: keep the prediction
  return "[\"yes\", \"None\", \"None\"]";
}

RefineResult refine(RefinerBackend& backend, const PromptBundle& prompt,
                    const IntentionSpace& space, int max_retries) {
  RefineResult result;
  std::string last_error;
  for (int attempt = 0; attempt <= max_retries; ++attempt) {
    std::string raw;
    try {
      raw = backend.answer(prompt);
      result.decision = parse_answer(raw, prompt.n_intentions);
    } catch (const Error& e) {
      last_error = e.what();
      continue;
    }
    result.decision.backend_id = backend.id();
    result.decision.retry_count = attempt;
    if (result.decision.keeps_prediction()) {
      result.refined_class = prompt.predicted_class;
    } else if (result.decision.refines_to_immobility()) {
      result.refined_class = space.immobility_class();
    } else {
      result.refined_class = *result.decision.q3_class;
    }
    result.refined_vector = space.class_vector(result.refined_class);
    return result;
  }

  // fallback: keep the unrefined prediction and flag the sample
  result.decision.backend_id = backend.id();
  result.decision.raw_answer = last_error;
  result.decision.retry_count = max_retries;
  result.decision.fell_back = true;
  result.decision.q1_correct = true;
  result.refined_class = prompt.predicted_class;
  result.refined_vector = space.class_vector(result.refined_class);
  return result;
}

// --- wire serialization -------------------------------------------------------

namespace {
const char* kHexDigits = "0123456789abcdef";
}

std::string hex_encode_vector(const Eigen::VectorXd& v) {
  std::string out;
  out.reserve(static_cast<std::size_t>(v.size()) * 16);
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    std::uint64_t bits;
    static_assert(sizeof(bits) == sizeof(double));
    std::memcpy(&bits, &v[i], sizeof(bits));
    for (int shift = 60; shift >= 0; shift -= 4) out.push_back(kHexDigits[(bits >> shift) & 0xf]);
  }
  return out;
}

Eigen::VectorXd hex_decode_vector(const std::string& hex) {
  require(hex.size() % 16 == 0, "hex vector length must be a multiple of 16");
  Eigen::VectorXd v(static_cast<Eigen::Index>(hex.size() / 16));
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    std::uint64_t bits = 0;
    for (int k = 0; k < 16; ++k) {
      char c = hex[static_cast<std::size_t>(i * 16 + k)];
      int digit;
      if (c >= '0' && c <= '9') digit = c - '0';
      else if (c >= 'a' && c <= 'f') digit = c - 'a' + 10;
      else if (c >= 'A' && c <= 'F') digit = c - 'A' + 10;
      else fail("invalid hex digit in vector encoding");
      bits = (bits << 4) | static_cast<std::uint64_t>(digit);
    }
    double d;
    std::memcpy(&d, &bits, sizeof(d));
    v[i] = d;
  }
  return v;
}

std::string serialize_wire_request(const PromptBundle& prompt) {
  // markers carry the base-16 payload so a text-only backend sees the vectors
  std::string text = prompt.text;
  for (const auto& slot : prompt.slots) {
    std::string marker = "`" + slot.slot_id + "`";
    std::size_t pos = text.find(marker);
    require(pos != std::string::npos, "slot missing from prompt text: " + slot.slot_id);
    text.replace(pos, marker.size(),
                 "`" + slot.slot_id + ":" + hex_encode_vector(slot.vector) + "`");
  }

  nlohmann::ordered_json j;
  j["prompt_text"] = text;
  j["embedding_slots"] = nlohmann::ordered_json::array();
  for (const auto& slot : prompt.slots) {
    nlohmann::ordered_json sj;
    sj["slot_id"] = slot.slot_id;
    sj["vector"] = std::vector<double>(slot.vector.data(), slot.vector.data() + slot.vector.size());
    j["embedding_slots"].push_back(std::move(sj));
  }
  if (prompt.disaster_prefix) {
    j["disaster_prefix"] = std::vector<double>(
        prompt.disaster_prefix->data(),
        prompt.disaster_prefix->data() + prompt.disaster_prefix->size());
  } else {
    j["disaster_prefix"] = nlohmann::ordered_json::array();
  }
  return j.dump();
}

HttpBackend::HttpBackend(std::shared_ptr<WireTransport> transport, std::string id)
    : transport_(std::move(transport)), id_(std::move(id)) {
  require(transport_ != nullptr, "http backend needs a transport");
}

std::string HttpBackend::answer(const PromptBundle& prompt) {
  std::string body = transport_->post(serialize_wire_request(prompt));
  nlohmann::json j = nlohmann::json::parse(body, nullptr, false);
  require(!j.is_discarded() && j.contains("answer") && j["answer"].is_string(),
          "backend response is not a {\"answer\": ...} document");
  return j["answer"].get<std::string>();
}

namespace {

class HttplibTransport : public WireTransport {
 public:
  HttplibTransport(std::string endpoint, std::string token, int timeout_seconds)
      : endpoint_(std::move(endpoint)), token_(std::move(token)), timeout_(timeout_seconds) {
    auto scheme_end = endpoint_.find("://");
    require(scheme_end != std::string::npos, "endpoint must include a scheme");
    std::size_t path_start = endpoint_.find('/', scheme_end + 3);
    host_ = path_start == std::string::npos ? endpoint_ : endpoint_.substr(0, path_start);
    path_ = path_start == std::string::npos ? "/" : endpoint_.substr(path_start);
  }

  std::string post(const std::string& request_body) override {
    httplib::Client client(host_);
    client.set_connection_timeout(timeout_, 0);
    client.set_read_timeout(timeout_, 0);
    httplib::Headers headers;
    if (!token_.empty()) headers.emplace("Authorization", "Bearer " + token_);
    auto res = client.Post(path_, headers, request_body, "application/json");
    require(res != nullptr, "refiner endpoint unreachable or timed out: " + endpoint_);
    require(res->status == 200,
            "refiner endpoint returned status " + std::to_string(res->status));
    return res->body;
  }

 private:
  std::string endpoint_, token_, host_, path_;
  int timeout_;
};

}  // namespace

std::shared_ptr<WireTransport> make_http_transport(const std::string& endpoint,
                                                   const std::string& token, int timeout_seconds) {
  require(!endpoint.empty(), "refiner endpoint is empty");
  return std::make_shared<HttplibTransport>(endpoint, token, timeout_seconds);
}

std::shared_ptr<WireTransport> make_http_transport_from_env() {
  const char* endpoint = std::getenv("REFINER_ENDPOINT");
  require(endpoint != nullptr && *endpoint != '\0',
          "REFINER_ENDPOINT is not set; required for the http backend");
  const char* token = std::getenv("REFINER_TOKEN");
  return make_http_transport(endpoint, token ? token : "");
}

}  // namespace mobintent
