#include <doctest.h>

#include <json.hpp>
#include <random>

#include "mobintent/refiner.hpp"

using namespace mobintent;

namespace {

Eigen::VectorXd dvec(std::initializer_list<double> vals) {
  Eigen::VectorXd v(static_cast<Eigen::Index>(vals.size()));
  Eigen::Index i = 0;
  for (double x : vals) v[i++] = x;
  return v;
}

// anchors for 4 intentions + immobility, dimension 3
Eigen::MatrixXd test_anchors() {
  Eigen::MatrixXd a(5, 3);
  for (int i = 0; i < 5; ++i) {
    a.row(i).setZero();
    a(i, i % 3) = i + 1.0;
  }
  return a;
}

IntentionSpace test_space() {
  IntentionSpace space;
  space.n_intentions = 4;
  space.centroids.resize(4, 2);
  space.centroids << 1, 0, 0, 1, -1, 0, 0, -1;
  space.immobility_vector = dvec({9, 9});
  return space;
}

PromptBundle minimal_prompt(int predicted_class, const DisasterLevel& level,
                            const std::vector<ReferenceDisplay>& refs = {},
                            bool immobility = true) {
  std::vector<Eigen::VectorXd> query = {dvec({1, 0, 0}), dvec({0, 1, 0})};
  return build_prompt(query, dvec({0.5, 0.5, 0}), predicted_class, refs, level, test_anchors(),
                      std::nullopt, immobility);
}

ReferenceDisplay make_ref(std::vector<int> classes, const DisasterLevel& level) {
  ReferenceDisplay r;
  r.level = level;
  Eigen::MatrixXd anchors = test_anchors();
  for (std::size_t i = 0; i + 1 < classes.size(); ++i)
    r.sequence.push_back(anchors.row(classes[i]).transpose());
  r.next_class = classes.back();
  r.next = anchors.row(r.next_class).transpose();
  return r;
}

// marker pairs after the system prompt (whose fixed text mentions backticks
// when describing the embedding convention)
int count_slots(const std::string& text) {
  std::size_t from = text.find("Intention Sequence Prompt:");
  REQUIRE(from != std::string::npos);
  int backticks = 0;
  for (std::size_t i = from; i < text.size(); ++i)
    if (text[i] == '`') ++backticks;
  return backticks / 2;
}

class ScriptedBackend : public RefinerBackend {
 public:
  explicit ScriptedBackend(std::vector<std::string> answers) : answers_(std::move(answers)) {}
  std::string id() const override { return "scripted"; }
  std::string answer(const PromptBundle&) override {
    require(calls_ < static_cast<int>(answers_.size()), "scripted backend exhausted");
    return answers_[static_cast<std::size_t>(calls_++)];
  }
  int calls() const { return calls_; }

 private:
  std::vector<std::string> answers_;
  int calls_ = 0;
};

class ScriptedTransport : public WireTransport {
 public:
  // an empty script entry simulates a timeout
  explicit ScriptedTransport(std::vector<std::string> bodies) : bodies_(std::move(bodies)) {}
  std::string post(const std::string& request_body) override {
    last_request = request_body;
    require(calls_ < static_cast<int>(bodies_.size()), "scripted transport exhausted");
    const std::string& body = bodies_[static_cast<std::size_t>(calls_++)];
    require(!body.empty(), "simulated timeout");
    return body;
  }
  std::string last_request;

 private:
  std::vector<std::string> bodies_;
  int calls_ = 0;
};

}  // namespace

TEST_CASE("disaster encoder: table semantics, distinctness, bounds") {
  DisasterEncoder enc(5, 16, 7);
  CHECK(enc.encode({0, "no disaster"}).isApprox(enc.encode({0, "no disaster"}), 0.0));
  CHECK_FALSE(enc.encode({0, "no disaster"}).isApprox(enc.encode({4, "severe disaster"}), 1e-9));
  CHECK_THROWS_AS(enc.encode({5, "x"}), Error);
  CHECK_THROWS_AS(enc.encode({-1, "x"}), Error);
}

TEST_CASE("build_prompt: slot counts match the registry and the text") {
  DisasterLevel level{1, "minor disaster"};

  PromptBundle zero = minimal_prompt(2, level);
  // |query| + predicted + (N_I + 1) candidates
  CHECK(zero.slots.size() == 2 + 1 + 5);
  CHECK(count_slots(zero.text) == static_cast<int>(zero.slots.size()));
  CHECK(zero.text.find("0 reference sequences") != std::string::npos);
  CHECK(zero.text.find("minor disaster") != std::string::npos);

  std::vector<ReferenceDisplay> refs = {make_ref({0, 1, 2, 3}, level),
                                        make_ref({1, 2, 3, 0, 1}, level)};
  REQUIRE(refs[0].sequence.size() == 3);
  REQUIRE(refs[1].sequence.size() == 4);
  PromptBundle two = build_prompt({dvec({1, 0, 0})}, dvec({0, 1, 0}), 0, refs, level,
                                  test_anchors(), std::nullopt, true);
  CHECK(two.slots.size() == 1 + 1 + (3 + 1) + (4 + 1) + 5);
  CHECK(count_slots(two.text) == static_cast<int>(two.slots.size()));

  // slot order matches text order
  std::size_t pos = 0;
  for (const auto& slot : two.slots) {
    std::size_t found = two.text.find("`" + slot.slot_id + "`", pos);
    REQUIRE(found != std::string::npos);
    pos = found + 1;
  }
}

TEST_CASE("build_prompt determinism and error paths") {
  DisasterLevel level{3, "severe disaster"};
  PromptBundle a = minimal_prompt(1, level);
  PromptBundle b = minimal_prompt(1, level);
  CHECK(a.text == b.text);
  REQUIRE(a.slots.size() == b.slots.size());
  for (std::size_t i = 0; i < a.slots.size(); ++i) {
    CHECK(a.slots[i].slot_id == b.slots[i].slot_id);
    CHECK(a.slots[i].vector.isApprox(b.slots[i].vector, 0.0));
  }

  CHECK_THROWS_AS(minimal_prompt(1, DisasterLevel{2, ""}), Error);  // undefined label
}

TEST_CASE("build_prompt under the soft-prompt and immobility switches") {
  DisasterLevel level{2, "general disaster"};
  std::vector<Eigen::VectorXd> query = {dvec({1, 0, 0})};

  PromptBundle with_prefix = build_prompt(query, dvec({0, 1, 0}), 0, {}, level, test_anchors(),
                                          dvec({7, 7, 7}), true);
  REQUIRE(with_prefix.disaster_prefix.has_value());
  CHECK(with_prefix.disaster_prefix->isApprox(dvec({7, 7, 7})));

  Eigen::MatrixXd mobile_anchors = test_anchors().topRows(4);
  PromptBundle no_immob =
      build_prompt(query, dvec({0, 1, 0}), 0, {}, level, mobile_anchors, std::nullopt, false);
  CHECK(no_immob.n_intentions == 4);
  CHECK(no_immob.slots.size() == 1 + 1 + 4);  // no stay-still candidate
  CHECK(no_immob.text.find("stay still: ") == std::string::npos);
}

TEST_CASE("parse_answer accepts the three anchored forms") {
  RefinementDecision keep = parse_answer("[\"yes\", \"None\", \"None\"]", 8);
  CHECK(keep.q1_correct);
  CHECK_FALSE(keep.q2_immobility.has_value());
  CHECK_FALSE(keep.q3_class.has_value());

  RefinementDecision stay = parse_answer("[\"no\", \"yes\", \"stay still\"]", 8);
  CHECK_FALSE(stay.q1_correct);
  REQUIRE(stay.q2_immobility.has_value());
  CHECK(*stay.q2_immobility);
  CHECK(stay.refines_to_immobility());

  RefinementDecision cls = parse_answer("[\"no\", \"no\", \"2\"]", 8);
  REQUIRE(cls.q3_class.has_value());
  CHECK(*cls.q3_class == 2);
}

TEST_CASE("parse_answer tolerance and rejection") {
  // case-insensitive, whitespace-tolerant, single quotes allowed
  CHECK(parse_answer("  [ \"YES\" ,\t\"NONE\",   \"none\" ]  ", 4).q1_correct);
  CHECK(parse_answer("['no', 'Yes', 'STAY STILL']", 4).refines_to_immobility());
  CHECK(*parse_answer("answer: [\"no\",\"no\",\" 3 \"]", 4).q3_class == 3);

  // invariant violations are errors, not repairs
  CHECK_THROWS_AS(parse_answer("[\"yes\", \"no\", \"2\"]", 4), Error);
  CHECK_THROWS_AS(parse_answer("[\"yes\", \"None\", \"2\"]", 4), Error);
  CHECK_THROWS_AS(parse_answer("[\"no\", \"yes\", \"2\"]", 4), Error);
  CHECK_THROWS_AS(parse_answer("[\"no\", \"no\", \"stay still\"]", 4), Error);
  CHECK_THROWS_AS(parse_answer("[\"no\", \"no\", \"4\"]", 4), Error);   // out of range
  CHECK_THROWS_AS(parse_answer("[\"no\", \"no\", \"-1\"]", 4), Error);
  CHECK_THROWS_AS(parse_answer("[\"no\", \"no\"]", 4), Error);          // two elements
  CHECK_THROWS_AS(parse_answer("[\"maybe\", \"no\", \"1\"]", 4), Error);
  CHECK_THROWS_AS(parse_answer("[no, no, 2]", 4), Error);               // unquoted
  CHECK_THROWS_AS(parse_answer("no no 2", 4), Error);                   // no list
  CHECK_THROWS_AS(parse_answer("[\"no\", \"no\", \"two\"]", 4), Error);
}

TEST_CASE("parse_answer property: generated grammar") {
  std::mt19937_64 rng(99);
  const int n_classes = 6;
  auto quote = [&](const std::string& s) {
    std::string q = rng() % 2 ? "\"" : "'";
    return q + s + q;
  };
  // doctest assertions inside loops: every valid form parses
  for (int trial = 0; trial < 200; ++trial) {
    int form = static_cast<int>(rng() % 3);
    std::string text;
    if (form == 0) {
      text = "[" + quote("yes") + ", " + quote("None") + "," + quote("none") + "]";
      auto d = parse_answer(text, n_classes);
      CHECK(d.keeps_prediction());
    } else if (form == 1) {
      text = "[ " + quote("no") + "," + quote("yes") + ", " + quote("stay still") + " ]";
      auto d = parse_answer(text, n_classes);
      CHECK(d.refines_to_immobility());
    } else {
      int cls = static_cast<int>(rng() % n_classes);
      text = "[" + quote("no") + ", " + quote("no") + ", " + quote(std::to_string(cls)) + "]";
      auto d = parse_answer(text, n_classes);
      CHECK(*d.q3_class == cls);
    }
  }
  // every invariant-violating combination is rejected
  const std::vector<std::string> q1 = {"yes", "no"};
  const std::vector<std::string> q2 = {"yes", "no", "None"};
  const std::vector<std::string> q3 = {"stay still", "None", "0", "5", "99"};
  int rejected = 0, accepted = 0;
  for (const auto& a : q1)
    for (const auto& b : q2)
      for (const auto& c : q3) {
        std::string text = "[\"" + a + "\", \"" + b + "\", \"" + c + "\"]";
        bool valid = (a == "yes" && b == "None" && c == "None") ||
                     (a == "no" && b == "yes" && c == "stay still") ||
                     (a == "no" && b == "no" && (c == "0" || c == "5"));
        try {
          parse_answer(text, n_classes);
          ++accepted;
          CHECK(valid);
        } catch (const Error&) {
          ++rejected;
          CHECK_FALSE(valid);
        }
      }
  CHECK(accepted == 4);
  CHECK(rejected == 26);
}

TEST_CASE("stub backend rules R1-R3") {
  StubBackend stub;
  DisasterLevel severe{3, "severe disaster"};
  DisasterLevel none{0, "no disaster"};

  // R1: severe + all references end immobile + mobile prediction
  std::vector<ReferenceDisplay> stay_refs = {make_ref({0, 4}, severe), make_ref({1, 4}, severe),
                                             make_ref({2, 4}, severe)};
  PromptBundle r1 = minimal_prompt(3, severe, stay_refs);
  CHECK(stub.answer(r1) == "[\"no\", \"yes\", \"stay still\"]");

  // R2: references end {2,2,5} with prediction 5 -> majority 2 at 2/3
  Eigen::MatrixXd anchors(7, 3);
  anchors.setRandom();
  std::vector<ReferenceDisplay> maj_refs;
  for (int next : {2, 2, 5}) {
    ReferenceDisplay r;
    r.level = none;
    r.next_class = next;
    r.next = anchors.row(next).transpose();
    r.sequence.push_back(anchors.row(0).transpose());
    maj_refs.push_back(std::move(r));
  }
  PromptBundle r2 = build_prompt({dvec({1, 0, 0})}, dvec({0, 1, 0}), 5, maj_refs, none, anchors,
                                 std::nullopt, true);
  CHECK(stub.answer(r2) == "[\"no\", \"no\", \"2\"]");

  // R3: references end {1,2,3}, prediction 2 -> no majority, keep
  std::vector<ReferenceDisplay> mixed = {make_ref({0, 1}, none), make_ref({0, 2}, none),
                                         make_ref({0, 3}, none)};
  PromptBundle r3 = minimal_prompt(2, none, mixed);
  CHECK(stub.answer(r3) == "[\"yes\", \"None\", \"None\"]");

  // zero references always keep
  CHECK(stub.answer(minimal_prompt(1, severe)) == "[\"yes\", \"None\", \"None\"]");

  // R1 requires the prediction to be mobile
  std::vector<ReferenceDisplay> stay_refs2 = {make_ref({0, 4}, severe), make_ref({1, 4}, severe)};
  PromptBundle already_stay = minimal_prompt(4, severe, stay_refs2);
  CHECK(stub.answer(already_stay) == "[\"yes\", \"None\", \"None\"]");
}

TEST_CASE("refine applies decisions and records provenance") {
  IntentionSpace space = test_space();
  DisasterLevel level{0, "no disaster"};
  PromptBundle prompt = minimal_prompt(1, level);

  ScriptedBackend keep({"[\"yes\", \"None\", \"None\"]"});
  RefineResult r1 = refine(keep, prompt, space);
  CHECK(r1.refined_class == 1);
  CHECK(r1.refined_vector.isApprox(space.centroids.row(1).transpose()));
  CHECK(r1.decision.backend_id == "scripted");
  CHECK(r1.decision.retry_count == 0);

  ScriptedBackend stay({"[\"no\", \"yes\", \"stay still\"]"});
  RefineResult r2 = refine(stay, prompt, space);
  CHECK(r2.refined_class == space.immobility_class());
  CHECK(r2.refined_vector.isApprox(space.immobility_vector));

  ScriptedBackend to_class({"[\"no\", \"no\", \"3\"]"});
  RefineResult r3 = refine(to_class, prompt, space);
  CHECK(r3.refined_class == 3);
  CHECK(r3.refined_vector.isApprox(space.centroids.row(3).transpose()));
}

TEST_CASE("refine retries then falls back to the unrefined prediction") {
  IntentionSpace space = test_space();
  PromptBundle prompt = minimal_prompt(2, {0, "no disaster"});

  ScriptedBackend flaky({"garbage", "also garbage", "[\"no\", \"no\", \"1\"]"});
  RefineResult ok = refine(flaky, prompt, space, 2);
  CHECK(ok.refined_class == 1);
  CHECK(ok.decision.retry_count == 2);
  CHECK_FALSE(ok.decision.fell_back);

  ScriptedBackend broken({"x", "y", "z"});
  RefineResult fell = refine(broken, prompt, space, 2);
  CHECK(fell.decision.fell_back);
  CHECK(fell.refined_class == 2);  // unrefined prediction kept
  CHECK(fell.decision.retry_count == 2);
  CHECK(broken.calls() == 3);  // initial attempt + R retries
}

TEST_CASE("refinement is a pure function of prompt and response") {
  IntentionSpace space = test_space();
  PromptBundle prompt = minimal_prompt(0, {3, "severe disaster"});
  ScriptedBackend a({"[\"no\", \"no\", \"2\"]"});
  ScriptedBackend b({"[\"no\", \"no\", \"2\"]"});
  RefineResult ra = refine(a, prompt, space);
  RefineResult rb = refine(b, prompt, space);
  CHECK(ra.refined_class == rb.refined_class);
  CHECK(ra.refined_vector.isApprox(rb.refined_vector, 0.0));
}

TEST_CASE("hex vector encoding round-trips bit-exactly") {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> dist(0.0, 100.0);
  Eigen::VectorXd v(17);
  for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = dist(rng);
  v[3] = 0.0;
  v[4] = -0.0;
  Eigen::VectorXd back = hex_decode_vector(hex_encode_vector(v));
  REQUIRE(back.size() == v.size());
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    std::uint64_t a, b;
    std::memcpy(&a, &v[i], 8);
    std::memcpy(&b, &back[i], 8);
    CHECK(a == b);
  }
  CHECK_THROWS_AS(hex_decode_vector("abc"), Error);
}

TEST_CASE("wire request carries text markers, slots, and the disaster prefix") {
  DisasterLevel level{2, "general disaster"};
  PromptBundle prompt = build_prompt({dvec({1, 0, 0})}, dvec({0, 1, 0}), 0,
                                     {make_ref({0, 1}, level)}, level, test_anchors(),
                                     dvec({3, 3, 3}), true);
  std::string body = serialize_wire_request(prompt);
  nlohmann::json j = nlohmann::json::parse(body);
  CHECK(j.at("embedding_slots").size() == prompt.slots.size());
  CHECK(j.at("disaster_prefix").size() == 3);

  // markers in the wire text carry the hex payload
  std::string text = j.at("prompt_text").get<std::string>();
  for (const auto& slot : prompt.slots) {
    std::string marker = "`" + slot.slot_id + ":" + hex_encode_vector(slot.vector) + "`";
    CHECK(text.find(marker) != std::string::npos);
  }
  // slot vectors round-trip through the json numbers
  for (std::size_t i = 0; i < prompt.slots.size(); ++i) {
    auto vec = j.at("embedding_slots").at(i).at("vector").get<std::vector<double>>();
    CHECK(Eigen::Map<Eigen::VectorXd>(vec.data(), static_cast<Eigen::Index>(vec.size()))
              .isApprox(prompt.slots[i].vector, 0.0));
  }
}

TEST_CASE("http backend: transport pass-through, timeouts, garbage payloads") {
  IntentionSpace space = test_space();
  PromptBundle prompt = minimal_prompt(0, {1, "minor disaster"});

  auto pass = std::make_shared<ScriptedTransport>(
      std::vector<std::string>{"{\"answer\": \"[\\\"no\\\",\\\"no\\\",\\\"1\\\"]\"}"});
  HttpBackend backend(pass);
  RefineResult r = refine(backend, prompt, space);
  CHECK(r.refined_class == 1);
  CHECK_FALSE(pass->last_request.empty());

  // two timeouts then success: retry_count == 2
  auto flaky = std::make_shared<ScriptedTransport>(std::vector<std::string>{
      "", "", "{\"answer\": \"[\\\"yes\\\",\\\"None\\\",\\\"None\\\"]\"}"});
  HttpBackend backend2(flaky);
  RefineResult r2 = refine(backend2, prompt, space, 2);
  CHECK(r2.decision.retry_count == 2);
  CHECK(r2.refined_class == 0);
  CHECK_FALSE(r2.decision.fell_back);

  // garbage payloads R+1 times: flagged fallback
  auto garbage = std::make_shared<ScriptedTransport>(
      std::vector<std::string>{"not json", "{}", "{\"answer\": 7}"});
  HttpBackend backend3(garbage);
  RefineResult r3 = refine(backend3, prompt, space, 2);
  CHECK(r3.decision.fell_back);
  CHECK(r3.refined_class == 0);
}

TEST_CASE("http transport factory validates its environment") {
  CHECK_THROWS_AS(make_http_transport("", ""), Error);
  CHECK_NOTHROW(make_http_transport("http://localhost:1/answer", "tok"));
}
