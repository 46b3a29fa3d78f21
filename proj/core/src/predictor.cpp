#include "mobintent/predictor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "mobintent/corpus_io.hpp"
#include "mobintent/jsonio.hpp"

namespace mobintent {

std::string to_string(ModulationMode mode) {
  switch (mode) {
    case ModulationMode::None: return "none";
    case ModulationMode::Mul: return "mul";
    case ModulationMode::Concat: return "concat";
    case ModulationMode::Attn: return "attn";
  }
  fail("unknown modulation mode");
}

ModulationMode modulation_mode_from_string(const std::string& s) {
  if (s == "none") return ModulationMode::None;
  if (s == "mul") return ModulationMode::Mul;
  if (s == "concat") return ModulationMode::Concat;
  if (s == "attn") return ModulationMode::Attn;
  fail("unknown modulation mode '" + s + "'");
}

Eigen::VectorXd modulate(const Eigen::VectorXd& h, const Eigen::VectorXd& intention,
                         ModulationMode mode, const FusionParams& fusion) {
  switch (mode) {
    case ModulationMode::None:
      return h;
    case ModulationMode::Mul: {
      require(fusion.lift_w.rows() == intention.size() && fusion.lift_w.cols() == h.size(),
              "lift dimensions do not match MUL inputs");
      Eigen::VectorXd lifted =
          (intention.transpose() * fusion.lift_w + fusion.lift_b.row(0)).transpose();
      return h.cwiseProduct(lifted);
    }
    case ModulationMode::Concat: {
      Eigen::VectorXd fused(h.size() + intention.size());
      fused << h, intention;
      return fused;
    }
    case ModulationMode::Attn: {
      require(fusion.lift_w.rows() == intention.size() && fusion.lift_w.cols() == h.size(),
              "lift dimensions do not match ATTN inputs");
      Eigen::VectorXd lifted =
          (intention.transpose() * fusion.lift_w + fusion.lift_b.row(0)).transpose();
      Eigen::VectorXd q = fusion.attn_wq.transpose() * h;
      Eigen::VectorXd k0 = fusion.attn_wk.transpose() * lifted;
      Eigen::VectorXd k1 = fusion.attn_wk.transpose() * h;
      Eigen::VectorXd v0 = fusion.attn_wv.transpose() * lifted;
      Eigen::VectorXd v1 = fusion.attn_wv.transpose() * h;
      double scale = 1.0 / std::sqrt(static_cast<double>(h.size()));
      double s0 = q.dot(k0) * scale, s1 = q.dot(k1) * scale;
      double mx = std::max(s0, s1);
      double e0 = std::exp(s0 - mx), e1 = std::exp(s1 - mx);
      double w0 = e0 / (e0 + e1), w1 = e1 / (e0 + e1);
      return h + w0 * v0 + w1 * v1;
    }
  }
  fail("unknown modulation mode");
}

int PredictionRanking::rank_of(int location) const {
  for (std::size_t i = 0; i < location_order.size(); ++i)
    if (location_order[i] == location) return static_cast<int>(i) + 1;
  fail("location not present in ranking");
}

void PredictorConfig::validate() const {
  require(base == "freq" || base == "rnn", "base must be freq or rnn");
  require(d_h >= 1 && loc_embed >= 1, "bad predictor dimensions");
  require(lr > 0.0 && epochs >= 0, "bad optimizer settings");
  require(freq_alpha > 0.0, "freq_alpha must be positive");
}

LocationPredictor::LocationPredictor(std::vector<std::string> location_ids, int intention_dim,
                                     PredictorConfig config)
    : location_ids_(std::move(location_ids)), intention_dim_(intention_dim), config_(config) {
  config_.validate();
  require(location_ids_.size() >= 2, "need at least 2 locations");
  require(intention_dim_ >= 1, "intention dimension must be >= 1");
  const int n_loc = n_locations();
  const int dh = hidden_dim();

  auto rng = make_rng(derive_seed(config_.seed, "predictor-init"));
  auto gauss = [&](const std::string& name, Eigen::Index r, Eigen::Index c, double fan_in) {
    Eigen::MatrixXd& p = params_.declare(name, r, c);
    ad::init_gaussian(p, rng, 1.0 / std::sqrt(fan_in));
  };

  if (config_.base == "rnn") {
    gauss("rnn.embed", n_loc, config_.loc_embed, config_.loc_embed);
    for (const char* gate : {"z", "r", "h"}) {
      gauss(std::string("rnn.wx") + gate, config_.loc_embed, dh, config_.loc_embed);
      gauss(std::string("rnn.wh") + gate, dh, dh, dh);
      params_.declare(std::string("rnn.b") + gate, 1, dh);
    }
  } else {
    global_counts_ = Eigen::VectorXd::Zero(n_loc);
  }

  // lift starts as the identity gate; attention value map starts silent
  params_.declare("fuse.lift_w", intention_dim_, dh);
  params_.declare("fuse.lift_b", 1, dh).setOnes();
  gauss("fuse.attn_wq", dh, dh, dh);
  gauss("fuse.attn_wk", dh, dh, dh);
  params_.declare("fuse.attn_wv", dh, dh);

  int fused_dim = config_.mode == ModulationMode::Concat ? dh + intention_dim_ : dh;
  gauss("g.w", fused_dim, n_loc, fused_dim);
  params_.declare("g.b", 1, n_loc);
}

int LocationPredictor::hidden_dim() const {
  return config_.base == "freq" ? n_locations() : config_.d_h;
}

void LocationPredictor::force_identity_lift() {
  params_.value("fuse.lift_w").setZero();
  params_.value("fuse.lift_b").setOnes();
}

// --- frequency base ------------------------------------------------------------

Eigen::VectorXd LocationPredictor::freq_scores(const std::vector<int>& prefix,
                                               const std::string& user_id) const {
  const int n_loc = n_locations();
  Eigen::VectorXd user = Eigen::VectorXd::Zero(n_loc);
  auto it = user_counts_.find(user_id);
  if (it != user_counts_.end()) user = it->second;
  for (int loc : prefix) {
    require(loc >= 0 && loc < n_loc, "unknown location in prefix");
    user[loc] += 1.0;
  }
  Eigen::VectorXd global = global_counts_;
  for (int loc : prefix) global[loc] += 1.0;

  Eigen::VectorXd u = (user.array() + config_.freq_alpha).matrix();
  Eigen::VectorXd g = (global.array() + config_.freq_alpha).matrix();
  u /= u.sum();
  g /= g.sum();
  return u.cwiseProduct(g);
}

// --- recurrent base -------------------------------------------------------------

ad::Var LocationPredictor::rnn_hidden_states(ad::Tape& tape, const std::vector<int>& prefix) const {
  require(!prefix.empty(), "prefix must contain at least one location");
  const int dh = config_.d_h;
  ad::Var embed = params_.use(tape, "rnn.embed");
  ad::Var x = ad::rows_gather(embed, prefix);  // T x loc_embed

  ad::Var wxz = params_.use(tape, "rnn.wxz"), whz = params_.use(tape, "rnn.whz"),
          bz = params_.use(tape, "rnn.bz");
  ad::Var wxr = params_.use(tape, "rnn.wxr"), whr = params_.use(tape, "rnn.whr"),
          br = params_.use(tape, "rnn.br");
  ad::Var wxh = params_.use(tape, "rnn.wxh"), whh = params_.use(tape, "rnn.whh"),
          bh = params_.use(tape, "rnn.bh");

  ad::Var ones = tape.constant(Eigen::MatrixXd::Ones(1, dh));
  ad::Var h = tape.constant(Eigen::MatrixXd::Zero(1, dh));
  std::vector<ad::Var> states;
  for (std::size_t t = 0; t < prefix.size(); ++t) {
    ad::Var xt = ad::rows_gather(x, {static_cast<int>(t)});
    ad::Var z = ad::sigmoid(ad::add_rowvec(ad::add(xt * wxz, h * whz), bz));
    ad::Var r = ad::sigmoid(ad::add_rowvec(ad::add(xt * wxr, h * whr), br));
    ad::Var cand = ad::tanh_op(ad::add_rowvec(ad::add(xt * wxh, ad::cmul(r, h) * whh), bh));
    h = ad::add(ad::cmul(ad::sub(ones, z), h), ad::cmul(z, cand));
    states.push_back(h);
  }
  return ad::concat_rows(states);
}

ad::Var LocationPredictor::fuse(ad::Tape& tape, ad::Var h_row, ad::Var intention_row) const {
  switch (config_.mode) {
    case ModulationMode::None:
      return h_row;
    case ModulationMode::Mul: {
      ad::Var lifted = ad::add_rowvec(intention_row * params_.use(tape, "fuse.lift_w"),
                                      params_.use(tape, "fuse.lift_b"));
      return ad::cmul(h_row, lifted);
    }
    case ModulationMode::Concat:
      return ad::concat_cols({h_row, intention_row});
    case ModulationMode::Attn: {
      ad::Var lifted = ad::add_rowvec(intention_row * params_.use(tape, "fuse.lift_w"),
                                      params_.use(tape, "fuse.lift_b"));
      ad::Var wq = params_.use(tape, "fuse.attn_wq");
      ad::Var wk = params_.use(tape, "fuse.attn_wk");
      ad::Var wv = params_.use(tape, "fuse.attn_wv");
      ad::Var q = h_row * wq;                       // 1 x dh
      ad::Var keys = ad::concat_rows({lifted * wk, h_row * wk});    // 2 x dh
      ad::Var values = ad::concat_rows({lifted * wv, h_row * wv});  // 2 x dh
      double scale = 1.0 / std::sqrt(static_cast<double>(hidden_dim()));
      ad::Var scores = ad::scale(q * ad::transpose(keys), scale);  // 1 x 2
      ad::Var ctx = ad::softmax_rows(scores) * values;             // 1 x dh
      return ad::add(h_row, ctx);
    }
  }
  fail("unknown modulation mode");
}

ad::Var LocationPredictor::step_logits(ad::Tape& tape, ad::Var h_row,
                                       const Eigen::VectorXd* intention) const {
  ad::Var fused = h_row;
  if (config_.mode != ModulationMode::None) {
    require(intention != nullptr, "this modulation mode requires an intention feature");
    require(intention->size() == intention_dim_, "intention dimension mismatch");
    fused = fuse(tape, h_row, tape.constant(intention->transpose()));
  }
  return ad::add_rowvec(fused * params_.use(tape, "g.w"), params_.use(tape, "g.b"));
}

ad::Var LocationPredictor::sample_loss(ad::Tape& tape, const PredictorSample& sample) const {
  require(sample.locations.size() >= 2, "training trajectory needs at least 2 records");
  require(sample.intentions.size() == sample.locations.size() - 1,
          "one intention per travel required");
  std::vector<int> prefix(sample.locations.begin(), sample.locations.end() - 1);
  ad::Var states = rnn_hidden_states(tape, prefix);

  std::vector<ad::Var> logit_rows;
  std::vector<int> labels;
  for (std::size_t t = 0; t < prefix.size(); ++t) {
    ad::Var h_t = ad::rows_gather(states, {static_cast<int>(t)});
    logit_rows.push_back(step_logits(tape, h_t, &sample.intentions[t]));
    labels.push_back(sample.locations[t + 1]);
  }
  return ad::cross_entropy_rows(ad::concat_rows(logit_rows), labels);
}

double LocationPredictor::loss_on_sample(const PredictorSample& sample) {
  ad::Tape tape;
  ad::Var loss = sample_loss(tape, sample);
  tape.backward(loss);
  return loss.value()(0, 0);
}

double LocationPredictor::loss_value(const std::vector<PredictorSample>& data) const {
  require(!data.empty(), "empty corpus");
  double total = 0.0;
  for (const auto& s : data) {
    ad::Tape tape;
    total += sample_loss(tape, s).value()(0, 0);
  }
  return total / static_cast<double>(data.size());
}

Eigen::VectorXd LocationPredictor::encode(const std::vector<int>& prefix,
                                          const std::string& user_id) const {
  require(!prefix.empty(), "prefix must contain at least one location");
  for (int loc : prefix)
    require(loc >= 0 && loc < n_locations(), "unknown location in prefix");
  if (config_.base == "freq") return freq_scores(prefix, user_id);
  ad::Tape tape;
  ad::Var states = rnn_hidden_states(tape, prefix);
  return states.value().row(states.value().rows() - 1).transpose();
}

PredictionRanking LocationPredictor::predict(const std::vector<int>& prefix,
                                             const std::string& user_id,
                                             const Eigen::VectorXd* intention) const {
  require(!prefix.empty(), "prefix must contain at least one location");
  for (int loc : prefix)
    require(loc >= 0 && loc < n_locations(), "unknown location in prefix");

  Eigen::VectorXd logits;
  if (config_.base == "freq") {
    // counting base: modulation keeps its identity initialization, so the
    // ranking is the smoothed count product for every mode
    logits = freq_scores(prefix, user_id).array().log().matrix();
  } else {
    ad::Tape tape;
    ad::Var states = rnn_hidden_states(tape, prefix);
    ad::Var h_last = ad::rows_gather(states, {static_cast<int>(prefix.size()) - 1});
    logits = step_logits(tape, h_last, intention).value().row(0).transpose();
  }

  Eigen::ArrayXd shifted = logits.array() - logits.maxCoeff();
  Eigen::ArrayXd expd = shifted.exp();
  Eigen::VectorXd probs = (expd / expd.sum()).matrix();

  PredictionRanking ranking;
  ranking.location_order.resize(static_cast<std::size_t>(n_locations()));
  std::iota(ranking.location_order.begin(), ranking.location_order.end(), 0);
  std::stable_sort(ranking.location_order.begin(), ranking.location_order.end(),
                   [&](int a, int b) {
                     if (probs[a] != probs[b]) return probs[a] > probs[b];
                     return location_ids_[static_cast<std::size_t>(a)] <
                            location_ids_[static_cast<std::size_t>(b)];
                   });
  ranking.probabilities.reserve(ranking.location_order.size());
  for (int loc : ranking.location_order) ranking.probabilities.push_back(probs[loc]);
  ranking.is_immobility_prediction = ranking.top1() == prefix.back();
  return ranking;
}

PredictorTrainReport LocationPredictor::train(const std::vector<PredictorSample>& data) {
  require(!data.empty(), "empty corpus");
  PredictorTrainReport report;

  if (config_.base == "freq") {
    // pure counting; deterministic, no gradient steps
    global_counts_.setZero();
    user_counts_.clear();
    for (const auto& s : data) {
      auto [it, fresh] = user_counts_.try_emplace(s.user_id, Eigen::VectorXd::Zero(n_locations()));
      (void)fresh;
      for (int loc : s.locations) {
        require(loc >= 0 && loc < n_locations(), "unknown location in training data");
        global_counts_[loc] += 1.0;
        it->second[loc] += 1.0;
      }
    }
    report.initial_loss = report.final_loss = 0.0;
    return report;
  }

  report.initial_loss = loss_value(data);
  std::map<std::string, Eigen::MatrixXd> snapshot = params_.values();

  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  auto rng = make_rng(derive_seed(config_.seed, "predictor-train"));
  for (int epoch = 0; epoch < config_.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double total = 0.0;
    for (std::size_t i : order) {
      params_.zero_grads();
      double loss = loss_on_sample(data[i]);
      if (!std::isfinite(loss))
        fail("non-finite location loss at epoch " + std::to_string(epoch));
      params_.sgd_step(config_.lr);
      total += loss;
    }
    report.epoch_loss.push_back(total / static_cast<double>(data.size()));
  }

  report.final_loss = loss_value(data);
  if (report.final_loss > report.initial_loss) {
    params_.mutable_values() = snapshot;
    report.final_loss = report.initial_loss;
    report.reverted = true;
  }
  return report;
}

void LocationPredictor::save(const std::filesystem::path& path) const {
  nlohmann::ordered_json j;
  j["format_version"] = kFormatVersion;
  j["kind"] = "predictor_checkpoint";
  j["manifest"] = {{"base", config_.base},
                   {"mode", to_string(config_.mode)},
                   {"d_h", config_.d_h},
                   {"loc_embed", config_.loc_embed},
                   {"lr", config_.lr},
                   {"epochs", config_.epochs},
                   {"seed", config_.seed},
                   {"freq_alpha", config_.freq_alpha},
                   {"intention_dim", intention_dim_},
                   {"location_ids", location_ids_}};
  nlohmann::ordered_json pj;
  for (const auto& [name, value] : params_.values()) pj[name] = matrix_to_json(value);
  j["params"] = std::move(pj);
  if (config_.base == "freq") {
    j["global_counts"] = vector_to_json(global_counts_);
    nlohmann::ordered_json uj;
    for (const auto& [user, counts] : user_counts_) uj[user] = vector_to_json(counts);
    j["user_counts"] = std::move(uj);
  }
  write_text_file(path, j.dump() + "\n");
}

LocationPredictor LocationPredictor::load(const std::filesystem::path& path) {
  nlohmann::ordered_json j;
  try {
    j = nlohmann::ordered_json::parse(read_text_file(path));
  } catch (const nlohmann::json::exception& e) {
    fail("predictor checkpoint " + path.string() + ": " + e.what());
  }
  require(j.value("format_version", -1) == kFormatVersion,
          "predictor checkpoint: format_version mismatch");
  const auto& man = j.at("manifest");
  PredictorConfig cfg;
  cfg.base = man.at("base").get<std::string>();
  cfg.mode = modulation_mode_from_string(man.at("mode").get<std::string>());
  cfg.d_h = man.at("d_h").get<int>();
  cfg.loc_embed = man.at("loc_embed").get<int>();
  cfg.lr = man.at("lr").get<double>();
  cfg.epochs = man.at("epochs").get<int>();
  cfg.seed = man.at("seed").get<std::uint64_t>();
  cfg.freq_alpha = man.at("freq_alpha").get<double>();

  LocationPredictor model(man.at("location_ids").get<std::vector<std::string>>(),
                          man.at("intention_dim").get<int>(), cfg);
  for (auto& [name, mj] : j.at("params").items()) {
    Eigen::MatrixXd loaded = matrix_from_json(mj);
    Eigen::MatrixXd& dst = model.params_.value(name);
    require(loaded.rows() == dst.rows() && loaded.cols() == dst.cols(),
            "checkpoint parameter shape mismatch for " + name);
    dst = loaded;
  }
  if (cfg.base == "freq") {
    model.global_counts_ = vector_from_json(j.at("global_counts"));
    for (auto& [user, cj] : j.at("user_counts").items())
      model.user_counts_[user] = vector_from_json(cj);
  }
  return model;
}

}  // namespace mobintent
