#include <CLI11.hpp>
#include <iostream>

#include "mobintent/corpus_io.hpp"
#include "mobintent/harness.hpp"
#include "mobintent/jsonio.hpp"

namespace fs = std::filesystem;
using namespace mobintent;

namespace {

struct Paths {
  fs::path workdir = "out";
  fs::path world() const { return workdir / "world.json"; }
  fs::path corpora_dir() const { return workdir / "corpora"; }
  fs::path space() const { return workdir / "intention_model.json"; }
  fs::path vocab() const { return workdir / "vocab.txt"; }
  fs::path clip() const { return workdir / "clip.json"; }
  fs::path index() const { return workdir / "index.json"; }
};

ExperimentConfig load_config(const std::string& config_path, std::optional<std::uint64_t> seed) {
  ExperimentConfig config = parse_experiment_config(config_path);
  if (seed) config.seed = *seed;
  return config;
}

IntentionClipModel load_clip(const Paths& paths) {
  VocabularyMatrix vocab = load_vocabulary(paths.vocab());
  return IntentionClipModel::load(paths.clip(), vocab);
}

std::unique_ptr<RefinerBackend> make_backend(const std::string& kind, const StubRules& rules) {
  if (kind == "stub") return std::make_unique<StubBackend>(rules);
  if (kind == "http") return std::make_unique<HttpBackend>(make_http_transport_from_env());
  fail("unknown backend '" + kind + "'");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"intention-level mobility prediction for disaster scenarios"};
  app.require_subcommand(1);

  std::string config_path = "configs/default.json";
  std::optional<std::uint64_t> seed_override;
  Paths paths;

  auto add_common = [&](CLI::App* cmd, bool out_is_workdir = true) {
    cmd->add_option("--config", config_path, "experiment config file");
    cmd->add_option("--seed", seed_override, "override the config seed");
    if (out_is_workdir)
      cmd->add_option("--out,--workdir", paths.workdir, "artifact directory");
    else
      cmd->add_option("--workdir", paths.workdir, "artifact directory");
  };

  // init-config
  std::string init_out = "configs/default.json";
  auto* cmd_init = app.add_subcommand("init-config", "write a commented default config");
  cmd_init->add_option("--out", init_out, "destination path");

  // generate-world
  auto* cmd_world = app.add_subcommand("generate-world", "generate the synthetic world");
  add_common(cmd_world);

  // generate-corpora
  auto* cmd_corpora =
      app.add_subcommand("generate-corpora", "generate the four training corpora");
  add_common(cmd_corpora);

  // build-index
  auto* cmd_index = app.add_subcommand("build-index", "build the intention-level DTW index");
  add_common(cmd_index);

  // query-index
  std::string query_traj;
  int query_level = 0;
  int query_k = 3;
  auto* cmd_query = app.add_subcommand("query-index", "query the index by trajectory id");
  add_common(cmd_query);
  cmd_query->add_option("--traj", query_traj, "indexed trajectory id")->required();
  cmd_query->add_option("--level", query_level, "disaster ordinal")->required();
  cmd_query->add_option("--k", query_k, "results per category");

  // refine
  std::string refine_backend = "stub";
  std::string refine_in, refine_index, refine_out;
  auto* cmd_refine = app.add_subcommand("refine", "refine predicted intentions via a backend");
  add_common(cmd_refine, /*out_is_workdir=*/false);
  cmd_refine->add_option("--backend", refine_backend, "stub or http");
  cmd_refine->add_option("--in", refine_in, "predictions file")->required();
  cmd_refine->add_option("--index", refine_index, "index file (defaults to workdir)");
  cmd_refine->add_option("--out", refine_out, "refined output file")->required();

  // train-predictor
  std::string tp_base = "rnn", tp_mode = "concat", tp_corpus, tp_out;
  auto* cmd_train = app.add_subcommand("train-predictor", "train a location predictor");
  add_common(cmd_train, /*out_is_workdir=*/false);
  cmd_train->add_option("--base", tp_base, "freq or rnn");
  cmd_train->add_option("--mode", tp_mode, "mul, concat, attn or none");
  cmd_train->add_option("--corpus", tp_corpus, "training corpus (defaults to d_nt)");
  cmd_train->add_option("--model-out", tp_out, "checkpoint path")->required();

  // predict
  std::string pr_refined, pr_predictions, pr_model, pr_out;
  auto* cmd_predict = app.add_subcommand("predict", "rank next locations for refined intentions");
  add_common(cmd_predict, /*out_is_workdir=*/false);
  cmd_predict->add_option("--refined", pr_refined, "refined intentions file")->required();
  cmd_predict->add_option("--predictions", pr_predictions, "matching predictions file")
      ->required();
  cmd_predict->add_option("--model", pr_model, "predictor checkpoint")->required();
  cmd_predict->add_option("--rankings-out", pr_out, "rankings output file")->required();

  // run
  std::string ablate;
  auto* cmd_run = app.add_subcommand("run", "run the full experiment pipeline");
  add_common(cmd_run);
  cmd_run->add_option("--ablate", ablate,
                      "comma-separated flags to disable: rag,soft_prompt,immobility,llm_refining");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*cmd_init) {
      write_text_file(init_out, default_experiment_config_text());
      std::cout << "wrote " << init_out << "\n";
      return 0;
    }

    if (*cmd_world) {
      ExperimentConfig config = load_config(config_path, seed_override);
      World world = generate_world_stage(config);
      save_world(world, paths.world());
      std::cout << "wrote " << paths.world().string() << " (" << world.cities.size()
                << " cities, hash " << world_hash(world) << ")\n";
      return 0;
    }

    if (*cmd_corpora) {
      ExperimentConfig config = load_config(config_path, seed_override);
      World world;
      if (fs::exists(paths.world())) {
        world = load_world(paths.world());
      } else {
        world = generate_world_stage(config);
        save_world(world, paths.world());
      }
      CorpusBundle corpora = generate_corpora_stage(config, world);
      save_corpus(corpora.d_ns, paths.corpora_dir() / "d_ns.jsonl");
      save_corpus(corpora.d_ds, paths.corpora_dir() / "d_ds.jsonl");
      save_corpus(corpora.d_nt, paths.corpora_dir() / "d_nt.jsonl");
      save_corpus(corpora.d_dt, paths.corpora_dir() / "d_dt.jsonl");
      std::cout << "wrote 4 corpora under " << paths.corpora_dir().string() << " ("
                << corpora.d_ns.trajectories.size() << "/" << corpora.d_ds.trajectories.size()
                << "/" << corpora.d_nt.trajectories.size() << "/"
                << corpora.d_dt.trajectories.size() << " trajectories)\n";
      return 0;
    }

    if (*cmd_index) {
      ExperimentConfig config = load_config(config_path, seed_override);
      World world = load_world(paths.world());
      IntentionModel im = load_intention_model(paths.space());
      Corpus d_ds = load_corpus(paths.corpora_dir() / "d_ds.jsonl");
      Corpus d_nt = load_corpus(paths.corpora_dir() / "d_nt.jsonl");
      TrajectoryIndex index = build_index({&d_ds, &d_nt}, world, im, config.retrieval_k);
      save_index(index, paths.index());
      std::cout << "wrote " << paths.index().string() << " (" << index.entries.size()
                << " entries)\n";
      return 0;
    }

    if (*cmd_query) {
      ExperimentConfig config = load_config(config_path, seed_override);
      TrajectoryIndex index = load_index(paths.index());
      const IndexEntry* query = nullptr;
      for (const auto& e : index.entries)
        if (e.trajectory_id == query_traj) query = &e;
      require(query != nullptr, "trajectory id not in index: " + query_traj);
      ReferenceSet refs = retrieve_references(index, query->vectors,
                                              config.labels.level(query_level), query_k,
                                              query->trajectory_id);
      auto print = [](const char* tag, const std::vector<ScoredReference>& list) {
        std::cout << tag << "\n";
        int rank = 1;
        for (const auto& r : list)
          std::cout << "  " << rank++ << ". " << r.entry->trajectory_id << "  tag="
                    << r.entry->tag() << "  dtw=" << r.distance << "\n";
        if (list.empty()) std::cout << "  (none)\n";
      };
      print("source references:", refs.source_refs);
      print("target references:", refs.target_refs);
      return 0;
    }

    if (*cmd_refine) {
      ExperimentConfig config = load_config(config_path, seed_override);
      World world = load_world(paths.world());
      IntentionModel im = load_intention_model(paths.space());
      IntentionClipModel clip = load_clip(paths);
      TrajectoryIndex index =
          load_index(refine_index.empty() ? paths.index() : fs::path(refine_index));
      auto backend = make_backend(refine_backend, config.stub_rules);
      std::vector<PredictionRecord> predictions = read_predictions(refine_in);
      std::vector<RefinedRecord> refined =
          refine_predictions(config, world, im, clip, index, *backend, predictions);
      write_refined(refined, refine_out);
      std::cout << "wrote " << refine_out << " (" << refined.size() << " records)\n";
      return 0;
    }

    if (*cmd_train) {
      ExperimentConfig config = load_config(config_path, seed_override);
      World world = load_world(paths.world());
      IntentionModel im = load_intention_model(paths.space());
      Corpus corpus = load_corpus(tp_corpus.empty() ? paths.corpora_dir() / "d_nt.jsonl"
                                                    : fs::path(tp_corpus));
      require(!corpus.trajectories.empty(), "training corpus is empty");
      const City& city = world.city(corpus.trajectories.front().city);
      std::vector<std::string> location_ids;
      for (const auto& loc : city.locations) location_ids.push_back(loc.id);

      PredictorConfig pc = config.predictor;
      pc.base = tp_base;
      pc.mode = modulation_mode_from_string(tp_mode);
      pc.seed = derive_seed(config.seed, "predictor");
      LocationPredictor model(location_ids, config.tca_m, pc);

      std::vector<PredictorSample> samples;
      for (const auto& traj : corpus.trajectories) {
        PredictorSample s;
        s.user_id = traj.user_id;
        for (const auto& r : traj.records) s.locations.push_back(city.index_of(r.location_id));
        auto features = extract_travel_features(traj, world);
        for (const auto& step : map_to_intentions(features, im.tca, im.space))
          s.intentions.push_back(step.vector);
        samples.push_back(std::move(s));
      }
      PredictorTrainReport tr = model.train(samples);
      model.save(tp_out);
      std::cout << "wrote " << tp_out << "  initial_loss=" << tr.initial_loss
                << " final_loss=" << tr.final_loss << "\n";
      return 0;
    }

    if (*cmd_predict) {
      World world = load_world(paths.world());
      LocationPredictor model = LocationPredictor::load(pr_model);
      std::vector<PredictionRecord> predictions = read_predictions(pr_predictions);
      std::vector<RefinedRecord> refined = read_refined(pr_refined);
      require(predictions.size() == refined.size(),
              "predictions and refined files differ in length");

      std::ostringstream out;
      out << nlohmann::ordered_json{{"format_version", kFormatVersion}, {"kind", "rankings"}}
                 .dump()
          << "\n";
      for (std::size_t i = 0; i < predictions.size(); ++i) {
        const auto& p = predictions[i];
        const auto& r = refined[i];
        require(p.id == r.id, "record id mismatch between predictions and refined files");
        const City& city = world.city(p.city);
        std::vector<int> prefix;
        for (const auto& id : p.prefix_location_ids) prefix.push_back(city.index_of(id));
        PredictionRanking ranking =
            model.config().mode == ModulationMode::None
                ? model.predict(prefix, p.user_id, nullptr)
                : model.predict(prefix, p.user_id, &r.vector);
        nlohmann::ordered_json j;
        j["id"] = p.id;
        nlohmann::ordered_json ranked = nlohmann::ordered_json::array();
        for (std::size_t k = 0; k < ranking.location_order.size(); ++k)
          ranked.push_back(nlohmann::ordered_json::array(
              {city.locations[static_cast<std::size_t>(ranking.location_order[k])].id,
               ranking.probabilities[k]}));
        j["ranking"] = std::move(ranked);
        j["is_immobility_prediction"] = ranking.is_immobility_prediction;
        if (!p.truth_location_id.empty())
          j["truth_rank"] = ranking.rank_of(city.index_of(p.truth_location_id));
        out << j.dump() << "\n";
      }
      write_text_file(pr_out, out.str());
      std::cout << "wrote " << pr_out << "\n";
      return 0;
    }

    if (*cmd_run) {
      ExperimentConfig config = load_config(config_path, seed_override);
      if (!ablate.empty()) {
        std::stringstream ss(ablate);
        std::string flag;
        while (std::getline(ss, flag, ',')) {
          if (flag == "rag") config.ablation.rag = false;
          else if (flag == "soft_prompt") config.ablation.soft_prompt = false;
          else if (flag == "immobility") config.ablation.immobility = false;
          else if (flag == "llm_refining") config.ablation.llm_refining = false;
          else fail("unknown ablation flag '" + flag + "'");
        }
      }
      MetricsReport report = run_experiment(config, paths.workdir);
      std::cout << report_to_table(report);
      std::cout << "report written to " << (paths.workdir / "report.json").string() << "\n";
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
