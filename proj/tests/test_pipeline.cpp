#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "darslp/pipeline.hpp"

using namespace darslp;
namespace fs = std::filesystem;

namespace {

PipelineConfig tiny_config(const std::string& tag) {
    PipelineConfig cfg;
    cfg.workdir = (fs::temp_directory_path() / ("darslp_pipe_" + tag)).string();
    fs::remove_all(cfg.workdir);
    cfg.seed = 11;
    cfg.t_max = 60;
    cfg.synth.n_samples = 12;
    cfg.synth.vocab_size = 6;
    cfg.synth.motif_bank_size = 4;
    cfg.synth.max_tokens = 3;
    cfg.train_frac = 0.5;
    cfg.dev_frac = 0.25;
    cfg.ae.epochs = 2;
    cfg.ae.batch_frames = 64;
    cfg.gen.d_model = 16;
    cfg.gen.enc_layers = 1;
    cfg.gen.enc_heads = 2;
    cfg.gen.dec_layers = 1;
    cfg.gen.dec_heads = 2;
    cfg.gen.ffn_dim = 24;
    cfg.gen.max_epochs = 2;
    cfg.gen.batch_size = 4;
    cfg.gen.dropout = 0.0;
    cfg.analysis_grid = 24;
    cfg.resolve();
    return cfg;
}

}  // namespace

TEST_CASE("config: json round trip and overrides") {
    PipelineConfig cfg = tiny_config("cfg");
    PipelineConfig copy = PipelineConfig::from_json(cfg.to_json());
    CHECK(copy.t_max == cfg.t_max);
    CHECK(copy.ae.epochs == cfg.ae.epochs);
    CHECK(copy.gen.d_model == cfg.gen.d_model);

    cfg.apply_override("ae.epochs=7");
    CHECK(cfg.ae.epochs == 7);
    cfg.apply_override("gen.loss_weights=[1,5,5,1]");
    CHECK(cfg.gen.loss_weights == std::array<double, 4>{1, 5, 5, 1});
    cfg.apply_override("eval_split=test");
    CHECK(cfg.eval_split == "test");
    CHECK_THROWS_AS(cfg.apply_override("no_equals_sign"), ValidationError);
    CHECK_THROWS_AS(cfg.apply_override("gen.enc_heads=7"), ValidationError);  // must divide d_model
}

TEST_CASE("stage digests differ per stage and respond to config edits") {
    PipelineConfig cfg = tiny_config("digest");
    const std::string a = stage_config_digest(cfg, "train-ae");
    const std::string b = stage_config_digest(cfg, "train-gen-phase1");
    CHECK(a != b);
    PipelineConfig cfg2 = cfg;
    cfg2.apply_override("ae.epochs=99");
    CHECK(stage_config_digest(cfg2, "train-ae") != a);
    CHECK(stage_config_digest(cfg2, "train-gen-phase1") == b);  // unrelated stage unaffected
}

TEST_CASE("missing upstream: phase-2 without phase-1, analysis without artifacts") {
    PipelineConfig cfg = tiny_config("missing");
    CHECK_THROWS_AS(run_stage("train-gen-phase2", cfg), MissingUpstream);
    CHECK_THROWS_AS(run_stage("train-ae", cfg), MissingUpstream);  // no corpus yet
    CHECK_THROWS_AS(emit_plots(cfg, "stats"), MissingUpstream);
    CHECK_THROWS_AS(run_stage("nonsense-stage", cfg), ValidationError);
}

TEST_CASE("numeric divergence surfaces as DivergenceDetected") {
    PipelineConfig cfg = tiny_config("diverge");
    run_stage("synth-data", cfg);
    cfg.apply_override("ae.lr=1e200");  // overflows the reconstruction within an epoch
    CHECK_THROWS_AS(run_stage("train-ae", cfg), DivergenceDetected);
}

TEST_CASE("pipeline: stages run, cache, and invalidate in order") {
    PipelineConfig cfg = tiny_config("run");

    StageResult r1 = run_stage("synth-data", cfg);
    CHECK_FALSE(r1.cached);
    CHECK(fs::exists(fs::path(cfg.workdir) / "corpus" / "train" / "index.jsonl"));

    StageResult r2 = run_stage("synth-data", cfg);
    CHECK(r2.cached);  // identical config + inputs -> no-op

    run_stage("train-ae", cfg);
    run_stage("extract-latents", cfg);
    run_stage("compute-priors", cfg);
    CHECK(fs::exists(fs::path(cfg.workdir) / "priors.json"));

    run_stage("train-gen-phase1", cfg);
    run_stage("train-gen-phase2", cfg);
    run_stage("generate", cfg);
    CHECK(fs::exists(fs::path(cfg.workdir) / "generated" / "dev" / "manifest.jsonl"));
    run_stage("evaluate", cfg);
    CHECK(fs::exists(fs::path(cfg.workdir) / "eval_dev.json"));
    run_stage("analyze-latents", cfg);
    CHECK(fs::exists(fs::path(cfg.workdir) / "analysis" / "channel_stats.csv"));

    // Re-running a completed stage with unchanged config is a no-op.
    CHECK(run_stage("train-ae", cfg).cached);
    CHECK(run_stage("evaluate", cfg).cached);

    // Changing the AE config makes downstream consumers flag staleness.
    PipelineConfig changed = cfg;
    changed.apply_override("ae.epochs=3");
    CHECK_FALSE(run_stage("train-ae", changed).cached);      // re-runs
    CHECK_THROWS_AS(run_stage("compute-priors", changed), StaleArtifact);  // latents now stale
}

TEST_CASE("emit_plots: analysis artifact counts and csv stability") {
    PipelineConfig cfg = tiny_config("plots");
    run_stage("synth-data", cfg);
    run_stage("train-ae", cfg);
    run_stage("extract-latents", cfg);
    run_stage("compute-priors", cfg);

    auto outs = emit_plots(cfg, "stats");
    // One CSV plus one panel per region.
    int csvs = 0, pngs = 0;
    for (const auto& o : outs) {
        if (o.size() > 4 && o.substr(o.size() - 4) == ".csv") ++csvs;
        if (o.size() > 4 && o.substr(o.size() - 4) == ".png") ++pngs;
    }
    CHECK(csvs == 1);
    CHECK(pngs == 4);

    // CSV re-emission is byte-identical for unchanged inputs.
    const std::string csv_path = (fs::path(cfg.workdir) / "analysis" / "channel_stats.csv").string();
    std::ifstream f1(csv_path, std::ios::binary);
    std::string first((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
    emit_plots(cfg, "stats");
    std::ifstream f2(csv_path, std::ios::binary);
    std::string second((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
    CHECK(first == second);

    // density-diff before projection artifacts exist -> missing upstream.
    CHECK_THROWS_AS(emit_plots(cfg, "density-diff"), MissingUpstream);
    emit_plots(cfg, "projection");
    // Still missing: generated latents.
    CHECK_THROWS_AS(emit_plots(cfg, "density-diff"), MissingUpstream);
    CHECK_THROWS_AS(emit_plots(cfg, "everything"), ValidationError);
}

TEST_CASE("text manifest loader") {
    PipelineConfig cfg = tiny_config("manifest");
    run_stage("synth-data", cfg);
    // Reuse the dev split's embedding files through a manifest.
    const fs::path dev = fs::path(cfg.workdir) / "corpus" / "dev";
    std::ifstream idx(dev / "index.jsonl");
    std::ofstream mf(dev / "text_only.jsonl");
    std::string line;
    int n = 0;
    while (std::getline(idx, line)) {
        auto j = nlohmann::json::parse(line);
        nlohmann::json out;
        out["id"] = j.at("id");
        out["emb_file"] = j.at("emb_file");
        mf << out.dump() << "\n";
        ++n;
    }
    mf.close();
    auto samples = load_text_manifest((dev / "text_only.jsonl").string());
    CHECK(static_cast<int>(samples.size()) == n);
    for (const auto& s : samples) {
        CHECK(s.embedding.rows() >= 1);
        CHECK(s.pose.frames.empty());
    }
}
