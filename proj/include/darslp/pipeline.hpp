#pragma once

#include <string>
#include <vector>

#include "darslp/autoencoder.hpp"
#include "darslp/corpus.hpp"
#include "darslp/evaluation.hpp"
#include "darslp/generator.hpp"

namespace darslp {

// One JSON config drives the whole workflow; flags override individual
// keys and win over the file. All stage randomness is derived from the
// single global seed through named substreams.
struct PipelineConfig {
    std::string corpus_dir;  // external corpus for prepare-data
    std::string workdir;
    std::uint64_t seed = 1;
    int t_max = 300;
    SkeletonLayout layout = SkeletonLayout::standard();
    SynthConfig synth;
    double train_frac = 0.7;
    double dev_frac = 0.15;
    AEConfig ae;
    GeneratorConfig gen;
    int analysis_bins = 50;
    int analysis_grid = 100;
    double analysis_bandwidth = 0.0;  // 0 = Scott's rule
    std::vector<std::string> analysis_kinds = {"stats", "projection", "density-diff"};
    std::string generate_split = "dev";
    std::string eval_split = "dev";
    std::string generate_from = "auto";  // auto | phase1 | phase2
    std::string generate_text_file;      // embedding manifest instead of a corpus split

    nlohmann::json to_json() const;
    static PipelineConfig from_json(const nlohmann::json& j);
    static PipelineConfig load_file(const std::string& path);
    // "ae.epochs=50" style; value parsed as JSON when possible.
    void apply_override(const std::string& key_eq_value);
    // Syncs derived fields (t_max propagation, per-stage seeds).
    void resolve();
};

struct StageResult {
    std::vector<std::string> outputs;
    bool cached = false;
};

const std::vector<std::string>& stage_names();

// Runs one pipeline stage with artifact stamping: a completed stage with
// unchanged config and inputs is a no-op. Throws MissingUpstream /
// StaleArtifact / ValidationError / DivergenceDetected per contract.
StageResult run_stage(const std::string& stage, const PipelineConfig& cfg);

// Analysis artifact emission (the analyze-latents stage runs every kind in
// cfg.analysis_kinds; the CLI can request a single kind).
std::vector<std::string> emit_plots(const PipelineConfig& cfg, const std::string& kind);

// Manifest of {id, emb_file [, tokens]} lines for generation without
// ground-truth poses.
std::vector<CorpusSample> load_text_manifest(const std::string& index_path);

// Stage-scoped config digest (also stamped into artifacts).
std::string stage_config_digest(const PipelineConfig& cfg, const std::string& stage);

}  // namespace darslp
