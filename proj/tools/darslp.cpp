#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "darslp/binio.hpp"
#include "darslp/evaluation.hpp"
#include "darslp/pipeline.hpp"

using namespace darslp;
namespace fs = std::filesystem;

namespace {

struct CommonOpts {
    std::string config_path;
    std::string workdir;
    std::int64_t seed = -1;
    std::vector<std::string> overrides;
};

void add_common(CLI::App* cmd, CommonOpts& o) {
    cmd->add_option("--config", o.config_path, "pipeline config JSON");
    cmd->add_option("--workdir", o.workdir, "working directory (default $DARSLP_WORKDIR)");
    cmd->add_option("--seed", o.seed, "global seed override");
    cmd->add_option("--stage-override", o.overrides, "KEY=VALUE config override (repeatable)")
        ->take_all();
}

PipelineConfig resolve_config(const CommonOpts& o) {
    PipelineConfig cfg;
    if (!o.config_path.empty()) cfg = PipelineConfig::load_file(o.config_path);
    if (!o.workdir.empty()) cfg.workdir = o.workdir;
    if (cfg.workdir.empty())
        if (const char* env = std::getenv("DARSLP_WORKDIR")) cfg.workdir = env;
    if (o.seed >= 0) cfg.seed = static_cast<std::uint64_t>(o.seed);
    for (const std::string& ov : o.overrides) cfg.apply_override(ov);
    cfg.resolve();
    return cfg;
}

int dispatch_stage(const std::string& stage, const CommonOpts& o) {
    PipelineConfig cfg = resolve_config(o);
    StageResult r = run_stage(stage, cfg);
    if (!r.cached) {
        std::cout << "[" << stage << "] done";
        if (!r.outputs.empty()) std::cout << " -> " << r.outputs.front();
        std::cout << "\n";
    }
    return 0;
}

// The spec's module-level verbs accept explicit artifact paths; the
// "config" they take may be a plain module config or a pipeline config
// holding the relevant subtree.
nlohmann::json module_config_json(const std::string& path, const char* subtree) {
    if (path.empty()) return nlohmann::json::object();
    nlohmann::json j = nlohmann::json::parse(read_text_file(path));
    if (j.count(subtree)) return j.at(subtree);
    return j;
}

// Corpus dir with train/dev/test subdirs, or a bare split dir.
std::pair<std::vector<CorpusSample>, std::vector<CorpusSample>> load_train_dev(
    const std::string& dir, const SkeletonLayout& layout) {
    if (fs::exists(fs::path(dir) / "index.jsonl"))
        return {load_corpus(dir, layout), {}};
    auto train = load_corpus((fs::path(dir) / "train").string(), layout);
    std::vector<CorpusSample> dev;
    if (fs::exists(fs::path(dir) / "dev" / "index.jsonl"))
        dev = load_corpus((fs::path(dir) / "dev").string(), layout);
    return {std::move(train), std::move(dev)};
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"DARSLP: text-to-sign-pose generation pipeline"};
    app.require_subcommand(1);

    std::vector<std::pair<std::string, CommonOpts>> stage_opts;
    stage_opts.reserve(stage_names().size());
    for (const std::string& stage : stage_names()) {
        stage_opts.emplace_back(stage, CommonOpts{});
    }
    // Per-verb convenience flags mapped onto config overrides, plus the
    // direct-path flags of the module interfaces.
    std::string gen_text_file, eval_split, analyze_what, generate_split;
    std::string d_corpus, d_out, d_ckpt, d_latents, d_priors, d_init, d_gen_ckpt, d_ae_ckpt;
    int train_gen_phase = 0;
    CommonOpts train_gen_opts;

    for (auto& [stage, opts] : stage_opts) {
        CLI::App* cmd = app.add_subcommand(stage, "run the " + stage + " stage");
        add_common(cmd, opts);
        if (stage == "generate") {
            cmd->add_option("--text-file", gen_text_file,
                            "embedding manifest (index.jsonl) instead of a corpus split");
            cmd->add_option("--split", generate_split, "corpus split to generate (default dev)");
            cmd->add_option("--gen-ckpt", d_gen_ckpt, "generator checkpoint (direct mode)");
            cmd->add_option("--ae-ckpt", d_ae_ckpt, "autoencoder checkpoint (direct mode)");
            cmd->add_option("--out", d_out, "output directory (direct mode)");
        } else if (stage == "evaluate") {
            cmd->add_option("--split", eval_split, "corpus split to evaluate (default dev)");
        } else if (stage == "analyze-latents") {
            cmd->add_option("--what", analyze_what, "stats | projection | density-diff");
        } else if (stage == "train-ae") {
            cmd->add_option("--corpus", d_corpus, "corpus dir (direct mode)");
            cmd->add_option("--out", d_out, "checkpoint output path (direct mode)");
        } else if (stage == "extract-latents") {
            cmd->add_option("--ckpt", d_ckpt, "autoencoder checkpoint (direct mode)");
            cmd->add_option("--corpus", d_corpus, "corpus split dir (direct mode)");
            cmd->add_option("--out", d_out, "latent output dir (direct mode)");
        }
    }

    CLI::App* train_gen = app.add_subcommand("train-gen", "train the generator (--phase 1|2)");
    add_common(train_gen, train_gen_opts);
    train_gen->add_option("--phase", train_gen_phase, "training phase")->required();
    train_gen->add_option("--corpus", d_corpus, "corpus dir with train/dev (direct mode)");
    train_gen->add_option("--latents", d_latents, "latent dir with train/dev (direct mode)");
    train_gen->add_option("--priors", d_priors, "channel priors JSON (direct mode)");
    train_gen->add_option("--init", d_init, "initial checkpoint (phase 2 resume)");
    train_gen->add_option("--out", d_out, "checkpoint output path (direct mode)");

    CLI11_PARSE(app, argc, argv);

    try {
        if (train_gen->parsed()) {
            if (train_gen_phase != 1 && train_gen_phase != 2)
                throw ValidationError("--phase must be 1 or 2");
            if (!d_corpus.empty() || !d_latents.empty()) {
                if (d_corpus.empty() || d_latents.empty() || d_priors.empty() || d_out.empty())
                    throw ValidationError(
                        "direct train-gen needs --corpus, --latents, --priors and --out");
                SkeletonLayout layout = SkeletonLayout::standard();
                GeneratorConfig cfg = GeneratorConfig::from_json(
                    module_config_json(train_gen_opts.config_path, "gen"));
                auto [train, dev] = load_train_dev(d_corpus, layout);
                auto train_lat = load_latents((fs::path(d_latents) / "train").string(), train,
                                              layout.layout_hash());
                std::vector<LatentSequence> dev_lat;
                if (!dev.empty())
                    dev_lat = load_latents((fs::path(d_latents) / "dev").string(), dev,
                                           layout.layout_hash());
                ChannelPrior priors = ChannelPrior::load(d_priors, layout.layout_hash());
                GeneratorCheckpoint ck;
                if (train_gen_phase == 2) {
                    if (d_init.empty())
                        throw MissingUpstream("phase 2 needs --init with the phase-1 checkpoint");
                    GeneratorCheckpoint init = GeneratorCheckpoint::load(d_init, &layout);
                    ck = train_generator(train, train_lat, dev, dev_lat, priors, cfg, 2, layout,
                                         &init);
                } else {
                    GeneratorCheckpoint init;
                    const GeneratorCheckpoint* initp = nullptr;
                    if (!d_init.empty()) {
                        init = GeneratorCheckpoint::load(d_init, &layout);
                        initp = &init;
                    }
                    ck = train_generator(train, train_lat, dev, dev_lat, priors, cfg, 1, layout,
                                         initp);
                }
                ck.save(d_out);
                std::cout << "[train-gen] done -> " << d_out << "\n";
                return 0;
            }
            return dispatch_stage("train-gen-phase" + std::to_string(train_gen_phase),
                                  train_gen_opts);
        }
        for (auto& [stage, opts] : stage_opts) {
            CLI::App* cmd = app.get_subcommand(stage);
            if (!cmd->parsed()) continue;
            if (stage == "train-ae" && !d_corpus.empty()) {
                if (d_out.empty()) throw ValidationError("direct train-ae needs --out");
                SkeletonLayout layout = SkeletonLayout::standard();
                AEConfig cfg = AEConfig::from_json(module_config_json(opts.config_path, "ae"));
                auto [train, dev] = load_train_dev(d_corpus, layout);
                AECheckpoint ck = train_ae(train, dev, cfg, layout);
                ck.save(d_out);
                std::cout << "[train-ae] done -> " << d_out << "\n";
                return 0;
            }
            if (stage == "extract-latents" && !d_ckpt.empty()) {
                if (d_corpus.empty() || d_out.empty())
                    throw ValidationError("direct extract-latents needs --corpus and --out");
                SkeletonLayout layout = SkeletonLayout::standard();
                AECheckpoint ck = AECheckpoint::load(d_ckpt, &layout);
                auto samples = load_corpus(d_corpus, layout);
                extract_latents(samples, ck, d_out);
                std::cout << "[extract-latents] done -> " << d_out << "\n";
                return 0;
            }
            if (stage == "generate" && !d_gen_ckpt.empty()) {
                if (gen_text_file.empty() || d_ae_ckpt.empty() || d_out.empty())
                    throw ValidationError(
                        "direct generate needs --text-file, --gen-ckpt, --ae-ckpt and --out");
                SkeletonLayout layout = SkeletonLayout::standard();
                GeneratorCheckpoint gen_ck = GeneratorCheckpoint::load(d_gen_ckpt, &layout);
                AECheckpoint ae_ck = AECheckpoint::load(d_ae_ckpt, &layout);
                auto samples = load_text_manifest(gen_text_file);
                std::vector<std::pair<std::string, PoseSequence>> results;
                std::vector<Mat> latents;
                for (const CorpusSample& s : samples) {
                    Mat lat;
                    results.emplace_back(s.id, generate(s, gen_ck, ae_ck, &lat));
                    latents.push_back(std::move(lat));
                }
                export_for_backtranslation(results, d_out);
                for (std::size_t i = 0; i < results.size(); ++i)
                    write_latent_file((fs::path(d_out) / (results[i].first + ".dlat")).string(),
                                      LatentSequence{latents[i]}, layout.layout_hash());
                std::cout << "[generate] done -> " << d_out << "\n";
                return 0;
            }
            if (stage == "generate" && !gen_text_file.empty())
                opts.overrides.push_back("generate_text_file=" + gen_text_file);
            if (stage == "generate" && !generate_split.empty())
                opts.overrides.push_back("generate_split=" + generate_split);
            if (stage == "evaluate" && !eval_split.empty())
                opts.overrides.push_back("eval_split=" + eval_split);
            if (stage == "analyze-latents" && !analyze_what.empty()) {
                PipelineConfig cfg = resolve_config(opts);
                auto outs = emit_plots(cfg, analyze_what);
                std::cout << "[analyze-latents] wrote " << outs.size() << " files\n";
                return 0;
            }
            return dispatch_stage(stage, opts);
        }
        std::cerr << "no subcommand\n";
        return 2;
    } catch (const MissingUpstream& e) {
        std::cerr << "error (missing upstream): " << e.what() << "\n";
        return 3;
    } catch (const StaleArtifact& e) {
        std::cerr << "error (stale artifact): " << e.what() << "\n";
        return 3;
    } catch (const DivergenceDetected& e) {
        std::cerr << "error (divergence): " << e.what() << "\n";
        return 4;
    } catch (const ValidationError& e) {
        std::cerr << "error (validation): " << e.what() << "\n";
        return 2;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "unexpected error: " << e.what() << "\n";
        return 1;
    }
}
