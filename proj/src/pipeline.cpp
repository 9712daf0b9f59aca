#include "darslp/pipeline.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "darslp/binio.hpp"
#include "darslp/digest.hpp"
#include "darslp/plots.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace darslp {

json PipelineConfig::to_json() const {
    json j;
    j["corpus_dir"] = corpus_dir;
    j["workdir"] = workdir;
    j["seed"] = seed;
    j["t_max"] = t_max;
    j["layout"] = layout.to_json();
    j["synth"] = {{"n_samples", synth.n_samples},
                  {"vocab_size", synth.vocab_size},
                  {"motif_bank_size", synth.motif_bank_size},
                  {"max_tokens", synth.max_tokens},
                  {"motif_frames", synth.motif_frames},
                  {"crossfade_frames", synth.crossfade_frames}};
    j["train_frac"] = train_frac;
    j["dev_frac"] = dev_frac;
    j["ae"] = ae.to_json();
    j["gen"] = gen.to_json();
    j["analysis"] = {{"bins", analysis_bins},
                     {"grid", analysis_grid},
                     {"bandwidth", analysis_bandwidth},
                     {"kinds", analysis_kinds}};
    j["generate_split"] = generate_split;
    j["eval_split"] = eval_split;
    j["generate_from"] = generate_from;
    j["generate_text_file"] = generate_text_file;
    return j;
}

PipelineConfig PipelineConfig::from_json(const json& j) {
    PipelineConfig c;
    c.corpus_dir = j.value("corpus_dir", "");
    c.workdir = j.value("workdir", "");
    c.seed = j.value("seed", std::uint64_t{1});
    c.t_max = j.value("t_max", 300);
    if (j.count("layout")) c.layout = SkeletonLayout::from_json(j.at("layout"));
    if (j.count("synth")) {
        const json& s = j.at("synth");
        c.synth.n_samples = s.value("n_samples", c.synth.n_samples);
        c.synth.vocab_size = s.value("vocab_size", c.synth.vocab_size);
        c.synth.motif_bank_size = s.value("motif_bank_size", c.synth.motif_bank_size);
        c.synth.max_tokens = s.value("max_tokens", c.synth.max_tokens);
        c.synth.motif_frames = s.value("motif_frames", c.synth.motif_frames);
        c.synth.crossfade_frames = s.value("crossfade_frames", c.synth.crossfade_frames);
    }
    c.train_frac = j.value("train_frac", c.train_frac);
    c.dev_frac = j.value("dev_frac", c.dev_frac);
    if (j.count("ae")) c.ae = AEConfig::from_json(j.at("ae"));
    if (j.count("gen")) c.gen = GeneratorConfig::from_json(j.at("gen"));
    if (j.count("analysis")) {
        const json& a = j.at("analysis");
        c.analysis_bins = a.value("bins", c.analysis_bins);
        c.analysis_grid = a.value("grid", c.analysis_grid);
        c.analysis_bandwidth = a.value("bandwidth", c.analysis_bandwidth);
        if (a.count("kinds")) c.analysis_kinds = a.at("kinds").get<std::vector<std::string>>();
    }
    c.generate_split = j.value("generate_split", c.generate_split);
    c.eval_split = j.value("eval_split", c.eval_split);
    c.generate_from = j.value("generate_from", c.generate_from);
    c.generate_text_file = j.value("generate_text_file", c.generate_text_file);
    c.resolve();
    return c;
}

PipelineConfig PipelineConfig::load_file(const std::string& path) {
    return from_json(json::parse(read_text_file(path)));
}

void PipelineConfig::apply_override(const std::string& key_eq_value) {
    const auto eq = key_eq_value.find('=');
    if (eq == std::string::npos)
        throw ValidationError("override must be KEY=VALUE: " + key_eq_value);
    std::string key = key_eq_value.substr(0, eq);
    const std::string value = key_eq_value.substr(eq + 1);
    json j = to_json();
    std::string pointer = "/" + key;
    std::replace(pointer.begin(), pointer.end(), '.', '/');
    json parsed;
    try {
        parsed = json::parse(value);
    } catch (const json::exception&) {
        parsed = value;  // plain string
    }
    try {
        j[json::json_pointer(pointer)] = parsed;
    } catch (const json::exception& e) {
        throw ValidationError("bad override key '" + key + "': " + e.what());
    }
    *this = from_json(j);
}

void PipelineConfig::resolve() {
    if (train_frac <= 0 || dev_frac < 0 || train_frac + dev_frac > 1.0)
        throw ValidationError("split fractions must satisfy 0 < train, 0 <= dev, train+dev <= 1");
    synth.t_max = t_max;
    synth.seed = substream_seed(seed, "synth-data");
    ae.seed = substream_seed(seed, "train-ae");
    gen.seed = substream_seed(seed, "train-gen");
    gen.t_max = t_max;
    layout.validate();
}

const std::vector<std::string>& stage_names() {
    static const std::vector<std::string> names = {
        "prepare-data",    "synth-data",      "train-ae", "extract-latents", "compute-priors",
        "train-gen-phase1", "train-gen-phase2", "generate", "evaluate",        "analyze-latents"};
    return names;
}

namespace {

constexpr const char* kSplits[3] = {"train", "dev", "test"};

struct Paths {
    fs::path work;
    fs::path corpus(const std::string& split) const { return work / "corpus" / split; }
    fs::path corpus_index(const std::string& split) const {
        return corpus(split) / "index.jsonl";
    }
    fs::path ae_ckpt() const { return work / "ae.ckpt"; }
    fs::path latents(const std::string& split) const { return work / "latents" / split; }
    fs::path latents_index(const std::string& split) const {
        return latents(split) / "index.jsonl";
    }
    fs::path priors() const { return work / "priors.json"; }
    fs::path gen_ckpt(int phase) const {
        return work / ("gen_phase" + std::to_string(phase) + ".ckpt");
    }
    fs::path generated(const std::string& split) const { return work / "generated" / split; }
    fs::path eval_json(const std::string& split) const {
        return work / ("eval_" + split + ".json");
    }
    fs::path eval_csv(const std::string& split) const { return work / ("eval_" + split + ".csv"); }
    fs::path analysis() const { return work / "analysis"; }
    fs::path stamp(const std::string& stage) const { return work / "stamps" / (stage + ".json"); }
};

// One stage per workdir at a time.
class Lockfile {
  public:
    explicit Lockfile(const fs::path& dir) : path_(dir / ".lock") {
        fd_ = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
        if (fd_ < 0)
            throw ValidationError("workdir is locked by another run (remove " + path_.string() +
                                  " if stale)");
    }
    ~Lockfile() {
        if (fd_ >= 0) {
            ::close(fd_);
            std::error_code ec;
            fs::remove(path_, ec);
        }
    }
    Lockfile(const Lockfile&) = delete;
    Lockfile& operator=(const Lockfile&) = delete;

  private:
    fs::path path_;
    int fd_ = -1;
};

std::string now_iso8601() {
    const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
    return buf;
}

std::vector<std::string> files_under(const fs::path& dir) {
    std::vector<std::string> out;
    if (!fs::exists(dir)) return out;
    for (const auto& e : fs::recursive_directory_iterator(dir))
        if (e.is_regular_file()) out.push_back(e.path().string());
    std::sort(out.begin(), out.end());
    return out;
}

json stage_config_json(const PipelineConfig& cfg, const std::string& stage) {
    json j;
    j["stage"] = stage;
    j["seed"] = cfg.seed;
    j["t_max"] = cfg.t_max;
    j["layout_hash"] = digest_hex(cfg.layout.layout_hash());
    if (stage == "synth-data") {
        j["synth"] = cfg.to_json().at("synth");
        j["train_frac"] = cfg.train_frac;
        j["dev_frac"] = cfg.dev_frac;
    } else if (stage == "prepare-data") {
        j["corpus_dir"] = cfg.corpus_dir;
    } else if (stage == "train-ae") {
        j["ae"] = cfg.ae.to_json();
    } else if (stage == "train-gen-phase1" || stage == "train-gen-phase2") {
        j["gen"] = cfg.gen.to_json();
    } else if (stage == "generate") {
        j["generate_split"] = cfg.generate_split;
        j["generate_from"] = cfg.generate_from;
        j["generate_text_file"] = cfg.generate_text_file;
    } else if (stage == "evaluate") {
        j["eval_split"] = cfg.eval_split;
        j["generate_from"] = cfg.generate_from;
    } else if (stage == "analyze-latents") {
        j["analysis"] = cfg.to_json().at("analysis");
        j["generate_split"] = cfg.generate_split;
    }
    return j;
}

int chosen_gen_phase(const PipelineConfig& cfg, const Paths& p) {
    if (cfg.generate_from == "phase1") return 1;
    if (cfg.generate_from == "phase2") return 2;
    if (cfg.generate_from == "auto") return fs::exists(p.gen_ckpt(2)) ? 2 : 1;
    throw ValidationError("generate_from must be auto, phase1 or phase2");
}

struct StagePlan {
    std::vector<std::string> inputs;            // files whose digests gate caching
    std::vector<std::string> upstream_stages;   // stamps checked for staleness
    std::vector<std::string> outputs;
};

StagePlan plan_stage(const std::string& stage, const PipelineConfig& cfg, const Paths& p) {
    StagePlan plan;
    auto corpus_inputs = [&]() {
        for (const char* s : kSplits) plan.inputs.push_back(p.corpus_index(s).string());
    };
    auto latent_inputs = [&](std::initializer_list<const char*> splits) {
        for (const char* s : splits)
            for (const std::string& f : files_under(p.latents(s))) plan.inputs.push_back(f);
    };
    if (stage == "synth-data") {
        for (const char* s : kSplits) plan.outputs.push_back(p.corpus_index(s).string());
    } else if (stage == "prepare-data") {
        for (const char* s : kSplits)
            plan.inputs.push_back((fs::path(cfg.corpus_dir) / s / "index.jsonl").string());
        for (const char* s : kSplits) plan.outputs.push_back(p.corpus_index(s).string());
    } else if (stage == "train-ae") {
        corpus_inputs();
        plan.upstream_stages = {"synth-data|prepare-data"};
        plan.outputs = {p.ae_ckpt().string()};
    } else if (stage == "extract-latents") {
        corpus_inputs();
        plan.inputs.push_back(p.ae_ckpt().string());
        plan.upstream_stages = {"synth-data|prepare-data", "train-ae"};
        for (const char* s : kSplits) plan.outputs.push_back(p.latents_index(s).string());
    } else if (stage == "compute-priors") {
        latent_inputs({"train"});
        plan.upstream_stages = {"extract-latents"};
        plan.outputs = {p.priors().string()};
    } else if (stage == "train-gen-phase1") {
        corpus_inputs();
        latent_inputs({"train", "dev"});
        plan.inputs.push_back(p.priors().string());
        plan.upstream_stages = {"extract-latents", "compute-priors"};
        plan.outputs = {p.gen_ckpt(1).string()};
    } else if (stage == "train-gen-phase2") {
        corpus_inputs();
        latent_inputs({"train", "dev"});
        plan.inputs.push_back(p.priors().string());
        plan.inputs.push_back(p.gen_ckpt(1).string());
        plan.upstream_stages = {"extract-latents", "compute-priors", "train-gen-phase1"};
        plan.outputs = {p.gen_ckpt(2).string()};
    } else if (stage == "generate") {
        plan.inputs.push_back(p.ae_ckpt().string());
        plan.inputs.push_back(p.gen_ckpt(chosen_gen_phase(cfg, p)).string());
        if (cfg.generate_text_file.empty())
            plan.inputs.push_back(p.corpus_index(cfg.generate_split).string());
        else
            plan.inputs.push_back(cfg.generate_text_file);
        plan.upstream_stages = {"train-ae"};
        plan.outputs = {(p.generated(cfg.generate_split) / "manifest.jsonl").string()};
    } else if (stage == "evaluate") {
        plan.inputs.push_back(p.ae_ckpt().string());
        plan.inputs.push_back(p.gen_ckpt(chosen_gen_phase(cfg, p)).string());
        plan.inputs.push_back(p.corpus_index(cfg.eval_split).string());
        plan.inputs.push_back(p.corpus_index("train").string());  // canonical pose source
        plan.upstream_stages = {"train-ae"};
        plan.outputs = {p.eval_json(cfg.eval_split).string(), p.eval_csv(cfg.eval_split).string()};
    } else if (stage == "analyze-latents") {
        latent_inputs({"train", "dev"});
        plan.inputs.push_back(p.priors().string());
        plan.inputs.push_back(p.ae_ckpt().string());
        plan.upstream_stages = {"extract-latents", "compute-priors"};
        plan.outputs = {(p.analysis() / "channel_stats.csv").string()};
    } else {
        throw ValidationError("unknown stage: " + stage);
    }
    return plan;
}

void check_upstream_stamps(const std::vector<std::string>& upstream, const PipelineConfig& cfg,
                           const Paths& p) {
    for (const std::string& entry : upstream) {
        // "a|b" means either stage satisfies the dependency.
        std::vector<std::string> options;
        std::size_t pos = 0;
        while (pos <= entry.size()) {
            const auto bar = entry.find('|', pos);
            options.push_back(entry.substr(pos, bar == std::string::npos ? entry.size() - pos
                                                                         : bar - pos));
            if (bar == std::string::npos) break;
            pos = bar + 1;
        }
        for (const std::string& st : options) {
            const fs::path stamp = p.stamp(st);
            if (!fs::exists(stamp)) continue;
            const json j = json::parse(read_text_file(stamp.string()));
            if (j.value("config_digest", "") != stage_config_digest(cfg, st))
                throw StaleArtifact("upstream stage '" + st +
                                    "' was built with a different config; re-run it");
            // An upstream whose own inputs changed since it ran is stale too
            // (e.g. retrained checkpoint under extracted latents).
            const json inputs = j.value("inputs", json::object());
            for (const auto& [path, dig] : inputs.items())
                if (!fs::exists(path) || digest_hex(digest_file(path)) != dig.get<std::string>())
                    throw StaleArtifact("upstream stage '" + st +
                                        "' ran against inputs that changed; re-run it");
        }
        // No stamp at all is tolerated when the files exist (foreign
        // artifacts); missing files surface as MissingUpstream below.
    }
}

std::vector<CorpusSample> load_split(const PipelineConfig& cfg, const Paths& p,
                                     const std::string& split) {
    const fs::path dir = p.corpus(split);
    if (!fs::exists(dir / "index.jsonl"))
        throw MissingUpstream("corpus split '" + split + "' not found; run synth-data or prepare-data");
    return load_corpus(dir.string(), cfg.layout, cfg.t_max);
}

void require_file(const fs::path& f, const std::string& hint) {
    if (!fs::exists(f)) throw MissingUpstream(f.string() + " is missing; run " + hint + " first");
}

// ---- stage bodies -------------------------------------------------------

void stage_synth_data(const PipelineConfig& cfg, const Paths& p) {
    auto samples = synth_corpus(cfg.synth, cfg.layout);
    for (CorpusSample& s : samples) s.pose = normalize_pose(s.pose, cfg.layout);
    const auto n = samples.size();
    const auto n_train = static_cast<std::size_t>(std::lround(cfg.train_frac * static_cast<double>(n)));
    const auto n_dev = static_cast<std::size_t>(std::lround(cfg.dev_frac * static_cast<double>(n)));
    std::vector<CorpusSample> train(samples.begin(), samples.begin() + static_cast<long>(std::min(n_train, n)));
    std::vector<CorpusSample> dev, test;
    for (std::size_t i = n_train; i < std::min(n_train + n_dev, n); ++i) dev.push_back(samples[i]);
    for (std::size_t i = n_train + n_dev; i < n; ++i) test.push_back(samples[i]);
    save_corpus(train, p.corpus("train").string());
    save_corpus(dev, p.corpus("dev").string());
    save_corpus(test, p.corpus("test").string());
}

void stage_prepare_data(const PipelineConfig& cfg, const Paths& p) {
    if (cfg.corpus_dir.empty())
        throw ValidationError("prepare-data needs corpus_dir in the config");
    for (const char* split : kSplits) {
        const fs::path src = fs::path(cfg.corpus_dir) / split;
        if (!fs::exists(src / "index.jsonl"))
            throw MissingUpstream("external corpus split missing: " + src.string());
        auto samples = load_corpus(src.string(), cfg.layout, cfg.t_max);
        for (CorpusSample& s : samples) s.pose = normalize_pose(s.pose, cfg.layout);
        save_corpus(samples, p.corpus(split).string());
    }
}

void stage_train_ae(const PipelineConfig& cfg, const Paths& p) {
    auto train = load_split(cfg, p, "train");
    auto dev = load_split(cfg, p, "dev");
    AECheckpoint ck = train_ae(train, dev, cfg.ae, cfg.layout);
    ck.save(p.ae_ckpt().string());
}

void stage_extract_latents(const PipelineConfig& cfg, const Paths& p) {
    require_file(p.ae_ckpt(), "train-ae");
    AECheckpoint ck = AECheckpoint::load(p.ae_ckpt().string(), &cfg.layout);
    for (const char* split : kSplits) {
        auto samples = load_split(cfg, p, split);
        extract_latents(samples, ck, p.latents(split).string());
    }
}

void stage_compute_priors(const PipelineConfig& cfg, const Paths& p) {
    require_file(p.latents_index("train"), "extract-latents");
    auto train = load_split(cfg, p, "train");
    auto latents = load_latents(p.latents("train").string(), train, cfg.layout.layout_hash());
    ChannelPrior prior = compute_priors(latents);
    prior.layout_hash = cfg.layout.layout_hash();
    prior.source = "train";
    prior.save(p.priors().string());
}

void stage_train_gen(const PipelineConfig& cfg, const Paths& p, int phase) {
    require_file(p.latents_index("train"), "extract-latents");
    require_file(p.priors(), "compute-priors");
    auto train = load_split(cfg, p, "train");
    auto dev = load_split(cfg, p, "dev");
    auto train_lat = load_latents(p.latents("train").string(), train, cfg.layout.layout_hash());
    auto dev_lat = load_latents(p.latents("dev").string(), dev, cfg.layout.layout_hash());
    ChannelPrior prior = ChannelPrior::load(p.priors().string(), cfg.layout.layout_hash());
    GeneratorCheckpoint ck;
    if (phase == 2) {
        require_file(p.gen_ckpt(1), "train-gen-phase1");
        GeneratorCheckpoint init = GeneratorCheckpoint::load(p.gen_ckpt(1).string(), &cfg.layout);
        ck = train_generator(train, train_lat, dev, dev_lat, prior, cfg.gen, 2, cfg.layout, &init);
    } else {
        ck = train_generator(train, train_lat, dev, dev_lat, prior, cfg.gen, 1, cfg.layout);
    }
    ck.save(p.gen_ckpt(phase).string());
}

void stage_generate(const PipelineConfig& cfg, const Paths& p) {
    require_file(p.ae_ckpt(), "train-ae");
    const int phase = chosen_gen_phase(cfg, p);
    require_file(p.gen_ckpt(phase), "train-gen-phase" + std::to_string(phase));
    AECheckpoint ae = AECheckpoint::load(p.ae_ckpt().string(), &cfg.layout);
    GeneratorCheckpoint gen_ck = GeneratorCheckpoint::load(p.gen_ckpt(phase).string(), &cfg.layout);

    std::vector<CorpusSample> samples;
    if (!cfg.generate_text_file.empty())
        samples = load_text_manifest(cfg.generate_text_file);
    else
        samples = load_split(cfg, p, cfg.generate_split);

    const fs::path out_dir = p.generated(cfg.generate_split);
    std::vector<std::pair<std::string, PoseSequence>> results;
    std::vector<Mat> latents;
    for (const CorpusSample& s : samples) {
        Mat lat;
        results.emplace_back(s.id, generate(s, gen_ck, ae, &lat));
        latents.push_back(std::move(lat));
    }
    export_for_backtranslation(results, out_dir.string());
    for (std::size_t i = 0; i < results.size(); ++i)
        write_latent_file((out_dir / (results[i].first + ".dlat")).string(),
                          LatentSequence{latents[i]}, cfg.layout.layout_hash());
}

void stage_evaluate(const PipelineConfig& cfg, const Paths& p) {
    require_file(p.ae_ckpt(), "train-ae");
    const int phase = chosen_gen_phase(cfg, p);
    require_file(p.gen_ckpt(phase), "train-gen-phase" + std::to_string(phase));
    AECheckpoint ae = AECheckpoint::load(p.ae_ckpt().string(), &cfg.layout);
    GeneratorCheckpoint gen_ck = GeneratorCheckpoint::load(p.gen_ckpt(phase).string(), &cfg.layout);
    auto split = load_split(cfg, p, cfg.eval_split);
    auto train = load_split(cfg, p, "train");
    std::vector<PoseSequence> train_poses;
    for (const auto& s : train) train_poses.push_back(s.pose);
    CanonicalPose canonical = mean_pose(train_poses, cfg.layout);
    EvalReport rep = evaluate_corpus(gen_ck, ae, split, &canonical,
                                     stage_config_digest(cfg, "evaluate"));
    write_text_file(p.eval_json(cfg.eval_split).string(), rep.to_json().dump(2) + "\n");
    write_text_file(p.eval_csv(cfg.eval_split).string(), rep.to_csv());
}

}  // namespace

std::vector<CorpusSample> load_text_manifest(const std::string& index_path) {
    std::ifstream in(index_path);
    if (!in) throw MissingUpstream("text manifest not found: " + index_path);
    const fs::path base = fs::path(index_path).parent_path();
    std::vector<CorpusSample> out;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        json j = json::parse(line);
        CorpusSample s;
        s.id = j.at("id").get<std::string>();
        if (j.count("tokens")) s.tokens = j.at("tokens").get<std::vector<std::string>>();
        s.embedding = read_embedding_file((base / j.at("emb_file").get<std::string>()).string());
        out.push_back(std::move(s));
    }
    return out;
}

std::string stage_config_digest(const PipelineConfig& cfg, const std::string& stage) {
    return digest_hex(fnv1a64(stage_config_json(cfg, stage).dump()));
}

std::vector<std::string> emit_plots(const PipelineConfig& cfg, const std::string& kind) {
    Paths p{fs::path(cfg.workdir)};
    fs::create_directories(p.analysis());
    std::vector<std::string> outputs;
    const std::uint64_t lhash = cfg.layout.layout_hash();

    if (kind == "stats") {
        require_file(p.latents_index("train"), "extract-latents");
        auto train = load_split(cfg, p, "train");
        auto latents = load_latents(p.latents("train").string(), train, lhash);
        ChannelStats st = channel_stats(latents, cfg.analysis_bins);
        const std::string csv_path = (p.analysis() / "channel_stats.csv").string();
        write_text_file(csv_path, channel_stats_csv(st));
        outputs.push_back(csv_path);
        LatentLayout ll;
        for (Region r : kRegions) {
            // Top 8 channels of the region by entropy, figure-style.
            std::vector<int> chans;
            for (int c = ll.begin(r); c < ll.begin(r) + ll.dim(r); ++c) chans.push_back(c);
            std::sort(chans.begin(), chans.end(),
                      [&](int a, int b) { return st.entropy(a) > st.entropy(b); });
            chans.resize(std::min<std::size_t>(8, chans.size()));
            const std::string png =
                (p.analysis() / (std::string("channels_") + region_name(r) + ".png")).string();
            plot_region_histograms(png, st, chans);
            outputs.push_back(png);
        }
    } else if (kind == "projection") {
        require_file(p.ae_ckpt(), "train-ae");
        require_file(p.latents_index("train"), "extract-latents");
        AECheckpoint ae_ck = AECheckpoint::load(p.ae_ckpt().string(), &cfg.layout);
        PoseAutoencoder model = ae_ck.model();
        auto train = load_split(cfg, p, "train");
        auto train_lat = load_latents(p.latents("train").string(), train, lhash);
        auto dev = load_split(cfg, p, "dev");
        auto dev_lat = load_latents(p.latents("dev").string(), dev, lhash);
        std::vector<PoseSequence> train_poses;
        for (const auto& s : train) train_poses.push_back(s.pose);
        CanonicalPose canonical = mean_pose(train_poses, cfg.layout);
        LatentLayout ll;
        for (Region r : kRegions) {
            RegionProjection proj = fit_region_projection(train_lat, r, ll);
            const std::string base = (p.analysis() / (std::string("projection_") + region_name(r))).string();
            write_text_file(base + ".json", proj.to_json().dump(2) + "\n");
            outputs.push_back(base + ".json");

            Mat dev_pts(0, 2);
            {
                std::vector<Mat> parts;
                long total = 0;
                for (const LatentSequence& l : dev_lat) {
                    parts.push_back(project(l.codes.middleCols(ll.begin(r), ll.dim(r)), proj));
                    total += parts.back().rows();
                }
                dev_pts.resize(total, 2);
                long row = 0;
                for (const Mat& m : parts) {
                    dev_pts.middleRows(row, m.rows()) = m;
                    row += m.rows();
                }
            }
            write_text_file(base + "_dev.csv", points_csv(dev_pts));
            plot_scatter(base + "_dev.png", dev_pts);
            outputs.push_back(base + "_dev.csv");
            outputs.push_back(base + "_dev.png");

            Mat masked = masked_region_embedding(dev, model, r, canonical, proj);
            write_text_file(base + "_dev_masked.csv", points_csv(masked));
            plot_scatter(base + "_dev_masked.png", masked);
            outputs.push_back(base + "_dev_masked.csv");
            outputs.push_back(base + "_dev_masked.png");
        }
    } else if (kind == "density-diff") {
        auto dev = load_split(cfg, p, cfg.generate_split);
        auto dev_lat = load_latents(p.latents(cfg.generate_split).string(), dev, lhash);
        LatentLayout ll;
        for (Region r : kRegions) {
            const std::string base =
                (p.analysis() / (std::string("projection_") + region_name(r))).string();
            if (!fs::exists(base + ".json"))
                throw MissingUpstream("projection artifact missing; run analyze-latents "
                                      "--what projection first");
            RegionProjection proj =
                RegionProjection::from_json(json::parse(read_text_file(base + ".json")));

            const fs::path gen_dir = p.generated(cfg.generate_split);
            std::vector<Mat> gt_parts, gen_parts;
            for (std::size_t i = 0; i < dev.size(); ++i) {
                const fs::path gen_lat_path = gen_dir / (dev[i].id + ".dlat");
                if (!fs::exists(gen_lat_path))
                    throw MissingUpstream("generated latents missing; run generate first");
                LatentSequence gen_lat = read_latent_file(gen_lat_path.string(), lhash);
                gt_parts.push_back(
                    project(dev_lat[i].codes.middleCols(ll.begin(r), ll.dim(r)), proj));
                gen_parts.push_back(
                    project(gen_lat.codes.middleCols(ll.begin(r), ll.dim(r)), proj));
            }
            auto stack = [](const std::vector<Mat>& parts) {
                long total = 0;
                for (const Mat& m : parts) total += m.rows();
                Mat out(total, 2);
                long row = 0;
                for (const Mat& m : parts) {
                    out.middleRows(row, m.rows()) = m;
                    row += m.rows();
                }
                return out;
            };
            DensityDiff dd = density_difference(stack(gt_parts), stack(gen_parts),
                                                cfg.analysis_grid, cfg.analysis_bandwidth);
            const std::string dbase =
                (p.analysis() / (std::string("density_diff_") + region_name(r))).string();
            write_text_file(dbase + ".csv", density_csv(dd));
            plot_heatmap(dbase + ".png", dd);
            outputs.push_back(dbase + ".csv");
            outputs.push_back(dbase + ".png");
        }
    } else {
        throw ValidationError("unknown analysis kind: " + kind +
                              " (expected stats, projection or density-diff)");
    }
    return outputs;
}

StageResult run_stage(const std::string& stage, const PipelineConfig& cfg) {
    if (std::find(stage_names().begin(), stage_names().end(), stage) == stage_names().end())
        throw ValidationError("unknown stage: " + stage);
    if (cfg.workdir.empty()) throw ValidationError("workdir is not set");
    Paths p{fs::path(cfg.workdir)};
    fs::create_directories(p.work);
    fs::create_directories(p.work / "stamps");
    Lockfile lock(p.work);

    const std::string digest = stage_config_digest(cfg, stage);
    StagePlan plan = plan_stage(stage, cfg, p);

    check_upstream_stamps(plan.upstream_stages, cfg, p);

    // Cached?
    if (fs::exists(p.stamp(stage))) {
        const json stamp = json::parse(read_text_file(p.stamp(stage).string()));
        const json inputs = stamp.value("inputs", json::object());
        const json outputs = stamp.value("outputs", json::array());
        bool fresh = stamp.value("config_digest", "") == digest;
        if (fresh)
            for (const auto& [path, dig] : inputs.items())
                if (!fs::exists(path) || digest_hex(digest_file(path)) != dig.get<std::string>()) {
                    fresh = false;
                    break;
                }
        if (fresh)
            for (const auto& out : outputs)
                if (!fs::exists(out.get<std::string>())) {
                    fresh = false;
                    break;
                }
        if (fresh) {
            std::cout << "[" << stage << "] cached; nothing to do\n";
            StageResult r;
            for (const auto& out : outputs) r.outputs.push_back(out.get<std::string>());
            r.cached = true;
            return r;
        }
    }

    for (const std::string& in : plan.inputs)
        if (!fs::exists(in))
            throw MissingUpstream("required input missing: " + in);

    StageResult result;
    if (stage == "synth-data") {
        stage_synth_data(cfg, p);
        result.outputs = plan.outputs;
    } else if (stage == "prepare-data") {
        stage_prepare_data(cfg, p);
        result.outputs = plan.outputs;
    } else if (stage == "train-ae") {
        stage_train_ae(cfg, p);
        result.outputs = plan.outputs;
    } else if (stage == "extract-latents") {
        stage_extract_latents(cfg, p);
        result.outputs = plan.outputs;
    } else if (stage == "compute-priors") {
        stage_compute_priors(cfg, p);
        result.outputs = plan.outputs;
    } else if (stage == "train-gen-phase1") {
        stage_train_gen(cfg, p, 1);
        result.outputs = plan.outputs;
    } else if (stage == "train-gen-phase2") {
        stage_train_gen(cfg, p, 2);
        result.outputs = plan.outputs;
    } else if (stage == "generate") {
        stage_generate(cfg, p);
        result.outputs = plan.outputs;
    } else if (stage == "evaluate") {
        stage_evaluate(cfg, p);
        result.outputs = plan.outputs;
    } else if (stage == "analyze-latents") {
        for (const std::string& kind : cfg.analysis_kinds) {
            auto outs = emit_plots(cfg, kind);
            result.outputs.insert(result.outputs.end(), outs.begin(), outs.end());
        }
    }

    json stamp;
    stamp["stage"] = stage;
    stamp["config_digest"] = digest;
    stamp["layout_hash"] = digest_hex(cfg.layout.layout_hash());
    stamp["timestamp"] = now_iso8601();
    json inputs = json::object();
    for (const std::string& in : plan.inputs)
        if (fs::exists(in)) inputs[in] = digest_hex(digest_file(in));
    stamp["inputs"] = inputs;
    stamp["outputs"] = result.outputs;
    write_text_file(p.stamp(stage).string(), stamp.dump(2) + "\n");
    return result;
}

}  // namespace darslp
