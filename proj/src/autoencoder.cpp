#include "darslp/autoencoder.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "darslp/binio.hpp"
#include "darslp/digest.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace darslp {

const char* ae_variant_name(AEVariant v) {
    switch (v) {
        case AEVariant::Linear: return "linear";
        case AEVariant::Mlp: return "mlp";
        case AEVariant::Entangled: return "entangled";
    }
    return "?";
}

AEVariant ae_variant_from_name(const std::string& s) {
    if (s == "linear") return AEVariant::Linear;
    if (s == "mlp") return AEVariant::Mlp;
    if (s == "entangled") return AEVariant::Entangled;
    throw ValidationError("unknown autoencoder variant: " + s);
}

void LatentLayout::validate() const {
    if (dims != std::array<int, 4>{8, 28, 28, 16})
        throw ValidationError("latent layout must be 8/28/28/16 channels");
}

json AEConfig::to_json() const {
    json j;
    j["variant"] = ae_variant_name(variant);
    j["latent_dims"] = latent.dims;
    j["mlp_hidden"] = mlp_hidden;
    j["loss_weights"] = loss_weights;
    j["sparsity_lambda"] = sparsity_lambda;
    j["lr"] = lr;
    j["adam_betas"] = {beta1, beta2};
    j["epochs"] = epochs;
    j["batch_frames"] = batch_frames;
    j["plateau_factor"] = plateau_factor;
    j["plateau_patience"] = plateau_patience;
    j["lr_decay_factor"] = lr_decay_factor;
    j["lr_decay_every"] = lr_decay_every;
    j["seed"] = seed;
    return j;
}

AEConfig AEConfig::from_json(const json& j) {
    AEConfig c;
    c.variant = ae_variant_from_name(j.value("variant", "linear"));
    if (j.count("latent_dims")) c.latent.dims = j.at("latent_dims").get<std::array<int, 4>>();
    if (j.count("mlp_hidden")) c.mlp_hidden = j.at("mlp_hidden").get<std::array<int, 4>>();
    if (j.count("loss_weights")) c.loss_weights = j.at("loss_weights").get<std::array<double, 4>>();
    c.sparsity_lambda = j.value("sparsity_lambda", c.sparsity_lambda);
    c.lr = j.value("lr", c.lr);
    if (j.count("adam_betas")) {
        c.beta1 = j.at("adam_betas").at(0).get<double>();
        c.beta2 = j.at("adam_betas").at(1).get<double>();
    }
    c.epochs = j.value("epochs", c.epochs);
    c.batch_frames = j.value("batch_frames", c.batch_frames);
    c.plateau_factor = j.value("plateau_factor", c.plateau_factor);
    c.plateau_patience = j.value("plateau_patience", c.plateau_patience);
    c.lr_decay_factor = j.value("lr_decay_factor", c.lr_decay_factor);
    c.lr_decay_every = j.value("lr_decay_every", c.lr_decay_every);
    c.seed = j.value("seed", c.seed);
    for (double w : c.loss_weights)
        if (w <= 0.0) throw ValidationError("ae loss weights must be > 0");
    if (c.sparsity_lambda < 0.0) throw ValidationError("sparsity lambda must be >= 0");
    c.latent.validate();
    return c;
}

PoseAutoencoder::Stage PoseAutoencoder::encoder_stage(Region r) const {
    const int in = layout_.joints(r) * 3;
    const int out = cfg_.latent.dim(r);
    const int hidden = cfg_.mlp_hidden[static_cast<std::size_t>(r)];
    const std::string p = std::string("enc.") + region_name(r);
    Stage s;
    if (cfg_.variant == AEVariant::Mlp && hidden > 0) {
        s.linears = {nn::Linear{p + ".l1", in, hidden}, nn::Linear{p + ".l2", hidden, out}};
        s.act = nn::PReLU{p + ".act"};
    } else {
        s.linears = {nn::Linear{p + ".l1", in, out}};
    }
    return s;
}

PoseAutoencoder::Stage PoseAutoencoder::decoder_stage(Region r) const {
    const int out = layout_.joints(r) * 3;
    const int in = cfg_.latent.dim(r);
    const int hidden = cfg_.mlp_hidden[static_cast<std::size_t>(r)];
    const std::string p = std::string("dec.") + region_name(r);
    Stage s;
    if (cfg_.variant == AEVariant::Mlp && hidden > 0) {
        s.linears = {nn::Linear{p + ".l1", in, hidden}, nn::Linear{p + ".l2", hidden, out}};
        s.act = nn::PReLU{p + ".act"};
    } else {
        s.linears = {nn::Linear{p + ".l1", in, out}};
    }
    return s;
}

PoseAutoencoder::Stage PoseAutoencoder::entangled_stage(bool encoder) const {
    const int pose_dim = layout_.total_joints * 3;
    const int lat = cfg_.latent.total();
    Stage s;
    if (encoder)
        s.linears = {nn::Linear{"enc.all.l1", pose_dim, lat}};
    else
        s.linears = {nn::Linear{"dec.all.l1", lat, pose_dim}};
    return s;
}

PoseAutoencoder PoseAutoencoder::init(const AEConfig& cfg, const SkeletonLayout& layout) {
    layout.validate();
    cfg.latent.validate();
    PoseAutoencoder ae(cfg, layout);
    Rng rng = make_rng(cfg.seed, "ae/init");
    auto init_stage = [&](const Stage& s) {
        for (const nn::Linear& l : s.linears) l.init(ae.params_, rng);
        if (s.act) s.act->init(ae.params_);
    };
    if (cfg.variant == AEVariant::Entangled) {
        init_stage(ae.entangled_stage(true));
        init_stage(ae.entangled_stage(false));
    } else {
        for (Region r : kRegions) init_stage(ae.encoder_stage(r));
        for (Region r : kRegions) init_stage(ae.decoder_stage(r));
    }
    return ae;
}

Mat PoseAutoencoder::run_stage(const Stage& s, const nn::ParamStore& ps, const Mat& x) {
    Mat h = x * ps.at(s.linears[0].prefix + ".w").value;
    h.rowwise() += ps.at(s.linears[0].prefix + ".b").value.row(0);
    if (s.linears.size() == 2) {
        const double alpha = ps.at(s.act->prefix + ".alpha").value(0, 0);
        h = h.unaryExpr([alpha](double v) { return v > 0.0 ? v : alpha * v; });
        h *= ps.at(s.linears[1].prefix + ".w").value;
        h.rowwise() += ps.at(s.linears[1].prefix + ".b").value.row(0);
    }
    return h;
}

int PoseAutoencoder::run_stage_tape(const Stage& s, nn::Graph& g, nn::Binder& bind, int x) {
    int h = s.linears[0].forward(g, bind, x);
    if (s.linears.size() == 2) {
        h = s.act->forward(g, bind, h);
        h = s.linears[1].forward(g, bind, h);
    }
    return h;
}

Mat PoseAutoencoder::encode_frames(const Mat& frames) const {
    if (frames.cols() != layout_.total_joints * 3)
        throw LayoutMismatch("encode: frame width does not match layout");
    if (!frames.allFinite()) throw NonFiniteInput("encode: NaN or Inf input");
    if (cfg_.variant == AEVariant::Entangled) return run_stage(entangled_stage(true), params_, frames);
    Mat out(frames.rows(), cfg_.latent.total());
    for (Region r : kRegions) {
        const Mat block = frames.middleCols(layout_.begin(r) * 3, layout_.joints(r) * 3);
        out.middleCols(cfg_.latent.begin(r), cfg_.latent.dim(r)) =
            run_stage(encoder_stage(r), params_, block);
    }
    return out;
}

Mat PoseAutoencoder::decode_frames(const Mat& codes) const {
    if (codes.cols() != cfg_.latent.total())
        throw LayoutMismatch("decode: latent width does not match layout");
    if (cfg_.variant == AEVariant::Entangled) return run_stage(entangled_stage(false), params_, codes);
    Mat out(codes.rows(), layout_.total_joints * 3);
    for (Region r : kRegions) {
        const Mat block = codes.middleCols(cfg_.latent.begin(r), cfg_.latent.dim(r));
        out.middleCols(layout_.begin(r) * 3, layout_.joints(r) * 3) =
            run_stage(decoder_stage(r), params_, block);
    }
    return out;
}

LatentSequence PoseAutoencoder::encode(const PoseSequence& seq) const {
    return LatentSequence{encode_frames(sequence_matrix(seq))};
}

PoseSequence PoseAutoencoder::decode(const LatentSequence& lat) const {
    return sequence_from_matrix(decode_frames(lat.codes));
}

int PoseAutoencoder::forward_tape(nn::Graph& g, nn::Binder& bind, int x) const {
    if (cfg_.variant == AEVariant::Entangled) {
        int z = run_stage_tape(entangled_stage(true), g, bind, x);
        return run_stage_tape(entangled_stage(false), g, bind, z);
    }
    std::vector<int> recon_blocks;
    recon_blocks.reserve(4);
    for (Region r : kRegions) {
        int block = g.slice_cols(x, layout_.begin(r) * 3, layout_.joints(r) * 3);
        int z = run_stage_tape(encoder_stage(r), g, bind, block);
        recon_blocks.push_back(run_stage_tape(decoder_stage(r), g, bind, z));
    }
    return g.concat_cols(recon_blocks);
}

std::vector<std::string> PoseAutoencoder::encoder_weight_names() const {
    std::vector<std::string> names;
    for (const auto& [name, e] : params_.entries())
        if (name.rfind("enc.", 0) == 0 && name.size() > 2 && name.substr(name.size() - 2) == ".w")
            names.push_back(name);
    return names;
}

double PoseAutoencoder::encoder_l1() const {
    double s = 0.0;
    for (const std::string& n : encoder_weight_names()) s += params_.at(n).value.cwiseAbs().sum();
    return s;
}

int PoseAutoencoder::encoder_l1_tape(nn::Graph& g, nn::Binder& bind) const {
    std::vector<int> terms;
    for (const std::string& n : encoder_weight_names()) terms.push_back(g.sum(g.abs(bind(n))));
    int acc = terms[0];
    for (std::size_t i = 1; i < terms.size(); ++i) acc = g.add(acc, terms[i]);
    return acc;
}

AELossBreakdown ae_loss_frames(const Mat& pred, const Mat& gt, double encoder_l1,
                               const AEConfig& cfg, const SkeletonLayout& layout) {
    if (pred.rows() != gt.rows() || pred.cols() != gt.cols())
        throw ShapeMismatch("ae_loss: pred/gt shape mismatch");
    if (pred.rows() == 0) throw EmptySequence("ae_loss: no frames");
    AELossBreakdown out;
    const double n = static_cast<double>(pred.rows());
    for (Region r : kRegions) {
        const int c0 = layout.begin(r) * 3;
        const int w = layout.joints(r) * 3;
        const double region_l1 = (pred.middleCols(c0, w) - gt.middleCols(c0, w)).cwiseAbs().sum();
        const double term = cfg.loss_weights[static_cast<std::size_t>(r)] * region_l1 / n;
        out.per_region[static_cast<std::size_t>(r)] = term;
        out.total += term;
    }
    out.sparsity = cfg.sparsity_lambda * encoder_l1;
    out.total += out.sparsity;
    return out;
}

AELossBreakdown ae_loss(const PoseSequence& pred, const PoseSequence& gt,
                        const PoseAutoencoder& model, const AEConfig& cfg) {
    return ae_loss_frames(sequence_matrix(pred), sequence_matrix(gt), model.encoder_l1(), cfg,
                          model.layout());
}

int ae_loss_tape(nn::Graph& g, nn::Binder& bind, const PoseAutoencoder& model, int recon,
                 int gt_const) {
    const AEConfig& cfg = model.config();
    const SkeletonLayout& layout = model.layout();
    const double n = static_cast<double>(g.value(recon).rows());
    int diff = g.abs(g.sub(recon, gt_const));
    int total = -1;
    for (Region r : kRegions) {
        int block = g.slice_cols(diff, layout.begin(r) * 3, layout.joints(r) * 3);
        int term = g.cmul(g.sum(block), cfg.loss_weights[static_cast<std::size_t>(r)] / n);
        total = total < 0 ? term : g.add(total, term);
    }
    if (cfg.sparsity_lambda > 0.0)
        total = g.add(total, g.cmul(model.encoder_l1_tape(g, bind), cfg.sparsity_lambda));
    return total;
}

PoseAutoencoder AECheckpoint::model() const {
    PoseAutoencoder m = PoseAutoencoder::init(config, layout);
    for (auto& [name, e] : m.params().entries()) e.value = params.at(name).value;
    return m;
}

void AECheckpoint::save(const std::string& path) const {
    json meta;
    meta["config"] = config.to_json();
    meta["layout"] = layout.to_json();
    json logj = json::array();
    for (const AEEpochRecord& r : log) {
        logj.push_back({{"epoch", r.epoch},
                        {"train_total", r.train_total},
                        {"per_region", r.per_region},
                        {"sparsity", r.sparsity},
                        {"dev_l1", r.dev_l1}});
    }
    meta["training_log"] = logj;
    const std::string meta_str = meta.dump();

    BinWriter w(path);
    w.magic("AECKPT/1\n", 9);
    w.u32(static_cast<std::uint32_t>(meta_str.size()));
    w.bytes(meta_str);
    w.u64(layout.layout_hash());
    w.u32(static_cast<std::uint32_t>(params.entries().size()));
    for (const auto& [name, e] : params.entries()) {
        w.u32(static_cast<std::uint32_t>(name.size()));
        w.bytes(name);
        w.u32(static_cast<std::uint32_t>(e.value.rows()));
        w.u32(static_cast<std::uint32_t>(e.value.cols()));
        w.f64_matrix(e.value);
    }
}

AECheckpoint AECheckpoint::load(const std::string& path, const SkeletonLayout* expected_layout) {
    BinReader r(path);
    r.magic("AECKPT/1\n", 9);
    const std::uint32_t meta_len = r.u32();
    json meta = json::parse(r.bytes(meta_len));
    AECheckpoint ck;
    ck.config = AEConfig::from_json(meta.at("config"));
    ck.layout = SkeletonLayout::from_json(meta.at("layout"));
    for (const auto& e : meta.at("training_log")) {
        AEEpochRecord rec;
        rec.epoch = e.at("epoch").get<int>();
        rec.train_total = e.at("train_total").get<double>();
        rec.per_region = e.at("per_region").get<std::array<double, 4>>();
        rec.sparsity = e.at("sparsity").get<double>();
        rec.dev_l1 = e.at("dev_l1").get<double>();
        ck.log.push_back(rec);
    }
    const std::uint64_t stored_hash = r.u64();
    if (stored_hash != ck.layout.layout_hash())
        throw HashMismatch("autoencoder checkpoint: layout hash corrupted");
    if (expected_layout && stored_hash != expected_layout->layout_hash())
        throw HashMismatch("autoencoder checkpoint was built for a different layout");
    const std::uint32_t n_tensors = r.u32();
    for (std::uint32_t i = 0; i < n_tensors; ++i) {
        const std::uint32_t name_len = r.u32();
        const std::string name = r.bytes(name_len);
        const std::uint32_t rows = r.u32();
        const std::uint32_t cols = r.u32();
        Mat v = r.f64_matrix(rows, cols);
        auto& entry = ck.params.entries()[name];
        entry.value = std::move(v);
        entry.grad = Mat::Zero(rows, cols);
        entry.m = Mat::Zero(rows, cols);
        entry.v = Mat::Zero(rows, cols);
    }
    return ck;
}

namespace {

Mat stack_frames(const std::vector<CorpusSample>& samples) {
    long total = 0;
    for (const CorpusSample& s : samples) total += s.pose.length();
    if (total == 0) throw EmptyCorpus("no frames");
    Mat all(total, samples.front().pose.frames.front().rows() * 3);
    long row = 0;
    for (const CorpusSample& s : samples) {
        Mat m = sequence_matrix(s.pose);
        all.middleRows(row, m.rows()) = m;
        row += m.rows();
    }
    return all;
}

}  // namespace

AECheckpoint train_ae(const std::vector<CorpusSample>& train,
                      const std::vector<CorpusSample>& dev, const AEConfig& cfg,
                      const SkeletonLayout& layout) {
    if (train.empty()) throw EmptyCorpus("train_ae: empty training split");
    PoseAutoencoder model = PoseAutoencoder::init(cfg, layout);
    const Mat train_frames = stack_frames(train);
    const Mat dev_frames = dev.empty() ? Mat() : stack_frames(dev);

    nn::Adam opt(nn::AdamConfig{cfg.lr, cfg.beta1, cfg.beta2, 1e-8, 0.0});
    nn::PlateauScheduler sched(cfg.plateau_factor, cfg.plateau_patience);
    Rng shuffle_rng = make_rng(cfg.seed, "ae/shuffle");

    auto dev_metric = [&](void) -> double {
        const Mat& frames = dev_frames.size() > 0 ? dev_frames : train_frames;
        Mat recon = model.decode_frames(model.encode_frames(frames));
        return (recon - frames).cwiseAbs().mean();
    };

    AECheckpoint best;
    best.config = cfg;
    best.layout = layout;
    best.params = model.params();
    double best_dev = cfg.epochs > 0 ? std::numeric_limits<double>::infinity() : 0.0;

    std::vector<long> order(static_cast<std::size_t>(train_frames.rows()));
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<long>(i);

    std::vector<AEEpochRecord> log;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), shuffle_rng);
        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_frames)) {
            const std::size_t bsz = std::min<std::size_t>(static_cast<std::size_t>(cfg.batch_frames),
                                                          order.size() - start);
            Mat batch(bsz, train_frames.cols());
            for (std::size_t i = 0; i < bsz; ++i) batch.row(static_cast<Eigen::Index>(i)) = train_frames.row(order[start + i]);

            nn::Graph g;
            nn::Binder bind(g, model.params());
            int x = g.constant(batch);
            int recon = model.forward_tape(g, bind, x);
            int loss = ae_loss_tape(g, bind, model, recon, x);
            const double loss_val = g.value(loss)(0, 0);
            if (!std::isfinite(loss_val)) throw DivergenceDetected("train_ae: loss is not finite");
            model.params().zero_grad();
            g.backward(loss);
            bind.harvest();
            opt.step(model.params());
        }
        // Epoch record: full training objective at the end of the epoch
        // (shuffle-independent, unlike a running batch average).
        AEEpochRecord rec;
        rec.epoch = epoch;
        {
            Mat recon = model.decode_frames(model.encode_frames(train_frames));
            AELossBreakdown bd =
                ae_loss_frames(recon, train_frames, model.encoder_l1(), cfg, layout);
            rec.train_total = bd.total;
            rec.per_region = bd.per_region;
            rec.sparsity = bd.sparsity;
        }
        rec.dev_l1 = dev_metric();
        log.push_back(rec);
        if (rec.dev_l1 < best_dev) {
            best_dev = rec.dev_l1;
            best.params = model.params();
        }
        if (cfg.plateau_factor < 1.0) sched.observe(rec.dev_l1, opt);
        if (cfg.lr_decay_every > 0 && (epoch + 1) % cfg.lr_decay_every == 0)
            opt.set_lr(opt.lr() * cfg.lr_decay_factor);
    }
    if (cfg.epochs == 0) best.params = model.params();
    best.log = std::move(log);
    return best;
}

void write_latent_file(const std::string& path, const LatentSequence& lat,
                       std::uint64_t layout_hash) {
    BinWriter w(path);
    w.magic("DLAT1", 5);
    w.u32(static_cast<std::uint32_t>(lat.codes.rows()));
    w.u32(static_cast<std::uint32_t>(lat.codes.cols()));
    w.f32_matrix(lat.codes);
    w.u64(layout_hash);
}

LatentSequence read_latent_file(const std::string& path, std::uint64_t expected_hash) {
    BinReader r(path);
    r.magic("DLAT1", 5);
    const std::uint32_t t = r.u32();
    const std::uint32_t d = r.u32();
    Mat codes = r.f32_matrix(t, d);
    const std::uint64_t h = r.u64();
    if (h != expected_hash) throw HashMismatch(path + ": latent file layout hash mismatch");
    return LatentSequence{std::move(codes)};
}

std::vector<LatentSequence> extract_latents(const std::vector<CorpusSample>& samples,
                                            const AECheckpoint& ckpt,
                                            const std::string& out_dir) {
    fs::create_directories(out_dir);
    const PoseAutoencoder model = ckpt.model();
    const std::uint64_t hash = ckpt.layout_hash();
    std::ofstream index(fs::path(out_dir) / "index.jsonl");
    if (!index) throw IOError("cannot write latent index in " + out_dir);
    std::vector<LatentSequence> out;
    out.reserve(samples.size());
    for (const CorpusSample& s : samples) {
        LatentSequence lat = model.encode(s.pose);
        // Quantize through float32 so in-memory latents match the files
        // exactly; downstream training is identical either way.
        lat.codes = lat.codes.cast<float>().cast<double>();
        const std::string rel = s.id + ".dlat";
        write_latent_file((fs::path(out_dir) / rel).string(), lat, hash);
        json line;
        line["id"] = s.id;
        line["latent_file"] = rel;
        line["length"] = lat.length();
        index << line.dump() << "\n";
        out.push_back(std::move(lat));
    }
    return out;
}

std::vector<LatentSequence> load_latents(const std::string& dir,
                                         const std::vector<CorpusSample>& samples,
                                         std::uint64_t expected_hash) {
    std::vector<LatentSequence> out;
    out.reserve(samples.size());
    for (const CorpusSample& s : samples)
        out.push_back(read_latent_file((fs::path(dir) / (s.id + ".dlat")).string(), expected_hash));
    return out;
}

}  // namespace darslp
