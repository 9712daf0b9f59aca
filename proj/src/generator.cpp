#include "darslp/generator.hpp"

#include <algorithm>
#include <cmath>

#include "darslp/binio.hpp"
#include "darslp/nn/layers.hpp"

using nlohmann::json;

namespace darslp {

json GeneratorConfig::to_json() const {
    json j;
    j["d_model"] = d_model;
    j["enc_layers"] = enc_layers;
    j["enc_heads"] = enc_heads;
    j["dec_layers"] = dec_layers;
    j["dec_heads"] = dec_heads;
    j["ffn_dim"] = ffn_dim;
    j["input_dim"] = input_dim;
    j["latent_dim"] = latent_dim;
    j["t_max"] = t_max;
    j["loss_weights"] = loss_weights;
    j["lr"] = lr;
    j["weight_decay"] = weight_decay;
    j["adam_betas"] = {beta1, beta2};
    j["dropout"] = dropout;
    j["plateau_factor"] = plateau_factor;
    j["plateau_patience"] = plateau_patience;
    j["early_stop_patience"] = early_stop_patience;
    j["max_epochs"] = max_epochs;
    j["batch_size"] = batch_size;
    j["kl_weight"] = kl_weight;
    j["train_time_query"] = train_time_query;
    j["seed"] = seed;
    return j;
}

GeneratorConfig GeneratorConfig::from_json(const json& j) {
    GeneratorConfig c;
    c.d_model = j.value("d_model", c.d_model);
    c.enc_layers = j.value("enc_layers", c.enc_layers);
    c.enc_heads = j.value("enc_heads", c.enc_heads);
    c.dec_layers = j.value("dec_layers", c.dec_layers);
    c.dec_heads = j.value("dec_heads", c.dec_heads);
    c.ffn_dim = j.value("ffn_dim", c.ffn_dim);
    c.input_dim = j.value("input_dim", c.input_dim);
    c.latent_dim = j.value("latent_dim", c.latent_dim);
    c.t_max = j.value("t_max", c.t_max);
    if (j.count("loss_weights")) c.loss_weights = j.at("loss_weights").get<std::array<double, 4>>();
    c.lr = j.value("lr", c.lr);
    c.weight_decay = j.value("weight_decay", c.weight_decay);
    if (j.count("adam_betas")) {
        c.beta1 = j.at("adam_betas").at(0).get<double>();
        c.beta2 = j.at("adam_betas").at(1).get<double>();
    }
    c.dropout = j.value("dropout", c.dropout);
    c.plateau_factor = j.value("plateau_factor", c.plateau_factor);
    c.plateau_patience = j.value("plateau_patience", c.plateau_patience);
    c.early_stop_patience = j.value("early_stop_patience", c.early_stop_patience);
    c.max_epochs = j.value("max_epochs", c.max_epochs);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.kl_weight = j.value("kl_weight", c.kl_weight);
    c.train_time_query = j.value("train_time_query", c.train_time_query);
    c.seed = j.value("seed", c.seed);
    c.validate();
    return c;
}

void GeneratorConfig::validate() const {
    if (d_model % enc_heads != 0 || d_model % dec_heads != 0)
        throw ValidationError("generator: head counts must divide d_model");
    for (double w : loss_weights)
        if (w <= 0.0) throw ValidationError("generator: loss weights must be > 0");
    if (t_max < 1) throw ValidationError("generator: t_max must be >= 1");
    if (batch_size < 1) throw ValidationError("generator: batch_size must be >= 1");
}

GeneratorModel GeneratorModel::init(const GeneratorConfig& cfg, const SkeletonLayout& layout) {
    cfg.validate();
    GeneratorModel m(cfg, layout);
    Rng rng = make_rng(cfg.seed, "gen/init");
    nn::Linear{"enc.proj", cfg.input_dim, cfg.d_model}.init(m.params_, rng);
    for (int l = 0; l < cfg.enc_layers; ++l)
        nn::EncoderLayer{"enc.layer" + std::to_string(l), cfg.d_model, cfg.enc_heads, cfg.ffn_dim}
            .init(m.params_, rng);
    for (int l = 0; l < cfg.dec_layers; ++l)
        nn::DecoderLayer{"dec.layer" + std::to_string(l), cfg.d_model, cfg.dec_heads, cfg.ffn_dim}
            .init(m.params_, rng);
    nn::Linear{"dec.out", cfg.d_model, cfg.latent_dim}.init(m.params_, rng);
    nn::Linear{"len.head", cfg.d_model, 1}.init(m.params_, rng);
    nn::Linear{"tq.proj", layout.total_joints * 3, cfg.d_model}.init(m.params_, rng);
    m.idle_pose_ = Mat::Zero(layout.total_joints, 3);
    m.pe_table_ = nn::sinusoidal_pe(cfg.t_max, cfg.d_model);
    return m;
}

void GeneratorModel::set_idle_pose(Mat pose) {
    if (pose.rows() != layout_.total_joints || pose.cols() != 3)
        throw LayoutMismatch("idle pose shape does not match layout");
    idle_pose_ = std::move(pose);
}

int GeneratorModel::encode_text_tape(nn::Graph& g, nn::Binder& bind, const Mat& emb,
                                     const std::vector<bool>& mask, Rng* drop_rng) const {
    if (emb.cols() != cfg_.input_dim) throw ShapeMismatch("encode_text: embedding dim");
    if (static_cast<Eigen::Index>(mask.size()) != emb.rows())
        throw ShapeMismatch("encode_text: mask length");
    int x = g.constant(emb);
    x = nn::Linear{"enc.proj", cfg_.input_dim, cfg_.d_model}.forward(g, bind, x);
    x = g.add(x, g.constant(nn::sinusoidal_pe(static_cast<int>(emb.rows()), cfg_.d_model)));
    if (drop_rng) x = g.dropout(x, cfg_.dropout, *drop_rng);
    for (int l = 0; l < cfg_.enc_layers; ++l)
        x = nn::EncoderLayer{"enc.layer" + std::to_string(l), cfg_.d_model, cfg_.enc_heads,
                             cfg_.ffn_dim}
                .forward(g, bind, x, &mask, cfg_.dropout, drop_rng);
    return x;
}

int GeneratorModel::predict_length_tape(nn::Graph& g, nn::Binder& bind, int memory,
                                        const std::vector<bool>& mask) const {
    const Eigen::Index l = g.value(memory).rows();
    if (static_cast<Eigen::Index>(mask.size()) != l) throw ShapeMismatch("predict_length: mask");
    long n_true = 0;
    Mat sel = Mat::Zero(1, l);
    for (Eigen::Index i = 0; i < l; ++i)
        if (mask[static_cast<std::size_t>(i)]) {
            sel(0, i) = 1.0;
            ++n_true;
        }
    if (n_true == 0) throw AllMaskedRow("predict_length: no real tokens");
    sel /= static_cast<double>(n_true);
    int pooled = g.matmul(g.constant(sel), memory);  // 1 x d masked mean
    int r = nn::Linear{"len.head", cfg_.d_model, 1}.forward(g, bind, pooled);
    return g.sigmoid(r);
}

int GeneratorModel::decode_latents_tape(nn::Graph& g, nn::Binder& bind, int memory,
                                        const std::vector<bool>& mem_mask, int n_steps,
                                        Rng* drop_rng) const {
    if (n_steps < 1 || n_steps > cfg_.t_max)
        throw LengthOutOfRange("decode_latents: L must lie in [1, t_max]");
    ++decoder_passes_;
    // Time queries: projected idle pose, identical at every step, plus
    // positional encoding to separate the steps.
    int idle = g.constant(flatten_frame(idle_pose_));
    nn::Binder& tq_bind = bind;
    int tq_row;
    if (cfg_.train_time_query) {
        tq_row = nn::Linear{"tq.proj", layout_.total_joints * 3, cfg_.d_model}.forward(g, tq_bind, idle);
    } else {
        const auto& w = params_.at("tq.proj.w").value;
        const auto& b = params_.at("tq.proj.b").value;
        tq_row = g.constant((flatten_frame(idle_pose_) * w + b.row(0)));
    }
    Mat ones = Mat::Ones(n_steps, 1);
    int x = g.matmul(g.constant(ones), tq_row);  // replicate across steps
    x = g.add(x, g.constant(pe_table_.topRows(n_steps)));
    if (drop_rng) x = g.dropout(x, cfg_.dropout, *drop_rng);
    for (int l = 0; l < cfg_.dec_layers; ++l)
        x = nn::DecoderLayer{"dec.layer" + std::to_string(l), cfg_.d_model, cfg_.dec_heads,
                             cfg_.ffn_dim}
                .forward(g, bind, x, memory, &mem_mask, cfg_.dropout, drop_rng);
    return nn::Linear{"dec.out", cfg_.d_model, cfg_.latent_dim}.forward(g, bind, x);
}

Mat GeneratorModel::encode_text(const Mat& emb_padded, const std::vector<bool>& mask) const {
    nn::Graph g;
    nn::Binder bind(g, const_cast<nn::ParamStore&>(params_), false);
    return g.value(encode_text_tape(g, bind, emb_padded, mask, nullptr));
}

double GeneratorModel::predict_length(const Mat& memory, const std::vector<bool>& mask) const {
    nn::Graph g;
    nn::Binder bind(g, const_cast<nn::ParamStore&>(params_), false);
    int mem = g.constant(memory);
    return g.value(predict_length_tape(g, bind, mem, mask))(0, 0);
}

Mat GeneratorModel::decode_latents(const Mat& memory, const std::vector<bool>& mask,
                                   int n_steps) const {
    nn::Graph g;
    nn::Binder bind(g, const_cast<nn::ParamStore&>(params_), false);
    int mem = g.constant(memory);
    return g.value(decode_latents_tape(g, bind, mem, mask, n_steps, nullptr));
}

Phase1Breakdown phase1_loss(const Mat& pred, const Mat& gt, double r_hat, double r,
                            const std::array<double, 4>& weights,
                            const std::vector<bool>& frame_mask, const LatentLayout& ll) {
    if (pred.rows() != gt.rows() || pred.cols() != gt.cols())
        throw ShapeMismatch("phase1_loss: pred/gt shape mismatch");
    if (static_cast<Eigen::Index>(frame_mask.size()) != pred.rows())
        throw ShapeMismatch("phase1_loss: frame mask length");
    long t_valid = 0;
    for (bool b : frame_mask) t_valid += b ? 1 : 0;
    if (t_valid == 0) throw ShapeMismatch("phase1_loss: no valid frames");
    Phase1Breakdown out;
    for (Region reg : kRegions) {
        double acc = 0.0;
        const int c0 = ll.begin(reg), w = ll.dim(reg);
        for (Eigen::Index t = 0; t < pred.rows(); ++t) {
            if (!frame_mask[static_cast<std::size_t>(t)]) continue;
            acc += (pred.row(t).middleCols(c0, w) - gt.row(t).middleCols(c0, w)).cwiseAbs().sum();
        }
        const double term =
            weights[static_cast<std::size_t>(reg)] * acc / static_cast<double>(t_valid);
        out.per_region[static_cast<std::size_t>(reg)] = term;
        out.total += term;
    }
    out.length_term = std::abs(r_hat - r);
    out.total += out.length_term;
    return out;
}

Mat phase1_grad_latents(const Mat& pred, const Mat& gt, const std::array<double, 4>& weights,
                        const std::vector<bool>& frame_mask, const LatentLayout& ll) {
    long t_valid = 0;
    for (bool b : frame_mask) t_valid += b ? 1 : 0;
    Mat grad = Mat::Zero(pred.rows(), pred.cols());
    for (Region reg : kRegions) {
        const int c0 = ll.begin(reg), w = ll.dim(reg);
        const double scale = weights[static_cast<std::size_t>(reg)] / static_cast<double>(t_valid);
        for (Eigen::Index t = 0; t < pred.rows(); ++t) {
            if (!frame_mask[static_cast<std::size_t>(t)]) continue;
            for (int c = c0; c < c0 + w; ++c) {
                const double d = pred(t, c) - gt(t, c);
                grad(t, c) = d > 0.0 ? scale : (d < 0.0 ? -scale : 0.0);
            }
        }
    }
    return grad;
}

double phase1_grad_ratio(double r_hat, double r) {
    return r_hat > r ? 1.0 : (r_hat < r ? -1.0 : 0.0);
}

double gaussian_kl(double mu1, double sigma1, double mu2, double sigma2) {
    if (sigma1 < kSigmaFloor || sigma2 < kSigmaFloor)
        throw DegenerateSigma("gaussian_kl: sigma below floor");
    const double d = mu1 - mu2;
    return std::log(sigma2 / sigma1) + (sigma1 * sigma1 + d * d) / (2.0 * sigma2 * sigma2) - 0.5;
}

namespace {

struct BatchStats {
    Eigen::RowVectorXd mean;
    Eigen::RowVectorXd var;  // population, pre-clamp
    long n = 0;
};

BatchStats batch_channel_stats(const std::vector<Mat>& preds,
                               const std::vector<std::vector<bool>>& frame_masks) {
    if (preds.size() != frame_masks.size()) throw ShapeMismatch("kl: mask count");
    if (preds.empty()) throw TooFewFrames("kl: empty batch");
    const Eigen::Index d = preds[0].cols();
    BatchStats st;
    st.mean = Eigen::RowVectorXd::Zero(d);
    st.var = Eigen::RowVectorXd::Zero(d);
    for (std::size_t i = 0; i < preds.size(); ++i) {
        if (preds[i].cols() != d) throw ShapeMismatch("kl: channel count mismatch");
        if (static_cast<Eigen::Index>(frame_masks[i].size()) != preds[i].rows())
            throw ShapeMismatch("kl: frame mask length");
        for (Eigen::Index t = 0; t < preds[i].rows(); ++t) {
            if (!frame_masks[i][static_cast<std::size_t>(t)]) continue;
            st.mean += preds[i].row(t);
            ++st.n;
        }
    }
    if (st.n < 2) throw TooFewFrames("kl: need at least 2 valid frames");
    st.mean /= static_cast<double>(st.n);
    for (std::size_t i = 0; i < preds.size(); ++i)
        for (Eigen::Index t = 0; t < preds[i].rows(); ++t) {
            if (!frame_masks[i][static_cast<std::size_t>(t)]) continue;
            st.var += (preds[i].row(t) - st.mean).array().square().matrix();
        }
    st.var /= static_cast<double>(st.n);
    return st;
}

}  // namespace

double kl_channel_loss(const std::vector<Mat>& preds,
                       const std::vector<std::vector<bool>>& frame_masks,
                       const ChannelPrior& prior, double sigma_floor) {
    BatchStats st = batch_channel_stats(preds, frame_masks);
    if (prior.mean.size() != st.mean.size())
        throw ShapeMismatch("kl: prior channel count mismatch");
    double total = 0.0;
    for (Eigen::Index c = 0; c < st.mean.size(); ++c) {
        const double sigma = std::max(std::sqrt(st.var(c)), sigma_floor);
        total += gaussian_kl(st.mean(c), sigma, prior.mean(c), prior.std(c));
    }
    return total;
}

std::vector<Mat> kl_channel_grad(const std::vector<Mat>& preds,
                                 const std::vector<std::vector<bool>>& frame_masks,
                                 const ChannelPrior& prior, double sigma_floor) {
    BatchStats st = batch_channel_stats(preds, frame_masks);
    const Eigen::Index d = st.mean.size();
    const double m = static_cast<double>(st.n);
    // dKL/dmu and dKL/dvar per channel; the clamp zeroes the variance path
    // when var < floor^2.
    Eigen::RowVectorXd dmu(d), dvar(d);
    for (Eigen::Index c = 0; c < d; ++c) {
        const double sp = prior.std(c);
        dmu(c) = (st.mean(c) - prior.mean(c)) / (sp * sp);
        if (st.var(c) > sigma_floor * sigma_floor)
            dvar(c) = -0.5 / st.var(c) + 0.5 / (sp * sp);
        else
            dvar(c) = 0.0;
    }
    std::vector<Mat> grads;
    grads.reserve(preds.size());
    for (std::size_t i = 0; i < preds.size(); ++i) {
        Mat g = Mat::Zero(preds[i].rows(), preds[i].cols());
        for (Eigen::Index t = 0; t < preds[i].rows(); ++t) {
            if (!frame_masks[i][static_cast<std::size_t>(t)]) continue;
            g.row(t) = dmu / m +
                       (dvar.array() * 2.0 * (preds[i].row(t) - st.mean).array() / m).matrix();
        }
        grads.push_back(std::move(g));
    }
    return grads;
}

GeneratorModel GeneratorCheckpoint::model() const {
    GeneratorModel m = GeneratorModel::init(config, layout);
    for (auto& [name, e] : m.params().entries()) e.value = params.at(name).value;
    m.set_idle_pose(idle_pose);
    return m;
}

void GeneratorCheckpoint::save(const std::string& path) const {
    json meta;
    meta["config"] = config.to_json();
    meta["layout"] = layout.to_json();
    meta["phase"] = phase;
    json logj = json::array();
    for (const GenEpochRecord& r : log)
        logj.push_back({{"epoch", r.epoch},
                        {"train_loss", r.train_loss},
                        {"dev_phase1", r.dev_phase1},
                        {"dev_kl", r.dev_kl},
                        {"lr", r.lr}});
    meta["training_log"] = logj;
    const std::string meta_str = meta.dump();

    BinWriter w(path);
    w.magic("GENCKPT/1\n", 10);
    w.u32(static_cast<std::uint32_t>(meta_str.size()));
    w.bytes(meta_str);
    w.u64(layout.layout_hash());
    w.u32(static_cast<std::uint32_t>(idle_pose.rows()));
    w.f64_matrix(idle_pose);
    w.u32(static_cast<std::uint32_t>(params.entries().size()));
    for (const auto& [name, e] : params.entries()) {
        w.u32(static_cast<std::uint32_t>(name.size()));
        w.bytes(name);
        w.u32(static_cast<std::uint32_t>(e.value.rows()));
        w.u32(static_cast<std::uint32_t>(e.value.cols()));
        w.f64_matrix(e.value);
    }
}

GeneratorCheckpoint GeneratorCheckpoint::load(const std::string& path,
                                              const SkeletonLayout* expected_layout) {
    BinReader r(path);
    r.magic("GENCKPT/1\n", 10);
    const std::uint32_t meta_len = r.u32();
    json meta = json::parse(r.bytes(meta_len));
    GeneratorCheckpoint ck;
    ck.config = GeneratorConfig::from_json(meta.at("config"));
    ck.layout = SkeletonLayout::from_json(meta.at("layout"));
    ck.phase = meta.at("phase").get<int>();
    for (const auto& e : meta.at("training_log")) {
        GenEpochRecord rec;
        rec.epoch = e.at("epoch").get<int>();
        rec.train_loss = e.at("train_loss").get<double>();
        rec.dev_phase1 = e.at("dev_phase1").get<double>();
        rec.dev_kl = e.at("dev_kl").get<double>();
        rec.lr = e.at("lr").get<double>();
        ck.log.push_back(rec);
    }
    const std::uint64_t stored_hash = r.u64();
    if (stored_hash != ck.layout.layout_hash())
        throw HashMismatch("generator checkpoint: layout hash corrupted");
    if (expected_layout && stored_hash != expected_layout->layout_hash())
        throw HashMismatch("generator checkpoint was built for a different layout");
    const std::uint32_t joints = r.u32();
    ck.idle_pose = r.f64_matrix(joints, 3);
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

Mat compute_idle_pose(const std::vector<CorpusSample>& train, const SkeletonLayout& layout) {
    // Rest pose estimate: average the first and last two frames of every
    // training sequence (hands-down transitions in and out of signing).
    Mat acc = Mat::Zero(layout.total_joints, 3);
    long n = 0;
    for (const CorpusSample& s : train) {
        const int t = s.pose.length();
        std::vector<int> idx = {0, std::min(1, t - 1), std::max(0, t - 2), t - 1};
        for (int i : idx) {
            acc += s.pose.frames[static_cast<std::size_t>(i)];
            ++n;
        }
    }
    if (n == 0) throw EmptyCorpus("idle pose: no frames");
    return acc / static_cast<double>(n);
}

double ground_truth_ratio(int t, int t_max) {
    double r = static_cast<double>(t) / static_cast<double>(t_max);
    return std::min(r, 1.0 - 1e-6);
}

}  // namespace

GenEvalMetrics generator_metrics(const GeneratorModel& model,
                                 const std::vector<CorpusSample>& samples,
                                 const std::vector<LatentSequence>& latents,
                                 const ChannelPrior& priors) {
    if (samples.empty()) throw EmptyDataset("generator_metrics: no samples");
    GenEvalMetrics out;
    std::vector<Mat> preds;
    std::vector<std::vector<bool>> masks;
    double abs_sum = 0.0;
    long abs_n = 0;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const CorpusSample& s = samples[i];
        const Mat& gt = latents[i].codes;
        std::vector<bool> tok_mask(static_cast<std::size_t>(s.embedding.rows()), true);
        Mat memory = model.encode_text(s.embedding, tok_mask);
        const double r_hat = model.predict_length(memory, tok_mask);
        Mat pred = model.decode_latents(memory, tok_mask, static_cast<int>(gt.rows()));
        std::vector<bool> frame_mask(static_cast<std::size_t>(gt.rows()), true);
        const double r = ground_truth_ratio(static_cast<int>(gt.rows()), model.config().t_max);
        Phase1Breakdown bd = phase1_loss(pred, gt, r_hat, r, model.config().loss_weights,
                                         frame_mask, LatentLayout{});
        out.phase1 += bd.total;
        out.ratio_mae += std::abs(r_hat - r);
        abs_sum += (pred - gt).cwiseAbs().sum();
        abs_n += gt.size();
        preds.push_back(std::move(pred));
        masks.push_back(std::move(frame_mask));
    }
    out.phase1 /= static_cast<double>(samples.size());
    out.ratio_mae /= static_cast<double>(samples.size());
    out.latent_mae = abs_sum / static_cast<double>(abs_n);
    out.kl = kl_channel_loss(preds, masks, priors);
    return out;
}

GeneratorCheckpoint train_generator(const std::vector<CorpusSample>& train,
                                    const std::vector<LatentSequence>& train_latents,
                                    const std::vector<CorpusSample>& dev,
                                    const std::vector<LatentSequence>& dev_latents,
                                    const ChannelPrior& priors, const GeneratorConfig& cfg,
                                    int phase, const SkeletonLayout& layout,
                                    const GeneratorCheckpoint* init_ckpt) {
    if (train.empty()) throw EmptyCorpus("train_generator: empty training split");
    if (train.size() != train_latents.size() || dev.size() != dev_latents.size())
        throw ShapeMismatch("train_generator: latent count mismatch");
    if (phase != 1 && phase != 2) throw ValidationError("train_generator: phase must be 1 or 2");
    if (phase == 2 && !init_ckpt)
        throw MissingUpstream("train_generator: phase 2 needs the phase-1 checkpoint");
    if (priors.mean.size() != cfg.latent_dim)
        throw ShapeMismatch("train_generator: prior channel count");

    GeneratorModel model = GeneratorModel::init(cfg, layout);
    if (init_ckpt) {
        if (init_ckpt->layout_hash() != layout.layout_hash())
            throw HashMismatch("train_generator: init checkpoint layout mismatch");
        for (auto& [name, e] : model.params().entries()) e.value = init_ckpt->params.at(name).value;
        model.set_idle_pose(init_ckpt->idle_pose);
    } else {
        model.set_idle_pose(compute_idle_pose(train, layout));
    }

    nn::Adam opt(nn::AdamConfig{cfg.lr, cfg.beta1, cfg.beta2, 1e-8, cfg.weight_decay});
    nn::PlateauScheduler sched(cfg.plateau_factor, cfg.plateau_patience);
    nn::EarlyStopper stopper(cfg.early_stop_patience);
    Rng shuffle_rng = make_rng(cfg.seed, "gen/shuffle/phase" + std::to_string(phase));

    const LatentLayout ll;
    const bool use_kl = phase == 2;

    GeneratorCheckpoint best;
    best.config = cfg;
    best.layout = layout;
    best.params = model.params();
    best.idle_pose = model.idle_pose();
    best.phase = phase;
    double best_dev = std::numeric_limits<double>::infinity();

    std::vector<std::size_t> order(train.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    // One tape per sample; phase 2 runs a value pass over the whole batch
    // first (for the batch-level KL seeds), then replays each sample with
    // identical dropout to backpropagate.
    auto forward_sample = [&](const CorpusSample& s, int dec_len, std::uint64_t drop_seed,
                              nn::Graph& g, nn::Binder& bind, int& ratio_node,
                              int& latents_node) {
        Rng drop_rng(drop_seed);
        std::vector<bool> tok_mask(static_cast<std::size_t>(s.embedding.rows()), true);
        int memory = model.encode_text_tape(g, bind, s.embedding, tok_mask, &drop_rng);
        ratio_node = model.predict_length_tape(g, bind, memory, tok_mask);
        latents_node = model.decode_latents_tape(g, bind, memory, tok_mask, dec_len, &drop_rng);
    };

    std::vector<GenEpochRecord> log;
    for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), shuffle_rng);
        double epoch_loss = 0.0;
        int n_batches = 0;
        for (std::size_t start = 0; start < order.size();
             start += static_cast<std::size_t>(cfg.batch_size)) {
            const std::size_t bsz =
                std::min<std::size_t>(static_cast<std::size_t>(cfg.batch_size), order.size() - start);
            std::vector<std::size_t> batch_idx(order.begin() + static_cast<long>(start),
                                               order.begin() + static_cast<long>(start + bsz));
            int dec_len = 0;
            for (std::size_t i : batch_idx)
                dec_len = std::max(dec_len, train_latents[i].length());

            // Padded ground truth + frame masks at the common batch length.
            std::vector<Mat> gts(bsz);
            std::vector<std::vector<bool>> fmasks(bsz);
            std::vector<double> r_gt(bsz);
            for (std::size_t k = 0; k < bsz; ++k) {
                const Mat& z = train_latents[batch_idx[k]].codes;
                Mat padded = Mat::Zero(dec_len, z.cols());
                padded.topRows(z.rows()) = z;
                gts[k] = std::move(padded);
                fmasks[k].assign(static_cast<std::size_t>(dec_len), false);
                for (Eigen::Index t = 0; t < z.rows(); ++t) fmasks[k][static_cast<std::size_t>(t)] = true;
                r_gt[k] = ground_truth_ratio(static_cast<int>(z.rows()), cfg.t_max);
            }
            auto drop_seed_for = [&](std::size_t k) {
                return substream_seed(cfg.seed, "gen/drop/p" + std::to_string(phase) + "/" +
                                                    std::to_string(epoch) + "/" +
                                                    std::to_string(n_batches) + "/" +
                                                    std::to_string(k));
            };

            double batch_loss = 0.0;
            model.params().zero_grad();

            std::vector<Mat> pred_vals;
            std::vector<double> ratio_vals(bsz);
            if (use_kl) {
                // Value pass: collect predictions for the batch statistics.
                pred_vals.resize(bsz);
                for (std::size_t k = 0; k < bsz; ++k) {
                    nn::Graph g;
                    nn::Binder bind(g, model.params(), false);
                    int ratio_node = -1, latents_node = -1;
                    forward_sample(train[batch_idx[k]], dec_len, drop_seed_for(k), g, bind,
                                   ratio_node, latents_node);
                    pred_vals[k] = g.value(latents_node);
                    ratio_vals[k] = g.value(ratio_node)(0, 0);
                }
            }
            std::vector<Mat> kl_seeds;
            if (use_kl) {
                kl_seeds = kl_channel_grad(pred_vals, fmasks, priors);
                batch_loss += cfg.kl_weight * kl_channel_loss(pred_vals, fmasks, priors);
            }

            for (std::size_t k = 0; k < bsz; ++k) {
                nn::Graph g;
                nn::Binder bind(g, model.params(), true);
                int ratio_node = -1, latents_node = -1;
                forward_sample(train[batch_idx[k]], dec_len, drop_seed_for(k), g, bind, ratio_node,
                               latents_node);
                const Mat& pred = g.value(latents_node);
                const double r_hat = g.value(ratio_node)(0, 0);
                Phase1Breakdown bd =
                    phase1_loss(pred, gts[k], r_hat, r_gt[k], cfg.loss_weights, fmasks[k], ll);
                if (!std::isfinite(bd.total))
                    throw DivergenceDetected("train_generator: loss is not finite");
                batch_loss += bd.total / static_cast<double>(bsz);

                Mat seed = phase1_grad_latents(pred, gts[k], cfg.loss_weights, fmasks[k], ll) /
                           static_cast<double>(bsz);
                if (use_kl) seed += cfg.kl_weight * kl_seeds[k];
                g.add_grad(latents_node, seed);
                g.add_grad(ratio_node,
                           Mat::Constant(1, 1, phase1_grad_ratio(r_hat, r_gt[k]) /
                                                   static_cast<double>(bsz)));
                g.run_backward();
                bind.harvest();
            }
            opt.step(model.params());
            epoch_loss += batch_loss;
            ++n_batches;
        }

        GenEpochRecord rec;
        rec.epoch = epoch;
        rec.train_loss = epoch_loss / std::max(1, n_batches);
        const auto& msamples = dev.empty() ? train : dev;
        const auto& mlatents = dev.empty() ? train_latents : dev_latents;
        GenEvalMetrics m = generator_metrics(model, msamples, mlatents, priors);
        rec.dev_phase1 = m.phase1;
        rec.dev_kl = m.kl;
        rec.lr = opt.lr();
        log.push_back(rec);

        const double monitored = use_kl ? m.phase1 + cfg.kl_weight * m.kl : m.phase1;
        if (!std::isfinite(monitored))
            throw DivergenceDetected("train_generator: dev loss is not finite");
        if (monitored < best_dev) {
            best_dev = monitored;
            best.params = model.params();
            best.idle_pose = model.idle_pose();
        }
        sched.observe(monitored, opt);
        if (stopper.observe(monitored, epoch)) break;
    }
    best.log = std::move(log);
    return best;
}

PoseSequence generate(const CorpusSample& sample, const GeneratorCheckpoint& gen_ckpt,
                      const AECheckpoint& ae_ckpt, Mat* out_latents) {
    if (gen_ckpt.layout_hash() != ae_ckpt.layout_hash())
        throw HashMismatch("generate: generator and autoencoder layouts differ");
    GeneratorModel gen = gen_ckpt.model();
    PoseAutoencoder ae = ae_ckpt.model();
    std::vector<bool> mask(static_cast<std::size_t>(sample.embedding.rows()), true);
    Mat memory = gen.encode_text(sample.embedding, mask);
    const double r_hat = gen.predict_length(memory, mask);
    const int t_max = gen.config().t_max;
    const int n_steps = std::clamp(static_cast<int>(std::lround(r_hat * t_max)), 1, t_max);
    Mat latents = gen.decode_latents(memory, mask, n_steps);
    if (out_latents) *out_latents = latents;
    return ae.decode(LatentSequence{latents});
}

}  // namespace darslp
