#pragma once

#include <optional>
#include <string>
#include <vector>

#include "darslp/latent_stats.hpp"
#include "darslp/text_frontend.hpp"

namespace darslp {

struct GeneratorConfig {
    int d_model = 512;
    int enc_layers = 3;
    int enc_heads = 4;
    int dec_layers = 6;
    int dec_heads = 8;
    int ffn_dim = 1024;
    int input_dim = 768;
    int latent_dim = 80;
    int t_max = 300;
    // Region weights in body | right hand | left hand | face order. The
    // dominant hand carries most lexical content, so it gets the largest
    // weight; body stays at 1.
    std::array<double, 4> loss_weights = {1.0, 14.0, 10.0, 2.0};
    double lr = 2e-4;
    double weight_decay = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double dropout = 0.1;
    double plateau_factor = 0.9;
    int plateau_patience = 40;
    int early_stop_patience = 60;
    int max_epochs = 400;
    int batch_size = 16;
    double kl_weight = 1.0;
    bool train_time_query = true;
    std::uint64_t seed = 1;

    nlohmann::json to_json() const;
    static GeneratorConfig from_json(const nlohmann::json& j);
    void validate() const;
};

// Text-conditioned non-autoregressive latent generator. The decoder is
// driven by time queries built from a fixed idle pose (hands at rest)
// plus sinusoidal positional encoding, so every step is produced in one
// parallel pass.
class GeneratorModel {
  public:
    static GeneratorModel init(const GeneratorConfig& cfg, const SkeletonLayout& layout);

    // Tape builders (drop_rng = nullptr disables dropout).
    int encode_text_tape(nn::Graph& g, nn::Binder& bind, const Mat& emb,
                         const std::vector<bool>& mask, Rng* drop_rng) const;
    int predict_length_tape(nn::Graph& g, nn::Binder& bind, int memory,
                            const std::vector<bool>& mask) const;
    int decode_latents_tape(nn::Graph& g, nn::Binder& bind, int memory,
                            const std::vector<bool>& mem_mask, int n_steps, Rng* drop_rng) const;

    // Pure inference. `memory` rows follow the padded token positions.
    Mat encode_text(const Mat& emb_padded, const std::vector<bool>& mask) const;
    double predict_length(const Mat& memory, const std::vector<bool>& mask) const;
    Mat decode_latents(const Mat& memory, const std::vector<bool>& mask, int n_steps) const;

    const GeneratorConfig& config() const { return cfg_; }
    const SkeletonLayout& layout() const { return layout_; }
    nn::ParamStore& params() { return params_; }
    const nn::ParamStore& params() const { return params_; }
    const Mat& idle_pose() const { return idle_pose_; }
    void set_idle_pose(Mat pose);
    // Counts full decoder-stack invocations; one per decode call
    // regardless of sequence length (the NAR contract).
    long decoder_passes() const { return decoder_passes_; }

  private:
    GeneratorModel(GeneratorConfig cfg, SkeletonLayout layout)
        : cfg_(std::move(cfg)), layout_(std::move(layout)) {}

    GeneratorConfig cfg_;
    SkeletonLayout layout_;
    nn::ParamStore params_;
    Mat idle_pose_;  // 178 x 3
    Mat pe_table_;   // t_max x d_model
    mutable long decoder_passes_ = 0;
};

struct Phase1Breakdown {
    double total = 0.0;
    std::array<double, 4> per_region{};
    double length_term = 0.0;
};

// Region-weighted L1 on the latent channels over valid frames plus the
// |r_hat - r| length supervision. pred/gt are T x 80 (padded rows allowed;
// frame_mask marks real frames).
Phase1Breakdown phase1_loss(const Mat& pred, const Mat& gt, double r_hat, double r,
                            const std::array<double, 4>& weights,
                            const std::vector<bool>& frame_mask, const LatentLayout& ll);
Mat phase1_grad_latents(const Mat& pred, const Mat& gt, const std::array<double, 4>& weights,
                        const std::vector<bool>& frame_mask, const LatentLayout& ll);
double phase1_grad_ratio(double r_hat, double r);

// KL(N(mu1, sigma1) || N(mu2, sigma2)) for scalars.
double gaussian_kl(double mu1, double sigma1, double mu2, double sigma2);

// Batch-level channel KL: per channel, mean/std of predictions over all
// valid frames of the whole batch (population estimator, std clamped to
// sigma_floor), summed KL against the priors over all channels.
double kl_channel_loss(const std::vector<Mat>& preds,
                       const std::vector<std::vector<bool>>& frame_masks,
                       const ChannelPrior& prior, double sigma_floor = kSigmaFloor);
std::vector<Mat> kl_channel_grad(const std::vector<Mat>& preds,
                                 const std::vector<std::vector<bool>>& frame_masks,
                                 const ChannelPrior& prior, double sigma_floor = kSigmaFloor);

struct GenEpochRecord {
    int epoch = 0;
    double train_loss = 0.0;
    double dev_phase1 = 0.0;
    double dev_kl = 0.0;
    double lr = 0.0;
};

struct GeneratorCheckpoint {
    GeneratorConfig config;
    SkeletonLayout layout;
    nn::ParamStore params;
    Mat idle_pose;
    int phase = 1;
    std::vector<GenEpochRecord> log;

    std::uint64_t layout_hash() const { return layout.layout_hash(); }
    GeneratorModel model() const;
    void save(const std::string& path) const;
    static GeneratorCheckpoint load(const std::string& path,
                                    const SkeletonLayout* expected_layout = nullptr);
};

// Phase 1 minimizes the weighted latent L1 + length loss; phase 2 resumes
// from a phase-1 checkpoint and adds the channel KL term. Plateau LR decay
// and early stopping run on the phase-appropriate dev loss.
GeneratorCheckpoint train_generator(const std::vector<CorpusSample>& train,
                                    const std::vector<LatentSequence>& train_latents,
                                    const std::vector<CorpusSample>& dev,
                                    const std::vector<LatentSequence>& dev_latents,
                                    const ChannelPrior& priors, const GeneratorConfig& cfg,
                                    int phase, const SkeletonLayout& layout,
                                    const GeneratorCheckpoint* init_ckpt = nullptr);

// Dev-split diagnostics used for monitoring and by the evaluation stage.
struct GenEvalMetrics {
    double phase1 = 0.0;
    double kl = 0.0;
    double latent_mae = 0.0;  // unweighted mean |pred - gt| per channel
    double ratio_mae = 0.0;
};
GenEvalMetrics generator_metrics(const GeneratorModel& model,
                                 const std::vector<CorpusSample>& samples,
                                 const std::vector<LatentSequence>& latents,
                                 const ChannelPrior& priors);

// Full text-to-pose path: predict length, decode latents with that many
// time queries, then run the autoencoder decoder. No post-processing.
PoseSequence generate(const CorpusSample& sample, const GeneratorCheckpoint& gen_ckpt,
                      const AECheckpoint& ae_ckpt, Mat* out_latents = nullptr);

}  // namespace darslp
