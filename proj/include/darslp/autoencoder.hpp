#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "darslp/corpus.hpp"
#include "darslp/nn/layers.hpp"
#include "darslp/skeleton.hpp"

namespace darslp {

enum class AEVariant { Linear, Mlp, Entangled };
const char* ae_variant_name(AEVariant v);
AEVariant ae_variant_from_name(const std::string& s);

// 80 latent channels in fixed region blocks: body 8 | right hand 28 |
// left hand 28 | face 16.
struct LatentLayout {
    std::array<int, 4> dims = {8, 28, 28, 16};

    int total() const { return dims[0] + dims[1] + dims[2] + dims[3]; }
    int begin(Region r) const {
        int off = 0;
        for (int i = 0; i < static_cast<int>(r); ++i) off += dims[static_cast<std::size_t>(i)];
        return off;
    }
    int dim(Region r) const { return dims[static_cast<std::size_t>(r)]; }
    void validate() const;
};

struct AEConfig {
    AEVariant variant = AEVariant::Linear;
    LatentLayout latent;
    std::array<int, 4> mlp_hidden = {0, 40, 40, 96};  // body stays linear
    std::array<double, 4> loss_weights = {0.5, 1.5, 1.5, 1.0};
    double sparsity_lambda = 1e-4;
    double lr = 2e-4;
    double beta1 = 0.5;
    double beta2 = 0.9;
    int epochs = 270;
    int batch_frames = 256;
    // Optional plateau LR decay on the dev metric; factor 1.0 = fixed LR.
    double plateau_factor = 1.0;
    int plateau_patience = 40;
    // Optional stepwise LR decay (every N epochs); 0 = off. Useful for
    // desk-scale overfit runs where the L1 floor tracks the LR.
    double lr_decay_factor = 1.0;
    int lr_decay_every = 0;
    std::uint64_t seed = 1;

    nlohmann::json to_json() const;
    static AEConfig from_json(const nlohmann::json& j);
};

struct LatentSequence {
    Mat codes;  // T x 80
    int length() const { return static_cast<int>(codes.rows()); }
};

class PoseAutoencoder {
  public:
    static PoseAutoencoder init(const AEConfig& cfg, const SkeletonLayout& layout);

    LatentSequence encode(const PoseSequence& seq) const;
    PoseSequence decode(const LatentSequence& lat) const;
    Mat encode_frames(const Mat& frames) const;  // N x 534 -> N x 80
    Mat decode_frames(const Mat& codes) const;   // N x 80  -> N x 534

    // Tape forward for training: x (N x 534 node) -> reconstruction node.
    int forward_tape(nn::Graph& g, nn::Binder& bind, int x) const;
    // Sum of |W| over encoder weight matrices (biases and PReLU slopes
    // excluded), as a tape node / as a plain number.
    int encoder_l1_tape(nn::Graph& g, nn::Binder& bind) const;
    double encoder_l1() const;

    const AEConfig& config() const { return cfg_; }
    const SkeletonLayout& layout() const { return layout_; }
    nn::ParamStore& params() { return params_; }
    const nn::ParamStore& params() const { return params_; }
    std::vector<std::string> encoder_weight_names() const;

  private:
    PoseAutoencoder(AEConfig cfg, SkeletonLayout layout)
        : cfg_(std::move(cfg)), layout_(std::move(layout)) {}
    struct Stage {      // one encoder or decoder path
        std::vector<nn::Linear> linears;
        std::optional<nn::PReLU> act;  // between the two linears, mlp only
    };
    Stage encoder_stage(Region r) const;
    Stage decoder_stage(Region r) const;
    Stage entangled_stage(bool encoder) const;
    static Mat run_stage(const Stage& s, const nn::ParamStore& ps, const Mat& x);
    static int run_stage_tape(const Stage& s, nn::Graph& g, nn::Binder& bind, int x);

    AEConfig cfg_;
    SkeletonLayout layout_;
    nn::ParamStore params_;
};

struct AELossBreakdown {
    double total = 0.0;
    std::array<double, 4> per_region{};
    double sparsity = 0.0;
};

// Eq-style weighted L1 reconstruction + encoder-weight sparsity:
//   sum_R w_R * (1/N) * sum_i |pred_R(i) - gt_R(i)|_1  +  lambda * sum_enc |W|_1
// The inner L1 runs over all 3*joints(R) coordinates of a frame.
AELossBreakdown ae_loss(const PoseSequence& pred, const PoseSequence& gt,
                        const PoseAutoencoder& model, const AEConfig& cfg);
AELossBreakdown ae_loss_frames(const Mat& pred, const Mat& gt, double encoder_l1,
                               const AEConfig& cfg, const SkeletonLayout& layout);
// Same objective on the tape (used by the training loop).
int ae_loss_tape(nn::Graph& g, nn::Binder& bind, const PoseAutoencoder& model, int recon,
                 int gt_const);

struct AEEpochRecord {
    int epoch = 0;
    double train_total = 0.0;
    std::array<double, 4> per_region{};
    double sparsity = 0.0;
    double dev_l1 = 0.0;
};

struct AECheckpoint {
    AEConfig config;
    SkeletonLayout layout;
    nn::ParamStore params;
    std::vector<AEEpochRecord> log;

    std::uint64_t layout_hash() const { return layout.layout_hash(); }
    PoseAutoencoder model() const;
    void save(const std::string& path) const;
    static AECheckpoint load(const std::string& path,
                             const SkeletonLayout* expected_layout = nullptr);
};

AECheckpoint train_ae(const std::vector<CorpusSample>& train,
                      const std::vector<CorpusSample>& dev, const AEConfig& cfg,
                      const SkeletonLayout& layout);

// Latent file: "DLAT1" | u32 T | u32 D=80 | T*D float32 LE | u64 layout_hash.
void write_latent_file(const std::string& path, const LatentSequence& lat,
                       std::uint64_t layout_hash);
LatentSequence read_latent_file(const std::string& path, std::uint64_t expected_hash);

// One latent sequence per sample, written as <out_dir>/<id>.dlat plus an
// index.jsonl; returns the in-memory latents in corpus order.
std::vector<LatentSequence> extract_latents(const std::vector<CorpusSample>& samples,
                                            const AECheckpoint& ckpt,
                                            const std::string& out_dir);
std::vector<LatentSequence> load_latents(const std::string& dir,
                                         const std::vector<CorpusSample>& samples,
                                         std::uint64_t expected_hash);

}  // namespace darslp
