#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "darslp/skeleton.hpp"

namespace darslp {

struct CorpusSample {
    std::string id;
    std::vector<std::string> tokens;
    Mat embedding;  // L x 768, one row per token
    PoseSequence pose;
};

constexpr int kEmbeddingDim = 768;

// Pose file: "DPSE1" | u32 T | u32 K=178 | u32 C=3 | T*K*C float32 LE.
void write_pose_file(const std::string& path, const PoseSequence& seq);
PoseSequence read_pose_file(const std::string& path);

// Embedding file: "DEMB1" | u32 L | u32 D=768 | L*D float32 LE.
void write_embedding_file(const std::string& path, const Mat& emb);
Mat read_embedding_file(const std::string& path);

// A corpus split is a directory holding index.jsonl plus pose/embedding
// files referenced by relative path. save/load round-trips bit-exactly for
// the float32 payloads. t_max = 0 disables the length check; otherwise
// longer sequences are rejected with SequenceTooLong.
void save_corpus(const std::vector<CorpusSample>& samples, const std::string& dir);
std::vector<CorpusSample> load_corpus(const std::string& dir, const SkeletonLayout& layout,
                                      int t_max = 0);

struct SynthConfig {
    std::uint64_t seed = 1;
    int n_samples = 64;
    int vocab_size = 24;
    int motif_bank_size = 12;
    int t_max = 300;
    int max_tokens = 5;
    int motif_frames = 12;   // frames per token motif
    int crossfade_frames = 4;
};

// Deterministic synthetic corpus: every token owns a smooth sinusoidal
// motion motif (large-amplitude hands, near-static face) and a fixed random
// 768-dim embedding; a sample concatenates its tokens' motifs with a linear
// cross-fade. Sequence length grows strictly with token count.
std::vector<CorpusSample> synth_corpus(const SynthConfig& cfg, const SkeletonLayout& layout);

inline std::vector<CorpusSample> synth_corpus(std::uint64_t seed, int n_samples, int vocab_size,
                                              int motif_bank_size, int t_max,
                                              const SkeletonLayout& layout) {
    SynthConfig cfg;
    cfg.seed = seed;
    cfg.n_samples = n_samples;
    cfg.vocab_size = vocab_size;
    cfg.motif_bank_size = motif_bank_size;
    cfg.t_max = t_max;
    return synth_corpus(cfg, layout);
}

// Rest pose used as the base of every synthetic motif (shoulders 1 apart,
// hands down, face centered above the neck).
PoseFrame synth_rest_pose(const SkeletonLayout& layout);

}  // namespace darslp
