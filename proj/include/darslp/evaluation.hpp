#pragma once

#include <string>
#include <vector>

#include "darslp/generator.hpp"

namespace darslp {

struct DtwResult {
    double normalized = 0.0;  // optimal path cost / path length
    double total = 0.0;       // optimal path cost
    long path_len = 0;
};

// DTW over the frame-pair cost matrix with local cost = mean joint
// Euclidean distance and steps {(1,0),(0,1),(1,1)} at unit weight. Ties in
// total cost break toward the shorter path, which makes the normalized
// value well-defined.
DtwResult dtw_mje_full(const PoseSequence& pred, const PoseSequence& gt);
double dtw_mje(const PoseSequence& pred, const PoseSequence& gt);

struct SampleEval {
    std::string id;
    double dtw = 0.0;
    double dtw_total = 0.0;
    long path_len = 0;
    int pred_len = 0;
    int gt_len = 0;
    double ratio_abs_err = 0.0;
    double baseline_dtw = 0.0;  // canonical pose repeated gt_len times
};

struct EvalReport {
    std::vector<SampleEval> samples;
    double mean_dtw = 0.0;
    double median_dtw = 0.0;
    double length_mae_frames = 0.0;
    double length_mae_ratio = 0.0;
    double baseline_beat_fraction = 0.0;
    std::string config_digest;

    nlohmann::json to_json() const;
    std::string to_csv() const;
    std::string report_digest() const;  // over the semantic payload only
};

// Generates every sample of the split and scores it against the ground
// truth. canonical (train-split mean pose, optional) adds the static
// baseline column.
EvalReport evaluate_corpus(const GeneratorCheckpoint& gen_ckpt, const AECheckpoint& ae_ckpt,
                           const std::vector<CorpusSample>& split,
                           const CanonicalPose* canonical = nullptr,
                           const std::string& config_digest = "");

// Writes DPSE1 pose files plus a manifest.jsonl ({id, pose_file, n_frames}
// per line) for the external back-translation evaluator.
void export_for_backtranslation(const std::vector<std::pair<std::string, PoseSequence>>& sequences,
                                const std::string& out_dir);

}  // namespace darslp
