#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "darslp/error.hpp"

namespace darslp {

using Mat = Eigen::MatrixXd;
using PoseFrame = Eigen::MatrixX3d;  // joints x (x,y,z)

// Articulator regions in fixed order: body | right_hand | left_hand | face.
enum class Region : int { Body = 0, RightHand = 1, LeftHand = 2, Face = 3 };
constexpr std::array<Region, 4> kRegions = {Region::Body, Region::RightHand, Region::LeftHand,
                                            Region::Face};
const char* region_name(Region r);
Region region_from_name(const std::string& name);

// 178-joint layout: 8 body, 21 right hand, 21 left hand, 128 face keypoints,
// contiguous and in that order. Shoulder indices are relative to the body block.
struct SkeletonLayout {
    int total_joints = 178;
    std::array<std::pair<int, int>, 4> ranges{};  // [begin, end) per region
    int left_shoulder_idx = 1;                    // within body block
    int right_shoulder_idx = 2;

    static SkeletonLayout standard();
    static SkeletonLayout from_json(const nlohmann::json& j);
    nlohmann::json to_json() const;
    void validate() const;

    int begin(Region r) const { return ranges[static_cast<int>(r)].first; }
    int end(Region r) const { return ranges[static_cast<int>(r)].second; }
    int joints(Region r) const { return end(r) - begin(r); }
    int left_shoulder() const { return begin(Region::Body) + left_shoulder_idx; }
    int right_shoulder() const { return begin(Region::Body) + right_shoulder_idx; }
    std::uint64_t layout_hash() const;
};

struct PoseSequence {
    std::vector<PoseFrame> frames;
    double fps = 0.0;  // 0 = unknown

    int length() const { return static_cast<int>(frames.size()); }
};

using CanonicalPose = PoseFrame;  // mean pose over training frames

// Flattened views used by the autoencoder: frame -> 1 x 3K row (x0,y0,z0,x1,...).
Eigen::RowVectorXd flatten_frame(const PoseFrame& f);
PoseFrame unflatten_frame(const Eigen::RowVectorXd& row, int joints);
Mat sequence_matrix(const PoseSequence& seq);              // T x 3K
PoseSequence sequence_from_matrix(const Mat& m, double fps = 0.0);

// Centers each frame on the neck (midpoint of the shoulder joints) and
// scales so the shoulder distance is exactly 1. Per-frame, no temporal
// coupling.
PoseSequence normalize_pose(const PoseSequence& seq, const SkeletonLayout& layout);

std::array<PoseFrame, 4> split_regions(const PoseFrame& frame, const SkeletonLayout& layout);
PoseFrame merge_regions(const std::array<PoseFrame, 4>& blocks, const SkeletonLayout& layout);

// Keeps the selected region from `seq`, takes everything else from the
// canonical pose, frame by frame.
PoseSequence mask_to_region(const PoseSequence& seq, Region region, const CanonicalPose& canonical,
                            const SkeletonLayout& layout);

CanonicalPose mean_pose(const std::vector<PoseSequence>& seqs, const SkeletonLayout& layout);

void check_finite(const PoseFrame& f, const char* what);

}  // namespace darslp
