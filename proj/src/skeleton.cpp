#include "darslp/skeleton.hpp"

#include <cmath>

#include "darslp/digest.hpp"

namespace darslp {

const char* region_name(Region r) {
    switch (r) {
        case Region::Body: return "body";
        case Region::RightHand: return "right_hand";
        case Region::LeftHand: return "left_hand";
        case Region::Face: return "face";
    }
    return "?";
}

Region region_from_name(const std::string& name) {
    for (Region r : kRegions)
        if (name == region_name(r)) return r;
    throw ValidationError("unknown region: " + name);
}

SkeletonLayout SkeletonLayout::standard() {
    SkeletonLayout l;
    l.total_joints = 178;
    l.ranges[0] = {0, 8};      // body
    l.ranges[1] = {8, 29};     // right hand
    l.ranges[2] = {29, 50};    // left hand
    l.ranges[3] = {50, 178};   // face
    l.left_shoulder_idx = 1;
    l.right_shoulder_idx = 2;
    return l;
}

void SkeletonLayout::validate() const {
    static const std::array<int, 4> expected = {8, 21, 21, 128};
    int cursor = 0;
    for (int i = 0; i < 4; ++i) {
        auto [b, e] = ranges[i];
        if (b != cursor) throw ValidationError("region ranges must be contiguous from 0");
        if (e - b != expected[static_cast<std::size_t>(i)])
            throw ValidationError(std::string("region ") + region_name(kRegions[static_cast<std::size_t>(i)]) +
                                  " must hold " + std::to_string(expected[static_cast<std::size_t>(i)]) + " joints");
        cursor = e;
    }
    if (cursor != total_joints || total_joints != 178)
        throw ValidationError("layout must cover exactly 178 joints");
    int nbody = joints(Region::Body);
    if (left_shoulder_idx < 0 || left_shoulder_idx >= nbody || right_shoulder_idx < 0 ||
        right_shoulder_idx >= nbody || left_shoulder_idx == right_shoulder_idx)
        throw ValidationError("shoulder indices must be distinct and inside the body block");
}

nlohmann::json SkeletonLayout::to_json() const {
    nlohmann::json j;
    j["total_joints"] = total_joints;
    nlohmann::json regions;
    for (int i = 0; i < 4; ++i)
        regions[region_name(kRegions[static_cast<std::size_t>(i)])] = {ranges[static_cast<std::size_t>(i)].first,
                                                                       ranges[static_cast<std::size_t>(i)].second};
    j["regions"] = regions;
    j["left_shoulder_idx"] = left_shoulder_idx;
    j["right_shoulder_idx"] = right_shoulder_idx;
    return j;
}

SkeletonLayout SkeletonLayout::from_json(const nlohmann::json& j) {
    SkeletonLayout l;
    l.total_joints = j.at("total_joints").get<int>();
    for (int i = 0; i < 4; ++i) {
        auto arr = j.at("regions").at(region_name(kRegions[static_cast<std::size_t>(i)]));
        l.ranges[static_cast<std::size_t>(i)] = {arr.at(0).get<int>(), arr.at(1).get<int>()};
    }
    l.left_shoulder_idx = j.at("left_shoulder_idx").get<int>();
    l.right_shoulder_idx = j.at("right_shoulder_idx").get<int>();
    l.validate();
    return l;
}

std::uint64_t SkeletonLayout::layout_hash() const {
    return fnv1a64(to_json().dump());
}

Eigen::RowVectorXd flatten_frame(const PoseFrame& f) {
    Eigen::RowVectorXd row(f.rows() * 3);
    for (Eigen::Index k = 0; k < f.rows(); ++k)
        for (int c = 0; c < 3; ++c) row(k * 3 + c) = f(k, c);
    return row;
}

PoseFrame unflatten_frame(const Eigen::RowVectorXd& row, int joints) {
    if (row.size() != joints * 3) throw ShapeMismatch("flattened frame size mismatch");
    PoseFrame f(joints, 3);
    for (int k = 0; k < joints; ++k)
        for (int c = 0; c < 3; ++c) f(k, c) = row(k * 3 + c);
    return f;
}

Mat sequence_matrix(const PoseSequence& seq) {
    if (seq.frames.empty()) throw EmptySequence("sequence_matrix: empty sequence");
    const Eigen::Index k = seq.frames.front().rows();
    Mat m(seq.length(), k * 3);
    for (int t = 0; t < seq.length(); ++t) {
        if (seq.frames[static_cast<std::size_t>(t)].rows() != k)
            throw LayoutMismatch("sequence frames disagree on joint count");
        m.row(t) = flatten_frame(seq.frames[static_cast<std::size_t>(t)]);
    }
    return m;
}

PoseSequence sequence_from_matrix(const Mat& m, double fps) {
    if (m.cols() % 3 != 0) throw ShapeMismatch("pose matrix columns must be a multiple of 3");
    PoseSequence seq;
    seq.fps = fps;
    const int joints = static_cast<int>(m.cols() / 3);
    seq.frames.reserve(static_cast<std::size_t>(m.rows()));
    for (Eigen::Index t = 0; t < m.rows(); ++t)
        seq.frames.push_back(unflatten_frame(m.row(t), joints));
    return seq;
}

void check_finite(const PoseFrame& f, const char* what) {
    if (!f.allFinite()) throw NonFiniteInput(std::string(what) + ": NaN or Inf coordinate");
}

PoseSequence normalize_pose(const PoseSequence& seq, const SkeletonLayout& layout) {
    constexpr double kMinShoulderDist = 1e-8;
    const int ls = layout.left_shoulder();
    const int rs = layout.right_shoulder();
    PoseSequence out;
    out.fps = seq.fps;
    out.frames.reserve(seq.frames.size());
    for (const PoseFrame& f : seq.frames) {
        if (f.rows() != layout.total_joints) throw LayoutMismatch("normalize_pose: joint count");
        check_finite(f, "normalize_pose");
        Eigen::RowVector3d l = f.row(ls);
        Eigen::RowVector3d r = f.row(rs);
        const double dist = (l - r).norm();
        if (dist < kMinShoulderDist)
            throw DegenerateFrame("normalize_pose: shoulder distance below 1e-8");
        Eigen::RowVector3d neck = 0.5 * (l + r);
        PoseFrame g = (f.rowwise() - neck) / dist;
        out.frames.push_back(std::move(g));
    }
    return out;
}

std::array<PoseFrame, 4> split_regions(const PoseFrame& frame, const SkeletonLayout& layout) {
    if (frame.rows() != layout.total_joints) throw LayoutMismatch("split_regions: joint count");
    std::array<PoseFrame, 4> blocks;
    for (int i = 0; i < 4; ++i) {
        Region r = kRegions[static_cast<std::size_t>(i)];
        blocks[static_cast<std::size_t>(i)] = frame.middleRows(layout.begin(r), layout.joints(r));
    }
    return blocks;
}

PoseFrame merge_regions(const std::array<PoseFrame, 4>& blocks, const SkeletonLayout& layout) {
    PoseFrame out(layout.total_joints, 3);
    for (int i = 0; i < 4; ++i) {
        Region r = kRegions[static_cast<std::size_t>(i)];
        const PoseFrame& b = blocks[static_cast<std::size_t>(i)];
        if (b.rows() != layout.joints(r))
            throw LayoutMismatch(std::string("merge_regions: block ") + region_name(r) +
                                 " has wrong joint count");
        out.middleRows(layout.begin(r), layout.joints(r)) = b;
    }
    return out;
}

PoseSequence mask_to_region(const PoseSequence& seq, Region region, const CanonicalPose& canonical,
                            const SkeletonLayout& layout) {
    if (canonical.rows() != layout.total_joints)
        throw LayoutMismatch("mask_to_region: canonical pose joint count");
    PoseSequence out;
    out.fps = seq.fps;
    out.frames.reserve(seq.frames.size());
    for (const PoseFrame& f : seq.frames) {
        if (f.rows() != layout.total_joints) throw LayoutMismatch("mask_to_region: joint count");
        PoseFrame g = canonical;
        g.middleRows(layout.begin(region), layout.joints(region)) =
            f.middleRows(layout.begin(region), layout.joints(region));
        out.frames.push_back(std::move(g));
    }
    return out;
}

CanonicalPose mean_pose(const std::vector<PoseSequence>& seqs, const SkeletonLayout& layout) {
    CanonicalPose acc = PoseFrame::Zero(layout.total_joints, 3);
    long n = 0;
    for (const PoseSequence& s : seqs)
        for (const PoseFrame& f : s.frames) {
            if (f.rows() != layout.total_joints) throw LayoutMismatch("mean_pose: joint count");
            acc += f;
            ++n;
        }
    if (n == 0) throw EmptyDataset("mean_pose: no frames");
    return acc / static_cast<double>(n);
}

}  // namespace darslp
