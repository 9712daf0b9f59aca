#pragma once

#include <string>
#include <vector>

#include "darslp/autoencoder.hpp"

namespace darslp {

constexpr double kSigmaFloor = 1e-4;

// Per-channel mean/std over all training frames; the KL target of the
// generator's second training phase. Population (biased) std, clamped from
// below so degenerate channels cannot blow up the divergence.
struct ChannelPrior {
    Eigen::RowVectorXd mean;  // 1 x 80
    Eigen::RowVectorXd std;   // 1 x 80
    std::uint64_t layout_hash = 0;
    std::string source;

    nlohmann::json to_json() const;
    static ChannelPrior from_json(const nlohmann::json& j);
    void save(const std::string& path) const;
    static ChannelPrior load(const std::string& path, std::uint64_t expected_hash = 0);
};

ChannelPrior compute_priors(const std::vector<LatentSequence>& latents,
                            double sigma_floor = kSigmaFloor);

struct ChannelHistogram {
    double lo = 0.0, hi = 0.0;
    std::vector<long> counts;
};

struct ChannelStats {
    Eigen::RowVectorXd entropy;  // nats
    Eigen::RowVectorXd iqr;
    Eigen::RowVectorXd sd;
    std::vector<ChannelHistogram> hist;
    long n_frames = 0;
};

// Histogram over the per-channel [min, max] with n_bins equal bins;
// entropy of the bin distribution in nats, interpolated-quantile IQR,
// population SD.
ChannelStats channel_stats(const std::vector<LatentSequence>& latents, int n_bins = 50);

// Two principal axes of one region's latent channels, fitted on training
// data only (standardization included). Dev/test points reuse the frozen
// basis.
struct RegionProjection {
    Region region = Region::Body;
    Mat basis;                 // d x 2, orthonormal columns
    Eigen::RowVectorXd mean;   // 1 x d standardization stats (train)
    Eigen::RowVectorXd std;    // 1 x d
    Eigen::Vector2d explained{0, 0};  // fraction of total variance per axis
    bool rank_deficient = false;

    nlohmann::json to_json() const;
    static RegionProjection from_json(const nlohmann::json& j);
};

RegionProjection fit_region_projection(const std::vector<LatentSequence>& train, Region region,
                                       const LatentLayout& latent_layout);

// points: N x d raw region channels; standardized with the projection's
// train stats, then mapped onto the two axes.
Mat project(const Mat& region_points, const RegionProjection& proj);

// Masked-region embedding: keep one region's keypoints, replace the
// rest with the canonical pose, encode, and project that region's channels.
// One output row per frame.
Mat masked_region_embedding(const std::vector<CorpusSample>& samples,
                            const PoseAutoencoder& model, Region region,
                            const CanonicalPose& canonical, const RegionProjection& proj);

struct DensityDiff {
    double x0 = 0, x1 = 0, y0 = 0, y1 = 0;
    int n = 0;
    Mat diff;       // n x n, row = y cell, col = x cell
    Mat density_a;  // each integrates to ~1 over the grid
    Mat density_b;
    double integral_a = 0, integral_b = 0;
};

// Gaussian KDE of A minus KDE of B on a shared grid padded 10% beyond the
// joint data bounds. bandwidth <= 0 selects Scott's rule per dimension.
DensityDiff density_difference(const Mat& points_a, const Mat& points_b, int grid_n = 100,
                               double bandwidth = 0.0);

}  // namespace darslp
