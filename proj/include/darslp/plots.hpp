#pragma once

#include <string>
#include <vector>

#include "darslp/latent_stats.hpp"

namespace darslp {

// Figure-style panels for the latent analyses. Every image has a CSV twin
// written by the caller so results stay diffable.

// Bar-chart grid of the top-entropy channels of one region.
void plot_region_histograms(const std::string& path, const ChannelStats& stats,
                            const std::vector<int>& channels);

// 2D scatter of projected points.
void plot_scatter(const std::string& path, const Mat& points);

// Diverging heatmap (blue negative, red positive) of a density difference.
void plot_heatmap(const std::string& path, const DensityDiff& grid);

std::string channel_stats_csv(const ChannelStats& stats);
std::string points_csv(const Mat& points);
std::string density_csv(const DensityDiff& grid);

}  // namespace darslp
