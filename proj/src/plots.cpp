#include "darslp/plots.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "darslp/pngio.hpp"

namespace darslp {

void plot_region_histograms(const std::string& path, const ChannelStats& stats,
                            const std::vector<int>& channels) {
    const int panel_w = 160, panel_h = 110, pad = 10;
    const int cols = 4;
    const int rows = static_cast<int>((channels.size() + cols - 1) / cols);
    Canvas cv(cols * (panel_w + pad) + pad, std::max(1, rows) * (panel_h + pad) + pad);
    for (std::size_t idx = 0; idx < channels.size(); ++idx) {
        const int c = channels[idx];
        const ChannelHistogram& h = stats.hist[static_cast<std::size_t>(c)];
        const int px = pad + (static_cast<int>(idx) % cols) * (panel_w + pad);
        const int py = pad + (static_cast<int>(idx) / cols) * (panel_h + pad);
        cv.fill_rect(px, py, panel_w, panel_h, 245, 245, 245);
        long max_count = 1;
        for (long cnt : h.counts) max_count = std::max(max_count, cnt);
        const int nb = static_cast<int>(h.counts.size());
        const double bar_w = static_cast<double>(panel_w - 8) / nb;
        for (int b = 0; b < nb; ++b) {
            const int bh = static_cast<int>(std::lround(
                (panel_h - 8) * static_cast<double>(h.counts[static_cast<std::size_t>(b)]) / static_cast<double>(max_count)));
            cv.fill_rect(px + 4 + static_cast<int>(b * bar_w), py + panel_h - 4 - bh,
                         std::max(1, static_cast<int>(bar_w)), bh, 70, 110, 180);
        }
    }
    write_png(path, cv);
}

void plot_scatter(const std::string& path, const Mat& points) {
    const int size = 480, margin = 24;
    Canvas cv(size, size);
    if (points.rows() == 0) {
        write_png(path, cv);
        return;
    }
    double x0 = points.col(0).minCoeff(), x1 = points.col(0).maxCoeff();
    double y0 = points.col(1).minCoeff(), y1 = points.col(1).maxCoeff();
    if (x1 - x0 < 1e-12) x1 = x0 + 1.0;
    if (y1 - y0 < 1e-12) y1 = y0 + 1.0;
    for (Eigen::Index i = 0; i < points.rows(); ++i) {
        const int px = margin + static_cast<int>((points(i, 0) - x0) / (x1 - x0) * (size - 2 * margin));
        const int py = size - margin -
                       static_cast<int>((points(i, 1) - y0) / (y1 - y0) * (size - 2 * margin));
        cv.dot(px, py, 1, 40, 90, 160);
    }
    write_png(path, cv);
}

void plot_heatmap(const std::string& path, const DensityDiff& grid) {
    const int cell = std::max(1, 400 / std::max(1, grid.n));
    Canvas cv(grid.n * cell, grid.n * cell);
    const double vmax = std::max(grid.diff.cwiseAbs().maxCoeff(), 1e-300);
    for (int iy = 0; iy < grid.n; ++iy) {
        for (int ix = 0; ix < grid.n; ++ix) {
            const double v = grid.diff(iy, ix) / vmax;  // [-1, 1]
            std::uint8_t r, g, b;
            if (v >= 0) {
                r = 255;
                g = b = static_cast<std::uint8_t>(std::lround(255 * (1.0 - v)));
            } else {
                b = 255;
                r = g = static_cast<std::uint8_t>(std::lround(255 * (1.0 + v)));
            }
            // Row 0 of the grid is the lowest y; draw bottom-up.
            cv.fill_rect(ix * cell, (grid.n - 1 - iy) * cell, cell, cell, r, g, b);
        }
    }
    write_png(path, cv);
}

std::string channel_stats_csv(const ChannelStats& stats) {
    std::ostringstream ss;
    ss.precision(17);
    ss << "channel,entropy,iqr,sd,hist_lo,hist_hi\n";
    for (Eigen::Index c = 0; c < stats.entropy.size(); ++c)
        ss << c << ',' << stats.entropy(c) << ',' << stats.iqr(c) << ',' << stats.sd(c) << ','
           << stats.hist[static_cast<std::size_t>(c)].lo << ',' << stats.hist[static_cast<std::size_t>(c)].hi << "\n";
    return ss.str();
}

std::string points_csv(const Mat& points) {
    std::ostringstream ss;
    ss.precision(17);
    ss << "x,y\n";
    for (Eigen::Index i = 0; i < points.rows(); ++i)
        ss << points(i, 0) << ',' << points(i, 1) << "\n";
    return ss.str();
}

std::string density_csv(const DensityDiff& grid) {
    std::ostringstream ss;
    ss.precision(17);
    ss << "# x0=" << grid.x0 << " x1=" << grid.x1 << " y0=" << grid.y0 << " y1=" << grid.y1
       << " n=" << grid.n << "\n";
    for (int iy = 0; iy < grid.n; ++iy) {
        for (int ix = 0; ix < grid.n; ++ix) {
            ss << grid.diff(iy, ix);
            ss << (ix + 1 == grid.n ? '\n' : ',');
        }
    }
    return ss.str();
}

}  // namespace darslp
