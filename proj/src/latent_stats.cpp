#include "darslp/latent_stats.hpp"

#include <algorithm>
#include <cmath>

#include "darslp/binio.hpp"
#include "darslp/digest.hpp"

using nlohmann::json;

namespace darslp {

namespace {

Mat stack_latents(const std::vector<LatentSequence>& latents) {
    long total = 0;
    for (const LatentSequence& l : latents) total += l.codes.rows();
    if (total == 0) throw EmptyDataset("no latent frames");
    Mat all(total, latents.front().codes.cols());
    long row = 0;
    for (const LatentSequence& l : latents) {
        all.middleRows(row, l.codes.rows()) = l.codes;
        row += l.codes.rows();
    }
    return all;
}

double interp_quantile(const std::vector<double>& sorted, double q) {
    const std::size_t n = sorted.size();
    if (n == 1) return sorted[0];
    const double pos = q * static_cast<double>(n - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const double frac = pos - static_cast<double>(lo);
    if (lo + 1 >= n) return sorted[n - 1];
    return sorted[lo] + frac * (sorted[lo + 1] - sorted[lo]);
}

}  // namespace

json ChannelPrior::to_json() const {
    json j;
    j["layout_hash"] = digest_hex(layout_hash);
    j["mean"] = std::vector<double>(mean.data(), mean.data() + mean.size());
    j["std"] = std::vector<double>(std.data(), std.data() + std.size());
    j["source"] = source;
    return j;
}

ChannelPrior ChannelPrior::from_json(const json& j) {
    ChannelPrior p;
    p.layout_hash = std::stoull(j.at("layout_hash").get<std::string>(), nullptr, 16);
    auto m = j.at("mean").get<std::vector<double>>();
    auto s = j.at("std").get<std::vector<double>>();
    if (m.size() != s.size()) throw FormatError("priors: mean/std length mismatch");
    p.mean = Eigen::Map<Eigen::RowVectorXd>(m.data(), static_cast<Eigen::Index>(m.size()));
    p.std = Eigen::Map<Eigen::RowVectorXd>(s.data(), static_cast<Eigen::Index>(s.size()));
    p.source = j.value("source", "");
    return p;
}

void ChannelPrior::save(const std::string& path) const { write_text_file(path, to_json().dump(2) + "\n"); }

ChannelPrior ChannelPrior::load(const std::string& path, std::uint64_t expected_hash) {
    ChannelPrior p = from_json(json::parse(read_text_file(path)));
    if (expected_hash != 0 && p.layout_hash != expected_hash)
        throw HashMismatch(path + ": priors were computed under a different layout");
    return p;
}

ChannelPrior compute_priors(const std::vector<LatentSequence>& latents, double sigma_floor) {
    Mat all = stack_latents(latents);
    if (all.rows() < 2) throw EmptyDataset("compute_priors: need at least 2 frames");
    ChannelPrior p;
    p.mean = all.colwise().mean();
    Mat centered = all.rowwise() - p.mean.row(0);
    p.std = (centered.array().square().colwise().sum() / static_cast<double>(all.rows()))
                .sqrt()
                .matrix();
    p.std = p.std.cwiseMax(sigma_floor);
    return p;
}

ChannelStats channel_stats(const std::vector<LatentSequence>& latents, int n_bins) {
    if (n_bins < 2) throw ValidationError("channel_stats: n_bins must be >= 2");
    Mat all = stack_latents(latents);
    if (all.rows() < 2) throw EmptyDataset("channel_stats: need at least 2 frames");
    const Eigen::Index n = all.rows(), d = all.cols();
    ChannelStats st;
    st.n_frames = n;
    st.entropy.resize(d);
    st.iqr.resize(d);
    st.sd.resize(d);
    st.hist.resize(static_cast<std::size_t>(d));
    for (Eigen::Index c = 0; c < d; ++c) {
        std::vector<double> vals(static_cast<std::size_t>(n));
        for (Eigen::Index i = 0; i < n; ++i) vals[static_cast<std::size_t>(i)] = all(i, c);
        const double lo = *std::min_element(vals.begin(), vals.end());
        const double hi = *std::max_element(vals.begin(), vals.end());
        ChannelHistogram& h = st.hist[static_cast<std::size_t>(c)];
        h.lo = lo;
        h.hi = hi;
        h.counts.assign(static_cast<std::size_t>(n_bins), 0);
        if (hi > lo) {
            const double w = (hi - lo) / n_bins;
            for (double v : vals) {
                auto b = static_cast<long>((v - lo) / w);
                b = std::clamp<long>(b, 0, n_bins - 1);
                ++h.counts[static_cast<std::size_t>(b)];
            }
        } else {
            h.counts[0] = n;  // constant channel: single occupied bin
        }
        double ent = 0.0;
        for (long cnt : h.counts) {
            if (cnt == 0) continue;
            const double pk = static_cast<double>(cnt) / static_cast<double>(n);
            ent -= pk * std::log(pk);
        }
        st.entropy(c) = ent;

        std::sort(vals.begin(), vals.end());
        st.iqr(c) = interp_quantile(vals, 0.75) - interp_quantile(vals, 0.25);

        const double mu = all.col(c).mean();
        st.sd(c) = std::sqrt((all.col(c).array() - mu).square().sum() / static_cast<double>(n));
    }
    return st;
}

json RegionProjection::to_json() const {
    json j;
    j["region"] = region_name(region);
    j["mean"] = std::vector<double>(mean.data(), mean.data() + mean.size());
    j["std"] = std::vector<double>(std.data(), std.data() + std.size());
    std::vector<std::vector<double>> b(static_cast<std::size_t>(basis.rows()));
    for (Eigen::Index i = 0; i < basis.rows(); ++i)
        b[static_cast<std::size_t>(i)] = {basis(i, 0), basis(i, 1)};
    j["basis"] = b;
    j["explained"] = {explained(0), explained(1)};
    j["rank_deficient"] = rank_deficient;
    return j;
}

RegionProjection RegionProjection::from_json(const json& j) {
    RegionProjection p;
    p.region = region_from_name(j.at("region").get<std::string>());
    auto m = j.at("mean").get<std::vector<double>>();
    auto s = j.at("std").get<std::vector<double>>();
    p.mean = Eigen::Map<Eigen::RowVectorXd>(m.data(), static_cast<Eigen::Index>(m.size()));
    p.std = Eigen::Map<Eigen::RowVectorXd>(s.data(), static_cast<Eigen::Index>(s.size()));
    auto b = j.at("basis").get<std::vector<std::vector<double>>>();
    p.basis.resize(static_cast<Eigen::Index>(b.size()), 2);
    for (std::size_t i = 0; i < b.size(); ++i) {
        p.basis(static_cast<Eigen::Index>(i), 0) = b[i].at(0);
        p.basis(static_cast<Eigen::Index>(i), 1) = b[i].at(1);
    }
    p.explained = {j.at("explained").at(0).get<double>(), j.at("explained").at(1).get<double>()};
    p.rank_deficient = j.value("rank_deficient", false);
    return p;
}

RegionProjection fit_region_projection(const std::vector<LatentSequence>& train, Region region,
                                       const LatentLayout& latent_layout) {
    Mat all = stack_latents(train);
    const int c0 = latent_layout.begin(region);
    const int d = latent_layout.dim(region);
    if (all.rows() < d)
        throw ValidationError("fit_region_projection: need at least as many frames as channels");
    Mat x = all.middleCols(c0, d);

    RegionProjection p;
    p.region = region;
    p.mean = x.colwise().mean();
    Mat centered = x.rowwise() - p.mean.row(0);
    p.std = (centered.array().square().colwise().sum() / static_cast<double>(x.rows()))
                .sqrt()
                .matrix();
    Eigen::RowVectorXd safe_std = p.std.cwiseMax(1e-12);
    Mat z = centered.array().rowwise() / safe_std.row(0).array();

    Mat cov = z.transpose() * z / static_cast<double>(z.rows());
    Eigen::SelfAdjointEigenSolver<Mat> eig(cov);
    const auto& evals = eig.eigenvalues();   // ascending
    const auto& evecs = eig.eigenvectors();
    const double trace = std::max(evals.sum(), 1e-300);

    p.basis.resize(d, 2);
    for (int axis = 0; axis < 2; ++axis) {
        const Eigen::Index idx = d - 1 - axis;
        Eigen::VectorXd v = evecs.col(idx);
        // Sign convention: the largest-magnitude coefficient is positive.
        Eigen::Index imax = 0;
        v.cwiseAbs().maxCoeff(&imax);
        if (v(imax) < 0) v = -v;
        p.basis.col(axis) = v;
        p.explained(axis) = std::max(evals(idx), 0.0) / trace;
    }
    if (d < 2 || evals(d - 2) <= 1e-12 * std::max(evals(d - 1), 1e-300)) p.rank_deficient = true;
    return p;
}

Mat project(const Mat& region_points, const RegionProjection& proj) {
    if (region_points.cols() != proj.basis.rows())
        throw ShapeMismatch("project: channel count does not match projection");
    Eigen::RowVectorXd safe_std = proj.std.cwiseMax(1e-12);
    Mat z = (region_points.rowwise() - proj.mean.row(0)).array().rowwise() /
            safe_std.row(0).array();
    return z * proj.basis;
}

Mat masked_region_embedding(const std::vector<CorpusSample>& samples,
                            const PoseAutoencoder& model, Region region,
                            const CanonicalPose& canonical, const RegionProjection& proj) {
    if (samples.empty()) throw EmptyDataset("masked_region_embedding: no samples");
    const LatentLayout& ll = model.config().latent;
    std::vector<Mat> parts;
    long total = 0;
    for (const CorpusSample& s : samples) {
        PoseSequence masked = mask_to_region(s.pose, region, canonical, model.layout());
        LatentSequence lat = model.encode(masked);
        parts.push_back(project(lat.codes.middleCols(ll.begin(region), ll.dim(region)), proj));
        total += parts.back().rows();
    }
    Mat out(total, 2);
    long row = 0;
    for (const Mat& m : parts) {
        out.middleRows(row, m.rows()) = m;
        row += m.rows();
    }
    return out;
}

namespace {

struct Bandwidth2 {
    double hx, hy;
};

Bandwidth2 scott_bandwidth(const Mat& pts) {
    const double n = static_cast<double>(pts.rows());
    Bandwidth2 bw{0, 0};
    for (int dim = 0; dim < 2; ++dim) {
        const double mu = pts.col(dim).mean();
        const double sd = std::sqrt((pts.col(dim).array() - mu).square().sum() / n);
        double h = sd * std::pow(n, -1.0 / 6.0);  // Scott's rule, 2D
        (dim == 0 ? bw.hx : bw.hy) = std::max(h, 1e-6);
    }
    return bw;
}

Mat kde_grid(const Mat& pts, const DensityDiff& g, Bandwidth2 bw) {
    const double dx = (g.x1 - g.x0) / g.n;
    const double dy = (g.y1 - g.y0) / g.n;
    Mat out = Mat::Zero(g.n, g.n);
    const double norm = 1.0 / (static_cast<double>(pts.rows()) * 2.0 * M_PI * bw.hx * bw.hy);
    for (int iy = 0; iy < g.n; ++iy) {
        const double cy = g.y0 + (iy + 0.5) * dy;
        for (int ix = 0; ix < g.n; ++ix) {
            const double cx = g.x0 + (ix + 0.5) * dx;
            double acc = 0.0;
            for (Eigen::Index i = 0; i < pts.rows(); ++i) {
                const double ux = (cx - pts(i, 0)) / bw.hx;
                const double uy = (cy - pts(i, 1)) / bw.hy;
                acc += std::exp(-0.5 * (ux * ux + uy * uy));
            }
            out(iy, ix) = norm * acc;
        }
    }
    return out;
}

}  // namespace

DensityDiff density_difference(const Mat& points_a, const Mat& points_b, int grid_n,
                               double bandwidth) {
    if (points_a.rows() == 0 || points_b.rows() == 0)
        throw EmptyInput("density_difference: empty point set");
    if (points_a.cols() != 2 || points_b.cols() != 2)
        throw ShapeMismatch("density_difference: points must be N x 2");
    DensityDiff g;
    g.n = grid_n;
    double x0 = std::min(points_a.col(0).minCoeff(), points_b.col(0).minCoeff());
    double x1 = std::max(points_a.col(0).maxCoeff(), points_b.col(0).maxCoeff());
    double y0 = std::min(points_a.col(1).minCoeff(), points_b.col(1).minCoeff());
    double y1 = std::max(points_a.col(1).maxCoeff(), points_b.col(1).maxCoeff());
    const double padx = (x1 - x0) > 0 ? 0.1 * (x1 - x0) : 0.5;
    const double pady = (y1 - y0) > 0 ? 0.1 * (y1 - y0) : 0.5;
    g.x0 = x0 - padx;
    g.x1 = x1 + padx;
    g.y0 = y0 - pady;
    g.y1 = y1 + pady;

    Bandwidth2 bwa = bandwidth > 0 ? Bandwidth2{bandwidth, bandwidth} : scott_bandwidth(points_a);
    Bandwidth2 bwb = bandwidth > 0 ? Bandwidth2{bandwidth, bandwidth} : scott_bandwidth(points_b);
    g.density_a = kde_grid(points_a, g, bwa);
    g.density_b = kde_grid(points_b, g, bwb);
    g.diff = g.density_a - g.density_b;
    const double cell = ((g.x1 - g.x0) / g.n) * ((g.y1 - g.y0) / g.n);
    g.integral_a = g.density_a.sum() * cell;
    g.integral_b = g.density_b.sum() * cell;
    return g;
}

}  // namespace darslp
