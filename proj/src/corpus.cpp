#include "darslp/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "darslp/binio.hpp"
#include "darslp/rng.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace darslp {

void write_pose_file(const std::string& path, const PoseSequence& seq) {
    if (seq.frames.empty()) throw EmptySequence("write_pose_file: empty sequence");
    BinWriter w(path);
    w.magic("DPSE1", 5);
    w.u32(static_cast<std::uint32_t>(seq.length()));
    w.u32(static_cast<std::uint32_t>(seq.frames.front().rows()));
    w.u32(3);
    w.f32_matrix(sequence_matrix(seq));
}

PoseSequence read_pose_file(const std::string& path) {
    BinReader r(path);
    r.magic("DPSE1", 5);
    const std::uint32_t t = r.u32();
    const std::uint32_t k = r.u32();
    const std::uint32_t c = r.u32();
    if (c != 3) throw FormatError(path + ": coordinate count must be 3", r.offset());
    if (t == 0) throw FormatError(path + ": zero frames", r.offset());
    Mat m = r.f32_matrix(t, static_cast<std::size_t>(k) * c);
    return sequence_from_matrix(m);
}

void write_embedding_file(const std::string& path, const Mat& emb) {
    BinWriter w(path);
    w.magic("DEMB1", 5);
    w.u32(static_cast<std::uint32_t>(emb.rows()));
    w.u32(static_cast<std::uint32_t>(emb.cols()));
    w.f32_matrix(emb);
}

Mat read_embedding_file(const std::string& path) {
    BinReader r(path);
    r.magic("DEMB1", 5);
    const std::uint32_t l = r.u32();
    const std::uint32_t d = r.u32();
    if (d != kEmbeddingDim)
        throw FormatError(path + ": embedding dim must be 768", r.offset());
    if (l == 0) throw FormatError(path + ": zero tokens", r.offset());
    return r.f32_matrix(l, d);
}

void save_corpus(const std::vector<CorpusSample>& samples, const std::string& dir) {
    fs::create_directories(fs::path(dir) / "poses");
    fs::create_directories(fs::path(dir) / "emb");
    std::ofstream index(fs::path(dir) / "index.jsonl");
    if (!index) throw IOError("cannot write corpus index in " + dir);
    for (const CorpusSample& s : samples) {
        const std::string pose_rel = "poses/" + s.id + ".dpse";
        const std::string emb_rel = "emb/" + s.id + ".demb";
        write_pose_file((fs::path(dir) / pose_rel).string(), s.pose);
        write_embedding_file((fs::path(dir) / emb_rel).string(), s.embedding);
        json line;
        line["id"] = s.id;
        line["tokens"] = s.tokens;
        line["pose_file"] = pose_rel;
        line["emb_file"] = emb_rel;
        line["length"] = s.pose.length();
        index << line.dump() << "\n";
    }
}

std::vector<CorpusSample> load_corpus(const std::string& dir, const SkeletonLayout& layout,
                                      int t_max) {
    const fs::path index_path = fs::path(dir) / "index.jsonl";
    std::ifstream index(index_path);
    if (!index) throw IOError("cannot open corpus index: " + index_path.string());
    std::vector<CorpusSample> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(index, line)) {
        ++lineno;
        if (line.empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            throw FormatError(index_path.string() + ":" + std::to_string(lineno) + ": " + e.what());
        }
        CorpusSample s;
        s.id = j.at("id").get<std::string>();
        s.tokens = j.at("tokens").get<std::vector<std::string>>();
        s.pose = read_pose_file((fs::path(dir) / j.at("pose_file").get<std::string>()).string());
        s.embedding = read_embedding_file((fs::path(dir) / j.at("emb_file").get<std::string>()).string());
        if (s.pose.frames.front().rows() != layout.total_joints)
            throw LayoutMismatch("corpus sample " + s.id + ": joint count does not match layout");
        if (s.embedding.rows() != static_cast<Eigen::Index>(s.tokens.size()))
            throw FormatError("corpus sample " + s.id + ": embedding rows != token count");
        if (j.at("length").get<int>() != s.pose.length())
            throw FormatError("corpus sample " + s.id + ": index length disagrees with pose file");
        if (t_max > 0 && s.pose.length() > t_max)
            throw SequenceTooLong("corpus sample " + s.id + ": " + std::to_string(s.pose.length()) +
                                  " frames exceeds T_max=" + std::to_string(t_max));
        out.push_back(std::move(s));
    }
    return out;
}

PoseFrame synth_rest_pose(const SkeletonLayout& layout) {
    PoseFrame f = PoseFrame::Zero(layout.total_joints, 3);
    // Body: nose, L/R shoulder, L/R elbow, L/R wrist, mid-hip.
    const int b = layout.begin(Region::Body);
    f.row(b + 0) = Eigen::RowVector3d(0.0, 0.45, 0.0);
    f.row(b + layout.left_shoulder_idx) = Eigen::RowVector3d(-0.5, 0.0, 0.0);
    f.row(b + layout.right_shoulder_idx) = Eigen::RowVector3d(0.5, 0.0, 0.0);
    f.row(b + 3) = Eigen::RowVector3d(-0.62, -0.38, 0.02);
    f.row(b + 4) = Eigen::RowVector3d(0.62, -0.38, 0.02);
    f.row(b + 5) = Eigen::RowVector3d(-0.55, -0.72, 0.06);
    f.row(b + 6) = Eigen::RowVector3d(0.55, -0.72, 0.06);
    f.row(b + 7) = Eigen::RowVector3d(0.0, -0.95, 0.0);

    auto place_hand = [&](Region r, double cx) {
        const int h = layout.begin(r);
        const Eigen::RowVector3d center(cx, -0.78, 0.08);
        for (int k = 0; k < layout.joints(r); ++k) {
            const double a = 2.0 * M_PI * k / layout.joints(r);
            const double rad = 0.03 + 0.004 * (k % 5);
            f.row(h + k) = center + Eigen::RowVector3d(rad * std::cos(a), rad * std::sin(a),
                                                       0.01 * (k % 3));
        }
    };
    place_hand(Region::RightHand, 0.58);
    place_hand(Region::LeftHand, -0.58);

    const int fc = layout.begin(Region::Face);
    const Eigen::RowVector3d face_center(0.0, 0.5, 0.04);
    for (int k = 0; k < layout.joints(Region::Face); ++k) {
        const double a = 2.0 * M_PI * k / layout.joints(Region::Face);
        const double rad = 0.08 + 0.04 * ((k / 16) % 2);
        f.row(fc + k) = face_center + Eigen::RowVector3d(rad * std::cos(a), rad * std::sin(a), 0.0);
    }
    return f;
}

namespace {

// Motion model: every region owns a fixed pool of spatial motion
// directions; a motif activates its own small subset of the pool and
// drives it with its own sinusoidal coefficient signals. The union of all
// trajectories stays inside the pool's span (so compact codes can
// represent every frame) while motifs remain spatially distinct. Hands
// move a lot, the body a little, and the face only in a minority of
// motifs, mirroring real signing statistics.
constexpr std::array<int, 4> kPoolSize = {6, 24, 24, 12};    // directions per region
constexpr std::array<int, 4> kActiveCount = {3, 8, 8, 4};    // used by one motif
constexpr std::array<double, 4> kRegionAmp = {0.05, 0.25, 0.22, 0.02};
constexpr double kFaceMotionRate = 0.25;  // fraction of motifs with face motion

// (3 * joints_r) x P_r spatial directions per region.
using SpatialBases = std::array<Mat, 4>;

struct MotifParams {
    // Per region: active pool indices and their sinusoid parameters.
    std::array<std::vector<int>, 4> active;
    std::array<std::vector<double>, 4> amp, freq, phase;
};

SpatialBases make_bases(std::uint64_t seed, const SkeletonLayout& layout) {
    SpatialBases bases;
    for (int r = 0; r < 4; ++r) {
        Region reg = kRegions[static_cast<std::size_t>(r)];
        Rng rng = make_rng(seed, std::string("basis/") + region_name(reg));
        const int rows = layout.joints(reg) * 3;
        const int p = kPoolSize[static_cast<std::size_t>(r)];
        Mat u(rows, p);
        for (int i = 0; i < rows; ++i)
            for (int j = 0; j < p; ++j) u(i, j) = uniform(rng, -1.0, 1.0);
        // Shoulders stay pinned so normalization is the identity on the
        // synthetic corpus and the subspace structure survives it.
        if (reg == Region::Body) {
            for (int idx : {layout.left_shoulder_idx, layout.right_shoulder_idx})
                u.middleRows(idx * 3, 3).setZero();
        }
        bases[static_cast<std::size_t>(r)] = std::move(u);
    }
    return bases;
}

MotifParams make_motif(std::uint64_t seed, int motif_id) {
    Rng rng = make_rng(seed, "motif/" + std::to_string(motif_id));
    MotifParams p;
    const bool face_active = uniform(rng, 0.0, 1.0) < kFaceMotionRate;
    for (int r = 0; r < 4; ++r) {
        const int pool = kPoolSize[static_cast<std::size_t>(r)];
        const int k = kActiveCount[static_cast<std::size_t>(r)];
        std::vector<int> idx(static_cast<std::size_t>(pool));
        for (int i = 0; i < pool; ++i) idx[static_cast<std::size_t>(i)] = i;
        std::shuffle(idx.begin(), idx.end(), rng);
        idx.resize(static_cast<std::size_t>(k));
        p.active[static_cast<std::size_t>(r)] = idx;
        // Coefficient scale chosen so per-coordinate motion has roughly the
        // region amplitude (basis entries are U(-1,1)).
        double scale = kRegionAmp[static_cast<std::size_t>(r)] *
                       std::sqrt(6.0 / static_cast<double>(k));
        if (kRegions[static_cast<std::size_t>(r)] == Region::Face && !face_active) scale = 0.0;
        for (int j = 0; j < k; ++j) {
            p.amp[static_cast<std::size_t>(r)].push_back(scale * uniform(rng, 0.3, 1.0));
            p.freq[static_cast<std::size_t>(r)].push_back(uniform(rng, 0.5, 2.5));
            p.phase[static_cast<std::size_t>(r)].push_back(uniform(rng, 0.0, 2.0 * M_PI));
        }
    }
    return p;
}

PoseFrame motif_frame(const PoseFrame& rest, const MotifParams& p, const SpatialBases& bases,
                      const SkeletonLayout& layout, double u) {
    PoseFrame f = rest;
    for (int r = 0; r < 4; ++r) {
        Region reg = kRegions[static_cast<std::size_t>(r)];
        const auto& active = p.active[static_cast<std::size_t>(r)];
        Eigen::VectorXd offsets = Eigen::VectorXd::Zero(layout.joints(reg) * 3);
        for (std::size_t j = 0; j < active.size(); ++j) {
            const double coeff =
                p.amp[static_cast<std::size_t>(r)][j] *
                std::sin(2.0 * M_PI * p.freq[static_cast<std::size_t>(r)][j] * u +
                         p.phase[static_cast<std::size_t>(r)][j]);
            offsets += coeff * bases[static_cast<std::size_t>(r)].col(active[j]);
        }
        const int j0 = layout.begin(reg);
        for (int j = 0; j < layout.joints(reg); ++j)
            for (int c = 0; c < 3; ++c) f(j0 + j, c) += offsets(j * 3 + c);
    }
    return f;
}

}  // namespace

std::vector<CorpusSample> synth_corpus(const SynthConfig& cfg, const SkeletonLayout& layout) {
    if (cfg.n_samples < 1 || cfg.vocab_size < 1 || cfg.motif_bank_size < 1 || cfg.t_max < 1)
        throw ValidationError("synth_corpus: all counts must be >= 1");
    if (cfg.crossfade_frames >= cfg.motif_frames)
        throw ValidationError("synth_corpus: crossfade must be shorter than a motif");

    const PoseFrame rest = synth_rest_pose(layout);
    const SpatialBases bases = make_bases(cfg.seed, layout);
    std::vector<MotifParams> motifs;
    motifs.reserve(static_cast<std::size_t>(cfg.motif_bank_size));
    for (int m = 0; m < cfg.motif_bank_size; ++m) motifs.push_back(make_motif(cfg.seed, m));

    // Fixed random embedding per vocabulary token.
    std::vector<Eigen::RowVectorXd> token_vecs;
    token_vecs.reserve(static_cast<std::size_t>(cfg.vocab_size));
    for (int v = 0; v < cfg.vocab_size; ++v) {
        Rng rng = make_rng(cfg.seed, "tokvec/" + std::to_string(v));
        Eigen::RowVectorXd vec(kEmbeddingDim);
        for (int d = 0; d < kEmbeddingDim; ++d) vec(d) = gauss(rng, 0.0, 0.5);
        token_vecs.push_back(std::move(vec));
    }

    const int step = cfg.motif_frames - cfg.crossfade_frames;
    const int max_tokens_by_len = (cfg.t_max - cfg.crossfade_frames) / step;
    const int max_tokens = std::max(1, std::min(cfg.max_tokens, max_tokens_by_len));

    std::vector<CorpusSample> out;
    out.reserve(static_cast<std::size_t>(cfg.n_samples));
    for (int i = 0; i < cfg.n_samples; ++i) {
        Rng rng = make_rng(cfg.seed, "sample/" + std::to_string(i));
        const int n_tok = 1 + static_cast<int>(rng() % static_cast<std::uint64_t>(max_tokens));
        CorpusSample s;
        s.id = "s" + std::string(5 - std::min<std::size_t>(5, std::to_string(i).size()), '0') +
               std::to_string(i);
        std::vector<int> token_ids(static_cast<std::size_t>(n_tok));
        for (int t = 0; t < n_tok; ++t) {
            token_ids[static_cast<std::size_t>(t)] = static_cast<int>(rng() % static_cast<std::uint64_t>(cfg.vocab_size));
            s.tokens.push_back("w" + std::to_string(token_ids[static_cast<std::size_t>(t)]));
        }

        // Motif track per token; consecutive motifs overlap by
        // crossfade_frames and are blended linearly inside the overlap.
        const int total = n_tok * step + cfg.crossfade_frames;
        Mat acc = Mat::Zero(total, layout.total_joints * 3);
        Mat wacc = Mat::Zero(total, 1);
        for (int t = 0; t < n_tok; ++t) {
            const MotifParams& mp =
                motifs[static_cast<std::size_t>(token_ids[static_cast<std::size_t>(t)] % cfg.motif_bank_size)];
            const int start = t * step;
            for (int fidx = 0; fidx < cfg.motif_frames; ++fidx) {
                const double u = static_cast<double>(fidx) / (cfg.motif_frames - 1);
                double w = 1.0;
                if (fidx < cfg.crossfade_frames && t > 0)
                    w = (fidx + 1.0) / (cfg.crossfade_frames + 1.0);
                if (fidx >= cfg.motif_frames - cfg.crossfade_frames && t + 1 < n_tok)
                    w = (cfg.motif_frames - fidx) / (cfg.crossfade_frames + 1.0);
                acc.row(start + fidx) += w * flatten_frame(motif_frame(rest, mp, bases, layout, u));
                wacc(start + fidx, 0) += w;
            }
        }
        for (int fidx = 0; fidx < total; ++fidx) acc.row(fidx) /= wacc(fidx, 0);
        s.pose = sequence_from_matrix(acc, 12.0);

        s.embedding = Mat(n_tok, kEmbeddingDim);
        for (int t = 0; t < n_tok; ++t) {
            Rng nrng = make_rng(cfg.seed, "embnoise/" + std::to_string(i) + "/" + std::to_string(t));
            for (int d = 0; d < kEmbeddingDim; ++d)
                s.embedding(t, d) =
                    token_vecs[static_cast<std::size_t>(token_ids[static_cast<std::size_t>(t)])](d) +
                    0.01 * gauss(nrng);
        }
        out.push_back(std::move(s));
    }
    return out;
}

}  // namespace darslp
