#include "darslp/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "darslp/binio.hpp"
#include "darslp/digest.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace darslp {

namespace {

double mean_joint_distance(const PoseFrame& a, const PoseFrame& b) {
    double acc = 0.0;
    for (Eigen::Index k = 0; k < a.rows(); ++k) acc += (a.row(k) - b.row(k)).norm();
    return acc / static_cast<double>(a.rows());
}

struct Cell {
    double cost;
    long len;
    bool better_than(const Cell& o) const {
        return cost < o.cost || (cost == o.cost && len < o.len);
    }
};

}  // namespace

DtwResult dtw_mje_full(const PoseSequence& pred, const PoseSequence& gt) {
    if (pred.frames.empty() || gt.frames.empty())
        throw EmptySequence("dtw_mje: empty sequence");
    if (pred.frames.front().rows() != gt.frames.front().rows())
        throw LayoutMismatch("dtw_mje: joint counts differ");
    const int tp = pred.length(), tg = gt.length();
    Mat cost(tp, tg);
    for (int i = 0; i < tp; ++i)
        for (int j = 0; j < tg; ++j)
            cost(i, j) = mean_joint_distance(pred.frames[static_cast<std::size_t>(i)],
                                             gt.frames[static_cast<std::size_t>(j)]);

    std::vector<Cell> dp(static_cast<std::size_t>(tp) * static_cast<std::size_t>(tg));
    auto at = [&](int i, int j) -> Cell& { return dp[static_cast<std::size_t>(i) * static_cast<std::size_t>(tg) + static_cast<std::size_t>(j)]; };
    for (int i = 0; i < tp; ++i) {
        for (int j = 0; j < tg; ++j) {
            Cell best{0.0, 0};
            if (i == 0 && j == 0) {
                best = {0.0, 0};
            } else {
                bool have = false;
                auto consider = [&](int pi, int pj) {
                    if (pi < 0 || pj < 0) return;
                    const Cell& c = at(pi, pj);
                    if (!have || c.better_than(best)) {
                        best = c;
                        have = true;
                    }
                };
                consider(i - 1, j);
                consider(i, j - 1);
                consider(i - 1, j - 1);
            }
            at(i, j) = {best.cost + cost(i, j), best.len + 1};
        }
    }
    const Cell& final_cell = at(tp - 1, tg - 1);
    DtwResult r;
    r.total = final_cell.cost;
    r.path_len = final_cell.len;
    r.normalized = final_cell.cost / static_cast<double>(final_cell.len);
    return r;
}

double dtw_mje(const PoseSequence& pred, const PoseSequence& gt) {
    return dtw_mje_full(pred, gt).normalized;
}

json EvalReport::to_json() const {
    json j;
    json arr = json::array();
    for (const SampleEval& s : samples) {
        arr.push_back({{"id", s.id},
                       {"dtw", s.dtw},
                       {"dtw_total", s.dtw_total},
                       {"path_len", s.path_len},
                       {"pred_len", s.pred_len},
                       {"gt_len", s.gt_len},
                       {"ratio_abs_err", s.ratio_abs_err},
                       {"baseline_dtw", s.baseline_dtw}});
    }
    j["samples"] = arr;
    j["mean_dtw"] = mean_dtw;
    j["median_dtw"] = median_dtw;
    j["length_mae_frames"] = length_mae_frames;
    j["length_mae_ratio"] = length_mae_ratio;
    j["baseline_beat_fraction"] = baseline_beat_fraction;
    j["config_digest"] = config_digest;
    j["report_digest"] = report_digest();
    return j;
}

std::string EvalReport::report_digest() const {
    json j;
    json arr = json::array();
    for (const SampleEval& s : samples)
        arr.push_back({{"id", s.id}, {"dtw", s.dtw}, {"pred_len", s.pred_len}});
    j["samples"] = arr;
    j["mean_dtw"] = mean_dtw;
    j["median_dtw"] = median_dtw;
    j["length_mae_ratio"] = length_mae_ratio;
    return digest_hex(fnv1a64(j.dump()));
}

std::string EvalReport::to_csv() const {
    std::ostringstream ss;
    ss << "id,dtw,dtw_total,path_len,pred_len,gt_len,ratio_abs_err,baseline_dtw\n";
    ss.precision(17);
    for (const SampleEval& s : samples)
        ss << s.id << ',' << s.dtw << ',' << s.dtw_total << ',' << s.path_len << ',' << s.pred_len
           << ',' << s.gt_len << ',' << s.ratio_abs_err << ',' << s.baseline_dtw << "\n";
    return ss.str();
}

EvalReport evaluate_corpus(const GeneratorCheckpoint& gen_ckpt, const AECheckpoint& ae_ckpt,
                           const std::vector<CorpusSample>& split, const CanonicalPose* canonical,
                           const std::string& config_digest) {
    if (gen_ckpt.layout_hash() != ae_ckpt.layout_hash())
        throw HashMismatch("evaluate: generator and autoencoder layouts differ");
    GeneratorModel gen = gen_ckpt.model();
    PoseAutoencoder ae = ae_ckpt.model();
    const int t_max = gen.config().t_max;

    EvalReport rep;
    rep.config_digest = config_digest;
    for (const CorpusSample& s : split) {
        std::vector<bool> mask(static_cast<std::size_t>(s.embedding.rows()), true);
        Mat memory = gen.encode_text(s.embedding, mask);
        const double r_hat = gen.predict_length(memory, mask);
        const int n_steps = std::clamp(static_cast<int>(std::lround(r_hat * t_max)), 1, t_max);
        PoseSequence out = ae.decode(LatentSequence{gen.decode_latents(memory, mask, n_steps)});

        SampleEval e;
        e.id = s.id;
        DtwResult d = dtw_mje_full(out, s.pose);
        e.dtw = d.normalized;
        e.dtw_total = d.total;
        e.path_len = d.path_len;
        e.pred_len = n_steps;
        e.gt_len = s.pose.length();
        const double r_gt = std::min(static_cast<double>(e.gt_len) / t_max, 1.0 - 1e-6);
        e.ratio_abs_err = std::abs(r_hat - r_gt);
        if (canonical) {
            PoseSequence base;
            base.frames.assign(static_cast<std::size_t>(e.gt_len), *canonical);
            e.baseline_dtw = dtw_mje(base, s.pose);
        }
        rep.samples.push_back(std::move(e));
    }

    std::vector<double> dtws;
    long beat = 0;
    for (const SampleEval& e : rep.samples) {
        dtws.push_back(e.dtw);
        rep.mean_dtw += e.dtw;
        rep.length_mae_frames += std::abs(e.pred_len - e.gt_len);
        rep.length_mae_ratio += e.ratio_abs_err;
        if (canonical && e.dtw < e.baseline_dtw) ++beat;
    }
    const auto n = static_cast<double>(rep.samples.size());
    if (!rep.samples.empty()) {
        rep.mean_dtw /= n;
        rep.length_mae_frames /= n;
        rep.length_mae_ratio /= n;
        rep.baseline_beat_fraction = canonical ? static_cast<double>(beat) / n : 0.0;
        std::sort(dtws.begin(), dtws.end());
        const std::size_t mid = dtws.size() / 2;
        rep.median_dtw = dtws.size() % 2 == 1 ? dtws[mid] : 0.5 * (dtws[mid - 1] + dtws[mid]);
    }
    return rep;
}

void export_for_backtranslation(const std::vector<std::pair<std::string, PoseSequence>>& sequences,
                                const std::string& out_dir) {
    fs::create_directories(out_dir);
    std::ofstream manifest(fs::path(out_dir) / "manifest.jsonl");
    if (!manifest) throw IOError("cannot write manifest in " + out_dir);
    for (const auto& [id, seq] : sequences) {
        const std::string rel = id + ".dpse";
        write_pose_file((fs::path(out_dir) / rel).string(), seq);
        json line;
        line["id"] = id;
        line["pose_file"] = rel;
        line["n_frames"] = seq.length();
        manifest << line.dump() << "\n";
    }
}

}  // namespace darslp
