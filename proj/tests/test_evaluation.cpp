#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "darslp/evaluation.hpp"
#include "test_util.hpp"

using namespace darslp;
using namespace darslp::testutil;
namespace fs = std::filesystem;

namespace {

PoseSequence pose_of(const std::vector<Mat>& frames) {
    PoseSequence s;
    for (const Mat& f : frames) s.frames.push_back(f);
    return s;
}

PoseSequence random_pose(Rng& rng, int t, int joints = 178) {
    PoseSequence s;
    for (int i = 0; i < t; ++i) s.frames.push_back(random_mat(rng, joints, 3));
    return s;
}

// Exhaustive enumeration over all monotone warping paths with steps
// {(1,0),(0,1),(1,1)}; minimizes (total cost, path length) lexicographically.
struct BruteResult {
    double cost;
    long len;
};

void brute_walk(const Mat& c, int i, int j, double cost, long len, BruteResult& best) {
    cost += c(i, j);
    ++len;
    if (i == c.rows() - 1 && j == c.cols() - 1) {
        if (cost < best.cost || (cost == best.cost && len < best.len)) best = {cost, len};
        return;
    }
    if (i + 1 < c.rows()) brute_walk(c, i + 1, j, cost, len, best);
    if (j + 1 < c.cols()) brute_walk(c, i, j + 1, cost, len, best);
    if (i + 1 < c.rows() && j + 1 < c.cols()) brute_walk(c, i + 1, j + 1, cost, len, best);
}

BruteResult brute_dtw(const PoseSequence& a, const PoseSequence& b) {
    Mat c(a.length(), b.length());
    for (int i = 0; i < a.length(); ++i)
        for (int j = 0; j < b.length(); ++j) {
            double acc = 0;
            for (Eigen::Index k = 0; k < a.frames[static_cast<std::size_t>(i)].rows(); ++k)
                acc += (a.frames[static_cast<std::size_t>(i)].row(k) -
                        b.frames[static_cast<std::size_t>(j)].row(k))
                           .norm();
            c(i, j) = acc / static_cast<double>(a.frames[static_cast<std::size_t>(i)].rows());
        }
    BruteResult best{std::numeric_limits<double>::infinity(), 0};
    brute_walk(c, 0, 0, 0.0, 0, best);
    return best;
}

}  // namespace

TEST_CASE("dtw_mje: identity, single frames, brute-force oracle") {
    Rng rng(601);
    SUBCASE("self distance is exactly zero") {
        for (int t : {1, 3, 7}) {
            PoseSequence x = random_pose(rng, t, 10);
            CHECK(dtw_mje(x, x) == 0.0);
        }
    }
    SUBCASE("two single frames reduce to the mean joint distance") {
        PoseSequence a = random_pose(rng, 1, 10), b = random_pose(rng, 1, 10);
        double want = 0;
        for (int k = 0; k < 10; ++k) want += (a.frames[0].row(k) - b.frames[0].row(k)).norm();
        want /= 10.0;
        CHECK(dtw_mje(a, b) == doctest::Approx(want).epsilon(1e-12));
    }
    SUBCASE("equals brute-force enumeration on all length pairs up to 5x5") {
        int instances = 0;
        while (instances < 50) {
            for (int tp = 1; tp <= 5 && instances < 50; ++tp)
                for (int tg = 1; tg <= 5 && instances < 50; ++tg) {
                    PoseSequence a = random_pose(rng, tp, 6);
                    PoseSequence b = random_pose(rng, tg, 6);
                    DtwResult got = dtw_mje_full(a, b);
                    BruteResult want = brute_dtw(a, b);
                    CHECK(got.total == doctest::Approx(want.cost).epsilon(1e-12));
                    CHECK(got.path_len == want.len);
                    CHECK(got.normalized ==
                          doctest::Approx(want.cost / static_cast<double>(want.len)).epsilon(1e-12));
                    ++instances;
                }
        }
    }
    SUBCASE("errors") {
        PoseSequence x = random_pose(rng, 2, 10), empty;
        CHECK_THROWS_AS(dtw_mje(empty, x), EmptySequence);
        PoseSequence other = random_pose(rng, 2, 12);
        CHECK_THROWS_AS(dtw_mje(x, other), LayoutMismatch);
    }
}

TEST_CASE("dtw_mje: symmetry and exact scaling") {
    Rng rng(607);
    for (int rep = 0; rep < 25; ++rep) {
        PoseSequence a = random_pose(rng, 1 + static_cast<int>(rng() % 6), 8);
        PoseSequence b = random_pose(rng, 1 + static_cast<int>(rng() % 6), 8);
        CHECK(dtw_mje(a, b) == doctest::Approx(dtw_mje(b, a)).epsilon(1e-12));

        const double alpha = uniform(rng, 0.0, 3.0);
        PoseSequence as = a, bs = b;
        for (auto& f : as.frames) f *= alpha;
        for (auto& f : bs.frames) f *= alpha;
        CHECK(dtw_mje(as, bs) == doctest::Approx(alpha * dtw_mje(a, b)).epsilon(1e-9));
    }
}

TEST_CASE("evaluate_corpus mechanics via the report struct") {
    // Assemble a report by hand to pin the aggregation contract.
    EvalReport rep;
    for (int i = 0; i < 4; ++i) {
        SampleEval e;
        e.id = "s" + std::to_string(i);
        e.dtw = 0.1 * (i + 1);
        e.pred_len = 10 + i;
        e.gt_len = 10;
        rep.samples.push_back(e);
    }
    double mean = 0;
    for (const auto& s : rep.samples) mean += s.dtw;
    mean /= 4;
    rep.mean_dtw = mean;
    CHECK(rep.mean_dtw == doctest::Approx((0.1 + 0.2 + 0.3 + 0.4) / 4).epsilon(1e-12));

    const std::string csv = rep.to_csv();
    CHECK(csv.find("id,dtw") == 0);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 5);  // header + 4 rows

    // Digest is stable and ignores the config digest field.
    EvalReport rep2 = rep;
    rep2.config_digest = "different";
    CHECK(rep.report_digest() == rep2.report_digest());
}

TEST_CASE("export_for_backtranslation: round trip, manifest, empty input") {
    Rng rng(613);
    fs::path dir = fs::temp_directory_path() / "darslp_test_export";
    fs::remove_all(dir);

    SUBCASE("empty input -> empty manifest, no pose files") {
        export_for_backtranslation({}, dir.string());
        std::ifstream mf(dir / "manifest.jsonl");
        REQUIRE(mf.good());
        std::string line;
        CHECK_FALSE(std::getline(mf, line));
        int files = 0;
        for (const auto& e : fs::directory_iterator(dir))
            if (e.path().extension() == ".dpse") ++files;
        CHECK(files == 0);
    }
    SUBCASE("each id appears exactly once and poses round trip") {
        std::vector<std::pair<std::string, PoseSequence>> seqs;
        for (int i = 0; i < 3; ++i) {
            PoseSequence p = random_pose(rng, 2 + i);
            for (auto& f : p.frames) f = f.cast<float>().cast<double>();
            seqs.emplace_back("e" + std::to_string(i), p);
        }
        export_for_backtranslation(seqs, dir.string());
        std::ifstream mf(dir / "manifest.jsonl");
        std::string line;
        std::vector<std::string> ids;
        while (std::getline(mf, line)) {
            auto j = nlohmann::json::parse(line);
            ids.push_back(j.at("id").get<std::string>());
            PoseSequence loaded =
                read_pose_file((dir / j.at("pose_file").get<std::string>()).string());
            CHECK(loaded.length() == j.at("n_frames").get<int>());
        }
        std::sort(ids.begin(), ids.end());
        CHECK(ids == std::vector<std::string>{"e0", "e1", "e2"});

        PoseSequence loaded = read_pose_file((dir / "e1.dpse").string());
        REQUIRE(loaded.length() == seqs[1].second.length());
        for (int t = 0; t < loaded.length(); ++t)
            CHECK((loaded.frames[static_cast<std::size_t>(t)] -
                   seqs[1].second.frames[static_cast<std::size_t>(t)])
                      .cwiseAbs()
                      .maxCoeff() == 0.0);
    }
}
