#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>

#include "darslp/autoencoder.hpp"
#include "darslp/corpus.hpp"
#include "test_util.hpp"

using namespace darslp;
using namespace darslp::testutil;
namespace fs = std::filesystem;

namespace {

PoseSequence random_pose(Rng& rng, const SkeletonLayout& layout, int t) {
    PoseSequence s;
    for (int i = 0; i < t; ++i) {
        PoseFrame f(layout.total_joints, 3);
        for (Eigen::Index k = 0; k < f.rows(); ++k)
            for (int c = 0; c < 3; ++c) f(k, c) = 0.3 * gauss(rng);
        s.frames.push_back(std::move(f));
    }
    return s;
}

// Naive scalar re-implementation of the training objective, kept
// deliberately independent of the library code paths.
double ae_loss_oracle(const Mat& pred, const Mat& gt, double enc_l1, const AEConfig& cfg,
                      const SkeletonLayout& layout) {
    const double n = static_cast<double>(pred.rows());
    double total = 0.0;
    const std::array<std::pair<int, int>, 4> ranges = {
        std::pair{layout.begin(Region::Body) * 3, layout.joints(Region::Body) * 3},
        std::pair{layout.begin(Region::RightHand) * 3, layout.joints(Region::RightHand) * 3},
        std::pair{layout.begin(Region::LeftHand) * 3, layout.joints(Region::LeftHand) * 3},
        std::pair{layout.begin(Region::Face) * 3, layout.joints(Region::Face) * 3}};
    for (int r = 0; r < 4; ++r) {
        double acc = 0.0;
        for (Eigen::Index i = 0; i < pred.rows(); ++i)
            for (int c = ranges[static_cast<std::size_t>(r)].first;
                 c < ranges[static_cast<std::size_t>(r)].first + ranges[static_cast<std::size_t>(r)].second; ++c)
                acc += std::abs(pred(i, c) - gt(i, c));
        total += cfg.loss_weights[static_cast<std::size_t>(r)] * acc / n;
    }
    return total + cfg.sparsity_lambda * enc_l1;
}

void zero_params(PoseAutoencoder& model, const std::string& prefix) {
    for (auto& [name, e] : model.params().entries())
        if (name.rfind(prefix, 0) == 0) e.value.setZero();
}

std::vector<CorpusSample> tiny_corpus(Rng& rng, const SkeletonLayout& layout, int n) {
    std::vector<CorpusSample> out;
    for (int i = 0; i < n; ++i) {
        CorpusSample s;
        s.id = "c" + std::to_string(i);
        s.tokens = {"w"};
        s.embedding = Mat::Zero(1, kEmbeddingDim);
        s.pose = random_pose(rng, layout, 4);
        out.push_back(std::move(s));
    }
    return out;
}

}  // namespace

TEST_CASE("ae_loss: spec examples") {
    SkeletonLayout layout = SkeletonLayout::standard();
    AEConfig cfg;

    SUBCASE("perfect reconstruction with zero encoder weights is zero") {
        Mat x = Mat::Random(3, 534);
        CHECK(ae_loss_frames(x, x, 0.0, cfg, layout).total == 0.0);
    }
    SUBCASE("single frame, body off by 0.1 -> 0.5 * 24 * 0.1 = 1.2") {
        AEConfig c = cfg;
        c.sparsity_lambda = 0.0;
        Mat gt = Mat::Zero(1, 534);
        Mat pred = gt;
        pred.middleCols(0, 24).setConstant(0.1);
        AELossBreakdown bd = ae_loss_frames(pred, gt, 123.0, c, layout);
        CHECK(bd.total == doctest::Approx(1.2).epsilon(1e-12));
        CHECK(bd.per_region[0] == doctest::Approx(1.2).epsilon(1e-12));
        CHECK(bd.sparsity == 0.0);
    }
    SUBCASE("lambda 1e-4 with |W| = 100 and perfect recon -> 0.01") {
        Mat x = Mat::Random(2, 534);
        AELossBreakdown bd = ae_loss_frames(x, x, 100.0, cfg, layout);
        CHECK(bd.total == doctest::Approx(0.01).epsilon(1e-12));
    }
    SUBCASE("matches the naive oracle on random instances") {
        Rng rng(211);
        for (int rep = 0; rep < 100; ++rep) {
            Mat pred = random_mat(rng, 2, 534, 0.5);
            Mat gt = random_mat(rng, 2, 534, 0.5);
            const double enc_l1 = std::abs(gauss(rng)) * 10;
            const double got = ae_loss_frames(pred, gt, enc_l1, cfg, layout).total;
            const double want = ae_loss_oracle(pred, gt, enc_l1, cfg, layout);
            CHECK(rel_err(got, want) < 1e-10);
        }
    }
    SUBCASE("shape mismatch raises") {
        CHECK_THROWS_AS(ae_loss_frames(Mat::Zero(2, 534), Mat::Zero(3, 534), 0, cfg, layout),
                        ShapeMismatch);
    }
}

TEST_CASE("ae_loss: nonnegative, zero iff perfect recon and zero encoder weights") {
    SkeletonLayout layout = SkeletonLayout::standard();
    AEConfig cfg;  // lambda > 0
    Rng rng(223);
    Mat x = random_mat(rng, 2, 534);
    Mat y = random_mat(rng, 2, 534);
    CHECK(ae_loss_frames(x, y, 5.0, cfg, layout).total > 0.0);
    CHECK(ae_loss_frames(x, x, 5.0, cfg, layout).total > 0.0);  // weights alone keep it positive
    CHECK(ae_loss_frames(x, y, 0.0, cfg, layout).total > 0.0);
    CHECK(ae_loss_frames(x, x, 0.0, cfg, layout).total == 0.0);
}

TEST_CASE("encode/decode: structural region isolation is bit-exact") {
    SkeletonLayout layout = SkeletonLayout::standard();
    LatentLayout ll;
    Rng rng(227);
    for (AEVariant v : {AEVariant::Linear, AEVariant::Mlp}) {
        AEConfig cfg;
        cfg.variant = v;
        cfg.seed = 17;
        PoseAutoencoder model = PoseAutoencoder::init(cfg, layout);
        PoseSequence s = random_pose(rng, layout, 5);

        PoseSequence perturbed = s;
        for (PoseFrame& f : perturbed.frames)
            f.middleRows(layout.begin(Region::LeftHand), layout.joints(Region::LeftHand)) +=
                PoseFrame::Random(21, 3);

        Mat base = model.encode(s).codes;
        Mat pert = model.encode(perturbed).codes;
        for (Region r : {Region::Body, Region::RightHand, Region::Face}) {
            Mat a = base.middleCols(ll.begin(r), ll.dim(r));
            Mat b = pert.middleCols(ll.begin(r), ll.dim(r));
            CHECK((a - b).cwiseAbs().maxCoeff() == 0.0);
        }
        CHECK((base.middleCols(ll.begin(Region::LeftHand), ll.dim(Region::LeftHand)) -
               pert.middleCols(ll.begin(Region::LeftHand), ll.dim(Region::LeftHand)))
                  .cwiseAbs()
                  .maxCoeff() > 0.0);

        // Decode side: perturb face channels only.
        LatentSequence lat = model.encode(s);
        LatentSequence lat2 = lat;
        lat2.codes.middleCols(ll.begin(Region::Face), ll.dim(Region::Face)).array() += 0.5;
        Mat dec1 = sequence_matrix(model.decode(lat));
        Mat dec2 = sequence_matrix(model.decode(lat2));
        for (Region r : {Region::Body, Region::RightHand, Region::LeftHand}) {
            Mat a = dec1.middleCols(layout.begin(r) * 3, layout.joints(r) * 3);
            Mat b = dec2.middleCols(layout.begin(r) * 3, layout.joints(r) * 3);
            CHECK((a - b).cwiseAbs().maxCoeff() == 0.0);
        }
    }
}

TEST_CASE("encode: zero parameters give exactly zero latents") {
    SkeletonLayout layout = SkeletonLayout::standard();
    AEConfig cfg;
    PoseAutoencoder model = PoseAutoencoder::init(cfg, layout);
    zero_params(model, "enc.");
    Rng rng(229);
    Mat lat = model.encode(random_pose(rng, layout, 3)).codes;
    CHECK(lat.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("decode: zero latents with zero decoder bias give zero pose") {
    SkeletonLayout layout = SkeletonLayout::standard();
    AEConfig cfg;
    PoseAutoencoder model = PoseAutoencoder::init(cfg, layout);
    for (auto& [name, e] : model.params().entries())
        if (name.rfind("dec.", 0) == 0 && name.substr(name.size() - 2) == ".b") e.value.setZero();
    LatentSequence z{Mat::Zero(4, 80)};
    CHECK(sequence_matrix(model.decode(z)).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("entangled variant: no isolation requirement, coupling observed") {
    SkeletonLayout layout = SkeletonLayout::standard();
    AEConfig cfg;
    cfg.variant = AEVariant::Entangled;
    cfg.seed = 5;
    PoseAutoencoder model = PoseAutoencoder::init(cfg, layout);
    Rng rng(233);
    PoseSequence s = random_pose(rng, layout, 3);
    PoseSequence perturbed = s;
    for (PoseFrame& f : perturbed.frames)
        f.middleRows(layout.begin(Region::LeftHand), layout.joints(Region::LeftHand)) +=
            PoseFrame::Random(21, 3);
    Mat a = model.encode(s).codes;
    Mat b = model.encode(perturbed).codes;
    LatentLayout ll;
    // Channels outside the left-hand block move too (random init, dense map).
    Mat body_a = a.middleCols(ll.begin(Region::Body), ll.dim(Region::Body));
    Mat body_b = b.middleCols(ll.begin(Region::Body), ll.dim(Region::Body));
    CHECK((body_a - body_b).cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("linear variant encode is affine per region") {
    SkeletonLayout layout = SkeletonLayout::standard();
    AEConfig cfg;
    cfg.seed = 3;
    PoseAutoencoder model = PoseAutoencoder::init(cfg, layout);
    Rng rng(239);
    Mat x = random_mat(rng, 1, 534), y = random_mat(rng, 1, 534);
    for (double alpha : {0.25, 0.5, 0.9}) {
        Mat mix = alpha * x + (1 - alpha) * y;
        Mat got = model.encode_frames(mix);
        Mat want = alpha * model.encode_frames(x) + (1 - alpha) * model.encode_frames(y);
        CHECK((got - want).cwiseAbs().maxCoeff() < 1e-9);
    }
}

TEST_CASE("composed training gradient matches finite differences") {
    SkeletonLayout layout = SkeletonLayout::standard();
    Rng rng(241);
    for (AEVariant v : {AEVariant::Linear, AEVariant::Mlp, AEVariant::Entangled}) {
        AEConfig cfg;
        cfg.variant = v;
        cfg.seed = 7;
        PoseAutoencoder model = PoseAutoencoder::init(cfg, layout);
        Mat batch = random_mat(rng, 2, 534, 0.5);
        auto build = [&](nn::Graph& g, nn::Binder& bind) {
            int x = g.constant(batch);
            int recon = model.forward_tape(g, bind, x);
            return ae_loss_tape(g, bind, model, recon, x);
        };
        Rng pick(251);
        CHECK(check_param_gradients(build, model.params(), 3, pick) < 1e-4);
    }
}

TEST_CASE("tape loss value equals the plain op value") {
    SkeletonLayout layout = SkeletonLayout::standard();
    AEConfig cfg;
    cfg.seed = 11;
    PoseAutoencoder model = PoseAutoencoder::init(cfg, layout);
    Rng rng(257);
    Mat batch = random_mat(rng, 3, 534, 0.4);
    nn::Graph g;
    nn::Binder bind(g, model.params());
    int x = g.constant(batch);
    int recon = model.forward_tape(g, bind, x);
    int loss = ae_loss_tape(g, bind, model, recon, x);
    AELossBreakdown bd = ae_loss_frames(g.value(recon), batch, model.encoder_l1(), cfg, layout);
    CHECK(rel_err(g.value(loss)(0, 0), bd.total) < 1e-12);
}

TEST_CASE("checkpoint round trip and hash refusal") {
    SkeletonLayout layout = SkeletonLayout::standard();
    AEConfig cfg;
    cfg.seed = 13;
    Rng rng(263);
    auto corpus = tiny_corpus(rng, layout, 3);
    cfg.epochs = 2;
    cfg.batch_frames = 8;
    AECheckpoint ck = train_ae(corpus, {}, cfg, layout);

    fs::path dir = fs::temp_directory_path() / "darslp_test_ae_ckpt";
    fs::create_directories(dir);
    const std::string path = (dir / "ae.ckpt").string();
    ck.save(path);
    AECheckpoint loaded = AECheckpoint::load(path);
    for (const auto& [name, e] : ck.params.entries())
        CHECK((loaded.params.at(name).value - e.value).cwiseAbs().maxCoeff() == 0.0);
    CHECK(loaded.log.size() == ck.log.size());

    SkeletonLayout other = layout;
    other.left_shoulder_idx = 3;  // valid but different layout
    CHECK_THROWS_AS(AECheckpoint::load(path, &other), HashMismatch);
}

TEST_CASE("train_ae: epochs=0 returns the seeded initialization") {
    SkeletonLayout layout = SkeletonLayout::standard();
    AEConfig cfg;
    cfg.seed = 21;
    cfg.epochs = 0;
    Rng rng(269);
    auto corpus = tiny_corpus(rng, layout, 2);
    AECheckpoint ck = train_ae(corpus, {}, cfg, layout);
    PoseAutoencoder fresh = PoseAutoencoder::init(cfg, layout);
    for (const auto& [name, e] : fresh.params().entries())
        CHECK((ck.params.at(name).value - e.value).cwiseAbs().maxCoeff() == 0.0);
    CHECK_THROWS_AS(train_ae({}, {}, cfg, layout), EmptyCorpus);
}

TEST_CASE("train_ae: short run reduces the loss and is seed-deterministic") {
    SkeletonLayout layout = SkeletonLayout::standard();
    AEConfig cfg;
    cfg.seed = 31;
    cfg.epochs = 40;
    cfg.batch_frames = 16;
    cfg.lr = 1e-3;
    Rng rng(271);
    auto corpus = tiny_corpus(rng, layout, 4);
    AECheckpoint a = train_ae(corpus, {}, cfg, layout);
    AECheckpoint b = train_ae(corpus, {}, cfg, layout);
    CHECK(a.log.back().train_total < a.log.front().train_total);
    for (const auto& [name, e] : a.params.entries())
        CHECK((b.params.at(name).value - e.value).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("extract_latents: count, determinism, file round trip") {
    SkeletonLayout layout = SkeletonLayout::standard();
    AEConfig cfg;
    cfg.seed = 37;
    cfg.epochs = 0;
    Rng rng(277);
    auto corpus = tiny_corpus(rng, layout, 5);
    AECheckpoint ck = train_ae(corpus, {}, cfg, layout);

    fs::path dir = fs::temp_directory_path() / "darslp_test_latents";
    fs::remove_all(dir);
    auto lat1 = extract_latents(corpus, ck, dir.string());
    auto lat2 = extract_latents(corpus, ck, dir.string());
    REQUIRE(lat1.size() == corpus.size());
    for (std::size_t i = 0; i < lat1.size(); ++i)
        CHECK((lat1[i].codes - lat2[i].codes).cwiseAbs().maxCoeff() == 0.0);

    auto loaded = load_latents(dir.string(), corpus, ck.layout_hash());
    for (std::size_t i = 0; i < lat1.size(); ++i)
        CHECK((loaded[i].codes - lat1[i].codes).cwiseAbs().maxCoeff() == 0.0);
    CHECK_THROWS_AS(load_latents(dir.string(), corpus, ck.layout_hash() + 1), HashMismatch);
}
