#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "darslp/text_frontend.hpp"
#include "test_util.hpp"

using namespace darslp;
using namespace darslp::testutil;

namespace {

CorpusSample sample_with_embedding(Rng& rng, int n_tokens) {
    CorpusSample s;
    s.id = "s";
    for (int t = 0; t < n_tokens; ++t) s.tokens.push_back("w" + std::to_string(t));
    s.embedding = random_mat(rng, n_tokens, kEmbeddingDim);
    return s;
}

}  // namespace

TEST_CASE("pad_batch: single sample has no padding") {
    Rng rng(401);
    auto s = sample_with_embedding(rng, 3);
    TextBatch b = pad_batch(std::vector<CorpusSample>{s});
    CHECK(b.size() == 1);
    CHECK(b.l_max() == 3);
    for (bool m : b.pad_mask[0]) CHECK(m);
    CHECK((b.embeddings[0] - s.embedding).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("pad_batch: lengths {2,5} pad to 5 with zero fill") {
    Rng rng(409);
    auto a = sample_with_embedding(rng, 2);
    auto c = sample_with_embedding(rng, 5);
    TextBatch b = pad_batch(std::vector<CorpusSample>{a, c});
    CHECK(b.l_max() == 5);
    CHECK(b.lengths[0] == 2);
    int masked = 0;
    for (bool m : b.pad_mask[0])
        if (!m) ++masked;
    CHECK(masked == 3);
    // Padded rows are exactly zero.
    CHECK(b.embeddings[0].bottomRows(3).cwiseAbs().maxCoeff() == 0.0);
    // Order preserved.
    CHECK((b.embeddings[1] - c.embedding).cwiseAbs().maxCoeff() == 0.0);
    CHECK_THROWS_AS(pad_batch(std::vector<CorpusSample>{}), EmptyBatch);
}

TEST_CASE("masked_mean_pool: plain mean, single position, mask independence") {
    Rng rng(419);
    Mat states = random_mat(rng, 4, 6);

    SUBCASE("all true = plain mean") {
        Mat out = masked_mean_pool({states}, {{true, true, true, true}});
        CHECK((out.row(0) - states.colwise().mean()).cwiseAbs().maxCoeff() < 1e-12);
    }
    SUBCASE("one true position returns that state exactly") {
        Mat out = masked_mean_pool({states}, {{false, false, true, false}});
        CHECK((out.row(0) - states.row(2)).cwiseAbs().maxCoeff() == 0.0);
    }
    SUBCASE("masked values cannot leak") {
        std::vector<std::vector<bool>> mask = {{true, false, true, false}};
        Mat out1 = masked_mean_pool({states}, mask);
        Mat fuzzed = states;
        fuzzed.row(1).setConstant(1e9);
        fuzzed.row(3).setConstant(-1e9);
        Mat out2 = masked_mean_pool({fuzzed}, mask);
        CHECK((out1 - out2).cwiseAbs().maxCoeff() == 0.0);
    }
    SUBCASE("all-masked row raises") {
        CHECK_THROWS_AS(masked_mean_pool({states}, {{false, false, false, false}}), AllMaskedRow);
    }
}

TEST_CASE("appending padding never changes the pooled output") {
    Rng rng(421);
    Mat states = random_mat(rng, 3, 5);
    Mat padded(6, 5);
    padded.topRows(3) = states;
    padded.bottomRows(3).setZero();
    Mat a = masked_mean_pool({states}, {{true, true, true}});
    Mat b = masked_mean_pool({padded}, {{true, true, true, false, false, false}});
    CHECK((a - b).cwiseAbs().maxCoeff() == 0.0);
}
