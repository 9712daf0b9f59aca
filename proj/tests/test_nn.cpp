#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "darslp/nn/layers.hpp"
#include "test_util.hpp"

using namespace darslp;
using namespace darslp::testutil;
using nn::Graph;

TEST_CASE("tape: elementwise and matmul gradients match finite differences") {
    Rng rng(101);

    SUBCASE("matmul chain") {
        auto build = [](Graph& g, const std::vector<int>& in) {
            return g.sum(g.matmul(in[0], in[1]));
        };
        CHECK(check_input_gradients(build, {random_mat(rng, 3, 4), random_mat(rng, 4, 2)}) < 1e-6);
    }
    SUBCASE("matmul_nt") {
        auto build = [](Graph& g, const std::vector<int>& in) {
            return g.sum(g.square(g.matmul_nt(in[0], in[1])));
        };
        CHECK(check_input_gradients(build, {random_mat(rng, 3, 5), random_mat(rng, 4, 5)}) < 1e-6);
    }
    SUBCASE("bias broadcast and hadamard") {
        auto build = [](Graph& g, const std::vector<int>& in) {
            return g.sum(g.hadamard(g.add_rowvec(in[0], in[1]), g.sub_rowvec(in[0], in[2])));
        };
        CHECK(check_input_gradients(build, {random_mat(rng, 4, 3), random_mat(rng, 1, 3),
                                            random_mat(rng, 1, 3)}) < 1e-6);
    }
    SUBCASE("cdiv, log, sqrt on positive values") {
        auto build = [](Graph& g, const std::vector<int>& in) {
            int shifted0 = g.add_scalar(g.square(in[0]), 0.5);
            int shifted1 = g.add_scalar(g.square(in[1]), 0.5);
            return g.sum(g.log(g.sqrt(g.cdiv(shifted0, shifted1))));
        };
        CHECK(check_input_gradients(build, {random_mat(rng, 3, 3), random_mat(rng, 3, 3)}) < 1e-6);
    }
    SUBCASE("colwise_scale and colwise_mean") {
        auto build = [](Graph& g, const std::vector<int>& in) {
            return g.sum(g.square(g.colwise_mean(g.colwise_scale(in[0], in[1]))));
        };
        CHECK(check_input_gradients(build, {random_mat(rng, 5, 4), random_mat(rng, 1, 4)}) < 1e-6);
    }
}

TEST_CASE("tape: nonlinearity gradients") {
    Rng rng(103);
    SUBCASE("softmax rows") {
        auto build = [](Graph& g, const std::vector<int>& in) {
            return g.sum(g.hadamard(g.softmax_rows(in[0]), in[1]));
        };
        CHECK(check_input_gradients(build, {random_mat(rng, 4, 6), random_mat(rng, 4, 6)}) < 1e-6);
    }
    SUBCASE("layer norm rows") {
        auto build = [](Graph& g, const std::vector<int>& in) {
            return g.sum(g.hadamard(g.layer_norm_rows(in[0]), in[1]));
        };
        CHECK(check_input_gradients(build, {random_mat(rng, 3, 8), random_mat(rng, 3, 8)}) < 1e-5);
    }
    SUBCASE("relu, prelu, sigmoid, abs away from kinks") {
        auto build = [](Graph& g, const std::vector<int>& in) {
            int a = g.relu(in[0]);
            int b = g.prelu(in[0], in[1]);
            int c = g.sigmoid(in[0]);
            int d = g.abs(in[0]);
            return g.sum(g.add(g.add(a, b), g.add(c, d)));
        };
        Mat x = random_mat(rng, 4, 4);
        // Keep every entry well away from the kink at zero.
        x = x.unaryExpr([](double v) { return std::abs(v) < 0.05 ? v + 0.2 : v; });
        CHECK(check_input_gradients(build, {x, Mat::Constant(1, 1, 0.3)}) < 1e-6);
    }
    SUBCASE("clamp_min passes gradient only above the floor") {
        auto build = [](Graph& g, const std::vector<int>& in) {
            return g.sum(g.clamp_min(in[0], 0.5));
        };
        Mat x(1, 4);
        x << 0.1, 0.4, 0.9, 2.0;
        Graph g;
        int id = g.leaf(x, true);
        g.backward(build(g, {id}));
        CHECK(g.grad(id)(0, 0) == 0.0);
        CHECK(g.grad(id)(0, 1) == 0.0);
        CHECK(g.grad(id)(0, 2) == 1.0);
        CHECK(g.grad(id)(0, 3) == 1.0);
    }
}

TEST_CASE("tape: slicing and concatenation round trip gradients") {
    Rng rng(107);
    auto build = [](Graph& g, const std::vector<int>& in) {
        int left = g.slice_cols(in[0], 0, 2);
        int right = g.slice_cols(in[0], 2, 3);
        int cat = g.concat_cols({g.square(left), right});
        int stack = g.concat_rows({cat, g.cmul(cat, -0.5)});
        return g.sum(g.square(stack));
    };
    CHECK(check_input_gradients(build, {random_mat(rng, 3, 5)}) < 1e-6);
}

TEST_CASE("tape: dropout is identity at p=0 and keeps the expectation") {
    Graph g;
    int x = g.leaf(Mat::Ones(50, 40), true);
    Rng drop(7);
    int y = g.dropout(x, 0.25, drop);
    CHECK(g.value(y).mean() == doctest::Approx(1.0).epsilon(0.05));
    Rng drop2(7);
    CHECK(g.dropout(x, 0.0, drop2) == x);
}

TEST_CASE("attention: masked keys have exactly zero weight") {
    Rng rng(113);
    nn::ParamStore ps;
    nn::MultiHeadAttention mha{"attn", 8, 2};
    mha.init(ps, rng);
    Mat q = random_mat(rng, 3, 8), kv = random_mat(rng, 5, 8);
    std::vector<bool> mask = {true, true, false, true, false};

    auto run = [&](const Mat& kv_in) {
        nn::Graph g;
        nn::Binder bind(g, ps, false);
        int out = mha.forward(g, bind, g.constant(q), g.constant(kv_in), &mask);
        return Mat(g.value(out));
    };
    Mat base = run(kv);
    Mat fuzzed_kv = kv;
    fuzzed_kv.row(2).setConstant(1e6);
    fuzzed_kv.row(4).setConstant(-1e6);
    CHECK((base - run(fuzzed_kv)).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("transformer layers: parameter gradients match finite differences") {
    Rng rng(127);
    nn::ParamStore ps;
    nn::EncoderLayer enc{"enc", 8, 2, 16};
    nn::DecoderLayer dec{"dec", 8, 2, 16};
    enc.init(ps, rng);
    dec.init(ps, rng);
    Mat src = random_mat(rng, 4, 8), tgt = random_mat(rng, 3, 8), w = random_mat(rng, 3, 8);
    std::vector<bool> src_mask = {true, true, true, false};

    auto build = [&](nn::Graph& g, nn::Binder& bind) {
        int memory = enc.forward(g, bind, g.constant(src), &src_mask, 0.0, nullptr);
        int out = dec.forward(g, bind, g.constant(tgt), memory, &src_mask, 0.0, nullptr);
        return g.sum(g.hadamard(out, g.constant(w)));
    };
    Rng pick(131);
    CHECK(check_param_gradients(build, ps, 4, pick) < 1e-5);
}

TEST_CASE("adam converges on a quadratic") {
    nn::ParamStore ps;
    ps.create("x", 1, 3).setConstant(5.0);
    nn::Adam opt(nn::AdamConfig{0.05, 0.9, 0.999, 1e-8, 0.0});
    for (int step = 0; step < 500; ++step) {
        ps.zero_grad();
        ps.at("x").grad = 2.0 * ps.at("x").value;
        opt.step(ps);
    }
    CHECK(ps.at("x").value.cwiseAbs().maxCoeff() < 1e-2);
}

TEST_CASE("plateau scheduler and early stopping behave per contract") {
    nn::Adam opt(nn::AdamConfig{1.0, 0.9, 0.999, 1e-8, 0.0});
    nn::PlateauScheduler sched(0.5, 2);
    CHECK_FALSE(sched.observe(1.0, opt));
    CHECK_FALSE(sched.observe(1.1, opt));  // stale 1
    CHECK_FALSE(sched.observe(1.2, opt));  // stale 2
    CHECK(sched.observe(1.3, opt));        // stale 3 > patience -> decay
    CHECK(opt.lr() == doctest::Approx(0.5));

    nn::EarlyStopper stop(2);
    CHECK_FALSE(stop.observe(1.0, 0));
    CHECK_FALSE(stop.observe(1.5, 1));
    CHECK_FALSE(stop.observe(1.5, 2));
    CHECK(stop.observe(1.5, 3));
    CHECK(stop.best_epoch() == 0);
}

TEST_CASE("sinusoidal positional encoding: alternating sin/cos, bounded") {
    Mat pe = nn::sinusoidal_pe(16, 8);
    CHECK(pe(0, 0) == 0.0);
    CHECK(pe(0, 1) == 1.0);
    CHECK(pe.cwiseAbs().maxCoeff() <= 1.0);
    CHECK(pe(3, 0) == doctest::Approx(std::sin(3.0)));
    CHECK(pe(3, 1) == doctest::Approx(std::cos(3.0)));
}
