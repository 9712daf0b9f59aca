#pragma once

#include <functional>
#include <vector>

#include <Eigen/Dense>

#include "darslp/error.hpp"
#include "darslp/rng.hpp"

namespace darslp::nn {

using Mat = Eigen::MatrixXd;

// Reverse-mode tape over dense double matrices. A Graph is built per
// forward pass and discarded after backward(); parameters live outside the
// graph (see ParamStore) and are bound in as leaves.
//
// Values are plain Eigen matrices; node ids are indices into the tape.
class Graph {
  public:
    int leaf(Mat v, bool needs_grad = false);
    int constant(Mat v) { return leaf(std::move(v), false); }
    int scalar(double v) { return constant(Mat::Constant(1, 1, v)); }

    int matmul(int a, int b);
    int matmul_nt(int a, int b);  // A * B^T
    int add(int a, int b);
    int add_rowvec(int a, int rv);  // rv is 1 x C, added to every row
    int add_scalar(int a, double c);
    int sub(int a, int b);
    int sub_rowvec(int a, int rv);
    int hadamard(int a, int b);
    int cdiv(int a, int b);  // elementwise a / b
    int cmul(int a, double s);
    int colwise_scale(int a, int s);  // s is 1 x C
    int softmax_rows(int a);
    int layer_norm_rows(int a, double eps = 1e-5);
    int relu(int a);
    int prelu(int a, int alpha);  // alpha is 1 x 1
    int sigmoid(int a);
    int abs(int a);
    int log(int a);
    int sqrt(int a);
    int square(int a);
    int clamp_min(int a, double lo);
    int slice_cols(int a, int c0, int n);
    int concat_cols(const std::vector<int>& parts);
    int concat_rows(const std::vector<int>& parts);
    int sum(int a);           // 1 x 1
    int colwise_mean(int a);  // 1 x C
    int dropout(int a, double p, Rng& rng);  // inverted dropout; identity if p <= 0

    const Mat& value(int id) const { return nodes_[static_cast<std::size_t>(id)].val; }
    const Mat& grad(int id) const;
    bool needs_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].needs_grad; }

    // Seeds d(objective)/d(node) before run_backward(); used when the
    // objective itself is computed off-tape (e.g. batch-level KL).
    void add_grad(int id, const Mat& g);
    void backward(int root);  // scalar root, seeds 1 and sweeps
    void run_backward();

    std::size_t node_count() const { return nodes_.size(); }

  private:
    struct Node {
        Mat val;
        Mat grad;  // lazily allocated
        bool needs_grad = false;
        std::function<void(Graph&)> back;
    };

    int push(Mat val, bool needs_grad, std::function<void(Graph&)> back);
    Mat& grad_ref(int id);
    // Accumulates into a parent's grad only when that parent participates
    // in differentiation.
    template <typename Expr>
    void acc(int id, const Expr& e) {
        if (nodes_[static_cast<std::size_t>(id)].needs_grad) grad_ref(id) += e;
    }

    std::vector<Node> nodes_;
};

}  // namespace darslp::nn
