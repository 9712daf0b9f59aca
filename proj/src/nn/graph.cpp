#include "darslp/nn/graph.hpp"

#include <cmath>

namespace darslp::nn {

int Graph::push(Mat val, bool needs_grad, std::function<void(Graph&)> back) {
    Node n;
    n.val = std::move(val);
    n.needs_grad = needs_grad;
    n.back = std::move(back);
    nodes_.push_back(std::move(n));
    return static_cast<int>(nodes_.size()) - 1;
}

int Graph::leaf(Mat v, bool needs_grad) { return push(std::move(v), needs_grad, nullptr); }

Mat& Graph::grad_ref(int id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (n.grad.size() == 0) n.grad = Mat::Zero(n.val.rows(), n.val.cols());
    return n.grad;
}

const Mat& Graph::grad(int id) const {
    const Node& n = nodes_[static_cast<std::size_t>(id)];
    if (n.grad.size() == 0) {
        static thread_local Mat zero;
        zero = Mat::Zero(n.val.rows(), n.val.cols());
        return zero;
    }
    return n.grad;
}

void Graph::add_grad(int id, const Mat& g) {
    if (g.rows() != value(id).rows() || g.cols() != value(id).cols())
        throw ShapeMismatch("add_grad: seed shape mismatch");
    grad_ref(id) += g;
}

void Graph::backward(int root) {
    if (value(root).size() != 1) throw ShapeMismatch("backward: root must be scalar");
    add_grad(root, Mat::Ones(1, 1));
    run_backward();
}

void Graph::run_backward() {
    for (int id = static_cast<int>(nodes_.size()) - 1; id >= 0; --id) {
        Node& n = nodes_[static_cast<std::size_t>(id)];
        if (!n.needs_grad || n.grad.size() == 0 || !n.back) continue;
        n.back(*this);
    }
}

namespace {
void check_same_shape(const Mat& a, const Mat& b, const char* op) {
    if (a.rows() != b.rows() || a.cols() != b.cols())
        throw ShapeMismatch(std::string(op) + ": shape mismatch");
}
}  // namespace

int Graph::matmul(int a, int b) {
    const Mat& A = value(a);
    const Mat& B = value(b);
    if (A.cols() != B.rows()) throw ShapeMismatch("matmul: inner dims");
    int id = push(A * B, needs_grad(a) || needs_grad(b), nullptr);
    nodes_.back().back = [a, b, id](Graph& g) {
        const Mat& G = g.grad(id);
        g.acc(a, G * g.value(b).transpose());
        g.acc(b, g.value(a).transpose() * G);
    };
    return id;
}

int Graph::matmul_nt(int a, int b) {
    const Mat& A = value(a);
    const Mat& B = value(b);
    if (A.cols() != B.cols()) throw ShapeMismatch("matmul_nt: inner dims");
    int id = push(A * B.transpose(), needs_grad(a) || needs_grad(b), nullptr);
    nodes_.back().back = [a, b, id](Graph& g) {
        const Mat& G = g.grad(id);
        g.acc(a, G * g.value(b));
        g.acc(b, G.transpose() * g.value(a));
    };
    return id;
}

int Graph::add(int a, int b) {
    check_same_shape(value(a), value(b), "add");
    int id = push(value(a) + value(b), needs_grad(a) || needs_grad(b), nullptr);
    nodes_.back().back = [a, b, id](Graph& g) {
        g.acc(a, g.grad(id));
        g.acc(b, g.grad(id));
    };
    return id;
}

int Graph::add_rowvec(int a, int rv) {
    const Mat& A = value(a);
    const Mat& R = value(rv);
    if (R.rows() != 1 || R.cols() != A.cols()) throw ShapeMismatch("add_rowvec");
    int id = push(A.rowwise() + R.row(0), needs_grad(a) || needs_grad(rv), nullptr);
    nodes_.back().back = [a, rv, id](Graph& g) {
        g.acc(a, g.grad(id));
        g.acc(rv, g.grad(id).colwise().sum());
    };
    return id;
}

int Graph::add_scalar(int a, double c) {
    int id = push((value(a).array() + c).matrix(), needs_grad(a), nullptr);
    nodes_.back().back = [a, id](Graph& g) { g.acc(a, g.grad(id)); };
    return id;
}

int Graph::sub(int a, int b) {
    check_same_shape(value(a), value(b), "sub");
    int id = push(value(a) - value(b), needs_grad(a) || needs_grad(b), nullptr);
    nodes_.back().back = [a, b, id](Graph& g) {
        g.acc(a, g.grad(id));
        g.acc(b, -g.grad(id));
    };
    return id;
}

int Graph::sub_rowvec(int a, int rv) {
    const Mat& A = value(a);
    const Mat& R = value(rv);
    if (R.rows() != 1 || R.cols() != A.cols()) throw ShapeMismatch("sub_rowvec");
    int id = push(A.rowwise() - R.row(0), needs_grad(a) || needs_grad(rv), nullptr);
    nodes_.back().back = [a, rv, id](Graph& g) {
        g.acc(a, g.grad(id));
        g.acc(rv, -g.grad(id).colwise().sum());
    };
    return id;
}

int Graph::hadamard(int a, int b) {
    check_same_shape(value(a), value(b), "hadamard");
    int id = push(value(a).cwiseProduct(value(b)), needs_grad(a) || needs_grad(b), nullptr);
    nodes_.back().back = [a, b, id](Graph& g) {
        g.acc(a, g.grad(id).cwiseProduct(g.value(b)));
        g.acc(b, g.grad(id).cwiseProduct(g.value(a)));
    };
    return id;
}

int Graph::cdiv(int a, int b) {
    check_same_shape(value(a), value(b), "cdiv");
    int id = push(value(a).cwiseQuotient(value(b)), needs_grad(a) || needs_grad(b), nullptr);
    nodes_.back().back = [a, b, id](Graph& g) {
        const Mat& G = g.grad(id);
        g.acc(a, G.cwiseQuotient(g.value(b)));
        g.acc(b, -G.cwiseProduct(g.value(a)).cwiseQuotient(g.value(b).cwiseProduct(g.value(b))));
    };
    return id;
}

int Graph::cmul(int a, double s) {
    int id = push(value(a) * s, needs_grad(a), nullptr);
    nodes_.back().back = [a, s, id](Graph& g) { g.acc(a, g.grad(id) * s); };
    return id;
}

int Graph::colwise_scale(int a, int s) {
    const Mat& A = value(a);
    const Mat& S = value(s);
    if (S.rows() != 1 || S.cols() != A.cols()) throw ShapeMismatch("colwise_scale");
    int id = push((A.array().rowwise() * S.row(0).array()).matrix(),
                  needs_grad(a) || needs_grad(s), nullptr);
    nodes_.back().back = [a, s, id](Graph& g) {
        const Mat& G = g.grad(id);
        g.acc(a, (G.array().rowwise() * g.value(s).row(0).array()).matrix());
        g.acc(s, G.cwiseProduct(g.value(a)).colwise().sum());
    };
    return id;
}

int Graph::softmax_rows(int a) {
    const Mat& A = value(a);
    Mat y(A.rows(), A.cols());
    for (Eigen::Index i = 0; i < A.rows(); ++i) {
        Eigen::RowVectorXd row = A.row(i);
        const double m = row.maxCoeff();
        Eigen::RowVectorXd e = (row.array() - m).exp();
        y.row(i) = e / e.sum();
    }
    int id = push(std::move(y), needs_grad(a), nullptr);
    nodes_.back().back = [a, id](Graph& g) {
        const Mat& G = g.grad(id);
        const Mat& Y = g.value(id);
        Mat dx(G.rows(), G.cols());
        for (Eigen::Index i = 0; i < G.rows(); ++i) {
            const double dot = G.row(i).dot(Y.row(i));
            dx.row(i) = (Y.row(i).array() * (G.row(i).array() - dot)).matrix();
        }
        g.acc(a, dx);
    };
    return id;
}

int Graph::layer_norm_rows(int a, double eps) {
    const Mat& A = value(a);
    const auto n = static_cast<double>(A.cols());
    Mat y(A.rows(), A.cols());
    Eigen::VectorXd inv_std(A.rows());
    for (Eigen::Index i = 0; i < A.rows(); ++i) {
        const double mu = A.row(i).mean();
        const double var = (A.row(i).array() - mu).square().sum() / n;
        const double s = 1.0 / std::sqrt(var + eps);
        inv_std(i) = s;
        y.row(i) = (A.row(i).array() - mu) * s;
    }
    int id = push(std::move(y), needs_grad(a), nullptr);
    nodes_.back().back = [a, id, inv_std, n](Graph& g) {
        const Mat& G = g.grad(id);
        const Mat& Y = g.value(id);
        Mat dx(G.rows(), G.cols());
        for (Eigen::Index i = 0; i < G.rows(); ++i) {
            const double gm = G.row(i).mean();
            const double gym = G.row(i).cwiseProduct(Y.row(i)).sum() / n;
            dx.row(i) =
                (inv_std(i) * (G.row(i).array() - gm - Y.row(i).array() * gym)).matrix();
        }
        g.acc(a, dx);
    };
    return id;
}

int Graph::relu(int a) {
    int id = push(value(a).cwiseMax(0.0), needs_grad(a), nullptr);
    nodes_.back().back = [a, id](Graph& g) {
        g.acc(a, g.grad(id).cwiseProduct((g.value(a).array() > 0.0).cast<double>().matrix()));
    };
    return id;
}

int Graph::prelu(int a, int alpha) {
    const Mat& A = value(a);
    if (value(alpha).size() != 1) throw ShapeMismatch("prelu: alpha must be 1x1");
    const double al = value(alpha)(0, 0);
    Mat y = A.unaryExpr([al](double x) { return x > 0.0 ? x : al * x; });
    int id = push(std::move(y), needs_grad(a) || needs_grad(alpha), nullptr);
    nodes_.back().back = [a, alpha, id](Graph& g) {
        const Mat& G = g.grad(id);
        const Mat& X = g.value(a);
        const double al = g.value(alpha)(0, 0);
        g.acc(a, G.binaryExpr(X, [al](double gv, double xv) { return xv > 0.0 ? gv : al * gv; }));
        double da = 0.0;
        for (Eigen::Index i = 0; i < X.rows(); ++i)
            for (Eigen::Index j = 0; j < X.cols(); ++j)
                if (X(i, j) <= 0.0) da += G(i, j) * X(i, j);
        g.acc(alpha, Mat::Constant(1, 1, da));
    };
    return id;
}

int Graph::sigmoid(int a) {
    Mat y = value(a).unaryExpr([](double x) { return 1.0 / (1.0 + std::exp(-x)); });
    int id = push(std::move(y), needs_grad(a), nullptr);
    nodes_.back().back = [a, id](Graph& g) {
        const Mat& Y = g.value(id);
        g.acc(a, g.grad(id).cwiseProduct(Y.cwiseProduct((1.0 - Y.array()).matrix())));
    };
    return id;
}

int Graph::abs(int a) {
    int id = push(value(a).cwiseAbs(), needs_grad(a), nullptr);
    nodes_.back().back = [a, id](Graph& g) {
        g.acc(a, g.grad(id).cwiseProduct(
                     g.value(a).unaryExpr([](double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); })));
    };
    return id;
}

int Graph::log(int a) {
    int id = push(value(a).array().log().matrix(), needs_grad(a), nullptr);
    nodes_.back().back = [a, id](Graph& g) {
        g.acc(a, g.grad(id).cwiseQuotient(g.value(a)));
    };
    return id;
}

int Graph::sqrt(int a) {
    int id = push(value(a).cwiseSqrt(), needs_grad(a), nullptr);
    nodes_.back().back = [a, id](Graph& g) {
        g.acc(a, (g.grad(id).array() * 0.5 / g.value(id).array()).matrix());
    };
    return id;
}

int Graph::square(int a) {
    int id = push(value(a).array().square().matrix(), needs_grad(a), nullptr);
    nodes_.back().back = [a, id](Graph& g) {
        g.acc(a, 2.0 * g.grad(id).cwiseProduct(g.value(a)));
    };
    return id;
}

int Graph::clamp_min(int a, double lo) {
    int id = push(value(a).cwiseMax(lo), needs_grad(a), nullptr);
    nodes_.back().back = [a, lo, id](Graph& g) {
        g.acc(a, g.grad(id).cwiseProduct((g.value(a).array() > lo).cast<double>().matrix()));
    };
    return id;
}

int Graph::slice_cols(int a, int c0, int n) {
    const Mat& A = value(a);
    if (c0 < 0 || n < 0 || c0 + n > A.cols()) throw ShapeMismatch("slice_cols: out of range");
    int id = push(A.middleCols(c0, n), needs_grad(a), nullptr);
    nodes_.back().back = [a, c0, n, id](Graph& g) {
        if (g.needs_grad(a)) {
            Mat d = Mat::Zero(g.value(a).rows(), g.value(a).cols());
            d.middleCols(c0, n) = g.grad(id);
            g.acc(a, d);
        }
    };
    return id;
}

int Graph::concat_cols(const std::vector<int>& parts) {
    if (parts.empty()) throw ShapeMismatch("concat_cols: empty");
    Eigen::Index rows = value(parts[0]).rows(), cols = 0;
    bool needg = false;
    for (int p : parts) {
        if (value(p).rows() != rows) throw ShapeMismatch("concat_cols: row mismatch");
        cols += value(p).cols();
        needg = needg || needs_grad(p);
    }
    Mat y(rows, cols);
    Eigen::Index off = 0;
    for (int p : parts) {
        y.middleCols(off, value(p).cols()) = value(p);
        off += value(p).cols();
    }
    int id = push(std::move(y), needg, nullptr);
    nodes_.back().back = [parts, id](Graph& g) {
        Eigen::Index off = 0;
        for (int p : parts) {
            const Eigen::Index w = g.value(p).cols();
            g.acc(p, g.grad(id).middleCols(off, w));
            off += w;
        }
    };
    return id;
}

int Graph::concat_rows(const std::vector<int>& parts) {
    if (parts.empty()) throw ShapeMismatch("concat_rows: empty");
    Eigen::Index cols = value(parts[0]).cols(), rows = 0;
    bool needg = false;
    for (int p : parts) {
        if (value(p).cols() != cols) throw ShapeMismatch("concat_rows: col mismatch");
        rows += value(p).rows();
        needg = needg || needs_grad(p);
    }
    Mat y(rows, cols);
    Eigen::Index off = 0;
    for (int p : parts) {
        y.middleRows(off, value(p).rows()) = value(p);
        off += value(p).rows();
    }
    int id = push(std::move(y), needg, nullptr);
    nodes_.back().back = [parts, id](Graph& g) {
        Eigen::Index off = 0;
        for (int p : parts) {
            const Eigen::Index h = g.value(p).rows();
            g.acc(p, g.grad(id).middleRows(off, h));
            off += h;
        }
    };
    return id;
}

int Graph::sum(int a) {
    int id = push(Mat::Constant(1, 1, value(a).sum()), needs_grad(a), nullptr);
    nodes_.back().back = [a, id](Graph& g) {
        g.acc(a, Mat::Constant(g.value(a).rows(), g.value(a).cols(), g.grad(id)(0, 0)));
    };
    return id;
}

int Graph::colwise_mean(int a) {
    const Mat& A = value(a);
    int id = push(A.colwise().mean(), needs_grad(a), nullptr);
    nodes_.back().back = [a, id](Graph& g) {
        const double inv = 1.0 / static_cast<double>(g.value(a).rows());
        g.acc(a, (inv * g.grad(id)).replicate(g.value(a).rows(), 1));
    };
    return id;
}

int Graph::dropout(int a, double p, Rng& rng) {
    if (p <= 0.0) return a;
    const Mat& A = value(a);
    Mat mask(A.rows(), A.cols());
    std::uniform_real_distribution<double> dist(0.0, 1.0);
    const double keep = 1.0 - p;
    for (Eigen::Index i = 0; i < A.rows(); ++i)
        for (Eigen::Index j = 0; j < A.cols(); ++j)
            mask(i, j) = dist(rng) < keep ? 1.0 / keep : 0.0;
    int m = constant(std::move(mask));
    return hadamard(a, m);
}

}  // namespace darslp::nn
