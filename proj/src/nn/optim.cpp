#include "darslp/nn/optim.hpp"

#include <cmath>

namespace darslp::nn {

Mat& ParamStore::create(const std::string& name, int rows, int cols) {
    if (entries_.count(name)) throw Error("duplicate parameter: " + name);
    Entry e;
    e.value = Mat::Zero(rows, cols);
    e.grad = Mat::Zero(rows, cols);
    e.m = Mat::Zero(rows, cols);
    e.v = Mat::Zero(rows, cols);
    return entries_.emplace(name, std::move(e)).first->second.value;
}

ParamStore::Entry& ParamStore::at(const std::string& name) {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw Error("unknown parameter: " + name);
    return it->second;
}

const ParamStore::Entry& ParamStore::at(const std::string& name) const {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw Error("unknown parameter: " + name);
    return it->second;
}

void ParamStore::zero_grad() {
    for (auto& [name, e] : entries_) e.grad.setZero();
}

double ParamStore::l1_norm(const std::string& prefix) const {
    double s = 0.0;
    for (const auto& [name, e] : entries_)
        if (name.rfind(prefix, 0) == 0) s += e.value.cwiseAbs().sum();
    return s;
}

int Binder::operator()(const std::string& name) {
    auto it = bound_.find(name);
    if (it != bound_.end()) return it->second;
    int id = graph_.leaf(store_.at(name).value, trainable_);
    bound_.emplace(name, id);
    return id;
}

void Binder::harvest() {
    for (const auto& [name, id] : bound_) store_.at(name).grad += graph_.grad(id);
}

void Adam::step(ParamStore& ps) {
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (auto& [name, e] : ps.entries()) {
        Mat g = e.grad;
        if (cfg_.weight_decay > 0.0) g += cfg_.weight_decay * e.value;
        e.m = cfg_.beta1 * e.m + (1.0 - cfg_.beta1) * g;
        e.v = cfg_.beta2 * e.v + (1.0 - cfg_.beta2) * g.cwiseProduct(g);
        Mat mhat = e.m / bc1;
        Mat denom = (e.v / bc2).cwiseSqrt();
        denom.array() += cfg_.eps;
        e.value -= cfg_.lr * mhat.cwiseQuotient(denom);
    }
}

bool PlateauScheduler::observe(double metric, Adam& opt) {
    if (metric < best_ * (1.0 - threshold_)) {
        best_ = metric;
        stale_ = 0;
        return false;
    }
    best_ = std::min(best_, metric);
    if (++stale_ > patience_) {
        opt.set_lr(opt.lr() * factor_);
        stale_ = 0;
        return true;
    }
    return false;
}

bool EarlyStopper::observe(double metric, int epoch) {
    if (metric < best_) {
        best_ = metric;
        best_epoch_ = epoch;
        stale_ = 0;
        return false;
    }
    return ++stale_ > patience_;
}

void init_uniform_fan_in(Mat& w, int fan_in, Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(std::max(1, fan_in)));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (Eigen::Index i = 0; i < w.rows(); ++i)
        for (Eigen::Index j = 0; j < w.cols(); ++j) w(i, j) = dist(rng);
}

}  // namespace darslp::nn
