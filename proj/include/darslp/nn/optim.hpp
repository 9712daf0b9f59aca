#pragma once

#include <map>
#include <string>

#include "darslp/nn/graph.hpp"

namespace darslp::nn {

// Named persistent parameters with their gradient and Adam state. std::map
// keeps iteration order deterministic across runs.
class ParamStore {
  public:
    struct Entry {
        Mat value;
        Mat grad;
        Mat m;  // Adam first moment
        Mat v;  // Adam second moment
    };

    Mat& create(const std::string& name, int rows, int cols);
    bool has(const std::string& name) const { return entries_.count(name) > 0; }
    Entry& at(const std::string& name);
    const Entry& at(const std::string& name) const;
    void zero_grad();
    std::map<std::string, Entry>& entries() { return entries_; }
    const std::map<std::string, Entry>& entries() const { return entries_; }
    // L1 norm of all parameter tensors whose name matches the prefix filter.
    double l1_norm(const std::string& prefix) const;

  private:
    std::map<std::string, Entry> entries_;
};

// Binds parameters as leaves of one Graph and pushes gradients back after
// the backward sweep. One Binder per graph.
class Binder {
  public:
    Binder(Graph& g, ParamStore& ps, bool trainable = true)
        : graph_(g), store_(ps), trainable_(trainable) {}
    int operator()(const std::string& name);
    // Adds each bound leaf's accumulated gradient into the store (+=).
    void harvest();

  private:
    Graph& graph_;
    ParamStore& store_;
    bool trainable_;
    std::map<std::string, int> bound_;
};

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;  // classic L2-in-gradient coupling
};

class Adam {
  public:
    explicit Adam(AdamConfig cfg) : cfg_(cfg) {}
    void step(ParamStore& ps);
    void set_lr(double lr) { cfg_.lr = lr; }
    double lr() const { return cfg_.lr; }

  private:
    AdamConfig cfg_;
    long t_ = 0;
};

// ReduceLROnPlateau: multiplies the LR by `factor` when the monitored
// metric has not improved by more than a relative threshold for
// `patience` epochs.
class PlateauScheduler {
  public:
    PlateauScheduler(double factor, int patience, double rel_threshold = 1e-4)
        : factor_(factor), patience_(patience), threshold_(rel_threshold) {}
    // Returns true when the LR was just reduced.
    bool observe(double metric, Adam& opt);

  private:
    double factor_;
    int patience_;
    double threshold_;
    double best_ = std::numeric_limits<double>::infinity();
    int stale_ = 0;
};

class EarlyStopper {
  public:
    explicit EarlyStopper(int patience) : patience_(patience) {}
    // Returns true when training should stop. Tracks the best epoch.
    bool observe(double metric, int epoch);
    int best_epoch() const { return best_epoch_; }
    double best_metric() const { return best_; }

  private:
    int patience_;
    double best_ = std::numeric_limits<double>::infinity();
    int best_epoch_ = -1;
    int stale_ = 0;
};

// Uniform fan-in init: U(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weights and
// biases alike.
void init_uniform_fan_in(Mat& w, int fan_in, Rng& rng);

}  // namespace darslp::nn
