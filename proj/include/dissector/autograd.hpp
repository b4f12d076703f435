#pragma once

#include <Eigen/Dense>
#include <functional>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace dissector {

using Matrix = Eigen::MatrixXd;
using RowVector = Eigen::RowVectorXd;

/// A named trainable tensor with its gradient accumulator and optimizer state.
struct Parameter {
    std::string name;
    Matrix value;
    Matrix grad;
    Matrix adam_m;
    Matrix adam_v;
    bool decay = true;  // weight decay applies

    void zero_grad() { grad.setZero(value.rows(), value.cols()); }
};

class ParameterSet {
public:
    Parameter& add(std::string name, Matrix init, bool decay = true);
    Parameter* find(const std::string& name);
    const Parameter* find(const std::string& name) const;
    Parameter& at(const std::string& name);

    std::vector<std::unique_ptr<Parameter>>& items() { return params_; }
    const std::vector<std::unique_ptr<Parameter>>& items() const { return params_; }
    void zero_grad();
    std::size_t scalar_count() const;
    /// Copies values of every same-named parameter from `other`.
    void copy_values_from(const ParameterSet& other);

private:
    std::vector<std::unique_ptr<Parameter>> params_;
};

class Graph;

/// Handle to a node of a Graph. Cheap to copy; valid while the graph lives.
struct Var {
    Graph* graph = nullptr;
    int id = -1;

    const Matrix& value() const;
    Eigen::Index rows() const { return value().rows(); }
    Eigen::Index cols() const { return value().cols(); }
};

/// Reverse-mode tape. Nodes are recorded in creation order, which is a topological order.
class Graph {
public:
    explicit Graph(bool training = false, std::uint64_t seed = 0) : training_(training), rng_(seed) {}

    Var constant(Matrix value);
    /// Trainable parameters accumulate into Parameter::grad on backward(); frozen ones do not.
    Var param(Parameter& p, bool trainable = true);
    /// Parameters of `set` enter this graph as constants.
    void freeze(const ParameterSet& set);

    Var record(Matrix value, std::vector<int> parents, std::function<void(Graph&, int)> backward);

    const Matrix& value(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }
    /// Gradient buffer of a node, allocated on first use.
    Matrix& grad(int id);
    bool has_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].grad.size() > 0; }
    bool requires_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].requires_grad; }
    const Matrix* grad_if_any(int id) const;

    /// Seeds `root` with `seed` (d objective / d root) and propagates to every node that needs it.
    void backward(Var root, const Matrix& seed);
    /// Several seeded roots in one sweep.
    void backward(std::span<const std::pair<Var, Matrix>> seeds);

    bool training() const { return training_; }
    std::mt19937_64& rng() { return rng_; }
    std::size_t size() const { return nodes_.size(); }

private:
    struct Node {
        Matrix value;
        Matrix grad;
        std::vector<int> parents;
        std::function<void(Graph&, int)> backward;
        Parameter* param = nullptr;
        bool requires_grad = false;
    };
    std::vector<Node> nodes_;
    std::vector<const Parameter*> frozen_;
    bool training_;
    std::mt19937_64 rng_;
};

namespace ag {

Var matmul(Var a, Var b);
Var add(Var a, Var b);
Var add_row(Var a, Var row);
Var linear(Var x, Var weight, Var bias);
Var scale(Var a, double factor);
Var layer_norm(Var x, Var gamma, Var beta, double eps = 1e-5);
Var gelu(Var x);
Var dropout(Var x, double rate);
Var gather_rows(Var x, std::span<const int> rows);
Var concat_rows(std::span<const Var> parts);
/// Multi-head scaled dot-product attention over already projected queries, keys and values.
Var attention(Var q, Var k, Var v, int heads);
/// Replaces each listed row r_t of `x` by mask(t,0) * x(r_t) + mask(t,1) * fill.
Var mix_rows(Var x, std::span<const int> rows, Var mask, Var fill);
/// Row-wise Gumbel-softmax over two or more logits with supplied noise. In hard mode the
/// forward value is one-hot while the gradient follows the soft sample (straight-through).
Var gumbel_softmax(Var logits, const Matrix& noise, double tau, bool hard);

}  // namespace ag

Matrix xavier_uniform(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng);
Matrix normal_init(Eigen::Index rows, Eigen::Index cols, double stddev, std::mt19937_64& rng);

struct AdamWConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
};

/// Adam with decoupled weight decay.
class AdamW {
public:
    explicit AdamW(AdamWConfig config = {}) : config_(config) {}
    void step(ParameterSet& params, double lr);
    /// One optimizer step over several parameter sets.
    void step(std::span<ParameterSet* const> sets, double lr);
    long long steps() const { return t_; }
    void set_steps(long long t) { t_ = t; }

private:
    AdamWConfig config_;
    long long t_ = 0;
};

/// Scales gradients so their global L2 norm is at most `max_norm`. Returns the norm before clipping.
double clip_grad_norm(ParameterSet& params, double max_norm);
double clip_grad_norm(std::span<ParameterSet* const> sets, double max_norm);

}  // namespace dissector
