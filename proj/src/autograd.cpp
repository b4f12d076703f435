#include "dissector/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include "dissector/common.hpp"

namespace dissector {

Parameter& ParameterSet::add(std::string name, Matrix init, bool decay) {
    if (find(name) != nullptr) throw ContractError("duplicate parameter " + name);
    auto p = std::make_unique<Parameter>();
    p->name = std::move(name);
    p->value = std::move(init);
    p->decay = decay;
    p->zero_grad();
    p->adam_m.setZero(p->value.rows(), p->value.cols());
    p->adam_v.setZero(p->value.rows(), p->value.cols());
    params_.push_back(std::move(p));
    return *params_.back();
}

Parameter* ParameterSet::find(const std::string& name) {
    for (auto& p : params_) {
        if (p->name == name) return p.get();
    }
    return nullptr;
}

const Parameter* ParameterSet::find(const std::string& name) const {
    for (const auto& p : params_) {
        if (p->name == name) return p.get();
    }
    return nullptr;
}

Parameter& ParameterSet::at(const std::string& name) {
    Parameter* p = find(name);
    if (p == nullptr) throw ContractError("unknown parameter " + name);
    return *p;
}

void ParameterSet::zero_grad() {
    for (auto& p : params_) p->zero_grad();
}

std::size_t ParameterSet::scalar_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += static_cast<std::size_t>(p->value.size());
    return n;
}

void ParameterSet::copy_values_from(const ParameterSet& other) {
    for (auto& p : params_) {
        const Parameter* src = other.find(p->name);
        if (src != nullptr && src->value.rows() == p->value.rows() && src->value.cols() == p->value.cols()) {
            p->value = src->value;
        }
    }
}

const Matrix& Var::value() const { return graph->value(id); }

Var Graph::constant(Matrix value) {
    nodes_.push_back(Node{std::move(value), {}, {}, {}, nullptr, false});
    return Var{this, static_cast<int>(nodes_.size() - 1)};
}

void Graph::freeze(const ParameterSet& set) {
    for (const auto& p : set.items()) frozen_.push_back(p.get());
}

Var Graph::param(Parameter& p, bool trainable) {
    if (trainable && std::find(frozen_.begin(), frozen_.end(), &p) != frozen_.end()) trainable = false;
    nodes_.push_back(Node{p.value, {}, {}, {}, trainable ? &p : nullptr, trainable});
    return Var{this, static_cast<int>(nodes_.size() - 1)};
}

Var Graph::record(Matrix value, std::vector<int> parents, std::function<void(Graph&, int)> backward) {
    bool needs = false;
    for (int p : parents) needs = needs || requires_grad(p);
    Node node{std::move(value), {}, std::move(parents), {}, nullptr, needs};
    if (needs) node.backward = std::move(backward);
    nodes_.push_back(std::move(node));
    return Var{this, static_cast<int>(nodes_.size() - 1)};
}

Matrix& Graph::grad(int id) {
    Node& node = nodes_[static_cast<std::size_t>(id)];
    if (node.grad.size() == 0) node.grad.setZero(node.value.rows(), node.value.cols());
    return node.grad;
}

const Matrix* Graph::grad_if_any(int id) const {
    const Node& node = nodes_[static_cast<std::size_t>(id)];
    return node.grad.size() == 0 ? nullptr : &node.grad;
}

void Graph::backward(Var root, const Matrix& seed) {
    const std::pair<Var, Matrix> one{root, seed};
    backward(std::span<const std::pair<Var, Matrix>>(&one, 1));
}

void Graph::backward(std::span<const std::pair<Var, Matrix>> seeds) {
    int top = -1;
    for (const auto& [root, seed] : seeds) {
        if (root.graph != this) throw ContractError("backward root from another graph");
        const Matrix& v = value(root.id);
        if (seed.rows() != v.rows() || seed.cols() != v.cols()) throw ContractError("backward seed shape mismatch");
        if (!requires_grad(root.id)) continue;
        grad(root.id) += seed;
        top = std::max(top, root.id);
    }
    for (int id = top; id >= 0; --id) {
        Node& node = nodes_[static_cast<std::size_t>(id)];
        if (!node.requires_grad || node.grad.size() == 0) continue;
        if (node.backward) node.backward(*this, id);
        if (node.param != nullptr) node.param->grad += node.grad;
    }
}

namespace ag {

namespace {

void check_same_graph(Var a, Var b) {
    if (a.graph != b.graph) throw ContractError("operands belong to different graphs");
}

void accumulate(Graph& g, int id, const Matrix& delta) {
    if (g.requires_grad(id)) g.grad(id) += delta;
}

}  // namespace

Var matmul(Var a, Var b) {
    check_same_graph(a, b);
    if (a.cols() != b.rows()) throw ContractError("matmul shape mismatch");
    Graph& g = *a.graph;
    return g.record(a.value() * b.value(), {a.id, b.id}, [a = a.id, b = b.id](Graph& gr, int self) {
        const Matrix& go = gr.grad(self);
        if (gr.requires_grad(a)) gr.grad(a).noalias() += go * gr.value(b).transpose();
        if (gr.requires_grad(b)) gr.grad(b).noalias() += gr.value(a).transpose() * go;
    });
}

Var add(Var a, Var b) {
    check_same_graph(a, b);
    if (a.rows() != b.rows() || a.cols() != b.cols()) throw ContractError("add shape mismatch");
    Graph& g = *a.graph;
    return g.record(a.value() + b.value(), {a.id, b.id}, [a = a.id, b = b.id](Graph& gr, int self) {
        const Matrix go = gr.grad(self);
        accumulate(gr, a, go);
        accumulate(gr, b, go);
    });
}

Var add_row(Var a, Var row) {
    check_same_graph(a, row);
    if (row.rows() != 1 || row.cols() != a.cols()) throw ContractError("add_row shape mismatch");
    Graph& g = *a.graph;
    Matrix out = a.value();
    out.rowwise() += row.value().row(0);
    return g.record(std::move(out), {a.id, row.id}, [a = a.id, r = row.id](Graph& gr, int self) {
        const Matrix go = gr.grad(self);
        accumulate(gr, a, go);
        if (gr.requires_grad(r)) gr.grad(r) += go.colwise().sum();
    });
}

Var linear(Var x, Var weight, Var bias) { return add_row(matmul(x, weight), bias); }

Var scale(Var a, double factor) {
    Graph& g = *a.graph;
    return g.record(a.value() * factor, {a.id}, [a = a.id, factor](Graph& gr, int self) {
        accumulate(gr, a, gr.grad(self) * factor);
    });
}

Var layer_norm(Var x, Var gamma, Var beta, double eps) {
    check_same_graph(x, gamma);
    check_same_graph(x, beta);
    const Eigen::Index n = x.cols();
    if (gamma.cols() != n || beta.cols() != n) throw ContractError("layer_norm shape mismatch");
    Graph& g = *x.graph;
    const Matrix& in = x.value();
    Matrix xhat(in.rows(), n);
    Eigen::VectorXd inv_std(in.rows());
    for (Eigen::Index r = 0; r < in.rows(); ++r) {
        const double mean = in.row(r).mean();
        const double var = (in.row(r).array() - mean).square().mean();
        inv_std(r) = 1.0 / std::sqrt(var + eps);
        xhat.row(r) = (in.row(r).array() - mean) * inv_std(r);
    }
    Matrix out = xhat;
    for (Eigen::Index r = 0; r < out.rows(); ++r) {
        out.row(r) = out.row(r).cwiseProduct(gamma.value().row(0)) + beta.value().row(0);
    }
    return g.record(std::move(out), {x.id, gamma.id, beta.id},
                    [x = x.id, ga = gamma.id, be = beta.id, xhat = std::move(xhat), inv_std](Graph& gr, int self) {
                        const Matrix& go = gr.grad(self);
                        if (gr.requires_grad(ga)) gr.grad(ga) += (go.cwiseProduct(xhat)).colwise().sum();
                        if (gr.requires_grad(be)) gr.grad(be) += go.colwise().sum();
                        if (!gr.requires_grad(x)) return;
                        const RowVector gamma_row = gr.value(ga).row(0);
                        const double n = static_cast<double>(xhat.cols());
                        Matrix& gx = gr.grad(x);
                        for (Eigen::Index r = 0; r < xhat.rows(); ++r) {
                            const RowVector dxhat = go.row(r).cwiseProduct(gamma_row);
                            const double mean_d = dxhat.mean();
                            const double mean_dx = dxhat.dot(xhat.row(r)) / n;
                            gx.row(r) += inv_std(r) * (dxhat.array() - mean_d - xhat.row(r).array() * mean_dx).matrix();
                        }
                    });
}

Var gelu(Var x) {
    Graph& g = *x.graph;
    const Matrix& in = x.value();
    Matrix out = in.unaryExpr([](double v) { return 0.5 * v * (1.0 + std::erf(v / std::numbers::sqrt2)); });
    return g.record(std::move(out), {x.id}, [x = x.id](Graph& gr, int self) {
        if (!gr.requires_grad(x)) return;
        const Matrix d = gr.value(x).unaryExpr([](double v) {
            const double cdf = 0.5 * (1.0 + std::erf(v / std::numbers::sqrt2));
            const double pdf = std::exp(-0.5 * v * v) / std::sqrt(2.0 * std::numbers::pi);
            return cdf + v * pdf;
        });
        gr.grad(x) += gr.grad(self).cwiseProduct(d);
    });
}

Var dropout(Var x, double rate) {
    Graph& g = *x.graph;
    if (!g.training() || rate <= 0.0) return x;
    if (rate >= 1.0) throw ContractError("dropout rate must be < 1");
    std::bernoulli_distribution keep(1.0 - rate);
    Matrix mask(x.rows(), x.cols());
    for (Eigen::Index i = 0; i < mask.size(); ++i) mask.data()[i] = keep(g.rng()) ? 1.0 / (1.0 - rate) : 0.0;
    return g.record(x.value().cwiseProduct(mask), {x.id}, [x = x.id, mask = std::move(mask)](Graph& gr, int self) {
        accumulate(gr, x, gr.grad(self).cwiseProduct(mask));
    });
}

Var gather_rows(Var x, std::span<const int> rows) {
    Graph& g = *x.graph;
    const Matrix& in = x.value();
    Matrix out(static_cast<Eigen::Index>(rows.size()), in.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i] < 0 || rows[i] >= in.rows()) throw ContractError("gather_rows index out of range");
        out.row(static_cast<Eigen::Index>(i)) = in.row(rows[i]);
    }
    return g.record(std::move(out), {x.id}, [x = x.id, idx = std::vector<int>(rows.begin(), rows.end())](Graph& gr, int self) {
        if (!gr.requires_grad(x)) return;
        const Matrix& go = gr.grad(self);
        Matrix& gx = gr.grad(x);
        for (std::size_t i = 0; i < idx.size(); ++i) gx.row(idx[i]) += go.row(static_cast<Eigen::Index>(i));
    });
}

Var concat_rows(std::span<const Var> parts) {
    if (parts.empty()) throw ContractError("concat_rows needs at least one part");
    Graph& g = *parts.front().graph;
    Eigen::Index total = 0;
    const Eigen::Index cols = parts.front().cols();
    std::vector<int> ids;
    for (const auto& p : parts) {
        check_same_graph(parts.front(), p);
        if (p.cols() != cols) throw ContractError("concat_rows column mismatch");
        total += p.rows();
        ids.push_back(p.id);
    }
    Matrix out(total, cols);
    Eigen::Index at = 0;
    for (const auto& p : parts) {
        out.middleRows(at, p.rows()) = p.value();
        at += p.rows();
    }
    return g.record(std::move(out), ids, [ids](Graph& gr, int self) {
        const Matrix& go = gr.grad(self);
        Eigen::Index at = 0;
        for (int id : ids) {
            const Eigen::Index n = gr.value(id).rows();
            if (gr.requires_grad(id)) gr.grad(id) += go.middleRows(at, n);
            at += n;
        }
    });
}

Var attention(Var q, Var k, Var v, int heads) {
    check_same_graph(q, k);
    check_same_graph(q, v);
    const Eigen::Index d = q.cols();
    if (k.cols() != d || v.cols() != d || k.rows() != v.rows()) throw ContractError("attention shape mismatch");
    if (heads <= 0 || d % heads != 0) throw ContractError("attention heads must divide the model width");
    if (k.rows() == 0) throw ContractError("attention needs at least one key");
    Graph& g = *q.graph;
    const Eigen::Index dh = d / heads;
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
    const Matrix& Q = q.value();
    const Matrix& K = k.value();
    const Matrix& V = v.value();
    Matrix out(Q.rows(), d);
    std::vector<Matrix> weights(static_cast<std::size_t>(heads));
    for (int h = 0; h < heads; ++h) {
        Matrix s = (Q.middleCols(h * dh, dh) * K.middleCols(h * dh, dh).transpose()) * inv_sqrt;
        for (Eigen::Index r = 0; r < s.rows(); ++r) {
            const double mx = s.row(r).maxCoeff();
            s.row(r) = (s.row(r).array() - mx).exp();
            s.row(r) /= s.row(r).sum();
        }
        out.middleCols(h * dh, dh) = s * V.middleCols(h * dh, dh);
        weights[static_cast<std::size_t>(h)] = std::move(s);
    }
    return g.record(std::move(out), {q.id, k.id, v.id},
                    [q = q.id, k = k.id, v = v.id, heads, dh, inv_sqrt, weights = std::move(weights)](Graph& gr, int self) {
                        const Matrix& go = gr.grad(self);
                        const Matrix& Q = gr.value(q);
                        const Matrix& K = gr.value(k);
                        const Matrix& V = gr.value(v);
                        for (int h = 0; h < heads; ++h) {
                            const Matrix& A = weights[static_cast<std::size_t>(h)];
                            const auto goh = go.middleCols(h * dh, dh);
                            if (gr.requires_grad(v)) gr.grad(v).middleCols(h * dh, dh).noalias() += A.transpose() * goh;
                            if (!gr.requires_grad(q) && !gr.requires_grad(k)) continue;
                            const Matrix dA = goh * V.middleCols(h * dh, dh).transpose();
                            Matrix dS = A.cwiseProduct(dA);
                            const Eigen::VectorXd row_dot = dS.rowwise().sum();
                            dS -= A.cwiseProduct(row_dot.replicate(1, A.cols()));
                            dS *= inv_sqrt;
                            if (gr.requires_grad(q)) gr.grad(q).middleCols(h * dh, dh).noalias() += dS * K.middleCols(h * dh, dh);
                            if (gr.requires_grad(k))
                                gr.grad(k).middleCols(h * dh, dh).noalias() += dS.transpose() * Q.middleCols(h * dh, dh);
                        }
                    });
}

Var mix_rows(Var x, std::span<const int> rows, Var mask, Var fill) {
    check_same_graph(x, mask);
    check_same_graph(x, fill);
    if (mask.rows() != static_cast<Eigen::Index>(rows.size()) || mask.cols() != 2) {
        throw ContractError("mix_rows needs one (keep, mask) pair per row");
    }
    if (fill.rows() != 1 || fill.cols() != x.cols()) throw ContractError("mix_rows fill shape mismatch");
    Graph& g = *x.graph;
    Matrix out = x.value();
    const Matrix& m = mask.value();
    for (std::size_t t = 0; t < rows.size(); ++t) {
        const auto ti = static_cast<Eigen::Index>(t);
        out.row(rows[t]) = m(ti, 0) * x.value().row(rows[t]) + m(ti, 1) * fill.value().row(0);
    }
    return g.record(std::move(out), {x.id, mask.id, fill.id},
                    [x = x.id, mk = mask.id, f = fill.id, idx = std::vector<int>(rows.begin(), rows.end())](Graph& gr, int self) {
                        const Matrix& go = gr.grad(self);
                        const Matrix& m = gr.value(mk);
                        const Matrix& xv = gr.value(x);
                        const Matrix& fv = gr.value(f);
                        if (gr.requires_grad(x)) {
                            Matrix gx = go;
                            for (std::size_t t = 0; t < idx.size(); ++t) {
                                gx.row(idx[t]) = m(static_cast<Eigen::Index>(t), 0) * go.row(idx[t]);
                            }
                            gr.grad(x) += gx;
                        }
                        for (std::size_t t = 0; t < idx.size(); ++t) {
                            const auto ti = static_cast<Eigen::Index>(t);
                            if (gr.requires_grad(mk)) {
                                gr.grad(mk)(ti, 0) += go.row(idx[t]).dot(xv.row(idx[t]));
                                gr.grad(mk)(ti, 1) += go.row(idx[t]).dot(fv.row(0));
                            }
                            if (gr.requires_grad(f)) gr.grad(f).row(0) += m(ti, 1) * go.row(idx[t]);
                        }
                    });
}

Var gumbel_softmax(Var logits, const Matrix& noise, double tau, bool hard) {
    if (tau <= 0.0) throw ContractError("Gumbel-softmax temperature must be positive");
    if (noise.rows() != logits.rows() || noise.cols() != logits.cols()) throw ContractError("Gumbel noise shape mismatch");
    Graph& g = *logits.graph;
    Matrix soft = (logits.value() + noise) / tau;
    for (Eigen::Index r = 0; r < soft.rows(); ++r) {
        const double mx = soft.row(r).maxCoeff();
        soft.row(r) = (soft.row(r).array() - mx).exp();
        soft.row(r) /= soft.row(r).sum();
    }
    Matrix out = soft;
    if (hard) {
        out.setZero();
        for (Eigen::Index r = 0; r < soft.rows(); ++r) {
            Eigen::Index arg = 0;
            soft.row(r).maxCoeff(&arg);
            out(r, arg) = 1.0;
        }
    }
    return g.record(std::move(out), {logits.id}, [l = logits.id, soft = std::move(soft), tau](Graph& gr, int self) {
        if (!gr.requires_grad(l)) return;
        const Matrix& go = gr.grad(self);
        const Eigen::VectorXd dot = go.cwiseProduct(soft).rowwise().sum();
        gr.grad(l) += (soft.cwiseProduct(go - dot.replicate(1, go.cols()))) / tau;
    });
}

}  // namespace ag

Matrix xavier_uniform(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng) {
    const double limit = std::sqrt(6.0 / static_cast<double>(rows + cols));
    std::uniform_real_distribution<double> dist(-limit, limit);
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
    return m;
}

Matrix normal_init(Eigen::Index rows, Eigen::Index cols, double stddev, std::mt19937_64& rng) {
    std::normal_distribution<double> dist(0.0, stddev);
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
    return m;
}

void AdamW::step(ParameterSet& params, double lr) {
    ParameterSet* sets[] = {&params};
    step(sets, lr);
}

void AdamW::step(std::span<ParameterSet* const> sets, double lr) {
    ++t_;
    const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
    for (ParameterSet* set : sets) {
        for (auto& p : set->items()) {
            p->adam_m = config_.beta1 * p->adam_m + (1.0 - config_.beta1) * p->grad;
            p->adam_v = config_.beta2 * p->adam_v + (1.0 - config_.beta2) * p->grad.cwiseAbs2();
            if (p->decay && config_.weight_decay > 0.0) p->value *= (1.0 - lr * config_.weight_decay);
            p->value.array() -= lr * (p->adam_m.array() / bc1) / ((p->adam_v.array() / bc2).sqrt() + config_.eps);
        }
    }
}

double clip_grad_norm(ParameterSet& params, double max_norm) {
    ParameterSet* sets[] = {&params};
    return clip_grad_norm(sets, max_norm);
}

double clip_grad_norm(std::span<ParameterSet* const> sets, double max_norm) {
    double sq = 0.0;
    for (const ParameterSet* set : sets) {
        for (const auto& p : set->items()) sq += p->grad.squaredNorm();
    }
    const double norm = std::sqrt(sq);
    if (norm > max_norm && norm > 0.0) {
        const double factor = max_norm / norm;
        for (ParameterSet* set : sets) {
            for (auto& p : set->items()) p->grad *= factor;
        }
    }
    return norm;
}

}  // namespace dissector
