#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <unordered_map>
#include <vector>

#include "lcfm/errors.hpp"
#include "lcfm/tensor.hpp"

namespace lcfm {

// Trainable tensor. Gradients are written back by Tape::backward.
struct Parameter {
    Parameter() = default;
    explicit Parameter(Matrix v) : value(std::move(v)), grad(value.rows(), value.cols()) {}
    Matrix value;
    Matrix grad;
};

// Reverse-mode autodiff over Matrix-valued expressions. Build a fresh graph
// per training step (clear() + ops), call backward on a scalar node, then read
// gradients off bound Parameters.
class Tape {
public:
    using Id = std::size_t;

    void clear() {
        nodes_.clear();
        bindings_.clear();
        param_ids_.clear();
    }

    std::size_t size() const { return nodes_.size(); }

    Id constant(Matrix v) { return push(std::move(v), false, {}); }

    // Bind a Parameter as a leaf; repeated binds of the same Parameter in one
    // graph return the same node so gradients accumulate naturally.
    Id param(Parameter& p) {
        auto it = param_ids_.find(&p);
        if (it != param_ids_.end()) return it->second;
        Id id = push(p.value, true, {});
        param_ids_.emplace(&p, id);
        bindings_.push_back({&p, id});
        return id;
    }

    const Matrix& value(Id id) const { return nodes_[id].value; }
    const Matrix& grad(Id id) const { return nodes_[id].grad; }

    Id add(Id a, Id b) {
        check_same_shape(a, b, "add");
        Matrix out = nodes_[a].value;
        const Matrix& vb = nodes_[b].value;
        for (std::size_t k = 0; k < out.size(); ++k) out[k] += vb[k];
        return push(std::move(out), needs(a) || needs(b), [this, a, b](const Node& n) {
            accumulate(a, n.grad);
            accumulate(b, n.grad);
        });
    }

    Id sub(Id a, Id b) {
        check_same_shape(a, b, "sub");
        Matrix out = nodes_[a].value;
        const Matrix& vb = nodes_[b].value;
        for (std::size_t k = 0; k < out.size(); ++k) out[k] -= vb[k];
        return push(std::move(out), needs(a) || needs(b), [this, a, b](const Node& n) {
            accumulate(a, n.grad);
            if (needs(b)) {
                Matrix g = n.grad;
                for (std::size_t k = 0; k < g.size(); ++k) g[k] = -g[k];
                accumulate(b, g);
            }
        });
    }

    Id mul(Id a, Id b) {
        check_same_shape(a, b, "mul");
        Matrix out = nodes_[a].value;
        const Matrix& vb = nodes_[b].value;
        for (std::size_t k = 0; k < out.size(); ++k) out[k] *= vb[k];
        return push(std::move(out), needs(a) || needs(b), [this, a, b](const Node& n) {
            if (needs(a)) {
                Matrix g = n.grad;
                const Matrix& vb = nodes_[b].value;
                for (std::size_t k = 0; k < g.size(); ++k) g[k] *= vb[k];
                accumulate(a, g);
            }
            if (needs(b)) {
                Matrix g = n.grad;
                const Matrix& va = nodes_[a].value;
                for (std::size_t k = 0; k < g.size(); ++k) g[k] *= va[k];
                accumulate(b, g);
            }
        });
    }

    Id matmul(Id a, Id b) {
        Matrix out;
        matmul_into(nodes_[a].value, nodes_[b].value, out);
        return push(std::move(out), needs(a) || needs(b), [this, a, b](const Node& n) {
            if (needs(a)) add_a_bt(n.grad, nodes_[b].value, nodes_[a].grad);
            if (needs(b)) add_at_b(nodes_[a].value, n.grad, nodes_[b].grad);
        });
    }

    // a: [n x d], r: [1 x d]; out_ij = a_ij + r_j.
    Id add_rowvec(Id a, Id r) {
        check_rowvec(a, r, "add_rowvec");
        Matrix out = nodes_[a].value;
        const Matrix& vr = nodes_[r].value;
        const std::size_t n = out.rows(), d = out.cols();
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < d; ++j) out(i, j) += vr[j];
        return push(std::move(out), needs(a) || needs(r), [this, a, r](const Node& n_) {
            accumulate(a, n_.grad);
            if (needs(r)) {
                Matrix& gr = nodes_[r].grad;
                const std::size_t n = n_.grad.rows(), d = n_.grad.cols();
                for (std::size_t i = 0; i < n; ++i)
                    for (std::size_t j = 0; j < d; ++j) gr[j] += n_.grad(i, j);
            }
        });
    }

    // a: [n x d], r: [1 x d]; out_ij = a_ij * r_j.
    Id mul_rowvec(Id a, Id r) {
        check_rowvec(a, r, "mul_rowvec");
        Matrix out = nodes_[a].value;
        const Matrix& vr = nodes_[r].value;
        const std::size_t n = out.rows(), d = out.cols();
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < d; ++j) out(i, j) *= vr[j];
        return push(std::move(out), needs(a) || needs(r), [this, a, r](const Node& n_) {
            const std::size_t n = n_.grad.rows(), d = n_.grad.cols();
            if (needs(a)) {
                Matrix g = n_.grad;
                const Matrix& vr = nodes_[r].value;
                for (std::size_t i = 0; i < n; ++i)
                    for (std::size_t j = 0; j < d; ++j) g(i, j) *= vr[j];
                accumulate(a, g);
            }
            if (needs(r)) {
                Matrix& gr = nodes_[r].grad;
                const Matrix& va = nodes_[a].value;
                for (std::size_t i = 0; i < n; ++i)
                    for (std::size_t j = 0; j < d; ++j) gr[j] += n_.grad(i, j) * va(i, j);
            }
        });
    }

    // a: [n x d], c: [n x 1]; out_ij = a_ij + c_i.
    Id add_colvec(Id a, Id c) {
        check_colvec(a, c, "add_colvec");
        Matrix out = nodes_[a].value;
        const Matrix& vc = nodes_[c].value;
        const std::size_t n = out.rows(), d = out.cols();
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < d; ++j) out(i, j) += vc[i];
        return push(std::move(out), needs(a) || needs(c), [this, a, c](const Node& n_) {
            accumulate(a, n_.grad);
            if (needs(c)) {
                Matrix& gc = nodes_[c].grad;
                const std::size_t n = n_.grad.rows(), d = n_.grad.cols();
                for (std::size_t i = 0; i < n; ++i)
                    for (std::size_t j = 0; j < d; ++j) gc[i] += n_.grad(i, j);
            }
        });
    }

    // a: [n x d], c: [n x 1]; out_ij = a_ij * c_i.
    Id mul_colvec(Id a, Id c) {
        check_colvec(a, c, "mul_colvec");
        Matrix out = nodes_[a].value;
        const Matrix& vc = nodes_[c].value;
        const std::size_t n = out.rows(), d = out.cols();
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < d; ++j) out(i, j) *= vc[i];
        return push(std::move(out), needs(a) || needs(c), [this, a, c](const Node& n_) {
            const std::size_t n = n_.grad.rows(), d = n_.grad.cols();
            if (needs(a)) {
                Matrix g = n_.grad;
                const Matrix& vc = nodes_[c].value;
                for (std::size_t i = 0; i < n; ++i)
                    for (std::size_t j = 0; j < d; ++j) g(i, j) *= vc[i];
                accumulate(a, g);
            }
            if (needs(c)) {
                Matrix& gc = nodes_[c].grad;
                const Matrix& va = nodes_[a].value;
                for (std::size_t i = 0; i < n; ++i) {
                    double s = 0.0;
                    for (std::size_t j = 0; j < d; ++j) s += n_.grad(i, j) * va(i, j);
                    gc[i] += s;
                }
            }
        });
    }

    Id scale(Id a, double c) {
        Matrix out = nodes_[a].value;
        for (std::size_t k = 0; k < out.size(); ++k) out[k] *= c;
        return push(std::move(out), needs(a), [this, a, c](const Node& n) {
            if (!needs(a)) return;
            Matrix g = n.grad;
            for (std::size_t k = 0; k < g.size(); ++k) g[k] *= c;
            accumulate(a, g);
        });
    }

    Id add_scalar(Id a, double c) {
        Matrix out = nodes_[a].value;
        for (std::size_t k = 0; k < out.size(); ++k) out[k] += c;
        return push(std::move(out), needs(a),
                    [this, a](const Node& n) { accumulate(a, n.grad); });
    }

    Id neg(Id a) { return scale(a, -1.0); }

    Id exp(Id a) {
        Matrix out = nodes_[a].value;
        for (std::size_t k = 0; k < out.size(); ++k) out[k] = std::exp(out[k]);
        Id id = push(std::move(out), needs(a), {});
        nodes_[id].backward = [this, a, id](const Node& n) {
            if (!needs(a)) return;
            Matrix g = n.grad;
            const Matrix& y = nodes_[id].value;
            for (std::size_t k = 0; k < g.size(); ++k) g[k] *= y[k];
            accumulate(a, g);
        };
        return id;
    }

    Id log(Id a) {
        Matrix out = nodes_[a].value;
        for (std::size_t k = 0; k < out.size(); ++k) out[k] = std::log(out[k]);
        return push(std::move(out), needs(a), [this, a](const Node& n) {
            if (!needs(a)) return;
            Matrix g = n.grad;
            const Matrix& va = nodes_[a].value;
            for (std::size_t k = 0; k < g.size(); ++k) g[k] /= va[k];
            accumulate(a, g);
        });
    }

    Id square(Id a) {
        Matrix out = nodes_[a].value;
        for (std::size_t k = 0; k < out.size(); ++k) out[k] *= out[k];
        return push(std::move(out), needs(a), [this, a](const Node& n) {
            if (!needs(a)) return;
            Matrix g = n.grad;
            const Matrix& va = nodes_[a].value;
            for (std::size_t k = 0; k < g.size(); ++k) g[k] *= 2.0 * va[k];
            accumulate(a, g);
        });
    }

    static constexpr double kSeluLambda = 1.0507009873554804934193349852946;
    static constexpr double kSeluAlpha = 1.6732632423543772848170429916717;

    Id selu(Id a) {
        Matrix out = nodes_[a].value;
        for (std::size_t k = 0; k < out.size(); ++k) {
            const double x = out[k];
            out[k] = x > 0.0 ? kSeluLambda * x : kSeluLambda * kSeluAlpha * std::expm1(x);
        }
        return push(std::move(out), needs(a), [this, a](const Node& n) {
            if (!needs(a)) return;
            Matrix g = n.grad;
            const Matrix& va = nodes_[a].value;
            for (std::size_t k = 0; k < g.size(); ++k) {
                const double x = va[k];
                g[k] *= x > 0.0 ? kSeluLambda : kSeluLambda * kSeluAlpha * std::exp(x);
            }
            accumulate(a, g);
        });
    }

    Id relu(Id a) {
        Matrix out = nodes_[a].value;
        for (std::size_t k = 0; k < out.size(); ++k) out[k] = out[k] > 0.0 ? out[k] : 0.0;
        return push(std::move(out), needs(a), [this, a](const Node& n) {
            if (!needs(a)) return;
            Matrix g = n.grad;
            const Matrix& va = nodes_[a].value;
            for (std::size_t k = 0; k < g.size(); ++k)
                if (va[k] <= 0.0) g[k] = 0.0;
            accumulate(a, g);
        });
    }

    // Exact GELU: x * Phi(x) with Phi the standard normal CDF.
    Id gelu(Id a) {
        Matrix out = nodes_[a].value;
        for (std::size_t k = 0; k < out.size(); ++k) out[k] *= normal_cdf(out[k]);
        return push(std::move(out), needs(a), [this, a](const Node& n) {
            if (!needs(a)) return;
            Matrix g = n.grad;
            const Matrix& va = nodes_[a].value;
            for (std::size_t k = 0; k < g.size(); ++k) {
                const double x = va[k];
                g[k] *= normal_cdf(x) + x * normal_pdf(x);
            }
            accumulate(a, g);
        });
    }

    // Clamp values; gradient passes through unchanged (straight-through), so
    // clamped parameters keep receiving signal.
    Id clamp(Id a, double lo, double hi) {
        Matrix out = nodes_[a].value;
        for (std::size_t k = 0; k < out.size(); ++k)
            out[k] = out[k] < lo ? lo : (out[k] > hi ? hi : out[k]);
        return push(std::move(out), needs(a),
                    [this, a](const Node& n) { accumulate(a, n.grad); });
    }

    Id sum_all(Id a) {
        double s = 0.0;
        const Matrix& va = nodes_[a].value;
        for (std::size_t k = 0; k < va.size(); ++k) s += va[k];
        Matrix out(1, 1);
        out[0] = s;
        return push(std::move(out), needs(a), [this, a](const Node& n) {
            if (!needs(a)) return;
            Matrix g(nodes_[a].value.rows(), nodes_[a].value.cols(), n.grad[0]);
            accumulate(a, g);
        });
    }

    Id mean_all(Id a) {
        const double inv = 1.0 / static_cast<double>(nodes_[a].value.size());
        return scale(sum_all(a), inv);
    }

    // Row-wise sum: [n x d] -> [n x 1].
    Id sum_cols(Id a) {
        const Matrix& va = nodes_[a].value;
        Matrix out(va.rows(), 1);
        for (std::size_t i = 0; i < va.rows(); ++i) {
            double s = 0.0;
            for (std::size_t j = 0; j < va.cols(); ++j) s += va(i, j);
            out[i] = s;
        }
        return push(std::move(out), needs(a), [this, a](const Node& n) {
            if (!needs(a)) return;
            const std::size_t rows = nodes_[a].value.rows(), cols = nodes_[a].value.cols();
            Matrix g(rows, cols);
            for (std::size_t i = 0; i < rows; ++i)
                for (std::size_t j = 0; j < cols; ++j) g(i, j) = n.grad[i];
            accumulate(a, g);
        });
    }

    Id concat_cols(const std::vector<Id>& parts) {
        if (parts.empty()) throw ContractError("concat_cols: no inputs");
        const std::size_t n = nodes_[parts[0]].value.rows();
        std::size_t total = 0;
        bool any_grad = false;
        for (Id p : parts) {
            if (nodes_[p].value.rows() != n) throw ContractError("concat_cols: row mismatch");
            total += nodes_[p].value.cols();
            any_grad = any_grad || needs(p);
        }
        Matrix out(n, total);
        std::size_t off = 0;
        for (Id p : parts) {
            const Matrix& v = nodes_[p].value;
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < v.cols(); ++j) out(i, off + j) = v(i, j);
            off += v.cols();
        }
        return push(std::move(out), any_grad, [this, parts](const Node& n_) {
            std::size_t off = 0;
            for (Id p : parts) {
                const std::size_t cols = nodes_[p].value.cols();
                if (needs(p)) {
                    Matrix g(nodes_[p].value.rows(), cols);
                    for (std::size_t i = 0; i < g.rows(); ++i)
                        for (std::size_t j = 0; j < cols; ++j) g(i, j) = n_.grad(i, off + j);
                    accumulate(p, g);
                }
                off += cols;
            }
        });
    }

    // Columns [j0, j1).
    Id slice_cols(Id a, std::size_t j0, std::size_t j1) {
        const Matrix& va = nodes_[a].value;
        if (j0 > j1 || j1 > va.cols()) throw ContractError("slice_cols: bad range");
        Matrix out(va.rows(), j1 - j0);
        for (std::size_t i = 0; i < va.rows(); ++i)
            for (std::size_t j = j0; j < j1; ++j) out(i, j - j0) = va(i, j);
        return push(std::move(out), needs(a), [this, a, j0, j1](const Node& n) {
            if (!needs(a)) return;
            Matrix g(nodes_[a].value.rows(), nodes_[a].value.cols());
            for (std::size_t i = 0; i < g.rows(); ++i)
                for (std::size_t j = j0; j < j1; ++j) g(i, j) = n.grad(i, j - j0);
            accumulate(a, g);
        });
    }

    // Row-wise log-sum-exp: [n x K] -> [n x 1], max-shifted for stability.
    Id logsumexp_cols(Id a) {
        const Matrix& va = nodes_[a].value;
        Matrix out(va.rows(), 1);
        for (std::size_t i = 0; i < va.rows(); ++i) {
            double m = -std::numeric_limits<double>::infinity();
            for (std::size_t j = 0; j < va.cols(); ++j) m = std::max(m, va(i, j));
            double s = 0.0;
            for (std::size_t j = 0; j < va.cols(); ++j) s += std::exp(va(i, j) - m);
            out[i] = m + std::log(s);
        }
        Id id = push(std::move(out), needs(a), {});
        nodes_[id].backward = [this, a, id](const Node& n) {
            if (!needs(a)) return;
            const Matrix& va = nodes_[a].value;
            const Matrix& y = nodes_[id].value;
            Matrix g(va.rows(), va.cols());
            for (std::size_t i = 0; i < va.rows(); ++i)
                for (std::size_t j = 0; j < va.cols(); ++j)
                    g(i, j) = n.grad[i] * std::exp(va(i, j) - y[i]);
            accumulate(a, g);
        };
        return id;
    }

    // Reverse sweep from a scalar root; then copy gradients to bound Parameters.
    void backward(Id root) {
        Node& r = nodes_[root];
        if (r.value.size() != 1) throw ContractError("backward: root must be 1x1");
        for (Node& n : nodes_) {
            n.grad = Matrix(n.value.rows(), n.value.cols());
        }
        r.grad[0] = 1.0;
        for (std::size_t i = nodes_.size(); i-- > 0;) {
            if (nodes_[i].backward && nodes_[i].needs_grad) nodes_[i].backward(nodes_[i]);
        }
        for (const auto& [p, id] : bindings_) p->grad = nodes_[id].grad;
    }

private:
    struct Node {
        Matrix value;
        Matrix grad;
        bool needs_grad = false;
        std::function<void(const Node&)> backward;
    };

    static double normal_cdf(double x) { return 0.5 * std::erfc(-x * 0.7071067811865475244); }
    static double normal_pdf(double x) {
        return 0.3989422804014326779 * std::exp(-0.5 * x * x);
    }

    bool needs(Id id) const { return nodes_[id].needs_grad; }

    void accumulate(Id id, const Matrix& g) {
        if (!needs(id)) return;
        Matrix& dst = nodes_[id].grad;
        for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += g[k];
    }

    void check_same_shape(Id a, Id b, const char* op) const {
        if (!nodes_[a].value.same_shape(nodes_[b].value)) {
            throw ContractError(std::string(op) + ": shape mismatch " +
                                nodes_[a].value.shape_str() + " vs " +
                                nodes_[b].value.shape_str());
        }
    }
    void check_rowvec(Id a, Id r, const char* op) const {
        if (nodes_[r].value.rows() != 1 || nodes_[r].value.cols() != nodes_[a].value.cols()) {
            throw ContractError(std::string(op) + ": expected [1 x " +
                                std::to_string(nodes_[a].value.cols()) + "], got " +
                                nodes_[r].value.shape_str());
        }
    }
    void check_colvec(Id a, Id c, const char* op) const {
        if (nodes_[c].value.cols() != 1 || nodes_[c].value.rows() != nodes_[a].value.rows()) {
            throw ContractError(std::string(op) + ": expected [" +
                                std::to_string(nodes_[a].value.rows()) + " x 1], got " +
                                nodes_[c].value.shape_str());
        }
    }

    Id push(Matrix v, bool needs_grad, std::function<void(const Node&)> back) {
        nodes_.push_back(Node{std::move(v), Matrix(), needs_grad, std::move(back)});
        return nodes_.size() - 1;
    }

    std::vector<Node> nodes_;
    std::vector<std::pair<Parameter*, Id>> bindings_;
    std::unordered_map<Parameter*, Id> param_ids_;
};

}  // namespace lcfm
