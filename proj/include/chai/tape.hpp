#ifndef CHAI_TAPE_HPP
#define CHAI_TAPE_HPP

#include <cstddef>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "ops.hpp"
#include "params.hpp"

namespace chai {

/// Handle to a value recorded on a Tape.
struct Var {
    std::size_t id;
};

/**
 * Reverse-mode recorder over a fixed set of primitives.
 *
 * Forward calls compute values eagerly and append a node; `backward` walks
 * the nodes in reverse once and then marks the tape consumed. Parameters are
 * referenced, not copied, so the ParamSet must outlive the tape and stay
 * unchanged until backward has run.
 */
template<typename T>
class Tape {
public:
    explicit Tape(const ParamSet<T>* params = nullptr) : params_(params) {}

    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;
    Tape(Tape&&) noexcept = default;
    Tape& operator=(Tape&&) noexcept = default;

    /// Leaf value. Input gradients are only propagated when `requires_grad` is set.
    Var input(Tensor<T> value, bool requires_grad = false) {
        Node n;
        n.op = Op::input;
        n.value = std::move(value);
        n.needs_grad = requires_grad;
        return push(std::move(n));
    }

    Var param(const std::string& name) {
        if (params_ == nullptr) {
            throw UsageError("tape has no parameter set");
        }
        Node n;
        n.op = Op::param;
        n.ref = &params_->at(name);
        n.name = name;
        n.needs_grad = true;
        return push(std::move(n));
    }

    Var conv2d(Var x, Var kernel, Var bias, std::size_t stride, std::size_t pad) {
        const auto& in = value(x);
        const auto& k = value(kernel);
        const auto& b = value(bias);
        const auto g = conv_geometry(in, k, b, stride, pad);
        require_finite(in, "conv2d input");
        Node n;
        n.op = Op::conv2d;
        n.args = {x.id, kernel.id, bias.id};
        n.geometry = g;
        n.cols = detail::im2col(in, g);
        n.value = detail::conv2d_from_cols(n.cols, k, b, g);
        n.needs_grad = needs(x) || needs(kernel) || needs(bias);
        return push(std::move(n));
    }

    Var relu(Var x) {
        Node n;
        n.op = Op::relu;
        n.args = {x.id};
        n.value = relu_forward(value(x));
        n.needs_grad = needs(x);
        return push(std::move(n));
    }

    Var maxpool2d(Var x, std::size_t window, std::size_t stride) {
        auto pooled = maxpool2d_forward(value(x), window, stride);
        Node n;
        n.op = Op::maxpool2d;
        n.args = {x.id};
        n.value = std::move(pooled.output);
        n.argmax = std::move(pooled.argmax);
        n.needs_grad = needs(x);
        return push(std::move(n));
    }

    Var gap(Var x) {
        Node n;
        n.op = Op::gap;
        n.args = {x.id};
        n.value = gap_forward(value(x));
        n.needs_grad = needs(x);
        return push(std::move(n));
    }

    /// Scalar (shape [1]) sum of squared differences.
    Var squared_distance(Var a, Var b) {
        const auto& va = value(a);
        const auto& vb = value(b);
        if (va.shape() != vb.shape()) {
            throw InvalidInput("squared_distance shape mismatch");
        }
        Node n;
        n.op = Op::squared_distance;
        n.args = {a.id, b.id};
        n.value = Tensor<T>({1}, std::vector<T>{chai::squared_distance(va, vb)});
        n.needs_grad = needs(a) || needs(b);
        return push(std::move(n));
    }

    /// constant + sum_i coefficient_i * x_i over equally shaped operands.
    Var affine(const std::vector<std::pair<T, Var>>& terms, T constant = T{0}) {
        if (terms.empty()) {
            throw InvalidInput("affine needs at least one term");
        }
        Node n;
        n.op = Op::affine;
        n.value = Tensor<T>(value(terms.front().second).shape(), constant);
        for (const auto& [coef, v] : terms) {
            n.value.add_scaled(value(v), coef);
            n.terms.emplace_back(coef, v.id);
            n.needs_grad = n.needs_grad || needs(v);
        }
        return push(std::move(n));
    }

    const Tensor<T>& value(Var v) const {
        const auto& n = nodes_.at(v.id);
        return n.ref ? *n.ref : n.value;
    }

    std::size_t size() const { return nodes_.size(); }
    bool consumed() const { return consumed_; }

    struct Gradients {
        GradMap<T> params;
        std::vector<Tensor<T>> nodes;  ///< empty tensor where no gradient flows

        const Tensor<T>& of(Var v) const { return nodes.at(v.id); }
    };

    /// Seeds each listed node with its upstream gradient and back-propagates.
    Gradients backward(const std::vector<std::pair<Var, Tensor<T>>>& seeds) {
        Gradients out;
        out.nodes = run_backward(seeds);
        for (std::size_t i = 0; i < nodes_.size(); ++i) {
            if (nodes_[i].op == Op::param && !out.nodes[i].empty()) {
                auto [it, fresh] = out.params.try_emplace(nodes_[i].name, out.nodes[i]);
                if (!fresh) {
                    it->second.add_scaled(out.nodes[i]);
                }
            }
        }
        return out;
    }

    Gradients backward(Var root, Tensor<T> seed) { return backward({{root, std::move(seed)}}); }

    /// Like backward, but adds parameter gradients into `accum` and drops the rest.
    void backward_into(const std::vector<std::pair<Var, Tensor<T>>>& seeds, GradMap<T>& accum) {
        auto grads = run_backward(seeds);
        for (std::size_t i = 0; i < nodes_.size(); ++i) {
            if (nodes_[i].op == Op::param && !grads[i].empty()) {
                auto [it, fresh] = accum.try_emplace(nodes_[i].name, grads[i]);
                if (!fresh) {
                    it->second.add_scaled(grads[i]);
                }
            }
        }
    }

private:
    enum class Op { input, param, conv2d, relu, maxpool2d, gap, squared_distance, affine };

    struct Node {
        Op op{};
        Tensor<T> value;
        const Tensor<T>* ref = nullptr;
        std::string name;
        std::vector<std::size_t> args;
        bool needs_grad = false;
        ConvGeometry geometry{};
        std::vector<T> cols;
        std::vector<std::size_t> argmax;
        std::vector<std::pair<T, std::size_t>> terms;
    };

    Var push(Node n) {
        if (consumed_) {
            throw UsageError("cannot record on a consumed tape");
        }
        nodes_.push_back(std::move(n));
        return Var{nodes_.size() - 1};
    }

    bool needs(Var v) const { return nodes_.at(v.id).needs_grad; }

    static void accumulate(std::vector<Tensor<T>>& grads, std::size_t id, Tensor<T> g) {
        if (grads[id].empty()) {
            grads[id] = std::move(g);
        } else {
            grads[id].add_scaled(g);
        }
    }

    std::vector<Tensor<T>> run_backward(const std::vector<std::pair<Var, Tensor<T>>>& seeds) {
        if (consumed_) {
            throw UsageError("tape already consumed by a previous backward pass");
        }
        consumed_ = true;
        std::vector<Tensor<T>> grads(nodes_.size());
        for (const auto& [v, g] : seeds) {
            if (g.shape() != value(v).shape()) {
                throw InvalidInput("seed gradient shape " + shape_string(g.shape()) +
                                   " does not match node shape " + shape_string(value(v).shape()));
            }
            accumulate(grads, v.id, g);
        }
        for (std::size_t i = nodes_.size(); i-- > 0;) {
            auto& n = nodes_[i];
            if (grads[i].empty() || !n.needs_grad) {
                continue;
            }
            const Tensor<T>& g = grads[i];
            switch (n.op) {
            case Op::input:
            case Op::param:
                break;
            case Op::conv2d: {
                const std::size_t x = n.args[0], k = n.args[1], b = n.args[2];
                auto cg = conv2d_backward_from_cols(n.cols, value(Var{k}), g, n.geometry,
                                                    nodes_[x].needs_grad);
                if (nodes_[x].needs_grad) {
                    accumulate(grads, x, std::move(cg.input));
                }
                if (nodes_[k].needs_grad) {
                    accumulate(grads, k, std::move(cg.kernel));
                }
                if (nodes_[b].needs_grad) {
                    accumulate(grads, b, std::move(cg.bias));
                }
                n.cols.clear();
                n.cols.shrink_to_fit();
                break;
            }
            case Op::relu:
                accumulate(grads, n.args[0], relu_backward(value(Var{n.args[0]}), g));
                break;
            case Op::maxpool2d:
                accumulate(grads, n.args[0], maxpool2d_backward(value(Var{n.args[0]}).shape(), n.argmax, g));
                break;
            case Op::gap:
                accumulate(grads, n.args[0], gap_backward(value(Var{n.args[0]}).shape(), g));
                break;
            case Op::squared_distance: {
                const auto& a = value(Var{n.args[0]});
                const auto& b = value(Var{n.args[1]});
                Tensor<T> ga(a.shape());
                for (std::size_t j = 0; j < a.size(); ++j) {
                    ga[j] = T{2} * (a[j] - b[j]) * g[0];
                }
                Tensor<T> gb = ga;
                for (auto& v : gb.data()) {
                    v = -v;
                }
                accumulate(grads, n.args[0], std::move(ga));
                accumulate(grads, n.args[1], std::move(gb));
                break;
            }
            case Op::affine:
                for (const auto& [coef, id] : n.terms) {
                    Tensor<T> gi(g.shape());
                    gi.add_scaled(g, coef);
                    accumulate(grads, id, std::move(gi));
                }
                break;
            }
        }
        return grads;
    }

    const ParamSet<T>* params_;
    std::vector<Node> nodes_;
    bool consumed_ = false;
};

}

#endif
