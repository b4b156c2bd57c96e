#include "fewseg/nn.hpp"

#include "fewseg/common.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <unordered_set>

namespace fewseg::nn {

namespace {

bool any_grad(const std::vector<Tensor>& ps) {
    for (const auto& p : ps)
        if (p->requires_grad) return true;
    return false;
}

// Builds an op node. If no parent is grad-enabled the result is a plain
// constant, so frozen-only subgraphs carry no tape.
Tensor make_op(Mat value, std::vector<Tensor> parents,
               std::function<void(Node&)> backprop) {
    auto n = std::make_shared<Node>(std::move(value));
    if (any_grad(parents)) {
        n->requires_grad = true;
        n->parents = std::move(parents);
        n->backprop = std::move(backprop);
    }
    return n;
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a->value.rows() != b->value.rows() || a->value.cols() != b->value.cols())
        throw ShapeError(std::string(op) + ": operand shapes differ");
}

} // namespace

Tensor constant(Mat v) { return std::make_shared<Node>(std::move(v), false); }

Tensor leaf(Mat v) { return std::make_shared<Node>(std::move(v), true); }

void backward(const Tensor& root) {
    if (root->value.rows() != 1 || root->value.cols() != 1)
        throw ShapeError("backward: root must be a 1x1 scalar");
    // iterative post-order DFS
    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, std::size_t>> stack;
    stack.emplace_back(root.get(), 0);
    visited.insert(root.get());
    while (!stack.empty()) {
        auto& [node, idx] = stack.back();
        if (idx < node->parents.size()) {
            Node* p = node->parents[idx].get();
            ++idx;
            if (p->requires_grad && !visited.count(p)) {
                visited.insert(p);
                stack.emplace_back(p, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    for (Node* n : order) {
        n->grad_ready = false;
        n->ensure_grad();
    }
    root->grad(0, 0) = 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backprop) n->backprop(*n);
    }
}

Tensor add(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "add");
    return make_op(a->value + b->value, {a, b}, [](Node& n) {
        for (int i = 0; i < 2; ++i) {
            Node* p = n.parents[static_cast<std::size_t>(i)].get();
            if (!p->requires_grad) continue;
            p->ensure_grad();
            p->grad += n.grad;
        }
    });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "sub");
    return make_op(a->value - b->value, {a, b}, [](Node& n) {
        Node* pa = n.parents[0].get();
        Node* pb = n.parents[1].get();
        if (pa->requires_grad) { pa->ensure_grad(); pa->grad += n.grad; }
        if (pb->requires_grad) { pb->ensure_grad(); pb->grad -= n.grad; }
    });
}

Tensor cmul(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "cmul");
    return make_op(a->value.cwiseProduct(b->value), {a, b}, [](Node& n) {
        Node* pa = n.parents[0].get();
        Node* pb = n.parents[1].get();
        if (pa->requires_grad) {
            pa->ensure_grad();
            pa->grad += n.grad.cwiseProduct(pb->value);
        }
        if (pb->requires_grad) {
            pb->ensure_grad();
            pb->grad += n.grad.cwiseProduct(pa->value);
        }
    });
}

Tensor cdiv(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "cdiv");
    return make_op(a->value.cwiseQuotient(b->value), {a, b}, [](Node& n) {
        Node* pa = n.parents[0].get();
        Node* pb = n.parents[1].get();
        if (pa->requires_grad) {
            pa->ensure_grad();
            pa->grad += n.grad.cwiseQuotient(pb->value);
        }
        if (pb->requires_grad) {
            pb->ensure_grad();
            pb->grad -= n.grad.cwiseProduct(pa->value)
                             .cwiseQuotient(pb->value.cwiseProduct(pb->value));
        }
    });
}

Tensor scale(const Tensor& a, double s) {
    return make_op(a->value * s, {a}, [s](Node& n) {
        Node* p = n.parents[0].get();
        p->ensure_grad();
        p->grad += n.grad * s;
    });
}

Tensor add_scalar(const Tensor& a, double s) {
    return make_op(a->value.array() + s, {a}, [](Node& n) {
        Node* p = n.parents[0].get();
        p->ensure_grad();
        p->grad += n.grad;
    });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a->value.cols() != b->value.rows())
        throw ShapeError("matmul: inner dimensions differ");
    return make_op(a->value * b->value, {a, b}, [](Node& n) {
        Node* pa = n.parents[0].get();
        Node* pb = n.parents[1].get();
        if (pa->requires_grad) {
            pa->ensure_grad();
            pa->grad.noalias() += n.grad * pb->value.transpose();
        }
        if (pb->requires_grad) {
            pb->ensure_grad();
            pb->grad.noalias() += pa->value.transpose() * n.grad;
        }
    });
}

Tensor transpose(const Tensor& a) {
    return make_op(a->value.transpose(), {a}, [](Node& n) {
        Node* p = n.parents[0].get();
        p->ensure_grad();
        p->grad += n.grad.transpose();
    });
}

Tensor block(const Tensor& a, int i0, int j0, int rows, int cols) {
    if (i0 < 0 || j0 < 0 || i0 + rows > a->value.rows() || j0 + cols > a->value.cols())
        throw ShapeError("block: out of range");
    return make_op(a->value.block(i0, j0, rows, cols), {a},
                   [i0, j0, rows, cols](Node& n) {
                       Node* p = n.parents[0].get();
                       p->ensure_grad();
                       p->grad.block(i0, j0, rows, cols) += n.grad;
                   });
}

Tensor vconcat(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ShapeError("vconcat: empty");
    const auto cols = parts[0]->value.cols();
    long rows = 0;
    for (const auto& p : parts) {
        if (p->value.cols() != cols) throw ShapeError("vconcat: column mismatch");
        rows += p->value.rows();
    }
    Mat v(rows, cols);
    long r = 0;
    for (const auto& p : parts) {
        v.middleRows(r, p->value.rows()) = p->value;
        r += p->value.rows();
    }
    return make_op(std::move(v), parts, [](Node& n) {
        long r = 0;
        for (auto& pp : n.parents) {
            Node* p = pp.get();
            const long pr = p->value.rows();
            if (p->requires_grad) {
                p->ensure_grad();
                p->grad += n.grad.middleRows(r, pr);
            }
            r += pr;
        }
    });
}

Tensor hconcat(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ShapeError("hconcat: empty");
    const auto rows = parts[0]->value.rows();
    long cols = 0;
    for (const auto& p : parts) {
        if (p->value.rows() != rows) throw ShapeError("hconcat: row mismatch");
        cols += p->value.cols();
    }
    Mat v(rows, cols);
    long c = 0;
    for (const auto& p : parts) {
        v.middleCols(c, p->value.cols()) = p->value;
        c += p->value.cols();
    }
    return make_op(std::move(v), parts, [](Node& n) {
        long c = 0;
        for (auto& pp : n.parents) {
            Node* p = pp.get();
            const long pc = p->value.cols();
            if (p->requires_grad) {
                p->ensure_grad();
                p->grad += n.grad.middleCols(c, pc);
            }
            c += pc;
        }
    });
}

Tensor row_broadcast_add(const Tensor& a, const Tensor& row) {
    if (row->value.rows() != 1 || row->value.cols() != a->value.cols())
        throw ShapeError("row_broadcast_add: row shape mismatch");
    Mat v = a->value;
    v.rowwise() += row->value.row(0);
    return make_op(std::move(v), {a, row}, [](Node& n) {
        Node* pa = n.parents[0].get();
        Node* pr = n.parents[1].get();
        if (pa->requires_grad) { pa->ensure_grad(); pa->grad += n.grad; }
        if (pr->requires_grad) {
            pr->ensure_grad();
            pr->grad += n.grad.colwise().sum();
        }
    });
}

Tensor detach(const Tensor& a) { return constant(a->value); }

Tensor relu(const Tensor& a) {
    return make_op(a->value.cwiseMax(0.0), {a}, [](Node& n) {
        Node* p = n.parents[0].get();
        p->ensure_grad();
        p->grad += n.grad.cwiseProduct(
            (p->value.array() > 0.0).cast<double>().matrix());
    });
}

Tensor gelu(const Tensor& a) {
    // exact erf form
    Mat v = a->value.unaryExpr([](double x) {
        return 0.5 * x * (1.0 + std::erf(x * M_SQRT1_2));
    });
    return make_op(std::move(v), {a}, [](Node& n) {
        Node* p = n.parents[0].get();
        p->ensure_grad();
        Mat d = p->value.unaryExpr([](double x) {
            const double phi = std::exp(-0.5 * x * x) / std::sqrt(2.0 * M_PI);
            const double Phi = 0.5 * (1.0 + std::erf(x * M_SQRT1_2));
            return Phi + x * phi;
        });
        p->grad += n.grad.cwiseProduct(d);
    });
}

Tensor sigmoid(const Tensor& a) {
    Mat v = a->value.unaryExpr([](double x) {
        return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x))
                        : std::exp(x) / (1.0 + std::exp(x));
    });
    Mat saved = v;
    return make_op(std::move(v), {a}, [saved](Node& n) {
        Node* p = n.parents[0].get();
        p->ensure_grad();
        p->grad += n.grad.cwiseProduct(
            saved.cwiseProduct((1.0 - saved.array()).matrix()));
    });
}

Tensor softmax_rows(const Tensor& a) {
    Mat v(a->value.rows(), a->value.cols());
    for (long i = 0; i < a->value.rows(); ++i) {
        const double mx = a->value.row(i).maxCoeff();
        Eigen::RowVectorXd e = (a->value.row(i).array() - mx).exp();
        v.row(i) = e / e.sum();
    }
    Mat saved = v;
    return make_op(std::move(v), {a}, [saved](Node& n) {
        Node* p = n.parents[0].get();
        p->ensure_grad();
        for (long i = 0; i < saved.rows(); ++i) {
            const double dot = n.grad.row(i).dot(saved.row(i));
            p->grad.row(i) +=
                saved.row(i).cwiseProduct((n.grad.row(i).array() - dot).matrix());
        }
    });
}

Tensor layernorm_rows(const Tensor& a, const Tensor& gamma, const Tensor& beta,
                      double eps) {
    const long d = a->value.cols();
    if (gamma->value.rows() != 1 || gamma->value.cols() != d ||
        beta->value.rows() != 1 || beta->value.cols() != d)
        throw ShapeError("layernorm_rows: gamma/beta must be 1 x cols");
    Mat xhat(a->value.rows(), d);
    Eigen::VectorXd inv_std(a->value.rows());
    for (long i = 0; i < a->value.rows(); ++i) {
        const double mu = a->value.row(i).mean();
        Eigen::RowVectorXd c = a->value.row(i).array() - mu;
        const double var = c.squaredNorm() / static_cast<double>(d);
        const double is = 1.0 / std::sqrt(var + eps);
        inv_std(i) = is;
        xhat.row(i) = c * is;
    }
    Mat v = xhat;
    for (long i = 0; i < v.rows(); ++i)
        v.row(i) = v.row(i).cwiseProduct(gamma->value.row(0)) + beta->value.row(0);
    return make_op(std::move(v), {a, gamma, beta}, [xhat, inv_std, d](Node& n) {
        Node* pa = n.parents[0].get();
        Node* pg = n.parents[1].get();
        Node* pb = n.parents[2].get();
        if (pg->requires_grad) {
            pg->ensure_grad();
            pg->grad += n.grad.cwiseProduct(xhat).colwise().sum();
        }
        if (pb->requires_grad) {
            pb->ensure_grad();
            pb->grad += n.grad.colwise().sum();
        }
        if (pa->requires_grad) {
            pa->ensure_grad();
            const double dd = static_cast<double>(d);
            for (long i = 0; i < xhat.rows(); ++i) {
                Eigen::RowVectorXd dxhat =
                    n.grad.row(i).cwiseProduct(pg->value.row(0));
                const double s1 = dxhat.sum();
                const double s2 = dxhat.dot(xhat.row(i));
                pa->grad.row(i) +=
                    (inv_std(i) / dd) *
                    (dd * dxhat.array() - s1 - xhat.row(i).array() * s2).matrix();
            }
        }
    });
}

Tensor sum_all(const Tensor& a) {
    Mat v(1, 1);
    v(0, 0) = a->value.sum();
    return make_op(std::move(v), {a}, [](Node& n) {
        Node* p = n.parents[0].get();
        p->ensure_grad();
        p->grad.array() += n.grad(0, 0);
    });
}

Tensor mean_all(const Tensor& a) {
    const double inv = 1.0 / static_cast<double>(a->value.size());
    Mat v(1, 1);
    v(0, 0) = a->value.sum() * inv;
    return make_op(std::move(v), {a}, [inv](Node& n) {
        Node* p = n.parents[0].get();
        p->ensure_grad();
        p->grad.array() += n.grad(0, 0) * inv;
    });
}

Tensor bce_with_logits_mean(const Tensor& logits, const Mat& targets) {
    if (logits->value.rows() != targets.rows() || logits->value.cols() != targets.cols())
        throw ShapeError("bce_with_logits_mean: shape mismatch");
    const double inv = 1.0 / static_cast<double>(targets.size());
    double acc = 0.0;
    for (long j = 0; j < targets.cols(); ++j)
        for (long i = 0; i < targets.rows(); ++i) {
            const double x = logits->value(i, j);
            const double y = targets(i, j);
            acc += std::max(x, 0.0) - x * y + std::log1p(std::exp(-std::abs(x)));
        }
    Mat v(1, 1);
    v(0, 0) = acc * inv;
    return make_op(std::move(v), {logits}, [targets, inv](Node& n) {
        Node* p = n.parents[0].get();
        p->ensure_grad();
        const double g = n.grad(0, 0) * inv;
        Mat sig = p->value.unaryExpr([](double x) {
            return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x))
                            : std::exp(x) / (1.0 + std::exp(x));
        });
        p->grad += g * (sig - targets);
    });
}

namespace {

struct BilerpTap {
    int src;
    double w;
};

// 4 taps per output pixel, (h,w,factor) keyed cache
using BilerpTable = std::vector<std::array<BilerpTap, 4>>;

const BilerpTable& bilerp_table(int h, int w, int factor) {
    static std::map<std::tuple<int, int, int>, BilerpTable> cache;
    auto key = std::make_tuple(h, w, factor);
    auto it = cache.find(key);
    if (it != cache.end()) return it->second;

    const int H = h * factor, W = w * factor;
    BilerpTable tab(static_cast<std::size_t>(H) * W);
    const double inv_f = 1.0 / factor;
    for (int oy = 0; oy < H; ++oy) {
        const double sy = (oy + 0.5) * inv_f - 0.5;
        int y0 = static_cast<int>(std::floor(sy));
        double fy = sy - y0;
        if (y0 < 0) { y0 = 0; fy = 0.0; }
        int y1 = y0 + 1;
        if (y1 > h - 1) { y1 = h - 1; fy = 0.0; }
        for (int ox = 0; ox < W; ++ox) {
            const double sx = (ox + 0.5) * inv_f - 0.5;
            int x0 = static_cast<int>(std::floor(sx));
            double fx = sx - x0;
            if (x0 < 0) { x0 = 0; fx = 0.0; }
            int x1 = x0 + 1;
            if (x1 > w - 1) { x1 = w - 1; fx = 0.0; }
            auto& taps = tab[static_cast<std::size_t>(oy) * W + ox];
            taps[0] = {y0 * w + x0, (1 - fy) * (1 - fx)};
            taps[1] = {y0 * w + x1, (1 - fy) * fx};
            taps[2] = {y1 * w + x0, fy * (1 - fx)};
            taps[3] = {y1 * w + x1, fy * fx};
        }
    }
    return cache.emplace(key, std::move(tab)).first->second;
}

} // namespace

Tensor upsample_bilinear(const Tensor& tokens, int h, int w, int factor) {
    if (tokens->value.rows() != static_cast<long>(h) * w)
        throw ShapeError("upsample_bilinear: token count mismatch");
    if (factor < 1) throw ShapeError("upsample_bilinear: factor must be >= 1");
    const auto& tab = bilerp_table(h, w, factor);
    const long c = tokens->value.cols();
    Mat v(static_cast<long>(tab.size()), c);
    for (std::size_t o = 0; o < tab.size(); ++o) {
        Eigen::RowVectorXd acc = Eigen::RowVectorXd::Zero(c);
        for (const auto& t : tab[o]) acc += t.w * tokens->value.row(t.src);
        v.row(static_cast<long>(o)) = acc;
    }
    return make_op(std::move(v), {tokens}, [h, w, factor](Node& n) {
        Node* p = n.parents[0].get();
        p->ensure_grad();
        const auto& tab = bilerp_table(h, w, factor);
        for (std::size_t o = 0; o < tab.size(); ++o)
            for (const auto& t : tab[o])
                p->grad.row(t.src) += t.w * n.grad.row(static_cast<long>(o));
    });
}

void Adam::step(const std::vector<Mat*>& params, const std::vector<const Mat*>& grads) {
    if (params.size() != grads.size())
        throw ShapeError("Adam::step: params/grads size mismatch");
    if (m_.empty()) {
        m_.reserve(params.size());
        v_.reserve(params.size());
        for (auto* p : params) {
            m_.push_back(Mat::Zero(p->rows(), p->cols()));
            v_.push_back(Mat::Zero(p->rows(), p->cols()));
        }
    }
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
        Mat& p = *params[i];
        const Mat& g = *grads[i];
        m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * g;
        v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * g.cwiseProduct(g);
        Mat mhat = m_[i] / bc1;
        Mat vhat = v_[i] / bc2;
        p.array() -= lr_ * mhat.array() / (vhat.array().sqrt() + eps_);
        if (decay_ > 0.0) p.array() -= lr_ * decay_ * p.array();
    }
}

} // namespace fewseg::nn
