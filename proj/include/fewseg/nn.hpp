#pragma once

#include <Eigen/Dense>

#include <functional>
#include <memory>
#include <vector>

namespace fewseg::nn {

using Mat = Eigen::MatrixXd;

class Node;
using Tensor = std::shared_ptr<Node>;

// One node of the computation graph. Values are dense double matrices;
// token grids are stored row-per-token. Gradients are only materialized
// for subgraphs that reach a grad-enabled leaf.
class Node {
public:
    Mat value;
    Mat grad;
    bool requires_grad = false;
    bool grad_ready = false; // grad matrix sized and zeroed for current pass
    std::vector<Tensor> parents;
    // Pulls this->grad into the parents' grads.
    std::function<void(Node&)> backprop;

    explicit Node(Mat v, bool rg = false) : value(std::move(v)), requires_grad(rg) {}

    void ensure_grad() {
        if (!grad_ready) {
            grad = Mat::Zero(value.rows(), value.cols());
            grad_ready = true;
        }
    }
};

Tensor constant(Mat v);
Tensor leaf(Mat v); // grad-enabled leaf (trainable parameter)

// Reverse-mode sweep from a 1x1 root. Accumulates into leaf grads.
void backward(const Tensor& root);

// elementwise / structural ops
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor cmul(const Tensor& a, const Tensor& b);
Tensor cdiv(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor add_scalar(const Tensor& a, double s);
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor block(const Tensor& a, int i0, int j0, int rows, int cols);
Tensor vconcat(const std::vector<Tensor>& parts);
Tensor hconcat(const std::vector<Tensor>& parts);
Tensor row_broadcast_add(const Tensor& a, const Tensor& row);
Tensor detach(const Tensor& a);

// nonlinearities
Tensor relu(const Tensor& a);
Tensor gelu(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor softmax_rows(const Tensor& a);
Tensor layernorm_rows(const Tensor& a, const Tensor& gamma, const Tensor& beta,
                      double eps = 1e-6);

// reductions
Tensor sum_all(const Tensor& a);
Tensor mean_all(const Tensor& a);

// mean over all entries of BCE(sigmoid(logits), targets); numerically stable
Tensor bce_with_logits_mean(const Tensor& logits, const Mat& targets);

// Bilinear upsampling of a (h*w) x c token grid to (h*f * w*f) x c,
// half-pixel-center alignment. A linear op; backward is the transpose scatter.
Tensor upsample_bilinear(const Tensor& tokens, int h, int w, int factor);

// Adam over a flat list of parameter matrices. Decoupled weight decay
// (AdamW style) when weight_decay > 0.
class Adam {
public:
    Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8,
         double weight_decay = 0.0)
        : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps), decay_(weight_decay) {}

    // params[i] is updated in place with grads[i]
    void step(const std::vector<Mat*>& params, const std::vector<const Mat*>& grads);

private:
    double lr_, beta1_, beta2_, eps_, decay_;
    long t_ = 0;
    std::vector<Mat> m_, v_;
};

} // namespace fewseg::nn
