#pragma once

#include "dca/mat.hpp"

#include <functional>
#include <string>
#include <vector>

namespace dca {

class Tape;

// Handle into a Tape. Cheap to copy; valid as long as the tape lives.
class Var {
public:
    Var() = default;

    const Mat& value() const;
    const Mat& grad() const;
    Eigen::Index rows() const { return value().rows(); }
    Eigen::Index cols() const { return value().cols(); }
    float scalar() const { return value()(0, 0); }
    bool valid() const { return tape_ != nullptr; }

private:
    friend class Tape;
    Var(Tape* t, int i) : tape_(t), idx_(i) {}
    Tape* tape_ = nullptr;
    int idx_ = -1;
};

// Reverse-mode autodiff over Mat values. Nodes are created in forward order;
// backward() sweeps them in reverse. Gradients are allocated lazily so nodes
// never reached by the backward sweep cost nothing.
class Tape {
public:
    struct Node {
        Mat val;
        Mat grad;                       // empty until first contribution
        std::function<void()> back;     // null for leaves / no-grad nodes
        bool needs_grad = false;
    };

    Var leaf(Mat value, bool needs_grad = false);

    // Seeds d(loss)=1 and accumulates into every reachable node.
    // `loss` must be 1x1.
    void backward(Var loss);

    size_t size() const { return nodes_.size(); }
    Node& node(int i) { return nodes_[i]; }
    const Node& node(int i) const { return nodes_[i]; }

    // -- op set ------------------------------------------------------------

    Var matmul(Var a, Var b);     // A  B
    Var matmul_nt(Var a, Var b);  // A  B^T
    Var transpose(Var a);
    Var add(Var a, Var b);              // same shape
    Var sub(Var a, Var b);
    Var add_rowvec(Var a, Var bias);    // bias is [1, n], broadcast over rows
    Var hadamard(Var a, Var b);
    Var scale(Var a, float s);
    Var mul_scalar(Var a, Var s);       // s is 1x1
    Var reciprocal_scalar(Var s);       // s is 1x1; y = 1/s
    Var square(Var a);
    Var sum_all(Var a);                 // -> 1x1
    Var mean_all(Var a);                // -> 1x1
    Var rowwise_dot(Var a, Var b);      // -> [B,1], d_i = a_i . b_i
    Var relu(Var a);
    Var gelu(Var a);                    // tanh approximation
    Var cosine(Var a);
    Var row_l2_normalize(Var a);
    Var layer_norm(Var x, Var gamma, Var beta, float eps = 1e-5f);
    Var embedding(Var table, const std::vector<int>& ids);
    Var concat_rows(Var a, Var b);

    // Mean over groups of `group` consecutive rows: [B*group, E] -> [B, E].
    Var mean_rows_grouped(Var x, int group);
    // Mean over the first lengths[i] rows of each group of `group` rows.
    Var masked_mean_rows(Var x, const std::vector<int>& lengths, int group);

    // Mean softmax cross-entropy of row i against class targets[i].
    Var cross_entropy_rows(Var logits, const std::vector<int>& targets);
    // Mean binary cross-entropy of logits [B,1] against labels in {0,1}.
    Var bce_with_logits(Var logits, const std::vector<int>& labels);

    // Scaled dot-product attention over per-sample token blocks.
    // q,k,v: [B*T, H*dh]; heads split along columns. If `lengths` is
    // non-empty, tokens at positions >= lengths[b] are masked out as keys.
    Var attention(Var q, Var k, Var v, int batch, int tokens, int heads,
                  const std::vector<int>& lengths = {});

    // Identity forward; backward multiplies the incoming gradient by -lambda.
    Var grad_reverse(Var x, float lambda);

private:
    Var push(Mat val, bool needs_grad, std::function<void()> back);
    Mat& grad_buf(int idx);  // allocates (zeros) on first use

    std::vector<Node> nodes_;
};

} // namespace dca
