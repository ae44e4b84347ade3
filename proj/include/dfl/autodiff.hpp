#pragma once

#include <deque>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "dfl/tensor.hpp"

namespace dfl {

class Tape;

// Handle to a value recorded on a Tape. Cheap to copy; valid while the tape lives.
struct Var {
    Tape* tape = nullptr;
    int id = -1;

    const Tensor& value() const;
    const Shape& shape() const { return value().shape(); }
    bool valid() const { return tape != nullptr && id >= 0; }
};

// Reverse-mode tape. Nodes are appended in evaluation order, so replaying
// them backwards is a valid topological order.
//
// Gradient contract: leaf gradients accumulate across backward() calls until
// zero_grad(); interior gradients are recomputed on every backward().
class Tape {
public:
    using BackwardFn = std::function<void(Tape&, const Tensor& out_grad)>;

    Tape();
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var leaf(Tensor value, bool requires_grad);
    Var constant(Tensor value) { return leaf(std::move(value), false); }

    // Records an op output. The node requires grad iff any input does; the
    // backward function is dropped otherwise.
    Var record(Tensor value, const std::vector<Var>& inputs, BackwardFn backward, const char* op_name);

    const Tensor& value(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }
    bool requires_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].requires_grad; }
    const char* op_name(int id) const { return nodes_[static_cast<std::size_t>(id)].op; }

    // Gradient buffer for `id`, allocated as zeros on first use.
    Tensor& grad_buffer(int id);
    // Gradient if one was produced; a zero tensor of the right shape otherwise.
    Tensor grad(Var v) const;

    void backward(Var loss);
    void zero_grad();

    std::size_t size() const { return nodes_.size(); }

    void set_check_finite(bool on) { check_finite_ = on; }
    bool check_finite() const { return check_finite_; }

private:
    struct Node {
        Tensor value;
        Tensor grad;
        bool requires_grad = false;
        bool is_leaf = true;
        const char* op = "leaf";
        BackwardFn backward;
    };

    std::deque<Node> nodes_;
    bool check_finite_;
};

// ---------------------------------------------------------------------------
// Differentiable ops. Feature maps are [C,H,W]; matrices are [R,C].

// Cross-correlation. `input` is [C,H,W] or [B,C,H,W]; weight is [Co,C,kh,kw].
Var conv2d(Var input, Var weight, std::optional<Var> bias, int stride, int padding);

Var matmul(Var a, Var b);
Var transpose(Var a);

// Row-wise softmax with max subtraction.
Var softmax_rows(Var x);

Var relu(Var x);
Var tanh(Var x);
Var sigmoid(Var x);
Var scale(Var x, double factor);
// Clamp to [lo, hi] with subgradient 1 inside and 0 outside.
Var clamp(Var x, double lo, double hi);

// Binary ops: equal shapes, or a [1,H,W] map broadcast across the channels
// of a [C,H,W] operand (either side).
Var add(Var a, Var b);
Var mul(Var a, Var b);

inline constexpr double kCosineEps = 1e-8;

// Per-position cosine similarity across channels: dot / (|a||b| + 1e-8).
// `b` is [C,H,W] or a single [C] vector compared against every position.
Var cosine_per_position(Var a, Var b);

// Adaptive average pooling of [C,H,W] to [C,out_h,out_w].
Var avg_pool(Var x, std::size_t out_h, std::size_t out_w);

Var concat_channels(const std::vector<Var>& xs);
Var slice_channels(Var x, std::size_t begin, std::size_t count);

Var reshape(Var x, Shape shape);
Var sum(Var x);
Var mean(Var x);

// Zero padding on the bottom/right edges of a [C,H,W] map.
Var pad_bottom_right(Var x, std::size_t out_h, std::size_t out_w);
// Nearest-neighbour upsampling by an integer factor.
Var upsample_nearest(Var x, std::size_t factor);
// Sum over channels: [C,H,W] -> [1,H,W].
Var channel_sum(Var x);
// [1, H*s, W*s] -> [s*s, H, W]; channel j = row-major offset inside each s x s block.
Var space_to_depth(Var x, std::size_t block);

// sum_k BCE(sigmoid(logits_k), targets_k), in the stable logit form.
Var bce_with_logits_sum(Var logits, const Tensor& targets);

// Value copy with no gradient path.
Var detach(Var x);

}  // namespace dfl
