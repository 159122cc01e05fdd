#pragma once

// Tape-based reverse-mode differentiation over dense double matrices.
//
// A Tape records every operation applied to Vars. Parameters enter as leaves
// that reference external storage (deduplicated by address, so tied weights
// share one leaf). After backward(), gradients of parameter leaves are read
// back with param_grad(). A tape is single-use and single-threaded; run
// independent tapes on independent threads.

#include "ppad/kernels.hpp"
#include "ppad/tensor.hpp"

#include <deque>
#include <functional>
#include <span>
#include <unordered_map>
#include <vector>

namespace ppad::ad {

class Tape;

class Var {
public:
    Var() = default;

    bool valid() const { return tape_ != nullptr; }
    Tape* tape() const { return tape_; }
    int id() const { return id_; }
    const Mat& value() const;
    int rows() const { return value().rows(); }
    int cols() const { return value().cols(); }

private:
    friend class Tape;
    Var(Tape* t, int id) : tape_(t), id_(id) {}
    Tape* tape_ = nullptr;
    int id_ = -1;
};

/// Row-major [rows x cols] flags, nonzero = attention forbidden.
using BlockMask = std::vector<unsigned char>;

class Tape {
public:
    using Backward = std::function<void(Tape&, int self)>;

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var constant(Mat m);
    /// Leaf bound to external parameter storage; the storage must outlive the tape.
    Var param(const Mat& m);

    const Mat& value(int id) const;
    const Mat& value(Var v) const { return value(v.id()); }
    /// Empty matrix when no gradient reached the node.
    const Mat& grad(Var v) const { return nodes_[v.id()].grad; }
    bool requires_grad(int id) const { return nodes_[id].requires_grad; }

    /// Reverse sweep from a 1x1 node.
    void backward(Var loss);

    /// Gradient w.r.t. a parameter leaf; zeros when the parameter was unused.
    Mat param_grad(const Mat& param) const;

    std::size_t node_count() const { return nodes_.size(); }

    // Op-author interface.
    Var push(Mat value, std::span<const Var> inputs, Backward back);
    Mat& grad_buffer(int id);
    const Mat& out_grad(int id) const { return nodes_[id].grad; }

private:
    struct Node {
        Mat value;
        const Mat* external = nullptr;
        Mat grad;
        Backward back;
        bool requires_grad = false;
    };
    std::deque<Node> nodes_;
    std::unordered_map<const Mat*, int> param_index_;
};

// Linear algebra
Var matmul(Var a, Var b);    // a * b
Var matmul_nt(Var a, Var b); // a * b^T

// Elementwise
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double s);
Var add_row(Var a, Var row); // broadcast a 1 x n row over every row of a
Var tanh(Var a);

// Structure
Var slice_cols(Var a, int c0, int c1);
Var slice_rows(Var a, int r0, int r1);
Var gather_rows(Var a, std::vector<int> rows);
Var concat_cols(std::span<const Var> parts);
Var concat_rows(std::span<const Var> parts);
Var reshape(Var a, int rows, int cols);
Var repeat_each_row(Var a, int times); // [r x c] -> [r*times x c], row i repeated consecutively
Var broadcast_rows(Var row, int n);    // [1 x c] -> [n x c]

// Reductions over rows, producing 1 x cols
Var sum_rows(Var a);
Var mean_rows(Var a);
Var max_rows(Var a); // elementwise max; gradient routed to the first maximal row
Var cumsum_rows(Var a);

/// Row softmax where blocked entries get probability 0. A row with every
/// entry blocked is all zeros. `mask` may be null (nothing blocked).
Var masked_softmax(Var a, const BlockMask* mask);
/// Zeroes the flagged rows (flag nonzero = zero the row).
Var zero_rows(Var a, std::vector<unsigned char> flags);

/// Bilinear sampling of grid [H*W x C] at points [P x 2] -> [P x C],
/// differentiable in both the grid features and the sample locations.
Var bilinear_sample(Var grid, Var points, const kernels::GridMeta& meta);
/// out[r] = sum_p w(r, p) * s(r*P + p, :)  for w [R x P], s [R*P x C].
Var group_weighted_sum(Var w, Var s);

/// Scalar node whose value and input gradients were computed together by the
/// caller; backward scales the stored gradients by the incoming seed.
Var scalar_with_grads(std::span<const Var> inputs, double value, std::vector<Mat> grads);

Var sum_all(Var a);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(double s, Var a) { return scale(a, s); }

} // namespace ppad::ad
