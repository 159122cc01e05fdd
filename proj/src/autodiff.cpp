#include "ppad/autodiff.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace ppad::ad {

const Mat& Var::value() const
{
    if (!tape_) throw std::logic_error("Var: not attached to a tape");
    return tape_->value(id_);
}

Var Tape::constant(Mat m)
{
    Node n;
    n.value = std::move(m);
    nodes_.push_back(std::move(n));
    return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Tape::param(const Mat& m)
{
    if (auto it = param_index_.find(&m); it != param_index_.end()) {
        return Var(this, it->second);
    }
    Node n;
    n.external = &m;
    n.requires_grad = true;
    nodes_.push_back(std::move(n));
    const int id = static_cast<int>(nodes_.size()) - 1;
    param_index_.emplace(&m, id);
    return Var(this, id);
}

const Mat& Tape::value(int id) const
{
    const Node& n = nodes_[id];
    return n.external ? *n.external : n.value;
}

Var Tape::push(Mat value, std::span<const Var> inputs, Backward back)
{
    Node n;
    n.value = std::move(value);
    for (const Var& v : inputs) {
        if (v.tape() != this) throw std::logic_error("Tape::push: input from another tape");
        if (nodes_[v.id()].requires_grad) n.requires_grad = true;
    }
    if (n.requires_grad) n.back = std::move(back);
    nodes_.push_back(std::move(n));
    return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Mat& Tape::grad_buffer(int id)
{
    Node& n = nodes_[id];
    if (n.grad.empty()) {
        const Mat& v = value(id);
        n.grad = Mat(v.rows(), v.cols());
    }
    return n.grad;
}

void Tape::backward(Var loss)
{
    const Mat& lv = value(loss);
    if (lv.rows() != 1 || lv.cols() != 1) {
        throw std::invalid_argument("Tape::backward: loss must be 1x1, got " + lv.shape_str());
    }
    grad_buffer(loss.id())(0, 0) += 1.0;
    for (int i = loss.id(); i >= 0; --i) {
        Node& n = nodes_[i];
        if (n.back && !n.grad.empty()) n.back(*this, i);
    }
}

Mat Tape::param_grad(const Mat& param) const
{
    auto it = param_index_.find(&param);
    if (it == param_index_.end() || nodes_[it->second].grad.empty()) {
        return Mat(param.rows(), param.cols());
    }
    return nodes_[it->second].grad;
}

namespace {

Tape& tape_of(std::initializer_list<Var> vs)
{
    Tape* t = nullptr;
    for (const Var& v : vs) {
        if (!v.valid()) throw std::invalid_argument("ad: invalid Var");
        if (t && v.tape() != t) throw std::invalid_argument("ad: Vars from different tapes");
        t = v.tape();
    }
    return *t;
}

void require_same_shape(const Mat& a, const Mat& b, const char* op)
{
    if (!a.same_shape(b)) {
        throw std::invalid_argument(std::string(op) + ": shape mismatch " + a.shape_str() + " vs " + b.shape_str());
    }
}

void axpy(Mat& dst, const Mat& src, double s = 1.0)
{
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += s * src[i];
}

} // namespace

Var matmul(Var a, Var b)
{
    Tape& t = tape_of({a, b});
    Mat out;
    kernels::gemm_nn(a.value(), b.value(), out);
    const int ia = a.id(), ib = b.id();
    const Var in[] = {a, b};
    return t.push(std::move(out), in, [ia, ib](Tape& tp, int self) {
        const Mat& g = tp.out_grad(self);
        if (tp.requires_grad(ia)) kernels::gemm_nt(g, tp.value(ib), tp.grad_buffer(ia), true);
        if (tp.requires_grad(ib)) kernels::gemm_tn(tp.value(ia), g, tp.grad_buffer(ib), true);
    });
}

Var matmul_nt(Var a, Var b)
{
    Tape& t = tape_of({a, b});
    Mat out;
    kernels::gemm_nt(a.value(), b.value(), out);
    const int ia = a.id(), ib = b.id();
    const Var in[] = {a, b};
    return t.push(std::move(out), in, [ia, ib](Tape& tp, int self) {
        const Mat& g = tp.out_grad(self);
        if (tp.requires_grad(ia)) kernels::gemm_nn(g, tp.value(ib), tp.grad_buffer(ia), true);
        if (tp.requires_grad(ib)) kernels::gemm_tn(g, tp.value(ia), tp.grad_buffer(ib), true);
    });
}

Var add(Var a, Var b)
{
    Tape& t = tape_of({a, b});
    require_same_shape(a.value(), b.value(), "add");
    Mat out = a.value();
    axpy(out, b.value());
    const int ia = a.id(), ib = b.id();
    const Var in[] = {a, b};
    return t.push(std::move(out), in, [ia, ib](Tape& tp, int self) {
        const Mat& g = tp.out_grad(self);
        if (tp.requires_grad(ia)) axpy(tp.grad_buffer(ia), g);
        if (tp.requires_grad(ib)) axpy(tp.grad_buffer(ib), g);
    });
}

Var sub(Var a, Var b)
{
    Tape& t = tape_of({a, b});
    require_same_shape(a.value(), b.value(), "sub");
    Mat out = a.value();
    axpy(out, b.value(), -1.0);
    const int ia = a.id(), ib = b.id();
    const Var in[] = {a, b};
    return t.push(std::move(out), in, [ia, ib](Tape& tp, int self) {
        const Mat& g = tp.out_grad(self);
        if (tp.requires_grad(ia)) axpy(tp.grad_buffer(ia), g);
        if (tp.requires_grad(ib)) axpy(tp.grad_buffer(ib), g, -1.0);
    });
}

Var mul(Var a, Var b)
{
    Tape& t = tape_of({a, b});
    require_same_shape(a.value(), b.value(), "mul");
    Mat out = a.value();
    const Mat& bv = b.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
    const int ia = a.id(), ib = b.id();
    const Var in[] = {a, b};
    return t.push(std::move(out), in, [ia, ib](Tape& tp, int self) {
        const Mat& g = tp.out_grad(self);
        if (tp.requires_grad(ia)) {
            Mat& ga = tp.grad_buffer(ia);
            const Mat& bv = tp.value(ib);
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
        }
        if (tp.requires_grad(ib)) {
            Mat& gb = tp.grad_buffer(ib);
            const Mat& av = tp.value(ia);
            for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
        }
    });
}

Var scale(Var a, double s)
{
    Tape& t = tape_of({a});
    Mat out = a.value();
    for (double& v : out.values()) v *= s;
    const int ia = a.id();
    const Var in[] = {a};
    return t.push(std::move(out), in, [ia, s](Tape& tp, int self) {
        axpy(tp.grad_buffer(ia), tp.out_grad(self), s);
    });
}

Var add_row(Var a, Var row)
{
    Tape& t = tape_of({a, row});
    const Mat& av = a.value();
    const Mat& rv = row.value();
    if (rv.rows() != 1 || rv.cols() != av.cols()) {
        throw std::invalid_argument("add_row: row " + rv.shape_str() + " vs " + av.shape_str());
    }
    Mat out = av;
    for (int r = 0; r < out.rows(); ++r)
        for (int c = 0; c < out.cols(); ++c) out(r, c) += rv(0, c);
    const int ia = a.id(), ib = row.id();
    const Var in[] = {a, row};
    return t.push(std::move(out), in, [ia, ib](Tape& tp, int self) {
        const Mat& g = tp.out_grad(self);
        if (tp.requires_grad(ia)) axpy(tp.grad_buffer(ia), g);
        if (tp.requires_grad(ib)) {
            Mat& gb = tp.grad_buffer(ib);
            for (int r = 0; r < g.rows(); ++r)
                for (int c = 0; c < g.cols(); ++c) gb(0, c) += g(r, c);
        }
    });
}

Var tanh(Var a)
{
    Tape& t = tape_of({a});
    Mat out = a.value();
    for (double& v : out.values()) v = std::tanh(v);
    const int ia = a.id();
    const Var in[] = {a};
    return t.push(std::move(out), in, [ia](Tape& tp, int self) {
        const Mat& g = tp.out_grad(self);
        const Mat& y = tp.value(self);
        Mat& ga = tp.grad_buffer(ia);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * (1.0 - y[i] * y[i]);
    });
}

Var slice_cols(Var a, int c0, int c1)
{
    Tape& t = tape_of({a});
    const Mat& av = a.value();
    if (c0 < 0 || c1 > av.cols() || c0 > c1) throw std::invalid_argument("slice_cols: bad range");
    Mat out(av.rows(), c1 - c0);
    for (int r = 0; r < av.rows(); ++r)
        for (int c = c0; c < c1; ++c) out(r, c - c0) = av(r, c);
    const int ia = a.id();
    const Var in[] = {a};
    return t.push(std::move(out), in, [ia, c0](Tape& tp, int self) {
        const Mat& g = tp.out_grad(self);
        Mat& ga = tp.grad_buffer(ia);
        for (int r = 0; r < g.rows(); ++r)
            for (int c = 0; c < g.cols(); ++c) ga(r, c + c0) += g(r, c);
    });
}

Var slice_rows(Var a, int r0, int r1)
{
    Tape& t = tape_of({a});
    const Mat& av = a.value();
    if (r0 < 0 || r1 > av.rows() || r0 > r1) throw std::invalid_argument("slice_rows: bad range");
    const auto first = av.values().begin() + static_cast<std::ptrdiff_t>(r0) * av.cols();
    const auto last = av.values().begin() + static_cast<std::ptrdiff_t>(r1) * av.cols();
    Mat out(r1 - r0, av.cols(), std::vector<double>(first, last));
    const int ia = a.id();
    const Var in[] = {a};
    return t.push(std::move(out), in, [ia, r0](Tape& tp, int self) {
        const Mat& g = tp.out_grad(self);
        Mat& ga = tp.grad_buffer(ia);
        const std::size_t off = static_cast<std::size_t>(r0) * g.cols();
        for (std::size_t i = 0; i < g.size(); ++i) ga[off + i] += g[i];
    });
}

Var gather_rows(Var a, std::vector<int> rows)
{
    Tape& t = tape_of({a});
    const Mat& av = a.value();
    Mat out(static_cast<int>(rows.size()), av.cols());
    for (int i = 0; i < out.rows(); ++i) {
        if (rows[i] < 0 || rows[i] >= av.rows()) throw std::invalid_argument("gather_rows: index out of range");
        for (int c = 0; c < av.cols(); ++c) out(i, c) = av(rows[i], c);
    }
    const int ia = a.id();
    const Var in[] = {a};
    return t.push(std::move(out), in, [ia, rows = std::move(rows)](Tape& tp, int self) {
        const Mat& g = tp.out_grad(self);
        Mat& ga = tp.grad_buffer(ia);
        for (int i = 0; i < g.rows(); ++i)
            for (int c = 0; c < g.cols(); ++c) ga(rows[i], c) += g(i, c);
    });
}

Var concat_cols(std::span<const Var> parts)
{
    if (parts.empty()) throw std::invalid_argument("concat_cols: no inputs");
    Tape& t = *parts[0].tape();
    const int rows = parts[0].rows();
    int cols = 0;
    std::vector<int> ids, offsets;
    for (const Var& p : parts) {
        if (p.rows() != rows) throw std::invalid_argument("concat_cols: row mismatch");
        ids.push_back(p.id());
        offsets.push_back(cols);
        cols += p.cols();
    }
    Mat out(rows, cols);
    for (std::size_t k = 0; k < parts.size(); ++k) {
        const Mat& pv = parts[k].value();
        for (int r = 0; r < rows; ++r)
            for (int c = 0; c < pv.cols(); ++c) out(r, offsets[k] + c) = pv(r, c);
    }
    return t.push(std::move(out), parts, [ids, offsets](Tape& tp, int self) {
        const Mat& g = tp.out_grad(self);
        for (std::size_t k = 0; k < ids.size(); ++k) {
            if (!tp.requires_grad(ids[k])) continue;
            Mat& gk = tp.grad_buffer(ids[k]);
            for (int r = 0; r < gk.rows(); ++r)
                for (int c = 0; c < gk.cols(); ++c) gk(r, c) += g(r, offsets[k] + c);
        }
    });
}

Var concat_rows(std::span<const Var> parts)
{
    if (parts.empty()) throw std::invalid_argument("concat_rows: no inputs");
    Tape& t = *parts[0].tape();
    const int cols = parts[0].cols();
    std::vector<int> ids;
    std::vector<double> data;
    int rows = 0;
    for (const Var& p : parts) {
        if (p.cols() != cols) throw std::invalid_argument("concat_rows: column mismatch");
        ids.push_back(p.id());
        data.insert(data.end(), p.value().values().begin(), p.value().values().end());
        rows += p.rows();
    }
    return t.push(Mat(rows, cols, std::move(data)), parts, [ids](Tape& tp, int self) {
        const Mat& g = tp.out_grad(self);
        std::size_t off = 0;
        for (int id : ids) {
            const std::size_t n = tp.value(id).size();
            if (tp.requires_grad(id)) {
                Mat& gk = tp.grad_buffer(id);
                for (std::size_t i = 0; i < n; ++i) gk[i] += g[off + i];
            }
            off += n;
        }
    });
}

Var reshape(Var a, int rows, int cols)
{
    Tape& t = tape_of({a});
    if (static_cast<std::size_t>(rows) * cols != a.value().size()) {
        throw std::invalid_argument("reshape: size mismatch");
    }
    Mat out(rows, cols, a.value().values());
    const int ia = a.id();
    const Var in[] = {a};
    return t.push(std::move(out), in, [ia](Tape& tp, int self) {
        axpy(tp.grad_buffer(ia), tp.out_grad(self));
    });
}

Var repeat_each_row(Var a, int times)
{
    Tape& t = tape_of({a});
    const Mat& av = a.value();
    Mat out(av.rows() * times, av.cols());
    for (int r = 0; r < av.rows(); ++r)
        for (int k = 0; k < times; ++k)
            for (int c = 0; c < av.cols(); ++c) out(r * times + k, c) = av(r, c);
    const int ia = a.id();
    const Var in[] = {a};
    return t.push(std::move(out), in, [ia, times](Tape& tp, int self) {
        const Mat& g = tp.out_grad(self);
        Mat& ga = tp.grad_buffer(ia);
        for (int r = 0; r < ga.rows(); ++r)
            for (int k = 0; k < times; ++k)
                for (int c = 0; c < ga.cols(); ++c) ga(r, c) += g(r * times + k, c);
    });
}

Var broadcast_rows(Var row, int n)
{
    if (row.rows() != 1) throw std::invalid_argument("broadcast_rows: expected a single row");
    return repeat_each_row(row, n);
}

Var sum_rows(Var a)
{
    Tape& t = tape_of({a});
    const Mat& av = a.value();
    Mat out(1, av.cols());
    for (int r = 0; r < av.rows(); ++r)
        for (int c = 0; c < av.cols(); ++c) out(0, c) += av(r, c);
    const int ia = a.id();
    const Var in[] = {a};
    return t.push(std::move(out), in, [ia](Tape& tp, int self) {
        const Mat& g = tp.out_grad(self);
        Mat& ga = tp.grad_buffer(ia);
        for (int r = 0; r < ga.rows(); ++r)
            for (int c = 0; c < ga.cols(); ++c) ga(r, c) += g(0, c);
    });
}

Var mean_rows(Var a)
{
    if (a.rows() == 0) throw std::invalid_argument("mean_rows: empty input");
    return scale(sum_rows(a), 1.0 / a.rows());
}

Var max_rows(Var a)
{
    Tape& t = tape_of({a});
    const Mat& av = a.value();
    if (av.rows() == 0) throw std::invalid_argument("max_rows: empty input");
    Mat out(1, av.cols());
    std::vector<int> arg(av.cols(), 0);
    for (int c = 0; c < av.cols(); ++c) {
        double m = av(0, c);
        for (int r = 1; r < av.rows(); ++r) {
            if (av(r, c) > m) {
                m = av(r, c);
                arg[c] = r;
            }
        }
        out(0, c) = m;
    }
    const int ia = a.id();
    const Var in[] = {a};
    return t.push(std::move(out), in, [ia, arg = std::move(arg)](Tape& tp, int self) {
        const Mat& g = tp.out_grad(self);
        Mat& ga = tp.grad_buffer(ia);
        for (int c = 0; c < g.cols(); ++c) ga(arg[c], c) += g(0, c);
    });
}

Var cumsum_rows(Var a)
{
    Tape& t = tape_of({a});
    Mat out = a.value();
    for (int r = 1; r < out.rows(); ++r)
        for (int c = 0; c < out.cols(); ++c) out(r, c) += out(r - 1, c);
    const int ia = a.id();
    const Var in[] = {a};
    return t.push(std::move(out), in, [ia](Tape& tp, int self) {
        const Mat& g = tp.out_grad(self);
        Mat& ga = tp.grad_buffer(ia);
        for (int c = 0; c < g.cols(); ++c) {
            double acc = 0.0;
            for (int r = g.rows() - 1; r >= 0; --r) {
                acc += g(r, c);
                ga(r, c) += acc;
            }
        }
    });
}

Var masked_softmax(Var a, const BlockMask* mask)
{
    Tape& t = tape_of({a});
    const Mat& av = a.value();
    if (mask && mask->size() != av.size()) throw std::invalid_argument("masked_softmax: mask shape mismatch");
    Mat out(av.rows(), av.cols());
    for (int r = 0; r < av.rows(); ++r) {
        double m = -std::numeric_limits<double>::infinity();
        for (int c = 0; c < av.cols(); ++c) {
            if (mask && (*mask)[static_cast<std::size_t>(r) * av.cols() + c]) continue;
            m = std::max(m, av(r, c));
        }
        if (m == -std::numeric_limits<double>::infinity()) continue; // fully blocked row stays zero
        double z = 0.0;
        for (int c = 0; c < av.cols(); ++c) {
            if (mask && (*mask)[static_cast<std::size_t>(r) * av.cols() + c]) continue;
            out(r, c) = std::exp(av(r, c) - m);
            z += out(r, c);
        }
        for (int c = 0; c < av.cols(); ++c) out(r, c) /= z;
    }
    const int ia = a.id();
    const Var in[] = {a};
    return t.push(std::move(out), in, [ia](Tape& tp, int self) {
        const Mat& g = tp.out_grad(self);
        const Mat& y = tp.value(self);
        Mat& ga = tp.grad_buffer(ia);
        // Blocked entries have y = 0 and so receive no gradient.
        for (int r = 0; r < y.rows(); ++r) {
            double dot = 0.0;
            for (int c = 0; c < y.cols(); ++c) dot += g(r, c) * y(r, c);
            for (int c = 0; c < y.cols(); ++c) ga(r, c) += y(r, c) * (g(r, c) - dot);
        }
    });
}

Var zero_rows(Var a, std::vector<unsigned char> flags)
{
    Tape& t = tape_of({a});
    Mat out = a.value();
    if (static_cast<int>(flags.size()) != out.rows()) throw std::invalid_argument("zero_rows: flag count mismatch");
    for (int r = 0; r < out.rows(); ++r)
        if (flags[r])
            for (int c = 0; c < out.cols(); ++c) out(r, c) = 0.0;
    const int ia = a.id();
    const Var in[] = {a};
    return t.push(std::move(out), in, [ia, flags = std::move(flags)](Tape& tp, int self) {
        const Mat& g = tp.out_grad(self);
        Mat& ga = tp.grad_buffer(ia);
        for (int r = 0; r < g.rows(); ++r)
            if (!flags[r])
                for (int c = 0; c < g.cols(); ++c) ga(r, c) += g(r, c);
    });
}

Var bilinear_sample(Var grid, Var points, const kernels::GridMeta& meta)
{
    Tape& t = tape_of({grid, points});
    Mat out;
    kernels::bilinear_sample(grid.value(), meta, points.value(), out);
    const int ig = grid.id(), ip = points.id();
    const Var in[] = {grid, points};
    return t.push(std::move(out), in, [ig, ip, meta](Tape& tp, int self) {
        const Mat& g = tp.out_grad(self);
        const Mat& pts = tp.value(ip);
        const Mat& gv = tp.value(ig);
        const bool want_grid = tp.requires_grad(ig);
        const bool want_pts = tp.requires_grad(ip);
        for (int r = 0; r < pts.rows(); ++r) {
            const kernels::BilinearTaps taps = kernels::bilinear_taps(meta, pts(r, 0), pts(r, 1));
            for (int k = 0; k < 4; ++k) {
                if (taps.index[k] < 0) continue;
                const int cell = taps.index[k];
                if (want_grid) {
                    Mat& gg = tp.grad_buffer(ig);
                    for (int c = 0; c < meta.channels; ++c) gg(cell, c) += taps.weight[k] * g(r, c);
                }
                if (want_pts) {
                    double dot = 0.0;
                    for (int c = 0; c < meta.channels; ++c) dot += g(r, c) * gv(cell, c);
                    Mat& gp = tp.grad_buffer(ip);
                    gp(r, 0) += taps.dwx[k] * dot;
                    gp(r, 1) += taps.dwy[k] * dot;
                }
            }
        }
    });
}

Var group_weighted_sum(Var w, Var s)
{
    Tape& t = tape_of({w, s});
    const Mat& wv = w.value();
    const Mat& sv = s.value();
    const int R = wv.rows(), P = wv.cols(), C = sv.cols();
    if (sv.rows() != R * P) throw std::invalid_argument("group_weighted_sum: expected s rows = R*P");
    Mat out(R, C);
    for (int r = 0; r < R; ++r)
        for (int p = 0; p < P; ++p)
            for (int c = 0; c < C; ++c) out(r, c) += wv(r, p) * sv(r * P + p, c);
    const int iw = w.id(), is = s.id();
    const Var in[] = {w, s};
    return t.push(std::move(out), in, [iw, is, R, P, C](Tape& tp, int self) {
        const Mat& g = tp.out_grad(self);
        if (tp.requires_grad(iw)) {
            Mat& gw = tp.grad_buffer(iw);
            const Mat& sv = tp.value(is);
            for (int r = 0; r < R; ++r)
                for (int p = 0; p < P; ++p) {
                    double dot = 0.0;
                    for (int c = 0; c < C; ++c) dot += g(r, c) * sv(r * P + p, c);
                    gw(r, p) += dot;
                }
        }
        if (tp.requires_grad(is)) {
            Mat& gs = tp.grad_buffer(is);
            const Mat& wv = tp.value(iw);
            for (int r = 0; r < R; ++r)
                for (int p = 0; p < P; ++p)
                    for (int c = 0; c < C; ++c) gs(r * P + p, c) += wv(r, p) * g(r, c);
        }
    });
}

Var scalar_with_grads(std::span<const Var> inputs, double value, std::vector<Mat> grads)
{
    if (inputs.empty()) throw std::invalid_argument("scalar_with_grads: no inputs");
    if (grads.size() != inputs.size()) throw std::invalid_argument("scalar_with_grads: one gradient per input");
    std::vector<int> ids;
    for (std::size_t k = 0; k < inputs.size(); ++k) {
        require_same_shape(inputs[k].value(), grads[k], "scalar_with_grads");
        ids.push_back(inputs[k].id());
    }
    Tape& t = *inputs[0].tape();
    return t.push(Mat(1, 1, value), inputs, [ids, grads = std::move(grads)](Tape& tp, int self) {
        const double seed = tp.out_grad(self)(0, 0);
        for (std::size_t k = 0; k < ids.size(); ++k) {
            if (tp.requires_grad(ids[k])) axpy(tp.grad_buffer(ids[k]), grads[k], seed);
        }
    });
}

Var sum_all(Var a)
{
    Tape& t = tape_of({a});
    double s = 0.0;
    for (double v : a.value().values()) s += v;
    const int ia = a.id();
    const Var in[] = {a};
    return t.push(Mat(1, 1, s), in, [ia](Tape& tp, int self) {
        const double g = tp.out_grad(self)(0, 0);
        for (double& v : tp.grad_buffer(ia).values()) v += g;
    });
}

} // namespace ppad::ad
