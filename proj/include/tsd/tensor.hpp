#pragma once

// Small dense f64 tensor with tape-based reverse-mode autodiff. Everything is
// row-major; images and latents use CHW layout. Single-threaded graphs; ops on
// disjoint tensors are safe to run concurrently.

#include <atomic>
#include <functional>
#include <memory>
#include <unordered_set>

#include "tsd/common.hpp"

namespace tsd {

namespace detail {
inline std::atomic<uint64_t>& seq_counter() {
    static std::atomic<uint64_t> c{0};
    return c;
}
inline thread_local bool grad_enabled = true;
}  // namespace detail

// Disables tape recording in scope (validation passes, inference).
struct NoGradGuard {
    bool prev;
    NoGradGuard() : prev(detail::grad_enabled) { detail::grad_enabled = false; }
    ~NoGradGuard() { detail::grad_enabled = prev; }
    NoGradGuard(const NoGradGuard&) = delete;
};

struct Node {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;  // sized lazily during backward
    bool needs_grad = false;   // part of some differentiable path
    bool is_param = false;     // leaf parameter (grad kept for the optimizer)
    uint64_t seq = 0;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backprop;

    void ensure_grad() {
        if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
    }
};

class Tensor {
public:
    Tensor() = default;

    explicit Tensor(Shape shape, double fill = 0.0, bool requires_grad = false) {
        node_ = std::make_shared<Node>();
        node_->shape = std::move(shape);
        node_->value.assign(static_cast<size_t>(numel_of(node_->shape)), fill);
        node_->needs_grad = node_->is_param = requires_grad;
        node_->seq = detail::seq_counter()++;
    }

    Tensor(Shape shape, std::vector<double> data, bool requires_grad = false) {
        check(numel_of(shape) == static_cast<long>(data.size()),
              "tensor data length " + std::to_string(data.size()) +
                  " does not match shape " + shape_str(shape));
        node_ = std::make_shared<Node>();
        node_->shape = std::move(shape);
        node_->value = std::move(data);
        node_->needs_grad = node_->is_param = requires_grad;
        node_->seq = detail::seq_counter()++;
    }

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    long numel() const { return numel_of(node_->shape); }
    std::vector<double>& data() { return node_->value; }
    const std::vector<double>& data() const { return node_->value; }
    std::vector<double>& grad() { return node_->grad; }
    const std::vector<double>& grad() const { return node_->grad; }
    bool requires_grad() const { return node_->is_param; }
    void set_requires_grad(bool v) { node_->is_param = v; node_->needs_grad = v; }
    std::shared_ptr<Node> node() const { return node_; }

    double item() const {
        check(numel() == 1, "item() on non-scalar tensor " + shape_str(shape()));
        return node_->value[0];
    }

    void zero_grad() { node_->grad.assign(node_->value.size(), 0.0); }

    // Value copy with no graph history.
    Tensor detach() const { return Tensor(node_->shape, node_->value); }

    static Tensor from_node(std::shared_ptr<Node> n) {
        Tensor t;
        t.node_ = std::move(n);
        return t;
    }

private:
    std::shared_ptr<Node> node_;
};

namespace detail {

inline Tensor make_op(Shape shape, std::vector<double> value,
                      std::initializer_list<Tensor> inputs,
                      const std::function<void(Node&)>& bp) {
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->value = std::move(value);
    n->seq = seq_counter()++;
    bool needs = false;
    for (const Tensor& t : inputs) needs = needs || t.node()->needs_grad;
    if (needs && grad_enabled) {
        n->needs_grad = true;
        for (const Tensor& t : inputs) n->parents.push_back(t.node());
        n->backprop = bp;
    }
    return Tensor::from_node(n);
}

inline void same_shape(const Tensor& a, const Tensor& b, const char* op) {
    check(a.shape() == b.shape(), std::string(op) + ": shape mismatch " +
                                      shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

}  // namespace detail

// ------------------------------------------------------------- elementwise

inline Tensor add(const Tensor& a, const Tensor& b) {
    detail::same_shape(a, b, "add");
    std::vector<double> out(a.data());
    for (size_t i = 0; i < out.size(); ++i) out[i] += b.data()[i];
    Node* an = a.node().get();
    Node* bn = b.node().get();
    return detail::make_op(a.shape(), std::move(out), {a, b}, [an, bn](Node& self) {
        if (an->needs_grad) {
            an->ensure_grad();
            for (size_t i = 0; i < self.grad.size(); ++i) an->grad[i] += self.grad[i];
        }
        if (bn->needs_grad) {
            bn->ensure_grad();
            for (size_t i = 0; i < self.grad.size(); ++i) bn->grad[i] += self.grad[i];
        }
    });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
    detail::same_shape(a, b, "sub");
    std::vector<double> out(a.data());
    for (size_t i = 0; i < out.size(); ++i) out[i] -= b.data()[i];
    Node* an = a.node().get();
    Node* bn = b.node().get();
    return detail::make_op(a.shape(), std::move(out), {a, b}, [an, bn](Node& self) {
        if (an->needs_grad) {
            an->ensure_grad();
            for (size_t i = 0; i < self.grad.size(); ++i) an->grad[i] += self.grad[i];
        }
        if (bn->needs_grad) {
            bn->ensure_grad();
            for (size_t i = 0; i < self.grad.size(); ++i) bn->grad[i] -= self.grad[i];
        }
    });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
    detail::same_shape(a, b, "mul");
    std::vector<double> out(a.data());
    for (size_t i = 0; i < out.size(); ++i) out[i] *= b.data()[i];
    Node* an = a.node().get();
    Node* bn = b.node().get();
    return detail::make_op(a.shape(), std::move(out), {a, b}, [an, bn](Node& self) {
        if (an->needs_grad) {
            an->ensure_grad();
            for (size_t i = 0; i < self.grad.size(); ++i)
                an->grad[i] += self.grad[i] * bn->value[i];
        }
        if (bn->needs_grad) {
            bn->ensure_grad();
            for (size_t i = 0; i < self.grad.size(); ++i)
                bn->grad[i] += self.grad[i] * an->value[i];
        }
    });
}

inline Tensor scale(const Tensor& a, double c) {
    std::vector<double> out(a.data());
    for (double& x : out) x *= c;
    Node* an = a.node().get();
    return detail::make_op(a.shape(), std::move(out), {a}, [an, c](Node& self) {
        an->ensure_grad();
        for (size_t i = 0; i < self.grad.size(); ++i) an->grad[i] += c * self.grad[i];
    });
}

inline Tensor relu(const Tensor& a) {
    std::vector<double> out(a.data());
    for (double& x : out) x = x > 0.0 ? x : 0.0;
    Node* an = a.node().get();
    return detail::make_op(a.shape(), std::move(out), {a}, [an](Node& self) {
        an->ensure_grad();
        for (size_t i = 0; i < self.grad.size(); ++i)
            if (an->value[i] > 0.0) an->grad[i] += self.grad[i];
    });
}

// max(x, slope*x) for slope in [0,1); keeps a small gradient on the negative
// side so units cannot die.
inline Tensor leaky_relu(const Tensor& a, double slope = 0.1) {
    check(slope >= 0.0 && slope < 1.0, "leaky_relu: slope must be in [0,1)");
    std::vector<double> out(a.data());
    for (double& x : out) x = x > 0.0 ? x : slope * x;
    Node* an = a.node().get();
    return detail::make_op(a.shape(), std::move(out), {a}, [an, slope](Node& self) {
        an->ensure_grad();
        for (size_t i = 0; i < self.grad.size(); ++i)
            an->grad[i] += (an->value[i] > 0.0 ? 1.0 : slope) * self.grad[i];
    });
}

inline Tensor absval(const Tensor& a) {
    std::vector<double> out(a.data());
    for (double& x : out) x = std::fabs(x);
    Node* an = a.node().get();
    return detail::make_op(a.shape(), std::move(out), {a}, [an](Node& self) {
        an->ensure_grad();
        for (size_t i = 0; i < self.grad.size(); ++i) {
            double x = an->value[i];
            if (x > 0.0)
                an->grad[i] += self.grad[i];
            else if (x < 0.0)
                an->grad[i] -= self.grad[i];
        }
    });
}

// Clamp to [0,1]; gradient passes only strictly inside the interval.
inline Tensor clamp01(const Tensor& a) {
    std::vector<double> out(a.data());
    for (double& x : out) x = std::min(1.0, std::max(0.0, x));
    Node* an = a.node().get();
    return detail::make_op(a.shape(), std::move(out), {a}, [an](Node& self) {
        an->ensure_grad();
        for (size_t i = 0; i < self.grad.size(); ++i) {
            double x = an->value[i];
            if (x > 0.0 && x < 1.0) an->grad[i] += self.grad[i];
        }
    });
}

// ------------------------------------------------------------- reductions

inline Tensor sum_all(const Tensor& a) {
    double s = 0.0;
    for (double x : a.data()) s += x;
    Node* an = a.node().get();
    return detail::make_op({1}, {s}, {a}, [an](Node& self) {
        an->ensure_grad();
        for (size_t i = 0; i < an->grad.size(); ++i) an->grad[i] += self.grad[0];
    });
}

inline Tensor mean_all(const Tensor& a) {
    double s = 0.0;
    for (double x : a.data()) s += x;
    double inv = 1.0 / static_cast<double>(a.numel());
    Node* an = a.node().get();
    return detail::make_op({1}, {s * inv}, {a}, [an, inv](Node& self) {
        an->ensure_grad();
        for (size_t i = 0; i < an->grad.size(); ++i) an->grad[i] += self.grad[0] * inv;
    });
}

// {C,H,W} -> {C}: spatial mean per channel.
inline Tensor mean_pool_hw(const Tensor& a) {
    check(a.shape().size() == 3, "mean_pool_hw expects rank-3 CHW, got " + shape_str(a.shape()));
    int C = a.shape()[0], H = a.shape()[1], W = a.shape()[2];
    double inv = 1.0 / static_cast<double>(H * W);
    std::vector<double> out(static_cast<size_t>(C), 0.0);
    for (int c = 0; c < C; ++c) {
        double s = 0.0;
        const double* p = a.data().data() + static_cast<size_t>(c) * H * W;
        for (int i = 0; i < H * W; ++i) s += p[i];
        out[static_cast<size_t>(c)] = s * inv;
    }
    Node* an = a.node().get();
    return detail::make_op({C}, std::move(out), {a}, [an, C, H, W, inv](Node& self) {
        an->ensure_grad();
        for (int c = 0; c < C; ++c) {
            double g = self.grad[static_cast<size_t>(c)] * inv;
            double* p = an->grad.data() + static_cast<size_t>(c) * H * W;
            for (int i = 0; i < H * W; ++i) p[i] += g;
        }
    });
}

inline Tensor dot_flat(const Tensor& a, const Tensor& b) {
    detail::same_shape(a, b, "dot");
    double s = 0.0;
    for (size_t i = 0; i < a.data().size(); ++i) s += a.data()[i] * b.data()[i];
    Node* an = a.node().get();
    Node* bn = b.node().get();
    return detail::make_op({1}, {s}, {a, b}, [an, bn](Node& self) {
        double g = self.grad[0];
        if (an->needs_grad) {
            an->ensure_grad();
            for (size_t i = 0; i < an->grad.size(); ++i) an->grad[i] += g * bn->value[i];
        }
        if (bn->needs_grad) {
            bn->ensure_grad();
            for (size_t i = 0; i < bn->grad.size(); ++i) bn->grad[i] += g * an->value[i];
        }
    });
}

// y = x / max(||x||, eps), treated as a flat vector.
inline Tensor l2_normalize(const Tensor& a, double eps = 1e-12) {
    double sq = 0.0;
    for (double x : a.data()) sq += x * x;
    double n = std::max(std::sqrt(sq), eps);
    std::vector<double> out(a.data());
    for (double& x : out) x /= n;
    Node* an = a.node().get();
    std::vector<double> y = out;
    return detail::make_op(a.shape(), std::move(out), {a},
                           [an, n, y = std::move(y)](Node& self) {
                               an->ensure_grad();
                               double yg = 0.0;
                               for (size_t i = 0; i < y.size(); ++i) yg += y[i] * self.grad[i];
                               for (size_t i = 0; i < y.size(); ++i)
                                   an->grad[i] += (self.grad[i] - y[i] * yg) / n;
                           });
}

// ------------------------------------------------------------- structural

// {Ca,H,W} + {Cb,H,W} -> {Ca+Cb,H,W}
inline Tensor concat_ch(const Tensor& a, const Tensor& b) {
    check(a.shape().size() == 3 && b.shape().size() == 3 && a.shape()[1] == b.shape()[1] &&
              a.shape()[2] == b.shape()[2],
          "concat_ch: incompatible shapes " + shape_str(a.shape()) + " vs " +
              shape_str(b.shape()));
    int Ca = a.shape()[0], Cb = b.shape()[0], H = a.shape()[1], W = a.shape()[2];
    std::vector<double> out;
    out.reserve(a.data().size() + b.data().size());
    out.insert(out.end(), a.data().begin(), a.data().end());
    out.insert(out.end(), b.data().begin(), b.data().end());
    Node* an = a.node().get();
    Node* bn = b.node().get();
    size_t na = a.data().size();
    return detail::make_op({Ca + Cb, H, W}, std::move(out), {a, b}, [an, bn, na](Node& self) {
        if (an->needs_grad) {
            an->ensure_grad();
            for (size_t i = 0; i < na; ++i) an->grad[i] += self.grad[i];
        }
        if (bn->needs_grad) {
            bn->ensure_grad();
            for (size_t i = 0; i < bn->grad.size(); ++i) bn->grad[i] += self.grad[na + i];
        }
    });
}

// Nearest-neighbour 2x spatial upsample: {C,H,W} -> {C,2H,2W}
inline Tensor upsample2x(const Tensor& a) {
    check(a.shape().size() == 3, "upsample2x expects rank-3 CHW, got " + shape_str(a.shape()));
    int C = a.shape()[0], H = a.shape()[1], W = a.shape()[2];
    std::vector<double> out(static_cast<size_t>(C) * 2 * H * 2 * W);
    for (int c = 0; c < C; ++c)
        for (int y = 0; y < 2 * H; ++y) {
            const double* src = a.data().data() + (static_cast<size_t>(c) * H + y / 2) * W;
            double* dst = out.data() + (static_cast<size_t>(c) * 2 * H + y) * 2 * W;
            for (int x = 0; x < 2 * W; ++x) dst[x] = src[x / 2];
        }
    Node* an = a.node().get();
    return detail::make_op({C, 2 * H, 2 * W}, std::move(out), {a}, [an, C, H, W](Node& self) {
        an->ensure_grad();
        for (int c = 0; c < C; ++c)
            for (int y = 0; y < 2 * H; ++y) {
                double* dst = an->grad.data() + (static_cast<size_t>(c) * H + y / 2) * W;
                const double* src = self.grad.data() + (static_cast<size_t>(c) * 2 * H + y) * 2 * W;
                for (int x = 0; x < 2 * W; ++x) dst[x / 2] += src[x];
            }
    });
}

// 2x2 mean pooling, stride 2. {C,H,W} -> {C,H/2,W/2}; H and W must be even.
inline Tensor avg_pool2x(const Tensor& a) {
    check(a.shape().size() == 3, "avg_pool2x expects rank-3 CHW, got " + shape_str(a.shape()));
    int C = a.shape()[0], H = a.shape()[1], W = a.shape()[2];
    check(H % 2 == 0 && W % 2 == 0,
          "avg_pool2x: spatial dims must be even, got " + shape_str(a.shape()));
    int h = H / 2, w = W / 2;
    std::vector<double> out(static_cast<size_t>(C) * h * w);
    for (int c = 0; c < C; ++c)
        for (int y = 0; y < h; ++y) {
            const double* r0 = a.data().data() + (static_cast<size_t>(c) * H + 2 * y) * W;
            const double* r1 = r0 + W;
            double* dst = out.data() + (static_cast<size_t>(c) * h + y) * w;
            for (int x = 0; x < w; ++x)
                dst[x] = 0.25 * (r0[2 * x] + r0[2 * x + 1] + r1[2 * x] + r1[2 * x + 1]);
        }
    Node* an = a.node().get();
    return detail::make_op({C, h, w}, std::move(out), {a}, [an, C, H, W, h, w](Node& self) {
        an->ensure_grad();
        for (int c = 0; c < C; ++c)
            for (int y = 0; y < h; ++y) {
                double* r0 = an->grad.data() + (static_cast<size_t>(c) * H + 2 * y) * W;
                double* r1 = r0 + W;
                const double* src = self.grad.data() + (static_cast<size_t>(c) * h + y) * w;
                for (int x = 0; x < w; ++x) {
                    double g = 0.25 * src[x];
                    r0[2 * x] += g;
                    r0[2 * x + 1] += g;
                    r1[2 * x] += g;
                    r1[2 * x + 1] += g;
                }
            }
    });
}

// ------------------------------------------------------------- convolution

// Direct 2D convolution. input {C,H,W}, weight {O,C,kh,kw}, optional bias {O}.
// Zero padding; stride 1 or 2. Output spatial dim: (H + 2p - kh)/stride + 1.
inline Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias,
                     int stride = 1, int pad = -1) {
    check(input.shape().size() == 3, "conv2d: input must be CHW, got " + shape_str(input.shape()));
    check(weight.shape().size() == 4,
          "conv2d: weight must be OCKhKw, got " + shape_str(weight.shape()));
    check(stride == 1 || stride == 2, "conv2d: stride must be 1 or 2");
    int C = input.shape()[0], H = input.shape()[1], W = input.shape()[2];
    int O = weight.shape()[0], kh = weight.shape()[2], kw = weight.shape()[3];
    check(weight.shape()[1] == C, "conv2d: channel mismatch, input " + shape_str(input.shape()) +
                                      " vs weight " + shape_str(weight.shape()));
    if (pad < 0) pad = kh / 2;  // same-padding default for odd kernels
    int Ho = (H + 2 * pad - kh) / stride + 1;
    int Wo = (W + 2 * pad - kw) / stride + 1;
    check(Ho > 0 && Wo > 0, "conv2d: empty output for input " + shape_str(input.shape()));
    bool has_bias = bias.defined();
    if (has_bias)
        check(bias.shape() == Shape{O}, "conv2d: bias shape " + shape_str(bias.shape()) +
                                            " does not match output channels " + std::to_string(O));

    std::vector<double> out(static_cast<size_t>(O) * Ho * Wo, 0.0);
    const double* in = input.data().data();
    const double* wt = weight.data().data();
    for (int oc = 0; oc < O; ++oc) {
        double* outc = out.data() + static_cast<size_t>(oc) * Ho * Wo;
        if (has_bias) {
            double b = bias.data()[static_cast<size_t>(oc)];
            for (int i = 0; i < Ho * Wo; ++i) outc[i] = b;
        }
        for (int ic = 0; ic < C; ++ic) {
            const double* inc = in + static_cast<size_t>(ic) * H * W;
            for (int ky = 0; ky < kh; ++ky)
                for (int kx = 0; kx < kw; ++kx) {
                    double w = wt[((static_cast<size_t>(oc) * C + ic) * kh + ky) * kw + kx];
                    if (w == 0.0) continue;
                    for (int oy = 0; oy < Ho; ++oy) {
                        int iy = oy * stride - pad + ky;
                        if (iy < 0 || iy >= H) continue;
                        const double* row = inc + static_cast<size_t>(iy) * W;
                        double* orow = outc + static_cast<size_t>(oy) * Wo;
                        int ox0 = 0, ox1 = Wo;
                        // restrict to in-bounds ix = ox*stride - pad + kx
                        while (ox0 < Wo && ox0 * stride - pad + kx < 0) ++ox0;
                        while (ox1 > ox0 && (ox1 - 1) * stride - pad + kx >= W) --ox1;
                        if (stride == 1) {
                            const double* r = row - pad + kx;
                            for (int ox = ox0; ox < ox1; ++ox) orow[ox] += w * r[ox];
                        } else {
                            for (int ox = ox0; ox < ox1; ++ox)
                                orow[ox] += w * row[ox * 2 - pad + kx];
                        }
                    }
                }
        }
    }

    Node* in_n = input.node().get();
    Node* w_n = weight.node().get();
    Node* b_n = has_bias ? bias.node().get() : nullptr;
    auto bp = [in_n, w_n, b_n, C, H, W, O, kh, kw, Ho, Wo, stride, pad](Node& self) {
        const double* g = self.grad.data();
        if (b_n && b_n->needs_grad) {
            b_n->ensure_grad();
            for (int oc = 0; oc < O; ++oc) {
                double s = 0.0;
                const double* gc = g + static_cast<size_t>(oc) * Ho * Wo;
                for (int i = 0; i < Ho * Wo; ++i) s += gc[i];
                b_n->grad[static_cast<size_t>(oc)] += s;
            }
        }
        bool gi = in_n->needs_grad;
        bool gw = w_n->needs_grad;
        if (gi) in_n->ensure_grad();
        if (gw) w_n->ensure_grad();
        if (!gi && !gw) return;
        for (int oc = 0; oc < O; ++oc) {
            const double* gc = g + static_cast<size_t>(oc) * Ho * Wo;
            for (int ic = 0; ic < C; ++ic) {
                const double* inc = in_n->value.data() + static_cast<size_t>(ic) * H * W;
                double* ginc = gi ? in_n->grad.data() + static_cast<size_t>(ic) * H * W : nullptr;
                for (int ky = 0; ky < kh; ++ky)
                    for (int kx = 0; kx < kw; ++kx) {
                        size_t widx = ((static_cast<size_t>(oc) * C + ic) * kh + ky) * kw + kx;
                        double w = w_n->value[widx];
                        double wacc = 0.0;
                        for (int oy = 0; oy < Ho; ++oy) {
                            int iy = oy * stride - pad + ky;
                            if (iy < 0 || iy >= H) continue;
                            const double* grow = gc + static_cast<size_t>(oy) * Wo;
                            int ox0 = 0, ox1 = Wo;
                            while (ox0 < Wo && ox0 * stride - pad + kx < 0) ++ox0;
                            while (ox1 > ox0 && (ox1 - 1) * stride - pad + kx >= W) --ox1;
                            const double* irow = inc + static_cast<size_t>(iy) * W;
                            if (stride == 1) {
                                const double* ir = irow - pad + kx;
                                if (gw)
                                    for (int ox = ox0; ox < ox1; ++ox) wacc += grow[ox] * ir[ox];
                                if (gi) {
                                    double* gr = ginc + static_cast<size_t>(iy) * W - pad + kx;
                                    for (int ox = ox0; ox < ox1; ++ox) gr[ox] += w * grow[ox];
                                }
                            } else {
                                for (int ox = ox0; ox < ox1; ++ox) {
                                    int ix = ox * 2 - pad + kx;
                                    if (gw) wacc += grow[ox] * irow[ix];
                                    if (gi) ginc[static_cast<size_t>(iy) * W + ix] += w * grow[ox];
                                }
                            }
                        }
                        if (gw) w_n->grad[widx] += wacc;
                    }
            }
        }
    };
    if (has_bias) return detail::make_op({O, Ho, Wo}, std::move(out), {input, weight, bias}, bp);
    return detail::make_op({O, Ho, Wo}, std::move(out), {input, weight}, bp);
}

// ------------------------------------------------------------------ warp

// Bilinear backward warp. frame {C,H,W}, field {2,H,W} with channel 0 = dx,
// channel 1 = dy: out(y,x) = frame(y + dy(y,x), x + dx(y,x)), source
// coordinates clamped to the image border. The field is treated as a
// constant; gradients flow into the frame only.
inline Tensor warp_bilinear(const Tensor& frame, const Tensor& field) {
    check(frame.shape().size() == 3, "warp: frame must be CHW, got " + shape_str(frame.shape()));
    int C = frame.shape()[0], H = frame.shape()[1], W = frame.shape()[2];
    check(field.shape() == Shape{2, H, W}, "warp: field shape " + shape_str(field.shape()) +
                                               " does not match frame " + shape_str(frame.shape()));
    check(!field.node()->needs_grad, "warp: gradients through the field are unsupported");

    std::vector<double> out(frame.data().size());
    const double* f = frame.data().data();
    const double* dx = field.data().data();
    const double* dy = dx + static_cast<size_t>(H) * W;
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            size_t i = static_cast<size_t>(y) * W + x;
            double sx = std::min(static_cast<double>(W - 1), std::max(0.0, x + dx[i]));
            double sy = std::min(static_cast<double>(H - 1), std::max(0.0, y + dy[i]));
            int x0 = static_cast<int>(sx);
            int y0 = static_cast<int>(sy);
            int x1 = std::min(x0 + 1, W - 1);
            int y1 = std::min(y0 + 1, H - 1);
            double fx = sx - x0, fy = sy - y0;
            double w00 = (1 - fy) * (1 - fx), w01 = (1 - fy) * fx;
            double w10 = fy * (1 - fx), w11 = fy * fx;
            for (int c = 0; c < C; ++c) {
                const double* fc = f + static_cast<size_t>(c) * H * W;
                double v = w00 * fc[static_cast<size_t>(y0) * W + x0];
                if (w01 != 0.0) v += w01 * fc[static_cast<size_t>(y0) * W + x1];
                if (w10 != 0.0) v += w10 * fc[static_cast<size_t>(y1) * W + x0];
                if (w11 != 0.0) v += w11 * fc[static_cast<size_t>(y1) * W + x1];
                out[static_cast<size_t>(c) * H * W + i] = v;
            }
        }

    Node* fn = frame.node().get();
    Node* fieldn = field.node().get();
    return detail::make_op(frame.shape(), std::move(out), {frame, field},
                           [fn, fieldn, C, H, W](Node& self) {
                               fn->ensure_grad();
                               const double* dx = fieldn->value.data();
                               const double* dy = dx + static_cast<size_t>(H) * W;
                               for (int y = 0; y < H; ++y)
                                   for (int x = 0; x < W; ++x) {
                                       size_t i = static_cast<size_t>(y) * W + x;
                                       double sx = std::min(static_cast<double>(W - 1),
                                                            std::max(0.0, x + dx[i]));
                                       double sy = std::min(static_cast<double>(H - 1),
                                                            std::max(0.0, y + dy[i]));
                                       int x0 = static_cast<int>(sx);
                                       int y0 = static_cast<int>(sy);
                                       int x1 = std::min(x0 + 1, W - 1);
                                       int y1 = std::min(y0 + 1, H - 1);
                                       double fx = sx - x0, fy = sy - y0;
                                       double w00 = (1 - fy) * (1 - fx), w01 = (1 - fy) * fx;
                                       double w10 = fy * (1 - fx), w11 = fy * fx;
                                       for (int c = 0; c < C; ++c) {
                                           double g = self.grad[static_cast<size_t>(c) * H * W + i];
                                           if (g == 0.0) continue;
                                           double* gc = fn->grad.data() + static_cast<size_t>(c) * H * W;
                                           gc[static_cast<size_t>(y0) * W + x0] += w00 * g;
                                           if (w01 != 0.0) gc[static_cast<size_t>(y0) * W + x1] += w01 * g;
                                           if (w10 != 0.0) gc[static_cast<size_t>(y1) * W + x0] += w10 * g;
                                           if (w11 != 0.0) gc[static_cast<size_t>(y1) * W + x1] += w11 * g;
                                       }
                                   }
                           });
}

// ------------------------------------------------------------- composites

inline Tensor mse(const Tensor& a, const Tensor& b) {
    detail::same_shape(a, b, "mse");
    Tensor d = sub(a, b);
    return mean_all(mul(d, d));
}

inline Tensor mean_abs_diff(const Tensor& a, const Tensor& b) {
    detail::same_shape(a, b, "mean_abs_diff");
    return mean_all(absval(sub(a, b)));
}

// -------------------------------------------------------------- backward

inline void backward(const Tensor& loss) {
    check(loss.numel() == 1,
          "backward requires a scalar loss, got shape " + shape_str(loss.shape()));
    if (!loss.node()->needs_grad) return;  // nothing differentiable upstream

    // Reachable differentiable subgraph; parents always precede children in
    // seq order, so sorting by seq descending is a valid reverse topo order.
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<Node*> stack{loss.node().get()};
    seen.insert(loss.node().get());
    while (!stack.empty()) {
        Node* n = stack.back();
        stack.pop_back();
        order.push_back(n);
        for (auto& p : n->parents)
            if (p->needs_grad && seen.insert(p.get()).second) stack.push_back(p.get());
    }
    std::sort(order.begin(), order.end(), [](Node* a, Node* b) { return a->seq > b->seq; });

    loss.node()->ensure_grad();
    loss.node()->grad[0] = 1.0;
    for (Node* n : order) {
        if (n->backprop && !n->grad.empty()) n->backprop(*n);
    }
}

inline bool all_finite(const Tensor& t) {
    for (double x : t.data())
        if (!std::isfinite(x)) return false;
    return true;
}

}  // namespace tsd
