#pragma once

// Minimal reverse-mode automatic differentiation over dense arrays.
//
// A Tape owns Nodes in creation order (parents always precede children);
// a Var is a cheap handle into its Tape. backward() resets every gradient
// first, so calling it repeatedly on the same tape is idempotent. All math
// is in 64-bit floats and strictly deterministic.

#include <cmath>
#include <cstddef>
#include <deque>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "cold/array.hpp"

namespace cold {

class Tape;

struct Var {
    Tape* tape = nullptr;
    std::size_t id = 0;
};

struct Node {
    Array value;
    Array grad;  // sized lazily by backward()
    const char* op = "leaf";
    std::vector<std::size_t> parents;
    std::function<void(Tape&, std::size_t)> backward;  // (tape, own id)
};

class Tape {
public:
    Var leaf(Array value, const char* op = "leaf") {
        Node n;
        n.value = std::move(value);
        n.op = op;
        nodes_.push_back(std::move(n));
        return Var{this, nodes_.size() - 1};
    }

    Var scalar(double v) { return leaf(Array::scalar(v), "const"); }

    // Re-enters a value as a fresh leaf, cutting its gradient path.
    Var detach(Var x) { return leaf(node(x.id).value, "detach"); }

    Node& node(std::size_t id) { return nodes_[id]; }
    const Node& node(std::size_t id) const { return nodes_[id]; }

    const Array& value(Var x) const { return nodes_[x.id].value; }
    const Array& grad(Var x) const { return nodes_[x.id].grad; }
    double scalar_value(Var x) const { return nodes_[x.id].value[0]; }

    std::size_t size() const { return nodes_.size(); }

    // Populates grad = d(root)/d(node) for every node; nodes that cannot
    // reach root end up with zero grad.
    void backward(Var root) {
        if (root.tape != this)
            throw std::invalid_argument("backward: root belongs to another tape");
        Node& r = nodes_[root.id];
        if (!r.value.is_scalar())
            throw std::invalid_argument("backward: root must be scalar, got " +
                                        r.value.shape_str());
        for (Node& n : nodes_) {
            n.grad.shape = n.value.shape;
            n.grad.data.assign(n.value.data.size(), 0.0);
        }
        r.grad.data[0] = 1.0;
        for (std::size_t i = root.id + 1; i-- > 0;) {
            Node& n = nodes_[i];
            if (n.backward) n.backward(*this, i);
        }
    }

private:
    std::deque<Node> nodes_;  // stable storage while the tape grows
};

namespace detail {

inline Var make(Tape& t, const char* op, Array value,
                std::vector<std::size_t> parents,
                std::function<void(Tape&, std::size_t)> bw) {
    Var v = t.leaf(std::move(value), op);
    Node& n = t.node(v.id);
    n.parents = std::move(parents);
    n.backward = std::move(bw);
    return v;
}

[[noreturn]] inline void shape_error(const char* op, const Array& a, const Array& b) {
    throw std::invalid_argument(std::string(op) + ": incompatible shapes " +
                                a.shape_str() + " and " + b.shape_str());
}

inline void check_same_tape(const char* op, Var a, Var b) {
    if (a.tape != b.tape)
        throw std::invalid_argument(std::string(op) + ": operands from different tapes");
}

}  // namespace detail

// ---- elementwise binary ops -------------------------------------------

inline Var add(Var a, Var b) {
    detail::check_same_tape("add", a, b);
    Tape& t = *a.tape;
    const Array& av = t.value(a);
    const Array& bv = t.value(b);
    if (!av.same_shape(bv)) detail::shape_error("add", av, bv);
    Array out = av;
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] += bv[i];
    return detail::make(t, "add", std::move(out), {a.id, b.id},
                        [pa = a.id, pb = b.id](Tape& tt, std::size_t self) {
                            const Array& g = tt.node(self).grad;
                            Array& ga = tt.node(pa).grad;
                            Array& gb = tt.node(pb).grad;
                            for (std::size_t i = 0; i < g.numel(); ++i) {
                                ga[i] += g[i];
                                gb[i] += g[i];
                            }
                        });
}

// matrix (R x C) + row vector (C), broadcast over rows
inline Var add_rowvec(Var m, Var v) {
    detail::check_same_tape("add", m, v);
    Tape& t = *m.tape;
    const Array& mv = t.value(m);
    const Array& vv = t.value(v);
    if (mv.rank() != 2 || vv.numel() != mv.cols()) detail::shape_error("add", mv, vv);
    Array out = mv;
    const std::size_t r = mv.rows(), c = mv.cols();
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) out.at(i, j) += vv[j];
    return detail::make(t, "add", std::move(out), {m.id, v.id},
                        [pm = m.id, pv = v.id, r, c](Tape& tt, std::size_t self) {
                            const Array& g = tt.node(self).grad;
                            Array& gm = tt.node(pm).grad;
                            Array& gv = tt.node(pv).grad;
                            for (std::size_t i = 0; i < r; ++i)
                                for (std::size_t j = 0; j < c; ++j) {
                                    gm.data[i * c + j] += g.data[i * c + j];
                                    gv[j] += g.data[i * c + j];
                                }
                        });
}

inline Var sub(Var a, Var b) {
    detail::check_same_tape("sub", a, b);
    Tape& t = *a.tape;
    const Array& av = t.value(a);
    const Array& bv = t.value(b);
    if (av.same_shape(bv)) {
        Array out = av;
        for (std::size_t i = 0; i < out.numel(); ++i) out[i] -= bv[i];
        return detail::make(t, "sub", std::move(out), {a.id, b.id},
                            [pa = a.id, pb = b.id](Tape& tt, std::size_t self) {
                                const Array& g = tt.node(self).grad;
                                Array& ga = tt.node(pa).grad;
                                Array& gb = tt.node(pb).grad;
                                for (std::size_t i = 0; i < g.numel(); ++i) {
                                    ga[i] += g[i];
                                    gb[i] -= g[i];
                                }
                            });
    }
    if (av.is_scalar()) {  // scalar - array
        Array out = bv;
        for (std::size_t i = 0; i < out.numel(); ++i) out[i] = av[0] - bv[i];
        return detail::make(t, "sub", std::move(out), {a.id, b.id},
                            [pa = a.id, pb = b.id](Tape& tt, std::size_t self) {
                                const Array& g = tt.node(self).grad;
                                Array& ga = tt.node(pa).grad;
                                Array& gb = tt.node(pb).grad;
                                for (std::size_t i = 0; i < g.numel(); ++i) {
                                    ga[0] += g[i];
                                    gb[i] -= g[i];
                                }
                            });
    }
    if (bv.is_scalar()) {  // array - scalar
        Array out = av;
        for (std::size_t i = 0; i < out.numel(); ++i) out[i] -= bv[0];
        return detail::make(t, "sub", std::move(out), {a.id, b.id},
                            [pa = a.id, pb = b.id](Tape& tt, std::size_t self) {
                                const Array& g = tt.node(self).grad;
                                Array& ga = tt.node(pa).grad;
                                Array& gb = tt.node(pb).grad;
                                for (std::size_t i = 0; i < g.numel(); ++i) {
                                    ga[i] += g[i];
                                    gb[0] -= g[i];
                                }
                            });
    }
    detail::shape_error("sub", av, bv);
}

inline Var mul(Var a, Var b) {
    detail::check_same_tape("mul", a, b);
    Tape& t = *a.tape;
    const Array& av = t.value(a);
    const Array& bv = t.value(b);
    if (av.same_shape(bv)) {
        Array out = av;
        for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= bv[i];
        return detail::make(t, "mul", std::move(out), {a.id, b.id},
                            [pa = a.id, pb = b.id](Tape& tt, std::size_t self) {
                                const Array& g = tt.node(self).grad;
                                const Array& av2 = tt.node(pa).value;
                                const Array& bv2 = tt.node(pb).value;
                                Array& ga = tt.node(pa).grad;
                                Array& gb = tt.node(pb).grad;
                                for (std::size_t i = 0; i < g.numel(); ++i) {
                                    ga[i] += g[i] * bv2[i];
                                    gb[i] += g[i] * av2[i];
                                }
                            });
    }
    if (bv.is_scalar() || av.is_scalar()) {
        Var s = bv.is_scalar() ? b : a;
        Var x = bv.is_scalar() ? a : b;
        const Array& xv = t.value(x);
        Array out = xv;
        const double sv = t.scalar_value(s);
        for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= sv;
        return detail::make(t, "mul", std::move(out), {x.id, s.id},
                            [px = x.id, ps = s.id](Tape& tt, std::size_t self) {
                                const Array& g = tt.node(self).grad;
                                const Array& xv2 = tt.node(px).value;
                                const double sv2 = tt.node(ps).value[0];
                                Array& gx = tt.node(px).grad;
                                Array& gs = tt.node(ps).grad;
                                for (std::size_t i = 0; i < g.numel(); ++i) {
                                    gx[i] += g[i] * sv2;
                                    gs[0] += g[i] * xv2[i];
                                }
                            });
    }
    detail::shape_error("mul", av, bv);
}

// matrix (R x C) scaled per row by s (R)
inline Var scale_rows(Var m, Var s) {
    detail::check_same_tape("mul", m, s);
    Tape& t = *m.tape;
    const Array& mv = t.value(m);
    const Array& sv = t.value(s);
    if (mv.rank() != 2 || sv.numel() != mv.rows()) detail::shape_error("mul", mv, sv);
    Array out = mv;
    const std::size_t r = mv.rows(), c = mv.cols();
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) out.at(i, j) *= sv[i];
    return detail::make(t, "mul", std::move(out), {m.id, s.id},
                        [pm = m.id, ps = s.id, r, c](Tape& tt, std::size_t self) {
                            const Array& g = tt.node(self).grad;
                            const Array& mv2 = tt.node(pm).value;
                            const Array& sv2 = tt.node(ps).value;
                            Array& gm = tt.node(pm).grad;
                            Array& gs = tt.node(ps).grad;
                            for (std::size_t i = 0; i < r; ++i)
                                for (std::size_t j = 0; j < c; ++j) {
                                    gm.data[i * c + j] += g.data[i * c + j] * sv2[i];
                                    gs[i] += g.data[i * c + j] * mv2.data[i * c + j];
                                }
                        });
}

inline Var div(Var a, Var b) {
    detail::check_same_tape("div", a, b);
    Tape& t = *a.tape;
    const Array& av = t.value(a);
    const Array& bv = t.value(b);
    for (double d : bv.data)
        if (d == 0.0)
            throw std::invalid_argument("div: zero denominator entry (pre-clamp required)");
    if (av.same_shape(bv)) {
        Array out = av;
        for (std::size_t i = 0; i < out.numel(); ++i) out[i] /= bv[i];
        return detail::make(t, "div", std::move(out), {a.id, b.id},
                            [pa = a.id, pb = b.id](Tape& tt, std::size_t self) {
                                const Array& g = tt.node(self).grad;
                                const Array& av2 = tt.node(pa).value;
                                const Array& bv2 = tt.node(pb).value;
                                Array& ga = tt.node(pa).grad;
                                Array& gb = tt.node(pb).grad;
                                for (std::size_t i = 0; i < g.numel(); ++i) {
                                    ga[i] += g[i] / bv2[i];
                                    gb[i] -= g[i] * av2[i] / (bv2[i] * bv2[i]);
                                }
                            });
    }
    if (bv.is_scalar()) {
        Array out = av;
        for (std::size_t i = 0; i < out.numel(); ++i) out[i] /= bv[0];
        return detail::make(t, "div", std::move(out), {a.id, b.id},
                            [pa = a.id, pb = b.id](Tape& tt, std::size_t self) {
                                const Array& g = tt.node(self).grad;
                                const Array& av2 = tt.node(pa).value;
                                const double s = tt.node(pb).value[0];
                                Array& ga = tt.node(pa).grad;
                                Array& gb = tt.node(pb).grad;
                                for (std::size_t i = 0; i < g.numel(); ++i) {
                                    ga[i] += g[i] / s;
                                    gb[0] -= g[i] * av2[i] / (s * s);
                                }
                            });
    }
    detail::shape_error("div", av, bv);
}

// ---- matmul, concat, slice ---------------------------------------------

inline Var matmul(Var a, Var b) {
    detail::check_same_tape("matmul", a, b);
    Tape& t = *a.tape;
    const Array& av = t.value(a);
    const Array& bv = t.value(b);
    if (av.rank() != 2 || bv.rank() != 2 || av.cols() != bv.rows())
        detail::shape_error("matmul", av, bv);
    const std::size_t m = av.rows(), k = av.cols(), n = bv.cols();
    Array out({m, n});
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t l = 0; l < k; ++l) {
            const double x = av.data[i * k + l];
            if (x == 0.0) continue;
            const double* brow = &bv.data[l * n];
            double* orow = &out.data[i * n];
            for (std::size_t j = 0; j < n; ++j) orow[j] += x * brow[j];
        }
    return detail::make(
        t, "matmul", std::move(out), {a.id, b.id},
        [pa = a.id, pb = b.id, m, k, n](Tape& tt, std::size_t self) {
            const Array& g = tt.node(self).grad;
            const Array& av2 = tt.node(pa).value;
            const Array& bv2 = tt.node(pb).value;
            Array& ga = tt.node(pa).grad;
            Array& gb = tt.node(pb).grad;
            // dA = G * B^T
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j) {
                    const double gij = g.data[i * n + j];
                    if (gij == 0.0) continue;
                    const double* brow = &bv2.data[j];  // column j, stride n
                    double* garow = &ga.data[i * k];
                    for (std::size_t l = 0; l < k; ++l) garow[l] += gij * brow[l * n];
                }
            // dB = A^T * G
            for (std::size_t l = 0; l < k; ++l)
                for (std::size_t i = 0; i < m; ++i) {
                    const double ail = av2.data[i * k + l];
                    if (ail == 0.0) continue;
                    const double* grow = &g.data[i * n];
                    double* gbrow = &gb.data[l * n];
                    for (std::size_t j = 0; j < n; ++j) gbrow[j] += ail * grow[j];
                }
        });
}

inline Var concat(const std::vector<Var>& parts, std::size_t axis) {
    if (parts.empty()) throw std::invalid_argument("concat: no operands");
    Tape& t = *parts[0].tape;
    for (Var p : parts) detail::check_same_tape("concat", parts[0], p);
    const Array& first = t.value(parts[0]);
    std::vector<std::size_t> pids;
    pids.reserve(parts.size());
    for (Var p : parts) pids.push_back(p.id);

    if (first.rank() == 1) {
        if (axis != 0) throw std::invalid_argument("concat: axis out of range for rank-1");
        std::size_t total = 0;
        for (Var p : parts) {
            if (t.value(p).rank() != 1) detail::shape_error("concat", first, t.value(p));
            total += t.value(p).numel();
        }
        Array out({total});
        std::size_t off = 0;
        std::vector<std::size_t> offsets;
        for (Var p : parts) {
            const Array& pv = t.value(p);
            offsets.push_back(off);
            std::copy(pv.data.begin(), pv.data.end(), out.data.begin() + off);
            off += pv.numel();
        }
        return detail::make(t, "concat", std::move(out), pids,
                            [pids, offsets](Tape& tt, std::size_t self) {
                                const Array& g = tt.node(self).grad;
                                for (std::size_t p = 0; p < pids.size(); ++p) {
                                    Array& gp = tt.node(pids[p]).grad;
                                    const std::size_t off2 = offsets[p];
                                    for (std::size_t i = 0; i < gp.numel(); ++i)
                                        gp[i] += g[off2 + i];
                                }
                            });
    }

    if (first.rank() != 2 || axis > 1)
        throw std::invalid_argument("concat: supports rank-1 axis 0 and rank-2 axis 0/1");

    if (axis == 0) {
        const std::size_t c = first.cols();
        std::size_t rtot = 0;
        for (Var p : parts) {
            const Array& pv = t.value(p);
            if (pv.rank() != 2 || pv.cols() != c) detail::shape_error("concat", first, pv);
            rtot += pv.rows();
        }
        Array out({rtot, c});
        std::size_t off = 0;
        std::vector<std::size_t> offsets;
        for (Var p : parts) {
            const Array& pv = t.value(p);
            offsets.push_back(off);
            std::copy(pv.data.begin(), pv.data.end(), out.data.begin() + off);
            off += pv.numel();
        }
        return detail::make(t, "concat", std::move(out), pids,
                            [pids, offsets](Tape& tt, std::size_t self) {
                                const Array& g = tt.node(self).grad;
                                for (std::size_t p = 0; p < pids.size(); ++p) {
                                    Array& gp = tt.node(pids[p]).grad;
                                    const std::size_t off2 = offsets[p];
                                    for (std::size_t i = 0; i < gp.numel(); ++i)
                                        gp[i] += g[off2 + i];
                                }
                            });
    }

    // axis == 1
    const std::size_t r = first.rows();
    std::size_t ctot = 0;
    std::vector<std::size_t> widths;
    for (Var p : parts) {
        const Array& pv = t.value(p);
        if (pv.rank() != 2 || pv.rows() != r) detail::shape_error("concat", first, pv);
        widths.push_back(pv.cols());
        ctot += pv.cols();
    }
    Array out({r, ctot});
    std::size_t coff = 0;
    std::vector<std::size_t> coffs;
    for (std::size_t p = 0; p < parts.size(); ++p) {
        const Array& pv = t.value(parts[p]);
        coffs.push_back(coff);
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < widths[p]; ++j)
                out.data[i * ctot + coff + j] = pv.data[i * widths[p] + j];
        coff += widths[p];
    }
    return detail::make(t, "concat", std::move(out), pids,
                        [pids, coffs, widths, r, ctot](Tape& tt, std::size_t self) {
                            const Array& g = tt.node(self).grad;
                            for (std::size_t p = 0; p < pids.size(); ++p) {
                                Array& gp = tt.node(pids[p]).grad;
                                const std::size_t w = widths[p], off2 = coffs[p];
                                for (std::size_t i = 0; i < r; ++i)
                                    for (std::size_t j = 0; j < w; ++j)
                                        gp.data[i * w + j] += g.data[i * ctot + off2 + j];
                            }
                        });
}

inline Var slice(Var x, std::size_t axis, std::size_t start, std::size_t len) {
    Tape& t = *x.tape;
    const Array& xv = t.value(x);
    if (xv.rank() == 1) {
        if (axis != 0 || start + len > xv.numel())
            throw std::invalid_argument("slice: out of range on " + xv.shape_str());
        Array out({len});
        std::copy(xv.data.begin() + start, xv.data.begin() + start + len, out.data.begin());
        return detail::make(t, "slice", std::move(out), {x.id},
                            [px = x.id, start, len](Tape& tt, std::size_t self) {
                                const Array& g = tt.node(self).grad;
                                Array& gx = tt.node(px).grad;
                                for (std::size_t i = 0; i < len; ++i) gx[start + i] += g[i];
                            });
    }
    if (xv.rank() != 2 || axis > 1)
        throw std::invalid_argument("slice: supports rank-1 axis 0 and rank-2 axis 0/1");
    const std::size_t r = xv.rows(), c = xv.cols();
    if (axis == 0) {
        if (start + len > r) throw std::invalid_argument("slice: row range out of bounds");
        Array out({len, c});
        std::copy(xv.data.begin() + start * c, xv.data.begin() + (start + len) * c,
                  out.data.begin());
        return detail::make(t, "slice", std::move(out), {x.id},
                            [px = x.id, start, len, c](Tape& tt, std::size_t self) {
                                const Array& g = tt.node(self).grad;
                                Array& gx = tt.node(px).grad;
                                for (std::size_t i = 0; i < len * c; ++i)
                                    gx[start * c + i] += g[i];
                            });
    }
    if (start + len > c) throw std::invalid_argument("slice: column range out of bounds");
    Array out({r, len});
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < len; ++j) out.data[i * len + j] = xv.data[i * c + start + j];
    return detail::make(t, "slice", std::move(out), {x.id},
                        [px = x.id, start, len, r, c](Tape& tt, std::size_t self) {
                            const Array& g = tt.node(self).grad;
                            Array& gx = tt.node(px).grad;
                            for (std::size_t i = 0; i < r; ++i)
                                for (std::size_t j = 0; j < len; ++j)
                                    gx.data[i * c + start + j] += g.data[i * len + j];
                        });
}

// ---- elementwise unary ops ----------------------------------------------

namespace detail {

template <typename Fwd, typename Bwd>
Var unary(Tape& t, const char* op, Var x, Fwd fwd, Bwd bwd) {
    const Array& xv = t.value(x);
    Array out = xv;
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = fwd(xv[i]);
    return detail::make(t, op, std::move(out), {x.id},
                        [px = x.id, bwd](Tape& tt, std::size_t self) {
                            const Array& g = tt.node(self).grad;
                            const Array& xv2 = tt.node(px).value;
                            const Array& yv2 = tt.node(self).value;
                            Array& gx = tt.node(px).grad;
                            for (std::size_t i = 0; i < g.numel(); ++i)
                                gx[i] += g[i] * bwd(xv2[i], yv2[i]);
                        });
}

}  // namespace detail

inline Var exp(Var x) {
    return detail::unary(*x.tape, "exp", x, [](double v) { return std::exp(v); },
                         [](double, double y) { return y; });
}

inline constexpr double kLogClamp = 1e-12;

// Rejects non-positive inputs; values inside (0, 1e-12) are clamped so that
// softmax outputs of long vectors stay usable.
inline Var log(Var x) {
    const Array& xv = x.tape->value(x);
    for (double v : xv.data)
        if (v <= 0.0)
            throw std::invalid_argument("log: non-positive operand (pre-clamp required)");
    return detail::unary(*x.tape, "log", x,
                         [](double v) { return std::log(v < kLogClamp ? kLogClamp : v); },
                         [](double v, double) { return 1.0 / (v < kLogClamp ? kLogClamp : v); });
}

inline Var tanh(Var x) {
    return detail::unary(*x.tape, "tanh", x, [](double v) { return std::tanh(v); },
                         [](double, double y) { return 1.0 - y * y; });
}

inline Var sigmoid(Var x) {
    return detail::unary(*x.tape, "sigmoid", x,
                         [](double v) { return 1.0 / (1.0 + std::exp(-v)); },
                         [](double, double y) { return y * (1.0 - y); });
}

inline Var softplus(Var x) {
    return detail::unary(*x.tape, "softplus", x,
                         [](double v) {
                             return v > 0.0 ? v + std::log1p(std::exp(-v))
                                            : std::log1p(std::exp(v));
                         },
                         [](double v, double) { return 1.0 / (1.0 + std::exp(-v)); });
}

inline Var square(Var x) {
    return detail::unary(*x.tape, "square", x, [](double v) { return v * v; },
                         [](double v, double) { return 2.0 * v; });
}

inline Var sqrt(Var x) {
    const Array& xv = x.tape->value(x);
    for (double v : xv.data)
        if (v <= 0.0)
            throw std::invalid_argument("sqrt: non-positive operand (pre-clamp required)");
    return detail::unary(*x.tape, "sqrt", x, [](double v) { return std::sqrt(v); },
                         [](double, double y) { return 0.5 / y; });
}

inline Var reciprocal(Var x) {
    const Array& xv = x.tape->value(x);
    for (double v : xv.data)
        if (v == 0.0)
            throw std::invalid_argument("reciprocal: zero operand (pre-clamp required)");
    return detail::unary(*x.tape, "reciprocal", x, [](double v) { return 1.0 / v; },
                         [](double, double y) { return -y * y; });
}

// ---- softmax, reductions, norms -----------------------------------------

// Softmax along rank-1 axis 0 or rank-2 axis 1 (per row), with max
// subtraction for stability.
inline Var softmax(Var x, std::size_t axis = 1) {
    Tape& t = *x.tape;
    const Array& xv = t.value(x);
    const bool vec = xv.rank() == 1;
    if (vec && axis != 0)
        throw std::invalid_argument("softmax: rank-1 input supports axis 0 only");
    if (!vec && (xv.rank() != 2 || axis != 1))
        throw std::invalid_argument("softmax: rank-2 input supports axis 1 only");
    const std::size_t r = vec ? 1 : xv.rows();
    const std::size_t c = vec ? xv.numel() : xv.cols();
    Array out = xv;
    for (std::size_t i = 0; i < r; ++i) {
        double mx = out.data[i * c];
        for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, out.data[i * c + j]);
        double denom = 0.0;
        for (std::size_t j = 0; j < c; ++j) {
            out.data[i * c + j] = std::exp(out.data[i * c + j] - mx);
            denom += out.data[i * c + j];
        }
        for (std::size_t j = 0; j < c; ++j) out.data[i * c + j] /= denom;
    }
    return detail::make(t, "softmax", std::move(out), {x.id},
                        [px = x.id, r, c](Tape& tt, std::size_t self) {
                            const Array& g = tt.node(self).grad;
                            const Array& y = tt.node(self).value;
                            Array& gx = tt.node(px).grad;
                            for (std::size_t i = 0; i < r; ++i) {
                                double dot = 0.0;
                                for (std::size_t j = 0; j < c; ++j)
                                    dot += g.data[i * c + j] * y.data[i * c + j];
                                for (std::size_t j = 0; j < c; ++j)
                                    gx.data[i * c + j] +=
                                        y.data[i * c + j] * (g.data[i * c + j] - dot);
                            }
                        });
}

// forward declarations used by log_softmax
inline Var sum(Var x);
inline Var row_sum(Var x);
inline Var scale_rows(Var m, Var s);

// Stable log(softmax(x)) composed from the primitives: per-slice max enters
// as a constant (exact, by shift invariance), so no softmax output ever
// reaches log. Rank-1 axis 0 or rank-2 axis 1.
inline Var log_softmax(Var x, std::size_t axis = 1) {
    Tape& t = *x.tape;
    const Array& xv = t.value(x);
    if (xv.rank() == 1) {
        if (axis != 0)
            throw std::invalid_argument("softmax: rank-1 input supports axis 0 only");
        double mx = xv[0];
        for (double v : xv.data) mx = std::max(mx, v);
        Var shifted = sub(x, t.scalar(mx));
        Var lse = log(sum(exp(shifted)));
        return sub(shifted, lse);
    }
    if (xv.rank() != 2 || axis != 1)
        throw std::invalid_argument("softmax: rank-2 input supports axis 1 only");
    const std::size_t r = xv.rows(), c = xv.cols();
    Array row_max({r, c});
    for (std::size_t i = 0; i < r; ++i) {
        double mx = xv.at(i, 0);
        for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, xv.at(i, j));
        for (std::size_t j = 0; j < c; ++j) row_max.at(i, j) = mx;
    }
    Var shifted = sub(x, t.leaf(std::move(row_max), "row_max"));
    Var lse = log(row_sum(exp(shifted)));  // each row sums to >= 1
    Var ones = t.leaf(Array::full({r, c}, 1.0), "ones");
    return sub(shifted, scale_rows(ones, lse));
}

inline Var sum(Var x) {
    Tape& t = *x.tape;
    const Array& xv = t.value(x);
    double s = 0.0;
    for (double v : xv.data) s += v;
    return detail::make(t, "sum", Array::scalar(s), {x.id},
                        [px = x.id](Tape& tt, std::size_t self) {
                            const double g = tt.node(self).grad[0];
                            Array& gx = tt.node(px).grad;
                            for (std::size_t i = 0; i < gx.numel(); ++i) gx[i] += g;
                        });
}

inline Var mean(Var x) {
    Tape& t = *x.tape;
    const Array& xv = t.value(x);
    if (xv.numel() == 0) throw std::invalid_argument("mean: empty operand");
    double s = 0.0;
    for (double v : xv.data) s += v;
    const double inv = 1.0 / static_cast<double>(xv.numel());
    return detail::make(t, "mean", Array::scalar(s * inv), {x.id},
                        [px = x.id, inv](Tape& tt, std::size_t self) {
                            const double g = tt.node(self).grad[0] * inv;
                            Array& gx = tt.node(px).grad;
                            for (std::size_t i = 0; i < gx.numel(); ++i) gx[i] += g;
                        });
}

// per-row reductions of a rank-2 array: (R x C) -> (R)
inline Var row_sum(Var x) {
    Tape& t = *x.tape;
    const Array& xv = t.value(x);
    if (xv.rank() != 2) throw std::invalid_argument("sum: row_sum needs rank-2 input");
    const std::size_t r = xv.rows(), c = xv.cols();
    Array out({r});
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) out[i] += xv.data[i * c + j];
    return detail::make(t, "sum", std::move(out), {x.id},
                        [px = x.id, r, c](Tape& tt, std::size_t self) {
                            const Array& g = tt.node(self).grad;
                            Array& gx = tt.node(px).grad;
                            for (std::size_t i = 0; i < r; ++i)
                                for (std::size_t j = 0; j < c; ++j)
                                    gx.data[i * c + j] += g[i];
                        });
}

inline Var row_mean(Var x) {
    Tape& t = *x.tape;
    const Array& xv = t.value(x);
    if (xv.rank() != 2) throw std::invalid_argument("mean: row_mean needs rank-2 input");
    const std::size_t r = xv.rows(), c = xv.cols();
    const double inv = 1.0 / static_cast<double>(c);
    Array out({r});
    for (std::size_t i = 0; i < r; ++i) {
        for (std::size_t j = 0; j < c; ++j) out[i] += xv.data[i * c + j];
        out[i] *= inv;
    }
    return detail::make(t, "mean", std::move(out), {x.id},
                        [px = x.id, r, c, inv](Tape& tt, std::size_t self) {
                            const Array& g = tt.node(self).grad;
                            Array& gx = tt.node(px).grad;
                            for (std::size_t i = 0; i < r; ++i)
                                for (std::size_t j = 0; j < c; ++j)
                                    gx.data[i * c + j] += g[i] * inv;
                        });
}

// Euclidean norm of each row: (R x C) -> (R). Rows of all zeros are rejected
// because the derivative is undefined there.
inline Var l2norm_rows(Var x) {
    Tape& t = *x.tape;
    const Array& xv = t.value(x);
    if (xv.rank() != 2) throw std::invalid_argument("l2norm: needs rank-2 input");
    const std::size_t r = xv.rows(), c = xv.cols();
    Array out({r});
    for (std::size_t i = 0; i < r; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < c; ++j) s += xv.data[i * c + j] * xv.data[i * c + j];
        if (s == 0.0) throw std::invalid_argument("l2norm: zero row");
        out[i] = std::sqrt(s);
    }
    return detail::make(t, "l2norm", std::move(out), {x.id},
                        [px = x.id, r, c](Tape& tt, std::size_t self) {
                            const Array& g = tt.node(self).grad;
                            const Array& xv2 = tt.node(px).value;
                            const Array& y = tt.node(self).value;
                            Array& gx = tt.node(px).grad;
                            for (std::size_t i = 0; i < r; ++i) {
                                const double gi = g[i] / y[i];
                                for (std::size_t j = 0; j < c; ++j)
                                    gx.data[i * c + j] += gi * xv2.data[i * c + j];
                            }
                        });
}

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }
inline Var operator/(Var a, Var b) { return div(a, b); }

// ---- gradient checking ----------------------------------------------------

// Max over coordinates of |analytic - central difference| / max(1, |cd|)
// for a scalar-valued function of one array.
inline double grad_check(const std::function<Var(Tape&, Var)>& build, const Array& point,
                         double step) {
    if (!(step > 0.0)) throw std::invalid_argument("grad_check: step must be positive");
    Tape t;
    Var x = t.leaf(point);
    Var y = build(t, x);
    if (!t.value(y).is_scalar())
        throw std::invalid_argument("grad_check: function must produce a scalar");
    t.backward(y);
    const Array analytic = t.grad(x);

    auto eval = [&](std::size_t i, double delta) {
        Tape tt;
        Array p = point;
        p[i] += delta;
        Var yy = build(tt, tt.leaf(p));
        const double v = tt.scalar_value(yy);
        if (!std::isfinite(v))
            throw std::runtime_error("grad_check: non-finite function value near point");
        return v;
    };

    double worst = 0.0;
    for (std::size_t i = 0; i < point.numel(); ++i) {
        const double fd = (eval(i, step) - eval(i, -step)) / (2.0 * step);
        if (!std::isfinite(fd))
            throw std::runtime_error("grad_check: non-finite finite difference");
        const double err = std::abs(analytic[i] - fd) / std::max(1.0, std::abs(fd));
        worst = std::max(worst, err);
    }
    return worst;
}

}  // namespace cold
