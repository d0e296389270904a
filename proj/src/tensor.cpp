#include "bln/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <numeric>
#include <string>

#include "bln/kernels.hpp"

namespace bln {

namespace ker = bln::kernels;

std::size_t numel(const Shape& s) {
    std::size_t n = 1;
    for (std::size_t d : s) n *= d;
    return n;
}

const Shape& Tensor::shape() const { return tape->node(id).shape; }
const std::vector<double>& Tensor::values() const { return tape->node(id).value; }
std::size_t Tensor::size() const { return values().size(); }

double Tensor::scalar() const {
    if (size() != 1) throw ContractError("scalar() on tensor of size " + std::to_string(size()));
    return values()[0];
}

std::vector<double> GradientMap::at(const Tensor& t) const {
    if (t.id < grads_.size() && !grads_[t.id].empty()) return grads_[t.id];
    return std::vector<double>(sizes_.at(t.id), 0.0);
}

bool GradientMap::touched(const Tensor& t) const {
    return t.id < grads_.size() && !grads_[t.id].empty();
}

std::size_t Tape::emplace(Node n) {
    nodes_.push_back(std::move(n));
    return nodes_.size() - 1;
}

Tensor Tape::make(Shape shape, std::vector<double> value,
                  std::vector<std::size_t> inputs,
                  std::function<void(Tape&, std::size_t)> backprop) {
    Node n;
    n.shape = std::move(shape);
    n.value = std::move(value);
    n.inputs = std::move(inputs);
    n.backprop = std::move(backprop);
    return Tensor{this, emplace(std::move(n))};
}

Tensor Tape::leaf(Shape shape, std::vector<double> values) {
    if (numel(shape) != values.size())
        throw ShapeError("leaf: shape/data size mismatch");
    return make(std::move(shape), std::move(values), {}, nullptr);
}

Tensor Tape::leaf(Shape shape, const double* values) {
    return leaf(std::move(shape), std::vector<double>(values, values + numel(shape)));
}

Tensor Tape::scalar_leaf(double v) { return leaf(Shape{}, std::vector<double>{v}); }

std::vector<double>& Tape::grad_buffer(std::size_t id) {
    Node& n = nodes_[id];
    if (n.grad.empty()) n.grad.assign(n.value.size(), 0.0);
    return n.grad;
}

GradientMap Tape::backward(const Tensor& loss, double seed) {
    if (loss.tape != this) throw ContractError("backward: loss from a different tape");
    if (loss.size() != 1) throw ContractError("backward: loss must be scalar");
    for (Node& n : nodes_) n.grad.clear();
    grad_buffer(loss.id)[0] = seed;
    for (std::size_t id = loss.id + 1; id-- > 0;) {
        Node& n = nodes_[id];
        if (!n.grad.empty() && n.backprop) n.backprop(*this, id);
    }
    std::vector<std::vector<double>> grads(nodes_.size());
    std::vector<std::size_t> sizes(nodes_.size());
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
        sizes[i] = nodes_[i].value.size();
        grads[i] = std::move(nodes_[i].grad);
        nodes_[i].grad.clear();
    }
    return GradientMap(std::move(grads), std::move(sizes));
}

// ---- helpers ---------------------------------------------------------------

namespace {

Tape* same_tape(const Tensor& a, const Tensor& b) {
    if (a.tape != b.tape) throw ContractError("operands from different tapes");
    return a.tape;
}

// Broadcast layout: shapes aligned from trailing dims; strides are 0 on
// broadcast axes.
struct Bcast {
    Shape out;
    std::vector<std::size_t> sa, sb;
};

Bcast plan_broadcast(const Shape& a, const Shape& b) {
    const std::size_t rank = std::max(a.size(), b.size());
    Bcast bc;
    bc.out.resize(rank);
    Shape pa(rank, 1), pb(rank, 1);
    std::copy(a.begin(), a.end(), pa.begin() + (rank - a.size()));
    std::copy(b.begin(), b.end(), pb.begin() + (rank - b.size()));
    for (std::size_t d = 0; d < rank; ++d) {
        if (pa[d] == pb[d]) bc.out[d] = pa[d];
        else if (pa[d] == 1) bc.out[d] = pb[d];
        else if (pb[d] == 1) bc.out[d] = pa[d];
        else throw ShapeError("broadcast: incompatible shapes");
    }
    auto strides = [&](const Shape& p) {
        std::vector<std::size_t> st(rank, 0);
        std::size_t acc = 1;
        for (std::size_t d = rank; d-- > 0;) {
            st[d] = (p[d] == 1) ? 0 : acc;
            acc *= p[d];
        }
        return st;
    };
    bc.sa = strides(pa);
    bc.sb = strides(pb);
    return bc;
}

// Calls fn(offa, offb, offo) for every innermost run of the broadcast shape;
// runs have length `len` with inner strides ia/ib (0 or 1) and contiguous out.
template <class Fn>
void bcast_runs(const Bcast& bc, Fn&& fn) {
    const std::size_t rank = bc.out.size();
    if (rank == 0) {
        fn(std::size_t{0}, std::size_t{0}, std::size_t{0});
        return;
    }
    std::vector<std::size_t> idx(rank - 1, 0);
    const std::size_t inner = bc.out[rank - 1];
    std::size_t outer = 1;
    for (std::size_t d = 0; d + 1 < rank; ++d) outer *= bc.out[d];
    for (std::size_t o = 0; o < outer; ++o) {
        std::size_t offa = 0, offb = 0;
        for (std::size_t d = 0; d + 1 < rank; ++d) {
            offa += idx[d] * bc.sa[d];
            offb += idx[d] * bc.sb[d];
        }
        fn(offa, offb, o * inner);
        for (std::size_t d = rank - 1; d-- > 0;) {
            if (++idx[d] < bc.out[d]) break;
            idx[d] = 0;
        }
    }
}

enum class BinKind { add, sub, mul, div };

Tensor binary_op(BinKind kind, const Tensor& ta, const Tensor& tb) {
    Tape* tape = same_tape(ta, tb);
    const Bcast bc = plan_broadcast(ta.shape(), tb.shape());
    const std::vector<double>& av = ta.values();
    const std::vector<double>& bv = tb.values();

    if (kind == BinKind::div) {
        for (double x : bv)
            if (x == 0.0) throw DomainError("division by zero");
    }

    std::vector<double> out(numel(bc.out));
    const std::size_t rank = bc.out.size();
    const std::size_t len = rank ? bc.out[rank - 1] : 1;
    const std::size_t ia = rank ? bc.sa[rank - 1] : 0;
    const std::size_t ib = rank ? bc.sb[rank - 1] : 0;

    bcast_runs(bc, [&](std::size_t offa, std::size_t offb, std::size_t offo) {
        const double* a = av.data() + offa;
        const double* b = bv.data() + offb;
        double* o = out.data() + offo;
        if (ia == 1 && ib == 1) {
            switch (kind) {
                case BinKind::add: ker::add(o, a, b, len); break;
                case BinKind::sub: ker::sub(o, a, b, len); break;
                case BinKind::mul: ker::mul(o, a, b, len); break;
                case BinKind::div: ker::div(o, a, b, len); break;
            }
        } else if (ia == 1) {
            switch (kind) {
                case BinKind::add: ker::add_scalar(o, a, *b, len); break;
                case BinKind::sub: ker::sub_scalar(o, a, *b, len); break;
                case BinKind::mul: ker::mul_scalar(o, a, *b, len); break;
                case BinKind::div: ker::div_scalar(o, a, *b, len); break;
            }
        } else if (ib == 1) {
            switch (kind) {
                case BinKind::add: ker::add_scalar(o, b, *a, len); break;
                case BinKind::sub: ker::rsub_scalar(o, b, *a, len); break;
                case BinKind::mul: ker::mul_scalar(o, b, *a, len); break;
                case BinKind::div: ker::rdiv_scalar(o, b, *a, len); break;
            }
        } else {
            double v;
            switch (kind) {
                case BinKind::add: v = *a + *b; break;
                case BinKind::sub: v = *a - *b; break;
                case BinKind::mul: v = *a * *b; break;
                default: v = *a / *b; break;
            }
            for (std::size_t i = 0; i < len; ++i) o[i] = v;
        }
    });

    const std::size_t aid = ta.id, bid = tb.id;
    auto backprop = [kind, bc, aid, bid, len, ia, ib](Tape& t, std::size_t self) {
        const std::vector<double>& g = t.node(self).grad;
        const std::vector<double>& av2 = t.node(aid).value;
        const std::vector<double>& bv2 = t.node(bid).value;
        std::vector<double>& ga = t.grad_buffer(aid);
        std::vector<double>& gb = t.grad_buffer(bid);
        bcast_runs(bc, [&](std::size_t offa, std::size_t offb, std::size_t offo) {
            for (std::size_t i = 0; i < len; ++i) {
                const std::size_t pa = offa + i * ia;
                const std::size_t pb = offb + i * ib;
                const double gi = g[offo + i];
                switch (kind) {
                    case BinKind::add:
                        ga[pa] += gi;
                        gb[pb] += gi;
                        break;
                    case BinKind::sub:
                        ga[pa] += gi;
                        gb[pb] -= gi;
                        break;
                    case BinKind::mul:
                        ga[pa] += gi * bv2[pb];
                        gb[pb] += gi * av2[pa];
                        break;
                    case BinKind::div:
                        ga[pa] += gi / bv2[pb];
                        gb[pb] -= gi * av2[pa] / (bv2[pb] * bv2[pb]);
                        break;
                }
            }
        });
    };
    return tape->make(bc.out, std::move(out), {aid, bid}, std::move(backprop));
}

template <class F, class D>
Tensor unary_op(const Tensor& tx, F&& f, D&& dfdx) {
    const std::vector<double>& xv = tx.values();
    std::vector<double> out(xv.size());
    for (std::size_t i = 0; i < xv.size(); ++i) out[i] = f(xv[i]);
    const std::size_t xid = tx.id;
    auto backprop = [xid, dfdx](Tape& t, std::size_t self) {
        const Node& n = t.node(self);
        const std::vector<double>& xv2 = t.node(xid).value;
        std::vector<double>& gx = t.grad_buffer(xid);
        for (std::size_t i = 0; i < n.value.size(); ++i)
            gx[i] += n.grad[i] * dfdx(xv2[i], n.value[i]);
    };
    return tx.tape->make(tx.shape(), std::move(out), {xid}, std::move(backprop));
}

}  // namespace

// ---- ops -------------------------------------------------------------------

Tensor stop_gradient(const Tensor& x) {
    // No recorded inputs: the reverse sweep stops here, so every ancestor of
    // x receives exactly zero from this path.
    return x.tape->make(x.shape(), x.values(), {}, nullptr);
}

Tensor add(const Tensor& a, const Tensor& b) { return binary_op(BinKind::add, a, b); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary_op(BinKind::sub, a, b); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary_op(BinKind::mul, a, b); }
Tensor div(const Tensor& a, const Tensor& b) { return binary_op(BinKind::div, a, b); }

Tensor isrlu(const Tensor& x, double alpha) {
    return unary_op(
        x,
        [alpha](double v) { return v >= 0.0 ? v : v / std::sqrt(1.0 + alpha * v * v); },
        [alpha](double v, double) {
            if (v >= 0.0) return 1.0;
            const double t = 1.0 / std::sqrt(1.0 + alpha * v * v);
            return t * t * t;
        });
}

Tensor leaky_relu(const Tensor& x, double slope) {
    return unary_op(
        x, [slope](double v) { return v >= 0.0 ? v : slope * v; },
        [slope](double v, double) { return v >= 0.0 ? 1.0 : slope; });
}

Tensor exp(const Tensor& x) {
    return unary_op(x, [](double v) { return std::exp(v); },
                    [](double, double y) { return y; });
}

Tensor log(const Tensor& x) {
    for (double v : x.values())
        if (v <= 0.0) throw DomainError("log of non-positive value");
    return unary_op(x, [](double v) { return std::log(v); },
                    [](double v, double) { return 1.0 / v; });
}

Tensor abs(const Tensor& x) {
    return unary_op(x, [](double v) { return std::fabs(v); },
                    [](double v, double) { return v < 0.0 ? -1.0 : 1.0; });
}

Tensor square(const Tensor& x) {
    return unary_op(x, [](double v) { return v * v; },
                    [](double v, double) { return 2.0 * v; });
}

Tensor sqrt(const Tensor& x) {
    for (double v : x.values())
        if (v < 0.0) throw DomainError("sqrt of negative value");
    return unary_op(x, [](double v) { return std::sqrt(v); },
                    [](double, double y) { return 0.5 / y; });
}

Tensor reciprocal(const Tensor& x) {
    for (double v : x.values())
        if (v == 0.0) throw DomainError("reciprocal of zero");
    return unary_op(x, [](double v) { return 1.0 / v; },
                    [](double, double y) { return -y * y; });
}

Tensor scale(const Tensor& x, double c) {
    std::vector<double> out(x.size());
    ker::mul_scalar(out.data(), x.values().data(), c, x.size());
    const std::size_t xid = x.id;
    auto backprop = [xid, c](Tape& t, std::size_t self) {
        const Node& n = t.node(self);
        std::vector<double>& gx = t.grad_buffer(xid);
        for (std::size_t i = 0; i < n.grad.size(); ++i) gx[i] += n.grad[i] * c;
    };
    return x.tape->make(x.shape(), std::move(out), {xid}, std::move(backprop));
}

Tensor shift(const Tensor& x, double c) {
    std::vector<double> out(x.size());
    ker::add_scalar(out.data(), x.values().data(), c, x.size());
    const std::size_t xid = x.id;
    auto backprop = [xid](Tape& t, std::size_t self) {
        const Node& n = t.node(self);
        std::vector<double>& gx = t.grad_buffer(xid);
        for (std::size_t i = 0; i < n.grad.size(); ++i) gx[i] += n.grad[i];
    };
    return x.tape->make(x.shape(), std::move(out), {xid}, std::move(backprop));
}

Tensor reshape(const Tensor& x, Shape new_shape) {
    if (numel(new_shape) != x.size()) throw ShapeError("reshape: element count mismatch");
    const std::size_t xid = x.id;
    auto backprop = [xid](Tape& t, std::size_t self) {
        const Node& n = t.node(self);
        std::vector<double>& gx = t.grad_buffer(xid);
        for (std::size_t i = 0; i < n.grad.size(); ++i) gx[i] += n.grad[i];
    };
    return x.tape->make(std::move(new_shape), x.values(), {xid}, std::move(backprop));
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    Tape* tape = same_tape(a, b);
    const Shape& sa = a.shape();
    const Shape& sb = b.shape();
    if (sa.size() != 2 || sb.size() != 2 || sa[1] != sb[0])
        throw ShapeError("matmul: incompatible shapes");
    const std::size_t m = sa[0], k = sa[1], n = sb[1];
    std::vector<double> out(m * n, 0.0);
    ker::gemm_nn(m, k, n, a.values().data(), b.values().data(), out.data());
    const std::size_t aid = a.id, bid = b.id;
    auto backprop = [aid, bid, m, k, n](Tape& t, std::size_t self) {
        const std::vector<double>& g = t.node(self).grad;
        const std::vector<double>& av = t.node(aid).value;
        const std::vector<double>& bv = t.node(bid).value;
        ker::gemm_nt(m, n, k, g.data(), bv.data(), t.grad_buffer(aid).data());
        ker::gemm_tn(m, k, n, av.data(), g.data(), t.grad_buffer(bid).data());
    };
    return tape->make(Shape{m, n}, std::move(out), {aid, bid}, std::move(backprop));
}

// ---- conv2d ----------------------------------------------------------------

namespace {

// col is [(H*W) x (C*kh*kw)], zero-padded same convolution.
void im2col(const double* x, std::size_t C, std::size_t H, std::size_t W,
            std::size_t kh, std::size_t kw, double* col) {
    const std::size_t ph = kh / 2, pw = kw / 2;
    const std::size_t ckk = C * kh * kw;
    for (std::size_t y = 0; y < H; ++y) {
        for (std::size_t xx = 0; xx < W; ++xx) {
            double* row = col + (y * W + xx) * ckk;
            std::size_t idx = 0;
            for (std::size_t c = 0; c < C; ++c) {
                const double* plane = x + c * H * W;
                for (std::size_t dy = 0; dy < kh; ++dy) {
                    const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(y + dy) -
                                              static_cast<std::ptrdiff_t>(ph);
                    for (std::size_t dx = 0; dx < kw; ++dx, ++idx) {
                        const std::ptrdiff_t sx = static_cast<std::ptrdiff_t>(xx + dx) -
                                                  static_cast<std::ptrdiff_t>(pw);
                        row[idx] = (sy >= 0 && sy < static_cast<std::ptrdiff_t>(H) &&
                                    sx >= 0 && sx < static_cast<std::ptrdiff_t>(W))
                                       ? plane[sy * W + sx]
                                       : 0.0;
                    }
                }
            }
        }
    }
}

void col2im_accum(const double* dcol, std::size_t C, std::size_t H, std::size_t W,
                  std::size_t kh, std::size_t kw, double* gx) {
    const std::size_t ph = kh / 2, pw = kw / 2;
    const std::size_t ckk = C * kh * kw;
    for (std::size_t y = 0; y < H; ++y) {
        for (std::size_t xx = 0; xx < W; ++xx) {
            const double* row = dcol + (y * W + xx) * ckk;
            std::size_t idx = 0;
            for (std::size_t c = 0; c < C; ++c) {
                double* plane = gx + c * H * W;
                for (std::size_t dy = 0; dy < kh; ++dy) {
                    const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(y + dy) -
                                              static_cast<std::ptrdiff_t>(ph);
                    for (std::size_t dx = 0; dx < kw; ++dx, ++idx) {
                        const std::ptrdiff_t sx = static_cast<std::ptrdiff_t>(xx + dx) -
                                                  static_cast<std::ptrdiff_t>(pw);
                        if (sy >= 0 && sy < static_cast<std::ptrdiff_t>(H) &&
                            sx >= 0 && sx < static_cast<std::ptrdiff_t>(W))
                            plane[sy * W + sx] += row[idx];
                    }
                }
            }
        }
    }
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& k) {
    Tape* tape = same_tape(x, k);
    const Shape& sx = x.shape();
    const Shape& sk = k.shape();
    if (sx.size() != 4 || sk.size() != 4) throw ShapeError("conv2d: rank-4 tensors required");
    if (sx[1] != sk[1]) throw ShapeError("conv2d: channel count mismatch");
    if (sk[2] % 2 == 0 || sk[3] % 2 == 0) throw ShapeError("conv2d: kernel sizes must be odd");
    const std::size_t N = sx[0], C = sx[1], H = sx[2], W = sx[3];
    const std::size_t O = sk[0], kh = sk[2], kw = sk[3];
    const std::size_t hw = H * W, ckk = C * kh * kw;

    // K transposed to [ckk x O] so the product is a plain gemm_nn.
    std::vector<double> kt(ckk * O);
    {
        const std::vector<double>& kv = k.values();
        for (std::size_t o = 0; o < O; ++o)
            for (std::size_t e = 0; e < ckk; ++e) kt[e * O + o] = kv[o * ckk + e];
    }

    std::vector<double> out(N * O * hw);
    std::vector<double> col(hw * ckk), outmat(hw * O);
    for (std::size_t i = 0; i < N; ++i) {
        im2col(x.values().data() + i * C * hw, C, H, W, kh, kw, col.data());
        std::fill(outmat.begin(), outmat.end(), 0.0);
        ker::gemm_nn(hw, ckk, O, col.data(), kt.data(), outmat.data());
        double* oi = out.data() + i * O * hw;
        for (std::size_t p = 0; p < hw; ++p)
            for (std::size_t o = 0; o < O; ++o) oi[o * hw + p] = outmat[p * O + o];
    }

    const std::size_t xid = x.id, kid = k.id;
    auto backprop = [xid, kid, N, C, H, W, O, kh, kw, kt](Tape& t, std::size_t self) {
        const std::size_t hw2 = H * W, ckk2 = C * kh * kw;
        const std::vector<double>& g = t.node(self).grad;
        const std::vector<double>& xv = t.node(xid).value;
        std::vector<double>& gx = t.grad_buffer(xid);
        std::vector<double>& gk = t.grad_buffer(kid);
        std::vector<double> col(hw2 * ckk2), dout(hw2 * O), dcol(hw2 * ckk2);
        std::vector<double> dkt(ckk2 * O, 0.0);
        for (std::size_t i = 0; i < N; ++i) {
            const double* gi = g.data() + i * O * hw2;
            for (std::size_t p = 0; p < hw2; ++p)
                for (std::size_t o = 0; o < O; ++o) dout[p * O + o] = gi[o * hw2 + p];
            im2col(xv.data() + i * C * hw2, C, H, W, kh, kw, col.data());
            ker::gemm_tn(hw2, ckk2, O, col.data(), dout.data(), dkt.data());
            std::fill(dcol.begin(), dcol.end(), 0.0);
            ker::gemm_nt(hw2, O, ckk2, dout.data(), kt.data(), dcol.data());
            col2im_accum(dcol.data(), C, H, W, kh, kw, gx.data() + i * C * hw2);
        }
        for (std::size_t o = 0; o < O; ++o)
            for (std::size_t e = 0; e < ckk2; ++e) gk[o * ckk2 + e] += dkt[e * O + o];
    };
    return tape->make(Shape{N, O, H, W}, std::move(out), {xid, kid}, std::move(backprop));
}

Tensor maxpool2d(const Tensor& x) {
    const Shape& s = x.shape();
    if (s.size() != 4) throw ShapeError("maxpool2d: rank-4 tensor required");
    const std::size_t N = s[0], C = s[1], H = s[2], W = s[3];
    const std::size_t oh = H / 2, ow = W / 2;  // odd trailing row/column dropped
    std::vector<double> out(N * C * oh * ow);
    std::vector<std::size_t> arg(out.size());
    const std::vector<double>& xv = x.values();
    std::size_t oi = 0;
    for (std::size_t nc = 0; nc < N * C; ++nc) {
        const double* plane = xv.data() + nc * H * W;
        const std::size_t base = nc * H * W;
        for (std::size_t y = 0; y < oh; ++y) {
            for (std::size_t xx = 0; xx < ow; ++xx, ++oi) {
                double best = -std::numeric_limits<double>::infinity();
                std::size_t besti = 0;
                for (std::size_t dy = 0; dy < 2; ++dy)
                    for (std::size_t dx = 0; dx < 2; ++dx) {
                        const std::size_t p = (2 * y + dy) * W + (2 * xx + dx);
                        if (plane[p] > best) {  // strict: first max wins ties
                            best = plane[p];
                            besti = p;
                        }
                    }
                out[oi] = best;
                arg[oi] = base + besti;
            }
        }
    }
    const std::size_t xid = x.id;
    auto backprop = [xid, arg](Tape& t, std::size_t self) {
        const Node& n = t.node(self);
        std::vector<double>& gx = t.grad_buffer(xid);
        for (std::size_t i = 0; i < n.grad.size(); ++i) gx[arg[i]] += n.grad[i];
    };
    return x.tape->make(Shape{N, C, oh, ow}, std::move(out), {xid}, std::move(backprop));
}

Tensor reduce(const Tensor& x, Reduce kind, const std::vector<std::size_t>& axes) {
    const Shape& s = x.shape();
    std::vector<bool> reduced(s.size(), false);
    for (std::size_t a : axes) {
        if (a >= s.size()) throw ShapeError("reduce: axis out of range");
        reduced[a] = true;
    }
    Shape os;
    std::size_t count = 1;
    for (std::size_t d = 0; d < s.size(); ++d) {
        if (reduced[d]) count *= s[d];
        else os.push_back(s[d]);
    }
    // Output strides per input dim (0 on reduced axes).
    std::vector<std::size_t> ostride(s.size(), 0);
    {
        std::size_t acc = 1;
        for (std::size_t d = s.size(); d-- > 0;) {
            if (!reduced[d]) {
                ostride[d] = acc;
                acc *= s[d];
            }
        }
    }
    const std::vector<double>& xv = x.values();
    std::vector<double> sums(numel(os), 0.0);
    {
        std::vector<std::size_t> idx(s.size(), 0);
        for (std::size_t i = 0; i < xv.size(); ++i) {
            std::size_t oidx = 0;
            for (std::size_t d = 0; d < s.size(); ++d) oidx += idx[d] * ostride[d];
            sums[oidx] += xv[i];
            for (std::size_t d = s.size(); d-- > 0;) {
                if (++idx[d] < s[d]) break;
                idx[d] = 0;
            }
        }
    }
    if (kind == Reduce::mean)
        for (double& v : sums) v /= static_cast<double>(count);

    const std::size_t xid = x.id;
    const double gmul = (kind == Reduce::mean) ? 1.0 / static_cast<double>(count) : 1.0;
    Shape shape_in = s;
    auto backprop = [xid, ostride, shape_in, gmul](Tape& t, std::size_t self) {
        const std::vector<double>& g = t.node(self).grad;
        std::vector<double>& gx = t.grad_buffer(xid);
        std::vector<std::size_t> idx(shape_in.size(), 0);
        for (std::size_t i = 0; i < gx.size(); ++i) {
            std::size_t oidx = 0;
            for (std::size_t d = 0; d < shape_in.size(); ++d) oidx += idx[d] * ostride[d];
            gx[i] += g[oidx] * gmul;
            for (std::size_t d = shape_in.size(); d-- > 0;) {
                if (++idx[d] < shape_in[d]) break;
                idx[d] = 0;
            }
        }
    };
    return x.tape->make(std::move(os), std::move(sums), {xid}, std::move(backprop));
}

Tensor reduce_all(const Tensor& x, Reduce kind) {
    std::vector<std::size_t> axes(x.shape().size());
    std::iota(axes.begin(), axes.end(), 0);
    return reduce(x, kind, axes);
}

Tensor softmax_cross_entropy_per_row(const Tensor& logits,
                                     const std::vector<std::size_t>& labels) {
    const Shape& s = logits.shape();
    if (s.size() != 2) throw ShapeError("softmax_cross_entropy: logits must be [N,C]");
    const std::size_t N = s[0], C = s[1];
    if (labels.size() != N) throw ShapeError("softmax_cross_entropy: label count mismatch");
    for (std::size_t y : labels)
        if (y >= C) throw IndexError("softmax_cross_entropy: label out of range");

    const std::vector<double>& lv = logits.values();
    std::vector<double> probs(N * C);
    std::vector<double> out(N);
    for (std::size_t i = 0; i < N; ++i) {
        const double* row = lv.data() + i * C;
        double m = row[0];
        for (std::size_t c = 1; c < C; ++c) m = std::max(m, row[c]);
        double z = 0.0;
        for (std::size_t c = 0; c < C; ++c) {
            probs[i * C + c] = std::exp(row[c] - m);
            z += probs[i * C + c];
        }
        for (std::size_t c = 0; c < C; ++c) probs[i * C + c] /= z;
        out[i] = std::log(z) - (row[labels[i]] - m);
    }
    const std::size_t lid = logits.id;
    auto backprop = [lid, labels, probs, C](Tape& t, std::size_t self) {
        const std::vector<double>& g = t.node(self).grad;
        std::vector<double>& gl = t.grad_buffer(lid);
        for (std::size_t i = 0; i < g.size(); ++i)
            for (std::size_t c = 0; c < C; ++c)
                gl[i * C + c] += g[i] * (probs[i * C + c] - (c == labels[i] ? 1.0 : 0.0));
    };
    return logits.tape->make(Shape{N}, std::move(out), {lid}, std::move(backprop));
}

Tensor softmax_cross_entropy(const Tensor& logits, const std::vector<std::size_t>& labels) {
    return reduce_all(softmax_cross_entropy_per_row(logits, labels), Reduce::mean);
}

std::vector<double> softmax_rows(const std::vector<double>& logits,
                                 std::size_t rows, std::size_t cols) {
    if (logits.size() != rows * cols) throw ShapeError("softmax_rows: size mismatch");
    std::vector<double> p(logits.size());
    for (std::size_t i = 0; i < rows; ++i) {
        const double* row = logits.data() + i * cols;
        double m = row[0];
        for (std::size_t c = 1; c < cols; ++c) m = std::max(m, row[c]);
        double z = 0.0;
        for (std::size_t c = 0; c < cols; ++c) {
            p[i * cols + c] = std::exp(row[c] - m);
            z += p[i * cols + c];
        }
        for (std::size_t c = 0; c < cols; ++c) p[i * cols + c] /= z;
    }
    return p;
}

}  // namespace bln
