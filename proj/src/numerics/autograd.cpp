#include "gshield/numerics/autograd.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <unordered_set>

namespace gshield {

std::string shape_str(const Shape& shape) {
    std::string out = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) out += ", ";
        out += std::to_string(shape[i]);
    }
    return out + "]";
}

std::int64_t shape_numel(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::int64_t{1}, std::multiplies<>());
}

template <class T>
BasicVar<T> BasicVar<T>::constant(BasicTensor<T> value) {
    auto node = std::make_shared<Node<T>>();
    node->value = std::move(value);
    return BasicVar(std::move(node));
}

template <class T>
BasicVar<T> BasicVar<T>::parameter(BasicTensor<T> value) {
    auto node = std::make_shared<Node<T>>();
    node->value = std::move(value);
    node->requires_grad = true;
    node->grad = BasicTensor<T>(node->value.shape());
    return BasicVar(std::move(node));
}

template <class T>
void BasicVar<T>::backward() const {
    if (node_->value.numel() != 1) {
        throw ShapeError("backward() needs a scalar output, got shape " + shape_str(node_->value.shape()));
    }
    if (!node_->requires_grad) return;

    // Iterative post-order DFS gives a topological order.
    std::vector<Node<T>*> order;
    std::unordered_set<Node<T>*> seen;
    std::vector<std::pair<Node<T>*, std::size_t>> stack{{node_.get(), 0}};
    seen.insert(node_.get());
    while (!stack.empty()) {
        auto& [n, next] = stack.back();
        if (next < n->parents.size()) {
            Node<T>* p = n->parents[next++].get();
            if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
        } else {
            order.push_back(n);
            stack.pop_back();
        }
    }
    for (Node<T>* n : order) {
        if (n->backward_fn) n->grad = BasicTensor<T>(n->value.shape());
    }
    node_->grad_buffer()[0] += T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        if ((*it)->backward_fn) (*it)->backward_fn(**it);
    }
}

namespace ops {
namespace {

template <class T>
using MatR = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MapR = Eigen::Map<MatR<T>>;
template <class T>
using CMapR = Eigen::Map<const MatR<T>>;

template <class T>
BasicVar<T> make_result(BasicTensor<T> value, std::vector<BasicVar<T>> inputs,
                        std::function<void(Node<T>&)> fn) {
    return make_op<T>(std::move(value), std::move(inputs), std::move(fn));
}

template <class T>
bool wants(const Node<T>& self, std::size_t i) {
    return wants_grad(self, i);
}

template <class T>
void check_same_shape(const BasicVar<T>& a, const BasicVar<T>& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    }
}

template <class T>
void require_rank(const BasicVar<T>& v, std::size_t rank, const char* op, const char* what) {
    if (v.value().rank() != rank) {
        throw ShapeError(std::string(op) + ": " + what + " must have rank " + std::to_string(rank) +
                         ", got " + shape_str(v.shape()));
    }
}

struct ConvGeom {
    std::int64_t channels, height, width;  // image side
    std::int64_t k, stride, pad;
    std::int64_t out_h, out_w;             // correlation output side
    std::int64_t col_rows() const { return channels * k * k; }
    std::int64_t col_cols() const { return out_h * out_w; }
};

template <class T>
void im2col(const T* img, const ConvGeom& g, T* col) {
    for (std::int64_t c = 0; c < g.channels; ++c) {
        for (std::int64_t ki = 0; ki < g.k; ++ki) {
            for (std::int64_t kj = 0; kj < g.k; ++kj) {
                T* row = col + ((c * g.k + ki) * g.k + kj) * g.col_cols();
                for (std::int64_t oy = 0; oy < g.out_h; ++oy) {
                    const std::int64_t y = oy * g.stride - g.pad + ki;
                    T* dst = row + oy * g.out_w;
                    if (y < 0 || y >= g.height) {
                        std::fill(dst, dst + g.out_w, T(0));
                        continue;
                    }
                    const T* src = img + (c * g.height + y) * g.width;
                    for (std::int64_t ox = 0; ox < g.out_w; ++ox) {
                        const std::int64_t x = ox * g.stride - g.pad + kj;
                        dst[ox] = (x >= 0 && x < g.width) ? src[x] : T(0);
                    }
                }
            }
        }
    }
}

template <class T>
void col2im_add(const T* col, const ConvGeom& g, T* img) {
    for (std::int64_t c = 0; c < g.channels; ++c) {
        for (std::int64_t ki = 0; ki < g.k; ++ki) {
            for (std::int64_t kj = 0; kj < g.k; ++kj) {
                const T* row = col + ((c * g.k + ki) * g.k + kj) * g.col_cols();
                for (std::int64_t oy = 0; oy < g.out_h; ++oy) {
                    const std::int64_t y = oy * g.stride - g.pad + ki;
                    if (y < 0 || y >= g.height) continue;
                    const T* src = row + oy * g.out_w;
                    T* dst = img + (c * g.height + y) * g.width;
                    for (std::int64_t ox = 0; ox < g.out_w; ++ox) {
                        const std::int64_t x = ox * g.stride - g.pad + kj;
                        if (x >= 0 && x < g.width) dst[x] += src[ox];
                    }
                }
            }
        }
    }
}

void check_conv_hyper(int stride, int padding, std::int64_t k, const char* op) {
    if (stride < 1) throw ShapeError(std::string(op) + ": stride must be >= 1");
    if (padding < 0) throw ShapeError(std::string(op) + ": padding must be >= 0");
    if (k < 1) throw ShapeError(std::string(op) + ": kernel size must be >= 1");
}

template <class T>
void check_conv_weight(const BasicVar<T>& input, const BasicVar<T>& weight, const BasicVar<T>& bias,
                       std::int64_t in_channel_dim, std::int64_t bias_channels, const char* op) {
    require_rank(input, 4, op, "input");
    require_rank(weight, 4, op, "weight");
    const auto& w = weight.shape();
    if (w[2] != w[3]) {
        throw ShapeError(std::string(op) + ": kernel must be square, got " + shape_str(w));
    }
    if (input.shape()[1] != in_channel_dim) {
        throw ShapeError(std::string(op) + ": input channel dimension (dim 1) is " +
                         std::to_string(input.shape()[1]) + " but weight expects " +
                         std::to_string(in_channel_dim));
    }
    if (bias.defined() && (bias.value().rank() != 1 || bias.shape()[0] != bias_channels)) {
        throw ShapeError(std::string(op) + ": bias dimension 0 must be " + std::to_string(bias_channels) +
                         ", got " + shape_str(bias.shape()));
    }
}

} // namespace

template <class T>
BasicVar<T> add(const BasicVar<T>& a, const BasicVar<T>& b) {
    check_same_shape(a, b, "add");
    BasicTensor<T> out = a.value();
    for (std::int64_t i = 0; i < out.numel(); ++i) out[i] += b.value()[i];
    return make_result<T>(std::move(out), {a, b}, [](Node<T>& self) {
        for (std::size_t p = 0; p < 2; ++p) {
            if (!wants(self, p)) continue;
            auto& g = self.parents[p]->grad_buffer();
            for (std::int64_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i];
        }
    });
}

template <class T>
BasicVar<T> sub(const BasicVar<T>& a, const BasicVar<T>& b) {
    check_same_shape(a, b, "sub");
    BasicTensor<T> out = a.value();
    for (std::int64_t i = 0; i < out.numel(); ++i) out[i] -= b.value()[i];
    return make_result<T>(std::move(out), {a, b}, [](Node<T>& self) {
        if (wants(self, 0)) {
            auto& g = self.parents[0]->grad_buffer();
            for (std::int64_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i];
        }
        if (wants(self, 1)) {
            auto& g = self.parents[1]->grad_buffer();
            for (std::int64_t i = 0; i < g.numel(); ++i) g[i] -= self.grad[i];
        }
    });
}

template <class T>
BasicVar<T> mul(const BasicVar<T>& a, const BasicVar<T>& b) {
    check_same_shape(a, b, "mul");
    BasicTensor<T> out = a.value();
    for (std::int64_t i = 0; i < out.numel(); ++i) out[i] *= b.value()[i];
    return make_result<T>(std::move(out), {a, b}, [](Node<T>& self) {
        const auto& av = self.parents[0]->value;
        const auto& bv = self.parents[1]->value;
        if (wants(self, 0)) {
            auto& g = self.parents[0]->grad_buffer();
            for (std::int64_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i] * bv[i];
        }
        if (wants(self, 1)) {
            auto& g = self.parents[1]->grad_buffer();
            for (std::int64_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i] * av[i];
        }
    });
}

template <class T>
BasicVar<T> scale(const BasicVar<T>& a, T factor) {
    BasicTensor<T> out = a.value();
    for (auto& v : out.data()) v *= factor;
    return make_result<T>(std::move(out), {a}, [factor](Node<T>& self) {
        auto& g = self.parents[0]->grad_buffer();
        for (std::int64_t i = 0; i < g.numel(); ++i) g[i] += factor * self.grad[i];
    });
}

template <class T>
BasicVar<T> sum(const BasicVar<T>& a) {
    T total = 0;
    for (T v : a.value().data()) total += v;
    return make_result<T>(BasicTensor<T>({1}, {total}), {a}, [](Node<T>& self) {
        auto& g = self.parents[0]->grad_buffer();
        for (auto& v : g.data()) v += self.grad[0];
    });
}

template <class T>
BasicVar<T> mean(const BasicVar<T>& a) {
    const auto n = static_cast<T>(a.value().numel());
    return scale(sum(a), T(1) / n);
}

template <class T>
BasicVar<T> reshape(const BasicVar<T>& a, Shape shape) {
    BasicTensor<T> out = a.value().reshaped(std::move(shape));
    return make_result<T>(std::move(out), {a}, [](Node<T>& self) {
        auto& g = self.parents[0]->grad_buffer();
        for (std::int64_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i];
    });
}

template <class T>
BasicVar<T> conv2d(const BasicVar<T>& input, const BasicVar<T>& weight, const BasicVar<T>& bias,
                   int stride, int padding) {
    const char* op = "conv2d";
    require_rank(weight, 4, op, "weight");
    const auto& ws = weight.shape();
    check_conv_hyper(stride, padding, ws[2], op);
    check_conv_weight(input, weight, bias, ws[1], ws[0], op);
    const auto& in = input.shape();
    const std::int64_t batch = in[0], cout = ws[0];
    ConvGeom g{in[1], in[2], in[3], ws[2], stride, padding, 0, 0};
    const std::int64_t span_h = g.height + 2 * padding - g.k;
    const std::int64_t span_w = g.width + 2 * padding - g.k;
    if (span_h < 0) throw ShapeError("conv2d: dimension 2 (height) too small for the kernel");
    if (span_w < 0) throw ShapeError("conv2d: dimension 3 (width) too small for the kernel");
    g.out_h = span_h / stride + 1;
    g.out_w = span_w / stride + 1;

    const bool track = input.requires_grad() || weight.requires_grad() || bias.requires_grad();
    BasicTensor<T> out({batch, cout, g.out_h, g.out_w});
    std::vector<T> cols(track ? static_cast<std::size_t>(batch * g.col_rows() * g.col_cols()) : 0);
    std::vector<T> scratch(track ? 0 : static_cast<std::size_t>(g.col_rows() * g.col_cols()));
    CMapR<T> wmat(weight.value().ptr(), cout, g.col_rows());
    for (std::int64_t b = 0; b < batch; ++b) {
        T* col = track ? cols.data() + b * g.col_rows() * g.col_cols() : scratch.data();
        im2col(input.value().ptr() + b * g.channels * g.height * g.width, g, col);
        MapR<T> o(out.ptr() + b * cout * g.col_cols(), cout, g.col_cols());
        o.noalias() = wmat * CMapR<T>(col, g.col_rows(), g.col_cols());
        if (bias.defined()) {
            for (std::int64_t c = 0; c < cout; ++c) o.row(c).array() += bias.value()[c];
        }
    }

    std::vector<BasicVar<T>> inputs{input, weight};
    if (bias.defined()) inputs.push_back(bias);
    return make_result<T>(std::move(out), std::move(inputs),
                          [g, batch, cout, cols = std::move(cols)](Node<T>& self) {
        const bool want_x = wants(self, 0), want_w = wants(self, 1), want_b = wants(self, 2);
        const auto& wv = self.parents[1]->value;
        CMapR<T> wmat(wv.ptr(), cout, g.col_rows());
        std::vector<T> dcol(static_cast<std::size_t>(g.col_rows() * g.col_cols()));
        for (std::int64_t b = 0; b < batch; ++b) {
            CMapR<T> dout(self.grad.ptr() + b * cout * g.col_cols(), cout, g.col_cols());
            if (want_w) {
                CMapR<T> col(cols.data() + b * g.col_rows() * g.col_cols(), g.col_rows(), g.col_cols());
                MapR<T> dw(self.parents[1]->grad_buffer().ptr(), cout, g.col_rows());
                dw.noalias() += dout * col.transpose();
            }
            if (want_b) {
                auto& db = self.parents[2]->grad_buffer();
                for (std::int64_t c = 0; c < cout; ++c) db[c] += dout.row(c).sum();
            }
            if (want_x) {
                MapR<T> dc(dcol.data(), g.col_rows(), g.col_cols());
                dc.noalias() = wmat.transpose() * dout;
                col2im_add(dcol.data(), g,
                           self.parents[0]->grad_buffer().ptr() + b * g.channels * g.height * g.width);
            }
        }
    });
}

template <class T>
BasicVar<T> conv_transpose2d(const BasicVar<T>& input, const BasicVar<T>& weight,
                             const BasicVar<T>& bias, int stride, int padding) {
    const char* op = "conv_transpose2d";
    require_rank(weight, 4, op, "weight");
    const auto& ws = weight.shape();
    check_conv_hyper(stride, padding, ws[2], op);
    check_conv_weight(input, weight, bias, ws[0], ws[1], op);
    const auto& in = input.shape();
    const std::int64_t batch = in[0], cin = ws[0], cout = ws[1];
    const std::int64_t k = ws[2];
    const std::int64_t out_h = (in[2] - 1) * stride - 2 * padding + k;
    const std::int64_t out_w = (in[3] - 1) * stride - 2 * padding + k;
    if (out_h < 1) throw ShapeError("conv_transpose2d: output dimension 2 (height) is not positive");
    if (out_w < 1) throw ShapeError("conv_transpose2d: output dimension 3 (width) is not positive");
    // Geometry of the forward correlation this op is the adjoint of.
    const ConvGeom g{cout, out_h, out_w, k, stride, padding, in[2], in[3]};
    const std::int64_t in_plane = in[2] * in[3];

    BasicTensor<T> out({batch, cout, out_h, out_w});
    CMapR<T> wmat(weight.value().ptr(), cin, g.col_rows());
    std::vector<T> col(static_cast<std::size_t>(g.col_rows() * g.col_cols()));
    for (std::int64_t b = 0; b < batch; ++b) {
        MapR<T> c(col.data(), g.col_rows(), g.col_cols());
        c.noalias() = wmat.transpose() * CMapR<T>(input.value().ptr() + b * cin * in_plane, cin, in_plane);
        col2im_add(col.data(), g, out.ptr() + b * cout * out_h * out_w);
    }
    if (bias.defined()) {
        for (std::int64_t b = 0; b < batch; ++b) {
            for (std::int64_t c = 0; c < cout; ++c) {
                T* plane = out.ptr() + (b * cout + c) * out_h * out_w;
                for (std::int64_t i = 0; i < out_h * out_w; ++i) plane[i] += bias.value()[c];
            }
        }
    }

    std::vector<BasicVar<T>> inputs{input, weight};
    if (bias.defined()) inputs.push_back(bias);
    return make_result<T>(std::move(out), std::move(inputs), [g, batch, cin, cout, in_plane](Node<T>& self) {
        const bool want_x = wants(self, 0), want_w = wants(self, 1), want_b = wants(self, 2);
        const auto& wv = self.parents[1]->value;
        const auto& xv = self.parents[0]->value;
        CMapR<T> wmat(wv.ptr(), cin, g.col_rows());
        std::vector<T> dcol(static_cast<std::size_t>(g.col_rows() * g.col_cols()));
        const std::int64_t out_plane = g.height * g.width;
        for (std::int64_t b = 0; b < batch; ++b) {
            if (want_x || want_w) {
                im2col(self.grad.ptr() + b * cout * out_plane, g, dcol.data());
                CMapR<T> dc(dcol.data(), g.col_rows(), g.col_cols());
                if (want_x) {
                    MapR<T> dx(self.parents[0]->grad_buffer().ptr() + b * cin * in_plane, cin, in_plane);
                    dx.noalias() += wmat * dc;
                }
                if (want_w) {
                    MapR<T> dw(self.parents[1]->grad_buffer().ptr(), cin, g.col_rows());
                    dw.noalias() += CMapR<T>(xv.ptr() + b * cin * in_plane, cin, in_plane) * dc.transpose();
                }
            }
            if (want_b) {
                auto& db = self.parents[2]->grad_buffer();
                for (std::int64_t c = 0; c < cout; ++c) {
                    const T* plane = self.grad.ptr() + (b * cout + c) * out_plane;
                    T acc = 0;
                    for (std::int64_t i = 0; i < out_plane; ++i) acc += plane[i];
                    db[c] += acc;
                }
            }
        }
    });
}

template <class T>
BasicVar<T> dense(const BasicVar<T>& input, const BasicVar<T>& weight, const BasicVar<T>& bias) {
    require_rank(input, 2, "dense", "input");
    require_rank(weight, 2, "dense", "weight");
    const std::int64_t batch = input.shape()[0], n = input.shape()[1], m = weight.shape()[0];
    if (weight.shape()[1] != n) {
        throw ShapeError("dense: input dimension 1 is " + std::to_string(n) + " but weight dimension 1 is " +
                         std::to_string(weight.shape()[1]));
    }
    if (bias.defined() && (bias.value().rank() != 1 || bias.shape()[0] != m)) {
        throw ShapeError("dense: bias dimension 0 must be " + std::to_string(m));
    }
    BasicTensor<T> out({batch, m});
    MapR<T> o(out.ptr(), batch, m);
    o.noalias() = CMapR<T>(input.value().ptr(), batch, n) * CMapR<T>(weight.value().ptr(), m, n).transpose();
    if (bias.defined()) {
        for (std::int64_t b = 0; b < batch; ++b) {
            for (std::int64_t j = 0; j < m; ++j) o(b, j) += bias.value()[j];
        }
    }
    std::vector<BasicVar<T>> inputs{input, weight};
    if (bias.defined()) inputs.push_back(bias);
    return make_result<T>(std::move(out), std::move(inputs), [batch, n, m](Node<T>& self) {
        CMapR<T> dy(self.grad.ptr(), batch, m);
        if (wants(self, 0)) {
            MapR<T> dx(self.parents[0]->grad_buffer().ptr(), batch, n);
            dx.noalias() += dy * CMapR<T>(self.parents[1]->value.ptr(), m, n);
        }
        if (wants(self, 1)) {
            MapR<T> dw(self.parents[1]->grad_buffer().ptr(), m, n);
            dw.noalias() += dy.transpose() * CMapR<T>(self.parents[0]->value.ptr(), batch, n);
        }
        if (wants(self, 2)) {
            auto& db = self.parents[2]->grad_buffer();
            for (std::int64_t j = 0; j < m; ++j) db[j] += dy.col(j).sum();
        }
    });
}

template <class T>
BasicVar<T> leaky_relu(const BasicVar<T>& x, T slope) {
    BasicTensor<T> out = x.value();
    for (auto& v : out.data()) v = v > T(0) ? v : v * slope;
    return make_result<T>(std::move(out), {x}, [slope](Node<T>& self) {
        const auto& xv = self.parents[0]->value;
        auto& g = self.parents[0]->grad_buffer();
        for (std::int64_t i = 0; i < g.numel(); ++i) g[i] += xv[i] > T(0) ? self.grad[i] : slope * self.grad[i];
    });
}

template <class T>
BasicVar<T> relu(const BasicVar<T>& x) {
    return leaky_relu(x, T(0));
}

template <class T>
BasicVar<T> sigmoid(const BasicVar<T>& x) {
    BasicTensor<T> out = x.value();
    for (auto& v : out.data()) {
        v = v >= T(0) ? T(1) / (T(1) + std::exp(-v)) : std::exp(v) / (T(1) + std::exp(v));
    }
    return make_result<T>(std::move(out), {x}, [](Node<T>& self) {
        auto& g = self.parents[0]->grad_buffer();
        for (std::int64_t i = 0; i < g.numel(); ++i) {
            const T s = self.value[i];
            g[i] += self.grad[i] * s * (T(1) - s);
        }
    });
}

template <class T>
BasicVar<T> global_avg_pool(const BasicVar<T>& x) {
    require_rank(x, 4, "global_avg_pool", "input");
    const auto& s = x.shape();
    const std::int64_t bc = s[0] * s[1], plane = s[2] * s[3];
    BasicTensor<T> out({s[0], s[1]});
    for (std::int64_t i = 0; i < bc; ++i) {
        T acc = 0;
        for (std::int64_t j = 0; j < plane; ++j) acc += x.value()[i * plane + j];
        out[i] = acc / static_cast<T>(plane);
    }
    return make_result<T>(std::move(out), {x}, [bc, plane](Node<T>& self) {
        auto& g = self.parents[0]->grad_buffer();
        for (std::int64_t i = 0; i < bc; ++i) {
            const T share = self.grad[i] / static_cast<T>(plane);
            for (std::int64_t j = 0; j < plane; ++j) g[i * plane + j] += share;
        }
    });
}

template <class T>
BasicVar<T> concat_channels(const BasicVar<T>& a, const BasicVar<T>& b) {
    require_rank(a, 4, "concat_channels", "first input");
    require_rank(b, 4, "concat_channels", "second input");
    const auto& sa = a.shape();
    const auto& sb = b.shape();
    for (std::size_t d : {0u, 2u, 3u}) {
        if (sa[d] != sb[d]) {
            throw ShapeError("concat_channels: dimension " + std::to_string(d) + " differs (" +
                             std::to_string(sa[d]) + " vs " + std::to_string(sb[d]) + ")");
        }
    }
    const std::int64_t plane = sa[2] * sa[3], ca = sa[1], cb = sb[1];
    BasicTensor<T> out({sa[0], ca + cb, sa[2], sa[3]});
    for (std::int64_t n = 0; n < sa[0]; ++n) {
        std::copy_n(a.value().ptr() + n * ca * plane, ca * plane, out.ptr() + n * (ca + cb) * plane);
        std::copy_n(b.value().ptr() + n * cb * plane, cb * plane, out.ptr() + (n * (ca + cb) + ca) * plane);
    }
    return make_result<T>(std::move(out), {a, b}, [batch = sa[0], plane, ca, cb](Node<T>& self) {
        for (std::int64_t n = 0; n < batch; ++n) {
            const T* src = self.grad.ptr() + n * (ca + cb) * plane;
            if (wants(self, 0)) {
                T* dst = self.parents[0]->grad_buffer().ptr() + n * ca * plane;
                for (std::int64_t i = 0; i < ca * plane; ++i) dst[i] += src[i];
            }
            if (wants(self, 1)) {
                T* dst = self.parents[1]->grad_buffer().ptr() + n * cb * plane;
                for (std::int64_t i = 0; i < cb * plane; ++i) dst[i] += src[ca * plane + i];
            }
        }
    });
}

template <class T>
BasicVar<T> channel_normalize(const BasicVar<T>& x, T eps) {
    require_rank(x, 4, "channel_normalize", "input");
    const auto& s = x.shape();
    const std::int64_t channels = s[1], plane = s[2] * s[3];
    BasicTensor<T> out = x.value();
    BasicTensor<T> norms({s[0], plane});
    for (std::int64_t n = 0; n < s[0]; ++n) {
        for (std::int64_t p = 0; p < plane; ++p) {
            T acc = 0;
            for (std::int64_t c = 0; c < channels; ++c) {
                const T v = out[(n * channels + c) * plane + p];
                acc += v * v;
            }
            const T norm = std::sqrt(acc + eps);
            norms[n * plane + p] = norm;
            for (std::int64_t c = 0; c < channels; ++c) out[(n * channels + c) * plane + p] /= norm;
        }
    }
    return make_result<T>(std::move(out), {x}, [batch = s[0], channels, plane,
                                                 norms = std::move(norms)](Node<T>& self) {
        auto& g = self.parents[0]->grad_buffer();
        for (std::int64_t n = 0; n < batch; ++n) {
            for (std::int64_t p = 0; p < plane; ++p) {
                T dot = 0;
                for (std::int64_t c = 0; c < channels; ++c) {
                    const auto i = (n * channels + c) * plane + p;
                    dot += self.value[i] * self.grad[i];
                }
                const T norm = norms[n * plane + p];
                for (std::int64_t c = 0; c < channels; ++c) {
                    const auto i = (n * channels + c) * plane + p;
                    g[i] += (self.grad[i] - self.value[i] * dot) / norm;
                }
            }
        }
    });
}

template <class T>
BasicVar<T> mse(const BasicVar<T>& a, const BasicVar<T>& b) {
    check_same_shape(a, b, "mse");
    const std::int64_t n = a.value().numel();
    T acc = 0;
    for (std::int64_t i = 0; i < n; ++i) {
        const T d = a.value()[i] - b.value()[i];
        acc += d * d;
    }
    return make_result<T>(BasicTensor<T>({1}, {acc / static_cast<T>(n)}), {a, b}, [n](Node<T>& self) {
        const auto& av = self.parents[0]->value;
        const auto& bv = self.parents[1]->value;
        const T k = T(2) * self.grad[0] / static_cast<T>(n);
        if (wants(self, 0)) {
            auto& g = self.parents[0]->grad_buffer();
            for (std::int64_t i = 0; i < n; ++i) g[i] += k * (av[i] - bv[i]);
        }
        if (wants(self, 1)) {
            auto& g = self.parents[1]->grad_buffer();
            for (std::int64_t i = 0; i < n; ++i) g[i] -= k * (av[i] - bv[i]);
        }
    });
}

template <class T>
BasicVar<T> l1(const BasicVar<T>& a, const BasicVar<T>& b) {
    check_same_shape(a, b, "l1");
    const std::int64_t n = a.value().numel();
    T acc = 0;
    for (std::int64_t i = 0; i < n; ++i) acc += std::abs(a.value()[i] - b.value()[i]);
    return make_result<T>(BasicTensor<T>({1}, {acc / static_cast<T>(n)}), {a, b}, [n](Node<T>& self) {
        const auto& av = self.parents[0]->value;
        const auto& bv = self.parents[1]->value;
        const T k = self.grad[0] / static_cast<T>(n);
        for (std::int64_t i = 0; i < n; ++i) {
            const T d = av[i] - bv[i];
            const T s = d > T(0) ? k : (d < T(0) ? -k : T(0));
            if (wants(self, 0)) self.parents[0]->grad_buffer()[i] += s;
            if (wants(self, 1)) self.parents[1]->grad_buffer()[i] -= s;
        }
    });
}

template <class T>
BasicVar<T> bce(const BasicVar<T>& prob, const BasicTensor<T>& labels, T margin) {
    const std::int64_t n = prob.value().numel();
    if (labels.numel() != n) {
        throw ShapeError("bce: " + std::to_string(labels.numel()) + " labels for " + std::to_string(n) +
                         " probabilities");
    }
    T acc = 0;
    for (std::int64_t i = 0; i < n; ++i) {
        const T p = prob.value()[i];
        if (!(p >= T(0) && p <= T(1))) {
            throw NumericError("bce: probability " + std::to_string(static_cast<double>(p)) +
                               " outside [0, 1] (missing sigmoid?)");
        }
        const T y = labels[i];
        if (y != T(0) && y != T(1)) throw DataError("bce: labels must be 0 or 1");
        const T pc = std::clamp(p, margin, T(1) - margin);
        acc += -(y * std::log(pc) + (T(1) - y) * std::log(T(1) - pc));
    }
    return make_result<T>(BasicTensor<T>({1}, {acc / static_cast<T>(n)}), {prob},
                          [n, margin, labels](Node<T>& self) {
        const auto& pv = self.parents[0]->value;
        auto& g = self.parents[0]->grad_buffer();
        const T k = self.grad[0] / static_cast<T>(n);
        for (std::int64_t i = 0; i < n; ++i) {
            const T pc = std::clamp(pv[i], margin, T(1) - margin);
            const T y = labels[i];
            g[i] += k * (-y / pc + (T(1) - y) / (T(1) - pc));
        }
    });
}

template <class T>
BasicVar<T> bce_with_logits(const BasicVar<T>& logits, const BasicTensor<T>& labels) {
    const std::int64_t n = logits.value().numel();
    if (labels.numel() != n) {
        throw ShapeError("bce_with_logits: " + std::to_string(labels.numel()) + " labels for " + std::to_string(n) +
                         " logits");
    }
    double acc = 0.0;
    for (std::int64_t i = 0; i < n; ++i) {
        const double x = static_cast<double>(logits.value()[i]);
        if (!std::isfinite(x)) throw NumericError("bce_with_logits: non-finite logit");
        const T y = labels[i];
        if (y != T(0) && y != T(1)) throw DataError("bce_with_logits: labels must be 0 or 1");
        acc += std::max(x, 0.0) - x * static_cast<double>(y) + std::log1p(std::exp(-std::abs(x)));
    }
    return make_result<T>(BasicTensor<T>({1}, {static_cast<T>(acc / static_cast<double>(n))}), {logits},
                          [n, labels](Node<T>& self) {
        const auto& xv = self.parents[0]->value;
        auto& g = self.parents[0]->grad_buffer();
        const T k = self.grad[0] / static_cast<T>(n);
        for (std::int64_t i = 0; i < n; ++i) {
            const double s = 1.0 / (1.0 + std::exp(-static_cast<double>(xv[i])));
            g[i] += k * static_cast<T>(s - static_cast<double>(labels[i]));
        }
    });
}

#define GSHIELD_INSTANTIATE_OPS(T)                                                                    \
    template BasicVar<T> add(const BasicVar<T>&, const BasicVar<T>&);                                 \
    template BasicVar<T> sub(const BasicVar<T>&, const BasicVar<T>&);                                 \
    template BasicVar<T> mul(const BasicVar<T>&, const BasicVar<T>&);                                 \
    template BasicVar<T> scale(const BasicVar<T>&, T);                                                \
    template BasicVar<T> sum(const BasicVar<T>&);                                                     \
    template BasicVar<T> mean(const BasicVar<T>&);                                                    \
    template BasicVar<T> reshape(const BasicVar<T>&, Shape);                                          \
    template BasicVar<T> conv2d(const BasicVar<T>&, const BasicVar<T>&, const BasicVar<T>&, int, int); \
    template BasicVar<T> conv_transpose2d(const BasicVar<T>&, const BasicVar<T>&, const BasicVar<T>&,  \
                                          int, int);                                                  \
    template BasicVar<T> dense(const BasicVar<T>&, const BasicVar<T>&, const BasicVar<T>&);           \
    template BasicVar<T> relu(const BasicVar<T>&);                                                    \
    template BasicVar<T> leaky_relu(const BasicVar<T>&, T);                                           \
    template BasicVar<T> sigmoid(const BasicVar<T>&);                                                 \
    template BasicVar<T> global_avg_pool(const BasicVar<T>&);                                         \
    template BasicVar<T> concat_channels(const BasicVar<T>&, const BasicVar<T>&);                     \
    template BasicVar<T> channel_normalize(const BasicVar<T>&, T);                                    \
    template BasicVar<T> l1(const BasicVar<T>&, const BasicVar<T>&);                                  \
    template BasicVar<T> mse(const BasicVar<T>&, const BasicVar<T>&);                                 \
    template BasicVar<T> bce(const BasicVar<T>&, const BasicTensor<T>&, T);                          \
    template BasicVar<T> bce_with_logits(const BasicVar<T>&, const BasicTensor<T>&);

GSHIELD_INSTANTIATE_OPS(float)
GSHIELD_INSTANTIATE_OPS(double)
#undef GSHIELD_INSTANTIATE_OPS

} // namespace ops

template class BasicVar<float>;
template class BasicVar<double>;

} // namespace gshield
