// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <memory>
#include <numbers>
#include <span>
#include <utility>
#include <vector>

#include "dyncast/tensor.hpp"

namespace dyncast {

// Handle into a Tape's node list.
struct Value {
    int id = -1;
    bool valid() const { return id >= 0; }
};

namespace detail {

// C(m x n) += A(m x k) * B(k x n)
inline void mm_acc(const double* a, const double* b, double* c, std::size_t m,
                   std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
            const double aip = a[i * k + p];
            if (aip == 0.0) continue;
            const double* brow = b + p * n;
            double* crow = c + i * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
        }
    }
}

// C(m x n) += A(m x k) * B(n x k)^T
inline void mm_nt_acc(const double* a, const double* b, double* c, std::size_t m,
                      std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            double acc = 0.0;
            const double* arow = a + i * k;
            const double* brow = b + j * k;
            for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
            c[i * n + j] += acc;
        }
    }
}

// C(m x n) += A(k x m)^T * B(k x n)
inline void mm_tn_acc(const double* a, const double* b, double* c, std::size_t m,
                      std::size_t k, std::size_t n) {
    for (std::size_t p = 0; p < k; ++p) {
        const double* arow = a + p * m;
        const double* brow = b + p * n;
        for (std::size_t i = 0; i < m; ++i) {
            const double api = arow[i];
            if (api == 0.0) continue;
            double* crow = c + i * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += api * brow[j];
        }
    }
}

// Standard normal CDF and density, for exact GELU.
inline double gelu_phi(double x) {
    return 0.5 * (1.0 + std::erf(x / std::numbers::sqrt2_v<double>));
}

inline double gelu_density(double x) {
    constexpr double inv_sqrt_2pi = 0.3989422804014326779;
    return std::exp(-0.5 * x * x) * inv_sqrt_2pi;
}

}  // namespace detail

// Reverse-mode tape. Ops append nodes as they execute; backward() sweeps the
// recorded graph from a scalar root in reverse creation order. One tape per
// forward/backward pass; tapes are single-threaded.
class Tape {
  public:
    Value leaf(TensorBuffer v) { return push("leaf", std::move(v), {}, nullptr); }

    Value leaf_scalar(double s) {
        return leaf(TensorBuffer({1}, std::vector<double>{s}));
    }

    const TensorBuffer& value(Value v) const { return node_at(v).out; }

    std::span<const double> grad(Value v) const {
        const Node& n = node_at(v);
        require(n.grad.size() == n.out.size(), "gradient not computed; call backward() first");
        return n.grad;
    }

    std::size_t node_count() const { return nodes_.size(); }

    // Seeds d(root)/d(root) = 1 and accumulates gradients into every node.
    void backward(Value root) {
        Node& r = node_at(root);
        require(r.out.size() == 1, "backward requires a scalar root, got shape ",
                shape_str(r.out.shape));
        for (Node& n : nodes_) n.grad.assign(n.out.size(), 0.0);
        r.grad[0] = 1.0;
        for (int id = root.id; id >= 0; --id) {
            Node& n = nodes_[static_cast<std::size_t>(id)];
            if (n.back) n.back(*this, id);
        }
    }

    // ---- ops ----

    Value matmul(Value a, Value b) {
        const TensorBuffer& ta = value(a);
        const TensorBuffer& tb = value(b);
        require(ta.rank() == 2 && tb.rank() == 2 && ta.cols() == tb.rows(),
                "matmul shape mismatch: ", shape_str(ta.shape), " * ", shape_str(tb.shape));
        const std::size_t m = ta.rows(), k = ta.cols(), n = tb.cols();
        TensorBuffer out({m, n});
        detail::mm_acc(ta.values.data(), tb.values.data(), out.values.data(), m, k, n);
        return push("matmul", std::move(out), {a.id, b.id}, [m, k, n](Tape& t, int self) {
            Node& s = t.nodes_[self];
            Node& na = t.nodes_[s.inputs[0]];
            Node& nb = t.nodes_[s.inputs[1]];
            // dA += G * B^T, dB += A^T * G
            detail::mm_nt_acc(s.grad.data(), nb.out.values.data(), na.grad.data(), m, n, k);
            detail::mm_tn_acc(na.out.values.data(), s.grad.data(), nb.grad.data(), k, m, n);
        });
    }

    Value transpose(Value x) {
        const TensorBuffer& tx = value(x);
        require(tx.rank() == 2, "transpose expects a matrix, got ", shape_str(tx.shape));
        const std::size_t m = tx.rows(), n = tx.cols();
        TensorBuffer out({n, m});
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) out.values[j * m + i] = tx.values[i * n + j];
        return push("transpose", std::move(out), {x.id}, [m, n](Tape& t, int self) {
            Node& s = t.nodes_[self];
            Node& nx = t.nodes_[s.inputs[0]];
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j)
                    nx.grad[i * n + j] += s.grad[j * m + i];
        });
    }

    Value add(Value a, Value b) {
        const TensorBuffer& ta = value(a);
        const TensorBuffer& tb = value(b);
        require(ta.same_shape(tb), "add shape mismatch: ", shape_str(ta.shape), " vs ",
                shape_str(tb.shape));
        TensorBuffer out = ta;
        for (std::size_t i = 0; i < out.size(); ++i) out.values[i] += tb.values[i];
        return push("add", std::move(out), {a.id, b.id}, [](Tape& t, int self) {
            Node& s = t.nodes_[self];
            Node& na = t.nodes_[s.inputs[0]];
            Node& nb = t.nodes_[s.inputs[1]];
            for (std::size_t i = 0; i < s.grad.size(); ++i) {
                na.grad[i] += s.grad[i];
                nb.grad[i] += s.grad[i];
            }
        });
    }

    Value sub(Value a, Value b) {
        const TensorBuffer& ta = value(a);
        const TensorBuffer& tb = value(b);
        require(ta.same_shape(tb), "sub shape mismatch: ", shape_str(ta.shape), " vs ",
                shape_str(tb.shape));
        TensorBuffer out = ta;
        for (std::size_t i = 0; i < out.size(); ++i) out.values[i] -= tb.values[i];
        return push("sub", std::move(out), {a.id, b.id}, [](Tape& t, int self) {
            Node& s = t.nodes_[self];
            Node& na = t.nodes_[s.inputs[0]];
            Node& nb = t.nodes_[s.inputs[1]];
            for (std::size_t i = 0; i < s.grad.size(); ++i) {
                na.grad[i] += s.grad[i];
                nb.grad[i] -= s.grad[i];
            }
        });
    }

    Value scale(Value x, double s) { return affine(x, s, 0.0); }

    // mul * x + shift, elementwise with scalar coefficients.
    Value affine(Value x, double mul, double shift) {
        TensorBuffer out = value(x);
        for (double& v : out.values) v = mul * v + shift;
        return push("affine", std::move(out), {x.id}, [mul](Tape& t, int self) {
            Node& s = t.nodes_[self];
            Node& nx = t.nodes_[s.inputs[0]];
            for (std::size_t i = 0; i < s.grad.size(); ++i) nx.grad[i] += mul * s.grad[i];
        });
    }

    // Elementwise product with a constant tensor (no gradient into the constant).
    Value mul_const(Value x, TensorBuffer c) {
        const TensorBuffer& tx = value(x);
        require(tx.same_shape(c), "mul_const shape mismatch: ", shape_str(tx.shape),
                " vs ", shape_str(c.shape));
        TensorBuffer out = tx;
        for (std::size_t i = 0; i < out.size(); ++i) out.values[i] *= c.values[i];
        auto cv = std::make_shared<std::vector<double>>(std::move(c.values));
        return push("mul_const", std::move(out), {x.id}, [cv](Tape& t, int self) {
            Node& s = t.nodes_[self];
            Node& nx = t.nodes_[s.inputs[0]];
            for (std::size_t i = 0; i < s.grad.size(); ++i) nx.grad[i] += s.grad[i] * (*cv)[i];
        });
    }

    // x (m x n) with v (length n) added to every row.
    Value add_row_vector(Value x, Value v) {
        const TensorBuffer& tx = value(x);
        const TensorBuffer& tv = value(v);
        require(tx.rank() == 2 && tv.size() == tx.cols(), "add_row_vector mismatch: ",
                shape_str(tx.shape), " vs ", shape_str(tv.shape));
        const std::size_t m = tx.rows(), n = tx.cols();
        TensorBuffer out = tx;
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) out.values[i * n + j] += tv.values[j];
        return push("add_row_vector", std::move(out), {x.id, v.id}, [m, n](Tape& t, int self) {
            Node& s = t.nodes_[self];
            Node& nx = t.nodes_[s.inputs[0]];
            Node& nv = t.nodes_[s.inputs[1]];
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j) {
                    nx.grad[i * n + j] += s.grad[i * n + j];
                    nv.grad[j] += s.grad[i * n + j];
                }
        });
    }

    // x (m x n) with v (length m) added to every column.
    Value add_col_vector(Value x, Value v) {
        const TensorBuffer& tx = value(x);
        const TensorBuffer& tv = value(v);
        require(tx.rank() == 2 && tv.size() == tx.rows(), "add_col_vector mismatch: ",
                shape_str(tx.shape), " vs ", shape_str(tv.shape));
        const std::size_t m = tx.rows(), n = tx.cols();
        TensorBuffer out = tx;
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) out.values[i * n + j] += tv.values[i];
        return push("add_col_vector", std::move(out), {x.id, v.id}, [m, n](Tape& t, int self) {
            Node& s = t.nodes_[self];
            Node& nx = t.nodes_[s.inputs[0]];
            Node& nv = t.nodes_[s.inputs[1]];
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j) {
                    nx.grad[i * n + j] += s.grad[i * n + j];
                    nv.grad[i] += s.grad[i * n + j];
                }
        });
    }

    // Row-wise softmax with max subtraction. Rejects NaN input.
    Value softmax_rows(Value x) {
        const TensorBuffer& tx = value(x);
        require(tx.rank() == 2, "softmax_rows expects a matrix, got ", shape_str(tx.shape));
        for (double v : tx.values)
            require(!std::isnan(v), "softmax_rows rejects NaN input");
        const std::size_t m = tx.rows(), n = tx.cols();
        TensorBuffer out({m, n});
        for (std::size_t i = 0; i < m; ++i) {
            const double* row = tx.values.data() + i * n;
            double mx = row[0];
            for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, row[j]);
            double sum = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
                const double e = std::exp(row[j] - mx);
                out.values[i * n + j] = e;
                sum += e;
            }
            for (std::size_t j = 0; j < n; ++j) out.values[i * n + j] /= sum;
        }
        return push("softmax_rows", std::move(out), {x.id}, [m, n](Tape& t, int self) {
            Node& s = t.nodes_[self];
            Node& nx = t.nodes_[s.inputs[0]];
            for (std::size_t i = 0; i < m; ++i) {
                const double* y = s.out.values.data() + i * n;
                const double* g = s.grad.data() + i * n;
                double dot = 0.0;
                for (std::size_t j = 0; j < n; ++j) dot += g[j] * y[j];
                for (std::size_t j = 0; j < n; ++j)
                    nx.grad[i * n + j] += y[j] * (g[j] - dot);
            }
        });
    }

    // Last-axis layer normalization with learnable gain and shift.
    Value layer_norm(Value x, Value gain, Value shift, double eps) {
        const TensorBuffer& tx = value(x);
        const TensorBuffer& tg = value(gain);
        const TensorBuffer& tb = value(shift);
        require(tx.rank() >= 1, "layer_norm needs at least one axis");
        const std::size_t d = tx.shape.back();
        require(d >= 1 && tg.size() == d && tb.size() == d,
                "layer_norm parameter mismatch: x ", shape_str(tx.shape), ", gain ",
                shape_str(tg.shape), ", shift ", shape_str(tb.shape));
        const std::size_t rows = tx.size() / d;
        TensorBuffer out = tx;
        std::vector<double> inv_std(rows), norm(tx.size());
        for (std::size_t r = 0; r < rows; ++r) {
            const double* row = tx.values.data() + r * d;
            double mean = 0.0;
            for (std::size_t j = 0; j < d; ++j) mean += row[j];
            mean /= static_cast<double>(d);
            double var = 0.0;
            for (std::size_t j = 0; j < d; ++j) {
                const double c = row[j] - mean;
                var += c * c;
            }
            var /= static_cast<double>(d);
            const double is = 1.0 / std::sqrt(var + eps);
            inv_std[r] = is;
            for (std::size_t j = 0; j < d; ++j) {
                const double y = (row[j] - mean) * is;
                norm[r * d + j] = y;
                out.values[r * d + j] = tg.values[j] * y + tb.values[j];
            }
        }
        auto aux = std::make_shared<std::pair<std::vector<double>, std::vector<double>>>(
            std::move(inv_std), std::move(norm));
        return push("layer_norm", std::move(out), {x.id, gain.id, shift.id},
                    [rows, d, aux](Tape& t, int self) {
                        Node& s = t.nodes_[self];
                        Node& nx = t.nodes_[s.inputs[0]];
                        Node& ng = t.nodes_[s.inputs[1]];
                        Node& nb = t.nodes_[s.inputs[2]];
                        const auto& [inv_std, norm] = *aux;
                        const TensorBuffer& tg = ng.out;
                        for (std::size_t r = 0; r < rows; ++r) {
                            const double* g = s.grad.data() + r * d;
                            const double* y = norm.data() + r * d;
                            double gsum = 0.0, gysum = 0.0;
                            for (std::size_t j = 0; j < d; ++j) {
                                const double gy = g[j] * tg.values[j];
                                gsum += gy;
                                gysum += gy * y[j];
                                ng.grad[j] += g[j] * y[j];
                                nb.grad[j] += g[j];
                            }
                            gsum /= static_cast<double>(d);
                            gysum /= static_cast<double>(d);
                            for (std::size_t j = 0; j < d; ++j) {
                                const double gy = g[j] * tg.values[j];
                                nx.grad[r * d + j] += (gy - gsum - y[j] * gysum) * inv_std[r];
                            }
                        }
                    });
    }

    Value gelu(Value x) {
        const TensorBuffer& tx = value(x);
        TensorBuffer out = tx;
        for (double& v : out.values) v = v * detail::gelu_phi(v);
        return push("gelu", std::move(out), {x.id}, [](Tape& t, int self) {
            Node& s = t.nodes_[self];
            Node& nx = t.nodes_[s.inputs[0]];
            for (std::size_t i = 0; i < s.grad.size(); ++i) {
                const double v = nx.out.values[i];
                nx.grad[i] += s.grad[i] * (detail::gelu_phi(v) + v * detail::gelu_density(v));
            }
        });
    }

    // Non-overlapping row-wise max pooling; the final partial window is padded
    // with -inf. Gradient routes to each window's argmax (ties: lowest index).
    Value maxpool_1d(Value x, std::size_t window) {
        const TensorBuffer& tx = value(x);
        require(window >= 1, "maxpool_1d window must be >= 1, got ", window);
        require(tx.rank() == 2, "maxpool_1d expects a matrix, got ", shape_str(tx.shape));
        const std::size_t d = tx.rows(), n = tx.cols();
        const std::size_t out_n = (n + window - 1) / window;
        TensorBuffer out({d, out_n});
        auto argmax = std::make_shared<std::vector<std::size_t>>(d * out_n);
        for (std::size_t r = 0; r < d; ++r) {
            for (std::size_t w = 0; w < out_n; ++w) {
                double best = -std::numeric_limits<double>::infinity();
                std::size_t best_idx = w * window;
                const std::size_t end = std::min(n, (w + 1) * window);
                for (std::size_t j = w * window; j < end; ++j) {
                    const double v = tx.values[r * n + j];
                    if (v > best) {
                        best = v;
                        best_idx = j;
                    }
                }
                out.values[r * out_n + w] = best;
                (*argmax)[r * out_n + w] = best_idx;
            }
        }
        return push("maxpool_1d", std::move(out), {x.id},
                    [d, n, out_n, argmax](Tape& t, int self) {
                        Node& s = t.nodes_[self];
                        Node& nx = t.nodes_[s.inputs[0]];
                        for (std::size_t r = 0; r < d; ++r)
                            for (std::size_t w = 0; w < out_n; ++w)
                                nx.grad[r * n + (*argmax)[r * out_n + w]] +=
                                    s.grad[r * out_n + w];
                    });
    }

    // Stride-K transposed convolution, the adjoint of a stride-K convolution.
    // x: d_in x n, kernel: d_in x d_out x K, output: d_out x (n*K).
    // Only stride == kernel width (non-overlapping upsampling) is supported.
    Value conv_transpose_1d(Value x, Value kernel, std::size_t stride) {
        const TensorBuffer& tx = value(x);
        const TensorBuffer& tk = value(kernel);
        require(tx.rank() == 2 && tk.rank() == 3, "conv_transpose_1d expects x d_in x n and kernel d_in x d_out x K, got ",
                shape_str(tx.shape), " and ", shape_str(tk.shape));
        const std::size_t d_in = tx.rows(), n = tx.cols();
        const std::size_t d_out = tk.shape[1], kw = tk.shape[2];
        require(tk.shape[0] == d_in, "conv_transpose_1d kernel input extent ", tk.shape[0],
                " does not match x rows ", d_in);
        require(stride == kw, "conv_transpose_1d supports only stride == kernel width, got stride ",
                stride, " and width ", kw);
        TensorBuffer out({d_out, n * kw});
        for (std::size_t ci = 0; ci < d_in; ++ci)
            for (std::size_t p = 0; p < n; ++p) {
                const double xv = tx.values[ci * n + p];
                if (xv == 0.0) continue;
                for (std::size_t co = 0; co < d_out; ++co) {
                    const double* krow = tk.values.data() + (ci * d_out + co) * kw;
                    double* orow = out.values.data() + co * n * kw + p * kw;
                    for (std::size_t r = 0; r < kw; ++r) orow[r] += xv * krow[r];
                }
            }
        return push("conv_transpose_1d", std::move(out), {x.id, kernel.id},
                    [d_in, d_out, n, kw](Tape& t, int self) {
                        Node& s = t.nodes_[self];
                        Node& nx = t.nodes_[s.inputs[0]];
                        Node& nk = t.nodes_[s.inputs[1]];
                        for (std::size_t ci = 0; ci < d_in; ++ci)
                            for (std::size_t p = 0; p < n; ++p) {
                                const double xv = nx.out.values[ci * n + p];
                                double dx = 0.0;
                                for (std::size_t co = 0; co < d_out; ++co) {
                                    const double* krow =
                                        nk.out.values.data() + (ci * d_out + co) * kw;
                                    double* kgrad = nk.grad.data() + (ci * d_out + co) * kw;
                                    const double* grow =
                                        s.grad.data() + co * n * kw + p * kw;
                                    for (std::size_t r = 0; r < kw; ++r) {
                                        dx += grow[r] * krow[r];
                                        kgrad[r] += grow[r] * xv;
                                    }
                                }
                                nx.grad[ci * n + p] += dx;
                            }
                    });
    }

    // Rotates consecutive value pairs of each row: pair i of row r turns by
    // angles(r, i). angles has shape m x d/2 and is constant data.
    Value rotate_pairs(Value x, TensorBuffer angles) {
        const TensorBuffer& tx = value(x);
        require(tx.rank() == 2, "rotate_pairs expects a matrix, got ", shape_str(tx.shape));
        const std::size_t m = tx.rows(), d = tx.cols();
        require(d % 2 == 0, "rotate_pairs requires an even width, got ", d);
        require(angles.rank() == 2 && angles.rows() == m && angles.cols() == d / 2,
                "rotate_pairs angle shape ", shape_str(angles.shape), " does not match x ",
                shape_str(tx.shape));
        const std::size_t half = d / 2;
        auto cs = std::make_shared<std::vector<double>>(m * d);  // cos/sin interleaved
        for (std::size_t i = 0; i < m * half; ++i) {
            (*cs)[2 * i] = std::cos(angles.values[i]);
            (*cs)[2 * i + 1] = std::sin(angles.values[i]);
        }
        TensorBuffer out({m, d});
        for (std::size_t r = 0; r < m; ++r)
            for (std::size_t i = 0; i < half; ++i) {
                const double c = (*cs)[2 * (r * half + i)];
                const double s = (*cs)[2 * (r * half + i) + 1];
                const double x0 = tx.values[r * d + 2 * i];
                const double x1 = tx.values[r * d + 2 * i + 1];
                out.values[r * d + 2 * i] = c * x0 - s * x1;
                out.values[r * d + 2 * i + 1] = s * x0 + c * x1;
            }
        return push("rotate_pairs", std::move(out), {x.id}, [m, d, half, cs](Tape& t, int self) {
            Node& s_node = t.nodes_[self];
            Node& nx = t.nodes_[s_node.inputs[0]];
            for (std::size_t r = 0; r < m; ++r)
                for (std::size_t i = 0; i < half; ++i) {
                    const double c = (*cs)[2 * (r * half + i)];
                    const double s = (*cs)[2 * (r * half + i) + 1];
                    const double g0 = s_node.grad[r * d + 2 * i];
                    const double g1 = s_node.grad[r * d + 2 * i + 1];
                    nx.grad[r * d + 2 * i] += c * g0 + s * g1;
                    nx.grad[r * d + 2 * i + 1] += -s * g0 + c * g1;
                }
        });
    }

    Value concat_rows(std::span<const Value> parts) {
        require(!parts.empty(), "concat_rows needs at least one part");
        const std::size_t n = value(parts[0]).cols();
        std::size_t total = 0;
        std::vector<int> ids;
        std::vector<std::size_t> row_counts;
        for (Value p : parts) {
            const TensorBuffer& tp = value(p);
            require(tp.rank() == 2 && tp.cols() == n, "concat_rows column mismatch: ",
                    shape_str(tp.shape));
            total += tp.rows();
            ids.push_back(p.id);
            row_counts.push_back(tp.rows());
        }
        TensorBuffer out({total, n});
        std::size_t r0 = 0;
        for (Value p : parts) {
            const TensorBuffer& tp = value(p);
            std::copy(tp.values.begin(), tp.values.end(), out.values.begin() + r0 * n);
            r0 += tp.rows();
        }
        auto rows = std::make_shared<std::vector<std::size_t>>(std::move(row_counts));
        return push("concat_rows", std::move(out), std::move(ids), [n, rows](Tape& t, int self) {
            Node& s = t.nodes_[self];
            std::size_t r0 = 0;
            for (std::size_t k = 0; k < s.inputs.size(); ++k) {
                Node& np = t.nodes_[s.inputs[k]];
                const std::size_t cnt = (*rows)[k] * n;
                for (std::size_t i = 0; i < cnt; ++i) np.grad[i] += s.grad[r0 * n + i];
                r0 += (*rows)[k];
            }
        });
    }

    Value slice_rows(Value x, std::size_t row0, std::size_t nrows) {
        const TensorBuffer& tx = value(x);
        require(tx.rank() == 2 && row0 + nrows <= tx.rows(), "slice_rows [", row0, ", ",
                row0 + nrows, ") out of range for ", shape_str(tx.shape));
        const std::size_t n = tx.cols();
        TensorBuffer out({nrows, n});
        std::copy(tx.values.begin() + row0 * n, tx.values.begin() + (row0 + nrows) * n,
                  out.values.begin());
        return push("slice_rows", std::move(out), {x.id}, [row0, nrows, n](Tape& t, int self) {
            Node& s = t.nodes_[self];
            Node& nx = t.nodes_[s.inputs[0]];
            for (std::size_t i = 0; i < nrows * n; ++i) nx.grad[row0 * n + i] += s.grad[i];
        });
    }

    Value slice_cols(Value x, std::size_t col0, std::size_t ncols) {
        const TensorBuffer& tx = value(x);
        require(tx.rank() == 2 && col0 + ncols <= tx.cols(), "slice_cols [", col0, ", ",
                col0 + ncols, ") out of range for ", shape_str(tx.shape));
        const std::size_t m = tx.rows(), n = tx.cols();
        TensorBuffer out({m, ncols});
        for (std::size_t r = 0; r < m; ++r)
            std::copy(tx.values.begin() + r * n + col0, tx.values.begin() + r * n + col0 + ncols,
                      out.values.begin() + r * ncols);
        return push("slice_cols", std::move(out), {x.id}, [col0, ncols, m, n](Tape& t, int self) {
            Node& s = t.nodes_[self];
            Node& nx = t.nodes_[s.inputs[0]];
            for (std::size_t r = 0; r < m; ++r)
                for (std::size_t j = 0; j < ncols; ++j)
                    nx.grad[r * n + col0 + j] += s.grad[r * ncols + j];
        });
    }

    Value concat_cols(std::span<const Value> parts) {
        require(!parts.empty(), "concat_cols needs at least one part");
        const std::size_t m = value(parts[0]).rows();
        std::size_t total = 0;
        std::vector<int> ids;
        std::vector<std::size_t> col_counts;
        for (Value p : parts) {
            const TensorBuffer& tp = value(p);
            require(tp.rank() == 2 && tp.rows() == m, "concat_cols row mismatch: ",
                    shape_str(tp.shape));
            total += tp.cols();
            ids.push_back(p.id);
            col_counts.push_back(tp.cols());
        }
        TensorBuffer out({m, total});
        std::size_t c0 = 0;
        for (Value p : parts) {
            const TensorBuffer& tp = value(p);
            for (std::size_t r = 0; r < m; ++r)
                std::copy(tp.values.begin() + r * tp.cols(),
                          tp.values.begin() + (r + 1) * tp.cols(),
                          out.values.begin() + r * total + c0);
            c0 += tp.cols();
        }
        auto cols = std::make_shared<std::vector<std::size_t>>(std::move(col_counts));
        return push("concat_cols", std::move(out), std::move(ids),
                    [m, total, cols](Tape& t, int self) {
                        Node& s = t.nodes_[self];
                        std::size_t c0 = 0;
                        for (std::size_t k = 0; k < s.inputs.size(); ++k) {
                            Node& np = t.nodes_[s.inputs[k]];
                            const std::size_t nc = (*cols)[k];
                            for (std::size_t r = 0; r < m; ++r)
                                for (std::size_t j = 0; j < nc; ++j)
                                    np.grad[r * nc + j] += s.grad[r * total + c0 + j];
                            c0 += nc;
                        }
                    });
    }

    Value reshape(Value x, std::vector<std::size_t> new_shape) {
        const TensorBuffer& tx = value(x);
        TensorBuffer out(std::move(new_shape), tx.values);
        require(out.size() == tx.size(), "reshape cannot change element count");
        return push("reshape", std::move(out), {x.id}, [](Tape& t, int self) {
            Node& s = t.nodes_[self];
            Node& nx = t.nodes_[s.inputs[0]];
            for (std::size_t i = 0; i < s.grad.size(); ++i) nx.grad[i] += s.grad[i];
        });
    }

    Value sum_squares(Value x) {
        const TensorBuffer& tx = value(x);
        double acc = 0.0;
        for (double v : tx.values) acc += v * v;
        TensorBuffer out({1}, std::vector<double>{acc});
        return push("sum_squares", std::move(out), {x.id}, [](Tape& t, int self) {
            Node& s = t.nodes_[self];
            Node& nx = t.nodes_[s.inputs[0]];
            const double g = s.grad[0];
            for (std::size_t i = 0; i < nx.grad.size(); ++i)
                nx.grad[i] += 2.0 * nx.out.values[i] * g;
        });
    }

    Value add_scalars(std::span<const Value> parts) {
        require(!parts.empty(), "add_scalars needs at least one part");
        double acc = 0.0;
        std::vector<int> ids;
        for (Value p : parts) {
            const TensorBuffer& tp = value(p);
            require(tp.size() == 1, "add_scalars expects scalars, got ", shape_str(tp.shape));
            acc += tp.values[0];
            ids.push_back(p.id);
        }
        TensorBuffer out({1}, std::vector<double>{acc});
        return push("add_scalars", std::move(out), std::move(ids), [](Tape& t, int self) {
            Node& s = t.nodes_[self];
            for (int in : s.inputs) t.nodes_[in].grad[0] += s.grad[0];
        });
    }

  private:
    struct Node {
        const char* op;
        TensorBuffer out;
        std::vector<double> grad;
        std::vector<int> inputs;
        std::function<void(Tape&, int)> back;
    };

    Value push(const char* op, TensorBuffer out, std::vector<int> inputs,
               std::function<void(Tape&, int)> back) {
        for (int id : inputs)
            require(id >= 0 && id < static_cast<int>(nodes_.size()),
                    "op input does not belong to this tape");
        nodes_.push_back(Node{op, std::move(out), {}, std::move(inputs), std::move(back)});
        return Value{static_cast<int>(nodes_.size()) - 1};
    }

    const Node& node_at(Value v) const {
        require(v.valid() && v.id < static_cast<int>(nodes_.size()), "invalid tape value");
        return nodes_[static_cast<std::size_t>(v.id)];
    }

    Node& node_at(Value v) {
        require(v.valid() && v.id < static_cast<int>(nodes_.size()), "invalid tape value");
        return nodes_[static_cast<std::size_t>(v.id)];
    }

    std::vector<Node> nodes_;
};

}  // namespace dyncast
