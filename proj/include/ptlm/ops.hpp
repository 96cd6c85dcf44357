#pragma once

#include <cmath>
#include <cstdint>
#include <type_traits>
#include <vector>

#include "ptlm/tensor.hpp"

// Reverse-mode ops. Every op takes the tape first; pass nullptr for pure
// inference (nothing is recorded and outputs do not require grad). An entry
// is recorded only when some input requires grad, so dead subgraphs never
// reach the tape.

namespace ptlm {

namespace detail {

template <typename Real>
inline bool track(TapeT<Real>* tape, bool any_requires) {
    return tape != nullptr && any_requires;
}

}  // namespace detail

// c[m,n] = a[m,k] * b[k,n]
template <typename Real>
TensorT<Real> matmul(std::type_identity_t<TapeT<Real>*> tape, const TensorT<Real>& a, const TensorT<Real>& b) {
    if (a.shape().size() != 2 || b.shape().size() != 2 || a.cols() != b.rows())
        throw ShapeError("matmul: incompatible shapes " + TensorT<Real>::shape_string(a.shape()) +
                         " and " + TensorT<Real>::shape_string(b.shape()));
    const int m = a.rows(), k = a.cols(), n = b.cols();
    TensorT<Real> c = TensorT<Real>::zeros({m, n});
    {
        const Real* pa = a.values().data();
        const Real* pb = b.values().data();
        Real* pc = c.values().data();
        for (int i = 0; i < m; ++i)
            for (int l = 0; l < k; ++l) {
                const Real av = pa[i * k + l];
                const Real* rb = pb + l * n;
                Real* rc = pc + i * n;
                for (int j = 0; j < n; ++j) rc[j] += av * rb[j];
            }
    }
    if (detail::track(tape, a.requires_grad() || b.requires_grad())) {
        c.set_requires_grad(true);
        auto an = a.node_ptr(), bn = b.node_ptr(), cn = c.node_ptr();
        tape->record(c, [an, bn, cn, m, k, n](GradMapT<Real>& g) {
            const std::vector<Real>& dc = *find_flow(g, cn.get());
            // dA = dC * B^T
            {
                std::vector<Real>& da = flow_into(g, an.get());
                const Real* pb = bn->data.data();
                for (int i = 0; i < m; ++i)
                    for (int l = 0; l < k; ++l) {
                        Real acc = 0;
                        const Real* rdc = dc.data() + i * n;
                        const Real* rb = pb + l * n;
                        for (int j = 0; j < n; ++j) acc += rdc[j] * rb[j];
                        da[i * k + l] += acc;
                    }
            }
            // dB = A^T * dC
            {
                std::vector<Real>& db = flow_into(g, bn.get());
                const Real* pa = an->data.data();
                for (int i = 0; i < m; ++i)
                    for (int l = 0; l < k; ++l) {
                        const Real av = pa[i * k + l];
                        const Real* rdc = dc.data() + i * n;
                        Real* rdb = db.data() + l * n;
                        for (int j = 0; j < n; ++j) rdb[j] += av * rdc[j];
                    }
            }
        });
    }
    return c;
}

template <typename Real>
TensorT<Real> transpose(std::type_identity_t<TapeT<Real>*> tape, const TensorT<Real>& x) {
    if (x.shape().size() != 2)
        throw ShapeError("transpose: need 2-d tensor, got " + TensorT<Real>::shape_string(x.shape()));
    const int m = x.rows(), n = x.cols();
    TensorT<Real> y = TensorT<Real>::zeros({n, m});
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) y.at(j, i) = x.at(i, j);
    if (detail::track(tape, x.requires_grad())) {
        y.set_requires_grad(true);
        auto xn = x.node_ptr(), yn = y.node_ptr();
        tape->record(y, [xn, yn, m, n](GradMapT<Real>& g) {
            const std::vector<Real>& dy = *find_flow(g, yn.get());
            std::vector<Real>& dx = flow_into(g, xn.get());
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < n; ++j) dx[i * n + j] += dy[j * m + i];
        });
    }
    return y;
}

// y = x[:, offset : offset+width]
template <typename Real>
TensorT<Real> slice_cols(std::type_identity_t<TapeT<Real>*> tape, const TensorT<Real>& x, int offset, int width) {
    if (x.shape().size() != 2 || offset < 0 || width < 0 || offset + width > x.cols())
        throw ShapeError("slice_cols: slice [" + std::to_string(offset) + ", " +
                         std::to_string(offset + width) + ") out of " + TensorT<Real>::shape_string(x.shape()));
    const int m = x.rows(), n = x.cols();
    TensorT<Real> y = TensorT<Real>::zeros({m, width});
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < width; ++j) y.at(i, j) = x.at(i, offset + j);
    if (detail::track(tape, x.requires_grad())) {
        y.set_requires_grad(true);
        auto xn = x.node_ptr(), yn = y.node_ptr();
        tape->record(y, [xn, yn, m, n, offset, width](GradMapT<Real>& g) {
            const std::vector<Real>& dy = *find_flow(g, yn.get());
            std::vector<Real>& dx = flow_into(g, xn.get());
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < width; ++j) dx[i * n + offset + j] += dy[i * width + j];
        });
    }
    return y;
}

// Column-wise concatenation of equal-row parts.
template <typename Real>
TensorT<Real> concat_cols(std::type_identity_t<TapeT<Real>*> tape, const std::vector<TensorT<Real>>& parts) {
    if (parts.empty()) throw ShapeError("concat_cols: no parts");
    const int m = parts[0].rows();
    int total = 0;
    bool any_grad = false;
    for (const auto& p : parts) {
        if (p.shape().size() != 2 || p.rows() != m)
            throw ShapeError("concat_cols: row mismatch at part shaped " + TensorT<Real>::shape_string(p.shape()));
        total += p.cols();
        any_grad = any_grad || p.requires_grad();
    }
    TensorT<Real> y = TensorT<Real>::zeros({m, total});
    int off = 0;
    for (const auto& p : parts) {
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < p.cols(); ++j) y.at(i, off + j) = p.at(i, j);
        off += p.cols();
    }
    if (detail::track(tape, any_grad)) {
        y.set_requires_grad(true);
        std::vector<std::shared_ptr<NodeT<Real>>> ins;
        std::vector<int> widths;
        for (const auto& p : parts) {
            ins.push_back(p.node_ptr());
            widths.push_back(p.cols());
        }
        auto yn = y.node_ptr();
        tape->record(y, [ins, widths, yn, m, total](GradMapT<Real>& g) {
            const std::vector<Real>& dy = *find_flow(g, yn.get());
            int off2 = 0;
            for (std::size_t p = 0; p < ins.size(); ++p) {
                std::vector<Real>& dx = flow_into(g, ins[p].get());
                for (int i = 0; i < m; ++i)
                    for (int j = 0; j < widths[p]; ++j) dx[i * widths[p] + j] += dy[i * total + off2 + j];
                off2 += widths[p];
            }
        });
    }
    return y;
}

// Row-wise concatenation; a may have zero rows (empty prompt prefix).
template <typename Real>
TensorT<Real> concat_rows(std::type_identity_t<TapeT<Real>*> tape, const TensorT<Real>& a, const TensorT<Real>& b) {
    if (a.shape().size() != 2 || b.shape().size() != 2 || a.cols() != b.cols())
        throw ShapeError("concat_rows: column mismatch " + TensorT<Real>::shape_string(a.shape()) +
                         " vs " + TensorT<Real>::shape_string(b.shape()));
    const int ra = a.rows(), rb = b.rows(), n = a.cols();
    TensorT<Real> y = TensorT<Real>::zeros({ra + rb, n});
    std::copy(a.values().begin(), a.values().end(), y.values().begin());
    std::copy(b.values().begin(), b.values().end(), y.values().begin() + static_cast<std::ptrdiff_t>(ra) * n);
    if (detail::track(tape, a.requires_grad() || b.requires_grad())) {
        y.set_requires_grad(true);
        auto an = a.node_ptr(), bn = b.node_ptr(), yn = y.node_ptr();
        tape->record(y, [an, bn, yn, ra, rb, n](GradMapT<Real>& g) {
            const std::vector<Real>& dy = *find_flow(g, yn.get());
            std::vector<Real>& da = flow_into(g, an.get());
            std::vector<Real>& db = flow_into(g, bn.get());
            for (std::size_t i = 0; i < da.size(); ++i) da[i] += dy[i];
            const std::size_t base = static_cast<std::size_t>(ra) * n;
            for (std::size_t i = 0; i < db.size(); ++i) db[i] += dy[base + i];
        });
    }
    return y;
}

template <typename Real>
TensorT<Real> add(std::type_identity_t<TapeT<Real>*> tape, const TensorT<Real>& a, const TensorT<Real>& b) {
    if (a.shape() != b.shape())
        throw ShapeError("add: shape mismatch " + TensorT<Real>::shape_string(a.shape()) + " vs " +
                         TensorT<Real>::shape_string(b.shape()));
    TensorT<Real> y = TensorT<Real>::zeros(a.shape());
    for (std::size_t i = 0; i < y.numel(); ++i) y.values()[i] = a.values()[i] + b.values()[i];
    if (detail::track(tape, a.requires_grad() || b.requires_grad())) {
        y.set_requires_grad(true);
        auto an = a.node_ptr(), bn = b.node_ptr(), yn = y.node_ptr();
        tape->record(y, [an, bn, yn](GradMapT<Real>& g) {
            const std::vector<Real>& dy = *find_flow(g, yn.get());
            std::vector<Real>& da = flow_into(g, an.get());
            std::vector<Real>& db = flow_into(g, bn.get());
            for (std::size_t i = 0; i < dy.size(); ++i) {
                da[i] += dy[i];
                db[i] += dy[i];
            }
        });
    }
    return y;
}

// y[i,j] = x[i,j] + bias[j]
template <typename Real>
TensorT<Real> add_bias(std::type_identity_t<TapeT<Real>*> tape, const TensorT<Real>& x, const TensorT<Real>& bias) {
    if (x.shape().size() != 2 || bias.shape().size() != 1 || bias.dim(0) != x.cols())
        throw ShapeError("add_bias: " + TensorT<Real>::shape_string(x.shape()) + " with bias " +
                         TensorT<Real>::shape_string(bias.shape()));
    const int m = x.rows(), n = x.cols();
    TensorT<Real> y = TensorT<Real>::zeros({m, n});
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) y.at(i, j) = x.at(i, j) + bias.values()[j];
    if (detail::track(tape, x.requires_grad() || bias.requires_grad())) {
        y.set_requires_grad(true);
        auto xn = x.node_ptr(), bn = bias.node_ptr(), yn = y.node_ptr();
        tape->record(y, [xn, bn, yn, m, n](GradMapT<Real>& g) {
            const std::vector<Real>& dy = *find_flow(g, yn.get());
            std::vector<Real>& dx = flow_into(g, xn.get());
            std::vector<Real>& db = flow_into(g, bn.get());
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < n; ++j) {
                    dx[i * n + j] += dy[i * n + j];
                    db[j] += dy[i * n + j];
                }
        });
    }
    return y;
}

template <typename Real>
TensorT<Real> scale(std::type_identity_t<TapeT<Real>*> tape, const TensorT<Real>& x, Real factor) {
    TensorT<Real> y = TensorT<Real>::zeros(x.shape());
    for (std::size_t i = 0; i < y.numel(); ++i) y.values()[i] = x.values()[i] * factor;
    if (detail::track(tape, x.requires_grad())) {
        y.set_requires_grad(true);
        auto xn = x.node_ptr(), yn = y.node_ptr();
        tape->record(y, [xn, yn, factor](GradMapT<Real>& g) {
            const std::vector<Real>& dy = *find_flow(g, yn.get());
            std::vector<Real>& dx = flow_into(g, xn.get());
            for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += dy[i] * factor;
        });
    }
    return y;
}

template <typename Real>
TensorT<Real> mul(std::type_identity_t<TapeT<Real>*> tape, const TensorT<Real>& a, const TensorT<Real>& b) {
    if (a.shape() != b.shape())
        throw ShapeError("mul: shape mismatch " + TensorT<Real>::shape_string(a.shape()) + " vs " +
                         TensorT<Real>::shape_string(b.shape()));
    TensorT<Real> y = TensorT<Real>::zeros(a.shape());
    for (std::size_t i = 0; i < y.numel(); ++i) y.values()[i] = a.values()[i] * b.values()[i];
    if (detail::track(tape, a.requires_grad() || b.requires_grad())) {
        y.set_requires_grad(true);
        auto an = a.node_ptr(), bn = b.node_ptr(), yn = y.node_ptr();
        tape->record(y, [an, bn, yn](GradMapT<Real>& g) {
            const std::vector<Real>& dy = *find_flow(g, yn.get());
            std::vector<Real>& da = flow_into(g, an.get());
            std::vector<Real>& db = flow_into(g, bn.get());
            for (std::size_t i = 0; i < dy.size(); ++i) {
                da[i] += dy[i] * bn->data[i];
                db[i] += dy[i] * an->data[i];
            }
        });
    }
    return y;
}

template <typename Real>
TensorT<Real> sum_all(std::type_identity_t<TapeT<Real>*> tape, const TensorT<Real>& x) {
    Real acc = 0;
    for (Real v : x.values()) acc += v;
    TensorT<Real> y = TensorT<Real>::scalar(acc);
    if (detail::track(tape, x.requires_grad())) {
        y.set_requires_grad(true);
        auto xn = x.node_ptr(), yn = y.node_ptr();
        tape->record(y, [xn, yn](GradMapT<Real>& g) {
            const Real dy = (*find_flow(g, yn.get()))[0];
            std::vector<Real>& dx = flow_into(g, xn.get());
            for (auto& v : dx) v += dy;
        });
    }
    return y;
}

// Row-wise softmax with per-row max subtraction. -inf entries are legal mask
// sentinels and get probability 0; NaN anywhere is an error.
template <typename Real>
TensorT<Real> softmax_rows(std::type_identity_t<TapeT<Real>*> tape, const TensorT<Real>& x) {
    if (x.shape().size() != 2)
        throw ShapeError("softmax_rows: need 2-d tensor, got " + TensorT<Real>::shape_string(x.shape()));
    const int m = x.rows(), n = x.cols();
    for (Real v : x.values())
        if (std::isnan(v)) throw Error("softmax_rows: NaN input");
    TensorT<Real> y = TensorT<Real>::zeros({m, n});
    for (int i = 0; i < m; ++i) {
        Real mx = x.at(i, 0);
        for (int j = 1; j < n; ++j) mx = std::max(mx, x.at(i, j));
        if (std::isinf(mx)) throw Error("softmax_rows: row " + std::to_string(i) + " has no finite entry");
        Real denom = 0;
        for (int j = 0; j < n; ++j) {
            const Real e = std::exp(x.at(i, j) - mx);
            y.at(i, j) = e;
            denom += e;
        }
        for (int j = 0; j < n; ++j) y.at(i, j) /= denom;
    }
    if (detail::track(tape, x.requires_grad())) {
        y.set_requires_grad(true);
        auto xn = x.node_ptr(), yn = y.node_ptr();
        tape->record(y, [xn, yn, m, n](GradMapT<Real>& g) {
            const std::vector<Real>& dy = *find_flow(g, yn.get());
            std::vector<Real>& dx = flow_into(g, xn.get());
            const std::vector<Real>& yv = yn->data;
            for (int i = 0; i < m; ++i) {
                Real dot = 0;
                for (int j = 0; j < n; ++j) dot += dy[i * n + j] * yv[i * n + j];
                for (int j = 0; j < n; ++j) dx[i * n + j] += yv[i * n + j] * (dy[i * n + j] - dot);
            }
        });
    }
    return y;
}

// Per-row standardization followed by the affine (gamma, beta).
template <typename Real>
TensorT<Real> layer_norm(std::type_identity_t<TapeT<Real>*> tape, const TensorT<Real>& x, const TensorT<Real>& gamma,
                         const TensorT<Real>& beta, Real eps) {
    if (x.shape().size() != 2 || gamma.shape().size() != 1 || beta.shape().size() != 1 ||
        gamma.dim(0) != x.cols() || beta.dim(0) != x.cols())
        throw ShapeError("layer_norm: " + TensorT<Real>::shape_string(x.shape()) + " with gamma " +
                         TensorT<Real>::shape_string(gamma.shape()) + ", beta " +
                         TensorT<Real>::shape_string(beta.shape()));
    if (!(eps > Real(0))) throw ContractError("layer_norm: eps must be positive");
    const int m = x.rows(), d = x.cols();
    TensorT<Real> y = TensorT<Real>::zeros({m, d});
    std::vector<Real> inv_sigma(m), xhat(static_cast<std::size_t>(m) * d);
    for (int i = 0; i < m; ++i) {
        Real mean = 0;
        for (int j = 0; j < d; ++j) mean += x.at(i, j);
        mean /= d;
        Real var = 0;
        for (int j = 0; j < d; ++j) {
            const Real c = x.at(i, j) - mean;
            var += c * c;
        }
        var /= d;
        const Real inv = Real(1) / std::sqrt(var + eps);
        inv_sigma[i] = inv;
        for (int j = 0; j < d; ++j) {
            const Real h = (x.at(i, j) - mean) * inv;
            xhat[i * d + j] = h;
            y.at(i, j) = h * gamma.values()[j] + beta.values()[j];
        }
    }
    if (detail::track(tape, x.requires_grad() || gamma.requires_grad() || beta.requires_grad())) {
        y.set_requires_grad(true);
        auto xn = x.node_ptr(), gn = gamma.node_ptr(), bn = beta.node_ptr(), yn = y.node_ptr();
        tape->record(y, [xn, gn, bn, yn, m, d, inv_sigma, xhat](GradMapT<Real>& g) {
            const std::vector<Real>& dy = *find_flow(g, yn.get());
            std::vector<Real>& dx = flow_into(g, xn.get());
            std::vector<Real>& dgamma = flow_into(g, gn.get());
            std::vector<Real>& dbeta = flow_into(g, bn.get());
            const std::vector<Real>& gv = gn->data;
            for (int i = 0; i < m; ++i) {
                Real mean_dh = 0, mean_dh_xhat = 0;
                for (int j = 0; j < d; ++j) {
                    const Real dyij = dy[i * d + j];
                    const Real h = xhat[i * d + j];
                    dgamma[j] += dyij * h;
                    dbeta[j] += dyij;
                    const Real dh = dyij * gv[j];
                    mean_dh += dh;
                    mean_dh_xhat += dh * h;
                }
                mean_dh /= d;
                mean_dh_xhat /= d;
                for (int j = 0; j < d; ++j) {
                    const Real dh = dy[i * d + j] * gv[j];
                    dx[i * d + j] += (dh - mean_dh - xhat[i * d + j] * mean_dh_xhat) * inv_sigma[i];
                }
            }
        });
    }
    return y;
}

// Tanh-approximation GELU: 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3))).
template <typename Real>
TensorT<Real> gelu(std::type_identity_t<TapeT<Real>*> tape, const TensorT<Real>& x) {
    constexpr Real kAlpha = Real(0.7978845608028653558798921198687637);  // sqrt(2/pi)
    constexpr Real kCubic = Real(0.044715);
    TensorT<Real> y = TensorT<Real>::zeros(x.shape());
    for (std::size_t i = 0; i < y.numel(); ++i) {
        const Real v = x.values()[i];
        const Real t = std::tanh(kAlpha * (v + kCubic * v * v * v));
        y.values()[i] = Real(0.5) * v * (Real(1) + t);
    }
    if (detail::track(tape, x.requires_grad())) {
        y.set_requires_grad(true);
        auto xn = x.node_ptr(), yn = y.node_ptr();
        tape->record(y, [xn, yn](GradMapT<Real>& g) {
            const std::vector<Real>& dy = *find_flow(g, yn.get());
            std::vector<Real>& dx = flow_into(g, xn.get());
            for (std::size_t i = 0; i < dy.size(); ++i) {
                const Real v = xn->data[i];
                const Real u = kAlpha * (v + kCubic * v * v * v);
                const Real t = std::tanh(u);
                const Real du = kAlpha * (Real(1) + Real(3) * kCubic * v * v);
                const Real dgelu = Real(0.5) * (Real(1) + t) + Real(0.5) * v * (Real(1) - t * t) * du;
                dx[i] += dy[i] * dgelu;
            }
        });
    }
    return y;
}

// Row gather; backward scatter-adds into the table gradient.
template <typename Real>
TensorT<Real> embedding_lookup(std::type_identity_t<TapeT<Real>*> tape, const TensorT<Real>& table, const std::vector<int>& ids) {
    if (table.shape().size() != 2)
        throw ShapeError("embedding_lookup: table must be 2-d, got " + TensorT<Real>::shape_string(table.shape()));
    const int v = table.rows(), d = table.cols();
    for (int id : ids)
        if (id < 0 || id >= v)
            throw IndexError("embedding_lookup: id " + std::to_string(id) + " outside table of " +
                             std::to_string(v) + " rows");
    const int t = static_cast<int>(ids.size());
    TensorT<Real> y = TensorT<Real>::zeros({t, d});
    for (int i = 0; i < t; ++i)
        std::copy(table.values().begin() + static_cast<std::ptrdiff_t>(ids[i]) * d,
                  table.values().begin() + static_cast<std::ptrdiff_t>(ids[i] + 1) * d,
                  y.values().begin() + static_cast<std::ptrdiff_t>(i) * d);
    if (detail::track(tape, table.requires_grad())) {
        y.set_requires_grad(true);
        auto tn = table.node_ptr(), yn = y.node_ptr();
        tape->record(y, [tn, yn, ids, d](GradMapT<Real>& g) {
            const std::vector<Real>& dy = *find_flow(g, yn.get());
            std::vector<Real>& dt = flow_into(g, tn.get());
            for (std::size_t i = 0; i < ids.size(); ++i)
                for (int j = 0; j < d; ++j) dt[static_cast<std::size_t>(ids[i]) * d + j] += dy[i * d + j];
        });
    }
    return y;
}

// Mean over unmasked rows of -log softmax(logits)[target], via log-sum-exp
// with per-row max subtraction.
template <typename Real>
TensorT<Real> cross_entropy_mean(std::type_identity_t<TapeT<Real>*> tape, const TensorT<Real>& logits,
                                 const std::vector<int>& targets, const std::vector<std::uint8_t>& mask) {
    if (logits.shape().size() != 2)
        throw ShapeError("cross_entropy_mean: logits must be 2-d, got " +
                         TensorT<Real>::shape_string(logits.shape()));
    const int n = logits.rows(), v = logits.cols();
    if (static_cast<int>(targets.size()) != n || static_cast<int>(mask.size()) != n)
        throw ShapeError("cross_entropy_mean: " + std::to_string(n) + " logit rows vs " +
                         std::to_string(targets.size()) + " targets, " + std::to_string(mask.size()) + " mask flags");
    int active = 0;
    for (int i = 0; i < n; ++i) {
        if (!mask[i]) continue;
        ++active;
        if (targets[i] < 0 || targets[i] >= v)
            throw IndexError("cross_entropy_mean: target " + std::to_string(targets[i]) + " outside vocab of " +
                             std::to_string(v));
    }
    if (active == 0) throw InputError("cross_entropy_mean: empty loss, every position is masked");

    std::vector<Real> lse(n, Real(0));
    Real total = 0;
    for (int i = 0; i < n; ++i) {
        if (!mask[i]) continue;
        Real mx = logits.at(i, 0);
        for (int j = 1; j < v; ++j) mx = std::max(mx, logits.at(i, j));
        Real denom = 0;
        for (int j = 0; j < v; ++j) denom += std::exp(logits.at(i, j) - mx);
        lse[i] = mx + std::log(denom);
        total += lse[i] - logits.at(i, targets[i]);
    }
    TensorT<Real> loss = TensorT<Real>::scalar(total / active);
    if (detail::track(tape, logits.requires_grad())) {
        loss.set_requires_grad(true);
        auto ln = logits.node_ptr(), on = loss.node_ptr();
        tape->record(loss, [ln, on, targets, mask, lse, n, v, active](GradMapT<Real>& g) {
            const Real upstream = (*find_flow(g, on.get()))[0];
            std::vector<Real>& dl = flow_into(g, ln.get());
            const Real w = upstream / active;
            for (int i = 0; i < n; ++i) {
                if (!mask[i]) continue;
                for (int j = 0; j < v; ++j) {
                    const Real p = std::exp(ln->data[i * v + j] - lse[i]);
                    dl[i * v + j] += w * (p - (j == targets[i] ? Real(1) : Real(0)));
                }
            }
        });
    }
    return loss;
}

}  // namespace ptlm
