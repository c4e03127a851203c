#include "readmit/nn.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "readmit/random.hpp"

namespace readmit::nn {

std::string shape_string(const std::vector<std::size_t>& shape) {
    std::ostringstream s;
    s << '(';
    for (std::size_t i = 0; i < shape.size(); ++i) s << (i ? "x" : "") << shape[i];
    s << ')';
    return s.str();
}

namespace {

// Source row for output position p and tap k, or -1 when the tap is padding.
inline std::ptrdiff_t tap(std::ptrdiff_t p, std::ptrdiff_t k, std::ptrdiff_t half, std::ptrdiff_t n,
                          Padding padding) {
    std::ptrdiff_t q = p + k - half;
    if (q >= 0 && q < n) return q;
    if (padding == Padding::Zero) return -1;
    q %= n;
    return q < 0 ? q + n : q;
}

void check_conv(const Tensor& input, const Tensor& kernel) {
    if (input.rank() != 2 || kernel.rank() != 3)
        throw ShapeError("conv1d: expected input (positions x channels) and kernel (filters x channels x length)");
    if (kernel.dim(1) != input.dim(1))
        throw ShapeError("conv1d: kernel expects " + std::to_string(kernel.dim(1)) + " channels, input has " +
                         std::to_string(input.dim(1)));
    if (kernel.dim(2) % 2 == 0) throw ShapeError("conv1d: filter length must be odd");
}

}  // namespace

void conv1d_same_accumulate(const Tensor& input, const Tensor& kernel, Tensor& out, Padding padding) {
    check_conv(input, kernel);
    const std::size_t P = input.dim(0), C = input.dim(1), F = kernel.dim(0), L = kernel.dim(2);
    require_shape(out, {P, F}, "conv1d output");
    const auto half = static_cast<std::ptrdiff_t>(L / 2);
    const double* w = kernel.data();
    for (std::size_t p = 0; p < P; ++p) {
        for (std::size_t k = 0; k < L; ++k) {
            const auto q = tap(static_cast<std::ptrdiff_t>(p), static_cast<std::ptrdiff_t>(k), half,
                               static_cast<std::ptrdiff_t>(P), padding);
            if (q < 0) continue;
            const double* x = input.data() + static_cast<std::size_t>(q) * C;
            double* o = out.data() + p * F;
            for (std::size_t f = 0; f < F; ++f) {
                const double* wf = w + f * C * L + k;
                double s = 0.0;
                for (std::size_t c = 0; c < C; ++c) s += x[c] * wf[c * L];
                o[f] += s;
            }
        }
    }
}

Tensor conv1d_same(const Tensor& input, const Tensor& kernel, const Tensor& bias, Padding padding) {
    check_conv(input, kernel);
    const std::size_t P = input.dim(0), F = kernel.dim(0);
    Tensor out({P, F});
    if (!bias.empty()) {
        require_shape(bias, {F}, "conv1d bias");
        for (std::size_t p = 0; p < P; ++p)
            for (std::size_t f = 0; f < F; ++f) out(p, f) = bias[f];
    }
    conv1d_same_accumulate(input, kernel, out, padding);
    return out;
}

void conv1d_same_backward(const Tensor& input, const Tensor& kernel, const Tensor& d_out, Tensor& d_kernel,
                          Tensor* d_input, Padding padding) {
    check_conv(input, kernel);
    const std::size_t P = input.dim(0), C = input.dim(1), F = kernel.dim(0), L = kernel.dim(2);
    require_shape(d_out, {P, F}, "conv1d d_out");
    require_shape(d_kernel, kernel.shape(), "conv1d d_kernel");
    if (d_input) require_shape(*d_input, input.shape(), "conv1d d_input");
    const auto half = static_cast<std::ptrdiff_t>(L / 2);
    for (std::size_t p = 0; p < P; ++p) {
        for (std::size_t k = 0; k < L; ++k) {
            const auto q = tap(static_cast<std::ptrdiff_t>(p), static_cast<std::ptrdiff_t>(k), half,
                               static_cast<std::ptrdiff_t>(P), padding);
            if (q < 0) continue;
            const double* x = input.data() + static_cast<std::size_t>(q) * C;
            double* dx = d_input ? d_input->data() + static_cast<std::size_t>(q) * C : nullptr;
            for (std::size_t f = 0; f < F; ++f) {
                const double g = d_out(p, f);
                if (g == 0.0) continue;
                double* dw = d_kernel.data() + f * C * L + k;
                const double* w = kernel.data() + f * C * L + k;
                for (std::size_t c = 0; c < C; ++c) dw[c * L] += g * x[c];
                if (dx)
                    for (std::size_t c = 0; c < C; ++c) dx[c] += g * w[c * L];
            }
        }
    }
}

// ---------------------------------------------------------------------------

ConvLSTMCellParams ConvLSTMCellParams::zeros(std::size_t in_channels, std::size_t filters, std::size_t length) {
    ConvLSTMCellParams p;
    for (std::size_t g = 0; g < 4; ++g) {
        p.input_kernel[g] = Tensor({filters, in_channels, length});
        p.hidden_kernel[g] = Tensor({filters, filters, length});
        p.bias[g] = Tensor({filters});
    }
    return p;
}

void ConvLSTMCellParams::validate() const {
    const std::size_t F = filters(), C = in_channels(), L = length();
    if (L % 2 == 0) throw ShapeError("ConvLSTM filter length must be odd");
    for (std::size_t g = 0; g < 4; ++g) {
        require_shape(input_kernel[g], {F, C, L}, "ConvLSTM input kernel");
        require_shape(hidden_kernel[g], {F, F, L}, "ConvLSTM hidden kernel");
        require_shape(bias[g], {F}, "ConvLSTM bias");
    }
}

std::array<Tensor, 4> convlstm_preactivations(const ConvLSTMCellParams& params, const Tensor& x,
                                              const Tensor& h_prev, Padding padding) {
    params.validate();
    const std::size_t P = x.dim(0), F = params.filters();
    require_shape(h_prev, {P, F}, "ConvLSTM hidden state");
    std::array<Tensor, 4> z;
    for (std::size_t g = 0; g < 4; ++g) {
        z[g] = conv1d_same(x, params.input_kernel[g], params.bias[g], padding);
        conv1d_same_accumulate(h_prev, params.hidden_kernel[g], z[g], padding);
    }
    return z;
}

Tensor convlstm_step(const ConvLSTMCellParams& params, const Tensor& x, const Tensor& h_prev,
                     const Tensor& c_prev, Tensor& c_out, ConvLSTMStepCache* cache) {
    const std::size_t P = x.dim(0), F = params.filters();
    require_shape(c_prev, {P, F}, "ConvLSTM cell state");
    auto z = convlstm_preactivations(params, x, h_prev);
    for (std::size_t g = 0; g < 4; ++g)
        for (auto& v : z[g].values()) v = g == kCell ? std::tanh(v) : sigmoid(v);

    Tensor c({P, F}), tanh_c({P, F}), h({P, F});
    for (std::size_t i = 0; i < c.size(); ++i) {
        c[i] = z[kForget][i] * c_prev[i] + z[kInput][i] * z[kCell][i];
        tanh_c[i] = std::tanh(c[i]);
        h[i] = z[kOutput][i] * tanh_c[i];
    }
    c_out = c;
    if (cache) {
        cache->x = x;
        cache->h_prev = h_prev;
        cache->c_prev = c_prev;
        cache->gate = std::move(z);
        cache->c = std::move(c);
        cache->tanh_c = std::move(tanh_c);
        cache->h = h;
    }
    return h;
}

void convlstm_step_backward(const ConvLSTMCellParams& params, const ConvLSTMStepCache& cache, const Tensor& d_h,
                            const Tensor& d_c, ConvLSTMCellParams& grads, Tensor& d_h_prev, Tensor& d_c_prev,
                            Tensor* d_x) {
    const std::size_t n = cache.c.size();
    const auto& i_g = cache.gate[kInput];
    const auto& f_g = cache.gate[kForget];
    const auto& g_g = cache.gate[kCell];
    const auto& o_g = cache.gate[kOutput];

    std::array<Tensor, 4> dz;
    for (auto& t : dz) t = cache.c.zeros_like();
    d_c_prev = cache.c.zeros_like();
    for (std::size_t k = 0; k < n; ++k) {
        const double dc = d_c[k] + d_h[k] * o_g[k] * (1.0 - cache.tanh_c[k] * cache.tanh_c[k]);
        dz[kOutput][k] = d_h[k] * cache.tanh_c[k] * o_g[k] * (1.0 - o_g[k]);
        dz[kInput][k] = dc * g_g[k] * i_g[k] * (1.0 - i_g[k]);
        dz[kCell][k] = dc * i_g[k] * (1.0 - g_g[k] * g_g[k]);
        dz[kForget][k] = dc * cache.c_prev[k] * f_g[k] * (1.0 - f_g[k]);
        d_c_prev[k] = dc * f_g[k];
    }

    d_h_prev = cache.h_prev.zeros_like();
    const std::size_t P = cache.c.dim(0), F = cache.c.dim(1);
    for (std::size_t g = 0; g < 4; ++g) {
        conv1d_same_backward(cache.x, params.input_kernel[g], dz[g], grads.input_kernel[g], d_x);
        conv1d_same_backward(cache.h_prev, params.hidden_kernel[g], dz[g], grads.hidden_kernel[g], &d_h_prev);
        for (std::size_t p = 0; p < P; ++p)
            for (std::size_t f = 0; f < F; ++f) grads.bias[g][f] += dz[g](p, f);
    }
}

// ---------------------------------------------------------------------------

MaxPoolResult relu_maxpool_over_all(std::span<const Tensor> h_sequence) {
    if (h_sequence.empty()) throw ShapeError("max-pool over an empty sequence");
    const std::size_t P = h_sequence[0].dim(0), F = h_sequence[0].dim(1);
    MaxPoolResult r;
    r.pooled = Tensor({F});
    r.argmax.assign(F, std::nullopt);
    for (std::size_t t = 0; t < h_sequence.size(); ++t) {
        require_shape(h_sequence[t], {P, F}, "max-pool input");
        for (std::size_t p = 0; p < P; ++p) {
            for (std::size_t f = 0; f < F; ++f) {
                const double v = h_sequence[t](p, f);
                // Strict comparison keeps the first occurrence; responses <= 0
                // never beat the ReLU floor.
                if (v > r.pooled[f]) {
                    r.pooled[f] = v;
                    r.argmax[f] = PoolIndex{t, p};
                }
            }
        }
    }
    return r;
}

// ---------------------------------------------------------------------------

LSTMCellParams LSTMCellParams::zeros(std::size_t input_dim, std::size_t hidden) {
    LSTMCellParams p;
    for (std::size_t g = 0; g < 4; ++g) {
        p.input_weights[g] = Tensor({hidden, input_dim});
        p.recurrent_weights[g] = Tensor({hidden, hidden});
        p.bias[g] = Tensor({hidden});
    }
    return p;
}

void LSTMCellParams::validate() const {
    const std::size_t H = hidden(), I = input_dim();
    for (std::size_t g = 0; g < 4; ++g) {
        require_shape(input_weights[g], {H, I}, "LSTM input weights");
        require_shape(recurrent_weights[g], {H, H}, "LSTM recurrent weights");
        require_shape(bias[g], {H}, "LSTM bias");
    }
}

std::vector<double> lstm_forward(const LSTMCellParams& params, std::span<const std::vector<double>> sequence,
                                 std::span<const double> recurrent_mask, std::vector<LSTMStepCache>* caches) {
    params.validate();
    if (sequence.empty()) throw ShapeError("LSTM over an empty sequence");
    const std::size_t H = params.hidden(), I = params.input_dim();
    if (!recurrent_mask.empty() && recurrent_mask.size() != H) throw ShapeError("LSTM recurrent mask size");
    std::vector<double> h(H, 0.0), c(H, 0.0);
    if (caches) caches->clear();
    for (const auto& x : sequence) {
        if (x.size() != I)
            throw ShapeError("LSTM input has " + std::to_string(x.size()) + " features, expected " +
                             std::to_string(I));
        std::vector<double> hm = h;
        if (!recurrent_mask.empty())
            for (std::size_t k = 0; k < H; ++k) hm[k] *= recurrent_mask[k];
        std::array<std::vector<double>, 4> gate;
        for (std::size_t g = 0; g < 4; ++g) {
            gate[g].resize(H);
            for (std::size_t j = 0; j < H; ++j) {
                double z = params.bias[g][j];
                for (std::size_t i = 0; i < I; ++i) z += params.input_weights[g](j, i) * x[i];
                for (std::size_t k = 0; k < H; ++k) z += params.recurrent_weights[g](j, k) * hm[k];
                gate[g][j] = g == kCell ? std::tanh(z) : sigmoid(z);
            }
        }
        std::vector<double> c_new(H), tanh_c(H), h_new(H);
        for (std::size_t j = 0; j < H; ++j) {
            c_new[j] = gate[kForget][j] * c[j] + gate[kInput][j] * gate[kCell][j];
            tanh_c[j] = std::tanh(c_new[j]);
            h_new[j] = gate[kOutput][j] * tanh_c[j];
        }
        if (caches) caches->push_back({x, hm, c, gate, c_new, tanh_c, h_new});
        h = std::move(h_new);
        c = std::move(c_new);
    }
    return h;
}

void lstm_backward(const LSTMCellParams& params, std::span<const LSTMStepCache> caches,
                   std::span<const double> recurrent_mask, std::span<const double> d_h_last,
                   LSTMCellParams& grads) {
    const std::size_t H = params.hidden(), I = params.input_dim();
    std::vector<double> dh(d_h_last.begin(), d_h_last.end()), dc(H, 0.0);
    std::array<std::vector<double>, 4> dz;
    for (auto& v : dz) v.assign(H, 0.0);
    for (std::size_t s = caches.size(); s-- > 0;) {
        const auto& k = caches[s];
        for (std::size_t j = 0; j < H; ++j) {
            const double dcj = dc[j] + dh[j] * k.gate[kOutput][j] * (1.0 - k.tanh_c[j] * k.tanh_c[j]);
            const double o = k.gate[kOutput][j], i = k.gate[kInput][j], f = k.gate[kForget][j],
                         g = k.gate[kCell][j];
            dz[kOutput][j] = dh[j] * k.tanh_c[j] * o * (1.0 - o);
            dz[kInput][j] = dcj * g * i * (1.0 - i);
            dz[kCell][j] = dcj * i * (1.0 - g * g);
            dz[kForget][j] = dcj * k.c_prev[j] * f * (1.0 - f);
            dc[j] = dcj * f;
        }
        std::vector<double> dhm(H, 0.0);
        for (std::size_t g = 0; g < 4; ++g) {
            for (std::size_t j = 0; j < H; ++j) {
                const double d = dz[g][j];
                if (d == 0.0) continue;
                grads.bias[g][j] += d;
                for (std::size_t i = 0; i < I; ++i) grads.input_weights[g](j, i) += d * k.x[i];
                for (std::size_t q = 0; q < H; ++q) {
                    grads.recurrent_weights[g](j, q) += d * k.h_prev[q];
                    dhm[q] += d * params.recurrent_weights[g](j, q);
                }
            }
        }
        for (std::size_t q = 0; q < H; ++q) dh[q] = recurrent_mask.empty() ? dhm[q] : dhm[q] * recurrent_mask[q];
    }
}

// ---------------------------------------------------------------------------

DenseParams DenseParams::zeros(std::size_t in, std::size_t out) {
    return {Tensor({out, in}), Tensor({out})};
}

std::vector<double> dense(const DenseParams& params, std::span<const double> x, Activation activation) {
    const std::size_t O = params.out(), I = params.in();
    require_shape(params.bias, {O}, "dense bias");
    if (x.size() != I)
        throw ShapeError("dense layer expects " + std::to_string(I) + " inputs, got " + std::to_string(x.size()));
    std::vector<double> y(O);
    for (std::size_t o = 0; o < O; ++o) {
        double z = params.bias[o];
        const double* w = params.weight.data() + o * I;
        for (std::size_t i = 0; i < I; ++i) z += w[i] * x[i];
        switch (activation) {
            case Activation::Relu: y[o] = z > 0.0 ? z : 0.0; break;
            case Activation::Sigmoid: y[o] = sigmoid(z); break;
            case Activation::None: y[o] = z; break;
        }
    }
    return y;
}

void dense_backward(const DenseParams& params, std::span<const double> x, std::span<const double> y,
                    Activation activation, std::span<const double> d_y, DenseParams& grads, std::span<double> d_x) {
    const std::size_t O = params.out(), I = params.in();
    for (std::size_t o = 0; o < O; ++o) {
        double dz = d_y[o];
        switch (activation) {
            case Activation::Relu: dz = y[o] > 0.0 ? dz : 0.0; break;
            case Activation::Sigmoid: dz *= y[o] * (1.0 - y[o]); break;
            case Activation::None: break;
        }
        if (dz == 0.0) continue;
        grads.bias[o] += dz;
        double* gw = grads.weight.data() + o * I;
        const double* w = params.weight.data() + o * I;
        for (std::size_t i = 0; i < I; ++i) gw[i] += dz * x[i];
        if (!d_x.empty())
            for (std::size_t i = 0; i < I; ++i) d_x[i] += dz * w[i];
    }
}

// ---------------------------------------------------------------------------

LossValue bce_loss(double p, int y) {
    const double q = std::clamp(p, kProbabilityClamp, 1.0 - kProbabilityClamp);
    if (y == 1) return {-std::log(q), -1.0 / q};
    return {-std::log(1.0 - q), 1.0 / (1.0 - q)};
}

Tensor dropout_mask(const std::vector<std::size_t>& shape, double rate, std::uint64_t seed, Mode mode) {
    Tensor m(shape, 1.0);
    if (mode == Mode::Eval || rate <= 0.0) return m;
    if (rate >= 1.0) throw NumericError("dropout rate must be below 1");
    rng::Engine e(seed);
    const double keep = 1.0 - rate;
    const double scale = 1.0 / keep;
    for (auto& v : m.values()) v = rng::uniform01(e) < keep ? scale : 0.0;
    return m;
}

void adam_update(AdamState& state, std::span<const ParamSlot> slots) {
    for (const auto& s : slots) {
        require_shape(*s.grad, s.value->shape(), ("gradient of " + s.name).c_str());
        for (double g : s.grad->values())
            if (!std::isfinite(g)) throw NumericError("non-finite gradient for parameter " + s.name);
    }
    if (state.first_moment.size() != slots.size()) {
        state.first_moment.clear();
        state.second_moment.clear();
        for (const auto& s : slots) {
            state.first_moment.push_back(s.value->zeros_like());
            state.second_moment.push_back(s.value->zeros_like());
        }
    }
    ++state.step;
    const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
    for (std::size_t k = 0; k < slots.size(); ++k) {
        auto& m = state.first_moment[k];
        auto& v = state.second_moment[k];
        require_shape(m, slots[k].value->shape(), ("Adam moment of " + slots[k].name).c_str());
        const Tensor& g = *slots[k].grad;
        Tensor& p = *slots[k].value;
        for (std::size_t i = 0; i < p.size(); ++i) {
            m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g[i];
            v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g[i] * g[i];
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            p[i] -= state.alpha * mhat / (std::sqrt(vhat) + state.epsilon);
        }
    }
}

double l2_penalty(const Tensor& w, double strength) {
    if (strength == 0.0) return 0.0;
    double s = 0.0;
    for (double v : w.values()) s += v * v;
    return strength * s;
}

void add_l2_gradient(const Tensor& w, double strength, Tensor& grad) {
    if (strength == 0.0) return;
    for (std::size_t i = 0; i < w.size(); ++i) grad[i] += 2.0 * strength * w[i];
}

}  // namespace readmit::nn
