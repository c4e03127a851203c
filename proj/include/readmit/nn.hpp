#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "readmit/tensor.hpp"

// The layers the readmission network needs, each with an explicit backward
// pass. There is no general autodiff graph: the network module chains these.
namespace readmit::nn {

enum class Mode { Train, Eval };

enum class Padding {
    Zero,      // production: out-of-range taps read zero
    Periodic,  // test hook: positions wrap around
};

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// ---------------------------------------------------------------------------
// 1-D convolution

/// Same-padded cross-correlation.
/// input (positions x channels), kernel (filters x channels x length), bias (filters)
/// -> (positions x filters). An empty bias means no bias.
Tensor conv1d_same(const Tensor& input, const Tensor& kernel, const Tensor& bias,
                   Padding padding = Padding::Zero);

/// out += conv(input, kernel), no bias.
void conv1d_same_accumulate(const Tensor& input, const Tensor& kernel, Tensor& out,
                            Padding padding = Padding::Zero);

/// Accumulates d(kernel) and, when non-null, d(input) for out = conv(input, kernel).
void conv1d_same_backward(const Tensor& input, const Tensor& kernel, const Tensor& d_out,
                          Tensor& d_kernel, Tensor* d_input, Padding padding = Padding::Zero);

// ---------------------------------------------------------------------------
// ConvLSTM

enum Gate : std::size_t { kInput = 0, kForget = 1, kCell = 2, kOutput = 3 };
inline constexpr std::array<std::string_view, 4> kGateNames{"input", "forget", "cell", "output"};

struct ConvLSTMCellParams {
    std::array<Tensor, 4> input_kernel;   // filters x in_channels x length
    std::array<Tensor, 4> hidden_kernel;  // filters x filters x length
    std::array<Tensor, 4> bias;           // filters

    static ConvLSTMCellParams zeros(std::size_t in_channels, std::size_t filters, std::size_t length);
    std::size_t filters() const { return input_kernel[0].dim(0); }
    std::size_t in_channels() const { return input_kernel[0].dim(1); }
    std::size_t length() const { return input_kernel[0].dim(2); }
    void validate() const;
};

struct ConvLSTMStepCache {
    Tensor x;       // positions x in_channels
    Tensor h_prev;  // recurrent-dropout-masked previous hidden state
    Tensor c_prev;
    std::array<Tensor, 4> gate;  // activated i, f, g, o
    Tensor c;
    Tensor tanh_c;
    Tensor h;
};

/// Gate pre-activations conv(x; W_g) + conv(h_prev; U_g) + b_g.
std::array<Tensor, 4> convlstm_preactivations(const ConvLSTMCellParams& params, const Tensor& x,
                                              const Tensor& h_prev, Padding padding = Padding::Zero);

/// One step; fills `cache` when non-null. Returns h_t, and c_t through `c_out`.
Tensor convlstm_step(const ConvLSTMCellParams& params, const Tensor& x, const Tensor& h_prev,
                     const Tensor& c_prev, Tensor& c_out, ConvLSTMStepCache* cache = nullptr);

/// Given dL/dh_t and dL/dc_t, accumulates parameter gradients and writes
/// dL/dh_prev (w.r.t. the masked input state), dL/dc_prev and optionally dL/dx.
void convlstm_step_backward(const ConvLSTMCellParams& params, const ConvLSTMStepCache& cache,
                            const Tensor& d_h, const Tensor& d_c, ConvLSTMCellParams& grads,
                            Tensor& d_h_prev, Tensor& d_c_prev, Tensor* d_x);

// ---------------------------------------------------------------------------
// ReLU followed by a global max over time steps and positions

struct PoolIndex {
    std::size_t time_step = 0;
    std::size_t position = 0;
    bool operator==(const PoolIndex&) const = default;
};

struct MaxPoolResult {
    Tensor pooled;                                // filters, all >= 0
    std::vector<std::optional<PoolIndex>> argmax;  // nullopt when every response <= 0
};

/// Ties resolve to the first (time_step, position) in row-major order.
MaxPoolResult relu_maxpool_over_all(std::span<const Tensor> h_sequence);

// ---------------------------------------------------------------------------
// LSTM over one-hot gap categories

struct LSTMCellParams {
    std::array<Tensor, 4> input_weights;      // hidden x input
    std::array<Tensor, 4> recurrent_weights;  // hidden x hidden
    std::array<Tensor, 4> bias;               // hidden

    static LSTMCellParams zeros(std::size_t input_dim, std::size_t hidden);
    std::size_t hidden() const { return input_weights[0].dim(0); }
    std::size_t input_dim() const { return input_weights[0].dim(1); }
    void validate() const;
};

struct LSTMStepCache {
    std::vector<double> x;
    std::vector<double> h_prev;  // masked
    std::vector<double> c_prev;
    std::array<std::vector<double>, 4> gate;
    std::vector<double> c;
    std::vector<double> tanh_c;
    std::vector<double> h;
};

/// Runs the recurrence from zero state and returns h_T. `recurrent_mask`, when
/// non-empty, multiplies h_{t-1} before the recurrent product at every step.
std::vector<double> lstm_forward(const LSTMCellParams& params, std::span<const std::vector<double>> sequence,
                                 std::span<const double> recurrent_mask = {},
                                 std::vector<LSTMStepCache>* caches = nullptr);

void lstm_backward(const LSTMCellParams& params, std::span<const LSTMStepCache> caches,
                   std::span<const double> recurrent_mask, std::span<const double> d_h_last,
                   LSTMCellParams& grads);

// ---------------------------------------------------------------------------
// Dense

enum class Activation { Relu, Sigmoid, None };

struct DenseParams {
    Tensor weight;  // out x in
    Tensor bias;    // out

    static DenseParams zeros(std::size_t in, std::size_t out);
    std::size_t in() const { return weight.dim(1); }
    std::size_t out() const { return weight.dim(0); }
};

std::vector<double> dense(const DenseParams& params, std::span<const double> x, Activation activation);

/// `y` is the activated output of the forward call.
void dense_backward(const DenseParams& params, std::span<const double> x, std::span<const double> y,
                    Activation activation, std::span<const double> d_y, DenseParams& grads,
                    std::span<double> d_x);

// ---------------------------------------------------------------------------
// Loss, dropout, optimizer

struct LossValue {
    double loss = 0.0;
    double dloss_dp = 0.0;
};

inline constexpr double kProbabilityClamp = 1e-12;

/// Binary cross-entropy with p clamped to [1e-12, 1 - 1e-12].
LossValue bce_loss(double p, int y);

/// Inverted dropout: entries are 0 or 1/(1-rate) in Train mode, all ones in Eval.
Tensor dropout_mask(const std::vector<std::size_t>& shape, double rate, std::uint64_t seed, Mode mode);

struct AdamState {
    double alpha = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    std::uint64_t step = 0;
    std::vector<Tensor> first_moment;
    std::vector<Tensor> second_moment;
};

struct ParamSlot {
    std::string name;
    Tensor* value = nullptr;
    const Tensor* grad = nullptr;
};

/// One bias-corrected Adam step over every slot, in slot order. Throws
/// NumericError naming the first parameter with a non-finite gradient; in that
/// case nothing is updated.
void adam_update(AdamState& state, std::span<const ParamSlot> slots);

/// L2 penalty sum(w^2) * strength.
double l2_penalty(const Tensor& w, double strength);
/// grad += 2 * strength * w.
void add_l2_gradient(const Tensor& w, double strength, Tensor& grad);

}  // namespace readmit::nn
