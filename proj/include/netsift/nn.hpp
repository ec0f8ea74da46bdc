#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "netsift/rng.hpp"
#include "netsift/tensor.hpp"

// Deterministic tensor math: forward and backward passes for every layer the
// classifier uses, the loss, L1 regularization and the Adam optimizer.
// Backward passes are handwritten per layer; the inner matrix products go
// through matmul(), which an external CBLAS may back.
//
// Ops accept either a single sample ([C, L], [in], [T, F]) or a batch with a
// leading batch dimension; the output keeps the input's rank. All ops are
// pure given their explicit Rng.

namespace netsift::nn {

// Number of threads the matrix backend may use (1 = reference mode,
// 0 = hardware concurrency). Affects speed only, not results.
void set_num_threads(int n);
int num_threads();

// C[m,n] = alpha * op(A) * op(B) + beta * C, row-major. Stored dims:
// A is [m,k] ([k,m] when trans_a), B is [k,n] ([n,k] when trans_b).
void matmul(const double* a, const double* b, double* c, size_t m, size_t n, size_t k,
            bool trans_a, bool trans_b, double alpha = 1.0, double beta = 0.0);

struct Conv1dParams {
    Tensor kernels;  // [out_channels, in_channels, width]
    Tensor bias;     // [out_channels]
};

struct DenseParams {
    Tensor weight;  // [out, in]
    Tensor bias;    // [out]
};

// Gate blocks are packed row-wise in the order input, forget, cell, output.
struct LstmParams {
    Tensor wx;    // [4*hidden, in]
    Tensor wh;    // [4*hidden, hidden]
    Tensor bias;  // [4*hidden]

    size_t hidden() const { return bias.size() / 4; }
    size_t input() const { return wx.dim(1); }
};

struct LrnConfig {
    double k = 2.0;
    int n = 5;  // across-channel window, odd
    double alpha = 1e-4;
    double beta = 0.75;
};

// -- convolution --------------------------------------------------------

// Cross-correlation with zero same-padding; output length == input length.
Tensor conv1d(const Tensor& x, const Conv1dParams& p);

struct Conv1dGrads {
    Tensor dx;
    Conv1dParams dp;
};
Conv1dGrads conv1d_backward(const Tensor& x, const Conv1dParams& p, const Tensor& dy);

// -- elementwise --------------------------------------------------------

Tensor relu(const Tensor& x);
// Subgradient 0 at x == 0.
Tensor relu_backward(const Tensor& x, const Tensor& dy);

// -- pooling ------------------------------------------------------------

struct PoolCache {
    Tensor y;
    std::vector<uint32_t> argmax;  // per output cell, index into the length axis
};
PoolCache maxpool1d(const Tensor& x, size_t k = 3, size_t stride = 3);
// Routes gradient to the first maximal index per window.
Tensor maxpool1d_backward(const Tensor& x, const PoolCache& cache, const Tensor& dy,
                          size_t k = 3, size_t stride = 3);

// -- local response normalization ----------------------------------------

// b[c,i] = a[c,i] / (k + alpha * sum_{c' in window(c,n)} a[c',i]^2)^beta,
// window across channels, clipped at the edges.
Tensor lrn(const Tensor& x, const LrnConfig& cfg);
Tensor lrn_backward(const Tensor& x, const LrnConfig& cfg, const Tensor& dy);

// -- dense ----------------------------------------------------------------

Tensor dense(const Tensor& x, const DenseParams& p);

struct DenseGrads {
    Tensor dx;
    DenseParams dp;
};
DenseGrads dense_backward(const Tensor& x, const DenseParams& p, const Tensor& dy);

// -- dropout --------------------------------------------------------------

struct DropoutCache {
    Tensor y;
    std::vector<uint8_t> mask;  // empty when the op was the identity
    double p = 0.0;             // probability the forward pass ran with
};
// Inverted dropout: survivors scaled by 1/(1-p) at training time, identity
// at inference. rng may be null when (training && p > 0) does not hold.
DropoutCache dropout(const Tensor& x, double p, Rng* rng, bool training);
Tensor dropout_backward(const DropoutCache& cache, const Tensor& dy);

// -- LSTM -----------------------------------------------------------------

struct LstmStepCache {
    Tensor x, h_prev, c_prev;        // inputs
    Tensor i, f, g, o, c, tanh_c;    // activations
};

// One step. x is [in] or [B, in]; h/c match. Returns (h', c').
std::pair<Tensor, Tensor> lstm_step(const Tensor& x, const Tensor& h, const Tensor& c,
                                    const LstmParams& p, LstmStepCache* cache = nullptr);

struct LstmStepGrads {
    Tensor dx, dh_prev, dc_prev;
    LstmParams dp;
};
LstmStepGrads lstm_step_backward(const LstmParams& p, const LstmStepCache& cache,
                                 const Tensor& dh, const Tensor& dc);

struct LstmSeqCache {
    struct Layer {
        std::vector<LstmStepCache> steps;  // T entries
        DropoutCache drop;                 // over the output sequence
    };
    std::vector<Layer> layers;
    size_t batch = 0, timesteps = 0;
};

// Stacked LSTM over X ([T, F] or [B, T, F]); zero initial states; dropout on
// each layer's output sequence while training. Returns the top layer's final
// hidden state ([H] or [B, H]).
Tensor lstm_sequence(const Tensor& x, std::span<const LstmParams> layers, double dropout_p,
                     Rng* rng, bool training, LstmSeqCache* cache = nullptr);

struct LstmSeqGrads {
    Tensor dx;
    std::vector<LstmParams> dlayers;
};
LstmSeqGrads lstm_sequence_backward(std::span<const LstmParams> layers,
                                    const LstmSeqCache& cache, const Tensor& dh_last);

// -- classifier head ------------------------------------------------------

// Numerically stable softmax over the last axis; [n] or [B, n].
Tensor softmax(const Tensor& logits);

// -log(probs[label]) with probs clamped at 1e-12.
double cross_entropy(const Tensor& probs, size_t label);

struct XentResult {
    double mean_loss = 0.0;
    Tensor probs;    // [B, C]
    Tensor dlogits;  // (probs - onehot) / B
};
// Combined softmax + cross-entropy over a batch of logits [B, C].
XentResult softmax_cross_entropy(const Tensor& logits, std::span<const size_t> labels);

// -- regularization and optimizer ------------------------------------------

// Returns lambda * sum|w| and accumulates lambda * sign(w) into grad_accum
// when provided. sign(0) = 0.
double l1_penalty(const Tensor& weights, double lambda, Tensor* grad_accum = nullptr);

struct AdamState {
    Tensor m, v;
    uint64_t t = 0;
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;

    static AdamState like(const Tensor& param) {
        AdamState s;
        s.m = Tensor(param.shape);
        s.v = Tensor(param.shape);
        return s;
    }
};

// Standard Adam with bias correction.
void adam_step(Tensor& param, const Tensor& grad, AdamState& state, double lr);

// -- finite-difference harness ----------------------------------------------

struct GradCheckProblem {
    std::function<double()> loss;   // forward pass reading the probed storage
    std::vector<double*> coords;    // probed coordinates
    std::vector<double> analytic;   // analytic gradient, aligned with coords
};

// Central differences (f(x+eps) - f(x-eps)) / (2 eps) per coordinate; returns
// the max relative error with denominator max(|analytic|, |numeric|, 1e-8).
double grad_check(const GradCheckProblem& problem, double eps = 1e-5);

}  // namespace netsift::nn
