#pragma once

#include <array>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "netsift/dataset.hpp"
#include "netsift/nn.hpp"

namespace netsift {

struct Hyperparams {
    int64_t epoch = 5000;
    int64_t batchsize = 200;
    double learn_rate = 0.0006;
    double dropout = 0.5;
    double lambda_conv = 0.0005;   // L1 on convolution and dense weights
    double lambda_lstm = 0.00009;  // L1 on LSTM weights

    void validate() const;
};

// The fixed feature-extractor geometry: 784 bytes in, two conv/pool/LRN
// stages, a 1024-unit dense layer reshaped to a 32x32 sequence, a 3-layer
// 256-unit LSTM stack, and a dense classifier head.
struct ConvLstmNet {
    static constexpr size_t kInputLen = 784;
    static constexpr size_t kConv1Filters = 32;
    static constexpr size_t kConv2Filters = 64;
    static constexpr size_t kKernelWidth = 25;
    static constexpr size_t kPoolWindow = 3;
    static constexpr size_t kPoolStride = 3;
    static constexpr size_t kPool1Len = 261;  // (784 - 3) / 3 + 1
    static constexpr size_t kPool2Len = 87;   // (261 - 3) / 3 + 1
    static constexpr size_t kFlatLen = kConv2Filters * kPool2Len;  // 5568
    static constexpr size_t kDense1Units = 1024;
    static constexpr size_t kLstmTimesteps = 32;
    static constexpr size_t kLstmFeatures = 32;
    static constexpr size_t kLstmHidden = 256;
    static constexpr size_t kLstmLayers = 3;

    nn::Conv1dParams conv1, conv2;
    nn::DenseParams dense1, dense2;
    std::array<nn::LstmParams, kLstmLayers> lstm;
    nn::LrnConfig lrn;
    int num_classes = 0;
};

enum class RegKind { None, ConvDense, Lstm };

// Visits every parameter tensor in checkpoint order. The same order drives
// initialization, the optimizer state and serialization.
template <typename Net, typename Fn>
void for_each_param(Net& m, Fn&& fn) {
    fn("conv1.kernels", m.conv1.kernels, RegKind::ConvDense);
    fn("conv1.bias", m.conv1.bias, RegKind::None);
    fn("conv2.kernels", m.conv2.kernels, RegKind::ConvDense);
    fn("conv2.bias", m.conv2.bias, RegKind::None);
    fn("dense1.weight", m.dense1.weight, RegKind::ConvDense);
    fn("dense1.bias", m.dense1.bias, RegKind::None);
    for (size_t i = 0; i < m.lstm.size(); ++i) {
        std::string base = "lstm" + std::to_string(i + 1);
        fn(base + ".wx", m.lstm[i].wx, RegKind::Lstm);
        fn(base + ".wh", m.lstm[i].wh, RegKind::Lstm);
        fn(base + ".bias", m.lstm[i].bias, RegKind::None);
    }
    fn("dense2.weight", m.dense2.weight, RegKind::ConvDense);
    fn("dense2.bias", m.dense2.bias, RegKind::None);
}

// Glorot-uniform weights, zero biases, LSTM forget-gate bias 1.
ConvLstmNet build(int num_classes, uint64_t seed);

// Gradients use the same container as the parameters.
using ModelGrads = ConvLstmNet;
ModelGrads zero_grads(const ConvLstmNet& m);

// Pixel batch for the forward pass: [B, 784] scaled to [0, 1].
Tensor make_batch(const std::vector<const TrafficGraph*>& graphs);

struct ForwardCache {
    Tensor x1, z1, r1, n1, z2, r2, n2, flat, d1, rd, lstm_in, h_last, logits;
    nn::PoolCache p1, p2;
    nn::DropoutCache drop;
    nn::LstmSeqCache lstm;
};

// Full pipeline on a [B, 784] pixel batch; returns logits [B, num_classes].
// dropout_p is consumed only when training. When trace is non-null it
// receives the per-sample shape chain.
Tensor forward(const ConvLstmNet& m, const Tensor& x, bool training, double dropout_p,
               Rng* rng, ForwardCache* cache = nullptr,
               std::vector<std::string>* trace = nullptr);

// Backward through the cached forward; dlogits is [B, num_classes].
ModelGrads backward(const ConvLstmNet& m, const ForwardCache& cache, const Tensor& dlogits);

struct LossResult {
    double loss = 0.0;         // mean cross-entropy + L1 terms
    double cross_entropy = 0.0;
    ModelGrads grads;
    Tensor probs;  // [B, num_classes]
};

// Training-mode loss and gradients for one batch. The rng drives the dropout
// masks; reseeding it reproduces the exact loss surface.
LossResult loss(const ConvLstmNet& m, const Tensor& x, std::span<const size_t> labels,
                const Hyperparams& hp, Rng* rng);

// The scalar alone, skipping gradient work; same value as loss().loss for an
// identically seeded rng. What finite-difference probes evaluate.
double loss_value(const ConvLstmNet& m, const Tensor& x, std::span<const size_t> labels,
                  const Hyperparams& hp, Rng* rng);

struct EpochRecord {
    int64_t epoch = 0;  // 1-based
    double mean_loss = 0.0;
    double train_accuracy = 0.0;
};

struct TrainCallbacks {
    // Called after every epoch; return false to stop early.
    std::function<bool(const EpochRecord&)> on_epoch;
    // Compute inference-mode accuracy on the training set each epoch.
    bool compute_accuracy = true;
};

struct TrainResult {
    std::vector<EpochRecord> history;
};

// Seeded shuffling, batches of hp.batchsize (the final short batch is kept),
// one Adam step per batch. Deterministic per (seed, data, hp) at a fixed
// thread setting.
TrainResult train(ConvLstmNet& m, const std::vector<LabeledGraph>& trainset,
                  const Hyperparams& hp, uint64_t seed, const TrainCallbacks& cb = {});

struct Prediction {
    size_t label = 0;
    std::vector<double> probabilities;
};

Prediction predict(const ConvLstmNet& m, const TrafficGraph& graph);

// Batched inference in fixed-size chunks.
std::vector<Prediction> predict_many(const ConvLstmNet& m,
                                     const std::vector<const TrafficGraph*>& graphs,
                                     size_t chunk = 64);

struct CheckpointMeta {
    Hyperparams hp;
    int64_t epochs_completed = 0;
    double final_loss = 0.0;
    uint64_t seed = 0;
};

struct Checkpoint {
    ConvLstmNet model;
    CheckpointMeta meta;
};

void save_checkpoint(const ConvLstmNet& m, const CheckpointMeta& meta,
                     const std::filesystem::path& path);

// Throws FormatError on a corrupt file and ConfigError when expect_classes
// is given and does not match the stored model.
Checkpoint load_checkpoint(const std::filesystem::path& path,
                           std::optional<int> expect_classes = std::nullopt);

}  // namespace netsift
