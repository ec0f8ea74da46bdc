#include "netsift/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "netsift/errors.hpp"
#include "netsift/labels.hpp"

namespace netsift {

namespace {

constexpr char kCheckpointMagic[8] = {'N', 'S', 'I', 'F', 'T', 'C', 'K', 'P'};
constexpr char kCheckpointTrailer[4] = {'N', 'S', 'E', 'N'};
constexpr uint32_t kCheckpointVersion = 1;

double glorot_bound(size_t fan_in, size_t fan_out) {
    return std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
}

void init_tensor(Tensor& t, double bound, Rng& rng) {
    for (double& v : t.data) v = rng.uniform(-bound, bound);
}

std::string dim_str(size_t a, size_t b) {
    return "(" + std::to_string(a) + "," + std::to_string(b) + ")";
}

struct ParamRef {
    std::string name;
    Tensor* tensor;
    RegKind kind;
};

template <typename Net>
std::vector<ParamRef> param_refs(Net& m) {
    std::vector<ParamRef> refs;
    for_each_param(m, [&](const std::string& name, Tensor& t, RegKind kind) {
        refs.push_back({name, &t, kind});
    });
    return refs;
}

}  // namespace

void Hyperparams::validate() const {
    if (epoch <= 0) throw ConfigError("epoch count must be positive");
    if (batchsize <= 0) throw ConfigError("batch size must be positive");
    if (!(learn_rate > 0.0)) throw ConfigError("learning rate must be positive");
    if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("dropout must lie in [0, 1)");
    if (lambda_conv < 0.0 || lambda_lstm < 0.0)
        throw ConfigError("L1 lambdas must be nonnegative");
}

ConvLstmNet build(int num_classes, uint64_t seed) {
    if (num_classes < 2) throw ConfigError("a classifier needs at least 2 classes");

    ConvLstmNet m;
    m.num_classes = num_classes;
    m.conv1.kernels = Tensor({ConvLstmNet::kConv1Filters, 1, ConvLstmNet::kKernelWidth});
    m.conv1.bias = Tensor({ConvLstmNet::kConv1Filters});
    m.conv2.kernels = Tensor(
        {ConvLstmNet::kConv2Filters, ConvLstmNet::kConv1Filters, ConvLstmNet::kKernelWidth});
    m.conv2.bias = Tensor({ConvLstmNet::kConv2Filters});
    m.dense1.weight = Tensor({ConvLstmNet::kDense1Units, ConvLstmNet::kFlatLen});
    m.dense1.bias = Tensor({ConvLstmNet::kDense1Units});
    for (size_t i = 0; i < m.lstm.size(); ++i) {
        size_t in = i == 0 ? ConvLstmNet::kLstmFeatures : ConvLstmNet::kLstmHidden;
        m.lstm[i].wx = Tensor({4 * ConvLstmNet::kLstmHidden, in});
        m.lstm[i].wh = Tensor({4 * ConvLstmNet::kLstmHidden, ConvLstmNet::kLstmHidden});
        m.lstm[i].bias = Tensor({4 * ConvLstmNet::kLstmHidden});
    }
    m.dense2.weight =
        Tensor({static_cast<size_t>(num_classes), ConvLstmNet::kLstmHidden});
    m.dense2.bias = Tensor({static_cast<size_t>(num_classes)});

    Rng rng(seed);
    for_each_param(m, [&](const std::string& name, Tensor& t, RegKind kind) {
        if (kind == RegKind::None) {
            t.fill(0.0);
            if (name.find(".bias") != std::string::npos && name.rfind("lstm", 0) == 0) {
                // forget-gate block starts after the input gate
                size_t h = t.size() / 4;
                for (size_t u = 0; u < h; ++u) t[h + u] = 1.0;
            }
            return;
        }
        double bound;
        if (t.rank() == 3) {  // conv kernels [out, in, w]
            bound = glorot_bound(t.dim(1) * t.dim(2), t.dim(0) * t.dim(2));
        } else if (name.rfind("lstm", 0) == 0) {  // gate blocks [4H, in] / [4H, H]
            bound = glorot_bound(t.dim(1), t.dim(0) / 4);
        } else {  // dense [out, in]
            bound = glorot_bound(t.dim(1), t.dim(0));
        }
        init_tensor(t, bound, rng);
    });
    return m;
}

ModelGrads zero_grads(const ConvLstmNet& m) {
    ModelGrads g = m;
    for_each_param(g, [](const std::string&, Tensor& t, RegKind) { t.fill(0.0); });
    return g;
}

Tensor make_batch(const std::vector<const TrafficGraph*>& graphs) {
    if (graphs.empty()) throw ConfigError("empty batch");
    Tensor x({graphs.size(), ConvLstmNet::kInputLen});
    for (size_t b = 0; b < graphs.size(); ++b) {
        const auto& px = graphs[b]->pixels;
        if (px.size() != ConvLstmNet::kInputLen)
            throw ConfigError("traffic-graph with wrong pixel count in batch");
        for (size_t i = 0; i < px.size(); ++i)
            x.data[b * ConvLstmNet::kInputLen + i] = static_cast<double>(px[i]) / 255.0;
    }
    return x;
}

Tensor forward(const ConvLstmNet& m, const Tensor& x, bool training, double dropout_p,
               Rng* rng, ForwardCache* cache, std::vector<std::string>* trace) {
    if (x.rank() != 2 || x.dim(1) != ConvLstmNet::kInputLen)
        throw ConfigError("forward expects a [B, 784] pixel batch");
    size_t nb = x.dim(0);

    ForwardCache local;
    ForwardCache& c = cache ? *cache : local;

    if (trace) trace->push_back(std::to_string(ConvLstmNet::kInputLen));

    c.x1 = x;
    c.x1.shape = {nb, 1, ConvLstmNet::kInputLen};
    c.z1 = nn::conv1d(c.x1, m.conv1);
    if (trace) trace->push_back(dim_str(c.z1.dim(1), c.z1.dim(2)));
    c.r1 = nn::relu(c.z1);
    c.p1 = nn::maxpool1d(c.r1, ConvLstmNet::kPoolWindow, ConvLstmNet::kPoolStride);
    if (trace) trace->push_back(dim_str(c.p1.y.dim(1), c.p1.y.dim(2)));
    c.n1 = nn::lrn(c.p1.y, m.lrn);

    c.z2 = nn::conv1d(c.n1, m.conv2);
    if (trace) trace->push_back(dim_str(c.z2.dim(1), c.z2.dim(2)));
    c.r2 = nn::relu(c.z2);
    c.p2 = nn::maxpool1d(c.r2, ConvLstmNet::kPoolWindow, ConvLstmNet::kPoolStride);
    if (trace) trace->push_back(dim_str(c.p2.y.dim(1), c.p2.y.dim(2)));
    c.n2 = nn::lrn(c.p2.y, m.lrn);

    c.flat = c.n2;
    c.flat.shape = {nb, ConvLstmNet::kFlatLen};
    if (trace) trace->push_back(std::to_string(ConvLstmNet::kFlatLen));

    c.d1 = nn::dense(c.flat, m.dense1);
    if (trace) trace->push_back(std::to_string(c.d1.dim(1)));
    c.rd = nn::relu(c.d1);
    c.drop = nn::dropout(c.rd, training ? dropout_p : 0.0, rng, training);

    c.lstm_in = c.drop.y;
    c.lstm_in.shape = {nb, ConvLstmNet::kLstmTimesteps, ConvLstmNet::kLstmFeatures};
    if (trace)
        trace->push_back(std::to_string(ConvLstmNet::kLstmTimesteps) + "x" +
                         std::to_string(ConvLstmNet::kLstmFeatures));

    // BPTT caches are only worth holding when a caller plans a backward pass
    c.h_last = nn::lstm_sequence(c.lstm_in, std::span<const nn::LstmParams>(m.lstm),
                                 training ? dropout_p : 0.0, rng, training,
                                 cache ? &c.lstm : nullptr);
    if (trace) trace->push_back(std::to_string(c.h_last.dim(1)));

    c.logits = nn::dense(c.h_last, m.dense2);
    if (trace) trace->push_back(std::to_string(c.logits.dim(1)));
    return c.logits;
}

ModelGrads backward(const ConvLstmNet& m, const ForwardCache& c, const Tensor& dlogits) {
    ModelGrads g = zero_grads(m);
    size_t nb = c.x1.dim(0);

    auto d2 = nn::dense_backward(c.h_last, m.dense2, dlogits);
    g.dense2 = std::move(d2.dp);

    auto lstm_g = nn::lstm_sequence_backward(std::span<const nn::LstmParams>(m.lstm),
                                             c.lstm, d2.dx);
    for (size_t i = 0; i < g.lstm.size(); ++i) g.lstm[i] = std::move(lstm_g.dlayers[i]);

    Tensor d_drop = std::move(lstm_g.dx);
    d_drop.shape = {nb, ConvLstmNet::kDense1Units};
    Tensor d_rd = nn::dropout_backward(c.drop, d_drop);
    Tensor d_d1 = nn::relu_backward(c.d1, d_rd);
    auto d1 = nn::dense_backward(c.flat, m.dense1, d_d1);
    g.dense1 = std::move(d1.dp);

    Tensor d_n2 = std::move(d1.dx);
    d_n2.shape = {nb, ConvLstmNet::kConv2Filters, ConvLstmNet::kPool2Len};
    Tensor d_p2 = nn::lrn_backward(c.p2.y, m.lrn, d_n2);
    Tensor d_r2 = nn::maxpool1d_backward(c.r2, c.p2, d_p2, ConvLstmNet::kPoolWindow,
                                         ConvLstmNet::kPoolStride);
    Tensor d_z2 = nn::relu_backward(c.z2, d_r2);
    auto c2 = nn::conv1d_backward(c.n1, m.conv2, d_z2);
    g.conv2 = std::move(c2.dp);

    Tensor d_p1 = nn::lrn_backward(c.p1.y, m.lrn, c2.dx);
    Tensor d_r1 = nn::maxpool1d_backward(c.r1, c.p1, d_p1, ConvLstmNet::kPoolWindow,
                                         ConvLstmNet::kPoolStride);
    Tensor d_z1 = nn::relu_backward(c.z1, d_r1);
    auto c1 = nn::conv1d_backward(c.x1, m.conv1, d_z1);
    g.conv1 = std::move(c1.dp);
    return g;
}

LossResult loss(const ConvLstmNet& m, const Tensor& x, std::span<const size_t> labels,
                const Hyperparams& hp, Rng* rng) {
    if (x.dim(0) != labels.size()) throw ConfigError("loss: batch/label count mismatch");
    for (size_t l : labels)
        if (l >= static_cast<size_t>(m.num_classes))
            throw ConfigError("loss: label out of range");

    ForwardCache cache;
    forward(m, x, true, hp.dropout, rng, &cache);
    auto xent = nn::softmax_cross_entropy(cache.logits, labels);

    LossResult r;
    r.cross_entropy = xent.mean_loss;
    r.probs = std::move(xent.probs);
    r.grads = backward(m, cache, xent.dlogits);

    double reg = 0.0;
    auto params = param_refs(const_cast<ConvLstmNet&>(m));
    auto grads = param_refs(r.grads);
    for (size_t i = 0; i < params.size(); ++i) {
        if (params[i].kind == RegKind::None) continue;
        double lambda = params[i].kind == RegKind::ConvDense ? hp.lambda_conv
                                                             : hp.lambda_lstm;
        if (lambda == 0.0) continue;
        reg += nn::l1_penalty(*params[i].tensor, lambda, grads[i].tensor);
    }
    r.loss = r.cross_entropy + reg;
    return r;
}

double loss_value(const ConvLstmNet& m, const Tensor& x, std::span<const size_t> labels,
                  const Hyperparams& hp, Rng* rng) {
    Tensor logits = forward(m, x, true, hp.dropout, rng);
    double total = nn::softmax_cross_entropy(logits, labels).mean_loss;
    auto params = param_refs(const_cast<ConvLstmNet&>(m));
    for (const auto& p : params) {
        if (p.kind == RegKind::None) continue;
        double lambda = p.kind == RegKind::ConvDense ? hp.lambda_conv : hp.lambda_lstm;
        if (lambda == 0.0) continue;
        total += nn::l1_penalty(*p.tensor, lambda);
    }
    return total;
}

TrainResult train(ConvLstmNet& m, const std::vector<LabeledGraph>& trainset,
                  const Hyperparams& hp, uint64_t seed, const TrainCallbacks& cb) {
    hp.validate();
    if (trainset.empty()) throw ConfigError("training set is empty");

    std::vector<const TrafficGraph*> graphs;
    std::vector<size_t> labels;
    graphs.reserve(trainset.size());
    for (const auto& lg : trainset) {
        graphs.push_back(&lg.graph);
        labels.push_back(class_index(lg.label, static_cast<size_t>(m.num_classes)));
    }

    std::vector<nn::AdamState> opt;
    for_each_param(m, [&](const std::string&, Tensor& t, RegKind) {
        opt.push_back(nn::AdamState::like(t));
    });

    Rng rng(seed);
    TrainResult result;
    std::vector<size_t> order(trainset.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;

    auto batch_size = static_cast<size_t>(hp.batchsize);
    for (int64_t epoch = 1; epoch <= hp.epoch; ++epoch) {
        rng.shuffle(order);
        double loss_sum = 0.0;
        size_t batches = 0;
        for (size_t start = 0; start < order.size(); start += batch_size) {
            size_t end = std::min(order.size(), start + batch_size);
            std::vector<const TrafficGraph*> bg(end - start);
            std::vector<size_t> bl(end - start);
            for (size_t i = start; i < end; ++i) {
                bg[i - start] = graphs[order[i]];
                bl[i - start] = labels[order[i]];
            }
            Tensor x = make_batch(bg);
            LossResult lr = loss(m, x, bl, hp, &rng);
            auto params = param_refs(m);
            auto grads = param_refs(lr.grads);
            for (size_t i = 0; i < params.size(); ++i)
                nn::adam_step(*params[i].tensor, *grads[i].tensor, opt[i], hp.learn_rate);
            loss_sum += lr.loss;
            ++batches;
        }

        EpochRecord rec;
        rec.epoch = epoch;
        rec.mean_loss = loss_sum / static_cast<double>(batches);
        if (cb.compute_accuracy) {
            auto preds = predict_many(m, graphs,
                                      std::max<size_t>(1, batch_size));
            size_t hits = 0;
            for (size_t i = 0; i < preds.size(); ++i)
                if (preds[i].label == labels[i]) ++hits;
            rec.train_accuracy =
                static_cast<double>(hits) / static_cast<double>(preds.size());
        }
        result.history.push_back(rec);
        if (cb.on_epoch && !cb.on_epoch(rec)) break;
    }
    return result;
}

Prediction predict(const ConvLstmNet& m, const TrafficGraph& graph) {
    std::vector<const TrafficGraph*> one{&graph};
    return predict_many(m, one, 1).front();
}

std::vector<Prediction> predict_many(const ConvLstmNet& m,
                                     const std::vector<const TrafficGraph*>& graphs,
                                     size_t chunk) {
    std::vector<Prediction> out;
    out.reserve(graphs.size());
    for (size_t start = 0; start < graphs.size(); start += chunk) {
        size_t end = std::min(graphs.size(), start + chunk);
        std::vector<const TrafficGraph*> part(graphs.begin() + static_cast<ptrdiff_t>(start),
                                              graphs.begin() + static_cast<ptrdiff_t>(end));
        Tensor x = make_batch(part);
        Tensor logits = forward(m, x, false, 0.0, nullptr);
        Tensor probs = nn::softmax(logits);
        auto nc = static_cast<size_t>(m.num_classes);
        for (size_t b = 0; b < part.size(); ++b) {
            Prediction p;
            p.probabilities.assign(probs.data.begin() + static_cast<ptrdiff_t>(b * nc),
                                   probs.data.begin() + static_cast<ptrdiff_t>((b + 1) * nc));
            p.label = 0;
            for (size_t j = 1; j < nc; ++j)
                if (p.probabilities[j] > p.probabilities[p.label]) p.label = j;
            out.push_back(std::move(p));
        }
    }
    return out;
}

// -- checkpoint serialization ------------------------------------------------

namespace {

void put_bytes(std::ostream& out, const void* p, size_t n) {
    out.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}

void put_u32(std::ostream& out, uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16),
                          static_cast<unsigned char>(v >> 24)};
    put_bytes(out, b, 4);
}

void put_u64(std::ostream& out, uint64_t v) {
    put_u32(out, static_cast<uint32_t>(v));
    put_u32(out, static_cast<uint32_t>(v >> 32));
}

void put_f64(std::ostream& out, double v) {
    uint64_t bits;
    std::memcpy(&bits, &v, 8);
    put_u64(out, bits);
}

struct Reader {
    const std::vector<unsigned char>& buf;
    size_t off = 0;
    std::string where;

    void need(size_t n) const {
        if (off + n > buf.size())
            throw FormatError("checkpoint truncated in " + where);
    }
    void take(void* p, size_t n) {
        need(n);
        std::memcpy(p, buf.data() + off, n);
        off += n;
    }
    uint32_t u32() {
        need(4);
        uint32_t v = buf[off] | (buf[off + 1] << 8) | (buf[off + 2] << 16) |
                     (static_cast<uint32_t>(buf[off + 3]) << 24);
        off += 4;
        return v;
    }
    uint64_t u64() {
        uint64_t lo = u32();
        uint64_t hi = u32();
        return lo | (hi << 32);
    }
    double f64() {
        uint64_t bits = u64();
        double v;
        std::memcpy(&v, &bits, 8);
        return v;
    }
};

}  // namespace

void save_checkpoint(const ConvLstmNet& m, const CheckpointMeta& meta,
                     const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write checkpoint: " + path.string());

    put_bytes(out, kCheckpointMagic, sizeof kCheckpointMagic);
    put_u32(out, kCheckpointVersion);
    put_u32(out, static_cast<uint32_t>(m.num_classes));
    put_u64(out, static_cast<uint64_t>(meta.hp.epoch));
    put_u64(out, static_cast<uint64_t>(meta.hp.batchsize));
    put_f64(out, meta.hp.learn_rate);
    put_f64(out, meta.hp.dropout);
    put_f64(out, meta.hp.lambda_conv);
    put_f64(out, meta.hp.lambda_lstm);
    put_u64(out, static_cast<uint64_t>(meta.epochs_completed));
    put_f64(out, meta.final_loss);
    put_u64(out, meta.seed);

    uint32_t count = 0;
    for_each_param(const_cast<ConvLstmNet&>(m),
                   [&](const std::string&, Tensor&, RegKind) { ++count; });
    put_u32(out, count);
    for_each_param(const_cast<ConvLstmNet&>(m),
                   [&](const std::string& name, Tensor& t, RegKind) {
                       put_u32(out, static_cast<uint32_t>(name.size()));
                       put_bytes(out, name.data(), name.size());
                       put_u32(out, static_cast<uint32_t>(t.rank()));
                       for (size_t d : t.shape) put_u64(out, d);
                       for (double v : t.data) put_f64(out, v);
                   });
    put_bytes(out, kCheckpointTrailer, sizeof kCheckpointTrailer);
    if (!out) throw IoError("write failure on checkpoint: " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path,
                           std::optional<int> expect_classes) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint: " + path.string());
    std::vector<unsigned char> buf((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());

    Reader r{buf, 0, "header"};
    char magic[8];
    r.take(magic, 8);
    if (std::memcmp(magic, kCheckpointMagic, 8) != 0)
        throw FormatError("not a checkpoint file: " + path.string());
    uint32_t version = r.u32();
    if (version != kCheckpointVersion)
        throw FormatError("unsupported checkpoint version " + std::to_string(version));

    auto num_classes = static_cast<int>(r.u32());
    if (expect_classes && *expect_classes != num_classes)
        throw ConfigError("checkpoint holds a " + std::to_string(num_classes) +
                          "-class model, expected " + std::to_string(*expect_classes));

    Checkpoint ck;
    ck.meta.hp.epoch = static_cast<int64_t>(r.u64());
    ck.meta.hp.batchsize = static_cast<int64_t>(r.u64());
    ck.meta.hp.learn_rate = r.f64();
    ck.meta.hp.dropout = r.f64();
    ck.meta.hp.lambda_conv = r.f64();
    ck.meta.hp.lambda_lstm = r.f64();
    ck.meta.epochs_completed = static_cast<int64_t>(r.u64());
    ck.meta.final_loss = r.f64();
    ck.meta.seed = r.u64();

    ck.model = build(num_classes, 0);
    uint32_t count = r.u32();
    uint32_t expected = 0;
    for_each_param(ck.model, [&](const std::string&, Tensor&, RegKind) { ++expected; });
    if (count != expected)
        throw FormatError("checkpoint tensor count mismatch: " + std::to_string(count));

    for_each_param(ck.model, [&](const std::string& name, Tensor& t, RegKind) {
        r.where = name;
        uint32_t name_len = r.u32();
        std::string stored(name_len, '\0');
        r.take(stored.data(), name_len);
        if (stored != name)
            throw FormatError("checkpoint tensor order mismatch: expected " + name +
                              ", found " + stored);
        uint32_t rank = r.u32();
        if (rank != t.rank()) throw FormatError("checkpoint rank mismatch in " + name);
        for (size_t i = 0; i < rank; ++i)
            if (r.u64() != t.dim(i))
                throw FormatError("checkpoint shape mismatch in " + name);
        for (double& v : t.data) v = r.f64();
    });

    r.where = "trailer";
    char trailer[4];
    r.take(trailer, 4);
    if (std::memcmp(trailer, kCheckpointTrailer, 4) != 0 || r.off != buf.size())
        throw FormatError("checkpoint trailer corrupt: " + path.string());
    return ck;
}

}  // namespace netsift
