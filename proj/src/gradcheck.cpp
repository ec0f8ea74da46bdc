#include "netsift/gradcheck.hpp"

#include <cmath>

#include "netsift/dataset.hpp"
#include "netsift/model.hpp"
#include "netsift/nn.hpp"

namespace netsift {

namespace {

using nn::GradCheckProblem;

Tensor random_tensor(std::vector<size_t> shape, Rng& rng, double lo = -1.0,
                     double hi = 1.0) {
    Tensor t(std::move(shape));
    for (double& v : t.data) v = rng.uniform(lo, hi);
    return t;
}

void add_coords(GradCheckProblem& p, Tensor& t, const Tensor& analytic) {
    for (size_t i = 0; i < t.size(); ++i) {
        p.coords.push_back(&t.data[i]);
        p.analytic.push_back(analytic[i]);
    }
}

double weighted_sum(const Tensor& y, const Tensor& weights) {
    double s = 0.0;
    for (size_t i = 0; i < y.size(); ++i) s += y[i] * weights[i];
    return s;
}

double check_conv1d(uint64_t seed) {
    Rng rng(seed);
    Tensor x = random_tensor({2, 9}, rng);
    nn::Conv1dParams p{random_tensor({3, 2, 3}, rng), random_tensor({3}, rng)};
    Tensor r = random_tensor({3, 9}, rng);  // upstream weights

    auto g = nn::conv1d_backward(x, p, r);
    GradCheckProblem prob;
    prob.loss = [&] { return weighted_sum(nn::conv1d(x, p), r); };
    add_coords(prob, x, g.dx);
    add_coords(prob, p.kernels, g.dp.kernels);
    add_coords(prob, p.bias, g.dp.bias);
    return nn::grad_check(prob);
}

double check_dense(uint64_t seed) {
    Rng rng(seed);
    Tensor x = random_tensor({3, 4}, rng);
    nn::DenseParams p{random_tensor({5, 4}, rng), random_tensor({5}, rng)};
    Tensor r = random_tensor({3, 5}, rng);

    auto g = nn::dense_backward(x, p, r);
    GradCheckProblem prob;
    prob.loss = [&] { return weighted_sum(nn::dense(x, p), r); };
    add_coords(prob, x, g.dx);
    add_coords(prob, p.weight, g.dp.weight);
    add_coords(prob, p.bias, g.dp.bias);
    return nn::grad_check(prob);
}

double check_relu(uint64_t seed) {
    Rng rng(seed);
    Tensor x = random_tensor({12}, rng);
    for (double& v : x.data)  // keep probes away from the kink at 0
        if (std::abs(v) < 0.05) v = v < 0 ? v - 0.1 : v + 0.1;
    Tensor r = random_tensor({12}, rng);

    Tensor dx = nn::relu_backward(x, r);
    GradCheckProblem prob;
    prob.loss = [&] { return weighted_sum(nn::relu(x), r); };
    add_coords(prob, x, dx);
    return nn::grad_check(prob);
}

double check_maxpool(uint64_t seed) {
    Rng rng(seed);
    Tensor x({2, 9});
    // distinct values per window so the max is stable under the probe step
    std::vector<double> vals(x.size());
    for (size_t i = 0; i < vals.size(); ++i) vals[i] = rng.uniform(-1.0, 1.0);
    for (size_t i = 0; i < vals.size(); ++i)
        x[i] = vals[i] + static_cast<double>(i % 3) * 0.01;
    auto cache = nn::maxpool1d(x, 3, 3);
    Tensor r = random_tensor(cache.y.shape, rng);

    Tensor dx = nn::maxpool1d_backward(x, cache, r, 3, 3);
    GradCheckProblem prob;
    prob.loss = [&] { return weighted_sum(nn::maxpool1d(x, 3, 3).y, r); };
    add_coords(prob, x, dx);
    return nn::grad_check(prob);
}

double check_lrn(uint64_t seed) {
    Rng rng(seed);
    nn::LrnConfig cfg;
    cfg.k = 2.0;
    cfg.n = 3;
    cfg.alpha = 0.25;  // strong enough that the normalization term matters
    cfg.beta = 0.75;
    Tensor x = random_tensor({4, 6}, rng);
    Tensor r = random_tensor({4, 6}, rng);

    Tensor dx = nn::lrn_backward(x, cfg, r);
    GradCheckProblem prob;
    prob.loss = [&] { return weighted_sum(nn::lrn(x, cfg), r); };
    add_coords(prob, x, dx);
    return nn::grad_check(prob);
}

double check_dropout(uint64_t seed) {
    Rng rng(seed);
    Tensor x = random_tensor({10}, rng);
    Tensor r = random_tensor({10}, rng);
    double p = 0.4;

    Rng mask_rng(seed + 1);
    auto cache = nn::dropout(x, p, &mask_rng, true);
    Tensor dx = nn::dropout_backward(cache, r);
    GradCheckProblem prob;
    prob.loss = [&] {
        Rng again(seed + 1);  // identical mask on every probe
        return weighted_sum(nn::dropout(x, p, &again, true).y, r);
    };
    add_coords(prob, x, dx);
    return nn::grad_check(prob);
}

double check_lstm_step(uint64_t seed) {
    Rng rng(seed);
    size_t in = 4, hidden = 3, batch = 2;
    nn::LstmParams p{random_tensor({4 * hidden, in}, rng),
                     random_tensor({4 * hidden, hidden}, rng),
                     random_tensor({4 * hidden}, rng)};
    Tensor x = random_tensor({batch, in}, rng);
    Tensor h = random_tensor({batch, hidden}, rng);
    Tensor c = random_tensor({batch, hidden}, rng);
    Tensor rh = random_tensor({batch, hidden}, rng);
    Tensor rc = random_tensor({batch, hidden}, rng);

    nn::LstmStepCache cache;
    nn::lstm_step(x, h, c, p, &cache);
    auto g = nn::lstm_step_backward(p, cache, rh, rc);

    GradCheckProblem prob;
    prob.loss = [&] {
        auto [hn, cn] = nn::lstm_step(x, h, c, p);
        return weighted_sum(hn, rh) + weighted_sum(cn, rc);
    };
    add_coords(prob, x, g.dx);
    add_coords(prob, h, g.dh_prev);
    add_coords(prob, c, g.dc_prev);
    add_coords(prob, p.wx, g.dp.wx);
    add_coords(prob, p.wh, g.dp.wh);
    add_coords(prob, p.bias, g.dp.bias);
    return nn::grad_check(prob);
}

double check_lstm_sequence(uint64_t seed) {
    Rng rng(seed);
    size_t feat = 4, hidden = 5, batch = 2, steps = 3;
    std::vector<nn::LstmParams> layers;
    for (size_t l = 0; l < 3; ++l) {
        size_t in = l == 0 ? feat : hidden;
        layers.push_back({random_tensor({4 * hidden, in}, rng),
                          random_tensor({4 * hidden, hidden}, rng),
                          random_tensor({4 * hidden}, rng)});
    }
    Tensor x = random_tensor({batch, steps, feat}, rng);
    Tensor r = random_tensor({batch, hidden}, rng);
    double drop_p = 0.3;

    auto forward = [&] {
        Rng mask_rng(seed + 7);
        nn::LstmSeqCache cache;
        Tensor h = nn::lstm_sequence(x, layers, drop_p, &mask_rng, true, &cache);
        return std::make_pair(weighted_sum(h, r), std::move(cache));
    };
    auto [value, cache] = forward();
    (void)value;
    auto g = nn::lstm_sequence_backward(layers, cache, r);

    GradCheckProblem prob;
    prob.loss = [&] { return forward().first; };
    add_coords(prob, x, g.dx);
    for (size_t l = 0; l < layers.size(); ++l) {
        add_coords(prob, layers[l].wx, g.dlayers[l].wx);
        add_coords(prob, layers[l].wh, g.dlayers[l].wh);
        add_coords(prob, layers[l].bias, g.dlayers[l].bias);
    }
    return nn::grad_check(prob);
}

double check_softmax_xent(uint64_t seed) {
    Rng rng(seed);
    Tensor logits = random_tensor({2, 5}, rng, -2.0, 2.0);
    std::vector<size_t> labels = {static_cast<size_t>(rng.below(5)),
                                  static_cast<size_t>(rng.below(5))};

    auto res = nn::softmax_cross_entropy(logits, labels);
    GradCheckProblem prob;
    prob.loss = [&] { return nn::softmax_cross_entropy(logits, labels).mean_loss; };
    add_coords(prob, logits, res.dlogits);
    return nn::grad_check(prob);
}

double check_model_loss(uint64_t seed, size_t probes) {
    ConvLstmNet m = build(3, seed);
    auto data = synth_generate(default_synth_spec(3, 1, seed + 1));
    std::vector<const TrafficGraph*> graphs;
    std::vector<size_t> labels;
    for (const auto& lg : data) {
        graphs.push_back(&lg.graph);
        labels.push_back(class_index(lg.label, 3));
    }
    graphs.resize(2);
    labels.resize(2);
    Tensor x = make_batch(graphs);

    Hyperparams hp;
    hp.dropout = 0.5;
    hp.lambda_conv = 0.0005;
    hp.lambda_lstm = 0.00009;

    LossResult base = [&] {
        Rng mask_rng(seed + 13);
        return loss(m, x, labels, hp, &mask_rng);
    }();

    // Probe a sample of coordinates across every parameter tensor. L1 puts a
    // kink at 0, so regularized weights are only probed where |w| dominates
    // the finite-difference step; biases carry no L1 and may sit at 0.
    Rng pick(seed + 29);
    GradCheckProblem prob;
    std::vector<Tensor*> params, grads;
    std::vector<RegKind> kinds;
    for_each_param(m, [&](const std::string&, Tensor& t, RegKind k) {
        params.push_back(&t);
        kinds.push_back(k);
    });
    for_each_param(base.grads,
                   [&](const std::string&, Tensor& t, RegKind) { grads.push_back(&t); });
    size_t probes = 50;
    for (size_t i = 0; i < probes; ++i) {
        size_t ti = static_cast<size_t>(pick.below(params.size()));
        size_t ci = static_cast<size_t>(pick.below(params[ti]->size()));
        if (kinds[ti] != RegKind::None && std::abs(params[ti]->data[ci]) < 1e-4) {
            --i;
            continue;
        }
        prob.coords.push_back(&params[ti]->data[ci]);
        prob.analytic.push_back(grads[ti]->data[ci]);
    }
    prob.loss = [&] { return eval_loss().loss; };
    return nn::grad_check(prob);
}

}  // namespace

std::vector<GradCheckCase> standard_gradcheck_cases() {
    return {
        {"conv1d", check_conv1d},
        {"dense", check_dense},
        {"relu", check_relu},
        {"maxpool1d", check_maxpool},
        {"lrn", check_lrn},
        {"dropout", check_dropout},
        {"lstm_step", check_lstm_step},
        {"lstm_sequence", check_lstm_sequence},
        {"softmax_cross_entropy", check_softmax_xent},
        {"model_loss", check_model_loss},
    };
}

std::vector<GradCheckResult> run_gradcheck_suite(uint64_t base_seed, int seeds_per_op,
                                                 const std::vector<GradCheckCase>& extra) {
    auto cases = standard_gradcheck_cases();
    cases.insert(cases.end(), extra.begin(), extra.end());

    std::vector<GradCheckResult> results;
    for (const auto& [name, fn] : cases) {
        double worst = 0.0;
        for (int s = 0; s < seeds_per_op; ++s)
            worst = std::max(worst, fn(base_seed + 1000 * static_cast<uint64_t>(s) + 1));
        results.push_back({name, worst});
    }
    return results;
}

}  // namespace netsift
