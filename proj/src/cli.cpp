#include "netsift/cli.hpp"

#include <cinttypes>
#include <cstdio>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "netsift/dataset.hpp"
#include "netsift/errors.hpp"
#include "netsift/framework.hpp"
#include "netsift/gradcheck.hpp"
#include "netsift/metrics.hpp"
#include "netsift/model.hpp"

namespace netsift {

namespace {

constexpr uint64_t kDefaultSeed = 42;

struct PreprocessFlags {
    PreprocessConfig cfg;
    bool no_anonymize = false;
    bool no_dedupe = false;
    bool tcp_only = false;

    PreprocessConfig resolve() const {
        PreprocessConfig out = cfg;
        out.anonymize = !no_anonymize;
        out.dedupe = !no_dedupe;
        out.include_udp = !tcp_only;
        return out;
    }
};

void add_preprocess_flags(CLI::App* cmd, PreprocessFlags& f) {
    cmd->add_option("--target-len", f.cfg.target_len, "Unified record length in bytes")
        ->capture_default_str();
    cmd->add_option("--time-unit", f.cfg.time_unit_secs, "Time unit width in seconds")
        ->capture_default_str();
    cmd->add_flag("--no-anonymize", f.no_anonymize, "Keep IP addresses as captured");
    cmd->add_flag("--no-dedupe", f.no_dedupe, "Keep byte-identical payload duplicates");
    cmd->add_flag("--tcp-only", f.tcp_only, "Drop UDP packets instead of keeping them");
}

std::string history_line(const EpochRecord& rec) {
    nlohmann::ordered_json j;
    j["epoch"] = rec.epoch;
    j["mean_loss"] = rec.mean_loss;
    j["train_accuracy"] = rec.train_accuracy;
    return j.dump();
}

int cmd_preprocess(const std::string& pcap, const std::string& out_dir,
                   const PreprocessFlags& flags, const std::string& label_text,
                   uint64_t seed) {
    PreprocessConfig cfg = flags.resolve();
    PreprocessSummary summary;
    auto graphs = preprocess_capture(pcap, cfg, &summary);

    if (!label_text.empty()) {
        ClassLabel label = parse_label(label_text);
        std::vector<LabeledGraph> labeled;
        labeled.reserve(graphs.size());
        for (auto& g : graphs) labeled.push_back({std::move(g), label});
        write_npy(labeled, out_dir, seed, {pcap});
    } else {
        write_unlabeled_npy(graphs, out_dir, seed, {pcap});
    }
    std::cout << summary.to_json() << "\n";
    return kExitOk;
}

int cmd_train(const std::string& data_dir, const std::string& task_name,
              const std::string& out_path, Hyperparams hp, int64_t n_per_class,
              uint64_t seed, const std::string& history_path) {
    Task task;
    if (task_name == "3class") {
        task = Task::ThreeClass;
    } else if (task_name == "6class") {
        task = Task::SixClass;
    } else {
        throw ConfigError("task must be 3class or 6class, got " + task_name);
    }
    hp.validate();

    auto pools = task_pools(load_dataset_dir(data_dir), task);
    size_t n = 0;
    if (n_per_class > 0) {
        n = static_cast<size_t>(n_per_class);
    } else {
        n = SIZE_MAX;
        for (const auto& [name, pool] : pools) n = std::min(n, pool.size());
        for (const auto& [name, pool] : pools)
            if (pool.empty())
                throw ConfigError("class " + name + " has no samples in " + data_dir);
    }
    auto trainset = balance(pools, n, seed);

    int num_classes = task == Task::ThreeClass ? 3 : 6;
    ConvLstmNet model = build(num_classes, seed);

    std::ofstream history_file;
    std::ostream* history = &std::cout;
    if (!history_path.empty()) {
        history_file.open(history_path, std::ios::trunc);
        if (!history_file) throw IoError("cannot write history file: " + history_path);
        history = &history_file;
    }

    TrainCallbacks cb;
    cb.on_epoch = [&](const EpochRecord& rec) {
        (*history) << history_line(rec) << "\n";
        history->flush();
        return true;
    };
    TrainResult result = train(model, trainset, hp, seed, cb);

    CheckpointMeta meta;
    meta.hp = hp;
    meta.epochs_completed = static_cast<int64_t>(result.history.size());
    meta.final_loss = result.history.empty() ? 0.0 : result.history.back().mean_loss;
    meta.seed = seed;
    save_checkpoint(model, meta, out_path);

    std::fprintf(stderr, "trained %d-class model on %zu samples (%zu per class), %" PRId64
                         " epochs, final loss %.6f -> %s\n",
                 num_classes, trainset.size(), n, meta.epochs_completed, meta.final_loss,
                 out_path.c_str());
    return kExitOk;
}

int cmd_eval(const std::string& ckpt_path, const std::string& data_dir,
             const std::string& json_path) {
    Checkpoint ck = load_checkpoint(ckpt_path);
    auto nc = static_cast<size_t>(ck.model.num_classes);

    Pools pools = load_dataset_dir(data_dir);
    std::vector<const TrafficGraph*> graphs;
    std::vector<size_t> truths;
    for (const auto& [label, pool] : pools) {
        if (nc == 6 && !label.sub) continue;  // 6-class task scores encrypted traffic only
        size_t idx = class_index(label, nc);
        for (const auto& g : pool) {
            graphs.push_back(&g);
            truths.push_back(idx);
        }
    }
    if (graphs.empty())
        throw ConfigError("dataset " + data_dir + " holds no samples for a " +
                          std::to_string(nc) + "-class model");

    auto preds = predict_many(ck.model, graphs);
    std::vector<size_t> pred_idx(preds.size());
    for (size_t i = 0; i < preds.size(); ++i) pred_idx[i] = preds[i].label;

    ConfusionMatrix cm = confusion(pred_idx, truths, nc);
    auto names = task_class_names(nc);
    EvalReport rep = report(cm, names);

    std::cout << rep.to_text();
    if (!json_path.empty()) {
        std::ofstream out(json_path, std::ios::trunc);
        if (!out) throw IoError("cannot write report: " + json_path);
        out << rep.to_json();
    }
    return kExitOk;
}

int cmd_run(const std::string& pcap, const std::string& g_path, const std::string& s_path,
            const PreprocessFlags& flags, const std::string& sink_spec,
            const std::string& report_path, bool no_timing) {
    Checkpoint g = load_checkpoint(g_path, 3);
    Checkpoint s = load_checkpoint(s_path, 6);
    AlertSink sink = AlertSink::parse(sink_spec);

    PipelineReport rep =
        run(pcap, g.model, s.model, flags.resolve(), sink, !no_timing);

    if (report_path.empty() || report_path == "-") {
        std::cout << rep.to_json();
    } else {
        std::ofstream out(report_path, std::ios::trunc);
        if (!out) throw IoError("cannot write report: " + report_path);
        out << rep.to_json();
    }
    return kExitOk;
}

int cmd_gradcheck(uint64_t seed, int seeds_per_op) {
    auto results = run_gradcheck_suite(seed, seeds_per_op);
    std::string failed;
    for (const auto& r : results) {
        bool ok = r.max_rel_err < kGradCheckTolerance;
        std::printf("%-24s max_rel_err %.3e  %s\n", r.op.c_str(), r.max_rel_err,
                    ok ? "PASS" : "FAIL");
        if (!ok && failed.empty()) failed = r.op;
    }
    if (!failed.empty())
        throw VerifyError("gradient check failed for op " + failed);
    return kExitOk;
}

}  // namespace

int cli_main(int argc, const char* const* argv) {
    CLI::App app{"netsift - traffic-graph classification pipeline"};
    app.require_subcommand(1);
    app.set_config("--config", "", "key=value config file ([subcommand] sections)");

    int threads = 1;
    app.add_option("--threads", threads,
                   "Worker threads for matrix math (0 = all cores)")
        ->capture_default_str();

    // preprocess
    std::string pre_pcap, pre_out, pre_label;
    uint64_t pre_seed = kDefaultSeed;
    PreprocessFlags pre_flags;
    auto* pre = app.add_subcommand("preprocess",
                                   "Render a pcap into traffic-graph NPY files");
    pre->add_option("pcap", pre_pcap, "Input capture file")->required();
    pre->add_option("-o,--out", pre_out, "Output dataset directory")->required();
    pre->add_option("--label", pre_label,
                    "Class for every graph (e.g. Benign or Encrypted/Chat)");
    pre->add_option("--seed", pre_seed, "Recorded in the manifest")->capture_default_str();
    add_preprocess_flags(pre, pre_flags);

    // train
    std::string tr_dir, tr_task, tr_out, tr_history;
    int64_t tr_n_per_class = 0;
    uint64_t tr_seed = kDefaultSeed;
    Hyperparams tr_hp;
    auto* tr = app.add_subcommand("train", "Train a classifier on a dataset directory");
    tr->add_option("-d,--data", tr_dir, "Dataset directory")->required();
    tr->add_option("--task", tr_task, "3class or 6class")->required();
    tr->add_option("-o,--out", tr_out, "Checkpoint output path")->required();
    tr->add_option("--epochs", tr_hp.epoch, "Training epochs")->capture_default_str();
    tr->add_option("--batch", tr_hp.batchsize, "Batch size")->capture_default_str();
    tr->add_option("--lr", tr_hp.learn_rate, "Adam learning rate")->capture_default_str();
    tr->add_option("--dropout", tr_hp.dropout, "Dropout probability")
        ->capture_default_str();
    tr->add_option("--lambda-conv", tr_hp.lambda_conv,
                   "L1 lambda for convolution and dense weights")
        ->capture_default_str();
    tr->add_option("--lambda-lstm", tr_hp.lambda_lstm, "L1 lambda for LSTM weights")
        ->capture_default_str();
    tr->add_option("--n-per-class", tr_n_per_class,
                   "Samples per class (0 = size of the smallest pool)")
        ->capture_default_str();
    tr->add_option("--seed", tr_seed, "Seed for sampling, init and dropout")
        ->capture_default_str();
    tr->add_option("--history", tr_history,
                   "Write per-epoch JSON records here instead of stdout");

    // eval
    std::string ev_ckpt, ev_dir, ev_json;
    auto* ev = app.add_subcommand("eval", "Score a checkpoint against a dataset");
    ev->add_option("-m,--model", ev_ckpt, "Checkpoint path")->required();
    ev->add_option("-d,--data", ev_dir, "Dataset directory")->required();
    ev->add_option("--json", ev_json, "Also write the report as JSON here");

    // run
    std::string rn_pcap, rn_g, rn_s, rn_sink = "stdout", rn_report = "-";
    bool rn_no_timing = false;
    PreprocessFlags rn_flags;
    auto* rn = app.add_subcommand("run", "Classify a capture and dispatch actions");
    rn->add_option("pcap", rn_pcap, "Input capture file")->required();
    rn->add_option("--g-model", rn_g, "3-class checkpoint")->required();
    rn->add_option("--s-model", rn_s, "6-class checkpoint")->required();
    rn->add_option("--sink", rn_sink, "Alert sink: stdout, file:<path>, tcp:<host>:<port>")
        ->capture_default_str();
    rn->add_option("--report", rn_report, "Report path (- for stdout)")
        ->capture_default_str();
    rn->add_flag("--no-timing", rn_no_timing,
                 "Zero the wall-clock field for reproducible reports");
    add_preprocess_flags(rn, rn_flags);

    // gradcheck
    uint64_t gc_seed = kDefaultSeed;
    int gc_seeds_per_op = 3;
    auto* gc = app.add_subcommand("gradcheck",
                                  "Check every backward pass against finite differences");
    gc->add_option("--seed", gc_seed, "Base seed")->capture_default_str();
    gc->add_option("--seeds-per-op", gc_seeds_per_op, "Random restarts per op")
        ->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? kExitOk : kExitFormat;
    }

    try {
        nn::set_num_threads(threads);
        if (pre->parsed())
            return cmd_preprocess(pre_pcap, pre_out, pre_flags, pre_label, pre_seed);
        if (tr->parsed())
            return cmd_train(tr_dir, tr_task, tr_out, tr_hp, tr_n_per_class, tr_seed,
                             tr_history);
        if (ev->parsed()) return cmd_eval(ev_ckpt, ev_dir, ev_json);
        if (rn->parsed())
            return cmd_run(rn_pcap, rn_g, rn_s, rn_flags, rn_sink, rn_report,
                           rn_no_timing);
        if (gc->parsed()) return cmd_gradcheck(gc_seed, gc_seeds_per_op);
        std::fprintf(stderr, "no subcommand given\n");
        return kExitFormat;
    } catch (const IoError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitIo;
    } catch (const VerifyError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitVerify;
    } catch (const std::exception& e) {  // Format/Config/json/CLI misuse
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitFormat;
    }
}

}  // namespace netsift
