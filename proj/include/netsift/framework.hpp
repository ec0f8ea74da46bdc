#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <variant>

#include "netsift/metrics.hpp"
#include "netsift/model.hpp"

namespace netsift {

// G-layer verdict: the 3-class top-level call plus its softmax confidence.
struct GLabel {
    TopClass cls = TopClass::Encrypted;
    double confidence = 0.0;
};

struct Alert {
    int version = 1;
    double ts = 0.0;
    std::string file;
    uint64_t ordinal = 0;
    std::optional<FiveTuple> tuple;
    double confidence = 0.0;

    std::string to_json_line() const;
    static Alert from_json_line(const std::string& line);
};

enum class Evidence { PortMatch, SignatureMatch, Unknown };

struct AppLabel {
    std::string name = "Unknown";
    Evidence evidence = Evidence::Unknown;
};

struct S3Class {
    EncSub sub = EncSub::Chat;
    double confidence = 0.0;
};

// Exactly one specialized action per classified graph.
using SAction = std::variant<Alert, AppLabel, S3Class>;

// Alert delivery target: "stdout", "file:<path>" or "tcp:<host>:<port>".
class AlertSink {
public:
    static AlertSink parse(const std::string& spec);
    AlertSink() = default;
    ~AlertSink();
    AlertSink(AlertSink&&) noexcept;
    AlertSink& operator=(AlertSink&&) noexcept;
    AlertSink(const AlertSink&) = delete;
    AlertSink& operator=(const AlertSink&) = delete;

    // Appends one line; returns false on delivery failure (never throws).
    bool emit_line(const std::string& line);

private:
    enum class Kind { Stdout, File, Tcp } kind_ = Kind::Stdout;
    std::string path_;
    std::string host_;
    uint16_t port_ = 0;
    int fd_ = -1;
    bool tcp_failed_ = false;
};

GLabel g_classify(const ConvLstmNet& g_model, const TrafficGraph& graph);

struct DispatchContext {
    const ConvLstmNet* s_model = nullptr;  // 6-class model, required for Encrypted
};

// Malware -> Alert, Benign -> AppLabel, Encrypted -> S3Class. Total over all
// GLabel values; no fallthrough.
SAction dispatch(const GLabel& label, const TrafficGraph& graph,
                 const DispatchContext& ctx);

// Builds the alert, serializes it as one JSON line and delivers it through
// the sink. Delivery failure is reported via `delivered`, not thrown.
Alert s1_emit_alert(const GraphOrigin& origin, double confidence, AlertSink& sink,
                    bool* delivered = nullptr);

// Signature match takes precedence over the well-known-port table; otherwise
// Unknown. Pure function of its inputs.
AppLabel s2_port_dpi(const FiveTuple* meta, std::span<const uint8_t> payload_prefix);

S3Class s3_classify(const ConvLstmNet& s_model, const TrafficGraph& graph);

struct PipelineReport {
    std::string capture;
    PreprocessSummary preprocess;
    uint64_t classified = 0;
    std::array<uint64_t, 3> g_counts{};            // by TopClass index
    uint64_t s1_alerts = 0;
    uint64_t s2_labels = 0;
    uint64_t s3_classified = 0;
    std::map<std::string, uint64_t> s2_by_app;
    std::array<uint64_t, 6> s3_by_sub{};           // by EncSub index
    uint64_t alert_delivery_failures = 0;
    double duration_ms = 0.0;

    std::string to_json() const;
};

// Whole pipeline over one capture: preprocess, classify each graph, dispatch
// and execute the resulting action. include_timing=false zeroes the
// wall-clock field so two identical runs serialize identically.
PipelineReport run(const std::filesystem::path& capture, const ConvLstmNet& g_model,
                   const ConvLstmNet& s_model, const PreprocessConfig& cfg,
                   AlertSink& sink, bool include_timing = true);

}  // namespace netsift
