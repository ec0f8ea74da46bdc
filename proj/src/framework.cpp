#include "netsift/framework.hpp"

#include <arpa/inet.h>
#include <fcntl.h>
#include <netdb.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <chrono>
#include <cstdio>
#include <cstring>
#include <fstream>

#include <nlohmann/json.hpp>

#include "netsift/errors.hpp"

namespace netsift {

namespace {

nlohmann::ordered_json tuple_to_json(const FiveTuple& t) {
    nlohmann::ordered_json j;
    j["src"] = t.src_string();
    j["dst"] = t.dst_string();
    j["sport"] = t.sport;
    j["dport"] = t.dport;
    j["proto"] = t.proto == Transport::Tcp ? "TCP" : "UDP";
    return j;
}

FiveTuple tuple_from_json(const nlohmann::json& j) {
    FiveTuple t;
    std::string src = j.at("src");
    t.family = src.find('.') != std::string::npos ? 4 : 6;
    if (t.family == 4) {
        unsigned a, b, c, d;
        if (std::sscanf(src.c_str(), "%u.%u.%u.%u", &a, &b, &c, &d) == 4)
            t.src = {static_cast<uint8_t>(a), static_cast<uint8_t>(b),
                     static_cast<uint8_t>(c), static_cast<uint8_t>(d)};
        std::string dst = j.at("dst");
        if (std::sscanf(dst.c_str(), "%u.%u.%u.%u", &a, &b, &c, &d) == 4)
            t.dst = {static_cast<uint8_t>(a), static_cast<uint8_t>(b),
                     static_cast<uint8_t>(c), static_cast<uint8_t>(d)};
    }
    t.sport = j.at("sport");
    t.dport = j.at("dport");
    t.proto = j.at("proto") == "UDP" ? Transport::Udp : Transport::Tcp;
    return t;
}

// The minimal application signature set the S(2) labeler checks before the
// port table. First match wins.
struct Signature {
    const char* prefix;
    const char* app;
};

constexpr Signature kSignatures[] = {
    {"GET ", "HTTP/Web"},     {"POST ", "HTTP/Web"},   {"HEAD ", "HTTP/Web"},
    {"PUT ", "HTTP/Web"},     {"DELETE ", "HTTP/Web"}, {"OPTIONS ", "HTTP/Web"},
    {"HTTP/1.", "HTTP/Web"},  {"220 ", "SMTP/Email"},  {"HELO ", "SMTP/Email"},
    {"EHLO ", "SMTP/Email"},
};

// Well-known destination/source ports (IANA assignments).
const std::map<uint16_t, const char*>& port_table() {
    static const std::map<uint16_t, const char*> table = {
        {20, "FTP-DATA/File"}, {21, "FTP/File"},      {22, "SSH"},
        {23, "Telnet"},        {25, "SMTP/Email"},    {53, "DNS"},
        {67, "DHCP"},          {68, "DHCP"},          {69, "TFTP/File"},
        {80, "HTTP/Web"},      {110, "POP3/Email"},   {123, "NTP"},
        {143, "IMAP/Email"},   {161, "SNMP"},         {443, "HTTPS/Web"},
        {465, "SMTPS/Email"},  {587, "SMTP/Email"},   {993, "IMAPS/Email"},
        {995, "POP3S/Email"},  {3389, "RDP"},
    };
    return table;
}

bool looks_like_tls(std::span<const uint8_t> p) {
    // TLS record header: handshake(0x16), version 3.x
    return p.size() >= 3 && p[0] == 0x16 && p[1] == 0x03 && p[2] <= 0x04;
}

bool looks_like_dns(const FiveTuple* meta, std::span<const uint8_t> p) {
    if (!meta || (meta->sport != 53 && meta->dport != 53)) return false;
    if (p.size() < 12) return false;
    uint16_t qdcount = static_cast<uint16_t>((p[4] << 8) | p[5]);
    return qdcount >= 1 && qdcount <= 16;
}

}  // namespace

// -- alerts -----------------------------------------------------------------

std::string Alert::to_json_line() const {
    nlohmann::ordered_json j;
    j["version"] = version;
    j["ts"] = ts;
    j["origin"] = {{"file", file}, {"ordinal", ordinal}};
    if (tuple) j["tuple"] = tuple_to_json(*tuple);
    j["confidence"] = confidence;
    return j.dump();
}

Alert Alert::from_json_line(const std::string& line) {
    nlohmann::json j = nlohmann::json::parse(line);
    Alert a;
    a.version = j.at("version");
    a.ts = j.at("ts");
    a.file = j.at("origin").at("file");
    a.ordinal = j.at("origin").at("ordinal");
    if (j.contains("tuple")) a.tuple = tuple_from_json(j.at("tuple"));
    a.confidence = j.at("confidence");
    return a;
}

// -- alert sink ---------------------------------------------------------------

AlertSink AlertSink::parse(const std::string& spec) {
    AlertSink s;
    if (spec == "stdout" || spec == "-") {
        s.kind_ = Kind::Stdout;
        return s;
    }
    if (spec.rfind("file:", 0) == 0) {
        s.kind_ = Kind::File;
        s.path_ = spec.substr(5);
        if (s.path_.empty()) throw ConfigError("file sink needs a path");
        return s;
    }
    if (spec.rfind("tcp:", 0) == 0) {
        std::string rest = spec.substr(4);
        auto colon = rest.rfind(':');
        if (colon == std::string::npos)
            throw ConfigError("tcp sink spec must be tcp:<host>:<port>");
        s.kind_ = Kind::Tcp;
        s.host_ = rest.substr(0, colon);
        int port = std::stoi(rest.substr(colon + 1));
        if (port <= 0 || port > 65535) throw ConfigError("tcp sink port out of range");
        s.port_ = static_cast<uint16_t>(port);
        return s;
    }
    throw ConfigError("unknown sink spec: " + spec +
                      " (expected stdout, file:<path> or tcp:<host>:<port>)");
}

AlertSink::~AlertSink() {
    if (fd_ >= 0) ::close(fd_);
}

AlertSink::AlertSink(AlertSink&& o) noexcept { *this = std::move(o); }

AlertSink& AlertSink::operator=(AlertSink&& o) noexcept {
    if (this != &o) {
        if (fd_ >= 0) ::close(fd_);
        kind_ = o.kind_;
        path_ = std::move(o.path_);
        host_ = std::move(o.host_);
        port_ = o.port_;
        fd_ = o.fd_;
        tcp_failed_ = o.tcp_failed_;
        o.fd_ = -1;
    }
    return *this;
}

bool AlertSink::emit_line(const std::string& line) {
    switch (kind_) {
        case Kind::Stdout: {
            std::fputs(line.c_str(), stdout);
            std::fputc('\n', stdout);
            return true;
        }
        case Kind::File: {
            std::ofstream out(path_, std::ios::app);
            if (!out) return false;
            out << line << '\n';
            return static_cast<bool>(out);
        }
        case Kind::Tcp: {
            if (tcp_failed_) return false;
            if (fd_ < 0) {
                struct addrinfo hints{};
                hints.ai_family = AF_UNSPEC;
                hints.ai_socktype = SOCK_STREAM;
                struct addrinfo* res = nullptr;
                std::string port = std::to_string(port_);
                if (getaddrinfo(host_.c_str(), port.c_str(), &hints, &res) != 0 || !res) {
                    tcp_failed_ = true;
                    return false;
                }
                int fd = ::socket(res->ai_family, SOCK_STREAM | SOCK_NONBLOCK, 0);
                bool ok = fd >= 0;
                if (ok && ::connect(fd, res->ai_addr, res->ai_addrlen) != 0) {
                    if (errno == EINPROGRESS) {
                        struct pollfd pf{fd, POLLOUT, 0};
                        ok = ::poll(&pf, 1, 500) == 1;
                        if (ok) {
                            int err = 0;
                            socklen_t len = sizeof err;
                            getsockopt(fd, SOL_SOCKET, SO_ERROR, &err, &len);
                            ok = err == 0;
                        }
                    } else {
                        ok = false;
                    }
                }
                freeaddrinfo(res);
                if (!ok) {
                    if (fd >= 0) ::close(fd);
                    tcp_failed_ = true;
                    return false;
                }
                fd_ = fd;
            }
            std::string payload = line + "\n";
            size_t sent = 0;
            while (sent < payload.size()) {
                ssize_t n = ::send(fd_, payload.data() + sent, payload.size() - sent, 0);
                if (n <= 0) {
                    if (errno == EAGAIN || errno == EWOULDBLOCK) {
                        struct pollfd pf{fd_, POLLOUT, 0};
                        if (::poll(&pf, 1, 500) == 1) continue;
                    }
                    ::close(fd_);
                    fd_ = -1;
                    tcp_failed_ = true;
                    return false;
                }
                sent += static_cast<size_t>(n);
            }
            return true;
        }
    }
    return false;
}

// -- classification steps -----------------------------------------------------

GLabel g_classify(const ConvLstmNet& g_model, const TrafficGraph& graph) {
    if (g_model.num_classes != 3)
        throw ConfigError("g_classify needs a 3-class model, got " +
                          std::to_string(g_model.num_classes) + " classes");
    Prediction p = predict(g_model, graph);
    return GLabel{static_cast<TopClass>(p.label), p.probabilities[p.label]};
}

SAction dispatch(const GLabel& label, const TrafficGraph& graph,
                 const DispatchContext& ctx) {
    switch (label.cls) {
        case TopClass::Malware: {
            Alert a;
            a.ts = graph.origin.timestamp;
            a.file = graph.origin.file;
            a.ordinal = graph.origin.packet_ordinal;
            a.tuple = graph.origin.tuple;
            a.confidence = label.confidence;
            return a;
        }
        case TopClass::Benign: {
            const auto& px = graph.pixels;
            size_t off = std::min(graph.origin.transport_payload_offset, px.size());
            std::span<const uint8_t> payload(px.data() + off, px.size() - off);
            const FiveTuple* meta =
                graph.origin.tuple ? &*graph.origin.tuple : nullptr;
            return s2_port_dpi(meta, payload);
        }
        case TopClass::Encrypted: {
            if (!ctx.s_model)
                throw ConfigError("dispatch: encrypted traffic needs the 6-class model");
            return s3_classify(*ctx.s_model, graph);
        }
    }
    throw ConfigError("dispatch: unreachable G-label");
}

Alert s1_emit_alert(const GraphOrigin& origin, double confidence, AlertSink& sink,
                    bool* delivered) {
    Alert a;
    a.ts = origin.timestamp;
    a.file = origin.file;
    a.ordinal = origin.packet_ordinal;
    a.tuple = origin.tuple;
    a.confidence = confidence;
    bool ok = sink.emit_line(a.to_json_line());
    if (delivered) *delivered = ok;
    return a;
}

AppLabel s2_port_dpi(const FiveTuple* meta, std::span<const uint8_t> payload_prefix) {
    // signatures first
    for (const auto& sig : kSignatures) {
        size_t n = std::strlen(sig.prefix);
        if (payload_prefix.size() >= n &&
            std::memcmp(payload_prefix.data(), sig.prefix, n) == 0)
            return AppLabel{sig.app, Evidence::SignatureMatch};
    }
    if (looks_like_tls(payload_prefix)) return AppLabel{"TLS", Evidence::SignatureMatch};
    if (looks_like_dns(meta, payload_prefix))
        return AppLabel{"DNS", Evidence::SignatureMatch};

    if (meta) {
        auto it = port_table().find(meta->dport);
        if (it == port_table().end()) it = port_table().find(meta->sport);
        if (it != port_table().end())
            return AppLabel{it->second, Evidence::PortMatch};
    }
    return AppLabel{};
}

S3Class s3_classify(const ConvLstmNet& s_model, const TrafficGraph& graph) {
    if (s_model.num_classes != 6)
        throw ConfigError("s3_classify needs a 6-class model, got " +
                          std::to_string(s_model.num_classes) + " classes");
    Prediction p = predict(s_model, graph);
    return S3Class{static_cast<EncSub>(p.label), p.probabilities[p.label]};
}

// -- pipeline ------------------------------------------------------------------

PipelineReport run(const std::filesystem::path& capture, const ConvLstmNet& g_model,
                   const ConvLstmNet& s_model, const PreprocessConfig& cfg,
                   AlertSink& sink, bool include_timing) {
    auto t0 = std::chrono::steady_clock::now();

    PipelineReport report;
    report.capture = capture.string();
    auto graphs = preprocess_capture(capture, cfg, &report.preprocess);

    DispatchContext ctx;
    ctx.s_model = &s_model;

    for (const auto& graph : graphs) {
        GLabel g = g_classify(g_model, graph);
        ++report.g_counts[static_cast<size_t>(g.cls)];
        ++report.classified;

        SAction action = dispatch(g, graph, ctx);
        if (std::holds_alternative<Alert>(action)) {
            bool delivered = false;
            s1_emit_alert(graph.origin, g.confidence, sink, &delivered);
            ++report.s1_alerts;
            if (!delivered) ++report.alert_delivery_failures;
        } else if (auto* app = std::get_if<AppLabel>(&action)) {
            ++report.s2_labels;
            ++report.s2_by_app[app->name];
        } else {
            auto& s3 = std::get<S3Class>(action);
            ++report.s3_classified;
            ++report.s3_by_sub[static_cast<size_t>(s3.sub)];
        }
    }

    if (include_timing) {
        auto t1 = std::chrono::steady_clock::now();
        report.duration_ms = std::chrono::duration<double, std::milli>(t1 - t0).count();
    }
    return report;
}

std::string PipelineReport::to_json() const {
    nlohmann::ordered_json j;
    j["capture"] = capture;
    j["preprocess"] = nlohmann::ordered_json::parse(preprocess.to_json());
    j["classified"] = classified;
    j["g_counts"] = {{"Encrypted", g_counts[0]},
                     {"Benign", g_counts[1]},
                     {"Malware", g_counts[2]}};
    j["actions"] = {{"s1_alerts", s1_alerts},
                    {"s2_labels", s2_labels},
                    {"s3_classified", s3_classified}};
    j["s2_by_app"] = s2_by_app;
    nlohmann::ordered_json sub;
    for (size_t i = 0; i < s3_by_sub.size(); ++i) sub[enc_sub_names()[i]] = s3_by_sub[i];
    j["s3_by_sub"] = sub;
    j["alert_delivery_failures"] = alert_delivery_failures;
    j["duration_ms"] = duration_ms;
    return j.dump(2) + "\n";
}

}  // namespace netsift
