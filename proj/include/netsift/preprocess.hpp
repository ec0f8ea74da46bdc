#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "netsift/pcap.hpp"

namespace netsift {

enum class Transport : uint8_t { Tcp = 6, Udp = 17 };

// Flow identity with anonymized endpoints. Addresses are stored left-aligned
// in 16 bytes; `family` is 4 or 6.
struct FiveTuple {
    uint8_t family = 4;
    std::array<uint8_t, 16> src{};
    std::array<uint8_t, 16> dst{};
    uint16_t sport = 0;
    uint16_t dport = 0;
    Transport proto = Transport::Tcp;

    std::string src_string() const;
    std::string dst_string() const;
    bool operator==(const FiveTuple&) const = default;
};

struct PurifiedPacket {
    FiveTuple tuple;
    std::vector<uint8_t> payload;       // captured bytes from the IP header on
    size_t transport_payload_offset = 0;  // into `payload`
    size_t declared_payload_len = 0;      // from the IP length fields
    double timestamp = 0.0;
    uint64_t capture_index = 0;  // packet ordinal within the source file
};

struct FixedRecord {
    std::vector<uint8_t> payload;  // exactly the configured target length
};

struct GraphOrigin {
    std::string file;
    uint64_t packet_ordinal = 0;
    double timestamp = 0.0;
    std::optional<FiveTuple> tuple;
    size_t transport_payload_offset = 0;
};

// A 28x28 grayscale rendering of one packet's first 784 purified bytes.
struct TrafficGraph {
    static constexpr size_t kSide = 28;
    static constexpr size_t kPixels = kSide * kSide;

    std::vector<uint8_t> pixels;  // row-major, size kPixels
    GraphOrigin origin;

    uint8_t at(size_t row, size_t col) const { return pixels[row * kSide + col]; }
};

struct PreprocessConfig {
    size_t target_len = 784;
    bool anonymize = true;
    bool dedupe = true;
    double time_unit_secs = 60.0;
    bool include_udp = true;  // false = TCP only
};

struct PreprocessSummary {
    uint64_t packets_read = 0;
    uint64_t purified = 0;
    uint64_t discarded = 0;   // non-IP, unsupported link or transport
    uint64_t malformed = 0;   // header truncation and similar per-packet errors
    uint64_t duplicates_removed = 0;
    uint64_t zero_payload_removed = 0;
    uint64_t graphs = 0;

    std::string to_json() const;
};

struct PurifyResult {
    enum class Kind { Purified, Discarded, Malformed };
    Kind kind = Kind::Discarded;
    PurifiedPacket packet;  // valid iff kind == Purified
    std::string detail;     // reason for Discarded / Malformed
};

// Strips the link layer, keeps the IP header onward, zeroes addresses when
// cfg.anonymize is set, and rejects everything that is not IPv4/IPv6 over
// TCP/UDP. Header truncation is reported as Malformed, never thrown.
PurifyResult purify(const RawPacket& packet, const PreprocessConfig& cfg);

// Drops packets without transport payload and, when cfg.dedupe, repeated
// byte-identical payloads (first occurrence wins). Order is preserved.
std::vector<PurifiedPacket> refine(const std::vector<PurifiedPacket>& packets,
                                   const PreprocessConfig& cfg,
                                   PreprocessSummary* stats = nullptr);

// Truncates to target_len or right-pads with zero bytes.
FixedRecord unify_length(std::span<const uint8_t> bytes, size_t target_len);

TrafficGraph to_graph(const FixedRecord& record);
TrafficGraph to_graph(const FixedRecord& record, GraphOrigin origin);

// Row-major pixel bytes; inverse of to_graph.
std::vector<uint8_t> flatten(const TrafficGraph& graph);

// Full P-layer pipeline: open_capture -> split_time_units -> purify ->
// refine -> unify_length -> to_graph. Deterministic for a fixed (file, cfg).
std::vector<TrafficGraph> preprocess_capture(const std::filesystem::path& path,
                                             const PreprocessConfig& cfg,
                                             PreprocessSummary* summary = nullptr);

}  // namespace netsift
