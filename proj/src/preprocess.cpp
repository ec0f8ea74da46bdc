#include "netsift/preprocess.hpp"

#include <cstdio>
#include <cstring>
#include <unordered_set>

#include <nlohmann/json.hpp>

#include "netsift/errors.hpp"

namespace netsift {

namespace {

constexpr uint16_t kEtherIpv4 = 0x0800;
constexpr uint16_t kEtherIpv6 = 0x86dd;
constexpr uint16_t kEtherVlan = 0x8100;
constexpr uint16_t kEtherQinQ = 0x88a8;

uint16_t load_be16(const uint8_t* p) {
    return static_cast<uint16_t>((p[0] << 8) | p[1]);
}

PurifyResult discard(std::string why) {
    PurifyResult r;
    r.kind = PurifyResult::Kind::Discarded;
    r.detail = std::move(why);
    return r;
}

PurifyResult malformed(std::string why) {
    PurifyResult r;
    r.kind = PurifyResult::Kind::Malformed;
    r.detail = std::move(why);
    return r;
}

// Parses the IP packet found at data[ip_off..] and fills out the purified
// packet. `data` is the full captured frame.
PurifyResult purify_ip(const RawPacket& raw, size_t ip_off, const PreprocessConfig& cfg) {
    const uint8_t* ip = raw.bytes.data() + ip_off;
    size_t avail = raw.bytes.size() - ip_off;
    if (avail < 1) return malformed("empty IP payload");

    uint8_t version = ip[0] >> 4;
    FiveTuple tuple;
    size_t ip_hdr_len = 0;
    size_t declared_ip_payload = 0;  // bytes after the IP header per length fields
    uint8_t proto = 0;

    if (version == 4) {
        if (avail < 20) return malformed("truncated IPv4 header");
        ip_hdr_len = static_cast<size_t>(ip[0] & 0x0f) * 4;
        if (ip_hdr_len < 20) return malformed("IPv4 IHL below minimum");
        if (avail < ip_hdr_len) return malformed("captured data shorter than IPv4 IHL");
        size_t total_len = load_be16(ip + 2);
        if (total_len < ip_hdr_len) return malformed("IPv4 total length below header length");
        declared_ip_payload = total_len - ip_hdr_len;
        proto = ip[9];
        tuple.family = 4;
        std::memcpy(tuple.src.data(), ip + 12, 4);
        std::memcpy(tuple.dst.data(), ip + 16, 4);
    } else if (version == 6) {
        if (avail < 40) return malformed("truncated IPv6 header");
        ip_hdr_len = 40;
        declared_ip_payload = load_be16(ip + 4);
        proto = ip[6];  // extension-header chains are not followed
        tuple.family = 6;
        std::memcpy(tuple.src.data(), ip + 8, 16);
        std::memcpy(tuple.dst.data(), ip + 24, 16);
    } else {
        return discard("not an IP packet");
    }

    size_t transport_hdr_len = 0;
    if (proto == 6) {
        tuple.proto = Transport::Tcp;
        if (avail < ip_hdr_len + 20) return malformed("truncated TCP header");
        const uint8_t* tcp = ip + ip_hdr_len;
        transport_hdr_len = static_cast<size_t>(tcp[12] >> 4) * 4;
        if (transport_hdr_len < 20) return malformed("TCP data offset below minimum");
        if (avail < ip_hdr_len + transport_hdr_len)
            return malformed("captured data shorter than TCP header");
        tuple.sport = load_be16(tcp);
        tuple.dport = load_be16(tcp + 2);
    } else if (proto == 17) {
        if (!cfg.include_udp) return discard("UDP excluded by configuration");
        tuple.proto = Transport::Udp;
        if (avail < ip_hdr_len + 8) return malformed("truncated UDP header");
        const uint8_t* udp = ip + ip_hdr_len;
        transport_hdr_len = 8;
        tuple.sport = load_be16(udp);
        tuple.dport = load_be16(udp + 2);
    } else {
        return discard("transport protocol not TCP/UDP");
    }

    PurifiedPacket out;
    out.tuple = tuple;
    out.payload.assign(ip, ip + avail);
    out.transport_payload_offset = ip_hdr_len + transport_hdr_len;
    out.declared_payload_len = declared_ip_payload > transport_hdr_len
                                   ? declared_ip_payload - transport_hdr_len
                                   : 0;
    out.timestamp = raw.timestamp;

    if (cfg.anonymize) {
        if (version == 4) {
            std::memset(out.payload.data() + 12, 0, 8);
        } else {
            std::memset(out.payload.data() + 8, 0, 32);
        }
        out.tuple.src.fill(0);
        out.tuple.dst.fill(0);
    }

    PurifyResult r;
    r.kind = PurifyResult::Kind::Purified;
    r.packet = std::move(out);
    return r;
}

}  // namespace

std::string FiveTuple::src_string() const {
    char buf[48];
    if (family == 4) {
        std::snprintf(buf, sizeof buf, "%u.%u.%u.%u", src[0], src[1], src[2], src[3]);
    } else {
        std::snprintf(buf, sizeof buf,
                      "%02x%02x:%02x%02x:%02x%02x:%02x%02x:%02x%02x:%02x%02x:%02x%02x:%02x%02x",
                      src[0], src[1], src[2], src[3], src[4], src[5], src[6], src[7], src[8],
                      src[9], src[10], src[11], src[12], src[13], src[14], src[15]);
    }
    return buf;
}

std::string FiveTuple::dst_string() const {
    FiveTuple t = *this;
    t.src = dst;
    return t.src_string();
}

PurifyResult purify(const RawPacket& packet, const PreprocessConfig& cfg) {
    if (packet.bytes.empty()) return malformed("empty packet");

    switch (packet.link) {
        case LinkKind::Ethernet: {
            size_t off = 14;
            if (packet.bytes.size() < off) return malformed("truncated Ethernet header");
            uint16_t ethertype = load_be16(packet.bytes.data() + 12);
            // unwrap up to two VLAN tags
            for (int i = 0; i < 2 && (ethertype == kEtherVlan || ethertype == kEtherQinQ); ++i) {
                if (packet.bytes.size() < off + 4) return malformed("truncated VLAN tag");
                ethertype = load_be16(packet.bytes.data() + off + 2);
                off += 4;
            }
            if (ethertype != kEtherIpv4 && ethertype != kEtherIpv6)
                return discard("non-IP ethertype");
            return purify_ip(packet, off, cfg);
        }
        case LinkKind::RawIp:
            return purify_ip(packet, 0, cfg);
        case LinkKind::Other:
            return discard("unsupported link type");
    }
    return discard("unsupported link type");
}

std::vector<PurifiedPacket> refine(const std::vector<PurifiedPacket>& packets,
                                   const PreprocessConfig& cfg, PreprocessSummary* stats) {
    std::vector<PurifiedPacket> out;
    out.reserve(packets.size());
    std::unordered_set<std::string> seen;
    for (const auto& p : packets) {
        if (p.declared_payload_len == 0) {
            if (stats) ++stats->zero_payload_removed;
            continue;
        }
        if (cfg.dedupe) {
            std::string key(reinterpret_cast<const char*>(p.payload.data()), p.payload.size());
            if (!seen.insert(std::move(key)).second) {
                if (stats) ++stats->duplicates_removed;
                continue;
            }
        }
        out.push_back(p);
    }
    return out;
}

FixedRecord unify_length(std::span<const uint8_t> bytes, size_t target_len) {
    if (target_len == 0) throw ConfigError("target length must be positive");
    FixedRecord rec;
    rec.payload.assign(bytes.begin(),
                       bytes.size() > target_len ? bytes.begin() + target_len : bytes.end());
    rec.payload.resize(target_len, 0);
    return rec;
}

TrafficGraph to_graph(const FixedRecord& record) { return to_graph(record, GraphOrigin{}); }

TrafficGraph to_graph(const FixedRecord& record, GraphOrigin origin) {
    if (record.payload.size() != TrafficGraph::kPixels)
        throw ConfigError("traffic-graph rendering needs exactly " +
                          std::to_string(TrafficGraph::kPixels) + " bytes, got " +
                          std::to_string(record.payload.size()));
    TrafficGraph g;
    g.pixels = record.payload;
    g.origin = std::move(origin);
    return g;
}

std::vector<uint8_t> flatten(const TrafficGraph& graph) { return graph.pixels; }

std::vector<TrafficGraph> preprocess_capture(const std::filesystem::path& path,
                                             const PreprocessConfig& cfg,
                                             PreprocessSummary* summary) {
    if (cfg.target_len != TrafficGraph::kPixels)
        throw ConfigError("target length must be 784 to render 28x28 traffic-graphs");

    PreprocessSummary local;
    PreprocessSummary& s = summary ? *summary : local;
    s = PreprocessSummary{};

    auto packets = open_capture(path);
    s.packets_read = packets.size();

    std::vector<TrafficGraph> graphs;
    for (const auto& unit : split_time_units(packets, cfg.time_unit_secs)) {
        std::vector<PurifiedPacket> purified;
        for (const auto& raw : unit.packets) {
            PurifyResult r = purify(raw, cfg);
            switch (r.kind) {
                case PurifyResult::Kind::Purified:
                    r.packet.capture_index = raw.file_ordinal;
                    purified.push_back(std::move(r.packet));
                    ++s.purified;
                    break;
                case PurifyResult::Kind::Discarded:
                    ++s.discarded;
                    break;
                case PurifyResult::Kind::Malformed:
                    ++s.malformed;
                    break;
            }
        }
        for (const auto& p : refine(purified, cfg, &s)) {
            GraphOrigin origin;
            origin.file = path.string();
            origin.packet_ordinal = p.capture_index;
            origin.timestamp = p.timestamp;
            origin.tuple = p.tuple;
            origin.transport_payload_offset = p.transport_payload_offset;
            graphs.push_back(to_graph(unify_length(p.payload, cfg.target_len),
                                      std::move(origin)));
        }
    }
    s.graphs = graphs.size();
    return graphs;
}

std::string PreprocessSummary::to_json() const {
    nlohmann::ordered_json j;
    j["packets_read"] = packets_read;
    j["purified"] = purified;
    j["discarded"] = discarded;
    j["malformed"] = malformed;
    j["duplicates_removed"] = duplicates_removed;
    j["zero_payload_removed"] = zero_payload_removed;
    j["graphs"] = graphs;
    return j.dump();
}

}  // namespace netsift
