#include "netsift/pcap.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>

#include "netsift/errors.hpp"

namespace netsift {

namespace {

constexpr uint32_t kMagicUs = 0xa1b2c3d4u;
constexpr uint32_t kMagicUsSwapped = 0xd4c3b2a1u;
constexpr uint32_t kMagicNs = 0xa1b23c4du;
constexpr uint32_t kMagicNsSwapped = 0x4d3cb2a1u;

// Packets larger than this are taken as file corruption, not capture data.
constexpr uint32_t kMaxSaneCapLen = 1u << 28;

uint32_t load_u32(const uint8_t* p, bool swap) {
    uint32_t v;
    std::memcpy(&v, p, 4);
    return swap ? __builtin_bswap32(v) : v;
}

LinkKind classify_link(uint32_t link_type) {
    switch (link_type) {
        case 1:
            return LinkKind::Ethernet;
        case 101:
            return LinkKind::RawIp;
        default:
            return LinkKind::Other;
    }
}

}  // namespace

std::vector<RawPacket> open_capture(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open capture file: " + path.string());

    std::vector<uint8_t> file((std::istreambuf_iterator<char>(in)),
                              std::istreambuf_iterator<char>());
    if (in.bad()) throw IoError("read failure on capture file: " + path.string());
    if (file.size() < 24)
        throw FormatError("not a pcap file (shorter than the global header): " + path.string());

    uint32_t magic;
    std::memcpy(&magic, file.data(), 4);
    bool swap = false;
    double frac_scale = 1e-6;
    switch (magic) {
        case kMagicUs:
            break;
        case kMagicUsSwapped:
            swap = true;
            break;
        case kMagicNs:
            frac_scale = 1e-9;
            break;
        case kMagicNsSwapped:
            swap = true;
            frac_scale = 1e-9;
            break;
        default:
            throw FormatError("bad pcap magic in " + path.string());
    }

    uint32_t link_type = load_u32(file.data() + 20, swap);
    LinkKind kind = classify_link(link_type);

    std::vector<RawPacket> packets;
    size_t off = 24;
    uint64_t ordinal = 0;
    while (off < file.size()) {
        ++ordinal;
        if (off + 16 > file.size())
            throw FormatError("truncated pcap record header at record " +
                              std::to_string(ordinal));
        uint32_t ts_sec = load_u32(file.data() + off, swap);
        uint32_t ts_frac = load_u32(file.data() + off + 4, swap);
        uint32_t incl_len = load_u32(file.data() + off + 8, swap);
        off += 16;
        if (incl_len == 0 || incl_len > kMaxSaneCapLen)
            throw FormatError("implausible captured length at record " +
                              std::to_string(ordinal));
        if (off + incl_len > file.size())
            throw FormatError("truncated pcap record data at record " +
                              std::to_string(ordinal));
        RawPacket pkt;
        pkt.timestamp = static_cast<double>(ts_sec) + static_cast<double>(ts_frac) * frac_scale;
        pkt.link = kind;
        pkt.link_raw = link_type;
        pkt.file_ordinal = ordinal - 1;
        pkt.bytes.assign(file.begin() + static_cast<ptrdiff_t>(off),
                         file.begin() + static_cast<ptrdiff_t>(off + incl_len));
        packets.push_back(std::move(pkt));
        off += incl_len;
    }
    return packets;
}

std::vector<TimeUnitBatch> split_time_units(const std::vector<RawPacket>& packets,
                                            double unit_secs) {
    if (!(unit_secs > 0.0)) throw ConfigError("time unit must be positive");
    if (packets.empty()) return {};

    double ts_min = packets.front().timestamp;
    for (const auto& p : packets) ts_min = std::min(ts_min, p.timestamp);

    std::map<int64_t, std::vector<RawPacket>> buckets;
    for (const auto& p : packets) {
        auto idx = static_cast<int64_t>(std::floor((p.timestamp - ts_min) / unit_secs)) + 1;
        buckets[idx].push_back(p);
    }

    std::vector<TimeUnitBatch> batches;
    batches.reserve(buckets.size());
    for (auto& [idx, pkts] : buckets) {
        std::stable_sort(pkts.begin(), pkts.end(),
                         [](const RawPacket& a, const RawPacket& b) {
                             return a.timestamp < b.timestamp;
                         });
        batches.push_back(TimeUnitBatch{idx, std::move(pkts)});
    }
    return batches;
}

}  // namespace netsift
