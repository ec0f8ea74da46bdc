#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace netsift {

enum class LinkKind { Ethernet, RawIp, Other };

struct RawPacket {
    double timestamp = 0.0;  // seconds since epoch, sub-second fraction included
    LinkKind link = LinkKind::Other;
    uint32_t link_raw = 0;      // pcap LINKTYPE value
    uint64_t file_ordinal = 0;  // 0-based position within the source file
    std::vector<uint8_t> bytes;
};

struct TimeUnitBatch {
    int64_t index = 0;  // 1-based
    std::vector<RawPacket> packets;
};

// Reads a classic pcap file. Handles the microsecond and nanosecond magics in
// both byte orders. Throws IoError when the file cannot be read and
// FormatError on a bad magic or a truncated record (the message names the
// failing record ordinal).
std::vector<RawPacket> open_capture(const std::filesystem::path& path);

// Buckets packets into unit_secs-wide windows anchored at the earliest
// timestamp: index = floor((ts - ts_min) / unit_secs) + 1. Empty units are
// omitted; packets within a batch are ordered by timestamp.
std::vector<TimeUnitBatch> split_time_units(const std::vector<RawPacket>& packets,
                                            double unit_secs);

}  // namespace netsift
