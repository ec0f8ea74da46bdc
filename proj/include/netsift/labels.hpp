#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "netsift/errors.hpp"

namespace netsift {

// Class-index conventions for the whole pipeline. Every component (dataset
// labeling, both classifiers, reports) goes through this table; nothing else
// is allowed to assume an encoding.
//
//   3-class task:  0=Encrypted  1=Benign  2=Malware
//   6-class task:  0=Chat 1=Email 2=File 3=P2P 4=Streaming 5=VoIP
//   8-class report layout: the six encrypted classes, then Benign, Malware.

enum class TopClass : int { Encrypted = 0, Benign = 1, Malware = 2 };
enum class EncSub : int { Chat = 0, Email = 1, File = 2, P2P = 3, Streaming = 4, VoIP = 5 };

struct ClassLabel {
    TopClass top;
    std::optional<EncSub> sub;  // present iff top == Encrypted

    bool valid() const { return (top == TopClass::Encrypted) == sub.has_value(); }

    bool operator==(const ClassLabel&) const = default;
    bool operator<(const ClassLabel& o) const {
        if (top != o.top) return static_cast<int>(top) < static_cast<int>(o.top);
        return sub.value_or(EncSub::Chat) < o.sub.value_or(EncSub::Chat);
    }

    static ClassLabel encrypted(EncSub s) { return {TopClass::Encrypted, s}; }
    static ClassLabel benign() { return {TopClass::Benign, std::nullopt}; }
    static ClassLabel malware() { return {TopClass::Malware, std::nullopt}; }
};

inline const std::array<std::string, 3>& top_class_names() {
    static const std::array<std::string, 3> names = {"Encrypted", "Benign", "Malware"};
    return names;
}

inline const std::array<std::string, 6>& enc_sub_names() {
    static const std::array<std::string, 6> names = {"Chat",      "Email", "File",
                                                     "P2P", "Streaming", "VoIP"};
    return names;
}

// Eight-class presentation order used by reports.
std::vector<std::string> eight_class_names();

std::string to_string(const ClassLabel& label);

// Parses "Benign", "Malware", "Encrypted/Chat", ... Throws ConfigError on
// unknown names.
ClassLabel parse_label(const std::string& text);

// The label set a task trains over.
enum class Task { ThreeClass, SixClass };

// Index of a label within an n-way task (n = 3, 6 or 8). Throws ConfigError
// when the label does not participate in the task (e.g. Benign in 6-class).
size_t class_index(const ClassLabel& label, size_t num_classes);

// Class names for an n-way task, in index order.
std::vector<std::string> task_class_names(size_t num_classes);

// All labels a dataset directory may contain, in canonical order.
std::vector<ClassLabel> all_labels();

}  // namespace netsift
