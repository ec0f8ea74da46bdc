#include "netsift/labels.hpp"

namespace netsift {

std::vector<std::string> eight_class_names() {
    std::vector<std::string> names(enc_sub_names().begin(), enc_sub_names().end());
    names.push_back("Benign");
    names.push_back("Malware");
    return names;
}

std::string to_string(const ClassLabel& label) {
    if (label.sub) return "Encrypted/" + enc_sub_names()[static_cast<size_t>(*label.sub)];
    return top_class_names()[static_cast<size_t>(label.top)];
}

ClassLabel parse_label(const std::string& text) {
    if (text == "Benign") return ClassLabel::benign();
    if (text == "Malware") return ClassLabel::malware();
    std::string sub = text;
    if (text.rfind("Encrypted/", 0) == 0) sub = text.substr(10);
    for (size_t i = 0; i < enc_sub_names().size(); ++i)
        if (sub == enc_sub_names()[i]) return ClassLabel::encrypted(static_cast<EncSub>(i));
    throw ConfigError("unknown class label: " + text);
}

size_t class_index(const ClassLabel& label, size_t num_classes) {
    if (!label.valid()) throw ConfigError("malformed class label");
    switch (num_classes) {
        case 3:
            return static_cast<size_t>(label.top);
        case 6:
            if (!label.sub)
                throw ConfigError("label " + to_string(label) + " has no 6-class index");
            return static_cast<size_t>(*label.sub);
        case 8:
            if (label.sub) return static_cast<size_t>(*label.sub);
            return label.top == TopClass::Benign ? 6 : 7;
        default:
            throw ConfigError("unsupported task width: " + std::to_string(num_classes));
    }
}

std::vector<std::string> task_class_names(size_t num_classes) {
    switch (num_classes) {
        case 3:
            return {top_class_names().begin(), top_class_names().end()};
        case 6:
            return {enc_sub_names().begin(), enc_sub_names().end()};
        case 8:
            return eight_class_names();
        default:
            throw ConfigError("unsupported task width: " + std::to_string(num_classes));
    }
}

std::vector<ClassLabel> all_labels() {
    std::vector<ClassLabel> labels;
    for (int i = 0; i < 6; ++i) labels.push_back(ClassLabel::encrypted(static_cast<EncSub>(i)));
    labels.push_back(ClassLabel::benign());
    labels.push_back(ClassLabel::malware());
    return labels;
}

}  // namespace netsift
