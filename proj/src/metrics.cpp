#include "netsift/metrics.hpp"

#include <cstdio>
#include <sstream>

#include <nlohmann/json.hpp>

#include "netsift/errors.hpp"

namespace netsift {

uint64_t ConfusionMatrix::total() const {
    uint64_t sum = 0;
    for (uint64_t c : counts) sum += c;
    return sum;
}

ConfusionMatrix confusion(std::span<const size_t> preds, std::span<const size_t> truths,
                          size_t n_classes) {
    if (preds.size() != truths.size())
        throw ConfigError("confusion: prediction/truth length mismatch");
    ConfusionMatrix cm(n_classes);
    for (size_t i = 0; i < preds.size(); ++i) {
        if (preds[i] >= n_classes || truths[i] >= n_classes)
            throw ConfigError("confusion: class index out of range at sample " +
                              std::to_string(i));
        ++cm.at(truths[i], preds[i]);
    }
    return cm;
}

double accuracy(const ConfusionMatrix& cm) {
    uint64_t total = cm.total();
    if (total == 0) throw VerifyError("accuracy undefined on an empty confusion matrix");
    uint64_t trace = 0;
    for (size_t c = 0; c < cm.n_classes; ++c) trace += cm.at(c, c);
    return static_cast<double>(trace) / static_cast<double>(total);
}

ClassMetrics per_class(const ConfusionMatrix& cm, size_t c) {
    if (c >= cm.n_classes) throw ConfigError("per_class: class index out of range");
    uint64_t tp = cm.at(c, c);
    uint64_t row = 0, col = 0;
    for (size_t j = 0; j < cm.n_classes; ++j) {
        row += cm.at(c, j);
        col += cm.at(j, c);
    }
    uint64_t fp = col - tp;
    uint64_t fn = row - tp;

    ClassMetrics m;
    m.support = row;
    if (tp + fp == 0) {
        m.precision_undefined = true;
    } else {
        m.precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
    }
    if (tp + fn == 0) {
        m.recall_undefined = true;
    } else {
        m.recall = static_cast<double>(tp) / static_cast<double>(tp + fn);
    }
    if (m.precision + m.recall > 0.0)
        m.f1 = 2.0 * m.precision * m.recall / (m.precision + m.recall);
    return m;
}

EvalReport report(const ConfusionMatrix& cm, std::span<const std::string> class_names) {
    if (class_names.size() != cm.n_classes)
        throw ConfigError("report: class name count does not match the matrix");

    EvalReport r;
    r.class_names.assign(class_names.begin(), class_names.end());
    r.cm = cm;
    r.total = cm.total();
    r.accuracy = accuracy(cm);
    for (size_t c = 0; c < cm.n_classes; ++c) {
        ClassMetrics m = per_class(cm, c);
        r.macro_precision += m.precision;
        r.macro_recall += m.recall;
        r.macro_f1 += m.f1;
        r.classes.push_back(m);
    }
    auto n = static_cast<double>(cm.n_classes);
    r.macro_precision /= n;
    r.macro_recall /= n;
    r.macro_f1 /= n;
    return r;
}

std::string EvalReport::to_json() const {
    nlohmann::ordered_json j;
    j["total"] = total;
    j["accuracy"] = accuracy;
    j["macro"] = {{"precision", macro_precision},
                  {"recall", macro_recall},
                  {"f1", macro_f1}};
    j["classes"] = nlohmann::ordered_json::array();
    for (size_t c = 0; c < classes.size(); ++c) {
        nlohmann::ordered_json e;
        e["name"] = class_names[c];
        e["precision"] = classes[c].precision;
        e["recall"] = classes[c].recall;
        e["f1"] = classes[c].f1;
        e["support"] = classes[c].support;
        if (classes[c].precision_undefined) e["precision_undefined"] = true;
        if (classes[c].recall_undefined) e["recall_undefined"] = true;
        j["classes"].push_back(e);
    }
    j["confusion"] = nlohmann::ordered_json::array();
    for (size_t t = 0; t < cm.n_classes; ++t) {
        nlohmann::ordered_json row = nlohmann::ordered_json::array();
        for (size_t p = 0; p < cm.n_classes; ++p) row.push_back(cm.at(t, p));
        j["confusion"].push_back(row);
    }
    return j.dump(2) + "\n";
}

std::string EvalReport::to_text() const {
    std::ostringstream os;
    size_t width = 10;
    for (const auto& n : class_names) width = std::max(width, n.size() + 2);

    char line[256];
    std::snprintf(line, sizeof line, "%-*s %9s %9s %9s %9s\n", static_cast<int>(width),
                  "class", "precision", "recall", "f1", "support");
    os << line;
    for (size_t c = 0; c < classes.size(); ++c) {
        std::snprintf(line, sizeof line, "%-*s %9.5f %9.5f %9.5f %9llu%s\n",
                      static_cast<int>(width), class_names[c].c_str(),
                      classes[c].precision, classes[c].recall, classes[c].f1,
                      static_cast<unsigned long long>(classes[c].support),
                      (classes[c].precision_undefined || classes[c].recall_undefined)
                          ? "  (zero denominator)"
                          : "");
        os << line;
    }
    std::snprintf(line, sizeof line, "%-*s %9.5f %9.5f %9.5f %9llu\n",
                  static_cast<int>(width), "macro", macro_precision, macro_recall,
                  macro_f1, static_cast<unsigned long long>(total));
    os << line;
    std::snprintf(line, sizeof line, "accuracy %.5f over %llu samples\n", accuracy,
                  static_cast<unsigned long long>(total));
    os << line;
    return os.str();
}

}  // namespace netsift
