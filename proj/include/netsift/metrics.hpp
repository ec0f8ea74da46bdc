#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace netsift {

// Rows are truth, columns are prediction.
struct ConfusionMatrix {
    size_t n_classes = 0;
    std::vector<uint64_t> counts;  // n x n

    explicit ConfusionMatrix(size_t n = 0) : n_classes(n), counts(n * n, 0) {}

    uint64_t& at(size_t truth, size_t pred) { return counts[truth * n_classes + pred]; }
    uint64_t at(size_t truth, size_t pred) const { return counts[truth * n_classes + pred]; }
    uint64_t total() const;
};

ConfusionMatrix confusion(std::span<const size_t> preds, std::span<const size_t> truths,
                          size_t n_classes);

// trace / total. Throws VerifyError on an empty matrix.
double accuracy(const ConfusionMatrix& cm);

struct ClassMetrics {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    uint64_t support = 0;  // row sum: how often the class is the truth
    // Flag zero-denominator cases where the metric was pinned to 0.
    bool precision_undefined = false;
    bool recall_undefined = false;
};

ClassMetrics per_class(const ConfusionMatrix& cm, size_t c);

struct EvalReport {
    std::vector<std::string> class_names;
    std::vector<ClassMetrics> classes;
    double accuracy = 0.0;
    double macro_precision = 0.0;
    double macro_recall = 0.0;
    double macro_f1 = 0.0;
    uint64_t total = 0;
    ConfusionMatrix cm{0};

    std::string to_json() const;
    std::string to_text() const;  // aligned plain-text table
};

EvalReport report(const ConfusionMatrix& cm, std::span<const std::string> class_names);

}  // namespace netsift
