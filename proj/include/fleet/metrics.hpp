#pragma once

#include <array>
#include <string>
#include <vector>

#include "fleet/fleet_gen.hpp"

namespace fleet {

using ConfusionMatrix = std::array<std::array<long, kNumClasses>, kNumClasses>;

struct ClassMetrics {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    long support = 0;
    // TP+FP was zero: the class was never predicted, precision reported as
    // 0 and flagged instead of failing.
    bool precision_undefined = false;
};

struct ClassificationReport {
    std::array<ClassMetrics, kNumClasses> per_class{};
    double top1_accuracy = 0.0;
    double weighted_avg_precision = 0.0;
    double weighted_avg_recall = 0.0;  // equals top-1 by the support-weighting identity
    ConfusionMatrix confusion{};
    long total = 0;
};

// Rows are true classes, columns predicted. Throws on an all-zero matrix.
ClassificationReport compute_report(const ConfusionMatrix& confusion);

std::string report_to_json_string(const ClassificationReport& r);
ClassificationReport report_from_json_string(const std::string& s);

// Per-class percentages to one decimal, shaped class,precision,recall,f1,support.
std::string report_to_csv(const ClassificationReport& r);

void write_text_file(const std::string& path, const std::string& content);

}  // namespace fleet
