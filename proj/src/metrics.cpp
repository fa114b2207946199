#include "fleet/metrics.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "fleet/errors.hpp"

namespace fleet {

using nlohmann::json;
using nlohmann::ordered_json;

ClassificationReport compute_report(const ConfusionMatrix& confusion) {
    ClassificationReport r;
    r.confusion = confusion;
    long diag = 0;
    for (int i = 0; i < kNumClasses; ++i) {
        for (int j = 0; j < kNumClasses; ++j) {
            const long v = confusion[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
            if (v < 0) throw ValueError("compute_report: negative count");
            r.total += v;
        }
        diag += confusion[static_cast<std::size_t>(i)][static_cast<std::size_t>(i)];
    }
    if (r.total == 0) throw ValueError("compute_report: all-zero confusion matrix");
    r.top1_accuracy = static_cast<double>(diag) / static_cast<double>(r.total);

    double wp = 0.0, wr = 0.0;
    for (int c = 0; c < kNumClasses; ++c) {
        const auto ci = static_cast<std::size_t>(c);
        long tp = confusion[ci][ci], fp = 0, fn = 0;
        for (int o = 0; o < kNumClasses; ++o) {
            if (o == c) continue;
            fp += confusion[static_cast<std::size_t>(o)][ci];
            fn += confusion[ci][static_cast<std::size_t>(o)];
        }
        ClassMetrics& m = r.per_class[ci];
        m.support = tp + fn;
        if (tp + fp == 0) {
            m.precision = 0.0;
            m.precision_undefined = true;
        } else {
            m.precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
        }
        m.recall = m.support == 0 ? 0.0
                                  : static_cast<double>(tp) / static_cast<double>(m.support);
        m.f1 = (m.precision + m.recall) == 0.0
                   ? 0.0
                   : 2.0 * m.precision * m.recall / (m.precision + m.recall);
        wp += static_cast<double>(m.support) * m.precision;
        wr += static_cast<double>(m.support) * m.recall;
    }
    r.weighted_avg_precision = wp / static_cast<double>(r.total);
    r.weighted_avg_recall = wr / static_cast<double>(r.total);
    return r;
}

std::string report_to_json_string(const ClassificationReport& r) {
    ordered_json j;
    j["top1_accuracy"] = r.top1_accuracy;
    j["weighted_avg_precision"] = r.weighted_avg_precision;
    j["weighted_avg_recall"] = r.weighted_avg_recall;
    j["total"] = r.total;
    ordered_json classes = ordered_json::array();
    for (int c = 0; c < kNumClasses; ++c) {
        const ClassMetrics& m = r.per_class[static_cast<std::size_t>(c)];
        ordered_json cj;
        cj["class"] = c + 1;
        cj["precision"] = m.precision;
        cj["recall"] = m.recall;
        cj["f1"] = m.f1;
        cj["support"] = m.support;
        cj["precision_undefined"] = m.precision_undefined;
        classes.push_back(cj);
    }
    j["per_class"] = classes;
    ordered_json conf = ordered_json::array();
    for (const auto& row : r.confusion) {
        ordered_json rj = ordered_json::array();
        for (const long v : row) rj.push_back(v);
        conf.push_back(rj);
    }
    j["confusion"] = conf;
    return j.dump(2) + "\n";
}

ClassificationReport report_from_json_string(const std::string& s) {
    json j = json::parse(s);
    ClassificationReport r;
    r.top1_accuracy = j.at("top1_accuracy").get<double>();
    r.weighted_avg_precision = j.at("weighted_avg_precision").get<double>();
    r.weighted_avg_recall = j.at("weighted_avg_recall").get<double>();
    r.total = j.at("total").get<long>();
    for (const auto& cj : j.at("per_class")) {
        const int c = cj.at("class").get<int>();
        ClassMetrics& m = r.per_class[static_cast<std::size_t>(c - 1)];
        m.precision = cj.at("precision").get<double>();
        m.recall = cj.at("recall").get<double>();
        m.f1 = cj.at("f1").get<double>();
        m.support = cj.at("support").get<long>();
        m.precision_undefined = cj.at("precision_undefined").get<bool>();
    }
    const auto& conf = j.at("confusion");
    for (int i = 0; i < kNumClasses; ++i)
        for (int k = 0; k < kNumClasses; ++k)
            r.confusion[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)] =
                conf.at(static_cast<std::size_t>(i)).at(static_cast<std::size_t>(k)).get<long>();
    return r;
}

std::string report_to_csv(const ClassificationReport& r) {
    std::ostringstream os;
    os << "class,precision_pct,recall_pct,f1_pct,support\n";
    char buf[96];
    for (int c = 0; c < kNumClasses; ++c) {
        const ClassMetrics& m = r.per_class[static_cast<std::size_t>(c)];
        std::snprintf(buf, sizeof(buf), "%d,%.1f,%.1f,%.1f,%ld\n", c + 1,
                      100.0 * m.precision, 100.0 * m.recall, 100.0 * m.f1, m.support);
        os << buf;
    }
    std::snprintf(buf, sizeof(buf), "top1,%.1f,,,%ld\n", 100.0 * r.top1_accuracy, r.total);
    os << buf;
    return os.str();
}

void write_text_file(const std::string& path, const std::string& content) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open for writing: " + path);
    os << content;
    if (!os) throw IoError("write failed: " + path);
}

}  // namespace fleet
