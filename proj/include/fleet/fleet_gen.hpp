#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "fleet/image.hpp"
#include "fleet/rng.hpp"

namespace fleet {

inline constexpr int kNumClasses = 13;

// Body rectangle in chassis units: x spans [x0, x1] of the chassis length,
// `height` is also a fraction of the chassis length, measured up from the
// wheel line.
struct BodySegment {
    double x0 = 0, x1 = 0, height = 0;

    bool operator==(const BodySegment&) const = default;
};

// Normalized description of one vehicle: axle center positions along the
// chassis in [0,1], body segments, wheel radius (fraction of chassis
// length). Axle counts follow the FHWA class definitions.
struct VehicleSpec {
    int class_id = 0;
    int axle_count = 0;
    std::vector<double> axle_x;
    std::vector<BodySegment> body;
    double wheel_radius = 0;
};

// The legal axle counts for a class (e.g. class 8 -> {3,4}; class 9 -> {5}).
const std::vector<int>& class_axle_counts(int class_id);

VehicleSpec sample_spec(int class_id, Rng& rng);

struct RenderResult {
    Image image;
    Box vehicle_bbox;
    std::vector<Box> wheels;  // exact disc bounding boxes, one per axle
};

RenderResult render(const VehicleSpec& spec, int image_size, Rng& rng);

struct SampleRecord {
    std::string id;
    std::string image_path;  // relative to the dataset root
    int label = 0;
    Box vehicle_bbox;
    std::vector<Box> wheels;
    std::string source = "synthetic";

    bool operator==(const SampleRecord&) const = default;
};

struct GenConfig {
    int image_size = 64;
    std::string profile = "balanced";
    std::map<int, int> counts;
    std::uint64_t seed = 0;

    bool operator==(const GenConfig&) const = default;
};

struct Manifest {
    std::vector<SampleRecord> records;
    GenConfig config;

    bool operator==(const Manifest&) const = default;
};

// Per-class counts for the named profile. "imbalanced" skews mass toward
// classes 2 and 9 and starves 1/4/7/10/13; `base` scales the whole thing.
std::map<int, int> profile_counts(const std::string& profile, int base);

// Renders every sample, writes PGM files under out_dir/images/ plus the
// manifest, and returns it. Per-sample seeds derive from (seed, index) so
// the output is independent of generation order.
Manifest generate_dataset(const std::map<int, int>& counts, int image_size,
                          std::uint64_t seed, const std::string& out_dir);

// JSON-lines records; generation config and seed in a sidecar meta file.
void save_manifest(const Manifest& m, const std::string& dir);
Manifest load_manifest(const std::string& dir);

std::string manifest_records_to_jsonl(const Manifest& m);
Manifest manifest_from_jsonl(const std::string& jsonl, const GenConfig& config);

// Stratified split: per-class shuffle, train_fraction to the left. Both
// sides stay non-empty for every class; a class with fewer than 2 samples
// cannot be stratified and raises ValueError.
std::pair<Manifest, Manifest> split_manifest(const Manifest& m, double train_fraction,
                                             std::uint64_t seed);

}  // namespace fleet
