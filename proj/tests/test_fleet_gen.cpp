#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <map>
#include <set>

#include "fleet/fleet_gen.hpp"

using namespace fleet;
namespace fs = std::filesystem;

namespace {

std::string temp_dir(const std::string& name) {
    const auto p = fs::temp_directory_path() / name;
    fs::remove_all(p);
    fs::create_directories(p);
    return p.string();
}

}  // namespace

TEST_CASE("sample_spec: axle counts respect each class's legal set") {
    Rng rng(41);
    for (int cls = 1; cls <= kNumClasses; ++cls) {
        const auto& legal = class_axle_counts(cls);
        for (int trial = 0; trial < 60; ++trial) {
            const VehicleSpec spec = sample_spec(cls, rng);
            CHECK(std::count(legal.begin(), legal.end(), spec.axle_count) == 1);
            CHECK(spec.axle_x.size() == static_cast<std::size_t>(spec.axle_count));
            CHECK(std::is_sorted(spec.axle_x.begin(), spec.axle_x.end()));
            for (std::size_t i = 1; i < spec.axle_x.size(); ++i) {
                CHECK(spec.axle_x[i] > spec.axle_x[i - 1]);
            }
        }
    }
}

TEST_CASE("sample_spec: fixed-count classes are exact") {
    Rng rng(42);
    CHECK(sample_spec(9, rng).axle_count == 5);
    CHECK(sample_spec(1, rng).axle_count == 2);
    for (int trial = 0; trial < 20; ++trial) CHECK(sample_spec(13, rng).axle_count >= 7);
}

TEST_CASE("sample_spec: body segment counts follow the trailer structure") {
    Rng rng(43);
    for (int cls = 1; cls <= 7; ++cls) CHECK(sample_spec(cls, rng).body.size() == 1);
    for (int cls = 8; cls <= 10; ++cls) CHECK(sample_spec(cls, rng).body.size() == 2);
    for (int cls = 11; cls <= 13; ++cls) CHECK(sample_spec(cls, rng).body.size() >= 2);
}

TEST_CASE("sample_spec: rejects out-of-range classes") {
    Rng rng(44);
    CHECK_THROWS_AS(sample_spec(0, rng), ValueError);
    CHECK_THROWS_AS(sample_spec(14, rng), ValueError);
}

TEST_CASE("render: wheel boxes match the axle count and stay in frame") {
    Rng meta(45);
    for (int cls = 1; cls <= kNumClasses; ++cls) {
        for (int trial = 0; trial < 10; ++trial) {
            Rng rng(derive_seed(45, "t", static_cast<std::uint64_t>(cls), trial));
            const VehicleSpec spec = sample_spec(cls, rng);
            const RenderResult r = render(spec, 64, rng);
            CHECK(r.wheels.size() == static_cast<std::size_t>(spec.axle_count));
            CHECK(r.vehicle_bbox.valid());
            CHECK(r.vehicle_bbox.x0 >= 0);
            CHECK(r.vehicle_bbox.y1 <= 64);
            for (const Box& w : r.wheels) {
                CHECK(w.valid());
                CHECK(w.x0 >= 0);
                CHECK(w.y0 >= 0);
                CHECK(w.x1 <= 64);
                CHECK(w.y1 <= 64);
            }
        }
    }
}

TEST_CASE("render: same seed gives byte-identical images") {
    auto run = [] {
        Rng rng(77);
        const VehicleSpec spec = sample_spec(9, rng);
        return render(spec, 64, rng);
    };
    const RenderResult a = run();
    const RenderResult b = run();
    CHECK(a.image == b.image);
    CHECK(a.wheels == b.wheels);
    CHECK(a.vehicle_bbox == b.vehicle_bbox);
}

TEST_CASE("generate: empty counts give an empty but valid manifest") {
    const std::string dir = temp_dir("fleet_gen_empty");
    std::map<int, int> counts;
    for (int c = 1; c <= kNumClasses; ++c) counts[c] = 0;
    const Manifest m = generate_dataset(counts, 64, 1, dir);
    CHECK(m.records.empty());
    const Manifest loaded = load_manifest(dir);
    CHECK(loaded.records.empty());
}

TEST_CASE("generate: per-class counts are exact and ids unique") {
    const std::string dir = temp_dir("fleet_gen_counts");
    std::map<int, int> counts;
    for (int c = 1; c <= kNumClasses; ++c) counts[c] = 10;
    const Manifest m = generate_dataset(counts, 64, 2, dir);
    CHECK(m.records.size() == 130);
    std::map<int, int> seen;
    std::set<std::string> ids;
    for (const auto& r : m.records) {
        seen[r.label]++;
        ids.insert(r.id);
        CHECK(fs::exists(fs::path(dir) / r.image_path));
    }
    CHECK(ids.size() == 130);
    for (int c = 1; c <= kNumClasses; ++c) CHECK(seen[c] == 10);
}

TEST_CASE("generate: every sample's wheel count is legal for its class") {
    const std::string dir = temp_dir("fleet_gen_axles");
    std::map<int, int> counts;
    for (int c = 1; c <= kNumClasses; ++c) counts[c] = 8;
    const Manifest m = generate_dataset(counts, 64, 3, dir);
    for (const auto& r : m.records) {
        const auto& legal = class_axle_counts(r.label);
        CHECK(std::count(legal.begin(), legal.end(), static_cast<int>(r.wheels.size())) == 1);
    }
}

TEST_CASE("generate: imbalanced profile matches the heavy/rare shape") {
    const auto counts = profile_counts("imbalanced", 40);
    CHECK(counts.at(9) > counts.at(8));
    CHECK(counts.at(2) > counts.at(3));
    CHECK(counts.at(1) < counts.at(5));
    CHECK(counts.at(13) < counts.at(9));
    CHECK_THROWS_AS(profile_counts("bogus", 10), ValueError);
}

TEST_CASE("manifest: serialization round-trips exactly") {
    const std::string dir = temp_dir("fleet_gen_roundtrip");
    std::map<int, int> counts = {{1, 3}, {9, 4}, {13, 2}};
    const Manifest m = generate_dataset(counts, 64, 4, dir);
    const Manifest parsed = manifest_from_jsonl(manifest_records_to_jsonl(m), m.config);
    CHECK(parsed == m);
    const Manifest loaded = load_manifest(dir);
    CHECK(loaded == m);
}

TEST_CASE("split: 100 samples at 0.8 give exactly 80/20") {
    const std::string dir = temp_dir("fleet_gen_split");
    std::map<int, int> counts;
    for (int c = 1; c <= 10; ++c) counts[c] = 10;
    const Manifest m = generate_dataset(counts, 64, 5, dir);
    auto [train, test] = split_manifest(m, 0.8, 9);
    CHECK(train.records.size() == 80);
    CHECK(test.records.size() == 20);

    // Stratified: per-class proportions hold within one sample.
    std::map<int, int> train_counts;
    for (const auto& r : train.records) train_counts[r.label]++;
    for (int c = 1; c <= 10; ++c) CHECK(train_counts[c] == 8);

    // Disjoint and exhaustive.
    std::set<std::string> ids;
    for (const auto& r : train.records) ids.insert(r.id);
    for (const auto& r : test.records) {
        CHECK(ids.count(r.id) == 0);
        ids.insert(r.id);
    }
    CHECK(ids.size() == m.records.size());
}

TEST_CASE("split: deterministic per seed, different across seeds") {
    const std::string dir = temp_dir("fleet_gen_split_seeds");
    std::map<int, int> counts;
    for (int c = 1; c <= kNumClasses; ++c) counts[c] = 12;
    const Manifest m = generate_dataset(counts, 64, 6, dir);
    auto [a1, b1] = split_manifest(m, 0.75, 100);
    auto [a2, b2] = split_manifest(m, 0.75, 100);
    CHECK(a1 == a2);
    CHECK(b1 == b2);
    auto [a3, b3] = split_manifest(m, 0.75, 101);
    CHECK_FALSE(a1 == a3);
}

TEST_CASE("split: a one-sample class cannot be stratified") {
    const std::string dir = temp_dir("fleet_gen_split_tiny");
    const Manifest m = generate_dataset({{4, 1}, {2, 6}}, 64, 7, dir);
    CHECK_THROWS_WITH_AS(split_manifest(m, 0.8, 1), doctest::Contains("class 4"),
                         ValueError);
}
