#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "fleet/wheels.hpp"

using namespace fleet;

namespace {

Box wheel_at(double cx, double cy = 50.0, double r = 2.0) {
    return Box{cx - r, cy - r, cx + r, cy + r};
}

// Exhaustive oracle: check every cell of the grid for positive-area
// intersection with exact interval arithmetic.
std::vector<std::size_t> overlap_oracle(const Box& box, int image_size, int patch) {
    const int grid = image_size / patch;
    std::vector<std::size_t> hit;
    for (int r = 0; r < grid; ++r) {
        for (int c = 0; c < grid; ++c) {
            const double w = std::min(box.x1, double((c + 1) * patch)) -
                             std::max(box.x0, double(c * patch));
            const double h = std::min(box.y1, double((r + 1) * patch)) -
                             std::max(box.y0, double(r * patch));
            const double cx1 = std::min(box.x1, double(image_size));
            const double cy1 = std::min(box.y1, double(image_size));
            const double cx0 = std::max(box.x0, 0.0);
            const double cy0 = std::max(box.y0, 0.0);
            if (w > 0 && h > 0 && cx0 < cx1 && cy0 < cy1) {
                hit.push_back(static_cast<std::size_t>(r) * grid + c);
            }
        }
    }
    return hit;
}

// Second route for integer boxes: per-pixel membership.
std::vector<std::size_t> pixel_oracle(const Box& box, int image_size, int patch) {
    const int grid = image_size / patch;
    std::set<std::size_t> hit;
    for (int y = 0; y < image_size; ++y) {
        for (int x = 0; x < image_size; ++x) {
            if (x >= box.x0 && x < box.x1 && y >= box.y0 && y < box.y1) {
                hit.insert(static_cast<std::size_t>(y / patch) * grid +
                           static_cast<std::size_t>(x / patch));
            }
        }
    }
    return {hit.begin(), hit.end()};
}

}  // namespace

TEST_CASE("normalize: spacings follow directly from center gaps") {
    std::vector<Box> boxes = {wheel_at(10), wheel_at(30), wheel_at(60), wheel_at(110)};
    WheelFeature f = normalize_wheel_positions(boxes);
    CHECK(f.wheel_count == 4);
    CHECK(f.spacings[0] == doctest::Approx(0.2));
    CHECK(f.spacings[1] == doctest::Approx(0.3));
    CHECK(f.spacings[2] == doctest::Approx(0.5));
    for (int i = 3; i < kWheelCapacity; ++i) CHECK(f.spacings[static_cast<std::size_t>(i)] == 0.0);
    CHECK_FALSE(f.truncated);
}

TEST_CASE("normalize: two wheels always give [1, 0, ...]") {
    WheelFeature f = normalize_wheel_positions({wheel_at(12.5), wheel_at(51.0)});
    CHECK(f.wheel_count == 2);
    CHECK(f.spacings[0] == doctest::Approx(1.0));
    for (int i = 1; i < kWheelCapacity; ++i) CHECK(f.spacings[static_cast<std::size_t>(i)] == 0.0);
}

TEST_CASE("normalize: affine changes of geometry cancel out") {
    Rng rng(31);
    for (int trial = 0; trial < 100; ++trial) {
        const int n = 2 + static_cast<int>(rng.uniform_index(7));
        std::vector<Box> boxes;
        double x = rng.uniform(0.0, 10.0);
        for (int i = 0; i < n; ++i) {
            x += rng.uniform(4.0, 20.0);
            boxes.push_back(wheel_at(x, rng.uniform(20.0, 60.0)));
        }
        const double a = rng.uniform(0.1, 3.0);
        const double b = rng.uniform(-50.0, 50.0);
        std::vector<Box> mapped;
        for (const Box& w : boxes) {
            mapped.push_back(Box{a * w.x0 + b, w.y0 + 7.0, a * w.x1 + b, w.y1 + 7.0});
        }
        const WheelFeature f1 = normalize_wheel_positions(boxes);
        const WheelFeature f2 = normalize_wheel_positions(mapped);
        CHECK(f1.wheel_count == f2.wheel_count);
        for (int i = 0; i < kWheelCapacity; ++i) {
            CHECK(std::abs(f1.spacings[static_cast<std::size_t>(i)] -
                           f2.spacings[static_cast<std::size_t>(i)]) < 1e-9);
        }
    }
}

TEST_CASE("normalize: box order never matters") {
    Rng rng(32);
    std::vector<Box> boxes = {wheel_at(15), wheel_at(42), wheel_at(33), wheel_at(58)};
    const WheelFeature base = normalize_wheel_positions(boxes);
    for (int trial = 0; trial < 20; ++trial) {
        rng.shuffle(boxes.begin(), boxes.end());
        const WheelFeature f = normalize_wheel_positions(boxes);
        for (int i = 0; i < kWheelCapacity; ++i) {
            CHECK(f.spacings[static_cast<std::size_t>(i)] ==
                  base.spacings[static_cast<std::size_t>(i)]);
        }
    }
}

TEST_CASE("normalize: populated spacings sum to 1 whenever count >= 2") {
    Rng rng(33);
    for (int trial = 0; trial < 50; ++trial) {
        const int n = 2 + static_cast<int>(rng.uniform_index(8));
        std::vector<Box> boxes;
        double x = 5.0;
        for (int i = 0; i < n; ++i) {
            x += rng.uniform(3.0, 15.0);
            boxes.push_back(wheel_at(x));
        }
        const WheelFeature f = normalize_wheel_positions(boxes);
        double sum = 0.0;
        for (const double s : f.spacings) sum += s;
        CHECK(std::abs(sum - 1.0) < 1e-9);
    }
}

TEST_CASE("normalize: degenerate counts produce the zero vector") {
    for (const auto& boxes :
         {std::vector<Box>{}, std::vector<Box>{wheel_at(30.0)}}) {
        const WheelFeature f = normalize_wheel_positions(boxes);
        CHECK(f.wheel_count == static_cast<int>(boxes.size()));
        for (const double s : f.spacings) CHECK(s == 0.0);
    }
    // All centers coincide: max distance is zero, degrade to zeros.
    const WheelFeature f =
        normalize_wheel_positions({wheel_at(30.0, 10.0), wheel_at(30.0, 40.0)});
    CHECK(f.wheel_count == 2);
    for (const double s : f.spacings) CHECK(s == 0.0);
}

TEST_CASE("normalize: overflow drops the leftmost spacings and flags it") {
    std::vector<Box> boxes;
    for (int i = 0; i <= kWheelCapacity + 1; ++i) {
        boxes.push_back(wheel_at(10.0 + 10.0 * i));
    }
    const WheelFeature f = normalize_wheel_positions(boxes);
    CHECK(f.wheel_count == kWheelCapacity + 2);
    CHECK(f.truncated);
    double sum = 0.0;
    for (const double s : f.spacings) {
        CHECK(s > 0.0);
        sum += s;
    }
    CHECK(sum < 1.0);  // one spacing was dropped from the left
}

TEST_CASE("patch indices: single cell, full frame, four-cell straddle") {
    auto single = wheel_patch_indices(Box{0, 24, 8, 32}, 32, 8);
    REQUIRE(single.size() == 1);
    CHECK(single[0] == 12);

    auto all = wheel_patch_indices(Box{0, 0, 32, 32}, 32, 8);
    CHECK(all.size() == 16);

    auto corner = wheel_patch_indices(Box{7, 7, 9, 9}, 32, 8);
    CHECK(corner == std::vector<std::size_t>{0, 1, 4, 5});
}

TEST_CASE("patch indices: grid-aligned edges do not leak into neighbors") {
    // Box touching x=8 exactly: zero-area overlap with column 1.
    auto touch = wheel_patch_indices(Box{0, 0, 8, 8}, 32, 8);
    CHECK(touch == std::vector<std::size_t>{0});
}

TEST_CASE("patch indices: empty intersection gives an empty set") {
    CHECK(wheel_patch_indices(Box{40, 40, 50, 50}, 32, 8).empty());
    CHECK(wheel_patch_indices(Box{-10, -10, -1, -1}, 32, 8).empty());
}

TEST_CASE("patch indices: matches the brute-force oracle on a 4x4 grid") {
    Rng rng(34);
    for (int trial = 0; trial < 300; ++trial) {
        Box b;
        b.x0 = rng.uniform(-4.0, 34.0);
        b.y0 = rng.uniform(-4.0, 34.0);
        b.x1 = b.x0 + rng.uniform(0.5, 20.0);
        b.y1 = b.y0 + rng.uniform(0.5, 20.0);
        CHECK(wheel_patch_indices(b, 32, 8) == overlap_oracle(b, 32, 8));
    }
}

TEST_CASE("patch indices: exhaustive integer boxes agree with both oracles") {
    for (int x0 = -2; x0 < 32; x0 += 3) {
        for (int x1 = x0 + 1; x1 <= 34; x1 += 3) {
            for (int y0 = -2; y0 < 32; y0 += 5) {
                for (int y1 = y0 + 1; y1 <= 34; y1 += 5) {
                    const Box b{double(x0), double(y0), double(x1), double(y1)};
                    const auto mine = wheel_patch_indices(b, 32, 8);
                    CHECK(mine == overlap_oracle(b, 32, 8));
                    CHECK(mine == pixel_oracle(b, 32, 8));
                }
            }
        }
    }
}

TEST_CASE("pick_random_wheel: bounds, error, and uniformity") {
    Rng rng(35);
    CHECK(pick_random_wheel(1, rng) == 0);
    CHECK_THROWS_AS(pick_random_wheel(0, rng), ValueError);

    std::array<long, 4> freq{};
    const int draws = 100000;
    for (int i = 0; i < draws; ++i) freq[pick_random_wheel(4, rng)]++;
    for (const long f : freq) {
        CHECK(std::abs(static_cast<double>(f) / draws - 0.25) < 0.01);
    }
}

TEST_CASE("perturb: zero noise is the identity") {
    Rng rng(36);
    const std::vector<Box> boxes = {wheel_at(10), wheel_at(40)};
    const auto out = perturb_detections(boxes, DetectionNoise{}, rng, 64);
    CHECK(out == boxes);
}

TEST_CASE("perturb: drop-everything empties the list") {
    Rng rng(37);
    DetectionNoise noise;
    noise.drop_prob = 1.0;
    const auto out = perturb_detections({wheel_at(10), wheel_at(40)}, noise, rng, 64);
    CHECK(out.empty());
}

TEST_CASE("perturb: jittered boxes stay valid and inside the frame") {
    Rng rng(38);
    DetectionNoise noise;
    noise.jitter_sigma = 1.0;
    noise.spurious_prob = 0.3;
    const std::vector<Box> boxes = {wheel_at(3, 3, 2.5), wheel_at(60, 60, 3.0),
                                    wheel_at(30, 50, 2.0)};
    for (int trial = 0; trial < 10000; ++trial) {
        const auto out = perturb_detections(boxes, noise, rng, 64);
        for (const Box& b : out) {
            CHECK(b.valid());
            CHECK(b.x0 >= 0.0);
            CHECK(b.y0 >= 0.0);
            CHECK(b.x1 <= 64.0);
            CHECK(b.y1 <= 64.0);
        }
    }
}
