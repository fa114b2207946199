#pragma once

#include <array>
#include <vector>

#include "fleet/image.hpp"
#include "fleet/rng.hpp"

namespace fleet {

// Capacity of the normalized spacing vector: 8 spacings covers 9 wheels,
// enough for every vehicle class generated here.
inline constexpr int kWheelCapacity = 8;

// Normalized inter-wheel spacings plus the detected wheel count. With
// fewer than two wheels every spacing is zero; otherwise the populated
// entries sum to 1.
struct WheelFeature {
    std::array<double, kWheelCapacity> spacings{};
    int wheel_count = 0;
    bool truncated = false;
};

// Sorts wheel boxes by center-x, takes consecutive center gaps, and divides
// by the leftmost-to-rightmost center distance. Scale/translation changes
// of the camera geometry cancel out. If there are more spacings than
// capacity, the leftmost ones are dropped and `truncated` is set.
WheelFeature normalize_wheel_positions(const std::vector<Box>& boxes,
                                       int capacity = kWheelCapacity);

// Indices (row-major over the patch grid) of every patch whose pixel cell
// overlaps the box with positive area. Empty if the box misses the image.
std::vector<std::size_t> wheel_patch_indices(const Box& box, int image_size,
                                             int patch_size);

// Uniform draw over [0, count). Throws ValueError on an empty list.
std::size_t pick_random_wheel(std::size_t count, Rng& rng);

// Detector imperfection stand-in: drops, jitters, and inserts boxes.
struct DetectionNoise {
    double jitter_sigma = 0.0;
    double drop_prob = 0.0;
    double spurious_prob = 0.0;
};

std::vector<Box> perturb_detections(const std::vector<Box>& boxes,
                                    const DetectionNoise& noise, Rng& rng,
                                    int image_size);

}  // namespace fleet
