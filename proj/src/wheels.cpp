#include "fleet/wheels.hpp"

#include <algorithm>
#include <cmath>

#include "fleet/errors.hpp"

namespace fleet {

WheelFeature normalize_wheel_positions(const std::vector<Box>& boxes, int capacity) {
    if (capacity < 1) throw ValueError("normalize_wheel_positions: capacity must be >= 1");
    if (capacity > kWheelCapacity) {
        throw ValueError("normalize_wheel_positions: capacity exceeds feature size");
    }
    WheelFeature f;
    f.wheel_count = static_cast<int>(boxes.size());
    if (boxes.size() < 2) return f;

    std::vector<double> centers;
    centers.reserve(boxes.size());
    for (const Box& b : boxes) centers.push_back(b.center_x());
    std::stable_sort(centers.begin(), centers.end());

    const double span = centers.back() - centers.front();
    if (span <= 0.0) return f;  // all centers coincide

    std::vector<double> spacings(centers.size() - 1);
    for (std::size_t i = 0; i + 1 < centers.size(); ++i)
        spacings[i] = (centers[i + 1] - centers[i]) / span;

    std::size_t first = 0;
    if (spacings.size() > static_cast<std::size_t>(capacity)) {
        first = spacings.size() - static_cast<std::size_t>(capacity);
        f.truncated = true;
    }
    for (std::size_t i = first; i < spacings.size(); ++i)
        f.spacings[i - first] = spacings[i];
    return f;
}

std::vector<std::size_t> wheel_patch_indices(const Box& box, int image_size,
                                             int patch_size) {
    if (patch_size <= 0 || image_size <= 0 || image_size % patch_size != 0) {
        throw ValueError("wheel_patch_indices: image size " + std::to_string(image_size) +
                         " not divisible by patch size " + std::to_string(patch_size));
    }
    std::vector<std::size_t> out;
    if (!box.valid()) return out;
    const int grid = image_size / patch_size;
    const double x0 = std::max(box.x0, 0.0);
    const double y0 = std::max(box.y0, 0.0);
    const double x1 = std::min(box.x1, static_cast<double>(image_size));
    const double y1 = std::min(box.y1, static_cast<double>(image_size));
    if (x0 >= x1 || y0 >= y1) return out;

    // Cell (r, c) covers [c*P, (c+1)*P) x [r*P, (r+1)*P); positive-area
    // overlap means strict inequalities on both axes.
    const int c0 = std::max(0, static_cast<int>(std::floor(x0 / patch_size)));
    const int r0 = std::max(0, static_cast<int>(std::floor(y0 / patch_size)));
    for (int r = r0; r < grid; ++r) {
        const double cell_y0 = static_cast<double>(r) * patch_size;
        if (cell_y0 >= y1) break;
        for (int c = c0; c < grid; ++c) {
            const double cell_x0 = static_cast<double>(c) * patch_size;
            if (cell_x0 >= x1) break;
            if (x0 < cell_x0 + patch_size && y0 < cell_y0 + patch_size) {
                out.push_back(static_cast<std::size_t>(r) * grid + c);
            }
        }
    }
    std::sort(out.begin(), out.end());
    return out;
}

std::size_t pick_random_wheel(std::size_t count, Rng& rng) {
    if (count == 0) throw ValueError("pick_random_wheel: no wheels to pick from");
    return rng.uniform_index(count);
}

std::vector<Box> perturb_detections(const std::vector<Box>& boxes,
                                    const DetectionNoise& noise, Rng& rng,
                                    int image_size) {
    auto in_unit = [](double p) { return p >= 0.0 && p <= 1.0; };
    if (!in_unit(noise.drop_prob) || !in_unit(noise.spurious_prob)) {
        throw ValueError("perturb_detections: probabilities must lie in [0,1]");
    }
    if (noise.jitter_sigma < 0.0) {
        throw ValueError("perturb_detections: jitter sigma must be >= 0");
    }
    const double limit = static_cast<double>(image_size);
    std::vector<Box> out;
    out.reserve(boxes.size());
    for (const Box& b : boxes) {
        if (noise.drop_prob > 0.0 && rng.bernoulli(noise.drop_prob)) continue;
        Box j = b;
        if (noise.jitter_sigma > 0.0) {
            j.x0 += rng.normal(0.0, noise.jitter_sigma);
            j.y0 += rng.normal(0.0, noise.jitter_sigma);
            j.x1 += rng.normal(0.0, noise.jitter_sigma);
            j.y1 += rng.normal(0.0, noise.jitter_sigma);
            if (j.x0 > j.x1) std::swap(j.x0, j.x1);
            if (j.y0 > j.y1) std::swap(j.y0, j.y1);
            j.x0 = std::clamp(j.x0, 0.0, limit - 1.0);
            j.y0 = std::clamp(j.y0, 0.0, limit - 1.0);
            j.x1 = std::clamp(j.x1, j.x0 + 1.0, limit);
            j.y1 = std::clamp(j.y1, j.y0 + 1.0, limit);
        }
        out.push_back(j);
    }
    if (noise.spurious_prob > 0.0 && rng.bernoulli(noise.spurious_prob)) {
        // One wheel-sized phantom at a random location.
        const double size = rng.uniform(2.0, std::max(3.0, limit * 0.12));
        const double x0 = rng.uniform(0.0, limit - size);
        const double y0 = rng.uniform(0.0, limit - size);
        out.push_back(Box{x0, y0, x0 + size, y0 + size});
    }
    return out;
}

}  // namespace fleet
