#include "fleet/fleet_gen.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "fleet/errors.hpp"

namespace fleet {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

enum class Family { Moto, Car, Van, Bus, SingleUnit, Semi, Multi };

Family class_family(int class_id) {
    switch (class_id) {
        case 1: return Family::Moto;
        case 2: return Family::Car;
        case 3: return Family::Van;
        case 4: return Family::Bus;
        case 5:
        case 6:
        case 7: return Family::SingleUnit;
        case 8:
        case 9:
        case 10: return Family::Semi;
        default: return Family::Multi;
    }
}

// Chassis length as a fraction of the image width. Shared per family so
// classes that differ only in axle count cannot be told apart by size.
std::pair<double, double> length_range(Family f) {
    switch (f) {
        case Family::Moto: return {0.32, 0.46};
        case Family::Car: return {0.50, 0.65};
        case Family::Van: return {0.50, 0.65};
        case Family::Bus: return {0.76, 0.88};
        case Family::SingleUnit: return {0.60, 0.75};
        case Family::Semi: return {0.80, 0.92};
        case Family::Multi: return {0.86, 0.95};
    }
    return {0.5, 0.6};
}

std::pair<double, double> wheel_radius_range(Family f) {
    switch (f) {
        case Family::Moto: return {0.13, 0.17};
        case Family::Car: return {0.085, 0.11};
        case Family::Van: return {0.085, 0.115};
        case Family::Bus: return {0.045, 0.06};
        case Family::SingleUnit: return {0.05, 0.065};
        case Family::Semi: return {0.032, 0.042};
        case Family::Multi: return {0.028, 0.038};
    }
    return {0.05, 0.06};
}

// Axle group laid out left-to-right starting at `start` with gap jitter.
void grow_right(std::vector<double>& out, double start, int count, Rng& rng) {
    double x = start;
    for (int i = 0; i < count; ++i) {
        out.push_back(x);
        x += rng.uniform(0.085, 0.115);
    }
}

// Axle group ending at `end`, grown leftward.
void grow_left(std::vector<double>& out, double end, int count, Rng& rng) {
    std::vector<double> tmp;
    double x = end;
    for (int i = 0; i < count; ++i) {
        tmp.push_back(x);
        x -= rng.uniform(0.085, 0.115);
    }
    out.insert(out.end(), tmp.rbegin(), tmp.rend());
}

std::vector<double> axle_layout(Family f, int count, Rng& rng) {
    std::vector<double> x;
    switch (f) {
        case Family::Moto:
            x = {rng.uniform(0.06, 0.12), rng.uniform(0.86, 0.94)};
            break;
        case Family::Car:
        case Family::Van:
            if (count == 2) {
                x = {rng.uniform(0.10, 0.16), rng.uniform(0.80, 0.90)};
            } else if (count == 3) {
                x = {rng.uniform(0.06, 0.10), rng.uniform(0.40, 0.48),
                     rng.uniform(0.84, 0.92)};
            } else {
                x = {rng.uniform(0.05, 0.09), rng.uniform(0.36, 0.44),
                     rng.uniform(0.74, 0.80), rng.uniform(0.88, 0.94)};
            }
            break;
        case Family::Bus:
            if (count == 2) {
                x = {rng.uniform(0.10, 0.16), rng.uniform(0.74, 0.84)};
            } else {
                x = {rng.uniform(0.10, 0.14), rng.uniform(0.64, 0.70),
                     rng.uniform(0.80, 0.88)};
            }
            break;
        case Family::SingleUnit: {
            x.push_back(rng.uniform(0.08, 0.14));
            grow_left(x, rng.uniform(0.82, 0.90), count - 1, rng);
            break;
        }
        case Family::Semi: {
            x.push_back(rng.uniform(0.04, 0.08));
            // Drive group behind the cab, trailer group at the rear.
            int drive = 1, trailer = count - 2;
            if (count >= 5) {
                drive = 2;
                trailer = count - 3;
            } else if (count == 4 && rng.bernoulli(0.5)) {
                drive = 2;
                trailer = 1;
            }
            if (count == 7) drive = 3, trailer = 3;
            grow_right(x, rng.uniform(0.24, 0.30), drive, rng);
            grow_left(x, rng.uniform(0.88, 0.94), trailer, rng);
            break;
        }
        case Family::Multi: {
            x.push_back(rng.uniform(0.03, 0.06));
            const int rest = count - 1;
            // Split the remaining axles over drive / trailer1 / trailer2.
            int drive = rest >= 5 ? 2 : 1;
            int t2 = (rest - drive + 1) / 2;
            int t1 = rest - drive - t2;
            if (t1 < 1) {
                t1 = 1;
                t2 = rest - drive - 1;
            }
            grow_right(x, rng.uniform(0.15, 0.20), drive, rng);
            grow_left(x, rng.uniform(0.50, 0.56), t1, rng);
            grow_left(x, rng.uniform(0.90, 0.95), t2, rng);
            break;
        }
    }
    std::sort(x.begin(), x.end());
    return x;
}

std::vector<BodySegment> body_layout(Family f, Rng& rng) {
    switch (f) {
        case Family::Moto:
            return {{0.15, 0.85, rng.uniform(0.18, 0.26)}};
        case Family::Car:
            return {{0.02, 0.98, rng.uniform(0.16, 0.24)}};
        case Family::Van:
            return {{0.02, 0.98, rng.uniform(0.26, 0.38)}};
        case Family::Bus:
            return {{0.01, 0.99, rng.uniform(0.22, 0.30)}};
        case Family::SingleUnit:
            return {{0.02, 0.98, rng.uniform(0.30, 0.42)}};
        case Family::Semi: {
            const double cab_end = rng.uniform(0.18, 0.24);
            const double gap = rng.uniform(0.02, 0.05);
            return {{0.0, cab_end, rng.uniform(0.30, 0.40)},
                    {cab_end + gap, 1.0, rng.uniform(0.28, 0.38)}};
        }
        case Family::Multi: {
            const double cab_end = rng.uniform(0.12, 0.16);
            const double t1_start = cab_end + rng.uniform(0.02, 0.04);
            const double t1_end = rng.uniform(0.48, 0.54);
            const double t2_start = t1_end + rng.uniform(0.03, 0.06);
            return {{0.0, cab_end, rng.uniform(0.30, 0.40)},
                    {t1_start, t1_end, rng.uniform(0.24, 0.34)},
                    {t2_start, 1.0, rng.uniform(0.24, 0.34)}};
        }
    }
    return {};
}

}  // namespace

const std::vector<int>& class_axle_counts(int class_id) {
    static const std::vector<std::vector<int>> table = {
        {2},           // 1 motorcycles
        {2, 3, 4},     // 2 cars, optionally towing 1- or 2-axle trailers
        {2, 3, 4},     // 3 pick-ups / vans, same trailer options
        {2, 3},        // 4 buses
        {2},           // 5 two-axle single-unit
        {3},           // 6 three-axle single-unit
        {4, 5},        // 7 four-or-more single-unit (bounded here)
        {3, 4},        // 8 four-or-fewer-axle single-trailer
        {5},           // 9 five-axle single-trailer
        {6, 7},        // 10 six-or-more single-trailer (bounded)
        {4, 5},        // 11 five-or-fewer-axle multi-trailer
        {6},           // 12 six-axle multi-trailer
        {7, 8, 9},     // 13 seven-or-more multi-trailer (bounded by capacity)
    };
    if (class_id < 1 || class_id > kNumClasses) {
        throw ValueError("class id " + std::to_string(class_id) + " outside 1..13");
    }
    return table[static_cast<std::size_t>(class_id - 1)];
}

VehicleSpec sample_spec(int class_id, Rng& rng) {
    const auto& legal = class_axle_counts(class_id);
    const Family fam = class_family(class_id);
    VehicleSpec spec;
    spec.class_id = class_id;
    if ((class_id == 2 || class_id == 3) && legal.size() > 1) {
        // Trailer variants are rare, so axle count alone cannot identify
        // these classes.
        if (rng.bernoulli(0.15)) {
            spec.axle_count = rng.bernoulli(0.5) ? 3 : 4;
        } else {
            spec.axle_count = 2;
        }
    } else {
        spec.axle_count = legal[rng.uniform_index(legal.size())];
    }
    spec.axle_x = axle_layout(fam, spec.axle_count, rng);
    spec.body = body_layout(fam, rng);
    const auto [rlo, rhi] = wheel_radius_range(fam);
    spec.wheel_radius = rng.uniform(rlo, rhi);
    return spec;
}

RenderResult render(const VehicleSpec& spec, int image_size, Rng& rng) {
    if (spec.class_id < 1 || spec.class_id > kNumClasses) {
        throw ValueError("render: bad class id");
    }
    const Family fam = class_family(spec.class_id);
    const auto [len_lo, len_hi] = length_range(fam);
    const double chassis = std::floor(rng.uniform(len_lo, len_hi) * image_size);
    if (chassis < 8.0 || chassis + 2.0 > image_size) {
        throw ValueError("render: image size " + std::to_string(image_size) +
                         " too small for the sampled vehicle");
    }
    const double x_off = std::floor(rng.uniform(1.0, image_size - chassis - 1.0 + 1e-9));
    const double ground = std::floor(rng.uniform(0.78, 0.88) * image_size);

    RenderResult out;
    out.image = Image(image_size, image_size);

    // Noisy background.
    const double bg = rng.uniform(25.0, 60.0);
    for (auto& px : out.image.pixels) {
        px = static_cast<std::uint8_t>(
            std::clamp(bg + rng.uniform(-12.0, 12.0), 0.0, 255.0));
    }

    const double body_brightness = rng.uniform(140.0, 230.0);
    double painted_x0 = image_size, painted_y0 = image_size, painted_x1 = 0, painted_y1 = 0;
    auto mark = [&](int x, int y) {
        painted_x0 = std::min(painted_x0, static_cast<double>(x));
        painted_y0 = std::min(painted_y0, static_cast<double>(y));
        painted_x1 = std::max(painted_x1, static_cast<double>(x + 1));
        painted_y1 = std::max(painted_y1, static_cast<double>(y + 1));
    };

    const double base_radius = std::max(1.2, spec.wheel_radius * chassis);

    // Body rectangles sit just above the wheel line.
    for (const BodySegment& seg : spec.body) {
        const int bx0 = static_cast<int>(std::lround(x_off + seg.x0 * chassis));
        const int bx1 = static_cast<int>(std::lround(x_off + seg.x1 * chassis));
        const int by1 = static_cast<int>(std::lround(ground - 0.9 * base_radius));
        const int by0 = std::max(1, static_cast<int>(std::lround(by1 - seg.height * chassis)));
        for (int y = by0; y < by1; ++y) {
            for (int x = bx0; x < bx1; ++x) {
                if (x < 0 || x >= image_size || y < 0 || y >= image_size) continue;
                out.image.at(x, y) = static_cast<std::uint8_t>(body_brightness);
                mark(x, y);
            }
        }
    }

    // Wheels: filled discs on the ground line; boxes are the exact pixel
    // bounding boxes of each disc.
    for (const double ax : spec.axle_x) {
        const double r = std::max(1.2, base_radius * rng.uniform(0.85, 1.15));
        const double cx = x_off + ax * chassis;
        const double cy = ground - r;
        const double brightness =
            std::clamp(rng.uniform(50.0, 190.0) + rng.uniform(-10.0, 10.0), 0.0, 255.0);
        int wx0 = image_size, wy0 = image_size, wx1 = 0, wy1 = 0;
        const int px0 = std::max(0, static_cast<int>(std::floor(cx - r - 1)));
        const int px1 = std::min(image_size - 1, static_cast<int>(std::ceil(cx + r + 1)));
        const int py0 = std::max(0, static_cast<int>(std::floor(cy - r - 1)));
        const int py1 = std::min(image_size - 1, static_cast<int>(std::ceil(cy + r + 1)));
        for (int y = py0; y <= py1; ++y) {
            for (int x = px0; x <= px1; ++x) {
                const double dx = x + 0.5 - cx;
                const double dy = y + 0.5 - cy;
                if (dx * dx + dy * dy <= r * r) {
                    out.image.at(x, y) = static_cast<std::uint8_t>(brightness);
                    mark(x, y);
                    wx0 = std::min(wx0, x);
                    wy0 = std::min(wy0, y);
                    wx1 = std::max(wx1, x + 1);
                    wy1 = std::max(wy1, y + 1);
                }
            }
        }
        if (wx1 <= wx0) {
            throw ValueError("render: wheel disc rasterized to nothing");
        }
        out.wheels.push_back(Box{static_cast<double>(wx0), static_cast<double>(wy0),
                                 static_cast<double>(wx1), static_cast<double>(wy1)});
    }

    out.vehicle_bbox = Box{painted_x0, painted_y0, painted_x1, painted_y1};
    if (!out.vehicle_bbox.valid()) {
        throw ValueError("render: empty silhouette");
    }
    return out;
}

std::map<int, int> profile_counts(const std::string& profile, int base) {
    if (base < 0) throw ValueError("profile_counts: negative count");
    std::map<int, int> counts;
    if (profile == "balanced") {
        for (int c = 1; c <= kNumClasses; ++c) counts[c] = base;
        return counts;
    }
    if (profile == "imbalanced") {
        // Mass concentrated in classes 2 and 9; 1/4/7/10/13 are rare.
        static const double weights[kNumClasses] = {0.10, 3.0, 1.0, 0.15, 0.5, 0.5, 0.12,
                                                    0.40, 2.5, 0.15, 0.25, 0.20, 0.10};
        for (int c = 1; c <= kNumClasses; ++c) {
            counts[c] = std::max(base > 0 ? 2 : 0,
                                 static_cast<int>(std::lround(weights[c - 1] * base)));
        }
        return counts;
    }
    throw ValueError("unknown profile '" + profile + "'");
}

Manifest generate_dataset(const std::map<int, int>& counts, int image_size,
                          std::uint64_t seed, const std::string& out_dir) {
    for (const auto& [cls, n] : counts) {
        if (cls < 1 || cls > kNumClasses) {
            throw ValueError("generate_dataset: class id " + std::to_string(cls));
        }
        if (n < 0) throw ValueError("generate_dataset: negative count for class " +
                                    std::to_string(cls));
    }
    std::error_code ec;
    fs::create_directories(fs::path(out_dir) / "images", ec);
    if (ec) throw IoError("cannot create output dir " + out_dir + ": " + ec.message());

    Manifest m;
    m.config.image_size = image_size;
    m.config.seed = seed;
    m.config.counts = counts;

    std::uint64_t sample_index = 0;
    for (const auto& [cls, n] : counts) {
        for (int i = 0; i < n; ++i, ++sample_index) {
            Rng rng(derive_seed(seed, "sample", sample_index));
            const VehicleSpec spec = sample_spec(cls, rng);
            RenderResult r = render(spec, image_size, rng);
            char idbuf[32];
            std::snprintf(idbuf, sizeof(idbuf), "cls%02d_%05d", cls, i);
            SampleRecord rec;
            rec.id = idbuf;
            rec.image_path = std::string("images/") + idbuf + ".pgm";
            rec.label = cls;
            rec.vehicle_bbox = r.vehicle_bbox;
            rec.wheels = r.wheels;
            write_pgm(r.image, (fs::path(out_dir) / rec.image_path).string());
            m.records.push_back(std::move(rec));
        }
    }
    save_manifest(m, out_dir);
    return m;
}

namespace {

ordered_json box_to_json(const Box& b) {
    return ordered_json::array({static_cast<int>(std::lround(b.x0)),
                                static_cast<int>(std::lround(b.y0)),
                                static_cast<int>(std::lround(b.x1)),
                                static_cast<int>(std::lround(b.y1))});
}

Box box_from_json(const json& j) {
    return Box{j.at(0).get<double>(), j.at(1).get<double>(), j.at(2).get<double>(),
               j.at(3).get<double>()};
}

}  // namespace

std::string manifest_records_to_jsonl(const Manifest& m) {
    std::ostringstream os;
    for (const SampleRecord& r : m.records) {
        ordered_json j;
        j["id"] = r.id;
        j["image"] = r.image_path;
        j["label"] = r.label;
        j["vehicle_bbox"] = box_to_json(r.vehicle_bbox);
        ordered_json wheels = ordered_json::array();
        for (const Box& w : r.wheels) wheels.push_back(box_to_json(w));
        j["wheels"] = wheels;
        j["source"] = r.source;
        os << j.dump() << "\n";
    }
    return os.str();
}

Manifest manifest_from_jsonl(const std::string& jsonl, const GenConfig& config) {
    Manifest m;
    m.config = config;
    std::istringstream is(jsonl);
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        json j = json::parse(line);
        SampleRecord r;
        r.id = j.at("id").get<std::string>();
        r.image_path = j.at("image").get<std::string>();
        r.label = j.at("label").get<int>();
        if (r.label < 1 || r.label > kNumClasses) {
            throw IoError("manifest record " + r.id + " has label " +
                          std::to_string(r.label));
        }
        r.vehicle_bbox = box_from_json(j.at("vehicle_bbox"));
        for (const auto& w : j.at("wheels")) r.wheels.push_back(box_from_json(w));
        r.source = j.at("source").get<std::string>();
        m.records.push_back(std::move(r));
    }
    return m;
}

void save_manifest(const Manifest& m, const std::string& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    std::ofstream os(fs::path(dir) / "manifest.jsonl");
    if (!os) throw IoError("cannot write manifest in " + dir);
    os << manifest_records_to_jsonl(m);

    ordered_json meta;
    meta["image_size"] = m.config.image_size;
    meta["profile"] = m.config.profile;
    meta["seed"] = m.config.seed;
    ordered_json counts;
    for (const auto& [cls, n] : m.config.counts) counts[std::to_string(cls)] = n;
    meta["counts"] = counts;
    std::ofstream ms(fs::path(dir) / "manifest.meta.json");
    ms << meta.dump(2) << "\n";
}

Manifest load_manifest(const std::string& dir) {
    std::ifstream ms(fs::path(dir) / "manifest.meta.json");
    if (!ms) throw IoError("missing manifest.meta.json in " + dir);
    json meta = json::parse(ms);
    GenConfig cfg;
    cfg.image_size = meta.at("image_size").get<int>();
    cfg.profile = meta.at("profile").get<std::string>();
    cfg.seed = meta.at("seed").get<std::uint64_t>();
    for (const auto& [key, val] : meta.at("counts").items()) {
        cfg.counts[std::stoi(key)] = val.get<int>();
    }
    std::ifstream is(fs::path(dir) / "manifest.jsonl");
    if (!is) throw IoError("missing manifest.jsonl in " + dir);
    std::stringstream buf;
    buf << is.rdbuf();
    return manifest_from_jsonl(buf.str(), cfg);
}

std::pair<Manifest, Manifest> split_manifest(const Manifest& m, double train_fraction,
                                             std::uint64_t seed) {
    if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
        throw ValueError("split: train fraction must lie in (0,1)");
    }
    std::map<int, std::vector<std::size_t>> by_class;
    for (std::size_t i = 0; i < m.records.size(); ++i) {
        by_class[m.records[i].label].push_back(i);
    }
    Manifest train, test;
    train.config = m.config;
    test.config = m.config;
    std::vector<char> goes_to_train(m.records.size(), 0);
    for (auto& [cls, idx] : by_class) {
        if (idx.size() < 2) {
            throw ValueError("split: class " + std::to_string(cls) + " has " +
                             std::to_string(idx.size()) +
                             " samples; need at least 2 to stratify");
        }
        Rng rng(derive_seed(seed, "split", static_cast<std::uint64_t>(cls)));
        rng.shuffle(idx.begin(), idx.end());
        const auto want = static_cast<std::size_t>(
            std::lround(train_fraction * static_cast<double>(idx.size())));
        const std::size_t n_train = std::clamp<std::size_t>(want, 1, idx.size() - 1);
        for (std::size_t i = 0; i < n_train; ++i) goes_to_train[idx[i]] = 1;
    }
    for (std::size_t i = 0; i < m.records.size(); ++i) {
        (goes_to_train[i] ? train : test).records.push_back(m.records[i]);
    }
    return {std::move(train), std::move(test)};
}

}  // namespace fleet
