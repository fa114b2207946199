#include "fleet/image.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "fleet/errors.hpp"

namespace fleet {

void write_pgm(const Image& img, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open for writing: " + path);
    os << "P5\n" << img.width << " " << img.height << "\n255\n";
    os.write(reinterpret_cast<const char*>(img.pixels.data()),
             static_cast<std::streamsize>(img.pixels.size()));
    if (!os) throw IoError("write failed: " + path);
}

Image read_pgm(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open: " + path);
    std::string magic;
    is >> magic;
    if (magic != "P5") throw IoError("not a binary PGM: " + path);
    int w = 0, h = 0, maxval = 0;
    is >> w >> h >> maxval;
    if (!is || w <= 0 || h <= 0 || maxval != 255) {
        throw IoError("unsupported PGM header in " + path);
    }
    is.get();  // single whitespace after maxval
    Image img(w, h);
    is.read(reinterpret_cast<char*>(img.pixels.data()),
            static_cast<std::streamsize>(img.pixels.size()));
    if (!is) throw IoError("truncated PGM: " + path);
    return img;
}

namespace {

double sample_bilinear(const Image& src, double x, double y) {
    x = std::clamp(x, 0.0, static_cast<double>(src.width - 1));
    y = std::clamp(y, 0.0, static_cast<double>(src.height - 1));
    const int x0 = static_cast<int>(std::floor(x));
    const int y0 = static_cast<int>(std::floor(y));
    const int x1 = std::min(x0 + 1, src.width - 1);
    const int y1 = std::min(y0 + 1, src.height - 1);
    const double fx = x - x0;
    const double fy = y - y0;
    const double top = (1.0 - fx) * src.at(x0, y0) + fx * src.at(x1, y0);
    const double bot = (1.0 - fx) * src.at(x0, y1) + fx * src.at(x1, y1);
    return (1.0 - fy) * top + fy * bot;
}

}  // namespace

Image crop_and_resize(const Image& src, const Box& crop, int target_w, int target_h) {
    if (!crop.valid()) {
        throw ValueError("crop_and_resize: degenerate box (" + std::to_string(crop.x0) +
                         "," + std::to_string(crop.y0) + "," + std::to_string(crop.x1) +
                         "," + std::to_string(crop.y1) + ")");
    }
    if (crop.x1 <= 0 || crop.y1 <= 0 || crop.x0 >= src.width || crop.y0 >= src.height) {
        throw ValueError("crop_and_resize: box does not intersect the image");
    }
    if (target_w <= 0 || target_h <= 0) {
        throw ValueError("crop_and_resize: target size must be positive");
    }
    Image out(target_w, target_h);
    const double sx = crop.width() / target_w;
    const double sy = crop.height() / target_h;
    for (int ty = 0; ty < target_h; ++ty) {
        const double srcy = crop.y0 + (ty + 0.5) * sy - 0.5;
        for (int tx = 0; tx < target_w; ++tx) {
            const double srcx = crop.x0 + (tx + 0.5) * sx - 0.5;
            const double v = sample_bilinear(src, srcx, srcy);
            out.at(tx, ty) = static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 255.0)));
        }
    }
    return out;
}

Box transform_box(const Box& b, const Box& crop, int target_w, int target_h) {
    const double sx = target_w / crop.width();
    const double sy = target_h / crop.height();
    Box out;
    out.x0 = std::clamp((b.x0 - crop.x0) * sx, 0.0, static_cast<double>(target_w));
    out.x1 = std::clamp((b.x1 - crop.x0) * sx, 0.0, static_cast<double>(target_w));
    out.y0 = std::clamp((b.y0 - crop.y0) * sy, 0.0, static_cast<double>(target_h));
    out.y1 = std::clamp((b.y1 - crop.y0) * sy, 0.0, static_cast<double>(target_h));
    return out;
}

}  // namespace fleet
