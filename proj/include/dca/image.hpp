#pragma once

#include <string>
#include <vector>

namespace dca {

// RGB float image, HWC layout, values in [0,1].
struct Image {
    int w = 0, h = 0;
    std::vector<float> px;  // h*w*3

    static Image filled(int w, int h, float r, float g, float b);
    float& at(int x, int y, int c) { return px[(static_cast<size_t>(y) * w + x) * 3 + c]; }
    float at(int x, int y, int c) const {
        return px[(static_cast<size_t>(y) * w + x) * 3 + c];
    }
};

// 8-bit PNG writer: RGB, filter type 0, fixed compression level, so the same
// image always produces the same bytes.
void write_png(const std::string& path, const Image& img);

// Reads 8-bit grayscale/RGB/RGBA/gray+alpha PNGs (no interlace, no palette);
// alpha is dropped, gray replicated to RGB.
Image read_png(const std::string& path);

} // namespace dca
