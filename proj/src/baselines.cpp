#include "agpc/baselines.hpp"

#include <algorithm>

#include "agpc/errors.hpp"

namespace agpc {

bool StructuringElement::contains(int dy, int dx) const {
    return std::find(offsets.begin(), offsets.end(), Pixel{dy, dx}) != offsets.end();
}

StructuringElement disk_element(int size) {
    if (size < 1 || size % 2 == 0) throw UsageError("structuring element size must be odd and positive");
    StructuringElement se;
    se.radius = (size - 1) / 2;
    for (int dy = -se.radius; dy <= se.radius; ++dy)
        for (int dx = -se.radius; dx <= se.radius; ++dx)
            if (dy * dy + dx * dx <= se.radius * se.radius) se.offsets.push_back({dy, dx});
    return se;
}

namespace {

template <typename Pick>
Image window_reduce(const Image& image, const StructuringElement& se, Pick pick) {
    const int h = static_cast<int>(image.rows()), w = static_cast<int>(image.cols());
    Image out(h, w);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            float acc = image(y, x);
            for (const Pixel& o : se.offsets) {
                const int sy = std::clamp(y + o.row, 0, h - 1);
                const int sx = std::clamp(x + o.col, 0, w - 1);
                acc = pick(acc, image(sy, sx));
            }
            out(y, x) = acc;
        }
    return out;
}

}  // namespace

Image erosion(const Image& image, const StructuringElement& se) {
    return window_reduce(image, se, [](float a, float b) { return std::min(a, b); });
}

Image dilation(const Image& image, const StructuringElement& se) {
    return window_reduce(image, se, [](float a, float b) { return std::max(a, b); });
}

Image opening(const Image& image, const StructuringElement& se) {
    return dilation(erosion(image, se), se);
}

Image tophat(const Image& image, const StructuringElement& se) {
    return (image - opening(image, se)).cwiseMax(0.f);
}

}  // namespace agpc
