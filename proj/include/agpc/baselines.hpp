#pragma once

#include <vector>

#include "agpc/image.hpp"

namespace agpc {

/// Boolean offset set centered on the origin.
struct StructuringElement {
    int radius = 0;
    std::vector<Pixel> offsets;  // (dy, dx) pairs, row-major order

    bool contains(int dy, int dx) const;
};

/// Euclidean ball of radius (size - 1) / 2: dy^2 + dx^2 <= r^2. Size must be odd and positive.
StructuringElement disk_element(int size);

/// Windowed min / max with edge replication at the borders.
Image erosion(const Image& image, const StructuringElement& se);
Image dilation(const Image& image, const StructuringElement& se);
Image opening(const Image& image, const StructuringElement& se);

/// max(0, image - opening(image)).
Image tophat(const Image& image, const StructuringElement& se);

}  // namespace agpc
