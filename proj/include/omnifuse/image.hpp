#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace omnifuse {

/// 3-channel float image, CHW layout, values in [0, 1].
struct ImageTensor {
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<double> pixels; // 3 * height * width

    ImageTensor() = default;
    ImageTensor(std::size_t h, std::size_t w, double fill = 0.0)
        : height(h), width(w), pixels(3 * h * w, fill) {}

    double& at(std::size_t c, std::size_t y, std::size_t x) {
        return pixels[(c * height + y) * width + x];
    }
    double at(std::size_t c, std::size_t y, std::size_t x) const {
        return pixels[(c * height + y) * width + x];
    }
};

/// Bilinear resample to the exact target size (aspect not preserved here;
/// callers decide the target box).
ImageTensor resize_bilinear(const ImageTensor& img, std::size_t out_h, std::size_t out_w);

/// Aspect-preserving resize to fit inside res x res, then center-pad with
/// zeros. Standard encoder preprocessing.
ImageTensor fit_center_pad(const ImageTensor& img, std::size_t res);

/// Crop a window; the window must lie inside the image.
ImageTensor crop(const ImageTensor& img, std::size_t y0, std::size_t x0, std::size_t h,
                 std::size_t w);

// Binary P6 PPM with 8-bit channels, the on-disk pixel format for record
// files. Values clamp to [0,1] on write.
std::vector<std::uint8_t> encode_ppm(const ImageTensor& img);
ImageTensor decode_ppm(const std::vector<std::uint8_t>& bytes);
ImageTensor load_ppm(const std::string& path);
void save_ppm(const ImageTensor& img, const std::string& path);

std::string base64_encode(const std::vector<std::uint8_t>& bytes);
std::vector<std::uint8_t> base64_decode(const std::string& text);

} // namespace omnifuse
