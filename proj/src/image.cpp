#include "omnifuse/image.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "omnifuse/errors.hpp"

namespace omnifuse {

ImageTensor resize_bilinear(const ImageTensor& img, std::size_t out_h, std::size_t out_w) {
    if (img.height == 0 || img.width == 0 || out_h == 0 || out_w == 0) {
        throw PreprocessError("resize_bilinear: degenerate size " + std::to_string(img.width) + "x" +
                              std::to_string(img.height) + " -> " + std::to_string(out_w) + "x" +
                              std::to_string(out_h));
    }
    if (out_h == img.height && out_w == img.width) return img;

    ImageTensor out(out_h, out_w);
    const double sy = static_cast<double>(img.height) / static_cast<double>(out_h);
    const double sx = static_cast<double>(img.width) / static_cast<double>(out_w);
    for (std::size_t y = 0; y < out_h; ++y) {
        // align pixel centers
        const double fy = (static_cast<double>(y) + 0.5) * sy - 0.5;
        const double cy = std::clamp(fy, 0.0, static_cast<double>(img.height - 1));
        const std::size_t y0 = static_cast<std::size_t>(cy);
        const std::size_t y1 = std::min(y0 + 1, img.height - 1);
        const double wy = cy - static_cast<double>(y0);
        for (std::size_t x = 0; x < out_w; ++x) {
            const double fx = (static_cast<double>(x) + 0.5) * sx - 0.5;
            const double cx = std::clamp(fx, 0.0, static_cast<double>(img.width - 1));
            const std::size_t x0 = static_cast<std::size_t>(cx);
            const std::size_t x1 = std::min(x0 + 1, img.width - 1);
            const double wx = cx - static_cast<double>(x0);
            for (std::size_t c = 0; c < 3; ++c) {
                const double top = img.at(c, y0, x0) * (1.0 - wx) + img.at(c, y0, x1) * wx;
                const double bot = img.at(c, y1, x0) * (1.0 - wx) + img.at(c, y1, x1) * wx;
                out.at(c, y, x) = top * (1.0 - wy) + bot * wy;
            }
        }
    }
    return out;
}

ImageTensor fit_center_pad(const ImageTensor& img, std::size_t res) {
    if (res == 0) throw PreprocessError("fit_center_pad: zero resolution");
    const double s = std::min(static_cast<double>(res) / static_cast<double>(img.width),
                              static_cast<double>(res) / static_cast<double>(img.height));
    std::size_t w = std::clamp<std::size_t>(
        static_cast<std::size_t>(std::lround(static_cast<double>(img.width) * s)), 1, res);
    std::size_t h = std::clamp<std::size_t>(
        static_cast<std::size_t>(std::lround(static_cast<double>(img.height) * s)), 1, res);
    ImageTensor scaled = resize_bilinear(img, h, w);
    ImageTensor out(res, res, 0.0);
    const std::size_t oy = (res - h) / 2, ox = (res - w) / 2;
    for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t y = 0; y < h; ++y)
            for (std::size_t x = 0; x < w; ++x) out.at(c, oy + y, ox + x) = scaled.at(c, y, x);
    return out;
}

ImageTensor crop(const ImageTensor& img, std::size_t y0, std::size_t x0, std::size_t h,
                 std::size_t w) {
    if (y0 + h > img.height || x0 + w > img.width) {
        throw PreprocessError("crop: window " + std::to_string(w) + "x" + std::to_string(h) + "+" +
                              std::to_string(x0) + "+" + std::to_string(y0) + " outside " +
                              std::to_string(img.width) + "x" + std::to_string(img.height));
    }
    ImageTensor out(h, w);
    for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t y = 0; y < h; ++y)
            for (std::size_t x = 0; x < w; ++x) out.at(c, y, x) = img.at(c, y0 + y, x0 + x);
    return out;
}

std::vector<std::uint8_t> encode_ppm(const ImageTensor& img) {
    std::string header =
        "P6\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
    std::vector<std::uint8_t> out(header.begin(), header.end());
    out.reserve(out.size() + 3 * img.width * img.height);
    for (std::size_t y = 0; y < img.height; ++y)
        for (std::size_t x = 0; x < img.width; ++x)
            for (std::size_t c = 0; c < 3; ++c) {
                const double v = std::clamp(img.at(c, y, x), 0.0, 1.0);
                out.push_back(static_cast<std::uint8_t>(std::lround(v * 255.0)));
            }
    return out;
}

ImageTensor decode_ppm(const std::vector<std::uint8_t>& bytes) {
    std::string text(bytes.begin(), bytes.end());
    std::istringstream is(text);
    std::string magic;
    std::size_t w = 0, h = 0, maxval = 0;
    is >> magic >> w >> h >> maxval;
    if (magic != "P6" || w == 0 || h == 0 || maxval != 255) {
        throw FormatError("decode_ppm: not a P6/255 image");
    }
    is.get(); // single whitespace after header
    const std::size_t offset = static_cast<std::size_t>(is.tellg());
    if (bytes.size() < offset + 3 * w * h) throw FormatError("decode_ppm: truncated pixel data");
    ImageTensor img(h, w);
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x)
            for (std::size_t c = 0; c < 3; ++c)
                img.at(c, y, x) = static_cast<double>(bytes[offset + (y * w + x) * 3 + c]) / 255.0;
    return img;
}

ImageTensor load_ppm(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw FormatError("load_ppm: cannot open " + path);
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                                    std::istreambuf_iterator<char>());
    return decode_ppm(bytes);
}

void save_ppm(const ImageTensor& img, const std::string& path) {
    auto bytes = encode_ppm(img);
    std::ofstream f(path, std::ios::binary);
    if (!f) throw FormatError("save_ppm: cannot open " + path);
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

namespace {
constexpr char kB64[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

int b64_value(char c) {
    if (c >= 'A' && c <= 'Z') return c - 'A';
    if (c >= 'a' && c <= 'z') return c - 'a' + 26;
    if (c >= '0' && c <= '9') return c - '0' + 52;
    if (c == '+') return 62;
    if (c == '/') return 63;
    return -1;
}
} // namespace

std::string base64_encode(const std::vector<std::uint8_t>& bytes) {
    std::string out;
    out.reserve((bytes.size() + 2) / 3 * 4);
    std::size_t i = 0;
    for (; i + 3 <= bytes.size(); i += 3) {
        const std::uint32_t v = (bytes[i] << 16) | (bytes[i + 1] << 8) | bytes[i + 2];
        out.push_back(kB64[(v >> 18) & 63]);
        out.push_back(kB64[(v >> 12) & 63]);
        out.push_back(kB64[(v >> 6) & 63]);
        out.push_back(kB64[v & 63]);
    }
    const std::size_t rem = bytes.size() - i;
    if (rem == 1) {
        const std::uint32_t v = bytes[i] << 16;
        out.push_back(kB64[(v >> 18) & 63]);
        out.push_back(kB64[(v >> 12) & 63]);
        out += "==";
    } else if (rem == 2) {
        const std::uint32_t v = (bytes[i] << 16) | (bytes[i + 1] << 8);
        out.push_back(kB64[(v >> 18) & 63]);
        out.push_back(kB64[(v >> 12) & 63]);
        out.push_back(kB64[(v >> 6) & 63]);
        out.push_back('=');
    }
    return out;
}

std::vector<std::uint8_t> base64_decode(const std::string& text) {
    std::vector<std::uint8_t> out;
    out.reserve(text.size() / 4 * 3);
    std::uint32_t buf = 0;
    int bits = 0;
    for (char c : text) {
        if (c == '=' || c == '\n' || c == '\r') continue;
        const int v = b64_value(c);
        if (v < 0) throw FormatError(std::string("base64_decode: invalid character '") + c + "'");
        buf = (buf << 6) | static_cast<std::uint32_t>(v);
        bits += 6;
        if (bits >= 8) {
            bits -= 8;
            out.push_back(static_cast<std::uint8_t>((buf >> bits) & 0xff));
        }
    }
    return out;
}

} // namespace omnifuse
