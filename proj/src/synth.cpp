#include "omnifuse/synth.hpp"

#include <map>

#include "omnifuse/errors.hpp"
#include "omnifuse/rng.hpp"

namespace omnifuse {

namespace {

const std::vector<std::string> kCaptionPrompts = {
    "Give a brief description of the image.",
    "Describe the image in detail.",
    "Provide a short description of the image.",
};

void draw_square(ImageTensor& img, std::size_t y0, std::size_t x0, std::size_t s,
                 const std::array<double, 3>& rgb) {
    for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t y = 0; y < s; ++y)
            for (std::size_t x = 0; x < s; ++x) img.at(c, y0 + y, x0 + x) = rgb[c];
}

void draw_circle(ImageTensor& img, std::size_t y0, std::size_t x0, std::size_t s,
                 const std::array<double, 3>& rgb) {
    const double r = static_cast<double>(s - 1) / 2.0;
    for (std::size_t y = 0; y < s; ++y)
        for (std::size_t x = 0; x < s; ++x) {
            const double dy = static_cast<double>(y) - r, dx = static_cast<double>(x) - r;
            if (dy * dy + dx * dx <= r * r + 0.5)
                for (std::size_t c = 0; c < 3; ++c) img.at(c, y0 + y, x0 + x) = rgb[c];
        }
}

void draw_triangle(ImageTensor& img, std::size_t y0, std::size_t x0, std::size_t s,
                   const std::array<double, 3>& rgb) {
    // apex at the top, base at the bottom
    for (std::size_t y = 0; y < s; ++y) {
        const std::size_t half = (y * (s / 2)) / (s - 1);
        const std::size_t cx = s / 2;
        for (std::size_t x = cx - half; x <= cx + half; ++x)
            for (std::size_t c = 0; c < 3; ++c) img.at(c, y0 + y, x0 + x) = rgb[c];
    }
}

void draw_cross(ImageTensor& img, std::size_t y0, std::size_t x0, std::size_t s,
                const std::array<double, 3>& rgb) {
    const std::size_t bar = 3;
    const std::size_t c0 = (s - bar) / 2;
    for (std::size_t y = 0; y < s; ++y)
        for (std::size_t b = 0; b < bar; ++b)
            for (std::size_t c = 0; c < 3; ++c) {
                img.at(c, y0 + y, x0 + c0 + b) = rgb[c];
                img.at(c, y0 + c0 + b, x0 + y) = rgb[c];
            }
}

void draw_shape(ImageTensor& img, std::size_t shape, std::size_t y0, std::size_t x0,
                std::size_t s, const std::array<double, 3>& rgb) {
    switch (shape) {
        case 0: draw_square(img, y0, x0, s, rgb); break;
        case 1: draw_circle(img, y0, x0, s, rgb); break;
        case 2: draw_triangle(img, y0, x0, s, rgb); break;
        default: draw_cross(img, y0, x0, s, rgb); break;
    }
}

// 8x8 glyphs for the fine-detail task.
const std::array<std::uint8_t, 8> kGlyphBitmaps[4] = {
    {0x18, 0x18, 0x18, 0xff, 0xff, 0x18, 0x18, 0x18}, // plus
    {0xc3, 0x66, 0x3c, 0x18, 0x18, 0x3c, 0x66, 0xc3}, // ex
    {0x18, 0x18, 0x18, 0x18, 0x18, 0x18, 0x18, 0x18}, // bar
    {0x3c, 0x66, 0xc3, 0x81, 0x81, 0xc3, 0x66, 0x3c}, // ring
};

const std::map<char, std::array<std::uint8_t, 7>>& font_table() {
    // 5-bit rows, MSB on the left
    static const std::map<char, std::array<std::uint8_t, 7>> font = {
        {'0', {0x0e, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0e}},
        {'1', {0x04, 0x0c, 0x04, 0x04, 0x04, 0x04, 0x0e}},
        {'2', {0x0e, 0x11, 0x01, 0x02, 0x04, 0x08, 0x1f}},
        {'3', {0x1f, 0x02, 0x04, 0x02, 0x01, 0x11, 0x0e}},
        {'4', {0x02, 0x06, 0x0a, 0x12, 0x1f, 0x02, 0x02}},
        {'5', {0x1f, 0x10, 0x1e, 0x01, 0x01, 0x11, 0x0e}},
        {'6', {0x06, 0x08, 0x10, 0x1e, 0x11, 0x11, 0x0e}},
        {'7', {0x1f, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08}},
        {'8', {0x0e, 0x11, 0x11, 0x0e, 0x11, 0x11, 0x0e}},
        {'9', {0x0e, 0x11, 0x11, 0x0f, 0x01, 0x02, 0x0c}},
        {'a', {0x00, 0x00, 0x0e, 0x01, 0x0f, 0x11, 0x0f}},
        {'b', {0x10, 0x10, 0x1e, 0x11, 0x11, 0x11, 0x1e}},
        {'c', {0x00, 0x00, 0x0e, 0x11, 0x10, 0x11, 0x0e}},
        {'x', {0x00, 0x00, 0x11, 0x0a, 0x04, 0x0a, 0x11}},
        {'y', {0x00, 0x00, 0x11, 0x11, 0x0f, 0x01, 0x0e}},
        {'z', {0x00, 0x00, 0x1f, 0x02, 0x04, 0x08, 0x1f}},
        {'+', {0x00, 0x04, 0x04, 0x1f, 0x04, 0x04, 0x00}},
        {'-', {0x00, 0x00, 0x00, 0x1f, 0x00, 0x00, 0x00}},
        {'=', {0x00, 0x00, 0x1f, 0x00, 0x1f, 0x00, 0x00}},
        {'(', {0x02, 0x04, 0x08, 0x08, 0x08, 0x04, 0x02}},
        {')', {0x08, 0x04, 0x02, 0x02, 0x02, 0x04, 0x08}},
    };
    return font;
}

void draw_formula_char(ImageTensor& img, char c, std::size_t y0, std::size_t x0) {
    const auto rows = formula_glyph(c);
    for (std::size_t y = 0; y < 7; ++y)
        for (std::size_t x = 0; x < 5; ++x)
            if (rows[y] & (0x10 >> x))
                for (std::size_t ch = 0; ch < 3; ++ch) img.at(ch, y0 + y, x0 + x) = 1.0;
}

SynthRecord make_caption_record(std::size_t index, Rng& rng, bool as_vqa) {
    const auto& colors = synth_colors();
    const auto& shapes = synth_shape_names();
    const std::size_t color = rng.index(colors.size());
    const std::size_t shape = rng.index(shapes.size());
    const std::size_t y0 = rng.index(kShapeCanvas - kShapeBox + 1);
    const std::size_t x0 = rng.index(kShapeCanvas - kShapeBox + 1);

    SynthRecord rec;
    rec.image = ImageTensor(kShapeCanvas, kShapeCanvas, 0.0);
    draw_shape(rec.image, shape, y0, x0, kShapeBox, colors[color].rgb);
    if (as_vqa) {
        rec.id = "vqa-" + std::to_string(index);
        if (rng.index(2) == 0) {
            rec.prompt = "What color is the shape?";
            rec.reference = colors[color].name;
        } else {
            rec.prompt = "What shape is shown?";
            rec.reference = shapes[shape];
        }
    } else {
        rec.id = "caption-" + std::to_string(index);
        rec.prompt = kCaptionPrompts[rng.index(kCaptionPrompts.size())];
        rec.reference = colors[color].name + " " + shapes[shape];
    }
    return rec;
}

SynthRecord make_formula_record(std::size_t index, Rng& rng) {
    const std::string& cs = formula_charset();
    const std::size_t len = 3 + rng.index(3); // 3..5 glyphs
    std::string text;
    for (std::size_t i = 0; i < len; ++i) text.push_back(cs[rng.index(cs.size())]);

    SynthRecord rec;
    rec.id = "formula-" + std::to_string(index);
    rec.image = ImageTensor(kFormulaCanvas, kFormulaCanvas, 0.0);
    const std::size_t y0 = 12;
    for (std::size_t i = 0; i < text.size(); ++i)
        draw_formula_char(rec.image, text[i], y0, 1 + 6 * i);
    rec.prompt = "Write the formula as text.";
    rec.reference = text;
    return rec;
}

SynthRecord make_glyph_record(std::size_t index, Rng& rng) {
    const auto& names = synth_glyph_names();
    const std::size_t g = rng.index(names.size());
    const std::size_t y0 = rng.index(kGlyphCanvas - kGlyphBox + 1);
    const std::size_t x0 = rng.index(kGlyphCanvas - kGlyphBox + 1);

    SynthRecord rec;
    rec.id = "glyph-" + std::to_string(index);
    rec.image = ImageTensor(kGlyphCanvas, kGlyphCanvas, 0.0);
    for (std::size_t y = 0; y < kGlyphBox; ++y)
        for (std::size_t x = 0; x < kGlyphBox; ++x)
            if (kGlyphBitmaps[g][y] & (0x80 >> x))
                for (std::size_t c = 0; c < 3; ++c) rec.image.at(c, y0 + y, x0 + x) = 1.0;
    rec.prompt = "Name the small glyph.";
    rec.reference = names[g];
    return rec;
}

} // namespace

const std::vector<SynthColor>& synth_colors() {
    static const std::vector<SynthColor> colors = {
        {"red", {1, 0, 0}},     {"green", {0, 1, 0}},   {"blue", {0, 0, 1}},
        {"yellow", {1, 1, 0}},  {"magenta", {1, 0, 1}}, {"cyan", {0, 1, 1}},
        {"white", {1, 1, 1}},   {"gray", {0.5, 0.5, 0.5}},
    };
    return colors;
}

const std::vector<std::string>& synth_shape_names() {
    static const std::vector<std::string> shapes = {"square", "circle", "triangle", "cross"};
    return shapes;
}

const std::vector<std::string>& synth_glyph_names() {
    static const std::vector<std::string> names = {"plus", "ex", "bar", "ring"};
    return names;
}

const std::string& formula_charset() {
    static const std::string cs = "0123456789abcxyz+-=()";
    return cs;
}

std::array<std::uint8_t, 7> formula_glyph(char c) {
    auto it = font_table().find(c);
    if (it == font_table().end()) {
        throw ConfigError(std::string("formula font has no glyph for '") + c + "'");
    }
    return it->second;
}

SynthKind synth_kind_from_string(const std::string& s) {
    if (s == "caption") return SynthKind::Caption;
    if (s == "vqa") return SynthKind::Vqa;
    if (s == "formula") return SynthKind::Formula;
    if (s == "glyph") return SynthKind::Glyph;
    throw ConfigError("unknown dataset kind '" + s + "'");
}

std::string to_string(SynthKind kind) {
    switch (kind) {
        case SynthKind::Caption: return "caption";
        case SynthKind::Vqa: return "vqa";
        case SynthKind::Formula: return "formula";
        case SynthKind::Glyph: return "glyph";
    }
    throw ConfigError("unknown dataset kind");
}

std::vector<SynthRecord> synth_dataset(SynthKind kind, std::size_t n, std::uint64_t seed) {
    if (n == 0) throw ContractError("synth_dataset: n must be >= 1");
    Rng rng = Rng(seed).fork("synth/" + to_string(kind));
    std::vector<SynthRecord> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        switch (kind) {
            case SynthKind::Caption: out.push_back(make_caption_record(i, rng, false)); break;
            case SynthKind::Vqa: out.push_back(make_caption_record(i, rng, true)); break;
            case SynthKind::Formula: out.push_back(make_formula_record(i, rng)); break;
            case SynthKind::Glyph: out.push_back(make_glyph_record(i, rng)); break;
        }
    }
    return out;
}

} // namespace omnifuse
