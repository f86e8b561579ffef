#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "omnifuse/image.hpp"

namespace omnifuse {

/// One programmatically generated training/eval sample with exact ground
/// truth.
struct SynthRecord {
    std::string id;
    ImageTensor image;
    std::string prompt;
    std::string reference;
};

enum class SynthKind {
    Caption, // colored shape, answer "<color> <shape>"
    Vqa,     // question about the shape's color or kind
    Formula, // rendered glyph string, answer is the string
    Glyph,   // one small glyph on a large canvas (fine-detail task)
};

SynthKind synth_kind_from_string(const std::string& s);
std::string to_string(SynthKind kind);

/// Deterministic in (kind, n, seed); same call, same bytes.
std::vector<SynthRecord> synth_dataset(SynthKind kind, std::size_t n, std::uint64_t seed);

// Vocabularies of the generator, exported so independent readers can be
// written against them.
struct SynthColor {
    std::string name;
    std::array<double, 3> rgb;
};
const std::vector<SynthColor>& synth_colors();
const std::vector<std::string>& synth_shape_names(); // square circle triangle cross
const std::vector<std::string>& synth_glyph_names(); // plus ex bar ring

/// 5x7 bitmap font used by Formula records; row bytes hold 5 valid bits
/// (MSB leftmost).
const std::string& formula_charset();
std::array<std::uint8_t, 7> formula_glyph(char c);

// Geometry constants for readers.
inline constexpr std::size_t kShapeCanvas = 32;
inline constexpr std::size_t kShapeBox = 15;
inline constexpr std::size_t kFormulaCanvas = 32;
inline constexpr std::size_t kGlyphCanvas = 64;
inline constexpr std::size_t kGlyphBox = 8;

} // namespace omnifuse
