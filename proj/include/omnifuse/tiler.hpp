#pragma once

#include <cstddef>
#include <vector>

#include "omnifuse/image.hpp"
#include "omnifuse/tensor.hpp"

namespace omnifuse {

/// Planned grid for splitting one image into encoder-resolution tiles.
struct TileLayout {
    std::size_t grid_rows = 1;
    std::size_t grid_cols = 1;
    std::size_t scaled_w = 0; // image size after aspect-preserving scale
    std::size_t scaled_h = 0;
    std::size_t pad_right = 0;  // zeros appended on the right
    std::size_t pad_bottom = 0; // zeros appended at the bottom
    std::size_t tile_res = 0;

    std::size_t tile_count() const { return grid_rows * grid_cols; }
};

struct TileBatch {
    ImageTensor overview;            // whole image at tile_res
    std::vector<ImageTensor> tiles;  // row-major, each tile_res x tile_res
    TileLayout layout;
};

/// Chooses the grid for a w x h image. Enumerates every (rows, cols) with
/// rows*cols <= max_tiles, fits the image inside the grid box with an
/// aspect-preserving scale capped at 1 (images are never upscaled), and
/// minimizes the padded-area fraction. Ties prefer the grid with more tiles
/// (more native-resolution detail), then smaller |cols-rows|, then fewer
/// rows, then fewer cols. Degenerate inputs clamp to a 1x1 grid.
TileLayout plan_grid(std::size_t w, std::size_t h, std::size_t tile_res, std::size_t max_tiles);

/// Resizes, pads bottom/right with zeros, and cuts row-major tiles.
/// The overview is the full image resized directly to tile_res.
TileBatch split(const ImageTensor& img, const TileLayout& layout);

/// Inverse of the tiling step: pastes tiles back into the padded canvas.
ImageTensor reassemble(const TileBatch& batch);

/// [overview, tile_0, ..., tile_{n-1}] concatenated along the token axis.
Tensor assemble_visual_sequence(const Tensor& overview_tokens,
                                const std::vector<Tensor>& tile_tokens);

/// Largest tile count that keeps overview + tiles + special tokens within
/// the sequence budget after reserving space for text.
std::size_t max_tiles_for_budget(std::size_t seq_len, std::size_t text_reserve,
                                 std::size_t tokens_per_tile);

} // namespace omnifuse
