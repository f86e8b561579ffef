#include "omnifuse/tiler.hpp"

#include <algorithm>
#include <cmath>

#include "omnifuse/errors.hpp"

namespace omnifuse {

namespace {

struct Candidate {
    std::size_t rows, cols;
    double pad_frac;
};

double fit_scale(std::size_t w, std::size_t h, double box_w, double box_h) {
    return std::min({1.0, box_w / static_cast<double>(w), box_h / static_cast<double>(h)});
}

} // namespace

TileLayout plan_grid(std::size_t w, std::size_t h, std::size_t tile_res, std::size_t max_tiles) {
    if (tile_res == 0) throw ConfigError("plan_grid: tile_res must be positive");
    w = std::max<std::size_t>(w, 1);
    h = std::max<std::size_t>(h, 1);
    max_tiles = std::max<std::size_t>(max_tiles, 1);

    std::vector<Candidate> candidates;
    for (std::size_t cols = 1; cols <= max_tiles; ++cols) {
        const std::size_t max_rows = max_tiles / cols;
        for (std::size_t rows = 1; rows <= max_rows; ++rows) {
            const double bw = static_cast<double>(cols * tile_res);
            const double bh = static_cast<double>(rows * tile_res);
            const double s = fit_scale(w, h, bw, bh);
            const double covered = s * static_cast<double>(w) * s * static_cast<double>(h);
            candidates.push_back({rows, cols, 1.0 - covered / (bw * bh)});
        }
    }
    const auto better = [](const Candidate& a, const Candidate& b) {
        if (a.pad_frac != b.pad_frac) return a.pad_frac < b.pad_frac;
        const std::size_t ta = a.rows * a.cols, tb = b.rows * b.cols;
        if (ta != tb) return ta > tb;
        const auto skew = [](const Candidate& c) {
            return c.cols > c.rows ? c.cols - c.rows : c.rows - c.cols;
        };
        if (skew(a) != skew(b)) return skew(a) < skew(b);
        if (a.rows != b.rows) return a.rows < b.rows;
        return a.cols < b.cols;
    };
    const Candidate best = *std::min_element(candidates.begin(), candidates.end(), better);

    TileLayout layout;
    layout.grid_rows = best.rows;
    layout.grid_cols = best.cols;
    layout.tile_res = tile_res;
    const std::size_t box_w = best.cols * tile_res, box_h = best.rows * tile_res;
    const double s = fit_scale(w, h, static_cast<double>(box_w), static_cast<double>(box_h));
    layout.scaled_w = std::clamp<std::size_t>(
        static_cast<std::size_t>(std::lround(static_cast<double>(w) * s)), 1, box_w);
    layout.scaled_h = std::clamp<std::size_t>(
        static_cast<std::size_t>(std::lround(static_cast<double>(h) * s)), 1, box_h);
    layout.pad_right = box_w - layout.scaled_w;
    layout.pad_bottom = box_h - layout.scaled_h;
    return layout;
}

TileBatch split(const ImageTensor& img, const TileLayout& layout) {
    if (layout.tile_res == 0 || layout.grid_rows == 0 || layout.grid_cols == 0) {
        throw ContractError("split: empty layout");
    }
    // The layout must describe this image: re-fitting into the same grid box
    // has to reproduce the recorded scaled dimensions.
    const std::size_t box_w = layout.grid_cols * layout.tile_res;
    const std::size_t box_h = layout.grid_rows * layout.tile_res;
    const double s = fit_scale(std::max<std::size_t>(img.width, 1), std::max<std::size_t>(img.height, 1),
                               static_cast<double>(box_w), static_cast<double>(box_h));
    const auto expect_w = std::clamp<std::size_t>(
        static_cast<std::size_t>(std::lround(static_cast<double>(img.width) * s)), 1, box_w);
    const auto expect_h = std::clamp<std::size_t>(
        static_cast<std::size_t>(std::lround(static_cast<double>(img.height) * s)), 1, box_h);
    if (expect_w != layout.scaled_w || expect_h != layout.scaled_h) {
        throw ContractError("split: layout does not match image " + std::to_string(img.width) + "x" +
                            std::to_string(img.height));
    }

    ImageTensor scaled = resize_bilinear(img, layout.scaled_h, layout.scaled_w);
    ImageTensor padded(box_h, box_w, 0.0);
    for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t y = 0; y < layout.scaled_h; ++y)
            for (std::size_t x = 0; x < layout.scaled_w; ++x)
                padded.at(c, y, x) = scaled.at(c, y, x);

    TileBatch batch;
    batch.layout = layout;
    batch.overview = resize_bilinear(img, layout.tile_res, layout.tile_res);
    batch.tiles.reserve(layout.tile_count());
    for (std::size_t r = 0; r < layout.grid_rows; ++r)
        for (std::size_t col = 0; col < layout.grid_cols; ++col)
            batch.tiles.push_back(
                crop(padded, r * layout.tile_res, col * layout.tile_res, layout.tile_res, layout.tile_res));
    return batch;
}

ImageTensor reassemble(const TileBatch& batch) {
    const auto& ly = batch.layout;
    if (batch.tiles.size() != ly.tile_count()) {
        throw ContractError("reassemble: " + std::to_string(batch.tiles.size()) + " tiles for a " +
                            std::to_string(ly.grid_rows) + "x" + std::to_string(ly.grid_cols) + " grid");
    }
    ImageTensor canvas(ly.grid_rows * ly.tile_res, ly.grid_cols * ly.tile_res, 0.0);
    for (std::size_t r = 0; r < ly.grid_rows; ++r)
        for (std::size_t col = 0; col < ly.grid_cols; ++col) {
            const ImageTensor& t = batch.tiles[r * ly.grid_cols + col];
            for (std::size_t c = 0; c < 3; ++c)
                for (std::size_t y = 0; y < ly.tile_res; ++y)
                    for (std::size_t x = 0; x < ly.tile_res; ++x)
                        canvas.at(c, r * ly.tile_res + y, col * ly.tile_res + x) = t.at(c, y, x);
        }
    return canvas;
}

Tensor assemble_visual_sequence(const Tensor& overview_tokens,
                                const std::vector<Tensor>& tile_tokens) {
    std::vector<Tensor> parts{overview_tokens};
    parts.insert(parts.end(), tile_tokens.begin(), tile_tokens.end());
    return concat_rows(parts);
}

std::size_t max_tiles_for_budget(std::size_t seq_len, std::size_t text_reserve,
                                 std::size_t tokens_per_tile) {
    if (tokens_per_tile == 0) throw ConfigError("max_tiles_for_budget: tokens_per_tile is zero");
    const std::size_t overhead = text_reserve + 2; // <boi>/<eoi>
    if (seq_len <= overhead) return 0;
    const std::size_t blocks = (seq_len - overhead) / tokens_per_tile;
    return blocks == 0 ? 0 : blocks - 1; // one block is the overview
}

} // namespace omnifuse
