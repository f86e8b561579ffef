#include <doctest.h>

#include <cmath>

#include "omnifuse/errors.hpp"
#include "omnifuse/image.hpp"
#include "omnifuse/tiler.hpp"
#include "oracles.hpp"

using namespace omnifuse;

namespace {

ImageTensor noise_image(std::size_t h, std::size_t w, std::uint64_t seed) {
    Rng rng(seed);
    ImageTensor img(h, w);
    for (auto& p : img.pixels) p = rng.uniform();
    return img;
}

} // namespace

TEST_SUITE_BEGIN("tiler");

TEST_CASE("plan_grid picks 2x2 with zero padding for 672x672") {
    TileLayout ly = plan_grid(672, 672, 336, 4);
    CHECK(ly.grid_rows == 2);
    CHECK(ly.grid_cols == 2);
    CHECK(ly.pad_right == 0);
    CHECK(ly.pad_bottom == 0);
    CHECK(ly.scaled_w == 672);
    CHECK(ly.scaled_h == 672);
}

TEST_CASE("plan_grid exact fit stays 1x1") {
    TileLayout ly = plan_grid(336, 336, 336, 6);
    CHECK(ly.grid_rows == 1);
    CHECK(ly.grid_cols == 1);
    CHECK(ly.pad_right == 0);
    CHECK(ly.pad_bottom == 0);
}

TEST_CASE("plan_grid 1000x500 downscales into a 1x2 grid exactly") {
    TileLayout ly = plan_grid(1000, 500, 336, 6);
    CHECK(ly.grid_rows == 1);
    CHECK(ly.grid_cols == 2);
    CHECK(ly.scaled_w == 672); // scale 0.672
    CHECK(ly.scaled_h == 336);
    CHECK(ly.pad_right == 0);
    CHECK(ly.pad_bottom == 0);
}

TEST_CASE("plan_grid clamps degenerate inputs to 1x1") {
    TileLayout ly = plan_grid(0, 5, 336, 0);
    CHECK(ly.grid_rows == 1);
    CHECK(ly.grid_cols == 1);
    CHECK(ly.tile_count() == 1);
}

TEST_CASE("plan_grid layout invariants hold on random inputs") {
    Rng rng(404);
    for (int i = 0; i < 500; ++i) {
        const std::size_t tile_res = 8 + rng.index(64);
        const std::size_t w = 1 + rng.index(4 * tile_res);
        const std::size_t h = 1 + rng.index(4 * tile_res);
        const std::size_t max_tiles = 1 + rng.index(12);
        TileLayout ly = plan_grid(w, h, tile_res, max_tiles);
        CHECK(ly.scaled_w + ly.pad_right == ly.grid_cols * tile_res);
        CHECK(ly.scaled_h + ly.pad_bottom == ly.grid_rows * tile_res);
        CHECK(ly.tile_count() <= max_tiles);
        // aspect preserved within one pixel of the exact scaled size
        const double s = std::min({1.0,
                                   static_cast<double>(ly.grid_cols * tile_res) / static_cast<double>(w),
                                   static_cast<double>(ly.grid_rows * tile_res) / static_cast<double>(h)});
        CHECK(std::abs(static_cast<double>(ly.scaled_w) - s * static_cast<double>(w)) <= 1.0);
        CHECK(std::abs(static_cast<double>(ly.scaled_h) - s * static_cast<double>(h)) <= 1.0);
    }
}

TEST_CASE("plan_grid agrees with the exhaustive oracle") {
    Rng rng(2024);
    for (int i = 0; i < 2000; ++i) {
        const std::size_t tile_res = 4 + rng.index(96);
        const std::size_t w = 1 + rng.index(4 * tile_res);
        const std::size_t h = 1 + rng.index(4 * tile_res);
        const std::size_t max_tiles = 1 + rng.index(16);
        TileLayout ly = plan_grid(w, h, tile_res, max_tiles);
        auto expect = oracles::brute_force_grid(w, h, tile_res, max_tiles);
        CHECK(ly.grid_rows == expect.rows);
        CHECK(ly.grid_cols == expect.cols);
    }
}

TEST_CASE("split on a 1x1 layout of a square image matches the overview") {
    ImageTensor img = noise_image(336, 336, 9);
    TileLayout ly = plan_grid(336, 336, 336, 1);
    TileBatch batch = split(img, ly);
    REQUIRE(batch.tiles.size() == 1);
    for (std::size_t i = 0; i < img.pixels.size(); ++i) {
        CHECK(batch.tiles[0].pixels[i] == img.pixels[i]); // scale 1, no pad
        CHECK(batch.overview.pixels[i] == img.pixels[i]);
    }
}

TEST_CASE("split 2x2 reassembles the 672x672 input bit exactly") {
    ImageTensor img = noise_image(672, 672, 10);
    TileLayout ly = plan_grid(672, 672, 336, 4);
    TileBatch batch = split(img, ly);
    REQUIRE(batch.tiles.size() == 4);
    ImageTensor back = reassemble(batch);
    REQUIRE(back.pixels.size() == img.pixels.size());
    for (std::size_t i = 0; i < img.pixels.size(); ++i) CHECK(back.pixels[i] == img.pixels[i]);
}

TEST_CASE("pad region pixels are exactly zero") {
    ImageTensor img = noise_image(500, 300, 11);
    TileLayout ly = plan_grid(300, 500, 336, 4); // note: w=300, h=500
    TileBatch batch = split(noise_image(500, 300, 11), ly);
    ImageTensor canvas = reassemble(batch);
    for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t y = 0; y < canvas.height; ++y)
            for (std::size_t x = 0; x < canvas.width; ++x) {
                if (y >= ly.scaled_h || x >= ly.scaled_w) CHECK(canvas.at(c, y, x) == 0.0);
            }
}

TEST_CASE("split rejects a layout from a different image") {
    TileLayout ly = plan_grid(672, 672, 336, 4);
    ImageTensor other = noise_image(100, 700, 12);
    CHECK_THROWS_AS(split(other, ly), ContractError);
}

TEST_CASE("split and reassemble are lossless over the scaled region on random images") {
    Rng rng(77);
    for (int i = 0; i < 20; ++i) {
        const std::size_t tile_res = 8 + rng.index(24);
        const std::size_t w = 1 + rng.index(3 * tile_res);
        const std::size_t h = 1 + rng.index(3 * tile_res);
        ImageTensor img = noise_image(h, w, 1000 + static_cast<std::uint64_t>(i));
        TileLayout ly = plan_grid(w, h, tile_res, 1 + rng.index(9));
        TileBatch batch = split(img, ly);
        ImageTensor canvas = reassemble(batch);
        ImageTensor scaled = resize_bilinear(img, ly.scaled_h, ly.scaled_w);
        for (std::size_t c = 0; c < 3; ++c)
            for (std::size_t y = 0; y < ly.scaled_h; ++y)
                for (std::size_t x = 0; x < ly.scaled_w; ++x)
                    CHECK(canvas.at(c, y, x) == scaled.at(c, y, x));
    }
}

TEST_CASE("assemble_visual_sequence counts overview plus tiles") {
    Rng rng(13);
    Tensor overview = Tensor::randn({576, 8}, rng);
    std::vector<Tensor> tiles;
    for (int i = 0; i < 4; ++i) tiles.push_back(Tensor::randn({576, 8}, rng));
    Tensor seq = assemble_visual_sequence(overview, tiles);
    CHECK(seq.dim(0) == 2880);
    CHECK(seq.dim(1) == 8);

    Tensor only = assemble_visual_sequence(overview, {});
    CHECK(only.dim(0) == 576);

    Tensor bad = Tensor::randn({4, 9}, rng);
    CHECK_THROWS_AS(assemble_visual_sequence(overview, {bad}), ShapeError);
}

TEST_CASE("sequence budget caps the tile count") {
    // 4096 budget, 576 tokens per tile: overview + 4 tiles = 2880 tokens,
    // 2 special tokens, the rest reserved for text.
    CHECK(max_tiles_for_budget(4096, 1024, 576) == 4);
    CHECK(max_tiles_for_budget(2048, 1024, 576) == 0);
    for (std::size_t reserve : {0u, 64u, 512u}) {
        const std::size_t n = max_tiles_for_budget(4096, reserve, 576);
        CHECK((n + 1) * 576 + 2 + reserve <= 4096);
        CHECK((n + 2) * 576 + 2 + reserve > 4096);
    }
}

TEST_SUITE_END();

TEST_SUITE_BEGIN("image");

TEST_CASE("bilinear resize to the same size is the identity") {
    ImageTensor img = noise_image(20, 30, 21);
    ImageTensor out = resize_bilinear(img, 20, 30);
    for (std::size_t i = 0; i < img.pixels.size(); ++i) CHECK(out.pixels[i] == img.pixels[i]);
}

TEST_CASE("bilinear downscale of a constant image is constant") {
    ImageTensor img(32, 32, 0.625);
    ImageTensor out = resize_bilinear(img, 10, 10);
    for (double p : out.pixels) CHECK(p == doctest::Approx(0.625).epsilon(1e-12));
}

TEST_CASE("fit_center_pad preserves aspect and pads with zeros") {
    ImageTensor img(10, 40, 1.0); // wide
    ImageTensor out = fit_center_pad(img, 16);
    CHECK(out.height == 16);
    CHECK(out.width == 16);
    // scale 0.4 -> 4x16 content vertically centered
    CHECK(out.at(0, 0, 0) == 0.0);
    CHECK(out.at(0, 8, 8) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(out.at(0, 15, 0) == 0.0);
}

TEST_CASE("ppm encode/decode round trip at 8-bit precision") {
    ImageTensor img = noise_image(7, 5, 33);
    for (auto& p : img.pixels) p = std::round(p * 255.0) / 255.0; // representable exactly
    ImageTensor back = decode_ppm(encode_ppm(img));
    CHECK(back.height == 7);
    CHECK(back.width == 5);
    for (std::size_t i = 0; i < img.pixels.size(); ++i)
        CHECK(back.pixels[i] == doctest::Approx(img.pixels[i]).epsilon(1e-12));
}

TEST_CASE("ppm decode rejects garbage") {
    std::vector<std::uint8_t> junk{'P', '5', '\n', '1', ' ', '1', '\n'};
    CHECK_THROWS_AS(decode_ppm(junk), FormatError);
}

TEST_CASE("base64 round trip including padding lengths") {
    for (std::size_t n : {0u, 1u, 2u, 3u, 4u, 5u, 17u}) {
        std::vector<std::uint8_t> bytes(n);
        for (std::size_t i = 0; i < n; ++i) bytes[i] = static_cast<std::uint8_t>(i * 37 + 5);
        CHECK(base64_decode(base64_encode(bytes)) == bytes);
    }
    CHECK(base64_encode({'h', 'i'}) == "aGk=");
    CHECK_THROWS_AS(base64_decode("a!b"), FormatError);
}

TEST_SUITE_END();
