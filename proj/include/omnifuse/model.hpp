#pragma once

#include <memory>
#include <string>
#include <vector>

#include "omnifuse/adapters.hpp"
#include "omnifuse/decoder.hpp"
#include "omnifuse/encoder.hpp"
#include "omnifuse/tiler.hpp"
#include "omnifuse/vocab.hpp"

namespace omnifuse {

struct TilingSettings {
    bool enabled = false;
    std::size_t tile_res = 0;      // equals encoder 0's input resolution
    std::size_t max_tiles = 4;
    std::size_t text_reserve = 64; // sequence budget kept free for text
};

/// Per-view encoder outputs for one image: views[v][e] is the feature stack
/// of view v (overview first, then row-major tiles) under encoder e. Frozen
/// encoders make these cacheable across training steps.
using EncodedViews = std::vector<std::vector<LayerFeatures>>;

/// Everything needed to run one multimodal experiment: one or two frozen
/// vision encoders, the adapter under test, the toy decoder with its
/// special tokens, and the tiling settings.
class OmniModel {
public:
    OmniModel(std::vector<EncoderConfig> encoder_cfgs, AdapterVariant adapter_variant,
              DecoderConfig decoder_cfg, Vocabulary vocab, TilingSettings tiling,
              std::uint64_t seed);

    const std::vector<VisionEncoder>& encoders() const { return encoders_; }
    Adapter& adapter() { return *adapter_; }
    const Adapter& adapter() const { return *adapter_; }
    Decoder& decoder() { return decoder_; }
    const Decoder& decoder() const { return decoder_; }
    const Vocabulary& vocab() const { return vocab_; }
    const TilingSettings& tiling() const { return tiling_; }
    std::uint64_t seed() const { return seed_; }

    /// Tokens one view (tile or overview) contributes after adaptation.
    std::size_t tokens_per_view() const;
    /// The tile budget actually used: the configured max_tiles clamped by
    /// the decoder's sequence budget.
    std::size_t effective_max_tiles() const;

    /// Image -> per-view encoder features (overview only when tiling is
    /// off or disabled for this call).
    EncodedViews encode_views(const ImageTensor& img, bool tiling_on) const;

    /// Cached-feature path: adapter applied per view, concatenated
    /// [overview, tiles...] along the token axis.
    Tensor visual_from_views(const EncodedViews& views) const;

    /// Convenience: encode_views + visual_from_views.
    Tensor visual_tokens(const ImageTensor& img, bool tiling_on) const;

    /// Prompt/answer template shared by training and evaluation:
    /// <bos> [visual block] prompt ' ' answer <eos>, answer supervised.
    MultimodalSequence build_sequence(const std::string& prompt, const std::string& answer) const;

    /// All parameters with registry prefixes (encoderN., adapter.,
    /// decoder., special., plus decoder.…lora… once injected).
    std::vector<std::pair<std::string, Tensor>> named_params() const;

    /// Stable hash of the architecture (geometry, variant, widths, seed);
    /// stored in checkpoints so stale files are rejected.
    std::uint64_t fingerprint() const;
    std::string describe() const;

private:
    std::vector<VisionEncoder> encoders_;
    std::unique_ptr<Adapter> adapter_;
    Decoder decoder_;
    Vocabulary vocab_;
    TilingSettings tiling_;
    std::uint64_t seed_;
};

} // namespace omnifuse
