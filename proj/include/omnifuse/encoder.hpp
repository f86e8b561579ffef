#pragma once

#include <string>
#include <vector>

#include "omnifuse/image.hpp"
#include "omnifuse/tensor.hpp"

namespace omnifuse {

/// ViT geometry: patch size, square input resolution, depth, width, and
/// which layer's hidden states feed the adapter (-1 last, -2 penultimate).
struct EncoderConfig {
    std::string name;
    std::size_t patch_size = 0;
    std::size_t input_resolution = 0;
    std::size_t num_layers = 0;
    std::size_t hidden_dim = 0;
    std::size_t num_heads = 0;
    int feature_layer = -1;

    std::size_t token_count() const;
    std::size_t patch_dim() const { return 3 * patch_size * patch_size; }
    void validate() const;
};

/// Hidden states after every transformer block: num_layers entries of
/// [token_count, hidden_dim].
struct LayerFeatures {
    std::string encoder_name;
    std::vector<Tensor> layers;

    std::size_t num_layers() const { return layers.size(); }
    std::size_t token_count() const { return layers.empty() ? 0 : layers.front().dim(0); }
    std::size_t hidden_dim() const { return layers.empty() ? 0 : layers.front().dim(1); }
};

Tensor select_features(const LayerFeatures& f, int layer);

/// Non-overlapping patches in row-major order, each flattened channel-major.
/// The image must already be at the encoder resolution.
Tensor patchify(const ImageTensor& img, const EncoderConfig& cfg);

/// Toy pre-LN ViT. Weights are randomly initialized from a seed and frozen;
/// encode() emits the hidden-state stack after every block. Patch tokens
/// only — no class token.
class VisionEncoder {
public:
    explicit VisionEncoder(EncoderConfig cfg);

    void init_random(std::uint64_t seed);
    bool initialized() const { return initialized_; }
    const EncoderConfig& config() const { return cfg_; }

    /// Runs the full stack. Input must match the configured resolution
    /// (use preprocess() first for arbitrary images).
    LayerFeatures encode(const ImageTensor& img) const;

    /// Aspect-preserving resize + center zero-pad to the encoder resolution.
    ImageTensor preprocess(const ImageTensor& img) const;

    /// Test hook: zeroes position embeddings so permutation equivariance
    /// can be checked directly.
    void zero_position_embeddings();

    /// Frozen weights, listed for checkpointing and freeze-contract checks.
    std::vector<std::pair<std::string, Tensor>> named_params() const;

private:
    struct Block {
        Tensor ln1_gain, ln1_bias;
        AttentionWeights attn;
        Tensor ln2_gain, ln2_bias;
        Tensor mlp_w1, mlp_b1, mlp_w2, mlp_b2;
    };

    EncoderConfig cfg_;
    bool initialized_ = false;
    Tensor patch_embed_w_; // [patch_dim, hidden]
    Tensor patch_embed_b_;
    Tensor pos_embed_; // [tokens, hidden]
    std::vector<Block> blocks_;
};

// Geometry presets from the four production encoders (for token-count
// checks; running their full stacks is out of scope) plus two toy presets
// small enough to execute.
EncoderConfig encoder_preset(const std::string& name);
std::vector<std::string> encoder_preset_names();

} // namespace omnifuse
