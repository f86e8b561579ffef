#include "omnifuse/encoder.hpp"

#include <cmath>

#include "omnifuse/errors.hpp"

namespace omnifuse {

std::size_t EncoderConfig::token_count() const {
    const std::size_t side = input_resolution / patch_size;
    return side * side;
}

void EncoderConfig::validate() const {
    if (patch_size == 0 || input_resolution == 0 || num_layers == 0 || hidden_dim == 0 ||
        num_heads == 0) {
        throw ConfigError("encoder '" + name + "': all geometry fields must be positive");
    }
    if (input_resolution % patch_size != 0) {
        throw ConfigError("encoder '" + name + "': resolution " + std::to_string(input_resolution) +
                          " not divisible by patch " + std::to_string(patch_size));
    }
    if (hidden_dim % num_heads != 0) {
        throw ConfigError("encoder '" + name + "': hidden_dim " + std::to_string(hidden_dim) +
                          " not divisible by " + std::to_string(num_heads) + " heads");
    }
    if (feature_layer < -static_cast<int>(num_layers) || feature_layer > -1) {
        throw ConfigError("encoder '" + name + "': feature_layer " + std::to_string(feature_layer) +
                          " outside [-" + std::to_string(num_layers) + ", -1]");
    }
}

Tensor select_features(const LayerFeatures& f, int layer) {
    const int n = static_cast<int>(f.layers.size());
    if (layer < -n || layer > -1) {
        throw ConfigError("select_features: layer " + std::to_string(layer) + " outside [-" +
                          std::to_string(n) + ", -1] for encoder '" + f.encoder_name + "'");
    }
    return f.layers[static_cast<std::size_t>(n + layer)];
}

Tensor patchify(const ImageTensor& img, const EncoderConfig& cfg) {
    if (img.height != cfg.input_resolution || img.width != cfg.input_resolution) {
        throw PreprocessError("patchify: image " + std::to_string(img.width) + "x" +
                              std::to_string(img.height) + " does not match encoder resolution " +
                              std::to_string(cfg.input_resolution));
    }
    const std::size_t p = cfg.patch_size;
    const std::size_t side = cfg.input_resolution / p;
    const std::size_t pd = cfg.patch_dim();
    std::vector<double> out(side * side * pd);
    for (std::size_t py = 0; py < side; ++py)
        for (std::size_t px = 0; px < side; ++px) {
            double* dst = &out[(py * side + px) * pd];
            std::size_t i = 0;
            for (std::size_t c = 0; c < 3; ++c)
                for (std::size_t y = 0; y < p; ++y)
                    for (std::size_t x = 0; x < p; ++x)
                        dst[i++] = img.at(c, py * p + y, px * p + x);
        }
    return Tensor::from_data({side * side, pd}, std::move(out));
}

VisionEncoder::VisionEncoder(EncoderConfig cfg) : cfg_(std::move(cfg)) { cfg_.validate(); }

void VisionEncoder::init_random(std::uint64_t seed) {
    Rng rng = Rng(seed).fork("encoder/" + cfg_.name);
    const std::size_t d = cfg_.hidden_dim;
    const std::size_t mlp_dim = 2 * d;
    patch_embed_w_ = Tensor::randn({cfg_.patch_dim(), d}, rng, 0.0,
                                   1.0 / std::sqrt(static_cast<double>(cfg_.patch_dim())));
    patch_embed_b_ = Tensor::zeros({d});
    pos_embed_ = Tensor::randn({cfg_.token_count(), d}, rng, 0.0, 0.02);
    blocks_.clear();
    for (std::size_t l = 0; l < cfg_.num_layers; ++l) {
        Block b;
        b.ln1_gain = Tensor::full({d}, 1.0);
        b.ln1_bias = Tensor::zeros({d});
        b.attn = AttentionWeights::init(d, rng, false);
        b.ln2_gain = Tensor::full({d}, 1.0);
        b.ln2_bias = Tensor::zeros({d});
        b.mlp_w1 = Tensor::randn({d, mlp_dim}, rng, 0.0, 1.0 / std::sqrt(static_cast<double>(d)));
        b.mlp_b1 = Tensor::zeros({mlp_dim});
        b.mlp_w2 = Tensor::randn({mlp_dim, d}, rng, 0.0, 1.0 / std::sqrt(static_cast<double>(mlp_dim)));
        b.mlp_b2 = Tensor::zeros({d});
        blocks_.push_back(std::move(b));
    }
    initialized_ = true;
}

ImageTensor VisionEncoder::preprocess(const ImageTensor& img) const {
    return fit_center_pad(img, cfg_.input_resolution);
}

LayerFeatures VisionEncoder::encode(const ImageTensor& img) const {
    if (!initialized_) {
        throw StateError("encode: encoder '" + cfg_.name + "' has no weights; call init_random");
    }
    Tensor x = add(add_row_bias(matmul(patchify(img, cfg_), patch_embed_w_), patch_embed_b_),
                   pos_embed_);
    LayerFeatures out;
    out.encoder_name = cfg_.name;
    out.layers.reserve(cfg_.num_layers);
    for (const Block& b : blocks_) {
        Tensor h = layer_norm(x, b.ln1_gain, b.ln1_bias);
        x = add(x, multi_head_attention(h, h, h, b.attn, cfg_.num_heads));
        Tensor m = layer_norm(x, b.ln2_gain, b.ln2_bias);
        m = add_row_bias(matmul(gelu(add_row_bias(matmul(m, b.mlp_w1), b.mlp_b1)), b.mlp_w2),
                         b.mlp_b2);
        x = add(x, m);
        out.layers.push_back(x);
    }
    return out;
}

void VisionEncoder::zero_position_embeddings() {
    if (!initialized_) throw StateError("zero_position_embeddings: encoder has no weights");
    for (auto& v : pos_embed_.mutable_data()) v = 0.0;
}

std::vector<std::pair<std::string, Tensor>> VisionEncoder::named_params() const {
    if (!initialized_) throw StateError("named_params: encoder has no weights");
    std::vector<std::pair<std::string, Tensor>> out;
    out.emplace_back("patch_embed.w", patch_embed_w_);
    out.emplace_back("patch_embed.b", patch_embed_b_);
    out.emplace_back("pos_embed", pos_embed_);
    for (std::size_t l = 0; l < blocks_.size(); ++l) {
        const Block& b = blocks_[l];
        const std::string p = "block" + std::to_string(l);
        out.emplace_back(p + ".ln1.gain", b.ln1_gain);
        out.emplace_back(p + ".ln1.bias", b.ln1_bias);
        for (auto& kv : b.attn.named(p + ".attn")) out.push_back(kv);
        out.emplace_back(p + ".ln2.gain", b.ln2_gain);
        out.emplace_back(p + ".ln2.bias", b.ln2_bias);
        out.emplace_back(p + ".mlp.w1", b.mlp_w1);
        out.emplace_back(p + ".mlp.b1", b.mlp_b1);
        out.emplace_back(p + ".mlp.w2", b.mlp_w2);
        out.emplace_back(p + ".mlp.b2", b.mlp_b2);
    }
    return out;
}

EncoderConfig encoder_preset(const std::string& name) {
    // Production geometries: patch, resolution, depth, width, heads, layer.
    if (name == "clip-vit-bigG-14") return {name, 14, 224, 48, 1664, 16, -2};
    if (name == "clip-vit-large-14") return {name, 14, 336, 24, 1024, 16, -2};
    if (name == "siglip-base-16-512") return {name, 16, 512, 12, 768, 12, -2};
    if (name == "internvit-6b-448") return {name, 14, 448, 45, 3200, 25, -1};
    // Executable toy stand-ins.
    if (name == "cliplike") return {name, 8, 32, 3, 16, 4, -2};
    if (name == "dinolike") return {name, 4, 24, 3, 12, 3, -1};
    throw ConfigError("unknown encoder preset '" + name + "'");
}

std::vector<std::string> encoder_preset_names() {
    return {"clip-vit-bigG-14", "clip-vit-large-14", "siglip-base-16-512", "internvit-6b-448",
            "cliplike", "dinolike"};
}

} // namespace omnifuse
