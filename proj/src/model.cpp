#include "omnifuse/model.hpp"

#include <sstream>

#include "omnifuse/errors.hpp"

namespace omnifuse {

OmniModel::OmniModel(std::vector<EncoderConfig> encoder_cfgs, AdapterVariant adapter_variant,
                     DecoderConfig decoder_cfg, Vocabulary vocab, TilingSettings tiling,
                     std::uint64_t seed)
    : decoder_(decoder_cfg), vocab_(std::move(vocab)), tiling_(tiling), seed_(seed) {
    if (encoder_cfgs.empty() || encoder_cfgs.size() > 2) {
        throw ConfigError("model: expected one or two encoders, got " +
                          std::to_string(encoder_cfgs.size()));
    }
    if (decoder_cfg.vocab != vocab_.size()) {
        throw ConfigError("model: decoder vocab " + std::to_string(decoder_cfg.vocab) +
                          " does not match vocabulary size " + std::to_string(vocab_.size()));
    }
    if (tiling_.enabled) {
        if (tiling_.tile_res == 0) tiling_.tile_res = encoder_cfgs[0].input_resolution;
        if (tiling_.tile_res != encoder_cfgs[0].input_resolution) {
            throw ConfigError("model: tile_res " + std::to_string(tiling_.tile_res) +
                              " must equal encoder 0 resolution " +
                              std::to_string(encoder_cfgs[0].input_resolution));
        }
    }
    for (auto& cfg : encoder_cfgs) {
        encoders_.emplace_back(cfg);
        encoders_.back().init_random(seed);
    }
    Rng arng = Rng(seed).fork("adapter");
    std::vector<EncoderConfig> cfgs;
    for (const auto& e : encoders_) cfgs.push_back(e.config());
    adapter_ = make_adapter(adapter_variant, cfgs, decoder_cfg.width, arng, /*trainable=*/true);
    decoder_.init_random(seed);

    if (tiling_.enabled && effective_max_tiles() == 0) {
        throw BudgetError("model: sequence budget " + std::to_string(decoder_cfg.max_seq_len) +
                          " cannot fit an overview plus one tile (" +
                          std::to_string(tokens_per_view()) + " tokens per view, reserve " +
                          std::to_string(tiling_.text_reserve) + ")");
    }
}

std::size_t OmniModel::tokens_per_view() const {
    std::vector<EncoderConfig> cfgs;
    for (const auto& e : encoders_) cfgs.push_back(e.config());
    return output_token_count(adapter_->variant(), cfgs);
}

std::size_t OmniModel::effective_max_tiles() const {
    const std::size_t budget = max_tiles_for_budget(decoder_.config().max_seq_len,
                                                    tiling_.text_reserve, tokens_per_view());
    return std::min(tiling_.max_tiles, budget);
}

EncodedViews OmniModel::encode_views(const ImageTensor& img, bool tiling_on) const {
    std::vector<ImageTensor> view_images;
    if (tiling_on && tiling_.enabled) {
        TileLayout layout = plan_grid(img.width, img.height, tiling_.tile_res, effective_max_tiles());
        TileBatch batch = split(img, layout);
        view_images.push_back(std::move(batch.overview));
        for (auto& t : batch.tiles) view_images.push_back(std::move(t));
    } else {
        view_images.push_back(img);
    }

    EncodedViews views;
    views.reserve(view_images.size());
    for (const auto& view : view_images) {
        std::vector<LayerFeatures> per_encoder;
        for (const auto& enc : encoders_) {
            // detach: encoders are frozen, features are pure data
            LayerFeatures f = enc.encode(enc.preprocess(view));
            for (auto& layer : f.layers) layer = layer.detach();
            per_encoder.push_back(std::move(f));
        }
        views.push_back(std::move(per_encoder));
    }
    return views;
}

Tensor OmniModel::visual_from_views(const EncodedViews& views) const {
    if (views.empty()) throw ContractError("visual_from_views: no views");
    std::vector<Tensor> per_view;
    per_view.reserve(views.size());
    for (const auto& v : views) per_view.push_back(adapter_->forward(v));
    if (per_view.size() == 1) return per_view[0];
    return assemble_visual_sequence(per_view[0], {per_view.begin() + 1, per_view.end()});
}

Tensor OmniModel::visual_tokens(const ImageTensor& img, bool tiling_on) const {
    return visual_from_views(encode_views(img, tiling_on));
}

MultimodalSequence OmniModel::build_sequence(const std::string& prompt,
                                             const std::string& answer) const {
    MultimodalSequence seq;
    seq.add_text({Vocabulary::kBos});
    seq.add_image(0);
    auto prompt_ids = vocab_.encode(prompt + " ");
    seq.add_text(std::move(prompt_ids), /*supervised=*/false);
    if (!answer.empty()) {
        auto answer_ids = vocab_.encode(answer);
        answer_ids.push_back(Vocabulary::kEos);
        seq.add_text(std::move(answer_ids), /*supervised=*/true);
    }
    return seq;
}

std::vector<std::pair<std::string, Tensor>> OmniModel::named_params() const {
    std::vector<std::pair<std::string, Tensor>> out;
    for (std::size_t e = 0; e < encoders_.size(); ++e) {
        for (auto& [name, t] : encoders_[e].named_params())
            out.emplace_back("encoder" + std::to_string(e) + "." + name, t);
    }
    for (auto& [name, t] : adapter_->named_params()) out.emplace_back("adapter." + name, t);
    for (auto& [name, t] : decoder_.base_params()) out.emplace_back("decoder." + name, t);
    for (auto& [name, t] : decoder_.special_token_params()) out.emplace_back(name, t);
    for (auto& [name, t] : decoder_.lora_params()) out.emplace_back("decoder." + name, t);
    return out;
}

std::string OmniModel::describe() const {
    std::ostringstream os;
    for (const auto& e : encoders_) {
        const auto& c = e.config();
        os << "enc(" << c.name << "," << c.patch_size << "," << c.input_resolution << ","
           << c.num_layers << "," << c.hidden_dim << "," << c.num_heads << "," << c.feature_layer
           << ");";
    }
    const auto& v = adapter_->variant();
    os << "adapter(" << to_string(v.kind) << "," << v.hidden_dim << "," << v.heads << ","
       << v.kv_rows << "," << (v.literal_attention_pool ? 1 : 0) << ");";
    const auto& d = decoder_.config();
    os << "decoder(" << d.layers << "," << d.width << "," << d.heads << "," << d.vocab << ","
       << d.max_seq_len << ");";
    os << "tiling(" << (tiling_.enabled ? 1 : 0) << "," << tiling_.tile_res << ","
       << tiling_.max_tiles << "," << tiling_.text_reserve << ");";
    os << "charset(" << vocab_.charset() << ");seed(" << seed_ << ")";
    return os.str();
}

std::uint64_t OmniModel::fingerprint() const { return fnv1a64(describe()); }

} // namespace omnifuse
