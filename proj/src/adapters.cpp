#include "omnifuse/adapters.hpp"

#include <cmath>

#include "omnifuse/errors.hpp"

namespace omnifuse {

namespace {

Tensor linear_init(std::size_t in, std::size_t out, Rng& rng, bool trainable) {
    return Tensor::randn({in, out}, rng, 0.0, 1.0 / std::sqrt(static_cast<double>(in)), trainable);
}

struct Linear {
    Tensor w, b;

    static Linear init(std::size_t in, std::size_t out, Rng& rng, bool trainable) {
        return {linear_init(in, out, rng, trainable), Tensor::zeros({out}, trainable)};
    }
    Tensor operator()(const Tensor& x) const { return add_row_bias(matmul(x, w), b); }
    void named(std::vector<std::pair<std::string, Tensor>>& out, const std::string& prefix) const {
        out.emplace_back(prefix + ".w", w);
        out.emplace_back(prefix + ".b", b);
    }
};

/// Pre-LN transformer encoder block, no positional encoding (encoder
/// features already carry position).
struct EncoderBlock {
    Tensor ln1_gain, ln1_bias, ln2_gain, ln2_bias;
    AttentionWeights attn;
    Linear mlp1, mlp2;
    std::size_t heads;

    static EncoderBlock init(std::size_t d, std::size_t heads, Rng& rng, bool trainable) {
        EncoderBlock b;
        b.ln1_gain = Tensor::full({d}, 1.0, trainable);
        b.ln1_bias = Tensor::zeros({d}, trainable);
        b.ln2_gain = Tensor::full({d}, 1.0, trainable);
        b.ln2_bias = Tensor::zeros({d}, trainable);
        b.attn = AttentionWeights::init(d, rng, trainable);
        b.mlp1 = Linear::init(d, 2 * d, rng, trainable);
        b.mlp2 = Linear::init(2 * d, d, rng, trainable);
        b.heads = heads;
        return b;
    }
    Tensor operator()(const Tensor& x) const {
        Tensor h = layer_norm(x, ln1_gain, ln1_bias);
        Tensor y = add(x, multi_head_attention(h, h, h, attn, heads));
        Tensor m = layer_norm(y, ln2_gain, ln2_bias);
        return add(y, mlp2(gelu(mlp1(m))));
    }
    void named(std::vector<std::pair<std::string, Tensor>>& out, const std::string& prefix) const {
        out.emplace_back(prefix + ".ln1.gain", ln1_gain);
        out.emplace_back(prefix + ".ln1.bias", ln1_bias);
        for (auto& kv : attn.named(prefix + ".attn")) out.push_back(kv);
        out.emplace_back(prefix + ".ln2.gain", ln2_gain);
        out.emplace_back(prefix + ".ln2.bias", ln2_bias);
        mlp1.named(out, prefix + ".mlp1");
        mlp2.named(out, prefix + ".mlp2");
    }
};

void check_feature_arity(const std::vector<LayerFeatures>& features, std::size_t expect,
                         const char* what) {
    if (features.size() != expect) {
        throw ContractError(std::string(what) + ": expected " + std::to_string(expect) +
                            " feature stacks, got " + std::to_string(features.size()));
    }
    for (const auto& f : features) {
        if (f.layers.empty()) throw ContractError(std::string(what) + ": empty layer stack");
        if (f.token_count() == 0) throw ContractError(std::string(what) + ": empty token stream");
    }
}

/// Per-encoder half of the layer-aggregation fusions: layer-norm every
/// layer, map each through its own linear, combine with trainable
/// coefficients.
struct LayerAggregator {
    std::vector<Tensor> ln_gains, ln_biases;
    std::vector<Linear> maps;
    Tensor coeffs;

    static LayerAggregator init(std::size_t num_layers, std::size_t d_in, std::size_t width,
                                Rng& rng, bool trainable) {
        LayerAggregator a;
        for (std::size_t l = 0; l < num_layers; ++l) {
            a.ln_gains.push_back(Tensor::full({d_in}, 1.0, trainable));
            a.ln_biases.push_back(Tensor::zeros({d_in}, trainable));
            a.maps.push_back(Linear::init(d_in, width, rng, trainable));
        }
        a.coeffs = Tensor::full({num_layers}, 1.0 / static_cast<double>(num_layers), trainable);
        return a;
    }
    Tensor operator()(const LayerFeatures& f) const {
        if (f.num_layers() != maps.size()) {
            throw ContractError("layer aggregation: " + std::to_string(f.num_layers()) +
                                " layers from encoder '" + f.encoder_name + "', weights built for " +
                                std::to_string(maps.size()));
        }
        std::vector<Tensor> mapped;
        mapped.reserve(maps.size());
        for (std::size_t l = 0; l < maps.size(); ++l)
            mapped.push_back(maps[l](layer_norm(f.layers[l], ln_gains[l], ln_biases[l])));
        return linear_combination(mapped, coeffs);
    }
    void named(std::vector<std::pair<std::string, Tensor>>& out, const std::string& prefix) const {
        for (std::size_t l = 0; l < maps.size(); ++l) {
            const std::string p = prefix + ".layer" + std::to_string(l);
            out.emplace_back(p + ".ln.gain", ln_gains[l]);
            out.emplace_back(p + ".ln.bias", ln_biases[l]);
            maps[l].named(out, p);
        }
        out.emplace_back(prefix + ".coeffs", coeffs);
    }
};

Tensor pad_to_rows(const Tensor& x, std::size_t rows) {
    return x.dim(0) < rows ? pad_rows(x, rows - x.dim(0)) : x;
}

// ---- concrete adapters ----

class MlpProjectorAdapter final : public Adapter {
public:
    MlpProjectorAdapter(AdapterVariant v, const EncoderConfig& enc, std::size_t d_lm, Rng& rng,
                        bool trainable)
        : Adapter(v, d_lm), feature_layer_(enc.feature_layer) {
        const std::size_t hidden = v.hidden_dim ? v.hidden_dim : d_lm;
        fc1_ = Linear::init(enc.hidden_dim, hidden, rng, trainable);
        fc2_ = Linear::init(hidden, d_lm, rng, trainable);
    }

    Tensor forward(const std::vector<LayerFeatures>& features) const override {
        check_feature_arity(features, 1, "mlp_projector");
        return fc2_(gelu(fc1_(select_features(features[0], feature_layer_))));
    }

    std::vector<std::pair<std::string, Tensor>> named_params() const override {
        std::vector<std::pair<std::string, Tensor>> out;
        fc1_.named(out, "fc1");
        fc2_.named(out, "fc2");
        return out;
    }

private:
    int feature_layer_;
    Linear fc1_, fc2_;
};

class TransformerBaselineAdapter final : public Adapter {
public:
    TransformerBaselineAdapter(AdapterVariant v, const EncoderConfig& enc, std::size_t d_lm,
                               Rng& rng, bool trainable)
        : Adapter(v, d_lm), feature_layer_(enc.feature_layer) {
        if (enc.hidden_dim % v.heads != 0) {
            throw ConfigError("transformer_baseline: encoder width " +
                              std::to_string(enc.hidden_dim) + " not divisible by " +
                              std::to_string(v.heads) + " heads");
        }
        block_ = EncoderBlock::init(enc.hidden_dim, v.heads, rng, trainable);
        out_ = Linear::init(enc.hidden_dim, d_lm, rng, trainable);
    }

    Tensor forward(const std::vector<LayerFeatures>& features) const override {
        check_feature_arity(features, 1, "transformer_baseline");
        return out_(block_(select_features(features[0], feature_layer_)));
    }

    std::vector<std::pair<std::string, Tensor>> named_params() const override {
        std::vector<std::pair<std::string, Tensor>> out;
        block_.named(out, "block");
        out_.named(out, "out");
        return out;
    }

private:
    int feature_layer_;
    EncoderBlock block_;
    Linear out_;
};

class ConcatFuseAdapter final : public Adapter {
public:
    ConcatFuseAdapter(AdapterVariant v, const std::vector<EncoderConfig>& encs, std::size_t d_lm,
                      Rng& rng, bool trainable)
        : Adapter(v, d_lm), layers_{encs[0].feature_layer, encs[1].feature_layer} {
        width_ = v.hidden_dim ? v.hidden_dim : d_lm;
        if (width_ % v.heads != 0) {
            throw ConfigError("concat_fuse: shared width " + std::to_string(width_) +
                              " not divisible by " + std::to_string(v.heads) + " heads");
        }
        proj0_ = Linear::init(encs[0].hidden_dim, width_, rng, trainable);
        proj1_ = Linear::init(encs[1].hidden_dim, width_, rng, trainable);
        block_ = EncoderBlock::init(width_, v.heads, rng, trainable);
        out_ = Linear::init(width_, d_lm, rng, trainable);
    }

    Tensor forward(const std::vector<LayerFeatures>& features) const override {
        check_feature_arity(features, 2, "concat_fuse");
        return fuse(select_features(features[0], layers_[0]), select_features(features[1], layers_[1]));
    }

    /// The core op: independent projections, concatenation (encoder-1
    /// tokens first), encoder block, final linear map.
    Tensor fuse(const Tensor& f1, const Tensor& f2) const {
        if (f1.dim(0) == 0 || f2.dim(0) == 0) {
            throw ContractError("concat_fuse: empty modality (token counts " +
                                std::to_string(f1.dim(0)) + ", " + std::to_string(f2.dim(0)) + ")");
        }
        Tensor cat = concat_rows({proj0_(f1), proj1_(f2)});
        return out_(block_(cat));
    }

    std::vector<std::pair<std::string, Tensor>> named_params() const override {
        std::vector<std::pair<std::string, Tensor>> out;
        proj0_.named(out, "proj0");
        proj1_.named(out, "proj1");
        block_.named(out, "block");
        out_.named(out, "out");
        return out;
    }

private:
    int layers_[2];
    std::size_t width_;
    Linear proj0_, proj1_;
    EncoderBlock block_;
    Linear out_;
};

class LayerSumFuseAdapter final : public Adapter {
public:
    LayerSumFuseAdapter(AdapterVariant v, const std::vector<EncoderConfig>& encs, std::size_t d_lm,
                        Rng& rng, bool trainable)
        : Adapter(v, d_lm) {
        width_ = v.hidden_dim ? v.hidden_dim : d_lm;
        for (const auto& e : encs)
            aggs_.push_back(LayerAggregator::init(e.num_layers, e.hidden_dim, width_, rng, trainable));
        out_ = Linear::init(width_, d_lm, rng, trainable);
    }

    Tensor forward(const std::vector<LayerFeatures>& features) const override {
        if (features.size() != aggs_.size()) {
            throw ContractError("layer_sum_fuse: expected " + std::to_string(aggs_.size()) +
                                " feature stacks, got " + std::to_string(features.size()));
        }
        for (const auto& f : features)
            if (f.layers.empty()) throw ContractError("layer_sum_fuse: empty layer stack");

        std::vector<Tensor> streams;
        std::size_t max_len = 0;
        for (std::size_t e = 0; e < aggs_.size(); ++e) {
            streams.push_back(aggs_[e](features[e]));
            max_len = std::max(max_len, streams.back().dim(0));
        }
        // the shorter token sequence is extended with zero vectors, then the
        // streams are added
        Tensor summed = pad_to_rows(streams[0], max_len);
        for (std::size_t e = 1; e < streams.size(); ++e)
            summed = add(summed, pad_to_rows(streams[e], max_len));
        return out_(gelu(summed));
    }

    std::vector<std::pair<std::string, Tensor>> named_params() const override {
        std::vector<std::pair<std::string, Tensor>> out;
        for (std::size_t e = 0; e < aggs_.size(); ++e)
            aggs_[e].named(out, "enc" + std::to_string(e));
        out_.named(out, "out");
        return out;
    }

private:
    std::size_t width_;
    std::vector<LayerAggregator> aggs_;
    Linear out_;
};

class AttentionPoolFuseAdapter final : public Adapter {
public:
    AttentionPoolFuseAdapter(AdapterVariant v, const std::vector<EncoderConfig>& encs,
                             std::size_t d_lm, Rng& rng, bool trainable)
        : Adapter(v, d_lm) {
        width_ = v.hidden_dim ? v.hidden_dim : d_lm;
        if (width_ % v.heads != 0) {
            throw ConfigError("attention_pool_fuse: width " + std::to_string(width_) +
                              " not divisible by " + std::to_string(v.heads) + " heads");
        }
        for (const auto& e : encs)
            aggs_.push_back(LayerAggregator::init(e.num_layers, e.hidden_dim, width_, rng, trainable));
        pool_matrix_ = Tensor::randn({v.kv_rows, width_}, rng,
                                     0.0, 1.0 / std::sqrt(static_cast<double>(width_)), trainable);
        attn_ = AttentionWeights::init(width_, rng, trainable);
        out_ = Linear::init(width_, d_lm, rng, trainable);
    }

    Tensor forward(const std::vector<LayerFeatures>& features) const override {
        if (features.size() != aggs_.size()) {
            throw ContractError("attention_pool_fuse: expected " + std::to_string(aggs_.size()) +
                                " feature stacks, got " + std::to_string(features.size()));
        }
        std::vector<Tensor> streams;
        for (std::size_t e = 0; e < aggs_.size(); ++e) {
            if (features[e].layers.empty())
                throw ContractError("attention_pool_fuse: empty layer stack");
            streams.push_back(gelu(aggs_[e](features[e])));
        }
        Tensor cat = streams.size() == 1 ? streams[0] : concat_rows(streams);
        // Default wiring fixes the output length at kv_rows: the learned
        // matrix drives the queries and the features provide key/value.
        // The literal wiring reverses the roles and emits L1+L2 tokens.
        Tensor pooled = variant_.literal_attention_pool
                            ? multi_head_attention(cat, pool_matrix_, pool_matrix_, attn_, variant_.heads)
                            : multi_head_attention(pool_matrix_, cat, cat, attn_, variant_.heads);
        return out_(gelu(pooled));
    }

    std::vector<std::pair<std::string, Tensor>> named_params() const override {
        std::vector<std::pair<std::string, Tensor>> out;
        for (std::size_t e = 0; e < aggs_.size(); ++e)
            aggs_[e].named(out, "enc" + std::to_string(e));
        out.emplace_back("pool.matrix", pool_matrix_);
        for (auto& kv : attn_.named("pool.attn")) out.push_back(kv);
        out_.named(out, "out");
        return out;
    }

private:
    std::size_t width_;
    std::vector<LayerAggregator> aggs_;
    Tensor pool_matrix_;
    AttentionWeights attn_;
    Linear out_;
};

class TokenwiseMergeMlpAdapter final : public Adapter {
public:
    TokenwiseMergeMlpAdapter(AdapterVariant v, const std::vector<EncoderConfig>& encs,
                             std::size_t d_lm, Rng& rng, bool trainable)
        : Adapter(v, d_lm), layers_{encs[0].feature_layer, encs[1].feature_layer} {
        const std::size_t hidden = v.hidden_dim ? v.hidden_dim : d_lm;
        first0_ = Linear::init(encs[0].hidden_dim, hidden, rng, trainable);
        first1_ = Linear::init(encs[1].hidden_dim, hidden, rng, trainable);
        shared_ = Linear::init(hidden, d_lm, rng, trainable);
    }

    Tensor forward(const std::vector<LayerFeatures>& features) const override {
        check_feature_arity(features, 2, "tokenwise_merge_mlp");
        Tensor f1 = select_features(features[0], layers_[0]);
        Tensor f2 = select_features(features[1], layers_[1]);
        // unequal token counts: the shorter stream is zero-padded to match
        const std::size_t L = std::max(f1.dim(0), f2.dim(0));
        return merge(pad_to_rows(f1, L), pad_to_rows(f2, L));
    }

    /// The core op: per-encoder first layers, streams summed after the
    /// first layer, shared output layer. Token counts must already match.
    Tensor merge(const Tensor& f1, const Tensor& f2) const {
        if (f1.dim(0) != f2.dim(0)) {
            throw ContractError("tokenwise_merge_mlp: token counts differ (" +
                                std::to_string(f1.dim(0)) + " vs " + std::to_string(f2.dim(0)) + ")");
        }
        return shared_(gelu(add(first0_(f1), first1_(f2))));
    }

    std::vector<std::pair<std::string, Tensor>> named_params() const override {
        std::vector<std::pair<std::string, Tensor>> out;
        first0_.named(out, "first0");
        first1_.named(out, "first1");
        shared_.named(out, "shared");
        return out;
    }

private:
    int layers_[2];
    Linear first0_, first1_, shared_;
};

} // namespace

std::string to_string(AdapterKind kind) {
    switch (kind) {
        case AdapterKind::MlpProjector: return "mlp_projector";
        case AdapterKind::TransformerBaseline: return "transformer_baseline";
        case AdapterKind::ConcatFuse: return "concat_fuse";
        case AdapterKind::LayerSumFuse: return "layer_sum_fuse";
        case AdapterKind::AttentionPoolFuse: return "attention_pool_fuse";
        case AdapterKind::TokenwiseMergeMlp: return "tokenwise_merge_mlp";
    }
    throw ConfigError("unknown adapter kind");
}

AdapterKind adapter_kind_from_string(const std::string& s) {
    for (AdapterKind k : all_adapter_kinds())
        if (to_string(k) == s) return k;
    throw ConfigError("unknown adapter variant '" + s + "'");
}

std::vector<AdapterKind> all_adapter_kinds() {
    return {AdapterKind::MlpProjector,      AdapterKind::TransformerBaseline,
            AdapterKind::ConcatFuse,        AdapterKind::LayerSumFuse,
            AdapterKind::AttentionPoolFuse, AdapterKind::TokenwiseMergeMlp};
}

std::size_t adapter_arity(AdapterKind kind) {
    switch (kind) {
        case AdapterKind::MlpProjector:
        case AdapterKind::TransformerBaseline: return 1;
        default: return 2;
    }
}

void AdapterVariant::validate() const {
    if (heads == 0) throw ConfigError("adapter: heads must be positive");
    if (kind == AdapterKind::AttentionPoolFuse && kv_rows == 0) {
        throw ConfigError("attention_pool_fuse: kv_rows must be positive");
    }
}

std::size_t output_token_count(const AdapterVariant& variant,
                               const std::vector<EncoderConfig>& encoders) {
    variant.validate();
    if (encoders.empty()) throw ConfigError("output_token_count: no encoders");
    const std::size_t t0 = encoders[0].token_count();
    const std::size_t t1 = encoders.size() > 1 ? encoders[1].token_count() : 0;
    switch (variant.kind) {
        case AdapterKind::MlpProjector:
        case AdapterKind::TransformerBaseline: return t0;
        case AdapterKind::ConcatFuse: return t0 + t1;
        case AdapterKind::LayerSumFuse:
        case AdapterKind::TokenwiseMergeMlp: return std::max(t0, t1);
        case AdapterKind::AttentionPoolFuse:
            return variant.literal_attention_pool ? t0 + t1 : variant.kv_rows;
    }
    throw ConfigError("output_token_count: unknown adapter kind");
}

void Adapter::set_trainable(bool trainable) {
    for (auto& [name, t] : named_params()) {
        (void)name;
        Tensor copy = t;
        copy.set_requires_grad(trainable);
    }
}

std::unique_ptr<Adapter> make_adapter(const AdapterVariant& variant,
                                      const std::vector<EncoderConfig>& encoders, std::size_t d_lm,
                                      Rng& rng, bool trainable) {
    variant.validate();
    if (d_lm == 0) throw ConfigError("make_adapter: zero language-model width");
    const std::size_t arity = adapter_arity(variant.kind);
    const bool arity_ok = encoders.size() == arity ||
                          (variant.kind == AdapterKind::LayerSumFuse && encoders.size() == 1);
    if (!arity_ok) {
        throw ConfigError("adapter '" + to_string(variant.kind) + "' takes " + std::to_string(arity) +
                          " encoder(s), got " + std::to_string(encoders.size()));
    }
    for (const auto& e : encoders) e.validate();

    switch (variant.kind) {
        case AdapterKind::MlpProjector:
            return std::make_unique<MlpProjectorAdapter>(variant, encoders[0], d_lm, rng, trainable);
        case AdapterKind::TransformerBaseline:
            return std::make_unique<TransformerBaselineAdapter>(variant, encoders[0], d_lm, rng,
                                                                trainable);
        case AdapterKind::ConcatFuse:
            return std::make_unique<ConcatFuseAdapter>(variant, encoders, d_lm, rng, trainable);
        case AdapterKind::LayerSumFuse:
            return std::make_unique<LayerSumFuseAdapter>(variant, encoders, d_lm, rng, trainable);
        case AdapterKind::AttentionPoolFuse:
            return std::make_unique<AttentionPoolFuseAdapter>(variant, encoders, d_lm, rng, trainable);
        case AdapterKind::TokenwiseMergeMlp:
            return std::make_unique<TokenwiseMergeMlpAdapter>(variant, encoders, d_lm, rng, trainable);
    }
    throw ConfigError("make_adapter: unknown adapter kind");
}

} // namespace omnifuse
