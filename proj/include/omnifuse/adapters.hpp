#pragma once

#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "omnifuse/encoder.hpp"
#include "omnifuse/tensor.hpp"

namespace omnifuse {

enum class AdapterKind {
    MlpProjector,       // two-layer MLP with GELU, one encoder
    TransformerBaseline,// one encoder block then a linear width change
    ConcatFuse,         // two encoders: project, concatenate, encoder block
    LayerSumFuse,       // all layers, learned combination, streams summed
    AttentionPoolFuse,  // all layers, attention against a learned matrix
    TokenwiseMergeMlp,  // per-encoder first layer, summed, shared second
};

std::string to_string(AdapterKind kind);
AdapterKind adapter_kind_from_string(const std::string& s);

/// How many encoders the variant consumes. LayerSumFuse also accepts a
/// single stream (the reduction case); everything else is exact.
std::size_t adapter_arity(AdapterKind kind);

struct AdapterVariant {
    AdapterKind kind = AdapterKind::MlpProjector;
    std::size_t hidden_dim = 0; // 0 -> language-model width
    std::size_t heads = 4;
    std::size_t kv_rows = 576;
    /// Literal reading of the attention-pool wiring: concatenated features
    /// as the query, the learned matrix as key/value. Output length becomes
    /// L1+L2 instead of kv_rows.
    bool literal_attention_pool = false;

    void validate() const;
};

/// Exact number of visual tokens the adapter emits for the given encoders.
std::size_t output_token_count(const AdapterVariant& variant,
                               const std::vector<EncoderConfig>& encoders);

class Adapter {
public:
    virtual ~Adapter() = default;

    /// Maps encoder feature stacks to [tokens, d_lm].
    virtual Tensor forward(const std::vector<LayerFeatures>& features) const = 0;

    virtual std::vector<std::pair<std::string, Tensor>> named_params() const = 0;

    const AdapterVariant& variant() const { return variant_; }
    std::size_t lm_width() const { return d_lm_; }

    void set_trainable(bool trainable);

protected:
    Adapter(AdapterVariant variant, std::size_t d_lm) : variant_(variant), d_lm_(d_lm) {}
    AdapterVariant variant_;
    std::size_t d_lm_ = 0;
};

std::unique_ptr<Adapter> make_adapter(const AdapterVariant& variant,
                                      const std::vector<EncoderConfig>& encoders, std::size_t d_lm,
                                      Rng& rng, bool trainable = true);

std::vector<AdapterKind> all_adapter_kinds();

} // namespace omnifuse
