#pragma once

#include <optional>
#include <string>
#include <vector>

#include "omnifuse/tensor.hpp"
#include "omnifuse/vocab.hpp"

namespace omnifuse {

struct DecoderConfig {
    std::size_t layers = 2;
    std::size_t width = 32;
    std::size_t heads = 4;
    std::size_t vocab = 0;
    std::size_t max_seq_len = 2048; // 4096 in the grid-splitting profile

    void validate() const;
};

/// Interleaved text runs and image slots. Image slots are indices into the
/// visual-tensor list handed to embed_and_splice; supervised runs are the
/// only positions that contribute to the loss.
struct MultimodalSequence {
    struct Segment {
        enum class Kind { Text, Image };
        Kind kind = Kind::Text;
        std::vector<std::size_t> text_ids; // Kind::Text
        bool supervised = false;           // Kind::Text
        std::size_t image_index = 0;       // Kind::Image
    };
    std::vector<Segment> segments;

    void add_text(std::vector<std::size_t> ids, bool supervised = false);
    void add_image(std::size_t index);
    std::size_t text_length() const;
};

/// The expanded sequence: embeddings ready for the decoder, the token id at
/// every position (kPad on visual positions), and the target mask, which is
/// false on all visual positions and on <boi>/<eoi>.
struct SplicedSequence {
    Tensor embeddings; // [T, width]
    std::vector<std::size_t> tokens;
    std::vector<bool> target_mask;

    std::size_t length() const { return tokens.size(); }
};

struct GenerateResult {
    std::vector<std::size_t> ids; // newly generated, without the prompt
    bool truncated = false;       // hit the sequence budget mid-generation
};

/// Low-rank reparameterization of one projection: W + (alpha/rank) * A * B.
/// B starts at zero so injection leaves the forward pass bit-identical.
struct LoraPair {
    Tensor a; // [d, rank]
    Tensor b; // [rank, d]
    double scaling = 1.0;
};

/// Toy decoder-only language model: token + position embeddings, pre-LN
/// causal blocks, final layer norm, untied output head. The <boi>/<eoi>
/// embeddings are separate trainable leaves spliced around every visual
/// block.
class Decoder {
public:
    explicit Decoder(DecoderConfig cfg);

    void init_random(std::uint64_t seed);
    bool initialized() const { return initialized_; }
    const DecoderConfig& config() const { return cfg_; }

    SplicedSequence embed_and_splice(const MultimodalSequence& seq,
                                     const std::vector<Tensor>& visual) const;

    /// Causal forward: [T, width] -> [T, vocab].
    Tensor forward(const Tensor& embeddings) const;

    /// Mean cross-entropy of logits[t-1] against tokens[t] over positions
    /// with target_mask[t] set.
    static Tensor loss(const Tensor& logits, const std::vector<std::size_t>& tokens,
                       const std::vector<bool>& target_mask);

    /// Greedy decoding until <eos> or max_new tokens.
    GenerateResult generate(const MultimodalSequence& prompt, const std::vector<Tensor>& visual,
                            std::size_t max_new) const;

    std::vector<std::pair<std::string, Tensor>> named_params() const;
    std::vector<std::pair<std::string, Tensor>> special_token_params() const;
    /// Everything except the special tokens (the frozen set in stage 1).
    std::vector<std::pair<std::string, Tensor>> base_params() const;

    /// Adds LoRA factors to every layer's attention query and value
    /// projections. Logits are unchanged until the factors train.
    void inject_lora(std::size_t rank, double alpha, std::uint64_t seed);
    bool has_lora() const { return lora_injected_; }
    std::size_t lora_rank() const { return lora_rank_; }
    double lora_alpha() const { return lora_alpha_; }
    std::vector<std::pair<std::string, Tensor>> lora_params() const;

    Tensor boi_embedding() const { return boi_; }
    Tensor eoi_embedding() const { return eoi_; }

private:
    struct Block {
        Tensor ln1_gain, ln1_bias;
        Tensor wq, wk, wv, wo;
        Tensor bq, bv, bo;
        Tensor ln2_gain, ln2_bias;
        Tensor mlp_w1, mlp_b1, mlp_w2, mlp_b2;
        std::optional<LoraPair> lora_q, lora_v;
    };

    Tensor block_forward(const Block& b, const Tensor& x) const;

    DecoderConfig cfg_;
    bool initialized_ = false;
    bool lora_injected_ = false;
    std::size_t lora_rank_ = 0;
    double lora_alpha_ = 0.0;
    Tensor token_embed_; // [vocab, width]
    Tensor pos_embed_;   // [max_seq_len, width]
    Tensor boi_, eoi_;   // [1, width] trainable special-token leaves
    std::vector<Block> blocks_;
    Tensor final_ln_gain_, final_ln_bias_;
    Tensor head_w_, head_b_; // [width, vocab]
};

} // namespace omnifuse
