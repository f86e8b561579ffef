#include "omnifuse/decoder.hpp"

#include <cmath>

#include "omnifuse/errors.hpp"

namespace omnifuse {

void DecoderConfig::validate() const {
    if (layers == 0 || width == 0 || heads == 0 || vocab == 0 || max_seq_len == 0) {
        throw ConfigError("decoder: all config fields must be positive");
    }
    if (width % heads != 0) {
        throw ConfigError("decoder: width " + std::to_string(width) + " not divisible by " +
                          std::to_string(heads) + " heads");
    }
}

void MultimodalSequence::add_text(std::vector<std::size_t> ids, bool supervised) {
    Segment s;
    s.kind = Segment::Kind::Text;
    s.text_ids = std::move(ids);
    s.supervised = supervised;
    segments.push_back(std::move(s));
}

void MultimodalSequence::add_image(std::size_t index) {
    Segment s;
    s.kind = Segment::Kind::Image;
    s.image_index = index;
    segments.push_back(std::move(s));
}

std::size_t MultimodalSequence::text_length() const {
    std::size_t n = 0;
    for (const auto& s : segments)
        if (s.kind == Segment::Kind::Text) n += s.text_ids.size();
    return n;
}

Decoder::Decoder(DecoderConfig cfg) : cfg_(cfg) { cfg_.validate(); }

void Decoder::init_random(std::uint64_t seed) {
    Rng rng = Rng(seed).fork("decoder");
    const std::size_t d = cfg_.width;
    const std::size_t mlp_dim = 4 * d;
    const double wstd = 1.0 / std::sqrt(static_cast<double>(d));
    token_embed_ = Tensor::randn({cfg_.vocab, d}, rng, 0.0, 0.02, true);
    pos_embed_ = Tensor::randn({cfg_.max_seq_len, d}, rng, 0.0, 0.02, true);
    boi_ = Tensor::randn({1, d}, rng, 0.0, 0.02, true);
    eoi_ = Tensor::randn({1, d}, rng, 0.0, 0.02, true);
    blocks_.clear();
    for (std::size_t l = 0; l < cfg_.layers; ++l) {
        Block b;
        b.ln1_gain = Tensor::full({d}, 1.0, true);
        b.ln1_bias = Tensor::zeros({d}, true);
        b.wq = Tensor::randn({d, d}, rng, 0.0, wstd, true);
        b.wk = Tensor::randn({d, d}, rng, 0.0, wstd, true);
        b.wv = Tensor::randn({d, d}, rng, 0.0, wstd, true);
        b.wo = Tensor::randn({d, d}, rng, 0.0, wstd, true);
        b.bq = Tensor::zeros({d}, true);
        b.bv = Tensor::zeros({d}, true);
        b.bo = Tensor::zeros({d}, true);
        b.ln2_gain = Tensor::full({d}, 1.0, true);
        b.ln2_bias = Tensor::zeros({d}, true);
        b.mlp_w1 = Tensor::randn({d, mlp_dim}, rng, 0.0, wstd, true);
        b.mlp_b1 = Tensor::zeros({mlp_dim}, true);
        b.mlp_w2 = Tensor::randn({mlp_dim, d}, rng, 0.0,
                                 1.0 / std::sqrt(static_cast<double>(mlp_dim)), true);
        b.mlp_b2 = Tensor::zeros({d}, true);
        blocks_.push_back(std::move(b));
    }
    final_ln_gain_ = Tensor::full({d}, 1.0, true);
    final_ln_bias_ = Tensor::zeros({d}, true);
    head_w_ = Tensor::randn({d, cfg_.vocab}, rng, 0.0, wstd, true);
    head_b_ = Tensor::zeros({cfg_.vocab}, true);
    initialized_ = true;
}

SplicedSequence Decoder::embed_and_splice(const MultimodalSequence& seq,
                                          const std::vector<Tensor>& visual) const {
    if (!initialized_) throw StateError("embed_and_splice: decoder has no weights");

    // splice-length law: T = sum(text) + sum(Lv + 2) per image slot
    std::size_t total = seq.text_length();
    for (const auto& s : seq.segments) {
        if (s.kind != MultimodalSequence::Segment::Kind::Image) continue;
        if (s.image_index >= visual.size()) {
            throw ContractError("embed_and_splice: image slot " + std::to_string(s.image_index) +
                                " has no adapter output (got " + std::to_string(visual.size()) + ")");
        }
        total += visual[s.image_index].dim(0) + 2;
    }
    if (total > cfg_.max_seq_len) {
        throw BudgetError("embed_and_splice: sequence length " + std::to_string(total) +
                          " exceeds max_seq_len " + std::to_string(cfg_.max_seq_len));
    }

    SplicedSequence out;
    out.tokens.reserve(total);
    out.target_mask.reserve(total);
    std::vector<Tensor> parts;
    for (const auto& s : seq.segments) {
        if (s.kind == MultimodalSequence::Segment::Kind::Text) {
            if (s.text_ids.empty()) continue;
            parts.push_back(embedding_lookup(token_embed_, s.text_ids));
            for (std::size_t id : s.text_ids) {
                out.tokens.push_back(id);
                out.target_mask.push_back(s.supervised);
            }
        } else {
            const Tensor& v = visual[s.image_index];
            if (v.dim(1) != cfg_.width) {
                throw ShapeError("embed_and_splice: visual width " + shape_str(v.shape()) +
                                 " vs decoder width " + std::to_string(cfg_.width));
            }
            parts.push_back(boi_);
            parts.push_back(v);
            parts.push_back(eoi_);
            out.tokens.push_back(Vocabulary::kBoi);
            out.target_mask.push_back(false);
            for (std::size_t i = 0; i < v.dim(0); ++i) {
                out.tokens.push_back(Vocabulary::kPad);
                out.target_mask.push_back(false);
            }
            out.tokens.push_back(Vocabulary::kEoi);
            out.target_mask.push_back(false);
        }
    }
    if (parts.empty()) throw ContractError("embed_and_splice: empty sequence");
    Tensor spliced = parts.size() == 1 ? parts[0] : concat_rows(parts);
    out.embeddings = add(spliced, slice_rows(pos_embed_, 0, spliced.dim(0)));
    return out;
}

Tensor Decoder::block_forward(const Block& b, const Tensor& x) const {
    Tensor h = layer_norm(x, b.ln1_gain, b.ln1_bias);
    Tensor qp = add_row_bias(matmul(h, b.wq), b.bq);
    Tensor kp = matmul(h, b.wk);
    Tensor vp = add_row_bias(matmul(h, b.wv), b.bv);
    if (b.lora_q) qp = add(qp, scale(matmul(matmul(h, b.lora_q->a), b.lora_q->b), b.lora_q->scaling));
    if (b.lora_v) vp = add(vp, scale(matmul(matmul(h, b.lora_v->a), b.lora_v->b), b.lora_v->scaling));
    Tensor core = attention_core(qp, kp, vp, cfg_.heads, /*causal=*/true);
    Tensor y = add(x, add_row_bias(matmul(core, b.wo), b.bo));
    Tensor m = layer_norm(y, b.ln2_gain, b.ln2_bias);
    m = add_row_bias(matmul(gelu(add_row_bias(matmul(m, b.mlp_w1), b.mlp_b1)), b.mlp_w2), b.mlp_b2);
    return add(y, m);
}

Tensor Decoder::forward(const Tensor& embeddings) const {
    if (!initialized_) throw StateError("forward: decoder has no weights");
    if (embeddings.rank() != 2 || embeddings.dim(1) != cfg_.width) {
        throw ShapeError("forward: embeddings " + shape_str(embeddings.shape()) +
                         " vs decoder width " + std::to_string(cfg_.width));
    }
    if (embeddings.dim(0) > cfg_.max_seq_len) {
        throw BudgetError("forward: sequence length " + std::to_string(embeddings.dim(0)) +
                          " exceeds max_seq_len " + std::to_string(cfg_.max_seq_len));
    }
    Tensor x = embeddings;
    for (const Block& b : blocks_) x = block_forward(b, x);
    x = layer_norm(x, final_ln_gain_, final_ln_bias_);
    return add_row_bias(matmul(x, head_w_), head_b_);
}

Tensor Decoder::loss(const Tensor& logits, const std::vector<std::size_t>& tokens,
                     const std::vector<bool>& target_mask) {
    const std::size_t T = logits.dim(0);
    if (tokens.size() != T || target_mask.size() != T) {
        throw ShapeError("loss: logits rows " + std::to_string(T) + " vs " +
                         std::to_string(tokens.size()) + " tokens");
    }
    // logits at t-1 predict the token at t
    std::vector<std::size_t> targets(T, 0);
    std::vector<bool> mask(T, false);
    for (std::size_t t = 1; t < T; ++t) {
        targets[t - 1] = tokens[t];
        mask[t - 1] = target_mask[t];
    }
    return cross_entropy(logits, targets, mask);
}

GenerateResult Decoder::generate(const MultimodalSequence& prompt,
                                 const std::vector<Tensor>& visual, std::size_t max_new) const {
    SplicedSequence base = embed_and_splice(prompt, visual);
    Tensor ctx = base.embeddings.detach(); // inference: no tape
    GenerateResult result;
    for (std::size_t step = 0; step < max_new; ++step) {
        const std::size_t T = ctx.dim(0);
        Tensor logits = forward(ctx);
        const double* row = &logits.data()[(T - 1) * cfg_.vocab];
        std::size_t best = 0;
        for (std::size_t j = 1; j < cfg_.vocab; ++j)
            if (row[j] > row[best]) best = j;
        if (best == Vocabulary::kEos) break;
        result.ids.push_back(best);
        if (T + 1 > cfg_.max_seq_len) {
            if (step + 1 < max_new) result.truncated = true; // budget cut generation short
            break;
        }
        Tensor next = add(embedding_lookup(token_embed_, {best}),
                          slice_rows(pos_embed_, T, T + 1));
        ctx = concat_rows({ctx, next.detach()}).detach();
    }
    return result;
}

std::vector<std::pair<std::string, Tensor>> Decoder::base_params() const {
    if (!initialized_) throw StateError("named_params: decoder has no weights");
    std::vector<std::pair<std::string, Tensor>> out;
    out.emplace_back("token_embed", token_embed_);
    out.emplace_back("pos_embed", pos_embed_);
    for (std::size_t l = 0; l < blocks_.size(); ++l) {
        const Block& b = blocks_[l];
        const std::string p = "layer" + std::to_string(l);
        out.emplace_back(p + ".ln1.gain", b.ln1_gain);
        out.emplace_back(p + ".ln1.bias", b.ln1_bias);
        out.emplace_back(p + ".attn.wq", b.wq);
        out.emplace_back(p + ".attn.bq", b.bq);
        out.emplace_back(p + ".attn.wk", b.wk);
        out.emplace_back(p + ".attn.wv", b.wv);
        out.emplace_back(p + ".attn.bv", b.bv);
        out.emplace_back(p + ".attn.wo", b.wo);
        out.emplace_back(p + ".attn.bo", b.bo);
        out.emplace_back(p + ".ln2.gain", b.ln2_gain);
        out.emplace_back(p + ".ln2.bias", b.ln2_bias);
        out.emplace_back(p + ".mlp.w1", b.mlp_w1);
        out.emplace_back(p + ".mlp.b1", b.mlp_b1);
        out.emplace_back(p + ".mlp.w2", b.mlp_w2);
        out.emplace_back(p + ".mlp.b2", b.mlp_b2);
    }
    out.emplace_back("final_ln.gain", final_ln_gain_);
    out.emplace_back("final_ln.bias", final_ln_bias_);
    out.emplace_back("head.w", head_w_);
    out.emplace_back("head.b", head_b_);
    return out;
}

std::vector<std::pair<std::string, Tensor>> Decoder::special_token_params() const {
    if (!initialized_) throw StateError("special_token_params: decoder has no weights");
    return {{"special.boi", boi_}, {"special.eoi", eoi_}};
}

std::vector<std::pair<std::string, Tensor>> Decoder::lora_params() const {
    std::vector<std::pair<std::string, Tensor>> out;
    for (std::size_t l = 0; l < blocks_.size(); ++l) {
        const std::string p = "layer" + std::to_string(l);
        if (blocks_[l].lora_q) {
            out.emplace_back(p + ".attn.lora_q.a", blocks_[l].lora_q->a);
            out.emplace_back(p + ".attn.lora_q.b", blocks_[l].lora_q->b);
        }
        if (blocks_[l].lora_v) {
            out.emplace_back(p + ".attn.lora_v.a", blocks_[l].lora_v->a);
            out.emplace_back(p + ".attn.lora_v.b", blocks_[l].lora_v->b);
        }
    }
    return out;
}

std::vector<std::pair<std::string, Tensor>> Decoder::named_params() const {
    auto out = base_params();
    for (auto& kv : special_token_params()) out.push_back(kv);
    for (auto& kv : lora_params()) out.push_back(kv);
    return out;
}

void Decoder::inject_lora(std::size_t rank, double alpha, std::uint64_t seed) {
    if (!initialized_) throw StateError("inject_lora: decoder has no weights");
    if (rank == 0) throw ConfigError("inject_lora: rank must be >= 1");
    Rng rng = Rng(seed).fork("lora");
    const std::size_t d = cfg_.width;
    const double scaling = alpha / static_cast<double>(rank);
    const double astd = 1.0 / std::sqrt(static_cast<double>(d));
    for (Block& b : blocks_) {
        // A gaussian, B zero: the delta starts exactly at zero
        b.lora_q = LoraPair{Tensor::randn({d, rank}, rng, 0.0, astd, true),
                            Tensor::zeros({rank, d}, true), scaling};
        b.lora_v = LoraPair{Tensor::randn({d, rank}, rng, 0.0, astd, true),
                            Tensor::zeros({rank, d}, true), scaling};
    }
    lora_injected_ = true;
    lora_rank_ = rank;
    lora_alpha_ = alpha;
}

} // namespace omnifuse
