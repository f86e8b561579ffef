#include "omnifuse/trainer.hpp"

#include <cmath>

#include "omnifuse/errors.hpp"

namespace omnifuse {

namespace {

constexpr const char* kMetaName = "__meta__";
constexpr const char* kLoraMetaName = "__lora__";

FreezeFlags stage_default_freeze(Stage stage, bool lora) {
    FreezeFlags f;
    f.encoders = true;
    f.adapter = false;
    f.special_tokens = false;
    f.lm = stage == Stage::Pretrain ? true : lora; // LoRA keeps the base LM frozen
    return f;
}

std::vector<std::pair<std::string, Tensor>> trainable_set(OmniModel& model,
                                                          const FreezeFlags& freeze,
                                                          bool lora_active) {
    std::vector<std::pair<std::string, Tensor>> out;
    if (!freeze.adapter) {
        for (auto& [name, t] : model.adapter().named_params())
            out.emplace_back("adapter." + name, t);
    }
    if (!freeze.special_tokens) {
        for (auto& kv : model.decoder().special_token_params()) out.push_back(kv);
    }
    if (!freeze.lm) {
        for (auto& [name, t] : model.decoder().base_params())
            out.emplace_back("decoder." + name, t);
    }
    if (lora_active) {
        for (auto& [name, t] : model.decoder().lora_params())
            out.emplace_back("decoder." + name, t);
    }
    return out;
}

double mean_tail(const std::vector<TrainLogEntry>& log, std::size_t window) {
    if (log.empty()) return 0.0;
    const std::size_t n = std::min(window, log.size());
    double s = 0.0;
    for (std::size_t i = log.size() - n; i < log.size(); ++i) s += log[i].loss;
    return s / static_cast<double>(n);
}

TrainResult run_training(OmniModel& model, const std::vector<SynthRecord>& data, TrainConfig cfg,
                         int stage_tag) {
    if (data.empty()) throw ContractError("training: empty dataset");

    TrainResult result;
    auto note = [&result](const std::string& s) { result.notes.push_back(s); };
    cfg.resolve(data.size(), note);

    const bool lora_active = cfg.lora.has_value();
    FreezeFlags freeze = cfg.freeze.value_or(stage_default_freeze(cfg.stage, lora_active));
    if (!freeze.encoders) {
        throw ConfigError("training: encoders are kept frozen in every stage");
    }
    if (cfg.stage == Stage::Pretrain && !freeze.lm) {
        throw ConfigError("stage 1 pretrains adapters and special tokens only; "
                          "the language model must stay frozen");
    }
    if (lora_active && freeze.lm == false) {
        throw ConfigError("training: LoRA and a full LM unfreeze are mutually exclusive");
    }

    // freeze contract enforced at the autodiff level: frozen leaves record
    // no gradients at all
    for (auto& [name, t] : model.named_params()) {
        (void)name;
        Tensor copy = t;
        copy.set_requires_grad(false);
    }
    auto trainables = trainable_set(model, freeze, lora_active);
    if (trainables.empty()) throw ConfigError("training: nothing to train under these freeze flags");
    for (auto& [name, t] : trainables) {
        (void)name;
        Tensor copy = t;
        copy.set_requires_grad(true);
    }

    // frozen encoders: features are constant across steps, encode once
    std::vector<EncodedViews> cached;
    cached.reserve(data.size());
    for (const auto& rec : data)
        cached.push_back(model.encode_views(rec.image, model.tiling().enabled));

    AdamW opt(trainables, cfg.weight_decay);
    const std::size_t warmup =
        std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(cfg.warmup_frac *
                                                                    static_cast<double>(cfg.steps))));
    Rng batch_rng = Rng(cfg.seed).fork("batches");

    for (std::size_t step = 0; step < cfg.steps; ++step) {
        double batch_loss = 0.0;
        const double inv_b = 1.0 / static_cast<double>(cfg.batch_size);
        for (std::size_t b = 0; b < cfg.batch_size; ++b) {
            const std::size_t idx = batch_rng.index(data.size());
            const SynthRecord& rec = data[idx];
            MultimodalSequence seq = model.build_sequence(rec.prompt, rec.reference);
            Tensor visual = model.visual_from_views(cached[idx]);
            SplicedSequence s = model.decoder().embed_and_splice(seq, {visual});
            Tensor loss = Decoder::loss(model.decoder().forward(s.embeddings), s.tokens,
                                        s.target_mask);
            batch_loss += loss.item() * inv_b;
            backward(scale(loss, inv_b)); // grads accumulate across the batch
        }
        const double lr_now =
            cfg.lr * (step < warmup ? static_cast<double>(step + 1) / static_cast<double>(warmup)
                                    : 1.0);
        const double gnorm = opt.step(lr_now, cfg.clip_norm);
        result.log.push_back({step, batch_loss, lr_now, gnorm});
    }

    result.final_loss = mean_tail(result.log, 10);
    result.checkpoint = make_checkpoint(model, &opt, cfg.steps, stage_tag);
    return result;
}

} // namespace

void TrainConfig::resolve(std::size_t dataset_size,
                          const std::function<void(const std::string&)>& note) {
    const double default_lr = stage == Stage::Pretrain ? kPretrainLr : kSftLr;
    const std::size_t default_batch = stage == Stage::Pretrain ? kPretrainBatch : kSftBatch;
    if (lr == 0.0) lr = default_lr;
    if (batch_size == 0) batch_size = default_batch;
    if (lr != default_lr) {
        note("lr " + std::to_string(lr) + " overrides the published default " +
             std::to_string(default_lr));
    }
    if (batch_size != default_batch) {
        note("batch size " + std::to_string(batch_size) + " scales down the published default " +
             std::to_string(default_batch) + " (desk profile)");
    }
    if (steps == 0) throw ConfigError("training: steps must be >= 1");
    if (batch_size > 16 * dataset_size) {
        note("batch size exceeds 16x the dataset; samples will repeat heavily");
    }
    if (warmup_frac < 0.0 || warmup_frac >= 1.0) {
        throw ConfigError("training: warmup_frac must be in [0, 1)");
    }
    if (precision != "f64") {
        throw ConfigError("training: unsupported precision profile '" + precision +
                          "' (this build computes in f64)");
    }
    if (lora && lora->rank == 0) throw ConfigError("training: lora rank must be >= 1");
}

AdamW::AdamW(std::vector<std::pair<std::string, Tensor>> params, double weight_decay, double beta1,
             double beta2, double eps)
    : params_(std::move(params)), weight_decay_(weight_decay), beta1_(beta1), beta2_(beta2),
      eps_(eps) {
    for (auto& [name, t] : params_) {
        (void)name;
        m_.emplace_back(t.size(), 0.0);
        v_.emplace_back(t.size(), 0.0);
    }
}

double AdamW::step(double lr, double clip_norm) {
    ++t_;
    double sq = 0.0;
    for (auto& [name, t] : params_) {
        (void)name;
        if (!t.has_grad()) continue;
        for (double g : t.grad()) sq += g * g;
    }
    const double norm = std::sqrt(sq);
    const double scale = (clip_norm > 0.0 && norm > clip_norm) ? clip_norm / norm : 1.0;

    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
        Tensor& t = params_[i].second;
        auto& data = t.mutable_data();
        const bool has = t.has_grad();
        for (std::size_t j = 0; j < data.size(); ++j) {
            const double g = has ? t.grad()[j] * scale : 0.0;
            m_[i][j] = beta1_ * m_[i][j] + (1.0 - beta1_) * g;
            v_[i][j] = beta2_ * v_[i][j] + (1.0 - beta2_) * g * g;
            const double mhat = m_[i][j] / bc1;
            const double vhat = v_[i][j] / bc2;
            data[j] -= lr * (mhat / (std::sqrt(vhat) + eps_) + weight_decay_ * data[j]);
        }
        t.zero_grad();
    }
    return norm;
}

std::vector<std::pair<std::string, std::vector<double>>> AdamW::moments() const {
    std::vector<std::pair<std::string, std::vector<double>>> out;
    for (std::size_t i = 0; i < params_.size(); ++i) {
        out.emplace_back("opt.m." + params_[i].first, m_[i]);
        out.emplace_back("opt.v." + params_[i].first, v_[i]);
    }
    return out;
}

void AdamW::load_moments(const Checkpoint& ckpt) {
    for (std::size_t i = 0; i < params_.size(); ++i) {
        m_[i] = ckpt.values_of("opt.m." + params_[i].first);
        v_[i] = ckpt.values_of("opt.v." + params_[i].first);
        if (m_[i].size() != params_[i].second.size() || v_[i].size() != params_[i].second.size()) {
            throw ShapeError("optimizer moments for '" + params_[i].first + "' have the wrong size");
        }
    }
}

Checkpoint make_checkpoint(const OmniModel& model, const AdamW* opt, std::size_t step, int stage) {
    Checkpoint ckpt;
    const std::uint64_t fp = model.fingerprint();
    ckpt.put_values(kMetaName, {7},
                    {1.0, static_cast<double>(step), static_cast<double>(stage),
                     static_cast<double>(fp & 0xffff), static_cast<double>((fp >> 16) & 0xffff),
                     static_cast<double>((fp >> 32) & 0xffff),
                     static_cast<double>((fp >> 48) & 0xffff)});
    if (model.decoder().has_lora()) {
        ckpt.put_values(kLoraMetaName, {2},
                        {static_cast<double>(model.decoder().lora_rank()),
                         model.decoder().lora_alpha()});
    }
    for (const auto& [name, t] : model.named_params()) ckpt.put(name, t);
    if (opt) {
        for (const auto& [name, values] : opt->moments()) {
            const auto& ref = values;
            Shape shape{ref.size()};
            ckpt.put_values(name, shape, ref);
        }
    }
    return ckpt;
}

int checkpoint_stage(const Checkpoint& ckpt) {
    return static_cast<int>(ckpt.values_of(kMetaName).at(2));
}

std::size_t checkpoint_step(const Checkpoint& ckpt) {
    return static_cast<std::size_t>(ckpt.values_of(kMetaName).at(1));
}

void load_model_checkpoint(OmniModel& model, const Checkpoint& ckpt) {
    const auto meta = ckpt.values_of(kMetaName);
    if (meta.size() != 7 || meta[0] != 1.0) {
        throw FormatError("checkpoint: unsupported meta record");
    }
    const std::uint64_t fp = model.fingerprint();
    const double want[4] = {static_cast<double>(fp & 0xffff), static_cast<double>((fp >> 16) & 0xffff),
                            static_cast<double>((fp >> 32) & 0xffff),
                            static_cast<double>((fp >> 48) & 0xffff)};
    for (int i = 0; i < 4; ++i) {
        if (meta[static_cast<std::size_t>(3 + i)] != want[i]) {
            throw ConfigError("checkpoint was produced by a different model configuration");
        }
    }
    if (ckpt.has(kLoraMetaName) && !model.decoder().has_lora()) {
        const auto lm = ckpt.values_of(kLoraMetaName);
        model.decoder().inject_lora(static_cast<std::size_t>(lm.at(0)), lm.at(1), model.seed());
    }
    for (auto& [name, t] : model.named_params()) {
        // a LoRA-free (base) checkpoint may be loaded into an injected
        // model; the factors keep their current values
        if (name.find(".lora_") != std::string::npos && !ckpt.has(name)) continue;
        ckpt.load_into(name, t);
    }
}

void lora_inject(OmniModel& model, std::size_t rank, double alpha) {
    model.decoder().inject_lora(rank, alpha, model.seed());
}

TrainResult run_stage1(OmniModel& model, const std::vector<SynthRecord>& data, TrainConfig cfg) {
    if (cfg.stage != Stage::Pretrain) throw ConfigError("run_stage1: cfg.stage must be pretrain");
    if (cfg.lora) throw ConfigError("run_stage1: LoRA belongs to stage 2");
    return run_training(model, data, cfg, 1);
}

TrainResult run_stage2(OmniModel& model, const std::vector<SynthRecord>& data, TrainConfig cfg,
                       const Checkpoint& stage1) {
    if (cfg.stage != Stage::Sft) throw ConfigError("run_stage2: cfg.stage must be sft");
    if (checkpoint_stage(stage1) != 1) {
        throw ContractError("run_stage2: expected a stage-1 checkpoint, got stage " +
                            std::to_string(checkpoint_stage(stage1)));
    }
    load_model_checkpoint(model, stage1);
    if (cfg.lora && !model.decoder().has_lora()) lora_inject(model, cfg.lora->rank, cfg.lora->alpha);
    return run_training(model, data, cfg, 2);
}

} // namespace omnifuse
