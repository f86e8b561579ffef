#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "omnifuse/checkpoint.hpp"
#include "omnifuse/model.hpp"
#include "omnifuse/synth.hpp"

namespace omnifuse {

enum class Stage { Pretrain, Sft };

struct LoraSettings {
    std::size_t rank = 4;
    double alpha = 8.0;
};

/// True means the component's weights stay bit-identical through the stage.
struct FreezeFlags {
    bool encoders = true;
    bool adapter = false;
    bool special_tokens = false;
    bool lm = true; // stage 2 flips this (full fine-tune) or uses LoRA
};

struct TrainConfig {
    Stage stage = Stage::Pretrain;
    double lr = 0.0;            // 0: stage default (1e-3 pretrain, 2e-5 sft)
    std::size_t batch_size = 0; // 0: stage default (256 pretrain, 128 sft)
    double weight_decay = 0.0;
    std::size_t steps = 200;
    double warmup_frac = 0.03; // linear warmup into a constant schedule
    double clip_norm = 1.0;    // global-norm gradient clip; 0 disables
    std::optional<LoraSettings> lora;
    std::optional<FreezeFlags> freeze; // unset: stage defaults
    std::uint64_t seed = 0;
    /// Numeric profile. Verification needs finite-difference precision, so
    /// the engine computes in f64; the knob exists so other profiles are an
    /// explicit config decision rather than a silent behavior change.
    std::string precision = "f64";

    static constexpr double kPretrainLr = 1e-3;
    static constexpr double kSftLr = 2e-5;
    static constexpr std::size_t kPretrainBatch = 256;
    static constexpr std::size_t kSftBatch = 128;

    /// Fills stage defaults. Any deviation from the published values is
    /// reported through `note` rather than applied silently.
    void resolve(std::size_t dataset_size, const std::function<void(const std::string&)>& note);
};

/// Decoupled-weight-decay Adam over named parameter leaves.
class AdamW {
public:
    AdamW(std::vector<std::pair<std::string, Tensor>> params, double weight_decay,
          double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

    /// Applies one update from the gradients accumulated on the leaves,
    /// then clears them. Returns the pre-clip global gradient norm.
    double step(double lr, double clip_norm);

    std::size_t step_count() const { return t_; }
    const std::vector<std::pair<std::string, Tensor>>& params() const { return params_; }
    /// First/second moments by parameter name ("m"/"v" interleaved order).
    std::vector<std::pair<std::string, std::vector<double>>> moments() const;
    void load_moments(const Checkpoint& ckpt);

private:
    std::vector<std::pair<std::string, Tensor>> params_;
    std::vector<std::vector<double>> m_, v_;
    double weight_decay_, beta1_, beta2_, eps_;
    std::size_t t_ = 0;
};

struct TrainLogEntry {
    std::size_t step = 0;
    double loss = 0.0;
    double lr = 0.0;
    double grad_norm = 0.0;
};

struct TrainResult {
    std::vector<TrainLogEntry> log;
    std::vector<std::string> notes;
    Checkpoint checkpoint;
    double final_loss = 0.0; // mean loss of the last 10 steps
};

/// Stage 1: adapters and special tokens train; encoders and the language
/// model stay bit-identical. Rejects configs that unfreeze the LM or ask
/// for LoRA.
TrainResult run_stage1(OmniModel& model, const std::vector<SynthRecord>& data, TrainConfig cfg);

/// Stage 2: adapter + special tokens + language model (full fine-tune, or
/// LoRA factors only with the base LM bit-identical). Requires the stage-1
/// checkpoint.
TrainResult run_stage2(OmniModel& model, const std::vector<SynthRecord>& data, TrainConfig cfg,
                       const Checkpoint& stage1);

/// LoRA on its own, mirroring the two-step fine-tuning recipe.
void lora_inject(OmniModel& model, std::size_t rank, double alpha);

// Checkpoint plumbing shared by the stages and the CLI.
Checkpoint make_checkpoint(const OmniModel& model, const AdamW* opt, std::size_t step, int stage);
int checkpoint_stage(const Checkpoint& ckpt);
std::size_t checkpoint_step(const Checkpoint& ckpt);
/// Restores parameters (injecting LoRA first if the checkpoint carries
/// factors); rejects checkpoints from a different architecture.
void load_model_checkpoint(OmniModel& model, const Checkpoint& ckpt);

} // namespace omnifuse
