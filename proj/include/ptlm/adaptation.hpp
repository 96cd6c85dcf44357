#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "ptlm/model.hpp"
#include "ptlm/text_data.hpp"

// Domain adaptation of a frozen base model. Two routes share one training
// loop: prompt tuning learns only a P x d prefix of embedding rows, full
// fine-tuning updates every base parameter on a private copy. The base
// parameter set is never mutated by either route.

namespace ptlm {

inline constexpr float kPromptLearningRate = 1e-2f;
inline constexpr float kFineTuneLearningRate = 3e-4f;

struct SoftPrompt {
    std::string domain;
    int prompt_len = 0;  // P, rows of the prefix
    int d_model = 0;
    Tensor matrix;  // P x d_model
    std::string base_model_hash;  // checkpoint digest of the base this prompt was trained against
    std::string init_mode;        // random | frequent_words | vocab_sample
    std::uint64_t seed = 0;
    std::string init_note;  // records e.g. the frequent_words fallback, empty otherwise

    SoftPrompt() : matrix(Tensor::zeros({0, 0})) {}
};

struct AdaptStrategy {
    enum class Kind { kNone, kFineTune, kPromptTune };

    Kind kind = Kind::kNone;
    int prompt_len = 0;           // prompt_tune only
    std::string init_mode = "random";  // prompt_tune only

    static AdaptStrategy none() { return {}; }
    static AdaptStrategy fine_tune() { return {Kind::kFineTune, 0, ""}; }
    static AdaptStrategy prompt_tune(int prompt_len, std::string init_mode = "random") {
        return {Kind::kPromptTune, prompt_len, std::move(init_mode)};
    }

    std::string label() const {
        switch (kind) {
            case Kind::kFineTune: return "fine_tune";
            case Kind::kPromptTune: return "prompt_tune";
            default: return "none";
        }
    }

    void validate() const;
};

struct Hyperparams {
    float learning_rate = kPromptLearningRate;
    float beta1 = 0.9f;
    float beta2 = 0.999f;
    float epsilon = 1e-8f;
    int batch_size = 16;
    int max_epochs = 50;
    int patience = 3;  // stop after this many epochs without dev improvement
    std::uint64_t seed = 0;

    void validate() const;
};

// Defaults with the learning rate matched to the strategy: the tiny prompt
// surface tolerates a much larger step than full fine-tuning.
Hyperparams default_hyperparams(const AdaptStrategy& strategy);

struct TrainReport {
    std::size_t trainable_param_count = 0;
    std::size_t total_param_count = 0;
    double trainable_fraction = 0.0;  // trainable / total, exactly
    int epochs_run = 0;
    double wall_time_seconds = 0.0;
    double best_dev_perplexity = 0.0;
    std::vector<double> dev_perplexity_trace;  // one entry per epoch run

    // Analytic peak-memory cost: each trainable value plus its two Adam
    // moments. Deterministic, unlike an RSS reading.
    std::size_t peak_memory_values() const { return 3 * trainable_param_count; }
};

// Per-tensor Adam moments; sized lazily to match the tensor on first step.
struct AdamSlot {
    std::vector<float> m;
    std::vector<float> v;
};

// One bias-corrected Adam update in place. A tensor with no gradient buffer
// is treated as zero gradient: the value still moves while moments decay.
void adam_step(Tensor& value, AdamSlot& slot, const Hyperparams& hyper, long long step_index);

// Builds the initial prompt matrix. random draws Normal(0, 0.02);
// frequent_words copies base embedding rows of the P most frequent
// non-reserved train tokens (frequency desc, ties lexicographic), topping up
// from vocab_sample when the corpus has fewer distinct tokens than P (noted
// in init_note); vocab_sample picks P distinct non-reserved vocabulary
// tokens uniformly. base_model_hash is left empty here; train() fills it.
SoftPrompt init_prompt(const std::string& mode, int prompt_len, const ParameterSet& base,
                       const TokenizedCorpus& train_corpus, std::uint64_t seed);

struct AdaptationRun {
    AdaptStrategy strategy;
    ParameterSet params;  // fine_tune: the trained copy; otherwise shares the base
    std::optional<SoftPrompt> prompt;  // set for prompt_tune only
    TrainReport report;
};

// Runs the strategy against a frozen base. none short-circuits to a dev
// evaluation; the other two train with early stopping on dev perplexity and
// return the best-epoch artifact.
AdaptationRun train(const ParameterSet& base, const AdaptStrategy& strategy,
                    const TokenizedCorpus& train_corpus, const TokenizedCorpus& dev_corpus,
                    const Hyperparams& hyper);

// Fraction of base-model parameters the strategy trains: fine_tune 1.0,
// none 0.0, prompt_tune P*d / total.
double trainable_fraction(const AdaptStrategy& strategy, const ModelConfig& config);

// Prompt artifact file: magic "PTPX", u32 version, u32 header length, JSON
// header, then the P x d float32 little-endian row-major payload.
void save_prompt(const SoftPrompt& prompt, const std::string& path);

SoftPrompt load_prompt(const std::string& path);

// Loads and verifies the prompt against the digest of the base checkpoint it
// will run with. On mismatch: strict raises CompatError naming both digests,
// otherwise the prompt is returned and *warning describes the mismatch.
SoftPrompt load_prompt(const std::string& path, const std::string& base_hash, bool strict,
                       std::string* warning = nullptr);

}  // namespace ptlm
