#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ptlm/eval.hpp"
#include "ptlm/rescore.hpp"

// Experiment orchestration behind the command-line tool: corpus generation,
// base-model pretraining, domain adaptation, the prompt-size ablation sweep,
// and n-best rescoring. Every command is a function of the config file plus
// its seeds, so repeated runs write identical artifacts; wall-clock timings
// are quarantined in a separate costs file to keep the main outputs stable.

namespace ptlm {

struct DataConfig {
    std::vector<std::string> pretrain_grammars;  // mixed into the generic corpus
    std::vector<double> pretrain_mix;  // sentence share per grammar; empty means equal shares
    std::string adapt_grammar;
    int pretrain_sentences = 20000;
    int adapt_sentences = 5000;
    int vocab_min_freq = 1;
    int vocab_max_size = 512;
    SplitFractions fractions;
};

struct TrainingConfig {
    int batch_size = 16;
    int patience = 3;
    int pretrain_max_epochs = 10;
    float pretrain_learning_rate = 1e-3f;
    int adapt_max_epochs = 50;
    float prompt_learning_rate = kPromptLearningRate;
    float fine_tune_learning_rate = kFineTuneLearningRate;
    std::string prompt_init = "random";
};

struct RescoreConfigSection {
    int n_hyps = 10;
    double noise_sd = 0.5;
    int dev_utterances = 200;
    int test_utterances = 500;
    int prompt_size = 10;  // which prompt artifact the rescorer loads
    std::vector<double> lambda_grid{0.0};
    std::vector<double> mu_grid{0.0};
    std::string stopword_file;  // empty: built-in default list
};

// Every stream of randomness is pinned in the config; there are no
// wall-clock defaults anywhere.
struct SeedConfig {
    std::uint64_t data = 0;
    std::uint64_t pretrain = 0;
    std::uint64_t adapt = 0;
    std::uint64_t nbest = 0;
};

struct ExperimentConfig {
    ModelConfig model;  // vocab_size is derived from the corpus, not configured
    DataConfig data;
    std::vector<std::string> strategies{"none", "prompt_tune", "fine_tune"};
    std::vector<int> prompt_sizes;
    TrainingConfig training;
    RescoreConfigSection rescore;
    SeedConfig seeds;
    std::string out_dir = "out";
    bool strict_hash = false;

    // Collects every problem into one ValidationError instead of stopping at
    // the first.
    void validate() const;
};

// Parses the JSON config text; unknown keys are errors so typos cannot
// silently fall back to defaults. parse + validate.
ExperimentConfig config_from_json(const std::string& text);
ExperimentConfig load_config(const std::string& path);

// Where a config's artifacts live under out_dir.
struct OutPaths {
    std::string root;
    std::string data_dir;
    std::string runs_dir;
    std::string adapt_corpus;
    std::string nbest_dev;
    std::string nbest_test;
    std::string base_checkpoint;
    std::string base_hash_file;
    std::string vocab_file;
    std::string ablation_csv;
    std::string ablation_costs_csv;
    std::string summary_md;
    std::string rescore_csv;

    std::string pretrain_corpus(const std::string& grammar) const;
    std::string prompt_artifact(int prompt_size) const;
    std::string fine_tune_artifact() const;
};

OutPaths out_paths(const ExperimentConfig& config);

// One grammar sample written as one sentence per line.
void write_corpus_file(const std::string& grammar_name, int n, std::uint64_t seed,
                       const std::string& path);

struct GenReport {
    std::vector<std::string> files;  // paths written, in write order
};

// Generates every input artifact the experiment needs: the mixed pretrain
// corpus, the adaptation corpus, and synthetic dev/test n-best lists drawn
// from the adaptation grammar.
GenReport cmd_gen(const ExperimentConfig& config);

struct PretrainReport {
    std::string checkpoint_path;
    std::string vocab_path;
    std::string hash;  // content digest of the written checkpoint
    int vocab_size = 0;
    int epochs_run = 0;
    double dev_perplexity = 0.0;
    double wall_time_seconds = 0.0;
};

// Trains the generic base LM on the mixed corpus and saves checkpoint,
// vocabulary, and hash file.
PretrainReport cmd_pretrain(const ExperimentConfig& config);

struct AdaptReport {
    std::string strategy;
    int prompt_size = -1;  // -1 where no prompt applies
    std::string artifact_path;  // empty for strategy none
    TrainReport train_report;
    double test_perplexity = 0.0;
};

// Runs one adaptation strategy against the saved base and writes its
// artifact under runs/.
AdaptReport cmd_adapt(const ExperimentConfig& config, const AdaptStrategy& strategy);

// Perplexity of the base model (artifact_path empty), a prompt artifact
// (.ptpx), or a fine-tuned checkpoint (.ptlm) on one adaptation-corpus split.
PerplexityResult cmd_eval(const ExperimentConfig& config, const std::string& artifact_path,
                          const std::string& split);

struct AblationCell {
    std::string strategy;
    int prompt_size = -1;
    bool ok = false;
    std::string error;  // set when ok is false; the sweep continues past failures
    ComparisonRow row;  // meaningful when ok
};

struct AblateReport {
    std::vector<AblationCell> cells;  // spec order: none, prompts ascending, fine_tune
    std::string csv_path;
    std::string costs_csv_path;
    std::string summary_path;
    bool all_ok = false;
};

// The prompt-size sweep: none, prompt_tune at each configured size, and
// fine_tune, each scored on the adaptation test split. Deterministic results
// go to ablation.csv and summary.md; wall-clock costs go to the sidecar.
AblateReport cmd_ablate(const ExperimentConfig& config);

struct RescoreRunReport {
    std::vector<RescoreReportRow> rows;  // am_only first, then per configured strategy
    std::string csv_path;
};

// Tunes (lambda, mu) per strategy on the dev n-best and reports test CWER
// against the shared acoustic-only baseline.
RescoreRunReport cmd_rescore(const ExperimentConfig& config);

}  // namespace ptlm
