#pragma once

#include <string>
#include <vector>

#include "ptlm/adaptation.hpp"
#include "ptlm/model.hpp"
#include "ptlm/text_data.hpp"

// Perplexity evaluation and the strategy comparison table. Aggregation is
// token-weighted: exp(sum of NLLs / sum of predicted-token counts), not a
// mean of per-sentence perplexities. UNK is scored like any other token so
// numbers stay comparable across strategies sharing a vocabulary.

namespace ptlm {

struct PerplexityResult {
    std::string corpus_label;
    std::string strategy_label;
    std::size_t token_count = 0;
    double total_nll = 0.0;
    double perplexity = 0.0;  // exp(total_nll / token_count)
};

// Total negative log-likelihood of one raw (unframed) sentence and the
// number of predicted tokens, which is len + 1: each word plus EOS, with BOS
// never a target. Accumulated in double regardless of model precision.
std::pair<double, std::size_t> sentence_nll(const ParameterSet& params, const SoftPrompt* prompt,
                                            const std::vector<int>& sentence_ids);

PerplexityResult corpus_perplexity(const ParameterSet& params, const SoftPrompt* prompt,
                                   const TokenizedCorpus& corpus);

struct ComparisonRow {
    std::string strategy;  // none | prompt_tune | fine_tune
    int prompt_size = -1;  // -1 where a prompt does not apply; serialized empty
    std::size_t trainable_params = 0;
    double trainable_fraction = 0.0;
    double wall_time_seconds = 0.0;
    double dev_perplexity = 0.0;
    double test_perplexity = 0.0;
};

// Scores every adaptation run on the test corpus and orders rows
// none, prompt_tune by ascending P, fine_tune. Prompt artifacts carrying a
// base hash must match base_hash; a prompt with an empty hash (never
// trained) is accepted as unverifiable. Fine-tuned parameter sets must share
// the base configuration.
std::vector<ComparisonRow> compare_strategies(const ParameterSet& base, const std::string& base_hash,
                                              const std::vector<AdaptationRun>& runs,
                                              const TokenizedCorpus& test_corpus);

// CSV with header strategy,prompt_size,trainable_params,trainable_fraction,
// wall_time_s,dev_ppl,test_ppl.
std::string comparison_csv(const std::vector<ComparisonRow>& rows);

}  // namespace ptlm
