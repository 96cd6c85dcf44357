#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "ptlm/eval.hpp"
#include "ptlm/text_data.hpp"

// N-best rescoring with a language model on top of acoustic scores, the
// WER/CWER metrics behind the experiment, and a synthetic n-best generator
// standing in for a real speech recognizer at desk scale. Hypotheses are
// combined log-linearly: am + lambda * lm + mu * token_count.

namespace ptlm {

struct Hypothesis {
    std::string text;
    double am_score = 0.0;  // log-domain acoustic score
};

struct NBestEntry {
    std::string id;
    std::string ref;  // reference transcript
    std::vector<Hypothesis> hyps;

    void validate() const;  // at least one hypothesis, finite scores
};

struct RescoreConfig {
    double lm_weight = 0.0;     // lambda
    double length_bonus = 0.0;  // mu, per token, may be negative
    std::vector<double> lambda_grid{0.0};
    std::vector<double> mu_grid{0.0};

    void validate() const;
};

struct ErrorCounts {
    std::size_t substitutions = 0;
    std::size_t deletions = 0;
    std::size_t insertions = 0;
    std::size_t reference_length = 0;

    std::size_t total() const { return substitutions + deletions + insertions; }
    double rate() const;  // total / reference_length
};

// Fixed function-word list used to separate content words for CWER; kept
// sorted so the documented list and the code cannot drift apart.
const std::vector<std::string>& default_stopwords();
std::unordered_set<std::string> default_stopword_set();

// One token per line; blank lines ignored.
std::unordered_set<std::string> load_stopwords(const std::string& path);

// Total log probability of the text including EOS, i.e. -sentence_nll.
double lm_logprob(const ParameterSet& params, const SoftPrompt* prompt, const Vocab& vocab,
                  const std::string& text);

double combined_score(double am_score, double lm_logprob, std::size_t token_count, double lambda,
                      double mu);

// LM scores are the expensive part, so they are computed once per
// hypothesis and reused across every (lambda, mu) the tuner visits.
struct ScoredHypothesis {
    double am = 0.0;
    double lm = 0.0;
    std::size_t token_count = 0;
};

std::vector<ScoredHypothesis> score_entry(const ParameterSet& params, const SoftPrompt* prompt,
                                          const Vocab& vocab, const NBestEntry& entry);

// Argmax of the combined score; exact ties go to the lowest index.
std::size_t select_best_scored(const std::vector<ScoredHypothesis>& scored, double lambda, double mu);
std::size_t select_best(const NBestEntry& entry, const ParameterSet& params, const SoftPrompt* prompt,
                        const Vocab& vocab, const RescoreConfig& config);

// Minimum-edit-distance alignment with unit costs, split into counts.
// Example: ref [large fries please] vs hyp [large fry please] is one
// substitution, rate 1/3.
ErrorCounts wer(const std::vector<std::string>& ref, const std::vector<std::string>& hyp);

// Stopwords are removed from both sequences first; the reference must keep
// at least one content token or the rate is undefined. Example: ref
// [i want a large fries] vs hyp [i want large fry] with stopwords
// {i, want, a} compares [large fries] against [large fry], one substitution,
// rate 1/2. A hypothesis differing from the reference only by stopwords
// scores zero, and with no stopwords at all cwer equals wer.
ErrorCounts cwer(const std::vector<std::string>& ref, const std::vector<std::string>& hyp,
                 const std::unordered_set<std::string>& stopwords);

struct RescoreOutcome {
    double lambda = 0.0;
    double mu = 0.0;
    double system_cwer = 0.0;
    double system_wer = 0.0;
    double baseline_cwer = 0.0;  // acoustic scores alone (lambda = mu = 0)
    double baseline_wer = 0.0;
    double relative_improvement_pct = 0.0;  // (baseline - system) / baseline on CWER
    std::size_t utterances = 0;
};

// Corpus metrics are token-weighted: total errors over total (content)
// reference length across the chosen hypotheses.
RescoreOutcome evaluate_rescoring(const std::vector<NBestEntry>& entries, const ParameterSet& params,
                                  const SoftPrompt* prompt, const Vocab& vocab,
                                  const RescoreConfig& config,
                                  const std::unordered_set<std::string>& stopwords);

// Exhaustive grid search minimizing dev CWER; ties prefer smaller lambda,
// then smaller mu.
std::pair<double, double> tune_weights(const std::vector<NBestEntry>& dev, const ParameterSet& params,
                                       const SoftPrompt* prompt, const Vocab& vocab,
                                       const RescoreConfig& grids,
                                       const std::unordered_set<std::string>& stopwords);

using ConfusionTable = std::map<std::string, std::vector<std::string>>;

// Pairs every distinct content word with the others within the given
// character edit distance, mimicking near-homophone recognizer errors
// (burger/burgers, bill/bills).
ConfusionTable confusion_from_vocabulary(const std::vector<std::vector<std::string>>& sentences,
                                         const std::unordered_set<std::string>& stopwords,
                                         std::size_t max_edit_distance = 2);

// Synthesizes n_hyps hypotheses per sentence: the verbatim transcript plus
// corruptions with k ~ uniform{0..3} content words swapped through the
// confusion table. am_score = -k_actual + Normal(0, noise_sd), so with no
// noise the acoustic score alone already ranks the verbatim first.
std::vector<NBestEntry> synth_nbest(const std::vector<std::vector<std::string>>& sentences,
                                    const ConfusionTable& confusion, int n_hyps, double noise_sd,
                                    std::uint64_t seed,
                                    const std::unordered_set<std::string>& stopwords);

// JSON Lines, one utterance per line:
// {"id": ..., "ref": ..., "hyps": [{"text": ..., "am": ...}, ...]}
void save_nbest(const std::vector<NBestEntry>& entries, const std::string& path);
std::vector<NBestEntry> load_nbest(const std::string& path);

struct RescoreReportRow {
    std::string system;
    double lambda = 0.0;
    double mu = 0.0;
    double cwer = 0.0;
    double wer = 0.0;
    double rel_improvement_pct = 0.0;
};

// CSV with header system,lambda,mu,cwer,wer,rel_improvement_pct.
std::string rescore_report_csv(const std::vector<RescoreReportRow>& rows);

}  // namespace ptlm
