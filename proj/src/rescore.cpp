#include "ptlm/rescore.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

namespace ptlm {

void NBestEntry::validate() const {
    if (hyps.empty()) throw ValidationError("n-best entry '" + id + "' has no hypotheses");
    for (const auto& h : hyps)
        if (!std::isfinite(h.am_score))
            throw ValidationError("n-best entry '" + id + "' has a non-finite acoustic score");
}

void RescoreConfig::validate() const {
    std::vector<std::string> problems;
    if (lm_weight < 0) problems.push_back("lm_weight must be >= 0");
    if (!std::isfinite(lm_weight) || !std::isfinite(length_bonus))
        problems.push_back("weights must be finite");
    if (lambda_grid.empty()) problems.push_back("lambda grid is empty");
    if (mu_grid.empty()) problems.push_back("mu grid is empty");
    for (double v : lambda_grid)
        if (!std::isfinite(v) || v < 0) {
            problems.push_back("lambda grid entries must be finite and >= 0");
            break;
        }
    for (double v : mu_grid)
        if (!std::isfinite(v)) {
            problems.push_back("mu grid entries must be finite");
            break;
        }
    if (!problems.empty()) {
        std::string msg = "rescore config";
        for (std::size_t i = 0; i < problems.size(); ++i) msg += (i == 0 ? ": " : "; ") + problems[i];
        throw ValidationError(msg);
    }
}

double ErrorCounts::rate() const {
    if (reference_length == 0)
        throw ContractError("error rate undefined over a zero-length reference");
    return static_cast<double>(total()) / static_cast<double>(reference_length);
}

const std::vector<std::string>& default_stopwords() {
    static const std::vector<std::string> words{
        "a",       "about",   "above",  "after",  "again",   "all",    "am",      "an",
        "and",     "any",     "are",    "as",     "at",      "be",     "because", "been",
        "before",  "being",   "below",  "between", "both",   "but",    "by",      "can",
        "could",   "did",     "do",     "does",   "doing",   "down",   "during",  "each",
        "few",     "for",     "from",   "further", "had",    "has",    "have",    "having",
        "he",      "her",     "here",   "hers",   "him",     "his",    "how",     "i",
        "if",      "in",      "into",   "is",     "it",      "its",    "just",    "me",
        "more",    "most",    "my",     "no",     "nor",     "not",    "now",     "of",
        "off",     "on",      "once",   "only",   "or",      "other",  "our",     "ours",
        "out",     "over",    "own",    "same",   "she",     "should", "so",      "some",
        "such",    "than",    "that",   "the",    "their",   "them",   "then",    "there",
        "these",   "they",    "this",   "those",  "through", "to",     "too",     "under",
        "until",   "up",      "very",   "was",    "we",      "were",   "what",    "when",
        "where",   "which",   "while",  "who",    "whom",    "why",    "will",    "with",
        "would",   "you",     "your",   "yours"};
    return words;
}

std::unordered_set<std::string> default_stopword_set() {
    const auto& words = default_stopwords();
    return {words.begin(), words.end()};
}

std::unordered_set<std::string> load_stopwords(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InputError("cannot open stopword file " + path);
    std::unordered_set<std::string> out;
    std::string line;
    while (std::getline(in, line)) {
        for (const auto& token : tokenize(line)) out.insert(token);
    }
    return out;
}

double lm_logprob(const ParameterSet& params, const SoftPrompt* prompt, const Vocab& vocab,
                  const std::string& text) {
    const std::vector<std::string> tokens = tokenize(text);
    if (tokens.empty()) throw InputError("lm_logprob: no tokens in text");
    const auto [nll, count] = sentence_nll(params, prompt, encode(vocab, tokens));
    (void)count;
    return -nll;
}

double combined_score(double am_score, double lm_logprob, std::size_t token_count, double lambda,
                      double mu) {
    return am_score + lambda * lm_logprob + mu * static_cast<double>(token_count);
}

std::vector<ScoredHypothesis> score_entry(const ParameterSet& params, const SoftPrompt* prompt,
                                          const Vocab& vocab, const NBestEntry& entry) {
    entry.validate();
    std::vector<ScoredHypothesis> scored;
    scored.reserve(entry.hyps.size());
    for (const auto& h : entry.hyps) {
        ScoredHypothesis s;
        s.am = h.am_score;
        s.token_count = tokenize(h.text).size();
        s.lm = lm_logprob(params, prompt, vocab, h.text);
        scored.push_back(s);
    }
    return scored;
}

std::size_t select_best_scored(const std::vector<ScoredHypothesis>& scored, double lambda, double mu) {
    if (scored.empty()) throw InputError("select_best: no hypotheses to choose from");
    std::size_t best = 0;
    double best_score = combined_score(scored[0].am, scored[0].lm, scored[0].token_count, lambda, mu);
    for (std::size_t i = 1; i < scored.size(); ++i) {
        const double s = combined_score(scored[i].am, scored[i].lm, scored[i].token_count, lambda, mu);
        if (s > best_score) {
            best = i;
            best_score = s;
        }
    }
    return best;
}

std::size_t select_best(const NBestEntry& entry, const ParameterSet& params, const SoftPrompt* prompt,
                        const Vocab& vocab, const RescoreConfig& config) {
    config.validate();
    return select_best_scored(score_entry(params, prompt, vocab, entry), config.lm_weight,
                              config.length_bonus);
}

ErrorCounts wer(const std::vector<std::string>& ref, const std::vector<std::string>& hyp) {
    if (ref.empty()) throw InputError("wer: empty reference makes the rate undefined");
    const std::size_t m = ref.size();
    const std::size_t n = hyp.size();

    // dp[i][j] = edit distance between ref[0..i) and hyp[0..j)
    std::vector<std::vector<std::size_t>> dp(m + 1, std::vector<std::size_t>(n + 1, 0));
    for (std::size_t i = 0; i <= m; ++i) dp[i][0] = i;
    for (std::size_t j = 0; j <= n; ++j) dp[0][j] = j;
    for (std::size_t i = 1; i <= m; ++i)
        for (std::size_t j = 1; j <= n; ++j) {
            const std::size_t sub = dp[i - 1][j - 1] + (ref[i - 1] == hyp[j - 1] ? 0 : 1);
            dp[i][j] = std::min({sub, dp[i - 1][j] + 1, dp[i][j - 1] + 1});
        }

    ErrorCounts counts;
    counts.reference_length = m;
    std::size_t i = m;
    std::size_t j = n;
    while (i > 0 || j > 0) {
        if (i > 0 && j > 0 && ref[i - 1] == hyp[j - 1] && dp[i][j] == dp[i - 1][j - 1]) {
            --i;
            --j;
        } else if (i > 0 && j > 0 && dp[i][j] == dp[i - 1][j - 1] + 1) {
            ++counts.substitutions;
            --i;
            --j;
        } else if (i > 0 && dp[i][j] == dp[i - 1][j] + 1) {
            ++counts.deletions;  // reference token missing from the hypothesis
            --i;
        } else {
            ++counts.insertions;
            --j;
        }
    }
    return counts;
}

namespace {

std::vector<std::string> drop_stopwords(const std::vector<std::string>& tokens,
                                        const std::unordered_set<std::string>& stopwords) {
    std::vector<std::string> kept;
    kept.reserve(tokens.size());
    for (const auto& t : tokens)
        if (stopwords.count(t) == 0) kept.push_back(t);
    return kept;
}

}  // namespace

ErrorCounts cwer(const std::vector<std::string>& ref, const std::vector<std::string>& hyp,
                 const std::unordered_set<std::string>& stopwords) {
    const std::vector<std::string> ref_content = drop_stopwords(ref, stopwords);
    if (ref_content.empty())
        throw InputError("cwer: reference has no content tokens, rate undefined");
    return wer(ref_content, drop_stopwords(hyp, stopwords));
}

namespace {

struct CorpusRates {
    double cwer = 0.0;
    double wer = 0.0;
};

// Token-weighted corpus rates for one (lambda, mu) over cached scores.
CorpusRates corpus_rates(const std::vector<NBestEntry>& entries,
                         const std::vector<std::vector<ScoredHypothesis>>& scored, double lambda,
                         double mu, const std::unordered_set<std::string>& stopwords) {
    std::size_t content_errors = 0;
    std::size_t content_length = 0;
    std::size_t word_errors = 0;
    std::size_t word_length = 0;
    for (std::size_t e = 0; e < entries.size(); ++e) {
        const std::size_t pick = select_best_scored(scored[e], lambda, mu);
        const std::vector<std::string> ref = tokenize(entries[e].ref);
        const std::vector<std::string> hyp = tokenize(entries[e].hyps[pick].text);
        const ErrorCounts c = cwer(ref, hyp, stopwords);
        content_errors += c.total();
        content_length += c.reference_length;
        const ErrorCounts w = wer(ref, hyp);
        word_errors += w.total();
        word_length += w.reference_length;
    }
    CorpusRates rates;
    rates.cwer = static_cast<double>(content_errors) / static_cast<double>(content_length);
    rates.wer = static_cast<double>(word_errors) / static_cast<double>(word_length);
    return rates;
}

std::vector<std::vector<ScoredHypothesis>> score_all(const std::vector<NBestEntry>& entries,
                                                     const ParameterSet& params,
                                                     const SoftPrompt* prompt, const Vocab& vocab) {
    std::vector<std::vector<ScoredHypothesis>> scored;
    scored.reserve(entries.size());
    for (const auto& entry : entries) scored.push_back(score_entry(params, prompt, vocab, entry));
    return scored;
}

}  // namespace

RescoreOutcome evaluate_rescoring(const std::vector<NBestEntry>& entries, const ParameterSet& params,
                                  const SoftPrompt* prompt, const Vocab& vocab,
                                  const RescoreConfig& config,
                                  const std::unordered_set<std::string>& stopwords) {
    if (entries.empty()) throw InputError("evaluate_rescoring: empty n-best set");
    config.validate();
    const auto scored = score_all(entries, params, prompt, vocab);

    RescoreOutcome out;
    out.lambda = config.lm_weight;
    out.mu = config.length_bonus;
    out.utterances = entries.size();

    const CorpusRates system = corpus_rates(entries, scored, config.lm_weight, config.length_bonus, stopwords);
    const CorpusRates baseline = corpus_rates(entries, scored, 0.0, 0.0, stopwords);
    out.system_cwer = system.cwer;
    out.system_wer = system.wer;
    out.baseline_cwer = baseline.cwer;
    out.baseline_wer = baseline.wer;
    out.relative_improvement_pct =
        baseline.cwer > 0.0 ? (baseline.cwer - system.cwer) / baseline.cwer * 100.0 : 0.0;
    return out;
}

std::pair<double, double> tune_weights(const std::vector<NBestEntry>& dev, const ParameterSet& params,
                                       const SoftPrompt* prompt, const Vocab& vocab,
                                       const RescoreConfig& grids,
                                       const std::unordered_set<std::string>& stopwords) {
    if (dev.empty()) throw InputError("tune_weights: empty dev n-best set");
    grids.validate();
    const auto scored = score_all(dev, params, prompt, vocab);

    std::vector<double> lambdas = grids.lambda_grid;
    std::vector<double> mus = grids.mu_grid;
    std::sort(lambdas.begin(), lambdas.end());
    std::sort(mus.begin(), mus.end());

    double best_cwer = std::numeric_limits<double>::infinity();
    std::pair<double, double> best{lambdas.front(), mus.front()};
    for (double lambda : lambdas)
        for (double mu : mus) {
            const double c = corpus_rates(dev, scored, lambda, mu, stopwords).cwer;
            if (c < best_cwer) {
                best_cwer = c;
                best = {lambda, mu};
            }
        }
    return best;
}

namespace {

std::size_t char_edit_distance(const std::string& a, const std::string& b) {
    std::vector<std::size_t> prev(b.size() + 1);
    std::vector<std::size_t> cur(b.size() + 1);
    for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = j;
    for (std::size_t i = 1; i <= a.size(); ++i) {
        cur[0] = i;
        for (std::size_t j = 1; j <= b.size(); ++j)
            cur[j] = std::min({prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1), prev[j] + 1, cur[j - 1] + 1});
        std::swap(prev, cur);
    }
    return prev[b.size()];
}

}  // namespace

ConfusionTable confusion_from_vocabulary(const std::vector<std::vector<std::string>>& sentences,
                                         const std::unordered_set<std::string>& stopwords,
                                         std::size_t max_edit_distance) {
    std::set<std::string> content;
    for (const auto& s : sentences)
        for (const auto& t : s)
            if (stopwords.count(t) == 0) content.insert(t);

    ConfusionTable table;
    for (const auto& w : content)
        for (const auto& u : content) {
            if (w == u) continue;
            if (char_edit_distance(w, u) <= max_edit_distance) table[w].push_back(u);
        }
    return table;
}

std::vector<NBestEntry> synth_nbest(const std::vector<std::vector<std::string>>& sentences,
                                    const ConfusionTable& confusion, int n_hyps, double noise_sd,
                                    std::uint64_t seed,
                                    const std::unordered_set<std::string>& stopwords) {
    if (n_hyps < 2)
        throw ContractError("synth_nbest: need at least 2 hypotheses, got " + std::to_string(n_hyps));
    if (noise_sd < 0) throw ContractError("synth_nbest: noise_sd must be >= 0");

    RngState rng(seed);
    std::vector<NBestEntry> entries;
    entries.reserve(sentences.size());
    for (std::size_t s = 0; s < sentences.size(); ++s) {
        const std::vector<std::string>& ref = sentences[s];
        char id[16];
        std::snprintf(id, sizeof id, "utt-%05zu", s);

        NBestEntry entry;
        entry.id = id;
        std::string ref_text;
        for (std::size_t i = 0; i < ref.size(); ++i) ref_text += (i ? " " : "") + ref[i];
        entry.ref = ref_text;

        std::vector<std::size_t> content_positions;
        for (std::size_t i = 0; i < ref.size(); ++i)
            if (stopwords.count(ref[i]) == 0) content_positions.push_back(i);

        entry.hyps.push_back({ref_text, rng.normal(0.0, noise_sd)});
        for (int h = 1; h < n_hyps; ++h) {
            std::vector<std::string> tokens = ref;
            const std::uint64_t want = rng.below(4);  // k ~ uniform {0..3}
            std::vector<std::size_t> positions = content_positions;
            rng.shuffle(positions);
            int substituted = 0;
            for (std::size_t p = 0; p < positions.size() && p < want; ++p) {
                const auto it = confusion.find(tokens[positions[p]]);
                if (it == confusion.end()) continue;  // no confusable neighbor, word stays
                tokens[positions[p]] = it->second[rng.below(it->second.size())];
                ++substituted;
            }
            std::string text;
            for (std::size_t i = 0; i < tokens.size(); ++i) text += (i ? " " : "") + tokens[i];
            entry.hyps.push_back({text, -substituted + rng.normal(0.0, noise_sd)});
        }
        entries.push_back(std::move(entry));
    }
    return entries;
}

void save_nbest(const std::vector<NBestEntry>& entries, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw InputError("cannot open " + path + " for writing");
    for (const auto& entry : entries) {
        nlohmann::json hyps = nlohmann::json::array();
        for (const auto& h : entry.hyps) hyps.push_back({{"text", h.text}, {"am", h.am_score}});
        const nlohmann::json line{{"id", entry.id}, {"ref", entry.ref}, {"hyps", hyps}};
        out << line.dump() << '\n';
    }
}

std::vector<NBestEntry> load_nbest(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InputError("cannot open n-best file " + path);
    std::vector<NBestEntry> entries;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        try {
            const nlohmann::json j = nlohmann::json::parse(line);
            NBestEntry entry;
            entry.id = j.at("id").get<std::string>();
            entry.ref = j.at("ref").get<std::string>();
            for (const auto& h : j.at("hyps"))
                entry.hyps.push_back({h.at("text").get<std::string>(), h.at("am").get<double>()});
            entry.validate();
            entries.push_back(std::move(entry));
        } catch (const nlohmann::json::exception& e) {
            throw FormatError(path + ":" + std::to_string(lineno) + ": bad n-best record: " + e.what());
        }
    }
    return entries;
}

std::string rescore_report_csv(const std::vector<RescoreReportRow>& rows) {
    std::ostringstream out;
    out << "system,lambda,mu,cwer,wer,rel_improvement_pct\n";
    for (const auto& r : rows)
        out << r.system << ',' << format_real(r.lambda) << ',' << format_real(r.mu) << ','
            << format_real(r.cwer) << ',' << format_real(r.wer) << ','
            << format_real(r.rel_improvement_pct) << '\n';
    return out.str();
}

}  // namespace ptlm
