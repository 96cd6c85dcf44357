#include "ptlm/eval.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace ptlm {

std::pair<double, std::size_t> sentence_nll(const ParameterSet& params, const SoftPrompt* prompt,
                                            const std::vector<int>& sentence_ids) {
    if (sentence_ids.empty()) throw InputError("sentence_nll: empty sentence");
    const Tensor* prefix = nullptr;
    if (prompt != nullptr) {
        if (prompt->d_model != params.config.d_model)
            throw CompatError("sentence_nll: prompt width " + std::to_string(prompt->d_model) +
                              " does not match model width " + std::to_string(params.config.d_model));
        prefix = &prompt->matrix;
    }
    const ForwardOutput out = forward<float>(nullptr, params, frame_sentence(sentence_ids), prefix);

    const int cols = out.logits.cols();
    const std::vector<float>& logits = out.logits.values();
    double nll = 0.0;
    std::size_t count = 0;
    for (int r = 0; r < out.logits.rows(); ++r) {
        if (!out.loss_mask[static_cast<std::size_t>(r)]) continue;
        const float* row = logits.data() + static_cast<std::size_t>(r) * cols;
        double mx = row[0];
        for (int c = 1; c < cols; ++c) mx = std::max(mx, static_cast<double>(row[c]));
        double sum = 0.0;
        for (int c = 0; c < cols; ++c) sum += std::exp(static_cast<double>(row[c]) - mx);
        const double lse = mx + std::log(sum);
        nll += lse - static_cast<double>(row[out.targets[static_cast<std::size_t>(r)]]);
        ++count;
    }
    return {nll, count};
}

PerplexityResult corpus_perplexity(const ParameterSet& params, const SoftPrompt* prompt,
                                   const TokenizedCorpus& corpus) {
    if (corpus.sentences.empty())
        throw InputError("corpus_perplexity: empty corpus " + corpus.domain + "/" + corpus.split_role);
    PerplexityResult result;
    result.corpus_label = corpus.domain + "/" + corpus.split_role;
    for (const auto& sentence : corpus.sentences) {
        const auto [nll, count] = sentence_nll(params, prompt, sentence);
        result.total_nll += nll;
        result.token_count += count;
    }
    result.perplexity = std::exp(result.total_nll / static_cast<double>(result.token_count));
    return result;
}

namespace {

int strategy_rank(const AdaptStrategy& s) {
    switch (s.kind) {
        case AdaptStrategy::Kind::kNone: return 0;
        case AdaptStrategy::Kind::kPromptTune: return 1;
        default: return 2;
    }
}

}  // namespace

std::vector<ComparisonRow> compare_strategies(const ParameterSet& base, const std::string& base_hash,
                                              const std::vector<AdaptationRun>& runs,
                                              const TokenizedCorpus& test_corpus) {
    for (const auto& run : runs) {
        if (run.prompt && !run.prompt->base_model_hash.empty() && !base_hash.empty() &&
            run.prompt->base_model_hash != base_hash)
            throw CompatError("prompt for domain '" + run.prompt->domain + "' was trained against base " +
                              run.prompt->base_model_hash + " but the comparison base is " + base_hash);
        if (run.strategy.kind == AdaptStrategy::Kind::kFineTune) {
            const ModelConfig& a = run.params.config;
            const ModelConfig& b = base.config;
            if (a.n_layers != b.n_layers || a.d_model != b.d_model || a.n_heads != b.n_heads ||
                a.d_ff != b.d_ff || a.vocab_size != b.vocab_size || a.max_positions != b.max_positions)
                throw CompatError("fine-tuned parameters use a different configuration than the base");
        }
    }

    std::vector<const AdaptationRun*> ordered;
    ordered.reserve(runs.size());
    for (const auto& run : runs) ordered.push_back(&run);
    std::stable_sort(ordered.begin(), ordered.end(), [](const AdaptationRun* a, const AdaptationRun* b) {
        const int ra = strategy_rank(a->strategy);
        const int rb = strategy_rank(b->strategy);
        if (ra != rb) return ra < rb;
        if (ra == 1) return a->strategy.prompt_len < b->strategy.prompt_len;
        return false;
    });

    std::vector<ComparisonRow> rows;
    rows.reserve(ordered.size());
    for (const AdaptationRun* run : ordered) {
        ComparisonRow row;
        row.strategy = run->strategy.label();
        if (run->strategy.kind == AdaptStrategy::Kind::kPromptTune) row.prompt_size = run->strategy.prompt_len;
        row.trainable_params = run->report.trainable_param_count;
        row.trainable_fraction = run->report.trainable_fraction;
        row.wall_time_seconds = run->report.wall_time_seconds;
        row.dev_perplexity = run->report.best_dev_perplexity;
        const SoftPrompt* prompt = run->prompt ? &*run->prompt : nullptr;
        row.test_perplexity = corpus_perplexity(run->params, prompt, test_corpus).perplexity;
        rows.push_back(std::move(row));
    }
    return rows;
}

std::string comparison_csv(const std::vector<ComparisonRow>& rows) {
    std::ostringstream out;
    out << "strategy,prompt_size,trainable_params,trainable_fraction,wall_time_s,dev_ppl,test_ppl\n";
    for (const auto& r : rows) {
        out << r.strategy << ',';
        if (r.prompt_size >= 0) out << r.prompt_size;
        out << ',' << r.trainable_params << ',' << format_real(r.trainable_fraction) << ','
            << format_real(r.wall_time_seconds) << ',' << format_real(r.dev_perplexity) << ','
            << format_real(r.test_perplexity) << '\n';
    }
    return out.str();
}

}  // namespace ptlm
