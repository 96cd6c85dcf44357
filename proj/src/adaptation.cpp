#include "ptlm/adaptation.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <map>
#include <set>

#include <nlohmann/json.hpp>

#include "ptlm/checkpoint.hpp"
#include "ptlm/eval.hpp"

namespace ptlm {

namespace {

constexpr char kPromptMagic[4] = {'P', 'T', 'P', 'X'};
constexpr std::uint32_t kPromptVersion = 1;

const std::set<std::string>& known_init_modes() {
    static const std::set<std::string> modes{"random", "frequent_words", "vocab_sample"};
    return modes;
}

void raise_all(const char* who, const std::vector<std::string>& problems) {
    if (problems.empty()) return;
    std::string msg(who);
    for (std::size_t i = 0; i < problems.size(); ++i) msg += (i == 0 ? ": " : "; ") + problems[i];
    throw ValidationError(msg);
}

}  // namespace

void AdaptStrategy::validate() const {
    if (kind != Kind::kPromptTune) return;
    std::vector<std::string> problems;
    if (prompt_len < 0)
        problems.push_back("prompt length must be >= 0, got " + std::to_string(prompt_len));
    if (known_init_modes().count(init_mode) == 0)
        problems.push_back("unknown init mode '" + init_mode +
                           "' (expected random, frequent_words or vocab_sample)");
    raise_all("adapt strategy", problems);
}

void Hyperparams::validate() const {
    std::vector<std::string> problems;
    if (!(learning_rate > 0)) problems.push_back("learning_rate must be positive");
    if (!(beta1 > 0 && beta1 < 1)) problems.push_back("beta1 must lie in (0, 1)");
    if (!(beta2 > 0 && beta2 < 1)) problems.push_back("beta2 must lie in (0, 1)");
    if (!(epsilon > 0)) problems.push_back("epsilon must be positive");
    if (batch_size < 1) problems.push_back("batch_size must be >= 1");
    if (max_epochs < 1) problems.push_back("max_epochs must be >= 1");
    if (patience < 1) problems.push_back("patience must be >= 1");
    if (patience > max_epochs) problems.push_back("patience must not exceed max_epochs");
    raise_all("hyperparams", problems);
}

Hyperparams default_hyperparams(const AdaptStrategy& strategy) {
    Hyperparams h;
    h.learning_rate =
        strategy.kind == AdaptStrategy::Kind::kFineTune ? kFineTuneLearningRate : kPromptLearningRate;
    return h;
}

void adam_step(Tensor& value, AdamSlot& slot, const Hyperparams& hyper, long long step_index) {
    if (step_index < 1)
        throw ContractError("adam_step: step_index starts at 1, got " + std::to_string(step_index));
    std::vector<float>& vals = value.values();
    const std::size_t n = vals.size();
    if (slot.m.empty()) {
        slot.m.assign(n, 0.0f);
        slot.v.assign(n, 0.0f);
    }
    if (slot.m.size() != n)
        throw ShapeError("adam_step: moment buffers hold " + std::to_string(slot.m.size()) +
                         " values but the tensor has " + std::to_string(n));
    const float* g = value.has_grad() ? value.grad().data() : nullptr;
    const float b1 = hyper.beta1;
    const float b2 = hyper.beta2;
    const auto c1 = static_cast<float>(1.0 - std::pow(static_cast<double>(b1), static_cast<double>(step_index)));
    const auto c2 = static_cast<float>(1.0 - std::pow(static_cast<double>(b2), static_cast<double>(step_index)));
    for (std::size_t i = 0; i < n; ++i) {
        const float gi = g ? g[i] : 0.0f;
        slot.m[i] = b1 * slot.m[i] + (1.0f - b1) * gi;
        slot.v[i] = b2 * slot.v[i] + (1.0f - b2) * gi * gi;
        const float mhat = slot.m[i] / c1;
        const float vhat = slot.v[i] / c2;
        vals[i] -= hyper.learning_rate * mhat / (std::sqrt(vhat) + hyper.epsilon);
    }
}

SoftPrompt init_prompt(const std::string& mode, int prompt_len, const ParameterSet& base,
                       const TokenizedCorpus& train_corpus, std::uint64_t seed) {
    if (prompt_len < 0)
        throw ContractError("init_prompt: prompt length must be >= 0, got " + std::to_string(prompt_len));
    if (known_init_modes().count(mode) == 0)
        throw ValidationError("init_prompt: unknown init mode '" + mode + "'");
    const ModelConfig& cfg = base.config;

    // the prompt and the longest framed sentence must fit the position table together
    std::size_t longest = 0;
    for (const auto& s : train_corpus.sentences) longest = std::max(longest, s.size());
    const long long budget = static_cast<long long>(cfg.max_positions) - static_cast<long long>(longest + 2);
    if (prompt_len > budget)
        throw CapacityError("init_prompt: " + std::to_string(prompt_len) +
                            " prompt rows plus the longest framed sentence (" + std::to_string(longest + 2) +
                            " tokens) exceed max_positions " + std::to_string(cfg.max_positions));

    SoftPrompt out;
    out.domain = train_corpus.domain;
    out.prompt_len = prompt_len;
    out.d_model = cfg.d_model;
    out.init_mode = mode;
    out.seed = seed;

    RngState rng(seed);
    if (mode == "random") {
        out.matrix = Tensor::randn({prompt_len, cfg.d_model}, rng, 0.02f);
        return out;
    }

    const int reserved = Vocab::kEos + 1;
    std::vector<int> chosen;
    if (mode == "frequent_words") {
        if (!train_corpus.vocab)
            throw ContractError("init_prompt: frequent_words needs the corpus vocabulary for tie-breaks");
        std::map<int, long long> freq;
        for (const auto& s : train_corpus.sentences)
            for (int id : s) {
                if (id >= cfg.vocab_size)
                    throw CompatError("init_prompt: corpus token id " + std::to_string(id) +
                                      " outside the model's vocabulary of " + std::to_string(cfg.vocab_size));
                if (id >= reserved) ++freq[id];
            }
        std::vector<int> by_freq;
        by_freq.reserve(freq.size());
        for (const auto& [id, count] : freq) by_freq.push_back(id);
        const Vocab& vocab = *train_corpus.vocab;
        std::sort(by_freq.begin(), by_freq.end(), [&](int a, int b) {
            if (freq[a] != freq[b]) return freq[a] > freq[b];
            return vocab.token_of(a) < vocab.token_of(b);
        });
        const std::size_t take = std::min<std::size_t>(by_freq.size(), static_cast<std::size_t>(prompt_len));
        chosen.assign(by_freq.begin(), by_freq.begin() + static_cast<std::ptrdiff_t>(take));
    }

    if (static_cast<int>(chosen.size()) < prompt_len) {
        const std::set<int> used(chosen.begin(), chosen.end());
        std::vector<int> pool;
        for (int id = reserved; id < cfg.vocab_size; ++id)
            if (used.count(id) == 0) pool.push_back(id);
        const std::size_t needed = static_cast<std::size_t>(prompt_len) - chosen.size();
        if (pool.size() < needed)
            throw InputError("init_prompt: cannot pick " + std::to_string(prompt_len) +
                             " distinct tokens from a vocabulary with " +
                             std::to_string(cfg.vocab_size - reserved) + " non-reserved entries");
        rng.shuffle(pool);
        if (mode == "frequent_words")
            out.init_note = "frequent_words found only " + std::to_string(chosen.size()) +
                            " distinct train tokens; sampled the remaining " + std::to_string(needed) +
                            " rows from the vocabulary";
        chosen.insert(chosen.end(), pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(needed));
    }

    const Tensor& embedding = base.find("token_embedding");
    out.matrix = Tensor::zeros({prompt_len, cfg.d_model});
    for (int r = 0; r < prompt_len; ++r)
        for (int c = 0; c < cfg.d_model; ++c) out.matrix.at(r, c) = embedding.at(chosen[static_cast<std::size_t>(r)], c);
    return out;
}

AdaptationRun train(const ParameterSet& base, const AdaptStrategy& strategy,
                    const TokenizedCorpus& train_corpus, const TokenizedCorpus& dev_corpus,
                    const Hyperparams& hyper) {
    strategy.validate();
    hyper.validate();
    base.config.validate();

    using clock = std::chrono::steady_clock;
    const ParamCount pc = count_params(base.config);

    AdaptationRun run{strategy, base, std::nullopt, {}};
    TrainReport& rep = run.report;
    rep.total_param_count = pc.total;
    rep.trainable_fraction = trainable_fraction(strategy, base.config);

    if (strategy.kind == AdaptStrategy::Kind::kNone) {
        const auto t0 = clock::now();
        rep.best_dev_perplexity = corpus_perplexity(base, nullptr, dev_corpus).perplexity;
        rep.wall_time_seconds = std::chrono::duration<double>(clock::now() - t0).count();
        return run;
    }

    if (train_corpus.sentences.empty()) throw InputError("train: empty train corpus");
    if (dev_corpus.sentences.empty()) throw InputError("train: empty dev corpus");

    std::set<std::string> selector;
    std::vector<Tensor*> trainables;
    Tensor* prefix = nullptr;
    if (strategy.kind == AdaptStrategy::Kind::kPromptTune) {
        SoftPrompt prompt = init_prompt(strategy.init_mode, strategy.prompt_len, base, train_corpus,
                                        RngState::derive(hyper.seed, "prompt-init"));
        prompt.base_model_hash = param_digest(base);
        run.prompt = std::move(prompt);
        prefix = &run.prompt->matrix;
        selector.insert(kPrefixSelector);
        trainables.push_back(prefix);
        rep.trainable_param_count =
            static_cast<std::size_t>(strategy.prompt_len) * static_cast<std::size_t>(base.config.d_model);
    } else {
        run.params = cast_params<float>(base);  // private copy; the base stays frozen
        for (auto& [name, t] : run.params.tensors) {
            selector.insert(name);
            trainables.push_back(&t);
        }
        rep.trainable_param_count = pc.total;
    }

    const SoftPrompt* scoring_prompt = run.prompt ? &*run.prompt : nullptr;
    const auto t0 = clock::now();

    if (rep.trainable_param_count == 0) {
        // a zero-length prompt has nothing to move, so it scores like the base
        rep.best_dev_perplexity = corpus_perplexity(run.params, scoring_prompt, dev_corpus).perplexity;
        rep.wall_time_seconds = std::chrono::duration<double>(clock::now() - t0).count();
        return run;
    }

    std::vector<std::vector<int>> framed;
    framed.reserve(train_corpus.sentences.size());
    for (const auto& s : train_corpus.sentences) framed.push_back(frame_sentence(s));

    std::vector<AdamSlot> slots(trainables.size());
    RngState order_rng(RngState::derive(hyper.seed, "batch-order"));
    double best = std::numeric_limits<double>::infinity();
    std::vector<std::vector<float>> best_values;
    int since_best = 0;
    long long step = 0;

    for (int epoch = 1; epoch <= hyper.max_epochs; ++epoch) {
        for (const auto& batch : batch_iter(framed.size(), hyper.batch_size, order_rng)) {
            run.params.zero_grads();
            if (prefix != nullptr) prefix->zero_grad();
            std::vector<std::vector<int>> sentences;
            sentences.reserve(batch.size());
            for (std::size_t i : batch) sentences.push_back(framed[i]);
            batch_loss_and_grads(run.params, sentences, prefix, selector);
            ++step;
            for (std::size_t i = 0; i < trainables.size(); ++i) adam_step(*trainables[i], slots[i], hyper, step);
        }
        const double ppl = corpus_perplexity(run.params, scoring_prompt, dev_corpus).perplexity;
        rep.dev_perplexity_trace.push_back(ppl);
        rep.epochs_run = epoch;
        if (ppl < best) {
            best = ppl;
            since_best = 0;
            best_values.clear();
            for (Tensor* t : trainables) best_values.push_back(t->values());
        } else if (++since_best >= hyper.patience) {
            break;
        }
    }

    for (std::size_t i = 0; i < trainables.size(); ++i) trainables[i]->values() = best_values[i];
    rep.best_dev_perplexity = best;
    rep.wall_time_seconds = std::chrono::duration<double>(clock::now() - t0).count();

    // leave no gradient machinery armed on shared or returned tensors
    run.params.set_requires_grad(false);
    run.params.zero_grads();
    if (prefix != nullptr) {
        prefix->set_requires_grad(false);
        prefix->zero_grad();
    }
    return run;
}

double trainable_fraction(const AdaptStrategy& strategy, const ModelConfig& config) {
    strategy.validate();
    switch (strategy.kind) {
        case AdaptStrategy::Kind::kNone:
            return 0.0;
        case AdaptStrategy::Kind::kFineTune:
            return 1.0;
        default: {
            const std::size_t total = count_params(config).total;
            const auto prompt_values =
                static_cast<double>(strategy.prompt_len) * static_cast<double>(config.d_model);
            return prompt_values / static_cast<double>(total);
        }
    }
}

void save_prompt(const SoftPrompt& prompt, const std::string& path) {
    if (prompt.matrix.rows() != prompt.prompt_len || prompt.matrix.cols() != prompt.d_model)
        throw ShapeError("save_prompt: matrix is " + Tensor::shape_string(prompt.matrix.shape()) +
                         " but the header says " + std::to_string(prompt.prompt_len) + "x" +
                         std::to_string(prompt.d_model));
    nlohmann::json header{{"domain", prompt.domain},        {"P", prompt.prompt_len},
                          {"d", prompt.d_model},            {"base_model_hash", prompt.base_model_hash},
                          {"init_mode", prompt.init_mode},  {"seed", prompt.seed}};
    if (!prompt.init_note.empty()) header["init_note"] = prompt.init_note;
    const std::string text = header.dump();

    ByteWriter w;
    w.str(std::string(kPromptMagic, 4));
    w.u32(kPromptVersion);
    w.u32(static_cast<std::uint32_t>(text.size()));
    w.str(text);
    for (float v : prompt.matrix.values()) w.f32(v);
    write_file_bytes(path, w.data());
}

SoftPrompt load_prompt(const std::string& path) {
    const std::vector<unsigned char> bytes = read_file_bytes(path);
    ByteReader r(bytes.data(), bytes.size());

    if (r.str(4, "magic") != std::string(kPromptMagic, 4))
        throw FormatError("bad magic at byte 0 of " + path + ", not a prompt file");
    const std::uint32_t version = r.u32("version");
    if (version != kPromptVersion)
        throw FormatError("unsupported prompt version " + std::to_string(version) + " at byte 4");

    const std::uint32_t header_len = r.u32("header length");
    const std::string text = r.str(header_len, "header");
    SoftPrompt out;
    try {
        const nlohmann::json j = nlohmann::json::parse(text);
        out.domain = j.at("domain").get<std::string>();
        out.prompt_len = j.at("P").get<int>();
        out.d_model = j.at("d").get<int>();
        out.base_model_hash = j.at("base_model_hash").get<std::string>();
        out.init_mode = j.at("init_mode").get<std::string>();
        out.seed = j.at("seed").get<std::uint64_t>();
        if (j.contains("init_note")) out.init_note = j.at("init_note").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("prompt header is not usable JSON: ") + e.what());
    }
    if (out.prompt_len < 0 || out.d_model < 1)
        throw FormatError("prompt header declares impossible shape " + std::to_string(out.prompt_len) +
                          "x" + std::to_string(out.d_model));

    out.matrix = Tensor::zeros({out.prompt_len, out.d_model});
    for (float& v : out.matrix.values()) v = r.f32("prompt matrix");
    if (r.remaining() != 0)
        throw FormatError(std::to_string(r.remaining()) + " trailing bytes after the prompt payload of " + path);
    return out;
}

SoftPrompt load_prompt(const std::string& path, const std::string& base_hash, bool strict,
                       std::string* warning) {
    SoftPrompt out = load_prompt(path);
    if (out.base_model_hash != base_hash) {
        const std::string msg =
            out.base_model_hash.empty()
                ? "prompt at " + path + " carries no base digest; expected base " + base_hash
                : "prompt at " + path + " was trained against base " + out.base_model_hash +
                      " but the supplied base checkpoint digest is " + base_hash;
        if (strict) throw CompatError(msg);
        if (warning != nullptr) *warning = msg;
    }
    return out;
}

}  // namespace ptlm
