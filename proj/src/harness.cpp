#include "ptlm/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <unordered_set>

#include <nlohmann/json.hpp>

#include "ptlm/checkpoint.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace ptlm {

namespace {

void raise_all(const std::string& what, const std::vector<std::string>& problems) {
    if (problems.empty()) return;
    std::string msg = what + ":";
    for (const auto& p : problems) msg += " " + p + ";";
    msg.pop_back();
    throw ValidationError(msg);
}

// ---- config parsing ----

void check_keys(const json& j, const std::string& section, const std::vector<std::string>& known,
                std::vector<std::string>& problems) {
    for (auto it = j.begin(); it != j.end(); ++it) {
        if (std::find(known.begin(), known.end(), it.key()) == known.end())
            problems.push_back("unknown key \"" + it.key() + "\" in " + section);
    }
}

template <typename T>
void fetch(const json& j, const std::string& section, const char* key, T& out,
           std::vector<std::string>& problems) {
    if (!j.contains(key)) return;
    try {
        out = j.at(key).get<T>();
    } catch (const json::exception&) {
        problems.push_back(section + "." + key + " has the wrong type");
    }
}

}  // namespace

namespace {
std::vector<std::string> config_problems(const ExperimentConfig& config);
}

ExperimentConfig config_from_json(const std::string& text) {
    json j = json::parse(text, nullptr, false);
    if (j.is_discarded() || !j.is_object())
        throw FormatError("experiment config is not a JSON object");

    ExperimentConfig config;
    std::vector<std::string> problems;

    check_keys(j, "config",
               {"model", "data", "strategies", "prompt_sizes", "training", "rescore", "seeds",
                "out_dir", "strict_hash"},
               problems);

    if (j.contains("model") && j.at("model").is_object()) {
        const json& m = j.at("model");
        // vocab_size is deliberately absent: it comes from the corpus at pretrain time
        check_keys(m, "model", {"n_layers", "d_model", "n_heads", "d_ff", "max_positions"}, problems);
        if (m.contains("vocab_size"))
            problems.push_back("model.vocab_size is derived from the corpus and cannot be configured");
        fetch(m, "model", "n_layers", config.model.n_layers, problems);
        fetch(m, "model", "d_model", config.model.d_model, problems);
        fetch(m, "model", "n_heads", config.model.n_heads, problems);
        fetch(m, "model", "d_ff", config.model.d_ff, problems);
        fetch(m, "model", "max_positions", config.model.max_positions, problems);
    } else if (j.contains("model")) {
        problems.push_back("model must be an object");
    }

    if (j.contains("data") && j.at("data").is_object()) {
        const json& d = j.at("data");
        check_keys(d, "data",
                   {"pretrain_grammars", "pretrain_mix", "adapt_grammar", "pretrain_sentences",
                    "adapt_sentences", "vocab_min_freq", "vocab_max_size", "train_fraction",
                    "dev_fraction", "test_fraction"},
                   problems);
        fetch(d, "data", "pretrain_grammars", config.data.pretrain_grammars, problems);
        fetch(d, "data", "pretrain_mix", config.data.pretrain_mix, problems);
        fetch(d, "data", "adapt_grammar", config.data.adapt_grammar, problems);
        fetch(d, "data", "pretrain_sentences", config.data.pretrain_sentences, problems);
        fetch(d, "data", "adapt_sentences", config.data.adapt_sentences, problems);
        fetch(d, "data", "vocab_min_freq", config.data.vocab_min_freq, problems);
        fetch(d, "data", "vocab_max_size", config.data.vocab_max_size, problems);
        fetch(d, "data", "train_fraction", config.data.fractions.train, problems);
        fetch(d, "data", "dev_fraction", config.data.fractions.dev, problems);
        fetch(d, "data", "test_fraction", config.data.fractions.test, problems);
    } else if (j.contains("data")) {
        problems.push_back("data must be an object");
    }

    fetch(j, "config", "strategies", config.strategies, problems);
    fetch(j, "config", "prompt_sizes", config.prompt_sizes, problems);

    if (j.contains("training") && j.at("training").is_object()) {
        const json& t = j.at("training");
        check_keys(t, "training",
                   {"batch_size", "patience", "pretrain_max_epochs", "pretrain_learning_rate",
                    "adapt_max_epochs", "prompt_learning_rate", "fine_tune_learning_rate",
                    "prompt_init"},
                   problems);
        fetch(t, "training", "batch_size", config.training.batch_size, problems);
        fetch(t, "training", "patience", config.training.patience, problems);
        fetch(t, "training", "pretrain_max_epochs", config.training.pretrain_max_epochs, problems);
        fetch(t, "training", "pretrain_learning_rate", config.training.pretrain_learning_rate, problems);
        fetch(t, "training", "adapt_max_epochs", config.training.adapt_max_epochs, problems);
        fetch(t, "training", "prompt_learning_rate", config.training.prompt_learning_rate, problems);
        fetch(t, "training", "fine_tune_learning_rate", config.training.fine_tune_learning_rate,
              problems);
        fetch(t, "training", "prompt_init", config.training.prompt_init, problems);
    } else if (j.contains("training")) {
        problems.push_back("training must be an object");
    }

    if (j.contains("rescore") && j.at("rescore").is_object()) {
        const json& r = j.at("rescore");
        check_keys(r, "rescore",
                   {"n_hyps", "noise_sd", "dev_utterances", "test_utterances", "prompt_size",
                    "lambda_grid", "mu_grid", "stopword_file"},
                   problems);
        fetch(r, "rescore", "n_hyps", config.rescore.n_hyps, problems);
        fetch(r, "rescore", "noise_sd", config.rescore.noise_sd, problems);
        fetch(r, "rescore", "dev_utterances", config.rescore.dev_utterances, problems);
        fetch(r, "rescore", "test_utterances", config.rescore.test_utterances, problems);
        fetch(r, "rescore", "prompt_size", config.rescore.prompt_size, problems);
        fetch(r, "rescore", "lambda_grid", config.rescore.lambda_grid, problems);
        fetch(r, "rescore", "mu_grid", config.rescore.mu_grid, problems);
        fetch(r, "rescore", "stopword_file", config.rescore.stopword_file, problems);
    } else if (j.contains("rescore")) {
        problems.push_back("rescore must be an object");
    }

    // seeds carry no defaults: a reproducible run must pin every stream
    if (j.contains("seeds") && j.at("seeds").is_object()) {
        const json& s = j.at("seeds");
        check_keys(s, "seeds", {"data", "pretrain", "adapt", "nbest"}, problems);
        for (const char* key : {"data", "pretrain", "adapt", "nbest"})
            if (!s.contains(key)) problems.push_back(std::string("seeds.") + key + " is required");
        fetch(s, "seeds", "data", config.seeds.data, problems);
        fetch(s, "seeds", "pretrain", config.seeds.pretrain, problems);
        fetch(s, "seeds", "adapt", config.seeds.adapt, problems);
        fetch(s, "seeds", "nbest", config.seeds.nbest, problems);
    } else {
        problems.push_back("seeds section is required (data, pretrain, adapt, nbest)");
    }

    fetch(j, "config", "out_dir", config.out_dir, problems);
    fetch(j, "config", "strict_hash", config.strict_hash, problems);

    // structural problems join the parse problems so one error names everything
    for (auto& p : config_problems(config)) problems.push_back(std::move(p));
    raise_all("experiment config", problems);
    return config;
}

ExperimentConfig load_config(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InputError("cannot open config file " + path);
    std::ostringstream text;
    text << in.rdbuf();
    return config_from_json(text.str());
}

void ExperimentConfig::validate() const { raise_all("experiment config", config_problems(*this)); }

namespace {

std::vector<std::string> config_problems(const ExperimentConfig& config) {
    const DataConfig& data = config.data;
    const TrainingConfig& training = config.training;
    const RescoreConfigSection& rescore = config.rescore;
    const ModelConfig& model = config.model;
    const auto& strategies = config.strategies;
    const auto& prompt_sizes = config.prompt_sizes;
    const std::string& out_dir = config.out_dir;
    std::vector<std::string> problems;

    try {
        ModelConfig probe = model;
        probe.vocab_size = 4;  // stands in for the corpus-derived value
        probe.validate();
    } catch (const ValidationError& e) {
        problems.push_back(e.what());
    }

    if (data.pretrain_grammars.empty()) problems.push_back("data.pretrain_grammars must not be empty");
    const auto known_grammars = builtin_grammar_names();
    auto known = [&](const std::string& g) {
        return std::find(known_grammars.begin(), known_grammars.end(), g) != known_grammars.end();
    };
    for (const auto& g : data.pretrain_grammars)
        if (!known(g)) problems.push_back("unknown grammar " + g + " in data.pretrain_grammars");
    if (!data.pretrain_mix.empty()) {
        if (data.pretrain_mix.size() != data.pretrain_grammars.size())
            problems.push_back("data.pretrain_mix must list one share per pretrain grammar");
        double sum = 0.0;
        for (double share : data.pretrain_mix) {
            if (!(share > 0)) problems.push_back("data.pretrain_mix shares must be positive");
            sum += share;
        }
        if (std::abs(sum - 1.0) > 1e-9) problems.push_back("data.pretrain_mix must sum to 1");
    }
    if (data.adapt_grammar.empty())
        problems.push_back("data.adapt_grammar must be set");
    else if (!known(data.adapt_grammar))
        problems.push_back("unknown grammar " + data.adapt_grammar + " in data.adapt_grammar");
    if (data.pretrain_sentences < 1) problems.push_back("data.pretrain_sentences must be >= 1");
    if (data.adapt_sentences < 1) problems.push_back("data.adapt_sentences must be >= 1");
    if (data.vocab_min_freq < 1) problems.push_back("data.vocab_min_freq must be >= 1");
    if (data.vocab_max_size < 5)
        problems.push_back("data.vocab_max_size must be >= 5 (four ids are reserved)");
    const SplitFractions& f = data.fractions;
    if (f.train <= 0 || f.dev <= 0 || f.test <= 0)
        problems.push_back("split fractions must all be positive");
    if (std::abs(f.train + f.dev + f.test - 1.0) > 1e-9)
        problems.push_back("split fractions must sum to 1");

    if (strategies.empty()) problems.push_back("strategies must not be empty");
    for (const auto& s : strategies)
        if (s != "none" && s != "prompt_tune" && s != "fine_tune")
            problems.push_back("unknown strategy " + s + " (have none, prompt_tune, fine_tune)");
    for (std::size_t i = 0; i + 1 < strategies.size(); ++i)
        for (std::size_t k = i + 1; k < strategies.size(); ++k)
            if (strategies[i] == strategies[k])
                problems.push_back("strategy " + strategies[i] + " listed twice");

    const bool wants_prompts =
        std::find(strategies.begin(), strategies.end(), "prompt_tune") != strategies.end();
    if (wants_prompts && prompt_sizes.empty())
        problems.push_back("prompt_sizes must not be empty when prompt_tune is enabled");
    for (int p : prompt_sizes)
        if (p < 0) problems.push_back("prompt size " + std::to_string(p) + " is negative");
    for (std::size_t i = 0; i + 1 < prompt_sizes.size(); ++i)
        if (prompt_sizes[i] >= prompt_sizes[i + 1])
            problems.push_back("prompt_sizes must be strictly increasing");

    if (training.batch_size < 1) problems.push_back("training.batch_size must be >= 1");
    if (training.patience < 1) problems.push_back("training.patience must be >= 1");
    if (training.pretrain_max_epochs < 1) problems.push_back("training.pretrain_max_epochs must be >= 1");
    if (training.adapt_max_epochs < 1) problems.push_back("training.adapt_max_epochs must be >= 1");
    if (training.patience > training.pretrain_max_epochs ||
        training.patience > training.adapt_max_epochs)
        problems.push_back("training.patience must not exceed either max_epochs");
    if (!(training.pretrain_learning_rate > 0))
        problems.push_back("training.pretrain_learning_rate must be positive");
    if (!(training.prompt_learning_rate > 0))
        problems.push_back("training.prompt_learning_rate must be positive");
    if (!(training.fine_tune_learning_rate > 0))
        problems.push_back("training.fine_tune_learning_rate must be positive");
    if (training.prompt_init != "random" && training.prompt_init != "frequent_words" &&
        training.prompt_init != "vocab_sample")
        problems.push_back("training.prompt_init must be random, frequent_words, or vocab_sample");

    if (rescore.n_hyps < 2) problems.push_back("rescore.n_hyps must be >= 2");
    if (!(rescore.noise_sd >= 0)) problems.push_back("rescore.noise_sd must be >= 0");
    if (rescore.dev_utterances < 1) problems.push_back("rescore.dev_utterances must be >= 1");
    if (rescore.test_utterances < 1) problems.push_back("rescore.test_utterances must be >= 1");
    if (rescore.prompt_size < 0) problems.push_back("rescore.prompt_size must be >= 0");
    if (rescore.lambda_grid.empty()) problems.push_back("rescore.lambda_grid must not be empty");
    for (double l : rescore.lambda_grid)
        if (!(l >= 0) || !std::isfinite(l))
            problems.push_back("rescore.lambda_grid entries must be finite and >= 0");
    if (rescore.mu_grid.empty()) problems.push_back("rescore.mu_grid must not be empty");
    for (double m : rescore.mu_grid)
        if (!std::isfinite(m)) problems.push_back("rescore.mu_grid entries must be finite");

    if (out_dir.empty()) problems.push_back("out_dir must not be empty");

    return problems;
}

}  // namespace

// ---- paths and small file helpers ----

std::string OutPaths::pretrain_corpus(const std::string& grammar) const {
    return data_dir + "/pretrain_" + grammar + ".txt";
}

std::string OutPaths::prompt_artifact(int prompt_size) const {
    return runs_dir + "/prompt_p" + std::to_string(prompt_size) + ".ptpx";
}

std::string OutPaths::fine_tune_artifact() const { return runs_dir + "/fine_tune.ptlm"; }

OutPaths out_paths(const ExperimentConfig& config) {
    OutPaths p;
    p.root = config.out_dir;
    p.data_dir = p.root + "/data";
    p.runs_dir = p.root + "/runs";
    p.adapt_corpus = p.data_dir + "/" + config.data.adapt_grammar + ".txt";
    p.nbest_dev = p.data_dir + "/nbest_dev.jsonl";
    p.nbest_test = p.data_dir + "/nbest_test.jsonl";
    p.base_checkpoint = p.root + "/base.ptlm";
    p.base_hash_file = p.root + "/base.ptlm.sha256";
    p.vocab_file = p.root + "/vocab.json";
    p.ablation_csv = p.root + "/ablation.csv";
    p.ablation_costs_csv = p.root + "/ablation_costs.csv";
    p.summary_md = p.root + "/summary.md";
    p.rescore_csv = p.root + "/rescore_report.csv";
    return p;
}

namespace {

void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw InputError("cannot open " + path + " for writing");
    out << text;
    if (!out) throw InputError("short write to " + path);
}

std::string sentences_to_lines(const std::vector<std::vector<std::string>>& sentences) {
    std::string text;
    for (const auto& tokens : sentences) {
        for (std::size_t i = 0; i < tokens.size(); ++i) {
            if (i) text += ' ';
            text += tokens[i];
        }
        text += '\n';
    }
    return text;
}

std::unordered_set<std::string> resolve_stopwords(const ExperimentConfig& config) {
    if (config.rescore.stopword_file.empty()) return default_stopword_set();
    return load_stopwords(config.rescore.stopword_file);
}

void require_file(const std::string& path, const char* produced_by) {
    if (!fs::exists(path))
        throw InputError(path + " not found; run " + produced_by + " first");
}

}  // namespace

// ---- gen ----

void write_corpus_file(const std::string& grammar_name, int n, std::uint64_t seed,
                       const std::string& path) {
    if (n < 0) throw ContractError("corpus size must be >= 0, got " + std::to_string(n));
    const DomainGrammar grammar = builtin_grammar(grammar_name);
    write_text(path, sentences_to_lines(generate_domain(grammar, n, seed)));
}

GenReport cmd_gen(const ExperimentConfig& config) {
    config.validate();
    const OutPaths paths = out_paths(config);
    fs::create_directories(paths.data_dir);
    GenReport report;

    // one corpus file per pretraining grammar: configured (or equal) shares,
    // with rounding leftovers assigned to the first grammar
    const std::size_t k = config.data.pretrain_grammars.size();
    const int total = config.data.pretrain_sentences;
    std::vector<int> shares(k);
    int assigned = 0;
    for (std::size_t i = 0; i < k; ++i) {
        shares[i] = config.data.pretrain_mix.empty()
                        ? total / static_cast<int>(k)
                        : static_cast<int>(config.data.pretrain_mix[i] * total);
        assigned += shares[i];
    }
    shares[0] += total - assigned;
    for (std::size_t i = 0; i < k; ++i) {
        const std::string& name = config.data.pretrain_grammars[i];
        auto sentences = generate_domain(builtin_grammar(name), shares[i],
                                         RngState::derive(config.seeds.data, "pretrain-" + name));
        const std::string path = paths.pretrain_corpus(name);
        write_text(path, sentences_to_lines(sentences));
        report.files.push_back(path);
    }

    const DomainGrammar adapt = builtin_grammar(config.data.adapt_grammar);
    const auto adapt_sentences = generate_domain(adapt, config.data.adapt_sentences,
                                                 RngState::derive(config.seeds.data, "adapt"));
    write_text(paths.adapt_corpus, sentences_to_lines(adapt_sentences));
    report.files.push_back(paths.adapt_corpus);

    // synthetic n-best over fresh sentences from the adaptation domain; the
    // confusion table is built from the larger adaptation corpus
    const auto stopwords = resolve_stopwords(config);
    const ConfusionTable confusion = confusion_from_vocabulary(adapt_sentences, stopwords, 2);
    const auto dev_sentences =
        generate_domain(adapt, config.rescore.dev_utterances,
                        RngState::derive(config.seeds.data, "nbest-dev-sentences"));
    const auto test_sentences =
        generate_domain(adapt, config.rescore.test_utterances,
                        RngState::derive(config.seeds.data, "nbest-test-sentences"));
    save_nbest(synth_nbest(dev_sentences, confusion, config.rescore.n_hyps, config.rescore.noise_sd,
                           RngState::derive(config.seeds.nbest, "dev"), stopwords),
               paths.nbest_dev);
    report.files.push_back(paths.nbest_dev);
    save_nbest(synth_nbest(test_sentences, confusion, config.rescore.n_hyps, config.rescore.noise_sd,
                           RngState::derive(config.seeds.nbest, "test"), stopwords),
               paths.nbest_test);
    report.files.push_back(paths.nbest_test);
    return report;
}

// ---- pretrain ----

namespace {

// A run of sentences that will train as one example.
using TokenRow = std::vector<std::vector<std::string>>;

// Greedily groups sentences into rows close to max_positions. Pretraining on
// packed rows puts sentence starts and content at every absolute position,
// so the model stays usable when a prompt prefix later shifts a sentence
// away from position zero. Packing is done per domain, so earlier sentences
// in a row are evidence for what follows; that teaches the model to condition
// on prefix context, which is the channel a tuned prompt drives.
std::vector<TokenRow> pack_sentences(const std::vector<std::vector<std::string>>& sentences,
                                     int max_positions) {
    std::vector<TokenRow> packed;
    TokenRow row;
    std::size_t row_tokens = 0;
    for (const auto& tokens : sentences) {
        if (tokens.size() + 2 > static_cast<std::size_t>(max_positions))
            throw CapacityError("sentence of " + std::to_string(tokens.size()) +
                                " tokens cannot fit in " + std::to_string(max_positions) +
                                " positions");
        // +2 for the separator pair, +2 for the outer BOS/EOS added at encode
        if (!row.empty() &&
            row_tokens + 2 + tokens.size() + 2 > static_cast<std::size_t>(max_positions)) {
            packed.push_back(std::move(row));
            row.clear();
            row_tokens = 0;
        }
        row_tokens += tokens.size() + (row.empty() ? 0 : 2);
        row.push_back(tokens);
    }
    if (!row.empty()) packed.push_back(std::move(row));
    return packed;
}

std::vector<int> encode_row(const Vocab& vocab, const TokenRow& row) {
    std::vector<int> ids;
    for (std::size_t i = 0; i < row.size(); ++i) {
        if (i > 0) {
            ids.push_back(Vocab::kEos);
            ids.push_back(Vocab::kBos);
        }
        const auto part = encode(vocab, row[i]);
        ids.insert(ids.end(), part.begin(), part.end());
    }
    return ids;
}

}  // namespace

PretrainReport cmd_pretrain(const ExperimentConfig& config) {
    config.validate();
    const OutPaths paths = out_paths(config);
    fs::create_directories(paths.root);

    std::vector<TokenRow> rows;
    std::vector<unsigned char> corpus_bytes;
    for (const auto& name : config.data.pretrain_grammars) {
        const std::string path = paths.pretrain_corpus(name);
        require_file(path, "gen");
        const auto bytes = read_file_bytes(path);
        corpus_bytes.insert(corpus_bytes.end(), bytes.begin(), bytes.end());
        auto domain_rows = pack_sentences(load_sentence_tokens(path), config.model.max_positions);
        for (auto& row : domain_rows) rows.push_back(std::move(row));
    }
    RngState row_rng(RngState::derive(config.seeds.data, "pretrain-shuffle"));
    row_rng.shuffle(rows);

    // contiguous row split after the shuffle; the test-fraction tail is
    // unused here since held-out evaluation happens on the adaptation domain
    const std::size_t n_train = static_cast<std::size_t>(config.data.fractions.train * rows.size());
    const std::size_t n_dev = static_cast<std::size_t>(config.data.fractions.dev * rows.size());
    if (n_train == 0 || n_dev == 0)
        throw InputError("pretrain corpus packs into " + std::to_string(rows.size()) +
                         " rows, too few to split into train and dev");
    const std::vector<TokenRow> train_rows(rows.begin(), rows.begin() + n_train);
    const std::vector<TokenRow> dev_rows(rows.begin() + n_train, rows.begin() + n_train + n_dev);

    std::vector<std::vector<std::string>> train_sentences;
    for (const auto& row : train_rows)
        for (const auto& tokens : row) train_sentences.push_back(tokens);
    auto vocab = std::make_shared<Vocab>(build_vocab(train_sentences, config.data.vocab_min_freq,
                                                     config.data.vocab_max_size,
                                                     sha256_hex(corpus_bytes)));
    save_vocab(*vocab, paths.vocab_file);

    ModelConfig model = config.model;
    model.vocab_size = vocab->size();
    model.validate();

    const auto encode_rows = [&vocab](const std::vector<TokenRow>& src) {
        std::vector<std::vector<int>> out;
        out.reserve(src.size());
        for (const auto& row : src) out.push_back(encode_row(*vocab, row));
        return out;
    };
    const TokenizedCorpus train_corpus{vocab, encode_rows(train_rows), "train", "pretrain"};
    const TokenizedCorpus dev_corpus{vocab, encode_rows(dev_rows), "dev", "pretrain"};

    RngState init_rng(RngState::derive(config.seeds.pretrain, "init"));
    const ParameterSet fresh = init_params<float>(model, init_rng);

    Hyperparams hyper;
    hyper.learning_rate = config.training.pretrain_learning_rate;
    hyper.batch_size = config.training.batch_size;
    hyper.max_epochs = config.training.pretrain_max_epochs;
    hyper.patience = config.training.patience;
    hyper.seed = RngState::derive(config.seeds.pretrain, "train");

    // pretraining is full training of a fresh model, which is exactly the
    // fine_tune route applied to random weights
    const AdaptationRun run = train(fresh, AdaptStrategy::fine_tune(), train_corpus, dev_corpus, hyper);

    PretrainReport report;
    report.checkpoint_path = paths.base_checkpoint;
    report.vocab_path = paths.vocab_file;
    report.hash = save_checkpoint(run.params, paths.base_checkpoint);
    write_text(paths.base_hash_file, report.hash + "\n");
    report.vocab_size = vocab->size();
    report.epochs_run = run.report.epochs_run;
    report.dev_perplexity = run.report.best_dev_perplexity;
    report.wall_time_seconds = run.report.wall_time_seconds;
    return report;
}

// ---- shared adaptation plumbing ----

namespace {

struct AdaptContext {
    OutPaths paths;
    LoadedCheckpoint base;
    std::shared_ptr<const Vocab> vocab;
    CorpusSplits splits;
};

AdaptContext load_adapt_context(const ExperimentConfig& config) {
    config.validate();
    AdaptContext ctx;
    ctx.paths = out_paths(config);
    require_file(ctx.paths.base_checkpoint, "pretrain");
    require_file(ctx.paths.vocab_file, "pretrain");
    require_file(ctx.paths.adapt_corpus, "gen");
    ctx.base = load_checkpoint(ctx.paths.base_checkpoint);
    ctx.vocab = std::make_shared<Vocab>(load_vocab(ctx.paths.vocab_file));
    ctx.splits = load_corpus(ctx.paths.adapt_corpus, config.data.fractions,
                             RngState::derive(config.seeds.data, "adapt-split"), ctx.vocab,
                             config.data.adapt_grammar);
    return ctx;
}

Hyperparams adapt_hyper(const ExperimentConfig& config, const AdaptStrategy& strategy) {
    Hyperparams hyper;
    hyper.learning_rate = strategy.kind == AdaptStrategy::Kind::kFineTune
                              ? config.training.fine_tune_learning_rate
                              : config.training.prompt_learning_rate;
    hyper.batch_size = config.training.batch_size;
    hyper.max_epochs = config.training.adapt_max_epochs;
    hyper.patience = config.training.patience;
    // every cell gets its own stream so sweep order cannot matter
    hyper.seed = RngState::derive(config.seeds.adapt,
                                  strategy.label() + "-" + std::to_string(strategy.prompt_len));
    return hyper;
}

struct AdaptOutcome {
    AdaptReport report;
    AdaptationRun run;
};

AdaptOutcome run_adaptation(const ExperimentConfig& config, const AdaptContext& ctx,
                            const AdaptStrategy& strategy) {
    AdaptOutcome outcome{
        {}, train(ctx.base.params, strategy, ctx.splits.train, ctx.splits.dev,
                  adapt_hyper(config, strategy))};
    outcome.report.strategy = strategy.label();
    outcome.report.train_report = outcome.run.report;

    const SoftPrompt* prompt = outcome.run.prompt ? &*outcome.run.prompt : nullptr;
    outcome.report.test_perplexity =
        corpus_perplexity(outcome.run.params, prompt, ctx.splits.test).perplexity;

    if (strategy.kind == AdaptStrategy::Kind::kPromptTune) {
        outcome.report.prompt_size = strategy.prompt_len;
        outcome.report.artifact_path = ctx.paths.prompt_artifact(strategy.prompt_len);
        save_prompt(*outcome.run.prompt, outcome.report.artifact_path);
    } else if (strategy.kind == AdaptStrategy::Kind::kFineTune) {
        outcome.report.artifact_path = ctx.paths.fine_tune_artifact();
        save_checkpoint(outcome.run.params, outcome.report.artifact_path);
    }
    return outcome;
}

}  // namespace

AdaptReport cmd_adapt(const ExperimentConfig& config, const AdaptStrategy& strategy) {
    strategy.validate();
    const AdaptContext ctx = load_adapt_context(config);
    fs::create_directories(ctx.paths.runs_dir);
    return run_adaptation(config, ctx, strategy).report;
}

// ---- eval ----

namespace {

bool ends_with(const std::string& s, const std::string& suffix) {
    return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

}  // namespace

PerplexityResult cmd_eval(const ExperimentConfig& config, const std::string& artifact_path,
                          const std::string& split) {
    const AdaptContext ctx = load_adapt_context(config);
    const TokenizedCorpus* corpus = nullptr;
    if (split == "train") corpus = &ctx.splits.train;
    else if (split == "dev") corpus = &ctx.splits.dev;
    else if (split == "test") corpus = &ctx.splits.test;
    else throw InputError("unknown split " + split + " (have train, dev, test)");

    if (artifact_path.empty()) {
        PerplexityResult result = corpus_perplexity(ctx.base.params, nullptr, *corpus);
        result.strategy_label = "none";
        return result;
    }
    if (ends_with(artifact_path, ".ptpx")) {
        std::string warning;
        const SoftPrompt prompt = load_prompt(artifact_path, ctx.base.content_hash,
                                              config.strict_hash, &warning);
        if (!warning.empty()) std::fprintf(stderr, "warning: %s\n", warning.c_str());
        PerplexityResult result = corpus_perplexity(ctx.base.params, &prompt, *corpus);
        result.strategy_label = "prompt_tune";
        return result;
    }
    if (ends_with(artifact_path, ".ptlm")) {
        const LoadedCheckpoint tuned = load_checkpoint(artifact_path);
        if (!(tuned.params.config == ctx.base.params.config))
            throw CompatError(artifact_path + " was trained with a different model configuration" +
                              " than " + ctx.paths.base_checkpoint);
        PerplexityResult result = corpus_perplexity(tuned.params, nullptr, *corpus);
        result.strategy_label = "fine_tune";
        return result;
    }
    throw InputError("artifact " + artifact_path + " must end in .ptpx or .ptlm");
}

// ---- ablate ----

namespace {

std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string quoted = "\"";
    for (char c : s) {
        if (c == '"') quoted += '"';
        quoted += c;
    }
    quoted += '"';
    return quoted;
}

std::string ablation_csv_text(const std::vector<AblationCell>& cells) {
    std::string csv =
        "strategy,prompt_size,trainable_params,trainable_fraction,peak_memory_values,dev_ppl,"
        "test_ppl,status\n";
    for (const AblationCell& cell : cells) {
        csv += cell.strategy + ",";
        if (cell.prompt_size >= 0) csv += std::to_string(cell.prompt_size);
        csv += ",";
        if (cell.ok) {
            csv += std::to_string(cell.row.trainable_params) + ",";
            csv += format_real(cell.row.trainable_fraction) + ",";
            csv += std::to_string(3 * cell.row.trainable_params) + ",";
            csv += format_real(cell.row.dev_perplexity) + ",";
            csv += format_real(cell.row.test_perplexity) + ",ok";
        } else {
            csv += ",,,,," + csv_field("error: " + cell.error);
        }
        csv += "\n";
    }
    return csv;
}

std::string ablation_costs_text(const std::vector<AblationCell>& cells,
                                const std::vector<TrainReport>& reports) {
    std::string csv = "strategy,prompt_size,wall_time_s,epochs_run\n";
    for (std::size_t i = 0; i < cells.size(); ++i) {
        csv += cells[i].strategy + ",";
        if (cells[i].prompt_size >= 0) csv += std::to_string(cells[i].prompt_size);
        csv += ",";
        if (cells[i].ok)
            csv += format_real(reports[i].wall_time_seconds) + "," +
                   std::to_string(reports[i].epochs_run);
        else
            csv += ",";
        csv += "\n";
    }
    return csv;
}

std::string cell_name(const AblationCell& cell) {
    if (cell.prompt_size >= 0) return "P=" + std::to_string(cell.prompt_size);
    return cell.strategy;
}

std::string summary_markdown(const ExperimentConfig& config, const ModelConfig& model,
                             const std::vector<AblationCell>& cells) {
    std::ostringstream md;
    md << "# Prompt-size ablation\n\n";
    md << "Base model: " << model.n_layers << " layers, d_model " << model.d_model << ", "
       << model.n_heads << " heads, d_ff " << model.d_ff << ", vocab " << model.vocab_size
       << ", max positions " << model.max_positions << ".\n";
    md << "Pretraining: " << config.data.pretrain_sentences << " mixed sentences (";
    for (std::size_t i = 0; i < config.data.pretrain_grammars.size(); ++i)
        md << (i ? " + " : "") << config.data.pretrain_grammars[i];
    md << "). Adaptation: " << config.data.adapt_sentences << " sentences from "
       << config.data.adapt_grammar << ".\n";
    md << "Seeds: data=" << config.seeds.data << ", pretrain=" << config.seeds.pretrain
       << ", adapt=" << config.seeds.adapt << ".\n\n";

    md << "| strategy | P | trainable | fraction | dev ppl | test ppl | status |\n";
    md << "|---|---:|---:|---:|---:|---:|---|\n";
    for (const AblationCell& cell : cells) {
        md << "| " << cell.strategy << " | ";
        if (cell.prompt_size >= 0) md << cell.prompt_size;
        md << " | ";
        if (cell.ok) {
            md << cell.row.trainable_params << " | " << format_real(cell.row.trainable_fraction)
               << " | " << format_real(cell.row.dev_perplexity) << " | "
               << format_real(cell.row.test_perplexity) << " | ok |\n";
        } else {
            md << " |  |  |  | " << cell.error << " |\n";
        }
    }

    // monospace rendering of the test-perplexity curve, scaled to the worst row
    double worst = 0.0;
    for (const AblationCell& cell : cells)
        if (cell.ok) worst = std::max(worst, cell.row.test_perplexity);
    if (worst > 0) {
        md << "\n## Test perplexity by strategy\n\n```\n";
        for (const AblationCell& cell : cells) {
            if (!cell.ok) continue;
            const int width = static_cast<int>(std::lround(cell.row.test_perplexity / worst * 40.0));
            char label[16];
            std::snprintf(label, sizeof(label), "%-12s", cell_name(cell).c_str());
            md << label << std::string(static_cast<std::size_t>(width), '#')
               << std::string(static_cast<std::size_t>(42 - width), ' ')
               << format_real(cell.row.test_perplexity) << "\n";
        }
        md << "```\n";
    }
    return md.str();
}

}  // namespace

AblateReport cmd_ablate(const ExperimentConfig& config) {
    const AdaptContext ctx = load_adapt_context(config);
    fs::create_directories(ctx.paths.runs_dir);

    auto enabled = [&](const char* label) {
        return std::find(config.strategies.begin(), config.strategies.end(), label) !=
               config.strategies.end();
    };
    std::vector<AdaptStrategy> order;
    if (enabled("none")) order.push_back(AdaptStrategy::none());
    if (enabled("prompt_tune"))
        for (int p : config.prompt_sizes)
            order.push_back(AdaptStrategy::prompt_tune(p, config.training.prompt_init));
    if (enabled("fine_tune")) order.push_back(AdaptStrategy::fine_tune());

    AblateReport report;
    std::vector<AdaptationRun> runs;
    std::vector<TrainReport> costs(order.size());
    for (std::size_t i = 0; i < order.size(); ++i) {
        const AdaptStrategy& strategy = order[i];
        AblationCell cell;
        cell.strategy = strategy.label();
        if (strategy.kind == AdaptStrategy::Kind::kPromptTune) cell.prompt_size = strategy.prompt_len;
        try {
            AdaptOutcome outcome = run_adaptation(config, ctx, strategy);
            costs[i] = outcome.run.report;
            runs.push_back(std::move(outcome.run));
            cell.ok = true;
        } catch (const Error& e) {
            // a failed cell is recorded and the sweep moves on
            cell.error = e.what();
        }
        report.cells.push_back(std::move(cell));
    }

    // one comparison pass scores every successful run on the shared test split
    const auto rows = compare_strategies(ctx.base.params, ctx.base.content_hash, runs, ctx.splits.test);
    for (AblationCell& cell : report.cells) {
        if (!cell.ok) continue;
        for (const ComparisonRow& row : rows)
            if (row.strategy == cell.strategy && row.prompt_size == cell.prompt_size) {
                cell.row = row;
                break;
            }
    }

    report.csv_path = ctx.paths.ablation_csv;
    report.costs_csv_path = ctx.paths.ablation_costs_csv;
    report.summary_path = ctx.paths.summary_md;
    write_text(report.csv_path, ablation_csv_text(report.cells));
    write_text(report.costs_csv_path, ablation_costs_text(report.cells, costs));
    write_text(report.summary_path, summary_markdown(config, ctx.base.params.config, report.cells));
    report.all_ok = std::all_of(report.cells.begin(), report.cells.end(),
                                [](const AblationCell& c) { return c.ok; });
    return report;
}

// ---- rescore ----

RescoreRunReport cmd_rescore(const ExperimentConfig& config) {
    config.validate();
    const OutPaths paths = out_paths(config);
    require_file(paths.base_checkpoint, "pretrain");
    require_file(paths.vocab_file, "pretrain");
    require_file(paths.nbest_dev, "gen");
    require_file(paths.nbest_test, "gen");

    const LoadedCheckpoint base = load_checkpoint(paths.base_checkpoint);
    const Vocab vocab = load_vocab(paths.vocab_file);
    const auto dev = load_nbest(paths.nbest_dev);
    const auto test = load_nbest(paths.nbest_test);
    const auto stopwords = resolve_stopwords(config);

    RescoreConfig grids;
    grids.lambda_grid = config.rescore.lambda_grid;
    grids.mu_grid = config.rescore.mu_grid;

    RescoreRunReport report;
    {
        // lambda = mu = 0 ignores the LM entirely, so any model gives the
        // acoustic-only reference row
        RescoreConfig am_only;
        const RescoreOutcome out = evaluate_rescoring(test, base.params, nullptr, vocab, am_only,
                                                      stopwords);
        report.rows.push_back({"am_only", 0.0, 0.0, out.baseline_cwer, out.baseline_wer, 0.0});
    }

    auto add_system = [&](const std::string& label, const ParameterSet& params,
                          const SoftPrompt* prompt) {
        const auto [lambda, mu] = tune_weights(dev, params, prompt, vocab, grids, stopwords);
        RescoreConfig tuned = grids;
        tuned.lm_weight = lambda;
        tuned.length_bonus = mu;
        const RescoreOutcome out = evaluate_rescoring(test, params, prompt, vocab, tuned, stopwords);
        report.rows.push_back({label, lambda, mu, out.system_cwer, out.system_wer,
                               out.relative_improvement_pct});
    };

    auto enabled = [&](const char* label) {
        return std::find(config.strategies.begin(), config.strategies.end(), label) !=
               config.strategies.end();
    };
    if (enabled("none")) add_system("none", base.params, nullptr);
    if (enabled("prompt_tune")) {
        const std::string artifact = paths.prompt_artifact(config.rescore.prompt_size);
        require_file(artifact, "adapt or ablate");
        std::string warning;
        const SoftPrompt prompt = load_prompt(artifact, base.content_hash, config.strict_hash,
                                              &warning);
        if (!warning.empty()) std::fprintf(stderr, "warning: %s\n", warning.c_str());
        add_system("prompt_tune", base.params, &prompt);
    }
    if (enabled("fine_tune")) {
        require_file(paths.fine_tune_artifact(), "adapt or ablate");
        const LoadedCheckpoint tuned = load_checkpoint(paths.fine_tune_artifact());
        if (!(tuned.params.config == base.params.config))
            throw CompatError(paths.fine_tune_artifact() +
                              " was trained with a different model configuration than " +
                              paths.base_checkpoint);
        add_system("fine_tune", tuned.params, nullptr);
    }

    report.csv_path = paths.rescore_csv;
    write_text(report.csv_path, rescore_report_csv(report.rows));
    return report;
}

}  // namespace ptlm
