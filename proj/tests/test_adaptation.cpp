#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "ptlm/adaptation.hpp"
#include "ptlm/checkpoint.hpp"
#include "ptlm/eval.hpp"
#include "test_util.hpp"

using namespace ptlm;

namespace {

ModelConfig toy_config(int vocab_size) {
    ModelConfig cfg;
    cfg.n_layers = 1;
    cfg.d_model = 8;
    cfg.n_heads = 2;
    cfg.d_ff = 16;
    cfg.vocab_size = vocab_size;
    cfg.max_positions = 32;
    return cfg;
}

// corpus of raw id sentences sharing one vocabulary-of-convenience
TokenizedCorpus id_corpus(std::vector<std::vector<int>> sentences, std::string role = "train") {
    TokenizedCorpus c;
    c.sentences = std::move(sentences);
    c.split_role = std::move(role);
    c.domain = "toy";
    return c;
}

TokenizedCorpus repeated_pattern_corpus(int copies) {
    std::vector<std::vector<int>> sentences;
    for (int i = 0; i < copies; ++i) sentences.push_back({4, 5, 6, 7});
    return id_corpus(std::move(sentences));
}

}  // namespace

TEST_CASE("adam_step follows the scalar trajectory of the reference recurrence") {
    // Adam on f(x) = x^2 from x = 1, lr 0.1, betas (0.9, 0.999), eps 1e-8.
    // Trajectory below reproduces the double-precision recurrence directly.
    const double expected[10] = {0.9000000005, 0.8004122287, 0.7015862729, 0.6039390606,
                                 0.5079636593, 0.4142364560, 0.3234207049, 0.2362637245,
                                 0.1535845601, 0.0762491556};
    Tensor x = Tensor::from({1, 1}, {1.0f});
    Hyperparams h;
    h.learning_rate = 0.1f;
    AdamSlot slot;
    double prev = 1.0;
    for (int t = 1; t <= 10; ++t) {
        x.grad().assign(1, 2.0f * x.values()[0]);
        adam_step(x, slot, h, t);
        const double got = x.values()[0];
        CHECK(got == doctest::Approx(expected[t - 1]).epsilon(1e-5));
        CHECK(std::abs(got) < std::abs(prev));  // |x| strictly decreases
        prev = got;
    }
    // bias correction makes the first step almost exactly -lr * sign(g)
    CHECK(expected[0] == doctest::Approx(1.0 - 0.1).epsilon(1e-8));
}

TEST_CASE("adam_step with no gradient leaves a fresh tensor in place") {
    Tensor x = Tensor::from({1, 2}, {3.0f, -4.0f});
    Hyperparams h;
    AdamSlot slot;
    adam_step(x, slot, h, 1);
    CHECK(x.values() == std::vector<float>{3.0f, -4.0f});

    CHECK_THROWS_AS(adam_step(x, slot, h, 0), ContractError);
    Tensor y = Tensor::from({1, 3}, {1.0f, 2.0f, 3.0f});
    CHECK_THROWS_AS(adam_step(y, slot, h, 2), ShapeError);
}

TEST_CASE("hyperparameter validation lists every problem") {
    Hyperparams h;
    h.learning_rate = 0.0f;
    h.patience = 9;
    h.max_epochs = 3;
    try {
        h.validate();
        FAIL("expected ValidationError");
    } catch (const ValidationError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("learning_rate") != std::string::npos);
        CHECK(msg.find("patience") != std::string::npos);
    }

    CHECK(default_hyperparams(AdaptStrategy::fine_tune()).learning_rate ==
          doctest::Approx(kFineTuneLearningRate));
    CHECK(default_hyperparams(AdaptStrategy::prompt_tune(4)).learning_rate ==
          doctest::Approx(kPromptLearningRate));
    CHECK_THROWS_AS(AdaptStrategy::prompt_tune(-1).validate(), ValidationError);
    CHECK_THROWS_AS(AdaptStrategy::prompt_tune(4, "fancy").validate(), ValidationError);
}

TEST_CASE("random prompt init is seeded and empty at P=0") {
    RngState rng(3);
    ParameterSet base = init_params<float>(toy_config(16), rng);
    TokenizedCorpus corpus = id_corpus({{4, 5}});

    SoftPrompt empty = init_prompt("random", 0, base, corpus, 1);
    CHECK(empty.matrix.rows() == 0);
    CHECK(empty.matrix.cols() == 8);

    SoftPrompt a = init_prompt("random", 3, base, corpus, 7);
    SoftPrompt b = init_prompt("random", 3, base, corpus, 7);
    SoftPrompt c = init_prompt("random", 3, base, corpus, 8);
    CHECK(a.matrix.values() == b.matrix.values());
    CHECK(a.matrix.values() != c.matrix.values());
    CHECK(a.init_mode == "random");
    CHECK(a.seed == 7);
    CHECK(a.domain == "toy");

    CHECK_THROWS_AS(init_prompt("random", -2, base, corpus, 0), ContractError);
    CHECK_THROWS_AS(init_prompt("fancy", 2, base, corpus, 0), ValidationError);
}

TEST_CASE("frequent_words init copies embedding rows in frequency order") {
    // vocabulary is wider than the train corpus so the fallback has rows to sample
    Vocab vocab = build_vocab({{"order", "order", "fries", "shake", "coke", "menu"}}, 1, 100);
    ModelConfig cfg = toy_config(vocab.size());
    RngState rng(5);
    ParameterSet base = init_params<float>(cfg, rng);

    TokenizedCorpus corpus;
    corpus.vocab = std::make_shared<Vocab>(vocab);
    corpus.sentences = {encode(vocab, {"order", "order", "fries"})};
    corpus.domain = "toy";

    SoftPrompt p = init_prompt("frequent_words", 2, base, corpus, 11);
    const Tensor& emb = base.find("token_embedding");
    for (int c = 0; c < cfg.d_model; ++c) {
        CHECK(p.matrix.at(0, c) == emb.at(vocab.id_of("order"), c));
        CHECK(p.matrix.at(1, c) == emb.at(vocab.id_of("fries"), c));
    }
    CHECK(p.init_note.empty());

    // asking for more rows than the corpus has distinct tokens falls back
    SoftPrompt q = init_prompt("frequent_words", 4, base, corpus, 11);
    CHECK(!q.init_note.empty());
    for (int c = 0; c < cfg.d_model; ++c) {
        CHECK(q.matrix.at(0, c) == emb.at(vocab.id_of("order"), c));
        CHECK(q.matrix.at(1, c) == emb.at(vocab.id_of("fries"), c));
    }
}

TEST_CASE("vocab_sample init picks distinct non-reserved embedding rows") {
    ModelConfig cfg = toy_config(12);
    RngState rng(9);
    ParameterSet base = init_params<float>(cfg, rng);
    TokenizedCorpus corpus = id_corpus({{4}});

    SoftPrompt p = init_prompt("vocab_sample", 5, base, corpus, 21);
    const Tensor& emb = base.find("token_embedding");
    std::vector<int> matched_rows;
    for (int r = 0; r < 5; ++r) {
        for (int id = 0; id < cfg.vocab_size; ++id) {
            bool same = true;
            for (int c = 0; c < cfg.d_model && same; ++c) same = p.matrix.at(r, c) == emb.at(id, c);
            if (same) {
                matched_rows.push_back(id);
                break;
            }
        }
    }
    REQUIRE(matched_rows.size() == 5);
    std::sort(matched_rows.begin(), matched_rows.end());
    CHECK(std::unique(matched_rows.begin(), matched_rows.end()) == matched_rows.end());
    CHECK(matched_rows.front() >= 4);

    SoftPrompt again = init_prompt("vocab_sample", 5, base, corpus, 21);
    CHECK(again.matrix.values() == p.matrix.values());

    // 12-entry vocab has 8 non-reserved rows; 9 distinct rows cannot exist
    CHECK_THROWS_AS(init_prompt("vocab_sample", 9, base, corpus, 1), InputError);
}

TEST_CASE("prompt length is capped by the position budget") {
    ModelConfig cfg = toy_config(16);
    cfg.max_positions = 12;
    RngState rng(2);
    ParameterSet base = init_params<float>(cfg, rng);
    TokenizedCorpus corpus = id_corpus({{4, 5, 6, 7, 4, 5, 6, 7}});  // framed length 10
    CHECK(init_prompt("random", 2, base, corpus, 0).prompt_len == 2);
    CHECK_THROWS_AS(init_prompt("random", 3, base, corpus, 0), CapacityError);
}

TEST_CASE("trainable_fraction matches the strategy arithmetic") {
    ModelConfig desk;
    desk.n_layers = 4;
    desk.d_model = 128;
    desk.n_heads = 4;
    desk.d_ff = 512;
    desk.vocab_size = 2000;
    desk.max_positions = 128;
    REQUIRE(count_params(desk).total == 1065728);

    CHECK(trainable_fraction(AdaptStrategy::none(), desk) == 0.0);
    CHECK(trainable_fraction(AdaptStrategy::fine_tune(), desk) == 1.0);
    CHECK(trainable_fraction(AdaptStrategy::prompt_tune(0), desk) == 0.0);
    const double f = trainable_fraction(AdaptStrategy::prompt_tune(8), desk);
    CHECK(f == doctest::Approx(1024.0 / 1065728.0).epsilon(1e-12));
    CHECK(f < 1e-3);
}

TEST_CASE("train with strategy none evaluates without touching anything") {
    RngState rng(4);
    ParameterSet base = init_params<float>(toy_config(16), rng);
    TokenizedCorpus dev = id_corpus({{4, 5, 6}}, "dev");

    AdaptationRun run = train(base, AdaptStrategy::none(), id_corpus({}), dev, Hyperparams{});
    CHECK(run.report.epochs_run == 0);
    CHECK(run.report.trainable_param_count == 0);
    CHECK(run.report.trainable_fraction == 0.0);
    CHECK(!run.prompt.has_value());
    CHECK(run.report.best_dev_perplexity == corpus_perplexity(base, nullptr, dev).perplexity);
    CHECK(run.report.dev_perplexity_trace.empty());
    CHECK(run.report.peak_memory_values() == 0);
}

TEST_CASE("prompt tuning trains only the prompt and never moves the base") {
    RngState rng(6);
    ParameterSet base = init_params<float>(toy_config(16), rng);
    const std::string digest_before = param_digest(base);

    TokenizedCorpus corpus = repeated_pattern_corpus(12);
    TokenizedCorpus dev = repeated_pattern_corpus(3);
    dev.split_role = "dev";

    Hyperparams h = default_hyperparams(AdaptStrategy::prompt_tune(4));
    h.batch_size = 4;
    h.max_epochs = 6;
    h.patience = 6;
    h.seed = 17;

    AdaptationRun run = train(base, AdaptStrategy::prompt_tune(4), corpus, dev, h);
    CHECK(param_digest(base) == digest_before);
    REQUIRE(run.prompt.has_value());
    CHECK(run.prompt->base_model_hash == digest_before);
    CHECK(run.report.trainable_param_count == 4 * 8);
    CHECK(run.report.peak_memory_values() == 3 * 4 * 8);
    CHECK(run.report.epochs_run <= h.max_epochs);
    CHECK(static_cast<int>(run.report.dev_perplexity_trace.size()) == run.report.epochs_run);
    const double min_trace = *std::min_element(run.report.dev_perplexity_trace.begin(),
                                               run.report.dev_perplexity_trace.end());
    CHECK(run.report.best_dev_perplexity == min_trace);

    // the returned artifact really is the best epoch's prompt
    SoftPrompt best = *run.prompt;
    CHECK(corpus_perplexity(base, &best, dev).perplexity == doctest::Approx(min_trace).epsilon(1e-12));

    // adaptation helps on this trivially learnable corpus
    const double none_ppl = corpus_perplexity(base, nullptr, dev).perplexity;
    CHECK(run.report.best_dev_perplexity < none_ppl);

    AdaptationRun again = train(base, AdaptStrategy::prompt_tune(4), corpus, dev, h);
    CHECK(again.report.best_dev_perplexity == run.report.best_dev_perplexity);
    CHECK(again.prompt->matrix.values() == run.prompt->matrix.values());
}

TEST_CASE("fine-tuning trains a private copy of every parameter") {
    RngState rng(8);
    ParameterSet base = init_params<float>(toy_config(16), rng);
    const std::string digest_before = param_digest(base);

    TokenizedCorpus corpus = repeated_pattern_corpus(12);
    TokenizedCorpus dev = repeated_pattern_corpus(3);
    dev.split_role = "dev";

    Hyperparams h = default_hyperparams(AdaptStrategy::fine_tune());
    h.batch_size = 4;
    h.max_epochs = 3;
    h.patience = 3;
    h.seed = 23;

    AdaptationRun run = train(base, AdaptStrategy::fine_tune(), corpus, dev, h);
    CHECK(param_digest(base) == digest_before);
    CHECK(param_digest(run.params) != digest_before);
    CHECK(!run.prompt.has_value());
    CHECK(run.report.trainable_param_count == run.report.total_param_count);
    CHECK(run.report.trainable_fraction == 1.0);
    CHECK(run.report.best_dev_perplexity < corpus_perplexity(base, nullptr, dev).perplexity);
    CHECK(run.report.wall_time_seconds >= 0.0);
}

TEST_CASE("a zero-length prompt scores exactly like the base") {
    RngState rng(10);
    ParameterSet base = init_params<float>(toy_config(16), rng);
    TokenizedCorpus corpus = repeated_pattern_corpus(4);
    TokenizedCorpus dev = repeated_pattern_corpus(2);
    dev.split_role = "dev";

    Hyperparams h = default_hyperparams(AdaptStrategy::prompt_tune(0));
    AdaptationRun run = train(base, AdaptStrategy::prompt_tune(0), corpus, dev, h);
    AdaptationRun none = train(base, AdaptStrategy::none(), corpus, dev, h);
    CHECK(run.report.epochs_run == 0);
    CHECK(run.report.best_dev_perplexity == none.report.best_dev_perplexity);
    CHECK(run.prompt->prompt_len == 0);
}

TEST_CASE("training stops early when dev perplexity keeps worsening") {
    RngState rng(12);
    ParameterSet base = init_params<float>(toy_config(16), rng);
    // dev is disjoint from train, so specializing hurts it
    TokenizedCorpus corpus = repeated_pattern_corpus(12);
    TokenizedCorpus dev = id_corpus({{9, 10, 11}, {11, 10, 9}}, "dev");

    Hyperparams h = default_hyperparams(AdaptStrategy::prompt_tune(4));
    h.batch_size = 4;
    h.max_epochs = 40;
    h.patience = 2;
    h.seed = 31;
    h.learning_rate = 0.05f;

    AdaptationRun run = train(base, AdaptStrategy::prompt_tune(4), corpus, dev, h);
    CHECK(run.report.epochs_run < h.max_epochs);
    const auto& trace = run.report.dev_perplexity_trace;
    CHECK(run.report.best_dev_perplexity == *std::min_element(trace.begin(), trace.end()));
}

TEST_CASE("train rejects empty corpora") {
    RngState rng(14);
    ParameterSet base = init_params<float>(toy_config(16), rng);
    TokenizedCorpus full = repeated_pattern_corpus(2);
    TokenizedCorpus empty = id_corpus({});
    CHECK_THROWS_AS(train(base, AdaptStrategy::fine_tune(), empty, full, Hyperparams{}), InputError);
    CHECK_THROWS_AS(train(base, AdaptStrategy::fine_tune(), full, empty, Hyperparams{}), InputError);
}

TEST_CASE("prompt files round-trip bit-exactly") {
    TempDir dir;
    RngState rng(16);
    ParameterSet base = init_params<float>(toy_config(16), rng);
    SoftPrompt p = init_prompt("random", 3, base, id_corpus({{4, 5}}), 41);
    p.domain = "fastfood";
    p.base_model_hash = param_digest(base);

    save_prompt(p, dir.file("p.ptpx"));
    SoftPrompt q = load_prompt(dir.file("p.ptpx"));
    CHECK(q.matrix.values() == p.matrix.values());
    CHECK(q.domain == p.domain);
    CHECK(q.prompt_len == 3);
    CHECK(q.d_model == 8);
    CHECK(q.base_model_hash == p.base_model_hash);
    CHECK(q.init_mode == "random");
    CHECK(q.seed == 41);

    // fallback note survives the header
    SoftPrompt noted = p;
    noted.init_note = "sampled 2 rows";
    save_prompt(noted, dir.file("n.ptpx"));
    CHECK(load_prompt(dir.file("n.ptpx")).init_note == "sampled 2 rows");
}

TEST_CASE("prompt payload size is 4 bytes per matrix value") {
    TempDir dir;
    SoftPrompt p;
    p.domain = "d";
    p.prompt_len = 400;
    p.d_model = 768;
    p.init_mode = "random";
    p.matrix = Tensor::zeros({400, 768});
    save_prompt(p, dir.file("big.ptpx"));

    const auto bytes = read_file_bytes(dir.file("big.ptpx"));
    ByteReader r(bytes.data(), bytes.size());
    r.str(4, "magic");
    r.u32("version");
    const std::uint32_t header_len = r.u32("header length");
    CHECK(bytes.size() == 12 + header_len + 4ull * 400 * 768);
    CHECK(4ull * 400 * 768 == 1228800);
}

TEST_CASE("strict prompt loading names both digests on a base mismatch") {
    TempDir dir;
    RngState rng(18);
    ParameterSet base = init_params<float>(toy_config(16), rng);
    SoftPrompt p = init_prompt("random", 2, base, id_corpus({{4}}), 1);
    p.base_model_hash = std::string(64, 'a');
    save_prompt(p, dir.file("p.ptpx"));

    const std::string other(64, 'b');
    try {
        load_prompt(dir.file("p.ptpx"), other, true);
        FAIL("expected CompatError");
    } catch (const CompatError& e) {
        const std::string msg = e.what();
        CHECK(msg.find(std::string(64, 'a')) != std::string::npos);
        CHECK(msg.find(other) != std::string::npos);
    }

    std::string warning;
    SoftPrompt loose = load_prompt(dir.file("p.ptpx"), other, false, &warning);
    CHECK(!warning.empty());
    CHECK(loose.matrix.values() == p.matrix.values());

    // matching digest passes silently in strict mode
    warning.clear();
    load_prompt(dir.file("p.ptpx"), std::string(64, 'a'), true, &warning);
    CHECK(warning.empty());
}

TEST_CASE("malformed prompt files are rejected with the bad offset") {
    TempDir dir;
    SoftPrompt p;
    p.prompt_len = 2;
    p.d_model = 4;
    p.init_mode = "random";
    p.matrix = Tensor::zeros({2, 4});
    save_prompt(p, dir.file("p.ptpx"));
    auto bytes = read_file_bytes(dir.file("p.ptpx"));

    SUBCASE("bad magic") {
        bytes[0] = 'X';
        write_file_bytes(dir.file("bad.ptpx"), bytes);
        CHECK_THROWS_WITH_AS(load_prompt(dir.file("bad.ptpx")),
                             doctest::Contains("bad magic at byte 0"), FormatError);
    }
    SUBCASE("unsupported version") {
        bytes[4] = 9;
        write_file_bytes(dir.file("bad.ptpx"), bytes);
        CHECK_THROWS_WITH_AS(load_prompt(dir.file("bad.ptpx")), doctest::Contains("at byte 4"),
                             FormatError);
    }
    SUBCASE("truncated payload") {
        bytes.resize(bytes.size() - 3);
        write_file_bytes(dir.file("bad.ptpx"), bytes);
        CHECK_THROWS_WITH_AS(load_prompt(dir.file("bad.ptpx")), doctest::Contains("truncated"),
                             FormatError);
    }
    SUBCASE("trailing garbage") {
        bytes.push_back(0xee);
        write_file_bytes(dir.file("bad.ptpx"), bytes);
        CHECK_THROWS_WITH_AS(load_prompt(dir.file("bad.ptpx")), doctest::Contains("trailing"),
                             FormatError);
    }
}
