#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <string>

#include <CLI11.hpp>

#include "ptlm/harness.hpp"

using namespace ptlm;

namespace {

void print_rescore_rows(const std::vector<RescoreReportRow>& rows) {
    for (const auto& row : rows)
        std::printf("%-12s lambda=%-5s mu=%-5s cwer=%s wer=%s improvement=%s%%\n", row.system.c_str(),
                    format_real(row.lambda).c_str(), format_real(row.mu).c_str(),
                    format_real(row.cwer).c_str(), format_real(row.wer).c_str(),
                    format_real(row.rel_improvement_pct).c_str());
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"soft prompt-tuning toolkit: corpus generation, LM training, prompt-size ablation, "
                 "and n-best rescoring"};
    app.require_subcommand(1);
    app.fallthrough();  // global flags may follow the subcommand name

    std::string config_path;
    std::uint64_t seed_override = 0;
    std::string out_override;
    bool strict_hash = false;
    app.add_option("--config", config_path, "experiment config JSON file")->required();
    auto* seed_opt = app.add_option("--seed", seed_override, "override every seed group in the config");
    app.add_option("--out", out_override, "override the output directory");
    app.add_flag("--strict-hash", strict_hash,
                 "reject prompt artifacts whose recorded base digest mismatches");

    auto* gen = app.add_subcommand("gen", "generate corpora and synthetic n-best files");
    std::string gen_grammar;
    int gen_n = 100;
    gen->add_option("--grammar", gen_grammar, "write only this grammar's corpus");
    gen->add_option("--n", gen_n, "sentence count, used with --grammar");

    auto* pretrain = app.add_subcommand("pretrain", "train the generic base model on the mixed corpus");

    auto* adapt = app.add_subcommand("adapt", "run one adaptation strategy against the base");
    std::string adapt_strategy;
    int adapt_prompt_size = -1;
    adapt->add_option("--strategy", adapt_strategy, "none, prompt_tune, or fine_tune")->required();
    adapt->add_option("--prompt-size", adapt_prompt_size, "prompt rows, required for prompt_tune");

    auto* eval = app.add_subcommand("eval", "perplexity of the base or an artifact on a corpus split");
    std::string eval_artifact;
    std::string eval_split = "test";
    eval->add_option("--artifact", eval_artifact, "a .ptpx prompt or .ptlm checkpoint; default: base");
    eval->add_option("--split", eval_split, "train, dev, or test");

    auto* ablate = app.add_subcommand("ablate", "sweep none, every prompt size, and fine_tune");
    auto* rescore = app.add_subcommand("rescore", "tune (lambda, mu) on dev n-best and score test");

    CLI11_PARSE(app, argc, argv);

    try {
        ExperimentConfig config = load_config(config_path);
        if (seed_opt->count() > 0)
            config.seeds = {seed_override, seed_override, seed_override, seed_override};
        if (!out_override.empty()) config.out_dir = out_override;
        if (strict_hash) config.strict_hash = true;

        if (gen->parsed()) {
            if (!gen_grammar.empty()) {
                const std::string path = out_paths(config).data_dir + "/" + gen_grammar + ".txt";
                std::filesystem::create_directories(out_paths(config).data_dir);
                write_corpus_file(gen_grammar, gen_n,
                                  RngState::derive(config.seeds.data, "corpus-" + gen_grammar), path);
                std::printf("wrote %s (%d sentences)\n", path.c_str(), gen_n);
                return 0;
            }
            const GenReport report = cmd_gen(config);
            for (const auto& file : report.files) std::printf("wrote %s\n", file.c_str());
            return 0;
        }

        if (pretrain->parsed()) {
            const PretrainReport report = cmd_pretrain(config);
            std::printf("wrote %s (sha256 %s)\n", report.checkpoint_path.c_str(), report.hash.c_str());
            std::printf("wrote %s (%d entries)\n", report.vocab_path.c_str(), report.vocab_size);
            std::printf("dev perplexity %s after %d epochs (%ss)\n",
                        format_real(report.dev_perplexity).c_str(), report.epochs_run,
                        format_real(report.wall_time_seconds).c_str());
            return 0;
        }

        if (adapt->parsed()) {
            AdaptStrategy strategy;
            if (adapt_strategy == "none") {
                strategy = AdaptStrategy::none();
            } else if (adapt_strategy == "fine_tune") {
                strategy = AdaptStrategy::fine_tune();
            } else if (adapt_strategy == "prompt_tune") {
                if (adapt_prompt_size < 0)
                    throw InputError("--prompt-size is required with --strategy prompt_tune");
                strategy = AdaptStrategy::prompt_tune(adapt_prompt_size, config.training.prompt_init);
            } else {
                throw InputError("unknown strategy " + adapt_strategy +
                                 " (have none, prompt_tune, fine_tune)");
            }
            const AdaptReport report = cmd_adapt(config, strategy);
            if (!report.artifact_path.empty()) std::printf("wrote %s\n", report.artifact_path.c_str());
            std::printf("%s: dev perplexity %s, test perplexity %s, %d epochs\n",
                        report.strategy.c_str(),
                        format_real(report.train_report.best_dev_perplexity).c_str(),
                        format_real(report.test_perplexity).c_str(), report.train_report.epochs_run);
            return 0;
        }

        if (eval->parsed()) {
            const PerplexityResult result = cmd_eval(config, eval_artifact, eval_split);
            std::printf("%s on %s: perplexity %s over %zu tokens\n", result.strategy_label.c_str(),
                        result.corpus_label.c_str(), format_real(result.perplexity).c_str(),
                        result.token_count);
            return 0;
        }

        if (ablate->parsed()) {
            const AblateReport report = cmd_ablate(config);
            for (const AblationCell& cell : report.cells) {
                if (cell.ok)
                    std::printf("%-12s P=%-3s test perplexity %s\n", cell.strategy.c_str(),
                                cell.prompt_size >= 0 ? std::to_string(cell.prompt_size).c_str() : "-",
                                format_real(cell.row.test_perplexity).c_str());
                else
                    std::printf("%-12s P=%-3s FAILED: %s\n", cell.strategy.c_str(),
                                cell.prompt_size >= 0 ? std::to_string(cell.prompt_size).c_str() : "-",
                                cell.error.c_str());
            }
            std::printf("wrote %s\nwrote %s\nwrote %s\n", report.csv_path.c_str(),
                        report.costs_csv_path.c_str(), report.summary_path.c_str());
            return report.all_ok ? 0 : 1;
        }

        if (rescore->parsed()) {
            const RescoreRunReport report = cmd_rescore(config);
            print_rescore_rows(report.rows);
            std::printf("wrote %s\n", report.csv_path.c_str());
            return 0;
        }
    } catch (const Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
