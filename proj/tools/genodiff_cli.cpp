#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "genodiff/gradcheck_suite.hpp"
#include "genodiff/pipeline.hpp"

namespace {

using namespace genodiff;

struct CommonArgs {
    std::string config_path;
    std::vector<std::string> overrides;
    std::optional<uint64_t> seed;
    std::optional<std::string> out;
    int threads = 0;
};

void add_common(CLI::App* cmd, CommonArgs& args, bool needs_config = true) {
    auto* c = cmd->add_option("--config", args.config_path, "run configuration file (TOML-style)");
    if (needs_config) c->required();
    cmd->add_option("--set", args.overrides, "override a config key, e.g. --set train.steps=500");
    cmd->add_option("--seed", [&args](const std::vector<std::string>& vals) {
        args.seed = std::stoull(vals[0]);
        return true;
    }, "override the root seed");
    cmd->add_option("--out", [&args](const std::vector<std::string>& vals) {
        args.out = vals[0];
        return true;
    }, "override the output directory");
    cmd->add_option("--threads", args.threads, "worker thread count (0 = hardware)");
}

cli::RunConfig load_config(const CommonArgs& args) {
    if (args.threads > 0) set_num_threads(args.threads);
    return cli::RunConfig::load(args.config_path, args.overrides, args.seed, args.out);
}

int fail(const std::string& kind, const std::string& message) {
    nlohmann::json err{{"error", kind}, {"message", message}};
    std::cerr << err.dump() << "\n";
    return 1;
}

void print_gradcheck_table(const std::vector<GradSuiteRow>& rows) {
    std::printf("%-24s %-12s %-8s %s\n", "case", "max_rel_err", "coords", "status");
    for (const auto& r : rows)
        std::printf("%-24s %-12.3e %-8lld %s\n", r.name.c_str(), r.max_rel_err,
                    static_cast<long long>(r.checked), r.pass ? "pass" : "FAIL");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"genodiff: conditional diffusion models over PCA-embedded genotype cohorts"};
    app.require_subcommand(1);

    CommonArgs sim_args, embed_args, train_args, gen_args, eval_args, aug_args;
    auto* cmd_sim = app.add_subcommand("simulate", "simulate a labeled cohort and write splits");
    add_common(cmd_sim, sim_args);
    auto* cmd_embed = app.add_subcommand("embed", "fit per-gene PCA on the training split and encode all splits");
    add_common(cmd_embed, embed_args);
    auto* cmd_train = app.add_subcommand("train", "train the configured noise predictor");
    add_common(cmd_train, train_args);
    auto* cmd_gen = app.add_subcommand("generate", "sample synthetic embeddings and decode them");
    add_common(cmd_gen, gen_args);
    auto* cmd_eval = app.add_subcommand("evaluate", "recovery rate, NNAA, privacy and distance audits");
    add_common(cmd_eval, eval_args);
    auto* cmd_aug = app.add_subcommand("augment", "real-plus-synthetic augmentation table");
    add_common(cmd_aug, aug_args);

    auto* cmd_grad = app.add_subcommand("gradcheck", "finite-difference checks for all primitives and backbones");
    int grad_seeds = 5;
    int grad_threads = 0;
    cmd_grad->add_option("--seeds", grad_seeds, "random seeds per case");
    cmd_grad->add_option("--threads", grad_threads, "worker thread count (0 = hardware)");

    auto* cmd_report = app.add_subcommand("report", "parameter and flop accounting for model presets");
    std::vector<std::string> report_presets;
    std::string report_checkpoint;
    int64_t report_gpad = 208;
    int64_t report_classes = 2;
    cmd_report->add_option("--preset", report_presets, "preset name(s); default: all desk presets");
    cmd_report->add_option("--checkpoint", report_checkpoint, "report a trained checkpoint instead");
    cmd_report->add_option("--g-pad", report_gpad, "padded gene count for preset construction");
    cmd_report->add_option("--classes", report_classes, "label count for preset construction");

    CLI11_PARSE(app, argc, argv);

    try {
        if (cmd_sim->parsed()) {
            cli::cmd_simulate(load_config(sim_args));
            std::puts("simulate: done");
        } else if (cmd_embed->parsed()) {
            cli::cmd_embed(load_config(embed_args));
            std::puts("embed: done");
        } else if (cmd_train->parsed()) {
            cli::cmd_train(load_config(train_args));
            std::puts("train: done");
        } else if (cmd_gen->parsed()) {
            cli::cmd_generate(load_config(gen_args));
            std::puts("generate: done");
        } else if (cmd_eval->parsed()) {
            auto report = cli::cmd_evaluate(load_config(eval_args));
            std::printf("evaluate: a_r=%.4f a_s=%.4f recovery=%.4f aa_test=(%.3f, %.3f) privacy=%.4f\n",
                        report.a_r, report.a_s, report.recovery, report.aa_test.aa_truth,
                        report.aa_test.aa_syn, report.privacy_loss_avg);
        } else if (cmd_aug->parsed()) {
            auto rows = cli::cmd_augment(load_config(aug_args));
            for (const auto& r : rows)
                std::printf("augment: f=%.2f real-only=%.4f augmented=%.4f %s\n", r.fraction,
                            r.acc_real_only, r.acc_augmented, r.note.c_str());
        } else if (cmd_grad->parsed()) {
            if (grad_threads > 0) set_num_threads(grad_threads);
            auto rows = run_primitive_grad_suite(grad_seeds);
            auto backbone_rows = run_backbone_grad_suite(grad_seeds);
            rows.insert(rows.end(), backbone_rows.begin(), backbone_rows.end());
            print_gradcheck_table(rows);
            for (const auto& r : rows)
                if (!r.pass) return fail("gradcheck", "case '" + r.name + "' exceeded tolerance");
        } else if (cmd_report->parsed()) {
            if (!report_checkpoint.empty()) {
                auto model = nn::load_model(report_checkpoint);
                std::printf("%-18s %15s %18s\n", "variant", "parameters", "flops/sample");
                std::printf("%-18s %15lld %18lld\n", model->variant(),
                            static_cast<long long>(nn::count_params(*model)),
                            static_cast<long long>(nn::count_flops(*model)));
            } else {
                std::vector<std::string> names = report_presets;
                if (names.empty())
                    names = {"mlp_unet_desk", "cnn_unet_desk", "transformer_desk", "gated_desk"};
                std::printf("%-18s %15s %18s\n", "preset", "parameters", "flops/sample");
                for (const auto& name : names) {
                    auto model = nn::build_preset(name, report_gpad, report_classes, 1000, 1);
                    std::printf("%-18s %15lld %18lld\n", name.c_str(),
                                static_cast<long long>(nn::count_params(*model)),
                                static_cast<long long>(nn::count_flops(*model)));
                }
            }
        }
    } catch (const ConfigError& e) {
        return fail("config", e.what());
    } catch (const ParseError& e) {
        return fail("parse", e.what());
    } catch (const ShapeError& e) {
        return fail("shape", e.what());
    } catch (const NumericError& e) {
        return fail("numeric", e.what());
    } catch (const StratifyError& e) {
        return fail("stratify", e.what());
    } catch (const UsageError& e) {
        return fail("usage", e.what());
    } catch (const IoError& e) {
        return fail("io", e.what());
    } catch (const std::exception& e) {
        return fail("internal", e.what());
    }
    return 0;
}
