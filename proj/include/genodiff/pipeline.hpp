#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "config.hpp"
#include "diffusion.hpp"
#include "evaluate.hpp"
#include "manifest.hpp"

namespace genodiff {
namespace cli {

namespace fs = std::filesystem;

struct RunPaths {
    fs::path out;
    explicit RunPaths(const std::string& out_dir) : out(out_dir) {}

    std::string cohort_full() const { return (out / "cohort_full.cohort").string(); }
    std::string cohort(const char* split) const {
        return (out / (std::string("cohort_") + split + ".cohort")).string();
    }
    std::string embedding() const { return (out / "embedding.embed").string(); }
    std::string tensor(const char* split) const {
        return (out / (std::string("tensor_") + split + ".embtensor")).string();
    }
    std::string model() const { return (out / "model.ckpt").string(); }
    std::string metrics_csv() const { return (out / "metrics.csv").string(); }
    std::string loss_vs_noise_csv() const { return (out / "loss_vs_noise.csv").string(); }
    std::string lambda_csv() const { return (out / "lambda_curve.csv").string(); }
    std::string samples() const { return (out / "samples.embtensor").string(); }
    std::string samples_cohort() const { return (out / "samples.cohort").string(); }
    std::string eval_report() const { return (out / "eval_report.json").string(); }
    std::string augmentation_csv() const { return (out / "augmentation.csv").string(); }
    std::string projection_csv() const { return (out / "projection.csv").string(); }
    std::string manifest() const { return (out / "run_manifest.json").string(); }
};

namespace detail {

inline void require_input(const std::string& path, const char* producer) {
    if (!fs::exists(path))
        throw UsageError("missing input " + path + " (run " + producer + " first)");
}

inline void check_hash(const std::string& embedded, const std::string& expected,
                       const std::string& path) {
    if (!embedded.empty() && embedded != expected)
        throw UsageError("config hash mismatch for " + path + ": artifact was produced by config " +
                         embedded + ", current config is " + expected);
}

// per-class chain labels proportional to the training label distribution,
// largest remainder rounding
inline std::vector<int64_t> proportional_labels(const std::vector<int64_t>& train_y,
                                                int64_t n_classes, int64_t total) {
    std::vector<int64_t> counts(static_cast<size_t>(n_classes), 0);
    for (int64_t y : train_y) ++counts[static_cast<size_t>(y)];
    auto n_train = static_cast<double>(train_y.size());
    std::vector<int64_t> want(static_cast<size_t>(n_classes), 0);
    std::vector<double> frac(static_cast<size_t>(n_classes), 0.0);
    int64_t assigned = 0;
    for (int64_t c = 0; c < n_classes; ++c) {
        double exact = static_cast<double>(counts[static_cast<size_t>(c)]) / n_train *
                       static_cast<double>(total);
        want[static_cast<size_t>(c)] = static_cast<int64_t>(std::floor(exact + 1e-12));
        frac[static_cast<size_t>(c)] = exact - std::floor(exact + 1e-12);
        assigned += want[static_cast<size_t>(c)];
    }
    while (assigned < total) {
        int64_t best = 0;
        for (int64_t c = 1; c < n_classes; ++c)
            if (frac[static_cast<size_t>(c)] > frac[static_cast<size_t>(best)] + 1e-12) best = c;
        ++want[static_cast<size_t>(best)];
        frac[static_cast<size_t>(best)] = -1.0;
        ++assigned;
    }
    std::vector<int64_t> labels;
    labels.reserve(static_cast<size_t>(total));
    for (int64_t c = 0; c < n_classes; ++c)
        labels.insert(labels.end(), static_cast<size_t>(want[static_cast<size_t>(c)]), c);
    return labels;
}

}  // namespace detail

/*------------------------------------ stages --------------------------------------*/

inline void cmd_simulate(const RunConfig& rc) {
    RunPaths paths(rc.out_dir);
    fs::create_directories(paths.out);
    RunManifest manifest(paths.manifest(), rc.config_hash);
    StageTimer timer;

    auto [matrix, gene_map] = sim::simulate_cohort(rc.sim_config());
    auto parts = sim::split_dataset(matrix, rc.split_fractions(), substream_seed(rc.seed, "split"));
    sim::write_cohort(paths.cohort_full(), matrix, gene_map, rc.config_hash);
    sim::write_cohort(paths.cohort("train"), parts[0], gene_map, rc.config_hash);
    sim::write_cohort(paths.cohort("val"), parts[1], gene_map, rc.config_hash);
    sim::write_cohort(paths.cohort("test"), parts[2], gene_map, rc.config_hash);
    manifest.record_stage("simulate", {},
                          {paths.cohort_full(), paths.cohort("train"), paths.cohort("val"),
                           paths.cohort("test")},
                          timer.wall_ms());
}

inline void cmd_embed(const RunConfig& rc) {
    RunPaths paths(rc.out_dir);
    RunManifest manifest(paths.manifest(), rc.config_hash);
    StageTimer timer;
    for (const char* split : {"train", "val", "test"}) {
        detail::require_input(paths.cohort(split), "simulate");
        manifest.verify_input(paths.cohort(split));
    }
    auto train = sim::read_cohort(paths.cohort("train"));
    detail::check_hash(train.config_hash, rc.config_hash, paths.cohort("train"));

    embed::EmbeddingModel model =
        embed::fit_embedding(train.matrix, train.gene_map, rc.variance_target(), rc.embed_depth());
    embed::save_embedding(paths.embedding(), model, rc.config_hash);

    for (const char* split : {"train", "val", "test"}) {
        auto file = sim::read_cohort(paths.cohort(split));
        detail::check_hash(file.config_hash, rc.config_hash, paths.cohort(split));
        embed::EmbeddingTensor tensor = embed::encode(model, file.matrix);
        embed::save_embedding_tensor(paths.tensor(split), tensor, rc.config_hash);
    }
    manifest.record_stage("embed",
                          {paths.cohort("train"), paths.cohort("val"), paths.cohort("test")},
                          {paths.embedding(), paths.tensor("train"), paths.tensor("val"),
                           paths.tensor("test")},
                          timer.wall_ms());
}

inline void cmd_train(const RunConfig& rc) {
    RunPaths paths(rc.out_dir);
    RunManifest manifest(paths.manifest(), rc.config_hash);
    StageTimer timer;
    detail::require_input(paths.embedding(), "embed");
    detail::require_input(paths.tensor("train"), "embed");
    detail::require_input(paths.tensor("val"), "embed");
    manifest.verify_input(paths.embedding());
    manifest.verify_input(paths.tensor("train"));
    manifest.verify_input(paths.tensor("val"));

    std::string hash;
    embed::EmbeddingModel emb = embed::load_embedding(paths.embedding(), &hash);
    detail::check_hash(hash, rc.config_hash, paths.embedding());
    embed::EmbeddingTensor train_t = embed::load_embedding_tensor(paths.tensor("train"), &hash);
    detail::check_hash(hash, rc.config_hash, paths.tensor("train"));
    embed::EmbeddingTensor val_t = embed::load_embedding_tensor(paths.tensor("val"), &hash);
    detail::check_hash(hash, rc.config_hash, paths.tensor("val"));

    ddpm::TrainConfig tc = rc.train_config();
    auto n_classes = static_cast<int64_t>(train_t.label_names.size());
    auto model = nn::build_preset(rc.train_preset(), emb.g_pad, n_classes, tc.t_steps,
                                  substream_seed(rc.seed, "init"), emb.depth);
    if (auto* combo = dynamic_cast<nn::GatedCombo*>(model.get()))
        combo->set_clamp_mask_all(emb.clamp_mask);
    else
        model->set_clamp_mask(emb.clamp_mask);

    ddpm::NoiseSchedule sched = ddpm::NoiseSchedule::linear(tc.t_steps, tc.beta_first, tc.beta_last);
    auto metrics = ddpm::train(*model, train_t.values, train_t.labels, val_t.values, val_t.labels,
                               sched, tc, emb.clamp_mask);

    nn::save_model(paths.model(), *model, rc.config_hash);
    {
        std::ofstream f(paths.metrics_csv(), std::ios::binary);
        if (!f) throw IoError("train: cannot write metrics CSV");
        f << "#confighash " << rc.config_hash << "\n";
        f << "step,train_loss,val_loss,val_reconstruction_error\n";
        for (const auto& row : metrics)
            f << row.step << ',' << eval::fmt_double(row.train_loss) << ','
              << eval::fmt_double(row.val_loss) << ',' << eval::fmt_double(row.val_recon_error)
              << "\n";
    }
    {
        auto bins = ddpm::loss_vs_noise_report(*model, val_t.values, val_t.labels, sched, 10,
                                               emb.clamp_mask, substream_seed(rc.seed, "lvn"));
        std::ofstream f(paths.loss_vs_noise_csv(), std::ios::binary);
        f << "#confighash " << rc.config_hash << "\n";
        f << "t_lo,t_hi,mean_reconstruction_error,count\n";
        for (const auto& b : bins)
            f << b.t_lo << ',' << b.t_hi << ',' << eval::fmt_double(b.mean_recon_error) << ','
              << b.count << "\n";
    }
    std::vector<std::string> outputs{paths.model(), paths.metrics_csv(), paths.loss_vs_noise_csv()};
    if (auto* combo = dynamic_cast<nn::GatedCombo*>(model.get())) {
        std::vector<int64_t> grid;
        for (int64_t t = 1; t <= tc.t_steps; t += std::max<int64_t>(1, tc.t_steps / 50))
            grid.push_back(t);
        auto lam = combo->lambda_curve(grid);
        std::ofstream f(paths.lambda_csv(), std::ios::binary);
        f << "#confighash " << rc.config_hash << "\n";
        f << "t,lambda\n";
        for (size_t i = 0; i < grid.size(); ++i)
            f << grid[i] << ',' << eval::fmt_double(lam[i]) << "\n";
        outputs.push_back(paths.lambda_csv());
    }
    manifest.record_stage("train",
                          {paths.embedding(), paths.tensor("train"), paths.tensor("val")}, outputs,
                          timer.wall_ms());
}

inline void cmd_generate(const RunConfig& rc) {
    RunPaths paths(rc.out_dir);
    RunManifest manifest(paths.manifest(), rc.config_hash);
    StageTimer timer;
    detail::require_input(paths.model(), "train");
    detail::require_input(paths.embedding(), "embed");
    detail::require_input(paths.tensor("train"), "embed");
    manifest.verify_input(paths.model());

    std::string hash;
    auto model = nn::load_model(paths.model(), &hash);
    detail::check_hash(hash, rc.config_hash, paths.model());
    embed::EmbeddingModel emb = embed::load_embedding(paths.embedding());
    embed::EmbeddingTensor train_t = embed::load_embedding_tensor(paths.tensor("train"));

    int64_t total = rc.generate_n();
    std::vector<int64_t> labels;
    if (auto fixed = rc.generate_label()) {
        if (*fixed < 0 || *fixed >= model->n_classes())
            throw ConfigError("generate: label " + std::to_string(*fixed) + " outside [0, " +
                              std::to_string(model->n_classes()) + ")");
        labels.assign(static_cast<size_t>(total), *fixed);
    } else if (rc.generate_per_class()) {
        labels = detail::proportional_labels(train_t.labels, model->n_classes(), total);
    } else {
        labels.assign(static_cast<size_t>(total), model->null_label());
    }

    ddpm::TrainConfig tc = rc.train_config();
    ddpm::NoiseSchedule sched = ddpm::NoiseSchedule::linear(tc.t_steps, tc.beta_first, tc.beta_last);
    embed::EmbeddingTensor samples;
    samples.values = ddpm::sample_chains(model->eps_fn(), sched, labels,
                                         substream_seed(rc.seed, "sample"), emb.clamp_mask);
    samples.standardized = true;
    samples.labels = labels;
    samples.label_names = train_t.label_names;
    embed::save_embedding_tensor(paths.samples(), samples, rc.config_hash);

    sim::GenotypeMatrix decoded = embed::decode(emb, samples);
    sim::write_cohort(paths.samples_cohort(), decoded, emb.gene_map, rc.config_hash);
    manifest.record_stage("generate", {paths.model(), paths.embedding(), paths.tensor("train")},
                          {paths.samples(), paths.samples_cohort()}, timer.wall_ms());
}

inline eval::EvalReport cmd_evaluate(const RunConfig& rc) {
    RunPaths paths(rc.out_dir);
    RunManifest manifest(paths.manifest(), rc.config_hash);
    StageTimer timer;
    detail::require_input(paths.tensor("train"), "embed");
    detail::require_input(paths.tensor("test"), "embed");
    detail::require_input(paths.samples(), "generate");
    detail::require_input(paths.embedding(), "embed");
    manifest.verify_input(paths.samples());

    std::string hash;
    embed::EmbeddingModel emb = embed::load_embedding(paths.embedding(), &hash);
    detail::check_hash(hash, rc.config_hash, paths.embedding());
    embed::EmbeddingTensor train_t = embed::load_embedding_tensor(paths.tensor("train"));
    embed::EmbeddingTensor test_t = embed::load_embedding_tensor(paths.tensor("test"));
    embed::EmbeddingTensor syn_t = embed::load_embedding_tensor(paths.samples(), &hash);
    detail::check_hash(hash, rc.config_hash, paths.samples());

    // distance metrics run in the standardized embedding space over real
    // positions; classification defaults to the same space, with raw-digit
    // classification behind the evaluate.raw_space flag
    Tensor train_flat = eval::flatten_masked(train_t.values, emb.clamp_mask);
    Tensor test_flat = eval::flatten_masked(test_t.values, emb.clamp_mask);
    Tensor syn_flat = eval::flatten_masked(syn_t.values, emb.clamp_mask);

    eval::EvalOptions opts;
    opts.classifier = rc.classifier_spec();
    opts.metric = rc.eval_metric();
    opts.seed = substream_seed(rc.seed, "evaluate");
    auto n_classes = static_cast<int64_t>(train_t.label_names.size());

    eval::EvalReport report;
    if (rc.eval_raw_space()) {
        auto as_real = [](const sim::GenotypeMatrix& m) {
            Tensor x({m.n_samples, m.n_snps});
            for (int64_t i = 0; i < x.numel(); ++i)
                x[i] = static_cast<double>(m.values[static_cast<size_t>(i)]);
            return x;
        };
        auto train_c = sim::read_cohort(paths.cohort("train"));
        auto test_c = sim::read_cohort(paths.cohort("test"));
        auto syn_c = sim::read_cohort(paths.samples_cohort());
        nn::ClassifierSpec spec = opts.classifier;
        auto real_cls = nn::train_classifier(as_real(train_c.matrix), train_c.matrix.labels,
                                             as_real(test_c.matrix), test_c.matrix.labels, spec,
                                             n_classes);
        auto syn_cls = nn::train_classifier(as_real(syn_c.matrix), syn_c.matrix.labels,
                                            as_real(test_c.matrix), test_c.matrix.labels, spec,
                                            n_classes);
        report.a_r = real_cls.val_accuracy;
        report.a_s = syn_cls.val_accuracy;
        report.recovery = eval::recovery_rate(report.a_r, report.a_s);
        report.aa_test = eval::nnaa(test_flat, syn_flat, opts.metric, opts.seed);
        report.aa_train = eval::nnaa(train_flat, syn_flat, opts.metric, opts.seed);
        eval::PrivacyResult pr =
            eval::privacy_loss(train_flat, test_flat, syn_flat, opts.metric, opts.seed);
        report.privacy_loss_avg = pr.value;
        report.privacy_loss_truth_only = pr.value_truth_only;
        report.audit = eval::distance_audit(train_flat, syn_flat);
    } else {
        report = eval::evaluate_synthetic(train_flat, train_t.labels, test_flat, test_t.labels,
                                          syn_flat, syn_t.labels, n_classes, opts);
    }

    // fold in augmentation rows if that stage already ran
    if (fs::exists(paths.augmentation_csv())) {
        std::ifstream f(paths.augmentation_csv());
        std::string line;
        while (std::getline(f, line)) {
            if (line.empty() || line[0] == '#' || line.rfind("fraction", 0) == 0) continue;
            eval::AugRow row;
            std::istringstream ls(line);
            std::string field;
            std::getline(ls, field, ',');
            row.fraction = std::stod(field);
            std::getline(ls, field, ',');
            row.n_real = std::stoll(field);
            std::getline(ls, field, ',');
            row.n_syn = std::stoll(field);
            std::getline(ls, field, ',');
            row.acc_real_only = std::stod(field);
            std::getline(ls, field, ',');
            row.acc_augmented = std::stod(field);
            std::getline(ls, row.note);
            report.augmentation.push_back(row);
        }
    }

    nlohmann::json j = report.to_json();
    j["config_hash"] = rc.config_hash;
    {
        std::ofstream f(paths.eval_report(), std::ios::binary);
        if (!f) throw IoError("evaluate: cannot write report");
        f << j.dump(2) << "\n";
    }
    std::vector<std::string> outputs{paths.eval_report()};
    if (rc.eval_projection()) {
        auto points = eval::project_2pc(
            {{"train", train_flat}, {"test", test_flat}, {"synthetic", syn_flat}});
        eval::write_projection_csv(paths.projection_csv(), points);
        outputs.push_back(paths.projection_csv());
    }
    manifest.record_stage("evaluate",
                          {paths.tensor("train"), paths.tensor("test"), paths.samples()}, outputs,
                          timer.wall_ms());
    return report;
}

inline std::vector<eval::AugRow> cmd_augment(const RunConfig& rc) {
    RunPaths paths(rc.out_dir);
    RunManifest manifest(paths.manifest(), rc.config_hash);
    StageTimer timer;
    detail::require_input(paths.tensor("train"), "embed");
    detail::require_input(paths.tensor("test"), "embed");
    detail::require_input(paths.samples(), "generate");
    detail::require_input(paths.embedding(), "embed");

    embed::EmbeddingModel emb = embed::load_embedding(paths.embedding());
    embed::EmbeddingTensor train_t = embed::load_embedding_tensor(paths.tensor("train"));
    embed::EmbeddingTensor test_t = embed::load_embedding_tensor(paths.tensor("test"));
    std::string hash;
    embed::EmbeddingTensor syn_t = embed::load_embedding_tensor(paths.samples(), &hash);
    detail::check_hash(hash, rc.config_hash, paths.samples());

    Tensor train_flat = eval::flatten_masked(train_t.values, emb.clamp_mask);
    Tensor test_flat = eval::flatten_masked(test_t.values, emb.clamp_mask);
    Tensor syn_flat = eval::flatten_masked(syn_t.values, emb.clamp_mask);

    auto n_classes = static_cast<int64_t>(train_t.label_names.size());
    auto rows = eval::augmentation_experiment(train_flat, train_t.labels, syn_flat, syn_t.labels,
                                              test_flat, test_t.labels, rc.augment_fractions(),
                                              rc.classifier_spec(), n_classes);
    eval::write_augmentation_csv(paths.augmentation_csv(), rows, rc.config_hash);
    manifest.record_stage("augment",
                          {paths.tensor("train"), paths.tensor("test"), paths.samples()},
                          {paths.augmentation_csv()}, timer.wall_ms());
    return rows;
}

}  // namespace cli
}  // namespace genodiff
