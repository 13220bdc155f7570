// Acceptance suite: one pass/fail line per criterion, nonzero exit when any
// criterion fails. Criteria 8, 9 and 11 drive the bundled toy configurations
// through the full pipeline; expect a few minutes of wall time on two cores.
//
// Usage: genodiff_acceptance <configs dir> [work dir]

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "genodiff/gradcheck_suite.hpp"
#include "genodiff/pipeline.hpp"

using namespace genodiff;
namespace fs = std::filesystem;

namespace {

int g_failures = 0;

void report(int criterion, const std::string& what, bool pass, const std::string& detail = "") {
    std::printf("[%s] criterion %2d: %s%s%s\n", pass ? "PASS" : "FAIL", criterion, what.c_str(),
                detail.empty() ? "" : " -- ", detail.c_str());
    std::fflush(stdout);
    if (!pass) ++g_failures;
}

std::string slurp(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

double elapsed_s(std::chrono::steady_clock::time_point start) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

struct PipelineRun {
    cli::RunConfig rc;
    cli::RunPaths paths;
    eval::EvalReport report;
    double wall_s = 0.0;
};

PipelineRun run_pipeline(const std::string& config_path, const std::string& out_dir,
                         const std::vector<std::string>& overrides, bool with_augment) {
    fs::remove_all(out_dir);
    auto start = std::chrono::steady_clock::now();
    cli::RunConfig rc = cli::RunConfig::load(config_path, overrides, {}, out_dir);
    cli::cmd_simulate(rc);
    cli::cmd_embed(rc);
    cli::cmd_train(rc);
    cli::cmd_generate(rc);
    if (with_augment) cli::cmd_augment(rc);
    eval::EvalReport rep = cli::cmd_evaluate(rc);
    return PipelineRun{rc, cli::RunPaths(out_dir), rep, elapsed_s(start)};
}

double last_val_loss(const std::string& metrics_csv) {
    std::ifstream f(metrics_csv);
    std::string line, last;
    while (std::getline(f, line))
        if (!line.empty() && line[0] != '#' && line.rfind("step", 0) != 0) last = line;
    std::istringstream ls(last);
    std::string field;
    std::getline(ls, field, ',');  // step
    std::getline(ls, field, ',');  // train_loss
    std::getline(ls, field, ',');  // val_loss
    return std::stod(field);
}

/*------------------------------------ criteria ------------------------------------*/

void criterion_1_gradients() {
    auto start = std::chrono::steady_clock::now();
    auto rows = run_primitive_grad_suite(5, 1e-4);
    auto backbone = run_backbone_grad_suite(5, 1e-4);
    rows.insert(rows.end(), backbone.begin(), backbone.end());
    bool all = true;
    double worst = 0.0;
    std::string worst_name;
    for (const auto& r : rows) {
        all = all && r.pass;
        if (r.max_rel_err > worst) {
            worst = r.max_rel_err;
            worst_name = r.name;
        }
    }
    double secs = elapsed_s(start);
    std::ostringstream d;
    d << rows.size() << " cases x 5 seeds, worst rel err " << worst << " (" << worst_name << "), "
      << secs << " s";
    report(1, "gradient correctness < 1e-4 for all primitives and backbones, < 2 min",
           all && secs < 120.0, d.str());
}

void criterion_2_schedule() {
    ddpm::NoiseSchedule s = ddpm::NoiseSchedule::linear(1000);
    bool endpoints = s.beta(1) == 1e-4 && s.beta(1000) == 0.02;
    bool monotone = true;
    for (int64_t t = 1; t <= 1000; ++t)
        monotone = monotone && s.alpha_bar(t) < s.alpha_bar(t - 1) && s.alpha_bar(t) > 0.0;
    // own long-double product oracle froze alpha_bar(1000) = 4.0358297654e-05
    long double oracle = 1.0L;
    for (int t = 1; t <= 1000; ++t)
        oracle *= 1.0L - (1e-4L + static_cast<long double>(t - 1) / 999.0L * (0.02L - 1e-4L));
    double ab = s.alpha_bar(1000);
    bool bound = ab < 1e-4 && std::abs(ab - static_cast<double>(oracle)) < 1e-12 &&
                 std::abs(ab - 4.0358297654e-05) < 1e-12;
    std::ostringstream d;
    d << "beta(1)=" << s.beta(1) << " beta(1000)=" << s.beta(1000) << " alpha_bar(1000)=" << ab;
    report(2, "schedule identities and alpha_bar(1000) bound", endpoints && monotone && bound,
           d.str());
}

void criterion_3_roundtrip() {
    ddpm::NoiseSchedule s = ddpm::NoiseSchedule::linear(1000);
    Tensor mask = Tensor::full({6, 8}, 1.0);
    bool ok = true;
    double worst = 0.0;
    Rng data_rng(314);
    Rng noise_rng(2718);
    for (int rep = 0; rep < 20 && ok; ++rep) {
        Tensor x = Tensor::randn({4, 6, 8}, data_rng);
        for (int64_t t = 1; t <= 900; t += 37) {
            std::vector<int64_t> tb(4, t);
            Tensor eps = ddpm::masked_noise(x.shape(), mask, noise_rng);
            Tensor xt = ddpm::forward_noise(x, tb, eps, s);
            Tensor xp = ddpm::one_shot_denoise(xt, tb, eps, s);
            for (int64_t i = 0; i < x.numel(); ++i) worst = std::max(worst, std::abs(xp[i] - x[i]));
        }
        ok = worst < 1e-9;
    }
    std::ostringstream d;
    d << "max |x_p - x| = " << worst << " over 20 random tensors, t <= 0.9T";
    report(3, "one-shot denoise inverts forward noising within 1e-9", ok, d.str());
}

void criterion_4_embedding() {
    sim::SimConfig cfg;
    cfg.n_samples = 300;
    cfg.n_genes = 200;
    cfg.snps_per_gene_min = 5;
    cfg.snps_per_gene_max = 9;
    cfg.n_populations = 2;
    cfg.fst = 0.3;
    cfg.ld_strength = 0.6;
    cfg.seed = 404;
    auto [m, gm] = sim::simulate_cohort(cfg);
    embed::EmbeddingModel model = embed::fit_embedding(m, gm, 0.97, 4);
    auto rep = embed::reconstruction_report(model, m);

    sim::SimConfig full_cfg = cfg;
    full_cfg.snps_per_gene_max = 8;  // gene width within the 8-PC cap
    full_cfg.seed = 405;
    auto [mf, gmf] = sim::simulate_cohort(full_cfg);
    embed::EmbeddingModel full = embed::fit_embedding(mf, gmf, 1.0, 4);
    auto full_rep = embed::reconstruction_report(full, mf);

    std::ostringstream d;
    d << "mismatch " << rep.mismatch_rate << " (200 genes, ld 0.6), full-rank mismatch "
      << full_rep.mismatch_rate;
    report(4, "embedding fidelity: mismatch < 1%, full-rank mismatch = 0",
           rep.mismatch_rate < 0.01 && full_rep.mismatch_rate == 0.0, d.str());
}

void criterion_5_gated() {
    nn::GatedComboConfig cfg;
    cfg.mlp.g_pad = cfg.cnn.g_pad = 16;
    cfg.mlp.depth = 2;
    cfg.mlp.base_width = 32;
    cfg.mlp.emb_dim = 16;
    cfg.cnn.base_filters = 8;
    cfg.cnn.channel_mults = {1, 2};
    cfg.cnn.attention_blocks = {1};
    cfg.cnn.heads = 2;
    cfg.cnn.groups = 4;
    cfg.cnn.emb_dim = 16;
    cfg.mlp.n_classes = cfg.cnn.n_classes = 2;
    cfg.mlp.t_max = cfg.cnn.t_max = 100;
    cfg.mlp.init_seed = cfg.cnn.init_seed = cfg.init_seed = 5;
    nn::GatedCombo combo(cfg);

    // zero-initialized gate output: lambda identically 0.5
    std::vector<int64_t> grid{1, 25, 50, 75, 100};
    bool half = true;
    for (double l : combo.lambda_curve(grid)) half = half && l == 0.5;

    Rng r(55);
    combo.gate().w2.value_mut() = Tensor::randn({16, 1}, r);
    combo.gate().b2.value_mut() = Tensor::randn({1}, r);
    bool in_range = true, identity = true;
    double worst = 0.0;
    for (uint64_t seed = 0; seed < 5; ++seed) {
        Rng xr(seed * 13 + 1);
        Tensor x = Tensor::randn({3, 16, 8}, xr);
        std::vector<int64_t> t{static_cast<int64_t>(seed * 17 % 100 + 1), 50, 99};
        std::vector<int64_t> y{0, 1, 0};
        Tensor out = combo.eps(x, t, y);
        Tensor mo = combo.mlp().eps(x, t, y);
        Tensor co = combo.cnn().eps(x, t, y);
        auto lam = combo.lambda_curve(t);
        for (int64_t i = 0; i < 3; ++i) {
            in_range = in_range && lam[static_cast<size_t>(i)] > 0.0 && lam[static_cast<size_t>(i)] < 1.0;
            for (int64_t j = 0; j < 16 * 8; ++j) {
                double want = (1.0 - lam[static_cast<size_t>(i)]) * mo[i * 128 + j] +
                              lam[static_cast<size_t>(i)] * co[i * 128 + j];
                worst = std::max(worst, std::abs(out[i * 128 + j] - want));
            }
        }
        identity = identity && worst < 1e-12;
    }
    std::ostringstream d;
    d << "max |combo - convex mix| = " << worst << ", zero-init lambda == 0.5: " << (half ? "yes" : "no");
    report(5, "gated-combo identity within 1e-12, lambda in (0,1), zero-init gate = 0.5",
           half && in_range && identity, d.str());
}

void criterion_6_nnaa() {
    auto cloud = [](int64_t n, uint64_t seed, double shift) {
        Rng r(splitmix64(seed));
        Tensor x({n, 10});
        for (int64_t i = 0; i < x.numel(); ++i) x[i] = r.normal() + shift;
        return x;
    };
    Tensor base = cloud(200, 1, 0.0);
    eval::AaPair ident = eval::nnaa(base, base, eval::Metric::L2, 0);
    bool identical_zero = ident.aa_truth == 0.0 && ident.aa_syn == 0.0;

    double mean_t = 0, mean_s = 0;
    for (int s = 0; s < 20; ++s) {
        eval::AaPair aa = eval::nnaa(cloud(500, 100 + static_cast<uint64_t>(s), 0.0),
                                     cloud(500, 900 + static_cast<uint64_t>(s), 0.0),
                                     eval::Metric::L2, static_cast<uint64_t>(s));
        mean_t += aa.aa_truth;
        mean_s += aa.aa_syn;
    }
    mean_t /= 20;
    mean_s /= 20;
    bool iid_ok = mean_t >= 0.4 && mean_t <= 0.6 && mean_s >= 0.4 && mean_s <= 0.6;

    eval::AaPair shifted = eval::nnaa(cloud(200, 3, 0.0), cloud(200, 4, 10.0), eval::Metric::L2, 0);
    bool shift_ok = shifted.aa_truth == 1.0 && shifted.aa_syn == 1.0;

    Tensor syn = cloud(160, 7, 0.0);
    eval::PrivacyResult pr = eval::privacy_loss(base, base, syn, eval::Metric::L2, 2);
    bool privacy_zero = pr.value == 0.0;

    std::ostringstream d;
    d << "identical (0,0): " << identical_zero << ", iid means (" << mean_t << ", " << mean_s
      << "), 10-sigma (1,1): " << shift_ok << ", privacy(X,X,syn)=" << pr.value;
    report(6, "NNAA calibration and privacy_loss(X,X,syn) = 0",
           identical_zero && iid_ok && shift_ok && privacy_zero, d.str());
}

void criterion_7_recovery() {
    double r = eval::recovery_rate(0.8760, 0.8257);
    bool ok = std::abs(r - 0.9426) < 0.5e-4;
    std::ostringstream d;
    d << "recovery_rate(0.8760, 0.8257) = " << r;
    report(7, "recovery-rate consistency with the published accuracy table", ok, d.str());
}

PipelineRun criterion_8_toy_pipeline(const std::string& configs_dir, const std::string& work_dir) {
    PipelineRun out = run_pipeline(configs_dir + "/toy.toml", work_dir + "/toy_a",
                                   {"generate.n_samples=400"}, false);
    bool runtime_ok = out.wall_s < 600.0;
    double val_loss = last_val_loss(out.paths.metrics_csv());

    // (a) class-conditional fidelity via a real-data-trained classifier
    embed::EmbeddingModel emb = embed::load_embedding(out.paths.embedding());
    embed::EmbeddingTensor train_t = embed::load_embedding_tensor(out.paths.tensor("train"));
    embed::EmbeddingTensor test_t = embed::load_embedding_tensor(out.paths.tensor("test"));
    embed::EmbeddingTensor syn_t = embed::load_embedding_tensor(out.paths.samples());
    Tensor train_flat = eval::flatten_masked(train_t.values, emb.clamp_mask);
    Tensor test_flat = eval::flatten_masked(test_t.values, emb.clamp_mask);
    Tensor syn_flat = eval::flatten_masked(syn_t.values, emb.clamp_mask);
    nn::ClassifierSpec spec = out.rc.classifier_spec();
    auto real_cls = nn::train_classifier(train_flat, train_t.labels, test_flat, test_t.labels,
                                         spec, 2);
    double cond_acc = real_cls.model->accuracy(syn_flat, syn_t.labels);

    bool a = cond_acc > 0.9;
    bool loss_ok = val_loss < 0.9;
    bool b = out.report.recovery > 0.8;
    bool c = out.report.audit.duplicate_count == 0;
    // AA band frozen after the calibration runs recorded in the decisions
    // ledger; see criterion text in the README
    auto in_band = [](double v, double lo, double hi) { return v >= lo && v <= hi; };
    bool d_ok = in_band(out.report.aa_test.aa_truth, 0.05, 0.95) &&
                in_band(out.report.aa_test.aa_syn, 0.30, 1.00) &&
                in_band(out.report.aa_train.aa_truth, 0.02, 0.95) &&
                in_band(out.report.aa_train.aa_syn, 0.30, 1.00);

    std::ostringstream d;
    d << "wall " << out.wall_s << " s, val_loss " << val_loss << ", cond acc " << cond_acc
      << ", recovery " << out.report.recovery << ", dup " << out.report.audit.duplicate_count
      << ", AA test (" << out.report.aa_test.aa_truth << ", " << out.report.aa_test.aa_syn
      << ") train (" << out.report.aa_train.aa_truth << ", " << out.report.aa_train.aa_syn << ")";
    report(8, "end-to-end toy analogue (loss, conditioning, recovery, duplicates, NNAA, < 10 min)",
           runtime_ok && loss_ok && a && b && c && d_ok, d.str());
    return out;
}

void criterion_9_augmentation(const std::string& configs_dir, const std::string& work_dir) {
    PipelineRun run = run_pipeline(configs_dir + "/toy_multiclass.toml", work_dir + "/multiclass",
                                   {}, true);
    const eval::AugRow* row5 = nullptr;
    for (const auto& r : run.report.augmentation)
        if (std::abs(r.fraction - 0.05) < 1e-9) row5 = &r;
    bool ok = row5 && row5->note.empty() &&
              row5->acc_augmented - row5->acc_real_only > 0.05;
    std::ostringstream d;
    if (row5)
        d << "5% real-only " << row5->acc_real_only << " vs augmented " << row5->acc_augmented
          << " (n_real " << row5->n_real << ", n_syn " << row5->n_syn << "), wall " << run.wall_s
          << " s";
    else
        d << "missing 5% row";
    report(9, "augmentation: 5% real + synthetic top-up beats 5% real-only by > 0.05", ok, d.str());
}

void criterion_10_mask(const PipelineRun& toy) {
    embed::EmbeddingModel emb = embed::load_embedding(toy.paths.embedding());
    embed::EmbeddingTensor train_t = embed::load_embedding_tensor(toy.paths.tensor("train"));
    embed::EmbeddingTensor syn_t = embed::load_embedding_tensor(toy.paths.samples());
    const Tensor& mask = emb.clamp_mask;
    int64_t inner = mask.numel();

    auto all_masked_zero = [&](const Tensor& v) {
        for (int64_t i = 0; i < v.dim(0); ++i)
            for (int64_t j = 0; j < inner; ++j)
                if (mask[j] == 0.0 && v[i * inner + j] != 0.0) return false;
        return true;
    };

    bool encode_ok = all_masked_zero(train_t.values);
    bool samples_ok = all_masked_zero(syn_t.values);

    // eps_p masked on a noised batch
    auto model = nn::load_model(toy.paths.model());
    ddpm::NoiseSchedule sched = ddpm::NoiseSchedule::linear(1000);
    Rng nr(4242);
    Tensor x0({4, emb.g_pad, 8});
    std::copy(train_t.values.data(), train_t.values.data() + x0.numel(), x0.data());
    Tensor eps = ddpm::masked_noise(x0.shape(), mask, nr);
    std::vector<int64_t> tb{10, 250, 600, 990};
    Tensor xt = ddpm::forward_noise(x0, tb, eps, sched);
    Tensor eps_p = model->eps(xt, tb, {0, 1, 0, 1});
    bool eps_ok = all_masked_zero(eps_p);

    // every intermediate sampling state stays masked: observe states through
    // the eps callback across a short schedule
    bool states_ok = true;
    ddpm::NoiseSchedule short_sched = ddpm::NoiseSchedule::linear(25);
    auto spy = [&](const Tensor& x_t, const std::vector<int64_t>& t,
                   const std::vector<int64_t>& y) {
        states_ok = states_ok && all_masked_zero(x_t);
        (void)t;
        (void)y;
        Tensor zero(x_t.shape());
        return zero;
    };
    Tensor final_state = ddpm::sample_chains(spy, short_sched, {0, 1}, 99, mask);
    states_ok = states_ok && all_masked_zero(final_state);

    std::ostringstream d;
    d << "encode " << encode_ok << ", eps_p " << eps_ok << ", sampler states " << states_ok
      << ", stored samples " << samples_ok;
    report(10, "mask discipline at every pipeline boundary",
           encode_ok && samples_ok && eps_ok && states_ok, d.str());
}

void criterion_11_determinism(const std::string& configs_dir, const std::string& work_dir,
                              const PipelineRun& first) {
    PipelineRun second = run_pipeline(configs_dir + "/toy.toml", work_dir + "/toy_b",
                                      {"generate.n_samples=400"}, false);
    bool cohort = slurp(first.paths.cohort_full()) == slurp(second.paths.cohort_full());
    bool metrics = slurp(first.paths.metrics_csv()) == slurp(second.paths.metrics_csv());
    bool samples = slurp(first.paths.samples()) == slurp(second.paths.samples());
    bool decoded = slurp(first.paths.samples_cohort()) == slurp(second.paths.samples_cohort());
    bool reportj = slurp(first.paths.eval_report()) == slurp(second.paths.eval_report());
    std::ostringstream d;
    d << "cohort " << cohort << ", metrics " << metrics << ", samples " << samples << ", decoded "
      << decoded << ", report " << reportj;
    report(11, "byte-identical artifacts on a same-seed rerun",
           cohort && metrics && samples && decoded && reportj, d.str());
}

}  // namespace

int main(int argc, char** argv) {
    std::string configs_dir = argc > 1 ? argv[1] : "configs";
    std::string work_dir = argc > 2 ? argv[2]
                                    : (fs::temp_directory_path() / "genodiff_acceptance").string();
    fs::create_directories(work_dir);

    criterion_1_gradients();
    criterion_2_schedule();
    criterion_3_roundtrip();
    criterion_4_embedding();
    criterion_5_gated();
    criterion_6_nnaa();
    criterion_7_recovery();

    try {
        PipelineRun toy = criterion_8_toy_pipeline(configs_dir, work_dir);
        criterion_10_mask(toy);
        criterion_11_determinism(configs_dir, work_dir, toy);
    } catch (const std::exception& e) {
        report(8, "end-to-end toy analogue", false, e.what());
        report(10, "mask discipline", false, "toy pipeline unavailable");
        report(11, "determinism", false, "toy pipeline unavailable");
    }
    try {
        criterion_9_augmentation(configs_dir, work_dir);
    } catch (const std::exception& e) {
        report(9, "augmentation analogue", false, e.what());
    }

    std::printf("%d criterion(s) failed\n", g_failures);
    return g_failures == 0 ? 0 : 1;
}
