// Command-line front end: prepare-data, train, sweep, evaluate, report, synth.
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "r1d/data.hpp"
#include "r1d/errors.hpp"
#include "r1d/rng.hpp"
#include "r1d/runner.hpp"

namespace fs = std::filesystem;
using namespace r1d;

namespace {

constexpr const char* kConfigKeys = R"(Config file (JSON object). Every key, with defaults in brackets:
  preset                    start from a named recipe: mitbih | cpsc (optional)
  seed                      experiment seed; --seed overrides [0]
  dataset.source            synth | beats_csv | recordings [synth]
  dataset.path              dataset directory (beats_csv: mitbih_train.csv +
                            mitbih_test.csv; recordings: corpus with manifest.json)
  dataset.split_seed        seed for splits, balancing, padding offsets [0]
  dataset.val_fraction      share of training data held out for validation [0.2]
  dataset.balance_train     upsample training classes to equal counts [true]
  dataset.balance_test      upsample held-out classes to equal counts [true]
  dataset.synth_train_per_class  generated training beats per class [400]
  dataset.synth_test_per_class   generated test beats per class [100]
  dataset.synth_classes     number of generated classes [5]
  dataset.synth_length      generated beat length [187]
  model.name                mlp | beat_cnn | masked_cnn [mlp]
  model.widths              custom mlp layer widths, first=input last=classes []
  model.relu_count          leading hidden activations in the custom mlp [0]
  model.masked.num_leads    masked-cnn input leads [8]
  model.masked.num_classes  masked-cnn output classes [9]
  model.masked.input_len    masked-cnn padded signal length [33792]
  model.masked.stem_channels / stem_kernel / stem_stride
                            masked-cnn stem layer shape [32 / 16 / 2]
  model.masked.block_channels / block_kernel / block_stride
                            masked-cnn residual block widths and shape
                            [[64,128,256,512] / 8 / 2]
  model.masked.gn_groups    group-norm groups [8]
  method.name               ce | nsr | jacob | adv [ce]
  method.beta               nsr regularizer weight [0]
  method.eps_delta          nsr perturbation budget in the bound [1]
  method.denom_floor        nsr denominator floor [1e-8]
  method.lambda             jacob regularizer weight [0]
  method.normalized         jacob: divide by logit magnitude [false]
  method.eps                adv training perturbation budget [0]
  method.attack_iters       adv training attack steps [0]
  method.alpha              adv training attack step size [0.01]
  method.schedule           adv budget ramp: none | linear_after_warmup [none]
  method.warmup_epochs      epochs before gated terms activate (nsr/jacob/adv) [0]
  optimizer.algorithm       adam | adamax [adam]
  optimizer.lr              learning rate [0.001]
  optimizer.epochs          training epochs [1]
  optimizer.batch_size      training batch size [128]
  eval.families             attack families: pgd | sap | white_noise [[pgd]]
  eval.attack_iters         evaluation attack steps [100]
  eval.alpha                evaluation attack step size [0.01]
  eval.noise_levels         perturbation grid, must start at 0 [[0]]
  eval.eps_max              robustness-curve integration cap, a grid point [0]
  eval.sap_width            smoothing kernel width for sap [15]
  eval.sap_sigma            smoothing kernel sigma for sap [3]
  eval.batch_size           evaluation batch size [256]

Environment: R1D_DEVICE selects the compute device; unset or "cpu" runs on CPU.)";

void check_device() {
    const char* dev = std::getenv("R1D_DEVICE");
    if (dev == nullptr) return;
    std::string d(dev);
    if (d.empty() || d == "cpu") return;
    throw ConfigError("compute device '" + d + "' is not available in this build; unset " +
                      "R1D_DEVICE or set it to 'cpu'");
}

runner::ExperimentConfig load_with_overrides(const std::string& config_path, bool seed_set,
                                             std::uint64_t seed) {
    runner::ExperimentConfig cfg = runner::load_config(config_path);
    if (seed_set) cfg.seed = seed;
    return cfg;
}

void print_summary(const char* label, const eval::RobustnessSummary& s) {
    std::printf("%s: acc_clean %.4f  auc %.4f  acc_robust %.4f  f1_robust %.4f\n", label,
                s.acc_clean, s.auc, s.acc_robust, s.f1_robust);
}

void class_counts(const char* name, const std::vector<int>& labels) {
    std::map<int, int> counts;
    for (int y : labels) ++counts[y];
    std::printf("%s: %zu samples;", name, labels.size());
    for (const auto& [cls, n] : counts) std::printf(" class %d: %d", cls, n);
    std::printf("\n");
}

int run(int argc, char** argv) {
    CLI::App app{"1-D ECG robustness workbench: trains beat/recording classifiers with "
                 "cross-entropy, noise-to-signal-ratio or Jacobian regularization, or "
                 "adversarial training, and measures accuracy under PGD, smoothed and "
                 "white-noise perturbations."};
    app.require_subcommand(1);
    app.footer(kConfigKeys);

    std::string config_path, out_dir = "out", checkpoint_path, curves_path;
    std::uint64_t seed = 0;
    bool seed_set = false;
    int checkpoint_every = 0;
    double eps_max = 0.0;
    std::vector<double> grid;
    std::size_t synth_classes = 5, synth_length = 187;
    std::size_t synth_train = 400, synth_test = 100;

    auto add_common = [&](CLI::App* sub, bool needs_config) {
        auto* c = sub->add_option("--config", config_path, "experiment config file (JSON)");
        if (needs_config) c->required();
        sub->add_option("--seed", seed, "override the config seed")
            ->each([&](const std::string&) { seed_set = true; });
        sub->add_option("--out-dir,--out", out_dir, "output directory")
            ->capture_default_str();
    };

    auto* prep = app.add_subcommand(
        "prepare-data", "load the configured dataset, report split sizes and class counts");
    add_common(prep, true);

    auto* train = app.add_subcommand(
        "train", "train one model; writes checkpoints/, records/ under --out-dir");
    add_common(train, true);
    train->add_option("--checkpoint-every", checkpoint_every,
                      "also save a checkpoint every N epochs");

    auto* sweep = app.add_subcommand(
        "sweep", "train one model per grid value, pick the best validation robustness");
    add_common(sweep, true);
    sweep->add_option("--grid", grid, "method strength parameters to sweep")
        ->required()
        ->expected(-1);

    auto* evaluate = app.add_subcommand(
        "evaluate", "attack a trained checkpoint over the eval grid; writes reports/");
    add_common(evaluate, true);
    evaluate->add_option("--checkpoint", checkpoint_path, "checkpoint file to evaluate")
        ->required();

    auto* report = app.add_subcommand(
        "report", "re-render tables and plots from a saved curves.json");
    report->add_option("--curves", curves_path, "curves.json written by evaluate")->required();
    report->add_option("--eps-max", eps_max,
                       "integration cap override; 0 reuses the stored value")
        ->capture_default_str();
    report->add_option("--out-dir,--out", out_dir, "output directory")->capture_default_str();

    auto* synth = app.add_subcommand(
        "synth", "generate a synthetic beat dataset as mitbih_train.csv + mitbih_test.csv");
    synth->add_option("--out-dir,--out", out_dir, "output directory")->capture_default_str();
    synth->add_option("--seed", seed, "generator seed")->capture_default_str();
    synth->add_option("--classes", synth_classes, "number of classes")->capture_default_str();
    synth->add_option("--length", synth_length, "beat length")->capture_default_str();
    synth->add_option("--train-per-class", synth_train, "training beats per class")
        ->capture_default_str();
    synth->add_option("--test-per-class", synth_test, "test beats per class")
        ->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    check_device();

    if (prep->parsed()) {
        runner::ExperimentConfig cfg = load_with_overrides(config_path, seed_set, seed);
        runner::DataBundle d = runner::load_dataset(cfg);
        class_counts("train", d.train.labels);
        class_counts("val", d.val.labels);
        class_counts("test", d.test.labels);
        std::printf("config hash: %s\n", runner::config_hash(cfg).c_str());
    } else if (train->parsed()) {
        runner::ExperimentConfig cfg = load_with_overrides(config_path, seed_set, seed);
        runner::RunRecord rec = runner::train(cfg, out_dir, checkpoint_every);
        std::printf("trained %s in %.1fs; loss %.4f -> %.4f\n", rec.model_name.c_str(),
                    rec.wall_seconds, rec.first_batch_loss, rec.last_batch_loss);
        print_summary("validation", rec.validation);
        std::printf("checkpoint: %s\n", rec.checkpoint_path.c_str());
    } else if (sweep->parsed()) {
        runner::ExperimentConfig cfg = load_with_overrides(config_path, seed_set, seed);
        runner::SweepResult res = runner::sweep(cfg, grid, out_dir);
        for (const auto& rec : res.records)
            std::printf("%-12s validation acc_robust %.4f\n", rec.model_name.c_str(),
                        rec.validation.acc_robust);
        std::printf("best parameter: %g\n", res.best_parameter);
    } else if (evaluate->parsed()) {
        runner::ExperimentConfig cfg = load_with_overrides(config_path, seed_set, seed);
        runner::EvaluationResult res = runner::evaluate(cfg, checkpoint_path, out_dir);
        for (std::size_t i = 0; i < res.curves.size(); ++i)
            print_summary(res.curves[i].model_name.c_str(), res.summaries[i]);
        std::printf("reports: %s\n", res.report_dir.string().c_str());
    } else if (report->parsed()) {
        runner::render_saved_curves(curves_path, eps_max, out_dir);
        std::printf("reports: %s\n", out_dir.c_str());
    } else if (synth->parsed()) {
        // The beat-file format is fixed-shape: 187 samples + a label in 0..4.
        if (synth_length != data::kBeatLength)
            throw ConfigError("beat files hold exactly " + std::to_string(data::kBeatLength) +
                              " samples; use a synth dataset source for other lengths");
        if (synth_classes < 2 || synth_classes > data::beat_class_names().size())
            throw ConfigError("beat files support 2.." +
                              std::to_string(data::beat_class_names().size()) + " classes");
        fs::create_directories(out_dir);
        auto train_beats = data::synth_beats(synth_train, synth_classes, synth_length,
                                             rng::derive_seed(seed, "synth-train"));
        auto test_beats = data::synth_beats(synth_test, synth_classes, synth_length,
                                            rng::derive_seed(seed, "synth-test"));
        data::save_beat_csv(fs::path(out_dir) / "mitbih_train.csv", train_beats);
        data::save_beat_csv(fs::path(out_dir) / "mitbih_test.csv", test_beats);
        std::printf("wrote %zu train and %zu test beats under %s\n", train_beats.size(),
                    test_beats.size(), out_dir.c_str());
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
}
