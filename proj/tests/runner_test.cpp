#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "r1d/runner.hpp"

#include "r1d/data.hpp"
#include "r1d/errors.hpp"
#include "r1d/objectives.hpp"
#include "r1d/rng.hpp"

using namespace r1d;
using runner::ExperimentConfig;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() /
               ("r1d-runner-" + std::to_string(rng::fnv1a(&path, sizeof path)) + "-" +
                std::to_string(std::rand()));
        fs::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path, ec);
    }
};

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    REQUIRE(in.good());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// Small synthetic-beat experiment that trains in well under a second.
ExperimentConfig desk_config() {
    ExperimentConfig c;
    c.seed = 7;
    c.dataset.source = runner::DatasetSource::synth;
    c.dataset.split_seed = 3;
    c.dataset.val_fraction = 0.2;
    c.dataset.synth_train_per_class = 30;
    c.dataset.synth_test_per_class = 10;
    c.dataset.synth_classes = 3;
    c.dataset.synth_length = 32;
    c.model.name = runner::ModelName::mlp;
    c.model.widths = {32, 16, 3};
    c.model.relu_count = 1;
    c.optimizer.algorithm = "adam";
    c.optimizer.lr = 0.01;
    c.optimizer.epochs = 2;
    c.optimizer.batch_size = 32;
    c.eval.families = {"pgd"};
    c.eval.attack_iters = 3;
    c.eval.alpha = 0.02;
    c.eval.noise_levels = {0.0, 0.05};
    c.eval.eps_max = 0.05;
    return c;
}

}  // namespace

TEST_CASE("model names follow the weight-prefix convention") {
    using runner::MethodKind;
    CHECK(runner::model_name(MethodKind::ce, 0.0) == "CE");
    CHECK(runner::model_name(MethodKind::nsr, 0.4) == "0.4NSR");
    CHECK(runner::model_name(MethodKind::nsr, 0.3) == "0.3NSR");
    CHECK(runner::model_name(MethodKind::nsr, 1.0) == "1.0NSR");
    CHECK(runner::model_name(MethodKind::jacob, 0.9) == "0.9Jacob");
    CHECK(runner::model_name(MethodKind::jacob, 24.0) == "24.0Jacob");
    CHECK(runner::model_name(MethodKind::adv, 0.01) == "adv0.01");
    CHECK(runner::model_name(MethodKind::adv, 0.1) == "adv0.1");

    ExperimentConfig c = desk_config();
    CHECK(runner::model_name(c) == "CE");
    c.method.kind = MethodKind::nsr;
    c.method.nsr.beta = 0.4;
    CHECK(runner::model_name(c) == "0.4NSR");
    c.method.kind = MethodKind::jacob;
    c.method.jacob.lambda = 24;
    CHECK(runner::model_name(c) == "24.0Jacob");
    c.method.kind = MethodKind::adv;
    c.method.adv.eps = 0.01;
    CHECK(runner::model_name(c) == "adv0.01");
}

TEST_CASE("beat-corpus preset pins the published training recipe") {
    ExperimentConfig c = runner::preset_mitbih();
    CHECK(c.dataset.source == runner::DatasetSource::beats_csv);
    CHECK(c.model.name == runner::ModelName::mlp);
    CHECK(c.optimizer.algorithm == "adamax");
    CHECK(c.optimizer.lr == 0.001);
    CHECK(c.optimizer.epochs == 50);
    CHECK(c.optimizer.batch_size == 128);
    CHECK(c.method.adv.attack_iters == 10);
    CHECK(c.method.nsr.warmup_epochs == 0);
    CHECK(c.method.jacob.warmup_epochs == 0);
    CHECK(c.method.adv.warmup_epochs == 0);
    CHECK(c.method.adv.schedule == objectives::AdvSchedule::none);
    CHECK(c.eval.families == std::vector<std::string>{"pgd"});
    CHECK(c.eval.attack_iters == 100);
    CHECK(c.eval.alpha == 0.01);
    CHECK(c.eval.noise_levels == std::vector<double>{0, 0.01, 0.03, 0.05, 0.1, 0.2, 0.3});
    CHECK(c.eval.eps_max == 0.1);
}

TEST_CASE("recording-corpus preset pins the published training recipe") {
    ExperimentConfig c = runner::preset_cpsc();
    CHECK(c.dataset.source == runner::DatasetSource::recordings);
    CHECK(c.model.name == runner::ModelName::masked_cnn);
    CHECK(c.optimizer.algorithm == "adam");
    CHECK(c.optimizer.lr == 0.001);
    CHECK(c.optimizer.epochs == 70);
    CHECK(c.optimizer.batch_size == 64);
    CHECK(c.method.adv.attack_iters == 20);
    CHECK(c.method.nsr.warmup_epochs == 10);
    CHECK(c.method.jacob.warmup_epochs == 10);
    CHECK(c.method.adv.warmup_epochs == 10);
    CHECK(c.method.adv.schedule == objectives::AdvSchedule::linear_after_warmup);
    CHECK(c.eval.attack_iters == 100);
    CHECK(c.eval.noise_levels ==
          std::vector<double>{0, 0.001, 0.003, 0.005, 0.007, 0.01, 0.03, 0.05, 0.1});
    CHECK(c.eval.eps_max == 0.01);
}

TEST_CASE("config parsing honors defaults, presets, and strict keys") {
    SUBCASE("minimal config gets defaults") {
        ExperimentConfig c = runner::config_from_json_text(R"({"method":{"name":"ce"}})");
        CHECK(c.dataset.source == runner::DatasetSource::synth);
        CHECK(c.method.kind == runner::MethodKind::ce);
        CHECK(c.optimizer.lr == 0.001);
        CHECK(c.seed == 0);
    }
    SUBCASE("preset plus overrides") {
        ExperimentConfig c = runner::config_from_json_text(
            R"({"preset":"mitbih","seed":11,"dataset":{"path":"/data/beats"},
                "method":{"name":"nsr","beta":0.4},"optimizer":{"epochs":3}})");
        CHECK(c.seed == 11);
        CHECK(c.dataset.path == "/data/beats");
        CHECK(c.dataset.source == runner::DatasetSource::beats_csv);
        CHECK(c.method.nsr.beta == 0.4);
        CHECK(c.optimizer.epochs == 3);
        CHECK(c.optimizer.batch_size == 128);  // untouched preset value
    }
    SUBCASE("rejections") {
        CHECK_THROWS_AS(runner::config_from_json_text("{"), ParseError);
        CHECK_THROWS_AS(runner::config_from_json_text("[1,2]"), ParseError);
        CHECK_THROWS_AS(runner::config_from_json_text(R"({"preset":"ptb"})"), ConfigError);
        CHECK_THROWS_AS(runner::config_from_json_text(R"({"method":{"name":"ce"},"extra":1})"),
                        ConfigError);
        CHECK_THROWS_AS(
            runner::config_from_json_text(R"({"dataset":{"sourc":"synth"},"method":{"name":"ce"}})"),
            ConfigError);
        // parameters are checked against the declared method
        CHECK_THROWS_AS(
            runner::config_from_json_text(R"({"method":{"name":"nsr","lambda":0.5}})"),
            ConfigError);
        CHECK_THROWS_AS(runner::config_from_json_text(R"({"method":{"beta":0.5}})"), ConfigError);
        CHECK_THROWS_AS(
            runner::config_from_json_text(R"({"method":{"name":"ce"},"optimizer":{"epochs":"five"}})"),
            ConfigError);
        CHECK_THROWS_AS(
            runner::config_from_json_text(R"({"method":{"name":"adv","schedule":"exp"}})"),
            ConfigError);
    }
}

TEST_CASE("canonical form round-trips and hashes stably") {
    ExperimentConfig c = desk_config();
    const std::string canon = runner::canonical_json(c);
    ExperimentConfig back = runner::config_from_json_text(canon);
    CHECK(runner::canonical_json(back) == canon);
    CHECK(runner::config_hash(back) == runner::config_hash(c));
    CHECK(runner::config_hash(c).size() == 16);
    for (char ch : runner::config_hash(c)) CHECK(std::isxdigit(static_cast<unsigned char>(ch)));

    ExperimentConfig other = desk_config();
    other.seed = 8;
    CHECK(runner::config_hash(other) != runner::config_hash(c));
    other = desk_config();
    other.method.kind = runner::MethodKind::nsr;
    CHECK(runner::config_hash(other) != runner::config_hash(c));
}

TEST_CASE("config files load from disk") {
    TempDir tmp;
    const fs::path file = tmp.path / "cfg.json";
    std::ofstream(file) << R"({"method":{"name":"ce"},"seed":5})";
    ExperimentConfig c = runner::load_config(file);
    CHECK(c.seed == 5);
    CHECK_THROWS_AS(runner::load_config(tmp.path / "absent.json"), IoError);
}

TEST_CASE("config validation rejects inconsistent experiments") {
    auto broken = [](auto mutate) {
        ExperimentConfig c = desk_config();
        mutate(c);
        return c;
    };
    CHECK_NOTHROW(runner::validate(desk_config()));
    CHECK_THROWS_AS(runner::validate(broken([](auto& c) { c.optimizer.epochs = 0; })),
                    ConfigError);
    CHECK_THROWS_AS(runner::validate(broken([](auto& c) { c.optimizer.batch_size = 0; })),
                    ConfigError);
    CHECK_THROWS_AS(runner::validate(broken([](auto& c) { c.optimizer.lr = 0; })), ConfigError);
    CHECK_THROWS_AS(runner::validate(broken([](auto& c) { c.optimizer.algorithm = "sgd"; })),
                    ConfigError);
    CHECK_THROWS_AS(runner::validate(broken([](auto& c) { c.dataset.val_fraction = 1.0; })),
                    ConfigError);
    CHECK_THROWS_AS(runner::validate(broken([](auto& c) { c.dataset.synth_classes = 1; })),
                    ConfigError);
    CHECK_THROWS_AS(runner::validate(broken([](auto& c) {
                        c.dataset.source = runner::DatasetSource::beats_csv;  // no path
                    })),
                    ConfigError);
    CHECK_THROWS_AS(runner::validate(broken([](auto& c) {
                        c.method.kind = runner::MethodKind::nsr;
                        c.method.nsr.beta = -0.1;
                    })),
                    ConfigError);
    CHECK_THROWS_AS(runner::validate(broken([](auto& c) {
                        c.method.kind = runner::MethodKind::nsr;
                        c.method.nsr.warmup_epochs = 2;  // epochs is 2: gated terms never run
                    })),
                    ConfigError);
    CHECK_NOTHROW(runner::validate(broken([](auto& c) {
        c.method.kind = runner::MethodKind::nsr;
        c.method.nsr.warmup_epochs = 1;
    })));
    CHECK_THROWS_AS(runner::validate(broken([](auto& c) { c.eval.families = {"fgsm"}; })),
                    ConfigError);
    CHECK_THROWS_AS(runner::validate(broken([](auto& c) { c.eval.families.clear(); })),
                    ConfigError);
    CHECK_THROWS_AS(runner::validate(broken([](auto& c) { c.eval.noise_levels = {0.01, 0.05}; })),
                    ConfigError);
    CHECK_THROWS_AS(
        runner::validate(broken([](auto& c) { c.eval.noise_levels = {0, 0.05, 0.05}; })),
        ConfigError);
    CHECK_THROWS_AS(runner::validate(broken([](auto& c) { c.eval.eps_max = 0.04; })), ConfigError);
    CHECK_THROWS_AS(runner::validate(broken([](auto& c) {
                        c.model.name = runner::ModelName::masked_cnn;
                        c.model.widths.clear();
                    })),
                    ConfigError);
    CHECK_THROWS_AS(runner::validate(broken([](auto& c) { c.model.relu_count = 2; })),
                    ConfigError);
}

TEST_CASE("synthetic dataset loading splits, balances, and shapes tensors") {
    ExperimentConfig c = desk_config();
    runner::DataBundle d = runner::load_dataset(c);
    // 90 generated beats, 20% held out, training rebalanced by upsampling.
    CHECK(d.val.x.dim(0) == 18);
    CHECK(d.val.x.dim(1) == 32);
    CHECK(d.train.x.dim(0) >= 72);
    CHECK(d.test.x.dim(0) == 30);
    std::map<int, int> counts;
    for (int y : d.train.labels) ++counts[y];
    CHECK(counts.size() == 3);
    CHECK(counts[0] == counts[1]);
    CHECK(counts[1] == counts[2]);
    CHECK(d.train.mask.size() == 0);

    runner::DataBundle again = runner::load_dataset(c);
    bool same = again.train.x.size() == d.train.x.size();
    for (std::size_t i = 0; same && i < d.train.x.size(); ++i)
        same = d.train.x.data()[i] == again.train.x.data()[i];
    CHECK(same);
}

TEST_CASE("beat-file dataset loading balances the held-out split on request") {
    TempDir tmp;
    std::vector<data::BeatSample> train, test;
    auto push = [](std::vector<data::BeatSample>& v, int label, double fill) {
        data::BeatSample s;
        s.values.assign(data::kBeatLength, fill);
        s.label = label;
        v.push_back(s);
    };
    for (int i = 0; i < 8; ++i) push(train, 0, 0.1 * i);
    for (int i = 0; i < 4; ++i) push(train, 1, 0.2 * i);
    for (int i = 0; i < 6; ++i) push(test, 0, 0.3 * i);
    for (int i = 0; i < 2; ++i) push(test, 1, 0.4 * i);
    data::save_beat_csv(tmp.path / "mitbih_train.csv", train);
    data::save_beat_csv(tmp.path / "mitbih_test.csv", test);

    ExperimentConfig c = desk_config();
    c.dataset.source = runner::DatasetSource::beats_csv;
    c.dataset.path = tmp.path.string();
    c.dataset.val_fraction = 0.25;
    c.model.widths = {data::kBeatLength, 8, 2};
    runner::DataBundle d = runner::load_dataset(c);
    CHECK(d.val.x.dim(0) == 3);  // split before balancing
    std::map<int, int> train_counts, test_counts;
    for (int y : d.train.labels) ++train_counts[y];
    for (int y : d.test.labels) ++test_counts[y];
    CHECK(train_counts[0] == train_counts[1]);
    CHECK(test_counts[0] == 6);
    CHECK(test_counts[1] == 6);

    c.dataset.balance_test = false;
    runner::DataBundle raw = runner::load_dataset(c);
    CHECK(raw.test.x.dim(0) == 8);
}

TEST_CASE("recording dataset loading pads, masks, and batches") {
    TempDir tmp;
    std::vector<data::Recording> recs;
    rng::Engine g = rng::make_engine(4);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (int cls = 0; cls < 9; ++cls) {
        for (int i = 0; i < 58; ++i) {
            data::Recording r;
            r.id = "r" + std::to_string(cls) + "_" + std::to_string(i);
            r.labels = {cls};
            const std::size_t T = 40 + std::size_t(i % 3) * 10;
            r.leads = Tensor({12, T});
            for (std::size_t k = 0; k < r.leads.size(); ++k) r.leads.data()[k] = u(g);
            recs.push_back(std::move(r));
        }
    }
    data::save_recording_corpus(tmp.path / "corpus", recs);

    ExperimentConfig c;
    c.dataset.source = runner::DatasetSource::recordings;
    c.dataset.path = (tmp.path / "corpus").string();
    c.dataset.split_seed = 9;
    c.model.name = runner::ModelName::masked_cnn;
    models::MaskedCnnConfig mc;
    mc.num_leads = 8;
    mc.num_classes = 9;
    mc.input_len = 64;
    c.model.masked = mc;
    c.eval.noise_levels = {0.0};
    c.eval.eps_max = 0.0;
    runner::DataBundle d = runner::load_dataset(c);
    // 58 recordings per class: 5 validation, 50 test, 3 train (then balanced).
    CHECK(d.val.x.dim(0) == 45);
    CHECK(d.test.x.dim(0) == 450);
    CHECK(d.train.x.dim(0) == 27);
    CHECK(d.train.x.dim(1) == 8);
    CHECK(d.train.x.dim(2) == 64);
    CHECK(d.train.mask.dim(0) == 27);
    CHECK(d.train.mask.dim(1) == 1);
    CHECK(d.train.mask.dim(2) == 64);
    for (double v : std::vector<double>(d.test.x.data(), d.test.x.data() + d.test.x.size()))
        CHECK(std::abs(v) <= 1.0);  // per-lead max-abs scaling
    // evaluation-side padding is layout-stable: left-aligned valid region
    CHECK(d.test.mask.at(0, 0, 0) == 1.0);
}

TEST_CASE("training a small model records losses and reproduces bit-for-bit") {
    TempDir tmp;
    ExperimentConfig c = desk_config();
    runner::RunRecord rec = runner::train(c, tmp.path / "a");

    CHECK(rec.model_name == "CE");
    CHECK(rec.config_hash == runner::config_hash(c));
    CHECK(rec.epoch_losses.size() == 2);
    CHECK(std::isfinite(rec.first_batch_loss));
    CHECK(rec.epoch_losses[1] < rec.epoch_losses[0]);
    CHECK(rec.last_batch_loss < rec.first_batch_loss);
    CHECK(rec.wall_seconds > 0.0);
    CHECK(rec.validation.eps_max == 0.05);
    CHECK(rec.validation.acc_clean >= 0.0);
    CHECK(rec.validation.acc_clean <= 1.0);
    CHECK(rec.validation.acc_robust <= 1.0);

    const fs::path ckpt = tmp.path / "a" / "checkpoints" / "CE.ckpt";
    const fs::path record = tmp.path / "a" / "records" / "CE.json";
    CHECK(fs::exists(ckpt));
    CHECK(fs::exists(record));
    CHECK(rec.checkpoint_path == ckpt.string());

    runner::RunRecord loaded = runner::load_run_record(record);
    CHECK(loaded.model_name == rec.model_name);
    CHECK(loaded.config_hash == rec.config_hash);
    CHECK(loaded.epoch_losses == rec.epoch_losses);
    CHECK(loaded.first_batch_loss == rec.first_batch_loss);
    CHECK(loaded.last_batch_loss == rec.last_batch_loss);
    CHECK(loaded.validation.acc_robust == rec.validation.acc_robust);

    models::Classifier m = models::load_checkpoint(ckpt.string());
    runner::DataBundle d = runner::load_dataset(c);
    std::vector<int> preds = models::predict(m, d.test.x);
    std::size_t hits = 0;
    for (std::size_t i = 0; i < preds.size(); ++i) hits += preds[i] == d.test.labels[i];
    CHECK(double(hits) / double(preds.size()) > 0.5);

    runner::RunRecord rec2 = runner::train(c, tmp.path / "b");
    CHECK(rec2.epoch_losses == rec.epoch_losses);
    CHECK(rec2.first_batch_loss == rec.first_batch_loss);
    CHECK(rec2.last_batch_loss == rec.last_batch_loss);
    CHECK(rec2.validation.acc_clean == rec.validation.acc_clean);
    CHECK(rec2.validation.acc_robust == rec.validation.acc_robust);
    CHECK(slurp(tmp.path / "b" / "checkpoints" / "CE.ckpt") == slurp(ckpt));
}

TEST_CASE("trainer feeds zero-based epochs to the objective gates") {
    TempDir tmp;
    ExperimentConfig c = desk_config();
    c.method.kind = runner::MethodKind::nsr;
    c.method.nsr.beta = 5.0;
    c.method.nsr.warmup_epochs = 1;
    c.optimizer.batch_size = 256;  // single batch per epoch
    runner::RunRecord rec = runner::train(c, tmp.path);

    // Rebuild the first training batch: the whole (shuffled) training set.
    runner::DataBundle d = runner::load_dataset(c);
    const std::size_t n = d.train.x.dim(0);
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    rng::Engine g = rng::make_engine(rng::derive_seed(c.seed, "shuffle", 1));
    rng::shuffle(order, g);
    Tensor xb({n, d.train.x.dim(1)});
    std::vector<int> yb;
    for (std::size_t i = 0; i < n; ++i) {
        yb.push_back(d.train.labels[order[i]]);
        for (std::size_t t = 0; t < d.train.x.dim(1); ++t)
            xb.at(i, t) = d.train.x.at(order[i], t);
    }
    models::Classifier m =
        models::build_custom_mlp(c.model.widths, c.model.relu_count,
                                 rng::derive_seed(c.seed, "init"));
    const double warm = objectives::nsr_loss(m, xb, yb, 0, c.method.nsr).value()[0];
    const double gated = objectives::nsr_loss(m, xb, yb, 1, c.method.nsr).value()[0];
    CHECK(rec.first_batch_loss == warm);
    CHECK(rec.first_batch_loss != gated);
}

TEST_CASE("periodic checkpointing saves intermediate epochs") {
    TempDir tmp;
    ExperimentConfig c = desk_config();
    c.optimizer.epochs = 3;
    runner::train(c, tmp.path, 1);
    CHECK(fs::exists(tmp.path / "checkpoints" / "CE-epoch1.ckpt"));
    CHECK(fs::exists(tmp.path / "checkpoints" / "CE-epoch2.ckpt"));
    CHECK(!fs::exists(tmp.path / "checkpoints" / "CE-epoch3.ckpt"));  // final is CE.ckpt
    CHECK(fs::exists(tmp.path / "checkpoints" / "CE.ckpt"));
    models::Classifier mid = models::load_checkpoint(
        (tmp.path / "checkpoints" / "CE-epoch1.ckpt").string());
    CHECK(models::parameter_count(mid) > 0);
    CHECK_THROWS_AS(runner::train(c, tmp.path, -1), ConfigError);
}

TEST_CASE("training rejects labels outside the model head") {
    TempDir tmp;
    ExperimentConfig c = desk_config();
    c.model.widths = {32, 16, 2};  // two outputs for three classes
    CHECK_THROWS_AS(runner::train(c, tmp.path), ValidationError);
}

TEST_CASE("sweep picks the strongest validation robustness") {
    TempDir tmp;
    ExperimentConfig c = desk_config();
    c.method.kind = runner::MethodKind::nsr;
    c.optimizer.epochs = 1;
    runner::SweepResult res = runner::sweep(c, {0.5, 0.0}, tmp.path);

    REQUIRE(res.records.size() == 2);
    CHECK(res.records[0].model_name == "0.5NSR");
    CHECK(res.records[1].model_name == "0.0NSR");
    CHECK(fs::exists(tmp.path / "records" / "0.5NSR.json"));
    CHECK(fs::exists(tmp.path / "records" / "0.0NSR.json"));

    const double s0 = res.records[0].validation.acc_robust;
    const double s1 = res.records[1].validation.acc_robust;
    if (s0 > s1)
        CHECK(res.best_parameter == 0.5);
    else if (s1 > s0)
        CHECK(res.best_parameter == 0.0);
    else
        CHECK(res.best_parameter == 0.0);  // ties resolve to the smaller weight

    CHECK_THROWS_AS(runner::sweep(desk_config(), {0.1}, tmp.path), ConfigError);
    CHECK_THROWS_AS(runner::sweep(c, {}, tmp.path), ConfigError);
}

TEST_CASE("evaluation writes curves, summaries, and identical re-renders") {
    TempDir tmp;
    ExperimentConfig c = desk_config();
    runner::RunRecord rec = runner::train(c, tmp.path / "run");

    SUBCASE("degenerate clean-only grid collapses to clean accuracy") {
        ExperimentConfig e = c;
        e.eval.families = {"white_noise"};
        e.eval.noise_levels = {0.0};
        e.eval.eps_max = 0.0;
        runner::EvaluationResult r =
            runner::evaluate(e, rec.checkpoint_path, tmp.path / "clean");
        REQUIRE(r.summaries.size() == 1);
        CHECK(r.summaries[0].auc == r.summaries[0].acc_clean);
        CHECK(r.summaries[0].acc_robust ==
              doctest::Approx(r.summaries[0].acc_clean).epsilon(1e-12));
    }

    SUBCASE("multi-family evaluation and byte-stable artifacts") {
        ExperimentConfig e = c;
        e.eval.families = {"pgd", "white_noise"};
        runner::EvaluationResult r = runner::evaluate(e, rec.checkpoint_path, tmp.path / "o1");
        REQUIRE(r.curves.size() == 2);
        CHECK(r.curves[0].model_name == "CE-pgd");
        CHECK(r.curves[1].model_name == "CE-white_noise");
        CHECK(r.curves[0].accuracy[0] == r.curves[1].accuracy[0]);  // clean point is shared
        for (const char* f : {"accuracy_table.csv", "f1_table.csv", "accuracy_curves.svg",
                              "f1_curves.svg", "curves.json", "summary.json"})
            CHECK(fs::exists(r.report_dir / f));

        runner::EvaluationResult r2 = runner::evaluate(e, rec.checkpoint_path, tmp.path / "o2");
        CHECK(slurp(r.report_dir / "curves.json") == slurp(r2.report_dir / "curves.json"));
        CHECK(slurp(r.report_dir / "accuracy_curves.svg") ==
              slurp(r2.report_dir / "accuracy_curves.svg"));
        CHECK(slurp(r.report_dir / "summary.json") == slurp(r2.report_dir / "summary.json"));

        TempDir other;
        runner::render_saved_curves(r.report_dir / "curves.json", 0.0, other.path);
        CHECK(slurp(other.path / "accuracy_curves.svg") ==
              slurp(r.report_dir / "accuracy_curves.svg"));
    }
}

TEST_CASE("run records survive malformed inputs with clear errors") {
    TempDir tmp;
    CHECK_THROWS_AS(runner::load_run_record(tmp.path / "none.json"), IoError);
    std::ofstream(tmp.path / "bad.json") << "{\"config_hash\": 3}";
    CHECK_THROWS_AS(runner::load_run_record(tmp.path / "bad.json"), ParseError);
    std::ofstream(tmp.path / "junk.json") << "not json";
    CHECK_THROWS_AS(runner::load_run_record(tmp.path / "junk.json"), ParseError);
    CHECK_THROWS_AS(runner::render_saved_curves(tmp.path / "junk.json", 0.1, tmp.path), ParseError);
}
