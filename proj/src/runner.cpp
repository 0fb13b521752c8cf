#include "r1d/runner.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "r1d/attacks.hpp"
#include "r1d/errors.hpp"
#include "r1d/optim.hpp"
#include "r1d/rng.hpp"

namespace r1d::runner {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string read_text_file(const fs::path& file) {
    std::ifstream in(file, std::ios::binary);
    if (!in) throw IoError("cannot open '" + file.string() + "' for reading");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_text_file(const fs::path& file, const std::string& text) {
    std::ofstream out(file, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + file.string() + "' for writing");
    out << text;
    if (!out) throw IoError("short write to '" + file.string() + "'");
}

void ensure_dir(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create directory '" + dir.string() + "': " + ec.message());
}

std::string shortest(double v) {
    char buf[32];
    auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

void check_keys(const json& j, std::initializer_list<const char*> allowed, const char* where) {
    for (const auto& item : j.items()) {
        bool ok = false;
        for (const char* a : allowed) ok = ok || item.key() == a;
        if (!ok)
            throw ConfigError(std::string(where) + ": unknown key '" + item.key() + "'");
    }
}

template <class T>
void maybe(const json& j, const char* key, T& out) {
    if (j.contains(key)) {
        try {
            out = j.at(key).get<T>();
        } catch (const json::exception& e) {
            throw ConfigError(std::string("config key '") + key + "': " + e.what());
        }
    }
}

const char* source_name(DatasetSource s) {
    switch (s) {
        case DatasetSource::synth: return "synth";
        case DatasetSource::beats_csv: return "beats_csv";
        case DatasetSource::recordings: return "recordings";
    }
    throw ConfigError("bad dataset source");
}

DatasetSource source_of(const std::string& s) {
    if (s == "synth") return DatasetSource::synth;
    if (s == "beats_csv") return DatasetSource::beats_csv;
    if (s == "recordings") return DatasetSource::recordings;
    throw ConfigError("dataset.source must be synth|beats_csv|recordings, got '" + s + "'");
}

const char* method_name_str(MethodKind k) {
    switch (k) {
        case MethodKind::ce: return "ce";
        case MethodKind::nsr: return "nsr";
        case MethodKind::jacob: return "jacob";
        case MethodKind::adv: return "adv";
    }
    throw ConfigError("bad method kind");
}

MethodKind method_of(const std::string& s) {
    if (s == "ce") return MethodKind::ce;
    if (s == "nsr") return MethodKind::nsr;
    if (s == "jacob") return MethodKind::jacob;
    if (s == "adv") return MethodKind::adv;
    throw ConfigError("method.name must be ce|nsr|jacob|adv, got '" + s + "'");
}

const char* model_name_str(ModelName m) {
    switch (m) {
        case ModelName::mlp: return "mlp";
        case ModelName::beat_cnn: return "beat_cnn";
        case ModelName::masked_cnn: return "masked_cnn";
    }
    throw ConfigError("bad model name");
}

ModelName model_of(const std::string& s) {
    if (s == "mlp") return ModelName::mlp;
    if (s == "beat_cnn") return ModelName::beat_cnn;
    if (s == "masked_cnn") return ModelName::masked_cnn;
    throw ConfigError("model.name must be mlp|beat_cnn|masked_cnn, got '" + s + "'");
}

json masked_to_json(const models::MaskedCnnConfig& m) {
    return json{{"num_leads", m.num_leads},
                {"num_classes", m.num_classes},
                {"input_len", m.input_len},
                {"stem_channels", m.stem_channels},
                {"stem_kernel", m.stem_kernel},
                {"stem_stride", m.stem_stride},
                {"block_channels", m.block_channels},
                {"block_kernel", m.block_kernel},
                {"block_stride", m.block_stride},
                {"gn_groups", m.gn_groups}};
}

models::MaskedCnnConfig masked_from_json(const json& j) {
    check_keys(j,
               {"num_leads", "num_classes", "input_len", "stem_channels", "stem_kernel",
                "stem_stride", "block_channels", "block_kernel", "block_stride", "gn_groups"},
               "model.masked");
    models::MaskedCnnConfig m;
    maybe(j, "num_leads", m.num_leads);
    maybe(j, "num_classes", m.num_classes);
    maybe(j, "input_len", m.input_len);
    maybe(j, "stem_channels", m.stem_channels);
    maybe(j, "stem_kernel", m.stem_kernel);
    maybe(j, "stem_stride", m.stem_stride);
    maybe(j, "block_channels", m.block_channels);
    maybe(j, "block_kernel", m.block_kernel);
    maybe(j, "block_stride", m.block_stride);
    maybe(j, "gn_groups", m.gn_groups);
    return m;
}

}  // namespace

ExperimentConfig preset_mitbih() {
    ExperimentConfig c;
    c.dataset.source = DatasetSource::beats_csv;
    c.model.name = ModelName::mlp;
    c.optimizer.algorithm = "adamax";
    c.optimizer.lr = 0.001;
    c.optimizer.epochs = 50;
    c.optimizer.batch_size = 128;
    c.method.adv.attack_iters = 10;  // training attack strictly weaker than evaluation
    c.method.adv.alpha = 0.01;
    c.eval.families = {"pgd"};
    c.eval.attack_iters = 100;
    c.eval.alpha = 0.01;
    c.eval.noise_levels = {0, 0.01, 0.03, 0.05, 0.1, 0.2, 0.3};
    c.eval.eps_max = 0.1;
    return c;
}

ExperimentConfig preset_cpsc() {
    ExperimentConfig c;
    c.dataset.source = DatasetSource::recordings;
    c.model.name = ModelName::masked_cnn;
    c.optimizer.algorithm = "adam";
    c.optimizer.lr = 0.001;
    c.optimizer.epochs = 70;
    c.optimizer.batch_size = 64;
    c.method.nsr.warmup_epochs = 10;  // gated terms first active at epoch 11
    c.method.jacob.warmup_epochs = 10;
    c.method.adv.attack_iters = 20;
    c.method.adv.alpha = 0.01;
    c.method.adv.warmup_epochs = 10;
    c.method.adv.schedule = objectives::AdvSchedule::linear_after_warmup;
    c.eval.families = {"pgd"};
    c.eval.attack_iters = 100;
    c.eval.alpha = 0.01;
    c.eval.noise_levels = {0, 0.001, 0.003, 0.005, 0.007, 0.01, 0.03, 0.05, 0.1};
    c.eval.eps_max = 0.01;
    return c;
}

ExperimentConfig config_from_json_text(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw ParseError(std::string("config: ") + e.what());
    }
    if (!j.is_object()) throw ParseError("config: top-level JSON object expected");
    check_keys(j, {"preset", "seed", "dataset", "model", "method", "optimizer", "eval"}, "config");

    ExperimentConfig cfg;
    if (j.contains("preset")) {
        std::string p = j.at("preset").get<std::string>();
        if (p == "mitbih")
            cfg = preset_mitbih();
        else if (p == "cpsc")
            cfg = preset_cpsc();
        else
            throw ConfigError("preset must be mitbih|cpsc, got '" + p + "'");
    }
    maybe(j, "seed", cfg.seed);

    if (j.contains("dataset")) {
        const json& d = j.at("dataset");
        check_keys(d,
                   {"source", "path", "split_seed", "val_fraction", "balance_train",
                    "balance_test", "synth_train_per_class", "synth_test_per_class",
                    "synth_classes", "synth_length"},
                   "dataset");
        if (d.contains("source")) cfg.dataset.source = source_of(d.at("source").get<std::string>());
        maybe(d, "path", cfg.dataset.path);
        maybe(d, "split_seed", cfg.dataset.split_seed);
        maybe(d, "val_fraction", cfg.dataset.val_fraction);
        maybe(d, "balance_train", cfg.dataset.balance_train);
        maybe(d, "balance_test", cfg.dataset.balance_test);
        maybe(d, "synth_train_per_class", cfg.dataset.synth_train_per_class);
        maybe(d, "synth_test_per_class", cfg.dataset.synth_test_per_class);
        maybe(d, "synth_classes", cfg.dataset.synth_classes);
        maybe(d, "synth_length", cfg.dataset.synth_length);
    }
    if (j.contains("model")) {
        const json& m = j.at("model");
        check_keys(m, {"name", "widths", "relu_count", "masked"}, "model");
        if (m.contains("name")) cfg.model.name = model_of(m.at("name").get<std::string>());
        maybe(m, "widths", cfg.model.widths);
        maybe(m, "relu_count", cfg.model.relu_count);
        if (m.contains("masked")) cfg.model.masked = masked_from_json(m.at("masked"));
    }
    if (j.contains("method")) {
        const json& m = j.at("method");
        if (!m.contains("name")) throw ConfigError("method: missing 'name'");
        cfg.method.kind = method_of(m.at("name").get<std::string>());
        switch (cfg.method.kind) {
            case MethodKind::ce: check_keys(m, {"name"}, "method(ce)"); break;
            case MethodKind::nsr:
                check_keys(m, {"name", "beta", "eps_delta", "warmup_epochs", "denom_floor"},
                           "method(nsr)");
                maybe(m, "beta", cfg.method.nsr.beta);
                maybe(m, "eps_delta", cfg.method.nsr.eps_delta);
                maybe(m, "warmup_epochs", cfg.method.nsr.warmup_epochs);
                maybe(m, "denom_floor", cfg.method.nsr.denom_floor);
                break;
            case MethodKind::jacob:
                check_keys(m, {"name", "lambda", "normalized", "warmup_epochs"}, "method(jacob)");
                maybe(m, "lambda", cfg.method.jacob.lambda);
                maybe(m, "normalized", cfg.method.jacob.normalized);
                maybe(m, "warmup_epochs", cfg.method.jacob.warmup_epochs);
                break;
            case MethodKind::adv: {
                check_keys(m, {"name", "eps", "attack_iters", "alpha", "warmup_epochs", "schedule"},
                           "method(adv)");
                maybe(m, "eps", cfg.method.adv.eps);
                maybe(m, "attack_iters", cfg.method.adv.attack_iters);
                maybe(m, "alpha", cfg.method.adv.alpha);
                maybe(m, "warmup_epochs", cfg.method.adv.warmup_epochs);
                if (m.contains("schedule")) {
                    std::string s = m.at("schedule").get<std::string>();
                    if (s == "none")
                        cfg.method.adv.schedule = objectives::AdvSchedule::none;
                    else if (s == "linear_after_warmup")
                        cfg.method.adv.schedule = objectives::AdvSchedule::linear_after_warmup;
                    else
                        throw ConfigError("method.schedule must be none|linear_after_warmup");
                }
                break;
            }
        }
    }
    if (j.contains("optimizer")) {
        const json& o = j.at("optimizer");
        check_keys(o, {"algorithm", "lr", "epochs", "batch_size"}, "optimizer");
        maybe(o, "algorithm", cfg.optimizer.algorithm);
        maybe(o, "lr", cfg.optimizer.lr);
        maybe(o, "epochs", cfg.optimizer.epochs);
        maybe(o, "batch_size", cfg.optimizer.batch_size);
    }
    if (j.contains("eval")) {
        const json& e = j.at("eval");
        check_keys(e,
                   {"families", "attack_iters", "alpha", "noise_levels", "eps_max", "sap_width",
                    "sap_sigma", "batch_size"},
                   "eval");
        maybe(e, "families", cfg.eval.families);
        maybe(e, "attack_iters", cfg.eval.attack_iters);
        maybe(e, "alpha", cfg.eval.alpha);
        maybe(e, "noise_levels", cfg.eval.noise_levels);
        maybe(e, "eps_max", cfg.eval.eps_max);
        maybe(e, "sap_width", cfg.eval.sap_width);
        maybe(e, "sap_sigma", cfg.eval.sap_sigma);
        maybe(e, "batch_size", cfg.eval.batch_size);
    }
    validate(cfg);
    return cfg;
}

ExperimentConfig load_config(const fs::path& file) {
    return config_from_json_text(read_text_file(file));
}

std::string canonical_json(const ExperimentConfig& cfg) {
    json j;
    j["seed"] = cfg.seed;
    j["dataset"] = {{"source", source_name(cfg.dataset.source)},
                    {"path", cfg.dataset.path},
                    {"split_seed", cfg.dataset.split_seed},
                    {"val_fraction", cfg.dataset.val_fraction},
                    {"balance_train", cfg.dataset.balance_train},
                    {"balance_test", cfg.dataset.balance_test},
                    {"synth_train_per_class", cfg.dataset.synth_train_per_class},
                    {"synth_test_per_class", cfg.dataset.synth_test_per_class},
                    {"synth_classes", cfg.dataset.synth_classes},
                    {"synth_length", cfg.dataset.synth_length}};
    j["model"] = {{"name", model_name_str(cfg.model.name)},
                  {"widths", cfg.model.widths},
                  {"relu_count", cfg.model.relu_count}};
    if (cfg.model.masked) j["model"]["masked"] = masked_to_json(*cfg.model.masked);
    json m{{"name", method_name_str(cfg.method.kind)}};
    switch (cfg.method.kind) {
        case MethodKind::ce: break;
        case MethodKind::nsr:
            m["beta"] = cfg.method.nsr.beta;
            m["eps_delta"] = cfg.method.nsr.eps_delta;
            m["warmup_epochs"] = cfg.method.nsr.warmup_epochs;
            m["denom_floor"] = cfg.method.nsr.denom_floor;
            break;
        case MethodKind::jacob:
            m["lambda"] = cfg.method.jacob.lambda;
            m["normalized"] = cfg.method.jacob.normalized;
            m["warmup_epochs"] = cfg.method.jacob.warmup_epochs;
            break;
        case MethodKind::adv:
            m["eps"] = cfg.method.adv.eps;
            m["attack_iters"] = cfg.method.adv.attack_iters;
            m["alpha"] = cfg.method.adv.alpha;
            m["warmup_epochs"] = cfg.method.adv.warmup_epochs;
            m["schedule"] = cfg.method.adv.schedule == objectives::AdvSchedule::none
                                ? "none"
                                : "linear_after_warmup";
            break;
    }
    j["method"] = m;
    j["optimizer"] = {{"algorithm", cfg.optimizer.algorithm},
                      {"lr", cfg.optimizer.lr},
                      {"epochs", cfg.optimizer.epochs},
                      {"batch_size", cfg.optimizer.batch_size}};
    j["eval"] = {{"families", cfg.eval.families},
                 {"attack_iters", cfg.eval.attack_iters},
                 {"alpha", cfg.eval.alpha},
                 {"noise_levels", cfg.eval.noise_levels},
                 {"eps_max", cfg.eval.eps_max},
                 {"sap_width", cfg.eval.sap_width},
                 {"sap_sigma", cfg.eval.sap_sigma},
                 {"batch_size", cfg.eval.batch_size}};
    return j.dump();
}

std::string config_hash(const ExperimentConfig& cfg) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx",
                  static_cast<unsigned long long>(rng::fnv1a(canonical_json(cfg))));
    return buf;
}

void validate(const ExperimentConfig& cfg) {
    if (cfg.optimizer.algorithm != "adam" && cfg.optimizer.algorithm != "adamax")
        throw ConfigError("optimizer.algorithm must be adam|adamax, got '" +
                          cfg.optimizer.algorithm + "'");
    if (cfg.optimizer.epochs < 1) throw ConfigError("optimizer.epochs must be positive");
    if (cfg.optimizer.batch_size < 1) throw ConfigError("optimizer.batch_size must be positive");
    if (!(cfg.optimizer.lr > 0)) throw ConfigError("optimizer.lr must be positive");
    if (!(cfg.dataset.val_fraction > 0 && cfg.dataset.val_fraction < 1))
        throw ConfigError("dataset.val_fraction must lie in (0, 1)");
    if (cfg.dataset.source != DatasetSource::synth && cfg.dataset.path.empty())
        throw ConfigError("dataset.path required for non-synthetic sources");
    if (cfg.dataset.source == DatasetSource::synth && cfg.dataset.synth_classes < 2)
        throw ConfigError("dataset.synth_classes must be at least 2");

    int warmup = 0;
    switch (cfg.method.kind) {
        case MethodKind::ce: break;
        case MethodKind::nsr:
            if (cfg.method.nsr.beta < 0) throw ConfigError("method.beta must be non-negative");
            warmup = cfg.method.nsr.warmup_epochs;
            break;
        case MethodKind::jacob:
            if (cfg.method.jacob.lambda < 0)
                throw ConfigError("method.lambda must be non-negative");
            warmup = cfg.method.jacob.warmup_epochs;
            break;
        case MethodKind::adv:
            if (cfg.method.adv.eps < 0) throw ConfigError("method.eps must be non-negative");
            if (cfg.method.adv.attack_iters < 0)
                throw ConfigError("method.attack_iters must be non-negative");
            warmup = cfg.method.adv.warmup_epochs;
            break;
    }
    if (warmup < 0) throw ConfigError("method.warmup_epochs must be non-negative");
    if (warmup > 0 && cfg.optimizer.epochs <= warmup)
        throw ConfigError("optimizer.epochs (" + std::to_string(cfg.optimizer.epochs) +
                          ") must exceed method.warmup_epochs (" + std::to_string(warmup) + ")");

    for (const auto& f : cfg.eval.families)
        if (f != "pgd" && f != "sap" && f != "white_noise")
            throw ConfigError("eval.families entries must be pgd|sap|white_noise, got '" + f +
                              "'");
    if (cfg.eval.families.empty()) throw ConfigError("eval.families must not be empty");
    if (cfg.eval.attack_iters < 0) throw ConfigError("eval.attack_iters must be non-negative");
    if (cfg.eval.noise_levels.empty() || cfg.eval.noise_levels[0] != 0.0)
        throw ConfigError("eval.noise_levels must start with the clean point 0");
    for (std::size_t i = 1; i < cfg.eval.noise_levels.size(); ++i)
        if (!(cfg.eval.noise_levels[i] > cfg.eval.noise_levels[i - 1]))
            throw ConfigError("eval.noise_levels must be strictly increasing");
    bool found = false;
    for (double l : cfg.eval.noise_levels) found = found || l == cfg.eval.eps_max;
    if (!found) throw ConfigError("eval.eps_max must be one of eval.noise_levels");
    if (cfg.eval.batch_size < 1) throw ConfigError("eval.batch_size must be positive");

    if (cfg.model.name == ModelName::masked_cnn && cfg.dataset.source != DatasetSource::recordings)
        throw ConfigError("model masked_cnn requires dataset.source recordings");
    if (cfg.model.name != ModelName::masked_cnn && cfg.dataset.source == DatasetSource::recordings)
        throw ConfigError("dataset.source recordings requires model masked_cnn");
    if (!cfg.model.widths.empty()) {
        if (cfg.model.name != ModelName::mlp)
            throw ConfigError("model.widths applies only to the mlp model");
        if (cfg.model.widths.size() < 2)
            throw ConfigError("model.widths needs at least input and output sizes");
        if (cfg.model.relu_count + 1 >= cfg.model.widths.size())
            throw ConfigError("model.relu_count must be below the number of affine layers");
    }
}

std::string model_name(MethodKind kind, double parameter) {
    auto weight = [](double p) {
        if (p == std::floor(p) && std::abs(p) < 1e15) {
            char buf[32];
            std::snprintf(buf, sizeof buf, "%.1f", p);
            return std::string(buf);
        }
        return shortest(p);
    };
    switch (kind) {
        case MethodKind::ce: return "CE";
        case MethodKind::nsr: return weight(parameter) + "NSR";
        case MethodKind::jacob: return weight(parameter) + "Jacob";
        case MethodKind::adv: return "adv" + shortest(parameter);
    }
    throw ConfigError("bad method kind");
}

std::string model_name(const ExperimentConfig& cfg) {
    switch (cfg.method.kind) {
        case MethodKind::ce: return model_name(MethodKind::ce, 0.0);
        case MethodKind::nsr: return model_name(MethodKind::nsr, cfg.method.nsr.beta);
        case MethodKind::jacob: return model_name(MethodKind::jacob, cfg.method.jacob.lambda);
        case MethodKind::adv: return model_name(MethodKind::adv, cfg.method.adv.eps);
    }
    throw ConfigError("bad method kind");
}

namespace {

json summary_to_json(const eval::RobustnessSummary& s) {
    return json{{"acc_clean", s.acc_clean},   {"auc", s.auc},       {"acc_robust", s.acc_robust},
                {"f1_clean", s.f1_clean},     {"f1_auc", s.f1_auc}, {"f1_robust", s.f1_robust},
                {"eps_max", s.eps_max}};
}

eval::RobustnessSummary summary_from_json(const json& j) {
    eval::RobustnessSummary s;
    s.acc_clean = j.at("acc_clean").get<double>();
    s.auc = j.at("auc").get<double>();
    s.acc_robust = j.at("acc_robust").get<double>();
    s.f1_clean = j.at("f1_clean").get<double>();
    s.f1_auc = j.at("f1_auc").get<double>();
    s.f1_robust = j.at("f1_robust").get<double>();
    s.eps_max = j.at("eps_max").get<double>();
    return s;
}

}  // namespace

void save_run_record(const fs::path& file, const RunRecord& rec) {
    json j{{"config_hash", rec.config_hash},
           {"model_name", rec.model_name},
           {"epoch_losses", rec.epoch_losses},
           {"first_batch_loss", rec.first_batch_loss},
           {"last_batch_loss", rec.last_batch_loss},
           {"checkpoint_path", rec.checkpoint_path},
           {"validation", summary_to_json(rec.validation)},
           {"wall_seconds", rec.wall_seconds}};
    write_text_file(file, j.dump(2) + "\n");
}

RunRecord load_run_record(const fs::path& file) {
    RunRecord rec;
    try {
        json j = json::parse(read_text_file(file));
        rec.config_hash = j.at("config_hash").get<std::string>();
        rec.model_name = j.at("model_name").get<std::string>();
        rec.epoch_losses = j.at("epoch_losses").get<std::vector<double>>();
        rec.first_batch_loss = j.at("first_batch_loss").get<double>();
        rec.last_batch_loss = j.at("last_batch_loss").get<double>();
        rec.checkpoint_path = j.at("checkpoint_path").get<std::string>();
        rec.validation = summary_from_json(j.at("validation"));
        rec.wall_seconds = j.at("wall_seconds").get<double>();
    } catch (const json::exception& e) {
        throw ParseError(file.filename().string() + ": " + std::string(e.what()));
    }
    return rec;
}

namespace {

eval::LabeledData beats_to_data(const std::vector<data::BeatSample>& beats) {
    if (beats.empty()) throw ValidationError("empty beat dataset");
    const std::size_t L = beats[0].values.size();
    eval::LabeledData d;
    d.x = Tensor({beats.size(), L});
    for (std::size_t n = 0; n < beats.size(); ++n) {
        if (beats[n].values.size() != L)
            throw ValidationError("inconsistent beat lengths in dataset");
        d.labels.push_back(beats[n].label);
        for (std::size_t t = 0; t < L; ++t) d.x.at(n, t) = beats[n].values[t];
    }
    return d;
}

eval::LabeledData recordings_to_data(const std::vector<data::Recording>& recs,
                                     std::size_t target_len, data::PadMode mode,
                                     std::uint64_t seed) {
    std::vector<data::MaskedSample> padded;
    for (const auto& rec : recs)
        padded.push_back(data::pad_and_mask(data::scale_leads_maxabs(rec), target_len, mode, seed));
    data::MaskedBatch batch = data::make_masked_batch(padded);
    eval::LabeledData d;
    d.x = std::move(batch.signals);
    d.mask = std::move(batch.mask);
    d.labels = std::move(batch.labels);
    return d;
}

}  // namespace

DataBundle load_dataset(const ExperimentConfig& cfg) {
    const DatasetBlock& ds = cfg.dataset;
    DataBundle out;
    switch (ds.source) {
        case DatasetSource::synth: {
            auto train_all =
                data::synth_beats(ds.synth_train_per_class, ds.synth_classes, ds.synth_length,
                                  rng::derive_seed(ds.split_seed, "synth-train"));
            auto [tr, val] = data::split_train_val(train_all, ds.val_fraction, ds.split_seed);
            if (ds.balance_train) tr = data::balance_by_upsampling(tr, ds.split_seed);
            auto test = data::synth_beats(ds.synth_test_per_class, ds.synth_classes,
                                          ds.synth_length,
                                          rng::derive_seed(ds.split_seed, "synth-test"));
            out.train = beats_to_data(tr);
            out.val = beats_to_data(val);
            out.test = beats_to_data(test);
            break;
        }
        case DatasetSource::beats_csv: {
            auto train_all = data::load_beat_dataset(ds.path, data::BeatSplit::train);
            auto [tr, val] = data::split_train_val(train_all, ds.val_fraction, ds.split_seed);
            if (ds.balance_train) tr = data::balance_by_upsampling(tr, ds.split_seed);
            auto test = data::load_beat_dataset(ds.path, data::BeatSplit::test);
            if (ds.balance_test)
                test = data::balance_by_upsampling(test,
                                                   rng::derive_seed(ds.split_seed, "test"));
            out.train = beats_to_data(tr);
            out.val = beats_to_data(val);
            out.test = beats_to_data(test);
            break;
        }
        case DatasetSource::recordings: {
            auto recs = data::load_recording_corpus(ds.path);
            auto splits = data::prepare_cpsc_corpus(recs, ds.split_seed);
            const std::size_t target =
                cfg.model.masked ? cfg.model.masked->input_len : data::kCpscPadLength;
            out.train = recordings_to_data(splits.train, target, data::PadMode::train_random,
                                           ds.split_seed);
            out.val = recordings_to_data(splits.val, target, data::PadMode::eval_left,
                                         ds.split_seed);
            out.test = recordings_to_data(splits.test, target, data::PadMode::eval_left,
                                          ds.split_seed);
            break;
        }
    }
    return out;
}

namespace {

models::Classifier build_model(const ExperimentConfig& cfg) {
    const std::uint64_t seed = rng::derive_seed(cfg.seed, "init");
    switch (cfg.model.name) {
        case ModelName::mlp:
            return cfg.model.widths.empty()
                       ? models::build_mlp(seed)
                       : models::build_custom_mlp(cfg.model.widths, cfg.model.relu_count, seed);
        case ModelName::beat_cnn: return models::build_beat_cnn(seed);
        case ModelName::masked_cnn:
            return cfg.model.masked ? models::build_masked_cnn(*cfg.model.masked, seed)
                                    : models::build_masked_cnn(seed);
    }
    throw ConfigError("bad model name");
}

Tensor gather_rows(const Tensor& t, const std::vector<std::size_t>& order, std::size_t b0,
                   std::size_t b1) {
    std::vector<std::size_t> shape = t.shape();
    const std::size_t per = t.size() / shape[0];
    shape[0] = b1 - b0;
    Tensor out(shape);
    for (std::size_t i = b0; i < b1; ++i)
        std::copy(t.data() + order[i] * per, t.data() + (order[i] + 1) * per,
                  out.data() + (i - b0) * per);
    return out;
}

attacks::AttackConfig family_config(const EvalBlock& e, const std::string& family,
                                    std::uint64_t seed) {
    attacks::AttackConfig a;
    a.iters = e.attack_iters;
    a.alpha = e.alpha;
    a.seed = seed;
    if (family == "pgd") {
        a.family = attacks::AttackFamily::pgd;
    } else if (family == "sap") {
        a.family = attacks::AttackFamily::sap;
        a.smooth.enabled = true;
        a.smooth.width = e.sap_width;
        a.smooth.sigma = e.sap_sigma;
    } else if (family == "white_noise") {
        a.family = attacks::AttackFamily::white_noise;
    } else {
        throw ConfigError("unknown attack family '" + family + "'");
    }
    return a;
}

}  // namespace

RunRecord train(const ExperimentConfig& cfg, const fs::path& out_dir, int checkpoint_every) {
    validate(cfg);
    if (checkpoint_every < 0) throw ConfigError("checkpoint_every must be non-negative");
    const auto t0 = std::chrono::steady_clock::now();
    DataBundle data = load_dataset(cfg);
    models::Classifier m = build_model(cfg);

    const std::size_t N = data.train.x.dim(0);
    for (int y : data.train.labels)
        if (y < 0 || std::size_t(y) >= m.spec.num_classes)
            throw ValidationError("training label " + std::to_string(y) +
                                  " outside the model's " +
                                  std::to_string(m.spec.num_classes) + " classes");
    if (cfg.method.kind == MethodKind::adv &&
        cfg.method.adv.attack_iters >= cfg.eval.attack_iters)
        std::fprintf(stderr,
                     "warning: training attack (%d iterations) is not weaker than the "
                     "evaluation attack (%d iterations)\n",
                     cfg.method.adv.attack_iters, cfg.eval.attack_iters);

    std::vector<ad::Var> params;
    for (auto& p : m.params) params.push_back(p.var);
    optim::AdamConfig ocfg;
    ocfg.lr = cfg.optimizer.lr;
    optim::Adam opt(params, ocfg,
                    cfg.optimizer.algorithm == "adamax" ? optim::AdamKind::adamax
                                                        : optim::AdamKind::adam);

    Tensor train_mask;  // (N, T) view when the dataset is masked
    if (data.train.mask.size() > 0)
        train_mask = data.train.mask.reshaped({N, data.train.mask.dim(2)});

    attacks::AttackConfig adv_cfg;
    adv_cfg.iters = cfg.method.adv.attack_iters;
    adv_cfg.alpha = cfg.method.adv.alpha;
    adv_cfg.seed = rng::derive_seed(cfg.seed, "adv-train");

    RunRecord rec;
    rec.config_hash = config_hash(cfg);
    rec.model_name = model_name(cfg);

    m.train_mode = true;
    const int epochs = cfg.optimizer.epochs;
    for (int epoch = 1; epoch <= epochs; ++epoch) {
        std::vector<std::size_t> order(N);
        for (std::size_t i = 0; i < N; ++i) order[i] = i;
        rng::Engine g = rng::make_engine(rng::derive_seed(cfg.seed, "shuffle", epoch));
        rng::shuffle(order, g);

        double loss_sum = 0.0;
        std::size_t batches = 0;
        for (std::size_t b0 = 0; b0 < N; b0 += cfg.optimizer.batch_size) {
            const std::size_t b1 = std::min(N, b0 + cfg.optimizer.batch_size);
            Tensor xb = gather_rows(data.train.x, order, b0, b1);
            std::vector<int> yb;
            for (std::size_t i = b0; i < b1; ++i) yb.push_back(data.train.labels[order[i]]);
            Tensor mb;
            const Tensor* mp = nullptr;
            if (train_mask.size() > 0) {
                mb = gather_rows(train_mask, order, b0, b1);
                mp = &mb;
            }

            ad::Var loss;
            switch (cfg.method.kind) {
                case MethodKind::ce: loss = objectives::ce_loss(m, xb, yb, mp); break;
                case MethodKind::nsr:
                    loss = objectives::nsr_loss(m, xb, yb, epoch - 1, cfg.method.nsr, mp);
                    break;
                case MethodKind::jacob:
                    loss = objectives::jacob_loss(m, xb, yb, epoch - 1, cfg.method.jacob, mp);
                    break;
                case MethodKind::adv: {
                    objectives::Attacker attacker = [&](const Tensor& x,
                                                        const std::vector<int>& labels,
                                                        double eps) {
                        attacks::AttackConfig c = adv_cfg;
                        c.eps = eps;
                        m.train_mode = false;
                        Tensor adv;
                        try {
                            adv = attacks::attack_batch(m, x, labels, c, mp);
                        } catch (...) {
                            m.train_mode = true;
                            throw;
                        }
                        m.train_mode = true;
                        return adv;
                    };
                    loss = objectives::adv_loss(m, xb, yb, epoch - 1, cfg.method.adv, attacker,
                                                epochs, mp);
                    break;
                }
            }
            const double value = loss.value()[0];
            if (!std::isfinite(value))
                throw Error("training diverged: non-finite loss at epoch " +
                            std::to_string(epoch) + ", batch " + std::to_string(batches + 1));
            if (epoch == 1 && batches == 0) rec.first_batch_loss = value;
            rec.last_batch_loss = value;
            loss_sum += value;
            ++batches;

            std::vector<Tensor> grads;
            for (auto& gv : ad::grad(loss, params)) grads.push_back(gv.value());
            opt.step(grads);
        }
        rec.epoch_losses.push_back(loss_sum / double(batches));
        if (checkpoint_every > 0 && epoch % checkpoint_every == 0 && epoch < epochs) {
            ensure_dir(out_dir / "checkpoints");
            models::save_checkpoint(
                m, (out_dir / "checkpoints" /
                    (rec.model_name + "-epoch" + std::to_string(epoch) + ".ckpt"))
                       .string());
        }
    }
    m.train_mode = false;

    ensure_dir(out_dir / "checkpoints");
    ensure_dir(out_dir / "records");
    const fs::path ckpt = out_dir / "checkpoints" / (rec.model_name + ".ckpt");
    models::save_checkpoint(m, ckpt.string());
    rec.checkpoint_path = ckpt.string();

    attacks::AttackConfig val_atk =
        family_config(cfg.eval, "pgd", rng::derive_seed(cfg.seed, "eval-val"));
    eval::RobustnessCurve curve =
        eval::evaluate_curve(m, data.val, val_atk, cfg.eval.noise_levels, rec.model_name,
                             cfg.eval.batch_size);
    rec.validation = eval::summarize(curve, cfg.eval.eps_max);

    rec.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    save_run_record(out_dir / "records" / (rec.model_name + ".json"), rec);
    return rec;
}

SweepResult sweep(const ExperimentConfig& base, const std::vector<double>& grid,
                  const fs::path& out_dir) {
    if (grid.empty()) throw ConfigError("sweep: empty parameter grid");
    if (base.method.kind == MethodKind::ce)
        throw ConfigError("sweep: method ce has no parameter to sweep");
    SweepResult result;
    bool have_best = false;
    double best_score = 0.0;
    for (double p : grid) {
        ExperimentConfig cfg = base;
        switch (cfg.method.kind) {
            case MethodKind::nsr: cfg.method.nsr.beta = p; break;
            case MethodKind::jacob: cfg.method.jacob.lambda = p; break;
            case MethodKind::adv: cfg.method.adv.eps = p; break;
            case MethodKind::ce: break;
        }
        RunRecord rec = train(cfg, out_dir);
        const double score = rec.validation.acc_robust;
        if (!have_best || score > best_score ||
            (score == best_score && p < result.best_parameter)) {
            have_best = true;
            best_score = score;
            result.best_parameter = p;
        }
        result.records.push_back(std::move(rec));
    }
    return result;
}

namespace {

json curve_to_json(const eval::RobustnessCurve& c, const std::string& family) {
    return json{{"model_name", c.model_name},
                {"family", family},
                {"noise_levels", c.noise_levels},
                {"accuracy", c.accuracy},
                {"macro_f1", c.macro_f1}};
}

eval::RobustnessCurve curve_from_json(const json& j) {
    eval::RobustnessCurve c;
    c.model_name = j.at("model_name").get<std::string>();
    c.noise_levels = j.at("noise_levels").get<std::vector<double>>();
    c.accuracy = j.at("accuracy").get<std::vector<double>>();
    c.macro_f1 = j.at("macro_f1").get<std::vector<double>>();
    return c;
}

}  // namespace

EvaluationResult evaluate(const ExperimentConfig& cfg, const fs::path& checkpoint,
                          const fs::path& out_dir) {
    validate(cfg);
    models::Classifier m = models::load_checkpoint(checkpoint.string());
    DataBundle data = load_dataset(cfg);
    const std::string name = model_name(cfg);

    EvaluationResult result;
    json curves_json = json::array();
    json summaries_json = json::array();
    for (const auto& family : cfg.eval.families) {
        attacks::AttackConfig atk =
            family_config(cfg.eval, family, rng::derive_seed(cfg.seed, "eval-" + family));
        eval::RobustnessCurve curve =
            eval::evaluate_curve(m, data.test, atk, cfg.eval.noise_levels, name + "-" + family,
                                 cfg.eval.batch_size);
        eval::RobustnessSummary summary = eval::summarize(curve, cfg.eval.eps_max);
        curves_json.push_back(curve_to_json(curve, family));
        json sj = summary_to_json(summary);
        sj["family"] = family;
        summaries_json.push_back(sj);
        result.curves.push_back(std::move(curve));
        result.summaries.push_back(summary);
    }

    result.report_dir = out_dir / "reports" / name;
    ensure_dir(result.report_dir);
    eval::render_report(result.curves, cfg.eval.eps_max, result.report_dir);
    write_text_file(result.report_dir / "curves.json",
                    json{{"eps_max", cfg.eval.eps_max}, {"curves", curves_json}}.dump(2) + "\n");
    write_text_file(result.report_dir / "summary.json", summaries_json.dump(2) + "\n");
    return result;
}

void render_saved_curves(const fs::path& curves_file, double eps_max, const fs::path& out_dir) {
    json j;
    try {
        j = json::parse(read_text_file(curves_file));
    } catch (const json::exception& e) {
        throw ParseError(curves_file.filename().string() + ": " + std::string(e.what()));
    }
    std::vector<eval::RobustnessCurve> curves;
    try {
        for (const auto& cj : j.at("curves")) curves.push_back(curve_from_json(cj));
        if (eps_max <= 0.0) eps_max = j.at("eps_max").get<double>();
    } catch (const json::exception& e) {
        throw ParseError(curves_file.filename().string() + ": " + std::string(e.what()));
    }
    eval::render_report(curves, eps_max, out_dir);
}

}  // namespace r1d::runner
