#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "r1d/data.hpp"
#include "r1d/eval.hpp"
#include "r1d/models.hpp"
#include "r1d/objectives.hpp"

namespace r1d::runner {

enum class DatasetSource { synth, beats_csv, recordings };
enum class MethodKind { ce, nsr, jacob, adv };
enum class ModelName { mlp, beat_cnn, masked_cnn };

struct DatasetBlock {
    DatasetSource source = DatasetSource::synth;
    std::string path;                // beats_csv / recordings root
    std::uint64_t split_seed = 0;    // corpus split and padding draws
    double val_fraction = 0.2;       // beat-level train/val carve-out
    bool balance_train = true;       // upsample training classes
    bool balance_test = true;        // upsample the beat-level test set too
    std::size_t synth_train_per_class = 400;
    std::size_t synth_test_per_class = 100;
    std::size_t synth_classes = 5;
    std::size_t synth_length = 187;
};

struct ModelBlock {
    ModelName name = ModelName::mlp;
    // mlp: optional custom layer widths (input..output) with ReLU count
    std::vector<std::size_t> widths;
    std::size_t relu_count = 0;
    // masked_cnn: desk-scale overrides of the default architecture
    std::optional<models::MaskedCnnConfig> masked;
};

struct MethodBlock {
    MethodKind kind = MethodKind::ce;
    objectives::NsrConfig nsr;
    objectives::JacobConfig jacob;
    objectives::AdvConfig adv;
};

struct OptimizerBlock {
    std::string algorithm = "adam";  // adam | adamax
    double lr = 0.001;
    int epochs = 1;
    std::size_t batch_size = 128;
};

struct EvalBlock {
    std::vector<std::string> families{"pgd"};  // subset of pgd|sap|white_noise
    int attack_iters = 100;
    double alpha = 0.01;
    std::vector<double> noise_levels{0.0};
    double eps_max = 0.0;
    std::size_t sap_width = 15;
    double sap_sigma = 3.0;
    std::size_t batch_size = 256;
};

struct ExperimentConfig {
    std::uint64_t seed = 0;
    DatasetBlock dataset;
    ModelBlock model;
    MethodBlock method;
    OptimizerBlock optimizer;
    EvalBlock eval;
};

// Training presets: Adamax lr 0.001, 50 epochs, batch 128, 10-PGD adversarial
// budget, eps_max 0.1 grid for the beat-level corpus; Adam lr 0.001,
// 70 epochs, batch 64, 20-PGD, eps_max 0.01 grid for the recording corpus.
ExperimentConfig preset_mitbih();
ExperimentConfig preset_cpsc();

ExperimentConfig config_from_json_text(const std::string& text);
ExperimentConfig load_config(const std::filesystem::path& file);
std::string canonical_json(const ExperimentConfig& cfg);  // defaults materialized, sorted keys
std::string config_hash(const ExperimentConfig& cfg);     // hex digest of the canonical form
void validate(const ExperimentConfig& cfg);

// "CE", "<beta>NSR", "<lambda>Jacob", "adv<eps>"; integral regularizer
// weights keep one decimal (24 -> "24.0").
std::string model_name(MethodKind kind, double parameter);
std::string model_name(const ExperimentConfig& cfg);

struct RunRecord {
    std::string config_hash;
    std::string model_name;
    std::vector<double> epoch_losses;  // mean batch loss per epoch
    double first_batch_loss = 0.0;
    double last_batch_loss = 0.0;
    std::string checkpoint_path;
    eval::RobustnessSummary validation;
    double wall_seconds = 0.0;
};

void save_run_record(const std::filesystem::path& file, const RunRecord& rec);
RunRecord load_run_record(const std::filesystem::path& file);

// Trains per the config, writes checkpoints/<name>.ckpt and
// records/<name>.json under out_dir, and scores the validation split with the
// eval block. Deterministic for a fixed config and seed. A positive
// checkpoint_every additionally saves <name>-epochE.ckpt every that many epochs.
RunRecord train(const ExperimentConfig& cfg, const std::filesystem::path& out_dir,
                int checkpoint_every = 0);

struct SweepResult {
    double best_parameter = 0.0;
    std::vector<RunRecord> records;
};

// Trains one model per grid value (the method's strength parameter), selects
// the best validation ACC_robust; ties go to the smaller parameter.
SweepResult sweep(const ExperimentConfig& base, const std::vector<double>& grid,
                  const std::filesystem::path& out_dir);

struct EvaluationResult {
    std::vector<eval::RobustnessCurve> curves;  // one per attack family
    std::vector<eval::RobustnessSummary> summaries;
    std::filesystem::path report_dir;
};

// Loads the checkpoint, attacks the test split over the eval grid for each
// configured family, and renders report artifacts plus curves.json and
// summary.json under out_dir/reports/<name>/.
EvaluationResult evaluate(const ExperimentConfig& cfg, const std::filesystem::path& checkpoint,
                          const std::filesystem::path& out_dir);

// Re-renders report artifacts from a persisted curves.json.
void render_saved_curves(const std::filesystem::path& curves_file, double eps_max,
                         const std::filesystem::path& out_dir);

// Loads the configured dataset; used by train/evaluate and the CLI.
struct DataBundle {
    eval::LabeledData train, val, test;
};
DataBundle load_dataset(const ExperimentConfig& cfg);

}  // namespace r1d::runner
