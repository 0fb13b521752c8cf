#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "r1d/attacks.hpp"
#include "r1d/models.hpp"
#include "r1d/tensor.hpp"

namespace r1d::eval {

// A labeled evaluation set. mask is optional; when defined it is the validity
// mask for variable-length inputs, shaped (N, T) or (N, 1, T).
struct LabeledData {
    Tensor x;  // (N, D) or (N, C, T)
    Tensor mask;
    std::vector<int> labels;
};

// Accuracy and macro-F1 per noise level, level 0 being the clean point.
struct RobustnessCurve {
    std::string model_name;
    std::vector<double> noise_levels;  // strictly increasing, starts at 0
    std::vector<double> accuracy;
    std::vector<double> macro_f1;
    attacks::AttackConfig attack;  // eps field varies per level
};

struct RobustnessSummary {
    double acc_clean = 0, auc = 0, acc_robust = 0;
    double f1_clean = 0, f1_auc = 0, f1_robust = 0;
    double eps_max = 0;
};

// Unweighted mean of per-class F1; a class absent from both predictions and
// labels contributes 0.
double macro_f1(const std::vector<int>& predictions, const std::vector<int>& labels,
                int num_classes);

// Trapezoidal integral of values over levels in [0, eps_max], divided by
// eps_max. eps_max must be one of the levels.
double normalized_auc(const std::vector<double>& levels, const std::vector<double>& values,
                      double eps_max);
double normalized_auc(const RobustnessCurve& curve, double eps_max);

double acc_robust(double acc_clean, double auc);  // geometric mean
double f1_robust(double f1_clean, double f1_auc);

RobustnessSummary summarize(const RobustnessCurve& curve, double eps_max);

// Attacks every sample at each noise level (clean at 0) and records accuracy
// and macro-F1. Evaluation order is fixed for reproducibility.
RobustnessCurve evaluate_curve(const models::Classifier& m, const LabeledData& data,
                               const attacks::AttackConfig& attack,
                               const std::vector<double>& noise_levels,
                               const std::string& model_name, std::size_t batch_size = 256);

// Delimited table: header "model, eps_0, ..., ACC_robust" (F1_robust for the
// F1 table), cells with 4 decimal places.
std::string report_table(const std::vector<RobustnessCurve>& curves, double eps_max, bool use_f1);

// Deterministic vector-graphics plot of the curves.
std::string report_svg(const std::vector<RobustnessCurve>& curves, bool use_f1);

// Writes accuracy_table.csv, f1_table.csv, accuracy_curves.svg, f1_curves.svg.
void render_report(const std::vector<RobustnessCurve>& curves, double eps_max,
                   const std::filesystem::path& out_dir);

}  // namespace r1d::eval
