#include "r1d/eval.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "r1d/errors.hpp"

namespace r1d::eval {

namespace {

std::string num(double v) {
    char buf[32];
    auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

std::string fixed4(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4f", v);
    return buf;
}

void check_levels(const std::vector<double>& levels) {
    if (levels.empty() || levels[0] != 0.0)
        throw ContractViolation("noise levels must start with the clean point 0");
    for (std::size_t i = 1; i < levels.size(); ++i)
        if (!(levels[i] > levels[i - 1]))
            throw ContractViolation("noise levels must be strictly increasing");
}

Tensor slice_rows(const Tensor& t, std::size_t b0, std::size_t b1) {
    std::vector<std::size_t> shape = t.shape();
    const std::size_t per = t.size() / shape[0];
    shape[0] = b1 - b0;
    Tensor out(shape);
    std::copy(t.data() + b0 * per, t.data() + b1 * per, out.data());
    return out;
}

}  // namespace

double macro_f1(const std::vector<int>& predictions, const std::vector<int>& labels,
                int num_classes) {
    if (predictions.size() != labels.size())
        throw ContractViolation("macro_f1: prediction/label count mismatch");
    if (num_classes < 1) throw ContractViolation("macro_f1: need at least one class");
    std::vector<double> tp(num_classes, 0), fp(num_classes, 0), fn(num_classes, 0);
    for (std::size_t i = 0; i < labels.size(); ++i) {
        int p = predictions[i], y = labels[i];
        if (p < 0 || p >= num_classes || y < 0 || y >= num_classes)
            throw ContractViolation("macro_f1: class index outside [0, num_classes)");
        if (p == y) {
            tp[y] += 1;
        } else {
            fp[p] += 1;
            fn[y] += 1;
        }
    }
    double sum = 0.0;
    for (int c = 0; c < num_classes; ++c) {
        double denom = 2 * tp[c] + fp[c] + fn[c];
        sum += denom > 0 ? 2 * tp[c] / denom : 0.0;  // absent class scores 0
    }
    return sum / double(num_classes);
}

double normalized_auc(const std::vector<double>& levels, const std::vector<double>& values,
                      double eps_max) {
    check_levels(levels);
    if (levels.size() != values.size())
        throw ContractViolation("normalized_auc: level/value count mismatch");
    std::size_t last = levels.size();
    for (std::size_t i = 0; i < levels.size(); ++i)
        if (levels[i] == eps_max) last = i;
    if (last == levels.size())
        throw ContractViolation("normalized_auc: eps_max " + num(eps_max) +
                                " is not one of the noise levels");
    if (eps_max == 0.0) return values[0];  // degenerate clean-only window
    double area = 0.0;
    for (std::size_t i = 0; i < last; ++i)
        area += 0.5 * (values[i] + values[i + 1]) * (levels[i + 1] - levels[i]);
    return area / eps_max;
}

double normalized_auc(const RobustnessCurve& curve, double eps_max) {
    return normalized_auc(curve.noise_levels, curve.accuracy, eps_max);
}

double acc_robust(double acc_clean, double auc) {
    if (acc_clean < 0 || acc_clean > 1 || auc < 0 || auc > 1)
        throw ContractViolation("acc_robust: arguments must lie in [0, 1]");
    return std::sqrt(acc_clean * auc);
}

double f1_robust(double f1_clean, double f1_auc) { return acc_robust(f1_clean, f1_auc); }

RobustnessSummary summarize(const RobustnessCurve& curve, double eps_max) {
    RobustnessSummary s;
    s.eps_max = eps_max;
    s.acc_clean = curve.accuracy.at(0);
    s.auc = normalized_auc(curve.noise_levels, curve.accuracy, eps_max);
    s.acc_robust = acc_robust(s.acc_clean, s.auc);
    s.f1_clean = curve.macro_f1.at(0);
    s.f1_auc = normalized_auc(curve.noise_levels, curve.macro_f1, eps_max);
    s.f1_robust = f1_robust(s.f1_clean, s.f1_auc);
    return s;
}

RobustnessCurve evaluate_curve(const models::Classifier& m, const LabeledData& data,
                               const attacks::AttackConfig& attack,
                               const std::vector<double>& noise_levels,
                               const std::string& model_name, std::size_t batch_size) {
    check_levels(noise_levels);
    const std::size_t N = data.x.dim(0);
    if (data.labels.size() != N)
        throw ContractViolation("evaluate_curve: label count does not match batch size");
    if (batch_size == 0) throw ContractViolation("evaluate_curve: batch_size must be positive");

    Tensor mask;  // (N, T) view of the optional mask
    if (data.mask.size() > 0) {
        mask = data.mask;
        if (mask.rank() == 3 && mask.dim(1) == 1) mask = mask.reshaped({mask.dim(0), mask.dim(2)});
    }

    RobustnessCurve curve;
    curve.model_name = model_name;
    curve.noise_levels = noise_levels;
    curve.attack = attack;
    const int num_classes = int(m.spec.num_classes);

    for (double level : noise_levels) {
        std::vector<int> preds;
        preds.reserve(N);
        for (std::size_t b0 = 0; b0 < N; b0 += batch_size) {
            const std::size_t b1 = std::min(N, b0 + batch_size);
            Tensor xb = slice_rows(data.x, b0, b1);
            Tensor mb;
            const Tensor* mp = nullptr;
            if (mask.size() > 0) {
                mb = slice_rows(mask, b0, b1);
                mp = &mb;
            }
            if (level > 0.0) {
                attacks::AttackConfig cfg = attack;
                cfg.eps = level;
                std::vector<int> yb(data.labels.begin() + long(b0), data.labels.begin() + long(b1));
                xb = attacks::attack_batch(m, xb, yb, cfg, mp);
            }
            for (int p : models::predict(m, xb, mp)) preds.push_back(p);
        }
        std::size_t hits = 0;
        for (std::size_t i = 0; i < N; ++i) hits += (preds[i] == data.labels[i]);
        curve.accuracy.push_back(double(hits) / double(N));
        curve.macro_f1.push_back(macro_f1(preds, data.labels, num_classes));
    }
    return curve;
}

namespace {

void check_shared_grid(const std::vector<RobustnessCurve>& curves) {
    if (curves.empty()) throw ContractViolation("report: no curves");
    for (const auto& c : curves) {
        check_levels(c.noise_levels);
        if (c.noise_levels != curves[0].noise_levels)
            throw ContractViolation("report: curve '" + c.model_name +
                                    "' uses a different noise grid");
    }
}

std::string xml_escape(const std::string& s) {
    std::string out;
    for (char ch : s) {
        switch (ch) {
            case '&': out += "&amp;"; break;
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            case '"': out += "&quot;"; break;
            default: out += ch;
        }
    }
    return out;
}

constexpr const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                                    "#ff7f0e", "#8c564b", "#e377c2", "#7f7f7f"};

}  // namespace

std::string report_table(const std::vector<RobustnessCurve>& curves, double eps_max, bool use_f1) {
    check_shared_grid(curves);
    std::string out = "model";
    for (double level : curves[0].noise_levels) out += ", eps_" + num(level);
    out += use_f1 ? ", F1_robust" : ", ACC_robust";
    out += '\n';
    for (const auto& c : curves) {
        const auto& vals = use_f1 ? c.macro_f1 : c.accuracy;
        if (vals.size() != c.noise_levels.size())
            throw ContractViolation("report: curve '" + c.model_name + "' is incomplete");
        RobustnessSummary s = summarize(c, eps_max);
        out += c.model_name;
        for (double v : vals) out += ", " + fixed4(v);
        out += ", " + fixed4(use_f1 ? s.f1_robust : s.acc_robust);
        out += '\n';
    }
    return out;
}

std::string report_svg(const std::vector<RobustnessCurve>& curves, bool use_f1) {
    check_shared_grid(curves);
    const double W = 720, H = 480, L = 70, R = 640, T = 30, B = 420;
    const double x_max = curves[0].noise_levels.back();
    auto px = [&](double level) { return L + (x_max > 0 ? level / x_max : 0.0) * (R - L); };
    auto py = [&](double v) { return B - v * (B - T); };
    auto p2 = [](double v) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.2f", v);
        return std::string(buf);
    };

    std::string s;
    s += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + num(W) + "\" height=\"" + num(H) +
         "\" viewBox=\"0 0 " + num(W) + " " + num(H) + "\">\n";
    s += "<rect width=\"" + num(W) + "\" height=\"" + num(H) + "\" fill=\"white\"/>\n";
    for (int i = 0; i <= 4; ++i) {
        double v = 0.25 * i, y = py(v);
        s += "<line x1=\"" + p2(L) + "\" y1=\"" + p2(y) + "\" x2=\"" + p2(R) + "\" y2=\"" + p2(y) +
             "\" stroke=\"#dddddd\"/>\n";
        s += "<text x=\"" + p2(L - 8) + "\" y=\"" + p2(y + 4) +
             "\" text-anchor=\"end\" font-size=\"12\">" + fixed4(v).substr(0, 4) + "</text>\n";
    }
    for (double level : curves[0].noise_levels) {
        double x = px(level);
        s += "<line x1=\"" + p2(x) + "\" y1=\"" + p2(B) + "\" x2=\"" + p2(x) + "\" y2=\"" +
             p2(B + 5) + "\" stroke=\"black\"/>\n";
        s += "<text x=\"" + p2(x) + "\" y=\"" + p2(B + 20) +
             "\" text-anchor=\"middle\" font-size=\"12\">" + num(level) + "</text>\n";
    }
    s += "<rect x=\"" + p2(L) + "\" y=\"" + p2(T) + "\" width=\"" + p2(R - L) + "\" height=\"" +
         p2(B - T) + "\" fill=\"none\" stroke=\"black\"/>\n";
    s += "<text x=\"" + p2((L + R) / 2) + "\" y=\"" + p2(H - 10) +
         "\" text-anchor=\"middle\" font-size=\"13\">noise level</text>\n";
    s += "<text x=\"18\" y=\"" + p2((T + B) / 2) + "\" text-anchor=\"middle\" font-size=\"13\" " +
         "transform=\"rotate(-90 18 " + p2((T + B) / 2) + ")\">" +
         (use_f1 ? "macro F1" : "accuracy") + "</text>\n";

    for (std::size_t i = 0; i < curves.size(); ++i) {
        const auto& c = curves[i];
        const auto& vals = use_f1 ? c.macro_f1 : c.accuracy;
        const char* color = kPalette[i % (sizeof kPalette / sizeof *kPalette)];
        std::string pts;
        for (std::size_t k = 0; k < vals.size(); ++k) {
            if (k) pts += ' ';
            pts += p2(px(c.noise_levels[k])) + "," + p2(py(vals[k]));
        }
        s += "<polyline points=\"" + pts + "\" fill=\"none\" stroke=\"" + color +
             "\" stroke-width=\"2\"/>\n";
        double ly = T + 18 + 18 * double(i);
        s += "<line x1=\"" + p2(R - 150) + "\" y1=\"" + p2(ly - 4) + "\" x2=\"" + p2(R - 125) +
             "\" y2=\"" + p2(ly - 4) + "\" stroke=\"" + color + "\" stroke-width=\"2\"/>\n";
        s += "<text x=\"" + p2(R - 118) + "\" y=\"" + p2(ly) + "\" font-size=\"12\">" +
             xml_escape(c.model_name) + "</text>\n";
    }
    s += "</svg>\n";
    return s;
}

void render_report(const std::vector<RobustnessCurve>& curves, double eps_max,
                   const std::filesystem::path& out_dir) {
    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    if (ec) throw IoError("cannot create directory '" + out_dir.string() + "': " + ec.message());
    auto write = [&](const char* name, const std::string& text) {
        std::ofstream out(out_dir / name, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot write '" + (out_dir / name).string() + "'");
        out << text;
    };
    write("accuracy_table.csv", report_table(curves, eps_max, false));
    write("f1_table.csv", report_table(curves, eps_max, true));
    write("accuracy_curves.svg", report_svg(curves, false));
    write("f1_curves.svg", report_svg(curves, true));
}

}  // namespace r1d::eval
