#include "r1d/data.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>
#include <system_error>

#include <nlohmann/json.hpp>

#include "r1d/errors.hpp"
#include "r1d/rng.hpp"

namespace r1d::data {

namespace fs = std::filesystem;
using nlohmann::json;

int Recording::label() const {
    if (labels.size() != 1)
        throw ContractViolation("recording '" + id + "' carries " +
                                std::to_string(labels.size()) + " labels, expected exactly 1");
    return labels[0];
}

const std::vector<std::string>& beat_class_names() {
    static const std::vector<std::string> names{"N", "S", "V", "F", "Q"};
    return names;
}

const std::vector<std::string>& cpsc_class_names() {
    static const std::vector<std::string> names{"Normal", "AF",  "I-AVB", "LBBB", "RBBB",
                                               "PAC",    "PVC", "STD",   "STE"};
    return names;
}

namespace {

std::string format_double(double v) {
    char buf[32];
    auto res = std::to_chars(buf, buf + sizeof buf, v);  // shortest round-trip form
    return std::string(buf, res.ptr);
}

double parse_double(std::string_view cell, const std::string& where) {
    double v = 0.0;
    const char* first = cell.data();
    const char* last = cell.data() + cell.size();
    auto res = std::from_chars(first, last, v);
    if (res.ec != std::errc() || res.ptr != last)
        throw ParseError(where + ": non-numeric cell '" + std::string(cell) + "'");
    return v;
}

std::vector<std::string_view> split_csv_line(std::string_view line) {
    std::vector<std::string_view> cells;
    std::size_t start = 0;
    while (true) {
        std::size_t comma = line.find(',', start);
        if (comma == std::string_view::npos) {
            cells.push_back(line.substr(start));
            break;
        }
        cells.push_back(line.substr(start, comma - start));
        start = comma + 1;
    }
    return cells;
}

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

// Applies fn(row_number, line) to every non-empty line; strips trailing CR.
template <class F>
void for_each_csv_row(const std::string& text, F fn) {
    std::size_t row = 0, start = 0;
    while (start < text.size()) {
        std::size_t nl = text.find('\n', start);
        std::size_t end = nl == std::string::npos ? text.size() : nl;
        std::string_view line(text.data() + start, end - start);
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        if (!line.empty()) fn(++row, line);
        if (nl == std::string::npos) break;
        start = nl + 1;
    }
}

int parse_label_cell(std::string_view cell, const std::string& where, int num_classes) {
    double raw = parse_double(cell, where);
    double rounded = std::nearbyint(raw);
    if (!std::isfinite(raw) || rounded != raw)
        throw ParseError(where + ": label '" + std::string(cell) + "' is not an integer");
    if (rounded < 0 || rounded >= double(num_classes))
        throw ValidationError(where + ": label " + format_double(raw) + " outside {0.." +
                              std::to_string(num_classes - 1) + "}");
    return int(rounded);
}

}  // namespace

std::vector<BeatSample> load_beat_csv(const fs::path& file) {
    const std::string text = read_text_file(file);
    std::vector<BeatSample> samples;
    for_each_csv_row(text, [&](std::size_t row, std::string_view line) {
        const std::string where = file.filename().string() + " row " + std::to_string(row);
        auto cells = split_csv_line(line);
        if (cells.size() != kBeatLength + 1)
            throw ParseError(where + ": expected " + std::to_string(kBeatLength + 1) +
                             " columns, found " + std::to_string(cells.size()));
        BeatSample s;
        s.values.resize(kBeatLength);
        for (std::size_t i = 0; i < kBeatLength; ++i) {
            s.values[i] = parse_double(cells[i], where);
            if (!std::isfinite(s.values[i]))
                throw ValidationError(where + ": non-finite signal value");
        }
        s.label = parse_label_cell(cells[kBeatLength], where, int(beat_class_names().size()));
        samples.push_back(std::move(s));
    });
    return samples;
}

void save_beat_csv(const fs::path& file, const std::vector<BeatSample>& samples) {
    std::string out;
    for (const auto& s : samples) {
        for (double v : s.values) {
            out += format_double(v);
            out += ',';
        }
        out += std::to_string(s.label);
        out += '\n';
    }
    write_text_file(file, out);
}

std::vector<BeatSample> load_beat_dataset(const fs::path& dir, BeatSplit split) {
    const char* name = split == BeatSplit::train ? "mitbih_train.csv" : "mitbih_test.csv";
    return load_beat_csv(dir / name);
}

namespace {

template <class T, class LabelFn>
std::vector<T> upsample_impl(const std::vector<T>& in, std::uint64_t seed, LabelFn label_of) {
    if (in.empty()) throw ValidationError("balance_by_upsampling: empty input");
    std::map<int, std::vector<std::size_t>> by_class;
    for (std::size_t i = 0; i < in.size(); ++i) by_class[label_of(in[i])].push_back(i);
    std::size_t target = 0;
    for (const auto& [label, idx] : by_class) target = std::max(target, idx.size());

    std::vector<T> out = in;
    rng::Engine g = rng::make_engine(rng::derive_seed(seed, "balance"));
    for (const auto& [label, idx] : by_class)  // std::map: ascending class order
        for (std::size_t n = idx.size(); n < target; ++n)
            out.push_back(in[idx[rng::uniform_index(g, idx.size())]]);
    return out;
}

}  // namespace

std::vector<BeatSample> balance_by_upsampling(const std::vector<BeatSample>& samples,
                                              std::uint64_t seed) {
    return upsample_impl(samples, seed, [](const BeatSample& s) { return s.label; });
}

std::vector<Recording> balance_by_upsampling(const std::vector<Recording>& samples,
                                             std::uint64_t seed) {
    return upsample_impl(samples, seed, [](const Recording& r) { return r.label(); });
}

std::pair<std::vector<BeatSample>, std::vector<BeatSample>> split_train_val(
    const std::vector<BeatSample>& train, double fraction, std::uint64_t seed) {
    if (!(fraction > 0.0 && fraction < 1.0))
        throw ConfigError("split_train_val: fraction must lie in (0, 1), got " +
                          format_double(fraction));
    const std::size_t n = train.size();
    const std::size_t n_val = std::size_t(std::llround(fraction * double(n)));

    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    rng::Engine g = rng::make_engine(rng::derive_seed(seed, "train-val"));
    rng::shuffle(order, g);

    std::vector<bool> is_val(n, false);
    for (std::size_t i = 0; i < n_val && i < n; ++i) is_val[order[i]] = true;
    std::pair<std::vector<BeatSample>, std::vector<BeatSample>> out;
    for (std::size_t i = 0; i < n; ++i) (is_val[i] ? out.second : out.first).push_back(train[i]);
    return out;
}

namespace {

Recording drop_leads(const Recording& rec) {
    if (rec.leads.rank() != 2 || rec.leads.dim(0) != 12)
        throw ValidationError("recording '" + rec.id + "': expected 12 leads, found " +
                              rec.leads.shape_str());
    const std::size_t T = rec.leads.dim(1);
    Recording out;
    out.id = rec.id;
    out.labels = rec.labels;
    out.leads = Tensor({8, T});
    std::size_t dst = 0;
    for (std::size_t lead = 0; lead < 12; ++lead) {
        if (lead >= 2 && lead <= 5) continue;  // leads 3-6 carry redundant information
        for (std::size_t t = 0; t < T; ++t) out.leads.at(dst, t) = rec.leads.at(lead, t);
        ++dst;
    }
    return out;
}

}  // namespace

CpscSplits prepare_cpsc_corpus(const std::vector<Recording>& recordings, std::uint64_t seed) {
    const int num_classes = int(cpsc_class_names().size());
    std::map<int, std::vector<std::size_t>> by_class;
    for (std::size_t i = 0; i < recordings.size(); ++i) {
        const Recording& r = recordings[i];
        if (r.labels.size() != 1) continue;  // multi-label recordings are excluded
        int label = r.labels[0];
        if (label < 0 || label >= num_classes)
            throw ValidationError("recording '" + r.id + "': label " + std::to_string(label) +
                                  " outside {0.." + std::to_string(num_classes - 1) + "}");
        by_class[label].push_back(i);
    }
    for (int c = 0; c < num_classes; ++c) {
        std::size_t count = by_class.count(c) ? by_class[c].size() : 0;
        if (count < 55)
            throw ValidationError("class " + cpsc_class_names()[c] + " has only " +
                                  std::to_string(count) +
                                  " single-label recordings, need at least 55");
    }

    CpscSplits out;
    out.spec.seed = seed;
    rng::Engine g = rng::make_engine(rng::derive_seed(seed, "cpsc-split"));
    for (int c = 0; c < num_classes; ++c) {
        std::vector<std::size_t>& idx = by_class[c];
        rng::shuffle(idx, g);
        for (std::size_t i = 0; i < idx.size(); ++i) {
            const Recording rec = drop_leads(recordings[idx[i]]);
            if (i < 5) {
                out.val.push_back(rec);
                out.spec.val_ids.push_back(rec.id);
            } else if (i < 55) {
                out.test.push_back(rec);
                out.spec.test_ids.push_back(rec.id);
            } else {
                out.train.push_back(rec);
                out.spec.train_ids.push_back(rec.id);
            }
        }
    }
    if (!out.train.empty()) out.train = balance_by_upsampling(out.train, seed);
    return out;
}

Recording scale_leads_maxabs(const Recording& rec) {
    Recording out = rec;
    if (out.leads.rank() != 2)
        throw ContractViolation("scale_leads_maxabs: leads must be rank 2, got " +
                                out.leads.shape_str());
    const std::size_t C = out.leads.dim(0), T = out.leads.dim(1);
    for (std::size_t c = 0; c < C; ++c) {
        double m = 0.0;
        for (std::size_t t = 0; t < T; ++t) m = std::max(m, std::abs(out.leads.at(c, t)));
        if (m == 0.0) continue;  // an all-zero lead stays all-zero
        for (std::size_t t = 0; t < T; ++t) out.leads.at(c, t) /= m;
    }
    return out;
}

MaskedSample pad_and_mask(const Recording& rec, std::size_t target_len, PadMode mode,
                          std::uint64_t seed) {
    if (rec.leads.rank() != 2)
        throw ContractViolation("pad_and_mask: leads must be rank 2, got " +
                                rec.leads.shape_str());
    const std::size_t C = rec.leads.dim(0), T = rec.leads.dim(1);
    if (T > kCpscMaxLength)
        throw ValidationError("recording '" + rec.id + "': length " + std::to_string(T) +
                              " exceeds the supported maximum " + std::to_string(kCpscMaxLength));
    MaskedSample out;
    out.label = rec.label();
    out.signal = Tensor::zeros({C, target_len});
    out.mask = Tensor::zeros({target_len});

    const std::size_t valid = std::min(T, target_len);
    std::size_t left = 0;
    if (mode == PadMode::train_random && valid < target_len) {
        rng::Engine g = rng::make_engine(rng::derive_seed(seed, "pad:" + rec.id));
        left = rng::uniform_index(g, target_len - valid + 1);
    }
    for (std::size_t c = 0; c < C; ++c)
        for (std::size_t t = 0; t < valid; ++t) out.signal.at(c, left + t) = rec.leads.at(c, t);
    for (std::size_t t = 0; t < valid; ++t) out.mask[left + t] = 1.0;
    return out;
}

MaskedBatch make_masked_batch(const std::vector<MaskedSample>& samples) {
    if (samples.empty()) throw ValidationError("make_masked_batch: empty input");
    const std::size_t C = samples[0].signal.dim(0), L = samples[0].signal.dim(1);
    MaskedBatch out;
    out.signals = Tensor::zeros({samples.size(), C, L});
    out.mask = Tensor::zeros({samples.size(), 1, L});
    for (std::size_t n = 0; n < samples.size(); ++n) {
        const MaskedSample& s = samples[n];
        if (s.signal.dim(0) != C || s.signal.dim(1) != L || s.mask.size() != L)
            throw ContractViolation("make_masked_batch: sample " + std::to_string(n) +
                                    " has shape " + s.signal.shape_str() + ", expected (" +
                                    std::to_string(C) + "x" + std::to_string(L) + ")");
        for (std::size_t c = 0; c < C; ++c)
            for (std::size_t t = 0; t < L; ++t) out.signals.at(n, c, t) = s.signal.at(c, t);
        for (std::size_t t = 0; t < L; ++t) out.mask.at(n, 0, t) = s.mask[t];
        out.labels.push_back(s.label);
    }
    return out;
}

std::vector<BeatSample> synth_beats(std::size_t n_per_class, std::size_t n_classes,
                                    std::size_t length, std::uint64_t seed) {
    if (n_classes < 2) throw ConfigError("synth_beats: need at least 2 classes");
    if (length < 8) throw ConfigError("synth_beats: length must be at least 8");
    std::vector<BeatSample> out;
    out.reserve(n_per_class * n_classes);
    for (std::size_t c = 0; c < n_classes; ++c) {
        // Every class shares a dominant bump near the left edge.  Class
        // identity is carried by a modest localized bump (wide margin: its
        // amplitude is far above typical attack budgets) plus a faint dense
        // signature whose per-sample amplitude is tiny, so an unregularized
        // fit has brittle evidence to latch onto while a robust solution
        // still exists.
        const double center = double(length) * double(c + 1) / double(n_classes + 1);
        const double width = 2.5 + 0.5 * double(c);
        const double shared_center = double(length) * 0.08;
        // The signature depends only on (class, position) so that corpora
        // drawn with different seeds agree on it.
        std::vector<double> signature(length);
        for (std::size_t t = 0; t < length; ++t) {
            const std::uint64_t h =
                rng::derive_seed(0x5157u, "class-sign:" + std::to_string(c), t);
            signature[t] = (std::popcount(h) & 1) ? 0.025 : -0.025;
        }
        for (std::size_t i = 0; i < n_per_class; ++i) {
            rng::Engine g = rng::make_engine(
                rng::derive_seed(seed, "synth:" + std::to_string(c), i));
            const double jitter = rng::uniform(g, -2.0, 2.0);
            const double amp = 0.3 + rng::uniform(g, -0.06, 0.06);
            BeatSample s;
            s.label = int(c);
            s.values.resize(length);
            for (std::size_t t = 0; t < length; ++t) {
                double u = (double(t) - center - jitter) / width;
                double v = amp * std::exp(-0.5 * u * u);
                double w = (double(t) - shared_center) / 4.0;
                v += 0.75 * std::exp(-0.5 * w * w);
                v += signature[t];
                v += 0.12 * rng::normal(g);
                s.values[t] = std::clamp(v, -1.0, 1.0);
            }
            out.push_back(std::move(s));
        }
    }
    return out;
}

void save_recording_corpus(const fs::path& dir, const std::vector<Recording>& recordings) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create directory '" + dir.string() + "': " + ec.message());
    json manifest = json::array();
    for (const auto& rec : recordings) {
        if (rec.leads.rank() != 2)
            throw ContractViolation("recording '" + rec.id + "': leads must be rank 2");
        const std::string file = rec.id + ".csv";
        std::string text;
        for (std::size_t c = 0; c < rec.leads.dim(0); ++c) {
            for (std::size_t t = 0; t < rec.leads.dim(1); ++t) {
                if (t) text += ',';
                text += format_double(rec.leads.at(c, t));
            }
            text += '\n';
        }
        write_text_file(dir / file, text);
        manifest.push_back({{"id", rec.id}, {"labels", rec.labels}, {"file", file}});
    }
    write_text_file(dir / "manifest.json", json{{"recordings", manifest}}.dump(2) + "\n");
}

std::vector<Recording> load_recording_corpus(const fs::path& dir) {
    json manifest;
    try {
        manifest = json::parse(read_text_file(dir / "manifest.json"));
    } catch (const json::exception& e) {
        throw ParseError("manifest.json: " + std::string(e.what()));
    }
    if (!manifest.contains("recordings") || !manifest["recordings"].is_array())
        throw ParseError("manifest.json: missing 'recordings' array");

    std::vector<Recording> out;
    for (const auto& entry : manifest["recordings"]) {
        Recording rec;
        try {
            rec.id = entry.at("id").get<std::string>();
            rec.labels = entry.at("labels").get<std::vector<int>>();
        } catch (const json::exception& e) {
            throw ParseError("manifest.json: bad recording entry: " + std::string(e.what()));
        }
        const fs::path file = dir / entry.value("file", rec.id + ".csv");
        const std::string text = read_text_file(file);
        std::vector<std::vector<double>> rows;
        for_each_csv_row(text, [&](std::size_t row, std::string_view line) {
            const std::string where = file.filename().string() + " row " + std::to_string(row);
            std::vector<double> vals;
            for (auto cell : split_csv_line(line)) vals.push_back(parse_double(cell, where));
            if (!rows.empty() && vals.size() != rows[0].size())
                throw ParseError(where + ": ragged row, expected " +
                                 std::to_string(rows[0].size()) + " columns");
            rows.push_back(std::move(vals));
        });
        if (rows.empty()) throw ParseError(file.filename().string() + ": empty recording");
        rec.leads = Tensor({rows.size(), rows[0].size()});
        for (std::size_t c = 0; c < rows.size(); ++c)
            for (std::size_t t = 0; t < rows[0].size(); ++t) rec.leads.at(c, t) = rows[c][t];
        out.push_back(std::move(rec));
    }
    return out;
}

void save_split_spec(const fs::path& file, const SplitSpec& spec) {
    json j{{"seed", spec.seed},
           {"train_ids", spec.train_ids},
           {"val_ids", spec.val_ids},
           {"test_ids", spec.test_ids}};
    write_text_file(file, j.dump(2) + "\n");
}

SplitSpec load_split_spec(const fs::path& file) {
    SplitSpec spec;
    try {
        json j = json::parse(read_text_file(file));
        spec.seed = j.at("seed").get<std::uint64_t>();
        spec.train_ids = j.at("train_ids").get<std::vector<std::string>>();
        spec.val_ids = j.at("val_ids").get<std::vector<std::string>>();
        spec.test_ids = j.at("test_ids").get<std::vector<std::string>>();
    } catch (const json::exception& e) {
        throw ParseError(file.filename().string() + ": " + std::string(e.what()));
    }
    return spec;
}

}  // namespace r1d::data
