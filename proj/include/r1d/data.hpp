#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "r1d/tensor.hpp"

namespace r1d::data {

// One pre-segmented heartbeat: a fixed-length waveform plus its class.
// Files loaded through load_beat_dataset always carry 187 samples per beat;
// synthetic sets may use other lengths.
struct BeatSample {
    std::vector<double> values;
    int label = 0;
};

// One multi-lead recording. Raw corpora may attach several labels to a
// recording; after corpus preparation exactly one label remains.
struct Recording {
    std::string id;
    Tensor leads;             // (num_leads, T)
    std::vector<int> labels;  // single entry once prepared

    int label() const;  // throws ContractViolation unless exactly one label
};

// A single padded recording ready for the masked classifier.
struct MaskedSample {
    Tensor signal;  // (num_leads, L_pad), zero outside the valid segment
    Tensor mask;    // (L_pad), one exactly on the valid segment
    int label = 0;
};

// A stacked batch of padded recordings.
struct MaskedBatch {
    Tensor signals;           // (batch, num_leads, L_pad)
    Tensor mask;              // (batch, 1, L_pad)
    std::vector<int> labels;  // (batch)
};

// Persisted record of which recording ids went into which split.
struct SplitSpec {
    std::vector<std::string> train_ids;
    std::vector<std::string> val_ids;
    std::vector<std::string> test_ids;
    std::uint64_t seed = 0;
};

struct CpscSplits {
    std::vector<Recording> train;  // upsampled to class balance
    std::vector<Recording> val;
    std::vector<Recording> test;
    SplitSpec spec;  // ids before upsampling
};

enum class BeatSplit { train, test };
enum class PadMode { train_random, eval_left };

inline constexpr std::size_t kCpscPadLength = 33792;
inline constexpr std::size_t kCpscMaxLength = 72000;
inline constexpr std::size_t kBeatLength = 187;

const std::vector<std::string>& beat_class_names();  // {N, S, V, F, Q}
const std::vector<std::string>& cpsc_class_names();  // Normal .. STE

// Parses a comma-separated table of 187 signal values plus an integer label
// per row. Errors name the offending 1-based row.
std::vector<BeatSample> load_beat_csv(const std::filesystem::path& file);
void save_beat_csv(const std::filesystem::path& file, const std::vector<BeatSample>& samples);

// Loads <dir>/mitbih_train.csv or <dir>/mitbih_test.csv.
std::vector<BeatSample> load_beat_dataset(const std::filesystem::path& dir, BeatSplit split);

// Draws uniform-with-replacement copies of minority-class samples until every
// class matches the largest pre-balance class count. Originals are retained
// in order; copies are appended grouped by ascending class.
std::vector<BeatSample> balance_by_upsampling(const std::vector<BeatSample>& samples,
                                              std::uint64_t seed);
std::vector<Recording> balance_by_upsampling(const std::vector<Recording>& samples,
                                             std::uint64_t seed);

// Splits off round(fraction * N) validation samples; both halves keep their
// original relative order.
std::pair<std::vector<BeatSample>, std::vector<BeatSample>> split_train_val(
    const std::vector<BeatSample>& train, double fraction, std::uint64_t seed);

// Drops multi-label recordings, draws 5 validation and 50 test recordings per
// class with the given seed, removes leads 3-6 (indices 2..5) so 8 leads
// remain, and upsamples the training remainder to class balance.
CpscSplits prepare_cpsc_corpus(const std::vector<Recording>& recordings, std::uint64_t seed);

// Divides each lead by its own max absolute value; all-zero leads unchanged.
Recording scale_leads_maxabs(const Recording& rec);

// Truncates to target_len or zero-pads to it. train_random splits the padding
// between both ends at a seed-determined offset; eval_left keeps the valid
// segment left-aligned.
MaskedSample pad_and_mask(const Recording& rec, std::size_t target_len, PadMode mode,
                          std::uint64_t seed);

// Stacks samples with identical lead count and padded length.
MaskedBatch make_masked_batch(const std::vector<MaskedSample>& samples);

// Deterministic class-conditional waveforms: one bump template per class plus
// seeded noise, clipped to [-1, 1].
std::vector<BeatSample> synth_beats(std::size_t n_per_class, std::size_t n_classes,
                                    std::size_t length, std::uint64_t seed);

// Recording corpus on disk: manifest.json (id -> label list -> file) plus one
// comma-separated leads-by-time table per recording.
void save_recording_corpus(const std::filesystem::path& dir,
                           const std::vector<Recording>& recordings);
std::vector<Recording> load_recording_corpus(const std::filesystem::path& dir);

void save_split_spec(const std::filesystem::path& file, const SplitSpec& spec);
SplitSpec load_split_spec(const std::filesystem::path& file);

}  // namespace r1d::data
