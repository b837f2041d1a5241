// Dataset ingestion: directory scanning, per-patient deduplication, seeded
// per-class splitting, and the manifest file that records the result.
#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "roct/tensor.hpp"

namespace roct {

struct Sample {
    std::string path;
    std::string label;
    std::string patient_id;  // empty when the filename carries no patient info
    int image_index = -1;
    bool has_patient() const { return !patient_id.empty(); }
};

struct ParsedName {
    std::string label;
    std::string patient_id;
    int image_index = 0;
};

// Filenames of the form CLASS-PATIENT-INDEX.ext, e.g. "CNV-91234-3.jpeg".
// Accepts a full path and looks at the basename. Throws on anything else.
ParsedName parse_kermany_name(const std::string& filename);

// Keeps one sample per (label, patient): the lowest image index, ties broken
// by lexicographically smallest path. Every sample must carry a patient id.
std::vector<Sample> dedup_per_patient(const std::vector<Sample>& samples);

struct DatasetManifest {
    std::vector<std::string> classes;  // sorted; label index = position
    std::vector<Sample> train;
    std::vector<Sample> test;
    std::uint64_t seed = 0;
    std::vector<std::string> notes;

    int label_index(const std::string& label) const;
    // label -> (train count, test count)
    std::map<std::string, std::pair<int, int>> class_counts() const;
};

// Per class: seeded shuffle, floor(test_fraction * n) samples to test, rest
// to train. Deterministic for a given (samples, seed).
DatasetManifest split_per_class(const std::vector<Sample>& samples, double test_fraction, std::uint64_t seed);

void write_manifest(const DatasetManifest& m, const std::string& path);
DatasetManifest read_manifest(const std::string& path);

enum class DataLayout { Flat, PreSplit };  // root/<class>/... or root/{train,test}/<class>/...
DataLayout parse_layout(const std::string& s);

// Scans a class-per-directory tree. Kermany-style names populate patient
// ids; mixed naming within one scan is rejected.
std::vector<Sample> scan_class_dirs(const std::string& root);

// Full preparation pipeline behind the `prepare` command. For flat layouts
// with patient ids, deduplication happens before the split so a patient can
// never straddle it. Pre-split layouts keep their test set untouched and
// deduplicate only the training side.
DatasetManifest prepare_manifest(const std::string& root, DataLayout layout, double test_fraction,
                                 std::uint64_t seed);

// Throws if any path, or any patient id, appears in both train and test.
void check_no_leakage(const DatasetManifest& m);

}  // namespace roct
