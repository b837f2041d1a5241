#include "roct/data.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

namespace fs = std::filesystem;

namespace roct {

namespace {

bool is_image_file(const fs::path& p) {
    std::string ext = p.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    return ext == ".png" || ext == ".jpg" || ext == ".jpeg" || ext == ".pgm" || ext == ".ppm";
}

std::vector<std::string> sorted_class_list(const std::vector<Sample>& samples) {
    std::set<std::string> labels;
    for (const auto& s : samples) labels.insert(s.label);
    return {labels.begin(), labels.end()};
}

}  // namespace

ParsedName parse_kermany_name(const std::string& filename) {
    const std::string base = fs::path(filename).filename().string();
    const auto dot = base.rfind('.');
    const auto fail = [&]() {
        throw std::invalid_argument("sample name '" + filename + "' does not match CLASS-PATIENT-INDEX.ext");
    };
    if (dot == std::string::npos || dot == 0) fail();
    const std::string stem = base.substr(0, dot);

    // split on the last two dashes: CLASS may itself contain dashes
    const auto d2 = stem.rfind('-');
    if (d2 == std::string::npos || d2 == 0) fail();
    const auto d1 = stem.rfind('-', d2 - 1);
    if (d1 == std::string::npos || d1 == 0) fail();

    ParsedName out;
    out.label = stem.substr(0, d1);
    out.patient_id = stem.substr(d1 + 1, d2 - d1 - 1);
    const std::string idx = stem.substr(d2 + 1);
    if (out.patient_id.empty() || idx.empty()) fail();
    for (char c : out.patient_id)
        if (!std::isdigit(static_cast<unsigned char>(c))) fail();
    for (char c : idx)
        if (!std::isdigit(static_cast<unsigned char>(c))) fail();
    try {
        out.image_index = std::stoi(idx);
    } catch (const std::exception&) {
        fail();
    }
    return out;
}

std::vector<Sample> dedup_per_patient(const std::vector<Sample>& samples) {
    std::map<std::pair<std::string, std::string>, Sample> best;
    for (const auto& s : samples) {
        if (!s.has_patient()) {
            throw std::invalid_argument("dedup: sample '" + s.path + "' has no patient id");
        }
        const auto key = std::make_pair(s.label, s.patient_id);
        auto it = best.find(key);
        if (it == best.end() || s.image_index < it->second.image_index ||
            (s.image_index == it->second.image_index && s.path < it->second.path)) {
            best[key] = s;
        }
    }
    std::vector<Sample> out;
    out.reserve(best.size());
    for (auto& [key, s] : best) out.push_back(std::move(s));
    std::sort(out.begin(), out.end(), [](const Sample& a, const Sample& b) { return a.path < b.path; });
    return out;
}

int DatasetManifest::label_index(const std::string& label) const {
    const auto it = std::find(classes.begin(), classes.end(), label);
    if (it == classes.end()) throw std::invalid_argument("manifest: unknown class '" + label + "'");
    return static_cast<int>(it - classes.begin());
}

std::map<std::string, std::pair<int, int>> DatasetManifest::class_counts() const {
    std::map<std::string, std::pair<int, int>> counts;
    for (const auto& c : classes) counts[c] = {0, 0};
    for (const auto& s : train) counts.at(s.label).first++;
    for (const auto& s : test) counts.at(s.label).second++;
    return counts;
}

DatasetManifest split_per_class(const std::vector<Sample>& samples, double test_fraction, std::uint64_t seed) {
    if (test_fraction <= 0.0 || test_fraction >= 1.0) {
        throw std::invalid_argument("split: test fraction must be inside (0,1)");
    }
    if (samples.empty()) throw std::invalid_argument("split: no samples");

    DatasetManifest m;
    m.seed = seed;
    m.classes = sorted_class_list(samples);

    for (std::size_t ci = 0; ci < m.classes.size(); ++ci) {
        std::vector<Sample> members;
        for (const auto& s : samples)
            if (s.label == m.classes[ci]) members.push_back(s);
        // scan order must not matter
        std::sort(members.begin(), members.end(),
                  [](const Sample& a, const Sample& b) { return a.path < b.path; });
        Rng rng(mix_seed(seed, static_cast<std::uint64_t>(ci)));
        rng.shuffle(members);

        const auto n_test = static_cast<std::size_t>(test_fraction * static_cast<double>(members.size()));
        for (std::size_t i = 0; i < members.size(); ++i) {
            (i < n_test ? m.test : m.train).push_back(members[i]);
        }
    }
    return m;
}

void write_manifest(const DatasetManifest& m, const std::string& path) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw std::runtime_error("manifest: cannot write '" + path + "'");
    os << "# dataset manifest\n";
    os << "# seed: " << m.seed << "\n";
    os << "# classes:";
    for (const auto& c : m.classes) os << " " << c;
    os << "\n";
    for (const auto& [label, counts] : m.class_counts()) {
        os << "# counts: " << label << " train=" << counts.first << " test=" << counts.second << "\n";
    }
    for (const auto& note : m.notes) os << "# note: " << note << "\n";
    auto emit = [&](const std::vector<Sample>& v, const char* split) {
        for (const auto& s : v) os << s.path << "\t" << s.label << "\t" << split << "\n";
    };
    emit(m.train, "train");
    emit(m.test, "test");
    if (!os) throw std::runtime_error("manifest: write to '" + path + "' failed");
}

DatasetManifest read_manifest(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("manifest: cannot open '" + path + "'");
    DatasetManifest m;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty()) continue;
        if (line[0] == '#') {
            std::istringstream hs(line.substr(1));
            std::string tag;
            hs >> tag;
            if (tag == "seed:") hs >> m.seed;
            if (tag == "classes:") {
                std::string c;
                while (hs >> c) m.classes.push_back(c);
            }
            if (tag == "note:") {
                std::string rest;
                std::getline(hs, rest);
                m.notes.push_back(rest.empty() ? rest : rest.substr(1));
            }
            continue;
        }
        const auto t1 = line.find('\t');
        const auto t2 = t1 == std::string::npos ? std::string::npos : line.find('\t', t1 + 1);
        if (t1 == std::string::npos || t2 == std::string::npos) {
            throw std::runtime_error("manifest: malformed line " + std::to_string(lineno) + " in '" + path + "'");
        }
        Sample s;
        s.path = line.substr(0, t1);
        s.label = line.substr(t1 + 1, t2 - t1 - 1);
        const std::string split = line.substr(t2 + 1);
        // carry patient info through when the name encodes it
        try {
            ParsedName p = parse_kermany_name(s.path);
            s.patient_id = p.patient_id;
            s.image_index = p.image_index;
        } catch (const std::invalid_argument&) {
        }
        if (split == "train")
            m.train.push_back(std::move(s));
        else if (split == "test")
            m.test.push_back(std::move(s));
        else
            throw std::runtime_error("manifest: unknown split '" + split + "' on line " + std::to_string(lineno));
    }
    if (m.classes.empty()) m.classes = sorted_class_list(m.train);
    // labels must come from the declared class list
    for (const auto* vec : {&m.train, &m.test}) {
        for (const auto& s : *vec) m.label_index(s.label);
    }
    return m;
}

DataLayout parse_layout(const std::string& s) {
    if (s == "flat") return DataLayout::Flat;
    if (s == "presplit") return DataLayout::PreSplit;
    throw std::invalid_argument("unknown layout '" + s + "' (expected flat or presplit)");
}

std::vector<Sample> scan_class_dirs(const std::string& root) {
    if (!fs::is_directory(root)) throw std::runtime_error("scan: '" + root + "' is not a directory");
    std::vector<Sample> samples;
    int with_patient = 0, without_patient = 0;
    std::vector<fs::path> class_dirs;
    for (const auto& e : fs::directory_iterator(root)) {
        if (e.is_directory()) class_dirs.push_back(e.path());
    }
    std::sort(class_dirs.begin(), class_dirs.end());
    for (const auto& dir : class_dirs) {
        std::vector<fs::path> files;
        for (const auto& e : fs::recursive_directory_iterator(dir)) {
            if (e.is_regular_file() && is_image_file(e.path())) files.push_back(e.path());
        }
        if (files.empty()) {
            throw std::runtime_error("scan: class directory '" + dir.filename().string() + "' has no images");
        }
        std::sort(files.begin(), files.end());
        for (const auto& f : files) {
            Sample s;
            s.path = f.string();
            s.label = dir.filename().string();
            try {
                ParsedName p = parse_kermany_name(f.string());
                s.patient_id = p.patient_id;
                s.image_index = p.image_index;
                ++with_patient;
            } catch (const std::invalid_argument&) {
                ++without_patient;
            }
            samples.push_back(std::move(s));
        }
    }
    if (samples.empty()) throw std::runtime_error("scan: no image files under '" + root + "'");
    if (with_patient > 0 && without_patient > 0) {
        throw std::runtime_error("scan: '" + root + "' mixes patient-coded and plain filenames");
    }
    return samples;
}

DatasetManifest prepare_manifest(const std::string& root, DataLayout layout, double test_fraction,
                                 std::uint64_t seed) {
    if (layout == DataLayout::Flat) {
        std::vector<Sample> samples = scan_class_dirs(root);
        std::vector<std::string> notes;
        notes.push_back("layout: flat, root " + root);
        if (samples.front().has_patient()) {
            const std::size_t before = samples.size();
            samples = dedup_per_patient(samples);
            notes.push_back("dedup: one image per patient, " + std::to_string(before - samples.size()) +
                            " removed before the split");
        }
        DatasetManifest m = split_per_class(samples, test_fraction, seed);
        m.notes = std::move(notes);
        check_no_leakage(m);
        return m;
    }

    // pre-split tree: the test directory is taken as-is, train may dedup
    const fs::path train_root = fs::path(root) / "train";
    const fs::path test_root = fs::path(root) / "test";
    if (!fs::is_directory(train_root) || !fs::is_directory(test_root)) {
        throw std::runtime_error("scan: presplit layout needs '" + root + "/train' and '" + root + "/test'");
    }
    std::vector<Sample> train = scan_class_dirs(train_root.string());
    std::vector<Sample> test = scan_class_dirs(test_root.string());

    DatasetManifest m;
    m.seed = seed;
    m.notes.push_back("layout: presplit, root " + root);
    if (train.front().has_patient()) {
        const std::size_t before = train.size();
        train = dedup_per_patient(train);
        m.notes.push_back("dedup: one image per patient, " + std::to_string(before - train.size()) +
                          " removed from train; test kept as-is");
    }
    m.train = std::move(train);
    m.test = std::move(test);
    std::vector<Sample> all = m.train;
    all.insert(all.end(), m.test.begin(), m.test.end());
    m.classes = sorted_class_list(all);
    return m;
}

void check_no_leakage(const DatasetManifest& m) {
    std::set<std::string> train_paths;
    for (const auto& s : m.train) train_paths.insert(s.path);
    for (const auto& s : m.test) {
        if (train_paths.count(s.path)) {
            throw std::runtime_error("leakage: '" + s.path + "' appears in both train and test");
        }
    }
    std::set<std::string> train_patients;
    for (const auto& s : m.train)
        if (s.has_patient()) train_patients.insert(s.patient_id);
    for (const auto& s : m.test) {
        if (s.has_patient() && train_patients.count(s.patient_id)) {
            throw std::runtime_error("leakage: patient " + s.patient_id + " appears in both train and test");
        }
    }
}

}  // namespace roct
