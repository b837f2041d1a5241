// Command-line front end: prepare / train / eval subcommands over the
// dataset, trainer, and checkpoint machinery.
#pragma once

#include <map>
#include <string>

namespace roct {

// Settings for one run, merged from a config file and command-line flags
// (flags win). Keys are dotted, e.g. "train.initial_lr".
struct RunConfig {
    std::map<std::string, std::string> values;

    bool has(const std::string& key) const { return values.count(key) != 0; }
    void set(const std::string& key, const std::string& value) { values[key] = value; }
    std::string get(const std::string& key, const std::string& fallback) const;
    double get_double(const std::string& key, double fallback) const;
    int get_int(const std::string& key, int fallback) const;
    bool get_bool(const std::string& key, bool fallback) const;
};

// Parses "key = value" lines; '#' starts a comment. Unknown keys are the
// caller's problem (validated against the accepted key list in run()).
RunConfig read_config_file(const std::string& path);

void write_effective_config(const RunConfig& cfg, const std::string& path);

// Entry point behind main(). Returns the process exit code; failures print a
// single "error: ..." line on stderr.
int run(int argc, const char* const* argv);

}  // namespace roct
