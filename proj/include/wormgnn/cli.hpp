#pragma once

// Command-line front end: key=value configuration files, per-run manifests
// and the seven subcommands. run_cli is the whole program minus main(), so
// it can also be driven in-process.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

namespace wormgnn::cli {

/// Configuration problems. Messages start with "<file>:<line>: field '<key>'"
/// when the offending entry has a location.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// `key = value` lines; `#` starts a comment, blank lines are ignored.
/// Every lookup records the value it resolved to (given or default), and
/// those resolved values form the run manifest, which is itself a valid
/// configuration file.
class KeyValueConfig {
public:
    static KeyValueConfig parse(const std::string& text, const std::string& source,
                                const std::filesystem::path& base_dir = {});
    static KeyValueConfig load(const std::filesystem::path& path);

    /// Adds or replaces an entry (command-line overrides).
    void set(const std::string& key, const std::string& value, const std::string& origin);
    bool has(const std::string& key) const { return entries_.count(key) > 0; }

    std::string text(const std::string& key, const std::string& fallback);
    std::optional<std::string> maybe_text(const std::string& key);
    std::size_t count(const std::string& key, std::size_t fallback);
    std::uint64_t u64(const std::string& key, std::uint64_t fallback);
    int integer(const std::string& key, int fallback);
    double real(const std::string& key, double fallback);
    bool boolean(const std::string& key, bool fallback);
    /// Comma-separated; surrounding whitespace is trimmed, empty items dropped.
    std::vector<std::string> list(const std::string& key, const std::vector<std::string>& fallback = {});
    /// Relative paths resolve against the directory of the config file.
    std::optional<std::filesystem::path> maybe_path(const std::string& key);
    std::vector<std::filesystem::path> paths(const std::string& key);

    /// Records a derived value in the manifest (e.g. an expanded file list).
    void resolve(const std::string& key, const std::string& value);

    /// Throws ConfigError for the first entry no lookup consumed.
    void require_all_used() const;
    /// "key = value" lines of every resolved entry, sorted by key.
    std::string manifest() const;
    const std::map<std::string, std::string>& resolved() const { return resolved_; }

    /// Error text locating `key`.
    std::string where(const std::string& key) const;

private:
    struct Entry {
        std::string value;
        std::string origin;
        bool used = false;
    };
    const Entry* lookup(const std::string& key);
    [[noreturn]] void fail(const std::string& key, const std::string& problem) const;

    std::map<std::string, Entry> entries_;
    std::map<std::string, std::string> resolved_;
    std::filesystem::path base_dir_;
    std::string source_ = "<config>";
};

/// Shortest decimal text that parses back to exactly `v` ("nan", "inf").
std::string format_double(double v);

/// Runs one command line (args[0] is the program name). Returns the exit
/// status; diagnostics go to `err`, help and progress summaries to `out`.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// File the CLI writes the resolved configuration to, inside --out.
inline constexpr const char* kManifestFile = "manifest.cfg";

}  // namespace wormgnn::cli
