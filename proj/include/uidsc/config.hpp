#pragma once

#include <filesystem>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "uidsc/errors.hpp"

namespace uidsc {

using Json = nlohmann::json;

/// Reads an object node and rejects keys nobody asked for. Call `finish()`
/// once every expected key has been read.
class StrictReader {
public:
    StrictReader(const Json& node, std::string path);

    bool has(const std::string& key) const;

    template <typename T>
    void read(const std::string& key, T& out) {
        seen_.insert(key);
        auto it = node_.find(key);
        if (it == node_.end() || it->is_null()) return;
        try {
            out = it->template get<T>();
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError("config key " + qualified(key) + ": " + e.what());
        }
    }

    /// Sub-object reader; an absent key yields an empty object.
    StrictReader child(const std::string& key);
    const Json& raw(const std::string& key);

    void finish() const;
    std::string qualified(const std::string& key) const;

private:
    const Json& node_;
    std::string path_;
    std::set<std::string> seen_;
    static const Json kEmpty;
    static const Json kNull;
};

Json read_json_file(const std::filesystem::path& path);
void write_json_file(const std::filesystem::path& path, const Json& value);

/// Applies a dotted-key override such as `train.epochs=20`. The value is
/// parsed as JSON when possible, else stored as a string. The key must exist
/// in `defaults` (the fully populated config) so typos are rejected.
void apply_override(Json& config, const Json& defaults, const std::string& assignment);

/// Atomic text write (temporary file then rename).
void write_file_atomic(const std::filesystem::path& path, const std::string& contents);
std::string read_text_file(const std::filesystem::path& path);

}  // namespace uidsc
