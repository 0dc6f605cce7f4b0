#include "uidsc/config.hpp"

#include <fstream>
#include <sstream>
#include <thread>

namespace uidsc {

const Json StrictReader::kEmpty = Json::object();
const Json StrictReader::kNull = Json();

StrictReader::StrictReader(const Json& node, std::string path) : node_(node), path_(std::move(path)) {
    if (!node_.is_object()) throw ConfigError("config section '" + path_ + "' must be an object");
}

bool StrictReader::has(const std::string& key) const { return node_.contains(key); }

StrictReader StrictReader::child(const std::string& key) {
    seen_.insert(key);
    auto it = node_.find(key);
    if (it == node_.end() || it->is_null()) return StrictReader(kEmpty, qualified(key));
    return StrictReader(*it, qualified(key));
}

const Json& StrictReader::raw(const std::string& key) {
    seen_.insert(key);
    auto it = node_.find(key);
    return it == node_.end() ? kNull : *it;
}

void StrictReader::finish() const {
    for (auto it = node_.begin(); it != node_.end(); ++it) {
        if (!seen_.count(it.key())) throw ConfigError("unknown config key " + qualified(it.key()));
    }
}

std::string StrictReader::qualified(const std::string& key) const {
    return path_.empty() ? key : path_ + "." + key;
}

std::string read_text_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

Json read_json_file(const std::filesystem::path& path) {
    const std::string text = read_text_file(path);
    try {
        return Json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("cannot parse JSON " + path.string() + ": " + e.what());
    }
}

void write_file_atomic(const std::filesystem::path& path, const std::string& contents) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    const std::filesystem::path tmp =
        path.string() + ".tmp" + std::to_string(std::hash<std::thread::id>{}(std::this_thread::get_id()));
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw DataError("cannot write " + tmp.string());
        out << contents;
        if (!out) throw DataError("write failed for " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

void write_json_file(const std::filesystem::path& path, const Json& value) {
    write_file_atomic(path, value.dump(2) + "\n");
}

void apply_override(Json& config, const Json& defaults, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) {
        throw ConfigError("override '" + assignment + "' is not of the form key=value");
    }
    const std::string key = assignment.substr(0, eq);
    const std::string text = assignment.substr(eq + 1);
    Json value;
    try {
        value = Json::parse(text);
    } catch (const nlohmann::json::exception&) {
        value = text;
    }
    Json* node = &config;
    const Json* ref = &defaults;
    std::size_t start = 0;
    while (true) {
        const auto dot = key.find('.', start);
        const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
        if (!ref->is_object() || !ref->contains(part)) throw ConfigError("unknown config key " + key);
        ref = &(*ref)[part];
        if (!node->is_object()) *node = Json::object();
        if (dot == std::string::npos) {
            (*node)[part] = value;
            return;
        }
        node = &(*node)[part];
        start = dot + 1;
    }
}

}  // namespace uidsc
