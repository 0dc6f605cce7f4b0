#include "uidsc/tensor_archive.hpp"

#include <openssl/evp.h>

#include <bit>
#include <cstring>
#include <fstream>

#include "uidsc/errors.hpp"

namespace uidsc {

namespace {

constexpr char kMagic[8] = {'U', 'I', 'D', 'S', 'C', 'T', 'N', 'S'};

static_assert(std::endian::native == std::endian::little, "archive I/O assumes a little-endian host");

std::string hex(const unsigned char* data, unsigned len) {
    static const char* digits = "0123456789abcdef";
    std::string out;
    out.reserve(2 * len);
    for (unsigned i = 0; i < len; ++i) {
        out.push_back(digits[data[i] >> 4]);
        out.push_back(digits[data[i] & 0xf]);
    }
    return out;
}

}  // namespace

std::string sha256_hex(std::string_view bytes) {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned len = 0;
    if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
        throw Error("SHA-256 digest failed");
    }
    return hex(digest, len);
}

std::string sha256_hex(const std::vector<std::uint8_t>& bytes) {
    return sha256_hex(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
}

void write_archive(const std::filesystem::path& path, const TensorArchive& archive) {
    Json header;
    header["format_version"] = kArchiveFormatVersion;
    header["meta"] = archive.meta;
    Json entries = Json::array();
    std::string payload;
    std::size_t offset = 0;
    for (const auto& [name, t] : archive.tensors) {
        const Shape& s = t.shape();
        entries.push_back({{"name", name},
                           {"shape", {s.n, s.c, s.h, s.w}},
                           {"offset", offset},
                           {"count", t.size()}});
        payload.append(reinterpret_cast<const char*>(t.data()), t.size() * sizeof(double));
        offset += t.size();
    }
    header["tensors"] = entries;
    header["checksum"] = "sha256:" + sha256_hex(payload);
    const std::string header_text = header.dump();

    std::string blob(kMagic, sizeof(kMagic));
    const std::uint32_t version = kArchiveFormatVersion;
    const std::uint64_t header_len = header_text.size();
    blob.append(reinterpret_cast<const char*>(&version), sizeof(version));
    blob.append(reinterpret_cast<const char*>(&header_len), sizeof(header_len));
    blob += header_text;
    blob += payload;
    write_file_atomic(path, blob);
}

TensorArchive read_archive(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path)) throw CheckpointError("missing archive " + path.string());
    const std::string blob = read_text_file(path);
    constexpr std::size_t prefix = sizeof(kMagic) + sizeof(std::uint32_t) + sizeof(std::uint64_t);
    if (blob.size() < prefix || std::memcmp(blob.data(), kMagic, sizeof(kMagic)) != 0) {
        throw CheckpointError(path.string() + " is not a tensor archive");
    }
    std::uint32_t version = 0;
    std::uint64_t header_len = 0;
    std::memcpy(&version, blob.data() + sizeof(kMagic), sizeof(version));
    std::memcpy(&header_len, blob.data() + sizeof(kMagic) + sizeof(version), sizeof(header_len));
    if (version != kArchiveFormatVersion) {
        throw CheckpointError(path.string() + ": unsupported archive version " + std::to_string(version));
    }
    if (blob.size() < prefix + header_len) throw CheckpointError(path.string() + ": truncated header");
    Json header;
    try {
        header = Json::parse(blob.substr(prefix, header_len));
    } catch (const nlohmann::json::exception& e) {
        throw CheckpointError(path.string() + ": corrupt header: " + e.what());
    }
    const std::string_view payload(blob.data() + prefix + header_len, blob.size() - prefix - header_len);
    const std::string expected = header.value("checksum", "");
    if (expected != "sha256:" + sha256_hex(payload)) {
        throw CheckpointError(path.string() + ": payload checksum mismatch");
    }
    TensorArchive archive;
    archive.meta = header.value("meta", Json::object());
    for (const auto& e : header.at("tensors")) {
        const auto dims = e.at("shape").get<std::vector<int>>();
        if (dims.size() != 4) throw CheckpointError(path.string() + ": bad tensor shape");
        const Shape s{dims[0], dims[1], dims[2], dims[3]};
        const auto off = e.at("offset").get<std::size_t>();
        const auto count = e.at("count").get<std::size_t>();
        if (count != s.numel() || (off + count) * sizeof(double) > payload.size()) {
            throw CheckpointError(path.string() + ": tensor " + e.at("name").get<std::string>() +
                                  " is out of bounds");
        }
        std::vector<double> data(count);
        std::memcpy(data.data(), payload.data() + off * sizeof(double), count * sizeof(double));
        archive.tensors.emplace(e.at("name").get<std::string>(), Tensor(s, std::move(data)));
    }
    return archive;
}

}  // namespace uidsc
