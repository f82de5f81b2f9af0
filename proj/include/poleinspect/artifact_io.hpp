#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <string_view>

#include "poleinspect/digest.hpp"
#include "poleinspect/errors.hpp"

// Checksummed text artifacts (models, run manifests). Layout:
//
//   poleinspect-artifact v1 kind=<kind>
//   <payload lines>
//   checksum <fnv1a64 hex of everything above>
//
// Writing is canonical, so save -> load -> save reproduces the file byte for
// byte and a digest of the file identifies the artifact.

namespace poleinspect::artifact {

inline constexpr std::string_view kHeaderPrefix = "poleinspect-artifact v1 kind=";

struct Saved {
    std::string file_digest;  // hex digest of the complete file
};

inline std::string frame(const std::string& kind, const std::string& payload) {
    std::string content = std::string(kHeaderPrefix) + kind + "\n" + payload;
    if (content.empty() || content.back() != '\n') content += '\n';
    content += "checksum " + digest::hex_digest(content) + "\n";
    return content;
}

inline Saved save(const std::filesystem::path& path, const std::string& kind,
                  const std::string& payload) {
    const std::string content = frame(kind, payload);
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("artifact save: cannot open " + path.string());
    f << content;
    if (!f) throw IoError("artifact save: write failed " + path.string());
    return {digest::hex_digest(content)};
}

/// Reads and verifies an artifact, returning the payload between the header
/// and the checksum line.
inline std::string load(const std::filesystem::path& path, const std::string& kind) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("artifact load: cannot open " + path.string());
    std::string content(std::istreambuf_iterator<char>(f), {});

    const std::size_t tail = content.rfind("checksum ");
    if (tail == std::string::npos || content.back() != '\n')
        throw ChecksumError("artifact load: missing checksum line in " + path.string());
    const std::string body = content.substr(0, tail);
    const std::string recorded = content.substr(tail + 9, content.size() - tail - 10);
    if (digest::hex_digest(body) != recorded)
        throw ChecksumError("artifact load: checksum mismatch in " + path.string());

    const std::size_t eol = body.find('\n');
    const std::string header = body.substr(0, eol);
    if (header.rfind(kHeaderPrefix, 0) != 0)
        throw FormatVersionError("artifact load: bad header in " + path.string());
    const std::string found_kind = header.substr(kHeaderPrefix.size());
    if (found_kind != kind)
        throw FormatVersionError("artifact load: kind '" + found_kind +
                                 "', expected '" + kind + "' in " + path.string());
    return body.substr(eol + 1);
}

inline std::string file_digest(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("file_digest: cannot open " + path.string());
    std::string content(std::istreambuf_iterator<char>(f), {});
    return digest::hex_digest(content);
}

}  // namespace poleinspect::artifact
