#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <string>

#include <json.hpp>

#include "ccta/core.hpp"

namespace ccta::service {

/// Append-only JSON-lines log. Each line carries a sequence number, a record
/// type, the payload and the SHA-256 of the payload's compact serialization.
class RecordLog {
public:
    explicit RecordLog(std::filesystem::path path) : path_(std::move(path)) {}

    [[nodiscard]] const std::filesystem::path& path() const { return path_; }
    [[nodiscard]] std::uint64_t last_seq() const { return last_seq_; }

    /// Replays every intact record; a torn final line is dropped, any other
    /// damage is an error.
    void replay(const std::function<void(std::uint64_t, const std::string&, const nlohmann::json&)>& apply) {
        if (!std::filesystem::exists(path_)) return;
        const std::string text = read_file(path_.string());
        std::size_t pos = 0, line_no = 0;
        std::size_t good_end = 0;
        while (pos < text.size()) {
            const std::size_t nl = text.find('\n', pos);
            const bool last = nl == std::string::npos;
            const std::string line = text.substr(pos, last ? std::string::npos : nl - pos);
            ++line_no;
            nlohmann::json rec;
            bool parsed = true;
            try {
                rec = nlohmann::json::parse(line);
            } catch (const nlohmann::json::exception&) {
                parsed = false;
            }
            if (!parsed || last) {
                if (last) break;  // torn tail
                throw Error(ErrorKind::MalformedInput,
                            path_.string() + ": unreadable record on line " + std::to_string(line_no));
            }
            const auto& payload = rec.at("payload");
            if (sha256_hex(payload.dump()) != rec.at("sha256").get<std::string>())
                throw Error(ErrorKind::MalformedInput,
                            path_.string() + ": checksum mismatch on line " + std::to_string(line_no));
            last_seq_ = rec.at("seq").get<std::uint64_t>();
            apply(last_seq_, rec.at("type").get<std::string>(), payload);
            pos = nl + 1;
            good_end = pos;
        }
        if (good_end < text.size()) {
            // drop the torn tail so later appends start on a fresh line
            std::filesystem::resize_file(path_, good_end);
        }
    }

    std::uint64_t append(const std::string& type, const nlohmann::json& payload) {
        const std::uint64_t seq = ++last_seq_;
        const nlohmann::json rec{{"seq", seq}, {"type", type}, {"payload", payload}, {"sha256", sha256_hex(payload.dump())}};
        std::ofstream out(path_, std::ios::binary | std::ios::app);
        require(static_cast<bool>(out), ErrorKind::Io, "cannot append to " + path_.string());
        out << rec.dump() << '\n';
        out.flush();
        require(static_cast<bool>(out), ErrorKind::Io, "write failed on " + path_.string());
        return seq;
    }

    void set_last_seq(std::uint64_t s) { last_seq_ = std::max(last_seq_, s); }

private:
    std::filesystem::path path_;
    std::uint64_t last_seq_ = 0;
};

/// Writes `state` as a checksummed snapshot through a temporary file.
inline void write_snapshot(const std::filesystem::path& path, std::uint64_t seq, const nlohmann::json& state) {
    const nlohmann::json snap{{"seq", seq}, {"state", state}, {"sha256", sha256_hex(state.dump())}};
    const auto tmp = path.string() + ".tmp";
    write_file(tmp, snap.dump() + "\n");
    std::filesystem::rename(tmp, path);
}

/// Snapshot state and sequence number, or nothing if absent or damaged.
inline std::optional<std::pair<std::uint64_t, nlohmann::json>> read_snapshot(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path)) return std::nullopt;
    try {
        const auto snap = nlohmann::json::parse(read_file(path.string()));
        const auto& state = snap.at("state");
        if (sha256_hex(state.dump()) != snap.at("sha256").get<std::string>()) return std::nullopt;
        return std::make_pair(snap.at("seq").get<std::uint64_t>(), state);
    } catch (const std::exception&) {
        return std::nullopt;
    }
}

}  // namespace ccta::service
