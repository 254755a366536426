#pragma once

// Run manifests: config echo, version, timing, seeds and a SHA-256 digest
// for every emitted file.

#include <openssl/evp.h>

#include <array>
#include <chrono>
#include <cstdint>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "strainflow/cli/config.hpp"
#include "strainflow/rng.hpp"

namespace strainflow::cli {

inline constexpr const char* kVersion = "strainflow 0.1.0";

inline std::string sha256_hex(const std::string& bytes) {
    std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
    unsigned int len = 0;
    if (EVP_Digest(bytes.data(), bytes.size(), md.data(), &len, EVP_sha256(), nullptr) != 1)
        throw std::runtime_error("sha256: digest failed");
    static constexpr char hex[] = "0123456789abcdef";
    std::string out;
    for (unsigned int i = 0; i < len; ++i) {
        out += hex[md[i] >> 4];
        out += hex[md[i] & 0xf];
    }
    return out;
}

inline std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read '" + path.string() + "'");
    return std::string(std::istreambuf_iterator<char>(in), {});
}

inline std::string sha256_file(const std::filesystem::path& path) { return sha256_hex(read_file(path)); }

inline void write_file(const std::filesystem::path& path, const std::string& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
    out << bytes;
    if (!out) throw std::runtime_error("write failed for '" + path.string() + "'");
}

/// Collects outputs of one command invocation and writes manifest.json.
class RunManifest {
public:
    RunManifest(std::string command, std::filesystem::path out_dir, std::uint64_t seed)
        : command_(std::move(command)), out_dir_(std::move(out_dir)), seed_(seed), start_(std::chrono::steady_clock::now()),
          started_utc_(utc_now()) {}

    const std::filesystem::path& out_dir() const noexcept { return out_dir_; }

    /// Writes `bytes` under the output directory and records it.
    std::filesystem::path emit(const std::string& name, const std::string& bytes) {
        const std::filesystem::path path = out_dir_ / name;
        write_file(path, bytes);
        record(name);
        return path;
    }

    /// Records a file already written under the output directory.
    void record(const std::string& name) {
        for (auto& f : files_)
            if (f.name == name) {
                f.digest = sha256_file(out_dir_ / name);
                return;
            }
        files_.push_back({name, sha256_file(out_dir_ / name)});
    }

    void set_config(const Config& cfg) {
        config_ = nlohmann::ordered_json::object();
        for (const auto& [name, sec] : cfg.sections()) {
            if (sec.values().empty()) continue;
            auto& obj = config_[name] = nlohmann::ordered_json::object();
            for (const auto& [k, v] : sec.values()) obj[k] = v;
        }
    }

    void add_note(const std::string& key, nlohmann::ordered_json value) { notes_[key] = std::move(value); }

    nlohmann::ordered_json to_json(int exit_code) const {
        nlohmann::ordered_json j;
        j["command"] = command_;
        j["version"] = kVersion;
        j["started_utc"] = started_utc_;
        j["wall_clock_seconds"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
        j["exit_code"] = exit_code;
        j["config"] = config_;
        auto& seeds = j["seeds"];
        seeds["root"] = seed_;
        for (const auto& [name, stream] : kStreams) seeds[name] = stream_key(stream);
        j["notes"] = notes_;
        auto& outs = j["outputs"] = nlohmann::ordered_json::array();
        for (const auto& f : files_) outs.push_back({{"path", f.name}, {"sha256", f.digest}});
        return j;
    }

    std::filesystem::path write(int exit_code) const {
        const std::filesystem::path path = out_dir_ / "manifest.json";
        write_file(path, to_json(exit_code).dump(2) + "\n");
        return path;
    }

private:
    struct FileEntry {
        std::string name;
        std::string digest;
    };

    static constexpr std::array<std::pair<const char*, rng::Stream>, 7> kStreams{{
        {"data", rng::Stream::data},
        {"init", rng::Stream::init},
        {"probes", rng::Stream::probes},
        {"projections", rng::Stream::projections},
        {"eval", rng::Stream::eval},
        {"time", rng::Stream::time},
        {"check", rng::Stream::check},
    }};

    /// First draw of the stream at epoch 0, identifying its key.
    std::uint64_t stream_key(rng::Stream s) const { return rng::CounterRng(seed_, s).bits(0); }

    static std::string utc_now() {
        const std::time_t now = std::time(nullptr);
        std::tm tm{};
        gmtime_r(&now, &tm);
        char buf[32];
        std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
        return buf;
    }

    std::string command_;
    std::filesystem::path out_dir_;
    std::uint64_t seed_;
    std::chrono::steady_clock::time_point start_;
    std::string started_utc_;
    nlohmann::ordered_json config_ = nlohmann::ordered_json::object();
    nlohmann::ordered_json notes_ = nlohmann::ordered_json::object();
    std::vector<FileEntry> files_;
};

struct ManifestCheck {
    bool ok = true;
    std::vector<std::string> mismatches;
};

/// Recomputes every listed digest.
inline ManifestCheck verify_manifest(const std::filesystem::path& manifest_path) {
    const auto j = nlohmann::json::parse(read_file(manifest_path));
    const std::filesystem::path dir = manifest_path.parent_path();
    ManifestCheck check;
    for (const auto& f : j.at("outputs")) {
        const std::string name = f.at("path").get<std::string>();
        const std::filesystem::path p = dir / name;
        if (!std::filesystem::exists(p) || sha256_file(p) != f.at("sha256").get<std::string>()) {
            check.ok = false;
            check.mismatches.push_back(name);
        }
    }
    return check;
}

}  // namespace strainflow::cli
