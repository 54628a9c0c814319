#pragma once

// Append-only metrics log: one JSON object per line, safe to share between threads.

#include <cstdio>
#include <filesystem>
#include <functional>
#include <mutex>
#include <string>
#include <vector>

#include <json.hpp>

namespace xl {

class MetricsLog {
public:
    MetricsLog() = default;
    // Opens `path` for appending, creating it when missing. Throws IoError.
    explicit MetricsLog(std::filesystem::path path);
    ~MetricsLog();
    MetricsLog(const MetricsLog&) = delete;
    MetricsLog& operator=(const MetricsLog&) = delete;

    bool is_open() const { return file_ != nullptr; }
    const std::filesystem::path& path() const { return path_; }

    // Writes and flushes one line. Throws IoError if the write does not complete.
    void emit(const nlohmann::json& record);
    void close();

private:
    std::filesystem::path path_;
    std::FILE* file_ = nullptr;
    std::mutex mutex_;
};

std::vector<nlohmann::json> read_metrics(const std::filesystem::path& path);

// Rewrites the log keeping only records accepted by `keep`. Used when resuming
// so that records past the checkpoint are produced again rather than duplicated.
void filter_metrics(const std::filesystem::path& path, const std::function<bool(const nlohmann::json&)>& keep);

}  // namespace xl
