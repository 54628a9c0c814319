#include "xlearner/metrics.hpp"

#include <cerrno>
#include <cstring>
#include <fstream>

#include "xlearner/errors.hpp"

namespace xl {

MetricsLog::MetricsLog(std::filesystem::path path) : path_(std::move(path)) {
    std::error_code ec;
    if (path_.has_parent_path()) std::filesystem::create_directories(path_.parent_path(), ec);
    if (ec) throw IoError("cannot create " + path_.parent_path().string() + ": " + ec.message());
    file_ = std::fopen(path_.string().c_str(), "ab");
    if (!file_) throw IoError("cannot open metrics log " + path_.string() + ": " + std::strerror(errno));
}

MetricsLog::~MetricsLog() {
    if (file_) std::fclose(file_);
}

void MetricsLog::close() {
    std::lock_guard lock(mutex_);
    if (file_ && std::fclose(file_) != 0) {
        file_ = nullptr;
        throw IoError("closing metrics log " + path_.string() + " failed");
    }
    file_ = nullptr;
}

void MetricsLog::emit(const nlohmann::json& record) {
    std::string line = record.dump();
    line.push_back('\n');
    std::lock_guard lock(mutex_);
    if (!file_) throw IoError("metrics log is not open");
    if (std::fwrite(line.data(), 1, line.size(), file_) != line.size() || std::fflush(file_) != 0)
        throw IoError("writing metrics log " + path_.string() + " failed: " + std::strerror(errno));
}

std::vector<nlohmann::json> read_metrics(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read metrics log " + path.string());
    std::vector<nlohmann::json> out;
    std::string line;
    std::size_t n = 0;
    while (std::getline(in, line)) {
        ++n;
        if (line.empty()) continue;
        try {
            out.push_back(nlohmann::json::parse(line));
        } catch (const nlohmann::json::exception& e) {
            throw IoError(path.string() + ":" + std::to_string(n) + ": malformed record: " + e.what());
        }
    }
    return out;
}

void filter_metrics(const std::filesystem::path& path, const std::function<bool(const nlohmann::json&)>& keep) {
    if (!std::filesystem::exists(path)) return;
    const auto records = read_metrics(path);
    const auto tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::trunc);
        for (const auto& r : records)
            if (keep(r)) out << r.dump() << '\n';
        if (!out) throw IoError("rewriting metrics log " + path.string() + " failed");
    }
    std::filesystem::rename(tmp, path);
}

}  // namespace xl
