#include "mos/file_access.hpp"

#include <fstream>
#include <sstream>

#include "mos/errors.hpp"

namespace mos {

std::string DiskFileLayer::read(const std::filesystem::path &path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

void DiskFileLayer::write(const std::filesystem::path &path, const std::string &content) {
    std::error_code ec;
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path(), ec);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) throw IoError("write to '" + path.string() + "' failed");
}

bool DiskFileLayer::exists(const std::filesystem::path &path) { return std::filesystem::exists(path); }

std::string RecordingFileLayer::read(const std::filesystem::path &path) {
    {
        std::lock_guard lock(mutex_);
        reads_.push_back(path);
    }
    return inner_.read(path);
}

void RecordingFileLayer::write(const std::filesystem::path &path, const std::string &content) {
    {
        std::lock_guard lock(mutex_);
        writes_.push_back(path);
    }
    inner_.write(path, content);
}

bool RecordingFileLayer::exists(const std::filesystem::path &path) { return inner_.exists(path); }

std::vector<std::filesystem::path> RecordingFileLayer::reads() const {
    std::lock_guard lock(mutex_);
    return reads_;
}

std::vector<std::filesystem::path> RecordingFileLayer::writes() const {
    std::lock_guard lock(mutex_);
    return writes_;
}

std::size_t RecordingFileLayer::reads_matching(const std::string &needle) const {
    std::lock_guard lock(mutex_);
    std::size_t n = 0;
    for (const auto &p : reads_)
        if (p.filename().string().find(needle) != std::string::npos) ++n;
    return n;
}

FileLayer &default_file_layer() {
    static DiskFileLayer disk;
    return disk;
}

} // namespace mos
