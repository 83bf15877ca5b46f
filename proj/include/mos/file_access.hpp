#pragma once

// All dataset and checkpoint file access goes through a FileLayer so tests can
// record which paths a command opened.

#include <filesystem>
#include <mutex>
#include <string>
#include <vector>

namespace mos {

class FileLayer {
public:
    virtual ~FileLayer() = default;
    virtual std::string read(const std::filesystem::path &path) = 0;
    virtual void write(const std::filesystem::path &path, const std::string &content) = 0;
    virtual bool exists(const std::filesystem::path &path) = 0;
};

/// Plain filesystem access. Writes create parent directories.
class DiskFileLayer : public FileLayer {
public:
    std::string read(const std::filesystem::path &path) override;
    void write(const std::filesystem::path &path, const std::string &content) override;
    bool exists(const std::filesystem::path &path) override;
};

/// Forwards to another layer and keeps a log of every read and write.
class RecordingFileLayer : public FileLayer {
public:
    explicit RecordingFileLayer(FileLayer &inner) : inner_(inner) {}

    std::string read(const std::filesystem::path &path) override;
    void write(const std::filesystem::path &path, const std::string &content) override;
    bool exists(const std::filesystem::path &path) override;

    std::vector<std::filesystem::path> reads() const;
    std::vector<std::filesystem::path> writes() const;
    /// Number of reads whose filename contains `needle`.
    std::size_t reads_matching(const std::string &needle) const;

private:
    FileLayer &inner_;
    mutable std::mutex mutex_;
    std::vector<std::filesystem::path> reads_;
    std::vector<std::filesystem::path> writes_;
};

FileLayer &default_file_layer();

} // namespace mos
