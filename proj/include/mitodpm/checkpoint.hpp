#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <filesystem>
#include <string>

namespace mitodpm {

// Typed key/value view over torch's serialize archives. A checkpoint is a
// single file whose "format" key names its layout.
class CheckpointWriter {
public:
    explicit CheckpointWriter(const std::string& format);

    void put(const std::string& key, std::int64_t value);
    void put(const std::string& key, double value);
    void put(const std::string& key, const std::string& value);
    void put(const std::string& key, const torch::Tensor& value);
    void put(const std::string& key, torch::serialize::OutputArchive& nested);

    torch::serialize::OutputArchive& archive() { return archive_; }
    void save(const std::filesystem::path& path);

private:
    torch::serialize::OutputArchive archive_;
};

class CheckpointReader {
public:
    // Throws ValidationError when the file is missing or its format differs.
    CheckpointReader(const std::filesystem::path& path, const std::string& expected_format);

    bool has(const std::string& key);
    std::int64_t get_int(const std::string& key);
    double get_double(const std::string& key);
    std::string get_string(const std::string& key);
    torch::Tensor get_tensor(const std::string& key);
    bool get_nested(const std::string& key, torch::serialize::InputArchive& nested);

    torch::serialize::InputArchive& archive() { return archive_; }
    const std::filesystem::path& path() const { return path_; }

private:
    c10::IValue get(const std::string& key);
    std::filesystem::path path_;
    torch::serialize::InputArchive archive_;
};

}  // namespace mitodpm
