#include "mitodpm/checkpoint.hpp"

#include "mitodpm/errors.hpp"

namespace mitodpm {

CheckpointWriter::CheckpointWriter(const std::string& format) { put("format", format); }

void CheckpointWriter::put(const std::string& key, std::int64_t value) { archive_.write(key, c10::IValue(value)); }
void CheckpointWriter::put(const std::string& key, double value) { archive_.write(key, c10::IValue(value)); }
void CheckpointWriter::put(const std::string& key, const std::string& value) { archive_.write(key, c10::IValue(value)); }
void CheckpointWriter::put(const std::string& key, const torch::Tensor& value) { archive_.write(key, value); }
void CheckpointWriter::put(const std::string& key, torch::serialize::OutputArchive& nested) { archive_.write(key, nested); }

void CheckpointWriter::save(const std::filesystem::path& path) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    // Write-then-rename so an interrupted save never leaves a torn checkpoint.
    auto tmp = path;
    tmp += ".tmp";
    archive_.save_to(tmp.string());
    std::filesystem::rename(tmp, path);
}

CheckpointReader::CheckpointReader(const std::filesystem::path& path, const std::string& expected_format) : path_(path) {
    if (!std::filesystem::is_regular_file(path)) throw ValidationError("checkpoint not found: " + path.string());
    try {
        archive_.load_from(path.string());
    } catch (const c10::Error& e) {
        throw ValidationError("cannot read checkpoint " + path.string() + ": " + e.what_without_backtrace());
    }
    const auto format = get_string("format");
    if (format != expected_format) {
        throw ValidationError(path.string() + " is a '" + format + "' checkpoint, expected '" + expected_format + "'");
    }
}

c10::IValue CheckpointReader::get(const std::string& key) {
    c10::IValue value;
    if (!archive_.try_read(key, value)) throw ValidationError(path_.string() + ": checkpoint lacks key '" + key + "'");
    return value;
}

bool CheckpointReader::has(const std::string& key) {
    c10::IValue value;
    return archive_.try_read(key, value);
}

std::int64_t CheckpointReader::get_int(const std::string& key) { return get(key).toInt(); }
double CheckpointReader::get_double(const std::string& key) { return get(key).toDouble(); }
std::string CheckpointReader::get_string(const std::string& key) { return get(key).toStringRef(); }
torch::Tensor CheckpointReader::get_tensor(const std::string& key) { return get(key).toTensor(); }

bool CheckpointReader::get_nested(const std::string& key, torch::serialize::InputArchive& nested) {
    return archive_.try_read(key, nested);
}

}  // namespace mitodpm
