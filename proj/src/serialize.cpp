#include "lcfm/serialize.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "lcfm/errors.hpp"

static_assert(std::endian::native == std::endian::little,
              "container payload is little-endian; big-endian hosts unsupported");

namespace lcfm {

namespace {

void write_u32(std::ostream& os, std::uint32_t v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof v);
}
void write_u64(std::ostream& os, std::uint64_t v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof v);
}
std::uint32_t read_u32(std::istream& is) {
    std::uint32_t v = 0;
    is.read(reinterpret_cast<char*>(&v), sizeof v);
    return v;
}
std::uint64_t read_u64(std::istream& is) {
    std::uint64_t v = 0;
    is.read(reinterpret_cast<char*>(&v), sizeof v);
    return v;
}

}  // namespace

void save_container(const std::string& path, const nlohmann::json& header,
                    const std::vector<double>& payload) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
        if (!os) throw IoError("cannot open for write: " + tmp);
        os.write(kContainerMagic, sizeof kContainerMagic);
        write_u32(os, kContainerVersion);
        const std::string head = header.dump();
        write_u64(os, head.size());
        os.write(head.data(), static_cast<std::streamsize>(head.size()));
        write_u64(os, payload.size());
        os.write(reinterpret_cast<const char*>(payload.data()),
                 static_cast<std::streamsize>(payload.size() * sizeof(double)));
        if (!os) throw IoError("write failed: " + tmp);
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw IoError("rename " + tmp + " -> " + path + ": " + ec.message());
}

std::pair<nlohmann::json, std::vector<double>> load_container(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open: " + path);
    char magic[8];
    is.read(magic, sizeof magic);
    if (!is || std::memcmp(magic, kContainerMagic, sizeof magic) != 0) {
        throw IoError("bad magic in " + path);
    }
    const std::uint32_t version = read_u32(is);
    if (version != kContainerVersion) {
        throw IoError("unsupported container version " + std::to_string(version) + " in " + path);
    }
    const std::uint64_t head_len = read_u64(is);
    std::string head(head_len, '\0');
    is.read(head.data(), static_cast<std::streamsize>(head_len));
    const std::uint64_t count = read_u64(is);
    std::vector<double> payload(count);
    is.read(reinterpret_cast<char*>(payload.data()),
            static_cast<std::streamsize>(count * sizeof(double)));
    if (!is) throw IoError("truncated container: " + path);
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(head);
    } catch (const nlohmann::json::exception& e) {
        throw IoError("bad container header in " + path + ": " + e.what());
    }
    return {std::move(header), std::move(payload)};
}

void save_tensors(const std::string& path,
                  const std::vector<std::pair<std::string, const Matrix*>>& tensors,
                  const nlohmann::json& meta) {
    nlohmann::json header;
    header["kind"] = "checkpoint";
    header["meta"] = meta;
    std::vector<double> payload;
    std::uint64_t offset = 0;
    nlohmann::json list = nlohmann::json::array();
    for (const auto& [name, m] : tensors) {
        list.push_back({{"name", name}, {"rows", m->rows()}, {"cols", m->cols()},
                        {"offset", offset}});
        payload.insert(payload.end(), m->values().begin(), m->values().end());
        offset += m->size();
    }
    header["tensors"] = std::move(list);
    save_container(path, header, payload);
}

std::map<std::string, Matrix> load_tensors(const std::string& path, nlohmann::json* meta_out) {
    auto [header, payload] = load_container(path);
    if (header.value("kind", "") != "checkpoint") {
        throw IoError("not a checkpoint file: " + path);
    }
    if (meta_out) *meta_out = header.value("meta", nlohmann::json::object());
    std::map<std::string, Matrix> out;
    for (const auto& entry : header.at("tensors")) {
        const auto name = entry.at("name").get<std::string>();
        const auto rows = entry.at("rows").get<std::size_t>();
        const auto cols = entry.at("cols").get<std::size_t>();
        const auto offset = entry.at("offset").get<std::uint64_t>();
        if (offset + rows * cols > payload.size()) {
            throw IoError("tensor '" + name + "' exceeds payload in " + path);
        }
        Matrix m(rows, cols);
        std::copy(payload.begin() + static_cast<std::ptrdiff_t>(offset),
                  payload.begin() + static_cast<std::ptrdiff_t>(offset + rows * cols),
                  m.values().begin());
        out.emplace(name, std::move(m));
    }
    return out;
}

void save_dataset(const std::string& path, const Matrix& data, const nlohmann::json& meta) {
    nlohmann::json header;
    header["kind"] = "dataset";
    header["count"] = data.rows();
    header["dim"] = data.cols();
    header["meta"] = meta;
    save_container(path, header, data.values());
}

Matrix load_dataset(const std::string& path, nlohmann::json* meta_out) {
    auto [header, payload] = load_container(path);
    if (header.value("kind", "") != "dataset") throw IoError("not a dataset file: " + path);
    const auto count = header.at("count").get<std::size_t>();
    const auto dim = header.at("dim").get<std::size_t>();
    if (count * dim != payload.size()) throw IoError("dataset payload size mismatch: " + path);
    if (meta_out) *meta_out = header.value("meta", nlohmann::json::object());
    Matrix m(count, dim);
    m.values() = std::move(payload);
    return m;
}

void write_text_atomic(const std::string& path, const std::string& content) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
        if (!os) throw IoError("cannot open for write: " + tmp);
        os.write(content.data(), static_cast<std::streamsize>(content.size()));
        if (!os) throw IoError("write failed: " + tmp);
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw IoError("rename " + tmp + " -> " + path + ": " + ec.message());
}

}  // namespace lcfm
