#include "deblurkit/serialize.hpp"

#include "deblurkit/errors.hpp"

#include <zlib.h>

#include <cstring>
#include <fstream>

namespace dbk {

namespace {

constexpr char kMagic[4] = {'D', 'B', 'K', 'C'};

void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

class Reader {
public:
    Reader(const std::string& buf, const std::string& path) : buf_(buf), path_(path) {}

    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i)
            v |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf_[pos_ + i])) << (8 * i);
        pos_ += 4;
        return v;
    }
    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i)
            v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf_[pos_ + i])) << (8 * i);
        pos_ += 8;
        return v;
    }
    std::string bytes(std::uint64_t n) {
        need(n);
        std::string s = buf_.substr(pos_, n);
        pos_ += n;
        return s;
    }
    std::vector<float> floats(std::uint64_t count) {
        need(count * 4);
        std::vector<float> v(count);
        std::memcpy(v.data(), buf_.data() + pos_, count * 4);
        pos_ += count * 4;
        return v;
    }
    std::size_t pos() const { return pos_; }

private:
    void need(std::uint64_t n) const {
        if (pos_ + n > buf_.size())
            throw ContractError("checkpoint truncated: " + path_);
    }
    const std::string& buf_;
    std::string path_;
    std::size_t pos_ = 0;
};

} // namespace

const std::vector<float>* CheckpointBlob::find(const std::string& name) const {
    for (const auto& [n, v] : arrays)
        if (n == name) return &v;
    return nullptr;
}

std::uint64_t CheckpointBlob::byte_size() const {
    std::uint64_t total = 4 + 4 + 8 + config_json.size() + 4;
    for (const auto& [name, values] : arrays)
        total += 8 + name.size() + 8 + static_cast<std::uint64_t>(values.size()) * 4;
    return total + 4; // trailing crc32
}

void save_checkpoint_blob(const std::filesystem::path& path, const CheckpointBlob& blob) {
    std::string out;
    out.reserve(blob.byte_size());
    out.append(kMagic, 4);
    put_u32(out, blob.version);
    put_u64(out, blob.config_json.size());
    out.append(blob.config_json);
    put_u32(out, static_cast<std::uint32_t>(blob.arrays.size()));
    for (const auto& [name, values] : blob.arrays) {
        put_u64(out, name.size());
        out.append(name);
        put_u64(out, values.size());
        const std::size_t off = out.size();
        out.resize(off + values.size() * 4);
        std::memcpy(out.data() + off, values.data(), values.size() * 4);
    }
    const auto crc = static_cast<std::uint32_t>(
        crc32(0L, reinterpret_cast<const Bytef*>(out.data()),
              static_cast<uInt>(out.size())));
    put_u32(out, crc);

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open for writing: " + path.string());
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw IoError("short write: " + path.string());
}

CheckpointBlob load_checkpoint_blob(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open checkpoint: " + path.string());
    std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());

    if (buf.size() < 16 || std::memcmp(buf.data(), kMagic, 4) != 0)
        throw ContractError("not a checkpoint file: " + path.string());
    const auto stored_crc_pos = buf.size() - 4;
    std::uint32_t stored_crc = 0;
    for (int i = 0; i < 4; ++i)
        stored_crc |= static_cast<std::uint32_t>(
                          static_cast<unsigned char>(buf[stored_crc_pos + i])) << (8 * i);
    const auto computed = static_cast<std::uint32_t>(
        crc32(0L, reinterpret_cast<const Bytef*>(buf.data()),
              static_cast<uInt>(stored_crc_pos)));
    if (computed != stored_crc)
        throw ContractError("checkpoint crc mismatch (corrupt file): " + path.string());

    Reader r(buf, path.string());
    r.bytes(4); // magic, already checked
    CheckpointBlob blob;
    blob.version = r.u32();
    if (blob.version != 1)
        throw ContractError("unsupported checkpoint version " +
                            std::to_string(blob.version) + ": " + path.string());
    blob.config_json = r.bytes(r.u64());
    const std::uint32_t count = r.u32();
    blob.arrays.reserve(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        std::string name = r.bytes(r.u64());
        std::vector<float> values = r.floats(r.u64());
        blob.arrays.emplace_back(std::move(name), std::move(values));
    }
    if (r.pos() != stored_crc_pos)
        throw ContractError("checkpoint has trailing bytes: " + path.string());
    return blob;
}

} // namespace dbk
