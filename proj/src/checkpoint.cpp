#include "copi/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace copi {

namespace {

constexpr char kMagic[5] = {'C', 'O', 'P', 'I', '1'};

void put_u32(std::string& buf, uint32_t v) {
    for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& buf, uint64_t v) {
    for (int i = 0; i < 8; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f64(std::string& buf, double v) { put_u64(buf, std::bit_cast<uint64_t>(v)); }

class Reader {
public:
    Reader(const std::string& data, const std::string& path) : data_(data), path_(path) {}

    uint32_t u32() { return static_cast<uint32_t>(raw(4)); }
    uint64_t u64() { return raw(8); }
    double f64() { return std::bit_cast<double>(raw(8)); }

    std::string bytes(size_t n) {
        need(n);
        std::string s = data_.substr(pos_, n);
        pos_ += n;
        return s;
    }

    size_t pos() const { return pos_; }
    size_t remaining() const { return data_.size() - pos_; }

    [[noreturn]] void fail(const std::string& why) const {
        throw std::runtime_error("checkpoint " + path_ + ": " + why + " at byte offset " +
                                 std::to_string(pos_));
    }

private:
    uint64_t raw(int n) {
        need(static_cast<size_t>(n));
        uint64_t v = 0;
        for (int i = 0; i < n; ++i)
            v |= static_cast<uint64_t>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
        pos_ += static_cast<size_t>(n);
        return v;
    }
    void need(size_t n) {
        if (pos_ + n > data_.size()) fail("truncated");
    }

    const std::string& data_;
    std::string path_;
    size_t pos_ = 0;
};

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path);
    std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return data;
}

std::string encode(const ParameterStore& params) {
    std::string buf;
    buf.append(kMagic, sizeof(kMagic));
    put_u64(buf, params.count());
    for (const auto& [name, t] : params.entries()) {
        put_u32(buf, static_cast<uint32_t>(name.size()));
        buf.append(name);
        put_u32(buf, static_cast<uint32_t>(t->shape.size()));
        for (int d : t->shape) put_u64(buf, static_cast<uint64_t>(d));
        for (double v : t->values) put_f64(buf, v);
    }
    put_u64(buf, buf.size());
    return buf;
}

}  // namespace

void save_checkpoint(const ParameterStore& params, const std::string& path) {
    const std::string buf = encode(params);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open " + path + " for writing");
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!out) throw std::runtime_error("write failed for " + path);
}

void load_checkpoint(ParameterStore& params, const std::string& path) {
    const std::string data = read_file(path);
    Reader r(data, path);
    if (r.bytes(sizeof(kMagic)) != std::string(kMagic, sizeof(kMagic))) r.fail("bad magic");
    const uint64_t count = r.u64();
    if (count != params.count())
        r.fail("holds " + std::to_string(count) + " parameters, store expects " +
               std::to_string(params.count()));
    for (const auto& [name, t] : params.entries()) {
        const uint32_t name_len = r.u32();
        const std::string got = r.bytes(name_len);
        if (got != name) r.fail("parameter '" + got + "' where '" + name + "' expected");
        const uint32_t rank = r.u32();
        if (rank != t->shape.size()) r.fail("rank mismatch for " + name);
        for (int d : t->shape) {
            const uint64_t e = r.u64();
            if (e != static_cast<uint64_t>(d)) r.fail("extent mismatch for " + name);
        }
        for (auto& v : t->values) v = r.f64();
    }
    const size_t body = r.pos();
    const uint64_t footer = r.u64();
    if (footer != body) r.fail("footer length " + std::to_string(footer) + " != body length " +
                               std::to_string(body));
    if (r.remaining() != 0) r.fail("trailing bytes");
}

std::vector<std::pair<std::string, std::vector<int>>> peek_checkpoint(const std::string& path) {
    const std::string data = read_file(path);
    Reader r(data, path);
    if (r.bytes(sizeof(kMagic)) != std::string(kMagic, sizeof(kMagic))) r.fail("bad magic");
    const uint64_t count = r.u64();
    std::vector<std::pair<std::string, std::vector<int>>> out;
    for (uint64_t i = 0; i < count; ++i) {
        const uint32_t name_len = r.u32();
        const std::string name = r.bytes(name_len);
        const uint32_t rank = r.u32();
        std::vector<int> shape;
        int64_t n = 1;
        for (uint32_t d = 0; d < rank; ++d) {
            shape.push_back(static_cast<int>(r.u64()));
            n *= shape.back();
        }
        r.bytes(static_cast<size_t>(n) * 8);
        out.emplace_back(name, shape);
    }
    return out;
}

}  // namespace copi
