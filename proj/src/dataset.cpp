#include "copi/dataset.hpp"

#include <array>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace copi {

namespace {

constexpr char kMagic[5] = {'R', 'P', 'M', 'D', '1'};
constexpr uint32_t kVersion = 1;

std::array<uint32_t, 256> make_crc_table() {
    std::array<uint32_t, 256> table{};
    for (uint32_t i = 0; i < 256; ++i) {
        uint32_t c = i;
        for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xedb88320u ^ (c >> 1) : c >> 1;
        table[i] = c;
    }
    return table;
}

void append_u16(std::vector<uint8_t>& buf, uint16_t v) {
    buf.push_back(static_cast<uint8_t>(v & 0xff));
    buf.push_back(static_cast<uint8_t>(v >> 8));
}

void append_u32(std::vector<uint8_t>& buf, uint32_t v) {
    for (int i = 0; i < 4; ++i) buf.push_back(static_cast<uint8_t>((v >> (8 * i)) & 0xff));
}

void append_u64(std::vector<uint8_t>& buf, uint64_t v) {
    for (int i = 0; i < 8; ++i) buf.push_back(static_cast<uint8_t>((v >> (8 * i)) & 0xff));
}

void append_panel(std::vector<uint8_t>& buf, const Panel& p) {
    buf.push_back(static_cast<uint8_t>(p.attributes.number));
    buf.push_back(static_cast<uint8_t>(p.attributes.shape_type));
    buf.push_back(static_cast<uint8_t>(p.attributes.size));
    buf.push_back(static_cast<uint8_t>(p.attributes.shade));
    buf.insert(buf.end(), p.pixels.begin(), p.pixels.end());
}

class Reader {
public:
    Reader(const std::vector<uint8_t>& data, std::string path)
        : data_(data), path_(std::move(path)) {}

    uint8_t u8() { return static_cast<uint8_t>(raw(1)); }
    uint16_t u16() { return static_cast<uint16_t>(raw(2)); }
    uint32_t u32() { return static_cast<uint32_t>(raw(4)); }
    uint64_t u64() { return raw(8); }

    const uint8_t* view(size_t n) {
        need(n);
        const uint8_t* p = data_.data() + pos_;
        pos_ += n;
        return p;
    }

    size_t pos() const { return pos_; }
    size_t remaining() const { return data_.size() - pos_; }

    [[noreturn]] void fail(const std::string& why) const {
        throw std::runtime_error("dataset " + path_ + ": " + why + " at byte offset " +
                                 std::to_string(pos_));
    }

private:
    uint64_t raw(int n) {
        need(static_cast<size_t>(n));
        uint64_t v = 0;
        for (int i = 0; i < n; ++i) v |= static_cast<uint64_t>(data_[pos_ + i]) << (8 * i);
        pos_ += static_cast<size_t>(n);
        return v;
    }
    void need(size_t n) const {
        if (pos_ + n > data_.size()) fail("truncated");
    }

    const std::vector<uint8_t>& data_;
    std::string path_;
    size_t pos_ = 0;
};

}  // namespace

uint32_t crc32(const uint8_t* data, size_t len, uint32_t seed) {
    static const std::array<uint32_t, 256> table = make_crc_table();
    uint32_t c = seed ^ 0xffffffffu;
    for (size_t i = 0; i < len; ++i) c = table[(c ^ data[i]) & 0xff] ^ (c >> 8);
    return c ^ 0xffffffffu;
}

void write_dataset(const std::vector<ProblemInstance>& instances, const std::string& path) {
    std::vector<uint8_t> buf;
    buf.reserve(64 + instances.size() * (16 * (4 + kPanelPixels) + 32));
    buf.insert(buf.end(), kMagic, kMagic + sizeof(kMagic));
    append_u32(buf, kVersion);
    append_u64(buf, instances.size());
    append_u16(buf, kPanelSide);
    append_u16(buf, kPanelSide);
    buf.push_back(kNumAttributes);
    buf.push_back(kNumRules);
    for (const auto& inst : instances) {
        const size_t start = buf.size();
        append_u64(buf, inst.seed);
        for (int a = 0; a < kNumAttributes; ++a)
            buf.push_back(static_cast<uint8_t>(inst.rule_spec.rules[a]));
        buf.push_back(static_cast<uint8_t>(inst.answer_index));
        for (const auto& p : inst.context) append_panel(buf, p);
        for (const auto& p : inst.candidates) append_panel(buf, p);
        append_u32(buf, crc32(buf.data() + start, buf.size() - start));
    }

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open " + path + " for writing");
    out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (!out) throw std::runtime_error("write failed for " + path);

    std::ofstream sidecar(path + ".txt", std::ios::trunc);
    if (!sidecar) throw std::runtime_error("cannot open " + path + ".txt for writing");
    for (const auto& inst : instances) {
        sidecar << "seed=" << inst.seed << " rules=";
        for (int a = 0; a < kNumAttributes; ++a) {
            if (a) sidecar << ",";
            sidecar << rule_name(inst.rule_spec.rules[a]);
        }
        sidecar << " answer=" << inst.answer_index << "\n";
    }
}

std::vector<ProblemInstance> read_dataset(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path);
    std::vector<uint8_t> data((std::istreambuf_iterator<char>(in)),
                              std::istreambuf_iterator<char>());
    Reader r(data, path);

    {
        const uint8_t* m = r.view(sizeof(kMagic));
        if (std::memcmp(m, kMagic, sizeof(kMagic)) != 0) r.fail("bad magic");
    }
    if (r.u32() != kVersion) r.fail("unsupported version");
    const uint64_t count = r.u64();
    if (r.u16() != kPanelSide || r.u16() != kPanelSide) r.fail("unexpected panel geometry");
    if (r.u8() != kNumAttributes || r.u8() != kNumRules) r.fail("unexpected attribute/rule counts");

    std::vector<ProblemInstance> out;
    out.reserve(count);
    for (uint64_t i = 0; i < count; ++i) {
        const size_t start = r.pos();
        ProblemInstance inst;
        inst.seed = r.u64();
        for (int a = 0; a < kNumAttributes; ++a) {
            const uint8_t rule = r.u8();
            if (rule >= kNumRules) r.fail("bad rule id");
            inst.rule_spec.rules[a] = static_cast<Rule>(rule);
        }
        inst.answer_index = r.u8();
        if (inst.answer_index >= 8) r.fail("bad answer index");
        auto read_panel = [&r](Panel& p) {
            p.attributes.number = r.u8();
            p.attributes.shape_type = r.u8();
            p.attributes.size = r.u8();
            p.attributes.shade = r.u8();
            if (!p.attributes.valid()) r.fail("attributes out of range");
            const uint8_t* px = r.view(kPanelPixels);
            std::memcpy(p.pixels.data(), px, kPanelPixels);
        };
        for (auto& p : inst.context) read_panel(p);
        for (auto& p : inst.candidates) read_panel(p);
        const size_t end = r.pos();
        const uint32_t stored = r.u32();
        const uint32_t actual = crc32(data.data() + start, end - start);
        if (stored != actual) r.fail("checksum mismatch for instance " + std::to_string(i));
        out.push_back(std::move(inst));
    }
    if (r.remaining() != 0) r.fail("trailing bytes");
    return out;
}

}  // namespace copi
