#include "tokshift/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <set>

namespace tokshift {

namespace {

constexpr char kMagic[4] = {'T', 'K', 'S', 'F'};
constexpr uint32_t kVersion = 1;

void put_u16(std::string& buf, uint16_t v) {
    buf.push_back(static_cast<char>(v & 0xff));
    buf.push_back(static_cast<char>((v >> 8) & 0xff));
}

void put_u32(std::string& buf, uint32_t v) {
    for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& buf, uint64_t v) {
    for (int i = 0; i < 8; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f32(std::string& buf, float v) {
    uint32_t bits;
    std::memcpy(&bits, &v, 4);
    put_u32(buf, bits);
}

class Reader {
public:
    explicit Reader(std::string bytes) : bytes_(std::move(bytes)) {}

    void need(size_t n, const char* what) {
        TS_CONFIG_CHECK(pos_ + n <= bytes_.size(), "checkpoint truncated while reading ", what);
    }

    uint8_t u8(const char* what) {
        need(1, what);
        return static_cast<uint8_t>(bytes_[pos_++]);
    }

    uint16_t u16(const char* what) {
        need(2, what);
        uint16_t v = 0;
        for (int i = 0; i < 2; ++i) v |= static_cast<uint16_t>(static_cast<uint8_t>(bytes_[pos_++])) << (8 * i);
        return v;
    }

    uint32_t u32(const char* what) {
        need(4, what);
        uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(static_cast<uint8_t>(bytes_[pos_++])) << (8 * i);
        return v;
    }

    uint64_t u64(const char* what) {
        need(8, what);
        uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(static_cast<uint8_t>(bytes_[pos_++])) << (8 * i);
        return v;
    }

    float f32(const char* what) {
        uint32_t bits = u32(what);
        float v;
        std::memcpy(&v, &bits, 4);
        return v;
    }

    std::string str(size_t n, const char* what) {
        need(n, what);
        std::string s = bytes_.substr(pos_, n);
        pos_ += n;
        return s;
    }

    bool done() const { return pos_ == bytes_.size(); }

private:
    std::string bytes_;
    size_t pos_ = 0;
};

}  // namespace

void save_checkpoint(const std::string& path, const Parameters& params) {
    uint32_t count = 0;
    params.for_each([&](const std::string&, const Tensor&) { ++count; });

    std::string buf;
    buf.append(kMagic, 4);
    put_u32(buf, kVersion);
    put_u32(buf, count);
    params.for_each([&](const std::string& name, const Tensor& t) {
        TS_CHECK(name.size() <= UINT16_MAX, "tensor name too long: ", name);
        put_u16(buf, static_cast<uint16_t>(name.size()));
        buf += name;
        buf.push_back(static_cast<char>(t.rank()));
        for (int64_t dv : t.shape) put_u64(buf, static_cast<uint64_t>(dv));
        for (double v : t.data) put_f32(buf, static_cast<float>(v));
    });

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    TS_CHECK(out.good(), "cannot open ", path, " for writing");
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    TS_CHECK(out.good(), "write failed for ", path);
}

Parameters load_checkpoint(const std::string& path, const ModelConfig& cfg) {
    std::ifstream in(path, std::ios::binary);
    TS_CONFIG_CHECK(in.good(), "cannot open checkpoint ", path);
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    Reader r(std::move(bytes));

    TS_CONFIG_CHECK(r.str(4, "magic") == std::string(kMagic, 4), "bad checkpoint magic in ", path);
    const uint32_t version = r.u32("version");
    TS_CONFIG_CHECK(version == kVersion, "unsupported checkpoint version ", version);
    const uint32_t count = r.u32("tensor count");

    Parameters params = Parameters::zeros(cfg);
    uint32_t expected = 0;
    params.for_each([&](const std::string&, const Tensor&) { ++expected; });
    TS_CONFIG_CHECK(count == expected, "checkpoint has ", count, " tensors, config expects ",
                    expected);

    std::set<std::string> seen;
    for (uint32_t i = 0; i < count; ++i) {
        const uint16_t name_len = r.u16("name length");
        const std::string name = r.str(name_len, "name");
        const uint8_t rank = r.u8("rank");
        std::vector<int64_t> dims;
        for (uint8_t k = 0; k < rank; ++k) dims.push_back(static_cast<int64_t>(r.u64("dim")));
        TS_CONFIG_CHECK(seen.insert(name).second, "duplicate checkpoint tensor '", name, "'");

        Tensor* target = nullptr;
        params.for_each([&](const std::string& n, Tensor& t) {
            if (n == name) target = &t;
        });
        TS_CONFIG_CHECK(target != nullptr, "checkpoint tensor '", name,
                        "' not part of this model");
        TS_CONFIG_CHECK(dims == target->shape, "checkpoint tensor '", name, "' has shape ",
                        shape_str(dims), " but config expects ", shape_str(target->shape));
        for (double& v : target->data) v = static_cast<double>(r.f32("values"));
    }
    TS_CONFIG_CHECK(r.done(), "trailing bytes after checkpoint payload in ", path);
    return params;
}

}  // namespace tokshift
