#include "omnifuse/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include "omnifuse/errors.hpp"

namespace omnifuse {

namespace {

constexpr char kMagic[5] = {'O', 'M', 'N', 'F', '1'};
constexpr std::size_t kMaxRank = 8;
constexpr std::uint64_t kMaxNameLen = 4096;

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
}

void put_f32(std::vector<std::uint8_t>& out, float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>((bits >> (8 * i)) & 0xff));
}

class Reader {
public:
    explicit Reader(const std::vector<std::uint8_t>& bytes) : bytes_(bytes) {}

    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes_[pos_ + static_cast<std::size_t>(i)]) << (8 * i);
        pos_ += 8;
        return v;
    }
    float f32() {
        need(4);
        std::uint32_t bits = 0;
        for (int i = 0; i < 4; ++i) bits |= static_cast<std::uint32_t>(bytes_[pos_ + static_cast<std::size_t>(i)]) << (8 * i);
        pos_ += 4;
        float v;
        std::memcpy(&v, &bits, 4);
        return v;
    }
    std::string str(std::size_t n) {
        need(n);
        std::string s(reinterpret_cast<const char*>(&bytes_[pos_]), n);
        pos_ += n;
        return s;
    }
    void expect_magic() {
        need(5);
        if (std::memcmp(&bytes_[0], kMagic, 5) != 0) {
            throw FormatError("checkpoint: bad magic, expected OMNF1");
        }
        pos_ = 5;
    }
    bool at_end() const { return pos_ == bytes_.size(); }

private:
    void need(std::size_t n) const {
        if (pos_ + n > bytes_.size()) throw FormatError("checkpoint: truncated file");
    }
    const std::vector<std::uint8_t>& bytes_;
    std::size_t pos_ = 0;
};

} // namespace

std::size_t Checkpoint::Record::count() const {
    std::size_t n = 1;
    for (std::size_t d : dims) n *= d;
    return n;
}

void Checkpoint::put(const std::string& name, const Tensor& t) {
    put_values(name, t.shape(), t.data());
}

void Checkpoint::put_values(const std::string& name, const Shape& dims,
                            const std::vector<double>& values) {
    if (name.empty()) throw ContractError("checkpoint: empty record name");
    if (has(name)) throw ContractError("checkpoint: duplicate record '" + name + "'");
    Record r;
    r.name = name;
    r.dims = dims;
    r.values.reserve(values.size());
    for (double v : values) r.values.push_back(static_cast<float>(v));
    if (r.values.size() != r.count()) {
        throw ShapeError("checkpoint: record '" + name + "' has " + std::to_string(r.values.size()) +
                         " values for shape " + shape_str(dims));
    }
    records.push_back(std::move(r));
}

const Checkpoint::Record* Checkpoint::find(const std::string& name) const {
    for (const auto& r : records)
        if (r.name == name) return &r;
    return nullptr;
}

void Checkpoint::load_into(const std::string& name, Tensor& t) const {
    const Record* r = find(name);
    if (!r) throw FormatError("checkpoint: missing record '" + name + "'");
    if (r->dims != t.shape()) {
        throw ShapeError("checkpoint: record '" + name + "' has shape " + shape_str(r->dims) +
                         ", expected " + shape_str(t.shape()));
    }
    auto& data = t.mutable_data();
    for (std::size_t i = 0; i < data.size(); ++i) data[i] = static_cast<double>(r->values[i]);
}

std::vector<double> Checkpoint::values_of(const std::string& name) const {
    const Record* r = find(name);
    if (!r) throw FormatError("checkpoint: missing record '" + name + "'");
    return {r->values.begin(), r->values.end()};
}

std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& ckpt) {
    std::vector<std::uint8_t> out(kMagic, kMagic + 5);
    for (const auto& r : ckpt.records) {
        put_u64(out, r.name.size());
        out.insert(out.end(), r.name.begin(), r.name.end());
        put_u64(out, r.dims.size());
        for (std::size_t d : r.dims) put_u64(out, d);
        for (float v : r.values) put_f32(out, v);
    }
    put_u64(out, 0);
    return out;
}

Checkpoint parse_checkpoint(const std::vector<std::uint8_t>& bytes) {
    Reader rd(bytes);
    rd.expect_magic();
    Checkpoint ckpt;
    for (;;) {
        const std::uint64_t name_len = rd.u64();
        if (name_len == 0) break;
        if (name_len > kMaxNameLen) {
            throw FormatError("checkpoint: implausible name length " + std::to_string(name_len));
        }
        Checkpoint::Record r;
        r.name = rd.str(static_cast<std::size_t>(name_len));
        const std::uint64_t rank = rd.u64();
        if (rank > kMaxRank) {
            throw FormatError("checkpoint: record '" + r.name + "' has rank " + std::to_string(rank));
        }
        for (std::uint64_t i = 0; i < rank; ++i) r.dims.push_back(static_cast<std::size_t>(rd.u64()));
        const std::size_t n = r.count();
        r.values.reserve(n);
        for (std::size_t i = 0; i < n; ++i) r.values.push_back(rd.f32());
        if (ckpt.has(r.name)) throw FormatError("checkpoint: duplicate record '" + r.name + "'");
        ckpt.records.push_back(std::move(r));
    }
    if (!rd.at_end()) throw FormatError("checkpoint: trailing bytes after terminator");
    return ckpt;
}

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
    auto bytes = serialize_checkpoint(ckpt);
    std::ofstream f(path, std::ios::binary);
    if (!f) throw FormatError("checkpoint: cannot open '" + path + "' for writing");
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!f.good()) throw FormatError("checkpoint: write failed for '" + path + "'");
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw FormatError("checkpoint: cannot open '" + path + "'");
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                                    std::istreambuf_iterator<char>());
    return parse_checkpoint(bytes);
}

} // namespace omnifuse
