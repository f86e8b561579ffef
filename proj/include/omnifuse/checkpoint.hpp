#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "omnifuse/tensor.hpp"

namespace omnifuse {

/// On-disk parameter container. Binary layout:
///   magic "OMNF1", then per record:
///     u64 LE name length, name bytes,
///     u64 LE rank, rank x u64 LE dims,
///     payload as little-endian 32-bit floats (row-major),
///   terminated by a zero name length.
/// Record order is preserved, so save -> load -> save is byte-identical.
struct Checkpoint {
    struct Record {
        std::string name;
        Shape dims;
        std::vector<float> values;

        std::size_t count() const;
    };

    std::vector<Record> records;

    void put(const std::string& name, const Tensor& t);
    void put_values(const std::string& name, const Shape& dims, const std::vector<double>& values);
    const Record* find(const std::string& name) const;
    bool has(const std::string& name) const { return find(name) != nullptr; }

    /// Copies a record into an existing tensor; shapes must match.
    void load_into(const std::string& name, Tensor& t) const;
    std::vector<double> values_of(const std::string& name) const;
};

std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint parse_checkpoint(const std::vector<std::uint8_t>& bytes);

void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

} // namespace omnifuse
