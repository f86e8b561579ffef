#pragma once

#include <string>
#include <vector>

namespace omnifuse {

/// Character-level vocabulary with five reserved ids ahead of the charset.
class Vocabulary {
public:
    static constexpr std::size_t kPad = 0;
    static constexpr std::size_t kBos = 1;
    static constexpr std::size_t kEos = 2;
    static constexpr std::size_t kBoi = 3; // begin of image block
    static constexpr std::size_t kEoi = 4; // end of image block
    static constexpr std::size_t kReserved = 5;

    explicit Vocabulary(const std::string& charset);

    /// All printable ASCII (0x20..0x7e), the default for text tasks.
    static Vocabulary printable_ascii();

    std::size_t size() const { return kReserved + charset_.size(); }
    const std::string& charset() const { return charset_; }

    std::size_t id_of(char c) const;
    std::vector<std::size_t> encode(const std::string& text) const;
    /// Renders character ids back to text; reserved ids are skipped unless
    /// render_special is set (then they appear as <pad>, <bos>, ...).
    std::string decode(const std::vector<std::size_t>& ids, bool render_special = false) const;

    static bool is_reserved(std::size_t id) { return id < kReserved; }
    static const char* reserved_name(std::size_t id);

private:
    std::string charset_;
    int id_by_char_[256];
};

} // namespace omnifuse
