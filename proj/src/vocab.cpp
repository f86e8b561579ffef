#include "omnifuse/vocab.hpp"

#include "omnifuse/errors.hpp"

namespace omnifuse {

Vocabulary::Vocabulary(const std::string& charset) : charset_(charset) {
    if (charset.empty()) throw ConfigError("vocabulary: empty charset");
    for (auto& v : id_by_char_) v = -1;
    for (std::size_t i = 0; i < charset.size(); ++i) {
        const auto c = static_cast<unsigned char>(charset[i]);
        if (id_by_char_[c] != -1) {
            throw ConfigError(std::string("vocabulary: duplicate character '") + charset[i] + "'");
        }
        id_by_char_[c] = static_cast<int>(kReserved + i);
    }
}

Vocabulary Vocabulary::printable_ascii() {
    std::string cs;
    for (char c = 0x20; c < 0x7f; ++c) cs.push_back(c);
    return Vocabulary(cs);
}

std::size_t Vocabulary::id_of(char c) const {
    const int id = id_by_char_[static_cast<unsigned char>(c)];
    if (id < 0) throw ConfigError(std::string("vocabulary: character '") + c + "' not in charset");
    return static_cast<std::size_t>(id);
}

std::vector<std::size_t> Vocabulary::encode(const std::string& text) const {
    std::vector<std::size_t> ids;
    ids.reserve(text.size());
    for (char c : text) ids.push_back(id_of(c));
    return ids;
}

std::string Vocabulary::decode(const std::vector<std::size_t>& ids, bool render_special) const {
    std::string out;
    for (std::size_t id : ids) {
        if (id >= size()) throw ContractError("vocabulary: id " + std::to_string(id) + " out of range");
        if (is_reserved(id)) {
            if (render_special) out += reserved_name(id);
            continue;
        }
        out.push_back(charset_[id - kReserved]);
    }
    return out;
}

const char* Vocabulary::reserved_name(std::size_t id) {
    switch (id) {
        case kPad: return "<pad>";
        case kBos: return "<bos>";
        case kEos: return "<eos>";
        case kBoi: return "<boi>";
        case kEoi: return "<eoi>";
        default: return "<?>";
    }
}

} // namespace omnifuse
