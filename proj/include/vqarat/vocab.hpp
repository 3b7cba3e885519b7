#pragma once

#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace vqarat {

// Word-level vocabulary. Ids 0..3 are always the special tokens.
class Vocabulary {
public:
    static constexpr std::size_t kPad = 0;
    static constexpr std::size_t kBos = 1;
    static constexpr std::size_t kEos = 2;
    static constexpr std::size_t kSep = 3;

    Vocabulary() {
        for (const char* t : {"<pad>", "<bos>", "<eos>", "<sep>"}) add(t);
    }

    std::size_t add(const std::string& token) {
        auto it = ids_.find(token);
        if (it != ids_.end()) return it->second;
        std::size_t id = tokens_.size();
        tokens_.push_back(token);
        ids_.emplace(token, id);
        return id;
    }

    std::size_t id(const std::string& token) const {
        auto it = ids_.find(token);
        if (it == ids_.end()) throw std::out_of_range("Vocabulary: unknown token '" + token + "'");
        return it->second;
    }

    bool contains(const std::string& token) const { return ids_.count(token) > 0; }

    const std::string& token(std::size_t id) const {
        if (id >= tokens_.size()) throw std::out_of_range("Vocabulary: id out of range");
        return tokens_[id];
    }

    std::size_t size() const { return tokens_.size(); }
    const std::vector<std::string>& tokens() const { return tokens_; }

    std::vector<std::size_t> encode(const std::vector<std::string>& words) const {
        std::vector<std::size_t> out;
        out.reserve(words.size());
        for (const auto& w : words) out.push_back(id(w));
        return out;
    }

    std::vector<std::string> decode(const std::vector<std::size_t>& ids) const {
        std::vector<std::string> out;
        out.reserve(ids.size());
        for (std::size_t i : ids) out.push_back(token(i));
        return out;
    }

private:
    std::vector<std::string> tokens_;
    std::unordered_map<std::string, std::size_t> ids_;
};

inline std::string join_tokens(const std::vector<std::string>& tokens) {
    std::string s;
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        if (i) s += " ";
        s += tokens[i];
    }
    return s;
}

}  // namespace vqarat
