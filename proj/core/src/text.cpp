#include "mimic/text.hpp"

#include <algorithm>
#include <array>
#include <cctype>

#include "mimic/error.hpp"

namespace mimic {

namespace {

bool allowed(unsigned char c) {
  if (c >= 0x80) return false;
  return std::isalnum(c) != 0 || kAllowedPunctuation.find(static_cast<char>(c)) != std::string_view::npos;
}

std::string printable(unsigned char c) {
  if (c >= 0x20 && c < 0x7f) return std::string("'") + static_cast<char>(c) + "'";
  static constexpr char kHex[] = "0123456789abcdef";
  return std::string("byte 0x") + kHex[c >> 4] + kHex[c & 15];
}

}  // namespace

std::string normalize_text(std::string_view raw) {
  std::string out;
  out.reserve(raw.size());
  bool pending_space = false;
  for (char ch : raw) {
    const auto c = static_cast<unsigned char>(ch);
    if (c < 0x80 && std::isspace(c)) {
      pending_space = !out.empty();
    } else if (allowed(c)) {
      if (pending_space) out.push_back(' ');
      pending_space = false;
      out.push_back(ch);
    }
  }
  if (out.empty()) throw DataError("normalize_text: nothing left of \"" + std::string(raw) + "\"");
  return out;
}

Vocabulary::Vocabulary(std::string symbols) : symbols_(std::move(symbols)) {
  std::fill(std::begin(index_), std::end(index_), -1);
  for (std::size_t i = 0; i < symbols_.size(); ++i) {
    const auto c = static_cast<unsigned char>(symbols_[i]);
    if (index_[c] != -1) throw DataError("Vocabulary: duplicate symbol " + printable(c));
    index_[c] = static_cast<std::int64_t>(i) + 2;
  }
}

Vocabulary Vocabulary::build(const std::vector<std::string>& texts) {
  std::array<bool, 256> seen{};
  for (const auto& t : texts) {
    for (char ch : t) seen[static_cast<unsigned char>(ch)] = true;
  }
  std::string symbols;
  for (int c = 0; c < 256; ++c) {
    if (seen[static_cast<std::size_t>(c)]) symbols.push_back(static_cast<char>(c));
  }
  return Vocabulary(std::move(symbols));
}

std::vector<std::int64_t> Vocabulary::encode(std::string_view text) const {
  std::vector<std::int64_t> ids;
  ids.reserve(text.size() + 1);
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (symbols_.empty() || index_[c] < 0) {
      throw DataError("character " + printable(c) + " is not in the vocabulary");
    }
    ids.push_back(index_[c]);
  }
  ids.push_back(kEos);
  return ids;
}

std::string Vocabulary::decode(const std::vector<std::int64_t>& ids) const {
  std::string out;
  for (std::int64_t id : ids) {
    if (id == kEos) break;
    if (id < 2 || id >= static_cast<std::int64_t>(size())) continue;
    out.push_back(symbols_[static_cast<std::size_t>(id - 2)]);
  }
  return out;
}

}  // namespace mimic
