#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace mimic {

/// Punctuation kept by normalize_text.
inline constexpr std::string_view kAllowedPunctuation = ".,!?'\"-:;";

/// Keeps ASCII letters (case preserved), digits, kAllowedPunctuation and
/// spaces; whitespace runs collapse to one space and the ends are trimmed.
/// Throws DataError when nothing survives.
std::string normalize_text(std::string_view raw);

/// Character inventory: id 0 is padding, id 1 end-of-sequence, then the
/// observed characters in byte order.
class Vocabulary {
 public:
  static constexpr std::int64_t kPad = 0;
  static constexpr std::int64_t kEos = 1;

  Vocabulary() = default;
  explicit Vocabulary(std::string symbols);

  static Vocabulary build(const std::vector<std::string>& texts);

  /// Character ids followed by kEos. Throws DataError naming the first
  /// character missing from the inventory.
  std::vector<std::int64_t> encode(std::string_view text) const;
  std::string decode(const std::vector<std::int64_t>& ids) const;

  std::size_t size() const { return symbols_.size() + 2; }
  const std::string& symbols() const { return symbols_; }

 private:
  std::string symbols_;
  std::int64_t index_[256] = {};
};

}  // namespace mimic
