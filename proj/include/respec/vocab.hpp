#pragma once

#include <string>
#include <string_view>
#include <vector>

// Character-level vocabulary for text-to-text refinement models.
//
// Ids 0..2 are control tokens; id 3 is '\n'; ids 4..98 are the printable
// ASCII range 32..126. Every byte outside that range maps to the space
// character so encoding is total over arbitrary input.
namespace respec::vocab {

inline constexpr int kPad = 0;
inline constexpr int kBos = 1;
inline constexpr int kEos = 2;
inline constexpr int kNewline = 3;
inline constexpr int kFirstPrintable = 4;

constexpr int size() { return kFirstPrintable + 95; }  // 99

constexpr int char_id(char c) {
  if (c == '\n') return kNewline;
  auto u = static_cast<unsigned char>(c);
  if (u >= 32 && u <= 126) return kFirstPrintable + (u - 32);
  return kFirstPrintable + (' ' - 32);
}

// '\0' for the control ids (they carry no character).
constexpr char id_char(int id) {
  if (id == kNewline) return '\n';
  if (id >= kFirstPrintable && id < size()) return static_cast<char>(32 + id - kFirstPrintable);
  return '\0';
}

inline std::vector<int> encode(std::string_view text) {
  std::vector<int> ids;
  ids.reserve(text.size());
  for (char c : text) ids.push_back(char_id(c));
  return ids;
}

// Stops at the first EOS; control tokens contribute nothing.
inline std::string decode(const std::vector<int>& ids) {
  std::string out;
  out.reserve(ids.size());
  for (int id : ids) {
    if (id == kEos) break;
    char c = id_char(id);
    if (c != '\0') out.push_back(c);
  }
  return out;
}

}  // namespace respec::vocab
