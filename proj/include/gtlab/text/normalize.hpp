#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

namespace gtlab::text {

// Counts of lossy repairs made by normalize().
struct NormalizeReport {
  std::size_t invalid_bytes_dropped = 0;
  std::size_t entities_decoded = 0;
  std::size_t characters_mapped = 0;
  std::size_t characters_removed = 0;

  bool clean() const {
    return invalid_bytes_dropped == 0 && entities_decoded == 0 && characters_mapped == 0 &&
           characters_removed == 0;
  }
};

namespace detail {

inline void append_utf8(std::string& out, char32_t cp) {
  if (cp < 0x80) {
    out.push_back(static_cast<char>(cp));
  } else if (cp < 0x800) {
    out.push_back(static_cast<char>(0xC0 | (cp >> 6)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else if (cp < 0x10000) {
    out.push_back(static_cast<char>(0xE0 | (cp >> 12)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else {
    out.push_back(static_cast<char>(0xF0 | (cp >> 18)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  }
}

// Decodes one scalar value at `i`; returns its length, or 0 for an illegal
// sequence (overlong, surrogate, out of range, truncated, stray continuation).
inline std::size_t decode_utf8(std::string_view s, std::size_t i, char32_t& cp) {
  const auto b0 = static_cast<unsigned char>(s[i]);
  if (b0 < 0x80) {
    cp = b0;
    return 1;
  }
  std::size_t len = 0;
  char32_t min = 0;
  if ((b0 & 0xE0) == 0xC0) {
    len = 2;
    cp = b0 & 0x1F;
    min = 0x80;
  } else if ((b0 & 0xF0) == 0xE0) {
    len = 3;
    cp = b0 & 0x0F;
    min = 0x800;
  } else if ((b0 & 0xF8) == 0xF0) {
    len = 4;
    cp = b0 & 0x07;
    min = 0x10000;
  } else {
    return 0;
  }
  if (i + len > s.size()) {
    return 0;
  }
  for (std::size_t k = 1; k < len; ++k) {
    const auto b = static_cast<unsigned char>(s[i + k]);
    if ((b & 0xC0) != 0x80) {
      return 0;
    }
    cp = (cp << 6) | (b & 0x3F);
  }
  if (cp < min || cp > 0x10FFFF || (cp >= 0xD800 && cp <= 0xDFFF)) {
    return 0;
  }
  return len;
}

// Replacement for one code point: nullopt keeps it, "" removes it.
inline std::optional<std::string_view> map_char(char32_t cp) {
  switch (cp) {
    case 0x00A0:  // no-break space
    case 0x2002: case 0x2003: case 0x2004: case 0x2005: case 0x2006:
    case 0x2007: case 0x2008: case 0x2009: case 0x200A: case 0x202F:
    case 0x205F: case 0x3000: case 0x2000: case 0x2001:
      return " ";
    case 0x200B: case 0x200C: case 0x200D: case 0x2060: case 0xFEFF: case 0x00AD:
      return "";
    case 0x2018: case 0x2019: case 0x201A: case 0x2032:
      return "'";
    case 0x201C: case 0x201D: case 0x201E: case 0x2033:
      return "\"";
    case 0x2010: case 0x2011: case 0x2012: case 0x2013: case 0x2014: case 0x2212:
      return "-";
    case 0x2026:
      return "...";
    case 0x2022:
      return "*";
    case 0x2028: case 0x2029: case 0x0085:
      return "\n";
    default:
      break;
  }
  if (cp == '\r') {
    return "\n";
  }
  if ((cp < 0x20 && cp != '\t' && cp != '\n') || cp == 0x7F || (cp >= 0x80 && cp < 0xA0)) {
    return "";
  }
  return std::nullopt;
}

inline std::optional<char32_t> named_entity(std::string_view name) {
  if (name == "amp") return U'&';
  if (name == "lt") return U'<';
  if (name == "gt") return U'>';
  if (name == "quot") return U'"';
  if (name == "apos") return U'\'';
  if (name == "nbsp") return U' ';
  if (name == "ndash") return U'–';
  if (name == "mdash") return U'—';
  return std::nullopt;
}

// One pass: drop illegal UTF-8, fold CRLF, map special characters, decode
// HTML character references.
inline std::string normalize_pass(std::string_view in, NormalizeReport& report) {
  std::string out;
  out.reserve(in.size());
  std::size_t i = 0;
  while (i < in.size()) {
    char32_t cp = 0;
    const auto len = decode_utf8(in, i, cp);
    if (len == 0) {
      ++report.invalid_bytes_dropped;
      ++i;
      continue;
    }
    if (cp == '\r' && i + 1 < in.size() && in[i + 1] == '\n') {
      ++report.characters_removed;
      i += 1;
      continue;
    }
    if (cp == '&') {
      const auto semi = in.find(';', i + 1);
      if (semi != std::string_view::npos && semi - i <= 10) {
        const auto body = in.substr(i + 1, semi - i - 1);
        std::optional<char32_t> decoded;
        if (body.size() >= 2 && body[0] == '#') {
          char32_t v = 0;
          bool ok = true;
          const bool hex = body[1] == 'x' || body[1] == 'X';
          const auto digits = body.substr(hex ? 2 : 1);
          ok = !digits.empty();
          for (char ch : digits) {
            int d = -1;
            if (ch >= '0' && ch <= '9') d = ch - '0';
            else if (hex && ch >= 'a' && ch <= 'f') d = ch - 'a' + 10;
            else if (hex && ch >= 'A' && ch <= 'F') d = ch - 'A' + 10;
            if (d < 0 || v > 0x10FFFF) {
              ok = false;
              break;
            }
            v = v * (hex ? 16 : 10) + static_cast<char32_t>(d);
          }
          if (ok && v > 0 && v <= 0x10FFFF && !(v >= 0xD800 && v <= 0xDFFF)) {
            decoded = v;
          }
        } else {
          decoded = named_entity(body);
        }
        if (decoded) {
          ++report.entities_decoded;
          append_utf8(out, *decoded);
          i = semi + 1;
          continue;
        }
      }
    }
    if (auto repl = map_char(cp)) {
      if (repl->empty()) {
        ++report.characters_removed;
      } else {
        ++report.characters_mapped;
      }
      out += *repl;
    } else {
      out.append(in.substr(i, len));
    }
    i += len;
  }
  return out;
}

}  // namespace detail

// Valid UTF-8 out for any byte input; idempotent. Passes repeat until the
// text is stable, so nested entities are fully resolved.
inline std::string normalize(std::string_view text, NormalizeReport* report = nullptr) {
  NormalizeReport local;
  std::string cur(text);
  // Every changing pass either shortens the text or applies a same-length
  // mapping whose output is a fixed point, so this terminates.
  for (;;) {
    std::string next = detail::normalize_pass(cur, local);
    if (next == cur) {
      break;
    }
    cur = std::move(next);
  }
  if (report) {
    *report = local;
  }
  return cur;
}

inline bool is_valid_utf8(std::string_view s) {
  for (std::size_t i = 0; i < s.size();) {
    char32_t cp = 0;
    const auto len = detail::decode_utf8(s, i, cp);
    if (len == 0) {
      return false;
    }
    i += len;
  }
  return true;
}

// Each byte that does not start a legal sequence becomes U+FFFD. Sampled
// token streams can split a multi-byte character.
inline std::string repair_utf8(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  for (std::size_t i = 0; i < s.size();) {
    char32_t cp = 0;
    const auto len = detail::decode_utf8(s, i, cp);
    if (len == 0) {
      detail::append_utf8(out, 0xFFFD);
      ++i;
    } else {
      out.append(s.substr(i, len));
      i += len;
    }
  }
  return out;
}

}  // namespace gtlab::text
