// Text extraction for the supported upload formats.

#include <zlib.h>

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <cstring>
#include <map>

#include <fmt/format.h>

#include "sagekb/error.hpp"
#include "sagekb/html.hpp"
#include "sagekb/ingestion.hpp"
#include "sagekb/util.hpp"

namespace sagekb {

bool is_valid_utf8(std::string_view s) {
  std::size_t i = 0;
  while (i < s.size()) {
    const auto c = static_cast<unsigned char>(s[i]);
    std::size_t len = 0;
    if (c < 0x80) len = 1;
    else if ((c >> 5) == 0x6) len = 2;
    else if ((c >> 4) == 0xE) len = 3;
    else if ((c >> 3) == 0x1E) len = 4;
    else return false;
    if (i + len > s.size()) return false;
    for (std::size_t k = 1; k < len; ++k) {
      if ((static_cast<unsigned char>(s[i + k]) & 0xC0) != 0x80) return false;
    }
    i += len;
  }
  return true;
}

namespace {

std::vector<std::vector<std::string>> parse_csv_rows(std::string_view s) {
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> row;
  std::string field;
  bool quoted = false;
  bool any = false;
  for (std::size_t i = 0; i < s.size(); ++i) {
    const char c = s[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < s.size() && s[i + 1] == '"') {
          field.push_back('"');
          ++i;
        } else {
          quoted = false;
        }
      } else {
        field.push_back(c);
      }
      continue;
    }
    if (c == '"') {
      quoted = true;
      any = true;
    } else if (c == ',') {
      row.push_back(std::move(field));
      field.clear();
      any = true;
    } else if (c == '\n' || c == '\r') {
      if (c == '\r' && i + 1 < s.size() && s[i + 1] == '\n') ++i;
      if (any || !field.empty()) {
        row.push_back(std::move(field));
        rows.push_back(std::move(row));
      }
      row.clear();
      field.clear();
      any = false;
    } else {
      field.push_back(c);
      any = true;
    }
  }
  if (quoted) throw Error(ErrorCode::undecodable, "unterminated quoted CSV field", "parse");
  if (any || !field.empty()) {
    row.push_back(std::move(field));
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string flatten_table(const std::vector<std::vector<std::string>>& rows) {
  if (rows.size() < 2) return {};
  const auto& header = rows.front();
  std::vector<std::string> lines;
  for (std::size_t r = 1; r < rows.size(); ++r) {
    std::vector<std::string> cells;
    for (std::size_t c = 0; c < rows[r].size(); ++c) {
      const std::string value = trim(rows[r][c]);
      const std::string col = c < header.size() && !trim_view(header[c]).empty()
                                  ? trim(header[c])
                                  : fmt::format("col{}", c + 1);
      cells.push_back(col + "=" + value);
    }
    lines.push_back(join(cells, " "));
  }
  return join(lines, "\n");
}

}  // namespace

std::string parse_csv_text(std::string_view bytes) { return flatten_table(parse_csv_rows(bytes)); }

// ---------------------------------------------------------------------------
// zlib helpers
// ---------------------------------------------------------------------------

namespace {

std::string inflate_bytes(std::string_view in, int window_bits) {
  z_stream zs{};
  if (inflateInit2(&zs, window_bits) != Z_OK) {
    throw Error(ErrorCode::internal, "inflateInit2 failed");
  }
  zs.next_in = reinterpret_cast<Bytef*>(const_cast<char*>(in.data()));
  zs.avail_in = static_cast<uInt>(in.size());
  std::string out;
  char buf[16384];
  int ret = Z_OK;
  while (ret != Z_STREAM_END) {
    zs.next_out = reinterpret_cast<Bytef*>(buf);
    zs.avail_out = sizeof(buf);
    ret = inflate(&zs, Z_NO_FLUSH);
    if (ret != Z_OK && ret != Z_STREAM_END) {
      inflateEnd(&zs);
      throw Error(ErrorCode::undecodable, "corrupt deflate stream", "parse");
    }
    out.append(buf, sizeof(buf) - zs.avail_out);
    if (ret == Z_OK && zs.avail_in == 0 && zs.avail_out != 0) break;
  }
  inflateEnd(&zs);
  return out;
}

std::uint32_t le32(std::string_view s, std::size_t off) {
  if (off + 4 > s.size()) throw Error(ErrorCode::undecodable, "truncated zip archive", "parse");
  std::uint32_t v = 0;
  for (int i = 3; i >= 0; --i) v = (v << 8) | static_cast<unsigned char>(s[off + i]);
  return v;
}

std::uint16_t le16(std::string_view s, std::size_t off) {
  if (off + 2 > s.size()) throw Error(ErrorCode::undecodable, "truncated zip archive", "parse");
  return static_cast<std::uint16_t>(static_cast<unsigned char>(s[off]) |
                                    (static_cast<unsigned char>(s[off + 1]) << 8));
}

struct ZipEntry {
  std::string name;
  std::uint16_t method = 0;
  std::uint32_t compressed_size = 0;
  std::uint32_t local_offset = 0;
};

std::vector<ZipEntry> zip_directory(std::string_view a) {
  if (a.size() < 22) throw Error(ErrorCode::undecodable, "not a zip archive", "parse");
  std::size_t eocd = std::string_view::npos;
  const std::size_t floor = a.size() > 22 + 65535 ? a.size() - 22 - 65535 : 0;
  for (std::size_t i = a.size() - 22 + 1; i-- > floor;) {
    if (le32(a, i) == 0x06054b50) {
      eocd = i;
      break;
    }
  }
  if (eocd == std::string_view::npos) throw Error(ErrorCode::undecodable, "not a zip archive", "parse");
  const std::uint16_t count = le16(a, eocd + 10);
  std::size_t off = le32(a, eocd + 16);
  std::vector<ZipEntry> entries;
  for (std::uint16_t i = 0; i < count; ++i) {
    if (le32(a, off) != 0x02014b50) throw Error(ErrorCode::undecodable, "bad zip directory", "parse");
    ZipEntry e;
    e.method = le16(a, off + 10);
    e.compressed_size = le32(a, off + 20);
    const std::uint16_t name_len = le16(a, off + 28);
    const std::uint16_t extra_len = le16(a, off + 30);
    const std::uint16_t comment_len = le16(a, off + 32);
    e.local_offset = le32(a, off + 42);
    if (off + 46 + name_len > a.size()) throw Error(ErrorCode::undecodable, "bad zip directory", "parse");
    e.name = std::string(a.substr(off + 46, name_len));
    entries.push_back(std::move(e));
    off += 46 + name_len + extra_len + comment_len;
  }
  return entries;
}

}  // namespace

std::vector<std::string> list_zip_members(std::string_view archive) {
  std::vector<std::string> names;
  for (auto& e : zip_directory(archive)) names.push_back(std::move(e.name));
  return names;
}

std::string read_zip_member(std::string_view a, std::string_view name) {
  for (const ZipEntry& e : zip_directory(a)) {
    if (e.name != name) continue;
    const std::size_t off = e.local_offset;
    if (le32(a, off) != 0x04034b50) throw Error(ErrorCode::undecodable, "bad zip local header", "parse");
    const std::size_t data = off + 30 + le16(a, off + 26) + le16(a, off + 28);
    if (data + e.compressed_size > a.size()) throw Error(ErrorCode::undecodable, "truncated zip member", "parse");
    const std::string_view raw = a.substr(data, e.compressed_size);
    if (e.method == 0) return std::string(raw);
    if (e.method == 8) return inflate_bytes(raw, -MAX_WBITS);
    throw Error(ErrorCode::undecodable, fmt::format("unsupported zip compression {}", e.method), "parse");
  }
  throw Error(ErrorCode::undecodable, fmt::format("archive has no member {}", name), "parse");
}

// ---------------------------------------------------------------------------
// DOCX / XLSX
// ---------------------------------------------------------------------------

namespace {

void replace_all(std::string& s, std::string_view from, std::string_view to) {
  std::size_t pos = 0;
  while ((pos = s.find(from, pos)) != std::string::npos) {
    s.replace(pos, from.size(), to);
    pos += to.size();
  }
}

std::string strip_xml_tags(std::string_view xml) {
  std::string out;
  bool in_tag = false;
  for (char c : xml) {
    if (c == '<') in_tag = true;
    else if (c == '>') in_tag = false;
    else if (!in_tag) out.push_back(c);
  }
  return decode_html_entities(out);
}

// All text between <t ...> and </t> style elements for `tag` ("t" or "w:t").
std::string text_runs(std::string_view xml, std::string_view tag) {
  std::string out;
  const std::string open = "<" + std::string(tag);
  const std::string close = "</" + std::string(tag) + ">";
  std::size_t pos = 0;
  while ((pos = xml.find(open, pos)) != std::string_view::npos) {
    const std::size_t after = pos + open.size();
    if (after < xml.size() && xml[after] != '>' && xml[after] != ' ' && xml[after] != '/') {
      pos = after;
      continue;
    }
    const auto gt = xml.find('>', pos);
    if (gt == std::string_view::npos) break;
    if (xml[gt - 1] == '/') {
      pos = gt;
      continue;
    }
    const auto end = xml.find(close, gt);
    if (end == std::string_view::npos) break;
    out += decode_html_entities(xml.substr(gt + 1, end - gt - 1));
    pos = end + close.size();
  }
  return out;
}

std::size_t column_index(std::string_view ref) {
  std::size_t col = 0;
  for (char c : ref) {
    if (!std::isalpha(static_cast<unsigned char>(c))) break;
    col = col * 26 + static_cast<std::size_t>(std::toupper(static_cast<unsigned char>(c)) - 'A' + 1);
  }
  return col == 0 ? 0 : col - 1;
}

std::string xml_attr(std::string_view tag, std::string_view name) {
  const std::string needle = " " + std::string(name) + "=\"";
  const auto pos = tag.find(needle);
  if (pos == std::string_view::npos) return {};
  const auto start = pos + needle.size();
  const auto end = tag.find('"', start);
  return std::string(tag.substr(start, end - start));
}

}  // namespace

std::string extract_docx_text(std::string_view bytes) {
  std::string xml = read_zip_member(bytes, "word/document.xml");
  replace_all(xml, "</w:p>", "\n");
  replace_all(xml, "<w:tab/>", "\t");
  replace_all(xml, "<w:br/>", "\n");
  std::vector<std::string> lines;
  for (const auto& line : split_lines(strip_xml_tags(xml))) {
    std::string l = trim(line);
    if (!l.empty()) lines.push_back(std::move(l));
  }
  return join(lines, "\n");
}

std::string extract_xlsx_text(std::string_view bytes) {
  std::vector<std::string> shared;
  const auto members = list_zip_members(bytes);
  if (std::find(members.begin(), members.end(), "xl/sharedStrings.xml") != members.end()) {
    const std::string sst = read_zip_member(bytes, "xl/sharedStrings.xml");
    std::size_t pos = 0;
    while ((pos = sst.find("<si>", pos)) != std::string::npos) {
      const auto end = sst.find("</si>", pos);
      if (end == std::string::npos) break;
      shared.push_back(text_runs(std::string_view(sst).substr(pos, end - pos), "t"));
      pos = end;
    }
  }
  std::vector<std::string> sheets;
  for (const auto& m : members) {
    if (m.starts_with("xl/worksheets/sheet") && m.ends_with(".xml")) sheets.push_back(m);
  }
  std::sort(sheets.begin(), sheets.end());
  std::vector<std::string> blocks;
  for (const auto& sheet : sheets) {
    const std::string xml = read_zip_member(bytes, sheet);
    std::vector<std::vector<std::string>> rows;
    std::size_t pos = 0;
    while ((pos = xml.find("<row", pos)) != std::string::npos) {
      const auto end = xml.find("</row>", pos);
      if (end == std::string::npos) break;
      const std::string_view row_xml = std::string_view(xml).substr(pos, end - pos);
      std::vector<std::string> row;
      std::size_t cpos = 0;
      while ((cpos = row_xml.find("<c ", cpos)) != std::string_view::npos) {
        const auto tag_end = row_xml.find('>', cpos);
        if (tag_end == std::string_view::npos) break;
        const std::string_view tag = row_xml.substr(cpos, tag_end - cpos + 1);
        std::size_t cell_end = tag_end + 1;
        std::string value;
        if (tag.back() == '>' && tag[tag.size() - 2] != '/') {
          const auto close = row_xml.find("</c>", tag_end);
          const std::string_view body = row_xml.substr(tag_end + 1, close - tag_end - 1);
          const std::string type = xml_attr(tag, "t");
          if (type == "s") {
            const std::string v = text_runs(body, "v");
            const std::size_t idx = v.empty() ? shared.size() : std::stoul(v);
            if (idx < shared.size()) value = shared[idx];
          } else if (type == "inlineStr") {
            value = text_runs(body, "t");
          } else {
            value = text_runs(body, "v");
          }
          cell_end = close + 4;
        }
        const std::size_t col = column_index(xml_attr(tag, "r"));
        if (row.size() <= col) row.resize(col + 1);
        row[col] = value;
        cpos = cell_end;
      }
      rows.push_back(std::move(row));
      pos = end;
    }
    std::string block = flatten_table(rows);
    if (!block.empty()) blocks.push_back(std::move(block));
  }
  return join(blocks, "\n");
}

// ---------------------------------------------------------------------------
// PDF
// ---------------------------------------------------------------------------

namespace {

// Reads a PDF literal string starting at s[i] == '('; returns its bytes.
std::string pdf_literal(std::string_view s, std::size_t& i) {
  std::string out;
  int depth = 0;
  for (; i < s.size(); ++i) {
    const char c = s[i];
    if (c == '\\' && i + 1 < s.size()) {
      const char n = s[++i];
      switch (n) {
        case 'n': out.push_back('\n'); break;
        case 'r': out.push_back('\r'); break;
        case 't': out.push_back('\t'); break;
        case 'b': case 'f': break;
        case '\r': case '\n': break;
        default:
          if (n >= '0' && n <= '7') {
            int v = n - '0';
            for (int k = 0; k < 2 && i + 1 < s.size() && s[i + 1] >= '0' && s[i + 1] <= '7'; ++k) {
              v = v * 8 + (s[++i] - '0');
            }
            out.push_back(static_cast<char>(v));
          } else {
            out.push_back(n);
          }
      }
      continue;
    }
    if (c == '(') {
      if (depth++ > 0) out.push_back(c);
      continue;
    }
    if (c == ')') {
      if (--depth == 0) {
        ++i;
        return out;
      }
      out.push_back(c);
      continue;
    }
    out.push_back(c);
  }
  return out;
}

// Extracts shown text from one content stream.
std::string pdf_content_text(std::string_view s) {
  std::string out;
  bool in_text = false;
  std::vector<std::string> pending;  // strings since the last operator
  std::size_t i = 0;
  auto flush_op = [&](std::string_view op) {
    if (op == "Tj" || op == "TJ" || op == "'" || op == "\"") {
      if (op == "'" || op == "\"") out.push_back('\n');
      for (auto& p : pending) out += p;
    } else if (op == "Td" || op == "TD" || op == "T*" || op == "Tm") {
      if (!out.empty() && out.back() != '\n' && out.back() != ' ') out.push_back(' ');
    } else if (op == "ET") {
      out.push_back('\n');
    }
    pending.clear();
  };
  while (i < s.size()) {
    const char c = s[i];
    if (c == '(') {
      pending.push_back(pdf_literal(s, i));
      continue;
    }
    if (c == '[') {
      std::string joined;
      ++i;
      while (i < s.size() && s[i] != ']') {
        if (s[i] == '(') {
          joined += pdf_literal(s, i);
        } else if (s[i] == '-' || std::isdigit(static_cast<unsigned char>(s[i]))) {
          std::size_t j = i;
          while (j < s.size() && (s[j] == '-' || s[j] == '.' || std::isdigit(static_cast<unsigned char>(s[j])))) ++j;
          const double kern = std::atof(std::string(s.substr(i, j - i)).c_str());
          if (kern < -200) joined.push_back(' ');
          i = j;
        } else {
          ++i;
        }
      }
      ++i;
      pending.push_back(std::move(joined));
      continue;
    }
    if (std::isalpha(static_cast<unsigned char>(c)) || c == '\'' || c == '"' || c == '*') {
      std::size_t j = i;
      while (j < s.size() && (std::isalpha(static_cast<unsigned char>(s[j])) || s[j] == '*' ||
                              s[j] == '\'' || s[j] == '"')) {
        ++j;
      }
      const std::string_view op = s.substr(i, j - i);
      if (op == "BT") in_text = true;
      if (in_text) flush_op(op);
      if (op == "ET") in_text = false;
      pending.clear();
      i = j;
      continue;
    }
    ++i;
  }
  return out;
}

}  // namespace

std::string extract_pdf_text(std::string_view bytes) {
  if (!bytes.starts_with("%PDF")) throw Error(ErrorCode::undecodable, "not a PDF file", "parse");
  std::string text;
  std::size_t pos = 0;
  while ((pos = bytes.find("stream", pos)) != std::string_view::npos) {
    if (pos >= 3 && bytes.substr(pos - 3, 3) == "end") {
      pos += 6;
      continue;
    }
    std::size_t data = pos + 6;
    if (data < bytes.size() && bytes[data] == '\r') ++data;
    if (data < bytes.size() && bytes[data] == '\n') ++data;
    const auto end = bytes.find("endstream", data);
    if (end == std::string_view::npos) break;
    const auto dict_start = bytes.rfind("<<", pos);
    const std::string_view dict =
        dict_start == std::string_view::npos ? std::string_view{} : bytes.substr(dict_start, pos - dict_start);
    std::string_view raw = bytes.substr(data, end - data);
    while (!raw.empty() && (raw.back() == '\n' || raw.back() == '\r')) raw.remove_suffix(1);
    std::string content;
    if (dict.find("/FlateDecode") != std::string_view::npos) {
      try {
        content = inflate_bytes(raw, MAX_WBITS);
      } catch (const Error&) {
        content.clear();
      }
    } else if (dict.find("/Filter") == std::string_view::npos) {
      content = std::string(raw);
    }
    // Skip images, fonts and other binary streams.
    if (!content.empty() && dict.find("/Subtype") == std::string_view::npos) {
      text += pdf_content_text(content);
    }
    pos = end + 9;
  }
  std::vector<std::string> lines;
  for (const auto& line : split_lines(text)) {
    std::string l = collapse_whitespace(line);
    if (!l.empty()) lines.push_back(std::move(l));
  }
  return join(lines, "\n");
}

}  // namespace sagekb
