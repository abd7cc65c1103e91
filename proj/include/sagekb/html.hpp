#pragma once

#include <string>
#include <string_view>

namespace sagekb {

/// Visible text of an HTML document: script/style/noscript bodies and
/// comments removed, tags dropped, common entities decoded, whitespace
/// collapsed.
std::string html_to_text(std::string_view html);

std::string decode_html_entities(std::string_view s);

std::string url_encode(std::string_view s);
std::string url_decode(std::string_view s);

}  // namespace sagekb
