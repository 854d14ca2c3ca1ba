#include <charconv>
#include <sstream>

#include "nmpg/error.hpp"
#include "nmpg/nm_core.hpp"

namespace nmpg {
namespace {

struct MaskHeader {
  SparsityPattern pattern;
  std::size_t dim = 0;
};

MaskHeader parse_header(std::string_view line, std::string_view magic) {
  std::istringstream in{std::string(line)};
  std::string tag;
  long long n = 0, m = 0, d = 0;
  in >> tag >> n >> m >> d;
  require(in && tag == magic, ErrorKind::Io,
          "expected mask header '" + std::string(magic) + " <N> <M> <d>', got '" +
              std::string(line) + "'");
  require(d > 0, ErrorKind::Io, "mask dimension must be positive");
  const auto pattern = SparsityPattern::make(static_cast<int>(n), static_cast<int>(m));
  const auto dim = static_cast<std::size_t>(d);
  pattern.group_count(dim);
  return {pattern, dim};
}

std::string header_line(std::string_view magic, const NMMask& mask) {
  return std::string(magic) + " " + std::to_string(mask.pattern().n_keep) + " " +
         std::to_string(mask.pattern().group_size) + " " + std::to_string(mask.dim()) +
         "\n";
}

}  // namespace

std::string to_text(const NMMask& mask) {
  std::string out = header_line("NM", mask);
  for (std::size_t i = 0; i < mask.group_count(); ++i) {
    for (auto b : mask.group(i)) out.push_back(b ? '1' : '0');
    out.push_back('\n');
  }
  return out;
}

NMMask mask_from_text(std::string_view text) {
  std::vector<std::string_view> lines;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    auto line = text.substr(0, nl);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (!line.empty()) lines.push_back(line);
    if (nl == std::string_view::npos) break;
    text.remove_prefix(nl + 1);
  }
  require(!lines.empty(), ErrorKind::Io, "empty mask text");
  const auto header = parse_header(lines.front(), "NM");
  const auto m = static_cast<std::size_t>(header.pattern.group_size);
  const std::size_t groups = header.dim / m;
  require(lines.size() == groups + 1, ErrorKind::Io,
          "mask text has " + std::to_string(lines.size() - 1) + " group lines, expected " +
              std::to_string(groups));
  std::vector<std::uint8_t> bits;
  bits.reserve(header.dim);
  for (std::size_t i = 0; i < groups; ++i) {
    const auto line = lines[i + 1];
    require(line.size() == m, ErrorKind::Io,
            "group line " + std::to_string(i) + " has length " +
                std::to_string(line.size()));
    for (char c : line) {
      require(c == '0' || c == '1', ErrorKind::Io,
              "mask text may only contain 0 and 1");
      bits.push_back(c == '1' ? 1 : 0);
    }
  }
  return NMMask(header.pattern, std::move(bits));
}

std::vector<std::uint8_t> pack_bits(const NMMask& mask) {
  std::vector<std::uint8_t> out((mask.dim() + 7) / 8, 0);
  const auto& bits = mask.bits();
  for (std::size_t i = 0; i < bits.size(); ++i) {
    if (bits[i]) out[i / 8] |= static_cast<std::uint8_t>(1u << (i % 8));
  }
  return out;
}

NMMask unpack_bits(SparsityPattern pattern, std::size_t d,
                   std::span<const std::uint8_t> packed) {
  require(packed.size() == (d + 7) / 8, ErrorKind::Dimension,
          "packed mask has " + std::to_string(packed.size()) + " bytes, expected " +
              std::to_string((d + 7) / 8));
  std::vector<std::uint8_t> bits(d);
  for (std::size_t i = 0; i < d; ++i) bits[i] = (packed[i / 8] >> (i % 8)) & 1u;
  return NMMask(pattern, std::move(bits));
}

std::string to_packed_file(const NMMask& mask) {
  std::string out = header_line("NMB", mask);
  const auto packed = pack_bits(mask);
  out.append(reinterpret_cast<const char*>(packed.data()), packed.size());
  return out;
}

NMMask mask_from_packed_file(std::string_view bytes) {
  const auto nl = bytes.find('\n');
  require(nl != std::string_view::npos, ErrorKind::Io,
          "packed mask file is missing its header line");
  const auto header = parse_header(bytes.substr(0, nl), "NMB");
  const auto body = bytes.substr(nl + 1);
  return unpack_bits(header.pattern, header.dim,
                     std::span(reinterpret_cast<const std::uint8_t*>(body.data()),
                               body.size()));
}

}  // namespace nmpg
